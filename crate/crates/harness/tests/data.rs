use glap_core::Dataset;
use glap_harness::data::{generate_mixture, generate_sine, load_idx, rotate_inputs, write_idx};

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
    let pixels: Vec<u8> = (0..8).map(|i| (i * 30) as u8).collect();
    write_idx(&img, &lbl, 2, 2, &pixels, &[3, 9]).unwrap();
    let data = load_idx(&img, &lbl, 10).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.input_dim(), 4);
    assert_eq!(data.labels().unwrap(), &[3, 9]);
    assert_eq!(
        data.input(1),
        &[120.0 / 255.0, 150.0 / 255.0, 180.0 / 255.0, 210.0 / 255.0]
    );

    let first = load_idx(&img, &lbl, 1).unwrap();
    assert_eq!(first.len(), 1);
    assert_eq!(load_idx(&img, &lbl, 0).unwrap_err().exit_code(), 2);
}

#[test]
fn idx_rejects_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
    write_idx(&img, &lbl, 2, 2, &[0; 8], &[1]).unwrap();
    assert!(load_idx(&img, &lbl, 5).is_err());
    std::fs::write(&img, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    assert!(load_idx(&img, &lbl, 5).is_err());
}

#[test]
fn full_rotation_is_identity() {
    let side = 12;
    let x: Vec<f64> = (0..2 * side * side)
        .map(|i| {
            let (r, c) = ((i % (side * side)) / side, i % side);
            let d = ((r as f64 - 5.5).powi(2) + (c as f64 - 5.5).powi(2)).sqrt();
            (1.0 - d / 6.0).max(0.0) * if i < side * side { 1.0 } else { 0.5 }
        })
        .collect();
    let data = Dataset::classification(side * side, 10, 10, x, vec![0, 1]).unwrap();
    let turned = rotate_inputs(&data, 360.0).unwrap();
    let worst = turned
        .inputs()
        .iter()
        .zip(data.inputs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-2, "{worst}");

    let quarter = rotate_inputs(&rotate_inputs(&data, 90.0).unwrap(), -90.0).unwrap();
    let worst = quarter
        .inputs()
        .iter()
        .zip(data.inputs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn generators_are_seeded() {
    assert_eq!(generate_sine(30, 0.1, 5).unwrap(), generate_sine(30, 0.1, 5).unwrap());
    assert_ne!(generate_sine(30, 0.1, 5).unwrap(), generate_sine(30, 0.1, 6).unwrap());
    let means = [[-1.0, 0.0], [1.0, 0.0]];
    let m = generate_mixture(2000, means, 0.5, 1).unwrap();
    let labels = m.labels().unwrap();
    assert_eq!(labels.iter().filter(|&&y| y == 1).count(), 1000);
    for (class, centre) in means.iter().enumerate() {
        let xs: Vec<f64> = (0..m.len())
            .filter(|&n| labels[n] == class)
            .map(|n| m.input(n)[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        // standard error 0.5 / sqrt(1000)
        assert!((mean - centre[0]).abs() < 5.0 * 0.5 / 1000f64.sqrt(), "{mean}");
    }
}
