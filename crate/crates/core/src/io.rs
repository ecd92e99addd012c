//! Binary checkpoint and sample files.
//!
//! Checkpoint: `b"GLAPv001"`, D as u64 LE, then D f64 LE in parameter order.
//! Samples: `b"GLSMP001"`, then S, D, sampler id and seed as u64 LE, then
//! S*D f64 LE, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::ParamVector;
use crate::posterior::{PosteriorSamples, SamplerKind, SamplerSnapshot};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GLAPv001";
pub const SAMPLES_MAGIC: &[u8; 8] = b"GLSMP001";

pub fn encode_checkpoint(w: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * w.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for v in w {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamVector> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let d = r.len_field("parameter count")?;
    let values = r.floats(d)?;
    r.finish()?;
    Ok(values.into())
}

/// Sample file header fields alongside the draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub draws: Vec<ParamVector>,
}

pub fn encode_samples(samples: &PosteriorSamples) -> Vec<u8> {
    let d = samples.dim();
    let mut buf = Vec::with_capacity(40 + 8 * d * samples.len());
    buf.extend_from_slice(SAMPLES_MAGIC);
    for field in [
        samples.len() as u64,
        d as u64,
        samples.sampler.id(),
        samples.config.seed,
    ] {
        buf.extend_from_slice(&field.to_le_bytes());
    }
    for draw in &samples.draws {
        for v in draw.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_samples(bytes: &[u8]) -> Result<SampleFile> {
    let mut r = Reader::new(bytes);
    r.magic(SAMPLES_MAGIC)?;
    let s = r.len_field("sample count")?;
    let d = r.len_field("parameter count")?;
    let id = r.u64()?;
    let sampler = SamplerKind::from_id(id).ok_or_else(|| Error::Format(format!("unknown sampler id {id}")))?;
    let seed = r.u64()?;
    let mut draws = Vec::with_capacity(s);
    for _ in 0..s {
        draws.push(r.floats(d)?.into());
    }
    r.finish()?;
    Ok(SampleFile { sampler, seed, draws })
}

impl SampleFile {
    /// Rebuilds a sample set around the given mode; hyperparameters other
    /// than the seed are not stored in the file.
    pub fn into_samples(self, w_hat: ParamVector) -> Result<PosteriorSamples> {
        if let Some(bad) = self.draws.iter().find(|d| d.len() != w_hat.len()) {
            return Err(Error::dims("stored draw", w_hat.len(), bad.len()));
        }
        Ok(PosteriorSamples {
            draws: self.draws,
            sampler: self.sampler,
            config: SamplerSnapshot {
                alpha: f64::NAN,
                rank: 0,
                steps: 0,
                step_scale: f64::NAN,
                seed: self.seed,
            },
            w_hat,
        })
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, w: &[f64]) -> Result<()> {
    write_atomic(path, &encode_checkpoint(w))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn save_samples(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    write_atomic(path, &encode_samples(samples))
}

pub fn load_samples(path: &Path) -> Result<SampleFile> {
    decode_samples(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_field(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        // reject lengths that cannot possibly fit before allocating
        if v > remaining / 8 + 1 {
            return Err(Error::Format(format!("{what} {v} exceeds file size")));
        }
        Ok(v as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
