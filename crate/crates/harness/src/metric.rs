//! Metric names accepted in `eval.metrics`.
//!
//! A name is `[map_]<split>_<base>`: `split` is `train` or `test`, the `map_`
//! prefix evaluates the point estimate instead of the posterior predictive.
//! Regression bases: `rmse` (of the predictive mean), `variance` (mean
//! between-sample variance), `max_variance`, `nll`. Classification bases:
//! `confidence`, `accuracy`, `nll`, `brier`, `ece`, `mce`, `entropy`.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Base {
    Rmse,
    Variance,
    MaxVariance,
    Nll,
    Confidence,
    Accuracy,
    Brier,
    Ece,
    Mce,
    Entropy,
}

const BASES: [(&str, Base); 10] = [
    ("rmse", Base::Rmse),
    ("variance", Base::Variance),
    ("max_variance", Base::MaxVariance),
    ("nll", Base::Nll),
    ("confidence", Base::Confidence),
    ("accuracy", Base::Accuracy),
    ("brier", Base::Brier),
    ("ece", Base::Ece),
    ("mce", Base::Mce),
    ("entropy", Base::Entropy),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricName {
    pub map: bool,
    pub split: Split,
    pub base: Base,
}

impl MetricName {
    pub fn applies_to(self, classification: bool) -> bool {
        match self.base {
            Base::Nll => true,
            Base::Rmse | Base::Variance | Base::MaxVariance => !classification,
            _ => classification,
        }
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (map, rest) = match s.strip_prefix("map_") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (split, base) = if let Some(b) = rest.strip_prefix("train_") {
            (Split::Train, b)
        } else if let Some(b) = rest.strip_prefix("test_") {
            (Split::Test, b)
        } else {
            return Err(Error::config(format!("metric `{s}` must start with train_ or test_")));
        };
        let base = BASES
            .iter()
            .find(|(name, _)| *name == base)
            .map(|(_, b)| *b)
            .ok_or_else(|| Error::config(format!("unknown metric `{s}`")))?;
        Ok(MetricName { map, split, base })
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = BASES.iter().find(|(_, b)| *b == self.base).unwrap().0;
        let split = match self.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        if self.map {
            write!(f, "map_{split}_{base}")
        } else {
            write!(f, "{split}_{base}")
        }
    }
}
