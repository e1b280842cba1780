//! Chronological train/validation/test splits and expanding-window CV folds.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    /// Rows dropped at the end of the train and validation segments.
    pub embargo: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            embargo: 1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.validation, self.test];
        if fr.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Parameter(format!("split fractions must be positive: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("split fractions must sum to 1: {fr:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
    pub embargoed: Vec<usize>,
}

fn floor_frac(f: f64, n: usize) -> usize {
    (f * n as f64 + 1e-9).floor() as usize
}

/// Train `[0, ⌊0.6n⌋)`, validation `[⌊0.6n⌋, ⌊0.8n⌋)`, test `[⌊0.8n⌋, n)` for
/// the default fractions, then the last `embargo` rows of train and of
/// validation are dropped.
pub fn chronological_split(n_rows: usize, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if n_rows < 10 {
        return Err(Error::InsufficientData {
            what: "chronological split",
            needed: 10,
            got: n_rows,
        });
    }
    let a = floor_frac(spec.train, n_rows);
    let b = floor_frac(spec.train + spec.validation, n_rows).min(n_rows);
    let e = spec.embargo;
    if a <= e || b <= a + e || b >= n_rows {
        return Err(Error::InsufficientData {
            what: "non-empty split segments after embargo",
            needed: 10 + 2 * e,
            got: n_rows,
        });
    }
    Ok(DatasetSplit {
        train: 0..a - e,
        validation: a..b - e,
        test: b..n_rows,
        embargoed: (a - e..a).chain(b - e..b).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFold {
    pub fit: Range<usize>,
    pub validate: Range<usize>,
}

/// Splits `n` training rows into `k + 1` blocks (the remainder joins the last
/// block). Fold `i` fits on blocks `0..i` minus the trailing `embargo` rows
/// and validates on block `i`.
pub fn expanding_cv_folds(n: usize, k: usize, embargo: usize) -> Result<Vec<CvFold>> {
    if k == 0 {
        return Err(Error::Parameter("at least one CV fold is required".into()));
    }
    let needed = 4 * (k + 1);
    if n < needed {
        return Err(Error::InsufficientData {
            what: "expanding-window CV",
            needed,
            got: n,
        });
    }
    let block = n / (k + 1);
    if block <= embargo {
        return Err(Error::Parameter(format!(
            "embargo {embargo} leaves no rows in CV blocks of {block}"
        )));
    }
    Ok((1..=k)
        .map(|i| CvFold {
            fit: 0..i * block - embargo,
            validate: i * block..if i == k { n } else { (i + 1) * block },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_rows_with_embargo() {
        let s = chronological_split(100, &SplitSpec::default()).unwrap();
        assert_eq!(s.train, 0..59);
        assert_eq!(s.validation, 60..79);
        assert_eq!(s.test, 80..100);
        assert_eq!(s.embargoed, vec![59, 79]);
    }

    #[test]
    fn no_embargo_is_contiguous() {
        let spec = SplitSpec {
            embargo: 0,
            ..SplitSpec::default()
        };
        let s = chronological_split(100, &spec).unwrap();
        assert_eq!((s.train, s.validation, s.test), (0..60, 60..80, 80..100));
        assert!(s.embargoed.is_empty());
    }

    #[test]
    fn tiny_or_bad_specs_rejected() {
        assert!(chronological_split(9, &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            train: 0.5,
            ..SplitSpec::default()
        };
        assert!(chronological_split(100, &bad).is_err());
        let huge_embargo = SplitSpec {
            embargo: 5,
            ..SplitSpec::default()
        };
        assert!(chronological_split(10, &huge_embargo).is_err());
    }

    #[test]
    fn forty_rows_three_folds() {
        let f = expanding_cv_folds(40, 3, 1).unwrap();
        assert_eq!(f[0], CvFold { fit: 0..9, validate: 10..20 });
        assert_eq!(f[1], CvFold { fit: 0..19, validate: 20..30 });
        assert_eq!(f[2], CvFold { fit: 0..29, validate: 30..40 });
    }

    #[test]
    fn remainder_joins_last_block() {
        let f = expanding_cv_folds(43, 3, 1).unwrap();
        assert_eq!(f[2].validate, 30..43);
    }

    #[test]
    fn cv_needs_rows() {
        assert!(expanding_cv_folds(15, 3, 1).is_err());
    }
}
