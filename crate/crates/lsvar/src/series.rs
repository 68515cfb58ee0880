//! Multivariate time series container and index conventions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Observed multivariate time series: `t_len` rows of dimension `dim`,
/// row `t` holding the observation `X_t`.
///
/// Index conventions used throughout the crate:
/// - observations are 0-based: `X_0, ..., X_{T-1}`;
/// - a change point `tau` means rows `t < tau` follow the left model and rows
///   `t >= tau` the right model, so `X_tau` is the first response generated by
///   the right model;
/// - an [`Interval`] `[start, end)` selects observation rows; model fits on it
///   use the transition pairs `(X_{t-1}, X_t)` for `t` in `start+1..end`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesData {
    values: DMatrix<f64>,
}

impl TimeSeriesData {
    /// Wraps a `T x p` matrix of observations, validating shape and finiteness.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 observations, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::invalid("series dimension p must be at least 1"));
        }
        if let Some((t, k)) = first_non_finite(&values) {
            return Err(Error::invalid(format!(
                "non-finite value at row {t}, column {k}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a series from row-major data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("empty series"));
        }
        let p = rows[0].len();
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::invalid(format!(
                "row {i} has {} columns, expected {p}",
                row.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), p, &flat))
    }

    /// Number of observations `T`.
    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    /// Series dimension `p`.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Observation `X_t` as a column vector.
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    /// Underlying `T x p` matrix.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Series with the time axis reversed (`X_{T-1}, ..., X_0`).
    pub fn reversed(&self) -> Self {
        let t = self.t_len();
        let mut rev = self.values.clone();
        for i in 0..t {
            rev.set_row(i, &self.values.row(t - 1 - i));
        }
        Self { values: rev }
    }

    /// The full-series interval `[0, T)`.
    pub fn full_interval(&self) -> Interval {
        Interval::new(0, self.t_len())
    }

    /// Copy of the rows in `interval` as a standalone series.
    pub fn slice(&self, interval: Interval) -> Result<Self> {
        interval.validate(self.t_len(), 1)?;
        Ok(Self {
            values: self.values.rows(interval.start, interval.len()).into_owned(),
        })
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for t in 0..m.nrows() {
        for k in 0..m.ncols() {
            if !m[(t, k)].is_finite() {
                return Some((t, k));
            }
        }
    }
    None
}

/// Half-open range `[start, end)` of observation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of observation rows in the interval.
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Response indices `t` whose pair `(X_{t-1}, X_t)` lies inside the interval.
    pub fn responses(&self) -> std::ops::Range<usize> {
        if self.is_empty() {
            self.start..self.start
        } else {
            self.start + 1..self.end
        }
    }

    /// Number of usable transition pairs.
    pub fn n_transitions(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// Errors unless the interval holds at least `required` transition pairs
    /// and fits inside a series of length `t_len`.
    pub fn validate(&self, t_len: usize, required: usize) -> Result<()> {
        if self.end > t_len || self.is_empty() {
            return Err(Error::invalid(format!(
                "interval [{}, {}) out of range for series of length {t_len}",
                self.start, self.end
            )));
        }
        if self.n_transitions() < required {
            return Err(Error::IntervalTooShort {
                start: self.start,
                end: self.end,
                pairs: self.n_transitions(),
                required,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_nonfinite_series() {
        assert!(TimeSeriesData::new(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).is_err());
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(TimeSeriesData::new(bad).is_err());
    }

    #[test]
    fn interval_responses_and_pairs() {
        let iv = Interval::new(3, 10);
        assert_eq!(iv.responses().collect::<Vec<_>>(), vec![4, 5, 6, 7, 8, 9]);
        assert_eq!(iv.n_transitions(), 6);
        assert!(iv.validate(10, 6).is_ok());
        assert!(iv.validate(10, 7).is_err());
        assert!(iv.validate(9, 2).is_err());
    }

    #[test]
    fn reversed_flips_rows() {
        let s = TimeSeriesData::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let r = s.reversed();
        assert_eq!(r.row(0)[0], 3.0);
        assert_eq!(r.row(2)[0], 1.0);
    }
}
