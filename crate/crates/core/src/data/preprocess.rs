//! Even sampling, block smoothing/downsampling, and joint min-max scaling.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Indices `round(k * (len - 1) / (n - 1))` for `k = 0..n`.
pub fn even_indices(len: usize, n: usize) -> Result<Vec<usize>> {
    if n < 2 || len < n {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {n} points evenly from {len}"
        )));
    }
    let (num, den) = (len - 1, n - 1);
    // round half up in integer arithmetic
    Ok((0..n).map(|k| (2 * k * num + den) / (2 * den)).collect())
}

/// Pick `n` evenly spaced samples, always keeping both endpoints.
pub fn sample_evenly<T: Clone>(series: &[T], n: usize) -> Result<Vec<T>> {
    Ok(even_indices(series.len(), n)?
        .into_iter()
        .map(|i| series[i].clone())
        .collect())
}

/// Moving-average smoothing and decimation with the same window, done as
/// means over aligned non-overlapping blocks. A trailing partial block is
/// dropped.
pub fn smooth_downsample(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || series.len() < window {
        return Err(Error::InvalidConfig(format!(
            "series of length {} is shorter than window {window}",
            series.len()
        )));
    }
    Ok(series
        .chunks_exact(window)
        .map(|b| b.iter().sum::<f64>() / window as f64)
        .collect())
}

/// Apply [`smooth_downsample`] to every column of a matrix.
pub fn smooth_downsample_columns(m: &Tensor, window: usize) -> Result<Tensor> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut columns = Vec::with_capacity(cols);
    for c in 0..cols {
        let col: Vec<f64> = (0..rows).map(|r| m.get(r, c)).collect();
        columns.push(smooth_downsample(&col, window)?);
    }
    let out_rows = columns[0].len();
    let mut data = Vec::with_capacity(out_rows * cols);
    for r in 0..out_rows {
        for col in &columns {
            data.push(col[r]);
        }
    }
    Tensor::matrix(out_rows, cols, data)
}

/// Per-column min and max pooled over every fitted table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(tables: &[&Tensor]) -> Result<Self> {
        let first = tables.first().ok_or(Error::Empty("scaler input"))?;
        let cols = first.cols();
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for t in tables {
            if t.cols() != cols {
                return Err(Error::shape(
                    "minmax_fit",
                    format!("table with {} columns, expected {cols}", t.cols()),
                ));
            }
            for r in 0..t.rows() {
                for (c, &v) in t.row_slice(r).iter().enumerate() {
                    if v.is_finite() {
                        min[c] = min[c].min(v);
                        max[c] = max[c].max(v);
                    }
                }
            }
        }
        if let Some(c) = min.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "column {c} has no finite values"
            )));
        }
        let scaler = MinMaxScaler { min, max };
        for c in scaler.constant_columns() {
            log::warn!("column {c} is constant; it scales to 0");
        }
        Ok(scaler)
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.min.len())
            .filter(|&c| self.max[c] == self.min[c])
            .collect()
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.cols() != self.min.len() {
            return Err(Error::shape(
                "minmax",
                format!(
                    "table with {} columns, scaler has {}",
                    t.cols(),
                    self.min.len()
                ),
            ));
        }
        Ok(())
    }

    /// `(x - min) / (max - min)`; constant columns map to 0.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let cols = self.min.len();
        let mut out = t.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            let c = j % cols;
            let span = self.max[c] - self.min[c];
            *v = if span == 0.0 {
                0.0
            } else {
                (*v - self.min[c]) / span
            };
        }
        Ok(out)
    }

    pub fn invert(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let cols = self.min.len();
        let mut out = t.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            let c = j % cols;
            *v = self.min[c] + *v * (self.max[c] - self.min[c]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_sampling() {
        let idx = even_indices(1000, 200).unwrap();
        assert_eq!(&idx[..3], &[0, 5, 10]);
        assert_eq!(*idx.last().unwrap(), 999);
        assert_eq!(idx.len(), 200);
        assert_eq!(even_indices(7, 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(even_indices(50, 2).unwrap(), vec![0, 49]);
        assert!(even_indices(5, 6).is_err());
        assert!(even_indices(5, 1).is_err());
    }

    #[test]
    fn block_means() {
        assert_eq!(smooth_downsample(&[3.0; 100], 50).unwrap(), vec![3.0, 3.0]);
        assert_eq!(smooth_downsample(&[1.0; 250], 50).unwrap().len(), 5);
        let ramp: Vec<f64> = (1..=50).map(|v| v as f64).collect();
        assert_eq!(smooth_downsample(&ramp, 50).unwrap(), vec![25.5]);
        assert!(smooth_downsample(&ramp[..49], 50).is_err());
    }

    #[test]
    fn minmax_basic() {
        let t = Tensor::matrix(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        let s = MinMaxScaler::fit(&[&t]).unwrap();
        assert_eq!(s.apply(&t).unwrap().data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn minmax_pools_stages() {
        let a = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![0.0, 3.0]).unwrap();
        let s = MinMaxScaler::fit(&[&a, &b]).unwrap();
        assert_eq!(s.max, vec![3.0]);
        assert!((s.apply(&a).unwrap().data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let t = Tensor::matrix(2, 2, vec![0.74, 1.0, 0.74, 2.0]).unwrap();
        let s = MinMaxScaler::fit(&[&t]).unwrap();
        assert_eq!(s.constant_columns(), vec![0]);
        assert_eq!(s.apply(&t).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }
}
