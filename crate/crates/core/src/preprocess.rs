//! Train/test split, feature standardization and evaluation metrics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Shuffle with `seed` and cut into `(train, test)`. The training part
/// holds `ceil(n * train_frac)` items, capped at `n - 1` so that the test
/// part is never empty.
pub fn split_train_test<T: Clone>(
    rows: &[T],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_frac} must lie in (0, 1)"
        )));
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "cannot split {n} rows into train and test"
        )));
    }
    let n_train = ((n as f64 * train_frac).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    Ok((pick(train_idx), pick(test_idx)))
}

/// Per-feature z-score standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose spread was zero; their `std` was replaced by 1.
    pub degenerate: Vec<bool>,
}

pub fn fit_scaler(features: ArrayView2<f64>) -> Result<Scaler> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot fit a scaler on zero rows"));
    }
    let mut mean = Vec::with_capacity(features.ncols());
    let mut std = Vec::with_capacity(features.ncols());
    let mut degenerate = Vec::with_capacity(features.ncols());
    for col in features.axis_iter(Axis(1)) {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        let flat = !(s > 0.0) || col.iter().all(|&v| v == col[0]);
        mean.push(m);
        std.push(if flat { 1.0 } else { s });
        degenerate.push(flat);
    }
    Ok(Scaler {
        mean,
        std,
        degenerate,
    })
}

impl Scaler {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(features.ncols())?;
        let mut out = features.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_width(row.len())?;
        Ok(Array1::from_iter(
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - self.mean[j]) / self.std[j]),
        ))
    }

    pub fn inverse_transform(&self, scaled: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(scaled.ncols())?;
        let mut out = scaled.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        Ok(out)
    }

    fn check_width(&self, ncols: usize) -> Result<()> {
        if ncols != self.n_features() {
            return Err(Error::invalid(format!(
                "scaler fitted on {} features, got {ncols}",
                self.n_features()
            )));
        }
        Ok(())
    }
}

/// Root mean squared error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::invalid(format!(
            "rmse: {} predictions for {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("rmse of zero samples"));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// Normal-approximation 95% confidence interval of the mean:
/// `mean ± 1.96 · s / sqrt(n)` with `s` the sample standard deviation.
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "ci95 needs at least 2 values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let half = 1.96 * var.sqrt() / (n as f64).sqrt();
    Ok((mean - half, mean + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rmse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// RMSE of `predicted` against `actual`, with the CI taken over the
/// predictions.
pub fn evaluate(predicted: &[f64], actual: &[f64]) -> Result<EvalSummary> {
    let rmse = rmse(predicted, actual)?;
    let (ci_low, ci_high) = ci95(predicted)?;
    Ok(EvalSummary {
        rmse,
        ci_low,
        ci_high,
        n: predicted.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<u32> = (0..100).collect();
        let (train, test) = split_train_test(&rows, 0.75, 7).unwrap();
        assert_eq!((train.len(), test.len()), (75, 25));
        let again = split_train_test(&rows, 0.75, 7).unwrap();
        assert_eq!((train.clone(), test.clone()), again);
        let mut all: Vec<u32> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, rows);
        let other = split_train_test(&rows, 0.75, 8).unwrap();
        assert_ne!(other.0, train);
    }

    #[test]
    fn split_errors() {
        assert!(split_train_test(&[1], 0.75, 0).is_err());
        assert!(split_train_test(&[1, 2, 3], 1.0, 0).is_err());
        assert!(split_train_test(&[1, 2, 3], 0.0, 0).is_err());
        let (train, test) = split_train_test(&[1, 2], 0.75, 0).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
    }

    #[test]
    fn constant_column_is_flagged() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let s = fit_scaler(x.view()).unwrap();
        assert_eq!(s.degenerate, vec![false, true]);
        assert_eq!(s.std[1], 1.0);
        let z = s.transform(x.view()).unwrap();
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_scales_to_zero() {
        let x = array![[3.0, -2.0, 7.5, 0.1]];
        let s = fit_scaler(x.view()).unwrap();
        let z = s.transform(x.view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_and_width_errors() {
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(fit_scaler(empty.view()).is_err());
        let s = fit_scaler(array![[1.0, 2.0]].view()).unwrap();
        assert!(s.transform(array![[1.0, 2.0, 3.0]].view()).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[3.0], &[0.0]).unwrap(), 3.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn ci_examples() {
        assert_eq!(ci95(&[2.5, 2.5, 2.5]).unwrap(), (2.5, 2.5));
        let (lo, hi) = ci95(&[0.0, 0.0, 4.0, 4.0]).unwrap();
        // s = sqrt(16/3), s / sqrt(4) = 1.1547005383792515
        let half = 1.96 * (16.0f64 / 3.0).sqrt() / 2.0;
        assert_abs_diff_eq!(lo, 2.0 - half, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 2.0 + half, epsilon = 1e-15);
        assert_abs_diff_eq!(lo, -0.263, epsilon = 5e-4);
        assert_abs_diff_eq!(hi, 4.263, epsilon = 5e-4);
        assert!(ci95(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn scaler_standardizes_and_inverts(
            data in prop::collection::vec(prop::array::uniform4(-1e3f64..1e3), 2..60)
        ) {
            let x = Array2::from_shape_fn((data.len(), 4), |(i, j)| data[i][j]);
            let s = fit_scaler(x.view()).unwrap();
            let z = s.transform(x.view()).unwrap();
            for (j, col) in z.axis_iter(Axis(1)).enumerate() {
                let n = col.len() as f64;
                let mean = col.sum() / n;
                prop_assert!(mean.abs() < 1e-9);
                if !s.degenerate[j] {
                    let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-9);
                }
            }
            let back = s.inverse_transform(z.view()).unwrap();
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn split_partitions(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let rows: Vec<usize> = (0..n).collect();
            let (train, test) = split_train_test(&rows, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(!test.is_empty() && !train.is_empty());
            let mut all: Vec<usize> = train.into_iter().chain(test).collect();
            all.sort();
            prop_assert_eq!(all, rows);
        }
    }
}
