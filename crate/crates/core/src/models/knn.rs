use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{canonical, ModelSpec};
use crate::error::{Error, Result};

/// Brute-force k-nearest-neighbour regression under Euclidean distance.
/// The prediction is the unweighted mean of the k nearest targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnRegressor {
    k: usize,
    x: Array2<f64>,
    y: Array1<f64>,
}

impl KnnRegressor {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &ModelSpec) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("knn: no training rows"));
        }
        if spec.k_neighbors == 0 || spec.k_neighbors > x.nrows() {
            return Err(Error::invalid(format!(
                "knn: k = {} with {} training rows",
                spec.k_neighbors,
                x.nrows()
            )));
        }
        let (x, y) = canonical(x, y);
        Ok(Self {
            k: spec.k_neighbors,
            x,
            y,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Indices (into the stored training rows) of the k nearest neighbours
    /// of `query`, nearest first; equal distances go to the lower index.
    pub fn neighbors(&self, query: ArrayView1<f64>) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let d2 = row
                    .iter()
                    .zip(query.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d2, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(cmp);
        dist.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows()
            .into_iter()
            .map(|q| {
                let sum: f64 = self.neighbors(q).iter().map(|&i| self.y[i]).sum();
                sum / self.k as f64
            })
            .collect()
    }
}
