use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Grower, RegressionTree};
use super::{canonical, ModelSpec};
use crate::error::Result;
use crate::seed;

/// Bagged ensemble of depth-limited regression trees with a random feature
/// subset drawn at every split. Tree `t` is grown from its own seed derived
/// from the model seed, so the forest is identical however the trees are
/// scheduled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &ModelSpec) -> Result<Self> {
        let (x, y) = canonical(x, y);
        let n = x.nrows();
        let d = x.ncols();
        let max_features = spec
            .max_features
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d);
        let grower = Grower {
            x: x.view(),
            y: y.view(),
            max_depth: spec.tree_depth,
            min_leaf: spec.min_samples_leaf.max(1),
            max_features,
        };
        let trees = (0..spec.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::derive(spec.seed, "tree", t as u64));
                let sample: Vec<usize> = if spec.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                grower.grow(sample, Some(&mut rng))
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn n_features(&self) -> usize {
        self.trees[0].n_features()
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// One column per tree.
    pub fn tree_predictions(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.trees.len()));
        for (t, tree) in self.trees.iter().enumerate() {
            out.column_mut(t).assign(&tree.predict(x));
        }
        out
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let n_trees = self.trees.len() as f64;
        x.rows()
            .into_iter()
            .map(|row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / n_trees)
            .collect()
    }
}
