//! From-scratch regressors with a common fit/predict surface.
//!
//! Every regressor takes an already-scaled feature matrix and a single
//! target column. Before fitting, rows are put into a canonical order
//! (lexicographic on features, then target) so a fitted model does not
//! depend on the order in which training rows were supplied.

pub mod forest;
pub mod knn;
pub mod mlp;
pub mod suite;
pub mod tree;

use std::cmp::Ordering;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::RandomForest;
pub use knn::KnnRegressor;
pub use mlp::Mlp;
pub use tree::RegressionTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Dtree,
    Rforest,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Knn => "knn",
            ModelKind::Dtree => "dtree",
            ModelKind::Rforest => "rforest",
            ModelKind::Mlp => "mlp",
        })
    }
}

/// Hyperparameters for one model. Fields that do not apply to `kind` are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub k_neighbors: usize,
    pub tree_depth: usize,
    pub min_samples_leaf: usize,
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Features drawn per split in a forest; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without improvement of the training loss before stopping.
    pub patience: usize,
    /// Train the network on a z-scored target and undo it at predict time.
    pub standardize_target: bool,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Knn,
            k_neighbors: 5,
            tree_depth: 8,
            min_samples_leaf: 1,
            n_trees: 100,
            bootstrap: true,
            max_features: None,
            hidden_layers: vec![600],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            patience: 20,
            standardize_target: true,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{} model: {msg}", self.kind)));
        match self.kind {
            ModelKind::Knn if self.k_neighbors == 0 => bad("k_neighbors must be at least 1"),
            ModelKind::Dtree | ModelKind::Rforest if self.tree_depth == 0 => {
                bad("tree_depth must be at least 1")
            }
            ModelKind::Dtree | ModelKind::Rforest if self.min_samples_leaf == 0 => {
                bad("min_samples_leaf must be at least 1")
            }
            ModelKind::Rforest if self.n_trees == 0 => bad("n_trees must be at least 1"),
            ModelKind::Rforest if self.max_features == Some(0) => {
                bad("max_features must be at least 1")
            }
            ModelKind::Mlp if self.hidden_layers.is_empty() => {
                bad("hidden_layers must not be empty")
            }
            ModelKind::Mlp if self.hidden_layers.contains(&0) => {
                bad("hidden layer widths must be positive")
            }
            ModelKind::Mlp if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) => {
                bad("learning_rate must be positive")
            }
            ModelKind::Mlp if self.epochs == 0 => bad("epochs must be at least 1"),
            ModelKind::Mlp if self.batch_size == 0 => bad("batch_size must be at least 1"),
            _ => Ok(()),
        }
    }
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regressor {
    Knn(KnnRegressor),
    Dtree(RegressionTree),
    Rforest(RandomForest),
    Mlp(Mlp),
}

impl Regressor {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &ModelSpec) -> Result<Regressor> {
        spec.validate()?;
        check_training_data(x, y)?;
        Ok(match spec.kind {
            ModelKind::Knn => Regressor::Knn(KnnRegressor::fit(x, y, spec)?),
            ModelKind::Dtree => Regressor::Dtree(RegressionTree::fit(x, y, spec)?),
            ModelKind::Rforest => Regressor::Rforest(RandomForest::fit(x, y, spec)?),
            ModelKind::Mlp => Regressor::Mlp(Mlp::fit(x, y, spec)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Regressor::Knn(_) => ModelKind::Knn,
            Regressor::Dtree(_) => ModelKind::Dtree,
            Regressor::Rforest(_) => ModelKind::Rforest,
            Regressor::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Regressor::Knn(m) => m.n_features(),
            Regressor::Dtree(m) => m.n_features(),
            Regressor::Rforest(m) => m.n_features(),
            Regressor::Mlp(m) => m.n_features(),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let out = match self {
            Regressor::Knn(m) => m.predict(x),
            Regressor::Dtree(m) => m.predict(x),
            Regressor::Rforest(m) => m.predict(x),
            Regressor::Mlp(m) => m.predict(x),
        };
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite prediction for query row {i}"
            )));
        }
        Ok(out)
    }
}

fn check_training_data(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::invalid("cannot fit on zero rows"));
    }
    if x.ncols() == 0 {
        return Err(Error::invalid("cannot fit on zero features"));
    }
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    Ok(())
}

/// Rows of `(x, y)` reordered lexicographically by features, then target.
pub(crate) fn canonical(x: ArrayView2<f64>, y: ArrayView1<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    (x.select(Axis(0), &order), y.select(Axis(0), &order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spec_validation() {
        assert!(ModelSpec {
            k_neighbors: 0,
            ..ModelSpec::new(ModelKind::Knn)
        }
        .validate()
        .is_err());
        assert!(ModelSpec {
            tree_depth: 0,
            ..ModelSpec::new(ModelKind::Dtree)
        }
        .validate()
        .is_err());
        assert!(ModelSpec {
            n_trees: 0,
            ..ModelSpec::new(ModelKind::Rforest)
        }
        .validate()
        .is_err());
        assert!(ModelSpec {
            epochs: 0,
            ..ModelSpec::new(ModelKind::Mlp)
        }
        .validate()
        .is_err());
        assert!(ModelSpec {
            hidden_layers: vec![],
            ..ModelSpec::new(ModelKind::Mlp)
        }
        .validate()
        .is_err());
        assert!(ModelSpec {
            learning_rate: 0.0,
            ..ModelSpec::new(ModelKind::Mlp)
        }
        .validate()
        .is_err());
        // irrelevant fields are ignored
        assert!(ModelSpec {
            epochs: 0,
            ..ModelSpec::new(ModelKind::Knn)
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn fit_rejects_empty_and_mismatched() {
        let spec = ModelSpec::new(ModelKind::Dtree);
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(Regressor::fit(empty.view(), Array1::zeros(0).view(), &spec).is_err());
        let x = array![[1.0], [2.0]];
        assert!(Regressor::fit(x.view(), array![1.0].view(), &spec).is_err());
    }

    #[test]
    fn predict_checks_width() {
        let x = array![[1.0, 2.0], [2.0, 3.0]];
        let y = array![1.0, 2.0];
        let m = Regressor::fit(
            x.view(),
            y.view(),
            &ModelSpec {
                k_neighbors: 1,
                ..ModelSpec::new(ModelKind::Knn)
            },
        )
        .unwrap();
        assert!(m.predict(array![[1.0]].view()).is_err());
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let x = array![[2.0, 0.0], [1.0, 5.0], [1.0, 3.0]];
        let y = array![0.0, 1.0, 2.0];
        let (cx, cy) = canonical(x.view(), y.view());
        assert_eq!(cx, array![[1.0, 3.0], [1.0, 5.0], [2.0, 0.0]]);
        assert_eq!(cy, array![2.0, 1.0, 0.0]);
    }
}
