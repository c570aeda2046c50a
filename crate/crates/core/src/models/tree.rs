//! CART-style regression tree grown by greedy variance reduction.
//!
//! Candidate thresholds are midpoints between consecutive distinct values
//! of a feature. Among equally good splits the lowest feature index wins,
//! then the lowest threshold.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{canonical, ModelSpec};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    n_features: usize,
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, spec: &ModelSpec) -> Result<Self> {
        let (x, y) = canonical(x, y);
        let grower = Grower {
            x: x.view(),
            y: y.view(),
            max_depth: spec.tree_depth,
            min_leaf: spec.min_samples_leaf.max(1),
            max_features: x.ncols(),
        };
        Ok(grower.grow((0..x.nrows()).collect(), None))
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Depth of the deepest leaf; a single leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf node that `row` falls into.
    pub fn leaf_index(&self, row: ArrayView1<f64>) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index always stops at a leaf"),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| self.predict_row(r)).collect()
    }
}

pub(crate) struct Grower<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; all of them when `>= x.ncols()`.
    pub max_features: usize,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    /// Grow a tree on the rows listed in `sample` (duplicates allowed).
    /// `rng` is only consulted when a feature subset must be drawn.
    pub fn grow(&self, sample: Vec<usize>, mut rng: Option<&mut ChaCha8Rng>) -> RegressionTree {
        let mut nodes = Vec::new();
        self.build(sample, 0, &mut nodes, &mut rng);
        RegressionTree {
            n_features: self.x.ncols(),
            nodes,
        }
    }

    fn build(
        &self,
        idx: Vec<usize>,
        depth: usize,
        nodes: &mut Vec<Node>,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> usize {
        let at = nodes.len();
        let m = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / m as f64;
        nodes.push(Node::Leaf {
            value: mean,
            samples: m,
        });

        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if pure || depth >= self.max_depth || m < 2 * self.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(&idx, mean, rng) else {
            return at;
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[[i, best.feature]] <= best.threshold);
        let left = self.build(left_idx, depth + 1, nodes, rng);
        let right = self.build(right_idx, depth + 1, nodes, rng);
        nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }

    fn candidate_features(&self, rng: &mut Option<&mut ChaCha8Rng>) -> Vec<usize> {
        let d = self.x.ncols();
        match rng {
            Some(rng) if self.max_features < d => {
                let mut f = index::sample(*rng, d, self.max_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(
        &self,
        idx: &[usize],
        mean: f64,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Option<Best> {
        let m = idx.len();
        let centered = |i: usize| self.y[i] - mean;
        let total: f64 = idx.iter().map(|&i| centered(i)).sum();
        let parent_sse: f64 = idx.iter().map(|&i| centered(i) * centered(i)).sum();
        let base = total * total / m as f64;

        let mut best: Option<Best> = None;
        let mut order = idx.to_vec();
        for feature in self.candidate_features(rng) {
            order.sort_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]));
            let mut left_sum = 0.0;
            for pos in 0..m - 1 {
                left_sum += centered(order[pos]);
                let n_left = pos + 1;
                let n_right = m - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let lo = self.x[[order[pos], feature]];
                let hi = self.x[[order[pos + 1], feature]];
                if !(lo < hi) {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - base;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(Best {
                        gain,
                        feature,
                        threshold: if mid < hi { mid } else { lo },
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent_sse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use ndarray::{array, Array2};

    fn spec(depth: usize) -> ModelSpec {
        ModelSpec {
            tree_depth: depth,
            ..ModelSpec::new(ModelKind::Dtree)
        }
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 5.0], [3.0, 2.0]];
        let y = array![0.1, 0.1, 0.1, 0.1];
        let t = RegressionTree::fit(x.view(), y.view(), &spec(10)).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(t
            .predict(array![[100.0, -3.0]].view())
            .iter()
            .all(|&v| v == 0.1));
    }

    /// Exhaustive search over every midpoint of the sorted distinct values,
    /// scoring each by the sum of squared errors of the two halves.
    fn oracle_threshold(xs: &[f64], ys: &[f64]) -> f64 {
        let mut distinct = xs.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, f64::NAN);
        for w in distinct.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let left: Vec<f64> = xs
                .iter()
                .zip(ys)
                .filter(|(x, _)| **x <= thr)
                .map(|(_, y)| *y)
                .collect();
            let right: Vec<f64> = xs
                .iter()
                .zip(ys)
                .filter(|(x, _)| **x > thr)
                .map(|(_, y)| *y)
                .collect();
            let score = sse(&left) + sse(&right);
            if score < best.0 {
                best = (score, thr);
            }
        }
        best.1
    }

    #[test]
    fn depth_one_split_matches_enumeration() {
        let xs = [0.0, 1.0, 10.0, 11.0];
        let ys = [0.0, 0.0, 10.0, 10.0];
        let expected = oracle_threshold(&xs, &ys);
        assert_eq!(expected, 5.5);
        let x = Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap();
        let t = RegressionTree::fit(x.view(), Array1::from(ys.to_vec()).view(), &spec(1)).unwrap();
        match t.nodes()[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, expected);
                assert!(threshold > 1.0 && threshold < 10.0);
            }
            ref other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(t.predict(x.view()), array![0.0, 0.0, 10.0, 10.0]);
    }

    #[test]
    fn deep_tree_memorizes() {
        let x = array![
            [0.3, 1.0],
            [0.1, 2.0],
            [0.9, 0.5],
            [0.4, 0.4],
            [0.8, 3.0],
            [0.2, 0.1]
        ];
        let y = array![5.0, -1.0, 2.5, 7.0, 0.0, 3.3];
        let t = RegressionTree::fit(x.view(), y.view(), &spec(20)).unwrap();
        assert_eq!(t.predict(x.view()), y);
    }

    #[test]
    fn depth_limit_respected() {
        let x = Array2::from_shape_fn((64, 1), |(i, _)| i as f64);
        let y = Array1::from_iter((0..64).map(|i| ((i * 37) % 11) as f64));
        for depth in 1..5 {
            let t = RegressionTree::fit(x.view(), y.view(), &spec(depth)).unwrap();
            assert!(t.depth() <= depth);
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y = Array1::from_iter((0..20).map(|i| if i == 0 { 100.0 } else { 0.0 }));
        let s = ModelSpec {
            min_samples_leaf: 3,
            ..spec(10)
        };
        let t = RegressionTree::fit(x.view(), y.view(), &s).unwrap();
        for node in t.nodes() {
            if let Node::Leaf { samples, .. } = node {
                assert!(*samples >= 3);
            }
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // both features separate the targets identically
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let y = array![0.0, 0.0, 1.0, 1.0];
        let t = RegressionTree::fit(x.view(), y.view(), &spec(1)).unwrap();
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
    }
}
