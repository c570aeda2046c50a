//! One model per (target, day type, model template), with per-cell
//! hyperparameters and on-disk persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelKind, ModelSpec, Regressor};
use crate::chain::{SupervisedRow, Target};
use crate::error::{Error, Result};
use crate::ingest::{DayType, TripRecord};
use crate::preprocess::{fit_scaler, Scaler};
use crate::seed;

/// A named model configuration; the grid fills in the per-cell values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelTemplate {
    pub name: String,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

// serde's flatten ignores deny_unknown_fields on the inner struct, so the
// spec is split off by hand to keep typos in model options an error.
impl<'de> Deserialize<'de> for ModelTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
        let name = match map.remove("name") {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => return Err(D::Error::custom("model `name` must be a string")),
            None => return Err(D::Error::missing_field("name")),
        };
        let spec = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| D::Error::custom(format!("model `{name}`: {e}")))?;
        Ok(ModelTemplate { name, spec })
    }
}

impl ModelTemplate {
    pub fn new(name: &str, spec: ModelSpec) -> Self {
        Self {
            name: name.to_string(),
            spec,
        }
    }
}

/// Tuned hyperparameters for one (target, day type) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub target: Target,
    pub day_type: DayType,
    pub knn_neighbors: usize,
    pub dtree_depth: usize,
    pub rforest_depth: usize,
    pub learning_rate: f64,
}

/// The tuned grid reported for the survey data.
pub fn default_grid() -> Vec<GridCell> {
    let cell =
        |target, day_type, knn_neighbors, dtree_depth, rforest_depth, learning_rate| GridCell {
            target,
            day_type,
            knn_neighbors,
            dtree_depth,
            rforest_depth,
            learning_rate,
        };
    use DayType::{Weekday as WD, Weekend as WED};
    vec![
        cell(Target::Start, WD, 17, 8, 10, 1e-3),
        cell(Target::Start, WED, 17, 5, 11, 1e-3),
        cell(Target::End, WD, 15, 5, 9, 1e-2),
        cell(Target::End, WED, 17, 5, 12, 1e-2),
        cell(Target::Distance, WD, 17, 6, 20, 7e-3),
        cell(Target::Distance, WED, 14, 4, 20, 7e-5),
    ]
}

/// KNN, tree, forest, and the one- and three-hidden-layer networks.
pub fn default_templates() -> Vec<ModelTemplate> {
    vec![
        ModelTemplate::new("knn", ModelSpec::new(ModelKind::Knn)),
        ModelTemplate::new("dt", ModelSpec::new(ModelKind::Dtree)),
        ModelTemplate::new("rf", ModelSpec::new(ModelKind::Rforest)),
        ModelTemplate::new(
            "ann",
            ModelSpec {
                hidden_layers: vec![600],
                ..ModelSpec::new(ModelKind::Mlp)
            },
        ),
        ModelTemplate::new(
            "dann",
            ModelSpec {
                hidden_layers: vec![600, 300, 100],
                ..ModelSpec::new(ModelKind::Mlp)
            },
        ),
    ]
}

impl GridCell {
    /// The template's spec with this cell's hyperparameter applied.
    pub fn apply(&self, template: &ModelSpec) -> ModelSpec {
        let mut spec = template.clone();
        match spec.kind {
            ModelKind::Knn => spec.k_neighbors = self.knn_neighbors,
            ModelKind::Dtree => spec.tree_depth = self.dtree_depth,
            ModelKind::Rforest => spec.tree_depth = self.rforest_depth,
            ModelKind::Mlp => spec.learning_rate = self.learning_rate,
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SuiteKey {
    pub target: Target,
    pub day_type: DayType,
    pub model: String,
}

impl SuiteKey {
    /// File stem used when persisting, e.g. `start_wd_rf`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.target, self.day_type.slug(), self.model)
    }
}

impl fmt::Display for SuiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.target, self.day_type, self.model)
    }
}

const FORMAT_TAG: &str = "evdemand-model";
const FORMAT_VERSION: u32 = 1;

/// A fitted regressor together with everything needed to apply it to raw
/// trip features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub target: Target,
    pub day_type: DayType,
    pub name: String,
    pub with_duration: bool,
    pub spec: ModelSpec,
    pub scaler: Scaler,
    pub regressor: Regressor,
}

impl TrainedModel {
    pub fn key(&self) -> SuiteKey {
        SuiteKey {
            target: self.target,
            day_type: self.day_type,
            model: self.name.clone(),
        }
    }

    pub fn predict_rows(&self, rows: &[SupervisedRow]) -> Result<Array1<f64>> {
        let x = feature_matrix(rows, self.with_duration);
        self.predict_raw(x)
    }

    pub fn predict_trip(&self, trip: &TripRecord) -> Result<f64> {
        let features = SupervisedRow::trip_features(trip, self.with_duration);
        let x = Array2::from_shape_vec((1, features.len()), features).expect("one row");
        Ok(self.predict_raw(x)?[0])
    }

    fn predict_raw(&self, x: Array2<f64>) -> Result<Array1<f64>> {
        let scaled = self.scaler.transform(x.view())?;
        self.regressor.predict(scaled.view())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<TrainedModel> {
        let err = |reason: String| Error::ModelFormat {
            path: origin.to_path_buf(),
            reason,
        };
        let model: TrainedModel = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if model.format != FORMAT_TAG {
            return Err(err(format!("unexpected format tag `{}`", model.format)));
        }
        if model.version != FORMAT_VERSION {
            return Err(err(format!("unsupported version {}", model.version)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainedModel::from_json(&text, path)
    }
}

pub fn feature_matrix(rows: &[SupervisedRow], with_duration: bool) -> Array2<f64> {
    let width = if with_duration { 4 } else { 3 };
    let flat: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.features(with_duration))
        .collect();
    Array2::from_shape_vec((rows.len(), width), flat).expect("rectangular features")
}

pub fn target_vector(rows: &[SupervisedRow], target: Target) -> Array1<f64> {
    rows.iter().map(|r| r.target(target)).collect()
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub with_duration: bool,
    pub seed: u64,
}

/// Check that templates are uniquely named and valid, and that the grid
/// has exactly one cell per (target, day type).
pub fn validate_suite(templates: &[ModelTemplate], grid: &[GridCell]) -> Result<()> {
    let mut names = BTreeSet::new();
    for t in templates {
        if t.name.is_empty()
            || !t
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Config(format!(
                "model name `{}` must be [A-Za-z0-9_-]+",
                t.name
            )));
        }
        if !names.insert(t.name.as_str()) {
            return Err(Error::Config(format!("duplicate model name `{}`", t.name)));
        }
        for cell in grid {
            cell.apply(&t.spec).validate().map_err(|e| {
                Error::Config(format!(
                    "model `{}` for {}/{}: {e}",
                    t.name, cell.target, cell.day_type
                ))
            })?;
        }
    }
    let mut cells = BTreeSet::new();
    for c in grid {
        if !cells.insert((c.target, c.day_type)) {
            return Err(Error::Config(format!(
                "duplicate grid cell {}/{}",
                c.target, c.day_type
            )));
        }
    }
    for target in Target::ALL {
        for day in DayType::ALL {
            if !cells.contains(&(target, day)) {
                return Err(Error::Config(format!(
                    "grid has no cell for {target}/{day}"
                )));
            }
        }
    }
    Ok(())
}

/// Train every (target, day type, template) combination on the given
/// training rows. Day types without rows are skipped. Each model gets its
/// own seed derived from `options.seed` and its position in the suite.
pub fn train_suite(
    train: &BTreeMap<DayType, Vec<SupervisedRow>>,
    templates: &[ModelTemplate],
    grid: &[GridCell],
    options: &SuiteOptions,
) -> Result<BTreeMap<SuiteKey, TrainedModel>> {
    validate_suite(templates, grid)?;

    let mut scalers = BTreeMap::new();
    for (&day, rows) in train {
        if rows.is_empty() {
            continue;
        }
        let x = feature_matrix(rows, options.with_duration);
        scalers.insert(day, (fit_scaler(x.view())?, x));
    }

    let mut jobs = Vec::new();
    for cell in grid {
        for template in templates {
            let index = jobs.len() as u64;
            jobs.push((cell, template, index));
        }
    }
    let trained: Vec<Option<TrainedModel>> = jobs
        .into_par_iter()
        .map(|(cell, template, index)| -> Result<Option<TrainedModel>> {
            let Some((scaler, x)) = scalers.get(&cell.day_type) else {
                return Ok(None);
            };
            let rows = &train[&cell.day_type];
            let mut spec = cell.apply(&template.spec);
            spec.seed = seed::derive(options.seed, "model", index);
            let scaled = scaler.transform(x.view())?;
            let y = target_vector(rows, cell.target);
            let regressor =
                Regressor::fit(scaled.view(), y.view(), &spec).map_err(|e| match e {
                    Error::Diverged(msg) => Error::Diverged(format!(
                        "{}/{}/{}: {msg}",
                        cell.target, cell.day_type, template.name
                    )),
                    other => other,
                })?;
            Ok(Some(TrainedModel {
                format: FORMAT_TAG.to_string(),
                version: FORMAT_VERSION,
                target: cell.target,
                day_type: cell.day_type,
                name: template.name.clone(),
                with_duration: options.with_duration,
                spec,
                scaler: scaler.clone(),
                regressor,
            }))
        })
        .collect::<Result<_>>()?;

    Ok(trained
        .into_iter()
        .flatten()
        .map(|m| (m.key(), m))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn small_templates() -> Vec<ModelTemplate> {
        vec![
            ModelTemplate::new("knn", ModelSpec::new(ModelKind::Knn)),
            ModelTemplate::new("dt", ModelSpec::new(ModelKind::Dtree)),
            ModelTemplate::new(
                "rf",
                ModelSpec {
                    n_trees: 5,
                    ..ModelSpec::new(ModelKind::Rforest)
                },
            ),
            ModelTemplate::new(
                "mlp-1",
                ModelSpec {
                    hidden_layers: vec![6],
                    epochs: 3,
                    ..ModelSpec::new(ModelKind::Mlp)
                },
            ),
            ModelTemplate::new(
                "mlp-3",
                ModelSpec {
                    hidden_layers: vec![6, 3, 1],
                    epochs: 3,
                    ..ModelSpec::new(ModelKind::Mlp)
                },
            ),
        ]
    }

    fn training_rows() -> BTreeMap<DayType, Vec<SupervisedRow>> {
        DayType::ALL
            .into_iter()
            .map(|d| (d, synth::random_rows(60, d as u64 + 11)))
            .collect()
    }

    #[test]
    fn grid_matches_tuned_values() {
        let grid = default_grid();
        assert_eq!(grid.len(), 6);
        let start_wd = grid
            .iter()
            .find(|c| c.target == Target::Start && c.day_type == DayType::Weekday)
            .unwrap();
        assert_eq!(
            (
                start_wd.knn_neighbors,
                start_wd.dtree_depth,
                start_wd.rforest_depth,
                start_wd.learning_rate
            ),
            (17, 8, 10, 1e-3)
        );
        let dist_wed = grid
            .iter()
            .find(|c| c.target == Target::Distance && c.day_type == DayType::Weekend)
            .unwrap();
        assert_eq!(
            (
                dist_wed.knn_neighbors,
                dist_wed.dtree_depth,
                dist_wed.rforest_depth,
                dist_wed.learning_rate
            ),
            (14, 4, 20, 7e-5)
        );
    }

    #[test]
    fn cell_applies_kind_specific_value() {
        let cell = default_grid()[0];
        assert_eq!(cell.apply(&ModelSpec::new(ModelKind::Knn)).k_neighbors, 17);
        assert_eq!(cell.apply(&ModelSpec::new(ModelKind::Dtree)).tree_depth, 8);
        assert_eq!(
            cell.apply(&ModelSpec::new(ModelKind::Rforest)).tree_depth,
            10
        );
        assert_eq!(
            cell.apply(&ModelSpec::new(ModelKind::Mlp)).learning_rate,
            1e-3
        );
    }

    #[test]
    fn five_kinds_give_thirty_models() {
        let options = SuiteOptions {
            with_duration: true,
            seed: 1,
        };
        let suite = train_suite(
            &training_rows(),
            &small_templates(),
            &default_grid(),
            &options,
        )
        .unwrap();
        assert_eq!(suite.len(), 30);
        let again = train_suite(
            &training_rows(),
            &small_templates(),
            &default_grid(),
            &options,
        )
        .unwrap();
        assert_eq!(suite, again);
    }

    #[test]
    fn incomplete_grid_and_duplicate_names_rejected() {
        let options = SuiteOptions {
            with_duration: true,
            seed: 1,
        };
        let mut grid = default_grid();
        grid.pop();
        assert!(matches!(
            train_suite(&training_rows(), &small_templates(), &grid, &options),
            Err(Error::Config(_))
        ));
        let mut templates = small_templates();
        templates.push(templates[0].clone());
        assert!(validate_suite(&templates, &default_grid()).is_err());
    }

    #[test]
    fn persisted_model_predicts_bit_exactly() {
        let options = SuiteOptions {
            with_duration: true,
            seed: 9,
        };
        let suite = train_suite(
            &training_rows(),
            &small_templates(),
            &default_grid(),
            &options,
        )
        .unwrap();
        let probe = synth::random_rows(25, 77);
        for model in suite.values() {
            let text = model.to_json();
            let loaded = TrainedModel::from_json(&text, Path::new("mem")).unwrap();
            assert_eq!(&loaded, model);
            let a = model.predict_rows(&probe).unwrap();
            let b = loaded.predict_rows(&probe).unwrap();
            assert!(
                a.iter()
                    .zip(b.iter())
                    .all(|(p, q)| p.to_bits() == q.to_bits()),
                "{}",
                model.key()
            );
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let options = SuiteOptions {
            with_duration: false,
            seed: 2,
        };
        let suite = train_suite(
            &training_rows(),
            &small_templates()[..1],
            &default_grid(),
            &options,
        )
        .unwrap();
        let text = suite
            .values()
            .next()
            .unwrap()
            .to_json()
            .replace("\"version\":1", "\"version\":7");
        assert!(matches!(
            TrainedModel::from_json(&text, Path::new("m")),
            Err(Error::ModelFormat { .. })
        ));
    }
}
