//! Histogram classifiers: 1-NN, a bagged tree forest and a weighted
//! ensemble of both.

mod forest;

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{Histogram, SegmentRecord};
use crate::labels::Task;

pub use forest::{forest_predict, forest_train, ForestModel, ForestParams, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub hist: Histogram,
    pub class: usize,
    pub bag: String,
    pub segment: String,
}

impl Instance {
    pub fn new(hist: Histogram, class: usize, bag: impl Into<String>, segment: impl Into<String>) -> Self {
        Self { hist, class, bag: bag.into(), segment: segment.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, class_count: usize) -> Result<Self> {
        if let Some(bad) = instances.iter().find(|i| i.class >= class_count) {
            return Err(Error::invalid(format!("class {} outside 0..{class_count} for {}", bad.class, bad.segment)));
        }
        Ok(Self { instances, class_count })
    }

    /// Labelled records; unlabelled ones are rejected.
    pub fn from_records(records: &[SegmentRecord], task: Task) -> Result<Self> {
        let instances = records
            .iter()
            .map(|r| {
                let class = r.label.ok_or_else(|| Error::invalid(format!("segment {} has no label", r.id)))?;
                Ok(Instance::new(r.hist.clone(), class, &r.bag, &r.id))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(instances, task.class_count())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn classes_present(&self) -> usize {
        self.instances.iter().map(|i| i.class).collect::<BTreeSet<_>>().len()
    }

    pub fn subset(&self, keep: impl Fn(&Instance) -> bool) -> Self {
        Self { instances: self.instances.iter().filter(|i| keep(i)).cloned().collect(), class_count: self.class_count }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl Prediction {
    /// Normalises non-negative weights; argmax ties go to the lowest class.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || total <= 0.0 {
            return Err(Error::invalid("class weights must be non-negative with a positive sum"));
        }
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut predicted = 0;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[predicted] {
                predicted = c;
            }
        }
        Ok(Self { probs, predicted })
    }

    pub fn one_hot(class: usize, class_count: usize) -> Self {
        let mut probs = vec![0.0; class_count];
        probs[class] = 1.0;
        Self { probs, predicted: class }
    }

    /// Probability mass on every class but non-electrical (class 0).
    pub fn p_electrical(&self) -> f64 {
        self.probs[1..].iter().sum()
    }
}

fn sq_distance(a: &Histogram, b: &Histogram) -> u64 {
    a.bins().iter().zip(b.bins()).map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64).sum()
}

pub fn knn_predict(train: &Dataset, query: &Histogram) -> Result<Prediction> {
    let mut best: Option<(u64, usize)> = None;
    for inst in &train.instances {
        let d = sq_distance(&inst.hist, query);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, inst.class));
        }
    }
    let (_, class) = best.ok_or_else(|| Error::invalid("empty training set"))?;
    Ok(Prediction::one_hot(class, train.class_count))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Knn { train: Dataset },
    Forest(ForestModel),
    Ensemble { members: Vec<(Model, f64)> },
}

impl Model {
    pub fn predict(&self, query: &Histogram) -> Result<Prediction> {
        match self {
            Model::Knn { train } => knn_predict(train, query),
            Model::Forest(m) => Ok(forest_predict(m, query)),
            Model::Ensemble { members } => ensemble_predict(members, query),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Model::Knn { train } => train.class_count,
            Model::Forest(m) => m.class_count,
            Model::Ensemble { members } => members.first().map_or(0, |m| m.0.class_count()),
        }
    }
}

pub fn ensemble_predict(members: &[(Model, f64)], query: &Histogram) -> Result<Prediction> {
    if members.iter().any(|m| m.1 < 0.0) || members.iter().all(|m| m.1 == 0.0) {
        return Err(Error::invalid("ensemble weights must be non-negative and not all zero"));
    }
    let mut acc = vec![0.0; members[0].0.class_count()];
    for (m, w) in members {
        for (a, p) in acc.iter_mut().zip(m.predict(query)?.probs) {
            *a += w * p;
        }
    }
    Prediction::from_weights(acc)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    #[default]
    Forest,
    Ensemble,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" | "1nn" => Ok(ModelKind::Knn),
            "forest" => Ok(ModelKind::Forest),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Stratified fold ids: each class is shuffled and dealt round-robin.
pub fn stratified_folds(d: &Dataset, k: usize, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; d.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 0;
    for c in 0..d.class_count {
        let mut members: Vec<usize> = (0..d.len()).filter(|&i| d.instances[i].class == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

/// Accuracy of `kind` under seeded stratified `k`-fold cross-validation.
pub fn cv_accuracy(d: &Dataset, kind: ModelKind, params: &ForestParams, k: usize) -> Result<f64> {
    let folds = stratified_folds(d, k, params.seed);
    let mut correct = 0;
    for f in 0..k {
        let train = Dataset {
            instances: d.instances.iter().zip(&folds).filter(|p| *p.1 != f).map(|p| p.0.clone()).collect(),
            class_count: d.class_count,
        };
        if train.is_empty() {
            continue;
        }
        let model = train_model(&train, kind, params)?;
        for (inst, _) in d.instances.iter().zip(&folds).filter(|p| *p.1 == f) {
            correct += (model.predict(&inst.hist)?.predicted == inst.class) as usize;
        }
    }
    Ok(correct as f64 / d.len() as f64)
}

pub fn train_model(train: &Dataset, kind: ModelKind, params: &ForestParams) -> Result<Model> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    Ok(match kind {
        ModelKind::Knn => Model::Knn { train: train.clone() },
        ModelKind::Forest => Model::Forest(forest_train(train, params)?),
        ModelKind::Ensemble => {
            let mut members = Vec::new();
            for member in [ModelKind::Knn, ModelKind::Forest] {
                let w = cv_accuracy(train, member, params, 10.min(train.len()).max(2))?;
                members.push((train_model(train, member, params)?, w));
            }
            if members.iter().all(|m| m.1 == 0.0) {
                members.iter_mut().for_each(|m| m.1 = 1.0);
            }
            Model::Ensemble { members }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub task: Task,
    pub model: Model,
}

pub fn save_model(path: &Path, task: Task, model: &Model) -> Result<()> {
    crate::io::write_json(path, &ModelFile { format_version: MODEL_FORMAT_VERSION, task, model: model.clone() })
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let f: ModelFile = crate::io::read_json(path)?;
    if f.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::format(path, 0, format!("unsupported model format version {}", f.format_version)));
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub segment_id: String,
    pub bag: String,
    pub channel: usize,
    pub pred: usize,
    pub p_electrical: f64,
}

pub fn predict_records(model: &Model, records: &[SegmentRecord]) -> Result<Vec<PredictionRow>> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| {
            let p = model.predict(&r.hist)?;
            Ok(PredictionRow {
                segment_id: r.id.clone(),
                bag: r.bag.clone(),
                channel: r.channel,
                pred: p.predicted,
                p_electrical: p.p_electrical(),
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::format(path, offset, format!("{kind:?}")),
    }
}
