//! Evaluation protocols and metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagsim::{pack_objects, Bag, PackParams, PoolObject};
use crate::classify::{train_model, Dataset, ForestParams, Model, ModelKind, Prediction};
use crate::error::{Error, Result};
use crate::extract::{
    extract_segments, ground_truth_records, label_segments, BoundsMode, Histogram, Segment, SegmentRecord,
};
use crate::grid::Connectivity;
use crate::labels::Task;
use crate::repack::{flatten2d, project_voxels, Axis};
use crate::sieve::{decompose, FilterKind, ScaleSchedule};

/// Probabilities below this are clamped before taking logs.
pub const NLL_FLOOR: f64 = 1.0 / 1024.0;

/// Non-electrical to electrical object ratio in held-out device test bags.
pub const NON_ELECTRICAL_RATIO: f64 = 543.0 / 81.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub segment: String,
    pub bag: String,
    pub truth: usize,
    pub prediction: Prediction,
}

impl CaseRecord {
    fn positive(&self) -> bool {
        self.truth != 0
    }

    fn predicted_positive(&self) -> bool {
        self.prediction.predicted != 0
    }
}

/// Electrical (any class but 0) is the positive class throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub accuracy: f64,
    pub errors: usize,
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Missing when a class is absent or every probability is 0 or 1.
    pub auroc: Option<f64>,
    /// `-sum log2(max(p(true class), 2^-10))`.
    pub nll: f64,
    pub nll_mean: f64,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Mann-Whitney statistic with ties counted half.
pub fn mann_whitney_auroc(scores: &[(f64, bool)]) -> Option<f64> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

pub fn compute_metrics(records: &[CaseRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    let (mut tp, mut fn_, mut tn, mut fp, mut correct) = (0, 0, 0, 0, 0);
    let mut nll = 0.0;
    for r in records {
        match (r.positive(), r.predicted_positive()) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
        correct += (r.truth == r.prediction.predicted) as usize;
        let p = r.prediction.probs.get(r.truth).copied().unwrap_or(0.0);
        nll -= p.max(NLL_FLOOR).log2();
    }
    let degenerate = records.iter().all(|r| r.prediction.probs.iter().all(|&p| p == 0.0 || p == 1.0));
    let scores: Vec<(f64, bool)> = records.iter().map(|r| (r.prediction.p_electrical(), r.positive())).collect();
    let total = records.len();
    Ok(Metrics {
        total,
        accuracy: correct as f64 / total as f64,
        errors: total - correct,
        tp,
        fn_,
        tn,
        fp,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        auroc: if degenerate { None } else { mann_whitney_auroc(&scores) },
        nll: nll + 0.0,
        nll_mean: nll / total as f64 + 0.0,
    })
}

/// (FPR, TPR) at every distinct threshold on `p_electrical`, from (0,0) to (1,1).
pub fn roc_curve(records: &[CaseRecord]) -> Result<Vec<(f64, f64)>> {
    let mut scores: Vec<(f64, bool)> = records.iter().map(|r| (r.prediction.p_electrical(), r.positive())).collect();
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC needs both electrical and non-electrical cases"));
    }
    scores.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scores.len() {
        let t = scores[i].0;
        while i < scores.len() && scores[i].0 == t {
            if scores[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagMeans {
    pub bags: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auroc: Option<f64>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub records: Vec<CaseRecord>,
    pub metrics: Metrics,
    pub per_bag: BTreeMap<String, Metrics>,
    pub per_bag_mean: BagMeans,
    /// Empty when only one class is present.
    pub roc: Vec<(f64, f64)>,
}

impl EvalResult {
    pub fn from_records(records: Vec<CaseRecord>) -> Result<Self> {
        let metrics = compute_metrics(&records)?;
        let mut groups: BTreeMap<String, Vec<CaseRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry(r.bag.clone()).or_default().push(r.clone());
        }
        let per_bag =
            groups.into_iter().map(|(b, rs)| Ok((b, compute_metrics(&rs)?))).collect::<Result<BTreeMap<_, _>>>()?;
        let per_bag_mean = BagMeans {
            bags: per_bag.len(),
            accuracy: mean(per_bag.values().map(|m| Some(m.accuracy))).unwrap_or(0.0),
            sensitivity: mean(per_bag.values().map(|m| m.sensitivity)),
            specificity: mean(per_bag.values().map(|m| m.specificity)),
            auroc: mean(per_bag.values().map(|m| m.auroc)),
        };
        let roc = roc_curve(&records).unwrap_or_default();
        Ok(Self { records, metrics, per_bag, per_bag_mean, roc })
    }
}

pub trait Predictor: Send + Sync {
    fn predict(&self, h: &Histogram) -> Result<Prediction>;
}

impl Predictor for Model {
    fn predict(&self, h: &Histogram) -> Result<Prediction> {
        Model::predict(self, h)
    }
}

impl<F: Fn(&Histogram) -> Prediction + Send + Sync> Predictor for F {
    fn predict(&self, h: &Histogram) -> Result<Prediction> {
        Ok(self(h))
    }
}

/// Something that can be fitted to a training set.
pub trait Learner: Sync {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn Predictor>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ModelKind,
    pub forest: ForestParams,
}

impl Learner for ClassifierSpec {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(train_model(train, self.kind, &self.forest)?))
    }
}

fn check_task(records: &[SegmentRecord], task: Task) -> Result<()> {
    match records.iter().find(|r| r.label.is_none_or(|l| l >= task.class_count())) {
        Some(r) => Err(Error::invalid(format!("segment {} lacks a valid {task:?} label", r.id))),
        None => Ok(()),
    }
}

fn predict_all(model: &dyn Predictor, test: &[SegmentRecord]) -> Result<Vec<CaseRecord>> {
    test.iter()
        .map(|r| {
            Ok(CaseRecord {
                segment: r.id.clone(),
                bag: r.bag.clone(),
                truth: r.label.expect("checked"),
                prediction: model.predict(&r.hist)?,
            })
        })
        .collect()
}

/// Leave-one-bag-out over labelled segments grouped by bag.
pub fn lobo_evaluate(bags: &[(String, Vec<SegmentRecord>)], task: Task, learner: &dyn Learner) -> Result<EvalResult> {
    if bags.len() < 2 {
        return Err(Error::invalid("leave-one-bag-out needs at least two bags"));
    }
    for (id, segs) in bags {
        check_task(segs, task)?;
        if segs.is_empty() {
            log::warn!("bag {id} has no segments");
        }
    }
    let folds: Vec<Vec<CaseRecord>> = bags
        .par_iter()
        .enumerate()
        .filter(|(_, (_, segs))| !segs.is_empty())
        .map(|(k, (_, test))| {
            let train: Vec<SegmentRecord> =
                bags.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, b)| b.1.iter().cloned()).collect();
            let model = learner.fit(&Dataset::from_records(&train, task)?)?;
            predict_all(model.as_ref(), test)
        })
        .collect::<Result<_>>()?;
    EvalResult::from_records(folds.into_iter().flatten().collect())
}

/// How a bag is turned into segment records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SegmentSource {
    GroundTruth,
    Sieve {
        schedule: ScaleSchedule,
        filter: FilterKind,
        bounds: BoundsMode,
    },
    /// Ground-truth objects on the normalised sum projection along an axis.
    Flattened {
        axis: Axis,
    },
}

pub fn bag_records(bag: &Bag, bag_id: &str, source: &SegmentSource, task: Task) -> Result<Vec<SegmentRecord>> {
    match source {
        SegmentSource::GroundTruth => ground_truth_records(&bag.volume, &bag.labels, bag_id, task),
        SegmentSource::Sieve { schedule, filter, bounds } => {
            let d = decompose(&bag.volume, schedule, *filter, Connectivity::for_ndim(bag.volume.ndim())?)?;
            label_segments(&extract_segments(&d, *bounds, bag_id)?, Some(&bag.labels), task)
        }
        SegmentSource::Flattened { axis } => flattened_records(bag, bag_id, *axis, task),
    }
}

/// Each object's projected footprint, valued by the flattened image.
pub fn flattened_records(bag: &Bag, bag_id: &str, axis: Axis, task: Task) -> Result<Vec<SegmentRecord>> {
    let image = flatten2d(&bag.volume, axis)?;
    let mut out = Vec::new();
    for (k, (id, voxels)) in bag.labels.supports().into_iter().enumerate() {
        let entry = bag.labels.table.get(id).expect("validated");
        let pixels = project_voxels(&voxels, bag.labels.dims(), axis)?;
        let seg = Segment {
            bag: bag_id.to_string(),
            channel: 0,
            source_values: pixels.iter().map(|&p| image.pixels[p]).collect(),
            voxels: pixels,
        };
        let device = entry.electrical.then(|| entry.device_kind().to_string());
        let mut rec = SegmentRecord::from_segment(&seg, k, Some(task.class_id(entry.class)), device)?;
        rec.runs.clear();
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldOutConfig {
    pub test_bags: usize,
    pub pack: PackParams,
    pub seed: u64,
}

/// Trains without any segment of one device kind, then tests on fresh bags
/// holding that device among non-electrical objects.
pub fn leave_one_class_out_evaluate(
    corpus: &[(String, Vec<SegmentRecord>)],
    pool: &[PoolObject],
    held_out: &str,
    sim: &HeldOutConfig,
    source: &SegmentSource,
    task: Task,
    learner: &dyn Learner,
) -> Result<EvalResult> {
    let devices: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].electrical && pool[i].kind == held_out).collect();
    if devices.is_empty() {
        return Err(Error::invalid(format!("no electrical device of kind {held_out:?} in the pool")));
    }
    let others: Vec<usize> = (0..pool.len()).filter(|&i| !pool[i].electrical).collect();
    let train: Vec<SegmentRecord> =
        corpus.iter().flat_map(|b| b.1.iter()).filter(|r| r.device.as_deref() != Some(held_out)).cloned().collect();
    check_task(&train, task)?;
    let model = learner.fit(&Dataset::from_records(&train, task)?)?;
    let per_bag = (NON_ELECTRICAL_RATIO).round() as usize;
    let mut records = Vec::new();
    for t in 0..sim.test_bags {
        let seed = sim.seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = vec![devices[t % devices.len()]];
        let n = per_bag.min(others.len());
        picks.extend(sample(&mut rng, others.len(), n).into_iter().map(|i| others[i]));
        let bag = pack_objects(pool, &picks, &sim.pack, seed)?;
        let id = format!("heldout_{held_out}_{t:03}");
        records.extend(predict_all(model.as_ref(), &bag_records(&bag, &id, source, task)?)?);
    }
    EvalResult::from_records(records)
}

pub fn write_report(path: &Path, result: &EvalResult, config: &serde_json::Value) -> Result<()> {
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a serde_json::Value,
        nll: &'static str,
        metrics: &'a Metrics,
        per_bag_mean: &'a BagMeans,
        per_bag: &'a BTreeMap<String, Metrics>,
        roc: &'a [(f64, f64)],
        records: &'a [CaseRecord],
    }
    crate::io::write_json(
        path,
        &Report {
            config,
            nll: "-sum log2(max(p_true, 2^-10))",
            metrics: &result.metrics,
            per_bag_mean: &result.per_bag_mean,
            per_bag: &result.per_bag,
            roc: &result.roc,
            records: &result.records,
        },
    )
}

fn cell(x: Option<f64>) -> String {
    x.map_or("N/A".to_string(), |v| format!("{v:.6}"))
}

/// One row for the pooled metrics, one for the per-bag means, one per bag.
pub fn summary_csv(result: &EvalResult) -> String {
    let mut out = String::from("scope,cases,accuracy,errors,sensitivity,specificity,auroc,nll\n");
    let mut row = |scope: &str, m: &Metrics| {
        out += &format!(
            "{scope},{},{:.6},{},{},{},{},{:.6}\n",
            m.total,
            m.accuracy,
            m.errors,
            cell(m.sensitivity),
            cell(m.specificity),
            cell(m.auroc),
            m.nll
        );
    };
    row("pooled", &result.metrics);
    for (b, m) in &result.per_bag {
        row(b, m);
    }
    let mm = &result.per_bag_mean;
    out += &format!(
        "bag_mean,{},{:.6},,{},{},{},\n",
        mm.bags,
        mm.accuracy,
        cell(mm.sensitivity),
        cell(mm.specificity),
        cell(mm.auroc)
    );
    out
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in points {
        out += &format!("{f},{t}\n");
    }
    out
}
