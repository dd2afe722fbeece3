use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use uxpr::bagsim::{
    generate_phantom_pool, load_bag, load_pool, pack_bag, save_bag, save_pool, PackParams, PoolSpec, BAG_LABELS,
    BAG_MANIFEST, BAG_TABLE, BAG_VOLUME,
};
use uxpr::classify::{
    load_model, predict_records, read_predictions, save_model, train_model, write_predictions, Dataset, ForestParams,
    ModelKind,
};
use uxpr::eval::{
    bag_records, leave_one_class_out_evaluate, lobo_evaluate, roc_csv, summary_csv, write_report, ClassifierSpec,
    HeldOutConfig, SegmentSource,
};
use uxpr::extract::{
    default_schedule, extract_segments, ground_truth_records, label_segments, BoundsMode, SegmentRecord,
};
use uxpr::io;
use uxpr::repack::{flatten2d, mip_projection, repack_records, verdict_projections, Axis};
use uxpr::sieve::{decompose, FilterKind, ScaleSchedule};
use uxpr::{Connectivity, Task};

use crate::settings::{Resolved, Settings};
use crate::{ClassifierArgs, Cli, CliError, Command, ScheduleArgs, SieveArgs};

struct ScaleList(ScaleSchedule);

impl FromStr for ScaleList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let scales = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("bad scale list {s:?}: {e}"))?;
        ScaleSchedule::new(scales).map(ScaleList).map_err(|e| e.to_string())
    }
}

struct Dims([usize; 3]);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("bad dims {s:?}: {e}"))?;
        match v[..] {
            [n] if n > 0 => Ok(Dims([n; 3])),
            [x, y, z] if x > 0 && y > 0 && z > 0 => Ok(Dims([x, y, z])),
            _ => Err(format!("dims must be N or X,Y,Z with positive sides, got {s:?}")),
        }
    }
}

struct ConnArg(Connectivity);

impl FromStr for ConnArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "2" | "two" => Ok(ConnArg(Connectivity::Two)),
            "4" | "four" => Ok(ConnArg(Connectivity::Four)),
            "6" | "six" => Ok(ConnArg(Connectivity::Six)),
            other => Err(format!("connectivity must be 2, 4 or 6, got {other:?}")),
        }
    }
}

#[derive(Clone, Copy)]
enum Protocol {
    Lobo,
    Loco,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lobo" => Ok(Protocol::Lobo),
            "loco" => Ok(Protocol::Loco),
            other => Err(format!("protocol must be lobo or loco, got {other:?}")),
        }
    }
}

#[derive(Clone, Copy)]
enum SourceKind {
    GroundTruth,
    Sieve,
    Flattened,
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ground_truth" | "gt" => Ok(SourceKind::GroundTruth),
            "sieve" => Ok(SourceKind::Sieve),
            "flattened" | "2d" => Ok(SourceKind::Flattened),
            other => Err(format!("source must be ground_truth, sieve or flattened, got {other:?}")),
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    subcommand: &'static str,
    argv: Vec<String>,
    config_file: Option<&'a Path>,
    settings: &'a BTreeMap<String, Resolved>,
    seeds: &'a BTreeMap<String, u64>,
    jobs: usize,
    started_unix: f64,
    finished_unix: f64,
    outputs: &'a [PathBuf],
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

struct Done {
    out: PathBuf,
    outputs: Vec<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = now();
    let name = cli.command.name();
    let mut s = Settings::load(cli.config.as_deref(), name)?;
    let jobs: Option<usize> = s.opt("jobs", cli.jobs.as_deref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    match jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into()).into()),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder.build().map_err(|e| CliError::Internal(e.to_string()))?;
    let done = pool.install(|| dispatch(&cli.command, &mut s))?;
    let record = RunRecord {
        tool: "uxpr",
        version: env!("CARGO_PKG_VERSION"),
        library_version: uxpr::VERSION,
        subcommand: name,
        argv: std::env::args().collect(),
        config_file: s.config_path(),
        settings: &s.values,
        seeds: &s.seeds,
        jobs: pool.current_num_threads(),
        started_unix: started,
        finished_unix: now(),
        outputs: &done.outputs,
    };
    io::write_json(&done.out.join("run.json"), &record)?;
    log::info!("{name} finished, outputs in {}", done.out.display());
    Ok(())
}

fn dispatch(cmd: &Command, s: &mut Settings) -> Result<Done> {
    match cmd {
        Command::Simulate(a) => simulate(a, s),
        Command::Decompose(a) => {
            let input: PathBuf = s.req("in", a.input.as_deref())?;
            let scales: ScaleList = s.req("scales", a.scales.as_deref())?;
            let (filter, conn) = sieve_opts(s, &a.sieve)?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            let outputs = stage_decompose(&input, &scales.0, filter, conn, &out)?;
            Ok(Done { out, outputs })
        }
        Command::Unpack(a) => {
            let input: PathBuf = s.req("in", a.input.as_deref())?;
            let (schedule, filter, conn) = schedule_opts(s, &a.schedule)?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            let outputs = stage_decompose(&input, &schedule, filter, conn, &out)?;
            Ok(Done { out, outputs })
        }
        Command::Extract(a) => {
            let ground_truth = s.switch("ground-truth", a.ground_truth)?;
            let bag: Option<PathBuf> = s.opt("bag", a.bag.as_deref())?;
            let decomposition: Option<PathBuf> =
                if ground_truth { None } else { Some(s.req("decomposition", a.decomposition.as_deref())?) };
            if ground_truth && bag.is_none() {
                return Err(CliError::Usage("--ground-truth needs --bag".into()).into());
            }
            let bounds: BoundsMode =
                if ground_truth { BoundsMode::default() } else { s.get("bounds", a.bounds.as_deref(), "bracketing")? };
            let task: Task = s.get("task", a.task.as_deref(), "two_class")?;
            let fallback = bag.as_deref().or(decomposition.as_deref()).map(dir_name).unwrap_or_default();
            let bag_id: String = s.get("bag-id", a.bag_id.as_deref(), &fallback)?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            let n = stage_extract(decomposition.as_deref(), bag.as_deref(), bounds, task, &bag_id, &out)?;
            println!("{n} segments");
            Ok(Done { out, outputs: vec!["segments.jsonl".into()] })
        }
        Command::Train(a) => train(a, s),
        Command::Predict(a) => {
            let model: PathBuf = s.req("model", a.model.as_deref())?;
            let segments = required_list(s, "segments", &a.segments)?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            stage_predict(&model, &segments, &out)?;
            Ok(Done { out, outputs: vec!["predictions.csv".into()] })
        }
        Command::Evaluate(a) => evaluate(a, s),
        Command::Repack(a) => {
            let segments = required_list(s, "segments", &a.segments)?;
            let predictions: PathBuf = s.req("predictions", a.predictions.as_deref())?;
            let bag: Option<PathBuf> = s.opt("bag", a.bag.as_deref())?;
            let dims = match bag {
                Some(b) => io::read_volume(&volume_path(&b))?.dims().to_vec(),
                None => {
                    let d: Option<Dims> = s.opt("dims", a.dims.as_deref())?;
                    d.ok_or_else(|| CliError::Usage("--bag or --dims is required".into()))?.0.to_vec()
                }
            };
            let axis: Axis = s.get("axis", a.axis.as_deref(), "z")?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            let outputs = stage_repack(&segments, &predictions, &dims, axis, &out)?;
            Ok(Done { out, outputs })
        }
        Command::Flatten(a) => {
            let input: PathBuf = s.req("in", a.input.as_deref())?;
            let axis: Axis = s.get("axis", a.axis.as_deref(), "z")?;
            let mip = s.switch("mip", a.mip)?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            let v = io::read_volume(&volume_path(&input))?;
            let flat = flatten2d(&v, axis)?;
            let mut outputs = vec![PathBuf::from(format!("flatten_{}.pgm", axis.name()))];
            io::write_bytes(&out.join(&outputs[0]), &flat.to_pgm())?;
            if mip {
                outputs.push(format!("mip_{}.pgm", axis.name()).into());
                io::write_bytes(&out.join(&outputs[1]), &mip_projection(&v, axis)?.to_pgm())?;
            }
            Ok(Done { out, outputs })
        }
        Command::Pipeline(a) => {
            let bag: PathBuf = s.req("bag", a.bag.as_deref())?;
            let model: PathBuf = s.req("model", a.model.as_deref())?;
            let (schedule, filter, conn) = schedule_opts(s, &a.schedule)?;
            let bounds: BoundsMode = s.get("bounds", a.bounds.as_deref(), "bracketing")?;
            let axis: Axis = s.get("axis", a.axis.as_deref(), "z")?;
            let out: PathBuf = s.req("out", a.out.as_deref())?;
            let task = load_model(&model)?.task;
            let id = dir_name(&bag);
            let mut outputs = Vec::new();
            let unpack = out.join("unpack");
            outputs.extend(
                stage_decompose(&bag, &schedule, filter, conn, &unpack)?
                    .into_iter()
                    .map(|p| Path::new("unpack").join(p)),
            );
            let n = stage_extract(Some(&unpack), Some(&bag), bounds, task, &id, &out.join("extract"))?;
            let segments = out.join("extract").join("segments.jsonl");
            stage_predict(&model, std::slice::from_ref(&segments), &out.join("predict"))?;
            let predictions = out.join("predict").join("predictions.csv");
            let dims = io::read_volume(&volume_path(&bag))?.dims().to_vec();
            let repacked = stage_repack(&[segments], &predictions, &dims, axis, &out.join("repack"))?;
            outputs.push("extract/segments.jsonl".into());
            outputs.push("predict/predictions.csv".into());
            outputs.extend(repacked.into_iter().map(|p| Path::new("repack").join(p)));
            println!("{n} segments");
            Ok(Done { out, outputs })
        }
    }
}

fn volume_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(BAG_VOLUME)
    } else {
        p.to_path_buf()
    }
}

fn manifest_path(p: &Path, name: &str) -> PathBuf {
    if p.is_dir() {
        p.join(name)
    } else {
        p.to_path_buf()
    }
}

/// Last component of a directory (or of a manifest's directory).
fn dir_name(p: &Path) -> String {
    let p = std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let dir = if p.is_file() { p.parent().map(Path::to_path_buf).unwrap_or_default() } else { p };
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bag".into())
}

fn required_list(s: &mut Settings, key: &str, flag: &[String]) -> Result<Vec<PathBuf>> {
    let v = s.list(key, flag)?;
    if v.is_empty() {
        return Err(CliError::Usage(format!("--{key} is required")).into());
    }
    Ok(v)
}

fn sieve_opts(s: &mut Settings, a: &SieveArgs) -> Result<(FilterKind, Option<Connectivity>)> {
    let filter = s.get("filter", a.filter.as_deref(), "m")?;
    let conn: Option<ConnArg> = s.opt("connectivity", a.connectivity.as_deref())?;
    Ok((filter, conn.map(|c| c.0)))
}

fn schedule_opts(s: &mut Settings, a: &ScheduleArgs) -> Result<(ScaleSchedule, FilterKind, Option<Connectivity>)> {
    let explicit: Option<ScaleList> = s.opt("scales", a.scales.as_deref())?;
    let schedule = match explicit {
        Some(l) => l.0,
        None => {
            let n: usize = s.get("n-scales", a.n_scales.as_deref(), "5")?;
            let lo: usize = s.get("s-min", a.s_min.as_deref(), "4000")?;
            let hi: usize = s.get("s-max", a.s_max.as_deref(), "2800000")?;
            default_schedule(n, lo, hi)?
        }
    };
    let (filter, conn) = sieve_opts(s, &a.sieve)?;
    Ok((schedule, filter, conn))
}

fn classifier_opts(s: &mut Settings, a: &ClassifierArgs) -> Result<(ModelKind, ForestParams)> {
    let kind: ModelKind = s.get("classifier", a.classifier.as_deref(), "forest")?;
    let mut p = ForestParams::default();
    if kind != ModelKind::Knn {
        p.tree_count = s.get("trees", a.trees.as_deref(), "500")?;
        p.features_per_split = s.get("features-per-split", a.features_per_split.as_deref(), "16")?;
        p.max_depth = s.opt("max-depth", a.max_depth.as_deref())?;
        p.min_leaf = s.get("min-leaf", a.min_leaf.as_deref(), "1")?;
        p.seed = s.seed("seed", a.seed.as_deref(), 0)?;
    }
    Ok((kind, p))
}

fn read_records(files: &[PathBuf]) -> Result<Vec<(PathBuf, Vec<SegmentRecord>)>> {
    files.iter().map(|f| Ok((f.clone(), io::read_jsonl(f)?))).collect()
}

fn simulate(a: &crate::SimulateArgs, s: &mut Settings) -> Result<Done> {
    let pool_arg: PathBuf = s.req("pool", a.pool.as_deref())?;
    let generate = s.switch("generate-pool", a.generate_pool)?;
    let bags: usize = s.get("bags", a.bags.as_deref(), "5")?;
    let seed = s.seed("seed", a.seed.as_deref(), 0)?;
    let dims: Dims = s.get("dims", a.dims.as_deref(), "64")?;
    let object_count = s.get("objects", a.objects.as_deref(), "20")?;
    let attempts = s.get("attempts", a.attempts.as_deref(), "5")?;
    let out: PathBuf = s.req("out", a.out.as_deref())?;
    let manifest =
        if pool_arg.extension().is_some_and(|e| e == "json") { pool_arg } else { pool_arg.join("pool.json") };
    let mut outputs = Vec::new();
    let pool = if manifest.is_file() {
        load_pool(&manifest)?
    } else if generate {
        if manifest.file_name().is_some_and(|n| n != "pool.json") {
            return Err(CliError::Usage("a generated pool is written as pool.json; pass its directory".into()).into());
        }
        let mut spec = PoolSpec::new(
            s.get("electrical", a.electrical.as_deref(), "10")?,
            s.get("non-electrical", a.non_electrical.as_deref(), "20")?,
        );
        spec.min_extent = s.get("min-extent", None, &spec.min_extent.to_string())?;
        spec.max_extent = s.get("max-extent", None, &spec.max_extent.to_string())?;
        let pool_seed = s.seed("pool-seed", a.pool_seed.as_deref(), 0)?;
        let pool = generate_phantom_pool(&spec, pool_seed)?;
        let dir = manifest.parent().unwrap_or(Path::new(""));
        save_pool(dir, &pool, Some(&spec), Some(pool_seed))?;
        outputs.push(manifest.clone());
        pool
    } else {
        return Err(CliError::Input(format!(
            "{}: no pool manifest here (pass --generate-pool to create one)",
            manifest.display()
        ))
        .into());
    };
    let params = PackParams { object_count, attempts, dims: dims.0 };
    let names: Vec<String> = (0..bags).map(|i| format!("bag_{i:03}")).collect();
    names.par_iter().enumerate().try_for_each(|(i, name)| -> uxpr::Result<()> {
        let bag = pack_bag(&pool, &params, seed.wrapping_add(i as u64))?;
        save_bag(&out.join(name), &bag, &params, Some(&manifest))
    })?;
    outputs.extend(names.into_iter().map(PathBuf::from));
    println!("{bags} bags from {} pool objects", pool.len());
    Ok(Done { out, outputs })
}

fn train(a: &crate::TrainArgs, s: &mut Settings) -> Result<Done> {
    let files = required_list(s, "segments", &a.segments)?;
    let task: Task = s.get("task", a.task.as_deref(), "two_class")?;
    let (kind, params) = classifier_opts(s, &a.classifier)?;
    let out: PathBuf = s.req("out", a.out.as_deref())?;
    let mut records = Vec::new();
    for (f, recs) in read_records(&files)? {
        if let Some(r) = recs.iter().find(|r| r.label.is_none_or(|l| l >= task.class_count())) {
            return Err(CliError::Input(format!("{}: segment {} has no {task:?} label", f.display(), r.id)).into());
        }
        records.extend(recs);
    }
    let model = train_model(&Dataset::from_records(&records, task)?, kind, &params)?;
    save_model(&out.join("model.json"), task, &model)?;
    println!("trained {kind:?} on {} segments", records.len());
    Ok(Done { out, outputs: vec!["model.json".into()] })
}

/// Bag directories under each root, named by their last path component.
fn find_bags(roots: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let mut found = Vec::new();
    for root in roots {
        if root.join(BAG_MANIFEST).is_file() {
            found.push((dir_name(root), root.clone()));
            continue;
        }
        let entries = std::fs::read_dir(root).map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
        let mut dirs: Vec<PathBuf> =
            entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(BAG_MANIFEST).is_file()).collect();
        if dirs.is_empty() {
            return Err(CliError::Input(format!("{}: no bag directories found", root.display())).into());
        }
        dirs.sort();
        found.extend(dirs.into_iter().map(|d| (dir_name(&d), d)));
    }
    let mut seen = BTreeSet::new();
    if let Some((id, _)) = found.iter().find(|(id, _)| !seen.insert(id.clone())) {
        return Err(CliError::Usage(format!("two bags share the name {id:?}")).into());
    }
    Ok(found)
}

fn evaluate(a: &crate::EvaluateArgs, s: &mut Settings) -> Result<Done> {
    let roots = required_list(s, "bags", &a.bags)?;
    let protocol: Protocol = s.get("protocol", a.protocol.as_deref(), "lobo")?;
    let source_kind: SourceKind = s.get("source", a.source.as_deref(), "ground_truth")?;
    let task: Task = s.get("task", a.task.as_deref(), "two_class")?;
    let (kind, forest) = classifier_opts(s, &a.classifier)?;
    let source = match source_kind {
        SourceKind::GroundTruth => SegmentSource::GroundTruth,
        SourceKind::Sieve => {
            let (schedule, filter, _) = schedule_opts(s, &a.schedule)?;
            let bounds = s.get("bounds", a.bounds.as_deref(), "bracketing")?;
            SegmentSource::Sieve { schedule, filter, bounds }
        }
        SourceKind::Flattened => SegmentSource::Flattened { axis: s.get("axis", a.axis.as_deref(), "z")? },
    };
    let out: PathBuf = s.req("out", a.out.as_deref())?;
    let bags = find_bags(&roots)?;
    let corpus: Vec<(String, Vec<SegmentRecord>)> = bags
        .par_iter()
        .map(|(id, dir)| -> uxpr::Result<_> {
            let bag = load_bag(dir)?;
            Ok((id.clone(), bag_records(&bag, id, &source, task)?))
        })
        .collect::<uxpr::Result<_>>()?;
    let learner = ClassifierSpec { kind, forest };
    let result = match protocol {
        Protocol::Lobo => lobo_evaluate(&corpus, task, &learner)?,
        Protocol::Loco => {
            let pool: PathBuf = s.req("pool", a.pool.as_deref())?;
            let held_out: String = s.req("held-out", a.held_out.as_deref())?;
            let test_bags = s.get("test-bags", a.test_bags.as_deref(), "5")?;
            let seed = s.seed("test-seed", a.test_seed.as_deref(), 0)?;
            let pool = load_pool(&manifest_path(&pool, "pool.json"))?;
            let first = load_bag(&bags[0].1)?;
            let dims: [usize; 3] = first
                .volume
                .dims()
                .try_into()
                .map_err(|_| CliError::Input(format!("{}: held-out bags need 3D volumes", bags[0].1.display())))?;
            let sim = HeldOutConfig { test_bags, pack: PackParams { dims, ..PackParams::default() }, seed };
            leave_one_class_out_evaluate(&corpus, &pool, &held_out, &sim, &source, task, &learner)?
        }
    };
    let mut config = s.plain(&["out", "jobs"]);
    config["seeds"] = serde_json::json!(s.seeds);
    write_report(&out.join("report.json"), &result, &config)?;
    io::write_bytes(&out.join("summary.csv"), summary_csv(&result).as_bytes())?;
    io::write_bytes(&out.join("roc.csv"), roc_csv(&result.roc).as_bytes())?;
    let m = &result.metrics;
    let show = |x: Option<f64>| x.map_or("N/A".to_string(), |v| format!("{v:.4}"));
    println!(
        "cases {} accuracy {:.4} sensitivity {} specificity {} auroc {}",
        m.total,
        m.accuracy,
        show(m.sensitivity),
        show(m.specificity),
        show(m.auroc)
    );
    Ok(Done { out, outputs: vec!["report.json".into(), "summary.csv".into(), "roc.csv".into()] })
}

fn stage_decompose(
    input: &Path,
    schedule: &ScaleSchedule,
    filter: FilterKind,
    conn: Option<Connectivity>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let path = volume_path(input);
    let v = io::read_volume(&path)?;
    let c = match conn {
        Some(c) => {
            c.check(&v).map_err(|e| CliError::Usage(format!("--connectivity: {e}")))?;
            c
        }
        None => Connectivity::for_ndim(v.ndim())?,
    };
    log::info!("decomposing {} at scales {:?}", path.display(), schedule.scales());
    let d = decompose(&v, schedule, filter, c)?;
    let original = std::fs::canonicalize(&path).with_context(|| path.display().to_string())?;
    let m = io::write_decomposition(out, &original, &d)?;
    let mut outputs: Vec<PathBuf> = m.files.into_iter().filter(|(k, _)| k != "original").map(|(_, p)| p).collect();
    outputs.push("manifest.json".into());
    Ok(outputs)
}

fn stage_extract(
    decomposition: Option<&Path>,
    bag: Option<&Path>,
    bounds: BoundsMode,
    task: Task,
    bag_id: &str,
    out: &Path,
) -> Result<usize> {
    let labels = match bag {
        Some(b) if b.join(BAG_LABELS).is_file() => Some(io::read_labels(&b.join(BAG_LABELS), &b.join(BAG_TABLE))?),
        Some(b) if decomposition.is_none() => {
            return Err(CliError::Input(format!("{}: missing", b.join(BAG_LABELS).display())).into())
        }
        _ => None,
    };
    let records = match (decomposition, &labels) {
        (None, Some(l)) => {
            let v = io::read_volume(&volume_path(bag.expect("labels come from a bag")))?;
            ground_truth_records(&v, l, bag_id, task)?
        }
        (Some(m), _) => {
            let d = io::read_decomposition(&manifest_path(m, "manifest.json"))?;
            if let Some(l) = &labels {
                if l.dims() != d.original.dims() {
                    return Err(CliError::Input("bag labels and decomposition differ in shape".into()).into());
                }
            }
            label_segments(&extract_segments(&d, bounds, bag_id)?, labels.as_ref(), task)?
        }
        (None, None) => return Err(CliError::Usage("nothing to extract from".into()).into()),
    };
    log::info!("{bag_id}: {} segments", records.len());
    io::write_jsonl(&out.join("segments.jsonl"), &records)?;
    Ok(records.len())
}

fn stage_predict(model: &Path, segments: &[PathBuf], out: &Path) -> Result<()> {
    let m = load_model(model)?;
    let records: Vec<SegmentRecord> = read_records(segments)?.into_iter().flat_map(|(_, r)| r).collect();
    let rows = predict_records(&m.model, &records)?;
    write_predictions(&out.join("predictions.csv"), &rows)?;
    Ok(())
}

fn stage_repack(
    segments: &[PathBuf],
    predictions: &Path,
    dims: &[usize],
    axis: Axis,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let records: Vec<SegmentRecord> = read_records(segments)?.into_iter().flat_map(|(_, r)| r).collect();
    let predicted: BTreeMap<String, usize> =
        read_predictions(predictions)?.into_iter().map(|r| (r.segment_id, r.pred)).collect();
    let map = repack_records(&records, &predicted, dims)?;
    let mut outputs = vec![PathBuf::from("repack.uxv")];
    io::write_grid(&out.join(&outputs[0]), &map)?;
    if map.ndim() == 3 {
        let images = verdict_projections(&map, axis)?;
        for (name, img) in ["very_unlikely", "unlikely", "likely"].iter().zip(images) {
            let file = PathBuf::from(format!("{name}_{}.pgm", axis.name()));
            io::write_bytes(&out.join(&file), &img.to_pgm())?;
            outputs.push(file);
        }
    }
    Ok(outputs)
}
