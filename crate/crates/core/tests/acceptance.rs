//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Run a subset with `cargo test -p uxpr --test acceptance -- 5 6`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uxpr::bagsim::{generate_phantom_pool, pack_bag, rotate_object, Bag, PackParams, PoolSpec};
use uxpr::classify::{ForestParams, ModelKind, Prediction};
use uxpr::eval::{
    bag_records, compute_metrics, lobo_evaluate, mann_whitney_auroc, roc_curve, trapezoid_area, CaseRecord,
    ClassifierSpec, EvalResult, SegmentSource,
};
use uxpr::extract::{default_schedule, BoundsMode, SegmentRecord};
use uxpr::repack::{repack_records, repack_votes, Axis, Vote};
use uxpr::sieve::{apply_filter, brute_force_sieve_1d, decompose, FilterKind, ScaleSchedule};
use uxpr::zones::{extremal_zones, flat_zones, ExtremumKind};
use uxpr::{Connectivity, Task, Volume};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sig(v: Vec<u8>) -> Volume {
    Volume::new(&[v.len()], v).unwrap()
}

fn oracle_mismatch(v: &Volume, s: usize) -> Option<String> {
    for k in FilterKind::ALL {
        let fast = apply_filter(v, s, k, Connectivity::Two).unwrap();
        let slow = brute_force_sieve_1d(v, s, k).unwrap();
        if fast != slow {
            return Some(format!("{:?} s={s} {k}: {:?} vs {:?}", v.data(), fast.data(), slow.data()));
        }
    }
    None
}

fn c1_oracle() -> Outcome {
    let mut count = 0;
    for len in 1..=10u32 {
        for code in 0..3usize.pow(len) {
            let v = sig((0..len).map(|i| (code / 3usize.pow(i) % 3) as u8).collect());
            for s in 1..=5 {
                if let Some(m) = oracle_mismatch(&v, s) {
                    return Err(m);
                }
            }
            count += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let len = rng.gen_range(1..=64);
        let levels = if i % 2 == 0 { 256 } else { rng.gen_range(2..=6) };
        let v = sig((0..len).map(|_| rng.gen_range(0..levels) as u8).collect());
        for s in [1, 2, 3, 4, 5, rng.gen_range(1..=64)] {
            if let Some(m) = oracle_mismatch(&v, s) {
                return Err(m);
            }
        }
    }
    Ok(format!("{count} exhaustive signals x 5 scales x 4 kinds and 1000 random signals exact"))
}

fn random_corpus() -> Vec<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..100)
        .map(|i| {
            let dims = if i == 0 { [32; 3] } else { [0; 3].map(|_| rng.gen_range(1..=32)) };
            let n: usize = dims.iter().product();
            let levels: u16 = if i % 3 == 0 { 256 } else { rng.gen_range(2..=16) };
            Volume::new(&dims, (0..n).map(|_| rng.gen_range(0..levels) as u8).collect()).unwrap()
        })
        .collect()
}

const CORPUS_SCALES: [usize; 5] = [2, 8, 64, 512, 4096];

fn c2_reconstruction(corpus: &[Volume]) -> Outcome {
    let sched = ScaleSchedule::new(CORPUS_SCALES.to_vec()).unwrap();
    for (i, v) in corpus.iter().enumerate() {
        let d = decompose(v, &sched, FilterKind::MFilter, Connectivity::Six).unwrap();
        if &d.reconstruct().unwrap() != v {
            return Err(format!("volume {i} {:?} does not reconstruct", v.dims()));
        }
    }
    Ok(format!("{} volumes reconstruct with zero error", corpus.len()))
}

fn extremum_count(v: &Volume, k: FilterKind) -> usize {
    let g = flat_zones(v, Connectivity::Six).unwrap();
    extremal_zones(&g)
        .into_iter()
        .filter(|&(_, e)| match k {
            FilterKind::Opening => e == ExtremumKind::Maximum,
            FilterKind::Closing => e == ExtremumKind::Minimum,
            _ => true,
        })
        .count()
}

fn c3_properties(corpus: &[Volume]) -> Outcome {
    let c = Connectivity::Six;
    let sched = ScaleSchedule::new(CORPUS_SCALES.to_vec()).unwrap();
    let mut violations = Vec::new();
    for (i, v) in corpus.iter().enumerate() {
        for k in FilterKind::ALL {
            let d = decompose(v, &sched, k, c).unwrap();
            let mut prev = extremum_count(v, k);
            for lp in &d.lowpass {
                let n = extremum_count(lp, k);
                if n > prev {
                    violations.push(format!("volume {i} {k}: extrema {prev} -> {n}"));
                }
                prev = n;
            }
            for &s in &CORPUS_SCALES {
                let once = apply_filter(v, s, k, c).unwrap();
                if apply_filter(&once, s, k, c).unwrap() != once {
                    violations.push(format!("volume {i} {k} s={s}: not idempotent"));
                }
                let g = flat_zones(&once, c).unwrap();
                for (z, e) in extremal_zones(&g) {
                    let removed = match k {
                        FilterKind::Opening => e == ExtremumKind::Maximum,
                        FilterKind::Closing => e == ExtremumKind::Minimum,
                        _ => true,
                    };
                    if removed && g.zones[z as usize].area <= s && g.zones.len() > 1 {
                        violations.push(format!("volume {i} {k} s={s}: extremum of area {}", g.zones[z as usize].area));
                    }
                }
            }
        }
        for &s in &CORPUS_SCALES {
            let o = apply_filter(v, s, FilterKind::Opening, c).unwrap();
            let cl = apply_filter(v, s, FilterKind::Closing, c).unwrap();
            let ordered = o.data().iter().zip(v.data()).zip(cl.data()).all(|((a, b), c)| a <= b && b <= c);
            if !ordered {
                violations.push(format!("volume {i} s={s}: opening <= f <= closing fails"));
            }
        }
    }
    match violations.first() {
        None => Ok(format!("{} volumes x 4 kinds x {} scales, zero violations", corpus.len(), CORPUS_SCALES.len())),
        Some(v) => Err(format!("{} violations, first: {v}", violations.len())),
    }
}

fn c4_schedule() -> Outcome {
    let s = default_schedule(5, 4000, 2_800_000).unwrap();
    let want = [4000.0, 20575.0, 105830.0, 544357.0, 2800000.0];
    let worst = s.scales().iter().zip(want).map(|(&g, w)| (g as f64 - w).abs() / w).fold(0.0, f64::max);
    check(worst < 1e-3, format!("{:?}, worst relative error {worst:.2e}", s.scales()))
}

struct Corpus {
    bags: Vec<(String, Bag)>,
}

fn corpus() -> Corpus {
    let pool = generate_phantom_pool(&PoolSpec::new(10, 20), 7).unwrap();
    let params = PackParams::default();
    let bags = (0..20).map(|b| (format!("bag{b:02}"), pack_bag(&pool, &params, 1000 + b).unwrap())).collect();
    Corpus { bags }
}

fn records(c: &Corpus, source: &SegmentSource) -> Vec<(String, Vec<SegmentRecord>)> {
    c.bags.iter().map(|(id, bag)| (id.clone(), bag_records(bag, id, source, Task::TwoClass).unwrap())).collect()
}

fn spec(kind: ModelKind) -> ClassifierSpec {
    ClassifierSpec { kind, forest: ForestParams { seed: 11, ..Default::default() } }
}

fn summary(r: &EvalResult) -> String {
    let m = &r.metrics;
    let f = |x: Option<f64>| x.map_or("N/A".into(), |v| format!("{v:.3}"));
    format!(
        "acc {:.3} ({} errors of {}), sens {}, spec {}, auroc {}",
        m.accuracy,
        m.errors,
        m.total,
        f(m.sensitivity),
        f(m.specificity),
        f(m.auroc)
    )
}

fn c5_ground_truth(c: &Corpus) -> Outcome {
    let gt = records(c, &SegmentSource::GroundTruth);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, kind) in [("1-NN", ModelKind::Knn), ("forest", ModelKind::Forest)] {
        let r = lobo_evaluate(&gt, Task::TwoClass, &spec(kind)).unwrap();
        ok &= r.metrics.accuracy >= 0.90 && r.metrics.sensitivity.unwrap_or(0.0) >= 0.85;
        parts.push(format!("{name}: {}", summary(&r)));
    }
    check(ok, parts.join("; "))
}

fn c6_sieve_path(c: &Corpus) -> Outcome {
    let source = SegmentSource::Sieve {
        schedule: default_schedule(5, 8, 16384).unwrap(),
        filter: FilterKind::MFilter,
        bounds: BoundsMode::Bracketing,
    };
    let segs = records(c, &source);
    let r = lobo_evaluate(&segs, Task::TwoClass, &spec(ModelKind::Forest)).unwrap();
    let predicted: BTreeMap<String, usize> =
        r.records.iter().map(|x| (x.segment.clone(), x.prediction.predicted)).collect();
    let (mut covered, mut total) = (0usize, 0usize);
    for ((_, bag), (_, recs)) in c.bags.iter().zip(&segs) {
        let map = repack_records(recs, &predicted, bag.volume.dims()).unwrap();
        for (i, &l) in bag.labels.grid.data().iter().enumerate() {
            if l != 0 && bag.labels.table.get(l).unwrap().electrical {
                total += 1;
                covered += (map.get(i) >= 1) as usize;
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    let auroc = r.metrics.auroc.unwrap_or(0.0);
    check(
        auroc >= 0.85 && coverage >= 0.80,
        format!("{}; repack coverage {coverage:.3} of {total} voxels", summary(&r)),
    )
}

fn c7_repack() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let dims = [0; 3].map(|_| rng.gen_range(1..=16));
        let n: usize = dims.iter().product();
        let segs: Vec<(usize, Vec<usize>, bool)> = (0..rng.gen_range(1..=10))
            .map(|_| {
                let len = rng.gen_range(1..=n.min(60));
                (rng.gen_range(2..=5), (0..len).map(|_| rng.gen_range(0..n)).collect(), rng.gen_bool(0.5))
            })
            .collect();
        let map =
            repack_votes(segs.iter().map(|s| Vote { channel: s.0, voxels: &s.1, electrical: s.2 }), &dims).unwrap();
        for i in 0..n {
            let mut chans: Vec<usize> = segs.iter().filter(|s| s.2 && s.1.contains(&i)).map(|s| s.0).collect();
            chans.sort();
            chans.dedup();
            if map.get(i) != chans.len().min(2) as u8 {
                return Err(format!("case {case} voxel {i}: {} vs {} channels", map.get(i), chans.len()));
            }
        }
    }
    let two = [0usize];
    let map = repack_votes(
        [
            Vote { channel: 2, voxels: &two, electrical: true },
            Vote { channel: 3, voxels: &[0, 1], electrical: true },
            Vote { channel: 2, voxels: &[2], electrical: true },
            Vote { channel: 2, voxels: &[2], electrical: true },
        ],
        &[4],
    )
    .unwrap();
    check(map.data() == [2, 1, 1, 0], format!("100 random instances match; rules give {:?}", map.data()))
}

fn case(truth: usize, p: f64) -> CaseRecord {
    CaseRecord {
        segment: String::new(),
        bag: String::new(),
        truth,
        prediction: Prediction::from_weights(vec![1.0 - p, p]).unwrap(),
    }
}

fn c8_metrics() -> Outcome {
    let hand = compute_metrics(&[case(1, 0.9), case(1, 0.4), case(0, 0.6), case(0, 0.2)]).unwrap();
    if hand.auroc != Some(0.75) {
        return Err(format!("hand case AUROC {:?}", hand.auroc));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..80);
        let mut rs: Vec<CaseRecord> = (0..n)
            .map(|_| {
                case(rng.gen_range(0..2), if rng.gen_bool(0.3) { rng.gen_range(0..5) as f64 / 4.0 } else { rng.gen() })
            })
            .collect();
        rs[0].truth = 0;
        rs[1].truth = 1;
        let mw =
            mann_whitney_auroc(&rs.iter().map(|r| (r.prediction.p_electrical(), r.truth == 1)).collect::<Vec<_>>())
                .unwrap();
        worst = worst.max((trapezoid_area(&roc_curve(&rs).unwrap()) - mw).abs());
        let m = compute_metrics(&rs).unwrap();
        let identities = m.tp + m.fn_ + m.tn + m.fp == m.total
            && m.errors == m.fp + m.fn_
            && m.total - m.errors == m.tp + m.tn
            && m.accuracy == (m.tp + m.tn) as f64 / m.total as f64
            && m.sensitivity == Some(m.tp as f64 / (m.tp + m.fn_) as f64)
            && m.specificity == Some(m.tn as f64 / (m.tn + m.fp) as f64);
        if !identities {
            return Err(format!("confusion identities fail for {m:?}"));
        }
    }
    check(worst <= 1e-12, format!("hand AUROC 0.75; max |trapezoid - Mann-Whitney| = {worst:.1e}"))
}

fn c9_bagsim() -> Outcome {
    let pool = generate_phantom_pool(&PoolSpec::new(10, 20), 7).unwrap();
    let params = PackParams::default();
    let mut placed = 0;
    for seed in 0..100 {
        let bag = pack_bag(&pool, &params, seed).unwrap();
        let [x, y, z] = params.dims;
        let mut owner = vec![0u16; x * y * z];
        for p in &bag.placed {
            let r = rotate_object(&pool[p.object], p.angles);
            let od = r.volume.dims();
            if (0..3).any(|a| p.offset[a] + od[a] > params.dims[a]) {
                return Err(format!("bag {seed}: {} out of bounds", p.name));
            }
            for i in (0..r.volume.len()).filter(|&i| r.volume.get(i) != 0) {
                let c = r.volume.coord(i);
                let j = (c[0] + p.offset[0]) + x * ((c[1] + p.offset[1]) + y * (c[2] + p.offset[2]));
                if owner[j] != 0 {
                    return Err(format!("bag {seed}: {} overlaps label {}", p.name, owner[j]));
                }
                owner[j] = p.label;
            }
        }
        if owner != bag.labels.grid.data() {
            return Err(format!("bag {seed}: label volume differs from the placements"));
        }
        if pack_bag(&pool, &params, seed).unwrap() != bag {
            return Err(format!("bag {seed}: regeneration differs"));
        }
        placed += bag.placed.len();
    }
    Ok(format!("100 bags, {placed} objects, zero overlap, in bounds, bit-identical regeneration"))
}

fn peak_rss_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

fn c10_performance() -> Outcome {
    let sched = ScaleSchedule::new(vec![4000, 20575, 105830, 544357, 2800000]).unwrap();
    let cube = |side: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        Volume::new(&[side; 3], (0..side * side * side).map(|_| rng.gen()).collect()).unwrap()
    };
    let (small, large) = (cube(64), cube(128));
    let time = |v: &Volume| {
        let t = Instant::now();
        decompose(v, &sched, FilterKind::MFilter, Connectivity::Six).unwrap();
        t.elapsed()
    };
    let mut ts: Vec<Duration> = Vec::new();
    let mut tl: Vec<Duration> = Vec::new();
    for _ in 0..5 {
        ts.push(time(&small));
        tl.push(time(&large));
        ts.push(time(&small));
    }
    let median = |v: &mut Vec<Duration>| {
        v.sort();
        v[v.len() / 2].as_secs_f64()
    };
    let first_large = tl[0].as_secs_f64();
    let (ms, ml) = (median(&mut ts), median(&mut tl));
    let ratio = ml / ms;
    let rss = peak_rss_mb();
    let ok = first_large < 120.0 && ratio <= 12.0 && rss.is_none_or(|r| r < 2048.0);
    check(
        ok,
        format!(
            "128^3 {ml:.2}s median (first {first_large:.2}s), 64^3 {ms:.3}s, ratio {ratio:.2}, peak RSS {}",
            rss.map_or("unknown".into(), |r| format!("{r:.0} MB"))
        ),
    )
}

fn c11_flattened(c: &Corpus) -> Outcome {
    let learner = spec(ModelKind::Forest);
    let three = lobo_evaluate(&records(c, &SegmentSource::GroundTruth), Task::TwoClass, &learner).unwrap();
    let two =
        lobo_evaluate(&records(c, &SegmentSource::Flattened { axis: Axis::Z }), Task::TwoClass, &learner).unwrap();
    let (s3, s2) = (three.metrics.sensitivity.unwrap_or(0.0), two.metrics.sensitivity.unwrap_or(0.0));
    check(s2 < s3, format!("sensitivity 2D {s2:.3} vs 3D {s3:.3}"))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if !run(n) {
            return;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {n:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                println!("FAIL criterion {n:>2} {name}: {d} [{secs:.1}s]");
                failed.push(n);
            }
        }
    };
    // Timing runs first, before anything else has grown the heap.
    report(10, "performance", &c10_performance);
    report(1, "sieve oracle", &c1_oracle);
    let vols = random_corpus();
    report(2, "reconstruction", &|| c2_reconstruction(&vols));
    report(3, "sieve properties", &|| c3_properties(&vols));
    report(4, "scale schedule", &c4_schedule);
    let needs_corpus = [5, 6, 11].iter().any(|&n| run(n));
    let bags = needs_corpus.then(corpus);
    if let Some(c) = &bags {
        report(5, "ground-truth classification", &|| c5_ground_truth(c));
        report(6, "sieve segmentation path", &|| c6_sieve_path(c));
    }
    report(7, "repack voting", &c7_repack);
    report(8, "metrics", &c8_metrics);
    report(9, "bag simulation", &c9_bagsim);
    if let Some(c) = &bags {
        report(11, "2D vs 3D", &|| c11_flattened(c));
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
