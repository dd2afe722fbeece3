//! Phantom objects and simulated bags.
//!
//! Objects are small volumes whose nonzero voxels form the support. Bags
//! are built by drawing objects from a pool, rotating each by random Euler
//! angles and dropping it at a random offset where it overlaps nothing.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};
use crate::io;
use crate::labels::{DeviceClass, LabelEntry, LabelTable, LabelVolume};

/// Electrical device kinds and the five-class group each falls in.
pub const ELECTRICAL_KINDS: [(&str, DeviceClass); 6] = [
    ("phone", DeviceClass::MobilePhone),
    ("hard_drive", DeviceClass::HardDrive),
    ("laptop", DeviceClass::Laptop),
    ("radio", DeviceClass::OtherElectrical),
    ("camera", DeviceClass::OtherElectrical),
    ("charger", DeviceClass::OtherElectrical),
];

pub const NON_ELECTRICAL_KINDS: [&str; 5] = ["bottle", "book", "shoe", "towel", "tin"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub electrical: usize,
    pub non_electrical: usize,
    /// Inclusive bounds on each side of an unrotated object.
    #[serde(default = "default_min_extent")]
    pub min_extent: usize,
    #[serde(default = "default_max_extent")]
    pub max_extent: usize,
}

fn default_min_extent() -> usize {
    7
}

fn default_max_extent() -> usize {
    13
}

impl PoolSpec {
    pub fn new(electrical: usize, non_electrical: usize) -> Self {
        Self { electrical, non_electrical, min_extent: default_min_extent(), max_extent: default_max_extent() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolObject {
    pub name: String,
    pub kind: String,
    pub class: DeviceClass,
    pub electrical: bool,
    /// Zero outside the object.
    pub volume: Volume,
}

impl PoolObject {
    pub fn support_size(&self) -> usize {
        self.volume.data().iter().filter(|&&v| v != 0).count()
    }
}

fn fill_box(g: &mut Volume, lo: [usize; 3], hi: [usize; 3], value: u8) {
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let i = g.index(&[x, y, z]);
                g.data_mut()[i] = value;
            }
        }
    }
}

fn fill_ellipsoid(g: &mut Volume, lo: [usize; 3], hi: [usize; 3], value: u8) {
    let c: Vec<f64> = (0..3).map(|k| (lo[k] + hi[k]) as f64 / 2.0 - 0.5).collect();
    let r: Vec<f64> = (0..3).map(|k| (hi[k] - lo[k]) as f64 / 2.0).collect();
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let p = [x as f64, y as f64, z as f64];
                let q: f64 = (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum();
                if q <= 1.0 {
                    let i = g.index(&[x, y, z]);
                    g.data_mut()[i] = value;
                }
            }
        }
    }
}

fn random_dims(rng: &mut ChaCha8Rng, spec: &PoolSpec) -> [usize; 3] {
    [0; 3].map(|_| rng.gen_range(spec.min_extent..=spec.max_extent))
}

fn electrical_phantom(rng: &mut ChaCha8Rng, spec: &PoolSpec) -> Volume {
    let d = random_dims(rng, spec);
    let mut g = Volume::filled(&d, 0).unwrap();
    fill_box(&mut g, [0; 3], d, rng.gen_range(130..=170));
    // Components live strictly inside the casing.
    let inner = d.map(|n| n - 2);
    for _ in 0..rng.gen_range(1..=3) {
        let size = inner.map(|n| rng.gen_range(1..=(n / 2).max(1)));
        let lo: [usize; 3] = std::array::from_fn(|k| 1 + rng.gen_range(0..=inner[k] - size[k]));
        let hi = std::array::from_fn(|k| lo[k] + size[k]);
        fill_box(&mut g, lo, hi, rng.gen_range(200..=255));
    }
    let axis = rng.gen_range(0..3);
    let mut at: [usize; 3] = std::array::from_fn(|k| 1 + rng.gen_range(0..inner[k]));
    let value = rng.gen_range(200..=255);
    for t in 1..=inner[axis] {
        at[axis] = t;
        let i = g.index(&at);
        g.data_mut()[i] = value;
    }
    g
}

fn non_electrical_phantom(rng: &mut ChaCha8Rng, spec: &PoolSpec) -> Volume {
    let d = random_dims(rng, spec);
    let mut g = Volume::filled(&d, 0).unwrap();
    let base = rng.gen_range(30..=110);
    let ellipsoid = rng.gen_bool(0.5);
    let fill = if ellipsoid { fill_ellipsoid } else { fill_box };
    fill(&mut g, [0; 3], d, base);
    if rng.gen_bool(0.5) {
        let lo = d.map(|n| n / 4);
        let hi: [usize; 3] = std::array::from_fn(|k| d[k] - lo[k]);
        fill(&mut g, lo, hi, base + rng.gen_range(5..=10));
    }
    g
}

/// Deterministic phantom pool; electrical objects come first.
pub fn generate_phantom_pool(spec: &PoolSpec, seed: u64) -> Result<Vec<PoolObject>> {
    if spec.min_extent < 5 || spec.min_extent > spec.max_extent {
        return Err(Error::invalid(format!(
            "object extents must satisfy 5 <= min <= max, got {}..={}",
            spec.min_extent, spec.max_extent
        )));
    }
    let mut out = Vec::with_capacity(spec.electrical + spec.non_electrical);
    for i in 0..spec.electrical + spec.non_electrical {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let electrical = i < spec.electrical;
        let (kind, class, volume) = if electrical {
            let (kind, class) = ELECTRICAL_KINDS[i % ELECTRICAL_KINDS.len()];
            (kind, class, electrical_phantom(&mut rng, spec))
        } else {
            let j = i - spec.electrical;
            (
                NON_ELECTRICAL_KINDS[j % NON_ELECTRICAL_KINDS.len()],
                DeviceClass::NonElectrical,
                non_electrical_phantom(&mut rng, spec),
            )
        };
        out.push(PoolObject { name: format!("{kind}_{i:03}"), kind: kind.to_string(), class, electrical, volume });
    }
    Ok(out)
}

type Mat = [[f64; 3]; 3];

/// `Rz(a) * Ry(b) * Rx(c)`.
fn rotation(angles: [f64; 3]) -> Mat {
    let [a, b, c] = angles;
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    [
        [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
        [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
        [-sb, cb * sc, cb * cc],
    ]
}

fn apply(m: &Mat, v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn transpose(m: &Mat) -> Mat {
    std::array::from_fn(|r| std::array::from_fn(|c| m[c][r]))
}

/// Rotates about the object centre with nearest-neighbour resampling and
/// crops to the support.
pub fn rotate_object(o: &PoolObject, angles: [f64; 3]) -> PoolObject {
    let d = o.volume.dims();
    let d = [d[0], d.get(1).copied().unwrap_or(1), d.get(2).copied().unwrap_or(1)];
    let m = rotation(angles);
    let inv = transpose(&m);
    let half: [f64; 3] = d.map(|n| n as f64 / 2.0);
    let mut extent = [0f64; 3];
    for corner in 0..8 {
        let v = std::array::from_fn(|k| if corner >> k & 1 == 1 { half[k] } else { -half[k] });
        let r = apply(&m, v);
        for k in 0..3 {
            extent[k] = extent[k].max(r[k].abs());
        }
    }
    let nd: [usize; 3] = extent.map(|e| ((2.0 * e - 1e-9).ceil() as usize).max(1));
    let src_c: [f64; 3] = d.map(|n| (n as f64 - 1.0) / 2.0);
    let dst_c: [f64; 3] = nd.map(|n| (n as f64 - 1.0) / 2.0);
    let mut out = Volume::filled(&nd, 0).unwrap();
    for z in 0..nd[2] {
        for y in 0..nd[1] {
            for x in 0..nd[0] {
                let p = [x as f64 - dst_c[0], y as f64 - dst_c[1], z as f64 - dst_c[2]];
                let s = apply(&inv, p);
                let q: [f64; 3] = std::array::from_fn(|k| (s[k] + src_c[k] + 1e-9).round());
                if (0..3).all(|k| q[k] >= 0.0 && q[k] < d[k] as f64) {
                    let v = o.volume.get(o.volume.index(&[q[0] as usize, q[1] as usize, q[2] as usize]));
                    let i = out.index(&[x, y, z]);
                    out.data_mut()[i] = v;
                }
            }
        }
    }
    let volume = crop(&out).unwrap_or_else(|| o.volume.clone());
    PoolObject { volume, ..o.clone() }
}

fn crop(v: &Volume) -> Option<Volume> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &val) in v.data().iter().enumerate() {
        if val != 0 {
            let c = v.coord(i);
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k] + 1);
            }
        }
    }
    if lo[0] == usize::MAX {
        return None;
    }
    let nd: [usize; 3] = std::array::from_fn(|k| hi[k] - lo[k]);
    let mut out = Volume::filled(&nd, 0).unwrap();
    for z in 0..nd[2] {
        for y in 0..nd[1] {
            for x in 0..nd[0] {
                let i = out.index(&[x, y, z]);
                out.data_mut()[i] = v.get(v.index(&[x + lo[0], y + lo[1], z + lo[2]]));
            }
        }
    }
    Some(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackParams {
    pub object_count: usize,
    pub attempts: usize,
    pub dims: [usize; 3],
}

impl Default for PackParams {
    fn default() -> Self {
        Self { object_count: 20, attempts: 5, dims: [64, 64, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Index into the pool (or the explicit object list).
    pub object: usize,
    pub name: String,
    pub label: u16,
    pub angles: [f64; 3],
    pub offset: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub volume: Volume,
    pub labels: LabelVolume,
    pub placed: Vec<Placement>,
    pub seed: u64,
}

/// Draws `object_count` pool objects (without replacement unless the pool
/// is smaller) and packs them.
pub fn pack_bag(pool: &[PoolObject], params: &PackParams, seed: u64) -> Result<Bag> {
    if pool.is_empty() {
        return Err(Error::invalid("object pool is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if pool.len() >= params.object_count {
        sample(&mut rng, pool.len(), params.object_count).into_vec()
    } else {
        (0..params.object_count).map(|_| rng.gen_range(0..pool.len())).collect()
    };
    pack_objects(pool, &picks, params, seed)
}

/// Packs the given pool indices in order.
pub fn pack_objects(pool: &[PoolObject], picks: &[usize], params: &PackParams, seed: u64) -> Result<Bag> {
    if params.dims.contains(&0) {
        return Err(Error::invalid("bag dimensions must be positive"));
    }
    let dims = params.dims;
    let mut volume = Volume::filled(&dims, 0)?;
    let mut ids = Grid::<u16>::filled(&dims, 0)?;
    let mut table = LabelTable::default();
    let mut placed = Vec::new();
    for (k, &pick) in picks.iter().enumerate() {
        let o = pool.get(pick).ok_or_else(|| Error::invalid(format!("no pool object {pick}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let angles = [0; 3].map(|_| rng.gen_range(0.0..TAU));
        let r = rotate_object(o, angles);
        let od = r.volume.dims().to_vec();
        if (0..3).any(|a| od[a] > dims[a]) {
            continue;
        }
        let voxels: Vec<([usize; 3], u8)> = (0..r.volume.len())
            .filter(|&i| r.volume.get(i) != 0)
            .map(|i| (r.volume.coord(i), r.volume.get(i)))
            .collect();
        for _ in 0..params.attempts {
            let offset: [usize; 3] = std::array::from_fn(|a| rng.gen_range(0..=dims[a] - od[a]));
            let at = |c: [usize; 3]| c[0] + offset[0] + dims[0] * (c[1] + offset[1] + dims[1] * (c[2] + offset[2]));
            if voxels.iter().any(|&(c, _)| ids.get(at(c)) != 0) {
                continue;
            }
            let label = placed.len() as u16 + 1;
            for &(c, v) in &voxels {
                let i = at(c);
                ids.data_mut()[i] = label;
                volume.data_mut()[i] = v;
            }
            table.labels.push(LabelEntry {
                id: label,
                name: o.name.clone(),
                class: o.class,
                electrical: o.electrical,
                kind: Some(o.kind.clone()),
            });
            placed.push(Placement { object: pick, name: o.name.clone(), label, angles, offset });
            break;
        }
    }
    Ok(Bag { volume, labels: LabelVolume::new(ids, table)?, placed, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifestEntry {
    pub name: String,
    pub kind: String,
    pub class: DeviceClass,
    pub electrical: bool,
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub seed: Option<u64>,
    pub spec: Option<PoolSpec>,
    pub objects: Vec<PoolManifestEntry>,
}

/// Writes `objects/<name>.uxv` and `pool.json` under `dir`.
pub fn save_pool(dir: &Path, pool: &[PoolObject], spec: Option<&PoolSpec>, seed: Option<u64>) -> Result<PathBuf> {
    let mut objects = Vec::new();
    for o in pool {
        let file = PathBuf::from("objects").join(format!("{}.uxv", o.name));
        io::write_grid(&dir.join(&file), &o.volume)?;
        objects.push(PoolManifestEntry {
            name: o.name.clone(),
            kind: o.kind.clone(),
            class: o.class,
            electrical: o.electrical,
            file,
        });
    }
    let path = dir.join("pool.json");
    io::write_json(&path, &PoolManifest { seed, spec: spec.cloned(), objects })?;
    Ok(path)
}

pub fn load_pool(manifest: &Path) -> Result<Vec<PoolObject>> {
    let m: PoolManifest = io::read_json(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new(""));
    m.objects
        .into_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let volume = io::read_volume(&path)?;
            if volume.ndim() != 3 || volume.data().iter().all(|&v| v == 0) {
                return Err(Error::format(&path, 0, "pool object must be a 3D volume with a non-empty support"));
            }
            Ok(PoolObject { name: e.name, kind: e.kind, class: e.class, electrical: e.electrical, volume })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagManifest {
    pub seed: u64,
    pub params: PackParams,
    pub pool: Option<PathBuf>,
    pub rotation: String,
    pub selection: String,
    pub placements: Vec<Placement>,
}

pub const BAG_VOLUME: &str = "volume.uxv";
pub const BAG_LABELS: &str = "labels.uxv";
pub const BAG_TABLE: &str = "labels.json";
pub const BAG_MANIFEST: &str = "bag.json";

pub fn save_bag(dir: &Path, bag: &Bag, params: &PackParams, pool: Option<&Path>) -> Result<()> {
    io::write_grid(&dir.join(BAG_VOLUME), &bag.volume)?;
    io::write_labels(&dir.join(BAG_LABELS), &dir.join(BAG_TABLE), &bag.labels)?;
    let m = BagManifest {
        seed: bag.seed,
        params: params.clone(),
        pool: pool.map(Path::to_path_buf),
        rotation: "euler zyx, uniform [0, 2pi), nearest neighbour".into(),
        selection: "uniform without replacement".into(),
        placements: bag.placed.clone(),
    };
    io::write_json(&dir.join(BAG_MANIFEST), &m)
}

pub fn load_bag(dir: &Path) -> Result<Bag> {
    let volume = io::read_volume(&dir.join(BAG_VOLUME))?;
    let labels = io::read_labels(&dir.join(BAG_LABELS), &dir.join(BAG_TABLE))?;
    if volume.dims() != labels.dims() {
        return Err(Error::DimensionMismatch(format!("{}: volume and labels differ in shape", dir.display())));
    }
    let m: BagManifest = io::read_json(&dir.join(BAG_MANIFEST))?;
    Ok(Bag { volume, labels, placed: m.placements, seed: m.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn object(dims: &[usize], data: Vec<u8>) -> PoolObject {
        PoolObject {
            name: "o".into(),
            kind: "o".into(),
            class: DeviceClass::NonElectrical,
            electrical: false,
            volume: Volume::new(dims, data).unwrap(),
        }
    }

    #[test]
    fn pool_counts_and_determinism() {
        let spec = PoolSpec::new(10, 20);
        let pool = generate_phantom_pool(&spec, 7).unwrap();
        assert_eq!(pool.len(), 30);
        assert_eq!(pool.iter().filter(|o| o.electrical).count(), 10);
        assert_eq!(pool, generate_phantom_pool(&spec, 7).unwrap());
        for o in &pool {
            let max = *o.volume.data().iter().max().unwrap();
            assert_eq!(max >= 200, o.electrical, "{}", o.name);
            assert!(o.support_size() > 0);
        }
        assert!(generate_phantom_pool(&PoolSpec::new(0, 0), 7).unwrap().is_empty());
    }

    #[test]
    fn identity_and_quarter_turn() {
        let o = object(&[2, 3, 2], (1..=12).collect());
        assert_eq!(rotate_object(&o, [0.0; 3]), o);
        let rod = object(&[1, 1, 3], vec![5, 6, 7]);
        let r = rotate_object(&rod, [0.0, FRAC_PI_2, 0.0]);
        assert_eq!(r.volume.dims(), &[3, 1, 1]);
        let mut vals = r.volume.data().to_vec();
        vals.sort();
        assert_eq!(vals, vec![5, 6, 7]);
        let flat = object(&[3, 1, 1], vec![5, 6, 7]);
        assert_eq!(rotate_object(&flat, [FRAC_PI_2, 0.0, 0.0]).volume.dims(), &[1, 3, 1]);
    }

    #[test]
    fn rotated_support_stays_bounded() {
        let pool = generate_phantom_pool(&PoolSpec::new(3, 3), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for o in &pool {
            let bound = (3f64.sqrt() * *o.volume.dims().iter().max().unwrap() as f64).ceil() as usize;
            for _ in 0..5 {
                let r = rotate_object(o, [0; 3].map(|_| rng.gen_range(0.0..TAU)));
                assert!(r.support_size() > 0);
                assert!(r.volume.dims().iter().all(|&n| n <= bound));
                assert!(r.volume.data().iter().all(|v| *v == 0 || o.volume.data().contains(v)));
            }
        }
    }

    #[test]
    fn bags_are_disjoint_and_reproducible() {
        let pool = generate_phantom_pool(&PoolSpec::new(4, 8), 3).unwrap();
        let params = PackParams { object_count: 10, attempts: 5, dims: [40, 40, 40] };
        let bag = pack_bag(&pool, &params, 11).unwrap();
        assert_eq!(bag, pack_bag(&pool, &params, 11).unwrap());
        let mut expected = 0;
        for p in &bag.placed {
            let r = rotate_object(&pool[p.object], p.angles);
            expected += r.support_size();
        }
        assert_eq!(bag.labels.grid.data().iter().filter(|&&l| l != 0).count(), expected);
        let mut names: Vec<_> = bag.placed.iter().map(|p| p.object).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), bag.placed.len());
    }

    #[test]
    fn crowded_bag_skips_objects() {
        let big = object(&[4, 4, 4], vec![9; 64]);
        let params = PackParams { object_count: 5, attempts: 5, dims: [4, 4, 4] };
        let bag = pack_objects(&[big], &[0, 0, 0], &params, 0).unwrap();
        assert!(bag.placed.len() < 3);
    }

    #[test]
    fn pool_and_bag_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PoolSpec::new(2, 2);
        let pool = generate_phantom_pool(&spec, 5).unwrap();
        let manifest = save_pool(dir.path(), &pool, Some(&spec), Some(5)).unwrap();
        assert_eq!(load_pool(&manifest).unwrap(), pool);
        let params = PackParams { object_count: 3, attempts: 5, dims: [32, 32, 32] };
        let bag = pack_bag(&pool, &params, 9).unwrap();
        save_bag(&dir.path().join("bag"), &bag, &params, Some(&manifest)).unwrap();
        assert_eq!(load_bag(&dir.path().join("bag")).unwrap(), bag);
    }
}
