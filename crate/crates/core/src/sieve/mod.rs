//! Scale-space sieve: extrema-removal filters over flat zones, the cascaded
//! decomposition into low-pass volumes and signed channels, and exact
//! reconstruction.
//!
//! A filter at scale `s` removes every extremal flat zone whose voxel count
//! is at most `s`. Each removal sets the zone to the nearest neighbouring
//! value (the largest neighbour for a maximum, the smallest for a minimum),
//! which merges it into that neighbour; the process repeats until no such
//! extremum is left. Only values already present are ever written, so the
//! filters never invent intensities.

mod area;
pub mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Connectivity, SignedVolume, Volume};
use area::{AreaFilter, Pass};

pub use oracle::brute_force_sieve_1d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterKind {
    /// Removes maxima.
    #[serde(rename = "o")]
    Opening,
    /// Removes minima.
    #[serde(rename = "c")]
    Closing,
    /// Opening then closing at the same scale.
    #[serde(rename = "m")]
    MFilter,
    /// Closing then opening at the same scale.
    #[serde(rename = "n")]
    NFilter,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] =
        [FilterKind::Opening, FilterKind::Closing, FilterKind::MFilter, FilterKind::NFilter];

    fn passes(self) -> &'static [Pass] {
        match self {
            FilterKind::Opening => &[Pass::Open],
            FilterKind::Closing => &[Pass::Close],
            FilterKind::MFilter => &[Pass::Open, Pass::Close],
            FilterKind::NFilter => &[Pass::Close, Pass::Open],
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FilterKind::Opening => "o",
            FilterKind::Closing => "c",
            FilterKind::MFilter => "m",
            FilterKind::NFilter => "n",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "o" | "open" | "opening" => Ok(FilterKind::Opening),
            "c" | "close" | "closing" => Ok(FilterKind::Closing),
            "m" | "m_filter" | "m-filter" => Ok(FilterKind::MFilter),
            "n" | "n_filter" | "n-filter" => Ok(FilterKind::NFilter),
            other => Err(Error::invalid(format!("unknown filter kind {other:?}"))),
        }
    }
}

/// Strictly increasing positive scales (voxel counts).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ScaleSchedule(Vec<usize>);

impl ScaleSchedule {
    pub fn new(scales: Vec<usize>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::invalid("scale schedule is empty"));
        }
        if scales[0] < 1 {
            return Err(Error::invalid("scales must be at least 1"));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("scales must be strictly increasing: {scales:?}")));
        }
        Ok(Self(scales))
    }

    pub fn scales(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Scale `S_n` for 1-based `n`.
    pub fn scale(&self, n: usize) -> usize {
        self.0[n - 1]
    }
}

impl TryFrom<Vec<usize>> for ScaleSchedule {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScaleSchedule> for Vec<usize> {
    fn from(s: ScaleSchedule) -> Self {
        s.0
    }
}

/// Applies one sieve filter at `scale`.
pub fn apply_filter(v: &Volume, scale: usize, kind: FilterKind, c: Connectivity) -> Result<Volume> {
    c.check(v)?;
    if scale < 1 {
        return Err(Error::invalid("scale must be at least 1"));
    }
    let mut out = v.clone();
    let mut filter = AreaFilter::new(v.dims());
    for &pass in kind.passes() {
        filter.run(out.data_mut(), pass, scale);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SieveDecomposition {
    pub original: Volume,
    /// `lowpass[n-1]` is the output at scale `S_n`.
    pub lowpass: Vec<Volume>,
    /// `channels_signed[n-1] = f_{S_{n-1}} - f_{S_n}` with `f_{S_0}` the original.
    pub channels_signed: Vec<SignedVolume>,
    pub schedule: ScaleSchedule,
    pub filter: FilterKind,
}

impl SieveDecomposition {
    /// Final low-pass plus every signed channel.
    pub fn reconstruct(&self) -> Result<Volume> {
        let last = self.lowpass.last().expect("non-empty schedule");
        let mut acc: Vec<i32> = last.data().iter().map(|&v| v as i32).collect();
        for ch in &self.channels_signed {
            for (a, &c) in acc.iter_mut().zip(ch.data()) {
                *a += c as i32;
            }
        }
        let data = acc
            .into_iter()
            .map(|v| u8::try_from(v).map_err(|_| Error::Invariant(format!("reconstructed value {v} out of range"))))
            .collect::<Result<Vec<u8>>>()?;
        Volume::new(last.dims(), data)
    }

    pub fn channel_count(&self) -> usize {
        self.channels_signed.len()
    }
}

fn difference(a: &Volume, b: &Volume) -> SignedVolume {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x as i16 - y as i16).collect();
    SignedVolume::new(a.dims(), data).expect("shape preserved")
}

/// Cascaded decomposition `f_{S_n} = filter_{S_n}(f_{S_{n-1}})`.
pub fn decompose(
    v: &Volume,
    schedule: &ScaleSchedule,
    kind: FilterKind,
    c: Connectivity,
) -> Result<SieveDecomposition> {
    c.check(v)?;
    let mut filter = AreaFilter::new(v.dims());
    let mut lowpass: Vec<Volume> = Vec::with_capacity(schedule.len());
    let mut channels = Vec::with_capacity(schedule.len());
    for &scale in schedule.scales() {
        let mut next = lowpass.last().unwrap_or(v).clone();
        for &pass in kind.passes() {
            filter.run(next.data_mut(), pass, scale);
        }
        channels.push(difference(lowpass.last().unwrap_or(v), &next));
        lowpass.push(next);
    }
    Ok(SieveDecomposition {
        original: v.clone(),
        lowpass,
        channels_signed: channels,
        schedule: schedule.clone(),
        filter: kind,
    })
}

/// `|f_{S_n} - f_{S_{n-1}}|` for `2 <= n <= N`.
pub fn abs_channel(d: &SieveDecomposition, n: usize) -> Result<Volume> {
    let count = d.channel_count();
    if n < 2 || n > count {
        return Err(Error::invalid(format!("channel index {n} outside 2..={count}")));
    }
    Ok(d.channels_signed[n - 1].map(|c| c.unsigned_abs() as u8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zones::{extremal_zones, flat_zones, ExtremumKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(v: &[u8]) -> Volume {
        Volume::new(&[v.len()], v.to_vec()).unwrap()
    }

    fn filter1(v: &[u8], s: usize, k: FilterKind) -> Vec<u8> {
        apply_filter(&sig(v), s, k, Connectivity::Two).unwrap().into_data()
    }

    #[test]
    fn filter_examples() {
        assert_eq!(filter1(&[0, 0, 5, 0, 0], 1, FilterKind::MFilter), vec![0; 5]);
        assert_eq!(filter1(&[3, 1, 4, 4, 2], 1, FilterKind::MFilter), vec![1, 1, 4, 4, 4]);
        assert_eq!(filter1(&[1, 1, 4, 4, 4], 2, FilterKind::MFilter), vec![4; 5]);
        for k in FilterKind::ALL {
            let flat = Volume::filled(&[3, 3, 3], 17).unwrap();
            assert_eq!(apply_filter(&flat, 5, k, Connectivity::Six).unwrap(), flat);
        }
    }

    #[test]
    fn scale_zero_rejected() {
        assert!(apply_filter(&sig(&[1, 2]), 0, FilterKind::Opening, Connectivity::Two).is_err());
    }

    #[test]
    fn decompose_example() {
        let sched = ScaleSchedule::new(vec![1, 2]).unwrap();
        let d = decompose(&sig(&[3, 1, 4, 4, 2]), &sched, FilterKind::MFilter, Connectivity::Two).unwrap();
        assert_eq!(d.lowpass[0].data(), &[1, 1, 4, 4, 4]);
        assert_eq!(d.lowpass[1].data(), &[4, 4, 4, 4, 4]);
        assert_eq!(d.channels_signed[0].data(), &[2, 0, 0, 0, -2]);
        assert_eq!(d.channels_signed[1].data(), &[-3, -3, 0, 0, 0]);
        assert_eq!(abs_channel(&d, 2).unwrap().data(), &[3, 3, 0, 0, 0]);
        assert!(abs_channel(&d, 1).is_err());
        assert!(abs_channel(&d, 3).is_err());
        assert_eq!(d.reconstruct().unwrap(), d.original);
    }

    proptest! {
        #[test]
        fn cascade_matches_repeated_filtering(v in volume_3d(), k in kind()) {
            let sched = ScaleSchedule::new(vec![1, 2, 5, 11, 40]).unwrap();
            let d = decompose(&v, &sched, k, Connectivity::Six).unwrap();
            let mut cur = v.clone();
            for (n, &s) in sched.scales().iter().enumerate() {
                cur = apply_filter(&cur, s, k, Connectivity::Six).unwrap();
                prop_assert_eq!(&d.lowpass[n], &cur);
            }
        }
    }

    #[test]
    fn constant_volume_has_zero_channels() {
        let v = Volume::filled(&[4, 4, 4], 3).unwrap();
        let sched = ScaleSchedule::new(vec![1, 4, 16]).unwrap();
        let d = decompose(&v, &sched, FilterKind::MFilter, Connectivity::Six).unwrap();
        assert!(d.channels_signed.iter().all(|c| c.data().iter().all(|&x| x == 0)));
    }

    #[test]
    fn abs_channel_examples() {
        let sched = ScaleSchedule::new(vec![1, 2]).unwrap();
        let mut d = decompose(&sig(&[0; 5]), &sched, FilterKind::MFilter, Connectivity::Two).unwrap();
        assert_eq!(abs_channel(&d, 2).unwrap().data(), &[0; 5]);
        d.channels_signed[1] = SignedVolume::new(&[5], vec![2, 0, 0, 0, -2]).unwrap();
        assert_eq!(abs_channel(&d, 2).unwrap().data(), &[2, 0, 0, 0, 2]);
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(vec![]).is_err());
        assert!(ScaleSchedule::new(vec![0, 2]).is_err());
        assert!(ScaleSchedule::new(vec![3, 3]).is_err());
        assert!(serde_json::from_str::<ScaleSchedule>("[4, 2]").is_err());
        assert_eq!(serde_json::from_str::<ScaleSchedule>("[2, 4]").unwrap().scales(), &[2, 4]);
    }

    #[test]
    fn matches_oracle_on_random_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let len = rng.gen_range(1..=40);
            let top = rng.gen_range(1..=255u16) as u8;
            let v: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=top)).collect();
            let s = rng.gen_range(1..=len);
            for k in FilterKind::ALL {
                let fast = filter1(&v, s, k);
                let slow = brute_force_sieve_1d(&sig(&v), s, k).unwrap().into_data();
                assert_eq!(fast, slow, "signal {v:?} scale {s} kind {k:?}");
            }
        }
    }

    /// Dense cascade to `s` against one direct application at `s`. The two
    /// need not coincide; this only reports how often they do.
    #[test]
    fn dense_cascade_versus_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut same = 0;
        let trials = 200;
        for _ in 0..trials {
            let v = Volume::new(&[6, 6], (0..36).map(|_| rng.gen_range(0..4)).collect()).unwrap();
            let mut dense = v.clone();
            for s in 1..=6 {
                dense = apply_filter(&dense, s, FilterKind::MFilter, Connectivity::Four).unwrap();
            }
            let direct = apply_filter(&v, 6, FilterKind::MFilter, Connectivity::Four).unwrap();
            same += (dense == direct) as usize;
        }
        eprintln!("dense cascade == direct M-filter in {same}/{trials} random 6x6 cases");
    }

    fn volume_3d() -> impl Strategy<Value = Volume> {
        (1usize..=5, 1usize..=5, 1usize..=5, 1u8..=6).prop_flat_map(|(x, y, z, top)| {
            proptest::collection::vec(0..=top, x * y * z).prop_map(move |d| Volume::new(&[x, y, z], d).unwrap())
        })
    }

    fn kind() -> impl Strategy<Value = FilterKind> {
        prop::sample::select(FilterKind::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn idempotent(v in volume_3d(), s in 1usize..20, k in kind()) {
            let once = apply_filter(&v, s, k, Connectivity::Six).unwrap();
            let twice = apply_filter(&once, s, k, Connectivity::Six).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn opening_below_closing_above(v in volume_3d(), s in 1usize..20) {
            let o = apply_filter(&v, s, FilterKind::Opening, Connectivity::Six).unwrap();
            let c = apply_filter(&v, s, FilterKind::Closing, Connectivity::Six).unwrap();
            for i in 0..v.len() {
                prop_assert!(o.get(i) <= v.get(i) && v.get(i) <= c.get(i));
            }
        }

        #[test]
        fn no_small_extrema_survive(v in volume_3d(), s in 1usize..20, k in kind()) {
            let out = apply_filter(&v, s, k, Connectivity::Six).unwrap();
            let g = flat_zones(&out, Connectivity::Six).unwrap();
            for (z, ext) in extremal_zones(&g) {
                let removed = match k {
                    FilterKind::Opening => ext == ExtremumKind::Maximum,
                    FilterKind::Closing => ext == ExtremumKind::Minimum,
                    FilterKind::MFilter | FilterKind::NFilter => true,
                };
                if removed {
                    prop_assert!(g.zones[z as usize].area > s);
                }
            }
        }

        #[test]
        fn values_are_never_invented(v in volume_3d(), s in 1usize..20, k in kind()) {
            let out = apply_filter(&v, s, k, Connectivity::Six).unwrap();
            let mut present = [false; 256];
            for &x in v.data() { present[x as usize] = true; }
            prop_assert!(out.data().iter().all(|&x| present[x as usize]));
        }

        #[test]
        fn reconstruction_exact(v in volume_3d()) {
            let sched = ScaleSchedule::new(vec![1, 3, 9, 27]).unwrap();
            let d = decompose(&v, &sched, FilterKind::MFilter, Connectivity::Six).unwrap();
            prop_assert_eq!(d.reconstruct().unwrap(), v);
        }
    }
}
