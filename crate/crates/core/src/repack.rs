//! Per-voxel voting over classified channel segments, and 2D projections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::Prediction;
use crate::error::{Error, Result};
use crate::extract::{Segment, SegmentRecord};
use crate::grid::{Grid, Volume};

pub const VERY_UNLIKELY: u8 = 0;
pub const UNLIKELY: u8 = 1;
pub const LIKELY: u8 = 2;

/// Verdict per voxel: 0 very unlikely, 1 unlikely, 2 likely electrical.
pub type RepackMap = Grid<u8>;

/// One channel segment and whether it was predicted electrical.
#[derive(Clone, Copy, Debug)]
pub struct Vote<'a> {
    pub channel: usize,
    pub voxels: &'a [usize],
    pub electrical: bool,
}

/// Counts, per voxel, the channels holding an electrical segment over it.
/// Channel 0 (ground-truth masks) does not vote.
pub fn repack_votes<'a>(votes: impl IntoIterator<Item = Vote<'a>>, dims: &[usize]) -> Result<RepackMap> {
    let mut map = Grid::filled(dims, VERY_UNLIKELY)?;
    let n = map.len();
    let mut by_channel: BTreeMap<usize, Vec<&[usize]>> = BTreeMap::new();
    for v in votes {
        if let Some(&bad) = v.voxels.iter().find(|&&i| i >= n) {
            return Err(Error::DimensionMismatch(format!("segment voxel {bad} outside volume of {n} voxels")));
        }
        if v.channel != 0 && v.electrical {
            by_channel.entry(v.channel).or_default().push(v.voxels);
        }
    }
    let mut stamp = vec![0usize; n];
    let data = map.data_mut();
    for (channel, segs) in by_channel {
        for voxels in segs {
            for &i in voxels {
                if stamp[i] != channel {
                    stamp[i] = channel;
                    data[i] = (data[i] + 1).min(LIKELY);
                }
            }
        }
    }
    Ok(map)
}

pub fn repack_vote(segments: &[(Segment, Prediction)], dims: &[usize]) -> Result<RepackMap> {
    repack_votes(
        segments.iter().map(|(s, p)| Vote { channel: s.channel, voxels: &s.voxels, electrical: p.predicted != 0 }),
        dims,
    )
}

/// Votes from segment records and their predicted classes, keyed by
/// segment id. Every record needs a prediction.
pub fn repack_records(
    records: &[SegmentRecord],
    predicted: &BTreeMap<String, usize>,
    dims: &[usize],
) -> Result<RepackMap> {
    let voxels: Vec<Vec<usize>> = records.iter().map(SegmentRecord::voxels).collect();
    let mut votes = Vec::with_capacity(records.len());
    for (r, v) in records.iter().zip(&voxels) {
        let class =
            predicted.get(&r.id).ok_or_else(|| Error::invalid(format!("no prediction for segment {}", r.id)))?;
        votes.push(Vote { channel: r.channel, voxels: v, electrical: *class != 0 });
    }
    repack_votes(votes, dims)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["x", "y", "z"][self as usize]
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "0" => Ok(Axis::X),
            "y" | "1" => Ok(Axis::Y),
            "z" | "2" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

/// Row-major 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn to_pgm(&self) -> Vec<u8> {
        crate::io::encode_pgm(self.width, self.height, &self.pixels)
    }
}

fn dims3<T: Copy>(v: &Grid<T>) -> Result<[usize; 3]> {
    match *v.dims() {
        [x, y, z] => Ok([x, y, z]),
        _ => Err(Error::invalid(format!("projection needs a 3D volume, got {:?}", v.dims()))),
    }
}

/// Image shape and pixel index of each voxel when collapsing `axis`.
fn plane(d: [usize; 3], axis: Axis) -> (usize, usize, impl Fn(usize) -> usize) {
    let (u, w) = match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let width = d[u];
    let pixel = move |i: usize| {
        let c = [i % d[0], i / d[0] % d[1], i / (d[0] * d[1])];
        c[u] + width * c[w]
    };
    (width, d[w], pixel)
}

/// Column sums scaled so the largest column maps to 255, rounded half up.
pub fn flatten2d(v: &Volume, axis: Axis) -> Result<Image> {
    let (width, height, pixel) = plane(dims3(v)?, axis);
    let mut sums = vec![0u64; width * height];
    for (i, &x) in v.data().iter().enumerate() {
        sums[pixel(i)] += x as u64;
    }
    let max = sums.iter().copied().max().unwrap_or(0);
    let pixels = sums.iter().map(|&s| if max == 0 { 0 } else { ((510 * s + max) / (2 * max)) as u8 }).collect();
    Ok(Image { width, height, pixels })
}

pub fn mip_projection(v: &Volume, axis: Axis) -> Result<Image> {
    let (width, height, pixel) = plane(dims3(v)?, axis);
    let mut pixels = vec![0u8; width * height];
    for (i, &x) in v.data().iter().enumerate() {
        let p = &mut pixels[pixel(i)];
        *p = (*p).max(x);
    }
    Ok(Image { width, height, pixels })
}

/// Sorted pixels hit by a voxel set under projection along `axis`.
pub fn project_voxels(voxels: &[usize], dims: &[usize], axis: Axis) -> Result<Vec<usize>> {
    let d: [usize; 3] =
        dims.try_into().map_err(|_| Error::invalid(format!("projection needs a 3D volume, got {dims:?}")))?;
    let (_, _, pixel) = plane(d, axis);
    let mut out: Vec<usize> = voxels.iter().map(|&i| pixel(i)).collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// One image per verdict level: white where some voxel along the column
/// carries that verdict.
pub fn verdict_projections(map: &RepackMap, axis: Axis) -> Result<[Image; 3]> {
    let masks = [VERY_UNLIKELY, UNLIKELY, LIKELY].map(|level| map.map(|v| if v == level { 255 } else { 0 }));
    let [a, b, c] = masks;
    Ok([mip_projection(&a, axis)?, mip_projection(&b, axis)?, mip_projection(&c, axis)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vote(channel: usize, voxels: &[usize], electrical: bool) -> Vote<'_> {
        Vote { channel, voxels, electrical }
    }

    #[test]
    fn verdict_rules() {
        let a = [0, 1];
        let b = [1, 2];
        let c = [3];
        let map =
            repack_votes([vote(2, &a, true), vote(3, &b, true), vote(2, &c, true), vote(2, &c, true)], &[5]).unwrap();
        assert_eq!(map.data(), &[UNLIKELY, LIKELY, UNLIKELY, UNLIKELY, VERY_UNLIKELY]);
        let none = repack_votes([vote(2, &a, false), vote(0, &b, true)], &[5]).unwrap();
        assert!(none.data().iter().all(|&v| v == VERY_UNLIKELY));
        assert!(repack_votes([vote(2, &[9], true)], &[5]).is_err());
    }

    #[test]
    fn takes_segments_and_predictions() {
        let seg = Segment { bag: "b".into(), channel: 2, voxels: vec![1], source_values: vec![4] };
        let p = Prediction::one_hot(3, 5);
        assert_eq!(repack_vote(&[(seg, p)], &[2]).unwrap().data(), &[0, 1]);
    }

    fn brute(votes: &[(usize, Vec<usize>, bool)], n: usize) -> Vec<u8> {
        (0..n)
            .map(|i| {
                let mut chans: Vec<usize> =
                    votes.iter().filter(|v| v.0 != 0 && v.2 && v.1.contains(&i)).map(|v| v.0).collect();
                chans.sort();
                chans.dedup();
                chans.len().min(2) as u8
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let side = rng.gen_range(1..=16);
            let n = side * side * side;
            let votes: Vec<(usize, Vec<usize>, bool)> = (0..rng.gen_range(0..12))
                .map(|_| {
                    let len = rng.gen_range(1..=n.min(40));
                    (rng.gen_range(2..=5), (0..len).map(|_| rng.gen_range(0..n)).collect(), rng.gen_bool(0.6))
                })
                .collect();
            let map = repack_votes(votes.iter().map(|v| vote(v.0, &v.1, v.2)), &[side; 3]).unwrap();
            assert_eq!(map.data(), brute(&votes, n).as_slice());
        }
    }

    #[test]
    fn projection_examples() {
        let v = Volume::new(&[2, 1, 2], vec![1, 1, 3, 3]).unwrap();
        assert_eq!(flatten2d(&v, Axis::Z).unwrap().pixels, vec![255, 255]);
        let v = Volume::new(&[2, 1, 2], vec![1, 3, 3, 5]).unwrap();
        assert_eq!(flatten2d(&v, Axis::Z).unwrap().pixels, vec![128, 255]);
        let zero = Volume::filled(&[3, 3, 3], 0).unwrap();
        assert!(flatten2d(&zero, Axis::X).unwrap().pixels.iter().all(|&p| p == 0));
        let col = Volume::new(&[1, 1, 3], vec![0, 200, 17]).unwrap();
        assert_eq!(mip_projection(&col, Axis::Z).unwrap().pixels, vec![200]);
        let nine = Volume::filled(&[2, 3, 4], 9).unwrap();
        for a in Axis::ALL {
            assert!(mip_projection(&nine, a).unwrap().pixels.iter().all(|&p| p == 9));
        }
        assert!(flatten2d(&Volume::filled(&[4, 4], 1).unwrap(), Axis::Z).is_err());
        assert!("w".parse::<Axis>().is_err());
    }

    #[test]
    fn projection_shapes() {
        let v = Volume::filled(&[2, 3, 4], 1).unwrap();
        let shape = |a| {
            let im = flatten2d(&v, a).unwrap();
            (im.width, im.height)
        };
        assert_eq!([shape(Axis::X), shape(Axis::Y), shape(Axis::Z)], [(3, 4), (2, 4), (2, 3)]);
        assert_eq!(project_voxels(&[0, 6, 7], &[2, 3, 4], Axis::Z).unwrap(), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn mip_dominates_mean_and_flatten_peaks(data in proptest::collection::vec(any::<u8>(), 27)) {
            let v = Volume::new(&[3, 3, 3], data).unwrap();
            for a in Axis::ALL {
                let (_, _, pixel) = plane([3, 3, 3], a);
                let mut sums = [0u32; 9];
                for (i, &x) in v.data().iter().enumerate() {
                    sums[pixel(i)] += x as u32;
                }
                let mip = mip_projection(&v, a).unwrap();
                for (p, &sum) in sums.iter().enumerate() {
                    prop_assert!(mip.pixels[p] as u32 * 3 >= sum);
                }
                let flat = flatten2d(&v, a).unwrap();
                if v.data().iter().any(|&x| x > 0) {
                    prop_assert_eq!(flat.pixels.iter().max().copied(), Some(255));
                }
            }
        }

        #[test]
        fn flipping_to_electrical_is_monotone(
            segs in proptest::collection::vec((2usize..5, proptest::collection::vec(0usize..64, 1..10), any::<bool>()), 1..8),
            flip in 0usize..8,
        ) {
            let before = repack_votes(segs.iter().map(|s| vote(s.0, &s.1, s.2)), &[4, 4, 4]).unwrap();
            let k = flip % segs.len();
            let after = repack_votes(segs.iter().enumerate().map(|(j, s)| vote(s.0, &s.1, s.2 || j == k)), &[4, 4, 4]).unwrap();
            prop_assert!(before.data().iter().zip(after.data()).all(|(b, a)| a >= b));
        }
    }
}
