//! Segments harvested from channel volumes or ground truth, their density
//! histograms and overlap labelling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Connectivity, Volume};
use crate::labels::{LabelVolume, Task};
use crate::sieve::{abs_channel, ScaleSchedule, SieveDecomposition};
use crate::zones::connected_components;

/// `n_scales` log-equispaced scales from `s_min` to `s_max`, rounded half
/// up, endpoints exact.
pub fn default_schedule(n_scales: usize, s_min: usize, s_max: usize) -> Result<ScaleSchedule> {
    if n_scales < 2 {
        return Err(Error::invalid("at least two scales are needed"));
    }
    if s_min < 1 || s_min >= s_max {
        return Err(Error::invalid(format!("need 1 <= s_min < s_max, got {s_min} and {s_max}")));
    }
    let (lo, hi) = ((s_min as f64).log10(), (s_max as f64).log10());
    let scales = (0..n_scales)
        .map(|i| match i {
            0 => s_min,
            i if i == n_scales - 1 => s_max,
            i => {
                let e = lo + (hi - lo) * i as f64 / (n_scales - 1) as f64;
                (10f64.powf(e) + 0.5).floor() as usize
            }
        })
        .collect();
    ScaleSchedule::new(scales)
}

/// 256 unnormalised intensity counts.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Histogram(Box<[u32; 256]>);

impl Histogram {
    pub fn zero() -> Self {
        Histogram(Box::new([0; 256]))
    }

    pub fn from_values(values: impl IntoIterator<Item = u8>) -> Self {
        let mut h = Self::zero();
        for v in values {
            h.0[v as usize] += 1;
        }
        h
    }

    pub fn bins(&self) -> &[u32; 256] {
        &self.0
    }

    pub fn bins_mut(&mut self) -> &mut [u32; 256] {
        &mut self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| c as u64).sum()
    }

    pub fn features(&self) -> [f64; 256] {
        self.0.map(f64::from)
    }
}

impl std::fmt::Debug for Histogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nz: Vec<(usize, u32)> = self.0.iter().enumerate().filter(|e| *e.1 > 0).map(|(i, &c)| (i, c)).collect();
        f.debug_tuple("Histogram").field(&nz).finish()
    }
}

impl TryFrom<Vec<u32>> for Histogram {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        let arr: [u32; 256] = v
            .try_into()
            .map_err(|v: Vec<u32>| Error::invalid(format!("histogram has {} bins, expected 256", v.len())))?;
        Ok(Histogram(Box::new(arr)))
    }
}

impl From<Histogram> for Vec<u32> {
    fn from(h: Histogram) -> Self {
        h.0.to_vec()
    }
}

/// A connected voxel set with the intensities its features come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub bag: String,
    /// Channel index `2..=N`, or 0 for a ground-truth mask.
    pub channel: usize,
    /// Ascending voxel indices.
    pub voxels: Vec<usize>,
    pub source_values: Vec<u8>,
}

impl Segment {
    pub fn area(&self) -> usize {
        self.voxels.len()
    }
}

pub fn segment_histogram(seg: &Segment) -> Result<Histogram> {
    if seg.voxels.is_empty() {
        return Err(Error::invalid("empty segment"));
    }
    if seg.source_values.len() != seg.voxels.len() {
        return Err(Error::invalid("segment values and voxels differ in length"));
    }
    Ok(Histogram::from_values(seg.source_values.iter().copied()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Keep channel `n` segments with area in `(S_{n-1}, S_n]`.
    #[default]
    Bracketing,
    All,
}

impl std::str::FromStr for BoundsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bracketing" => Ok(BoundsMode::Bracketing),
            "all" => Ok(BoundsMode::All),
            other => Err(Error::invalid(format!("unknown bounds mode {other:?}"))),
        }
    }
}

/// Connected components of each absolute channel `2..=N`.
pub fn extract_segments(d: &SieveDecomposition, mode: BoundsMode, bag: &str) -> Result<Vec<Segment>> {
    let c = Connectivity::for_ndim(d.original.ndim())?;
    let mut out = Vec::new();
    for n in 2..=d.channel_count() {
        let ch = abs_channel(d, n)?;
        let (lo, hi) = (d.schedule.scale(n - 1), d.schedule.scale(n));
        for voxels in connected_components(&ch, c, |v| v != 0)? {
            if mode == BoundsMode::Bracketing && !(voxels.len() > lo && voxels.len() <= hi) {
                continue;
            }
            let source_values = voxels.iter().map(|&i| ch.get(i)).collect();
            out.push(Segment { bag: bag.to_string(), channel: n, voxels, source_values });
        }
    }
    Ok(out)
}

/// One segment per labelled object, valued by the original intensities.
pub fn ground_truth_segments(v: &Volume, labels: &LabelVolume, bag: &str) -> Result<Vec<Segment>> {
    if v.dims() != labels.dims() {
        return Err(Error::DimensionMismatch(format!("volume {:?} vs labels {:?}", v.dims(), labels.dims())));
    }
    let supports = labels.supports();
    let mut out = Vec::new();
    for entry in &labels.table.labels {
        match supports.get(&entry.id) {
            Some(voxels) => out.push(Segment {
                bag: bag.to_string(),
                channel: 0,
                source_values: voxels.iter().map(|&i| v.get(i)).collect(),
                voxels: voxels.clone(),
            }),
            None => log::warn!("{bag}: label {} ({}) has no voxels; skipped", entry.id, entry.name),
        }
    }
    out.sort_by_key(|s| s.voxels[0]);
    Ok(out)
}

/// Electrical label with the largest overlap, ties to the smaller id.
pub fn dominant_electrical(voxels: &[usize], labels: &LabelVolume) -> Result<Option<(u16, usize)>> {
    let data = labels.grid.data();
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for &i in voxels {
        let l = *data.get(i).ok_or_else(|| {
            Error::DimensionMismatch(format!("voxel {i} outside label volume of {} voxels", data.len()))
        })?;
        if l != 0 {
            *counts.entry(l).or_default() += 1;
        }
    }
    let mut best: Option<(u16, usize)> = None;
    for (id, n) in counts {
        let electrical = labels.table.get(id).is_some_and(|e| e.electrical);
        if electrical && best.is_none_or(|(_, b)| n > b) {
            best = Some((id, n));
        }
    }
    Ok(best)
}

/// Class id of a segment from its overlap with labelled objects.
pub fn auto_label_segment(seg: &Segment, labels: &LabelVolume, task: Task) -> Result<usize> {
    let class = match dominant_electrical(&seg.voxels, labels)? {
        Some((id, _)) => labels.table.get(id).expect("validated table").class,
        None => crate::labels::DeviceClass::NonElectrical,
    };
    Ok(task.class_id(class))
}

/// A segment as exchanged between pipeline stages (one JSON object per line).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub bag: String,
    pub channel: usize,
    pub area: usize,
    /// Class id under the task the file was produced for; absent if unknown.
    pub label: Option<usize>,
    pub hist: Histogram,
    /// Device kind of the dominant overlapping electrical object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    /// Voxels as `[start, length]` runs of consecutive indices.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<[u32; 2]>,
}

impl SegmentRecord {
    pub fn from_segment(seg: &Segment, index: usize, label: Option<usize>, device: Option<String>) -> Result<Self> {
        Ok(SegmentRecord {
            id: format!("{}/{}/{}", seg.bag, seg.channel, index),
            bag: seg.bag.clone(),
            channel: seg.channel,
            area: seg.area(),
            label,
            hist: segment_histogram(seg)?,
            device,
            runs: to_runs(&seg.voxels),
        })
    }

    pub fn voxels(&self) -> Vec<usize> {
        self.runs.iter().flat_map(|&[s, l]| (s as usize)..(s as usize + l as usize)).collect()
    }
}

/// Labels segments against ground truth and converts them to records.
pub fn label_segments(segs: &[Segment], labels: Option<&LabelVolume>, task: Task) -> Result<Vec<SegmentRecord>> {
    segs.iter()
        .enumerate()
        .map(|(i, s)| {
            let (label, device) = match labels {
                Some(lv) => {
                    let dom = dominant_electrical(&s.voxels, lv)?;
                    let device = dom.map(|(id, _)| lv.table.get(id).expect("validated").device_kind().to_string());
                    (Some(auto_label_segment(s, lv, task)?), device)
                }
                None => (None, None),
            };
            SegmentRecord::from_segment(s, i, label, device)
        })
        .collect()
}

/// Ground-truth segments labelled by their own object.
pub fn ground_truth_records(v: &Volume, labels: &LabelVolume, bag: &str, task: Task) -> Result<Vec<SegmentRecord>> {
    let segs = ground_truth_segments(v, labels, bag)?;
    let ids = labels.grid.data();
    segs.iter()
        .enumerate()
        .map(|(i, s)| {
            let entry = labels.table.get(ids[s.voxels[0]]).expect("validated");
            let device = entry.electrical.then(|| entry.device_kind().to_string());
            SegmentRecord::from_segment(s, i, Some(task.class_id(entry.class)), device)
        })
        .collect()
}

fn to_runs(voxels: &[usize]) -> Vec<[u32; 2]> {
    let mut runs: Vec<[u32; 2]> = Vec::new();
    for &v in voxels {
        match runs.last_mut() {
            Some([s, l]) if (*s + *l) as usize == v => *l += 1,
            _ => runs.push([v as u32, 1]),
        }
    }
    runs
}
