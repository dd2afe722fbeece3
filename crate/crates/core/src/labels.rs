//! Ground-truth label volumes and the object taxonomy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Five-class grouping; the two-class task collapses everything but
/// `NonElectrical` into "electrical".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    NonElectrical,
    MobilePhone,
    HardDrive,
    Laptop,
    OtherElectrical,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 5] = [
        DeviceClass::NonElectrical,
        DeviceClass::MobilePhone,
        DeviceClass::HardDrive,
        DeviceClass::Laptop,
        DeviceClass::OtherElectrical,
    ];

    pub fn is_electrical(self) -> bool {
        self != DeviceClass::NonElectrical
    }

    pub fn five_class_id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviceClass::NonElectrical => "non_electrical",
            DeviceClass::MobilePhone => "mobile_phone",
            DeviceClass::HardDrive => "hard_drive",
            DeviceClass::Laptop => "laptop",
            DeviceClass::OtherElectrical => "other_electrical",
        }
    }
}

/// Which grouping of the object taxonomy a classifier is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    TwoClass,
    FiveClass,
}

impl Task {
    pub fn class_count(self) -> usize {
        match self {
            Task::TwoClass => 2,
            Task::FiveClass => 5,
        }
    }

    pub fn class_id(self, class: DeviceClass) -> usize {
        match self {
            Task::TwoClass => class.is_electrical() as usize,
            Task::FiveClass => class.five_class_id(),
        }
    }

    /// Class ids that count as electrical.
    pub fn is_electrical_id(self, id: usize) -> bool {
        id != 0
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_class" | "2" => Ok(Task::TwoClass),
            "five_class" | "5" => Ok(Task::FiveClass),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: u16,
    pub name: String,
    pub class: DeviceClass,
    pub electrical: bool,
    /// Device type used when holding out one kind of device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl LabelEntry {
    pub fn device_kind(&self) -> &str {
        self.kind.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    pub labels: Vec<LabelEntry>,
}

impl LabelTable {
    pub fn get(&self, id: u16) -> Option<&LabelEntry> {
        self.labels.iter().find(|l| l.id == id)
    }
}

/// Per-voxel object ids (0 = background) with their table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    pub grid: Grid<u16>,
    pub table: LabelTable,
}

impl LabelVolume {
    pub fn new(grid: Grid<u16>, table: LabelTable) -> Result<Self> {
        let mut known = vec![false; u16::MAX as usize + 1];
        for l in &table.labels {
            if l.id == 0 {
                return Err(Error::invalid("label id 0 is reserved for background"));
            }
            known[l.id as usize] = true;
        }
        if let Some(&bad) = grid.data().iter().find(|&&l| l != 0 && !known[l as usize]) {
            return Err(Error::invalid(format!("label {bad} missing from label table")));
        }
        Ok(Self { grid, table })
    }

    pub fn dims(&self) -> &[usize] {
        self.grid.dims()
    }

    /// Voxel indices per nonzero label id, ascending.
    pub fn supports(&self) -> BTreeMap<u16, Vec<usize>> {
        let mut out: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.grid.data().iter().enumerate() {
            if l != 0 {
                out.entry(l).or_default().push(i);
            }
        }
        out
    }
}

/// Number of voxels in `voxels` carrying `label`.
pub fn overlap_count(voxels: &[usize], labels: &LabelVolume, label: u16) -> Result<usize> {
    if labels.table.get(label).is_none() {
        return Err(Error::invalid(format!("unknown label {label}")));
    }
    let data = labels.grid.data();
    voxels
        .iter()
        .map(|&i| {
            data.get(i).copied().ok_or_else(|| {
                Error::DimensionMismatch(format!("voxel {i} outside label volume of {} voxels", data.len()))
            })
        })
        .try_fold(0, |acc, l| l.map(|l| acc + (l == label) as usize))
}
