//! Dense 1–3 axis voxel grids laid out first-axis-fastest.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A dense grid of `T` values with 1 to 3 axes.
///
/// Voxel `(x, y, z)` lives at linear index `x + X * (y + Y * z)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

/// Intensities in `[0, 255]`.
pub type Volume = Grid<u8>;
/// Signed channel values in `[-255, 255]`.
pub type SignedVolume = Grid<i16>;

impl<T: Copy> Grid<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn filled(dims: &[usize], value: T) -> Result<Self> {
        check_dims(dims)?;
        let n = dims.iter().product();
        Ok(Self { dims: dims.to_vec(), data: vec![value; n] })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: usize) -> T {
        self.data[index]
    }

    /// Linear index of a coordinate; missing trailing axes are treated as 0.
    pub fn index(&self, coord: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (axis, &extent) in self.dims.iter().enumerate() {
            idx += coord.get(axis).copied().unwrap_or(0) * stride;
            stride *= extent;
        }
        idx
    }

    pub fn coord(&self, mut index: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        for (axis, &extent) in self.dims.iter().enumerate() {
            c[axis] = index % extent;
            index /= extent;
        }
        c
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.dims == other.dims
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > 3 {
        return Err(Error::invalid(format!("expected 1 to 3 axes, got {}", dims.len())));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("zero-length axis in dims {dims:?}")));
    }
    Ok(())
}

/// Face adjacency for 1, 2 and 3 axis grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Two,
    Four,
    Six,
}

impl Connectivity {
    pub fn for_ndim(ndim: usize) -> Result<Self> {
        match ndim {
            1 => Ok(Connectivity::Two),
            2 => Ok(Connectivity::Four),
            3 => Ok(Connectivity::Six),
            n => Err(Error::invalid(format!("no face connectivity for {n} axes"))),
        }
    }

    pub fn ndim(self) -> usize {
        match self {
            Connectivity::Two => 1,
            Connectivity::Four => 2,
            Connectivity::Six => 3,
        }
    }

    pub fn check<T>(self, grid: &Grid<T>) -> Result<()> {
        if self.ndim() == grid.dims.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!("{:?} connectivity on a {}-axis grid", self, grid.dims.len())))
        }
    }
}

/// Visits every face-adjacent pair `(a, b)` with `a < b` exactly once.
pub fn for_each_edge(dims: &[usize], mut f: impl FnMut(usize, usize)) {
    let (nx, ny, nz) = (dims[0], dims.get(1).copied().unwrap_or(1), dims.get(2).copied().unwrap_or(1));
    let plane = nx * ny;
    for z in 0..nz {
        for y in 0..ny {
            let row = z * plane + y * nx;
            for x in 0..nx {
                let i = row + x;
                if x + 1 < nx {
                    f(i, i + 1);
                }
                if y + 1 < ny {
                    f(i, i + nx);
                }
                if z + 1 < nz {
                    f(i, i + plane);
                }
            }
        }
    }
}

/// Face neighbours of one voxel.
pub fn neighbors(dims: &[usize], index: usize, out: &mut Vec<usize>) {
    out.clear();
    let mut stride = 1;
    for &extent in dims {
        let pos = (index / stride) % extent;
        if pos > 0 {
            out.push(index - stride);
        }
        if pos + 1 < extent {
            out.push(index + stride);
        }
        stride *= extent;
    }
}
