//! Flat zones, extremal zones and connected components.

use crate::error::Result;
use crate::grid::{for_each_edge, Connectivity, Grid, Volume};

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub(crate) struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] { (ra, rb) } else { (rb, ra) };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        big
    }

    /// Dense labels `0..k` ordered by the smallest member index.
    pub fn dense_labels(&mut self) -> (Vec<u32>, usize) {
        let n = self.parent.len();
        let mut root_label = vec![u32::MAX; n];
        let mut labels = Vec::with_capacity(n);
        let mut next = 0u32;
        for i in 0..n as u32 {
            let r = self.find(i) as usize;
            if root_label[r] == u32::MAX {
                root_label[r] = next;
                next += 1;
            }
            labels.push(root_label[r]);
        }
        (labels, next as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Zone {
    pub value: u8,
    pub area: usize,
    /// Smallest voxel index in the zone.
    pub first_voxel: usize,
    /// Sorted ids of adjacent zones.
    pub neighbors: Vec<u32>,
}

/// Partition of a volume into maximal connected equal-valued sets.
///
/// Zone ids are dense and ordered by each zone's smallest voxel index.
#[derive(Clone, Debug)]
pub struct FlatZoneGraph {
    pub zone_of_voxel: Vec<u32>,
    pub zones: Vec<Zone>,
}

impl FlatZoneGraph {
    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    /// Paints zone values back onto voxels.
    pub fn values(&self) -> Vec<u8> {
        self.zone_of_voxel.iter().map(|&z| self.zones[z as usize].value).collect()
    }
}

/// Labels voxels by equal-value face-connected components.
pub(crate) fn label_flat_zones(v: &Volume) -> (Vec<u32>, usize) {
    let data = v.data();
    let mut uf = UnionFind::new(data.len());
    for_each_edge(v.dims(), |a, b| {
        if data[a] == data[b] {
            uf.union(a as u32, b as u32);
        }
    });
    uf.dense_labels()
}

pub fn flat_zones(v: &Volume, c: Connectivity) -> Result<FlatZoneGraph> {
    c.check(v)?;
    let (zone_of_voxel, count) = label_flat_zones(v);
    let mut zones: Vec<Zone> = Vec::with_capacity(count);
    for (i, &z) in zone_of_voxel.iter().enumerate() {
        if z as usize == zones.len() {
            zones.push(Zone { value: v.get(i), area: 0, first_voxel: i, neighbors: Vec::new() });
        }
        zones[z as usize].area += 1;
    }
    for_each_edge(v.dims(), |a, b| {
        let (za, zb) = (zone_of_voxel[a], zone_of_voxel[b]);
        if za != zb {
            zones[za as usize].neighbors.push(zb);
            zones[zb as usize].neighbors.push(za);
        }
    });
    for z in &mut zones {
        z.neighbors.sort_unstable();
        z.neighbors.dedup();
    }
    Ok(FlatZoneGraph { zone_of_voxel, zones })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtremumKind {
    Maximum,
    Minimum,
}

/// Zones strictly above (or below) every neighbour, in zone-id order.
pub fn extremal_zones(g: &FlatZoneGraph) -> Vec<(u32, ExtremumKind)> {
    let mut out = Vec::new();
    for (id, zone) in g.zones.iter().enumerate() {
        if zone.neighbors.is_empty() {
            continue;
        }
        let values = zone.neighbors.iter().map(|&n| g.zones[n as usize].value);
        if values.clone().all(|nv| nv < zone.value) {
            out.push((id as u32, ExtremumKind::Maximum));
        } else if values.clone().all(|nv| nv > zone.value) {
            out.push((id as u32, ExtremumKind::Minimum));
        }
    }
    out
}

/// Maximal face-connected sets of voxels satisfying `mask`, ordered by their
/// smallest voxel index. Each set is sorted ascending.
pub fn connected_components<T: Copy>(
    grid: &Grid<T>,
    c: Connectivity,
    mask: impl Fn(T) -> bool,
) -> Result<Vec<Vec<usize>>> {
    c.check(grid)?;
    let data = grid.data();
    let inside: Vec<bool> = data.iter().map(|&v| mask(v)).collect();
    let mut uf = UnionFind::new(data.len());
    for_each_edge(grid.dims(), |a, b| {
        if inside[a] && inside[b] {
            uf.union(a as u32, b as u32);
        }
    });
    let mut slot = vec![u32::MAX; data.len()];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for i in (0..data.len()).filter(|&i| inside[i]) {
        let r = uf.find(i as u32) as usize;
        if slot[r] == u32::MAX {
            slot[r] = comps.len() as u32;
            comps.push(Vec::new());
        }
        comps[slot[r] as usize].push(i);
    }
    Ok(comps)
}
