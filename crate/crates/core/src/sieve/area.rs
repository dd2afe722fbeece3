//! Union-find area filter.
//!
//! Removing every regional maximum of at most `s` voxels, repeatedly and in
//! any order, leaves each voxel at the highest level `t` whose connected
//! component of `{f >= t}` around it holds more than `s` voxels. Voxels are
//! visited from high to low value and joined to the visited components they
//! touch, building the component tree with areas; a backwards sweep then
//! drops every component of at most `s` voxels to its parent's level.
//! Minima are handled on inverted values.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Pass {
    /// Remove maxima.
    Open,
    /// Remove minima.
    Close,
}

const UNSEEN: u32 = u32::MAX;
const PREFETCH_DISTANCE: usize = 64;

#[inline(always)]
fn prefetch<T>(buf: &[T], i: usize) {
    #[cfg(target_arch = "x86_64")]
    if let Some(x) = buf.get(i) {
        // SAFETY: prefetching a valid reference has no observable effect.
        unsafe { std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(x as *const T as *const i8) };
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (buf, i);
}

/// Asks the kernel to back the 2 MiB-aligned interior of `buf` with huge
/// pages. Must run before the pages are first touched to take effect.
fn advise_huge<T>(buf: &mut [T]) {
    #[cfg(target_os = "linux")]
    {
        const HUGE: usize = 2 << 20;
        let start = buf.as_mut_ptr() as usize;
        let end = start + std::mem::size_of_val(buf);
        let lo = (start + HUGE - 1) & !(HUGE - 1);
        let hi = end & !(HUGE - 1);
        if hi > lo {
            // SAFETY: the range lies inside `buf`; the advice changes only how
            // the kernel backs it, never its contents.
            unsafe { libc::madvise(lo as *mut libc::c_void, hi - lo, libc::MADV_HUGEPAGE) };
        }
    }
    #[cfg(not(target_os = "linux"))]
    let _ = buf;
}

/// Scratch buffers reused across passes on volumes of one shape.
pub(crate) struct AreaFilter {
    dims: [usize; 3],
    /// Bit `k` set when the voxel has a neighbour along direction `k`
    /// (-x, +x, -y, +y, -z, +z).
    open_faces: Vec<u8>,
    order: Vec<u32>,
    /// Disjoint sets of visited voxels, union by rank.
    set: Vec<u32>,
    rank: Vec<u8>,
    /// Last visited voxel of each set, stored at the set root.
    repr: Vec<u32>,
    /// Component tree: every voxel points at a voxel visited later.
    parent: Vec<u32>,
    /// Component area at its last visited voxel; 0 inside a flat run.
    area: Vec<u32>,
}

impl AreaFilter {
    pub fn new(dims: &[usize]) -> Self {
        let d = [dims[0], dims.get(1).copied().unwrap_or(1), dims.get(2).copied().unwrap_or(1)];
        let n = d[0] * d[1] * d[2];
        let mut open_faces = Vec::with_capacity(n);
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let mut m = 0u8;
                    m |= (x > 0) as u8;
                    m |= ((x + 1 < d[0]) as u8) << 1;
                    m |= ((y > 0) as u8) << 2;
                    m |= ((y + 1 < d[1]) as u8) << 3;
                    m |= ((z > 0) as u8) << 4;
                    m |= ((z + 1 < d[2]) as u8) << 5;
                    open_faces.push(m);
                }
            }
        }
        let mut f = Self {
            dims: d,
            open_faces,
            order: vec![0; n],
            set: vec![0; n],
            rank: vec![0; n],
            repr: vec![0; n],
            parent: vec![0; n],
            area: vec![0; n],
        };
        advise_huge(&mut f.order);
        advise_huge(&mut f.set);
        advise_huge(&mut f.rank);
        advise_huge(&mut f.repr);
        advise_huge(&mut f.parent);
        advise_huge(&mut f.area);
        f
    }

    fn find(&mut self, mut p: u32) -> u32 {
        while self.set[p as usize] != p {
            let g = self.set[self.set[p as usize] as usize];
            self.set[p as usize] = g;
            p = g;
        }
        p
    }

    /// Filters `data` in place.
    pub fn run(&mut self, data: &mut [u8], pass: Pass, scale: usize) {
        if pass == Pass::Close {
            data.iter_mut().for_each(|v| *v = 255 - *v);
        }
        self.open(data, scale);
        if pass == Pass::Close {
            data.iter_mut().for_each(|v| *v = 255 - *v);
        }
    }

    fn open(&mut self, data: &mut [u8], scale: usize) {
        let n = data.len();
        let lambda = (scale as u64 + 1).min(u32::MAX as u64) as u32;
        let mut start = [0usize; 257];
        for &v in data.iter() {
            start[255 - v as usize + 1] += 1;
        }
        for k in 1..257 {
            start[k] += start[k - 1];
        }
        for (i, &v) in data.iter().enumerate() {
            let slot = &mut start[255 - v as usize];
            self.order[*slot] = i as u32;
            *slot += 1;
        }
        self.set.fill(UNSEEN);
        let [nx, ny, _] = self.dims;
        let steps = [-1isize, 1, -(nx as isize), nx as isize, -((nx * ny) as isize), (nx * ny) as isize];
        for k in 0..n {
            if let Some(&ahead) = self.order.get(k + PREFETCH_DISTANCE) {
                let a = ahead as usize;
                for off in [0, nx, nx * ny] {
                    prefetch(&self.set, a + off);
                    prefetch(&self.set, a.wrapping_sub(off));
                }
                prefetch(&self.repr, a);
                prefetch(&self.parent, a);
                prefetch(&self.area, a);
                prefetch(&self.open_faces, a);
                prefetch(data, a);
            }
            let p = self.order[k];
            let pi = p as usize;
            self.set[pi] = p;
            self.rank[pi] = 0;
            self.repr[pi] = p;
            self.parent[pi] = p;
            self.area[pi] = 1;
            let mut root = p;
            let faces = self.open_faces[pi];
            for (bit, &step) in steps.iter().enumerate() {
                if faces & (1 << bit) == 0 {
                    continue;
                }
                let q = (pi as isize + step) as usize;
                if self.set[q] == UNSEEN {
                    continue;
                }
                let r = self.find(q as u32);
                if r == root {
                    continue;
                }
                let c = self.repr[r as usize] as usize;
                self.parent[c] = p;
                if data[c] == data[pi] {
                    self.area[pi] += self.area[c];
                    self.area[c] = 0;
                } else {
                    self.area[pi] = self.area[pi].saturating_add(self.area[c]);
                }
                let rk = self.rank[r as usize];
                let ok = self.rank[root as usize];
                root = if rk > ok {
                    self.set[root as usize] = r;
                    r
                } else {
                    self.set[r as usize] = root;
                    if rk == ok {
                        self.rank[root as usize] += 1;
                    }
                    root
                };
                self.repr[root as usize] = p;
            }
        }
        // Parents are visited after their children, so walking the order
        // backwards resolves every parent first.
        for k in (0..n).rev() {
            if k >= PREFETCH_DISTANCE {
                let a = self.order[k - PREFETCH_DISTANCE] as usize;
                prefetch(&self.parent, a);
                prefetch(&self.area, a);
                prefetch(data, a);
                let b = self.order[k - PREFETCH_DISTANCE / 2] as usize;
                prefetch(data, self.parent[b] as usize);
            }
            let p = self.order[k] as usize;
            let par = self.parent[p] as usize;
            if par != p && self.area[p] < lambda {
                data[p] = data[par];
            }
        }
    }
}
