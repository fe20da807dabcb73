//! Lattice geometry: symmetric boxes, regions with stable index maps, ℓ¹
//! balls and annuli, pinned-cluster interiors and graph distances.
//!
//! Sites are `&[i32]` slices of length `dim`. Regions are stored in
//! lexicographic order (first coordinate most significant); that order is
//! the index order used by every matrix in the crate.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

const ABSENT: u32 = u32::MAX;
/// Regions whose bounding box exceeds this many cells fall back to binary search.
const MAX_GRID_CELLS: usize = 1 << 26;

/// ℓ¹ norm of a lattice vector.
pub fn l1_norm(v: &[i32]) -> u32 {
    v.iter().map(|c| c.unsigned_abs()).sum()
}

/// ℓ¹ distance between two sites.
pub fn l1_distance(a: &[i32], b: &[i32]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x - y).unsigned_abs()).sum()
}

/// Unit vector `e_i` scaled by `step`, for `axis` in `0..dim`.
pub fn axis_offset(dim: usize, axis: usize, step: i32) -> Vec<i32> {
    let mut v = vec![0; dim];
    v[axis] = step;
    v
}

/// The symmetric box `V_N = [-N/2, N/2]^d ∩ Z^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    dim: usize,
    side: u32,
}

impl LatticeBox {
    /// `side` must be even; `side = 0` is the single-site box `{0}`.
    pub fn new(dim: usize, side: u32) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if side % 2 != 0 {
            return Err(invalid("N", format!("N must be even, got {side}")));
        }
        Ok(Self { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn half(&self) -> i32 {
        (self.side / 2) as i32
    }

    /// `(N+1)^d`
    pub fn len(&self) -> usize {
        (self.side as usize + 1).pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, site: &[i32]) -> bool {
        let h = self.half();
        site.len() == self.dim && site.iter().all(|&c| -h <= c && c <= h)
    }

    /// Smallest ℓ∞ distance from `site` to the outside of the box.
    pub fn margin(&self, site: &[i32]) -> i32 {
        let h = self.half();
        site.iter().map(|&c| h - c.abs()).min().unwrap_or(h)
    }

    pub fn sites(&self) -> Region {
        let h = self.half();
        Region::from_bounds(self.dim, &vec![-h; self.dim], &vec![h; self.dim])
    }

    /// `∂₂V_N`: sites outside the box within ℓ¹ distance 2 of it.
    pub fn outer_boundary2(&self) -> Region {
        let h = self.half();
        let dilated = Region::from_bounds(self.dim, &vec![-h - 2; self.dim], &vec![h + 2; self.dim]);
        dilated.filter(|s| {
            !self.contains(s) && {
                // ℓ¹ distance from s to the box is the sum of per-axis overshoots
                let over: i32 = s.iter().map(|&c| (c.abs() - h).max(0)).sum();
                over <= 2
            }
        })
    }
}

impl fmt::Display for LatticeBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V_{}^{}", self.side, self.dim)
    }
}

/// Convenience for [`LatticeBox::sites`].
pub fn box_sites(dim: usize, side: u32) -> Result<Region> {
    Ok(LatticeBox::new(dim, side)?.sites())
}

#[derive(Clone, Debug)]
enum Lookup {
    Grid { lo: Vec<i32>, extent: Vec<usize>, table: Vec<u32> },
    Sorted,
}

/// A finite set of lattice sites with a lexicographic index map.
#[derive(Clone)]
pub struct Region {
    dim: usize,
    coords: Vec<i32>,
    lookup: Lookup,
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Region").field("dim", &self.dim).field("len", &self.len()).finish()
    }
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.coords == other.coords
    }
}

impl Eq for Region {}

impl Region {
    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new(), lookup: Lookup::Sorted }
    }

    /// Builds a region from arbitrary sites; duplicates are removed.
    pub fn from_sites<I, S>(dim: usize, sites: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[i32]>,
    {
        let mut flat = Vec::new();
        for s in sites {
            let s = s.as_ref();
            assert_eq!(s.len(), dim, "site dimension mismatch");
            flat.extend_from_slice(s);
        }
        Self::from_flat(dim, flat)
    }

    fn from_flat(dim: usize, flat: Vec<i32>) -> Self {
        let n = if dim == 0 { 0 } else { flat.len() / dim };
        if n == 0 {
            return Self::empty(dim);
        }
        let mut lo = vec![i32::MAX; dim];
        let mut hi = vec![i32::MIN; dim];
        for s in flat.chunks_exact(dim) {
            for a in 0..dim {
                lo[a] = lo[a].min(s[a]);
                hi[a] = hi[a].max(s[a]);
            }
        }
        let extent: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h - l) as usize + 1).collect();
        let cells = extent.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
        match cells {
            Some(cells) if cells <= MAX_GRID_CELLS.max(8 * n) => {
                let mut mark = vec![false; cells];
                for s in flat.chunks_exact(dim) {
                    mark[grid_offset(&lo, &extent, s)] = true;
                }
                let mut table = vec![ABSENT; cells];
                let mut coords = Vec::with_capacity(flat.len());
                let mut next = 0u32;
                let mut cursor = lo.clone();
                for (cell, &m) in mark.iter().enumerate() {
                    if m {
                        table[cell] = next;
                        next += 1;
                        coords.extend_from_slice(&cursor);
                    }
                    advance(&mut cursor, &lo, &extent);
                }
                Self { dim, coords, lookup: Lookup::Grid { lo, extent, table } }
            }
            _ => {
                let mut sites: Vec<&[i32]> = flat.chunks_exact(dim).collect();
                sites.sort_unstable();
                sites.dedup();
                let coords = sites.concat();
                Self { dim, coords, lookup: Lookup::Sorted }
            }
        }
    }

    /// All sites `x` with `lo ≤ x ≤ hi` coordinatewise.
    pub fn from_bounds(dim: usize, lo: &[i32], hi: &[i32]) -> Self {
        let extent: Vec<usize> = lo.iter().zip(hi).map(|(l, h)| (h - l + 1).max(0) as usize).collect();
        let cells: usize = extent.iter().product();
        if cells == 0 {
            return Self::empty(dim);
        }
        let mut coords = Vec::with_capacity(cells * dim);
        let mut cursor = lo.to_vec();
        for _ in 0..cells {
            coords.extend_from_slice(&cursor);
            advance(&mut cursor, lo, &extent);
        }
        let table = (0..cells as u32).collect();
        Self { dim, coords, lookup: Lookup::Grid { lo: lo.to_vec(), extent, table } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn site(&self, i: usize) -> &[i32] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[i32]> + '_ {
        self.coords.chunks_exact(self.dim.max(1))
    }

    #[inline]
    pub fn index_of(&self, site: &[i32]) -> Option<usize> {
        if site.len() != self.dim || self.coords.is_empty() {
            return None;
        }
        match &self.lookup {
            Lookup::Grid { lo, extent, table } => {
                let mut off = 0usize;
                for a in 0..self.dim {
                    let r = site[a] - lo[a];
                    if r < 0 || r as usize >= extent[a] {
                        return None;
                    }
                    off = off * extent[a] + r as usize;
                }
                let idx = table[off];
                (idx != ABSENT).then_some(idx as usize)
            }
            Lookup::Sorted => {
                let n = self.len();
                let (mut lo, mut hi) = (0usize, n);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    match self.site(mid).cmp(site) {
                        std::cmp::Ordering::Less => lo = mid + 1,
                        std::cmp::Ordering::Greater => hi = mid,
                        std::cmp::Ordering::Equal => return Some(mid),
                    }
                }
                None
            }
        }
    }

    #[inline]
    pub fn contains(&self, site: &[i32]) -> bool {
        self.index_of(site).is_some()
    }

    pub fn filter(&self, mut keep: impl FnMut(&[i32]) -> bool) -> Self {
        let mut flat = Vec::new();
        for s in self.iter() {
            if keep(s) {
                flat.extend_from_slice(s);
            }
        }
        Self::from_flat(self.dim, flat)
    }

    pub fn union(&self, other: &Region) -> Self {
        let mut flat = self.coords.clone();
        flat.extend_from_slice(&other.coords);
        Self::from_flat(self.dim, flat)
    }

    pub fn difference(&self, other: &Region) -> Self {
        self.filter(|s| !other.contains(s))
    }

    pub fn intersection(&self, other: &Region) -> Self {
        self.filter(|s| other.contains(s))
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.iter().all(|s| other.contains(s))
    }

    /// All sites within ℓ¹ distance `radius` of the region.
    pub fn dilate(&self, radius: u32) -> Self {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let offsets = ball_offsets(self.dim, radius);
        let mut flat = Vec::with_capacity(self.coords.len() * offsets.len());
        for s in self.iter() {
            for o in offsets.chunks_exact(self.dim) {
                flat.extend(s.iter().zip(o).map(|(a, b)| a + b));
            }
        }
        Self::from_flat(self.dim, flat)
    }

    /// Translates every site by `offset`.
    pub fn translate(&self, offset: &[i32]) -> Self {
        let flat = self.iter().flat_map(|s| s.iter().zip(offset).map(|(a, b)| a + b).collect::<Vec<_>>()).collect();
        Self::from_flat(self.dim, flat)
    }

    /// For every site, the indices of its `2d` nearest neighbours inside the
    /// region, laid out as `[+e_1, -e_1, +e_2, -e_2, ...]`; absent entries are `None`.
    pub fn neighbor_table(&self) -> Vec<Option<u32>> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.len() * 2 * d);
        let mut buf = vec![0i32; d];
        for s in self.iter() {
            buf.copy_from_slice(s);
            for a in 0..d {
                for step in [1, -1] {
                    buf[a] += step;
                    out.push(self.index_of(&buf).map(|i| i as u32));
                    buf[a] -= step;
                }
            }
        }
        out
    }

    /// CSV with header `x1,...,xd` and one site per row, in index order.
    pub fn to_csv(&self) -> String {
        let mut out = (1..=self.dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
        out.push('\n');
        for s in self.iter() {
            let row: Vec<String> = s.iter().map(|c| c.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty region CSV".into()))?;
        let dim = header.split(',').count();
        let mut flat = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<i32> = line
                .split(',')
                .map(|t| t.trim().parse::<i32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", row + 2)))?;
            if vals.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: vals.len() });
            }
            flat.extend(vals);
        }
        Ok(Self::from_flat(dim, flat))
    }

    /// SHA-256 over the sorted CSV listing; stable across runs and platforms.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

fn grid_offset(lo: &[i32], extent: &[usize], s: &[i32]) -> usize {
    let mut off = 0usize;
    for a in 0..lo.len() {
        off = off * extent[a] + (s[a] - lo[a]) as usize;
    }
    off
}

fn advance(cursor: &mut [i32], lo: &[i32], extent: &[usize]) {
    for a in (0..cursor.len()).rev() {
        cursor[a] += 1;
        if ((cursor[a] - lo[a]) as usize) < extent[a] {
            return;
        }
        cursor[a] = lo[a];
    }
}

/// Offsets of the ℓ¹ ball of radius `radius`, flat.
fn ball_offsets(dim: usize, radius: u32) -> Vec<i32> {
    let r = radius as i32;
    let cube = Region::from_bounds(dim, &vec![-r; dim], &vec![r; dim]);
    cube.iter().filter(|s| l1_norm(s) <= radius).flatten().copied().collect()
}

/// `B_k(center) = {x : ‖x − center‖₁ ≤ k}`.
pub fn ball(center: &[i32], k: u32) -> Region {
    let dim = center.len();
    let r = k as i32;
    let lo: Vec<i32> = center.iter().map(|c| c - r).collect();
    let hi: Vec<i32> = center.iter().map(|c| c + r).collect();
    Region::from_bounds(dim, &lo, &hi).filter(|s| l1_distance(s, center) <= k)
}

/// Sites of the box with `|x_j| ≤ half_width` for every `j ≥ 1`: a tube along the first axis.
pub fn tube(bx: &LatticeBox, half_width: u32) -> Region {
    let h = half_width as i32;
    bx.sites().filter(|s| s[1..].iter().all(|v| v.abs() <= h))
}

/// `D_ℓ^(k) = B_{k+1} ∖ B_{k−5ℓ}` around `center`, for `0 ≤ ℓ ≤ ⌊k/5⌋`.
pub fn annulus_d(center: &[i32], k: u32, ell: u32) -> Result<Region> {
    if ell > k / 5 {
        return Err(invalid("ell", format!("ℓ = {ell} exceeds ⌊k/5⌋ = {}", k / 5)));
    }
    let inner = k - 5 * ell;
    Ok(ball(center, k + 1).filter(|s| l1_distance(s, center) > inner))
}

/// `Â = {x ∈ A : every nearest neighbour of x is in A}`.
pub fn cluster_interior(pinned: &Region) -> Region {
    let d = pinned.dim();
    let table = pinned.neighbor_table();
    let mut flat = Vec::new();
    for (i, s) in pinned.iter().enumerate() {
        if table[i * 2 * d..(i + 1) * 2 * d].iter().all(Option::is_some) {
            flat.extend_from_slice(s);
        }
    }
    Region::from_flat(d, flat)
}

/// A pinned set inside a box together with its cluster interior.
#[derive(Clone, Debug)]
pub struct PinnedSet {
    pub lattice_box: LatticeBox,
    pub pinned: Region,
    pub interior: Region,
}

impl PinnedSet {
    pub fn new(lattice_box: LatticeBox, pinned: Region) -> Result<Self> {
        if let Some(bad) = pinned.iter().find(|s| !lattice_box.contains(s)) {
            return Err(Error::SiteNotInRegion(bad.to_vec()));
        }
        let interior = cluster_interior(&pinned);
        Ok(Self { lattice_box, pinned, interior })
    }

    /// `V_N ∖ A`.
    pub fn free_set(&self) -> Region {
        self.lattice_box.sites().difference(&self.pinned)
    }
}

/// Graph distance, with an explicit unreachable value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Distance {
    Finite(u32),
    Unreachable,
}

impl Distance {
    pub fn finite(self) -> Option<u32> {
        match self {
            Distance::Finite(v) => Some(v),
            Distance::Unreachable => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Distance::Finite(_))
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(v) => write!(f, "{v}"),
            Distance::Unreachable => write!(f, "inf"),
        }
    }
}

/// Multi-source BFS inside `region` from the listed source indices.
/// Returns per-site distances (`u32::MAX` when unreached).
fn bfs_from(region: &Region, table: &[Option<u32>], sources: impl IntoIterator<Item = usize>) -> Vec<u32> {
    let d2 = 2 * region.dim();
    let mut dist = vec![u32::MAX; region.len()];
    let mut queue = VecDeque::new();
    for s in sources {
        if dist[s] != 0 {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let next = dist[i] + 1;
        for nb in table[i * d2..(i + 1) * d2].iter().flatten() {
            let j = *nb as usize;
            if dist[j] == u32::MAX {
                dist[j] = next;
                queue.push_back(j);
            }
        }
    }
    dist
}

/// `d_E(x, T)`: shortest nearest-neighbour path inside `region` from `x` to any site of `targets`.
pub fn graph_distance(region: &Region, x: &[i32], targets: &Region) -> Result<Distance> {
    let start = region.index_of(x).ok_or_else(|| Error::SiteNotInRegion(x.to_vec()))?;
    if targets.contains(x) {
        return Ok(Distance::Finite(0));
    }
    let table = region.neighbor_table();
    let dist = bfs_from(region, &table, [start]);
    let best = region
        .iter()
        .enumerate()
        .filter(|(_, s)| targets.contains(s))
        .map(|(i, _)| dist[i])
        .min()
        .unwrap_or(u32::MAX);
    Ok(if best == u32::MAX { Distance::Unreachable } else { Distance::Finite(best) })
}

/// Distance from every site of `region` to `targets ∩ region`, measured inside `region`.
pub fn distance_field(region: &Region, targets: &Region) -> Vec<Distance> {
    let table = region.neighbor_table();
    let sources = region.iter().enumerate().filter(|(_, s)| targets.contains(s)).map(|(i, _)| i).collect::<Vec<_>>();
    bfs_from(region, &table, sources)
        .into_iter()
        .map(|v| if v == u32::MAX { Distance::Unreachable } else { Distance::Finite(v) })
        .collect()
}

/// `max_{x ∈ E} d_E(x, Â ∩ E)`; unreachable when `Â ∩ E` is empty or misses a component.
pub fn max_distance_to_interior(region: &Region, pinned: &Region) -> Distance {
    max_distance_from(region, region, pinned)
}

/// `max_{x ∈ sources} d_E(x, Â ∩ E)` for `sources ⊆ E`; sites of `sources` outside `E` are ignored.
pub fn max_distance_from(sources: &Region, region: &Region, pinned: &Region) -> Distance {
    if sources.is_empty() {
        return Distance::Finite(0);
    }
    let interior = cluster_interior(pinned);
    let field = distance_field(region, &interior);
    sources
        .iter()
        .filter_map(|s| region.index_of(s))
        .map(|i| field[i])
        .max()
        .unwrap_or(Distance::Finite(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(lo: i32, hi: i32) -> Region {
        Region::from_bounds(1, &[lo], &[hi])
    }

    #[test]
    fn box_sites_enumerates_lexicographically() {
        let r = box_sites(1, 2).unwrap();
        assert_eq!(r.iter().map(|s| s[0]).collect::<Vec<_>>(), vec![-1, 0, 1]);
        assert_eq!(box_sites(2, 2).unwrap().len(), 9);
        assert_eq!(box_sites(4, 4).unwrap().len(), 625);
        let r = box_sites(2, 2).unwrap();
        assert_eq!(r.site(0), &[-1, -1]);
        assert_eq!(r.site(1), &[-1, 0]);
        assert_eq!(r.site(3), &[0, -1]);
    }

    #[test]
    fn odd_side_rejected() {
        let err = LatticeBox::new(2, 3).unwrap_err();
        assert!(err.to_string().contains("`N`"), "{err}");
    }

    #[test]
    fn outer_boundary_cases() {
        let b = LatticeBox::new(1, 2).unwrap().outer_boundary2();
        assert_eq!(b.iter().map(|s| s[0]).collect::<Vec<_>>(), vec![-3, -2, 2, 3]);
        let b0 = LatticeBox::new(2, 0).unwrap();
        let ob = b0.outer_boundary2();
        assert_eq!(ob.len(), 12);
        let bx = LatticeBox::new(3, 4).unwrap();
        let ob = bx.outer_boundary2();
        assert!(ob.iter().all(|s| !bx.contains(s)));
        assert_eq!(ob.intersection(&bx.sites()).len(), 0);
    }

    #[test]
    fn balls_and_annuli() {
        assert_eq!(ball(&[0, 0], 1).len(), 5);
        assert_eq!(ball(&[0, 0], 0).len(), 1);
        assert_eq!(ball(&[0, 0, 0], 2).len(), 25);
        let d = annulus_d(&[0], 5, 1).unwrap();
        assert_eq!(d.len(), 12);
        assert!(!d.contains(&[0]));
        let shell = annulus_d(&[0, 0], 7, 0).unwrap();
        assert!(shell.iter().all(|s| l1_norm(s) == 8));
        assert!(annulus_d(&[0], 5, 2).is_err());
        let full = annulus_d(&[1, 1], 10, 2).unwrap();
        assert_eq!(full, ball(&[1, 1], 11).difference(&ball(&[1, 1], 0)));
    }

    #[test]
    fn brute_force_ball_count() {
        // enumerate the cube and count ℓ¹ ≤ 2 by hand
        let mut count = 0;
        for x in -2i32..=2 {
            for y in -2i32..=2 {
                for z in -2i32..=2 {
                    if x.abs() + y.abs() + z.abs() <= 2 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 25);
        assert_eq!(ball(&[3, -1, 2], 2).len(), count);
    }

    #[test]
    fn interiors() {
        assert_eq!(cluster_interior(&seg(0, 2)).iter().map(|s| s[0]).collect::<Vec<_>>(), vec![1]);
        assert!(cluster_interior(&seg(4, 4)).is_empty());
        let sq = Region::from_bounds(2, &[0, 0], &[2, 2]);
        let int = cluster_interior(&sq);
        assert_eq!(int.len(), 1);
        assert!(int.contains(&[1, 1]));
    }

    #[test]
    fn distances() {
        let e = seg(0, 9);
        assert_eq!(graph_distance(&e, &[0], &Region::from_sites(1, [[5]])).unwrap(), Distance::Finite(5));
        assert_eq!(graph_distance(&e, &[3], &Region::from_sites(1, [[3]])).unwrap(), Distance::Finite(0));
        let split = seg(0, 3).union(&seg(6, 9));
        assert_eq!(graph_distance(&split, &[0], &Region::from_sites(1, [[8]])).unwrap(), Distance::Unreachable);
        assert!(graph_distance(&split, &[4], &Region::from_sites(1, [[8]])).is_err());
    }

    #[test]
    fn max_distance_examples() {
        let e = seg(0, 4);
        assert_eq!(max_distance_to_interior(&e, &seg(0, 2)), Distance::Finite(3));
        assert_eq!(max_distance_to_interior(&e, &seg(-1, 5)), Distance::Finite(0));
        assert_eq!(max_distance_to_interior(&e, &Region::empty(1)), Distance::Unreachable);
    }

    #[test]
    fn csv_round_trip_and_hash() {
        let r = ball(&[0, 0], 2);
        let back = Region::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.content_hash(), r.content_hash());
        assert_ne!(r.content_hash(), ball(&[0, 0], 1).content_hash());
    }

    #[test]
    fn sorted_fallback_lookup() {
        let r = Region::from_sites(2, [[0, 0], [100_000, 0], [0, 100_000], [3, 4]]);
        assert_eq!(r.len(), 4);
        assert_eq!(r.index_of(&[3, 4]), Some(2));
        assert_eq!(r.index_of(&[100_000, 0]), Some(3));
        assert_eq!(r.index_of(&[1, 1]), None);
    }

    #[test]
    fn dilation_matches_ball() {
        let c = Region::from_sites(3, [[0, 0, 0]]);
        assert_eq!(c.dilate(3), ball(&[0, 0, 0], 3));
    }
}
