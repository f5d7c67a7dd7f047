//! Geometry of a finite window of the hypercubic lattice and of its
//! renormalized box lattice.
//!
//! Vertices of the window are the points of `[-L, L]^d` with
//! `L = N*R + floor(3N/4)`, so that every box `B(x)` with `|x|_inf <= R`
//! fits inside. Vertices are indexed lexicographically (first coordinate
//! most significant). An edge is encoded by its lower endpoint and the axis
//! it points along: `slot = vertex * d + axis`. Slots whose lower endpoint
//! sits on the upper face of that axis do not correspond to edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 4;

/// A lattice point; coordinates past the window dimension are zero.
pub type Point = [i64; MAX_DIM];

const KEY_BITS: u32 = 15;
const KEY_OFFSET: i64 = 1 << (KEY_BITS - 1);

/// The three numbers that fix a window: dimension, box scale and box radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: i64,
    #[serde(rename = "R")]
    pub r: i64,
}

/// Integer coordinates of a box in the renormalized lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoxId(pub Point);

impl BoxId {
    pub fn new(coords: &[i64]) -> Self {
        let mut p = [0; MAX_DIM];
        p[..coords.len()].copy_from_slice(coords);
        BoxId(p)
    }

    pub fn origin() -> Self {
        BoxId([0; MAX_DIM])
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn linf_distance(&self, other: &BoxId) -> i64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// Nearest neighbours only (`2d` of them).
    Axis,
    /// Boxes that intersect (`3^d - 1` of them).
    Diagonal,
}

/// Inclusive axis-aligned product of integer intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extent {
    pub lo: Point,
    pub hi: Point,
}

impl Extent {
    pub fn contains(&self, p: &Point, dim: usize) -> bool {
        (0..dim).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }

    pub fn width(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis] + 1
    }

    pub fn volume(&self, dim: usize) -> usize {
        (0..dim).map(|a| self.width(a).max(0) as usize).product()
    }

    pub fn intersect(&self, other: &Extent, dim: usize) -> Option<Extent> {
        let mut out = *self;
        for a in 0..dim {
            out.lo[a] = self.lo[a].max(other.lo[a]);
            out.hi[a] = self.hi[a].min(other.hi[a]);
            if out.lo[a] > out.hi[a] {
                return None;
            }
        }
        Some(out)
    }
}

/// The `2d` faces of an extent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Faces {
    /// `faces[2*axis]` is the low face of `axis`, `faces[2*axis + 1]` the high one.
    pub faces: Vec<Vec<usize>>,
    /// Axes of width one, where both faces are the same layer.
    pub degenerate_axes: Vec<usize>,
}

/// Running min/max of the `2^(d-1)` functionals `x_0 + sum_i s_i x_i`.
///
/// The L1 diameter of a set equals the largest spread of these functionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiameterAcc {
    lo: [i32; 1 << (MAX_DIM - 1)],
    hi: [i32; 1 << (MAX_DIM - 1)],
}

impl Default for DiameterAcc {
    fn default() -> Self {
        DiameterAcc { lo: [i32::MAX; 8], hi: [i32::MIN; 8] }
    }
}

impl DiameterAcc {
    #[inline]
    pub fn add(&mut self, p: &Point, dim: usize) {
        for s in 0..(1usize << (dim - 1)) {
            let mut f = p[0];
            for a in 1..dim {
                if s >> (a - 1) & 1 == 1 {
                    f -= p[a];
                } else {
                    f += p[a];
                }
            }
            let f = f as i32;
            if f < self.lo[s] {
                self.lo[s] = f;
            }
            if f > self.hi[s] {
                self.hi[s] = f;
            }
        }
    }

    pub fn merge(&mut self, other: &DiameterAcc) {
        for s in 0..self.lo.len() {
            self.lo[s] = self.lo[s].min(other.lo[s]);
            self.hi[s] = self.hi[s].max(other.hi[s]);
        }
    }

    /// Zero for an empty accumulator.
    pub fn diameter(&self, dim: usize) -> i64 {
        (0..(1usize << (dim - 1)))
            .filter(|&s| self.hi[s] >= self.lo[s])
            .map(|s| (self.hi[s] as i64) - (self.lo[s] as i64))
            .max()
            .unwrap_or(0)
    }
}

/// L1 (graph-distance) diameter of a nonempty point set.
pub fn l1_diameter(points: &[Point], dim: usize) -> Result<i64> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut acc = DiameterAcc::default();
    for p in points {
        acc.add(p, dim);
    }
    Ok(acc.diameter(dim))
}

/// `5 * diam >= N`, the integer form of "diameter at least N/5".
#[inline]
pub fn meets_fifth(diameter: i64, scale: i64) -> bool {
    5 * diameter >= scale
}

/// Finite window of `L^d` together with its box lattice `[-R, R]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeWindow {
    dim: usize,
    scale: i64,
    box_radius: i64,
    half_box: i64,
    half_width: i64,
    side: usize,
    strides: [usize; MAX_DIM],
    vertex_count: usize,
    box_side: usize,
    box_strides: [usize; MAX_DIM],
    box_count: usize,
}

impl LatticeWindow {
    pub fn new(d: usize, n: i64, r: i64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidParameter(format!("dimension {d} not in 2..={MAX_DIM}")));
        }
        if n < 5 {
            return Err(Error::InvalidParameter(format!("box scale N={n} must be at least 5")));
        }
        if r < 3 {
            return Err(Error::InvalidParameter(format!("box radius R={r} must be at least 3")));
        }
        let half_box = 3 * n / 4;
        let half_width = n * r + half_box;
        if half_width >= KEY_OFFSET {
            return Err(Error::InvalidParameter(format!("window half-width {half_width} too large")));
        }
        let side = (2 * half_width + 1) as usize;
        let vertex_count = side
            .checked_pow(d as u32)
            .filter(|&v| v < u32::MAX as usize / MAX_DIM)
            .ok_or_else(|| Error::InvalidParameter("window too large".into()))?;
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for a in (0..d).rev() {
            strides[a] = s;
            s *= side;
        }
        let box_side = (2 * r + 1) as usize;
        let mut box_strides = [0; MAX_DIM];
        let mut s = 1;
        for a in (0..d).rev() {
            box_strides[a] = s;
            s *= box_side;
        }
        Ok(LatticeWindow {
            dim: d,
            scale: n,
            box_radius: r,
            half_box,
            half_width,
            side,
            strides,
            vertex_count,
            box_side,
            box_strides,
            box_count: s,
        })
    }

    pub fn from_spec(spec: WindowSpec) -> Result<Self> {
        Self::new(spec.d, spec.n, spec.r)
    }

    pub fn spec(&self) -> WindowSpec {
        WindowSpec { d: self.dim, n: self.scale, r: self.box_radius }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    /// Box scale `N`.
    pub fn scale(&self) -> i64 {
        self.scale
    }
    /// Box radius `R`.
    pub fn box_radius(&self) -> i64 {
        self.box_radius
    }
    /// `floor(3N/4)`.
    pub fn half_box(&self) -> i64 {
        self.half_box
    }
    /// `L`: vertex coordinates range over `[-L, L]`.
    pub fn half_width(&self) -> i64 {
        self.half_width
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }
    /// Number of edge slots (`vertex_count * d`), including unused ones.
    pub fn slot_count(&self) -> usize {
        self.vertex_count * self.dim
    }
    pub fn edge_count(&self) -> usize {
        self.dim * (self.side - 1) * self.side.pow(self.dim as u32 - 1)
    }

    pub fn coords(&self, v: usize) -> Point {
        let mut p = [0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = ((v / self.strides[a]) % self.side) as i64 - self.half_width;
        }
        p
    }

    #[inline]
    pub fn coord(&self, v: usize, axis: usize) -> i64 {
        ((v / self.strides[axis]) % self.side) as i64 - self.half_width
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim).all(|a| p[a].abs() <= self.half_width)
    }

    pub fn index_of(&self, p: &Point) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        Some((0..self.dim).map(|a| (p[a] + self.half_width) as usize * self.strides[a]).sum())
    }

    pub fn origin(&self) -> usize {
        self.index_of(&[0; MAX_DIM]).expect("origin inside window")
    }

    /// True when `v` lies on the outermost vertex layer.
    #[inline]
    pub fn on_rim(&self, v: usize) -> bool {
        (0..self.dim).any(|a| {
            let c = (v / self.strides[a]) % self.side;
            c == 0 || c == self.side - 1
        })
    }

    /// Neighbour of `v` one step along `axis` (`up` selects the direction).
    #[inline]
    pub fn step(&self, v: usize, axis: usize, up: bool) -> Option<usize> {
        let c = (v / self.strides[axis]) % self.side;
        if up {
            (c + 1 < self.side).then(|| v + self.strides[axis])
        } else {
            (c > 0).then(|| v - self.strides[axis])
        }
    }

    /// Calls `f(neighbour, edge_slot)` for every lattice neighbour of `v` in the window.
    #[inline]
    pub fn for_each_neighbor(&self, v: usize, mut f: impl FnMut(usize, usize)) {
        for a in 0..self.dim {
            let c = (v / self.strides[a]) % self.side;
            if c + 1 < self.side {
                f(v + self.strides[a], v * self.dim + a);
            }
            if c > 0 {
                let w = v - self.strides[a];
                f(w, w * self.dim + a);
            }
        }
    }

    pub fn encode_edge(&self, lower: &Point, axis: usize) -> Option<usize> {
        if axis >= self.dim || lower[axis] >= self.half_width {
            return None;
        }
        self.index_of(lower).map(|v| v * self.dim + axis)
    }

    pub fn is_edge_slot(&self, slot: usize) -> bool {
        slot < self.slot_count() && {
            let (v, a) = (slot / self.dim, slot % self.dim);
            (v / self.strides[a]) % self.side + 1 < self.side
        }
    }

    pub fn decode_edge(&self, slot: usize) -> Option<(Point, usize)> {
        self.is_edge_slot(slot).then(|| (self.coords(slot / self.dim), slot % self.dim))
    }

    pub fn edge_endpoints(&self, slot: usize) -> Option<(usize, usize)> {
        self.is_edge_slot(slot).then(|| {
            let v = slot / self.dim;
            (v, v + self.strides[slot % self.dim])
        })
    }

    /// All edge slots in canonical order (lower endpoint, then axis).
    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.slot_count()).filter(move |&s| self.is_edge_slot(s))
    }

    /// Window-independent key of a vertex.
    #[inline]
    pub fn point_key(&self, p: &Point) -> u64 {
        let mut k = 0u64;
        for a in 0..self.dim {
            k = (k << KEY_BITS) | (p[a] + KEY_OFFSET) as u64;
        }
        k
    }

    /// Key shift for a unit step along `axis` in [`point_key`](Self::point_key) space.
    #[inline]
    pub fn key_step(&self, axis: usize) -> u64 {
        1u64 << (KEY_BITS * (self.dim - 1 - axis) as u32)
    }

    /// Window-independent key of the edge in `slot`.
    #[inline]
    pub fn edge_key(&self, slot: usize) -> u64 {
        let v = slot / self.dim;
        Self::edge_key_from(self.point_key(&self.coords(v)), slot % self.dim)
    }

    #[inline]
    pub fn edge_key_from(lower_key: u64, axis: usize) -> u64 {
        (lower_key << 2) | axis as u64
    }

    // ---- boxes -----------------------------------------------------------

    pub fn box_count(&self) -> usize {
        self.box_count
    }
    pub fn box_side(&self) -> usize {
        self.box_side
    }

    pub fn box_in_bounds(&self, b: &BoxId) -> bool {
        (0..self.dim).all(|a| b.0[a].abs() <= self.box_radius) && b.0[self.dim..].iter().all(|&c| c == 0)
    }

    pub fn box_index(&self, b: &BoxId) -> Option<usize> {
        if !self.box_in_bounds(b) {
            return None;
        }
        Some((0..self.dim).map(|a| (b.0[a] + self.box_radius) as usize * self.box_strides[a]).sum())
    }

    pub fn box_id(&self, idx: usize) -> BoxId {
        let mut p = [0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = ((idx / self.box_strides[a]) % self.box_side) as i64 - self.box_radius;
        }
        BoxId(p)
    }

    pub fn origin_box(&self) -> usize {
        self.box_index(&BoxId::origin()).expect("origin box in range")
    }

    /// Boxes on the outer layer of the box range (`|x|_inf = R`).
    pub fn box_on_rim(&self, idx: usize) -> bool {
        (0..self.dim).any(|a| {
            let c = (idx / self.box_strides[a]) % self.box_side;
            c == 0 || c == self.box_side - 1
        })
    }

    fn check_box(&self, b: &BoxId) -> Result<()> {
        if self.box_in_bounds(b) {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds(format!("{:?}", &b.0[..self.dim])))
        }
    }

    /// Extent of `B(b) = { y : |y - N b|_inf <= floor(3N/4) }`.
    pub fn box_extent(&self, b: &BoxId) -> Result<Extent> {
        self.check_box(b)?;
        Ok(self.box_extent_unchecked(b))
    }

    pub(crate) fn box_extent_unchecked(&self, b: &BoxId) -> Extent {
        let mut e = Extent { lo: [0; MAX_DIM], hi: [0; MAX_DIM] };
        for a in 0..self.dim {
            e.lo[a] = self.scale * b.0[a] - self.half_box;
            e.hi[a] = self.scale * b.0[a] + self.half_box;
        }
        e
    }

    pub fn box_extent_at(&self, idx: usize) -> Extent {
        self.box_extent_unchecked(&self.box_id(idx))
    }

    pub fn box_vertices(&self, b: &BoxId) -> Result<Vec<usize>> {
        let e = self.box_extent(b)?;
        Ok(self.extent_vertices(&e))
    }

    /// Extent of `B(x) ∩ B(y)`, if nonempty. `y` may lie outside the box range.
    pub fn overlap_extent(&self, x: &BoxId, y: &BoxId) -> Option<Extent> {
        self.box_extent_unchecked(x).intersect(&self.box_extent_unchecked(y), self.dim)
    }

    /// Vertices of `B(x) ∩ B(y)`; empty exactly when `|x - y|_inf >= 2`.
    pub fn box_overlap(&self, x: &BoxId, y: &BoxId) -> Result<Vec<usize>> {
        self.check_box(x)?;
        self.check_box(y)?;
        if x == y {
            return Err(Error::InvalidParameter("overlap of a box with itself".into()));
        }
        Ok(self.overlap_extent(x, y).map(|e| self.extent_vertices(&e)).unwrap_or_default())
    }

    /// Window vertices inside `e`, in canonical order.
    pub fn extent_vertices(&self, e: &Extent) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_extent(e, |v, _| out.push(v));
        out
    }

    /// Visits window vertices of `e` in lexicographic order with their coordinates.
    pub fn for_each_in_extent(&self, e: &Extent, mut f: impl FnMut(usize, &Point)) {
        let mut clipped = *e;
        for a in 0..self.dim {
            clipped.lo[a] = e.lo[a].max(-self.half_width);
            clipped.hi[a] = e.hi[a].min(self.half_width);
            if clipped.lo[a] > clipped.hi[a] {
                return;
            }
        }
        let mut p = clipped.lo;
        loop {
            let v = self.index_of(&p).expect("clipped point inside window");
            f(v, &p);
            let mut a = self.dim;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if p[a] < clipped.hi[a] {
                    p[a] += 1;
                    break;
                }
                p[a] = clipped.lo[a];
            }
        }
    }

    /// Offsets of the box-graph neighbourhood for `mode`.
    pub fn box_offsets(&self, mode: Adjacency) -> Vec<Point> {
        let mut out = Vec::new();
        match mode {
            Adjacency::Axis => {
                for a in 0..self.dim {
                    for s in [-1, 1] {
                        let mut p = [0; MAX_DIM];
                        p[a] = s;
                        out.push(p);
                    }
                }
            }
            Adjacency::Diagonal => {
                let total = 3usize.pow(self.dim as u32);
                for code in 0..total {
                    let mut p = [0; MAX_DIM];
                    let mut c = code;
                    for a in 0..self.dim {
                        p[a] = (c % 3) as i64 - 1;
                        c /= 3;
                    }
                    if p.iter().any(|&x| x != 0) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Neighbouring boxes inside the box range.
    pub fn box_neighbors(&self, b: &BoxId, mode: Adjacency) -> Result<Vec<BoxId>> {
        self.check_box(b)?;
        Ok(self
            .box_offsets(mode)
            .into_iter()
            .map(|o| {
                let mut q = b.0;
                for a in 0..self.dim {
                    q[a] += o[a];
                }
                BoxId(q)
            })
            .filter(|q| self.box_in_bounds(q))
            .collect())
    }

    /// Index-level neighbour walk over the box range, used by the flood fills.
    #[inline]
    pub fn for_each_box_neighbor(&self, idx: usize, mode: Adjacency, mut f: impl FnMut(usize)) {
        match mode {
            Adjacency::Axis => {
                for a in 0..self.dim {
                    let c = (idx / self.box_strides[a]) % self.box_side;
                    if c + 1 < self.box_side {
                        f(idx + self.box_strides[a]);
                    }
                    if c > 0 {
                        f(idx - self.box_strides[a]);
                    }
                }
            }
            Adjacency::Diagonal => {
                let mut c = [0usize; MAX_DIM];
                for a in 0..self.dim {
                    c[a] = (idx / self.box_strides[a]) % self.box_side;
                }
                let total = 3usize.pow(self.dim as u32);
                'code: for code in 0..total {
                    if code == total / 2 {
                        continue;
                    }
                    let mut k = code;
                    let mut j = 0usize;
                    for a in 0..self.dim {
                        let off = (k % 3) as isize - 1;
                        k /= 3;
                        let q = c[a] as isize + off;
                        if q < 0 || q >= self.box_side as isize {
                            continue 'code;
                        }
                        j += q as usize * self.box_strides[a];
                    }
                    f(j);
                }
            }
        }
    }

    /// The `2d` faces of an extent (clipped to the window).
    pub fn box_faces(&self, e: &Extent) -> Faces {
        let mut faces = vec![Vec::new(); 2 * self.dim];
        self.for_each_in_extent(e, |v, p| {
            for a in 0..self.dim {
                if p[a] == e.lo[a] {
                    faces[2 * a].push(v);
                }
                if p[a] == e.hi[a] {
                    faces[2 * a + 1].push(v);
                }
            }
        });
        let degenerate_axes = (0..self.dim).filter(|&a| e.lo[a] == e.hi[a]).collect();
        Faces { faces, degenerate_axes }
    }
}
