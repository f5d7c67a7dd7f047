//! Bernoulli bond configurations, cluster labeling and cluster boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DiameterAcc, LatticeWindow, Point, WindowSpec, MAX_DIM};
use crate::rng::{StreamKey, Threshold};

pub const CONFIG_FORMAT: &str = "percolab-config/1";

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p={p} outside [0, 1]")))
    }
}

/// Uniform words for every edge slot of a window in one sample.
///
/// Thresholding the same words at different `p` yields coupled configurations.
#[derive(Clone, Debug)]
pub struct EdgeWords {
    window: LatticeWindow,
    seed: u64,
    sample_index: u64,
    words: Vec<u64>,
}

impl EdgeWords {
    pub fn new(window: &LatticeWindow) -> Self {
        EdgeWords { window: *window, seed: 0, sample_index: 0, words: vec![u64::MAX; window.slot_count()] }
    }

    pub fn generate(window: &LatticeWindow, seed: u64, sample_index: u64) -> Self {
        let mut w = Self::new(window);
        w.fill(seed, sample_index);
        w
    }

    /// Regenerates in place for another sample.
    pub fn fill(&mut self, seed: u64, sample_index: u64) {
        self.seed = seed;
        self.sample_index = sample_index;
        let w = self.window;
        let d = w.dim();
        let key = StreamKey::new(seed, sample_index);
        let l = w.half_width();
        let mut p: Point = [-l; MAX_DIM];
        for a in d..MAX_DIM {
            p[a] = 0;
        }
        let steps: Vec<u64> = (0..d).map(|a| w.key_step(a)).collect();
        let mut vkey = w.point_key(&p);
        for v in 0..w.vertex_count() {
            for a in 0..d {
                self.words[v * d + a] = if p[a] < l {
                    key.word(LatticeWindow::edge_key_from(vkey, a))
                } else {
                    u64::MAX
                };
            }
            // advance lexicographic counter
            let mut a = d;
            while a > 0 {
                a -= 1;
                if p[a] < l {
                    p[a] += 1;
                    vkey += steps[a];
                    break;
                }
                p[a] = -l;
                vkey -= steps[a] * (2 * l as u64);
            }
        }
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    #[inline]
    pub fn word(&self, slot: usize) -> u64 {
        self.words[slot]
    }

    pub fn configuration(&self, p: f64) -> Result<Configuration> {
        check_p(p)?;
        let t = Threshold::new(p);
        let mut c = Configuration::filled(&self.window, false);
        c.p = p;
        c.seed = self.seed;
        c.sample_index = self.sample_index;
        for s in self.window.edges() {
            if t.admits(self.words[s]) {
                c.bits[s >> 6] |= 1 << (s & 63);
            }
        }
        Ok(c)
    }
}

/// Replay header stored next to a configuration bit blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigHeader {
    pub format: String,
    pub window: WindowSpec,
    pub p: f64,
    pub seed: u64,
    pub sample_index: u64,
    pub edge_count: usize,
    /// Bits are packed LSB-first, one per edge in canonical edge order.
    pub bit_order: String,
}

/// One open/closed bit per edge of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    window: LatticeWindow,
    bits: Vec<u64>,
    p: f64,
    seed: u64,
    sample_index: u64,
}

impl Configuration {
    /// Each edge open independently with probability `p`, keyed by `(seed, sample_index, edge)`.
    pub fn sample(window: &LatticeWindow, p: f64, seed: u64, sample_index: u64) -> Result<Self> {
        check_p(p)?;
        EdgeWords::generate(window, seed, sample_index).configuration(p)
    }

    /// Every edge open (or every edge closed).
    pub fn filled(window: &LatticeWindow, open: bool) -> Self {
        let mut c = Configuration {
            window: *window,
            bits: vec![0; window.slot_count().div_ceil(64)],
            p: if open { 1.0 } else { 0.0 },
            seed: 0,
            sample_index: 0,
        };
        if open {
            for s in window.edges() {
                c.bits[s >> 6] |= 1 << (s & 63);
            }
        }
        c
    }

    /// Hand-built configuration; `open(lower, axis)` decides each edge.
    pub fn from_fn(window: &LatticeWindow, mut open: impl FnMut(&Point, usize) -> bool) -> Self {
        let mut c = Self::filled(window, false);
        c.p = f64::NAN;
        for s in window.edges() {
            let (p, a) = window.decode_edge(s).expect("valid slot");
            if open(&p, a) {
                c.bits[s >> 6] |= 1 << (s & 63);
            }
        }
        c
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }

    #[inline]
    pub fn is_open(&self, slot: usize) -> bool {
        self.bits[slot >> 6] >> (slot & 63) & 1 == 1
    }

    pub fn set_open(&mut self, slot: usize, open: bool) {
        debug_assert!(self.window.is_edge_slot(slot));
        if open {
            self.bits[slot >> 6] |= 1 << (slot & 63);
        } else {
            self.bits[slot >> 6] &= !(1 << (slot & 63));
        }
    }

    pub fn open_count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn header(&self) -> ConfigHeader {
        ConfigHeader {
            format: CONFIG_FORMAT.into(),
            window: self.window.spec(),
            p: self.p,
            seed: self.seed,
            sample_index: self.sample_index,
            edge_count: self.window.edge_count(),
            bit_order: "lsb-first, canonical edge order".into(),
        }
    }

    /// Packs the edge bits in canonical edge order.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.window.edge_count().div_ceil(8)];
        for (i, s) in self.window.edges().enumerate() {
            if self.is_open(s) {
                out[i >> 3] |= 1 << (i & 7);
            }
        }
        out
    }

    pub fn from_blob(header: &ConfigHeader, blob: &[u8]) -> Result<Self> {
        if header.format != CONFIG_FORMAT {
            return Err(Error::InvalidParameter(format!("unknown configuration format {}", header.format)));
        }
        let window = LatticeWindow::from_spec(header.window)?;
        if header.edge_count != window.edge_count() || blob.len() != window.edge_count().div_ceil(8) {
            return Err(Error::InvalidParameter("blob length does not match window".into()));
        }
        let mut c = Self::filled(&window, false);
        c.p = header.p;
        c.seed = header.seed;
        c.sample_index = header.sample_index;
        for (i, s) in window.edges().enumerate() {
            if blob[i >> 3] >> (i & 7) & 1 == 1 {
                c.bits[s >> 6] |= 1 << (s & 63);
            }
        }
        Ok(c)
    }
}

/// Disjoint-set forest whose root is always the smallest member.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect() }
    }

    pub fn reset(&mut self, n: usize) {
        self.parent.clear();
        self.parent.extend(0..n as u32);
    }

    #[inline]
    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let g = self.parent[self.parent[x] as usize];
            self.parent[x] = g;
            x = g as usize;
        }
        x
    }

    #[inline]
    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra < rb {
            self.parent[rb] = ra as u32;
        } else if rb < ra {
            self.parent[ra] = rb as u32;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Smallest vertex index in the cluster.
    pub root: usize,
    pub size: usize,
    pub touches_rim: bool,
    pub extent: DiameterAcc,
}

/// Connected components of the open subgraph of a configuration.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    window: LatticeWindow,
    cluster_of: Vec<u32>,
    clusters: Vec<Cluster>,
}

impl ClusterLabeling {
    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    /// Cluster id of `v`; ids are ordered by root.
    #[inline]
    pub fn cluster_id(&self, v: usize) -> usize {
        self.cluster_of[v] as usize
    }

    #[inline]
    pub fn root(&self, v: usize) -> usize {
        self.clusters[self.cluster_of[v] as usize].root
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn origin_cluster_id(&self) -> usize {
        self.cluster_id(self.window.origin())
    }

    pub fn diameter(&self, id: usize) -> i64 {
        self.clusters[id].extent.diameter(self.window.dim())
    }

    /// Members of cluster `id` in canonical order.
    pub fn members(&self, id: usize) -> Vec<usize> {
        let id = id as u32;
        (0..self.cluster_of.len()).filter(|&v| self.cluster_of[v] == id).collect()
    }

    /// Largest rim-touching cluster (ties: smallest root), the finite-volume `C_inf`.
    pub fn infinite_cluster(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.clusters.iter().enumerate() {
            if c.touches_rim && best.is_none_or(|b| c.size > self.clusters[b].size) {
                best = Some(i);
            }
        }
        best
    }
}

/// Labels the open clusters of `c` by union-find.
pub fn clusters(c: &Configuration) -> ClusterLabeling {
    let w = c.window;
    let d = w.dim();
    let mut uf = UnionFind::new(w.vertex_count());
    for (word_idx, &word) in c.bits.iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let s = word_idx * 64 + bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let v = s / d;
            uf.union(v, v + w.stride(s % d));
        }
    }
    let mut cluster_of = vec![0u32; w.vertex_count()];
    let mut clusters: Vec<Cluster> = Vec::new();
    let l = w.half_width();
    let mut p: Point = [0; MAX_DIM];
    for a in 0..d {
        p[a] = -l;
    }
    for v in 0..w.vertex_count() {
        let r = uf.find(v);
        let id = if r == v {
            clusters.push(Cluster { root: v, size: 0, touches_rim: false, extent: DiameterAcc::default() });
            clusters.len() - 1
        } else {
            cluster_of[r] as usize
        };
        cluster_of[v] = id as u32;
        let cl = &mut clusters[id];
        cl.size += 1;
        cl.extent.add(&p, d);
        if !cl.touches_rim && (0..d).any(|a| p[a].abs() == l) {
            cl.touches_rim = true;
        }
        let mut a = d;
        while a > 0 {
            a -= 1;
            if p[a] < l {
                p[a] += 1;
                break;
            }
            p[a] = -l;
        }
    }
    ClusterLabeling { window: w, cluster_of, clusters }
}

/// Reusable breadth-first explorer over an arbitrary edge predicate.
#[derive(Clone, Debug)]
pub struct Explorer {
    stamp: Vec<u32>,
    generation: u32,
    /// Visit order; the first `len` entries are live.
    queue: Vec<usize>,
    /// Offsets `0..side` of each queued vertex, kept to avoid divisions in the loop.
    offsets: Vec<[u32; MAX_DIM]>,
    len: usize,
    touches_rim: bool,
}

impl Explorer {
    pub fn new(window: &LatticeWindow) -> Self {
        let n = window.vertex_count();
        Explorer {
            stamp: vec![0; n],
            generation: 0,
            queue: vec![0; n],
            offsets: vec![[0; MAX_DIM]; n],
            len: 0,
            touches_rim: false,
        }
    }

    /// Explores the component of `start` in the subgraph of edges where `open(slot)` holds.
    /// Stops early once `stop_at_rim` is set and the rim is reached.
    pub fn explore(
        &mut self,
        w: &LatticeWindow,
        start: usize,
        stop_at_rim: bool,
        open: impl FnMut(usize) -> bool,
    ) -> usize {
        self.run(w, start, open, |_| false, stop_at_rim);
        self.len
    }

    /// Explores without the rim stop but halts as soon as `done(v)` holds for a
    /// reached vertex; returns whether it did.
    pub fn explore_until(
        &mut self,
        w: &LatticeWindow,
        start: usize,
        open: impl FnMut(usize) -> bool,
        done: impl FnMut(usize) -> bool,
    ) -> bool {
        self.run(w, start, open, done, false)
    }

    fn run(
        &mut self,
        w: &LatticeWindow,
        start: usize,
        mut open: impl FnMut(usize) -> bool,
        mut done: impl FnMut(usize) -> bool,
        stop_at_rim: bool,
    ) -> bool {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        let g = self.generation;
        let d = w.dim();
        let last = w.side() as u32 - 1;
        let mut strides = [0usize; MAX_DIM];
        let mut first = [0u32; MAX_DIM];
        for a in 0..d {
            strides[a] = w.stride(a);
            first[a] = ((start / strides[a]) % w.side()) as u32;
        }
        self.touches_rim = false;
        self.stamp[start] = g;
        self.queue[0] = start;
        self.offsets[0] = first;
        let mut len = 1;
        let mut head = 0;
        while head < len {
            let v = self.queue[head];
            let c = self.offsets[head];
            head += 1;
            self.touches_rim |= c[..d].iter().any(|&x| x == 0 || x == last);
            if (stop_at_rim && self.touches_rim) || done(v) {
                self.len = len;
                return true;
            }
            for a in 0..d {
                if c[a] < last {
                    let u = v + strides[a];
                    if self.stamp[u] != g && open(v * d + a) {
                        self.stamp[u] = g;
                        self.queue[len] = u;
                        self.offsets[len] = c;
                        self.offsets[len][a] += 1;
                        len += 1;
                    }
                }
                if c[a] > 0 {
                    let u = v - strides[a];
                    if self.stamp[u] != g && open(u * d + a) {
                        self.stamp[u] = g;
                        self.queue[len] = u;
                        self.offsets[len] = c;
                        self.offsets[len][a] -= 1;
                        len += 1;
                    }
                }
            }
        }
        self.len = len;
        false
    }

    pub fn touches_rim(&self) -> bool {
        self.touches_rim
    }

    pub fn contains(&self, v: usize) -> bool {
        self.stamp[v] == self.generation
    }

    /// Vertices reached by the last exploration (in discovery order).
    pub fn visited(&self) -> &[usize] {
        &self.queue[..self.len]
    }
}

fn membership(w: &LatticeWindow, set: &[usize]) -> Vec<bool> {
    let mut m = vec![false; w.vertex_count()];
    for &v in set {
        m[v] = true;
    }
    m
}

/// Window edges incident to `set` that are not open edges inside `set`.
pub fn edge_boundary(set: &[usize], c: &Configuration) -> Vec<usize> {
    let w = c.window;
    let inside = membership(&w, set);
    let mut out = Vec::new();
    for &v in set {
        w.for_each_neighbor(v, |u, slot| {
            if !(inside[u] && c.is_open(slot)) {
                out.push(slot);
            }
        });
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Edges from `set` to the part of its complement that reaches the window rim.
pub fn minimal_edge_cut(set: &[usize], c: &Configuration) -> Result<Vec<usize>> {
    let w = c.window;
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if set.iter().any(|&v| w.on_rim(v)) {
        return Err(Error::InfiniteCluster);
    }
    let inside = membership(&w, set);
    let outer = rim_flood(&w, |v| !inside[v], |_| true);
    let mut out = Vec::new();
    for &v in set {
        w.for_each_neighbor(v, |u, slot| {
            if outer[u] {
                out.push(slot);
            }
        });
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Vertices reachable from the rim through allowed vertices and passable edges.
pub fn rim_flood(
    w: &LatticeWindow,
    allowed: impl Fn(usize) -> bool,
    passable: impl Fn(usize) -> bool,
) -> Vec<bool> {
    let mut seen = vec![false; w.vertex_count()];
    let mut queue: Vec<usize> = Vec::new();
    for v in 0..w.vertex_count() {
        if w.on_rim(v) && allowed(v) {
            seen[v] = true;
            queue.push(v);
        }
    }
    let mut head = 0;
    while head < queue.len() {
        let v = queue[head];
        head += 1;
        w.for_each_neighbor(v, |u, slot| {
            if !seen[u] && allowed(u) && passable(slot) {
                seen[u] = true;
                queue.push(u);
            }
        });
    }
    seen
}

/// Closed edges joining the origin's finite cluster to the infinite one, ascending.
pub fn touching_edges(c: &Configuration, labeling: &ClusterLabeling) -> Result<Vec<usize>> {
    let w = c.window;
    let co = labeling.origin_cluster_id();
    if labeling.cluster(co).touches_rim {
        return Err(Error::InfiniteCluster);
    }
    let ci = labeling.infinite_cluster().ok_or(Error::NoInfiniteCluster)?;
    let mut out = Vec::new();
    for v in labeling.members(co) {
        w.for_each_neighbor(v, |u, slot| {
            if labeling.cluster_id(u) == ci {
                out.push(slot);
            }
        });
    }
    out.sort_unstable();
    Ok(out)
}

/// `phi(C_o, C_inf)`.
pub fn touching_edge_count(c: &Configuration, labeling: &ClusterLabeling) -> Result<usize> {
    touching_edges(c, labeling).map(|e| e.len())
}
