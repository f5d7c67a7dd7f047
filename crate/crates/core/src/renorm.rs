//! Coarse-graining to the box lattice: substantial boxes, internal boundaries,
//! good boxes and the uniqueness property of good components.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{meets_fifth, Adjacency, BoxId, DiameterAcc, Extent, LatticeWindow, Point, MAX_DIM};
use crate::percolation::{ClusterLabeling, Configuration};
use crate::rng::{StreamKey, Threshold};
use crate::stats::{wilson, Interval, Z95};

const NONE: u32 = u32::MAX;

/// Which part of the good-box definition failed first (checked in the order a, c, b).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Failure {
    Good = 0,
    NoCrossing = 1,
    OverlapCrossing = 2,
    ExtraCluster = 3,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LocalComp {
    pub size: usize,
    pub faces: u8,
    pub extent: DiameterAcc,
    /// Smallest global vertex of the component.
    pub first: usize,
}

/// Components of the open subgraph induced on a member set inside an extent.
#[derive(Clone, Debug, Default)]
pub(crate) struct LocalScan {
    parent: Vec<u32>,
    global: Vec<usize>,
    label: Vec<u32>,
    comps: Vec<LocalComp>,
    lo: Point,
    lstride: [usize; MAX_DIM],
}

impl LocalScan {
    fn find(parent: &mut [u32], mut x: usize) -> usize {
        while parent[x] as usize != x {
            let g = parent[parent[x] as usize];
            parent[x] = g;
            x = g as usize;
        }
        x
    }

    fn local_index(&self, p: &Point, d: usize) -> usize {
        (0..d).map(|a| (p[a] - self.lo[a]) as usize * self.lstride[a]).sum()
    }

    /// Label of the point, or `NONE` if it is not a member.
    fn label_at(&self, p: &Point, d: usize) -> u32 {
        self.label[self.local_index(p, d)]
    }

    fn run(
        &mut self,
        w: &LatticeWindow,
        e: &Extent,
        member: impl Fn(usize, &Point) -> bool,
        open: &impl Fn(usize) -> bool,
    ) {
        let d = w.dim();
        let mut s = 1;
        for a in (0..d).rev() {
            self.lstride[a] = s;
            s *= e.width(a) as usize;
        }
        let vol = s;
        self.lo = e.lo;
        self.parent.clear();
        self.global.clear();
        self.label.clear();
        self.label.resize(vol, NONE);
        self.comps.clear();
        let mut faces_of: Vec<u8> = Vec::with_capacity(vol);
        let mut points: Vec<Point> = Vec::with_capacity(vol);
        w.for_each_in_extent(e, |v, p| {
            let i = self.parent.len();
            self.parent.push(if member(v, p) { i as u32 } else { NONE });
            self.global.push(v);
            points.push(*p);
            let mut f = 0u8;
            for a in 0..d {
                if p[a] == e.lo[a] {
                    f |= 1 << (2 * a);
                }
                if p[a] == e.hi[a] {
                    f |= 1 << (2 * a + 1);
                }
            }
            faces_of.push(f);
        });
        debug_assert_eq!(self.parent.len(), vol);
        for i in 0..vol {
            if self.parent[i] == NONE {
                continue;
            }
            let p = points[i];
            let g = self.global[i];
            for a in 0..d {
                if p[a] < e.hi[a] {
                    let j = i + self.lstride[a];
                    if self.parent[j] != NONE && open(g * d + a) {
                        let (ri, rj) = (Self::find(&mut self.parent, i), Self::find(&mut self.parent, j));
                        if ri < rj {
                            self.parent[rj] = ri as u32;
                        } else if rj < ri {
                            self.parent[ri] = rj as u32;
                        }
                    }
                }
            }
        }
        for i in 0..vol {
            if self.parent[i] == NONE {
                continue;
            }
            let r = Self::find(&mut self.parent, i);
            let id = if r == i {
                self.comps.push(LocalComp {
                    size: 0,
                    faces: 0,
                    extent: DiameterAcc::default(),
                    first: self.global[i],
                });
                (self.comps.len() - 1) as u32
            } else {
                self.label[r]
            };
            self.label[i] = id;
            let c = &mut self.comps[id as usize];
            c.size += 1;
            c.faces |= faces_of[i];
            c.extent.add(&points[i], d);
        }
    }
}

fn all_faces(d: usize) -> u8 {
    ((1u16 << (2 * d)) - 1) as u8
}

/// Outcome of evaluating one box.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BoxEval {
    pub failure: Failure,
    /// First vertex of the crossing component, when one exists.
    pub crossing: Option<usize>,
    /// First vertices of the components of diameter at least N/5.
    pub substantial: Vec<usize>,
}

/// Reusable workspace for box evaluations.
#[derive(Clone, Debug, Default)]
pub(crate) struct BoxScanner {
    outer: LocalScan,
    inner: LocalScan,
}

impl BoxScanner {
    pub fn evaluate(&mut self, w: &LatticeWindow, b: &BoxId, open: &impl Fn(usize) -> bool) -> BoxEval {
        let d = w.dim();
        let n = w.scale();
        let e = w.box_extent_unchecked(b);
        self.outer.run(w, &e, |_, _| true, open);
        let full = all_faces(d);
        let comps = &self.outer.comps;
        let substantial: Vec<usize> = comps
            .iter()
            .filter(|c| meets_fifth(c.extent.diameter(d), n))
            .map(|c| c.first)
            .collect();
        let Some(k) = comps.iter().position(|c| c.faces == full) else {
            return BoxEval { failure: Failure::NoCrossing, crossing: None, substantial };
        };
        let crossing = Some(comps[k].first);
        let extra = comps
            .iter()
            .enumerate()
            .any(|(i, c)| i != k && meets_fifth(c.extent.diameter(d), n));
        if extra {
            return BoxEval { failure: Failure::ExtraCluster, crossing, substantial };
        }
        for delta in w.box_offsets(Adjacency::Diagonal) {
            let mut o = e;
            for a in 0..d {
                match delta[a] {
                    1 => o.lo[a] += n,
                    -1 => o.hi[a] -= n,
                    _ => {}
                }
            }
            let outer = &self.outer;
            let kk = k as u32;
            self.inner.run(w, &o, |_, p| outer.label_at(p, d) == kk, open);
            if !self.inner.comps.iter().any(|c| c.faces == full) {
                return BoxEval { failure: Failure::OverlapCrossing, crossing, substantial };
            }
        }
        BoxEval { failure: Failure::Good, crossing, substantial }
    }

    /// Whether some component of `member ∩ B(b)` (open edges only) has diameter at least N/5.
    pub fn substantial_for(
        &mut self,
        w: &LatticeWindow,
        b: &BoxId,
        member: impl Fn(usize) -> bool,
        open: &impl Fn(usize) -> bool,
    ) -> bool {
        let e = w.box_extent_unchecked(b);
        let d = w.dim();
        self.outer.run(w, &e, |v, _| member(v), open);
        self.outer.comps.iter().any(|c| meets_fifth(c.extent.diameter(d), w.scale()))
    }
}

fn check_box(w: &LatticeWindow, b: &BoxId) -> Result<()> {
    if w.box_in_bounds(b) {
        Ok(())
    } else {
        Err(Error::BoxOutOfBounds(format!("{:?}", &b.0[..w.dim()])))
    }
}

/// `5 * diam >= N` for some component of `cluster ∩ B(b)`; the cluster is named by its root.
pub fn is_substantial(b: &BoxId, root: usize, c: &Configuration, labeling: &ClusterLabeling) -> Result<bool> {
    let w = c.window();
    check_box(w, b)?;
    Ok(BoxScanner::default().substantial_for(w, b, |v| labeling.root(v) == root, &|s| c.is_open(s)))
}

/// The good-box test for a single box.
pub fn is_good(b: &BoxId, c: &Configuration) -> Result<bool> {
    Ok(box_failure(b, c)? == Failure::Good)
}

pub fn box_failure(b: &BoxId, c: &Configuration) -> Result<Failure> {
    let w = c.window();
    check_box(w, b)?;
    Ok(BoxScanner::default().evaluate(w, b, &|s| c.is_open(s)).failure)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxStatus {
    pub good: bool,
    pub failure: Failure,
    /// Root of the global cluster containing the crossing component, for good boxes.
    pub crossing_root: Option<usize>,
    /// Roots of the clusters for which this box is substantial, ascending.
    pub substantial: Vec<usize>,
}

/// Good/bad status of every box in the box range.
#[derive(Clone, Debug)]
pub struct BoxClassification {
    window: LatticeWindow,
    statuses: Vec<BoxStatus>,
}

impl BoxClassification {
    pub fn classify(c: &Configuration, labeling: &ClusterLabeling) -> Self {
        let w = *c.window();
        let mut scanner = BoxScanner::default();
        let open = |s: usize| c.is_open(s);
        let statuses = (0..w.box_count())
            .map(|i| {
                let ev = scanner.evaluate(&w, &w.box_id(i), &open);
                let good = ev.failure == Failure::Good;
                let mut substantial: Vec<usize> = ev.substantial.iter().map(|&v| labeling.root(v)).collect();
                substantial.sort_unstable();
                substantial.dedup();
                BoxStatus {
                    good,
                    failure: ev.failure,
                    crossing_root: if good { ev.crossing.map(|v| labeling.root(v)) } else { None },
                    substantial,
                }
            })
            .collect();
        BoxClassification { window: w, statuses }
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn status(&self, idx: usize) -> &BoxStatus {
        &self.statuses[idx]
    }

    pub fn statuses(&self) -> &[BoxStatus] {
        &self.statuses
    }

    #[inline]
    pub fn is_good(&self, idx: usize) -> bool {
        self.statuses[idx].good
    }

    pub fn good_count(&self) -> usize {
        self.statuses.iter().filter(|s| s.good).count()
    }

    /// Boxes where the cluster with this root is substantial.
    pub fn substantial_boxes(&self, root: usize) -> Vec<usize> {
        (0..self.statuses.len())
            .filter(|&i| self.statuses[i].substantial.binary_search(&root).is_ok())
            .collect()
    }

    /// `⊠`-components of good boxes.
    pub fn good_components(&self) -> Vec<Vec<usize>> {
        components(&self.window, |i| self.statuses[i].good, Adjacency::Diagonal)
    }

    /// CSV rows: box coordinates, status, failure code.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let d = self.window.dim();
        let mut wr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        header.push("status".into());
        header.push("failure".into());
        wr.write_record(&header)?;
        for (i, s) in self.statuses.iter().enumerate() {
            let b = self.window.box_id(i);
            let mut row: Vec<String> = b.0[..d].iter().map(|x| x.to_string()).collect();
            row.push(if s.good { "good" } else { "bad" }.into());
            row.push((s.failure as u8).to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Connected components (in canonical order) of the boxes selected by `member`.
pub fn components(w: &LatticeWindow, member: impl Fn(usize) -> bool, mode: Adjacency) -> Vec<Vec<usize>> {
    let mut seen = vec![false; w.box_count()];
    let mut out = Vec::new();
    for s in 0..w.box_count() {
        if seen[s] || !member(s) {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut head = 0;
        while head < comp.len() {
            let b = comp[head];
            head += 1;
            w.for_each_box_neighbor(b, mode, |j| {
                if !seen[j] && member(j) {
                    seen[j] = true;
                    comp.push(j);
                }
            });
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Boxes outside `member` reachable from the box rim through non-members.
pub fn outer_complement(w: &LatticeWindow, member: &[bool], mode: Adjacency) -> Vec<bool> {
    let mut outer = vec![false; w.box_count()];
    let mut queue: Vec<usize> = (0..w.box_count()).filter(|&i| w.box_on_rim(i) && !member[i]).collect();
    for &i in &queue {
        outer[i] = true;
    }
    let mut head = 0;
    while head < queue.len() {
        let b = queue[head];
        head += 1;
        w.for_each_box_neighbor(b, mode, |j| {
            if !outer[j] && !member[j] {
                outer[j] = true;
                queue.push(j);
            }
        });
    }
    outer
}

/// `C(N)` and its internal boundary for one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct SubstantialSet {
    pub root: usize,
    pub scale: i64,
    /// Box indices of `C(N)`, ascending.
    pub boxes: Vec<usize>,
    /// Members of `C(N)` adjacent to the rim-reaching part of the box complement.
    pub boundary: Vec<usize>,
    /// `C(N)` reaches the box rim or the cluster reaches the vertex rim.
    pub margin_violation: bool,
}

pub fn substantial_set(root: usize, labeling: &ClusterLabeling, classification: &BoxClassification) -> SubstantialSet {
    let w = classification.window();
    let boxes = classification.substantial_boxes(root);
    substantial_set_from_boxes(w, root, boxes, labeling.cluster(labeling.cluster_id(root)).touches_rim)
}

pub(crate) fn substantial_set_from_boxes(
    w: &LatticeWindow,
    root: usize,
    boxes: Vec<usize>,
    cluster_on_rim: bool,
) -> SubstantialSet {
    let mut member = vec![false; w.box_count()];
    for &b in &boxes {
        member[b] = true;
    }
    let outer = outer_complement(w, &member, Adjacency::Axis);
    let boundary: Vec<usize> = boxes
        .iter()
        .copied()
        .filter(|&b| {
            let mut hit = false;
            w.for_each_box_neighbor(b, Adjacency::Axis, |j| hit |= outer[j]);
            hit
        })
        .collect();
    let margin_violation = cluster_on_rim || boxes.iter().any(|&b| w.box_on_rim(b));
    SubstantialSet { root, scale: w.scale(), boxes, boundary, margin_violation }
}

/// Whether a box set is connected under `mode` (the empty set counts as connected).
pub fn is_connected(w: &LatticeWindow, set: &[usize], mode: Adjacency) -> bool {
    if set.is_empty() {
        return true;
    }
    let mut member = vec![false; w.box_count()];
    for &b in set {
        member[b] = true;
    }
    components(w, |i| member[i], mode).len() == 1
}

/// `∂C(N)` is `⊠`-connected.
pub fn check_timar(set: &SubstantialSet, w: &LatticeWindow) -> Result<bool> {
    if set.margin_violation {
        return Err(Error::MarginViolation("substantial set reaches the box rim".into()));
    }
    Ok(is_connected(w, &set.boundary, Adjacency::Diagonal))
}

/// No box of `∂C(N)` is good.
pub fn boundary_is_bad(set: &SubstantialSet, classification: &BoxClassification) -> bool {
    set.boundary.iter().all(|&b| !classification.is_good(b))
}

/// Exactly one cluster is substantial somewhere in the good component, and it is substantial everywhere in it.
pub fn check_star(component: &[usize], classification: &BoxClassification) -> Result<bool> {
    if component.iter().any(|&b| !classification.is_good(b)) {
        return Err(Error::Precondition("component contains a bad box".into()));
    }
    let mut roots: Vec<usize> = component
        .iter()
        .flat_map(|&b| classification.status(b).substantial.iter().copied())
        .collect();
    roots.sort_unstable();
    roots.dedup();
    if roots.len() != 1 {
        return Ok(false);
    }
    Ok(component
        .iter()
        .all(|&b| classification.status(b).substantial == roots))
}

/// Number of edges with both endpoints in one box; the dependency count of a box event.
pub fn box_edge_count(w: &LatticeWindow) -> usize {
    let side = 2 * w.half_box() as usize + 1;
    w.dim() * (side - 1) * side.pow(w.dim() as u32 - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodEstimate {
    pub p: f64,
    pub scale: i64,
    pub dim: usize,
    pub samples: u64,
    pub good: u64,
    pub estimate: f64,
    pub ci95: Interval,
    /// Edges the event depends on; the probability is a polynomial in `p` of at most this degree.
    pub box_edges: usize,
    /// Exact value from full enumeration, only for boxes with at most 25 edges.
    pub exact: Option<f64>,
}

/// Monte Carlo estimate of `Pr_p(B(o) good)`, sampling only the origin box's edges.
pub fn good_probability(d: usize, n: i64, p: f64, n_samples: u64, seed: u64) -> Result<GoodEstimate> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p={p} outside [0, 1]")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let w = LatticeWindow::new(d, n, 3)?;
    let t = Threshold::new(p);
    let origin = BoxId::origin();
    let good = (0..n_samples)
        .into_par_iter()
        .map_init(BoxScanner::default, |scanner, i| {
            let key = StreamKey::new(seed, i);
            let open = |s: usize| t.admits(key.word(w.edge_key(s)));
            (scanner.evaluate(&w, &origin, &open).failure == Failure::Good) as u64
        })
        .sum::<u64>();
    let box_edges = box_edge_count(&w);
    Ok(GoodEstimate {
        p,
        scale: n,
        dim: d,
        samples: n_samples,
        good,
        estimate: good as f64 / n_samples as f64,
        ci95: wilson(good, n_samples, Z95),
        box_edges,
        // the smallest box (d=2, N=5) already has 84 edges
        exact: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::clusters;

    fn win(d: usize, n: i64) -> LatticeWindow {
        LatticeWindow::new(d, n, 3).unwrap()
    }

    fn bx(c: &[i64]) -> BoxId {
        BoxId::new(c)
    }

    #[test]
    fn all_open_and_all_closed_boxes() {
        for d in [2, 3] {
            let w = win(d, 5);
            let open = Configuration::filled(&w, true);
            let closed = Configuration::filled(&w, false);
            assert!(is_good(&BoxId::origin(), &open).unwrap());
            assert_eq!(box_failure(&BoxId::origin(), &closed).unwrap(), Failure::NoCrossing);
        }
        let w = win(2, 5);
        let open = Configuration::filled(&w, true);
        let l = clusters(&open);
        let cl = BoxClassification::classify(&open, &l);
        assert_eq!(cl.good_count(), w.box_count());
        assert!(cl.statuses().iter().all(|s| s.crossing_root == Some(0)));
        assert!(is_good(&bx(&[4, 0]), &open).is_err());
    }

    #[test]
    fn hyperplane_cut_makes_box_bad() {
        let w = win(2, 8);
        let b = bx(&[1, 0]);
        let plane = 8;
        let c = Configuration::from_fn(&w, |p, a| !(a == 0 && p[0] == plane));
        assert_eq!(box_failure(&b, &c).unwrap(), Failure::NoCrossing);
        // a neighbouring box away from the plane is unaffected
        assert!(is_good(&bx(&[-1, 0]), &c).unwrap());
    }

    #[test]
    fn one_missing_edge_keeps_box_good() {
        let w = win(2, 10);
        let c = Configuration::from_fn(&w, |p, a| !(p[0] == 0 && p[1] == 0 && a == 1));
        assert!(is_good(&BoxId::origin(), &c).unwrap());
        let w3 = win(3, 5);
        let c = Configuration::from_fn(&w3, |p, a| !(p[0] == 0 && p[1] == 0 && p[2] == 0 && a == 2));
        assert!(is_good(&BoxId::origin(), &c).unwrap());
    }

    #[test]
    fn extra_cluster_fails_condition_c() {
        // open box except a closed ring isolating a diameter-2 block at a corner region
        let w = win(2, 10);
        let e = w.box_extent(&BoxId::origin()).unwrap();
        let inside = |q: &Point| (1..=2).contains(&q[0]) && (1..=2).contains(&q[1]);
        let c = Configuration::from_fn(&w, |p, a| {
            let mut q = *p;
            q[a] += 1;
            inside(p) == inside(&q)
        });
        // the isolated 2x2 block has diameter 2 = N/5
        assert!(e.contains(&[1, 1, 0, 0], 2));
        assert_eq!(box_failure(&BoxId::origin(), &c).unwrap(), Failure::ExtraCluster);
        // a single isolated vertex (diameter 0) is harmless
        let c = Configuration::from_fn(&w, |p, a| {
            let mut q = *p;
            q[a] += 1;
            let v = |x: &Point| x[0] == 1 && x[1] == 1;
            !(v(p) || v(&q))
        });
        assert!(is_good(&BoxId::origin(), &c).unwrap());
    }

    #[test]
    fn overlap_crossing_failure() {
        // N=10, half box 7: a wall between y=4 and y=5 across the strip x >= 3 splits the
        // overlap with B(e1) but leaves the box connected through x < 3
        let w = win(2, 10);
        let c = Configuration::from_fn(&w, |p, a| !(a == 1 && p[1] == 4 && p[0] >= 3));
        let f = box_failure(&BoxId::origin(), &c).unwrap();
        assert_eq!(f, Failure::OverlapCrossing);
    }

    #[test]
    fn substantial_examples() {
        let w = win(2, 10);
        let open = Configuration::filled(&w, true);
        let l = clusters(&open);
        assert!(is_substantial(&bx(&[1, 1]), 0, &open, &l).unwrap());
        let closed = Configuration::filled(&w, false);
        let l = clusters(&closed);
        let o = w.origin();
        assert!(!is_substantial(&BoxId::origin(), o, &closed, &l).unwrap());
        // straight path of ceil(N/5) = 2 edges is substantial, 1 edge is not
        for (len, expect) in [(2, true), (1, false)] {
            let c = Configuration::from_fn(&w, |p, a| a == 0 && p[1] == 0 && (0..len).contains(&p[0]));
            let l = clusters(&c);
            assert_eq!(is_substantial(&BoxId::origin(), o, &c, &l).unwrap(), expect);
        }
    }

    fn brute_substantial(c: &Configuration, l: &ClusterLabeling, root: usize, b: usize) -> bool {
        // pairwise-diameter oracle over components of cluster ∩ box found by DFS
        let w = c.window();
        let verts: Vec<usize> = w
            .extent_vertices(&w.box_extent_at(b))
            .into_iter()
            .filter(|&v| l.root(v) == root)
            .collect();
        let inbox: std::collections::HashSet<usize> = verts.iter().copied().collect();
        let mut seen = std::collections::HashSet::new();
        for &s in &verts {
            if !seen.insert(s) {
                continue;
            }
            let mut comp = vec![s];
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                w.for_each_neighbor(v, |u, slot| {
                    if inbox.contains(&u) && c.is_open(slot) && seen.insert(u) {
                        comp.push(u);
                        stack.push(u);
                    }
                });
            }
            let mut diam = 0;
            for &x in &comp {
                for &y in &comp {
                    let (px, py) = (w.coords(x), w.coords(y));
                    diam = diam.max((0..w.dim()).map(|a| (px[a] - py[a]).abs()).sum::<i64>());
                }
            }
            if 5 * diam >= w.scale() {
                return true;
            }
        }
        false
    }

    #[test]
    fn cube_cluster_matches_per_box_oracle() {
        let w = win(2, 5);
        let n = w.scale();
        let cube = |q: &Point| q[0].abs() <= n && q[1].abs() <= n;
        let c = Configuration::from_fn(&w, |p, a| {
            let mut q = *p;
            q[a] += 1;
            cube(p) && cube(&q)
        });
        let l = clusters(&c);
        let root = l.root(w.origin());
        let cl = BoxClassification::classify(&c, &l);
        let set = substantial_set(root, &l, &cl);
        let oracle: Vec<usize> = (0..w.box_count()).filter(|&b| brute_substantial(&c, &l, root, b)).collect();
        assert_eq!(set.boxes, oracle);
        // boxes within box-distance 1 reach the cube; B((2,0)) starts at x=7
        assert_eq!(set.boxes.len(), 9);
        assert!(!set.margin_violation);
        // all members except the centre touch the outside
        assert_eq!(set.boundary.len(), 8);
        assert!(!set.boundary.contains(&w.origin_box()));
        assert!(check_timar(&set, &w).unwrap());
        assert!(boundary_is_bad(&set, &cl));
    }

    #[test]
    fn substantial_set_extremes() {
        let w = win(2, 5);
        let open = Configuration::filled(&w, true);
        let l = clusters(&open);
        let cl = BoxClassification::classify(&open, &l);
        let s = substantial_set(0, &l, &cl);
        assert_eq!(s.boxes.len(), w.box_count());
        assert!(s.boundary.is_empty());
        assert!(s.margin_violation);
        assert!(check_timar(&s, &w).is_err());
        let closed = Configuration::filled(&w, false);
        let l = clusters(&closed);
        let cl = BoxClassification::classify(&closed, &l);
        let s = substantial_set(w.origin(), &l, &cl);
        assert!(s.boxes.is_empty() && s.boundary.is_empty());
        assert!(check_timar(&s, &w).unwrap());
    }

    #[test]
    fn single_box_substantial_set() {
        let w = win(2, 10);
        let o = w.origin();
        let c = Configuration::from_fn(&w, |p, a| a == 0 && p[1] == 0 && (0..2).contains(&p[0]));
        let l = clusters(&c);
        let cl = BoxClassification::classify(&c, &l);
        let s = substantial_set(o, &l, &cl);
        assert_eq!(s.boxes, vec![w.origin_box()]);
        assert_eq!(s.boundary, vec![w.origin_box()]);
        assert!(check_timar(&s, &w).unwrap());
    }

    #[test]
    fn star_examples() {
        let w = win(2, 5);
        let open = Configuration::filled(&w, true);
        let l = clusters(&open);
        let cl = BoxClassification::classify(&open, &l);
        for comp in cl.good_components() {
            assert!(check_star(&comp, &cl).unwrap());
        }
        let closed = Configuration::filled(&w, false);
        let l = clusters(&closed);
        let cl = BoxClassification::classify(&closed, &l);
        assert!(check_star(&[0], &cl).is_err());
    }

    #[test]
    fn random_sweep_structure_properties() {
        let w = LatticeWindow::new(2, 10, 4).unwrap();
        for i in 0..60 {
            let c = Configuration::sample(&w, 0.65, 31, i).unwrap();
            let l = clusters(&c);
            let cl = BoxClassification::classify(&c, &l);
            for comp in cl.good_components() {
                assert!(check_star(&comp, &cl).unwrap(), "sample {i}");
            }
            let id = l.origin_cluster_id();
            if l.cluster(id).touches_rim {
                continue;
            }
            let s = substantial_set(l.cluster(id).root, &l, &cl);
            if s.margin_violation {
                continue;
            }
            assert!(check_timar(&s, &w).unwrap(), "sample {i}");
            assert!(boundary_is_bad(&s, &cl), "sample {i}");
            assert!(is_connected(&w, &s.boxes, Adjacency::Axis), "sample {i}");
        }
    }

    #[test]
    fn good_probability_extremes() {
        let e = good_probability(2, 5, 1.0, 50, 1).unwrap();
        assert_eq!(e.estimate, 1.0);
        let e = good_probability(2, 5, 0.0, 50, 1).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert!(e.exact.is_none());
        assert_eq!(e.box_edges, 84);
        assert!(good_probability(2, 5, 0.5, 0, 1).is_err());
    }

    #[test]
    fn csv_dump() {
        let w = win(2, 5);
        let c = Configuration::filled(&w, true);
        let l = clusters(&c);
        let cl = BoxClassification::classify(&c, &l);
        let mut buf = Vec::new();
        cl.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x0,x1,status,failure\n-3,-3,good,0\n"));
        assert_eq!(s.lines().count(), 1 + w.box_count());
    }
}
