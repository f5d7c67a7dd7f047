//! Separating components of bad boxes, their occurrence in a configuration,
//! the closed cuts they carry, and tail experiments for those cuts.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::pc_hat;
use crate::lattice::{meets_fifth, Adjacency, BoxId, LatticeWindow, WindowSpec, MAX_DIM};
use crate::percolation::{clusters, minimal_edge_cut, rim_flood, touching_edges, ClusterLabeling, Configuration, Explorer};
use crate::renorm::{
    boundary_is_bad, check_star, check_timar, components, is_connected, substantial_set, substantial_set_from_boxes,
    BoxClassification, BoxScanner, SubstantialSet,
};
use crate::stats::{weighted_line_fit, Interval, Z95};

/// A `⊠`-connected box set together with its `⊠` vertex boundary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatingComponent {
    /// Box indices, ascending.
    pub boxes: Vec<usize>,
    /// `∂_⊠ S`, ascending.
    pub boundary: Vec<usize>,
    /// The origin box is in `S` or in a complement component that avoids the box rim.
    pub surrounds_origin: bool,
}

impl SeparatingComponent {
    /// Validates connectivity and distance from the box rim, then fills in the boundary.
    pub fn new(w: &LatticeWindow, mut boxes: Vec<usize>) -> Result<Self> {
        boxes.sort_unstable();
        boxes.dedup();
        if boxes.is_empty() {
            return Err(Error::EmptySet);
        }
        if let Some(&b) = boxes.iter().find(|&&b| b >= w.box_count()) {
            return Err(Error::BoxOutOfBounds(format!("index {b}")));
        }
        if boxes.iter().any(|&b| w.box_on_rim(b)) {
            return Err(Error::MarginViolation("box set reaches the box rim".into()));
        }
        if !is_connected(w, &boxes, Adjacency::Diagonal) {
            return Err(Error::InvalidParameter("box set is not ⊠-connected".into()));
        }
        let mut member = vec![false; w.box_count()];
        for &b in &boxes {
            member[b] = true;
        }
        let mut on_boundary = vec![false; w.box_count()];
        for &b in &boxes {
            w.for_each_box_neighbor(b, Adjacency::Diagonal, |j| {
                if !member[j] {
                    on_boundary[j] = true;
                }
            });
        }
        let boundary = (0..w.box_count()).filter(|&j| on_boundary[j]).collect();
        let o = w.origin_box();
        let surrounds_origin = member[o] || {
            let mut seen = vec![false; w.box_count()];
            seen[o] = true;
            let mut queue = vec![o];
            let mut head = 0;
            let mut escaped = false;
            while head < queue.len() && !escaped {
                let b = queue[head];
                head += 1;
                escaped = w.box_on_rim(b);
                w.for_each_box_neighbor(b, Adjacency::Diagonal, |j| {
                    if !seen[j] && !member[j] {
                        seen[j] = true;
                        queue.push(j);
                    }
                });
            }
            !escaped
        };
        Ok(SeparatingComponent { boxes, boundary, surrounds_origin })
    }

    pub fn size(&self) -> usize {
        self.boxes.len()
    }

    pub fn box_ids(&self, w: &LatticeWindow) -> Vec<BoxId> {
        self.boxes.iter().map(|&b| w.box_id(b)).collect()
    }

    /// Vertices covered by the boxes of `S ∪ ∂_⊠ S`.
    pub fn region(&self, w: &LatticeWindow) -> Vec<bool> {
        let mut r = vec![false; w.vertex_count()];
        for &b in self.boxes.iter().chain(&self.boundary) {
            w.for_each_in_extent(&w.box_extent_at(b), |v, _| r[v] = true);
        }
        r
    }
}

#[inline]
fn edge_in_region(w: &LatticeWindow, region: &[bool], slot: usize) -> bool {
    let d = w.dim();
    let v = slot / d;
    region[v] && region[v + w.stride(slot % d)]
}

/// `ω''`: `ω` on edges inside the region, open elsewhere.
#[inline]
fn open_extension(w: &LatticeWindow, region: &[bool], c: &Configuration, slot: usize) -> bool {
    !edge_in_region(w, region, slot) || c.is_open(slot)
}

/// `C(N)` and `∂C(N)` of an explicit finite vertex set under an edge predicate.
fn substantial_set_of(
    w: &LatticeWindow,
    members: &[usize],
    is_member: impl Fn(usize) -> bool,
    open: &impl Fn(usize) -> bool,
) -> SubstantialSet {
    let d = w.dim();
    let (n, h, r) = (w.scale(), w.half_box(), w.box_radius());
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    for &v in members {
        let p = w.coords(v);
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    // boxes whose extent [N b - h, N b + h] meets the bounding box
    let mut blo = [0i64; MAX_DIM];
    let mut bhi = [0i64; MAX_DIM];
    for a in 0..d {
        blo[a] = (lo[a] - h).div_euclid(n) + i64::from((lo[a] - h).rem_euclid(n) != 0);
        blo[a] = blo[a].max(-r);
        bhi[a] = (hi[a] + h).div_euclid(n).min(r);
    }
    let mut scanner = BoxScanner::default();
    let mut boxes = Vec::new();
    if (0..d).all(|a| blo[a] <= bhi[a]) {
        let mut b = blo;
        loop {
            let id = BoxId(b);
            if scanner.substantial_for(w, &id, &is_member, open) {
                boxes.push(w.box_index(&id).expect("box in range"));
            }
            let mut a = d;
            let mut done = true;
            while a > 0 {
                a -= 1;
                if b[a] < bhi[a] {
                    b[a] += 1;
                    done = false;
                    break;
                }
                b[a] = blo[a];
            }
            if done {
                break;
            }
        }
    }
    boxes.sort_unstable();
    substantial_set_from_boxes(w, members.first().copied().unwrap_or(0), boxes, false)
}

/// Results of the three occurrence conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    /// (i) every box of `S` is bad.
    pub all_bad: bool,
    /// (ii) every box of `∂_⊠ S` is good.
    pub boundary_good: bool,
    /// (iii') the open extension `ω''` is a witness.
    pub open_extension: bool,
    /// (iii) with `ω' = ω`.
    pub identity_witness: bool,
}

impl Occurrence {
    pub fn occurs(&self) -> bool {
        self.all_bad && self.boundary_good && self.open_extension
    }

    /// `ω` is a witness but `ω''` is not, so (iii) and (iii') disagree.
    pub fn disagreement(&self) -> bool {
        self.all_bad && self.boundary_good && self.identity_witness && !self.open_extension
    }
}

fn check_margin(s: &SeparatingComponent, w: &LatticeWindow) -> Result<()> {
    if s.boxes.iter().any(|&b| w.box_on_rim(b)) {
        return Err(Error::MarginViolation("separating component reaches the box rim".into()));
    }
    Ok(())
}

/// Is the origin cluster of `open` finite with `∂C_o(N) ⊆ S`? Leaves the cluster in `ex`.
fn witnesses(
    w: &LatticeWindow,
    s: &SeparatingComponent,
    ex: &mut Explorer,
    open: impl Fn(usize) -> bool,
) -> bool {
    ex.explore(w, w.origin(), true, &open);
    if ex.touches_rim() {
        return false;
    }
    let members = ex.visited().to_vec();
    let set = substantial_set_of(w, &members, |v| ex.contains(v), &open);
    set.boundary.iter().all(|b| s.boxes.binary_search(b).is_ok())
}

/// Evaluates conditions (i), (ii), (iii') and (iii) with `ω' = ω`.
pub fn occurrence(s: &SeparatingComponent, c: &Configuration, classification: &BoxClassification) -> Result<Occurrence> {
    let w = c.window();
    check_margin(s, w)?;
    let all_bad = s.boxes.iter().all(|&b| !classification.is_good(b));
    let boundary_good = s.boundary.iter().all(|&b| classification.is_good(b));
    let region = s.region(w);
    let mut ex = Explorer::new(w);
    let open_ext = witnesses(w, s, &mut ex, |slot| open_extension(w, &region, c, slot));
    let identity = witnesses(w, s, &mut ex, |slot| c.is_open(slot));
    Ok(Occurrence { all_bad, boundary_good, open_extension: open_ext, identity_witness: identity })
}

pub fn occurs(s: &SeparatingComponent, c: &Configuration, classification: &BoxClassification) -> Result<bool> {
    Ok(occurrence(s, c, classification)?.occurs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    /// `ω` inside `S ∪ ∂_⊠ S`, open elsewhere.
    OpenExtension,
}

/// The closed cut `∂^b S_o` carried by an occurring component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutResult {
    /// Edge slots, ascending.
    pub cut: Vec<usize>,
    /// `C_o(ω'')`, in discovery order.
    pub inner: Vec<usize>,
    pub witness: Witness,
}

/// Checks that a cut is closed in `c`, lies in the region and separates `o` from the rim.
pub fn verify_cut(cut: &[usize], c: &Configuration, region: &[bool]) -> Result<()> {
    let w = c.window();
    for &slot in cut {
        if c.is_open(slot) {
            return Err(Error::InvariantViolation(format!("cut edge {slot} is open")));
        }
        if !edge_in_region(w, region, slot) {
            return Err(Error::InvariantViolation(format!("cut edge {slot} lies outside S ∪ ∂S")));
        }
    }
    let reach = rim_flood(w, |_| true, |slot| cut.binary_search(&slot).is_err());
    if reach[w.origin()] {
        return Err(Error::InvariantViolation("cut does not separate the origin from the rim".into()));
    }
    Ok(())
}

/// Minimal edge cut of `C_o(ω'')`, checked against `ω`.
pub fn extract_cut(s: &SeparatingComponent, c: &Configuration, classification: &BoxClassification) -> Result<CutResult> {
    if !occurs(s, c, classification)? {
        return Err(Error::Precondition("separating component does not occur".into()));
    }
    let w = c.window();
    let region = s.region(w);
    let mut ex = Explorer::new(w);
    ex.explore(w, w.origin(), true, |slot| open_extension(w, &region, c, slot));
    let inner = ex.visited().to_vec();
    let cut = minimal_edge_cut(&inner, c)?;
    verify_cut(&cut, c, &region)?;
    Ok(CutResult { cut, inner, witness: Witness::OpenExtension })
}

/// `S_o`: the maximal bad `⊠`-component containing `∂C_o(N)`; `None` when `C_o` is
/// infinite or has diameter below N/5.
pub fn build_s_o(
    c: &Configuration,
    labeling: &ClusterLabeling,
    classification: &BoxClassification,
) -> Result<Option<SeparatingComponent>> {
    let w = c.window();
    let co = labeling.origin_cluster_id();
    if labeling.cluster(co).touches_rim || !meets_fifth(labeling.diameter(co), w.scale()) {
        return Ok(None);
    }
    let set = substantial_set(labeling.cluster(co).root, labeling, classification);
    if set.margin_violation {
        return Err(Error::MarginViolation("C_o(N) reaches the box rim".into()));
    }
    if set.boundary.is_empty() {
        return Err(Error::InvariantViolation("∂C_o(N) is empty for a cluster of diameter ≥ N/5".into()));
    }
    if !boundary_is_bad(&set, classification) {
        return Err(Error::InvariantViolation("∂C_o(N) contains a good box".into()));
    }
    if !check_timar(&set, w)? {
        return Err(Error::InvariantViolation("∂C_o(N) is not ⊠-connected".into()));
    }
    let mut seen = vec![false; w.box_count()];
    let mut queue = set.boundary.clone();
    for &b in &queue {
        seen[b] = true;
    }
    let mut head = 0;
    while head < queue.len() {
        let b = queue[head];
        head += 1;
        if w.box_on_rim(b) {
            return Err(Error::MarginViolation("S_o reaches the box rim".into()));
        }
        w.for_each_box_neighbor(b, Adjacency::Diagonal, |j| {
            if !seen[j] && !classification.is_good(j) {
                seen[j] = true;
                queue.push(j);
            }
        });
    }
    SeparatingComponent::new(w, queue).map(Some)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enumeration {
    pub occurring: Vec<SeparatingComponent>,
    /// Bad components touching the box rim; they cannot be evaluated in this window.
    pub rim_components: usize,
    /// Components where `ω` witnesses (iii) but the open extension does not.
    pub disagreements: usize,
}

/// All occurring separating components around the origin.
pub fn enumerate_occurring(c: &Configuration, classification: &BoxClassification) -> Result<Enumeration> {
    let w = c.window();
    let mut out = Enumeration::default();
    for comp in components(w, |i| !classification.is_good(i), Adjacency::Diagonal) {
        if comp.iter().any(|&b| w.box_on_rim(b)) {
            out.rim_components += 1;
            continue;
        }
        let s = SeparatingComponent::new(w, comp)?;
        if !s.surrounds_origin {
            continue;
        }
        let occ = occurrence(&s, c, classification)?;
        if occ.disagreement() {
            out.disagreements += 1;
        }
        if occ.occurs() {
            out.occurring.push(s);
        }
    }
    Ok(out)
}

/// Edges with both endpoints in the boxes of `S ∪ ∂_⊠ S ∪ {B(o)}`.
pub fn dependency_edges(s: &SeparatingComponent, w: &LatticeWindow) -> usize {
    let mut region = s.region(w);
    w.for_each_in_extent(&w.box_extent_at(w.origin_box()), |v, _| region[v] = true);
    w.edges().filter(|&e| edge_in_region(w, &region, e)).count()
}

/// Signed per-size inclusion-exclusion terms `a_n` for one configuration:
/// the sum over nonempty subcollections with total size `n` of `(-1)^(k+1)`.
pub fn inclusion_exclusion_terms(sizes: &[usize]) -> Vec<(usize, i64)> {
    // coefficients of 1 - prod_i (1 - x^{|S_i|})
    let total: usize = sizes.iter().sum();
    let mut poly = vec![0i64; total + 1];
    poly[0] = 1;
    for &s in sizes {
        for n in (s..=total).rev() {
            poly[n] -= poly[n - s];
        }
    }
    (1..=total).filter(|&n| poly[n] != 0).map(|n| (n, -poly[n])).collect()
}

/// Slow reference for [`inclusion_exclusion_terms`] by explicit subsets (k <= 20).
pub fn inclusion_exclusion_subsets(sizes: &[usize]) -> Vec<(usize, i64)> {
    let k = sizes.len();
    let mut acc = std::collections::BTreeMap::new();
    for mask in 1u32..(1 << k) {
        let n: usize = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| sizes[i]).sum();
        let sign = if mask.count_ones() % 2 == 1 { 1 } else { -1 };
        *acc.entry(n).or_insert(0i64) += sign;
    }
    acc.into_iter().filter(|&(_, v)| v != 0).collect()
}

/// How much of the per-sample pipeline to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    /// Every structural invariant, including enumeration of all occurring components.
    Full,
    /// Only what the tail statistics need.
    Tails,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_index: u64,
    pub origin_finite: bool,
    pub origin_diameter: i64,
    /// `diam(C_o) < N/5`.
    pub small: bool,
    /// `C_o(N)` or `S_o` reaches the box rim; the sample is left out of statistics.
    pub excluded: bool,
    pub s_o_size: Option<usize>,
    pub cut_size: Option<usize>,
    pub touching: Option<usize>,
    pub renorm_boundary: Option<usize>,
    pub occurring_sizes: Vec<usize>,
    /// Edges the event `{S occurs, diam ≥ N/5}` depends on, per occurring component.
    pub occurring_edges: Vec<usize>,
    pub rim_components: usize,
    pub disagreements: usize,
    pub violations: Vec<String>,
}

impl SampleReport {
    /// `[some S occurs, diam ≥ N/5]`, the indicator expanded by inclusion-exclusion.
    pub fn union_event(&self) -> bool {
        !self.small && !self.occurring_sizes.is_empty()
    }
}

/// Runs the per-sample pipeline and records every invariant failure.
///
/// With `inject_fault` the first edge of one cut (that of `S_o`, else of the first
/// occurring component) is opened before the cut is verified, which must surface
/// as a violation.
pub fn analyze(c: &Configuration, depth: Depth, inject_fault: bool) -> SampleReport {
    let w = c.window();
    let labeling = clusters(c);
    let co = labeling.origin_cluster_id();
    let cluster = labeling.cluster(co);
    let mut r = SampleReport {
        sample_index: c.sample_index(),
        origin_finite: !cluster.touches_rim,
        origin_diameter: labeling.diameter(co),
        ..Default::default()
    };
    r.small = !meets_fifth(r.origin_diameter, w.scale());
    let need_boxes = depth == Depth::Full || (r.origin_finite && !r.small);
    let classification = need_boxes.then(|| BoxClassification::classify(c, &labeling));
    let mut phi_edges = None;
    if r.origin_finite {
        if let Ok(e) = touching_edges(c, &labeling) {
            r.touching = Some(e.len());
            phi_edges = Some(e);
        }
        if r.small {
            r.cut_size = Some(0);
            r.renorm_boundary = Some(0);
        }
    }
    let Some(cl) = classification else { return r };
    let mut violations: Vec<String> = Vec::new();
    let mut v = |msg: String| violations.push(msg);

    if depth == Depth::Full {
        for comp in cl.good_components() {
            match check_star(&comp, &cl) {
                Ok(true) => {}
                Ok(false) => v(format!("uniqueness fails on a good component of {} boxes", comp.len())),
                Err(e) => v(e.to_string()),
            }
        }
    }

    let mut s_o = None;
    if r.origin_finite && !r.small {
        let set = substantial_set(cluster.root, &labeling, &cl);
        if set.margin_violation {
            r.excluded = true;
        } else {
            r.renorm_boundary = Some(set.boundary.len());
            if !is_connected(w, &set.boxes, Adjacency::Axis) {
                v("C_o(N) is not connected".into());
            }
            match build_s_o(c, &labeling, &cl) {
                Ok(Some(s)) => s_o = Some(s),
                Ok(None) => v("S_o missing for a finite cluster of diameter ≥ N/5".into()),
                Err(Error::MarginViolation(_)) => r.excluded = true,
                Err(e) => v(e.to_string()),
            }
        }
    }
    if let Some(s) = &s_o {
        r.s_o_size = Some(s.size());
        match occurrence(s, c, &cl) {
            Ok(o) if o.occurs() => {}
            Ok(o) => v(format!("S_o does not occur: {o:?}")),
            Err(e) => v(e.to_string()),
        }
        match extract_cut(s, c, &cl) {
            Ok(cut) => {
                r.cut_size = Some(cut.cut.len());
                if inject_fault {
                    let mut bad = c.clone();
                    bad.set_open(cut.cut[0], true);
                    if let Err(e) = verify_cut(&cut.cut, &bad, &s.region(w)) {
                        v(format!("fault injection: {e}"));
                    }
                }
                if let Some(phi) = &phi_edges {
                    if phi.len() > cut.cut.len() || phi.iter().any(|e| cut.cut.binary_search(e).is_err()) {
                        v(format!("touching edges ({}) not contained in the cut ({})", phi.len(), cut.cut.len()));
                    }
                }
            }
            Err(e) => v(e.to_string()),
        }
    }

    if depth == Depth::Full {
        match enumerate_occurring(c, &cl) {
            Ok(en) => {
                r.rim_components = en.rim_components;
                r.disagreements = en.disagreements;
                r.occurring_sizes = en.occurring.iter().map(|s| s.size()).collect();
                r.occurring_edges = en.occurring.iter().map(|s| dependency_edges(s, w)).collect();
                let mut used = vec![false; w.box_count()];
                let mut faulted = false;
                for s in &en.occurring {
                    for &b in &s.boxes {
                        if used[b] {
                            v("occurring components overlap".into());
                        }
                        used[b] = true;
                    }
                    if !r.origin_finite {
                        v("a separating component occurs while C_o is infinite".into());
                    }
                    match extract_cut(s, c, &cl) {
                        Ok(cut) if inject_fault && s_o.is_none() && !faulted => {
                            faulted = true;
                            let mut bad = c.clone();
                            bad.set_open(cut.cut[0], true);
                            if let Err(e) = verify_cut(&cut.cut, &bad, &s.region(w)) {
                                v(format!("fault injection: {e}"));
                            }
                        }
                        Ok(_) => {}
                        Err(e) => v(e.to_string()),
                    }
                }
                if let Some(s) = &s_o {
                    if !en.occurring.contains(s) {
                        v("S_o missing from the occurring list".into());
                    }
                }
                let lhs = r.origin_finite;
                let rhs = r.small || r.union_event();
                if !r.excluded && lhs != rhs {
                    v(format!("finite-cluster identity fails: finite={lhs}, small={}, occurs={}", r.small, !en.occurring.is_empty()));
                }
                let sum: i64 = inclusion_exclusion_terms(&r.occurring_sizes).iter().map(|t| t.1).sum();
                if sum != (!r.occurring_sizes.is_empty()) as i64 {
                    v("inclusion-exclusion terms do not sum to the union indicator".into());
                }
            }
            Err(e) => v(e.to_string()),
        }
    }
    r.violations = violations;
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    CutSize,
    Touching,
    RenormBoundary,
}

impl Statistic {
    /// Whether the statistic is read off `S_o`, so margin exclusions apply to it.
    pub fn needs_s_o(self) -> bool {
        self != Statistic::Touching
    }

    pub fn of(self, r: &SampleReport) -> Option<usize> {
        match self {
            Statistic::CutSize => r.cut_size,
            Statistic::Touching => r.touching,
            Statistic::RenormBoundary => r.renorm_boundary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub n: usize,
    pub count: u64,
    pub at_least: u64,
    pub survival: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub t_hat: f64,
    /// Fitted `log S(0)`.
    pub intercept: f64,
    pub t_ci95: Interval,
    pub r_squared: f64,
    pub range: (usize, usize),
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub statistic: Statistic,
    pub p: f64,
    pub window: WindowSpec,
    pub seed: u64,
    pub samples: u64,
    pub finite_samples: u64,
    pub excluded: u64,
    /// Finite, non-excluded samples where the statistic is defined.
    pub used: u64,
    pub survival: Vec<SurvivalPoint>,
    pub fit: Option<TailFit>,
    pub fit_note: Option<String>,
}

impl TailEstimate {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["n", "count", "at_least", "survival", "fit_log_survival"])?;
        for s in &self.survival {
            let fit = match &self.fit {
                Some(f) if (f.range.0..=f.range.1).contains(&s.n) => {
                    format!("{:.9e}", f.intercept - f.t_hat * s.n as f64)
                }
                _ => String::new(),
            };
            wr.write_record([
                s.n.to_string(),
                s.count.to_string(),
                s.at_least.to_string(),
                format!("{:.9e}", s.survival),
                fit,
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Builds the survival function of `values` and fits `log S(n) = a - t n` on
/// `fit_range` (default: all `n ≥ 1` with at least 20 samples at or above `n`).
pub fn survival_fit(values: &[usize], fit_range: Option<(usize, usize)>) -> (Vec<SurvivalPoint>, Result<TailFit>) {
    let total = values.len() as u64;
    let max = values.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0u64; max + 1];
    for &x in values {
        counts[x] += 1;
    }
    let mut survival = Vec::with_capacity(max + 1);
    let mut at_least = total;
    for (n, &count) in counts.iter().enumerate() {
        survival.push(SurvivalPoint { n, count, at_least, survival: at_least as f64 / total.max(1) as f64 });
        at_least -= count;
    }
    let (lo, hi) = fit_range.unwrap_or((1, usize::MAX));
    let pts: Vec<&SurvivalPoint> = survival
        .iter()
        .filter(|s| s.n >= lo && s.n <= hi && s.at_least >= 20 && s.at_least < total)
        .collect();
    let x: Vec<f64> = pts.iter().map(|s| s.n as f64).collect();
    let y: Vec<f64> = pts.iter().map(|s| s.survival.ln()).collect();
    let wt: Vec<f64> = pts.iter().map(|s| s.at_least as f64).collect();
    let fit = weighted_line_fit(&x, &y, &wt).map(|f| TailFit {
        t_hat: -f.slope,
        intercept: f.intercept,
        t_ci95: Interval { lo: -f.slope - Z95 * f.slope_se, hi: -f.slope + Z95 * f.slope_se },
        r_squared: f.r_squared,
        range: (pts.first().map_or(0, |s| s.n), pts.last().map_or(0, |s| s.n)),
        points: f.points,
    });
    (survival, fit)
}

/// Reports for a block of sample indices, in index order.
pub fn sample_reports(
    w: &LatticeWindow,
    p: f64,
    seed: u64,
    indices: std::ops::Range<u64>,
    depth: Depth,
) -> Result<Vec<SampleReport>> {
    indices
        .into_par_iter()
        .map(|i| Configuration::sample(w, p, seed, i).map(|c| analyze(&c, depth, false)))
        .collect()
}

/// Empirical survival of a cut statistic over samples with `C_o` finite, with an exponential-rate fit.
pub fn tail_experiment(
    w: &LatticeWindow,
    p: f64,
    n_samples: u64,
    seed: u64,
    statistic: Statistic,
    fit_range: Option<(usize, usize)>,
) -> Result<TailEstimate> {
    if p <= pc_hat(w.dim()) {
        return Err(Error::Precondition(format!("p={p} is not above the threshold surrogate {}", pc_hat(w.dim()))));
    }
    if n_samples < 10_000 {
        return Err(Error::Precondition("tail experiments need at least 10^4 samples".into()));
    }
    let reports = sample_reports(w, p, seed, 0..n_samples, Depth::Tails)?;
    tail_from_reports(w, p, seed, &reports, statistic, fit_range)
}

pub fn tail_from_reports(
    w: &LatticeWindow,
    p: f64,
    seed: u64,
    reports: &[SampleReport],
    statistic: Statistic,
    fit_range: Option<(usize, usize)>,
) -> Result<TailEstimate> {
    let finite = reports.iter().filter(|r| r.origin_finite).count() as u64;
    let excluded = reports.iter().filter(|r| r.excluded).count() as u64;
    let values: Vec<usize> = reports
        .iter()
        .filter(|r| r.origin_finite && !(r.excluded && statistic.needs_s_o()))
        .filter_map(|r| statistic.of(r))
        .collect();
    if values.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "{} usable finite-cluster samples out of {} (need 100)",
            values.len(),
            reports.len()
        )));
    }
    let (survival, fit) = survival_fit(&values, fit_range);
    let (fit, fit_note) = match fit {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(TailEstimate {
        statistic,
        p,
        window: w.spec(),
        seed,
        samples: reports.len() as u64,
        finite_samples: finite,
        excluded,
        used: values.len() as u64,
        survival,
        fit,
        fit_note,
    })
}
