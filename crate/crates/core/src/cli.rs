//! Manifest-driven runner behind the `percolab` binary.
//!
//! Every output file carries the SHA-256 of the effective manifest (with `workers`
//! and `out` blanked, since neither changes results). Wall time goes to
//! `timing.json` so that all other outputs are byte-identical across reruns.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::counting::{
    count_animals, count_animals_bfs, composite_bound, disjoint_packing, enumerate_partitions, pairwise_disjoint,
    partitions, random_connected_set,
};
use crate::error::{Error, Result};
use crate::estimators::{
    chi_f_cross_check, chi_f_hat, kappa_derivative_check, kappa_hat, pc_hat, size_histogram, tau_f_decay, tau_f_sum,
    tau_hat, theta_hat, EstimatorReport,
};
use crate::expansion::{
    aggregate_expansion, disk_bound_check, disk_sweep, inclusion_exclusion_from_report, DiskVariant,
};
use crate::lattice::{Adjacency, LatticeWindow, Point, WindowSpec, MAX_DIM};
use crate::percolation::{clusters, ConfigHeader, Configuration};
use crate::renorm::{good_probability, BoxClassification};
use crate::separating::{analyze, sample_reports, tail_from_reports, Depth, SampleReport, Statistic};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INSUFFICIENT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Per-sample artifacts (`sample`, `classify`) are capped to keep output directories small.
const MAX_ARTIFACT_SAMPLES: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sample,
    Classify,
    Tails,
    Expansion,
    Estimate,
    Counting,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Structure,
    Expansion,
    Counting,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Theta,
    Tau,
    TauF,
    ChiF,
    Kappa,
    TauFSum,
    Histogram,
    KappaDerivative,
    TauFDecay,
    ChiFCrossCheck,
    GoodBox,
}

impl EstimateKind {
    fn allows_grid(self) -> bool {
        matches!(
            self,
            EstimateKind::Theta
                | EstimateKind::Tau
                | EstimateKind::TauF
                | EstimateKind::ChiF
                | EstimateKind::Kappa
                | EstimateKind::TauFSum
                | EstimateKind::GoodBox
        )
    }
}

/// Experiment description read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: u32,
    pub kind: Kind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<EstimateKind>,
    /// Moment order for `chi_f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    /// Vertex tuple for `tau` and `tau_f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crn: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dist: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<i64>,
    /// Box scales for `good_box`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<Statistic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_range: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disk_tuples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Adjacency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub animal_n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_n_max: Option<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 (hex) of the canonical JSON form, ignoring `workers` and `out`.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = None;
        canon.out = None;
        let bytes = serde_json::to_vec(&canon).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn window(&self) -> Result<LatticeWindow> {
        let spec = self.window.ok_or_else(|| bad("missing [window] table with d, N, R"))?;
        LatticeWindow::from_spec(spec).map_err(|e| bad(e.to_string()))
    }

    fn require_p(&self) -> Result<f64> {
        let p = self.p.ok_or_else(|| bad("missing p"))?;
        check_unit(p)?;
        Ok(p)
    }

    fn require_samples(&self) -> Result<u64> {
        match self.samples {
            Some(n) if n > 0 => Ok(n),
            Some(_) => Err(bad("samples must be positive")),
            None => Err(bad("missing samples")),
        }
    }

    fn ps(&self) -> Result<Vec<f64>> {
        match (&self.p, &self.p_grid) {
            (Some(_), Some(_)) => Err(bad("give either p or p_grid, not both")),
            (Some(p), None) => {
                check_unit(*p)?;
                Ok(vec![*p])
            }
            (None, Some(g)) if !g.is_empty() => {
                g.iter().try_for_each(|p| check_unit(*p))?;
                Ok(g.clone())
            }
            _ => Err(bad("missing p or p_grid")),
        }
    }

    fn suite(&self) -> Suite {
        self.suite.unwrap_or(Suite::Structure)
    }

    fn counting_dim(&self) -> usize {
        self.dim.or(self.window.map(|w| w.d)).unwrap_or(2)
    }

    fn point(&self, coords: &[i64], what: &str) -> Result<Point> {
        let d = self.window.map(|w| w.d).unwrap_or(0);
        if coords.len() != d {
            return Err(bad(format!("{what} has {} coordinates, the window has d={d}", coords.len())));
        }
        let mut x = [0i64; MAX_DIM];
        x[..d].copy_from_slice(coords);
        Ok(x)
    }

    /// Checks every parameter the chosen experiment reads. Nothing is computed or
    /// written before this passes.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(bad(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.workers == Some(0) {
            return Err(bad("workers must be positive"));
        }
        if self.p_grid.is_some() && !(self.kind == Kind::Estimate && self.quantity.is_some_and(|q| q.allows_grid())) {
            return Err(bad("p_grid is only accepted by scalar estimate quantities"));
        }
        match self.kind {
            Kind::Sample | Kind::Classify => {
                self.window()?;
                self.require_p()?;
                if self.require_samples()? > MAX_ARTIFACT_SAMPLES {
                    return Err(bad(format!("at most {MAX_ARTIFACT_SAMPLES} samples for per-sample artifacts")));
                }
            }
            Kind::Tails => {
                let w = self.window()?;
                let p = self.require_p()?;
                above_threshold(p, w.dim())?;
                if self.require_samples()? < 10_000 {
                    return Err(bad("tail experiments need at least 10^4 samples"));
                }
                if let Some((lo, hi)) = self.fit_range {
                    if lo > hi {
                        return Err(bad("fit_range must be increasing"));
                    }
                }
            }
            Kind::Expansion => {
                let w = self.window()?;
                let p = self.require_p()?;
                above_threshold(p, w.dim())?;
                self.require_samples()?;
                if self.n_max == Some(0) {
                    return Err(bad("n_max must be positive"));
                }
            }
            Kind::Estimate => self.validate_estimate()?,
            Kind::Counting => {
                let d = self.counting_dim();
                if !(1..=MAX_DIM).contains(&d) {
                    return Err(bad(format!("dimension {d} outside 1..={MAX_DIM}")));
                }
                if !(1..=10).contains(&self.animal_n_max.unwrap_or(8)) {
                    return Err(bad("animal_n_max must lie in 1..=10"));
                }
                if !(1..=10_000).contains(&self.partition_n_max.unwrap_or(100)) {
                    return Err(bad("partition_n_max must lie in 1..=10000"));
                }
                if self.p.is_some() {
                    self.require_p()?;
                    if let Some(w) = self.window {
                        if w.d != d {
                            return Err(bad("dim and window.d disagree"));
                        }
                    }
                    self.window()?;
                    self.require_samples()?;
                }
            }
            Kind::Verify => {
                let suite = self.suite();
                if matches!(suite, Suite::Structure | Suite::Expansion | Suite::All) {
                    self.window()?;
                    self.require_p()?;
                    self.require_samples()?;
                }
                if self.disk_tuples == Some(0) {
                    return Err(bad("disk_tuples must be positive"));
                }
                if self.inject_fault == Some(true) && suite == Suite::Counting {
                    return Err(bad("inject_fault applies to the structure suite"));
                }
            }
        }
        Ok(())
    }

    fn validate_estimate(&self) -> Result<()> {
        let q = self.quantity.ok_or_else(|| bad("missing quantity"))?;
        let w = self.window()?;
        let ps = if q.allows_grid() { self.ps()? } else { vec![self.require_p()?] };
        self.require_samples()?;
        let interior = |x: &Point, what: &str| -> Result<()> {
            let lim = w.half_width() - 1;
            if x[..w.dim()].iter().any(|c| c.abs() > lim) {
                return Err(bad(format!("{what} {:?} is not interior to the window", &x[..w.dim()])));
            }
            Ok(())
        };
        match q {
            EstimateKind::Tau | EstimateKind::TauF => {
                let pts = self.points.as_ref().ok_or_else(|| bad("missing points"))?;
                if pts.is_empty() {
                    return Err(bad("points must be non-empty"));
                }
                for c in pts {
                    interior(&self.point(c, "point")?, "point")?;
                }
            }
            EstimateKind::ChiF => {
                if self.k.unwrap_or(1) == 0 {
                    return Err(bad("k must be positive"));
                }
            }
            EstimateKind::TauFSum | EstimateKind::ChiFCrossCheck => {
                let r = self.radius.ok_or_else(|| bad("missing radius"))?;
                if r < 0 || r >= w.half_width() {
                    return Err(bad("radius must lie inside the window"));
                }
            }
            EstimateKind::KappaDerivative => {
                let h = self.h.ok_or_else(|| bad("missing h"))?;
                let p = ps[0];
                if h < 0.01 || p - h <= pc_hat(w.dim()) || p + h >= 1.0 {
                    return Err(bad(format!("need h >= 0.01 and p ± h inside ({}, 1)", pc_hat(w.dim()))));
                }
            }
            EstimateKind::TauFDecay => {
                let dir = self.point(self.direction.as_deref().unwrap_or(&unit(w.dim())), "direction")?;
                let m = self.max_dist.ok_or_else(|| bad("missing max_dist"))?;
                if m < 1 {
                    return Err(bad("max_dist must be positive"));
                }
                let far: Point = std::array::from_fn(|a| dir[a] * m);
                interior(&far, "max_dist·direction")?;
                above_threshold(ps[0], w.dim())?;
            }
            EstimateKind::GoodBox => {
                if self.scales.as_ref().is_some_and(|s| s.is_empty() || s.iter().any(|&n| n < 5)) {
                    return Err(bad("scales must be non-empty and at least 5"));
                }
            }
            EstimateKind::Theta | EstimateKind::Kappa | EstimateKind::Histogram => {}
        }
        Ok(())
    }
}

fn unit(d: usize) -> Vec<i64> {
    let mut v = vec![0; d];
    if d > 0 {
        v[0] = 1;
    }
    v
}

fn check_unit(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(bad(format!("p={p} outside [0, 1]")))
    }
}

fn above_threshold(p: f64, d: usize) -> Result<()> {
    if p <= pc_hat(d) {
        return Err(bad(format!("p={p} is not above the threshold surrogate {}", pc_hat(d))));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    InsufficientData,
    InvariantViolation,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => EXIT_OK,
            Status::InsufficientData => EXIT_INSUFFICIENT,
            Status::InvariantViolation | Status::Error => EXIT_VIOLATION,
        }
    }

    fn worst(self, other: Status) -> Status {
        let rank = |s: Status| match s {
            Status::Ok => 0,
            Status::InsufficientData => 1,
            Status::InvariantViolation => 2,
            Status::Error => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

/// Everything a run produces, held in memory until the run finishes.
#[derive(Debug)]
pub struct Outcome {
    pub hash: String,
    pub status: Status,
    pub messages: Vec<String>,
    pub files: Vec<(String, Vec<u8>)>,
    pub diagnostics: serde_json::Map<String, Value>,
    pub reproducer: Option<Value>,
}

impl Outcome {
    fn new(hash: String) -> Self {
        Outcome {
            hash,
            status: Status::Ok,
            messages: Vec::new(),
            files: Vec::new(),
            diagnostics: serde_json::Map::new(),
            reproducer: None,
        }
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = format!("# manifest_sha256 {}\n", self.hash).into_bytes();
        write(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    fn json(&mut self, name: &str, data: impl Serialize) -> Result<()> {
        let buf = pretty(&json!({ "manifest_sha256": self.hash, "data": data }))?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    fn diag(&mut self, key: &str, v: impl Serialize) {
        self.diagnostics.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn flag(&mut self, status: Status, msg: impl Into<String>) {
        self.status = self.status.worst(status);
        self.messages.push(msg.into());
    }

    /// Folds a recoverable per-part error into the status instead of aborting the run.
    fn absorb<T>(&mut self, what: &str, r: Result<T>) -> Result<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::InsufficientData(m)) => {
                self.flag(Status::InsufficientData, format!("{what}: insufficient data: {m}"));
                Ok(None)
            }
            Err(Error::InvariantViolation(m)) => {
                self.flag(Status::InvariantViolation, format!("{what}: {m}"));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn summary(&self, m: &Manifest) -> Value {
        let mut names: Vec<&str> = self.files.iter().map(|f| f.0.as_str()).collect();
        if self.reproducer.is_some() {
            names.push("reproducer.json");
        }
        json!({
            "manifest_sha256": self.hash,
            "schema": SCHEMA_VERSION,
            "kind": m.kind,
            "seed": m.seed,
            "status": self.status,
            "exit_code": self.status.exit_code(),
            "messages": self.messages,
            "diagnostics": self.diagnostics,
            "outputs": names,
        })
    }
}

/// Runs an already validated manifest, without touching the filesystem.
pub fn execute(m: &Manifest) -> Result<Outcome> {
    let mut o = Outcome::new(m.hash());
    match m.kind {
        Kind::Sample => run_sample(m, &mut o)?,
        Kind::Classify => run_classify(m, &mut o)?,
        Kind::Tails => run_tails(m, &mut o)?,
        Kind::Expansion => run_expansion(m, &mut o)?,
        Kind::Estimate => run_estimate(m, &mut o)?,
        Kind::Counting => run_counting(m, &mut o)?,
        Kind::Verify => run_verify(m, &mut o)?,
    }
    Ok(o)
}

fn run_sample(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let w = m.window()?;
    let (p, n) = (m.require_p()?, m.require_samples()?);
    let rows: Vec<(ConfigHeader, String, usize, bool, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = Configuration::sample(&w, p, m.seed, i)?;
            let lab = clusters(&c);
            let id = lab.origin_cluster_id();
            let finite = lab.infinite_cluster() != Some(id);
            Ok((c.header(), hex::encode(c.to_blob()), c.open_count(), finite, lab.cluster(id).size))
        })
        .collect::<Result<_>>()?;
    o.csv("samples.csv", |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record(["sample_index", "open_edges", "origin_finite", "origin_cluster_size"])?;
        for (h, _, open, finite, size) in &rows {
            wr.write_record([h.sample_index.to_string(), open.to_string(), finite.to_string(), size.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    for (h, bits, ..) in &rows {
        o.json(&format!("sample_{:05}.json", h.sample_index), json!({ "header": h, "bits_hex": bits }))?;
    }
    o.diag("samples", n);
    Ok(())
}

fn run_classify(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let w = m.window()?;
    let (p, n) = (m.require_p()?, m.require_samples()?);
    let rows: Vec<(u64, usize, bool, Vec<u8>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let c = Configuration::sample(&w, p, m.seed, i)?;
            let cl = BoxClassification::classify(&c, &clusters(&c));
            let mut buf = Vec::new();
            cl.write_csv(&mut buf)?;
            Ok((i, cl.good_count(), cl.is_good(w.origin_box()), buf))
        })
        .collect::<Result<_>>()?;
    o.csv("classify.csv", |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record(["sample_index", "good_boxes", "boxes", "origin_box_good"])?;
        for (i, good, og, _) in &rows {
            wr.write_record([i.to_string(), good.to_string(), w.box_count().to_string(), og.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    let total: usize = rows.iter().map(|r| r.1).sum();
    for (i, _, _, body) in rows {
        o.csv(&format!("boxes_{i:05}.csv"), |buf| {
            buf.extend_from_slice(&body);
            Ok(())
        })?;
    }
    o.diag("samples", n);
    o.diag("good_fraction", total as f64 / (n as f64 * w.box_count() as f64));
    Ok(())
}

fn exclusion_diagnostics(o: &mut Outcome, reports: &[SampleReport]) {
    let finite = reports.iter().filter(|r| r.origin_finite).count();
    let applicable = reports.iter().filter(|r| r.origin_finite && !r.small).count();
    let excluded = reports.iter().filter(|r| r.excluded).count();
    o.diag("samples", reports.len());
    o.diag("origin_finite", finite);
    o.diag("applicable", applicable);
    o.diag("margin_excluded", excluded);
    o.diag("margin_exclusion_rate", excluded as f64 / reports.len().max(1) as f64);
}

fn run_tails(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let w = m.window()?;
    let (p, n) = (m.require_p()?, m.require_samples()?);
    let reports = sample_reports(&w, p, m.seed, 0..n, Depth::Tails)?;
    exclusion_diagnostics(o, &reports);
    let stats = match m.statistic {
        Some(s) => vec![s],
        None => vec![Statistic::CutSize, Statistic::Touching, Statistic::RenormBoundary],
    };
    for s in stats {
        let name = serde_json::to_value(s)?.as_str().unwrap_or("statistic").to_string();
        let est = tail_from_reports(&w, p, m.seed, &reports, s, m.fit_range);
        if let Some(t) = o.absorb(&format!("tail {name}"), est)? {
            if let Some(note) = &t.fit_note {
                o.flag(Status::InsufficientData, format!("tail {name}: {note}"));
            }
            o.csv(&format!("tail_{name}.csv"), |buf| t.write_csv(buf))?;
            o.json(&format!("tail_{name}.json"), &t)?;
        }
    }
    Ok(())
}

fn run_expansion(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let w = m.window()?;
    let (p, n) = (m.require_p()?, m.require_samples()?);
    let reports = sample_reports(&w, p, m.seed, 0..n, Depth::Full)?;
    exclusion_diagnostics(o, &reports);
    let agg = aggregate_expansion(&w, p, m.n_max.unwrap_or(400), &reports);
    if agg.identity_failures > 0 {
        o.flag(Status::InvariantViolation, format!("{} inclusion-exclusion identity failures", agg.identity_failures));
    }
    if agg.complexity_failures > 0 {
        o.flag(Status::InvariantViolation, format!("{} complexity bound failures", agg.complexity_failures));
    }
    if let Some(e) = &agg.decay_error {
        o.flag(Status::InsufficientData, format!("decay check: {e}"));
    }
    o.diag("discrepancy_se", agg.discrepancy_se());
    o.csv("expansion.csv", |buf| agg.write_csv(buf))?;
    o.json("expansion.json", &agg)?;
    if let Some(t) = m.disk_tuples {
        disk_part(m, o, t)?;
    }
    Ok(())
}

fn disk_part(m: &Manifest, o: &mut Outcome, tuples: u64) -> Result<()> {
    let sweeps: Vec<_> = [DiskVariant::Interior, DiskVariant::AtOne]
        .into_iter()
        .map(|v| disk_sweep(v, tuples, 40, m.seed))
        .collect();
    for s in &sweeps {
        if s.violations > 0 {
            o.flag(Status::InvariantViolation, format!("disk bound ({:?}): {} of {} tuples fail", s.variant, s.violations, s.tuples));
            if o.reproducer.is_none() {
                o.reproducer = Some(json!({
                    "manifest_sha256": o.hash,
                    "check": "disk_bound",
                    "seed": m.seed,
                    "variant": s.variant,
                    "counterexample": s.worst,
                }));
            }
        }
    }
    o.json("disk.json", &sweeps)
}

fn estimator_rows(reports: &[EstimatorReport]) -> impl FnOnce(&mut Vec<u8>) -> Result<()> + '_ {
    move |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record(["quantity", "p", "samples", "estimate", "se", "ci_lo", "ci_hi", "rim_touching"])?;
        for r in reports {
            wr.write_record([
                serde_json::to_value(r.quantity)?.as_str().unwrap_or("").to_string(),
                r.p.to_string(),
                r.samples.to_string(),
                format!("{:.12e}", r.estimate),
                format!("{:.12e}", r.se),
                format!("{:.12e}", r.ci95.lo),
                format!("{:.12e}", r.ci95.hi),
                r.rim_touching.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn run_estimate(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let q = m.quantity.ok_or_else(|| bad("missing quantity"))?;
    let w = m.window()?;
    let n = m.require_samples()?;
    let seed = m.seed;
    let ps = if q.allows_grid() { m.ps()? } else { vec![m.require_p()?] };
    let p = ps[0];
    match q {
        EstimateKind::Theta | EstimateKind::Tau | EstimateKind::TauF | EstimateKind::ChiF | EstimateKind::Kappa | EstimateKind::TauFSum => {
            let pts: Vec<Point> = match &m.points {
                Some(v) => v.iter().map(|c| m.point(c, "point")).collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let reports: Vec<EstimatorReport> = ps
                .iter()
                .map(|&p| match q {
                    EstimateKind::Theta => theta_hat(p, &w, n, seed),
                    EstimateKind::Tau => tau_hat(&pts, p, &w, n, seed, false),
                    EstimateKind::TauF => tau_hat(&pts, p, &w, n, seed, true),
                    EstimateKind::ChiF => chi_f_hat(m.k.unwrap_or(1), p, &w, n, seed),
                    EstimateKind::Kappa => kappa_hat(p, &w, n, seed),
                    _ => tau_f_sum(p, &w, m.radius.unwrap_or(0), n, seed),
                })
                .collect::<Result<_>>()?;
            o.csv("estimates.csv", estimator_rows(&reports))?;
            o.json("estimates.json", &reports)?;
        }
        EstimateKind::GoodBox => {
            let scales = m.scales.clone().unwrap_or_else(|| vec![w.scale()]);
            let mut ests = Vec::new();
            for &p in &ps {
                for &s in &scales {
                    ests.push(good_probability(w.dim(), s, p, n, seed)?);
                }
            }
            o.csv("good_box.csv", |buf| {
                let mut wr = csv::Writer::from_writer(buf);
                wr.write_record(["d", "N", "p", "samples", "good", "estimate", "ci_lo", "ci_hi"])?;
                for e in &ests {
                    wr.write_record([
                        e.dim.to_string(),
                        e.scale.to_string(),
                        e.p.to_string(),
                        e.samples.to_string(),
                        e.good.to_string(),
                        format!("{:.12e}", e.estimate),
                        format!("{:.12e}", e.ci95.lo),
                        format!("{:.12e}", e.ci95.hi),
                    ])?;
                }
                wr.flush()?;
                Ok(())
            })?;
            o.json("good_box.json", &ests)?;
        }
        EstimateKind::Histogram => {
            let h = size_histogram(p, &w, n, seed)?;
            if !h.normalized() {
                o.flag(Status::InvariantViolation, "size histogram does not sum to one");
            }
            o.csv("histogram.csv", |buf| h.write_csv(buf))?;
            o.json("histogram.json", &h)?;
        }
        EstimateKind::KappaDerivative => {
            let h = m.h.ok_or_else(|| bad("missing h"))?;
            let k = kappa_derivative_check(p, h, &w, n, seed, m.crn.unwrap_or(true))?;
            o.diag("z", k.z);
            o.json("kappa_derivative.json", &k)?;
        }
        EstimateKind::TauFDecay => {
            let dir = m.point(m.direction.as_deref().unwrap_or(&unit(w.dim())), "direction")?;
            let prof = tau_f_decay(p, &w, &dir, m.max_dist.unwrap_or(1), n, seed)?;
            if let Some(e) = &prof.fit_error {
                o.flag(Status::InsufficientData, format!("tau_f decay fit: {e}"));
            }
            o.csv("tau_f_decay.csv", |buf| prof.write_csv(buf))?;
            o.json("tau_f_decay.json", &prof)?;
        }
        EstimateKind::ChiFCrossCheck => {
            let c = chi_f_cross_check(p, &w, m.radius.unwrap_or(0), n, seed)?;
            o.diag("z", c.z);
            o.json("chi_f_cross_check.json", &c)?;
        }
    }
    Ok(())
}

fn run_counting(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let d = m.counting_dim();
    let mode = m.adjacency.unwrap_or(Adjacency::Diagonal);
    let census = o.absorb("animal census", count_animals(d, mode, m.animal_n_max.unwrap_or(8)))?;
    let table = partitions(m.partition_n_max.unwrap_or(100))?;
    o.csv("partitions.csv", |buf| table.write_csv(buf))?;
    o.diag("partitions_r_hat", table.r_hat());
    o.diag("partitions_ln_over_n_decreasing_from", table.decreasing_from());
    let Some(census) = census else { return Ok(()) };
    o.csv("animals.csv", |buf| census.write_csv(buf))?;
    o.json("animals.json", &census)?;
    if m.p.is_some() {
        let w = m.window()?;
        let g = good_probability(d, w.scale(), m.require_p()?, m.require_samples()?, m.seed)?;
        // the composite bound needs the ⊠ growth constant
        let diag_census = if mode == Adjacency::Diagonal {
            census.clone()
        } else {
            match o.absorb("⊠ census", count_animals(d, Adjacency::Diagonal, m.animal_n_max.unwrap_or(8)))? {
                Some(c) => c,
                None => return Ok(()),
            }
        };
        let b = composite_bound(d, g.estimate, &diag_census, &table)?;
        if !b.bound.decaying {
            o.messages.push(format!(
                "composite bound does not decay: M c^(1/k) = {:.6} >= 1",
                b.bound.log_rate.exp()
            ));
        }
        o.json("composite_bound.json", json!({ "good_box": g, "bound": b }))?;
    }
    Ok(())
}

fn run_verify(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let suite = m.suite();
    o.diag("suite", suite);
    let mut reports = None;
    if matches!(suite, Suite::Structure | Suite::All) {
        reports = Some(verify_structure(m, o)?);
    }
    if matches!(suite, Suite::Expansion | Suite::All) {
        let r = match reports {
            Some(r) => r,
            None => {
                let w = m.window()?;
                sample_reports(&w, m.require_p()?, m.seed, 0..m.require_samples()?, Depth::Full)?
            }
        };
        verify_expansion(m, o, &r)?;
    }
    if matches!(suite, Suite::Counting | Suite::All) {
        verify_counting(m, o)?;
    }
    Ok(())
}

fn sample_reproducer(m: &Manifest, o: &Outcome, check: &str, w: &LatticeWindow, r: &SampleReport, detail: Value) -> Result<Value> {
    let p = m.require_p()?;
    let header = Configuration::sample(w, p, m.seed, r.sample_index)?.header();
    Ok(json!({
        "manifest_sha256": o.hash,
        "check": check,
        "window": w.spec(),
        "seed": m.seed,
        "sample_index": r.sample_index,
        "p": p,
        "inject_fault": m.inject_fault.unwrap_or(false),
        "header": header,
        "detail": detail,
    }))
}

fn verify_structure(m: &Manifest, o: &mut Outcome) -> Result<Vec<SampleReport>> {
    let w = m.window()?;
    let (p, n) = (m.require_p()?, m.require_samples()?);
    let fault = m.inject_fault.unwrap_or(false);
    let reports: Vec<SampleReport> = (0..n)
        .into_par_iter()
        .map(|i| Configuration::sample(&w, p, m.seed, i).map(|c| analyze(&c, Depth::Full, fault)))
        .collect::<Result<_>>()?;
    exclusion_diagnostics(o, &reports);
    let failing: Vec<&SampleReport> = reports.iter().filter(|r| !r.violations.is_empty()).collect();
    o.diag("structure_failing_samples", failing.len());
    o.diag("iii_disagreements", reports.iter().map(|r| r.disagreements).sum::<usize>());
    o.csv("structure.csv", |buf| {
        let mut wr = csv::Writer::from_writer(buf);
        wr.write_record([
            "sample_index",
            "origin_finite",
            "small",
            "excluded",
            "s_o_size",
            "cut_size",
            "touching",
            "renorm_boundary",
            "occurring",
            "violations",
        ])?;
        let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &reports {
            wr.write_record([
                r.sample_index.to_string(),
                r.origin_finite.to_string(),
                r.small.to_string(),
                r.excluded.to_string(),
                opt(r.s_o_size),
                opt(r.cut_size),
                opt(r.touching),
                opt(r.renorm_boundary),
                r.occurring_sizes.len().to_string(),
                r.violations.len().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    if let Some(first) = failing.first() {
        o.flag(
            Status::InvariantViolation,
            format!("structure: {} of {n} samples violate an invariant; first: {}", failing.len(), first.violations[0]),
        );
        o.reproducer = Some(sample_reproducer(m, o, "structure", &w, first, json!(first.violations))?);
    }
    Ok(reports)
}

fn verify_expansion(m: &Manifest, o: &mut Outcome, reports: &[SampleReport]) -> Result<()> {
    let w = m.window()?;
    let mut failures = 0u64;
    for r in reports {
        match inclusion_exclusion_from_report(r) {
            Ok(_) | Err(Error::MarginViolation(_)) => {}
            Err(e) => {
                failures += 1;
                if o.reproducer.is_none() {
                    o.reproducer = Some(sample_reproducer(m, o, "inclusion_exclusion", &w, r, json!(e.to_string()))?);
                }
            }
        }
    }
    o.diag("inclusion_exclusion_failures", failures);
    if failures > 0 {
        o.flag(Status::InvariantViolation, format!("inclusion-exclusion fails on {failures} samples"));
    }
    disk_part(m, o, m.disk_tuples.unwrap_or(10_000))
}

fn verify_counting(m: &Manifest, o: &mut Outcome) -> Result<()> {
    let mut checks: Vec<Value> = Vec::new();
    let fail = |o: &mut Outcome, what: String| {
        o.flag(Status::InvariantViolation, what.clone());
        if o.reproducer.is_none() {
            o.reproducer = Some(json!({ "manifest_sha256": o.hash, "check": "counting", "seed": m.seed, "detail": what }));
        }
    };
    let table = partitions(20)?;
    for n in 0..=20 {
        let direct = enumerate_partitions(n).len() as u64;
        if table.get(n) != &direct.into() {
            fail(o, format!("p({n}) = {} but enumeration finds {direct}", table.get(n)));
        }
    }
    checks.push(json!({ "check": "partitions", "n_max": 20 }));
    for (d, mode, n) in [
        (1, Adjacency::Axis, 8),
        (2, Adjacency::Axis, 8),
        (2, Adjacency::Diagonal, 8),
        (3, Adjacency::Axis, 8),
        (3, Adjacency::Diagonal, 5),
    ] {
        let fast = count_animals(d, mode, n)?.counts;
        let slow = count_animals_bfs(d, mode, n)?;
        if fast != slow {
            fail(o, format!("animal counts differ for d={d} {mode:?}: {fast:?} vs {slow:?}"));
        }
        checks.push(json!({ "check": "animals", "d": d, "adjacency": mode, "n_max": n, "counts": fast }));
    }
    for d in 2..=3usize {
        let w = LatticeWindow::new(d, 5, 8)?;
        for s in 0..20u64 {
            let set = random_connected_set(d, 40, 8, crate::estimators::derive_seed(m.seed, s))?;
            let pack = disjoint_packing(d, &set)?;
            let need = set.len().div_ceil(1 << d);
            if pack.len() < need || !pairwise_disjoint(&w, &pack)? {
                fail(o, format!("packing of {} boxes in d={d} is short or overlapping ({} < {need}?)", set.len(), pack.len()));
            }
        }
        checks.push(json!({ "check": "disjoint_packing", "d": d, "sets": 20, "size": 40 }));
    }
    o.json("counting_checks.json", &checks)
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(v)?;
    buf.push(b'\n');
    Ok(buf)
}

fn write_outputs(dir: &Path, m: &Manifest, o: &Outcome, wall: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &o.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    if let Some(r) = &o.reproducer {
        std::fs::write(dir.join("reproducer.json"), pretty(r)?)?;
    }
    std::fs::write(dir.join("run_summary.json"), pretty(&o.summary(m))?)?;
    std::fs::write(dir.join("timing.json"), pretty(&json!({ "manifest_sha256": o.hash, "wall_seconds": wall }))?)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "percolab", version, about = "Bond percolation lab: manifest-driven experiments and invariant suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment a manifest describes.
    Run(RunArgs),
    /// Run invariant suites over freshly sampled configurations.
    Verify(VerifyArgs),
    /// Re-run a single failing sample from a reproducer file.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    /// Open one cut edge before verification (negative control).
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reproducer: PathBuf,
}

fn effective(path: &Path, seed: Option<u64>, workers: Option<usize>, out: Option<&Path>) -> Result<Manifest> {
    let mut m = Manifest::load(path)?;
    if let Some(s) = seed {
        m.seed = s;
    }
    if workers.is_some() {
        m.workers = workers;
    }
    if let Some(o) = out {
        m.out = Some(o.display().to_string());
    }
    m.validate()?;
    Ok(m)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Io(e.to_string()))
}

fn run_manifest(m: &Manifest) -> Result<i32> {
    let start = Instant::now();
    let o = pool(m.workers)?.install(|| execute(m));
    let wall = start.elapsed().as_secs_f64();
    let dir = PathBuf::from(m.out.clone().unwrap_or_else(|| "out".into()));
    let o = match o {
        Ok(o) => o,
        Err(e) => {
            // a hard failure after validation still leaves a summary behind
            let mut o = Outcome::new(m.hash());
            let status = match e {
                Error::InsufficientData(_) => Status::InsufficientData,
                Error::InvariantViolation(_) => Status::InvariantViolation,
                _ => Status::Error,
            };
            o.flag(status, e.to_string());
            o
        }
    };
    write_outputs(&dir, m, &o, wall)?;
    for msg in &o.messages {
        eprintln!("percolab: {msg}");
    }
    println!("{}", serde_json::to_string(&json!({ "status": o.status, "out": dir.display().to_string(), "manifest_sha256": o.hash }))?);
    Ok(o.status.exit_code())
}

/// Replays one sample from a reproducer. Refuses when the manifest hash differs.
pub fn replay(m: &Manifest, reproducer: &Value) -> Result<Value> {
    let hash = m.hash();
    let recorded = reproducer.get("manifest_sha256").and_then(Value::as_str).unwrap_or("");
    if recorded != hash {
        return Err(bad(format!("reproducer was written under manifest {recorded}, this manifest hashes to {hash}")));
    }
    let check = reproducer.get("check").and_then(Value::as_str).unwrap_or("");
    match check {
        "structure" | "inclusion_exclusion" => {
            let header: ConfigHeader = serde_json::from_value(reproducer["header"].clone())?;
            let w = LatticeWindow::from_spec(header.window)?;
            let c = Configuration::sample(&w, header.p, header.seed, header.sample_index)?;
            if c.header() != header {
                return Err(Error::InvariantViolation("regenerated configuration header differs from the reproducer".into()));
            }
            let fault = reproducer.get("inject_fault").and_then(Value::as_bool).unwrap_or(false);
            let r = analyze(&c, Depth::Full, fault);
            let ie = inclusion_exclusion_from_report(&r).err().map(|e| e.to_string());
            let reproduced = if check == "structure" { !r.violations.is_empty() } else { ie.is_some() };
            Ok(json!({ "check": check, "sample_index": header.sample_index, "reproduced": reproduced, "violations": r.violations, "inclusion_exclusion": ie }))
        }
        "disk_bound" => {
            let v: DiskVariant = serde_json::from_value(reproducer["variant"].clone())?;
            let c = &reproducer["counterexample"];
            let get = |k: &str| c.get(k).and_then(Value::as_f64).ok_or_else(|| bad(format!("counterexample lacks {k}")));
            let z = num_complex::Complex64::new(get("z_re")?, get("z_im")?);
            let holds = disk_bound_check(get("m")? as u32, get("b")? as u32, get("p")?, get("delta")?, z, v)?;
            Ok(json!({ "check": check, "reproduced": !holds }))
        }
        "counting" => {
            let mut o = Outcome::new(hash);
            verify_counting(m, &mut o)?;
            Ok(json!({ "check": check, "reproduced": o.status != Status::Ok, "messages": o.messages }))
        }
        other => Err(bad(format!("unknown reproducer check {other:?}"))),
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(a) => run_manifest(&effective(&a.manifest, a.seed, a.workers, a.out.as_deref())?),
        Command::Verify(v) => {
            let a = v.run;
            let mut m = Manifest::load(&a.manifest)?;
            m.kind = Kind::Verify;
            if v.suite.is_some() {
                m.suite = v.suite;
            }
            if v.inject_fault {
                m.inject_fault = Some(true);
            }
            if let Some(s) = a.seed {
                m.seed = s;
            }
            if a.workers.is_some() {
                m.workers = a.workers;
            }
            if let Some(o) = a.out {
                m.out = Some(o.display().to_string());
            }
            m.validate()?;
            run_manifest(&m)
        }
        Command::Replay(a) => {
            let m = effective(&a.manifest, a.seed, None, None)?;
            let text = std::fs::read_to_string(&a.reproducer).map_err(|e| bad(format!("{}: {e}", a.reproducer.display())))?;
            let rep: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let res = pool(m.workers)?.install(|| replay(&m, &rep))?;
            println!("{}", serde_json::to_string_pretty(&res)?);
            Ok(if res["reproduced"].as_bool() == Some(true) { EXIT_VIOLATION } else { EXIT_OK })
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("percolab: {e}");
            match e {
                Error::Manifest(_) | Error::InvalidParameter(_) | Error::Precondition(_) | Error::VertexOutOfWindow(_) => EXIT_USAGE,
                Error::InsufficientData(_) => EXIT_INSUFFICIENT,
                _ => EXIT_VIOLATION,
            }
        }
    }
}
