//! Signed polynomials in `z^m (1-z)^b`, the complex disk bound for cluster
//! probabilities, geometric decay checks and inclusion-exclusion aggregates.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::pc_hat;
use crate::lattice::LatticeWindow;
use crate::percolation::Configuration;
use crate::rng::StreamKey;
use crate::separating::{analyze, inclusion_exclusion_subsets, inclusion_exclusion_terms, Depth, SampleReport};
use crate::stats::{line_fit, Moments, Z95_ONE_SIDED};

/// `Σ coeff · z^m (1-z)^b`, merged by exponent pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExponentPolynomial {
    terms: BTreeMap<(u32, u32), i64>,
}

impl ExponentPolynomial {
    pub fn new() -> Self {
        Self::default()
    }

    /// `p^m (1-p)^b` with coefficient 1.
    pub fn monomial(m: u32, b: u32) -> Self {
        let mut p = Self::new();
        p.add_term(1, m, b);
        p
    }

    pub fn add_term(&mut self, coeff: i64, m: u32, b: u32) {
        if coeff == 0 {
            return;
        }
        let e = self.terms.entry((m, b)).or_insert(0);
        *e += coeff;
        if *e == 0 {
            self.terms.remove(&(m, b));
        }
    }

    pub fn add(&mut self, other: &ExponentPolynomial) {
        for (&(m, b), &c) in &other.terms {
            self.add_term(c, m, b);
        }
    }

    /// Canonical `(coeff, m, b)` triples ordered by `(m, b)`.
    pub fn terms(&self) -> Vec<(i64, u32, u32)> {
        self.terms.iter().map(|(&(m, b), &c)| (c, m, b)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.terms.iter().map(|(&(m, b), &c)| c as f64 * term(z, m, b)).sum()
    }

    pub fn eval_real(&self, p: f64) -> f64 {
        self.eval(Complex64::new(p, 0.0)).re
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.terms()).expect("integers serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: Vec<(i64, u32, u32)> = serde_json::from_str(s)?;
        let mut p = Self::new();
        for (c, m, b) in raw {
            p.add_term(c, m, b);
        }
        Ok(p)
    }
}

/// `z^m (1-z)^b`; large exponents go through log-magnitude and argument.
fn term(z: Complex64, m: u32, b: u32) -> Complex64 {
    let w = Complex64::new(1.0, 0.0) - z;
    if m + b <= 64 {
        return z.powu(m) * w.powu(b);
    }
    let mut log_mag = 0.0;
    let mut arg = 0.0;
    for (base, e) in [(z, m), (w, b)] {
        if e == 0 {
            continue;
        }
        if base.norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        log_mag += e as f64 * base.norm().ln();
        arg += e as f64 * base.arg();
    }
    Complex64::from_polar(log_mag.exp(), arg)
}

/// Which form of the disk bound to test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskVariant {
    /// `|z - p| < δ` with `p + δ < 1`, against `c^b (p+δ)^m (1-p-δ)^b`.
    Interior,
    /// `|z - 1| < δ`, against `c_δ^b (1-δ)^m δ^b` with `c_δ = (1+δ)/(1-δ)`.
    AtOne,
}

/// Log of both sides of the disk bound, `(ln |z^m (1-z)^b|, ln bound)`.
pub fn disk_bound_logs(m: u32, b: u32, p: f64, delta: f64, z: Complex64, variant: DiskVariant) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("δ={delta} outside (0, 1)")));
    }
    let (centre, base_open, base_closed, c) = match variant {
        DiskVariant::Interior => {
            if !(0.0..1.0).contains(&p) || p + delta >= 1.0 {
                return Err(Error::InvalidParameter(format!("need 0 <= p and p+δ < 1, got p={p}, δ={delta}")));
            }
            (p, p + delta, 1.0 - p - delta, (1.0 - p + delta) / (1.0 - p - delta))
        }
        DiskVariant::AtOne => (1.0, 1.0 - delta, delta, (1.0 + delta) / (1.0 - delta)),
    };
    if (z - centre).norm() >= delta {
        return Err(Error::InvalidParameter(format!("z={z} not in the open disk D({centre}, {delta})")));
    }
    let lg = |x: f64, e: u32| if e == 0 { 0.0 } else { e as f64 * x.ln() };
    let lhs = lg(z.norm(), m) + lg((Complex64::new(1.0, 0.0) - z).norm(), b);
    let rhs = lg(c, b) + lg(base_open, m) + lg(base_closed, b);
    Ok((lhs, rhs))
}

/// `|z^m (1-z)^b| <= c^b P(p+δ)`, up to a relative rounding slack of `1e-12`.
pub fn disk_bound_check(m: u32, b: u32, p: f64, delta: f64, z: Complex64, variant: DiskVariant) -> Result<bool> {
    let (lhs, rhs) = disk_bound_logs(m, b, p, delta, z, variant)?;
    Ok(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskCounterexample {
    pub m: u32,
    pub b: u32,
    pub p: f64,
    pub delta: f64,
    pub z_re: f64,
    pub z_im: f64,
    /// `ln |z^m (1-z)^b| - ln bound`.
    pub log_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskSweep {
    pub variant: DiskVariant,
    pub tuples: u64,
    pub violations: u64,
    /// Violations split by whether the open exponent exceeds the closed one.
    pub violations_m_le_b: u64,
    pub violations_m_gt_b: u64,
    pub tuples_m_le_b: u64,
    pub worst: Option<DiskCounterexample>,
}

/// Random tuples with `m, b <= max_exp`, valid `p, δ` and `z` uniform in the disk.
pub fn disk_sweep(variant: DiskVariant, n_tuples: u64, max_exp: u32, seed: u64) -> DiskSweep {
    let per = |i: u64| {
        let k = StreamKey::new(seed, i);
        let m = (k.word(0) % (max_exp as u64 + 1)) as u32;
        let b = (k.word(1) % (max_exp as u64 + 1)) as u32;
        let (p, delta) = match variant {
            DiskVariant::Interior => {
                let p = k.unit(2);
                // δ in (0, 1-p), kept off the endpoints
                let delta = (1.0 - p) * (1e-9 + (1.0 - 2e-9) * k.unit(3));
                (p, delta)
            }
            DiskVariant::AtOne => (1.0, 1e-9 + (1.0 - 2e-9) * k.unit(3)),
        };
        let r = delta * k.unit(4).sqrt() * (1.0 - 1e-12);
        let theta = std::f64::consts::TAU * k.unit(5);
        let z = Complex64::new(p, 0.0) + Complex64::from_polar(r, theta);
        let (lhs, rhs) = disk_bound_logs(m, b, p, delta, z, variant).expect("sampled inside the domain");
        let bad = lhs > rhs + 1e-12 * (1.0 + rhs.abs());
        let cx = DiskCounterexample { m, b, p, delta, z_re: z.re, z_im: z.im, log_excess: lhs - rhs };
        (m <= b, bad.then_some(cx))
    };
    let rows: Vec<_> = (0..n_tuples).into_par_iter().map(per).collect();
    let mut s = DiskSweep {
        variant,
        tuples: n_tuples,
        violations: 0,
        violations_m_le_b: 0,
        violations_m_gt_b: 0,
        tuples_m_le_b: 0,
        worst: None,
    };
    for (le, bad) in rows {
        s.tuples_m_le_b += le as u64;
        if let Some(cx) = bad {
            s.violations += 1;
            if le {
                s.violations_m_le_b += 1;
            } else {
                s.violations_m_gt_b += 1;
            }
            if s.worst.as_ref().is_none_or(|w| cx.log_excess > w.log_excess) {
                s.worst = Some(cx);
            }
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    /// `exp(slope)` of the log-magnitude fit.
    pub c_hat: f64,
    /// One-sided 95% upper limit of the ratio.
    pub c_upper: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub points: usize,
    pub pass: bool,
}

/// Fits `ln |a_n|` against `n` on the window and passes iff the ratio is below 1
/// at one-sided 95% confidence. Needs a run of 5 consecutive nonzero bins.
pub fn geometric_decay_check(magnitudes: &[(usize, f64)], window: Option<(usize, usize)>) -> Result<DecayCheck> {
    let (lo, hi) = window.unwrap_or((0, usize::MAX));
    let mut pts: Vec<(usize, f64)> =
        magnitudes.iter().copied().filter(|&(n, a)| n >= lo && n <= hi && a.abs() > 0.0 && a.is_finite()).collect();
    pts.sort_by_key(|p| p.0);
    let mut run = 0;
    let mut best = 0;
    for (i, p) in pts.iter().enumerate() {
        run = if i > 0 && pts[i - 1].0 + 1 == p.0 { run + 1 } else { 1 };
        best = best.max(run);
    }
    if best < 5 {
        return Err(Error::InsufficientData(format!("longest run of nonzero bins is {best}, need 5")));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.abs().ln()).collect();
    let fit = line_fit(&x, &y)?;
    let upper = fit.slope + Z95_ONE_SIDED * fit.slope_se;
    Ok(DecayCheck {
        c_hat: fit.slope.exp(),
        c_upper: upper.exp(),
        slope: fit.slope,
        slope_se: fit.slope_se,
        points: fit.points,
        pass: upper < 0.0,
    })
}

/// Linear bounds on the number of edges an event attached to `n` boxes may read:
/// at least `n / 2^d` disjoint boxes' worth, at most every edge of `3^d n + 1` boxes.
pub fn complexity_bounds(w: &LatticeWindow, n: usize, box_edges: usize) -> (usize, usize) {
    let d = w.dim();
    let side = 2 * w.half_box() as usize + 1;
    let lower = n.div_ceil(1 << d) * box_edges;
    let upper = d * (3usize.pow(d as u32) * n + 1) * side.pow(d as u32);
    (lower, upper)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionExclusion {
    pub lhs: i64,
    pub rhs: i64,
    /// Occurring components.
    pub k: usize,
    /// Whether the subset sum was checked against the closed form.
    pub subsets_checked: bool,
}

/// Both sides of `1{some S occurs, diam C_o ≥ N/5} = 1{diam ≥ N/5} Σ_T (-1)^{|T|+1}`.
pub fn per_config_inclusion_exclusion(c: &Configuration) -> Result<InclusionExclusion> {
    let r = analyze(c, Depth::Full, false);
    if r.excluded {
        return Err(Error::MarginViolation("C_o(N) or S_o reaches the box rim".into()));
    }
    if let Some(v) = r.violations.first() {
        return Err(Error::InvariantViolation(v.clone()));
    }
    inclusion_exclusion_from_report(&r)
}

pub fn inclusion_exclusion_from_report(r: &SampleReport) -> Result<InclusionExclusion> {
    let k = r.occurring_sizes.len();
    let large = !r.small as i64;
    let closed = 1 - (k == 0) as i64;
    let subsets_checked = k <= 10;
    if subsets_checked {
        let sum: i64 = inclusion_exclusion_subsets(&r.occurring_sizes).iter().map(|t| t.1).sum();
        if sum != closed {
            return Err(Error::InvariantViolation(format!("subset sum {sum} differs from closed form {closed}")));
        }
    }
    Ok(InclusionExclusion { lhs: r.union_event() as i64, rhs: large * closed, k, subsets_checked })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedTerm {
    pub n: usize,
    pub estimate: f64,
    pub se: f64,
    /// Samples with a nonzero contribution at this `n`.
    pub nonzero: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedAggregate {
    pub p: f64,
    pub n_max: usize,
    pub samples: u64,
    /// Samples left out because `C_o(N)` or `S_o` reached the margin.
    pub excluded: u64,
    pub terms: Vec<SignedTerm>,
    pub total: f64,
    pub total_se: f64,
    /// Estimate of `Pr(some S occurs, diam C_o ≥ N/5)`.
    pub direct: f64,
    pub direct_se: f64,
    /// Mean mass of terms with `n > n_max`.
    pub truncated: f64,
    /// Per-configuration identity failures; must be zero.
    pub identity_failures: u64,
    /// Occurring components whose dependency count left the linear bounds.
    pub complexity_failures: u64,
    pub decay: Option<DecayCheck>,
    pub decay_error: Option<String>,
}

impl SignedAggregate {
    /// `|Σ â_n - direct|` in combined standard errors.
    pub fn discrepancy_se(&self) -> f64 {
        let diff = (self.total - self.direct).abs();
        let se = (self.total_se.powi(2) + self.direct_se.powi(2)).sqrt();
        if diff == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            diff / se
        }
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "estimate", "se", "nonzero"])?;
        for t in &self.terms {
            w.write_record([t.n.to_string(), t.estimate.to_string(), t.se.to_string(), t.nonzero.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Monte Carlo estimates of the signed per-size terms `a_n` and of the union event.
pub fn empirical_expansion(w: &LatticeWindow, p: f64, n_max: usize, n_samples: u64, seed: u64) -> Result<SignedAggregate> {
    if p <= pc_hat(w.dim()) {
        return Err(Error::Precondition(format!("p={p} is not above the threshold surrogate {}", pc_hat(w.dim()))));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let reports: Vec<SampleReport> = (0..n_samples)
        .into_par_iter()
        .map(|i| Configuration::sample(w, p, seed, i).map(|c| analyze(&c, Depth::Full, false)))
        .collect::<Result<_>>()?;
    Ok(aggregate_expansion(w, p, n_max, &reports))
}

pub fn aggregate_expansion(w: &LatticeWindow, p: f64, n_max: usize, reports: &[SampleReport]) -> SignedAggregate {
    let box_edges = crate::renorm::box_edge_count(w);
    let mut sums = vec![(0i64, 0i64, 0u64); n_max + 1];
    let mut direct = Moments::default();
    let mut total = Moments::default();
    let mut truncated = 0i64;
    let mut agg = SignedAggregate {
        p,
        n_max,
        samples: 0,
        excluded: 0,
        terms: Vec::new(),
        total: 0.0,
        total_se: 0.0,
        direct: 0.0,
        direct_se: 0.0,
        truncated: 0.0,
        identity_failures: 0,
        complexity_failures: 0,
        decay: None,
        decay_error: None,
    };
    for r in reports {
        if r.excluded {
            agg.excluded += 1;
            continue;
        }
        agg.samples += 1;
        match inclusion_exclusion_from_report(r) {
            Ok(ie) if ie.lhs == ie.rhs && r.violations.is_empty() => {}
            _ => agg.identity_failures += 1,
        }
        for (&n, &e) in r.occurring_sizes.iter().zip(&r.occurring_edges) {
            let (lo, hi) = complexity_bounds(w, n, box_edges);
            if e < lo || e > hi {
                agg.complexity_failures += 1;
            }
        }
        let mut in_range = 0i64;
        if !r.small {
            for (n, a) in inclusion_exclusion_terms(&r.occurring_sizes) {
                if n <= n_max {
                    sums[n].0 += a;
                    sums[n].1 += a * a;
                    sums[n].2 += 1;
                    in_range += a;
                } else {
                    truncated += a;
                }
            }
        }
        total.push(in_range as f64);
        direct.push(r.union_event() as u8 as f64);
    }
    let s = agg.samples.max(1) as f64;
    for (n, &(sum, sq, nz)) in sums.iter().enumerate().skip(1) {
        let mean = sum as f64 / s;
        let var = if agg.samples > 1 { (sq as f64 - s * mean * mean) / (s - 1.0) } else { 0.0 };
        agg.terms.push(SignedTerm { n, estimate: mean, se: (var.max(0.0) / s).sqrt(), nonzero: nz });
    }
    agg.total = total.mean;
    agg.total_se = total.se();
    agg.direct = direct.mean;
    agg.direct_se = direct.se();
    agg.truncated = truncated as f64 / s;
    let mags: Vec<(usize, f64)> = agg.terms.iter().map(|t| (t.n, t.estimate.abs())).collect();
    match geometric_decay_check(&mags, None) {
        Ok(d) => agg.decay = Some(d),
        Err(e) => agg.decay_error = Some(e.to_string()),
    }
    agg
}

/// Exact event polynomial over `k <= 25` edges: `Σ_{ω ∈ A} p^{|open|} (1-p)^{k-|open|}`,
/// with `event` reading the open set as a bit mask.
pub fn exhaustive_polynomial(k: usize, event: impl Fn(u32) -> bool + Sync) -> Result<ExponentPolynomial> {
    if k > 25 {
        return Err(Error::InvalidParameter(format!("{k} edges exceed the exhaustive cap of 25")));
    }
    let counts: Vec<i64> = (0u32..(1u32 << k))
        .into_par_iter()
        .fold(
            || vec![0i64; k + 1],
            |mut acc, mask| {
                if event(mask) {
                    acc[mask.count_ones() as usize] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0i64; k + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut poly = ExponentPolynomial::new();
    for (m, &c) in counts.iter().enumerate() {
        poly.add_term(c, m as u32, (k - m) as u32);
    }
    Ok(poly)
}

/// Event polynomial of a window event that reads only the listed edge slots;
/// every other edge is held closed.
pub fn window_event_polynomial(
    w: &LatticeWindow,
    slots: &[usize],
    event: impl Fn(&Configuration) -> bool + Sync,
) -> Result<ExponentPolynomial> {
    let base = Configuration::filled(w, false);
    exhaustive_polynomial(slots.len(), |mask| {
        let mut c = base.clone();
        for (i, &s) in slots.iter().enumerate() {
            if mask >> i & 1 == 1 {
                c.set_open(s, true);
            }
        }
        event(&c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::clusters;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eval_examples() {
        let p = ExponentPolynomial::monomial(2, 3);
        assert!((p.eval_real(0.5) - 0.03125).abs() < 1e-15);
        let mut q = ExponentPolynomial::monomial(0, 1);
        q.add_term(-3, 4, 2);
        assert_eq!(q.eval(c(1.0, 0.0)), c(0.0, 0.0));
        let r = ExponentPolynomial::monomial(1, 1);
        assert!((r.eval(c(0.0, 1.0)).norm() - 2f64.sqrt()).abs() < 1e-14);
        // p = 1 keeps b = 0 terms, p = 0 keeps m = 0 terms
        let mut s = ExponentPolynomial::new();
        s.add_term(2, 3, 0);
        s.add_term(5, 0, 2);
        s.add_term(7, 1, 1);
        assert_eq!(s.eval_real(1.0), 2.0);
        assert_eq!(s.eval_real(0.0), 5.0);
    }

    #[test]
    fn canonical_merge_and_json() {
        let mut p = ExponentPolynomial::new();
        p.add_term(1, 2, 2);
        p.add_term(-1, 2, 2);
        assert!(p.is_zero());
        p.add_term(3, 1, 4);
        p.add_term(-1, 0, 0);
        p.add_term(2, 1, 4);
        assert_eq!(p.terms(), vec![(-1, 0, 0), (5, 1, 4)]);
        let j = p.to_json();
        assert_eq!(j, "[[-1,0,0],[5,1,4]]");
        assert_eq!(ExponentPolynomial::from_json(&j).unwrap(), p);
    }

    #[test]
    fn log_domain_matches_direct_powers() {
        // m + b = 70 goes through the log path; compare with repeated products
        for z in [c(0.3, 0.2), c(0.9, -0.05), c(-0.2, 0.4)] {
            let got = ExponentPolynomial::monomial(40, 30).eval(z);
            let mut want = c(1.0, 0.0);
            for _ in 0..40 {
                want *= z;
            }
            for _ in 0..30 {
                want *= c(1.0, 0.0) - z;
            }
            assert!((got - want).norm() <= 1e-10 * want.norm(), "{got} vs {want}");
        }
        assert_eq!(ExponentPolynomial::monomial(100, 0).eval(c(0.0, 0.0)), c(0.0, 0.0));
        assert_eq!(ExponentPolynomial::monomial(0, 100).eval(c(0.0, 0.0)), c(1.0, 0.0));
    }

    #[test]
    fn disk_bound_examples() {
        assert!(disk_bound_check(0, 0, 0.3, 0.2, c(0.35, 0.1), DiskVariant::Interior).unwrap());
        for (m, b) in [(0, 5), (7, 0), (13, 20)] {
            assert!(disk_bound_check(m, b, 0.4, 0.3, c(0.4, 0.0), DiskVariant::Interior).unwrap());
        }
        assert!(disk_bound_check(1, 1, 0.8, 0.3, c(0.8, 0.0), DiskVariant::Interior).is_err());
        assert!(disk_bound_check(1, 1, 0.2, 0.3, c(0.6, 0.0), DiskVariant::Interior).is_err());
        assert!(disk_bound_check(1, 1, 0.2, 0.0, c(0.2, 0.0), DiskVariant::Interior).is_err());
    }

    #[test]
    fn disk_bound_at_one_fails_when_open_exponent_dominates() {
        // z = 1 + δ/2: |z|^m grows while the bound shrinks like (1-δ)^m
        assert!(!disk_bound_check(1, 0, 1.0, 0.1, c(1.05, 0.0), DiskVariant::AtOne).unwrap());
        // with b >= m the slack c_δ^(b-m) absorbs the ratio
        assert!(disk_bound_check(3, 3, 1.0, 0.1, c(1.05, 0.0), DiskVariant::AtOne).unwrap());
    }

    #[test]
    fn small_interior_sweep_is_clean() {
        let s = disk_sweep(DiskVariant::Interior, 20_000, 200, 11);
        assert_eq!(s.violations, 0, "{:?}", s.worst);
        let one = disk_sweep(DiskVariant::AtOne, 20_000, 200, 11);
        assert_eq!(one.violations_m_le_b, 0, "{:?}", one.worst);
        assert_eq!(one.violations, one.violations_m_gt_b);
    }

    #[test]
    fn decay_examples() {
        let mags: Vec<(usize, f64)> = (1..=20).map(|n| (n, (-0.1 * n as f64).exp())).collect();
        let d = geometric_decay_check(&mags, None).unwrap();
        assert!((d.c_hat - (-0.1f64).exp()).abs() < 1e-9 && d.pass);
        let flat: Vec<(usize, f64)> = (1..=20).map(|n| (n, 0.3)).collect();
        assert!(!geometric_decay_check(&flat, None).unwrap().pass);
        let gaps: Vec<(usize, f64)> = (1..=20).map(|n| (n, if n % 4 == 0 { 0.0 } else { 1.0 })).collect();
        assert!(matches!(geometric_decay_check(&gaps, None), Err(Error::InsufficientData(_))));
        assert!(geometric_decay_check(&mags, Some((3, 6))).is_err());
        assert!(geometric_decay_check(&mags, Some((3, 7))).is_ok());
    }

    #[test]
    fn inclusion_exclusion_closed_form() {
        let mut r = SampleReport::default();
        let ie = inclusion_exclusion_from_report(&r).unwrap();
        assert_eq!((ie.lhs, ie.rhs), (0, 0));
        r.occurring_sizes = vec![8];
        let ie = inclusion_exclusion_from_report(&r).unwrap();
        assert_eq!((ie.lhs, ie.rhs), (1, 1));
        r.occurring_sizes = vec![8, 20];
        let ie = inclusion_exclusion_from_report(&r).unwrap();
        assert_eq!((ie.lhs, ie.rhs, ie.k), (1, 1, 2));
        r.small = true;
        let ie = inclusion_exclusion_from_report(&r).unwrap();
        assert_eq!((ie.lhs, ie.rhs), (0, 0));
    }

    #[test]
    fn per_config_identity_on_samples() {
        let w = LatticeWindow::new(2, 10, 5).unwrap();
        let mut checked = 0;
        for i in 0..30 {
            let cfg = Configuration::sample(&w, 0.65, 4, i).unwrap();
            match per_config_inclusion_exclusion(&cfg) {
                Ok(ie) => {
                    assert_eq!(ie.lhs, ie.rhs);
                    checked += 1;
                }
                Err(Error::MarginViolation(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn expansion_extremes() {
        let w = LatticeWindow::new(2, 5, 3).unwrap();
        let a = empirical_expansion(&w, 1.0, 20, 5, 1).unwrap();
        assert!(a.terms.iter().all(|t| t.estimate == 0.0));
        assert_eq!((a.direct, a.total), (0.0, 0.0));
        assert!(a.decay_error.is_some());
        assert!(matches!(empirical_expansion(&w, 0.4, 20, 5, 1), Err(Error::Precondition(_))));
        // p = 0 aggregates directly: every cluster is a point
        let reports: Vec<_> = (0..5).map(|i| analyze(&Configuration::sample(&w, 0.0, 1, i).unwrap(), Depth::Full, false)).collect();
        let a = aggregate_expansion(&w, 0.0, 20, &reports);
        assert_eq!(a.direct, 0.0);
        assert_eq!(a.identity_failures, 0);
    }

    #[test]
    fn complexity_bounds_are_ordered() {
        let w = LatticeWindow::new(2, 10, 5).unwrap();
        let e = crate::renorm::box_edge_count(&w);
        for n in [1, 8, 40] {
            let (lo, hi) = complexity_bounds(&w, n, e);
            assert!(lo > 0 && lo < hi);
        }
    }

    /// Origin linked to (1,1) inside the 3x3 block `[-1,1]^2`, which has 12 edges.
    fn block_slots(w: &LatticeWindow) -> Vec<usize> {
        w.edges()
            .filter(|&e| {
                let (a, b) = w.edge_endpoints(e).unwrap();
                [a, b].iter().all(|&v| w.coords(v)[..2].iter().all(|x| x.abs() <= 1))
            })
            .collect()
    }

    fn linked(c: &Configuration) -> bool {
        let w = c.window();
        let l = clusters(c);
        let target = w.index_of(&[1, 1, 0, 0]).unwrap();
        l.cluster_id(w.origin()) == l.cluster_id(target)
    }

    #[test]
    fn exhaustive_oracle_matches_monte_carlo() {
        let w = LatticeWindow::new(2, 5, 3).unwrap();
        let slots = block_slots(&w);
        assert_eq!(slots.len(), 12);
        let poly = window_event_polynomial(&w, &slots, linked).unwrap();
        for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let v = poly.eval_real(p);
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
        assert_eq!(poly.eval_real(0.0), 0.0);
        assert!((poly.eval_real(1.0) - 1.0).abs() < 1e-12);
        // Monte Carlo with edges outside the block forced closed
        let p = 0.6;
        let n = 20_000u64;
        let hits = (0..n)
            .filter(|&i| {
                let s = Configuration::sample(&w, p, 77, i).unwrap();
                let mut c = Configuration::filled(&w, false);
                for &e in &slots {
                    c.set_open(e, s.is_open(e));
                }
                linked(&c)
            })
            .count() as f64;
        let est = hits / n as f64;
        let se = (est * (1.0 - est) / n as f64).sqrt();
        assert!((est - poly.eval_real(p)).abs() <= 4.0 * se, "{est} vs {}", poly.eval_real(p));
    }

    #[test]
    fn exhaustive_single_edge_and_cap() {
        let p = exhaustive_polynomial(1, |m| m == 1).unwrap();
        assert_eq!(p.terms(), vec![(1, 1, 0)]);
        let all = exhaustive_polynomial(10, |_| true).unwrap();
        assert!((all.eval_real(0.37) - 1.0).abs() < 1e-12);
        assert!(exhaustive_polynomial(26, |_| true).is_err());
    }
}
