//! Monte Carlo estimators for the macroscopic functions of the model: θ, τ, τ^f,
//! χ^f_k, κ, the cluster-size distribution, and the κ-derivative identity.
//!
//! Clusters touching the window rim count as infinite everywhere except in κ,
//! where they contribute through their truncated size.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeWindow, Point, WindowSpec, MAX_DIM};
use crate::percolation::{EdgeWords, Explorer, UnionFind};
use crate::rng::{mix64, StreamKey, Threshold};
use crate::stats::{weighted_line_fit, wilson, Interval, Moments, Z95};

/// Threshold surrogate used in preconditions. `d = 2` is exact. The `d = 3`
/// value is the crossing midpoint from [`pc_pilot`] on the side-24 cube
/// (p grid 0.220..0.280 step 0.005, 4000 samples, seed 1), frozen here; sides
/// 8 and 16 gave 0.2571 and 0.2546. `d = 4` uses the published numerical value.
pub fn pc_hat(d: usize) -> f64 {
    match d {
        2 => 0.5,
        3 => 0.2531,
        _ => 0.1601,
    }
}

/// Independent stream for a second estimator on the same seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0xA076_1D64_78BD_642F)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Theta,
    Tau,
    TauF,
    ChiF,
    Kappa,
    /// `Σ_{|x|_∞ <= ρ} τ^f_{o,x}`.
    TauFSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub quantity: Quantity,
    pub p: f64,
    pub window: WindowSpec,
    pub samples: u64,
    pub estimate: f64,
    pub se: f64,
    pub ci95: Interval,
    pub seed: u64,
    /// Samples whose origin cluster touched the rim.
    pub rim_touching: u64,
    /// Moment order for χ^f, tuple size for τ, radius for the τ^f sum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<u64>,
    /// Known infinite-volume value when the window cannot show it (κ at p = 1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infinite_volume: Option<f64>,
}

impl EstimatorReport {
    fn proportion(quantity: Quantity, p: f64, w: &LatticeWindow, n: u64, hits: u64, seed: u64, rim: u64) -> Self {
        let est = hits as f64 / n as f64;
        EstimatorReport {
            quantity,
            p,
            window: w.spec(),
            samples: n,
            estimate: est,
            se: (est * (1.0 - est) / n as f64).sqrt(),
            ci95: wilson(hits, n, Z95),
            seed,
            rim_touching: rim,
            order: None,
            infinite_volume: None,
        }
    }

    fn mean(quantity: Quantity, p: f64, w: &LatticeWindow, estimate: f64, m: &Moments, seed: u64, rim: u64) -> Self {
        let se = m.se();
        EstimatorReport {
            quantity,
            p,
            window: w.spec(),
            samples: m.n,
            estimate,
            se,
            ci95: Interval { lo: estimate - Z95 * se, hi: estimate + Z95 * se },
            seed,
            rim_touching: rim,
            order: None,
            infinite_volume: None,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p={p} outside [0, 1]")))
    }
}

fn check_samples(n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParameter("n_samples must be positive".into()))
    } else {
        Ok(())
    }
}

/// Runs `f` over sample indices in parallel and returns results in index order.
fn per_sample<T: Send>(w: &LatticeWindow, n: u64, f: impl Fn(&mut Explorer, u64) -> T + Sync) -> Vec<T> {
    (0..n).into_par_iter().map_init(|| Explorer::new(w), |ex, i| f(ex, i)).collect()
}

/// `(|C_o|, touches rim)`, stopping at the rim when `stop_at_rim`.
fn origin_cluster(w: &LatticeWindow, ex: &mut Explorer, t: Threshold, key: StreamKey, stop_at_rim: bool) -> (usize, bool) {
    let size = ex.explore(w, w.origin(), stop_at_rim, |s| t.admits(key.word(w.edge_key(s))));
    (size, ex.touches_rim())
}

/// Fraction of samples whose origin cluster reaches the rim.
pub fn theta_hat(p: f64, w: &LatticeWindow, n_samples: u64, seed: u64) -> Result<EstimatorReport> {
    check_p(p)?;
    check_samples(n_samples)?;
    let t = Threshold::new(p);
    let hits: u64 = per_sample(w, n_samples, |ex, i| origin_cluster(w, ex, t, StreamKey::new(seed, i), true).1 as u64)
        .into_iter()
        .sum();
    Ok(EstimatorReport::proportion(Quantity::Theta, p, w, n_samples, hits, seed, hits))
}

fn interior_index(w: &LatticeWindow, x: &Point) -> Result<usize> {
    match w.index_of(x) {
        Some(v) if !w.on_rim(v) => Ok(v),
        _ => Err(Error::VertexOutOfWindow(format!("{:?}", &x[..w.dim()]))),
    }
}

/// Probability that all points of `xs` share one cluster; with `truncated`, one
/// cluster that avoids the rim.
pub fn tau_hat(xs: &[Point], p: f64, w: &LatticeWindow, n_samples: u64, seed: u64, truncated: bool) -> Result<EstimatorReport> {
    check_p(p)?;
    check_samples(n_samples)?;
    if xs.is_empty() {
        return Err(Error::EmptySet);
    }
    let idx: Vec<usize> = xs.iter().map(|x| interior_index(w, x)).collect::<Result<_>>()?;
    let t = Threshold::new(p);
    let rows = per_sample(w, n_samples, |ex, i| {
        let key = StreamKey::new(seed, i);
        ex.explore(w, idx[0], truncated, |s| t.admits(key.word(w.edge_key(s))));
        let joined = idx.iter().all(|&v| ex.contains(v));
        let rim = ex.touches_rim();
        ((joined && !(truncated && rim)) as u64, rim as u64)
    });
    let hits = rows.iter().map(|r| r.0).sum();
    let rim = rows.iter().map(|r| r.1).sum();
    let q = if truncated { Quantity::TauF } else { Quantity::Tau };
    let mut r = EstimatorReport::proportion(q, p, w, n_samples, hits, seed, rim);
    r.order = Some(xs.len() as u64);
    Ok(r)
}

/// Sample mean of `|C_o|^k` on samples where `C_o` avoids the rim (zero otherwise).
pub fn chi_f_hat(k: u32, p: f64, w: &LatticeWindow, n_samples: u64, seed: u64) -> Result<EstimatorReport> {
    check_p(p)?;
    check_samples(n_samples)?;
    if k == 0 {
        return Err(Error::InvalidParameter("moment order k must be at least 1".into()));
    }
    let t = Threshold::new(p);
    let rows = per_sample(w, n_samples, |ex, i| origin_cluster(w, ex, t, StreamKey::new(seed, i), true));
    let mut m = Moments::default();
    let mut exact: u128 = 0;
    let mut rim = 0;
    for (size, touches) in rows {
        let v = if touches { 0 } else { (size as u128).pow(k) };
        rim += touches as u64;
        exact += v;
        m.push(v as f64);
    }
    // integer accumulation keeps the identity with the size histogram exact
    let est = exact as f64 / n_samples as f64;
    let mut r = EstimatorReport::mean(Quantity::ChiF, p, w, est, &m, seed, rim);
    r.order = Some(k as u64);
    Ok(r)
}

/// Sample mean of `1/|C_o|`; rim-touching clusters enter with their size inside the window.
pub fn kappa_hat(p: f64, w: &LatticeWindow, n_samples: u64, seed: u64) -> Result<EstimatorReport> {
    check_p(p)?;
    check_samples(n_samples)?;
    let t = Threshold::new(p);
    let rows = per_sample(w, n_samples, |ex, i| origin_cluster(w, ex, t, StreamKey::new(seed, i), false));
    let mut m = Moments::default();
    let mut rim = 0;
    for (size, touches) in rows {
        rim += touches as u64;
        m.push(1.0 / size as f64);
    }
    let mut r = EstimatorReport::mean(Quantity::Kappa, p, w, m.mean, &m, seed, rim);
    if p >= 1.0 {
        r.infinite_volume = Some(0.0);
    }
    Ok(r)
}

/// `Σ_{|x|_∞ <= radius} τ^f_{o,x}`, estimated from per-point indicators.
pub fn tau_f_sum(p: f64, w: &LatticeWindow, radius: i64, n_samples: u64, seed: u64) -> Result<EstimatorReport> {
    check_p(p)?;
    check_samples(n_samples)?;
    let t = Threshold::new(p);
    let d = w.dim();
    let rows = per_sample(w, n_samples, |ex, i| {
        let (_, touches) = origin_cluster(w, ex, t, StreamKey::new(seed, i), true);
        if touches {
            return (0u64, true);
        }
        let inside = ex.visited().iter().filter(|&&v| (0..d).all(|a| w.coord(v, a).abs() <= radius)).count();
        (inside as u64, false)
    });
    let mut m = Moments::default();
    let mut rim = 0;
    for (c, touches) in rows {
        rim += touches as u64;
        m.push(c as f64);
    }
    let mut r = EstimatorReport::mean(Quantity::TauFSum, p, w, m.mean, &m, seed, rim);
    r.order = Some(radius as u64);
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub first: EstimatorReport,
    pub second: EstimatorReport,
    /// `|first - second|` in combined standard errors.
    pub z: f64,
}

fn cross(first: EstimatorReport, second: EstimatorReport) -> CrossCheck {
    let diff = (first.estimate - second.estimate).abs();
    let se = (first.se.powi(2) + second.se.powi(2)).sqrt();
    let z = if diff == 0.0 { 0.0 } else { diff / se };
    CrossCheck { first, second, z }
}

/// `χ^f_1` against `Σ_x τ^f_{o,x}` on independent streams.
pub fn chi_f_cross_check(p: f64, w: &LatticeWindow, radius: i64, n_samples: u64, seed: u64) -> Result<CrossCheck> {
    let chi = chi_f_hat(1, p, w, n_samples, seed)?;
    let sum = tau_f_sum(p, w, radius, n_samples, derive_seed(seed, 1))?;
    Ok(cross(chi, sum))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub p: f64,
    pub window: WindowSpec,
    pub samples: u64,
    /// Samples whose origin cluster touched the rim.
    pub infinite: u64,
    /// Counts of finite origin clusters by size.
    pub counts: BTreeMap<usize, u64>,
}

impl SizeHistogram {
    pub fn p_n(&self, n: usize) -> f64 {
        self.counts.get(&n).copied().unwrap_or(0) as f64 / self.samples as f64
    }

    pub fn theta(&self) -> f64 {
        self.infinite as f64 / self.samples as f64
    }

    /// Every sample lands in exactly one bin.
    pub fn normalized(&self) -> bool {
        self.counts.values().sum::<u64>() + self.infinite == self.samples
    }

    /// `Σ_n n P̂_n`.
    pub fn chi_f1(&self) -> f64 {
        self.counts.iter().map(|(&n, &c)| n as u128 * c as u128).sum::<u128>() as f64 / self.samples as f64
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "count", "p_n"])?;
        for (&n, &c) in &self.counts {
            w.write_record([n.to_string(), c.to_string(), self.p_n(n).to_string()])?;
        }
        w.write_record(["inf".to_string(), self.infinite.to_string(), self.theta().to_string()])?;
        w.flush()?;
        Ok(())
    }
}

pub fn size_histogram(p: f64, w: &LatticeWindow, n_samples: u64, seed: u64) -> Result<SizeHistogram> {
    check_p(p)?;
    check_samples(n_samples)?;
    let t = Threshold::new(p);
    let rows = per_sample(w, n_samples, |ex, i| origin_cluster(w, ex, t, StreamKey::new(seed, i), true));
    let mut h = SizeHistogram { p, window: w.spec(), samples: n_samples, infinite: 0, counts: BTreeMap::new() };
    for (size, touches) in rows {
        if touches {
            h.infinite += 1;
        } else {
            *h.counts.entry(size).or_insert(0) += 1;
        }
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaDerivative {
    pub p: f64,
    pub h: f64,
    pub common_random_numbers: bool,
    pub samples: u64,
    /// `(κ̂(p+h) - κ̂(p-h)) / 2h`.
    pub difference_quotient: f64,
    pub difference_se: f64,
    /// `-(1/(2(1-p))) Σ_{x ∈ N(o)} (1 - τ̂_{o,x})`.
    pub predicted: f64,
    pub predicted_se: f64,
    pub combined_se: f64,
    /// `|difference_quotient - predicted| / combined_se`.
    pub z: f64,
}

/// Central difference of κ against the neighbour-connectivity formula for its
/// derivative. κ decreases in `p`, so the formula carries a minus sign.
pub fn kappa_derivative_check(
    p: f64,
    h: f64,
    w: &LatticeWindow,
    n_samples: u64,
    seed: u64,
    common_random_numbers: bool,
) -> Result<KappaDerivative> {
    check_samples(n_samples)?;
    if h < 0.01 {
        return Err(Error::Precondition(format!("h={h} is below the Monte Carlo resolution floor 0.01")));
    }
    let pc = pc_hat(w.dim());
    if p - h <= pc || p + h >= 1.0 {
        return Err(Error::Precondition(format!("p ± h = [{}, {}] must lie inside ({pc}, 1)", p - h, p + h)));
    }
    let origin = w.origin();
    let d = w.dim();
    let neighbors: Vec<usize> = (0..d)
        .flat_map(|a| [true, false].map(|up| w.step(origin, a, up).expect("origin is interior")))
        .collect();
    let (tp, tm, t0) = (Threshold::new(p + h), Threshold::new(p - h), Threshold::new(p));
    let seeds = if common_random_numbers {
        [seed; 3]
    } else {
        [seed, derive_seed(seed, 2), derive_seed(seed, 3)]
    };
    let scale = 1.0 / (2.0 * (1.0 - p));
    let rows: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map_init(
            || (Explorer::new(w), [EdgeWords::new(w), EdgeWords::new(w), EdgeWords::new(w)]),
            |(ex, words), i| {
                let used = if common_random_numbers { 1 } else { 3 };
                for k in 0..used {
                    words[k].fill(seeds[k], i);
                }
                let [a, b, c] = if common_random_numbers { [0, 0, 0] } else { [0, 1, 2] };
                let plus = ex.explore(w, origin, false, |s| tp.admits(words[a].word(s)));
                let minus = ex.explore(w, origin, false, |s| tm.admits(words[b].word(s)));
                let mut missing = neighbors.len();
                ex.explore_until(w, origin, |s| t0.admits(words[c].word(s)), |v| {
                    if neighbors.contains(&v) {
                        missing -= 1;
                    }
                    missing == 0
                });
                let dq = (1.0 / plus as f64 - 1.0 / minus as f64) / (2.0 * h);
                (dq, -scale * missing as f64)
            },
        )
        .collect();
    let dq: Moments = rows.iter().map(|r| r.0).collect();
    let f: Moments = rows.iter().map(|r| r.1).collect();
    let combined_se = if common_random_numbers {
        rows.iter().map(|r| r.0 - r.1).collect::<Moments>().se()
    } else {
        (dq.se().powi(2) + f.se().powi(2)).sqrt()
    };
    let diff = (dq.mean - f.mean).abs();
    Ok(KappaDerivative {
        p,
        h,
        common_random_numbers,
        samples: n_samples,
        difference_quotient: dq.mean,
        difference_se: dq.se(),
        predicted: f.mean,
        predicted_se: f.se(),
        combined_se,
        z: if diff == 0.0 { 0.0 } else { diff / combined_se },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauFPoint {
    pub r: i64,
    pub hits: u64,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauFProfile {
    pub p: f64,
    pub window: WindowSpec,
    pub samples: u64,
    pub points: Vec<TauFPoint>,
    /// Decay rate `ĉ₂ = -slope` of `ln τ̂^f` on the fitted range.
    pub rate: Option<f64>,
    pub rate_se: Option<f64>,
    pub fit_range: Option<(i64, i64)>,
    pub fit_error: Option<String>,
}

impl TauFProfile {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "hits", "tau_f"])?;
        for p in &self.points {
            w.write_record([p.r.to_string(), p.hits.to_string(), p.estimate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimum hits for a distance to enter the decay fit.
const FIT_MIN_HITS: u64 = 5;

/// `τ^f_{o, r·dir}` for `r = 0..=max_dist` with an exponential fit from `r = 1`
/// up to the last distance with at least 5 hits.
pub fn tau_f_decay(p: f64, w: &LatticeWindow, direction: &Point, max_dist: i64, n_samples: u64, seed: u64) -> Result<TauFProfile> {
    check_p(p)?;
    check_samples(n_samples)?;
    if p <= pc_hat(w.dim()) {
        return Err(Error::Precondition(format!("p={p} is not above the threshold surrogate {}", pc_hat(w.dim()))));
    }
    let targets: Vec<usize> = (0..=max_dist)
        .map(|r| {
            let mut x = [0i64; MAX_DIM];
            (0..MAX_DIM).for_each(|a| x[a] = direction[a] * r);
            interior_index(w, &x)
        })
        .collect::<Result<_>>()?;
    let t = Threshold::new(p);
    let rows = per_sample(w, n_samples, |ex, i| {
        let (_, touches) = origin_cluster(w, ex, t, StreamKey::new(seed, i), true);
        if touches {
            return Vec::new();
        }
        targets.iter().map(|&v| ex.contains(v)).collect::<Vec<bool>>()
    });
    let mut hits = vec![0u64; targets.len()];
    for row in rows {
        for (h, hit) in hits.iter_mut().zip(row) {
            *h += hit as u64;
        }
    }
    let points: Vec<TauFPoint> = hits
        .iter()
        .enumerate()
        .map(|(r, &k)| TauFPoint { r: r as i64, hits: k, estimate: k as f64 / n_samples as f64 })
        .collect();
    let mut prof = TauFProfile {
        p,
        window: w.spec(),
        samples: n_samples,
        points,
        rate: None,
        rate_se: None,
        fit_range: None,
        fit_error: None,
    };
    let last = prof.points.iter().rposition(|q| q.hits >= FIT_MIN_HITS).map(|i| i as i64).unwrap_or(-1);
    let fit_pts: Vec<&TauFPoint> = prof.points.iter().filter(|q| q.r >= 1 && q.r <= last && q.hits > 0).collect();
    let x: Vec<f64> = fit_pts.iter().map(|q| q.r as f64).collect();
    let y: Vec<f64> = fit_pts.iter().map(|q| q.estimate.ln()).collect();
    let wt: Vec<f64> = fit_pts.iter().map(|q| q.hits as f64).collect();
    match weighted_line_fit(&x, &y, &wt) {
        Ok(f) => {
            prof.rate = Some(-f.slope);
            prof.rate_se = Some(f.slope_se);
            prof.fit_range = Some((1, last));
        }
        Err(e) => prof.fit_error = Some(e.to_string()),
    }
    Ok(prof)
}

/// Probability of an open path between the faces `x_0 = 0` and `x_0 = side-1`
/// of a cube with `side^d` vertices.
pub fn crossing_probability(d: usize, side: usize, p: f64, n_samples: u64, seed: u64) -> Result<f64> {
    check_p(p)?;
    check_samples(n_samples)?;
    if !(2..=MAX_DIM).contains(&d) || side < 2 {
        return Err(Error::InvalidParameter(format!("need 2 <= d <= {MAX_DIM} and side >= 2")));
    }
    let t = Threshold::new(p);
    let cells = side.pow(d as u32);
    let stride: Vec<usize> = (0..d).map(|a| side.pow((d - 1 - a) as u32)).collect();
    let hits: u64 = (0..n_samples)
        .into_par_iter()
        .map_init(
            || UnionFind::new(cells + 2),
            |uf, i| {
                uf.reset(cells + 2);
                let key = StreamKey::new(seed, i);
                let (left, right) = (cells, cells + 1);
                for v in 0..cells {
                    let x0 = v / stride[0];
                    if x0 == 0 {
                        uf.union(v, left);
                    }
                    if x0 == side - 1 {
                        uf.union(v, right);
                    }
                    for a in 0..d {
                        if (v / stride[a]) % side + 1 < side && t.admits(key.word((v * d + a) as u64)) {
                            uf.union(v, v + stride[a]);
                        }
                    }
                }
                (uf.find(left) == uf.find(right)) as u64
            },
        )
        .sum();
    Ok(hits as f64 / n_samples as f64)
}

/// For each cube side, the `p` where the crossing probability passes 1/2,
/// by linear interpolation on the grid `ps` (ascending).
pub fn pc_pilot(d: usize, sides: &[usize], ps: &[f64], n_samples: u64, seed: u64) -> Result<Vec<(usize, Option<f64>)>> {
    sides
        .iter()
        .map(|&s| {
            let probs: Vec<f64> = ps.iter().map(|&p| crossing_probability(d, s, p, n_samples, seed)).collect::<Result<_>>()?;
            let mid = probs.windows(2).zip(ps.windows(2)).find(|(y, _)| y[0] < 0.5 && y[1] >= 0.5).map(|(y, x)| {
                x[0] + (0.5 - y[0]) * (x[1] - x[0]) / (y[1] - y[0])
            });
            Ok((s, mid))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w2(n: i64, r: i64) -> LatticeWindow {
        LatticeWindow::new(2, n, r).unwrap()
    }

    fn pt(c: &[i64]) -> Point {
        let mut p = [0; MAX_DIM];
        p[..c.len()].copy_from_slice(c);
        p
    }

    #[test]
    fn theta_extremes() {
        let w = w2(5, 3);
        assert_eq!(theta_hat(1.0, &w, 50, 1).unwrap().estimate, 1.0);
        assert_eq!(theta_hat(0.0, &w, 50, 1).unwrap().estimate, 0.0);
        assert!(theta_hat(1.5, &w, 50, 1).is_err());
    }

    #[test]
    fn theta_subcritical_shrinks_with_window() {
        let small = theta_hat(0.4, &w2(5, 3), 4000, 3).unwrap();
        let large = theta_hat(0.4, &w2(10, 3), 4000, 3).unwrap();
        assert!(large.estimate < small.estimate, "{} !< {}", large.estimate, small.estimate);
    }

    #[test]
    fn theta_is_monotone_under_coupling() {
        let w = w2(5, 3);
        let grid: Vec<f64> = (0..5).map(|i| 0.5 + 0.1 * i as f64).collect();
        let est: Vec<f64> = grid.iter().map(|&p| theta_hat(p, &w, 500, 8).unwrap().estimate).collect();
        assert!(est.windows(2).all(|x| x[0] <= x[1]), "{est:?}");
    }

    #[test]
    fn tau_examples() {
        let w = w2(5, 3);
        let o = pt(&[0, 0]);
        let e1 = pt(&[1, 0]);
        assert_eq!(tau_hat(&[o, o], 0.3, &w, 50, 1, false).unwrap().estimate, 1.0);
        assert_eq!(tau_hat(&[o, e1], 1.0, &w, 20, 1, false).unwrap().estimate, 1.0);
        assert_eq!(tau_hat(&[o, e1], 1.0, &w, 20, 1, true).unwrap().estimate, 0.0);
        assert_eq!(tau_hat(&[o, e1], 0.0, &w, 20, 1, false).unwrap().estimate, 0.0);
        let l = w.half_width();
        assert!(matches!(tau_hat(&[o, pt(&[l, 0])], 0.5, &w, 5, 1, false), Err(Error::VertexOutOfWindow(_))));
        assert!(matches!(tau_hat(&[o, pt(&[l + 1, 0])], 0.5, &w, 5, 1, false), Err(Error::VertexOutOfWindow(_))));
    }

    #[test]
    fn tau_single_edge_at_low_p() {
        // at p = 0.1 the neighbour is joined almost only through the direct edge
        let w = w2(5, 3);
        let r = tau_hat(&[pt(&[0, 0]), pt(&[1, 0])], 0.1, &w, 20_000, 5, false).unwrap();
        assert!(r.estimate >= 0.1 - 4.0 * r.se && r.estimate < 0.13, "{}", r.estimate);
    }

    #[test]
    fn chi_and_kappa_extremes() {
        let w = w2(5, 3);
        assert_eq!(chi_f_hat(2, 0.0, &w, 30, 1).unwrap().estimate, 1.0);
        assert_eq!(chi_f_hat(1, 1.0, &w, 30, 1).unwrap().estimate, 0.0);
        assert!(chi_f_hat(0, 0.5, &w, 30, 1).is_err());
        assert_eq!(kappa_hat(0.0, &w, 30, 1).unwrap().estimate, 1.0);
        let k1 = kappa_hat(1.0, &w, 10, 1).unwrap();
        assert!((k1.estimate - 1.0 / w.vertex_count() as f64).abs() < 1e-15);
        assert_eq!(k1.infinite_volume, Some(0.0));
    }

    #[test]
    fn histogram_identities() {
        let w = w2(5, 3);
        for p in [0.3, 0.55, 0.7] {
            let h = size_histogram(p, &w, 3000, 9).unwrap();
            assert!(h.normalized());
            let theta = theta_hat(p, &w, 3000, 9).unwrap();
            assert_eq!(h.theta(), theta.estimate);
            let chi = chi_f_hat(1, p, &w, 3000, 9).unwrap();
            assert_eq!(h.chi_f1(), chi.estimate);
        }
    }

    #[test]
    fn tau_f_sum_equals_chi_on_full_range() {
        // same stream and the whole window: the two agree sample by sample
        let w = w2(5, 3);
        let chi = chi_f_hat(1, 0.6, &w, 2000, 4).unwrap();
        let sum = tau_f_sum(0.6, &w, w.half_width(), 2000, 4).unwrap();
        assert!((chi.estimate - sum.estimate).abs() < 1e-12);
    }

    #[test]
    fn tau_f_profile_origin_is_one_minus_theta() {
        let w = w2(5, 3);
        let prof = tau_f_decay(0.7, &w, &pt(&[1, 0]), 5, 2000, 2).unwrap();
        let theta = theta_hat(0.7, &w, 2000, 2).unwrap();
        assert!((prof.points[0].estimate - (1.0 - theta.estimate)).abs() < 1e-12);
        let all = tau_f_decay(1.0, &w, &pt(&[1, 0]), 5, 50, 2).unwrap();
        assert!(all.points.iter().all(|q| q.estimate == 0.0));
        assert!(all.fit_error.is_some());
        assert!(tau_f_decay(0.4, &w, &pt(&[1, 0]), 5, 50, 2).is_err());
    }

    #[test]
    fn kappa_derivative_preconditions() {
        let w = w2(5, 3);
        assert!(matches!(kappa_derivative_check(0.98, 0.02, &w, 10, 1, true), Err(Error::Precondition(_))));
        assert!(matches!(kappa_derivative_check(0.7, 0.005, &w, 10, 1, true), Err(Error::Precondition(_))));
        assert!(matches!(kappa_derivative_check(0.51, 0.02, &w, 10, 1, true), Err(Error::Precondition(_))));
    }

    /// Torus of side `s` in two dimensions: vertex `(x, y)` is `x * s + y`,
    /// edges `(v, right)` then `(v, up)` per vertex.
    fn torus_edges(s: usize) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for x in 0..s {
            for y in 0..s {
                let v = x * s + y;
                e.push((v, ((x + 1) % s) * s + y));
                e.push((v, x * s + (y + 1) % s));
            }
        }
        e
    }

    fn torus_components(s: usize, edges: &[(usize, usize)], mask: u32) -> UnionFind {
        let mut uf = UnionFind::new(s * s);
        for (i, &(a, b)) in edges.iter().enumerate() {
            if mask >> i & 1 == 1 {
                uf.union(a, b);
            }
        }
        uf
    }

    /// On a vertex-transitive finite graph κ is the mean number of clusters per
    /// vertex, so its derivative follows exactly from Russo's formula. Summing
    /// `p^k (1-p)^(m-k)` weights over all 2^18 states of the 3x3 torus gives both
    /// sides in closed form, which fixes the sign of the identity.
    #[test]
    fn russo_oracle_on_torus_fixes_sign() {
        let s = 3;
        let edges = torus_edges(s);
        let m = edges.len();
        assert_eq!(m, 18);
        let nbrs = [edges[0].1, edges[1].1, edges[(s - 1) * s * 2].0, edges[(s - 1) * 2].0];
        let p: f64 = 0.7;
        let mut kappa_prime = 0.0;
        let mut tau = [0.0f64; 4];
        for mask in 0u32..(1 << m) {
            let k = mask.count_ones() as i32;
            let weight = p.powi(k) * (1.0 - p).powi(m as i32 - k);
            let dweight = k as f64 * p.powi(k - 1) * (1.0 - p).powi(m as i32 - k)
                - (m as i32 - k) as f64 * p.powi(k) * (1.0 - p).powi(m as i32 - k - 1);
            let mut uf = torus_components(s, &edges, mask);
            let root = uf.find(0);
            let size = (0..s * s).filter(|&v| uf.find(v) == root).count();
            kappa_prime += dweight / size as f64;
            for (t, &x) in tau.iter_mut().zip(&nbrs) {
                if uf.find(x) == root {
                    *t += weight;
                }
            }
        }
        let f: f64 = tau.iter().map(|t| 1.0 - t).sum::<f64>() / (2.0 * (1.0 - p));
        assert!((kappa_prime + f).abs() < 1e-9, "κ' = {kappa_prime}, f = {f}");
        assert!(kappa_prime < 0.0);
    }

    #[test]
    fn kappa_derivative_small_run_agrees() {
        let w = w2(5, 3);
        let r = kappa_derivative_check(0.7, 0.05, &w, 20_000, 6, true).unwrap();
        assert!(r.predicted < 0.0);
        assert!(r.z < 4.0, "{r:?}");
    }

    #[test]
    fn crossing_probability_extremes_and_trend() {
        assert_eq!(crossing_probability(2, 6, 0.0, 20, 1).unwrap(), 0.0);
        assert_eq!(crossing_probability(2, 6, 1.0, 20, 1).unwrap(), 1.0);
        let c: Vec<f64> = [0.4, 0.5, 0.6].iter().map(|&p| crossing_probability(2, 16, p, 2000, 1).unwrap()).collect();
        assert!(c[0] < c[1] && c[1] < c[2], "{c:?}");
        assert!(c[0] < 0.5 && c[2] > 0.5, "{c:?}");
    }

    #[test]
    fn reports_are_deterministic() {
        let w = w2(5, 3);
        let a = serde_json::to_string(&kappa_hat(0.6, &w, 300, 12).unwrap()).unwrap();
        let b = serde_json::to_string(&kappa_hat(0.6, &w, 300, 12).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
