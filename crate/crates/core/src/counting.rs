//! Exact counting behind the exponential decay of bad separating sets:
//! lattice animals of boxes, integer partitions, disjoint sub-packings and the
//! resulting composite bound.

use std::collections::HashSet;
use std::io::Write;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Adjacency, BoxId, LatticeWindow, MAX_DIM};
use crate::rng::StreamKey;
use crate::stats::line_fit;

pub const ANIMAL_BUDGET: u64 = 100_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnimalCensus {
    pub dim: usize,
    pub mode: Adjacency,
    /// `counts[n-1]`: connected sets of `n` boxes containing the origin box.
    pub counts: Vec<u64>,
    /// `counts[n-1] / counts[n-2]` for `n >= 2`.
    pub ratios: Vec<f64>,
}

impl AnimalCensus {
    /// Last ratio, an estimate of the growth constant (not a bound).
    pub fn mu_last(&self) -> f64 {
        self.ratios.last().copied().unwrap_or(1.0)
    }

    /// Intercept of the ratios against `1/n` over the upper half of the table.
    pub fn mu_extrapolated(&self) -> Option<f64> {
        let from = self.ratios.len() / 2;
        let x: Vec<f64> = (from..self.ratios.len()).map(|i| 1.0 / (i + 2) as f64).collect();
        line_fit(&x, &self.ratios[from..]).ok().map(|f| f.intercept)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "count", "ratio"])?;
        for (i, c) in self.counts.iter().enumerate() {
            let r = if i == 0 { String::new() } else { self.ratios[i - 1].to_string() };
            w.write_record([(i + 1).to_string(), c.to_string(), r])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn offsets(d: usize, mode: Adjacency) -> Vec<[i64; MAX_DIM]> {
    let mut out = Vec::new();
    let total = 3usize.pow(d as u32);
    for code in 0..total {
        let mut p = [0i64; MAX_DIM];
        let mut c = code;
        for x in p.iter_mut().take(d) {
            *x = (c % 3) as i64 - 1;
            c /= 3;
        }
        let nz = p.iter().filter(|&&x| x != 0).count();
        let keep = match mode {
            Adjacency::Axis => nz == 1,
            Adjacency::Diagonal => nz > 0,
        };
        if keep {
            out.push(p);
        }
    }
    out
}

/// Redelmeier's method on a padded grid: fixed animals are rooted at their
/// lexicographically smallest cell, each counted once; rooted-at-origin counts
/// follow by multiplying by `n`.
struct Redelmeier {
    n_max: usize,
    neighbors: Vec<isize>,
    /// Cells already in the untried set or lexicographically below the root.
    blocked: Vec<bool>,
    fixed: Vec<u64>,
    states: u64,
}

impl Redelmeier {
    fn new(d: usize, mode: Adjacency, n_max: usize) -> Self {
        let side = 2 * n_max + 1;
        let stride: Vec<isize> = (0..d).map(|a| side.pow(a as u32) as isize).collect();
        let neighbors = offsets(d, mode)
            .iter()
            .map(|o| (0..d).map(|a| o[a] as isize * stride[d - 1 - a]).sum())
            .collect();
        let cells = side.pow(d as u32);
        // lexicographic order with axis 0 most significant matches linear order here
        let root = cells / 2;
        let mut blocked = vec![false; cells];
        blocked[..=root].iter_mut().for_each(|b| *b = true);
        // keep a frame of blocked cells so neighbour indices never leave the array
        for (i, b) in blocked.iter_mut().enumerate() {
            let mut r = i;
            for _ in 0..d {
                let c = r % side;
                if c == 0 || c == side - 1 {
                    *b = true;
                }
                r /= side;
            }
        }
        Redelmeier { n_max, neighbors, blocked, fixed: vec![0; n_max], states: 0 }
    }

    fn run(mut self) -> Result<Vec<u64>> {
        let root = self.blocked.len() / 2;
        let mut untried = vec![root];
        self.recurse(&mut untried, 0)?;
        Ok(self.fixed)
    }

    fn recurse(&mut self, untried: &mut Vec<usize>, size: usize) -> Result<()> {
        while let Some(cell) = untried.pop() {
            self.fixed[size] += 1;
            self.states += 1;
            if self.states > ANIMAL_BUDGET {
                return Err(Error::BudgetExceeded(ANIMAL_BUDGET));
            }
            if size + 1 < self.n_max {
                let mut next = untried.clone();
                let mut added = Vec::new();
                for &off in &self.neighbors {
                    let nb = (cell as isize + off) as usize;
                    if !self.blocked[nb] {
                        self.blocked[nb] = true;
                        added.push(nb);
                        next.push(nb);
                    }
                }
                self.recurse(&mut next, size + 1)?;
                for nb in added {
                    self.blocked[nb] = false;
                }
            }
            // the popped cell stays blocked, which excludes it from later siblings
        }
        Ok(())
    }
}

/// Exact counts of connected box sets containing the origin box, `n <= n_max <= 10`.
pub fn count_animals(d: usize, mode: Adjacency, n_max: usize) -> Result<AnimalCensus> {
    if !(1..=MAX_DIM).contains(&d) {
        return Err(Error::InvalidParameter(format!("dimension {d} outside 1..={MAX_DIM}")));
    }
    if !(1..=10).contains(&n_max) {
        return Err(Error::InvalidParameter(format!("n_max={n_max} outside 1..=10")));
    }
    let fixed = Redelmeier::new(d, mode, n_max).run()?;
    let counts: Vec<u64> = fixed.iter().enumerate().map(|(i, f)| f * (i as u64 + 1)).collect();
    let ratios = counts.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    Ok(AnimalCensus { dim: d, mode, counts, ratios })
}

/// Independent reference: breadth-first growth of explicit origin-containing
/// sets, deduplicated as sorted cell lists. Limited to `d <= 3`, `n <= 8`.
pub fn count_animals_bfs(d: usize, mode: Adjacency, n_max: usize) -> Result<Vec<u64>> {
    if !(1..=3).contains(&d) || !(1..=8).contains(&n_max) {
        return Err(Error::InvalidParameter("reference enumerator needs d <= 3 and n <= 8".into()));
    }
    const OFF: i64 = 8;
    const BASE: i64 = 17;
    let encode = |p: &[i64; MAX_DIM]| -> u128 { (0..d).fold(0i64, |acc, a| acc * BASE + p[a] + OFF) as u128 + 1 };
    let decode = |mut c: u128| -> [i64; MAX_DIM] {
        c -= 1;
        let mut p = [0i64; MAX_DIM];
        for a in (0..d).rev() {
            p[a] = (c % BASE as u128) as i64 - OFF;
            c /= BASE as u128;
        }
        p
    };
    let pack = |cells: &mut Vec<u128>| -> u128 {
        cells.sort_unstable();
        cells.iter().fold(0u128, |acc, &c| (acc << 16) | c)
    };
    let unpack = |mut key: u128| -> Vec<u128> {
        let mut v = Vec::new();
        while key != 0 {
            v.push(key & 0xFFFF);
            key >>= 16;
        }
        v
    };
    let offs = offsets(d, mode);
    let mut level: HashSet<u128> = HashSet::new();
    level.insert(encode(&[0; MAX_DIM]));
    let mut counts = vec![1u64];
    for _ in 1..n_max {
        let mut next = HashSet::with_capacity(level.len() * 8);
        for &key in &level {
            let cells = unpack(key);
            for &c in &cells {
                let p = decode(c);
                for o in &offs {
                    let mut q = p;
                    (0..d).for_each(|a| q[a] += o[a]);
                    let e = encode(&q);
                    if cells.contains(&e) {
                        continue;
                    }
                    let mut grown = cells.clone();
                    grown.push(e);
                    next.insert(pack(&mut grown));
                }
            }
        }
        counts.push(next.len() as u64);
        level = next;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTable {
    /// `values[n]` for `0 <= n <= n_max`, with `p(0) = 1`.
    pub values: Vec<BigUint>,
}

impl PartitionTable {
    pub fn get(&self, n: usize) -> &BigUint {
        &self.values[n]
    }

    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn ln(&self, n: usize) -> f64 {
        ln_big(&self.values[n])
    }

    /// Smallest `r` with `ln p(n) <= ln r · √n` over the whole table.
    pub fn r_hat(&self) -> f64 {
        (1..=self.n_max()).map(|n| self.ln(n) / (n as f64).sqrt()).fold(0.0, f64::max).exp()
    }

    /// Entries with `ln p(n) > ln r · √n`.
    pub fn violations(&self, r: f64) -> Vec<usize> {
        let lr = r.ln();
        (1..=self.n_max()).filter(|&n| self.ln(n) > lr * (n as f64).sqrt() * (1.0 + 1e-12)).collect()
    }

    /// Smallest `n0` such that `ln p(n) / n` strictly decreases on `n0..=n_max`.
    /// Small `n` wobble (`p(3) = 3`, `p(4) = 5`), so this is 6 on any table past 6.
    pub fn decreasing_from(&self) -> usize {
        let v = |n: usize| self.ln(n) / n as f64;
        let mut n0 = self.n_max().max(1);
        while n0 > 1 && v(n0) < v(n0 - 1) {
            n0 -= 1;
        }
        n0
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "p"])?;
        for (n, v) in self.values.iter().enumerate().skip(1) {
            w.write_record([n.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn ln_big(x: &BigUint) -> f64 {
    if let Some(f) = x.to_f64().filter(|f| f.is_finite()) {
        return f.ln();
    }
    let bits = x.bits();
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::MAX);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// `p(n)` by Euler's pentagonal-number recurrence.
pub fn partitions(n_max: usize) -> Result<PartitionTable> {
    if n_max > 10_000 {
        return Err(Error::InvalidParameter(format!("n_max={n_max} above 10^4")));
    }
    let mut values: Vec<BigUint> = vec![BigUint::from(1u32)];
    for n in 1..=n_max {
        let mut plus = BigUint::zero();
        let mut minus = BigUint::zero();
        for k in 1.. {
            let g1 = k * (3 * k - 1) / 2;
            if g1 > n {
                break;
            }
            let g2 = k * (3 * k + 1) / 2;
            let acc = if k % 2 == 1 { &mut plus } else { &mut minus };
            *acc += &values[n - g1];
            if g2 <= n {
                *acc += &values[n - g2];
            }
        }
        values.push(plus - minus);
    }
    Ok(PartitionTable { values })
}

/// Lists every partition of `n` as a nonincreasing sequence.
pub fn enumerate_partitions(n: usize) -> Vec<Vec<usize>> {
    fn go(rest: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=max.min(rest)).rev() {
            cur.push(part);
            go(rest - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, n, &mut Vec::new(), &mut out);
    out
}

/// Largest parity class of `set`; boxes in one class are at sup-distance at least 2,
/// so their vertex sets are disjoint. The class has at least `⌈|S|/2^d⌉` boxes.
pub fn disjoint_packing(d: usize, set: &[BoxId]) -> Result<Vec<BoxId>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut classes: Vec<Vec<BoxId>> = vec![Vec::new(); 1 << d];
    for b in set {
        let class = (0..d).fold(0usize, |acc, a| acc | ((b.0[a].rem_euclid(2) as usize) << a));
        classes[class].push(*b);
    }
    let best = classes.into_iter().rev().max_by_key(|c| c.len()).unwrap_or_default();
    Ok(best)
}

/// Whether the vertex sets of `boxes` are pairwise disjoint in `w`.
pub fn pairwise_disjoint(w: &LatticeWindow, boxes: &[BoxId]) -> Result<bool> {
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            if !w.box_overlap(a, b)?.is_empty() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A ⊠-connected set of `size` boxes containing the origin box, grown by random
/// accretion inside `|x|_∞ <= radius`.
pub fn random_connected_set(d: usize, size: usize, radius: i64, seed: u64) -> Result<Vec<BoxId>> {
    if !(1..=MAX_DIM).contains(&d) || size == 0 || (2 * radius + 1).pow(d as u32) < size as i64 {
        return Err(Error::InvalidParameter(format!("no room for {size} boxes within radius {radius}")));
    }
    let key = StreamKey::new(seed, 0);
    let mut set = vec![BoxId::origin()];
    let mut seen: HashSet<BoxId> = set.iter().copied().collect();
    let mut i = 0u64;
    while set.len() < size {
        let mut nb = set[(key.word(i) % set.len() as u64) as usize];
        i += 1;
        for a in 0..d {
            nb.0[a] += (key.word(i) % 3) as i64 - 1;
            i += 1;
        }
        if nb.linf() <= radius && seen.insert(nb) {
            set.push(nb);
        }
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayBound {
    /// `ln(r^√n M^n c^(n/k))`.
    pub log_bound: f64,
    /// `ln M + ln c / k`, the asymptotic slope of the log bound in `n`.
    pub log_rate: f64,
    /// `M c^(1/k) < 1`.
    pub decaying: bool,
}

/// `r^√n M^n c^(n/k)` in log form.
pub fn exp_dec_bound(n: usize, c: f64, k: f64, m: f64, r: f64) -> Result<DecayBound> {
    if !(c > 0.0 && c < 1.0) || m <= 1.0 || r <= 1.0 || k < 1.0 {
        return Err(Error::InvalidParameter(format!("need c in (0,1), M > 1, r > 1, k >= 1; got c={c}, M={m}, r={r}, k={k}")));
    }
    let nf = n as f64;
    let log_rate = m.ln() + c.ln() / k;
    Ok(DecayBound { log_bound: nf.sqrt() * r.ln() + nf * log_rate, log_rate, decaying: log_rate < 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeBound {
    /// Estimated `Pr(box bad)`.
    pub c_hat: f64,
    pub mu_hat: f64,
    /// `M = 2 μ̂`.
    pub m: f64,
    /// `k = 2^d` from parity packing.
    pub k: f64,
    pub r_hat: f64,
    pub bound: DecayBound,
}

/// The decay bound at measured constants: `c` from the good-box estimate, `μ̂` from
/// the ⊠ census, `M = 2μ̂`, `k = 2^d` and `r` from the partition table.
pub fn composite_bound(d: usize, good_estimate: f64, census: &AnimalCensus, table: &PartitionTable) -> Result<CompositeBound> {
    let c_hat = 1.0 - good_estimate;
    let mu_hat = census.mu_last();
    let m = 2.0 * mu_hat;
    let k = (1usize << d) as f64;
    let r_hat = table.r_hat();
    let bound = exp_dec_bound(1, c_hat, k, m, r_hat)?;
    Ok(CompositeBound { c_hat, mu_hat, m, k, r_hat, bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn animal_examples() {
        let a = count_animals(2, Adjacency::Axis, 3).unwrap();
        assert_eq!(a.counts, vec![1, 4, 18]);
        assert!(count_animals(2, Adjacency::Axis, 11).is_err());
        let k = count_animals(2, Adjacency::Diagonal, 2).unwrap();
        assert_eq!(k.counts, vec![1, 8]);
    }

    #[test]
    fn animal_counts_match_reference() {
        for (d, mode, n) in [
            (2, Adjacency::Axis, 8),
            (2, Adjacency::Diagonal, 7),
            (3, Adjacency::Axis, 6),
            (3, Adjacency::Diagonal, 4),
            (1, Adjacency::Axis, 8),
        ] {
            let fast = count_animals(d, mode, n).unwrap();
            let slow = count_animals_bfs(d, mode, n).unwrap();
            assert_eq!(fast.counts, slow, "d={d} {mode:?}");
            assert!(fast.counts.windows(2).skip(1).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn budget_is_enforced() {
        assert_eq!(count_animals(4, Adjacency::Diagonal, 10), Err(Error::BudgetExceeded(ANIMAL_BUDGET)));
    }

    #[test]
    fn partition_examples() {
        let t = partitions(100).unwrap();
        assert_eq!(t.get(1), &BigUint::from(1u32));
        assert_eq!(t.get(4), &BigUint::from(5u32));
        assert_eq!(t.get(10), &BigUint::from(42u32));
        // recurrence against explicit lists
        for n in 1..=20 {
            let all = enumerate_partitions(n);
            assert!(all.iter().all(|p| p.iter().sum::<usize>() == n && p.windows(2).all(|w| w[0] >= w[1])));
            assert_eq!(t.get(n), &BigUint::from(all.len()), "n={n}");
        }
        assert_eq!(t.decreasing_from(), 6);
        let v = |n: usize| t.ln(n) / n as f64;
        assert!(v(4) > v(3));
        assert!(t.violations(t.r_hat()).is_empty());
        assert!(!t.violations(t.r_hat() * 0.99).is_empty());
    }

    #[test]
    fn partitions_large_table_logs() {
        let t = partitions(2000).unwrap();
        assert!(t.ln(2000).is_finite());
        // ln p(n)/√n stays below π√(2/3)
        assert!(t.r_hat().ln() < std::f64::consts::PI * (2.0f64 / 3.0).sqrt());
        assert!(partitions(10_001).is_err());
    }

    fn assert_disjoint(w: &LatticeWindow, boxes: &[BoxId]) {
        for (i, a) in boxes.iter().enumerate() {
            for b in &boxes[i + 1..] {
                assert!(w.box_overlap(a, b).unwrap().is_empty(), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn packing_examples() {
        let w = LatticeWindow::new(2, 5, 6).unwrap();
        let one = disjoint_packing(2, &[BoxId::new(&[1, -2])]).unwrap();
        assert_eq!(one, vec![BoxId::new(&[1, -2])]);
        let block: Vec<BoxId> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|c| BoxId::new(c)).collect();
        let p = disjoint_packing(2, &block).unwrap();
        assert_eq!(p.len(), 1);
        assert!(disjoint_packing(2, &[]).is_err());
        assert_disjoint(&w, &p);
    }

    #[test]
    fn packing_random_connected_sets() {
        let w = LatticeWindow::new(2, 5, 12).unwrap();
        for seed in 0..20u64 {
            // grow a ⊠-connected set of 50 boxes by random accretion
            let key = crate::rng::StreamKey::new(seed, 0);
            let mut set = vec![BoxId::origin()];
            let mut i = 0;
            while set.len() < 50 {
                let base = set[(key.word(i) % set.len() as u64) as usize];
                let dx = (key.word(i + 1) % 3) as i64 - 1;
                let dy = (key.word(i + 2) % 3) as i64 - 1;
                i += 3;
                let nb = BoxId::new(&[base.0[0] + dx, base.0[1] + dy]);
                if nb.linf() <= 12 && !set.contains(&nb) {
                    set.push(nb);
                }
            }
            let p = disjoint_packing(2, &set).unwrap();
            assert!(p.len() >= 13);
            assert_disjoint(&w, &p);
        }
    }

    #[test]
    fn decay_bound_flags() {
        let b = exp_dec_bound(100, 0.9f64.powi(4), 4.0, 1.0 + 1e-9, 1.5).unwrap();
        assert!(b.decaying && (b.log_rate - 0.9f64.ln()).abs() < 1e-8);
        let b = exp_dec_bound(100, 0.5, 1.0, 2.2, 1.5).unwrap();
        assert!(!b.decaying && (b.log_rate - 1.1f64.ln()).abs() < 1e-12);
        assert!(exp_dec_bound(1, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(exp_dec_bound(1, 0.5, 1.0, 1.0, 2.0).is_err());
    }
}
