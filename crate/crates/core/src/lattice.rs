//! Integer frequency vectors on `Z^d` and on the finitely supported lattice
//! `Z*^∞`, their norms, and deterministic enumeration of bounded balls.
//!
//! Enumeration order is graded: all indices of norm 1, then norm 2, and so
//! on; within a shell the dense coordinate vectors `(k_0, k_1, …)` appear in
//! ascending lexicographic order.

use std::fmt;

use serde::Serialize;

use crate::error::{NumericError, Result};

/// Dimension of the lattice a multi-index lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Dim {
    Finite(usize),
    Infinite,
}

/// A sparse integer vector with finite support.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct MultiIndex {
    entries: Vec<(usize, i64)>,
    dim: Dim,
    l1: u64,
}

/// `⟨j⟩^η` with `⟨j⟩ = max(1, j)`.
pub fn bracket_pow(j: usize, eta: u32) -> u64 {
    (j.max(1) as u64).pow(eta)
}

impl MultiIndex {
    /// Builds an index from `(coordinate, value)` pairs; zero values are dropped
    /// and repeated coordinates are summed.
    pub fn new(dim: Dim, pairs: impl IntoIterator<Item = (usize, i64)>) -> Result<Self> {
        let mut entries: Vec<(usize, i64)> = Vec::new();
        for (j, v) in pairs {
            if let Dim::Finite(d) = dim {
                if j >= d {
                    return Err(NumericError::SupportMismatch { index: j, dim: d });
                }
            }
            match entries.iter_mut().find(|(i, _)| *i == j) {
                Some(e) => e.1 += v,
                None => entries.push((j, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0);
        entries.sort_unstable_by_key(|&(j, _)| j);
        let l1 = entries.iter().map(|&(_, v)| v.unsigned_abs()).sum();
        Ok(MultiIndex { entries, dim, l1 })
    }

    /// Dense constructor for `Z^d`.
    pub fn from_dense(values: &[i64]) -> Self {
        MultiIndex::new(Dim::Finite(values.len()), values.iter().copied().enumerate())
            .expect("dense support is within its own dimension")
    }

    pub fn zero(dim: Dim) -> Self {
        MultiIndex {
            entries: Vec::new(),
            dim,
            l1: 0,
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, i64)] {
        &self.entries
    }

    pub fn get(&self, j: usize) -> i64 {
        self.entries
            .iter()
            .find(|&&(i, _)| i == j)
            .map(|&(_, v)| v)
            .unwrap_or(0)
    }

    /// `‖k‖ = Σ |k_j|`.
    pub fn l1(&self) -> u64 {
        self.l1
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest coordinate index in the support.
    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(j, _)| j)
    }

    pub fn neg(&self) -> Self {
        MultiIndex {
            entries: self.entries.iter().map(|&(j, v)| (j, -v)).collect(),
            dim: self.dim,
            l1: self.l1,
        }
    }

    /// True when the first nonzero entry is positive; exactly one of `k`, `-k`
    /// is canonical for `k ≠ 0`.
    pub fn is_canonical(&self) -> bool {
        self.entries.first().map(|&(_, v)| v > 0).unwrap_or(false)
    }

    pub fn with_dim(&self, dim: Dim) -> Result<Self> {
        MultiIndex::new(dim, self.entries.iter().copied())
    }

    /// `|k|_η = Σ ⟨j⟩^η |k_j|`.
    pub fn eta_norm(&self, eta: u32) -> u64 {
        eta_norm(self, eta)
    }

    /// `Σ w_j |k_j|` for an explicit coordinate weight table.
    pub fn weighted_norm(&self, weights: &[u64]) -> Option<u64> {
        let mut s = 0u64;
        for &(j, v) in &self.entries {
            s += weights.get(j)? * v.unsigned_abs();
        }
        Some(s)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            Dim::Finite(d) => {
                let dense: Vec<String> = (0..d).map(|j| self.get(j).to_string()).collect();
                write!(f, "({})", dense.join(","))
            }
            Dim::Infinite => {
                let parts: Vec<String> = self.entries.iter().map(|(j, v)| format!("{j}:{v}")).collect();
                write!(f, "{{{}}}", parts.join(","))
            }
        }
    }
}

/// `|k|_η = Σ_j ⟨j⟩^η |k_j|` as an exact integer.
pub fn eta_norm(k: &MultiIndex, eta: u32) -> u64 {
    k.entries
        .iter()
        .map(|&(j, v)| bracket_pow(j, eta) * v.unsigned_abs())
        .sum()
}

/// Largest `j` with `⟨j⟩^η ≤ nu`.
pub fn max_coordinate(eta: u32, nu: u64) -> usize {
    let mut j = 0usize;
    while bracket_pow(j + 1, eta) <= nu {
        j += 1;
    }
    j
}

/// Coordinate weights `⟨j⟩^η` for the coordinates that can carry a nonzero
/// entry at norm `≤ bound`, optionally truncated to `dims` coordinates.
pub fn eta_weights(eta: u32, bound: u64, dims: Option<usize>) -> Vec<u64> {
    let mut jmax = max_coordinate(eta, bound.max(1));
    if let Some(d) = dims {
        if d == 0 {
            return Vec::new();
        }
        jmax = jmax.min(d - 1);
    }
    (0..=jmax).map(|j| bracket_pow(j, eta)).collect()
}

/// Lazy enumeration of `{k ≠ 0 : Σ w_j |k_j| ≤ bound}` in graded
/// lexicographic order.
#[derive(Clone, Debug)]
pub struct BallIter {
    weights: Vec<u64>,
    bound: u64,
    dim: Dim,
    /// `feasible[i][r]`: the coordinates `i..` can realise weighted norm exactly `r`.
    feasible: Vec<Vec<bool>>,
    current: Vec<i64>,
    norm: u64,
    started: bool,
    done: bool,
}

impl BallIter {
    pub fn new(weights: Vec<u64>, bound: u64, dim: Dim) -> Self {
        assert!(weights.iter().all(|&w| w >= 1), "coordinate weights must be positive");
        let m = weights.len();
        let b = bound as usize;
        let mut feasible = vec![vec![false; b + 1]; m + 1];
        feasible[m][0] = true;
        for i in (0..m).rev() {
            let w = weights[i] as usize;
            for r in 0..=b {
                let mut ok = false;
                let mut used = 0usize;
                while used <= r {
                    if feasible[i + 1][r - used] {
                        ok = true;
                        break;
                    }
                    used += w;
                }
                feasible[i][r] = ok;
            }
        }
        BallIter {
            current: vec![0; m],
            weights,
            bound,
            dim,
            feasible,
            norm: 0,
            started: false,
            done: m == 0 || bound == 0,
        }
    }

    /// Fills coordinates `from..` with the lexicographically smallest
    /// completion of exact weighted norm `rem`.
    fn fill_min(&mut self, from: usize, mut rem: u64) -> bool {
        for i in from..self.weights.len() {
            let w = self.weights[i];
            let top = (rem / w) as i64;
            let mut chosen = None;
            for v in -top..=top {
                let r = rem - w * v.unsigned_abs();
                if self.feasible[i + 1][r as usize] {
                    chosen = Some(v);
                    break;
                }
            }
            match chosen {
                Some(v) => {
                    self.current[i] = v;
                    rem -= w * v.unsigned_abs();
                }
                None => return false,
            }
        }
        rem == 0
    }

    /// Advances `current` to the next vector in the same shell.
    fn advance_in_shell(&mut self) -> bool {
        let m = self.weights.len();
        let mut prefix: Vec<u64> = Vec::with_capacity(m + 1);
        prefix.push(0);
        for i in 0..m {
            let p = prefix[i] + self.weights[i] * self.current[i].unsigned_abs();
            prefix.push(p);
        }
        for j in (0..m).rev() {
            let w = self.weights[j];
            let avail = self.norm - prefix[j];
            let top = (avail / w) as i64;
            let mut v = self.current[j] + 1;
            while v <= top {
                let r = avail - w * v.unsigned_abs();
                if self.feasible[j + 1][r as usize] {
                    self.current[j] = v;
                    return self.fill_min(j + 1, r);
                }
                v += 1;
            }
        }
        false
    }

    fn start_shell(&mut self) -> bool {
        while self.norm < self.bound {
            self.norm += 1;
            if self.feasible[0][self.norm as usize] && self.fill_min(0, self.norm) {
                return true;
            }
        }
        false
    }

    fn emit(&self) -> MultiIndex {
        MultiIndex::new(self.dim, self.current.iter().copied().enumerate())
            .expect("enumerated support lies within the weight table")
    }
}

impl Iterator for BallIter {
    type Item = MultiIndex;

    fn next(&mut self) -> Option<MultiIndex> {
        if self.done {
            return None;
        }
        let ok = if !self.started {
            self.started = true;
            self.start_shell()
        } else {
            self.advance_in_shell() || self.start_shell()
        };
        if ok {
            Some(self.emit())
        } else {
            self.done = true;
            None
        }
    }
}

/// Every `k ∈ Z^d` with `1 ≤ ‖k‖₁ ≤ K`.
pub fn enumerate_ball_finite(d: usize, k_max: u64) -> BallIter {
    BallIter::new(vec![1; d], k_max, Dim::Finite(d))
}

/// Every `0 ≠ k ∈ Z*^∞` with `|k|_η ≤ ν_max`.
pub fn enumerate_ball_eta(eta: u32, nu_max: u64) -> BallIter {
    BallIter::new(eta_weights(eta, nu_max, None), nu_max, Dim::Infinite)
}

/// As [`enumerate_ball_eta`], restricted to the first `dims` coordinates.
pub fn enumerate_ball_eta_truncated(eta: u32, nu_max: u64, dims: usize) -> BallIter {
    BallIter::new(eta_weights(eta, nu_max, Some(dims)), nu_max, Dim::Infinite)
}

/// Exact shell sizes `#{k : Σ w_j|k_j| = ν}` for `ν = 0..=bound` (shell 0 holds `k = 0`).
pub fn shell_counts(weights: &[u64], bound: u64) -> Vec<u128> {
    let b = bound as usize;
    let mut acc = vec![0u128; b + 1];
    acc[0] = 1;
    for &w in weights {
        let w = w as usize;
        let mut next = acc.clone();
        for r in 0..=b {
            if acc[r] == 0 {
                continue;
            }
            let mut v = 1usize;
            while r + v * w <= b {
                next[r + v * w] += 2 * acc[r];
                v += 1;
            }
        }
        acc = next;
    }
    acc
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ_{|k|=ν} Π_j g_j(k_j)` for each shell `ν = 0..=bound`, where the
/// factor of a zero entry is 1 and `ln_g(j, |v|)` gives the log-factor of a
/// nonzero entry (applied to both signs).
pub fn shell_log_sums<F: Fn(usize, u64) -> f64>(weights: &[u64], bound: u64, ln_g: F) -> Vec<f64> {
    let b = bound as usize;
    let mut acc = vec![f64::NEG_INFINITY; b + 1];
    acc[0] = 0.0;
    let ln2 = std::f64::consts::LN_2;
    for (j, &w) in weights.iter().enumerate() {
        let w = w as usize;
        let mut next = acc.clone();
        for r in 0..=b {
            if acc[r] == f64::NEG_INFINITY {
                continue;
            }
            let mut v = 1usize;
            while r + v * w <= b {
                let t = acc[r] + ln2 + ln_g(j, v as u64);
                next[r + v * w] = log_add(next[r + v * w], t);
                v += 1;
            }
        }
        acc = next;
    }
    acc
}

/// `ln max_{|k|=ν} Π_j g_j(k_j)` for each shell, same conventions as
/// [`shell_log_sums`]; empty shells give `-∞`.
pub fn shell_log_max<F: Fn(usize, u64) -> f64>(weights: &[u64], bound: u64, ln_g: F) -> Vec<f64> {
    let b = bound as usize;
    let mut acc = vec![f64::NEG_INFINITY; b + 1];
    acc[0] = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        let w = w as usize;
        let mut next = acc.clone();
        for r in 0..=b {
            if acc[r] == f64::NEG_INFINITY {
                continue;
            }
            let mut v = 1usize;
            while r + v * w <= b {
                let t = acc[r] + ln_g(j, v as u64);
                if t > next[r + v * w] {
                    next[r + v * w] = t;
                }
                v += 1;
            }
        }
        acc = next;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn eta_norm_examples() {
        let k = MultiIndex::new(Dim::Infinite, [(0, 1)]).unwrap();
        assert_eq!(eta_norm(&k, 2), 1);
        let k = MultiIndex::new(Dim::Infinite, [(0, 1), (3, -2)]).unwrap();
        assert_eq!(eta_norm(&k, 2), 19);
        assert_eq!(eta_norm(&MultiIndex::zero(Dim::Infinite), 2), 0);
    }

    #[test]
    fn construction_drops_zeros_and_checks_support() {
        let k = MultiIndex::new(Dim::Finite(3), [(2, 1), (0, 0), (2, -1), (1, 4)]).unwrap();
        assert_eq!(k.entries(), &[(1, 4)]);
        assert_eq!(k.l1(), 4);
        assert!(matches!(
            MultiIndex::new(Dim::Finite(2), [(2, 1)]),
            Err(NumericError::SupportMismatch { index: 2, dim: 2 })
        ));
    }

    #[test]
    fn small_ball_counts() {
        let v: Vec<_> = enumerate_ball_finite(1, 2).collect();
        let vals: Vec<i64> = v.iter().map(|k| k.get(0)).collect();
        assert_eq!(vals, vec![-1, 1, -2, 2]);
        assert_eq!(enumerate_ball_finite(2, 1).count(), 4);
        assert_eq!(enumerate_ball_finite(2, 2).count(), 12);
        assert_eq!(enumerate_ball_eta(2, 3).count(), 24);
        let with_two: Vec<_> = enumerate_ball_eta(2, 4).filter(|k| k.get(2) != 0).collect();
        assert_eq!(with_two.len(), 2);
    }

    #[test]
    fn order_is_graded_then_lexicographic() {
        let v: Vec<_> = enumerate_ball_finite(2, 3).collect();
        for w in v.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(a.l1() <= b.l1());
            if a.l1() == b.l1() {
                assert!((a.get(0), a.get(1)) < (b.get(0), b.get(1)));
            }
        }
    }

    fn brute_finite(d: usize, k: i64) -> HashSet<Vec<i64>> {
        let mut out = HashSet::new();
        let side = (2 * k + 1) as usize;
        let total = side.pow(d as u32);
        for mut code in 0..total {
            let mut v = vec![0i64; d];
            for x in v.iter_mut() {
                *x = (code % side) as i64 - k;
                code /= side;
            }
            let n: i64 = v.iter().map(|x| x.abs()).sum();
            if n >= 1 && n <= k {
                out.insert(v);
            }
        }
        out
    }

    #[test]
    fn finite_enumeration_matches_brute_force() {
        for (d, k) in [(1, 5), (2, 4), (3, 3), (4, 2)] {
            let got: Vec<Vec<i64>> = enumerate_ball_finite(d, k as u64)
                .map(|m| (0..d).map(|j| m.get(j)).collect())
                .collect();
            let set: HashSet<_> = got.iter().cloned().collect();
            assert_eq!(set.len(), got.len(), "duplicates for d={d}");
            assert_eq!(set, brute_finite(d, k));
        }
    }

    #[test]
    fn eta_enumeration_matches_brute_force() {
        for nu_max in [1u64, 4, 9, 12] {
            let eta = 2;
            let jmax = max_coordinate(eta, nu_max);
            let weights: Vec<u64> = (0..=jmax).map(|j| bracket_pow(j, eta)).collect();
            let bound = nu_max as i64;
            let mut brute = HashSet::new();
            let side = (2 * bound + 1) as usize;
            for mut code in 0..side.pow(weights.len() as u32) {
                let mut v = vec![0i64; weights.len()];
                for x in v.iter_mut() {
                    *x = (code % side) as i64 - bound;
                    code /= side;
                }
                let n: u64 = v.iter().zip(&weights).map(|(x, w)| x.unsigned_abs() * w).sum();
                if n >= 1 && n <= nu_max {
                    brute.insert(v);
                }
            }
            let got: Vec<Vec<i64>> = enumerate_ball_eta(eta, nu_max)
                .map(|m| (0..weights.len()).map(|j| m.get(j)).collect())
                .collect();
            let set: HashSet<_> = got.iter().cloned().collect();
            assert_eq!(set.len(), got.len());
            assert_eq!(set, brute, "nu_max = {nu_max}");
        }
    }

    #[test]
    fn shell_counts_match_enumeration() {
        let weights = eta_weights(2, 30, None);
        let counts = shell_counts(&weights, 30);
        let mut seen = vec![0u128; 31];
        for k in enumerate_ball_eta(2, 30) {
            seen[k.eta_norm(2) as usize] += 1;
        }
        assert_eq!(&counts[1..], &seen[1..]);
        let ln_counts = shell_log_sums(&weights, 30, |_, _| 0.0);
        for nu in 1..=30 {
            assert!((ln_counts[nu].exp() / counts[nu] as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shell_growth_is_subexponential() {
        let counts = shell_counts(&eta_weights(2, 30, None), 30);
        let mut c_eta: f64 = 0.0;
        for nu in 1..=30u64 {
            let bound = (nu as f64).powf((nu as f64).sqrt());
            c_eta = c_eta.max(counts[nu as usize] as f64 / bound);
        }
        // The calibrated constant is modest; the bound is far from tight.
        assert!(c_eta < 10.0, "C_eta = {c_eta}");
    }

    #[test]
    fn shell_max_matches_enumeration() {
        let weights = eta_weights(2, 20, None);
        let ln_g = |j: usize, v: u64| (1.0 + (v as f64).powi(2) * (bracket_pow(j, 1) as f64).powi(2)).ln();
        let table = shell_log_max(&weights, 20, ln_g);
        let mut brute = [f64::NEG_INFINITY; 21];
        for k in enumerate_ball_eta(2, 20) {
            let lp: f64 = k.entries().iter().map(|&(j, v)| ln_g(j, v.unsigned_abs())).sum();
            let nu = k.eta_norm(2) as usize;
            brute[nu] = brute[nu].max(lp);
        }
        for nu in 1..=20 {
            assert!((table[nu] - brute[nu]).abs() < 1e-12);
        }
    }
}
