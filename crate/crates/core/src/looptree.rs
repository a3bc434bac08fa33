//! Discrete jump excursions, their looptree distances, the decorated label process Z and the
//! pseudo-distances 𝔷 and D* evaluated on finite grids.
//!
//! An excursion is a step function on the grid t_i = i/N: X equals x[i] on [t_i, t_{i+1}), so
//! X_{t_i−} = x[i−1] and every positive increment is a jump.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{Streams, DOMAIN_LOOP};

/// Largest grid accepted by [`dstar_grid`].
pub const MAX_DSTAR_GRID: usize = 4096;

/// Sparse table of range minima over f64 values.
#[derive(Debug, Clone)]
pub struct MinTable {
    levels: Vec<Vec<f64>>,
}

impl MinTable {
    pub fn new(v: &[f64]) -> Self {
        let mut levels = vec![v.to_vec()];
        let mut w = 1;
        while 2 * w <= v.len() {
            let prev = levels.last().unwrap();
            let next: Vec<f64> = (0..=v.len() - 2 * w).map(|i| prev[i].min(prev[i + w])).collect();
            levels.push(next);
            w *= 2;
        }
        MinTable { levels }
    }

    /// min over i..=j
    pub fn query(&self, i: usize, j: usize) -> f64 {
        let len = j - i + 1;
        let k = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        self.levels[k][i].min(self.levels[k][j + 1 - (1 << k)])
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels[0].is_empty()
    }

    /// First index u ≥ from with value ≤ level, if any.
    pub fn first_at_or_below(&self, from: usize, level: f64) -> Option<usize> {
        let n = self.len();
        if from >= n || self.query(from, n - 1) > level {
            return None;
        }
        let (mut lo, mut hi) = (from, n - 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.query(from, mid) <= level {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Some(lo)
    }
}

#[derive(Debug, Clone)]
pub struct JumpExcursion {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// (index, ΔX) for every positive increment
    pub jumps: Vec<(usize, f64)>,
    mins: MinTable,
}

impl JumpExcursion {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::Domain("an excursion needs at least two grid points".into()));
        }
        if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("excursion values must be finite and nonnegative".into()));
        }
        if x[0] != 0.0 || *x.last().unwrap() != 0.0 {
            return Err(Error::Domain("excursion must start and end at 0".into()));
        }
        let n = x.len() - 1;
        let t = (0..=n).map(|i| i as f64 / n as f64).collect();
        let jumps = (1..x.len()).filter(|&i| x[i] > x[i - 1]).map(|i| (i, x[i] - x[i - 1])).collect();
        let mins = MinTable::new(&x);
        Ok(JumpExcursion { t, x, jumps, mins })
    }

    /// From a Lukasiewicz path S_0..S_N with S_N = −1: x_i = scale·S_i for i < N and x_N = 0.
    pub fn from_lukasiewicz(s: &[i64], scale: f64) -> Result<Self> {
        let n = s.len().saturating_sub(1);
        if n == 0 || s[n] != -1 || s[..n].iter().any(|&v| v < 0) {
            return Err(Error::Domain("not a Lukasiewicz excursion".into()));
        }
        let mut x: Vec<f64> = s[..n].iter().map(|&v| scale * v as f64).collect();
        x.push(0.0);
        Self::new(x)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// X_{t_i−}
    pub fn left(&self, i: usize) -> f64 {
        if i == 0 {
            self.x[0]
        } else {
            self.x[i - 1]
        }
    }

    pub fn delta(&self, i: usize) -> f64 {
        (self.x[i] - self.left(i)).max(0.0)
    }

    /// I_{s,t} for s ≤ t
    pub fn inf(&self, s: usize, t: usize) -> f64 {
        self.mins.query(s, t)
    }

    pub fn is_ancestor(&self, s: usize, t: usize) -> bool {
        s <= t && self.inf(s, t) >= self.left(s)
    }

    /// x_{s,t}, zero when s is not an ancestor of t.
    pub fn x_between(&self, s: usize, t: usize) -> f64 {
        if self.is_ancestor(s, t) {
            self.inf(s, t) - self.left(s)
        } else {
            0.0
        }
    }

    /// Most recent common ancestor s⋏t.
    pub fn mrca(&self, s: usize, t: usize) -> usize {
        let (a, b) = (s.min(t), s.max(t));
        let mut mb = self.inf(a, b);
        let mut ma = self.x[a];
        let mut i = a;
        loop {
            let l = self.left(i);
            if l <= ma && l <= mb {
                return i;
            }
            i -= 1;
            ma = ma.min(self.x[i]);
            mb = mb.min(self.x[i]);
        }
    }

    /// Ancestral points are identified with their return time: s ∼ t for s < t iff
    /// X_t = X_{s−} and X > X_{s−} strictly on (s, t). A downward step at s is a piece of drift,
    /// so X_s ≥ X_{s−} is required as well. Returns the partner of s, if any.
    pub fn identified_with(&self, s: usize) -> Option<usize> {
        let level = self.left(s);
        if self.x[s] < level {
            return None;
        }
        let u = self.mins.first_at_or_below(s + 1, level)?;
        (self.x[u] == level).then_some(u)
    }

    pub fn to_csv(&self, z: Option<&[f64]>) -> String {
        let mut out = String::from("t,X,Z\n");
        for i in 0..self.len() {
            let zi = z.and_then(|z| z.get(i)).map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", self.t[i], self.x[i], zi).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncestorJump {
    pub r: usize,
    pub delta: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AncestralDecomposition {
    pub t: usize,
    /// ancestral jumps, latest first
    pub jumps: Vec<AncestorJump>,
}

impl AncestralDecomposition {
    pub fn sum(&self) -> f64 {
        self.jumps.iter().map(|j| j.x).sum()
    }
}

/// Backward sweep of the running minimum from t.
pub fn ancestors(ex: &JumpExcursion, t: usize) -> AncestralDecomposition {
    let mut jumps = Vec::new();
    let mut m = ex.x[t];
    let mut i = t;
    loop {
        m = m.min(ex.x[i]);
        let l = ex.left(i);
        if l <= m && ex.x[i] > l {
            jumps.push(AncestorJump { r: i, delta: ex.x[i] - l, x: m - l });
        }
        if i == 0 {
            break;
        }
        i -= 1;
    }
    AncestralDecomposition { t, jumps }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// δ(a, b) = min(|a−b|, 1−|a−b|)
    Geodesic,
    /// δ̃(a, b) = |a−b|(1−|a−b|)
    Resistance,
}

impl Kernel {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        let h = (a - b).abs();
        match self {
            Kernel::Geodesic => h.min(1.0 - h),
            Kernel::Resistance => h * (1.0 - h),
        }
    }
}

/// Σ over jump ancestors r of t with a < r of Δ_r·kernel(0, x_{r,t}/Δ_r).
fn d0(ex: &JumpExcursion, a: usize, t: usize, kernel: Kernel) -> f64 {
    let mut sum = 0.0;
    let mut m = ex.x[t];
    let mut i = t;
    while i > a {
        m = m.min(ex.x[i]);
        let l = ex.left(i);
        if l <= m && ex.x[i] > l {
            let delta = ex.x[i] - l;
            sum += delta * kernel.eval(0.0, (m - l) / delta);
        }
        i -= 1;
    }
    sum
}

pub fn loop_distance(ex: &JumpExcursion, s: usize, t: usize, kernel: Kernel) -> f64 {
    if s == t {
        return 0.0;
    }
    let a = ex.mrca(s, t);
    let mut d = d0(ex, a, s, kernel) + d0(ex, a, t, kernel);
    let delta = ex.delta(a);
    if delta > 0.0 {
        d += delta * kernel.eval(ex.x_between(a, s) / delta, ex.x_between(a, t) / delta);
    }
    d
}

/// f_r(s) = first time after r at which X reaches X_r − sΔ_r.
pub fn face_boundary(ex: &JumpExcursion, r: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let delta = ex.delta(r);
    if delta <= 0.0 {
        return Err(Error::Domain(format!("time {r} is not a jump")));
    }
    fractions
        .iter()
        .map(|&s| {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Domain(format!("fraction {s} outside [0,1]")));
            }
            let level = ex.x[r] - s * delta;
            ex.mins
                .first_at_or_below(r, level)
                .ok_or_else(|| Error::Internal("excursion does not return below the jump".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelValue {
    pub z: f64,
    /// Σ x(1 − x/Δ) over ancestral jumps below the threshold
    pub residual: f64,
}

struct Bridge {
    /// sorted (fraction, value), including the pinned endpoints
    points: Vec<(f64, f64)>,
    rng: ChaCha8Rng,
}

impl Bridge {
    fn value(&mut self, u: f64) -> f64 {
        let k = self.points.partition_point(|p| p.0 < u);
        if self.points[k].0 == u {
            return self.points[k].1;
        }
        let (ul, bl) = self.points[k - 1];
        let (ur, br) = self.points[k];
        let w = (u - ul) / (ur - ul);
        let var = (u - ul) * (ur - u) / (ur - ul);
        let g: f64 = self.rng.sample(StandardNormal);
        let v = bl + w * (br - bl) + var.sqrt() * g;
        self.points.insert(k, (u, v));
        v
    }
}

/// Z_t = Σ over ancestral jumps of Δ^{1/2} b(x/Δ) with independent Brownian bridges b,
/// sampled lazily and consistently.
pub struct LabelField<'a> {
    ex: &'a JumpExcursion,
    streams: Streams,
    pub threshold: f64,
    bridges: HashMap<usize, Bridge>,
    cache: HashMap<usize, LabelValue>,
}

/// The default threshold is the smallest registered jump, one lattice unit for rescaled
/// Lukasiewicz paths.
pub fn label_field(ex: &JumpExcursion, seed: u64, sample: u64, threshold: Option<f64>) -> LabelField<'_> {
    let threshold = threshold.unwrap_or_else(|| ex.jumps.iter().map(|j| j.1).fold(f64::INFINITY, f64::min));
    LabelField { ex, streams: Streams::new(seed, sample, DOMAIN_LOOP), threshold, bridges: HashMap::new(), cache: HashMap::new() }
}

impl LabelField<'_> {
    pub fn query(&mut self, t: usize) -> LabelValue {
        if let Some(v) = self.cache.get(&t) {
            return *v;
        }
        let anc = ancestors(self.ex, t);
        let mut z = 0.0;
        let mut residual = 0.0;
        for j in &anc.jumps {
            if j.delta < self.threshold {
                residual += j.x * (1.0 - j.x / j.delta);
                continue;
            }
            let streams = &self.streams;
            let bridge = self.bridges.entry(j.r).or_insert_with(|| Bridge {
                points: vec![(0.0, 0.0), (1.0, 0.0)],
                rng: streams.at(j.r as u64),
            });
            z += j.delta.sqrt() * bridge.value(j.x / j.delta);
        }
        let v = LabelValue { z, residual };
        self.cache.insert(t, v);
        v
    }

    /// Z on every grid time, in increasing time order.
    pub fn materialize(&mut self) -> Vec<f64> {
        (0..self.ex.len()).map(|t| self.query(t).z).collect()
    }
}

/// Γ(s,t) = ½d̃(0,s) + ½d̃(0,t) − ½d̃(s,t).
pub fn covariance(ex: &JumpExcursion, s: usize, t: usize) -> f64 {
    let dt = |a, b| loop_distance(ex, a, b, Kernel::Resistance);
    0.5 * (dt(0, s) + dt(0, t) - dt(s, t))
}

/// A label path with range minima, for 𝔷(s,t) = Z_s + Z_t − 2 max(min_{[s,t]} Z, min_{[t,s]} Z).
#[derive(Debug, Clone)]
pub struct ZPath {
    pub z: Vec<f64>,
    mins: MinTable,
}

impl ZPath {
    pub fn new(z: Vec<f64>) -> Self {
        let mins = MinTable::new(&z);
        ZPath { z, mins }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn zeta(&self, s: usize, t: usize) -> f64 {
        let (a, b) = (s.min(t), s.max(t));
        let inner = self.mins.query(a, b);
        let n = self.z.len();
        let mut outer = self.mins.query(0, a);
        if b < n {
            outer = outer.min(self.mins.query(b, n - 1));
        }
        self.z[s] + self.z[t] - 2.0 * inner.max(outer)
    }

    pub fn argmin(&self) -> usize {
        let m = self.mins.query(0, self.z.len() - 1);
        self.z.iter().position(|&v| v == m).unwrap()
    }
}

pub fn z_metric(z: &[f64], s: usize, t: usize) -> f64 {
    let (a, b) = (s.min(t), s.max(t));
    let inner = z[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
    let outer = z[..=a].iter().chain(&z[b..]).copied().fold(f64::INFINITY, f64::min);
    z[s] + z[t] - 2.0 * inner.max(outer)
}

/// Pairwise shortest chains on a grid, with the number of 𝔷-links of a cheapest chain.
#[derive(Debug, Clone)]
pub struct DStar {
    pub grid: Vec<usize>,
    pub cost: Vec<f64>,
    pub links: Vec<u32>,
}

impl DStar {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.grid.len() + j]
    }

    pub fn links(&self, i: usize, j: usize) -> u32 {
        self.links[i * self.grid.len() + j]
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.grid, &self.cost)
    }
}

pub fn matrix_csv(labels: &[usize], values: &[f64]) -> String {
    let g = labels.len();
    let mut out = String::from("i");
    for l in labels {
        write!(out, ",{l}").unwrap();
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        write!(out, "{l}").unwrap();
        for v in &values[i * g..(i + 1) * g] {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Shortest chains in the complete graph on `grid` (sorted times) with 𝔷 edge weights plus
/// zero-weight edges for the given identified time pairs. Ties in cost prefer fewer links.
pub fn dstar_grid(zp: &ZPath, grid: &[usize], identified: &[(usize, usize)]) -> Result<DStar> {
    let g = grid.len();
    if g > MAX_DSTAR_GRID {
        return Err(Error::Resource(format!("grid of {g} times exceeds {MAX_DSTAR_GRID}")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.last().is_some_and(|&t| t >= zp.len()) {
        return Err(Error::Domain("grid must be strictly increasing times of the label path".into()));
    }
    let pos = |t: usize| grid.binary_search(&t).ok();
    let mut zero: Vec<Vec<usize>> = vec![Vec::new(); g];
    for &(s, t) in identified {
        if let (Some(i), Some(j)) = (pos(s), pos(t)) {
            zero[i].push(j);
            zero[j].push(i);
        }
    }
    let mut w = vec![0.0; g * g];
    for i in 0..g {
        for j in i + 1..g {
            let v = zp.zeta(grid[i], grid[j]);
            w[i * g + j] = v;
            w[j * g + i] = v;
        }
    }
    let better = |a: (f64, u32), b: (f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut cost = vec![0.0; g * g];
    let mut links = vec![0u32; g * g];
    for src in 0..g {
        let mut best = vec![(f64::INFINITY, u32::MAX); g];
        let mut done = vec![false; g];
        best[src] = (0.0, 0);
        for _ in 0..g {
            let mut u = usize::MAX;
            for v in 0..g {
                if !done[v] && (u == usize::MAX || better(best[v], best[u])) {
                    u = v;
                }
            }
            done[u] = true;
            let (cu, pu) = best[u];
            for &v in &zero[u] {
                if !done[v] && better((cu, pu), best[v]) {
                    best[v] = (cu, pu);
                }
            }
            for v in 0..g {
                let cand = (cu + w[u * g + v], pu + 1);
                if !done[v] && better(cand, best[v]) {
                    best[v] = cand;
                }
            }
        }
        for (v, (c, p)) in best.into_iter().enumerate() {
            cost[src * g + v] = c;
            links[src * g + v] = p;
        }
    }
    Ok(DStar { grid: grid.to_vec(), cost, links })
}

/// Identified pairs among grid times of an excursion.
pub fn excursion_identifications(ex: &JumpExcursion, grid: &[usize]) -> Vec<(usize, usize)> {
    grid.iter().filter_map(|&s| ex.identified_with(s).map(|t| (s, t))).collect()
}

/// Pairs of grid times carried by the same vertex, e.g. corners of one white vertex.
pub fn vertex_identifications(vertex: &[u32], grid: &[usize]) -> Vec<(usize, usize)> {
    let mut first: HashMap<u32, usize> = HashMap::new();
    let mut out = Vec::new();
    for &t in grid {
        match first.get(&vertex[t]) {
            Some(&s) => out.push((s, t)),
            None => {
                first.insert(vertex[t], t);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdg::{bdg_forward, successors};
    use crate::mobile::{encode_paths, sample_labeled_mobile, Color, LabeledMobile, Mobile};
    use crate::weights::{offspring_laws, WeightSequence};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Lukasiewicz path from arbitrary steps ≥ −1: cut at the first visit to −1, or pad with −1 steps.
    fn luka(steps: &[i64]) -> Vec<i64> {
        let mut s = vec![0i64];
        for &d in steps {
            let next = s.last().unwrap() + d;
            s.push(next);
            if next == -1 {
                return s;
            }
        }
        while *s.last().unwrap() != -1 {
            let next = s.last().unwrap() - 1;
            s.push(next);
        }
        s
    }

    fn fixture() -> JumpExcursion {
        // 0 →3 2 1 →2 1 0 →4 3 2 1 0 0
        JumpExcursion::from_lukasiewicz(&[0, 3, 2, 1, 2, 1, 0, 4, 3, 2, 1, 0, 0, -1], 1.0).unwrap()
    }

    /// All ancestors by brute force: s ≤ t with min X on [s,t] ≥ X_{s−}.
    fn brute_ancestor_jumps(ex: &JumpExcursion, t: usize) -> Vec<AncestorJump> {
        (0..=t)
            .rev()
            .filter(|&s| ex.delta(s) > 0.0 && ex.x[s..=t].iter().all(|&v| v >= ex.left(s)))
            .map(|s| AncestorJump {
                r: s,
                delta: ex.delta(s),
                x: ex.x[s..=t].iter().copied().fold(f64::INFINITY, f64::min) - ex.left(s),
            })
            .collect()
    }

    #[test]
    fn ancestral_sums_reproduce_the_path() {
        let ex = fixture();
        assert!(ancestors(&ex, 0).jumps.is_empty());
        for t in 0..ex.len() {
            let a = ancestors(&ex, t);
            assert_eq!(a.sum(), ex.x[t], "t = {t}");
            assert_eq!(a.jumps, brute_ancestor_jumps(&ex, t));
        }
        assert_eq!(ex.jumps, vec![(1, 3.0), (4, 1.0), (7, 4.0)]);
    }

    #[test]
    fn ancestor_sets_are_nested() {
        let ex = fixture();
        for t in 0..ex.len() {
            for s in 0..=t {
                if ex.is_ancestor(s, t) {
                    let outer: Vec<usize> = ancestors(&ex, t).jumps.iter().map(|j| j.r).collect();
                    assert!(ancestors(&ex, s).jumps.iter().all(|j| outer.contains(&j.r)));
                }
            }
        }
    }

    #[test]
    fn kernels() {
        assert!((Kernel::Geodesic.eval(0.1, 0.8) - 0.3).abs() < 1e-12);
        assert!((Kernel::Resistance.eval(0.1, 0.8) - 0.21).abs() < 1e-12);
    }

    #[test]
    fn loop_distance_on_fixture() {
        let ex = fixture();
        for s in 0..ex.len() {
            assert_eq!(loop_distance(&ex, s, s, Kernel::Geodesic), 0.0);
        }
        let d = |a, b| loop_distance(&ex, a, b, Kernel::Geodesic);
        // along the loop of size 3 at time 1: positions 3, 2, 1 then back to 0
        assert!((d(1, 2) - 1.0).abs() < 1e-12);
        assert!((d(1, 3) - 1.0).abs() < 1e-12);
        assert_eq!(d(1, 6), 0.0);
        // time 5 sits on the big loop at the foot of the loop opened at 4
        assert_eq!(d(4, 5), 0.0);
        assert_eq!(d(0, 12), 0.0);
        assert_eq!(d(0, ex.len() - 1), 0.0);
    }

    #[test]
    fn face_boundaries_trace_loops() {
        let ex = fixture();
        for &(r, delta) in &ex.jumps {
            let k = delta as usize;
            let fr: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
            let f = face_boundary(&ex, r, &fr).unwrap();
            assert_eq!(f[0], r);
            assert!(f.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(ex.x[f[k]], ex.left(r));
            assert_eq!(loop_distance(&ex, r, f[k], Kernel::Geodesic), 0.0);
            for i in 0..=k {
                for j in 0..=k {
                    let want = delta * Kernel::Geodesic.eval(fr[i], fr[j]);
                    assert!((loop_distance(&ex, f[i], f[j], Kernel::Geodesic) - want).abs() < 1e-12);
                }
            }
        }
        assert!(face_boundary(&ex, 2, &[0.5]).is_err());
    }

    fn sampled_excursion(n: usize, seed: u64) -> (JumpExcursion, LabeledMobile) {
        let w = WeightSequence::kazakov(1.5).unwrap();
        let off = offspring_laws(&w, 4000).unwrap();
        let law = crate::weights::grandchild_law(&off, 4000).unwrap();
        let sm = sample_labeled_mobile(&off, &law, n, seed, 0, 100_000).unwrap();
        let pe = encode_paths(&sm.labeled);
        (JumpExcursion::from_lukasiewicz(&pe.s, 1.0).unwrap(), sm.labeled)
    }

    #[test]
    fn quasi_isometry_on_random_pairs() {
        let (ex, _) = sampled_excursion(2000, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let s = rng.random_range(0..ex.len());
            let t = rng.random_range(0..ex.len());
            let d = loop_distance(&ex, s, t, Kernel::Geodesic);
            let dt = loop_distance(&ex, s, t, Kernel::Resistance);
            assert!(0.5 * d <= dt + 1e-9 && dt <= d + 1e-9, "({s},{t}): d = {d}, d~ = {dt}");
        }
    }

    #[test]
    fn label_field_basics() {
        let ex = fixture();
        let mut f = label_field(&ex, 1, 0, None);
        assert_eq!(f.query(0).z, 0.0);
        let a = f.query(9);
        let _ = f.query(8);
        assert_eq!(f.query(9), a);
        assert_eq!(a.residual, 0.0);
        // below-threshold jumps go to the residual
        let mut g = label_field(&ex, 1, 0, Some(2.0));
        assert_eq!(g.query(5).residual, 0.0);
        let r = g.query(4).residual;
        assert_eq!(r, 0.0, "x = Δ at the jump itself contributes nothing");
    }

    #[test]
    fn label_field_covariance_matches_resistance_kernel() {
        let ex = fixture();
        let (s, t) = (3usize, 9usize);
        let reps = 10_000;
        let (mut ss, mut tt, mut st) = (0.0, 0.0, 0.0);
        let mut residual = 0.0;
        for k in 0..reps {
            let mut f = label_field(&ex, 77, k, Some(1.5));
            let a = f.query(s);
            let b = f.query(t);
            residual = b.residual;
            ss += a.z * a.z;
            tt += b.z * b.z;
            st += a.z * b.z;
        }
        let n = reps as f64;
        let var_t = loop_distance(&ex, 0, t, Kernel::Resistance) - residual;
        let var_s = loop_distance(&ex, 0, s, Kernel::Resistance);
        let cov = covariance(&ex, s, t);
        for (got, want) in [(ss / n, var_s), (tt / n, var_t), (st / n, cov)] {
            let sd = (2.0 * want.abs().max(0.1) * var_s.max(var_t) / n).sqrt().max(want.abs() * (2.0 / n).sqrt());
            assert!((got - want).abs() < 3.0 * sd.max(1e-3), "got {got}, want {want}");
        }
    }

    #[test]
    fn zeta_and_dstar_identities() {
        let z = vec![0.0, 2.0, 1.0, 3.0, -1.0, 0.5, 2.5, 1.0];
        let zp = ZPath::new(z.clone());
        for s in 0..z.len() {
            assert_eq!(zp.zeta(s, s), 0.0);
            for t in 0..z.len() {
                assert_eq!(zp.zeta(s, t), z_metric(&z, s, t));
                assert!(zp.zeta(s, t) >= (z[s] - z[t]).abs());
            }
        }
        let grid: Vec<usize> = (0..z.len()).collect();
        let ds = dstar_grid(&zp, &grid, &[]).unwrap();
        let star = zp.argmin();
        for i in 0..grid.len() {
            assert_eq!(ds.get(i, i), 0.0);
            assert_eq!(ds.get(star, i), z[i] - z[star]);
            for j in 0..grid.len() {
                assert!(ds.get(i, j) <= zp.zeta(i, j));
                assert_eq!(ds.get(i, j), ds.get(j, i));
            }
        }
        assert!(matches!(dstar_grid(&zp, &vec![0; MAX_DSTAR_GRID + 1], &[]), Err(Error::Resource(_))));
    }

    #[test]
    fn excursion_identifications_are_sound() {
        let ex = fixture();
        let grid: Vec<usize> = (0..ex.len()).collect();
        let pairs = excursion_identifications(&ex, &grid);
        assert!(!pairs.is_empty());
        for &(s, t) in &pairs {
            assert!(s < t);
            assert_eq!(ex.x[t], ex.left(s));
            assert!(ex.x[s + 1..t].iter().all(|&v| v > ex.left(s)));
            assert_eq!(loop_distance(&ex, s, t, Kernel::Geodesic), 0.0, "pair ({s},{t})");
        }
    }

    /// Corner-time coupling on a sampled map: |ℓ diff| ≤ d ≤ 𝔷 + 2 and d ≤ D* + 2p.
    #[test]
    fn coupled_bounds_in_corner_time() {
        let (_, lm) = sampled_excursion(600, 3);
        let pm = bdg_forward(&lm, 1).unwrap();
        let cs = successors(&lm);
        let adj = pm.map.adjacency();
        let zp = ZPath::new(cs.label.iter().map(|&l| l as f64).collect());
        let k = cs.len();
        let grid: Vec<usize> = (0..96).map(|i| i * k / 96).collect();
        let ident = vertex_identifications(&cs.vertex, &grid);
        let ds = dstar_grid(&zp, &grid, &ident).unwrap();
        let dist: Vec<Vec<u32>> = grid.iter().map(|&c| adj.bfs(pm.map_vertex[cs.vertex[c] as usize])).collect();
        for (i, &s) in grid.iter().enumerate() {
            for (j, &t) in grid.iter().enumerate() {
                let d = dist[i][pm.map_vertex[cs.vertex[t] as usize] as usize] as f64;
                assert!((zp.z[s] - zp.z[t]).abs() <= d);
                assert!(d <= zp.zeta(s, t) + 2.0);
                assert!(d <= ds.get(i, j) + 2.0 * ds.links(i, j) as f64);
            }
        }
        let fine: Vec<usize> = (0..192).map(|i| i * k / 192).collect();
        let df = dstar_grid(&zp, &fine, &vertex_identifications(&cs.vertex, &fine)).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                assert!(df.get(2 * i, 2 * j) <= ds.get(i, j));
            }
        }
    }

    /// In lexicographic white order the Schaeffer-type upper bound can fail.
    #[test]
    fn lexicographic_order_breaks_the_upper_bound() {
        let mut m = Mobile::new();
        let w = m.root;
        let b1 = m.add_child(w, Color::Black);
        let x = m.add_child(b1, Color::White);
        let b3 = m.add_child(x, Color::Black);
        let y = m.add_child(b3, Color::White);
        let b2 = m.add_child(w, Color::Black);
        let u1 = m.add_child(b2, Color::White);
        let u2 = m.add_child(b2, Color::White);
        let mut label = vec![0i64; m.len()];
        for (v, l) in [(x, 1), (y, 2), (u1, 2), (u2, 1)] {
            label[v as usize] = l;
        }
        let lm = LabeledMobile { mobile: m, label };
        lm.validate().unwrap();
        let pm = bdg_forward(&lm, 1).unwrap();
        let d = pm.map.adjacency().bfs(pm.map_vertex[y as usize])[pm.map_vertex[u1 as usize] as usize];
        assert_eq!(d, 4);
        let order = lm.mobile.white_order();
        let lex: Vec<f64> = order.iter().map(|&v| lm.label[v as usize] as f64).collect();
        let (iy, iu) = (order.iter().position(|&v| v == y).unwrap(), order.iter().position(|&v| v == u1).unwrap());
        assert_eq!(z_metric(&lex, iy, iu) + 2.0, 2.0);
        // corner time restores the bound
        let cs = successors(&lm);
        let zp = ZPath::new(cs.label.iter().map(|&l| l as f64).collect());
        let cy = cs.vertex.iter().position(|&v| v == y).unwrap();
        let best = (0..cs.len()).filter(|&c| cs.vertex[c] == u1).map(|c| zp.zeta(cy, c)).fold(f64::INFINITY, f64::min);
        assert!(d as f64 <= best + 2.0);
    }

    proptest! {
        #[test]
        fn loop_distance_is_a_pseudometric(steps in prop::collection::vec(-1i64..4, 1..40), picks in prop::collection::vec(0usize..1000, 3)) {
            let ex = JumpExcursion::from_lukasiewicz(&luka(&steps), 1.0).unwrap();
            let n = ex.len();
            let [a, b, c] = [picks[0] % n, picks[1] % n, picks[2] % n];
            for k in [Kernel::Geodesic, Kernel::Resistance] {
                let d = |s, t| loop_distance(&ex, s, t, k);
                prop_assert!((d(a, b) - d(b, a)).abs() < 1e-12);
                prop_assert!(d(a, b) >= 0.0);
                if k == Kernel::Geodesic {
                    prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-9);
                }
            }
            for t in 0..n {
                prop_assert_eq!(ancestors(&ex, t).sum(), ex.x[t]);
            }
        }

        #[test]
        fn dstar_is_a_pseudometric(z in prop::collection::vec(-5i64..6, 2..24)) {
            let zp = ZPath::new(z.iter().map(|&v| v as f64).collect());
            let grid: Vec<usize> = (0..z.len()).collect();
            let ds = dstar_grid(&zp, &grid, &[]).unwrap();
            let g = grid.len();
            for i in 0..g {
                for j in 0..g {
                    prop_assert_eq!(ds.get(i, j), ds.get(j, i));
                    for k in 0..g {
                        prop_assert!(ds.get(i, k) <= ds.get(i, j) + ds.get(j, k));
                    }
                }
            }
        }
    }
}
