//! Mobiles: two-colored plane trees, their exact conditioned sampler, well-labelings and path
//! encodings.

use std::fmt::Write as _;

use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::rng::{Streams, DOMAIN_BLACK, DOMAIN_BRIDGE, DOMAIN_LABEL};
use crate::weights::{GrandchildLaw, TwoTypeOffspring, WeightSequence};
use crate::{Error, Result};

pub const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    White,
    Black,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mobile {
    pub color: Vec<Color>,
    pub parent: Vec<u32>,
    pub children: Vec<Vec<u32>>,
    pub root: u32,
}

impl Default for Mobile {
    fn default() -> Self {
        Self::new()
    }
}

impl Mobile {
    /// A single white root.
    pub fn new() -> Self {
        Mobile { color: vec![Color::White], parent: vec![NONE], children: vec![Vec::new()], root: 0 }
    }

    pub fn add_child(&mut self, parent: u32, color: Color) -> u32 {
        let id = self.color.len() as u32;
        self.color.push(color);
        self.parent.push(parent);
        self.children.push(Vec::new());
        self.children[parent as usize].push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }

    pub fn n_white(&self) -> usize {
        self.color.iter().filter(|&&c| c == Color::White).count()
    }

    pub fn n_black(&self) -> usize {
        self.len() - self.n_white()
    }

    pub fn is_white(&self, v: u32) -> bool {
        self.color[v as usize] == Color::White
    }

    /// All nodes in depth-first order from the root.
    pub fn preorder(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.children[v as usize].iter().rev());
        }
        out
    }

    /// White vertices in lexicographic order.
    pub fn white_order(&self) -> Vec<u32> {
        self.preorder().into_iter().filter(|&v| self.is_white(v)).collect()
    }

    /// Grandchildren of a white vertex, in order.
    pub fn grandchildren(&self, w: u32) -> impl Iterator<Item = u32> + '_ {
        self.children[w as usize].iter().flat_map(move |&b| self.children[b as usize].iter().copied())
    }

    pub fn validate(&self) -> Result<()> {
        if self.color.get(self.root as usize) != Some(&Color::White) {
            return Err(Error::Structural("root must be white".into()));
        }
        if self.parent[self.root as usize] != NONE {
            return Err(Error::Structural("root has a parent".into()));
        }
        let mut edges = 0usize;
        for v in 0..self.len() {
            for &c in &self.children[v] {
                edges += 1;
                if self.parent[c as usize] != v as u32 {
                    return Err(Error::Structural(format!("parent pointer of {c} is inconsistent")));
                }
                if self.color[c as usize] == self.color[v] {
                    return Err(Error::Structural(format!("edge {v}-{c} joins equal colors")));
                }
            }
        }
        if edges + 1 != self.len() || self.preorder().len() != self.len() {
            return Err(Error::Structural("not a tree".into()));
        }
        Ok(())
    }

    /// Preorder shape code: for each node, its number of children. Colors are implied by
    /// alternation, so equal codes mean equal plane trees.
    pub fn code(&self) -> Vec<u32> {
        self.preorder().iter().map(|&v| self.children[v as usize].len() as u32).collect()
    }

    pub fn from_code(code: &[u32]) -> Result<Self> {
        let mut m = Mobile::new();
        m.children[0].reserve(code.first().copied().unwrap_or(0) as usize);
        let mut pos = 0usize;
        // (node, children still to create)
        let mut stack: Vec<(u32, u32)> = Vec::new();
        let first = *code.first().ok_or_else(|| Error::Domain("empty code".into()))?;
        stack.push((0, first));
        pos += 1;
        while let Some(top) = stack.last_mut() {
            if top.1 == 0 {
                stack.pop();
                continue;
            }
            top.1 -= 1;
            let parent = top.0;
            let col = if m.is_white(parent) { Color::Black } else { Color::White };
            let id = m.add_child(parent, col);
            let k = *code.get(pos).ok_or_else(|| Error::Domain("truncated code".into()))?;
            pos += 1;
            stack.push((id, k));
        }
        if pos != code.len() {
            return Err(Error::Domain("trailing entries in code".into()));
        }
        Ok(m)
    }

    /// Newline text, one node per line: "id color parent".
    pub fn to_text(&self, labels: Option<&[i64]>) -> String {
        let mut s = String::new();
        for v in 0..self.len() {
            let c = if self.color[v] == Color::White { "white" } else { "black" };
            let p = if self.parent[v] == NONE { "-".to_string() } else { self.parent[v].to_string() };
            match labels {
                Some(l) if self.color[v] == Color::White => writeln!(s, "{v} {c} {p} {}", l[v]).unwrap(),
                _ => writeln!(s, "{v} {c} {p}").unwrap(),
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMobile {
    pub mobile: Mobile,
    /// Indexed by node id; entries at black nodes are unused and kept at 0.
    pub label: Vec<i64>,
}

impl LabeledMobile {
    /// Around each black vertex, reading parent, children in order, parent again, labels drop
    /// by at most one per step.
    pub fn is_well_labeled(&self) -> bool {
        let m = &self.mobile;
        if self.label[m.root as usize] != 0 {
            return false;
        }
        for b in 0..m.len() {
            if m.color[b] != Color::Black {
                continue;
            }
            let mut prev = self.label[m.parent[b] as usize];
            for &c in m.children[b].iter().chain(std::iter::once(&m.parent[b])) {
                let l = self.label[c as usize];
                if l < prev - 1 {
                    return false;
                }
                prev = l;
            }
        }
        true
    }

    pub fn validate(&self) -> Result<()> {
        self.mobile.validate()?;
        if self.label.len() != self.mobile.len() {
            return Err(Error::Structural("label table has the wrong length".into()));
        }
        if !self.is_well_labeled() {
            return Err(Error::Structural("labels are not a well-labeling".into()));
        }
        Ok(())
    }

    pub fn code(&self) -> (Vec<u32>, Vec<i64>) {
        let labels = self.mobile.white_order().iter().map(|&w| self.label[w as usize]).collect();
        (self.mobile.code(), labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathEncoding {
    /// S_0..S_{n−1}, ending at −1
    pub s: Vec<i64>,
    /// L_0..L_{n−2}
    pub l: Vec<i64>,
    pub visit_order: Vec<u32>,
}

impl PathEncoding {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,S,L\n");
        for i in 0..self.s.len() {
            let l = self.l.get(i).copied().unwrap_or(0);
            writeln!(out, "{i},{},{l}", self.s[i]).unwrap();
        }
        out
    }
}

/// Conditioned sampler for n−1 i.i.d. draws from μ∘• summing to n−2.
///
/// Values ≤ K are drawn in aggregate as multinomial counts (sequential binomials); the few
/// values above K are drawn one by one. Given the counts, a uniform shuffle yields the same law
/// as drawing the sequence term by term, so the acceptance event is unchanged.
pub struct BridgeSampler {
    n: usize,
    k_small: usize,
    /// p_v / P(≥ v) for v ≤ K
    cond: Vec<f64>,
    tail_big: f64,
    /// cumulative mass of (K, v] for v in K+1..=n−2
    cum_big: Vec<f64>,
}

impl BridgeSampler {
    pub fn new(law: &GrandchildLaw, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("n = {n} must be at least 2")));
        }
        let target = n - 2;
        if law.len() < target + 1 {
            return Err(Error::Domain(format!(
                "grandchild law known up to {} but n − 2 = {target}",
                law.len() as i64 - 1
            )));
        }
        let k_small = target.min(128);
        let p = &law.pmf;
        let mut cond = Vec::with_capacity(k_small + 1);
        let mut head = 0.0;
        for &pv in p.iter().take(k_small + 1) {
            let rest = 1.0 - head;
            cond.push(if rest > 0.0 { (pv / rest).clamp(0.0, 1.0) } else { 1.0 });
            head += pv;
        }
        let tail_big = (1.0 - head).max(0.0);
        let mut cum_big = Vec::with_capacity(target - k_small);
        let mut acc = 0.0;
        for &pv in p.iter().take(target + 1).skip(k_small + 1) {
            acc += pv;
            cum_big.push(acc);
        }
        Ok(BridgeSampler { n, k_small, cond, tail_big, cum_big })
    }

    /// One attempt; `None` on rejection.
    pub fn attempt<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<u32>> {
        let draws = (self.n - 1) as u64;
        let target = (self.n - 2) as u64;
        let mut left = draws;
        let mut sum = 0u64;
        let mut counts = Vec::with_capacity(self.k_small + 1);
        for (v, &c) in self.cond.iter().enumerate() {
            let k = if left == 0 || c == 0.0 {
                0
            } else if c >= 1.0 {
                left
            } else {
                Binomial::new(left, c).ok()?.sample(rng)
            };
            left -= k;
            sum += v as u64 * k;
            counts.push(k);
            if sum > target || sum + left * (v as u64 + 1) > target {
                return None;
            }
        }
        let mut big = Vec::with_capacity(left as usize);
        for _ in 0..left {
            let u = rng.random::<f64>() * self.tail_big;
            let idx = self.cum_big.partition_point(|&c| c < u);
            if idx >= self.cum_big.len() {
                return None;
            }
            let v = (self.k_small + 1 + idx) as u64;
            sum += v;
            if sum > target {
                return None;
            }
            big.push(v as u32);
        }
        if sum != target {
            return None;
        }
        let mut seq = Vec::with_capacity(draws as usize);
        for (v, &k) in counts.iter().enumerate() {
            seq.extend(std::iter::repeat_n(v as u32, k as usize));
        }
        seq.extend(big);
        seq.shuffle(rng);
        Some(seq)
    }
}

/// Rotates a bridge with steps g_i − 1 ending at −1 so that it first hits −1 at its last step.
pub fn vervaat(g: &[u32]) -> Result<Vec<u32>> {
    let mut s = 0i64;
    let mut best = i64::MAX;
    let mut at = 0usize;
    for (i, &gi) in g.iter().enumerate() {
        s += gi as i64 - 1;
        if s < best {
            best = s;
            at = i + 1;
        }
    }
    if s != -1 {
        return Err(Error::Domain(format!("bridge ends at {s}, not −1")));
    }
    let n = g.len();
    let out: Vec<u32> = (0..n).map(|j| g[(at + j) % n]).collect();
    if !is_excursion(&out) {
        return Err(Error::Internal("rotated walk is not an excursion".into()));
    }
    Ok(out)
}

pub fn is_excursion(g: &[u32]) -> bool {
    let mut s = 0i64;
    for (i, &gi) in g.iter().enumerate() {
        s += gi as i64 - 1;
        if s < 0 && i + 1 != g.len() {
            return false;
        }
    }
    s == -1
}

/// Grandchild counts in lexicographic order, conditioned on n − 1 white vertices. Returns the
/// excursion and the number of attempts used.
pub fn sample_grandchild_bridge<R: Rng + ?Sized>(
    law: &GrandchildLaw,
    n: usize,
    rng: &mut R,
    max_attempts: u64,
) -> Result<(Vec<u32>, u64)> {
    if n == 2 {
        return Ok((vec![0], 1));
    }
    let sampler = BridgeSampler::new(law, n)?;
    for attempt in 1..=max_attempts {
        if let Some(seq) = sampler.attempt(rng) {
            return Ok((vervaat(&seq)?, attempt));
        }
    }
    Err(Error::Budget { attempts: max_attempts })
}

/// Black children of one white vertex with `g` grandchildren: their child counts in order.
pub fn sample_black_layer<R: Rng + ?Sized>(
    g: usize,
    off: &TwoTypeOffspring,
    law: &GrandchildLaw,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let z = off.z;
    let p = 1.0 - 1.0 / z;
    let mut left = g;
    let mut out = Vec::new();
    loop {
        let denom = law.pmf[left];
        let u = rng.random::<f64>();
        let mut acc = if left == 0 { (1.0 / z) / denom } else { 0.0 };
        if u < acc {
            return Ok(out);
        }
        let mut pick = None;
        let mut last_nonzero = None;
        for k in 0..=left.min(off.mu_bullet.len() - 1) {
            let w = p * off.mu_bullet[k] * law.pmf[left - k] / denom;
            if w > 0.0 {
                last_nonzero = Some(k);
            }
            acc += w;
            if u < acc {
                pick = Some(k);
                break;
            }
        }
        let k = match pick {
            Some(k) => k,
            None => {
                if u - acc > 1e-9 || last_nonzero.is_none() {
                    return Err(Error::Internal(format!(
                        "black-layer probabilities sum to {acc} at budget {left}"
                    )));
                }
                last_nonzero.unwrap()
            }
        };
        out.push(k);
        left -= k;
        if out.len() > 1 << 24 {
            return Err(Error::Internal("black layer does not terminate".into()));
        }
    }
}

/// Builds the mobile from an excursion of grandchild counts, white vertices in lexicographic
/// order. The black layer of the i-th white vertex uses stream i.
pub fn reconstruct_mobile(g: &[u32], off: &TwoTypeOffspring, law: &GrandchildLaw, streams: &Streams) -> Result<Mobile> {
    if !is_excursion(g) {
        return Err(Error::Domain("grandchild counts are not an excursion".into()));
    }
    let mut m = Mobile::new();
    let cap = g.len() * 2;
    m.color.reserve(cap);
    m.parent.reserve(cap);
    m.children.reserve(cap);
    let mut stack = vec![m.root];
    for (i, &gi) in g.iter().enumerate() {
        let w = stack.pop().ok_or_else(|| Error::Internal("slot stack exhausted".into()))?;
        let mut rng = streams.at(i as u64);
        let layer = sample_black_layer(gi as usize, off, law, &mut rng)?;
        let first_new = m.len() as u32;
        for &k in &layer {
            let b = m.add_child(w, Color::Black);
            for _ in 0..k {
                m.add_child(b, Color::White);
            }
        }
        let new_whites: Vec<u32> =
            (first_new..m.len() as u32).filter(|&v| m.color[v as usize] == Color::White).collect();
        stack.extend(new_whites.into_iter().rev());
    }
    if !stack.is_empty() {
        return Err(Error::Internal("unused white slots after reconstruction".into()));
    }
    Ok(m)
}

/// Uniform increments (s_1..s_{k+1}), s_i ≥ −1, summing to 0.
pub fn sample_bridge_increments<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<i64> {
    let mut pos: Vec<usize> = index_sample(rng, 2 * k + 1, k).into_vec();
    pos.sort_unstable();
    let mut out = Vec::with_capacity(k + 1);
    let mut prev: i64 = -1;
    for &p in &pos {
        out.push(p as i64 - prev - 1 - 1);
        prev = p as i64;
    }
    out.push(2 * k as i64 - prev - 1);
    out
}

/// Independent uniform bridge per black vertex (stream = black node id), root label 0.
pub fn sample_well_labeling(m: &Mobile, streams: &Streams) -> LabeledMobile {
    let mut label = vec![0i64; m.len()];
    for v in m.preorder() {
        if m.is_white(v) {
            continue;
        }
        let kids = &m.children[v as usize];
        if kids.is_empty() {
            continue;
        }
        let mut rng = streams.at(v as u64);
        let inc = sample_bridge_increments(kids.len(), &mut rng);
        let mut cur = label[m.parent[v as usize] as usize];
        for (j, &c) in kids.iter().enumerate() {
            cur += inc[j];
            label[c as usize] = cur;
        }
    }
    LabeledMobile { mobile: m.clone(), label }
}

pub fn encode_paths(lm: &LabeledMobile) -> PathEncoding {
    let m = &lm.mobile;
    let order = m.white_order();
    let mut s = Vec::with_capacity(order.len() + 1);
    s.push(0i64);
    for &w in &order {
        let g = m.grandchildren(w).count() as i64;
        s.push(s.last().unwrap() + g - 1);
    }
    let l = order.iter().map(|&w| lm.label[w as usize]).collect();
    PathEncoding { s, l, visit_order: order }
}

/// (2(s_q n)^{−1/α} S_{⌊(n−1)t⌋}, (s_q n)^{−1/(2α)} L_{⌊(n−1)t⌋}) on the grid.
pub fn rescale_paths(pe: &PathEncoding, w: &WeightSequence, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let alpha = w.alpha().ok_or_else(|| Error::Domain("rescaling needs alpha".into()))?;
    let s_q = w.s_q().ok_or_else(|| Error::Domain("rescaling needs s_q".into()))?;
    let n = pe.l.len() + 1;
    let base = s_q * n as f64;
    let fs = 2.0 * base.powf(-1.0 / alpha);
    let fl = base.powf(-1.0 / (2.0 * alpha));
    grid.iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(format!("grid point {t} outside [0,1]")));
            }
            let i = ((n - 1) as f64 * t).floor() as usize;
            let l = pe.l.get(i).copied().unwrap_or(0);
            Ok((fs * pe.s[i] as f64, fl * l as f64))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SampledMobile {
    pub labeled: LabeledMobile,
    pub attempts: u64,
}

/// Full pipeline for one sample: bridge, black layers, labels.
pub fn sample_labeled_mobile(
    off: &TwoTypeOffspring,
    law: &GrandchildLaw,
    n: usize,
    seed: u64,
    sample: u64,
    max_attempts: u64,
) -> Result<SampledMobile> {
    let mut rng = Streams::new(seed, sample, DOMAIN_BRIDGE).at(0);
    let (g, attempts) = sample_grandchild_bridge(law, n, &mut rng, max_attempts)?;
    let m = reconstruct_mobile(&g, off, law, &Streams::new(seed, sample, DOMAIN_BLACK))?;
    let labeled = sample_well_labeling(&m, &Streams::new(seed, sample, DOMAIN_LABEL));
    Ok(SampledMobile { labeled, attempts })
}

/// GW_q(T) = Π_white μ∘(k_w) Π_black μ•(k_b).
pub fn gw_weight(m: &Mobile, off: &TwoTypeOffspring) -> f64 {
    let mut w = 1.0;
    for v in 0..m.len() {
        let k = m.children[v].len();
        w *= match m.color[v] {
            Color::White => off.mu_circ(k),
            Color::Black => off.mu_bullet.get(k).copied().unwrap_or(0.0),
        };
    }
    w
}

/// Every mobile with `n_white` white vertices whose black vertices have child counts in
/// `support`, with at most `max_blacks` black children per white vertex.
pub fn enumerate_mobiles(n_white: usize, support: &[usize], max_blacks: usize) -> Vec<Mobile> {
    enum_white(n_white, support, max_blacks)
        .into_iter()
        .map(|c| Mobile::from_code(&c).expect("enumerated code is valid"))
        .collect()
}

fn enum_white(w: usize, support: &[usize], cap: usize) -> Vec<Vec<u32>> {
    if w == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (count, body) in enum_black_seq(w - 1, support, cap) {
        let mut c = vec![count as u32];
        c.extend(body);
        out.push(c);
    }
    out
}

fn enum_black_seq(t: usize, support: &[usize], cap: usize) -> Vec<(usize, Vec<u32>)> {
    let mut out = Vec::new();
    if t == 0 {
        out.push((0, Vec::new()));
    }
    if cap == 0 {
        return out;
    }
    for t1 in 0..=t {
        let firsts = enum_black(t1, support, cap);
        if firsts.is_empty() {
            continue;
        }
        let rests = enum_black_seq(t - t1, support, cap - 1);
        for f in &firsts {
            for (cnt, r) in &rests {
                let mut c = f.clone();
                c.extend(r);
                out.push((cnt + 1, c));
            }
        }
    }
    out
}

fn enum_black(t: usize, support: &[usize], cap: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for &k in support {
        if k > t || (k == 0 && t > 0) {
            continue;
        }
        for forest in enum_white_forest(t, k, support, cap) {
            let mut c = vec![k as u32];
            c.extend(forest);
            out.push(c);
        }
    }
    out
}

fn enum_white_forest(t: usize, k: usize, support: &[usize], cap: usize) -> Vec<Vec<u32>> {
    if k == 0 {
        return if t == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for t1 in 1..=t.saturating_sub(k - 1) {
        let firsts = enum_white(t1, support, cap);
        let rests = enum_white_forest(t - t1, k - 1, support, cap);
        for f in &firsts {
            for r in &rests {
                let mut c = f.clone();
                c.extend(r);
                out.push(c);
            }
        }
    }
    out
}

/// All well-labelings of a mobile with root label 0.
pub fn enumerate_labelings(m: &Mobile) -> Vec<LabeledMobile> {
    let blacks: Vec<u32> = m.preorder().into_iter().filter(|&v| !m.is_white(v) && !m.children[v as usize].is_empty()).collect();
    let choices: Vec<Vec<Vec<i64>>> = blacks.iter().map(|&b| all_bridges(m.children[b as usize].len())).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; blacks.len()];
    loop {
        let mut label = vec![0i64; m.len()];
        for (bi, &b) in blacks.iter().enumerate() {
            let inc = &choices[bi][idx[bi]];
            let mut cur = label[m.parent[b as usize] as usize];
            for (j, &c) in m.children[b as usize].iter().enumerate() {
                cur += inc[j];
                label[c as usize] = cur;
            }
        }
        out.push(LabeledMobile { mobile: m.clone(), label });
        let mut i = 0;
        loop {
            if i == idx.len() {
                return out;
            }
            idx[i] += 1;
            if idx[i] < choices[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Every (s_1..s_{k+1}) with s_i ≥ −1 and Σ s_i = 0.
pub fn all_bridges(k: usize) -> Vec<Vec<i64>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if parts == 1 {
            cur.push(left as i64 - 1);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for t in 0..=left {
            cur.push(t as i64 - 1);
            rec(left - t, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k + 1, k + 1, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, DOMAIN_MISC};
    use crate::weights::{grandchild_law, offspring_laws, WeightSequence};
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::HashMap;

    fn chi2_pvalue(observed: &[u64], expected_prob: &[f64]) -> f64 {
        let n: u64 = observed.iter().sum();
        let mut stat = 0.0;
        let mut df = 0usize;
        for (o, p) in observed.iter().zip(expected_prob) {
            let e = p * n as f64;
            if e > 0.0 {
                stat += (*o as f64 - e).powi(2) / e;
                df += 1;
            } else {
                assert_eq!(*o, 0, "observed an outcome of probability zero");
            }
        }
        1.0 - ChiSquared::new((df - 1) as f64).unwrap().cdf(stat)
    }

    fn toy() -> (TwoTypeOffspring, GrandchildLaw) {
        let w = WeightSequence::from_black_law(2.0, &[0.25, 0.5, 0.25]).unwrap();
        let off = offspring_laws(&w, 64).unwrap();
        let law = grandchild_law(&off, 64).unwrap();
        (off, law)
    }

    #[test]
    fn n2_is_forced() {
        let law = GrandchildLaw::from_pmf(vec![0.5, 0.5]);
        let (g, _) = sample_grandchild_bridge(&law, 2, &mut stream(1, 0, DOMAIN_MISC, 0), 10).unwrap();
        assert_eq!(g, vec![0]);
    }

    #[test]
    fn vervaat_handles_every_rotation() {
        let base = vec![2u32, 0, 2, 0, 0];
        for r in 0..base.len() {
            let rot: Vec<u32> = (0..5).map(|j| base[(r + j) % 5]).collect();
            let e = vervaat(&rot).unwrap();
            assert!(is_excursion(&e));
        }
    }

    #[test]
    fn toy_bridge_matches_exact_excursion_law() {
        // support {0,1,2}; the excursions of length 3 are (1,1,0) and (2,0,0)
        let p = [0.5, 0.3, 0.2];
        let law = GrandchildLaw::from_pmf(p.to_vec());
        let w110 = p[1] * p[1] * p[0];
        let w200 = p[2] * p[0] * p[0];
        let expected = [w110 / (w110 + w200), w200 / (w110 + w200)];
        let mut rng = stream(11, 0, DOMAIN_MISC, 0);
        let mut counts = [0u64; 2];
        for _ in 0..100_000 {
            let (g, _) = sample_grandchild_bridge(&law, 4, &mut rng, 1000).unwrap();
            match g.as_slice() {
                [1, 1, 0] => counts[0] += 1,
                [2, 0, 0] => counts[1] += 1,
                other => panic!("unexpected excursion {other:?}"),
            }
        }
        assert!(chi2_pvalue(&counts, &expected) > 0.001, "{counts:?}");
    }

    #[test]
    fn black_layer_at_zero_budget_is_geometric() {
        let (off, law) = toy();
        let mut rng = stream(3, 0, DOMAIN_MISC, 0);
        let r = (1.0 - 1.0 / off.z) * off.mu_bullet[0];
        let mut counts = vec![0u64; 12];
        for _ in 0..100_000 {
            let layer = sample_black_layer(0, &off, &law, &mut rng).unwrap();
            assert!(layer.iter().all(|&k| k == 0));
            counts[layer.len().min(11)] += 1;
        }
        let mut probs: Vec<f64> = (0..11).map(|b| (1.0 - r) * r.powi(b)).collect();
        probs.push(r.powi(11));
        assert!(chi2_pvalue(&counts, &probs) > 0.001);
    }

    #[test]
    fn black_layer_matches_composition_enumeration() {
        let (off, law) = toy();
        let g = 3usize;
        let z = off.z;
        // all (k_1..k_B) with Σ k = 3, B ≤ 14; weight z^{-1}(1−z^{-1})^B Π μ•(k_i)
        let mut exact: HashMap<Vec<usize>, f64> = HashMap::new();
        fn rec(left: usize, cur: &mut Vec<usize>, out: &mut HashMap<Vec<usize>, f64>, off: &TwoTypeOffspring) {
            if cur.len() > 14 {
                return;
            }
            if left == 0 {
                let z = off.z;
                let w = (1.0 / z)
                    * (1.0 - 1.0 / z).powi(cur.len() as i32)
                    * cur.iter().map(|&k| off.mu_bullet[k]).product::<f64>();
                out.insert(cur.clone(), w);
            }
            for k in 0..=left.min(2) {
                cur.push(k);
                rec(left - k, cur, out, off);
                cur.pop();
            }
        }
        rec(g, &mut Vec::new(), &mut exact, &off);
        let total: f64 = exact.values().sum();
        assert!((total - law.pmf[g]).abs() < 1e-6 * law.pmf[g]);
        let _ = z;
        let mut keys: Vec<Vec<usize>> = exact.keys().filter(|k| k.len() <= 7).cloned().collect();
        keys.sort();
        let mut probs: Vec<f64> = keys.iter().map(|k| exact[k] / total).collect();
        let mut counts = vec![0u64; keys.len() + 1];
        let index: HashMap<&Vec<usize>, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let mut rng = stream(5, 0, DOMAIN_MISC, 0);
        for _ in 0..100_000 {
            let layer = sample_black_layer(g, &off, &law, &mut rng).unwrap();
            assert_eq!(layer.iter().sum::<usize>(), g);
            match index.get(&layer) {
                Some(&i) => counts[i] += 1,
                None => counts[keys.len()] += 1,
            }
        }
        probs.push(1.0 - probs.iter().sum::<f64>());
        assert!(chi2_pvalue(&counts, &probs) > 0.001);
    }

    #[test]
    fn conditioned_mobiles_match_enumeration() {
        // black law on {1,2}: the set of mobiles with n − 1 whites is finite
        let w = WeightSequence::from_black_law(5.0 / 3.0, &[0.0, 0.5, 0.5]).unwrap();
        let off = offspring_laws(&w, 16).unwrap();
        let law = grandchild_law(&off, 16).unwrap();
        for n in [4usize, 6] {
            let all = enumerate_mobiles(n - 1, &[1, 2], n);
            let weights: Vec<f64> = all.iter().map(|m| gw_weight(m, &off)).collect();
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let index: HashMap<Vec<u32>, usize> = all.iter().enumerate().map(|(i, m)| (m.code(), i)).collect();
            let mut counts = vec![0u64; all.len()];
            for s in 0..100_000u64 {
                let mut rng = Streams::new(99, s, DOMAIN_BRIDGE).at(0);
                let (g, _) = sample_grandchild_bridge(&law, n, &mut rng, 10_000).unwrap();
                let m = reconstruct_mobile(&g, &off, &law, &Streams::new(99, s, DOMAIN_BLACK)).unwrap();
                assert_eq!(m.n_white(), n - 1);
                counts[index[&m.code()]] += 1;
            }
            let p = chi2_pvalue(&counts, &probs);
            assert!(p > 0.001, "n = {n}: p = {p}");
        }
    }

    #[test]
    fn reconstruction_white_count() {
        let (off, law) = toy();
        for s in 0..50u64 {
            let sm = sample_labeled_mobile(&off, &law, 40, 7, s, 1_000_000).unwrap();
            assert_eq!(sm.labeled.mobile.n_white(), 39);
            sm.labeled.validate().unwrap();
        }
    }

    #[test]
    fn single_black_child_labelings_are_uniform() {
        let mut m = Mobile::new();
        let b = m.add_child(0, Color::Black);
        m.add_child(b, Color::White);
        let mut counts = [0u64; 3];
        let streams = Streams::new(5, 0, DOMAIN_LABEL);
        for i in 0..100_000u64 {
            let inc = sample_bridge_increments(1, &mut streams.at(i));
            counts[(inc[0] + 1) as usize] += 1;
        }
        assert!(chi2_pvalue(&counts, &[1.0 / 3.0; 3]) > 0.001, "{counts:?}");
        let _ = m;
    }

    #[test]
    fn bridge_counts_are_central_binomials() {
        for k in 0..6usize {
            let expect = crate::special::binomial(2 * k as u64 + 1, k as u64) as usize;
            assert_eq!(all_bridges(k).len(), expect);
        }
    }

    #[test]
    fn black_leaf_adds_no_label() {
        let mut m = Mobile::new();
        m.add_child(0, Color::Black);
        let lm = sample_well_labeling(&m, &Streams::new(0, 0, DOMAIN_LABEL));
        assert_eq!(lm.label, vec![0, 0]);
    }

    #[test]
    fn single_white_vertex_encoding() {
        let lm = LabeledMobile { mobile: Mobile::new(), label: vec![0] };
        let pe = encode_paths(&lm);
        assert_eq!(pe.s, vec![0, -1]);
        assert_eq!(pe.l, vec![0]);
    }

    #[test]
    fn hand_fixture_encoding() {
        // root w0 with blacks b(w1, w2) and b(), w1 with black b(w3); labels 0, 1, 0, 0
        let mut m = Mobile::new();
        let b1 = m.add_child(0, Color::Black);
        let w1 = m.add_child(b1, Color::White);
        let w2 = m.add_child(b1, Color::White);
        m.add_child(0, Color::Black);
        let b3 = m.add_child(w1, Color::Black);
        let w3 = m.add_child(b3, Color::White);
        let mut label = vec![0i64; m.len()];
        label[w1 as usize] = 1;
        label[w2 as usize] = 0;
        label[w3 as usize] = 0;
        let lm = LabeledMobile { mobile: m, label };
        lm.validate().unwrap();
        let pe = encode_paths(&lm);
        // lexicographic order w0, w1, w3, w2 with 2, 1, 0, 0 grandchildren
        assert_eq!(pe.visit_order, vec![0, w1, w3, w2]);
        assert_eq!(pe.s, vec![0, 1, 1, 0, -1]);
        assert_eq!(pe.l, vec![0, 1, 0, 0]);
        let grand: i64 = pe.s.windows(2).map(|w| w[1] - w[0] + 1).sum();
        assert_eq!(grand, 3);
    }

    #[test]
    fn code_round_trip() {
        for m in enumerate_mobiles(4, &[0, 1, 2], 2) {
            m.validate().unwrap();
            assert_eq!(Mobile::from_code(&m.code()).unwrap().code(), m.code());
        }
    }

    #[test]
    fn rescale_endpoints() {
        let w = WeightSequence::kazakov(1.5).unwrap();
        let lm = LabeledMobile { mobile: Mobile::new(), label: vec![0] };
        let pe = encode_paths(&lm);
        let r = rescale_paths(&pe, &w, &[0.0, 1.0]).unwrap();
        assert_eq!(r[0], (0.0, 0.0));
        let expect = -2.0 * (w.s_q().unwrap() * 2.0).powf(-1.0 / 1.5);
        assert!((r[1].0 - expect).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic() {
        let (off, law) = toy();
        let a = sample_labeled_mobile(&off, &law, 30, 42, 3, 1_000_000).unwrap();
        let b = sample_labeled_mobile(&off, &law, 30, 42, 3, 1_000_000).unwrap();
        assert_eq!(a.labeled, b.labeled);
    }

    #[test]
    fn text_and_csv_exports() {
        let lm = LabeledMobile { mobile: Mobile::new(), label: vec![0] };
        assert_eq!(lm.mobile.to_text(Some(&lm.label)), "0 white - 0\n");
        assert_eq!(encode_paths(&lm).to_csv(), "i,S,L\n0,0,0\n1,-1,0\n");
    }

    proptest::proptest! {
        #[test]
        fn sampled_labelings_are_well_labeled(seed in 0u64..1000) {
            let (off, law) = toy();
            let sm = sample_labeled_mobile(&off, &law, 25, seed, 0, 1_000_000).unwrap();
            proptest::prop_assert!(sm.labeled.is_well_labeled());
            let pe = encode_paths(&sm.labeled);
            proptest::prop_assert_eq!(*pe.s.last().unwrap(), -1);
            proptest::prop_assert!(pe.s[..pe.s.len() - 1].iter().all(|&x| x >= 0));
        }
    }
}
