//! Non-generic weight sequences, their generating function, and the offspring laws of the
//! associated two-type branching process.
//!
//! Internally g_q(x) = 1 + Σ_k b_k (x/R)^k where R is the radius of convergence (or 1 for
//! finite tables) and b_k = binom(2k−1, k−1) q_k R^k.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::special::{gamma, ln_binomial};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Kazakov,
    TunedBase,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Kazakov => "kazakov",
            Family::TunedBase => "tuned",
            Family::Custom => "custom",
        };
        f.write_str(s)
    }
}

pub type BaseSequence = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    Kazakov,
    /// b_k = factor · binom(2k−1,k−1) 4^{−k} · base(k)
    Tuned { base: BaseSequence, factor: f64 },
    Table,
}

/// Coefficients kept in memory for series work; Richardson levels stay below this.
const STORED_COEFS: usize = 1 << 16;
const RICH_K0: usize = 256;
const RICH_LEVELS: usize = 7;
/// Truncated mass of μ• above which the offspring table raises its warning flag.
pub const TRUNCATION_WARN: f64 = 1e-2;

#[derive(Clone)]
pub struct WeightSequence {
    family: Family,
    alpha: Option<f64>,
    scale: f64,
    finite: bool,
    coef: Arc<Vec<f64>>,
    source: Source,
    z_q: f64,
    s_q: Option<f64>,
    k_max: usize,
}

impl fmt::Debug for WeightSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightSequence")
            .field("family", &self.family)
            .field("alpha", &self.alpha)
            .field("z_q", &self.z_q)
            .field("s_q", &self.s_q)
            .field("radius", &self.radius())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
}

fn kazakov_coefs(alpha: f64, n: usize) -> Vec<f64> {
    // b_k = Γ(k−α)/(Γ(−α) k!), the coefficients of (1−y)^α, with the k = 1 term removed
    let mut b = vec![0.0; n.max(3)];
    b[2] = alpha * (alpha - 1.0) / 2.0;
    for k in 2..n.saturating_sub(1) {
        b[k + 1] = b[k] * (k as f64 - alpha) / (k as f64 + 1.0);
    }
    b.truncate(n.max(1));
    b
}

fn tuned_coefs(base: &BaseSequence, factor: f64, n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    let mut c = 0.25; // binom(2k−1,k−1)/4^k at k = 1
    for (k, slot) in b.iter_mut().enumerate().skip(1) {
        *slot = factor * c * base(k);
        c *= (2 * k + 1) as f64 / (2 * (k + 1)) as f64;
    }
    b
}

/// Partial sums of a power-law tailed positive series at K0·2^j, extrapolated by eliminating
/// the tail exponents (p−1), p, p+1, ….
fn richardson(terms: &dyn Fn(usize) -> f64, p: f64, k0: usize, levels: usize) -> Result<SeriesValue> {
    let kmax = k0 << levels;
    let t1 = terms(kmax / 2);
    let t2 = terms(kmax);
    if t1 > 0.0 && t2 > 0.0 {
        let p_est = (t1 / t2).log2();
        if p_est <= 1.02 {
            return Err(Error::Numeric(format!(
                "series diverges at the radius of convergence (term decay exponent {p_est:.3})"
            )));
        }
    }
    let mut sums = Vec::with_capacity(levels + 1);
    let mut acc = 0.0;
    let mut k = 1;
    for j in 0..=levels {
        let upto = k0 << j;
        while k <= upto {
            acc += terms(k);
            k += 1;
        }
        sums.push(acc);
    }
    if t2 == 0.0 {
        return Ok(SeriesValue { value: acc, tail_bound: 0.0 });
    }
    let mut table = sums;
    let mut last_gap = f64::INFINITY;
    for i in 0..levels {
        let e = p - 1.0 + i as f64;
        let f = 2f64.powf(e);
        let next: Vec<f64> = (0..table.len() - 1).map(|j| (f * table[j + 1] - table[j]) / (f - 1.0)).collect();
        last_gap = (next[next.len() - 1] - table[table.len() - 1]).abs();
        table = next;
        if table.len() == 1 {
            break;
        }
    }
    Ok(SeriesValue { value: table[0], tail_bound: last_gap })
}

impl WeightSequence {
    /// q_k = 2(4α)^{−k} B(1/2,k)/B(−α,k) for k ≥ 2, q_1 = 0.
    pub fn kazakov(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::Domain(format!("alpha = {alpha} not in (1,2)")));
        }
        let coef = kazakov_coefs(alpha, STORED_COEFS);
        let mut w = WeightSequence {
            family: Family::Kazakov,
            alpha: Some(alpha),
            scale: alpha,
            finite: false,
            coef: Arc::new(coef),
            source: Source::Kazakov,
            z_q: f64::NAN,
            s_q: Some(2f64.powf(alpha)),
            k_max: STORED_COEFS - 1,
        };
        w.z_q = solve_zq(&w)?;
        Ok(w)
    }

    /// Tunes a base sequence q∘_k ~ k^{−α−1/2} into q_k = C(β/4)^{k−1} q∘_k.
    pub fn tuned(base: BaseSequence, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::Domain(format!("alpha = {alpha} not in (1,2)")));
        }
        let a = tuned_coefs(&base, 1.0, STORED_COEFS + 1);
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::Domain("base sequence is identically zero".into()));
        }
        if a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("base sequence must be finite and nonnegative".into()));
        }
        let at = |k: usize| a[k];
        let kat = |k: usize| k as f64 * a[k];
        let s0 = richardson(&at, alpha + 1.0, RICH_K0, RICH_LEVELS)?;
        let s1 = richardson(&kat, alpha, RICH_K0, RICH_LEVELS)?;
        // g∘(1/4) = 1 + s0, g∘'(1/4) = 4 s1
        let c = 1.0 / (4.0 * s1.value);
        let beta = 1.0 - s0.value / s1.value;
        if !(beta > 0.0) {
            return Err(Error::NotAdmissible(format!("tuning gives beta = {beta}")));
        }
        let factor = 1.0 / (s1.value * beta);
        let coef: Vec<f64> = a[..STORED_COEFS].iter().map(|v| v * factor).collect();
        let s_q = 2f64.powf(alpha + 1.0) * c * gamma(-alpha) / (beta * std::f64::consts::PI.sqrt());
        let mut w = WeightSequence {
            family: Family::TunedBase,
            alpha: Some(alpha),
            scale: 1.0 / beta,
            finite: false,
            coef: Arc::new(coef),
            source: Source::Tuned { base, factor },
            z_q: f64::NAN,
            s_q: Some(s_q),
            k_max: STORED_COEFS - 1,
        };
        w.z_q = solve_zq(&w)?;
        Ok(w)
    }

    /// Finite weight table: `q[k]` is q_k (index 0 ignored).
    pub fn custom(q: &[f64], alpha: Option<f64>, s_q: Option<f64>) -> Result<Self> {
        if q.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        if q.iter().skip(1).all(|&v| v == 0.0) {
            return Err(Error::Domain("all weights vanish".into()));
        }
        let mut coef = vec![0.0; q.len().max(2)];
        for k in 1..q.len() {
            coef[k] = q[k] * ln_binomial(2 * k as u64 - 1, k as u64 - 1).exp();
        }
        let mut w = WeightSequence {
            family: Family::Custom,
            alpha,
            scale: 1.0,
            finite: true,
            coef: Arc::new(coef),
            source: Source::Table,
            z_q: f64::NAN,
            s_q,
            k_max: q.len().saturating_sub(1),
        };
        w.z_q = solve_zq(&w)?;
        Ok(w)
    }

    /// Critical sequence whose black offspring law is `mu_bullet` at the given z:
    /// q_{k+1} = μ•(k)(z−1)/(z^{k+1} binom(2k+1,k)). Needs Σ k μ•(k) = 1/(z−1).
    pub fn from_black_law(z: f64, mu_bullet: &[f64]) -> Result<Self> {
        if !(z > 1.0) {
            return Err(Error::Domain(format!("z = {z} must exceed 1")));
        }
        let total: f64 = mu_bullet.iter().sum();
        let mean: f64 = mu_bullet.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        if (total - 1.0).abs() > 1e-12 || (mean * (z - 1.0) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("black law must be a probability with mean 1/(z−1)".into()));
        }
        let mut q = vec![0.0; mu_bullet.len() + 1];
        for (k, &p) in mu_bullet.iter().enumerate() {
            q[k + 1] = p * (z - 1.0) / (z.powi(k as i32 + 1) * ln_binomial(2 * k as u64 + 1, k as u64).exp());
        }
        let mut w = Self::custom(&q, None, None)?;
        if (w.z_q - z).abs() > 1e-7 * z {
            return Err(Error::Internal(format!("fixed point {} differs from requested z {}", w.z_q, z)));
        }
        w.z_q = z;
        Ok(w)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn z_q(&self) -> f64 {
        self.z_q
    }

    pub fn s_q(&self) -> Option<f64> {
        self.s_q
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Radius of convergence of g_q (infinite for finite tables).
    pub fn radius(&self) -> f64 {
        if self.finite {
            f64::INFINITY
        } else {
            self.scale
        }
    }

    /// Normalized coefficients b_0..b_{n−1}, regenerated from the source when needed.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        if n <= self.coef.len() {
            return self.coef[..n].to_vec();
        }
        match &self.source {
            Source::Kazakov => kazakov_coefs(self.alpha.unwrap(), n),
            Source::Tuned { base, factor } => tuned_coefs(base, *factor, n),
            Source::Table => {
                let mut v = self.coef.to_vec();
                v.resize(n, 0.0);
                v
            }
        }
    }

    /// q_k itself (underflows to 0 for large k; see `ln_q`).
    pub fn q(&self, k: usize) -> f64 {
        self.ln_q(k).exp()
    }

    /// ln q_k, or −∞ when q_k = 0.
    pub fn ln_q(&self, k: usize) -> f64 {
        if k == 0 {
            return f64::NEG_INFINITY;
        }
        let b = if k < self.coef.len() {
            self.coef[k]
        } else if self.finite {
            0.0
        } else {
            self.coefficients(k + 1)[k]
        };
        if b == 0.0 {
            return f64::NEG_INFINITY;
        }
        b.ln() - k as f64 * self.scale.ln() - ln_binomial(2 * k as u64 - 1, k as u64 - 1)
    }

    fn tail_exponent(&self, deriv: bool) -> f64 {
        let a = self.alpha.unwrap_or(1.5);
        if deriv {
            a
        } else {
            a + 1.0
        }
    }

    fn normalized(&self, y: f64, deriv: bool) -> Result<SeriesValue> {
        let b = &self.coef;
        if !(y >= 0.0) {
            return Err(Error::Domain(format!("evaluation point {y} is negative")));
        }
        if self.finite {
            let mut acc = 0.0;
            for k in (1..b.len()).rev() {
                let c = if deriv { k as f64 * b[k] } else { b[k] };
                acc = acc * y + c;
            }
            let value = if deriv { acc } else { 1.0 + acc * y };
            return Ok(SeriesValue { value, tail_bound: 0.0 });
        }
        if y > 1.0 + 1e-12 {
            return Err(Error::Numeric(format!(
                "x/R = {y} lies beyond the radius of convergence R = {}",
                self.scale
            )));
        }
        if y >= 1.0 - 1e-13 {
            let terms = |k: usize| if deriv { k as f64 * b[k] } else { b[k] };
            let s = richardson(&terms, self.tail_exponent(deriv), RICH_K0, RICH_LEVELS)?;
            let value = if deriv { s.value } else { 1.0 + s.value };
            return Ok(SeriesValue { value, tail_bound: s.tail_bound });
        }
        let mut acc = 0.0;
        let mut pw = 1.0;
        let mut last = 0.0;
        let ratio = y / (1.0 - y);
        for k in 1..b.len() {
            let t = if deriv {
                let t = k as f64 * b[k] * pw;
                pw *= y;
                t
            } else {
                pw *= y;
                b[k] * pw
            };
            acc += t;
            last = t;
            if k > 8 && t * ratio <= 1e-17 * acc.abs().max(1e-300) {
                break;
            }
        }
        let value = if deriv { acc } else { 1.0 + acc };
        Ok(SeriesValue { value, tail_bound: last * ratio })
    }

    /// g_q(x) = 1 + Σ binom(2k−1,k−1) q_k x^k with a tail bound.
    pub fn eval_gq(&self, x: f64) -> Result<SeriesValue> {
        self.normalized(x / self.scale, false)
    }

    pub fn eval_gq_prime(&self, x: f64) -> Result<SeriesValue> {
        let s = self.normalized(x / self.scale, true)?;
        Ok(SeriesValue { value: s.value / self.scale, tail_bound: s.tail_bound / self.scale })
    }

    pub fn criticality_residual(&self) -> Result<f64> {
        Ok(self.eval_gq_prime(self.z_q)?.value - 1.0)
    }

    /// Structured text with the keys family, alpha, k_max, z_q, s_q, truncation_mass.
    pub fn to_text(&self, truncation_mass: f64) -> String {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_else(|| "none".into());
        format!(
            "family={}\nalpha={}\nk_max={}\nz_q={:.17e}\ns_q={}\ntruncation_mass={:.6e}\n",
            self.family,
            fmt_opt(self.alpha),
            self.k_max,
            self.z_q,
            fmt_opt(self.s_q),
            truncation_mass
        )
    }
}

pub fn kazakov_weights(alpha: f64) -> Result<WeightSequence> {
    WeightSequence::kazakov(alpha)
}

pub fn tune_base_sequence(base: BaseSequence, alpha: f64) -> Result<WeightSequence> {
    WeightSequence::tuned(base, alpha)
}

pub fn eval_gq(w: &WeightSequence, x: f64) -> Result<SeriesValue> {
    w.eval_gq(x)
}

/// Smallest fixed point of g_q. When g_q' ≤ 1 up to the radius the fixed point is looked for at
/// the radius itself, where the derivative can only be approached, not bracketed.
pub fn solve_zq(w: &WeightSequence) -> Result<f64> {
    let gp = |x: f64| w.eval_gq_prime(x).map(|v| v.value);
    let g = |x: f64| w.eval_gq(x).map(|v| v.value);
    let r = w.radius();
    let x1 = if r.is_finite() {
        if gp(r)? <= 1.0 + 1e-9 {
            r
        } else {
            bisect_increasing(&gp, 0.0, r, 1.0)?
        }
    } else {
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        if gp(lo)? > 1.0 {
            lo = 0.0;
            hi = 1.0;
        } else {
            while gp(hi)? <= 1.0 {
                lo = hi;
                hi *= 2.0;
                if hi > 2f64.powi(40) {
                    break;
                }
            }
        }
        if gp(hi)? <= 1.0 {
            hi
        } else if gp(lo)? > 1.0 {
            lo
        } else {
            bisect_increasing(&gp, lo, hi, 1.0)?
        }
    };
    let m = g(x1)? - x1;
    let tol = 1e-9 * x1.max(1.0);
    if m > tol {
        return Err(Error::NotAdmissible(format!("g_q(x) > x for every x (min gap {m:.3e} at x = {x1})")));
    }
    if m.abs() <= tol {
        return Ok(x1);
    }
    // g − x is nonincreasing on [0, x1], positive at 0 and negative at x1
    let (mut lo, mut hi) = (0.0f64, x1);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn bisect_increasing(f: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, target: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoTypeOffspring {
    pub z: f64,
    /// μ∘(k) = z^{−1}(1−z^{−1})^k, stored through its parameter
    pub p_circ: f64,
    pub mu_bullet: Vec<f64>,
    pub mu_bullet_hat: Vec<f64>,
    pub m_circ: f64,
    pub m_bullet: f64,
    pub mass: f64,
    pub truncation_mass: f64,
    pub truncation_warning: bool,
}

impl TwoTypeOffspring {
    pub fn mu_circ(&self, k: usize) -> f64 {
        (1.0 / self.z) * (1.0 - 1.0 / self.z).powi(k as i32)
    }

    pub fn k_max(&self) -> usize {
        self.mu_bullet.len() - 1
    }
}

pub fn offspring_laws(w: &WeightSequence, k_max: usize) -> Result<TwoTypeOffspring> {
    if k_max < 1 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    let z = w.z_q();
    let b = w.coefficients(k_max + 2);
    let rho = z / w.scale;
    let ln_rho = rho.ln();
    let mut mu = vec![0.0; k_max + 1];
    for k in 0..=k_max {
        let bk = b[k + 1];
        mu[k] = if bk == 0.0 { 0.0 } else { (bk.ln() + (k + 1) as f64 * ln_rho).exp() / (z - 1.0) };
    }
    let g = w.eval_gq(z)?.value;
    let gp = w.eval_gq_prime(z)?.value;
    let mass = (g - 1.0) / (z - 1.0);
    let m_bullet = (z * gp - g + 1.0) / (z - 1.0);
    let partial: f64 = mu.iter().sum();
    let truncation_mass = (mass - partial).max(0.0);
    let mu_hat: Vec<f64> = mu.iter().enumerate().map(|(k, p)| k as f64 * p / m_bullet).collect();
    Ok(TwoTypeOffspring {
        z,
        p_circ: 1.0 / z,
        mu_bullet: mu,
        mu_bullet_hat: mu_hat,
        m_circ: z - 1.0,
        m_bullet,
        mass,
        truncation_mass,
        truncation_warning: truncation_mass > TRUNCATION_WARN,
    })
}

/// Law μ∘• of the number of grandchildren of a white vertex, on 0..=G.
#[derive(Debug, Clone)]
pub struct GrandchildLaw {
    pub pmf: Vec<f64>,
}

impl GrandchildLaw {
    pub fn from_pmf(pmf: Vec<f64>) -> Self {
        GrandchildLaw { pmf }
    }

    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    /// μ∘•((k,∞)) computed as one minus the head sum.
    pub fn tail(&self, k: usize) -> f64 {
        let head: f64 = self.pmf[..=k.min(self.pmf.len() - 1)].iter().sum();
        1.0 - head
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let i = c * 8;
        for j in 0..8 {
            acc[j] += a[i + j] * b[i + j];
        }
    }
    let mut s = 0.0;
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s + ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Forward solution of μ∘•(g) = z^{−1}1{g=0} + (1−z^{−1}) Σ_{j≤g} μ•(j) μ∘•(g−j).
pub fn grandchild_law(off: &TwoTypeOffspring, g_max: usize) -> Result<GrandchildLaw> {
    if off.mu_bullet.len() < g_max + 1 {
        return Err(Error::Domain(format!(
            "μ• known up to {} but the grandchild law needs {}",
            off.mu_bullet.len() - 1,
            g_max
        )));
    }
    let z = off.z;
    let p = 1.0 - 1.0 / z;
    let mu = &off.mu_bullet;
    let denom = 1.0 - p * mu[0];
    // rev[g_max − i] = μ∘•(i) keeps the convolution a contiguous dot product
    let mut rev = vec![0.0; g_max + 1];
    let mut pmf = vec![0.0; g_max + 1];
    for g in 0..=g_max {
        let head = if g == 0 { 1.0 / z } else { 0.0 };
        let conv = if g == 0 { 0.0 } else { dot(&mu[1..=g], &rev[g_max - g + 1..=g_max]) };
        let v = (head + p * conv) / denom;
        pmf[g] = v;
        rev[g_max - g] = v;
    }
    Ok(GrandchildLaw { pmf })
}

/// Largest relative residual of the renewal identity over 0..=G.
pub fn renewal_residual(off: &TwoTypeOffspring, law: &GrandchildLaw) -> f64 {
    let z = off.z;
    let p = 1.0 - 1.0 / z;
    let mut worst = 0.0f64;
    for g in 0..law.pmf.len() {
        let mut s = 0.0;
        for j in 0..=g {
            s += off.mu_bullet[j] * law.pmf[g - j];
        }
        let rhs = if g == 0 { 1.0 / z } else { 0.0 } + p * s;
        worst = worst.max((law.pmf[g] - rhs).abs());
    }
    worst
}
