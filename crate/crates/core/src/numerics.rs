//! Bessel functions, stable densities and the exact analytic identities used by the verifier.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{Streams, DOMAIN_MISC};
use crate::special::{erfc, gamma, integrate, integrate_budget, ln_gamma, QuadratureResult};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Below this argument the power series is used.
const SERIES_LIMIT: f64 = 30.0;

/// Hankel coefficients (−1)^k a_k(ν) of the large-argument expansion, up to the smallest term
/// at argument x. Returns None when the terms never drop below the target.
fn hankel_terms(nu: f64, x: f64) -> Option<Vec<f64>> {
    let mu = 4.0 * nu * nu;
    let mut terms = vec![1.0];
    let mut t = 1.0f64;
    for k in 1..400 {
        let odd = (2 * k - 1) as f64;
        let next = -t * (mu - odd * odd) / (8.0 * k as f64 * x);
        if next.abs() >= t.abs() && k > 1 {
            break;
        }
        t = next;
        terms.push(t);
        if t.abs() < 1e-17 {
            return Some(terms);
        }
    }
    (t.abs() < 1e-12).then_some(terms)
}

/// ln of e^{−x} I_ν(x) by the power series, summed in log space so that large x does not overflow.
fn ln_scaled_series(nu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut lt = nu * (0.5 * x).ln() - ln_gamma(nu + 1.0) - x;
    let mut logs = vec![lt];
    let mut k = 0.0f64;
    let mut best = lt;
    loop {
        lt += q.ln() - ((k + 1.0) * (nu + k + 1.0)).ln();
        k += 1.0;
        logs.push(lt);
        best = best.max(lt);
        if lt < best - 40.0 && (k + 1.0) * (nu + k + 1.0) > q {
            break;
        }
    }
    best + logs.iter().map(|l| (l - best).exp()).sum::<f64>().ln()
}

/// e^{−x} I_ν(x).
pub fn bessel_i_scaled(nu: f64, x: f64) -> f64 {
    assert!(nu >= 0.0 && x >= 0.0, "bessel_i_scaled needs ν ≥ 0 and x ≥ 0");
    if x == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if x > SERIES_LIMIT {
        if let Some(terms) = hankel_terms(nu, x) {
            return terms.iter().sum::<f64>() / (SQRT_2PI * x.sqrt());
        }
    }
    ln_scaled_series(nu, x).exp()
}

/// e^{−s} I_ν(s) − (1 − a_1/s)/√(2πs) with a_1 = (4ν²−1)/8, computed without cancellation for
/// large s by dropping the first two Hankel terms.
pub fn bessel_remainder(nu: f64, s: f64) -> f64 {
    let a1 = (4.0 * nu * nu - 1.0) / 8.0;
    if s > SERIES_LIMIT {
        if let Some(terms) = hankel_terms(nu, s) {
            return terms[2.min(terms.len())..].iter().sum::<f64>() / (SQRT_2PI * s.sqrt());
        }
    }
    bessel_i_scaled(nu, s) - (1.0 - a1 / s) / (SQRT_2PI * s.sqrt())
}

fn add(a: QuadratureResult, b: QuadratureResult) -> QuadratureResult {
    QuadratureResult {
        value: a.value + b.value,
        abs_error_estimate: a.abs_error_estimate + b.abs_error_estimate,
        evaluations: a.evaluations + b.evaluations,
    }
}

/// ∫_0^∞ s^{α−1/2} [e^{−s} I_ν(s) − (1 − c/s)/√(2πs)] ds with ν = √(8c+1)/2.
pub fn two_point_residual(alpha: f64, c: f64) -> Result<QuadratureResult> {
    if c <= 0.0 {
        return Err(Error::Domain(format!("c = {c} must be positive")));
    }
    two_point_residual_with_index(alpha, c, (8.0 * c + 1.0).sqrt() / 2.0)
}

/// Same integral with the Bessel index given separately. The tail only converges when
/// c = (4ν²−1)/8; otherwise the integrand decays like s^{α−2} and an error is returned.
pub fn two_point_residual_with_index(alpha: f64, c: f64, nu: f64) -> Result<QuadratureResult> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (1,2)")));
    }
    if nu < 0.5 {
        return Err(Error::Domain(format!("index {nu} below 1/2")));
    }
    let a1 = (4.0 * nu * nu - 1.0) / 8.0;
    if (c - a1).abs() > 1e-12 * a1.max(1.0) {
        return Err(Error::Numeric(format!("tail diverges: c = {c} but (4ν²−1)/8 = {a1}")));
    }
    let tol = 1e-12;
    // [0,1]: the asymptote is integrated in closed form
    let head = integrate(|s| s.powf(alpha - 0.5) * bessel_i_scaled(nu, s), 0.0, 1.0, tol, tol);
    let closed = (1.0 / alpha - c / (alpha - 1.0)) / SQRT_2PI;
    let mut total = QuadratureResult { value: head.value - closed, ..head };
    // [1, 2^40] on dyadic pieces
    let mut a = 1.0f64;
    for _ in 0..40 {
        let piece = integrate(|s| s.powf(alpha - 0.5) * bessel_remainder(nu, s), a, 2.0 * a, tol, tol);
        total = add(total, piece);
        a *= 2.0;
    }
    // beyond: term by term from the Hankel expansion
    let terms = hankel_terms(nu, a).unwrap_or_default();
    let tail: f64 =
        terms.iter().enumerate().skip(2).take(6).map(|(k, t)| t * a.powi(k as i32) * a.powf(alpha - k as f64) / (k as f64 - alpha)).sum();
    total.value += tail / SQRT_2PI;
    Ok(total)
}

/// E_{a→b}^{(ℓ)}[exp(−∫_0^ℓ c du/(B_u+x)²)] in closed form: √(2πz) e^{−z} I_ν(z) with
/// z = (x+a)(x+b)/ℓ and ν = √(8c+1)/2.
pub fn bridge_functional(x: f64, a: f64, b: f64, ell: f64, c: f64) -> Result<f64> {
    if !(x + a > 0.0 && x + b > 0.0 && ell > 0.0 && c >= 0.0) {
        return Err(Error::Domain(format!("bridge functional needs x+a, x+b, ℓ > 0 and c ≥ 0 (x={x}, a={a}, b={b}, ℓ={ell}, c={c})")));
    }
    let z = (x + a) * (x + b) / ell;
    let nu = (8.0 * c + 1.0).sqrt() / 2.0;
    Ok((2.0 * std::f64::consts::PI * z).sqrt() * bessel_i_scaled(nu, z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo oracle for [`bridge_functional`]: Brownian bridges from a to b on a grid, the
/// integral by the trapezoid rule, and the chance of touching −x between grid points accounted
/// for by the bridge crossing probability.
pub fn bridge_functional_mc(x: f64, a: f64, b: f64, ell: f64, c: f64, paths: usize, steps: usize, seed: u64) -> Result<McEstimate> {
    bridge_functional(x, a, b, ell, c)?;
    let dt = ell / steps as f64;
    let streams = Streams::new(seed, 0, DOMAIN_MISC);
    let (mut sum, mut sum2) = (0.0, 0.0);
    let mut walk = vec![0.0; steps + 1];
    for p in 0..paths {
        let mut rng = streams.at(p as u64);
        for i in 1..=steps {
            let g: f64 = rng.sample(StandardNormal);
            walk[i] = walk[i - 1] + g * dt.sqrt();
        }
        let end = walk[steps];
        let mut integral = 0.0;
        let mut survive = 1.0;
        let mut prev = x + a;
        for i in 1..=steps {
            let u = i as f64 / steps as f64;
            let y = x + a + walk[i] - u * end + u * (b - a);
            if y <= 0.0 {
                survive = 0.0;
                break;
            }
            integral += 0.5 * dt * (1.0 / (prev * prev) + 1.0 / (y * y));
            survive *= 1.0 - (-2.0 * prev * y / dt).exp();
            prev = y;
        }
        let v = survive * (-c * integral).exp();
        sum += v;
        sum2 += v * v;
    }
    let n = paths as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McEstimate { mean, std_error: (var / n).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    pub abs_error_estimate: f64,
    /// set when the error estimate is not small against the value
    pub degraded: bool,
}

/// Density q^{[β]}_c(x) of the spectrally positive stable law with Laplace exponent ±cλ^β.
///
/// Bromwich inversion on the line Re λ = γ, where γ is the saddle point of λx ± cλ^β when it
/// exists (left tail for β > 1, small x for β < 1) and 0 otherwise:
/// q(x) = (1/π) ∫_0^∞ Re exp((γ+iy)x ± c(γ+iy)^β) dy.
pub fn stable_density(beta: f64, c: f64, x: f64) -> Result<DensityValue> {
    if !(beta > 0.0 && beta < 2.0 && beta != 1.0) || c <= 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("stable density needs β in (0,1)∪(1,2) and c > 0 (β={beta}, c={c})")));
    }
    // scaling to c = 1
    let scale = c.powf(1.0 / beta);
    let x1 = x / scale;
    let sign = if beta > 1.0 { 1.0 } else { -1.0 };
    if beta < 1.0 && x1 <= 0.0 {
        return Ok(DensityValue { value: 0.0, abs_error_estimate: 0.0, degraded: false });
    }
    // saddle of γ x + sign·γ^β: x + sign·β γ^{β−1} = 0
    let gamma0 = if sign * x1 < 0.0 { (-x1 / (sign * beta)).powf(1.0 / (beta - 1.0)) } else { 0.0 };
    let base = gamma0 * x1 + sign * gamma0.powf(beta);
    if base < -740.0 {
        return Ok(DensityValue { value: 0.0, abs_error_estimate: 0.0, degraded: false });
    }
    let integrand = |y: f64| {
        let r = gamma0.hypot(y);
        let th = y.atan2(gamma0);
        let rb = r.powf(beta);
        let re = gamma0 * x1 + sign * rb * (beta * th).cos() - base;
        let im = y * x1 + sign * rb * (beta * th).sin();
        re.exp() * im.cos()
    };
    let amplitude = |y: f64| {
        let r = gamma0.hypot(y);
        let th = y.atan2(gamma0);
        (gamma0 * x1 + sign * r.powf(beta) * (beta * th).cos() - base).exp()
    };
    let mut y_max = (0.01 * gamma0).max(1.0);
    while amplitude(y_max) > 1e-18 {
        y_max *= 1.5;
        if y_max > 1e9 * gamma0.max(1.0) {
            return Err(Error::Numeric("stable density integrand does not decay".into()));
        }
    }
    let freq = x1.abs() + beta * y_max.powf(beta - 1.0).max(1.0);
    let chunks = ((y_max * freq / std::f64::consts::PI).ceil() as usize).clamp(64, 200_000);
    let h = y_max / chunks as f64;
    let mut total = 0.0;
    let mut err = 0.0;
    for k in 0..chunks {
        let r = integrate_budget(integrand, k as f64 * h, (k + 1) as f64 * h, 1e-17, 1e-13, 64);
        total += r.value;
        err += r.abs_error_estimate;
    }
    let factor = base.exp() / (std::f64::consts::PI * scale);
    let value = total * factor;
    let abs_error_estimate = (err + 1e-16 * chunks as f64) * factor;
    Ok(DensityValue { value, abs_error_estimate, degraded: abs_error_estimate > 1e-6 * value.abs() })
}

/// Density at a uniform time of a Brownian bridge of duration t.
pub fn bar_p(t: f64, z: f64) -> f64 {
    (std::f64::consts::PI / (2.0 * t)).sqrt() * erfc(z.abs() * (2.0 / t).sqrt())
}

/// 𝒢̃(x,z) = ∫_0^∞ dt q^{[α]}_x(−t) p̄_t(z) / (Γ(−α) t^{α−1}), with 𝒢̃(0,z) = 0.
///
/// At z = 0 the integrand behaves like t^{1/2−α} near 0, so the value is infinite for α ≥ 3/2;
/// that case returns `f64::INFINITY`.
pub fn gtilde(alpha: f64, x: f64, z: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) || x < 0.0 {
        return Err(Error::Domain(format!("gtilde needs α in (1,2) and x ≥ 0 (α={alpha}, x={x})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if z == 0.0 && alpha >= 1.5 {
        return Ok(f64::INFINITY);
    }
    let g = gamma(-alpha);
    let q = |t: f64| stable_density(alpha, x, -t).map(|d| d.value.max(0.0)).unwrap_or(0.0);
    // t = u^m flattens the t^{1/2−α} singularity at z = 0
    let m = if z == 0.0 { 1.0 / (1.5 - alpha) } else { 2.0 };
    let f = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let t = u.powf(m);
        m * u.powf(m - 1.0) * q(t) * bar_p(t, z) / (g * t.powf(alpha - 1.0))
    };
    // upper cutoff where the left tail of q is negligible
    let scale = x.powf(1.0 / alpha);
    let mut t_max = scale;
    while q(t_max) > 1e-16 * q(0.0) {
        t_max *= 1.5;
    }
    let r = integrate(f, 0.0, t_max.powf(1.0 / m), 1e-10, 1e-8);
    Ok(r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain 60-term power series, an independent oracle for moderate arguments.
    fn series60(nu: f64, x: f64) -> f64 {
        (0..60).map(|k| (0.5 * x).powf(2.0 * k as f64 + nu) / (gamma(k as f64 + 1.0) * gamma(nu + k as f64 + 1.0))).sum::<f64>()
            * (-x).exp()
    }

    #[test]
    fn bessel_values() {
        assert_eq!(bessel_i_scaled(0.0, 0.0), 1.0);
        assert_eq!(bessel_i_scaled(1.2, 0.0), 0.0);
        for nu in [0.0, 0.5, 1.0, 1.37, 2.5] {
            let got = bessel_i_scaled(nu, 5.0);
            let want = series60(nu, 5.0);
            assert!(((got - want) / want).abs() < 1e-12, "ν = {nu}: {got} vs {want}");
        }
        // I_{1/2}(x) = √(2/(πx)) sinh x
        for x in [0.3, 4.0, 29.0, 31.0, 200.0] {
            let want = (2.0 / (std::f64::consts::PI * x)).sqrt() * 0.5 * (1.0 - (-2.0 * x).exp());
            assert!(((bessel_i_scaled(0.5, x) - want) / want).abs() < 1e-12);
        }
        // both sides of the switch agree with the log-space series
        for nu in [0.0, 0.8, 1.5] {
            for x in [30.5, 60.0, 500.0] {
                let s = ln_scaled_series(nu, x).exp();
                assert!(((bessel_i_scaled(nu, x) - s) / s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bessel_large_argument() {
        let x = 1e3;
        for nu in [0.0, 1.0, 1.7] {
            let lhs = bessel_i_scaled(nu, x) * (2.0 * std::f64::consts::PI * x).sqrt();
            let rhs = 1.0 - (4.0 * nu * nu - 1.0) / (8.0 * x);
            assert!((lhs - rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn unscaled_bessel_is_increasing() {
        for nu in [0.0, 0.5, 1.25] {
            let mut prev = f64::NEG_INFINITY;
            for i in 1..400 {
                let x = 0.1 * i as f64;
                let ln_i = bessel_i_scaled(nu, x).ln() + x;
                assert!(ln_i > prev);
                prev = ln_i;
            }
        }
    }

    #[test]
    fn two_point_identity() {
        for alpha in [1.2, 1.3, 1.5, 1.7, 1.8, 1.9] {
            let c = alpha * (alpha - 1.0) / 2.0;
            let r = two_point_residual(alpha, c).unwrap();
            assert!(r.value.abs() < 1e-6, "α = {alpha}: {}", r.value);
            for f in [0.9, 1.1] {
                let p = two_point_residual(alpha, f * c).unwrap();
                assert!(p.value.abs() > 1e-3, "α = {alpha}, c × {f}: {}", p.value);
            }
        }
        assert!(matches!(two_point_residual_with_index(1.5, 0.375, 1.2), Err(Error::Numeric(_))));
    }

    #[test]
    fn bridge_functional_closed_form() {
        // small c: the functional tends to the probability of not touching −x
        let z: f64 = 1.5;
        let v = bridge_functional(1.0, 0.0, 0.5, 1.0, 1e-12).unwrap();
        assert!((v - (1.0 - (-2.0 * z).exp())).abs() < 1e-9);
        let far = bridge_functional(10.0, 0.0, 0.5, 1.0, 1e-12).unwrap();
        assert!((far - 1.0).abs() < 1e-12);
        let mut prev = 1.0;
        for i in 0..20 {
            let v = bridge_functional(1.0, 0.0, 0.5, 1.0, 0.05 * i as f64).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(bridge_functional(1.0, -1.5, 0.5, 1.0, 0.3).is_err());
    }

    #[test]
    fn bridge_functional_against_monte_carlo() {
        let exact = bridge_functional(1.0, 0.0, 0.5, 1.0, 0.375).unwrap();
        let mc = bridge_functional_mc(1.0, 0.0, 0.5, 1.0, 0.375, 20_000, 1000, 4).unwrap();
        assert!((mc.mean - exact).abs() < 3.0 * mc.std_error, "{} ± {} vs {exact}", mc.mean, mc.std_error);
    }

    #[test]
    fn stable_density_at_zero() {
        let want = 1.0 / gamma(-1.0 / 1.5).abs();
        let got = stable_density(1.5, 1.0, 0.0).unwrap();
        assert!((got.value - want).abs() < 1e-6 * want);
        let got = stable_density(1.5, 2.7, 0.0).unwrap().value * 2.7f64.powf(1.0 / 1.5);
        assert!((got - want).abs() < 1e-6 * want);
        let want = 1.0 / gamma(-0.6).abs();
        // β < 1 lives on (0,∞): the value at 0 is the right limit
        let got = stable_density(0.6, 1.0, 1e-9).unwrap().value;
        assert!(got < 1e-6, "{got} vs the two-sided formula {want}");
    }

    #[test]
    fn zolotarev_duality() {
        let beta = 1.0 / 1.5;
        for c in [0.5, 1.0, 2.0] {
            for x in [0.5, 1.0, 2.0, 4.0] {
                let lhs = stable_density(beta, c, x).unwrap().value;
                let rhs = c / x * stable_density(1.5, x, -c).unwrap().value;
                assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1e-12), "c={c}, x={x}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn stable_density_normalization_and_left_tail() {
        let beta = 1.5;
        let m = 200.0;
        let body = integrate(|x| stable_density(beta, 1.0, x).unwrap().value, -15.0, m, 1e-9, 1e-9);
        let tail = m.powf(-beta) / (beta * gamma(-beta));
        assert!((body.value + tail - 1.0).abs() < 1e-4, "{}", body.value + tail);
        // log q(−t) against t^{β/(β−1)} = t^3 is close to linear on [2, 6]
        let pts: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let t = 2.0 + 0.5 * i as f64;
                (t.powf(beta / (beta - 1.0)), stable_density(beta, 1.0, -t).unwrap().value.ln())
            })
            .collect();
        let slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
        let s1 = slope(pts[4], pts[6]);
        let s2 = slope(pts[6], pts[8]);
        assert!(s1 < 0.0 && ((s1 - s2) / s2).abs() < 0.1, "{s1} vs {s2}");
        let exact = -(beta - 1.0) * beta.powf(-beta / (beta - 1.0));
        assert!(((s2 - exact) / exact).abs() < 0.1, "{s2} vs {exact}");
    }

    #[test]
    fn bar_p_is_a_density() {
        assert!((bar_p(2.0, 0.0) - (std::f64::consts::PI / 4.0).sqrt()).abs() < 1e-15);
        for t in [0.3f64, 1.0, 5.0] {
            let r = integrate(|z| bar_p(t, z), -20.0 * t.sqrt(), 20.0 * t.sqrt(), 1e-12, 1e-12);
            assert!((r.value - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gtilde_finiteness() {
        let g = gtilde(1.3, 0.5, 0.0).unwrap();
        assert!(g.is_finite() && g > 0.0);
        assert_eq!(gtilde(1.6, 0.5, 0.0).unwrap(), f64::INFINITY);
        let g = gtilde(1.6, 0.5, 0.2).unwrap();
        assert!(g.is_finite() && g > 0.0);
        assert_eq!(gtilde(1.6, 0.0, 0.2).unwrap(), 0.0);
    }
}
