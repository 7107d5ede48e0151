//! Explicit scalar constants of the stability argument, evaluated in double
//! precision with outward-rounded interval checks where a sign matters.

use std::f64::consts::E;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::{build_volume, dual_ball, dual_distance, volume_size_formula, DualSite, Vertex};

/// Closed interval with outward rounding on every operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn widen(lo: f64, hi: f64, ulps: u32) -> Interval {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..ulps {
        lo = lo.next_down();
        hi = hi.next_up();
    }
    Interval { lo, hi }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    /// An exactly representable value.
    pub fn exact(x: f64) -> Interval {
        Interval { lo: x, hi: x }
    }

    /// A value known to within one rounding of `x`.
    pub fn approx(x: f64) -> Interval {
        widen(x, x, 1)
    }

    pub fn e() -> Interval {
        Interval::approx(E)
    }

    pub fn ln3() -> Interval {
        Interval::approx(3f64.ln())
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_positive(&self) -> bool {
        self.lo > 0.0
    }

    pub fn is_negative(&self) -> bool {
        self.hi < 0.0
    }

    pub fn exp(self) -> Interval {
        widen(self.lo.exp(), self.hi.exp(), 2)
    }

    pub fn ln(self) -> Interval {
        assert!(self.lo > 0.0, "ln of non-positive interval");
        widen(self.lo.ln(), self.hi.ln(), 2)
    }

    pub fn sqrt(self) -> Interval {
        assert!(self.lo >= 0.0, "sqrt of negative interval");
        let lo = self.lo.sqrt().next_down().max(0.0);
        Interval { lo, hi: self.hi.sqrt().next_up() }
    }

    pub fn powf(self, p: f64) -> Interval {
        (self.ln() * Interval::exact(p)).exp()
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        widen(self.lo + o.lo, self.hi + o.hi, 1)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, o: Interval) -> Interval {
        widen(self.lo - o.hi, self.hi - o.lo, 1)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        widen(lo, hi, 1)
    }
}

impl Div for Interval {
    type Output = Interval;
    fn div(self, o: Interval) -> Interval {
        assert!(o.lo > 0.0 || o.hi < 0.0, "division by an interval containing 0");
        let inv = widen(1.0 / o.hi, 1.0 / o.lo, 1);
        self * inv
    }
}

/// `μ = 2·9^{1/5}`.
pub fn mu() -> f64 {
    2.0 * 9f64.powf(0.2)
}

pub fn mu_interval() -> Interval {
    Interval::exact(2.0) * Interval::exact(9.0).powf(0.2)
}

/// `f(x) = (x + 1 - √(x² + 1))/x`.
pub fn f_decay(x: f64) -> f64 {
    (x + 1.0 - (x * x + 1.0).sqrt()) / x
}

fn f_decay_interval(x: Interval) -> Interval {
    // f is increasing on x > 0, so bracket by the endpoint values.
    let at = |v: f64| {
        let v = Interval::approx(v);
        (v + Interval::exact(1.0) - (v * v + Interval::exact(1.0)).sqrt()) / v
    };
    let (a, b) = (at(x.lo), at(x.hi));
    Interval::new(a.lo, b.hi)
}

/// `f(2eμ)`.
pub fn f_2emu() -> f64 {
    f_decay(2.0 * E * mu())
}

fn f_2emu_interval() -> Interval {
    f_decay_interval(Interval::exact(2.0) * Interval::e() * mu_interval())
}

/// `κ ≤ 4/e + ln μ`.
pub fn kappa_bound() -> f64 {
    4.0 / E + mu().ln()
}

/// Smallest admissible decay rate `4/e + ln(μ/f(2eμ)) + ε`.
pub fn beta_threshold(eps: f64) -> f64 {
    4.0 / E + (mu() / f_2emu()).ln() + eps
}

pub const ALPHA_MARGIN: f64 = 0.03;

/// `α(d) = d ln 3 - 4/e - ln(μ/f(2eμ)) - 0.03`.
pub fn alpha(d: u32) -> f64 {
    d as f64 * 3f64.ln() - 4.0 / E - (mu() / f_2emu()).ln() - ALPHA_MARGIN
}

pub fn alpha_interval(d: u32) -> Interval {
    Interval::exact(d as f64) * Interval::ln3()
        - Interval::exact(4.0) / Interval::e()
        - (mu_interval() / f_2emu_interval()).ln()
        - Interval::approx(ALPHA_MARGIN)
}

/// Certified sign of `α(d)`: `Some(true)` positive, `Some(false)` negative.
pub fn indistinguishability_regime(d: u32) -> Option<bool> {
    let a = alpha_interval(d);
    if a.is_positive() {
        Some(true)
    } else if a.is_negative() {
        Some(false)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClusterRatio {
    pub eps: f64,
    pub r: f64,
    pub r_over_1mr: f64,
}

/// `r(ε) = μf e^{1-ε} / ((1 - μf e^{1-ε})(1 - f e^{-ε}))` with `f = f(2eμ)`.
pub fn cluster_ratio(eps: f64) -> Result<ClusterRatio> {
    if eps <= 0.0 {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    let f = f_2emu();
    let a = mu() * f * (1.0 - eps).exp();
    let r = a / ((1.0 - a) * (1.0 - f * (-eps).exp()));
    if !(a < 1.0 && r > 0.0 && r < 1.0) {
        return Err(Error::InvalidInput(format!("r({eps}) = {r} is not in (0, 1)")));
    }
    Ok(ClusterRatio { eps, r, r_over_1mr: r / (1.0 - r) })
}

pub fn cluster_ratio_interval(eps: f64) -> Interval {
    let f = f_2emu_interval();
    let one = Interval::exact(1.0);
    let a = mu_interval() * f * (one - Interval::approx(eps)).exp();
    a / ((one - a) * (one - f * (-Interval::approx(eps)).exp()))
}

/// Which exponent multiplies `α(n - k)` in `F_α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaExponent {
    /// `e^{-2α(n-k)}`, as in the theorem statement.
    Double,
    /// `e^{-α(n-k)}`, as written in its proof.
    Single,
}

impl AlphaExponent {
    fn factor(self) -> f64 {
        match self {
            AlphaExponent::Double => 2.0,
            AlphaExponent::Single => 1.0,
        }
    }
}

/// `F_α(n,k) = 102k·e^{-cα(n-k)}`.
pub fn f_alpha(n: u32, k: u32, d: u32, exponent: AlphaExponent) -> f64 {
    102.0 * k as f64 * (-exponent.factor() * alpha(d) * (n as f64 - k as f64)).exp()
}

/// The same quantity written as `17·|∂Λ_k|·e^{-cα(n-k)}` with the boundary counted.
pub fn f_alpha_via_boundary(n: u32, k: u32, d: u32, exponent: AlphaExponent) -> f64 {
    let boundary = build_volume(DualSite::ORIGIN, k, d).boundary.len() as f64;
    17.0 * boundary * (-exponent.factor() * alpha(d) * (n as f64 - k as f64)).exp()
}

fn check_regime(d: u32) -> Result<()> {
    if d < 5 {
        return Err(Error::ThresholdViolation { beta: d as f64 * 3f64.ln() - alpha(d), threshold: beta_threshold(ALPHA_MARGIN) });
    }
    Ok(())
}

/// `2F_α e^{F_α}`.
pub fn indistinguishability_bound(n: u32, k: u32, d: u32, exponent: AlphaExponent) -> Result<f64> {
    check_regime(d)?;
    if k < 1 || k >= n {
        return Err(Error::InvalidInput(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let f = f_alpha(n, k, d, exponent);
    Ok(2.0 * f * f.exp())
}

/// `ln C_α` with `C_α = 68·e^{51/(αe)}` (the value itself overflows a double for d = 5).
pub fn ln_c_alpha(d: u32) -> f64 {
    68f64.ln() + 51.0 / (alpha(d) * E)
}

/// `ln G_α(r) = ln C_α - 2αr`.
pub fn ln_ltqo_envelope(r: u32, d: u32) -> f64 {
    ln_c_alpha(d) - 2.0 * alpha(d) * r as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeCheck {
    pub d: u32,
    pub points: usize,
    pub violations: usize,
    pub worst_log_gap: f64,
}

/// Checks `4F e^F ≤ |∂Λ_k|·G_α(n-k)` in log form on `1 ≤ k ≤ k_max`, `2k ≤ n ≤ n_max`.
pub fn ltqo_envelope_check(d: u32, k_max: u32, n_max: u32) -> Result<EnvelopeCheck> {
    check_regime(d)?;
    let mut points = 0;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=k_max {
        let boundary = 6.0 * k as f64;
        for n in (2 * k)..=n_max {
            let f = f_alpha(n, k, d, AlphaExponent::Double);
            let lhs = 4f64.ln() + f.ln() + f;
            let rhs = boundary.ln() + ln_ltqo_envelope(n - k, d);
            points += 1;
            worst = worst.max(lhs - rhs);
            if lhs > rhs {
                violations += 1;
            }
        }
    }
    Ok(EnvelopeCheck { d, points, violations, worst_log_gap: worst })
}

/// `F_α(n,k) ≤ 51/(αe)` for `k ≤ n/2`.
pub fn f_alpha_cap(d: u32) -> f64 {
    51.0 / (alpha(d) * E)
}

#[derive(Debug, Clone, Serialize)]
pub struct LrConstant {
    pub d: u32,
    pub a: f64,
    pub a_prime: f64,
    pub theta: f64,
    pub p: f64,
    pub converges: bool,
    pub value: Option<f64>,
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub terms: u64,
}

/// Upper incomplete gamma bound `Γ(s,x) ≤ x^{s-1}e^{-x}/(1 - (s-1)/x)` for `x > s - 1`, `s ≥ 1`.
fn upper_gamma_bound(s: f64, x: f64) -> Option<f64> {
    if s < 1.0 {
        return Some(x.powf(s - 1.0) * (-x).exp());
    }
    if x <= s - 1.0 {
        return None;
    }
    Some(x.powf(s - 1.0) * (-x).exp() / (1.0 - (s - 1.0) / x))
}

/// `C(d, a-a', p) = 81(3d+2)·Σ_{n≥1} n^{p+4} e^{-(a-a')n^θ}`, summed until a
/// certified integral tail drops below `1e-12` of the partial sum.
pub fn lr_constant(d: u32, a: f64, a_prime: f64, theta: f64, p: f64) -> Result<LrConstant> {
    if !(theta > 0.0 && theta <= 1.0) || p < 0.0 || a_prime <= 0.0 {
        return Err(Error::InvalidInput(format!("need 0 < a', 0 < θ ≤ 1, p ≥ 0 (got a'={a_prime}, θ={theta}, p={p})")));
    }
    let pref = 81.0 * (3 * d + 2) as f64;
    let c = a - a_prime;
    let mut out = LrConstant {
        d,
        a,
        a_prime,
        theta,
        p,
        converges: c > 0.0,
        value: None,
        partial_sum: 0.0,
        tail_bound: f64::INFINITY,
        terms: 0,
    };
    if c <= 0.0 {
        return Ok(out);
    }
    let q = p + 4.0;
    let mut sum = 0.0;
    let mut n: u64 = 0;
    loop {
        n += 1;
        let x = n as f64;
        sum += x.powf(q) * (-c * x.powf(theta)).exp();
        // The summand decreases once n^θ > q/(cθ); then Σ_{m>n} ≤ ∫_n^∞.
        if x.powf(theta) > q / (c * theta) {
            let s = (q + 1.0) / theta;
            if let Some(g) = upper_gamma_bound(s, c * x.powf(theta)) {
                let tail = g / (theta * c.powf(s));
                if tail < 1e-12 * sum {
                    out.partial_sum = pref * sum;
                    out.tail_bound = pref * tail;
                    out.value = Some(pref * (sum + tail));
                    out.terms = n;
                    return Ok(out);
                }
            }
        }
        if n > 50_000_000 {
            return Err(Error::ResourceLimit { what: "Lieb-Robinson series".into(), explored: n, budget: 50_000_000 });
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LrCheck {
    pub x: String,
    pub y: String,
    pub d: u32,
    pub lattice_distance: u32,
    pub lhs_truncated: f64,
    pub lhs_tail: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Window sum `Σ_{(z,n): x,y ∈ Λ_n(z)} |Λ_n| e^{-a n^θ}` (with `‖Φ‖ = 1`) for
/// `n ≤ n_max`, a tail bound for `n > n_max`, and the right-hand side
/// `C·e^{-a's^θ}/s^p` with `s = D(x,y)/(4(d+1)) + 1/4`.
#[allow(clippy::too_many_arguments)]
pub fn lr_check(x: Vertex, y: Vertex, d: u32, a: f64, a_prime: f64, theta: f64, p: f64, n_max: u32) -> Result<LrCheck> {
    let c = lr_constant(d, a, a_prime, theta, p)?;
    let Some(cval) = c.value else {
        return Err(Error::InvalidInput("Lieb-Robinson series diverges".into()));
    };
    let px = x.plaquettes();
    let py = y.plaquettes();
    let window = build_volume(px[0], dual_distance(px[0], py[0]) + 3, d);
    let dist = *window.bfs(x).get(&y).ok_or_else(|| Error::Consistency(format!("{y} unreachable from {x}")))?;
    let mut lhs = 0.0;
    for n in 1..=n_max {
        let vol = volume_size_formula(n as u64, d as u64) as f64;
        let count = dual_ball(px[0], n)
            .into_iter()
            .filter(|z| px.iter().any(|t| dual_distance(*t, *z) < n) && py.iter().any(|t| dual_distance(*t, *z) < n))
            .count() as f64;
        lhs += count * vol * (-a * (n as f64).powf(theta)).exp();
    }
    // At most |I_x|·3n² centres per n.
    let mut tail = 0.0;
    let mut n = n_max as f64 + 1.0;
    loop {
        let t = 3.0 * px.len() as f64 * n * n * (3.0 * (3 * d + 2) as f64 * n * n) * (-a * n.powf(theta)).exp();
        tail += t;
        if t < 1e-16 * (lhs + tail) && n.powf(theta) > 4.0 / (a * theta) {
            // remaining terms decay faster than geometric here; bound them by the integral
            let s = 5.0 / theta;
            let extra = upper_gamma_bound(s, a * n.powf(theta)).unwrap_or(f64::INFINITY) / (theta * a.powf(s))
                * 9.0
                * px.len() as f64
                * (3 * d + 2) as f64;
            tail += extra;
            break;
        }
        n += 1.0;
    }
    let s = dist as f64 / (4.0 * (d + 1) as f64) + 0.25;
    let rhs = cval * (-a_prime * s.powf(theta)).exp() / s.powf(p);
    Ok(LrCheck {
        x: x.to_string(),
        y: y.to_string(),
        d,
        lattice_distance: dist,
        lhs_truncated: lhs,
        lhs_tail: tail,
        rhs,
        holds: lhs + tail <= rhs,
    })
}

/// `17·6K·e^{-2α(N-K)}`.
pub fn entropy_bound(n: u32, k: u32, d: u32) -> Result<f64> {
    check_regime(d)?;
    if k < 1 || n <= k {
        return Err(Error::InvalidInput(format!("need N > K >= 1, got N={n}, K={k}")));
    }
    Ok(17.0 * 6.0 * k as f64 * (-2.0 * alpha(d) * (n - k) as f64).exp())
}

/// `‖f - g‖₁ ≤ D e^D` for the ∞-Rényi divergence `D`.
pub fn l1_from_divergence(divergence: f64) -> f64 {
    divergence * divergence.exp()
}

/// `(κ, ν) = (3(3d+2), 2)` and whether `|Λ_n| ≤ κn^ν` for `n ≤ n_max`.
pub fn lattice_regularity(d: u32, n_max: u32) -> (u32, u32, bool) {
    let kappa = 3 * (3 * d + 2);
    let ok = (1..=n_max).all(|n| build_volume(DualSite::ORIGIN, n, d).vertices.len() as u32 <= kappa * n * n);
    (kappa, 2, ok)
}

#[derive(Debug, Clone)]
pub struct ConstantsReport {
    pub d: u32,
    pub eps: f64,
}

impl ConstantsReport {
    pub fn to_json(&self) -> Result<Value> {
        let d = self.d;
        let a = alpha_interval(d);
        let ratio = cluster_ratio(self.eps)?;
        let ratio_iv = cluster_ratio_interval(self.eps);
        let (kr, nu, regular) = lattice_regularity(d, 8);
        let regime = indistinguishability_regime(d);
        let mut out = json!({
            "d": d,
            "eps": self.eps,
            "mu": {"value": mu(), "method": "float+interval", "interval": mu_interval(), "formula": "2*9^(1/5)"},
            "f_2emu": {"value": f_2emu(), "method": "float+interval", "interval": f_2emu_interval(), "formula": "(x+1-sqrt(x^2+1))/x at x=2e*mu"},
            "kappa_bound": {"value": kappa_bound(), "method": "float", "formula": "4/e + ln(mu)"},
            "beta_threshold": {"value": beta_threshold(self.eps), "method": "float", "formula": "4/e + ln(mu/f(2e*mu)) + eps"},
            "beta": {"value": d as f64 * 3f64.ln() - alpha(d), "method": "float", "formula": "d*ln3 - alpha(d)"},
            "r": {"value": ratio.r, "method": "float+interval", "interval": ratio_iv, "formula": "mu*f*e^(1-eps)/((1-mu*f*e^(1-eps))(1-f*e^(-eps)))"},
            "r_over_1mr": {"value": ratio.r_over_1mr, "method": "float"},
            "alpha": {"value": alpha(d), "method": "float+interval", "interval": a, "formula": "d*ln3 - 4/e - ln(mu/f(2e*mu)) - 0.03"},
            "indistinguishability_regime": regime,
            "kappa_regularity": {"kappa": kr, "nu": nu, "holds_n_le_8": regular},
        });
        if regime == Some(true) {
            out["ln_c_alpha"] = json!({"value": ln_c_alpha(d), "method": "float", "formula": "ln 68 + 51/(alpha*e)"});
            out["f_alpha_cap"] = json!(f_alpha_cap(d));
            out["summable"] = json!(true);
            out["f_alpha_examples"] = json!([
                {"n": 101, "k": 1, "double": f_alpha(101, 1, d, AlphaExponent::Double), "single": f_alpha(101, 1, d, AlphaExponent::Single)},
                {"n": 1001, "k": 1, "double": f_alpha(1001, 1, d, AlphaExponent::Double), "single": f_alpha(1001, 1, d, AlphaExponent::Single)},
            ]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_values() {
        assert!((mu() - 3.1037).abs() < 1e-4);
        assert!((alpha(5) - 0.0032).abs() < 5e-4);
        let r = cluster_ratio(0.03).unwrap();
        assert!((r.r - 0.9424).abs() < 1e-3);
        assert!(r.r_over_1mr < 17.0);
        assert!(alpha(4) < 0.0);
        assert_eq!(indistinguishability_regime(5), Some(true));
        assert_eq!(indistinguishability_regime(4), Some(false));
        assert!(cluster_ratio_interval(0.03).contains(r.r));
    }

    #[test]
    fn intervals_enclose_point_values() {
        for d in 0..8 {
            assert!(alpha_interval(d).contains(alpha(d)));
            assert!(alpha_interval(d).width() < 1e-12);
        }
        assert!(mu_interval().contains(mu()));
    }

    #[test]
    fn regime_matches_threshold() {
        for d in 0..10 {
            let beta = d as f64 * 3f64.ln() - alpha(d);
            // β is the same for every d, so α > 0 iff d·ln3 clears the threshold.
            assert!((beta - beta_threshold(ALPHA_MARGIN)).abs() < 1e-12);
            assert_eq!(alpha(d) > 0.0, d >= 5);
        }
    }

    #[test]
    fn ratio_decreases_in_eps() {
        let mut last = 1.0;
        for i in 1..40 {
            let r = cluster_ratio(0.01 * i as f64).unwrap().r;
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn f_alpha_forms_agree() {
        for k in 1..=10 {
            assert_eq!(102 * k, 17 * 6 * k);
            for n in [k + 1, 2 * k, 10 * k] {
                let a = f_alpha(n, k, 5, AlphaExponent::Double);
                let b = f_alpha_via_boundary(n, k, 5, AlphaExponent::Double);
                assert!((a - b).abs() <= 1e-12 * a);
                assert!(f_alpha(n, k, 5, AlphaExponent::Single) >= a);
            }
        }
        for k in 1..=20 {
            for n in (2 * k)..=200 {
                assert!(f_alpha(n, k, 5, AlphaExponent::Double) <= f_alpha_cap(5));
            }
        }
    }

    #[test]
    fn indistinguishability_bound_decays() {
        let mut last = f64::INFINITY;
        for n in (2..2000).step_by(50) {
            let b = indistinguishability_bound(n, 1, 5, AlphaExponent::Double).unwrap();
            assert!(b < last);
            last = b;
        }
        assert!(matches!(indistinguishability_bound(3, 1, 4, AlphaExponent::Double), Err(Error::ThresholdViolation { .. })));
    }

    #[test]
    fn envelope_grid() {
        let c = ltqo_envelope_check(5, 20, 200).unwrap();
        assert_eq!(c.violations, 0);
        assert!(c.points > 2000);
    }

    #[test]
    fn lr_constant_closed_form() {
        let c = lr_constant(0, 2.0, 1.0, 1.0, 0.0).unwrap();
        let x = (-1.0f64).exp();
        let closed = 162.0 * x * (1.0 + 11.0 * x + 11.0 * x * x + x * x * x) / (1.0 - x).powi(5);
        assert!((c.value.unwrap() - closed).abs() < 1e-10 * closed);
        let diverging = lr_constant(0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(!diverging.converges && diverging.value.is_none());
        let stretched = lr_constant(1, 1.0, 0.5, 0.5, 2.0).unwrap();
        assert!(stretched.tail_bound < 1e-12 * stretched.partial_sum);
    }

    #[test]
    fn lr_window_sum_below_constant() {
        let pairs = [(Vertex::up(0, 0), Vertex::up(0, 0)), (Vertex::up(0, 0), Vertex::down(2, 1))];
        for (x, y) in pairs {
            let c = lr_check(x, y, 0, 1.0, 0.5, 1.0, 0.0, 40).unwrap();
            assert!(c.holds, "{c:?}");
        }
    }

    #[test]
    fn entropy_and_divergence() {
        assert_eq!(l1_from_divergence(0.0), 0.0);
        let b = entropy_bound(101, 1, 5).unwrap();
        assert!((b - 102.0 * (-200.0 * alpha(5)).exp()).abs() < 1e-9);
        assert!(entropy_bound(50, 1, 5).unwrap() > b);
        assert!(entropy_bound(101, 2, 5).unwrap() > entropy_bound(101, 1, 5).unwrap());
    }

    #[test]
    fn regularity() {
        for d in 0..=3 {
            assert!(lattice_regularity(d, 8).2);
        }
    }

    #[test]
    fn report_is_stable() {
        let a = ConstantsReport { d: 5, eps: 0.03 }.to_json().unwrap().to_string();
        let b = ConstantsReport { d: 5, eps: 0.03 }.to_json().unwrap().to_string();
        assert_eq!(a, b);
        assert!(a.contains("\"indistinguishability_regime\":true"));
    }

    proptest! {
        #[test]
        fn interval_ops_enclose(x in 0.1f64..10.0, y in 0.1f64..10.0) {
            let (a, b) = (Interval::approx(x), Interval::approx(y));
            prop_assert!((a + b).contains(x + y));
            prop_assert!((a * b).contains(x * y));
            prop_assert!((a / b).contains(x / y));
            prop_assert!((a - b).contains(x - y));
            prop_assert!(a.exp().contains(x.exp()));
            prop_assert!(a.ln().contains(x.ln()));
            prop_assert!(a.sqrt().contains(x.sqrt()));
        }
    }
}
