//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Integer orders use the exact binomial expansion of
//! `A_α = E_{z~N(0,σ²)}[((1−q) + q·exp((2z−1)/(2σ²)))^α]`; fractional orders
//! use the two-sided series bound of Mironov, Talwar and Zhang (2019).
//! Conversion to (ε, δ) uses `ε = min_α T·RDP(α) + ln(1/δ)/(α−1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-5;

/// `{1.25, 1.5, 1.75, 2, 3, …, 64, 128, 256}`.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=64).map(f64::from));
    orders.extend([128.0, 256.0]);
    orders
}

/// RDP of one step of the subsampled Gaussian mechanism at order `alpha`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sample rate must lie in (0, 1], got {q}")));
    }
    if !(sigma > 0.0) || sigma.is_nan() {
        return Err(Error::invalid(format!("noise multiplier must be positive, got {sigma}")));
    }
    if !(alpha > 1.0) || alpha.is_infinite() {
        return Err(Error::invalid(format!("order must be finite and > 1, got {alpha}")));
    }
    if sigma.is_infinite() {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    Ok((log_a / (alpha - 1.0)).max(0.0))
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    let mut acc = f64::NEG_INFINITY;
    let mut ln_binom = 0.0;
    for i in 0..=alpha {
        if i > 0 {
            ln_binom += ((alpha - i + 1) as f64).ln() - (i as f64).ln();
        }
        let i_f = i as f64;
        let term = ln_binom + i_f * ln_q + (alpha - i) as f64 * ln_1mq + (i_f * i_f - i_f) / two_s2;
        acc = log_add(acc, term);
    }
    acc
}

fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        statrs::function::erf::erfc(x).ln()
    } else {
        let x2 = x * x;
        let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
        -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
    }
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let s2 = sigma * sigma;
    let z0 = s2 * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;

    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    // generalized binomial coefficient C(alpha, i), tracked as sign and log-magnitude
    let mut ln_coef = 0.0;
    let mut positive = true;
    for i in 0..10_000u32 {
        if i > 0 {
            let num = alpha - (i - 1) as f64;
            if num == 0.0 {
                break;
            }
            ln_coef += num.abs().ln() - (i as f64).ln();
            if num < 0.0 {
                positive = !positive;
            }
        }
        let i_f = i as f64;
        let j = alpha - i_f;
        let log_t0 = ln_coef + i_f * ln_q + j * ln_1mq;
        let log_t1 = ln_coef + j * ln_q + i_f * ln_1mq;
        let log_e0 = 0.5f64.ln() + log_erfc((i_f - z0) / sqrt2_sigma);
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / sqrt2_sigma);
        let log_s0 = log_t0 + (i_f * i_f - i_f) / (2.0 * s2) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * s2) + log_e1;
        if positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if log_s0.max(log_s1) < -30.0 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

/// Step counter plus the (q, σ) it applies to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    steps: u64,
    sample_rate: f64,
    noise_multiplier: f64,
    orders: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(sample_rate: f64, noise_multiplier: f64) -> Result<Self> {
        Self::with_orders(sample_rate, noise_multiplier, default_orders())
    }

    pub fn with_orders(sample_rate: f64, noise_multiplier: f64, orders: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate <= 1.0) {
            return Err(Error::invalid(format!("sample rate must lie in (0, 1], got {sample_rate}")));
        }
        if !(noise_multiplier >= 0.0) {
            return Err(Error::invalid(format!(
                "noise multiplier must be nonnegative, got {noise_multiplier}"
            )));
        }
        if orders.is_empty() || orders.iter().any(|&a| !(a > 1.0) || a.is_infinite()) {
            return Err(Error::invalid("orders must be finite and > 1"));
        }
        Ok(Self {
            steps: 0,
            sample_rate,
            noise_multiplier,
            orders,
        })
    }

    pub fn step(&mut self) {
        self.steps += 1;
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn noise_multiplier(&self) -> f64 {
        self.noise_multiplier
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        ledger_epsilon(self, delta)
    }
}

/// Converts accumulated RDP to an (ε, δ) guarantee. Returns infinity for a
/// noiseless ledger that has taken at least one step.
pub fn ledger_epsilon(ledger: &PrivacyLedger, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if ledger.steps == 0 {
        return Ok(0.0);
    }
    if ledger.noise_multiplier == 0.0 {
        return Ok(f64::INFINITY);
    }
    let t = ledger.steps as f64;
    let log_inv_delta = (1.0 / delta).ln();
    let mut best = f64::INFINITY;
    for &alpha in &ledger.orders {
        let rdp = rdp_subsampled_gaussian(ledger.sample_rate, ledger.noise_multiplier, alpha)?;
        let eps = t * rdp + log_inv_delta / (alpha - 1.0);
        if eps < best {
            best = eps;
        }
    }
    Ok(best)
}

/// Single-step Gaussian-mechanism calibration `σ = sqrt(2 ln(1.25/δ)) / ε`.
/// Only a starting point; reported budgets come from [`ledger_epsilon`].
pub fn noise_multiplier_for(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.25) {
        return Err(Error::invalid(format!("delta must lie in (0, 1.25), got {delta}")));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// ln ∫ N(z;0,σ²)·((1−q) + q·exp((2z−1)/(2σ²)))^α dz by the trapezoid rule
    /// on a wide grid, independent of the series used above.
    fn log_a_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
        let lo = -12.0 * sigma - 2.0;
        let hi = 12.0 * sigma + alpha + 4.0;
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        let mut acc = f64::NEG_INFINITY;
        for k in 0..=n {
            let z = lo + k as f64 * h;
            let ratio = ((1.0 - q) + q * ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp()).ln();
            let w: f64 = if k == 0 || k == n { 0.5 } else { 1.0 };
            let term = w.ln() + h.ln() + log_norm - z * z / (2.0 * sigma * sigma) + alpha * ratio;
            acc = log_add(acc, term);
        }
        acc
    }

    #[test]
    fn full_batch_is_gaussian_rdp() {
        assert_eq!(rdp_subsampled_gaussian(1.0, 2.0, 8.0).unwrap(), 1.0);
        for (sigma, alpha) in [(0.5, 2.0), (1.0, 1.5), (4.0, 32.0)] {
            let quad = log_a_quadrature(1.0, sigma, alpha) / (alpha - 1.0);
            let exact = rdp_subsampled_gaussian(1.0, sigma, alpha).unwrap();
            assert!((quad - exact).abs() < 1e-7 * exact.max(1.0), "{quad} vs {exact}");
        }
    }

    #[test]
    fn integer_orders_match_quadrature() {
        for (q, sigma, alpha) in [(0.01, 1.0, 2u64), (0.1, 0.8, 5), (0.05, 2.0, 16), (0.3, 4.0, 32)] {
            let exact = log_a_int(q, sigma, alpha);
            let quad = log_a_quadrature(q, sigma, alpha as f64);
            assert!((exact - quad).abs() < 1e-8 * exact.abs().max(1e-3), "q={q} σ={sigma} α={alpha}: {exact} vs {quad}");
        }
    }

    #[test]
    fn fractional_orders_match_quadrature() {
        for (q, sigma, alpha) in [(0.01, 1.0, 1.5), (0.1, 0.8, 2.5), (0.05, 2.0, 1.25), (0.2, 1.5, 7.75)] {
            let series = log_a_frac(q, sigma, alpha);
            let quad = log_a_quadrature(q, sigma, alpha);
            assert!((series - quad).abs() < 1e-7 * quad.abs().max(1e-4), "q={q} σ={sigma} α={alpha}: {series} vs {quad}");
        }
    }

    #[test]
    fn series_agrees_with_expansion_at_integers() {
        for alpha in [2u64, 3, 8] {
            let a = log_a_int(0.02, 1.1, alpha);
            let b = log_a_frac(0.02, 1.1, alpha as f64);
            assert!((a - b).abs() < 1e-9 * a.abs().max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn limits() {
        assert!(rdp_subsampled_gaussian(1e-12, 1.0, 8.0).unwrap() < 1e-20);
        assert!(rdp_subsampled_gaussian(0.1, 1e6, 8.0).unwrap() < 1e-12);
        assert_eq!(rdp_subsampled_gaussian(0.1, f64::INFINITY, 8.0).unwrap(), 0.0);
        assert!(rdp_subsampled_gaussian(0.0, 1.0, 2.0).is_err());
        assert!(rdp_subsampled_gaussian(0.5, 0.0, 2.0).is_err());
        assert!(rdp_subsampled_gaussian(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn ledger_basics() {
        let ledger = PrivacyLedger::new(0.01, 1.0).unwrap();
        assert_eq!(ledger.epsilon(1e-5).unwrap(), 0.0);
        assert!(ledger.epsilon(0.0).is_err());
        assert!(ledger.epsilon(1.0).is_err());
        let noiseless = PrivacyLedger::new(0.01, 0.0).unwrap().with_steps(1);
        assert_eq!(noiseless.epsilon(1e-5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn single_full_batch_step_matches_grid_minimum() {
        // min over the grid of α/32 + ln(1e5)/(α−1), evaluated directly
        let oracle = default_orders()
            .into_iter()
            .map(|a| a / 32.0 + (1e5f64).ln() / (a - 1.0))
            .fold(f64::INFINITY, f64::min);
        let eps = PrivacyLedger::new(1.0, 4.0).unwrap().with_steps(1).epsilon(1e-5).unwrap();
        assert!((eps - oracle).abs() < 1e-12);
        // the dense-grid optimum sits at α = 1 + sqrt(32 ln 1e5) ≈ 20.2; the
        // integer grid is within 1e-3 of it
        let dense = (0..200_000)
            .map(|k| 1.0001 + k as f64 * 1e-3)
            .map(|a| a / 32.0 + (1e5f64).ln() / (a - 1.0))
            .fold(f64::INFINITY, f64::min);
        assert!(eps >= dense - 1e-12 && eps - dense < 1e-3, "{eps} vs {dense}");
    }

    #[test]
    fn noise_multiplier_calibration() {
        // sqrt(2 ln 1.25e5) = 4.844805262605389 (mpmath)
        let s = noise_multiplier_for(1.0, 1e-5).unwrap();
        assert!((s - 4.844_805_262_605_389).abs() < 1e-12);
        assert!((noise_multiplier_for(2.0, 1e-5).unwrap() - s / 2.0).abs() < 1e-15);
        assert!(noise_multiplier_for(1.0, 1.25 - 1e-12).unwrap() < 1e-5);
        assert!(noise_multiplier_for(0.0, 1e-5).is_err());
    }

    proptest! {
        #[test]
        fn epsilon_monotone(q in 0.001f64..1.0, sigma in 0.3f64..5.0, steps in 1u64..5000) {
            let eps = |q: f64, s: f64, t: u64| PrivacyLedger::new(q, s).unwrap().with_steps(t).epsilon(1e-5).unwrap();
            let base = eps(q, sigma, steps);
            prop_assert!(eps(q, sigma, steps * 2) >= base);
            prop_assert!(eps(q, sigma * 1.5, steps) <= base);
            prop_assert!(eps((q * 1.5).min(1.0), sigma, steps) >= base - 1e-12);
        }
    }
}
