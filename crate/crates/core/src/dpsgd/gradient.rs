use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when re-checking a clipped norm.
const CLIP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipNoiseSpec {
    /// `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub batch_size: usize,
    pub sample_rate: f64,
}

impl ClipNoiseSpec {
    /// Builds a spec for fixed-size batches drawn from `num_examples`.
    pub fn new(clip_norm: f64, noise_multiplier: f64, batch_size: usize, num_examples: usize) -> Result<Self> {
        if batch_size == 0 || num_examples == 0 {
            return Err(Error::invalid("batch size and example count must be positive"));
        }
        let spec = Self {
            clip_norm,
            noise_multiplier,
            batch_size,
            sample_rate: (batch_size as f64 / num_examples as f64).min(1.0),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::invalid(format!(
                "noise multiplier must be finite and nonnegative, got {}",
                self.noise_multiplier
            )));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_infinite() {
            return Err(Error::invalid("noise requires a finite clip norm"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::invalid(format!("sample rate must lie in (0, 1], got {}", self.sample_rate)));
        }
        Ok(())
    }

    /// Per-coordinate standard deviation of the noise on the averaged gradient.
    pub fn noise_std(&self, batch: usize) -> f64 {
        self.noise_multiplier * self.clip_norm / batch as f64
    }
}

/// Dense gradient over every model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatGradient(pub Vec<f64>);

impl FlatGradient {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("gradient coordinate {i} is {}", self.0[i])));
        }
        Ok(())
    }
}

/// Gradient that is zero outside a few disjoint parameter ranges, which is
/// what an embedding model produces for a single example.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGradient {
    pub segments: Vec<(usize, Vec<f64>)>,
}

impl SparseGradient {
    pub fn push(&mut self, offset: usize, values: Vec<f64>) {
        self.segments.push((offset, values));
    }

    pub fn norm(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|(_, v)| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn divide(&mut self, divisor: f64) {
        for (_, v) in &mut self.segments {
            for x in v.iter_mut() {
                *x /= divisor;
            }
        }
    }

    pub fn add_into(&self, dense: &mut [f64]) {
        for (offset, values) in &self.segments {
            for (d, v) in dense[*offset..*offset + values.len()].iter_mut().zip(values) {
                *d += v;
            }
        }
    }

    pub fn to_flat(&self, len: usize) -> FlatGradient {
        let mut dense = vec![0.0; len];
        self.add_into(&mut dense);
        FlatGradient(dense)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (offset, values) in &self.segments {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "gradient coordinate {} is {}",
                    offset + i,
                    values[i]
                )));
            }
        }
        Ok(())
    }

    /// Clips in place and returns the norm after clipping.
    pub fn clip(&mut self, clip_norm: f64) -> Result<f64> {
        self.check_finite()?;
        let norm = self.norm();
        match clip_divisor(norm, clip_norm) {
            Some(d) => {
                self.divide(d);
                Ok(self.norm())
            }
            None => Ok(norm),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Divisor `‖g‖₂ / C` that brings a gradient of norm `norm` onto the ball of
/// radius `clip_norm`, or `None` when it is already inside.
pub fn clip_divisor(norm: f64, clip_norm: f64) -> Option<f64> {
    if norm <= clip_norm {
        None
    } else {
        Some(norm / clip_norm)
    }
}

/// `g / max(1, ‖g‖₂ / C)`.
pub fn clip(g: &FlatGradient, clip_norm: f64) -> Result<FlatGradient> {
    if !(clip_norm > 0.0) {
        return Err(Error::invalid(format!("clip norm must be positive, got {clip_norm}")));
    }
    g.check_finite()?;
    Ok(match clip_divisor(g.norm(), clip_norm) {
        Some(d) => FlatGradient(g.0.iter().map(|x| x / d).collect()),
        None => g.clone(),
    })
}

/// Sums per-example gradients of one batch, then adds Gaussian noise of
/// standard deviation `σC` to the sum and divides by the batch size.
#[derive(Debug)]
pub struct NoisyAggregator {
    sum: Vec<f64>,
    count: usize,
    clip_norm: f64,
    noise_multiplier: f64,
}

impl NoisyAggregator {
    pub fn new(len: usize, clip_norm: f64, noise_multiplier: f64) -> Self {
        Self {
            sum: vec![0.0; len],
            count: 0,
            clip_norm,
            noise_multiplier,
        }
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|x| *x = 0.0);
        self.count = 0;
    }

    fn check_norm(&self, norm: f64) -> Result<()> {
        if norm > self.clip_norm * (1.0 + CLIP_SLACK) {
            return Err(Error::Numeric(format!(
                "per-example gradient norm {norm} exceeds clip norm {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    pub fn add_sparse(&mut self, g: &SparseGradient) -> Result<()> {
        self.check_norm(g.norm())?;
        g.add_into(&mut self.sum);
        self.count += 1;
        Ok(())
    }

    pub fn add_flat(&mut self, g: &FlatGradient) -> Result<()> {
        if g.len() != self.sum.len() {
            return Err(Error::invalid(format!(
                "gradient length {} != parameter count {}",
                g.len(),
                self.sum.len()
            )));
        }
        self.check_norm(g.norm())?;
        for (s, v) in self.sum.iter_mut().zip(&g.0) {
            *s += v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Writes the noisy mean into `out`. With σ = 0 no random numbers are
    /// drawn, so noiseless DPSGD follows plain SGD exactly.
    pub fn finish_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("cannot aggregate an empty batch"));
        }
        let b = self.count as f64;
        if self.noise_multiplier > 0.0 {
            let std = self.noise_multiplier * self.clip_norm;
            for (o, s) in out.iter_mut().zip(&self.sum) {
                let z: f64 = rng.sample(StandardNormal);
                *o = (s + std * z) / b;
            }
        } else {
            for (o, s) in out.iter_mut().zip(&self.sum) {
                *o = s / b;
            }
        }
        Ok(())
    }
}

/// `(1/B)·Σ clipped + N(0, σ²C²I)/B`. Inputs must already be clipped.
pub fn aggregate_and_noise<R: Rng + ?Sized>(
    clipped: &[FlatGradient],
    spec: &ClipNoiseSpec,
    rng: &mut R,
) -> Result<FlatGradient> {
    spec.validate()?;
    let Some(first) = clipped.first() else {
        return Err(Error::invalid("cannot aggregate an empty batch"));
    };
    let mut agg = NoisyAggregator::new(first.len(), spec.clip_norm, spec.noise_multiplier);
    for g in clipped {
        g.check_finite()?;
        agg.add_flat(g)?;
    }
    let mut out = vec![0.0; first.len()];
    agg.finish_into(rng, &mut out)?;
    Ok(FlatGradient(out))
}

/// `θ ← θ − η·(g̃ + λ·θ)`.
pub fn sgd_update(params: &mut [f64], noisy: &FlatGradient, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != noisy.len() {
        return Err(Error::invalid(format!(
            "parameter count {} != gradient length {}",
            params.len(),
            noisy.len()
        )));
    }
    if !(lr >= 0.0 && weight_decay >= 0.0) {
        return Err(Error::invalid("learning rate and weight decay must be nonnegative"));
    }
    apply_update_raw(params, &noisy.0, lr, weight_decay);
    Ok(())
}

/// Unchecked form of [`sgd_update`] used inside training loops.
pub fn apply_update_raw(params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
    if weight_decay == 0.0 {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    } else {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * (g + weight_decay * *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn clip_scales_long_gradients() {
        let g = FlatGradient(vec![3.0, 4.0]); // norm 5
        let c = clip(&g, 2.5).unwrap();
        assert!((c.norm() - 2.5).abs() < 1e-12);
        assert!((c.0[0] / c.0[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_short_gradients_bitwise() {
        let g = FlatGradient(vec![0.3, -0.1, 1e-17]);
        let c = clip(&g, 2.0 * g.norm()).unwrap();
        assert_eq!(c, g);
        assert_eq!(clip(&FlatGradient::zeros(4), 1.0).unwrap(), FlatGradient::zeros(4));
        assert_eq!(clip(&g, f64::INFINITY).unwrap(), g);
    }

    #[test]
    fn clip_rejects_non_finite() {
        assert!(matches!(
            clip(&FlatGradient(vec![f64::NAN]), 1.0),
            Err(Error::Numeric(_))
        ));
        assert!(clip(&FlatGradient(vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn sparse_and_dense_clip_agree() {
        let mut s = SparseGradient::default();
        s.push(1, vec![3.0, 0.0]);
        s.push(5, vec![4.0]);
        let dense = clip(&s.to_flat(7), 1.0).unwrap();
        let n = s.clip(1.0).unwrap();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(s.to_flat(7), dense);
    }

    #[test]
    fn noiseless_aggregate_is_mean() {
        let spec = ClipNoiseSpec::new(10.0, 0.0, 2, 10).unwrap();
        let grads = vec![FlatGradient(vec![1.0, 2.0]), FlatGradient(vec![3.0, -2.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = aggregate_and_noise(&grads, &spec, &mut rng).unwrap();
        assert_eq!(out.0, vec![2.0, 0.0]);
    }

    #[test]
    fn aggregate_rejects_unclipped_and_empty() {
        let spec = ClipNoiseSpec::new(1.0, 1.0, 1, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(aggregate_and_noise(&[FlatGradient(vec![2.0])], &spec, &mut rng).is_err());
        assert!(aggregate_and_noise(&[], &spec, &mut rng).is_err());
    }

    #[test]
    fn opposite_gradients_cancel_in_expectation() {
        let spec = ClipNoiseSpec::new(1.0, 1.0, 2, 2).unwrap();
        let g = FlatGradient(vec![0.6, -0.8]);
        let neg = FlatGradient(vec![-0.6, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let out = aggregate_and_noise(&[g.clone(), neg.clone()], &spec, &mut rng).unwrap();
            mean[0] += out.0[0] / n as f64;
            mean[1] += out.0[1] / n as f64;
        }
        // per-draw sd 0.5, sd of mean 0.0035
        assert!(mean.iter().all(|m| m.abs() < 0.02), "{mean:?}");
    }

    #[test]
    fn unit_noise_variance() {
        // single zero gradient, σ = C = B = 1: output ~ N(0, 1)
        let spec = ClipNoiseSpec::new(1.0, 1.0, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let x = aggregate_and_noise(&[FlatGradient::zeros(1)], &spec, &mut rng).unwrap().0[0];
            sum += x;
            sq += x * x;
            draws.push(x);
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");

        draws.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // KS critical value at 0.01: 1.628 / sqrt(n)
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn sgd_update_arithmetic() {
        let mut p = vec![1.0];
        sgd_update(&mut p, &FlatGradient(vec![2.0]), 0.5, 0.0).unwrap();
        assert_eq!(p, vec![0.0]);

        let mut p = vec![1.0, -2.0];
        sgd_update(&mut p, &FlatGradient(vec![5.0, 5.0]), 0.0, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        sgd_update(&mut p, &FlatGradient(vec![0.0, 0.0]), 0.3, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut p = vec![2.0];
        sgd_update(&mut p, &FlatGradient(vec![1.0]), 0.1, 0.5).unwrap();
        assert!((p[0] - (2.0 - 0.1 * (1.0 + 1.0))).abs() < 1e-15);

        assert!(sgd_update(&mut p, &FlatGradient(vec![1.0, 2.0]), 0.1, 0.0).is_err());
    }

    #[test]
    fn noise_needs_finite_clip() {
        assert!(ClipNoiseSpec::new(f64::INFINITY, 1.0, 4, 10).is_err());
        assert!(ClipNoiseSpec::new(f64::INFINITY, 0.0, 4, 10).is_ok());
        assert_eq!(ClipNoiseSpec::new(1.0, 1.0, 256, 1024).unwrap().sample_rate, 0.25);
    }
}
