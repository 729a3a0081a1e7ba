//! Distribution descriptions (serializable) and their compiled samplers.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Beta as BetaD, Distribution, Exp, Gamma as GammaD, Normal as NormalD, Triangular as TriD};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Time distributions in minutes. Location/scale families use
/// `x = loc + scale * z` with `z` from the standard form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    Exponential { mean: f64 },
    Normal {
        mean: f64,
        sd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower_bound: Option<f64>,
    },
    Gamma { shape: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Triangular { lo: f64, mode: f64, hi: f64 },
    Beta { a: f64, b: f64, loc: f64, scale: f64 },
    BetaPrime { a: f64, b: f64, loc: f64, scale: f64 },
    GenLogistic { c: f64, loc: f64, scale: f64 },
    EmpiricalKde { samples: Vec<f64>, bandwidth: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDistributionParams(format!("{name} must be positive and finite, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDistributionParams(format!("{name} must be finite, got {v}")))
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl DistributionSpec {
    pub fn exponential(mean: f64) -> Self {
        DistributionSpec::Exponential { mean }
    }

    pub fn bounded_normal(mean: f64, sd: f64, lower_bound: f64) -> Self {
        DistributionSpec::Normal { mean, sd, lower_bound: Some(lower_bound) }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            DistributionSpec::Exponential { .. } => "exponential",
            DistributionSpec::Normal { .. } => "normal",
            DistributionSpec::Gamma { .. } => "gamma",
            DistributionSpec::Uniform { .. } => "uniform",
            DistributionSpec::Triangular { .. } => "triangular",
            DistributionSpec::Beta { .. } => "beta",
            DistributionSpec::BetaPrime { .. } => "beta_prime",
            DistributionSpec::GenLogistic { .. } => "gen_logistic",
            DistributionSpec::EmpiricalKde { .. } => "empirical_kde",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Exponential { mean } => positive("mean", mean),
            DistributionSpec::Normal { mean, sd, lower_bound } => {
                finite("mean", mean)?;
                positive("sd", sd)?;
                if let Some(lb) = lower_bound {
                    finite("lower_bound", lb)?;
                    // Rejection sampling needs a non-negligible acceptance rate.
                    if (lb - mean) / sd > 6.0 {
                        return Err(Error::InvalidDistributionParams(format!(
                            "lower_bound {lb} is more than 6 sd above mean {mean}"
                        )));
                    }
                }
                Ok(())
            }
            DistributionSpec::Gamma { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            DistributionSpec::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if hi > lo {
                    Ok(())
                } else {
                    Err(Error::InvalidDistributionParams(format!("uniform needs lo < hi, got [{lo}, {hi}]")))
                }
            }
            DistributionSpec::Triangular { lo, mode, hi } => {
                finite("lo", lo)?;
                finite("mode", mode)?;
                finite("hi", hi)?;
                if lo < hi && lo <= mode && mode <= hi {
                    Ok(())
                } else {
                    Err(Error::InvalidDistributionParams(format!(
                        "triangular needs lo <= mode <= hi and lo < hi, got ({lo}, {mode}, {hi})"
                    )))
                }
            }
            DistributionSpec::Beta { a, b, loc, scale } | DistributionSpec::BetaPrime { a, b, loc, scale } => {
                positive("a", a)?;
                positive("b", b)?;
                finite("loc", loc)?;
                positive("scale", scale)
            }
            DistributionSpec::GenLogistic { c, loc, scale } => {
                positive("c", c)?;
                finite("loc", loc)?;
                positive("scale", scale)
            }
            DistributionSpec::EmpiricalKde { ref samples, bandwidth } => {
                positive("bandwidth", bandwidth)?;
                if samples.is_empty() {
                    return Err(Error::InvalidDistributionParams("KDE needs training samples".into()));
                }
                if samples.iter().any(|s| !s.is_finite()) {
                    return Err(Error::InvalidDistributionParams("KDE samples must be finite".into()));
                }
                if samples.iter().all(|&s| s / bandwidth < -6.0) {
                    return Err(Error::InvalidDistributionParams(
                        "KDE has no mass above zero".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Analytic mean (KDE: mean of the zero-truncated mixture).
    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => mean,
            DistributionSpec::Normal { mean, sd, lower_bound } => match lower_bound {
                None => mean,
                Some(lb) => {
                    let a = (lb - mean) / sd;
                    mean + sd * std_normal_pdf(a) / (1.0 - std_normal_cdf(a))
                }
            },
            DistributionSpec::Gamma { shape, scale } => shape * scale,
            DistributionSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            DistributionSpec::Triangular { lo, mode, hi } => (lo + mode + hi) / 3.0,
            DistributionSpec::Beta { a, b, loc, scale } => loc + scale * a / (a + b),
            DistributionSpec::BetaPrime { a, b, loc, scale } => {
                if b > 1.0 {
                    loc + scale * a / (b - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            DistributionSpec::GenLogistic { c, loc, scale } => loc + scale * (digamma(c) + EULER_GAMMA),
            DistributionSpec::EmpiricalKde { ref samples, bandwidth } => {
                let (mut num, mut den) = (0.0, 0.0);
                for &s in samples {
                    let a = s / bandwidth;
                    let w = std_normal_cdf(a);
                    num += s * w + bandwidth * std_normal_pdf(a);
                    den += w;
                }
                num / den
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            DistributionSpec::Normal { mean, sd, lower_bound } => {
                let z = (x - mean) / sd;
                match lower_bound {
                    None => std_normal_cdf(z),
                    Some(lb) => {
                        if x < lb {
                            return 0.0;
                        }
                        let plb = std_normal_cdf((lb - mean) / sd);
                        ((std_normal_cdf(z) - plb) / (1.0 - plb)).clamp(0.0, 1.0)
                    }
                }
            }
            DistributionSpec::Gamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, x / scale)
                }
            }
            DistributionSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            DistributionSpec::Triangular { lo, mode, hi } => {
                if x <= lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else if x <= mode {
                    (x - lo).powi(2) / ((hi - lo) * (mode - lo))
                } else {
                    1.0 - (hi - x).powi(2) / ((hi - lo) * (hi - mode))
                }
            }
            DistributionSpec::Beta { a, b, loc, scale } => {
                let z = (x - loc) / scale;
                if z <= 0.0 {
                    0.0
                } else if z >= 1.0 {
                    1.0
                } else {
                    beta_reg(a, b, z)
                }
            }
            DistributionSpec::BetaPrime { a, b, loc, scale } => {
                let z = (x - loc) / scale;
                if z <= 0.0 {
                    0.0
                } else {
                    beta_reg(a, b, z / (1.0 + z))
                }
            }
            DistributionSpec::GenLogistic { c, loc, scale } => {
                let z = (x - loc) / scale;
                (-c * softplus(-z)).exp()
            }
            DistributionSpec::EmpiricalKde { ref samples, bandwidth } => {
                if x < 0.0 {
                    return 0.0;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &s in samples {
                    let lo = std_normal_cdf(-s / bandwidth);
                    num += std_normal_cdf((x - s) / bandwidth) - lo;
                    den += 1.0 - lo;
                }
                (num / den).clamp(0.0, 1.0)
            }
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Exponential { mean } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -mean.ln() - x / mean
                }
            }
            DistributionSpec::Normal { mean, sd, lower_bound } => {
                let z = (x - mean) / sd;
                let base = -sd.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z;
                match lower_bound {
                    None => base,
                    Some(lb) if x < lb => f64::NEG_INFINITY,
                    Some(lb) => base - (1.0 - std_normal_cdf((lb - mean) / sd)).ln(),
                }
            }
            DistributionSpec::Gamma { shape, scale } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
                }
            }
            DistributionSpec::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            DistributionSpec::Triangular { lo, mode, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else if x < mode {
                    (2.0 * (x - lo) / ((hi - lo) * (mode - lo))).ln()
                } else if x > mode {
                    (2.0 * (hi - x) / ((hi - lo) * (hi - mode))).ln()
                } else {
                    (2.0 / (hi - lo)).ln()
                }
            }
            DistributionSpec::Beta { a, b, loc, scale } => {
                let z = (x - loc) / scale;
                if z <= 0.0 || z >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    (a - 1.0) * z.ln() + (b - 1.0) * (-z).ln_1p() - ln_beta(a, b) - scale.ln()
                }
            }
            DistributionSpec::BetaPrime { a, b, loc, scale } => {
                let z = (x - loc) / scale;
                if z <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (a - 1.0) * z.ln() - (a + b) * z.ln_1p() - ln_beta(a, b) - scale.ln()
                }
            }
            DistributionSpec::GenLogistic { c, loc, scale } => {
                let z = (x - loc) / scale;
                c.ln() - z - (c + 1.0) * softplus(-z) - scale.ln()
            }
            DistributionSpec::EmpiricalKde { ref samples, bandwidth } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (mut dens, mut mass) = (0.0, 0.0);
                for &s in samples {
                    dens += std_normal_pdf((x - s) / bandwidth) / bandwidth;
                    mass += 1.0 - std_normal_cdf(-s / bandwidth);
                }
                (dens / mass).ln()
            }
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let bad = |e: &dyn std::fmt::Display| Error::InvalidDistributionParams(e.to_string());
        Ok(match *self {
            DistributionSpec::Exponential { mean } => Sampler::Exp(Exp::new(1.0 / mean).map_err(|e| bad(&e))?),
            DistributionSpec::Normal { mean, sd, lower_bound } => Sampler::Normal {
                dist: NormalD::new(mean, sd).map_err(|e| bad(&e))?,
                lower_bound,
                upper_mass: lower_bound.map_or(1.0, |lb| 0.5 * erfc((lb - mean) / (sd * SQRT_2))),
            },
            DistributionSpec::Gamma { shape, scale } => {
                Sampler::Gamma(GammaD::new(shape, scale).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Uniform { lo, hi } => Sampler::Uniform { lo, width: hi - lo },
            DistributionSpec::Triangular { lo, mode, hi } => {
                Sampler::Triangular(TriD::new(lo, hi, mode).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Beta { a, b, loc, scale } => Sampler::Beta {
                dist: BetaD::new(a, b).map_err(|e| bad(&e))?,
                loc,
                scale,
            },
            DistributionSpec::BetaPrime { a, b, loc, scale } => Sampler::BetaPrime {
                num: GammaD::new(a, 1.0).map_err(|e| bad(&e))?,
                den: GammaD::new(b, 1.0).map_err(|e| bad(&e))?,
                loc,
                scale,
            },
            DistributionSpec::GenLogistic { c, loc, scale } => Sampler::GenLogistic { c, loc, scale },
            DistributionSpec::EmpiricalKde { ref samples, bandwidth } => Sampler::Kde {
                samples: samples.clone(),
                noise: NormalD::new(0.0, bandwidth).map_err(|e| bad(&e))?,
            },
        })
    }
}

/// A validated distribution ready for repeated draws.
#[derive(Debug, Clone)]
pub enum Sampler {
    Exp(Exp<f64>),
    /// `upper_mass` is P(X >= lower_bound) before truncation.
    Normal { dist: NormalD<f64>, lower_bound: Option<f64>, upper_mass: f64 },
    Gamma(GammaD<f64>),
    Uniform { lo: f64, width: f64 },
    Triangular(TriD<f64>),
    Beta { dist: BetaD<f64>, loc: f64, scale: f64 },
    BetaPrime { num: GammaD<f64>, den: GammaD<f64>, loc: f64, scale: f64 },
    GenLogistic { c: f64, loc: f64, scale: f64 },
    Kde { samples: Vec<f64>, noise: NormalD<f64> },
}

/// Redraws allowed before a negative duration is taken as zero.
const DURATION_REDRAWS: usize = 64;

impl Sampler {
    /// A draw conditioned on being non-negative, for delays. Fitted families
    /// with support below zero (KDE tails, logistic) are redrawn rather than
    /// clamped.
    pub fn sample_duration<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        for _ in 0..DURATION_REDRAWS {
            let x = self.sample(rng);
            if x >= 0.0 {
                return x;
            }
        }
        0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Normal { dist, lower_bound, upper_mass } => match *lower_bound {
                None => dist.sample(rng),
                Some(lb) if *upper_mass >= 0.05 => loop {
                    let x = dist.sample(rng);
                    if x >= lb {
                        break x;
                    }
                },
                // Same truncated law, by inversion, when rejection would be slow.
                Some(lb) => {
                    let v = upper_mass * (1.0 - rng.random::<f64>());
                    let x = dist.mean() + dist.std_dev() * SQRT_2 * erfc_inv(2.0 * v);
                    x.max(lb)
                }
            },
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Uniform { lo, width } => lo + width * rng.random::<f64>(),
            Sampler::Triangular(d) => d.sample(rng),
            Sampler::Beta { dist, loc, scale } => loc + scale * dist.sample(rng),
            Sampler::BetaPrime { num, den, loc, scale } => {
                let x = num.sample(rng);
                let y = den.sample(rng);
                loc + scale * x / y
            }
            Sampler::GenLogistic { c, loc, scale } => {
                let u = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                // Inverse of F(z) = (1 + e^{-z})^{-c}.
                let z = -(u.powf(-1.0 / c) - 1.0).ln();
                loc + scale * z
            }
            Sampler::Kde { samples, noise } => loop {
                let i = rng.random_range(0..samples.len());
                let x = samples[i] + noise.sample(rng);
                if x >= 0.0 {
                    break x;
                }
            },
        }
    }
}

/// One-off draw; compiles the sampler each call, so prefer [`DistributionSpec::sampler`] in loops.
pub fn sample<R: Rng + ?Sized>(dist: &DistributionSpec, rng: &mut R) -> Result<f64> {
    Ok(dist.sampler()?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::RngStream;

    fn draws(d: &DistributionSpec, n: usize, seed: u64) -> Vec<f64> {
        let s = d.sampler().unwrap();
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| s.sample(&mut rng)).collect()
    }

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    fn zoo() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::exponential(2.0),
            DistributionSpec::bounded_normal(2.0, 0.2, 0.01),
            DistributionSpec::bounded_normal(0.5, 1.0, 0.01),
            DistributionSpec::Normal { mean: 1.0, sd: 2.0, lower_bound: None },
            DistributionSpec::Gamma { shape: 11.11, scale: 0.45 },
            DistributionSpec::Uniform { lo: 3.0, hi: 9.0 },
            DistributionSpec::Triangular { lo: 1.0, mode: 2.0, hi: 6.0 },
            DistributionSpec::Beta { a: 2.0, b: 5.0, loc: 1.0, scale: 4.0 },
            DistributionSpec::BetaPrime { a: 3.0, b: 6.0, loc: 0.5, scale: 2.0 },
            DistributionSpec::GenLogistic { c: 2.5, loc: 3.0, scale: 0.7 },
            DistributionSpec::EmpiricalKde { samples: vec![0.05, 1.0, 2.5, 2.6], bandwidth: 0.3 },
        ]
    }

    #[test]
    fn exponential_mean_lln() {
        let xs = draws(&DistributionSpec::exponential(1.0), 1_000_000, 11);
        let (m, _) = mean_sd(&xs);
        assert!((0.99..=1.01).contains(&m), "mean {m}");
    }

    #[test]
    fn bounded_normal_respects_bound() {
        let xs = draws(&DistributionSpec::bounded_normal(2.0, 0.2, 0.01), 200_000, 3);
        assert!(xs.iter().all(|&x| x >= 0.01));
        let xs = draws(&DistributionSpec::bounded_normal(0.1, 1.5, 0.01), 200_000, 4);
        assert!(xs.iter().all(|&x| x >= 0.01));
    }

    #[test]
    fn durations_are_never_negative() {
        let kde = DistributionSpec::EmpiricalKde { samples: vec![0.01, 0.02, 0.05], bandwidth: 0.5 }.sampler().unwrap();
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| kde.sample_duration(&mut rng)).collect();
        assert!(xs.iter().all(|&x| x >= 0.0));
        assert!(xs.iter().filter(|&&x| x == 0.0).count() == 0);
    }

    #[test]
    fn far_tail_bounded_normal_matches_truncated_mean() {
        // Five sd below the bound: E[X | X >= 0] = -5 + pdf(5)/sf(5).
        let d = DistributionSpec::bounded_normal(-5.0, 1.0, 0.0);
        let xs = draws(&d, 200_000, 11);
        assert!(xs.iter().all(|&x| x >= 0.0));
        let want = -5.0 + std_normal_pdf(5.0) / (1.0 - std_normal_cdf(5.0));
        let (m, _) = mean_sd(&xs);
        assert!((m - want).abs() < 0.005, "{m} vs {want}");
        assert!((d.mean() - want).abs() < 1e-3);
    }

    #[test]
    fn gamma_moments_match_parameterisation() {
        let xs = draws(&DistributionSpec::Gamma { shape: 11.11, scale: 0.45 }, 400_000, 5);
        let (m, sd) = mean_sd(&xs);
        assert!((m - 5.0).abs() < 0.02, "mean {m}");
        assert!((sd - 1.5).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn sample_means_match_analytic_means() {
        for (i, d) in zoo().into_iter().enumerate() {
            let xs = draws(&d, 400_000, 100 + i as u64);
            let (m, sd) = mean_sd(&xs);
            let se = sd / (xs.len() as f64).sqrt();
            assert!((m - d.mean()).abs() < 5.0 * se + 1e-9, "{d:?}: sample {m} vs {}", d.mean());
        }
    }

    #[test]
    fn empirical_cdf_matches_analytic_cdf() {
        for (i, d) in zoo().into_iter().enumerate() {
            let mut xs = draws(&d, 100_000, 200 + i as u64);
            xs.sort_by(f64::total_cmp);
            for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
                let x = xs[(q * xs.len() as f64) as usize];
                assert!((d.cdf(x) - q).abs() < 0.01, "{d:?} at q={q}: cdf {}", d.cdf(x));
            }
        }
    }

    #[test]
    fn density_integrates_to_cdf() {
        // Trapezoid integration of exp(ln_pdf) against the closed-form cdf.
        for d in zoo() {
            let (lo, hi) = (-14.0, 12.0);
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            let mut prev = d.ln_pdf(lo).exp();
            for k in 1..=n {
                let x = lo + k as f64 * h;
                let cur = d.ln_pdf(x).exp();
                acc += 0.5 * (prev + cur) * h;
                prev = cur;
                if k % 20_000 == 0 {
                    assert!((acc - d.cdf(x)).abs() < 2e-3, "{d:?} at {x}: {acc} vs {}", d.cdf(x));
                }
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            DistributionSpec::exponential(0.0),
            DistributionSpec::exponential(f64::NAN),
            DistributionSpec::Normal { mean: 1.0, sd: -1.0, lower_bound: None },
            DistributionSpec::Uniform { lo: 2.0, hi: 2.0 },
            DistributionSpec::Triangular { lo: 0.0, mode: 3.0, hi: 2.0 },
            DistributionSpec::EmpiricalKde { samples: vec![1.0], bandwidth: 0.0 },
            DistributionSpec::EmpiricalKde { samples: vec![], bandwidth: 0.1 },
        ];
        for d in bad {
            assert!(matches!(d.sampler(), Err(Error::InvalidDistributionParams(_))), "{d:?}");
        }
    }

    #[test]
    fn json_shape_is_tagged_by_family() {
        let d = DistributionSpec::bounded_normal(2.0, 0.2, 0.01);
        let js = serde_json::to_string(&d).unwrap();
        assert_eq!(js, r#"{"family":"normal","mean":2.0,"sd":0.2,"lower_bound":0.01}"#);
        let back: DistributionSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, d);
    }
}
