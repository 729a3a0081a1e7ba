//! Maximum-likelihood fitting of LOS candidate families and the KS test.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::dist::DistributionSpec;
use crate::error::{Error, Result};

/// Parametric candidate families for LOS variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    Normal,
    Gamma,
    Uniform,
    Triangular,
    Beta,
    BetaPrime,
    GenLogistic,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::Exponential,
        Family::Normal,
        Family::Gamma,
        Family::Uniform,
        Family::Triangular,
        Family::Beta,
        Family::BetaPrime,
        Family::GenLogistic,
    ];

    /// Free parameters estimated from data.
    pub fn n_params(self) -> usize {
        match self {
            Family::Exponential => 1,
            Family::Normal | Family::Gamma | Family::Uniform => 2,
            Family::Triangular | Family::GenLogistic => 3,
            Family::Beta | Family::BetaPrime => 4,
        }
    }
}

/// Minimises `f` from `x0` with the Nelder-Mead simplex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut fx: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fx[a].total_cmp(&fx[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fx = order.iter().map(|&i| fx[i]).collect();
        if (fx[n] - fx[0]).abs() <= tol * (1.0 + fx[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = sanitize(f(&xr));
        if fr < fx[0] {
            let xe = along(-2.0);
            let fe = sanitize(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                fx[n] = fe;
            } else {
                simplex[n] = xr;
                fx[n] = fr;
            }
        } else if fr < fx[n - 1] {
            simplex[n] = xr;
            fx[n] = fr;
        } else {
            let (xc, fc) = if fr < fx[n] {
                let xc = along(-0.5);
                let fc = sanitize(f(&xc));
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = sanitize(f(&xc));
                (xc, fc)
            };
            if fc < fx[n].min(fr) {
                simplex[n] = xc;
                fx[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    fx[i] = sanitize(f(&simplex[i]));
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| fx[a].total_cmp(&fx[b])).unwrap_or(0);
    (simplex[best].clone(), fx[best])
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn neg_log_lik(d: &DistributionSpec, xs: &[f64]) -> f64 {
    if d.validate().is_err() {
        return f64::INFINITY;
    }
    -xs.iter().map(|&x| d.ln_pdf(x)).sum::<f64>()
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

/// Gamma shape/scale by Newton iteration on ln k - digamma(k) = s.
fn fit_gamma(xs: &[f64]) -> Option<DistributionSpec> {
    if xs.iter().any(|&x| x <= 0.0) {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let s = mean.ln() - xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    if !(s > 0.0) {
        return None;
    }
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..50 {
        let f = k.ln() - digamma(k) - s;
        // d/dk [ln k - digamma k] = 1/k - trigamma k, trigamma via finite difference.
        let h = 1e-6 * k.max(1e-3);
        let d = 1.0 / k - (digamma(k + h) - digamma(k - h)) / (2.0 * h);
        let next = k - f / d;
        let next = if next > 0.0 { next } else { k / 2.0 };
        if (next - k).abs() < 1e-12 * k {
            k = next;
            break;
        }
        k = next;
    }
    Some(DistributionSpec::Gamma { shape: k, scale: mean / k })
}

/// MLE of `family` on `xs` (caller supplies a manageable subsample).
pub fn fit_family(family: Family, xs: &[f64]) -> Option<DistributionSpec> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return None;
    }
    let pad = range / n as f64;
    let (mean, var) = moments(xs);
    let sd = var.sqrt();
    let fitted = match family {
        Family::Exponential => {
            if lo < 0.0 || mean <= 0.0 {
                return None;
            }
            DistributionSpec::Exponential { mean }
        }
        Family::Normal => {
            // LOS are non-negative, so the normal carries a lower bound at zero.
            let lb = if lo >= 0.0 { Some(0.0) } else { None };
            // A bound below the mean: otherwise a far-truncated normal mimics an exponential.
            let nll = |p: &[f64]| {
                if lb.is_some_and(|b| p[0] < b) {
                    return f64::INFINITY;
                }
                neg_log_lik(&DistributionSpec::Normal { mean: p[0], sd: p[1].exp(), lower_bound: lb }, xs)
            };
            let (p, _) = nelder_mead(nll, &[mean, sd.ln()], &[0.1 * sd, 0.1], 400, 1e-10);
            DistributionSpec::Normal { mean: p[0], sd: p[1].exp(), lower_bound: lb }
        }
        Family::Gamma => fit_gamma(xs)?,
        Family::Uniform => DistributionSpec::Uniform { lo, hi },
        Family::Triangular => {
            let (a, b) = (lo - pad, hi + pad);
            let mut best = (f64::INFINITY, lo);
            for i in 0..=200 {
                let mode = a + (b - a) * i as f64 / 200.0;
                let v = neg_log_lik(&DistributionSpec::Triangular { lo: a, mode, hi: b }, xs);
                if v < best.0 {
                    best = (v, mode);
                }
            }
            let step = (b - a) / 200.0;
            let nll = |p: &[f64]| neg_log_lik(&DistributionSpec::Triangular { lo: a, mode: p[0].clamp(a, b), hi: b }, xs);
            let (p, _) = nelder_mead(nll, &[best.1], &[step], 200, 1e-12);
            DistributionSpec::Triangular { lo: a, mode: p[0].clamp(a, b), hi: b }
        }
        Family::Beta => {
            let (loc, scale) = (lo - pad, range + 2.0 * pad);
            let zm = (mean - loc) / scale;
            let zv = var / (scale * scale);
            let common = (zm * (1.0 - zm) / zv - 1.0).max(0.1);
            let start = [(zm * common).ln(), ((1.0 - zm) * common).ln()];
            let nll = |p: &[f64]| neg_log_lik(&DistributionSpec::Beta { a: p[0].exp(), b: p[1].exp(), loc, scale }, xs);
            let (p, _) = nelder_mead(nll, &start, &[0.2, 0.2], 800, 1e-10);
            DistributionSpec::Beta { a: p[0].exp(), b: p[1].exp(), loc, scale }
        }
        Family::BetaPrime => {
            let loc = (lo - pad).min(0.0).max(lo - range);
            let m = mean - loc;
            let b0 = 2.0 + m * (m + 1.0) / var;
            let a0 = (m * (b0 - 1.0)).max(0.05);
            let nll = |p: &[f64]| {
                neg_log_lik(&DistributionSpec::BetaPrime { a: p[0].exp(), b: p[1].exp(), loc, scale: p[2].exp() }, xs)
            };
            let (p, _) = nelder_mead(nll, &[a0.ln(), b0.ln(), 0.0], &[0.3, 0.3, 0.3], 1500, 1e-10);
            DistributionSpec::BetaPrime { a: p[0].exp(), b: p[1].exp(), loc, scale: p[2].exp() }
        }
        Family::GenLogistic => {
            let mut sorted = xs.to_vec();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[n / 2];
            let s0 = (sd * 3f64.sqrt() / PI).max(1e-6);
            let nll = |p: &[f64]| neg_log_lik(&DistributionSpec::GenLogistic { c: p[0].exp(), loc: p[1], scale: p[2].exp() }, xs);
            let (p, _) = nelder_mead(nll, &[0.0, median, s0.ln()], &[0.3, 0.3 * s0, 0.3], 1500, 1e-10);
            DistributionSpec::GenLogistic { c: p[0].exp(), loc: p[1], scale: p[2].exp() }
        }
    };
    let ok = fitted.validate().is_ok() && neg_log_lik(&fitted, xs).is_finite();
    ok.then_some(fitted)
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let mut cdf = 0.0;
        for k in 1..=50 {
            let j = (2 * k - 1) as f64;
            cdf += (-(j * j) * PI * PI / (8.0 * lambda * lambda)).exp();
        }
        (1.0 - cdf * (2.0 * PI).sqrt() / lambda).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS statistic for `sorted` (ascending) against `dist`.
pub fn ks_statistic(sorted: &[f64], dist: &DistributionSpec) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = dist.cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub family: Family,
    pub dist: DistributionSpec,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

/// Fits every family in `candidates` that admits the data and runs the KS test
/// on the full sample. Fitting uses at most `fit_cap` order statistics.
pub fn fit_candidates(samples: &[f64], candidates: &[Family], fit_cap: usize) -> Result<Vec<CandidateFit>> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidDistributionParams("non-finite LOS sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let stride = sorted.len().div_ceil(fit_cap.max(2));
    let sub: Vec<f64> = sorted.iter().copied().step_by(stride.max(1)).collect();
    let n = sorted.len() as f64;
    let mut out = Vec::new();
    for &family in candidates {
        if let Some(dist) = fit_family(family, &sub) {
            let d = ks_statistic(&sorted, &dist);
            out.push(CandidateFit { family, dist, ks_statistic: d, ks_p_value: kolmogorov_sf(n.sqrt() * d) });
        }
    }
    Ok(out)
}
