//! Ordinary least-squares polynomial fits used for both calibration stages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XUnits {
    OccupancyFraction,
    /// Instructions in units of 10^4.
    InstructionsE4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YUnits {
    InstructionsPerArrival,
    Seconds,
}

/// `value = c0 + c1 x + c2 x^2`. Occupancy models clamp x into `fit_domain`
/// when evaluated; instruction-count models extrapolate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub fit_domain: [f64; 2],
    /// NaN (JSON null) for models entered from known coefficients.
    #[serde(with = "nan_as_null")]
    pub r_squared: f64,
    #[serde(with = "nan_as_null")]
    pub residual_sd: f64,
    pub x_units: XUnits,
    pub y_units: YUnits,
}

/// Result of evaluating a model, with a flag for clamped inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub clamped: bool,
}

impl RegressionModel {
    /// A model from known coefficients (lowest order first).
    pub fn from_coeffs(coeffs: Vec<f64>, fit_domain: [f64; 2], x_units: XUnits, y_units: YUnits) -> Self {
        Self { degree: coeffs.len().saturating_sub(1), coeffs, fit_domain, r_squared: f64::NAN, residual_sd: f64::NAN, x_units, y_units }
    }

    pub fn polynomial(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn evaluate(&self, x: f64) -> Evaluation {
        if self.x_units == XUnits::OccupancyFraction {
            let [lo, hi] = self.fit_domain;
            let xc = x.clamp(lo, hi);
            Evaluation { value: self.polynomial(xc), clamped: xc != x }
        } else {
            Evaluation { value: self.polynomial(x), clamped: false }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.evaluate(x).value
    }

    pub fn intercept(&self) -> f64 {
        self.coeffs.first().copied().unwrap_or(0.0)
    }

    /// Same model with the constant term shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut m = self.clone();
        if let Some(c0) = m.coeffs.first_mut() {
            *c0 += delta;
        }
        m
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub fn r_squared(ys: &[f64], fitted: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(fitted).map(|(y, f)| (y - f).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// OLS fit of a polynomial of `degree`. Errors with `SingularFit` when the
/// Vandermonde matrix is rank deficient (e.g. fewer distinct x than terms).
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize, x_units: XUnits, y_units: YUnits) -> Result<RegressionModel> {
    let p = degree + 1;
    if xs.len() != ys.len() {
        return Err(Error::Config(format!("x/y length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < p {
        return Err(Error::SingularFit);
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite value in regression data".into()));
    }
    // Centre and scale x for conditioning, then map coefficients back.
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    if !(half > 0.0) && degree > 0 {
        return Err(Error::SingularFit);
    }
    let half = if half > 0.0 { half } else { 1.0 };
    let a = DMatrix::from_fn(xs.len(), p, |i, j| ((xs[i] - centre) / half).powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-10) {
        return Err(Error::SingularFit);
    }
    let scaled = svd.solve(&b, 0.0).map_err(|_| Error::SingularFit)?;

    // Expand sum_j s_j ((x - centre)/half)^j into powers of x.
    let mut coeffs = vec![0.0; p];
    for (j, s) in scaled.iter().enumerate() {
        let scale = s / half.powi(j as i32);
        for k in 0..=j {
            let binom = binomial(j, k) as f64;
            coeffs[k] += scale * binom * (-centre).powi((j - k) as i32);
        }
    }
    let mut model = RegressionModel {
        degree,
        coeffs,
        fit_domain: [lo, hi],
        r_squared: 0.0,
        residual_sd: 0.0,
        x_units,
        y_units,
    };
    let fitted: Vec<f64> = xs.iter().map(|&x| model.polynomial(x)).collect();
    model.r_squared = r_squared(ys, &fitted);
    let ss_res: f64 = ys.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum();
    model.residual_sd = if xs.len() > p { (ss_res / (xs.len() - p) as f64).sqrt() } else { 0.0 };
    Ok(model)
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_roundtrip() {
        let xs: Vec<f64> = (0..74).map(|i| 0.20 + 0.01 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.97 * x + 33.02).collect();
        let m = fit_polynomial(&xs, &ys, 1, XUnits::OccupancyFraction, YUnits::InstructionsPerArrival).unwrap();
        assert!((m.coeffs[0] - 33.02).abs() < 1e-9);
        assert!((m.coeffs[1] - 1.97).abs() < 1e-9);
        assert!((m.r_squared - 1.0).abs() < 1e-12);
        assert!(m.residual_sd < 1e-9);
        assert_eq!(m.fit_domain, [xs[0], xs[73]]);
    }

    #[test]
    fn exact_quadratic_roundtrip() {
        let xs: Vec<f64> = (0..44).map(|i| 0.50 + 0.01 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 5.90 * x * x - 4.85 * x + 22.96).collect();
        let m = fit_polynomial(&xs, &ys, 2, XUnits::OccupancyFraction, YUnits::InstructionsPerArrival).unwrap();
        for (got, want) in m.coeffs.iter().zip([22.96, -4.85, 5.90]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn hand_computed_line() {
        // x = 0,1,2 ; y = 1,3,4 -> slope 1.5, intercept 7/6, SSres = 1/6
        let m = fit_polynomial(&[0.0, 1.0, 2.0], &[1.0, 3.0, 4.0], 1, XUnits::InstructionsE4, YUnits::Seconds).unwrap();
        assert!((m.coeffs[1] - 1.5).abs() < 1e-12);
        assert!((m.coeffs[0] - 7.0 / 6.0).abs() < 1e-12);
        // SStot = 14/3
        assert!((m.r_squared - (1.0 - (1.0 / 6.0) / (14.0 / 3.0))).abs() < 1e-12);
        assert!((m.residual_sd - (1.0f64 / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_is_singular() {
        let r = fit_polynomial(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0], 1, XUnits::OccupancyFraction, YUnits::Seconds);
        assert!(matches!(r, Err(Error::SingularFit)));
        let r = fit_polynomial(&[0.1, 0.2], &[1.0, 2.0], 2, XUnits::OccupancyFraction, YUnits::Seconds);
        assert!(matches!(r, Err(Error::SingularFit)));
    }

    #[test]
    fn occupancy_models_clamp_instruction_models_do_not() {
        let m = RegressionModel::from_coeffs(vec![22.96, -4.85, 5.90], [0.5, 0.93], XUnits::OccupancyFraction, YUnits::InstructionsPerArrival);
        let e = m.evaluate(0.3);
        assert!(e.clamped);
        assert_eq!(e.value, m.polynomial(0.5));
        assert!(!m.evaluate(0.7).clamped);

        let g = RegressionModel::from_coeffs(vec![-0.05, 0.04], [0.0, 100.0], XUnits::InstructionsE4, YUnits::Seconds);
        assert!((g.eval(38.3309) - 1.483236).abs() < 1e-9);
        assert_eq!(g.eval(0.0), -0.05);
        assert!((g.eval(500.0) - 19.95).abs() < 1e-12);
    }

    #[test]
    fn shift_moves_intercept_only() {
        let m = RegressionModel::from_coeffs(vec![13.0, 0.99], [0.2, 0.93], XUnits::OccupancyFraction, YUnits::InstructionsPerArrival);
        let s = m.shifted(2.0);
        assert_eq!(s.coeffs, vec![15.0, 0.99]);
    }
}
