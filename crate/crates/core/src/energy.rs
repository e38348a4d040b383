//! Target distributions defined through their energy functions.
//!
//! Every target exposes the unnormalized potential `U(x)`, its exact gradient,
//! and an exact Hessian-vector product. Additive normalization constants are
//! dropped throughout; only energy differences ever enter acceptance ratios or
//! losses. A temperature `T` divides the potential (the momentum distribution
//! is untouched), so `T = 1` recovers the target itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("invalid energy spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite input to energy evaluation")]
    NonFiniteInput,
    #[error("energy evaluation produced a non-finite value (divergent state)")]
    NonFiniteOutput,
    #[error("dimension mismatch: model has n={expected}, input has n={got}")]
    DimMismatch { expected: usize, got: usize },
}

/// Which analytic target an [`EnergyModel`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    /// Diagonal Gaussian with variances spaced log-linearly in 10^-2 .. 10^2.
    Icg,
    /// 2-d Gaussian with variances [10^2, 10^-2] rotated by pi/4.
    Scg,
    /// Equal mixture of two isotropic Gaussians.
    Mog,
    /// Quadratic well perturbed by high-frequency cosine ripples.
    RoughWell,
    /// Identity-covariance Gaussian, mainly for tests and baselines.
    StdGaussian,
}

/// JSON description of a target, the on-disk interface for configs.
///
/// Unknown keys are rejected; keys irrelevant to `kind` are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    pub kind: EnergyKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl EnergySpec {
    pub fn new(kind: EnergyKind, dim: usize) -> Self {
        Self { kind, dim, eta: None, sigma2: None, separation: None, temperature: None }
    }

    pub fn build(&self) -> Result<EnergyModel, EnergyError> {
        build_energy(self)
    }
}

#[derive(Debug, Clone)]
enum Target {
    StdGaussian,
    Icg { variances: Vec<f64> },
    Scg { precision: [f64; 4], covariance: [f64; 4] },
    Mog { centroids: [Vec<f64>; 2], sigma2: f64 },
    RoughWell { eta: f64 },
}

/// An immutable, thread-safe target distribution.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    target: Target,
    dim: usize,
    temperature: f64,
}

/// Construct a model from a validated spec.
pub fn build_energy(spec: &EnergySpec) -> Result<EnergyModel, EnergyError> {
    let bad = |msg: String| Err(EnergyError::InvalidSpec(msg));
    if spec.dim == 0 {
        return bad("dim must be >= 1".into());
    }
    let temperature = spec.temperature.unwrap_or(1.0);
    if !(temperature > 0.0) || !temperature.is_finite() {
        return bad(format!("temperature must be positive and finite, got {temperature}"));
    }
    let target = match spec.kind {
        EnergyKind::StdGaussian => Target::StdGaussian,
        EnergyKind::Icg => {
            if spec.dim < 2 {
                return bad("icg requires dim >= 2: log-linear variance spacing is undefined for a single dimension".into());
            }
            let n = spec.dim;
            let variances: Vec<f64> = (0..n)
                .map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / (n - 1) as f64))
                .collect();
            Target::Icg { variances }
        }
        EnergyKind::Scg => {
            if spec.dim != 2 {
                return bad(format!("scg is defined only for dim = 2, got {}", spec.dim));
            }
            // Sigma = R diag(100, 0.01) R^T with R the pi/4 rotation.
            let (hi, lo) = (1e2, 1e-2);
            let covariance = [
                (hi + lo) / 2.0,
                (hi - lo) / 2.0,
                (hi - lo) / 2.0,
                (hi + lo) / 2.0,
            ];
            let (phi, plo) = (1.0 / hi, 1.0 / lo);
            let precision = [
                (phi + plo) / 2.0,
                (phi - plo) / 2.0,
                (phi - plo) / 2.0,
                (phi + plo) / 2.0,
            ];
            Target::Scg { precision, covariance }
        }
        EnergyKind::Mog => {
            let sigma2 = spec.sigma2.unwrap_or(0.1);
            let separation = spec.separation.unwrap_or(4.0);
            if !(sigma2 > 0.0) {
                return bad(format!("sigma2 must be positive, got {sigma2}"));
            }
            if !(separation > 0.0) {
                return bad(format!("separation must be positive, got {separation}"));
            }
            // Symmetric placement on the first axis.
            let mut c0 = vec![0.0; spec.dim];
            let mut c1 = vec![0.0; spec.dim];
            c0[0] = -separation / 2.0;
            c1[0] = separation / 2.0;
            Target::Mog { centroids: [c0, c1], sigma2 }
        }
        EnergyKind::RoughWell => {
            let eta = spec.eta.unwrap_or(1e-2);
            if !(eta > 0.0) {
                return bad(format!("eta must be positive, got {eta}"));
            }
            Target::RoughWell { eta }
        }
    };
    Ok(EnergyModel { target, dim: spec.dim, temperature })
}

impl EnergyModel {
    pub fn std_gaussian(dim: usize) -> Self {
        EnergyModel { target: Target::StdGaussian, dim, temperature: 1.0 }
    }

    pub fn kind(&self) -> EnergyKind {
        match self.target {
            Target::StdGaussian => EnergyKind::StdGaussian,
            Target::Icg { .. } => EnergyKind::Icg,
            Target::Scg { .. } => EnergyKind::Scg,
            Target::Mog { .. } => EnergyKind::Mog,
            Target::RoughWell { .. } => EnergyKind::RoughWell,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Same target at a different temperature.
    pub fn with_temperature(&self, temperature: f64) -> Self {
        let mut m = self.clone();
        m.temperature = temperature;
        m
    }

    /// ICG variance vector, if this is an ICG model.
    pub fn icg_variances(&self) -> Option<&[f64]> {
        match &self.target {
            Target::Icg { variances } => Some(variances),
            _ => None,
        }
    }

    /// Mixture centroids, if this is a mixture model.
    pub fn centroids(&self) -> Option<[&[f64]; 2]> {
        match &self.target {
            Target::Mog { centroids, .. } => Some([&centroids[0], &centroids[1]]),
            _ => None,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), EnergyError> {
        if x.len() != self.dim {
            return Err(EnergyError::DimMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EnergyError::NonFiniteInput);
        }
        Ok(())
    }

    /// Potential U(x)/T, up to an additive constant.
    pub fn energy(&self, x: &[f64]) -> Result<f64, EnergyError> {
        self.check_input(x)?;
        let u = match &self.target {
            Target::StdGaussian => 0.5 * dot(x, x),
            Target::Icg { variances } => {
                0.5 * x.iter().zip(variances).map(|(xi, s2)| xi * xi / s2).sum::<f64>()
            }
            Target::Scg { precision, .. } => {
                let px0 = precision[0] * x[0] + precision[1] * x[1];
                let px1 = precision[2] * x[0] + precision[3] * x[1];
                0.5 * (x[0] * px0 + x[1] * px1)
            }
            Target::Mog { centroids, sigma2 } => {
                let a0 = -sq_dist(x, &centroids[0]) / (2.0 * sigma2);
                let a1 = -sq_dist(x, &centroids[1]) / (2.0 * sigma2);
                let hi = a0.max(a1);
                // -log( (e^a0 + e^a1) / 2 ), stable form
                -(hi + ((a0 - hi).exp() + (a1 - hi).exp()).ln()) + std::f64::consts::LN_2
            }
            Target::RoughWell { eta } => {
                0.5 * dot(x, x) + eta * x.iter().map(|xi| (xi / eta).cos()).sum::<f64>()
            }
        };
        let u = u / self.temperature;
        if !u.is_finite() {
            return Err(EnergyError::NonFiniteOutput);
        }
        Ok(u)
    }

    /// Gradient of the tempered potential.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>, EnergyError> {
        let mut g = vec![0.0; self.dim];
        self.grad_into(x, &mut g)?;
        Ok(g)
    }

    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EnergyError> {
        self.check_input(x)?;
        match &self.target {
            Target::StdGaussian => out.copy_from_slice(x),
            Target::Icg { variances } => {
                for i in 0..self.dim {
                    out[i] = x[i] / variances[i];
                }
            }
            Target::Scg { precision, .. } => {
                out[0] = precision[0] * x[0] + precision[1] * x[1];
                out[1] = precision[2] * x[0] + precision[3] * x[1];
            }
            Target::Mog { centroids, sigma2 } => {
                let (p0, p1) = self.mog_weights(x, centroids, *sigma2);
                for i in 0..self.dim {
                    let g0 = (x[i] - centroids[0][i]) / sigma2;
                    let g1 = (x[i] - centroids[1][i]) / sigma2;
                    out[i] = p0 * g0 + p1 * g1;
                }
            }
            Target::RoughWell { eta } => {
                for i in 0..self.dim {
                    out[i] = x[i] - (x[i] / eta).sin();
                }
            }
        }
        for v in out.iter_mut() {
            *v /= self.temperature;
            if !v.is_finite() {
                return Err(EnergyError::NonFiniteOutput);
            }
        }
        Ok(())
    }

    /// Hessian-vector product (d^2 U/dx^2) w / T, evaluated analytically.
    pub fn hvp(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>, EnergyError> {
        self.check_input(x)?;
        if w.len() != self.dim {
            return Err(EnergyError::DimMismatch { expected: self.dim, got: w.len() });
        }
        let mut out = vec![0.0; self.dim];
        match &self.target {
            Target::StdGaussian => out.copy_from_slice(w),
            Target::Icg { variances } => {
                for i in 0..self.dim {
                    out[i] = w[i] / variances[i];
                }
            }
            Target::Scg { precision, .. } => {
                out[0] = precision[0] * w[0] + precision[1] * w[1];
                out[1] = precision[2] * w[0] + precision[3] * w[1];
            }
            Target::Mog { centroids, sigma2 } => {
                // H = I/s2 + g g^T - sum_k p_k g_k g_k^T with g = sum_k p_k g_k.
                let (p0, p1) = self.mog_weights(x, centroids, *sigma2);
                let mut g0 = vec![0.0; self.dim];
                let mut g1 = vec![0.0; self.dim];
                for i in 0..self.dim {
                    g0[i] = (x[i] - centroids[0][i]) / sigma2;
                    g1[i] = (x[i] - centroids[1][i]) / sigma2;
                }
                let gbar: Vec<f64> =
                    (0..self.dim).map(|i| p0 * g0[i] + p1 * g1[i]).collect();
                let gbar_w = dot(&gbar, w);
                let g0_w = dot(&g0, w);
                let g1_w = dot(&g1, w);
                for i in 0..self.dim {
                    out[i] = w[i] / sigma2 + gbar[i] * gbar_w
                        - p0 * g0[i] * g0_w
                        - p1 * g1[i] * g1_w;
                }
            }
            Target::RoughWell { eta } => {
                for i in 0..self.dim {
                    out[i] = w[i] * (1.0 - (x[i] / eta).cos() / eta);
                }
            }
        }
        for v in out.iter_mut() {
            *v /= self.temperature;
            if !v.is_finite() {
                return Err(EnergyError::NonFiniteOutput);
            }
        }
        Ok(out)
    }

    /// log p(x, v) up to constants: -U(x)/T - v.v/2.
    pub fn joint_log_prob(&self, x: &[f64], v: &[f64]) -> Result<f64, EnergyError> {
        if v.len() != self.dim {
            return Err(EnergyError::DimMismatch { expected: self.dim, got: v.len() });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(EnergyError::NonFiniteInput);
        }
        let lp = -self.energy(x)? - 0.5 * dot(v, v);
        if !lp.is_finite() {
            return Err(EnergyError::NonFiniteOutput);
        }
        Ok(lp)
    }

    fn mog_weights(&self, x: &[f64], centroids: &[Vec<f64>; 2], sigma2: f64) -> (f64, f64) {
        let a0 = -sq_dist(x, &centroids[0]) / (2.0 * sigma2);
        let a1 = -sq_dist(x, &centroids[1]) / (2.0 * sigma2);
        let hi = a0.max(a1);
        let e0 = (a0 - hi).exp();
        let e1 = (a1 - hi).exp();
        (e0 / (e0 + e1), e1 / (e0 + e1))
    }

    /// True mean of the target at T = 1 (zero for every kind built here).
    pub fn true_mean(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    /// Diagonal of the true covariance at T = 1.
    ///
    /// For the rough well the cosine perturbation shifts the Gaussian moments
    /// by O(exp(-1/(2 eta^2))), far below double precision at eta = 0.01.
    pub fn true_cov_diag(&self) -> Vec<f64> {
        match &self.target {
            Target::StdGaussian | Target::RoughWell { .. } => vec![1.0; self.dim],
            Target::Icg { variances } => variances.clone(),
            Target::Scg { covariance, .. } => vec![covariance[0], covariance[3]],
            Target::Mog { centroids, sigma2 } => (0..self.dim)
                .map(|i| {
                    let m = 0.5 * (centroids[0][i] + centroids[1][i]);
                    let d0 = centroids[0][i] - m;
                    let d1 = centroids[1][i] - m;
                    sigma2 + 0.5 * (d0 * d0 + d1 * d1)
                })
                .collect(),
        }
    }

    /// Full true covariance (row-major), needed for off-diagonal checks.
    pub fn true_cov(&self) -> Vec<f64> {
        let n = self.dim;
        let mut cov = vec![0.0; n * n];
        match &self.target {
            Target::Scg { covariance, .. } => {
                cov[0] = covariance[0];
                cov[1] = covariance[1];
                cov[2] = covariance[2];
                cov[3] = covariance[3];
            }
            _ => {
                let diag = self.true_cov_diag();
                for i in 0..n {
                    cov[i * n + i] = diag[i];
                }
            }
        }
        cov
    }

    /// Trace of the true covariance, the normalizer in autocorrelation.
    pub fn trace_cov(&self) -> f64 {
        self.true_cov_diag().iter().sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: EnergyKind, dim: usize) -> EnergySpec {
        EnergySpec::new(kind, dim)
    }

    fn all_kinds(dim: usize) -> Vec<EnergyModel> {
        let mut models = vec![
            spec(EnergyKind::StdGaussian, dim).build().unwrap(),
            spec(EnergyKind::RoughWell, dim).build().unwrap(),
            spec(EnergyKind::Mog, dim).build().unwrap(),
        ];
        if dim >= 2 {
            models.push(spec(EnergyKind::Icg, dim).build().unwrap());
        }
        if dim == 2 {
            models.push(spec(EnergyKind::Scg, dim).build().unwrap());
        }
        models
    }

    #[test]
    fn rough_well_matches_closed_form() {
        let m = spec(EnergyKind::RoughWell, 2).build().unwrap();
        // quadratic term zero at the origin, cos(0) = 1 on both axes
        assert!((m.energy(&[0.0, 0.0]).unwrap() - 0.02).abs() < 1e-15);
        let g = m.grad(&[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn icg_variances_span_the_log_range() {
        let m = spec(EnergyKind::Icg, 2).build().unwrap();
        let v = m.icg_variances().unwrap();
        assert!((v[0] - 1e-2).abs() < 1e-15);
        assert!((v[1] - 1e2).abs() < 1e-12);
        // 1/2 (0.1^2/0.01 + 100/100) = 1
        assert!((m.energy(&[0.1, 10.0]).unwrap() - 1.0).abs() < 1e-12);
        let g = m.grad(&[0.1, 10.0]).unwrap();
        assert!((g[0] - 10.0).abs() < 1e-12);
        assert!((g[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn scg_is_zero_at_origin_and_ridge_aligned() {
        let m = spec(EnergyKind::Scg, 2).build().unwrap();
        assert_eq!(m.energy(&[0.0, 0.0]).unwrap(), 0.0);
        // along the (1,1) diagonal the variance is 100, so U is tiny
        let on_ridge = m.energy(&[1.0, 1.0]).unwrap();
        let off_ridge = m.energy(&[1.0, -1.0]).unwrap();
        assert!(on_ridge < 1e-1 && off_ridge > 10.0);
    }

    #[test]
    fn mog_centroids_and_symmetry() {
        let m = spec(EnergyKind::Mog, 2).build().unwrap();
        let c = m.centroids().unwrap();
        assert_eq!(c[0], &[-2.0, 0.0][..]);
        assert_eq!(c[1], &[2.0, 0.0][..]);
        let u_left = m.energy(&[-2.0, 0.0]).unwrap();
        let u_right = m.energy(&[2.0, 0.0]).unwrap();
        assert!((u_left - u_right).abs() < 1e-14);
    }

    #[test]
    fn std_gaussian_gradient_is_position() {
        let m = EnergyModel::std_gaussian(3);
        assert_eq!(m.grad(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn hvp_closed_forms() {
        let m = EnergyModel::std_gaussian(2);
        assert_eq!(m.hvp(&[0.3, -0.7], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let icg = spec(EnergyKind::Icg, 2).build().unwrap();
        let h = icg.hvp(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((h[0] - 100.0).abs() < 1e-9 && h[1] == 0.0);
        let rw = spec(EnergyKind::RoughWell, 1).build().unwrap();
        let h = rw.hvp(&[0.0], &[1.0]).unwrap();
        assert!((h[0] - (-99.0)).abs() < 1e-9);
    }

    #[test]
    fn joint_log_prob_values() {
        let m = EnergyModel::std_gaussian(1);
        assert_eq!(m.joint_log_prob(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(m.joint_log_prob(&[0.0], &[2.0]).unwrap(), -2.0);
        let rw = spec(EnergyKind::RoughWell, 2).build().unwrap();
        assert!((rw.joint_log_prob(&[0.0, 0.0], &[0.0, 0.0]).unwrap() + 0.02).abs() < 1e-15);
    }

    #[test]
    fn temperature_divides_everything() {
        for model in all_kinds(2) {
            let hot = model.with_temperature(2.0);
            let x = [0.37, -1.2];
            let u1 = model.energy(&x).unwrap();
            let u2 = hot.energy(&x).unwrap();
            assert_eq!(u2, u1 / 2.0, "{:?}", model.kind());
            let g1 = model.grad(&x).unwrap();
            let g2 = hot.grad(&x).unwrap();
            for i in 0..2 {
                assert_eq!(g2[i], g1[i] / 2.0);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(spec(EnergyKind::Icg, 1).build().is_err());
        assert!(spec(EnergyKind::Scg, 3).build().is_err());
        let mut s = spec(EnergyKind::Mog, 2);
        s.sigma2 = Some(-1.0);
        assert!(s.build().is_err());
        let mut s = spec(EnergyKind::RoughWell, 2);
        s.eta = Some(0.0);
        assert!(s.build().is_err());
        let mut s = spec(EnergyKind::StdGaussian, 2);
        s.temperature = Some(0.0);
        assert!(s.build().is_err());
        s.dim = 0;
        assert!(s.build().is_err());
    }

    #[test]
    fn rejects_non_finite_input() {
        let m = EnergyModel::std_gaussian(2);
        assert!(matches!(m.energy(&[f64::NAN, 0.0]), Err(EnergyError::NonFiniteInput)));
        assert!(matches!(m.energy(&[f64::INFINITY, 0.0]), Err(EnergyError::NonFiniteInput)));
        assert!(matches!(m.energy(&[0.0]), Err(EnergyError::DimMismatch { .. })));
    }

    #[test]
    fn spec_json_round_trip_rejects_unknown_keys() {
        let s: EnergySpec =
            serde_json::from_str(r#"{"kind": "rough_well", "dim": 2, "eta": 0.01}"#).unwrap();
        assert_eq!(s.kind, EnergyKind::RoughWell);
        let bad = serde_json::from_str::<EnergySpec>(r#"{"kind": "icg", "dim": 2, "rho": 3}"#);
        assert!(bad.is_err());
    }

    /// Central finite difference of the energy along each coordinate.
    fn fd_grad(m: &EnergyModel, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = m.energy(&xp).unwrap();
            xp[i] = x[i] - h;
            let um = m.energy(&xp).unwrap();
            xp[i] = x[i];
            g[i] = (up - um) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [1usize, 2, 5] {
            for m in all_kinds(dim) {
                for _ in 0..100 {
                    let x: Vec<f64> =
                        (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let g = m.grad(&x).unwrap();
                    let fd = fd_grad(&m, &x, 1e-5);
                    let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                    for i in 0..dim {
                        let rel = (g[i] - fd[i]).abs() / scale;
                        assert!(
                            rel <= 1e-5,
                            "{:?} dim {dim}: grad[{i}]={} fd={} rel={rel}",
                            m.kind(),
                            g[i],
                            fd[i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hvp_matches_directional_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for dim in [1usize, 2, 5] {
            for m in all_kinds(dim) {
                for _ in 0..100 {
                    let x: Vec<f64> =
                        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let w: Vec<f64> =
                        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let hv = m.hvp(&x, &w).unwrap();
                    let h = 1e-5;
                    let xp: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + h * b).collect();
                    let xm: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a - h * b).collect();
                    let gp = m.grad(&xp).unwrap();
                    let gm = m.grad(&xm).unwrap();
                    let scale = hv.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                    for i in 0..dim {
                        let fd = (gp[i] - gm[i]) / (2.0 * h);
                        let rel = (hv[i] - fd).abs() / scale;
                        assert!(
                            rel <= 1e-4,
                            "{:?} dim {dim}: hvp[{i}]={} fd={fd} rel={rel}",
                            m.kind(),
                            hv[i]
                        );
                    }
                }
            }
        }
    }
}
