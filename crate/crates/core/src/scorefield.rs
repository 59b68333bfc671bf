//! Analytic score fields under the EDM parameterization (`α_t = 1`, `σ_t = t`).
//!
//! The marginal at time `t` of a Gaussian mixture is the same mixture with every
//! covariance inflated by `t² I`. Covariances are kept as eigen-pairs so that
//! `(Σ + t² I)⁻¹` reduces to one scalar per eigen-direction.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PasError, Result};
use crate::rng::{self, Purpose};
use crate::Vector;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Anything that yields a sampling direction `ε(x, t)`.
pub trait DirectionField: Sync {
    fn dim(&self) -> usize;
    fn noise_prediction(&self, x: &Vector, t: f64) -> Result<Vector>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: Vector,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vector>,
}

impl GaussianComponent {
    /// Directions not covered by `eigenvectors` carry zero variance.
    pub fn new(weight: f64, mean: Vector, eigenvalues: Vec<f64>, eigenvectors: Vec<Vector>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(PasError::invalid("component mean must be non-empty"));
        }
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(PasError::invalid(format!("component weight must lie in (0, 1], got {weight}")));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(PasError::invalid("component mean has non-finite entries"));
        }
        if eigenvalues.len() != eigenvectors.len() {
            return Err(PasError::invalid(format!(
                "{} eigenvalues but {} eigenvectors",
                eigenvalues.len(),
                eigenvectors.len()
            )));
        }
        if eigenvectors.len() > dim {
            return Err(PasError::invalid("more eigenvectors than dimensions"));
        }
        if let Some(l) = eigenvalues.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(PasError::invalid(format!("eigenvalues must be finite and >= 0, got {l}")));
        }
        for (a, u) in eigenvectors.iter().enumerate() {
            if u.len() != dim {
                return Err(PasError::invalid(format!(
                    "eigenvector {a} has length {} but the mean has {dim}",
                    u.len()
                )));
            }
            for (b, v) in eigenvectors.iter().enumerate().take(a + 1) {
                let want = if a == b { 1.0 } else { 0.0 };
                let dot = u.dot(v);
                if (dot - want).abs() > 1e-10 {
                    return Err(PasError::invalid(format!(
                        "eigenvectors {b} and {a} are not orthonormal (dot = {dot:e})"
                    )));
                }
            }
        }
        Ok(Self {
            weight,
            mean,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[Vector] {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn spans_full_space(&self) -> bool {
        self.eigenvectors.len() == self.dim()
    }

    /// Coordinates of `y` along each eigenvector, plus the residual outside
    /// their span (`None` when the eigenvectors span the whole space).
    fn decompose(&self, y: &Vector) -> (Vec<f64>, Option<Vector>) {
        let coords: Vec<f64> = self.eigenvectors.iter().map(|u| u.dot(y)).collect();
        if self.spans_full_space() {
            return (coords, None);
        }
        let mut rest = y.clone();
        for (a, u) in coords.iter().zip(&self.eigenvectors) {
            rest.axpy(-a, u, 1.0);
        }
        (coords, Some(rest))
    }

    /// Log-density of `N(μ, Σ + t² I)` at `x` and its gradient.
    fn log_density_and_score(&self, x: &Vector, t: f64) -> (f64, Vector) {
        let t2 = t * t;
        let y = x - &self.mean;
        let (coords, rest) = self.decompose(&y);

        let mut quad = 0.0;
        let mut log_det = 0.0;
        let mut score = Vector::zeros(self.dim());
        for ((a, lambda), u) in coords.iter().zip(&self.eigenvalues).zip(&self.eigenvectors) {
            let var = lambda + t2;
            quad += a * a / var;
            log_det += var.ln();
            score.axpy(-a / var, u, 1.0);
        }
        if let Some(rest) = rest {
            let free = (self.dim() - self.eigenvectors.len()) as f64;
            quad += rest.norm_squared() / t2;
            log_det += free * t2.ln();
            score.axpy(-1.0 / t2, &rest, 1.0);
        }
        let log_pdf = -0.5 * (quad + log_det + self.dim() as f64 * LN_2PI);
        (log_pdf, score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureScoreModel {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GaussianMixtureScoreModel {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| PasError::invalid("a model needs at least one component"))?;
        let dim = first.dim();
        if let Some(c) = components.iter().find(|c| c.dim() != dim) {
            return Err(PasError::invalid(format!(
                "component dimension {} differs from {dim}",
                c.dim()
            )));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PasError::invalid(format!("component weights sum to {total}, not 1")));
        }
        Ok(Self { components, dim })
    }

    pub fn single(component: GaussianComponent) -> Result<Self> {
        Self::new(vec![component])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &Vector, t: f64) -> Result<()> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(PasError::invalid(format!("time must be finite and > 0, got {t}")));
        }
        if x.len() != self.dim {
            return Err(PasError::invalid(format!(
                "state has dimension {} but the model has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn log_density_and_score(&self, x: &Vector, t: f64) -> (f64, Vector) {
        if let [only] = self.components.as_slice() {
            return only.log_density_and_score(x, t);
        }
        let parts: Vec<(f64, Vector)> = self
            .components
            .iter()
            .map(|c| {
                let (lp, s) = c.log_density_and_score(x, t);
                (c.weight.ln() + lp, s)
            })
            .collect();
        let max = parts.iter().map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        let mut score = Vector::zeros(self.dim);
        for (l, s) in &parts {
            let w = (l - max).exp();
            norm += w;
            score.axpy(w, s, 1.0);
        }
        score /= norm;
        (max + norm.ln(), score)
    }

    /// `log q_t(x)`.
    pub fn log_density(&self, x: &Vector, t: f64) -> Result<f64> {
        self.check(x, t)?;
        Ok(self.log_density_and_score(x, t).0)
    }

    /// `∇_x log q_t(x)`, with mixture posteriors weighted in the log domain.
    pub fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        self.check(x, t)?;
        Ok(self.log_density_and_score(x, t).1)
    }

    /// `ε(x, t) = -t · score`.
    pub fn noise_prediction(&self, x: &Vector, t: f64) -> Result<Vector> {
        Ok(self.score(x, t)? * -t)
    }

    /// `x + t² · score`.
    pub fn data_prediction(&self, x: &Vector, t: f64) -> Result<Vector> {
        let s = self.score(x, t)?;
        Ok(x + s * (t * t))
    }

    /// Closed-form solution of `dx/dt = ε(x, t)` from `(x_T, T)` back to `t`.
    ///
    /// Each eigen-coordinate of `x - μ` scales by `√((λ + t²)/(λ + T²))`; directions
    /// outside the listed eigenvectors scale by `t / T`. Only single-Gaussian models
    /// have this form.
    pub fn exact_trajectory(&self, x_t_max: &Vector, t: f64, t_max: f64) -> Result<Vector> {
        let [component] = self.components.as_slice() else {
            return Err(PasError::UnsupportedModel(format!(
                "exact trajectories need a single Gaussian, model has {} components",
                self.components.len()
            )));
        };
        self.check(x_t_max, t)?;
        if !(t <= t_max && t_max.is_finite()) {
            return Err(PasError::invalid(format!("need 0 < t <= T, got t = {t}, T = {t_max}")));
        }
        if t == t_max {
            return Ok(x_t_max.clone());
        }
        let y = x_t_max - &component.mean;
        let (coords, rest) = component.decompose(&y);
        let (t2, big2) = (t * t, t_max * t_max);
        let mut x = component.mean.clone();
        for ((a, lambda), u) in coords.iter().zip(&component.eigenvalues).zip(&component.eigenvectors) {
            let ratio = ((lambda + t2) / (lambda + big2)).sqrt();
            x.axpy(ratio * a, u, 1.0);
        }
        if let Some(rest) = rest {
            x.axpy(t / t_max, &rest, 1.0);
        }
        Ok(x)
    }
}

impl DirectionField for GaussianMixtureScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_prediction(&self, x: &Vector, t: f64) -> Result<Vector> {
        GaussianMixtureScoreModel::noise_prediction(self, x, t)
    }
}

/// Orthonormal basis of `R^dim` drawn from the Haar measure, as columns.
pub fn random_orthonormal_basis(dim: usize, seed: u64) -> Vec<Vector> {
    let mut rng = rng::stream(seed, Purpose::ModelPreset, 0);
    let gauss = DMatrix::from_iterator(
        dim,
        dim,
        (0..dim * dim).map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)),
    );
    let qr = gauss.qr();
    let (q, r) = qr.unpack();
    // sign fix so the distribution is uniform rather than QR-convention dependent
    (0..dim)
        .map(|j| {
            let col: Vector = q.column(j).into_owned();
            if r[(j, j)] < 0.0 {
                -col
            } else {
                col
            }
        })
        .collect()
}

/// Spectrum `leading` on the first basis vectors, `floor` on the remaining ones.
fn spectrum(dim: usize, leading: &[f64], floor: f64) -> Result<Vec<f64>> {
    if leading.len() > dim {
        return Err(PasError::invalid(format!(
            "{} leading eigenvalues exceed dimension {dim}",
            leading.len()
        )));
    }
    let mut out = leading.to_vec();
    out.resize(dim, floor);
    Ok(out)
}

fn default_variance() -> f64 {
    1.0
}

fn default_manifold_dim() -> usize {
    64
}

fn default_leading() -> Vec<f64> {
    vec![25.0, 9.0]
}

fn default_floor() -> f64 {
    1e-4
}

fn default_mixture_leading() -> Vec<f64> {
    vec![1.0, 0.25]
}

fn default_mixture_mean_norm() -> f64 {
    4.0
}

/// Named analytic models; random pieces (basis, mean direction) come from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Preset {
    /// `N(0, variance · I)`.
    Isotropic {
        dim: usize,
        #[serde(default = "default_variance")]
        variance: f64,
    },
    /// Single Gaussian with a few large eigenvalues and a small floor elsewhere.
    Rank2Manifold {
        #[serde(default = "default_manifold_dim")]
        dim: usize,
        #[serde(default = "default_leading")]
        eigenvalues: Vec<f64>,
        #[serde(default = "default_floor")]
        floor: f64,
        #[serde(default)]
        mean_norm: f64,
    },
    /// Two equal-weight components at `±μ` sharing one covariance.
    MixtureSymmetric {
        #[serde(default = "default_manifold_dim")]
        dim: usize,
        #[serde(default = "default_mixture_leading")]
        eigenvalues: Vec<f64>,
        #[serde(default = "default_floor")]
        floor: f64,
        #[serde(default = "default_mixture_mean_norm")]
        mean_norm: f64,
    },
}

impl Preset {
    pub fn rank2_manifold(dim: usize) -> Self {
        Preset::Rank2Manifold {
            dim,
            eigenvalues: default_leading(),
            floor: default_floor(),
            mean_norm: 0.0,
        }
    }

    pub fn mixture_symmetric(dim: usize) -> Self {
        Preset::MixtureSymmetric {
            dim,
            eigenvalues: default_mixture_leading(),
            floor: default_floor(),
            mean_norm: default_mixture_mean_norm(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<GaussianMixtureScoreModel> {
        match self {
            Preset::Isotropic { dim, variance } => {
                let dim = *dim;
                if dim == 0 {
                    return Err(PasError::invalid("dim must be >= 1"));
                }
                let basis = (0..dim).map(|j| Vector::from_fn(dim, |r, _| if r == j { 1.0 } else { 0.0 }));
                let comp = GaussianComponent::new(1.0, Vector::zeros(dim), vec![*variance; dim], basis.collect())?;
                GaussianMixtureScoreModel::single(comp)
            }
            Preset::Rank2Manifold {
                dim,
                eigenvalues,
                floor,
                mean_norm,
            } => {
                let basis = random_orthonormal_basis(*dim, seed);
                // the mean points along a basis direction outside the leading block
                let mean = mean_direction(&basis, eigenvalues.len()) * *mean_norm;
                let comp = GaussianComponent::new(1.0, mean, spectrum(*dim, eigenvalues, *floor)?, basis)?;
                GaussianMixtureScoreModel::single(comp)
            }
            Preset::MixtureSymmetric {
                dim,
                eigenvalues,
                floor,
                mean_norm,
            } => {
                let basis = random_orthonormal_basis(*dim, seed);
                let mean = mean_direction(&basis, eigenvalues.len()) * *mean_norm;
                let spec = spectrum(*dim, eigenvalues, *floor)?;
                let plus = GaussianComponent::new(0.5, mean.clone(), spec.clone(), basis.clone())?;
                let minus = GaussianComponent::new(0.5, -mean, spec, basis)?;
                GaussianMixtureScoreModel::new(vec![plus, minus])
            }
        }
    }
}

fn mean_direction(basis: &[Vector], leading: usize) -> Vector {
    let dim = basis[0].len();
    basis.get(leading).cloned().unwrap_or_else(|| Vector::zeros(dim))
}

/// On-disk form of an explicit model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dimension: usize,
    pub components: Vec<ComponentFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFile {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_model(model: &GaussianMixtureScoreModel) -> Self {
        Self {
            dimension: model.dim,
            components: model
                .components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    eigenvalues: c.eigenvalues.clone(),
                    eigenvectors: c.eigenvectors.iter().map(|u| u.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<GaussianMixtureScoreModel> {
        let components = self
            .components
            .into_iter()
            .map(|c| {
                GaussianComponent::new(
                    c.weight,
                    Vector::from_vec(c.mean),
                    c.eigenvalues,
                    c.eigenvectors.into_iter().map(Vector::from_vec).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let model = GaussianMixtureScoreModel::new(components)?;
        if model.dim != self.dimension {
            return Err(PasError::invalid(format!(
                "declared dimension {} but components have {}",
                self.dimension, model.dim
            )));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<GaussianMixtureScoreModel> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<ModelFile>(&text)?.into_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(dim: usize) -> GaussianMixtureScoreModel {
        Preset::Isotropic { dim, variance: 1.0 }.build(0).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn isotropic_closed_forms() {
        let m = iso(2);
        let x = v(&[2.0, 0.0]);
        // score = -x/(1+t²), ε = t x/(1+t²), x_θ = x/(1+t²)
        let s = m.score(&x, 1.0).unwrap();
        assert!((s - v(&[-1.0, 0.0])).norm() < 1e-15);
        let e = m.noise_prediction(&x, 1.0).unwrap();
        assert!((e - v(&[1.0, 0.0])).norm() < 1e-15);
        let d = m.data_prediction(&x, 1.0).unwrap();
        assert!((d - v(&[1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn noise_prediction_is_scaled_score() {
        let m = Preset::mixture_symmetric(8).build(3).unwrap();
        let x = rng::initial_noise(1, 0, 8, 2.0);
        for t in [0.01, 0.7, 5.0] {
            let s = m.score(&x, t).unwrap();
            assert_eq!(m.noise_prediction(&x, t).unwrap(), s * -t);
        }
    }

    #[test]
    fn data_prediction_relations() {
        let m = Preset::mixture_symmetric(8).build(3).unwrap();
        let x = rng::initial_noise(1, 0, 8, 2.0);
        for t in [0.05, 1.0, 10.0] {
            let dp = m.data_prediction(&x, t).unwrap();
            let via_eps = &x - m.noise_prediction(&x, t).unwrap() * t;
            assert!((dp - via_eps).amax() < 1e-12);
        }
        let dp = m.data_prediction(&x, 1e-8).unwrap();
        assert!((dp - &x).amax() < 1e-6);
    }

    #[test]
    fn mode_and_symmetry_give_zero_score() {
        let m = iso(3);
        assert_eq!(m.noise_prediction(&Vector::zeros(3), 0.5).unwrap(), Vector::zeros(3));
        let mix = Preset::mixture_symmetric(6).build(9).unwrap();
        let s = mix.score(&Vector::zeros(6), 0.3).unwrap();
        assert!(s.amax() < 1e-14, "{s}");
    }

    #[test]
    fn rejects_bad_time_and_shape() {
        let m = iso(2);
        assert!(m.score(&v(&[1.0, 1.0]), 0.0).is_err());
        assert!(m.score(&v(&[1.0, 1.0]), -1.0).is_err());
        assert!(m.score(&v(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn score_matches_finite_differences() {
        let models = [
            iso(4),
            Preset::rank2_manifold(6).build(2).unwrap(),
            Preset::mixture_symmetric(6).build(5).unwrap(),
        ];
        let mut probe = rng::stream(17, Purpose::Probe, 0);
        for m in &models {
            let dim = m.dimension();
            for _ in 0..100 {
                let t = 0.3 + 3.0 * rand::Rng::random::<f64>(&mut probe);
                let x = rng::standard_normal_vector(&mut probe, dim) * 2.0;
                let s = m.score(&x, t).unwrap();
                let fd = Vector::from_fn(dim, |j, _| {
                    let h = 1e-5;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    (m.log_density(&xp, t).unwrap() - m.log_density(&xm, t).unwrap()) / (2.0 * h)
                });
                let rel = (&s - &fd).norm() / s.norm().max(1e-3);
                assert!(rel < 1e-6, "rel err {rel:e} at t={t}");
            }
        }
    }

    #[test]
    fn score_is_finite_far_from_means() {
        let m = Preset::mixture_symmetric(8).build(1).unwrap();
        let mut x = Vector::zeros(8);
        x[0] = 50.0 * 5.0 + 1e3;
        for t in [0.002, 0.1, 1.0] {
            assert!(m.score(&x, t).unwrap().iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn partial_eigenbasis_means_zero_variance_elsewhere() {
        // λ = 1 along e_0, nothing listed along e_1
        let comp = GaussianComponent::new(1.0, Vector::zeros(2), vec![1.0], vec![v(&[1.0, 0.0])]).unwrap();
        let m = GaussianMixtureScoreModel::single(comp).unwrap();
        let s = m.score(&v(&[2.0, 3.0]), 2.0).unwrap();
        assert!((s - v(&[-2.0 / 5.0, -3.0 / 4.0])).norm() < 1e-15);
        let x = m.exact_trajectory(&v(&[4.0, 4.0]), 1.0, 2.0).unwrap();
        assert!((x - v(&[4.0 * (2.0f64 / 5.0).sqrt(), 2.0])).norm() < 1e-14);
    }

    #[test]
    fn exact_trajectory_one_dimensional() {
        let m = iso(1);
        let x = m.exact_trajectory(&v(&[80.0]), 0.002, 80.0).unwrap();
        let want = 80.0 * ((1.0 + 0.002f64 * 0.002) / 6401.0).sqrt();
        assert!((x[0] - want).abs() < 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-2);
        assert_eq!(m.exact_trajectory(&v(&[80.0]), 80.0, 80.0).unwrap(), v(&[80.0]));
    }

    #[test]
    fn exact_trajectory_rejects_mixtures() {
        let m = Preset::mixture_symmetric(4).build(0).unwrap();
        assert!(matches!(
            m.exact_trajectory(&Vector::zeros(4), 1.0, 2.0),
            Err(PasError::UnsupportedModel(_))
        ));
    }

    #[test]
    fn exact_trajectory_solves_the_flow() {
        let m = Preset::Rank2Manifold {
            dim: 8,
            eigenvalues: vec![25.0, 9.0, 0.5],
            floor: 1e-4,
            mean_norm: 2.0,
        }
        .build(4)
        .unwrap();
        let mut probe = rng::stream(23, Purpose::Probe, 1);
        for _ in 0..50 {
            let x_t_max = rng::standard_normal_vector(&mut probe, 8) * 80.0;
            let t = 0.05 + 40.0 * rand::Rng::random::<f64>(&mut probe);
            let h = 1e-4 * t;
            let up = m.exact_trajectory(&x_t_max, t + h, 80.0).unwrap();
            let down = m.exact_trajectory(&x_t_max, t - h, 80.0).unwrap();
            let deriv = (up - down) / (2.0 * h);
            let here = m.exact_trajectory(&x_t_max, t, 80.0).unwrap();
            let eps = m.noise_prediction(&here, t).unwrap();
            let rel = (&deriv - &eps).norm() / eps.norm();
            assert!(rel < 1e-5, "residual {rel:e} at t={t}");
        }
    }

    #[test]
    fn validation_errors() {
        let e0 = v(&[1.0, 0.0]);
        let skew = v(&[0.6, 0.9]);
        assert!(GaussianComponent::new(1.0, Vector::zeros(2), vec![1.0, 1.0], vec![e0.clone(), skew]).is_err());
        assert!(GaussianComponent::new(0.0, Vector::zeros(2), vec![], vec![]).is_err());
        assert!(GaussianComponent::new(1.0, Vector::zeros(2), vec![-1.0], vec![e0.clone()]).is_err());
        let c = GaussianComponent::new(0.4, Vector::zeros(2), vec![1.0], vec![e0]).unwrap();
        assert!(GaussianMixtureScoreModel::new(vec![c]).is_err());
        assert!(GaussianMixtureScoreModel::new(vec![]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = Preset::mixture_symmetric(5).build(12).unwrap();
        let text = serde_json::to_string(&ModelFile::from_model(&m)).unwrap();
        let back = serde_json::from_str::<ModelFile>(&text).unwrap().into_model().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn preset_json_names() {
        let p: Preset = serde_json::from_str(r#"{"name":"rank2-manifold","dim":16}"#).unwrap();
        assert_eq!(p, Preset::rank2_manifold(16));
        let p: Preset = serde_json::from_str(r#"{"name":"isotropic","dim":3}"#).unwrap();
        assert!(matches!(p, Preset::Isotropic { dim: 3, .. }));
        assert!(serde_json::from_str::<Preset>(r#"{"name":"isotropic","dim":3,"bogus":1}"#).is_err());
        let p: Preset = serde_json::from_str(r#"{"name":"mixture-symmetric"}"#).unwrap();
        assert_eq!(p, Preset::mixture_symmetric(64));
    }

    #[test]
    fn presets_are_seed_deterministic() {
        let a = Preset::rank2_manifold(16).build(5).unwrap();
        let b = Preset::rank2_manifold(16).build(5).unwrap();
        let c = Preset::rank2_manifold(16).build(6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
