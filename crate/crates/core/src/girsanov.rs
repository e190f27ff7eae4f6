//! Trajectory-measure densities at desk scale.
//!
//! A law on trajectories `η(0..=T)` is represented by a finite sample of
//! paths. The free law `P` drives each neuron by noise alone; the mean-field
//! propagator `L(μ)` adds an independent Gaussian field whose mean and
//! covariance are plug-in averages over the sample representing `μ`. Both
//! have explicit densities with respect to `P`, and so does the law of a
//! finite Gaussian network, `exp N Γ(μ_u)`.
//!
//! The field integral is done in closed form through the eigendecomposition
//! `Σ = Q Λ Qᵀ`. With `r = Qᵀ(Φ - m)`,
//!
//! ```text
//! log dL/dP = (Φ·m - |m|²/2)/σ² - ½ Σ log(1 + λᵢ/σ²) + Σ rᵢ² λᵢ / (2σ²(σ² + λᵢ))
//! ```
//!
//! which stays finite when `Σ` is singular.

use crate::config::{leak_map, InitialLaw, NetworkConfig, NeuronModel};
use crate::error::{Error, Result};
use crate::netsim::TrajectoryEnsemble;
use crate::rng::{derive_seed, rng_stream, RngStream, StreamId, StreamPurpose};
use crate::scalar::{mean_and_stderr, pairwise_sum};
use crate::transfer::TransferFunction;
use crate::weights::WeightLaw;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

/// Smallest eigenvalue accepted for a field covariance.
pub const EIGEN_FLOOR: f64 = -1e-10;

/// Single-neuron dynamics without coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryLaw {
    pub model: NeuronModel,
    pub initial: InitialLaw,
    pub threshold: f64,
    pub noise: f64,
    pub horizon: usize,
}

impl TrajectoryLaw {
    pub fn from_config(config: &NetworkConfig) -> Self {
        TrajectoryLaw {
            model: config.model,
            initial: config.initial,
            threshold: config.threshold,
            noise: config.noise,
            horizon: config.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::config(format!(
                "trajectory densities need noise > 0 (got {})",
                self.noise
            )));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        self.model.validate(self.threshold)
    }

    pub fn transfer(&self) -> TransferFunction<f64> {
        self.model.transfer()
    }

    /// Deterministic part of `η(t+1)` given `η(t)`, excluding the field.
    #[inline]
    fn drift(&self, prev: f64) -> f64 {
        let theta = self.threshold;
        match self.model {
            NeuronModel::IntegrateFire { leak, reset } => leak_map(prev + theta, leak, reset, theta) - theta,
            _ => -theta,
        }
    }

    /// `Φ_{t+1}(η)` for `t = 0..T`: the innovation that is pure noise under `P`.
    pub fn innovations(&self, path: &[f64]) -> Vec<f64> {
        path.windows(2).map(|w| w[1] - self.drift(w[0])).collect()
    }

    fn free_path(&self, rng: &mut RngStream, field: Option<&[f64]>) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.horizon + 1);
        path.push(self.initial.sample(rng));
        for t in 0..self.horizon {
            let w = self.noise * rng.sample::<f64, _>(StandardNormal);
            let xi = field.map_or(0.0, |f| f[t]);
            path.push(self.drift(path[t]) + xi + w);
        }
        path
    }
}

/// Gaussian coupling statistics `(J̄, J²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Coupling {
    pub mean: f64,
    pub variance: f64,
}

impl Coupling {
    pub fn new(mean: f64, variance: f64) -> Self {
        Coupling { mean, variance }
    }

    /// Only Gaussian weights give an exact network density.
    pub fn from_law(law: &WeightLaw) -> Result<Self> {
        match *law {
            WeightLaw::Gaussian { mean, variance } => Ok(Coupling { mean, variance }),
            WeightLaw::DiluteTwoPoint { .. } => Err(Error::UnsupportedLaw),
        }
    }
}

/// Equal-length paths `η(0..=T)` stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    horizon: usize,
    data: Vec<f64>,
}

impl PathSample {
    pub fn new(horizon: usize, data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(horizon + 1) {
            return Err(Error::config(format!(
                "{} values do not split into paths of length {}",
                data.len(),
                horizon + 1
            )));
        }
        Ok(PathSample { horizon, data })
    }

    pub fn from_paths(paths: &[Vec<f64>]) -> Result<Self> {
        let horizon = paths.first().map_or(0, |p| p.len().saturating_sub(1));
        if paths.iter().any(|p| p.len() != horizon + 1) {
            return Err(Error::config("paths have different lengths"));
        }
        PathSample::new(horizon, paths.concat())
    }

    /// One path per neuron.
    pub fn from_ensemble(ensemble: &TrajectoryEnsemble) -> Self {
        let data = (0..ensemble.n()).flat_map(|i| ensemble.neuron(i)).collect();
        PathSample {
            horizon: ensemble.horizon(),
            data,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.horizon + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn path(&self, k: usize) -> &[f64] {
        let w = self.horizon + 1;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn paths(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.horizon + 1)
    }

    /// Sample with its paths reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&k| self.path(k).iter().copied()).collect();
        PathSample {
            horizon: self.horizon,
            data,
        }
    }

    /// Mean of `g` over paths.
    pub fn average(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let v: Vec<f64> = self.paths().map(g).collect();
        pairwise_sum(&v) / v.len() as f64
    }
}

/// The Gaussian field law `g_μ` over `t = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFieldLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Plug-in `g_μ`: `m(t+1) = J̄ ⟨f(η(t))⟩`, `Σ(s+1, t+1) = J² ⟨f(η(s)) f(η(t))⟩`.
pub fn gmu_from_sample(sample: &PathSample, coupling: Coupling, transfer: &TransferFunction<f64>) -> GaussianFieldLaw {
    let horizon = sample.horizon();
    let m = sample.len() as f64;
    let mut mean = DVector::zeros(horizon);
    let mut cov = DMatrix::zeros(horizon, horizon);
    let mut x = vec![0.0; horizon];
    for path in sample.paths() {
        for (xt, &u) in x.iter_mut().zip(path) {
            *xt = transfer.eval(u);
        }
        for t in 0..horizon {
            mean[t] += x[t];
            for s in 0..=t {
                cov[(s, t)] += x[s] * x[t];
            }
        }
    }
    for t in 0..horizon {
        mean[t] *= coupling.mean / m;
        for s in 0..=t {
            let v = cov[(s, t)] * coupling.variance / m;
            cov[(s, t)] = v;
            cov[(t, s)] = v;
        }
    }
    GaussianFieldLaw { mean, cov }
}

/// `g_μ` diagonalised for repeated density evaluation and sampling.
#[derive(Clone, Debug)]
pub struct FieldKernel {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    sigma2: f64,
    log_det: f64,
}

impl FieldKernel {
    pub fn new(field: &GaussianFieldLaw, noise: f64) -> Result<Self> {
        let eigen = SymmetricEigen::new(field.cov.clone());
        let min = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= EIGEN_FLOOR) || eigen.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning {
                min_eigenvalue: min,
                spectrum: eigen.eigenvalues.iter().copied().collect(),
            });
        }
        let sigma2 = noise * noise;
        let eigenvalues = eigen.eigenvalues.map(|v| v.max(0.0));
        let log_det = eigenvalues.iter().map(|l| (l / sigma2).ln_1p()).sum();
        Ok(FieldKernel {
            mean: field.mean.clone(),
            basis: eigen.eigenvectors,
            eigenvalues,
            sigma2,
            log_det,
        })
    }

    /// `log E_ξ exp(Σ_t (Φ_t ξ_t - ξ_t²/2) / σ²)` for innovations `Φ`.
    pub fn log_density(&self, innovations: &[f64]) -> f64 {
        let phi = DVector::from_column_slice(innovations);
        let s2 = self.sigma2;
        let shift = (phi.dot(&self.mean) - 0.5 * self.mean.norm_squared()) / s2;
        let r = self.basis.tr_mul(&(phi - &self.mean));
        let quad: f64 = r
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(ri, li)| ri * ri * li / (s2 + li))
            .sum();
        shift - 0.5 * self.log_det + quad / (2.0 * s2)
    }

    /// One draw `ξ ~ g_μ`.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let z = DVector::from_fn(self.eigenvalues.len(), |i, _| {
            self.eigenvalues[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        (&self.mean + &self.basis * z).iter().copied().collect()
    }
}

fn check_horizon(law: &TrajectoryLaw, sample: &PathSample) -> Result<()> {
    if sample.horizon() != law.horizon {
        return Err(Error::config(format!(
            "sample horizon {} differs from law horizon {}",
            sample.horizon(),
            law.horizon
        )));
    }
    Ok(())
}

/// `dL(μ)/dP` for a fixed `μ`.
#[derive(Clone, Debug)]
pub struct PropagatorDensity {
    law: TrajectoryLaw,
    kernel: FieldKernel,
}

impl PropagatorDensity {
    pub fn new(mu: &PathSample, law: &TrajectoryLaw, coupling: Coupling) -> Result<Self> {
        law.validate()?;
        check_horizon(law, mu)?;
        let field = gmu_from_sample(mu, coupling, &law.transfer());
        Ok(PropagatorDensity {
            law: *law,
            kernel: FieldKernel::new(&field, law.noise)?,
        })
    }

    pub fn log_density(&self, path: &[f64]) -> f64 {
        self.kernel.log_density(&self.law.innovations(path))
    }

    /// `M` paths of `L(μ)`; path `k` uses stream `(Sampling, k)` of `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> PathSample {
        let data = (0..count)
            .into_par_iter()
            .flat_map_iter(|k| {
                let mut rng = sampling_stream(seed, k);
                let xi = self.kernel.sample(&mut rng);
                self.law.free_path(&mut rng, Some(&xi))
            })
            .collect();
        PathSample {
            horizon: self.law.horizon,
            data,
        }
    }
}

fn sampling_stream(seed: u64, k: usize) -> RngStream {
    rng_stream(seed, StreamId::new(StreamPurpose::Sampling, k as u64))
}

/// `log dL(μ)/dP(η)`.
pub fn log_density_l(mu: &PathSample, law: &TrajectoryLaw, coupling: Coupling, path: &[f64]) -> Result<f64> {
    if path.len() != law.horizon + 1 {
        return Err(Error::config("path length differs from horizon + 1"));
    }
    Ok(PropagatorDensity::new(mu, law, coupling)?.log_density(path))
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let (mean, stderr) = mean_and_stderr(values);
        Estimate {
            mean,
            stderr,
            count: values.len(),
        }
    }

    /// `|mean - target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }
}

/// `Γ(μ) = ∫ log dL(μ)/dP dμ` over the sample representing `μ`.
pub fn gamma_functional(mu: &PathSample, law: &TrajectoryLaw, coupling: Coupling) -> Result<Estimate> {
    let density = PropagatorDensity::new(mu, law, coupling)?;
    let values: Vec<f64> = mu.paths().map(|p| density.log_density(p)).collect();
    Ok(Estimate::from_values(&values))
}

/// `N Γ(μ_u)` for the paths of all `N` neurons.
pub fn network_log_density_of(paths: &PathSample, law: &TrajectoryLaw, coupling: Coupling) -> Result<f64> {
    let density = PropagatorDensity::new(paths, law, coupling)?;
    let values: Vec<f64> = paths.paths().map(|p| density.log_density(p)).collect();
    Ok(pairwise_sum(&values))
}

/// `log dQ_N/dP^{⊗N}(u)` for a simulated network with Gaussian weights.
pub fn network_log_density(ensemble: &TrajectoryEnsemble) -> Result<f64> {
    let coupling = Coupling::from_law(&ensemble.config.weights)?;
    let law = TrajectoryLaw::from_config(&ensemble.config);
    network_log_density_of(&PathSample::from_ensemble(ensemble), &law, coupling)
}

/// `M` paths of the free law `P`; path `k` uses stream `(Sampling, k)`.
pub fn sample_free(law: &TrajectoryLaw, count: usize, seed: u64) -> Result<PathSample> {
    law.validate()?;
    let data = (0..count)
        .into_par_iter()
        .flat_map_iter(|k| law.free_path(&mut sampling_stream(seed, k), None))
        .collect();
    PathSample::new(law.horizon, data)
}

/// Particle iterates `S_0 ~ P`, `S_{k+1} ~ L(S_k)`, returning `S_0..=S_iterations`.
/// After `T` steps the law of the iterate is the mean-field solution `μ_T`.
pub fn mfe_iterates(
    law: &TrajectoryLaw,
    coupling: Coupling,
    count: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<PathSample>> {
    let mut out = vec![sample_free(law, count, derive_seed(seed, 0))?];
    for k in 1..=iterations {
        let density = PropagatorDensity::new(&out[k - 1], law, coupling)?;
        out.push(density.sample(count, derive_seed(seed, k as u64)));
    }
    Ok(out)
}

/// Particle sample of `μ_T = L^T(P)` (`T + 1` propagations).
pub fn mfe_sample(law: &TrajectoryLaw, coupling: Coupling, count: usize, seed: u64) -> Result<PathSample> {
    Ok(mfe_iterates(law, coupling, count, law.horizon + 1, seed)?
        .pop()
        .expect("at least one iterate"))
}

/// A sample together with what is known about the law it came from.
#[derive(Clone, Debug)]
pub enum LawSample {
    /// Drawn from `P`.
    Free(PathSample),
    /// Drawn from `L(μ)` with `μ` represented by `mu`.
    Propagated {
        mu: PathSample,
        coupling: Coupling,
        sample: PathSample,
    },
    /// Origin unknown; no density is available.
    Unknown(PathSample),
}

impl LawSample {
    pub fn sample(&self) -> &PathSample {
        match self {
            LawSample::Free(s) | LawSample::Unknown(s) => s,
            LawSample::Propagated { sample, .. } => sample,
        }
    }
}

/// `I(ν, P) = ∫ log dν/dP dν` from a sample of `ν`.
pub fn relative_entropy_estimate(nu: &LawSample, law: &TrajectoryLaw) -> Result<Estimate> {
    match nu {
        LawSample::Free(s) => {
            check_horizon(law, s)?;
            Ok(Estimate::from_values(&vec![0.0; s.len()]))
        }
        LawSample::Propagated { mu, coupling, sample } => {
            check_horizon(law, sample)?;
            let density = PropagatorDensity::new(mu, law, *coupling)?;
            let values: Vec<f64> = sample.paths().map(|p| density.log_density(p)).collect();
            Ok(Estimate::from_values(&values))
        }
        LawSample::Unknown(_) => Err(Error::UnsupportedLaw),
    }
}

/// `H(ν) = I(ν, P) - Γ(ν)` for `ν = L(μ)`, estimated from paired per-path
/// differences `log dL(μ)/dP - log dL(ν)/dP` over the sample of `ν`.
pub fn rate_function_estimate(
    mu: &PathSample,
    nu: &PathSample,
    law: &TrajectoryLaw,
    coupling: Coupling,
) -> Result<Estimate> {
    check_horizon(law, nu)?;
    let source = PropagatorDensity::new(mu, law, coupling)?;
    let own = PropagatorDensity::new(nu, law, coupling)?;
    let values: Vec<f64> = nu.paths().map(|p| source.log_density(p) - own.log_density(p)).collect();
    Ok(Estimate::from_values(&values))
}

/// `log dQ/dP` for the scalar chains `x(t+1) = φ(x(t)) + w` and
/// `y(t+1) = ψ(y(t)) + w` with `w ~ N(α, K)`.
pub fn chain_log_density(path: &[f64], phi: impl Fn(f64) -> f64, psi: impl Fn(f64) -> f64, alpha: f64, k: f64) -> f64 {
    path.windows(2)
        .map(|w| {
            let d = psi(w[0]) - phi(w[0]);
            (d * (w[1] - alpha - phi(w[0])) - 0.5 * d * d) / k
        })
        .sum()
}

/// Summary of the density checks at one parameter set.
#[derive(Clone, Debug, Serialize)]
pub struct NormalizationReport {
    /// `E_P exp log dL(μ)/dP`.
    pub propagator: Estimate,
    /// `E_{P^{⊗N}} exp N Γ(μ_u)`.
    pub network: Estimate,
    pub neurons: usize,
    pub replicas: usize,
}

/// Importance-sampling checks that both densities integrate to one.
/// `μ` is a free sample of `mu_size` paths.
pub fn normalization_report(
    law: &TrajectoryLaw,
    coupling: Coupling,
    neurons: usize,
    replicas: usize,
    mu_size: usize,
    seed: u64,
) -> Result<NormalizationReport> {
    let mu = sample_free(law, mu_size, derive_seed(seed, 0))?;
    let density = PropagatorDensity::new(&mu, law, coupling)?;
    let eta = sample_free(law, replicas, derive_seed(seed, 1))?;
    let weights: Vec<f64> = eta.paths().map(|p| density.log_density(p).exp()).collect();
    let network: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let u = sample_free(law, neurons, derive_seed(derive_seed(seed, 2), r as u64))?;
            Ok(network_log_density_of(&u, law, coupling)?.exp())
        })
        .collect::<Result<_>>()?;
    Ok(NormalizationReport {
        propagator: Estimate::from_values(&weights),
        network: Estimate::from_values(&network),
        neurons,
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(horizon: usize) -> TrajectoryLaw {
        TrajectoryLaw {
            model: NeuronModel::analog(1.0),
            initial: InitialLaw::Gaussian { mean: 0.0, std: 1.0 },
            threshold: 0.5,
            noise: 1.0,
            horizon,
        }
    }

    #[test]
    fn constant_paths_give_constant_field() {
        let s = PathSample::from_paths(&vec![vec![0.0; 4]; 3]).unwrap();
        let g = gmu_from_sample(&s, Coupling::new(2.0, 3.0), &TransferFunction::logistic(1.0));
        for t in 0..3 {
            assert!((g.mean[t] - 1.0).abs() < 1e-15);
            for s in 0..3 {
                assert!((g.cov[(s, t)] - 0.75).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mirrored_sample_has_half_mean() {
        let eta = vec![0.3, -1.2, 2.5];
        let neg: Vec<f64> = eta.iter().map(|v| -v).collect();
        let s = PathSample::from_paths(&[eta, neg]).unwrap();
        let g = gmu_from_sample(&s, Coupling::new(1.0, 0.0), &TransferFunction::logistic(1.0));
        assert!(g.mean.iter().all(|m| (m - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_coupling_is_the_free_law() {
        let l = law(3);
        let mu = sample_free(&l, 20, 1).unwrap();
        let d = PropagatorDensity::new(&mu, &l, Coupling::new(0.0, 0.0)).unwrap();
        for p in sample_free(&l, 10, 2).unwrap().paths() {
            assert_eq!(d.log_density(p), 0.0);
        }
        assert_eq!(gamma_functional(&mu, &l, Coupling::new(0.0, 0.0)).unwrap().mean, 0.0);
    }

    #[test]
    fn one_step_density_matches_direct_gaussian_ratio() {
        // With T = 1 the innovation is N(m, σ² + Σ) under L and N(0, σ²) under P.
        let l = law(1);
        let mu = sample_free(&l, 50, 3).unwrap();
        let c = Coupling::new(0.7, 1.3);
        let g = gmu_from_sample(&mu, c, &l.transfer());
        let d = PropagatorDensity::new(&mu, &l, c).unwrap();
        let (m, v, s2) = (g.mean[0], g.cov[(0, 0)], l.noise * l.noise);
        for x in [-2.0, 0.1, 1.7] {
            let phi = x + l.threshold;
            let direct = -0.5 * (phi - m).powi(2) / (s2 + v) - 0.5 * ((s2 + v) / s2).ln() + 0.5 * phi * phi / s2;
            assert!((d.log_density(&[0.0, x]) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_spectrum_is_reported() {
        let field = GaussianFieldLaw {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        match FieldKernel::new(&field, 1.0) {
            Err(Error::Conditioning {
                min_eigenvalue,
                spectrum,
            }) => {
                assert!((min_eigenvalue + 1.0).abs() < 1e-12);
                assert_eq!(spectrum.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_law_has_no_entropy() {
        let l = law(2);
        let s = sample_free(&l, 5, 0).unwrap();
        assert!(matches!(
            relative_entropy_estimate(&LawSample::Unknown(s.clone()), &l),
            Err(Error::UnsupportedLaw)
        ));
        assert_eq!(relative_entropy_estimate(&LawSample::Free(s), &l).unwrap().mean, 0.0);
    }

    #[test]
    fn integrate_fire_innovation_removes_the_leak() {
        let l = TrajectoryLaw {
            model: NeuronModel::integrate_fire(0.5, -1.0, 1.0).unwrap(),
            initial: InitialLaw::PointMass { value: -0.5 },
            threshold: 1.0,
            noise: 0.3,
            horizon: 3,
        };
        let path = l.free_path(&mut sampling_stream(9, 0), None);
        let phi = l.innovations(&path);
        let mut rng = sampling_stream(9, 0);
        let _ = l.initial.sample(&mut rng);
        for p in phi {
            let w = l.noise * rng.sample::<f64, _>(StandardNormal);
            assert!((p - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dilute_weights_are_unsupported() {
        let law = WeightLaw::DiluteTwoPoint {
            magnitude: 0.1,
            connections: 2,
            exclude_self: true,
        };
        assert!(matches!(Coupling::from_law(&law), Err(Error::UnsupportedLaw)));
    }
}
