//! Finite-size discrete-time simulation of random networks.
//!
//! Potentials evolve as `u(t+1) = J f(u(t)) + w(t+1) - θ`, plus the leak
//! term `φ(u(t) + θ)` for integrate-and-fire neurons. Randomness comes from
//! keyed streams: the weights from `(Weights, 0)`, the initial potentials
//! from `(Initial, 0)` and the noise of step `t` from `(Noise, t)`.

use crate::config::{leak_map, InitialLaw, NetworkConfig, NeuronModel};
use crate::error::{Error, Result};
use crate::meanfield::{NoiseCoupling, SymMatrix};
use crate::rng::{derive_seed, rng_stream, RngStream, StreamId, StreamPurpose};
use crate::scalar::pairwise_sum;
use crate::transfer::TransferFunction;
use crate::twopop::TwoPopParams;
use crate::weights::{sample_block_weights, sample_weights, BlockLaw, WeightMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Stream holding the quenched weights.
pub const WEIGHTS_STREAM: StreamId = StreamId::new(StreamPurpose::Weights, 0);
/// Stream holding the initial potentials.
pub const INITIAL_STREAM: StreamId = StreamId::new(StreamPurpose::Initial, 0);
/// Stream holding the twin perturbation.
pub const GAP_STREAM: StreamId = StreamId::new(StreamPurpose::TwinGap, 0);

/// Per-neuron update rule shared by every simulator in this module.
struct Dynamics<'a> {
    weights: &'a WeightMatrix,
    transfer: TransferFunction<f64>,
    model: NeuronModel,
    thresholds: Vec<f64>,
}

impl Dynamics<'_> {
    fn n(&self) -> usize {
        self.thresholds.len()
    }

    fn activate(&self, u: &[f64], x: &mut [f64]) {
        for (xi, &ui) in x.iter_mut().zip(u) {
            *xi = self.transfer.eval(ui);
        }
    }

    /// `x` must hold `f(u)`.
    fn step(&self, u: &[f64], x: &[f64], noise: &[f64], out: &mut [f64], step: usize) -> Result<()> {
        self.weights.matvec(x, out);
        for i in 0..out.len() {
            let theta = self.thresholds[i];
            let mut v = out[i] + noise[i] - theta;
            if let NeuronModel::IntegrateFire { leak, reset } = self.model {
                v += leak_map(u[i] + theta, leak, reset, theta);
            }
            if !v.is_finite() {
                return Err(Error::NonFinitePotential { step, neuron: i });
            }
            out[i] = v;
        }
        Ok(())
    }
}

/// Fills `out` with the noise `w(t)` of step `t` (scaled by `σ`).
fn stream_noise(seed: u64, purpose: StreamPurpose, sigma: f64, t: usize, out: &mut [f64]) {
    if sigma == 0.0 {
        out.fill(0.0);
        return;
    }
    let mut rng = rng_stream(seed, StreamId::new(purpose, t as u64));
    for w in out.iter_mut() {
        *w = sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

fn initial_potentials(law: &InitialLaw, n: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..n).map(|_| law.sample(rng)).collect()
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// One update of every potential; `step` is the index of `u(t+1)` and only
/// labels errors.
pub fn step_potentials(
    config: &NetworkConfig,
    weights: &WeightMatrix,
    u: &[f64],
    noise: &[f64],
    step: usize,
) -> Result<Vec<f64>> {
    let n = weights.n();
    if u.len() != n || noise.len() != n {
        return Err(Error::config(format!(
            "dimension mismatch: {n} neurons, {} potentials, {} noise values",
            u.len(),
            noise.len()
        )));
    }
    let dynamics = Dynamics {
        weights,
        transfer: config.transfer(),
        model: config.model,
        thresholds: vec![config.threshold; n],
    };
    let mut x = vec![0.0; n];
    dynamics.activate(u, &mut x);
    let mut out = vec![0.0; n];
    dynamics.step(u, &x, noise, &mut out, step)?;
    Ok(out)
}

/// Full potential trajectory of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub config: NetworkConfig,
    /// Time-major `(T+1) x N` potentials.
    pub u: Vec<f64>,
    pub weights_stream: StreamId,
    pub noise_stream: StreamPurpose,
}

impl TrajectoryEnsemble {
    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn potentials(&self, t: usize) -> &[f64] {
        let n = self.n();
        &self.u[t * n..(t + 1) * n]
    }

    pub fn activations(&self, t: usize) -> Vec<f64> {
        let f = self.config.transfer();
        self.potentials(t).iter().map(|&u| f.eval(u)).collect()
    }

    /// Trajectory `u_i(0..=T)` of neuron `i`.
    pub fn neuron(&self, i: usize) -> Vec<f64> {
        (0..=self.horizon()).map(|t| self.u[t * self.n() + i]).collect()
    }
}

/// Runs `config` on given weights, initial potentials and noise. `noise`
/// fills the noise vector of step `t` for `t = 1..=T`.
pub fn simulate_driven(
    config: &NetworkConfig,
    weights: &WeightMatrix,
    initial: Vec<f64>,
    mut noise: impl FnMut(usize, &mut [f64]),
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.n;
    if weights.n() != n || initial.len() != n {
        return Err(Error::config("weights or initial potentials do not match n"));
    }
    let dynamics = Dynamics {
        weights,
        transfer: config.transfer(),
        model: config.model,
        thresholds: vec![config.threshold; n],
    };
    let mut u = initial;
    u.reserve(n * config.horizon);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    for t in 0..config.horizon {
        let cur = &u[t * n..(t + 1) * n];
        dynamics.activate(cur, &mut x);
        noise(t + 1, &mut w);
        dynamics.step(cur, &x, &w, &mut next, t + 1)?;
        u.extend_from_slice(&next);
    }
    Ok(u)
}

/// Samples the weights of `config`.
pub fn network_weights(config: &NetworkConfig) -> Result<WeightMatrix> {
    config.validate()?;
    sample_weights(&config.weights, config.n, &mut rng_stream(config.seed, WEIGHTS_STREAM))
}

/// Simulates `t = 0..=T` with weights drawn once.
pub fn simulate(config: &NetworkConfig) -> Result<TrajectoryEnsemble> {
    let weights = network_weights(config)?;
    simulate_on(config, &weights)
}

/// Simulates `config` on an already sampled weight matrix.
pub fn simulate_on(config: &NetworkConfig, weights: &WeightMatrix) -> Result<TrajectoryEnsemble> {
    config.validate()?;
    let initial = initial_potentials(&config.initial, config.n, &mut rng_stream(config.seed, INITIAL_STREAM));
    let (seed, sigma) = (config.seed, config.noise);
    let u = simulate_driven(config, weights, initial, |t, w| {
        stream_noise(seed, StreamPurpose::Noise, sigma, t, w)
    })?;
    Ok(TrajectoryEnsemble {
        config: config.clone(),
        u,
        weights_stream: WEIGHTS_STREAM,
        noise_stream: StreamPurpose::Noise,
    })
}

/// Order parameters of one simulated network over `t = 0..=T`.
///
/// `m`, `q` and `c` are the activation statistics
/// `m(t+1) = J̄ mean_j f(u_j(t))` and `c(s+1, t+1) = J² mean_j f(u_j(s)) f(u_j(t))`,
/// zero at index 0. The `potential_*` fields are plain statistics of `u`
/// over neurons. Covariance matrices are only present when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMoments {
    pub m: Vec<f64>,
    pub q: Vec<f64>,
    pub c: Option<SymMatrix<f64>>,
    pub potential_mean: Vec<f64>,
    pub potential_var: Vec<f64>,
    pub potential_cov: Option<SymMatrix<f64>>,
}

type Rows = Vec<Vec<f64>>;

struct MomentAccumulator {
    scales: (f64, f64),
    transfer: TransferFunction<f64>,
    history: Option<(Rows, Rows)>,
    out: EmpiricalMoments,
}

impl MomentAccumulator {
    fn new(scales: (f64, f64), transfer: TransferFunction<f64>, horizon: usize, covariances: bool) -> Self {
        let len = horizon + 1;
        MomentAccumulator {
            scales,
            transfer,
            history: covariances.then(|| (Vec::with_capacity(len), Vec::with_capacity(len))),
            out: EmpiricalMoments {
                m: vec![0.0; len],
                q: vec![0.0; len],
                c: None,
                potential_mean: vec![0.0; len],
                potential_var: vec![0.0; len],
                potential_cov: None,
            },
        }
    }

    fn push(&mut self, t: usize, u: &[f64]) {
        let pm = mean(u);
        let dev: Vec<f64> = u.iter().map(|v| (v - pm) * (v - pm)).collect();
        self.out.potential_mean[t] = pm;
        self.out.potential_var[t] = mean(&dev);
        let x: Vec<f64> = u.iter().map(|&v| self.transfer.eval(v)).collect();
        if t + 1 < self.out.m.len() {
            let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
            self.out.m[t + 1] = self.scales.0 * mean(&x);
            self.out.q[t + 1] = self.scales.1 * mean(&x2);
        }
        if let Some((us, xs)) = &mut self.history {
            us.push(u.to_vec());
            xs.push(x);
        }
    }

    fn finish(mut self) -> EmpiricalMoments {
        if let Some((us, xs)) = self.history.take() {
            let len = us.len();
            let mut c = SymMatrix::zeros(len);
            let mut pc = SymMatrix::zeros(len);
            let mut buf = Vec::new();
            for t in 0..len {
                for s in 0..=t {
                    buf.clear();
                    buf.extend(us[s].iter().zip(&us[t]).map(|(a, b)| a * b));
                    let cov = mean(&buf) - self.out.potential_mean[s] * self.out.potential_mean[t];
                    pc.set(s, t, if s == t { self.out.potential_var[t] } else { cov });
                    if t + 1 < len {
                        buf.clear();
                        buf.extend(xs[s].iter().zip(&xs[t]).map(|(a, b)| a * b));
                        let v = if s == t {
                            self.out.q[t + 1]
                        } else {
                            self.scales.1 * mean(&buf)
                        };
                        c.set(s + 1, t + 1, v);
                    }
                }
            }
            self.out.c = Some(c);
            self.out.potential_cov = Some(pc);
        }
        self.out
    }
}

/// Activation and potential statistics of a stored trajectory, including
/// both covariance matrices.
pub fn empirical_moments(ensemble: &TrajectoryEnsemble) -> EmpiricalMoments {
    let cfg = &ensemble.config;
    let mut acc = MomentAccumulator::new(cfg.weights.order_scales(), cfg.transfer(), cfg.horizon, true);
    for t in 0..=cfg.horizon {
        acc.push(t, ensemble.potentials(t));
    }
    acc.finish()
}

/// Simulates `config` keeping only the running state; memory is `O(N + T)`
/// unless covariances are requested.
pub fn simulate_moments(config: &NetworkConfig, covariances: bool) -> Result<EmpiricalMoments> {
    let weights = network_weights(config)?;
    let n = config.n;
    let dynamics = Dynamics {
        weights: &weights,
        transfer: config.transfer(),
        model: config.model,
        thresholds: vec![config.threshold; n],
    };
    let mut acc = MomentAccumulator::new(
        config.weights.order_scales(),
        config.transfer(),
        config.horizon,
        covariances,
    );
    let mut u = initial_potentials(&config.initial, n, &mut rng_stream(config.seed, INITIAL_STREAM));
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    acc.push(0, &u);
    for t in 0..config.horizon {
        dynamics.activate(&u, &mut x);
        stream_noise(config.seed, StreamPurpose::Noise, config.noise, t + 1, &mut w);
        dynamics.step(&u, &x, &w, &mut next, t + 1)?;
        std::mem::swap(&mut u, &mut next);
        acc.push(t + 1, &u);
    }
    Ok(acc.finish())
}

/// `config` with the seed of realization `index`.
pub fn realization(config: &NetworkConfig, index: u64) -> NetworkConfig {
    NetworkConfig {
        seed: derive_seed(config.seed, index),
        ..config.clone()
    }
}

/// Moments of `count` independent weight realizations, computed in parallel
/// and returned in realization order.
pub fn ensemble_moments(config: &NetworkConfig, count: usize, covariances: bool) -> Result<Vec<EmpiricalMoments>> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| simulate_moments(&realization(config, r), covariances))
        .collect()
}

/// Two trajectories of the same network.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinRunResult {
    /// `mean_i (u¹_i(t) - u²_i(t))²`.
    pub d12: Vec<f64>,
    /// `J² mean_j f(u¹_j(t-1)) f(u²_j(t-1))`, zero at `t = 0`.
    pub c12: Vec<f64>,
    /// Field distance `q¹ + q² - 2c12 + (m¹ - m²)²` from activation
    /// statistics, zero at `t = 0`.
    pub field_d12: Vec<f64>,
    pub coupling: NoiseCoupling,
    pub delta: f64,
}

impl TwinRunResult {
    /// Mean of `d12` over the last `tail` steps.
    pub fn plateau(&self, tail: usize) -> f64 {
        let tail = tail.clamp(1, self.d12.len());
        mean(&self.d12[self.d12.len() - tail..])
    }
}

/// Runs a trajectory and a twin started at `u(0) + δ z`, `z ~ N(0, I)`, on
/// the same weights. The twin's noise is the same sequence or an
/// independent one (`(TwinNoise, t)` streams).
pub fn twin_run(config: &NetworkConfig, coupling: NoiseCoupling, delta: f64) -> Result<TwinRunResult> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::config(format!("initial gap must be >= 0 (got {delta})")));
    }
    let weights = network_weights(config)?;
    twin_run_on(config, &weights, coupling, delta)
}

pub fn twin_run_on(
    config: &NetworkConfig,
    weights: &WeightMatrix,
    coupling: NoiseCoupling,
    delta: f64,
) -> Result<TwinRunResult> {
    config.validate()?;
    let n = config.n;
    let (jbar, j2) = config.weights.order_scales();
    let dynamics = Dynamics {
        weights,
        transfer: config.transfer(),
        model: config.model,
        thresholds: vec![config.threshold; n],
    };
    let mut a = initial_potentials(&config.initial, n, &mut rng_stream(config.seed, INITIAL_STREAM));
    let mut gap = rng_stream(config.seed, GAP_STREAM);
    let mut b: Vec<f64> = a
        .iter()
        .map(|&v| {
            if delta == 0.0 {
                v
            } else {
                v + delta * gap.sample::<f64, _>(StandardNormal)
            }
        })
        .collect();
    let len = config.horizon + 1;
    let mut out = TwinRunResult {
        d12: vec![0.0; len],
        c12: vec![0.0; len],
        field_d12: vec![0.0; len],
        coupling,
        delta,
    };
    let twin_purpose = match coupling {
        NoiseCoupling::Shared => StreamPurpose::Noise,
        NoiseCoupling::Independent => StreamPurpose::TwinNoise,
    };
    let (mut xa, mut xb) = (vec![0.0; n], vec![0.0; n]);
    let (mut wa, mut wb) = (vec![0.0; n], vec![0.0; n]);
    let (mut na, mut nb) = (vec![0.0; n], vec![0.0; n]);
    let mut buf = vec![0.0; n];
    let sq_dist = |a: &[f64], b: &[f64], buf: &mut Vec<f64>| {
        for (o, (x, y)) in buf.iter_mut().zip(a.iter().zip(b)) {
            *o = (x - y) * (x - y);
        }
        mean(buf)
    };
    out.d12[0] = sq_dist(&a, &b, &mut buf);
    for t in 0..config.horizon {
        dynamics.activate(&a, &mut xa);
        dynamics.activate(&b, &mut xb);
        for (o, (x, y)) in buf.iter_mut().zip(xa.iter().zip(&xb)) {
            *o = x * y;
        }
        out.c12[t + 1] = j2 * mean(&buf);
        let dx = sq_dist(&xa, &xb, &mut buf);
        let dm = jbar * (mean(&xa) - mean(&xb));
        out.field_d12[t + 1] = j2 * dx + dm * dm;

        stream_noise(config.seed, StreamPurpose::Noise, config.noise, t + 1, &mut wa);
        stream_noise(config.seed, twin_purpose, config.noise, t + 1, &mut wb);
        dynamics.step(&a, &xa, &wa, &mut na, t + 1)?;
        dynamics.step(&b, &xb, &wb, &mut nb, t + 1)?;
        std::mem::swap(&mut a, &mut na);
        std::mem::swap(&mut b, &mut nb);
        out.d12[t + 1] = sq_dist(&a, &b, &mut buf);
    }
    Ok(out)
}

/// Finite two-population network with Gaussian block weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockNetwork {
    pub law: BlockLaw,
    pub thresholds: [f64; 2],
    pub noise: f64,
    pub transfer: TransferFunction<f64>,
    pub horizon: usize,
    pub initial: InitialLaw,
    pub seed: u64,
}

impl BlockNetwork {
    /// Network of `n` neurons whose block statistics are those of `params`:
    /// population sizes `λn` and `(1-λ)n`, block `(k, j)` entries scaled by
    /// the source population size.
    pub fn from_params(params: &TwoPopParams<f64>, n: usize, initial: InitialLaw, seed: u64) -> Result<Self> {
        params.validate()?;
        let n1 = (params.fraction * n as f64).round() as usize;
        if n1 == 0 || n1 >= n {
            return Err(Error::config(format!(
                "n = {n} with fraction {} leaves a population empty",
                params.fraction
            )));
        }
        Ok(BlockNetwork {
            law: BlockLaw {
                sizes: [n1, n - n1],
                mean: params.mean,
                variance: params.variance,
            },
            thresholds: params.thresholds,
            noise: params.noise,
            transfer: params.transfer,
            horizon: params.horizon,
            initial,
            seed,
        })
    }
}

/// Per-population activation order parameters of a block network:
/// `q_k(t+1) = Σ_j J²_kj mean_{i ∈ j} f(u_i(t))²`, likewise for `m_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMoments {
    pub m: [Vec<f64>; 2],
    pub q: [Vec<f64>; 2],
}

pub fn simulate_blocks(net: &BlockNetwork) -> Result<BlockMoments> {
    if !(net.noise >= 0.0) || net.horizon == 0 {
        return Err(Error::config("block network needs noise >= 0 and horizon >= 1"));
    }
    let weights = sample_block_weights(&net.law, &mut rng_stream(net.seed, WEIGHTS_STREAM))?;
    let n = net.law.n();
    let n1 = net.law.sizes[0];
    let dynamics = Dynamics {
        weights: &weights,
        transfer: net.transfer,
        model: NeuronModel::analog(1.0),
        thresholds: (0..n).map(|i| net.thresholds[net.law.population_of(i)]).collect(),
    };
    debug_assert_eq!(dynamics.n(), n);
    let len = net.horizon + 1;
    let mut out = BlockMoments {
        m: [vec![0.0; len], vec![0.0; len]],
        q: [vec![0.0; len], vec![0.0; len]],
    };
    let mut u = initial_potentials(&net.initial, n, &mut rng_stream(net.seed, INITIAL_STREAM));
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    for t in 0..net.horizon {
        dynamics.activate(&u, &mut x);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let ef = [mean(&x[..n1]), mean(&x[n1..])];
        let ef2 = [mean(&x2[..n1]), mean(&x2[n1..])];
        for k in 0..2 {
            out.m[k][t + 1] = (0..2).map(|j| net.law.mean[k][j] * ef[j]).sum();
            out.q[k][t + 1] = (0..2).map(|j| net.law.variance[k][j] * ef2[j]).sum();
        }
        stream_noise(net.seed, StreamPurpose::Noise, net.noise, t + 1, &mut w);
        dynamics.step(&u, &x, &w, &mut next, t + 1)?;
        std::mem::swap(&mut u, &mut next);
    }
    Ok(out)
}
