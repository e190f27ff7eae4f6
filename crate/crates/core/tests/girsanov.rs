use dmft::config::{InitialLaw, NetworkConfig, NeuronModel};
use dmft::girsanov::{
    chain_log_density, gamma_functional, mfe_iterates, network_log_density, network_log_density_of,
    normalization_report, rate_function_estimate, relative_entropy_estimate, sample_free, Coupling, Estimate,
    LawSample, PathSample, PropagatorDensity, TrajectoryLaw,
};
use dmft::netsim::{realization, simulate};
use dmft::rng::{derive_seed, rng_stream, StreamId, StreamPurpose};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn law() -> TrajectoryLaw {
    TrajectoryLaw {
        model: NeuronModel::analog(1.0),
        initial: InitialLaw::Gaussian { mean: 0.0, std: 1.0 },
        threshold: 0.5,
        noise: 1.0,
        horizon: 3,
    }
}

const COUPLING: Coupling = Coupling {
    mean: 1.0,
    variance: 1.0,
};
// Weaker mean coupling keeps the N = 5 likelihood ratio light-tailed.
const NETWORK: Coupling = Coupling {
    mean: 0.3,
    variance: 0.5,
};

fn agree(a: Estimate, b: Estimate) -> bool {
    (a.mean - b.mean).abs() < 3.0 * a.stderr.hypot(b.stderr)
}

#[test]
fn densities_integrate_to_one() {
    let r = normalization_report(&law(), NETWORK, 5, 10_000, 200, 11).unwrap();
    assert!(r.propagator.z_score(1.0) < 3.0, "{:?}", r.propagator);
    assert!(r.network.z_score(1.0) < 3.0, "{:?}", r.network);
}

#[test]
fn reweighted_free_networks_match_coupled_simulation() {
    let l = law();
    let stats = |u: &PathSample| {
        let last = |p: &[f64]| p[3];
        (u.average(last), u.average(|p| p[3] * p[3]))
    };
    let replicas = 20_000u64;
    let weighted: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let u = sample_free(&l, 5, derive_seed(77, r)).unwrap();
            let w = network_log_density_of(&u, &l, NETWORK).unwrap().exp();
            let (a, b) = stats(&u);
            (w * a, w * b)
        })
        .collect();
    let cfg = NetworkConfig {
        model: l.model,
        n: 5,
        horizon: 3,
        threshold: l.threshold,
        noise: l.noise,
        weights: dmft::weights::WeightLaw::gaussian(NETWORK.mean, NETWORK.variance),
        initial: l.initial,
        seed: 5,
    };
    let direct: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let ens = simulate(&realization(&cfg, r)).unwrap();
            stats(&PathSample::from_ensemble(&ens))
        })
        .collect();
    let split = |v: &[(f64, f64)]| {
        let (a, b): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
        (Estimate::from_values(&a), Estimate::from_values(&b))
    };
    let (wa, wb) = split(&weighted);
    let (da, db) = split(&direct);
    assert!(agree(wa, da), "mean: {wa:?} vs {da:?}");
    assert!(agree(wb, db), "second moment: {wb:?} vs {db:?}");
}

#[test]
fn ensemble_density_uses_its_own_config() {
    let cfg = NetworkConfig {
        model: NeuronModel::analog(1.0),
        n: 4,
        horizon: 3,
        threshold: 0.5,
        noise: 1.0,
        weights: dmft::weights::WeightLaw::gaussian(1.0, 1.0),
        initial: InitialLaw::default(),
        seed: 8,
    };
    let ens = simulate(&cfg).unwrap();
    let direct = network_log_density_of(&PathSample::from_ensemble(&ens), &law(), COUPLING).unwrap();
    assert_eq!(network_log_density(&ens).unwrap(), direct);
    let zero = NetworkConfig {
        weights: dmft::weights::WeightLaw::gaussian(0.0, 0.0),
        ..cfg
    };
    assert_eq!(network_log_density(&simulate(&zero).unwrap()).unwrap(), 0.0);
}

#[test]
fn propagated_samples_reweight_consistently() {
    let l = law();
    let mu = sample_free(&l, 300, 1).unwrap();
    let density = PropagatorDensity::new(&mu, &l, COUPLING).unwrap();
    let direct = density.sample(20_000, 2);
    let free = sample_free(&l, 20_000, 3).unwrap();
    for t in 1..=3 {
        let d: Vec<f64> = direct.paths().map(|p| p[t]).collect();
        let w: Vec<f64> = free.paths().map(|p| density.log_density(p).exp() * p[t]).collect();
        let (d, w) = (Estimate::from_values(&d), Estimate::from_values(&w));
        assert!(agree(d, w), "t {t}: {d:?} vs {w:?}");
    }
}

#[test]
fn gamma_depends_only_on_the_empirical_measure() {
    let l = law();
    let mu = sample_free(&l, 64, 4).unwrap();
    let order: Vec<usize> = (0..64).rev().collect();
    let a = gamma_functional(&mu, &l, COUPLING).unwrap().mean;
    let b = gamma_functional(&mu.permuted(&order), &l, COUPLING).unwrap().mean;
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn rate_function_vanishes_only_at_the_mean_field_solution() {
    let l = law();
    let strong = Coupling::new(2.0, 4.0);
    let it = mfe_iterates(&l, strong, 10_000, l.horizon + 2, 6).unwrap();
    let k = it.len() - 1;
    let at_fixed_point = rate_function_estimate(&it[k - 1], &it[k], &l, strong).unwrap();
    assert!(
        at_fixed_point.mean.abs() < 3.0 * at_fixed_point.stderr,
        "{at_fixed_point:?}"
    );
    let away = rate_function_estimate(&it[0], &it[1], &l, strong).unwrap();
    assert!(away.mean > 3.0 * away.stderr, "{away:?}");
    let entropy = relative_entropy_estimate(
        &LawSample::Propagated {
            mu: it[0].clone(),
            coupling: strong,
            sample: it[1].clone(),
        },
        &l,
    )
    .unwrap();
    let gamma = gamma_functional(&it[1], &l, strong).unwrap();
    assert!(gamma.mean < entropy.mean);
}

#[test]
fn relative_entropy_is_nonnegative_across_coupled_laws() {
    let l = law();
    for i in 0..20u64 {
        let mut rng = rng_stream(13, StreamId::new(StreamPurpose::Generic, i));
        let coupling = Coupling::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..4.0));
        let mu = sample_free(&l, 100, derive_seed(14, i)).unwrap();
        let sample = PropagatorDensity::new(&mu, &l, coupling)
            .unwrap()
            .sample(2000, derive_seed(15, i));
        let est = relative_entropy_estimate(&LawSample::Propagated { mu, coupling, sample }, &l).unwrap();
        assert!(est.mean > -3.0 * est.stderr, "law {i}: {est:?}");
    }
}

#[test]
fn finite_time_girsanov_reweights_chains() {
    let phi = |x: f64| 0.5 * x;
    let psi = |x: f64| x.tanh() + 0.3;
    let (alpha, k, horizon) = (0.2f64, 0.64f64, 3);
    let chain = |drift: &dyn Fn(f64) -> f64, seed: u64, r: u64| {
        let mut rng = rng_stream(seed, StreamId::new(StreamPurpose::Sampling, r));
        let mut path = vec![rng.sample::<f64, _>(StandardNormal)];
        for t in 0..horizon {
            let w = alpha + k.sqrt() * rng.sample::<f64, _>(StandardNormal);
            path.push(drift(path[t]) + w);
        }
        path
    };
    let m = 40_000u64;
    let q: Vec<Vec<f64>> = (0..m).map(|r| chain(&psi, 1, r)).collect();
    let p: Vec<Vec<f64>> = (0..m).map(|r| chain(&phi, 2, r)).collect();
    let weights: Vec<f64> = p
        .iter()
        .map(|x| chain_log_density(x, phi, psi, alpha, k).exp())
        .collect();
    assert!(Estimate::from_values(&weights).z_score(1.0) < 3.0);
    for moment in [|v: f64| v, |v: f64| v * v] {
        let direct: Vec<f64> = q.iter().map(|x| moment(x[horizon])).collect();
        let reweighted: Vec<f64> = p.iter().zip(&weights).map(|(x, w)| w * moment(x[horizon])).collect();
        let (d, r) = (Estimate::from_values(&direct), Estimate::from_values(&reweighted));
        assert!(agree(d, r), "{d:?} vs {r:?}");
    }
}
