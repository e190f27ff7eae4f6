#![allow(clippy::needless_range_loop)]

use dmft::config::{InitialLaw, NetworkConfig, NeuronModel};
use dmft::meanfield::PotentialLaw;
use dmft::netsim::{realization, simulate, simulate_blocks, BlockNetwork};
use dmft::quadrature::QuadratureRule;
use dmft::rng::derive_seed;
use dmft::twopop::{gd_to_params, propagate_two_pop_marginals, GDPoint, TwoPopParams};
use dmft::weights::WeightLaw;
use rayon::prelude::*;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

fn pair_correlation(n: usize, realizations: u64) -> f64 {
    let cfg = NetworkConfig {
        model: NeuronModel::analog(1.0),
        n,
        horizon: 1,
        threshold: 5.0,
        noise: 0.1,
        weights: WeightLaw::gaussian(10.0, 0.1),
        initial: InitialLaw::Gaussian { mean: 0.0, std: 1.0 },
        seed: 2024,
    };
    let pairs: Vec<(f64, f64)> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let ens = simulate(&realization(&cfg, r)).unwrap();
            let x = ens.activations(1);
            (x[0], x[1])
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    pearson(&a, &b)
}

#[test]
fn two_neurons_decorrelate_as_the_network_grows() {
    let corr: Vec<f64> = [50, 200, 800].iter().map(|&n| pair_correlation(n, 400)).collect();
    assert!(corr[0] > corr[1] && corr[1] > corr[2], "{corr:?}");
    assert!(corr[2].abs() < 0.3, "{corr:?}");
}

#[test]
fn block_network_tracks_two_population_mean_field() {
    let params: TwoPopParams<f64> = TwoPopParams {
        horizon: 20,
        noise: 0.1,
        ..gd_to_params(GDPoint { g: 2.0, d: 1.0 }).unwrap()
    };
    let initial = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
    let law = PotentialLaw::new(0.0, 1.0);
    let mf = propagate_two_pop_marginals(&params, [law, law], &QuadratureRule::default()).unwrap();
    let runs: Vec<_> = (0..4u64)
        .into_par_iter()
        .map(|r| {
            let net = BlockNetwork::from_params(&params, 1000, initial, derive_seed(5, r)).unwrap();
            simulate_blocks(&net).unwrap()
        })
        .collect();
    for k in 0..2 {
        for t in 1..=20 {
            let q = runs.iter().map(|r| r.q[k][t]).sum::<f64>() / runs.len() as f64;
            let expect = mf[k].q[t];
            assert!((q / expect - 1.0).abs() < 0.05, "pop {k} t {t}: {q} vs {expect}");
        }
    }
}

#[test]
fn trajectory_dump_round_trips() {
    let cfg = NetworkConfig {
        model: NeuronModel::analog(1.0),
        n: 7,
        horizon: 4,
        threshold: 0.1,
        noise: 0.2,
        weights: WeightLaw::gaussian(0.0, 2.0),
        initial: InitialLaw::default(),
        seed: 3,
    };
    let ens = simulate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dmft::io::write_trajectory(&ens, dir.path(), "run").unwrap();
    let (steps, neurons, data) = dmft::io::read_trajectory(dir.path(), "run").unwrap();
    assert_eq!((steps, neurons), (5, 7));
    assert_eq!(data, ens.u);
}
