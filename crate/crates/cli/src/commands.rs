//! Config schemas and the work behind each subcommand.

use anyhow::{bail, Context, Result};
use dmft::config::{from_toml_str, InitialLaw, NetworkConfig, NeuronModel};
use dmft::fokker::{
    fp_time_stepper, oscillation_scan, scan_table, selfconsistent_rate_on, simulate_spiking, DensityGrid, FpOptions,
    IFContinuousParams, InitialDensity, ScanOptions, SpikingOptions,
};
use dmft::girsanov::{normalization_report, Coupling, TrajectoryLaw};
use dmft::io::{covariance_table, float, moments_table, write_trajectory, Table};
use dmft::meanfield::{chaos_surface, propagate_moments, MeanFieldParams, MomentSeries, PotentialLaw};
use dmft::netsim::{ensemble_moments, realization, simulate};
use dmft::quadrature::QuadratureRule;
use dmft::scalar::mean_and_stderr;
use dmft::transfer::TransferFunction;
use dmft::twopop::{bifurcation_map, ClassifierConfig, MapSettings};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;

/// What a command produced, for the manifest.
pub struct Outcome {
    pub seed: u64,
    pub outputs: Vec<String>,
    pub summary: Value,
    /// Set when the command ran but its check failed.
    pub failure: Option<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        table
            .write_path(self.dir.join(name))
            .with_context(|| format!("writing {name}"))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(self.dir.join(name), text).with_context(|| format!("writing {name}"))?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    Ok(from_toml_str(text)?)
}

/// Evenly spaced grid, endpoints included.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Grid {
    fn points(&self) -> Result<Vec<f64>> {
        match self.count {
            0 => bail!("grid count must be >= 1"),
            1 => Ok(vec![self.min]),
            n => Ok((0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum RuleChoice {
    #[default]
    GaussHermite,
    Resolved,
}

fn rule(choice: RuleChoice, order: usize, transfer: &TransferFunction<f64>) -> QuadratureRule<f64> {
    match choice {
        RuleChoice::GaussHermite => QuadratureRule::gauss_hermite(order),
        RuleChoice::Resolved => QuadratureRule::resolved(transfer.steepness()),
    }
}

fn default_order() -> usize {
    64
}

fn default_realizations() -> usize {
    1
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    network: NetworkConfig,
    #[serde(default = "default_realizations")]
    realizations: usize,
    #[serde(default)]
    covariances: bool,
    /// Dump the potentials of realization 0.
    #[serde(default)]
    dump_trajectory: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeanFieldConfig {
    network: NetworkConfig,
    #[serde(default)]
    quadrature: RuleChoice,
    #[serde(default = "default_order")]
    order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareConfig {
    network: NetworkConfig,
    #[serde(default = "default_realizations")]
    realizations: usize,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
    #[serde(default)]
    quadrature: RuleChoice,
    #[serde(default = "default_order")]
    order: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChaosConfig {
    coupling_var: Grid,
    threshold: Grid,
    #[serde(default)]
    transfer: TransferFunction<f64>,
}

fn default_gap() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoPopMapConfig {
    g: Grid,
    d: Grid,
    #[serde(default)]
    noise: f64,
    #[serde(default = "default_gap")]
    gap: f64,
    #[serde(default = "yes")]
    gain_scaled_thresholds: bool,
    #[serde(default)]
    classifier: ClassifierConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FpRateConfig {
    network: IFContinuousParams,
    #[serde(default)]
    grid: DensityGrid,
}

fn default_duration() -> f64 {
    40.0
}

fn default_kick() -> f64 {
    0.2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanConfig {
    mu_ext: Grid,
    sigma_ext: Grid,
    #[serde(default)]
    options: ScanOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FpEvolveConfig {
    network: IFContinuousParams,
    #[serde(default = "default_duration")]
    duration: f64,
    #[serde(default = "default_kick")]
    kick: f64,
    #[serde(default)]
    fp: FpOptions,
    scan: Option<ScanConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpikingConfig {
    network: IFContinuousParams,
    #[serde(default)]
    spiking: SpikingOptions,
}

fn default_neurons() -> usize {
    5
}

fn default_replicas() -> usize {
    10_000
}

fn default_mu_size() -> usize {
    200
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GirsanovConfig {
    #[serde(default)]
    model: NeuronModel,
    #[serde(default)]
    initial: InitialLaw,
    threshold: f64,
    noise: f64,
    horizon: usize,
    coupling_mean: f64,
    coupling_var: f64,
    #[serde(default = "default_neurons")]
    neurons: usize,
    #[serde(default = "default_replicas")]
    replicas: usize,
    #[serde(default = "default_mu_size")]
    mu_size: usize,
    #[serde(default)]
    seed: u64,
}

fn meanfield_params(net: &NetworkConfig) -> Result<(MeanFieldParams<f64>, PotentialLaw<f64>)> {
    net.validate()?;
    if let NeuronModel::IntegrateFire { .. } = net.model {
        bail!("the moment recursion covers analog and binary neurons only");
    }
    let (mean, var) = net.weights.order_scales();
    let params = MeanFieldParams {
        mean_coupling: mean,
        coupling_var: var,
        threshold: net.threshold,
        noise: net.noise,
        transfer: net.transfer(),
        horizon: net.horizon,
    };
    Ok((params, PotentialLaw::new(net.initial.mean(), net.initial.variance())))
}

fn series_table(s: &MomentSeries<f64>) -> Table {
    let mut t = Table::new(["t", "m", "q", "potential_mean", "potential_var"]);
    for i in 0..s.m.len() {
        t.push(vec![
            i.to_string(),
            float(s.m[i]),
            float(s.q[i]),
            float(s.potential_mean[i]),
            float(s.potential_var[i]),
        ])
        .expect("five columns");
    }
    t
}

fn series_covariance(s: &MomentSeries<f64>) -> Table {
    let mut t = Table::new(["s", "t", "c", "potential_cov"]);
    for j in 0..s.m.len() {
        for i in 0..=j {
            t.push(vec![
                i.to_string(),
                j.to_string(),
                float(s.c.get(i, j)),
                float(s.potential_cov(i, j)),
            ])
            .expect("four columns");
        }
    }
    t
}

pub fn simulate_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let mut cfg: SimulateConfig = parse(text)?;
    if let Some(s) = seed {
        cfg.network.seed = s;
    }
    if cfg.realizations == 0 {
        bail!("realizations must be >= 1");
    }
    let mut w = Writer { dir, outputs: vec![] };
    let runs = ensemble_moments(&cfg.network, cfg.realizations, cfg.covariances)?;
    let horizon = cfg.network.horizon;
    let mut table = Table::new([
        "t",
        "m_mean",
        "m_stderr",
        "q_mean",
        "q_stderr",
        "potential_mean",
        "potential_var",
    ]);
    for t in 0..=horizon {
        let col = |f: &dyn Fn(usize) -> f64| mean_and_stderr(&(0..runs.len()).map(f).collect::<Vec<_>>());
        let (m, ms) = col(&|r| runs[r].m[t]);
        let (q, qs) = col(&|r| runs[r].q[t]);
        let (pm, _) = col(&|r| runs[r].potential_mean[t]);
        let (pv, _) = col(&|r| runs[r].potential_var[t]);
        let se = |v: f64| if v.is_finite() { v } else { 0.0 };
        table.push(vec![
            t.to_string(),
            float(m),
            float(se(ms)),
            float(q),
            float(se(qs)),
            float(pm),
            float(pv),
        ])?;
    }
    w.table("moments.csv", &table)?;
    if cfg.realizations == 1 {
        if let Some(c) = covariance_table(&runs[0]) {
            w.table("covariance.csv", &c)?;
        }
    } else {
        for (r, run) in runs.iter().enumerate() {
            w.table(&format!("moments_r{r:03}.csv"), &moments_table(run))?;
        }
    }
    if cfg.dump_trajectory {
        let ens = simulate(&realization(&cfg.network, 0))?;
        write_trajectory(&ens, dir, "trajectory")?;
        w.outputs.extend(["trajectory.bin".into(), "trajectory.json".into()]);
    }
    Ok(Outcome {
        seed: cfg.network.seed,
        outputs: w.outputs,
        summary: json!({ "realizations": cfg.realizations, "n": cfg.network.n, "horizon": horizon }),
        failure: None,
    })
}

pub fn meanfield_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let cfg: MeanFieldConfig = parse(text)?;
    let (params, initial) = meanfield_params(&cfg.network)?;
    let series = propagate_moments(&params, initial, &rule(cfg.quadrature, cfg.order, &params.transfer))?;
    let mut w = Writer { dir, outputs: vec![] };
    w.table("meanfield.csv", &series_table(&series))?;
    w.table("meanfield_covariance.csv", &series_covariance(&series))?;
    Ok(Outcome {
        seed: seed.unwrap_or(cfg.network.seed),
        outputs: w.outputs,
        summary: json!({ "q_final": series.q[params.horizon] }),
        failure: None,
    })
}

pub fn compare_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let mut cfg: CompareConfig = parse(text)?;
    if let Some(s) = seed {
        cfg.network.seed = s;
    }
    if cfg.realizations == 0 {
        bail!("realizations must be >= 1");
    }
    let (params, initial) = meanfield_params(&cfg.network)?;
    let series = propagate_moments(&params, initial, &rule(cfg.quadrature, cfg.order, &params.transfer))?;
    let runs = ensemble_moments(&cfg.network, cfg.realizations, false)?;
    let mut table = Table::new(["t", "q_meanfield", "q_sim_mean", "q_sim_stderr", "rel_error"]);
    let mut worst: f64 = 0.0;
    for t in 0..=params.horizon {
        let (q, se) = mean_and_stderr(&runs.iter().map(|r| r.q[t]).collect::<Vec<_>>());
        let expect = series.q[t];
        let rel = if expect == 0.0 {
            (q - expect).abs()
        } else {
            (q / expect - 1.0).abs()
        };
        if t > 0 {
            worst = worst.max(rel);
        }
        table.push(vec![
            t.to_string(),
            float(expect),
            float(q),
            float(if se.is_finite() { se } else { 0.0 }),
            float(rel),
        ])?;
    }
    let pass = worst < cfg.tolerance;
    let mut w = Writer { dir, outputs: vec![] };
    w.table("compare.csv", &table)?;
    let summary =
        json!({ "pass": pass, "max_rel_error": worst, "tolerance": cfg.tolerance, "realizations": cfg.realizations });
    w.json("compare.json", &summary)?;
    Ok(Outcome {
        seed: cfg.network.seed,
        outputs: w.outputs,
        summary,
        failure: (!pass).then(|| format!("relative error {worst:.4} exceeds tolerance {}", cfg.tolerance)),
    })
}

pub fn chaos_surface_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let cfg: ChaosConfig = parse(text)?;
    let (j2, th) = (cfg.coupling_var.points()?, cfg.threshold.points()?);
    let cells = chaos_surface(
        &j2,
        &th,
        cfg.transfer,
        &QuadratureRule::resolved(cfg.transfer.steepness()),
    );
    let mut t = Table::new([
        "coupling_var",
        "threshold",
        "q_star",
        "c_star",
        "qc_gap",
        "multiplier",
        "analytic_multiplier",
        "converged",
    ]);
    for c in &cells {
        t.push(vec![
            float(c.coupling_var),
            float(c.threshold),
            float(c.q_star),
            float(c.c_star),
            float(c.qc_gap),
            float(c.multiplier),
            float(c.analytic_multiplier),
            c.converged.to_string(),
        ])?;
    }
    let mut w = Writer { dir, outputs: vec![] };
    w.table("chaos_surface.csv", &t)?;
    let unconverged = cells.iter().filter(|c| !c.converged).count();
    Ok(Outcome {
        seed: seed.unwrap_or(0),
        outputs: w.outputs,
        summary: json!({ "cells": cells.len(), "unconverged": unconverged }),
        failure: None,
    })
}

pub fn twopop_map_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let cfg: TwoPopMapConfig = parse(text)?;
    let settings = MapSettings {
        noise: cfg.noise,
        gap: cfg.gap,
        gain_scaled_thresholds: cfg.gain_scaled_thresholds,
        classifier: cfg.classifier,
        ..MapSettings::default()
    };
    let cells = bifurcation_map(&cfg.g.points()?, &cfg.d.points()?, &settings);
    let mut t = Table::new([
        "g",
        "d",
        "label",
        "osc_amplitude",
        "spectral_ratio",
        "period",
        "d12_plateau",
        "failure",
    ]);
    for c in &cells {
        let (a, s, p, d) = c.diagnostics.map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |d| {
            (d.osc_amplitude, d.spectral_ratio, d.period, d.d12_plateau)
        });
        t.push(vec![
            float(c.g),
            float(c.d),
            c.label.to_string(),
            float(a),
            float(s),
            float(p),
            float(d),
            c.failure.unwrap_or("").to_string(),
        ])?;
    }
    let mut w = Writer { dir, outputs: vec![] };
    w.table("twopop_map.csv", &t)?;
    let mut labels: Vec<String> = cells.iter().map(|c| c.label.to_string()).collect();
    labels.sort();
    labels.dedup();
    Ok(Outcome {
        seed: seed.unwrap_or(0),
        outputs: w.outputs,
        summary: json!({ "cells": cells.len(), "labels": labels }),
        failure: None,
    })
}

pub fn fp_rate_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let cfg: FpRateConfig = parse(text)?;
    let r = selfconsistent_rate_on(&cfg.network, &cfg.grid)?;
    let mut w = Writer { dir, outputs: vec![] };
    w.table("density.csv", &r.density.table())?;
    let summary = json!({
        "nu0": r.nu0,
        "mu0": r.mu0,
        "sigma0": r.sigma0,
        "y_theta": r.y_theta,
        "y_reset": r.y_reset,
        "residual": r.residual,
        "iterations": r.iterations,
        "density_mass": r.density.mass,
        "density_residual": r.density.residual,
        "weak_noise_rate": dmft::fokker::weak_noise_rate(r.y_theta, cfg.network.tau),
    });
    w.json("fp_rate.json", &summary)?;
    Ok(Outcome {
        seed: seed.unwrap_or(0),
        outputs: w.outputs,
        summary,
        failure: None,
    })
}

pub fn fp_evolve_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let cfg: FpEvolveConfig = parse(text)?;
    let run = fp_time_stepper(
        &cfg.network,
        &InitialDensity::Stationary { kick: cfg.kick },
        cfg.duration,
        &cfg.fp,
    )?;
    let mut rate = Table::new(["time", "rate"]);
    for (t, r) in run.times.iter().zip(&run.rate) {
        rate.push_floats(&[*t, *r])?;
    }
    let mut density = Table::new(["u", "p"]);
    for (u, p) in run.centers.iter().zip(&run.density) {
        density.push_floats(&[*u, *p])?;
    }
    let mut w = Writer { dir, outputs: vec![] };
    w.table("fp_rate_trace.csv", &rate)?;
    w.table("fp_final_density.csv", &density)?;
    let mut summary = json!({
        "nu0": run.nu0,
        "dt": run.dt,
        "mass_drift": run.mass_drift,
        "relative_amplitude": run.relative_amplitude(cfg.duration.min(10.0)),
    });
    if let Some(scan) = &cfg.scan {
        let cells = oscillation_scan(
            &cfg.network,
            &scan.mu_ext.points()?,
            &scan.sigma_ext.points()?,
            &scan.options,
        );
        w.table("oscillation_scan.csv", &scan_table(&cells))?;
        summary["scan_cells"] = json!(cells.len());
    }
    Ok(Outcome {
        seed: seed.unwrap_or(0),
        outputs: w.outputs,
        summary,
        failure: None,
    })
}

pub fn spiking_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let mut cfg: SpikingConfig = parse(text)?;
    if let Some(s) = seed {
        cfg.spiking.seed = s;
    }
    let run = simulate_spiking(&cfg.network, &cfg.spiking)?;
    let mut rate = Table::new(["time", "rate"]);
    for (i, r) in run.rate.iter().enumerate() {
        rate.push_floats(&[(i as f64 + 0.5) * run.bin, *r])?;
    }
    let mut w = Writer { dir, outputs: vec![] };
    w.table("spiking_rate.csv", &rate)?;
    if cfg.spiking.record_spikes {
        w.table("raster.csv", &run.raster_table())?;
    }
    let nu0 = selfconsistent_rate_on(&cfg.network, &DensityGrid::default())
        .map(|r| r.nu0)
        .ok();
    let summary = json!({
        "mean_rate": run.mean_rate,
        "rate_stderr": run.rate_stderr,
        "total_spikes": run.total_spikes,
        "nu0": nu0,
    });
    w.json("spiking.json", &summary)?;
    Ok(Outcome {
        seed: cfg.spiking.seed,
        outputs: w.outputs,
        summary,
        failure: None,
    })
}

pub fn girsanov_cmd(text: &str, seed: Option<u64>, dir: &Path) -> Result<Outcome> {
    let cfg: GirsanovConfig = parse(text)?;
    let seed = seed.unwrap_or(cfg.seed);
    let law = TrajectoryLaw {
        model: cfg.model,
        initial: cfg.initial,
        threshold: cfg.threshold,
        noise: cfg.noise,
        horizon: cfg.horizon,
    };
    let coupling = Coupling::new(cfg.coupling_mean, cfg.coupling_var);
    let report = normalization_report(&law, coupling, cfg.neurons, cfg.replicas, cfg.mu_size, seed)?;
    let pass = report.propagator.z_score(1.0) < 3.0 && report.network.z_score(1.0) < 3.0;
    let summary = json!({ "report": report, "pass": pass });
    let mut w = Writer { dir, outputs: vec![] };
    w.json("girsanov.json", &summary)?;
    Ok(Outcome {
        seed,
        outputs: w.outputs,
        summary,
        failure: (!pass).then(|| "density normalization off by more than 3 standard errors".to_string()),
    })
}
