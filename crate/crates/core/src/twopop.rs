//! Two-population mean-field equations, the `(g, d)` excitatory/inhibitory
//! family and the dynamical-regime classifier.
//!
//! Population `k` receives from population `j` through weights with mean
//! `J̄_kj / N` and variance `J²_kj / N`. The field of population `k` is
//! a sum over sources `j`, each term driven by the potential law of `j`.

use crate::error::{Error, Result};
use crate::meanfield::{
    activation_moments, activation_product, MarginalSeries, MomentSeries, NoiseCoupling, PotentialLaw, SymMatrix,
    TwinInitial,
};
use crate::quadrature::QuadratureRule;
use crate::scalar::Scalar;
use crate::transfer::TransferFunction;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPopParams<T> {
    /// Fraction `λ` of neurons in population 1; only finite-size
    /// simulations use it.
    pub fraction: T,
    /// `mean[k][j] = J̄_kj`.
    pub mean: [[T; 2]; 2],
    /// `variance[k][j] = J²_kj`.
    pub variance: [[T; 2]; 2],
    pub thresholds: [T; 2],
    pub noise: T,
    pub transfer: TransferFunction<T>,
    pub horizon: usize,
}

impl<T: Scalar> TwoPopParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > T::zero() && self.fraction < T::one()) {
            return Err(Error::config(format!("λ must lie in (0, 1), got {}", self.fraction)));
        }
        if self.variance.iter().flatten().any(|&v| v < T::zero()) {
            return Err(Error::config("J²_kj must be >= 0"));
        }
        if self.noise < T::zero() {
            return Err(Error::config("σ must be >= 0"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        Ok(())
    }

    fn source_used(&self, j: usize) -> bool {
        (0..2).any(|k| self.variance[k][j] != T::zero())
    }
}

/// Nonlinearity scale `g` and differentiation scale `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GDPoint<T> {
    pub g: T,
    pub d: T,
}

/// Threshold of the inhibitory population in the `(g, d)` family.
pub const INHIBITORY_THRESHOLD: f64 = 0.3;

/// Excitatory population 1, inhibitory population 2, with
/// `J̄ = (gd, −2gd; gd, 0)`, `J = (g, √2 g; g, 0)`, `θ = (0, 0.3)`,
/// `λ = 1/2`, unit logistic gain, no noise and horizon 300.
pub fn gd_to_params<T: Scalar>(point: GDPoint<T>) -> Result<TwoPopParams<T>> {
    let GDPoint { g, d } = point;
    if !(g > T::zero()) || !(d >= T::zero()) {
        return Err(Error::config(format!("need g > 0 and d >= 0, got g = {g}, d = {d}")));
    }
    let gd = g * d;
    let g2 = g * g;
    Ok(TwoPopParams {
        fraction: T::half(),
        mean: [[gd, -T::two() * gd], [gd, T::zero()]],
        variance: [[g2, T::two() * g2], [g2, T::zero()]],
        thresholds: [T::zero(), T::of(INHIBITORY_THRESHOLD)],
        noise: T::zero(),
        transfer: TransferFunction::default(),
        horizon: 300,
    })
}

fn blank_marginal<T: Scalar>(n: usize, law: PotentialLaw<T>) -> MarginalSeries<T> {
    MarginalSeries {
        m: vec![T::zero(); n],
        q: vec![T::zero(); n],
        potential_mean: vec![law.mean; n],
        potential_var: vec![law.var.max(T::zero()); n],
    }
}

/// One step of the marginal recursion for both populations.
fn advance_marginals<T: Scalar>(
    p: &TwoPopParams<T>,
    pops: &mut [MarginalSeries<T>; 2],
    t: usize,
    rule: &QuadratureRule<T>,
) -> Result<()> {
    let mut ef = [(T::zero(), T::zero()); 2];
    for (j, e) in ef.iter_mut().enumerate() {
        *e = activation_moments(rule, &p.transfer, pops[j].potential_law(t))?;
    }
    let sigma2 = p.noise * p.noise;
    for (k, pop) in pops.iter_mut().enumerate() {
        let m = p.mean[k][0] * ef[0].0 + p.mean[k][1] * ef[1].0;
        let q = p.variance[k][0] * ef[0].1 + p.variance[k][1] * ef[1].1;
        pop.m[t + 1] = m;
        pop.q[t + 1] = q;
        pop.potential_mean[t + 1] = m - p.thresholds[k];
        pop.potential_var[t + 1] = q + sigma2;
    }
    Ok(())
}

/// Means and variances only, `O(T)`.
pub fn propagate_two_pop_marginals<T: Scalar>(
    params: &TwoPopParams<T>,
    initial: [PotentialLaw<T>; 2],
    rule: &QuadratureRule<T>,
) -> Result<[MarginalSeries<T>; 2]> {
    params.validate()?;
    let n = params.horizon + 1;
    let mut pops = [blank_marginal(n, initial[0]), blank_marginal(n, initial[1])];
    for t in 0..params.horizon {
        advance_marginals(params, &mut pops, t, rule)?;
    }
    Ok(pops)
}

/// Full recursion including the covariance `c_k(s, t)` of each population's
/// field. The pair expectation of source `j` uses the potential covariance of
/// population `j`, which keeps `c_k(t, t) = q_k(t)`.
pub fn propagate_two_pop<T: Scalar>(
    params: &TwoPopParams<T>,
    initial: [PotentialLaw<T>; 2],
    rule: &QuadratureRule<T>,
) -> Result<[MomentSeries<T>; 2]> {
    params.validate()?;
    let horizon = params.horizon;
    let n = horizon + 1;
    let mut marg = [blank_marginal(n, initial[0]), blank_marginal(n, initial[1])];
    let mut cov = [SymMatrix::zeros(n), SymMatrix::zeros(n)];
    let potential_cov = |marg: &[MarginalSeries<T>; 2], cov: &[SymMatrix<T>; 2], j: usize, s: usize, t: usize| {
        if s == t {
            marg[j].potential_var[t]
        } else if s == 0 || t == 0 {
            T::zero()
        } else {
            cov[j].get(s, t)
        }
    };
    for t in 0..horizon {
        advance_marginals(params, &mut marg, t, rule)?;
        let mut pair = [vec![T::zero(); t], vec![T::zero(); t]];
        for (j, row) in pair.iter_mut().enumerate() {
            if !params.source_used(j) {
                continue;
            }
            let (m, c) = (&marg, &cov);
            *row = (0..t)
                .into_par_iter()
                .map(|s| {
                    activation_product(
                        rule,
                        &params.transfer,
                        m[j].potential_law(s),
                        m[j].potential_law(t),
                        potential_cov(m, c, j, s, t),
                    )
                })
                .collect::<Result<_>>()?;
        }
        for k in 0..2 {
            for s in 0..t {
                let v = params.variance[k][0] * pair[0][s] + params.variance[k][1] * pair[1][s];
                cov[k].set(s + 1, t + 1, v);
            }
            cov[k].set(t + 1, t + 1, marg[k].q[t + 1]);
        }
    }
    let [m0, m1] = marg;
    let [c0, c1] = cov;
    let build = |m: MarginalSeries<T>, c: SymMatrix<T>| MomentSeries {
        m: m.m,
        q: m.q,
        c,
        potential_mean: m.potential_mean,
        potential_var: m.potential_var,
    };
    Ok([build(m0, c0), build(m1, c1)])
}

/// Twin trajectories of the two-population network.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPopTwin<T> {
    pub first: [MarginalSeries<T>; 2],
    pub second: [MarginalSeries<T>; 2],
    /// Field cross covariance per population.
    pub c12: [Vec<T>; 2],
    /// Field mean squared distance per population; entry 0 is the initial
    /// potential distance.
    pub d12: [Vec<T>; 2],
}

/// Cross-covariance recursion applied per population.
pub fn two_pop_twin<T: Scalar>(
    params: &TwoPopParams<T>,
    initial: [TwinInitial<T>; 2],
    coupling: NoiseCoupling,
    rule: &QuadratureRule<T>,
) -> Result<TwoPopTwin<T>> {
    params.validate()?;
    let n = params.horizon + 1;
    let mut first = [blank_marginal(n, initial[0].first), blank_marginal(n, initial[1].first)];
    let mut second = [
        blank_marginal(n, initial[0].second),
        blank_marginal(n, initial[1].second),
    ];
    let mut c12 = [vec![T::zero(); n], vec![T::zero(); n]];
    let mut d12 = [vec![T::zero(); n], vec![T::zero(); n]];
    for k in 0..2 {
        let (a, b) = (initial[k].first, initial[k].second);
        let dm = a.mean - b.mean;
        d12[k][0] = a.var + b.var - T::two() * initial[k].cross_cov + dm * dm;
    }
    let sigma2 = params.noise * params.noise;
    for t in 0..params.horizon {
        advance_marginals(params, &mut first, t, rule)?;
        advance_marginals(params, &mut second, t, rule)?;
        let mut e = [T::zero(); 2];
        for (j, ej) in e.iter_mut().enumerate() {
            if !params.source_used(j) {
                continue;
            }
            let cov = if t == 0 {
                initial[j].cross_cov
            } else {
                match coupling {
                    NoiseCoupling::Independent => c12[j][t],
                    NoiseCoupling::Shared => c12[j][t] + sigma2,
                }
            };
            *ej = activation_product(
                rule,
                &params.transfer,
                first[j].potential_law(t),
                second[j].potential_law(t),
                cov,
            )?;
        }
        for k in 0..2 {
            let c = params.variance[k][0] * e[0] + params.variance[k][1] * e[1];
            c12[k][t + 1] = c;
            let dm = first[k].m[t + 1] - second[k].m[t + 1];
            d12[k][t + 1] = first[k].q[t + 1] + second[k].q[t + 1] - T::two() * c + dm * dm;
        }
    }
    Ok(TwoPopTwin {
        first,
        second,
        c12,
        d12,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    FixedPoint,
    SynchronousOscillation,
    StationaryChaos,
    CycloStationaryChaos,
    /// Neither settled nor periodic; see the diagnostics.
    Unclassified,
}

impl RegimeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeLabel::FixedPoint => "fixed-point",
            RegimeLabel::SynchronousOscillation => "synchronous-oscillation",
            RegimeLabel::StationaryChaos => "stationary-chaos",
            RegimeLabel::CycloStationaryChaos => "cyclo-stationary-chaos",
            RegimeLabel::Unclassified => "unclassified",
        }
    }
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds of the regime classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub burn_in: usize,
    pub window_end: usize,
    /// Window at the end used for amplitude and plateau estimates.
    pub tail: usize,
    /// Relative amplitude below which `q_k` counts as settled.
    pub eps_q: f64,
    /// Plateau threshold relative to `max(q₁*, q₂*)`.
    pub eps_d_rel: f64,
    /// Spectral peak to median background ratio for periodicity.
    pub spectral_ratio: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            burn_in: 100,
            window_end: 300,
            tail: 100,
            eps_q: 1e-4,
            eps_d_rel: 1e-3,
            spectral_ratio: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeDiagnostics {
    /// Largest relative peak-to-peak amplitude of `q_k` over the tail.
    pub osc_amplitude: f64,
    /// Smallest spectral peak-to-background ratio over the two populations.
    pub spectral_ratio: f64,
    /// Dominant period in steps (population with the larger amplitude).
    pub period: f64,
    /// Largest tail mean of `d₁₂` over the two populations.
    pub d12_plateau: f64,
    /// Tail means of `q_k`.
    pub q_star: [f64; 2],
    pub eps_d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Regime {
    pub label: RegimeLabel,
    pub diagnostics: RegimeDiagnostics,
}

/// Peak-to-background ratio and period of the dominant non-zero frequency
/// of a Hann-windowed series.
fn spectral_peak(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            (v - mean) * hann
        })
        .collect();
    let power: Vec<f64> = (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in w.iter().enumerate() {
                let ph = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v * ph.cos();
                im -= v * ph.sin();
            }
            re * re + im * im
        })
        .collect();
    let (peak, &pmax) = power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    if pmax <= 0.0 {
        return (0.0, f64::INFINITY);
    }
    // exclude the peak and its Hann side lobes from the background
    let mut rest: Vec<f64> = power
        .iter()
        .enumerate()
        .filter(|(k, _)| k.abs_diff(peak) > 2)
        .map(|(_, &p)| p)
        .collect();
    rest.sort_by(f64::total_cmp);
    let background = if rest.is_empty() { 0.0 } else { rest[rest.len() / 2] };
    let ratio = if background > 0.0 {
        pmax / background
    } else {
        f64::INFINITY
    };
    (ratio, n as f64 / (peak + 1) as f64)
}

/// Classifies the asymptotic regime from per-population `q_k(t)` and twin
/// distances `d₁₂,k(t)`.
pub fn classify_regime<T: Scalar>(q: [&[T]; 2], d12: [&[T]; 2], cfg: &ClassifierConfig) -> Result<Regime> {
    let need = cfg.window_end + 1;
    if cfg.burn_in + 2 * cfg.tail > cfg.window_end + 1 || cfg.tail < 4 {
        return Err(Error::config("classifier window too short for its burn-in and tail"));
    }
    for s in q.iter().chain(d12.iter()) {
        if s.len() < need {
            return Err(Error::config(format!(
                "series of length {} is shorter than the analysis window end {}",
                s.len(),
                cfg.window_end
            )));
        }
    }
    let tail_lo = need - cfg.tail;
    let mut q_star = [0.0; 2];
    let mut amplitude = 0.0f64;
    let mut ratio = f64::INFINITY;
    let mut period = 0.0;
    let mut best_amp = -1.0;
    for k in 0..2 {
        let tail: Vec<f64> = q[k][tail_lo..need].iter().map(|v| v.as_f64()).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        q_star[k] = mean;
        let rel = if mean.abs() > 0.0 {
            (hi - lo) / mean.abs()
        } else {
            hi - lo
        };
        amplitude = amplitude.max(rel);
        if hi - lo > 0.0 {
            let window: Vec<f64> = q[k][cfg.burn_in..need].iter().map(|v| v.as_f64()).collect();
            let (r, p) = spectral_peak(&window);
            ratio = ratio.min(r);
            if rel > best_amp {
                best_amp = rel;
                period = p;
            }
        }
    }
    let plateau = (0..2)
        .map(|k| d12[k][tail_lo..need].iter().map(|v| v.as_f64()).sum::<f64>() / cfg.tail as f64)
        .fold(0.0f64, f64::max);
    let eps_d = cfg.eps_d_rel * q_star[0].max(q_star[1]);
    let settled = amplitude < cfg.eps_q;
    let periodic = !settled && ratio > cfg.spectral_ratio;
    let diverging = plateau > eps_d;
    let label = match (settled, periodic, diverging) {
        (true, _, false) => RegimeLabel::FixedPoint,
        (true, _, true) => RegimeLabel::StationaryChaos,
        (false, true, false) => RegimeLabel::SynchronousOscillation,
        (false, true, true) => RegimeLabel::CycloStationaryChaos,
        (false, false, _) => RegimeLabel::Unclassified,
    };
    Ok(Regime {
        label,
        diagnostics: RegimeDiagnostics {
            osc_amplitude: amplitude,
            spectral_ratio: if settled { 0.0 } else { ratio },
            period: if settled { 0.0 } else { period },
            d12_plateau: plateau,
            q_star,
            eps_d,
        },
    })
}

/// Settings shared by every cell of a bifurcation map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSettings<T> {
    pub initial: PotentialLaw<T>,
    /// Standard deviation of the independent gap added to the second twin.
    pub gap: T,
    pub noise: T,
    pub transfer: TransferFunction<T>,
    pub rule: QuadratureRule<T>,
    pub classifier: ClassifierConfig,
    /// Read `g` as the gain of the transfer function, so thresholds given in
    /// potential units are multiplied by `g` along with the weights.
    pub gain_scaled_thresholds: bool,
}

impl<T: Scalar> Default for MapSettings<T> {
    fn default() -> Self {
        MapSettings {
            initial: PotentialLaw::new(T::zero(), T::one()),
            gap: T::of(0.1),
            noise: T::zero(),
            transfer: TransferFunction::default(),
            rule: QuadratureRule::resolved(T::one()),
            classifier: ClassifierConfig::default(),
            gain_scaled_thresholds: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MapCell {
    pub g: f64,
    pub d: f64,
    pub label: RegimeLabel,
    pub diagnostics: Option<RegimeDiagnostics>,
    /// Failure message when the cell could not be computed.
    pub failure: Option<&'static str>,
}

/// Classifies one `(g, d)` cell. Twins share their noise, so the distance
/// measures sensitivity to the initial condition alone.
pub fn classify_point<T: Scalar>(point: GDPoint<T>, settings: &MapSettings<T>) -> Result<Regime> {
    let mut params = gd_to_params(point)?;
    if settings.gain_scaled_thresholds {
        for th in params.thresholds.iter_mut() {
            *th = *th * point.g;
        }
    }
    classify_params(params, settings)
}

/// Classifies an arbitrary parameter set; noise, transfer and horizon are
/// taken from `settings`.
pub fn classify_params<T: Scalar>(mut params: TwoPopParams<T>, settings: &MapSettings<T>) -> Result<Regime> {
    params.noise = settings.noise;
    params.transfer = settings.transfer;
    params.horizon = settings.classifier.window_end;
    let twin = TwinInitial::perturbed(settings.initial, settings.gap);
    let run = two_pop_twin(&params, [twin, twin], NoiseCoupling::Shared, &settings.rule)?;
    classify_regime(
        [&run.first[0].q, &run.first[1].q],
        [&run.d12[0], &run.d12[1]],
        &settings.classifier,
    )
}

/// Regime labels over a `(g, d)` grid, row-major in `g`.
pub fn bifurcation_map<T: Scalar>(g_grid: &[T], d_grid: &[T], settings: &MapSettings<T>) -> Vec<MapCell> {
    let cells: Vec<(T, T)> = g_grid
        .iter()
        .flat_map(|&g| d_grid.iter().map(move |&d| (g, d)))
        .collect();
    cells
        .into_par_iter()
        .map(|(g, d)| match classify_point(GDPoint { g, d }, settings) {
            Ok(r) => MapCell {
                g: g.as_f64(),
                d: d.as_f64(),
                label: r.label,
                diagnostics: Some(r.diagnostics),
                failure: None,
            },
            Err(e) => MapCell {
                g: g.as_f64(),
                d: d.as_f64(),
                label: RegimeLabel::Unclassified,
                diagnostics: None,
                failure: Some(e.kind()),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gh() -> QuadratureRule<f64> {
        QuadratureRule::default()
    }

    #[test]
    fn gd_mapping_examples() {
        let p = gd_to_params(GDPoint { g: 1.0, d: 0.0 }).unwrap();
        assert!(p.mean.iter().flatten().all(|&m| m == 0.0));
        let stds: Vec<f64> = p.variance.iter().flatten().map(|v: &f64| v.sqrt()).collect();
        let expected = [1.0, 2f64.sqrt(), 1.0, 0.0];
        for (a, b) in stds.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = gd_to_params(GDPoint { g: 2.0, d: 1.0 }).unwrap();
        assert_eq!(p.mean[0][1], -4.0);
        for &(g, d) in &[(1.0, 0.0), (3.0, 2.5), (10.0, 3.0)] {
            assert_eq!(gd_to_params(GDPoint { g, d }).unwrap().thresholds, [0.0, 0.3]);
        }
        assert!(gd_to_params(GDPoint { g: 0.0, d: 1.0 }).is_err());
        assert!(gd_to_params(GDPoint { g: 1.0, d: -1.0 }).is_err());
    }

    #[test]
    fn gd_mapping_linear_in_d_and_constant_variance() {
        for &g in &[0.5, 2.0, 7.0] {
            let at = |d: f64| gd_to_params(GDPoint { g, d }).unwrap();
            let (p0, p1, p2) = (at(0.0), at(1.0), at(2.5));
            for k in 0..2 {
                for j in 0..2 {
                    let slope = p1.mean[k][j] - p0.mean[k][j];
                    assert!((p2.mean[k][j] - (p0.mean[k][j] + 2.5 * slope)).abs() < 1e-12);
                    assert_eq!(p0.variance[k][j], p2.variance[k][j]);
                }
            }
        }
    }

    fn symmetric(theta: f64) -> TwoPopParams<f64> {
        TwoPopParams {
            fraction: 0.3,
            mean: [[0.5, -1.0], [0.5, -1.0]],
            variance: [[2.0, 1.5], [2.0, 1.5]],
            thresholds: [theta, theta],
            noise: 0.2,
            transfer: TransferFunction::default(),
            horizon: 20,
        }
    }

    #[test]
    fn uncoupled_populations_stay_at_free_values() {
        let mut p = symmetric(0.4);
        p.mean = [[0.0; 2]; 2];
        p.variance = [[0.0; 2]; 2];
        p.noise = 0.0;
        let s = propagate_two_pop(&p, [PotentialLaw::new(1.0, 2.0); 2], &gh()).unwrap();
        for pop in &s {
            assert!(pop.m.iter().all(|&m| m == 0.0));
            assert!(pop.potential_mean[1..].iter().all(|&a| a == -0.4));
            assert!(pop.potential_var[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn symmetric_populations_are_identical() {
        let s = propagate_two_pop(&symmetric(0.1), [PotentialLaw::new(0.2, 0.5); 2], &gh()).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn per_population_invariants() {
        let mut p = gd_to_params(GDPoint { g: 2.0, d: 1.5 }).unwrap();
        p.horizon = 25;
        p.noise = 0.3;
        let s = propagate_two_pop(&p, [PotentialLaw::new(0.0, 1.0); 2], &gh()).unwrap();
        let marg = propagate_two_pop_marginals(&p, [PotentialLaw::new(0.0, 1.0); 2], &gh()).unwrap();
        for k in 0..2 {
            assert_eq!(s[k].q, marg[k].q);
            assert_eq!(s[k].m, marg[k].m);
            for t in 0..=25 {
                assert!(s[k].q[t] >= 0.0);
                assert_eq!(s[k].c.get(t, t), s[k].q[t]);
                for u in 0..=25 {
                    assert!(s[k].c.get(t, u).abs() <= (s[k].q[t] * s[k].q[u]).sqrt() + 1e-8);
                }
            }
            assert!(s[k].c.min_eigenvalue() > -1e-8);
        }
    }

    #[test]
    fn twin_of_identical_initials_does_not_separate() {
        // in a chaotic cell identical twins are an unstable solution and round-off grows
        let p = gd_to_params(GDPoint { g: 3.0, d: 1.0 }).unwrap();
        let law = PotentialLaw::new(0.0, 1.0);
        let twin = TwinInitial {
            first: law,
            second: law,
            cross_cov: 1.0,
        };
        let r = two_pop_twin(&p, [twin, twin], NoiseCoupling::Shared, &gh()).unwrap();
        assert!(r.d12.iter().flatten().all(|&d| d.abs() < 1e-9));
    }

    fn flat(v: f64) -> Vec<f64> {
        vec![v; 301]
    }

    fn wave(mean: f64, amp: f64, period: f64) -> Vec<f64> {
        (0..301)
            .map(|t| mean + amp * (2.0 * std::f64::consts::PI * t as f64 / period).sin())
            .collect()
    }

    #[test]
    fn classifier_on_synthetic_series() {
        let cfg = ClassifierConfig::default();
        let zero = flat(0.0);
        let cases = [
            (flat(1.0), flat(1.0), zero.clone(), RegimeLabel::FixedPoint),
            (flat(1.0), flat(2.0), flat(0.5), RegimeLabel::StationaryChaos),
            (
                wave(1.0, 0.2, 7.0),
                wave(1.0, 0.1, 7.0),
                zero.clone(),
                RegimeLabel::SynchronousOscillation,
            ),
            (
                wave(1.0, 0.2, 5.0),
                flat(1.0),
                flat(0.3),
                RegimeLabel::CycloStationaryChaos,
            ),
        ];
        for (q1, q2, d, label) in cases {
            let r = classify_regime([&q1, &q2], [&d, &d], &cfg).unwrap();
            assert_eq!(r.label, label, "{:?}", r.diagnostics);
        }
        let r = classify_regime([&wave(1.0, 0.2, 8.0), &flat(1.0)], [&zero, &zero], &cfg).unwrap();
        assert!((r.diagnostics.period - 8.0).abs() < 0.5);
    }

    #[test]
    fn broadband_macroscopic_series_is_unclassified() {
        use rand::Rng;
        let mut rng = crate::rng::rng_stream(5, 0);
        let q: Vec<f64> = (0..301).map(|_| 1.0 + rng.random::<f64>()).collect();
        let d = flat(1.0);
        let r = classify_regime([&q, &q], [&d, &d], &ClassifierConfig::default()).unwrap();
        assert_eq!(r.label, RegimeLabel::Unclassified);
        assert!(r.diagnostics.osc_amplitude > 1e-4);
    }

    #[test]
    fn classifier_rejects_short_series() {
        let short = vec![1.0; 150];
        assert!(classify_regime([&short, &short], [&short, &short], &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn regimes_at_representative_points() {
        let settings = MapSettings::default();
        let label = |g: f64, d: f64| classify_point(GDPoint { g, d }, &settings).unwrap().label;
        assert_eq!(label(1.0, 0.0), RegimeLabel::FixedPoint);
        assert_eq!(label(1.0, 2.5), RegimeLabel::FixedPoint);
        assert_eq!(label(9.0, 0.0), RegimeLabel::StationaryChaos);
        assert_eq!(label(9.0, 2.67), RegimeLabel::SynchronousOscillation);
        assert_eq!(label(9.0, 2.0), RegimeLabel::CycloStationaryChaos);
    }

    #[test]
    fn weak_differentiation_slice_is_monotone() {
        let settings = MapSettings::default();
        let labels: Vec<RegimeLabel> = [1.0, 3.0, 5.0, 7.0, 8.0, 9.0, 10.0]
            .iter()
            .map(|&g| classify_point(GDPoint { g, d: 0.0 }, &settings).unwrap().label)
            .collect();
        assert_eq!(labels[0], RegimeLabel::FixedPoint);
        assert_eq!(*labels.last().unwrap(), RegimeLabel::StationaryChaos);
        let first_chaos = labels.iter().position(|&l| l == RegimeLabel::StationaryChaos).unwrap();
        assert!(labels[..first_chaos].iter().all(|&l| l == RegimeLabel::FixedPoint));
        assert!(labels[first_chaos..].iter().all(|&l| l == RegimeLabel::StationaryChaos));
    }

    #[test]
    fn map_is_row_major() {
        let cells = bifurcation_map(&[1.0, 2.0], &[0.0, 1.0, 2.0], &MapSettings::default());
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[4].g, cells[4].d), (2.0, 1.0));
        assert!(cells.iter().all(|c| c.failure.is_none()));
    }

    #[test]
    fn single_precision_marginals() {
        let p = gd_to_params(GDPoint { g: 2.0f32, d: 1.0 }).unwrap();
        let s =
            propagate_two_pop_marginals(&p, [PotentialLaw::new(0.0f32, 1.0); 2], &QuadratureRule::default()).unwrap();
        let p64 = gd_to_params(GDPoint { g: 2.0, d: 1.0 }).unwrap();
        let s64 = propagate_two_pop_marginals(&p64, [PotentialLaw::new(0.0, 1.0); 2], &gh()).unwrap();
        assert!((f64::from(s[0].q[300]) - s64[0].q[300]).abs() < 1e-4);
    }
}
