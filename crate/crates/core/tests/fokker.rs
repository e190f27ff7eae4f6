use dmft::fokker::{
    fp_time_stepper, oscillation_scan, scan_table, selfconsistent_rate, simulate_spiking, ExternalDrive, FpOptions,
    IFContinuousParams, InitialDensity, OnsetLabel, ScanOptions, SpikingOptions,
};

fn network(mu: f64, sigma: f64) -> IFContinuousParams {
    IFContinuousParams {
        tau: 1.0,
        threshold: 20.0,
        reset: 10.0,
        weight: 0.1,
        connections: 1000.0,
        delay: 0.1,
        external: ExternalDrive::Moments { mu, sigma },
    }
}

#[test]
fn spiking_rate_is_insensitive_to_the_step() {
    let p = network(25.0, 4.0);
    let coarse = simulate_spiking(
        &p,
        &SpikingOptions {
            step: 0.01,
            ..SpikingOptions::default()
        },
    )
    .unwrap();
    let fine = simulate_spiking(
        &p,
        &SpikingOptions {
            step: 0.005,
            ..SpikingOptions::default()
        },
    )
    .unwrap();
    let se = coarse.rate_stderr.hypot(fine.rate_stderr);
    assert!(
        (coarse.mean_rate - fine.mean_rate).abs() < 2.0 * se,
        "{} vs {} (se {se})",
        coarse.mean_rate,
        fine.mean_rate
    );
    let nu0 = selfconsistent_rate(&p).unwrap().nu0;
    assert!((fine.mean_rate / nu0 - 1.0).abs() < 0.1);
}

#[test]
fn strong_feedback_oscillates() {
    let run = fp_time_stepper(
        &network(30.0, 1.0),
        &InitialDensity::Stationary { kick: 0.2 },
        30.0,
        &FpOptions::default(),
    )
    .unwrap();
    assert!(run.relative_amplitude(10.0) > 0.05);
    assert!(run.mass_drift < 1e-6 * 30.0);
}

#[test]
fn drive_destabilises_and_noise_restabilises() {
    let cells = oscillation_scan(&network(25.0, 2.0), &[20.0, 40.0], &[1.0, 8.0], &ScanOptions::default());
    let label = |i: usize| cells[i].label.unwrap();
    // row-major in mu: (20,1) (20,8) (40,1) (40,8)
    assert_eq!(label(0), OnsetLabel::Stationary);
    assert_eq!(label(2), OnsetLabel::Oscillatory);
    let strong = oscillation_scan(&network(30.0, 2.0), &[30.0], &[1.0, 8.0], &ScanOptions::default());
    assert_eq!(strong[0].label, Some(OnsetLabel::Oscillatory));
    assert_eq!(strong[1].label, Some(OnsetLabel::Stationary));
    assert_eq!(scan_table(&cells).len(), 4);
}
