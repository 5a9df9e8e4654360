//! One runner per subcommand. Each reads its resolved config section,
//! calls into the core library and writes its artifacts.

use fluctlab_core::coupling::Coupling;
use fluctlab_core::dynamics::{evolve, CsvRecorder, Probe};
use fluctlab_core::fluctuation::{
    bg_integrals, bg_residual, clt_time_variance, empirical_time_covariance, field_value, fit_decay, grid_minimum,
    ou_covariance_predict, paired_residual_gap, residual_minimizer, simulate_fields, BgConfig, CltConfig,
    CltObservable, TestFunction,
};
use fluctlab_core::model::{fill_equilibrium, total_energy};
use fluctlab_core::rng::{par_replicas, replica_rng};
use fluctlab_core::spectral::{
    diffusive_relaxation_time, fourier_energy_probe, kac_relaxation_time, path_lemma_check, poincare_check,
    relaxation_scan, scaling_fit, InequalityReport, RelaxationConfig,
};
use fluctlab_core::sphere::{
    divergence_check, ensemble_gap, fill_sphere, moment_check, telescoping_check, CheckReport, ExponentVector,
    SphereSpec, Verdict,
};
use fluctlab_core::variational::{diffusion_coefficient, gradient_type_variance, BasisSpec, LocalFunction, VarianceTarget};
use fluctlab_core::{Polynomial, Result as CoreResult, VelocityField};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, Start};
use crate::output::{Artifacts, Cell};
use crate::CliError;

trait At<T> {
    fn at(self, module: &'static str, operation: &'static str) -> Result<T, CliError>;
}

impl<T> At<T> for CoreResult<T> {
    fn at(self, module: &'static str, operation: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::runtime(module, operation, e.to_string()))
    }
}

/// Initial conditions use streams far from the dynamics streams.
const START_STREAM: u64 = 1 << 62;

/// Runs the experiment and returns a one-line summary for stdout.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    match kind {
        ExperimentKind::Simulate => simulate(cfg, art),
        ExperimentKind::DiffusionCoefficient => diffusion(cfg, art),
        ExperimentKind::Fluctuations => fluctuations(cfg, art),
        ExperimentKind::CltVariances => clt_variances(cfg, art),
        ExperimentKind::BgResidual => bg(cfg, art),
        ExperimentKind::SphereChecks => sphere_checks(cfg, art),
        ExperimentKind::SpectralGap => spectral_gap(cfg, art),
        ExperimentKind::EnsembleGap => ensemble(cfg, art),
    }
}

fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.simulate.clone().expect("resolved");
    let params = &cfg.model;
    let integ = cfg.integrator();
    let n = params.n_sites;
    let periodic = params.topology == fluctlab_core::Topology::Periodic;
    let preamble = art.csv_preamble();
    let runs = par_replicas(cfg.replicas(), |r| {
        let mut rng = replica_rng(cfg.seed, START_STREAM + r);
        let mut p = vec![0.0; n];
        match sec.start {
            Start::Equilibrium => fill_equilibrium(&mut p, params.y, &mut rng),
            Start::Sphere => fill_sphere(&mut p, SphereSpec::for_model(n, params.y)?, &mut rng),
        }
        let mut probes = vec![Probe::new("energy", total_energy)];
        if periodic {
            for &m in &sec.modes {
                let grid = TestFunction::cosine(m).grid_values(n);
                let y = params.y;
                probes.push(Probe::new(format!("field-mode-{m}"), move |p: &[f64]| field_value(p, &grid, y)));
            }
        }
        let mut rec = CsvRecorder::new(preamble.clone().into_bytes(), probes)?;
        let traj = evolve(
            &VelocityField::new(p, params.topology),
            sec.t_final,
            params,
            &integ,
            r,
            sec.sample_interval,
            &mut [&mut rec],
        )?;
        Ok((rec.into_inner(), traj))
    })
    .at("dynamics", "evolve")?;
    let mut summary = Vec::new();
    for (r, (bytes, traj)) in runs.iter().enumerate() {
        art.raw_csv(&format!("trajectory-{r:03}.csv"), bytes)?;
        summary.push(json!({
            "replica": r,
            "samples": traj.times.len(),
            "initial_energy": traj.initial_energy,
            "final_energy": traj.final_energy,
            "max_energy_drift": traj.max_energy_drift,
        }));
    }
    let worst = runs.iter().map(|(_, t)| t.max_energy_drift).fold(0.0, f64::max);
    art.json("summary.json", &json!({ "n_sites": n, "t_final": sec.t_final, "replicas": summary }))?;
    Ok(json!({ "max_energy_drift": worst }))
}

fn diffusion(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.diffusion_coefficient.clone().expect("resolved");
    let coupling = &cfg.model.coupling;
    let spec = sec.basis.unwrap_or_else(|| BasisSpec::default_for(coupling));
    let (rep, _) = diffusion_coefficient(cfg.model.y, &spec, coupling).at("variational", "minimize_diffusion_coefficient")?;
    let mut v = serde_json::to_value(&rep).expect("report serializes");
    v["basis_spec"] = json!(spec);
    art.json("diffusion.json", &v)?;
    Ok(json!({ "a_hat": rep.a_hat }))
}

/// `â` and the function `2F*` of the current decomposition. The gradient
/// model needs no minimisation.
fn variational_solution(cfg: &ExperimentConfig, basis: Option<BasisSpec>) -> Result<(f64, LocalFunction), CliError> {
    let coupling = &cfg.model.coupling;
    if let Some(a0) = coupling.constant_value() {
        return Ok((a0, LocalFunction::zero()));
    }
    let spec = basis.unwrap_or_else(|| BasisSpec::default_for(coupling));
    let (rep, funcs) = diffusion_coefficient(cfg.model.y, &spec, coupling).at("variational", "minimize_diffusion_coefficient")?;
    Ok((rep.a_hat, rep.residual_function(&funcs)))
}

fn fluctuations(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.fluctuations.clone().expect("resolved");
    let a_hat = match sec.a_hat {
        Some(a) => a,
        None => variational_solution(cfg, sec.basis)?.0,
    };
    let integ = cfg.integrator();
    let tests: Vec<TestFunction> = sec.modes.iter().map(|&m| TestFunction::cosine(m)).collect();
    let runs = simulate_fields(&cfg.model, &integ, &tests, sec.samples, sec.sample_every, cfg.replicas())
        .at("fluctuation", "simulate_fields")?;
    let dt = sec.sample_every as f64 * integ.dt_macro;
    let lags: Vec<usize> = (0..=sec.max_lag).collect();
    let y = cfg.model.y;
    let mut fits = Vec::new();
    for (k, (h, &m)) in tests.iter().zip(&sec.modes).enumerate() {
        let series: Vec<Vec<f64>> = runs.iter().map(|r| r[k].clone()).collect();
        let cov = empirical_time_covariance(&series, &series, dt, &lags, vec![cfg.seed])
            .at("fluctuation", "empirical_time_covariance")?;
        art.series_csv(&format!("covariance-mode-{m}.csv"), "lag", &cov)?;
        let amplitude = ou_covariance_predict(h, h, 0.0, y, a_hat).at("fluctuation", "ou_covariance_predict")?;
        let rate = a_hat * (2.0 * std::f64::consts::PI * m as f64).powi(2);
        let fit = fit_decay(&cov, sec.fit_floor);
        fits.push(json!({
            "mode": m,
            "predicted_rate": rate,
            "predicted_amplitude": amplitude,
            "fit": fit.as_ref().ok(),
            "fit_error": fit.as_ref().err().map(|e| e.to_string()),
            "rate_relative_error": fit.as_ref().ok().map(|f| f.rate / rate - 1.0),
        }));
    }
    art.json("fits.json", &json!({ "a_hat": a_hat, "lag_unit": dt, "modes": fits }))?;
    Ok(json!({ "a_hat": a_hat, "modes": sec.modes }))
}

fn clt_variances(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.clt_variances.clone().expect("resolved");
    let coupling = &cfg.model.coupling;
    let y = cfg.model.y;
    let cc = CltConfig {
        half_n: sec.half_n,
        y,
        dt: sec.dt,
        window: sec.window,
        windows_per_replica: sec.windows_per_replica,
        replicas: cfg.replicas(),
        burn_in: sec.burn_in,
        seed: cfg.seed,
    };
    let aa = clt_time_variance(&CltObservable::A, coupling, &cc).at("fluctuation", "clt_time_variance")?;
    let cc = CltConfig {
        seed: cfg.seed.wrapping_add(1),
        ..cc
    };
    let bb = clt_time_variance(&CltObservable::B, coupling, &cc).at("fluctuation", "clt_time_variance")?;
    // same 1/2N scaling as the simulated variances
    let scale = 1.0 / (2 * sec.half_n) as f64;
    let exact = |t: VarianceTarget| {
        gradient_type_variance(&t, sec.half_n, y, coupling, sec.exact_samples, cfg.seed)
            .map(|e| e.scale(scale))
            .at("variational", "gradient_type_variance")
    };
    let exact_bb = exact(VarianceTarget::BB)?;
    let exact_ab = exact(VarianceTarget::AB)?;
    let rows = vec![
        vec![Cell::S("AA".into()), Cell::S("simulated".into()), Cell::F(aa.extrapolated.value), Cell::F(aa.extrapolated.stderr)],
        vec![Cell::S("BB".into()), Cell::S("simulated".into()), Cell::F(bb.extrapolated.value), Cell::F(bb.extrapolated.stderr)],
        vec![Cell::S("BB".into()), Cell::S("exact".into()), Cell::F(exact_bb.value), Cell::F(exact_bb.stderr)],
        vec![Cell::S("AB".into()), Cell::S("exact".into()), Cell::F(exact_ab.value), Cell::F(exact_ab.stderr)],
    ];
    art.csv("variances.csv", &["pair", "method", "value", "stderr"], &rows)?;
    art.json(
        "clt.json",
        &json!({
            "half_n": sec.half_n,
            "n_sites": 2 * sec.half_n + 1,
            "y": y,
            "coupling": coupling.label(),
            "simulated": { "aa": aa, "bb": bb },
            "exact": { "bb": exact_bb, "ab": exact_ab },
        }),
    )?;
    Ok(json!({ "aa": aa.extrapolated.value, "bb": bb.extrapolated.value, "bb_exact": exact_bb.value }))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn bg(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.bg_residual.clone().expect("resolved");
    let (a_hat, f_star) = variational_solution(cfg, sec.basis)?;
    let bc = BgConfig {
        params: cfg.model.clone(),
        integrator: cfg.integrator(),
        test: TestFunction::cosine(sec.mode),
        horizon: sec.horizon,
        burn_in: sec.burn_in,
        replicas: cfg.replicas(),
    };
    let ints = bg_integrals(&bc, &[LocalFunction::zero(), f_star.clone()]).at("fluctuation", "bg_integrals")?;
    let [lo, hi] = sec.a_range.unwrap_or([0.5 * a_hat, 1.5 * a_hat]);
    let grid = linspace(lo, hi, sec.a_points);
    let mut minima = Vec::new();
    for (idx, name) in [(0, "zero"), (1, "optimal")] {
        let series = bg_residual(&ints, idx, &grid, cfg.seed).at("fluctuation", "bg_residual")?;
        art.series_csv(&format!("residual-{name}.csv"), "a", &series)?;
        let (a, interior) = grid_minimum(&series);
        minima.push(json!({ "candidate": name, "grid_minimum": a, "interior": interior, "minimizer": residual_minimizer(&ints, idx) }));
    }
    let gap = paired_residual_gap(&ints, 0, 1, a_hat).at("fluctuation", "paired_residual_gap")?;
    let z = if gap.stderr > 0.0 { gap.value / gap.stderr } else { 0.0 };
    art.json(
        "bg.json",
        &json!({
            "a_hat": a_hat,
            "mode": sec.mode,
            "horizon": sec.horizon,
            "residual_function": f_star.poly().to_string(),
            "gap_zero_minus_optimal": gap,
            "gap_z": z,
            "candidates": minima,
        }),
    )?;
    Ok(json!({ "a_hat": a_hat, "gap": gap.value, "gap_z": z }))
}

fn inequality_record(r: InequalityReport, spec: SphereSpec, samples: usize) -> CheckReport {
    CheckReport {
        check: r.check,
        params: [
            ("n".to_string(), spec.n as f64),
            ("radius".to_string(), spec.radius),
            ("samples".to_string(), samples as f64),
        ]
        .into(),
        lhs: r.lhs.value,
        rhs: r.rhs.value,
        stderr: r.margin.stderr,
        discrepancy: if r.margin.stderr > 0.0 { -r.margin.value / r.margin.stderr } else { 0.0 },
        pointwise_gap: None,
        verdict: Verdict::from_bool(!r.violated),
    }
}

fn sphere_checks(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.sphere_checks.clone().expect("resolved");
    let spec = SphereSpec::new(sec.n, sec.radius).at("sphere_lab", "sphere_checks")?;
    let m = |f: &[(i32, u32)]| Polynomial::monomial(f, 1.0);
    let div_f = &m(&[(0, 2), (1, 1)]) + &m(&[(2, 1)]);
    let tel_f = &m(&[(0, 1), (3, 2)]) + &m(&[(1, 1), (2, 1)]);
    let path_f = &m(&[(0, 1), (3, 1)]) + &m(&[(1, 2)]);
    let samples = sec.samples;
    let mut stream = 0u64;
    let mut rng = || {
        stream += 1;
        replica_rng(cfg.seed, stream)
    };
    let mut checks = Vec::new();
    for a in [vec![1], vec![1, 1], vec![2, 1], vec![2, 0, 1], vec![3]] {
        checks.push(moment_check(&ExponentVector(a), spec, samples, &mut rng()).at("sphere_lab", "moment_check")?);
    }
    for i in 0..3 {
        checks.push(divergence_check(&div_f, i, spec, samples, &mut rng()).at("sphere_lab", "divergence_check")?);
    }
    checks.push(telescoping_check(&tel_f, 0, 3, spec, samples, &mut rng()).at("sphere_lab", "telescoping_check")?);
    let path = path_lemma_check(&path_f, 0, 3, spec, samples, &mut rng()).at("spectral", "path_lemma_check")?;
    checks.push(inequality_record(path, spec, samples));
    let poincare = poincare_check(&path_f, 0, 3, spec, samples, &mut rng()).at("spectral", "poincare_check")?;
    checks.push(inequality_record(poincare, spec, samples));
    let all = checks.iter().all(|c| c.verdict.passed());
    art.json("checks.json", &json!({ "all_passed": all, "checks": checks }))?;
    Ok(json!({ "checks": checks.len(), "all_passed": all }))
}

fn spectral_gap(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.spectral_gap.clone().expect("resolved");
    let model = &cfg.model;
    let points = relaxation_scan(
        &sec.sizes,
        model.y,
        &model.coupling,
        model.topology,
        |n| fourier_energy_probe(n, sec.mode),
        |n| RelaxationConfig {
            dt: sec.dt,
            sample_interval: (n * n) as f64 / sec.interval_divisor,
            samples: sec.samples,
            replicas: cfg.replicas(),
            burn_in: sec.burn_in,
            seed: cfg.seed,
            window_c: 6.0,
        },
    )
    .at("spectral", "relaxation_time")?;
    let fit = scaling_fit(&points).at("spectral", "scaling_fit")?;
    let mut kac = Vec::new();
    if sec.kac {
        for &n in &sec.sizes {
            let probe = fourier_energy_probe(n, sec.mode);
            let radius = model.y * (n as f64).sqrt();
            kac.push(
                kac_relaxation_time(n, radius, &probe, 1, sec.samples, cfg.replicas(), cfg.seed)
                    .at("spectral", "kac_relaxation_time")?,
            );
        }
    }
    let rows: Vec<Vec<Cell>> = points
        .iter()
        .chain(&kac)
        .map(|p| vec![Cell::U(p.n_sites as u64), Cell::S(p.probe.clone()), Cell::F(p.tau), Cell::F(p.stderr)])
        .collect();
    art.csv("scaling.csv", &["n", "probe", "tau", "stderr"], &rows)?;
    let reference: Option<Vec<f64>> = model
        .coupling
        .constant_value()
        .filter(|_| model.topology == fluctlab_core::Topology::Periodic)
        .map(|a0| sec.sizes.iter().map(|&n| diffusive_relaxation_time(n, sec.mode, a0)).collect());
    art.json(
        "fit.json",
        &json!({
            "alpha": fit.alpha,
            "ci_low": fit.ci_low,
            "ci_high": fit.ci_high,
            "stderr": fit.stderr,
            "points": points,
            "exact_constant_coupling": reference,
            "kac_points": kac,
            "kac_time_unit": "rotation events",
        }),
    )?;
    Ok(json!({ "alpha": fit.alpha, "ci_low": fit.ci_low, "ci_high": fit.ci_high }))
}

fn ensemble(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let sec = cfg.ensemble_gap.clone().expect("resolved");
    let g = sec.polynomial();
    let gaps = sec
        .sizes
        .iter()
        .map(|&n| ensemble_gap(&g, n, cfg.model.y))
        .collect::<CoreResult<Vec<_>>>()
        .at("sphere_lab", "ensemble_gap")?;
    let rows: Vec<Vec<Cell>> = gaps
        .iter()
        .map(|e| vec![Cell::U(e.n as u64), Cell::F(e.sphere), Cell::F(e.gaussian), Cell::F(e.scaled_gap), Cell::F(e.stderr)])
        .collect();
    art.csv("gaps.csv", &["n", "sphere", "gaussian", "scaled_gap", "stderr"], &rows)?;
    let max = gaps.iter().map(|e| e.scaled_gap).fold(0.0, f64::max);
    art.json("ensemble.json", &json!({ "observable": g.to_string(), "y": cfg.model.y, "gaps": gaps, "max_scaled_gap": max }))?;
    Ok(json!({ "max_scaled_gap": max }))
}
