use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use pqs_core::deterministic::{
    classical_conditional_excited, conditional_excited_given_excited, effect_unmonitored, unconditioned_excited,
};
use pqs_core::ensemble::{
    conditional_mean_signal, calibration_samples, run_ensemble, sample_run, window_theory, ExperimentConfig, Histogram,
};
use pqs_core::geometry::{
    alpha_at_time, alpha_of, beta_at_time, beta_of, retrodiction_region, EffectConstraint, EllipseParam,
};
use pqs_core::measurement::{corrected_effect, estimate_efficiency, predicted_mean_signal, retrodicted_mean_signal};
use pqs_core::record::{load_record, save_record, sidecar_path};
use pqs_core::trajectory::{smooth_record, HomodyneRecord, PastPair};
use pqs_core::{PqsError, QubitOperator, SimParams};
use serde::Serialize;

use crate::output::{Cell, Sink, Table};
use crate::{Common, Failure, ParamArgs};

type Outcome = Result<Vec<PathBuf>, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

impl ParamArgs {
    fn apply(&self, base: SimParams) -> Result<SimParams, Failure> {
        let p = SimParams {
            gamma: self.gamma.unwrap_or(base.gamma),
            eta: self.eta.unwrap_or(base.eta),
            dt: self.dt.unwrap_or(base.dt),
            horizon: self.horizon.unwrap_or(base.horizon),
            eta_p: self.eta_p.unwrap_or(base.eta_p),
        };
        p.validate().map_err(usage)?;
        Ok(p)
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    ExperimentConfig::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn f(v: f64) -> Cell {
    Cell::Float(v)
}

fn opt(v: Option<f64>) -> Cell {
    Cell::Float(v.unwrap_or(f64::NAN))
}

#[derive(Args)]
pub struct ClassicalArgs {
    /// Decay rate, 1/us.
    #[arg(long, default_value_t = pqs_core::params::DEFAULT_GAMMA)]
    gamma: f64,
    /// Time of the final measurement, us (default 1/gamma).
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Number of grid points over [0, T], both ends included.
    #[arg(long, default_value_t = 200)]
    steps: usize,
}

pub fn classical(common: &Common, a: &ClassicalArgs) -> Outcome {
    if !(a.gamma > 0.0 && a.gamma.is_finite()) {
        return Err(usage(format!("--gamma must be positive, got {}", a.gamma)));
    }
    let horizon = a.horizon.unwrap_or(1.0 / a.gamma);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(usage(format!("--T must be positive, got {horizon}")));
    }
    if a.steps < 2 {
        return Err(usage("--steps must be at least 2"));
    }
    let mut table = Table::new(&["t_us", "P_e", "P_e_given_e_T", "P_e_given_g_T"]);
    for i in 0..a.steps {
        let t = if i + 1 == a.steps { horizon } else { horizon * i as f64 / (a.steps - 1) as f64 };
        table.push(vec![
            f(t),
            f(unconditioned_excited(a.gamma, t)),
            f(conditional_excited_given_excited(a.gamma, t, horizon)),
            f(classical_conditional_excited(a.gamma, t, horizon)?),
        ]);
    }
    let mut sink = Sink::new(&common.out_dir, common.format)?;
    sink.table("classical", &table)?;
    Ok(sink.written)
}

#[derive(Args)]
pub struct WeakValueArgs {
    /// Experiment config; supplies parameters, delay, window and seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    /// Post-selection time, us.
    #[arg(long)]
    delay: Option<f64>,
    /// Samples averaged into the Monte Carlo estimate.
    #[arg(long)]
    window: Option<usize>,
    /// Preparation angles evenly spaced over [-pi, pi].
    #[arg(long, default_value_t = 9)]
    points: usize,
    /// Trajectories per angle for a Monte Carlo estimate.
    #[arg(long)]
    monte_carlo: Option<usize>,
}

pub fn weakvalue(common: &Common, a: &WeakValueArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::new(SimParams::default(), 0.0, None, 1, 1),
    };
    if a.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    if a.monte_carlo == Some(0) {
        return Err(usage("--monte-carlo must be positive"));
    }
    cfg.params = a.params.apply(cfg.params)?;
    cfg.postselect_delay = a.delay.unwrap_or(cfg.postselect_delay);
    cfg.integration_window = a.window.unwrap_or(cfg.integration_window);
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    let mut check = cfg.clone();
    check.theta_postselect = Some(0.0);
    check.snapshot_times.clear();
    check.validate().map_err(usage)?;
    let p = cfg.params.with_horizon(cfg.postselect_delay).map_err(usage)?;
    let bound = p.signal_bound();

    let mut columns = vec!["theta", "V_pred", "V_retro", "threshold", "anomalous"];
    if a.monte_carlo.is_some() {
        columns.extend(["V_window", "V_mc", "stderr", "accepted", "trials"]);
    }
    let mut table = Table::new(&columns);
    for k in 0..a.points {
        let theta = if k + 1 == a.points { PI } else { -PI + 2.0 * PI * k as f64 / (a.points - 1) as f64 };
        let rho = QubitOperator::from_theta(theta);
        let effect = effect_unmonitored(&corrected_effect(theta, p.eta_p), 0.0, p.horizon, p.gamma)?;
        let v_retro = retrodicted_mean_signal(&rho, &effect, &p)?;
        let mut row = vec![
            f(theta),
            f(predicted_mean_signal(&rho, &p)),
            f(v_retro),
            f(bound),
            Cell::Bool(v_retro.abs() > bound),
        ];
        if let Some(n) = a.monte_carlo {
            let run = ExperimentConfig {
                theta_prepare: theta,
                theta_postselect: Some(theta - PI / 2.0),
                n_trajectories: n,
                seed: cfg.seed.wrapping_add(k as u64),
                ..cfg.clone()
            };
            let theory = window_theory(&run)?;
            match conditional_mean_signal(&run) {
                Ok(r) => row.extend([f(theory), f(r.estimate), f(r.stderr), Cell::Int(r.accepted), Cell::Int(r.trials)]),
                Err(PqsError::EmptySelection { trials, .. }) => {
                    row.extend([f(theory), f(f64::NAN), f(f64::NAN), Cell::Int(0), Cell::Int(trials as u64)])
                }
                Err(e) => return Err(e.into()),
            }
        }
        table.push(row);
    }
    let mut sink = Sink::new(&common.out_dir, common.format)?;
    sink.table("weakvalue", &table)?;
    Ok(sink.written)
}

#[derive(Args)]
pub struct TrajectoryArgs {
    /// Experiment config (default: |e> prepared, |+x> post-selected, 1000 runs).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: ParamArgs,
    /// Smooth this stored record instead of running an ensemble. Its JSON
    /// sidecar supplies gamma, eta, dt and T.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Accepted runs written out as records and smoothed trajectories.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Parameter grid of the retrodiction regions.
    #[arg(long, default_value_t = 256)]
    region_grid: usize,
}

fn default_trajectory_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(SimParams::default(), PI, Some(PI / 2.0), 1000, 1);
    cfg.snapshot_times = vec![0.42, 0.84, 1.26, 1.68];
    cfg
}

fn pairs_table(pairs: &[PastPair]) -> Table {
    let mut t = Table::new(&[
        "t_us", "rho_x", "rho_y", "rho_z", "effect_x", "effect_y", "effect_z", "retro_x", "retro_y", "retro_z",
    ]);
    for pp in pairs {
        let (r, e, w) = (pp.rho_bloch, pp.effect_bloch, pp.retro);
        t.push(vec![f(pp.t), f(r.x), f(r.y), f(r.z), f(e.x), f(e.y), f(e.z), f(w.x), f(w.y), f(w.z)]);
    }
    t
}

/// Deterministic ellipses at every snapshot and the regions they bound.
fn write_geometry(sink: &mut Sink, cfg: &ExperimentConfig, grid: usize) -> Result<(), Failure> {
    let p = &cfg.params;
    let b0 = cfg.prepared().pauli_expectations();
    let alpha0 = alpha_of(b0.x, b0.z).ok();
    let e_final = cfg.analysis_effect().normalized()?.pauli_expectations();
    let beta_final = match cfg.theta_postselect {
        Some(_) => beta_of(e_final.x, e_final.z).ok(),
        None => None,
    };
    let mut table = Table::new(&[
        "t_us",
        "alpha",
        "beta",
        "rho_center_z",
        "rho_semi_x",
        "rho_semi_z",
        "effect_center_z",
        "effect_semi_x",
        "effect_semi_z",
        "region_area",
    ]);
    for (s, &t) in cfg.snapshot_times.iter().enumerate() {
        let t = t.min(p.horizon);
        let alpha = alpha0.map(|a| alpha_at_time(a, t, p)).transpose()?;
        let beta = beta_final.map(|b| beta_at_time(b, t, p.horizon, p)).transpose()?;
        let rho_e = alpha.filter(|a| a.is_finite()).map(EllipseParam::rho).transpose()?;
        let eff_e = beta.filter(|b| b.is_finite()).map(EllipseParam::effect).transpose()?;
        let constraint = match (cfg.theta_postselect, eff_e) {
            (None, _) => Some(EffectConstraint::Identity),
            (Some(_), Some(e)) => Some(EffectConstraint::Ellipse(e.value)),
            (Some(_), None) => None,
        };
        let region = match (rho_e, constraint) {
            (Some(r), Some(c)) => Some(retrodiction_region(r.value, c, grid)?),
            _ => None,
        };
        table.push(vec![
            f(t),
            opt(alpha),
            opt(beta),
            opt(rho_e.map(|e| e.center().1)),
            opt(rho_e.map(|e| e.semi_axes().0)),
            opt(rho_e.map(|e| e.semi_axes().1)),
            opt(eff_e.map(|e| e.center().1)),
            opt(eff_e.map(|e| e.semi_axes().0)),
            opt(eff_e.map(|e| e.semi_axes().1)),
            opt(region.as_ref().map(|r| r.area())),
        ]);
        if let Some(region) = region {
            let mut poly = Table::new(&["x", "z"]);
            let b = region.boundary();
            for &(x, z) in b.iter().chain(b.first()) {
                poly.push(vec![f(x), f(z)]);
            }
            sink.table(&format!("region_{s}"), &poly)?;
        }
    }
    sink.table("ellipses", &table)?;
    Ok(())
}

pub fn trajectory(common: &Common, a: &TrajectoryArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => default_trajectory_config(),
    };
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    if a.region_grid < 64 {
        return Err(usage("--region-grid must be at least 64"));
    }
    let mut sink = Sink::new(&common.out_dir, common.format)?;
    if let Some(path) = &a.record {
        let eta_p = a.params.eta_p.unwrap_or(cfg.params.eta_p);
        let record = load_record(path, eta_p).map_err(|e| match e {
            PqsError::Io(io) => Failure::Runtime(anyhow::Error::new(io).context(format!("cannot read {}", path.display()))),
            other => Failure::Runtime(anyhow::Error::new(other).context(format!("bad record {}", path.display()))),
        })?;
        cfg.params = record.params;
        cfg.validate().map_err(usage)?;
        let pairs = smooth_record(&record, &cfg.prepared(), &cfg.analysis_effect())?;
        sink.table("pairs", &pairs_table(&pairs))?;
        write_geometry(&mut sink, &cfg, a.region_grid)?;
        return Ok(sink.written);
    }

    cfg.params = a.params.apply(cfg.params)?;
    cfg.validate().map_err(usage)?;
    if cfg.snapshot_times.is_empty() {
        return Err(usage("config needs at least one snapshot time"));
    }
    let stats = run_ensemble(&cfg)?;
    sink.json("ensemble.json", &stats)?;

    let mut summary = Table::new(&[
        "t_us",
        "rho_x_mean",
        "rho_z_mean",
        "effect_x_mean",
        "effect_z_mean",
        "retro_x_mean",
        "retro_z_mean",
        "retro_z_stderr",
        "outside_unit_circle",
        "accepted",
    ]);
    for (s, snap) in stats.snapshots.iter().enumerate() {
        summary.push(vec![
            f(snap.t),
            f(snap.rho_x.stats.mean),
            f(snap.rho_z.stats.mean),
            f(snap.effect_x.stats.mean),
            f(snap.effect_z.stats.mean),
            f(snap.retro_x.stats.mean),
            f(snap.retro_z.stats.mean),
            f(snap.retro_z.stats.stderr()),
            Cell::Int(snap.outside_unit_circle),
            Cell::Int(stats.accepted),
        ]);
        for (name, h) in snap.histograms() {
            sink.table(&format!("hist_{s}_{name}"), &histogram_table(h))?;
        }
    }
    sink.table("snapshots", &summary)?;
    write_geometry(&mut sink, &cfg, a.region_grid)?;

    let mut written = 0;
    for i in 0..cfg.n_trajectories {
        if written == a.samples {
            break;
        }
        let (record, accepted) = sample_run(&cfg, i)?;
        if !accepted {
            continue;
        }
        write_sample(&mut sink, &cfg, i, &record)?;
        written += 1;
    }
    Ok(sink.written)
}

fn write_sample(sink: &mut Sink, cfg: &ExperimentConfig, index: usize, record: &HomodyneRecord) -> Result<(), Failure> {
    let path = sink.path(&format!("record_{index:05}.csv"));
    save_record(record, &path)
        .map_err(|e| Failure::Runtime(anyhow::Error::new(e).context(format!("cannot write {}", path.display()))))?;
    sink.note(sidecar_path(&path));
    sink.note(path);
    let pairs = smooth_record(record, &cfg.prepared(), &cfg.analysis_effect())?;
    sink.table(&format!("pairs_{index:05}"), &pairs_table(&pairs))?;
    Ok(())
}

fn histogram_table(h: &Histogram) -> Table {
    let mut t = Table::new(&["bin_center", "count"]);
    for (c, &n) in h.bin_centers().zip(&h.counts) {
        t.push(vec![f(c), Cell::Int(n)]);
    }
    t
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Runs per calibration state.
    #[arg(long, default_value_t = 500_000)]
    samples: usize,
    /// Histogram bins.
    #[arg(long, default_value_t = 200)]
    bins: usize,
}

#[derive(Serialize)]
struct CalibrationReport {
    eta_hat: f64,
    stderr: f64,
    mean_plus: f64,
    mean_minus: f64,
    delta_v: f64,
    delta_v_stderr: f64,
    n_plus: usize,
    n_minus: usize,
    params: SimParams,
    seed: u64,
    histogram_plus: Histogram,
    histogram_minus: Histogram,
}

pub fn calibrate(common: &Common, a: &CalibrateArgs) -> Outcome {
    let p = a.params.apply(SimParams::default())?;
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let seed = common.seed.unwrap_or(1);
    let plus = calibration_samples(&p, PI / 2.0, a.samples, seed)?;
    let minus = calibration_samples(&p, -PI / 2.0, a.samples, seed.wrapping_add(1))?;
    let half = p.signal_bound() + 6.0 * p.gamma_dt().sqrt();
    let hist = |samples: &[pqs_core::measurement::SignalSample]| {
        let mut h = Histogram::new(-half, half, 2.0 * half / a.bins as f64);
        for s in samples {
            h.push(s.v);
        }
        h
    };
    let (h_plus, h_minus) = (hist(&plus), hist(&minus));
    let est = estimate_efficiency(&plus, &minus, &p)?;
    let mut sink = Sink::new(&common.out_dir, common.format)?;
    sink.table("calibration_plus", &histogram_table(&h_plus))?;
    sink.table("calibration_minus", &histogram_table(&h_minus))?;
    sink.json(
        "calibration.json",
        &CalibrationReport {
            eta_hat: est.eta,
            stderr: est.stderr,
            mean_plus: est.mean_plus,
            mean_minus: est.mean_minus,
            delta_v: est.delta_v,
            delta_v_stderr: est.delta_v_stderr,
            n_plus: est.n_plus,
            n_minus: est.n_minus,
            params: p,
            seed,
            histogram_plus: h_plus,
            histogram_minus: h_minus,
        },
    )?;
    Ok(sink.written)
}
