//! Monte Carlo batches: prepared states, synthetic records, post-selection,
//! smoothing and streaming statistics.
//!
//! Trajectory `i` draws from ChaCha8 keyed by the config seed on stream `i`,
//! and partial statistics are merged in fixed chunk order, so the output
//! does not depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deterministic::{effect_unmonitored, rho_unmonitored};
use crate::error::{PqsError, Result};
use crate::geometry::{alpha_at_time, alpha_of, beta_at_time, beta_of, effect_ellipse_residual, rho_ellipse_residual};
use crate::measurement::{mixed_projector, retrodicted_mean_signal, SignalSample};
use crate::params::{grid_index, SimParams};
use crate::qubit::{BlochVector, QubitOperator};
use crate::trajectory::{generate_record_with, smooth_record, ForwardFilter, HomodyneRecord, PastPair};

pub const CONFIG_SCHEMA: u32 = 1;
const CHUNK: usize = 256;

fn default_window() -> usize {
    3
}

fn default_delay() -> f64 {
    0.5
}

/// A pre/post-selected Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub params: SimParams,
    pub theta_prepare: f64,
    /// Angle of the post-selected state; `None` keeps every run.
    #[serde(default)]
    pub theta_postselect: Option<f64>,
    pub n_trajectories: usize,
    /// Samples averaged into the weak-value estimate.
    #[serde(default = "default_window")]
    pub integration_window: usize,
    /// Time of the post-selection in the weak-value protocol, us.
    #[serde(default = "default_delay")]
    pub postselect_delay: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(params: SimParams, theta_prepare: f64, theta_postselect: Option<f64>, n_trajectories: usize, seed: u64) -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            params,
            theta_prepare,
            theta_postselect,
            n_trajectories,
            integration_window: default_window(),
            postselect_delay: default_delay(),
            snapshot_times: Vec::new(),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PqsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PqsError::Config(msg));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("unsupported schema {}, expected {CONFIG_SCHEMA}", self.schema));
        }
        self.params.validate()?;
        if self.n_trajectories == 0 {
            return bad("n_trajectories must be at least 1".into());
        }
        if !self.theta_prepare.is_finite() || self.theta_postselect.is_some_and(|t| !t.is_finite()) {
            return bad("angles must be finite".into());
        }
        if self.integration_window == 0 {
            return bad("integration_window must be at least 1".into());
        }
        let dt = self.params.dt;
        match grid_index(self.postselect_delay, dt) {
            Some(k) if k >= self.integration_window => {}
            _ => {
                return bad(format!(
                    "postselect_delay = {} must be a multiple of dt covering the {}-sample window",
                    self.postselect_delay, self.integration_window
                ))
            }
        }
        for &t in &self.snapshot_times {
            match grid_index(t, dt) {
                Some(k) if k <= self.params.steps() => {}
                _ => return bad(format!("snapshot time {t} is not a grid point in [0, T]")),
            }
        }
        Ok(())
    }

    pub fn prepared(&self) -> QubitOperator {
        QubitOperator::from_theta(self.theta_prepare)
    }

    /// Effect used for smoothing accepted runs.
    pub fn analysis_effect(&self) -> QubitOperator {
        match self.theta_postselect {
            Some(phi) => mixed_projector(phi, self.params.eta_p),
            None => QubitOperator::maximally_mixed(),
        }
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// Projective outcome sampled from `rho`, then flipped with probability
    /// `1 - eta_p`. `true` means the run is kept.
    fn postselect<R: Rng>(&self, rho: &QubitOperator, rng: &mut R) -> bool {
        let Some(phi) = self.theta_postselect else {
            return true;
        };
        let p_hit = rho.trace_product(&QubitOperator::from_theta(phi)).re;
        let hit = rng.random::<f64>() < p_hit;
        let flip = rng.random::<f64>() >= self.params.eta_p;
        hit != flip
    }
}

/// Mean, variance, min and max in one pass; merges with Chan's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for RunningStats {
    fn default() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl RunningStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn merge(&mut self, o: &Self) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2 / (self.n - 1) as f64
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Fixed-width bins over `[lo, hi)`; values outside are clamped into the
/// edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

pub const BLOCH_HIST_RANGE: f64 = 1.2;
pub const BLOCH_BIN_WIDTH: f64 = 0.02;

impl Histogram {
    pub fn new(lo: f64, hi: f64, bin_width: f64) -> Self {
        let bins = ((hi - lo) / bin_width).round().max(1.0) as usize;
        Self {
            lo,
            bin_width,
            counts: vec![0; bins],
        }
    }

    pub fn bloch() -> Self {
        Self::new(-BLOCH_HIST_RANGE, BLOCH_HIST_RANGE, BLOCH_BIN_WIDTH)
    }

    pub fn push(&mut self, v: f64) {
        let k = ((v - self.lo) / self.bin_width).floor();
        let k = (k.max(0.0) as usize).min(self.counts.len() - 1);
        self.counts[k] += 1;
    }

    pub fn merge(&mut self, o: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(|k| self.lo + (k as f64 + 0.5) * self.bin_width)
    }

    /// Counts normalized to unit total mass.
    pub fn masses(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// `(lowest, highest)` nonempty bin edges.
    pub fn support(&self) -> Option<(f64, f64)> {
        let first = self.counts.iter().position(|&c| c > 0)?;
        let last = self.counts.iter().rposition(|&c| c > 0)?;
        Some((self.lo + first as f64 * self.bin_width, self.lo + (last + 1) as f64 * self.bin_width))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_center", "count"])?;
        for (c, n) in self.bin_centers().zip(&self.counts) {
            out.write_record([crate::format::sig17(c), n.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Moments and histogram of one Bloch component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub stats: RunningStats,
    pub histogram: Histogram,
}

impl Default for AxisStats {
    fn default() -> Self {
        Self {
            stats: RunningStats::default(),
            histogram: Histogram::bloch(),
        }
    }
}

impl AxisStats {
    fn push(&mut self, v: f64) {
        self.stats.push(v);
        self.histogram.push(v);
    }

    fn merge(&mut self, o: &Self) {
        self.stats.merge(&o.stats);
        self.histogram.merge(&o.histogram);
    }
}

/// Statistics of the accepted runs at one snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub t: f64,
    pub rho_x: AxisStats,
    pub rho_z: AxisStats,
    pub effect_x: AxisStats,
    pub effect_z: AxisStats,
    pub retro_x: AxisStats,
    pub retro_z: AxisStats,
    /// Runs whose retrodicted `(x, z)` lies outside the unit circle.
    pub outside_unit_circle: u64,
    /// Deterministic ellipse parameters; `None` at a pole.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub max_rho_residual: f64,
    pub max_effect_residual: f64,
    /// Closed-form unmonitored evolution of the preparation and of the
    /// normalized analysis effect.
    pub rho_unconditioned: BlochVector,
    pub effect_unconditioned: BlochVector,
}

impl SnapshotStats {
    fn empty(cfg: &ExperimentConfig, t: f64) -> Result<Self> {
        let p = &cfg.params;
        let b0 = cfg.prepared().pauli_expectations();
        let alpha = alpha_of(b0.x, b0.z).ok().map(|a0| alpha_at_time(a0, t, p)).transpose()?;
        let e_final = cfg.analysis_effect().normalized()?;
        let bt = e_final.pauli_expectations();
        let beta = beta_of(bt.x, bt.z).ok().map(|b| beta_at_time(b, t, p.horizon, p)).transpose()?;
        let rho_ref = rho_unmonitored(&cfg.prepared(), t, p.gamma)?.pauli_expectations();
        let eff_ref = effect_unmonitored(&e_final, t, p.horizon, p.gamma)?.normalized()?.pauli_expectations();
        Ok(Self {
            t,
            rho_x: AxisStats::default(),
            rho_z: AxisStats::default(),
            effect_x: AxisStats::default(),
            effect_z: AxisStats::default(),
            retro_x: AxisStats::default(),
            retro_z: AxisStats::default(),
            outside_unit_circle: 0,
            alpha,
            beta,
            max_rho_residual: 0.0,
            max_effect_residual: 0.0,
            rho_unconditioned: rho_ref,
            effect_unconditioned: eff_ref,
        })
    }

    fn push(&mut self, pair: &PastPair) {
        self.rho_x.push(pair.rho_bloch.x);
        self.rho_z.push(pair.rho_bloch.z);
        self.effect_x.push(pair.effect_bloch.x);
        self.effect_z.push(pair.effect_bloch.z);
        self.retro_x.push(pair.retro.x);
        self.retro_z.push(pair.retro.z);
        if pair.retro.x.powi(2) + pair.retro.z.powi(2) > 1.0 {
            self.outside_unit_circle += 1;
        }
        if let Some(a) = self.alpha {
            self.max_rho_residual = self.max_rho_residual.max(rho_ellipse_residual(&pair.rho_bloch, a).abs());
        }
        if let Some(b) = self.beta {
            self.max_effect_residual = self.max_effect_residual.max(effect_ellipse_residual(&pair.effect_bloch, b).abs());
        }
    }

    fn merge(&mut self, o: &Self) {
        self.rho_x.merge(&o.rho_x);
        self.rho_z.merge(&o.rho_z);
        self.effect_x.merge(&o.effect_x);
        self.effect_z.merge(&o.effect_z);
        self.retro_x.merge(&o.retro_x);
        self.retro_z.merge(&o.retro_z);
        self.outside_unit_circle += o.outside_unit_circle;
        self.max_rho_residual = self.max_rho_residual.max(o.max_rho_residual);
        self.max_effect_residual = self.max_effect_residual.max(o.max_effect_residual);
    }

    /// Named histograms, in a fixed order.
    pub fn histograms(&self) -> [(&'static str, &Histogram); 6] {
        [
            ("rho_x", &self.rho_x.histogram),
            ("rho_z", &self.rho_z.histogram),
            ("effect_x", &self.effect_x.histogram),
            ("effect_z", &self.effect_z.histogram),
            ("retro_x", &self.retro_x.histogram),
            ("retro_z", &self.retro_z.histogram),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub trials: u64,
    pub accepted: u64,
    pub acceptance: f64,
    /// Binomial standard error of the acceptance fraction.
    pub acceptance_stderr: f64,
    pub snapshots: Vec<SnapshotStats>,
}

fn acceptance(accepted: u64, trials: u64) -> (f64, f64) {
    let rate = accepted as f64 / trials as f64;
    (rate, (rate * (1.0 - rate) / trials as f64).sqrt())
}

fn empty_selection(accepted: u64, trials: u64) -> PqsError {
    PqsError::EmptySelection {
        accepted: accepted as usize,
        trials: trials as usize,
        rate: accepted as f64 / trials as f64,
    }
}

/// Run `f` on every trajectory index, one fixed chunk per task, and fold the
/// chunk results in index order.
fn chunked<A, F>(n: usize, init: impl Fn() -> A + Sync, f: F, merge: impl Fn(&mut A, &A)) -> Result<A>
where
    A: Send,
    F: Fn(&mut A, usize) -> Result<()> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(&mut acc, i)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for part in parts {
        merge(&mut total, &part?);
    }
    Ok(total)
}

/// Record of trajectory `index` exactly as the ensemble drivers generate it,
/// and whether its post-selection succeeded.
pub fn sample_run(cfg: &ExperimentConfig, index: usize) -> Result<(HomodyneRecord, bool)> {
    let p = &cfg.params;
    let mut rng = cfg.rng(index);
    let (samples, path) = generate_record_with(&cfg.prepared(), p, &mut rng)?;
    let rho_final = QubitOperator::from_bloch(*path.last().expect("path has N + 1 states"));
    let accepted = cfg.postselect(&rho_final, &mut rng);
    let record = HomodyneRecord {
        samples,
        params: *p,
        seed: Some(cfg.seed),
    };
    Ok((record, accepted))
}

/// Smoothed pairs at the snapshot times for trajectory `index`, or `None`
/// when the post-selection rejects it.
fn simulate_pairs(cfg: &ExperimentConfig, index: usize, snaps: &[usize]) -> Result<Option<Vec<PastPair>>> {
    let (record, accepted) = sample_run(cfg, index)?;
    if !accepted {
        return Ok(None);
    }
    let pairs = smooth_record(&record, &cfg.prepared(), &cfg.analysis_effect())?;
    Ok(Some(snaps.iter().map(|&k| pairs[k]).collect()))
}

fn snapshot_indices(cfg: &ExperimentConfig) -> Vec<usize> {
    cfg.snapshot_times
        .iter()
        .map(|&t| grid_index(t, cfg.params.dt).expect("validated snapshot"))
        .collect()
}

struct Acc {
    trials: u64,
    accepted: u64,
    snaps: Vec<SnapshotStats>,
}

/// Full protocol: prepare, record over `[0, T]`, post-select from `rho_T`,
/// smooth accepted runs and accumulate statistics at the snapshot times.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleStats> {
    cfg.validate()?;
    let snaps = snapshot_indices(cfg);
    let template: Vec<SnapshotStats> = snaps
        .iter()
        .map(|&k| SnapshotStats::empty(cfg, (k as f64 * cfg.params.dt).min(cfg.params.horizon)))
        .collect::<Result<_>>()?;
    let acc = chunked(
        cfg.n_trajectories,
        || Acc {
            trials: 0,
            accepted: 0,
            snaps: template.clone(),
        },
        |acc, i| {
            acc.trials += 1;
            if let Some(pairs) = simulate_pairs(cfg, i, &snaps)? {
                acc.accepted += 1;
                for (s, pair) in acc.snaps.iter_mut().zip(&pairs) {
                    s.push(pair);
                }
            }
            Ok(())
        },
        |total, part| {
            total.trials += part.trials;
            total.accepted += part.accepted;
            for (a, b) in total.snaps.iter_mut().zip(&part.snaps) {
                a.merge(b);
            }
        },
    )?;
    if acc.accepted == 0 {
        return Err(empty_selection(acc.accepted, acc.trials));
    }
    let (rate, rate_se) = acceptance(acc.accepted, acc.trials);
    Ok(EnsembleStats {
        trials: acc.trials,
        accepted: acc.accepted,
        acceptance: rate,
        acceptance_stderr: rate_se,
        snapshots: acc.snaps,
    })
}

/// [`run_ensemble`] for histogram output; needs at least one snapshot.
pub fn bloch_histograms(cfg: &ExperimentConfig) -> Result<EnsembleStats> {
    if cfg.snapshot_times.is_empty() {
        return Err(PqsError::Config("snapshot_times is empty".into()));
    }
    run_ensemble(cfg)
}

/// Accepted pairs at every snapshot, `[snapshot][run]`, and the trial count.
pub fn collect_past_pairs(cfg: &ExperimentConfig) -> Result<(Vec<Vec<PastPair>>, usize)> {
    cfg.validate()?;
    let snaps = snapshot_indices(cfg);
    let runs = chunked(
        cfg.n_trajectories,
        Vec::new,
        |acc: &mut Vec<Vec<PastPair>>, i| {
            if let Some(pairs) = simulate_pairs(cfg, i, &snaps)? {
                acc.push(pairs);
            }
            Ok(())
        },
        |total, part| total.extend_from_slice(part),
    )?;
    if runs.is_empty() {
        return Err(empty_selection(0, cfg.n_trajectories as u64));
    }
    let per_snapshot = (0..snaps.len()).map(|s| runs.iter().map(|r| r[s]).collect()).collect();
    Ok((per_snapshot, cfg.n_trajectories))
}

/// Monte Carlo weak value and its prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMean {
    /// Per-step mean signal over the window, averaged over accepted runs.
    pub estimate: f64,
    pub stderr: f64,
    pub trials: u64,
    pub accepted: u64,
    pub acceptance: f64,
    pub acceptance_stderr: f64,
    /// Retrodicted mean averaged over the same window.
    pub theory: f64,
    pub predicted_acceptance: f64,
}

/// Parameters of the weak-value protocol: the record ends at the
/// post-selection.
pub fn weak_value_params(cfg: &ExperimentConfig) -> Result<SimParams> {
    cfg.params.with_horizon(cfg.postselect_delay)
}

/// Retrodicted mean signal averaged over the first `integration_window`
/// steps. Sample `k` is emitted between `t_k` and `t_{k+1}`, so it pairs the
/// state at `t_k` with the effect at `t_{k+1}`.
pub fn window_theory(cfg: &ExperimentConfig) -> Result<f64> {
    let p = weak_value_params(cfg)?;
    let rho0 = cfg.prepared();
    let effect = match cfg.theta_postselect {
        Some(phi) => mixed_projector(phi, p.eta_p),
        None => QubitOperator::identity(),
    };
    let w = cfg.integration_window;
    let mut sum = 0.0;
    for k in 0..w {
        let rho = rho_unmonitored(&rho0, k as f64 * p.dt, p.gamma)?;
        let e = effect_unmonitored(&effect, ((k + 1) as f64 * p.dt).min(p.horizon), p.horizon, p.gamma)?;
        sum += retrodicted_mean_signal(&rho, &e, &p)?;
    }
    Ok(sum / w as f64)
}

/// Post-selection probability `Tr(rho(delay) E)` from the closed forms.
pub fn predicted_acceptance(cfg: &ExperimentConfig) -> Result<f64> {
    let p = weak_value_params(cfg)?;
    let Some(phi) = cfg.theta_postselect else {
        return Ok(1.0);
    };
    let rho = rho_unmonitored(&cfg.prepared(), p.horizon, p.gamma)?;
    Ok(rho.trace_product(&mixed_projector(phi, p.eta_p)).re)
}

/// Weak-value protocol: average the first `integration_window` samples of
/// every run accepted at `postselect_delay`.
pub fn conditional_mean_signal(cfg: &ExperimentConfig) -> Result<ConditionalMean> {
    cfg.validate()?;
    let p = weak_value_params(cfg)?;
    let w = cfg.integration_window;
    let rho0 = cfg.prepared();
    let acc = chunked(
        cfg.n_trajectories,
        || (0u64, RunningStats::default()),
        |acc, i| {
            let mut rng = cfg.rng(i);
            let (samples, path) = generate_record_with(&rho0, &p, &mut rng)?;
            acc.0 += 1;
            let rho_final = QubitOperator::from_bloch(*path.last().expect("nonempty path"));
            if cfg.postselect(&rho_final, &mut rng) {
                acc.1.push(samples[..w].iter().map(|s| s.v).sum::<f64>() / w as f64);
            }
            Ok(())
        },
        |total, part| {
            total.0 += part.0;
            total.1.merge(&part.1);
        },
    )?;
    let (trials, stats) = acc;
    if stats.n == 0 {
        return Err(empty_selection(0, trials));
    }
    let (rate, rate_se) = acceptance(stats.n, trials);
    Ok(ConditionalMean {
        estimate: stats.mean,
        stderr: stats.stderr(),
        trials,
        accepted: stats.n,
        acceptance: rate,
        acceptance_stderr: rate_se,
        theory: window_theory(cfg)?,
        predicted_acceptance: predicted_acceptance(cfg)?,
    })
}

/// First samples of `n` calibration runs prepared in `|theta>`.
pub fn calibration_samples(p: &SimParams, theta: f64, n: usize, seed: u64) -> Result<Vec<SignalSample>> {
    p.validate()?;
    let rho0 = QubitOperator::from_theta(theta);
    chunked(
        n,
        Vec::new,
        |acc: &mut Vec<SignalSample>, i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            acc.push(ForwardFilter::new(&rho0, *p).emit(&mut rng));
            Ok(())
        },
        |total, part| total.extend_from_slice(part),
    )
}
