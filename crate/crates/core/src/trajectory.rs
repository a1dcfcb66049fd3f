//! Stochastic filtering of a homodyne record.
//!
//! Forward: the conditioned state `rho_t` obeys
//! `d rho = gamma dt D[s-] rho + sqrt(eta) (V - sqrt(eta) gamma <sx> dt) H[s-] rho`.
//! Backward: the normalized effect `E_t` obeys
//! `dE = gamma dt D^dag[s-] E - gamma dt <sz>_E E + sqrt(eta) (V - sqrt(eta) gamma <sx>_E dt) H[s+] E`
//! with `dE = E_{t-dt} - E_t`. Both are integrated with first-order
//! Euler-Maruyama steps and projected back onto the physical set after each
//! step.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::deterministic::{adjoint_dissipator, dissipator};
use crate::error::{PqsError, Result};
use crate::measurement::{joint_likelihood, SignalSample};
use crate::params::SimParams;
use crate::qubit::{BlochVector, QubitOperator};

const BALL_TOL: f64 = 1e-8;
const RETRO_DENOM_FLOOR: f64 = 1e-12;

/// A time-ordered homodyne record on the grid `t_k = k dt`, `k = 0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomodyneRecord {
    pub samples: Vec<SignalSample>,
    pub params: SimParams,
    /// Present iff the record was generated here.
    pub seed: Option<u64>,
}

impl HomodyneRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.v)
    }

    /// Checks parameters and the `t_k = k dt` grid covering `[0, T)`.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let dt = self.params.dt;
        if self.samples.len() != self.params.steps() {
            return Err(PqsError::RecordFormat(format!(
                "{} samples do not cover T = {} with dt = {}",
                self.samples.len(),
                self.params.horizon,
                dt
            )));
        }
        for (k, s) in self.samples.iter().enumerate() {
            let expected = k as f64 * dt;
            if (s.t - expected).abs() > 1e-9 * dt.max(expected) {
                return Err(PqsError::RecordFormat(format!(
                    "sample {k} has t = {} us, expected {expected}",
                    s.t
                )));
            }
            if !s.v.is_finite() {
                return Err(PqsError::RecordFormat(format!("sample {k} is not finite")));
            }
        }
        Ok(())
    }
}

/// `H[s-] rho = s- rho + rho s+ - <sx> rho`
fn measurement_backaction(rho: &QubitOperator, x: f64) -> QubitOperator {
    let lowered = QubitOperator::new(rho.eg, rho.ee, 0.0.into(), 0.0.into());
    lowered + lowered.adjoint() - rho.scale(x)
}

/// `H[s+] E = s+ E + E s- - <sx>_E E`
fn effect_backaction(effect: &QubitOperator, x: f64) -> QubitOperator {
    let raised = QubitOperator::new(0.0.into(), 0.0.into(), effect.gg, effect.ge);
    raised + raised.adjoint() - effect.scale(x)
}

/// One forward step of the conditioned state given the sample `v` emitted
/// while in `rho`.
pub fn step_rho_forward(rho: &QubitOperator, v: f64, p: &SimParams) -> QubitOperator {
    let gdt = p.gamma_dt();
    let x = rho.pauli_expectations().x;
    let innovation = v - p.signal_bound() * x;
    let next = *rho
        + dissipator(rho).scale(gdt)
        + measurement_backaction(rho, x).scale(p.eta.sqrt() * innovation);
    next.project_physical()
}

/// One backward step of the normalized effect: maps `E_t` to `E_{t-dt}`
/// using the sample `v` emitted during `[t - dt, t)`.
pub fn step_effect_backward(effect: &QubitOperator, v: f64, p: &SimParams) -> QubitOperator {
    let e = effect.normalized().unwrap_or_else(|_| QubitOperator::maximally_mixed());
    let gdt = p.gamma_dt();
    let b = e.pauli_expectations();
    let innovation = v - p.signal_bound() * b.x;
    let next = e
        + (adjoint_dissipator(&e) - e.scale(b.z)).scale(gdt)
        + effect_backaction(&e, b.x).scale(p.eta.sqrt() * innovation);
    next.project_physical()
}

fn check_ball(b: &BlochVector) -> Result<()> {
    let norm = b.norm();
    if !(norm <= 1.0 + BALL_TOL) {
        return Err(PqsError::InvalidState { norm });
    }
    Ok(())
}

/// Forward step in Bloch components. Agrees with [`step_rho_forward`] to
/// rounding.
pub fn step_bloch_rho(b: &BlochVector, v: f64, p: &SimParams) -> Result<BlochVector> {
    check_ball(b)?;
    let gdt = p.gamma_dt();
    let se = p.eta.sqrt();
    let BlochVector { x, y, z } = *b;
    let innovation = v - p.signal_bound() * x;
    let next = BlochVector::new(
        x - 0.5 * x * gdt + se * (1.0 - z - x * x) * innovation,
        y - 0.5 * y * gdt - se * x * y * innovation,
        z + (1.0 - z) * gdt + se * (1.0 - z) * x * innovation,
    );
    Ok(next.clipped_to_ball())
}

/// Backward step in Bloch components of the normalized effect. Agrees with
/// [`step_effect_backward`] to rounding.
pub fn step_bloch_effect(b: &BlochVector, v: f64, p: &SimParams) -> Result<BlochVector> {
    check_ball(b)?;
    let gdt = p.gamma_dt();
    let se = p.eta.sqrt();
    let eta = p.eta;
    let BlochVector { x, y, z } = *b;
    let dx = -0.5 * gdt * x * (1.0 + 2.0 * z + 2.0 * eta * (1.0 + z - x * x))
        + se * (1.0 + z - x * x) * v;
    let dy = -0.5 * gdt * y * (1.0 + 2.0 * z - 2.0 * eta * x * x) - se * x * y * v;
    let dz = -gdt * (z + z * z - eta * (1.0 + z) * x * x) - se * (1.0 + z) * x * v;
    Ok(BlochVector::new(x + dx, y + dy, z + dz).clipped_to_ball())
}

/// Unnormalized linear forward step:
/// `rho + gamma dt D[s-] rho + sqrt(eta) V (s- rho + rho s+)`.
pub fn step_rho_linear(rho: &QubitOperator, v: f64, p: &SimParams) -> QubitOperator {
    let lowered = QubitOperator::new(rho.eg, rho.ee, 0.0.into(), 0.0.into());
    *rho + dissipator(rho).scale(p.gamma_dt()) + (lowered + lowered.adjoint()).scale(p.eta.sqrt() * v)
}

/// Unnormalized linear backward step, the exact adjoint of
/// [`step_rho_linear`]: `E + gamma dt D^dag[s-] E + sqrt(eta) V (s+ E + E s-)`.
pub fn step_effect_linear(effect: &QubitOperator, v: f64, p: &SimParams) -> QubitOperator {
    let raised = QubitOperator::new(0.0.into(), 0.0.into(), effect.gg, effect.ge);
    *effect
        + adjoint_dissipator(effect).scale(p.gamma_dt())
        + (raised + raised.adjoint()).scale(p.eta.sqrt() * v)
}

/// Retrodicted expectation values `(u_rho + u_E) / (1 + u_rho u_E)`, one axis
/// at a time.
pub fn retrodicted_bloch(rho_b: &BlochVector, eff_b: &BlochVector) -> Result<BlochVector> {
    let axis = |name: &str, r: f64, e: f64| {
        let denom = 1.0 + r * e;
        if denom.abs() < RETRO_DENOM_FLOOR {
            return Err(PqsError::incompatible(format!(
                "orthogonal selection along {name} (u_rho = {r}, u_E = {e})"
            )));
        }
        Ok((r + e) / denom)
    };
    Ok(BlochVector::new(
        axis("x", rho_b.x, eff_b.x)?,
        axis("y", rho_b.y, eff_b.y)?,
        axis("z", rho_b.z, eff_b.z)?,
    ))
}

/// State and effect at a common time with the retrodicted components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PastPair {
    pub t: f64,
    pub rho_bloch: BlochVector,
    pub effect_bloch: BlochVector,
    /// `(<sx>_p, <sy>_p, <sz>_p)`; each bounded by 1, the norm is not.
    pub retro: BlochVector,
}

impl PastPair {
    pub fn new(t: f64, rho_bloch: BlochVector, effect_bloch: BlochVector) -> Result<Self> {
        let retro = retrodicted_bloch(&rho_bloch, &effect_bloch).map_err(|e| match e {
            PqsError::IncompatibleSelection { detail, .. } => {
                PqsError::IncompatibleSelection { t: Some(t), detail }
            }
            other => other,
        })?;
        Ok(Self {
            t,
            rho_bloch,
            effect_bloch,
            retro,
        })
    }
}

/// Gaussian increments for a synthetic record.
pub trait NoiseSource {
    /// One standard-normal draw.
    fn standard_normal(&mut self) -> f64;
}

impl<R: Rng> NoiseSource for R {
    fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
}

/// Forward filter over a record, or over samples drawn on the fly. Replay and
/// generation share [`ForwardFilter::advance`].
#[derive(Debug, Clone)]
pub struct ForwardFilter {
    params: SimParams,
    rho: QubitOperator,
    step: usize,
}

impl ForwardFilter {
    pub fn new(rho0: &QubitOperator, params: SimParams) -> Self {
        Self {
            params,
            rho: *rho0,
            step: 0,
        }
    }

    pub fn state(&self) -> &QubitOperator {
        &self.rho
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    /// Consume the sample emitted during the current step.
    pub fn advance(&mut self, v: f64) -> &QubitOperator {
        self.rho = step_rho_forward(&self.rho, v, &self.params);
        self.step += 1;
        &self.rho
    }

    /// Draw the next sample from the conditioned state, advance, and return
    /// the sample: `V = sqrt(eta) gamma <sx> dt + sqrt(gamma) dW`.
    pub fn emit<N: NoiseSource>(&mut self, noise: &mut N) -> SignalSample {
        let p = &self.params;
        let dw = noise.standard_normal() * p.dt.sqrt();
        let v = p.signal_bound() * self.rho.pauli_expectations().x + p.gamma.sqrt() * dw;
        let sample = SignalSample { t: self.time(), v };
        self.advance(v);
        sample
    }
}

/// Synthetic record plus the conditioned state before each step and after
/// the last one (`N + 1` Bloch vectors).
pub fn generate_record_with<N: NoiseSource>(
    rho0: &QubitOperator,
    p: &SimParams,
    noise: &mut N,
) -> Result<(Vec<SignalSample>, Vec<BlochVector>)> {
    p.validate()?;
    let n = p.steps();
    let mut filter = ForwardFilter::new(rho0, *p);
    let mut samples = Vec::with_capacity(n);
    let mut path = Vec::with_capacity(n + 1);
    path.push(filter.state().pauli_expectations());
    for _ in 0..n {
        samples.push(filter.emit(noise));
        path.push(filter.state().pauli_expectations());
    }
    Ok((samples, path))
}

/// Seeded synthetic record from a physical initial state.
pub fn generate_record(
    rho0: &QubitOperator,
    p: &SimParams,
    seed: u64,
) -> Result<(HomodyneRecord, Vec<BlochVector>)> {
    rho0.to_bloch()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, path) = generate_record_with(rho0, p, &mut rng)?;
    Ok((
        HomodyneRecord {
            samples,
            params: *p,
            seed: Some(seed),
        },
        path,
    ))
}

/// `rho_k` for `k = 0..=N`; `rho_k` has seen samples `[0, k)`.
pub fn forward_pass(rho0: &QubitOperator, values: &[f64], p: &SimParams) -> Vec<QubitOperator> {
    let mut filter = ForwardFilter::new(rho0, *p);
    let mut out = Vec::with_capacity(values.len() + 1);
    out.push(*filter.state());
    for &v in values {
        out.push(*filter.advance(v));
    }
    out
}

/// Normalized `E_k` for `k = 0..=N`; `E_k` has seen samples `[k, N)`.
pub fn backward_pass(
    effect_final: &QubitOperator,
    values: &[f64],
    p: &SimParams,
) -> Result<Vec<QubitOperator>> {
    let mut e = effect_final.normalized()?;
    let mut out = vec![QubitOperator::zero(); values.len() + 1];
    out[values.len()] = e;
    for (k, &v) in values.iter().enumerate().rev() {
        e = step_effect_backward(&e, v, p);
        out[k] = e;
    }
    Ok(out)
}

/// Two-filter smoothing of a record: forward states, backward effects, and
/// the retrodicted components on the common grid `t_k = k dt`, `k = 0..=N`.
pub fn smooth_record(
    record: &HomodyneRecord,
    rho0: &QubitOperator,
    effect_final: &QubitOperator,
) -> Result<Vec<PastPair>> {
    record.validate()?;
    let p = &record.params;
    let values: Vec<f64> = record.values().collect();
    let rhos = forward_pass(rho0, &values, p);
    let effects = backward_pass(effect_final, &values, p)?;
    rhos.iter()
        .zip(&effects)
        .enumerate()
        .map(|(k, (rho, e))| {
            let t = k as f64 * p.dt;
            joint_likelihood(rho, e).map_err(|err| match err {
                PqsError::IncompatibleSelection { detail, .. } => {
                    PqsError::IncompatibleSelection { t: Some(t), detail }
                }
                other => other,
            })?;
            PastPair::new(t, rho.pauli_expectations(), e.pauli_expectations())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deterministic::{classical_conditional_excited, effect_unmonitored, rho_unmonitored};
    use crate::measurement::pqs_probabilities;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn params(eta: f64, dt: f64, horizon: f64) -> SimParams {
        SimParams::new(1.628, eta, dt, horizon, 1.0).unwrap()
    }

    fn max_abs(op: &QubitOperator) -> f64 {
        [op.gg, op.ge, op.eg, op.ee].iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_innovation_is_lindblad_step() {
        let p = params(0.3, 0.02, 1.0);
        let rho = QubitOperator::from_bloch(BlochVector::xz(0.4, -0.2));
        let v = p.signal_bound() * 0.4;
        let stepped = step_rho_forward(&rho, v, &p);
        let lindblad = rho + dissipator(&rho).scale(p.gamma_dt());
        assert!(max_abs(&(stepped - lindblad)) < 1e-15);
    }

    #[test]
    fn ground_state_is_dark() {
        let p = params(0.7, 0.02, 1.0);
        for v in [-1.0, -0.1, 0.0, 0.3, 2.0] {
            assert_eq!(step_rho_forward(&QubitOperator::ground(), v, &p), QubitOperator::ground());
            let b = step_bloch_rho(&BlochVector::xz(0.0, 1.0), v, &p).unwrap();
            assert_eq!(b, BlochVector::xz(0.0, 1.0));
        }
    }

    #[test]
    fn excited_state_gains_coherence_from_signal() {
        // hand expansion: d rho_ge = sqrt(eta) * (V - 0) * (rho_ee) for rho = |e><e|
        let p = params(0.3, 0.001, 1.0);
        let v = 0.01;
        let stepped = step_rho_forward(&QubitOperator::excited(), v, &p);
        assert_abs_diff_eq!(stepped.ge.re, 0.3f64.sqrt() * v, epsilon = 1e-15);
        assert_abs_diff_eq!(stepped.ee.re, 1.0 - p.gamma_dt(), epsilon = 1e-15);
    }

    #[test]
    fn bloch_rejects_outside_ball() {
        let p = params(0.3, 0.02, 1.0);
        let err = step_bloch_rho(&BlochVector::xz(0.9, 0.9), 0.0, &p).unwrap_err();
        assert!(matches!(err, PqsError::InvalidState { .. }));
        assert!(step_bloch_effect(&BlochVector::xz(1.0, 1.0), 0.0, &p).is_err());
    }

    #[test]
    fn purity_change_matches_ito_expansion() {
        // One Euler step changes |b|^2 by 2 b.a dt + 2 b.c dW + |a dt + c dW|^2,
        // with a the drift and c the noise coefficient. On the sphere at
        // eta = 1, b.c = 0 and 2 b.a = -|c|^2, leaving |c|^2 (dW^2 - dt) + O(dt^2).
        let p = params(1.0, 0.001, 1.0);
        let g = p.gamma;
        let dt = p.dt;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut b = BlochVector::from_theta(2.0);
        let mut mean_change = 0.0;
        let n = 2000;
        for _ in 0..n {
            let dw = dt.sqrt() * rng.standard_normal();
            let v = p.signal_bound() * b.x + g.sqrt() * dw;
            let (x, z) = (b.x, b.z);
            let a = [-0.5 * g * x, g * (1.0 - z)];
            let c = [g.sqrt() * (1.0 - z - x * x), g.sqrt() * (1.0 - z) * x];
            let cc = c[0] * c[0] + c[1] * c[1];
            let aa = a[0] * a[0] + a[1] * a[1];
            let ac = a[0] * c[0] + a[1] * c[1];
            let bb = b.norm() * b.norm();
            let ba = x * a[0] + z * a[1];
            let bc = x * c[0] + z * c[1];
            if (bb - 1.0).abs() < 1e-12 {
                assert!(bc.abs() < 1e-12 && (2.0 * ba + cc).abs() < 1e-12);
            }
            let predicted = bb + 2.0 * ba * dt + 2.0 * bc * dw + aa * dt * dt + cc * dw * dw + 2.0 * ac * dt * dw;
            let next = step_bloch_rho(&b, v, &p).unwrap();
            let expected = predicted.min(1.0).sqrt();
            assert!((next.norm() - expected).abs() < 1e-12, "{} vs {}", next.norm(), expected);
            mean_change += (next.norm() - b.norm()) / n as f64;
            b = next;
        }
        // no systematic O(dt) drift beyond the clipped leakage
        assert!(mean_change.abs() < p.gamma_dt());
    }

    #[test]
    fn identity_half_is_fixed_without_innovation() {
        let p = params(0.4, 0.02, 1.0);
        let e = step_effect_backward(&QubitOperator::maximally_mixed(), 0.0, &p);
        assert!(max_abs(&(e - QubitOperator::maximally_mixed())) < 1e-15);
    }

    #[test]
    fn zero_innovation_backward_step_matches_closed_form() {
        let p = params(0.3, 0.002, 1.0);
        for e_final in [QubitOperator::ground(), QubitOperator::from_theta(1.1), QubitOperator::excited()] {
            let x = e_final.pauli_expectations().x;
            let v = p.signal_bound() * x;
            let stepped = step_effect_backward(&e_final, v, &p);
            let oracle = effect_unmonitored(&e_final, 1.0 - p.dt, 1.0, p.gamma)
                .unwrap()
                .normalized()
                .unwrap();
            assert!(max_abs(&(stepped - oracle)) < 2.0 * p.gamma_dt().powi(2));
        }
    }

    #[test]
    fn unmonitored_backward_pass_tracks_closed_form() {
        let p = params(0.0, 0.001, 2.0);
        let gdt = p.gamma_dt();
        let values = vec![0.0; p.steps()];
        let effects = backward_pass(&QubitOperator::ground(), &values, &p).unwrap();
        let mut worst: f64 = 0.0;
        for (k, e) in effects.iter().enumerate() {
            let t = (k as f64 * p.dt).min(p.horizon);
            let oracle = effect_unmonitored(&QubitOperator::ground(), t, p.horizon, p.gamma)
                .unwrap()
                .normalized()
                .unwrap();
            worst = worst.max(max_abs(&(*e - oracle)));
        }
        assert!(worst < 5.0 * gdt, "worst {worst}");
    }

    #[test]
    fn plus_x_postselection_one_step_back() {
        let p = params(0.3, 0.02, 1.0);
        let e = step_effect_backward(&QubitOperator::from_theta(PI / 2.0), 0.0, &p);
        let x = e.pauli_expectations().x;
        assert!((x - 1.0).abs() <= p.gamma_dt());
    }

    #[test]
    fn excited_effect_noise_vanishes() {
        let p = params(0.5, 0.02, 1.0);
        let b = BlochVector::xz(0.0, -1.0);
        let a = step_bloch_effect(&b, -0.3, &p).unwrap();
        let c = step_bloch_effect(&b, 0.4, &p).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn unconditioned_effect_deterministic_at_zero_efficiency() {
        let p = params(0.0, 0.02, 1.0);
        let b = BlochVector::default();
        assert_eq!(step_bloch_effect(&b, 0.1, &p).unwrap(), step_bloch_effect(&b, -0.2, &p).unwrap());
    }

    #[test]
    fn retrodiction_examples() {
        let rho = BlochVector::xz(0.3, -0.4);
        assert_eq!(retrodicted_bloch(&rho, &BlochVector::default()).unwrap(), rho);
        let r = retrodicted_bloch(&BlochVector::xz(0.0, 0.8), &BlochVector::xz(1.0, 0.0)).unwrap();
        assert_eq!(r.x, 1.0);
        assert_abs_diff_eq!(r.z, 0.8, epsilon = 1e-15);
        assert!(r.norm() > 1.0);
        let err = retrodicted_bloch(&BlochVector::xz(1.0, 0.0), &BlochVector::xz(-1.0, 0.0)).unwrap_err();
        assert!(matches!(err, PqsError::IncompatibleSelection { .. }));
    }

    #[test]
    fn generation_and_replay_agree_bitwise() {
        let p = params(0.3, 0.02, 1.68);
        let rho0 = QubitOperator::from_theta(2.2);
        let (rec, path) = generate_record(&rho0, &p, 7).unwrap();
        rec.validate().unwrap();
        assert_eq!(rec.len(), 84);
        let values: Vec<f64> = rec.values().collect();
        let replay = forward_pass(&rho0, &values, &p);
        for (a, b) in replay.iter().zip(&path) {
            assert_eq!(a.pauli_expectations(), *b);
        }
        let (again, _) = generate_record(&rho0, &p, 7).unwrap();
        assert_eq!(again, rec);
    }

    #[test]
    fn dark_state_record_is_noise() {
        let p = params(0.3, 0.02, 20.0);
        let (rec, path) = generate_record(&QubitOperator::ground(), &p, 3).unwrap();
        assert!(path.iter().all(|b| *b == BlochVector::xz(0.0, 1.0)));
        let n = rec.len() as f64;
        let mean = rec.values().sum::<f64>() / n;
        let var = rec.values().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 5.0 * (p.gamma_dt() / n).sqrt());
        assert!((var / p.gamma_dt() - 1.0).abs() < 0.1);
    }

    #[test]
    fn no_backaction_at_zero_efficiency() {
        let p = params(0.0, 0.004, 1.68);
        let (_, path) = generate_record(&QubitOperator::excited(), &p, 5).unwrap();
        for (k, b) in path.iter().enumerate() {
            let exact = rho_unmonitored(&QubitOperator::excited(), k as f64 * p.dt, p.gamma).unwrap();
            let eb = exact.pauli_expectations();
            assert!((b.z - eb.z).abs() < 5.0 * p.gamma_dt());
            assert_eq!(b.x, 0.0);
        }
    }

    #[test]
    fn smoothing_without_information_reproduces_forward_states() {
        let p = params(0.0, 0.02, 1.0);
        let (rec, path) = generate_record(&QubitOperator::from_theta(1.0), &p, 1).unwrap();
        let pairs = smooth_record(&rec, &QubitOperator::from_theta(1.0), &QubitOperator::maximally_mixed()).unwrap();
        for (pair, b) in pairs.iter().zip(&path) {
            assert!((pair.retro.x - b.x).abs() < 1e-15 && (pair.retro.z - b.z).abs() < 1e-15);
        }
        // with information the effect moves, but the last point has seen nothing
        let p = params(0.3, 0.02, 1.0);
        let (rec, path) = generate_record(&QubitOperator::from_theta(1.0), &p, 1).unwrap();
        let pairs = smooth_record(&rec, &QubitOperator::from_theta(1.0), &QubitOperator::identity()).unwrap();
        let last = pairs.last().unwrap();
        assert_eq!(last.retro, *path.last().unwrap());
    }

    #[test]
    fn smoothing_without_information_recovers_classical_conditioning() {
        let p = params(0.0, 0.001, 1.0);
        let (rec, _) = generate_record(&QubitOperator::excited(), &p, 2).unwrap();
        let pairs = smooth_record(&rec, &QubitOperator::excited(), &QubitOperator::ground()).unwrap();
        let mut worst: f64 = 0.0;
        for pair in pairs.iter().take(pairs.len() - 1) {
            let t = pair.t.min(p.horizon);
            let expected = 1.0 - 2.0 * classical_conditional_excited(p.gamma, t, p.horizon).unwrap();
            worst = worst.max((pair.retro.z - expected).abs());
        }
        assert!(worst < 5.0 * p.gamma_dt(), "worst {worst}");
    }

    #[test]
    fn retro_matches_postselection_at_final_time() {
        let p = params(0.3, 0.02, 1.68);
        let (rec, _) = generate_record(&QubitOperator::excited(), &p, 9).unwrap();
        let pairs = smooth_record(&rec, &QubitOperator::excited(), &QubitOperator::from_theta(PI / 2.0)).unwrap();
        assert_eq!(pairs.len(), rec.len() + 1);
        assert_abs_diff_eq!(pairs.last().unwrap().retro.x, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn smoothing_reports_failing_time() {
        let p = params(0.0, 0.02, 0.1);
        let rec = HomodyneRecord {
            samples: (0..5).map(|k| SignalSample { t: k as f64 * 0.02, v: 0.0 }).collect(),
            params: p,
            seed: None,
        };
        // ground stays ground, excited effect stays orthogonal at the last point
        let err = smooth_record(&rec, &QubitOperator::ground(), &QubitOperator::excited()).unwrap_err();
        match err {
            PqsError::IncompatibleSelection { t: Some(t), .. } => assert!(t >= 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_validation() {
        let p = params(0.3, 0.02, 0.1);
        let mut rec = HomodyneRecord {
            samples: (0..5).map(|k| SignalSample { t: k as f64 * 0.02, v: 0.0 }).collect(),
            params: p,
            seed: None,
        };
        rec.validate().unwrap();
        rec.samples[2].t = 0.05;
        assert!(rec.validate().is_err());
        rec.samples.pop();
        assert!(rec.validate().is_err());
    }

    proptest! {
        #[test]
        fn operator_and_bloch_forward_agree(
            x in -1.0..=1.0f64, y in -1.0..=1.0f64, z in -1.0..=1.0f64, v in -0.6..0.6f64, eta in 0.0..=1.0f64,
        ) {
            let p = params(eta, 0.02, 1.0);
            let b = BlochVector::new(x, y, z).clipped_to_ball();
            let via_op = step_rho_forward(&QubitOperator::from_bloch(b), v, &p).to_bloch().unwrap();
            let via_bloch = step_bloch_rho(&b, v, &p).unwrap();
            prop_assert!((via_op.x - via_bloch.x).abs() < 1e-12);
            prop_assert!((via_op.y - via_bloch.y).abs() < 1e-12);
            prop_assert!((via_op.z - via_bloch.z).abs() < 1e-12);
        }

        #[test]
        fn operator_and_bloch_backward_agree(
            x in -1.0..=1.0f64, y in -1.0..=1.0f64, z in -1.0..=1.0f64, v in -0.6..0.6f64, eta in 0.0..=1.0f64,
        ) {
            let p = params(eta, 0.02, 1.0);
            let b = BlochVector::new(x, y, z).clipped_to_ball();
            let via_op = step_effect_backward(&QubitOperator::from_bloch(b), v, &p).to_bloch().unwrap();
            let via_bloch = step_bloch_effect(&b, v, &p).unwrap();
            prop_assert!((via_op.x - via_bloch.x).abs() < 1e-12);
            prop_assert!((via_op.y - via_bloch.y).abs() < 1e-12);
            prop_assert!((via_op.z - via_bloch.z).abs() < 1e-12);
        }

        #[test]
        fn retro_matches_projective_pqs(
            xr in -0.95..0.95f64, zr in -0.95..0.95f64, xe in -0.95..0.95f64, ze in -0.95..0.95f64,
        ) {
            let rb = BlochVector::xz(xr, zr).clipped_to_ball();
            let eb = BlochVector::xz(xe, ze).clipped_to_ball();
            let rho = QubitOperator::from_bloch(rb);
            let e = QubitOperator::from_bloch(eb);
            let retro = retrodicted_bloch(&rb, &eb).unwrap();
            let x_povm = [QubitOperator::from_theta(PI / 2.0), QubitOperator::from_theta(-PI / 2.0)];
            let z_povm = [QubitOperator::ground(), QubitOperator::excited()];
            let px = pqs_probabilities(&rho, &e, &x_povm).unwrap();
            let pz = pqs_probabilities(&rho, &e, &z_povm).unwrap();
            prop_assert!((retro.x - (px[0] - px[1])).abs() < 1e-12);
            prop_assert!((retro.z - (pz[0] - pz[1])).abs() < 1e-12);
            prop_assert!(retro.x.abs() <= 1.0 && retro.z.abs() <= 1.0);
        }

        #[test]
        fn plane_confinement(theta in -PI..PI, seed in 0u64..1000) {
            let p = params(0.6, 0.02, 0.4);
            let (rec, path) = generate_record(&QubitOperator::from_theta(theta), &p, seed).unwrap();
            prop_assert!(path.iter().all(|b| b.y.abs() < 1e-12));
            let pairs = smooth_record(&rec, &QubitOperator::from_theta(theta), &QubitOperator::from_theta(theta - 1.0));
            if let Ok(pairs) = pairs {
                prop_assert!(pairs.iter().all(|pp| pp.effect_bloch.y.abs() < 1e-12 && pp.rho_bloch.norm() <= 1.0 + 1e-12));
            }
        }

        #[test]
        fn trace_preserved(r in 0.0..=1.0f64, phi in 0.0..(2.0 * PI), v in -1.0..1.0f64) {
            let p = params(0.3, 0.02, 1.0);
            let rho = QubitOperator::from_bloch(BlochVector::xz(r * phi.sin(), r * phi.cos()));
            let next = step_rho_forward(&rho, v, &p);
            prop_assert!((next.trace().re - 1.0).abs() < 1e-10);
            prop_assert!(next.hermiticity_error() < 1e-12);
            prop_assert!(next.eigenvalues()[0] >= -1e-10);
        }
    }

    #[test]
    fn linear_pair_preserves_trace_pairing() {
        let p = params(0.3, 0.0005, 1.0);
        let rho0 = QubitOperator::from_theta(2.0);
        let (rec, _) = generate_record(&rho0, &p, 4).unwrap();
        let values: Vec<f64> = rec.values().collect();
        let mut rhos = vec![rho0];
        for &v in &values {
            let next = step_rho_linear(rhos.last().unwrap(), v, &p);
            rhos.push(next);
        }
        let mut effects = vec![QubitOperator::from_theta(0.3); values.len() + 1];
        for k in (0..values.len()).rev() {
            effects[k] = step_effect_linear(&effects[k + 1], values[k], &p);
        }
        let reference = rhos[0].trace_product(&effects[0]).re;
        for (r, e) in rhos.iter().zip(&effects) {
            assert!((r.trace_product(e).re / reference - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn normalizing_the_linear_steps_recovers_the_filters() {
        // first-order check: normalized linear step minus filter step is O(dt^2)
        let p = params(0.3, 0.0001, 1.0);
        let rho = QubitOperator::from_bloch(BlochVector::xz(0.3, -0.5));
        let e = QubitOperator::from_bloch(BlochVector::xz(-0.2, 0.4));
        let v = p.signal_bound() * 0.3 + (p.gamma * p.dt).sqrt() * 0.7;
        let a = step_rho_linear(&rho, v, &p).normalized().unwrap();
        let b = step_rho_forward(&rho, v, &p);
        assert!(max_abs(&(a - b)) < 20.0 * p.gamma_dt());
        let c = step_effect_linear(&e, v, &p).normalized().unwrap();
        let d = step_effect_backward(&e, v, &p);
        assert!(max_abs(&(c - d)) < 20.0 * p.gamma_dt());
    }
}
