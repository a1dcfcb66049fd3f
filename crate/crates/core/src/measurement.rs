//! Homodyne measurement operators, predicted and retrodicted signal
//! statistics, post-selection effects and efficiency calibration.
//!
//! Signals are dimensionless and scaled so that their variance is
//! `gamma * dt`. The measurement operator for a sample `V` is
//!
//! ```text
//! M_V = (2 pi gamma dt)^(-1/4) exp(-V^2 / (4 gamma dt)) (1 - gamma dt / 2 s+ s- + sqrt(eta) V s-)
//! ```
//!
//! whose mean signal is `sqrt(eta) gamma <sx> dt`. For `eta < 1` the
//! undetected part of the emission acts as an extra Kraus branch
//! `sqrt((1 - eta) gamma dt) s-` carrying the same detector noise; see
//! [`HomodyneOperation`].

use serde::{Deserialize, Serialize};

use crate::error::{PqsError, Result};
use crate::params::SimParams;
use crate::qubit::QubitOperator;

const COMPLETENESS_TOL: f64 = 1e-8;
const LIKELIHOOD_FLOOR: f64 = 1e-13;

/// One homodyne sample: value `v` (dimensionless) emitted during
/// `[t, t + dt)`, `t` in us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSample {
    pub t: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

pub fn gaussian_density(v: f64, mean: f64, variance: f64) -> f64 {
    let d = v - mean;
    (-d * d / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Measurement operator `M_V` for a single step.
pub fn povm_element(v: f64, p: &SimParams) -> QubitOperator {
    HomodyneOperation::new(p).kraus(v)
}

/// The full measurement operation for one step of homodyne detection with
/// efficiency `eta`.
#[derive(Debug, Clone, Copy)]
pub struct HomodyneOperation {
    gamma_dt: f64,
    eta: f64,
}

impl HomodyneOperation {
    pub fn new(p: &SimParams) -> Self {
        Self {
            gamma_dt: p.gamma_dt(),
            eta: p.eta,
        }
    }

    fn noise_density(&self, v: f64) -> f64 {
        gaussian_density(v, 0.0, self.gamma_dt)
    }

    /// `1 - gamma dt / 2 s+ s- + sqrt(eta) V s-` without the Gaussian prefactor.
    fn bare(&self, v: f64) -> QubitOperator {
        QubitOperator::from_real(1.0, self.eta.sqrt() * v, 0.0, 1.0 - 0.5 * self.gamma_dt)
    }

    /// `M_V`
    pub fn kraus(&self, v: f64) -> QubitOperator {
        self.bare(v).scale(self.noise_density(v).sqrt())
    }

    /// Weight of the undetected decay branch at signal value `v`.
    fn hidden_weight(&self, v: f64) -> f64 {
        (1.0 - self.eta) * self.gamma_dt * self.noise_density(v)
    }

    /// `Omega_V(rho) = M_V rho M_V^dag + (1 - eta) gamma dt G(V) s- rho s+`
    pub fn apply(&self, rho: &QubitOperator, v: f64) -> QubitOperator {
        let m = self.kraus(v);
        let observed = m * *rho * m.adjoint();
        let mut hidden = QubitOperator::zero();
        hidden.gg = rho.ee * self.hidden_weight(v);
        observed + hidden
    }

    /// Adjoint map: `Tr(apply(rho, V) E) = Tr(rho apply_adjoint(E, V))`.
    pub fn apply_adjoint(&self, effect: &QubitOperator, v: f64) -> QubitOperator {
        let m = self.kraus(v);
        let observed = m.adjoint() * *effect * m;
        let mut hidden = QubitOperator::zero();
        hidden.ee = effect.gg * self.hidden_weight(v);
        observed + hidden
    }

    /// POVM effect `F_V = Omega_V^dag(1)`.
    pub fn effect(&self, v: f64) -> QubitOperator {
        self.apply_adjoint(&QubitOperator::identity(), v)
    }

    /// `int Tr(Omega_V(rho) E) dV`, in closed form.
    pub fn joint_normalizer(&self, rho: &QubitOperator, effect: &QubitOperator) -> f64 {
        let a0 = QubitOperator::from_real(1.0, 0.0, 0.0, 1.0 - 0.5 * self.gamma_dt);
        let damped = a0 * *rho * a0;
        let jump = rho.ee * effect.gg * self.gamma_dt;
        damped.trace_product(effect).re + jump.re
    }
}

/// Gaussian-shift signal density: variance `gamma dt`, mean
/// `sqrt(eta) gamma <sx> dt`. This is the form used for sampling.
pub fn signal_probability(rho: &QubitOperator, v: f64, p: &SimParams) -> f64 {
    gaussian_density(v, predicted_mean_signal(rho, p), p.gamma_dt())
}

/// Signal density from the measurement operation itself,
/// `Tr(Omega_V(rho)) / int Tr(Omega_V'(rho)) dV'`. Shares its code path with
/// [`retrodicted_signal_distribution`] at `E = identity`.
pub fn signal_probability_exact(rho: &QubitOperator, v: f64, p: &SimParams) -> Result<f64> {
    retrodicted_signal_distribution(rho, &QubitOperator::identity(), v, p)
}

/// `sqrt(eta) gamma <sx> dt`
pub fn predicted_mean_signal(rho: &QubitOperator, p: &SimParams) -> f64 {
    p.signal_bound() * rho.pauli_expectations().x
}

/// `Tr(rho E)`, failing when the pre/post-selection cannot both occur.
pub fn joint_likelihood(rho: &QubitOperator, effect: &QubitOperator) -> Result<f64> {
    let l = rho.trace_product(effect).re;
    let scale = effect.trace().re.abs().max(f64::MIN_POSITIVE);
    if !(l > LIKELIHOOD_FLOOR * scale) {
        return Err(PqsError::incompatible(format!("Tr(rho E) = {l:.3e}")));
    }
    Ok(l)
}

/// Outcome probabilities of a POVM given both a state and an effect:
/// `P(m) = Tr(M_m rho M_m^dag E) / sum_n Tr(M_n rho M_n^dag E)`.
pub fn pqs_probabilities(
    rho: &QubitOperator,
    effect: &QubitOperator,
    povm: &[QubitOperator],
) -> Result<Vec<f64>> {
    let completeness = povm
        .iter()
        .fold(QubitOperator::zero(), |acc, m| acc + m.adjoint() * *m)
        - QubitOperator::identity();
    let defect = [completeness.gg, completeness.ge, completeness.eg, completeness.ee]
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if defect > COMPLETENESS_TOL {
        return Err(PqsError::InvalidOperator(format!(
            "POVM is not complete (defect {defect:.3e})"
        )));
    }
    joint_likelihood(rho, effect)?;
    let weights: Vec<f64> = povm
        .iter()
        .map(|m| (*m * *rho * m.adjoint()).trace_product(effect).re)
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(PqsError::incompatible(format!(
            "all outcomes have zero weight (sum {total:.3e})"
        )));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Mean homodyne signal given the state and the effect at the same time,
/// to first order in `dt`:
/// `2 sqrt(eta) gamma dt Re[E_gg rho_eg + rho_ee E_ge] / Tr(rho E)`.
/// Its magnitude can exceed [`SimParams::signal_bound`].
pub fn retrodicted_mean_signal(
    rho: &QubitOperator,
    effect: &QubitOperator,
    p: &SimParams,
) -> Result<f64> {
    let l = joint_likelihood(rho, effect)?;
    let overlap = effect.gg * rho.eg + rho.ee * effect.ge;
    Ok(2.0 * p.signal_bound() * overlap.re / l)
}

/// Signal density conditioned on both `rho` and `E`:
/// `Tr(Omega_V(rho) E) / int Tr(Omega_V'(rho) E) dV'`.
pub fn retrodicted_signal_distribution(
    rho: &QubitOperator,
    effect: &QubitOperator,
    v: f64,
    p: &SimParams,
) -> Result<f64> {
    joint_likelihood(rho, effect)?;
    let op = HomodyneOperation::new(p);
    let z = op.joint_normalizer(rho, effect);
    if !(z > 0.0) {
        return Err(PqsError::incompatible(format!("normalizer {z:.3e}")));
    }
    Ok(op.apply(rho, v).trace_product(effect).re / z)
}

/// Effect for post-selecting `|angle>` with fidelity `eta_p`: the intended
/// projector with weight `eta_p` mixed with the orthogonal projector.
pub fn mixed_projector(angle: f64, eta_p: f64) -> QubitOperator {
    QubitOperator::from_theta(angle).scale(eta_p)
        + QubitOperator::from_theta(angle - std::f64::consts::PI).scale(1.0 - eta_p)
}

/// Fidelity-corrected effect for the `|theta>` -> `|theta - pi/2>`
/// pre/post-selection protocol.
pub fn corrected_effect(theta: f64, eta_p: f64) -> QubitOperator {
    mixed_projector(theta - std::f64::consts::FRAC_PI_2, eta_p)
}

/// Efficiency recovered from `|+x>` and `|-x>` calibration records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub eta: f64,
    pub stderr: f64,
    pub mean_plus: f64,
    pub mean_minus: f64,
    pub delta_v: f64,
    pub delta_v_stderr: f64,
    pub n_plus: usize,
    pub n_minus: usize,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 10_000;

/// Gaussian maximum-likelihood fit of both histograms with the variance
/// pinned to `gamma dt`. The centres are separated by
/// `2 sqrt(eta) gamma dt`, so `eta = (dV / (2 gamma dt))^2`.
pub fn estimate_efficiency(
    plus: &[SignalSample],
    minus: &[SignalSample],
    p: &SimParams,
) -> Result<EfficiencyEstimate> {
    for (name, rec) in [("+x", plus), ("-x", minus)] {
        if rec.len() < MIN_CALIBRATION_SAMPLES {
            return Err(PqsError::EstimationFailed(format!(
                "{name} record has {} samples, need at least {MIN_CALIBRATION_SAMPLES}",
                rec.len()
            )));
        }
    }
    let var = p.gamma_dt();
    let moments = |rec: &[SignalSample]| {
        let n = rec.len() as f64;
        let mean = rec.iter().map(|s| s.v).sum::<f64>() / n;
        let spread = rec.iter().map(|s| (s.v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, spread)
    };
    let (mean_plus, var_plus) = moments(plus);
    let (mean_minus, var_minus) = moments(minus);
    for (name, v) in [("+x", var_plus), ("-x", var_minus)] {
        let ratio = v / var;
        if !ratio.is_finite() || !(0.75..=1.25).contains(&ratio) {
            return Err(PqsError::EstimationFailed(format!(
                "{name} sample variance {v:.4e} is inconsistent with gamma*dt = {var:.4e}"
            )));
        }
    }
    let delta_v = mean_plus - mean_minus;
    let delta_v_stderr = (var / plus.len() as f64 + var / minus.len() as f64).sqrt();
    if delta_v <= 2.0 * delta_v_stderr {
        return Err(PqsError::EstimationFailed(format!(
            "histogram separation {delta_v:.3e} is not resolved (stderr {delta_v_stderr:.3e})"
        )));
    }
    let ratio = delta_v / (2.0 * var);
    let eta = ratio * ratio;
    let stderr = 2.0 * ratio * delta_v_stderr / (2.0 * var);
    Ok(EfficiencyEstimate {
        eta,
        stderr,
        mean_plus,
        mean_minus,
        delta_v,
        delta_v_stderr,
        n_plus: plus.len(),
        n_minus: minus.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deterministic::{classical_conditional_excited, effect_unmonitored, rho_unmonitored};
    use crate::quadrature::GaussianRule;
    use crate::qubit::BlochVector;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn lab(eta: f64) -> SimParams {
        SimParams {
            eta,
            eta_p: 1.0,
            ..SimParams::default()
        }
    }

    fn max_abs(op: &QubitOperator) -> f64 {
        [op.gg, op.ge, op.eg, op.ee].iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    fn integrate_op<F: Fn(f64) -> QubitOperator>(var: f64, f: F) -> QubitOperator {
        let q = GaussianRule::standard();
        let part = |sel: fn(&QubitOperator) -> num_complex::Complex64| {
            let re = q.integrate_density(var, |v| sel(&f(v)).re);
            let im = q.integrate_density(var, |v| sel(&f(v)).im);
            num_complex::Complex64::new(re, im)
        };
        QubitOperator::new(part(|o| o.gg), part(|o| o.ge), part(|o| o.eg), part(|o| o.ee))
    }

    #[test]
    fn bare_kraus_complete_at_unit_efficiency() {
        let p = lab(1.0);
        let gdt = p.gamma_dt();
        let total = integrate_op(gdt, |v| {
            let m = povm_element(v, &p);
            m.adjoint() * m
        });
        let defect = max_abs(&(total - QubitOperator::identity()));
        assert!(defect <= gdt * gdt, "defect {defect}");
        assert!(defect > 0.0);
    }

    #[test]
    fn full_operation_complete_for_any_efficiency() {
        for eta in [0.0, 0.3, 0.7, 1.0] {
            let p = lab(eta);
            let gdt = p.gamma_dt();
            let op = HomodyneOperation::new(&p);
            let total = integrate_op(gdt, |v| op.effect(v));
            let defect = max_abs(&(total - QubitOperator::identity()));
            assert!(defect <= gdt * gdt, "eta {eta}: defect {defect}");
            // the bare operator alone misses the hidden decay at eta < 1
            let bare = integrate_op(gdt, |v| {
                let m = povm_element(v, &p);
                m.adjoint() * m
            });
            let miss = (bare - QubitOperator::identity()).ee.re;
            assert_abs_diff_eq!(miss, -(1.0 - eta) * gdt + gdt * gdt / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_efficiency_has_no_lowering_term() {
        let p = lab(0.0);
        let m = povm_element(0.17, &p);
        assert_eq!(m.ge.norm(), 0.0);
        assert_eq!(m.eg.norm(), 0.0);
    }

    #[test]
    fn ground_state_untouched_at_zero_signal() {
        let p = lab(0.3);
        let m = povm_element(0.0, &p);
        // M_0 |g> is the first column
        assert_eq!(m.eg.norm(), 0.0);
        assert!(m.gg.re > 0.0);
    }

    #[test]
    fn predicted_means() {
        let p = lab(0.3);
        assert_abs_diff_eq!(predicted_mean_signal(&QubitOperator::ground(), &p), 0.0);
        let plus = QubitOperator::from_theta(PI / 2.0);
        assert_abs_diff_eq!(predicted_mean_signal(&plus, &p), p.signal_bound(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.signal_bound(), 0.3f64.sqrt() * 0.03256, epsilon = 1e-15);
        assert_abs_diff_eq!(p.signal_bound(), 0.017834, epsilon = 1e-6);
        let minus = QubitOperator::from_theta(-PI / 2.0);
        assert_abs_diff_eq!(predicted_mean_signal(&minus, &p), -p.signal_bound(), epsilon = 1e-15);
    }

    #[test]
    fn exact_density_moment_matches_shifted_gaussian_mean() {
        let p = lab(0.3);
        let q = GaussianRule::standard();
        let plus = QubitOperator::from_theta(PI / 2.0);
        let mean = q.integrate_density(p.gamma_dt(), |v| {
            v * signal_probability_exact(&plus, v, &p).unwrap()
        });
        // the exact operation gives the first-order mean up to O((gamma dt)^2)
        assert_abs_diff_eq!(mean, 0.3f64.sqrt() * 0.03256, epsilon = 0.03256 * 0.03256);
        let ground_mean = q.integrate_density(p.gamma_dt(), |v| {
            v * signal_probability(&QubitOperator::ground(), v, &p)
        });
        assert_abs_diff_eq!(ground_mean, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn densities_normalize() {
        let p = lab(0.3);
        let q = GaussianRule::standard();
        for b in [BlochVector::xz(0.0, -1.0), BlochVector::xz(0.8, 0.1), BlochVector::xz(-0.3, 0.5)] {
            let rho = QubitOperator::from_bloch(b);
            let shifted = q.integrate_density(p.gamma_dt(), |v| signal_probability(&rho, v, &p));
            let exact = q.integrate_density(p.gamma_dt(), |v| signal_probability_exact(&rho, v, &p).unwrap());
            assert_abs_diff_eq!(shifted, 1.0, epsilon = 1e-8);
            assert_abs_diff_eq!(exact, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn born_rule_for_identity_effect() {
        let rho = QubitOperator::from_bloch(BlochVector::xz(0.4, -0.3));
        let povm = [QubitOperator::ground(), QubitOperator::excited()];
        let probs = pqs_probabilities(&rho, &QubitOperator::identity(), &povm).unwrap();
        assert_abs_diff_eq!(probs[0], rho.gg.re, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], rho.ee.re, epsilon = 1e-15);
    }

    #[test]
    fn pqs_recovers_classical_conditioning() {
        let gamma = 1.0;
        let horizon = 1.0;
        let povm = [QubitOperator::excited(), QubitOperator::ground()];
        for i in 0..100 {
            let t = horizon * i as f64 / 99.0;
            let rho = rho_unmonitored(&QubitOperator::excited(), t, gamma).unwrap();
            let e = effect_unmonitored(&QubitOperator::ground(), t, horizon, gamma).unwrap();
            let probs = pqs_probabilities(&rho, &e, &povm).unwrap();
            let classical = classical_conditional_excited(gamma, t, horizon).unwrap();
            assert!((probs[0] - classical).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn consistent_selection_is_certain() {
        let plus = QubitOperator::from_theta(PI / 2.0);
        let minus = QubitOperator::from_theta(-PI / 2.0);
        let probs = pqs_probabilities(&plus, &plus, &[plus, minus]).unwrap();
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn orthogonal_selection_is_an_error() {
        let povm = [QubitOperator::ground(), QubitOperator::excited()];
        let err = pqs_probabilities(&QubitOperator::ground(), &QubitOperator::excited(), &povm).unwrap_err();
        assert!(matches!(err, PqsError::IncompatibleSelection { .. }));
        let p = lab(0.3);
        assert!(retrodicted_mean_signal(&QubitOperator::ground(), &QubitOperator::excited(), &p).is_err());
    }

    #[test]
    fn incomplete_povm_rejected() {
        let err = pqs_probabilities(
            &QubitOperator::ground(),
            &QubitOperator::identity(),
            &[QubitOperator::ground()],
        )
        .unwrap_err();
        assert!(matches!(err, PqsError::InvalidOperator(_)));
    }

    #[test]
    fn retrodicted_mean_reduces_without_postselection() {
        let p = lab(0.3);
        for theta in [-2.0, -0.5, 0.3, 1.2, 2.9] {
            let rho = QubitOperator::from_theta(theta);
            let retro = retrodicted_mean_signal(&rho, &QubitOperator::identity(), &p).unwrap();
            assert!((retro - predicted_mean_signal(&rho, &p)).abs() < 1e-15);
        }
    }

    #[test]
    fn anomalous_value_at_three_quarter_pi() {
        let p = lab(0.3);
        let theta = 3.0 * PI / 4.0;
        let rho = QubitOperator::from_theta(theta);
        let e = effect_unmonitored(&corrected_effect(theta, 1.0), 0.0, 0.5, p.gamma).unwrap();
        let v = retrodicted_mean_signal(&rho, &e, &p).unwrap();
        assert!(v.abs() > p.signal_bound(), "{v} vs {}", p.signal_bound());
    }

    #[test]
    fn retrodicted_mean_agrees_with_quadrature_first_moment() {
        let p = lab(0.3);
        let gdt = p.gamma_dt();
        let q = GaussianRule::standard();
        for theta in [-PI, -PI / 2.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0] {
            let rho = QubitOperator::from_theta(theta);
            let e = effect_unmonitored(&corrected_effect(theta, 1.0), 0.0, 0.5, p.gamma).unwrap();
            let closed = retrodicted_mean_signal(&rho, &e, &p).unwrap();
            // oracle: first moment of the conditioned density by quadrature
            let moment = q.integrate_density(gdt, |v| {
                v * retrodicted_signal_distribution(&rho, &e, v, &p).unwrap()
            });
            let mass = q.integrate_density(gdt, |v| retrodicted_signal_distribution(&rho, &e, v, &p).unwrap());
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
            let l = rho.trace_product(&e).re;
            assert!(
                (moment - closed).abs() <= 2.0 * gdt * gdt / l,
                "theta {theta}: quadrature {moment} vs closed {closed}"
            );
        }
    }

    #[test]
    fn symmetric_ground_selection_zero_mean() {
        let p = lab(0.3);
        let q = GaussianRule::standard();
        let g = QubitOperator::ground();
        let mean = q.integrate_density(p.gamma_dt(), |v| v * retrodicted_signal_distribution(&g, &g, v, &p).unwrap());
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(retrodicted_mean_signal(&g, &g, &p).unwrap(), 0.0);
    }

    #[test]
    fn identity_effect_density_equals_exact_density() {
        let p = lab(0.3);
        let rho = QubitOperator::from_bloch(BlochVector::xz(0.5, -0.4));
        for v in [-0.4, -0.05, 0.0, 0.02, 0.3] {
            let a = retrodicted_signal_distribution(&rho, &QubitOperator::identity(), v, &p).unwrap();
            let b = signal_probability_exact(&rho, v, &p).unwrap();
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn corrected_effect_limits() {
        for theta in [-PI, -1.0, 0.0, 0.7, 2.5] {
            let ideal = corrected_effect(theta, 1.0);
            let target = QubitOperator::from_theta(theta - PI / 2.0);
            assert!(max_abs(&(ideal - target)) < 1e-15);
            // oracle: (P + P_perp) / 2 = 1 / 2
            let half = corrected_effect(theta, 0.5);
            assert!(max_abs(&(half - QubitOperator::maximally_mixed())) < 1e-15);
            for eta_p in [0.6, 0.95] {
                let e = corrected_effect(theta, eta_p);
                assert_abs_diff_eq!(e.trace().re, 1.0, epsilon = 1e-15);
                let x = (theta - PI / 2.0).sin();
                assert_abs_diff_eq!(e.ge.re, 0.5 * (2.0 * eta_p - 1.0) * x, epsilon = 1e-15);
            }
        }
    }

    fn synthetic(mean: f64, var: f64, n: usize, seed: u64) -> Vec<SignalSample> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, var.sqrt()).unwrap();
        (0..n).map(|_| SignalSample { t: 0.0, v: d.sample(&mut rng) }).collect()
    }

    #[test]
    fn efficiency_round_trip_on_gaussian_draws() {
        let p = lab(0.3);
        let gdt = p.gamma_dt();
        let plus = synthetic(p.signal_bound(), gdt, 200_000, 1);
        let minus = synthetic(-p.signal_bound(), gdt, 200_000, 2);
        let est = estimate_efficiency(&plus, &minus, &p).unwrap();
        assert!((est.eta - 0.3).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn efficiency_errors() {
        let p = lab(0.3);
        let gdt = p.gamma_dt();
        let short = synthetic(0.0, gdt, 100, 3);
        assert!(matches!(
            estimate_efficiency(&short, &short, &p),
            Err(PqsError::EstimationFailed(_))
        ));
        let a = synthetic(0.0, gdt, 50_000, 4);
        let b = synthetic(0.0, gdt, 50_000, 5);
        let res = estimate_efficiency(&a, &b, &p);
        // zero separation is either unresolved or (rarely) a tiny positive value
        if let Ok(est) = res {
            assert!(est.eta < 4.0 * est.stderr + 1e-3);
        }
        let wide = synthetic(0.0, 4.0 * gdt, 50_000, 6);
        assert!(estimate_efficiency(&wide, &wide, &p).is_err());
    }

    proptest! {
        #[test]
        fn unconditioned_mean_is_bounded(x in -1.0..1.0f64, z in -1.0..1.0f64, eta in 0.0..=1.0f64) {
            let b = BlochVector::xz(x, z).clipped_to_ball();
            let p = SimParams { eta, ..lab(eta) };
            let v = predicted_mean_signal(&QubitOperator::from_bloch(b), &p);
            prop_assert!(v.abs() <= p.signal_bound() * (1.0 + 1e-15));
        }

        #[test]
        fn pqs_invariant_under_effect_rescaling(
            xr in -0.7..0.7f64, zr in -0.7..0.7f64, xe in -0.7..0.7f64, ze in -0.7..0.7f64, c in 0.01..100.0f64,
        ) {
            let rho = QubitOperator::from_bloch(BlochVector::xz(xr, zr));
            let e = QubitOperator::from_bloch(BlochVector::xz(xe, ze));
            let povm = [QubitOperator::from_theta(0.4), QubitOperator::from_theta(0.4 + PI)];
            let a = pqs_probabilities(&rho, &e, &povm).unwrap();
            let b = pqs_probabilities(&rho, &e.scale(c), &povm).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
            prop_assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
        }
    }
}
