//! Unconditioned (ensemble-averaged) decay of states and effects, and the
//! classical conditional-probability baseline.

use crate::error::{PqsError, Result};
use crate::qubit::QubitOperator;

/// Probability that an initially excited emitter is still excited at `t`
/// with no later information: `exp(-gamma t)`.
pub fn unconditioned_excited(gamma: f64, t: f64) -> f64 {
    (-gamma * t).exp()
}

/// Excited-state probability at `t` given the emitter was found excited at
/// `T`: a decay cannot be undone, so it is 1 throughout.
pub fn conditional_excited_given_excited(_gamma: f64, _t: f64, _horizon: f64) -> f64 {
    1.0
}

/// `P(e, t | g, T)` for an emitter prepared in `|e>` at 0 and found in `|g>`
/// at `T`.
pub fn classical_conditional_excited(gamma: f64, t: f64, horizon: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(PqsError::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if !(t >= 0.0) || !(t <= horizon) {
        return Err(PqsError::Domain(format!(
            "need 0 <= t <= T, got t = {t}, T = {horizon}"
        )));
    }
    // survives to t, then decays before T
    let still_excited = (-gamma * t).exp() * -(-gamma * (horizon - t)).exp_m1();
    let already_decayed = -(-gamma * t).exp_m1();
    let norm = still_excited + already_decayed;
    if norm == 0.0 {
        // t = T = 0
        return Ok(1.0);
    }
    Ok(still_excited / norm)
}

/// `D[s-] rho = s- rho s+ - {s+ s-, rho} / 2`
pub fn dissipator(rho: &QubitOperator) -> QubitOperator {
    QubitOperator::new(
        rho.ee,
        -0.5 * rho.ge,
        -0.5 * rho.eg,
        -rho.ee,
    )
}

/// `D^dag[s-] E = s+ E s- - {s+ s-, E} / 2`
pub fn adjoint_dissipator(effect: &QubitOperator) -> QubitOperator {
    QubitOperator::new(
        num_complex::Complex64::new(0.0, 0.0),
        -0.5 * effect.ge,
        -0.5 * effect.eg,
        effect.gg - effect.ee,
    )
}

/// Closed-form solution of `d rho = gamma dt D[s-] rho`.
pub fn rho_unmonitored(rho0: &QubitOperator, t: f64, gamma: f64) -> Result<QubitOperator> {
    if !(t >= 0.0) {
        return Err(PqsError::Domain(format!("t must be non-negative, got {t}")));
    }
    let pop = (-gamma * t).exp();
    let coh = (-0.5 * gamma * t).exp();
    let ee = rho0.ee * pop;
    Ok(QubitOperator::new(
        rho0.gg + rho0.ee - ee,
        rho0.ge * coh,
        rho0.eg * coh,
        ee,
    ))
}

/// Closed-form backward solution of `dE = gamma dt D^dag[s-] E` from the
/// final effect `E_T`. The result is not normalized.
pub fn effect_unmonitored(
    effect_final: &QubitOperator,
    t: f64,
    horizon: f64,
    gamma: f64,
) -> Result<QubitOperator> {
    if !(t >= 0.0) || !(t <= horizon) {
        return Err(PqsError::Domain(format!(
            "need 0 <= t <= T, got t = {t}, T = {horizon}"
        )));
    }
    let tau = horizon - t;
    let pop = (-gamma * tau).exp();
    let coh = (-0.5 * gamma * tau).exp();
    Ok(QubitOperator::new(
        effect_final.gg,
        effect_final.ge * coh,
        effect_final.eg * coh,
        effect_final.gg + (effect_final.ee - effect_final.gg) * pop,
    ))
}
