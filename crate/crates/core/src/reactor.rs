//! Well-mixed (0-D) reactor: classical RK4 on the reaction kinetics alone.

use crate::bio::{reaction_rhs, BioParams, Forcings, N_SPECIES};
use crate::error::ReactorError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactorState {
    pub values: [f64; N_SPECIES],
    pub time: f64,
}

fn axpy(x: &[f64; N_SPECIES], a: f64, y: &[f64; N_SPECIES]) -> [f64; N_SPECIES] {
    std::array::from_fn(|i| x[i] + a * y[i])
}

pub fn rk4_step(
    state: &ReactorState,
    p: &BioParams,
    f: &Forcings,
    depth: f64,
    dt: f64,
) -> Result<ReactorState, ReactorError> {
    if !(dt > 0.0) {
        return Err(ReactorError::NonPositiveStep(dt));
    }
    let (y, t) = (&state.values, state.time);
    let k1 = reaction_rhs(p, f, y, depth, t);
    let k2 = reaction_rhs(p, f, &axpy(y, 0.5 * dt, &k1), depth, t + 0.5 * dt);
    let k3 = reaction_rhs(p, f, &axpy(y, 0.5 * dt, &k2), depth, t + 0.5 * dt);
    let k4 = reaction_rhs(p, f, &axpy(y, dt, &k3), depth, t + dt);
    let values = std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    let next = ReactorState { values, time: t + dt };
    if next.values.iter().any(|v| !v.is_finite()) {
        return Err(ReactorError::NonFinite { time: next.time, state: next.values });
    }
    Ok(next)
}

/// Returns `n_steps + 1` states, starting with `state0`.
pub fn integrate(
    state0: &ReactorState,
    p: &BioParams,
    f: &Forcings,
    depth: f64,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<ReactorState>, ReactorError> {
    if n_steps == 0 {
        return Err(ReactorError::NoSteps);
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(*state0);
    let mut s = *state0;
    for _ in 0..n_steps {
        s = rk4_step(&s, p, f, depth, dt)?;
        out.push(s);
    }
    Ok(out)
}
