//! Nelder–Mead simplex search and its application to the raceway controls.

use std::collections::HashMap;

use log::{info, warn};

use crate::error::{OptimError, SimulationError};
use crate::objective::{simulate, ControlBounds, Controls, ObjectiveReport, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Stop when the simplex fits in a box of this half-width around the best vertex.
    pub x_tol: f64,
    /// Stop when worst and best values differ by less than this.
    pub f_tol: f64,
    pub max_iters: usize,
    /// Offsets of the initial vertices along each axis.
    pub initial_step: Vec<f64>,
    /// Hard cap on objective calls; an iteration only starts when its worst
    /// case (`n + 2` calls) still fits.
    pub max_evals: Option<usize>,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            x_tol: 1e-8,
            f_tol: 1e-12,
            max_iters: 1000,
            initial_step: Vec::new(),
            max_evals: None,
        }
    }
}

impl NelderMeadOptions {
    pub fn validate(&self, dim: usize) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::Options(m.to_string()));
        if !(self.reflection > 0.0) {
            return bad("reflection must be positive");
        }
        if !(self.expansion > 1.0) {
            return bad("expansion must exceed 1");
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return bad("contraction must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.x_tol >= 0.0 && self.f_tol >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        if self.initial_step.len() != dim {
            return Err(OptimError::Options(format!(
                "initial_step has {} entries for a {dim}-dimensional problem",
                self.initial_step.len()
            )));
        }
        if self.initial_step.iter().any(|s| !(s.is_finite() && *s != 0.0)) {
            return bad("initial steps must be finite and nonzero");
        }
        if let Some(m) = self.max_evals {
            if m < dim + 1 {
                return Err(OptimError::Options(format!("max_evals must be at least {}", dim + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Initial,
    Reflect,
    Expand,
    ContractOutside,
    ContractInside,
    Shrink,
}

impl Move {
    pub fn as_str(self) -> &'static str {
        match self {
            Move::Initial => "initial",
            Move::Reflect => "reflect",
            Move::Expand => "expand",
            Move::ContractOutside => "contract_outside",
            Move::ContractInside => "contract_inside",
            Move::Shrink => "shrink",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Diameter,
    Spread,
    MaxIters,
    MaxEvals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub movement: Move,
    /// Vertices sorted best first.
    pub simplex: Vec<Vec<f64>>,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimTrace {
    pub records: Vec<TraceRecord>,
    pub evaluations: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub trace: OptimTrace,
}

#[derive(Debug, Clone)]
struct Vertex {
    x: Vec<f64>,
    f: f64,
    id: usize,
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

fn combine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Minimizes `f`, evaluating independent points in batches so the caller may
/// run them concurrently. The batch function must return one value per point
/// in order.
pub fn nelder_mead_batched(
    f: &mut dyn FnMut(&[Vec<f64>]) -> Vec<f64>,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult, OptimError> {
    let n = x0.len();
    opts.validate(n)?;
    let mut next_id = 0;
    let mut evals = 0;
    let mut points = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step[i];
        points.push(x);
    }
    let values = f(&points);
    evals += points.len();
    let mut simplex: Vec<Vertex> = points
        .into_iter()
        .zip(values)
        .map(|(x, v)| {
            next_id += 1;
            Vertex { x, f: sanitize(v), id: next_id - 1 }
        })
        .collect();
    let order = |s: &mut Vec<Vertex>| s.sort_by(|a, b| a.f.total_cmp(&b.f).then(a.id.cmp(&b.id)));
    order(&mut simplex);
    if simplex.iter().all(|v| v.f == f64::INFINITY) {
        return Err(OptimError::AllInfinite);
    }

    let record = |iter: usize, movement: Move, s: &[Vertex], evals: usize| TraceRecord {
        iter,
        movement,
        simplex: s.iter().map(|v| v.x.clone()).collect(),
        best_point: s[0].x.clone(),
        best_value: s[0].f,
        evaluations: evals,
    };
    let mut records = vec![record(0, Move::Initial, &simplex, evals)];
    let mut iter = 0;
    let stop = loop {
        let best = &simplex[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.x.iter().zip(&best.x).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < opts.x_tol {
            break StopReason::Diameter;
        }
        if simplex[n].f - best.f < opts.f_tol {
            break StopReason::Spread;
        }
        if iter >= opts.max_iters {
            break StopReason::MaxIters;
        }
        if opts.max_evals.is_some_and(|m| evals + n + 2 > m) {
            break StopReason::MaxEvals;
        }
        iter += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(&v.x) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let mut eval_one = |x: Vec<f64>| {
            let v = sanitize(f(std::slice::from_ref(&x))[0]);
            evals += 1;
            (x, v)
        };
        let (xr, fr) = eval_one(combine(&centroid, &worst.x, -opts.reflection));
        let mut accepted: Option<(Vec<f64>, f64, Move)> = None;
        if fr < simplex[0].f {
            let (xe, fe) = eval_one(combine(&centroid, &xr, opts.expansion));
            accepted = Some(if fe < fr { (xe, fe, Move::Expand) } else { (xr, fr, Move::Reflect) });
        } else if fr < simplex[n - 1].f {
            accepted = Some((xr, fr, Move::Reflect));
        } else if fr < worst.f {
            let (xc, fc) = eval_one(combine(&centroid, &xr, opts.contraction));
            if fc <= fr {
                accepted = Some((xc, fc, Move::ContractOutside));
            }
        } else {
            let (xc, fc) = eval_one(combine(&centroid, &worst.x, opts.contraction));
            if fc < worst.f {
                accepted = Some((xc, fc, Move::ContractInside));
            }
        }
        let movement = match accepted {
            Some((x, v, m)) => {
                simplex[n] = Vertex { x, f: v, id: next_id };
                next_id += 1;
                m
            }
            None => {
                let anchor = simplex[0].x.clone();
                let pts: Vec<Vec<f64>> = simplex[1..].iter().map(|v| combine(&anchor, &v.x, opts.shrink)).collect();
                let vals = f(&pts);
                evals += pts.len();
                for (slot, (x, v)) in simplex[1..].iter_mut().zip(pts.into_iter().zip(vals)) {
                    *slot = Vertex { x, f: sanitize(v), id: next_id };
                    next_id += 1;
                }
                Move::Shrink
            }
        };
        order(&mut simplex);
        records.push(record(iter, movement, &simplex, evals));
    };
    Ok(NelderMeadResult {
        x_best: simplex[0].x.clone(),
        f_best: simplex[0].f,
        trace: OptimTrace { records, evaluations: evals, stop },
    })
}

/// Sequential convenience wrapper around [`nelder_mead_batched`].
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult, OptimError> {
    nelder_mead_batched(&mut |pts: &[Vec<f64>]| pts.iter().map(|x| f(x)).collect(), x0, opts)
}

/// `weight · Σ (distance outside [lo, hi])²`.
pub fn bound_penalty(x: &[f64], lower: &[f64], upper: &[f64], weight: f64) -> f64 {
    weight
        * x.iter()
            .zip(lower.iter().zip(upper))
            .map(|(v, (lo, hi))| {
                let d = if v < lo { lo - v } else if v > hi { v - hi } else { 0.0 };
                d * d
            })
            .sum::<f64>()
}

/// Runs `simulate` for each control pair, on up to `threads` workers. Results
/// come back in input order.
pub fn evaluate_many(
    scenario: &Scenario,
    controls: &[Controls],
    threads: usize,
) -> Vec<Result<ObjectiveReport, SimulationError>> {
    let run = |c: &Controls| simulate(scenario, *c, &mut |_, _, _| Ok(())).map(|o| o.report);
    let threads = threads.max(1).min(controls.len().max(1));
    if threads == 1 {
        return controls.iter().map(run).collect();
    }
    let chunk = controls.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = controls
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Settings of [`optimize_raceway`].
#[derive(Debug, Clone, PartialEq)]
pub struct RacewayOptimOptions {
    pub bounds: ControlBounds,
    pub start: Controls,
    /// `initial_step` is ignored; offsets are 10% of the box width.
    pub nelder_mead: NelderMeadOptions,
    /// Bound-penalty weight is this factor times `max(|J̃(start)|, 1)`.
    pub bound_weight_factor: f64,
    pub threads: usize,
}

/// One distinct simulated control pair.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub controls: Controls,
    pub report: Option<ObjectiveReport>,
}

#[derive(Debug, Clone)]
pub struct RacewayOptimum {
    pub best: Controls,
    pub report: ObjectiveReport,
    pub trace: OptimTrace,
    /// Every distinct simulation, in the order it was requested.
    pub evaluations: Vec<Evaluation>,
    pub bound_weight: f64,
    pub bounds: ControlBounds,
    pub start: Controls,
    /// Control indices (0 = height, 1 = omega) the simplex moves in.
    pub free: Vec<usize>,
}

impl RacewayOptimum {
    /// Clamped control pair simulated for an optimizer point.
    pub fn controls_at(&self, x: &[f64]) -> Controls {
        self.bounds.clamp(to_controls(x, &self.free, self.start))
    }

    /// Report of the simulation behind an optimizer point, if it succeeded.
    pub fn report_at(&self, x: &[f64]) -> Option<&ObjectiveReport> {
        let k = key(self.controls_at(x));
        self.evaluations.iter().find(|e| key(e.controls) == k).and_then(|e| e.report.as_ref())
    }
}

/// Number of box dimensions with nonzero width.
pub fn free_count(bounds: &ControlBounds) -> usize {
    let (lo, hi) = (bounds.lower(), bounds.upper());
    (0..2).filter(|&d| hi[d] > lo[d]).count()
}

fn to_controls(x: &[f64], free: &[usize], start: Controls) -> Controls {
    let mut full = [start.height, start.omega];
    for (v, &d) in x.iter().zip(free) {
        full[d] = *v;
    }
    Controls { height: full[0], omega: full[1] }
}

type Key = (u64, u64);

fn key(c: Controls) -> Key {
    (c.height.to_bits(), c.omega.to_bits())
}

struct Cache<'a> {
    scenario: &'a Scenario,
    threads: usize,
    index: HashMap<Key, usize>,
    evaluations: Vec<Evaluation>,
}

impl Cache<'_> {
    fn ensure(&mut self, controls: &[Controls]) {
        let mut fresh = Vec::new();
        for c in controls {
            if !self.index.contains_key(&key(*c)) && !fresh.iter().any(|f: &Controls| key(*f) == key(*c)) {
                fresh.push(*c);
            }
        }
        if fresh.is_empty() {
            return;
        }
        let results = evaluate_many(self.scenario, &fresh, self.threads);
        for (c, r) in fresh.into_iter().zip(results) {
            let report = match r {
                Ok(rep) => {
                    info!("H = {:.6}, omega = {:.6}: j_tilde = {:.10e}", c.height, c.omega, rep.j_tilde);
                    Some(rep)
                }
                Err(e) => {
                    warn!("H = {}, omega = {}: simulation failed: {e}", c.height, c.omega);
                    None
                }
            };
            self.index.insert(key(c), self.evaluations.len());
            self.evaluations.push(Evaluation { controls: c, report });
        }
    }

    fn j_tilde(&self, c: Controls) -> f64 {
        self.evaluations[self.index[&key(c)]].report.as_ref().map_or(f64::INFINITY, |r| r.j_tilde)
    }
}

/// Minimizes `J̃(clamp(x)) + bound_penalty(x)` over the free dimensions of the
/// box. Dimensions with zero width stay fixed.
pub fn optimize_raceway(scenario: &Scenario, opts: &RacewayOptimOptions) -> Result<RacewayOptimum, OptimError> {
    let bounds = opts.bounds;
    bounds.validate().map_err(|e| OptimError::Options(e.to_string()))?;
    if !(opts.bound_weight_factor > 0.0) {
        return Err(OptimError::Options("bound weight factor must be positive".into()));
    }
    let start = opts.start;
    let lower = bounds.lower();
    let upper = bounds.upper();
    let free: Vec<usize> = (0..2).filter(|&d| upper[d] > lower[d]).collect();
    let mut cache = Cache { scenario, threads: opts.threads, index: HashMap::new(), evaluations: Vec::new() };

    let start_clamped = bounds.clamp(start);
    cache.ensure(&[start_clamped]);
    let j0 = cache.j_tilde(start_clamped);
    let weight = opts.bound_weight_factor * if j0.is_finite() { j0.abs().max(1.0) } else { 1.0 };
    let start_full = [start.height, start.omega];

    let result = if free.is_empty() {
        let p = bound_penalty(&start_full, &lower, &upper, weight);
        let v = sanitize(j0 + p);
        if v == f64::INFINITY {
            return Err(OptimError::AllInfinite);
        }
        let rec = TraceRecord {
            iter: 0,
            movement: Move::Initial,
            simplex: vec![Vec::new()],
            best_point: Vec::new(),
            best_value: v,
            evaluations: 1,
        };
        NelderMeadResult {
            x_best: Vec::new(),
            f_best: v,
            trace: OptimTrace { records: vec![rec], evaluations: 1, stop: StopReason::Diameter },
        }
    } else {
        let x0: Vec<f64> = free.iter().map(|&d| start_full[d]).collect();
        let mut nm = opts.nelder_mead.clone();
        nm.initial_step = free.iter().map(|&d| 0.1 * (upper[d] - lower[d])).collect();
        let lo: Vec<f64> = free.iter().map(|&d| lower[d]).collect();
        let hi: Vec<f64> = free.iter().map(|&d| upper[d]).collect();
        let mut f = |pts: &[Vec<f64>]| {
            let cs: Vec<Controls> = pts.iter().map(|x| bounds.clamp(to_controls(x, &free, start))).collect();
            cache.ensure(&cs);
            pts.iter()
                .zip(&cs)
                .map(|(x, c)| cache.j_tilde(*c) + bound_penalty(x, &lo, &hi, weight))
                .collect()
        };
        nelder_mead_batched(&mut f, &x0, &nm)?
    };

    // Every simulated point lies in the box; return the one with the lowest
    // penalized cost (earliest wins ties). Its value never exceeds the
    // simplex optimum, which carries the bound penalty on top.
    let (best, report) = cache
        .evaluations
        .iter()
        .filter_map(|e| e.report.as_ref().map(|r| (e.controls, r)))
        .min_by(|a, b| a.1.j_tilde.total_cmp(&b.1.j_tilde))
        .map(|(c, r)| (c, r.clone()))
        .ok_or(OptimError::AllInfinite)?;
    Ok(RacewayOptimum {
        best,
        report,
        trace: result.trace,
        evaluations: cache.evaluations,
        bound_weight: weight,
        bounds,
        start,
        free,
    })
}
