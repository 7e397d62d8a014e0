//! Coupled flow/species runs and the penalized cost of a control pair.

use crate::bio::{step_species, BioParams, Forcings, Species, SpeciesState, TransportOptions, N_SPECIES};
use crate::error::{ConfigError, SimulationError};
use crate::geometry::Mesh;
use crate::hydro::{kinetic_energy, step_flow, water_volume, FlowState, HydroConfig, PaddleForcing};

/// The two decision variables: initial water height and paddle angular speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub height: f64,
    pub omega: f64,
}

impl Controls {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(ConfigError::invalid(format!("controls: height must be positive, got {}", self.height)));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(ConfigError::invalid(format!("controls: omega must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub h_min: f64,
    pub h_max: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl ControlBounds {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !ok(self.h_min, self.h_max) {
            return Err(ConfigError::invalid(format!(
                "bounds: need 0 < h_min <= h_max, got [{}, {}]",
                self.h_min, self.h_max
            )));
        }
        if !ok(self.w_min, self.w_max) {
            return Err(ConfigError::invalid(format!(
                "bounds: need 0 < w_min <= w_max, got [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.h_min, self.w_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.h_max, self.w_max]
    }

    pub fn contains(&self, c: Controls) -> bool {
        (self.h_min..=self.h_max).contains(&c.height) && (self.w_min..=self.w_max).contains(&c.omega)
    }

    pub fn clamp(&self, c: Controls) -> Controls {
        Controls { height: c.height.clamp(self.h_min, self.h_max), omega: c.omega.clamp(self.w_min, self.w_max) }
    }
}

/// Which functional of the algae field is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostVariant {
    /// `-∫ A(x, T) dx`.
    #[default]
    Final,
    /// `-Σ_n Δt ∫ A(x, t_n) dx`.
    TimeIntegrated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    /// Velocity threshold: `Σ Δt ∫‖v‖ ≥ c1`.
    pub c1: f64,
    /// Oxygen threshold: `min_n ∫ O ≥ c2`.
    pub c2: f64,
    pub m1: f64,
    pub m2: f64,
    /// Horizon `T` (s).
    pub horizon: f64,
    pub cost: CostVariant,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("C1", self.c1), ("C2", self.c2), ("T", self.horizon)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(format!("objective: {name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("M1", self.m1), ("M2", self.m2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(format!("objective: {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One row of the time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub total_a: f64,
    pub total_o: f64,
    pub kinetic_energy: f64,
    pub volume: f64,
    /// `∫‖v‖ dx` at this step.
    pub speed_integral: f64,
    /// `Σ_{m=1..step} Δt ∫‖v^m‖ dx`.
    pub vel_integral_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub controls: Controls,
    pub j_raw: f64,
    pub velocity_integral: f64,
    pub oxygen_min_integral: f64,
    pub penalty_velocity: f64,
    pub penalty_oxygen: f64,
    pub j_tilde: f64,
    /// Volume-mean algae concentration at the final time.
    pub mean_a: f64,
    pub timeseries: Vec<StepDiagnostics>,
}

/// Everything except the controls that a coupled run needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: Mesh,
    pub paddle: PaddleForcing,
    pub hydro: HydroConfig,
    pub bio: BioParams,
    pub forcings: Forcings,
    pub transport: TransportOptions,
    /// Uniform initial concentrations in species order.
    pub initial: [f64; N_SPECIES],
    pub objective: ObjectiveSpec,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.paddle.paddle.validate()?;
        self.hydro.validate()?;
        self.bio.validate()?;
        self.forcings.validate()?;
        self.objective.validate()?;
        if let Some(v) = self.initial.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ConfigError::invalid(format!("initial: concentrations must be nonnegative, got {v}")));
        }
        self.n_steps().map(|_| ())
    }

    /// `T / Δt`, which must be a whole number.
    pub fn n_steps(&self) -> Result<usize, ConfigError> {
        let ratio = self.objective.horizon / self.hydro.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::invalid(format!(
                "objective: T = {} is not a multiple of dt = {}",
                self.objective.horizon, self.hydro.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Final states and the report of one run.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub flow: FlowState,
    pub species: SpeciesState,
    pub report: ObjectiveReport,
}

/// `Σ_cells value · area · η / n_sigma`.
pub fn volume_integral(field: &[f64], mesh: &Mesh, eta: &[f64]) -> Result<f64, ConfigError> {
    if field.len() != mesh.n_cells() || eta.len() != mesh.n_plan() {
        return Err(ConfigError::invalid(format!(
            "volume_integral: got {} values and {} heights for a mesh of {} cells and {} columns",
            field.len(),
            eta.len(),
            mesh.n_cells(),
            mesh.n_plan()
        )));
    }
    let nz = mesh.n_sigma;
    let mut total = 0.0;
    for (p, column) in field.chunks_exact(nz).enumerate() {
        let vol = mesh.plan_cell_areas[p] * eta[p] / nz as f64;
        total += vol * column.iter().sum::<f64>();
    }
    Ok(total)
}

fn speed_integral(mesh: &Mesh, flow: &FlowState) -> f64 {
    let nz = mesh.n_sigma;
    let mut total = 0.0;
    for (p, column) in flow.velocity.chunks_exact(nz).enumerate() {
        let vol = mesh.plan_cell_areas[p] * flow.surface_height[p] / nz as f64;
        total += vol * column.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).sum::<f64>();
    }
    total
}

/// Raw cost. `time_integrated_a` is `Σ_{n=1..N} Δt ∫A^n`, only used by the
/// time-integrated variant.
pub fn cost_raw(species: &SpeciesState, mesh: &Mesh, eta: &[f64], spec: &ObjectiveSpec, time_integrated_a: f64) -> f64 {
    match spec.cost {
        CostVariant::Final => -volume_integral(species.field(Species::A), mesh, eta).expect("species fields match the mesh"),
        CostVariant::TimeIntegrated => -time_integrated_a,
    }
}

/// `Σ_{n=1..N} Δt ∫‖v^n‖`.
pub fn constraint_velocity(diagnostics: &[StepDiagnostics], dt: f64) -> f64 {
    diagnostics.iter().filter(|d| d.step > 0).map(|d| dt * d.speed_integral).sum()
}

/// `min_{n=1..N} ∫ O^n`; the initial value when there are no steps.
pub fn constraint_oxygen(diagnostics: &[StepDiagnostics]) -> f64 {
    let stepped = diagnostics.iter().filter(|d| d.step > 0).map(|d| d.total_o);
    let min = stepped.fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        min
    } else {
        diagnostics.first().map_or(f64::NAN, |d| d.total_o)
    }
}

/// Fills the penalties and the penalized total.
pub fn penalized_cost(report: &mut ObjectiveReport, spec: &ObjectiveSpec) {
    report.penalty_velocity = spec.m1 * (spec.c1 - report.velocity_integral).max(0.0);
    report.penalty_oxygen = spec.m2 * (spec.c2 - report.oxygen_min_integral).max(0.0);
    report.j_tilde = report.j_raw + report.penalty_velocity + report.penalty_oxygen;
}

fn diagnostics(mesh: &Mesh, step: usize, flow: &FlowState, species: &SpeciesState, cum: f64) -> StepDiagnostics {
    let eta = &flow.surface_height;
    StepDiagnostics {
        step,
        time: flow.time,
        total_a: volume_integral(species.field(Species::A), mesh, eta).expect("consistent shapes"),
        total_o: volume_integral(species.field(Species::O), mesh, eta).expect("consistent shapes"),
        kinetic_energy: kinetic_energy(mesh, flow),
        volume: water_volume(mesh, eta),
        speed_integral: speed_integral(mesh, flow),
        vel_integral_cum: cum,
    }
}

/// Runs the coupled model from rest for the scenario horizon. `observer` sees
/// the state after every step (and the initial state as step 0).
pub fn simulate(
    scenario: &Scenario,
    controls: Controls,
    observer: &mut dyn FnMut(usize, &FlowState, &SpeciesState) -> std::io::Result<()>,
) -> Result<SimulationOutcome, SimulationError> {
    controls.validate()?;
    scenario.validate()?;
    let n_steps = scenario.n_steps()?;
    let mesh = &scenario.mesh;
    let dt = scenario.hydro.dt;

    let mut flow = FlowState::at_rest(mesh, controls.height, scenario.hydro.gravity);
    let mut species = SpeciesState::uniform(mesh, scenario.initial);
    let mut series = Vec::with_capacity(n_steps + 1);
    series.push(diagnostics(mesh, 0, &flow, &species, 0.0));
    observer(0, &flow, &species).map_err(|source| SimulationError::Observer { step: 0, source })?;

    let mut cum = 0.0;
    let mut integrated_a = 0.0;
    for step in 1..=n_steps {
        let (next_flow, _) = step_flow(mesh, &flow, &scenario.hydro, &scenario.paddle, controls.omega)
            .map_err(|source| SimulationError::Flow { step, source })?;
        let (next_species, _) = step_species(
            mesh,
            &species,
            &next_flow,
            &scenario.bio,
            &scenario.forcings,
            &scenario.transport,
            dt,
        )
        .map_err(|source| SimulationError::Species { step, source })?;
        flow = next_flow;
        species = next_species;
        let mut d = diagnostics(mesh, step, &flow, &species, cum);
        cum += dt * d.speed_integral;
        d.vel_integral_cum = cum;
        integrated_a += dt * d.total_a;
        series.push(d);
        observer(step, &flow, &species).map_err(|source| SimulationError::Observer { step, source })?;
    }

    let j_raw = cost_raw(&species, mesh, &flow.surface_height, &scenario.objective, integrated_a);
    let last = series.last().expect("initial row");
    let mut report = ObjectiveReport {
        controls,
        j_raw,
        velocity_integral: constraint_velocity(&series, dt),
        oxygen_min_integral: constraint_oxygen(&series),
        penalty_velocity: 0.0,
        penalty_oxygen: 0.0,
        j_tilde: j_raw,
        mean_a: last.total_a / last.volume,
        timeseries: series,
    };
    penalized_cost(&mut report, &scenario.objective);
    Ok(SimulationOutcome { flow, species, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, plan_area, RacewayGeometry};
    use crate::hydro::PaddlewheelSpec;

    fn scenario(horizon: f64, force: f64) -> Scenario {
        let mesh = build_mesh(&RacewayGeometry::new(20.0, 2.0, 0.2), 24, 4, 4).unwrap();
        let paddle = PaddlewheelSpec { force_magnitude: force, paddle_length: 0.4, axis: [5.0, 1.2, 0.5] };
        Scenario {
            paddle: PaddleForcing::new(paddle, &mesh, 3),
            mesh,
            hydro: HydroConfig::default(),
            bio: BioParams::default(),
            forcings: Forcings::Constant { temperature: 20.0, light: 1.0 },
            transport: TransportOptions::default(),
            initial: [70.0, 1.0, 0.5, 10.0, 2.0, 2.0, 5.0, 8.0],
            objective: ObjectiveSpec { c1: 0.0, c2: 4.0, m1: 100.0, m2: 100.0, horizon, cost: CostVariant::Final },
        }
    }

    fn report(j_raw: f64, vel: f64, oxy: f64) -> ObjectiveReport {
        ObjectiveReport {
            controls: Controls { height: 0.3, omega: 0.4 },
            j_raw,
            velocity_integral: vel,
            oxygen_min_integral: oxy,
            penalty_velocity: 0.0,
            penalty_oxygen: 0.0,
            j_tilde: 0.0,
            mean_a: 0.0,
            timeseries: Vec::new(),
        }
    }

    #[test]
    fn penalty_example() {
        let spec = ObjectiveSpec { c1: 0.0, c2: 4.0, m1: 1.0, m2: 100.0, horizon: 0.0, cost: CostVariant::Final };
        let mut r = report(-50.0, 0.0, 3.0);
        penalized_cost(&mut r, &spec);
        assert_eq!(r.j_tilde, 50.0);
        assert_eq!(r.penalty_velocity, 0.0);
        let mut r = report(-50.0, 0.0, 5.0);
        penalized_cost(&mut r, &spec);
        assert_eq!(r.j_tilde, -50.0);
    }

    #[test]
    fn zero_horizon_costs_initial_algae() {
        let s = scenario(0.0, 10.0);
        let out = simulate(&s, Controls { height: 0.3, omega: 0.4 }, &mut |_, _, _| Ok(())).unwrap();
        let expected = -70.0 * 0.3 * plan_area(&s.mesh.geometry);
        let meshed = -70.0 * 0.3 * s.mesh.total_plan_area();
        assert!((out.report.j_raw - meshed).abs() <= 1e-12 * meshed.abs());
        assert!((out.report.j_raw - expected).abs() <= 1e-2 * expected.abs());
        assert_eq!(out.report.timeseries.len(), 1);
        assert_eq!(out.report.velocity_integral, 0.0);
    }

    #[test]
    fn paddle_off_keeps_water_still() {
        let s = scenario(20.0, 0.0);
        let out = simulate(&s, Controls { height: 0.3, omega: 0.4 }, &mut |_, _, _| Ok(())).unwrap();
        assert!(out.flow.velocity.iter().all(|v| *v == [0.0; 3]));
        assert_eq!(out.report.velocity_integral, 0.0);
        assert_eq!(out.report.timeseries.len(), 41);
    }

    #[test]
    fn rejects_fractional_step_count() {
        let s = scenario(10.25, 10.0);
        assert!(simulate(&s, Controls { height: 0.3, omega: 0.4 }, &mut |_, _, _| Ok(())).is_err());
    }

    #[test]
    fn oxygen_min_falls_back_to_initial() {
        let d = StepDiagnostics {
            step: 0,
            time: 0.0,
            total_a: 1.0,
            total_o: 7.0,
            kinetic_energy: 0.0,
            volume: 1.0,
            speed_integral: 0.0,
            vel_integral_cum: 0.0,
        };
        assert_eq!(constraint_oxygen(&[d]), 7.0);
        let later = [d, StepDiagnostics { step: 1, total_o: 9.0, ..d }, StepDiagnostics { step: 2, total_o: 8.0, ..d }];
        assert_eq!(constraint_oxygen(&later), 8.0);
    }

    #[test]
    fn volume_integral_shape_checked() {
        let s = scenario(0.0, 0.0);
        assert!(volume_integral(&[1.0; 3], &s.mesh, &vec![0.3; s.mesh.n_plan()]).is_err());
    }
}
