//! Run configuration: flat `block.key = value` text files.
//!
//! Files are TOML, so `geometry.L = 20.0` and a `[geometry]` table with
//! `L = 20.0` are equivalent. Every key has a default; unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bio::{BioParams, DepthReference, Forcings, TransportOptions};
use crate::error::ConfigError;
use crate::geometry::{build_mesh, Mesh, RacewayGeometry};
use crate::hydro::{HydroConfig, PaddleForcing, PaddlewheelSpec};
use crate::objective::{ControlBounds, Controls, CostVariant, ObjectiveSpec, Scenario};
use crate::optimizer::{NelderMeadOptions, RacewayOptimOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryBlock {
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "W")]
    pub width: f64,
    pub r: f64,
    /// Must equal `r + W` when given.
    #[serde(rename = "R")]
    pub outer: f64,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        Self { length: 20.0, width: 2.0, r: 0.2, outer: 2.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaddleBlock {
    #[serde(rename = "F")]
    pub force: f64,
    pub rho: f64,
    pub x1_0: f64,
    pub x2_0: f64,
    pub x3_0: f64,
    /// Quadrature points per cell and direction for the paddle force.
    pub subsamples: usize,
    /// Angular speed used by `simulate`.
    pub omega: f64,
}

impl Default for PaddleBlock {
    fn default() -> Self {
        Self { force: 10.0, rho: 0.4, x1_0: 5.0, x2_0: 1.2, x3_0: 0.5, subsamples: 4, omega: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydroBlock {
    pub mu: f64,
    pub dt: f64,
    pub gravity: f64,
    pub div_tol: f64,
    pub pressure_tol: f64,
    pub pressure_max_iters: usize,
}

impl Default for HydroBlock {
    fn default() -> Self {
        let h = HydroConfig::default();
        Self {
            mu: h.viscosity,
            dt: h.dt,
            gravity: h.gravity,
            div_tol: h.div_tol,
            pressure_tol: h.pressure_solver_tol,
            pressure_max_iters: h.pressure_max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingPreset {
    Constant,
    Diurnal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightDepth {
    BelowSurface,
    AboveBottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BioBlock {
    #[serde(rename = "diff_A")]
    pub diff_a: f64,
    #[serde(rename = "diff_P")]
    pub diff_p: f64,
    #[serde(rename = "diff_N")]
    pub diff_n: f64,
    #[serde(rename = "diff_D")]
    pub diff_d: f64,
    #[serde(rename = "diff_O")]
    pub diff_o: f64,
    pub death_rate: f64,
    pub respiration_rate: f64,
    #[serde(rename = "half_sat_N")]
    pub half_sat_n: f64,
    #[serde(rename = "half_sat_P")]
    pub half_sat_p: f64,
    #[serde(rename = "stoich_N")]
    pub stoich_n: f64,
    #[serde(rename = "stoich_P")]
    pub stoich_p: f64,
    #[serde(rename = "frac_assim_P")]
    pub frac_assim_p: f64,
    #[serde(rename = "rate_P2_to_PO4")]
    pub rate_p2_to_po4: f64,
    pub sed_rate: f64,
    pub nitrif_rate: f64,
    #[serde(rename = "frac_assim_N")]
    pub frac_assim_n: f64,
    #[serde(rename = "rate_N2_to_NO3")]
    pub rate_n2_to_no3: f64,
    #[serde(rename = "photo_O2")]
    pub photo_o2: f64,
    #[serde(rename = "degrad_rate_D")]
    pub degrad_rate_d: f64,
    #[serde(rename = "O2_per_nitrif")]
    pub o2_per_nitrif: f64,
    #[serde(rename = "O2_saturation")]
    pub o2_saturation: f64,
    pub benthic_demand: f64,
    pub reaeration_rate: f64,
    pub mu_max: f64,
    pub theta_coeff: f64,
    pub theta_ref: f64,
    pub atten_depth: f64,
    pub atten_algae: f64,
    pub forcing: ForcingPreset,
    /// Constant-preset temperature (°C).
    pub temperature: f64,
    /// Constant-preset light intensity.
    pub light: f64,
    pub light_depth: LightDepth,
    pub reaction_substeps: usize,
    pub clip_tol: f64,
    pub ceiling: f64,
}

impl Default for BioBlock {
    fn default() -> Self {
        let p = BioParams::default();
        let t = TransportOptions::default();
        Self {
            diff_a: p.diff_a,
            diff_p: p.diff_p,
            diff_n: p.diff_n,
            diff_d: p.diff_d,
            diff_o: p.diff_o,
            death_rate: p.death_rate,
            respiration_rate: p.respiration_rate,
            half_sat_n: p.half_sat_n,
            half_sat_p: p.half_sat_p,
            stoich_n: p.stoich_n,
            stoich_p: p.stoich_p,
            frac_assim_p: p.frac_assim_p,
            rate_p2_to_po4: p.rate_p2_to_po4,
            sed_rate: p.sed_rate,
            nitrif_rate: p.nitrif_rate,
            frac_assim_n: p.frac_assim_n,
            rate_n2_to_no3: p.rate_n2_to_no3,
            photo_o2: p.photo_o2,
            degrad_rate_d: p.degrad_rate_d,
            o2_per_nitrif: p.o2_per_nitrif,
            o2_saturation: p.o2_saturation,
            benthic_demand: p.benthic_demand,
            reaeration_rate: p.reaeration_rate,
            mu_max: p.mu_max,
            theta_coeff: p.theta_coeff,
            theta_ref: p.theta_ref,
            atten_depth: p.atten_depth,
            atten_algae: p.atten_algae,
            forcing: ForcingPreset::Constant,
            temperature: 20.0,
            light: 1.0,
            light_depth: LightDepth::BelowSurface,
            reaction_substeps: t.reaction_substeps,
            clip_tol: t.clip_tolerance,
            ceiling: t.ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(rename = "A0")]
    pub a0: f64,
    #[serde(rename = "P1_0")]
    pub p1_0: f64,
    #[serde(rename = "P2_0")]
    pub p2_0: f64,
    #[serde(rename = "N1_0")]
    pub n1_0: f64,
    #[serde(rename = "N2_0")]
    pub n2_0: f64,
    #[serde(rename = "N3_0")]
    pub n3_0: f64,
    #[serde(rename = "D0")]
    pub d0: f64,
    #[serde(rename = "O0")]
    pub o0: f64,
    /// Initial water height used by `simulate`.
    #[serde(rename = "H")]
    pub height: f64,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self { a0: 70.0, p1_0: 1.0, p2_0: 0.5, n1_0: 10.0, n2_0: 2.0, n3_0: 2.0, d0: 5.0, o0: 8.0, height: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostChoice {
    Final,
    TimeIntegrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveBlock {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    pub cost: CostChoice,
}

impl Default for ObjectiveBlock {
    fn default() -> Self {
        Self { horizon: 86_400.0, c1: 0.0, c2: 4.0, m1: 100.0, m2: 100.0, cost: CostChoice::Final }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerBlock {
    #[serde(rename = "H_min")]
    pub h_min: f64,
    #[serde(rename = "H_max")]
    pub h_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    #[serde(rename = "start_H")]
    pub start_h: f64,
    pub start_omega: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_iters: usize,
    /// Cap on objective calls; 0 means no cap.
    pub max_evals: usize,
    pub bound_weight_factor: f64,
}

impl Default for OptimizerBlock {
    fn default() -> Self {
        let nm = NelderMeadOptions::default();
        Self {
            h_min: 0.2,
            h_max: 0.5,
            omega_min: 0.1,
            omega_max: 0.9,
            start_h: 0.3,
            start_omega: 0.4,
            reflection: nm.reflection,
            expansion: nm.expansion,
            contraction: nm.contraction,
            shrink: nm.shrink,
            x_tol: 1e-4,
            f_tol: 1e-6,
            max_iters: 100,
            max_evals: 0,
            bound_weight_factor: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshBlock {
    pub n_streamwise: usize,
    pub n_transverse: usize,
    pub n_sigma: usize,
}

impl Default for MeshBlock {
    fn default() -> Self {
        Self { n_streamwise: 48, n_transverse: 6, n_sigma: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    /// Write a field snapshot every this many steps; 0 writes only the final state.
    pub snapshot_stride: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: "out".into(), snapshot_stride: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryBlock,
    pub paddle: PaddleBlock,
    pub hydro: HydroBlock,
    pub bio: BioBlock,
    pub initial: InitialBlock,
    pub objective: ObjectiveBlock,
    pub optimizer: OptimizerBlock,
    pub mesh: MeshBlock,
    pub output: OutputBlock,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn geometry(&self) -> RacewayGeometry {
        let g = &self.geometry;
        RacewayGeometry { straight_length: g.length, channel_width: g.width, inner_radius: g.r, outer_radius: g.outer }
    }

    pub fn paddle_spec(&self) -> PaddlewheelSpec {
        let p = &self.paddle;
        PaddlewheelSpec { force_magnitude: p.force, paddle_length: p.rho, axis: [p.x1_0, p.x2_0, p.x3_0] }
    }

    pub fn hydro_config(&self) -> HydroConfig {
        let h = &self.hydro;
        HydroConfig {
            viscosity: h.mu,
            dt: h.dt,
            gravity: h.gravity,
            div_tol: h.div_tol,
            pressure_solver_tol: h.pressure_tol,
            pressure_max_iters: h.pressure_max_iters,
        }
    }

    pub fn bio_params(&self) -> BioParams {
        let b = &self.bio;
        BioParams {
            diff_a: b.diff_a,
            diff_p: b.diff_p,
            diff_n: b.diff_n,
            diff_d: b.diff_d,
            diff_o: b.diff_o,
            death_rate: b.death_rate,
            respiration_rate: b.respiration_rate,
            half_sat_n: b.half_sat_n,
            half_sat_p: b.half_sat_p,
            stoich_n: b.stoich_n,
            stoich_p: b.stoich_p,
            frac_assim_p: b.frac_assim_p,
            rate_p2_to_po4: b.rate_p2_to_po4,
            sed_rate: b.sed_rate,
            nitrif_rate: b.nitrif_rate,
            frac_assim_n: b.frac_assim_n,
            rate_n2_to_no3: b.rate_n2_to_no3,
            photo_o2: b.photo_o2,
            degrad_rate_d: b.degrad_rate_d,
            o2_per_nitrif: b.o2_per_nitrif,
            o2_saturation: b.o2_saturation,
            benthic_demand: b.benthic_demand,
            reaeration_rate: b.reaeration_rate,
            mu_max: b.mu_max,
            theta_coeff: b.theta_coeff,
            theta_ref: b.theta_ref,
            atten_depth: b.atten_depth,
            atten_algae: b.atten_algae,
        }
    }

    pub fn forcings(&self) -> Forcings {
        match self.bio.forcing {
            ForcingPreset::Constant => Forcings::Constant { temperature: self.bio.temperature, light: self.bio.light },
            ForcingPreset::Diurnal => Forcings::Diurnal { reference_temperature: self.bio.theta_ref },
        }
    }

    pub fn transport_options(&self) -> TransportOptions {
        TransportOptions {
            light_depth: match self.bio.light_depth {
                LightDepth::BelowSurface => DepthReference::BelowSurface,
                LightDepth::AboveBottom => DepthReference::AboveBottom,
            },
            reaction_substeps: self.bio.reaction_substeps,
            clip_tolerance: self.bio.clip_tol,
            ceiling: self.bio.ceiling,
        }
    }

    pub fn initial_values(&self) -> [f64; 8] {
        let i = &self.initial;
        [i.a0, i.p1_0, i.p2_0, i.n1_0, i.n2_0, i.n3_0, i.d0, i.o0]
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        let o = &self.objective;
        ObjectiveSpec {
            c1: o.c1,
            c2: o.c2,
            m1: o.m1,
            m2: o.m2,
            horizon: o.horizon,
            cost: match o.cost {
                CostChoice::Final => CostVariant::Final,
                CostChoice::TimeIntegrated => CostVariant::TimeIntegrated,
            },
        }
    }

    pub fn controls(&self) -> Controls {
        Controls { height: self.initial.height, omega: self.paddle.omega }
    }

    pub fn bounds(&self) -> ControlBounds {
        let o = &self.optimizer;
        ControlBounds { h_min: o.h_min, h_max: o.h_max, w_min: o.omega_min, w_max: o.omega_max }
    }

    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        build_mesh(&self.geometry(), self.mesh.n_streamwise, self.mesh.n_transverse, self.mesh.n_sigma)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let mesh = self.build_mesh()?;
        let scenario = Scenario {
            paddle: PaddleForcing::new(self.paddle_spec(), &mesh, self.paddle.subsamples),
            mesh,
            hydro: self.hydro_config(),
            bio: self.bio_params(),
            forcings: self.forcings(),
            transport: self.transport_options(),
            initial: self.initial_values(),
            objective: self.objective_spec(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn optim_options(&self, threads: usize) -> RacewayOptimOptions {
        let o = &self.optimizer;
        RacewayOptimOptions {
            bounds: self.bounds(),
            start: Controls { height: o.start_h, omega: o.start_omega },
            nelder_mead: NelderMeadOptions {
                reflection: o.reflection,
                expansion: o.expansion,
                contraction: o.contraction,
                shrink: o.shrink,
                x_tol: o.x_tol,
                f_tol: o.f_tol,
                max_iters: o.max_iters,
                initial_step: Vec::new(),
                max_evals: (o.max_evals > 0).then_some(o.max_evals),
            },
            bound_weight_factor: o.bound_weight_factor,
            threads,
        }
    }

    /// Checks every block against its invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = self.geometry();
        if (g.outer_radius - (g.inner_radius + g.channel_width)).abs() > 1e-9 {
            return Err(ConfigError::invalid(format!(
                "geometry: outer radius must satisfy R = r + W, got R = {} but r + W = {}",
                g.outer_radius,
                g.inner_radius + g.channel_width
            )));
        }
        g.validate()?;
        self.paddle_spec().validate()?;
        if self.paddle.subsamples == 0 {
            return Err(ConfigError::invalid("paddle: subsamples must be at least 1"));
        }
        self.controls().validate()?;
        self.hydro_config().validate()?;
        self.bio_params().validate()?;
        self.forcings().validate()?;
        if self.bio.reaction_substeps == 0 {
            return Err(ConfigError::invalid("bio: reaction_substeps must be at least 1"));
        }
        if !(self.bio.clip_tol >= 0.0) || !(self.bio.ceiling > 0.0) {
            return Err(ConfigError::invalid("bio: clip_tol must be nonnegative and ceiling positive"));
        }
        if let Some(v) = self.initial_values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ConfigError::invalid(format!("initial: concentrations must be nonnegative, got {v}")));
        }
        self.objective_spec().validate()?;
        let ratio = self.objective.horizon / self.hydro.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::invalid(format!(
                "objective: T = {} is not a multiple of hydro.dt = {}",
                self.objective.horizon, self.hydro.dt
            )));
        }
        self.bounds().validate()?;
        let o = &self.optimizer;
        if !(o.bound_weight_factor > 0.0) {
            return Err(ConfigError::invalid("optimizer: bound_weight_factor must be positive"));
        }
        if o.max_iters == 0 {
            return Err(ConfigError::invalid("optimizer: max_iters must be at least 1"));
        }
        let nm = self.optim_options(1).nelder_mead;
        let dim = crate::optimizer::free_count(&self.bounds());
        let check = NelderMeadOptions { initial_step: vec![1.0; dim], ..nm };
        check.validate(dim).map_err(|e| ConfigError::invalid(format!("optimizer: {e}")))?;
        let m = &self.mesh;
        if m.n_streamwise == 0 || m.n_transverse == 0 || m.n_sigma == 0 {
            return Err(ConfigError::invalid("mesh: all counts must be positive"));
        }
        Ok(())
    }

    /// Every key in `block.key = value` form, in a fixed order.
    pub fn to_flat_string(&self) -> String {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut out = String::new();
        for (block, value) in &table {
            let Some(inner) = value.as_table() else { continue };
            for (key, v) in inner {
                writeln!(out, "{block}.{key} = {v}").expect("string write");
            }
        }
        out
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    RunConfig::parse(&text, path)
}
