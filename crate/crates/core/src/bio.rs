//! Algae, nutrient and oxygen kinetics and their transport on the σ-mesh.
//!
//! Eight species are carried: algae `A`, phosphate `P1`, non-assimilable
//! phosphorus `P2`, nitrate `N1`, non-assimilable nitrogen `N2`, ammonium
//! `N3`, organic load `D` and dissolved oxygen `O`. Transport uses the face
//! fluxes of the last flow step: explicit first-order upwind horizontally and
//! an implicit upwind/diffusion solve along each column, followed by a
//! pointwise explicit Euler reaction update. Every boundary is zero-flux.

use std::f64::consts::PI;

use crate::error::{BioError, ConfigError};
use crate::geometry::Mesh;
use crate::hydro::{solve_tridiagonal, FlowState};

pub const N_SPECIES: usize = 8;

/// Species order used by every `[f64; 8]` in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    A = 0,
    P1 = 1,
    P2 = 2,
    N1 = 3,
    N2 = 4,
    N3 = 5,
    D = 6,
    O = 7,
}

pub const SPECIES_NAMES: [&str; N_SPECIES] = ["A", "P1", "P2", "N1", "N2", "N3", "D", "O"];

/// Kinetic and transport coefficients. Rates are per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BioParams {
    pub diff_a: f64,
    pub diff_p: f64,
    pub diff_n: f64,
    pub diff_d: f64,
    pub diff_o: f64,
    /// Algal death rate `γ`.
    pub death_rate: f64,
    /// Algal respiration rate `β`.
    pub respiration_rate: f64,
    pub half_sat_n: f64,
    pub half_sat_p: f64,
    pub stoich_n: f64,
    pub stoich_p: f64,
    /// Assimilable fraction of phosphorus in dead algae `δ1`.
    pub frac_assim_p: f64,
    /// `P2 → PO4` rate `κ1`.
    pub rate_p2_to_po4: f64,
    /// First-order sedimentation loss.
    pub sed_rate: f64,
    /// Nitrification rate `κ2`.
    pub nitrif_rate: f64,
    /// Assimilable fraction of nitrogen in dead algae `δ2`.
    pub frac_assim_n: f64,
    /// `N2 → NO3` rate `κ3`.
    pub rate_n2_to_no3: f64,
    /// Oxygen produced by photosynthesis per unit algal growth `φ`.
    pub photo_o2: f64,
    /// Organic load degradation rate `κ4`.
    pub degrad_rate_d: f64,
    /// Oxygen consumed per unit nitrified `ν`.
    pub o2_per_nitrif: f64,
    /// Oxygen saturation concentration `C_s`.
    pub o2_saturation: f64,
    /// Benthic oxygen demand (concentration per second).
    pub benthic_demand: f64,
    /// Coefficient of the `(C_s - O)` reaeration term.
    pub reaeration_rate: f64,
    /// Maximum specific growth rate `μ_max`.
    pub mu_max: f64,
    /// Thermic regeneration coefficient `Θ`.
    pub theta_coeff: f64,
    /// Reference temperature `θ0` (°C).
    pub theta_ref: f64,
    /// Light attenuation by depth `Φ1` (1/m).
    pub atten_depth: f64,
    /// Light attenuation by algal mass `Φ2`.
    pub atten_algae: f64,
}

const PER_DAY: f64 = 1.0 / 86_400.0;

impl Default for BioParams {
    /// Placeholder values in plausible ranges for a green microalga. Tests
    /// always set their own parameters.
    fn default() -> Self {
        Self {
            diff_a: 1e-4,
            diff_p: 1e-4,
            diff_n: 1e-4,
            diff_d: 1e-4,
            diff_o: 1e-4,
            death_rate: 0.1 * PER_DAY,
            respiration_rate: 0.1 * PER_DAY,
            half_sat_n: 0.05,
            half_sat_p: 0.01,
            stoich_n: 0.07,
            stoich_p: 0.01,
            frac_assim_p: 0.5,
            rate_p2_to_po4: 0.03 * PER_DAY,
            sed_rate: 0.01 * PER_DAY,
            nitrif_rate: 0.1 * PER_DAY,
            frac_assim_n: 0.5,
            rate_n2_to_no3: 0.05 * PER_DAY,
            photo_o2: 1.4,
            degrad_rate_d: 0.1 * PER_DAY,
            o2_per_nitrif: 4.57,
            o2_saturation: 9.0,
            benthic_demand: 0.0,
            reaeration_rate: 0.5 * PER_DAY,
            mu_max: 2.0 * PER_DAY,
            theta_coeff: 1.047,
            theta_ref: 20.0,
            atten_depth: 0.5,
            atten_algae: 0.01,
        }
    }
}

impl BioParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let nonneg = [
            ("diff_A", self.diff_a),
            ("diff_P", self.diff_p),
            ("diff_N", self.diff_n),
            ("diff_D", self.diff_d),
            ("diff_O", self.diff_o),
            ("death_rate", self.death_rate),
            ("respiration_rate", self.respiration_rate),
            ("half_sat_N", self.half_sat_n),
            ("half_sat_P", self.half_sat_p),
            ("stoich_N", self.stoich_n),
            ("stoich_P", self.stoich_p),
            ("frac_assim_P", self.frac_assim_p),
            ("rate_P2_to_PO4", self.rate_p2_to_po4),
            ("sed_rate", self.sed_rate),
            ("nitrif_rate", self.nitrif_rate),
            ("frac_assim_N", self.frac_assim_n),
            ("rate_N2_to_NO3", self.rate_n2_to_no3),
            ("photo_O2", self.photo_o2),
            ("degrad_rate_D", self.degrad_rate_d),
            ("O2_per_nitrif", self.o2_per_nitrif),
            ("benthic_demand", self.benthic_demand),
            ("reaeration_rate", self.reaeration_rate),
            ("mu_max", self.mu_max),
            ("atten_depth", self.atten_depth),
            ("atten_algae", self.atten_algae),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(format!(
                    "bio: {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [("frac_assim_P", self.frac_assim_p), ("frac_assim_N", self.frac_assim_n)] {
            if v > 1.0 {
                return Err(ConfigError::invalid(format!("bio: {name} must not exceed 1, got {v}")));
            }
        }
        if !(self.theta_coeff > 0.0 && self.theta_coeff.is_finite()) {
            return Err(ConfigError::invalid("bio: theta_coeff must be positive"));
        }
        if !(self.o2_saturation > 0.0 && self.o2_saturation.is_finite()) {
            return Err(ConfigError::invalid("bio: O2_saturation must be positive"));
        }
        if !self.theta_ref.is_finite() {
            return Err(ConfigError::invalid("bio: theta_ref must be finite"));
        }
        Ok(())
    }

    /// Diffusivity of each species in storage order.
    pub fn diffusivities(&self) -> [f64; N_SPECIES] {
        [
            self.diff_a,
            self.diff_p,
            self.diff_p,
            self.diff_n,
            self.diff_n,
            self.diff_n,
            self.diff_d,
            self.diff_o,
        ]
    }

    /// Temperature correction `Θ^(θ - θ0)`.
    #[inline]
    pub fn temperature_factor(&self, temperature: f64) -> f64 {
        self.theta_coeff.powf(temperature - self.theta_ref)
    }
}

/// Temperature and incident light as functions of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Forcings {
    Constant { temperature: f64, light: f64 },
    /// `θ(t) = θ0 + 2 sin(2πt/86400)`, `i(t) = max(0, sin(2πt/86400))`.
    Diurnal { reference_temperature: f64 },
}

impl Forcings {
    pub fn temperature(&self, t: f64) -> f64 {
        match *self {
            Forcings::Constant { temperature, .. } => temperature,
            Forcings::Diurnal { reference_temperature } => {
                reference_temperature + 2.0 * (2.0 * PI * t / 86_400.0).sin()
            }
        }
    }

    pub fn light(&self, t: f64) -> f64 {
        match *self {
            Forcings::Constant { light, .. } => light,
            Forcings::Diurnal { .. } => (2.0 * PI * t / 86_400.0).sin().max(0.0),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            Forcings::Constant { temperature, light } => {
                if !temperature.is_finite() || !(light.is_finite() && light >= 0.0) {
                    return Err(ConfigError::invalid(
                        "bio: constant forcing needs a finite temperature and a nonnegative light intensity",
                    ));
                }
            }
            Forcings::Diurnal { reference_temperature } => {
                if !reference_temperature.is_finite() {
                    return Err(ConfigError::invalid("bio: diurnal reference temperature must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// Light-limited growth rate `μ_max Θ^(θ-θ0) i(t) exp(-(Φ1 + Φ2 A) depth)`.
pub fn light_factor(p: &BioParams, f: &Forcings, a_local: f64, depth: f64, t: f64) -> f64 {
    p.mu_max
        * p.temperature_factor(f.temperature(t))
        * f.light(t)
        * (-(p.atten_depth + p.atten_algae * a_local) * depth).exp()
}

#[inline]
fn saturation(c: f64, k: f64) -> f64 {
    if c <= 0.0 {
        0.0
    } else {
        c / (k + c)
    }
}

/// Monod growth rate limited by phosphate and by nitrate plus ammonium.
pub fn monod_growth(p: &BioParams, light: f64, p1: f64, n1: f64, n3: f64) -> f64 {
    light * saturation(p1, p.half_sat_p) * saturation(n1 + n3, p.half_sat_n)
}

/// Right-hand sides of the eight reaction equations at one point.
pub fn reaction_rhs(p: &BioParams, f: &Forcings, s: &[f64; N_SPECIES], depth: f64, t: f64) -> [f64; N_SPECIES] {
    let [a, p1, p2, n1, n2, n3, d, o] = *s;
    let temp = p.temperature_factor(f.temperature(t));
    let light = light_factor(p, f, a, depth, t);
    let phos = light * saturation(p1, p.half_sat_p);
    let n_denom = p.half_sat_n + n1 + n3;
    let (uptake_n1, uptake_n3) = if n_denom > 0.0 {
        (phos * n1 / n_denom, phos * n3 / n_denom)
    } else {
        (0.0, 0.0)
    };
    let growth = uptake_n1 + uptake_n3;
    let loss = p.death_rate + p.respiration_rate;
    let degradation = p.degrad_rate_d * temp * d;
    [
        (growth - loss) * a,
        p.stoich_p * (p.frac_assim_p * loss - growth) * a + p.rate_p2_to_po4 * p2,
        p.stoich_p * (1.0 - p.frac_assim_p) * loss * a - p.rate_p2_to_po4 * p2 - p.sed_rate * p2,
        -p.stoich_n * uptake_n1 * a + p.nitrif_rate * n3,
        p.stoich_n * (1.0 - p.frac_assim_n) * loss * a - p.rate_n2_to_no3 * n2 - p.sed_rate * n2,
        p.stoich_n * (p.frac_assim_n * loss - uptake_n3) * a + p.rate_n2_to_no3 * n2 - p.nitrif_rate * n3,
        p.photo_o2 * p.death_rate * a - degradation - p.sed_rate * d,
        p.photo_o2 * (growth - p.respiration_rate) * a - p.o2_per_nitrif * p.nitrif_rate * n3 - degradation
            + p.reaeration_rate * temp * (p.o2_saturation - o)
            - p.benthic_demand,
    ]
}

/// Which vertical coordinate feeds the light attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthReference {
    /// Distance below the local free surface.
    #[default]
    BelowSurface,
    /// Height `x3` above the bottom.
    AboveBottom,
}

/// Numerical options of the species step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    pub light_depth: DepthReference,
    /// Explicit Euler reaction substeps per transport step.
    pub reaction_substeps: usize,
    /// Largest tolerated clipped mass as a fraction of the species total.
    pub clip_tolerance: f64,
    /// Any concentration above this is reported as a blow-up.
    pub ceiling: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            light_depth: DepthReference::BelowSurface,
            reaction_substeps: 1,
            clip_tolerance: 1e-8,
            ceiling: 1e12,
        }
    }
}

/// Concentration fields on the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesState {
    pub fields: [Vec<f64>; N_SPECIES],
    pub time: f64,
}

impl SpeciesState {
    pub fn uniform(mesh: &Mesh, values: [f64; N_SPECIES]) -> Self {
        let n = mesh.n_cells();
        Self { fields: values.map(|v| vec![v; n]), time: 0.0 }
    }

    pub fn field(&self, s: Species) -> &[f64] {
        &self.fields[s as usize]
    }

    /// The eight values at one cell.
    pub fn at(&self, cell: usize) -> [f64; N_SPECIES] {
        std::array::from_fn(|s| self.fields[s][cell])
    }
}

/// Diagnostics of one species step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpeciesStepReport {
    /// Volume-weighted mass removed by clipping, per species.
    pub clipped_mass: [f64; N_SPECIES],
    /// Largest clipped mass relative to the species total.
    pub max_clipped_fraction: f64,
    pub courant: f64,
}

/// Advances all species by `dt` using the fluxes and surface heights of the
/// flow step that ends at `flow.time`.
pub fn step_species(
    mesh: &Mesh,
    state: &SpeciesState,
    flow: &FlowState,
    params: &BioParams,
    forcings: &Forcings,
    opts: &TransportOptions,
    dt: f64,
) -> Result<(SpeciesState, SpeciesStepReport), BioError> {
    let nz = mesh.n_sigma;
    let nt = mesh.n_transverse;
    let np = mesh.n_plan();
    let n = mesh.n_cells();
    let fl = &flow.fluxes;
    let eta0 = &fl.eta_start;
    let eta1 = &flow.surface_height;
    let vol0: Vec<f64> = (0..np).map(|p| mesh.plan_cell_areas[p] * eta0[p] / nz as f64).collect();
    let vol1: Vec<f64> = (0..np).map(|p| mesh.plan_cell_areas[p] * eta1[p] / nz as f64).collect();

    // conductance per unit diffusivity for horizontal faces, on the old geometry
    let mut g_stream = vec![0.0; np];
    let mut g_trans = vec![0.0; np];
    for p in 0..np {
        let q = mesh.next_streamwise(p);
        let area = mesh.streamwise_faces[p].length * 0.5 * (eta0[p] + eta0[q]) / nz as f64;
        g_stream[p] = area / mesh.streamwise_faces[p].distance;
        if p % nt + 1 < nt {
            let area = mesh.transverse_faces[p].length * 0.5 * (eta0[p] + eta0[p + 1]) / nz as f64;
            g_trans[p] = area / mesh.transverse_faces[p].distance;
        }
    }

    let diffusivities = params.diffusivities();
    let max_diff = diffusivities.iter().cloned().fold(0.0, f64::max);
    let mut out_coef = vec![0.0; n];
    for p in 0..np {
        let q = mesh.next_streamwise(p);
        let wall = p % nt + 1 == nt;
        for k in 0..nz {
            let a = p * nz + k;
            let f = fl.streamwise[a];
            out_coef[a] += f.max(0.0) + max_diff * g_stream[p];
            out_coef[q * nz + k] += (-f).max(0.0) + max_diff * g_stream[p];
            if !wall {
                let f = fl.transverse[a];
                out_coef[a] += f.max(0.0) + max_diff * g_trans[p];
                out_coef[a + nz] += (-f).max(0.0) + max_diff * g_trans[p];
            }
        }
    }
    let courant = out_coef
        .iter()
        .enumerate()
        .map(|(c, s)| dt * s / vol0[c / nz])
        .fold(0.0, f64::max);
    if courant > 1.0 {
        return Err(BioError::Cfl { courant, suggested_dt: 0.9 * dt / courant });
    }

    let mut next = state.clone();
    next.time = state.time + dt;
    let mut report = SpeciesStepReport { courant, ..Default::default() };
    let (mut sub, mut diag, mut sup) = (vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]);
    let (mut rhs_col, mut scratch) = (vec![0.0; nz], vec![0.0; nz]);

    for (s, diffusivity) in diffusivities.iter().enumerate() {
        let c = &state.fields[s];
        let mut rhs: Vec<f64> = (0..n).map(|cell| vol0[cell / nz] * c[cell]).collect();
        for p in 0..np {
            let q = mesh.next_streamwise(p);
            let wall = p % nt + 1 == nt;
            for k in 0..nz {
                let a = p * nz + k;
                let b = q * nz + k;
                let f = fl.streamwise[a];
                let flux = f * if f > 0.0 { c[a] } else { c[b] } + diffusivity * g_stream[p] * (c[a] - c[b]);
                rhs[a] -= dt * flux;
                rhs[b] += dt * flux;
                if !wall {
                    let f = fl.transverse[a];
                    let b = a + nz;
                    let flux = f * if f > 0.0 { c[a] } else { c[b] } + diffusivity * g_trans[p] * (c[a] - c[b]);
                    rhs[a] -= dt * flux;
                    rhs[b] += dt * flux;
                }
            }
        }
        let out = &mut next.fields[s];
        for p in 0..np {
            let base = p * (nz + 1);
            let h1 = eta1[p] / nz as f64;
            let cond = diffusivity * mesh.plan_cell_areas[p] / h1;
            for k in 0..nz {
                let f_lo = if k > 0 { fl.vertical_relative[base + k] } else { 0.0 };
                let f_hi = if k + 1 < nz { fl.vertical_relative[base + k + 1] } else { 0.0 };
                let d_lo = if k > 0 { cond } else { 0.0 };
                let d_hi = if k + 1 < nz { cond } else { 0.0 };
                diag[k] = vol1[p] + dt * (f_hi.max(0.0) + (-f_lo).max(0.0) + d_lo + d_hi);
                sub[k] = -dt * (f_lo.max(0.0) + d_lo);
                sup[k] = -dt * ((-f_hi).max(0.0) + d_hi);
                rhs_col[k] = rhs[p * nz + k];
            }
            solve_tridiagonal(&sub, &diag, &sup, &mut rhs_col, &mut scratch);
            out[p * nz..(p + 1) * nz].copy_from_slice(&rhs_col);
        }
    }

    // reactions
    let substeps = opts.reaction_substeps.max(1);
    let h = dt / substeps as f64;
    for p in 0..np {
        for k in 0..nz {
            let cell = p * nz + k;
            let z = mesh.layer_center_height(k, eta1[p]);
            let depth = match opts.light_depth {
                DepthReference::BelowSurface => eta1[p] - z,
                DepthReference::AboveBottom => z,
            };
            let mut local = next.at(cell);
            for m in 0..substeps {
                let rate = reaction_rhs(params, forcings, &local, depth, state.time + m as f64 * h);
                for (v, r) in local.iter_mut().zip(rate) {
                    *v += h * r;
                }
            }
            for (s, v) in local.into_iter().enumerate() {
                next.fields[s][cell] = v;
            }
        }
    }

    // clipping and sanity checks
    for s in 0..N_SPECIES {
        let mut clipped = 0.0;
        let mut total = 0.0;
        for (cell, v) in next.fields[s].iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(BioError::NonFinite { species: SPECIES_NAMES[s], cell });
            }
            if *v > opts.ceiling {
                return Err(BioError::Ceiling { species: SPECIES_NAMES[s], cell, ceiling: opts.ceiling });
            }
            let vol = vol1[cell / nz];
            if *v < 0.0 {
                clipped -= *v * vol;
                *v = 0.0;
            }
            total += *v * vol;
        }
        report.clipped_mass[s] = clipped;
        if clipped > 0.0 {
            let fraction = if total > 0.0 { clipped / total } else { f64::INFINITY };
            report.max_clipped_fraction = report.max_clipped_fraction.max(fraction);
            if fraction > opts.clip_tolerance {
                return Err(BioError::Negativity {
                    species: SPECIES_NAMES[s],
                    fraction,
                    tolerance: opts.clip_tolerance,
                });
            }
        }
    }
    Ok((next, report))
}
