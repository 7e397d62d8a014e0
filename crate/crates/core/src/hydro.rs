//! Free-surface incompressible flow on the σ-layered raceway mesh.
//!
//! One step advances the collocated cell velocities with explicit horizontal
//! upwind advection and viscous diffusion, implicit vertical advection and
//! diffusion per column, and the paddlewheel body force. A pressure
//! projection then makes the face fluxes divergence-free. The free surface
//! enters the projection as a Robin condition, so the surface height moves
//! implicitly with the pressure and gravity waves do not limit the time step.
//!
//! The stored pressure is the reduced kinematic pressure `p/ρ + g x3`. At the
//! free surface it equals `g η`.

use crate::error::{ConfigError, HydroError};
use crate::geometry::{Mesh, RacewayGeometry};

/// Rotating paddlewheel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaddlewheelSpec {
    /// Force magnitude `F`.
    pub force_magnitude: f64,
    /// Paddle length `ρ`.
    pub paddle_length: f64,
    /// Rotation axis `(x1⁰, x2⁰, x3⁰)`.
    pub axis: [f64; 3],
}

impl PaddlewheelSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.force_magnitude.is_finite() && self.force_magnitude >= 0.0) {
            return Err(ConfigError::invalid(format!(
                "paddle: force magnitude F must be finite and nonnegative, got {}",
                self.force_magnitude
            )));
        }
        if !(self.paddle_length > 0.0 && self.paddle_length.is_finite()) {
            return Err(ConfigError::invalid(format!(
                "paddle: paddle length rho must be positive, got {}",
                self.paddle_length
            )));
        }
        if self.axis.iter().any(|a| !a.is_finite()) {
            return Err(ConfigError::invalid("paddle: axis coordinates must be finite"));
        }
        if self.axis[2] < self.paddle_length {
            return Err(ConfigError::invalid(format!(
                "paddle: axis height x3_0 ({}) must be at least the paddle length rho ({})",
                self.axis[2], self.paddle_length
            )));
        }
        Ok(())
    }

    /// Upper bound of the force norm, `F ω² ρ²`.
    pub fn force_bound(&self, omega: f64) -> f64 {
        self.force_magnitude * omega * omega * self.paddle_length * self.paddle_length
    }

    /// Squared in-plane distance to the rotation axis.
    #[inline]
    pub fn axis_distance_sq(&self, x: [f64; 3]) -> f64 {
        let d1 = x[0] - self.axis[0];
        let d3 = x[2] - self.axis[2];
        d1 * d1 + d3 * d3
    }

    /// Membership in the infinite horizontal cylinder segment
    /// `r ≤ x2 ≤ R`, `(x1 - x1⁰)² + (x3 - x3⁰)² ≤ ρ²`.
    #[inline]
    pub fn in_cylinder(&self, geom: &RacewayGeometry, x: [f64; 3]) -> bool {
        x[1] >= geom.inner_radius
            && x[1] <= geom.outer_radius
            && self.axis_distance_sq(x) <= self.paddle_length * self.paddle_length
    }
}

/// Body force of the paddlewheel at point `x` and time `t`.
pub fn paddle_force(
    paddle: &PaddlewheelSpec,
    omega: f64,
    x: [f64; 3],
    t: f64,
    in_region: bool,
) -> [f64; 3] {
    if !in_region {
        return [0.0; 3];
    }
    let scale = paddle.force_magnitude * omega * omega * paddle.axis_distance_sq(x);
    let phase = omega * t;
    [scale * phase.cos(), 0.0, scale * phase.sin()]
}

/// A cell of the paddle region with the fraction of its volume inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionCell {
    pub cell: usize,
    pub fraction: f64,
}

/// Cells of the mesh intersecting the paddle cylinder below the surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PaddleRegion {
    pub cells: Vec<RegionCell>,
}

impl PaddleRegion {
    pub fn contains(&self, cell: usize) -> bool {
        self.cells.iter().any(|c| c.cell == cell)
    }

    /// Volume of the cylinder segment captured by the region quadrature.
    pub fn volume(&self, mesh: &Mesh, eta: &[f64]) -> f64 {
        self.cells
            .iter()
            .map(|c| {
                let p = c.cell / mesh.n_sigma;
                c.fraction * mesh.plan_cell_areas[p] * eta[p] / mesh.n_sigma as f64
            })
            .sum()
    }
}

/// Paddle forcing bound to a mesh.
///
/// Each cell is sampled on a `subsamples³` grid of points in its local
/// `(s, n, σ)` coordinates; a cell belongs to the region when any sample lies
/// in the cylinder, and its force is the sample average. With one sample the
/// rule reduces to testing the cell centre.
#[derive(Debug, Clone)]
pub struct PaddleForcing {
    pub paddle: PaddlewheelSpec,
    subsamples: usize,
    /// Candidate plan cells with their plan sample points.
    columns: Vec<(usize, Vec<[f64; 2]>)>,
}

impl PaddleForcing {
    pub fn new(paddle: PaddlewheelSpec, mesh: &Mesh, subsamples: usize) -> Self {
        let s = subsamples.max(1);
        let geom = &mesh.geometry;
        let mut columns = Vec::new();
        for i in 0..mesh.n_streamwise {
            for j in 0..mesh.n_transverse {
                let mut pts = Vec::with_capacity(s * s);
                for a in 0..s {
                    for b in 0..s {
                        let fs = (a as f64 + 0.5) / s as f64;
                        let fn_ = (b as f64 + 0.5) / s as f64;
                        pts.push(mesh.plan_point(i, j, fs, fn_));
                    }
                }
                let candidate = pts.iter().any(|x| {
                    x[1] >= geom.inner_radius
                        && x[1] <= geom.outer_radius
                        && (x[0] - paddle.axis[0]).abs() <= paddle.paddle_length
                });
                if candidate {
                    columns.push((mesh.plan_index(i, j), pts));
                }
            }
        }
        Self { paddle, subsamples: s, columns }
    }

    pub fn subsamples(&self) -> usize {
        self.subsamples
    }

    fn for_each_sample<F: FnMut(usize, [f64; 3], bool)>(&self, mesh: &Mesh, eta: &[f64], mut f: F) {
        let s = self.subsamples;
        let nz = mesh.n_sigma;
        for (p, pts) in &self.columns {
            let h = eta[*p] / nz as f64;
            for k in 0..nz {
                let cell = p * nz + k;
                for c in 0..s {
                    let x3 = (k as f64 + (c as f64 + 0.5) / s as f64) * h;
                    for xy in pts {
                        let x = [xy[0], xy[1], x3];
                        let inside = x3 < eta[*p] && self.paddle.in_cylinder(&mesh.geometry, x);
                        f(cell, x, inside);
                    }
                }
            }
        }
    }

    /// The paddle region for the surface height field `eta`.
    pub fn region(&self, mesh: &Mesh, eta: &[f64]) -> PaddleRegion {
        let per_cell = (self.subsamples * self.subsamples * self.subsamples) as f64;
        let mut cells: Vec<RegionCell> = Vec::new();
        self.for_each_sample(mesh, eta, |cell, _, inside| {
            if let Some(last) = cells.last_mut().filter(|c| c.cell == cell) {
                if inside {
                    last.fraction += 1.0;
                }
            } else {
                cells.push(RegionCell { cell, fraction: if inside { 1.0 } else { 0.0 } });
            }
        });
        cells.retain(|c| c.fraction > 0.0);
        for c in &mut cells {
            c.fraction /= per_cell;
        }
        PaddleRegion { cells }
    }

    /// Cell-averaged force on every region cell at time `t`.
    pub fn cell_forces(&self, mesh: &Mesh, eta: &[f64], omega: f64, t: f64) -> Vec<(usize, [f64; 3])> {
        let per_cell = (self.subsamples * self.subsamples * self.subsamples) as f64;
        let mut out: Vec<(usize, [f64; 3], bool)> = Vec::new();
        self.for_each_sample(mesh, eta, |cell, x, inside| {
            let f = paddle_force(&self.paddle, omega, x, t, inside);
            match out.last_mut().filter(|e| e.0 == cell) {
                Some(e) => {
                    e.1[0] += f[0];
                    e.1[2] += f[2];
                    e.2 |= inside;
                }
                None => out.push((cell, f, inside)),
            }
        });
        out.into_iter()
            .filter(|e| e.2)
            .map(|(cell, f, _)| (cell, [f[0] / per_cell, 0.0, f[2] / per_cell]))
            .collect()
    }
}

/// Region of influence of the paddles on `mesh` for surface heights `eta`.
pub fn paddle_region(
    paddle: &PaddlewheelSpec,
    mesh: &Mesh,
    eta: &[f64],
    subsamples: usize,
) -> PaddleRegion {
    PaddleForcing::new(*paddle, mesh, subsamples).region(mesh, eta)
}

/// Numerical parameters of the flow solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroConfig {
    /// Effective kinematic viscosity `μ` (m²/s).
    pub viscosity: f64,
    /// Time step (s).
    pub dt: f64,
    /// Gravitational acceleration carried by the hydrostatic pressure (m/s²).
    pub gravity: f64,
    /// Bound on `Δt |Σ face fluxes| / V` in every cell after projection.
    pub div_tol: f64,
    /// Relative residual tolerance of the pressure solve.
    pub pressure_solver_tol: f64,
    pub pressure_max_iters: usize,
}

impl Default for HydroConfig {
    fn default() -> Self {
        Self {
            viscosity: 1e-3,
            dt: 0.5,
            gravity: 9.81,
            div_tol: 1e-9,
            pressure_solver_tol: 1e-10,
            pressure_max_iters: 5000,
        }
    }
}

impl HydroConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("viscosity mu", self.viscosity),
            ("time step dt", self.dt),
            ("gravity", self.gravity),
            ("divergence tolerance", self.div_tol),
            ("pressure solver tolerance", self.pressure_solver_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(format!(
                    "hydro: {name} must be positive, got {v}"
                )));
            }
        }
        if self.pressure_max_iters == 0 {
            return Err(ConfigError::invalid("hydro: pressure_max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Volumetric face fluxes (m³/s) produced by the last projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxes {
    /// Through the face between cells `(i, j, k)` and `(i + 1, j, k)`,
    /// positive along the loop; indexed by the first cell.
    pub streamwise: Vec<f64>,
    /// Through the face between `(i, j, k)` and `(i, j + 1, k)`, positive
    /// towards the outer wall; zero at the outer wall.
    pub transverse: Vec<f64>,
    /// Absolute upward flux through σ-face `k` of column `p`, stored at
    /// `p * (n_sigma + 1) + k`. Face 0 is the bottom, face `n_sigma` the
    /// free surface.
    pub vertical: Vec<f64>,
    /// Same as `vertical`, relative to the moving σ-faces.
    pub vertical_relative: Vec<f64>,
    /// Surface height at the start of the step the fluxes belong to.
    pub eta_start: Vec<f64>,
}

impl FaceFluxes {
    pub fn zero(mesh: &Mesh, eta: &[f64]) -> Self {
        let n = mesh.n_cells();
        let nv = mesh.n_plan() * (mesh.n_sigma + 1);
        Self {
            streamwise: vec![0.0; n],
            transverse: vec![0.0; n],
            vertical: vec![0.0; nv],
            vertical_relative: vec![0.0; nv],
            eta_start: eta.to_vec(),
        }
    }
}

/// Hydrodynamic state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    /// Cartesian velocity per cell (m/s).
    pub velocity: Vec<[f64; 3]>,
    /// Reduced kinematic pressure `p/ρ + g x3` per cell (m²/s²).
    pub pressure: Vec<f64>,
    /// Free-surface height `η` per plan cell (m).
    pub surface_height: Vec<f64>,
    /// Vertical velocity at the free surface per plan cell (m/s), consistent
    /// with the projected surface flux.
    pub surface_vertical_velocity: Vec<f64>,
    pub fluxes: FaceFluxes,
    pub time: f64,
}

impl FlowState {
    /// Water at rest with a flat surface at height `height`.
    pub fn at_rest(mesh: &Mesh, height: f64, gravity: f64) -> Self {
        let eta = vec![height; mesh.n_plan()];
        Self {
            velocity: vec![[0.0; 3]; mesh.n_cells()],
            pressure: vec![gravity * height; mesh.n_cells()],
            surface_vertical_velocity: vec![0.0; mesh.n_plan()],
            fluxes: FaceFluxes::zero(mesh, &eta),
            surface_height: eta,
            time: 0.0,
        }
    }

    /// Cell volume for the current surface height.
    #[inline]
    pub fn cell_volume(&self, mesh: &Mesh, cell: usize) -> f64 {
        let p = cell / mesh.n_sigma;
        mesh.plan_cell_areas[p] * self.surface_height[p] / mesh.n_sigma as f64
    }
}

/// Total water volume `Σ η · area`.
pub fn water_volume(mesh: &Mesh, eta: &[f64]) -> f64 {
    mesh.plan_cell_areas.iter().zip(eta).map(|(a, e)| a * e).sum()
}

/// Domain kinetic energy `½ Σ ‖v‖² V`.
pub fn kinetic_energy(mesh: &Mesh, flow: &FlowState) -> f64 {
    flow.velocity
        .iter()
        .enumerate()
        .map(|(c, v)| 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) * flow.cell_volume(mesh, c))
        .sum()
}

/// Largest `Δt |Σ outward face fluxes| / V` over all cells, evaluated on the
/// geometry at the start of the step.
pub fn max_divergence(mesh: &Mesh, fluxes: &FaceFluxes, dt: f64) -> f64 {
    let nz = mesh.n_sigma;
    let nt = mesh.n_transverse;
    let mut net = vec![0.0; mesh.n_cells()];
    for p in 0..mesh.n_plan() {
        let q = mesh.next_streamwise(p);
        let j = p % nt;
        for k in 0..nz {
            let c = p * nz + k;
            let fs = fluxes.streamwise[c];
            net[c] += fs;
            net[q * nz + k] -= fs;
            if j + 1 < nt {
                let ft = fluxes.transverse[c];
                net[c] += ft;
                net[c + nz] -= ft;
            }
            let base = p * (nz + 1);
            net[c] += fluxes.vertical[base + k + 1] - fluxes.vertical[base + k];
        }
    }
    net.iter()
        .enumerate()
        .map(|(c, d)| {
            let p = c / nz;
            let vol = mesh.plan_cell_areas[p] * fluxes.eta_start[p] / nz as f64;
            d.abs() * dt / vol
        })
        .fold(0.0, f64::max)
}

/// Plan-gradient of `eta` at plan cell `p` by centred differences,
/// periodic along the loop and one-sided at the walls.
pub fn surface_gradient(mesh: &Mesh, eta: &[f64], p: usize) -> [f64; 2] {
    let nt = mesh.n_transverse;
    let j = p % nt;
    let next = mesh.next_streamwise(p);
    let prev = mesh.prev_streamwise(p);
    let ds = mesh.streamwise_faces[p].distance + mesh.streamwise_faces[prev].distance;
    let d_s = (eta[next] - eta[prev]) / ds;
    let dn = mesh.geometry.channel_width / nt as f64;
    let d_n = if j == 0 {
        (eta[p + 1] - eta[p]) / dn
    } else if j + 1 == nt {
        (eta[p] - eta[p - 1]) / dn
    } else {
        (eta[p + 1] - eta[p - 1]) / (2.0 * dn)
    };
    let t = mesh.tangents[p];
    let o = mesh.outwards[p];
    [d_s * t[0] + d_n * o[0], d_s * t[1] + d_n * o[1]]
}

/// Kinematic surface update
/// `η ← η + Δt (v3 - v1 ∂η/∂x1 - v2 ∂η/∂x2)` evaluated at the surface.
///
/// Horizontal surface velocity is taken from the top layer and the vertical
/// one from `flow.surface_vertical_velocity`.
pub fn update_surface(
    mesh: &Mesh,
    eta: &[f64],
    flow: &FlowState,
    dt: f64,
) -> Result<Vec<f64>, HydroError> {
    let nz = mesh.n_sigma;
    let mut out = Vec::with_capacity(eta.len());
    for p in 0..mesh.n_plan() {
        let v = flow.velocity[p * nz + nz - 1];
        let w = flow.surface_vertical_velocity[p];
        let g = surface_gradient(mesh, eta, p);
        let e = eta[p] + dt * (w - v[0] * g[0] - v[1] * g[1]);
        if !(e > 0.0) {
            return Err(HydroError::DryCell {
                i: p / mesh.n_transverse,
                j: p % mesh.n_transverse,
                eta: e,
            });
        }
        out.push(e);
    }
    Ok(out)
}

/// Diagnostics of one flow step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowStepReport {
    pub max_divergence: f64,
    pub pressure_iterations: usize,
    pub courant: f64,
}

/// Solves a tridiagonal system in place with the Thomas algorithm.
/// `sub[0]` and `sup[n - 1]` are ignored.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    let mut beta = diag[0];
    rhs[0] /= beta;
    for k in 1..n {
        scratch[k] = sup[k - 1] / beta;
        beta = diag[k] - sub[k] * scratch[k];
        rhs[k] = (rhs[k] - sub[k] * rhs[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= scratch[k + 1] * rhs[k + 1];
    }
}

/// Per-step face geometry on the current surface heights.
struct StepGeometry {
    /// Layer thickness per plan cell.
    layer: Vec<f64>,
    /// Cell volume per plan cell (identical for every layer).
    volume: Vec<f64>,
    /// Area of each layer's streamwise face, per plan cell.
    stream_area: Vec<f64>,
    /// Area of each layer's transverse face, per plan cell (0 at walls).
    trans_area: Vec<f64>,
}

impl StepGeometry {
    fn new(mesh: &Mesh, eta: &[f64]) -> Self {
        let nz = mesh.n_sigma as f64;
        let nt = mesh.n_transverse;
        let layer: Vec<f64> = eta.iter().map(|e| e / nz).collect();
        let volume = layer.iter().zip(&mesh.plan_cell_areas).map(|(h, a)| h * a).collect();
        let mut stream_area = Vec::with_capacity(layer.len());
        let mut trans_area = Vec::with_capacity(layer.len());
        for p in 0..layer.len() {
            let q = mesh.next_streamwise(p);
            stream_area.push(mesh.streamwise_faces[p].length * 0.5 * (layer[p] + layer[q]));
            if p % nt + 1 < nt {
                trans_area.push(mesh.transverse_faces[p].length * 0.5 * (layer[p] + layer[p + 1]));
            } else {
                trans_area.push(0.0);
            }
        }
        Self { layer, volume, stream_area, trans_area }
    }
}

#[inline]
fn dot2(n: [f64; 2], v: [f64; 3]) -> f64 {
    n[0] * v[0] + n[1] * v[1]
}

/// Horizontal Courant number of the explicit advection-diffusion update:
/// `max Δt (Σ inflow fluxes + Σ diffusive conductances) / V`.
fn horizontal_courant(
    mesh: &Mesh,
    geo: &StepGeometry,
    stream: &[f64],
    trans: &[f64],
    diffusivity: f64,
    dt: f64,
) -> f64 {
    let nz = mesh.n_sigma;
    let nt = mesh.n_transverse;
    let mut coef = vec![0.0; mesh.n_cells()];
    for p in 0..mesh.n_plan() {
        let q = mesh.next_streamwise(p);
        let ds = diffusivity * geo.stream_area[p] / mesh.streamwise_faces[p].distance;
        let dtr = if p % nt + 1 < nt {
            diffusivity * geo.trans_area[p] / mesh.transverse_faces[p].distance
        } else {
            0.0
        };
        for k in 0..nz {
            let a = p * nz + k;
            let b = q * nz + k;
            let f = stream[a];
            coef[a] += ds + (-f).max(0.0);
            coef[b] += ds + f.max(0.0);
            if p % nt + 1 < nt {
                let f = trans[a];
                coef[a] += dtr + (-f).max(0.0);
                coef[a + nz] += dtr + f.max(0.0);
            }
        }
    }
    coef.iter()
        .enumerate()
        .map(|(c, s)| dt * s / geo.volume[c / nz])
        .fold(0.0, f64::max)
}

/// Coefficients of the pressure system `A P = b`.
struct PressureSystem {
    stream: Vec<f64>,
    trans: Vec<f64>,
    /// Coupling between layer `k - 1` and `k`, stored at layer `k`.
    vert: Vec<f64>,
    robin: Vec<f64>,
    diag: Vec<f64>,
    nz: usize,
}

impl PressureSystem {
    /// `y = A x`, written in difference form so that a uniform `x` only
    /// sees the Robin terms.
    fn apply(&self, mesh: &Mesh, x: &[f64], y: &mut [f64]) {
        let nz = self.nz;
        let nt = mesh.n_transverse;
        for (c, yc) in y.iter_mut().enumerate() {
            *yc = self.robin[c] * x[c];
        }
        for p in 0..mesh.n_plan() {
            let q = mesh.next_streamwise(p);
            let wall = p % nt + 1 == nt;
            for k in 0..nz {
                let a = p * nz + k;
                let b = q * nz + k;
                let d = self.stream[a] * (x[a] - x[b]);
                y[a] += d;
                y[b] -= d;
                if !wall {
                    let d = self.trans[a] * (x[a] - x[a + nz]);
                    y[a] += d;
                    y[a + nz] -= d;
                }
                if k > 0 {
                    let d = self.vert[a] * (x[a] - x[a - 1]);
                    y[a] += d;
                    y[a - 1] -= d;
                }
            }
        }
    }

    /// Column block-Jacobi preconditioner: exact solve of the vertical
    /// couplings in each column.
    fn precondition(&self, r: &[f64], z: &mut [f64], sub: &mut [f64], sup: &mut [f64], scratch: &mut [f64]) {
        let nz = self.nz;
        for (col, (rc, zc)) in r.chunks(nz).zip(z.chunks_mut(nz)).enumerate() {
            let base = col * nz;
            for k in 0..nz {
                sub[k] = if k > 0 { -self.vert[base + k] } else { 0.0 };
                sup[k] = if k + 1 < nz { -self.vert[base + k + 1] } else { 0.0 };
            }
            zc.copy_from_slice(rc);
            solve_tridiagonal(sub, &self.diag[base..base + nz], sup, zc, scratch);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients from the initial guess in `x`.
/// Convergence requires both the relative residual and the scaled per-cell
/// divergence to be within tolerance.
fn solve_pressure(
    mesh: &Mesh,
    sys: &PressureSystem,
    b: &[f64],
    x: &mut [f64],
    div_scale: &[f64],
    cfg: &HydroConfig,
) -> Result<usize, HydroError> {
    let n = b.len();
    let nz = sys.nz;
    let b_norm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let div_target = 0.5 * cfg.div_tol;
    let measure = |r: &[f64]| {
        let rel = dot(r, r).sqrt() / b_norm;
        let div = r.iter().zip(div_scale).map(|(ri, s)| ri.abs() * s).fold(0.0, f64::max);
        (rel, div)
    };
    let converged = |(rel, div): (f64, f64)| rel <= cfg.pressure_solver_tol && div <= div_target;

    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    sys.apply(mesh, x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    if converged(measure(&r)) {
        return Ok(0);
    }
    let (mut sub, mut sup, mut scratch) = (vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]);
    let mut z = vec![0.0; n];
    sys.precondition(&r, &mut z, &mut sub, &mut sup, &mut scratch);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut last = measure(&r);
    for it in 1..=cfg.pressure_max_iters {
        sys.apply(mesh, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        last = measure(&r);
        if converged(last) {
            // confirm with the true residual; restart the recursion otherwise
            sys.apply(mesh, x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            last = measure(&r);
            if converged(last) {
                return Ok(it);
            }
            sys.precondition(&r, &mut z, &mut sub, &mut sup, &mut scratch);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        sys.precondition(&r, &mut z, &mut sub, &mut sup, &mut scratch);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(HydroError::PressureSolver {
        iterations: cfg.pressure_max_iters,
        residual: last.0,
        divergence: last.1,
    })
}

/// Advances the flow by one time step `cfg.dt`.
pub fn step_flow(
    mesh: &Mesh,
    state: &FlowState,
    cfg: &HydroConfig,
    forcing: &PaddleForcing,
    omega: f64,
) -> Result<(FlowState, FlowStepReport), HydroError> {
    let nz = mesh.n_sigma;
    let nt = mesh.n_transverse;
    let np = mesh.n_plan();
    let n = mesh.n_cells();
    let dt = cfg.dt;
    let mu = cfg.viscosity;
    let g = cfg.gravity;
    let eta = &state.surface_height;
    let geo = StepGeometry::new(mesh, eta);

    let courant = horizontal_courant(
        mesh,
        &geo,
        &state.fluxes.streamwise,
        &state.fluxes.transverse,
        mu,
        dt,
    );
    if courant > 1.0 {
        return Err(HydroError::Cfl { courant, suggested_dt: 0.9 * dt / courant });
    }

    // explicit horizontal advection + diffusion
    let v = &state.velocity;
    let mut acc = vec![[0.0f64; 3]; n];
    let add = |acc: &mut [[f64; 3]], at: usize, w: f64, from: usize| {
        for d in 0..3 {
            acc[at][d] += w * (v[from][d] - v[at][d]);
        }
    };
    for p in 0..np {
        let q = mesh.next_streamwise(p);
        let d_s = mu * geo.stream_area[p] / mesh.streamwise_faces[p].distance;
        let wall = p % nt + 1 == nt;
        let d_t = if wall { 0.0 } else { mu * geo.trans_area[p] / mesh.transverse_faces[p].distance };
        for k in 0..nz {
            let a = p * nz + k;
            let b = q * nz + k;
            let f = state.fluxes.streamwise[a];
            add(&mut acc, a, d_s + (-f).max(0.0), b);
            add(&mut acc, b, d_s + f.max(0.0), a);
            if !wall {
                let f = state.fluxes.transverse[a];
                add(&mut acc, a, d_t + (-f).max(0.0), a + nz);
                add(&mut acc, a + nz, d_t + f.max(0.0), a);
            }
        }
    }
    let mut vstar: Vec<[f64; 3]> = (0..n)
        .map(|c| {
            let s = dt / geo.volume[c / nz];
            [v[c][0] + s * acc[c][0], v[c][1] + s * acc[c][1], v[c][2] + s * acc[c][2]]
        })
        .collect();
    for (cell, f) in forcing.cell_forces(mesh, eta, omega, state.time) {
        for d in 0..3 {
            vstar[cell][d] += dt * f[d];
        }
    }

    // implicit vertical advection + diffusion, column by column
    {
        let (mut sub, mut diag, mut sup) = (vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]);
        let (mut rhs, mut scratch) = (vec![0.0; nz], vec![0.0; nz]);
        for p in 0..np {
            let vol = geo.volume[p];
            let cond = mu * mesh.plan_cell_areas[p] / geo.layer[p];
            let base = p * (nz + 1);
            for k in 0..nz {
                let lo = if k > 0 {
                    state.fluxes.vertical_relative[base + k].max(0.0) + cond
                } else {
                    0.0
                };
                let hi = if k + 1 < nz {
                    (-state.fluxes.vertical_relative[base + k + 1]).max(0.0) + cond
                } else {
                    0.0
                };
                sub[k] = -dt * lo;
                sup[k] = -dt * hi;
                diag[k] = vol + dt * (lo + hi);
            }
            for d in 0..3 {
                for k in 0..nz {
                    rhs[k] = vol * vstar[p * nz + k][d];
                }
                solve_tridiagonal(&sub, &diag, &sup, &mut rhs, &mut scratch);
                for k in 0..nz {
                    vstar[p * nz + k][d] = rhs[k];
                }
            }
        }
    }

    // projection
    let mut sys = PressureSystem {
        stream: vec![0.0; n],
        trans: vec![0.0; n],
        vert: vec![0.0; n],
        robin: vec![0.0; n],
        diag: vec![0.0; n],
        nz,
    };
    let mut qs_star = vec![0.0; n];
    let mut qt_star = vec![0.0; n];
    let mut qv_star = vec![0.0; np * (nz + 1)];
    let mut b = vec![0.0; n];
    let mut alpha_top = vec![0.0; np];
    for p in 0..np {
        let q = mesh.next_streamwise(p);
        let wall = p % nt + 1 == nt;
        let sf = mesh.streamwise_faces[p];
        let tf = mesh.transverse_faces[p];
        let area = mesh.plan_cell_areas[p];
        let h = geo.layer[p];
        let half = 0.5 * h;
        let alpha = 1.0 / (1.0 + g * dt * dt / half);
        alpha_top[p] = alpha;
        for k in 0..nz {
            let a = p * nz + k;
            let bb = q * nz + k;
            let t = dt * geo.stream_area[p] / sf.distance;
            sys.stream[a] = t;
            sys.diag[a] += t;
            sys.diag[bb] += t;
            let flux = geo.stream_area[p] * 0.5 * (dot2(sf.normal, vstar[a]) + dot2(sf.normal, vstar[bb]));
            qs_star[a] = flux;
            b[a] -= flux;
            b[bb] += flux;
            if !wall {
                let t = dt * geo.trans_area[p] / tf.distance;
                sys.trans[a] = t;
                sys.diag[a] += t;
                sys.diag[a + nz] += t;
                let flux = geo.trans_area[p]
                    * 0.5
                    * (dot2(tf.normal, vstar[a]) + dot2(tf.normal, vstar[a + nz]));
                qt_star[a] = flux;
                b[a] -= flux;
                b[a + nz] += flux;
            }
            if k > 0 {
                let t = dt * area / h;
                sys.vert[a] = t;
                sys.diag[a] += t;
                sys.diag[a - 1] += t;
                let flux = area * 0.5 * (vstar[a - 1][2] + vstar[a][2]);
                qv_star[p * (nz + 1) + k] = flux;
                b[a - 1] -= flux;
                b[a] += flux;
            }
        }
        let top = p * nz + nz - 1;
        let robin = alpha * dt * area / half;
        sys.robin[top] = robin;
        sys.diag[top] += robin;
        let flux = area * vstar[top][2];
        qv_star[p * (nz + 1) + nz] = flux;
        b[top] += robin * (g * eta[p]) - alpha * flux;
    }
    let div_scale: Vec<f64> = (0..n).map(|c| dt / geo.volume[c / nz]).collect();
    let mut pressure = state.pressure.clone();
    let iterations = solve_pressure(mesh, &sys, &b, &mut pressure, &div_scale, cfg)?;

    // corrected fluxes
    let mut fluxes = FaceFluxes::zero(mesh, eta);
    let mut eta_new_direct = vec![0.0; np];
    for p in 0..np {
        let q = mesh.next_streamwise(p);
        let wall = p % nt + 1 == nt;
        let base = p * (nz + 1);
        for k in 0..nz {
            let a = p * nz + k;
            let bb = q * nz + k;
            fluxes.streamwise[a] = qs_star[a] - sys.stream[a] * (pressure[bb] - pressure[a]);
            if !wall {
                fluxes.transverse[a] = qt_star[a] - sys.trans[a] * (pressure[a + nz] - pressure[a]);
            }
            if k > 0 {
                fluxes.vertical[base + k] = qv_star[base + k] - sys.vert[a] * (pressure[a] - pressure[a - 1]);
            }
        }
        let top = p * nz + nz - 1;
        let q_top = alpha_top[p] * qv_star[base + nz] - sys.robin[top] * (g * eta[p] - pressure[top]);
        fluxes.vertical[base + nz] = q_top;
        eta_new_direct[p] = eta[p] + dt * q_top / mesh.plan_cell_areas[p];
    }
    let max_div = max_divergence(mesh, &fluxes, dt);

    // cell velocity correction from face pressure differences
    let mut velocity = vstar;
    let mut grad = vec![[0.0f64; 3]; n];
    for p in 0..np {
        let q = mesh.next_streamwise(p);
        let wall = p % nt + 1 == nt;
        let sf = mesh.streamwise_faces[p].normal;
        let tf = mesh.transverse_faces[p].normal;
        let area = mesh.plan_cell_areas[p];
        for k in 0..nz {
            let a = p * nz + k;
            let bb = q * nz + k;
            let half_diff = 0.5 * (pressure[bb] - pressure[a]) * geo.stream_area[p];
            grad[a][0] += half_diff * sf[0];
            grad[a][1] += half_diff * sf[1];
            grad[bb][0] += half_diff * sf[0];
            grad[bb][1] += half_diff * sf[1];
            if !wall {
                let half_diff = 0.5 * (pressure[a + nz] - pressure[a]) * geo.trans_area[p];
                grad[a][0] += half_diff * tf[0];
                grad[a][1] += half_diff * tf[1];
                grad[a + nz][0] += half_diff * tf[0];
                grad[a + nz][1] += half_diff * tf[1];
            }
            if k > 0 {
                let half_diff = 0.5 * (pressure[a] - pressure[a - 1]) * area;
                grad[a][2] += half_diff;
                grad[a - 1][2] += half_diff;
            }
        }
        let top = p * nz + nz - 1;
        grad[top][2] += (g * eta_new_direct[p] - pressure[top]) * area;
    }
    for c in 0..n {
        let s = dt / geo.volume[c / nz];
        for d in 0..3 {
            velocity[c][d] -= s * grad[c][d];
        }
        if !velocity[c].iter().all(|x| x.is_finite()) {
            return Err(HydroError::NonFinite { cell: c });
        }
    }

    // surface vertical velocity consistent with the projected surface flux
    let mut surface_w = vec![0.0; np];
    for p in 0..np {
        let u = velocity[p * nz + nz - 1];
        let gr = surface_gradient(mesh, eta, p);
        surface_w[p] = fluxes.vertical[p * (nz + 1) + nz] / mesh.plan_cell_areas[p]
            + u[0] * gr[0]
            + u[1] * gr[1];
    }

    let mut next = FlowState {
        velocity,
        pressure,
        surface_height: eta.clone(),
        surface_vertical_velocity: surface_w,
        fluxes,
        time: state.time + dt,
    };
    let eta_new = update_surface(mesh, eta, &next, dt)?;

    for p in 0..np {
        let base = p * (nz + 1);
        let rate = (eta_new[p] - eta[p]) / dt * mesh.plan_cell_areas[p];
        for k in 1..nz {
            next.fluxes.vertical_relative[base + k] =
                next.fluxes.vertical[base + k] - rate * k as f64 / nz as f64;
        }
    }
    next.surface_height = eta_new;

    Ok((next, FlowStepReport { max_divergence: max_div, pressure_iterations: iterations, courant }))
}
