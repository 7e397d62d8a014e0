//! Raceway ground plan and the loop-following structured mesh.
//!
//! The oval is placed with its left straight on `x1 ∈ [0, L]`, `x2 ∈ [r, R]`,
//! the right straight mirrored onto `x2 ∈ [-R, -r]`, and the two bend centres
//! at `(0, 0)` and `(L, 0)`.
//!
//! Cells are indexed by `(i, j, k)`: `i` runs around the loop (periodic),
//! `j` across the channel from the inner wall (`n = r`) to the outer wall
//! (`n = R`), `k` over the σ-layers from the bottom. Flat storage uses
//! `(i * n_transverse + j) * n_sigma + k`.

use std::f64::consts::PI;
use std::fmt;

use crate::error::ConfigError;

/// Plan-view dimensions of the oval raceway.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RacewayGeometry {
    pub straight_length: f64,
    pub channel_width: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl RacewayGeometry {
    /// Builds a geometry from `L`, `W` and `r`; `R` follows as `r + W`.
    pub fn new(straight_length: f64, channel_width: f64, inner_radius: f64) -> Self {
        Self {
            straight_length,
            channel_width,
            inner_radius,
            outer_radius: inner_radius + channel_width,
        }
    }

    /// Checks the plan invariants. `L = 0` and `r = 0` are accepted so that
    /// the degenerate disk can be expressed.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("straight length L", self.straight_length),
            ("channel width W", self.channel_width),
            ("inner radius r", self.inner_radius),
            ("outer radius R", self.outer_radius),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(ConfigError::invalid(format!(
                    "geometry: {name} must be finite and nonnegative, got {value}"
                )));
            }
        }
        if self.channel_width <= 0.0 {
            return Err(ConfigError::invalid(
                "geometry: channel width W must be strictly positive",
            ));
        }
        let expected = self.inner_radius + self.channel_width;
        if (self.outer_radius - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(ConfigError::invalid(format!(
                "geometry: outer radius R ({}) must equal r + W ({expected})",
                self.outer_radius
            )));
        }
        Ok(())
    }

    /// Radius of the channel centreline in the bends.
    pub fn centerline_radius(&self) -> f64 {
        self.inner_radius + 0.5 * self.channel_width
    }

    /// Length of the closed centreline: two straights plus two half circles.
    pub fn centerline_length(&self) -> f64 {
        2.0 * self.straight_length + 2.0 * PI * self.centerline_radius()
    }
}

/// True when `(x1, x2)` lies in the oval annulus. Boundary points count as inside.
pub fn contains_plan(geom: &RacewayGeometry, x1: f64, x2: f64) -> bool {
    let (r, big_r, l) = (geom.inner_radius, geom.outer_radius, geom.straight_length);
    let eps = 1e-12 * big_r.max(l).max(1.0);
    let in_band = |n: f64| n >= r - eps && n <= big_r + eps;
    if (0.0..=l).contains(&x1) && in_band(x2.abs()) {
        return true;
    }
    let centre_x = if x1 < 0.0 {
        0.0
    } else if x1 > l {
        l
    } else {
        return false;
    };
    in_band((x1 - centre_x).hypot(x2))
}

/// Closed-form area of the ground plan, `2 L W + π (R² - r²)`.
pub fn plan_area(geom: &RacewayGeometry) -> f64 {
    let (r, big_r) = (geom.inner_radius, geom.outer_radius);
    2.0 * geom.straight_length * geom.channel_width + PI * (big_r * big_r - r * r)
}

/// One streamwise slice of the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slice {
    /// Straight piece from `x1_start` to `x1_end`; `side` is `+1` for the
    /// left straight (`x2 > 0`) and `-1` for the right one.
    Straight { x1_start: f64, x1_end: f64, side: f64 },
    /// Bend piece around `centre` sweeping from `angle_start` to `angle_end`.
    Arc { centre: [f64; 2], angle_start: f64, angle_end: f64 },
}

impl Slice {
    /// Maps a streamwise fraction `s ∈ [0, 1]` and transverse coordinate `n`
    /// (distance from the bend axis, `|x2|` on the straights) to the plane.
    pub fn point(&self, s: f64, n: f64) -> [f64; 2] {
        match *self {
            Slice::Straight { x1_start, x1_end, side } => {
                [x1_start + s * (x1_end - x1_start), side * n]
            }
            Slice::Arc { centre, angle_start, angle_end } => {
                let a = angle_start + s * (angle_end - angle_start);
                [centre[0] + n * a.cos(), centre[1] + n * a.sin()]
            }
        }
    }

    /// Unit vector along the loop at fraction `s`.
    pub fn tangent(&self, s: f64) -> [f64; 2] {
        match *self {
            Slice::Straight { x1_start, x1_end, .. } => [(x1_end - x1_start).signum(), 0.0],
            Slice::Arc { angle_start, angle_end, .. } => {
                let a = angle_start + s * (angle_end - angle_start);
                let dir = (angle_end - angle_start).signum();
                [-dir * a.sin(), dir * a.cos()]
            }
        }
    }

    /// Unit vector of increasing `n` (towards the outer wall) at fraction `s`.
    pub fn outward(&self, s: f64) -> [f64; 2] {
        match *self {
            Slice::Straight { side, .. } => [0.0, side],
            Slice::Arc { angle_start, angle_end, .. } => {
                let a = angle_start + s * (angle_end - angle_start);
                [a.cos(), a.sin()]
            }
        }
    }

    /// Streamwise length of the slice measured at transverse coordinate `n`.
    pub fn length_at(&self, n: f64) -> f64 {
        match *self {
            Slice::Straight { x1_start, x1_end, .. } => (x1_end - x1_start).abs(),
            Slice::Arc { angle_start, angle_end, .. } => n * (angle_end - angle_start).abs(),
        }
    }

    /// Exact area of the slice between transverse coordinates `n0 < n1`.
    pub fn area_between(&self, n0: f64, n1: f64) -> f64 {
        match *self {
            Slice::Straight { .. } => self.length_at(0.0) * (n1 - n0),
            Slice::Arc { angle_start, angle_end, .. } => {
                0.5 * (angle_end - angle_start).abs() * (n1 * n1 - n0 * n0)
            }
        }
    }
}

/// Geometric data of a face between two horizontally adjacent columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanFace {
    /// Unit normal pointing from the lower-index cell to the higher one.
    pub normal: [f64; 2],
    /// Face length in plan (multiply by the local layer thickness for area).
    pub length: f64,
    /// Centre-to-centre distance projected on the normal.
    pub distance: f64,
}

/// Structured prism mesh following the raceway loop.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub geometry: RacewayGeometry,
    pub n_streamwise: usize,
    pub n_transverse: usize,
    pub n_sigma: usize,
    pub slices: Vec<Slice>,
    /// Per plan cell `(x1, x2)`.
    pub cell_centers_plan: Vec<[f64; 2]>,
    /// Per plan cell area in m².
    pub plan_cell_areas: Vec<f64>,
    /// Local streamwise unit vector at each plan cell centre.
    pub tangents: Vec<[f64; 2]>,
    /// Local outward (increasing `n`) unit vector at each plan cell centre.
    pub outwards: Vec<[f64; 2]>,
    /// Face between plan cells `(i, j)` and `(i + 1, j)`, indexed like the
    /// plan cell `(i, j)`; the last slice wraps to slice 0.
    pub streamwise_faces: Vec<PlanFace>,
    /// Face between plan cells `(i, j)` and `(i, j + 1)`, indexed like the
    /// plan cell `(i, j)`. Entries with `j = n_transverse - 1` are walls and
    /// carry zero length.
    pub transverse_faces: Vec<PlanFace>,
}

/// Builds the loop-following mesh.
///
/// Straights and bends share the streamwise cells of each half-loop in
/// proportion to their centreline length.
pub fn build_mesh(
    geom: &RacewayGeometry,
    n_streamwise: usize,
    n_transverse: usize,
    n_sigma: usize,
) -> Result<Mesh, ConfigError> {
    geom.validate()?;
    if n_streamwise < 2 || n_transverse < 2 || n_sigma < 2 {
        return Err(ConfigError::invalid(format!(
            "mesh: all cell counts must be at least 2, got {n_streamwise}x{n_transverse}x{n_sigma}"
        )));
    }
    if n_streamwise % 2 != 0 {
        return Err(ConfigError::invalid(format!(
            "mesh: n_streamwise must be even, got {n_streamwise}"
        )));
    }
    let half = n_streamwise / 2;
    let l = geom.straight_length;
    let arc_len = PI * geom.centerline_radius();
    let n_straight = if l > 0.0 {
        if half < 2 {
            return Err(ConfigError::invalid(
                "mesh: n_streamwise must be at least 4 when the straights have nonzero length",
            ));
        }
        ((half as f64 * l / (l + arc_len)).round() as usize).clamp(1, half - 1)
    } else {
        0
    };
    let n_arc = half - n_straight;

    let mut slices = Vec::with_capacity(n_streamwise);
    for q in 0..n_straight {
        let (a, b) = (q as f64 / n_straight as f64, (q + 1) as f64 / n_straight as f64);
        slices.push(Slice::Straight { x1_start: a * l, x1_end: b * l, side: 1.0 });
    }
    let arc = |slices: &mut Vec<Slice>, centre: [f64; 2], start: f64| {
        for q in 0..n_arc {
            let a0 = start - PI * q as f64 / n_arc as f64;
            let a1 = start - PI * (q + 1) as f64 / n_arc as f64;
            slices.push(Slice::Arc { centre, angle_start: a0, angle_end: a1 });
        }
    };
    arc(&mut slices, [l, 0.0], 0.5 * PI);
    for q in 0..n_straight {
        let (a, b) = (q as f64 / n_straight as f64, (q + 1) as f64 / n_straight as f64);
        slices.push(Slice::Straight { x1_start: l - a * l, x1_end: l - b * l, side: -1.0 });
    }
    arc(&mut slices, [0.0, 0.0], -0.5 * PI);
    debug_assert_eq!(slices.len(), n_streamwise);

    let dn = geom.channel_width / n_transverse as f64;
    let n_at = |j: usize| geom.inner_radius + (j as f64 + 0.5) * dn;
    let n_face = |j: usize| geom.inner_radius + j as f64 * dn;

    let n_plan = n_streamwise * n_transverse;
    let mut centers = Vec::with_capacity(n_plan);
    let mut areas = Vec::with_capacity(n_plan);
    let mut tangents = Vec::with_capacity(n_plan);
    let mut outwards = Vec::with_capacity(n_plan);
    for slice in &slices {
        for j in 0..n_transverse {
            centers.push(slice.point(0.5, n_at(j)));
            areas.push(slice.area_between(n_face(j), n_face(j + 1)));
            tangents.push(slice.tangent(0.5));
            outwards.push(slice.outward(0.5));
        }
    }

    let mut streamwise_faces = Vec::with_capacity(n_plan);
    let mut transverse_faces = Vec::with_capacity(n_plan);
    for (i, slice) in slices.iter().enumerate() {
        let next = (i + 1) % n_streamwise;
        let normal = slice.tangent(1.0);
        for j in 0..n_transverse {
            let a = centers[i * n_transverse + j];
            let b = centers[next * n_transverse + j];
            let distance = (b[0] - a[0]) * normal[0] + (b[1] - a[1]) * normal[1];
            streamwise_faces.push(PlanFace { normal, length: dn, distance });
            if j + 1 < n_transverse {
                transverse_faces.push(PlanFace {
                    normal: slice.outward(0.5),
                    length: slice.length_at(n_face(j + 1)),
                    distance: dn,
                });
            } else {
                transverse_faces.push(PlanFace {
                    normal: slice.outward(0.5),
                    length: 0.0,
                    distance: dn,
                });
            }
        }
    }

    Ok(Mesh {
        geometry: *geom,
        n_streamwise,
        n_transverse,
        n_sigma,
        slices,
        cell_centers_plan: centers,
        plan_cell_areas: areas,
        tangents,
        outwards,
        streamwise_faces,
        transverse_faces,
    })
}

impl Mesh {
    pub fn n_plan(&self) -> usize {
        self.n_streamwise * self.n_transverse
    }

    pub fn n_cells(&self) -> usize {
        self.n_plan() * self.n_sigma
    }

    #[inline]
    pub fn plan_index(&self, i: usize, j: usize) -> usize {
        i * self.n_transverse + j
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_transverse + j) * self.n_sigma + k
    }

    /// Plan index of the streamwise successor of plan cell `p` (periodic).
    #[inline]
    pub fn next_streamwise(&self, p: usize) -> usize {
        (p + self.n_transverse) % self.n_plan()
    }

    /// Plan index of the streamwise predecessor of plan cell `p` (periodic).
    #[inline]
    pub fn prev_streamwise(&self, p: usize) -> usize {
        (p + self.n_plan() - self.n_transverse) % self.n_plan()
    }

    pub fn total_plan_area(&self) -> f64 {
        self.plan_cell_areas.iter().sum()
    }

    /// Transverse coordinate of the centre of column `j`.
    pub fn transverse_center(&self, j: usize) -> f64 {
        self.geometry.inner_radius
            + (j as f64 + 0.5) * self.geometry.channel_width / self.n_transverse as f64
    }

    /// Sum of streamwise slice lengths measured at transverse coordinate `n`.
    pub fn streamwise_length_at(&self, n: f64) -> f64 {
        self.slices.iter().map(|s| s.length_at(n)).sum()
    }

    /// Physical height of the centre of layer `k` in a column of height `eta`.
    #[inline]
    pub fn layer_center_height(&self, k: usize, eta: f64) -> f64 {
        (k as f64 + 0.5) * eta / self.n_sigma as f64
    }

    /// Plan point at local fractions `(s, t) ∈ [0, 1]²` of plan cell `(i, j)`.
    pub fn plan_point(&self, i: usize, j: usize, s: f64, t: f64) -> [f64; 2] {
        let dn = self.geometry.channel_width / self.n_transverse as f64;
        let n = self.geometry.inner_radius + (j as f64 + t) * dn;
        self.slices[i].point(s, n)
    }

    /// Human-readable mesh summary used by the `info` command.
    pub fn summary(&self) -> MeshSummary {
        MeshSummary {
            n_streamwise: self.n_streamwise,
            n_transverse: self.n_transverse,
            n_sigma: self.n_sigma,
            n_straight_slices: self
                .slices
                .iter()
                .filter(|s| matches!(s, Slice::Straight { .. }))
                .count(),
            total_plan_area: self.total_plan_area(),
            exact_plan_area: plan_area(&self.geometry),
            centerline_length: self.geometry.centerline_length(),
            meshed_centerline_length: self
                .streamwise_length_at(self.geometry.centerline_radius()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSummary {
    pub n_streamwise: usize,
    pub n_transverse: usize,
    pub n_sigma: usize,
    pub n_straight_slices: usize,
    pub total_plan_area: f64,
    pub exact_plan_area: f64,
    pub centerline_length: f64,
    pub meshed_centerline_length: f64,
}

impl fmt::Display for MeshSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "cells: {} x {} x {} ({} plan cells, {} total)",
            self.n_streamwise,
            self.n_transverse,
            self.n_sigma,
            self.n_streamwise * self.n_transverse,
            self.n_streamwise * self.n_transverse * self.n_sigma
        )?;
        writeln!(f, "straight slices per side: {}", self.n_straight_slices / 2)?;
        writeln!(f, "plan area (mesh): {:.6} m^2", self.total_plan_area)?;
        writeln!(f, "plan area (exact): {:.6} m^2", self.exact_plan_area)?;
        writeln!(f, "centerline length (exact): {:.6} m", self.centerline_length)?;
        write!(f, "centerline length (mesh): {:.6} m", self.meshed_centerline_length)
    }
}
