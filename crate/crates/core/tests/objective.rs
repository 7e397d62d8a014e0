use rand::{Rng, SeedableRng};

use raceway::bio::{BioParams, Forcings, SpeciesState, TransportOptions};
use raceway::geometry::{build_mesh, RacewayGeometry};
use raceway::hydro::{FlowState, HydroConfig, PaddleForcing, PaddlewheelSpec};
use raceway::objective::{simulate, volume_integral, Controls, CostVariant, ObjectiveSpec, Scenario};

fn scenario(dt: f64, horizon: f64, cost: CostVariant) -> Scenario {
    let mesh = build_mesh(&RacewayGeometry::new(20.0, 2.0, 0.2), 24, 4, 4).unwrap();
    let paddle = PaddlewheelSpec { force_magnitude: 10.0, paddle_length: 0.4, axis: [5.0, 1.2, 0.5] };
    let mut bio = BioParams::default();
    bio.mu_max *= 24.0;
    bio.death_rate *= 24.0;
    bio.respiration_rate *= 24.0;
    Scenario {
        paddle: PaddleForcing::new(paddle, &mesh, 3),
        mesh,
        hydro: HydroConfig { dt, ..HydroConfig::default() },
        bio,
        forcings: Forcings::Constant { temperature: 20.0, light: 1.0 },
        transport: TransportOptions::default(),
        initial: [70.0, 1.0, 0.5, 10.0, 2.0, 2.0, 5.0, 8.0],
        objective: ObjectiveSpec { c1: 0.0, c2: 4.0, m1: 100.0, m2: 100.0, horizon, cost },
    }
}

/// Cell-by-cell sum in (i, j, k) order with volumes recomputed from scratch.
fn naive_integral(s: &Scenario, field: &[f64], eta: &[f64]) -> f64 {
    let m = &s.mesh;
    let mut total = 0.0;
    for i in 0..m.n_streamwise {
        for j in 0..m.n_transverse {
            let p = i * m.n_transverse + j;
            let height = eta[p] / m.n_sigma as f64;
            for k in 0..m.n_sigma {
                total += field[p * m.n_sigma + k] * m.plan_cell_areas[p] * height;
            }
        }
    }
    total
}

#[test]
fn volume_integral_matches_naive_sum() {
    let s = scenario(0.5, 0.0, CostVariant::Final);
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for _ in 0..20 {
        let field: Vec<f64> = (0..s.mesh.n_cells()).map(|_| rng.gen_range(0.0..100.0)).collect();
        let eta: Vec<f64> = (0..s.mesh.n_plan()).map(|_| rng.gen_range(0.1..0.6)).collect();
        let got = volume_integral(&field, &s.mesh, &eta).unwrap();
        let want = naive_integral(&s, &field, &eta);
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }
    let eta = vec![0.3; s.mesh.n_plan()];
    let v = 0.3 * s.mesh.total_plan_area();
    let uniform = volume_integral(&vec![2.5; s.mesh.n_cells()], &s.mesh, &eta).unwrap();
    assert!((uniform - 2.5 * v).abs() <= 1e-12 * v);
    assert_eq!(volume_integral(&vec![0.0; s.mesh.n_cells()], &s.mesh, &eta).unwrap(), 0.0);
}

struct Recorded {
    flows: Vec<FlowState>,
    species: Vec<SpeciesState>,
}

fn record(s: &Scenario, c: Controls) -> (raceway::objective::SimulationOutcome, Recorded) {
    let mut rec = Recorded { flows: Vec::new(), species: Vec::new() };
    let out = simulate(s, c, &mut |_, f, sp| {
        rec.flows.push(f.clone());
        rec.species.push(sp.clone());
        Ok(())
    })
    .unwrap();
    (out, rec)
}

#[test]
fn functionals_match_recomputation_from_stored_states() {
    let dt = 0.5;
    let s = scenario(dt, 15.0, CostVariant::TimeIntegrated);
    let c = Controls { height: 0.35, omega: 0.7 };
    let (out, rec) = record(&s, c);
    assert_eq!(rec.flows.len(), 31);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);

    let mut vel = 0.0;
    let mut integrated_a = 0.0;
    let mut oxy_min = f64::INFINITY;
    for (f, sp) in rec.flows.iter().zip(&rec.species).skip(1) {
        let speed: Vec<f64> = f.velocity.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).collect();
        vel += dt * naive_integral(&s, &speed, &f.surface_height);
        integrated_a += dt * naive_integral(&s, &sp.fields[0], &f.surface_height);
        oxy_min = oxy_min.min(naive_integral(&s, &sp.fields[7], &f.surface_height));
    }
    let r = &out.report;
    assert!(vel > 0.0);
    assert!(rel(r.velocity_integral, vel) <= 1e-12, "{} vs {vel}", r.velocity_integral);
    assert!(rel(r.j_raw, -integrated_a) <= 1e-12);
    assert!(rel(r.oxygen_min_integral, oxy_min) <= 1e-12);
    assert!(rel(r.timeseries.last().unwrap().vel_integral_cum, vel) <= 1e-12);

    let final_cost = scenario(dt, 15.0, CostVariant::Final);
    let out_final = simulate(&final_cost, c, &mut |_, _, _| Ok(())).unwrap();
    let last = rec.species.last().unwrap();
    let want = -naive_integral(&s, &last.fields[0], &rec.flows.last().unwrap().surface_height);
    assert!(rel(out_final.report.j_raw, want) <= 1e-12);
}

#[test]
fn oxygen_minimum_picks_the_lowest_step() {
    // without light and reaeration the oxygen only falls, so the minimum is the last step
    let mut s = scenario(0.5, 10.0, CostVariant::Final);
    s.forcings = Forcings::Constant { temperature: 20.0, light: 0.0 };
    s.bio.reaeration_rate = 0.0;
    s.bio.degrad_rate_d *= 100.0;
    let out = simulate(&s, Controls { height: 0.3, omega: 0.4 }, &mut |_, _, _| Ok(())).unwrap();
    let ts = &out.report.timeseries;
    assert!(ts.windows(2).all(|w| w[1].total_o <= w[0].total_o * (1.0 + 1e-12)));
    assert_eq!(out.report.oxygen_min_integral, ts.last().unwrap().total_o);
    assert!(ts.last().unwrap().total_o < ts[1].total_o);
}

#[test]
fn simulation_is_deterministic() {
    let s = scenario(0.5, 10.0, CostVariant::Final);
    let c = Controls { height: 0.3, omega: 0.6 };
    let a = simulate(&s, c, &mut |_, _, _| Ok(())).unwrap();
    let b = simulate(&s, c, &mut |_, _, _| Ok(())).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.species, b.species);
}

#[test]
fn time_step_refinement_is_consistent() {
    let c = Controls { height: 0.3, omega: 0.5 };
    let j = |dt: f64| simulate(&scenario(dt, 60.0, CostVariant::Final), c, &mut |_, _, _| Ok(())).unwrap().report.j_raw;
    let (a, b, d) = (j(1.0), j(0.5), j(0.25));
    let order = ((a - b).abs() / (b - d).abs()).log2();
    assert!(order >= 0.8, "observed order {order} ({a}, {b}, {d})");
}
