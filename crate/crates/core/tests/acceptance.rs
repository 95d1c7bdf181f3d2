//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status when any criterion fails.

use num_complex::Complex64;
use pilotwave::beables::{
    local_expectation, reconstruct_a, reconstruct_b, reconstruct_e_t, spectral_curl, spectral_divergence, FieldSnapshot, Lattice,
};
use pilotwave::ensemble::{build_evolver, run_ensemble, RunOutput, SolverState};
use pilotwave::grid::{continuity_residual, FftNd, GridEvolver, GridScheme, GridSnapshot, GridWavefunction};
use pilotwave::guidance::{integrate_trajectory, Evolver, NodeGuard, Trajectory};
use pilotwave::linalg::CMatrix;
use pilotwave::model::{HamiltonianSpec, InitialState, Scenario};
use pilotwave::scenarios::load_scenario;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

const N: usize = 10_000;
const FLOOR_FACTOR: f64 = 2.0;
const RUNTIME_LIMIT: f64 = 180.0;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

/// Runs each bundled scenario at most once.
#[derive(Default)]
struct Runs {
    done: BTreeMap<&'static str, Result<(RunOutput, f64), String>>,
}

impl Runs {
    fn get(&mut self, name: &'static str) -> Result<&(RunOutput, f64), String> {
        self.done
            .entry(name)
            .or_insert_with(|| {
                let scenario = load_scenario(name).map_err(|e| e.to_string())?;
                let clock = Instant::now();
                let out = run_ensemble(&scenario).map_err(|e| format!("{name}: {e}"))?;
                Ok((out, clock.elapsed().as_secs_f64()))
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn scenario(src: &str) -> Scenario {
    Scenario::from_toml_str(src).expect("test scenario parses")
}

fn guard() -> NodeGuard {
    NodeGuard { epsilon: 1e-12, v_max: 1e6 }
}

fn equivariance(runs: &mut Runs) -> Result<Outcome, String> {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in ["free_gaussian", "double_slit", "stern_gerlach_50_50", "qed_toy_emission"] {
        let (out, secs) = runs.get(name)?;
        let ratios: Vec<f64> = out.report.checkpoints.iter().skip(1).filter_map(|c| c.ratio).collect();
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        let ok = out.report.samples == N && ratios.len() == 5 && worst <= FLOOR_FACTOR && *secs <= RUNTIME_LIMIT;
        passed &= ok;
        parts.push(format!("{name} {worst:.2}x/{secs:.0}s"));
    }
    Ok(Outcome::new(passed, format!("max distance/floor at 5 checkpoints ({}), limit {FLOOR_FACTOR}x and {RUNTIME_LIMIT} s", parts.join(", "))))
}

fn born_rule(runs: &mut Runs) -> Result<Outcome, String> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, expected) in [("stern_gerlach_50_50", 0.5), ("stern_gerlach_25_75", 0.25), ("qed_toy_emission", f64::NAN)] {
        let (out, _) = runs.get(name)?;
        let b = out.report.branches.as_ref().ok_or(format!("{name}: no branch report"))?;
        let weight_ok = expected.is_nan() || (b.weights[0] - expected).abs() < 1e-10;
        let z = b.z_scores.iter().map(|z| z.abs()).fold(0.0, f64::max);
        let ok = weight_ok && out.report.samples == N && z <= 3.0;
        passed &= ok;
        parts.push(format!("{name} f={:.4} w={:.4} |z|={z:.2}", b.frequencies[0], b.weights[0]));
    }
    Ok(Outcome::new(passed, format!("{} (limit 3 SE)", parts.join(", "))))
}

fn effective_collapse(runs: &mut Runs) -> Result<Outcome, String> {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in ["stern_gerlach_50_50", "stern_gerlach_25_75", "qed_toy_emission"] {
        let (out, _) = runs.get(name)?;
        let col = out.report.collapse.as_ref().ok_or(format!("{name}: no collapse report"))?;
        let ok = col.separated_at.is_some() && col.max_relative < 1e-8 && col.stayed_fraction == 1.0;
        passed &= ok;
        parts.push(format!(
            "{name} separated {:?}, max {:.1e}, p99 {:.1e}, stayed {}",
            col.separated_at.map(|t| (t * 100.0).round() / 100.0),
            col.max_relative,
            col.p99_relative,
            col.stayed_fraction
        ));
    }
    Ok(Outcome::new(passed, format!("{} (limits 1e-8 relative, stayed 1)", parts.join("; "))))
}

fn stationarity(runs: &mut Runs) -> Result<Outcome, String> {
    let ho = runs.get("harmonic_ground")?.0.report.max_displacement;
    let vac = runs.get("vacuum")?.0.report.max_displacement;
    Ok(Outcome::new(ho <= 1e-10 && vac <= 1e-10, format!("max displacement oscillator {ho:.1e}, vacuum {vac:.1e} (limit 1e-10)")))
}

/// `<q>(t)` of a coherent state of frequency `w`.
fn coherent_mean(alpha: Complex64, w: f64, t: f64) -> f64 {
    (2.0 / w).sqrt() * (alpha * c(0.0, -w * t).exp()).re
}

fn coherent_mean_rate(alpha: Complex64, w: f64, t: f64) -> f64 {
    (2.0 / w).sqrt() * (alpha * c(0.0, -w) * c(0.0, -w * t).exp()).re
}

const COHERENT: &str = r#"
name = "coherent"
[model]
kind = "field_mode"
wavevectors = [[0.0, 0.0, 1.5]]
active = [{ mode = 0, polarization = 1, quadrature = "re" }]
[initial_state]
family = "coherent"
alpha = [[1.1, 0.4]]
[domain]
solver = "fock"
n_max = [40]
[time]
dt = 0.05
t_final = 3.0
"#;

fn coherent_trajectory(q0: f64, h: f64) -> Result<(Trajectory, SolverState), String> {
    let s = scenario(COHERENT);
    let (model, ev) = build_evolver(&s).map_err(|e| e.to_string())?;
    let (traj, exit) = integrate_trajectory(&[q0], &ev, s.time.t_final, h, &model.guidance_law(), guard()).map_err(|e| e.to_string())?;
    if let Some(x) = exit {
        return Err(format!("coherent trajectory left the domain: {x:?}"));
    }
    Ok((traj, ev))
}

fn analytic_trajectories(runs: &mut Runs) -> Result<Outcome, String> {
    // free packet: x(t) = x0 sigma(t) / sigma0 with sigma(t) = sigma0 sqrt(1 + (t / 2 sigma0^2)^2)
    let (out, _) = runs.get("free_gaussian")?;
    let sigma0 = 1.0;
    let mut free_err = 0.0_f64;
    for (_, traj) in &out.trajectories {
        let x0 = traj.points[0][0];
        for (t, x) in traj.times.iter().zip(&traj.points) {
            let s = (1.0 + (t / (2.0 * sigma0 * sigma0)).powi(2)).sqrt();
            let exact = x0 * s;
            if exact != 0.0 {
                free_err = free_err.max((x[0] - exact).abs() / exact.abs());
            }
        }
    }
    // coherent field mode: the packet moves rigidly, so q(t) - <q>(t) is constant
    let (alpha, w) = (c(1.1, 0.4), 1.5);
    let mut coh_err = 0.0_f64;
    for offset in [-1.0, -0.3, 0.0, 0.45, 1.2] {
        let (traj, _) = coherent_trajectory(coherent_mean(alpha, w, 0.0) + offset, 0.01)?;
        for (t, q) in traj.times.iter().zip(&traj.points) {
            coh_err = coh_err.max((q[0] - offset - coherent_mean(alpha, w, *t)).abs());
        }
    }
    Ok(Outcome::new(
        free_err <= 1e-4 && coh_err <= 1e-5 && !out.trajectories.is_empty(),
        format!("free Gaussian max relative {free_err:.1e} (limit 1e-4), coherent beable vs <q> {coh_err:.1e} (limit 1e-5)"),
    ))
}

fn solver_cross_validation(_: &mut Runs) -> Result<Outcome, String> {
    let fock = load_scenario("qed_toy_emission").map_err(|e| e.to_string())?;
    let grid = load_scenario("qed_toy_grid").map_err(|e| e.to_string())?;
    let (_, mut ef) = build_evolver(&fock).map_err(|e| e.to_string())?;
    let (_, mut eg) = build_evolver(&grid).map_err(|e| e.to_string())?;
    let h = fock.time.dt;
    let steps = fock.time.steps();
    let points: Vec<f64> = (0..=400).map(|i| -10.0 + 0.05 * i as f64).collect();
    let mut worst = 0.0_f64;
    for step in 0..=steps {
        if step % 40 == 0 {
            let (sf, sg) = (ef.snapshot(), eg.snapshot());
            for x in &points {
                let a = sf.density_at(&[*x]).map_err(|e| e.to_string())?;
                let b = sg.density_at(&[*x]).map_err(|e| e.to_string())?;
                worst = worst.max((a - b).abs());
            }
        }
        if step < steps {
            ef.advance(h).map_err(|e| e.to_string())?;
            eg.advance(h).map_err(|e| e.to_string())?;
        }
    }
    Ok(Outcome::new(worst <= 1e-5, format!("max |rho_grid - rho_fock| {worst:.1e} over 11 times and 401 points (limit 1e-5)")))
}

fn continuity_ratio() -> Result<f64, String> {
    let s = load_scenario("free_gaussian").map_err(|e| e.to_string())?;
    let model = s.model.resolve().map_err(|e| e.to_string())?;
    let state: InitialState =
        toml::from_str("family = \"gaussian_packet\"\ncenter = [-1.0]\nwidth = [1.0]\nmomentum = [0.8]").map_err(|e| e.to_string())?;
    let residual = |n: usize, dt: f64| -> Result<f64, String> {
        let axes = [pilotwave::grid::Axis::new(-20.0, 20.0, n)];
        let psi = GridWavefunction::from_initial_state(&state, &model, &axes).map_err(|e| e.to_string())?;
        let mut ev = GridEvolver::new(&model, psi, GridScheme::Strang).map_err(|e| e.to_string())?;
        for _ in 0..(1.0 / dt).round() as usize {
            ev.advance(dt).map_err(|e| e.to_string())?;
        }
        let fft = FftNd::new(&[n]);
        let s0 = GridSnapshot::new(&ev.state, &fft);
        ev.advance(dt).map_err(|e| e.to_string())?;
        let s1 = GridSnapshot::new(&ev.state, &fft);
        ev.advance(dt).map_err(|e| e.to_string())?;
        let s2 = GridSnapshot::new(&ev.state, &fft);
        Ok(continuity_residual([&s0, &s1, &s2], dt, &model.guidance_law()))
    };
    Ok(residual(256, 0.04)? / residual(512, 0.02)?)
}

fn conservation(runs: &mut Runs) -> Result<Outcome, String> {
    let mut norm = 0.0_f64;
    let mut energy = 0.0_f64;
    for name in ["free_gaussian", "double_slit", "harmonic_ground", "vacuum", "stern_gerlach_50_50", "stern_gerlach_25_75", "qed_toy_emission"] {
        let r = &runs.get(name)?.0.report.conservation;
        norm = norm.max(r.max_norm_drift_per_step);
        energy = energy.max(r.max_relative_energy_drift);
    }
    let ratio = continuity_ratio()?;
    Ok(Outcome::new(
        norm <= 1e-8 && energy <= 1e-6 && ratio >= 3.5,
        format!("norm drift/step {norm:.1e} (limit 1e-8), energy drift {energy:.1e} (limit 1e-6), continuity residual ratio {ratio:.2} (limit 3.5)"),
    ))
}

fn max_component(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (0..3).map(|d| (u[d] - v[d]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

const MULTI_MODE: &str = r#"
kind = "field_mode"
wavevectors = [[1.0, 0.0, 0.0], [0.0, 2.0, 1.0], [1.0, -1.0, 3.0]]
active = [
  { mode = 0, polarization = 1, quadrature = "re" },
  { mode = 0, polarization = 2, quadrature = "im" },
  { mode = 1, polarization = 1, quadrature = "im" },
  { mode = 1, polarization = 2, quadrature = "re" },
  { mode = 2, polarization = 1, quadrature = "re" },
  { mode = 2, polarization = 2, quadrature = "im" },
]
"#;

fn field_reconstruction(_: &mut Runs) -> Result<Outcome, String> {
    let field = toml::from_str::<HamiltonianSpec>(MULTI_MODE)
        .map_err(|e| e.to_string())?
        .resolve()
        .map_err(|e| e.to_string())?
        .field
        .ok_or("no field model")?;
    let lattice = Lattice::cube(PI, 16);
    // q_j(t) = a_j cos(w_j t + phi_j) with fixed pseudo-random a_j, phi_j
    let params: Vec<(f64, f64)> = (0..field.mode_count()).map(|j| (0.3 + 0.17 * j as f64, 0.7 * j as f64 - 1.0)).collect();
    let q_at = |t: f64| -> Vec<f64> { params.iter().zip(&field.frequencies).map(|((a, p), w)| a * (w * t + p).cos()).collect() };
    let mut sampled = Trajectory::default();
    for i in 0..=200 {
        let t = i as f64 * 0.01;
        sampled.times.push(t);
        sampled.points.push(q_at(t));
        sampled.node_flags.push(false);
    }
    let (mut curl_err, mut div_a, mut div_e) = (0.0_f64, 0.0_f64, 0.0_f64);
    for t in [0.3, 0.77, 1.5] {
        let q = field.embed(&q_at(t));
        let a = reconstruct_a(&field.basis, &q, &lattice, t).map_err(|e| e.to_string())?;
        let b = reconstruct_b(&field.basis, &q, &lattice, t).map_err(|e| e.to_string())?;
        let e = reconstruct_e_t(&field, &sampled, t, &lattice).map_err(|e| e.to_string())?;
        curl_err = curl_err.max(max_component(&spectral_curl(&a), &b.values));
        div_a = div_a.max(max_abs(&spectral_divergence(&a)));
        div_e = div_e.max(max_abs(&spectral_divergence(&e)));
    }

    // order of E^T from a coherent-state beable trajectory against -A of the exact rate
    let (alpha, w) = (c(1.1, 0.4), 1.5);
    let coherent_field = build_evolver(&scenario(COHERENT)).map_err(|e| e.to_string())?.0.field.ok_or("no field model")?;
    let line = Lattice { min: [0.0; 3], max: [1.0, 1.0, 2.0 * PI / 1.5], points: [1, 1, 16] };
    let t = 1.0;
    let rate = coherent_field.embed(&[coherent_mean_rate(alpha, w, t)]);
    let exact = reconstruct_a(&coherent_field.basis, &rate, &line, t).map_err(|e| e.to_string())?;
    let error = |h: f64| -> Result<f64, String> {
        let (traj, _) = coherent_trajectory(coherent_mean(alpha, w, 0.0) + 0.2, h)?;
        let e: FieldSnapshot = reconstruct_e_t(&coherent_field, &traj, t, &line).map_err(|e| e.to_string())?;
        Ok(e.values.iter().zip(&exact.values).map(|(u, v)| (0..3).map(|d| (u[d] + v[d]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max))
    };
    let (coarse, fine) = (error(0.05)?, error(0.025)?);
    let order = (coarse / fine).log2();
    Ok(Outcome::new(
        curl_err <= 1e-10 && div_a <= 1e-10 && div_e <= 1e-10 && order >= 1.9,
        format!("|B - curl A| {curl_err:.1e}, |div A| {div_a:.1e}, |div E| {div_e:.1e} (limit 1e-10), E convergence order {order:.2} (limit 1.9)"),
    ))
}

fn local_expectation_values(_: &mut Runs) -> Result<Outcome, String> {
    let s = load_scenario("qed_toy_emission").map_err(|e| e.to_string())?;
    let (_, mut ev) = build_evolver(&s).map_err(|e| e.to_string())?;
    ev.advance(s.time.t_final).map_err(|e| e.to_string())?;
    let snap = ev.snapshot();
    let weight = |x: &[f64; 3]| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp();
    let xs = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.3, -0.4, 0.5]];

    // identity block at configurations spread over the whole support
    let identity = |x: &[f64; 3]| CMatrix::identity(2, 2) * c(weight(x), 0.0);
    let mut identity_exact = true;
    for i in 0..=40 {
        let q = -8.0 + 0.4 * i as f64;
        let pv = snap.evaluate(&[q]).map_err(|e| e.to_string())?;
        if pv.density() <= 1e-300 {
            continue;
        }
        let got = local_expectation(&pv, 0.0, &identity, &xs).map_err(|e| e.to_string())?;
        identity_exact &= got.values.iter().zip(&xs).all(|(v, x)| *v == weight(x));
    }

    // sigma_z block against the branch-restricted value at configurations in
    // the core of each branch
    let sz = |x: &[f64; 3]| CMatrix::from_row_slice(2, 2, &[c(weight(x), 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-weight(x), 0.0)]);
    let plus = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)]);
    let minus = CMatrix::identity(2, 2) - &plus;
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for p in [&plus, &minus] {
        let branch = ev.project(p);
        let (norm, mean) = match &branch {
            SolverState::Fock(f) => (f.state.norm_sqr(), f.state.mean_position(0)),
            SolverState::Grid(_) => return Err("expected a number-basis state".into()),
        };
        let mean = mean / norm;
        let sigma = 1.0 / 2f64.sqrt();
        for k in -6..=6 {
            let q = mean + 0.5 * sigma * k as f64;
            let pv = snap.evaluate(&[q]).map_err(|e| e.to_string())?;
            let full = local_expectation(&pv, 0.0, &sz, &xs).map_err(|e| e.to_string())?;
            // chi = P psi(q), value = <chi|O|chi> / <chi|chi>
            let chi = [p[(0, 0)] * pv.values[0] + p[(0, 1)] * pv.values[1], p[(1, 0)] * pv.values[0] + p[(1, 1)] * pv.values[1]];
            let n2 = chi[0].norm_sqr() + chi[1].norm_sqr();
            for (v, x) in full.values.iter().zip(&xs) {
                let oracle = weight(x) * (chi[0].norm_sqr() - chi[1].norm_sqr()) / n2;
                worst = worst.max((v - oracle).abs());
            }
            checked += 1;
        }
    }
    Ok(Outcome::new(
        identity_exact && worst <= 1e-8,
        format!("identity block returns w(x) exactly: {identity_exact}; branch-restricted difference {worst:.1e} at {checked} configurations (limit 1e-8)"),
    ))
}

type Criterion = fn(&mut Runs) -> Result<Outcome, String>;

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("equivariance", equivariance),
        ("Born rule", born_rule),
        ("effective collapse", effective_collapse),
        ("stationarity", stationarity),
        ("analytic trajectories", analytic_trajectories),
        ("solver cross-validation", solver_cross_validation),
        ("conservation", conservation),
        ("field reconstruction", field_reconstruction),
        ("local expectation value", local_expectation_values),
    ];
    let mut runs = Runs::default();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check(&mut runs).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        if !outcome.passed {
            failures += 1;
        }
        println!("{} {} {name}: {}", if outcome.passed { "PASS" } else { "FAIL" }, i + 1, outcome.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
