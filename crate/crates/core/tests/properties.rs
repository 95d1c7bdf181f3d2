//! Invariants checked over randomized inputs.

use nalgebra::Vector3;
use num_complex::Complex64;
use pilotwave::beables::{local_expectation, reconstruct_a, reconstruct_b, spectral_curl, spectral_divergence, Lattice};
use pilotwave::ensemble::{build_evolver, EquivarianceReference};
use pilotwave::grid::{Axis, GridEvolver, GridScheme, GridWavefunction};
use pilotwave::guidance::{velocity_field_beables, velocity_particles, Evolver, PointValue};
use pilotwave::linalg::CMatrix;
use pilotwave::model::{HamiltonianSpec, InitialState, ModeBasis, Scenario};
use pilotwave::scenarios::scenario_source;
use proptest::prelude::*;
use std::f64::consts::PI;

fn coherent_scenario(w: f64, re: f64, im: f64) -> Scenario {
    Scenario::from_toml_str(&format!(
        "name = \"c\"\n[model]\nkind = \"field_mode\"\nwavevectors = [[0.0, {w}, 0.0]]\n\
         active = [{{ mode = 0, polarization = 2, quadrature = \"im\" }}]\n\
         [initial_state]\nfamily = \"coherent\"\nalpha = [[{re}, {im}]]\n\
         [domain]\nsolver = \"fock\"\nn_max = [40]\n[time]\ndt = 0.1\nt_final = 1.0\n"
    ))
    .unwrap()
}

fn wavevector() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-3i32..=3).prop_filter("nonzero", |k| k.iter().any(|&c| c != 0)).prop_map(|k| k.map(f64::from))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn coherent_state_beables_move_with_the_mean(
        w in 0.5..2.0f64, re in -1.5..1.5f64, im in -1.5..1.5f64, offset in -1.5..1.5f64, t in 0.0..1.0f64,
    ) {
        let s = coherent_scenario(w, re, im);
        let (_, mut ev) = build_evolver(&s).unwrap();
        ev.advance(t).unwrap();
        let alpha = Complex64::new(re, im) * Complex64::new(0.0, -w * t).exp();
        // <q> = sqrt(2/w) Re alpha(t), d<q>/dt = sqrt(2/w) Re(-i w alpha(t))
        let mean = (2.0 / w).sqrt() * alpha.re;
        let rate = (2.0 / w).sqrt() * (Complex64::new(0.0, -w) * alpha).re;
        let v = velocity_field_beables(ev.snapshot().as_ref(), &[mean + offset]).unwrap().unwrap();
        prop_assert!((v[0] - rate).abs() < 1e-8, "{} vs {}", v[0], rate);
    }

    #[test]
    fn plane_phase_packets_move_at_p_over_m(mass in 0.3..3.0f64, p in -2.0..2.0f64, x in -3.0..3.0f64) {
        let spec: HamiltonianSpec = toml::from_str(&format!("kind = \"particle_schrodinger\"\nmasses = [{mass}]")).unwrap();
        let model = spec.resolve().unwrap();
        let state: InitialState =
            toml::from_str(&format!("family = \"gaussian_packet\"\ncenter = [0.0]\nwidth = [1.5]\nmomentum = [{p}]")).unwrap();
        let psi = GridWavefunction::from_initial_state(&state, &model, &[Axis::new(-20.0, 20.0, 512)]).unwrap();
        let ev = GridEvolver::new(&model, psi, GridScheme::Strang).unwrap();
        let v = velocity_particles(ev.snapshot().as_ref(), &model.guidance_law(), &[x]).unwrap().unwrap();
        prop_assert!((v[0] - p / mass).abs() < 1e-8, "{} vs {}", v[0], p / mass);
    }

    #[test]
    fn split_steps_preserve_the_norm(center in -3.0..3.0f64, width in 0.5..2.0f64, p in -2.0..2.0f64) {
        let model = toml::from_str::<HamiltonianSpec>(
            "kind = \"particle_schrodinger\"\nmasses = [1.0]\npotential = { type = \"harmonic\", frequency = [0.7] }",
        )
        .unwrap()
        .resolve()
        .unwrap();
        let state: InitialState = toml::from_str(&format!(
            "family = \"gaussian_packet\"\ncenter = [{center}]\nwidth = [{width}]\nmomentum = [{p}]"
        ))
        .unwrap();
        let psi = GridWavefunction::from_initial_state(&state, &model, &[Axis::new(-24.0, 24.0, 512)]).unwrap();
        let mut ev = GridEvolver::new(&model, psi, GridScheme::Strang).unwrap();
        let mut last = ev.norm_sqr();
        for _ in 0..20 {
            ev.advance(0.05).unwrap();
            let n = ev.norm_sqr();
            prop_assert!((n - last).abs() <= 1e-8);
            last = n;
        }
    }

    #[test]
    fn magnetic_field_is_the_curl_of_a_divergence_free_potential(
        k1 in wavevector(), k2 in wavevector(), q in prop::collection::vec(-2.0..2.0f64, 8),
    ) {
        prop_assume!(k1 != k2 && k1 != k2.map(|c| -c));
        let basis = ModeBasis::new(&[Vector3::from(k1), Vector3::from(k2)]).unwrap();
        let lattice = Lattice::cube(PI, 16);
        let a = reconstruct_a(&basis, &q, &lattice, 0.0).unwrap();
        let b = reconstruct_b(&basis, &q, &lattice, 0.0).unwrap();
        let curl = spectral_curl(&a);
        let err = curl.iter().zip(&b.values).flat_map(|(c, v)| (0..3).map(move |d| (c[d] - v[d]).abs())).fold(0.0, f64::max);
        prop_assert!(err < 1e-10, "{err}");
        let div = spectral_divergence(&a).iter().map(|d| d.abs()).fold(0.0, f64::max);
        prop_assert!(div < 1e-10, "{div}");
    }

    #[test]
    fn scalar_operators_return_their_weight_exactly(
        psi in prop::collection::vec(-2.0..2.0f64, 6), x in prop::array::uniform3(-3.0..3.0f64),
    ) {
        let values: Vec<Complex64> = psi.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        prop_assume!(values.iter().map(|v| v.norm_sqr()).sum::<f64>() > 1e-6);
        let pv = PointValue { dim: 1, gradients: vec![Complex64::new(0.0, 0.0); 3], values };
        let w = |y: &[f64; 3]| (-(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / 3.0).exp() - 0.2 * y[1];
        let op = |y: &[f64; 3]| CMatrix::identity(3, 3) * Complex64::new(w(y), 0.0);
        let got = local_expectation(&pv, 0.0, &op, &[x]).unwrap();
        prop_assert_eq!(got.values[0], w(&x));
    }

    #[test]
    fn projector_weights_are_the_spinor_populations(
        a in prop::array::uniform2(-1.0..1.0f64), b in prop::array::uniform2(-1.0..1.0f64),
    ) {
        let (pa, pb) = (a[0] * a[0] + a[1] * a[1], b[0] * b[0] + b[1] * b[1]);
        prop_assume!(pa + pb > 1e-3);
        let s = Scenario::from_toml_with_overrides(
            scenario_source("stern_gerlach_50_50").unwrap(),
            &[format!("initial_state.components=[[{}, {}], [{}, {}]]", a[0], a[1], b[0], b[1])],
        )
        .unwrap();
        let (_, ev) = build_evolver(&s).unwrap();
        let up = CMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0].map(|x| Complex64::new(x, 0.0)));
        let weight = ev.project(&up).norm_sqr() / ev.norm_sqr();
        prop_assert!((weight - pa / (pa + pb)).abs() < 1e-12, "{weight}");
    }

    #[test]
    fn ensemble_distance_is_a_bounded_total_variation(points in prop::collection::vec(-6.0..6.0f64, 100..300)) {
        let s = pilotwave::scenarios::load_scenario("harmonic_ground").unwrap();
        let (_, ev) = build_evolver(&s).unwrap();
        let snap = ev.snapshot();
        let table = ev.density_table(snap.as_ref()).unwrap();
        let reference = EquivarianceReference::new(snap.as_ref(), &table, points.len()).unwrap();
        let pts: Vec<Vec<f64>> = points.iter().map(|x| vec![*x]).collect();
        let d = reference.distance(&pts).unwrap();
        prop_assert!((0.0..=2.0).contains(&d), "{d}");
    }
}
