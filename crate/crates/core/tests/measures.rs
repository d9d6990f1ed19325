use std::f64::consts::{E, PI};

use glancer::flow::{trace_generalized, IntegratorParams};
use glancer::geometry::{Potential, Scenario, Vector};
use glancer::measures::*;
use glancer::symbol::{hyperbolic_lifts, BoundaryClass, PhasePoint};
use glancer::Error;

fn pp(x: &[f64], tau: f64, xi: &[f64]) -> PhasePoint {
    PhasePoint::new(0.0, x, tau, xi)
}

fn v(a: &[f64]) -> Vector {
    Vector::from_column_slice(a)
}

#[test]
fn bump_values() {
    assert!((bump_chi(0.0) - 1.0 / E).abs() < 1e-15);
    assert!((bump_chi(0.0) - 0.367879).abs() < 1e-6);
    assert_eq!(bump_chi(1.5), 0.0);
    assert_eq!(bump_beta(0.0), 1.0);
    assert_eq!(bump_beta(-2.0), 0.0);
    assert_eq!(bump_beta(-0.5), 1.0);
    assert_eq!(bump_beta(-1.0), 0.0);
    // C¹: derivative matches FD and vanishes at the joins
    for s in [-1.0, -0.9, -0.75, -0.6, -0.5] {
        let h = 1e-6;
        let fd = (bump_beta(s + h) - bump_beta(s - h)) / (2.0 * h);
        assert!((fd - bump_beta_prime(s)).abs() < 1e-5);
    }
    assert_eq!(bump_beta_prime(-1.0), 0.0);
    assert!(bump_chi_prime(0.999).abs() < 1e-100);
}

#[test]
fn test_function_gradients_match_fd() {
    let a = ChiBetaBump {
        x_center: v(&[0.3, 0.1]),
        x_radius: 0.5,
        direction: v(&[0.2, 1.0]),
        beta_shift: 0.1,
        beta_scale: 1.3,
        time: Some((-0.3, 0.8)),
    };
    let b = RadialBump { x_center: v(&[0.0, 0.2]), xi_center: v(&[0.6, 0.8]), x_radius: 0.6, xi_radius: 0.7 };
    let rho = PhasePoint::new(-0.1, &[0.4, 0.2], 1.0, &[0.5, -0.6]);
    for f in [&a as &dyn TestFunction, &b] {
        let g = f.gradient(&rho);
        let fd = fd_gradient(f, &rho, 1e-5);
        assert!((g.dt - fd.dt).abs() < 1e-6);
        assert!((&g.dx - &fd.dx).amax() < 1e-6);
        assert!((&g.dxi - &fd.dxi).amax() < 1e-6);
        assert!((g.dtau - fd.dtau).abs() < 1e-6);
    }
}

fn straight_line(t_horizon: f64, h: f64) -> glancer::flow::GenBicharacteristic {
    let s = Scenario::half_plane();
    trace_generalized(&s, &pp(&[0.0, 5.0], 1.0, &[0.6, 0.8]), t_horizon, &IntegratorParams::with_h(h)).unwrap()
}

#[test]
fn weights_for_zero_and_constant_potential() {
    let gb = straight_line(2.0, 1e-2);
    let cm = dirac_on_bichar(&gb, &Potential::Zero, 1e-4);
    assert!(cm.weights.iter().flatten().all(|w| *w == 1.0));
    let c = 0.7;
    let cm = dirac_on_bichar(&gb, &Potential::Constant { value: c }, 1e-4);
    for (p, ws) in gb.pieces.iter().zip(&cm.weights) {
        for (smp, w) in p.samples.iter().zip(ws) {
            assert!((w - (-c * smp.s).exp()).abs() < 1e-8);
        }
    }
}

#[test]
fn weights_for_time_dependent_potential() {
    let gb = straight_line(2.0, 1e-2);
    let (a, om) = (0.8, 2.3);
    let cm = dirac_on_bichar(&gb, &Potential::TimeSine { amplitude: a, frequency: om }, 1e-4);
    // t(s) = -2s, so ∫_0^s a sin(ω t) = a (cos(2ωs) - 1) / (2ω)
    for (p, ws) in gb.pieces.iter().zip(&cm.weights) {
        for (smp, w) in p.samples.iter().zip(ws) {
            let integral = a * ((2.0 * om * smp.s).cos() - 1.0) / (2.0 * om);
            assert!((w - (-integral).exp()).abs() < 1e-7);
        }
    }
}

#[test]
fn strip_atoms_have_mass_two() {
    let s = Scenario::strip(1.0);
    let gb = trace_generalized(&s, &pp(&[0.0, 1.0], 1.0, &[0.0, -1.0]), 5.0, &IntegratorParams::default()).unwrap();
    let nu = boundary_measure_of(&s, &dirac_on_bichar(&gb, &Potential::Zero, 1e-3)).unwrap();
    assert_eq!(nu.atoms.len(), 5);
    for a in &nu.atoms {
        assert!((a.mass - 2.0).abs() < 1e-12);
        assert_eq!(a.tag, BoundaryClass::HyperbolicIn);
    }
}

#[test]
fn atom_mass_matches_lifts_and_theta_jumps() {
    let s = Scenario::disk_interior(1.0);
    let gb = trace_generalized(&s, &pp(&[0.1, 0.2], 1.0, &[0.8, 0.6]), 12.0, &IntegratorParams::default()).unwrap();
    let nu = boundary_measure_of(&s, &dirac_on_bichar(&gb, &Potential::Constant { value: 0.2 }, 1e-3)).unwrap();
    assert!(nu.atoms.len() >= 3);
    let mut total = 0.0;
    let mut theta_sum = 0.0;
    for a in &nu.atoms {
        let (plus, minus) = hyperbolic_lifts(&s, &a.rho_par).unwrap();
        let (n, ns) = s.unit_normal(&a.rho_par.x).unwrap();
        let oracle = a.weight * (&plus.xi - &minus.xi).dot(&n);
        assert!((a.mass - oracle).abs() < 1e-9);
        total += a.mass / a.weight;
        theta_sum += 2.0 * a.rho_plus.xi.dot(&ns);
        assert!(a.mass > 0.0);
    }
    assert!((total - theta_sum).abs() < 1e-9);
}

#[test]
fn interior_trajectory_has_empty_nu() {
    let s = Scenario::half_plane();
    let gb = straight_line(2.0, 1e-2);
    let nu = boundary_measure_of(&s, &dirac_on_bichar(&gb, &Potential::Zero, 1e-3)).unwrap();
    assert!(nu.is_empty());
    assert!(mass_check(&nu, &s).passed);
}

#[test]
fn disk_gliding_arc_density() {
    let s = Scenario::disk_interior(1.0);
    let gb = trace_generalized(&s, &pp(&[1.0, 0.0], 1.0, &[0.0, 1.0]), 2.0, &IntegratorParams::default()).unwrap();
    let nu = boundary_measure_of(&s, &dirac_on_bichar(&gb, &Potential::Zero, 1e-3)).unwrap();
    assert!(!nu.arc.is_empty());
    for a in &nu.arc {
        assert_eq!(a.tag, BoundaryClass::Gliding);
        assert!((a.hp2z + 4.0).abs() < 1e-6);
        assert!((a.density - 2.0).abs() < 1e-6);
    }
    assert!(mass_check(&nu, &s).passed);
}

fn one_bounce_residual(h: f64, f: &Potential) -> f64 {
    let s = Scenario::half_plane();
    let gb = trace_generalized(&s, &pp(&[0.0, 0.5], 1.0, &[0.6, -0.8]), 1.4, &IntegratorParams::with_h(h)).unwrap();
    assert_eq!(gb.breaks.len(), 1);
    let cm = dirac_on_bichar(&gb, f, h);
    let nu = boundary_measure_of(&s, &cm).unwrap();
    let a = ChiBetaBump {
        x_center: v(&[0.375, 0.05]),
        x_radius: 0.3,
        direction: v(&[0.0, 1.0]),
        beta_shift: 0.0,
        beta_scale: 1.0,
        time: None,
    };
    transport_residual(&s, &cm, &nu, &a, f).unwrap().value
}

#[test]
fn straight_line_residual_telescopes() {
    let s = Scenario::half_plane();
    let gb = straight_line(2.0, 1e-4);
    let cm = dirac_on_bichar(&gb, &Potential::Zero, 1e-4);
    let nu = boundary_measure_of(&s, &cm).unwrap();
    let a = RadialBump { x_center: v(&[0.6, 5.8]), xi_center: v(&[0.6, 0.8]), x_radius: 0.4, xi_radius: 1.0 };
    let r = transport_residual(&s, &cm, &nu, &a, &Potential::Zero).unwrap();
    assert!(r.value <= 1e-6, "{r:?}");
    assert!(r.interior.abs() <= 1e-6);
}

#[test]
fn one_bounce_residual_converges() {
    for f in [Potential::Zero, Potential::Constant { value: 1.0 }] {
        let hs = [1e-2, 3e-3, 1e-3];
        let rs: Vec<f64> = hs.iter().map(|&h| one_bounce_residual(h, &f)).collect();
        let slope = (rs[0] / rs[2]).ln() / (hs[0] / hs[2]).ln();
        assert!(slope >= 1.0, "{f:?}: residuals {rs:?}");
        assert!(one_bounce_residual(1e-4, &f) <= 1e-4);
    }
}

#[test]
fn gliding_residual_needs_arc_term() {
    let s = Scenario::disk_interior(1.0);
    let gb = trace_generalized(&s, &pp(&[1.0, 0.0], 1.0, &[0.0, 1.0]), 2.0 * PI * 0.75, &IntegratorParams::with_h(1e-3)).unwrap();
    let cm = dirac_on_bichar(&gb, &Potential::Zero, 1e-3);
    let nu = boundary_measure_of(&s, &cm).unwrap();
    let a = RadialBump { x_center: v(&[0.0, 1.0]), xi_center: v(&[-0.8, 0.3]), x_radius: 0.5, xi_radius: 0.8 };
    let r = transport_residual(&s, &cm, &nu, &a, &Potential::Zero).unwrap();
    assert!(r.value < 1e-6, "{r:?}");
    assert!(r.glide.abs() > 1e-2, "{r:?}");
}

#[test]
fn support_leak_is_reported() {
    let s = Scenario::half_plane();
    let gb = straight_line(2.0, 1e-2);
    let cm = dirac_on_bichar(&gb, &Potential::Zero, 1e-2);
    let nu = boundary_measure_of(&s, &cm).unwrap();
    let a = RadialBump { x_center: v(&[0.0, 5.0]), xi_center: v(&[0.6, 0.8]), x_radius: 0.4, xi_radius: 1.0 };
    assert!(matches!(transport_residual(&s, &cm, &nu, &a, &Potential::Zero), Err(Error::SupportLeak { .. })));
}

#[test]
fn support_step_check_line_and_negative_control() {
    let s = Scenario::half_plane();
    let gb = trace_generalized(&s, &pp(&[0.0, 5.0], 1.0, &[0.6, 0.8]), 0.94, &IntegratorParams::with_h(4.7e-4)).unwrap();
    let pts = support_points(&gb, 0);
    assert!(pts.len() >= 1000);
    let ok = support_step_check(&pts, &s, 1e-2, 0.1).unwrap();
    assert!(ok.passed(), "{} failures", ok.failures.len());
    assert!(ok.skipped > 0);
    let bad = support_step_check(&pts, &s, 1e-2, 1e-4).unwrap();
    assert!(!bad.passed());
    assert!(matches!(support_step_check(&[], &s, 1e-2, 0.1), Err(Error::EmptySupport)));
}

#[test]
fn support_step_check_strip_ensemble_through_breaks() {
    let s = Scenario::strip(1.0);
    let mut pts = Vec::new();
    for (k, a) in [0.4f64, 0.9, 1.2].iter().enumerate() {
        let gb = trace_generalized(&s, &pp(&[0.0, 0.5], 1.0, &[a.cos(), a.sin()]), 3.0, &IntegratorParams::with_h(4.7e-4)).unwrap();
        assert!(!gb.breaks.is_empty());
        pts.extend(support_points(&gb, k));
    }
    let rep = support_step_check(&pts, &s, 1e-2, 0.1).unwrap();
    assert!(rep.passed(), "{:?}", &rep.failures[..rep.failures.len().min(5)]);
}

#[test]
fn billiard_nu_has_only_hyperbolic_atoms() {
    let s = Scenario::disk_exterior(1.0);
    let mut all = Vec::new();
    for (x, xi) in [([-2.0, 1.0], [1.0, 0.0]), ([-2.0, 0.3], [1.0, 0.0]), ([2.0, -0.5], [-0.8, 0.6])] {
        let gb = trace_generalized(&s, &pp(&x, 1.0, &xi), 6.0, &IntegratorParams::default()).unwrap();
        all.push(boundary_measure_of(&s, &dirac_on_bichar(&gb, &Potential::Zero, 1e-3)).unwrap());
    }
    let nu = BoundaryMeasure::merge(all);
    assert!(nu.contacts.iter().any(|c| c.tag == BoundaryClass::Diffractive));
    assert!(nu.atoms.iter().all(|a| a.tag == BoundaryClass::HyperbolicIn));
    let rep = mass_check(&nu, &s);
    assert!(rep.passed, "{:?}", rep.offending);
    assert!(rep.min_tau_support >= rep.ensemble_min_tau - 1e-9);
    assert!(mass_check(&BoundaryMeasure::default(), &s).passed);
}

#[test]
fn mass_check_flags_charged_glancing_sample() {
    let s = Scenario::half_plane();
    let mut nu = BoundaryMeasure { carrier_min_tau: 1.0, ..Default::default() };
    nu.contacts.push(Contact { s: 0.0, rho: pp(&[0.0, 0.0], 1.0, &[1.0, 0.0]), tag: BoundaryClass::Glancing3, hp2z: 0.0, mass: 0.5 });
    assert!(!mass_check(&nu, &s).passed);
}

#[test]
fn nu_export_is_json() {
    let s = Scenario::strip(1.0);
    let gb = trace_generalized(&s, &pp(&[0.0, 1.0], 1.0, &[0.0, -1.0]), 2.0, &IntegratorParams::default()).unwrap();
    let nu = boundary_measure_of(&s, &dirac_on_bichar(&gb, &Potential::Zero, 1e-3)).unwrap();
    let j = serde_json::to_value(nu.export()).unwrap();
    assert_eq!(j["atoms"].as_array().unwrap().len(), 2);
    assert_eq!(j["atoms"][0]["tag"], "hyperbolic_in");
}
