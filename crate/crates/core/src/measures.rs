//! Measures carried by generalized bicharacteristics, the boundary
//! measure `ν`, and the weak-form transport residual.

use std::fmt::Debug;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{GenBicharacteristic, PhaseRecord, PieceKind, Sample};
use crate::geometry::{Potential, Scenario, Vector};
use crate::par;
use crate::symbol::{self, classify, hamiltonian_field, BoundaryClass, PhasePoint, TangentUpdate};

/// `χ(s) = 1_{s<1} exp(1/(s-1))`.
pub fn bump_chi(s: f64) -> f64 {
    if s < 1.0 {
        (1.0 / (s - 1.0)).exp()
    } else {
        0.0
    }
}

pub fn bump_chi_prime(s: f64) -> f64 {
    if s < 1.0 {
        -bump_chi(s) / ((s - 1.0) * (s - 1.0))
    } else {
        0.0
    }
}

/// Quintic smoothstep from 0 at `s = -1` to 1 at `s = -1/2`.
pub fn bump_beta(s: f64) -> f64 {
    let u = ((s + 1.0) * 2.0).clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

pub fn bump_beta_prime(s: f64) -> f64 {
    let u = (s + 1.0) * 2.0;
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    2.0 * 30.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// Differential of a scalar function on phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGradient {
    pub dt: f64,
    pub dx: Vector,
    pub dtau: f64,
    pub dxi: Vector,
}

impl PhaseGradient {
    /// Directional derivative along a vector field value.
    pub fn apply(&self, u: &TangentUpdate) -> f64 {
        self.dt * u.dt + self.dx.dot(&u.dx) + self.dtau * u.dtau + self.dxi.dot(&u.dxi)
    }
}

/// A C¹ test function on phase space with compact support in `(t, x)`.
pub trait TestFunction: Send + Sync + Debug {
    fn value(&self, rho: &PhasePoint) -> f64;
    fn gradient(&self, rho: &PhasePoint) -> PhaseGradient;
}

/// `χ(|x - c|²/R²) · β((⟨ξ, ν⟩ - shift)/scale) · χ(((t - t_c)/r_t)²)`.
///
/// With `ν` the boundary conormal the `β` factor distinguishes incoming
/// from outgoing covectors, so the bump sees reflections.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiBetaBump {
    pub x_center: Vector,
    pub x_radius: f64,
    pub direction: Vector,
    pub beta_shift: f64,
    pub beta_scale: f64,
    /// Optional time localisation `(t_c, r_t)`.
    pub time: Option<(f64, f64)>,
}

impl ChiBetaBump {
    fn parts(&self, rho: &PhasePoint) -> (f64, f64, f64, f64, f64, f64) {
        let q = (&rho.x - &self.x_center).norm_squared() / (self.x_radius * self.x_radius);
        let b = (rho.xi.dot(&self.direction) - self.beta_shift) / self.beta_scale;
        let (tf, tfp) = match self.time {
            Some((tc, rt)) => {
                let u = (rho.t - tc) / rt;
                (bump_chi(u * u), bump_chi_prime(u * u) * 2.0 * u / rt)
            }
            None => (1.0, 0.0),
        };
        (bump_chi(q), bump_chi_prime(q), bump_beta(b), bump_beta_prime(b), tf, tfp)
    }
}

impl TestFunction for ChiBetaBump {
    fn value(&self, rho: &PhasePoint) -> f64 {
        let (c, _, b, _, tf, _) = self.parts(rho);
        c * b * tf
    }

    fn gradient(&self, rho: &PhasePoint) -> PhaseGradient {
        let (c, cp, b, bp, tf, tfp) = self.parts(rho);
        let r2 = self.x_radius * self.x_radius;
        PhaseGradient {
            dt: c * b * tfp,
            dx: (&rho.x - &self.x_center) * (2.0 * cp / r2 * b * tf),
            dtau: 0.0,
            dxi: &self.direction * (c * bp / self.beta_scale * tf),
        }
    }
}

/// `χ(|x - x_c|²/r_x² + |ξ - ξ_c|²/r_ξ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialBump {
    pub x_center: Vector,
    pub xi_center: Vector,
    pub x_radius: f64,
    pub xi_radius: f64,
}

impl RadialBump {
    fn q(&self, rho: &PhasePoint) -> f64 {
        (&rho.x - &self.x_center).norm_squared() / (self.x_radius * self.x_radius)
            + (&rho.xi - &self.xi_center).norm_squared() / (self.xi_radius * self.xi_radius)
    }
}

impl TestFunction for RadialBump {
    fn value(&self, rho: &PhasePoint) -> f64 {
        bump_chi(self.q(rho))
    }

    fn gradient(&self, rho: &PhasePoint) -> PhaseGradient {
        let cp = bump_chi_prime(self.q(rho));
        PhaseGradient {
            dt: 0.0,
            dx: (&rho.x - &self.x_center) * (2.0 * cp / (self.x_radius * self.x_radius)),
            dtau: 0.0,
            dxi: (&rho.xi - &self.xi_center) * (2.0 * cp / (self.xi_radius * self.xi_radius)),
        }
    }
}

/// Central finite-difference gradient, for checking analytic gradients.
pub fn fd_gradient(a: &dyn TestFunction, rho: &PhasePoint, step: f64) -> PhaseGradient {
    let d = rho.dim();
    let diff = |f: &dyn Fn(&mut PhasePoint, f64)| {
        let mut p = rho.clone();
        let mut m = rho.clone();
        f(&mut p, step);
        f(&mut m, -step);
        (a.value(&p) - a.value(&m)) / (2.0 * step)
    };
    PhaseGradient {
        dt: diff(&|r, h| r.t += h),
        dx: Vector::from_iterator(d, (0..d).map(|k| diff(&|r, h| r.x[k] += h))),
        dtau: diff(&|r, h| r.tau += h),
        dxi: Vector::from_iterator(d, (0..d).map(|k| diff(&|r, h| r.xi[k] += h))),
    }
}

/// `w δ_γ`: the carrier with one weight per sample.
#[derive(Debug, Clone)]
pub struct CurveMeasure {
    pub carrier: GenBicharacteristic,
    /// `weights[i][j]` belongs to `carrier.pieces[i].samples[j]`.
    pub weights: Vec<Vec<f64>>,
    pub h: f64,
}

impl CurveMeasure {
    pub fn weight_at_break(&self, s: f64) -> Option<f64> {
        self.carrier
            .pieces
            .iter()
            .zip(&self.weights)
            .flat_map(|(p, w)| p.samples.iter().zip(w))
            .find(|(smp, _)| smp.s == s)
            .map(|(_, w)| *w)
    }
}

fn potential_along(f: &Potential, a: &Sample, b: &Sample, h: f64) -> f64 {
    let ds = b.s - a.s;
    if ds <= 0.0 {
        return 0.0;
    }
    let n = (ds / h).ceil().max(1.0) as usize;
    let val = |theta: f64| {
        let t = a.rho.t + theta * (b.rho.t - a.rho.t);
        let x = a.rho.x.lerp(&b.rho.x, theta);
        f.eval(t, &x)
    };
    let mut acc = 0.5 * (val(0.0) + val(1.0));
    for k in 1..n {
        acc += val(k as f64 / n as f64);
    }
    acc * ds / n as f64
}

/// Weights `w(s) = exp(-∫ f(γ))` from the first sample, by the trapezoid
/// rule on sub-steps of at most `h` with linear interpolation between
/// carrier samples.
pub fn dirac_on_bichar(gb: &GenBicharacteristic, f: &Potential, h: f64) -> CurveMeasure {
    let mut weights = Vec::with_capacity(gb.pieces.len());
    let mut integral = 0.0;
    let mut prev: Option<&Sample> = None;
    for piece in &gb.pieces {
        let mut w = Vec::with_capacity(piece.samples.len());
        for smp in &piece.samples {
            if let Some(p) = prev {
                if !f.is_zero() {
                    integral += potential_along(f, p, smp, h);
                }
            }
            w.push((-integral).exp());
            prev = Some(smp);
        }
        weights.push(w);
    }
    CurveMeasure { carrier: gb.clone(), weights, h }
}

/// Point mass of `ν_H` at a reflection.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub s: f64,
    pub rho_par: PhasePoint,
    pub rho_minus: PhasePoint,
    pub rho_plus: PhasePoint,
    pub weight: f64,
    /// `w ⟨ξ⁺ - ξ⁻, n⟩`.
    pub mass: f64,
    pub tag: BoundaryClass,
}

/// Tangential contact; carries no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub s: f64,
    pub rho: PhasePoint,
    pub tag: BoundaryClass,
    pub hp2z: f64,
    pub mass: f64,
}

/// Density sample of `½ ν_G` on a gliding piece.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSample {
    pub s: f64,
    pub piece: usize,
    pub rho: PhasePoint,
    pub weight: f64,
    pub hp2z: f64,
    pub density: f64,
    pub tag: BoundaryClass,
}

#[derive(Debug, Clone, Default)]
pub struct BoundaryMeasure {
    pub atoms: Vec<Atom>,
    pub contacts: Vec<Contact>,
    pub arc: Vec<ArcSample>,
    /// Smallest `|τ|` over the carrier samples.
    pub carrier_min_tau: f64,
}

impl BoundaryMeasure {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.arc.iter().all(|a| a.density == 0.0)
    }

    /// Union of measures from an ensemble of carriers.
    pub fn merge(items: impl IntoIterator<Item = BoundaryMeasure>) -> BoundaryMeasure {
        let mut out = BoundaryMeasure { carrier_min_tau: f64::INFINITY, ..Default::default() };
        for m in items {
            out.atoms.extend(m.atoms);
            out.contacts.extend(m.contacts);
            out.arc.extend(m.arc);
            out.carrier_min_tau = out.carrier_min_tau.min(m.carrier_min_tau);
        }
        out
    }

    pub fn export(&self) -> NuExport {
        NuExport {
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomRecord { s: a.s, tag: a.tag.as_str(), mass: a.mass, weight: a.weight, rho_par: (&a.rho_par).into() })
                .collect(),
            contacts: self
                .contacts
                .iter()
                .map(|c| ArcRecord { s: c.s, tag: c.tag.as_str(), hp2z: c.hp2z, density: c.mass, rho: (&c.rho).into() })
                .collect(),
            arc: self
                .arc
                .iter()
                .map(|a| ArcRecord { s: a.s, tag: a.tag.as_str(), hp2z: a.hp2z, density: a.density, rho: (&a.rho).into() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomRecord {
    pub s: f64,
    pub tag: &'static str,
    pub mass: f64,
    pub weight: f64,
    pub rho_par: PhaseRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArcRecord {
    pub s: f64,
    pub tag: &'static str,
    pub hp2z: f64,
    pub density: f64,
    pub rho: PhaseRecord,
}

/// Serialisable form of `ν`.
#[derive(Debug, Clone, Serialize)]
pub struct NuExport {
    pub atoms: Vec<AtomRecord>,
    pub contacts: Vec<ArcRecord>,
    pub arc: Vec<ArcRecord>,
}

/// `½(-H_p²φ)/|dφ|` on gliding samples, zero elsewhere.
fn arc_density(sc: &Scenario, rho: &PhasePoint, hp2z: f64, tag: BoundaryClass) -> Result<f64> {
    if tag != BoundaryClass::Gliding {
        return Ok(0.0);
    }
    let (_, norm) = sc.conormal(&rho.x)?;
    Ok(0.5 * (-hp2z).max(0.0) / norm)
}

/// Boundary measure `ν = ½ ν_G + ν_H` of a curve measure.
pub fn boundary_measure_of(sc: &Scenario, cm: &CurveMeasure) -> Result<BoundaryMeasure> {
    let gb = &cm.carrier;
    let mut atoms = Vec::with_capacity(gb.breaks.len());
    for b in &gb.breaks {
        let w = cm.weight_at_break(b.s).unwrap_or(1.0);
        let (n, _) = sc.unit_normal(&b.rho_minus.x)?;
        let jump = (&b.rho_plus.xi - &b.rho_minus.xi).dot(&n);
        atoms.push(Atom {
            s: b.s,
            rho_par: symbol::project_parallel(sc, &b.rho_minus)?,
            rho_minus: b.rho_minus.clone(),
            rho_plus: b.rho_plus.clone(),
            weight: w,
            mass: w * jump,
            tag: classify(sc, &b.rho_plus)?.tag,
        });
    }
    let contacts = gb
        .junctions
        .iter()
        .map(|j| Contact { s: j.s, rho: j.rho.clone(), tag: j.class.tag, hp2z: j.class.hp2z, mass: 0.0 })
        .collect();
    let mut arc = Vec::new();
    for (i, (piece, ws)) in gb.pieces.iter().zip(&cm.weights).enumerate() {
        if piece.kind != PieceKind::Gliding {
            continue;
        }
        for (smp, w) in piece.samples.iter().zip(ws) {
            let h2 = symbol::hp2z(sc, &smp.rho)?;
            let tag = symbol::glancing_tag(h2, &sc.thresholds);
            let density = arc_density(sc, &smp.rho, h2, tag)? * w;
            arc.push(ArcSample { s: smp.s, piece: i, rho: smp.rho.clone(), weight: *w, hp2z: h2, density, tag });
        }
    }
    let carrier_min_tau = gb.samples().map(|(_, _, s)| s.rho.tau.abs()).fold(f64::INFINITY, f64::min);
    Ok(BoundaryMeasure { atoms, contacts, arc, carrier_min_tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `∫ w (H_p a - f a) ds`.
    pub interior: f64,
    /// `Σ w (a(ρ⁺) - a(ρ⁻))`.
    pub jumps: f64,
    /// Gliding-arc term.
    pub glide: f64,
    pub signed: f64,
    pub value: f64,
}

fn trapezoid(s: &[f64], v: &[f64]) -> f64 {
    s.windows(2).zip(v.windows(2)).map(|(ds, dv)| 0.5 * (ds[1] - ds[0]) * (dv[0] + dv[1])).sum()
}

const SUPPORT_LEAK_TOL: f64 = 1e-12;

/// Weak-form residual of the transport equation for `cm` and `nu` tested
/// against `a`.
pub fn transport_residual(
    sc: &Scenario,
    cm: &CurveMeasure,
    nu: &BoundaryMeasure,
    a: &dyn TestFunction,
    f: &Potential,
) -> Result<ResidualReport> {
    let gb = &cm.carrier;
    for end in [gb.first(), gb.last()].into_iter().flatten() {
        let v = a.value(&end.rho);
        if v.abs() > SUPPORT_LEAK_TOL {
            return Err(Error::SupportLeak { s: end.s, value: v });
        }
    }
    let mut interior = 0.0;
    for (piece, ws) in gb.pieces.iter().zip(&cm.weights) {
        let s: Vec<f64> = piece.samples.iter().map(|x| x.s).collect();
        let mut v = Vec::with_capacity(s.len());
        for (smp, w) in piece.samples.iter().zip(ws) {
            let hp = hamiltonian_field(sc, &smp.rho)?;
            let da = a.gradient(&smp.rho).apply(&hp);
            v.push(w * (da - f.eval(smp.rho.t, &smp.rho.x) * a.value(&smp.rho)));
        }
        interior += trapezoid(&s, &v);
    }
    let jumps: f64 = nu.atoms.iter().map(|at| at.weight * (a.value(&at.rho_plus) - a.value(&at.rho_minus))).sum();

    let mut glide = 0.0;
    let mut k = 0;
    while k < nu.arc.len() {
        let piece = nu.arc[k].piece;
        let mut s = Vec::new();
        let mut v = Vec::new();
        while k < nu.arc.len() && nu.arc[k].piece == piece {
            let smp = &nu.arc[k];
            let (ns, _) = sc.conormal(&smp.rho.x)?;
            s.push(smp.s);
            v.push(smp.density * a.gradient(&smp.rho).dxi.dot(&ns));
            k += 1;
        }
        glide += trapezoid(&s, &v);
    }
    let signed = interior + jumps + glide;
    Ok(ResidualReport { interior, jumps, glide, signed, value: signed.abs() })
}

/// A point of the discrete support of `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    pub rho: PhasePoint,
    pub s: f64,
    pub gliding: bool,
    /// Identifier of the trajectory the point was sampled from.
    pub trajectory: usize,
}

/// All samples of a trajectory as support points.
pub fn support_points(gb: &GenBicharacteristic, trajectory: usize) -> Vec<SupportPoint> {
    gb.samples()
        .map(|(_, kind, smp)| SupportPoint { rho: smp.rho.clone(), s: smp.s, gliding: kind == PieceKind::Gliding, trajectory })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportFailure {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub checked: usize,
    pub skipped: usize,
    pub radius: f64,
    pub failures: Vec<SupportFailure>,
}

impl SupportReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Move `ρ` by `δ` along the field, reflecting through `Σ` if the straight
/// step crosses the boundary.
fn advance(sc: &Scenario, pt: &SupportPoint, delta: f64) -> Result<PhasePoint> {
    let field = |r: &PhasePoint| if pt.gliding { symbol::gliding_field(sc, r) } else { hamiltonian_field(sc, r) };
    let x = field(&pt.rho)?;
    let q = pt.rho.advanced(&x, delta);
    if pt.gliding || sc.phi(&q.x) >= 0.0 {
        return Ok(q);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sc.phi(&pt.rho.advanced(&x, mid * delta).x) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let hit = pt.rho.advanced(&x, lo * delta);
    let r = symbol::sigma_extended(sc, &hit)?;
    let xr = hamiltonian_field(sc, &r)?;
    Ok(r.advanced(&xr, (1.0 - lo) * delta))
}

/// For each support point, check that some support point lies within
/// `δ ε` of the point advanced by `δ` along `H_p` (or the gliding field on
/// gliding samples). Points whose advance runs past the end of their
/// trajectory are skipped.
pub fn support_step_check(points: &[SupportPoint], sc: &Scenario, delta: f64, eps: f64) -> Result<SupportReport> {
    if points.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut s_max = std::collections::HashMap::new();
    for p in points {
        let e = s_max.entry(p.trajectory).or_insert(f64::NEG_INFINITY);
        *e = f64::max(*e, p.s);
    }
    let radius = delta * eps;
    let idx: Vec<usize> = (0..points.len()).collect();
    let outcome = par::map_ordered(&idx, |&i| -> Result<Option<f64>> {
        let p = &points[i];
        if p.s + delta > s_max[&p.trajectory] {
            return Ok(None);
        }
        let q = advance(sc, p, delta)?;
        Ok(Some(points.iter().map(|o| o.rho.distance(&q)).fold(f64::INFINITY, f64::min)))
    });
    let mut checked = 0;
    let mut skipped = 0;
    let mut failures = Vec::new();
    for (i, o) in outcome.into_iter().enumerate() {
        match o? {
            None => skipped += 1,
            Some(d) => {
                checked += 1;
                if d > radius {
                    failures.push(SupportFailure { index: i, distance: d });
                }
            }
        }
    }
    Ok(SupportReport { checked, skipped, radius, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassReport {
    pub passed: bool,
    pub offending: Vec<String>,
    pub min_tau_support: f64,
    pub ensemble_min_tau: f64,
}

const MASS_TOL: f64 = 1e-10;

/// `ν` must not charge diffractive or order-3 glancing contacts, and `|τ|`
/// must stay bounded below on its support.
pub fn mass_check(nu: &BoundaryMeasure, sc: &Scenario) -> MassReport {
    let bad = |t: BoundaryClass| matches!(t, BoundaryClass::Diffractive | BoundaryClass::Glancing3);
    let mut offending = Vec::new();
    let mut min_tau = f64::INFINITY;
    for a in &nu.atoms {
        let tag = classify(sc, &a.rho_plus).map(|c| c.tag).unwrap_or(a.tag);
        if bad(tag) && a.mass > MASS_TOL {
            offending.push(format!("atom at s = {} tagged {} has mass {:e}", a.s, tag, a.mass));
        }
        if a.mass > 0.0 {
            min_tau = min_tau.min(a.rho_plus.tau.abs());
        }
    }
    for c in &nu.contacts {
        if bad(c.tag) && c.mass > MASS_TOL {
            offending.push(format!("contact at s = {} tagged {} has mass {:e}", c.s, c.tag, c.mass));
        }
    }
    for a in &nu.arc {
        if bad(a.tag) && a.density > MASS_TOL {
            offending.push(format!("arc sample at s = {} tagged {} has density {:e}", a.s, a.tag, a.density));
        }
        if a.density > 0.0 {
            min_tau = min_tau.min(a.rho.tau.abs());
        }
    }
    let ensemble = nu.carrier_min_tau;
    let tau_ok = !min_tau.is_finite() || !ensemble.is_finite() || min_tau >= ensemble - 1e-9;
    if !tau_ok {
        offending.push(format!("min |tau| on supp nu = {min_tau} below ensemble minimum {ensemble}"));
    }
    MassReport { passed: offending.is_empty(), offending, min_tau_support: min_tau, ensemble_min_tau: ensemble }
}
