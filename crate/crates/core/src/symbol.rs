//! The wave symbol `p = -τ² + |ξ|²_x`, its Hamiltonian and gliding fields,
//! boundary classification, `π∥`, `Σ` and the hyperbolic lifts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Matrix, MetricEval, Scenario, Thresholds, Vector};

/// A point `ρ = (t, x, τ, ξ)` of phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub t: f64,
    pub x: Vector,
    pub tau: f64,
    pub xi: Vector,
}

impl PhasePoint {
    pub fn new(t: f64, x: &[f64], tau: f64, xi: &[f64]) -> Self {
        Self { t, x: Vector::from_column_slice(x), tau, xi: Vector::from_column_slice(xi) }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `ρ + h·u` in chart coordinates.
    pub fn advanced(&self, u: &TangentUpdate, h: f64) -> PhasePoint {
        PhasePoint { t: self.t + h * u.dt, x: &self.x + &u.dx * h, tau: self.tau + h * u.dtau, xi: &self.xi + &u.dxi * h }
    }

    /// Euclidean distance in the chart coordinates of phase space.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        ((self.t - other.t).powi(2)
            + (&self.x - &other.x).norm_squared()
            + (self.tau - other.tau).powi(2)
            + (&self.xi - &other.xi).norm_squared())
        .sqrt()
    }

    /// Linear interpolation `(1-θ)a + θb`.
    pub fn lerp(&self, other: &PhasePoint, theta: f64) -> PhasePoint {
        PhasePoint {
            t: self.t + theta * (other.t - self.t),
            x: self.x.lerp(&other.x, theta),
            tau: self.tau + theta * (other.tau - self.tau),
            xi: self.xi.lerp(&other.xi, theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.tau.is_finite() && self.x.iter().all(|v| v.is_finite()) && self.xi.iter().all(|v| v.is_finite())
    }
}

/// Components of a vector field on phase space at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentUpdate {
    pub dt: f64,
    pub dx: Vector,
    pub dtau: f64,
    pub dxi: Vector,
}

impl TangentUpdate {
    pub fn is_finite(&self) -> bool {
        self.dt.is_finite() && self.dtau.is_finite() && self.dx.iter().all(|v| v.is_finite()) && self.dxi.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.dt * self.dt + self.dx.norm_squared() + self.dtau * self.dtau + self.dxi.norm_squared()).sqrt()
    }

    pub fn scaled(&self, c: f64) -> TangentUpdate {
        TangentUpdate { dt: c * self.dt, dx: &self.dx * c, dtau: c * self.dtau, dxi: &self.dxi * c }
    }

    pub fn add(&self, o: &TangentUpdate) -> TangentUpdate {
        TangentUpdate { dt: self.dt + o.dt, dx: &self.dx + &o.dx, dtau: self.dtau + o.dtau, dxi: &self.dxi + &o.dxi }
    }

    /// Euclidean length of `self - o`.
    pub fn distance(&self, o: &TangentUpdate) -> f64 {
        self.add(&o.scaled(-1.0)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClass {
    Interior,
    HyperbolicIn,
    HyperbolicOut,
    Diffractive,
    Glancing3,
    Gliding,
    EllipticTangential,
}

impl BoundaryClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryClass::Interior => "interior",
            BoundaryClass::HyperbolicIn => "hyperbolic_in",
            BoundaryClass::HyperbolicOut => "hyperbolic_out",
            BoundaryClass::Diffractive => "diffractive",
            BoundaryClass::Glancing3 => "glancing3",
            BoundaryClass::Gliding => "gliding",
            BoundaryClass::EllipticTangential => "elliptic_tangential",
        }
    }

    pub fn is_glancing(&self) -> bool {
        matches!(self, BoundaryClass::Diffractive | BoundaryClass::Glancing3 | BoundaryClass::Gliding)
    }
}

impl fmt::Display for BoundaryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A classification tag together with the raw quantities it was decided on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub tag: BoundaryClass,
    pub phi: f64,
    pub p: f64,
    pub hpz: f64,
    pub hp2z: f64,
}

/// Everything at `x` needed by the symbol computations.
struct Local {
    m: MetricEval,
    dphi: Vector,
    d2phi: Matrix,
}

impl Local {
    fn at(sc: &Scenario, x: &Vector) -> Result<Self> {
        Ok(Self { m: sc.metric_at(x)?, dphi: sc.boundary.dphi(x), d2phi: sc.boundary.d2phi(x) })
    }

    /// `∂_{x_k} p = ξᵀ (∂_k g⁻¹) ξ`.
    fn dp_dx(&self, xi: &Vector) -> Vector {
        Vector::from_iterator(xi.len(), self.m.dg_inv.iter().map(|d| xi.dot(&(d * xi))))
    }

    fn hpz(&self, xi: &Vector) -> f64 {
        2.0 * self.dphi.dot(&(&self.m.g_inv * xi))
    }

    fn hp2z(&self, xi: &Vector) -> f64 {
        let gx = &self.m.g_inv * xi;
        let gd = &self.m.g_inv * &self.dphi;
        let dgx = &self.d2phi * &gx;
        let dp = self.dp_dx(xi);
        let mut acc = 0.0;
        for k in 0..xi.len() {
            let d_hpz_dxk = 2.0 * dgx[k] + 2.0 * self.dphi.dot(&(&self.m.dg_inv[k] * xi));
            acc += 2.0 * gx[k] * d_hpz_dxk - dp[k] * 2.0 * gd[k];
        }
        acc
    }

    fn hz2p(&self) -> f64 {
        2.0 * self.dphi.dot(&(&self.m.g_inv * &self.dphi))
    }

    /// `H_p (H_z² p)`.
    fn hp_hz2p(&self, xi: &Vector) -> f64 {
        let gx = &self.m.g_inv * xi;
        let gd = &self.m.g_inv * &self.dphi;
        let dgd = &self.d2phi * &gd;
        (0..xi.len())
            .map(|k| 2.0 * gx[k] * (4.0 * dgd[k] + 2.0 * self.dphi.dot(&(&self.m.dg_inv[k] * &self.dphi))))
            .sum()
    }

    fn hamiltonian(&self, rho: &PhasePoint) -> TangentUpdate {
        TangentUpdate { dt: -2.0 * rho.tau, dx: &self.m.g_inv * &rho.xi * 2.0, dtau: 0.0, dxi: -self.dp_dx(&rho.xi) }
    }

    fn co_norm2(&self, xi: &Vector) -> f64 {
        xi.dot(&(&self.m.g_inv * xi))
    }
}

pub fn p_eval(sc: &Scenario, rho: &PhasePoint) -> Result<f64> {
    let g_inv = sc.metric_at(&rho.x)?.g_inv;
    Ok(-rho.tau * rho.tau + rho.xi.dot(&(g_inv * &rho.xi)))
}

/// `‖ξ‖_x`.
pub fn co_norm(sc: &Scenario, x: &Vector, xi: &Vector) -> Result<f64> {
    Ok(sc.co_inner(x, xi, xi)?.sqrt())
}

/// `H_p = -2τ ∂_t + 2 g^{ij} ξ_i ∂_{x_j} - ∂_{x_k} g^{ij} ξ_i ξ_j ∂_{ξ_k}`.
pub fn hamiltonian_field(sc: &Scenario, rho: &PhasePoint) -> Result<TangentUpdate> {
    Ok(Local::at(sc, &rho.x)?.hamiltonian(rho))
}

/// `H_p φ = ⟨dφ, 2ξ^♯⟩`.
pub fn hpz(sc: &Scenario, rho: &PhasePoint) -> Result<f64> {
    Ok(Local::at(sc, &rho.x)?.hpz(&rho.xi))
}

/// `H_p² φ`.
pub fn hp2z(sc: &Scenario, rho: &PhasePoint) -> Result<f64> {
    Ok(Local::at(sc, &rho.x)?.hp2z(&rho.xi))
}

/// `H_z² p = 2 |dφ|²_{g*}` where `H_z` is the Hamiltonian field of `φ`.
pub fn hz2p(sc: &Scenario, x: &Vector) -> Result<f64> {
    Ok(Local::at(sc, x)?.hz2p())
}

/// Hamiltonian field of `φ`: only the `ξ` component `-dφ` is non-zero.
pub fn hz_field(sc: &Scenario, rho: &PhasePoint) -> Result<TangentUpdate> {
    sc.metric_at(&rho.x)?;
    let d = rho.dim();
    Ok(TangentUpdate { dt: 0.0, dx: Vector::zeros(d), dtau: 0.0, dxi: -sc.boundary.dphi(&rho.x) })
}

/// Tag for a tangential point from the sign of `H_p² φ`.
pub fn glancing_tag(hp2z: f64, thr: &Thresholds) -> BoundaryClass {
    if hp2z > thr.eps_g2 {
        BoundaryClass::Diffractive
    } else if hp2z < -thr.eps_g2 {
        BoundaryClass::Gliding
    } else {
        BoundaryClass::Glancing3
    }
}

/// Classify a boundary phase point.
pub fn classify_boundary_point(sc: &Scenario, rho: &PhasePoint, thr: &Thresholds) -> Result<Classification> {
    let phi = sc.phi(&rho.x);
    if phi.abs() > thr.boundary_tol {
        return Err(Error::NotOnBoundary { phi });
    }
    classify_local(sc, rho, thr, phi)
}

/// Like [`classify_boundary_point`] but returns `Interior` away from the
/// boundary.
pub fn classify(sc: &Scenario, rho: &PhasePoint) -> Result<Classification> {
    let thr = &sc.thresholds;
    let phi = sc.phi(&rho.x);
    if phi > thr.boundary_tol {
        let l = Local::at(sc, &rho.x)?;
        return Ok(Classification {
            tag: BoundaryClass::Interior,
            phi,
            p: l.co_norm2(&rho.xi) - rho.tau * rho.tau,
            hpz: l.hpz(&rho.xi),
            hp2z: l.hp2z(&rho.xi),
        });
    }
    if phi < -thr.boundary_tol {
        return Err(Error::OutsideDomain { phi });
    }
    classify_local(sc, rho, thr, phi)
}

fn classify_local(sc: &Scenario, rho: &PhasePoint, thr: &Thresholds, phi: f64) -> Result<Classification> {
    let l = Local::at(sc, &rho.x)?;
    let p = l.co_norm2(&rho.xi) - rho.tau * rho.tau;
    let hpz = l.hpz(&rho.xi);
    let hp2z = l.hp2z(&rho.xi);
    let tag = if p.abs() <= thr.char_tol {
        if hpz > thr.eps_g {
            BoundaryClass::HyperbolicIn
        } else if hpz < -thr.eps_g {
            BoundaryClass::HyperbolicOut
        } else {
            glancing_tag(hp2z, thr)
        }
    } else {
        let par = project_parallel(sc, rho)?;
        let p_par = l.co_norm2(&par.xi) - rho.tau * rho.tau;
        if p_par > thr.char_tol {
            BoundaryClass::EllipticTangential
        } else {
            return Err(Error::NotCharacteristic { p, p_par });
        }
    };
    Ok(Classification { tag, phi, p, hpz, hp2z })
}

fn check_band(sc: &Scenario, x: &Vector, width: f64) -> Result<()> {
    let phi = sc.phi(x);
    if phi.abs() > width {
        Err(Error::NotOnBoundary { phi })
    } else {
        Ok(())
    }
}

/// `π∥ρ`: remove the `n*` component of `ξ`. Defined in the extension band.
pub fn project_parallel(sc: &Scenario, rho: &PhasePoint) -> Result<PhasePoint> {
    check_band(sc, &rho.x, sc.thresholds.band)?;
    let (ns, _) = sc.conormal(&rho.x)?;
    let c = sc.co_inner(&rho.x, &rho.xi, &ns)?;
    Ok(PhasePoint { xi: &rho.xi - &ns * c, ..rho.clone() })
}

/// `Σρ` at a boundary point.
pub fn sigma(sc: &Scenario, rho: &PhasePoint) -> Result<PhasePoint> {
    check_band(sc, &rho.x, sc.thresholds.boundary_tol)?;
    sigma_extended(sc, rho)
}

/// `Σ` with the conormal extended to the band around the boundary.
pub fn sigma_extended(sc: &Scenario, rho: &PhasePoint) -> Result<PhasePoint> {
    check_band(sc, &rho.x, sc.thresholds.band)?;
    let (ns, _) = sc.conormal(&rho.x)?;
    let c = sc.co_inner(&rho.x, &rho.xi, &ns)?;
    Ok(PhasePoint { xi: &rho.xi - &ns * (2.0 * c), ..rho.clone() })
}

/// The two characteristic points `ξ∥ ± λ n*` above a tangential point,
/// returned as `(ρ⁺, ρ⁻)`.
pub fn hyperbolic_lifts(sc: &Scenario, rho_par: &PhasePoint) -> Result<(PhasePoint, PhasePoint)> {
    check_band(sc, &rho_par.x, sc.thresholds.band)?;
    let p = p_eval(sc, rho_par)?;
    if p > sc.thresholds.char_tol {
        return Err(Error::EllipticPoint { p });
    }
    let (ns, _) = sc.conormal(&rho_par.x)?;
    let lambda = (-p).max(0.0).sqrt();
    let plus = PhasePoint { xi: &rho_par.xi + &ns * lambda, ..rho_par.clone() };
    let minus = PhasePoint { xi: &rho_par.xi - &ns * lambda, ..rho_par.clone() };
    Ok((plus, minus))
}

/// Coefficient `μ` with `H_p^G = H_p + μ H_z`.
fn gliding_coefficient(sc: &Scenario, l: &Local, xi: &Vector) -> Result<f64> {
    let hz2p = l.hz2p();
    if !(hz2p > sc.thresholds.min_normal) {
        return Err(Error::DegenerateTransversal { value: hz2p });
    }
    Ok(l.hp2z(xi) / hz2p - l.hp_hz2p(xi) / (hz2p * hz2p) * l.hpz(xi))
}

/// The gliding field `H_p^G`, extended to the band around the boundary.
pub fn gliding_field(sc: &Scenario, rho: &PhasePoint) -> Result<TangentUpdate> {
    check_band(sc, &rho.x, sc.thresholds.band)?;
    let l = Local::at(sc, &rho.x)?;
    let mu = gliding_coefficient(sc, &l, &rho.xi)?;
    let mut u = l.hamiltonian(rho);
    u.dxi -= &l.dphi * mu;
    Ok(u)
}

/// Rescale `ξ` so that `‖ξ‖_x = |τ|`.
pub fn project_to_char(sc: &Scenario, rho: &PhasePoint) -> Result<PhasePoint> {
    let n = co_norm(sc, &rho.x, &rho.xi)?;
    if !(n > 0.0) {
        return Ok(rho.clone());
    }
    Ok(PhasePoint { xi: &rho.xi * (rho.tau.abs() / n), ..rho.clone() })
}

const GLANCING_PROJECTION_TOL: f64 = 1e-13;

/// Project onto `{φ = 0, H_p φ = 0, p = 0}`: move `x` along the metric
/// gradient of `φ`, drop the normal part of `ξ`, then restore `‖ξ‖ = |τ|`.
pub fn project_to_glancing(sc: &Scenario, rho: &PhasePoint) -> Result<PhasePoint> {
    let mut r = rho.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..40 {
        let m = sc.metric_at(&r.x)?;
        let dphi = sc.boundary.dphi(&r.x);
        let gd = &m.g_inv * &dphi;
        let n2 = dphi.dot(&gd);
        if !(n2 > sc.thresholds.min_normal) {
            return Err(Error::DegenerateNormal { norm: n2.sqrt() });
        }
        let phi = sc.phi(&r.x);
        r.x -= &gd * (phi / n2);
        let (ns, _) = sc.conormal(&r.x)?;
        let c = sc.co_inner(&r.x, &r.xi, &ns)?;
        r.xi -= &ns * c;
        let nx = co_norm(sc, &r.x, &r.xi)?;
        if !(nx > 0.0) {
            return Err(Error::ProjectionDiverged { residual: f64::INFINITY });
        }
        r.xi *= r.tau.abs() / nx;
        let l = Local::at(sc, &r.x)?;
        residual = sc.phi(&r.x).abs().max(l.hpz(&r.xi).abs()).max((l.co_norm2(&r.xi) - r.tau * r.tau).abs());
        if residual < GLANCING_PROJECTION_TOL {
            return Ok(r);
        }
    }
    if residual < 1e-10 {
        Ok(r)
    } else {
        Err(Error::ProjectionDiverged { residual })
    }
}
