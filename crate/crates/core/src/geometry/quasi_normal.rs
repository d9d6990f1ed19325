//! Quasi-normal boundary coordinates for C¹ metrics.
//!
//! The chart is `Φ(x', z) = ψ0((x', 0) + z·m(x', z))` where `ψ0` flattens the
//! boundary and `m(·, z)` is the cut-off unit normal field smoothed at scale
//! `|z|` by the kernel `ℓ`, the inverse Fourier transform of
//! `exp(1 - sqrt(1 + ξ²))`.

use std::sync::Arc;

use super::chart::{Chart, ChartMap, DomainBox, Flattening};
use super::metric::{invert_spd, MetricField};
use super::{Matrix, Scenario, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct QuasiNormalParams {
    /// Spacing of the kernel grid.
    pub grid_step: f64,
    /// Kernel grid covers `[-kernel_radius, kernel_radius]`.
    pub kernel_radius: f64,
    /// Upper limit of the frequency integral defining `ℓ`.
    pub fourier_cutoff: f64,
    /// The cutoff `χ` equals 1 within this tangential distance of `m0`;
    /// the chart covers half of it.
    pub cutoff_radius: f64,
    /// Normal extent of the returned chart.
    pub z_max: f64,
}

impl Default for QuasiNormalParams {
    fn default() -> Self {
        Self { grid_step: 1.0 / 64.0, kernel_radius: 8.0, fourier_cutoff: 40.0, cutoff_radius: 1.0, z_max: 0.05 }
    }
}

const SMALL_Z: f64 = 1e-12;
const QN_FD_STEP: f64 = 1e-5;

/// Discretised convolution kernel `ℓ` on a uniform grid.
#[derive(Debug, Clone)]
pub struct SmoothingKernel {
    pub nodes: Vec<f64>,
    /// `ℓ(u_k)` times the trapezoid weight.
    pub weights: Vec<f64>,
    /// `Σ ℓ(u_k) w_k`; analytically 1.
    pub raw_mass: f64,
}

impl SmoothingKernel {
    pub fn new(step: f64, radius: f64, fourier_cutoff: f64) -> Result<Self> {
        if !(step > 0.0 && radius > step && fourier_cutoff > 0.0) {
            return Err(Error::Precondition("kernel step, radius and cutoff must be positive".into()));
        }
        let half = (radius / step).round() as usize;
        let values: Vec<f64> = (0..=half).map(|k| Self::ell_with(k as f64 * step, fourier_cutoff, radius)).collect();
        let mut nodes = Vec::with_capacity(2 * half + 1);
        let mut weights = Vec::with_capacity(2 * half + 1);
        for k in 0..=2 * half {
            let j = k as isize - half as isize;
            let w = if k == 0 || k == 2 * half { 0.5 * step } else { step };
            nodes.push(j as f64 * step);
            weights.push(values[j.unsigned_abs()] * w);
        }
        let raw_mass = weights.iter().sum();
        Ok(Self { nodes, weights, raw_mass })
    }

    /// `ℓ(x) = (1/π) ∫_0^K cos(xξ) e^{1 - sqrt(1+ξ²)} dξ` by composite Simpson.
    pub fn ell(x: f64, fourier_cutoff: f64) -> f64 {
        Self::ell_with(x, fourier_cutoff, x.abs().max(1.0))
    }

    fn ell_with(x: f64, cutoff: f64, max_x: f64) -> f64 {
        let dxi = (1.0 / 64.0f64).min(std::f64::consts::PI / (16.0 * max_x));
        let mut n = (cutoff / dxi).ceil() as usize;
        n += n % 2;
        let h = cutoff / n as f64;
        let f = |xi: f64| (x * xi).cos() * (1.0 - (1.0 + xi * xi).sqrt()).exp();
        let mut acc = f(0.0) + f(cutoff);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        acc * h / 3.0 / std::f64::consts::PI
    }
}

/// The map `(x', z) ↦ Φ(x', z)` in scenario coordinates.
#[derive(Debug, Clone)]
pub struct QuasiNormalMap {
    flattening: Flattening,
    base: Arc<dyn MetricField>,
    kernel: Arc<SmoothingKernel>,
    center: f64,
    cutoff_radius: f64,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

impl QuasiNormalMap {
    fn cutoff(&self, xp: f64) -> f64 {
        let r = (xp - self.center).abs();
        1.0 - smoothstep((r - self.cutoff_radius) / self.cutoff_radius)
    }

    /// Unit inward normal at `(x', 0)` in flattening coordinates.
    pub fn normal(&self, xp: f64) -> Vector {
        let y = Vector::from_vec(vec![xp, 0.0]);
        let j = self.flattening.jacobian(&y);
        let g0 = j.transpose() * self.base.g(&self.flattening.forward(&y)) * j;
        let gi = invert_spd(&g0);
        let col = gi.column(1).into_owned();
        col / gi[(1, 1)].sqrt()
    }

    /// The smoothed field `m(x', z)`.
    pub fn smoothed_normal(&self, xp: f64, z: f64) -> Vector {
        if z.abs() < SMALL_Z {
            return self.normal(xp) * self.cutoff(xp);
        }
        let a = z.abs();
        let mut acc = Vector::zeros(2);
        for (u, w) in self.kernel.nodes.iter().zip(&self.kernel.weights) {
            let q = xp - a * u;
            let c = self.cutoff(q);
            if c != 0.0 {
                acc += self.normal(q) * (c * w);
            }
        }
        acc / self.kernel.raw_mass
    }
}

impl ChartMap for QuasiNormalMap {
    fn dim(&self) -> usize {
        2
    }

    fn forward(&self, y: &Vector) -> Vector {
        let m = self.smoothed_normal(y[0], y[1]);
        let flat = Vector::from_vec(vec![y[0] + y[1] * m[0], y[1] * m[1]]);
        self.flattening.forward(&flat)
    }

    fn jacobian(&self, y: &Vector) -> Matrix {
        let mut j = Matrix::zeros(2, 2);
        for k in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += QN_FD_STEP;
            ym[k] -= QN_FD_STEP;
            j.set_column(k, &((self.forward(&yp) - self.forward(&ym)) / (2.0 * QN_FD_STEP)));
        }
        j
    }

    fn initial_guess(&self, x: &Vector) -> Vector {
        self.flattening.inverse(x).unwrap_or_else(|_| Vector::from_vec(vec![self.center, 0.0]))
    }
}

/// Build a quasi-normal chart around the boundary point `m0`.
///
/// The chart domain is `[x'0 - R/2, x'0 + R/2] × [0, z_max]` in `(x', z)`.
pub fn build_quasi_normal_chart(scenario: &Scenario, m0: &Vector, params: &QuasiNormalParams) -> Result<Chart> {
    if scenario.dim() != 2 {
        return Err(Error::Precondition("quasi-normal charts are implemented for planar scenarios".into()));
    }
    let phi = scenario.phi(m0);
    if phi.abs() > scenario.thresholds.boundary_tol {
        return Err(Error::NotOnBoundary { phi });
    }
    let kernel = SmoothingKernel::new(params.grid_step, params.kernel_radius, params.fourier_cutoff)?;
    if (kernel.raw_mass - 1.0).abs() > 0.01 {
        return Err(Error::SmoothingFailure { mass: kernel.raw_mass });
    }
    let flattening = scenario.boundary.flattening_at(m0);
    let center = flattening.inverse(m0)?[0];
    let map = QuasiNormalMap {
        flattening,
        base: scenario.metric.clone(),
        kernel: Arc::new(kernel),
        center,
        cutoff_radius: params.cutoff_radius,
    };
    let r = 0.5 * params.cutoff_radius;
    let domain = DomainBox::new(vec![center - r, 0.0], vec![center + r, params.z_max]);

    // rank check on a grid of the chart box
    let mut cond_min = f64::INFINITY;
    let mut det_sign = 0.0;
    for i in 0..5 {
        for k in 0..5 {
            let y = Vector::from_vec(vec![
                domain.lo[0] + (domain.hi[0] - domain.lo[0]) * i as f64 / 4.0,
                params.z_max * k as f64 / 4.0,
            ]);
            let j = map.jacobian(&y);
            let sv = j.clone().singular_values();
            let (lo, hi) = (sv.min(), sv.max());
            cond_min = cond_min.min(if hi > 0.0 { lo / hi } else { 0.0 });
            let det = j.determinant();
            if !det.is_finite() || (det_sign != 0.0 && det.signum() != det_sign) {
                return Err(Error::ChartDegenerate("Jacobian determinant changes sign on the chart box".into()));
            }
            det_sign = det.signum();
        }
    }
    if !(cond_min > 1e-6) {
        return Err(Error::ChartDegenerate(format!("Jacobian rank check failed (min σ ratio {cond_min:e})")));
    }
    Ok(Chart::new(format!("quasi_normal({:.6},{:.6})", m0[0], m0[1]), Arc::new(map), domain))
}
