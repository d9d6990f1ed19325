//! Charts, metric algebra, boundary data and normals.

pub mod boundary;
pub mod chart;
pub mod metric;
pub mod quasi_normal;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boundary::BoundaryDef;
pub use chart::{Chart, ChartMap, DomainBox, Flattening, IdentityMap, PolarMap};
pub use metric::MetricField;
pub use quasi_normal::{build_quasi_normal_chart, QuasiNormalParams};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Numerical thresholds shared by classification, projection and tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `|H_p φ|` below this counts as tangential.
    pub eps_g: f64,
    /// `|H_p² φ|` below this counts as order-3 glancing.
    pub eps_g2: f64,
    /// `|p|` below this counts as characteristic.
    pub char_tol: f64,
    /// `|φ|` below this counts as on the boundary.
    pub boundary_tol: f64,
    /// Half-width of the band where `n*`, `π∥`, `Σ` and the gliding field
    /// are extended off the boundary.
    pub band: f64,
    /// `|dφ|` below this is reported as a degenerate normal.
    pub min_normal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { eps_g: 1e-7, eps_g2: 1e-7, char_tol: 1e-8, boundary_tol: 1e-9, band: 0.1, min_normal: 1e-10 }
    }
}

/// Potential `f(t, x)` in the transport equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    Constant { value: f64 },
    /// `c0 + ct·t + cx·x`.
    Affine { c0: f64, ct: f64, cx: Vec<f64> },
    /// `amplitude · sin(frequency · t)`.
    TimeSine { amplitude: f64, frequency: f64 },
}

impl Default for Potential {
    fn default() -> Self {
        Potential::Zero
    }
}

impl Potential {
    pub fn eval(&self, t: f64, x: &Vector) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Constant { value } => *value,
            Potential::Affine { c0, ct, cx } => c0 + ct * t + cx.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>(),
            Potential::TimeSine { amplitude, frequency } => amplitude * (frequency * t).sin(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }
}

/// Metric data at one point.
#[derive(Debug, Clone)]
pub struct MetricEval {
    pub g: Matrix,
    pub g_inv: Matrix,
    /// `dg[k] = ∂_k g`.
    pub dg: Vec<Matrix>,
    /// `dg_inv[k] = ∂_k g^{-1}`.
    pub dg_inv: Vec<Matrix>,
}

impl MetricEval {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

/// A domain with boundary in one chart: metric, boundary defining
/// function, optional potential, and the box where everything is valid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub metric: Arc<dyn MetricField>,
    pub boundary: BoundaryDef,
    pub potential: Potential,
    pub domain: DomainBox,
    /// Bounded region used by samplers (GCC starts, validation grids).
    pub sample_box: DomainBox,
    pub thresholds: Thresholds,
}

impl Scenario {
    pub fn new(name: impl Into<String>, metric: Arc<dyn MetricField>, boundary: BoundaryDef, domain: DomainBox) -> Self {
        let sample_box = domain.clone();
        Self {
            name: name.into(),
            metric,
            boundary,
            potential: Potential::Zero,
            domain,
            sample_box,
            thresholds: Thresholds::default(),
        }
    }

    fn euclid(dim: usize) -> Arc<dyn MetricField> {
        Arc::new(metric::Identity { dim })
    }

    /// `{x_2 ≥ 0}` with the flat metric.
    pub fn half_plane() -> Self {
        let mut s = Self::new(
            "half_plane",
            Self::euclid(2),
            BoundaryDef::HalfPlane { dim: 2 },
            DomainBox::new(vec![-50.0, -1.0], vec![50.0, 50.0]),
        );
        s.sample_box = DomainBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]);
        s
    }

    /// `{0 ≤ x_2 ≤ width}` with the flat metric.
    pub fn strip(width: f64) -> Self {
        let mut s = Self::new(
            "strip",
            Self::euclid(2),
            BoundaryDef::Strip { width },
            DomainBox::new(vec![-50.0, -0.5], vec![50.0, width + 0.5]),
        );
        s.sample_box = DomainBox::new(vec![-1.0, 0.0], vec![1.0, width]);
        s
    }

    /// Disk `{|x - c| ≤ R}` centred at the origin.
    pub fn disk_interior(radius: f64) -> Self {
        let w = radius + 0.5;
        let mut s = Self::new(
            "disk_interior",
            Self::euclid(2),
            BoundaryDef::DiskInterior { center: [0.0, 0.0], radius },
            DomainBox::cube(2, w),
        );
        s.sample_box = DomainBox::cube(2, radius);
        s
    }

    /// Exterior of the disk of radius `R`, truncated to a box.
    pub fn disk_exterior(radius: f64) -> Self {
        let w = 4.0 * radius;
        let mut s = Self::new(
            "disk_exterior",
            Self::euclid(2),
            BoundaryDef::DiskExterior { center: [0.0, 0.0], radius },
            DomainBox::cube(2, w),
        );
        s.sample_box = DomainBox::cube(2, 2.0 * radius);
        s
    }

    /// `{a ≤ |x| ≤ b}`.
    pub fn annulus(inner: f64, outer: f64) -> Self {
        let w = outer + 0.5;
        let mut s = Self::new(
            "annulus",
            Self::euclid(2),
            BoundaryDef::Annulus { center: [0.0, 0.0], inner, outer },
            DomainBox::cube(2, w),
        );
        s.sample_box = DomainBox::cube(2, outer);
        s
    }

    /// Built-in scenario with default parameters.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "half_plane" => Ok(Self::half_plane()),
            "strip" => Ok(Self::strip(1.0)),
            "disk_interior" => Ok(Self::disk_interior(1.0)),
            "disk_exterior" => Ok(Self::disk_exterior(1.0)),
            "annulus" => Ok(Self::annulus(0.5, 1.0)),
            other => Err(Error::Config(format!("unknown built-in scenario '{other}'"))),
        }
    }

    pub const BUILTINS: [&'static str; 5] = ["half_plane", "strip", "disk_interior", "disk_exterior", "annulus"];

    pub fn with_metric(mut self, metric: Arc<dyn MetricField>) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_potential(mut self, potential: Potential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        self.domain.contains(x)
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfChart { point: x.iter().copied().collect() })
        }
    }

    /// `g`, `g^{-1}` and their first derivatives at `x`.
    pub fn metric_at(&self, x: &Vector) -> Result<MetricEval> {
        self.check(x)?;
        let g = self.metric.g(x);
        let g_inv = self.metric.g_inv(x);
        let dg = self.metric.dg(x);
        let dg_inv = metric::dg_inv(&g_inv, &dg);
        Ok(MetricEval { g, g_inv, dg, dg_inv })
    }

    /// `(ξ^♯)^i = g^{ij} ξ_j`.
    pub fn sharp(&self, x: &Vector, xi: &Vector) -> Result<Vector> {
        self.check(x)?;
        Ok(self.metric.g_inv(x) * xi)
    }

    /// `(v^♭)_i = g_{ij} v^j`.
    pub fn flat(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        self.check(x)?;
        Ok(self.metric.g(x) * v)
    }

    /// `g*_x(ξ, η)`.
    pub fn co_inner(&self, x: &Vector, xi: &Vector, eta: &Vector) -> Result<f64> {
        self.check(x)?;
        Ok(xi.dot(&(self.metric.g_inv(x) * eta)))
    }

    pub fn phi(&self, x: &Vector) -> f64 {
        self.boundary.phi(x)
    }

    /// Unit inward conormal `n* = dφ / |dφ|_{g*}` extended to the band
    /// around the boundary, together with `|dφ|_{g*}`.
    pub fn conormal(&self, x: &Vector) -> Result<(Vector, f64)> {
        self.check(x)?;
        let dphi = self.boundary.dphi(x);
        let norm = dphi.dot(&(self.metric.g_inv(x) * &dphi)).sqrt();
        if !(norm > self.thresholds.min_normal) {
            return Err(Error::DegenerateNormal { norm });
        }
        Ok((dphi / norm, norm))
    }

    /// Unit inward normal `n` and conormal `n*` at a boundary point.
    pub fn unit_normal(&self, x: &Vector) -> Result<(Vector, Vector)> {
        self.check(x)?;
        let phi = self.phi(x);
        if phi.abs() > self.thresholds.boundary_tol {
            return Err(Error::NotOnBoundary { phi });
        }
        let (n_star, _) = self.conormal(x)?;
        let n = self.metric.g_inv(x) * &n_star;
        Ok((n, n_star))
    }

    /// Check positivity of `g` on a grid of the sample box and that `dφ`
    /// does not vanish on sampled boundary points.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.domain.dim() != d || self.sample_box.dim() != d || self.boundary.dim() != d {
            return Err(Error::Config(format!("dimension mismatch in scenario '{}'", self.name)));
        }
        let n = 9usize;
        let mut idx = vec![0usize; d];
        loop {
            let x = Vector::from_iterator(
                d,
                (0..d).map(|k| {
                    let (lo, hi) = (self.sample_box.lo[k], self.sample_box.hi[k]);
                    lo + (hi - lo) * idx[k] as f64 / (n - 1) as f64
                }),
            );
            if self.domain.contains(&x) {
                let g = self.metric.g(&x);
                let sym = (&g - g.transpose()).amax();
                let min_eig = g.clone().symmetric_eigenvalues().min();
                if sym > 1e-12 || !(min_eig > 0.0) {
                    return Err(Error::Config(format!("metric is not positive definite at {:?}", x.as_slice())));
                }
            }
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        for x in self.boundary.boundary_samples(&self.sample_box, 64) {
            if !self.domain.contains(&x) {
                continue;
            }
            let norm = self.boundary.dphi(&x).norm();
            if !(norm > self.thresholds.min_normal) {
                return Err(Error::DegenerateNormal { norm });
            }
        }
        Ok(())
    }

    /// The same scenario expressed in the coordinates of `chart`.
    ///
    /// The boundary is taken to be `{y_d = 0}` with `y_d > 0` inside, which
    /// holds for flattening and quasi-normal charts near the boundary. The
    /// potential is dropped.
    pub fn pulled_back(&self, chart: &Chart) -> Scenario {
        let d = self.dim();
        let metric = Arc::new(metric::Pullback { base: self.metric.clone(), map: chart.map.clone() });
        Scenario {
            name: format!("{}@{}", self.name, chart.name),
            metric,
            boundary: BoundaryDef::HalfPlane { dim: d },
            potential: Potential::Zero,
            domain: chart.domain.clone(),
            sample_box: chart.domain.clone(),
            thresholds: self.thresholds,
        }
    }
}
