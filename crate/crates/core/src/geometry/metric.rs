//! Metric evaluators: `g`, its inverse and its first derivatives.

use std::fmt::Debug;
use std::sync::Arc;

use super::chart::ChartMap;
use super::{Matrix, Vector};

/// Central-difference step used when a metric does not supply analytic
/// derivatives.
pub const METRIC_FD_STEP: f64 = 1e-5;

/// A C¹ Riemannian metric given in one chart.
pub trait MetricField: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn g(&self, x: &Vector) -> Matrix;

    fn g_inv(&self, x: &Vector) -> Matrix {
        invert_spd(&self.g(x))
    }

    /// `dg[k][(i, j)] = ∂_{x_k} g_{ij}(x)`.
    fn dg(&self, x: &Vector) -> Vec<Matrix> {
        central_dg(self, x, METRIC_FD_STEP)
    }
}

/// Central finite-difference approximation of `∂_k g`.
pub fn central_dg<M: MetricField + ?Sized>(metric: &M, x: &Vector, step: f64) -> Vec<Matrix> {
    (0..metric.dim())
        .map(|k| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            (metric.g(&xp) - metric.g(&xm)) / (2.0 * step)
        })
        .collect()
}

pub(crate) fn invert_spd(g: &Matrix) -> Matrix {
    let n = g.nrows();
    if n == 2 {
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        return Matrix::from_row_slice(
            2,
            2,
            &[g[(1, 1)] / det, -g[(0, 1)] / det, -g[(1, 0)] / det, g[(0, 0)] / det],
        );
    }
    match g.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => g
            .clone()
            .try_inverse()
            .unwrap_or_else(|| Matrix::from_element(n, n, f64::NAN)),
    }
}

/// `∂_k g^{-1} = -g^{-1} (∂_k g) g^{-1}`.
pub fn dg_inv(g_inv: &Matrix, dg: &[Matrix]) -> Vec<Matrix> {
    dg.iter().map(|d| -(g_inv * d * g_inv)).collect()
}

#[derive(Debug, Clone)]
pub struct Identity {
    pub dim: usize,
}

impl MetricField for Identity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn g(&self, _x: &Vector) -> Matrix {
        Matrix::identity(self.dim, self.dim)
    }
    fn g_inv(&self, _x: &Vector) -> Matrix {
        Matrix::identity(self.dim, self.dim)
    }
    fn dg(&self, _x: &Vector) -> Vec<Matrix> {
        vec![Matrix::zeros(self.dim, self.dim); self.dim]
    }
}

/// Position-independent metric (covers the diagonal case).
#[derive(Debug, Clone)]
pub struct Constant {
    g: Matrix,
    g_inv: Matrix,
}

impl Constant {
    pub fn new(g: Matrix) -> Self {
        let g_inv = invert_spd(&g);
        Self { g, g_inv }
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(entries)))
    }
}

impl MetricField for Constant {
    fn dim(&self) -> usize {
        self.g.nrows()
    }
    fn g(&self, _x: &Vector) -> Matrix {
        self.g.clone()
    }
    fn g_inv(&self, _x: &Vector) -> Matrix {
        self.g_inv.clone()
    }
    fn dg(&self, _x: &Vector) -> Vec<Matrix> {
        let n = self.dim();
        vec![Matrix::zeros(n, n); n]
    }
}

/// Conformally flat metric `(1 + a·exp(-|x-c|²/w²)) δ_ij`, a smooth
/// perturbation of the flat metric with analytic derivatives.
#[derive(Debug, Clone)]
pub struct ConformalBump {
    pub amplitude: f64,
    pub center: Vector,
    pub width: f64,
}

impl ConformalBump {
    fn bump(&self, x: &Vector) -> f64 {
        let r2 = (x - &self.center).norm_squared();
        self.amplitude * (-r2 / (self.width * self.width)).exp()
    }
}

impl MetricField for ConformalBump {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn g(&self, x: &Vector) -> Matrix {
        let n = self.dim();
        Matrix::identity(n, n) * (1.0 + self.bump(x))
    }
    fn g_inv(&self, x: &Vector) -> Matrix {
        let n = self.dim();
        Matrix::identity(n, n) / (1.0 + self.bump(x))
    }
    fn dg(&self, x: &Vector) -> Vec<Matrix> {
        let n = self.dim();
        let b = self.bump(x);
        let w2 = self.width * self.width;
        (0..n)
            .map(|k| Matrix::identity(n, n) * (-2.0 * (x[k] - self.center[k]) / w2 * b))
            .collect()
    }
}

/// Planar metric sampled on a regular grid and interpolated by bicubic
/// Hermite patches (slopes from finite differences), which is C¹.
#[derive(Debug, Clone)]
pub struct GridTable {
    origin: [f64; 2],
    spacing: [f64; 2],
    shape: [usize; 2],
    /// g11, g12, g22, each row-major with `x` varying fastest.
    components: [Vec<f64>; 3],
}

impl GridTable {
    pub fn new(
        x_range: [f64; 2],
        y_range: [f64; 2],
        shape: [usize; 2],
        components: [Vec<f64>; 3],
    ) -> Result<Self, String> {
        let [nx, ny] = shape;
        if nx < 2 || ny < 2 {
            return Err("metric table needs at least 2 samples per axis".into());
        }
        for c in &components {
            if c.len() != nx * ny {
                return Err(format!("metric table component has {} entries, expected {}", c.len(), nx * ny));
            }
        }
        if !(x_range[1] > x_range[0] && y_range[1] > y_range[0]) {
            return Err("metric table ranges must be increasing".into());
        }
        Ok(Self {
            origin: [x_range[0], y_range[0]],
            spacing: [
                (x_range[1] - x_range[0]) / (nx - 1) as f64,
                (y_range[1] - y_range[0]) / (ny - 1) as f64,
            ],
            shape,
            components,
        })
    }

    /// Sample a closure on the grid.
    pub fn from_fn(
        x_range: [f64; 2],
        y_range: [f64; 2],
        shape: [usize; 2],
        f: impl Fn(f64, f64) -> [f64; 3],
    ) -> Result<Self, String> {
        let [nx, ny] = shape;
        let mut comps = [Vec::with_capacity(nx * ny), Vec::with_capacity(nx * ny), Vec::with_capacity(nx * ny)];
        for j in 0..ny {
            for i in 0..nx {
                let x = x_range[0] + (x_range[1] - x_range[0]) * i as f64 / (nx - 1) as f64;
                let y = y_range[0] + (y_range[1] - y_range[0]) * j as f64 / (ny - 1) as f64;
                let v = f(x, y);
                for c in 0..3 {
                    comps[c].push(v[c]);
                }
            }
        }
        Self::new(x_range, y_range, shape, comps)
    }

    fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.components[c][j * self.shape[0] + i]
    }

    fn slope_x(&self, c: usize, i: usize, j: usize) -> f64 {
        let nx = self.shape[0];
        let (a, b) = if i == 0 { (0, 1) } else if i == nx - 1 { (nx - 2, nx - 1) } else { (i - 1, i + 1) };
        (self.at(c, b, j) - self.at(c, a, j)) / ((b - a) as f64 * self.spacing[0])
    }

    fn slope_y(&self, c: usize, i: usize, j: usize) -> f64 {
        let ny = self.shape[1];
        let (a, b) = if j == 0 { (0, 1) } else if j == ny - 1 { (ny - 2, ny - 1) } else { (j - 1, j + 1) };
        (self.at(c, i, b) - self.at(c, i, a)) / ((b - a) as f64 * self.spacing[1])
    }

    fn slope_xy(&self, c: usize, i: usize, j: usize) -> f64 {
        let ny = self.shape[1];
        let (a, b) = if j == 0 { (0, 1) } else if j == ny - 1 { (ny - 2, ny - 1) } else { (j - 1, j + 1) };
        (self.slope_x(c, i, b) - self.slope_x(c, i, a)) / ((b - a) as f64 * self.spacing[1])
    }

    fn cell(&self, x: f64, axis: usize) -> (usize, f64) {
        let n = self.shape[axis];
        let u = ((x - self.origin[axis]) / self.spacing[axis]).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        (i, u - i as f64)
    }

    /// Value and gradient of component `c`.
    fn eval(&self, c: usize, x: f64, y: f64) -> (f64, f64, f64) {
        let (i, u) = self.cell(x, 0);
        let (j, v) = self.cell(y, 1);
        let [hx, hy] = self.spacing;
        let bu = hermite(u);
        let bv = hermite(v);
        let (mut f, mut fx, mut fy) = (0.0, 0.0, 0.0);
        for (a, ia) in [(0usize, i), (1, i + 1)] {
            for (b, jb) in [(0usize, j), (1, j + 1)] {
                let coeffs = [
                    (self.at(c, ia, jb), bu.val[a], bv.val[b], bu.der[a], bv.der[b]),
                    (self.slope_x(c, ia, jb) * hx, bu.val[a + 2], bv.val[b], bu.der[a + 2], bv.der[b]),
                    (self.slope_y(c, ia, jb) * hy, bu.val[a], bv.val[b + 2], bu.der[a], bv.der[b + 2]),
                    (self.slope_xy(c, ia, jb) * hx * hy, bu.val[a + 2], bv.val[b + 2], bu.der[a + 2], bv.der[b + 2]),
                ];
                for (w, pu, pv, du, dv) in coeffs {
                    f += w * pu * pv;
                    fx += w * du * pv / hx;
                    fy += w * pu * dv / hy;
                }
            }
        }
        (f, fx, fy)
    }
}

struct HermiteBasis {
    /// [h00, h01, h10, h11]: value basis at node 0/1 then slope basis at node 0/1.
    val: [f64; 4],
    der: [f64; 4],
}

fn hermite(t: f64) -> HermiteBasis {
    let t2 = t * t;
    let t3 = t2 * t;
    HermiteBasis {
        val: [2.0 * t3 - 3.0 * t2 + 1.0, -2.0 * t3 + 3.0 * t2, t3 - 2.0 * t2 + t, t3 - t2],
        der: [6.0 * t2 - 6.0 * t, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, 3.0 * t2 - 2.0 * t],
    }
}

impl MetricField for GridTable {
    fn dim(&self) -> usize {
        2
    }
    fn g(&self, x: &Vector) -> Matrix {
        let g11 = self.eval(0, x[0], x[1]).0;
        let g12 = self.eval(1, x[0], x[1]).0;
        let g22 = self.eval(2, x[0], x[1]).0;
        Matrix::from_row_slice(2, 2, &[g11, g12, g12, g22])
    }
    fn dg(&self, x: &Vector) -> Vec<Matrix> {
        let e: Vec<(f64, f64, f64)> = (0..3).map(|c| self.eval(c, x[0], x[1])).collect();
        let dx = Matrix::from_row_slice(2, 2, &[e[0].1, e[1].1, e[1].1, e[2].1]);
        let dy = Matrix::from_row_slice(2, 2, &[e[0].2, e[1].2, e[1].2, e[2].2]);
        vec![dx, dy]
    }
}

/// Pullback `J(y)^T g(F(y)) J(y)` of a metric through a chart map `F`.
/// Derivatives are taken by central differences.
#[derive(Debug, Clone)]
pub struct Pullback {
    pub base: Arc<dyn MetricField>,
    pub map: Arc<dyn ChartMap>,
}

impl MetricField for Pullback {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn g(&self, y: &Vector) -> Matrix {
        let x = self.map.forward(y);
        let j = self.map.jacobian(y);
        j.transpose() * self.base.g(&x) * j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_inverse_matches_hand_computation() {
        let m = Constant::new(Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let gi = m.g_inv(&Vector::zeros(2));
        // det = 1.75
        assert_relative_eq!(gi[(0, 0)], 1.0 / 1.75, epsilon = 1e-12);
        assert_relative_eq!(gi[(0, 1)], -0.5 / 1.75, epsilon = 1e-12);
        assert_relative_eq!(gi[(1, 1)], 2.0 / 1.75, epsilon = 1e-12);
        assert!((gi[(0, 0)] - 0.5714).abs() < 5e-5);
        assert!((gi[(0, 1)] + 0.2857).abs() < 5e-5);
        assert!((gi[(1, 1)] - 1.1429).abs() < 5e-5);
    }

    #[test]
    fn conformal_bump_derivative_matches_fd() {
        let m = ConformalBump { amplitude: 0.3, center: Vector::from_vec(vec![0.2, -0.1]), width: 0.7 };
        let x = Vector::from_vec(vec![0.4, 0.3]);
        let analytic = m.dg(&x);
        let fd = central_dg(&m, &x, 1e-5);
        for k in 0..2 {
            assert!((&analytic[k] - &fd[k]).amax() < 1e-9);
        }
    }

    #[test]
    fn grid_table_reproduces_quadratic_and_is_c1() {
        let f = |x: f64, y: f64| [1.0 + 0.1 * x * x, 0.05 * x * y, 1.0 + 0.2 * y];
        let t = GridTable::from_fn([-1.0, 1.0], [-1.0, 1.0], [41, 41], f).unwrap();
        let x = Vector::from_vec(vec![0.313, -0.271]);
        let g = t.g(&x);
        let exact = f(x[0], x[1]);
        assert!((g[(0, 0)] - exact[0]).abs() < 1e-4);
        assert!((g[(0, 1)] - exact[1]).abs() < 1e-4);
        assert!((g[(1, 1)] - exact[2]).abs() < 1e-9);
        let analytic = t.dg(&x);
        let fd = central_dg(&t, &x, 1e-6);
        for k in 0..2 {
            assert!((&analytic[k] - &fd[k]).amax() < 1e-6);
        }
        // derivative continuous across a cell edge
        let h = 2.0 / 40.0;
        let edge = -1.0 + 17.0 * h;
        let l = t.dg(&Vector::from_vec(vec![edge - 1e-9, 0.1]));
        let r = t.dg(&Vector::from_vec(vec![edge + 1e-9, 0.1]));
        assert!((&l[0] - &r[0]).amax() < 1e-6);
    }
}
