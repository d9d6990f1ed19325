//! Chart maps between chart coordinates `y` and scenario coordinates `x`.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Matrix, Vector};
use crate::error::{Error, Result};

const JACOBIAN_FD_STEP: f64 = 1e-6;
const INVERSE_TOL: f64 = 1e-13;

/// Coordinate map `y ↦ x` with a locally defined inverse.
pub trait ChartMap: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn forward(&self, y: &Vector) -> Vector;

    /// Starting point for the Newton inverse.
    fn initial_guess(&self, x: &Vector) -> Vector {
        x.clone()
    }

    fn jacobian(&self, y: &Vector) -> Matrix {
        let n = self.dim();
        let mut j = Matrix::zeros(n, n);
        for k in 0..n {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += JACOBIAN_FD_STEP;
            ym[k] -= JACOBIAN_FD_STEP;
            let col = (self.forward(&yp) - self.forward(&ym)) / (2.0 * JACOBIAN_FD_STEP);
            j.set_column(k, &col);
        }
        j
    }

    fn inverse(&self, x: &Vector) -> Result<Vector> {
        let mut y = self.initial_guess(x);
        for _ in 0..50 {
            let r = self.forward(&y) - x;
            if r.amax() < INVERSE_TOL {
                return Ok(y);
            }
            let j = self.jacobian(&y);
            let step = j
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::ChartDegenerate("singular Jacobian in chart inverse".into()))?;
            y -= step;
        }
        let r = self.forward(&y) - x;
        if r.amax() < 1e-10 {
            Ok(y)
        } else {
            Err(Error::ChartDegenerate(format!("chart inverse did not converge (residual {:e})", r.amax())))
        }
    }
}

/// Axis-aligned box in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }

    pub fn contains(&self, y: &Vector) -> bool {
        y.len() == self.lo.len()
            && y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

/// A named chart: a coordinate map together with the box on which it is
/// declared valid.
#[derive(Debug, Clone)]
pub struct Chart {
    pub name: String,
    pub map: Arc<dyn ChartMap>,
    pub domain: DomainBox,
}

impl Chart {
    pub fn new(name: impl Into<String>, map: Arc<dyn ChartMap>, domain: DomainBox) -> Self {
        Self { name: name.into(), map, domain }
    }

    pub fn to_scenario_coords(&self, y: &Vector) -> Result<Vector> {
        if !self.domain.contains(y) {
            return Err(Error::OutOfChart { point: y.iter().copied().collect() });
        }
        Ok(self.map.forward(y))
    }

    pub fn to_chart_coords(&self, x: &Vector) -> Result<Vector> {
        let y = self.map.inverse(x)?;
        if !self.domain.contains(&y) {
            return Err(Error::OutOfChart { point: y.iter().copied().collect() });
        }
        Ok(y)
    }

    /// Largest `|map(inverse(x)) - x|` over the images of `samples`.
    pub fn roundtrip_error(&self, samples: &[Vector]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for y in samples {
            let x = self.map.forward(y);
            let y2 = self.map.inverse(&x)?;
            worst = worst.max((self.map.forward(&y2) - &x).amax());
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
pub struct IdentityMap {
    pub dim: usize,
}

impl ChartMap for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }
    fn forward(&self, y: &Vector) -> Vector {
        y.clone()
    }
    fn jacobian(&self, _y: &Vector) -> Matrix {
        Matrix::identity(self.dim, self.dim)
    }
    fn inverse(&self, x: &Vector) -> Result<Vector> {
        Ok(x.clone())
    }
}

/// Polar coordinates `(r, θ) ↦ c + r(cos θ, sin θ)`.
#[derive(Debug, Clone)]
pub struct PolarMap {
    pub center: [f64; 2],
}

impl ChartMap for PolarMap {
    fn dim(&self) -> usize {
        2
    }
    fn forward(&self, y: &Vector) -> Vector {
        Vector::from_vec(vec![self.center[0] + y[0] * y[1].cos(), self.center[1] + y[0] * y[1].sin()])
    }
    fn jacobian(&self, y: &Vector) -> Matrix {
        let (s, c) = y[1].sin_cos();
        Matrix::from_row_slice(2, 2, &[c, -y[0] * s, s, y[0] * c])
    }
    fn initial_guess(&self, x: &Vector) -> Vector {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        Vector::from_vec(vec![dx.hypot(dy), dy.atan2(dx)])
    }
    fn inverse(&self, x: &Vector) -> Result<Vector> {
        Ok(self.initial_guess(x))
    }
}

/// Chart in which one boundary component is `{y_d = 0}` and the domain
/// side is `{y_d > 0}`.
#[derive(Debug, Clone)]
pub enum Flattening {
    /// `x = (y', offset + sign·y_d)`.
    Line { dim: usize, offset: f64, sign: f64 },
    /// `x = c + (R + sign·y_d)(cos(θ0 + y'), sin(θ0 + y'))`.
    Circle { center: [f64; 2], radius: f64, sign: f64, theta0: f64 },
}

impl ChartMap for Flattening {
    fn dim(&self) -> usize {
        match self {
            Flattening::Line { dim, .. } => *dim,
            Flattening::Circle { .. } => 2,
        }
    }

    fn forward(&self, y: &Vector) -> Vector {
        match self {
            Flattening::Line { dim, offset, sign } => {
                let mut x = y.clone();
                x[dim - 1] = offset + sign * y[dim - 1];
                x
            }
            Flattening::Circle { center, radius, sign, theta0 } => {
                let r = radius + sign * y[1];
                let (s, c) = (theta0 + y[0]).sin_cos();
                Vector::from_vec(vec![center[0] + r * c, center[1] + r * s])
            }
        }
    }

    fn jacobian(&self, y: &Vector) -> Matrix {
        match self {
            Flattening::Line { dim, sign, .. } => {
                let mut j = Matrix::identity(*dim, *dim);
                j[(dim - 1, dim - 1)] = *sign;
                j
            }
            Flattening::Circle { radius, sign, theta0, .. } => {
                let r = radius + sign * y[1];
                let (s, c) = (theta0 + y[0]).sin_cos();
                Matrix::from_row_slice(2, 2, &[-r * s, sign * c, r * c, sign * s])
            }
        }
    }

    fn initial_guess(&self, x: &Vector) -> Vector {
        match self {
            Flattening::Line { dim, offset, sign } => {
                let mut y = x.clone();
                y[dim - 1] = (x[dim - 1] - offset) / sign;
                y
            }
            Flattening::Circle { center, radius, sign, theta0 } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let mut ang = dy.atan2(dx) - theta0;
                ang = (ang + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
                Vector::from_vec(vec![ang, (dx.hypot(dy) - radius) / sign])
            }
        }
    }

    fn inverse(&self, x: &Vector) -> Result<Vector> {
        Ok(self.initial_guess(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_jacobian_matches_fd() {
        #[derive(Debug)]
        struct NoAnalytic(PolarMap);
        impl ChartMap for NoAnalytic {
            fn dim(&self) -> usize {
                2
            }
            fn forward(&self, y: &Vector) -> Vector {
                self.0.forward(y)
            }
        }
        let m = PolarMap { center: [0.0, 0.0] };
        let y = Vector::from_vec(vec![0.7, 1.1]);
        let fd = NoAnalytic(m.clone()).jacobian(&y);
        assert!((fd - m.jacobian(&y)).amax() < 1e-9);
    }

    #[test]
    fn flattening_roundtrip() {
        let maps: Vec<Flattening> = vec![
            Flattening::Line { dim: 2, offset: 1.0, sign: -1.0 },
            Flattening::Circle { center: [0.1, -0.2], radius: 1.3, sign: -1.0, theta0: 0.4 },
            Flattening::Circle { center: [0.0, 0.0], radius: 1.0, sign: 1.0, theta0: -2.0 },
        ];
        for m in maps {
            let chart = Chart::new("flat", Arc::new(m), DomainBox::cube(2, 0.5));
            let samples: Vec<Vector> = (0..20)
                .map(|k| Vector::from_vec(vec![-0.4 + 0.04 * k as f64, 0.3 - 0.025 * k as f64]))
                .collect();
            assert!(chart.roundtrip_error(&samples).unwrap() < 1e-10);
        }
    }

    #[test]
    fn out_of_box_is_rejected() {
        let chart = Chart::new("id", Arc::new(IdentityMap { dim: 2 }), DomainBox::cube(2, 1.0));
        let err = chart.to_scenario_coords(&Vector::from_vec(vec![2.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::OutOfChart { .. }));
    }
}
