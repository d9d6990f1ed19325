//! Boundary defining functions `φ` (positive inside) for the built-in
//! domains.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::chart::{DomainBox, Flattening};
use super::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryDef {
    /// `φ = x_d`.
    HalfPlane { dim: usize },
    /// `φ = x_2 (w - x_2) / w`.
    Strip { width: f64 },
    /// `φ = (R² - r²) / 2R`.
    DiskInterior { center: [f64; 2], radius: f64 },
    /// `φ = (r² - R²) / 2R`.
    DiskExterior { center: [f64; 2], radius: f64 },
    /// `φ = (r² - a²)(b² - r²) / (2a(b² - a²))`.
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
}

fn rel(center: &[f64; 2], x: &Vector) -> (f64, f64) {
    (x[0] - center[0], x[1] - center[1])
}

impl BoundaryDef {
    pub fn dim(&self) -> usize {
        match self {
            BoundaryDef::HalfPlane { dim } => *dim,
            _ => 2,
        }
    }

    pub fn phi(&self, x: &Vector) -> f64 {
        match self {
            BoundaryDef::HalfPlane { dim } => x[dim - 1],
            BoundaryDef::Strip { width } => x[1] * (width - x[1]) / width,
            BoundaryDef::DiskInterior { center, radius } => {
                let (a, b) = rel(center, x);
                (radius * radius - a * a - b * b) / (2.0 * radius)
            }
            BoundaryDef::DiskExterior { center, radius } => {
                let (a, b) = rel(center, x);
                (a * a + b * b - radius * radius) / (2.0 * radius)
            }
            BoundaryDef::Annulus { center, inner, outer } => {
                let (a, b) = rel(center, x);
                let r2 = a * a + b * b;
                (r2 - inner * inner) * (outer * outer - r2) / self.annulus_scale(*inner, *outer)
            }
        }
    }

    fn annulus_scale(&self, inner: f64, outer: f64) -> f64 {
        2.0 * inner * (outer * outer - inner * inner)
    }

    pub fn dphi(&self, x: &Vector) -> Vector {
        match self {
            BoundaryDef::HalfPlane { dim } => {
                let mut v = Vector::zeros(*dim);
                v[dim - 1] = 1.0;
                v
            }
            BoundaryDef::Strip { width } => Vector::from_vec(vec![0.0, (width - 2.0 * x[1]) / width]),
            BoundaryDef::DiskInterior { center, radius } => {
                let (a, b) = rel(center, x);
                Vector::from_vec(vec![-a / radius, -b / radius])
            }
            BoundaryDef::DiskExterior { center, radius } => {
                let (a, b) = rel(center, x);
                Vector::from_vec(vec![a / radius, b / radius])
            }
            BoundaryDef::Annulus { center, inner, outer } => {
                let (a, b) = rel(center, x);
                let r2 = a * a + b * b;
                // d/d(r²) of (r² - a²)(b² - r²)
                let dr2 = (outer * outer - r2) - (r2 - inner * inner);
                let c = 2.0 * dr2 / self.annulus_scale(*inner, *outer);
                Vector::from_vec(vec![c * a, c * b])
            }
        }
    }

    pub fn d2phi(&self, x: &Vector) -> Matrix {
        match self {
            BoundaryDef::HalfPlane { dim } => Matrix::zeros(*dim, *dim),
            BoundaryDef::Strip { width } => Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0 / width]),
            BoundaryDef::DiskInterior { radius, .. } => Matrix::identity(2, 2) * (-1.0 / radius),
            BoundaryDef::DiskExterior { radius, .. } => Matrix::identity(2, 2) * (1.0 / radius),
            BoundaryDef::Annulus { center, inner, outer } => {
                let (a, b) = rel(center, x);
                let r2 = a * a + b * b;
                let s = self.annulus_scale(*inner, *outer);
                let dr2 = (outer * outer - r2) - (r2 - inner * inner);
                // φ = F(r²): ∂_i∂_j φ = 2F' δ_ij + 4F'' x_i x_j with F'' = -2/s
                let f1 = dr2 / s;
                let f2 = -2.0 / s;
                let u = [a, b];
                Matrix::from_fn(2, 2, |i, j| 2.0 * f1 * if i == j { 1.0 } else { 0.0 } + 4.0 * f2 * u[i] * u[j])
            }
        }
    }

    /// Euclidean distance to the boundary, positive inside.
    pub fn distance(&self, x: &Vector) -> f64 {
        match self {
            BoundaryDef::HalfPlane { dim } => x[dim - 1],
            BoundaryDef::Strip { width } => x[1].min(width - x[1]),
            BoundaryDef::DiskInterior { center, radius } => {
                let (a, b) = rel(center, x);
                radius - a.hypot(b)
            }
            BoundaryDef::DiskExterior { center, radius } => {
                let (a, b) = rel(center, x);
                a.hypot(b) - radius
            }
            BoundaryDef::Annulus { center, inner, outer } => {
                let (a, b) = rel(center, x);
                let r = a.hypot(b);
                (r - inner).min(outer - r)
            }
        }
    }

    /// A flattening chart for the boundary component closest to `x`.
    /// In the chart, `x` has tangential coordinate 0 for curved components
    /// and `x'` itself for flat ones.
    pub fn flattening_at(&self, x: &Vector) -> Flattening {
        match self {
            BoundaryDef::HalfPlane { dim } => Flattening::Line { dim: *dim, offset: 0.0, sign: 1.0 },
            BoundaryDef::Strip { width } => {
                if x[1] <= width / 2.0 {
                    Flattening::Line { dim: 2, offset: 0.0, sign: 1.0 }
                } else {
                    Flattening::Line { dim: 2, offset: *width, sign: -1.0 }
                }
            }
            BoundaryDef::DiskInterior { center, radius } => {
                let (a, b) = rel(center, x);
                Flattening::Circle { center: *center, radius: *radius, sign: -1.0, theta0: b.atan2(a) }
            }
            BoundaryDef::DiskExterior { center, radius } => {
                let (a, b) = rel(center, x);
                Flattening::Circle { center: *center, radius: *radius, sign: 1.0, theta0: b.atan2(a) }
            }
            BoundaryDef::Annulus { center, inner, outer } => {
                let (a, b) = rel(center, x);
                let r = a.hypot(b);
                if r - inner <= outer - r {
                    Flattening::Circle { center: *center, radius: *inner, sign: 1.0, theta0: b.atan2(a) }
                } else {
                    Flattening::Circle { center: *center, radius: *outer, sign: -1.0, theta0: b.atan2(a) }
                }
            }
        }
    }

    /// Boundary points with a unit Euclidean tangent, `n` per component.
    /// Flat components are sampled over the tangential extent of `bbox`.
    pub fn boundary_frames(&self, bbox: &DomainBox, n: usize) -> Vec<(Vector, Vector)> {
        let n = n.max(1);
        let mut out = Vec::new();
        let line = |offset: f64, out: &mut Vec<(Vector, Vector)>| {
            let (lo, hi) = (bbox.lo[0], bbox.hi[0]);
            for k in 0..n {
                let u = lo + (hi - lo) * (k as f64 + 0.5) / n as f64;
                out.push((Vector::from_vec(vec![u, offset]), Vector::from_vec(vec![1.0, 0.0])));
            }
        };
        let circle = |c: &[f64; 2], r: f64, out: &mut Vec<(Vector, Vector)>| {
            for k in 0..n {
                let th = 2.0 * PI * k as f64 / n as f64;
                let (s, co) = th.sin_cos();
                out.push((Vector::from_vec(vec![c[0] + r * co, c[1] + r * s]), Vector::from_vec(vec![-s, co])));
            }
        };
        match self {
            BoundaryDef::HalfPlane { dim } => {
                if *dim == 2 {
                    line(0.0, &mut out);
                }
            }
            BoundaryDef::Strip { width } => {
                line(0.0, &mut out);
                line(*width, &mut out);
            }
            BoundaryDef::DiskInterior { center, radius } | BoundaryDef::DiskExterior { center, radius } => {
                circle(center, *radius, &mut out)
            }
            BoundaryDef::Annulus { center, inner, outer } => {
                circle(center, *inner, &mut out);
                circle(center, *outer, &mut out);
            }
        }
        out
    }

    pub fn boundary_samples(&self, bbox: &DomainBox, n: usize) -> Vec<Vector> {
        self.boundary_frames(bbox, n).into_iter().map(|(x, _)| x).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChartMap;

    fn all() -> Vec<BoundaryDef> {
        vec![
            BoundaryDef::HalfPlane { dim: 2 },
            BoundaryDef::Strip { width: 1.3 },
            BoundaryDef::DiskInterior { center: [0.1, -0.2], radius: 1.2 },
            BoundaryDef::DiskExterior { center: [0.0, 0.3], radius: 0.8 },
            BoundaryDef::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 1.1 },
        ]
    }

    #[test]
    fn derivatives_match_fd() {
        let h = 1e-5;
        for b in all() {
            for x in [[0.37, 0.41], [-0.6, 0.7], [0.9, -0.1]] {
                let x = Vector::from_vec(x.to_vec());
                let d = b.dphi(&x);
                let dd = b.d2phi(&x);
                for k in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (b.phi(&xp) - b.phi(&xm)) / (2.0 * h);
                    assert!((fd - d[k]).abs() < 1e-8, "{b:?} dphi");
                    let fd2 = (b.dphi(&xp) - b.dphi(&xm)) / (2.0 * h);
                    assert!((fd2 - dd.column(k)).amax() < 1e-7, "{b:?} d2phi");
                }
            }
        }
    }

    #[test]
    fn samples_lie_on_boundary_with_tangent_frames() {
        let bbox = DomainBox::cube(2, 2.0);
        for b in all() {
            for (x, t) in b.boundary_frames(&bbox, 16) {
                assert!(b.phi(&x).abs() < 1e-14, "{b:?}");
                assert!(b.dphi(&x).dot(&t).abs() < 1e-14);
                assert!(b.dphi(&x).norm() > 0.5);
            }
        }
    }

    #[test]
    fn flattening_maps_boundary_to_zero_level() {
        let bbox = DomainBox::cube(2, 2.0);
        for b in all() {
            for (x, _) in b.boundary_frames(&bbox, 8) {
                let f = b.flattening_at(&x);
                let y = f.inverse(&x).unwrap();
                assert!(y[1].abs() < 1e-12);
                // one step inward along the chart normal is inside the domain
                let mut yi = y.clone();
                yi[1] = 1e-3;
                assert!(b.phi(&f.forward(&yi)) > 0.0, "{b:?}");
            }
        }
    }

    #[test]
    fn unit_gradient_on_builtin_boundaries() {
        let bbox = DomainBox::cube(2, 2.0);
        for b in all().into_iter().take(4) {
            for x in b.boundary_samples(&bbox, 8) {
                assert!((b.dphi(&x).norm() - 1.0).abs() < 1e-14);
            }
        }
        assert!((BoundaryDef::Strip { width: 1.0 }.distance(&Vector::from_vec(vec![0.0, 0.8])) - 0.2).abs() < 1e-15);
    }
}
