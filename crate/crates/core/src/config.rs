//! TOML scenario files.
//!
//! ```toml
//! schema = 1
//! builtin = "strip"
//!
//! [boundary]
//! kind = "strip"
//! width = 1.0
//!
//! [metric]
//! kind = "table"
//! x_range = [-2.0, 2.0]
//! y_range = [-0.5, 1.5]
//! shape = [41, 21]
//! g11 = "1.0 + 0.1 * y"
//! g12 = "0.0"
//! g22 = "1.0"
//!
//! [start]
//! x = [0.0, 1.0]
//! direction = [0.0, -1.0]
//! ```

use std::path::Path;
use std::sync::Arc;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};

use crate::flow::IntegratorParams;
use crate::gcc::{GccSampler, ObservationRegion};
use crate::geometry::chart::DomainBox;
use crate::geometry::metric::{ConformalBump, Constant, GridTable, Identity, MetricField};
use crate::geometry::quasi_normal::QuasiNormalParams;
use crate::geometry::{BoundaryDef, Matrix, Potential, Scenario, Thresholds, Vector};
use crate::measures::{ChiBetaBump, RadialBump, TestFunction};
use crate::symbol::{co_norm, PhasePoint};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// A table component: explicit samples or an expression in `x`, `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableEntry {
    Values(Vec<f64>),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Identity,
    Diagonal { entries: Vec<f64> },
    Constant { matrix: Vec<Vec<f64>> },
    ConformalBump { amplitude: f64, center: Vec<f64>, width: f64 },
    Table { x_range: [f64; 2], y_range: [f64; 2], shape: [usize; 2], g11: TableEntry, g12: TableEntry, g22: TableEntry },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSpec {
    fn to_box(&self, what: &str) -> Result<DomainBox> {
        if self.lo.len() != self.hi.len() || self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(cfg(format!("[{what}] needs lo < hi componentwise")));
        }
        Ok(DomainBox::new(self.lo.clone(), self.hi.clone()))
    }
}

/// Start point. Give either `xi` or a Euclidean `direction`; the latter is
/// turned into a unit covector so the start is characteristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    #[serde(default)]
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(default = "one")]
    pub tau: f64,
    pub xi: Option<Vec<f64>>,
    pub direction: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

impl StartSpec {
    pub fn to_phase_point(&self, sc: &Scenario) -> Result<PhasePoint> {
        let d = sc.dim();
        if self.x.len() != d {
            return Err(cfg(format!("[start] x has {} entries, expected {d}", self.x.len())));
        }
        let x = Vector::from_column_slice(&self.x);
        let xi = match (&self.xi, &self.direction) {
            (Some(xi), None) if xi.len() == d => Vector::from_column_slice(xi),
            (None, Some(v)) if v.len() == d => {
                let covec = sc.flat(&x, &Vector::from_column_slice(v))?;
                let n = co_norm(sc, &x, &covec)?;
                if !(n > 0.0) {
                    return Err(cfg("[start] direction is zero"));
                }
                covec * (self.tau.abs() / n)
            }
            _ => return Err(cfg(format!("[start] needs exactly one of xi, direction with {d} entries"))),
        };
        Ok(PhasePoint { t: self.t, x, tau: self.tau, xi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    All,
    Below { axis: usize, value: f64 },
    Above { axis: usize, value: f64 },
    Collar { width: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl RegionSpec {
    pub fn to_region(&self) -> ObservationRegion {
        match self.clone() {
            RegionSpec::All => ObservationRegion::All,
            RegionSpec::Below { axis, value } => ObservationRegion::Below { axis, value },
            RegionSpec::Above { axis, value } => ObservationRegion::Above { axis, value },
            RegionSpec::Collar { width } => ObservationRegion::Collar { width },
            RegionSpec::Ball { center, radius } => ObservationRegion::Ball { center, radius },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    ChiBeta {
        x_center: Vec<f64>,
        x_radius: f64,
        direction: Vec<f64>,
        #[serde(default)]
        beta_shift: f64,
        #[serde(default = "one")]
        beta_scale: f64,
        time: Option<[f64; 2]>,
    },
    Radial { x_center: Vec<f64>, xi_center: Vec<f64>, x_radius: f64, xi_radius: f64 },
}

impl TestFunctionSpec {
    pub fn build(&self) -> Box<dyn TestFunction> {
        let v = |a: &[f64]| Vector::from_column_slice(a);
        match self {
            TestFunctionSpec::ChiBeta { x_center, x_radius, direction, beta_shift, beta_scale, time } => {
                Box::new(ChiBetaBump {
                    x_center: v(x_center),
                    x_radius: *x_radius,
                    direction: v(direction),
                    beta_shift: *beta_shift,
                    beta_scale: *beta_scale,
                    time: time.map(|[a, b]| (a, b)),
                })
            }
            TestFunctionSpec::Radial { x_center, xi_center, x_radius, xi_radius } => Box::new(RadialBump {
                x_center: v(x_center),
                xi_center: v(xi_center),
                x_radius: *x_radius,
                xi_radius: *xi_radius,
            }),
        }
    }
}

/// Raw contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub name: Option<String>,
    pub builtin: Option<String>,
    pub boundary: Option<BoundaryDef>,
    pub metric: Option<MetricSpec>,
    pub potential: Option<Potential>,
    pub domain: Option<BoxSpec>,
    pub sample_box: Option<BoxSpec>,
    pub thresholds: Option<Thresholds>,
    pub start: Option<StartSpec>,
    pub region: Option<RegionSpec>,
    pub test_function: Option<TestFunctionSpec>,
    pub integrator: Option<IntegratorParams>,
    pub gcc: Option<GccSampler>,
    pub quasi_normal: Option<QuasiNormalParams>,
}

/// A validated scenario file.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub start: Option<PhasePoint>,
    pub region: Option<RegionSpec>,
    pub test_function: Option<TestFunctionSpec>,
    pub integrator: IntegratorParams,
    pub gcc: GccSampler,
    pub quasi_normal: QuasiNormalParams,
}

fn shifted(mut s: Scenario, c: &[f64; 2]) -> Scenario {
    for b in [&mut s.domain, &mut s.sample_box] {
        for k in 0..2 {
            b.lo[k] += c[k];
            b.hi[k] += c[k];
        }
    }
    s
}

/// Built-in shaped scenario whose domain boxes fit `b`.
fn base_for_boundary(b: &BoundaryDef) -> Result<Scenario> {
    let mut s = match b {
        BoundaryDef::HalfPlane { dim } if *dim == 2 => Scenario::half_plane(),
        BoundaryDef::HalfPlane { dim } => {
            let d = *dim;
            let mut lo = vec![-50.0; d];
            lo[d - 1] = -1.0;
            let mut s = Scenario::new("half_plane", Arc::new(Identity { dim: d }), b.clone(), DomainBox::new(lo, vec![50.0; d]));
            let mut slo = vec![-1.0; d];
            slo[d - 1] = 0.0;
            s.sample_box = DomainBox::new(slo, vec![1.0; d]);
            s
        }
        BoundaryDef::Strip { width } => Scenario::strip(*width),
        BoundaryDef::DiskInterior { center, radius } => shifted(Scenario::disk_interior(*radius), center),
        BoundaryDef::DiskExterior { center, radius } => shifted(Scenario::disk_exterior(*radius), center),
        BoundaryDef::Annulus { center, inner, outer } => shifted(Scenario::annulus(*inner, *outer), center),
    };
    s.boundary = b.clone();
    Ok(s)
}

fn sample_entry(e: &TableEntry, name: &str, xr: [f64; 2], yr: [f64; 2], shape: [usize; 2]) -> Result<Vec<f64>> {
    let [nx, ny] = shape;
    match e {
        TableEntry::Values(v) => Ok(v.clone()),
        TableEntry::Expr(src) => {
            let tree: Node<DefaultNumericTypes> =
                evalexpr::build_operator_tree(src).map_err(|e| cfg(format!("metric {name}: {e}")))?;
            let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let x = xr[0] + (xr[1] - xr[0]) * i as f64 / (nx.max(2) - 1) as f64;
                    let y = yr[0] + (yr[1] - yr[0]) * j as f64 / (ny.max(2) - 1) as f64;
                    ctx.set_value("x".into(), Value::Float(x)).map_err(|e| cfg(e.to_string()))?;
                    ctx.set_value("y".into(), Value::Float(y)).map_err(|e| cfg(e.to_string()))?;
                    let v = tree
                        .eval_number_with_context(&ctx)
                        .map_err(|e| cfg(format!("metric {name} at ({x}, {y}): {e}")))?;
                    out.push(v);
                }
            }
            Ok(out)
        }
    }
}

impl MetricSpec {
    pub fn build(&self, dim: usize) -> Result<Arc<dyn MetricField>> {
        let check = |n: usize| {
            if n == dim {
                Ok(())
            } else {
                Err(cfg(format!("metric has dimension {n}, boundary needs {dim}")))
            }
        };
        Ok(match self {
            MetricSpec::Identity => Arc::new(Identity { dim }),
            MetricSpec::Diagonal { entries } => {
                check(entries.len())?;
                Arc::new(Constant::diagonal(entries))
            }
            MetricSpec::Constant { matrix } => {
                check(matrix.len())?;
                if matrix.iter().any(|r| r.len() != dim) {
                    return Err(cfg("metric matrix must be square"));
                }
                Arc::new(Constant::new(Matrix::from_fn(dim, dim, |i, j| matrix[i][j])))
            }
            MetricSpec::ConformalBump { amplitude, center, width } => {
                check(center.len())?;
                Arc::new(ConformalBump { amplitude: *amplitude, center: Vector::from_column_slice(center), width: *width })
            }
            MetricSpec::Table { x_range, y_range, shape, g11, g12, g22 } => {
                check(2)?;
                let comps = [
                    sample_entry(g11, "g11", *x_range, *y_range, *shape)?,
                    sample_entry(g12, "g12", *x_range, *y_range, *shape)?,
                    sample_entry(g22, "g22", *x_range, *y_range, *shape)?,
                ];
                Arc::new(GridTable::new(*x_range, *y_range, *shape, comps).map_err(cfg)?)
            }
        })
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
        if f.schema != SCHEMA_VERSION {
            return Err(cfg(format!("unsupported schema {} (expected {SCHEMA_VERSION})", f.schema)));
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Build and validate the scenario with its optional blocks.
    pub fn build(&self) -> Result<LoadedScenario> {
        let mut sc = match (&self.builtin, &self.boundary) {
            (_, Some(b)) => base_for_boundary(b)?,
            (Some(name), None) => Scenario::builtin(name)?,
            (None, None) => return Err(cfg("scenario needs `builtin` or a [boundary] block")),
        };
        if let Some(name) = self.name.as_ref().or(self.builtin.as_ref()) {
            sc.name = name.clone();
        }
        let dim = sc.boundary.dim();
        if let Some(m) = &self.metric {
            sc.metric = m.build(dim)?;
        }
        if let Some(p) = &self.potential {
            if let Potential::Affine { cx, .. } = p {
                if cx.len() != dim {
                    return Err(cfg(format!("affine potential needs {dim} x coefficients")));
                }
            }
            sc.potential = p.clone();
        }
        if let Some(b) = &self.domain {
            sc.domain = b.to_box("domain")?;
        }
        if let Some(b) = &self.sample_box {
            sc.sample_box = b.to_box("sample_box")?;
        }
        if let Some(t) = self.thresholds {
            sc.thresholds = t;
        }
        sc.validate().map_err(|e| cfg(format!("scenario does not validate: {e}")))?;
        let start = self.start.as_ref().map(|s| s.to_phase_point(&sc)).transpose()?;
        let integrator = self.integrator.unwrap_or_default();
        if !(integrator.h > 0.0) {
            return Err(cfg("[integrator] h must be positive"));
        }
        Ok(LoadedScenario {
            scenario: sc,
            start,
            region: self.region.clone(),
            test_function: self.test_function.clone(),
            integrator,
            gcc: self.gcc.clone().unwrap_or_default(),
            quasi_normal: self.quasi_normal.unwrap_or_default(),
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    ScenarioFile::load(path)?.build()
}

pub fn parse_scenario(text: &str) -> Result<LoadedScenario> {
    ScenarioFile::parse(text)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_only() {
        let l = parse_scenario("schema = 1\nbuiltin = \"disk_interior\"\n").unwrap();
        assert_eq!(l.scenario.name, "disk_interior");
        assert!(l.start.is_none());
    }

    #[test]
    fn schema_and_unknown_keys_rejected() {
        assert!(matches!(parse_scenario("schema = 2\nbuiltin = \"strip\"\n"), Err(Error::Config(_))));
        assert!(matches!(parse_scenario("builtin = \"strip\"\n"), Err(Error::Config(_))));
        assert!(matches!(parse_scenario("schema = 1\nbuiltin = \"strip\"\nfoo = 3\n"), Err(Error::Config(_))));
        assert!(matches!(parse_scenario("schema = 1\nbuiltin = \"moon\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn expression_table_matches_values() {
        let text = r#"
schema = 1
[boundary]
kind = "strip"
width = 1.0
[metric]
kind = "table"
x_range = [-2.0, 2.0]
y_range = [-1.0, 2.0]
shape = [9, 7]
g11 = "1.0 + 0.1 * y"
g12 = "0.0"
g22 = "math::exp(0.0 * x)"
[start]
x = [0.0, 0.5]
direction = [1.0, 1.0]
"#;
        let l = parse_scenario(text).unwrap();
        let x = Vector::from_vec(vec![0.5, 0.5]);
        let g = l.scenario.metric.g(&x);
        assert!((g[(0, 0)] - 1.05).abs() < 1e-9);
        assert!((g[(1, 1)] - 1.0).abs() < 1e-12);
        let s = l.start.unwrap();
        assert!((co_norm(&l.scenario, &s.x, &s.xi).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_disk_and_blocks() {
        let text = r#"
schema = 1
name = "offset disk"
[boundary]
kind = "disk_interior"
center = [2.0, 0.0]
radius = 0.5
[metric]
kind = "constant"
matrix = [[1.0, 0.2], [0.2, 1.5]]
[potential]
kind = "constant"
value = 1.0
[region]
kind = "collar"
width = 0.1
[integrator]
h = 0.002
[gcc]
samples = 10
"#;
        let l = parse_scenario(text).unwrap();
        assert_eq!(l.scenario.name, "offset disk");
        assert!(l.scenario.contains(&Vector::from_vec(vec![2.4, 0.0])));
        assert_eq!(l.integrator.h, 0.002);
        assert_eq!(l.integrator.event_tol, IntegratorParams::default().event_tol);
        assert_eq!(l.gcc.samples, 10);
        assert_eq!(l.region, Some(RegionSpec::Collar { width: 0.1 }));
    }

    #[test]
    fn bad_metric_dimension() {
        let text = "schema = 1\nbuiltin = \"strip\"\n[metric]\nkind = \"diagonal\"\nentries = [1.0, 1.0, 1.0]\n";
        assert!(matches!(parse_scenario(text), Err(Error::Config(_))));
    }
}
