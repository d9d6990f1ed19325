//! Generalized bicharacteristics of the wave symbol on Riemannian
//! manifolds with boundary.
//!
//! ```
//! use glancer::prelude::*;
//!
//! let strip = Scenario::strip(1.0);
//! let rho = PhasePoint::new(0.0, &[0.0, 1.0], 1.0, &[0.0, -1.0]);
//! let gb = trace_generalized(&strip, &rho, 4.0, &IntegratorParams::default()).unwrap();
//! println!("{} reflections", gb.breaks.len());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod measures;
pub mod par;
pub mod flow;
pub mod gcc;
pub mod symbol;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::config::{load_scenario, parse_scenario, LoadedScenario, ScenarioFile};
    pub use crate::flow::{
        trace_directed, trace_generalized, trace_until, Direction, GenBicharacteristic, IntegratorParams, PieceKind,
    };
    pub use crate::gcc::{gcc_check, GccReport, GccSampler, ObservationRegion, Verdict};
    pub use crate::geometry::{BoundaryDef, Potential, Scenario, Thresholds, Vector};
    pub use crate::measures::{boundary_measure_of, dirac_on_bichar, transport_residual, BoundaryMeasure, TestFunction};
    pub use crate::symbol::{classify, BoundaryClass, PhasePoint};
    pub use crate::Error;
}
