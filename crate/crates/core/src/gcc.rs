//! Geometric control audit over a finite sample of characteristic starts.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{trace_until, Direction, GenBicharacteristic, IntegratorParams};
use crate::geometry::{Scenario, Vector};
use crate::symbol::{co_norm, PhasePoint};
use crate::{par, Error, Result};

type RegionFn = Arc<dyn Fn(f64, &Vector) -> bool + Send + Sync>;

/// Observation set ω in `(t, x)`.
#[derive(Clone)]
pub enum ObservationRegion {
    /// The whole domain.
    All,
    /// `x[axis] < value`.
    Below { axis: usize, value: f64 },
    /// `x[axis] > value`.
    Above { axis: usize, value: f64 },
    /// Points whose Euclidean distance to the boundary is below `width`.
    Collar { width: f64 },
    /// Open Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    Custom { description: String, predicate: RegionFn },
}

impl ObservationRegion {
    pub fn custom(description: impl Into<String>, f: impl Fn(f64, &Vector) -> bool + Send + Sync + 'static) -> Self {
        ObservationRegion::Custom { description: description.into(), predicate: Arc::new(f) }
    }

    pub fn contains(&self, sc: &Scenario, t: f64, x: &Vector) -> bool {
        match self {
            ObservationRegion::All => true,
            ObservationRegion::Below { axis, value } => x[*axis] < *value,
            ObservationRegion::Above { axis, value } => x[*axis] > *value,
            ObservationRegion::Collar { width } => sc.boundary.distance(x) < *width,
            ObservationRegion::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < radius * radius
            }
            ObservationRegion::Custom { predicate, .. } => predicate(t, x),
        }
    }

    pub fn description(&self) -> String {
        match self {
            ObservationRegion::All => "all".into(),
            ObservationRegion::Below { axis, value } => format!("x{axis} < {value}"),
            ObservationRegion::Above { axis, value } => format!("x{axis} > {value}"),
            ObservationRegion::Collar { width } => format!("boundary collar of width {width}"),
            ObservationRegion::Ball { center, radius } => format!("ball at {center:?} radius {radius}"),
            ObservationRegion::Custom { description, .. } => description.clone(),
        }
    }
}

impl fmt::Debug for ObservationRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObservationRegion({})", self.description())
    }
}

/// Low-discrepancy sampler over `(x, direction)` with `|τ| = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GccSampler {
    pub samples: usize,
    pub seed: u64,
    /// Fraction of starts placed on the boundary with tangential covector,
    /// split evenly between the two orientations.
    pub boundary_fraction: f64,
}

impl Default for GccSampler {
    fn default() -> Self {
        Self { samples: 1000, seed: 0, boundary_fraction: 0.1 }
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Unit covector (in the metric) for the Euclidean direction `v`.
fn unit_covector(sc: &Scenario, x: &Vector, v: &Vector) -> Result<Vector> {
    let xi = sc.flat(x, v)?;
    let n = co_norm(sc, x, &xi)?;
    if !(n > 0.0) {
        return Err(Error::Precondition("zero direction".into()));
    }
    Ok(xi / n)
}

impl GccSampler {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, ..Default::default() }
    }

    /// Deterministic list of characteristic starts at `t = 0`, `τ = 1`.
    pub fn starts(&self, sc: &Scenario) -> Result<Vec<PhasePoint>> {
        let d = sc.dim();
        if 2 * d > PRIMES.len() {
            return Err(Error::Precondition(format!("sampler supports dim ≤ {}", PRIMES.len() / 2)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shift: Vec<f64> = (0..2 * d).map(|_| rng.random::<f64>()).collect();
        let n_bdry = ((self.samples as f64) * self.boundary_fraction.clamp(0.0, 1.0)).round() as usize;
        let n_int = self.samples - n_bdry;
        let mut out = Vec::with_capacity(self.samples);

        let (lo, hi) = (&sc.sample_box.lo, &sc.sample_box.hi);
        let mut i: u64 = 1;
        let mut tries = 0usize;
        while out.len() < n_int {
            tries += 1;
            if tries > 200 * n_int.max(1) {
                return Err(Error::Precondition("sample box has too little overlap with the domain".into()));
            }
            let u: Vec<f64> = (0..2 * d).map(|k| (radical_inverse(i, PRIMES[k]) + shift[k]).fract()).collect();
            i += 1;
            let x = Vector::from_fn(d, |k, _| lo[k] + (hi[k] - lo[k]) * u[k]);
            if !sc.contains(&x) || sc.phi(&x) <= sc.thresholds.boundary_tol {
                continue;
            }
            let v = if d == 2 {
                let th = 2.0 * std::f64::consts::PI * u[2];
                Vector::from_vec(vec![th.cos(), th.sin()])
            } else {
                let w = Vector::from_fn(d, |k, _| 2.0 * u[d + k] - 1.0);
                let n = w.norm();
                if !(0.1..=1.0).contains(&n) {
                    continue;
                }
                w / n
            };
            let xi = unit_covector(sc, &x, &v)?;
            out.push(PhasePoint { t: 0.0, x, tau: 1.0, xi });
        }

        if n_bdry > 0 {
            let per = n_bdry.div_ceil(2);
            let frames = sc.boundary.boundary_frames(&sc.sample_box, per.max(1));
            let frames: Vec<_> = frames.into_iter().filter(|(x, _)| sc.contains(x)).collect();
            if !frames.is_empty() {
                let mut k = 0usize;
                'outer: loop {
                    for sign in [1.0, -1.0] {
                        if out.len() >= self.samples {
                            break 'outer;
                        }
                        let (x, tan) = &frames[(k * frames.len() / per) % frames.len()];
                        let xi = unit_covector(sc, x, &(tan * sign))?;
                        out.push(PhasePoint { t: 0.0, x: x.clone(), tau: 1.0, xi });
                    }
                    k += 1;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    HoldsOnSample,
    FailsWithWitness,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::HoldsOnSample => "holds_on_sample",
            Verdict::FailsWithWitness => "fails_with_witness",
        })
    }
}

/// A start whose forward and backward traces both avoid ω.
#[derive(Debug, Clone)]
pub struct Witness {
    pub index: usize,
    pub start: PhasePoint,
    pub forward: GenBicharacteristic,
    pub backward: GenBicharacteristic,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GccStats {
    pub samples: usize,
    pub traced: usize,
    pub skipped: usize,
    pub entered: usize,
    /// First `|t - t0|` at which each sample meets ω; `None` if never or skipped.
    pub hit_times: Vec<Option<f64>>,
    pub max_hit_time: f64,
}

#[derive(Debug, Clone)]
pub struct GccReport {
    pub verdict: Verdict,
    pub region: String,
    pub t_horizon: f64,
    pub witness: Option<Witness>,
    pub stats: GccStats,
}

enum Outcome {
    Hit(f64),
    Miss(Box<(GenBicharacteristic, GenBicharacteristic)>),
}

fn first_hit(sc: &Scenario, region: &ObservationRegion, gb: &GenBicharacteristic, t0: f64) -> Option<f64> {
    gb.samples()
        .map(|(_, _, smp)| &smp.rho)
        .find(|r| region.contains(sc, r.t, &r.x))
        .map(|r| (r.t - t0).abs())
}

fn audit_one(
    sc: &Scenario,
    region: &ObservationRegion,
    rho0: &PhasePoint,
    t_horizon: f64,
    params: &IntegratorParams,
) -> Result<Outcome> {
    if region.contains(sc, rho0.t, &rho0.x) {
        return Ok(Outcome::Hit(0.0));
    }
    let stop = |r: &PhasePoint| region.contains(sc, r.t, &r.x);
    let mut best: Option<f64> = None;
    let mut traces = Vec::with_capacity(2);
    for dir in [Direction::Forward, Direction::Backward] {
        let gb = trace_until(sc, rho0, t_horizon, params, dir, &stop)?;
        if let Some(dt) = first_hit(sc, region, &gb, rho0.t) {
            best = Some(best.map_or(dt, |b: f64| b.min(dt)));
        }
        traces.push(gb);
    }
    Ok(match best {
        Some(dt) if dt <= t_horizon => Outcome::Hit(dt),
        _ => {
            let bwd = traces.pop().expect("two traces");
            let fwd = traces.pop().expect("two traces");
            Outcome::Miss(Box::new((fwd, bwd)))
        }
    })
}

/// Trace every start for `|t - t0| ≤ t_horizon` in both directions and check
/// that each base curve meets ω. Per-sample flow errors are logged and
/// counted as skipped.
pub fn gcc_check(
    sc: &Scenario,
    region: &ObservationRegion,
    t_horizon: f64,
    sampler: &GccSampler,
    params: &IntegratorParams,
) -> Result<GccReport> {
    if !(t_horizon > 0.0) {
        return Err(Error::Precondition(format!("T must be positive, got {t_horizon}")));
    }
    let starts = sampler.starts(sc)?;
    for r in &starts {
        if (r.tau.abs() - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition("sampler must yield |τ| = 1".into()));
        }
    }
    let outcomes = par::map_ordered(&starts, |r| audit_one(sc, region, r, t_horizon, params));

    let mut stats = GccStats { samples: starts.len(), ..Default::default() };
    let mut witness = None;
    for (index, (start, out)) in starts.iter().zip(outcomes).enumerate() {
        match out {
            Ok(Outcome::Hit(dt)) => {
                stats.traced += 1;
                stats.entered += 1;
                stats.max_hit_time = stats.max_hit_time.max(dt);
                stats.hit_times.push(Some(dt));
            }
            Ok(Outcome::Miss(b)) => {
                stats.traced += 1;
                stats.hit_times.push(None);
                if witness.is_none() {
                    let (forward, backward) = *b;
                    witness = Some(Witness { index, start: start.clone(), forward, backward });
                }
            }
            Err(e) => {
                log::warn!("gcc sample {index} skipped: {e}");
                stats.skipped += 1;
                stats.hit_times.push(None);
            }
        }
    }
    let verdict = if witness.is_some() { Verdict::FailsWithWitness } else { Verdict::HoldsOnSample };
    Ok(GccReport { verdict, region: region.description(), t_horizon, witness, stats })
}

/// Re-trace a witness and confirm it still avoids ω.
pub fn replay_witness(
    sc: &Scenario,
    region: &ObservationRegion,
    w: &Witness,
    t_horizon: f64,
    params: &IntegratorParams,
) -> Result<bool> {
    Ok(matches!(audit_one(sc, region, &w.start, t_horizon, params)?, Outcome::Miss(_)))
}

/// Whether a trace avoids ω at every stored sample.
pub fn avoids(sc: &Scenario, region: &ObservationRegion, gb: &GenBicharacteristic) -> bool {
    gb.samples().all(|(_, _, smp)| !region.contains(sc, smp.rho.t, &smp.rho.x))
}
