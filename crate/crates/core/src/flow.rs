//! Generalized bicharacteristics: RK4 on the Hamiltonian field with
//! boundary event location, reflection at hyperbolic points, gliding arcs
//! on the boundary, pass-through at diffractive contacts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Scenario;
use crate::par;
use crate::symbol::{
    self, classify_boundary_point, gliding_field, hamiltonian_field, hp2z, hpz, p_eval, project_to_char,
    project_to_glancing, BoundaryClass, Classification, PhasePoint, TangentUpdate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceKind {
    Interior,
    Gliding,
}

impl PieceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PieceKind::Interior => "interior",
            PieceKind::Gliding => "gliding",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub s: f64,
    pub rho: PhasePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPiece {
    pub kind: PieceKind,
    /// Strictly increasing in `s`.
    pub samples: Vec<Sample>,
}

impl TrajectoryPiece {
    pub fn s_span(&self) -> (f64, f64) {
        (self.samples.first().map_or(f64::NAN, |a| a.s), self.samples.last().map_or(f64::NAN, |a| a.s))
    }

    fn reverse(&mut self) {
        self.samples.reverse();
    }
}

/// Hyperbolic jump at parameter `s`: `rho_plus = Σ(rho_minus)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Break {
    pub s: f64,
    pub rho_minus: PhasePoint,
    pub rho_plus: PhasePoint,
}

/// Tangential boundary contact.
#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub s: f64,
    pub class: Classification,
    pub rho: PhasePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    LeftChart,
    MaxBreaks,
    Predicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(&self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// A traced generalized bicharacteristic, stored in ascending `s`
/// whichever direction it was traced in.
#[derive(Debug, Clone, PartialEq)]
pub struct GenBicharacteristic {
    pub pieces: Vec<TrajectoryPiece>,
    pub breaks: Vec<Break>,
    pub junctions: Vec<Junction>,
    pub stop: StopReason,
    pub direction: Direction,
}

impl GenBicharacteristic {
    /// `(piece index, kind, sample)` in ascending `s`.
    pub fn samples(&self) -> impl Iterator<Item = (usize, PieceKind, &Sample)> {
        self.pieces.iter().enumerate().flat_map(|(i, p)| p.samples.iter().map(move |s| (i, p.kind, s)))
    }

    pub fn sample_count(&self) -> usize {
        self.pieces.iter().map(|p| p.samples.len()).sum()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.pieces.first().and_then(|p| p.samples.first())
    }

    pub fn last(&self) -> Option<&Sample> {
        self.pieces.last().and_then(|p| p.samples.last())
    }

    /// Sample at which tracing started (`s = 0`).
    pub fn origin(&self) -> Option<&Sample> {
        match self.direction {
            Direction::Forward => self.first(),
            Direction::Backward => self.last(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorParams {
    /// Fixed step in `s`.
    pub h: f64,
    /// Bisection target for `|φ|` at boundary events.
    pub event_tol: f64,
    pub max_pieces: usize,
    pub max_steps: usize,
    /// Rescale `ξ` onto `{p = 0}` after every interior step.
    pub project_drift: bool,
    /// Consecutive steps with `H_p² φ > ε_g2` before a gliding arc is left.
    pub gliding_exit_steps: usize,
    /// Stop after this many reflections.
    pub max_breaks: Option<usize>,
}

impl Default for IntegratorParams {
    fn default() -> Self {
        Self {
            h: 1e-3,
            event_tol: 1e-10,
            max_pieces: 10_000,
            max_steps: 50_000_000,
            project_drift: true,
            gliding_exit_steps: 2,
            max_breaks: None,
        }
    }
}

impl IntegratorParams {
    pub fn with_h(h: f64) -> Self {
        Self { h, ..Self::default() }
    }
}

/// Why an integration segment stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum ExitEvent {
    SpanEnd,
    Boundary { s: f64, rho: PhasePoint, class: Classification },
    LeftChart { s: f64, rho: PhasePoint },
    GlidingExit { s: f64, rho: PhasePoint, hp2z: f64 },
    Stopped { s: f64 },
}

type StopFn<'a> = Option<&'a (dyn Fn(&PhasePoint) -> bool + Sync)>;

fn rk4(f: &dyn Fn(&PhasePoint) -> Result<TangentUpdate>, rho: &PhasePoint, h: f64) -> Result<PhasePoint> {
    let k1 = f(rho)?;
    let k2 = f(&rho.advanced(&k1, 0.5 * h))?;
    let k3 = f(&rho.advanced(&k2, 0.5 * h))?;
    let k4 = f(&rho.advanced(&k3, h))?;
    let incr = k1.add(&k2.scaled(2.0)).add(&k3.scaled(2.0)).add(&k4);
    Ok(rho.advanced(&incr, h / 6.0))
}

fn check_params(params: &IntegratorParams) -> Result<()> {
    if !(params.h > 0.0 && params.h.is_finite()) {
        return Err(Error::Precondition(format!("step h must be positive, got {}", params.h)));
    }
    Ok(())
}

struct Stepper<'a> {
    sc: &'a Scenario,
    params: &'a IntegratorParams,
}

impl Stepper<'_> {
    fn interior_step(&self, rho: &PhasePoint, h: f64) -> Result<PhasePoint> {
        let f = |r: &PhasePoint| hamiltonian_field(self.sc, r);
        let next = rk4(&f, rho, h)?;
        if self.params.project_drift {
            project_to_char(self.sc, &next)
        } else {
            Ok(next)
        }
    }

    fn phi_after(&self, rho: &PhasePoint, h: f64) -> Option<f64> {
        self.interior_step(rho, h).ok().map(|r| self.sc.phi(&r.x))
    }

    /// Golden-section search for the minimum of `φ` over a sub-step.
    fn min_in_step(&self, rho: &PhasePoint, h: f64) -> Option<(f64, f64)> {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0, 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = self.phi_after(rho, c * h)?;
        let mut fd = self.phi_after(rho, d * h)?;
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.phi_after(rho, c * h)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.phi_after(rho, d * h)?;
            }
        }
        let theta = 0.5 * (a + b);
        Some((theta, self.phi_after(rho, theta * h)?))
    }

    /// Bisection on the sub-step fraction for `|φ| ≤ event_tol`, given
    /// `φ ≥ 0` at `lo` and `φ < 0` at `hi`.
    fn locate(&self, rho: &PhasePoint, h: f64, mut lo: f64, mut hi: f64) -> Result<(f64, PhasePoint)> {
        let tol = self.params.event_tol;
        let mut best = None;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let r = self.interior_step(rho, mid * h)?;
            let phi = self.sc.phi(&r.x);
            if phi.abs() <= tol {
                return Ok((mid, r));
            }
            if phi > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            best = Some((mid, r));
            if hi - lo < 1e-16 {
                break;
            }
        }
        best.ok_or(Error::StepFailure { s: f64::NAN })
    }
}

fn span_done(s: f64, s_end: f64, sigma: f64) -> bool {
    (s_end - s) * sigma <= 1e-14 * s_end.abs().max(1.0)
}

fn push_sample(samples: &mut Vec<Sample>, s: f64, rho: PhasePoint, sigma: f64) {
    if let Some(last) = samples.last_mut() {
        if (s - last.s) * sigma <= 0.0 {
            *last = Sample { s, rho };
            return;
        }
    }
    samples.push(Sample { s, rho });
}

fn interior_run(
    sc: &Scenario,
    rho0: &PhasePoint,
    s0: f64,
    s_end: f64,
    params: &IntegratorParams,
    mut skip: usize,
    stop: StopFn<'_>,
    steps: &mut usize,
) -> Result<(TrajectoryPiece, ExitEvent)> {
    let st = Stepper { sc, params };
    let sigma = if s_end >= s0 { 1.0 } else { -1.0 };
    let mut samples = vec![Sample { s: s0, rho: rho0.clone() }];
    let mut rho = rho0.clone();
    let mut s = s0;
    let thr = &sc.thresholds;
    loop {
        if span_done(s, s_end, sigma) {
            return Ok((TrajectoryPiece { kind: PieceKind::Interior, samples }, ExitEvent::SpanEnd));
        }
        *steps += 1;
        if *steps > params.max_steps {
            return Err(Error::MaxStepsExceeded(params.max_steps));
        }
        let hs = sigma * params.h.min((s_end - s).abs());
        let next = match st.interior_step(&rho, hs) {
            Ok(n) => n,
            Err(Error::OutOfChart { .. }) => {
                return Ok((TrajectoryPiece { kind: PieceKind::Interior, samples }, ExitEvent::LeftChart { s, rho }))
            }
            Err(e) => return Err(e),
        };
        if !next.is_finite() {
            return Err(Error::StepFailure { s });
        }
        if !sc.contains(&next.x) {
            return Ok((TrajectoryPiece { kind: PieceKind::Interior, samples }, ExitEvent::LeftChart { s, rho }));
        }
        let phi_new = sc.phi(&next.x);
        let mut hit: Option<(f64, PhasePoint)> = None;
        if skip > 0 {
            skip -= 1;
        } else if phi_new < 0.0 {
            hit = Some(st.locate(&rho, hs, 0.0, 1.0)?);
        } else {
            let a = sigma * hpz(sc, &rho)?;
            let b = sigma * hpz(sc, &next)?;
            if a < 0.0 && b > 0.0 {
                if let Some((theta, phi_min)) = st.min_in_step(&rho, hs) {
                    if phi_min < 0.0 {
                        hit = Some(st.locate(&rho, hs, 0.0, theta)?);
                    } else if phi_min <= params.event_tol {
                        hit = Some((theta, st.interior_step(&rho, theta * hs)?));
                    }
                }
            }
        }
        if let Some((theta, rho_hit)) = hit {
            let s_hit = s + theta * hs;
            push_sample(&mut samples, s_hit, rho_hit.clone(), sigma);
            let class = classify_boundary_point(sc, &rho_hit, thr)?;
            return Ok((
                TrajectoryPiece { kind: PieceKind::Interior, samples },
                ExitEvent::Boundary { s: s_hit, rho: rho_hit, class },
            ));
        }
        s += hs;
        if span_done(s, s_end, sigma) {
            s = s_end;
        }
        rho = next;
        push_sample(&mut samples, s, rho.clone(), sigma);
        if let Some(f) = stop {
            if f(&rho) {
                return Ok((TrajectoryPiece { kind: PieceKind::Interior, samples }, ExitEvent::Stopped { s }));
            }
        }
    }
}

/// Integrate `H_p` from an interior (or inward hyperbolic) point until the
/// end of `s_span`, a boundary contact, or the edge of the chart.
pub fn integrate_interior(
    sc: &Scenario,
    rho0: &PhasePoint,
    s_span: (f64, f64),
    params: &IntegratorParams,
) -> Result<(TrajectoryPiece, ExitEvent)> {
    check_params(params)?;
    let mut steps = 0;
    interior_run(sc, rho0, s_span.0, s_span.1, params, 0, None, &mut steps)
}

fn gliding_run(
    sc: &Scenario,
    rho0: &PhasePoint,
    s0: f64,
    s_end: f64,
    params: &IntegratorParams,
    stop: StopFn<'_>,
    steps: &mut usize,
) -> Result<(TrajectoryPiece, ExitEvent)> {
    let sigma = if s_end >= s0 { 1.0 } else { -1.0 };
    let mut rho = project_to_glancing(sc, rho0)?;
    let mut samples = vec![Sample { s: s0, rho: rho.clone() }];
    let mut s = s0;
    let mut above = 0usize;
    let f = |r: &PhasePoint| gliding_field(sc, r);
    loop {
        if span_done(s, s_end, sigma) {
            return Ok((TrajectoryPiece { kind: PieceKind::Gliding, samples }, ExitEvent::SpanEnd));
        }
        *steps += 1;
        if *steps > params.max_steps {
            return Err(Error::MaxStepsExceeded(params.max_steps));
        }
        let hs = sigma * params.h.min((s_end - s).abs());
        let next = match rk4(&f, &rho, hs).and_then(|n| project_to_glancing(sc, &n)) {
            Ok(n) => n,
            Err(Error::OutOfChart { .. }) => {
                return Ok((TrajectoryPiece { kind: PieceKind::Gliding, samples }, ExitEvent::LeftChart { s, rho }))
            }
            Err(e) => return Err(e),
        };
        if !sc.contains(&next.x) {
            return Ok((TrajectoryPiece { kind: PieceKind::Gliding, samples }, ExitEvent::LeftChart { s, rho }));
        }
        s += hs;
        if span_done(s, s_end, sigma) {
            s = s_end;
        }
        rho = next;
        push_sample(&mut samples, s, rho.clone(), sigma);
        let h2 = hp2z(sc, &rho)?;
        if h2 > sc.thresholds.eps_g2 {
            above += 1;
        } else {
            above = 0;
        }
        if above >= params.gliding_exit_steps.max(1) {
            return Ok((
                TrajectoryPiece { kind: PieceKind::Gliding, samples },
                ExitEvent::GlidingExit { s, rho, hp2z: h2 },
            ));
        }
        if let Some(f) = stop {
            if f(&rho) {
                return Ok((TrajectoryPiece { kind: PieceKind::Gliding, samples }, ExitEvent::Stopped { s }));
            }
        }
    }
}

/// Integrate the gliding field along the boundary with projection back onto
/// the glancing manifold after every step.
pub fn integrate_gliding(
    sc: &Scenario,
    rho0: &PhasePoint,
    s_span: (f64, f64),
    params: &IntegratorParams,
) -> Result<(TrajectoryPiece, ExitEvent)> {
    check_params(params)?;
    let class = classify_boundary_point(sc, rho0, &sc.thresholds)?;
    if !matches!(class.tag, BoundaryClass::Gliding | BoundaryClass::Glancing3) {
        return Err(Error::Precondition(format!("gliding integration needs a gliding start, got {}", class.tag)));
    }
    let mut steps = 0;
    gliding_run(sc, rho0, s_span.0, s_span.1, params, None, &mut steps)
}

/// `Σρ⁻` at an outgoing hyperbolic point.
pub fn reflect(sc: &Scenario, rho_minus: &PhasePoint) -> Result<PhasePoint> {
    let c = classify_boundary_point(sc, rho_minus, &sc.thresholds)?;
    if c.tag != BoundaryClass::HyperbolicOut {
        return Err(Error::NotHyperbolic(c.tag.to_string()));
    }
    symbol::sigma(sc, rho_minus)
}

enum Mode {
    Interior { skip: usize },
    Gliding,
}

fn trace_impl(
    sc: &Scenario,
    rho0: &PhasePoint,
    t_horizon: f64,
    params: &IntegratorParams,
    direction: Direction,
    stop: StopFn<'_>,
) -> Result<GenBicharacteristic> {
    check_params(params)?;
    let thr = sc.thresholds;
    if rho0.tau == 0.0 {
        return Err(Error::Precondition("tau must be non-zero".into()));
    }
    let p0 = p_eval(sc, rho0)?;
    if p0.abs() > thr.char_tol {
        return Err(Error::NotCharacteristic { p: p0, p_par: f64::NAN });
    }
    let sigma = direction.sign();
    let s_end = sigma * t_horizon / (2.0 * rho0.tau.abs());
    let mut pieces = Vec::new();
    let mut breaks = Vec::new();
    let mut junctions = Vec::new();
    let mut steps = 0usize;

    let mut s = 0.0;
    let mut rho = rho0.clone();
    let phi0 = sc.phi(&rho0.x);
    let mut mode = if phi0 > thr.boundary_tol {
        Mode::Interior { skip: 0 }
    } else if phi0 < -thr.boundary_tol {
        return Err(Error::OutsideDomain { phi: phi0 });
    } else {
        let c = classify_boundary_point(sc, rho0, &thr)?;
        match c.tag {
            BoundaryClass::HyperbolicIn | BoundaryClass::HyperbolicOut if sigma * c.hpz > 0.0 => Mode::Interior { skip: 0 },
            BoundaryClass::HyperbolicIn | BoundaryClass::HyperbolicOut => {
                let r = symbol::sigma(sc, rho0)?;
                breaks.push(if sigma > 0.0 {
                    Break { s: 0.0, rho_minus: rho0.clone(), rho_plus: r.clone() }
                } else {
                    Break { s: 0.0, rho_minus: r.clone(), rho_plus: rho0.clone() }
                });
                rho = r;
                Mode::Interior { skip: 0 }
            }
            BoundaryClass::Diffractive => {
                junctions.push(Junction { s: 0.0, class: c, rho: rho0.clone() });
                Mode::Interior { skip: 1 }
            }
            BoundaryClass::Gliding | BoundaryClass::Glancing3 => {
                junctions.push(Junction { s: 0.0, class: c, rho: rho0.clone() });
                Mode::Gliding
            }
            other => return Err(Error::Precondition(format!("cannot start a trace at a {other} point"))),
        }
    };

    let stop_reason = loop {
        if pieces.len() >= params.max_pieces {
            return Err(Error::MaxPiecesExceeded(params.max_pieces));
        }
        let (piece, ev) = match mode {
            Mode::Interior { skip } => interior_run(sc, &rho, s, s_end, params, skip, stop, &mut steps)?,
            Mode::Gliding => gliding_run(sc, &rho, s, s_end, params, stop, &mut steps)?,
        };
        if piece.samples.len() >= 2 {
            pieces.push(piece);
        }
        match ev {
            ExitEvent::SpanEnd => break StopReason::Horizon,
            ExitEvent::LeftChart { .. } => break StopReason::LeftChart,
            ExitEvent::Stopped { .. } => break StopReason::Predicate,
            ExitEvent::GlidingExit { s: se, rho: r, hp2z: h2 } => {
                let class = Classification { tag: BoundaryClass::Diffractive, phi: sc.phi(&r.x), p: p_eval(sc, &r)?, hpz: hpz(sc, &r)?, hp2z: h2 };
                junctions.push(Junction { s: se, class, rho: r.clone() });
                s = se;
                rho = r;
                mode = Mode::Interior { skip: 2 };
            }
            ExitEvent::Boundary { s: se, rho: r, class } => {
                s = se;
                if class.hpz.abs() > thr.eps_g && class.tag != BoundaryClass::EllipticTangential {
                    if sigma * class.hpz < 0.0 {
                        let plus = symbol::sigma(sc, &r)?;
                        breaks.push(if sigma > 0.0 {
                            Break { s: se, rho_minus: r.clone(), rho_plus: plus.clone() }
                        } else {
                            Break { s: se, rho_minus: plus.clone(), rho_plus: r.clone() }
                        });
                        rho = plus;
                        mode = Mode::Interior { skip: 0 };
                        if params.max_breaks.is_some_and(|m| breaks.len() >= m) {
                            pieces.push(TrajectoryPiece { kind: PieceKind::Interior, samples: vec![Sample { s, rho: rho.clone() }] });
                            break StopReason::MaxBreaks;
                        }
                    } else {
                        rho = r;
                        mode = Mode::Interior { skip: 1 };
                    }
                } else {
                    match class.tag {
                        BoundaryClass::Gliding | BoundaryClass::Glancing3 => {
                            if !breaks.is_empty() && class.tag == BoundaryClass::Gliding {
                                log::info!("broken ray reaches the gliding set at s = {se} after {} reflections", breaks.len());
                            }
                            junctions.push(Junction { s: se, class, rho: r.clone() });
                            rho = r;
                            mode = Mode::Gliding;
                        }
                        BoundaryClass::EllipticTangential => {
                            return Err(Error::Precondition("trajectory reached an elliptic boundary point".into()))
                        }
                        _ => {
                            let class = Classification { tag: BoundaryClass::Diffractive, ..class };
                            junctions.push(Junction { s: se, class, rho: r.clone() });
                            rho = r;
                            mode = Mode::Interior { skip: 1 };
                        }
                    }
                }
            }
        }
    };
    // a terminal single-sample piece only carries the post-break state
    if let Some(last) = pieces.last() {
        if last.samples.len() < 2 && pieces.len() > 1 {
            pieces.pop();
        }
    }

    if sigma < 0.0 {
        pieces.reverse();
        for p in &mut pieces {
            p.reverse();
        }
        breaks.reverse();
        junctions.reverse();
    }
    Ok(GenBicharacteristic { pieces, breaks, junctions, stop: stop_reason, direction })
}

/// Trace the maximal generalized bicharacteristic through `rho0` forward
/// in `s` until `|t - t0| = t_horizon`.
pub fn trace_generalized(
    sc: &Scenario,
    rho0: &PhasePoint,
    t_horizon: f64,
    params: &IntegratorParams,
) -> Result<GenBicharacteristic> {
    trace_impl(sc, rho0, t_horizon, params, Direction::Forward, None)
}

pub fn trace_directed(
    sc: &Scenario,
    rho0: &PhasePoint,
    t_horizon: f64,
    params: &IntegratorParams,
    direction: Direction,
) -> Result<GenBicharacteristic> {
    trace_impl(sc, rho0, t_horizon, params, direction, None)
}

/// Like [`trace_directed`] but stops at the first sample where `stop`
/// returns true.
pub fn trace_until(
    sc: &Scenario,
    rho0: &PhasePoint,
    t_horizon: f64,
    params: &IntegratorParams,
    direction: Direction,
    stop: &(dyn Fn(&PhasePoint) -> bool + Sync),
) -> Result<GenBicharacteristic> {
    trace_impl(sc, rho0, t_horizon, params, direction, Some(stop))
}

/// Trace many starts; results are in input order.
pub fn trace_batch(
    sc: &Scenario,
    starts: &[PhasePoint],
    t_horizon: f64,
    params: &IntegratorParams,
) -> Vec<Result<GenBicharacteristic>> {
    par::map_ordered(starts, |r| trace_generalized(sc, r, t_horizon, params))
}

/// Sequential counterpart of [`trace_batch`].
pub fn trace_batch_sequential(
    sc: &Scenario,
    starts: &[PhasePoint],
    t_horizon: f64,
    params: &IntegratorParams,
) -> Vec<Result<GenBicharacteristic>> {
    par::map_sequential(starts, |r| trace_generalized(sc, r, t_horizon, params))
}

/// Output of the δ-step construction near the glancing set.
#[derive(Debug, Clone)]
pub struct GlancingPolyline {
    /// Points on the glancing manifold advanced by the gliding field.
    pub spine: Vec<PhasePoint>,
    /// Polyline vertices: the outgoing lift of the worst point in each
    /// ball `B(ρ + δX, δε)` intersected with the boundary characteristic set.
    pub vertices: Vec<PhasePoint>,
    pub max_hpz: f64,
}

/// Iterative δ-step construction from a gliding or order-3 glancing point.
///
/// From a spine point `ρ_k` the gliding field `X` is evaluated, the centre
/// `ρ + δX` is projected to the glancing manifold, and the vertex is the
/// point of the `δ ε |X - H_p|` ball around the centre with the largest
/// transversal momentum. On flat boundaries `X = H_p` and the ball is a point.
pub fn glancing_step_construct(
    sc: &Scenario,
    rho0: &PhasePoint,
    delta: f64,
    eps: f64,
    n_steps: usize,
) -> Result<GlancingPolyline> {
    let class = classify_boundary_point(sc, rho0, &sc.thresholds)?;
    if !matches!(class.tag, BoundaryClass::Gliding | BoundaryClass::Glancing3) {
        return Err(Error::Precondition(format!("glancing construction needs a gliding start, got {}", class.tag)));
    }
    let mut spine = vec![project_to_glancing(sc, rho0)?];
    let mut vertices = vec![spine[0].clone()];
    let mut max_hpz: f64 = 0.0;
    for k in 0..n_steps {
        let cur = spine.last().expect("spine is non-empty").clone();
        let x = gliding_field(sc, &cur)?;
        let hp = hamiltonian_field(sc, &cur)?;
        let adv = cur.advanced(&x, delta);
        if !sc.contains(&adv.x) {
            return Err(Error::LeftChart(k + 1));
        }
        let center = match project_to_glancing(sc, &adv) {
            Ok(c) if sc.contains(&c.x) => c,
            Ok(_) | Err(Error::OutOfChart { .. }) => return Err(Error::LeftChart(k + 1)),
            Err(e) => return Err(e),
        };
        let radius = delta * eps * x.distance(&hp);
        let speed = center.tau.abs();
        let vertex = if radius > 0.0 {
            let shrink = ((speed - radius) / speed).max(0.0);
            let par = PhasePoint { xi: &center.xi * shrink, ..center.clone() };
            symbol::hyperbolic_lifts(sc, &par)?.0
        } else {
            center.clone()
        };
        max_hpz = max_hpz.max(hpz(sc, &vertex)?.abs());
        vertices.push(vertex);
        spine.push(center);
    }
    Ok(GlancingPolyline { spine, vertices, max_hpz })
}

fn flat(rho: &PhasePoint) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * rho.dim() + 2);
    v.push(rho.t);
    v.extend(rho.x.iter());
    v.push(rho.tau);
    v.extend(rho.xi.iter());
    v
}

/// `Σ̃ρ` and its penalty `|φ|`, when `ρ` lies in the extension band.
fn sigma_tilde(sc: &Scenario, rho: &PhasePoint) -> Option<(PhasePoint, f64)> {
    let phi = sc.phi(&rho.x);
    if phi.abs() > sc.thresholds.band {
        return None;
    }
    symbol::sigma_extended(sc, rho).ok().map(|r| (r, phi.abs()))
}

/// Surrogate for the distance on the compressed cotangent bundle: the
/// Euclidean chart distance minimised over applying the extended
/// involution to either point, each application penalised by `|φ|`.
pub fn compressed_distance(sc: &Scenario, a: &PhasePoint, b: &PhasePoint) -> Result<f64> {
    for r in [a, b] {
        if !sc.contains(&r.x) {
            return Err(Error::OutOfChart { point: r.x.iter().copied().collect() });
        }
    }
    let sa = sigma_tilde(sc, a);
    let sb = sigma_tilde(sc, b);
    let mut d = a.distance(b);
    if let Some((ra, pa)) = &sa {
        d = d.min(ra.distance(b) + pa);
    }
    if let Some((rb, pb)) = &sb {
        d = d.min(a.distance(rb) + pb);
    }
    if let (Some((ra, pa)), Some((rb, pb))) = (&sa, &sb) {
        d = d.min(ra.distance(rb) + pa + pb);
    }
    Ok(d)
}

fn point_segment_distance(q: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut aq_ab = 0.0;
    for i in 0..q.len() {
        let ab = b[i] - a[i];
        ab2 += ab * ab;
        aq_ab += (q[i] - a[i]) * ab;
    }
    let t = if ab2 > 0.0 { (aq_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut d2 = 0.0;
    for i in 0..q.len() {
        let e = q[i] - (a[i] + t * (b[i] - a[i]));
        d2 += e * e;
    }
    d2.sqrt()
}

/// Reference trajectory as line segments in flattened phase coordinates,
/// sorted by their lower `t` so queries only scan a window in `t` (the
/// first coordinate bounds the distance from below).
struct Polyline {
    segments: Vec<(Vec<f64>, Vec<f64>)>,
    t_lo: Vec<f64>,
    max_span: f64,
}

impl Polyline {
    fn new(gb: &GenBicharacteristic) -> Self {
        let mut segments = Vec::new();
        for p in &gb.pieces {
            for w in p.samples.windows(2) {
                segments.push((flat(&w[0].rho), flat(&w[1].rho)));
            }
            if p.samples.len() == 1 {
                let f = flat(&p.samples[0].rho);
                segments.push((f.clone(), f));
            }
        }
        segments.sort_by(|a, b| a.0[0].min(a.1[0]).total_cmp(&b.0[0].min(b.1[0])));
        let t_lo = segments.iter().map(|(a, b)| a[0].min(b[0])).collect();
        let max_span = segments.iter().map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        Self { segments, t_lo, max_span }
    }

    fn distance(&self, q: &[f64]) -> f64 {
        if self.segments.is_empty() {
            return f64::INFINITY;
        }
        let t = q[0];
        let near = self.t_lo.partition_point(|&lo| lo < t).min(self.segments.len() - 1);
        let mut best = point_segment_distance(q, &self.segments[near].0, &self.segments[near].1);
        if near > 0 {
            best = best.min(point_segment_distance(q, &self.segments[near - 1].0, &self.segments[near - 1].1));
        }
        let start = self.t_lo.partition_point(|&lo| lo < t - best - self.max_span);
        for i in start..self.segments.len() {
            if self.t_lo[i] > t + best {
                break;
            }
            best = best.min(point_segment_distance(q, &self.segments[i].0, &self.segments[i].1));
        }
        best
    }
}

/// Compressed semi-distance from `q` to the reference trajectory set.
fn distance_to_reference(sc: &Scenario, reference: &Polyline, q: &PhasePoint) -> f64 {
    let mut d = reference.distance(&flat(q));
    if let Some((r, pen)) = sigma_tilde(sc, q) {
        d = d.min(reference.distance(&flat(&r)) + pen);
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub delta: f64,
    pub eps_hat: f64,
    /// `eps_hat` over the first and second halves of the samples.
    pub eps_halves: [f64; 2],
    pub per_sample: Vec<f64>,
    pub failed_samples: usize,
}

impl ContinuityReport {
    /// Spread between the two half-sample estimates.
    pub fn noise(&self) -> f64 {
        (self.eps_halves[0] - self.eps_halves[1]).abs()
    }
}

/// Perturb the start by at most `delta` in `(x, ξ)`, project onto `Char p`,
/// trace each perturbed start for time `t_horizon` and return the largest
/// compressed distance from a perturbed sample to the reference trajectory.
pub fn continuity_probe(
    sc: &Scenario,
    rho0: &PhasePoint,
    delta: f64,
    t_horizon: f64,
    n_samples: usize,
    seed: u64,
    params: &IntegratorParams,
) -> Result<ContinuityReport> {
    let reference = trace_generalized(sc, rho0, t_horizon, params)?;
    let poly = Polyline::new(&reference);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rho0.dim();
    let mut starts = Vec::with_capacity(n_samples);
    while starts.len() < n_samples {
        let mut cand = None;
        for _ in 0..100 {
            let dir: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let r: f64 = rng.random_range(0.0..1.0);
            let scale = delta * r / norm;
            let mut q = rho0.clone();
            for i in 0..d {
                q.x[i] += scale * dir[i];
                q.xi[i] += scale * dir[d + i];
            }
            if delta > 0.0 && !(sc.contains(&q.x) && sc.phi(&q.x) > sc.thresholds.boundary_tol) {
                continue;
            }
            if let Ok(q) = project_to_char(sc, &q) {
                cand = Some(q);
                break;
            }
        }
        starts.push(cand.ok_or_else(|| Error::Precondition("could not sample perturbed starts inside the domain".into()))?);
    }
    let results = par::map_ordered(&starts, |q| {
        trace_generalized(sc, q, t_horizon, params).map(|gb| {
            gb.samples().map(|(_, _, smp)| distance_to_reference(sc, &poly, &smp.rho)).fold(0.0, f64::max)
        })
    });
    let mut per_sample = Vec::with_capacity(n_samples);
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => per_sample.push(v),
            Err(e) => {
                log::warn!("continuity probe sample failed: {e}");
                failed += 1;
            }
        }
    }
    let half = per_sample.len() / 2;
    let max_of = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(ContinuityReport {
        delta,
        eps_hat: max_of(&per_sample),
        eps_halves: [max_of(&per_sample[..half]), max_of(&per_sample[half..])],
        per_sample,
        failed_samples: failed,
    })
}

/// One JSONL record per trajectory sample.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub s: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub tau: f64,
    pub xi: Vec<f64>,
    pub piece_kind: &'static str,
    pub piece_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub tau: f64,
    pub xi: Vec<f64>,
}

impl From<&PhasePoint> for PhaseRecord {
    fn from(r: &PhasePoint) -> Self {
        Self { t: r.t, x: r.x.iter().copied().collect(), tau: r.tau, xi: r.xi.iter().copied().collect() }
    }
}

/// Break or junction record; junctions repeat the contact point.
#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub s: f64,
    pub kind: String,
    pub rho_minus: PhaseRecord,
    pub rho_plus: PhaseRecord,
}

pub fn trajectory_records(gb: &GenBicharacteristic) -> Vec<TrajectoryRecord> {
    gb.samples()
        .map(|(i, kind, smp)| TrajectoryRecord {
            s: smp.s,
            t: smp.rho.t,
            x: smp.rho.x.iter().copied().collect(),
            tau: smp.rho.tau,
            xi: smp.rho.xi.iter().copied().collect(),
            piece_kind: kind.as_str(),
            piece_index: i,
        })
        .collect()
}

/// Breaks and junctions merged in ascending `s`.
pub fn event_records(gb: &GenBicharacteristic) -> Vec<EventRecord> {
    let mut ev: Vec<EventRecord> = gb
        .breaks
        .iter()
        .map(|b| EventRecord { s: b.s, kind: "break".into(), rho_minus: (&b.rho_minus).into(), rho_plus: (&b.rho_plus).into() })
        .chain(gb.junctions.iter().map(|j| EventRecord {
            s: j.s,
            kind: j.class.tag.as_str().into(),
            rho_minus: (&j.rho).into(),
            rho_plus: (&j.rho).into(),
        }))
        .collect();
    ev.sort_by(|a, b| a.s.total_cmp(&b.s));
    ev
}

/// Write records as line-delimited JSON.
pub fn write_jsonl<T: Serialize>(records: &[T], mut w: impl std::io::Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Smallest gap between consecutive break parameters.
pub fn min_break_gap(gb: &GenBicharacteristic) -> Option<f64> {
    gb.breaks.windows(2).map(|w| w[1].s - w[0].s).reduce(f64::min)
}
