use std::f64::consts::PI;

use serde::Serialize;
use serde_json::json;

use glancer::config::{LoadedScenario, ScenarioFile};
use glancer::flow::{
    continuity_probe, event_records, glancing_step_construct, trace_generalized, trajectory_records, IntegratorParams,
};
use glancer::gcc::{gcc_check, Verdict};
use glancer::geometry::metric::{MetricField, Pullback};
use glancer::geometry::quasi_normal::build_quasi_normal_chart;
use glancer::geometry::Vector;
use glancer::measures::{boundary_measure_of, dirac_on_bichar, mass_check, transport_residual};
use glancer::symbol::{classify, co_norm, hpz, hz2p, p_eval, PhasePoint};

use crate::artifacts::{Artifacts, Header};
use crate::{Cli, CliError, Command};

struct Ctx {
    loaded: LoadedScenario,
    params: IntegratorParams,
    out: Artifacts,
}

fn need<T: Clone>(v: &Option<T>, block: &str, cmd: Command) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Config(format!("{} needs a [{block}] block in the scenario", cmd.name())))
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("--{name} must be positive, got {v}")))
    }
}

/// Parameters echoed into every artifact header. The output directory and
/// worker count are left out so reruns elsewhere stay byte-identical.
fn echo(cli: &Cli, params: &IntegratorParams) -> serde_json::Value {
    json!({
        "h": params.h,
        "t_horizon": cli.t_horizon,
        "delta": cli.delta,
        "eps": cli.eps,
        "tolerance": cli.tolerance,
        "samples": cli.samples,
        "seed": cli.seed,
    })
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let bytes = std::fs::read(&cli.scenario)
        .map_err(|e| CliError::Config(format!("{}: {e}", cli.scenario.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config("scenario file is not UTF-8".into()))?;
    let loaded = ScenarioFile::parse(&text)?.build()?;
    let mut params = loaded.integrator;
    if let Some(h) = cli.h {
        params.h = positive("h", h)?;
    }
    if let Some(t) = cli.t_horizon {
        positive("t-horizon", t)?;
    }
    let header = Header::new(cli.command.name(), &cli.scenario, &bytes, echo(cli, &params));
    let out = Artifacts::new(&cli.out, header)?;
    let mut ctx = Ctx { loaded, params, out };
    match cli.command {
        Command::Trace => trace(cli, &mut ctx),
        Command::Classify => classify_cmd(cli, &mut ctx),
        Command::GlideStep => glide_step(cli, &mut ctx),
        Command::VerifyTransport => verify_transport(cli, &mut ctx),
        Command::Gcc => gcc(cli, &mut ctx),
        Command::QuasiNormal => quasi_normal(cli, &mut ctx),
        Command::Continuity => continuity(cli, &mut ctx),
    }
}

#[derive(Serialize)]
struct TraceSummary {
    samples: usize,
    pieces: usize,
    breaks: usize,
    junctions: usize,
    stop: String,
    s_end: f64,
    t_end: f64,
    max_abs_p: f64,
}

fn trace(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    let start = need(&ctx.loaded.start, "start", cli.command)?;
    let t = cli.t_horizon.unwrap_or(4.0);
    let gb = trace_generalized(sc, &start, t, &ctx.params)?;
    let mut max_p: f64 = 0.0;
    for (_, _, smp) in gb.samples() {
        max_p = max_p.max(p_eval(sc, &smp.rho)?.abs());
    }
    let last = gb.last().expect("trace has samples");
    let summary = TraceSummary {
        samples: gb.sample_count(),
        pieces: gb.pieces.len(),
        breaks: gb.breaks.len(),
        junctions: gb.junctions.len(),
        stop: format!("{:?}", gb.stop),
        s_end: last.s,
        t_end: last.rho.t,
        max_abs_p: max_p,
    };
    ctx.out.jsonl("trajectory.jsonl", &trajectory_records(&gb))?;
    ctx.out.jsonl("events.jsonl", &event_records(&gb))?;
    ctx.out.csv("summary.csv", &[&summary])?;
    if let Some(tol) = cli.tolerance {
        if max_p > tol {
            return Err(CliError::CheckFailed(format!("max |p| = {max_p:e} exceeds {tol:e}")));
        }
    }
    Ok(format!("trace: {} samples, {} breaks, stop {}", summary.samples, summary.breaks, summary.stop))
}

#[derive(Serialize)]
struct ClassRow {
    x1: f64,
    x2: f64,
    xi1: f64,
    xi2: f64,
    tau: f64,
    phi: f64,
    p: f64,
    hpz: f64,
    hp2z: f64,
    tag: String,
}

fn classify_cmd(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    if sc.dim() != 2 {
        return Err(CliError::Config("classify sweeps planar scenarios only".into()));
    }
    let mut pts: Vec<PhasePoint> = ctx.loaded.start.iter().cloned().collect();
    let n = cli.samples.unwrap_or(16);
    for (x, _) in sc.boundary.boundary_frames(&sc.sample_box, n) {
        for k in 0..16 {
            let th = PI * k as f64 / 8.0;
            let v = Vector::from_vec(vec![th.cos(), th.sin()]);
            let xi = sc.flat(&x, &v)?;
            let norm = co_norm(sc, &x, &xi)?;
            pts.push(PhasePoint { t: 0.0, x: x.clone(), tau: 1.0, xi: xi / norm });
        }
    }
    let mut rows = Vec::with_capacity(pts.len());
    let mut counts = std::collections::BTreeMap::new();
    for r in &pts {
        let c = classify(sc, r)?;
        *counts.entry(c.tag.as_str()).or_insert(0usize) += 1;
        rows.push(ClassRow {
            x1: r.x[0],
            x2: r.x[1],
            xi1: r.xi[0],
            xi2: r.xi[1],
            tau: r.tau,
            phi: c.phi,
            p: c.p,
            hpz: c.hpz,
            hp2z: c.hp2z,
            tag: c.tag.as_str().into(),
        });
    }
    ctx.out.csv("classification.csv", &rows)?;
    let parts: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Ok(format!("classify: {} points ({})", rows.len(), parts.join(", ")))
}

#[derive(Serialize)]
struct GlideRow {
    delta: f64,
    eps: f64,
    steps: usize,
    max_hpz: f64,
}

#[derive(Serialize)]
struct VertexRow {
    delta: f64,
    k: usize,
    t: f64,
    x1: f64,
    x2: f64,
    xi1: f64,
    xi2: f64,
    hpz: f64,
}

fn glide_step(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    let start = need(&ctx.loaded.start, "start", cli.command)?;
    let eps = positive("eps", cli.eps.unwrap_or(0.5))?;
    let steps = cli.samples.unwrap_or(20);
    let deltas = match cli.delta {
        Some(d) => vec![positive("delta", d)?],
        None => vec![1e-2, 1e-3, 1e-4, 1e-5],
    };
    let mut rows = Vec::new();
    let mut verts = Vec::new();
    for &d in &deltas {
        let poly = glancing_step_construct(sc, &start, d, eps, steps)?;
        for (k, v) in poly.vertices.iter().enumerate() {
            verts.push(VertexRow {
                delta: d,
                k,
                t: v.t,
                x1: v.x[0],
                x2: v.x.get(1).copied().unwrap_or(0.0),
                xi1: v.xi[0],
                xi2: v.xi.get(1).copied().unwrap_or(0.0),
                hpz: hpz(sc, v)?,
            });
        }
        rows.push(GlideRow { delta: d, eps, steps, max_hpz: poly.max_hpz });
    }
    ctx.out.csv("glide_step.csv", &rows)?;
    ctx.out.csv("polyline.csv", &verts)?;
    let usable: Vec<(f64, f64)> = rows.iter().filter(|r| r.max_hpz > 0.0).map(|r| (r.delta.ln(), r.max_hpz.ln())).collect();
    if usable.len() >= 2 {
        let n = usable.len() as f64;
        let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
        let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / usable.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        Ok(format!("glide-step: log-log slope {slope:.4} over {} deltas", usable.len()))
    } else {
        Ok(format!("glide-step: max |H_p phi| = {:e}", rows[0].max_hpz))
    }
}

#[derive(Serialize)]
struct ResidualRow {
    h: f64,
    interior: f64,
    jumps: f64,
    glide: f64,
    residual: f64,
    atoms: usize,
    contacts: usize,
    arc_samples: usize,
    mass_check: bool,
}

fn verify_transport(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    let start = need(&ctx.loaded.start, "start", cli.command)?;
    let a = need(&ctx.loaded.test_function, "test_function", cli.command)?.build();
    let t = cli.t_horizon.unwrap_or(2.0);
    let gb = trace_generalized(sc, &start, t, &ctx.params)?;
    let cm = dirac_on_bichar(&gb, &sc.potential, ctx.params.h);
    let nu = boundary_measure_of(sc, &cm)?;
    let rep = match transport_residual(sc, &cm, &nu, a.as_ref(), &sc.potential) {
        Ok(r) => r,
        Err(e @ glancer::Error::SupportLeak { .. }) => return Err(CliError::CheckFailed(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let mass = mass_check(&nu, sc);
    ctx.out.json("nu.json", &nu.export())?;
    let row = ResidualRow {
        h: ctx.params.h,
        interior: rep.interior,
        jumps: rep.jumps,
        glide: rep.glide,
        residual: rep.value,
        atoms: nu.atoms.len(),
        contacts: nu.contacts.len(),
        arc_samples: nu.arc.len(),
        mass_check: mass.passed,
    };
    ctx.out.csv("residual.csv", &[&row])?;
    if !mass.passed {
        return Err(CliError::CheckFailed(format!("mass check: {}", mass.offending.join("; "))));
    }
    if let Some(tol) = cli.tolerance {
        if rep.value > tol {
            return Err(CliError::CheckFailed(format!("residual {:e} exceeds {tol:e}", rep.value)));
        }
    }
    Ok(format!("verify-transport: residual {:e} ({} atoms)", rep.value, nu.atoms.len()))
}

#[derive(Serialize)]
struct HitRow {
    index: usize,
    x1: f64,
    x2: f64,
    xi1: f64,
    xi2: f64,
    hit_time: Option<f64>,
}

fn gcc(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    let region = need(&ctx.loaded.region, "region", cli.command)?.to_region();
    let t = cli.t_horizon.unwrap_or(4.0);
    let mut sampler = ctx.loaded.gcc.clone();
    if let Some(n) = cli.samples {
        sampler.samples = n;
    }
    if let Some(s) = cli.seed {
        sampler.seed = s;
    }
    let starts = sampler.starts(sc)?;
    let rep = gcc_check(sc, &region, t, &sampler, &ctx.params)?;
    let rows: Vec<HitRow> = starts
        .iter()
        .zip(&rep.stats.hit_times)
        .enumerate()
        .map(|(index, (r, h))| HitRow {
            index,
            x1: r.x[0],
            x2: r.x.get(1).copied().unwrap_or(0.0),
            xi1: r.xi[0],
            xi2: r.xi.get(1).copied().unwrap_or(0.0),
            hit_time: *h,
        })
        .collect();
    ctx.out.csv("hit_times.csv", &rows)?;
    let witness = rep.witness.as_ref().map(|w| {
        json!({
            "index": w.index,
            "start": glancer::flow::PhaseRecord::from(&w.start),
        })
    });
    ctx.out.json(
        "gcc_report.json",
        &json!({
            "verdict": rep.verdict,
            "region": rep.region,
            "t_horizon": rep.t_horizon,
            "samples": rep.stats.samples,
            "traced": rep.stats.traced,
            "skipped": rep.stats.skipped,
            "entered": rep.stats.entered,
            "max_hit_time": rep.stats.max_hit_time,
            "witness": witness,
        }),
    )?;
    match &rep.witness {
        Some(w) => {
            ctx.out.jsonl("witness_forward.jsonl", &trajectory_records(&w.forward))?;
            ctx.out.jsonl("witness_backward.jsonl", &trajectory_records(&w.backward))?;
            Err(CliError::CheckFailed(format!(
                "{} on {} samples: start {} never meets {} within |t| ≤ {t}",
                Verdict::FailsWithWitness,
                rep.stats.samples,
                w.index,
                rep.region
            )))
        }
        None => Ok(format!(
            "gcc: {} on {} samples (max hit time {:.4}, skipped {})",
            rep.verdict, rep.stats.traced, rep.stats.max_hit_time, rep.stats.skipped
        )),
    }
}

#[derive(Serialize)]
struct ChartRow {
    xp: f64,
    z: f64,
    x1: f64,
    x2: f64,
    g11: f64,
    g12: f64,
    g22: f64,
}

#[derive(Serialize)]
struct ChartSummary {
    m0_x1: f64,
    m0_x2: f64,
    max_abs_g12: f64,
    max_abs_g22_minus_1: f64,
    max_abs_hz2p_minus_2: f64,
}

fn quasi_normal(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    let m0 = match &ctx.loaded.start {
        Some(s) => s.x.clone(),
        None => sc
            .boundary
            .boundary_samples(&sc.sample_box, 1)
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Config("scenario has no boundary sample".into()))?,
    };
    let chart = build_quasi_normal_chart(sc, &m0, &ctx.loaded.quasi_normal)?;
    let pb = Pullback { base: sc.metric.clone(), map: chart.map.clone() };
    let pulled = sc.pulled_back(&chart);
    let n = cli.samples.unwrap_or(33).max(2);
    let (lo, hi) = (&chart.domain.lo, &chart.domain.hi);
    let mut rows = Vec::new();
    let mut sum = ChartSummary { m0_x1: m0[0], m0_x2: m0[1], max_abs_g12: 0.0, max_abs_g22_minus_1: 0.0, max_abs_hz2p_minus_2: 0.0 };
    for j in 0..5 {
        let z = lo[1] + (hi[1] - lo[1]) * j as f64 / 4.0;
        for i in 0..n {
            let xp = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
            let y = Vector::from_vec(vec![xp, z]);
            let x = chart.map.forward(&y);
            let g = pb.g(&y);
            if j == 0 {
                sum.max_abs_g12 = sum.max_abs_g12.max(g[(0, 1)].abs());
                sum.max_abs_g22_minus_1 = sum.max_abs_g22_minus_1.max((g[(1, 1)] - 1.0).abs());
                sum.max_abs_hz2p_minus_2 = sum.max_abs_hz2p_minus_2.max((hz2p(&pulled, &y)? - 2.0).abs());
            }
            rows.push(ChartRow { xp, z, x1: x[0], x2: x[1], g11: g[(0, 0)], g12: g[(0, 1)], g22: g[(1, 1)] });
        }
    }
    ctx.out.csv("chart.csv", &rows)?;
    ctx.out.csv("chart_summary.csv", &[&sum])?;
    let worst = sum.max_abs_g12.max(sum.max_abs_g22_minus_1).max(sum.max_abs_hz2p_minus_2);
    if let Some(tol) = cli.tolerance {
        if worst > tol {
            return Err(CliError::CheckFailed(format!("block-structure defect {worst:e} exceeds {tol:e}")));
        }
    }
    Ok(format!("quasi-normal: block-structure defect {worst:e} on {n} boundary points"))
}

#[derive(Serialize)]
struct ContinuityRow {
    delta: f64,
    eps_hat: f64,
    eps_half_1: f64,
    eps_half_2: f64,
    noise: f64,
    failed_samples: usize,
}

#[derive(Serialize)]
struct PerSampleRow {
    delta: f64,
    sample: usize,
    distance: f64,
}

fn continuity(cli: &Cli, ctx: &mut Ctx) -> Result<String, CliError> {
    let sc = &ctx.loaded.scenario;
    let start = need(&ctx.loaded.start, "start", cli.command)?;
    let t = cli.t_horizon.unwrap_or(4.0);
    let n = cli.samples.unwrap_or(64);
    let seed = cli.seed.unwrap_or(0);
    let deltas = match cli.delta {
        Some(d) => vec![positive("delta", d)?],
        None => vec![1e-2, 1e-3, 1e-4],
    };
    let mut rows = Vec::new();
    let mut per = Vec::new();
    for &d in &deltas {
        let rep = continuity_probe(sc, &start, d, t, n, seed, &ctx.params)?;
        for (k, v) in rep.per_sample.iter().enumerate() {
            per.push(PerSampleRow { delta: d, sample: k, distance: *v });
        }
        rows.push(ContinuityRow {
            delta: d,
            eps_hat: rep.eps_hat,
            eps_half_1: rep.eps_halves[0],
            eps_half_2: rep.eps_halves[1],
            noise: rep.noise(),
            failed_samples: rep.failed_samples,
        });
    }
    ctx.out.csv("continuity.csv", &rows)?;
    ctx.out.csv("continuity_samples.csv", &per)?;
    let mut monotone = true;
    for w in rows.windows(2) {
        monotone &= w[1].eps_hat <= w[0].eps_hat + 2.0 * w[0].noise.max(w[1].noise);
    }
    let worst = rows.iter().map(|r| r.eps_hat).fold(0.0, f64::max);
    if let Some(tol) = cli.tolerance {
        if worst > tol {
            return Err(CliError::CheckFailed(format!("eps_hat {worst:e} exceeds {tol:e}")));
        }
    }
    if !monotone {
        return Err(CliError::CheckFailed("eps_hat is not monotone in delta".into()));
    }
    let parts: Vec<String> = rows.iter().map(|r| format!("δ={:e}: {:.3e}", r.delta, r.eps_hat)).collect();
    Ok(format!("continuity: {}", parts.join(", ")))
}
