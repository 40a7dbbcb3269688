use std::collections::BTreeMap;

use cpfs_core::bounds::{BoundCheck, BoundParams};
use cpfs_core::dist::{FitnessDist, OffspringDist};
use cpfs_core::experiments::{
    count_good_vertices, estimate_depth_tail, expected_good_vertices, path_transmission_experiment,
    percolation_experiment, run_trials, star_hitting_experiment, star_path_relay_experiment,
    star_persistence_experiment, survival_sweep, write_csv, ychain_experiment, DepthSource, PersistenceStart,
    ResultRow, RunSpec, SweepRow,
};
use cpfs_core::rng::{stream, RandomStream};
use cpfs_core::sim::{simulate, simulate_observed, Censor, GrowthSpec, Horizon, ProcessParams, TrajectoryWriter, Variant};
use cpfs_core::stats::{MCEstimate, MeanAccumulator};
use cpfs_core::tree::{generate_tree, WeightedTree, ROOT};
use cpfs_core::verify::{coupling_suite, exact_suite, CouplingSuite, ExactSuite};
use serde::Serialize;

use crate::settings::{constant_names, int_grid, real_grid, Settings};
use crate::CliError;

/// CSV body plus extra header comment lines.
pub struct Output {
    pub notes: Vec<String>,
    pub body: Vec<u8>,
    /// Some acceptance check failed (exit 3).
    pub failed: bool,
}

impl Output {
    fn csv<T: Serialize>(rows: &[T]) -> Result<Output, CliError> {
        let body = write_csv(Vec::new(), rows).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Output { notes: Vec::new(), body, failed: false })
    }

    fn note(mut self, line: impl Into<String>) -> Self {
        self.notes.push(line.into());
        self
    }
}

pub fn run(s: &Settings) -> Result<Output, CliError> {
    match s.command {
        "gen-tree" => gen_tree(s),
        "simulate" => simulate_cmd(s),
        "sweep" => sweep(s),
        "depth-tail" => depth_tail(s),
        "star" => star(s),
        "path" => path(s),
        "relay" => relay(s),
        "ychain" => ychain(s),
        "percolation" => percolation(s),
        "verify" => verify(s),
        "good-vertices" => good_vertices(s),
        other => Err(CliError::Invalid(format!("unknown command {other}"))),
    }
}

fn run_spec(s: &Settings) -> Result<RunSpec, CliError> {
    let spec = RunSpec::new(s.get("seed")?, s.get("trials")?).with_jobs(s.get("jobs")?).with_level(s.get("level")?);
    spec.validate()?;
    Ok(spec)
}

fn growth(s: &Settings) -> Result<GrowthSpec, CliError> {
    Ok(GrowthSpec {
        offspring: s.get::<OffspringDist>("offspring")?,
        fitness: s.get::<FitnessDist>("fitness")?,
        budget: s.get("budget")?,
        max_depth: s.opt("max-gen")?,
    })
}

fn constants(s: &Settings) -> Result<BoundParams, CliError> {
    let mut p = BoundParams::default();
    for name in constant_names() {
        if s.is_explicit(name) {
            p.set(&name.replace('-', "_"), s.get(name)?)?;
        }
    }
    Ok(p)
}

pub const SUPERMARTINGALE_TOLERANCE: f64 = 1e-12;

/// Parameters recorded in `param_json`.
type Params = BTreeMap<&'static str, f64>;

fn params<const N: usize>(pairs: [(&'static str, f64); N]) -> Params {
    pairs.into_iter().collect()
}

fn read_tree(path: &str) -> Result<WeightedTree, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read tree {path}: {e}")))?;
    Ok(WeightedTree::parse(&text)?)
}

fn gen_tree(s: &Settings) -> Result<Output, CliError> {
    let mut rng = stream(s.get("seed")?, 0);
    let tree = generate_tree(
        &s.get::<OffspringDist>("offspring")?,
        &s.get::<FitnessDist>("fitness")?,
        s.get("max-gen")?,
        s.get("max-vertices")?,
        &mut rng,
    )?;
    let tree = if s.flag("extra-root")? { tree.with_extra_root()? } else { tree };
    Ok(Output { notes: vec![format!("vertices={}", tree.len())], body: tree.to_text().into_bytes(), failed: false })
}

#[derive(Serialize)]
struct TrialRow {
    trial: u64,
    extinction_time: Option<f64>,
    end_time: f64,
    censor: &'static str,
    max_depth: i32,
    root_reinfections: u64,
    touched: usize,
    events: u64,
    vertices: usize,
}

fn censor_name(c: Option<Censor>) -> &'static str {
    match c {
        None => "",
        Some(Censor::Horizon) => "horizon",
        Some(Censor::EventCap) => "event-cap",
        Some(Censor::Stopped) => "stopped",
    }
}

fn simulate_cmd(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let mut variant = Variant::plain();
    variant.extra_root = s.flag("extra-root")?;
    variant.root_frozen = s.flag("root-frozen")?;
    variant.delay = s.opt("theta")?;
    let horizon = Horizon { time: s.get("horizon")?, max_events: s.get("max-events")? };
    let params = ProcessParams::new(s.get("lambda")?, variant).with_horizon(horizon);
    params.validate()?;
    let fixed = match s.raw("tree") {
        Some(path) => {
            let t = read_tree(path)?;
            Some(if variant.extra_root && t.extra_root().is_none() { t.with_extra_root()? } else { t })
        }
        None => None,
    };
    let grow = growth(s)?;
    // a grown tree starts as a lone unexpanded root with random fitness
    let tree_for = |rng: &mut RandomStream| -> cpfs_core::Result<WeightedTree> {
        match &fixed {
            Some(t) => Ok(t.clone()),
            None => {
                let mut t = WeightedTree::single(grow.fitness.sample(rng))?;
                t.set_frontier(ROOT, true);
                Ok(if variant.extra_root { t.with_extra_root()? } else { t })
            }
        }
    };
    let growth_ref = fixed.is_none().then_some(&grow);
    if s.flag("trajectory")? {
        let mut rng = stream(spec.seed, 0);
        let tree = tree_for(&mut rng)?;
        let mut w = TrajectoryWriter::new(Vec::new()).map_err(|e| CliError::Runtime(e.to_string()))?;
        let out = simulate_observed(&tree, &params, &[ROOT], &mut rng, growth_ref, &mut w)?;
        let body = w.finish().map_err(|e| CliError::Runtime(e.to_string()))?;
        let note = format!("extinction_time={:?} censor={}", out.obs.extinction_time, censor_name(out.obs.censor));
        return Ok(Output { notes: vec![note], body, failed: false });
    }
    let rows = run_trials(&spec, |i, rng| {
        let tree = tree_for(rng)?;
        let o = simulate(&tree, &params, &[ROOT], rng, growth_ref)?.obs;
        Ok(TrialRow {
            trial: i,
            extinction_time: o.extinction_time,
            end_time: o.end_time,
            censor: censor_name(o.censor),
            max_depth: o.max_depth,
            root_reinfections: o.root_reinfections,
            touched: o.touched,
            events: o.events,
            vertices: o.vertices,
        })
    })?;
    Output::csv(&rows)
}

fn sweep(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let lambdas = real_grid(s.raw("lambda").unwrap_or_default())?;
    let sw = survival_sweep(&growth(s)?, &lambdas, s.get("horizon")?, s.get("max-events")?, &spec)?;
    let rows: Vec<SweepRow> = sw.points.iter().map(SweepRow::from).collect();
    let censored: u64 = sw.points.iter().map(|p| p.estimate.censored).sum();
    Ok(Output::csv(&rows)?.note(format!("monotonicity_violations={} censored={censored}", sw.violations)))
}

fn depth_tail(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let lambda: f64 = s.get("lambda")?;
    let hs = int_grid(s.raw("h").unwrap_or_default())?;
    let max_events = s.get("max-events")?;
    let grow = growth(s)?;
    let tail = match s.raw("tree") {
        Some(path) => {
            let t = read_tree(path)?;
            let t = if t.extra_root().is_none() { t.with_extra_root()? } else { t };
            estimate_depth_tail(&DepthSource::Tree(&t), lambda, &hs, max_events, &spec)?
        }
        None => estimate_depth_tail(&DepthSource::Grown(&grow), lambda, &hs, max_events, &spec)?,
    };
    let rows: Vec<ResultRow> = hs
        .iter()
        .zip(&tail.estimates)
        .map(|(&h, e)| ResultRow::new("depth_tail", &params([("lambda", lambda), ("h", h as f64)]), e, None))
        .collect();
    let slope = tail.slope.map_or("none".to_string(), |x| x.to_string());
    let mut out = Output::csv(&rows)?.note(format!("slope={slope} slope_points={}", tail.slope_points));
    if tail.warn {
        out = out.note("warning: lambda > 1 is outside the small-lambda regime");
    }
    Ok(out)
}

fn star(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let consts = constants(s)?;
    let (lambda, f, k): (f64, f64, u64) = (s.get("lambda")?, s.get("f")?, s.get("k")?);
    let which: String = s.get("experiment")?;
    if !["both", "hitting", "persistence"].contains(&which.as_str()) {
        return Err(CliError::Invalid(format!("--experiment must be hitting, persistence or both, got {which}")));
    }
    let base = params([("lambda", lambda), ("f", f), ("k", k as f64)]);
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    if which != "persistence" {
        let h = star_hitting_experiment(lambda, f, k, &consts, s.get("max-events")?, &spec)?;
        rows.push(ResultRow::new("star_dies_first", &base, &h.dies_first, Some(&h.extinction_bound)));
        rows.push(ResultRow::new("star_slow", &base, &h.slow, Some(&h.slow_bound)));
        notes.push(format!("level={} warn={}", h.level, h.warn));
    }
    if which != "hitting" {
        let start = match s.get::<String>("start")?.as_str() {
            "level" => PersistenceStart::Level,
            "centre" | "center" => PersistenceStart::CentreOnly,
            other => return Err(CliError::Invalid(format!("--start must be level or centre, got {other}"))),
        };
        let eps = consts.eps.value;
        let p = star_persistence_experiment(lambda, f, k, eps, start, s.get("cap")?, &consts, &spec)?;
        let mut pp = base.clone();
        pp.extend([("eps", eps), ("window_lo", p.window.0), ("window_hi", p.window.1)]);
        rows.push(ResultRow::new("star_persistence", &pp, &p.failure, Some(&p.persistence_bound)));
        rows.push(ResultRow::new("star_persistence_r", &pp, &p.failure, Some(&p.r_bound)));
        notes.push(format!("S={} capped={} threshold={} warn={}", p.s, p.capped, p.threshold, p.warn));
    }
    let mut out = Output::csv(&rows)?;
    out.notes = notes;
    Ok(out)
}

fn path(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let lambda: f64 = s.get("lambda")?;
    let fitness = real_grid(s.raw("path-fitness").unwrap_or_default())?;
    let p = path_transmission_experiment(lambda, &fitness, &constants(s)?, &spec)?;
    let r = (fitness.len() - 1) as f64;
    let rows = [
        ResultRow::new("path_relay", &params([("lambda", lambda), ("r", r), ("exact", p.relay_exact)]), &p.relay, None),
        ResultRow::new(
            "path_reached",
            &params([("lambda", lambda), ("r", r), ("lower_bound", p.lower_bound)]),
            &p.reached,
            None,
        ),
        ResultRow::new(
            "path_relay_fast",
            &params([("lambda", lambda), ("r", r), ("containment_violations", p.containment_violations as f64)]),
            &p.relay_fast,
            None,
        ),
    ];
    let inside = p.relay.contains(p.relay_exact);
    Ok(Output::csv(&rows)?.note(format!("relay_exact={} exact_inside_ci={inside}", p.relay_exact)))
}

fn relay(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let (lambda, f, k, r): (f64, f64, u64, u32) = (s.get("lambda")?, s.get("f")?, s.get("k")?, s.get("r")?);
    let consts = constants(s)?;
    let x = star_path_relay_experiment(lambda, f, k, r, s.get("cap")?, &consts, s.get("max-events")?, &spec)?;
    let p = params([("lambda", lambda), ("f", f), ("k", k as f64), ("r", r as f64), ("window", x.window)]);
    let rows = [ResultRow::new("star_path_relay", &p, &x.failure, Some(&x.bound))];
    Ok(Output::csv(&rows)?.note(format!("level={} S={} capped={}", x.level, x.s, x.capped)))
}

fn ychain(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let (lambda, f, k): (f64, f64, u64) = (s.get("lambda")?, s.get("f")?, s.get("k")?);
    let y = ychain_experiment(lambda, f, k, s.get("horizon")?, &spec)?;
    let base = [("lambda", lambda), ("f", f), ("k", k as f64)];
    let with = |extra: (&'static str, f64)| {
        let mut p = params(base);
        p.insert(extra.0, extra.1);
        p
    };
    let drift = ResultRow::from_values(
        "ychain_drift",
        &with(("exact", y.drift.exact)),
        y.drift.estimate,
        y.drift.ci,
        y.drift.n as u64,
        None,
        spec.seed,
    );
    // exact enumeration; the bound column carries the tolerance
    let z = &y.supermartingale;
    let zrow = ResultRow::from_values(
        "ychain_supermartingale",
        &with(("max_relative", z.max_relative)),
        z.max_drift,
        (z.max_drift, z.max_drift),
        z.steps.len() as u64,
        Some(&BoundCheck::new(z.max_drift, SUPERMARTINGALE_TOLERANCE)),
        spec.seed,
    );
    let rows = [
        ResultRow::new("ychain_burst_mean", &with(("exact", y.burst_exact)), &y.burst_mean, None),
        drift,
        ResultRow::new("ychain_level_time", &params(base), &y.level_time, None),
        zrow,
    ];
    Ok(Output::csv(&rows)?.note(format!("level={} supermartingale_warn={}", y.level, z.warn)))
}

fn percolation(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let (lambda, t0): (f64, f64) = (s.get("lambda")?, s.get("t0")?);
    let est = percolation_experiment(&growth(s)?, lambda, t0, &spec)?;
    Output::csv(&[ResultRow::new("percolation_size", &params([("lambda", lambda), ("t0", t0)]), &est, None)])
}

fn verify(s: &Settings) -> Result<Output, CliError> {
    let seed = s.get("seed")?;
    let instances = s.get("instances")?;
    let max_vertices = s.get("max-vertices")?;
    let rows = match s.get::<String>("suite")?.as_str() {
        "exact" => exact_suite(&ExactSuite { seed, instances, max_vertices })?,
        "coupling" => coupling_suite(&CouplingSuite {
            seed,
            instances,
            trials: s.get("trials")?,
            max_vertices,
            horizon: s.get("horizon")?,
            jobs: s.get("jobs")?,
        })?,
        other => return Err(CliError::Invalid(format!("--suite must be exact or coupling, got {other}"))),
    };
    let failures = rows.iter().filter(|r| !r.pass).count();
    let mut out = Output::csv(&rows)?.note(format!("checks={} failures={failures}", rows.len()));
    out.failed = failures > 0;
    Ok(out)
}

fn good_vertices(s: &Settings) -> Result<Output, CliError> {
    let spec = run_spec(s)?;
    let off: OffspringDist = s.get("offspring")?;
    let fit: FitnessDist = s.get("fitness")?;
    let (f, k, gens, cap): (f64, usize, usize, usize) =
        (s.get("f")?, s.get("k")?, s.get("generations")?, s.get("max-vertices")?);
    if gens == 0 {
        return Err(CliError::Invalid("--generations must be at least 1".into()));
    }
    let counts = run_trials(&spec, |_, rng| {
        let tree = generate_tree(&off, &fit, gens as u32, cap, rng)?;
        count_good_vertices(&tree, f, k, gens)
    })?;
    let mut rows = Vec::with_capacity(gens);
    for r in 0..gens {
        let acc: MeanAccumulator = counts.iter().map(|c| c[r] as f64).collect();
        let est = MCEstimate::mean(&acc, spec.level, 0, spec.seed)?;
        let expected = expected_good_vertices(&off, &fit, f, k as u64, r as u32);
        let p = params([("f", f), ("k", k as f64), ("r", r as f64), ("expected", expected)]);
        rows.push(ResultRow::new("good_vertices", &p, &est, None));
    }
    Output::csv(&rows)
}
