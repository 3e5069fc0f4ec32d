use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use subgauss::exit::{self, MCConfig};
use subgauss::verify::{self, EquivConfig, SampleConfig};
use subgauss::{chain, ConditionReport, DirichletForm, Domain, EstimateReport, KernelMethod, MetricMeasureGraph, ScaleFunction, Window};

use crate::config::{config_hash, usage, RunConfig};
use crate::{Command, Compute};

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CONDITIONS: [&str; 16] = [
    "vd",
    "h",
    "osc",
    "ef",
    "fk",
    "tail",
    "laplace",
    "due",
    "dle",
    "ue",
    "nle",
    "two",
    "equiv",
    "conservative",
    "derivative",
    "chain",
];

struct Output {
    dir: PathBuf,
    hash: String,
}

impl Output {
    fn new(cfg: &RunConfig, cmd: &Command) -> Result<Self> {
        let dir = cfg.outputs.dir.clone().unwrap_or_else(|| PathBuf::from("."));
        // The output location does not change the results, so it stays out
        // of the hash.
        let mut hashed = cfg.clone();
        hashed.outputs.dir = None;
        let hash = config_hash(&json!({"config": hashed, "command": cmd}));
        Ok(Output { dir, hash })
    }

    fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))
    }

    fn csv(&self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
        self.ensure_dir()?;
        let mut text = format!("# subgauss {} config_sha256={}\n{}\n", VERSION, self.hash, header);
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let path = self.dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn json(&self, name: &str, report: Value) -> Result<PathBuf> {
        self.ensure_dir()?;
        let doc = json!({
            "tool": "subgauss",
            "version": VERSION,
            "config_sha256": self.hash,
            "report": report,
        });
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn run(cfg: &RunConfig, cmd: &Command) -> Result<u8> {
    let out = Output::new(cfg, cmd)?;
    // The profile needs a graph only to fit F.
    if let Command::Compute { what: Compute::Phi { s } } = cmd {
        if cfg.space.kind.is_none() && cfg.space.file.is_none() {
            return write_phi(cfg, &out, None, s);
        }
    }
    let graph = build_space(cfg)?;
    match cmd {
        Command::Space => {
            print_space(&graph);
            Ok(0)
        }
        Command::Compute { what } => compute(cfg, &out, DirichletForm::new(graph), what),
        Command::Verify {
            conditions,
            eta,
            kappa_up,
            kappa_low,
            delta,
            nu,
        } => {
            let names = parse_conditions(conditions)?;
            let opts = VerifyOptions {
                eta: *eta,
                kappa_up: *kappa_up,
                kappa_low: *kappa_low,
                delta: *delta,
                nu: *nu,
            };
            verify_all(cfg, &out, DirichletForm::new(graph), &names, &opts)
        }
    }
}

fn build_space(cfg: &RunConfig) -> Result<MetricMeasureGraph> {
    let sp = &cfg.space;
    let kind = match (&sp.kind, &sp.file) {
        (Some(k), _) => k.as_str(),
        (None, Some(_)) => "file",
        (None, None) => bail!(usage("no space given: use --kind path|cycle|star|sg|file")),
    };
    let need_n = || sp.n.ok_or_else(|| usage(format!("space kind {} needs --n", kind)));
    let g = match kind {
        "path" => MetricMeasureGraph::path(need_n()?)?,
        "cycle" => MetricMeasureGraph::cycle(need_n()?)?,
        "star" => MetricMeasureGraph::star(need_n()?)?,
        "sg" | "sierpinski" => {
            MetricMeasureGraph::sierpinski(sp.level.ok_or_else(|| usage("space kind sg needs --level"))?)?
        }
        "file" => {
            let p = sp.file.as_ref().ok_or_else(|| usage("space kind file needs --file"))?;
            MetricMeasureGraph::load(p).with_context(|| format!("loading {}", p.display()))?
        }
        other => bail!(usage(format!("unknown space kind {:?}", other))),
    };
    Ok(if sp.uniform_measure { g.with_uniform_measure() } else { g })
}

fn print_space(g: &MetricMeasureGraph) {
    println!("vertices {}", g.vertex_count());
    println!("edges {}", g.edge_count());
    println!("diameter {}", g.diameter());
    println!("total_mass {}", g.total_mass());
    println!("components {}", g.component_count());
    println!("max_edge_length {}", g.max_edge_length());
}

fn build_scale(cfg: &RunConfig, df: Option<&DirichletForm>) -> Result<ScaleFunction> {
    let sc = &cfg.scale;
    let kind = sc
        .kind
        .as_deref()
        .unwrap_or(if sc.file.is_some() { "tabulated" } else { "fit" });
    Ok(match kind {
        "power" => ScaleFunction::power(sc.beta.ok_or_else(|| usage("scale power needs --beta"))?)?,
        "two_piece" => ScaleFunction::two_piece(
            sc.beta1.ok_or_else(|| usage("scale two_piece needs --beta1"))?,
            sc.beta2.ok_or_else(|| usage("scale two_piece needs --beta2"))?,
        )?,
        "tabulated" => {
            let p = sc.file.as_ref().ok_or_else(|| usage("scale tabulated needs --scale-file"))?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScaleFunction::parse_csv(&text)?
        }
        "fit" => fit_scale(df.ok_or_else(|| usage("scale fit needs a space; or give --scale power --beta ..."))?)?,
        other => bail!(usage(format!("unknown scale kind {:?}", other))),
    })
}

/// Power law fitted to exact mean exit times from a central vertex.
fn fit_scale(df: &DirichletForm) -> Result<ScaleFunction> {
    let g = df.graph();
    let n = g.vertex_count();
    let step = (n / 64).max(1);
    let center = (0..n)
        .step_by(step)
        .min_by(|&a, &b| {
            let ea = g.distances_from(a).iter().copied().fold(0.0, f64::max);
            let eb = g.distances_from(b).iter().copied().fold(0.0, f64::max);
            ea.total_cmp(&eb)
        })
        .expect("nonempty graph");
    let radii = subgauss::stats::geomspace(g.max_edge_length(), g.diameter() / 2.0, 8);
    let data: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| Ok((r, df.mean_exit_exact(&Domain::ball(g, center, r)?, center)?)))
        .collect::<subgauss::Result<_>>()?;
    let fit = ScaleFunction::fit_from_exit_times(&data).context("fitting F from exit times")?;
    eprintln!("fitted F(r) = r^{:.4} (from vertex {})", fit.beta, center);
    Ok(fit.scale)
}

fn resolve_window(cfg: &RunConfig, df: &DirichletForm, f: &ScaleFunction) -> Result<Window> {
    let wc = cfg.window;
    let complete = wc.r_min.is_some() && wc.r_max.is_some() && wc.t_min.is_some() && wc.t_max.is_some();
    let base = if complete { None } else { Some(df.estimate_window(f)?) };
    let pick_r = |r: Option<f64>, t: Option<f64>, b: Option<f64>| -> Result<f64> {
        Ok(match (r, t) {
            (Some(r), _) => r,
            (None, Some(t)) => f.inverse(t)?,
            (None, None) => b.expect("estimated window"),
        })
    };
    let pick_t = |t: Option<f64>, r: Option<f64>, b: Option<f64>| -> Result<f64> {
        Ok(match (t, r) {
            (Some(t), _) => t,
            (None, Some(r)) => f.eval(r)?,
            (None, None) => b.expect("estimated window"),
        })
    };
    let w = Window::radii(
        pick_r(wc.r_min, wc.t_min, base.map(|b| b.r_min))?,
        pick_r(wc.r_max, wc.t_max, base.map(|b| b.r_max))?,
    )
    .with_times(
        pick_t(wc.t_min, wc.r_min, base.and_then(|b| b.t_min))?,
        pick_t(wc.t_max, wc.r_max, base.and_then(|b| b.t_max))?,
    );
    if w.is_empty() {
        bail!(usage(format!("empty window {:?}", w)));
    }
    Ok(w)
}

fn compute(cfg: &RunConfig, out: &Output, df: DirichletForm, what: &Compute) -> Result<u8> {
    let g = df.graph();
    match what {
        Compute::Heat { times, pairs, method } => {
            if times.is_empty() {
                bail!(usage("compute heat needs --t"));
            }
            let n = g.vertex_count();
            let pairs: Vec<(usize, usize)> = match pairs.as_str() {
                "all-diag" => (0..n).map(|x| (x, x)).collect(),
                "all" => {
                    if n > 2000 {
                        bail!(usage("--pairs all is limited to 2000 vertices"));
                    }
                    (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).collect()
                }
                list => list
                    .split(',')
                    .map(|p| crate::config::parse_pair(p).map_err(usage))
                    .collect::<Result<_>>()?,
            };
            let grid = match method.as_deref() {
                None => df.heat_kernel(times, Some(&pairs))?,
                Some(m) => {
                    let method = match m {
                        "spectral" => KernelMethod::Spectral,
                        "krylov" => KernelMethod::Krylov,
                        "uniformization" => KernelMethod::Uniformization,
                        other => bail!(usage(format!("unknown kernel method {:?}", other))),
                    };
                    df.heat_kernel_with(&Domain::full(g), times, Some(&pairs), method)?
                }
            };
            let mut rows = Vec::with_capacity(times.len() * pairs.len());
            for (ti, t) in grid.times.iter().enumerate() {
                for (pi, &(x, y)) in grid.pairs.iter().enumerate() {
                    rows.push(format!("{},{},{},{}", t, x, y, grid.get(ti, pi)));
                }
            }
            report_written(out.csv("heat.csv", "t,x,y,p", &rows)?, rows.len());
        }
        Compute::Chain { eps, pairs } => {
            let rows: Vec<String> = pairs
                .iter()
                .map(|&(x, y)| Ok(chain::chain_metric(g, x, y, *eps)?.csv_row()))
                .collect::<subgauss::Result<_>>()?;
            report_written(out.csv("chain.csv", subgauss::ChainResult::CSV_HEADER, &rows)?, rows.len());
        }
        Compute::Exit { balls, times, mc } => {
            if times.is_empty() {
                bail!(usage("compute exit needs --times"));
            }
            if *mc && cfg.samples.seed.is_none() {
                bail!(usage("Monte Carlo requested without --seed"));
            }
            let mut rows = Vec::new();
            let mut mc_reports = Vec::new();
            for &(x, r) in balls {
                let dom = Domain::ball(g, x, r)?;
                for (t, p) in exit::exit_tail_exact(&df, &dom, x, times)? {
                    rows.push(format!("{},{},{},{}", r, x, t, p));
                }
                if *mc {
                    let mc_cfg = MCConfig {
                        seed: cfg.samples.seed.expect("checked above"),
                        n_samples: cfg.samples.mc_samples,
                        max_event_count: cfg.samples.max_events,
                    };
                    let stats = exit::mc_exit_time(&df, &dom, x, &mc_cfg)?;
                    let exact = df.mean_exit_exact(&dom, x)?;
                    println!(
                        "ball {}:{} exact mean {} mc mean {} (95% CI [{}, {}], {} truncated)",
                        x, r, exact, stats.mean, stats.ci_low, stats.ci_high, stats.truncated
                    );
                    if stats.truncated > 0 {
                        eprintln!("warning: {} trajectories hit the event cap", stats.truncated);
                    }
                    mc_reports.push(json!({"x": x, "R": r, "mean_exact": exact, "mc": stats}));
                }
            }
            report_written(out.csv("exit_tail.csv", "R,x,t_or_lambda,value", &rows)?, rows.len());
            if *mc {
                println!("wrote {}", out.json("exit_mc.json", Value::Array(mc_reports))?.display());
            }
        }
        Compute::Laplace { balls, lambdas } => {
            if lambdas.is_empty() {
                bail!(usage("compute laplace needs --lambdas"));
            }
            let mut rows = Vec::new();
            for &(x, r) in balls {
                let dom = Domain::ball(g, x, r)?;
                for &l in lambdas.iter() {
                    rows.push(format!("{},{},{},{}", r, x, l, exit::laplace_exact(&df, &dom, x, l)?));
                }
            }
            report_written(out.csv("laplace.csv", "R,x,t_or_lambda,value", &rows)?, rows.len());
        }
        Compute::Phi { s } => return write_phi(cfg, out, Some(&df), s),
    }
    Ok(0)
}

fn write_phi(cfg: &RunConfig, out: &Output, df: Option<&DirichletForm>, s: &[f64]) -> Result<u8> {
    if s.is_empty() {
        bail!(usage("compute phi needs --s"));
    }
    let f = build_scale(cfg, df)?;
    let rows: Vec<String> = s
        .iter()
        .map(|&s| {
            let p = f.phi_point(s)?;
            Ok(format!("{},{},{},{}", p.s, p.phi, p.argmax_r, p.boundary))
        })
        .collect::<subgauss::Result<_>>()?;
    report_written(out.csv("phi.csv", "s,phi,argmax_r,boundary", &rows)?, rows.len());
    Ok(0)
}

fn report_written(path: PathBuf, rows: usize) {
    println!("wrote {} ({} rows)", path.display(), rows);
}

fn parse_conditions(list: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for raw in list.split(',') {
        let name = raw.trim().to_ascii_lowercase();
        if !CONDITIONS.contains(&name.as_str()) {
            bail!(usage(format!(
                "unknown condition {:?}; known: {}",
                raw.trim(),
                CONDITIONS.join(",")
            )));
        }
        if !names.contains(&name) {
            names.push(name);
        }
    }
    Ok(names)
}

struct VerifyOptions {
    eta: f64,
    kappa_up: f64,
    kappa_low: f64,
    delta: f64,
    nu: Option<f64>,
}

enum Outcome {
    Condition(ConditionReport),
    Estimate(EstimateReport),
}

impl Outcome {
    fn pass(&self) -> bool {
        match self {
            Outcome::Condition(r) => r.pass,
            Outcome::Estimate(r) => r.pass,
        }
    }

    fn constants(&self) -> &std::collections::BTreeMap<String, f64> {
        match self {
            Outcome::Condition(r) => &r.constants,
            Outcome::Estimate(r) => &r.constants,
        }
    }
}

struct Shared {
    f: ScaleFunction,
    window: Window,
    centers: Vec<usize>,
    radii: Vec<f64>,
    balls: Vec<(usize, f64)>,
    times: Vec<f64>,
    sample_cfg: SampleConfig,
    seed: u64,
    trials: usize,
}

fn verify_all(cfg: &RunConfig, out: &Output, df: DirichletForm, names: &[String], opts: &VerifyOptions) -> Result<u8> {
    let g = df.graph();
    let f = build_scale(cfg, Some(&df))?;
    let window = resolve_window(cfg, &df, &f)?;
    let seed = cfg.samples.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<usize> = (0..cfg.samples.centers.max(1))
        .map(|_| rng.random_range(0..g.vertex_count()))
        .collect();
    let radii = subgauss::stats::geomspace(window.r_min, window.r_max, cfg.samples.radii.max(1));
    let balls = centers
        .iter()
        .flat_map(|&x| radii.iter().map(move |&r| (x, r)))
        .collect();
    let (t_min, t_max) = (window.t_min.unwrap(), window.t_max.unwrap());
    let shared = Shared {
        times: subgauss::stats::geomspace(t_min, t_max, cfg.samples.n_times.max(1)),
        sample_cfg: SampleConfig {
            n_times: cfg.samples.n_times,
            centers_per_time: cfg.samples.centers_per_time,
            per_bin: cfg.samples.per_bin,
            max_scaled_distance: cfg.samples.max_scaled_distance,
            seed,
        },
        f,
        window,
        centers,
        radii,
        balls,
        seed,
        trials: cfg.samples.trials,
    };

    let mut samples: Option<Vec<verify::KernelSample>> = None;
    let mut diag: Option<(ConditionReport, ConditionReport)> = None;
    let mut any_fail = false;
    let mut numeric = false;
    for name in names {
        let result = run_condition(&df, &shared, name, opts, &mut samples, &mut diag);
        match result {
            Ok(outcome) => {
                let pass = outcome.pass();
                any_fail |= !pass;
                let (json, csv) = match &outcome {
                    Outcome::Condition(r) => (serde_json::to_value(r)?, None),
                    Outcome::Estimate(r) => (serde_json::to_value(r)?, Some(r)),
                };
                out.json(&format!("{}.json", name), json)?;
                if let Some(r) = csv {
                    let rows: Vec<String> = r.rows.iter().map(|row| row.csv_row()).collect();
                    out.csv(&format!("{}_samples.csv", name), verify::SampleRow::CSV_HEADER, &rows)?;
                }
                println!(
                    "{:<13} {:<5} {}",
                    name,
                    if pass { "pass" } else { "FAIL" },
                    summarize(outcome.constants())
                );
            }
            Err(e) => {
                any_fail = true;
                let is_numeric = e.is_numeric();
                numeric |= is_numeric;
                out.json(&format!("{}.json", name), json!({"condition": name, "error": e.to_string()}))?;
                println!("{:<13} ERROR {}", name, e);
            }
        }
    }
    Ok(if numeric {
        3
    } else if any_fail {
        1
    } else {
        0
    })
}

fn summarize(constants: &std::collections::BTreeMap<String, f64>) -> String {
    let mut s = String::new();
    for (k, v) in constants {
        let _ = write!(s, "{}={:.4} ", k, v);
    }
    s.trim_end().to_string()
}

fn run_condition(
    df: &DirichletForm,
    sh: &Shared,
    name: &str,
    opts: &VerifyOptions,
    samples: &mut Option<Vec<verify::KernelSample>>,
    diag: &mut Option<(ConditionReport, ConditionReport)>,
) -> subgauss::Result<Outcome> {
    let g = df.graph();
    let f = &sh.f;
    let mut get_samples = || -> subgauss::Result<Vec<verify::KernelSample>> {
        if samples.is_none() {
            *samples = Some(verify::stratified_samples(g, f, &sh.window, &sh.sample_cfg)?);
        }
        Ok(samples.clone().expect("just filled"))
    };
    Ok(match name {
        "vd" => Outcome::Condition(verify::vd_report(g, &sh.radii, &sh.centers)?),
        "h" => Outcome::Condition(df.harnack_check(&sh.balls, sh.trials, opts.delta, sh.seed)?),
        "osc" => Outcome::Condition(df.oscillation_check(&sh.balls, lower_beta(f, &sh.window)?, sh.trials, sh.seed)?),
        "ef" => Outcome::Condition(exit::check_ef(df, f, &sh.centers, &sh.radii)?),
        "fk" => {
            let nu = match opts.nu {
                Some(nu) => nu,
                None => {
                    let alpha = g.check_vd(&sh.radii, &sh.centers)?.alpha;
                    if !(alpha > 0.0) {
                        return Err(subgauss::Error::InvalidArgument(
                            "volume growth exponent is zero on this window; pass --nu".into(),
                        ));
                    }
                    lower_beta(f, &sh.window)? / alpha
                }
            };
            Outcome::Condition(df.faber_krahn_check(f, &sh.balls, sh.trials, nu, sh.seed)?)
        }
        "tail" => Outcome::Condition(exit::check_tail_bound(df, f, &sh.balls, &sh.times)?),
        "laplace" => {
            let lambdas: Vec<f64> = sh.times.iter().map(|t| 1.0 / t).collect();
            Outcome::Condition(exit::check_laplace_bound(df, f, &sh.balls, &lambdas)?)
        }
        "due" | "dle" => {
            if diag.is_none() {
                *diag = Some(df.diag_bounds_check(f, &sh.centers, &sh.times)?);
            }
            let (due, dle) = diag.as_ref().expect("just filled");
            Outcome::Condition(if name == "due" { due.clone() } else { dle.clone() })
        }
        "ue" => Outcome::Estimate(verify::verify_ue(df, f, &get_samples()?)?),
        "nle" => Outcome::Estimate(verify::verify_nle(df, f, &get_samples()?, opts.eta)?),
        "two" => Outcome::Estimate(verify::verify_two_sided(df, f, &get_samples()?, opts.kappa_up, opts.kappa_low)?),
        "equiv" => {
            let cfg = EquivConfig {
                centers: sh.centers.clone(),
                radii: sh.radii.clone(),
                samples: sh.sample_cfg,
                eta: opts.eta,
                harnack_trials: sh.trials,
                delta: opts.delta,
                seed: sh.seed,
            };
            Outcome::Estimate(verify::equivalence_suite(df, f, &cfg)?)
        }
        "conservative" => Outcome::Condition(df.conservativeness_check(&sh.times)?),
        "derivative" => {
            let pairs = center_pairs(&sh.centers, true);
            let t = sh.times[sh.times.len() / 2];
            Outcome::Condition(df.time_derivative_check(t, &pairs)?)
        }
        "chain" => {
            let pairs = center_pairs(&sh.centers, false);
            if pairs.is_empty() {
                return Err(subgauss::Error::InvalidArgument("chain condition needs two distinct centers".into()));
            }
            Outcome::Condition(chain::check_chain_condition(g, &pairs, &[1, 2, 4, 8, 16])?)
        }
        other => unreachable!("condition {} validated earlier", other),
    })
}

fn center_pairs(centers: &[usize], with_diagonal: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &x) in centers.iter().enumerate() {
        if with_diagonal {
            pairs.push((x, x));
        }
        for &y in &centers[i + 1..] {
            if x != y {
                pairs.push((x, y));
            }
        }
    }
    pairs
}

/// Lower regularity exponent of `F` over two decades starting at `r_min`.
fn lower_beta(f: &ScaleFunction, w: &Window) -> subgauss::Result<f64> {
    Ok(f.regularity(&subgauss::stats::geomspace(w.r_min, 100.0 * w.r_min, 9))?.beta)
}
