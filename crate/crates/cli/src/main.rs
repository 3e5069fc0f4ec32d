//! `subgauss` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{parse_ball, parse_list, parse_pair, List, RunConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "subgauss", version, about = "Heat kernels, exit times and sub-Gaussian estimates on graphs")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (capped by SUBGAUSS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(flatten)]
    space: SpaceArgs,

    #[command(flatten)]
    scale: ScaleArgs,

    #[command(flatten)]
    window: WindowArgs,

    #[command(flatten)]
    samples: SampleArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct SpaceArgs {
    /// path | cycle | star | sg | file
    #[arg(long, alias = "space", global = true)]
    kind: Option<String>,
    /// Vertex count (path, cycle) or leaf count (star).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Gasket level.
    #[arg(long, global = true)]
    level: Option<u32>,
    /// Edge-list file.
    #[arg(long, global = true)]
    file: Option<PathBuf>,
    /// Use μ ≡ 1 instead of the weighted degree.
    #[arg(long, global = true)]
    uniform_measure: bool,
}

#[derive(Args, Debug)]
struct ScaleArgs {
    /// power | two_piece | tabulated | fit
    #[arg(long, global = true)]
    scale: Option<String>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    beta1: Option<f64>,
    #[arg(long, global = true)]
    beta2: Option<f64>,
    /// CSV "r,F" for a tabulated scale function.
    #[arg(long, global = true)]
    scale_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WindowArgs {
    #[arg(long, global = true)]
    r_min: Option<f64>,
    #[arg(long, global = true)]
    r_max: Option<f64>,
    #[arg(long, global = true)]
    t_min: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ball centers per check.
    #[arg(long, global = true)]
    centers: Option<usize>,
    /// Radii per check.
    #[arg(long, global = true)]
    radii: Option<usize>,
    #[arg(long, global = true)]
    n_times: Option<usize>,
    #[arg(long, global = true)]
    mc_samples: Option<usize>,
    #[arg(long, global = true)]
    max_events: Option<u64>,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Build or load the graph and print a summary.
    Space,
    /// Compute kernels, chains, exit statistics or the profile and write CSV.
    Compute {
        #[command(subcommand)]
        what: Compute,
    },
    /// Run condition checks and estimate suites; one JSON per condition.
    Verify {
        /// Comma-separated: vd,h,osc,ef,fk,tail,laplace,due,dle,ue,nle,two,equiv,conservative,derivative,chain
        #[arg(long, default_value = "vd,h,ef,ue,nle,two")]
        conditions: String,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 8.0)]
        kappa_up: f64,
        #[arg(long, default_value_t = 0.125)]
        kappa_low: f64,
        /// Harnack shrink factor.
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Faber–Krahn volume exponent; defaults to β/α from the window.
        #[arg(long)]
        nu: Option<f64>,
    },
}

#[derive(Subcommand, Debug, Serialize)]
enum Compute {
    /// Heat kernel dump: t,x,y,p.
    Heat {
        #[arg(long = "t", value_parser = parse_list)]
        times: List,
        /// all-diag | all | x:y[,x:y...]
        #[arg(long, default_value = "all-diag")]
        pairs: String,
        /// spectral | krylov | uniformization (default: by size)
        #[arg(long)]
        method: Option<String>,
    },
    /// ChainResult rows for each pair.
    Chain {
        #[arg(long)]
        eps: f64,
        #[arg(long = "pair", value_parser = parse_pair, required = true)]
        pairs: Vec<(usize, usize)>,
    },
    /// Exit-time tail curve P_x(τ ≤ t) from balls x:R.
    Exit {
        #[arg(long = "ball", value_parser = parse_ball, required = true)]
        balls: Vec<(usize, f64)>,
        #[arg(long, value_parser = parse_list)]
        times: List,
        /// Also run the Monte Carlo estimate of the mean (needs --seed).
        #[arg(long)]
        mc: bool,
    },
    /// Laplace transform E_x exp(−λτ) from balls x:R.
    Laplace {
        #[arg(long = "ball", value_parser = parse_ball, required = true)]
        balls: Vec<(usize, f64)>,
        #[arg(long, value_parser = parse_list)]
        lambdas: List,
    },
    /// Profile Φ(s) of the scale function.
    Phi {
        #[arg(long, value_parser = parse_list)]
        s: List,
    },
}

impl Cli {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let sp = &mut cfg.space;
        if let Some(k) = &self.space.kind {
            sp.kind = Some(k.clone());
        }
        sp.n = self.space.n.or(sp.n);
        sp.level = self.space.level.or(sp.level);
        if let Some(f) = &self.space.file {
            sp.file = Some(f.clone());
        }
        sp.uniform_measure |= self.space.uniform_measure;
        let sc = &mut cfg.scale;
        if let Some(k) = &self.scale.scale {
            sc.kind = Some(k.clone());
        }
        sc.beta = self.scale.beta.or(sc.beta);
        sc.beta1 = self.scale.beta1.or(sc.beta1);
        sc.beta2 = self.scale.beta2.or(sc.beta2);
        if let Some(f) = &self.scale.scale_file {
            sc.file = Some(f.clone());
        }
        let w = &mut cfg.window;
        w.r_min = self.window.r_min.or(w.r_min);
        w.r_max = self.window.r_max.or(w.r_max);
        w.t_min = self.window.t_min.or(w.t_min);
        w.t_max = self.window.t_max.or(w.t_max);
        let s = &mut cfg.samples;
        s.seed = self.samples.seed.or(s.seed);
        s.centers = self.samples.centers.unwrap_or(s.centers);
        s.radii = self.samples.radii.unwrap_or(s.radii);
        s.n_times = self.samples.n_times.unwrap_or(s.n_times);
        s.mc_samples = self.samples.mc_samples.unwrap_or(s.mc_samples);
        s.max_events = self.samples.max_events.unwrap_or(s.max_events);
        if let Some(o) = &self.out {
            cfg.outputs.dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let cap = match std::env::var("SUBGAUSS_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| config::usage(format!("SUBGAUSS_THREADS must be a positive integer, got {:?}", v)))?,
        ),
        Err(_) => None,
    };
    let n = match (flag, cap) {
        (Some(f), Some(c)) => Some(f.min(c)),
        (f, c) => f.or(c),
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(config::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// 2 for bad input, 3 for numerical breakdown.
fn error_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<subgauss::Error>() {
        Some(err) if err.is_numeric() => 3,
        Some(_) => 2,
        None if e.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads(cli.threads).and_then(|_| {
        let cfg = cli.run_config()?;
        commands::run(&cfg, &cli.command)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(error_code(&e))
        }
    }
}
