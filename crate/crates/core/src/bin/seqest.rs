//! Command-line front end: conditional runs, dynamic-programming solves,
//! decentralized simulation, Monte-Carlo sweeps and threshold calibration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqest::error::Error;
use seqest::harness::{self, ExperimentConfig, Scheme};
use seqest::ltsnet;
use seqest::planar_dp::{self, Calibrate2dOpts, GridSpec3D, IterOpts as IterOpts2d};
use seqest::scalar_dp::{self, GridSpec1D, IterOpts};
use seqest::seeding::trial_seed;
use seqest::Quadrature;

#[derive(Parser)]
#[command(name = "seqest", about = "Sequential estimation with optimal stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key=value experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (CSV or event log); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trial-count override.
    #[arg(long)]
    trials: Option<usize>,
    /// Scheme override.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the centralized conditional rule over the configured targets.
    RunConditional(Common),
    /// Solve the scalar dynamic program and print the stopping threshold.
    SolveScalar {
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        /// Write the value table as CSV (z,V,F,G).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the planar dynamic program and export the boundary surface.
    Solve2d {
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one decentralized run and export the event log.
    RunDecentralized(Common),
    /// Monte-Carlo sweep over the configured targets; writes the summary CSV.
    Sweep(Common),
    /// Calibrate a stopping threshold to a mean-squared-error target.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Mean-squared-error target C.
        #[arg(long)]
        target: f64,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            harness::parse_config(&text)?
        }
        None => ExperimentConfig::example(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(scheme) = &common.scheme {
        cfg.scheme = scheme.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::RunConditional(mut common) => {
            common.scheme = Some(Scheme::CentralizedConditional.as_str().to_string());
            let cfg = load_config(&common)?;
            let out = harness::run_sweep(&cfg)?;
            emit(&common.out, &harness::sweep_csv(&out.points))
        }
        Command::Sweep(common) => {
            let cfg = load_config(&common)?;
            let out = harness::run_sweep(&cfg)?;
            emit(&common.out, &harness::sweep_csv(&out.points))
        }
        Command::SolveScalar { lambda, sigma2, out } => {
            let quad = Quadrature::gaussian_equispaced(41, 4.0);
            let table = scalar_dp::value_iteration_scalar(
                lambda,
                sigma2,
                &quad,
                GridSpec1D::for_lambda(lambda, sigma2),
                IterOpts::default(),
            );
            let threshold = scalar_dp::extract_threshold(&table)?;
            println!(
                "lambda={lambda} sigma2={sigma2} threshold={threshold:.9} sweeps={} converged={}",
                table.iterations, table.converged
            );
            if out.is_some() {
                let mut csv = String::from("z,V,F,G\n");
                for i in 0..table.z.len() {
                    csv.push_str(&format!(
                        "{:.9},{:.9},{:.9},{:.9}\n",
                        table.z[i], table.v[i], table.f[i], table.g[i]
                    ));
                }
                emit(&out, &csv)?;
            }
            Ok(())
        }
        Command::Solve2d { lambda, sigma2, out } => {
            let quad = Quadrature::gaussian_equispaced(41, 4.0);
            let grid = planar_dp::value_iteration_2d(
                lambda,
                sigma2,
                &quad,
                GridSpec3D::for_lambda(lambda, sigma2),
                IterOpts2d::default(),
            );
            if !grid.converged {
                return Err(Error::NotConverged {
                    iters: grid.iterations,
                    residual: grid.min_iterate_increase,
                });
            }
            let surface = planar_dp::extract_surface(&grid);
            println!(
                "lambda={lambda} sigma2={sigma2} sweeps={} transitions={}",
                grid.iterations,
                surface.transitions.len()
            );
            emit(&out, &surface.export_rows())
        }
        Command::RunDecentralized(common) => {
            let cfg = load_config(&common)?;
            let setup = harness::build_decentralized_setup(&cfg)?;
            let c = cfg.targets[0] * cfg.x_true.norm_squared();
            let c_tilde =
                harness::resolve_threshold(&cfg, Scheme::DecentralizedLinear, c, Some(&setup))?;
            let mut rng = rand::SeedableRng::seed_from_u64(trial_seed(cfg.seed, 0));
            let sampler = harness::CoeffSampler::new(cfg.n, cfg.r)?;
            let sigma: Vec<f64> = cfg.sigma2.iter().map(|s| s.sqrt()).collect();
            let x = cfg.x_true.clone();
            let outcome = ltsnet::run_decentralized(
                &setup.sensor_cfgs,
                &setup.stats,
                c_tilde,
                setup.epsilon,
                cfg.horizon,
                |k, _| {
                    use rand_distr::{Distribution, StandardNormal};
                    let h = sampler.sample(&mut rng);
                    let w: f64 = StandardNormal.sample(&mut rng);
                    let y = h.dot(&x) + sigma[k] * w;
                    seqest::Observation::with_sensor(y, h, k)
                },
            )?;
            println!(
                "stop_time={:.9} events={} sq_error={:.6e}",
                outcome.stop_time,
                outcome.events.len(),
                (&outcome.xhat - &cfg.x_true).norm_squared()
            );
            emit(&common.out, &ltsnet::export_event_log(&outcome.events))
        }
        Command::Calibrate { common, target } => {
            let cfg = load_config(&common)?;
            match cfg.scheme {
                Scheme::CentralizedUnconditionalScalar => {
                    let res = scalar_dp::calibrate_threshold(
                        target,
                        cfg.sigma2[0],
                        cfg.trials,
                        cfg.seed,
                        |rng: &mut rand_chacha::ChaCha8Rng| {
                            use rand_distr::{Distribution, StandardNormal};
                            StandardNormal.sample(rng)
                        },
                    )?;
                    println!(
                        "scheme={} target={target} threshold={:.9} achieved={:.6e} tolerance={:.3e}",
                        cfg.scheme, res.threshold, res.achieved_mse, res.tolerance
                    );
                }
                Scheme::CentralizedUnconditional2d => {
                    let quad = Quadrature::gaussian_equispaced(21, 4.0);
                    let mut opts = Calibrate2dOpts::default();
                    opts.sigma2 = cfg.sigma2[0];
                    opts.trials = cfg.trials.min(2000);
                    opts.base_seed = cfg.seed;
                    let (lambda, surface) = planar_dp::calibrate_lambda(
                        target,
                        &quad,
                        &opts,
                        |rng: &mut rand_chacha::ChaCha8Rng| {
                            use rand_distr::{Distribution, StandardNormal};
                            (StandardNormal.sample(rng), StandardNormal.sample(rng))
                        },
                    )?;
                    println!(
                        "scheme={} target={target} lambda={lambda:.9} transitions={}",
                        cfg.scheme,
                        surface.transitions.len()
                    );
                }
                scheme => {
                    let setup = match scheme {
                        Scheme::DecentralizedLinear => Some(harness::build_decentralized_setup(&cfg)?),
                        _ => None,
                    };
                    let th = harness::resolve_threshold(&cfg, scheme, target, setup.as_ref())?;
                    println!("scheme={scheme} target={target} threshold={th:.9}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NotConverged { .. }
                | Error::BracketFailure { .. }
                | Error::NoThreshold
                | Error::NonIntervalStopSet
                | Error::SingularInformation
                | Error::SingularR
                | Error::HorizonExceeded(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
