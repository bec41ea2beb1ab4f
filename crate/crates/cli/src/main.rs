use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fleetcharge::config::{Config, Mechanism};
use fleetcharge::harness::{self, MechanismRow};
use fleetcharge::sim::simulate::write_demand;
use fleetcharge::{Error, Result};

/// Pricing and surge-matching pipeline for ride-hailing fleet charging.
#[derive(Parser)]
#[command(name = "fleetcharge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario and experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Overrides the base seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the operating period and export the fleet snapshot.
    Simulate(Common),
    /// Solve the upper level with the configured (or given) mechanism.
    SolveUpper {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Option<Mechanism>,
    },
    /// Upper level, rounding and surge prices for every driver.
    SolveLower {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Option<Mechanism>,
    },
    /// Compare the fixed-price baselines with the policy mechanism.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Extra comma-separated price vector to evaluate.
        #[arg(long, value_delimiter = ',')]
        prices: Option<Vec<f64>>,
    },
    /// Search fixed prices on a grid for the lowest government loss.
    GridSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p_max: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        no_refine: bool,
    },
    /// Sweep demand-estimate noise levels against the baselines.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Every stage end to end, writing all outputs.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Also run the robustness sweep.
        #[arg(long)]
        robustness: bool,
    },
}

fn parse_mechanism(s: &str) -> std::result::Result<Mechanism, String> {
    match s {
        "rsg" => Ok(Mechanism::Rsg),
        "fixed-price" => Ok(Mechanism::FixedPrice),
        "grid-search" => Ok(Mechanism::GridSearch),
        _ => Err(format!(
            "unknown mechanism `{s}` (rsg, fixed-price, grid-search)"
        )),
    }
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = Config::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    println!("wrote {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn print_rows(rows: &[MechanismRow]) {
    for r in rows {
        println!(
            "{:>8}  J_G = {:<14.6}  sigma = {}",
            r.name,
            r.j_g,
            fmt_vec(&r.sigma)
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            let (scenario, snapshot) = harness::simulate_stage(&cfg)?;
            snapshot.write_csv(create(&common.out, "snapshot.csv")?, &scenario.network)?;
            write_demand(
                create(&common.out, "demand.csv")?,
                &scenario.demand,
                &scenario.network,
            )?;
            println!(
                "requests {} served {} unserved {}, mean speed {:.2} km/h",
                scenario.demand.len(),
                snapshot.served,
                snapshot.unserved,
                snapshot.mean_speed
            );
            println!("vehicles to charge per company: {:?}", snapshot.counts());
            println!(
                "request distribution: {}",
                fmt_vec(&scenario.request_distribution())
            );
        }
        Command::SolveUpper { common, mechanism } => {
            let mut cfg = load(&common)?;
            override_mechanism(&mut cfg, mechanism)?;
            let p = harness::prepare(&cfg)?;
            let up = harness::solve_upper(&p.inputs.game, &cfg).map_err(|e| e.in_stage("upper"))?;
            harness::write_convergence(create(&common.out, "convergence.csv")?, &up.report)?;
            harness::write_prices(
                create(&common.out, "prices.csv")?,
                &up.report,
                &up.prices,
                &p.inputs.setpoint,
            )?;
            report_upper(&up, &p.inputs.setpoint);
        }
        Command::SolveLower { common, mechanism } => {
            let mut cfg = load(&common)?;
            override_mechanism(&mut cfg, mechanism)?;
            let p = harness::prepare(&cfg)?;
            let up = harness::solve_upper(&p.inputs.game, &cfg).map_err(|e| e.in_stage("upper"))?;
            let lo = harness::solve_lower(&p.inputs, &up, &cfg)?;
            harness::write_surge(
                create(&common.out, "surge.csv")?,
                &p.inputs.fleets,
                &lo.surge,
            )?;
            report_upper(&up, &p.inputs.setpoint);
            for (i, (n, s)) in lo.counts.iter().zip(&lo.surge).enumerate() {
                println!(
                    "company {}: counts {:?}, {} surge, J_M = {}",
                    i + 1,
                    n,
                    s.mode.as_str(),
                    s.j_m
                );
            }
        }
        Command::Baseline { common, prices } => {
            let mut cfg = load(&common)?;
            if let Some(p) = prices {
                cfg.experiment
                    .extra_prices
                    .push(fleetcharge::config::NamedPrices {
                        name: "custom".into(),
                        prices: p,
                    });
                cfg.validate()?;
            }
            let p = harness::prepare(&cfg)?;
            let rows = harness::compare_mechanisms(&p.inputs.game, &cfg, None, None)
                .map_err(|e| e.in_stage("baselines"))?;
            harness::write_mechanisms(
                create(&common.out, "mechanisms.csv")?,
                &rows,
                &p.inputs.setpoint,
            )?;
            print_rows(&rows);
        }
        Command::GridSearch {
            common,
            p_max,
            resolution,
            no_refine,
        } => {
            let mut cfg = load(&common)?;
            cfg.experiment.p_max = p_max.unwrap_or(cfg.experiment.p_max);
            cfg.experiment.resolution = resolution.unwrap_or(cfg.experiment.resolution);
            cfg.experiment.refine &= !no_refine;
            let p = harness::prepare(&cfg)?;
            let e = &cfg.experiment;
            let g = harness::grid_search(
                &p.inputs.game,
                e.p_max,
                e.resolution,
                e.refine,
                &harness::solve_options(&cfg),
            )
            .map_err(|e| e.in_stage("grid-search"))?;
            harness::write_grid(create(&common.out, "grid.csv")?, &g)?;
            println!("evaluated {} price vectors", g.evaluations.len());
            println!("best prices {}  J_G = {}", fmt_vec(&g.prices), g.report.j_g);
        }
        Command::Robustness {
            common,
            samples,
            alphas,
        } => {
            let mut cfg = load(&common)?;
            cfg.experiment.samples = samples.unwrap_or(cfg.experiment.samples);
            if let Some(a) = alphas {
                cfg.experiment.alphas = a;
            }
            let p = harness::prepare(&cfg)?;
            let e = &cfg.experiment;
            let game = &p.inputs.game;
            let g = harness::grid_search(
                game,
                e.p_max,
                e.resolution,
                e.refine,
                &harness::solve_options(&cfg),
            )
            .map_err(|e| e.in_stage("baselines"))?;
            let sweep = harness::robustness_stage(game, &cfg, Some(&g))?;
            harness::write_robustness(create(&common.out, "robustness.csv")?, &sweep)?;
            println!("optimum J_G = {}", sweep.optimum);
            for s in sweep.summary() {
                println!(
                    "alpha {:<5} {:>6}  mean {:<14.6} std {:.6}",
                    s.alpha, s.mechanism, s.mean, s.std
                );
            }
            let held = sweep.checks.iter().filter(|c| c.assumption_ok).count();
            let eps = sweep
                .checks
                .iter()
                .filter(|c| c.assumption_ok && c.epsilon_ok())
                .count();
            let gap = sweep
                .checks
                .iter()
                .filter(|c| c.assumption_ok && c.gap_ok())
                .count();
            println!("convexity assumption held on {held}/{} samples; bounds hold on {eps}/{held} and {gap}/{held}", sweep.checks.len());
        }
        Command::Pipeline { common, robustness } => {
            let mut cfg = load(&common)?;
            cfg.experiment.robustness |= robustness;
            let art = harness::run_pipeline(&cfg, Some(&common.out))?;
            for f in &art.files {
                println!("wrote {}", f.display());
            }
            report_upper(&art.upper, &art.prepared.inputs.setpoint);
            print_rows(&art.mechanisms);
            let jm: f64 = art.lower.surge.iter().map(|s| s.j_m).sum();
            println!("surge matching cost {jm}");
        }
    }
    Ok(())
}

fn override_mechanism(cfg: &mut Config, mechanism: Option<Mechanism>) -> Result<()> {
    if let Some(m) = mechanism {
        cfg.experiment.mechanism = m;
        cfg.validate()?;
    }
    Ok(())
}

fn report_upper(up: &harness::UpperResult, setpoint: &[f64]) {
    println!(
        "{}: {} iterations ({}), J_G = {:e}, {:.3} s",
        up.mechanism.as_str(),
        up.report.iterations,
        if up.report.converged {
            "converged"
        } else {
            "iteration cap"
        },
        up.report.j_g,
        up.seconds
    );
    println!("sigma  {}", fmt_vec(&up.report.sigma));
    println!("target {}", fmt_vec(setpoint));
    for (i, p) in up.prices.iter().enumerate() {
        println!("company {} prices {}", i + 1, fmt_vec(p));
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_infeasible() {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
