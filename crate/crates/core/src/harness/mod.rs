//! Baseline mechanisms, the fixed-price grid search and the end-to-end
//! pipeline from simulation to per-vehicle surge prices.

mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

pub use output::*;

use crate::config::{
    derive_seed, Config, Mechanism, STREAM_ESTIMATE, STREAM_ROBUSTNESS, STREAM_SURGE,
};
use crate::equilibrium::{solve_nash, FixedPriceMap, RsgMap, SolveOptions, SolveReport};
use crate::feasible::discretize;
use crate::model::{system_optimal_policy, GameInstance};
use crate::robustness::{robustness_sweep, SweepResult};
use crate::sim::{
    assemble_game, build_polytopes, compute_feasibility, estimate_company_params,
    estimate_driver_params, government_objective, simulate_period, CompanyFleet, GameInputs,
    Scenario, Snapshot,
};
use crate::surge::{two_step, verify_zero_cost, SurgeConfig, SurgeSolution};
use crate::{Error, Result};

/// Solver options from the experiment section.
pub fn solve_options(cfg: &Config) -> SolveOptions {
    SolveOptions {
        max_iter: cfg.experiment.max_iter,
        tol: cfg.experiment.tol,
        ..Default::default()
    }
}

fn with_fraction(
    map: &dyn crate::equilibrium::GameMap,
    opts: &SolveOptions,
    fraction: f64,
) -> SolveOptions {
    SolveOptions {
        gamma: opts
            .gamma
            .or(Some(fraction * crate::equilibrium::step_size_bound(map))),
        ..opts.clone()
    }
}

/// Nash equilibrium when every company pays the constant prices `p̄`.
pub fn fixed_price_nash(
    game: &GameInstance,
    prices: &[f64],
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let map = FixedPriceMap::new(game, prices)?;
    solve_nash(game, &map, opts)
}

/// Nash equilibrium under the system optimal price policies.
pub fn rsg_nash(game: &GameInstance, opts: &SolveOptions) -> Result<SolveReport> {
    solve_nash(game, &RsgMap::new(game), opts)
}

/// Per-company prices `p_i(x*)` of the system optimal policy.
pub fn rsg_prices(game: &GameInstance, report: &SolveReport) -> Result<Vec<Vec<f64>>> {
    let fleets = game.fleets();
    (0..game.companies_count())
        .map(|i| {
            let sm = report.x.partial_aggregate(i, &fleets);
            Ok(system_optimal_policy(game, i, report.x.block(i), &sm)?.prices)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub prices: Vec<f64>,
    pub report: SolveReport,
    /// Every evaluated point with its equilibrium loss, in traversal order.
    pub evaluations: Vec<(Vec<f64>, f64)>,
}

/// Row-major enumeration of the lattice with the given per-axis values.
fn lattice(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn evaluate_points(
    game: &GameInstance,
    points: Vec<Vec<f64>>,
    opts: &SolveOptions,
) -> Result<Vec<(Vec<f64>, f64)>> {
    points
        .into_par_iter()
        .map(|p| {
            let j = fixed_price_nash(game, &p, opts)?.j_g;
            Ok((p, j))
        })
        .collect()
}

/// First strictly smallest loss in traversal order.
fn incumbent(evals: &[(Vec<f64>, f64)]) -> usize {
    let mut best = 0;
    for (k, (_, j)) in evals.iter().enumerate() {
        if *j < evals[best].1 {
            best = k;
        }
    }
    best
}

/// Searches `[0, p_max]^m` with `resolution` points per axis for the price
/// vector whose fixed-price equilibrium minimises the government loss, then
/// optionally refines once on the half-spaced lattice around the best point.
pub fn grid_search(
    game: &GameInstance,
    p_max: f64,
    resolution: usize,
    refine: bool,
    opts: &SolveOptions,
) -> Result<GridSearchResult> {
    if !(p_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "p_max must be positive, got {p_max}"
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidParameter(
            "grid resolution must be at least 2".into(),
        ));
    }
    let m = game.stations_count();
    let h = p_max / (resolution - 1) as f64;
    let axis: Vec<f64> = (0..resolution).map(|k| k as f64 * h).collect();
    let mut evaluations = evaluate_points(game, lattice(&vec![axis; m]), opts)?;
    if refine {
        let centre = evaluations[incumbent(&evaluations)].0.clone();
        let half = h / 2.0;
        let axes: Vec<Vec<f64>> = centre
            .iter()
            .map(|&c| {
                (-2i32..=2)
                    .map(|j| c + j as f64 * half)
                    .filter(|&v| v >= -1e-12 && v <= p_max + 1e-12)
                    .map(|v| v.clamp(0.0, p_max))
                    .collect()
            })
            .collect();
        evaluations.extend(evaluate_points(game, lattice(&axes), opts)?);
    }
    let best = incumbent(&evaluations);
    let prices = evaluations[best].0.clone();
    let report = fixed_price_nash(game, &prices, opts)?;
    Ok(GridSearchResult {
        prices,
        report,
        evaluations,
    })
}

/// Simulation output turned into a game.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub snapshot: Snapshot,
    pub inputs: GameInputs,
}

pub fn simulate_stage(cfg: &Config) -> Result<(Scenario, Snapshot)> {
    let scenario = Scenario::from_config(cfg).map_err(|e| e.in_stage("simulate"))?;
    let snapshot = simulate_period(&scenario, cfg.seed).map_err(|e| e.in_stage("simulate"))?;
    Ok((scenario, snapshot))
}

/// Simulation, feasibility, estimation and polytopes, each tagged on failure.
pub fn prepare(cfg: &Config) -> Result<Prepared> {
    let (scenario, snapshot) = simulate_stage(cfg)?;
    let fleets: Vec<CompanyFleet> =
        compute_feasibility(&snapshot, &scenario).map_err(|e| e.in_stage("feasibility"))?;
    let z = scenario.request_distribution();
    let estimates = estimate_company_params(
        &snapshot,
        &fleets,
        &scenario,
        &z,
        derive_seed(cfg.seed, STREAM_ESTIMATE),
    )
    .map_err(|e| e.in_stage("estimate"))?;
    let drivers = estimate_driver_params(&snapshot, &fleets, &estimates, &scenario);
    let objective =
        government_objective(&scenario, &fleets, &z).map_err(|e| e.in_stage("estimate"))?;
    let polytopes = build_polytopes(&fleets).map_err(|e| e.in_stage("polytopes"))?;
    let setpoint = objective
        .setpoint()
        .map(<[f64]>::to_vec)
        .unwrap_or_default();
    let game = assemble_game(&scenario, &fleets, &estimates, objective, polytopes)
        .map_err(|e| e.in_stage("estimate"))?;
    Ok(Prepared {
        scenario,
        snapshot,
        inputs: GameInputs {
            fleets,
            estimates,
            drivers,
            distribution: z,
            setpoint,
            game,
        },
    })
}

#[derive(Debug, Clone)]
pub struct UpperResult {
    pub mechanism: Mechanism,
    pub report: SolveReport,
    /// Price vector each company faces at the equilibrium.
    pub prices: Vec<Vec<f64>>,
    pub grid: Option<GridSearchResult>,
    pub seconds: f64,
}

/// Upper-level solve under the configured mechanism.
pub fn solve_upper(game: &GameInstance, cfg: &Config) -> Result<UpperResult> {
    let opts = solve_options(cfg);
    let e = &cfg.experiment;
    let start = Instant::now();
    let (report, prices, grid) = match e.mechanism {
        Mechanism::Rsg => {
            let map = RsgMap::new(game);
            let rep = solve_nash(game, &map, &with_fraction(&map, &opts, e.step_fraction))?;
            let prices = rsg_prices(game, &rep)?;
            (rep, prices, None)
        }
        Mechanism::FixedPrice => {
            let p = e.prices.clone().expect("validated");
            let map = FixedPriceMap::new(game, &p)?;
            let rep = solve_nash(game, &map, &with_fraction(&map, &opts, e.step_fraction))?;
            (rep, vec![p; game.companies_count()], None)
        }
        Mechanism::GridSearch => {
            let g = grid_search(game, e.p_max, e.resolution, e.refine, &opts)?;
            (
                g.report.clone(),
                vec![g.prices.clone(); game.companies_count()],
                Some(g),
            )
        }
    };
    Ok(UpperResult {
        mechanism: e.mechanism,
        report,
        prices,
        grid,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct LowerResult {
    /// Integer vehicle counts per company and station.
    pub counts: Vec<Vec<usize>>,
    pub surge: Vec<SurgeSolution>,
}

/// Rounds the equilibrium to vehicle counts and prices every fleet's drivers.
pub fn solve_lower(inputs: &GameInputs, upper: &UpperResult, cfg: &Config) -> Result<LowerResult> {
    let mut counts = Vec::with_capacity(inputs.fleets.len());
    for (i, f) in inputs.fleets.iter().enumerate() {
        counts.push(
            discretize(upper.report.x.block(i), &f.structure)
                .map_err(|e| e.in_stage("discretize"))?,
        );
    }
    let m = inputs.game.stations_count();
    let base_seed = derive_seed(cfg.seed, STREAM_SURGE);
    let mut surge = Vec::with_capacity(counts.len());
    for (i, n) in counts.iter().enumerate() {
        let sc = SurgeConfig {
            rho_min: vec![cfg.experiment.rho_min; m],
            margin: cfg.experiment.surge_margin,
            cap: None,
            budget: cfg.experiment.surge_budget,
            seed: derive_seed(base_seed, i as u64),
        };
        let drivers = &inputs.drivers[i];
        let sol =
            two_step(n, drivers, &upper.prices[i], &sc).map_err(|e| e.in_stage("two_step"))?;
        let check = verify_zero_cost(&sol, n, drivers, &upper.prices[i])
            .map_err(|e| e.in_stage("two_step"))?;
        if !check.zero_cost {
            return Err(Error::Internal(format!(
                "company {i}: surge prices leave {} drivers off target",
                check.mismatched.len()
            ))
            .in_stage("two_step"));
        }
        surge.push(sol);
    }
    Ok(LowerResult { counts, surge })
}

#[derive(Debug, Clone)]
pub struct MechanismRow {
    pub name: String,
    /// Constant prices; `None` for the policy-based mechanism.
    pub prices: Option<Vec<f64>>,
    pub j_g: f64,
    pub sigma: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl MechanismRow {
    fn from_report(name: &str, prices: Option<Vec<f64>>, r: &SolveReport) -> Self {
        Self {
            name: name.to_string(),
            prices,
            j_g: r.j_g,
            sigma: r.sigma.clone(),
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

/// Fixed-price baselines compared by the mechanism table and the
/// robustness sweep: the uniform base price, the grid-search optimum (as
/// `p1`) when given, and the configured extra vectors.
pub fn baseline_prices(
    game: &GameInstance,
    cfg: &Config,
    grid: Option<&GridSearchResult>,
) -> Vec<(String, Vec<f64>)> {
    let m = game.stations_count();
    let mut out = vec![("base".to_string(), vec![cfg.experiment.base_price; m])];
    if let Some(g) = grid {
        out.push(("p1".to_string(), g.prices.clone()));
    }
    for np in &cfg.experiment.extra_prices {
        out.push((np.name.clone(), np.prices.clone()));
    }
    out
}

/// Table rows: every baseline, then the policy-based mechanism.
pub fn compare_mechanisms(
    game: &GameInstance,
    cfg: &Config,
    grid: Option<&GridSearchResult>,
    rsg: Option<&SolveReport>,
) -> Result<Vec<MechanismRow>> {
    let opts = solve_options(cfg);
    let mut rows = Vec::new();
    for (name, p) in baseline_prices(game, cfg, grid) {
        let rep = fixed_price_nash(game, &p, &opts)?;
        rows.push(MechanismRow::from_report(&name, Some(p), &rep));
    }
    let own;
    let rep = match rsg {
        Some(r) => r,
        None => {
            own = rsg_nash(game, &opts)?;
            &own
        }
    };
    rows.push(MechanismRow::from_report("rsg", None, rep));
    Ok(rows)
}

/// Robustness sweep against the baselines of the mechanism table.
pub fn robustness_stage(
    game: &GameInstance,
    cfg: &Config,
    grid: Option<&GridSearchResult>,
) -> Result<SweepResult> {
    let e = &cfg.experiment;
    let baselines = baseline_prices(game, cfg, grid);
    robustness_sweep(
        game,
        &e.alphas,
        e.samples,
        derive_seed(cfg.seed, STREAM_ROBUSTNESS),
        &baselines,
    )
    .map_err(|e| e.in_stage("robustness"))
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub prepared: Prepared,
    pub upper: UpperResult,
    pub lower: LowerResult,
    pub mechanisms: Vec<MechanismRow>,
    pub robustness: Option<SweepResult>,
    pub files: Vec<PathBuf>,
}

/// Runs every stage and, when `out` is given, writes all outputs there.
pub fn run_pipeline(cfg: &Config, out: Option<&Path>) -> Result<Artifacts> {
    let prepared = prepare(cfg)?;
    let game = &prepared.inputs.game;
    let upper = solve_upper(game, cfg).map_err(|e| e.in_stage("upper"))?;
    let lower = solve_lower(&prepared.inputs, &upper, cfg)?;
    let grid = match &upper.grid {
        Some(g) => Some(g.clone()),
        None => Some(
            grid_search(
                game,
                cfg.experiment.p_max,
                cfg.experiment.resolution,
                cfg.experiment.refine,
                &solve_options(cfg),
            )
            .map_err(|e| e.in_stage("baselines"))?,
        ),
    };
    let rsg = match upper.mechanism {
        Mechanism::Rsg => Some(&upper.report),
        _ => None,
    };
    let mechanisms =
        compare_mechanisms(game, cfg, grid.as_ref(), rsg).map_err(|e| e.in_stage("baselines"))?;
    let robustness = if cfg.experiment.robustness {
        Some(robustness_stage(game, cfg, grid.as_ref())?)
    } else {
        None
    };
    let mut art = Artifacts {
        prepared,
        upper,
        lower,
        mechanisms,
        robustness,
        files: Vec::new(),
    };
    if let Some(dir) = out {
        art.files = write_all(dir, &art).map_err(|e| e.in_stage("output"))?;
    }
    Ok(art)
}
