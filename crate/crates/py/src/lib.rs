//! Python bindings: build a game, solve it, and run the full pipeline.

use std::path::PathBuf;

use fc::config::Config;
use fc::equilibrium::{
    solve_nash, step_size_bound, FixedPriceMap, RsgMap, SolveOptions, SolveReport,
};
use fc::feasible::{admissible_polytope, FeasibilityStructure};
use fc::model::{AllocationProfile, CompanyParams, GameInstance, GovernmentObjective, StationSet};
use fc::{harness, Error};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(fleetcharge_py, FleetChargeError, PyException);
create_exception!(fleetcharge_py, InfeasibleError, FleetChargeError);
create_exception!(fleetcharge_py, NumericalError, FleetChargeError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    if e.is_infeasible() {
        InfeasibleError::new_err(msg)
    } else if e.is_numerical() {
        NumericalError::new_err(msg)
    } else {
        FleetChargeError::new_err(msg)
    }
}

fn structure(m: usize, reach: Vec<Vec<usize>>) -> PyResult<FeasibilityStructure> {
    FeasibilityStructure::new(m, reach).map_err(to_py)
}

fn report_dict<'py>(
    py: Python<'py>,
    game: &GameInstance,
    rep: &SolveReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let x: Vec<Vec<f64>> = rep.x.blocks().map(|b| b.to_vec()).collect();
    d.set_item("x", x)?;
    d.set_item("sigma", rep.sigma.clone())?;
    d.set_item("j_g", rep.j_g)?;
    d.set_item("gamma", rep.gamma)?;
    d.set_item("iterations", rep.iterations)?;
    d.set_item("converged", rep.converged)?;
    d.set_item("residuals", rep.residuals.clone())?;
    let counts: Vec<f64> = game.fleets();
    d.set_item("fleets", counts)?;
    Ok(d)
}

/// Upper-level game between the government and the fleet operators.
#[pyclass(frozen)]
struct Game {
    inner: GameInstance,
}

impl Game {
    fn options(
        &self,
        max_iter: Option<usize>,
        tol: Option<f64>,
        x0: Option<Vec<Vec<f64>>>,
    ) -> PyResult<SolveOptions> {
        let mut opts = SolveOptions::default();
        if let Some(n) = max_iter {
            opts.max_iter = n;
        }
        if let Some(t) = tol {
            opts.tol = t;
        }
        if let Some(blocks) = x0 {
            opts.x0 = Some(AllocationProfile::from_blocks(&blocks).map_err(to_py)?);
        }
        Ok(opts)
    }

    fn profile(&self, x: Vec<Vec<f64>>) -> PyResult<AllocationProfile> {
        AllocationProfile::from_blocks(&x).map_err(to_py)
    }
}

#[pymethods]
impl Game {
    /// `reach[i][v]` lists the stations vehicle `v` of company `i` can reach;
    /// omitted, every vehicle reaches every station.
    #[new]
    #[pyo3(signature = (capacities, queue_weights, weights, setpoint, fleets, demand, revenue, reach=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        capacities: Vec<f64>,
        queue_weights: Vec<f64>,
        weights: Vec<f64>,
        setpoint: Vec<f64>,
        fleets: Vec<usize>,
        demand: Vec<Vec<f64>>,
        revenue: Vec<Vec<f64>>,
        reach: Option<Vec<Vec<Vec<usize>>>>,
    ) -> PyResult<Self> {
        let m = capacities.len();
        let stations = StationSet::new(capacities, queue_weights).map_err(to_py)?;
        let objective = GovernmentObjective::from_setpoint(weights, setpoint).map_err(to_py)?;
        if demand.len() != fleets.len() || revenue.len() != fleets.len() {
            return Err(FleetChargeError::new_err(
                "demand and revenue need one row per company",
            ));
        }
        let reach = match reach {
            Some(r) if r.len() == fleets.len() => r,
            Some(_) => {
                return Err(FleetChargeError::new_err(
                    "reach needs one entry per company",
                ))
            }
            None => fleets.iter().map(|&n| vec![(0..m).collect(); n]).collect(),
        };
        let mut companies = Vec::new();
        let mut polytopes = Vec::new();
        for (i, ((&n, r), (d, g))) in fleets
            .iter()
            .zip(reach)
            .zip(demand.into_iter().zip(revenue))
            .enumerate()
        {
            if r.len() != n {
                return Err(FleetChargeError::new_err(format!(
                    "company {i}: {} reach sets for {n} vehicles",
                    r.len()
                )));
            }
            let fs = structure(m, r)?;
            polytopes.push(admissible_polytope(&fs).map_err(to_py)?.for_company(i));
            companies.push(CompanyParams::new(n, d, g, &stations).map_err(to_py)?);
        }
        let inner = GameInstance::new(stations, objective, companies, polytopes).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Equilibrium under the system optimal pricing policy.
    #[pyo3(signature = (max_iter=None, tol=None, x0=None))]
    fn solve_rsg<'py>(
        &self,
        py: Python<'py>,
        max_iter: Option<usize>,
        tol: Option<f64>,
        x0: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = self.options(max_iter, tol, x0)?;
        let rep = py
            .detach(|| solve_nash(&self.inner, &RsgMap::new(&self.inner), &opts))
            .map_err(to_py)?;
        report_dict(py, &self.inner, &rep)
    }

    /// Equilibrium when every company pays the same fixed station prices.
    #[pyo3(signature = (prices, max_iter=None, tol=None, x0=None))]
    fn solve_fixed_price<'py>(
        &self,
        py: Python<'py>,
        prices: Vec<f64>,
        max_iter: Option<usize>,
        tol: Option<f64>,
        x0: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = self.options(max_iter, tol, x0)?;
        let map = FixedPriceMap::new(&self.inner, &prices).map_err(to_py)?;
        let rep = py
            .detach(|| solve_nash(&self.inner, &map, &opts))
            .map_err(to_py)?;
        report_dict(py, &self.inner, &rep)
    }

    /// Policy prices each company faces at allocation `x`.
    fn prices(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let profile = self.profile(x)?;
        let fleets = self.inner.fleets();
        (0..self.inner.companies_count())
            .map(|i| {
                let minus = profile.partial_aggregate(i, &fleets);
                fc::model::system_optimal_policy(&self.inner, i, profile.block(i), &minus)
                    .map(|p| p.prices)
            })
            .collect::<fc::Result<_>>()
            .map_err(to_py)
    }

    fn government_cost(&self, x: Vec<Vec<f64>>) -> PyResult<f64> {
        Ok(self.inner.government_cost(&self.profile(x)?))
    }

    /// Largest step `2/λ_max` for which the averaged iteration converges.
    fn step_size_bound(&self) -> f64 {
        step_size_bound(&RsgMap::new(&self.inner))
    }

    #[getter]
    fn companies(&self) -> usize {
        self.inner.companies_count()
    }

    #[getter]
    fn stations(&self) -> usize {
        self.inner.stations_count()
    }
}

/// Whether the station counts `n` can be matched to vehicles with reach sets `reach`.
#[pyfunction]
fn hall_condition(n: Vec<usize>, reach: Vec<Vec<usize>>) -> PyResult<bool> {
    let fs = structure(n.len(), reach)?;
    Ok(fc::feasible::hall_condition(&n, &fs))
}

/// A station for every vehicle realising the counts `n`.
#[pyfunction]
fn assign_vehicles(n: Vec<usize>, reach: Vec<Vec<usize>>) -> PyResult<Vec<usize>> {
    let fs = structure(n.len(), reach)?;
    fc::surge::assign_vehicles(&n, &fs).map_err(to_py)
}

/// Rounds a continuous allocation to matchable vehicle counts.
#[pyfunction]
fn discretize(x: Vec<f64>, reach: Vec<Vec<usize>>) -> PyResult<Vec<usize>> {
    let fs = structure(x.len(), reach)?;
    fc::feasible::discretize(&x, &fs).map_err(to_py)
}

/// Network speed (km/h) at accumulation `n`.
#[pyfunction]
fn mfd_speed(n: f64) -> PyResult<f64> {
    fc::sim::mfd_speed(n).map_err(to_py)
}

/// Runs every stage for a TOML configuration and returns a summary; with
/// `out` the CSV outputs are written there.
#[pyfunction]
#[pyo3(signature = (config, out=None, seed=None, robustness=false))]
fn run_pipeline<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    robustness: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = Config::from_file(&config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.experiment.robustness |= robustness;
    let art = py
        .detach(|| harness::run_pipeline(&cfg, out.as_deref()))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mechanism", art.upper.mechanism.as_str())?;
    d.set_item("j_g", art.upper.report.j_g)?;
    d.set_item("iterations", art.upper.report.iterations)?;
    d.set_item("sigma", art.upper.report.sigma.clone())?;
    d.set_item("setpoint", art.prepared.inputs.setpoint.clone())?;
    d.set_item("distribution", art.prepared.inputs.distribution.clone())?;
    d.set_item("prices", art.upper.prices.clone())?;
    d.set_item("counts", art.lower.counts.clone())?;
    d.set_item(
        "surge_cost",
        art.lower.surge.iter().map(|s| s.j_m).sum::<f64>(),
    )?;
    let mech = PyDict::new(py);
    for r in &art.mechanisms {
        mech.set_item(&r.name, r.j_g)?;
    }
    d.set_item("mechanisms", mech)?;
    let files: Vec<String> = art.files.iter().map(|f| f.display().to_string()).collect();
    d.set_item("files", files)?;
    Ok(d)
}

#[pymodule]
fn fleetcharge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Game>()?;
    m.add_function(wrap_pyfunction!(hall_condition, m)?)?;
    m.add_function(wrap_pyfunction!(assign_vehicles, m)?)?;
    m.add_function(wrap_pyfunction!(discretize, m)?)?;
    m.add_function(wrap_pyfunction!(mfd_speed, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("FleetChargeError", m.py().get_type::<FleetChargeError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    Ok(())
}
