use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::battery::{VehicleState, DESIRED_LEVEL};
use super::simulate::{Scenario, Snapshot};
use crate::feasible::{admissible_polytope, AdmissiblePolytope, FeasibilityStructure};
use crate::model::{
    setpoint_from_distribution, CompanyParams, GameInstance, GovernmentObjective, StationSet,
};
use crate::surge::DriverParams;
use crate::{Error, Result};

/// The charging vehicles of one company and what they can reach.
#[derive(Debug, Clone)]
pub struct CompanyFleet {
    pub company: usize,
    /// Snapshot indices.
    pub vehicles: Vec<usize>,
    /// `d_{v,k}` in km, one row per vehicle.
    pub distances: Vec<Vec<f64>>,
    pub structure: FeasibilityStructure,
}

impl CompanyFleet {
    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }
}

/// `δ_{v,k} = β_v (s_des − (s_start − (100/d_max) d_{v,k}))`.
pub fn charging_demand(v: &VehicleState, km: f64) -> f64 {
    v.beta * (DESIRED_LEVEL - (v.start_battery - v.rate() * km))
}

/// Station `k` is feasible for `v` iff `s_v − (100/d_max) d_{v,k} > 0`.
pub fn compute_feasibility(snapshot: &Snapshot, scenario: &Scenario) -> Result<Vec<CompanyFleet>> {
    let net = &scenario.network;
    let mut out = Vec::with_capacity(snapshot.companies);
    for (company, vehicles) in snapshot.charging_vehicles().into_iter().enumerate() {
        let mut distances = Vec::with_capacity(vehicles.len());
        let mut reach = Vec::with_capacity(vehicles.len());
        for &idx in &vehicles {
            let v = &snapshot.vehicles[idx];
            let row: Vec<f64> = scenario
                .station_nodes
                .iter()
                .map(|&s| net.distance(v.node, s))
                .collect();
            let ok: Vec<usize> = (0..row.len()).filter(|&k| v.can_reach(row[k])).collect();
            if ok.is_empty() {
                return Err(Error::DegenerateFleet(format!(
                    "vehicle {idx} of company {company} (battery {:.2}%) cannot reach any station",
                    v.battery
                )));
            }
            distances.push(row);
            reach.push(ok);
        }
        let structure = FeasibilityStructure::new(scenario.stations(), reach)?;
        out.push(CompanyFleet {
            company,
            vehicles,
            distances,
            structure,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompanyEstimate {
    pub fleet: usize,
    /// Diagonal of `R_i`: mean charging demand over the vehicles reaching each station.
    pub mean_demand: Vec<f64>,
    /// Diagonal of `D_i = N_i R_i`.
    pub demand: Vec<f64>,
    pub e_arr: Vec<f64>,
    pub e_pro: Vec<f64>,
    /// `f_i = N_i (e_arr − e_pro)`.
    pub revenue: Vec<f64>,
}

/// Estimates `(D_i, f_i)` for every company. `z` is the desired distribution;
/// the profit noise is drawn per company and station from `seed`.
pub fn estimate_company_params(
    snapshot: &Snapshot,
    fleets: &[CompanyFleet],
    scenario: &Scenario,
    z: &[f64],
    seed: u64,
) -> Result<Vec<CompanyEstimate>> {
    let cfg = &scenario.config;
    let m = scenario.stations();
    crate::error::check_len("desired distribution", z, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = cfg.region.profit_noise;
    let mut out = Vec::with_capacity(fleets.len());
    for f in fleets {
        if f.is_empty() {
            return Err(Error::DegenerateFleet(format!(
                "company {} has no vehicle to charge",
                f.company
            )));
        }
        let n = f.len() as f64;
        let u = cfg.idle_cost(f.company);
        let mut mean_demand = vec![0.0; m];
        let mut e_arr = vec![0.0; m];
        for k in 0..m {
            let members = f.structure.station_members(k);
            if members.is_empty() {
                continue;
            }
            let (mut dsum, mut ksum) = (0.0, 0.0);
            for &local in &members {
                let v = &snapshot.vehicles[f.vehicles[local]];
                let km = f.distances[local][k];
                dsum += charging_demand(v, km);
                ksum += km;
            }
            let cnt = members.len() as f64;
            mean_demand[k] = dsum / cnt;
            e_arr[k] = u * cfg.region.occupancy[k] * ksum / cnt;
        }
        let e_pro: Vec<f64> = (0..m)
            .map(|k| cfg.region.phi * z[k] + noise * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let demand = mean_demand.iter().map(|r| n * r).collect();
        let revenue = (0..m).map(|k| n * (e_arr[k] - e_pro[k])).collect();
        out.push(CompanyEstimate {
            fleet: f.len(),
            mean_demand,
            demand,
            e_arr,
            e_pro,
            revenue,
        });
    }
    Ok(out)
}

/// `(D_v, g_v, H_v)` for every charging vehicle, grouped by company.
pub fn estimate_driver_params(
    snapshot: &Snapshot,
    fleets: &[CompanyFleet],
    estimates: &[CompanyEstimate],
    scenario: &Scenario,
) -> Vec<Vec<DriverParams>> {
    let r = &scenario.config.region;
    let m = scenario.stations();
    let gain: Vec<f64> = r.occupancy.iter().map(|p| r.tau * r.v_bar * p).collect();
    fleets
        .iter()
        .zip(estimates)
        .map(|(f, e)| {
            let revenue: Vec<f64> = (0..m)
                .map(|k| e.e_arr[k] - r.tau / r.t_daily * e.e_pro[k])
                .collect();
            (0..f.len())
                .map(|local| {
                    let v = &snapshot.vehicles[f.vehicles[local]];
                    let reachable = f.structure.reachable(local).to_vec();
                    let mut demand = vec![0.0; m];
                    for &k in &reachable {
                        demand[k] = charging_demand(v, f.distances[local][k]);
                    }
                    DriverParams {
                        demand,
                        revenue: revenue.clone(),
                        gain: gain.clone(),
                        reachable,
                    }
                })
                .collect()
        })
        .collect()
}

/// Everything the two control levels need, derived from one snapshot.
#[derive(Debug, Clone)]
pub struct GameInputs {
    pub fleets: Vec<CompanyFleet>,
    pub estimates: Vec<CompanyEstimate>,
    pub drivers: Vec<Vec<DriverParams>>,
    /// Desired distribution `Z`.
    pub distribution: Vec<f64>,
    /// `N̂ = (Σ N_i) Z`.
    pub setpoint: Vec<f64>,
    pub game: GameInstance,
}

/// Station set with capacities `M` and queue weights `Q` of the scenario.
pub fn station_set(scenario: &Scenario) -> Result<StationSet> {
    let st = &scenario.config.stations;
    StationSet::new(
        st.iter().map(|s| s.capacity).collect(),
        st.iter().map(|s| s.queue_weight).collect(),
    )
}

/// One admissible polytope per company; an empty one is reported as such.
pub fn build_polytopes(fleets: &[CompanyFleet]) -> Result<Vec<AdmissiblePolytope>> {
    fleets
        .iter()
        .map(|f| {
            let poly = admissible_polytope(&f.structure)?.for_company(f.company);
            if poly.is_empty() {
                return Err(Error::EmptyPolytope { company: f.company });
            }
            Ok(poly)
        })
        .collect()
}

/// Government objective with `A_G = scale · Q` and set-point `N̂ = (Σ N_i) Z`.
pub fn government_objective(
    scenario: &Scenario,
    fleets: &[CompanyFleet],
    z: &[f64],
) -> Result<GovernmentObjective> {
    let stations = station_set(scenario)?;
    let sizes: Vec<f64> = fleets.iter().map(|f| f.len() as f64).collect();
    let setpoint = setpoint_from_distribution(&sizes, z)?;
    let scale = scenario.config.government.weight_scale;
    let weights = stations.queue_weights().iter().map(|q| scale * q).collect();
    GovernmentObjective::from_setpoint(weights, setpoint)
}

pub fn assemble_game(
    scenario: &Scenario,
    fleets: &[CompanyFleet],
    estimates: &[CompanyEstimate],
    objective: GovernmentObjective,
    polytopes: Vec<AdmissiblePolytope>,
) -> Result<GameInstance> {
    let stations = station_set(scenario)?;
    let companies = fleets
        .iter()
        .zip(estimates)
        .map(|(f, e)| CompanyParams::new(f.len(), e.demand.clone(), e.revenue.clone(), &stations))
        .collect::<Result<Vec<_>>>()?;
    GameInstance::new(stations, objective, companies, polytopes)
}

/// Estimation, polytopes and game assembly in one call.
pub fn build_game(
    scenario: &Scenario,
    snapshot: &Snapshot,
    fleets: Vec<CompanyFleet>,
    seed: u64,
) -> Result<GameInputs> {
    let z = scenario.request_distribution();
    let estimates = estimate_company_params(snapshot, &fleets, scenario, &z, seed)?;
    let drivers = estimate_driver_params(snapshot, &fleets, &estimates, scenario);
    let objective = government_objective(scenario, &fleets, &z)?;
    let polytopes = build_polytopes(&fleets)?;
    let setpoint = objective
        .setpoint()
        .map(<[f64]>::to_vec)
        .unwrap_or_default();
    let game = assemble_game(scenario, &fleets, &estimates, objective, polytopes)?;
    Ok(GameInputs {
        fleets,
        estimates,
        drivers,
        distribution: z,
        setpoint,
        game,
    })
}
