//! Lower level: steering individual drivers to the stations chosen by their
//! company through surge prices.
//!
//! Driver `v` picks the station minimising `D_v,kk p_k + g_v,k − H_v,kk ρ_k`
//! over its reachable set; ties go to the lowest station index.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feasible::{hall_condition, FeasibilityStructure};
use crate::flow::FlowNetwork;
use crate::qp::{self, LinearRow};

/// Default strict-preference margin added to surge thresholds.
pub const DEFAULT_MARGIN: f64 = 1e-6;
/// Largest number of class-to-station patterns the exact equal-price solver
/// will enumerate.
pub const MAX_PATTERNS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DriverParams {
    /// Diagonal of `D_v`; zero exactly on unreachable stations.
    pub demand: Vec<f64>,
    /// `g_v`.
    pub revenue: Vec<f64>,
    /// Diagonal of `H_v`.
    pub gain: Vec<f64>,
    /// `Ω_v`, ascending.
    pub reachable: Vec<usize>,
}

impl DriverParams {
    /// Cost of station `k` before surge: `D_v,kk p_k + g_v,k`.
    pub fn base_cost(&self, k: usize, prices: &[f64]) -> f64 {
        self.demand[k] * prices[k] + self.revenue[k]
    }

    pub fn cost(&self, k: usize, prices: &[f64], rho: &[f64]) -> f64 {
        self.base_cost(k, prices) - self.gain[k] * rho[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurgeMode {
    EqualPrice,
    PerVehicle,
}

impl SurgeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SurgeMode::EqualPrice => "equal-price",
            SurgeMode::PerVehicle => "per-vehicle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurgeConfig {
    pub rho_min: Vec<f64>,
    pub margin: f64,
    /// Optional upper bound on every surge price.
    pub cap: Option<f64>,
    /// Objective evaluations allowed to the equal-price local search.
    pub budget: usize,
    pub seed: u64,
}

impl SurgeConfig {
    pub fn new(stations: usize) -> Self {
        Self {
            rho_min: vec![0.0; stations],
            margin: DEFAULT_MARGIN,
            cap: None,
            budget: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurgeSolution {
    /// Station each driver ends up at (its best response under `surge`).
    pub assignment: Vec<usize>,
    /// Surge vector per driver; identical rows in equal-price mode.
    pub surge: Vec<Vec<f64>>,
    /// `½ ‖σ(μ) − n‖²`.
    pub j_m: f64,
    pub mode: SurgeMode,
    /// Whether the equal-price result is provably optimal.
    pub exact: bool,
}

/// `½ ‖σ(μ) − n‖²` for station choices `mu`.
pub fn matching_cost(mu: &[usize], n: &[usize]) -> f64 {
    let mut counts = vec![0i64; n.len()];
    for &k in mu {
        counts[k] += 1;
    }
    0.5 * counts
        .iter()
        .zip(n)
        .map(|(c, t)| ((c - *t as i64) as f64).powi(2))
        .sum::<f64>()
}

pub fn structure_of(drivers: &[DriverParams], stations: usize) -> Result<FeasibilityStructure> {
    FeasibilityStructure::new(
        stations,
        drivers.iter().map(|d| d.reachable.clone()).collect(),
    )
}

/// Perfect many-to-one matching placing exactly `n_j` vehicles at station `j`.
pub fn assign_vehicles(n: &[usize], fs: &FeasibilityStructure) -> Result<Vec<usize>> {
    let m = fs.stations();
    if n.len() != m {
        return Err(Error::InvalidParameter(format!(
            "target has {} stations, expected {m}",
            n.len()
        )));
    }
    let vehicles = fs.vehicles();
    if n.iter().sum::<usize>() != vehicles || !hall_condition(n, fs) {
        return Err(Error::InfeasibleTarget(format!("{n:?} cannot be matched")));
    }
    let source = vehicles + m;
    let sink = source + 1;
    let mut g = FlowNetwork::new(sink + 1);
    let mut edges = Vec::with_capacity(vehicles);
    for v in 0..vehicles {
        g.add_edge(source, v, 1);
        edges.push(
            fs.reachable(v)
                .iter()
                .map(|&k| (k, g.add_edge(v, vehicles + k, 1)))
                .collect::<Vec<_>>(),
        );
    }
    for (k, &cap) in n.iter().enumerate() {
        g.add_edge(vehicles + k, sink, cap as i64);
    }
    if g.max_flow(source, sink) != vehicles as i64 {
        return Err(Error::InfeasibleTarget(format!("{n:?} cannot be matched")));
    }
    Ok(edges
        .iter()
        .map(|e| {
            e.iter()
                .find(|(_, id)| g.flow(*id) == 1)
                .map(|(k, _)| *k)
                .expect("saturated vehicle")
        })
        .collect())
}

/// Station minimising the driver's cost; lowest index wins ties.
pub fn driver_best_response(driver: &DriverParams, rho: &[f64], prices: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &k in &driver.reachable {
        let c = driver.cost(k, prices, rho);
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| Error::DegenerateFleet("driver cannot reach any station".into()))
}

fn best_responses(
    drivers: &[DriverParams],
    surge: &[Vec<f64>],
    prices: &[f64],
) -> Result<Vec<usize>> {
    drivers
        .iter()
        .zip(surge)
        .map(|(d, r)| driver_best_response(d, r, prices))
        .collect()
}

/// Surge vector that makes `target` the strict best response of `driver`:
/// every other station keeps `ρ_min`, the target gets the smallest value
/// beating all alternatives by `margin`.
pub fn vehicle_surge(
    driver: &DriverParams,
    vehicle: usize,
    target: usize,
    prices: &[f64],
    cfg: &SurgeConfig,
) -> Result<Vec<f64>> {
    if !driver.reachable.contains(&target) {
        return Err(Error::InfeasibleTarget(format!(
            "vehicle {vehicle} cannot reach station {target}"
        )));
    }
    let mut rho = cfg.rho_min.clone();
    let base_t = driver.base_cost(target, prices);
    let gain_t = driver.gain[target];
    // ρ_t must exceed (H_j ρ_j − δ_j) / H_t for every alternative j, where
    // δ_j = α_j − α_t
    let mut needs = f64::NEG_INFINITY;
    let mut beaten = true;
    for &j in &driver.reachable {
        if j == target {
            continue;
        }
        let numer = driver.gain[j] * rho[j] - (driver.base_cost(j, prices) - base_t);
        if gain_t > 0.0 {
            needs = needs.max(numer / gain_t);
        } else if !(numer < 0.0) {
            beaten = false;
        }
    }
    if gain_t <= 0.0 {
        if beaten {
            return Ok(rho);
        }
        return Err(Error::ZeroSurgeGain {
            vehicle,
            station: target,
        });
    }
    if cfg.rho_min[target] < needs + cfg.margin {
        rho[target] = needs + cfg.margin;
    }
    if let Some(cap) = cfg.cap {
        rho[target] = rho[target].min(cap);
    }
    Ok(rho)
}

/// Per-vehicle surge prices realising `assignment` exactly.
pub fn per_vehicle_prices(
    drivers: &[DriverParams],
    assignment: &[usize],
    prices: &[f64],
    cfg: &SurgeConfig,
) -> Result<SurgeSolution> {
    if assignment.len() != drivers.len() {
        return Err(Error::InvalidParameter(
            "assignment length differs from fleet size".into(),
        ));
    }
    let surge = drivers
        .iter()
        .zip(assignment)
        .enumerate()
        .map(|(v, (d, &t))| vehicle_surge(d, v, t, prices, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mu = best_responses(drivers, &surge, prices)?;
    let mut n = vec![0usize; prices.len()];
    for &k in assignment {
        n[k] += 1;
    }
    Ok(SurgeSolution {
        j_m: matching_cost(&mu, &n),
        assignment: mu,
        surge,
        mode: SurgeMode::PerVehicle,
        exact: true,
    })
}

/// Drivers grouped by identical parameters; the same common surge vector
/// sends every member of a class to the same station.
fn driver_classes(drivers: &[DriverParams], prices: &[f64]) -> Vec<(Vec<usize>, usize)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut classes: Vec<(Vec<usize>, usize)> = Vec::new();
    for (v, d) in drivers.iter().enumerate() {
        let mut key: Vec<u64> = d.reachable.iter().map(|&k| k as u64).collect();
        key.push(u64::MAX);
        for &k in &d.reachable {
            key.push(d.base_cost(k, prices).to_bits());
            key.push(d.gain[k].to_bits());
        }
        match index.get(&key) {
            Some(&c) => classes[c].0.push(v),
            None => {
                index.insert(key, classes.len());
                classes.push((vec![v], v));
            }
        }
    }
    classes
}

/// Common surge vector closest to `ρ_min` sending each class to its pattern
/// station with margin, if one exists.
fn common_surge_for(
    drivers: &[DriverParams],
    classes: &[(Vec<usize>, usize)],
    pattern: &[usize],
    prices: &[f64],
    cfg: &SurgeConfig,
) -> Result<Option<Vec<f64>>> {
    let m = prices.len();
    let mut ineqs = Vec::new();
    for ((_, rep), &t) in classes.iter().zip(pattern) {
        let d = &drivers[*rep];
        for &j in &d.reachable {
            if j == t {
                continue;
            }
            // H_t ρ_t − H_j ρ_j ≥ α_t − α_j + margin
            let mut c = vec![0.0; m];
            c[t] += d.gain[t];
            c[j] -= d.gain[j];
            let rhs = d.base_cost(t, prices) - d.base_cost(j, prices) + cfg.margin;
            if c.iter().all(|v| *v == 0.0) {
                if rhs > 0.0 {
                    return Ok(None);
                }
                continue;
            }
            ineqs.push(LinearRow::new(c, rhs));
        }
    }
    for k in 0..m {
        let mut c = vec![0.0; m];
        c[k] = 1.0;
        ineqs.push(LinearRow::new(c.clone(), cfg.rho_min[k]));
        if let Some(cap) = cfg.cap {
            c[k] = -1.0;
            ineqs.push(LinearRow::new(c, -cap));
        }
    }
    match qp::project(&cfg.rho_min, &[], &ineqs) {
        Ok(sol) => Ok(Some(
            sol.x
                .iter()
                .zip(&cfg.rho_min)
                .map(|(r, lo)| r.max(*lo))
                .collect(),
        )),
        Err(Error::InfeasibleProgram) => Ok(None),
        Err(e) => Err(e),
    }
}

/// A single surge vector shared by all drivers, chosen to bring the
/// realised station counts as close as possible to `n`.
pub fn equal_price_solve(
    n: &[usize],
    drivers: &[DriverParams],
    prices: &[f64],
    cfg: &SurgeConfig,
) -> Result<SurgeSolution> {
    let m = prices.len();
    if n.len() != m || cfg.rho_min.len() != m {
        return Err(Error::InvalidParameter(
            "station count mismatch in surge inputs".into(),
        ));
    }
    let classes = driver_classes(drivers, prices);
    let mut patterns = 1usize;
    for (_, rep) in &classes {
        patterns = patterns.saturating_mul(drivers[*rep].reachable.len());
    }
    if patterns <= MAX_PATTERNS {
        if let Some(sol) = exact_equal_price(n, drivers, prices, cfg, &classes)? {
            return Ok(sol);
        }
    }
    local_search_equal_price(n, drivers, prices, cfg)
}

fn exact_equal_price(
    n: &[usize],
    drivers: &[DriverParams],
    prices: &[f64],
    cfg: &SurgeConfig,
    classes: &[(Vec<usize>, usize)],
) -> Result<Option<SurgeSolution>> {
    let m = prices.len();
    // enumerate every class → station pattern with its matching cost
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut pattern = vec![0usize; classes.len()];
    let mut counts = vec![0i64; m];
    fn rec(
        c: usize,
        classes: &[(Vec<usize>, usize)],
        drivers: &[DriverParams],
        n: &[usize],
        pattern: &mut Vec<usize>,
        counts: &mut Vec<i64>,
        out: &mut Vec<(f64, Vec<usize>)>,
    ) {
        if c == classes.len() {
            let j = 0.5
                * counts
                    .iter()
                    .zip(n)
                    .map(|(a, b)| ((a - *b as i64) as f64).powi(2))
                    .sum::<f64>();
            out.push((j, pattern.clone()));
            return;
        }
        let size = classes[c].0.len() as i64;
        for &k in &drivers[classes[c].1].reachable {
            pattern[c] = k;
            counts[k] += size;
            rec(c + 1, classes, drivers, n, pattern, counts, out);
            counts[k] -= size;
        }
    }
    rec(
        0,
        classes,
        drivers,
        n,
        &mut pattern,
        &mut counts,
        &mut candidates,
    );
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, pat) in &candidates {
        if let Some(rho) = common_surge_for(drivers, classes, pat, prices, cfg)? {
            let surge = vec![rho; drivers.len()];
            let mu = best_responses(drivers, &surge, prices)?;
            let realised: bool = classes
                .iter()
                .zip(pat)
                .all(|((members, _), &t)| members.iter().all(|&v| mu[v] == t));
            if realised {
                return Ok(Some(SurgeSolution {
                    j_m: matching_cost(&mu, n),
                    assignment: mu,
                    surge,
                    mode: SurgeMode::EqualPrice,
                    exact: true,
                }));
            }
        }
    }
    Ok(None)
}

/// Coordinate search over the breakpoints at which drivers switch station,
/// with seeded random restarts.
fn local_search_equal_price(
    n: &[usize],
    drivers: &[DriverParams],
    prices: &[f64],
    cfg: &SurgeConfig,
) -> Result<SurgeSolution> {
    let m = prices.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evals = 0usize;
    let clamp = |v: f64, k: usize| -> f64 {
        let v = v.max(cfg.rho_min[k]);
        cfg.cap.map_or(v, |c| v.min(c))
    };
    let eval = |rho: &[f64], evals: &mut usize| -> Result<(f64, Vec<usize>)> {
        *evals += 1;
        let mu = drivers
            .iter()
            .map(|d| driver_best_response(d, rho, prices))
            .collect::<Result<Vec<_>>>()?;
        Ok((matching_cost(&mu, n), mu))
    };
    let mut best_rho = cfg.rho_min.clone();
    let (mut best_j, mut best_mu) = eval(&best_rho, &mut evals)?;
    let mut start = best_rho.clone();
    while evals < cfg.budget && best_j > 0.0 {
        let mut rho = start.clone();
        let (mut cur_j, mut cur_mu) = eval(&rho, &mut evals)?;
        loop {
            let mut improved = false;
            for k in 0..m {
                // values of ρ_k at which some driver becomes indifferent
                // between k and its current station
                let mut points: Vec<f64> = vec![cfg.rho_min[k]];
                for (d, &c) in drivers.iter().zip(&cur_mu) {
                    if c == k || d.gain[k] <= 0.0 || !d.reachable.contains(&k) {
                        continue;
                    }
                    let cur_cost = d.cost(c, prices, &rho);
                    let t = (d.base_cost(k, prices) - cur_cost) / d.gain[k];
                    points.push(clamp(t + cfg.margin, k));
                    points.push(clamp(t - cfg.margin, k));
                }
                points.sort_by(f64::total_cmp);
                points.dedup();
                for p in points {
                    if evals >= cfg.budget {
                        break;
                    }
                    if p == rho[k] {
                        continue;
                    }
                    let old = rho[k];
                    rho[k] = p;
                    let (j, mu) = eval(&rho, &mut evals)?;
                    if j < cur_j {
                        cur_j = j;
                        cur_mu = mu;
                        improved = true;
                    } else {
                        rho[k] = old;
                    }
                }
            }
            if !improved || evals >= cfg.budget || cur_j == 0.0 {
                break;
            }
        }
        if cur_j < best_j {
            best_j = cur_j;
            best_mu = cur_mu;
            best_rho = rho;
        }
        // restart from a random perturbation of the incumbent
        let scale = 1.0 + best_rho.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        start = (0..m)
            .map(|k| clamp(best_rho[k] + scale * rng.random_range(-0.5..0.5), k))
            .collect();
    }
    Ok(SurgeSolution {
        j_m: best_j,
        assignment: best_mu,
        surge: vec![best_rho; drivers.len()],
        mode: SurgeMode::EqualPrice,
        exact: false,
    })
}

/// Equal prices first; if they cannot realise `n`, match vehicles to
/// stations and price every vehicle individually.
pub fn two_step(
    n: &[usize],
    drivers: &[DriverParams],
    prices: &[f64],
    cfg: &SurgeConfig,
) -> Result<SurgeSolution> {
    let fs = structure_of(drivers, prices.len())?;
    if n.iter().sum::<usize>() != drivers.len() || !hall_condition(n, &fs) {
        return Err(Error::InfeasibleTarget(format!("{n:?} cannot be matched")));
    }
    let equal = equal_price_solve(n, drivers, prices, cfg)?;
    if equal.j_m == 0.0 {
        return Ok(equal);
    }
    let assignment = assign_vehicles(n, &fs)?;
    per_vehicle_prices(drivers, &assignment, prices, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroCostCheck {
    pub zero_cost: bool,
    pub hall_feasible: bool,
    /// Drivers whose recomputed best response differs from the solution.
    pub mismatched: Vec<usize>,
}

/// Recomputes every best response under the solution's surge prices and
/// checks that the realised counts equal `n`.
pub fn verify_zero_cost(
    sol: &SurgeSolution,
    n: &[usize],
    drivers: &[DriverParams],
    prices: &[f64],
) -> Result<ZeroCostCheck> {
    let fs = structure_of(drivers, prices.len())?;
    let hall = n.len() == prices.len()
        && n.iter().sum::<usize>() == drivers.len()
        && hall_condition(n, &fs);
    let mu = best_responses(drivers, &sol.surge, prices)?;
    let mismatched: Vec<usize> = (0..drivers.len())
        .filter(|&v| mu[v] != sol.assignment[v])
        .collect();
    let zero = hall && mismatched.is_empty() && matching_cost(&mu, n) == 0.0;
    Ok(ZeroCostCheck {
        zero_cost: zero,
        hall_feasible: hall,
        mismatched,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn random_drivers(
        rng: &mut ChaCha8Rng,
        count: usize,
        m: usize,
    ) -> Vec<DriverParams> {
        (0..count)
            .map(|_| {
                let mut reachable: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.7)).collect();
                if reachable.is_empty() {
                    reachable.push(rng.random_range(0..m));
                }
                let demand = (0..m)
                    .map(|k| {
                        if reachable.contains(&k) {
                            rng.random_range(20.0..60.0)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                DriverParams {
                    demand,
                    revenue: (0..m).map(|_| rng.random_range(-80.0..5.0)).collect(),
                    gain: (0..m).map(|_| rng.random_range(2.0..15.0)).collect(),
                    reachable,
                }
            })
            .collect()
    }

    fn identical(m: usize, count: usize) -> Vec<DriverParams> {
        vec![
            DriverParams {
                demand: vec![1.0; m],
                revenue: vec![0.0; m],
                gain: vec![1.0; m],
                reachable: (0..m).collect(),
            };
            count
        ]
    }

    #[test]
    fn tight_matching_is_forced() {
        let fs = FeasibilityStructure::new(2, vec![vec![0], vec![0, 1]]).unwrap();
        assert_eq!(assign_vehicles(&[1, 1], &fs).unwrap(), vec![0, 1]);
        assert!(matches!(
            assign_vehicles(&[0, 2], &fs),
            Err(Error::InfeasibleTarget(_))
        ));
    }

    #[test]
    fn assignment_respects_counts() {
        let fs = FeasibilityStructure::new(2, vec![vec![0, 1]; 3]).unwrap();
        let mu = assign_vehicles(&[2, 1], &fs).unwrap();
        assert_eq!(mu.iter().filter(|&&k| k == 0).count(), 2);
    }

    #[test]
    fn best_response_examples() {
        let d = DriverParams {
            demand: vec![1.0, 0.0],
            revenue: vec![0.0, 0.0],
            gain: vec![1.0, 1.0],
            reachable: vec![0],
        };
        assert_eq!(
            driver_best_response(&d, &[0.0, 100.0], &[1.0, 1.0]).unwrap(),
            0
        );
        let two = &identical(2, 1)[0];
        assert_eq!(
            driver_best_response(two, &[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            0
        );
        assert_eq!(
            driver_best_response(two, &[0.0, 0.5], &[1.0, 1.0]).unwrap(),
            1
        );
    }

    #[test]
    fn hand_solved_threshold() {
        // station 1 is cheaper by 5; targeting station 2 needs ρ_2 = 5 + margin
        let d = DriverParams {
            demand: vec![1.0, 1.0],
            revenue: vec![0.0, 5.0],
            gain: vec![1.0, 1.0],
            reachable: vec![0, 1],
        };
        let cfg = SurgeConfig::new(2);
        let rho = vehicle_surge(&d, 0, 1, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(rho[0], 0.0);
        assert!((rho[1] - (5.0 + DEFAULT_MARGIN)).abs() < 1e-12);
        // already preferred: untouched
        let rho = vehicle_surge(&d, 0, 0, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(rho, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gain_cannot_steer() {
        let d = DriverParams {
            demand: vec![1.0, 1.0],
            revenue: vec![0.0, 5.0],
            gain: vec![1.0, 0.0],
            reachable: vec![0, 1],
        };
        let err = vehicle_surge(&d, 7, 1, &[0.0, 0.0], &SurgeConfig::new(2)).unwrap_err();
        assert!(matches!(
            err,
            Error::ZeroSurgeGain {
                vehicle: 7,
                station: 1
            }
        ));
    }

    #[test]
    fn equal_price_concentrated_target() {
        let drivers = identical(3, 4);
        let sol = equal_price_solve(&[0, 0, 4], &drivers, &[1.0; 3], &SurgeConfig::new(3)).unwrap();
        assert_eq!(sol.j_m, 0.0);
        assert!(sol.exact);
        assert_eq!(sol.assignment, vec![2; 4]);
    }

    #[test]
    fn equal_price_cannot_split_identical_drivers() {
        let drivers = identical(2, 2);
        let sol = equal_price_solve(&[1, 1], &drivers, &[1.0; 2], &SurgeConfig::new(2)).unwrap();
        assert_eq!(sol.j_m, 1.0);
        let two = two_step(&[1, 1], &drivers, &[1.0; 2], &SurgeConfig::new(2)).unwrap();
        assert_eq!(two.mode, SurgeMode::PerVehicle);
        assert_eq!(two.j_m, 0.0);
    }

    #[test]
    fn lowered_surge_breaks_zero_cost() {
        let drivers = identical(2, 2);
        let n = [1, 1];
        let sol = two_step(&n, &drivers, &[1.0; 2], &SurgeConfig::new(2)).unwrap();
        assert!(
            verify_zero_cost(&sol, &n, &drivers, &[1.0; 2])
                .unwrap()
                .zero_cost
        );
        let mut broken = sol.clone();
        let v = broken.assignment.iter().position(|&k| k == 1).unwrap();
        broken.surge[v][1] = 0.0;
        assert!(
            !verify_zero_cost(&broken, &n, &drivers, &[1.0; 2])
                .unwrap()
                .zero_cost
        );
    }

    #[test]
    fn hall_violation_is_flagged() {
        let drivers = vec![DriverParams {
            demand: vec![1.0, 0.0],
            revenue: vec![0.0; 2],
            gain: vec![1.0; 2],
            reachable: vec![0],
        }];
        assert!(matches!(
            two_step(&[0, 1], &drivers, &[1.0; 2], &SurgeConfig::new(2)),
            Err(Error::InfeasibleTarget(_))
        ));
        let fake = SurgeSolution {
            assignment: vec![0],
            surge: vec![vec![0.0; 2]],
            j_m: 0.0,
            mode: SurgeMode::PerVehicle,
            exact: true,
        };
        let check = verify_zero_cost(&fake, &[0, 1], &drivers, &[1.0; 2]).unwrap();
        assert!(!check.zero_cost && !check.hall_feasible);
    }

    #[test]
    fn margin_does_not_change_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let drivers = random_drivers(&mut rng, 40, 4);
        let fs = structure_of(&drivers, 4).unwrap();
        let prices = [3.0, 2.5, 2.0, 1.5];
        let mut n = vec![0usize; 4];
        for v in 0..40 {
            n[*fs.reachable(v).last().unwrap()] += 1;
        }
        let mu = assign_vehicles(&n, &fs).unwrap();
        let mut prev = None;
        for margin in [1e-6, 1e-3, 0.1, 1.0] {
            let cfg = SurgeConfig {
                margin,
                ..SurgeConfig::new(4)
            };
            let sol = per_vehicle_prices(&drivers, &mu, &prices, &cfg).unwrap();
            assert_eq!(sol.assignment, mu);
            if let Some(p) = &prev {
                assert_eq!(&sol.assignment, p);
            }
            prev = Some(sol.assignment);
        }
    }

    #[test]
    fn exact_solver_beats_heuristic_and_matches_exhaustive_rho_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let count = rng.random_range(2..6);
            let drivers = random_drivers(&mut rng, count, 3);
            let prices = [2.0, 3.0, 1.0];
            let fs = structure_of(&drivers, 3).unwrap();
            let mut n = vec![0usize; 3];
            for v in 0..count {
                n[fs.reachable(v)[0]] += 1;
            }
            let cfg = SurgeConfig::new(3);
            let classes = driver_classes(&drivers, &prices);
            let exact = exact_equal_price(&n, &drivers, &prices, &cfg, &classes)
                .unwrap()
                .unwrap();
            let heur = local_search_equal_price(&n, &drivers, &prices, &cfg).unwrap();
            assert!(heur.j_m >= exact.j_m);
            // a dense scan over ρ cannot do better than the exact solver
            let mut scan_best = f64::INFINITY;
            for a in 0..40 {
                for b in 0..40 {
                    for c in 0..40 {
                        let rho = [a as f64 * 0.5, b as f64 * 0.5, c as f64 * 0.5];
                        let mu: Vec<usize> = drivers
                            .iter()
                            .map(|d| driver_best_response(d, &rho, &prices).unwrap())
                            .collect();
                        scan_best = scan_best.min(matching_cost(&mu, &n));
                    }
                }
            }
            assert!(exact.j_m <= scan_best);
        }
    }
}
