//! Cost functions of the three agent levels and the two pricing-policy
//! families offered to the companies.
//!
//! All matrices in this model are diagonal and are stored as their diagonal
//! vectors. Allocations of company `i` live on the probability simplex over
//! the stations; the aggregate `σ(x) = Σ_i N_i x^i` counts vehicles per
//! station.

use crate::error::{check_len, Error, Result};
use crate::feasible::AdmissiblePolytope;
use crate::linalg::{dot, weighted_dot};

/// Diagonal entries below this magnitude are treated as exact zeros by the
/// pseudo-inverse.
pub const PINV_EPS: f64 = 1e-12;

/// Tolerance used when checking that an allocation lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Pseudo-inverse of a diagonal matrix: reciprocal of the nonzero entries,
/// zero elsewhere.
pub fn pseudo_inverse(diag: &[f64]) -> Vec<f64> {
    diag.iter()
        .map(|&d| if d.abs() < PINV_EPS { 0.0 } else { 1.0 / d })
        .collect()
}

/// Charging stations: capacities `M` and the queue-cost diagonal `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSet {
    capacities: Vec<f64>,
    queue_weights: Vec<f64>,
}

impl StationSet {
    pub fn new(capacities: Vec<f64>, queue_weights: Vec<f64>) -> Result<Self> {
        if capacities.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one station is required".into(),
            ));
        }
        check_len("queue weights", &queue_weights, capacities.len())?;
        if let Some(m) = capacities.iter().find(|&&m| !(m > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "station capacity {m} is not positive"
            )));
        }
        if let Some(q) = queue_weights.iter().find(|&&q| !(q > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "queue weight {q} is not positive"
            )));
        }
        Ok(Self {
            capacities,
            queue_weights,
        })
    }

    pub fn count(&self) -> usize {
        self.capacities.len()
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn queue_weights(&self) -> &[f64] {
        &self.queue_weights
    }
}

/// Quadratic queuing-cost parameters `(A_i, B_i, c_i)` of one company.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuingParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Casts the expected queuing cost `N_i x^T Q (σ(x) - M)` into the general
/// quadratic form `½ x^T A x + x^T B σ(x^{-i}) + c^T x`.
pub fn derive_queuing_params(
    fleet: f64,
    queue_weights: &[f64],
    capacities: &[f64],
) -> Result<QueuingParams> {
    if !(fleet > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fleet size {fleet} is not positive"
        )));
    }
    check_len("capacities", capacities, queue_weights.len())?;
    if let Some(q) = queue_weights.iter().find(|&&q| !(q > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "queue weight {q} is not positive"
        )));
    }
    let a = queue_weights
        .iter()
        .map(|q| 2.0 * fleet * fleet * q)
        .collect();
    let b = queue_weights.iter().map(|q| fleet * q).collect();
    let c = queue_weights
        .iter()
        .zip(capacities)
        .map(|(q, m)| -fleet * q * m)
        .collect();
    Ok(QueuingParams { a, b, c })
}

/// Parameters of one ride-hailing company.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanyParams {
    fleet: usize,
    demand: Vec<f64>,
    revenue: Vec<f64>,
    queuing: QueuingParams,
}

impl CompanyParams {
    /// `fleet` is the number of vehicles that need charging, `demand` the
    /// diagonal of `D_i` (zero on stations no vehicle can reach) and
    /// `revenue` the negative expected revenue vector `f_i`.
    pub fn new(
        fleet: usize,
        demand: Vec<f64>,
        revenue: Vec<f64>,
        stations: &StationSet,
    ) -> Result<Self> {
        let m = stations.count();
        check_len("demand diagonal", &demand, m)?;
        check_len("revenue vector", &revenue, m)?;
        if let Some(d) = demand.iter().find(|&&d| !(d >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "demand entry {d} is negative"
            )));
        }
        let queuing = derive_queuing_params(
            fleet as f64,
            stations.queue_weights(),
            stations.capacities(),
        )?;
        Ok(Self {
            fleet,
            demand,
            revenue,
            queuing,
        })
    }

    pub fn fleet(&self) -> usize {
        self.fleet
    }

    pub fn n(&self) -> f64 {
        self.fleet as f64
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn revenue(&self) -> &[f64] {
        &self.revenue
    }

    pub fn queuing(&self) -> &QueuingParams {
        &self.queuing
    }
}

/// The government's loss `½ σ^T A_G σ + b_G^T σ`, optionally built from a
/// set point `N̂` with `b_G = -A_G N̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GovernmentObjective {
    weights: Vec<f64>,
    linear: Vec<f64>,
    setpoint: Option<Vec<f64>>,
}

impl GovernmentObjective {
    pub fn new(weights: Vec<f64>, linear: Vec<f64>) -> Result<Self> {
        check_len("linear term", &linear, weights.len())?;
        Self::check_weights(&weights)?;
        Ok(Self {
            weights,
            linear,
            setpoint: None,
        })
    }

    pub fn from_setpoint(weights: Vec<f64>, setpoint: Vec<f64>) -> Result<Self> {
        check_len("set point", &setpoint, weights.len())?;
        Self::check_weights(&weights)?;
        let linear = weights.iter().zip(&setpoint).map(|(a, n)| -a * n).collect();
        Ok(Self {
            weights,
            linear,
            setpoint: Some(setpoint),
        })
    }

    fn check_weights(weights: &[f64]) -> Result<()> {
        if let Some(a) = weights.iter().find(|&&a| !(a > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "government weight {a} is not positive"
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn setpoint(&self) -> Option<&[f64]> {
        self.setpoint.as_deref()
    }

    /// Canonical quadratic form `½ σ^T A_G σ + b_G^T σ`.
    pub fn quadratic_cost(&self, sigma: &[f64]) -> f64 {
        0.5 * weighted_dot(&self.weights, sigma, sigma) + dot(&self.linear, sigma)
    }

    /// Gradient of the loss with respect to `σ`.
    pub fn gradient(&self, sigma: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(sigma)
            .zip(&self.linear)
            .map(|((a, s), b)| a * s + b)
            .collect()
    }
}

/// Government loss as reported: the set-point form `½‖σ - N̂‖²_{A_G}` when a
/// set point exists (so the optimum reads 0), the quadratic form otherwise.
pub fn government_cost(sigma: &[f64], objective: &GovernmentObjective) -> Result<f64> {
    check_len("aggregate", sigma, objective.weights.len())?;
    Ok(match &objective.setpoint {
        Some(setpoint) => {
            0.5 * objective
                .weights
                .iter()
                .zip(sigma)
                .zip(setpoint)
                .map(|((a, s), n)| a * (s - n) * (s - n))
                .sum::<f64>()
        }
        None => objective.quadratic_cost(sigma),
    })
}

/// Set point `N̂ = (Σ_i N_i) Z` for a desired distribution `Z` on the simplex.
pub fn setpoint_from_distribution(fleets: &[f64], distribution: &[f64]) -> Result<Vec<f64>> {
    if fleets.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::InvalidParameter(
            "fleet sizes must be positive".into(),
        ));
    }
    if distribution.iter().any(|&z| z < -SIMPLEX_TOL)
        || (distribution.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL
    {
        return Err(Error::InvalidParameter(
            "desired distribution is not on the simplex".into(),
        ));
    }
    let total: f64 = fleets.iter().sum();
    Ok(distribution.iter().map(|z| total * z).collect())
}

/// Stacked per-company allocations `x = [x^i]`, company-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProfile {
    stations: usize,
    data: Vec<f64>,
}

impl AllocationProfile {
    pub fn new(stations: usize, data: Vec<f64>) -> Result<Self> {
        if stations == 0 || !data.len().is_multiple_of(stations) {
            return Err(Error::dim("stacked allocation", stations, data.len()));
        }
        Ok(Self { stations, data })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let stations = blocks.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(stations * blocks.len());
        for b in blocks {
            check_len("allocation block", b, stations)?;
            data.extend_from_slice(b);
        }
        Self::new(stations, data)
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn companies(&self) -> usize {
        self.data.len() / self.stations
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.stations..(i + 1) * self.stations]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.stations..(i + 1) * self.stations]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.stations)
    }

    /// `σ(x) = Σ_i N_i x^i`.
    pub fn aggregate(&self, fleets: &[f64]) -> Vec<f64> {
        let mut sigma = vec![0.0; self.stations];
        for (block, n) in self.blocks().zip(fleets) {
            for (s, x) in sigma.iter_mut().zip(block) {
                *s += n * x;
            }
        }
        sigma
    }

    /// `σ(x^{-i})`: the aggregate without company `i`.
    pub fn partial_aggregate(&self, i: usize, fleets: &[f64]) -> Vec<f64> {
        let mut sigma = self.aggregate(fleets);
        for (s, x) in sigma.iter_mut().zip(self.block(i)) {
            *s -= fleets[i] * x;
        }
        sigma
    }

    /// True when every block is on the simplex within `tol`.
    pub fn on_simplex(&self, tol: f64) -> bool {
        self.blocks()
            .all(|b| b.iter().all(|&x| x >= -tol) && (b.iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    pub fn distance(&self, other: &AllocationProfile) -> f64 {
        crate::linalg::dist(&self.data, &other.data)
    }
}

/// Per-station prices offered to one company.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePolicyEval {
    pub prices: Vec<f64>,
}

/// The upper-level game: stations, government objective, companies and
/// their admissible polytopes.
#[derive(Debug, Clone)]
pub struct GameInstance {
    pub stations: StationSet,
    pub objective: GovernmentObjective,
    pub companies: Vec<CompanyParams>,
    pub polytopes: Vec<AdmissiblePolytope>,
}

impl GameInstance {
    pub fn new(
        stations: StationSet,
        objective: GovernmentObjective,
        companies: Vec<CompanyParams>,
        polytopes: Vec<AdmissiblePolytope>,
    ) -> Result<Self> {
        let m = stations.count();
        check_len("government weights", objective.weights(), m)?;
        if companies.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one company is required".into(),
            ));
        }
        if polytopes.len() != companies.len() {
            return Err(Error::dim("polytopes", companies.len(), polytopes.len()));
        }
        for (i, (c, p)) in companies.iter().zip(&polytopes).enumerate() {
            if p.stations() != m {
                return Err(Error::dim("polytope stations", m, p.stations()));
            }
            if p.fleet() != c.fleet() {
                return Err(Error::InvalidParameter(format!(
                    "company {i}: polytope built for {} vehicles, company has {}",
                    p.fleet(),
                    c.fleet()
                )));
            }
        }
        Ok(Self {
            stations,
            objective,
            companies,
            polytopes,
        })
    }

    pub fn stations_count(&self) -> usize {
        self.stations.count()
    }

    pub fn companies_count(&self) -> usize {
        self.companies.len()
    }

    pub fn fleets(&self) -> Vec<f64> {
        self.companies.iter().map(CompanyParams::n).collect()
    }

    pub fn aggregate(&self, x: &AllocationProfile) -> Vec<f64> {
        x.aggregate(&self.fleets())
    }

    /// Reported government loss at profile `x`.
    pub fn government_cost(&self, x: &AllocationProfile) -> f64 {
        government_cost(&self.aggregate(x), &self.objective).expect("profile dimensions checked")
    }

    /// Terms of the system optimal pricing policy for company `i`.
    pub fn policy_terms(&self, i: usize) -> PolicyTerms {
        let c = &self.companies[i];
        let n = c.n();
        let q = c.queuing();
        let ag = self.objective.weights();
        let bg = self.objective.linear();
        let m = self.stations_count();
        PolicyTerms {
            a_bar: (0..m).map(|k| n * n * ag[k] - q.a[k]).collect(),
            b_bar: (0..m).map(|k| n * ag[k] - q.b[k]).collect(),
            delta: (0..m)
                .map(|k| n * bg[k] - q.c[k] - c.revenue()[k])
                .collect(),
        }
    }

    fn check_company(&self, i: usize, x: &[f64], sigma_minus: &[f64]) -> Result<()> {
        if i >= self.companies.len() {
            return Err(Error::InvalidParameter(format!(
                "no company with index {i}"
            )));
        }
        let m = self.stations_count();
        check_len("allocation", x, m)?;
        check_len("partial aggregate", sigma_minus, m)
    }
}

/// `Ā_i = N_i² A_G − A_i`, `B̄_i = N_i A_G − B_i`, `Δ_i = N_i b_G − c_i − f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTerms {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub delta: Vec<f64>,
}

impl PolicyTerms {
    /// `½ Ā x + B̄ σ(x^{-i}) + Δ`.
    pub fn bracket(&self, x: &[f64], sigma_minus: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| 0.5 * self.a_bar[k] * x[k] + self.b_bar[k] * sigma_minus[k] + self.delta[k])
            .collect()
    }

    /// `Ā x + B̄ σ(x^{-i}) + Δ`, the derivative of `x^T bracket(x)`.
    pub fn bracket_gradient(&self, x: &[f64], sigma_minus: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| self.a_bar[k] * x[k] + self.b_bar[k] * sigma_minus[k] + self.delta[k])
            .collect()
    }
}

/// Total cost `J_1 + J_2 + J_3` of company `i` under the given prices.
pub fn company_cost(
    game: &GameInstance,
    i: usize,
    x: &[f64],
    sigma_minus: &[f64],
    prices: &[f64],
) -> Result<f64> {
    game.check_company(i, x, sigma_minus)?;
    check_len("prices", prices, x.len())?;
    let c = &game.companies[i];
    let q = c.queuing();
    let queuing =
        0.5 * weighted_dot(&q.a, x, x) + weighted_dot(&q.b, x, sigma_minus) + dot(&q.c, x);
    let charging = weighted_dot(c.demand(), x, prices);
    let revenue = dot(c.revenue(), x);
    Ok(queuing + charging + revenue)
}

/// System optimal price policy `p_i = D_i^* [½ Ā_i x^i + B̄_i σ(x^{-i}) + Δ_i]`.
pub fn system_optimal_policy(
    game: &GameInstance,
    i: usize,
    x: &[f64],
    sigma_minus: &[f64],
) -> Result<PricePolicyEval> {
    game.check_company(i, x, sigma_minus)?;
    let dinv = pseudo_inverse(game.companies[i].demand());
    let bracket = game.policy_terms(i).bracket(x, sigma_minus);
    Ok(PricePolicyEval {
        prices: dinv.iter().zip(bracket).map(|(d, b)| d * b).collect(),
    })
}

/// Approximate policy: the government uses `D_i^* + D_i^Δ` in place of the
/// true pseudo-inverse.
pub fn approximate_policy(
    game: &GameInstance,
    i: usize,
    x: &[f64],
    sigma_minus: &[f64],
    d_delta: &[f64],
) -> Result<PricePolicyEval> {
    game.check_company(i, x, sigma_minus)?;
    check_len("demand perturbation", d_delta, x.len())?;
    let dinv = pseudo_inverse(game.companies[i].demand());
    let bracket = game.policy_terms(i).bracket(x, sigma_minus);
    Ok(PricePolicyEval {
        prices: dinv
            .iter()
            .zip(d_delta)
            .zip(bracket)
            .map(|((d, dd), b)| (d + dd) * b)
            .collect(),
    })
}

/// Company cost after substituting the system optimal policy:
/// `½ N_i² x^T A_G x + N_i x^T A_G σ(x^{-i}) + N_i b_G^T x`.
pub fn reduced_cost(game: &GameInstance, i: usize, x: &[f64], sigma_minus: &[f64]) -> Result<f64> {
    game.check_company(i, x, sigma_minus)?;
    let n = game.companies[i].n();
    let ag = game.objective.weights();
    Ok(0.5 * n * n * weighted_dot(ag, x, x)
        + n * weighted_dot(ag, x, sigma_minus)
        + n * dot(game.objective.linear(), x))
}
