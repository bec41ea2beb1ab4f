//! Pseudo-gradient maps of the company game, step-size bounds and the
//! averaged projected-gradient (Krasnoselskij) iteration.
//!
//! Every map here is affine, `F(x) = F₁ x + F₂`, with diagonal per-company
//! blocks on the diagonal of `F₁`, so a company's cost restricted to its own
//! allocation is a separable quadratic.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feasible::AdmissiblePolytope;
use crate::linalg::{dist, dot};
use crate::model::{pseudo_inverse, AllocationProfile, GameInstance, PolicyTerms};
use crate::qp::{self};

/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Default fixed-point residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default step as a fraction of the bound.
pub const DEFAULT_STEP_FRACTION: f64 = 0.9;

/// Stacked per-company gradient of an affine game.
pub trait GameMap: Sync {
    fn companies(&self) -> usize;
    fn stations(&self) -> usize;

    /// `∇_{x^i} J^i` at profile `x` with aggregate `σ(x)`.
    fn company_gradient(&self, i: usize, x: &AllocationProfile, sigma: &[f64]) -> Vec<f64>;

    /// Diagonal of the `(i, i)` Jacobian block (the Hessian of `J^i` in `x^i`).
    fn own_hessian(&self, i: usize) -> Vec<f64>;

    /// Dense `F₁`, company-major.
    fn jacobian(&self) -> DMatrix<f64>;

    /// Largest spectral quantity of `F₁` used by the step bound.
    fn lambda_max(&self) -> f64 {
        spectral_norm(&self.jacobian())
    }

    fn evaluate(&self, x: &AllocationProfile, fleets: &[f64]) -> Vec<f64> {
        let sigma = x.aggregate(fleets);
        (0..self.companies())
            .flat_map(|i| self.company_gradient(i, x, &sigma))
            .collect()
    }

    /// `F₂ = F(0)`.
    fn offset(&self, fleets: &[f64]) -> Vec<f64> {
        let zero = AllocationProfile::new(
            self.stations(),
            vec![0.0; self.stations() * self.companies()],
        )
        .expect("nonzero station count");
        self.evaluate(&zero, fleets)
    }
}

/// `2/λ` for a map whose Jacobian has spectral quantity `λ`.
pub fn step_size_bound(map: &dyn GameMap) -> f64 {
    2.0 / map.lambda_max()
}

/// `λ_max((N Nᵀ) ⊗ A_G) = ‖N‖² max_j A_G,jj`.
pub fn rsg_lambda_max(fleets: &[f64], weights: &[f64]) -> f64 {
    let n2: f64 = fleets.iter().map(|n| n * n).sum();
    n2 * weights.iter().fold(0.0f64, |m, &a| m.max(a))
}

/// Largest singular value; equals the top eigenvalue for symmetric PSD input.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let symmetric = (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0);
    if symmetric {
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    } else {
        m.clone()
            .singular_values()
            .iter()
            .fold(0.0f64, |a, &v| a.max(v))
    }
}

/// Pseudo-gradient under the system optimal policies:
/// block `i` is `N_i (A_G σ + b_G)`.
#[derive(Debug, Clone)]
pub struct RsgMap {
    fleets: Vec<f64>,
    weights: Vec<f64>,
    linear: Vec<f64>,
}

impl RsgMap {
    pub fn new(game: &GameInstance) -> Self {
        Self {
            fleets: game.fleets(),
            weights: game.objective.weights().to_vec(),
            linear: game.objective.linear().to_vec(),
        }
    }
}

impl GameMap for RsgMap {
    fn companies(&self) -> usize {
        self.fleets.len()
    }

    fn stations(&self) -> usize {
        self.weights.len()
    }

    fn company_gradient(&self, i: usize, _x: &AllocationProfile, sigma: &[f64]) -> Vec<f64> {
        let n = self.fleets[i];
        (0..self.stations())
            .map(|k| n * (self.weights[k] * sigma[k] + self.linear[k]))
            .collect()
    }

    fn own_hessian(&self, i: usize) -> Vec<f64> {
        let n = self.fleets[i];
        self.weights.iter().map(|a| n * n * a).collect()
    }

    fn jacobian(&self) -> DMatrix<f64> {
        let m = self.stations();
        let c = self.companies();
        DMatrix::from_fn(c * m, c * m, |r, s| {
            let (i, k) = (r / m, r % m);
            let (j, l) = (s / m, s % m);
            if k == l {
                self.fleets[i] * self.fleets[j] * self.weights[k]
            } else {
                0.0
            }
        })
    }

    fn lambda_max(&self) -> f64 {
        rsg_lambda_max(&self.fleets, &self.weights)
    }
}

/// Pseudo-gradient when the government prices with `D_i^* + D_i^Δ`:
/// `F̃ = F + Φ(L₁ x + L₂)`.
#[derive(Debug, Clone)]
pub struct PerturbedRsgMap {
    base: RsgMap,
    terms: Vec<PolicyTerms>,
    /// `D_i D_i^Δ` per company.
    scale: Vec<Vec<f64>>,
}

impl PerturbedRsgMap {
    pub fn new(game: &GameInstance, d_delta: &[Vec<f64>]) -> Result<Self> {
        if d_delta.len() != game.companies_count() {
            return Err(Error::dim(
                "perturbation blocks",
                game.companies_count(),
                d_delta.len(),
            ));
        }
        let m = game.stations_count();
        let mut scale = Vec::with_capacity(d_delta.len());
        for (c, dd) in game.companies.iter().zip(d_delta) {
            crate::error::check_len("perturbation", dd, m)?;
            scale.push(c.demand().iter().zip(dd).map(|(d, e)| d * e).collect());
        }
        Ok(Self {
            base: RsgMap::new(game),
            terms: (0..game.companies_count())
                .map(|i| game.policy_terms(i))
                .collect(),
            scale,
        })
    }

    /// `ΔF_i(x) = D_i D_i^Δ (Ā_i x^i + B̄_i σ(x^{-i}) + Δ_i)`.
    pub fn delta_block(&self, i: usize, x: &AllocationProfile, sigma: &[f64]) -> Vec<f64> {
        let n = self.base.fleets[i];
        let xi = x.block(i);
        let others: Vec<f64> = sigma.iter().zip(xi).map(|(s, v)| s - n * v).collect();
        self.terms[i]
            .bracket_gradient(xi, &others)
            .iter()
            .zip(&self.scale[i])
            .map(|(b, s)| s * b)
            .collect()
    }

    /// Stacked `ΔF(x)`.
    pub fn delta(&self, x: &AllocationProfile) -> Vec<f64> {
        let sigma = x.aggregate(&self.base.fleets);
        (0..self.companies())
            .flat_map(|i| self.delta_block(i, x, &sigma))
            .collect()
    }

    /// `‖F₂ + Φ L₂‖₂`.
    pub fn offset_norm(&self) -> f64 {
        crate::linalg::norm(&self.offset(&self.base.fleets))
    }
}

impl GameMap for PerturbedRsgMap {
    fn companies(&self) -> usize {
        self.base.companies()
    }

    fn stations(&self) -> usize {
        self.base.stations()
    }

    fn company_gradient(&self, i: usize, x: &AllocationProfile, sigma: &[f64]) -> Vec<f64> {
        let mut g = self.base.company_gradient(i, x, sigma);
        for (gk, dk) in g.iter_mut().zip(self.delta_block(i, x, sigma)) {
            *gk += dk;
        }
        g
    }

    fn own_hessian(&self, i: usize) -> Vec<f64> {
        self.base
            .own_hessian(i)
            .iter()
            .zip(&self.terms[i].a_bar)
            .zip(&self.scale[i])
            .map(|((h, a), s)| h + s * a)
            .collect()
    }

    fn jacobian(&self) -> DMatrix<f64> {
        let m = self.stations();
        let mut jac = self.base.jacobian();
        for i in 0..self.companies() {
            for j in 0..self.companies() {
                for k in 0..m {
                    let extra = if i == j {
                        self.terms[i].a_bar[k]
                    } else {
                        self.terms[i].b_bar[k] * self.base.fleets[j]
                    };
                    jac[(i * m + k, j * m + k)] += self.scale[i][k] * extra;
                }
            }
        }
        jac
    }
}

/// Pseudo-gradient when every company faces the constant price vector `p̄`:
/// block `i` is `A_i x^i + B_i σ(x^{-i}) + c_i + D_i p̄ + f_i`.
#[derive(Debug, Clone)]
pub struct FixedPriceMap {
    fleets: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    /// `c_i + D_i p̄ + f_i`.
    constant: Vec<Vec<f64>>,
}

impl FixedPriceMap {
    pub fn new(game: &GameInstance, prices: &[f64]) -> Result<Self> {
        crate::error::check_len("fixed prices", prices, game.stations_count())?;
        if prices.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter(
                "fixed prices must be finite and nonnegative".into(),
            ));
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut constant = Vec::new();
        for c in &game.companies {
            let q = c.queuing();
            a.push(q.a.clone());
            b.push(q.b.clone());
            constant.push(
                (0..prices.len())
                    .map(|k| q.c[k] + c.demand()[k] * prices[k] + c.revenue()[k])
                    .collect(),
            );
        }
        Ok(Self {
            fleets: game.fleets(),
            a,
            b,
            constant,
        })
    }
}

impl GameMap for FixedPriceMap {
    fn companies(&self) -> usize {
        self.fleets.len()
    }

    fn stations(&self) -> usize {
        self.a[0].len()
    }

    fn company_gradient(&self, i: usize, x: &AllocationProfile, sigma: &[f64]) -> Vec<f64> {
        let n = self.fleets[i];
        let xi = x.block(i);
        (0..self.stations())
            .map(|k| {
                self.a[i][k] * xi[k] + self.b[i][k] * (sigma[k] - n * xi[k]) + self.constant[i][k]
            })
            .collect()
    }

    fn own_hessian(&self, i: usize) -> Vec<f64> {
        self.a[i].clone()
    }

    fn jacobian(&self) -> DMatrix<f64> {
        let m = self.stations();
        let c = self.companies();
        DMatrix::from_fn(c * m, c * m, |r, s| {
            let (i, k) = (r / m, r % m);
            let (j, l) = (s / m, s % m);
            match (k == l, i == j) {
                (false, _) => 0.0,
                (true, true) => self.a[i][k],
                (true, false) => self.b[i][k] * self.fleets[j],
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Step size; `None` uses `DEFAULT_STEP_FRACTION` of the bound.
    pub gamma: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Starting profile; `None` starts each company uniformly over its
    /// reachable stations.
    pub x0: Option<AllocationProfile>,
    /// Keep every iterate in the report.
    pub keep_iterates: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gamma: None,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            x0: None,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: AllocationProfile,
    pub sigma: Vec<f64>,
    pub j_g: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Entry `k` belongs to iterate `x_k`; the last entry is the returned point.
    pub residuals: Vec<f64>,
    pub jg_trace: Vec<f64>,
    pub sigma_trace: Vec<Vec<f64>>,
    pub iterates: Vec<AllocationProfile>,
}

/// Default starting profile.
pub fn default_start(game: &GameInstance) -> Result<AllocationProfile> {
    let blocks = game
        .polytopes
        .iter()
        .enumerate()
        .map(|(i, p)| p.clone().for_company(i).default_start())
        .collect::<Result<Vec<_>>>()?;
    AllocationProfile::from_blocks(&blocks)
}

/// One forward-backward map `T(x) = Π_X[x − γ F(x)]`.
fn forward_backward(
    map: &dyn GameMap,
    polytopes: &[AdmissiblePolytope],
    x: &AllocationProfile,
    fleets: &[f64],
    gamma: f64,
) -> Result<AllocationProfile> {
    let sigma = x.aggregate(fleets);
    let mut out = x.clone();
    for (i, poly) in polytopes.iter().enumerate() {
        let g = map.company_gradient(i, x, &sigma);
        let step: Vec<f64> = x
            .block(i)
            .iter()
            .zip(&g)
            .map(|(v, g)| v - gamma * g)
            .collect();
        let p = poly.project(&step).map_err(|e| relabel(e, i))?;
        out.block_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

fn relabel(e: Error, company: usize) -> Error {
    match e {
        Error::EmptyPolytope { .. } => Error::EmptyPolytope { company },
        e => e,
    }
}

/// Averaged projected-gradient iteration
/// `x_{k+1} = ½ (x_k + Π_X[x_k − γ F(x_k)])`, each company reading only the
/// shared aggregate of the previous round.
pub fn solve_nash(
    game: &GameInstance,
    map: &dyn GameMap,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if map.companies() != game.companies_count() || map.stations() != game.stations_count() {
        return Err(Error::dim(
            "game map",
            game.companies_count() * game.stations_count(),
            map.companies() * map.stations(),
        ));
    }
    for (i, p) in game.polytopes.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::EmptyPolytope { company: i });
        }
    }
    let bound = step_size_bound(map);
    let gamma = opts.gamma.unwrap_or(DEFAULT_STEP_FRACTION * bound);
    if !(gamma > 0.0 && gamma < bound) {
        return Err(Error::InvalidParameter(format!(
            "step {gamma} outside (0, {bound})"
        )));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::InvalidParameter(
            "tolerance must be nonnegative".into(),
        ));
    }
    let fleets = game.fleets();
    let mut x = match &opts.x0 {
        Some(x0) => {
            if x0.companies() != game.companies_count() || x0.stations() != game.stations_count() {
                return Err(Error::dim(
                    "initial profile",
                    game.companies_count() * game.stations_count(),
                    x0.as_slice().len(),
                ));
            }
            let mut x = x0.clone();
            for (i, p) in game.polytopes.iter().enumerate() {
                let proj = p.project(x0.block(i)).map_err(|e| relabel(e, i))?;
                x.block_mut(i).copy_from_slice(&proj);
            }
            x
        }
        None => default_start(game)?,
    };
    let mut residuals = Vec::new();
    let mut jg_trace = Vec::new();
    let mut sigma_trace = Vec::new();
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let t = forward_backward(map, &game.polytopes, &x, &fleets, gamma)?;
        let r = x.distance(&t);
        if !r.is_finite() {
            return Err(Error::Numerical(format!(
                "residual diverged at iteration {iterations}"
            )));
        }
        let sigma = x.aggregate(&fleets);
        residuals.push(r);
        jg_trace.push(crate::model::government_cost(&sigma, &game.objective)?);
        sigma_trace.push(sigma);
        if opts.keep_iterates {
            iterates.push(x.clone());
        }
        if r <= opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        let avg: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        x = AllocationProfile::new(x.stations(), avg)?;
        iterations += 1;
    }
    let sigma = sigma_trace.last().cloned().unwrap_or_default();
    Ok(SolveReport {
        j_g: *jg_trace.last().unwrap_or(&0.0),
        sigma,
        x,
        gamma,
        iterations,
        converged,
        residuals,
        jg_trace,
        sigma_trace,
        iterates,
    })
}

/// `‖x − Π_X[x − γ F(x)]‖₂`; zero exactly at Nash equilibria.
pub fn nash_residual(
    game: &GameInstance,
    map: &dyn GameMap,
    x: &AllocationProfile,
    gamma: f64,
) -> Result<f64> {
    let t = forward_backward(map, &game.polytopes, x, &game.fleets(), gamma)?;
    Ok(x.distance(&t))
}

/// Largest cost decrease company `i` can obtain by deviating unilaterally
/// from `x`, and its best response.
pub fn best_response_gain(
    game: &GameInstance,
    map: &dyn GameMap,
    i: usize,
    x: &AllocationProfile,
) -> Result<(f64, Vec<f64>)> {
    let sigma = x.aggregate(&game.fleets());
    let g = map.company_gradient(i, x, &sigma);
    let h = map.own_hessian(i);
    let xi = x.block(i);
    if h.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "company {i} cost is not strictly convex"
        )));
    }
    // J(y) − J(x_i) = (g − H x_i)ᵀ(y − x_i) + ½ yᵀHy − ½ x_iᵀH x_i
    let lin: Vec<f64> = (0..xi.len()).map(|k| g[k] - h[k] * xi[k]).collect();
    let poly = &game.polytopes[i];
    let sol =
        qp::solve_diag_qp(&h, &lin, poly.equalities(), poly.inequalities()).map_err(
            |e| match e {
                Error::InfeasibleProgram => Error::EmptyPolytope { company: i },
                e => e,
            },
        )?;
    let y = sol.x;
    let model =
        |z: &[f64]| 0.5 * z.iter().zip(&h).map(|(v, h)| h * v * v).sum::<f64>() + dot(&lin, z);
    let gain = model(xi) - model(&y);
    Ok((gain.max(0.0), y))
}

/// Distance between two profiles, maximum over coordinates.
pub fn max_coordinate_gap(a: &AllocationProfile, b: &AllocationProfile) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Euclidean distance of each iterate to `x_star`.
pub fn distances_to(iterates: &[AllocationProfile], x_star: &AllocationProfile) -> Vec<f64> {
    iterates
        .iter()
        .map(|x| dist(x.as_slice(), x_star.as_slice()))
        .collect()
}

/// Pseudo-inverse demand blocks, for perturbation bookkeeping.
pub fn demand_pinv(game: &GameInstance) -> Vec<Vec<f64>> {
    game.companies
        .iter()
        .map(|c| pseudo_inverse(c.demand()))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::feasible::{admissible_polytope, FeasibilityStructure};
    use crate::model::{reduced_cost, CompanyParams, GovernmentObjective, StationSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn reference_game(full: bool) -> GameInstance {
        let q: Vec<f64> = [4.0, 1.0, 3.0, 2.0].iter().map(|v| 0.1 * v).collect();
        let stations = StationSet::new(vec![15.0, 60.0, 35.0, 50.0], q.clone()).unwrap();
        let objective = GovernmentObjective::from_setpoint(
            q.iter().map(|v| 2.5 * v).collect(),
            vec![198.0, 103.0, 144.0, 87.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let fleets = [194usize, 181, 157];
        let mut companies = Vec::new();
        let mut polys = Vec::new();
        for (i, &n) in fleets.iter().enumerate() {
            let reach: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    if full {
                        (0..4).collect()
                    } else {
                        (0..4).filter(|_| rng.random_bool(0.85)).collect::<Vec<_>>()
                    }
                })
                .map(|r: Vec<usize>| if r.is_empty() { vec![0] } else { r })
                .collect();
            let fs = FeasibilityStructure::new(4, reach).unwrap();
            polys.push(admissible_polytope(&fs).unwrap().for_company(i));
            let demand = (0..4)
                .map(|_| n as f64 * rng.random_range(30.0..45.0))
                .collect();
            let revenue = (0..4)
                .map(|_| -(n as f64) * rng.random_range(50.0..120.0))
                .collect();
            companies.push(CompanyParams::new(n, demand, revenue, &stations).unwrap());
        }
        GameInstance::new(stations, objective, companies, polys).unwrap()
    }

    #[test]
    fn rsg_gradient_at_zero_is_scaled_linear_term() {
        let game = reference_game(true);
        let map = RsgMap::new(&game);
        let off = map.offset(&game.fleets());
        for i in 0..3 {
            for k in 0..4 {
                assert_eq!(
                    off[i * 4 + k],
                    game.fleets()[i] * game.objective.linear()[k]
                );
            }
        }
    }

    #[test]
    fn rsg_gradient_matches_finite_differences() {
        let game = reference_game(true);
        let map = RsgMap::new(&game);
        let fleets = game.fleets();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-6;
        for _ in 0..20 {
            let blocks: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
                .collect();
            let x = AllocationProfile::from_blocks(&blocks).unwrap();
            let sigma = x.aggregate(&fleets);
            for i in 0..3 {
                let g = map.company_gradient(i, &x, &sigma);
                let others = x.partial_aggregate(i, &fleets);
                for k in 0..4 {
                    let mut up = x.block(i).to_vec();
                    let mut dn = x.block(i).to_vec();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (reduced_cost(&game, i, &up, &others).unwrap()
                        - reduced_cost(&game, i, &dn, &others).unwrap())
                        / (2.0 * h);
                    assert!(
                        (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0),
                        "{fd} vs {}",
                        g[k]
                    );
                }
            }
        }
    }

    #[test]
    fn kronecker_structure_of_jacobian() {
        let game = reference_game(true);
        let map = RsgMap::new(&game);
        let jac = map.jacobian();
        let f = game.fleets();
        let a = game.objective.weights();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..4 {
                    for l in 0..4 {
                        let expected = if k == l { f[i] * f[j] * a[k] } else { 0.0 };
                        assert_eq!(jac[(i * 4 + k, j * 4 + l)], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_lambda_matches_eigensolver() {
        let game = reference_game(true);
        let map = RsgMap::new(&game);
        let closed = map.lambda_max();
        let eig = nalgebra::SymmetricEigen::new(map.jacobian())
            .eigenvalues
            .max();
        assert!((closed - eig).abs() <= 1e-10 * eig);
        let two = RsgMap {
            fleets: vec![1.0, 1.0],
            weights: vec![2.0, 2.0],
            linear: vec![0.0, 0.0],
        };
        assert!((step_size_bound(&two) - 0.5).abs() < 1e-15);
        let one = RsgMap {
            fleets: vec![7.0],
            weights: vec![0.5, 3.0],
            linear: vec![0.0, 0.0],
        };
        assert_eq!(one.lambda_max(), 49.0 * 3.0);
    }

    #[test]
    fn zero_perturbation_leaves_map_unchanged() {
        let game = reference_game(false);
        let base = RsgMap::new(&game);
        let pert = PerturbedRsgMap::new(&game, &vec![vec![0.0; 4]; 3]).unwrap();
        let x = default_start(&game).unwrap();
        assert_eq!(
            base.evaluate(&x, &game.fleets()),
            pert.evaluate(&x, &game.fleets())
        );
        assert_eq!(base.jacobian(), pert.jacobian());
    }

    #[test]
    fn perturbed_map_is_affine_with_its_jacobian() {
        let game = reference_game(false);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dd: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1e-6..1e-6)).collect())
            .collect();
        let map = PerturbedRsgMap::new(&game, &dd).unwrap();
        let fleets = game.fleets();
        let jac = map.jacobian();
        let off = map.offset(&fleets);
        for _ in 0..10 {
            let v: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let x = AllocationProfile::new(4, v.clone()).unwrap();
            let f = map.evaluate(&x, &fleets);
            let lin = &jac * nalgebra::DVector::from_vec(v);
            for r in 0..12 {
                assert!((f[r] - lin[r] - off[r]).abs() <= 1e-9 * f[r].abs().max(1.0));
            }
        }
    }

    #[test]
    fn fixed_price_map_is_affine_with_its_jacobian() {
        let game = reference_game(true);
        let map = FixedPriceMap::new(&game, &[3.0; 4]).unwrap();
        let fleets = game.fleets();
        let jac = map.jacobian();
        let off = map.offset(&fleets);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let x = AllocationProfile::new(4, v.clone()).unwrap();
        let f = map.evaluate(&x, &fleets);
        let lin = &jac * nalgebra::DVector::from_vec(v);
        for r in 0..12 {
            assert!((f[r] - lin[r] - off[r]).abs() <= 1e-9 * f[r].abs().max(1.0));
        }
    }

    #[test]
    fn single_company_symmetric_game_converges_to_uniform() {
        let stations = StationSet::new(vec![10.0; 3], vec![1.0; 3]).unwrap();
        let fs = FeasibilityStructure::new(3, vec![vec![0, 1, 2]; 30]).unwrap();
        let game = GameInstance::new(
            stations.clone(),
            GovernmentObjective::new(vec![1.0; 3], vec![0.0; 3]).unwrap(),
            vec![CompanyParams::new(30, vec![1.0; 3], vec![0.0; 3], &stations).unwrap()],
            vec![admissible_polytope(&fs).unwrap()],
        )
        .unwrap();
        let x0 = AllocationProfile::new(3, vec![0.8, 0.1, 0.1]).unwrap();
        let rep = solve_nash(
            &game,
            &RsgMap::new(&game),
            &SolveOptions {
                x0: Some(x0),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.converged);
        for v in rep.x.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_step_outside_bound() {
        let game = reference_game(true);
        let map = RsgMap::new(&game);
        let opts = SolveOptions {
            gamma: Some(step_size_bound(&map) * 1.01),
            ..Default::default()
        };
        assert!(matches!(
            solve_nash(&game, &map, &opts),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn returned_point_meets_residual_and_is_a_nash_point() {
        let game = reference_game(false);
        let map = RsgMap::new(&game);
        let rep = solve_nash(&game, &map, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        let r = nash_residual(&game, &map, &rep.x, rep.gamma).unwrap();
        assert!(r <= DEFAULT_TOL);
        for i in 0..3 {
            let (gain, _) = best_response_gain(&game, &map, i, &rep.x).unwrap();
            assert!(gain < 1e-4, "company {i} gains {gain}");
        }
        let mut bumped = rep.x.clone();
        bumped.block_mut(0)[0] += 0.05;
        bumped.block_mut(0)[1] -= 0.05;
        assert!(nash_residual(&game, &map, &bumped, rep.gamma).unwrap() > 1e-6);
    }

    #[test]
    fn fixed_price_with_uniform_offset_keeps_argmin() {
        // f = 0 and D proportional to the identity: a common price shifts all
        // costs by a constant
        let mut game = reference_game(true);
        let st = game.stations.clone();
        game.companies = game
            .companies
            .iter()
            .map(|c| CompanyParams::new(c.fleet(), vec![c.n(); 4], vec![0.0; 4], &st).unwrap())
            .collect();
        let a = solve_nash(
            &game,
            &FixedPriceMap::new(&game, &[0.0; 4]).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let b = solve_nash(
            &game,
            &FixedPriceMap::new(&game, &[3.0; 4]).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(max_coordinate_gap(&a.x, &b.x) < 1e-7);
    }
}
