//! Sensitivity of the pricing mechanism to errors in the government's
//! estimate of the companies' demand matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::equilibrium::{
    best_response_gain, solve_nash, FixedPriceMap, GameMap, PerturbedRsgMap, RsgMap, SolveOptions,
    SolveReport, DEFAULT_STEP_FRACTION,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::model::{AllocationProfile, GameInstance, PINV_EPS};

const MAX_RESAMPLES: usize = 10_000;

/// The government's estimate `D̄_i = D_i + diag(w)` and the induced
/// pseudo-inverse error `D_i^Δ = D̄_i^* − D_i^*`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub alpha: f64,
    pub seed: u64,
    pub noise: Vec<Vec<f64>>,
    pub estimate: Vec<Vec<f64>>,
    pub d_delta: Vec<Vec<f64>>,
}

impl Perturbation {
    pub fn zero(game: &GameInstance) -> Self {
        let m = game.stations_count();
        let c = game.companies_count();
        Self {
            alpha: 0.0,
            seed: 0,
            noise: vec![vec![0.0; m]; c],
            estimate: game.companies.iter().map(|c| c.demand().to_vec()).collect(),
            d_delta: vec![vec![0.0; m]; c],
        }
    }
}

/// Smallest nonzero demand entry of a company.
fn min_positive(d: &[f64]) -> Option<f64> {
    d.iter().copied().filter(|v| *v > PINV_EPS).reduce(f64::min)
}

/// Draws `w ~ N(0, sd²)` until `base + w > 0`.
pub fn sample_positive(rng: &mut ChaCha8Rng, base: f64, sd: f64) -> Result<f64> {
    if sd == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for _ in 0..MAX_RESAMPLES {
        let w = normal.sample(rng);
        if base + w > 0.0 {
            return Ok(w);
        }
    }
    Err(Error::Numerical(
        "could not draw a positive demand estimate".into(),
    ))
}

/// Samples a demand-estimate error of relative size `alpha` on every
/// reachable station: `w_k ~ N(0, (α D_min / 4)²)`.
pub fn build_perturbation(game: &GameInstance, alpha: f64, seed: u64) -> Result<Perturbation> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "perturbation size {alpha} must be nonnegative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = Vec::new();
    let mut estimate = Vec::new();
    let mut d_delta = Vec::new();
    for c in &game.companies {
        let d = c.demand();
        let sd = min_positive(d).map_or(0.0, |dm| alpha * dm / 4.0);
        let mut w = vec![0.0; d.len()];
        let mut est = d.to_vec();
        let mut dd = vec![0.0; d.len()];
        for k in 0..d.len() {
            if d[k] > PINV_EPS {
                w[k] = sample_positive(&mut rng, d[k], sd)?;
                est[k] = d[k] + w[k];
                dd[k] = 1.0 / est[k] - 1.0 / d[k];
            }
        }
        noise.push(w);
        estimate.push(est);
        d_delta.push(dd);
    }
    Ok(Perturbation {
        alpha,
        seed,
        noise,
        estimate,
        d_delta,
    })
}

/// Convexity of every company's cost under the approximate policy:
/// `N_i²(I + D_i D_i^Δ)A_G − D_i D_i^Δ A_i ⪰ 0`, checked entrywise.
pub fn check_convexity_assumption(game: &GameInstance, pert: &Perturbation) -> bool {
    let ag = game.objective.weights();
    game.companies.iter().zip(&pert.d_delta).all(|(c, dd)| {
        let n2 = c.n() * c.n();
        (0..ag.len()).all(|k| {
            let s = c.demand()[k] * dd[k];
            let v = n2 * (1.0 + s) * ag[k] - s * c.queuing().a[k];
            v >= -1e-12 * (n2 * ag[k])
        })
    })
}

#[derive(Debug, Clone)]
pub struct RobustnessBounds {
    pub eta: Vec<f64>,
    pub eta_bar: f64,
    pub epsilon: f64,
}

/// Lipschitz constants of the reduced company costs in `t = [N_i x^i; σ(x^{-i})]`
/// and the resulting ε-equilibrium bound `4 η̄ (Σ N_i − ½ min N_i)`.
pub fn epsilon_bound(game: &GameInstance) -> RobustnessBounds {
    let fleets = game.fleets();
    let r_t: f64 = fleets.iter().sum();
    let a_max = game
        .objective
        .weights()
        .iter()
        .fold(0.0f64, |m, &a| m.max(a));
    // ‖[[A, A], [A, 0]]‖₂ for diagonal A: golden ratio times max A
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    let b = norm(game.objective.linear());
    let eta: Vec<f64> = fleets.iter().map(|_| golden * a_max * r_t + b).collect();
    let eta_bar = eta.iter().fold(0.0f64, |m, &v| m.max(v));
    let n_min = fleets.iter().copied().fold(f64::INFINITY, f64::min);
    RobustnessBounds {
        epsilon: 4.0 * eta_bar * (r_t - 0.5 * n_min),
        eta,
        eta_bar,
    }
}

/// `ψ(x) = ΔF(x)ᵀ(x − x*)`.
pub fn psi(map: &PerturbedRsgMap, x: &AllocationProfile, x_star: &AllocationProfile) -> f64 {
    let diff: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(x_star.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    dot(&map.delta(x), &diff)
}

#[derive(Debug, Clone)]
pub struct GapBound {
    /// Right-hand side of the government-loss gap bound.
    pub bound: f64,
    /// `min_k J_G(x_k) − J_G(x*)`.
    pub observed: f64,
    pub r_x: f64,
    pub r_f: f64,
    pub psi_sum: f64,
    pub gamma: f64,
    pub iterations: usize,
}

/// Bound on `J_G^best − J_G(x*)` after the perturbed iteration recorded in
/// `trace` (which must hold its iterates), together with the observed gap.
pub fn jg_gap_bound(
    game: &GameInstance,
    map: &PerturbedRsgMap,
    trace: &SolveReport,
    x_star: &AllocationProfile,
) -> Result<GapBound> {
    let Some(x0) = trace.iterates.first() else {
        return Err(Error::InvalidParameter(
            "gap bound needs a trace with iterates".into(),
        ));
    };
    let k_bar = trace.iterates.len() - 1;
    let gamma = trace.gamma;
    let r_x = (game.companies_count() as f64).sqrt();
    let r_f = map.lambda_max() * r_x + map.offset_norm();
    let psi_sum: f64 = trace.iterates.iter().map(|x| psi(map, x, x_star)).sum();
    let d0 = x0.distance(x_star);
    let denom = gamma * (k_bar as f64 + 1.0);
    let bound = d0 * d0 / denom + 0.5 * gamma * r_f * r_f - psi_sum / denom;
    let j_star = game.government_cost(x_star);
    let best = trace.jg_trace.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GapBound {
        bound,
        observed: best - j_star,
        r_x,
        r_f,
        psi_sum,
        gamma,
        iterations: k_bar,
    })
}

/// Perturbed equilibrium: averaged iteration with `γ̃ = 0.9 · 2/‖F₁ + ΦL₁‖₂`.
pub fn solve_perturbed(
    game: &GameInstance,
    pert: &Perturbation,
    keep_iterates: bool,
) -> Result<(PerturbedRsgMap, SolveReport)> {
    let map = PerturbedRsgMap::new(game, &pert.d_delta)?;
    let opts = SolveOptions {
        keep_iterates,
        gamma: Some(DEFAULT_STEP_FRACTION * 2.0 / map.lambda_max()),
        ..Default::default()
    };
    let rep = solve_nash(game, &map, &opts)?;
    Ok((map, rep))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub sample: usize,
    pub mechanism: String,
    pub j_g: f64,
    pub assumption_ok: bool,
}

#[derive(Debug, Clone)]
pub struct SampleCheck {
    pub alpha: f64,
    pub sample: usize,
    pub assumption_ok: bool,
    /// Largest unilateral improvement under the exact policies.
    pub max_gain: f64,
    pub epsilon: f64,
    pub gap: GapBound,
}

impl SampleCheck {
    pub fn epsilon_ok(&self) -> bool {
        self.max_gain <= self.epsilon
    }

    pub fn gap_ok(&self) -> bool {
        self.gap.observed <= self.gap.bound
    }
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub alpha: f64,
    pub mechanism: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub checks: Vec<SampleCheck>,
    pub optimum: f64,
}

impl SweepResult {
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut keys: Vec<(f64, String)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(a, m)| *a == r.alpha && *m == r.mechanism) {
                keys.push((r.alpha, r.mechanism.clone()));
            }
        }
        keys.into_iter()
            .map(|(alpha, mechanism)| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.alpha == alpha && r.mechanism == mechanism)
                    .map(|r| r.j_g)
                    .collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
                SweepSummary {
                    alpha,
                    mechanism,
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }
}

/// Seed of sample `s` at grid position `a`.
pub fn sample_seed(base: u64, a: usize, s: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((a as u64) << 32)
        .wrapping_add(s as u64)
}

/// For each `α` and sample: resample the demand-estimate noise, solve the
/// perturbed equilibrium, record its government loss next to the
/// fixed-price baselines and check both robustness bounds.
pub fn robustness_sweep(
    game: &GameInstance,
    alphas: &[f64],
    samples: usize,
    seed: u64,
    baselines: &[(String, Vec<f64>)],
) -> Result<SweepResult> {
    if samples == 0 {
        return Err(Error::InvalidParameter(
            "at least one sample is required".into(),
        ));
    }
    if alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidParameter(
            "perturbation sizes must be nonnegative".into(),
        ));
    }
    let exact = solve_nash(game, &RsgMap::new(game), &SolveOptions::default())?;
    let x_star = exact.x.clone();
    let eps = epsilon_bound(game).epsilon;
    // companies know their true demand, so fixed prices do not see the noise
    let baseline_jg = baselines
        .iter()
        .map(|(name, p)| {
            let map = FixedPriceMap::new(game, p)?;
            Ok((
                name.clone(),
                solve_nash(game, &map, &SolveOptions::default())?.j_g,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let exact_map = RsgMap::new(game);
    let jobs: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..samples).map(move |s| (a, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(a, s)| -> Result<(SweepRow, SampleCheck)> {
            let alpha = alphas[a];
            let pert = build_perturbation(game, alpha, sample_seed(seed, a, s))?;
            let ok = check_convexity_assumption(game, &pert);
            let (map, rep) = solve_perturbed(game, &pert, true)?;
            let gap = jg_gap_bound(game, &map, &rep, &x_star)?;
            let mut max_gain = 0.0f64;
            for i in 0..game.companies_count() {
                max_gain = max_gain.max(best_response_gain(game, &exact_map, i, &rep.x)?.0);
            }
            Ok((
                SweepRow {
                    alpha,
                    sample: s,
                    mechanism: "rsg".into(),
                    j_g: rep.j_g,
                    assumption_ok: ok,
                },
                SampleCheck {
                    alpha,
                    sample: s,
                    assumption_ok: ok,
                    max_gain,
                    epsilon: eps,
                    gap,
                },
            ))
        })
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for r in results {
        let (row, check) = r?;
        for (name, jg) in &baseline_jg {
            rows.push(SweepRow {
                alpha: row.alpha,
                sample: row.sample,
                mechanism: name.clone(),
                j_g: *jg,
                assumption_ok: row.assumption_ok,
            });
        }
        rows.push(row);
        checks.push(check);
    }
    // rsg first within each (alpha, sample)
    rows.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then(a.sample.cmp(&b.sample))
            .then((a.mechanism != "rsg").cmp(&(b.mechanism != "rsg")))
    });
    Ok(SweepResult {
        rows,
        checks,
        optimum: exact.j_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::tests::reference_game;
    use crate::model::{approximate_policy, company_cost, system_optimal_policy};

    #[test]
    fn zero_alpha_gives_zero_perturbation() {
        let game = reference_game(false);
        let p = build_perturbation(&game, 0.0, 3).unwrap();
        assert!(p.d_delta.iter().flatten().all(|v| *v == 0.0));
        assert!(check_convexity_assumption(&game, &p));
    }

    #[test]
    fn unreachable_stations_stay_unperturbed() {
        let mut game = reference_game(false);
        let st = game.stations.clone();
        let c = &game.companies[0];
        let mut d = c.demand().to_vec();
        d[2] = 0.0;
        game.companies[0] =
            crate::model::CompanyParams::new(c.fleet(), d, c.revenue().to_vec(), &st).unwrap();
        let p = build_perturbation(&game, 0.3, 5).unwrap();
        assert_eq!(p.d_delta[0][2], 0.0);
        assert_eq!(p.noise[0][2], 0.0);
    }

    #[test]
    fn noise_variance_matches_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sd = 0.2 * 100.0 / 4.0;
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_positive(&mut rng, 1e6, sd).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!(
            (var / (sd * sd) - 1.0).abs() <= 0.05,
            "ratio {}",
            var / (sd * sd)
        );
    }

    #[test]
    fn estimate_maps_to_pinv_difference() {
        let game = reference_game(true);
        let p = build_perturbation(&game, 0.1, 9).unwrap();
        for (c, (est, dd)) in game.companies.iter().zip(p.estimate.iter().zip(&p.d_delta)) {
            for k in 0..4 {
                assert!(est[k] > 0.0);
                assert!((dd[k] - (1.0 / est[k] - 1.0 / c.demand()[k])).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn assumption_check_is_entrywise() {
        let game = reference_game(true);
        let mut p = Perturbation::zero(&game);
        assert!(check_convexity_assumption(&game, &p));
        // push one entry negative: need D δ (N² a − A) < −N² a
        let c = &game.companies[1];
        let (n2, a, q) = (c.n() * c.n(), game.objective.weights()[3], c.queuing().a[3]);
        let needed = -n2 * a / (n2 * a - q) * 1.01;
        p.d_delta[1][3] = needed / c.demand()[3];
        assert!(!check_convexity_assumption(&game, &p));
    }

    #[test]
    fn epsilon_factor_arithmetic() {
        let game = reference_game(true);
        let b = epsilon_bound(&game);
        assert!((b.epsilon - 1814.0 * b.eta_bar).abs() <= 1e-9 * b.epsilon);
        assert!(b.eta.iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn psi_vanishes_at_reference_point_and_matches_parts() {
        let game = reference_game(false);
        let pert = build_perturbation(&game, 0.1, 1).unwrap();
        let map = PerturbedRsgMap::new(&game, &pert.d_delta).unwrap();
        let x_star = crate::equilibrium::default_start(&game).unwrap();
        assert_eq!(psi(&map, &x_star, &x_star), 0.0);
        // recompute ΔF from the policy definitions
        let fleets = game.fleets();
        let mut x = x_star.clone();
        x.block_mut(0)[0] += 0.01;
        x.block_mut(0)[1] -= 0.01;
        let mut manual = 0.0;
        for i in 0..3 {
            let others = x.partial_aggregate(i, &fleets);
            let t = game.policy_terms(i);
            let g = t.bracket_gradient(x.block(i), &others);
            for k in 0..4 {
                let d = game.companies[i].demand()[k];
                manual += d * pert.d_delta[i][k] * g[k] * (x.block(i)[k] - x_star.block(i)[k]);
            }
        }
        let v = psi(&map, &x, &x_star);
        assert!((v - manual).abs() <= 1e-12 * manual.abs().max(1e-300) + 1e-15);
    }

    #[test]
    fn perturbed_gradient_is_derivative_of_approximate_cost() {
        let game = reference_game(true);
        let pert = build_perturbation(&game, 0.2, 2).unwrap();
        let map = PerturbedRsgMap::new(&game, &pert.d_delta).unwrap();
        let fleets = game.fleets();
        let x = crate::equilibrium::default_start(&game).unwrap();
        let sigma = x.aggregate(&fleets);
        let h = 1e-6;
        for i in 0..3 {
            let others = x.partial_aggregate(i, &fleets);
            let g = map.company_gradient(i, &x, &sigma);
            // the company pays prices that are fixed functions of its own
            // allocation; differentiate the realised cost
            let cost = |xi: &[f64]| {
                let p = approximate_policy(&game, i, xi, &others, &pert.d_delta[i]).unwrap();
                company_cost(&game, i, xi, &others, &p.prices).unwrap()
            };
            for k in 0..4 {
                let mut up = x.block(i).to_vec();
                let mut dn = up.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (cost(&up) - cost(&dn)) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0),
                    "{fd} vs {}",
                    g[k]
                );
            }
            let _ = system_optimal_policy(&game, i, x.block(i), &others).unwrap();
        }
    }

    #[test]
    fn zero_perturbation_gap_bound_is_slack() {
        let game = reference_game(true);
        let exact = solve_nash(&game, &RsgMap::new(&game), &SolveOptions::default()).unwrap();
        let (map, rep) = solve_perturbed(&game, &Perturbation::zero(&game), true).unwrap();
        let gap = jg_gap_bound(&game, &map, &rep, &exact.x).unwrap();
        assert_eq!(gap.psi_sum, 0.0);
        assert!(gap.observed <= gap.bound);
    }
}
