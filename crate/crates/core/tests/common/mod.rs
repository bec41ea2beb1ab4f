//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use fleetcharge::feasible::{admissible_polytope, FeasibilityStructure};
use fleetcharge::model::{CompanyParams, GameInstance, GovernmentObjective, StationSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REFERENCE_FLEETS: [usize; 3] = [194, 181, 157];
pub const REFERENCE_SETPOINT: [f64; 4] = [198.0, 103.0, 144.0, 87.0];
pub const QUEUE_WEIGHTS: [f64; 4] = [0.4, 0.1, 0.3, 0.2];
pub const CAPACITIES: [f64; 4] = [15.0, 60.0, 35.0, 50.0];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Reach sets of one company: everything when `full`, otherwise each
/// station with probability 0.85.
pub fn reach_sets(rng: &mut ChaCha8Rng, vehicles: usize, m: usize, full: bool) -> Vec<Vec<usize>> {
    (0..vehicles)
        .map(|_| {
            let r: Vec<usize> = if full {
                (0..m).collect()
            } else {
                (0..m).filter(|_| rng.random_bool(0.85)).collect()
            };
            if r.is_empty() {
                vec![0]
            } else {
                r
            }
        })
        .collect()
}

/// Three companies with fleets 194/181/157 charging at four stations, with
/// random per-unit charging demand and revenue.
pub fn reference_game(full: bool, seed: u64) -> (GameInstance, Vec<FeasibilityStructure>) {
    let stations = StationSet::new(CAPACITIES.to_vec(), QUEUE_WEIGHTS.to_vec()).unwrap();
    let objective = GovernmentObjective::from_setpoint(
        QUEUE_WEIGHTS.iter().map(|q| 2.5 * q).collect(),
        REFERENCE_SETPOINT.to_vec(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut companies = Vec::new();
    let mut polys = Vec::new();
    let mut structures = Vec::new();
    for (i, &n) in REFERENCE_FLEETS.iter().enumerate() {
        let fs = FeasibilityStructure::new(4, reach_sets(&mut rng, n, 4, full)).unwrap();
        polys.push(admissible_polytope(&fs).unwrap().for_company(i));
        structures.push(fs);
        let demand = (0..4)
            .map(|_| n as f64 * rng.random_range(30.0..45.0))
            .collect();
        let revenue = (0..4)
            .map(|_| -(n as f64) * rng.random_range(50.0..120.0))
            .collect();
        companies.push(CompanyParams::new(n, demand, revenue, &stations).unwrap());
    }
    (
        GameInstance::new(stations, objective, companies, polys).unwrap(),
        structures,
    )
}

/// Inequalities `a·x ≤ b` of the admissible set, rebuilt by brute force from
/// the reach sets: simplex, nonnegativity, and for each proper subset `S`
/// `Σ_S x ≤ max(0, |vehicles reaching S| − |S ∩ reachable|)/N`, where a
/// subset covering every reachable station is left unconstrained.
pub fn brute_force_constraints(reach: &[Vec<usize>], m: usize) -> Vec<(Vec<f64>, f64)> {
    let n = reach.len();
    let reachable: Vec<bool> = (0..m)
        .map(|k| reach.iter().any(|r| r.contains(&k)))
        .collect();
    let mut rows = Vec::new();
    for s in 1u32..(1 << m) - 1 {
        let members: Vec<usize> = (0..m).filter(|k| s >> k & 1 == 1).collect();
        if (0..m).all(|k| !reachable[k] || members.contains(&k)) {
            continue;
        }
        let union = reach
            .iter()
            .filter(|r| r.iter().any(|k| members.contains(k)))
            .count();
        let size = members.iter().filter(|&&k| reachable[k]).count();
        let rhs = union.saturating_sub(size) as f64 / n as f64;
        rows.push((
            (0..m)
                .map(|k| if s >> k & 1 == 1 { 1.0 } else { 0.0 })
                .collect(),
            rhs,
        ));
    }
    for k in 0..m {
        let mut a = vec![0.0; m];
        a[k] = -1.0;
        rows.push((a, 0.0));
    }
    rows
}

/// Vertices of `{x : Σx = 1, a·x ≤ b}` by enumerating every choice of
/// `m − 1` active inequalities.
pub fn enumerate_vertices(rows: &[(Vec<f64>, f64)], m: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut pick = vec![0usize; m - 1];
    fn visit(
        rows: &[(Vec<f64>, f64)],
        m: usize,
        depth: usize,
        start: usize,
        pick: &mut Vec<usize>,
        out: &mut Vec<Vec<f64>>,
    ) {
        if depth == m - 1 {
            let mut a = DMatrix::zeros(m, m);
            let mut b = DVector::zeros(m);
            for k in 0..m {
                a[(0, k)] = 1.0;
            }
            b[0] = 1.0;
            for (r, &idx) in pick.iter().enumerate() {
                for k in 0..m {
                    a[(r + 1, k)] = rows[idx].0[k];
                }
                b[r + 1] = rows[idx].1;
            }
            let Some(x) = a.lu().solve(&b) else { return };
            let x: Vec<f64> = x.iter().copied().collect();
            let feasible = rows
                .iter()
                .all(|(a, b)| a.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() <= b + 1e-10);
            if feasible
                && !out
                    .iter()
                    .any(|v| v.iter().zip(&x).all(|(p, q)| (p - q).abs() < 1e-9))
            {
                out.push(x);
            }
            return;
        }
        for idx in start..rows.len() {
            pick[depth] = idx;
            visit(rows, m, depth + 1, idx + 1, pick, out);
        }
    }
    visit(rows, m, 0, 0, &mut pick, &mut out);
    out
}

/// Minimises `½ (σ − σ̂)ᵀ W (σ − σ̂)` with `σ = Σ_i N_i x^i` and each `x^i` in
/// the convex hull of its vertex list, by block-coordinate pairwise
/// Frank–Wolfe with exact line search. Returns the optimal value.
pub fn frank_wolfe_oracle(
    vertices: &[Vec<Vec<f64>>],
    fleets: &[f64],
    weights: &[f64],
    target: &[f64],
    iterations: usize,
) -> f64 {
    let m = weights.len();
    let c = vertices.len();
    // convex weights over each company's vertices, started at the barycentre
    let mut lambda: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| vec![1.0 / v.len() as f64; v.len()])
        .collect();
    let point = |i: usize, lam: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|k| vertices[i].iter().zip(lam).map(|(v, l)| v[k] * l).sum())
            .collect()
    };
    let mut x: Vec<Vec<f64>> = (0..c).map(|i| point(i, &lambda[i])).collect();
    let sigma = |x: &[Vec<f64>]| -> Vec<f64> {
        (0..m)
            .map(|k| (0..c).map(|i| fleets[i] * x[i][k]).sum())
            .collect()
    };
    let value = |s: &[f64]| -> f64 {
        (0..m)
            .map(|k| 0.5 * weights[k] * (s[k] - target[k]).powi(2))
            .sum()
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| p * q).sum() };
    for _ in 0..iterations {
        let mut moved = false;
        for i in 0..c {
            let s = sigma(&x);
            let g: Vec<f64> = (0..m)
                .map(|k| fleets[i] * weights[k] * (s[k] - target[k]))
                .collect();
            let scores: Vec<f64> = vertices[i].iter().map(|v| dot(&g, v)).collect();
            let fw = (0..scores.len())
                .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap();
            let away = (0..scores.len())
                .filter(|&a| lambda[i][a] > 0.0)
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap();
            let d: Vec<f64> = (0..m)
                .map(|k| vertices[i][fw][k] - vertices[i][away][k])
                .collect();
            let slope = dot(&g, &d);
            if slope >= -1e-14 {
                continue;
            }
            let curv: f64 = (0..m)
                .map(|k| fleets[i] * fleets[i] * weights[k] * d[k] * d[k])
                .sum();
            let t = (-slope / curv).min(lambda[i][away]);
            lambda[i][away] -= t;
            lambda[i][fw] += t;
            for k in 0..m {
                x[i][k] += t * d[k];
            }
            moved = true;
        }
        if !moved {
            break;
        }
    }
    value(&sigma(&x))
}

/// Kuhn's augmenting-path matching of vehicles to station slots; true when
/// every slot of `n` can be filled.
pub fn kuhn_feasible(n: &[usize], reach: &[Vec<usize>]) -> bool {
    let slots: Vec<usize> = n
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    if slots.len() > reach.len() {
        return false;
    }
    let mut owner: Vec<Option<usize>> = vec![None; reach.len()];
    fn augment(
        slot: usize,
        slots: &[usize],
        reach: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for v in 0..reach.len() {
            if seen[v] || !reach[v].contains(&slots[slot]) {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|o| augment(o, slots, reach, seen, owner)) {
                owner[v] = Some(slot);
                return true;
            }
        }
        false
    }
    (0..slots.len()).all(|s| {
        let mut seen = vec![false; reach.len()];
        augment(s, &slots, reach, &mut seen, &mut owner)
    })
}
