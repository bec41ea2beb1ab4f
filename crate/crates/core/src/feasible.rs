//! Reachability structure of a fleet, Hall's matching condition, the
//! admissible allocation polytope and rounding of allocations to vehicle
//! counts.

use crate::error::{Error, Result};
use crate::qp::{self, LinearRow};

/// Station subsets are enumerated as bitmasks; beyond this the `2^m` growth
/// is not worth it.
pub const MAX_SUBSET_STATIONS: usize = 20;

/// Which stations each vehicle of one company can reach.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityStructure {
    stations: usize,
    reach: Vec<Vec<usize>>,
    masks: Vec<u32>,
}

impl FeasibilityStructure {
    /// `reach[v]` lists the stations vehicle `v` can reach.
    pub fn new(stations: usize, reach: Vec<Vec<usize>>) -> Result<Self> {
        if stations == 0 {
            return Err(Error::InvalidParameter(
                "at least one station is required".into(),
            ));
        }
        if stations > MAX_SUBSET_STATIONS {
            return Err(Error::InvalidParameter(format!(
                "{stations} stations exceed the subset enumeration limit of {MAX_SUBSET_STATIONS}"
            )));
        }
        let mut masks = Vec::with_capacity(reach.len());
        let mut clean = Vec::with_capacity(reach.len());
        for (v, r) in reach.into_iter().enumerate() {
            let mut mask = 0u32;
            for &k in &r {
                if k >= stations {
                    return Err(Error::InvalidParameter(format!(
                        "vehicle {v} reaches unknown station {k}"
                    )));
                }
                mask |= 1 << k;
            }
            if mask == 0 {
                return Err(Error::DegenerateFleet(format!(
                    "vehicle {v} cannot reach any station"
                )));
            }
            masks.push(mask);
            clean.push((0..stations).filter(|k| mask >> k & 1 == 1).collect());
        }
        Ok(Self {
            stations,
            reach: clean,
            masks,
        })
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn vehicles(&self) -> usize {
        self.reach.len()
    }

    /// `Ω_v`, sorted ascending.
    pub fn reachable(&self, v: usize) -> &[usize] {
        &self.reach[v]
    }

    pub fn mask(&self, v: usize) -> u32 {
        self.masks[v]
    }

    /// `F_j`: vehicles that can reach station `j`.
    pub fn station_members(&self, j: usize) -> Vec<usize> {
        (0..self.vehicles())
            .filter(|&v| self.masks[v] >> j & 1 == 1)
            .collect()
    }

    /// Stations reachable by at least one vehicle.
    pub fn reachable_stations(&self) -> Vec<usize> {
        let all = self.masks.iter().fold(0u32, |a, m| a | m);
        (0..self.stations).filter(|k| all >> k & 1 == 1).collect()
    }

    /// `|∪_{j∈S} F_j|` for every subset mask `S`.
    pub fn union_counts(&self) -> Vec<usize> {
        let full = (1usize << self.stations) - 1;
        // inside[T] = #{v : Ω_v ⊆ T}
        let mut inside = vec![0usize; full + 1];
        for &m in &self.masks {
            inside[m as usize] += 1;
        }
        for bit in 0..self.stations {
            for t in 0..=full {
                if t >> bit & 1 == 1 {
                    inside[t] += inside[t ^ (1 << bit)];
                }
            }
        }
        let n = self.vehicles();
        (0..=full).map(|s| n - inside[full & !s]).collect()
    }
}

/// Hall's condition for the many-to-one matching: `Σ_{j∈S} n_j ≤ |∪_{j∈S} F_j|`
/// for every subset `S`.
pub fn hall_condition(n: &[usize], fs: &FeasibilityStructure) -> bool {
    if n.len() != fs.stations() {
        return false;
    }
    let unions = fs.union_counts();
    let mut demand = vec![0usize; unions.len()];
    for s in 1..unions.len() {
        let low = s.trailing_zeros() as usize;
        demand[s] = demand[s & (s - 1)] + n[low];
        if demand[s] > unions[s] {
            return false;
        }
    }
    true
}

/// Continuous allocations of one company that are guaranteed to round to a
/// matchable vehicle count vector.
#[derive(Debug, Clone)]
pub struct AdmissiblePolytope {
    stations: usize,
    fleet: usize,
    company: usize,
    subset_masks: Vec<u32>,
    subset_rhs: Vec<f64>,
    reachable: Vec<usize>,
    equalities: Vec<LinearRow>,
    inequalities: Vec<LinearRow>,
    empty: bool,
}

/// Builds the admissible polytope `{x ∈ Δ : Σ_{j∈S} x_j ≤ max(0, |∪F_S| − |S|)/N ∀ S ⊊ M}`.
///
/// Stations no vehicle reaches are pinned to zero mass and left out of the
/// `|S|` count; otherwise the set `S = M \ {j}` alone would make the polytope
/// empty whenever such a station exists.
pub fn admissible_polytope(fs: &FeasibilityStructure) -> Result<AdmissiblePolytope> {
    let m = fs.stations();
    let n = fs.vehicles();
    if n == 0 {
        return Err(Error::DegenerateFleet(
            "company has no vehicles to charge".into(),
        ));
    }
    let unions = fs.union_counts();
    let full = (1u32 << m) - 1;
    let reachable = fs
        .reachable_stations()
        .iter()
        .fold(0u32, |a, &k| a | 1 << k);
    let mut subset_masks = Vec::with_capacity(full as usize);
    let mut subset_rhs = Vec::with_capacity(full as usize);
    let mut inequalities = Vec::with_capacity(full as usize + m);
    for s in 1..full {
        let rhs = if s & reachable == reachable {
            1.0
        } else {
            let size = (s & reachable).count_ones() as usize;
            unions[s as usize].saturating_sub(size) as f64 / n as f64
        };
        subset_masks.push(s);
        subset_rhs.push(rhs);
        let coeffs = (0..m)
            .map(|k| if s >> k & 1 == 1 { -1.0 } else { 0.0 })
            .collect();
        inequalities.push(LinearRow::new(coeffs, -rhs));
    }
    for k in 0..m {
        let mut c = vec![0.0; m];
        c[k] = 1.0;
        inequalities.push(LinearRow::new(c, 0.0));
    }
    let equalities = vec![LinearRow::new(vec![1.0; m], 1.0)];
    let mut poly = AdmissiblePolytope {
        stations: m,
        fleet: n,
        company: 0,
        subset_masks,
        subset_rhs,
        reachable: fs.reachable_stations(),
        equalities,
        inequalities,
        empty: false,
    };
    poly.empty = match qp::project(
        &vec![1.0 / m as f64; m],
        &poly.equalities,
        &poly.inequalities,
    ) {
        Ok(_) => false,
        Err(Error::InfeasibleProgram) => true,
        Err(e) => return Err(e),
    };
    Ok(poly)
}

impl AdmissiblePolytope {
    /// Tags the polytope with its company index for error reporting.
    pub fn for_company(mut self, company: usize) -> Self {
        self.company = company;
        self
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn fleet(&self) -> usize {
        self.fleet
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Stations reachable by at least one vehicle of the company.
    pub fn reachable_stations(&self) -> &[usize] {
        &self.reachable
    }

    /// Uniform allocation over the reachable stations, projected into the set.
    pub fn default_start(&self) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.stations];
        let w = 1.0 / self.reachable.len() as f64;
        for &k in &self.reachable {
            x[k] = w;
        }
        self.project(&x)
    }

    /// Proper subsets (as bitmasks) and their right-hand sides.
    pub fn subset_constraints(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.subset_masks
            .iter()
            .copied()
            .zip(self.subset_rhs.iter().copied())
    }

    pub fn equalities(&self) -> &[LinearRow] {
        &self.equalities
    }

    /// All inequalities in `c·x ≥ d` form: subset bounds, then `x ≥ 0`.
    pub fn inequalities(&self) -> &[LinearRow] {
        &self.inequalities
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.stations
            && x.iter().all(|&v| v >= -tol)
            && (x.iter().sum::<f64>() - 1.0).abs() <= tol
            && self.subset_ok(x, tol)
    }

    fn subset_ok(&self, x: &[f64], tol: f64) -> bool {
        self.subset_constraints().all(|(s, rhs)| {
            let mass: f64 = (0..self.stations)
                .filter(|k| s >> k & 1 == 1)
                .map(|k| x[k])
                .sum();
            mass <= rhs + tol
        })
    }

    /// Euclidean projection onto the polytope.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.stations {
            return Err(Error::dim("projection input", self.stations, x.len()));
        }
        if self.empty {
            return Err(Error::EmptyPolytope {
                company: self.company,
            });
        }
        // the simplex projection is optimal whenever it already satisfies the
        // subset bounds
        let p = qp::project_simplex(x);
        if self.subset_ok(&p, 0.0) {
            return Ok(p);
        }
        match qp::project(x, &self.equalities, &self.inequalities) {
            Ok(sol) => Ok(sol.x),
            Err(Error::InfeasibleProgram) => Err(Error::EmptyPolytope {
                company: self.company,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Rounds `x ∈ X_i` to integer vehicle counts within the floor/ceil lattice
/// of `N x` that satisfy Hall's condition.
pub fn discretize(x: &[f64], fs: &FeasibilityStructure) -> Result<Vec<usize>> {
    let m = fs.stations();
    if x.len() != m {
        return Err(Error::dim("allocation", m, x.len()));
    }
    let n = fs.vehicles();
    let scaled: Vec<f64> = x
        .iter()
        .map(|&v| {
            let s = (v * n as f64).max(0.0);
            if (s - s.round()).abs() <= 1e-9 {
                s.round()
            } else {
                s
            }
        })
        .collect();
    let floor: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = floor.iter().sum();
    if assigned > n {
        return Err(Error::InvalidParameter(
            "allocation mass exceeds one".into(),
        ));
    }
    let remaining = n - assigned;
    let mut frac: Vec<(usize, f64)> = scaled
        .iter()
        .enumerate()
        .filter(|(_, s)| s.fract() > 0.0)
        .map(|(k, s)| (k, s.fract()))
        .collect();
    frac.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if frac.len() < remaining {
        return Err(Error::InvalidParameter("allocation mass below one".into()));
    }
    let mut counts = floor.clone();
    for &(k, _) in frac.iter().take(remaining) {
        counts[k] += 1;
    }
    if hall_condition(&counts, fs) {
        return Ok(counts);
    }
    // repair: other choices of which fractional stations round up
    let candidates: Vec<usize> = frac.iter().map(|&(k, _)| k).collect();
    let mut chosen = Vec::with_capacity(remaining);
    if search_lattice(
        &candidates,
        0,
        remaining,
        &mut chosen,
        &floor,
        fs,
        &mut counts,
    ) {
        return Ok(counts);
    }
    Err(Error::Internal(
        "no admissible rounding exists for a point of the admissible polytope".into(),
    ))
}

fn search_lattice(
    candidates: &[usize],
    start: usize,
    left: usize,
    chosen: &mut Vec<usize>,
    floor: &[usize],
    fs: &FeasibilityStructure,
    out: &mut Vec<usize>,
) -> bool {
    if left == 0 {
        let mut counts = floor.to_vec();
        for &k in chosen.iter() {
            counts[k] += 1;
        }
        if hall_condition(&counts, fs) {
            *out = counts;
            return true;
        }
        return false;
    }
    for idx in start..candidates.len() {
        if candidates.len() - idx < left {
            break;
        }
        chosen.push(candidates[idx]);
        if search_lattice(candidates, idx + 1, left - 1, chosen, floor, fs, out) {
            return true;
        }
        chosen.pop();
    }
    false
}
