mod common;

use common::kuhn_feasible;
use fleetcharge::feasible::{
    admissible_polytope, discretize, hall_condition, FeasibilityStructure,
};
use fleetcharge::qp::project_simplex;
use fleetcharge::sim::{discharge_step, mfd_speed, VehicleState};
use fleetcharge::surge::{driver_best_response, DriverParams};
use proptest::prelude::*;

fn reach_strategy(m: usize, max_vehicles: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0..m, 1..=m), 1..=max_vehicles)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

fn vehicle(battery: f64, range: f64) -> VehicleState {
    VehicleState {
        company: 0,
        node: 0,
        battery,
        start_battery: battery,
        max_range_km: range,
        threshold: 55.0,
        beta: 1.0,
    }
}

proptest! {
    #[test]
    fn mfd_is_nonincreasing_and_bounded(a in 0.0f64..80_000.0, b in 0.0f64..80_000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (vl, vh) = (mfd_speed(lo).unwrap(), mfd_speed(hi).unwrap());
        prop_assert!(vh <= vl + 1e-12);
        prop_assert!((0.0..=36.0).contains(&vl));
    }

    #[test]
    fn discharge_is_monotone_and_floored(b in 0.0f64..100.0, range in 10.0f64..400.0, speed in 0.0f64..40.0, h in 0.0f64..5.0) {
        let v = discharge_step(&vehicle(b, range), speed, h);
        prop_assert!(v.battery >= 0.0 && v.battery <= b);
        if b - 100.0 / range * speed * h > 0.0 {
            prop_assert!((v.battery - (b - 100.0 / range * speed * h)).abs() < 1e-9);
        }
    }

    #[test]
    fn reachability_is_monotone_in_battery(b1 in 0.0f64..100.0, b2 in 0.0f64..100.0, km in 0.0f64..200.0, range in 10.0f64..400.0) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        if vehicle(lo, range).can_reach(km) {
            prop_assert!(vehicle(hi, range).can_reach(km));
        }
    }

    #[test]
    fn simplex_projection_is_idempotent_and_feasible(v in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let p = project_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let q = project_simplex(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn polytope_projection_satisfies_variational_inequality(
        reach in reach_strategy(4, 40),
        point in prop::collection::vec(-1.0f64..2.0, 4),
        other in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let fs = FeasibilityStructure::new(4, reach).unwrap();
        let poly = admissible_polytope(&fs).unwrap();
        prop_assume!(!poly.is_empty());
        let p = poly.project(&point).unwrap();
        prop_assert!(poly.contains(&p, 1e-9));
        // any feasible y satisfies (point − p)·(y − p) ≤ 0
        let s: f64 = other.iter().sum();
        prop_assume!(s > 0.0);
        let y = poly.project(&other.iter().map(|v| v / s).collect::<Vec<_>>()).unwrap();
        let ip: f64 = (0..4).map(|k| (point[k] - p[k]) * (y[k] - p[k])).sum();
        prop_assert!(ip <= 1e-8);
    }

    #[test]
    fn hall_agrees_with_augmenting_paths(reach in reach_strategy(4, 8), split in prop::collection::vec(0usize..4, 8)) {
        let mut n = vec![0usize; 4];
        for &k in split.iter().take(reach.len()) {
            n[k] += 1;
        }
        let fs = FeasibilityStructure::new(4, reach.clone()).unwrap();
        prop_assert_eq!(hall_condition(&n, &fs), kuhn_feasible(&n, &reach));
    }

    #[test]
    fn rounding_stays_on_the_lattice_and_is_matchable(reach in reach_strategy(3, 30), point in prop::collection::vec(0.0f64..1.0, 3)) {
        let fs = FeasibilityStructure::new(3, reach.clone()).unwrap();
        let poly = admissible_polytope(&fs).unwrap();
        prop_assume!(!poly.is_empty());
        let x = poly.project(&point).unwrap();
        let n = discretize(&x, &fs).unwrap();
        let total = fs.vehicles() as f64;
        prop_assert_eq!(n.iter().sum::<usize>(), fs.vehicles());
        for (c, v) in n.iter().zip(&x) {
            prop_assert!((*c as f64 - v * total).abs() < 1.0 + 1e-9);
        }
        prop_assert!(kuhn_feasible(&n, &reach));
    }

    #[test]
    fn surge_only_raises_the_target_station(
        demand in prop::collection::vec(1.0f64..50.0, 3),
        revenue in prop::collection::vec(-50.0f64..0.0, 3),
        gain in prop::collection::vec(0.5f64..10.0, 3),
        prices in prop::collection::vec(0.0f64..5.0, 3),
        bump in 0.0f64..100.0,
    ) {
        let d = DriverParams { demand, revenue, gain, reachable: vec![0, 1, 2] };
        let before = driver_best_response(&d, &[0.0; 3], &prices).unwrap();
        let mut rho = [0.0; 3];
        rho[before] = bump;
        prop_assert_eq!(driver_best_response(&d, &rho, &prices).unwrap(), before);
    }
}
