use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Artifacts, GridSearchResult, MechanismRow};
use crate::equilibrium::SolveReport;
use crate::robustness::SweepResult;
use crate::sim::CompanyFleet;
use crate::sim::{RoadNetwork, Snapshot};
use crate::surge::SurgeSolution;
use crate::Result;

fn station_headers(prefix: &str, m: usize) -> Vec<String> {
    (1..=m).map(|k| format!("{prefix}{k}")).collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `iteration,j_g,sigma_1..m,residual`, one row per iterate.
pub fn write_convergence<W: Write>(w: W, report: &SolveReport) -> Result<()> {
    let m = report.sigma.len();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["iteration".to_string(), "j_g".to_string()];
    header.extend(station_headers("sigma_", m));
    header.push("residual".into());
    out.write_record(&header)?;
    for (k, ((j, s), r)) in report
        .jg_trace
        .iter()
        .zip(&report.sigma_trace)
        .zip(&report.residuals)
        .enumerate()
    {
        let mut row = vec![k.to_string(), num(*j)];
        row.extend(s.iter().map(|v| num(*v)));
        row.push(num(*r));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Company rows of `(x_k, p_k)` pairs per station, then the set-point and
/// the realised aggregate.
pub fn write_prices<W: Write>(
    w: W,
    report: &SolveReport,
    prices: &[Vec<f64>],
    setpoint: &[f64],
) -> Result<()> {
    let m = report.sigma.len();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["row".to_string()];
    for k in 1..=m {
        header.push(format!("x_{k}"));
        header.push(format!("p_{k}"));
    }
    out.write_record(&header)?;
    for (i, p) in prices.iter().enumerate() {
        let mut row = vec![format!("C{}", i + 1)];
        for k in 0..m {
            row.push(num(report.x.block(i)[k]));
            row.push(num(p[k]));
        }
        out.write_record(&row)?;
    }
    for (name, vals) in [("N_hat", setpoint), ("sigma", report.sigma.as_slice())] {
        let mut row = vec![name.to_string()];
        for v in vals {
            row.push(num(*v));
            row.push(String::new());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `mechanism,j_g,sigma_1..m,prices`, with the set-point as first row.
pub fn write_mechanisms<W: Write>(w: W, rows: &[MechanismRow], setpoint: &[f64]) -> Result<()> {
    let m = setpoint.len();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["mechanism".to_string(), "j_g".to_string()];
    header.extend(station_headers("sigma_", m));
    header.push("prices".into());
    out.write_record(&header)?;
    let mut target = vec!["N_hat".to_string(), String::new()];
    target.extend(setpoint.iter().map(|v| num(*v)));
    target.push(String::new());
    out.write_record(&target)?;
    for r in rows {
        let mut row = vec![r.name.clone(), num(r.j_g)];
        row.extend(r.sigma.iter().map(|v| num(*v)));
        row.push(match &r.prices {
            Some(p) => p.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "),
            None => "policy".into(),
        });
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `company,vehicle_id,station,rho` for every nonzero surge price, where
/// `vehicle_id` is the vehicle's snapshot row and stations count from 1.
pub fn write_surge<W: Write>(w: W, fleets: &[CompanyFleet], surge: &[SurgeSolution]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["company", "vehicle_id", "station", "rho", "mode"])?;
    for (f, sol) in fleets.iter().zip(surge) {
        for (local, rho) in sol.surge.iter().enumerate() {
            for (k, &r) in rho.iter().enumerate() {
                if r != 0.0 {
                    out.write_record([
                        f.company.to_string(),
                        f.vehicles[local].to_string(),
                        (k + 1).to_string(),
                        num(r),
                        sol.mode.as_str().to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `p_1..p_m,j_g` for every evaluated grid point, in traversal order.
pub fn write_grid<W: Write>(w: W, grid: &GridSearchResult) -> Result<()> {
    let m = grid.prices.len();
    let mut out = csv::Writer::from_writer(w);
    let mut header = station_headers("p_", m);
    header.push("j_g".into());
    out.write_record(&header)?;
    for (p, j) in &grid.evaluations {
        let mut row: Vec<String> = p.iter().map(|v| num(*v)).collect();
        row.push(num(*j));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `alpha,sample_id,mechanism,j_g,assumption_ok`.
pub fn write_robustness<W: Write>(w: W, sweep: &SweepResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha", "sample_id", "mechanism", "j_g", "assumption_ok"])?;
    for r in &sweep.rows {
        out.write_record([
            num(r.alpha),
            r.sample.to_string(),
            r.mechanism.clone(),
            num(r.j_g),
            (r.assumption_ok as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot, network: &RoadNetwork) -> Result<()> {
    snapshot.write_csv(std::fs::File::create(path)?, network)
}

fn create(
    dir: &Path,
    name: &str,
    files: &mut Vec<PathBuf>,
) -> Result<std::io::BufWriter<std::fs::File>> {
    let path = dir.join(name);
    let f = std::fs::File::create(&path)?;
    files.push(path);
    Ok(std::io::BufWriter::new(f))
}

/// Writes every artifact into `dir` and returns the written paths.
pub fn write_all(dir: &Path, art: &Artifacts) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let p = &art.prepared;
    p.snapshot.write_csv(
        create(dir, "snapshot.csv", &mut files)?,
        &p.scenario.network,
    )?;
    write_convergence(
        create(dir, "convergence.csv", &mut files)?,
        &art.upper.report,
    )?;
    write_prices(
        create(dir, "prices.csv", &mut files)?,
        &art.upper.report,
        &art.upper.prices,
        &p.inputs.setpoint,
    )?;
    write_mechanisms(
        create(dir, "mechanisms.csv", &mut files)?,
        &art.mechanisms,
        &p.inputs.setpoint,
    )?;
    write_surge(
        create(dir, "surge.csv", &mut files)?,
        &p.inputs.fleets,
        &art.lower.surge,
    )?;
    if let Some(sweep) = &art.robustness {
        write_robustness(create(dir, "robustness.csv", &mut files)?, sweep)?;
    }
    let mut t = create(dir, "timing.txt", &mut files)?;
    writeln!(t, "mechanism {}", art.upper.mechanism.as_str())?;
    writeln!(t, "upper_solve_seconds {:.6}", art.upper.seconds)?;
    writeln!(t, "upper_iterations {}", art.upper.report.iterations)?;
    t.flush()?;
    Ok(files)
}
