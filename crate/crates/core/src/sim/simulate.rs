use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::battery::{drain, VehicleState};
use super::mfd::mfd_speed;
use super::network::RoadNetwork;
use crate::config::{derive_seed, Config, STREAM_DEMAND, STREAM_FLEET, STREAM_NETWORK};
use crate::{Error, Result};

/// A ride request between internal node indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub time_s: f64,
    pub origin: usize,
    pub dest: usize,
}

/// Network, stations and demand of one operating period.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: Config,
    pub network: RoadNetwork,
    /// Node index of each station.
    pub station_nodes: Vec<usize>,
    /// Whether each node lies in the strongly connected part holding the stations.
    pub usable: Vec<bool>,
    /// Station region of each node; `None` outside the usable part.
    pub region: Vec<Option<usize>>,
    /// Requests sorted by time.
    pub demand: Vec<Request>,
}

impl Scenario {
    pub fn from_config(config: &Config) -> Result<Self> {
        config.validate()?;
        let network = match (&config.network.path, &config.network.grid) {
            (Some(p), _) => RoadNetwork::from_file(&config.resolve(p))?,
            (None, Some(g)) => RoadNetwork::grid(
                g.rows,
                g.cols,
                g.spacing_m,
                g.jitter,
                derive_seed(config.seed, STREAM_NETWORK),
            )?,
            (None, None) => unreachable!("validated"),
        };
        let mut station_nodes = Vec::with_capacity(config.stations());
        for s in &config.stations {
            let node = network.node(s.node).ok_or_else(|| {
                Error::InvalidParameter(format!("station node {} is not in the network", s.node))
            })?;
            station_nodes.push(node);
        }
        let usable = network.strongly_connected_with(&station_nodes);
        let region = (0..network.len())
            .map(|v| {
                if usable[v] {
                    network.nearest_station(v, &station_nodes)
                } else {
                    None
                }
            })
            .collect();
        let mut scenario = Self {
            config: config.clone(),
            network,
            station_nodes,
            usable,
            region,
            demand: Vec::new(),
        };
        scenario.demand = match &config.demand.path {
            Some(p) => load_demand(&config.resolve(p), &scenario.network)?,
            None => generate_demand(&scenario, derive_seed(config.seed, STREAM_DEMAND))?,
        };
        Ok(scenario)
    }

    pub fn stations(&self) -> usize {
        self.station_nodes.len()
    }

    /// Nodes of the usable part, ascending.
    pub fn usable_nodes(&self) -> Vec<usize> {
        (0..self.network.len())
            .filter(|&v| self.usable[v])
            .collect()
    }

    /// Share of requests originating in each station's region; uniform
    /// when no request falls in the usable part.
    pub fn request_distribution(&self) -> Vec<f64> {
        let counts = self.request_counts();
        let total: usize = counts.iter().sum();
        let m = self.stations();
        if total == 0 {
            return vec![1.0 / m as f64; m];
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    pub fn request_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.stations()];
        for r in &self.demand {
            if let Some(k) = self.region[r.origin] {
                counts[k] += 1;
            }
        }
        counts
    }
}

/// Reads `time_s,origin_node,dest_node` rows (with header) and sorts them by time.
pub fn load_demand(path: &Path, network: &RoadNetwork) -> Result<Vec<Request>> {
    let file = std::fs::File::open(path)?;
    read_demand(file, network, &path.display().to_string())
}

pub fn read_demand<R: std::io::Read>(
    reader: R,
    network: &RoadNetwork,
    origin: &str,
) -> Result<Vec<Request>> {
    let bad = |row: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        msg: format!("row {row}: {msg}"),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    let expected = ["time_s", "origin_node", "dest_node"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(bad(0, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        let time_s: f64 = rec[0]
            .parse()
            .map_err(|_| bad(row, format!("bad time `{}`", &rec[0])))?;
        if !(time_s >= 0.0) || !time_s.is_finite() {
            return Err(bad(
                row,
                format!("time {time_s} must be finite and nonnegative"),
            ));
        }
        let node = |s: &str| -> Result<usize> {
            let id: u64 = s.parse().map_err(|_| bad(row, format!("bad node `{s}`")))?;
            network
                .node(id)
                .ok_or_else(|| bad(row, format!("unknown node {id}")))
        };
        out.push(Request {
            time_s,
            origin: node(&rec[1])?,
            dest: node(&rec[2])?,
        });
    }
    out.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    Ok(out)
}

pub fn write_demand<W: std::io::Write>(
    writer: W,
    demand: &[Request],
    network: &RoadNetwork,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "origin_node", "dest_node"])?;
    for r in demand {
        w.write_record([
            r.time_s.to_string(),
            network.id(r.origin).to_string(),
            network.id(r.dest).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Poisson arrivals per time step; origins pick a region by weight and then
/// a node of that region uniformly, destinations are uniform over usable nodes.
pub fn generate_demand(scenario: &Scenario, seed: u64) -> Result<Vec<Request>> {
    let cfg = &scenario.config;
    let nodes = scenario.usable_nodes();
    if nodes.is_empty() || cfg.demand.rate_per_hour == 0.0 {
        return Ok(Vec::new());
    }
    let m = scenario.stations();
    let mut by_region: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &v in &nodes {
        if let Some(k) = scenario.region[v] {
            by_region[k].push(v);
        }
    }
    let weights: Vec<f64> = match &cfg.demand.region_weights {
        Some(w) => (0..m)
            .map(|k| if by_region[k].is_empty() { 0.0 } else { w[k] })
            .collect(),
        None => by_region.iter().map(|r| r.len() as f64).collect(),
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter(
            "every weighted region is empty".into(),
        ));
    }
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = cfg.sim.step_s;
    let lambda = cfg.demand.rate_per_hour * dt / 3600.0;
    let poisson = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let steps = (cfg.sim.duration_s / dt).ceil() as usize;
    let mut out = Vec::new();
    for s in 0..steps {
        let t0 = s as f64 * dt;
        let count = poisson.sample(&mut rng) as usize;
        let mut times: Vec<f64> = (0..count).map(|_| t0 + rng.random::<f64>() * dt).collect();
        times.sort_by(f64::total_cmp);
        for time_s in times {
            let k = pick.sample(&mut rng);
            let origin = by_region[k][rng.random_range(0..by_region[k].len())];
            let dest = nodes[rng.random_range(0..nodes.len())];
            out.push(Request {
                time_s,
                origin,
                dest,
            });
        }
    }
    Ok(out)
}

/// Fleet state at the end of the operating period.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub stations: usize,
    pub companies: usize,
    pub vehicles: Vec<VehicleState>,
    pub served: usize,
    pub unserved: usize,
    /// Mean space speed over the period, km/h.
    pub mean_speed: f64,
}

impl Snapshot {
    /// Vehicles below their threshold, as snapshot indices per company.
    pub fn charging_vehicles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.companies];
        for (idx, v) in self.vehicles.iter().enumerate() {
            if v.needs_charge() {
                out[v.company].push(idx);
            }
        }
        out
    }

    /// `N_i` per company.
    pub fn counts(&self) -> Vec<usize> {
        self.charging_vehicles().iter().map(Vec::len).collect()
    }

    /// Rows `company,node,battery,needs_charge` with external node ids.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, network: &RoadNetwork) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["company", "node", "battery", "needs_charge"])?;
        for v in &self.vehicles {
            w.write_record([
                v.company.to_string(),
                network.id(v.node).to_string(),
                format!("{:.6}", v.battery),
                (v.needs_charge() as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Idle,
    Busy { remaining_km: f64, dest: usize },
}

/// Initial fleet: uniform start node, battery and threshold per vehicle.
pub fn initial_fleet(scenario: &Scenario, seed: u64) -> Result<Vec<VehicleState>> {
    let cfg = &scenario.config;
    let nodes = scenario.usable_nodes();
    if nodes.is_empty() {
        return Err(Error::InvalidParameter(
            "no node is connected to every station".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [b0, b1] = cfg.fleet.initial_battery;
    let [t0, t1] = cfg.fleet.threshold;
    let mut out = Vec::new();
    for (company, &size) in cfg.fleet.sizes.iter().enumerate() {
        for _ in 0..size {
            let node = nodes[rng.random_range(0..nodes.len())];
            let battery = b0 + (b1 - b0) * rng.random::<f64>();
            let threshold = t0 + (t1 - t0) * rng.random::<f64>();
            out.push(VehicleState {
                company,
                node,
                battery,
                start_battery: battery,
                max_range_km: cfg.fleet.max_range_km,
                threshold,
                beta: cfg.fleet.beta,
            });
        }
    }
    Ok(out)
}

/// Runs the operating period.
///
/// Each step first computes the regional speed from the accumulation (busy
/// fleet vehicles, private trips of unserved requests and the background),
/// then matches the step's requests in arrival order to the nearest idle
/// vehicle that can arrive within the pickup limit, then moves every busy
/// vehicle and private trip. Idle vehicles stay put and do not drain.
pub fn simulate_period(scenario: &Scenario, seed: u64) -> Result<Snapshot> {
    let cfg = &scenario.config;
    let net = &scenario.network;
    let mut vehicles = initial_fleet(scenario, derive_seed(seed, STREAM_FLEET))?;
    let mut tasks = vec![Task::Idle; vehicles.len()];
    let mut private: Vec<f64> = Vec::new();
    let dt = cfg.sim.step_s;
    let dt_h = dt / 3600.0;
    let steps = (cfg.sim.duration_s / dt).ceil() as usize;
    let limit_h = cfg.sim.pickup_limit_s / 3600.0;
    let (mut served, mut unserved) = (0, 0);
    let mut speed_sum = 0.0;
    let mut next = 0;
    for s in 0..steps {
        let t_end = (s + 1) as f64 * dt;
        let busy = tasks
            .iter()
            .filter(|t| matches!(t, Task::Busy { .. }))
            .count();
        let n = cfg.sim.background_accumulation
            + busy as f64
            + cfg.sim.private_vehicle_weight * private.len() as f64;
        let speed = mfd_speed(n)?;
        speed_sum += speed;
        let reach_km = speed * limit_h;
        while next < scenario.demand.len() && scenario.demand[next].time_s < t_end {
            let r = scenario.demand[next];
            next += 1;
            let trip = net.distance(r.origin, r.dest);
            if !trip.is_finite() {
                unserved += 1;
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (idx, v) in vehicles.iter().enumerate() {
                if !matches!(tasks[idx], Task::Idle) || v.battery < cfg.fleet.reserve {
                    continue;
                }
                let d = net.distance(v.node, r.origin);
                if d <= reach_km && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((idx, d));
                }
            }
            match best {
                Some((idx, d)) if speed > 0.0 => {
                    tasks[idx] = Task::Busy {
                        remaining_km: d + trip,
                        dest: r.dest,
                    };
                    served += 1;
                }
                _ => {
                    unserved += 1;
                    if trip > 0.0 {
                        private.push(trip);
                    }
                }
            }
        }
        let step_km = speed * dt_h;
        for (idx, task) in tasks.iter_mut().enumerate() {
            if let Task::Busy { remaining_km, dest } = task {
                let km = remaining_km.min(step_km);
                drain(&mut vehicles[idx], km);
                *remaining_km -= km;
                if *remaining_km <= 0.0 {
                    vehicles[idx].node = *dest;
                    *task = Task::Idle;
                }
            }
        }
        for p in &mut private {
            *p -= step_km;
        }
        private.retain(|&p| p > 0.0);
    }
    // vehicles still on a trip are reported at their drop-off node
    for (idx, task) in tasks.iter().enumerate() {
        if let Task::Busy { dest, .. } = task {
            vehicles[idx].node = *dest;
        }
    }
    Ok(Snapshot {
        stations: scenario.stations(),
        companies: cfg.companies(),
        vehicles,
        served,
        unserved,
        mean_speed: if steps == 0 {
            0.0
        } else {
            speed_sum / steps as f64
        },
    })
}
