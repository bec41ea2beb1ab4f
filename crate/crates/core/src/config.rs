//! TOML scenario and experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Base seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    pub network: NetworkConfig,
    pub stations: Vec<StationConfig>,
    pub fleet: FleetConfig,
    #[serde(default)]
    pub demand: DemandConfig,
    #[serde(default)]
    pub sim: SimConfig,
    pub region: RegionConfig,
    #[serde(default)]
    pub government: GovernmentConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub path: Option<PathBuf>,
    pub grid: Option<GridConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub node: u64,
    pub capacity: f64,
    pub queue_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub sizes: Vec<usize>,
    #[serde(default = "default_initial_battery")]
    pub initial_battery: [f64; 2],
    #[serde(default = "default_threshold")]
    pub threshold: [f64; 2],
    pub max_range_km: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Vehicles below this level stop accepting rides.
    #[serde(default = "default_reserve")]
    pub reserve: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    /// CSV with `time_s,origin_node,dest_node`; overrides the generator.
    pub path: Option<PathBuf>,
    /// Poisson arrival rate of the generator.
    #[serde(default)]
    pub rate_per_hour: f64,
    /// Relative request intensity of each station's region; uniform over
    /// nodes when absent.
    pub region_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_step")]
    pub step_s: f64,
    #[serde(default = "default_pickup")]
    pub pickup_limit_s: f64,
    /// Vehicles in the region besides the fleets and served-by-car trips.
    #[serde(default)]
    pub background_accumulation: f64,
    /// Accumulation added per unserved request while its private trip lasts.
    #[serde(default = "one")]
    pub private_vehicle_weight: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration_s: default_duration(),
            step_s: default_step(),
            pickup_limit_s: default_pickup(),
            background_accumulation: 0.0,
            private_vehicle_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    /// Probability `P_k` that a vehicle near station `k` is occupied.
    pub occupancy: Vec<f64>,
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// Value of one occupied km, per company or one value for all.
    #[serde(default = "default_idle_cost")]
    pub idle_cost: Vec<f64>,
    #[serde(default = "default_t_daily")]
    pub t_daily: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_v_bar")]
    pub v_bar: f64,
    /// Half-width of the uniform noise on expected profits.
    #[serde(default = "default_profit_noise")]
    pub profit_noise: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernmentConfig {
    /// `A_G = weight_scale · Q`.
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
}

impl Default for GovernmentConfig {
    fn default() -> Self {
        Self {
            weight_scale: default_weight_scale(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Rsg,
    FixedPrice,
    GridSearch,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Rsg => "rsg",
            Mechanism::FixedPrice => "fixed-price",
            Mechanism::GridSearch => "grid-search",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPrices {
    pub name: String,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    /// Prices for the fixed-price mechanism.
    pub prices: Option<Vec<f64>>,
    /// Uniform price of the do-nothing baseline.
    #[serde(default = "default_base_price")]
    pub base_price: f64,
    /// Further fixed price vectors reported next to the search result.
    #[serde(default)]
    pub extra_prices: Vec<NamedPrices>,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_refine")]
    pub refine: bool,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    #[serde(default)]
    pub robustness: bool,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Lower bound on surge prices, one value for all stations.
    #[serde(default)]
    pub rho_min: f64,
    #[serde(default = "default_margin")]
    pub surge_margin: f64,
    #[serde(default = "default_budget")]
    pub surge_budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mechanism: default_mechanism(),
            prices: None,
            base_price: default_base_price(),
            extra_prices: Vec::new(),
            p_max: default_p_max(),
            resolution: default_resolution(),
            refine: default_refine(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            step_fraction: default_step_fraction(),
            robustness: false,
            alphas: default_alphas(),
            samples: default_samples(),
            rho_min: 0.0,
            surge_margin: default_margin(),
            surge_budget: default_budget(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_initial_battery() -> [f64; 2] {
    [90.0, 95.0]
}
fn default_threshold() -> [f64; 2] {
    [55.0, 60.0]
}
fn default_reserve() -> f64 {
    15.0
}
fn default_duration() -> f64 {
    3.0 * 3600.0
}
fn default_step() -> f64 {
    30.0
}
fn default_pickup() -> f64 {
    600.0
}
fn default_phi() -> f64 {
    300.0
}
fn default_idle_cost() -> Vec<f64> {
    vec![1.0]
}
fn default_t_daily() -> f64 {
    8.0
}
fn default_tau() -> f64 {
    2.0
}
fn default_v_bar() -> f64 {
    20.0
}
fn default_profit_noise() -> f64 {
    10.0
}
fn default_weight_scale() -> f64 {
    2.5
}
fn default_mechanism() -> Mechanism {
    Mechanism::Rsg
}
fn default_base_price() -> f64 {
    3.0
}
fn default_p_max() -> f64 {
    5.0
}
fn default_resolution() -> usize {
    9
}
fn default_refine() -> bool {
    true
}
fn default_max_iter() -> usize {
    crate::equilibrium::DEFAULT_MAX_ITER
}
fn default_tol() -> f64 {
    crate::equilibrium::DEFAULT_TOL
}
fn default_step_fraction() -> f64 {
    crate::equilibrium::DEFAULT_STEP_FRACTION
}
fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.15, 0.25, 0.35]
}
fn default_samples() -> usize {
    100
}
fn default_margin() -> f64 {
    crate::surge::DEFAULT_MARGIN
}
fn default_budget() -> usize {
    20_000
}

/// Independent seed for a named random stream of the base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_NETWORK: u64 = 1;
pub const STREAM_DEMAND: u64 = 2;
pub const STREAM_FLEET: u64 = 3;
pub const STREAM_ESTIMATE: u64 = 4;
pub const STREAM_SURGE: u64 = 5;
pub const STREAM_ROBUSTNESS: u64 = 6;

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn stations(&self) -> usize {
        self.stations.len()
    }

    pub fn companies(&self) -> usize {
        self.fleet.sizes.len()
    }

    /// `u_i` for company `i`.
    pub fn idle_cost(&self, i: usize) -> f64 {
        let u = &self.region.idle_cost;
        if u.len() == 1 {
            u[0]
        } else {
            u[i]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.stations();
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if m == 0 {
            return bad("no stations configured".into());
        }
        match (&self.network.path, &self.network.grid) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("network needs exactly one of `path` or `grid`".into()),
        }
        if self.fleet.sizes.is_empty() {
            return bad("no companies configured".into());
        }
        let [b0, b1] = self.fleet.initial_battery;
        let [t0, t1] = self.fleet.threshold;
        if !(0.0 <= b0 && b0 <= b1 && b1 <= 100.0) || !(0.0 <= t0 && t0 <= t1 && t1 <= 100.0) {
            return bad("battery and threshold ranges must be ordered within [0, 100]".into());
        }
        if !(self.fleet.max_range_km > 0.0) || !(self.fleet.beta > 0.0) {
            return bad("max range and beta must be positive".into());
        }
        if !(self.sim.step_s > 0.0)
            || !(self.sim.duration_s >= 0.0)
            || !(self.sim.pickup_limit_s >= 0.0)
        {
            return bad("simulation times must be positive".into());
        }
        if !(self.sim.background_accumulation >= 0.0) || !(self.sim.private_vehicle_weight >= 0.0) {
            return bad("accumulation terms must be nonnegative".into());
        }
        if self.region.occupancy.len() != m {
            return bad(format!(
                "occupancy has {} entries for {m} stations",
                self.region.occupancy.len()
            ));
        }
        if self
            .region
            .occupancy
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("occupancy probabilities must lie in [0, 1]".into());
        }
        let u = self.region.idle_cost.len();
        if u != 1 && u != self.companies() {
            return bad(format!("idle_cost needs 1 or {} entries", self.companies()));
        }
        if !(self.region.t_daily > 0.0) || !(self.region.profit_noise >= 0.0) {
            return bad("t_daily must be positive and profit_noise nonnegative".into());
        }
        if let Some(w) = &self.demand.region_weights {
            if w.len() != m || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad(
                    "region_weights needs one nonnegative weight per station, not all zero".into(),
                );
            }
        }
        if !(self.demand.rate_per_hour >= 0.0) {
            return bad("demand rate must be nonnegative".into());
        }
        if !(self.government.weight_scale > 0.0) {
            return bad("government weight scale must be positive".into());
        }
        let e = &self.experiment;
        if e.mechanism == Mechanism::GridSearch && e.resolution < 2 {
            return bad("grid search needs at least 2 points per axis".into());
        }
        if e.mechanism == Mechanism::FixedPrice && e.prices.as_ref().is_none_or(|p| p.len() != m) {
            return bad(format!(
                "fixed-price mechanism needs `prices` with {m} entries"
            ));
        }
        for np in &e.extra_prices {
            if np.prices.len() != m {
                return bad(format!("price vector `{}` needs {m} entries", np.name));
            }
        }
        if !(e.p_max > 0.0) || !(e.tol > 0.0) || !(e.step_fraction > 0.0 && e.step_fraction < 1.0) {
            return bad("p_max, tol must be positive and step_fraction in (0, 1)".into());
        }
        Ok(())
    }
}
