//! Run configuration: one TOML file selects the robot, controller, format
//! or search constraints, simulation settings, and hardware model.

use anyhow::{bail, Context, Result};
use rbdq_core::control::{ControllerConfig, LqrConfig, MpcConfig, PidConfig};
use rbdq_core::hw::{DspCostTable, DspFamily, MinvAlgo, DEFAULT_REUSABLE_FRAC};
use rbdq_core::{FxpFormat, RobotModel, SearchConstraints, SimConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub robot: RobotSection,
    #[serde(default)]
    pub controller: Option<ControllerSection>,
    #[serde(default)]
    pub format: Option<FormatSection>,
    #[serde(default)]
    pub search: Option<SearchConstraints>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub hw: Option<HwSection>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSection {
    pub urdf: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSection {
    /// Fixed-point format, `Qi.f`.
    pub fixed: String,
}

/// Controller selection with scalar gains broadcast across joints.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSection {
    Pid {
        #[serde(default = "d_kp")]
        kp: f64,
        #[serde(default = "d_ki")]
        ki: f64,
        #[serde(default = "d_kd")]
        kd: f64,
        #[serde(default = "d_clamp")]
        integral_clamp: f64,
        #[serde(default = "d_dt")]
        dt: f64,
    },
    Lqr {
        #[serde(default = "d_qpos_lqr")]
        q_pos: f64,
        #[serde(default = "d_qvel_lqr")]
        q_vel: f64,
        #[serde(default = "d_r_lqr")]
        r: f64,
        #[serde(default = "d_dt")]
        dt: f64,
    },
    Mpc {
        #[serde(default = "d_horizon")]
        horizon: usize,
        #[serde(default = "d_iters")]
        iterations: usize,
        #[serde(default = "d_dt_mpc")]
        dt: f64,
        #[serde(default = "d_qpos_mpc")]
        q_pos: f64,
        #[serde(default = "d_qvel_mpc")]
        q_vel: f64,
        #[serde(default = "d_rtau")]
        r_tau: f64,
        #[serde(default = "d_terminal")]
        terminal_scale: f64,
    },
}

fn d_kp() -> f64 {
    60.0
}
fn d_ki() -> f64 {
    5.0
}
fn d_kd() -> f64 {
    14.0
}
fn d_clamp() -> f64 {
    1.0
}
fn d_dt() -> f64 {
    1e-3
}
fn d_qpos_lqr() -> f64 {
    400.0
}
fn d_qvel_lqr() -> f64 {
    4.0
}
fn d_r_lqr() -> f64 {
    0.01
}
fn d_horizon() -> usize {
    10
}
fn d_iters() -> usize {
    10
}
fn d_dt_mpc() -> f64 {
    5e-3
}
fn d_qpos_mpc() -> f64 {
    200.0
}
fn d_qvel_mpc() -> f64 {
    2.0
}
fn d_rtau() -> f64 {
    1e-3
}
fn d_terminal() -> f64 {
    10.0
}

impl ControllerSection {
    pub fn resolve(&self, n: usize) -> ControllerConfig {
        match *self {
            ControllerSection::Pid { kp, ki, kd, integral_clamp, dt } => {
                ControllerConfig::Pid(PidConfig {
                    kp: vec![kp; n],
                    ki: vec![ki; n],
                    kd: vec![kd; n],
                    integral_clamp,
                    dt,
                })
            }
            ControllerSection::Lqr { q_pos, q_vel, r, dt } => {
                let mut q_diag = vec![q_pos; 2 * n];
                for v in q_diag.iter_mut().skip(n) {
                    *v = q_vel;
                }
                ControllerConfig::Lqr(LqrConfig {
                    q_diag,
                    r_diag: vec![r; n],
                    dt,
                    riccati_max_iters: 20_000,
                    riccati_tol: 1e-10,
                })
            }
            ControllerSection::Mpc {
                horizon,
                iterations,
                dt,
                q_pos,
                q_vel,
                r_tau,
                terminal_scale,
            } => ControllerConfig::Mpc(MpcConfig {
                horizon,
                dt,
                iterations,
                q_pos,
                q_vel,
                r_tau,
                terminal_scale,
                reg_floor: 1e-6,
                blowup_norm: 1e8,
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwSection {
    pub family: DspFamily,
    pub budget: u64,
    pub stage_depth: u64,
    pub divider_depth: u64,
    pub fifo_depth: u64,
    pub reusable_frac: f64,
    pub clock_hz: f64,
    pub minv: MinvAlgo,
    /// Sweep range for the control-rate table.
    pub horizon_max: usize,
    pub iterations: usize,
    /// Cost-table overrides: (family, width, cost) triples.
    pub cost_table: Vec<(DspFamily, u32, u32)>,
}

impl Default for HwSection {
    fn default() -> Self {
        Self {
            family: DspFamily::Dsp58,
            budget: 5073,
            stage_depth: 6,
            divider_depth: 20,
            fifo_depth: 4,
            reusable_frac: DEFAULT_REUSABLE_FRAC,
            clock_hz: 228e6,
            minv: MinvAlgo::Deferred,
            horizon_max: 64,
            iterations: 10,
            cost_table: Vec::new(),
        }
    }
}

impl HwSection {
    pub fn table(&self) -> DspCostTable {
        let mut t = DspCostTable::default();
        for &(family, width, cost) in &self.cost_table {
            t = t.with_entry(family, width, cost);
        }
        t
    }
}

pub struct Loaded {
    pub config: RunConfig,
    pub model: RobotModel,
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Loaded> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(s) = seed {
            config.seed = s;
            if let rbdq_core::sim::SampleSource::Seed { seed } = &mut config.sim.source {
                *seed = s;
            }
        } else if let rbdq_core::sim::SampleSource::Seed { seed } = &mut config.sim.source {
            if *seed == 0 {
                *seed = config.seed;
            }
        }
        if let Some(o) = out {
            config.out_dir = o;
        }
        if config.format.is_some() && config.search.is_some() {
            bail!("config error in field `format`/`search`: exactly one of the two must be present");
        }
        // resolve the URDF path relative to the config file
        let urdf_path = if config.robot.urdf.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(&config.robot.urdf)
        } else {
            config.robot.urdf.clone()
        };
        let urdf = std::fs::read_to_string(&urdf_path)
            .with_context(|| format!("field `robot.urdf`: reading {}", urdf_path.display()))?;
        let model = rbdq_core::parse_urdf(&urdf)
            .with_context(|| format!("field `robot.urdf`: parsing {}", urdf_path.display()))?;
        Ok(Loaded { config, model })
    }

    pub fn fixed_format(&self) -> Result<FxpFormat> {
        let Some(f) = &self.format else {
            bail!("config error: field `format.fixed` is required for this command");
        };
        f.fixed
            .parse::<FxpFormat>()
            .with_context(|| format!("field `format.fixed`: {:?}", f.fixed))
    }

    pub fn controller(&self, n: usize) -> ControllerConfig {
        match &self.controller {
            Some(c) => c.resolve(n),
            None => ControllerConfig::Pid(PidConfig::default_for(n)),
        }
    }
}
