//! Flat key-value configuration file (TOML syntax) mapped onto the
//! per-module config structs. Every key is optional; missing keys fall back
//! to the built-in defaults.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::gp::KernelConfig;
use crate::grid::GridConfig;
use crate::pipeline::{InitialGuessMode, PipelineConfig};
use crate::registration::MatchConfig;

/// Everything the `run` pipeline needs, bundled.
#[derive(Clone, Debug, Default)]
pub struct SystemConfig {
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub matching: MatchConfig,
    pub pipeline: PipelineConfig,
}

/// Raw file schema: a flat list of scalar keys.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    // grid
    cell_side_a: Option<f64>,
    test_interval_r: Option<f64>,
    min_points: Option<usize>,
    planarity_ratio: Option<f64>,
    normal_threshold: Option<f64>,
    // kernel; `sigma` is the noise standard deviation in meters,
    // stored internally as its square.
    kappa: Option<f64>,
    sigma: Option<f64>,
    jitter: Option<f64>,
    variance_includes_noise: Option<bool>,
    // matching / alignment
    sigma2_thr: Option<f64>,
    max_outer_iters: Option<usize>,
    max_inner_iters: Option<usize>,
    pose_epsilon_trans: Option<f64>,
    pose_epsilon_rot: Option<f64>,
    huber_delta: Option<f64>,
    // pipeline
    refine_batch: Option<usize>,
    refine_enabled: Option<bool>,
    core_outer_iters: Option<usize>,
    refine_outer_iters: Option<usize>,
    initial_guess_mode: Option<String>,
    queue_capacity: Option<usize>,
}

impl SystemConfig {
    // Named like the trait method on purpose; the fallible signature differs.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<SystemConfig> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = SystemConfig::default();

        let g = &mut cfg.grid;
        set(&mut g.cell_side_a, raw.cell_side_a);
        set(&mut g.test_interval_r, raw.test_interval_r);
        set(&mut g.min_points, raw.min_points);
        set(&mut g.planarity_ratio, raw.planarity_ratio);
        set(&mut g.normal_threshold, raw.normal_threshold);

        let k = &mut cfg.kernel;
        // Default correlation length is two lattice steps, so kappa follows
        // the test interval unless explicitly set.
        k.kappa = raw.kappa.unwrap_or(0.5 / cfg.grid.test_interval_r);
        if let Some(s) = raw.sigma {
            if s <= 0.0 {
                return Err(Error::Config("sigma must be positive".into()));
            }
            k.sigma2 = s * s;
        }
        set(&mut k.jitter, raw.jitter);
        set(&mut k.variance_includes_noise, raw.variance_includes_noise);

        let m = &mut cfg.matching;
        set(&mut m.sigma2_thr, raw.sigma2_thr);
        set(&mut m.max_outer_iters, raw.max_outer_iters);
        set(&mut m.max_inner_iters, raw.max_inner_iters);
        set(&mut m.pose_epsilon_trans, raw.pose_epsilon_trans);
        set(&mut m.pose_epsilon_rot, raw.pose_epsilon_rot);
        set(&mut m.huber_delta, raw.huber_delta);

        let p = &mut cfg.pipeline;
        set(&mut p.refine_batch, raw.refine_batch);
        set(&mut p.refine_enabled, raw.refine_enabled);
        set(&mut p.core_outer_iters, raw.core_outer_iters);
        set(&mut p.refine_outer_iters, raw.refine_outer_iters);
        set(&mut p.queue_capacity, raw.queue_capacity);
        if let Some(mode) = raw.initial_guess_mode {
            p.initial_guess_mode = match mode.as_str() {
                "identity" => InitialGuessMode::Identity,
                "constant_velocity" => InitialGuessMode::ConstantVelocity,
                other => {
                    return Err(Error::Config(format!(
                        "unknown initial_guess_mode '{other}' \
                         (expected 'identity' or 'constant_velocity')"
                    )))
                }
            };
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<SystemConfig> {
        SystemConfig::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.kernel.validate()?;
        if self.matching.sigma2_thr <= 0.0 {
            return Err(Error::Config("sigma2_thr must be positive".into()));
        }
        if self.matching.max_outer_iters == 0 || self.matching.max_inner_iters == 0 {
            return Err(Error::Config("iteration budgets must be >= 1".into()));
        }
        if self.pipeline.refine_batch == 0 {
            return Err(Error::Config("refine_batch must be >= 1".into()));
        }
        if self.pipeline.queue_capacity == 0 {
            return Err(Error::Config("queue_capacity must be >= 1".into()));
        }
        Ok(())
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}
