//! Run configuration shared by all subcommands.

use std::path::{Path, PathBuf};

use gpmpc_core::controller::ControllerConfig;
use gpmpc_quadsim::reference::{Lemniscate, RandomSplineConfig};
use gpmpc_quadsim::QuadParams;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::variant::Variant;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Vehicle parameter file; the embedded Crazyflie set when absent.
    pub params: Option<PathBuf>,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub sweep: SweepConfig,
}

/// Selected controller settings layered over the quadrotor defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerOverrides {
    pub horizon: Option<usize>,
    pub p_x: Option<f64>,
    pub eps_lpv: Option<f64>,
    pub max_iters: Option<usize>,
    pub quad_nodes: Option<usize>,
    pub rti: Option<bool>,
    pub input_reference: Option<Vec<f64>>,
}

impl ControllerOverrides {
    pub fn apply(&self, cfg: &mut ControllerConfig) -> Result<()> {
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.p_x {
            cfg.p_x = v;
        }
        if let Some(v) = self.eps_lpv {
            cfg.eps_lpv = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.quad_nodes {
            cfg.quad_nodes = v;
        }
        if let Some(v) = self.rti {
            cfg.rti = v;
        }
        if let Some(v) = &self.input_reference {
            cfg.input_reference = Some(v.clone());
        }
        cfg.normalize().map_err(|e| BenchError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub duration: f64,
    /// Per-axis variance of the acceleration disturbance (m²/s⁴).
    pub disturbance_var: f64,
    pub aero: bool,
    pub spline: RandomSplineConfig,
    pub controller: ControllerOverrides,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            duration: 60.0,
            disturbance_var: 0.1,
            aero: true,
            spline: RandomSplineConfig::default(),
            controller: ControllerOverrides::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Relative paths resolve against the output directory.
    pub dataset: PathBuf,
    pub inducing: usize,
    pub shared_inducing: bool,
    pub optimize_inducing: bool,
    pub max_iters: usize,
    /// Optimizer starts per output; the lowest bound is kept.
    pub restarts: usize,
    /// Evenly thins the dataset to at most this many samples.
    pub max_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::from("dataset.csv"),
            inducing: 4,
            shared_inducing: false,
            optimize_inducing: true,
            max_iters: 400,
            restarts: 4,
            max_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Relative paths resolve against the output directory.
    pub model: PathBuf,
    pub variants: Vec<Variant>,
    pub duration: f64,
    pub aero: bool,
    pub disturbance_var: f64,
    pub lemniscate: Lemniscate,
    /// Start on the reference at its initial velocity instead of at rest.
    pub start_on_reference: bool,
    pub controller: ControllerOverrides,
    /// Simulations run concurrently; keep 1 when timings matter.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: PathBuf::from("model.json"),
            variants: vec![
                Variant::Baseline,
                "lpv-mm-precov".parse().expect("valid tag"),
            ],
            duration: 10.0,
            aero: true,
            disturbance_var: 0.0,
            lemniscate: Lemniscate::default(),
            start_on_reference: true,
            controller: ControllerOverrides::default(),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub inducing: Vec<usize>,
    pub variant: Variant,
    /// Relative slack allowed when checking that solve time does not decrease with M.
    pub time_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            inducing: vec![1, 2, 4, 8, 16],
            variant: "lpv-mm-precov".parse().expect("valid tag"),
            time_tolerance: 0.05,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if !(self.collect.duration > 0.0 && self.bench.duration > 0.0) {
            return bad("durations must be positive");
        }
        if self.collect.disturbance_var < 0.0 || self.bench.disturbance_var < 0.0 {
            return bad("disturbance variances must be non-negative");
        }
        if self.train.inducing == 0 || self.sweep.inducing.iter().any(|&m| m == 0) {
            return bad("inducing-point counts must be positive");
        }
        if self.train.restarts == 0 {
            return bad("train.restarts must be at least 1");
        }
        if self.bench.variants.is_empty() {
            return bad("bench.variants is empty");
        }
        if self.bench.workers == 0 {
            return bad("bench.workers must be at least 1");
        }
        Ok(())
    }

    pub fn quad_params(&self) -> Result<QuadParams> {
        match &self.params {
            Some(p) => QuadParams::load(p).map_err(|e| BenchError::Config(format!("{}: {e}", p.display()))),
            None => Ok(QuadParams::crazyflie()),
        }
    }

    /// Canonical text of the effective configuration (defaults filled in).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Absolute paths are kept; relative ones are taken inside `out`.
pub fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}
