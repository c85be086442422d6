//! Run configuration: JSON file, flag overrides and conversion to solver inputs.

use std::path::{Path, PathBuf};

use hydroctrl_core::dno::DnoConfig;
use hydroctrl_core::evolution::{default_dt, StepperConfig};
use hydroctrl_core::hum::ControlProblem;
use hydroctrl_core::hydro::PhysParams;
use hydroctrl_core::{Depth, GridSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    /// `None` for infinite depth.
    pub depth: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 64, depth: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub g: f64,
    pub sigma: f64,
    pub expansion_order: usize,
    pub fd_epsilon: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        let dno = DnoConfig::default();
        PhysicsConfig {
            g: 1.0,
            sigma: 1.0,
            expansion_order: dno.expansion_order,
            fd_epsilon: dno.fd_epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub omega: Vec<[f64; 2]>,
    pub transition: f64,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    pub newton_tol: f64,
    pub newton_maxiter: usize,
    pub smoothing_offset: u32,
    pub tikhonov: bool,
    pub smallness: f64,
    pub smallness_index: f64,
    /// Success threshold for the re-simulated linear final error.
    pub certify_tol: f64,
    /// Number of seeded random initial states in linear mode.
    pub targets: usize,
    /// Linearize around the trajectory of the initial state instead of rest.
    pub nonflat_background: bool,
    /// Repeat every linear run at half the step and report the control constants.
    pub check_refinement: bool,
    /// Amplitudes for the first-iterate sweep in nonlinear mode.
    pub delta_sweep: Vec<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let p = ControlProblem::default();
        ControlConfig {
            omega: p.omega.iter().map(|&(a, b)| [a, b]).collect(),
            transition: p.transition,
            cg_tol: p.cg_tol,
            cg_maxiter: p.cg_maxiter,
            newton_tol: p.newton_tol,
            newton_maxiter: p.newton_maxiter,
            smoothing_offset: p.smoothing_offset,
            tikhonov: p.tikhonov,
            smallness: p.smallness,
            smallness_index: p.smallness_index,
            certify_tol: 1e-6,
            targets: 1,
            nonflat_background: false,
            check_refinement: false,
            delta_sweep: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InghamConfig {
    pub n_max: usize,
    pub trials: usize,
    pub points_per_period: usize,
    /// Normalization `m` in `𝔱(n)`.
    pub m: f64,
}

impl Default for InghamConfig {
    fn default() -> Self {
        InghamConfig {
            n_max: 40,
            trials: 200,
            points_per_period: 20,
            m: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    /// Stored trajectory to analyse; simulated from the initial state when absent.
    pub trajectory: Option<PathBuf>,
    /// Sample index for the stage diagnostics; the middle sample when absent.
    pub sample: Option<usize>,
    /// Perturbation added to one coefficient to exercise the failure path.
    pub fault: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            trajectory: None,
            sample: None,
            fault: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub horizon: f64,
    pub dt: Option<f64>,
    pub initial_state: Option<PathBuf>,
    pub target_state: Option<PathBuf>,
    /// `ℋ^s` size (with `s = control.smallness_index`) of seeded random initial data.
    pub amplitude: f64,
    /// Highest mode in seeded random data.
    pub mode_cutoff: i64,
    /// Also run at `dt/2` and `dt/4` and report the self-convergence order.
    pub check_order: bool,
    pub control: ControlConfig,
    pub ingham: InghamConfig,
    pub reduction: ReductionConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig::default(),
            physics: PhysicsConfig::default(),
            horizon: 1.0,
            dt: None,
            initial_state: None,
            target_state: None,
            amplitude: 0.0,
            mode_cutoff: 3,
            check_order: false,
            control: ControlConfig::default(),
            ingham: InghamConfig::default(),
            reduction: ReductionConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), Failure> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Failure::config(format!(
                "override key {key}: {part} is not inside an object"
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Failure::config(format!("empty override key {key:?}")))
}

/// Parse `KEY=VALUE`; the value is read as JSON and falls back to a plain string.
pub fn parse_override(text: &str) -> Result<(String, Value), Failure> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("override {text:?} is not KEY=VALUE")))?;
    if key.trim().is_empty() {
        return Err(Failure::config(format!(
            "override {text:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    /// Read the config file (defaults when absent), apply overrides and flags, validate.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<RunConfig, Failure> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Failure::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str::<Value>(&text).map_err(|e| {
                    Failure::config(format!("config {} is not valid JSON: {e}", p.display()))
                })?
            }
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(Failure::config("config must be a JSON object"));
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut value, &k, v)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Failure::config(format!("invalid config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out = o.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        GridSpec::new(self.grid.n, self.depth())?;
        self.params().validate()?;
        self.dno().validate()?;
        self.problem().validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Failure::config("horizon must be positive"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt <= self.horizon) {
                return Err(Failure::config("dt must lie in (0, horizon]"));
            }
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Failure::config("amplitude must be non-negative"));
        }
        if self.mode_cutoff < 1 || self.mode_cutoff as usize >= self.grid.n / 2 {
            return Err(Failure::config("mode_cutoff must lie in [1, n/2)"));
        }
        if !(self.control.certify_tol > 0.0) || self.control.targets == 0 {
            return Err(Failure::config("certify_tol and targets must be positive"));
        }
        if self.control.delta_sweep.iter().any(|d| !(*d > 0.0)) {
            return Err(Failure::config("delta_sweep entries must be positive"));
        }
        if self.ingham.n_max == 0 || self.ingham.trials == 0 || !(self.ingham.m > 0.0) {
            return Err(Failure::config(
                "ingham n_max, trials and m must be positive",
            ));
        }
        Ok(())
    }

    pub fn depth(&self) -> Depth {
        self.grid.depth.map_or(Depth::Infinite, Depth::Finite)
    }

    pub fn params(&self) -> PhysParams {
        PhysParams {
            g: self.physics.g,
            sigma: self.physics.sigma,
            depth: self.depth(),
        }
    }

    pub fn dno(&self) -> DnoConfig {
        DnoConfig {
            expansion_order: self.physics.expansion_order,
            fd_epsilon: self.physics.fd_epsilon,
        }
    }

    pub fn step(&self) -> f64 {
        self.dt
            .unwrap_or_else(|| default_dt(self.grid.n, &self.params(), self.horizon))
    }

    pub fn stepper(&self) -> StepperConfig {
        StepperConfig { dt: self.step() }
    }

    pub fn problem(&self) -> ControlProblem {
        let c = &self.control;
        ControlProblem {
            horizon: self.horizon,
            omega: c.omega.iter().map(|w| (w[0], w[1])).collect(),
            transition: c.transition,
            cg_tol: c.cg_tol,
            cg_maxiter: c.cg_maxiter,
            newton_tol: c.newton_tol,
            newton_maxiter: c.newton_maxiter,
            smoothing_offset: c.smoothing_offset,
            tikhonov: c.tikhonov,
            smallness: c.smallness,
            smallness_index: c.smallness_index,
        }
    }
}
