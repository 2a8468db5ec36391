//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coupled_diffusion::evolution::{PicardParams, SchemeKind, StepScheme, TimeStep};
use coupled_diffusion::KernelFamily;

use crate::CliError;

/// Either a number or the literal `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AutoOr {
    Auto,
    Value(f64),
}

impl AutoOr {
    fn render(self) -> String {
        match self {
            AutoOr::Auto => "auto".into(),
            AutoOr::Value(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Constant,
    Step,
    Cosine,
    Gaussian,
    File,
}

impl InitKind {
    fn name(self) -> &'static str {
        match self {
            InitKind::Constant => "constant",
            InitKind::Step => "step",
            InitKind::Cosine => "cosine",
            InitKind::Gaussian => "gaussian",
            InitKind::File => "file",
        }
    }
}

/// Initial profile settings. Only the fields relevant to `kind` are used.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub kind: InitKind,
    /// Level of a constant profile.
    pub value: f64,
    /// Step profile: `u = left` on the local side, `v = right` on the nonlocal side.
    pub left: f64,
    pub right: f64,
    /// Cosine profile `offset + amplitude cos(mode pi (x + 1) / 2)`.
    pub mode: u32,
    pub offset: f64,
    /// Shared by cosine and gaussian profiles.
    pub amplitude: f64,
    /// Gaussian profile `amplitude exp(-(x - center)^2 / (2 width^2))`.
    pub center: f64,
    pub width: f64,
    /// CSV with a `w` column, one row per degree of freedom.
    pub path: Option<PathBuf>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            kind: InitKind::Gaussian,
            value: 1.0,
            left: 1.0,
            right: 0.0,
            mode: 1,
            offset: 0.0,
            amplitude: 1.0,
            center: -0.5,
            width: 0.1,
            path: None,
        }
    }
}

impl InitConfig {
    /// Profile as a function of position, when it has one.
    pub fn profile(&self) -> Option<Box<dyn Fn(f64) -> f64 + Sync>> {
        let c = self.clone();
        Some(match self.kind {
            InitKind::Constant => Box::new(move |_| c.value),
            InitKind::Step => Box::new(move |x| if x <= 0.0 { c.left } else { c.right }),
            InitKind::Cosine => Box::new(move |x| {
                c.offset
                    + c.amplitude
                        * (f64::from(c.mode) * std::f64::consts::PI * (x + 1.0) / 2.0).cos()
            }),
            InitKind::Gaussian => Box::new(move |x| {
                c.amplitude * (-(x - c.center).powi(2) / (2.0 * c.width * c.width)).exp()
            }),
            InitKind::File => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub family: KernelFamily,
    pub radius: f64,
    pub epsilon: f64,
    pub n_local: usize,
    pub n_nonlocal: usize,
    pub scheme: SchemeKind,
    pub dt: AutoOr,
    pub horizon: f64,
    pub snapshot_stride: usize,
    pub picard_window: AutoOr,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub picard_substeps: usize,
    pub init: InitConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub pure_heat: bool,
    pub pure_heat_cells: usize,
    pub k_samples: usize,
    pub eps_list: Vec<f64>,
    pub sweep_modes: usize,
    pub sweep_compare_stride: usize,
    /// Test hook: zero one coupling entry of the generator used by `verify`.
    pub corrupt_generator: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Triangle,
            radius: 1.0,
            epsilon: 1.0,
            n_local: 100,
            n_nonlocal: 100,
            scheme: SchemeKind::Implicit,
            dt: AutoOr::Auto,
            horizon: 1.0,
            snapshot_stride: 100,
            picard_window: AutoOr::Auto,
            picard_tol: 1e-10,
            picard_max_iters: 50,
            picard_substeps: 32,
            init: InitConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 42,
            pure_heat: false,
            pure_heat_cells: 400,
            k_samples: 500,
            eps_list: vec![0.4, 0.2, 0.1, 0.05],
            sweep_modes: 256,
            sweep_compare_stride: 10,
            corrupt_generator: false,
        }
    }
}

/// Every recognised key, in manifest order.
pub const KEYS: &[&str] = &[
    "kernel.family",
    "kernel.radius",
    "kernel.epsilon",
    "grid.n_local",
    "grid.n_nonlocal",
    "time.scheme",
    "time.dt",
    "time.horizon",
    "time.snapshot_stride",
    "picard.window",
    "picard.tol",
    "picard.max_iters",
    "picard.substeps",
    "init.kind",
    "init.value",
    "init.left",
    "init.right",
    "init.mode",
    "init.offset",
    "init.amplitude",
    "init.center",
    "init.width",
    "init.path",
    "output.dir",
    "seed",
    "spectrum.pure_heat",
    "spectrum.n_cells",
    "spectrum.k_samples",
    "sweep.eps_list",
    "sweep.n_modes",
    "sweep.compare_stride",
    "verify.corrupt_generator",
];

fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| bad(key, format!("cannot parse {value:?}")))
}

fn auto_or(key: &str, value: &str) -> Result<AutoOr, CliError> {
    if value == "auto" {
        Ok(AutoOr::Auto)
    } else {
        num(key, value).map(AutoOr::Value)
    }
}

impl SimConfig {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", lineno + 1), "expected `key = value`"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| bad("--set", format!("expected key=value, got {assignment:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "kernel.family" => {
                self.family = value
                    .parse()
                    .map_err(|_| bad(key, format!("unknown family {value:?}")))?
            }
            "kernel.radius" => self.radius = num(key, value)?,
            "kernel.epsilon" => self.epsilon = num(key, value)?,
            "grid.n_local" => self.n_local = num(key, value)?,
            "grid.n_nonlocal" => self.n_nonlocal = num(key, value)?,
            "time.scheme" => {
                self.scheme = match value {
                    "explicit" => SchemeKind::Explicit,
                    "implicit" => SchemeKind::Implicit,
                    "picard" => SchemeKind::Picard,
                    _ => return Err(bad(key, format!("unknown scheme {value:?}"))),
                }
            }
            "time.dt" => self.dt = auto_or(key, value)?,
            "time.horizon" => self.horizon = num(key, value)?,
            "time.snapshot_stride" => self.snapshot_stride = num(key, value)?,
            "picard.window" => self.picard_window = auto_or(key, value)?,
            "picard.tol" => self.picard_tol = num(key, value)?,
            "picard.max_iters" => self.picard_max_iters = num(key, value)?,
            "picard.substeps" => self.picard_substeps = num(key, value)?,
            "init.kind" => {
                self.init.kind = match value {
                    "constant" => InitKind::Constant,
                    "step" => InitKind::Step,
                    "cosine" => InitKind::Cosine,
                    "gaussian" => InitKind::Gaussian,
                    "file" => InitKind::File,
                    _ => return Err(bad(key, format!("unknown initial profile {value:?}"))),
                }
            }
            "init.value" => self.init.value = num(key, value)?,
            "init.left" => self.init.left = num(key, value)?,
            "init.right" => self.init.right = num(key, value)?,
            "init.mode" => self.init.mode = num(key, value)?,
            "init.offset" => self.init.offset = num(key, value)?,
            "init.amplitude" => self.init.amplitude = num(key, value)?,
            "init.center" => self.init.center = num(key, value)?,
            "init.width" => self.init.width = num(key, value)?,
            "init.path" => {
                self.init.path = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "output.dir" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "spectrum.pure_heat" => self.pure_heat = num(key, value)?,
            "spectrum.n_cells" => self.pure_heat_cells = num(key, value)?,
            "spectrum.k_samples" => self.k_samples = num(key, value)?,
            "sweep.eps_list" => {
                self.eps_list = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "sweep.n_modes" => self.sweep_modes = num(key, value)?,
            "sweep.compare_stride" => self.sweep_compare_stride = num(key, value)?,
            "verify.corrupt_generator" => self.corrupt_generator = num(key, value)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let i = &self.init;
        match key {
            "kernel.family" => self.family.name().into(),
            "kernel.radius" => self.radius.to_string(),
            "kernel.epsilon" => self.epsilon.to_string(),
            "grid.n_local" => self.n_local.to_string(),
            "grid.n_nonlocal" => self.n_nonlocal.to_string(),
            "time.scheme" => self.scheme.name().into(),
            "time.dt" => self.dt.render(),
            "time.horizon" => self.horizon.to_string(),
            "time.snapshot_stride" => self.snapshot_stride.to_string(),
            "picard.window" => self.picard_window.render(),
            "picard.tol" => self.picard_tol.to_string(),
            "picard.max_iters" => self.picard_max_iters.to_string(),
            "picard.substeps" => self.picard_substeps.to_string(),
            "init.kind" => i.kind.name().into(),
            "init.value" => i.value.to_string(),
            "init.left" => i.left.to_string(),
            "init.right" => i.right.to_string(),
            "init.mode" => i.mode.to_string(),
            "init.offset" => i.offset.to_string(),
            "init.amplitude" => i.amplitude.to_string(),
            "init.center" => i.center.to_string(),
            "init.width" => i.width.to_string(),
            "init.path" => i
                .path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "output.dir" => self.output_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "spectrum.pure_heat" => self.pure_heat.to_string(),
            "spectrum.n_cells" => self.pure_heat_cells.to_string(),
            "spectrum.k_samples" => self.k_samples.to_string(),
            "sweep.eps_list" => self
                .eps_list
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(", "),
            "sweep.n_modes" => self.sweep_modes.to_string(),
            "sweep.compare_stride" => self.sweep_compare_stride.to_string(),
            "verify.corrupt_generator" => self.corrupt_generator.to_string(),
            _ => unreachable!("unlisted key {key}"),
        }
    }

    /// Every key with its current value, followed by `notes` as comments.
    /// Floats use the shortest representation that parses back to the same bits.
    pub fn render(&self, notes: &[(&str, String)]) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        for (name, value) in notes {
            let _ = writeln!(out, "# {name} = {value}");
        }
        out
    }

    /// Picard settings with the window resolved against `bound`.
    pub fn picard_params(&self, bound: f64) -> PicardParams {
        PicardParams {
            window: match self.picard_window {
                AutoOr::Auto => 0.8 * bound,
                AutoOr::Value(w) => w,
            },
            tol: self.picard_tol,
            max_iters: self.picard_max_iters,
            substeps: self.picard_substeps,
        }
    }

    pub fn step_scheme(&self, picard_bound: f64) -> StepScheme {
        let dt = match self.dt {
            AutoOr::Auto => TimeStep::Auto,
            AutoOr::Value(v) => TimeStep::Fixed(v),
        };
        StepScheme {
            kind: self.scheme,
            dt,
            picard: self.picard_params(picard_bound),
        }
    }
}
