//! Training configuration and its flat `key = value` file format.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrast::CrossPositives;
use crate::decoder::ScoreFunction;
use crate::error::{LogclError, Result};

/// Which entity matrix the scorer matches queries against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Candidates {
    /// `lambda * gated global + (1 - lambda) * evolved local`, row by row.
    Fused,
    /// The evolved local matrix only.
    Local,
}

/// Entity state the global relevance gate compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateSource {
    Evolved,
    Initial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub window: usize,
    pub tau: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub gcn_layers: usize,
    pub kernels: usize,
    pub kernel_width: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub use_global: bool,
    pub use_local: bool,
    pub use_eatt: bool,
    pub use_cl: bool,
    pub noise_sigma: f64,
    pub online: bool,
    pub online_steps: usize,
    pub grad_clip: f64,
    pub score_function: ScoreFunction,
    pub candidates: Candidates,
    pub global_gate: GateSource,
    pub cross_positives: CrossPositives,
    pub contrast_all_steps: bool,
    pub batch_norm: bool,
    /// Auxiliary static-graph constraint; accepted as a key, must stay off.
    pub static_graph: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            lr: 1e-3,
            window: 7,
            tau: 0.03,
            lambda: 0.9,
            dropout: 0.2,
            gcn_layers: 2,
            kernels: 50,
            kernel_width: 3,
            epochs: 30,
            patience: 5,
            seed: 42,
            use_global: true,
            use_local: true,
            use_eatt: true,
            use_cl: true,
            noise_sigma: 0.0,
            online: false,
            online_steps: 3,
            grad_clip: 1.0,
            score_function: ScoreFunction::Softmax,
            candidates: Candidates::Fused,
            global_gate: GateSource::Evolved,
            cross_positives: CrossPositives::IndexAndLabel,
            contrast_all_steps: false,
            batch_norm: true,
            static_graph: false,
            precision: Precision::F32,
        }
    }
}

/// Ablation variants reported side by side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    GlobalOnly,
    LocalOnly,
    NoEntityAttention,
    NoContrast,
}

impl Variant {
    pub const GRID: [Variant; 5] = [
        Variant::Full,
        Variant::GlobalOnly,
        Variant::LocalOnly,
        Variant::NoEntityAttention,
        Variant::NoContrast,
    ];

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::GlobalOnly => c.use_local = false,
            Variant::LocalOnly => c.use_global = false,
            Variant::NoEntityAttention => c.use_eatt = false,
            Variant::NoContrast => c.use_cl = false,
        }
        c
    }
}

impl TrainConfig {
    /// Window length and temperature tuned per benchmark.
    pub fn preset(dataset: &str) -> Result<Self> {
        let (window, tau) = match dataset.to_ascii_uppercase().as_str() {
            "ICEWS14" | "ICEWS14S" => (7, 0.03),
            "ICEWS18" => (7, 0.03),
            "ICEWS05-15" | "ICEWS05_15" => (9, 0.07),
            "GDELT" => (7, 0.07),
            other => return Err(LogclError::Config(format!("no preset for dataset `{other}`"))),
        };
        Ok(Self {
            window,
            tau,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LogclError::Config(m));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.gcn_layers == 0 || self.kernels == 0 {
            return fail("gcn_layers and kernels must be positive".into());
        }
        if self.kernel_width.is_multiple_of(2) {
            return fail(format!("kernel_width must be odd, got {}", self.kernel_width));
        }
        if !self.use_global && !self.use_local {
            return fail("the global-only and local-only variants are mutually exclusive".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return fail(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.static_graph {
            return fail("the static-graph constraint is a reserved hook and is not implemented".into());
        }
        Ok(())
    }

    /// Contrast needs both views.
    pub fn contrast_active(&self) -> bool {
        self.use_cl && self.use_global && self.use_local
    }

    pub fn variant_name(&self) -> String {
        let mut name = String::from("LogCL");
        if !self.use_local {
            name.push_str("-G");
        }
        if !self.use_global {
            name.push_str("-L");
        }
        if !self.use_eatt {
            name.push_str("-w/o-eatt");
        }
        if !self.use_cl {
            name.push_str("-w/o-cl");
        }
        name
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| LogclError::Config(format!("`{key}`: cannot parse `{value}` as {what}"));
        macro_rules! parse {
            ($ty:ty, $what:expr) => {
                value.parse::<$ty>().map_err(|_| bad($what))?
            };
        }
        let boolean = || -> Result<bool> {
            match value {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(bad("a boolean")),
            }
        };
        match key {
            "dim" => self.dim = parse!(usize, "an integer"),
            "lr" => self.lr = parse!(f64, "a number"),
            "window" => self.window = parse!(usize, "an integer"),
            "tau" => self.tau = parse!(f64, "a number"),
            "lambda" => self.lambda = parse!(f64, "a number"),
            "dropout" => self.dropout = parse!(f64, "a number"),
            "gcn_layers" => self.gcn_layers = parse!(usize, "an integer"),
            "kernels" => self.kernels = parse!(usize, "an integer"),
            "kernel_width" => self.kernel_width = parse!(usize, "an integer"),
            "epochs" => self.epochs = parse!(usize, "an integer"),
            "patience" => self.patience = parse!(usize, "an integer"),
            "seed" => self.seed = parse!(u64, "an integer"),
            "use_global" => self.use_global = boolean()?,
            "use_local" => self.use_local = boolean()?,
            "use_eatt" => self.use_eatt = boolean()?,
            "use_cl" => self.use_cl = boolean()?,
            "noise_sigma" => self.noise_sigma = parse!(f64, "a number"),
            "online" => self.online = boolean()?,
            "online_steps" => self.online_steps = parse!(usize, "an integer"),
            "grad_clip" => self.grad_clip = parse!(f64, "a number"),
            "contrast_all_steps" => self.contrast_all_steps = boolean()?,
            "batch_norm" => self.batch_norm = boolean()?,
            "static_graph" => self.static_graph = boolean()?,
            "score_function" => {
                self.score_function = match value {
                    "softmax" => ScoreFunction::Softmax,
                    "sigmoid" => ScoreFunction::Sigmoid,
                    _ => return Err(bad("softmax|sigmoid")),
                }
            }
            "candidates" => {
                self.candidates = match value {
                    "fused" => Candidates::Fused,
                    "local" => Candidates::Local,
                    _ => return Err(bad("fused|local")),
                }
            }
            "global_gate" => {
                self.global_gate = match value {
                    "evolved" => GateSource::Evolved,
                    "initial" => GateSource::Initial,
                    _ => return Err(bad("evolved|initial")),
                }
            }
            "cross_positives" => {
                self.cross_positives = match value {
                    "index-and-label" => CrossPositives::IndexAndLabel,
                    "index-only" => CrossPositives::IndexOnly,
                    _ => return Err(bad("index-and-label|index-only")),
                }
            }
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad("f32|f64")),
                }
            }
            _ => return Err(LogclError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document on top of `self`.
    /// Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LogclError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| LogclError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| LogclError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Renders every field in the flat format, in declaration order.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                writeln!(out, "{k} = {v}").expect("write to string");
            }
        }
        out
    }

    /// Stable 64-bit FNV-1a hash of the canonical JSON form, as hex.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}
