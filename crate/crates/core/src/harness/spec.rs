use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate_sbm, load_dataset_dir, Dataset, SbmConfig};
use crate::trainer::{DistillConfig, TeacherConfig, ABLATION_VARIANTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Transductive,
    Inductive,
    LabelRateSweep,
    FeatureMissingSweep,
    HyperSweep,
    KSweep,
    Ablation,
    EnsembleCompare,
    LatencyBench,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::Transductive,
        Self::Inductive,
        Self::LabelRateSweep,
        Self::FeatureMissingSweep,
        Self::HyperSweep,
        Self::KSweep,
        Self::Ablation,
        Self::EnsembleCompare,
        Self::LatencyBench,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Transductive => "transductive",
            Self::Inductive => "inductive",
            Self::LabelRateSweep => "label_rate_sweep",
            Self::FeatureMissingSweep => "feature_missing_sweep",
            Self::HyperSweep => "hyper_sweep",
            Self::KSweep => "k_sweep",
            Self::Ablation => "ablation",
            Self::EnsembleCompare => "ensemble_compare",
            Self::LatencyBench => "latency_bench",
        }
    }

    /// Methods run when a spec does not list its own.
    pub fn default_methods(self) -> Vec<Method> {
        use Method::*;
        match self {
            Self::Transductive | Self::Inductive | Self::FeatureMissingSweep => {
                vec![TeacherOnly, Glnn, Adagmlp]
            }
            Self::LabelRateSweep => vec![Glnn, Adagmlp],
            Self::HyperSweep | Self::KSweep => vec![Adagmlp],
            Self::EnsembleCompare => vec![Adagmlp, Average, Vote, Bagging, Glnn],
            Self::Ablation | Self::LatencyBench => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adagmlp,
    Glnn,
    Bagging,
    Vote,
    Average,
    MlpOnly,
    TeacherOnly,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Adagmlp => "adagmlp",
            Self::Glnn => "glnn",
            Self::Bagging => "bagging",
            Self::Vote => "vote",
            Self::Average => "average",
            Self::MlpOnly => "mlp_only",
            Self::TeacherOnly => "teacher_only",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where an experiment's graph comes from. Relative directories are
/// resolved against the spec file's location by [`ExperimentSpec::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRef {
    /// A named SBM preset (`test` or `study`).
    Preset(String),
    Sbm(SbmConfig),
    Dir(PathBuf),
}

impl DatasetRef {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            Self::Preset(name) => {
                let cfg = SbmConfig::preset(name)
                    .ok_or_else(|| Error::Config(format!("unknown SBM preset {name:?} (expected test or study)")))?;
                generate_sbm(&cfg)
            }
            Self::Sbm(cfg) => generate_sbm(cfg),
            Self::Dir(dir) => load_dataset_dir(dir),
        }
    }
}

fn d_per_class() -> usize {
    20
}
fn d_val() -> usize {
    500
}
fn d_unseen() -> f64 {
    0.2
}
fn yes() -> bool {
    true
}

/// How train/val/test nodes are drawn for each seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub per_class_train: usize,
    pub val_size: usize,
    /// Test-set size; every remaining node when absent.
    pub test_size: Option<usize>,
    /// Held-out fraction for inductive runs.
    pub unseen_fraction: f64,
    /// Use the split shipped with a dataset directory, when there is one,
    /// for the transductive protocol.
    pub use_dataset_split: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            per_class_train: d_per_class(),
            val_size: d_val(),
            test_size: None,
            unseen_fraction: d_unseen(),
            use_dataset_split: yes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub key: String,
    pub values: Vec<f64>,
}

/// Protocol points for the ablation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub variants: Vec<String>,
    pub label_rates: Vec<f64>,
    pub missing_rates: Vec<f64>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            variants: ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect(),
            label_rates: vec![0.01],
            missing_rates: vec![0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySpec {
    pub nodes: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub mean_degree: f64,
    pub hidden_widths: Vec<usize>,
    pub k_values: Vec<usize>,
    pub warmup: usize,
    pub reps: usize,
    /// Run the students of an ensemble on the worker pool.
    pub parallel: bool,
}

impl Default for LatencySpec {
    fn default() -> Self {
        Self {
            nodes: 20_000,
            feature_dim: 500,
            classes: 10,
            mean_degree: 5.0,
            hidden_widths: vec![128],
            k_values: vec![2, 4],
            warmup: 5,
            reps: 30,
            parallel: false,
        }
    }
}

/// One experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: ExperimentKind,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetRef,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub ablation: AblationSpec,
    #[serde(default)]
    pub latency: LatencySpec,
    pub seeds: Vec<u64>,
}

fn default_dataset() -> DatasetRef {
    DatasetRef::Preset("test".into())
}

/// Keys a hyper-parameter sweep may vary.
pub const HYPER_KEYS: [&str; 10] = [
    "lambda", "lambda_na", "beta", "tau", "rho", "k", "hidden", "layers", "dropout", "lr",
];

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, dataset: DatasetRef, seeds: Vec<u64>) -> Self {
        Self {
            name: None,
            kind,
            dataset,
            split: SplitSpec::default(),
            teacher: TeacherConfig::default(),
            distill: DistillConfig::default(),
            methods: None,
            grid: None,
            ablation: AblationSpec::default(),
            latency: LatencySpec::default(),
            seeds,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "experiment spec: {e} (see the experiment spec schema in the README; kinds: {})",
                ExperimentKind::ALL.map(|k| k.as_str()).join(", ")
            ))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Read and validate a spec file, resolving a relative dataset
    /// directory against the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json(&text)?;
        if let DatasetRef::Dir(dir) = &mut spec.dataset {
            if dir.is_relative() {
                if let Some(base) = path.parent() {
                    *dir = base.join(&*dir);
                }
            }
        }
        Ok(spec)
    }

    pub fn id(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| self.kind.default_methods())
    }

    fn expect_grid(&self, keys: &[&str]) -> Result<&Grid> {
        let grid = self.grid.as_ref().ok_or_else(|| {
            Error::Config(format!("{} needs a grid over {}", self.kind.as_str(), keys.join(" | ")))
        })?;
        if !keys.contains(&grid.key.as_str()) {
            return Err(Error::Config(format!(
                "{} grid key must be one of {}, got {:?}",
                self.kind.as_str(),
                keys.join(", "),
                grid.key
            )));
        }
        Ok(grid)
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        if self.seeds.is_empty() {
            return Err(Error::Config("spec needs at least one seed".into()));
        }
        self.teacher.validate()?;
        self.distill.validate()?;
        if let Some(ms) = &self.methods {
            if ms.is_empty() {
                return Err(Error::Config("methods list is empty".into()));
            }
        }
        let rates = |vals: &[f64], what: &str, lo_open: bool| -> Result<()> {
            for &r in vals {
                let ok = if lo_open { r > 0.0 && r < 1.0 } else { (0.0..1.0).contains(&r) };
                if !ok {
                    return Err(Error::Config(format!("{what} {r} out of range")));
                }
            }
            Ok(())
        };
        match self.kind {
            Transductive | Inductive | LatencyBench => {
                if self.grid.is_some() {
                    return Err(Error::Config(format!("{} takes no grid", self.kind.as_str())));
                }
            }
            LabelRateSweep => rates(&self.expect_grid(&["label_rate"])?.values, "label rate", true)?,
            FeatureMissingSweep => rates(&self.expect_grid(&["missing_rate"])?.values, "missing rate", false)?,
            KSweep => {
                for &k in &self.expect_grid(&["k"])?.values {
                    if !(k >= 1.0 && k.fract() == 0.0) {
                        return Err(Error::Config(format!("K must be a positive integer, got {k}")));
                    }
                }
            }
            HyperSweep => {
                let grid = self.expect_grid(&HYPER_KEYS)?;
                for &v in &grid.values {
                    apply_key(&self.distill, &grid.key, v)?;
                }
            }
            EnsembleCompare => {
                if self.grid.is_some() {
                    let g = self.expect_grid(&["label_rate", "missing_rate"])?;
                    rates(&g.values, &g.key, g.key == "label_rate")?;
                }
                if self.distill.k < 2 {
                    return Err(Error::Config("ensemble comparison needs K >= 2".into()));
                }
            }
            Ablation => {
                rates(&self.ablation.label_rates, "label rate", true)?;
                rates(&self.ablation.missing_rates, "missing rate", false)?;
                for v in &self.ablation.variants {
                    self.distill.ablate(v)?;
                }
            }
        }
        if self.kind == LatencyBench {
            let l = &self.latency;
            if l.nodes < l.classes || l.classes == 0 || l.feature_dim < l.classes {
                return Err(Error::Config("latency bench needs nodes >= classes and feature_dim >= classes".into()));
            }
            if l.reps == 0 || l.k_values.contains(&0) || l.hidden_widths.contains(&0) {
                return Err(Error::Config("latency bench needs reps, K and widths >= 1".into()));
            }
        }
        Ok(())
    }
}

/// `cfg` with one field replaced, in sweep mode so λ and λ_NA may sit on
/// their boundaries. Integer fields accept integral values only.
pub fn apply_key(cfg: &DistillConfig, key: &str, value: f64) -> Result<DistillConfig> {
    if !HYPER_KEYS.contains(&key) {
        return Err(Error::Config(format!("cannot sweep {key:?}; expected one of {}", HYPER_KEYS.join(", "))));
    }
    let mut json = serde_json::to_value(cfg).expect("serializable");
    let v = if matches!(key, "k" | "hidden" | "layers") {
        if value < 0.0 || value.fract() != 0.0 {
            return Err(Error::Config(format!("{key} must be a whole number, got {value}")));
        }
        serde_json::json!(value as u64)
    } else {
        serde_json::json!(value)
    };
    json[key] = v;
    json["sweep_mode"] = true.into();
    let out: DistillConfig = serde_json::from_value(json).map_err(|e| Error::Config(e.to_string()))?;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_fills_defaults() {
        let s = ExperimentSpec::from_json(r#"{"kind":"transductive","seeds":[0,1]}"#).unwrap();
        assert_eq!(s.dataset, DatasetRef::Preset("test".into()));
        assert_eq!(s.methods(), vec![Method::TeacherOnly, Method::Glnn, Method::Adagmlp]);
        assert_eq!(s.id(), "transductive");
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            r#"{"kind":"nope","seeds":[0]}"#,
            r#"{"kind":"transductive","seeds":[]}"#,
            r#"{"kind":"label_rate_sweep","seeds":[0]}"#,
            r#"{"kind":"label_rate_sweep","seeds":[0],"grid":{"key":"label_rate","values":[1.5]}}"#,
            r#"{"kind":"hyper_sweep","seeds":[0],"grid":{"key":"hidden","values":[1.5]}}"#,
            r#"{"kind":"hyper_sweep","seeds":[0],"grid":{"key":"lambda","values":[1.2]}}"#,
            r#"{"kind":"transductive","seeds":[0],"distill":{"tau":1.5}}"#,
            r#"{"kind":"transductive","seeds":[0],"bogus":1}"#,
        ] {
            assert!(matches!(ExperimentSpec::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn sweep_keys_apply() {
        let base = DistillConfig::default();
        let c = apply_key(&base, "lambda", 1.0).unwrap();
        assert_eq!(c.lambda, 1.0);
        assert!(c.sweep_mode);
        assert_eq!(apply_key(&base, "hidden", 128.0).unwrap().hidden, 128);
        assert!(apply_key(&base, "seed", 1.0).is_err());
    }
}
