use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{check_balance, check_temperature, Bounds};

/// How the node distribution evolves across epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSchedule {
    /// Uniform at the start of every epoch, then cascaded over the students.
    #[default]
    ResetPerEpoch,
    /// The weights left by the last stage carry over into the next epoch.
    Persistent,
    /// Always uniform; α is still measured for the combiner.
    Uniform,
}

fn d_lambda() -> f64 {
    0.5
}
fn d_beta() -> f64 {
    3.0
}
fn d_tau() -> f64 {
    1.0
}
fn d_rho() -> f64 {
    0.1
}
fn d_k() -> usize {
    2
}
fn d_layers() -> usize {
    2
}
fn d_hidden() -> usize {
    64
}
fn d_dropout() -> f64 {
    0.5
}
fn d_lr() -> f64 {
    0.01
}
fn d_wd() -> f64 {
    5e-4
}
fn d_epochs() -> usize {
    500
}
fn d_patience() -> usize {
    50
}
fn yes() -> bool {
    true
}

/// Every hyper-parameter of a distillation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lambda: f64,
    pub lambda_na: f64,
    pub beta: f64,
    pub tau: f64,
    pub rho: f64,
    pub k: usize,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub rc_enabled: bool,
    pub adakd_enabled: bool,
    pub na_enabled: bool,
    pub na_o_enabled: bool,
    pub na_h_enabled: bool,
    /// Allow λ and λ_NA on the closed interval [0,1].
    pub sweep_mode: bool,
    pub weight_schedule: WeightSchedule,
    /// Redraw the RC partition every epoch instead of once per run.
    pub rc_resample: bool,
    /// Reuse the clean forward's dropout sample for the masked forward.
    pub na_shared_dropout: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda: d_lambda(),
            lambda_na: d_lambda(),
            beta: d_beta(),
            tau: d_tau(),
            rho: d_rho(),
            k: d_k(),
            layers: d_layers(),
            hidden: d_hidden(),
            dropout: d_dropout(),
            lr: d_lr(),
            weight_decay: d_wd(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            seed: 0,
            rc_enabled: yes(),
            adakd_enabled: yes(),
            na_enabled: yes(),
            na_o_enabled: yes(),
            na_h_enabled: yes(),
            sweep_mode: false,
            weight_schedule: WeightSchedule::default(),
            rc_resample: false,
            na_shared_dropout: false,
        }
    }
}

pub(crate) fn check_optimizer(lr: f64, wd: f64, dropout: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if !(wd >= 0.0 && wd.is_finite()) {
        return Err(Error::Config(format!("weight decay must be >= 0, got {wd}")));
    }
    crate::numerics::check_dropout(dropout)
}

impl DistillConfig {
    pub fn bounds(&self) -> Bounds {
        if self.sweep_mode {
            Bounds::Sweep
        } else {
            Bounds::Open
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_balance("λ", self.lambda, self.bounds())?;
        check_balance("λ_NA", self.lambda_na, self.bounds())?;
        check_temperature(self.tau)?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("β must be > 0, got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("ρ must be in [0,1), got {}", self.rho)));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.layers < 2 {
            return Err(Error::Config(format!("student needs L >= 2 layers, got {}", self.layers)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        check_optimizer(self.lr, self.weight_decay, self.dropout)?;
        if self.na_enabled != (self.na_o_enabled || self.na_h_enabled) {
            return Err(Error::Config(
                "na_enabled must equal na_o_enabled || na_h_enabled".into(),
            ));
        }
        Ok(())
    }

    /// Set both alignment terms on or off together.
    pub fn with_na(mut self, on: bool) -> Self {
        self.na_enabled = on;
        self.na_o_enabled = on;
        self.na_h_enabled = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The configuration for one ablation variant: `full`, `-rc`, `-adakd`,
    /// `-na_o`, `-na_h` or `-na`. Removing one alignment term keeps λ_NA on
    /// the other.
    pub fn ablate(&self, variant: &str) -> Result<Self> {
        let mut c = self.clone();
        match variant {
            "full" => {}
            "-rc" => c.rc_enabled = false,
            "-adakd" => c.adakd_enabled = false,
            "-na_o" => {
                c.na_o_enabled = false;
                c.na_enabled = c.na_h_enabled;
            }
            "-na_h" => {
                c.na_h_enabled = false;
                c.na_enabled = c.na_o_enabled;
            }
            "-na" => c = c.with_na(false),
            other => return Err(Error::Config(format!("unknown ablation variant {other:?}"))),
        }
        Ok(c)
    }

    pub fn effective_schedule(&self) -> WeightSchedule {
        if self.adakd_enabled {
            self.weight_schedule
        } else {
            WeightSchedule::Uniform
        }
    }
}

pub const ABLATION_VARIANTS: [&str; 6] = ["full", "-rc", "-adakd", "-na_o", "-na_h", "-na"];

/// Supervised GCN teacher settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            layers: d_layers(),
            dropout: d_dropout(),
            lr: d_lr(),
            weight_decay: d_wd(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("teacher needs >= 1 layer and width >= 1".into()));
        }
        check_optimizer(self.lr, self.weight_decay, self.dropout)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
