//! KD-SAMME: per-node divergences, weighted student error, combining
//! weights, node reweighting, the weighted distillation loss and ensemble
//! inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, row_log_softmax, row_softmax, Tape, Tensor, Var};
use crate::objectives::{kl_loss, LossValue};

/// Floor on the combining weight.
pub const ALPHA_FLOOR: f64 = 1e-8;
/// Symmetric clamp on the weighted error.
pub const ERROR_CLAMP: f64 = 1e-3;

/// A distribution over nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeWeights {
    w: Vec<f64>,
}

impl NodeWeights {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("node weights over zero nodes".into()));
        }
        Ok(Self {
            w: vec![1.0 / n as f64; n],
        })
    }

    /// Normalizes `w` onto the simplex.
    pub fn from_unnormalized(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Contract("node weights must be finite and >= 0".into()));
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Contract("node weights sum to zero".into()));
        }
        Ok(Self {
            w: w.into_iter().map(|x| x / total).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Per-node teacher→student KL at temperature 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceVector {
    d: Vec<f64>,
}

impl DivergenceVector {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Contract("divergences must be finite and >= 0".into()));
        }
        Ok(Self { d })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentStats {
    /// Clamped weighted error.
    pub error: f64,
    pub alpha: f64,
}

/// Normalized per-student combining weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    alpha_bar: Vec<f64>,
}

impl EnsembleWeights {
    pub fn from_alphas(alphas: &[f64]) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Contract("empty ensemble".into()));
        }
        if alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Contract(format!("combining weights must be > 0: {alphas:?}")));
        }
        let total: f64 = alphas.iter().sum();
        Ok(Self {
            alpha_bar: alphas.iter().map(|a| a / total).collect(),
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_alphas(&vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }
}

pub fn divergence(teacher_logits: &Tensor, student_logits: &Tensor) -> Result<DivergenceVector> {
    teacher_logits.same_shape(student_logits, "divergence")?;
    let p = row_softmax(teacher_logits, 1.0)?;
    let logp = row_log_softmax(teacher_logits, 1.0)?;
    let logq = row_log_softmax(student_logits, 1.0)?;
    let d = (0..p.rows())
        .map(|i| {
            let kl: f64 = p
                .row(i)
                .iter()
                .zip(logp.row(i))
                .zip(logq.row(i))
                .filter(|((&pi, _), _)| pi > 0.0)
                .map(|((&pi, &lp), &lq)| pi * (lp - lq))
                .sum();
            // rounding can leave a tiny negative where the rows agree
            kl.max(0.0)
        })
        .collect();
    DivergenceVector::new(d)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("β must be > 0, got {beta}")));
    }
    Ok(())
}

/// `Σ w_i(1 − e^{−βd_i}) / Σ w_i`, unclamped.
pub fn raw_weighted_error(w: &NodeWeights, d: &DivergenceVector, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if w.len() != d.d.len() {
        return Err(Error::Dimension(format!(
            "{} node weights vs {} divergences",
            w.len(),
            d.d.len()
        )));
    }
    let total: f64 = w.w.iter().sum();
    let miss: f64 = w
        .w
        .iter()
        .zip(&d.d)
        .map(|(wi, di)| wi * -(-beta * di).exp_m1())
        .sum();
    Ok(miss / total)
}

pub fn weighted_error(w: &NodeWeights, d: &DivergenceVector, beta: f64) -> Result<f64> {
    Ok(raw_weighted_error(w, d, beta)?.clamp(ERROR_CLAMP, 1.0 - ERROR_CLAMP))
}

pub fn combining_weight(error: f64) -> f64 {
    ((1.0 - error) / error).ln().max(ALPHA_FLOOR)
}

pub fn update_weights(w: &NodeWeights, alpha: f64, d: &DivergenceVector, beta: f64) -> Result<NodeWeights> {
    check_beta(beta)?;
    if w.len() != d.d.len() {
        return Err(Error::Dimension(format!(
            "{} node weights vs {} divergences",
            w.len(),
            d.d.len()
        )));
    }
    // scale by the largest factor so large α·miss cannot overflow
    let exps: Vec<f64> = d.d.iter().map(|&di| alpha * -(-beta * di).exp_m1()).collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled = w.w.iter().zip(&exps).map(|(wi, e)| wi * (e - top).exp()).collect();
    NodeWeights::from_unnormalized(scaled)
}

/// The outcome of one pass over the students.
#[derive(Clone, Debug)]
pub struct Cascade {
    /// Weights in force when each stage was reached.
    pub stage_weights: Vec<NodeWeights>,
    pub stats: Vec<StudentStats>,
    /// Weights after the last stage.
    pub final_weights: NodeWeights,
}

/// Process stages in order: the error and α of stage k are measured under
/// the current weights, which are then updated and handed to stage k+1.
/// With `reweight` off every stage sees `w` unchanged (α is still measured).
pub fn run_cascade(
    w: NodeWeights,
    teacher_logits: &Tensor,
    student_logits: &[&Tensor],
    beta: f64,
    reweight: bool,
) -> Result<Cascade> {
    if student_logits.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    let mut current = w;
    let mut stage_weights = Vec::with_capacity(student_logits.len());
    let mut stats = Vec::with_capacity(student_logits.len());
    for z in student_logits {
        let d = divergence(teacher_logits, z)?;
        let error = weighted_error(&current, &d, beta)?;
        let alpha = combining_weight(error);
        stats.push(StudentStats { error, alpha });
        let next = if reweight {
            update_weights(&current, alpha, &d, beta)?
        } else {
            current.clone()
        };
        stage_weights.push(std::mem::replace(&mut current, next));
    }
    Ok(Cascade {
        stage_weights,
        stats,
        final_weights: current,
    })
}

/// `(1/K) Σ_k Σ_i w_i^{(k)} KL_i` with stage-specific weights.
pub fn adakd_loss(
    tape: &mut Tape,
    teacher_logits: Var,
    student_logits: &[Var],
    tau: f64,
    stage_weights: &[NodeWeights],
) -> Result<LossValue> {
    if student_logits.is_empty() || student_logits.len() != stage_weights.len() {
        return Err(Error::Contract("one weight vector per student required".into()));
    }
    let k = student_logits.len() as f64;
    let mut acc: Option<Var> = None;
    for (&z, w) in student_logits.iter().zip(stage_weights) {
        let kl = kl_loss(tape, teacher_logits, z, tau, Some(w.as_slice()))?;
        let term = tape.scale(kl.var, 1.0 / k);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let var = acc.expect("at least one student");
    let value = tape.value(var).item()?;
    Ok(LossValue {
        var,
        value,
        terms: vec![("adakd".into(), value)],
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    #[default]
    AdaBoost,
    Average,
    Vote,
}

impl std::str::FromStr for Combiner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaboost" => Ok(Self::AdaBoost),
            "average" => Ok(Self::Average),
            "vote" => Ok(Self::Vote),
            _ => Err(Error::Config(format!("unknown combiner {s:?}"))),
        }
    }
}

pub fn ensemble_predict(
    student_logits: &[Tensor],
    weights: Option<&EnsembleWeights>,
    mode: Combiner,
) -> Result<Vec<usize>> {
    let first = student_logits
        .first()
        .ok_or_else(|| Error::Contract("empty ensemble".into()))?;
    for z in &student_logits[1..] {
        first.same_shape(z, "ensemble_predict")?;
    }
    let (r, c) = (first.rows(), first.cols());
    let k = student_logits.len();
    match mode {
        Combiner::Vote => {
            let votes: Vec<Vec<usize>> = student_logits.iter().map(Tensor::argmax_rows).collect();
            Ok((0..r)
                .map(|i| {
                    let mut count = vec![0.0; c];
                    for v in &votes {
                        count[v[i]] += 1.0;
                    }
                    argmax(&count)
                })
                .collect())
        }
        Combiner::AdaBoost | Combiner::Average => {
            let coef: Vec<f64> = if mode == Combiner::AdaBoost {
                let w = weights.ok_or_else(|| {
                    Error::Contract("adaboost combination needs ensemble weights".into())
                })?;
                if w.len() != k {
                    return Err(Error::Dimension(format!("{} weights for {k} students", w.len())));
                }
                w.as_slice().to_vec()
            } else {
                vec![1.0 / k as f64; k]
            };
            let mut acc = Tensor::zeros(r, c);
            for (z, a) in student_logits.iter().zip(coef) {
                let p = row_softmax(z, 1.0)?;
                for (o, v) in acc.data_mut().iter_mut().zip(p.data()) {
                    *o += a * v;
                }
            }
            Ok(acc.argmax_rows())
        }
    }
}
