//! Training objectives: cross-entropy, temperature KL, the single-student
//! distillation objective, random classification, node alignment, and the
//! combined ensemble objective.
//!
//! Every function records its computation on a [`Tape`] and returns a
//! [`LossValue`] carrying the scalar node plus a per-term breakdown.

use crate::error::{Error, Result};
use crate::numerics::{row_softmax, Tape, Var};

/// A scalar loss on a tape with a readable breakdown.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub var: Var,
    pub value: f64,
    pub terms: Vec<(String, f64)>,
}

impl LossValue {
    fn new(tape: &Tape, var: Var, name: &str) -> Result<Self> {
        let value = tape.value(var).item()?;
        if !value.is_finite() {
            return Err(Error::Contract(format!("{name} is not finite")));
        }
        Ok(Self {
            var,
            value,
            terms: vec![(name.to_string(), value)],
        })
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

/// Whether balance weights may sit on the closed interval (sweeps) or must
/// stay strictly inside it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Bounds {
    #[default]
    Open,
    Sweep,
}

pub(crate) fn check_balance(name: &str, v: f64, bounds: Bounds) -> Result<()> {
    let ok = match bounds {
        Bounds::Open => v > 0.0 && v < 1.0,
        Bounds::Sweep => (0.0..=1.0).contains(&v),
    };
    if !ok {
        let range = if bounds == Bounds::Open { "(0,1)" } else { "[0,1]" };
        return Err(Error::Config(format!("{name} must be in {range}, got {v}")));
    }
    Ok(())
}

pub(crate) fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("τ ∈ (0,1] required, got {tau}")));
    }
    Ok(())
}

/// `Σ coef·term`, merging the breakdowns.
fn combine(tape: &mut Tape, parts: &[(f64, &LossValue)], name: &str) -> Result<LossValue> {
    let mut acc: Option<Var> = None;
    let mut terms = Vec::new();
    for &(coef, part) in parts {
        let scaled = tape.scale(part.var, coef);
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled)?,
        });
        terms.extend(part.terms.iter().cloned());
    }
    let var = acc.ok_or_else(|| Error::Contract("empty loss combination".into()))?;
    let mut out = LossValue::new(tape, var, name)?;
    out.terms.extend(terms);
    Ok(out)
}

/// Mean cross-entropy of `softmax(logits)` against `labels`.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<LossValue> {
    if labels.is_empty() {
        return Err(Error::Contract("cross-entropy over zero rows".into()));
    }
    let logp = tape.log_softmax(logits, 1.0)?;
    let nll = tape.nll_mean(logp, labels)?;
    LossValue::new(tape, nll, "ce")
}

/// `Σ_i ω_i KL(softmax(t_i/τ) ‖ softmax(s_i/τ))` with `ω_i = 1/r` when no
/// weights are given. The teacher side is read as a constant.
pub fn kl_loss(
    tape: &mut Tape,
    teacher_logits: Var,
    student_logits: Var,
    tau: f64,
    node_weights: Option<&[f64]>,
) -> Result<LossValue> {
    check_temperature(tau)?;
    let t = tape.value(teacher_logits);
    t.same_shape(tape.value(student_logits), "kl_loss")?;
    let r = t.rows();
    let uniform;
    let w = match node_weights {
        Some(w) => {
            if w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Config("node weights must be nonnegative".into()));
            }
            w
        }
        None => {
            uniform = vec![1.0 / r.max(1) as f64; r];
            &uniform
        }
    };
    let p = row_softmax(t, tau)?;
    let logq = tape.log_softmax(student_logits, tau)?;
    let kl = tape.weighted_kl(p, logq, w)?;
    LossValue::new(tape, kl, "kl")
}

/// Single-student distillation objective `λ·CE + (1−λ)·KL`, with CE over
/// the rows `train_rows` of `logits` and a uniformly weighted KL over all
/// rows.
#[allow(clippy::too_many_arguments)]
pub fn g2m_loss(
    tape: &mut Tape,
    logits: Var,
    train_rows: &[usize],
    train_labels: &[usize],
    teacher_logits: Var,
    tau: f64,
    lambda: f64,
    bounds: Bounds,
) -> Result<LossValue> {
    check_balance("λ", lambda, bounds)?;
    let picked = tape.gather_rows(logits, train_rows)?;
    let ce = ce_loss(tape, picked, train_labels)?;
    let kl = kl_loss(tape, teacher_logits, logits, tau, None)?;
    combine(tape, &[(lambda, &ce), (1.0 - lambda, &kl)], "g2m")
}

/// Random-classification objective: the mean over students of each
/// student's CE on its own labelled subset. `logits[k]` holds the rows of
/// subset k only.
pub fn rc_loss(tape: &mut Tape, logits: &[Var], labels: &[Vec<usize>]) -> Result<LossValue> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Contract("one label set per student required".into()));
    }
    let k = logits.len() as f64;
    let parts = logits
        .iter()
        .zip(labels)
        .map(|(&z, y)| ce_loss(tape, z, y))
        .collect::<Result<Vec<_>>>()?;
    let weighted: Vec<(f64, &LossValue)> = parts.iter().map(|p| (1.0 / k, p)).collect();
    let mut out = combine(tape, &weighted, "rc")?;
    out.terms.truncate(1);
    Ok(out)
}

fn mean_sq_diff(tape: &mut Tape, a: Var, b: Var) -> Result<(Var, usize)> {
    let rows = tape.value(a).rows();
    let d = tape.sub(a, b)?;
    Ok((tape.sum_squares(d), rows))
}

/// Output alignment: `(1/K) Σ_k (1/|V_k|) Σ_i ‖z_i − z̃_i‖²` on raw logits.
pub fn na_output_loss(tape: &mut Tape, clean: &[Var], masked: &[Var]) -> Result<LossValue> {
    if clean.is_empty() || clean.len() != masked.len() {
        return Err(Error::Contract("clean/masked student count mismatch".into()));
    }
    let k = clean.len() as f64;
    let mut acc: Option<Var> = None;
    for (&c, &m) in clean.iter().zip(masked) {
        let (ss, rows) = mean_sq_diff(tape, c, m)?;
        if rows == 0 {
            return Err(Error::Contract("alignment over zero rows".into()));
        }
        let term = tape.scale(ss, 1.0 / (k * rows as f64));
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    LossValue::new(tape, acc.unwrap(), "na_o")
}

/// Hidden alignment: `(1/K) Σ_k Σ_l Σ_i ‖h − h̃‖² / (|V_k|·(L−1))`.
pub fn na_hidden_loss(tape: &mut Tape, clean: &[Vec<Var>], masked: &[Vec<Var>]) -> Result<LossValue> {
    if clean.is_empty() || clean.len() != masked.len() {
        return Err(Error::Contract("clean/masked student count mismatch".into()));
    }
    let k = clean.len() as f64;
    let mut acc: Option<Var> = None;
    for (cl, ml) in clean.iter().zip(masked) {
        if cl.is_empty() || cl.len() != ml.len() {
            return Err(Error::Contract(format!(
                "hidden trace lengths {} vs {}",
                cl.len(),
                ml.len()
            )));
        }
        let layers = cl.len() as f64;
        for (&c, &m) in cl.iter().zip(ml) {
            let (ss, rows) = mean_sq_diff(tape, c, m)?;
            if rows == 0 {
                return Err(Error::Contract("alignment over zero rows".into()));
            }
            let term = tape.scale(ss, 1.0 / (k * rows as f64 * layers));
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
    }
    LossValue::new(tape, acc.unwrap(), "na_h")
}

/// `λ_NA·NA-O + (1−λ_NA)·NA-H`; an absent (ablated) term counts as zero.
pub fn na_loss(
    tape: &mut Tape,
    na_o: Option<&LossValue>,
    na_h: Option<&LossValue>,
    lambda_na: f64,
    bounds: Bounds,
) -> Result<Option<LossValue>> {
    check_balance("λ_NA", lambda_na, bounds)?;
    let mut parts = Vec::new();
    if let Some(o) = na_o {
        parts.push((lambda_na, o));
    }
    if let Some(h) = na_h {
        parts.push((1.0 - lambda_na, h));
    }
    if parts.is_empty() {
        return Ok(None);
    }
    combine(tape, &parts, "na").map(Some)
}

/// `λ·RC + (1−λ)·AdaKD + NA`; `na = None` means the alignment term is off.
pub fn adagmlp_loss(
    tape: &mut Tape,
    rc: &LossValue,
    adakd: &LossValue,
    na: Option<&LossValue>,
    lambda: f64,
    bounds: Bounds,
) -> Result<LossValue> {
    check_balance("λ", lambda, bounds)?;
    let mut parts = vec![(lambda, rc), (1.0 - lambda, adakd)];
    if let Some(na) = na {
        parts.push((1.0, na));
    }
    combine(tape, &parts, "adagmlp")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Parameter, Tensor};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    #[test]
    fn ce_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[[0.0, 0.0]]));
        assert!(close(ce_loss(&mut tape, z, &[0]).unwrap().value, 2f64.ln()));

        let z = tape.constant(Tensor::from_rows(&[[800.0, 0.0]]));
        assert!(ce_loss(&mut tape, z, &[0]).unwrap().value.abs() < 1e-12);

        let one = Tensor::from_rows(&[[0.3, -1.0, 2.0], [1.0, 0.0, 0.5]]);
        let two = Tensor::from_rows(&[[0.3, -1.0, 2.0], [1.0, 0.0, 0.5], [0.3, -1.0, 2.0], [1.0, 0.0, 0.5]]);
        let a = tape.constant(one);
        let b = tape.constant(two);
        let la = ce_loss(&mut tape, a, &[1, 2]).unwrap().value;
        let lb = ce_loss(&mut tape, b, &[1, 2, 1, 2]).unwrap().value;
        assert!(close(la, lb));

        let e = tape.constant(Tensor::zeros(0, 2));
        assert!(matches!(ce_loss(&mut tape, e, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn kl_examples() {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::from_rows(&[[0.0, 0.0]]));
        let s = tape.constant(Tensor::from_rows(&[[0.0, 3f64.ln()]]));
        let v = kl_loss(&mut tape, t, s, 1.0, Some(&[1.0])).unwrap().value;
        assert!(close(v, 0.143841036225890), "{v}");

        let same = kl_loss(&mut tape, s, s, 0.5, None).unwrap().value;
        assert!(same.abs() < 1e-10);

        let zero = kl_loss(&mut tape, t, s, 1.0, Some(&[0.0])).unwrap().value;
        assert_eq!(zero, 0.0);

        assert!(matches!(kl_loss(&mut tape, t, s, 1.5, None), Err(Error::Config(_))));
        assert!(matches!(kl_loss(&mut tape, t, s, 0.0, None), Err(Error::Config(_))));
    }

    #[test]
    fn kl_gives_teacher_no_gradient() {
        let mut tape = Tape::new();
        let t = Parameter::new("t", Tensor::from_rows(&[[1.0, -0.5], [0.2, 0.1]]));
        let s = Parameter::new("s", Tensor::from_rows(&[[0.0, 0.3], [2.0, -1.0]]));
        let (tv, sv) = (tape.param(&t), tape.param(&s));
        let l = kl_loss(&mut tape, tv, sv, 0.5, None).unwrap();
        let g = tape.backward(l.var).unwrap();
        assert!(g.get("t").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(g.get("s").unwrap().data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn g2m_arithmetic() {
        let mut tape = Tape::new();
        let ce = scalar(&mut tape, 0.6, "ce");
        let kl = scalar(&mut tape, 0.2, "kl");
        let total = combine(&mut tape, &[(0.5, &ce), (0.5, &kl)], "g2m").unwrap();
        assert!(close(total.value, 0.4));
        assert_eq!(total.term("ce"), Some(0.6));
    }

    #[test]
    fn g2m_rejects_lambda_outside() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[[0.0, 1.0]]));
        let t = tape.constant(Tensor::from_rows(&[[1.0, 0.0]]));
        assert!(g2m_loss(&mut tape, z, &[0], &[0], t, 1.0, 0.0, Bounds::Open).is_err());
        assert!(g2m_loss(&mut tape, z, &[0], &[0], t, 1.0, 0.0, Bounds::Sweep).is_ok());
        // λ=1 in sweep mode leaves only CE
        let only_ce = g2m_loss(&mut tape, z, &[0], &[0], t, 1.0, 1.0, Bounds::Sweep).unwrap();
        let ce = ce_loss(&mut tape, z, &[0]).unwrap();
        assert!(close(only_ce.value, ce.value));
    }

    fn scalar(tape: &mut Tape, v: f64, name: &str) -> LossValue {
        let var = tape.constant(Tensor::scalar(v));
        LossValue::new(tape, var, name).unwrap()
    }

    #[test]
    fn rc_examples() {
        let mut tape = Tape::new();
        // K=1 reduces to plain CE
        let z = tape.constant(Tensor::from_rows(&[[0.5, -0.5], [0.1, 0.9]]));
        let rc = rc_loss(&mut tape, &[z], &[vec![0, 1]]).unwrap();
        let ce = ce_loss(&mut tape, z, &[0, 1]).unwrap();
        assert!(close(rc.value, ce.value));

        // identical equal-size subsets average to the pooled CE
        let a = tape.constant(Tensor::from_rows(&[[0.5, -0.5], [0.1, 0.9]]));
        let b = tape.constant(Tensor::from_rows(&[[2.0, 0.0], [0.0, 1.0]]));
        let pooled_rows = tape.constant(Tensor::from_rows(&[[0.5, -0.5], [0.1, 0.9], [2.0, 0.0], [0.0, 1.0]]));
        let rc = rc_loss(&mut tape, &[a, b], &[vec![0, 1], vec![1, 0]]).unwrap();
        let pooled = ce_loss(&mut tape, pooled_rows, &[0, 1, 1, 0]).unwrap();
        assert!(close(rc.value, pooled.value));

        let e = tape.constant(Tensor::zeros(0, 2));
        assert!(rc_loss(&mut tape, &[a, e], &[vec![0, 1], vec![]]).is_err());
    }

    #[test]
    fn rc_two_student_mean() {
        // K=2 with stage losses 0.2 and 0.6 → 0.4
        let mut tape = Tape::new();
        let a = scalar(&mut tape, 0.2, "ce");
        let b = scalar(&mut tape, 0.6, "ce");
        let m = combine(&mut tape, &[(0.5, &a), (0.5, &b)], "rc").unwrap();
        assert!(close(m.value, 0.4));
    }

    #[test]
    fn na_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[[1.0, 0.0]]));
        let zm = tape.constant(Tensor::from_rows(&[[0.0, 0.0]]));
        assert!(close(na_output_loss(&mut tape, &[z], &[zm]).unwrap().value, 1.0));
        assert_eq!(na_output_loss(&mut tape, &[z], &[z]).unwrap().value, 0.0);

        let z2 = tape.constant(Tensor::from_rows(&[[2.0, 0.0]]));
        assert!(close(na_output_loss(&mut tape, &[z2], &[zm]).unwrap().value, 4.0));

        let h = tape.constant(Tensor::from_rows(&[[1.0, 1.0]]));
        let hm = tape.constant(Tensor::from_rows(&[[0.0, 0.0]]));
        assert!(close(na_hidden_loss(&mut tape, &[vec![h]], &[vec![hm]]).unwrap().value, 2.0));
        assert_eq!(na_hidden_loss(&mut tape, &[vec![h]], &[vec![h]]).unwrap().value, 0.0);
        // L=3: one zero-diff layer and one diff-2.0 layer → 1.0
        assert!(close(
            na_hidden_loss(&mut tape, &[vec![h, h]], &[vec![h, hm]]).unwrap().value,
            1.0
        ));
        assert!(matches!(
            na_hidden_loss(&mut tape, &[vec![h, h]], &[vec![h]]),
            Err(Error::Contract(_))
        ));
        let wide = tape.constant(Tensor::zeros(1, 3));
        assert!(matches!(na_output_loss(&mut tape, &[z], &[wide]), Err(Error::Dimension(_))));
    }

    #[test]
    fn na_combination() {
        let mut tape = Tape::new();
        let o = scalar(&mut tape, 0.4, "na_o");
        let h = scalar(&mut tape, 0.8, "na_h");
        let na = na_loss(&mut tape, Some(&o), Some(&h), 0.5, Bounds::Open).unwrap().unwrap();
        assert!(close(na.value, 0.6));

        let zo = scalar(&mut tape, 0.0, "na_o");
        let zh = scalar(&mut tape, 0.0, "na_h");
        let na = na_loss(&mut tape, Some(&zo), Some(&zh), 0.5, Bounds::Open).unwrap().unwrap();
        assert_eq!(na.value, 0.0);

        let near = na_loss(&mut tape, Some(&o), Some(&h), 0.99, Bounds::Open).unwrap().unwrap();
        assert!((near.value - 0.4).abs() < 0.01);

        assert!(na_loss(&mut tape, Some(&o), Some(&h), 1.0, Bounds::Open).is_err());
        assert!(na_loss(&mut tape, None, None, 0.5, Bounds::Open).unwrap().is_none());
    }

    #[test]
    fn adagmlp_examples() {
        let mut tape = Tape::new();
        let rc = scalar(&mut tape, 0.6, "rc");
        let kd = scalar(&mut tape, 0.2, "adakd");
        let na = scalar(&mut tape, 0.1, "na");
        let total = adagmlp_loss(&mut tape, &rc, &kd, Some(&na), 0.5, Bounds::Open).unwrap();
        assert!(close(total.value, 0.5));
        let no_na = adagmlp_loss(&mut tape, &rc, &kd, None, 0.5, Bounds::Open).unwrap();
        assert!(close(no_na.value, 0.4));
        assert!(adagmlp_loss(&mut tape, &rc, &kd, None, 0.0, Bounds::Open).is_err());
        assert!(adagmlp_loss(&mut tape, &rc, &kd, None, 0.0, Bounds::Sweep).is_ok());
    }
}
