use rand::seq::index::sample;
use rand::SeedableRng;

use super::tape::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates probed per parameter; `None` checks all of them.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the probe crossed a ReLU kink.
    pub skipped_kinks: usize,
}

fn evaluate<F>(loss_fn: &F, params: &[Parameter]) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    Ok((tape, loss))
}

/// Compare the tape's analytic gradient against central finite differences.
///
/// `loss_fn` must be deterministic. Relative error per coordinate is
/// `|a − fd| / max(|a|, |fd|, 1e-8)`; the worst one is reported.
pub fn grad_check<F>(loss_fn: F, params: &[Parameter], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::Config(format!(
            "finite-difference step must be in [1e-7, 1e-3], got {}",
            opts.eps
        )));
    }
    let (tape, loss) = evaluate(&loss_fn, params)?;
    let grads = tape.backward(loss)?;
    let mut rng = Rng::seed_from_u64(opts.seed);

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let analytic = grads
            .get(&p.id)
            .ok_or_else(|| Error::Contract(format!("no gradient for {}", p.id)))?;
        let n = p.tensor.len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = p.tensor.data()[c];
            work[pi].tensor.data_mut()[c] = orig + opts.eps;
            let (tp, lp) = evaluate(&loss_fn, &work)?;
            work[pi].tensor.data_mut()[c] = orig - opts.eps;
            let (tm, lm) = evaluate(&loss_fn, &work)?;
            work[pi].tensor.data_mut()[c] = orig;

            if tp.kink_signature() != tm.kink_signature() {
                report.skipped_kinks += 1;
                continue;
            }
            let fd = (tp.value(lp).item()? - tm.value(lm).item()?) / (2.0 * opts.eps);
            let a = analytic.data()[c];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
