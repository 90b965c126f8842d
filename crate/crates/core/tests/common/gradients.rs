//! Finite-difference checks of every training loss on a 12-node graph,
//! with dropout off and feature masks drawn once up front.

use graphkd::boost::{adakd_loss, run_cascade, NodeWeights};
use graphkd::error::Result;
use graphkd::graph::{generate_sbm, normalize_adjacency, Dataset, NormalizedAdjacency, SbmConfig};
use graphkd::models::{Architecture, ForwardTrace, GcnTeacher, MlpStudent};
use graphkd::numerics::{grad_check, GradCheckOptions, GradCheckReport, Parameter, Tape, Tensor, Var};
use graphkd::objectives::*;
use graphkd::rng;
use graphkd::trainer::mask_features;

pub const TOL: f64 = 1e-4;

struct Fixture {
    ds: Dataset,
    adj: NormalizedAdjacency,
    masked: Tensor,
    teacher_logits: Tensor,
    students: Vec<MlpStudent>,
    train: Vec<usize>,
}

fn fixture(layers: usize) -> Fixture {
    let ds = generate_sbm(&SbmConfig {
        classes: 3,
        nodes_per_class: 4,
        p_in: 0.7,
        p_out: 0.15,
        feature_dim: 5,
        feature_noise: 0.6,
        seed: 11,
    })
    .unwrap();
    let adj = normalize_adjacency(&ds.graph);
    let arch = Architecture::new(5, 6, 3, layers, 0.0);
    let teacher = GcnTeacher::new(arch.clone(), &mut rng::stream(1, "t", 0)).unwrap();
    let teacher_logits = teacher.predict(&adj, &ds.features).unwrap();
    let mut init = rng::stream(2, "s", 0);
    let students = (0..2)
        .map(|i| MlpStudent::new(&format!("student{}", i + 1), arch.clone(), &mut init).unwrap())
        .collect();
    let masked = mask_features(&ds.features, 0.4, &mut rng::stream(3, "mask", 0)).unwrap();
    Fixture {
        ds,
        adj,
        masked,
        teacher_logits,
        students,
        train: vec![0, 1, 4, 5, 8, 9],
    }
}

fn flat_params(students: &[MlpStudent]) -> Vec<Parameter> {
    students.iter().flat_map(|s| s.params().cloned()).collect()
}

/// Copies of `students` whose parameters hold the probed values on the tape.
/// Forward passes register fresh leaves under the same ids, and the tape
/// sums gradients per id, so the probe leaves need no further wiring.
fn rebuild(students: &[MlpStudent], tape: &Tape, vars: &[Var]) -> Vec<MlpStudent> {
    let mut it = vars.iter();
    students
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for p in s.params_mut() {
                p.tensor = tape.value(*it.next().unwrap()).clone();
            }
            s
        })
        .collect()
}

fn forward_all(tape: &mut Tape, students: &[MlpStudent], x: &Tensor) -> Result<Vec<ForwardTrace>> {
    let mut r = rng::stream(0, "unused", 0);
    let xv = tape.constant(x.clone());
    students.iter().map(|s| s.forward(tape, xv, false, &mut r)).collect()
}

fn run(params: &[Parameter], loss: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> GradCheckReport {
    grad_check(loss, params, &GradCheckOptions::default()).unwrap()
}

pub fn cross_entropy_through_gcn() -> GradCheckReport {
    let f = fixture(2);
    let teacher = GcnTeacher::new(Architecture::new(5, 6, 3, 2, 0.0), &mut rng::stream(4, "t", 0)).unwrap();
    let labels = f.ds.labels_of(&f.train);
    run(&teacher.weights, |tape, vars| {
        let mut t = teacher.clone();
        for (w, v) in t.weights.iter_mut().zip(vars) {
            w.tensor = tape.value(*v).clone();
        }
        let x = tape.constant(f.ds.features.clone());
        let z = t.forward(tape, &f.adj, x, false, &mut rng::stream(0, "unused", 0))?;
        let zt = tape.gather_rows(z, &f.train)?;
        Ok(ce_loss(tape, zt, &labels)?.var)
    })
}

pub fn cross_entropy_through_mlp() -> GradCheckReport {
    let f = fixture(2);
    let labels = f.ds.labels_of(&f.train);
    run(&flat_params(&f.students[..1]), |tape, vars| {
        let s = rebuild(&f.students[..1], tape, vars);
        let tr = forward_all(tape, &s, &f.ds.features)?;
        let z = tape.gather_rows(tr[0].logits, &f.train)?;
        Ok(ce_loss(tape, z, &labels)?.var)
    })
}

pub fn kl_at(tau: f64) -> GradCheckReport {
    let f = fixture(2);
    run(&flat_params(&f.students[..1]), |tape, vars| {
        let s = rebuild(&f.students[..1], tape, vars);
        let tr = forward_all(tape, &s, &f.ds.features)?;
        let t = tape.constant(f.teacher_logits.clone());
        Ok(kl_loss(tape, t, tr[0].logits, tau, None)?.var)
    })
}

pub fn g2m_objective() -> GradCheckReport {
    let f = fixture(2);
    let labels = f.ds.labels_of(&f.train);
    run(&flat_params(&f.students[..1]), |tape, vars| {
        let s = rebuild(&f.students[..1], tape, vars);
        let tr = forward_all(tape, &s, &f.ds.features)?;
        let t = tape.constant(f.teacher_logits.clone());
        Ok(g2m_loss(tape, tr[0].logits, &f.train, &labels, t, 0.7, 0.3, Bounds::Open)?.var)
    })
}

pub fn output_alignment() -> GradCheckReport {
    let f = fixture(2);
    let loss = |tape: &mut Tape, vars: &[Var]| {
        let s = rebuild(&f.students, tape, vars);
        let clean = forward_all(tape, &s, &f.ds.features)?;
        let masked = forward_all(tape, &s, &f.masked)?;
        let c: Vec<Var> = clean.iter().map(|t| t.logits).collect();
        let m: Vec<Var> = masked.iter().map(|t| t.logits).collect();
        Ok(na_output_loss(tape, &c, &m)?.var)
    };
    // The output bias cancels in z − z̃, so its true gradient is zero and a
    // relative error against finite-difference roundoff is meaningless.
    // Check it is (numerically) zero instead and probe everything else.
    let mut params = flat_params(&f.students);
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = loss(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    for p in params.iter_mut().filter(|p| p.id.ends_with(".b2")) {
        let g = grads.get(&p.id).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{}: {g:?}", p.id);
        p.requires_grad = false;
    }
    assert_eq!(params.iter().filter(|p| !p.requires_grad).count(), 2);
    run(&params, loss)
}

pub fn hidden_alignment() -> GradCheckReport {
    let f = fixture(3);
    run(&flat_params(&f.students), |tape, vars| {
        let s = rebuild(&f.students, tape, vars);
        let clean = forward_all(tape, &s, &f.ds.features)?;
        let masked = forward_all(tape, &s, &f.masked)?;
        let c: Vec<Vec<Var>> = clean.into_iter().map(|t| t.hidden).collect();
        let m: Vec<Vec<Var>> = masked.into_iter().map(|t| t.hidden).collect();
        Ok(na_hidden_loss(tape, &c, &m)?.var)
    })
}

pub fn full_objective() -> GradCheckReport {
    let f = fixture(3);
    // node weights are constants of the loss; take them from the initial students
    let init_logits: Vec<Tensor> = f.students.iter().map(|s| s.predict(&f.ds.features).unwrap()).collect();
    let refs: Vec<&Tensor> = init_logits.iter().collect();
    let cascade = run_cascade(NodeWeights::uniform(12).unwrap(), &f.teacher_logits, &refs, 1.0, true).unwrap();
    let subsets = [vec![0, 4, 8], vec![1, 5, 9]];
    let labels: Vec<Vec<usize>> = subsets.iter().map(|s| f.ds.labels_of(s)).collect();

    run(&flat_params(&f.students), |tape, vars| {
        let s = rebuild(&f.students, tape, vars);
        let clean = forward_all(tape, &s, &f.ds.features)?;
        let masked = forward_all(tape, &s, &f.masked)?;
        let logits: Vec<Var> = clean.iter().map(|t| t.logits).collect();
        let sub = logits
            .iter()
            .zip(&subsets)
            .map(|(&z, rows)| tape.gather_rows(z, rows))
            .collect::<Result<Vec<_>>>()?;
        let rc = rc_loss(tape, &sub, &labels)?;
        let t = tape.constant(f.teacher_logits.clone());
        let kd = adakd_loss(tape, t, &logits, 0.8, &cascade.stage_weights)?;
        let m: Vec<Var> = masked.iter().map(|t| t.logits).collect();
        let na_o = na_output_loss(tape, &logits, &m)?;
        let ch: Vec<Vec<Var>> = clean.iter().map(|t| t.hidden.clone()).collect();
        let mh: Vec<Vec<Var>> = masked.iter().map(|t| t.hidden.clone()).collect();
        let na_h = na_hidden_loss(tape, &ch, &mh)?;
        let na = na_loss(tape, Some(&na_o), Some(&na_h), 0.5, Bounds::Open)?;
        Ok(adagmlp_loss(tape, &rc, &kd, na.as_ref(), 0.6, Bounds::Open)?.var)
    })
}

/// Every case of the suite with its report.
pub fn all() -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("ce (gcn)", cross_entropy_through_gcn()),
        ("ce (mlp)", cross_entropy_through_mlp()),
        ("kl tau=0.5", kl_at(0.5)),
        ("kl tau=1", kl_at(1.0)),
        ("g2m", g2m_objective()),
        ("na_o", output_alignment()),
        ("na_h", hidden_alignment()),
        ("adagmlp", full_objective()),
    ]
}
