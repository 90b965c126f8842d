//! GCN teacher and MLP student.
//!
//! Each model has a tape forward for training and a tape-free forward for
//! inference. The student inference path takes features only; it never sees
//! graph structure.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{check_dropout, dropout_mask, relu, Parameter, Tape, Tensor, Var};
use crate::rng::Rng;

/// Glorot-uniform `fan_in × fan_out` weight.
pub fn glorot(id: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Parameter {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Parameter::new(id, Tensor::new(fan_in, fan_out, data).expect("sized"))
}

fn layer_widths(input: usize, hidden: usize, output: usize, layers: usize) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|l| {
            let fan_in = if l == 0 { input } else { hidden };
            let fan_out = if l + 1 == layers { output } else { hidden };
            (fan_in, fan_out)
        })
        .collect()
}

/// Architecture of either model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: usize,
    pub dropout: f64,
    pub activation: String,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, layers: usize, dropout: f64) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            layers,
            dropout,
            activation: "relu".into(),
        }
    }

    fn check(&self, min_layers: usize) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.layers < min_layers {
            return Err(Error::Config(format!(
                "need at least {min_layers} layers, got {}",
                self.layers
            )));
        }
        check_dropout(self.dropout)
    }
}

fn apply_dropout(tape: &mut Tape, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !training || p == 0.0 {
        return Ok(x);
    }
    let [r, c] = tape.value(x).shape();
    let mask = dropout_mask(r, c, p, rng)?;
    tape.mul_const(x, mask)
}

/// Graph convolutional teacher: `H ← ReLU(Â H W)` per layer, no biases, and
/// no activation after the last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnTeacher {
    pub arch: Architecture,
    pub weights: Vec<Parameter>,
}

impl GcnTeacher {
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.check(1)?;
        let weights = layer_widths(arch.input_dim, arch.hidden, arch.classes, arch.layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| glorot(format!("teacher.w{}", l + 1), i, o, rng))
            .collect();
        Ok(Self { arch, weights })
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.weights.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.weights.iter_mut()
    }

    fn check_input(&self, adj: &NormalizedAdjacency, x: &Tensor) -> Result<()> {
        if x.cols() != self.arch.input_dim || x.rows() != adj.n() {
            return Err(Error::Dimension(format!(
                "teacher expects {}x{} features, got {:?}",
                adj.n(),
                self.arch.input_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training forward on `tape`; returns logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        adj: &NormalizedAdjacency,
        x: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        self.check_input(adj, tape.value(x))?;
        let mut h = x;
        for (l, w) in self.weights.iter().enumerate() {
            h = apply_dropout(tape, h, self.arch.dropout, training, rng)?;
            let wv = tape.param(w);
            let hw = tape.matmul(h, wv)?;
            h = tape.spmm(adj.matrix(), hw)?;
            if l + 1 < self.weights.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Inference logits, dropout off.
    pub fn predict(&self, adj: &NormalizedAdjacency, x: &Tensor) -> Result<Tensor> {
        self.check_input(adj, x)?;
        let mut h = x.matmul(&self.weights[0].tensor)?;
        h = adj.spmm(&h)?;
        for w in &self.weights[1..] {
            h = relu(&h).matmul(&w.tensor)?;
            h = adj.spmm(&h)?;
        }
        Ok(h)
    }
}

/// Hidden activations and logits of one student forward.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Post-activation hidden layers `h^(1..L-1)`, before dropout.
    pub hidden: Vec<Var>,
    pub logits: Var,
}

/// Plain-tensor counterpart of [`ForwardTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    pub hidden: Vec<Tensor>,
    pub logits: Tensor,
}

/// Feed-forward student with biases and ReLU; `L ≥ 2` layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpStudent {
    pub arch: Architecture,
    pub weights: Vec<Parameter>,
    pub biases: Vec<Parameter>,
}

impl MlpStudent {
    pub fn new(prefix: &str, arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.check(2)?;
        let mut weights = Vec::with_capacity(arch.layers);
        let mut biases = Vec::with_capacity(arch.layers);
        for (l, (i, o)) in layer_widths(arch.input_dim, arch.hidden, arch.classes, arch.layers)
            .into_iter()
            .enumerate()
        {
            weights.push(glorot(format!("{prefix}.w{}", l + 1), i, o, rng));
            biases.push(Parameter::new(format!("{prefix}.b{}", l + 1), Tensor::zeros(1, o)));
        }
        Ok(Self {
            arch,
            weights,
            biases,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.arch.input_dim {
            return Err(Error::Dimension(format!(
                "student expects {} features, got {}",
                self.arch.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, training: bool, rng: &mut Rng) -> Result<ForwardTrace> {
        self.check_input(tape.value(x))?;
        let last = self.weights.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if l > 0 {
                h = apply_dropout(tape, h, self.arch.dropout, training, rng)?;
            }
            let (wv, bv) = (tape.param(w), tape.param(b));
            let z = tape.matmul(h, wv)?;
            h = tape.add_row_bias(z, bv)?;
            if l < last {
                h = tape.relu(h);
                hidden.push(h);
            }
        }
        Ok(ForwardTrace { hidden, logits: h })
    }

    pub fn activations(&self, x: &Tensor) -> Result<Activations> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut cur: Option<Tensor> = None;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = cur.as_ref().unwrap_or(x).matmul(&w.tensor)?;
            for i in 0..z.rows() {
                for (o, &bb) in z.row_mut(i).iter_mut().zip(b.tensor.data()) {
                    *o += bb;
                }
            }
            if l < last {
                let h = relu(&z);
                hidden.push(h.clone());
                cur = Some(h);
            } else {
                cur = Some(z);
            }
        }
        let h = cur.expect("at least one layer");
        Ok(Activations { hidden, logits: h })
    }

    /// Inference logits from features alone.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activations(x)?.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph};
    use rand::SeedableRng;

    fn rng() -> Rng {
        Rng::seed_from_u64(11)
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = Architecture::new(2, 2, 2, 2, 0.0);
        let a = MlpStudent::new("s", arch.clone(), &mut rng()).unwrap();
        let b = MlpStudent::new("s", arch, &mut rng()).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 4.0).sqrt();
        for w in &a.weights {
            assert!(w.tensor.data().iter().all(|v| v.abs() <= bound));
        }
        for b in &a.biases {
            assert!(b.tensor.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gcn_path_example() {
        let adj = normalize_adjacency(&Graph::from_edges(2, [(0, 1)]).unwrap());
        let mut t = GcnTeacher::new(Architecture::new(2, 2, 2, 1, 0.0), &mut rng()).unwrap();
        t.weights[0].tensor = Tensor::eye(2);
        let logits = t.predict(&adj, &Tensor::eye(2)).unwrap();
        assert!(logits.max_abs_diff(&Tensor::full(2, 2, 0.5)) < 1e-12);

        let mut tape = Tape::new();
        let x = tape.constant(Tensor::eye(2));
        let out = t.forward(&mut tape, &adj, x, false, &mut rng()).unwrap();
        assert_eq!(tape.value(out), &logits);
    }

    #[test]
    fn gcn_edgeless_is_linear() {
        let adj = normalize_adjacency(&Graph::from_edges(3, []).unwrap());
        let t = GcnTeacher::new(Architecture::new(4, 3, 2, 1, 0.5), &mut rng()).unwrap();
        let x = Tensor::from_rows(&[[1.0, 0.0, 2.0, -1.0], [0.5, 0.5, 0.5, 0.5], [0.0, 3.0, 0.0, 1.0]]);
        assert_eq!(t.predict(&adj, &x).unwrap(), x.matmul(&t.weights[0].tensor).unwrap());
    }

    #[test]
    fn gcn_eval_ignores_rng() {
        let adj = normalize_adjacency(&Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap());
        let t = GcnTeacher::new(Architecture::new(2, 4, 2, 2, 0.5), &mut rng()).unwrap();
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let run = |seed| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let out = t
                .forward(&mut tape, &adj, xv, false, &mut Rng::seed_from_u64(seed))
                .unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(1), run(2));
        assert_eq!(run(1), t.predict(&adj, &x).unwrap());
    }

    #[test]
    fn mlp_examples() {
        let arch = Architecture::new(2, 2, 2, 2, 0.0);
        let mut s = MlpStudent::new("s", arch, &mut rng()).unwrap();
        for w in &mut s.weights {
            w.tensor = Tensor::zeros(2, 2);
        }
        let x = Tensor::from_rows(&[[1.0, -1.0]]);
        let a = s.activations(&x).unwrap();
        assert_eq!(a.logits, Tensor::zeros(1, 2));
        assert_eq!(a.hidden, vec![Tensor::zeros(1, 2)]);

        for w in &mut s.weights {
            w.tensor = Tensor::eye(2);
        }
        let a = s.activations(&x).unwrap();
        assert_eq!(a.hidden, vec![Tensor::from_rows(&[[1.0, 0.0]])]);
        assert_eq!(a.logits, Tensor::from_rows(&[[1.0, 0.0]]));

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let tr = s.forward(&mut tape, xv, false, &mut rng()).unwrap();
        assert_eq!(tape.value(tr.hidden[0]), &a.hidden[0]);
        assert_eq!(tape.value(tr.logits), &a.logits);
    }

    #[test]
    fn trace_length() {
        let s = MlpStudent::new("s", Architecture::new(3, 4, 2, 3, 0.0), &mut rng()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(2, 3, 1.0));
        let tr = s.forward(&mut tape, x, true, &mut rng()).unwrap();
        assert_eq!(tr.hidden.len(), 2);
        assert!(MlpStudent::new("s", Architecture::new(3, 4, 2, 1, 0.0), &mut rng()).is_err());
    }

    #[test]
    fn dimension_errors() {
        let s = MlpStudent::new("s", Architecture::new(3, 4, 2, 2, 0.0), &mut rng()).unwrap();
        assert!(matches!(s.predict(&Tensor::zeros(1, 2)), Err(Error::Dimension(_))));
        let adj = normalize_adjacency(&Graph::from_edges(2, []).unwrap());
        let t = GcnTeacher::new(Architecture::new(3, 4, 2, 2, 0.0), &mut rng()).unwrap();
        assert!(t.predict(&adj, &Tensor::zeros(3, 3)).is_err());
    }
}
