//! Binary checkpoint container: magic `GDCK`, a u32 version, a u64 length
//! and a JSON metadata block, then every parameter as little-endian f64 in
//! the order the metadata lists them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DistillConfig;
use crate::boost::{Combiner, EnsembleWeights};
use crate::error::{Error, Result};
use crate::models::{Architecture, GcnTeacher, MlpStudent};
use crate::numerics::{Parameter, Tensor};

const MAGIC: &[u8; 4] = b"GDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherCheckpoint {
    pub model: GcnTeacher,
    pub best_epoch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleCheckpoint {
    pub method: String,
    pub students: Vec<MlpStudent>,
    pub weights: EnsembleWeights,
    pub combiner: Combiner,
    pub config: DistillConfig,
    pub best_epoch: usize,
}

impl EnsembleCheckpoint {
    pub fn k(&self) -> usize {
        self.students.len()
    }

    pub fn arch(&self) -> &Architecture {
        &self.students[0].arch
    }

    /// Per-student inference logits from features alone.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.students.iter().map(|s| s.predict(x)).collect()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        crate::boost::ensemble_predict(&self.logits(x)?, Some(&self.weights), self.combiner)
    }

    pub fn with_combiner(mut self, combiner: Combiner) -> Self {
        self.combiner = combiner;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Teacher(TeacherCheckpoint),
    Ensemble(EnsembleCheckpoint),
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    id: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Meta {
    Teacher {
        arch: Architecture,
        best_epoch: usize,
        seed: u64,
        params: Vec<ParamMeta>,
    },
    Ensemble {
        method: String,
        arch: Architecture,
        k: usize,
        alpha_bar: EnsembleWeights,
        combiner: Combiner,
        config: DistillConfig,
        best_epoch: usize,
        params: Vec<ParamMeta>,
    },
}

fn describe<'a>(ps: impl Iterator<Item = &'a Parameter>) -> (Vec<ParamMeta>, Vec<&'a Tensor>) {
    ps.map(|p| {
        (
            ParamMeta {
                id: p.id.clone(),
                rows: p.tensor.rows(),
                cols: p.tensor.cols(),
            },
            &p.tensor,
        )
    })
    .unzip()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let (meta, tensors) = match ckpt {
        Checkpoint::Teacher(t) => {
            let (params, tensors) = describe(t.model.params());
            let meta = Meta::Teacher {
                arch: t.model.arch.clone(),
                best_epoch: t.best_epoch,
                seed: t.seed,
                params,
            };
            (meta, tensors)
        }
        Checkpoint::Ensemble(e) => {
            if e.students.is_empty() || e.weights.len() != e.students.len() {
                return Err(Error::Contract("ensemble checkpoint needs one weight per student".into()));
            }
            let (params, tensors) = describe(e.students.iter().flat_map(|s| s.params()));
            let meta = Meta::Ensemble {
                method: e.method.clone(),
                arch: e.arch().clone(),
                k: e.k(),
                alpha_bar: e.weights.clone(),
                combiner: e.combiner,
                config: e.config.clone(),
                best_epoch: e.best_epoch,
                params,
            };
            (meta, tensors)
        }
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
    let payload: usize = tensors.iter().map(|t| t.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format(format!("checkpoint truncated in {what}")));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
}

fn read_params(r: &mut Reader, metas: &[ParamMeta]) -> Result<Vec<Parameter>> {
    metas
        .iter()
        .map(|m| {
            let bytes = r.take(m.rows * m.cols * 8, "parameter payload")?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Parameter::new(m.id.clone(), Tensor::new(m.rows, m.cols, data)?))
        })
        .collect()
}

fn expect_shapes(expected: impl Iterator<Item = (String, [usize; 2])>, got: &[Parameter]) -> Result<()> {
    let expected: Vec<_> = expected.collect();
    if expected.len() != got.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} parameters, architecture needs {}",
            got.len(),
            expected.len()
        )));
    }
    for ((id, shape), p) in expected.iter().zip(got) {
        if *id != p.id || *shape != p.tensor.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter {} {:?} does not match {id} {shape:?}",
                p.id,
                p.tensor.shape()
            )));
        }
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8, "header")?.try_into().expect("8 bytes")) as usize;
    let meta: Meta = serde_json::from_slice(r.take(len, "metadata")?)
        .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let ckpt = match meta {
        Meta::Teacher {
            arch,
            best_epoch,
            seed,
            params,
        } => {
            let params = read_params(&mut r, &params)?;
            // build a skeleton for the expected ids/shapes, then fill it
            let mut model = GcnTeacher::new(arch, &mut crate::rng::stream(0, "skeleton", 0))?;
            expect_shapes(model.params().map(|p| (p.id.clone(), p.tensor.shape())), &params)?;
            for (slot, p) in model.params_mut().zip(params) {
                *slot = p;
            }
            Checkpoint::Teacher(TeacherCheckpoint {
                model,
                best_epoch,
                seed,
            })
        }
        Meta::Ensemble {
            method,
            arch,
            k,
            alpha_bar,
            combiner,
            config,
            best_epoch,
            params,
        } => {
            if k == 0 || alpha_bar.len() != k {
                return Err(Error::Format(format!("ensemble of {k} with {} weights", alpha_bar.len())));
            }
            let params = read_params(&mut r, &params)?;
            let mut skeleton_rng = crate::rng::stream(0, "skeleton", 0);
            let mut students = (0..k)
                .map(|i| MlpStudent::new(&student_prefix(i), arch.clone(), &mut skeleton_rng))
                .collect::<Result<Vec<_>>>()?;
            expect_shapes(
                students
                    .iter()
                    .flat_map(|s| s.params())
                    .map(|p| (p.id.clone(), p.tensor.shape())),
                &params,
            )?;
            let mut it = params.into_iter();
            for s in &mut students {
                for slot in s.params_mut() {
                    *slot = it.next().expect("count checked");
                }
            }
            Checkpoint::Ensemble(EnsembleCheckpoint {
                method,
                students,
                weights: alpha_bar,
                combiner,
                config,
                best_epoch,
            })
        }
    };
    if !r.buf.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.buf.len())));
    }
    Ok(ckpt)
}

pub(crate) fn student_prefix(k: usize) -> String {
    format!("student{}", k + 1)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn teacher() -> Checkpoint {
        let model = GcnTeacher::new(Architecture::new(5, 4, 3, 2, 0.5), &mut rng::stream(1, "t", 0)).unwrap();
        Checkpoint::Teacher(TeacherCheckpoint {
            model,
            best_epoch: 7,
            seed: 1,
        })
    }

    fn ensemble() -> Checkpoint {
        let arch = Architecture::new(5, 4, 3, 2, 0.5);
        let mut r = rng::stream(2, "s", 0);
        let students = (0..3)
            .map(|k| MlpStudent::new(&student_prefix(k), arch.clone(), &mut r).unwrap())
            .collect();
        Checkpoint::Ensemble(EnsembleCheckpoint {
            method: "adagmlp".into(),
            students,
            weights: EnsembleWeights::from_alphas(&[0.1, 1.0 / 3.0, std::f64::consts::PI]).unwrap(),
            combiner: Combiner::AdaBoost,
            config: DistillConfig { k: 3, hidden: 4, ..Default::default() },
            best_epoch: 12,
        })
    }

    #[test]
    fn round_trips_are_exact() {
        for c in [teacher(), ensemble()] {
            let bytes = encode_checkpoint(&c).unwrap();
            assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
        }
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = encode_checkpoint(&ensemble()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(decode_checkpoint(&ver), Err(Error::Format(_))));
        for cut in [2, 10, 40, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))));
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format(_))));
    }
}
