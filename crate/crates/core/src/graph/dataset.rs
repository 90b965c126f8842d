use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const FEATURE_MAGIC: &[u8; 4] = b"GDFM";
const FEATURE_VERSION: u32 = 1;

/// A node-classification problem: structure, features, labels and a split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        let n = self.graph.n();
        if self.features.rows() != n {
            return Err(Error::Validation(format!(
                "{} feature rows for {n} nodes",
                self.features.rows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} nodes",
                self.labels.len()
            )));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Validation(format!(
                "class id {y} >= class count {}",
                self.num_classes
            )));
        }
        if !self.features.all_finite() {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        self.split.validate(n)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        split.validate(self.n())?;
        self.split = split;
        Ok(self)
    }

    /// Graph visible during training: the induced subgraph on observed
    /// nodes for inductive splits (unseen nodes left isolated), the full
    /// graph otherwise.
    pub fn training_graph(&self) -> Result<Graph> {
        match &self.split.observed {
            Some(obs) => self.graph.restrict_to(obs),
            None => Ok(self.graph.clone()),
        }
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            name: self.name.clone(),
            nodes: self.n(),
            edges: self.graph.num_edges(),
            features: self.feature_dim(),
            classes: self.num_classes,
            train: self.split.train.len(),
            val: self.split.val.len(),
            test: self.split.test.len(),
        }
    }
}

/// File locations for [`load_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub graph: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub split: Option<PathBuf>,
    /// When set, labels must lie in `[0, num_classes)`.
    pub num_classes: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DatasetMeta {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    num_classes: Option<usize>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_graph(path: &Path) -> Result<Graph> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing 'nodes <N>' header"))?
        .map_err(|e| Error::io(path, e))?;
    let n: usize = header
        .strip_prefix("nodes ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, 1, format!("expected 'nodes <N>', got {header:?}")))?;
    let mut edges = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, lineno, "expected 'src<TAB>dst'"));
        };
        let u: usize = a
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad node id {a:?}")))?;
        let v: usize = b
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad node id {b:?}")))?;
        if u >= n || v >= n {
            return Err(Error::Validation(format!(
                "{}:{lineno}: edge ({u},{v}) out of range for {n} nodes",
                path.display()
            )));
        }
        edges.push((u, v));
    }
    Graph::from_edges(n, edges)
}

fn read_features(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == "csv") {
        return read_features_csv(path);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = || Error::Format(format!("{}: truncated features file", path.display()));
    if bytes.len() < 24 {
        return Err(truncated());
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported features version {version}",
            path.display()
        )));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let count = rows.checked_mul(cols).ok_or_else(truncated)?;
    let payload = &bytes[24..];
    if payload.len() != count * 4 {
        return Err(truncated());
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(rows, cols, data)
}

fn read_features_csv(path: &Path) -> Result<Tensor> {
    let text = read_to_string(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, k + 1, e.to_string()))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_err(path, k + 1, format!("expected {c} values, got {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Tensor::new(rows, cols.unwrap_or(0), data)
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    let mut labels = vec![None; n];
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (k == 0 && line == "node_id,class_id") {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, k + 1, "expected 'node_id,class_id'"))?;
        let node: usize = a
            .trim()
            .parse()
            .map_err(|_| parse_err(path, k + 1, format!("bad node id {a:?}")))?;
        let class: usize = b
            .trim()
            .parse()
            .map_err(|_| parse_err(path, k + 1, format!("bad class id {b:?}")))?;
        if node >= n {
            return Err(Error::Validation(format!(
                "{}:{}: node {node} out of range for {n} nodes",
                path.display(),
                k + 1
            )));
        }
        if labels[node].replace(class).is_some() {
            return Err(Error::Validation(format!("node {node} labelled twice")));
        }
    }
    let missing = labels.iter().filter(|l| l.is_none()).count();
    if missing > 0 {
        return Err(Error::Validation(format!(
            "{missing} of {n} nodes have no label"
        )));
    }
    Ok(labels.into_iter().map(Option::unwrap).collect())
}

fn read_split(path: &Path) -> Result<Split> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let graph = read_graph(&paths.graph)?;
    let n = graph.n();
    let features = read_features(&paths.features)?;
    if features.rows() != n {
        return Err(Error::Validation(format!(
            "{} feature rows for {n} nodes",
            features.rows()
        )));
    }
    let labels = read_labels(&paths.labels, n)?;
    let inferred = labels.iter().max().map_or(0, |&m| m + 1);
    let num_classes = paths.num_classes.unwrap_or(inferred);
    let split = match &paths.split {
        Some(p) => read_split(p)?,
        None => Split::default(),
    };
    let name = paths
        .graph
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let ds = Dataset {
        name,
        graph,
        features,
        labels,
        num_classes,
        split,
    };
    ds.validate()?;
    Ok(ds)
}

/// Load the conventional directory layout: `graph.txt`, `features.bin` (or
/// `features.csv`), `labels.csv`, optional `split.json` and `meta.json`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = match fs::read_to_string(dir.join("meta.json")) {
        Ok(s) => serde_json::from_str(&s).map_err(|e| parse_err(&dir.join("meta.json"), e.line(), e.to_string()))?,
        Err(_) => DatasetMeta::default(),
    };
    let features = if dir.join("features.bin").exists() {
        dir.join("features.bin")
    } else {
        dir.join("features.csv")
    };
    let split = dir.join("split.json");
    let mut ds = load_dataset(&DatasetPaths {
        graph: dir.join("graph.txt"),
        features,
        labels: dir.join("labels.csv"),
        split: split.exists().then_some(split),
        num_classes: meta.num_classes,
    })?;
    if let Some(name) = meta.name {
        ds.name = name;
    }
    Ok(ds)
}

/// Write `ds` in the directory layout read by [`load_dataset_dir`].
/// Features are stored as 32-bit floats.
pub fn save_dataset_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };

    let mut g = Vec::new();
    writeln!(g, "nodes {}", ds.n()).unwrap();
    for (i, j) in ds.graph.edges().filter(|(i, j)| i < j) {
        writeln!(g, "{i}\t{j}").unwrap();
    }
    write("graph.txt", &g)?;

    let mut f = Vec::with_capacity(24 + ds.features.len() * 4);
    f.extend_from_slice(FEATURE_MAGIC);
    f.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    f.extend_from_slice(&(ds.features.rows() as u64).to_le_bytes());
    f.extend_from_slice(&(ds.features.cols() as u64).to_le_bytes());
    for &v in ds.features.data() {
        f.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write("features.bin", &f)?;

    let mut l = String::from("node_id,class_id\n");
    for (i, y) in ds.labels.iter().enumerate() {
        l.push_str(&format!("{i},{y}\n"));
    }
    write("labels.csv", l.as_bytes())?;

    write("split.json", serde_json::to_string(&ds.split).unwrap().as_bytes())?;
    let meta = DatasetMeta {
        name: Some(ds.name.clone()),
        num_classes: Some(ds.num_classes),
    };
    write("meta.json", serde_json::to_string_pretty(&meta).unwrap().as_bytes())
}
