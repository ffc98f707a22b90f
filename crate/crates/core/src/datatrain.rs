//! Data ingestion and training: IDX (MNIST) files, synthetic separable data,
//! example normalization, even/odd labels, and mini-batch SGD on the
//! logistic loss.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix, RngState};
use crate::relunet::{validate_dims, NetworkWeights};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    MnistTrain,
    MnistTest,
    Synthetic(u64),
    Other(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::MnistTrain => f.write_str("mnist-train"),
            Provenance::MnistTest => f.write_str("mnist-test"),
            Provenance::Synthetic(seed) => write!(f, "synthetic:{seed}"),
            Provenance::Other(s) => f.write_str(s),
        }
    }
}

impl Provenance {
    fn parse(s: &str) -> Self {
        match s {
            "mnist-train" => Provenance::MnistTrain,
            "mnist-test" => Provenance::MnistTest,
            _ => match s.strip_prefix("synthetic:").and_then(|v| v.parse().ok()) {
                Some(seed) => Provenance::Synthetic(seed),
                None => Provenance::Other(s.to_string()),
            },
        }
    }
}

/// Labelled examples with `±1` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Matrix,
    pub labels: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(examples: Matrix, labels: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if labels.len() != examples.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} examples",
                labels.len(),
                examples.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(Error::Consistency(format!("label {bad} is not ±1")));
        }
        Ok(Self {
            examples,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.cols()
    }

    pub fn example(&self, i: usize) -> &[f64] {
        self.examples.row(i)
    }

    /// The first `n` examples (all of them if `n` is larger).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let d = self.dim();
        Dataset::new(
            Matrix::from_vec(n, d, self.examples.as_slice()[..n * d].to_vec())?,
            self.labels[..n].to_vec(),
            self.provenance.clone(),
        )
    }

    /// Cache format: one JSON header line
    /// `{"n":…,"d":…,"provenance":"…","labels":[…]}` followed by `n·d`
    /// little-endian `f64` values, row-major.
    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = CacheHeader {
            n: self.len(),
            d: self.dim(),
            provenance: self.provenance.to_string(),
            labels: self.labels.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.examples.as_slice().len() * 8);
        for v in self.examples.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: CacheHeader = serde_json::from_str(line.trim_end())?;
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let expected = header.n * header.d * 8;
        if payload.len() != expected {
            return Err(Error::Length {
                expected,
                actual: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Dataset::new(
            Matrix::from_vec(header.n, header.d, data)?,
            header.labels,
            Provenance::parse(&header.provenance),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    n: usize,
    d: usize,
    provenance: String,
    labels: Vec<f64>,
}

/// Images and digit labels exactly as stored in an IDX pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDigits {
    /// `n × (rows·cols)` pixel values in `[0, 255]`.
    pub images: Matrix,
    pub digits: Vec<u8>,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl RawDigits {
    /// Even digits map to `+1`, odd to `-1`.
    pub fn into_dataset(self, provenance: Provenance) -> Result<Dataset> {
        let labels = parity_labels(&self.digits)?;
        Dataset::new(self.images, labels, provenance)
    }

    pub fn encode_images(&self) -> Vec<u8> {
        let n = self.digits.len();
        let mut out = Vec::with_capacity(16 + self.images.as_slice().len());
        for word in [IDX_IMAGES_MAGIC, n as u32, self.image_rows as u32, self.image_cols as u32] {
            out.extend_from_slice(&word.to_be_bytes());
        }
        out.extend(self.images.as_slice().iter().map(|&v| v as u8));
        out
    }

    pub fn encode_labels(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.digits.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.digits.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.digits);
        out
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Length {
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX pair from memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<RawDigits> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if images.len() < expected {
        return Err(Error::Length {
            expected,
            actual: images.len(),
        });
    }

    let magic = be_u32(labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = be_u32(labels, 4)? as usize;
    if labels.len() < 8 + n_labels {
        return Err(Error::Length {
            expected: 8 + n_labels,
            actual: labels.len(),
        });
    }
    if n_labels != n {
        return Err(Error::Consistency(format!("{n} images but {n_labels} labels")));
    }
    if n == 0 || rows * cols == 0 {
        return Err(Error::Consistency("empty IDX file".into()));
    }

    let pixels = images[16..expected].iter().map(|&b| b as f64).collect();
    Ok(RawDigits {
        images: Matrix::from_vec(n, rows * cols, pixels)?,
        digits: labels[8..8 + n].to_vec(),
        image_rows: rows,
        image_cols: cols,
    })
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<RawDigits> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

pub fn parity_labels(digits: &[u8]) -> Result<Vec<f64>> {
    digits
        .iter()
        .map(|&d| match d {
            0..=9 if d % 2 == 0 => Ok(1.0),
            0..=9 => Ok(-1.0),
            _ => Err(Error::InvalidLabel(d)),
        })
        .collect()
}

/// Rescales every example to Euclidean norm `target_norm`.
pub fn normalize_examples(ds: &Dataset, target_norm: f64) -> Result<Dataset> {
    if !(target_norm > 0.0 && target_norm.is_finite()) {
        return Err(Error::InvalidInput(format!("target norm {target_norm}")));
    }
    let d = ds.dim();
    let mut data = Vec::with_capacity(ds.len() * d);
    for i in 0..ds.len() {
        let x = ds.example(i);
        let n = norm(x);
        if n == 0.0 {
            return Err(Error::DegenerateExample(i));
        }
        let scale = target_norm / n;
        data.extend(x.iter().map(|v| v * scale));
    }
    Dataset::new(
        Matrix::from_vec(ds.len(), d, data)?,
        ds.labels.clone(),
        ds.provenance.clone(),
    )
}

/// Rejection attempts allowed per requested point.
pub const SYNTHETIC_ATTEMPTS_PER_POINT: usize = 1000;

/// `n` points uniform on the radius-`√d` sphere, labelled by the side of a
/// random hyperplane through the origin, with points closer than `margin`
/// to the hyperplane rejected. The direction is drawn first, then points.
pub fn synthetic_dataset(d: usize, n: usize, margin: f64, rng: RngState) -> Result<Dataset> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidInput("synthetic dataset needs d, n >= 1".into()));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidInput(format!("margin {margin}")));
    }
    let mut g = rng.generator();
    let u = g.sphere_point(d, 1.0);
    let radius = (d as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let cap = SYNTHETIC_ATTEMPTS_PER_POINT * n;
    let mut attempts = 0;
    while labels.len() < n {
        if attempts == cap {
            return Err(Error::SamplingFailure { attempts });
        }
        attempts += 1;
        let x = g.sphere_point(d, radius);
        let side = dot(&u, &x);
        if side.abs() < margin || side == 0.0 {
            continue;
        }
        labels.push(side.signum());
        data.extend(x);
    }
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, Provenance::Synthetic(rng.seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Initial weights come from stream 0 of this seed (variance 1/fan-in
    /// Gaussians); mini-batch shuffles from stream 1.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

fn logistic_loss(margin: f64) -> f64 {
    // log(1 + exp(-margin)) without overflow
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// Mean logistic loss and accuracy (`h > 0` predicts `+1`).
pub fn evaluate(net: &NetworkWeights, ds: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let h = net.output(ds.example(i))?;
        let y = ds.labels[i];
        loss += logistic_loss(y * h);
        if (h > 0.0) == (y > 0.0) {
            correct += 1;
        }
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Mini-batch SGD on the mean logistic loss `log(1 + exp(-y·h(x)))`.
pub fn train_sgd(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    let mut dims = vec![ds.dim()];
    dims.extend(&cfg.hidden_dims);
    dims.push(1);
    validate_dims(&dims)?;
    if cfg.batch_size == 0 || cfg.batch_size > ds.len() {
        return Err(Error::InvalidInput(format!(
            "batch size {} for {} examples",
            cfg.batch_size,
            ds.len()
        )));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidInput(format!("learning rate {}", cfg.learning_rate)));
    }

    let mut net = NetworkWeights::random_normalized(&dims, RngState::new(cfg.seed, 0))?;
    let (initial_loss, _) = evaluate(&net, ds)?;
    let mut shuffler = RngState::new(cfg.seed, 1).generator();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut grads: Vec<Vec<f64>> = net.layers().iter().map(|w| vec![0.0; w.as_slice().len()]).collect();
    let depth = net.depth();

    for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            for &i in batch {
                accumulate_example_gradient(&net, ds.example(i), ds.labels[i], &mut grads);
            }
            let scale = -cfg.learning_rate / batch.len() as f64;
            for (w, g) in net.layers_mut().iter_mut().zip(&grads) {
                axpy(scale, g, w.as_mut_slice());
            }
        }
        if net
            .layers()
            .iter()
            .any(|w| w.as_slice().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::TrainingDivergence { epoch });
        }
        let (loss, _) = evaluate(&net, ds)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch });
        }
    }
    debug_assert_eq!(net.depth(), depth);
    let (final_loss, train_accuracy) = evaluate(&net, ds)?;
    Ok(TrainOutcome {
        weights: net,
        initial_loss,
        final_loss,
        train_accuracy,
    })
}

/// Adds `∂ loss / ∂ W_i` for one example to `grads` (row-major per layer).
fn accumulate_example_gradient(net: &NetworkWeights, x: &[f64], y: f64, grads: &mut [Vec<f64>]) {
    let layers = net.layers();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut current = x.to_vec();
    for layer in &layers[..layers.len() - 1] {
        let pre = layer.mul_vec(&current);
        inputs.push(current);
        current = pre.into_iter().map(|v| v.max(0.0)).collect();
    }
    let h = layers[layers.len() - 1].mul_vec(&current)[0];
    inputs.push(current);

    // d/dh log(1 + exp(-y h)) = -y / (1 + exp(y h))
    let mut delta = vec![-y / (1.0 + (y * h).exp())];
    for i in (0..layers.len()).rev() {
        let cols = layers[i].cols();
        let input = &inputs[i];
        for (r, &dr) in delta.iter().enumerate() {
            if dr != 0.0 {
                axpy(dr, input, &mut grads[i][r * cols..(r + 1) * cols]);
            }
        }
        if i > 0 {
            let mut back = layers[i].vec_mul(&delta);
            // inputs[i] is the post-ReLU output of layer i-1
            for (b, &a) in back.iter_mut().zip(input) {
                if a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
}
