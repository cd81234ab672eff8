//! Feed-forward ReLU classifiers.
//!
//! Weights are stored `[fan_in, fan_out]` row-major so a batch of inputs
//! (one example per row) multiplies on the left.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{MisdError, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::{self, matmul_raw, Graph, NodeId, Tensor};

const CHECKPOINT_MAGIC: &str = "misd-classifier";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub probabilities: Vec<f64>,
}

/// Parameter leaves registered on a graph by [`Classifier::forward_graph`].
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(MisdError::Parameter(
            "layer_dims needs at least an input and an output width".into(),
        ));
    }
    if layer_dims.iter().any(|&w| w == 0) {
        return Err(MisdError::Parameter("layer widths must be positive".into()));
    }
    if *layer_dims.last().unwrap() < 2 {
        return Err(MisdError::Parameter("a classifier needs at least 2 classes".into()));
    }
    Ok(())
}

impl Classifier {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
                fan_in: w[0],
                fan_out: w[1],
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_dims)?;
        let mut rng = stream_rng(seed, stream::INIT);
        for layer in &mut model.layers {
            let std = (2.0 / layer.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut layer.weight {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    /// Builds a classifier from `(weight, bias)` pairs, weights `[fan_in, fan_out]` row-major.
    pub fn from_parameters(layer_dims: &[usize], params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        validate_dims(layer_dims)?;
        if params.len() != layer_dims.len() - 1 {
            return Err(MisdError::Dimension(format!(
                "{} layers declared, {} parameter pairs given",
                layer_dims.len() - 1,
                params.len()
            )));
        }
        let mut layers = Vec::with_capacity(params.len());
        for (i, (weight, bias)) in params.into_iter().enumerate() {
            let (fan_in, fan_out) = (layer_dims[i], layer_dims[i + 1]);
            if weight.len() != fan_in * fan_out || bias.len() != fan_out {
                return Err(MisdError::Dimension(format!(
                    "layer {i} expects weight {fan_in}x{fan_out} and bias {fan_out}"
                )));
            }
            if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(MisdError::Numeric(format!("layer {i} has non-finite parameters")));
            }
            layers.push(Layer {
                weight,
                bias,
                fan_in,
                fan_out,
            });
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(MisdError::Dimension(format!(
                "input has {len} features, model expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        Ok(self.forward_rows(x, 1))
    }

    /// Logits for `n` row-major inputs, `n x K` row-major.
    pub fn logits_batch(&self, xs: &[f64], n: usize) -> Result<Vec<f64>> {
        if n == 0 || xs.len() != n * self.input_dim() {
            return Err(MisdError::Dimension(format!(
                "batch of {n} rows needs {} values, got {}",
                n * self.input_dim(),
                xs.len()
            )));
        }
        Ok(self.forward_rows(xs, n))
    }

    fn forward_rows(&self, xs: &[f64], n: usize) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = xs.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = matmul_raw(&h, &layer.weight, n, layer.fan_in, layer.fan_out);
            for row in out.chunks_mut(layer.fan_out) {
                for (o, b) in row.iter_mut().zip(&layer.bias) {
                    *o += b;
                }
                if li != last {
                    row.iter_mut().for_each(|v| {
                        if *v <= 0.0 {
                            *v = 0.0
                        }
                    });
                }
            }
            h = out;
        }
        h
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(tensor::argmax(&self.logits(x)?))
    }

    pub fn predict_batch(&self, xs: &[f64], n: usize) -> Result<Vec<usize>> {
        let k = self.num_classes();
        Ok(self.logits_batch(xs, n)?.chunks(k).map(tensor::argmax).collect())
    }

    pub fn prediction(&self, x: &[f64], temperature: f64) -> Result<Prediction> {
        let logits = self.logits(x)?;
        let probabilities = tensor::softmax(&logits, temperature)?;
        Ok(Prediction {
            predicted_class: tensor::argmax(&logits),
            logits,
            probabilities,
        })
    }

    /// Records the forward pass of `input` (an `n x d` node) on `graph`.
    /// Parameters become leaves; they track gradients when `param_grad` is set.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        input: NodeId,
        param_grad: bool,
    ) -> Result<(NodeId, ParamNodes)> {
        let (_, d) = graph.value(input).rows_cols()?;
        self.check_input(d)?;
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        let mut h = input;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut w = Tensor::matrix(layer.fan_in, layer.fan_out, layer.weight.clone())?;
            let mut b = Tensor::vector(layer.bias.clone())?;
            if param_grad {
                w = w.with_grad();
                b = b.with_grad();
            }
            let wn = graph.leaf(w);
            let bn = graph.leaf(b);
            weights.push(wn);
            biases.push(bn);
            let z = graph.matmul(h, wn)?;
            h = graph.add_row(z, bn)?;
            if li != last {
                h = graph.relu(h)?;
            }
        }
        Ok((h, ParamNodes { weights, biases }))
    }

    /// `∇_x CE(f(x)/T, y)`.
    pub fn input_gradient(&self, x: &[f64], label: usize, temperature: f64) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        self.input_gradient_batch(x, &[label], temperature)
    }

    /// Per-example input gradients of the cross-entropy for `labels.len()` rows.
    pub fn input_gradient_batch(&self, xs: &[f64], labels: &[usize], temperature: f64) -> Result<Vec<f64>> {
        let n = labels.len();
        if n == 0 || xs.len() != n * self.input_dim() {
            return Err(MisdError::Dimension(format!(
                "{n} labels do not match {} input values",
                xs.len()
            )));
        }
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(n, self.input_dim(), xs.to_vec())?.with_grad());
        let (logits, _) = self.forward_graph(&mut g, x, false)?;
        let per_row = g.cross_entropy_rows(logits, labels, temperature)?;
        let total = g.sum(per_row)?;
        g.backward(total)?;
        Ok(g.grad(x).expect("input tracks gradients").to_vec())
    }

    /// SHA-256 over the little-endian bytes of the layer widths and every parameter.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for &w in &self.layer_dims {
            hasher.update((w as u64).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weight.iter().chain(&layer.bias) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Plain-text checkpoint; see the README for the layout.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "layer_dims {}", dims.join(" "));
        let _ = writeln!(out, "num_classes {}", self.num_classes());
        for (i, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "weight {i} {} {}", layer.fan_in, layer.fan_out);
            for row in layer.weight.chunks(layer.fan_out) {
                let _ = writeln!(out, "{}", join_floats(row));
            }
            let _ = writeln!(out, "bias {i} {}", layer.fan_out);
            let _ = writeln!(out, "{}", join_floats(&layer.bias));
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.trim()))
                .ok_or_else(|| checkpoint_err(0, &format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(checkpoint_err(ln, "missing checkpoint header"));
        }
        let version: u32 = parse_field(parts.next(), ln, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(checkpoint_err(ln, &format!("unsupported version {version}")));
        }

        let (ln, dims_line) = next("layer_dims")?;
        let dims_rest = dims_line
            .strip_prefix("layer_dims")
            .ok_or_else(|| checkpoint_err(ln, "expected layer_dims"))?;
        let layer_dims: Vec<usize> = dims_rest
            .split_whitespace()
            .map(|t| parse_field(Some(t), ln, "layer width"))
            .collect::<Result<_>>()?;
        validate_dims(&layer_dims).map_err(|e| checkpoint_err(ln, &e.to_string()))?;

        let (ln, k_line) = next("num_classes")?;
        let k: usize = parse_field(k_line.strip_prefix("num_classes").map(str::trim), ln, "num_classes")?;
        if k != *layer_dims.last().unwrap() {
            return Err(checkpoint_err(ln, "num_classes disagrees with final layer width"));
        }

        let mut params = Vec::new();
        for i in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[i], layer_dims[i + 1]);
            let (ln, wh) = next("weight header")?;
            if wh != format!("weight {i} {fan_in} {fan_out}") {
                return Err(checkpoint_err(ln, &format!("expected `weight {i} {fan_in} {fan_out}`")));
            }
            let mut weight = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in {
                let (ln, row) = next("weight row")?;
                let vals = parse_floats(row, ln)?;
                if vals.len() != fan_out {
                    return Err(checkpoint_err(ln, &format!("expected {fan_out} values")));
                }
                weight.extend(vals);
            }
            let (ln, bh) = next("bias header")?;
            if bh != format!("bias {i} {fan_out}") {
                return Err(checkpoint_err(ln, &format!("expected `bias {i} {fan_out}`")));
            }
            let (ln, row) = next("bias row")?;
            let bias = parse_floats(row, ln)?;
            if bias.len() != fan_out {
                return Err(checkpoint_err(ln, &format!("expected {fan_out} values")));
            }
            params.push((weight, bias));
        }
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(checkpoint_err(ln, "expected `end`"));
        }
        Self::from_parameters(&layer_dims, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| MisdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MisdError::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(line: &str, ln: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| parse_field(Some(t), ln, "parameter value"))
        .collect()
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, ln: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| checkpoint_err(ln, &format!("cannot parse {what}")))
}

fn checkpoint_err(line: usize, message: &str) -> MisdError {
    MisdError::Format {
        offset: line as u64,
        message: format!("checkpoint line {line}: {message}"),
    }
}
