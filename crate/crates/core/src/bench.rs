//! Pass accounting and throughput measurement for the confidence scores.
//!
//! All model access by the estimators goes through [`CountingModel`], so the
//! forward/backward tallies are exact rather than sampled. One "pass" is one
//! example through the network; a batched call over `n` rows counts `n`.

use std::cell::Cell;
use std::time::Instant;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{MisdError, Result};
use crate::model::Classifier;
use crate::scores::{confidence, ScoreConfig};
use crate::tensor::{self, Graph, Tensor};

#[derive(Debug, Default, Clone)]
pub struct PassCounter {
    forwards: Cell<u64>,
    backwards: Cell<u64>,
    wall_time: Cell<f64>,
}

impl PassCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forwards(&self) -> u64 {
        self.forwards.get()
    }

    pub fn backwards(&self) -> u64 {
        self.backwards.get()
    }

    pub fn wall_time(&self) -> f64 {
        self.wall_time.get()
    }

    pub fn add_forwards(&self, n: u64) {
        self.forwards.set(self.forwards.get() + n);
    }

    pub fn add_backwards(&self, n: u64) {
        self.backwards.set(self.backwards.get() + n);
    }

    pub fn add_wall_time(&self, seconds: f64) {
        self.wall_time.set(self.wall_time.get() + seconds);
    }

    pub fn reset(&self) {
        self.forwards.set(0);
        self.backwards.set(0);
        self.wall_time.set(0.0);
    }

    pub fn merge(&self, other: &PassCounter) {
        self.add_forwards(other.forwards());
        self.add_backwards(other.backwards());
        self.add_wall_time(other.wall_time());
    }
}

/// A read-only classifier with a pass tally.
#[derive(Debug)]
pub struct CountingModel<'a> {
    model: &'a Classifier,
    counter: PassCounter,
}

impl<'a> CountingModel<'a> {
    pub fn new(model: &'a Classifier) -> Self {
        Self {
            model,
            counter: PassCounter::new(),
        }
    }

    pub fn model(&self) -> &Classifier {
        self.model
    }

    pub fn counter(&self) -> &PassCounter {
        &self.counter
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.counter.add_forwards(1);
        self.model.logits(x)
    }

    pub fn logits_batch(&self, xs: &[f64], n: usize) -> Result<Vec<f64>> {
        self.counter.add_forwards(n as u64);
        self.model.logits_batch(xs, n)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(tensor::argmax(&self.logits(x)?))
    }

    /// One forward and one backward pass: returns the logits at `x` and
    /// `∇_x CE(f(x)/T, label)`, where `label = None` means the predicted class.
    pub fn logits_and_input_gradient(
        &self,
        x: &[f64],
        label: Option<usize>,
        temperature: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.logits_and_objective_gradient(x, temperature, |g, logits, z| {
            let y = label.unwrap_or_else(|| tensor::argmax(z));
            g.cross_entropy(logits, &[y], temperature)
        })
    }

    /// Gradient of an arbitrary scalar built on top of the logits node.
    /// The closure receives the graph, the logits node and the logit values.
    pub fn logits_and_objective_gradient(
        &self,
        x: &[f64],
        temperature: f64,
        objective: impl FnOnce(&mut Graph, crate::tensor::NodeId, &[f64]) -> Result<crate::tensor::NodeId>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(temperature > 0.0) {
            return Err(MisdError::Parameter(format!("temperature must be positive, got {temperature}")));
        }
        let mut g = Graph::new();
        let xin = g.leaf(Tensor::vector(x.to_vec())?.with_grad());
        let (logits, _) = self.model.forward_graph(&mut g, xin, false)?;
        self.counter.add_forwards(1);
        let z = g.value(logits).data().to_vec();
        let root = objective(&mut g, logits, &z)?;
        g.backward(root)?;
        self.counter.add_backwards(1);
        let grad = g.grad(xin).expect("input tracks gradients").to_vec();
        Ok((z, grad))
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub images_per_s: f64,
    pub fwd_per_ex: f64,
    pub bwd_per_ex: f64,
}

/// Times each scoring method over `dataset`, single-threaded. Throughput is the
/// median over `repetitions`; pass counts are exact per-example averages.
pub fn benchmark_methods(
    model: &Classifier,
    dataset: &Dataset,
    methods: &[(String, ScoreConfig)],
    repetitions: usize,
) -> Result<Vec<BenchRow>> {
    if repetitions < 3 {
        return Err(MisdError::Parameter(format!(
            "benchmark needs at least 3 repetitions, got {repetitions}"
        )));
    }
    if dataset.is_empty() {
        return Err(MisdError::Parameter("benchmark dataset is empty".into()));
    }
    let n = dataset.len();
    let mut rows = Vec::with_capacity(methods.len());
    for (name, config) in methods {
        let mut rates = Vec::with_capacity(repetitions);
        let mut passes = (0u64, 0u64);
        for rep in 0..repetitions {
            let probe = CountingModel::new(model);
            let start = Instant::now();
            for i in 0..n {
                std::hint::black_box(confidence(&probe, dataset.input(i), config)?);
            }
            let elapsed = start.elapsed().as_secs_f64();
            probe.counter().add_wall_time(elapsed);
            rates.push(n as f64 / elapsed.max(1e-12));
            let counts = (probe.counter().forwards(), probe.counter().backwards());
            if rep > 0 && counts != passes {
                return Err(MisdError::Numeric(format!("{name}: pass counts changed between repetitions")));
            }
            passes = counts;
        }
        rates.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            method: name.clone(),
            images_per_s: rates[rates.len() / 2],
            fwd_per_ex: passes.0 as f64 / n as f64,
            bwd_per_ex: passes.1 as f64 / n as f64,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,images_per_s,fwd_per_ex,bwd_per_ex\n");
    for r in rows {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", r.method, r.images_per_s, r.fwd_per_ex, r.bwd_per_ex));
    }
    out
}
