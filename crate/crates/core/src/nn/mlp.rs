use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamKind, ParameterSet};
use crate::error::{ensure, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// A labelled feature vector. Labels are 0 (unstressed) or 1 (stressed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Example {
    pub fn new(features: Vec<f64>, label: u8) -> Self {
        Self { features, label }
    }
}

/// Keep/scale factors for the first hidden layer: each entry is either 0
/// or `1 / keep_probability` (inverted dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

pub enum Pass<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(ParameterSet);

impl Gradient {
    pub fn new(params: ParameterSet) -> Self {
        Self(params)
    }

    pub fn params(&self) -> &ParameterSet {
        &self.0
    }

    pub fn into_params(self) -> ParameterSet {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.l2_norm()
    }
}

/// Global L2-norm clipping: gradients with norm above `max_norm` are scaled
/// down onto the ball, others pass through untouched.
pub fn clip_gradient(g: &Gradient, max_norm: f64) -> Result<Gradient> {
    Ok(Gradient(g.0.clip_l2(max_norm)?))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a single prediction.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Dense network with ReLU hidden layers, optional dropout after the first
/// hidden layer and a single sigmoid output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    params: ParameterSet,
    dropout_rate: f64,
}

pub const DEFAULT_DIMS: [usize; 4] = [12, 128, 32, 1];

impl MlpModel {
    fn validate(dims: &[usize], dropout_rate: f64) -> Result<()> {
        ensure!(
            dims.len() >= 2,
            Config,
            "a model needs at least input and output widths, got {dims:?}"
        );
        ensure!(
            dims.iter().all(|&d| d > 0),
            Config,
            "layer widths must be positive, got {dims:?}"
        );
        ensure!(
            *dims.last().unwrap() == 1,
            Config,
            "output layer must have a single sigmoid unit, got {dims:?}"
        );
        ensure!(
            (0.0..1.0).contains(&dropout_rate),
            Config,
            "dropout rate must lie in [0, 1), got {dropout_rate}"
        );
        Ok(())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], dropout_rate: f64, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(dims, dropout_rate)?;
        let layout = Arc::clone(model.params.layout());
        for (i, block) in layout.blocks().iter().enumerate() {
            if block.kind != ParamKind::Weight {
                continue;
            }
            let (fan_out, fan_in) = block.shape;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut model.params.values_mut()[layout.range(i)] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize], dropout_rate: f64) -> Result<Self> {
        Self::validate(dims, dropout_rate)?;
        Ok(Self {
            dims: dims.to_vec(),
            params: ParameterSet::zeros(Arc::new(Layout::dense(dims))),
            dropout_rate,
        })
    }

    pub fn from_params(dims: &[usize], dropout_rate: f64, params: ParameterSet) -> Result<Self> {
        Self::validate(dims, dropout_rate)?;
        ensure!(
            **params.layout() == Layout::dense(dims),
            Contract,
            "parameter layout does not match dims {dims:?}"
        );
        Ok(Self {
            dims: dims.to_vec(),
            params,
            dropout_rate,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        Ok(())
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn has_dropout(&self) -> bool {
        self.n_layers() >= 2 && self.dropout_rate > 0.0
    }

    fn weights(&self, layer: usize) -> &[f64] {
        self.params.block(2 * layer)
    }

    fn bias(&self, layer: usize) -> &[f64] {
        self.params.block(2 * layer + 1)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure!(
            x.len() == self.dims[0],
            Contract,
            "input has {} features, model expects {}",
            x.len(),
            self.dims[0]
        );
        Ok(())
    }

    /// Draws an inverted-dropout mask for the first hidden layer. Models
    /// without a hidden layer or with zero dropout get an all-ones mask.
    pub fn sample_dropout_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> DropoutMask {
        let width = if self.n_layers() >= 2 {
            self.dims[1]
        } else {
            0
        };
        if !self.has_dropout() {
            return DropoutMask(vec![1.0; width]);
        }
        let keep = 1.0 - self.dropout_rate;
        DropoutMask(
            (0..width)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    fn run(&self, x: &[f64], mask: Option<&DropoutMask>, ws: &mut Workspace) -> f64 {
        let n = self.n_layers();
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for l in 0..n {
            let (fan_out, fan_in) = (self.dims[l + 1], self.dims[l]);
            let w = self.weights(l);
            let b = self.bias(l);
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let pre = &mut ws.pre[l];
            pre.clear();
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let s: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum();
                pre.push(s + b[j]);
            }
            if l + 1 < n {
                let out = &mut next[0];
                out.clear();
                out.extend(pre.iter().map(|&z| z.max(0.0)));
                if l == 0 {
                    if let Some(m) = mask {
                        out.iter_mut().zip(&m.0).for_each(|(a, k)| *a *= k);
                    }
                }
            }
        }
        ws.pre[n - 1][0]
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<f64> {
        self.check_input(x)?;
        if let Some(m) = mask {
            ensure!(
                self.n_layers() >= 2 && m.0.len() == self.dims[1],
                Contract,
                "dropout mask width {} does not match first hidden layer",
                m.0.len()
            );
        }
        let mut ws = Workspace::new(&self.dims);
        Ok(self.run(x, mask, &mut ws))
    }

    /// Probability of the positive class, strictly inside (0, 1).
    pub fn forward(&self, x: &[f64], pass: Pass<'_>) -> Result<f64> {
        let z = match pass {
            Pass::Infer => self.logit(x, None)?,
            Pass::Train(rng) => {
                let mask = self.sample_dropout_mask(rng);
                self.logit(x, Some(&mask))?
            }
        };
        Ok(sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut ws = Workspace::new(&self.dims);
        xs.iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(sigmoid(self.run(x, None, &mut ws)))
            })
            .collect()
    }

    /// Mean binary cross-entropy in inference mode.
    pub fn mean_loss(&self, batch: &[&Example]) -> Result<f64> {
        ensure!(!batch.is_empty(), Contract, "loss of an empty batch");
        let mut ws = Workspace::new(&self.dims);
        let mut total = 0.0;
        for ex in batch {
            self.check_input(&ex.features)?;
            let p = sigmoid(self.run(&ex.features, None, &mut ws));
            total += bce_loss(p, f64::from(ex.label));
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of the mean batch cross-entropy with respect to every
    /// parameter, plus the batch loss. `masks`, when given, must hold one
    /// dropout mask per example (as drawn for this batch's forward pass).
    pub fn backward(
        &self,
        batch: &[&Example],
        masks: Option<&[DropoutMask]>,
    ) -> Result<(Gradient, f64)> {
        ensure!(
            !batch.is_empty(),
            Contract,
            "backward pass on an empty batch"
        );
        if let Some(m) = masks {
            ensure!(
                m.len() == batch.len(),
                Contract,
                "{} dropout masks for a batch of {}",
                m.len(),
                batch.len()
            );
        }
        let n = self.n_layers();
        let inv_n = 1.0 / batch.len() as f64;
        let mut grad = ParameterSet::zeros(Arc::clone(self.params.layout()));
        let layout = Arc::clone(self.params.layout());
        let mut ws = Workspace::new(&self.dims);
        let mut delta: Vec<f64> = Vec::new();
        let mut back: Vec<f64> = Vec::new();
        let mut loss = 0.0;

        for (i, ex) in batch.iter().enumerate() {
            self.check_input(&ex.features)?;
            let mask = masks.map(|m| &m[i]);
            let z = self.run(&ex.features, mask, &mut ws);
            let p = sigmoid(z);
            let y = f64::from(ex.label);
            loss += bce_loss(p, y);

            delta.clear();
            delta.push((p - y) * inv_n);
            for l in (0..n).rev() {
                let (fan_out, fan_in) = (self.dims[l + 1], self.dims[l]);
                let input = &ws.acts[l];
                {
                    let g = grad.values_mut();
                    let gw = &mut g[layout.range(2 * l)];
                    for j in 0..fan_out {
                        let d = delta[j];
                        if d != 0.0 {
                            let row = &mut gw[j * fan_in..(j + 1) * fan_in];
                            row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                        }
                    }
                    let gb = &mut g[layout.range(2 * l + 1)];
                    gb.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
                }
                if l == 0 {
                    break;
                }
                let w = self.weights(l);
                back.clear();
                back.resize(fan_in, 0.0);
                for j in 0..fan_out {
                    let d = delta[j];
                    if d != 0.0 {
                        let row = &w[j * fan_in..(j + 1) * fan_in];
                        back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
                    }
                }
                if l == 1 {
                    if let Some(m) = mask {
                        back.iter_mut().zip(&m.0).for_each(|(b, k)| *b *= k);
                    }
                }
                for (b, &z) in back.iter_mut().zip(&ws.pre[l - 1]) {
                    if z <= 0.0 {
                        *b = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut back);
            }
        }
        Ok((Gradient(grad), loss * inv_n))
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(dims: &[usize]) -> Self {
        Self {
            acts: dims[..dims.len() - 1]
                .iter()
                .map(|&d| Vec::with_capacity(d))
                .collect(),
            pre: dims[1..].iter().map(|&d| Vec::with_capacity(d)).collect(),
        }
    }
}
