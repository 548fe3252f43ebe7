use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Conv2d, Dense};
use super::tensor::Tensor;
use super::NnError;
use crate::features::{
    FeatureMatrix, Normalizer, PermutationTable, FEATURE_COUNT, FEATURE_VERSION, MATRIX_ROWS,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub conv_filters: Vec<usize>,
    pub kernel: (usize, usize),
    /// Hidden dense widths; a single linear output unit is appended.
    pub dense_widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { conv_filters: vec![32, 64, 128], kernel: (2, 2), dense_widths: vec![128, 64] }
    }
}

/// Steering-angle regressor: ELU conv stack, ELU dense stack, linear output.
/// Carries everything needed to turn a feature frame into a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub format_version: u32,
    pub feature_version: u32,
    pub input_shape: (usize, usize, usize),
    pub conv: Vec<Conv2d>,
    pub dense: Vec<Dense>,
    pub normalizer: Normalizer,
    pub permutations: PermutationTable,
    /// Network output times this gives the wheel angle in rad.
    pub target_scale: f64,
    pub seed: u64,
    pub epochs_trained: usize,
}

impl CnnModel {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(arch, seed, |kind| match kind {
            LayerSpec::Conv { kh, kw, cin, cout } => LayerInit::Conv(Conv2d::he(kh, kw, cin, cout, &mut rng)),
            LayerSpec::Dense { nin, nout, act } => LayerInit::Dense(Dense::he(nin, nout, act, &mut rng)),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(arch: &Architecture) -> Result<Self, NnError> {
        Self::build(arch, 0, |kind| match kind {
            LayerSpec::Conv { kh, kw, cin, cout } => LayerInit::Conv(Conv2d::zeros(kh, kw, cin, cout)),
            LayerSpec::Dense { nin, nout, act } => LayerInit::Dense(Dense::zeros(nin, nout, act)),
        })
    }

    fn build(
        arch: &Architecture,
        seed: u64,
        mut make: impl FnMut(LayerSpec) -> LayerInit,
    ) -> Result<Self, NnError> {
        let input_shape = (MATRIX_ROWS, FEATURE_COUNT, 1);
        let (kh, kw) = arch.kernel;
        let (mut h, mut w, mut c) = input_shape;
        let mut conv = Vec::new();
        for &filters in &arch.conv_filters {
            if h < kh || w < kw {
                return Err(NnError::Shape(format!("conv stack too deep for a {MATRIX_ROWS}x{FEATURE_COUNT} input")));
            }
            if let LayerInit::Conv(l) = make(LayerSpec::Conv { kh, kw, cin: c, cout: filters }) {
                conv.push(l);
            }
            (h, w, c) = (h - kh + 1, w - kw + 1, filters);
        }
        let mut nin = h * w * c;
        let mut dense = Vec::new();
        let widths = arch.dense_widths.iter().map(|&n| (n, Activation::Elu));
        for (nout, act) in widths.chain(std::iter::once((1, Activation::Linear))) {
            if let LayerInit::Dense(l) = make(LayerSpec::Dense { nin, nout, act }) {
                dense.push(l);
            }
            nin = nout;
        }
        let model = Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_version: FEATURE_VERSION,
            input_shape,
            conv,
            dense,
            normalizer: Normalizer::unfitted(),
            permutations: PermutationTable::cyclic(),
            target_scale: 1.0,
            seed,
            epochs_trained: 0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Activation shapes from the input through the last conv layer, then the
    /// dense widths, e.g. `(5,7,1) (4,6,32) (3,5,64) (2,4,128) | 1024 128 64 1`.
    pub fn shape_chain(&self) -> (Vec<(usize, usize, usize)>, Vec<usize>) {
        let mut shapes = vec![self.input_shape];
        for l in &self.conv {
            let (h, w, _) = *shapes.last().unwrap();
            shapes.push((h + 1 - l.kernel_h, w + 1 - l.kernel_w, l.filters));
        }
        let (h, w, c) = *shapes.last().unwrap();
        let mut widths = vec![h * w * c];
        widths.extend(self.dense.iter().map(|d| d.outputs));
        (shapes, widths)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let mut shape = self.input_shape;
        for l in &self.conv {
            l.check()?;
            shape = l.output_shape(shape)?;
        }
        let mut n = shape.0 * shape.1 * shape.2;
        for (k, d) in self.dense.iter().enumerate() {
            d.check()?;
            if d.inputs != n {
                return Err(NnError::Shape(format!(
                    "dense layer {k} expects {} inputs but receives {n}",
                    d.inputs
                )));
            }
            n = d.outputs;
        }
        if n != 1 {
            return Err(NnError::Shape(format!("model must end in one output, got {n}")));
        }
        if !matches!(self.dense.last().map(|d| d.activation), Some(Activation::Linear)) {
            return Err(NnError::Shape("output layer must be linear".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.0 * self.input_shape.1 * self.input_shape.2
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter tensors in a fixed order: each conv layer's weights then
    /// bias, then each dense layer's weights then bias.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.conv {
            v.push(&l.weights);
            v.push(&l.bias);
        }
        for l in &self.dense {
            v.push(&l.weights);
            v.push(&l.bias);
        }
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.conv {
            v.push(&mut l.weights);
            v.push(&mut l.bias);
        }
        for l in &mut self.dense {
            v.push(&mut l.weights);
            v.push(&mut l.bias);
        }
        v
    }

    /// Scalar output (normalized units) for a flat `(5, 7, 1)` input.
    pub fn predict(&self, input: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(input.len(), self.input_len());
        ws.input[..input.len()].copy_from_slice(input);
        self.forward_slots(ws, 1);
        ws.dense.last().expect("at least one dense layer").a[0]
    }

    /// Outputs for many inputs, evaluated `ws.capacity()` at a time.
    pub fn predict_many<'a>(&self, inputs: impl IntoIterator<Item = &'a [f64]>, ws: &mut Workspace) -> Vec<f64> {
        let n_in = self.input_len();
        let mut out = Vec::new();
        let mut b = 0;
        for x in inputs {
            debug_assert_eq!(x.len(), n_in);
            ws.input[b * n_in..(b + 1) * n_in].copy_from_slice(x);
            b += 1;
            if b == ws.cap {
                self.forward_slots(ws, b);
                out.extend_from_slice(&ws.dense.last().expect("dense layer").a[..b]);
                b = 0;
            }
        }
        if b > 0 {
            self.forward_slots(ws, b);
            out.extend_from_slice(&ws.dense.last().expect("dense layer").a[..b]);
        }
        out
    }

    /// Forward pass over the first `b` input slots of `ws`.
    fn forward_slots(&self, ws: &mut Workspace, b: usize) {
        let Workspace { shapes, input, conv, dense, .. } = ws;
        for (k, l) in self.conv.iter().enumerate() {
            let (h, w, _) = shapes[k];
            let (done, rest) = conv.split_at_mut(k);
            let src = if k == 0 { &input[..] } else { &done[k - 1].a[..] };
            let buf = &mut rest[0];
            l.forward_raw(src, h, w, &mut buf.z, b);
            let n = buf.z.len() / ws.cap;
            for (a, &z) in buf.a[..b * n].iter_mut().zip(&buf.z) {
                *a = Activation::Elu.apply(z);
            }
        }
        for (k, l) in self.dense.iter().enumerate() {
            let (done, rest) = dense.split_at_mut(k);
            let src = match (k, conv.last()) {
                (0, Some(last)) => &last.a[..],
                (0, None) => &input[..],
                _ => &done[k - 1].a[..],
            };
            let buf = &mut rest[0];
            l.forward_raw(src, &mut buf.z, b);
            for (a, &z) in buf.a[..b * l.outputs].iter_mut().zip(&buf.z) {
                *a = l.activation.apply(z);
            }
        }
    }

    /// Backpropagates `d_out[s]` (dLoss/dOutput for slot `s`) through the
    /// activations left in `ws` by the matching forward pass, leaving every
    /// layer's pre-activation gradient in its `d` buffer.
    fn backprop_deltas(&self, ws: &mut Workspace, d_out: &[f64]) {
        let b = d_out.len();
        let nc = self.conv.len();
        let nd = self.dense.len();
        ws.dense[nd - 1].d[..b].copy_from_slice(d_out);
        for k in (0..nd).rev() {
            let l = &self.dense[k];
            let buf = &mut ws.dense[k];
            for (d, &z) in buf.d[..b * l.outputs].iter_mut().zip(&buf.z) {
                *d *= l.activation.grad(z);
            }
            if k > 0 {
                let (lo, hi) = ws.dense.split_at_mut(k);
                l.input_grad_raw(&hi[0].d, &mut lo[k - 1].d, b);
            } else if nc > 0 {
                l.input_grad_raw(&ws.dense[0].d, &mut ws.conv[nc - 1].d, b);
            }
        }
        for k in (0..nc).rev() {
            let buf = &mut ws.conv[k];
            let n = buf.z.len() / ws.cap;
            for (d, &z) in buf.d[..b * n].iter_mut().zip(&buf.z) {
                *d *= Activation::Elu.grad(z);
            }
            if k > 0 {
                let (h, w, _) = ws.shapes[k];
                let (lo, hi) = ws.conv.split_at_mut(k);
                self.conv[k].input_grad_raw(h, w, &hi[0].d, &mut lo[k - 1].d, b);
            }
        }
    }

    /// Mean squared error over `batch` and its exact gradient (written to
    /// `grads`). `ws` is grown to the batch size if needed.
    pub fn batch_gradients(&self, batch: &[(&[f64], f64)], ws: &mut Workspace, grads: &mut Gradients) -> f64 {
        let b = batch.len();
        if ws.cap < b {
            *ws = Workspace::with_capacity(self, b);
        }
        let n_in = self.input_len();
        for (s, (x, _)) in batch.iter().enumerate() {
            ws.input[s * n_in..(s + 1) * n_in].copy_from_slice(x);
        }
        self.forward_slots(ws, b);
        let n = b as f64;
        let mut loss = 0.0;
        let out = &ws.dense.last().expect("dense layer").a;
        let d_out: Vec<f64> = batch
            .iter()
            .zip(out)
            .map(|(&(_, y), &p)| {
                let r = p - y;
                loss += r * r;
                2.0 * r / n
            })
            .collect();
        self.backprop_deltas(ws, &d_out);
        grads.zero();
        let nc = self.conv.len();
        for (k, l) in self.conv.iter().enumerate() {
            let src = if k == 0 { &ws.input[..] } else { &ws.conv[k - 1].a[..] };
            let (h, w, _) = ws.shapes[k];
            let (gw, gb) = grads.pair_mut(2 * k);
            l.param_grad_raw(src, &ws.conv[k].d, h, w, gw, gb, b);
        }
        for (k, l) in self.dense.iter().enumerate() {
            let src = match (k, ws.conv.last()) {
                (0, Some(last)) => &last.a[..],
                (0, None) => &ws.input[..],
                _ => &ws.dense[k - 1].a[..],
            };
            let (gw, gb) = grads.pair_mut(2 * (nc + k));
            l.param_grad_raw(src, &ws.dense[k].d, gw, gb, b);
        }
        loss / n
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let model: CnnModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(NnError::Version {
                what: "model format",
                found: model.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        model.validate()?;
        model.permutations.validate().map_err(|e| NnError::Shape(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

enum LayerSpec {
    Conv { kh: usize, kw: usize, cin: usize, cout: usize },
    Dense { nin: usize, nout: usize, act: Activation },
}

enum LayerInit {
    Conv(Conv2d),
    Dense(Dense),
}

#[derive(Debug, Clone)]
pub struct LayerBuffers {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    /// Gradient w.r.t. `a`, turned into the gradient w.r.t. `z` in place.
    pub d: Vec<f64>,
}

impl LayerBuffers {
    fn new(n: usize) -> Self {
        Self { z: vec![0.0; n], a: vec![0.0; n], d: vec![0.0; n] }
    }
}

/// Scratch space for forward/backward passes over up to `capacity` samples
/// at once; reuse it across calls.
#[derive(Debug, Clone)]
pub struct Workspace {
    shapes: Vec<(usize, usize, usize)>,
    cap: usize,
    input: Vec<f64>,
    pub conv: Vec<LayerBuffers>,
    pub dense: Vec<LayerBuffers>,
}

impl Workspace {
    pub fn new(model: &CnnModel) -> Self {
        Self::with_capacity(model, 1)
    }

    pub fn with_capacity(model: &CnnModel, cap: usize) -> Self {
        let cap = cap.max(1);
        let (shapes, widths) = model.shape_chain();
        let conv = shapes[1..].iter().map(|&(h, w, c)| LayerBuffers::new(cap * h * w * c)).collect();
        let dense = widths[1..].iter().map(|&n| LayerBuffers::new(cap * n)).collect();
        let input = vec![0.0; cap * model.input_len()];
        Self { shapes, cap, input, conv, dense }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }
}

/// Gradient tensors, same order and shapes as [`CnnModel::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self(model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.fill(0.0);
        }
    }

    fn pair_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let (a, b) = self.0.split_at_mut(i + 1);
        (&mut a[i], &mut b[0])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales all gradients down so their global L2 norm is at most `max`.
    pub fn clip_norm(&mut self, max: f64) {
        let n = self.norm();
        if n > max {
            let k = max / n;
            self.0.iter_mut().flatten().for_each(|v| *v *= k);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Network output (normalized target units) for a feature matrix.
pub fn forward(model: &CnnModel, m: &FeatureMatrix) -> Result<f64, NnError> {
    let input = m.flatten();
    if input.len() != model.input_len() {
        return Err(NnError::Shape(format!(
            "model expects {} inputs, feature matrix has {}",
            model.input_len(),
            input.len()
        )));
    }
    let mut ws = Workspace::new(model);
    Ok(model.predict(&input, &mut ws))
}

/// Layer-by-layer forward through the checked [`Tensor`] API.
pub fn forward_tensor(model: &CnnModel, input: &Tensor) -> Result<f64, NnError> {
    let mut t = input.clone();
    for l in &model.conv {
        t = l.forward(&t)?;
        t.data.iter_mut().for_each(|v| *v = Activation::Elu.apply(*v));
    }
    let mut x = t.data;
    for l in &model.dense {
        l.check()?;
        if x.len() != l.inputs {
            return Err(NnError::Shape(format!("dense expects {} inputs, got {}", l.inputs, x.len())));
        }
        let mut out = vec![0.0; l.outputs];
        l.forward_raw(&x, &mut out, 1);
        x = out.into_iter().map(|z| l.activation.apply(z)).collect();
    }
    Ok(x[0])
}

/// MSE loss and exact gradients over a non-empty batch of `(input, target)`.
pub fn backward(model: &CnnModel, batch: &[(&[f64], f64)]) -> Result<(f64, Gradients), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyData("gradient batch"));
    }
    if let Some((x, _)) = batch.iter().find(|(x, _)| x.len() != model.input_len()) {
        return Err(NnError::Shape(format!("input of length {} in batch", x.len())));
    }
    let mut ws = Workspace::with_capacity(model, batch.len());
    let mut g = Gradients::zeros_like(model);
    let loss = model.batch_gradients(batch, &mut ws, &mut g);
    Ok((loss, g))
}
