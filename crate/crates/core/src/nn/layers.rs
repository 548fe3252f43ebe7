use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NnError;

pub const ELU_ALPHA: f64 = 1.0;

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ELU_ALPHA * x.exp_m1()
    }
}

/// Derivative of [`elu`] at pre-activation `z`.
pub fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        ELU_ALPHA * z.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => elu(z),
            Activation::Linear => z,
        }
    }

    pub fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Elu => elu_grad(z),
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub(crate) fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `out += Σ_k a_k · x_k` over `n` terms, four terms per pass over `out`.
#[inline]
pub(crate) fn accumulate<'a>(out: &mut [f64], n: usize, term: impl Fn(usize) -> (f64, &'a [f64])) {
    let len = out.len();
    let mut k = 0;
    while k + 4 <= n {
        let (a0, x0) = term(k);
        let (a1, x1) = term(k + 1);
        let (a2, x2) = term(k + 2);
        let (a3, x3) = term(k + 3);
        let (x0, x1, x2, x3) = (&x0[..len], &x1[..len], &x2[..len], &x3[..len]);
        for i in 0..len {
            out[i] += (a0 * x0[i] + a1 * x1[i]) + (a2 * x2[i] + a3 * x3[i]);
        }
        k += 4;
    }
    while k < n {
        let (a, x) = term(k);
        axpy(out, a, x);
        k += 1;
    }
}

/// Dot product with a fixed lane split so the summation order is stable.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Four dot products of `w` against consecutive `n`-long rows of `d`, so each
/// load of `w` is shared. Lane split is fixed for a stable summation order.
#[inline]
pub(crate) fn dot4(w: &[f64], d: &[f64]) -> [f64; 4] {
    let n = w.len();
    let rows: [&[f64]; 4] = std::array::from_fn(|j| &d[j * n..(j + 1) * n]);
    let mut acc = [[0.0f64; 4]; 4];
    let body = n - n % 4;
    for i in (0..body).step_by(4) {
        let wv = &w[i..i + 4];
        for j in 0..4 {
            let r = &rows[j][i..i + 4];
            for k in 0..4 {
                acc[j][k] += wv[k] * r[k];
            }
        }
    }
    std::array::from_fn(|j| {
        let mut s = (acc[j][0] + acc[j][1]) + (acc[j][2] + acc[j][3]);
        for i in body..n {
            s += w[i] * rows[j][i];
        }
        s
    })
}

fn he_normal<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// 2-D convolution (cross-correlation), stride 1, valid padding.
///
/// Weights are laid out `[kh][kw][cin][cout]` so the innermost loops run over
/// contiguous output channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(kernel_h: usize, kernel_w: usize, in_channels: usize, filters: usize) -> Self {
        Self {
            kernel_h,
            kernel_w,
            in_channels,
            filters,
            weights: vec![0.0; kernel_h * kernel_w * in_channels * filters],
            bias: vec![0.0; filters],
        }
    }

    pub fn he<R: Rng + ?Sized>(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        filters: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel_h * kernel_w * in_channels;
        Self {
            weights: he_normal(fan_in * filters, fan_in, rng),
            ..Self::zeros(kernel_h, kernel_w, in_channels, filters)
        }
    }

    #[inline]
    pub fn weight_index(&self, di: usize, dj: usize, ci: usize, co: usize) -> usize {
        ((di * self.kernel_w + dj) * self.in_channels + ci) * self.filters + co
    }

    pub fn output_shape(&self, shape: (usize, usize, usize)) -> Result<(usize, usize, usize), NnError> {
        let (h, w, c) = shape;
        if c != self.in_channels || h < self.kernel_h || w < self.kernel_w {
            return Err(NnError::Shape(format!(
                "conv {}x{}x{} cannot take input {:?}",
                self.kernel_h, self.kernel_w, self.in_channels, shape
            )));
        }
        Ok((h - self.kernel_h + 1, w - self.kernel_w + 1, self.filters))
    }

    pub fn check(&self) -> Result<(), NnError> {
        if self.weights.len() != self.kernel_h * self.kernel_w * self.in_channels * self.filters
            || self.bias.len() != self.filters
        {
            return Err(NnError::Shape("conv parameter lengths disagree with its dimensions".into()));
        }
        Ok(())
    }

    /// Pre-activation output for a checked [`Tensor`].
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        self.check()?;
        let (oh, ow, oc) = self.output_shape(input.shape())?;
        let mut out = Tensor::zeros(oh, ow, oc);
        self.forward_raw(&input.data, input.h, input.w, &mut out.data, 1);
        Ok(out)
    }

    /// Offset of kernel tap `t` (flattened `[kh][kw][cin]`) relative to the
    /// top-left input element of an output pixel, for input width `w`.
    #[inline]
    fn tap_offset(&self, t: usize, w: usize) -> usize {
        let cin = self.in_channels;
        let (di, rem) = (t / (self.kernel_w * cin), t % (self.kernel_w * cin));
        (di * w + rem / cin) * cin + rem % cin
    }

    /// Unchecked hot path over `b` samples stored back to back: `input` holds
    /// `(h, w, in_channels)` maps, `out` receives `(h-kh+1, w-kw+1, filters)`
    /// pre-activations. Each group of four weight rows is applied to every
    /// sample and pixel before moving on.
    pub(crate) fn forward_raw(&self, input: &[f64], h: usize, w: usize, out: &mut [f64], b: usize) {
        let (oh, ow) = (h + 1 - self.kernel_h, w + 1 - self.kernel_w);
        let (cin, cout) = (self.in_channels, self.filters);
        let (in_len, out_len) = (h * w * cin, oh * ow * cout);
        let taps = self.kernel_h * self.kernel_w * cin;
        for o in out[..b * out_len].chunks_exact_mut(cout) {
            o.copy_from_slice(&self.bias);
        }
        for t0 in (0..taps).step_by(4) {
            let n = (taps - t0).min(4);
            let offs: [usize; 4] = std::array::from_fn(|q| self.tap_offset(t0 + q.min(n - 1), w));
            for s in 0..b {
                let x = &input[s * in_len..(s + 1) * in_len];
                for i in 0..oh {
                    for j in 0..ow {
                        let p = s * out_len + (i * ow + j) * cout;
                        let base = (i * w + j) * cin;
                        accumulate(&mut out[p..p + cout], n, |q| {
                            let t = t0 + q;
                            (x[base + offs[q]], &self.weights[t * cout..(t + 1) * cout])
                        });
                    }
                }
            }
        }
    }

    /// Propagates `dz` (gradient w.r.t. this layer's pre-activation) back to
    /// the gradient w.r.t. the input, for `b` samples.
    pub(crate) fn input_grad_raw(&self, h: usize, w: usize, dz: &[f64], din: &mut [f64], b: usize) {
        let (oh, ow) = (h + 1 - self.kernel_h, w + 1 - self.kernel_w);
        let (cin, cout) = (self.in_channels, self.filters);
        let in_len = h * w * cin;
        let taps = self.kernel_h * self.kernel_w * cin;
        din[..b * in_len].fill(0.0);
        let positions = oh * ow;
        let rows = b * positions;
        let blocked = rows - rows % 4;
        let target = |k: usize, off: usize| {
            let (s, p) = (k / positions, k % positions);
            s * in_len + ((p / ow) * w + p % ow) * cin + off
        };
        for t in 0..taps {
            let off = self.tap_offset(t, w);
            let wrow = &self.weights[t * cout..(t + 1) * cout];
            for k in (0..blocked).step_by(4) {
                let v = dot4(wrow, &dz[k * cout..(k + 4) * cout]);
                for (q, v) in v.into_iter().enumerate() {
                    din[target(k + q, off)] += v;
                }
            }
            for k in blocked..rows {
                din[target(k, off)] += dot(wrow, &dz[k * cout..(k + 1) * cout]);
            }
        }
    }

    /// Accumulates weight and bias gradients summed over `b` samples.
    pub(crate) fn param_grad_raw(
        &self,
        input: &[f64],
        dz: &[f64],
        h: usize,
        w: usize,
        dw: &mut [f64],
        db: &mut [f64],
        b: usize,
    ) {
        let (oh, ow) = (h + 1 - self.kernel_h, w + 1 - self.kernel_w);
        let (cin, cout) = (self.in_channels, self.filters);
        let in_len = h * w * cin;
        let positions = oh * ow;
        let terms = b * positions;
        let taps = self.kernel_h * self.kernel_w * cin;
        accumulate(db, terms, |k| (1.0, &dz[k * cout..(k + 1) * cout]));
        for t in 0..taps {
            let off = self.tap_offset(t, w);
            accumulate(&mut dw[t * cout..(t + 1) * cout], terms, |k| {
                let (s, p) = (k / positions, k % positions);
                let x = input[s * in_len + ((p / ow) * w + p % ow) * cin + off];
                (x, &dz[k * cout..(k + 1) * cout])
            });
        }
    }
}

/// Fully connected layer, weights laid out `[inputs][outputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn he<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weights: he_normal(inputs * outputs, inputs, rng),
            ..Self::zeros(inputs, outputs, activation)
        }
    }

    pub fn check(&self) -> Result<(), NnError> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(NnError::Shape("dense parameter lengths disagree with its dimensions".into()));
        }
        Ok(())
    }

    /// `b` samples stored back to back in `x` and `out`.
    pub(crate) fn forward_raw(&self, x: &[f64], out: &mut [f64], b: usize) {
        let (nin, n) = (self.inputs, self.outputs);
        for o in out[..b * n].chunks_exact_mut(n) {
            o.copy_from_slice(&self.bias);
        }
        for i0 in (0..nin).step_by(4) {
            let m = (nin - i0).min(4);
            for s in 0..b {
                let xs = &x[s * nin + i0..s * nin + i0 + m];
                accumulate(&mut out[s * n..(s + 1) * n], m, |q| {
                    (xs[q], &self.weights[(i0 + q) * n..(i0 + q + 1) * n])
                });
            }
        }
    }

    pub(crate) fn input_grad_raw(&self, dz: &[f64], din: &mut [f64], b: usize) {
        let (nin, n) = (self.inputs, self.outputs);
        let blocked = b - b % 4;
        for i in 0..nin {
            let wrow = &self.weights[i * n..(i + 1) * n];
            for s in (0..blocked).step_by(4) {
                let v = dot4(wrow, &dz[s * n..(s + 4) * n]);
                for (q, v) in v.into_iter().enumerate() {
                    din[(s + q) * nin + i] = v;
                }
            }
            for s in blocked..b {
                din[s * nin + i] = dot(wrow, &dz[s * n..(s + 1) * n]);
            }
        }
    }

    /// Weight and bias gradients summed over `b` samples.
    pub(crate) fn param_grad_raw(&self, x: &[f64], dz: &[f64], dw: &mut [f64], db: &mut [f64], b: usize) {
        let (nin, n) = (self.inputs, self.outputs);
        accumulate(db, b, |s| (1.0, &dz[s * n..(s + 1) * n]));
        for i in 0..nin {
            accumulate(&mut dw[i * n..(i + 1) * n], b, |s| (x[s * nin + i], &dz[s * n..(s + 1) * n]));
        }
    }
}
