//! Tiny fully-connected decoders and their reverse-mode derivatives.
//!
//! The backward pass recomputes the forward activations of the single input
//! being differentiated (nothing is cached between samples), so the working
//! set is a handful of layer-width buffers no matter how many points a ray
//! touches. Activation derivatives are recovered from the stored
//! post-activations, which is stable for every activation offered here.

use alloc::vec;
use alloc::vec::Vec;

use crate::accum::{AccumMode, Accumulator};
use crate::counters::FlopCounter;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, softplus_deriv_from_output, Real, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenActivation {
    Relu,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Softplus,
    Sigmoid,
}

impl HiddenActivation {
    pub fn code(self) -> u8 {
        match self {
            HiddenActivation::Relu => 0,
            HiddenActivation::Softplus => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(HiddenActivation::Relu),
            1 => Ok(HiddenActivation::Softplus),
            _ => Err(Error::Domain {
                what: "unknown hidden activation code",
            }),
        }
    }
}

impl OutputActivation {
    pub fn code(self) -> u8 {
        match self {
            OutputActivation::Identity => 0,
            OutputActivation::Softplus => 1,
            OutputActivation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(OutputActivation::Identity),
            1 => Ok(OutputActivation::Softplus),
            2 => Ok(OutputActivation::Sigmoid),
            _ => Err(Error::Domain {
                what: "unknown output activation code",
            }),
        }
    }
}

#[inline]
fn apply_hidden<S: Real>(act: HiddenActivation, values: &mut [S]) {
    match act {
        HiddenActivation::Relu => {
            for v in values {
                if *v < S::ZERO {
                    *v = S::ZERO;
                }
            }
        }
        HiddenActivation::Softplus => {
            for v in values {
                *v = softplus(*v);
            }
        }
    }
}

#[inline]
fn apply_output<S: Real>(act: OutputActivation, values: &mut [S]) {
    match act {
        OutputActivation::Identity => {}
        OutputActivation::Softplus => {
            for v in values {
                *v = softplus(*v);
            }
        }
        OutputActivation::Sigmoid => {
            for v in values {
                *v = sigmoid(*v);
            }
        }
    }
}

/// Derivative of the hidden activation recovered from its output.
#[inline]
fn hidden_deriv<S: Real>(act: HiddenActivation, post: S) -> S {
    match act {
        HiddenActivation::Relu => {
            if post > S::ZERO {
                S::ONE
            } else {
                S::ZERO
            }
        }
        HiddenActivation::Softplus => softplus_deriv_from_output(post),
    }
}

#[inline]
fn output_deriv<S: Real>(act: OutputActivation, post: S) -> S {
    match act {
        OutputActivation::Identity => S::ONE,
        OutputActivation::Softplus => softplus_deriv_from_output(post),
        OutputActivation::Sigmoid => post * (S::ONE - post),
    }
}

/// One affine layer, weight row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Real> Layer<S> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            out_dim,
            in_dim,
            weight: vec![S::ZERO; out_dim * in_dim],
            bias: vec![S::ZERO; out_dim],
        }
    }
}

/// Default decoder sizing: three layers with hidden width 64.
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;
pub const DEFAULT_LAYER_COUNT: usize = 3;

/// Layer dimension chain `[in, 64, 64, out]` of the default decoder.
pub fn default_decoder_dims(in_dim: usize, out_dim: usize) -> Vec<usize> {
    let mut dims = vec![in_dim];
    dims.extend(core::iter::repeat_n(DEFAULT_HIDDEN_WIDTH, DEFAULT_LAYER_COUNT - 1));
    dims.push(out_dim);
    dims
}

/// Parameters of one decoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S> {
    pub layers: Vec<Layer<S>>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl<S: Real> MlpParams<S> {
    /// Zero-initialized parameters; `dims` lists `[in, hidden.., out]`.
    pub fn zeros(
        dims: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Domain {
                what: "mlp needs at least one layer and positive dims",
            });
        }
        let layers = dims
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Ok(MlpParams {
            layers,
            hidden_activation,
            output_activation,
        })
    }

    /// Seeded init: weights uniform in `+-1/sqrt(in_dim)`, biases zero.
    pub fn seeded(
        dims: &[usize],
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut params = Self::zeros(dims, hidden_activation, output_activation)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weight {
                *w = S::from_f64(rng.next_f64() * 2.0 * bound - bound);
            }
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Domain {
                what: "mlp has no layers",
            });
        }
        for pair in self.layers.windows(2) {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(Error::DimMismatch {
                    what: "consecutive mlp layer dims",
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        for layer in &self.layers {
            if layer.weight.len() != layer.out_dim * layer.in_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::DimMismatch {
                    what: "mlp layer storage",
                    expected: layer.out_dim * layer.in_dim,
                    got: layer.weight.len(),
                });
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim.max(l.in_dim))
            .max()
            .unwrap_or(0)
    }

    /// Scalars needed to stash the post-activations of all non-final layers.
    pub fn hidden_scalar_len(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter order: per layer, weights then biases.
    pub fn param_get(&self, mut index: usize) -> S {
        for layer in &self.layers {
            if index < layer.weight.len() {
                return layer.weight[index];
            }
            index -= layer.weight.len();
            if index < layer.bias.len() {
                return layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_set(&mut self, mut index: usize, value: S) {
        for layer in &mut self.layers {
            if index < layer.weight.len() {
                layer.weight[index] = value;
                return;
            }
            index -= layer.weight.len();
            if index < layer.bias.len() {
                layer.bias[index] = value;
                return;
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn convert<T: Real>(&self) -> MlpParams<T> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    out_dim: l.out_dim,
                    in_dim: l.in_dim,
                    weight: l.weight.iter().map(|v| T::from_f64(v.to_f64())).collect(),
                    bias: l.bias.iter().map(|v| T::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        }
    }
}

/// Gradient storage mirroring an [`MlpParams`] shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<S> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Real> MlpGrads<S> {
    pub fn zeros_like(params: &MlpParams<S>) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.out_dim, l.in_dim))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for layer in &mut self.layers {
            layer.weight.iter_mut().for_each(|v| *v = S::ZERO);
            layer.bias.iter_mut().for_each(|v| *v = S::ZERO);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn param_get(&self, mut index: usize) -> S {
        for layer in &self.layers {
            if index < layer.weight.len() {
                return layer.weight[index];
            }
            index -= layer.weight.len();
            if index < layer.bias.len() {
                return layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flushes the accumulated gradients into a flat shared accumulator and
    /// clears this staging buffer.
    pub fn flush_into(&mut self, accum: &ParamAccum) {
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in &mut layer.weight {
                if *w != S::ZERO {
                    accum.cells.add(offset, *w);
                }
                *w = S::ZERO;
                offset += 1;
            }
            for b in &mut layer.bias {
                if *b != S::ZERO {
                    accum.cells.add(offset, *b);
                }
                *b = S::ZERO;
                offset += 1;
            }
        }
    }
}

/// Thread-shared accumulator shaped like an [`MlpParams`] parameter vector.
pub struct ParamAccum {
    cells: Accumulator,
}

impl ParamAccum {
    pub fn zeros<S: Real>(params: &MlpParams<S>, mode: AccumMode) -> Self {
        ParamAccum {
            cells: Accumulator::zeros(params.param_count(), mode),
        }
    }

    pub fn into_grads<S: Real>(&self, params: &MlpParams<S>) -> MlpGrads<S> {
        let mut grads = MlpGrads::zeros_like(params);
        let mut offset = 0;
        for layer in &mut grads.layers {
            for w in &mut layer.weight {
                *w = self.cells.get(offset);
                offset += 1;
            }
            for b in &mut layer.bias {
                *b = self.cells.get(offset);
                offset += 1;
            }
        }
        grads
    }
}

/// Reusable working buffers; sized once per kernel chunk.
pub struct MlpScratch<S> {
    pub(crate) work_a: Vec<S>,
    pub(crate) work_b: Vec<S>,
    pub(crate) hidden: Vec<S>,
    pub(crate) output: Vec<S>,
}

impl<S: Real> MlpScratch<S> {
    pub fn for_params(params: &MlpParams<S>) -> Self {
        MlpScratch {
            work_a: vec![S::ZERO; params.max_width()],
            work_b: vec![S::ZERO; params.max_width()],
            hidden: vec![S::ZERO; params.hidden_scalar_len()],
            output: vec![S::ZERO; params.out_dim()],
        }
    }

    pub fn scalar_len(&self) -> usize {
        self.work_a.len() + self.work_b.len() + self.hidden.len() + self.output.len()
    }
}

#[inline]
fn matvec<S: Real>(layer: &Layer<S>, input: &[S], out: &mut [S]) {
    // Four independent accumulator lanes; keeps the row reduction off the
    // FP-add latency chain. Every caller (fused and store-all alike) shares
    // this order, so cross-path comparisons stay bit-exact.
    for (o, out_v) in out[..layer.out_dim].iter_mut().enumerate() {
        let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut lanes = [S::ZERO; 4];
        let chunks = layer.in_dim / 4 * 4;
        for (w, x) in row[..chunks].chunks_exact(4).zip(input[..chunks].chunks_exact(4)) {
            lanes[0] += w[0] * x[0];
            lanes[1] += w[1] * x[1];
            lanes[2] += w[2] * x[2];
            lanes[3] += w[3] * x[3];
        }
        let mut acc = layer.bias[o] + ((lanes[0] + lanes[2]) + (lanes[1] + lanes[3]));
        for (w, x) in row[chunks..].iter().zip(&input[chunks..]) {
            acc += *w * *x;
        }
        *out_v = acc;
    }
}

/// Evaluates the network. `out` must hold `params.out_dim()` scalars.
pub fn mlp_forward<S: Real>(
    params: &MlpParams<S>,
    input: &[S],
    out: &mut [S],
    scratch: &mut MlpScratch<S>,
    counter: &mut FlopCounter,
) -> Result<()> {
    if input.len() != params.in_dim() {
        return Err(Error::DimMismatch {
            what: "mlp input",
            expected: params.in_dim(),
            got: input.len(),
        });
    }
    if out.len() != params.out_dim() {
        return Err(Error::DimMismatch {
            what: "mlp output",
            expected: params.out_dim(),
            got: out.len(),
        });
    }
    let n_layers = params.layers.len();
    let mut macs = 0u64;
    let (a, b) = (&mut scratch.work_a, &mut scratch.work_b);
    for (li, layer) in params.layers.iter().enumerate() {
        let src: &[S] = if li == 0 { input } else { &a[..layer.in_dim] };
        macs += (layer.out_dim * layer.in_dim) as u64;
        if li + 1 == n_layers {
            matvec(layer, src, out);
            apply_output(params.output_activation, out);
        } else {
            matvec(layer, src, &mut b[..layer.out_dim]);
            apply_hidden(params.hidden_activation, &mut b[..layer.out_dim]);
            core::mem::swap(a, b);
        }
    }
    counter.add_mlp_forward(macs);
    Ok(())
}

/// Forward pass that stashes the post-activations of every non-final layer
/// in `hidden` and the final result in `output`. Counted as forward MACs:
/// this is the recomputation performed during backward passes, and the
/// store-all oracles capture their per-sample activations through it.
pub(crate) fn forward_storing<S: Real>(
    params: &MlpParams<S>,
    input: &[S],
    hidden: &mut [S],
    output: &mut [S],
    counter: &mut FlopCounter,
) {
    debug_assert_eq!(hidden.len(), params.hidden_scalar_len());
    debug_assert_eq!(output.len(), params.out_dim());
    let n_layers = params.layers.len();
    let mut macs = 0u64;
    let mut hidden_off = 0;
    for (li, layer) in params.layers.iter().enumerate() {
        macs += (layer.out_dim * layer.in_dim) as u64;
        if li + 1 == n_layers {
            let src: &[S] = if li == 0 {
                input
            } else {
                &hidden[hidden_off - layer.in_dim..hidden_off]
            };
            matvec(layer, src, output);
            apply_output(params.output_activation, output);
        } else {
            let (done, rest) = hidden.split_at_mut(hidden_off);
            let src: &[S] = if li == 0 {
                input
            } else {
                &done[hidden_off - layer.in_dim..]
            };
            matvec(layer, src, &mut rest[..layer.out_dim]);
            apply_hidden(params.hidden_activation, &mut rest[..layer.out_dim]);
            hidden_off += layer.out_dim;
        }
    }
    counter.add_mlp_forward(macs);
}

/// Reverse-mode step for one input: recomputes the forward activations,
/// then backpropagates `upstream`. Parameter gradients accumulate into
/// `grads`; the input gradient lands in `grad_input`.
pub fn mlp_vjp<S: Real>(
    params: &MlpParams<S>,
    input: &[S],
    upstream: &[S],
    grad_input: &mut [S],
    grads: &mut MlpGrads<S>,
    scratch: &mut MlpScratch<S>,
    counter: &mut FlopCounter,
) -> Result<()> {
    if input.len() != params.in_dim() {
        return Err(Error::DimMismatch {
            what: "mlp vjp input",
            expected: params.in_dim(),
            got: input.len(),
        });
    }
    if upstream.len() != params.out_dim() {
        return Err(Error::DimMismatch {
            what: "mlp vjp upstream",
            expected: params.out_dim(),
            got: upstream.len(),
        });
    }
    if grad_input.len() != params.in_dim() {
        return Err(Error::DimMismatch {
            what: "mlp vjp grad_input",
            expected: params.in_dim(),
            got: grad_input.len(),
        });
    }
    let MlpScratch {
        work_a,
        work_b,
        hidden,
        output,
    } = scratch;
    forward_storing(params, input, hidden, output, counter);
    vjp_from_stored(
        params, input, upstream, grad_input, grads, hidden, output, work_a, work_b, counter,
    );
    Ok(())
}

/// Backward sweep given already-stored post-activations. Shared by the
/// recompute path above and by the store-all naive oracles (which captured
/// the activations during their own forward pass).
#[allow(clippy::too_many_arguments)]
pub(crate) fn vjp_from_stored<S: Real>(
    params: &MlpParams<S>,
    input: &[S],
    upstream: &[S],
    grad_input: &mut [S],
    grads: &mut MlpGrads<S>,
    hidden: &[S],
    output: &[S],
    work_a: &mut [S],
    work_b: &mut [S],
    counter: &mut FlopCounter,
) {
    let n_layers = params.layers.len();
    let mut macs = 0u64;

    // Upstream through the output activation.
    let out_dim = params.out_dim();
    for o in 0..out_dim {
        work_a[o] = upstream[o] * output_deriv(params.output_activation, output[o]);
    }

    let mut hidden_end = hidden.len();
    for li in (0..n_layers).rev() {
        let layer = &params.layers[li];
        let glayer = &mut grads.layers[li];
        let src: &[S] = if li == 0 {
            input
        } else {
            &hidden[hidden_end - layer.in_dim..hidden_end]
        };
        // Parameter gradients: u (x) src, plus bias.
        for o in 0..layer.out_dim {
            let u = work_a[o];
            glayer.bias[o] += u;
            let row = &mut glayer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (g, x) in row.iter_mut().zip(src) {
                *g += u * *x;
            }
        }
        // Gradient with respect to the layer input: W^T u.
        let dst: &mut [S] = if li == 0 {
            grad_input
        } else {
            &mut work_b[..layer.in_dim]
        };
        for d in dst.iter_mut() {
            *d = S::ZERO;
        }
        for o in 0..layer.out_dim {
            let u = work_a[o];
            let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (d, w) in dst.iter_mut().zip(row) {
                *d += *w * u;
            }
        }
        macs += 2 * (layer.out_dim * layer.in_dim) as u64;
        if li > 0 {
            // Chain through the hidden activation of the previous layer.
            hidden_end -= layer.in_dim;
            for i in 0..layer.in_dim {
                work_b[i] *= hidden_deriv(params.hidden_activation, hidden[hidden_end + i]);
            }
            work_a[..layer.in_dim].copy_from_slice(&work_b[..layer.in_dim]);
        }
    }
    counter.add_mlp_vjp(macs);
}

/// Ray-direction encoding: optional raw direction, then per axis and
/// frequency `f in {1, 2, .., 2^(F-1)}` the pair `(sin(pi f d), cos(pi f d))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirEncConfig {
    pub num_frequencies: usize,
    pub include_raw: bool,
}

impl Default for DirEncConfig {
    fn default() -> Self {
        DirEncConfig {
            num_frequencies: 4,
            include_raw: true,
        }
    }
}

impl DirEncConfig {
    pub fn encoded_len(&self) -> usize {
        3 * (2 * self.num_frequencies + usize::from(self.include_raw))
    }
}

/// Encodes a unit direction; errors when the norm deviates from 1 by more
/// than 1e-4.
pub fn direnc<S: Real>(direction: [S; 3], cfg: &DirEncConfig, out: &mut [S]) -> Result<()> {
    let norm = (direction[0] * direction[0]
        + direction[1] * direction[1]
        + direction[2] * direction[2])
        .sqrt();
    if (norm - S::ONE).abs() > S::from_f32(1e-4) {
        return Err(Error::Domain {
            what: "direction must be unit length",
        });
    }
    direnc_unchecked(direction, cfg, out);
    Ok(())
}

pub(crate) fn direnc_unchecked<S: Real>(direction: [S; 3], cfg: &DirEncConfig, out: &mut [S]) {
    debug_assert_eq!(out.len(), cfg.encoded_len());
    let mut idx = 0;
    if cfg.include_raw {
        out[..3].copy_from_slice(&direction);
        idx = 3;
    }
    for &d in &direction {
        let mut freq = S::ONE;
        for _ in 0..cfg.num_frequencies {
            let arg = S::PI * freq * d;
            out[idx] = arg.sin();
            out[idx + 1] = arg.cos();
            idx += 2;
            freq *= S::TWO;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_mlp(dim: usize) -> MlpParams<f32> {
        let mut p = MlpParams::zeros(
            &[dim, dim],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        for i in 0..dim {
            p.layers[0].weight[i * dim + i] = 1.0;
        }
        p
    }

    fn forward(params: &MlpParams<f32>, input: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; params.out_dim()];
        let mut scratch = MlpScratch::for_params(params);
        let mut c = FlopCounter::default();
        mlp_forward(params, input, &mut out, &mut scratch, &mut c).unwrap();
        out
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = identity_mlp(4);
        let x = [0.5f32, -1.0, 2.0, 0.0];
        assert_eq!(forward(&p, &x), x.to_vec());
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut p = MlpParams::zeros(
            &[3, 2],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        p.layers[0].bias = vec![1.5, -2.0];
        assert_eq!(forward(&p, &[9.0, 9.0, 9.0]), vec![1.5, -2.0]);
    }

    /// Independent dense-arithmetic oracle: explicit loops, f64, no shared
    /// code with the implementation above.
    fn reference_forward(params: &MlpParams<f32>, input: &[f32]) -> Vec<f64> {
        let mut cur: Vec<f64> = input.iter().map(|v| *v as f64).collect();
        for (li, layer) in params.layers.iter().enumerate() {
            let mut next = vec![0.0f64; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut acc = layer.bias[o] as f64;
                for i in 0..layer.in_dim {
                    acc += layer.weight[o * layer.in_dim + i] as f64 * cur[i];
                }
                next[o] = acc;
            }
            let last = li + 1 == params.layers.len();
            for v in &mut next {
                *v = if last {
                    match params.output_activation {
                        OutputActivation::Identity => *v,
                        OutputActivation::Softplus => (1.0 + v.exp()).ln(),
                        OutputActivation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                    }
                } else {
                    match params.hidden_activation {
                        HiddenActivation::Relu => v.max(0.0),
                        HiddenActivation::Softplus => (1.0 + v.exp()).ln(),
                    }
                };
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn random_two_layer_net_matches_matrix_oracle() {
        let mut rng = Rng::new(42);
        let p = MlpParams::seeded(
            &[5, 7, 3],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        for _ in 0..10 {
            let x: Vec<f32> = (0..5).map(|_| rng.uniform(-2.0f32, 2.0)).collect();
            let got = forward(&p, &x);
            let want = reference_forward(&p, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-6, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = identity_mlp(3);
        let mut out = vec![0.0; 3];
        let mut scratch = MlpScratch::for_params(&p);
        let mut c = FlopCounter::default();
        assert!(mlp_forward(&p, &[1.0, 2.0], &mut out, &mut scratch, &mut c).is_err());
    }

    #[test]
    fn vjp_identity_layer_grads() {
        let p = identity_mlp(3);
        let x = [0.5f32, -1.0, 2.0];
        let upstream = [1.0f32, 2.0, -3.0];
        let mut grad_input = [0.0f32; 3];
        let mut grads = MlpGrads::zeros_like(&p);
        let mut scratch = MlpScratch::for_params(&p);
        let mut c = FlopCounter::default();
        mlp_vjp(&p, &x, &upstream, &mut grad_input, &mut grads, &mut scratch, &mut c).unwrap();
        assert_eq!(grad_input, upstream);
        for o in 0..3 {
            for i in 0..3 {
                let want = upstream[o] * x[i];
                assert!((grads.layers[0].weight[o * 3 + i] - want).abs() < 1e-6);
            }
            assert!((grads.layers[0].bias[o] - upstream[o]).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_all_negative_preactivations_kill_gradient() {
        let mut p = MlpParams::zeros(
            &[2, 4, 1],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        // First layer forces negative preactivations for positive input.
        for w in &mut p.layers[0].weight {
            *w = -1.0;
        }
        p.layers[1].weight.iter_mut().for_each(|w| *w = 1.0);
        let mut grad_input = [9.0f32; 2];
        let mut grads = MlpGrads::zeros_like(&p);
        let mut scratch = MlpScratch::for_params(&p);
        let mut c = FlopCounter::default();
        mlp_vjp(&p, &[1.0, 1.0], &[1.0], &mut grad_input, &mut grads, &mut scratch, &mut c)
            .unwrap();
        assert_eq!(grad_input, [0.0, 0.0]);
        assert!(grads.layers[0].weight.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn finite_difference_gradcheck_width8() {
        let mut rng = Rng::new(7);
        let p: MlpParams<f64> = MlpParams::seeded(
            &[6, 8, 8, 4],
            HiddenActivation::Softplus,
            OutputActivation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0f64, 1.0)).collect();
        let upstream: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0f64, 1.0)).collect();

        let mut grad_input = vec![0.0f64; 6];
        let mut grads = MlpGrads::zeros_like(&p);
        let mut scratch = MlpScratch::for_params(&p);
        let mut c = FlopCounter::default();
        mlp_vjp(&p, &x, &upstream, &mut grad_input, &mut grads, &mut scratch, &mut c).unwrap();

        let loss = |p: &MlpParams<f64>, x: &[f64]| -> f64 {
            let mut out = vec![0.0f64; 4];
            let mut scratch = MlpScratch::for_params(p);
            let mut c = FlopCounter::default();
            mlp_forward(p, x, &mut out, &mut scratch, &mut c).unwrap();
            out.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };

        let eps = 1e-3;
        // Input gradient.
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += eps;
            let up = loss(&p, &xp);
            xp[i] -= 2.0 * eps;
            let down = loss(&p, &xp);
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(grad_input[i].abs()).max(1e-6);
            assert!(
                ((fd - grad_input[i]) / denom).abs() < 1e-2,
                "input {i}: fd={fd} got={}",
                grad_input[i]
            );
        }
        // A sample of parameter gradients.
        let count = p.param_count();
        for probe in (0..count).step_by(count / 40 + 1) {
            let mut pp = p.clone();
            let orig = pp.param_get(probe);
            pp.param_set(probe, orig + eps);
            let up = loss(&pp, &x);
            pp.param_set(probe, orig - eps);
            let down = loss(&pp, &x);
            let fd = (up - down) / (2.0 * eps);
            let got = grads.param_get(probe);
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                ((fd - got) / denom).abs() < 1e-2,
                "param {probe}: fd={fd} got={got}"
            );
        }
    }

    #[test]
    fn vjp_is_linear_in_upstream() {
        let mut rng = Rng::new(13);
        let p = MlpParams::seeded(
            &[4, 8, 3],
            HiddenActivation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )
        .unwrap();
        let x: Vec<f32> = (0..4).map(|_| rng.uniform(-1.0f32, 1.0)).collect();
        let u1: Vec<f32> = (0..3).map(|_| rng.uniform(-1.0f32, 1.0)).collect();
        let u2: Vec<f32> = (0..3).map(|_| rng.uniform(-1.0f32, 1.0)).collect();
        let (alpha, beta) = (0.7f32, -1.3f32);

        let run = |upstream: &[f32]| {
            let mut gi = vec![0.0f32; 4];
            let mut g = MlpGrads::zeros_like(&p);
            let mut scratch = MlpScratch::for_params(&p);
            let mut c = FlopCounter::default();
            mlp_vjp(&p, &x, upstream, &mut gi, &mut g, &mut scratch, &mut c).unwrap();
            gi
        };
        let combo: Vec<f32> = u1
            .iter()
            .zip(&u2)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let g1 = run(&u1);
        let g2 = run(&u2);
        let gc = run(&combo);
        for i in 0..4 {
            let want = alpha * g1[i] + beta * g2[i];
            assert!((gc[i] - want).abs() < 1e-4);
        }
    }

    #[test]
    fn softplus_output_is_strictly_positive() {
        let mut rng = Rng::new(99);
        let p = MlpParams::seeded(
            &[3, 16, 1],
            HiddenActivation::Relu,
            OutputActivation::Softplus,
            &mut rng,
        )
        .unwrap();
        for _ in 0..50 {
            let x: Vec<f32> = (0..3).map(|_| rng.uniform(-3.0f32, 3.0)).collect();
            assert!(forward(&p, &x)[0] > 0.0);
        }
    }

    #[test]
    fn default_decoder_is_three_layers_of_width_64() {
        let p: MlpParams<f32> = MlpParams::zeros(
            &default_decoder_dims(7, 3),
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        assert_eq!(p.layers.len(), 3);
        assert_eq!(p.layers[0].out_dim, 64);
        assert_eq!(p.layers[1].out_dim, 64);
        assert_eq!(p.out_dim(), 3);
        assert_eq!(p.in_dim(), 7);
    }

    #[test]
    fn direnc_example_vector() {
        let cfg = DirEncConfig {
            num_frequencies: 1,
            include_raw: true,
        };
        let mut out = vec![0.0f32; cfg.encoded_len()];
        direnc([1.0f32, 0.0, 0.0], &cfg, &mut out).unwrap();
        let want = [1.0f32, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(out.len(), 9);
        for (g, w) in out.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "{out:?}");
        }
    }

    #[test]
    fn direnc_length_and_injectivity() {
        let cfg = DirEncConfig::default();
        assert_eq!(cfg.encoded_len(), 3 * (2 * 4 + 1));
        let mut rng = Rng::new(5);
        let mut encodings: Vec<Vec<f32>> = Vec::new();
        for _ in 0..100 {
            let mut d = [
                rng.uniform(-1.0f32, 1.0),
                rng.uniform(-1.0f32, 1.0),
                rng.uniform(-1.0f32, 1.0),
            ];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n < 1e-3 {
                continue;
            }
            d.iter_mut().for_each(|c| *c /= n);
            let mut out = vec![0.0f32; cfg.encoded_len()];
            direnc(d, &cfg, &mut out).unwrap();
            assert!(!encodings.contains(&out), "distinct dirs must encode apart");
            encodings.push(out);
        }
    }

    #[test]
    fn direnc_rejects_non_unit_direction() {
        let cfg = DirEncConfig::default();
        let mut out = vec![0.0f32; cfg.encoded_len()];
        assert!(direnc([2.0f32, 0.0, 0.0], &cfg, &mut out).is_err());
    }
}
