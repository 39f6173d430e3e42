//! Push-based lifting of per-pixel features into hash structures.
//!
//! Each input pixel expands into a ray of `R+1` equispaced points that all
//! inherit the pixel's feature vector; an optional modifier network blends
//! in a prior structure sample and the ray-direction encoding to give the
//! points position-aware values. Values scatter into a zero-initialized
//! structure with the sampling weights, a second pass accumulates the bare
//! weights (decoders and prior disabled, value 1), and cells are normalized
//! by the accumulated weight.
//!
//! The backward pass mirrors a rendering forward pass: it marches the same
//! rays, gathers the weight-normalized upstream gradient at each sample
//! with the same interpolation weights, and chains it through the modifier
//! network. The weight structure is cached from the forward pass and is
//! treated as a constant: geometry alone determines it, so no gradient
//! flows into it.

use alloc::vec;
use alloc::vec::Vec;

use crate::accum::AccumMode;
use crate::counters::{FlopCounter, KernelStats, TrackedBuf};
use crate::error::{Error, Result};
use crate::hash3d::{
    for_each_cell, in_bounds, sample_vjp, HashStructure, StructureAccum, StructureSpec,
};
use crate::math::Real;
use crate::mlp::{
    direnc_unchecked, forward_storing, mlp_forward, mlp_vjp, vjp_from_stored, DirEncConfig,
    MlpGrads, MlpParams, MlpScratch, ParamAccum,
};
use crate::rays::RaySamples;
use crate::renderer::RAY_CHUNK;

/// Division guard for cells with (near-)zero accumulated weight.
pub const WEIGHT_EPS: f32 = 1e-8;

/// Inputs of one splatting pass, borrowed.
#[derive(Clone, Copy)]
pub struct SplatterInputs<'a, S> {
    /// Per-ray feature vectors, `M x channels` row-major.
    pub features: &'a [S],
    pub channels: usize,
    pub samples: &'a RaySamples<S>,
    /// Prior structure sampled at every point and fed to the modifier.
    pub prior: Option<&'a HashStructure<S>>,
    /// The feature modifier `g_s`; absent means raw feature splatting.
    pub modifier_mlp: Option<&'a MlpParams<S>>,
    pub direnc: DirEncConfig,
    /// Append the contracted sample position to the modifier input.
    pub append_position: bool,
}

impl<'a, S: Real> SplatterInputs<'a, S> {
    pub fn plain(
        features: &'a [S],
        channels: usize,
        samples: &'a RaySamples<S>,
        direnc: DirEncConfig,
    ) -> Self {
        SplatterInputs {
            features,
            channels,
            samples,
            prior: None,
            modifier_mlp: None,
            direnc,
            append_position: false,
        }
    }

    pub fn num_rays(&self) -> usize {
        self.samples.num_rays()
    }

    fn prior_channels(&self) -> usize {
        self.prior.map_or(0, |p| p.channels())
    }

    /// Modifier input width: `[feature | prior | direnc | position?]`.
    fn modifier_in_dim(&self) -> usize {
        self.channels
            + self.prior_channels()
            + self.direnc.encoded_len()
            + if self.append_position { 3 } else { 0 }
    }

    /// Channel count landing in the target structure.
    pub fn splatted_channels(&self) -> usize {
        self.modifier_mlp.map_or(self.channels, |m| m.out_dim())
    }

    pub fn validate(&self, target: &StructureSpec) -> Result<()> {
        if self.features.len() != self.num_rays() * self.channels {
            return Err(Error::DimMismatch {
                what: "splat feature buffer",
                expected: self.num_rays() * self.channels,
                got: self.features.len(),
            });
        }
        match self.modifier_mlp {
            Some(mlp) => {
                mlp.validate()?;
                if mlp.in_dim() != self.modifier_in_dim() {
                    return Err(Error::DimMismatch {
                        what: "modifier input vs feature/prior/encoding layout",
                        expected: self.modifier_in_dim(),
                        got: mlp.in_dim(),
                    });
                }
            }
            None => {
                if self.prior.is_some() {
                    return Err(Error::Contract {
                        what: "a prior structure requires a modifier mlp",
                    });
                }
            }
        }
        if target.channels != self.splatted_channels() {
            return Err(Error::DimMismatch {
                what: "splat target channels",
                expected: self.splatted_channels(),
                got: target.channels,
            });
        }
        Ok(())
    }
}

/// Accumulated features, accumulated weights, and their quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatResult<S> {
    pub theta: HashStructure<S>,
    pub theta_weight: HashStructure<S>,
    pub normalized: HashStructure<S>,
}

/// Gradients of a splatting pass.
#[derive(Debug, Clone)]
pub struct SplatGrads<S> {
    pub grad_features: Vec<S>,
    pub grad_prior: Option<HashStructure<S>>,
    pub grad_modifier_mlp: Option<MlpGrads<S>>,
}

/// `theta / max(theta_weight, eps)`; untouched cells stay exactly zero.
pub fn normalize<S: Real>(
    theta: &HashStructure<S>,
    theta_weight: &HashStructure<S>,
) -> Result<HashStructure<S>> {
    let spec = theta.spec();
    let wspec = theta_weight.spec();
    if wspec != spec.weight_target() {
        return Err(Error::Contract {
            what: "weight structure does not match the splat target geometry",
        });
    }
    let eps = S::from_f32(WEIGHT_EPS);
    let k = spec.channels;
    let mut out = spec.zeros::<S>();
    for i in 0..spec.flat_len() {
        let w = theta_weight.flat_get(i / k);
        out.flat_set(i, theta.flat_get(i) / w.max(eps));
    }
    Ok(out)
}

struct SplatScratch<'a, S> {
    enc: TrackedBuf<'a, S>,
    prior_feat: TrackedBuf<'a, S>,
    mlp_in: TrackedBuf<'a, S>,
    value: TrackedBuf<'a, S>,
    mlp_scratch: Option<MlpScratch<S>>,
    mlp_bytes: u64,
    stats: &'a KernelStats,
}

impl<'a, S: Real> SplatScratch<'a, S> {
    fn new(inputs: &SplatterInputs<'_, S>, stats: &'a KernelStats) -> Self {
        let mlp_scratch = inputs.modifier_mlp.map(MlpScratch::for_params);
        let mlp_bytes = mlp_scratch
            .as_ref()
            .map_or(0, |s| (s.scalar_len() * core::mem::size_of::<S>()) as u64);
        stats.track_scratch(mlp_bytes);
        SplatScratch {
            enc: TrackedBuf::zeroed(stats, inputs.direnc.encoded_len()),
            prior_feat: TrackedBuf::zeroed(stats, inputs.prior_channels()),
            mlp_in: TrackedBuf::zeroed(stats, inputs.modifier_in_dim()),
            value: TrackedBuf::zeroed(stats, inputs.splatted_channels()),
            mlp_scratch,
            mlp_bytes,
            stats,
        }
    }

    /// Builds the modifier input `[feature | prior | enc | position?]` for
    /// one sample; the prior is sampled here. Returns interp MACs spent.
    fn assemble<'i>(
        &mut self,
        inputs: &SplatterInputs<'i, S>,
        ray: usize,
        x: [S; 3],
        counter: &mut FlopCounter,
    ) -> u64 {
        let c = inputs.channels;
        let kp = inputs.prior_channels();
        let e = inputs.direnc.encoded_len();
        self.mlp_in[..c].copy_from_slice(&inputs.features[ray * c..(ray + 1) * c]);
        let mut macs = 0;
        if let Some(prior) = inputs.prior {
            let cells = prior.sample_into(x, &mut self.prior_feat);
            macs = cells as u64 * kp as u64;
            counter.add_interp(macs);
            self.mlp_in[c..c + kp].copy_from_slice(&self.prior_feat);
        }
        self.mlp_in[c + kp..c + kp + e].copy_from_slice(&self.enc);
        if inputs.append_position {
            self.mlp_in[c + kp + e..].copy_from_slice(&x);
        }
        macs
    }
}

impl<S> Drop for SplatScratch<'_, S> {
    fn drop(&mut self) {
        self.stats.release_scratch(self.mlp_bytes);
    }
}

/// Shared accumulators for a fused splat.
pub struct SplatAccums {
    pub theta: StructureAccum,
    pub weight: StructureAccum,
}

impl SplatAccums {
    pub fn new(target: &StructureSpec, mode: AccumMode) -> Self {
        SplatAccums {
            theta: StructureAccum::zeros(*target, mode),
            weight: StructureAccum::zeros(target.weight_target(), mode),
        }
    }

    pub fn into_result<S: Real>(&self) -> Result<SplatResult<S>> {
        let theta = self.theta.into_structure::<S>();
        let theta_weight = self.weight.into_structure::<S>();
        let normalized = normalize(&theta, &theta_weight)?;
        Ok(SplatResult {
            theta,
            theta_weight,
            normalized,
        })
    }
}

/// Streams one block of rays into the shared accumulators. Both splatting
/// passes (feature values and bare weights) share the sample geometry, so
/// they run in one sweep; the weight pass evaluates no decoder and reads
/// no prior, exactly as if they were disabled for a second pass.
pub fn splat_forward_fused_chunk<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    rays: core::ops::Range<usize>,
    accums: &SplatAccums,
    stats: &KernelStats,
) {
    let c_out = inputs.splatted_channels();
    let steps = inputs.samples.steps();
    let mut scratch = SplatScratch::new(inputs, stats);
    let mut counter = FlopCounter::default();
    let one = [S::ONE];

    for ray in rays {
        direnc_unchecked(inputs.samples.direction(ray), &inputs.direnc, &mut scratch.enc);
        for j in 0..=steps {
            let x = inputs.samples.point(ray, j);
            if !in_bounds(x) {
                continue;
            }
            if let Some(mlp) = inputs.modifier_mlp {
                scratch.assemble(inputs, ray, x, &mut counter);
                let SplatScratch {
                    mlp_in,
                    value,
                    mlp_scratch,
                    ..
                } = &mut scratch;
                mlp_forward(
                    mlp,
                    mlp_in,
                    value,
                    mlp_scratch.as_mut().expect("modifier scratch"),
                    &mut counter,
                )
                .expect("validated inputs");
            } else {
                scratch.value.copy_from_slice(
                    &inputs.features[ray * inputs.channels..(ray + 1) * inputs.channels],
                );
            }
            let cells = accums.theta.scatter(x, &scratch.value, S::ONE);
            counter.add_interp(cells as u64 * c_out as u64);
            let wcells = accums.weight.scatter(x, &one, S::ONE);
            counter.add_interp(wcells as u64);
        }
    }
    stats.flush(&counter);
}

/// Fused splat over all rays (sequential chunk driver).
pub fn splat_forward_fused<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    target: &StructureSpec,
    mode: AccumMode,
    stats: &KernelStats,
) -> Result<SplatResult<S>> {
    inputs.validate(target)?;
    let accums = SplatAccums::new(target, mode);
    let m = inputs.num_rays();
    let mut start = 0;
    while start < m {
        let end = (start + RAY_CHUNK).min(m);
        splat_forward_fused_chunk(inputs, start..end, &accums, stats);
        start = end;
    }
    accums.into_result()
}

/// Store-all splat: materializes every per-sample splatted value (and the
/// modifier activations needed for exact backward), then scatters them
/// sequentially in ray order.
pub struct NaiveSplatStore<'a, S> {
    values: TrackedBuf<'a, S>,
    prior_feats: TrackedBuf<'a, S>,
    mlp_hidden: TrackedBuf<'a, S>,
    enc: TrackedBuf<'a, S>,
}

pub fn splat_forward_naive<'a, S: Real>(
    inputs: &SplatterInputs<'_, S>,
    target: &StructureSpec,
    stats: &'a KernelStats,
) -> Result<(SplatResult<S>, NaiveSplatStore<'a, S>)> {
    inputs.validate(target)?;
    let m = inputs.num_rays();
    let steps = inputs.samples.steps();
    let n_samples = steps + 1;
    let c_out = inputs.splatted_channels();
    let kp = inputs.prior_channels();
    let e = inputs.direnc.encoded_len();
    let hidden_len = inputs.modifier_mlp.map_or(0, |mlp| mlp.hidden_scalar_len());

    let mut store = NaiveSplatStore {
        values: TrackedBuf::zeroed(stats, m * n_samples * c_out),
        prior_feats: TrackedBuf::zeroed(stats, m * n_samples * kp),
        mlp_hidden: TrackedBuf::zeroed(stats, m * n_samples * hidden_len),
        enc: TrackedBuf::zeroed(stats, m * e),
    };
    let mut theta = target.zeros::<S>();
    let mut theta_weight = target.weight_target().zeros::<S>();
    let mut mlp_in = vec![S::ZERO; inputs.modifier_in_dim()];
    let mut counter = FlopCounter::default();
    let c = inputs.channels;

    for ray in 0..m {
        direnc_unchecked(
            inputs.samples.direction(ray),
            &inputs.direnc,
            &mut store.enc[ray * e..(ray + 1) * e],
        );
        for j in 0..=steps {
            let x = inputs.samples.point(ray, j);
            if !in_bounds(x) {
                continue;
            }
            let si = ray * n_samples + j;
            let value_slot = si * c_out;
            if let Some(mlp) = inputs.modifier_mlp {
                mlp_in[..c].copy_from_slice(&inputs.features[ray * c..(ray + 1) * c]);
                if let Some(prior) = inputs.prior {
                    let pf = &mut store.prior_feats[si * kp..(si + 1) * kp];
                    let cells = prior.sample_into(x, pf);
                    counter.add_interp(cells as u64 * kp as u64);
                    mlp_in[c..c + kp].copy_from_slice(pf);
                }
                mlp_in[c + kp..c + kp + e].copy_from_slice(&store.enc[ray * e..(ray + 1) * e]);
                if inputs.append_position {
                    mlp_in[c + kp + e..].copy_from_slice(&x);
                }
                forward_storing(
                    mlp,
                    &mlp_in,
                    &mut store.mlp_hidden[si * hidden_len..(si + 1) * hidden_len],
                    &mut store.values[value_slot..value_slot + c_out],
                    &mut counter,
                );
            } else {
                store.values[value_slot..value_slot + c_out]
                    .copy_from_slice(&inputs.features[ray * c..(ray + 1) * c]);
            }
            theta
                .splat_accumulate(x, &store.values[value_slot..value_slot + c_out], S::ONE)
                .expect("validated channels");
            theta_weight
                .splat_accumulate(x, &[S::ONE], S::ONE)
                .expect("single weight channel");
            counter.add_interp(8 * (c_out + 1) as u64);
        }
    }
    stats.flush(&counter);
    let normalized = normalize(&theta, &theta_weight)?;
    Ok((
        SplatResult {
            theta,
            theta_weight,
            normalized,
        },
        store,
    ))
}

/// Gathers the weight-normalized upstream gradient at `x`:
/// `sum_cells w_cell * grad[cell] / max(weight[cell], eps)`, the exact
/// transpose of scatter-then-normalize with the weights held constant.
fn gather_scaled<S: Real>(
    grad_normalized: &HashStructure<S>,
    theta_weight: &HashStructure<S>,
    x: [S; 3],
    out: &mut [S],
) -> u32 {
    let spec = grad_normalized.spec();
    let k = spec.channels;
    let eps = S::from_f32(WEIGHT_EPS);
    out.iter_mut().for_each(|v| *v = S::ZERO);
    for_each_cell(&spec, x, |cw| {
        let w = theta_weight.flat_get_buffer(cw.buffer, cw.base / k);
        let scale = cw.weight / w.max(eps);
        for (ch, o) in out.iter_mut().enumerate() {
            *o += scale * grad_normalized.flat_get_buffer(cw.buffer, cw.base + ch);
        }
    })
}

struct SplatBackwardScratch<'a, S> {
    inner: SplatScratch<'a, S>,
    gathered: TrackedBuf<'a, S>,
    grad_in: TrackedBuf<'a, S>,
    stage: Option<MlpGrads<S>>,
    stage_bytes: u64,
    stats: &'a KernelStats,
}

impl<'a, S: Real> SplatBackwardScratch<'a, S> {
    fn new(inputs: &SplatterInputs<'_, S>, stats: &'a KernelStats) -> Self {
        let stage = inputs.modifier_mlp.map(MlpGrads::zeros_like);
        let stage_bytes = inputs.modifier_mlp.map_or(0, |mlp| {
            (mlp.param_count() * core::mem::size_of::<S>()) as u64
        });
        stats.track_scratch(stage_bytes);
        SplatBackwardScratch {
            inner: SplatScratch::new(inputs, stats),
            gathered: TrackedBuf::zeroed(stats, inputs.splatted_channels()),
            grad_in: TrackedBuf::zeroed(stats, inputs.modifier_in_dim()),
            stage,
            stage_bytes,
            stats,
        }
    }
}

impl<S> Drop for SplatBackwardScratch<'_, S> {
    fn drop(&mut self) {
        self.stats.release_scratch(self.stage_bytes);
    }
}

/// Shared accumulators for the fused splat backward.
pub struct SplatBackwardAccums {
    pub prior: Option<StructureAccum>,
    pub modifier: Option<ParamAccum>,
}

impl SplatBackwardAccums {
    pub fn new<S: Real>(inputs: &SplatterInputs<'_, S>, mode: AccumMode) -> Self {
        SplatBackwardAccums {
            prior: inputs
                .prior
                .map(|p| StructureAccum::zeros(p.spec(), mode)),
            modifier: inputs.modifier_mlp.map(|m| ParamAccum::zeros(m, mode)),
        }
    }
}

/// Backward over one block of rays; `grad_features_chunk` covers exactly
/// this block's rows.
#[allow(clippy::too_many_arguments)]
pub fn splat_backward_fused_chunk<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    rays: core::ops::Range<usize>,
    grad_normalized: &HashStructure<S>,
    theta_weight: &HashStructure<S>,
    accums: &SplatBackwardAccums,
    grad_features_chunk: &mut [S],
    stats: &KernelStats,
) {
    let c = inputs.channels;
    let c_out = inputs.splatted_channels();
    let kp = inputs.prior_channels();
    let steps = inputs.samples.steps();
    let mut scratch = SplatBackwardScratch::new(inputs, stats);
    let mut counter = FlopCounter::default();

    for (slot, ray) in rays.clone().enumerate() {
        direnc_unchecked(
            inputs.samples.direction(ray),
            &inputs.direnc,
            &mut scratch.inner.enc,
        );
        let grad_row = &mut grad_features_chunk[slot * c..(slot + 1) * c];
        for j in 0..=steps {
            let x = inputs.samples.point(ray, j);
            if !in_bounds(x) {
                continue;
            }
            let cells = gather_scaled(grad_normalized, theta_weight, x, &mut scratch.gathered);
            counter.add_interp(cells as u64 * c_out as u64);
            if let Some(mlp) = inputs.modifier_mlp {
                scratch.inner.assemble(inputs, ray, x, &mut counter);
                let SplatScratch {
                    mlp_in,
                    mlp_scratch,
                    ..
                } = &mut scratch.inner;
                mlp_vjp(
                    mlp,
                    mlp_in,
                    &scratch.gathered,
                    &mut scratch.grad_in,
                    scratch.stage.as_mut().expect("modifier staging"),
                    mlp_scratch.as_mut().expect("modifier scratch"),
                    &mut counter,
                )
                .expect("validated inputs");
                for (g, d) in grad_row.iter_mut().zip(scratch.grad_in.iter()) {
                    *g += *d;
                }
                if let Some(prior_accum) = &accums.prior {
                    let scattered =
                        prior_accum.scatter(x, &scratch.grad_in[c..c + kp], S::ONE);
                    counter.add_interp(scattered as u64 * kp as u64);
                }
            } else {
                for (g, d) in grad_row.iter_mut().zip(scratch.gathered.iter()) {
                    *g += *d;
                }
            }
        }
    }
    if let (Some(stage), Some(accum)) = (scratch.stage.as_mut(), accums.modifier.as_ref()) {
        stage.flush_into(accum);
    }
    stats.flush(&counter);
}

/// Fused backward pass (sequential chunk driver). `theta_weight` must be
/// the weight structure cached from the matching forward call.
pub fn splat_backward_fused<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    target: &StructureSpec,
    grad_normalized: &HashStructure<S>,
    theta_weight: &HashStructure<S>,
    mode: AccumMode,
    stats: &KernelStats,
) -> Result<SplatGrads<S>> {
    inputs.validate(target)?;
    validate_backward_shapes(target, grad_normalized, theta_weight)?;
    let accums = SplatBackwardAccums::new(inputs, mode);
    let m = inputs.num_rays();
    let mut grad_features = vec![S::ZERO; m * inputs.channels];
    let mut start = 0;
    while start < m {
        let end = (start + RAY_CHUNK).min(m);
        let chunk = &mut grad_features[start * inputs.channels..end * inputs.channels];
        splat_backward_fused_chunk(
            inputs,
            start..end,
            grad_normalized,
            theta_weight,
            &accums,
            chunk,
            stats,
        );
        start = end;
    }
    Ok(SplatGrads {
        grad_features,
        grad_prior: accums.prior.as_ref().map(|a| a.into_structure()),
        grad_modifier_mlp: accums
            .modifier
            .as_ref()
            .zip(inputs.modifier_mlp)
            .map(|(a, m)| a.into_grads(m)),
    })
}

pub fn validate_backward_shapes<S: Real>(
    target: &StructureSpec,
    grad_normalized: &HashStructure<S>,
    theta_weight: &HashStructure<S>,
) -> Result<()> {
    if grad_normalized.spec() != *target {
        return Err(Error::Contract {
            what: "upstream gradient does not match the splat target",
        });
    }
    if theta_weight.spec() != target.weight_target() {
        return Err(Error::Contract {
            what: "weight cache does not match the splat target (run the forward pass first)",
        });
    }
    Ok(())
}

/// Reverse-mode oracle over the stored forward intermediates.
pub fn splat_backward_naive<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    target: &StructureSpec,
    grad_normalized: &HashStructure<S>,
    theta_weight: &HashStructure<S>,
    store: &NaiveSplatStore<'_, S>,
    stats: &KernelStats,
) -> Result<SplatGrads<S>> {
    inputs.validate(target)?;
    validate_backward_shapes(target, grad_normalized, theta_weight)?;
    let m = inputs.num_rays();
    let c = inputs.channels;
    let c_out = inputs.splatted_channels();
    let kp = inputs.prior_channels();
    let e = inputs.direnc.encoded_len();
    let steps = inputs.samples.steps();
    let n_samples = steps + 1;
    let hidden_len = inputs.modifier_mlp.map_or(0, |mlp| mlp.hidden_scalar_len());

    let mut grad_features = vec![S::ZERO; m * c];
    let mut grad_prior = inputs.prior.map(|p| p.zeros_like());
    let mut grad_mlp = inputs.modifier_mlp.map(MlpGrads::zeros_like);
    let width = inputs.modifier_mlp.map_or(1, |mlp| mlp.max_width());
    let mut work_a = vec![S::ZERO; width];
    let mut work_b = vec![S::ZERO; width];
    let mut mlp_in = vec![S::ZERO; inputs.modifier_in_dim()];
    let mut grad_in = vec![S::ZERO; inputs.modifier_in_dim()];
    let mut gathered = vec![S::ZERO; c_out];
    let mut counter = FlopCounter::default();

    for ray in 0..m {
        for j in 0..=steps {
            let x = inputs.samples.point(ray, j);
            if !in_bounds(x) {
                continue;
            }
            let si = ray * n_samples + j;
            gather_scaled(grad_normalized, theta_weight, x, &mut gathered);
            counter.add_interp(8 * c_out as u64);
            match inputs.modifier_mlp {
                Some(mlp) => {
                    mlp_in[..c].copy_from_slice(&inputs.features[ray * c..(ray + 1) * c]);
                    if kp > 0 {
                        mlp_in[c..c + kp]
                            .copy_from_slice(&store.prior_feats[si * kp..(si + 1) * kp]);
                    }
                    mlp_in[c + kp..c + kp + e]
                        .copy_from_slice(&store.enc[ray * e..(ray + 1) * e]);
                    if inputs.append_position {
                        mlp_in[c + kp + e..].copy_from_slice(&x);
                    }
                    vjp_from_stored(
                        mlp,
                        &mlp_in,
                        &gathered,
                        &mut grad_in,
                        grad_mlp.as_mut().expect("modifier grads"),
                        &store.mlp_hidden[si * hidden_len..(si + 1) * hidden_len],
                        &store.values[si * c_out..(si + 1) * c_out],
                        &mut work_a,
                        &mut work_b,
                        &mut counter,
                    );
                    for (g, d) in grad_features[ray * c..(ray + 1) * c]
                        .iter_mut()
                        .zip(grad_in.iter())
                    {
                        *g += *d;
                    }
                    if let Some(gp) = grad_prior.as_mut() {
                        sample_vjp(gp, x, &grad_in[c..c + kp]).expect("prior channels");
                        counter.add_interp(8 * kp as u64);
                    }
                }
                None => {
                    for (g, d) in grad_features[ray * c..(ray + 1) * c]
                        .iter_mut()
                        .zip(gathered.iter())
                    {
                        *g += *d;
                    }
                }
            }
        }
    }
    stats.flush(&counter);
    Ok(SplatGrads {
        grad_features,
        grad_prior,
        grad_modifier_mlp: grad_mlp,
    })
}

/// Raw un-normalized scatter of weighted point values, the exact transpose
/// of sampling; exposed for adjointness checks and plumbing.
pub fn splat_plain<S: Real>(
    points: &[[S; 3]],
    values: &[S],
    weights: &[S],
    target: &StructureSpec,
) -> Result<HashStructure<S>> {
    if values.len() != points.len() * target.channels {
        return Err(Error::DimMismatch {
            what: "splat values",
            expected: points.len() * target.channels,
            got: values.len(),
        });
    }
    if weights.len() != points.len() {
        return Err(Error::DimMismatch {
            what: "splat weights",
            expected: points.len(),
            got: weights.len(),
        });
    }
    let mut out = target.zeros::<S>();
    for (i, point) in points.iter().enumerate() {
        out.splat_accumulate(
            *point,
            &values[i * target.channels..(i + 1) * target.channels],
            weights[i],
        )?;
    }
    Ok(out)
}
