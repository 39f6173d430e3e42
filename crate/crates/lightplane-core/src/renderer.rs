//! Emission-absorption volume rendering with a fused, constant-scratch
//! streaming implementation and a store-all naive oracle.
//!
//! Forward: per ray, one pass over the `R+1` samples keeps only the feature
//! accumulator and the running transmittance
//! `T_j = exp(-sum_{n<=j} delta * sigma_n)`; the rendered feature is
//! `sum_{j=1..R} (T_{j-1} - T_j) f_v(x_j)` and the final transmittance is
//! cached (one scalar per ray).
//!
//! Backward: marches each ray in reverse, reconstructing
//! `T_{q-1} = T_q * exp(delta * sigma_q)` from the cached final value and
//! maintaining the scalar suffix sum `A_q = sum_{j>q} (T_{j-1}-T_j) a_j`
//! with `a_j = p . f_v(x_j)`. Every per-sample quantity is recomputed on
//! the fly; nothing from the forward pass is kept except the cached final
//! transmittance. The transmittance recursion runs in f64 so that
//! reconstruction error stays far below FP32 noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::accum::AccumMode;
use crate::counters::{FlopCounter, KernelStats, TrackedBuf};
use crate::error::{Error, Result};
use crate::hash3d::{sample_vjp, HashStructure, StructureAccum};
use crate::math::{dot, Real};
use crate::mlp::{
    direnc_unchecked, forward_storing, mlp_forward, vjp_from_stored, DirEncConfig, MlpGrads,
    MlpParams, MlpScratch, ParamAccum,
};
use crate::rays::RaySamples;

/// Rays are processed in fixed-size blocks so that scratch sizing and
/// deterministic accumulation are independent of the worker count.
pub const RAY_CHUNK: usize = 64;

/// Transmittance floor; keeps the reverse reconstruction finite when the
/// forward pass saturates.
pub const TRANSMITTANCE_FLOOR: f64 = 1e-30;

/// Everything a render pass needs, borrowed.
#[derive(Clone, Copy)]
pub struct RendererInputs<'a, S> {
    pub structure: &'a HashStructure<S>,
    pub sigma_mlp: &'a MlpParams<S>,
    pub feature_mlp: &'a MlpParams<S>,
    pub samples: &'a RaySamples<S>,
    pub direnc: DirEncConfig,
    /// Opacity decode is clamped to `[0, sigma_max]`.
    pub sigma_max: f32,
    pub compute_depth: bool,
}

pub const DEFAULT_SIGMA_MAX: f32 = 1e4;

impl<'a, S: Real> RendererInputs<'a, S> {
    pub fn new(
        structure: &'a HashStructure<S>,
        sigma_mlp: &'a MlpParams<S>,
        feature_mlp: &'a MlpParams<S>,
        samples: &'a RaySamples<S>,
        direnc: DirEncConfig,
    ) -> Self {
        RendererInputs {
            structure,
            sigma_mlp,
            feature_mlp,
            samples,
            direnc,
            sigma_max: DEFAULT_SIGMA_MAX,
            compute_depth: false,
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_mlp.out_dim()
    }

    pub fn num_rays(&self) -> usize {
        self.samples.num_rays()
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma_mlp.validate()?;
        self.feature_mlp.validate()?;
        let k = self.structure.channels();
        if self.sigma_mlp.in_dim() != k {
            return Err(Error::DimMismatch {
                what: "opacity decoder input vs structure channels",
                expected: k,
                got: self.sigma_mlp.in_dim(),
            });
        }
        if self.sigma_mlp.out_dim() != 1 {
            return Err(Error::DimMismatch {
                what: "opacity decoder output",
                expected: 1,
                got: self.sigma_mlp.out_dim(),
            });
        }
        let want = k + self.direnc.encoded_len();
        if self.feature_mlp.in_dim() != want {
            return Err(Error::DimMismatch {
                what: "feature decoder input vs structure + direction encoding",
                expected: want,
                got: self.feature_mlp.in_dim(),
            });
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > 0.0) {
            return Err(Error::Domain {
                what: "sigma_max must be positive",
            });
        }
        Ok(())
    }
}

/// Rendered features (`M x C` row-major) plus the cached per-ray final
/// transmittance required by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<S> {
    pub features: Vec<S>,
    pub channels: usize,
    pub final_transmittance: Vec<S>,
    pub expected_depth: Option<Vec<S>>,
}

impl<S: Real> RenderOutput<S> {
    pub fn feature_row(&self, ray: usize) -> &[S] {
        &self.features[ray * self.channels..(ray + 1) * self.channels]
    }
}

/// Gradients mirroring the primal shapes.
#[derive(Debug, Clone)]
pub struct RenderGrads<S> {
    pub grad_structure: HashStructure<S>,
    pub grad_sigma_mlp: MlpGrads<S>,
    pub grad_feature_mlp: MlpGrads<S>,
}

#[inline]
fn decode_sigma<S: Real>(raw: S, sigma_max: S) -> S {
    raw.clamp(S::ZERO, sigma_max)
}

/// Gradient factor of the opacity clamp (zero when saturated).
#[inline]
fn sigma_clamp_gate<S: Real>(raw: S, sigma_max: S) -> S {
    if raw > S::ZERO && raw < sigma_max {
        S::ONE
    } else {
        S::ZERO
    }
}

struct ForwardScratch<'a, S> {
    feat: TrackedBuf<'a, S>,
    enc: TrackedBuf<'a, S>,
    feature_in: TrackedBuf<'a, S>,
    feature_out: TrackedBuf<'a, S>,
    sigma_out: TrackedBuf<'a, S>,
    accum: TrackedBuf<'a, S>,
    sigma_scratch: MlpScratch<S>,
    feature_scratch: MlpScratch<S>,
    mlp_bytes: u64,
    stats: &'a KernelStats,
}

impl<'a, S: Real> ForwardScratch<'a, S> {
    fn new(inputs: &RendererInputs<'_, S>, stats: &'a KernelStats) -> Self {
        let k = inputs.structure.channels();
        let e = inputs.direnc.encoded_len();
        let c = inputs.feature_channels();
        let sigma_scratch = MlpScratch::for_params(inputs.sigma_mlp);
        let feature_scratch = MlpScratch::for_params(inputs.feature_mlp);
        let mlp_bytes = ((sigma_scratch.scalar_len() + feature_scratch.scalar_len())
            * core::mem::size_of::<S>()) as u64;
        stats.track_scratch(mlp_bytes);
        ForwardScratch {
            feat: TrackedBuf::zeroed(stats, k),
            enc: TrackedBuf::zeroed(stats, e),
            feature_in: TrackedBuf::zeroed(stats, k + e),
            feature_out: TrackedBuf::zeroed(stats, c),
            sigma_out: TrackedBuf::zeroed(stats, 1),
            accum: TrackedBuf::zeroed(stats, c),
            sigma_scratch,
            feature_scratch,
            mlp_bytes,
            stats,
        }
    }
}

impl<S> Drop for ForwardScratch<'_, S> {
    fn drop(&mut self) {
        self.stats.release_scratch(self.mlp_bytes);
    }
}

/// Streams one block of rays; `out_*` slices cover exactly this block.
/// Inputs must already be validated.
pub fn render_forward_fused_chunk<S: Real>(
    inputs: &RendererInputs<'_, S>,
    rays: core::ops::Range<usize>,
    out_features: &mut [S],
    out_transmittance: &mut [S],
    mut out_depth: Option<&mut [S]>,
    stats: &KernelStats,
) {
    let k = inputs.structure.channels();
    let c = inputs.feature_channels();
    let steps = inputs.samples.steps();
    let delta = inputs.samples.delta();
    let sigma_max = S::from_f32(inputs.sigma_max);
    debug_assert_eq!(out_features.len(), rays.len() * c);
    debug_assert_eq!(out_transmittance.len(), rays.len());

    let mut scratch = ForwardScratch::new(inputs, stats);
    let mut counter = FlopCounter::default();

    for (slot, ray) in rays.clone().enumerate() {
        direnc_unchecked(inputs.samples.direction(ray), &inputs.direnc, &mut scratch.enc);
        let mut transmittance = 1.0f64;
        scratch.accum.iter_mut().for_each(|v| *v = S::ZERO);
        let mut depth = S::ZERO;

        for j in 0..=steps {
            let x = inputs.samples.point(ray, j);
            let cells = inputs.structure.sample_into(x, &mut scratch.feat);
            counter.add_interp(cells as u64 * k as u64);
            mlp_forward(
                inputs.sigma_mlp,
                &scratch.feat,
                &mut scratch.sigma_out,
                &mut scratch.sigma_scratch,
                &mut counter,
            )
            .expect("validated inputs");
            let sigma = decode_sigma(scratch.sigma_out[0], sigma_max);
            let prev = transmittance;
            transmittance =
                (prev * (-(delta * sigma).to_f64()).exp()).max(TRANSMITTANCE_FLOOR);
            if j == 0 {
                continue; // sample 0 only seeds the transmittance
            }
            scratch.feature_in[..k].copy_from_slice(&scratch.feat);
            scratch.feature_in[k..].copy_from_slice(&scratch.enc);
            mlp_forward(
                inputs.feature_mlp,
                &scratch.feature_in,
                &mut scratch.feature_out,
                &mut scratch.feature_scratch,
                &mut counter,
            )
            .expect("validated inputs");
            let weight = S::from_f64(prev - transmittance);
            for (acc, f) in scratch.accum.iter_mut().zip(scratch.feature_out.iter()) {
                *acc += weight * *f;
            }
            if out_depth.is_some() {
                depth += weight * inputs.samples.t_value(ray, j);
            }
        }

        out_features[slot * c..(slot + 1) * c].copy_from_slice(&scratch.accum);
        out_transmittance[slot] = S::from_f64(transmittance);
        if let Some(d) = out_depth.as_deref_mut() {
            d[slot] = depth;
        }
    }
    stats.flush(&counter);
}

/// Fused forward pass over all rays (sequential chunk driver).
pub fn render_forward_fused<S: Real>(
    inputs: &RendererInputs<'_, S>,
    stats: &KernelStats,
) -> Result<RenderOutput<S>> {
    inputs.validate()?;
    let m = inputs.num_rays();
    let c = inputs.feature_channels();
    let mut features = vec![S::ZERO; m * c];
    let mut final_t = vec![S::ZERO; m];
    let mut depth = if inputs.compute_depth {
        Some(vec![S::ZERO; m])
    } else {
        None
    };
    let mut start = 0;
    while start < m {
        let end = (start + RAY_CHUNK).min(m);
        render_forward_fused_chunk(
            inputs,
            start..end,
            &mut features[start * c..end * c],
            &mut final_t[start..end],
            depth.as_mut().map(|d| &mut d[start..end]),
            stats,
        );
        start = end;
    }
    Ok(RenderOutput {
        features,
        channels: c,
        final_transmittance: final_t,
        expected_depth: depth,
    })
}

/// Store-all forward pass: retains every per-sample feature, opacity,
/// decoder activation and transmittance, exactly the memory regime the
/// fused kernel exists to avoid. Doubles as the backward oracle's cache
/// and as the measured baseline for the instrumented memory benchmarks.
pub struct NaiveRenderStore<'a, S> {
    feats: TrackedBuf<'a, S>,
    sigma_raw: TrackedBuf<'a, S>,
    sigma_hidden: TrackedBuf<'a, S>,
    feature_vals: TrackedBuf<'a, S>,
    feature_hidden: TrackedBuf<'a, S>,
    transmittance: TrackedBuf<'a, S>,
    enc: TrackedBuf<'a, S>,
}

impl<S: Real> NaiveRenderStore<'_, S> {
    pub fn transmittance(&self, ray: usize, j: usize, steps: usize) -> S {
        self.transmittance[ray * (steps + 1) + j]
    }
}

pub fn render_forward_naive<'a, S: Real>(
    inputs: &RendererInputs<'_, S>,
    stats: &'a KernelStats,
) -> Result<(RenderOutput<S>, NaiveRenderStore<'a, S>)> {
    inputs.validate()?;
    let m = inputs.num_rays();
    let k = inputs.structure.channels();
    let c = inputs.feature_channels();
    let e = inputs.direnc.encoded_len();
    let steps = inputs.samples.steps();
    let n_samples = steps + 1;
    let sigma_hidden_len = inputs.sigma_mlp.hidden_scalar_len();
    let feature_hidden_len = inputs.feature_mlp.hidden_scalar_len();
    let delta = inputs.samples.delta();
    let sigma_max = S::from_f32(inputs.sigma_max);

    let mut store = NaiveRenderStore {
        feats: TrackedBuf::zeroed(stats, m * n_samples * k),
        sigma_raw: TrackedBuf::zeroed(stats, m * n_samples),
        sigma_hidden: TrackedBuf::zeroed(stats, m * n_samples * sigma_hidden_len),
        feature_vals: TrackedBuf::zeroed(stats, m * steps * c),
        feature_hidden: TrackedBuf::zeroed(stats, m * steps * feature_hidden_len),
        transmittance: TrackedBuf::zeroed(stats, m * n_samples),
        enc: TrackedBuf::zeroed(stats, m * e),
    };

    let mut features = vec![S::ZERO; m * c];
    let mut final_t = vec![S::ZERO; m];
    let mut depth = if inputs.compute_depth {
        Some(vec![S::ZERO; m])
    } else {
        None
    };
    let mut feature_in = vec![S::ZERO; k + e];
    let mut sigma_out = [S::ZERO];
    let mut counter = FlopCounter::default();

    for ray in 0..m {
        direnc_unchecked(
            inputs.samples.direction(ray),
            &inputs.direnc,
            &mut store.enc[ray * e..(ray + 1) * e],
        );
        let mut transmittance = 1.0f64;
        for j in 0..n_samples {
            let x = inputs.samples.point(ray, j);
            let si = ray * n_samples + j;
            let feat = &mut store.feats[si * k..(si + 1) * k];
            let cells = inputs.structure.sample_into(x, feat);
            counter.add_interp(cells as u64 * k as u64);
            forward_storing(
                inputs.sigma_mlp,
                feat,
                &mut store.sigma_hidden[si * sigma_hidden_len..(si + 1) * sigma_hidden_len],
                &mut sigma_out,
                &mut counter,
            );
            store.sigma_raw[si] = sigma_out[0];
            let sigma = decode_sigma(sigma_out[0], sigma_max);
            let prev = transmittance;
            transmittance =
                (prev * (-(delta * sigma).to_f64()).exp()).max(TRANSMITTANCE_FLOOR);
            store.transmittance[si] = S::from_f64(transmittance);
            if j == 0 {
                continue;
            }
            let fi = ray * steps + (j - 1);
            feature_in[..k].copy_from_slice(feat);
            feature_in[k..].copy_from_slice(&store.enc[ray * e..(ray + 1) * e]);
            forward_storing(
                inputs.feature_mlp,
                &feature_in,
                &mut store.feature_hidden
                    [fi * feature_hidden_len..(fi + 1) * feature_hidden_len],
                &mut store.feature_vals[fi * c..(fi + 1) * c],
                &mut counter,
            );
            let weight = S::from_f64(prev - transmittance);
            for ch in 0..c {
                features[ray * c + ch] += weight * store.feature_vals[fi * c + ch];
            }
            if let Some(d) = depth.as_mut() {
                d[ray] += weight * inputs.samples.t_value(ray, j);
            }
        }
        final_t[ray] = S::from_f64(transmittance);
    }
    stats.flush(&counter);
    Ok((
        RenderOutput {
            features,
            channels: c,
            final_transmittance: final_t,
            expected_depth: depth,
        },
        store,
    ))
}

/// Shared accumulators for the fused backward pass.
pub struct RenderBackwardAccums {
    pub structure: StructureAccum,
    pub sigma: ParamAccum,
    pub feature: ParamAccum,
}

impl RenderBackwardAccums {
    pub fn new<S: Real>(inputs: &RendererInputs<'_, S>, mode: AccumMode) -> Self {
        RenderBackwardAccums {
            structure: StructureAccum::zeros(inputs.structure.spec(), mode),
            sigma: ParamAccum::zeros(inputs.sigma_mlp, mode),
            feature: ParamAccum::zeros(inputs.feature_mlp, mode),
        }
    }

    pub fn into_grads<S: Real>(&self, inputs: &RendererInputs<'_, S>) -> RenderGrads<S> {
        RenderGrads {
            grad_structure: self.structure.into_structure(),
            grad_sigma_mlp: self.sigma.into_grads(inputs.sigma_mlp),
            grad_feature_mlp: self.feature.into_grads(inputs.feature_mlp),
        }
    }
}

struct BackwardScratch<'a, S> {
    feat: TrackedBuf<'a, S>,
    enc: TrackedBuf<'a, S>,
    feature_in: TrackedBuf<'a, S>,
    feature_grad_in: TrackedBuf<'a, S>,
    sigma_grad_in: TrackedBuf<'a, S>,
    dfeat: TrackedBuf<'a, S>,
    upstream_v: TrackedBuf<'a, S>,
    sigma_scratch: MlpScratch<S>,
    feature_scratch: MlpScratch<S>,
    sigma_stage: MlpGrads<S>,
    feature_stage: MlpGrads<S>,
    extra_bytes: u64,
    stats: &'a KernelStats,
}

impl<'a, S: Real> BackwardScratch<'a, S> {
    fn new(inputs: &RendererInputs<'_, S>, stats: &'a KernelStats) -> Self {
        let k = inputs.structure.channels();
        let e = inputs.direnc.encoded_len();
        let c = inputs.feature_channels();
        let sigma_scratch = MlpScratch::for_params(inputs.sigma_mlp);
        let feature_scratch = MlpScratch::for_params(inputs.feature_mlp);
        let sigma_stage = MlpGrads::zeros_like(inputs.sigma_mlp);
        let feature_stage = MlpGrads::zeros_like(inputs.feature_mlp);
        let extra_scalars = sigma_scratch.scalar_len()
            + feature_scratch.scalar_len()
            + inputs.sigma_mlp.param_count()
            + inputs.feature_mlp.param_count();
        let extra_bytes = (extra_scalars * core::mem::size_of::<S>()) as u64;
        stats.track_scratch(extra_bytes);
        BackwardScratch {
            feat: TrackedBuf::zeroed(stats, k),
            enc: TrackedBuf::zeroed(stats, e),
            feature_in: TrackedBuf::zeroed(stats, k + e),
            feature_grad_in: TrackedBuf::zeroed(stats, k + e),
            sigma_grad_in: TrackedBuf::zeroed(stats, k),
            dfeat: TrackedBuf::zeroed(stats, k),
            upstream_v: TrackedBuf::zeroed(stats, c),
            sigma_scratch,
            feature_scratch,
            sigma_stage,
            feature_stage,
            extra_bytes,
            stats,
        }
    }
}

impl<S> Drop for BackwardScratch<'_, S> {
    fn drop(&mut self) {
        self.stats.release_scratch(self.extra_bytes);
    }
}

/// Reverse-marching backward pass over one block of rays. Parameter
/// gradients are staged locally and flushed once per block; structure
/// gradients scatter straight into the shared accumulator.
pub fn render_backward_fused_chunk<S: Real>(
    inputs: &RendererInputs<'_, S>,
    rays: core::ops::Range<usize>,
    upstream: &[S],
    final_transmittance: &[S],
    accums: &RenderBackwardAccums,
    stats: &KernelStats,
) {
    let k = inputs.structure.channels();
    let c = inputs.feature_channels();
    let steps = inputs.samples.steps();
    let delta = inputs.samples.delta();
    let sigma_max = S::from_f32(inputs.sigma_max);

    let mut scratch = BackwardScratch::new(inputs, stats);
    let mut counter = FlopCounter::default();

    for ray in rays {
        let p = &upstream[ray * c..(ray + 1) * c];
        direnc_unchecked(inputs.samples.direction(ray), &inputs.direnc, &mut scratch.enc);

        let mut transmittance = final_transmittance[ray].to_f64().max(TRANSMITTANCE_FLOOR);
        let mut suffix = 0.0f64; // A_q = sum_{j>q} (T_{j-1} - T_j) a_j

        for q in (0..=steps).rev() {
            let x = inputs.samples.point(ray, q);
            let cells = inputs.structure.sample_into(x, &mut scratch.feat);
            counter.add_interp(cells as u64 * k as u64);

            // Recompute opacity once (activations kept for the vjp below)
            // and reconstruct the previous transmittance, capped at 1.
            {
                let s = &mut scratch.sigma_scratch;
                forward_storing(
                    inputs.sigma_mlp,
                    &scratch.feat,
                    &mut s.hidden,
                    &mut s.output,
                    &mut counter,
                );
            }
            let sigma_raw = scratch.sigma_scratch.output[0];
            let sigma = decode_sigma(sigma_raw, sigma_max);
            let prev = (transmittance * (delta * sigma).to_f64().exp()).min(1.0);
            let weight = prev - transmittance;

            scratch.dfeat.iter_mut().for_each(|v| *v = S::ZERO);

            let mut a_q = 0.0f64;
            if q >= 1 {
                // Feature path: dL/df_v(x_q) = (T_{q-1} - T_q) p, through a
                // single recompute of the feature decoder.
                scratch.feature_in[..k].copy_from_slice(&scratch.feat);
                scratch.feature_in[k..].copy_from_slice(&scratch.enc);
                {
                    let s = &mut scratch.feature_scratch;
                    forward_storing(
                        inputs.feature_mlp,
                        &scratch.feature_in,
                        &mut s.hidden,
                        &mut s.output,
                        &mut counter,
                    );
                }
                a_q = dot(p, &scratch.feature_scratch.output).to_f64();
                let w = S::from_f64(weight);
                for (u, pv) in scratch.upstream_v.iter_mut().zip(p) {
                    *u = w * *pv;
                }
                {
                    let MlpScratch {
                        work_a,
                        work_b,
                        hidden,
                        output,
                    } = &mut scratch.feature_scratch;
                    vjp_from_stored(
                        inputs.feature_mlp,
                        &scratch.feature_in,
                        &scratch.upstream_v,
                        &mut scratch.feature_grad_in,
                        &mut scratch.feature_stage,
                        hidden,
                        output,
                        work_a,
                        work_b,
                        &mut counter,
                    );
                }
                for (d, g) in scratch.dfeat.iter_mut().zip(scratch.feature_grad_in.iter()) {
                    *d += *g;
                }
            }

            // Opacity path per the reverse-mode identity: for q >= 1 the
            // gradient is -delta (A_q - T_q a_q); sample 0 never contributes
            // a feature term, leaving -delta A_0.
            let sigma_grad = if q >= 1 {
                -delta.to_f64() * (suffix - transmittance * a_q)
            } else {
                -delta.to_f64() * suffix
            };
            let gated = S::from_f64(sigma_grad) * sigma_clamp_gate(sigma_raw, sigma_max);
            {
                let MlpScratch {
                    work_a,
                    work_b,
                    hidden,
                    output,
                } = &mut scratch.sigma_scratch;
                vjp_from_stored(
                    inputs.sigma_mlp,
                    &scratch.feat,
                    &[gated],
                    &mut scratch.sigma_grad_in,
                    &mut scratch.sigma_stage,
                    hidden,
                    output,
                    work_a,
                    work_b,
                    &mut counter,
                );
            }
            for (d, g) in scratch.dfeat.iter_mut().zip(scratch.sigma_grad_in.iter()) {
                *d += *g;
            }

            let scattered = accums.structure.scatter(x, &scratch.dfeat, S::ONE);
            counter.add_interp(scattered as u64 * k as u64);

            suffix += weight * a_q;
            transmittance = prev;
        }
    }

    scratch.sigma_stage.flush_into(&accums.sigma);
    scratch.feature_stage.flush_into(&accums.feature);
    stats.flush(&counter);
}

/// Fused backward pass (sequential chunk driver).
pub fn render_backward_fused<S: Real>(
    inputs: &RendererInputs<'_, S>,
    upstream: &[S],
    final_transmittance: &[S],
    mode: AccumMode,
    stats: &KernelStats,
) -> Result<RenderGrads<S>> {
    inputs.validate()?;
    validate_backward_args(inputs, upstream, final_transmittance)?;
    let accums = RenderBackwardAccums::new(inputs, mode);
    let m = inputs.num_rays();
    let mut start = 0;
    while start < m {
        let end = (start + RAY_CHUNK).min(m);
        render_backward_fused_chunk(
            inputs,
            start..end,
            upstream,
            final_transmittance,
            &accums,
            stats,
        );
        start = end;
    }
    Ok(accums.into_grads(inputs))
}

pub fn validate_backward_args<S: Real>(
    inputs: &RendererInputs<'_, S>,
    upstream: &[S],
    final_transmittance: &[S],
) -> Result<()> {
    let m = inputs.num_rays();
    if upstream.len() != m * inputs.feature_channels() {
        return Err(Error::DimMismatch {
            what: "upstream gradient",
            expected: m * inputs.feature_channels(),
            got: upstream.len(),
        });
    }
    if final_transmittance.len() != m {
        return Err(Error::Contract {
            what: "final transmittance cache does not match the ray count",
        });
    }
    for &t in final_transmittance {
        if !(t > S::ZERO && t <= S::ONE) {
            return Err(Error::Contract {
                what: "final transmittance cache outside (0, 1]",
            });
        }
    }
    Ok(())
}

/// Reverse-mode oracle over the stored intermediates. The opacity gradient
/// is evaluated by the literal double sum over stored transmittances (no
/// suffix accumulator, no reverse reconstruction) and the decoder backward
/// runs from stored activations (no recomputation): an independent route
/// from the fused path.
pub fn render_backward_naive<S: Real>(
    inputs: &RendererInputs<'_, S>,
    upstream: &[S],
    store: &NaiveRenderStore<'_, S>,
    stats: &KernelStats,
) -> Result<RenderGrads<S>> {
    inputs.validate()?;
    let m = inputs.num_rays();
    let k = inputs.structure.channels();
    let c = inputs.feature_channels();
    let e = inputs.direnc.encoded_len();
    let steps = inputs.samples.steps();
    let n_samples = steps + 1;
    let delta = inputs.samples.delta().to_f64();
    let sigma_max = S::from_f32(inputs.sigma_max);
    let sigma_hidden_len = inputs.sigma_mlp.hidden_scalar_len();
    let feature_hidden_len = inputs.feature_mlp.hidden_scalar_len();
    if upstream.len() != m * c {
        return Err(Error::DimMismatch {
            what: "upstream gradient",
            expected: m * c,
            got: upstream.len(),
        });
    }

    let mut grad_structure = inputs.structure.zeros_like();
    let mut grad_sigma = MlpGrads::zeros_like(inputs.sigma_mlp);
    let mut grad_feature = MlpGrads::zeros_like(inputs.feature_mlp);
    let width = inputs.sigma_mlp.max_width().max(inputs.feature_mlp.max_width());
    let mut work_a = vec![S::ZERO; width];
    let mut work_b = vec![S::ZERO; width];
    let mut feature_in = vec![S::ZERO; k + e];
    let mut feature_grad_in = vec![S::ZERO; k + e];
    let mut sigma_grad_in = vec![S::ZERO; k];
    let mut dfeat = vec![S::ZERO; k];
    let mut counter = FlopCounter::default();

    for ray in 0..m {
        let p = &upstream[ray * c..(ray + 1) * c];
        // a_j = p . f_v(x_j) for j = 1..R, from stored features.
        let a: Vec<f64> = (0..steps)
            .map(|ji| {
                let fi = ray * steps + ji;
                dot(p, &store.feature_vals[fi * c..(fi + 1) * c]).to_f64()
            })
            .collect();
        let t = |j: isize| -> f64 {
            if j < 0 {
                1.0
            } else {
                store.transmittance[ray * n_samples + j as usize].to_f64()
            }
        };

        for q in 0..n_samples {
            let si = ray * n_samples + q;
            let feat = &store.feats[si * k..(si + 1) * k];
            dfeat.iter_mut().for_each(|v| *v = S::ZERO);

            // d v / d sigma_q, straight from the emission-absorption sum:
            // v = sum_j (T_{j-1} - T_j) f_j with dT_j/dsigma_q = -delta T_j [j >= q].
            let mut sigma_grad = 0.0f64;
            for j in 1..=steps {
                let d_prev = if (j as isize - 1) >= q as isize {
                    -delta * t(j as isize - 1)
                } else {
                    0.0
                };
                let d_cur = if j >= q { -delta * t(j as isize) } else { 0.0 };
                sigma_grad += (d_prev - d_cur) * a[j - 1];
            }
            let gated = S::from_f64(sigma_grad)
                * sigma_clamp_gate(store.sigma_raw[si], sigma_max);
            vjp_from_stored(
                inputs.sigma_mlp,
                feat,
                &[gated],
                &mut sigma_grad_in,
                &mut grad_sigma,
                &store.sigma_hidden[si * sigma_hidden_len..(si + 1) * sigma_hidden_len],
                &store.sigma_raw[si..si + 1],
                &mut work_a,
                &mut work_b,
                &mut counter,
            );
            for (d, g) in dfeat.iter_mut().zip(sigma_grad_in.iter()) {
                *d += *g;
            }

            if q >= 1 {
                let fi = ray * steps + (q - 1);
                let weight = S::from_f64(t(q as isize - 1) - t(q as isize));
                let upstream_v: Vec<S> = p.iter().map(|pv| weight * *pv).collect();
                feature_in[..k].copy_from_slice(feat);
                feature_in[k..].copy_from_slice(&store.enc[ray * e..(ray + 1) * e]);
                vjp_from_stored(
                    inputs.feature_mlp,
                    &feature_in,
                    &upstream_v,
                    &mut feature_grad_in,
                    &mut grad_feature,
                    &store.feature_hidden
                        [fi * feature_hidden_len..(fi + 1) * feature_hidden_len],
                    &store.feature_vals[fi * c..(fi + 1) * c],
                    &mut work_a,
                    &mut work_b,
                    &mut counter,
                );
                for (d, g) in dfeat.iter_mut().zip(feature_grad_in.iter()) {
                    *d += *g;
                }
            }

            let x = inputs.samples.point(ray, q);
            sample_vjp(&mut grad_structure, x, &dfeat).expect("channel counts match");
            counter.add_interp(8 * k as u64);
        }
    }
    stats.flush(&counter);
    Ok(RenderGrads {
        grad_structure,
        grad_sigma_mlp: grad_sigma,
        grad_feature_mlp: grad_feature,
    })
}

/// Replays the backward pass's transmittance reconstruction against the
/// forward values and reports the largest absolute discrepancy.
pub fn reconstruct_transmittance_check<S: Real>(
    inputs: &RendererInputs<'_, S>,
    final_transmittance: &[S],
    stats: &KernelStats,
) -> Result<S> {
    inputs.validate()?;
    if final_transmittance.len() != inputs.num_rays() {
        return Err(Error::Contract {
            what: "final transmittance cache does not match the ray count",
        });
    }
    let k = inputs.structure.channels();
    let steps = inputs.samples.steps();
    let delta = inputs.samples.delta();
    let sigma_max = S::from_f32(inputs.sigma_max);
    let mut feat = vec![S::ZERO; k];
    let mut sigma_out = [S::ZERO];
    let mut scratch = MlpScratch::for_params(inputs.sigma_mlp);
    let mut counter = FlopCounter::default();
    let mut worst = S::ZERO;

    for ray in 0..inputs.num_rays() {
        // Forward replay.
        let mut forward = Vec::with_capacity(steps + 1);
        let mut sigmas = Vec::with_capacity(steps + 1);
        let mut transmittance = 1.0f64;
        for j in 0..=steps {
            let x = inputs.samples.point(ray, j);
            inputs.structure.sample_into(x, &mut feat);
            mlp_forward(inputs.sigma_mlp, &feat, &mut sigma_out, &mut scratch, &mut counter)
                .expect("validated inputs");
            let sigma = decode_sigma(sigma_out[0], sigma_max);
            transmittance =
                (transmittance * (-(delta * sigma).to_f64()).exp()).max(TRANSMITTANCE_FLOOR);
            forward.push(S::from_f64(transmittance));
            sigmas.push(sigma);
        }
        // Reverse reconstruction seeded by the cached final value; capped
        // at 1 like the backward pass (transmittance is a probability).
        let mut recon = final_transmittance[ray].to_f64().max(TRANSMITTANCE_FLOOR);
        for q in (0..=steps).rev() {
            let diff = (forward[q].to_f64() - recon).abs();
            worst = worst.max(S::from_f64(diff));
            recon = (recon * (delta * sigmas[q]).to_f64().exp()).min(1.0);
        }
    }
    stats.flush(&counter);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash3d::{ContractConfig, StructureSpec};
    use crate::math::Rng;
    use crate::mlp::{HiddenActivation, OutputActivation};
    use crate::rays::{sample_points, RayBundle};

    fn const_mlp(in_dim: usize, values: &[f32]) -> MlpParams<f32> {
        let mut p = MlpParams::zeros(
            &[in_dim, values.len()],
            HiddenActivation::Relu,
            OutputActivation::Identity,
        )
        .unwrap();
        p.layers[0].bias.copy_from_slice(values);
        p
    }

    fn straight_rays(n: usize, near: f32, far: f32) -> RayBundle<f32> {
        RayBundle {
            origins: (0..n)
                .map(|i| [-0.9 + 1.8 * (i as f32 + 0.5) / n as f32, 0.0, -0.95])
                .collect(),
            directions: vec![[0.0, 0.0, 1.0]; n],
            near,
            far,
        }
    }

    struct Instance {
        structure: HashStructure<f32>,
        sigma: MlpParams<f32>,
        feature: MlpParams<f32>,
        samples: RaySamples<f32>,
        direnc: DirEncConfig,
    }

    fn random_instance(seed: u64, triplane: bool) -> Instance {
        let mut rng = Rng::new(seed);
        let k = 4;
        let spec = if triplane {
            StructureSpec::triplane([8, 8, 8], k)
        } else {
            StructureSpec::voxel([8, 8, 8], k)
        };
        let mut structure = spec.zeros::<f32>();
        structure.fill_uniform(&mut rng, -1.0, 1.0);
        let direnc = DirEncConfig {
            num_frequencies: 2,
            include_raw: true,
        };
        let sigma = MlpParams::seeded(
            &[k, 16, 1],
            HiddenActivation::Relu,
            OutputActivation::Softplus,
            &mut rng,
        )
        .unwrap();
        let feature = MlpParams::seeded(
            &[k + direnc.encoded_len(), 16, 3],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        let samples =
            sample_points(straight_rays(16, 0.0, 1.9), 32, ContractConfig::disabled()).unwrap();
        Instance {
            structure,
            sigma,
            feature,
            samples,
            direnc,
        }
    }

    impl Instance {
        fn inputs(&self) -> RendererInputs<'_, f32> {
            RendererInputs::new(
                &self.structure,
                &self.sigma,
                &self.feature,
                &self.samples,
                self.direnc,
            )
        }
    }

    #[test]
    fn zero_opacity_renders_black_with_unit_transmittance() {
        let structure = StructureSpec::voxel([4, 4, 4], 2).zeros::<f32>();
        let direnc = DirEncConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        let sigma = const_mlp(2, &[0.0]);
        let feature = const_mlp(2 + direnc.encoded_len(), &[0.3, 0.6, 0.9]);
        let samples =
            sample_points(straight_rays(4, 0.0, 1.8), 8, ContractConfig::disabled()).unwrap();
        let inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        for ray in 0..4 {
            assert!(out.feature_row(ray).iter().all(|&v| v == 0.0));
            assert_eq!(out.final_transmittance[ray], 1.0);
        }
    }

    #[test]
    fn constant_medium_matches_closed_form() {
        // delta * sigma = 0.1 with R = 4: T_0 = e^-0.1, T_4 = e^-0.5,
        // v = (T_0 - T_4) * c.
        let structure = StructureSpec::voxel([2, 2, 2], 1).zeros::<f32>();
        let direnc = DirEncConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        let sigma = const_mlp(1, &[0.4]);
        let c = [0.25f32, 0.5, 0.75];
        let feature = const_mlp(1 + direnc.encoded_len(), &c);
        let samples =
            sample_points(straight_rays(2, 0.0, 1.0), 4, ContractConfig::disabled()).unwrap();
        let inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let t0 = (-0.1f64).exp();
        let t4 = (-0.5f64).exp();
        for ray in 0..2 {
            for (got, want) in out.feature_row(ray).iter().zip(&c) {
                let expect = ((t0 - t4) * *want as f64) as f32;
                assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
            }
            assert!((out.final_transmittance[ray] as f64 - t4).abs() < 1e-6);
        }
    }

    #[test]
    fn fused_matches_naive_forward() {
        for (seed, triplane) in [(1u64, false), (2, true)] {
            let inst = random_instance(seed, triplane);
            let inputs = inst.inputs();
            let stats = KernelStats::new();
            let fused = render_forward_fused(&inputs, &stats).unwrap();
            let (naive, _store) = render_forward_naive(&inputs, &stats).unwrap();
            let mut worst = 0.0f32;
            for (a, b) in fused.features.iter().zip(&naive.features) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in fused
                .final_transmittance
                .iter()
                .zip(&naive.final_transmittance)
            {
                worst = worst.max((a - b).abs());
            }
            assert!(worst < 1e-5, "forward mismatch {worst}");
        }
    }

    /// Relative error floored at 1% of the oracle's max magnitude: entries
    /// near zero are dominated by reduction noise, where a per-entry ratio
    /// carries no information.
    fn max_rel_err(a: &[f32], b: &[f32]) -> f32 {
        let scale = b.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
        let floor = 1e-2 * scale;
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
            .fold(0.0, f32::max)
    }

    fn flatten_grads(g: &RenderGrads<f32>) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let s: Vec<f32> = (0..g.grad_structure.flat_len())
            .map(|i| g.grad_structure.flat_get(i))
            .collect();
        let gs: Vec<f32> = (0..g.grad_sigma_mlp.param_count())
            .map(|i| g.grad_sigma_mlp.param_get(i))
            .collect();
        let gf: Vec<f32> = (0..g.grad_feature_mlp.param_count())
            .map(|i| g.grad_feature_mlp.param_get(i))
            .collect();
        (s, gs, gf)
    }

    #[test]
    fn fused_backward_matches_naive_oracle() {
        for (seed, triplane) in [(3u64, false), (4, true)] {
            let inst = random_instance(seed, triplane);
            let inputs = inst.inputs();
            let stats = KernelStats::new();
            let (out, store) = render_forward_naive(&inputs, &stats).unwrap();
            let mut rng = Rng::new(seed ^ 0x55);
            let upstream: Vec<f32> = (0..out.features.len())
                .map(|_| rng.uniform(-1.0f32, 1.0))
                .collect();
            let fused = render_backward_fused(
                &inputs,
                &upstream,
                &out.final_transmittance,
                AccumMode::Deterministic,
                &stats,
            )
            .unwrap();
            let naive = render_backward_naive(&inputs, &upstream, &store, &stats).unwrap();
            let (fs, fsg, ffg) = flatten_grads(&fused);
            let (ns, nsg, nfg) = flatten_grads(&naive);
            assert!(max_rel_err(&fs, &ns) < 1e-4, "structure grads diverge");
            assert!(max_rel_err(&fsg, &nsg) < 1e-4, "sigma decoder grads diverge");
            assert!(max_rel_err(&ffg, &nfg) < 1e-4, "feature decoder grads diverge");
        }
    }

    #[test]
    fn single_segment_backward_matches_hand_formula() {
        // R = 1, constant sigma via identity-output bias, constant feature c.
        let structure = StructureSpec::voxel([2, 2, 2], 1).zeros::<f32>();
        let direnc = DirEncConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        let sigma0 = 0.8f32;
        let sigma = const_mlp(1, &[sigma0]);
        let c = [0.4f32, 0.7];
        let feature = const_mlp(1 + direnc.encoded_len(), &c);
        let samples =
            sample_points(straight_rays(1, 0.0, 0.5), 1, ContractConfig::disabled()).unwrap();
        let inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let p = [1.0f32, -2.0];
        let grads = render_backward_fused(
            &inputs,
            &p,
            &out.final_transmittance,
            AccumMode::Deterministic,
            &stats,
        )
        .unwrap();
        // v = (T_0 - T_1) c, T_j = exp(-(j+1) delta sigma), delta = 0.5.
        let delta = 0.5f64;
        let s = sigma0 as f64;
        let t0 = (-delta * s).exp();
        let t1 = (-2.0 * delta * s).exp();
        let a = (p[0] * c[0] + p[1] * c[1]) as f64;
        // dL/dsigma_1 = delta T_1 a; dL/dsigma_0 = -delta (T_0 - T_1) a.
        let want_bias = delta * t1 * a - delta * (t0 - t1) * a;
        let got_bias = grads.grad_sigma_mlp.layers[0].bias[0] as f64;
        assert!(
            (got_bias - want_bias).abs() < 1e-6,
            "{got_bias} vs {want_bias}"
        );
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let inst = random_instance(9, false);
        let inputs = inst.inputs();
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let mut rng = Rng::new(10);
        let upstream: Vec<f32> = (0..out.features.len())
            .map(|_| rng.uniform(-1.0f32, 1.0))
            .collect();
        let doubled: Vec<f32> = upstream.iter().map(|v| 2.0 * v).collect();
        let g1 = render_backward_fused(
            &inputs,
            &upstream,
            &out.final_transmittance,
            AccumMode::Deterministic,
            &stats,
        )
        .unwrap();
        let g2 = render_backward_fused(
            &inputs,
            &doubled,
            &out.final_transmittance,
            AccumMode::Deterministic,
            &stats,
        )
        .unwrap();
        let (s1, _, _) = flatten_grads(&g1);
        let (s2, _, _) = flatten_grads(&g2);
        let scaled: Vec<f32> = s1.iter().map(|v| 2.0 * v).collect();
        assert!(max_rel_err(&s2, &scaled) < 1e-4);
    }

    #[test]
    fn transmittance_is_monotone_and_weights_telescope() {
        let inst = random_instance(11, false);
        let inputs = inst.inputs();
        let stats = KernelStats::new();
        let (_, store) = render_forward_naive(&inputs, &stats).unwrap();
        let steps = inputs.samples.steps();
        for ray in 0..inputs.num_rays() {
            let mut prev = 1.0f32;
            let mut weight_sum = 0.0f64;
            for j in 0..=steps {
                let t = store.transmittance(ray, j, steps);
                assert!(t <= prev + 1e-7, "transmittance must not increase");
                if j >= 1 {
                    weight_sum += (prev - t) as f64;
                }
                prev = t;
            }
            let t0 = store.transmittance(ray, 0, steps) as f64;
            let tr = store.transmittance(ray, steps, steps) as f64;
            assert!((weight_sum - (t0 - tr)).abs() < 1e-5);
            assert!(weight_sum <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn zero_opacity_reconstruction_is_exact() {
        let structure = StructureSpec::voxel([2, 2, 2], 1).zeros::<f32>();
        let direnc = DirEncConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        let sigma = const_mlp(1, &[0.0]);
        let feature = const_mlp(1 + direnc.encoded_len(), &[0.5]);
        let samples =
            sample_points(straight_rays(3, 0.0, 1.0), 16, ContractConfig::disabled()).unwrap();
        let inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let worst =
            reconstruct_transmittance_check(&inputs, &out.final_transmittance, &stats).unwrap();
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn reconstruction_discrepancy_small_for_moderate_opacity() {
        let inst = random_instance(12, false);
        let inputs = inst.inputs();
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let worst =
            reconstruct_transmittance_check(&inputs, &out.final_transmittance, &stats).unwrap();
        assert!(worst < 1e-5, "reconstruction drift {worst}");
    }

    #[test]
    fn reconstruction_under_extreme_opacity_is_reported_not_asserted() {
        // sigma * delta = 20 per step saturates FP32 transmittance quickly;
        // the check reports the observed discrepancy instead of failing.
        let structure = StructureSpec::voxel([2, 2, 2], 1).zeros::<f32>();
        let direnc = DirEncConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        let sigma = const_mlp(1, &[80.0]);
        let feature = const_mlp(1 + direnc.encoded_len(), &[0.5]);
        let samples =
            sample_points(straight_rays(1, 0.0, 2.0), 8, ContractConfig::disabled()).unwrap();
        let inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let worst =
            reconstruct_transmittance_check(&inputs, &out.final_transmittance, &stats).unwrap();
        assert!(worst.is_finite());
    }

    #[test]
    fn expected_depth_hits_opaque_slab() {
        // Dense slab: expected depth concentrates near the first samples.
        let structure = StructureSpec::voxel([2, 2, 2], 1).zeros::<f32>();
        let direnc = DirEncConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        let sigma = const_mlp(1, &[50.0]);
        let feature = const_mlp(1 + direnc.encoded_len(), &[1.0]);
        let samples =
            sample_points(straight_rays(1, 0.0, 1.0), 64, ContractConfig::disabled()).unwrap();
        let mut inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);
        inputs.compute_depth = true;
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let depth = out.expected_depth.unwrap()[0];
        assert!(depth > 0.0 && depth < 0.1, "depth {depth}");
    }

    #[test]
    fn fused_scratch_is_independent_of_sample_count() {
        let inst = random_instance(13, false);
        let mut peaks = Vec::new();
        for steps in [16usize, 64, 256] {
            let samples =
                sample_points(straight_rays(16, 0.0, 1.9), steps, ContractConfig::disabled())
                    .unwrap();
            let inputs = RendererInputs::new(
                &inst.structure,
                &inst.sigma,
                &inst.feature,
                &samples,
                inst.direnc,
            );
            let stats = KernelStats::new();
            let out = render_forward_fused(&inputs, &stats).unwrap();
            let _ = render_backward_fused(
                &inputs,
                &vec![1.0; out.features.len()],
                &out.final_transmittance,
                AccumMode::Deterministic,
                &stats,
            )
            .unwrap();
            peaks.push(stats.peak_scratch_bytes());
        }
        assert_eq!(peaks[0], peaks[1]);
        assert_eq!(peaks[1], peaks[2]);
    }

    #[test]
    fn naive_scratch_grows_linearly_with_sample_count() {
        let inst = random_instance(14, false);
        let mut bytes = Vec::new();
        for steps in [16usize, 64, 256] {
            let samples =
                sample_points(straight_rays(16, 0.0, 1.9), steps, ContractConfig::disabled())
                    .unwrap();
            let inputs = RendererInputs::new(
                &inst.structure,
                &inst.sigma,
                &inst.feature,
                &samples,
                inst.direnc,
            );
            let stats = KernelStats::new();
            let _ = render_forward_naive(&inputs, &stats).unwrap();
            bytes.push(stats.peak_scratch_bytes() as f64);
        }
        let slope_a = (bytes[1] - bytes[0]) / (64.0 - 16.0);
        let slope_b = (bytes[2] - bytes[1]) / (256.0 - 64.0);
        assert!((slope_a - slope_b).abs() / slope_b < 0.05, "{bytes:?}");
    }

    #[test]
    fn recompute_flops_stay_within_contract() {
        let inst = random_instance(15, false);
        let inputs = inst.inputs();
        let forward_stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &forward_stats).unwrap();
        let backward_stats = KernelStats::new();
        let _ = render_backward_fused(
            &inputs,
            &vec![0.5; out.features.len()],
            &out.final_transmittance,
            AccumMode::Deterministic,
            &backward_stats,
        )
        .unwrap();
        let fw = forward_stats.flops().mlp_forward_macs;
        let recompute = backward_stats.flops().mlp_forward_macs;
        assert!(recompute as f64 <= 1.5 * fw as f64, "{recompute} vs {fw}");
        assert!(recompute > 0);
    }

    #[test]
    fn backward_rejects_mismatched_transmittance_cache() {
        let inst = random_instance(16, false);
        let inputs = inst.inputs();
        let stats = KernelStats::new();
        let out = render_forward_fused(&inputs, &stats).unwrap();
        let upstream = vec![1.0f32; out.features.len()];
        let short = vec![1.0f32; inputs.num_rays() - 1];
        assert!(matches!(
            render_backward_fused(&inputs, &upstream, &short, AccumMode::Deterministic, &stats),
            Err(Error::Contract { .. })
        ));
        let bad = vec![0.0f32; inputs.num_rays()];
        assert!(matches!(
            render_backward_fused(&inputs, &upstream, &bad, AccumMode::Deterministic, &stats),
            Err(Error::Contract { .. })
        ));
    }
}
