//! Multi-threaded drivers over the core chunk kernels.
//!
//! Ray chunks are distributed statically over scoped worker threads. In
//! deterministic mode the shared accumulators are order-invariant, so the
//! results are bit-identical for any `--threads` value; per-ray outputs are
//! disjoint slices and never contended.

use lightplane_core::accum::AccumMode;
use lightplane_core::counters::KernelStats;
use lightplane_core::math::Real;
use lightplane_core::renderer::{
    render_backward_fused_chunk, render_forward_fused_chunk, validate_backward_args,
    RenderBackwardAccums, RenderGrads, RenderOutput, RendererInputs, RAY_CHUNK,
};
use lightplane_core::splatter::{
    splat_backward_fused_chunk, splat_forward_fused_chunk, SplatAccums, SplatBackwardAccums,
    SplatGrads, SplatResult, SplatterInputs,
};

use crate::error::Result;

/// Worker count resolution: explicit request, then `LIGHTPLANE_THREADS`,
/// then the machine's parallelism.
pub fn effective_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| {
            std::env::var("LIGHTPLANE_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
}

fn chunk_ranges(total: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::with_capacity(total.div_ceil(RAY_CHUNK));
    let mut start = 0;
    while start < total {
        let end = (start + RAY_CHUNK).min(total);
        ranges.push(start..end);
        start = end;
    }
    ranges
}

/// Splits `buf` into per-chunk mutable slices of `width` scalars per ray.
fn split_by_chunks<'b, S>(
    mut buf: &'b mut [S],
    ranges: &[std::ops::Range<usize>],
    width: usize,
) -> Vec<&'b mut [S]> {
    let mut out = Vec::with_capacity(ranges.len());
    for r in ranges {
        let (head, tail) = buf.split_at_mut(r.len() * width);
        out.push(head);
        buf = tail;
    }
    out
}

/// Fused forward render distributed over `threads` workers.
pub fn render_forward<S: Real>(
    inputs: &RendererInputs<'_, S>,
    stats: &KernelStats,
    threads: usize,
) -> Result<RenderOutput<S>> {
    inputs.validate()?;
    let m = inputs.num_rays();
    let c = inputs.feature_channels();
    let mut features = vec![S::ZERO; m * c];
    let mut final_t = vec![S::ZERO; m];
    let mut depth = inputs.compute_depth.then(|| vec![S::ZERO; m]);

    let ranges = chunk_ranges(m);
    let workers = threads.min(ranges.len()).max(1);
    if workers <= 1 {
        for (i, r) in ranges.iter().enumerate() {
            render_forward_fused_chunk(
                inputs,
                r.clone(),
                &mut features[r.start * c..r.end * c],
                &mut final_t[r.clone()],
                depth.as_mut().map(|d| &mut d[r.clone()]),
                stats,
            );
            let _ = i;
        }
    } else {
        let feature_chunks = split_by_chunks(&mut features, &ranges, c);
        let t_chunks = split_by_chunks(&mut final_t, &ranges, 1);
        let depth_chunks: Vec<Option<&mut [S]>> = match depth.as_mut() {
            Some(d) => split_by_chunks(d, &ranges, 1).into_iter().map(Some).collect(),
            None => ranges.iter().map(|_| None).collect(),
        };
        // One work list per worker, chunks dealt round-robin.
        let mut work: Vec<Vec<_>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, ((range, feat), (t, d))) in ranges
            .iter()
            .zip(feature_chunks)
            .zip(t_chunks.into_iter().zip(depth_chunks))
            .enumerate()
        {
            work[i % workers].push((range.clone(), feat, t, d));
        }
        std::thread::scope(|scope| {
            for batch in work {
                scope.spawn(move || {
                    for (range, feat, t, d) in batch {
                        render_forward_fused_chunk(inputs, range, feat, t, d, stats);
                    }
                });
            }
        });
    }
    Ok(RenderOutput {
        features,
        channels: c,
        final_transmittance: final_t,
        expected_depth: depth,
    })
}

/// Fused backward render distributed over `threads` workers.
pub fn render_backward<S: Real>(
    inputs: &RendererInputs<'_, S>,
    upstream: &[S],
    final_transmittance: &[S],
    mode: AccumMode,
    stats: &KernelStats,
    threads: usize,
) -> Result<RenderGrads<S>> {
    inputs.validate()?;
    validate_backward_args(inputs, upstream, final_transmittance)?;
    let accums = RenderBackwardAccums::new(inputs, mode);
    let ranges = chunk_ranges(inputs.num_rays());
    let workers = threads.min(ranges.len()).max(1);
    if workers <= 1 {
        for r in ranges {
            render_backward_fused_chunk(inputs, r, upstream, final_transmittance, &accums, stats);
        }
    } else {
        let mut work: Vec<Vec<_>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, r) in ranges.into_iter().enumerate() {
            work[i % workers].push(r);
        }
        let accums_ref = &accums;
        std::thread::scope(|scope| {
            for batch in work {
                scope.spawn(move || {
                    for r in batch {
                        render_backward_fused_chunk(
                            inputs,
                            r,
                            upstream,
                            final_transmittance,
                            accums_ref,
                            stats,
                        );
                    }
                });
            }
        });
    }
    Ok(accums.into_grads(inputs))
}

/// Fused splat distributed over `threads` workers.
pub fn splat_forward<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    target: &lightplane_core::hash3d::StructureSpec,
    mode: AccumMode,
    stats: &KernelStats,
    threads: usize,
) -> Result<SplatResult<S>> {
    inputs.validate(target)?;
    let accums = SplatAccums::new(target, mode);
    let ranges = chunk_ranges(inputs.num_rays());
    let workers = threads.min(ranges.len()).max(1);
    if workers <= 1 {
        for r in ranges {
            splat_forward_fused_chunk(inputs, r, &accums, stats);
        }
    } else {
        let mut work: Vec<Vec<_>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, r) in ranges.into_iter().enumerate() {
            work[i % workers].push(r);
        }
        let accums_ref = &accums;
        std::thread::scope(|scope| {
            for batch in work {
                scope.spawn(move || {
                    for r in batch {
                        splat_forward_fused_chunk(inputs, r, accums_ref, stats);
                    }
                });
            }
        });
    }
    Ok(accums.into_result()?)
}

/// Fused splat backward distributed over `threads` workers.
pub fn splat_backward<S: Real>(
    inputs: &SplatterInputs<'_, S>,
    target: &lightplane_core::hash3d::StructureSpec,
    grad_normalized: &lightplane_core::hash3d::HashStructure<S>,
    theta_weight: &lightplane_core::hash3d::HashStructure<S>,
    mode: AccumMode,
    stats: &KernelStats,
    threads: usize,
) -> Result<SplatGrads<S>> {
    inputs.validate(target)?;
    lightplane_core::splatter::validate_backward_shapes(target, grad_normalized, theta_weight)?;
    let accums = SplatBackwardAccums::new(inputs, mode);
    let m = inputs.num_rays();
    let c = inputs.channels;
    let mut grad_features = vec![S::ZERO; m * c];
    let ranges = chunk_ranges(m);
    let workers = threads.min(ranges.len()).max(1);
    if workers <= 1 {
        for r in ranges {
            let chunk = &mut grad_features[r.start * c..r.end * c];
            splat_backward_fused_chunk(
                inputs,
                r,
                grad_normalized,
                theta_weight,
                &accums,
                chunk,
                stats,
            );
        }
    } else {
        let grad_chunks = split_by_chunks(&mut grad_features, &ranges, c);
        let mut work: Vec<Vec<_>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, (range, chunk)) in ranges.iter().zip(grad_chunks).enumerate() {
            work[i % workers].push((range.clone(), chunk));
        }
        let accums_ref = &accums;
        std::thread::scope(|scope| {
            for batch in work {
                scope.spawn(move || {
                    for (range, chunk) in batch {
                        splat_backward_fused_chunk(
                            inputs,
                            range,
                            grad_normalized,
                            theta_weight,
                            accums_ref,
                            chunk,
                            stats,
                        );
                    }
                });
            }
        });
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

#[cfg(test)]
mod tests {
    use super::*;
    use lightplane_core::hash3d::{ContractConfig, StructureSpec};
    use lightplane_core::math::Rng;
    use lightplane_core::mlp::{DirEncConfig, HiddenActivation, MlpParams, OutputActivation};
    use lightplane_core::rays::{sample_points, RayBundle};
    use lightplane_core::renderer::render_forward_fused;

    #[test]
    fn thread_count_does_not_change_bits() {
        let mut rng = Rng::new(5);
        let k = 4;
        let mut structure = StructureSpec::voxel([8, 8, 8], k).zeros::<f32>();
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
        let bundle = RayBundle {
            origins: (0..200)
                .map(|i| [-0.9 + 1.8 * (i as f32 + 0.5) / 200.0, 0.1, -0.95])
                .collect(),
            directions: vec![[0.0, 0.0, 1.0]; 200],
            near: 0.0,
            far: 1.9,
        };
        let samples = sample_points(bundle, 16, ContractConfig::disabled()).unwrap();
        let inputs = RendererInputs::new(&structure, &sigma, &feature, &samples, direnc);

        let stats = KernelStats::new();
        let sequential = render_forward_fused(&inputs, &stats).unwrap();
        let threaded = render_forward(&inputs, &stats, 4).unwrap();
        assert_eq!(sequential.features, threaded.features);
        assert_eq!(sequential.final_transmittance, threaded.final_transmittance);

        let upstream: Vec<f32> = (0..sequential.features.len())
            .map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.1)
            .collect();
        let g1 = render_backward(
            &inputs,
            &upstream,
            &sequential.final_transmittance,
            AccumMode::Deterministic,
            &stats,
            1,
        )
        .unwrap();
        let g4 = render_backward(
            &inputs,
            &upstream,
            &sequential.final_transmittance,
            AccumMode::Deterministic,
            &stats,
            4,
        )
        .unwrap();
        for i in 0..g1.grad_structure.flat_len() {
            assert_eq!(
                g1.grad_structure.flat_get(i).to_bits(),
                g4.grad_structure.flat_get(i).to_bits()
            );
        }
        for i in 0..g1.grad_sigma_mlp.param_count() {
            assert_eq!(
                g1.grad_sigma_mlp.param_get(i).to_bits(),
                g4.grad_sigma_mlp.param_get(i).to_bits()
            );
        }
    }

    #[test]
    fn env_var_falls_back() {
        // Only checks the precedence logic with an explicit request.
        assert_eq!(effective_threads(Some(3)), 3);
        assert!(effective_threads(None) >= 1);
    }
}
