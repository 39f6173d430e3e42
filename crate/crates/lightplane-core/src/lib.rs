//! Memory-efficient differentiable volume rendering and feature splatting
//! over hashed 3D representations (dense voxel grids and triplanes).
//!
//! The crate pairs two streaming kernels:
//!
//! - [`renderer`]: emission-absorption rendering whose forward pass keeps
//!   only a per-ray feature accumulator and running transmittance, and whose
//!   backward pass marches rays in reverse, reconstructing transmittance
//!   from one cached scalar per ray and recomputing activations on the fly.
//! - [`splatter`]: the adjoint lifting direction, pushing per-pixel features
//!   along rays into a structure with the sampling weights and normalizing
//!   by the accumulated weight.
//!
//! Both ship with store-all naive twins that serve as correctness oracles
//! and as the measured baseline for the instrumented memory accounting in
//! [`counters`]. Everything is `no_std` + `alloc`; all transcendentals go
//! through `libm`, and shared reductions default to order-invariant
//! fixed-point accumulation ([`accum`]), which makes results bit-identical
//! across thread counts and input permutations.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod accum;
pub mod counters;
pub mod error;
pub mod hash3d;
pub mod math;
pub mod mlp;
pub mod rays;
pub mod renderer;
pub mod splatter;

pub use accum::AccumMode;
pub use counters::{FlopCounter, KernelStats, ScratchReport};
pub use error::{Error, Result};
pub use hash3d::{
    contract, in_bounds, sample_vjp, ContractConfig, HashStructure, StructureKind, StructureSpec,
    TriPlane, VoxelGrid,
};
pub use math::{Real, Rng};
pub use mlp::{
    direnc, mlp_forward, mlp_vjp, DirEncConfig, HiddenActivation, MlpGrads, MlpParams,
    MlpScratch, OutputActivation,
};
pub use rays::{rays_from_camera, sample_points, sample_points_jittered, Camera, RayBundle, RaySamples};
pub use renderer::{
    reconstruct_transmittance_check, render_backward_fused, render_backward_naive,
    render_forward_fused, render_forward_naive, RenderGrads, RenderOutput, RendererInputs,
};
pub use splatter::{
    splat_backward_fused, splat_backward_naive, splat_forward_fused, splat_forward_naive,
    splat_plain, SplatGrads, SplatResult, SplatterInputs,
};
