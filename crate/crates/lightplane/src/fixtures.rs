//! Seeded synthetic instances shared by the gradient checker, benchmarks
//! and test suites.

use lightplane_core::hash3d::{ContractConfig, HashStructure, StructureKind, StructureSpec};
use lightplane_core::math::{Real, Rng};
use lightplane_core::mlp::{DirEncConfig, HiddenActivation, MlpParams, OutputActivation};
use lightplane_core::rays::{sample_points, Camera, RayBundle, RaySamples};
use lightplane_core::renderer::RendererInputs;
use lightplane_core::splatter::SplatterInputs;

/// A small inward-looking pinhole camera fully covering the unit cube.
pub fn probe_camera(width: usize, height: usize) -> Camera<f32> {
    Camera {
        fx: 0.9 * width as f32,
        fy: 0.9 * height as f32,
        cx: width as f32 / 2.0,
        cy: height as f32 / 2.0,
        width,
        height,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0, 0.0, -2.2],
    }
}

/// Deterministic bundle of `m` rays crossing the cube with varied
/// directions (a coarse two-sided sweep).
pub fn synthetic_rays(m: usize) -> RayBundle<f32> {
    let mut origins = Vec::with_capacity(m);
    let mut directions = Vec::with_capacity(m);
    for i in 0..m {
        let f = (i as f32 + 0.5) / m as f32;
        let angle = f * core::f32::consts::TAU;
        origins.push([0.9 * angle.cos(), 0.9 * angle.sin(), -2.0]);
        let target = [-0.5 * angle.cos(), -0.4 * angle.sin(), 0.9];
        let d = [
            target[0] - origins[i][0],
            target[1] - origins[i][1],
            target[2] - origins[i][2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        directions.push([d[0] / n, d[1] / n, d[2] / n]);
    }
    RayBundle {
        origins,
        directions,
        near: 0.4,
        far: 4.2,
    }
}

/// Everything one render pass needs, owned.
pub struct RenderFixture<S: Real> {
    pub structure: HashStructure<S>,
    pub sigma_mlp: MlpParams<S>,
    pub feature_mlp: MlpParams<S>,
    pub samples: RaySamples<S>,
    pub direnc: DirEncConfig,
}

impl<S: Real> RenderFixture<S> {
    pub fn inputs(&self) -> RendererInputs<'_, S> {
        RendererInputs::new(
            &self.structure,
            &self.sigma_mlp,
            &self.feature_mlp,
            &self.samples,
            self.direnc,
        )
    }

    pub fn convert<T: Real>(&self) -> RenderFixture<T> {
        RenderFixture {
            structure: self.structure.convert(),
            sigma_mlp: self.sigma_mlp.convert(),
            feature_mlp: self.feature_mlp.convert(),
            samples: self.samples.convert(),
            direnc: self.direnc,
        }
    }
}

pub struct RenderFixtureSpec {
    pub kind: StructureKind,
    /// Hidden activation for both decoders; finite-difference harnesses
    /// want the smooth one.
    pub hidden_activation: HiddenActivation,
    pub grid_dim: usize,
    pub channels: usize,
    pub rays: usize,
    pub steps: usize,
    pub mlp_width: usize,
    pub mlp_layers: usize,
    pub feature_channels: usize,
    pub direnc_frequencies: usize,
}

impl Default for RenderFixtureSpec {
    fn default() -> Self {
        RenderFixtureSpec {
            kind: StructureKind::Voxel,
            hidden_activation: HiddenActivation::Relu,
            grid_dim: 8,
            channels: 4,
            rays: 16,
            steps: 32,
            mlp_width: 16,
            mlp_layers: 3,
            feature_channels: 3,
            direnc_frequencies: 2,
        }
    }
}

fn mlp_dims(in_dim: usize, width: usize, layers: usize, out_dim: usize) -> Vec<usize> {
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
    dims.push(out_dim);
    dims
}

pub fn render_fixture(seed: u64, spec: &RenderFixtureSpec) -> RenderFixture<f32> {
    let mut rng = Rng::new(seed);
    let d = spec.grid_dim;
    let sspec = match spec.kind {
        StructureKind::Voxel => StructureSpec::voxel([d, d, d], spec.channels),
        StructureKind::TriPlane => StructureSpec::triplane([d, d, d], spec.channels),
    };
    let mut structure = sspec.zeros::<f32>();
    structure.fill_uniform(&mut rng, -1.0, 1.0);
    let direnc = DirEncConfig {
        num_frequencies: spec.direnc_frequencies,
        include_raw: true,
    };
    let sigma_mlp = MlpParams::seeded(
        &mlp_dims(spec.channels, spec.mlp_width, spec.mlp_layers, 1),
        spec.hidden_activation,
        OutputActivation::Softplus,
        &mut rng,
    )
    .expect("valid dims");
    let feature_mlp = MlpParams::seeded(
        &mlp_dims(
            spec.channels + direnc.encoded_len(),
            spec.mlp_width,
            spec.mlp_layers,
            spec.feature_channels,
        ),
        spec.hidden_activation,
        OutputActivation::Sigmoid,
        &mut rng,
    )
    .expect("valid dims");
    let samples = sample_points(
        synthetic_rays(spec.rays),
        spec.steps,
        ContractConfig::disabled(),
    )
    .expect("valid bundle");
    RenderFixture {
        structure,
        sigma_mlp,
        feature_mlp,
        samples,
        direnc,
    }
}

/// Everything one splat pass needs, owned.
pub struct SplatFixture<S: Real> {
    pub features: Vec<S>,
    pub channels: usize,
    pub samples: RaySamples<S>,
    pub prior: Option<HashStructure<S>>,
    pub modifier_mlp: Option<MlpParams<S>>,
    pub direnc: DirEncConfig,
    pub target: StructureSpec,
}

impl<S: Real> SplatFixture<S> {
    pub fn inputs(&self) -> SplatterInputs<'_, S> {
        SplatterInputs {
            features: &self.features,
            channels: self.channels,
            samples: &self.samples,
            prior: self.prior.as_ref(),
            modifier_mlp: self.modifier_mlp.as_ref(),
            direnc: self.direnc,
            append_position: false,
        }
    }

    pub fn convert<T: Real>(&self) -> SplatFixture<T> {
        SplatFixture {
            features: self
                .features
                .iter()
                .map(|v| T::from_f64(v.to_f64()))
                .collect(),
            channels: self.channels,
            samples: self.samples.convert(),
            prior: self.prior.as_ref().map(|p| p.convert()),
            modifier_mlp: self.modifier_mlp.as_ref().map(|m| m.convert()),
            direnc: self.direnc,
            target: self.target,
        }
    }
}

pub struct SplatFixtureSpec {
    pub kind: StructureKind,
    pub hidden_activation: HiddenActivation,
    pub grid_dim: usize,
    pub channels_in: usize,
    pub rays: usize,
    pub steps: usize,
    pub with_modifier: bool,
    pub prior_kind: Option<StructureKind>,
    pub mlp_width: usize,
    pub target_channels: usize,
}

impl Default for SplatFixtureSpec {
    fn default() -> Self {
        SplatFixtureSpec {
            kind: StructureKind::Voxel,
            hidden_activation: HiddenActivation::Relu,
            grid_dim: 8,
            channels_in: 3,
            rays: 16,
            steps: 24,
            with_modifier: true,
            prior_kind: Some(StructureKind::TriPlane),
            mlp_width: 16,
            target_channels: 4,
        }
    }
}

pub fn splat_fixture(seed: u64, spec: &SplatFixtureSpec) -> SplatFixture<f32> {
    let mut rng = Rng::new(seed ^ 0x51a7);
    let d = spec.grid_dim;
    let target = match spec.kind {
        StructureKind::Voxel => StructureSpec::voxel(
            [d, d, d],
            if spec.with_modifier {
                spec.target_channels
            } else {
                spec.channels_in
            },
        ),
        StructureKind::TriPlane => StructureSpec::triplane(
            [d, d, d],
            if spec.with_modifier {
                spec.target_channels
            } else {
                spec.channels_in
            },
        ),
    };
    let features: Vec<f32> = (0..spec.rays * spec.channels_in)
        .map(|_| rng.uniform(-1.0f32, 1.0))
        .collect();
    let direnc = DirEncConfig {
        num_frequencies: 2,
        include_raw: true,
    };
    let (prior, modifier_mlp) = if spec.with_modifier {
        let prior = spec.prior_kind.map(|kind| {
            let pspec = match kind {
                StructureKind::Voxel => StructureSpec::voxel([d, d, d], 3),
                StructureKind::TriPlane => StructureSpec::triplane([d, d, d], 3),
            };
            let mut p = pspec.zeros::<f32>();
            p.fill_uniform(&mut rng, -1.0, 1.0);
            p
        });
        let prior_k = prior.as_ref().map_or(0, |p| p.channels());
        let mlp = MlpParams::seeded(
            &[
                spec.channels_in + prior_k + direnc.encoded_len(),
                spec.mlp_width,
                spec.target_channels,
            ],
            spec.hidden_activation,
            OutputActivation::Identity,
            &mut rng,
        )
        .expect("valid dims");
        (prior, Some(mlp))
    } else {
        (None, None)
    };
    let samples = sample_points(
        synthetic_rays(spec.rays),
        spec.steps,
        ContractConfig::disabled(),
    )
    .expect("valid bundle");
    SplatFixture {
        features,
        channels: spec.channels_in,
        samples,
        prior,
        modifier_mlp,
        direnc,
        target,
    }
}
