//! Desk-scale single-scene optimization: fit a feature structure plus tiny
//! decoders to ground-truth images of an analytic density/color field,
//! optimizing a full-image loss over every pixel of the sampled view (no
//! pixel subsetting), which the constant-scratch backward pass makes cheap.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use lightplane_core::accum::AccumMode;
use lightplane_core::counters::KernelStats;
use lightplane_core::hash3d::{ContractConfig, HashStructure, StructureKind, StructureSpec};
use lightplane_core::math::Rng;
use lightplane_core::mlp::{
    DirEncConfig, HiddenActivation, MlpGrads, MlpParams, OutputActivation,
};
use lightplane_core::rays::{rays_from_camera, sample_points, sample_points_jittered, Camera};
use lightplane_core::renderer::{RenderOutput, RendererInputs};

use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorField {
    /// RGB from the position itself: `0.5 + 0.5 x`, clamped.
    AxisRgb,
    /// Radius-driven palette; symmetric under any rotation/reflection.
    RadialPalette,
}

/// Procedural density shell `s * exp(-((|x| - r0) / w)^2)` with a
/// position-based color field; evaluable anywhere in closed form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub shell_scale: f32,
    pub shell_radius: f32,
    pub shell_width: f32,
    pub color: ColorField,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            shell_scale: 9.0,
            shell_radius: 0.55,
            shell_width: 0.14,
            color: ColorField::AxisRgb,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyticScene {
    cfg: SceneConfig,
}

impl AnalyticScene {
    pub fn new(cfg: SceneConfig) -> Self {
        AnalyticScene { cfg }
    }

    pub fn zero() -> Self {
        AnalyticScene {
            cfg: SceneConfig {
                shell_scale: 0.0,
                ..Default::default()
            },
        }
    }

    pub fn density(&self, x: [f32; 3]) -> f32 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let d = (r - self.cfg.shell_radius) / self.cfg.shell_width;
        self.cfg.shell_scale * (-d * d).exp()
    }

    pub fn color(&self, x: [f32; 3]) -> [f32; 3] {
        match self.cfg.color {
            ColorField::AxisRgb => [
                (0.5 + 0.5 * x[0]).clamp(0.0, 1.0),
                (0.5 + 0.5 * x[1]).clamp(0.0, 1.0),
                (0.5 + 0.5 * x[2]).clamp(0.0, 1.0),
            ],
            ColorField::RadialPalette => {
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                [
                    0.5 + 0.5 * (6.0 * r).sin().clamp(-1.0, 1.0) * 0.9,
                    0.5 + 0.5 * (4.0 * r).cos().clamp(-1.0, 1.0) * 0.9,
                    (r * 0.8).clamp(0.0, 1.0),
                ]
            }
        }
    }
}

/// Pinhole camera at `position` looking at the origin.
pub fn look_at_camera(
    position: [f32; 3],
    width: usize,
    height: usize,
    focal_factor: f32,
) -> Camera<f32> {
    let norm3 = |v: [f32; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let cross = |a: [f32; 3], b: [f32; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let forward = norm3([-position[0], -position[1], -position[2]]);
    let world_up = if forward[1].abs() > 0.95 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let right = norm3(cross(world_up, forward));
    let up = cross(forward, right);
    // Columns of world-from-camera: right, up, forward.
    Camera {
        fx: focal_factor * width as f32,
        fy: focal_factor * height as f32,
        cx: width as f32 / 2.0,
        cy: height as f32 / 2.0,
        width,
        height,
        rotation: [
            [right[0], up[0], forward[0]],
            [right[1], up[1], forward[1]],
            [right[2], up[2], forward[2]],
        ],
        translation: position,
    }
}

/// Golden-spiral distribution of inward-looking cameras on a sphere.
pub fn orbit_cameras(
    count: usize,
    width: usize,
    height: usize,
    radius: f32,
    focal_factor: f32,
) -> Vec<Camera<f32>> {
    let golden = core::f32::consts::PI * (3.0 - 5.0f32.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f32 + 0.5) / count as f32;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f32;
            let position = [
                radius * r * phi.cos(),
                radius * y * 0.98,
                radius * r * phi.sin(),
            ];
            look_at_camera(position, width, height, focal_factor)
        })
        .collect()
}

/// Renders the analytic fields with the emission-absorption quadrature at
/// dense sampling; the ground-truth generator for fitting. Deterministic,
/// black background; returns interleaved RGB per pixel.
pub fn make_ground_truth(
    scene: &AnalyticScene,
    camera: &Camera<f32>,
    near: f32,
    far: f32,
    oracle_samples: usize,
) -> Result<Vec<f32>> {
    let bundle = rays_from_camera(camera, near, far)?;
    let delta = (far - near) / oracle_samples as f32;
    let mut image = vec![0.0f32; bundle.len() * 3];
    for i in 0..bundle.len() {
        let o = bundle.origins[i];
        let d = bundle.directions[i];
        let mut transmittance = 1.0f64;
        let mut acc = [0.0f32; 3];
        for j in 0..=oracle_samples {
            let t = near + j as f32 * delta;
            let x = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            let sigma = scene.density(x);
            let prev = transmittance;
            transmittance *= (-(delta * sigma) as f64).exp();
            if j == 0 {
                continue;
            }
            let weight = (prev - transmittance) as f32;
            let color = scene.color(x);
            for (a, c) in acc.iter_mut().zip(color) {
                *a += weight * c;
            }
        }
        image[i * 3..(i + 1) * 3].copy_from_slice(&acc);
    }
    Ok(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    Mse,
    /// MSE plus image-space total variation, an image-level regularizer
    /// that needs the full frame (and therefore full-image backward).
    MseTv { tv_weight: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitGridKind {
    Voxel,
    Triplane,
}

impl FitGridKind {
    pub fn kind(self) -> StructureKind {
        match self {
            FitGridKind::Voxel => StructureKind::Voxel,
            FitGridKind::Triplane => StructureKind::TriPlane,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub image_size: usize,
    pub train_views: usize,
    pub heldout_views: usize,
    pub samples_per_ray: usize,
    /// Ground-truth quadrature density as a multiple of `samples_per_ray`.
    pub oracle_factor: usize,
    pub iterations: usize,
    pub grid_kind: FitGridKind,
    pub grid_dim: usize,
    pub grid_channels: usize,
    pub mlp_width: usize,
    pub mlp_layers: usize,
    pub direnc_frequencies: usize,
    pub lr_structure: f32,
    pub lr_mlp: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub loss: LossKind,
    pub seed: u64,
    pub jitter: bool,
    pub camera_radius: f32,
    pub focal_factor: f32,
    pub near: f32,
    pub far: f32,
    pub grid_init_scale: f32,
    pub density_bias_init: f32,
    pub scene: SceneConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            image_size: 64,
            train_views: 20,
            heldout_views: 4,
            samples_per_ray: 64,
            oracle_factor: 4,
            iterations: 2000,
            grid_kind: FitGridKind::Voxel,
            grid_dim: 32,
            grid_channels: 4,
            mlp_width: 8,
            mlp_layers: 3,
            direnc_frequencies: 2,
            lr_structure: 1e-2,
            lr_mlp: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            loss: LossKind::Mse,
            seed: 0,
            jitter: false,
            camera_radius: 2.4,
            focal_factor: 1.1,
            near: 0.9,
            far: 3.9,
            grid_init_scale: 0.05,
            density_bias_init: -1.0,
            scene: SceneConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.image_size > 0
            && self.train_views > 0
            && self.heldout_views > 0
            && self.samples_per_ray > 0
            && self.oracle_factor > 0
            && self.iterations > 0
            && self.grid_dim > 1
            && self.grid_channels > 0
            && self.mlp_width > 0
            && self.mlp_layers >= 1
            && self.lr_structure > 0.0
            && self.lr_mlp > 0.0
            && self.near >= 0.0
            && self.far > self.near;
        if !positive {
            return Err(Error::parse("fit config fields must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_curve: Vec<f32>,
    pub heldout_psnr: f32,
    pub wall_clock_sec: f64,
    pub iterations_run: usize,
}

/// Fitted parameters plus held-out renders for inspection.
pub struct FitArtifacts {
    pub structure: HashStructure<f32>,
    pub sigma_mlp: MlpParams<f32>,
    pub feature_mlp: MlpParams<f32>,
    pub heldout_renders: Vec<Vec<f32>>,
    pub heldout_truth: Vec<Vec<f32>>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn delta(&mut self, cfg: &FitConfig, index: usize, grad: f32, lr: f32) -> f32 {
        let m = cfg.beta1 * self.m[index] + (1.0 - cfg.beta1) * grad;
        let v = cfg.beta2 * self.v[index] + (1.0 - cfg.beta2) * grad * grad;
        self.m[index] = m;
        self.v[index] = v;
        let m_hat = m / (1.0 - cfg.beta1.powi(self.t as i32));
        let v_hat = v / (1.0 - cfg.beta2.powi(self.t as i32));
        -lr * m_hat / (v_hat.sqrt() + cfg.adam_eps)
    }
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// `10 log10(1 / mse)` for images in `[0, 1]`.
pub fn psnr(mse: f64) -> f32 {
    (10.0 * (1.0 / mse.max(1e-12)).log10()) as f32
}

/// Full-frame loss and its gradient with respect to the rendered pixels.
fn loss_and_upstream(
    rendered: &RenderOutput<f32>,
    truth: &[f32],
    width: usize,
    height: usize,
    loss: LossKind,
) -> (f64, Vec<f32>) {
    let n = rendered.features.len();
    let inv_n = 1.0 / n as f32;
    let mut upstream = vec![0.0f32; n];
    let mut total = 0.0f64;
    for (i, (r, t)) in rendered.features.iter().zip(truth).enumerate() {
        let d = r - t;
        total += (d as f64) * (d as f64) * inv_n as f64;
        upstream[i] = 2.0 * d * inv_n;
    }
    if let LossKind::MseTv { tv_weight } = loss {
        let c = rendered.channels;
        let inv_tv = tv_weight / n as f32;
        let at = |x: usize, y: usize, ch: usize| rendered.features[(y * width + x) * c + ch];
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    let v = at(x, y, ch);
                    if x + 1 < width {
                        let d = at(x + 1, y, ch) - v;
                        total += (d as f64) * (d as f64) * inv_tv as f64;
                        upstream[(y * width + x + 1) * c + ch] += 2.0 * d * inv_tv;
                        upstream[(y * width + x) * c + ch] -= 2.0 * d * inv_tv;
                    }
                    if y + 1 < height {
                        let d = at(x, y + 1, ch) - v;
                        total += (d as f64) * (d as f64) * inv_tv as f64;
                        upstream[((y + 1) * width + x) * c + ch] += 2.0 * d * inv_tv;
                        upstream[(y * width + x) * c + ch] -= 2.0 * d * inv_tv;
                    }
                }
            }
        }
    }
    (total, upstream)
}

fn mlp_dims(in_dim: usize, width: usize, layers: usize, out_dim: usize) -> Vec<usize> {
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
    dims.push(out_dim);
    dims
}

fn apply_structure_step(
    adam: &mut Adam,
    cfg: &FitConfig,
    structure: &mut HashStructure<f32>,
    grads: &HashStructure<f32>,
) {
    for i in 0..structure.flat_len() {
        let delta = adam.delta(cfg, i, grads.flat_get(i), cfg.lr_structure);
        structure.flat_set(i, structure.flat_get(i) + delta);
    }
}

fn apply_mlp_step(
    adam: &mut Adam,
    cfg: &FitConfig,
    params: &mut MlpParams<f32>,
    grads: &MlpGrads<f32>,
) {
    for i in 0..params.param_count() {
        let delta = adam.delta(cfg, i, grads.param_get(i), cfg.lr_mlp);
        params.param_set(i, params.param_get(i) + delta);
    }
}

/// Runs the optimization; `threads` sizes the render worker pool and
/// `mode` selects the gradient reduction flavour.
pub fn fit(cfg: &FitConfig, mode: AccumMode, threads: usize) -> Result<(FitReport, FitArtifacts)> {
    cfg.validate()?;
    let start = Instant::now();
    let scene = AnalyticScene::new(cfg.scene);
    let total_views = cfg.train_views + cfg.heldout_views;
    let cameras = orbit_cameras(
        total_views,
        cfg.image_size,
        cfg.image_size,
        cfg.camera_radius,
        cfg.focal_factor,
    );
    // Interleave held-out views through the orbit for fair coverage.
    let stride = total_views.div_ceil(cfg.heldout_views);
    let heldout_idx: Vec<usize> = (0..cfg.heldout_views).map(|i| i * stride).collect();
    let train_idx: Vec<usize> = (0..total_views)
        .filter(|i| !heldout_idx.contains(i))
        .collect();

    let oracle_samples = cfg.samples_per_ray * cfg.oracle_factor;
    let truths: Vec<Vec<f32>> = cameras
        .iter()
        .map(|cam| make_ground_truth(&scene, cam, cfg.near, cfg.far, oracle_samples))
        .collect::<Result<_>>()?;

    let mut rng = Rng::new(cfg.seed);
    let sspec = match cfg.grid_kind.kind() {
        StructureKind::Voxel => {
            StructureSpec::voxel([cfg.grid_dim; 3], cfg.grid_channels)
        }
        StructureKind::TriPlane => {
            StructureSpec::triplane([cfg.grid_dim; 3], cfg.grid_channels)
        }
    };
    let mut structure = sspec.zeros::<f32>();
    structure.fill_uniform(
        &mut rng,
        -cfg.grid_init_scale as f64,
        cfg.grid_init_scale as f64,
    );
    let direnc = DirEncConfig {
        num_frequencies: cfg.direnc_frequencies,
        include_raw: true,
    };
    let mut sigma_mlp = MlpParams::seeded(
        &mlp_dims(cfg.grid_channels, cfg.mlp_width, cfg.mlp_layers, 1),
        HiddenActivation::Relu,
        OutputActivation::Softplus,
        &mut rng,
    )?;
    // Start near-transparent so free space can clear quickly.
    let n_layers = sigma_mlp.layers.len();
    sigma_mlp.layers[n_layers - 1].bias[0] = cfg.density_bias_init;
    let mut feature_mlp = MlpParams::seeded(
        &mlp_dims(
            cfg.grid_channels + direnc.encoded_len(),
            cfg.mlp_width,
            cfg.mlp_layers,
            3,
        ),
        HiddenActivation::Relu,
        OutputActivation::Sigmoid,
        &mut rng,
    )?;

    let mut adam_structure = Adam::new(structure.flat_len());
    let mut adam_sigma = Adam::new(sigma_mlp.param_count());
    let mut adam_feature = Adam::new(feature_mlp.param_count());

    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = Vec::new();
    for iteration in 0..cfg.iterations {
        if iteration % train_idx.len() == 0 {
            order = train_idx.clone();
            rng.shuffle(&mut order);
        }
        let view = order[iteration % train_idx.len()];
        let bundle = rays_from_camera(&cameras[view], cfg.near, cfg.far)?;
        let samples = if cfg.jitter {
            sample_points_jittered(
                bundle,
                cfg.samples_per_ray,
                ContractConfig::disabled(),
                cfg.seed ^ (iteration as u64).wrapping_mul(0x9e3779b9),
            )?
        } else {
            sample_points(bundle, cfg.samples_per_ray, ContractConfig::disabled())?
        };
        let inputs = RendererInputs::new(&structure, &sigma_mlp, &feature_mlp, &samples, direnc);
        let stats = KernelStats::new();
        let rendered = parallel::render_forward(&inputs, &stats, threads)?;
        let (loss, upstream) = loss_and_upstream(
            &rendered,
            &truths[view],
            cfg.image_size,
            cfg.image_size,
            cfg.loss,
        );
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        loss_curve.push(loss as f32);
        let grads = parallel::render_backward(
            &inputs,
            &upstream,
            &rendered.final_transmittance,
            mode,
            &stats,
            threads,
        )?;
        adam_structure.begin_step();
        adam_sigma.begin_step();
        adam_feature.begin_step();
        apply_structure_step(&mut adam_structure, cfg, &mut structure, &grads.grad_structure);
        apply_mlp_step(&mut adam_sigma, cfg, &mut sigma_mlp, &grads.grad_sigma_mlp);
        apply_mlp_step(&mut adam_feature, cfg, &mut feature_mlp, &grads.grad_feature_mlp);
    }

    // Held-out evaluation.
    let mut heldout_renders = Vec::new();
    let mut heldout_truth = Vec::new();
    let mut sq_sum = 0.0f64;
    let mut count = 0usize;
    for &view in &heldout_idx {
        let bundle = rays_from_camera(&cameras[view], cfg.near, cfg.far)?;
        let samples = sample_points(bundle, cfg.samples_per_ray, ContractConfig::disabled())?;
        let inputs = RendererInputs::new(&structure, &sigma_mlp, &feature_mlp, &samples, direnc);
        let stats = KernelStats::new();
        let rendered = parallel::render_forward(&inputs, &stats, threads)?;
        sq_sum += mse(&rendered.features, &truths[view]) * rendered.features.len() as f64;
        count += rendered.features.len();
        heldout_renders.push(rendered.features);
        heldout_truth.push(truths[view].clone());
    }
    let heldout_psnr = psnr(sq_sum / count as f64);

    Ok((
        FitReport {
            loss_curve,
            heldout_psnr,
            wall_clock_sec: start.elapsed().as_secs_f64(),
            iterations_run: cfg.iterations,
        },
        FitArtifacts {
            structure,
            sigma_mlp,
            feature_mlp,
            heldout_renders,
            heldout_truth,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_scene_renders_black_everywhere() {
        let scene = AnalyticScene::zero();
        let cam = look_at_camera([0.0, 0.0, -2.4], 16, 16, 1.1);
        let img = make_ground_truth(&scene, &cam, 0.9, 3.9, 32).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ground_truth_quadrature_converges() {
        let scene = AnalyticScene::new(SceneConfig::default());
        let cam = look_at_camera([0.0, 0.2, -2.4], 24, 24, 1.1);
        let coarse = make_ground_truth(&scene, &cam, 0.9, 3.9, 512).unwrap();
        let fine = make_ground_truth(&scene, &cam, 0.9, 3.9, 1024).unwrap();
        let worst = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "quadrature not converged: {worst}");
    }

    #[test]
    fn mirrored_cameras_see_mirrored_images() {
        // Radially symmetric scene; the flipped camera on the other side
        // sees the u-mirrored image.
        let scene = AnalyticScene::new(SceneConfig {
            color: ColorField::RadialPalette,
            ..Default::default()
        });
        let (w, h) = (20, 14);
        let front = Camera {
            fx: 22.0,
            fy: 22.0,
            cx: w as f32 / 2.0,
            cy: h as f32 / 2.0,
            width: w,
            height: h,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, -2.4],
        };
        let back = Camera {
            rotation: [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
            translation: [0.0, 0.0, 2.4],
            ..front.clone()
        };
        let a = make_ground_truth(&scene, &front, 0.9, 3.9, 256).unwrap();
        let b = make_ground_truth(&scene, &back, 0.9, 3.9, 256).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let va = a[(y * w + x) * 3 + c];
                    let vb = b[(y * w + (w - 1 - x)) * 3 + c];
                    assert!((va - vb).abs() < 1e-5, "({x},{y},{c}): {va} vs {vb}");
                }
            }
        }
    }

    #[test]
    fn psnr_definition() {
        assert!((psnr(0.01) - 20.0).abs() < 1e-6);
        assert!((psnr(1e-3) - 30.0).abs() < 1e-5);
    }

    #[test]
    fn fitting_the_zero_scene_goes_dark() {
        let cfg = FitConfig {
            image_size: 16,
            train_views: 4,
            heldout_views: 2,
            samples_per_ray: 16,
            iterations: 100,
            grid_dim: 8,
            grid_channels: 4,
            mlp_width: 8,
            lr_structure: 0.1,
            lr_mlp: 0.05,
            density_bias_init: -2.0,
            scene: SceneConfig {
                shell_scale: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let (report, artifacts) = fit(&cfg, AccumMode::Deterministic, 2).unwrap();
        let mean_intensity: f32 = artifacts
            .heldout_renders
            .iter()
            .flat_map(|img| img.iter())
            .map(|v| v.abs())
            .sum::<f32>()
            / artifacts
                .heldout_renders
                .iter()
                .map(|img| img.len())
                .sum::<usize>() as f32;
        assert!(
            mean_intensity < 1e-3,
            "zero scene should fit to black, got {mean_intensity} (psnr {})",
            report.heldout_psnr
        );
    }

    #[test]
    fn loss_decreases_in_moving_average_on_short_fit() {
        let cfg = FitConfig {
            image_size: 16,
            train_views: 6,
            heldout_views: 2,
            samples_per_ray: 24,
            iterations: 200,
            grid_dim: 12,
            ..Default::default()
        };
        let (report, _) = fit(&cfg, AccumMode::Deterministic, 2).unwrap();
        let window = 50;
        let early: f32 =
            report.loss_curve[..window].iter().sum::<f32>() / window as f32;
        let late: f32 = report.loss_curve[report.loss_curve.len() - window..]
            .iter()
            .sum::<f32>()
            / window as f32;
        assert!(late < early, "loss did not trend down: {early} -> {late}");
    }

    #[test]
    fn tv_loss_gradients_match_finite_differences() {
        // Small synthetic frame; checks the TV upstream wiring.
        let width = 4;
        let height = 3;
        let c = 2;
        let feats: Vec<f32> = (0..width * height * c)
            .map(|i| ((i * 31 % 17) as f32) * 0.05)
            .collect();
        let truth = vec![0.1f32; feats.len()];
        let loss = LossKind::MseTv { tv_weight: 0.7 };
        let eval = |f: &[f32]| {
            let out = RenderOutput {
                features: f.to_vec(),
                channels: c,
                final_transmittance: vec![1.0; width * height],
                expected_depth: None,
            };
            loss_and_upstream(&out, &truth, width, height, loss)
        };
        let (_, upstream) = eval(&feats);
        let eps = 1e-3;
        for probe in [0usize, 5, 11, 23] {
            let mut f = feats.clone();
            f[probe] += eps;
            let (up, _) = eval(&f);
            f[probe] -= 2.0 * eps;
            let (down, _) = eval(&f);
            let fd = ((up - down) / (2.0 * eps as f64)) as f32;
            assert!(
                (fd - upstream[probe]).abs() < 1e-4,
                "probe {probe}: fd {fd} vs {}",
                upstream[probe]
            );
        }
    }
}
