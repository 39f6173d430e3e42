//! Central finite-difference verification of the fused backward passes,
//! run in FP64 against the analytic gradients.
//!
//! Loss for the renderer is a fixed random projection of the rendered
//! features; for the splatter, of the normalized structure. Errors are
//! relative with a floor of 1% of the gradient group's max magnitude
//! (per-entry ratios carry no signal once values sink into reduction
//! noise).

use serde::{Deserialize, Serialize};

use lightplane_core::accum::AccumMode;
use lightplane_core::counters::KernelStats;
use lightplane_core::hash3d::StructureKind;
use lightplane_core::mlp::HiddenActivation;
use lightplane_core::math::Rng;
use lightplane_core::renderer::{render_backward_fused, render_forward_fused};
use lightplane_core::splatter::{splat_backward_fused, splat_forward_fused};

use crate::error::Result;
use crate::fixtures::{
    render_fixture, splat_fixture, RenderFixture, RenderFixtureSpec, SplatFixture,
    SplatFixtureSpec,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub epsilon: f64,
    /// Parameters probed per gradient group.
    pub probes: usize,
    pub threshold: f64,
    pub rays: usize,
    pub steps: usize,
    pub mlp_width: usize,
    pub grid_channels: usize,
    /// Test hook: corrupt one analytic gradient to prove the checker fails.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            epsilon: 1e-3,
            probes: 200,
            threshold: 1e-2,
            rays: 16,
            steps: 32,
            mlp_width: 16,
            grid_channels: 4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub passed: bool,
}

pub fn all_passed(rows: &[CheckRow]) -> bool {
    rows.iter().all(|r| r.passed)
}

fn probe_indices(count: usize, probes: usize, rng: &mut Rng) -> Vec<usize> {
    if count <= probes {
        return (0..count).collect();
    }
    let mut all: Vec<usize> = (0..count).collect();
    rng.shuffle(&mut all);
    all.truncate(probes);
    all
}

struct GroupCheck {
    name: &'static str,
    worst: f64,
}

impl GroupCheck {
    fn new(name: &'static str) -> Self {
        GroupCheck { name, worst: 0.0 }
    }

    fn compare(&mut self, fd: f64, analytic: f64, floor: f64) {
        let denom = fd.abs().max(analytic.abs()).max(floor);
        self.worst = self.worst.max((fd - analytic).abs() / denom);
    }

    fn row(self, threshold: f64) -> CheckRow {
        CheckRow {
            name: self.name,
            max_rel_err: self.worst,
            threshold,
            passed: self.worst < threshold,
        }
    }
}

fn grad_scale(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12)
}

fn render_loss(fixture: &RenderFixture<f64>, upstream: &[f64]) -> f64 {
    let stats = KernelStats::new();
    let out = render_forward_fused(&fixture.inputs(), &stats).expect("fixture renders");
    out.features
        .iter()
        .zip(upstream)
        .map(|(a, b)| a * b)
        .sum()
}

fn renderer_checks(cfg: &GradCheckConfig, rows: &mut Vec<CheckRow>) {
    // Smooth hidden activations: finite differences across a ReLU kink say
    // nothing about the derivative math, and the piecewise-linear path is
    // covered exactly by the fused-vs-naive oracle comparisons.
    let spec = RenderFixtureSpec {
        kind: StructureKind::Voxel,
        hidden_activation: HiddenActivation::Softplus,
        rays: cfg.rays,
        steps: cfg.steps,
        mlp_width: cfg.mlp_width,
        channels: cfg.grid_channels,
        ..Default::default()
    };
    let mut fixture: RenderFixture<f64> = render_fixture(cfg.seed, &spec).convert();
    let mut rng = Rng::stream(cfg.seed, 101);
    let m = fixture.samples.num_rays();
    let c = fixture.feature_mlp.out_dim();
    let upstream: Vec<f64> = (0..m * c).map(|_| rng.uniform(-1.0f64, 1.0)).collect();

    let stats = KernelStats::new();
    let out = render_forward_fused(&fixture.inputs(), &stats).expect("fixture renders");
    let mut grads = render_backward_fused(
        &fixture.inputs(),
        &upstream,
        &out.final_transmittance,
        AccumMode::Deterministic,
        &stats,
    )
    .expect("fixture backward");
    if cfg.corrupt {
        // Negative control: shift every structure gradient so any probe
        // subset catches the corruption.
        for i in 0..grads.grad_structure.flat_len() {
            let poisoned = grads.grad_structure.flat_get(i) + 1.0;
            grads.grad_structure.flat_set(i, poisoned);
        }
    }
    let eps = cfg.epsilon;

    // Structure entries.
    {
        let mut check = GroupCheck::new("renderer/structure");
        let n = fixture.structure.flat_len();
        let floor =
            1e-2 * grad_scale((0..n).map(|i| grads.grad_structure.flat_get(i)));
        for idx in probe_indices(n, cfg.probes, &mut rng) {
            let orig = fixture.structure.flat_get(idx);
            fixture.structure.flat_set(idx, orig + eps);
            let up = render_loss(&fixture, &upstream);
            fixture.structure.flat_set(idx, orig - eps);
            let down = render_loss(&fixture, &upstream);
            fixture.structure.flat_set(idx, orig);
            check.compare(
                (up - down) / (2.0 * eps),
                grads.grad_structure.flat_get(idx),
                floor,
            );
        }
        rows.push(check.row(cfg.threshold));
    }

    // Decoder parameters.
    for (name, which) in [("renderer/sigma-mlp", 0usize), ("renderer/feature-mlp", 1)] {
        let mut check = GroupCheck::new(name);
        let count = if which == 0 {
            fixture.sigma_mlp.param_count()
        } else {
            fixture.feature_mlp.param_count()
        };
        let grad_of = |i: usize| {
            if which == 0 {
                grads.grad_sigma_mlp.param_get(i)
            } else {
                grads.grad_feature_mlp.param_get(i)
            }
        };
        let floor = 1e-2 * grad_scale((0..count).map(grad_of));
        for idx in probe_indices(count, cfg.probes, &mut rng) {
            let orig = if which == 0 {
                fixture.sigma_mlp.param_get(idx)
            } else {
                fixture.feature_mlp.param_get(idx)
            };
            let set = |fix: &mut RenderFixture<f64>, v: f64| {
                if which == 0 {
                    fix.sigma_mlp.param_set(idx, v);
                } else {
                    fix.feature_mlp.param_set(idx, v);
                }
            };
            set(&mut fixture, orig + eps);
            let up = render_loss(&fixture, &upstream);
            set(&mut fixture, orig - eps);
            let down = render_loss(&fixture, &upstream);
            set(&mut fixture, orig);
            check.compare((up - down) / (2.0 * eps), grad_of(idx), floor);
        }
        rows.push(check.row(cfg.threshold));
    }
}

fn splat_loss(
    fixture: &SplatFixture<f64>,
    grad_normalized: &lightplane_core::hash3d::HashStructure<f64>,
) -> f64 {
    let stats = KernelStats::new();
    let result = splat_forward_fused(
        &fixture.inputs(),
        &fixture.target,
        AccumMode::Deterministic,
        &stats,
    )
    .expect("fixture splats");
    (0..fixture.target.flat_len())
        .map(|i| result.normalized.flat_get(i) * grad_normalized.flat_get(i))
        .sum()
}

fn splatter_checks(cfg: &GradCheckConfig, rows: &mut Vec<CheckRow>) {
    let spec = SplatFixtureSpec {
        hidden_activation: HiddenActivation::Softplus,
        rays: cfg.rays,
        steps: cfg.steps.min(24),
        mlp_width: cfg.mlp_width,
        ..Default::default()
    };
    let mut fixture: SplatFixture<f64> = splat_fixture(cfg.seed, &spec).convert();
    let mut rng = Rng::stream(cfg.seed, 202);

    let stats = KernelStats::new();
    let forward = splat_forward_fused(
        &fixture.inputs(),
        &fixture.target,
        AccumMode::Deterministic,
        &stats,
    )
    .expect("fixture splats");

    // Probe only supported cells. Cells whose accumulated weight sits under
    // the division guard scale the loss by up to 1/eps, where accumulator
    // granularity alone swamps any finite-difference quotient; the weight
    // field is pure geometry, so the mask is independent of every probed
    // parameter.
    let k = fixture.target.channels;
    let mut grad_normalized = fixture.target.zeros::<f64>();
    for i in 0..fixture.target.flat_len() {
        let supported = forward.theta_weight.flat_get(i / k) > 1e-1;
        let g = if supported { rng.uniform(-1.0f64, 1.0) } else { 0.0 };
        grad_normalized.flat_set(i, g);
    }
    let grads = splat_backward_fused(
        &fixture.inputs(),
        &fixture.target,
        &grad_normalized,
        &forward.theta_weight,
        AccumMode::Deterministic,
        &stats,
    )
    .expect("fixture backward");
    let eps = cfg.epsilon;

    // Input features.
    {
        let mut check = GroupCheck::new("splatter/features");
        let floor = 1e-2 * grad_scale(grads.grad_features.iter().copied());
        for idx in probe_indices(fixture.features.len(), cfg.probes, &mut rng) {
            let orig = fixture.features[idx];
            fixture.features[idx] = orig + eps;
            let up = splat_loss(&fixture, &grad_normalized);
            fixture.features[idx] = orig - eps;
            let down = splat_loss(&fixture, &grad_normalized);
            fixture.features[idx] = orig;
            check.compare((up - down) / (2.0 * eps), grads.grad_features[idx], floor);
        }
        rows.push(check.row(cfg.threshold));
    }

    // Prior structure.
    {
        let mut check = GroupCheck::new("splatter/prior");
        let grad_prior = grads.grad_prior.as_ref().expect("fixture has a prior");
        let n = fixture.prior.as_ref().expect("fixture has a prior").flat_len();
        let floor = 1e-2 * grad_scale((0..n).map(|i| grad_prior.flat_get(i)));
        for idx in probe_indices(n, cfg.probes, &mut rng) {
            let prior = fixture.prior.as_mut().expect("fixture has a prior");
            let orig = prior.flat_get(idx);
            prior.flat_set(idx, orig + eps);
            let up = splat_loss(&fixture, &grad_normalized);
            fixture
                .prior
                .as_mut()
                .expect("fixture has a prior")
                .flat_set(idx, orig - eps);
            let down = splat_loss(&fixture, &grad_normalized);
            fixture
                .prior
                .as_mut()
                .expect("fixture has a prior")
                .flat_set(idx, orig);
            check.compare((up - down) / (2.0 * eps), grad_prior.flat_get(idx), floor);
        }
        rows.push(check.row(cfg.threshold));
    }

    // Modifier parameters.
    {
        let mut check = GroupCheck::new("splatter/modifier-mlp");
        let grad_mlp = grads
            .grad_modifier_mlp
            .as_ref()
            .expect("fixture has a modifier");
        let count = fixture
            .modifier_mlp
            .as_ref()
            .expect("fixture has a modifier")
            .param_count();
        let floor = 1e-2 * grad_scale((0..count).map(|i| grad_mlp.param_get(i)));
        for idx in probe_indices(count, cfg.probes, &mut rng) {
            let mlp = fixture.modifier_mlp.as_mut().expect("fixture has a modifier");
            let orig = mlp.param_get(idx);
            mlp.param_set(idx, orig + eps);
            let up = splat_loss(&fixture, &grad_normalized);
            fixture
                .modifier_mlp
                .as_mut()
                .expect("fixture has a modifier")
                .param_set(idx, orig - eps);
            let down = splat_loss(&fixture, &grad_normalized);
            fixture
                .modifier_mlp
                .as_mut()
                .expect("fixture has a modifier")
                .param_set(idx, orig);
            check.compare((up - down) / (2.0 * eps), grad_mlp.param_get(idx), floor);
        }
        rows.push(check.row(cfg.threshold));
    }
}

/// Runs every check group and returns one row per group.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    renderer_checks(cfg, &mut rows);
    splatter_checks(cfg, &mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes_quick_variant() {
        let cfg = GradCheckConfig {
            probes: 25,
            rays: 8,
            steps: 16,
            ..Default::default()
        };
        let rows = run_gradcheck(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert!(
                row.passed,
                "{} failed: {} >= {}",
                row.name, row.max_rel_err, row.threshold
            );
        }
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let cfg = GradCheckConfig {
            probes: 25,
            rays: 8,
            steps: 16,
            corrupt: true,
            ..Default::default()
        };
        let rows = run_gradcheck(&cfg).unwrap();
        assert!(!all_passed(&rows));
    }
}
