//! Command-line entry point: render, splat, fit, bench, gradcheck.
//!
//! Exit codes: 0 success, 1 failed checks or divergence, 2 unparsable
//! flags/files, 3 shape or contract mismatches. Output files are written
//! atomically (temp file + rename); failures leave no partial outputs.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use lightplane::bench::{run_bench, to_csv, BenchSpec};
use lightplane::core::accum::AccumMode;
use lightplane::core::counters::KernelStats;
use lightplane::core::hash3d::{ContractConfig, StructureKind, StructureSpec};
use lightplane::core::mlp::DirEncConfig;
use lightplane::core::rays::{rays_from_camera, sample_points};
use lightplane::core::renderer::RendererInputs;
use lightplane::core::splatter::SplatterInputs;
use lightplane::error::{Error, Result};
use lightplane::formats::{
    decode_grid, decode_image, decode_mlp_bundle, encode_grid, encode_image, encode_mlp_bundle,
    encode_ppm, read_bytes, read_camera_file, write_atomic, FeatureImage,
};
use lightplane::gradcheck::{all_passed, run_gradcheck, GradCheckConfig};
use lightplane::parallel;
use lightplane::scenefit::{fit, FitConfig};

#[derive(Parser)]
#[command(
    name = "lightplane",
    version,
    about = "Differentiable volume rendering and feature splatting over voxel/triplane grids",
    disable_help_subcommand = true
)]
struct Cli {
    /// Seed for stochastic components (falls back to per-command configs).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: LIGHTPLANE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Deterministic reductions (bit-identical outputs); `false` switches
    /// to fast floating-point accumulation.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a grid through its decoder bundle from a camera.
    Render {
        /// LPG1 structure file.
        #[arg(long)]
        grid: PathBuf,
        /// LPM1 bundle holding the opacity then the feature decoder.
        #[arg(long)]
        mlp: PathBuf,
        /// Camera JSON ({fx,fy,cx,cy,width,height,R,t,near,far}).
        #[arg(long)]
        camera: PathBuf,
        /// Segments per ray (R).
        #[arg(long)]
        samples: usize,
        /// Output image: .ppm for 3-channel bytes, anything else LPI1.
        #[arg(long)]
        out: PathBuf,
        /// Enable coordinate contraction with this foreground scale.
        #[arg(long)]
        contract: Option<f32>,
        /// Use the radial (Euclidean-norm) contraction variant.
        #[arg(long)]
        radial: bool,
        /// Also write expected ray termination depth (single-plane LPI1).
        #[arg(long)]
        depth_out: Option<PathBuf>,
        /// Direction-encoding frequency count of the feature decoder.
        #[arg(long, default_value_t = 2)]
        direnc_frequencies: usize,
    },
    /// Splat a feature image along camera rays into a structure.
    Splat {
        /// LPI1 feature image (one feature vector per pixel).
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Output LPG1 path for the normalized structure.
        #[arg(long)]
        grid_out: PathBuf,
        #[arg(long)]
        samples: usize,
        /// Target kind: voxel or triplane.
        #[arg(long, default_value = "voxel")]
        kind: String,
        /// Target dimensions as HxWxD.
        #[arg(long)]
        dims: String,
        /// LPG1 prior structure sampled by the modifier.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// LPM1 modifier network (single record).
        #[arg(long)]
        gs: Option<PathBuf>,
        #[arg(long)]
        contract: Option<f32>,
        #[arg(long)]
        radial: bool,
        #[arg(long, default_value_t = 2)]
        direnc_frequencies: usize,
    },
    /// Optimize a structure + decoders against the analytic scene.
    Fit {
        /// Fit configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (report.json, grid.lpg, decoders.lpm, renders).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the instrumented fused-vs-naive benchmark sweep.
    Bench {
        /// Benchmark spec JSON (built-in default when omitted).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of the backward passes.
    Gradcheck {
        /// Gradient-check configuration JSON (built-in default when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Test hook: corrupt one gradient group to prove detection.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn contraction(contract: Option<f32>, radial: bool) -> Result<ContractConfig> {
    match contract {
        Some(a) => {
            let mut cfg = ContractConfig::new(a)?;
            cfg.radial = radial;
            Ok(cfg)
        }
        None => Ok(ContractConfig::disabled()),
    }
}

fn parse_dims(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(format!("bad --dims '{text}', expected HxWxD")))?;
    match parts.as_slice() {
        [h, w, d] if *h > 0 && *w > 0 && *d > 0 => Ok([*h, *w, *d]),
        _ => Err(Error::parse(format!("bad --dims '{text}', expected HxWxD"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    grid: &Path,
    mlp: &Path,
    camera: &Path,
    samples: usize,
    out: &Path,
    contract: Option<f32>,
    radial: bool,
    depth_out: Option<&Path>,
    direnc_frequencies: usize,
    threads: usize,
) -> Result<()> {
    let structure = decode_grid(&read_bytes(grid)?)?;
    let decoders = decode_mlp_bundle(&read_bytes(mlp)?)?;
    if decoders.len() != 2 {
        return Err(Error::parse(format!(
            "--mlp bundle must hold exactly 2 records (opacity, feature), found {}",
            decoders.len()
        )));
    }
    let cam_file = read_camera_file(camera)?;
    let cam = cam_file.camera();
    let bundle = rays_from_camera(&cam, cam_file.near, cam_file.far)?;
    let ray_samples = sample_points(bundle, samples, contraction(contract, radial)?)?;
    let direnc = DirEncConfig {
        num_frequencies: direnc_frequencies,
        include_raw: true,
    };
    let mut inputs =
        RendererInputs::new(&structure, &decoders[0], &decoders[1], &ray_samples, direnc);
    inputs.compute_depth = depth_out.is_some();
    let stats = KernelStats::new();
    let rendered = parallel::render_forward(&inputs, &stats, threads)?;

    let mean_t: f64 = rendered
        .final_transmittance
        .iter()
        .map(|t| *t as f64)
        .sum::<f64>()
        / rendered.final_transmittance.len() as f64;

    let channels = rendered.channels;
    let is_ppm = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        if channels != 3 {
            return Err(Error::Kernel(lightplane::core::Error::DimMismatch {
                what: "ppm output needs 3 feature channels",
                expected: 3,
                got: channels,
            }));
        }
        write_atomic(out, &encode_ppm(cam.width, cam.height, &rendered.features))?;
    } else {
        let image =
            FeatureImage::from_interleaved(cam.width, cam.height, channels, &rendered.features);
        write_atomic(out, &encode_image(&image))?;
    }
    if let (Some(path), Some(depth)) = (depth_out, rendered.expected_depth.as_ref()) {
        let image = FeatureImage::from_interleaved(cam.width, cam.height, 1, depth);
        write_atomic(path, &encode_image(&image))?;
    }
    println!("mean T_R {mean_t:.6}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_splat(
    features: &Path,
    camera: &Path,
    grid_out: &Path,
    samples: usize,
    kind: &str,
    dims: &str,
    prior: Option<&Path>,
    gs: Option<&Path>,
    contract: Option<f32>,
    radial: bool,
    direnc_frequencies: usize,
    mode: AccumMode,
    threads: usize,
) -> Result<()> {
    let image = decode_image(&read_bytes(features)?)?;
    let cam_file = read_camera_file(camera)?;
    let cam = cam_file.camera();
    if cam.pixel_count() != image.pixel_count() {
        return Err(Error::Kernel(lightplane::core::Error::DimMismatch {
            what: "feature image pixels vs camera rays",
            expected: cam.pixel_count(),
            got: image.pixel_count(),
        }));
    }
    let kind = match kind {
        "voxel" => StructureKind::Voxel,
        "triplane" => StructureKind::TriPlane,
        other => return Err(Error::parse(format!("unknown --kind '{other}'"))),
    };
    let dims = parse_dims(dims)?;
    let prior_structure = prior.map(|p| decode_grid(&read_bytes(p)?)).transpose()?;
    let modifier = gs
        .map(|p| -> Result<_> {
            let records = decode_mlp_bundle(&read_bytes(p)?)?;
            if records.len() != 1 {
                return Err(Error::parse("--gs file must hold exactly one record"));
            }
            Ok(records.into_iter().next().expect("one record"))
        })
        .transpose()?;

    let bundle = rays_from_camera(&cam, cam_file.near, cam_file.far)?;
    let ray_samples = sample_points(bundle, samples, contraction(contract, radial)?)?;
    let direnc = DirEncConfig {
        num_frequencies: direnc_frequencies,
        include_raw: true,
    };
    let pixel_features = image.to_interleaved();
    let inputs = SplatterInputs {
        features: &pixel_features,
        channels: image.channels,
        samples: &ray_samples,
        prior: prior_structure.as_ref(),
        modifier_mlp: modifier.as_ref(),
        direnc,
        append_position: false,
    };
    let target = StructureSpec {
        kind,
        dims,
        channels: inputs.splatted_channels(),
    };
    let stats = KernelStats::new();
    let result = parallel::splat_forward(&inputs, &target, mode, &stats, threads)?;

    let weight_spec = result.theta_weight.spec();
    let cells = weight_spec.flat_len();
    let mut touched = 0usize;
    let mut weight_sum = 0.0f64;
    for i in 0..cells {
        let w = result.theta_weight.flat_get(i);
        if w > 0.0 {
            touched += 1;
        }
        weight_sum += w as f64;
    }
    write_atomic(grid_out, &encode_grid(&result.normalized))?;
    println!(
        "splatted {} rays; touched {:.1}% of cells, mean weight {:.4}",
        inputs.num_rays(),
        100.0 * touched as f64 / cells as f64,
        weight_sum / cells as f64
    );
    Ok(())
}

fn cmd_fit(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    mode: AccumMode,
    threads: usize,
) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let mut cfg: FitConfig = serde_json::from_str(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (report, artifacts) = fit(&cfg, mode, threads)?;
    std::fs::create_dir_all(out)?;
    write_atomic(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    write_atomic(&out.join("grid.lpg"), &encode_grid(&artifacts.structure))?;
    write_atomic(
        &out.join("decoders.lpm"),
        &encode_mlp_bundle(&[&artifacts.sigma_mlp, &artifacts.feature_mlp]),
    )?;
    for (i, (render, truth)) in artifacts
        .heldout_renders
        .iter()
        .zip(&artifacts.heldout_truth)
        .enumerate()
    {
        write_atomic(
            &out.join(format!("heldout_{i}.ppm")),
            &encode_ppm(cfg.image_size, cfg.image_size, render),
        )?;
        write_atomic(
            &out.join(format!("heldout_{i}_truth.ppm")),
            &encode_ppm(cfg.image_size, cfg.image_size, truth),
        )?;
    }
    println!(
        "held-out PSNR {:.2} dB after {} iterations ({:.1}s)",
        report.heldout_psnr, report.iterations_run, report.wall_clock_sec
    );
    Ok(())
}

fn cmd_bench(spec: Option<&Path>, out: &Path, seed: Option<u64>, threads: usize) -> Result<()> {
    let mut spec = match spec {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => BenchSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let rows = run_bench(&spec, threads)?;
    write_atomic(out, to_csv(&rows).as_bytes())?;
    println!("wrote {} benchmark rows to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>, corrupt: bool, seed: Option<u64>) -> Result<i32> {
    let mut cfg: GradCheckConfig = match config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => GradCheckConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.corrupt |= corrupt;
    let rows = run_gradcheck(&cfg)?;
    println!(
        "{:<24} {:>14} {:>11} {:>7}",
        "check", "max_rel_err", "threshold", "status"
    );
    for row in &rows {
        println!(
            "{:<24} {:>14.6e} {:>11.0e} {:>7}",
            row.name,
            row.max_rel_err,
            row.threshold,
            if row.passed { "pass" } else { "FAIL" }
        );
    }
    Ok(if all_passed(&rows) { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<i32> {
    let threads = parallel::effective_threads(cli.threads);
    let mode = if cli.deterministic {
        AccumMode::Deterministic
    } else {
        AccumMode::Fast
    };
    match &cli.command {
        Command::Render {
            grid,
            mlp,
            camera,
            samples,
            out,
            contract,
            radial,
            depth_out,
            direnc_frequencies,
        } => {
            cmd_render(
                grid,
                mlp,
                camera,
                *samples,
                out,
                *contract,
                *radial,
                depth_out.as_deref(),
                *direnc_frequencies,
                threads,
            )?;
            Ok(0)
        }
        Command::Splat {
            features,
            camera,
            grid_out,
            samples,
            kind,
            dims,
            prior,
            gs,
            contract,
            radial,
            direnc_frequencies,
        } => {
            cmd_splat(
                features,
                camera,
                grid_out,
                *samples,
                kind,
                dims,
                prior.as_deref(),
                gs.as_deref(),
                *contract,
                *radial,
                *direnc_frequencies,
                mode,
                threads,
            )?;
            Ok(0)
        }
        Command::Fit { config, out } => {
            cmd_fit(config, out, cli.seed, mode, threads)?;
            Ok(0)
        }
        Command::Bench { spec, out } => {
            cmd_bench(spec.as_deref(), out, cli.seed, threads)?;
            Ok(0)
        }
        Command::Gradcheck { config, corrupt } => {
            cmd_gradcheck(config.as_deref(), *corrupt, cli.seed)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
