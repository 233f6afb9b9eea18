//! Pipeline driver. Every subcommand reads one `key = value` config file,
//! runs a single stage, and leaves its artifacts in the run directory so
//! stages compose through the filesystem:
//!
//!   synth -> carve -> visibility -> aggregate -> fit -> refine -> eval

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use hullcap_core::config::Config;
use hullcap_core::fit::{DualOptimizer, FitContext, FitOptions, LossWeights, Optimizer, Stage};
use hullcap_core::io;
use hullcap_core::predict::{make_dual_pair, LocalStageParams, PredictorKind, PredictorSpec};
use hullcap_core::{
    build_global_volume, build_local_volumes, carve_occupancy, compute_metrics, extract_hull,
    grid_visibility, hull_bounds, make_scene, render_depth, AnalyticExtractor, FeatureExtractor,
    FeatureVolume, Scan, TemplateMesh,
};

#[derive(Parser)]
#[command(
    name = "hullcap",
    about = "Multi-view visual-hull capture pipeline",
    version
)]
struct Cli {
    /// Path to the key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override scene.seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override paths.dir (the run directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory (meshes, scan, rig, views).
    Synth,
    /// Carve the masks into an occupancy grid and extract the visual hull.
    Carve,
    /// Render hull depth maps and derive the global feature grid.
    Visibility,
    /// Fuse visibility-gated image features into the global volume.
    Aggregate,
    /// Dual-estimator coarse fitting with the robust losses.
    Fit,
    /// Local per-vertex refinement around the coarse mesh.
    Refine,
    /// Point-to-surface error report of the scan against a mesh.
    Eval,
}

fn main() {
    hullcap_core::configure_threads();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config_path = cli
        .config
        .context("--config <path> is required")?;
    let mut cfg = Config::from_file(&config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.set("scene.seed", seed);
    }
    if let Some(out) = &cli.out {
        cfg.set("paths.dir", out.display());
    }

    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Carve => cmd_carve(&cfg),
        Command::Visibility => cmd_visibility(&cfg),
        Command::Aggregate => cmd_aggregate(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::Refine => cmd_refine(&cfg),
        Command::Eval => cmd_eval(&cfg),
    }
}

fn run_dir(cfg: &Config) -> PathBuf {
    PathBuf::from(cfg.str_or("paths.dir", "run"))
}

fn scene_dir(cfg: &Config) -> PathBuf {
    match cfg.get("paths.scene") {
        Some(p) => PathBuf::from(p),
        None => run_dir(cfg).join("scene"),
    }
}

fn load_views(dir: &Path) -> anyhow::Result<(hullcap_core::CameraRig, usize)> {
    let rig = io::load_rig(&dir.join("rig.txt"))?;
    let n = rig.n_views();
    Ok((rig, n))
}

fn load_hull_depths(
    cfg: &Config,
    rig: &hullcap_core::CameraRig,
) -> anyhow::Result<Vec<hullcap_core::DepthMap>> {
    let dir = run_dir(cfg);
    (0..rig.n_views())
        .map(|i| {
            let path = dir.join(format!("hull_depth_{i:03}.pfm"));
            io::read_depth(&path)
                .with_context(|| format!("reading {} (run `visibility` first?)", path.display()))
        })
        .collect()
}

fn cmd_synth(cfg: &Config) -> anyhow::Result<()> {
    let spec = cfg.scene_spec()?;
    let scene = make_scene(&spec)?;
    let dir = scene_dir(cfg);
    io::export_scene(&scene, &dir)?;
    println!(
        "scene `{}` seed {}: {} vertices, {} scan points, {} views -> {}",
        spec.shape.name(),
        spec.seed,
        scene.gt_mesh.n_vertices(),
        scene.scan.n_points(),
        scene.rig.n_views(),
        dir.display()
    );
    Ok(())
}

fn cmd_carve(cfg: &Config) -> anyhow::Result<()> {
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir)?;
    let sdir = scene_dir(cfg);
    let (rig, n_views) = load_views(&sdir)?;
    let masks = io::load_scene_masks(&sdir, n_views)?;
    // Mirror the real mask pipeline: keep only the largest connected
    // component of each silhouette.
    let masks: Vec<_> = masks
        .iter()
        .map(|m| m.largest_connected_component())
        .collect();
    let grid = cfg.hull_grid()?;
    let occ = carve_occupancy(&masks, &rig, &grid)?;
    let threshold = cfg.carve_threshold(n_views)?;
    let hull = extract_hull(&occ, threshold)?;
    io::write_hull(&hull, &dir.join("hull.obj"))?;
    io::write_grid(&grid, &dir.join("hull_grid.txt"))?;
    println!(
        "carved {}^3 grid (edge {} m): {} voxels at threshold {threshold}, hull has {} triangles",
        grid.resolution,
        grid.voxel_edge,
        occ.count_at_least(threshold),
        hull.triangles.len()
    );
    Ok(())
}

fn cmd_visibility(cfg: &Config) -> anyhow::Result<()> {
    let dir = run_dir(cfg);
    let sdir = scene_dir(cfg);
    let (rig, _) = load_views(&sdir)?;
    let hull = io::read_hull(&dir.join("hull.obj"))
        .context("reading hull.obj (run `carve` first?)")?;
    let grid = hull_bounds(&hull, cfg.grid_padding()?, cfg.global_resolution()?)?;
    io::write_grid(&grid, &dir.join("global_grid.txt"))?;

    let mut depths = Vec::with_capacity(rig.n_views());
    for (i, cam) in rig.iter().enumerate() {
        let dm = render_depth(&hull, cam);
        io::write_depth(&dm, &dir.join(format!("hull_depth_{i:03}.pfm")))?;
        depths.push(dm);
    }
    let vis = grid_visibility(&grid, &rig, &depths, cfg.rho()?, cfg.visibility_rule()?)?;
    for view in 0..rig.n_views() {
        println!(
            "view {view}: {} / {} voxels visible",
            vis.count_visible(view),
            grid.n_voxels()
        );
    }
    println!(
        "global grid {}^3, extent {} m, origin ({}, {}, {})",
        grid.resolution,
        grid.extent(),
        grid.origin.x,
        grid.origin.y,
        grid.origin.z
    );
    Ok(())
}

fn cmd_aggregate(cfg: &Config) -> anyhow::Result<()> {
    let dir = run_dir(cfg);
    let sdir = scene_dir(cfg);
    let (rig, n_views) = load_views(&sdir)?;
    let grid = io::read_grid(&dir.join("global_grid.txt"))
        .context("reading global_grid.txt (run `visibility` first?)")?;
    let depths = load_hull_depths(cfg, &rig)?;
    let images = io::load_scene_images(&sdir, n_views)?;
    let vis = grid_visibility(&grid, &rig, &depths, cfg.rho()?, cfg.visibility_rule()?)?;
    let volume = build_global_volume(&images, &rig, &grid, &vis, &AnalyticExtractor)?;
    io::write_volume(&volume, &dir.join("global_volume.hcfv"))?;
    println!(
        "fused {} views into {}^3 volume: {} / {} voxels observed",
        n_views,
        grid.resolution,
        volume.n_valid(),
        grid.n_voxels()
    );
    Ok(())
}

struct FitSetup {
    template: TemplateMesh,
    reg: TemplateMesh,
    scan: Option<Scan>,
}

fn load_fit_setup(cfg: &Config, want_scan: bool) -> anyhow::Result<FitSetup> {
    let sdir = scene_dir(cfg);
    let reg = io::read_mesh(&sdir.join("reg_mesh.obj"))?;
    let template = reg.clone();
    let scan = if want_scan {
        Some(io::read_scan(&sdir.join("scan.ply"))?)
    } else {
        None
    };
    Ok(FitSetup {
        template,
        reg,
        scan,
    })
}

fn cmd_fit(cfg: &Config) -> anyhow::Result<()> {
    let dir = run_dir(cfg);
    fs::create_dir_all(&dir)?;
    let grid = io::read_grid(&dir.join("global_grid.txt"))
        .context("reading global_grid.txt (run `visibility` first?)")?;

    let kind = cfg.predictor_kind("fit.predictor", PredictorKind::DirectVertex)?;
    let lambda_p2s = cfg.f64_or("fit.lambda_p2s", 1.0)?;
    let setup = load_fit_setup(cfg, lambda_p2s > 0.0)?;

    let volume = match kind {
        PredictorKind::LinearHeatmap => io::read_volume(&dir.join("global_volume.hcfv"))
            .context("reading global_volume.hcfv (run `aggregate` first?)")?,
        PredictorKind::DirectVertex => FeatureVolume::uniform_valid(grid, 1),
    };
    if volume.spec.resolution != grid.resolution {
        bail!(
            "global volume was built on a {}^3 grid but global_grid.txt says {}^3",
            volume.spec.resolution,
            grid.resolution
        );
    }

    let spec = PredictorSpec::new(
        kind,
        setup.template.n_vertices(),
        grid.resolution,
        volume.fused_len(),
    )
    .with_init_scale(cfg.f64_or("fit.init_scale", 0.01)?);
    let mut pair = make_dual_pair(
        spec,
        cfg.u64_or("fit.seed_a", 1)?,
        cfg.u64_or("fit.seed_b", 2)?,
    )?;

    let opts = FitOptions {
        stage: Stage::Coarse,
        weights: LossWeights {
            v2v: cfg.f64_or("fit.lambda_v2v", 1.0)?,
            p2s: lambda_p2s,
            laplacian: cfg.f64_or("fit.lambda_laplacian", 0.0)?,
        },
        step_size: cfg.f64_or("fit.step_size", 0.1)?,
        filter: cfg.filter_mode("fit.filter")?,
        optimizer: Optimizer::Adam,
        warmup_steps: 0,
    };
    let steps = cfg.usize_or("fit.steps", 500)?;

    let ctx = FitContext::coarse(&volume, &setup.template, &setup.reg, setup.scan.as_ref())?;
    let mut opt = DualOptimizer::new(&pair);
    let mut log = io::StepLog::create(&dir.join("steps.log"))?;
    if steps == 0 {
        // Report the initialization state without updating anything.
        let null = FitOptions {
            step_size: 0.0,
            ..opts
        };
        let report = hullcap_core::dual_update_step(&mut pair, &mut opt, &ctx, &null)?;
        log.append(&report.log_line())?;
        println!("{}", report.log_line());
    } else {
        for step in 0..steps {
            let step_opts = if step < opts.warmup_steps {
                FitOptions {
                    filter: hullcap_core::FilterMode::None,
                    ..opts
                }
            } else {
                opts
            };
            let mut report = hullcap_core::dual_update_step(&mut pair, &mut opt, &ctx, &step_opts)?;
            report.step = step;
            log.append(&report.log_line())?;
            if step % (steps / 10).max(1) == 0 || step + 1 == steps {
                println!("{}", report.log_line());
            }
        }
    }

    io::write_predictor(&pair.0, &dir.join("predictor_a.ckpt"))?;
    io::write_predictor(&pair.1, &dir.join("predictor_b.ckpt"))?;
    let coarse_a = hullcap_core::coarse_predict(&volume, &pair.0, &setup.template)?;
    let coarse_b = hullcap_core::coarse_predict(&volume, &pair.1, &setup.template)?;
    io::write_mesh(&coarse_a, &dir.join("coarse_a.obj"))?;
    io::write_mesh(&coarse_b, &dir.join("coarse_b.obj"))?;
    println!("wrote predictor_a.ckpt / predictor_b.ckpt / coarse_[ab].obj");
    Ok(())
}

fn cmd_refine(cfg: &Config) -> anyhow::Result<()> {
    let dir = run_dir(cfg);
    let sdir = scene_dir(cfg);
    let (rig, n_views) = load_views(&sdir)?;
    let norm_grid = io::read_grid(&dir.join("global_grid.txt"))
        .context("reading global_grid.txt (run `visibility` first?)")?;
    let coarse_name = cfg.str_or("refine.coarse", "coarse_a.obj");
    let coarse = io::read_mesh(&dir.join(coarse_name))
        .with_context(|| format!("reading {coarse_name} (run `fit` first?)"))?;
    let setup = load_fit_setup(cfg, true)?;
    let scan = setup.scan.as_ref().unwrap();

    let depths = load_hull_depths(cfg, &rig)?;
    let images = io::load_scene_images(&sdir, n_views)?;
    let extractor = AnalyticExtractor;
    let fmaps: Vec<_> = images.iter().map(|im| extractor.extract(im)).collect();

    let params = LocalStageParams {
        resolution: cfg.local_resolution()?,
        voxel_edge: cfg.local_edge()?,
        rho: cfg.rho()?,
        rule: cfg.visibility_rule()?,
    };
    let volumes = build_local_volumes(&coarse, &fmaps, &rig, &depths, &norm_grid, &params)?;

    let spec = PredictorSpec::new(
        cfg.predictor_kind("refine.predictor", PredictorKind::LinearHeatmap)?,
        coarse.n_vertices(),
        params.resolution,
        volumes[0].fused_len(),
    )
    .with_init_scale(cfg.f64_or("refine.init_scale", 0.01)?);
    let mut pair = make_dual_pair(
        spec,
        cfg.u64_or("refine.seed_a", 11)?,
        cfg.u64_or("refine.seed_b", 22)?,
    )?;

    let opts = FitOptions {
        stage: Stage::Local,
        weights: LossWeights {
            v2v: 0.0,
            p2s: 1.0,
            laplacian: cfg.f64_or("refine.lambda_laplacian", 0.0)?,
        },
        step_size: cfg.f64_or("refine.step_size", 0.05)?,
        filter: cfg.filter_mode("refine.filter")?,
        optimizer: Optimizer::Adam,
        warmup_steps: 0,
    };
    let steps = cfg.usize_or("refine.steps", 200)?;

    let ctx = FitContext::local(&volumes, &coarse, &setup.reg, Some(scan))?;
    let mut opt = DualOptimizer::new(&pair);
    let mut log = io::StepLog::create(&dir.join("refine_steps.log"))?;
    for step in 0..steps {
        let mut report = hullcap_core::dual_update_step(&mut pair, &mut opt, &ctx, &opts)?;
        report.step = step;
        log.append(&report.log_line())?;
        if step % (steps / 10).max(1) == 0 || step + 1 == steps {
            println!("{}", report.log_line());
        }
    }

    let refined_positions = pair.0.predict_positions_local(&volumes)?;
    let refined = coarse.with_vertices(refined_positions)?;
    io::write_mesh(&refined, &dir.join("refined.obj"))?;
    io::write_predictor(&pair.0, &dir.join("local_a.ckpt"))?;
    io::write_predictor(&pair.1, &dir.join("local_b.ckpt"))?;
    println!("wrote refined.obj / local_[ab].ckpt");
    Ok(())
}

fn cmd_eval(cfg: &Config) -> anyhow::Result<()> {
    let dir = run_dir(cfg);
    let sdir = scene_dir(cfg);
    let mesh_name = cfg.str_or("eval.mesh", "hull.obj");
    let mesh = io::read_mesh(&dir.join(mesh_name))
        .with_context(|| format!("reading {mesh_name} (is the producing stage done?)"))?;
    let mut scan = io::read_scan(&sdir.join("scan.ply"))?;
    let labels_path = sdir.join("scan_labels.txt");
    if labels_path.exists() {
        scan.labels = Some(io::read_regions(&labels_path)?);
    }
    let report = compute_metrics(&scan, &mesh, None)?;
    let out = dir.join(cfg.str_or("eval.report", "report.txt"));
    fs::write(&out, report.to_text())?;
    print!("{}", report.to_text());
    println!("# report written to {}", out.display());
    Ok(())
}
