use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use osmscan::eval::{compare_with_results, run_experiment, ExperimentConfig, Strategy};
use osmscan::osm_prior::{build_prior, load_dem, parse_osm, GeoOrigin, PriorConfig};
use osmscan::scene_sim::{builtin_scene, scene_to_osm, write_trajectory, BUILTIN_SCENES};

#[derive(Parser)]
#[command(
    name = "osmscan",
    version,
    about = "OSM-guided adaptive scanning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment.
    Run(RunArgs),
    /// Run several strategies on the same scene and tabulate their APE.
    Compare(CompareArgs),
    /// Build the prior point cloud from an OSM file and a terrain grid.
    BuildPrior(BuildPriorArgs),
    /// Write a builtin scene, its trajectory, OSM map and terrain to disk.
    GenScene(GenSceneArgs),
}

#[derive(Args)]
struct Overrides {
    /// Experiment config (TOML); relative paths resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin scene name.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of footprints removed from the prior.
    #[arg(long)]
    osm_dropout: Option<f64>,
    /// Limit the number of frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// static | constant:<omega> | adaptive
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated strategies.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "static,constant:3,constant:9,adaptive"
    )]
    strategies: Vec<Strategy>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BuildPriorArgs {
    #[arg(long)]
    osm: PathBuf,
    #[arg(long)]
    dem: PathBuf,
    /// Projection origin as `lat,lon`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    origin: Option<Vec<f64>>,
    #[arg(long, default_value_t = PriorConfig::default().facade_spacing)]
    facade_spacing: f64,
    #[arg(long, default_value_t = PriorConfig::default().ground_spacing)]
    ground_spacing: f64,
    #[arg(long, default_value = "prior.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long, default_value = "campus")]
    scene: String,
    #[arg(long, default_value_t = 0.0)]
    osm_dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "scene")]
    out: PathBuf,
}

fn load_config(common: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg: ExperimentConfig =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [
                &mut cfg.scene_file,
                &mut cfg.trajectory_file,
                &mut cfg.osm_file,
                &mut cfg.dem_file,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &common.scene {
        cfg.scene = s.clone();
        cfg.scene_file = None;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = common.osm_dropout {
        cfg.osm_dropout = d;
    }
    if let Some(n) = common.frames {
        cfg.max_frames = Some(n);
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    let result = run_experiment(&cfg)?;
    result.write_outputs(&args.out)?;
    let r = &result.report_corrected;
    println!(
        "{}: {} frames, mean APE {:.3} m, RMSE x/y/z {:.3}/{:.3}/{:.3} m (raw odometry {:.3} m)",
        cfg.strategy,
        r.len(),
        r.mean_ape,
        r.rmse.x,
        r.rmse.y,
        r.rmse.z,
        result.report_estimated.mean_ape
    );
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let base = load_config(&args.common)?;
    if args.strategies.is_empty() {
        bail!("no strategies given");
    }
    let cfgs: Vec<ExperimentConfig> = args
        .strategies
        .iter()
        .map(|&s| ExperimentConfig {
            strategy: s,
            ..base.clone()
        })
        .collect();
    let (cmp, results) = compare_with_results(&cfgs)?;
    for (r, s) in results.iter().zip(&args.strategies) {
        r.write_outputs(&args.out.join(s.to_string().replace(':', "_")))?;
    }
    let mut f = BufWriter::new(File::create(args.out.join("comparison.csv"))?);
    cmp.write_csv(&mut f)?;
    f.flush()?;
    print!("{}", cmp.table());
    Ok(())
}

fn build_prior_cmd(args: BuildPriorArgs) -> Result<()> {
    let origin = match args.origin.as_deref() {
        Some([lat, lon]) => GeoOrigin {
            lat: *lat,
            lon: *lon,
        },
        _ => GeoOrigin::default(),
    };
    let osm = fs::read(&args.osm).with_context(|| format!("reading {}", args.osm.display()))?;
    let parsed = parse_osm(&osm, &origin)?;
    let dem =
        load_dem(&fs::read(&args.dem).with_context(|| format!("reading {}", args.dem.display()))?)?;
    let prior = build_prior(
        &parsed.footprints,
        &dem,
        args.facade_spacing,
        args.ground_spacing,
    )?;
    let mut f = BufWriter::new(File::create(&args.out)?);
    prior.write_text(&mut f)?;
    f.flush()?;
    println!(
        "{} footprints ({} ways skipped), {} prior points -> {}",
        parsed.footprints.len(),
        parsed.skipped.total(),
        prior.len(),
        args.out.display()
    );
    Ok(())
}

fn gen_scene(args: GenSceneArgs) -> Result<()> {
    if !BUILTIN_SCENES.contains(&args.scene.as_str()) {
        bail!(
            "unknown scene `{}` (expected one of {})",
            args.scene,
            BUILTIN_SCENES.join(", ")
        );
    }
    let b = builtin_scene(&args.scene)?;
    let origin = GeoOrigin::default();
    fs::create_dir_all(&args.out)?;
    let mut f = BufWriter::new(File::create(args.out.join("scene.txt"))?);
    b.scene.write_text(&mut f)?;
    f.flush()?;
    let mut f = BufWriter::new(File::create(args.out.join("trajectory.txt"))?);
    write_trajectory(&b.trajectory, &mut f)?;
    f.flush()?;
    fs::write(
        args.out.join("map.osm"),
        scene_to_osm(&b.scene, args.osm_dropout, args.seed, &origin)?,
    )?;
    fs::write(args.out.join("dem.asc"), b.dem.to_ascii_grid())?;
    let cfg = ExperimentConfig {
        scene: args.scene.clone(),
        scene_file: Some("scene.txt".into()),
        trajectory_file: Some("trajectory.txt".into()),
        osm_file: Some("map.osm".into()),
        dem_file: Some("dem.asc".into()),
        origin,
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    fs::write(args.out.join("experiment.toml"), toml::to_string(&cfg)?)?;
    println!(
        "{}: {} triangles, {} footprints, {} poses -> {}",
        args.scene,
        b.scene.triangles().len(),
        b.scene.footprints().len(),
        b.trajectory.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::BuildPrior(a) => build_prior_cmd(a),
        Command::GenScene(a) => gen_scene(a),
    }
}
