use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stemseg::eval::{
    classify_complexity, det_centerline, generate_scene, match_lines, match_polygons, rect_ring,
    ref_centerline, synth_training_data, LineMatchParams, Segment, SynthSceneSpec,
};
use stemseg::geometry::Ring;
use stemseg::pipeline::{
    export_geojson, export_polygons, read_geojson_polygons, rect_from_corners, run, write_trace_csv,
    PipelineConfig,
};
use stemseg::priors::{train_priors, write_pairs_csv, write_shapes_csv, Priors};
use stemseg::raster_io::{load_raster, save_raster};

#[derive(Parser)]
#[command(name = "stemseg", version, about = "Fallen stem instance segmentation from probability rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect stems in a probability raster and write them as GeoJSON.
    Segment {
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the annealing trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fit the shape and collinearity priors from labeled CSV files.
    TrainPriors {
        #[arg(long)]
        shapes: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against reference polygons.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        det: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic scene with known ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_raster: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
        /// Also write prior training data drawn from the scene distribution.
        #[arg(long)]
        out_shapes: Option<PathBuf>,
        #[arg(long)]
        out_pairs: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Poly,
    Line,
}

/// Failure while reading or validating inputs (exit code 2).
#[derive(Debug)]
struct InputError(anyhow::Error);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input<T, E>(r: std::result::Result<T, E>, what: &Path) -> Result<T>
where
    E: Into<anyhow::Error>,
{
    r.map_err(|e| InputError(e.into().context(format!("reading {}", what.display()))).into())
}

fn segment(
    raster: &Path,
    priors: &Path,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    trace: Option<&Path>,
) -> Result<()> {
    let raster_data = input(load_raster(raster), raster)?;
    let priors_data = input(Priors::load(priors), priors)?;
    let mut cfg = input(PipelineConfig::load(config), config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.energy.merge_threshold = priors_data.merge_threshold;
    cfg.anneal.record_trace = trace.is_some();
    input(cfg.validate(raster_data.gsd), config)?;
    let output = run(&raster_data, &priors_data, &cfg)?;
    log::info!(
        "{} detections from {} regions",
        output.detections.len(),
        output.regions
    );
    export_geojson(&output.detections, out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(t) = trace {
        write_trace_csv(&output.trace, t).with_context(|| format!("writing {}", t.display()))?;
    }
    Ok(())
}

fn det_segment(ring: &Ring) -> Segment {
    if ring.len() == 4 {
        det_centerline(&rect_from_corners(&ring.vertices))
    } else {
        ref_centerline(ring)
    }
}

fn evaluate(reference: &Path, det: &Path, mode: EvalMode, report: &Path) -> Result<()> {
    let refs = input(read_geojson_polygons(reference), reference)?;
    let dets = input(read_geojson_polygons(det), det)?;
    let json = match mode {
        EvalMode::Poly => serde_json::to_string_pretty(&match_polygons(&refs, &dets))?,
        EvalMode::Line => {
            let complex = classify_complexity(&refs);
            let r: Vec<Segment> = refs.iter().map(ref_centerline).collect();
            let d: Vec<Segment> = dets.iter().map(det_segment).collect();
            serde_json::to_string_pretty(&match_lines(&r, &complex, &d, &LineMatchParams::default()))?
        }
    };
    std::fs::write(report, json + "\n").with_context(|| format!("writing {}", report.display()))?;
    Ok(())
}

fn synth(
    spec: &Path,
    out_raster: &Path,
    out_truth: &Path,
    out_shapes: Option<&Path>,
    out_pairs: Option<&Path>,
) -> Result<()> {
    let text = input(std::fs::read_to_string(spec), spec)?;
    let spec_data: SynthSceneSpec = input(serde_json::from_str(&text), spec)?;
    if !(spec_data.p_out < spec_data.p_in) || spec_data.width == 0 || spec_data.height == 0 || !(spec_data.gsd > 0.0)
    {
        return Err(InputError(anyhow::anyhow!("inconsistent scene spec {}", spec.display())).into());
    }
    let scene = generate_scene(&spec_data);
    save_raster(&scene.raster, out_raster)?;
    let truth: Vec<Ring> = scene.truth.iter().map(rect_ring).collect();
    export_polygons(&truth, out_truth)?;
    if out_shapes.is_some() || out_pairs.is_some() {
        let (shapes, pairs) = synth_training_data(&spec_data, 500, 1000, spec_data.seed.wrapping_add(1));
        if let Some(p) = out_shapes {
            write_shapes_csv(p, &shapes)?;
        }
        if let Some(p) = out_pairs {
            write_pairs_csv(p, &pairs)?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment {
            raster,
            priors,
            config,
            out,
            seed,
            workers,
            trace,
        } => segment(&raster, &priors, &config, &out, seed, workers, trace.as_deref()),
        Command::TrainPriors { shapes, pairs, out } => {
            let priors = input(train_priors(&shapes, &pairs), &shapes)?;
            priors.save(&out).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::Eval {
            reference,
            det,
            mode,
            report,
        } => evaluate(&reference, &det, mode, &report),
        Command::Synth {
            spec,
            out_raster,
            out_truth,
            out_shapes,
            out_pairs,
        } => synth(&spec, &out_raster, &out_truth, out_shapes.as_deref(), out_pairs.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
