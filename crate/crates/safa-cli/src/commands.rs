//! Command implementations and artifact writers. Generation, sweeping, and
//! analysis funnel through one metrics code path so a re-analysis of a
//! saved canvas reproduces the generating run's numbers bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use safa_core::analysis::{
    cross_view_distance, hf_suppression_index, relative_log_amplitude_with_bins, seam_energy,
    SpectrumCurve,
};
use safa_core::bounds::{
    clopper_pearson, monte_carlo_validate_multi_scaled, BoundInputs, BoundReport, NoisePairing,
    write_bound_report_csv,
};
use safa_core::diffusion::{Covariance, DenoiserSpec, DiffusionSchedule, SamplerKind, ScoreBound};
use safa_core::grid::{build_layout, LatentMap, RegionKind, RegionRange, SubviewLayout};
use safa_core::io::{load_tensor, save_tensor, write_pgm};
use safa_core::scheduler::joint_generate;
use safa_core::swap::{make_swap_mask, MaskOrientation};

use crate::config::{ExperimentConfig, ModeName, OrientationName, PairingName, SweepSection};
use crate::{AnalyzeArgs, CliError, GenerateArgs, SweepArgs, ValidateArgs};

/// Minimum region width the spectrum estimator accepts; narrower regions
/// are skipped rather than failing the whole run.
const MIN_SPECTRUM_WIDTH: usize = 8;

#[derive(Serialize)]
struct Manifest {
    version: &'static str,
    command: String,
    /// Hash of the effective configuration after flag overrides, so a run
    /// can be replayed by checking the replaying config against it.
    config_sha256: String,
    master_seed: u64,
    overrides: Vec<String>,
    artifacts: Vec<String>,
}

/// Effective sweep parameters, hashed alongside the base configuration.
#[derive(Serialize)]
struct SweepHashInput<'a> {
    parameter: &'a str,
    values: &'a [String],
    config: &'a ExperimentConfig,
}

/// Effective validation parameters, hashed alongside the configuration.
#[derive(Serialize)]
struct ValidateHashInput<'a> {
    debug_bound_scale: f64,
    config: &'a ExperimentConfig,
    bounds: &'a crate::config::BoundsSection,
}

/// The analyze command has no config file; its flags are the
/// configuration.
#[derive(Serialize)]
struct AnalyzeHashInput {
    input: String,
    subview_width: usize,
    overlap_rate: f64,
    circular: bool,
    bins: usize,
}

fn config_hash<T: Serialize>(value: &T) -> Result<String, CliError> {
    let text = toml::to_string(value)
        .map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    hash: String,
    master_seed: u64,
    overrides: &[String],
    artifacts: &[String],
) -> Result<(), CliError> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config_sha256: hash,
        master_seed,
        overrides: overrides.to_vec(),
        artifacts: artifacts.to_vec(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| CliError::Config(format!("cannot serialize manifest: {e}")))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Region-mean spectrum curves plus scalar diagnostics for one canvas.
/// Regions narrower than the estimator's minimum are omitted, not errors;
/// a canvas whose full-width spectrum is degenerate still fails.
fn write_canvas_metrics(
    canvas: &LatentMap,
    layout: &SubviewLayout,
    bins: usize,
    dir: &Path,
) -> Result<(String, String), CliError> {
    let first = canvas.data().first().copied().unwrap_or(0.0);
    if canvas.data().iter().all(|v| *v == first) {
        return Err(CliError::Runtime(safa_core::error::Error::DegenerateInput(
            "constant canvas has no structure to analyze".into(),
        )));
    }
    let v = layout.overlap_width();
    let w = layout.subview_width;
    let full = relative_log_amplitude_with_bins(canvas, None, bins)?;
    let mean_curve = |ranges: Vec<(usize, usize)>| -> Result<Option<Vec<f64>>, CliError> {
        let usable: Vec<_> = ranges
            .into_iter()
            .filter(|(s, e)| e - s >= MIN_SPECTRUM_WIDTH)
            .collect();
        if usable.is_empty() {
            return Ok(None);
        }
        let mut acc = vec![0.0f64; bins];
        for (start, end) in &usable {
            let region = RegionRange { kind: RegionKind::Mid, start: *start, end: *end };
            let curve = relative_log_amplitude_with_bins(canvas, Some(region), bins)?;
            for (a, val) in acc.iter_mut().zip(&curve.values) {
                *a += val / usable.len() as f64;
            }
        }
        Ok(Some(acc))
    };
    let overlap = mean_curve(
        (0..layout.pair_count())
            .map(|p| {
                let s = layout.overlap_start(p);
                (s, s + v)
            })
            .collect(),
    )?;
    let interior = if 2 * v <= w {
        mean_curve(
            (0..layout.count)
                .map(|i| {
                    let s = layout.column_of(i, v);
                    (s, s + (w - 2 * v))
                })
                .collect(),
        )?
    } else {
        None
    };

    let spectrum_name = "spectrum_regions.csv".to_string();
    let mut spectrum = String::from("region,bin,value\n");
    let push_curve = |region: &str, values: &[f64], out: &mut String| {
        for (b, val) in values.iter().enumerate() {
            out.push_str(&format!("{region},{b},{val}\n"));
        }
    };
    push_curve("full", &full.values, &mut spectrum);
    if let Some(values) = &overlap {
        push_curve("overlap", values, &mut spectrum);
    }
    if let Some(values) = &interior {
        push_curve("interior", values, &mut spectrum);
    }
    fs::write(dir.join(&spectrum_name), spectrum)?;

    let metrics_name = "metrics.csv".to_string();
    let mut metrics = String::from("metric,value\n");
    metrics.push_str(&format!("seam_energy,{}\n", seam_energy(canvas, layout)?));
    if layout.count >= 2 {
        metrics.push_str(&format!(
            "cross_view_distance,{}\n",
            cross_view_distance(canvas, layout)?
        ));
    }
    if let (Some(over), Some(inter)) = (&overlap, &interior) {
        let index = hf_suppression_index(
            &SpectrumCurve { values: over.clone() },
            &SpectrumCurve { values: inter.clone() },
        )?;
        metrics.push_str(&format!("hf_suppression_index,{index}\n"));
    }
    fs::write(dir.join(&metrics_name), metrics)?;
    Ok((metrics_name, spectrum_name))
}

/// Shared by `generate` and each sweep grid point.
fn run_generation(
    config: &ExperimentConfig,
    dir: &Path,
    command: &str,
    overrides: &[String],
) -> Result<Vec<String>, CliError> {
    ensure_dir(dir)?;
    let run_config = config.build_run_config()?;
    let (canvas, log) = joint_generate(&run_config)?;
    let mut artifacts = vec!["canvas.safa".to_string(), "trajectory.csv".to_string()];
    save_tensor(&canvas, dir.join("canvas.safa"))?;
    log.write_csv(&dir.join("trajectory.csv"))?;
    for ch in 0..canvas.channels() {
        let name = format!("canvas_c{ch}.pgm");
        let file = fs::File::create(dir.join(&name))?;
        write_pgm(&canvas, ch, file)?;
        artifacts.push(name);
    }
    if config.analysis.enabled {
        let (metrics, spectrum) =
            write_canvas_metrics(&canvas, &run_config.layout, config.analysis.bins, dir)?;
        artifacts.push(metrics);
        artifacts.push(spectrum);
    }
    artifacts.push("manifest.toml".to_string());
    write_manifest(
        dir,
        command,
        config_hash(config)?,
        config.master_seed,
        overrides,
        &artifacts,
    )?;
    Ok(artifacts)
}

fn load_effective(
    path: &Path,
    fast: bool,
    seed: Option<u64>,
    mode: Option<ModeName>,
    snapshots: Option<usize>,
) -> Result<(ExperimentConfig, Vec<String>), CliError> {
    let mut config = ExperimentConfig::load(path)?;
    let mut overrides = Vec::new();
    if fast {
        config.apply_fast_profile();
        overrides.push("fast".to_string());
    }
    if let Some(seed) = seed {
        config.master_seed = seed;
        overrides.push("seed".to_string());
    }
    if let Some(mode) = mode {
        config.run.mode = mode;
        overrides.push("mode".to_string());
    }
    if let Some(stride) = snapshots {
        config.run.snapshot_stride = if stride == 0 { None } else { Some(stride) };
        overrides.push("snapshots".to_string());
    }
    Ok((config, overrides))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32, CliError> {
    let (config, overrides) =
        load_effective(&args.config, args.fast, args.seed, args.mode, args.snapshots)?;
    let dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/generate"));
    run_generation(&config, &dir, "generate", &overrides)?;
    println!("wrote {}", dir.display());
    Ok(0)
}

/// Grid values arrive as text from the flag or as TOML scalars from the
/// config; both are normalized to text and parsed per parameter.
fn grid_values(section: &SweepSection) -> Result<Vec<String>, CliError> {
    section
        .grid
        .iter()
        .map(|value| match value {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            other => Err(CliError::Config(format!("unsupported grid value {other}"))),
        })
        .collect()
}

fn apply_parameter(
    config: &mut ExperimentConfig,
    parameter: &str,
    value: &str,
) -> Result<(), CliError> {
    let parse_f64 = |v: &str| -> Result<f64, CliError> {
        v.parse::<f64>()
            .map_err(|_| CliError::Config(format!("grid value {v:?} is not a number")))
    };
    match parameter {
        "r_guide" => config.run.r_guide = parse_f64(value)?,
        "w" => {
            config.run.swap_interval = value
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("grid value {value:?} is not an integer")))?
        }
        "overlap_rate" => config.canvas.overlap_rate = parse_f64(value)?,
        "mode" => config.run.mode = ModeName::parse(value)?,
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep parameter {other:?}; expected r_guide, w, overlap_rate, or mode"
            )))
        }
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32, CliError> {
    let (config, overrides) =
        load_effective(&args.config, args.fast, args.seed, args.mode, None)?;
    let section = match (&args.parameter, &args.grid) {
        (Some(parameter), Some(grid)) => SweepSection {
            parameter: parameter.clone(),
            grid: grid.split(',').map(|v| toml::Value::String(v.trim().to_string())).collect(),
        },
        (None, None) => config.sweep.clone().ok_or_else(|| {
            CliError::Config("sweep needs --parameter/--grid or a [sweep] section".into())
        })?,
        _ => {
            return Err(CliError::Config(
                "--parameter and --grid must be given together".into(),
            ))
        }
    };
    let values = grid_values(&section)?;
    if values.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/sweep"));
    ensure_dir(&dir)?;

    let mut aggregate =
        String::from("parameter,value,seam_energy,cross_view_distance,hf_suppression_index\n");
    for (idx, value) in values.iter().enumerate() {
        let mut point = config.clone();
        apply_parameter(&mut point, &section.parameter, value)?;
        let sub = dir.join(format!("point_{idx:02}_{}_{}", section.parameter, value));
        run_generation(&point, &sub, "sweep", &overrides)?;
        let metrics = fs::read_to_string(sub.join("metrics.csv")).unwrap_or_default();
        let field = |name: &str| -> String {
            metrics
                .lines()
                .find_map(|line| line.strip_prefix(&format!("{name},")))
                .unwrap_or("")
                .to_string()
        };
        aggregate.push_str(&format!(
            "{},{},{},{},{}\n",
            section.parameter,
            value,
            field("seam_energy"),
            field("cross_view_distance"),
            field("hf_suppression_index"),
        ));
    }
    fs::write(dir.join("sweep.csv"), aggregate)?;
    let hash = config_hash(&SweepHashInput {
        parameter: &section.parameter,
        values: &values,
        config: &config,
    })?;
    write_manifest(&dir, "sweep", hash, config.master_seed, &overrides, &["sweep.csv".to_string()])?;
    println!("wrote {}", dir.display());
    Ok(0)
}

pub fn cmd_validate_bounds(args: &ValidateArgs) -> Result<i32, CliError> {
    let (config, overrides) = load_effective(&args.config, false, args.seed, None, None)?;
    let section = config.bounds.clone().unwrap_or_default();
    let dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/bounds"));
    ensure_dir(&dir)?;

    let shape = (section.channels, section.height, section.width);
    let mask = if section.masked {
        let orientation = match section.orientation {
            OrientationName::Column => MaskOrientation::ColumnAlternating,
            OrientationName::Row => MaskOrientation::RowAlternating,
        };
        Some(
            make_swap_mask(section.height, section.width, section.swap_interval, orientation)
                .map_err(|e| CliError::Config(format!("invalid bounds mask: {e}")))?,
        )
    } else {
        None
    };
    let seed = config.master_seed;
    let inputs = BoundInputs::new(
        LatentMap::standard_normal(shape.0, shape.1, shape.2, seed.wrapping_add(1)),
        LatentMap::standard_normal(shape.0, shape.1, shape.2, seed.wrapping_add(2)),
        LatentMap::standard_normal(shape.0, shape.1, shape.2, seed.wrapping_add(3)),
        section.t2,
        section.t1,
        ScoreBound::new(section.score_cap)
            .map_err(|e| CliError::Config(format!("invalid score cap: {e}")))?,
        *section.deltas.first().unwrap_or(&0.1),
        DiffusionSchedule::standard(200, SamplerKind::EulerMaruyama)
            .map_err(|e| CliError::Config(format!("invalid schedule: {e}")))?,
        mask,
    )
    .map_err(|e| CliError::Config(format!("invalid bound inputs: {e}")))?;
    let denoiser = DenoiserSpec::gaussian(
        section.mean,
        0.0,
        Covariance::Isotropic { var: section.var },
        0,
        safa_core::diffusion::DEFAULT_GUIDANCE_SCALE,
    )
    .map_err(|e| CliError::Config(format!("invalid bounds denoiser: {e}")))?;

    let mut rows = Vec::new();
    let mut exceeded = false;
    for (idx, pairing_name) in section.pairings.iter().enumerate() {
        let pairing = match pairing_name {
            PairingName::Shared => NoisePairing::Shared,
            PairingName::Independent => NoisePairing::Independent,
        };
        let outcomes = monte_carlo_validate_multi_scaled(
            &inputs,
            &denoiser,
            section.trials,
            pairing,
            section.sim_steps,
            seed.wrapping_add(10 + idx as u64),
            &section.deltas,
            args.debug_bound_scale,
        )?;
        for outcome in outcomes {
            let (lower, _) = clopper_pearson(outcome.violations, outcome.trials, 0.99)?;
            if lower > outcome.delta {
                exceeded = true;
            }
            rows.push(BoundReport::new(&inputs, pairing, &outcome));
        }
    }
    write_bound_report_csv(&rows, &dir.join("bound_report.csv"))?;
    let hash = config_hash(&ValidateHashInput {
        debug_bound_scale: args.debug_bound_scale,
        config: &config,
        bounds: &section,
    })?;
    write_manifest(&dir, "validate-bounds", hash, seed, &overrides, &["bound_report.csv".to_string()])?;
    if exceeded {
        eprintln!("bound exceeded: violation rate above delta at 99% confidence");
        return Ok(3);
    }
    println!("wrote {}", dir.display());
    Ok(0)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32, CliError> {
    let canvas = load_tensor(&args.input)?;
    let layout =
        build_layout(canvas.width(), args.subview_width, args.overlap_rate, args.circular)
            .map_err(|e| CliError::Config(format!("invalid layout for canvas: {e}")))?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("runs/analyze"));
    ensure_dir(&dir)?;
    let (metrics, spectrum) = write_canvas_metrics(&canvas, &layout, args.bins, &dir)?;
    let artifacts = vec![metrics, spectrum, "manifest.toml".to_string()];
    let hash = config_hash(&AnalyzeHashInput {
        input: args.input.display().to_string(),
        subview_width: args.subview_width,
        overlap_rate: args.overlap_rate,
        circular: args.circular,
        bins: args.bins,
    })?;
    write_manifest(&dir, "analyze", hash, 0, &[], &artifacts)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "wrote {}", dir.display());
    Ok(0)
}
