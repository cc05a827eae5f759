//! Experiment configuration: a TOML document mirroring the scheduler's run
//! configuration plus output, analysis, sweep, and bound-validation
//! sections. Unknown keys are rejected so a typo fails loudly instead of
//! silently falling back to a default.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use safa_core::diffusion::{Covariance, DenoiserSpec, DiffusionSchedule, SamplerKind, ScoreBound};
use safa_core::grid::build_layout;
use safa_core::scheduler::{MergeMode, RunConfig};
use safa_core::swap::MaskOrientation;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed for every derived noise stream; mandatory so no run is
    /// accidentally irreproducible.
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub canvas: CanvasSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub denoisers: DenoiserSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub bounds: Option<BoundsSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanvasSection {
    pub channels: usize,
    pub height: usize,
    pub total_width: usize,
    pub subview_width: usize,
    pub overlap_rate: f64,
    pub circular: bool,
}

impl Default for CanvasSection {
    fn default() -> Self {
        Self {
            channels: 4,
            height: 32,
            total_width: 400,
            subview_width: 80,
            overlap_rate: 0.2,
            circular: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: ModeName,
    pub steps: usize,
    pub sampler: SamplerName,
    pub r_guide: f64,
    pub swap_interval: usize,
    pub orientation: OrientationName,
    pub score_bound: Option<f64>,
    pub snapshot_stride: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: ModeName::Safa,
            steps: 200,
            sampler: SamplerName::Ddim,
            r_guide: 0.3,
            swap_interval: 1,
            orientation: OrientationName::Column,
            score_bound: None,
            snapshot_stride: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Md,
    Mdstar,
    Safastar,
    Safa,
}

impl ModeName {
    pub fn to_mode(self) -> MergeMode {
        match self {
            ModeName::Md => MergeMode::Md,
            ModeName::Mdstar => MergeMode::MdStar,
            ModeName::Safastar => MergeMode::SaFaStar,
            ModeName::Safa => MergeMode::SaFa,
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "md" => Ok(ModeName::Md),
            "mdstar" => Ok(ModeName::Mdstar),
            "safastar" => Ok(ModeName::Safastar),
            "safa" => Ok(ModeName::Safa),
            other => Err(CliError::Config(format!(
                "unknown mode {other:?}; expected md, mdstar, safastar, or safa"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModeName::Md => "md",
            ModeName::Mdstar => "mdstar",
            ModeName::Safastar => "safastar",
            ModeName::Safa => "safa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerName {
    Ddim,
    Em,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrientationName {
    Column,
    Row,
}

/// Clean-data model shared by all subviews; each subview `i` runs it under
/// condition `i + 1` and the reference trajectory under condition `0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub kind: DenoiserKindName,
    /// Band-texture preset: frequency profile of the per-condition target.
    pub profile: ProfileName,
    /// Band-texture preset: seed of the shared target fields.
    pub target_seed: u64,
    /// Gaussian preset: base mean and its per-condition shift.
    pub mean: f64,
    pub condition_shift: f64,
    /// Gaussian preset: marginal variance of the clean data.
    pub var: f64,
    /// Gaussian preset: `> 0` switches to the column-smoothed covariance
    /// with this nugget.
    pub smoothing_nugget: f64,
    /// Mixture preset: mode levels at `{-levels, .., -1, 1, .., levels}`.
    pub levels: usize,
    /// Mixture preset: within-mode variance.
    pub level_var: f64,
    /// Recorded guidance strength; the analytic scores are exact, so this
    /// is carried into artifacts without entering the math.
    pub guidance_scale: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            kind: DenoiserKindName::BandTexture,
            profile: ProfileName::Spectrum,
            target_seed: 7,
            mean: 0.0,
            condition_shift: 0.5,
            var: 1.0,
            smoothing_nugget: 0.0,
            levels: 4,
            level_var: 0.1,
            guidance_scale: safa_core::diffusion::DEFAULT_GUIDANCE_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKindName {
    BandTexture,
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Spectrum,
    Image,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub enabled: bool,
    pub bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { enabled: true, bins: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: String,
    pub grid: Vec<toml::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub t2: f64,
    pub t1: f64,
    pub score_cap: f64,
    pub deltas: Vec<f64>,
    pub pairings: Vec<PairingName>,
    pub trials: usize,
    pub sim_steps: usize,
    /// With a mask the swapped-start corollary is validated instead of the
    /// plain proposition.
    pub masked: bool,
    pub swap_interval: usize,
    pub orientation: OrientationName,
    /// Clean-data Gaussian behind the simulated score.
    pub mean: f64,
    pub var: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            channels: 1,
            height: 8,
            width: 8,
            t2: 0.6,
            t1: 0.1,
            score_cap: 5.0,
            deltas: vec![0.1, 0.01],
            pairings: vec![PairingName::Shared, PairingName::Independent],
            trials: 10_000,
            sim_steps: safa_core::bounds::VALIDATION_STEPS,
            masked: false,
            swap_interval: 1,
            orientation: OrientationName::Column,
            mean: 0.0,
            var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingName {
    Shared,
    Independent,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Shrinks the canvas and schedule to a seconds-scale profile.
    pub fn apply_fast_profile(&mut self) {
        self.canvas.channels = 4;
        self.canvas.height = 16;
        self.canvas.total_width = 160;
        self.canvas.subview_width = 40;
        self.canvas.overlap_rate = 0.25;
        self.run.steps = 50;
    }

    pub fn orientation(&self) -> MaskOrientation {
        match self.run.orientation {
            OrientationName::Column => MaskOrientation::ColumnAlternating,
            OrientationName::Row => MaskOrientation::RowAlternating,
        }
    }

    /// Assembles the scheduler input; every rejected value is a config
    /// error, not a runtime one.
    pub fn build_run_config(&self) -> Result<RunConfig, CliError> {
        let c = &self.canvas;
        let layout = build_layout(c.total_width, c.subview_width, c.overlap_rate, c.circular)
            .map_err(|e| CliError::Config(format!("invalid canvas geometry: {e}")))?;
        let sampler = match self.run.sampler {
            SamplerName::Ddim => SamplerKind::Ddim,
            SamplerName::Em => SamplerKind::EulerMaruyama,
        };
        let schedule = DiffusionSchedule::standard(self.run.steps, sampler)
            .map_err(|e| CliError::Config(format!("invalid schedule: {e}")))?;
        let denoisers = (0..layout.count)
            .map(|i| self.build_denoiser(i as i64 + 1))
            .collect::<Result<Vec<_>, _>>()?;
        let mode = self.run.mode.to_mode();
        let reference =
            if mode == MergeMode::SaFa { Some(self.build_denoiser(0)?) } else { None };
        let score_bound = self
            .run
            .score_bound
            .map(|c| {
                ScoreBound::new(c)
                    .map_err(|e| CliError::Config(format!("invalid score bound: {e}")))
            })
            .transpose()?;
        Ok(RunConfig {
            layout,
            schedule,
            channels: c.channels,
            height: c.height,
            denoisers,
            reference,
            mode,
            r_guide: self.run.r_guide,
            swap_interval: self.run.swap_interval,
            orientation: self.orientation(),
            score_bound,
            master_seed: self.master_seed,
            snapshot_stride: self.run.snapshot_stride,
        })
    }

    fn build_denoiser(&self, condition: i64) -> Result<DenoiserSpec, CliError> {
        let d = &self.denoisers;
        let spec = match d.kind {
            DenoiserKindName::BandTexture => {
                let profile = match d.profile {
                    ProfileName::Spectrum => safa_core::diffusion::BandProfile::spectrum_like(),
                    ProfileName::Image => safa_core::diffusion::BandProfile::image_like(),
                };
                DenoiserSpec::band_texture(
                    &profile,
                    condition,
                    d.guidance_scale,
                    self.canvas.channels,
                    self.canvas.height,
                    self.canvas.subview_width,
                    d.target_seed,
                )
            }
            DenoiserKindName::Gaussian => {
                let covariance = if d.smoothing_nugget > 0.0 {
                    Covariance::ColumnSmoothed { var: d.var, nugget: d.smoothing_nugget }
                } else {
                    Covariance::Isotropic { var: d.var }
                };
                DenoiserSpec::gaussian(
                    d.mean,
                    d.condition_shift,
                    covariance,
                    condition,
                    d.guidance_scale,
                )
            }
            DenoiserKindName::Mixture => {
                if d.levels == 0 {
                    return Err(CliError::Config("mixture needs at least one level".into()));
                }
                let mut means = Vec::with_capacity(2 * d.levels);
                for m in (1..=d.levels).rev() {
                    means.push(-(m as f64));
                }
                for m in 1..=d.levels {
                    means.push(m as f64);
                }
                DenoiserSpec::gmm(vec![1.0; 2 * d.levels], means, d.level_var, 0.0, condition, d.guidance_scale)
            }
        };
        spec.map_err(|e| CliError::Config(format!("invalid denoiser: {e}")))
    }
}
