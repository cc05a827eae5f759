//! Joint denoising over a tiled canvas.
//!
//! Each step extracts every subview from the current canvas, denoises them
//! independently (this stage parallelizes), then reconciles overlaps: either
//! by weighted averaging (`Md`, `MdStar`) or by hard latent swap
//! (`SaFaStar`, `SaFa`). `SaFa` additionally swaps reference content into
//! non-overlap regions during the early guided steps; the reference
//! trajectory denoises alone and is never written back from the canvas.

use crate::diffusion::{
    denoise_one_step, em_reverse_step, DenoiserKind, DenoiserSpec, DiffusionSchedule,
    SamplerKind, ScoreBound,
};
use crate::error::{Error, Result};
use crate::grid::{extract_subview, region_ranges, LatentMap, SubviewLayout};
use crate::seed::derive_seed;
use crate::swap::{make_swap_mask, reference_guided_merge, swap_merge, MaskOrientation, SwapMask};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

const TAG_INIT_COLUMN: u64 = 0x4a_43;
const TAG_REFERENCE_INIT: u64 = 0x52_49;
const TAG_STEP_NOISE: u64 = 0x53_4e;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Uniform averaging over all subviews covering a column.
    Md,
    /// Triangular-window averaging (linear crossfade in two-way overlaps).
    MdStar,
    /// Self-loop latent swap on overlaps only.
    SaFaStar,
    /// Self-loop swap plus reference-guided swap on non-overlap regions.
    SaFa,
}

impl MergeMode {
    pub fn is_swap(self) -> bool {
        matches!(self, MergeMode::SaFaStar | MergeMode::SaFa)
    }
}

/// Number of leading steps (t counted down from T) in which the reference
/// guard fires. Rounds up so any positive rate guides at least once.
pub fn guided_steps(r_guide: f64, steps: usize) -> usize {
    if r_guide <= 0.0 {
        return 0;
    }
    let raw = (r_guide * steps as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, steps)
}

/// Full description of one joint-diffusion run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub layout: SubviewLayout,
    pub schedule: DiffusionSchedule,
    pub channels: usize,
    pub height: usize,
    /// One denoiser per subview, index-aligned with the layout.
    pub denoisers: Vec<DenoiserSpec>,
    /// Reference-view denoiser; required by [`MergeMode::SaFa`].
    pub reference: Option<DenoiserSpec>,
    pub mode: MergeMode,
    pub r_guide: f64,
    pub swap_interval: usize,
    pub orientation: MaskOrientation,
    /// Applied to scores in the SDE sampler; the DDIM path is exact and
    /// never clips.
    pub score_bound: Option<ScoreBound>,
    pub master_seed: u64,
    /// Record the canvas every this many steps (plus the initial state).
    pub snapshot_stride: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 {
            return Err(Error::Config("canvas needs at least one channel and row".into()));
        }
        if self.denoisers.len() != self.layout.count {
            return Err(Error::Config(format!(
                "{} denoisers for {} subviews",
                self.denoisers.len(),
                self.layout.count
            )));
        }
        if !(0.0..=1.0).contains(&self.r_guide) {
            return Err(Error::Config(format!("r_guide {} outside [0, 1]", self.r_guide)));
        }
        if self.swap_interval == 0 {
            return Err(Error::Config("swap interval must be at least 1".into()));
        }
        if self.mode == MergeMode::SaFa && self.reference.is_none() {
            return Err(Error::Config("reference-guided mode needs a reference denoiser".into()));
        }
        if self.mode.is_swap()
            && self.layout.pair_count() > 0
            && 2 * self.layout.overlap_width() > self.layout.subview_width
        {
            return Err(Error::Config(format!(
                "swap merging needs pairwise overlaps: overlap {} exceeds half of subview {}",
                self.layout.overlap_width(),
                self.layout.subview_width
            )));
        }
        for (i, spec) in self.denoisers.iter().enumerate() {
            self.check_target_shape(spec, &format!("subview {i}"))?;
        }
        if let Some(r) = &self.reference {
            self.check_target_shape(r, "reference")?;
        }
        if let Some(stride) = self.snapshot_stride {
            if stride == 0 {
                return Err(Error::Config("snapshot stride must be positive".into()));
            }
        }
        Ok(())
    }

    fn check_target_shape(&self, spec: &DenoiserSpec, who: &str) -> Result<()> {
        if let DenoiserKind::BandTexture { target } = &spec.kind {
            let want = (self.channels, self.height, self.layout.subview_width);
            if target.shape() != want {
                return Err(Error::Config(format!(
                    "{who} target shape {:?} does not match window {:?}",
                    target.shape(),
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn guided_steps(&self) -> usize {
        guided_steps(self.r_guide, self.schedule.steps())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub denoiser_calls: usize,
    /// Per overlap pair, the pre-merge divergence of the two candidates.
    pub divergences: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<(usize, LatentMap)>,
}

impl TrajectoryLog {
    pub fn total_denoiser_calls(&self) -> usize {
        self.steps.iter().map(|s| s.denoiser_calls).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,pair_index,divergence,denoiser_calls")?;
        for rec in &self.steps {
            for (p, d) in rec.divergences.iter().enumerate() {
                writeln!(f, "{},{},{},{}", rec.step, p, d, rec.denoiser_calls)?;
            }
        }
        Ok(())
    }
}

/// The initial noise canvas for a run. Columns are seeded independently so
/// any window of the canvas can be reproduced without drawing the rest.
pub fn initial_canvas(
    layout: &SubviewLayout,
    channels: usize,
    height: usize,
    master_seed: u64,
) -> LatentMap {
    let mut j = LatentMap::zeros(channels, height, layout.total_width);
    for col in 0..layout.total_width {
        let column =
            LatentMap::standard_normal(channels, height, 1, derive_seed(master_seed, &[TAG_INIT_COLUMN, col as u64]));
        for ch in 0..channels {
            for r in 0..height {
                j.set(ch, r, col, column.get(ch, r, 0));
            }
        }
    }
    j
}

/// Advance one window by a single scheduler step: a DDIM step, or an
/// Euler-Maruyama step with the stream-seeded noise draw for `noise_index`
/// (0 is the reference, subview i uses i + 1).
fn advance(
    spec: &DenoiserSpec,
    x: &LatentMap,
    t: usize,
    config: &RunConfig,
    noise_index: usize,
) -> Result<LatentMap> {
    match config.schedule.sampler() {
        SamplerKind::Ddim => denoise_one_step(spec, x, t, &config.schedule),
        SamplerKind::EulerMaruyama => {
            let steps = config.schedule.steps();
            let dt = -1.0 / steps as f64;
            let seed = derive_seed(
                config.master_seed,
                &[TAG_STEP_NOISE, t as u64, noise_index as u64],
            );
            let noise = LatentMap::standard_normal(x.channels(), x.height(), x.width(), seed);
            em_reverse_step(
                spec,
                x,
                config.schedule.t_of(t),
                dt,
                &config.schedule,
                config.score_bound.as_ref(),
                &noise,
            )
        }
    }
}

fn slice_columns(x: &LatentMap, start: usize, end: usize) -> LatentMap {
    let mut out = LatentMap::zeros(x.channels(), x.height(), end - start);
    for ch in 0..x.channels() {
        for r in 0..x.height() {
            for (i, c) in (start..end).enumerate() {
                out.set(ch, r, i, x.get(ch, r, c));
            }
        }
    }
    out
}

/// Normalized distance in [0, 1] between the two candidate contents of the
/// overlap shared by adjacent subviews: the right band of `x_i` against the
/// left band of `x_ip1`, L2-normalized by the mean of the two norms.
pub fn measure_divergence(
    x_i: &LatentMap,
    x_ip1: &LatentMap,
    layout: &SubviewLayout,
) -> Result<f64> {
    let v = layout.overlap_width();
    if v == 0 {
        return Err(Error::Geometry("layout has no overlap to compare".into()));
    }
    let w = layout.subview_width;
    if x_i.shape() != x_ip1.shape() || x_i.width() != w {
        return Err(Error::Shape(format!(
            "expected two {w}-wide windows, got {:?} and {:?}",
            x_i.shape(),
            x_ip1.shape()
        )));
    }
    let right = slice_columns(x_i, w - v, w);
    let left = slice_columns(x_ip1, 0, v);
    let mut dist = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (a, b) in right.data().iter().zip(left.data()) {
        let (a, b) = (*a as f64, *b as f64);
        dist += (a - b) * (a - b);
        na += a * a;
        nb += b * b;
    }
    let scale = 0.5 * (na.sqrt() + nb.sqrt());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((dist.sqrt() / scale).min(1.0))
}

/// Weight of subview-local column `j` when averaging modes accumulate the
/// canvas. `Md` weighs every covering subview equally; `MdStar` uses a
/// triangular tent, which in a two-way overlap reduces to the linear
/// crossfade of the blend weights.
fn averaging_weight(mode: MergeMode, j: usize, subview_width: usize) -> f64 {
    match mode {
        MergeMode::Md => 1.0,
        MergeMode::MdStar => (j as f64 + 0.5).min(subview_width as f64 - j as f64 - 0.5),
        _ => unreachable!("averaging weight queried for a swap mode"),
    }
}

struct SwapPlan {
    overlap_mask: Option<SwapMask>,
    mid_masks: Vec<SwapMask>,
}

fn build_swap_plan(config: &RunConfig) -> Result<SwapPlan> {
    let layout = &config.layout;
    let v = layout.overlap_width();
    let overlap_mask = if layout.pair_count() > 0 && v > 0 {
        Some(make_swap_mask(config.height, v, config.swap_interval, config.orientation)?)
    } else {
        None
    };
    let mut mid_masks = Vec::with_capacity(layout.count);
    if config.mode == MergeMode::SaFa {
        for i in 0..layout.count {
            let mid = region_ranges(layout, i)?.mid;
            mid_masks.push(make_swap_mask(
                config.height,
                mid.len().max(1),
                config.swap_interval,
                config.orientation,
            )?);
        }
    }
    Ok(SwapPlan { overlap_mask, mid_masks })
}

fn write_columns(j: &mut LatentMap, layout: &SubviewLayout, start: usize, content: &LatentMap) {
    let total = layout.total_width;
    for ch in 0..j.channels() {
        for r in 0..j.height() {
            for c in 0..content.width() {
                j.set(ch, r, (start + c) % total, content.get(ch, r, c));
            }
        }
    }
}

/// Run the full joint denoising loop and return the clean canvas plus the
/// per-step trajectory log.
pub fn joint_generate(config: &RunConfig) -> Result<(LatentMap, TrajectoryLog)> {
    config.validate()?;
    let layout = &config.layout;
    let n = layout.count;
    let steps = config.schedule.steps();
    let guided = config.guided_steps();

    let mut j = initial_canvas(layout, config.channels, config.height, config.master_seed);
    let mut reference = if config.mode == MergeMode::SaFa {
        Some(LatentMap::standard_normal(
            config.channels,
            config.height,
            layout.subview_width,
            derive_seed(config.master_seed, &[TAG_REFERENCE_INIT]),
        ))
    } else {
        None
    };
    let plan = if config.mode.is_swap() { Some(build_swap_plan(config)?) } else { None };

    let mut log = TrajectoryLog::default();
    if let Some(stride) = config.snapshot_stride {
        if steps % stride == 0 {
            log.snapshots.push((steps, j.clone()));
        }
    }

    for t in (1..=steps).rev() {
        // stage 1: windows of the current canvas
        let windows: Vec<LatentMap> =
            (0..n).map(|i| extract_subview(&j, layout, i)).collect::<Result<_>>()?;

        // stage 2: denoise every window once; reference advances from its
        // own previous state only
        let mut denoised: Vec<LatentMap> = (0..n)
            .into_par_iter()
            .map(|i| advance(&config.denoisers[i], &windows[i], t, config, i + 1))
            .collect::<Result<_>>()?;
        let mut calls = n;
        if let Some(ref_state) = reference.as_mut() {
            let spec = config.reference.as_ref().expect("validated");
            *ref_state = advance(spec, ref_state, t, config, 0)?;
            calls += 1;
        }

        let mut divergences = Vec::with_capacity(layout.pair_count());
        for p in 0..layout.pair_count() {
            let a = p;
            let b = (p + 1) % n;
            divergences.push(measure_divergence(&denoised[a], &denoised[b], layout)?);
        }

        match config.mode {
            MergeMode::Md | MergeMode::MdStar => {
                // single accumulation pass realizes the weighted union of
                // all subviews; uncontested columns pass through exactly
                let mut acc = vec![0.0f64; j.numel()];
                let mut norm = vec![0.0f64; layout.total_width];
                for (i, x) in denoised.iter().enumerate() {
                    for jj in 0..layout.subview_width {
                        let w = averaging_weight(config.mode, jj, layout.subview_width);
                        let col = layout.column_of(i, jj);
                        norm[col] += w;
                        for ch in 0..config.channels {
                            for r in 0..config.height {
                                let idx = (ch * config.height + r) * layout.total_width + col;
                                acc[idx] += w * x.get(ch, r, jj) as f64;
                            }
                        }
                    }
                }
                for col in 0..layout.total_width {
                    if norm[col] == 0.0 {
                        return Err(Error::Geometry(format!("column {col} never covered")));
                    }
                }
                for ch in 0..config.channels {
                    for r in 0..config.height {
                        for col in 0..layout.total_width {
                            let idx = (ch * config.height + r) * layout.total_width + col;
                            j.set(ch, r, col, (acc[idx] / norm[col]) as f32);
                        }
                    }
                }
            }
            MergeMode::SaFaStar | MergeMode::SaFa => {
                let plan = plan.as_ref().expect("swap plan built");
                // a single subview is plain sampling: nothing to reconcile,
                // so the guard stays off
                let guard_on =
                    config.mode == MergeMode::SaFa && n > 1 && t > steps - guided;
                if guard_on {
                    let ref_state = reference.as_ref().expect("validated");
                    for (i, x) in denoised.iter_mut().enumerate() {
                        let mid = region_ranges(layout, i)?.mid;
                        if mid.is_empty() {
                            continue;
                        }
                        let own = slice_columns(x, mid.start, mid.end);
                        let guide = slice_columns(ref_state, mid.start, mid.end);
                        let merged = reference_guided_merge(&guide, &own, &plan.mid_masks[i])?;
                        for ch in 0..config.channels {
                            for r in 0..config.height {
                                for (k, c) in (mid.start..mid.end).enumerate() {
                                    x.set(ch, r, c, merged.get(ch, r, k));
                                }
                            }
                        }
                    }
                }
                // non-overlap content first, swapped overlaps second; the
                // two column sets are disjoint
                for (i, x) in denoised.iter().enumerate() {
                    let mid = region_ranges(layout, i)?.mid;
                    if mid.is_empty() {
                        continue;
                    }
                    let content = slice_columns(x, mid.start, mid.end);
                    let start = layout.column_of(i, mid.start);
                    write_columns(&mut j, layout, start, &content);
                }
                let v = layout.overlap_width();
                if let Some(mask) = &plan.overlap_mask {
                    for p in 0..layout.pair_count() {
                        let a = p;
                        let b = (p + 1) % n;
                        let w = layout.subview_width;
                        let right_band = slice_columns(&denoised[a], w - v, w);
                        let left_band = slice_columns(&denoised[b], 0, v);
                        let merged = swap_merge(&right_band, &left_band, mask)?;
                        write_columns(&mut j, layout, layout.overlap_start(p), &merged);
                    }
                }
            }
        }

        log.steps.push(StepRecord { step: t, denoiser_calls: calls, divergences });
        if let Some(stride) = config.snapshot_stride {
            if (t - 1) % stride == 0 {
                log.snapshots.push((t - 1, j.clone()));
            }
        }
    }
    Ok((j, log))
}

/// One row of an `r_guide` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub r_guide: f64,
    /// Mean L2 distance between interior non-overlap regions of all final
    /// subview pairs.
    pub mean_pairwise_distance: f64,
    /// Feature-level diversity of the final canvas (cross-view distance).
    pub diversity: f64,
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "r_guide,mean_pairwise_distance,diversity")?;
    for r in rows {
        writeln!(f, "{},{},{}", r.r_guide, r.mean_pairwise_distance, r.diversity)?;
    }
    Ok(())
}

/// Re-run the same configuration across a grid of guidance rates. Seeds and
/// every other setting stay fixed, so rows differ only through the guard.
pub fn sweep_r_guide(config: &RunConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let v = config.layout.overlap_width();
    let w = config.layout.subview_width;
    if 2 * v > w {
        return Err(Error::Config("sweep needs the interior region defined".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &r_guide in grid {
        let mut c = config.clone();
        c.r_guide = r_guide;
        c.mode = MergeMode::SaFa;
        let (j, _) = joint_generate(&c)?;
        let mids: Vec<LatentMap> = (0..c.layout.count)
            .map(|i| {
                extract_subview(&j, &c.layout, i).map(|x| slice_columns(&x, v, w - v))
            })
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut pairs = 0usize;
        for a in 0..mids.len() {
            for b in a + 1..mids.len() {
                total += crate::diffusion::l2_distance(&mids[a], &mids[b])?;
                pairs += 1;
            }
        }
        let mean_pairwise_distance = if pairs > 0 { total / pairs as f64 } else { 0.0 };
        let diversity = if c.layout.count >= 2 {
            crate::analysis::cross_view_distance(&j, &c.layout)?
        } else {
            0.0
        };
        rows.push(SweepRow { r_guide, mean_pairwise_distance, diversity });
    }
    Ok(rows)
}
