//! Similarity bounds for paired reverse trajectories, with a Monte-Carlo
//! validator.
//!
//! Two reverse-SDE trajectories started at `x1` and `x2` at time `t2`, run
//! to `t1 < t2` under the same conditioning with a score whose norm never
//! exceeds `C`, stay within
//!
//! ```text
//! exp(s2) * (|x1 - x2| + 2 C D)^2 + 2 s2 (d + 2 sqrt(d u) + 2 u)
//! ```
//!
//! of each other in squared distance, with probability at least `1 - delta`.
//! Here `s2` is the accumulated noise variance over the interval, `D` the
//! damped rate integral computed by [`drift_integral`], `d` the flat
//! dimension and `u = -ln delta`. When both starts first have a common
//! reference swapped into the masked positions, the distance term shrinks
//! to its restriction outside the mask; this masked variant is what makes
//! periodic swaps pull a pair of trajectories together.
//!
//! [`monte_carlo_validate`] simulates trajectory pairs with Euler-Maruyama
//! steps and reports how often the squared terminal distance exceeds the
//! bound; [`clopper_pearson`] turns the violation count into exact binomial
//! confidence limits. [`guided_similarity_experiment`] composes the masked
//! bound across a guided joint run and sets it against the empirically
//! measured subview separation.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::diffusion::{
    em_reverse_step, l2_distance, DenoiserSpec, DiffusionSchedule, SamplerKind, ScoreBound,
};
use crate::error::{Error, Result};
use crate::grid::{extract_subview, LatentMap};
use crate::scheduler::{guided_steps, initial_canvas, sweep_r_guide, MergeMode, RunConfig};
use crate::seed::derive_seed;
use crate::swap::{make_swap_mask, swap_merge, SwapMask};

/// Seed namespace for validator trial noise.
const TAG_TRIAL_NOISE: u64 = 0x424e;

/// Euler-Maruyama step count used by full validation runs.
pub const VALIDATION_STEPS: usize = 1000;

/// Quadrature tolerance for [`drift_integral`].
const QUAD_TOL: f64 = 1e-10;
const QUAD_MAX_DEPTH: u32 = 60;

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive refinement exhausted {QUAD_MAX_DEPTH} levels on [{a}, {b}]"
        )));
    }
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    let half = 0.5 * tol;
    Ok(adapt(f, a, fa, m, fm, lm, flm, left, half, depth - 1)?
        + adapt(f, m, fm, b, fb, rm, frm, right, half, depth - 1)?)
}

/// Magnitude of the damped rate integral over `[t1, t2]`: the rate at each
/// intermediate time `s` is attenuated by `exp(-s2(t2 -> s) / 2)`, the
/// noise already accumulated between `s` and `t2`. Evaluated by adaptive
/// Simpson quadrature to an absolute tolerance of 1e-10.
pub fn drift_integral(t2: f64, t1: f64, schedule: &DiffusionSchedule) -> Result<f64> {
    if !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) || t1 >= t2 {
        return Err(Error::Domain(format!("need 0 <= t1 < t2 <= 1, got t1={t1}, t2={t2}")));
    }
    let b2 = schedule.beta_integral(t2);
    let f = |s: f64| (-0.5 * (b2 - schedule.beta_integral(s))).exp() * schedule.beta(s);
    let (a, b) = (t1, t2);
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    let value = adapt(&f, a, fa, b, fb, m, fm, whole, QUAD_TOL, QUAD_MAX_DEPTH)?;
    Ok(value.abs())
}

/// Everything a bound evaluation needs: the two starting states, the shared
/// reference, the time interval, the score cap, the failure probability and
/// the schedule. A mask switches evaluation to the swapped-start variant.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub x1: LatentMap,
    pub x2: LatentMap,
    pub x_ref: LatentMap,
    pub t2: f64,
    pub t1: f64,
    pub score_bound: ScoreBound,
    pub delta: f64,
    pub schedule: DiffusionSchedule,
    pub mask: Option<SwapMask>,
}

impl BoundInputs {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x1: LatentMap,
        x2: LatentMap,
        x_ref: LatentMap,
        t2: f64,
        t1: f64,
        score_bound: ScoreBound,
        delta: f64,
        schedule: DiffusionSchedule,
        mask: Option<SwapMask>,
    ) -> Result<Self> {
        if !x1.same_shape(&x2) || !x1.same_shape(&x_ref) {
            return Err(Error::Shape(format!(
                "start and reference shapes differ: {:?}, {:?}, {:?}",
                x1.shape(),
                x2.shape(),
                x_ref.shape()
            )));
        }
        if !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) || t1 >= t2 {
            return Err(Error::Domain(format!("need 0 <= t1 < t2 <= 1, got t1={t1}, t2={t2}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie strictly in (0, 1), got {delta}")));
        }
        if let Some(m) = &mask {
            if m.rows() != x1.height() || m.cols() != x1.width() {
                return Err(Error::Shape(format!(
                    "mask {}x{} does not cover state {}x{}",
                    m.rows(),
                    m.cols(),
                    x1.height(),
                    x1.width()
                )));
            }
        }
        Ok(Self { x1, x2, x_ref, t2, t1, score_bound, delta, schedule, mask })
    }

    /// Flat dimension of one state.
    pub fn dimension(&self) -> usize {
        self.x1.numel()
    }
}

/// Distance restricted to the positions a swap leaves untouched: the mask
/// selects reference content, so only zero entries can still differ after
/// both starts absorb the same reference.
pub fn masked_distance(x1: &LatentMap, x2: &LatentMap, mask: &SwapMask) -> Result<f64> {
    if !x1.same_shape(x2) {
        return Err(Error::Shape(format!("shapes differ: {:?} vs {:?}", x1.shape(), x2.shape())));
    }
    if mask.rows() != x1.height() || mask.cols() != x1.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} does not cover state {}x{}",
            mask.rows(),
            mask.cols(),
            x1.height(),
            x1.width()
        )));
    }
    let mut sum = 0.0f64;
    for c in 0..x1.channels() {
        for r in 0..x1.height() {
            for w in 0..x1.width() {
                if mask.get(r, w) == 0 {
                    let d = x1.get(c, r, w) as f64 - x2.get(c, r, w) as f64;
                    sum += d * d;
                }
            }
        }
    }
    Ok(sum.sqrt())
}

/// Right-hand side shared by both bound variants. At `s2 = 0` the expression
/// collapses to `dist^2` exactly.
fn assemble_bound(dist: f64, s2: f64, drift: f64, c: f64, d: f64, u: f64) -> f64 {
    let core = dist + 2.0 * c * drift;
    s2.exp() * core * core + 2.0 * s2 * (d + 2.0 * (d * u).sqrt() + 2.0 * u)
}

fn bound_with_distance(inputs: &BoundInputs, dist: f64) -> Result<f64> {
    let s2 = inputs.schedule.sigma_sq(inputs.t2, inputs.t1)?;
    let drift = drift_integral(inputs.t2, inputs.t1, &inputs.schedule)?;
    let d = inputs.dimension() as f64;
    let u = -inputs.delta.ln();
    Ok(assemble_bound(dist, s2, drift, inputs.score_bound.max_norm(), d, u))
}

/// High-probability cap on the squared distance between the two reverse
/// trajectories at `t1`, evaluated from the plain start separation.
pub fn proposition_bound(inputs: &BoundInputs) -> Result<f64> {
    let dist = l2_distance(&inputs.x1, &inputs.x2)?;
    bound_with_distance(inputs, dist)
}

/// Same cap for swapped starts: both trajectories first absorb the shared
/// reference at the masked positions, so only the unmasked separation
/// enters the distance term.
pub fn corollary_bound(inputs: &BoundInputs) -> Result<f64> {
    let mask = inputs
        .mask
        .as_ref()
        .ok_or_else(|| Error::Config("swapped-start bound needs a mask".into()))?;
    let dist = masked_distance(&inputs.x1, &inputs.x2, mask)?;
    bound_with_distance(inputs, dist)
}

/// How the two simulated trajectories draw their step noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePairing {
    /// One draw per step, fed to both trajectories.
    Shared,
    /// Fresh draws per trajectory.
    Independent,
}

impl fmt::Display for NoisePairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoisePairing::Shared => write!(f, "shared"),
            NoisePairing::Independent => write!(f, "independent"),
        }
    }
}

/// Aggregate result of a validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub delta: f64,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub mean_sq_distance: f64,
    pub bound: f64,
}

/// Squared terminal distances of `trials` simulated trajectory pairs. With
/// a mask present both starts first absorb the reference at the masked
/// positions. Trials are independent, seeded per trial and step, and run
/// in parallel.
fn simulate_sq_distances(
    inputs: &BoundInputs,
    denoiser: &DenoiserSpec,
    trials: usize,
    pairing: NoisePairing,
    steps: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    if trials < 100 {
        return Err(Error::Domain(format!("need at least 100 trials, got {trials}")));
    }
    if steps == 0 {
        return Err(Error::Domain("need at least one simulation step".into()));
    }
    let (start1, start2) = match &inputs.mask {
        Some(mask) => (
            swap_merge(&inputs.x_ref, &inputs.x1, mask)?,
            swap_merge(&inputs.x_ref, &inputs.x2, mask)?,
        ),
        None => (inputs.x1.clone(), inputs.x2.clone()),
    };
    let (c, h, w) = inputs.x1.shape();
    let dt = -(inputs.t2 - inputs.t1) / steps as f64;
    let cap = inputs.score_bound;

    (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut a = start1.clone();
            let mut b = start2.clone();
            for k in 0..steps as u64 {
                let t = inputs.t2 + k as f64 * dt;
                let noise_a = LatentMap::standard_normal(
                    c,
                    h,
                    w,
                    derive_seed(master_seed, &[TAG_TRIAL_NOISE, trial, k, 0]),
                );
                a = em_reverse_step(denoiser, &a, t, dt, &inputs.schedule, Some(&cap), &noise_a)?;
                let noise_b = match pairing {
                    NoisePairing::Shared => noise_a,
                    NoisePairing::Independent => LatentMap::standard_normal(
                        c,
                        h,
                        w,
                        derive_seed(master_seed, &[TAG_TRIAL_NOISE, trial, k, 1]),
                    ),
                };
                b = em_reverse_step(denoiser, &b, t, dt, &inputs.schedule, Some(&cap), &noise_b)?;
            }
            let dist = l2_distance(&a, &b)?;
            Ok(dist * dist)
        })
        .collect()
}

fn summarize(per_trial: &[f64], delta: f64, bound: f64) -> ValidationOutcome {
    let violations = per_trial.iter().filter(|&&sq| sq > bound).count();
    ValidationOutcome {
        delta,
        trials: per_trial.len(),
        violations,
        violation_rate: violations as f64 / per_trial.len() as f64,
        mean_sq_distance: per_trial.iter().sum::<f64>() / per_trial.len() as f64,
        bound,
    }
}

/// Simulates `trials` pairs of reverse trajectories from the two starts
/// over `[t1, t2]` with `steps` uniform Euler-Maruyama steps each and
/// counts how often the squared terminal distance exceeds the bound. With
/// a mask present the swapped-start bound applies.
pub fn monte_carlo_validate(
    inputs: &BoundInputs,
    denoiser: &DenoiserSpec,
    trials: usize,
    pairing: NoisePairing,
    steps: usize,
    master_seed: u64,
) -> Result<ValidationOutcome> {
    let per_trial = simulate_sq_distances(inputs, denoiser, trials, pairing, steps, master_seed)?;
    let bound = match &inputs.mask {
        Some(_) => corollary_bound(inputs)?,
        None => proposition_bound(inputs)?,
    };
    Ok(summarize(&per_trial, inputs.delta, bound))
}

/// Like [`monte_carlo_validate`], but reuses one set of simulated pairs to
/// evaluate the bound at several failure probabilities; only the threshold
/// depends on `delta`, so the trajectories need not be re-simulated.
pub fn monte_carlo_validate_multi(
    inputs: &BoundInputs,
    denoiser: &DenoiserSpec,
    trials: usize,
    pairing: NoisePairing,
    steps: usize,
    master_seed: u64,
    deltas: &[f64],
) -> Result<Vec<ValidationOutcome>> {
    monte_carlo_validate_multi_scaled(
        inputs,
        denoiser,
        trials,
        pairing,
        steps,
        master_seed,
        deltas,
        1.0,
    )
}

/// Harness self-test variant: multiplies every assembled bound by
/// `bound_scale` before violations are counted, so a deliberately
/// mis-scaled threshold provably trips the exceedance path. `1.0` is the
/// honest bound.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_validate_multi_scaled(
    inputs: &BoundInputs,
    denoiser: &DenoiserSpec,
    trials: usize,
    pairing: NoisePairing,
    steps: usize,
    master_seed: u64,
    deltas: &[f64],
    bound_scale: f64,
) -> Result<Vec<ValidationOutcome>> {
    for &d in deltas {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::Domain(format!("delta must lie strictly in (0, 1), got {d}")));
        }
    }
    if !(bound_scale.is_finite() && bound_scale > 0.0) {
        return Err(Error::Domain(format!(
            "bound scale must be finite and positive, got {bound_scale}"
        )));
    }
    let per_trial = simulate_sq_distances(inputs, denoiser, trials, pairing, steps, master_seed)?;
    let dist = match &inputs.mask {
        Some(mask) => masked_distance(&inputs.x1, &inputs.x2, mask)?,
        None => l2_distance(&inputs.x1, &inputs.x2)?,
    };
    let s2 = inputs.schedule.sigma_sq(inputs.t2, inputs.t1)?;
    let drift = drift_integral(inputs.t2, inputs.t1, &inputs.schedule)?;
    let d = inputs.dimension() as f64;
    let c = inputs.score_bound.max_norm();
    Ok(deltas
        .iter()
        .map(|&delta| {
            let bound = bound_scale * assemble_bound(dist, s2, drift, c, d, -delta.ln());
            summarize(&per_trial, delta, bound)
        })
        .collect())
}

/// One-sided exact binomial confidence limits for a success probability:
/// returns `(lower, upper)`, each holding with the stated confidence on its
/// own. `successes = 0` pins the lower limit to 0; `successes = trials`
/// pins the upper limit to 1.
pub fn clopper_pearson(successes: usize, trials: usize, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::Domain(format!("need 0 <= successes <= trials, got {successes}/{trials}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let alpha = 1.0 - confidence;
    let (k, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0)
            .map_err(|e| Error::Numerical(format!("beta parameters: {e}")))?
            .inverse_cdf(alpha)
    };
    let upper = if successes == trials {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .map_err(|e| Error::Numerical(format!("beta parameters: {e}")))?
            .inverse_cdf(confidence)
    };
    Ok((lower, upper))
}

/// One CSV row of a validation campaign.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub delta: f64,
    pub dimension: usize,
    pub t2: f64,
    pub t1: f64,
    pub score_cap: f64,
    pub pairing: NoisePairing,
    pub trials: usize,
    pub violation_rate: f64,
    pub mean_sq_distance: f64,
    pub bound: f64,
    /// Mean headroom left under the bound.
    pub slack: f64,
}

impl BoundReport {
    pub fn new(inputs: &BoundInputs, pairing: NoisePairing, out: &ValidationOutcome) -> Self {
        Self {
            delta: out.delta,
            dimension: inputs.dimension(),
            t2: inputs.t2,
            t1: inputs.t1,
            score_cap: inputs.score_bound.max_norm(),
            pairing,
            trials: out.trials,
            violation_rate: out.violation_rate,
            mean_sq_distance: out.mean_sq_distance,
            bound: out.bound,
            slack: out.bound - out.mean_sq_distance,
        }
    }
}

pub fn write_bound_report_csv(rows: &[BoundReport], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "delta,d,t2,t1,C,pairing,trials,violation_rate,mean_sq_distance,bound,slack")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.delta,
            r.dimension,
            r.t2,
            r.t1,
            r.score_cap,
            r.pairing,
            r.trials,
            r.violation_rate,
            r.mean_sq_distance,
            r.bound,
            r.slack
        )?;
    }
    Ok(())
}

/// One row of the guidance-rate similarity table.
#[derive(Debug, Clone)]
pub struct SimilarityRow {
    pub r_guide: f64,
    pub guided: usize,
    /// Squared mean pairwise distance of terminal interior content,
    /// averaged over the seed list.
    pub empirical_sq_distance: f64,
    /// Step-composed bound on the squared separation; guided steps insert
    /// a masked contraction, so the column never increases with `r_guide`.
    pub bound_product: f64,
}

pub fn write_similarity_csv(rows: &[SimilarityRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "r_guide,guided_steps,empirical_sq_distance,bound_product")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.r_guide, r.guided, r.empirical_sq_distance, r.bound_product)?;
    }
    Ok(())
}

/// Interior columns of one subview window.
fn interior(x: &LatentMap, v: usize) -> LatentMap {
    let (c, h, w) = x.shape();
    let mut out = LatentMap::zeros(c, h, w - 2 * v);
    for ch in 0..c {
        for r in 0..h {
            for col in v..w - v {
                out.set(ch, r, col - v, x.get(ch, r, col));
            }
        }
    }
    out
}

/// Mean pairwise interior distance of the initial noise canvas.
fn initial_interior_distance(config: &RunConfig, v: usize) -> Result<f64> {
    let j = initial_canvas(&config.layout, config.channels, config.height, config.master_seed);
    let mids: Vec<LatentMap> = (0..config.layout.count)
        .map(|i| extract_subview(&j, &config.layout, i).map(|x| interior(&x, v)))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..mids.len() {
        for b in a + 1..mids.len() {
            total += l2_distance(&mids[a], &mids[b])?;
            pairs += 1;
        }
    }
    Ok(if pairs > 0 { total / pairs as f64 } else { 0.0 })
}

/// Sweeps the guidance rate on the SDE sampler and sets the measured
/// terminal interior separation against a step-composed bound. The bound
/// column chains the per-step cap: each reverse step expands the running
/// separation by the interval bound, and each guided step then contracts
/// it by the root of the unmasked fraction, the average share of squared
/// separation a reference swap leaves in place. More guided steps insert
/// more contractions, so the column is non-increasing in the rate by
/// construction.
pub fn guided_similarity_experiment(
    config: &RunConfig,
    grid: &[f64],
    seeds: &[u64],
    delta: f64,
) -> Result<Vec<SimilarityRow>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one rate and one seed".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie strictly in (0, 1), got {delta}")));
    }
    let cap = config
        .score_bound
        .ok_or_else(|| Error::Config("similarity experiment needs a score bound".into()))?;
    let layout = &config.layout;
    let v = layout.overlap_width();
    let w = layout.subview_width;
    if 2 * v >= w {
        return Err(Error::Config("similarity experiment needs a non-empty interior".into()));
    }

    let mut base = config.clone();
    base.schedule = config.schedule.with_sampler(SamplerKind::EulerMaruyama);
    base.mode = MergeMode::SaFa;
    base.validate()?;

    let steps = base.schedule.steps();
    let mut interval_terms = Vec::with_capacity(steps);
    for t in 1..=steps {
        let (hi, lo) = (base.schedule.t_of(t), base.schedule.t_of(t - 1));
        let s2 = base.schedule.sigma_sq(hi, lo)?;
        let drift = drift_integral(hi, lo, &base.schedule)?;
        interval_terms.push((s2, drift));
    }
    let mid_mask = make_swap_mask(base.height, w - 2 * v, base.swap_interval, base.orientation)?;
    let contraction = mid_mask.zeros_fraction().sqrt();
    let d = (base.channels * base.height * (w - 2 * v)) as f64;
    let u = -delta.ln();
    let c = cap.max_norm();
    let many = layout.count > 1;

    let mut empirical = vec![0.0f64; grid.len()];
    let mut bound = vec![0.0f64; grid.len()];
    for &seed in seeds {
        let mut run = base.clone();
        run.master_seed = seed;
        for (row, sweep) in sweep_r_guide(&run, grid)?.iter().enumerate() {
            empirical[row] += sweep.mean_pairwise_distance.powi(2) / seeds.len() as f64;
        }
        let d0 = initial_interior_distance(&run, v)?;
        for (row, &r_guide) in grid.iter().enumerate() {
            let guided = guided_steps(r_guide, steps);
            let mut dist = d0;
            for t in (1..=steps).rev() {
                let (s2, drift) = interval_terms[t - 1];
                dist = assemble_bound(dist, s2, drift, c, d, u).sqrt();
                if many && t > steps - guided {
                    dist *= contraction;
                }
            }
            bound[row] += dist * dist / seeds.len() as f64;
        }
    }

    Ok(grid
        .iter()
        .enumerate()
        .map(|(row, &r_guide)| SimilarityRow {
            r_guide,
            guided: guided_steps(r_guide, steps),
            empirical_sq_distance: empirical[row],
            bound_product: bound[row],
        })
        .collect())
}
