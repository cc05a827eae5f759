//! Analytically tractable diffusion models.
//!
//! Forward process: variance-preserving with linear `beta(t)` on the unit
//! interval, so `alpha_bar(t) = exp(-integral of beta)` has a closed form
//! and every clean distribution below admits an exact score of its noised
//! marginal. Samplers: deterministic DDIM steps on the discrete grid
//! `t_k = k / steps`, or Euler-Maruyama steps of the reverse SDE.

use crate::error::{Error, Result};
use crate::grid::LatentMap;
use crate::seed::derive_seed;
use crate::spectral::{fft2, fft2_real, radial_bin};
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;

const TAG_BAND_SHARED: u64 = 0x42_53;
const TAG_BAND_CONDITION: u64 = 0x42_43;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ddim,
    EulerMaruyama,
}

/// Linear-`beta` variance-preserving schedule over `t` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    sampler: SamplerKind,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(steps: usize, beta_min: f64, beta_max: f64, sampler: SamplerKind) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("step count must be positive".into()));
        }
        if !(beta_min > 0.0) || !(beta_max >= beta_min) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_min <= beta_max, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut sched =
            Self { steps, beta_min, beta_max, sampler, alpha_bars: Vec::with_capacity(steps + 1) };
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            sched.alpha_bars.push((-sched.beta_integral(t)).exp());
        }
        Ok(sched)
    }

    /// Default scale used across the toolkit.
    pub fn standard(steps: usize, sampler: SamplerKind) -> Result<Self> {
        Self::new(steps, 0.1, 20.0, sampler)
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn sampler(&self) -> SamplerKind {
        self.sampler
    }

    pub fn with_sampler(&self, sampler: SamplerKind) -> Self {
        let mut s = self.clone();
        s.sampler = sampler;
        s
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `integral of beta over [0, t]`, closed form for the linear schedule.
    pub fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    pub fn alpha_bar_at(&self, t: f64) -> f64 {
        (-self.beta_integral(t)).exp()
    }

    /// Tabulated `alpha_bar` at grid index `k`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn t_of(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    /// Accumulated noise energy of the reverse bridge from `t2` down to `t1`:
    /// `sigma^2 = -(integral of beta from t2 to t1) = integral from t1 to t2`.
    pub fn sigma_sq(&self, t2: f64, t1: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t1) || !(0.0..=1.0).contains(&t2) || t1 >= t2 {
            return Err(Error::Domain(format!(
                "need 0 <= t1 < t2 <= 1, got t1={t1}, t2={t2}"
            )));
        }
        Ok(self.beta_integral(t2) - self.beta_integral(t1))
    }
}

/// Radial cap on the score field's L2 norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBound {
    max_norm: f64,
}

impl ScoreBound {
    pub fn new(max_norm: f64) -> Result<Self> {
        if !(max_norm >= 0.0) {
            return Err(Error::Domain(format!(
                "score bound must be non-negative, got {max_norm}"
            )));
        }
        Ok(Self { max_norm })
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }
}

impl Default for ScoreBound {
    fn default() -> Self {
        Self { max_norm: 10.0 }
    }
}

/// Symmetric positive-definite pentadiagonal matrix stored by bands.
#[derive(Debug, Clone)]
struct PentaMatrix {
    d0: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl PentaMatrix {
    fn identity_scaled(n: usize, s: f64) -> Self {
        Self { d0: vec![s; n], d1: vec![0.0; n.saturating_sub(1)], d2: vec![0.0; n.saturating_sub(2)] }
    }

    #[cfg(test)]
    fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        match hi - lo {
            0 => self.d0[lo],
            1 => self.d1[lo],
            2 => self.d2[lo],
            _ => 0.0,
        }
    }

    /// Banded Cholesky factorization; fails on non-SPD input.
    fn cholesky(&self) -> Result<PentaChol> {
        let n = self.d0.len();
        let mut l0 = vec![0.0f64; n];
        let mut l1 = vec![0.0f64; n.saturating_sub(1)];
        let mut l2 = vec![0.0f64; n.saturating_sub(2)];
        for j in 0..n {
            let mut s = self.d0[j];
            if j >= 1 {
                s -= l1[j - 1] * l1[j - 1];
            }
            if j >= 2 {
                s -= l2[j - 2] * l2[j - 2];
            }
            if s <= 0.0 {
                return Err(Error::Numerical("covariance is not positive definite".into()));
            }
            l0[j] = s.sqrt();
            if j + 1 < n {
                let mut s = self.d1[j];
                if j >= 1 {
                    s -= l1[j - 1] * l2[j - 1];
                }
                l1[j] = s / l0[j];
            }
            if j + 2 < n {
                l2[j] = self.d2[j] / l0[j];
            }
        }
        Ok(PentaChol { l0, l1, l2 })
    }
}

#[derive(Debug, Clone)]
struct PentaChol {
    l0: Vec<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl PentaChol {
    fn solve(&self, rhs: &mut [f64]) {
        let n = self.l0.len();
        for i in 0..n {
            let mut s = rhs[i];
            if i >= 1 {
                s -= self.l1[i - 1] * rhs[i - 1];
            }
            if i >= 2 {
                s -= self.l2[i - 2] * rhs[i - 2];
            }
            rhs[i] = s / self.l0[i];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            if i + 1 < n {
                s -= self.l1[i] * rhs[i + 1];
            }
            if i + 2 < n {
                s -= self.l2[i] * rhs[i + 2];
            }
            rhs[i] = s / self.l0[i];
        }
    }
}

/// Clean-data covariance of the Gaussian score model, per channel and row.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `var * I`.
    Isotropic { var: f64 },
    /// `var * (K K^T + nugget * I)` along columns, where `K` is the 3-tap
    /// smoothing kernel `[1/4, 1/2, 1/4]`. Produces spatially correlated
    /// clean data whose score couples neighbouring columns.
    ColumnSmoothed { var: f64, nugget: f64 },
}

impl Covariance {
    fn validate(&self) -> Result<()> {
        match *self {
            Covariance::Isotropic { var } => {
                if !(var > 0.0) {
                    return Err(Error::Numerical(format!(
                        "covariance must be positive definite, got var={var}"
                    )));
                }
            }
            Covariance::ColumnSmoothed { var, nugget } => {
                if !(var > 0.0) || !(nugget > 0.0) {
                    return Err(Error::Numerical(format!(
                        "covariance must be positive definite, got var={var}, nugget={nugget}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Marginal covariance at noise level `abar` as a banded matrix:
    /// `abar * Sigma + (1 - abar) * I`.
    fn marginal(&self, width: usize, abar: f64) -> PentaMatrix {
        match *self {
            Covariance::Isotropic { var } => {
                PentaMatrix::identity_scaled(width, abar * var + (1.0 - abar))
            }
            Covariance::ColumnSmoothed { var, nugget } => {
                let kernel = |row: usize, col: i64| -> f64 {
                    let off = col - row as i64;
                    if col < 0 || col >= width as i64 {
                        0.0
                    } else {
                        match off {
                            -1 | 1 => 0.25,
                            0 => 0.5,
                            _ => 0.0,
                        }
                    }
                };
                let mut m = PentaMatrix::identity_scaled(width, 0.0);
                for i in 0..width {
                    for j in i..(i + 3).min(width) {
                        let mut kk = 0.0;
                        let lo = i as i64 - 1;
                        let hi = i as i64 + 1;
                        for c in lo..=hi {
                            kk += kernel(i, c) * kernel(j, c);
                        }
                        let mut sigma = var * kk;
                        if i == j {
                            sigma += var * nugget;
                        }
                        let mt = abar * sigma + if i == j { 1.0 - abar } else { 0.0 };
                        match j - i {
                            0 => m.d0[i] = mt,
                            1 => m.d1[i] = mt,
                            2 => m.d2[i] = mt,
                            _ => unreachable!(),
                        }
                    }
                }
                m
            }
        }
    }
}

/// Radial amplitude profile used to synthesize band-limited texture targets.
/// Bins below `shared_bins` are drawn from a condition-independent stream,
/// so targets for different conditions agree on their low-frequency content.
#[derive(Debug, Clone, PartialEq)]
pub struct BandProfile {
    pub values: Vec<f64>,
    pub shared_bins: usize,
}

impl BandProfile {
    pub fn new(values: Vec<f64>, shared_bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("band profile needs at least one bin".into()));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain("band profile values must be non-negative".into()));
        }
        if !values.iter().any(|&v| v > 0.0) {
            return Err(Error::Domain("band profile must carry some energy".into()));
        }
        if shared_bins > values.len() {
            return Err(Error::Domain(format!(
                "shared bin count {} exceeds profile length {}",
                shared_bins,
                values.len()
            )));
        }
        Ok(Self { values, shared_bins })
    }

    /// Slowly decaying spectrum with a thin shared low band. Mimics latents
    /// whose high-frequency detail dominates and varies between trajectories.
    pub fn spectrum_like() -> Self {
        let bins = 32;
        let values = (0..bins)
            .map(|b| {
                let r = (b as f64 + 0.5) / bins as f64;
                1.0 / (1.0 + 3.0 * r)
            })
            .collect();
        Self { values, shared_bins: 4 }
    }

    /// Fast-decaying spectrum with a wide shared low band. Mimics latents
    /// dominated by smooth structure that neighbouring views agree on.
    pub fn image_like() -> Self {
        let bins = 32;
        let values = (0..bins)
            .map(|b| {
                let r = (b as f64 + 0.5) / bins as f64;
                (-6.0 * r).exp()
            })
            .collect();
        Self { values, shared_bins: 8 }
    }
}

/// Random field whose expected radial amplitude spectrum follows `profile`.
///
/// White noise is shaped in frequency space; annuli below
/// `profile.shared_bins` come from a stream keyed by `seed` alone while the
/// rest are keyed by `(seed, condition)`. Two conditions therefore share
/// their coarse structure and differ in detail.
pub fn band_texture_target(
    profile: &BandProfile,
    condition: i64,
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<LatentMap> {
    BandProfile::new(profile.values.clone(), profile.shared_bins)?;
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::Shape("target shape must be non-empty".into()));
    }
    let bins = profile.values.len();
    let mut gain = vec![0.0f64; height * width];
    let mut power = 0.0;
    for u in 0..height {
        for v in 0..width {
            let g = profile.values[radial_bin(u, v, height, width, bins)];
            gain[u * width + v] = g;
            power += g * g;
        }
    }
    let rms = (power / (height * width) as f64).sqrt();
    for g in gain.iter_mut() {
        *g /= rms;
    }

    let mut out = LatentMap::zeros(channels, height, width);
    for ch in 0..channels {
        let shared = white_field(derive_seed(seed, &[TAG_BAND_SHARED, ch as u64]), height, width);
        let own = white_field(
            derive_seed(seed, &[TAG_BAND_CONDITION, condition as u64, ch as u64]),
            height,
            width,
        );
        let mut spec_shared = fft2_real(&shared, height, width);
        let mut spec_own = fft2_real(&own, height, width);
        for u in 0..height {
            for v in 0..width {
                let idx = u * width + v;
                let b = radial_bin(u, v, height, width, bins);
                let (s, o) = if b < profile.shared_bins { (gain[idx], 0.0) } else { (0.0, gain[idx]) };
                spec_shared[idx] *= s;
                spec_own[idx] *= o;
            }
        }
        let mut spec: Vec<Complex<f64>> =
            spec_shared.iter().zip(&spec_own).map(|(a, b)| a + b).collect();
        fft2(&mut spec, height, width, true);
        for u in 0..height {
            for v in 0..width {
                out.set(ch, u, v, spec[u * width + v].re as f32);
            }
        }
    }
    Ok(out)
}

fn white_field(seed: u64, height: usize, width: usize) -> Vec<f32> {
    let mut rng = crate::seed::stream_rng(seed, &[]);
    (0..height * width).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Which analytic clean-data distribution backs the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    /// Gaussian clean data `N(mean * 1, covariance)`; the condition id
    /// shifts the mean by `condition_shift` per unit.
    GaussianScore { mean: f64, condition_shift: f64, covariance: Covariance },
    /// Isotropic Gaussian mixture with per-component scalar mean levels.
    GmmScore { weights: Vec<f64>, means: Vec<f64>, var: f64, condition_shift: f64 },
    /// Point mass at a fixed target field; epsilon prediction is
    /// `(x_k - sqrt(alpha_bar_k) * target) / sqrt(1 - alpha_bar_k)`.
    BandTexture { target: LatentMap },
}

/// One denoiser: a clean-data model plus its condition id. The guidance
/// scale is carried so run configurations can record it, but the analytic
/// scores are exact and never approximate a guided combination, so it does
/// not enter any computation here.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    pub condition: i64,
    pub guidance_scale: f64,
}

pub const DEFAULT_GUIDANCE_SCALE: f64 = 3.5;

impl DenoiserSpec {
    pub fn gaussian(
        mean: f64,
        condition_shift: f64,
        covariance: Covariance,
        condition: i64,
        guidance_scale: f64,
    ) -> Result<Self> {
        covariance.validate()?;
        Ok(Self {
            kind: DenoiserKind::GaussianScore { mean, condition_shift, covariance },
            condition,
            guidance_scale,
        })
    }

    pub fn gmm(
        weights: Vec<f64>,
        means: Vec<f64>,
        var: f64,
        condition_shift: f64,
        condition: i64,
        guidance_scale: f64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::Domain(format!(
                "mixture needs matching weights/means, got {} vs {}",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Domain("mixture weights must be positive".into()));
        }
        if !(var > 0.0) {
            return Err(Error::Numerical(format!("mixture variance must be positive, got {var}")));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            kind: DenoiserKind::GmmScore { weights, means, var, condition_shift },
            condition,
            guidance_scale,
        })
    }

    pub fn band_texture(
        profile: &BandProfile,
        condition: i64,
        guidance_scale: f64,
        channels: usize,
        height: usize,
        width: usize,
        seed: u64,
    ) -> Result<Self> {
        let target = band_texture_target(profile, condition, channels, height, width, seed)?;
        Ok(Self { kind: DenoiserKind::BandTexture { target }, condition, guidance_scale })
    }

    pub fn from_target(target: LatentMap, condition: i64) -> Self {
        Self { kind: DenoiserKind::BandTexture { target }, condition, guidance_scale: 1.0 }
    }

    /// Exact score of the `t`-noised marginal of the clean distribution,
    /// optionally clipped to `bound` in L2 norm.
    pub fn score(
        &self,
        x: &LatentMap,
        t: f64,
        schedule: &DiffusionSchedule,
        bound: Option<&ScoreBound>,
    ) -> Result<LatentMap> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, 1]")));
        }
        let abar = schedule.alpha_bar_at(t);
        let mut s = match &self.kind {
            DenoiserKind::GaussianScore { mean, condition_shift, covariance } => {
                covariance.validate()?;
                let m = mean + condition_shift * self.condition as f64;
                let centered_mean = abar.sqrt() * m;
                match covariance {
                    Covariance::Isotropic { var } => {
                        let denom = abar * var + (1.0 - abar);
                        let mut out = LatentMap::zeros(x.channels(), x.height(), x.width());
                        for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                            *o = (-(v as f64 - centered_mean) / denom) as f32;
                        }
                        out
                    }
                    Covariance::ColumnSmoothed { .. } => {
                        let chol = covariance.marginal(x.width(), abar).cholesky()?;
                        let mut out = LatentMap::zeros(x.channels(), x.height(), x.width());
                        let w = x.width();
                        let mut row = vec![0.0f64; w];
                        for ch in 0..x.channels() {
                            for r in 0..x.height() {
                                for c in 0..w {
                                    row[c] = x.get(ch, r, c) as f64 - centered_mean;
                                }
                                chol.solve(&mut row);
                                for c in 0..w {
                                    out.set(ch, r, c, (-row[c]) as f32);
                                }
                            }
                        }
                        out
                    }
                }
            }
            DenoiserKind::GmmScore { weights, means, var, condition_shift } => {
                let s2 = abar * var + (1.0 - abar);
                let shift = condition_shift * self.condition as f64;
                let comp_means: Vec<f64> =
                    means.iter().map(|m| abar.sqrt() * (m + shift)).collect();
                // responsibilities over the joint vector; shared variance, so
                // normalization constants cancel
                let mut logits: Vec<f64> = Vec::with_capacity(weights.len());
                for (w, cm) in weights.iter().zip(&comp_means) {
                    let mut sq = 0.0;
                    for &v in x.data() {
                        let d = v as f64 - cm;
                        sq += d * d;
                    }
                    logits.push(w.ln() - 0.5 * sq / s2);
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                let posterior_mean: f64 = logits
                    .iter()
                    .zip(&comp_means)
                    .map(|(l, cm)| (l - mx).exp() / z * cm)
                    .sum();
                let mut out = LatentMap::zeros(x.channels(), x.height(), x.width());
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o = (-(v as f64 - posterior_mean) / s2) as f32;
                }
                out
            }
            DenoiserKind::BandTexture { target } => {
                if !target.same_shape(x) {
                    return Err(Error::Shape(format!(
                        "target shape {:?} does not match input {:?}",
                        target.shape(),
                        x.shape()
                    )));
                }
                let one_minus = 1.0 - abar;
                if one_minus <= 0.0 {
                    return Err(Error::Numerical(
                        "point-mass score is undefined at t = 0".into(),
                    ));
                }
                let root = abar.sqrt();
                let mut out = LatentMap::zeros(x.channels(), x.height(), x.width());
                for ((o, &v), &g) in out.data_mut().iter_mut().zip(x.data()).zip(target.data()) {
                    *o = (-(v as f64 - root * g as f64) / one_minus) as f32;
                }
                out
            }
        };
        if let Some(b) = bound {
            let norm = l2_norm(&s);
            if norm > b.max_norm() {
                let scale = b.max_norm() / norm;
                for v in s.data_mut() {
                    *v = (*v as f64 * scale) as f32;
                }
            }
        }
        Ok(s)
    }

    /// Epsilon prediction at grid step `k` via the score identity
    /// `eps = -sqrt(1 - alpha_bar) * score`.
    pub fn eps_hat(
        &self,
        x: &LatentMap,
        k: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<LatentMap> {
        if k == 0 || k > schedule.steps() {
            return Err(Error::Schedule(format!(
                "step {k} outside [1, {}]",
                schedule.steps()
            )));
        }
        let abar = schedule.alpha_bar(k);
        let coeff = (1.0 - abar).sqrt();
        let mut s = self.score(x, schedule.t_of(k), schedule, None)?;
        for v in s.data_mut() {
            *v = (-(coeff * *v as f64)) as f32;
        }
        Ok(s)
    }
}

pub fn l2_norm(map: &LatentMap) -> f64 {
    map.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

pub fn l2_distance(a: &LatentMap, b: &LatentMap) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Deterministic DDIM update from grid step `k` to `k_prev`.
pub fn ddim_step(
    x_k: &LatentMap,
    eps_hat: &LatentMap,
    k: usize,
    k_prev: usize,
    schedule: &DiffusionSchedule,
) -> Result<LatentMap> {
    if k_prev >= k || k > schedule.steps() {
        return Err(Error::Schedule(format!(
            "need steps {k} > {k_prev} within [0, {}]",
            schedule.steps()
        )));
    }
    if !x_k.same_shape(eps_hat) {
        return Err(Error::Shape(format!(
            "state {:?} and eps {:?} differ",
            x_k.shape(),
            eps_hat.shape()
        )));
    }
    let abar_k = schedule.alpha_bar(k);
    let abar_p = schedule.alpha_bar(k_prev);
    let (rk, rp) = (abar_k.sqrt(), abar_p.sqrt());
    let (sk, sp) = ((1.0 - abar_k).sqrt(), (1.0 - abar_p).sqrt());
    let mut out = LatentMap::zeros(x_k.channels(), x_k.height(), x_k.width());
    for ((o, &xv), &ev) in out.data_mut().iter_mut().zip(x_k.data()).zip(eps_hat.data()) {
        let x0 = (xv as f64 - sk * ev as f64) / rk;
        *o = (rp * x0 + sp * ev as f64) as f32;
    }
    Ok(out)
}

/// One DDIM step of the configured denoiser from grid step `k` to `k - 1`.
pub fn denoise_one_step(
    spec: &DenoiserSpec,
    x_k: &LatentMap,
    k: usize,
    schedule: &DiffusionSchedule,
) -> Result<LatentMap> {
    let eps = spec.eps_hat(x_k, k, schedule)?;
    ddim_step(x_k, &eps, k, k - 1, schedule)
}

/// One Euler-Maruyama step of the reverse SDE
/// `dx = (-beta/2 * x - beta * score) dt + sqrt(beta) dW` with `dt < 0`.
pub fn em_reverse_step(
    spec: &DenoiserSpec,
    x: &LatentMap,
    t: f64,
    dt: f64,
    schedule: &DiffusionSchedule,
    bound: Option<&ScoreBound>,
    noise_draw: &LatentMap,
) -> Result<LatentMap> {
    if !(dt < 0.0) {
        return Err(Error::Domain(format!("reverse step needs dt < 0, got {dt}")));
    }
    if !(0.0..=1.0).contains(&t) || t + dt < -1e-12 {
        return Err(Error::Domain(format!("interval [{}, {t}] leaves [0, 1]", t + dt)));
    }
    if !x.same_shape(noise_draw) {
        return Err(Error::Shape(format!(
            "state {:?} and noise {:?} differ",
            x.shape(),
            noise_draw.shape()
        )));
    }
    let beta = schedule.beta(t);
    let s = spec.score(x, t, schedule, bound)?;
    let diff = (beta * dt.abs()).sqrt();
    let mut out = LatentMap::zeros(x.channels(), x.height(), x.width());
    for (((o, &xv), &sv), &nv) in
        out.data_mut().iter_mut().zip(x.data()).zip(s.data()).zip(noise_draw.data())
    {
        let drift = -0.5 * beta * xv as f64 - beta * sv as f64;
        *o = (xv as f64 + drift * dt + diff * nv as f64) as f32;
    }
    Ok(out)
}
