//! Spectral and consistency diagnostics for generated canvases.
//!
//! Frequency content is summarized as a relative log-amplitude curve over
//! radial bins; a channel-wise linear mapping relates a downsampled canvas
//! to a coarse code and back; seam energy and cross-view distance quantify
//! stitching artifacts and inter-subview diversity.

use crate::error::{Error, Result};
use crate::grid::{extract_subview, LatentMap, RegionRange, SubviewLayout};
use crate::spectral::{fft2_real, radial_magnitude_means};
use nalgebra::DMatrix;
use std::io::Write;
use std::path::Path;

pub const DEFAULT_SPECTRUM_BINS: usize = 32;
const LOG_FLOOR: f64 = 1e-12;
const CROSS_VIEW_SPECTRUM_BINS: usize = 8;

/// Relative log-amplitude per radial frequency bin; bin 0 is the
/// normalization reference and is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    pub values: Vec<f64>,
}

impl SpectrumCurve {
    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bin_index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "{i},{v}")?;
        }
        Ok(())
    }
}

/// Radially binned 2D amplitude spectrum, log10-scaled relative to the
/// lowest-frequency bin and averaged over channels.
///
/// `region`, when given, selects a column range before analysis. Bins that
/// contain no grid frequency, and bins whose amplitude vanishes, sit at the
/// log floor instead of diverging.
pub fn relative_log_amplitude(
    map: &LatentMap,
    region: Option<RegionRange>,
) -> Result<SpectrumCurve> {
    relative_log_amplitude_with_bins(map, region, DEFAULT_SPECTRUM_BINS)
}

pub fn relative_log_amplitude_with_bins(
    map: &LatentMap,
    region: Option<RegionRange>,
    bins: usize,
) -> Result<SpectrumCurve> {
    if bins == 0 {
        return Err(Error::Domain("need at least one frequency bin".into()));
    }
    let (start, end) = match region {
        Some(r) => {
            if r.start > r.end || r.end > map.width() {
                return Err(Error::Geometry(format!(
                    "region [{}, {}) outside canvas width {}",
                    r.start,
                    r.end,
                    map.width()
                )));
            }
            (r.start, r.end)
        }
        None => (0, map.width()),
    };
    let w = end - start;
    let h = map.height();
    if w < 8 {
        return Err(Error::DegenerateInput(format!("region width {w} below 8 columns")));
    }
    if (0..map.channels())
        .all(|c| (0..h).all(|r| (start..end).all(|col| map.get(c, r, col) == 0.0)))
    {
        return Err(Error::DegenerateInput("region is identically zero".into()));
    }

    let mut acc = vec![0.0f64; bins];
    let mut field = vec![0.0f32; h * w];
    for ch in 0..map.channels() {
        for r in 0..h {
            for (i, col) in (start..end).enumerate() {
                field[r * w + i] = map.get(ch, r, col);
            }
        }
        let spectrum = fft2_real(&field, h, w);
        let (means, _) = radial_magnitude_means(&spectrum, h, w, bins);
        let b0 = means[0];
        if b0 == 0.0 {
            return Err(Error::DegenerateInput(
                "lowest-frequency bin carries no amplitude".into(),
            ));
        }
        for (a, m) in acc.iter_mut().zip(&means) {
            *a += (m / b0).max(LOG_FLOOR).log10();
        }
    }
    let n = map.channels() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(SpectrumCurve { values: acc })
}

/// Mean loss of relative log amplitude over the top quartile of bins;
/// positive when `overlap` lost high frequencies relative to `reference`.
pub fn hf_suppression_index(overlap: &SpectrumCurve, reference: &SpectrumCurve) -> Result<f64> {
    if overlap.bins() != reference.bins() {
        return Err(Error::Shape(format!(
            "curves have {} vs {} bins",
            overlap.bins(),
            reference.bins()
        )));
    }
    let bins = overlap.bins();
    let q = (bins / 4).max(1);
    let lo = bins - q;
    let sum: f64 = (lo..bins).map(|b| reference.values[b] - overlap.values[b]).sum();
    Ok(sum / q as f64)
}

/// Channel-wise linear map from a coarse code to a downsampled canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMapping {
    pub w_c: DMatrix<f64>,
    pub fit_residual: f64,
}

/// Least-squares fit of `x_down ~ W * z` treating every spatial site as one
/// observation. Residual is relative in Frobenius norm.
pub fn fit_channel_mapping(x_down: &LatentMap, z: &LatentMap) -> Result<ChannelMapping> {
    if x_down.height() != z.height() || x_down.width() != z.width() {
        return Err(Error::Shape(format!(
            "spatial dims differ: {:?} vs {:?}",
            x_down.shape(),
            z.shape()
        )));
    }
    let (cx, cz) = (x_down.channels(), z.channels());
    let sites = x_down.height() * x_down.width();
    let site = |m: &LatentMap, ch: usize, s: usize| -> f64 {
        m.get(ch, s / m.width(), s % m.width()) as f64
    };

    let mut zzt = DMatrix::<f64>::zeros(cz, cz);
    let mut xzt = DMatrix::<f64>::zeros(cx, cz);
    for s in 0..sites {
        for a in 0..cz {
            let za = site(z, a, s);
            for b in a..cz {
                zzt[(a, b)] += za * site(z, b, s);
            }
            for c in 0..cx {
                xzt[(c, a)] += site(x_down, c, s) * za;
            }
        }
    }
    for a in 0..cz {
        for b in 0..a {
            zzt[(a, b)] = zzt[(b, a)];
        }
    }
    let chol = nalgebra::Cholesky::new(zzt)
        .ok_or_else(|| Error::Rank("site matrix is rank-deficient".into()))?;
    // W solves W (Z Z^T) = X Z^T; the normal matrix is symmetric
    let w_c = chol.solve(&xzt.transpose()).transpose();

    let mut err = 0.0;
    let mut total = 0.0;
    for s in 0..sites {
        for c in 0..cx {
            let mut pred = 0.0;
            for a in 0..cz {
                pred += w_c[(c, a)] * site(z, a, s);
            }
            let x = site(x_down, c, s);
            err += (x - pred) * (x - pred);
            total += x * x;
        }
    }
    let fit_residual = if total > 0.0 { (err / total).sqrt() } else { 0.0 };
    Ok(ChannelMapping { w_c, fit_residual })
}

/// Recover the coarse code from a downsampled canvas by applying the
/// pseudoinverse of the fitted mapping per spatial site.
pub fn invert_channel_mapping(mapping: &ChannelMapping, x_down: &LatentMap) -> Result<LatentMap> {
    let (cx, cz) = (mapping.w_c.nrows(), mapping.w_c.ncols());
    if x_down.channels() != cx {
        return Err(Error::Shape(format!(
            "mapping expects {cx} channels, canvas has {}",
            x_down.channels()
        )));
    }
    let wtw = mapping.w_c.transpose() * &mapping.w_c;
    let chol = nalgebra::Cholesky::new(wtw)
        .ok_or_else(|| Error::Singular("mapping columns are linearly dependent".into()))?;
    let (h, w) = (x_down.height(), x_down.width());
    let mut out = LatentMap::zeros(cz, h, w);
    let mut xv = nalgebra::DVector::<f64>::zeros(cx);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..cx {
                xv[ch] = x_down.get(ch, r, c) as f64;
            }
            let z = chol.solve(&(mapping.w_c.transpose() * &xv));
            for ch in 0..cz {
                out.set(ch, r, c, z[ch] as f32);
            }
        }
    }
    Ok(out)
}

/// Non-overlapping average pooling per channel.
pub fn downsample(x: &LatentMap, factor: usize) -> Result<LatentMap> {
    if factor == 0 {
        return Err(Error::Shape("pooling factor must be positive".into()));
    }
    if x.height() % factor != 0 || x.width() % factor != 0 {
        return Err(Error::Shape(format!(
            "shape {}x{} not divisible by factor {factor}",
            x.height(),
            x.width()
        )));
    }
    let (h, w) = (x.height() / factor, x.width() / factor);
    let mut out = LatentMap::zeros(x.channels(), h, w);
    let inv = 1.0 / (factor * factor) as f64;
    for ch in 0..x.channels() {
        for r in 0..h {
            for c in 0..w {
                let mut s = 0.0f64;
                for dr in 0..factor {
                    for dc in 0..factor {
                        s += x.get(ch, r * factor + dr, c * factor + dc) as f64;
                    }
                }
                out.set(ch, r, c, (s * inv) as f32);
            }
        }
    }
    Ok(out)
}

fn column_msd(j: &LatentMap, c1: usize, c2: usize) -> f64 {
    let mut s = 0.0;
    for ch in 0..j.channels() {
        for r in 0..j.height() {
            let d = j.get(ch, r, c2) as f64 - j.get(ch, r, c1) as f64;
            s += d * d;
        }
    }
    s / (j.channels() * j.height()) as f64
}

/// Excess column-to-column discontinuity at overlap entry columns.
///
/// For each adjacent subview pair the boundary column is where the later
/// subview's influence begins. The mean squared difference across those
/// boundaries, minus the canvas-wide mean over all adjacent column pairs,
/// is 0 when seams are indistinguishable from interior texture.
pub fn seam_energy(j: &LatentMap, layout: &SubviewLayout) -> Result<f64> {
    if j.width() != layout.total_width {
        return Err(Error::Geometry(format!(
            "canvas width {} does not match layout width {}",
            j.width(),
            layout.total_width
        )));
    }
    let pairs = layout.pair_count();
    if pairs == 0 || j.width() < 2 {
        return Ok(0.0);
    }
    let mut boundary = 0.0;
    for p in 0..pairs {
        let b = layout.overlap_start(p);
        let prev = if b == 0 { layout.total_width - 1 } else { b - 1 };
        boundary += column_msd(j, prev, b);
    }
    boundary /= pairs as f64;

    let wrap = if layout.circular { 1 } else { 0 };
    let mut base = 0.0;
    for c in 0..j.width() - 1 {
        base += column_msd(j, c, c + 1);
    }
    if wrap == 1 {
        base += column_msd(j, j.width() - 1, 0);
    }
    base /= (j.width() - 1 + wrap) as f64;
    Ok(boundary - base)
}

fn subview_features(x: &LatentMap) -> Vec<f64> {
    let n = (x.height() * x.width()) as f64;
    let mut features = Vec::with_capacity(2 * x.channels() + CROSS_VIEW_SPECTRUM_BINS);
    let mut spectrum_acc = vec![0.0f64; CROSS_VIEW_SPECTRUM_BINS];
    let mut field = vec![0.0f32; x.height() * x.width()];
    let mut vars = Vec::with_capacity(x.channels());
    for ch in 0..x.channels() {
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for r in 0..x.height() {
            for c in 0..x.width() {
                let v = x.get(ch, r, c) as f64;
                sum += v;
                sumsq += v * v;
                field[r * x.width() + c] = v as f32;
            }
        }
        let mean = sum / n;
        features.push(mean);
        vars.push(sumsq / n - mean * mean);
        let spec = fft2_real(&field, x.height(), x.width());
        let (means, _) =
            radial_magnitude_means(&spec, x.height(), x.width(), CROSS_VIEW_SPECTRUM_BINS);
        for (a, m) in spectrum_acc.iter_mut().zip(&means) {
            *a += m / x.channels() as f64;
        }
    }
    features.extend(vars);
    features.extend(spectrum_acc);
    features
}

/// Mean normalized distance between per-subview feature summaries
/// (channel means, channel variances, radial amplitude spectrum).
pub fn cross_view_distance(j: &LatentMap, layout: &SubviewLayout) -> Result<f64> {
    if layout.count < 2 {
        return Err(Error::Domain("cross-view distance needs at least two subviews".into()));
    }
    let feats: Vec<Vec<f64>> = (0..layout.count)
        .map(|i| extract_subview(j, layout, i).map(|x| subview_features(&x)))
        .collect::<Result<_>>()?;
    let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..feats.len() {
        for b in a + 1..feats.len() {
            let d: f64 = feats[a]
                .iter()
                .zip(&feats[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let scale = 0.5 * (norm(&feats[a]) + norm(&feats[b]));
            total += if scale > 0.0 { d / scale } else { 0.0 };
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_layout, RegionKind};
    use crate::seed::stream_rng;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn filled(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> LatentMap {
        let mut m = LatentMap::zeros(c, h, w);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    m.set(ch, r, col, f(ch, r, col));
                }
            }
        }
        m
    }

    #[test]
    fn constant_field_yields_dc_only_curve() {
        let m = filled(2, 16, 16, |_, _, _| 3.0);
        let curve = relative_log_amplitude_with_bins(&m, None, 8).unwrap();
        assert_eq!(curve.values[0], 0.0);
        for v in &curve.values[1..] {
            assert_relative_eq!(*v, LOG_FLOOR.log10(), max_relative = 1e-12);
        }
    }

    #[test]
    fn sinusoid_peaks_in_its_radius_bin() {
        // column frequency 4/32 at normalized radius 0.1768 -> bin 2 of 16
        let m = filled(1, 32, 32, |_, _, c| {
            5.0 + (2.0 * std::f64::consts::PI * 4.0 * c as f64 / 32.0).cos() as f32
        });
        let curve = relative_log_amplitude_with_bins(&m, None, 16).unwrap();
        let peak = (1..16).max_by(|&a, &b| curve.values[a].total_cmp(&curve.values[b])).unwrap();
        assert_eq!(peak, 2);
    }

    #[test]
    fn white_noise_curve_is_flat_after_averaging() {
        let bins = 16;
        let mut acc = vec![0.0f64; bins];
        let seeds = 100u64;
        for seed in 0..seeds {
            let m = LatentMap::standard_normal(1, 32, 32, 7000 + seed);
            let curve = relative_log_amplitude_with_bins(&m, None, bins).unwrap();
            for (a, v) in acc.iter_mut().zip(&curve.values) {
                *a += v / seeds as f64;
            }
        }
        for (b, a) in acc.iter().enumerate() {
            assert!(a.abs() <= 0.1, "bin {b} averaged {a}");
        }
    }

    #[test]
    fn region_selects_columns() {
        // left half constant, right half noisy; selecting the constant half
        // must look like a constant field
        let mut m = LatentMap::standard_normal(1, 16, 32, 3);
        for r in 0..16 {
            for c in 0..16 {
                m.set(0, r, c, 1.0);
            }
        }
        let region = RegionRange { kind: RegionKind::Left, start: 0, end: 16 };
        let curve = relative_log_amplitude_with_bins(&m, Some(region), 8).unwrap();
        for v in &curve.values[1..] {
            assert!(*v <= LOG_FLOOR.log10() + 1e-9);
        }
        let noisy = RegionRange { kind: RegionKind::Right, start: 16, end: 32 };
        let curve = relative_log_amplitude_with_bins(&m, Some(noisy), 8).unwrap();
        assert!(curve.values[1..].iter().any(|&v| v > -1.0));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let zeros = LatentMap::zeros(1, 16, 16);
        assert!(matches!(
            relative_log_amplitude(&zeros, None),
            Err(Error::DegenerateInput(_))
        ));
        let tiny = LatentMap::standard_normal(1, 16, 16, 1);
        let narrow = RegionRange { kind: RegionKind::Left, start: 0, end: 7 };
        assert!(matches!(
            relative_log_amplitude(&tiny, Some(narrow)),
            Err(Error::DegenerateInput(_))
        ));
        let oob = RegionRange { kind: RegionKind::Left, start: 0, end: 17 };
        assert!(matches!(relative_log_amplitude(&tiny, Some(oob)), Err(Error::Geometry(_))));
    }

    #[test]
    fn mean_shift_cannot_change_curve_shape_beyond_the_reference_bin() {
        let m = LatentMap::standard_normal(2, 24, 24, 11);
        let mut shifted = m.clone();
        for v in shifted.data_mut() {
            *v += 4.0;
        }
        let a = relative_log_amplitude_with_bins(&m, None, 12).unwrap();
        let b = relative_log_amplitude_with_bins(&shifted, None, 12).unwrap();
        assert_eq!(a.values[0], 0.0);
        assert_eq!(b.values[0], 0.0);
        // normalization by the lowest band moves with the DC cell, so single
        // bins shift; pairwise differences between higher bins cannot
        for x in 2..12 {
            for y in 1..x {
                let da = a.values[x] - a.values[y];
                let db = b.values[x] - b.values[y];
                assert!((da - db).abs() < 2e-4, "bins {x},{y}: {da} vs {db}");
            }
        }
    }

    #[test]
    fn suppression_index_of_identical_curves_is_zero() {
        let c = SpectrumCurve { values: vec![0.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0] };
        assert_eq!(hf_suppression_index(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn suppression_index_measures_top_quartile_offset() {
        let reference =
            SpectrumCurve { values: vec![0.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0] };
        let mut overlap = reference.clone();
        // drop only the top quartile (bins 6 and 7) by exactly 1.0
        overlap.values[6] -= 1.0;
        overlap.values[7] -= 1.0;
        assert_relative_eq!(hf_suppression_index(&overlap, &reference).unwrap(), 1.0);
        // lower bins do not contribute
        overlap.values[1] -= 99.0;
        assert_relative_eq!(hf_suppression_index(&overlap, &reference).unwrap(), 1.0);
        let short = SpectrumCurve { values: vec![0.0] };
        assert!(hf_suppression_index(&short, &reference).is_err());
    }

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> LatentMap {
        LatentMap::standard_normal(c, h, w, seed)
    }

    #[test]
    fn channel_mapping_recovers_a_synthetic_linear_code() {
        let cz = 4;
        let z = random_map(cz, 12, 12, 21);
        // well-conditioned mixing matrix
        let mut rng = stream_rng(22, &[]);
        let mut m = DMatrix::<f64>::identity(cz, cz);
        for v in m.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += 0.3 * n;
        }
        let mut x_down = LatentMap::zeros(cz, 12, 12);
        for r in 0..12 {
            for c in 0..12 {
                for i in 0..cz {
                    let mut s = 0.0;
                    for j in 0..cz {
                        s += m[(i, j)] * z.get(j, r, c) as f64;
                    }
                    x_down.set(i, r, c, s as f32);
                }
            }
        }
        let fit = fit_channel_mapping(&x_down, &z).unwrap();
        let rel = (&fit.w_c - &m).norm() / m.norm();
        assert!(rel < 1e-6, "relative error {rel}");
        assert!(fit.fit_residual < 1e-6);
        let z_hat = invert_channel_mapping(&fit, &x_down).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in z_hat.data().iter().zip(z.data()) {
            worst = worst.max((a - b).abs() as f64 / b.abs().max(1.0) as f64);
        }
        assert!(worst < 1e-6 * 10.0, "round-trip error {worst}");
    }

    #[test]
    fn identity_code_fits_the_identity_mapping() {
        let z = random_map(3, 10, 10, 5);
        let fit = fit_channel_mapping(&z, &z).unwrap();
        let rel = (&fit.w_c - DMatrix::<f64>::identity(3, 3)).norm() / 3.0f64.sqrt();
        assert!(rel < 1e-9);
        assert!(fit.fit_residual < 1e-9);
        let back = invert_channel_mapping(&fit, &z).unwrap();
        for (a, b) in back.data().iter().zip(z.data()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-5);
        }
    }

    #[test]
    fn unrelated_code_leaves_the_residual_near_one() {
        let x = random_map(4, 32, 32, 61);
        let z = random_map(4, 32, 32, 62);
        let fit = fit_channel_mapping(&x, &z).unwrap();
        assert!(
            (0.9..=1.0).contains(&fit.fit_residual),
            "residual {}",
            fit.fit_residual
        );
    }

    #[test]
    fn consistent_overdetermined_system_recovers_exactly() {
        // 2 code channels generating 4 observed channels
        let z = random_map(2, 8, 8, 31);
        let m = DMatrix::<f64>::from_row_slice(4, 2, &[
            1.0, 0.2, //
            -0.5, 1.1, //
            0.3, 0.3, //
            0.0, -0.7,
        ]);
        let mut x = LatentMap::zeros(4, 8, 8);
        for r in 0..8 {
            for c in 0..8 {
                for i in 0..4 {
                    let s = m[(i, 0)] * z.get(0, r, c) as f64 + m[(i, 1)] * z.get(1, r, c) as f64;
                    x.set(i, r, c, s as f32);
                }
            }
        }
        let fit = fit_channel_mapping(&x, &z).unwrap();
        assert!(fit.fit_residual < 1e-6);
        let z_hat = invert_channel_mapping(&fit, &x).unwrap();
        for (a, b) in z_hat.data().iter().zip(z.data()) {
            assert_relative_eq!(*a as f64, *b as f64, epsilon = 1e-5);
        }
    }

    #[test]
    fn rank_deficient_code_is_rejected() {
        // duplicate channel makes the normal matrix singular
        let base = random_map(1, 8, 8, 71);
        let mut z = LatentMap::zeros(2, 8, 8);
        for r in 0..8 {
            for c in 0..8 {
                z.set(0, r, c, base.get(0, r, c));
                z.set(1, r, c, base.get(0, r, c));
            }
        }
        let x = random_map(2, 8, 8, 72);
        assert!(matches!(fit_channel_mapping(&x, &z), Err(Error::Rank(_))));
        // fewer sites than code channels
        let z1 = random_map(3, 1, 1, 73);
        let x1 = random_map(2, 1, 1, 74);
        assert!(matches!(fit_channel_mapping(&x1, &z1), Err(Error::Rank(_))));
    }

    #[test]
    fn dependent_mapping_columns_cannot_be_inverted() {
        let mapping = ChannelMapping {
            w_c: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            fit_residual: 0.0,
        };
        let x = random_map(2, 4, 4, 9);
        assert!(matches!(invert_channel_mapping(&mapping, &x), Err(Error::Singular(_))));
        let wrong_channels = random_map(3, 4, 4, 9);
        assert!(matches!(
            invert_channel_mapping(&mapping, &wrong_channels),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn downsample_pools_block_means() {
        let x = filled(1, 2, 2, |_, r, c| [[1.0, 3.0], [5.0, 7.0]][r][c]);
        let d = downsample(&x, 2).unwrap();
        assert_eq!(d.shape(), (1, 1, 1));
        assert_eq!(d.get(0, 0, 0), 4.0);

        let y = random_map(2, 6, 8, 15);
        assert_eq!(downsample(&y, 1).unwrap(), y);
        let constant = filled(1, 4, 4, |_, _, _| 2.5);
        let dc = downsample(&constant, 2).unwrap();
        assert!(dc.data().iter().all(|&v| v == 2.5));
        assert!(downsample(&y, 0).is_err());
        assert!(downsample(&y, 5).is_err());
    }

    #[test]
    fn downsample_preserves_the_global_mean() {
        let x = random_map(3, 12, 16, 44);
        let d = downsample(&x, 4).unwrap();
        let mean = |m: &LatentMap| m.data().iter().map(|&v| v as f64).sum::<f64>() / m.numel() as f64;
        assert_relative_eq!(mean(&x), mean(&d), epsilon = 1e-6);
    }

    #[test]
    fn smooth_canvas_has_no_seam_energy_but_a_step_does() {
        let layout = build_layout(36, 24, 0.5, false).unwrap();
        assert_eq!(layout.pair_count(), 1);
        let b = layout.overlap_start(0);
        let flat = filled(1, 6, 36, |_, _, _| 1.0);
        assert_eq!(seam_energy(&flat, &layout).unwrap(), 0.0);

        let h = 0.8f32;
        let stepped = filled(1, 6, 36, |_, _, c| if c >= b { 1.0 + h } else { 1.0 });
        let got = seam_energy(&stepped, &layout).unwrap();
        let want = (h as f64).powi(2) * (1.0 - 1.0 / 35.0);
        assert_relative_eq!(got, want, max_relative = 1e-5);
    }

    #[test]
    fn seam_energy_is_translation_invariant() {
        let layout = build_layout(40, 16, 0.25, false).unwrap();
        let j = random_map(2, 8, 40, 81);
        let mut shifted = j.clone();
        for v in shifted.data_mut() {
            *v += 7.0;
        }
        let a = seam_energy(&j, &layout).unwrap();
        let b = seam_energy(&shifted, &layout).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-4);
    }

    #[test]
    fn coherent_noise_looks_seamless_against_a_fake_boundary() {
        let layout = build_layout(64, 36, 0.222222222222, false).unwrap();
        assert_eq!(layout.count, 2);
        let j = random_map(4, 64, 64, 101);
        let e = seam_energy(&j, &layout).unwrap();
        assert!(e.abs() < 0.6, "white noise seam energy {e}");
    }

    #[test]
    fn hard_concatenation_beats_a_coherent_field_on_seam_energy() {
        // smooth column waves; the concatenated version flips phase mid-canvas
        let layout = build_layout(64, 36, 0.222222222222, false).unwrap();
        let b = layout.overlap_start(0);
        let wave = |c: usize| (2.0 * std::f64::consts::PI * c as f64 / 64.0).sin() as f32;
        let coherent = filled(1, 8, 64, |_, _, c| wave(c));
        let concat = filled(1, 8, 64, |_, _, c| if c >= b { -wave(c) } else { wave(c) });
        let e_coherent = seam_energy(&coherent, &layout).unwrap();
        let e_concat = seam_energy(&concat, &layout).unwrap();
        assert!(
            e_concat > e_coherent + 0.01,
            "concat {e_concat} vs coherent {e_coherent}"
        );
    }

    #[test]
    fn identical_subviews_have_zero_cross_view_distance() {
        let layout = build_layout(64, 16, 0.0, false).unwrap();
        assert_eq!(layout.count, 4);
        let tile = random_map(2, 8, 16, 55);
        let j = filled(2, 8, 64, |ch, r, c| tile.get(ch, r, c % 16));
        assert_eq!(cross_view_distance(&j, &layout).unwrap(), 0.0);
    }

    #[test]
    fn independent_subviews_have_positive_cross_view_distance() {
        let layout = build_layout(64, 16, 0.0, false).unwrap();
        let j = random_map(2, 8, 64, 56);
        let d = cross_view_distance(&j, &layout).unwrap();
        assert!(d > 0.01, "distance {d}");
        let single = build_layout(64, 64, 0.0, false).unwrap();
        assert!(matches!(cross_view_distance(&j, &single), Err(Error::Domain(_))));
    }

    #[test]
    fn curve_csv_has_one_line_per_bin() {
        let dir = std::env::temp_dir().join("safa_curve_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.csv");
        let c = SpectrumCurve { values: vec![0.0, -1.5, -3.0] };
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "bin_index,value");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "1,-1.5");
        std::fs::remove_dir_all(&dir).ok();
    }
}
