//! Shared 2D FFT helpers and the radial frequency-binning convention.
//!
//! Frequencies are folded to `[0, 1/2]` per axis; the radius
//! `sqrt(fu^2 + fv^2)` is normalized by its maximum `sqrt(1/2)` so bins
//! partition `[0, 1]` into equal-width annuli. Bin 0 always contains DC.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Annulus index of frequency cell `(u, v)` of an `h x w` transform.
pub fn radial_bin(u: usize, v: usize, h: usize, w: usize, bins: usize) -> usize {
    let fu = u.min(h - u) as f64 / h as f64;
    let fv = v.min(w - v) as f64 / w as f64;
    let r = (fu * fu + fv * fv).sqrt() / 0.5f64.sqrt();
    ((r * bins as f64) as usize).min(bins - 1)
}

/// In-place 2D FFT over a row-major `h x w` buffer.
pub fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    assert_eq!(buf.len(), h * w);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex::default(); h];
    for v in 0..w {
        for u in 0..h {
            col[u] = buf[u * w + v];
        }
        col_fft.process(&mut col);
        for u in 0..h {
            buf[u * w + v] = col[u];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

/// Forward transform of a real field; returns the complex spectrum.
pub fn fft2_real(field: &[f32], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> =
        field.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    fft2(&mut buf, h, w, false);
    buf
}

/// Mean spectral magnitude per radial annulus. Returns `(means, counts)`.
pub fn radial_magnitude_means(
    spectrum: &[Complex<f64>],
    h: usize,
    w: usize,
    bins: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for u in 0..h {
        for v in 0..w {
            let b = radial_bin(u, v, h, w, bins);
            sums[b] += spectrum[u * w + v].norm();
            counts[b] += 1;
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    (means, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_lands_in_bin_zero_and_nyquist_in_the_top_bin() {
        assert_eq!(radial_bin(0, 0, 16, 16, 32), 0);
        assert_eq!(radial_bin(8, 8, 16, 16, 32), 31);
    }

    #[test]
    fn folding_is_symmetric() {
        for u in 0..16 {
            for v in 0..24 {
                let b = radial_bin(u, v, 16, 24, 8);
                let b_mirror = radial_bin((16 - u) % 16, (24 - v) % 24, 16, 24, 8);
                assert_eq!(b, b_mirror);
            }
        }
    }

    #[test]
    fn forward_then_inverse_recovers_the_field() {
        let field: Vec<f32> = (0..6 * 10).map(|i| ((i * 37 % 11) as f32) - 5.0).collect();
        let mut buf = fft2_real(&field, 6, 10);
        fft2(&mut buf, 6, 10, true);
        for (orig, z) in field.iter().zip(&buf) {
            assert!((z.re - *orig as f64).abs() < 1e-10);
            assert!(z.im.abs() < 1e-10);
        }
    }

    #[test]
    fn pure_cosine_concentrates_in_one_annulus() {
        let (h, w) = (16, 16);
        let field: Vec<f32> = (0..h * w)
            .map(|i| {
                let col = i % w;
                (2.0 * std::f64::consts::PI * 4.0 * col as f64 / w as f64).cos() as f32
            })
            .collect();
        let spec = fft2_real(&field, h, w);
        let (means, _) = radial_magnitude_means(&spec, h, w, 8);
        let expected_bin = radial_bin(0, 4, h, w, 8);
        let peak = means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, expected_bin);
    }
}
