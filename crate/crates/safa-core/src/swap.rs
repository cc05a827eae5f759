//! Overlap merge operators.
//!
//! Two families merge the competing contents of a shared region:
//!
//! * weighted blends (uniform or triangular ramps), which average the two
//!   candidates column by column;
//! * hard swaps, which copy each element unchanged from exactly one
//!   candidate according to a binary alternating mask.
//!
//! The swap mask alternates in runs of `interval` along one axis: position
//! `i` (1-based) carries `(1 - (-1)^floor((i-1)/interval)) / 2`, i.e. the
//! first `interval` entries are 0, the next `interval` are 1, and so on.
//! The same pattern is broadcast across the other axis and across channels.

use crate::error::{Error, Result};
use crate::grid::LatentMap;

/// Axis along which the alternating pattern runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOrientation {
    /// Pattern varies with the column index; rows are identical.
    ColumnAlternating,
    /// Pattern varies with the row index; columns are identical.
    RowAlternating,
}

/// Binary selection mask over a `rows x cols` region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapMask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl SwapMask {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    /// Flips every entry.
    pub fn complement(&self) -> SwapMask {
        SwapMask {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&b| 1 - b).collect(),
        }
    }

    pub fn ones_count(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    /// Fraction of zero entries (the share kept from the second operand).
    pub fn zeros_fraction(&self) -> f64 {
        1.0 - self.ones_count() as f64 / self.data.len() as f64
    }
}

/// Builds the alternating selection mask.
pub fn make_swap_mask(
    rows: usize,
    cols: usize,
    interval: usize,
    orientation: MaskOrientation,
) -> Result<SwapMask> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("mask must be non-empty, got {rows}x{cols}")));
    }
    if interval == 0 {
        return Err(Error::Domain("swap interval must be at least 1".into()));
    }
    let pattern = |i: usize| -> u8 { (((i - 1) / interval) % 2) as u8 };
    let mut data = Vec::with_capacity(rows * cols);
    for row in 1..=rows {
        for col in 1..=cols {
            let i = match orientation {
                MaskOrientation::ColumnAlternating => col,
                MaskOrientation::RowAlternating => row,
            };
            data.push(pattern(i));
        }
    }
    Ok(SwapMask { rows, cols, data })
}

fn check_pair(a: &LatentMap, b: &LatentMap) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "operand shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_mask(a: &LatentMap, mask: &SwapMask) -> Result<()> {
    if mask.rows() != a.height() || mask.cols() != a.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} does not cover region {}x{}",
            mask.rows(),
            mask.cols(),
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

/// Hard selection: each element is copied bit-exactly from `left_contrib`
/// where the mask is 1 and from `right_contrib` where it is 0. For an
/// overlap between subviews `i` and `i+1`, `left_contrib` is the right
/// band of subview `i` and `right_contrib` the left band of subview `i+1`.
pub fn swap_merge(
    left_contrib: &LatentMap,
    right_contrib: &LatentMap,
    mask: &SwapMask,
) -> Result<LatentMap> {
    check_pair(left_contrib, right_contrib)?;
    check_mask(left_contrib, mask)?;
    let (c, h, w) = left_contrib.shape();
    let mut out = LatentMap::zeros(c, h, w);
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                let v = if mask.get(row, col) == 1 {
                    left_contrib.get(ch, row, col)
                } else {
                    right_contrib.get(ch, row, col)
                };
                out.set(ch, row, col, v);
            }
        }
    }
    Ok(out)
}

/// Per-column blend weights for the left operand of a weighted merge.
/// The right operand gets the complement, so each column's pair sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights {
    left_weights: Vec<f64>,
}

impl BlendWeights {
    /// Plain averaging: every column weighs both sides at 1/2.
    pub fn uniform(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Shape("blend width must be positive".into()));
        }
        Ok(Self { left_weights: vec![0.5; width] })
    }

    /// Linear ramp `1 - (j + 1/2) / width`, fading the left contribution
    /// out across the overlap. Endpoints avoid exact 0 and 1 so both sides
    /// always contribute.
    pub fn triangular(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Shape("blend width must be positive".into()));
        }
        let left_weights = (0..width)
            .map(|j| 1.0 - (j as f64 + 0.5) / width as f64)
            .collect();
        Ok(Self { left_weights })
    }

    pub fn left_weights(&self) -> &[f64] {
        &self.left_weights
    }

    pub fn width(&self) -> usize {
        self.left_weights.len()
    }
}

/// Column-wise convex blend of the two candidates.
pub fn weighted_merge(
    left_contrib: &LatentMap,
    right_contrib: &LatentMap,
    weights: &BlendWeights,
) -> Result<LatentMap> {
    check_pair(left_contrib, right_contrib)?;
    if weights.width() != left_contrib.width() {
        return Err(Error::Shape(format!(
            "blend width {} does not cover region width {}",
            weights.width(),
            left_contrib.width()
        )));
    }
    let (c, h, w) = left_contrib.shape();
    let mut out = LatentMap::zeros(c, h, w);
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                let wl = weights.left_weights[col];
                let v = wl * left_contrib.get(ch, row, col) as f64
                    + (1.0 - wl) * right_contrib.get(ch, row, col) as f64;
                out.set(ch, row, col, v as f32);
            }
        }
    }
    Ok(out)
}

/// Reference-guided variant of the hard swap: mask 1 selects the reference
/// trajectory's band, mask 0 keeps the subview's own content.
pub fn reference_guided_merge(
    reference_mid: &LatentMap,
    subview_mid: &LatentMap,
    mask: &SwapMask,
) -> Result<LatentMap> {
    swap_merge(reference_mid, subview_mid, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal transcription of the alternating-mask definition, kept
    /// independent of the modular-arithmetic implementation.
    fn mask_value_oracle(i: usize, interval: usize) -> u8 {
        let exponent = (i - 1) / interval;
        let sign = (-1.0f64).powi(exponent as i32);
        ((1.0 - sign) / 2.0) as u8
    }

    #[test]
    fn column_mask_matches_oracle_examples() {
        let m = make_swap_mask(1, 4, 1, MaskOrientation::ColumnAlternating).unwrap();
        let got: Vec<u8> = (0..4).map(|c| m.get(0, c)).collect();
        assert_eq!(got, vec![0, 1, 0, 1]);

        let m = make_swap_mask(1, 6, 2, MaskOrientation::ColumnAlternating).unwrap();
        let got: Vec<u8> = (0..6).map(|c| m.get(0, c)).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 0, 0]);
    }

    #[test]
    fn masks_agree_with_literal_formula_exhaustively() {
        for rows in 1..=16 {
            for cols in 1..=16 {
                for interval in 1..=8 {
                    for orientation in
                        [MaskOrientation::ColumnAlternating, MaskOrientation::RowAlternating]
                    {
                        let m = make_swap_mask(rows, cols, interval, orientation).unwrap();
                        for r in 0..rows {
                            for c in 0..cols {
                                let i = match orientation {
                                    MaskOrientation::ColumnAlternating => c + 1,
                                    MaskOrientation::RowAlternating => r + 1,
                                };
                                assert_eq!(
                                    m.get(r, c),
                                    mask_value_oracle(i, interval),
                                    "rows={rows} cols={cols} w={interval} at ({r},{c})"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn row_orientation_transposes_the_pattern() {
        let col = make_swap_mask(5, 5, 2, MaskOrientation::ColumnAlternating).unwrap();
        let row = make_swap_mask(5, 5, 2, MaskOrientation::RowAlternating).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(col.get(r, c), row.get(c, r));
            }
        }
    }

    #[test]
    fn complement_is_an_involution_and_flips_everything() {
        let m = make_swap_mask(8, 8, 3, MaskOrientation::ColumnAlternating).unwrap();
        let n = m.complement();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(m.get(r, c) + n.get(r, c), 1);
            }
        }
        assert_eq!(n.complement(), m);
    }

    #[test]
    fn swap_merge_interleaves_hard_values() {
        let ones = LatentMap::from_vec(1, 1, 4, vec![1.0; 4]).unwrap();
        let zeros = LatentMap::zeros(1, 1, 4);
        let mask = make_swap_mask(1, 4, 1, MaskOrientation::ColumnAlternating).unwrap();
        let merged = swap_merge(&ones, &zeros, &mask).unwrap();
        let got: Vec<f32> = (0..4).map(|c| merged.get(0, 0, c)).collect();
        assert_eq!(got, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn every_merged_element_comes_from_exactly_one_side() {
        let a = LatentMap::standard_normal(4, 4, 4, 21);
        let b = LatentMap::standard_normal(4, 4, 4, 22);
        for interval in [1, 2, 3] {
            let mask = make_swap_mask(4, 4, interval, MaskOrientation::RowAlternating).unwrap();
            let merged = swap_merge(&a, &b, &mask).unwrap();
            for ch in 0..4 {
                for r in 0..4 {
                    for c in 0..4 {
                        let v = merged.get(ch, r, c).to_bits();
                        let (av, bv) = (a.get(ch, r, c).to_bits(), b.get(ch, r, c).to_bits());
                        assert!(v == av || v == bv);
                        let expect = if mask.get(r, c) == 1 { av } else { bv };
                        assert_eq!(v, expect);
                    }
                }
            }
        }
    }

    #[test]
    fn swap_commutes_with_operand_and_mask_complement() {
        let a = LatentMap::standard_normal(2, 3, 6, 31);
        let b = LatentMap::standard_normal(2, 3, 6, 32);
        let mask = make_swap_mask(3, 6, 2, MaskOrientation::ColumnAlternating).unwrap();
        let lhs = swap_merge(&a, &b, &mask).unwrap();
        let rhs = swap_merge(&b, &a, &mask.complement()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn swap_is_idempotent_on_equal_operands() {
        let a = LatentMap::standard_normal(2, 3, 6, 41);
        let mask = make_swap_mask(3, 6, 1, MaskOrientation::ColumnAlternating).unwrap();
        assert_eq!(swap_merge(&a, &a, &mask).unwrap(), a);
    }

    #[test]
    fn uniform_blend_averages() {
        let ones = LatentMap::from_vec(1, 1, 4, vec![1.0; 4]).unwrap();
        let zeros = LatentMap::zeros(1, 1, 4);
        let w = BlendWeights::uniform(4).unwrap();
        let merged = weighted_merge(&ones, &zeros, &w).unwrap();
        assert!(merged.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn triangular_ramp_values() {
        let w = BlendWeights::triangular(3).unwrap();
        let expect = [5.0 / 6.0, 0.5, 1.0 / 6.0];
        for (got, want) in w.left_weights().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        let ones = LatentMap::from_vec(1, 1, 3, vec![1.0; 3]).unwrap();
        let zeros = LatentMap::zeros(1, 1, 3);
        let merged = weighted_merge(&ones, &zeros, &w).unwrap();
        let got: Vec<f32> = (0..3).map(|c| merged.get(0, 0, c)).collect();
        for (g, want) in got.iter().zip(expect) {
            assert!((*g as f64 - want).abs() < 1e-7);
        }
    }

    #[test]
    fn complementary_column_weights_sum_to_one() {
        for width in 1..=64 {
            let w = BlendWeights::triangular(width).unwrap();
            for (j, &lw) in w.left_weights().iter().enumerate() {
                assert!((0.0..=1.0).contains(&lw), "width {width} col {j}");
                let rw = 1.0 - lw;
                assert!((lw + rw - 1.0).abs() < 1e-15);
            }
            // symmetric ramp: reversing the columns swaps the roles
            let rev: Vec<f64> = w.left_weights().iter().rev().map(|x| 1.0 - x).collect();
            for (a, b) in w.left_weights().iter().zip(rev) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn weighted_merge_is_idempotent_on_equal_operands() {
        let a = LatentMap::standard_normal(2, 3, 5, 51);
        for w in [BlendWeights::uniform(5).unwrap(), BlendWeights::triangular(5).unwrap()] {
            assert_eq!(weighted_merge(&a, &a, &w).unwrap(), a);
        }
    }

    #[test]
    fn guided_merge_keeps_unmasked_rows() {
        let reference = LatentMap::from_vec(1, 4, 2, vec![9.0; 8]).unwrap();
        let own = LatentMap::zeros(1, 4, 2);
        let mask = make_swap_mask(4, 2, 1, MaskOrientation::RowAlternating).unwrap();
        let merged = reference_guided_merge(&reference, &own, &mask).unwrap();
        // rows 1-based: row 1 -> 0 (own), row 2 -> 1 (reference), ...
        for col in 0..2 {
            assert_eq!(merged.get(0, 0, col), 0.0);
            assert_eq!(merged.get(0, 1, col), 9.0);
            assert_eq!(merged.get(0, 2, col), 0.0);
            assert_eq!(merged.get(0, 3, col), 9.0);
        }
        // exactly half the rows come from the reference
        let from_ref = (0..4).filter(|&r| merged.get(0, r, 0) == 9.0).count();
        assert_eq!(from_ref, 2);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let a = LatentMap::zeros(1, 2, 4);
        let b = LatentMap::zeros(1, 2, 5);
        let mask = make_swap_mask(2, 4, 1, MaskOrientation::ColumnAlternating).unwrap();
        assert!(matches!(swap_merge(&a, &b, &mask), Err(Error::Shape(_))));
        let short = make_swap_mask(2, 3, 1, MaskOrientation::ColumnAlternating).unwrap();
        assert!(matches!(swap_merge(&a, &a, &short), Err(Error::Shape(_))));
        assert!(matches!(make_swap_mask(2, 4, 0, MaskOrientation::ColumnAlternating),
            Err(Error::Domain(_))));
    }
}
