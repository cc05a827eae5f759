//! Canvas tiling geometry.
//!
//! A canvas is a dense `channels x height x width` tensor. Subviews are
//! fixed-width column windows placed at a constant stride; adjacent windows
//! share `subview_width - stride` columns. In circular mode windows wrap
//! around the right edge, so the last subview also overlaps the first.

use crate::error::{Error, Result};
use crate::seed::stream_rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense real-valued tensor in `(channel, row, column)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LatentMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    /// Standard-normal field drawn from a derived stream.
    pub fn standard_normal(channels: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[]);
        let data = (0..channels * height * width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { channels, height, width, data }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.data[(c * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: f32) {
        self.data[(c * self.height + h) * self.width + w] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
}

/// Region of a subview, named from the subview's own perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    /// Columns shared with the left neighbour.
    Left,
    /// Columns owned by this subview alone.
    Mid,
    /// Columns shared with the right neighbour.
    Right,
}

/// Half-open column range `[start, end)` in subview-local coordinates.
/// Boundary subviews of a non-circular layout have an empty `Left` (first
/// subview) or `Right` (last subview), encoded as `start == end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionRange {
    pub kind: RegionKind,
    pub start: usize,
    pub end: usize,
}

impl RegionRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Left/Mid/Right partition of one subview's columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regions {
    pub left: RegionRange,
    pub mid: RegionRange,
    pub right: RegionRange,
}

/// Sliding-window placement of subviews over the canvas width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubviewLayout {
    pub total_width: usize,
    pub subview_width: usize,
    pub stride: usize,
    pub count: usize,
    pub circular: bool,
}

/// Derives stride and subview count from an overlap rate.
///
/// `stride = round(subview_width * (1 - overlap_rate))` with ties rounding
/// up. The geometry must tile exactly: there is no padding, so layouts whose
/// windows do not land on the canvas edge are rejected.
pub fn build_layout(
    total_width: usize,
    subview_width: usize,
    overlap_rate: f64,
    circular: bool,
) -> Result<SubviewLayout> {
    if subview_width == 0 || total_width == 0 {
        return Err(Error::Geometry("widths must be positive".into()));
    }
    if subview_width > total_width {
        return Err(Error::Geometry(format!(
            "subview width {subview_width} exceeds canvas width {total_width}"
        )));
    }
    if !(0.0..1.0).contains(&overlap_rate) {
        return Err(Error::Geometry(format!("overlap rate {overlap_rate} outside [0, 1)")));
    }
    let stride = (subview_width as f64 * (1.0 - overlap_rate)).round() as usize;
    if stride == 0 {
        return Err(Error::Geometry(format!(
            "overlap rate {overlap_rate} leaves a zero stride for subview width {subview_width}"
        )));
    }
    let count = if circular {
        if total_width % stride != 0 {
            return Err(Error::Geometry(format!(
                "circular layout needs stride {stride} to divide canvas width {total_width}"
            )));
        }
        total_width / stride
    } else {
        let span = total_width - subview_width;
        if span % stride != 0 {
            return Err(Error::Geometry(format!(
                "stride {stride} cannot tile {total_width} with subview width {subview_width}"
            )));
        }
        span / stride + 1
    };
    Ok(SubviewLayout { total_width, subview_width, stride, count, circular })
}

impl SubviewLayout {
    /// Shared column count between adjacent subviews.
    pub fn overlap_width(&self) -> usize {
        self.subview_width - self.stride
    }

    /// Number of adjacent pairs (the circular layout closes the ring).
    pub fn pair_count(&self) -> usize {
        if self.circular {
            if self.overlap_width() == 0 {
                0
            } else {
                self.count
            }
        } else {
            self.count.saturating_sub(1)
        }
    }

    /// Canvas column backing local column `local` of subview `i`.
    pub fn column_of(&self, i: usize, local: usize) -> usize {
        let col = i * self.stride + local;
        if self.circular {
            col % self.total_width
        } else {
            col
        }
    }

    /// First canvas column of the overlap between pair `(p, p+1)`.
    pub fn overlap_start(&self, p: usize) -> usize {
        ((p + 1) * self.stride) % self.total_width
    }

    /// How many subviews cover a canvas column.
    pub fn coverage_count(&self, col: usize) -> usize {
        (0..self.count)
            .filter(|&i| {
                (0..self.subview_width).any(|local| self.column_of(i, local) == col)
            })
            .count()
    }
}

/// Left/Mid/Right partition of subview `i`.
///
/// Defined only for pairwise overlaps (`2 * overlap_width <= subview_width`);
/// wider overlaps make the left and right shared bands intersect and the
/// partition no longer exists.
pub fn region_ranges(layout: &SubviewLayout, i: usize) -> Result<Regions> {
    if i >= layout.count {
        return Err(Error::Index { index: i, limit: layout.count });
    }
    let w = layout.subview_width;
    let v = layout.overlap_width();
    if 2 * v > w {
        return Err(Error::Geometry(format!(
            "overlap width {v} exceeds half the subview width {w}; no left/mid/right partition"
        )));
    }
    let has_left = layout.circular || i > 0;
    let has_right = layout.circular || i + 1 < layout.count;
    let left_end = if has_left { v } else { 0 };
    let right_start = if has_right { w - v } else { w };
    Ok(Regions {
        left: RegionRange { kind: RegionKind::Left, start: 0, end: left_end },
        mid: RegionRange { kind: RegionKind::Mid, start: left_end, end: right_start },
        right: RegionRange { kind: RegionKind::Right, start: right_start, end: w },
    })
}

/// Copies subview `i` out of the canvas, wrapping columns in circular mode.
pub fn extract_subview(j: &LatentMap, layout: &SubviewLayout, i: usize) -> Result<LatentMap> {
    if i >= layout.count {
        return Err(Error::Index { index: i, limit: layout.count });
    }
    if j.width() != layout.total_width {
        return Err(Error::Shape(format!(
            "canvas width {} does not match layout width {}",
            j.width(),
            layout.total_width
        )));
    }
    let (c, h, _) = j.shape();
    let mut out = LatentMap::zeros(c, h, layout.subview_width);
    for local in 0..layout.subview_width {
        let col = layout.column_of(i, local);
        for ch in 0..c {
            for row in 0..h {
                out.set(ch, row, local, j.get(ch, row, col));
            }
        }
    }
    Ok(out)
}

/// Writes the `region` columns of subview tensor `x` into the canvas.
///
/// Writing the same merged block through two aliases (the right overlap of
/// subview `i` and the left overlap of subview `i+1`) is idempotent.
pub fn write_subview(
    j: &mut LatentMap,
    layout: &SubviewLayout,
    i: usize,
    x: &LatentMap,
    region: RegionRange,
) -> Result<()> {
    if i >= layout.count {
        return Err(Error::Index { index: i, limit: layout.count });
    }
    if j.width() != layout.total_width {
        return Err(Error::Shape(format!(
            "canvas width {} does not match layout width {}",
            j.width(),
            layout.total_width
        )));
    }
    if x.channels() != j.channels() || x.height() != j.height() || x.width() != layout.subview_width
    {
        return Err(Error::Shape(format!(
            "subview tensor {:?} does not match layout/canvas ({}, {}, {})",
            x.shape(),
            j.channels(),
            j.height(),
            layout.subview_width
        )));
    }
    if region.end > layout.subview_width {
        return Err(Error::Shape(format!(
            "region [{}, {}) exceeds subview width {}",
            region.start, region.end, layout.subview_width
        )));
    }
    let (c, h, _) = j.shape();
    for local in region.start..region.end {
        let col = layout.column_of(i, local);
        for ch in 0..c {
            for row in 0..h {
                j.set(ch, row, col, x.get(ch, row, local));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_overlap_layout() {
        let l = build_layout(400, 80, 0.8, false).unwrap();
        assert_eq!(l.stride, 16);
        assert_eq!(l.count, 21);
        assert_eq!(l.overlap_width(), 64);
    }

    #[test]
    fn sparse_overlap_layout() {
        let l = build_layout(400, 80, 0.2, false).unwrap();
        assert_eq!(l.stride, 64);
        assert_eq!(l.count, 6);
        assert_eq!(l.overlap_width(), 16);
        assert_eq!((l.count - 1) * l.stride + l.subview_width, l.total_width);
    }

    #[test]
    fn single_view_layout() {
        let l = build_layout(80, 80, 0.0, false).unwrap();
        assert_eq!(l.count, 1);
        assert_eq!(l.overlap_width(), 0);
        assert_eq!(l.pair_count(), 0);
    }

    #[test]
    fn non_tiling_rate_is_rejected() {
        // stride = round(80 * 0.63) = 50 and 320 % 50 != 0
        let err = build_layout(400, 80, 0.37, false).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "got {err:?}");
    }

    #[test]
    fn circular_layout_wraps() {
        let l = build_layout(320, 80, 0.75, true).unwrap();
        assert_eq!(l.stride, 20);
        assert_eq!(l.count, 16);
        assert_eq!(l.count * l.stride, l.total_width);
        // subview 15 covers [300, 320) then wraps to [0, 60)
        assert_eq!(l.column_of(15, 0), 300);
        assert_eq!(l.column_of(15, 19), 319);
        assert_eq!(l.column_of(15, 20), 0);
        assert_eq!(l.column_of(15, 79), 59);
    }

    #[test]
    fn region_partition_interior_and_boundary() {
        let l = build_layout(400, 80, 0.2, false).unwrap();
        let r = region_ranges(&l, 2).unwrap();
        assert_eq!((r.left.start, r.left.end), (0, 16));
        assert_eq!((r.mid.start, r.mid.end), (16, 64));
        assert_eq!((r.right.start, r.right.end), (64, 80));

        let first = region_ranges(&l, 0).unwrap();
        assert!(first.left.is_empty());
        assert_eq!((first.mid.start, first.mid.end), (0, 64));

        let last = region_ranges(&l, 5).unwrap();
        assert!(last.right.is_empty());
        assert_eq!((last.mid.start, last.mid.end), (16, 80));

        for i in 0..l.count {
            let r = region_ranges(&l, i).unwrap();
            assert_eq!(r.left.len() + r.mid.len() + r.right.len(), l.subview_width);
        }
    }

    #[test]
    fn region_partition_needs_pairwise_overlap() {
        let l = build_layout(400, 80, 0.8, false).unwrap();
        assert!(matches!(region_ranges(&l, 3), Err(Error::Geometry(_))));
    }

    #[test]
    fn circular_regions_have_no_boundary_cases() {
        let l = build_layout(320, 80, 0.75, true).unwrap();
        // overlap 60 > 40: partition undefined
        assert!(region_ranges(&l, 0).is_err());
        let l = build_layout(320, 50, 0.2, true).unwrap();
        for i in 0..l.count {
            let r = region_ranges(&l, i).unwrap();
            assert_eq!(r.left.len(), l.overlap_width());
            assert_eq!(r.right.len(), l.overlap_width());
        }
    }

    #[test]
    fn extract_then_write_round_trips() {
        let l = build_layout(40, 16, 0.25, false).unwrap();
        let j = LatentMap::standard_normal(2, 3, 40, 99);
        let mut j2 = j.clone();
        for i in 0..l.count {
            let x = extract_subview(&j, &l, i).unwrap();
            let full = RegionRange { kind: RegionKind::Mid, start: 0, end: l.subview_width };
            write_subview(&mut j2, &l, i, &x, full).unwrap();
        }
        assert_eq!(j, j2);
    }

    #[test]
    fn circular_extract_wraps_columns() {
        let l = build_layout(12, 6, 0.5, true).unwrap();
        let mut j = LatentMap::zeros(1, 1, 12);
        for col in 0..12 {
            j.set(0, 0, col, col as f32);
        }
        let last = extract_subview(&j, &l, l.count - 1).unwrap();
        let got: Vec<f32> = (0..6).map(|c| last.get(0, 0, c)).collect();
        assert_eq!(got, vec![9.0, 10.0, 11.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn aliased_overlap_write_is_idempotent() {
        let l = build_layout(24, 12, 0.5, false).unwrap();
        assert_eq!(l.count, 3);
        let mut j = LatentMap::zeros(1, 2, 24);
        let block = LatentMap::standard_normal(1, 2, 12, 5);
        let r0 = region_ranges(&l, 0).unwrap();
        let r1 = region_ranges(&l, 1).unwrap();
        // same canvas columns through subview 0's right and subview 1's left
        let mut as_right = LatentMap::zeros(1, 2, 12);
        let mut as_left = LatentMap::zeros(1, 2, 12);
        for local in 0..6 {
            for row in 0..2 {
                as_right.set(0, row, r0.right.start + local, block.get(0, row, local));
                as_left.set(0, row, r1.left.start + local, block.get(0, row, local));
            }
        }
        write_subview(&mut j, &l, 0, &as_right, r0.right).unwrap();
        let once = j.clone();
        write_subview(&mut j, &l, 1, &as_left, r1.left).unwrap();
        assert_eq!(once, j);
    }

    #[test]
    fn out_of_range_subview_is_an_index_error() {
        let l = build_layout(40, 16, 0.25, false).unwrap();
        let j = LatentMap::zeros(1, 1, 40);
        assert!(matches!(extract_subview(&j, &l, l.count), Err(Error::Index { .. })));
    }

    #[test]
    fn coverage_counts_match_overlap_structure() {
        let l = build_layout(400, 80, 0.2, false).unwrap();
        assert_eq!(l.coverage_count(0), 1);
        assert_eq!(l.coverage_count(70), 2); // inside first overlap [64, 80)
        assert_eq!(l.coverage_count(100), 1);
        let dense = build_layout(400, 80, 0.8, false).unwrap();
        assert_eq!(dense.coverage_count(200), 5); // interior column under 80/16 window
    }
}
