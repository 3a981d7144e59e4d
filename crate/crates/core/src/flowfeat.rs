//! Frame-based motion features of a candidate: relative optical flow,
//! a 5-direction histogram of flow over a vertical box pyramid, and
//! per-band magnitude statistics.

use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, FlowRaster};
use crate::error::{Error, Result};

/// Fraction of the box size added on each side to form the surrounding region.
pub const SURROUND_DILATION: f64 = 0.5;
/// Number of pyramid boxes: 1 + 2 + 4 + 8.
pub const PYRAMID_BOXES: usize = 15;
pub const HOF_BINS: usize = 5;
pub const MAG_STATS: usize = 4;
pub const HOF_DIM: usize = HOF_BINS * PYRAMID_BOXES;
pub const MAG_DIM: usize = MAG_STATS * PYRAMID_BOXES;

/// Merged direction bins, horizontally symmetric: E(+W), NE(+NW), N, SE(+SW), S.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    East = 0,
    NorthEast = 1,
    North = 2,
    SouthEast = 3,
    South = 4,
}

const SECTOR_HALF_WIDTH: f64 = std::f64::consts::PI / 8.0;

/// Bins a motion vector (v pointing down) into one of the five merged
/// directions. Zero vectors have no direction.
///
/// Only `|u|` enters the angle, so a vector and its horizontal mirror always
/// land in the same bin.
pub fn direction_of(u: f64, v: f64) -> Option<Direction> {
    if u == 0.0 && v == 0.0 {
        return None;
    }
    let angle = (-v).atan2(u.abs());
    Some(if angle >= 3.0 * SECTOR_HALF_WIDTH {
        Direction::North
    } else if angle >= SECTOR_HALF_WIDTH {
        Direction::NorthEast
    } else if angle > -SECTOR_HALF_WIDTH {
        Direction::East
    } else if angle > -3.0 * SECTOR_HALF_WIDTH {
        Direction::SouthEast
    } else {
        Direction::South
    })
}

/// A block of per-pixel flow vectors covering a box, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPatch {
    /// Column of the first patch pixel in the raster.
    pub x0: u32,
    /// Row of the first patch pixel in the raster.
    pub y0: u32,
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 2]>,
}

impl FlowPatch {
    pub fn rows(&self, from: usize, to: usize) -> &[[f64; 2]] {
        &self.data[from * self.width..to * self.width]
    }
}

/// Half-open range of pixel indices whose centers fall in `[start, start + len)`,
/// clipped to `[0, limit)`.
fn pixel_span(start: f64, len: f64, limit: u32) -> (u32, u32) {
    let lo = (start - 0.5).ceil().max(0.0);
    let hi = (start + len - 0.5).ceil().min(limit as f64);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as u32, hi as u32)
    }
}

/// Flow inside `bbox` minus the mean flow of the ring between the box and
/// its 50% dilation, the ring clipped to the raster.
pub fn relative_flow(flow: &FlowRaster, bbox: &BBox) -> Result<FlowPatch> {
    let (x0, x1) = pixel_span(bbox.x, bbox.w, flow.width());
    let (y0, y1) = pixel_span(bbox.y, bbox.h, flow.height());
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::BoxOutsideRaster {
            width: flow.width(),
            height: flow.height(),
        });
    }

    let outer = bbox.dilate(SURROUND_DILATION);
    let (ox0, ox1) = pixel_span(outer.x, outer.w, flow.width());
    let (oy0, oy1) = pixel_span(outer.y, outer.h, flow.height());
    let (mut su, mut sv, mut n) = (0.0f64, 0.0f64, 0usize);
    for y in oy0..oy1 {
        let inside_rows = y >= y0 && y < y1;
        for x in ox0..ox1 {
            if inside_rows && x >= x0 && x < x1 {
                continue;
            }
            let [u, v] = flow.get(x, y);
            su += u as f64;
            sv += v as f64;
            n += 1;
        }
    }
    let (mu, mv) = if n > 0 { (su / n as f64, sv / n as f64) } else { (0.0, 0.0) };

    let mut data = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
    for y in y0..y1 {
        for x in x0..x1 {
            let [u, v] = flow.get(x, y);
            data.push([u as f64 - mu, v as f64 - mv]);
        }
    }
    Ok(FlowPatch {
        x0,
        y0,
        width: (x1 - x0) as usize,
        height: (y1 - y0) as usize,
        data,
    })
}

/// The 15 boxes of a three-round vertical pyramid split, scale-major and
/// top-to-bottom within a scale. The upper band of a split takes
/// `ceil(h / 2)`, so odd pixel heights give the extra row to the top; bands
/// may end up with zero height.
pub fn pyramid_boxes(bbox: &BBox) -> [BBox; PYRAMID_BOXES] {
    let mut out = [*bbox; PYRAMID_BOXES];
    for i in 1..PYRAMID_BOXES {
        let parent = out[(i - 1) / 2];
        let upper = (parent.h / 2.0).ceil().min(parent.h);
        out[i] = if i % 2 == 1 {
            BBox { h: upper, ..parent }
        } else {
            BBox {
                y: parent.y + upper,
                h: parent.h - upper,
                ..parent
            }
        };
    }
    out
}

/// Magnitude-weighted 5-bin orientation histogram, L1-normalized; all zeros
/// for a motionless patch. Bin order is E, NE, N, SE, S.
pub fn hof5(patch: &[[f64; 2]]) -> [f64; HOF_BINS] {
    let mut hist = [0.0; HOF_BINS];
    for &[u, v] in patch {
        if let Some(d) = direction_of(u, v) {
            hist[d as usize] += u.hypot(v);
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h /= total);
    }
    hist
}

/// Mean |u|, mean |v|, population std of |u|, population std of |v|.
fn magnitude_stats(patch: &[[f64; 2]]) -> [f64; MAG_STATS] {
    if patch.is_empty() {
        return [0.0; MAG_STATS];
    }
    let n = patch.len() as f64;
    let (mut su, mut sv) = (0.0, 0.0);
    for &[u, v] in patch {
        su += u.abs();
        sv += v.abs();
    }
    let (mu, mv) = (su / n, sv / n);
    let (mut vu, mut vv) = (0.0, 0.0);
    for &[u, v] in patch {
        vu += (u.abs() - mu).powi(2);
        vv += (v.abs() - mv).powi(2);
    }
    [mu, mv, (vu / n).sqrt(), (vv / n).sqrt()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    /// 5 HOF bins for each of the 15 pyramid boxes.
    pub hof: Vec<f64>,
    /// Mean |u|, mean |v|, std |u|, std |v| for each of the 15 pyramid boxes.
    pub mag: Vec<f64>,
}

impl FrameFeature {
    pub fn zeros() -> Self {
        FrameFeature {
            hof: vec![0.0; HOF_DIM],
            mag: vec![0.0; MAG_DIM],
        }
    }
}

pub fn frame_feature(flow: &FlowRaster, bbox: &BBox) -> Result<FrameFeature> {
    let patch = relative_flow(flow, bbox)?;
    let mut feature = FrameFeature::zeros();
    for (b, band) in pyramid_boxes(bbox).iter().enumerate() {
        let (r0, r1) = pixel_span(band.y, band.h, flow.height());
        let r0 = (r0.max(patch.y0) - patch.y0) as usize;
        let r1 = (r1.max(patch.y0) - patch.y0).min(patch.height as u32) as usize;
        if r1 <= r0 {
            continue;
        }
        let pixels = patch.rows(r0, r1);
        feature.hof[b * HOF_BINS..(b + 1) * HOF_BINS].copy_from_slice(&hof5(pixels));
        feature.mag[b * MAG_STATS..(b + 1) * MAG_STATS].copy_from_slice(&magnitude_stats(pixels));
    }
    Ok(feature)
}

/// Pearson correlation. With a constant input the correlation is taken as 1
/// for elementwise-equal vectors and 0 otherwise.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Frame-based matching energy: `1 - exp(-|hof_a - hof_b|_1)` plus the
/// magnitude dissimilarity `(1 - corr(mag_a, mag_b)) / 2`. Range `[0, 2)`.
pub fn psi_frame(a: &FrameFeature, b: &FrameFeature) -> f64 {
    let l1: f64 = a.hof.iter().zip(&b.hof).map(|(x, y)| (x - y).abs()).sum();
    let hof_term = 1.0 - (-l1).exp();
    let mag_term = 0.5 * (1.0 - correlation(&a.mag, &b.mag));
    hof_term + mag_term
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_raster(w: u32, h: u32, u: f32, v: f32) -> FlowRaster {
        FlowRaster::from_fn(w, h, |_, _| [u, v])
    }

    #[test]
    fn constant_field_gives_zero_relative_flow() {
        let flow = const_raster(40, 40, 3.0, -2.0);
        let patch = relative_flow(&flow, &BBox::new(10.0, 10.0, 8.0, 12.0)).unwrap();
        assert_eq!((patch.width, patch.height), (8, 12));
        assert!(patch.data.iter().all(|p| p[0].abs() < 1e-12 && p[1].abs() < 1e-12));
    }

    #[test]
    fn ring_flow_is_subtracted() {
        let bbox = BBox::new(10.0, 10.0, 8.0, 8.0);
        let flow = FlowRaster::from_fn(40, 40, |x, y| {
            if bbox.contains(x as f64 + 0.5, y as f64 + 0.5) {
                [0.0, 0.0]
            } else {
                [1.0, 0.0]
            }
        });
        let patch = relative_flow(&flow, &bbox).unwrap();
        assert!(patch.data.iter().all(|p| (p[0] + 1.0).abs() < 1e-12 && p[1].abs() < 1e-12));
    }

    #[test]
    fn empty_ring_subtracts_nothing() {
        // box covers the whole raster so the clipped ring is empty
        let flow = const_raster(6, 6, 2.0, 1.0);
        let patch = relative_flow(&flow, &BBox::new(0.0, 0.0, 6.0, 6.0)).unwrap();
        assert!(patch.data.iter().all(|p| *p == [2.0, 1.0]));
    }

    #[test]
    fn box_outside_raster_is_an_error() {
        let flow = FlowRaster::zeros(10, 10);
        assert!(relative_flow(&flow, &BBox::new(20.0, 0.0, 5.0, 5.0)).is_err());
        assert!(relative_flow(&flow, &BBox::new(-6.0, 0.0, 5.0, 5.0)).is_err());
    }

    #[test]
    fn pyramid_heights() {
        let boxes = pyramid_boxes(&BBox::new(0.0, 0.0, 4.0, 8.0));
        assert_eq!(boxes.len(), 15);
        assert!(boxes[7..].iter().all(|b| b.h == 1.0));
        let odd = pyramid_boxes(&BBox::new(0.0, 0.0, 4.0, 15.0));
        assert_eq!((odd[1].h, odd[2].h), (8.0, 7.0));
        assert_eq!(odd[2].y, 8.0);
    }

    #[test]
    fn pyramid_finest_scale_tiles_the_box() {
        for h in [1.0, 7.0, 15.0, 40.0, 33.5] {
            let b = BBox::new(3.0, 5.0, 4.0, h);
            let boxes = pyramid_boxes(&b);
            let mut y = b.y;
            for band in &boxes[7..] {
                assert_eq!(band.y, y);
                y += band.h;
            }
            assert_eq!(y, b.bottom());
            // each scale tiles the box as well
            for scale in [&boxes[1..3], &boxes[3..7]] {
                assert_eq!(scale.iter().map(|b| b.h).sum::<f64>(), h);
            }
        }
    }

    #[test]
    fn hof_single_direction() {
        assert_eq!(hof5(&[[0.0, -1.0]; 4]), [0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(hof5(&[[1.0, 0.0]; 3]), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(hof5(&[[-1.0, 0.0]; 3]), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(hof5(&[[0.0, 2.0]]), [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(hof5(&[[0.0, 0.0]; 5]), [0.0; 5]);
    }

    #[test]
    fn hof_is_magnitude_weighted() {
        let h = hof5(&[[3.0, 0.0], [0.0, -1.0]]);
        assert!((h[0] - 0.75).abs() < 1e-12 && (h[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_raster_gives_zero_feature() {
        let f = frame_feature(&FlowRaster::zeros(30, 30), &BBox::new(5.0, 5.0, 6.0, 16.0)).unwrap();
        assert_eq!(f, FrameFeature::zeros());
        assert_eq!((f.hof.len(), f.mag.len()), (75, 60));
    }

    #[test]
    fn magnitude_stats_use_population_std() {
        let s = magnitude_stats(&[[1.0, -2.0], [3.0, 2.0]]);
        assert_eq!(s, [2.0, 2.0, 1.0, 0.0]);
        assert_eq!(magnitude_stats(&[[5.0, 1.0]]), [5.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn psi_frame_examples() {
        let mut a = FrameFeature::zeros();
        a.hof[0] = 1.0;
        a.mag = (0..60).map(|i| i as f64).collect();
        assert!(psi_frame(&a, &a).abs() < 1e-12);
        let mut b = a.clone();
        b.mag = a.mag.iter().map(|x| 100.0 - 2.0 * x).collect();
        assert!((psi_frame(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_degenerate_rules() {
        assert_eq!(correlation(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert_eq!(correlation(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
        assert_eq!(correlation(&[0.0; 4], &[0.0; 4]), 1.0);
    }
}
