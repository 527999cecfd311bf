//! Hounsfield windowing, normalization, and slice-stack extraction.
//!
//! Voxel values are clipped to a configurable window (default [-1000, 800]),
//! min-max normalized over that window to [0, 1], and reduced to a 3-channel
//! image by taking three axial cuts at configurable world positions.

use ndarray::Array3;
use thiserror::Error;

use crate::cohort::Modality;
use crate::nifti::{orientation_of, Volume};

#[derive(Debug, Error)]
pub enum IntensityError {
    #[error("invalid window: lo = {lo} must be less than hi = {hi}")]
    InvalidWindow { lo: f64, hi: f64 },
    #[error("voxel {value} at flat index {index} is outside the window [{lo}, {hi}]; clip first")]
    OutOfWindow {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("volume is not in RAS orientation (found {0}); reorient first")]
    NotRas(String),
    #[error("volume affine is oblique; slice positions require an axis-aligned affine")]
    ObliqueAffine,
    #[error("slice positions must be strictly increasing, got {0:?}")]
    PositionsNotIncreasing([f64; 3]),
    #[error("volume too thin along the slice axis: positions {positions:?} resolve to only {distinct} distinct indices")]
    TooThin { positions: [f64; 3], distinct: usize },
    #[error(transparent)]
    Nifti(#[from] crate::nifti::NiftiError),
}

pub type Result<T> = std::result::Result<T, IntensityError>;

/// Intensity window in Hounsfield units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntensityWindow {
    lo: f64,
    hi: f64,
}

impl IntensityWindow {
    /// The air-to-soft-bone window used throughout the pipeline.
    pub const DEFAULT_LO: f64 = -1000.0;
    pub const DEFAULT_HI: f64 = 800.0;

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(IntensityError::InvalidWindow { lo, hi });
        }
        Ok(IntensityWindow { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl Default for IntensityWindow {
    fn default() -> Self {
        IntensityWindow {
            lo: Self::DEFAULT_LO,
            hi: Self::DEFAULT_HI,
        }
    }
}

/// Clamp every voxel into the window. Values already inside are unchanged.
pub fn clip_intensity(volume: &Volume, window: &IntensityWindow) -> Volume {
    let mut out = volume.clone();
    out.data
        .mapv_inplace(|v| v.clamp(window.lo, window.hi));
    out
}

/// Min-max normalize voxels over the window: `(v - lo) / (hi - lo)`.
///
/// Every voxel must already lie inside the window (clip first).
pub fn normalize_intensity(volume: &Volume, window: &IntensityWindow) -> Result<Volume> {
    if let Some((index, &value)) = volume
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| **v < window.lo || **v > window.hi)
    {
        return Err(IntensityError::OutOfWindow {
            index,
            value,
            lo: window.lo,
            hi: window.hi,
        });
    }
    let mut out = volume.clone();
    let w = window.width();
    out.data.mapv_inplace(|v| (v - window.lo) / w);
    Ok(out)
}

/// Voxel axis of an RAS volume along which cuts are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceAxis {
    /// Left-right axis (axis 0 in RAS); cuts are sagittal planes.
    Sagittal,
    /// Posterior-anterior axis (axis 1 in RAS); cuts are coronal planes.
    Coronal,
    /// Inferior-superior axis (axis 2 in RAS); cuts are axial planes.
    Axial,
}

impl SliceAxis {
    pub fn index(self) -> usize {
        match self {
            SliceAxis::Sagittal => 0,
            SliceAxis::Coronal => 1,
            SliceAxis::Axial => 2,
        }
    }
}

impl std::fmt::Display for SliceAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SliceAxis::Sagittal => write!(f, "sagittal"),
            SliceAxis::Coronal => write!(f, "coronal"),
            SliceAxis::Axial => write!(f, "axial"),
        }
    }
}

/// Where a slice stack came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceProvenance {
    pub patient_id: String,
    pub modality: Modality,
    pub axis: SliceAxis,
    /// Resolved voxel indices, strictly increasing.
    pub indices: [usize; 3],
    /// Requested world positions in mm.
    pub positions_mm: [f64; 3],
    /// True when any requested position fell outside the volume and was
    /// clamped to the boundary slice.
    pub clamped: bool,
}

/// Three cuts of a normalized RAS volume stacked as image channels.
#[derive(Debug, Clone)]
pub struct SliceStack {
    /// H x W x 3, values in [0, 1], channels in ascending-position order.
    pub pixels: Array3<f64>,
    pub provenance: SliceProvenance,
}

/// Extract the 3-channel slice stack at the given world positions.
///
/// The volume must be RAS-oriented and normalized to [0, 1]. Positions are
/// converted to voxel indices through the affine (nearest index, clamped to
/// the valid range).
pub fn extract_slice_stack(
    volume: &Volume,
    positions_mm: [f64; 3],
    axis: SliceAxis,
    patient_id: &str,
    modality: Modality,
) -> Result<SliceStack> {
    let code = orientation_of(&volume.header.affine)?;
    if !code.is_ras() {
        return Err(IntensityError::NotRas(code.to_string()));
    }
    if let Some((index, &value)) = volume
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| **v < 0.0 || **v > 1.0)
    {
        return Err(IntensityError::OutOfWindow {
            index,
            value,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if !(positions_mm[0] < positions_mm[1] && positions_mm[1] < positions_mm[2]) {
        return Err(IntensityError::PositionsNotIncreasing(positions_mm));
    }

    let k = axis.index();
    let a = &volume.header.affine.0;
    // Position-to-index conversion needs the axis to be decoupled from the
    // other two; reject oblique affines rather than guessing.
    for r in 0..3 {
        for c in 0..3 {
            if r != c && a[r][c].abs() > 1e-6 * a[r][r].abs().max(1.0) {
                return Err(IntensityError::ObliqueAffine);
            }
        }
    }
    let step = a[k][k];
    let origin = a[k][3];
    let extent = volume.header.dims[k];

    let mut indices = [0usize; 3];
    let mut clamped = false;
    for (c, &pos) in positions_mm.iter().enumerate() {
        let raw = ((pos - origin) / step).round();
        let idx = raw.clamp(0.0, (extent - 1) as f64);
        if raw != idx {
            clamped = true;
        }
        indices[c] = idx as usize;
    }
    if clamped {
        log::warn!(
            "slice positions {positions_mm:?} clamped to indices {indices:?} for patient {patient_id}"
        );
    }
    let distinct = {
        let mut s = indices.to_vec();
        s.dedup();
        s.len()
    };
    if distinct < 3 {
        return Err(IntensityError::TooThin {
            positions: positions_mm,
            distinct,
        });
    }

    let dims = volume.header.dims;
    let (h, w) = match axis {
        SliceAxis::Sagittal => (dims[1], dims[2]),
        SliceAxis::Coronal => (dims[0], dims[2]),
        SliceAxis::Axial => (dims[0], dims[1]),
    };
    let mut pixels = Array3::<f64>::zeros((h, w, 3));
    for (c, &idx) in indices.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                pixels[(i, j, c)] = match axis {
                    SliceAxis::Sagittal => volume.data[(idx, i, j)],
                    SliceAxis::Coronal => volume.data[(i, idx, j)],
                    SliceAxis::Axial => volume.data[(i, j, idx)],
                };
            }
        }
    }

    Ok(SliceStack {
        pixels,
        provenance: SliceProvenance {
            patient_id: patient_id.to_string(),
            modality,
            axis,
            indices,
            positions_mm,
            clamped,
        },
    })
}

/// Bilinear resize of a slice stack, for inputs that are not already at the
/// backbone-friendly 240x240.
pub fn resize_stack(pixels: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = {
        let s = pixels.shape();
        (s[0], s[1], s[2])
    };
    let mut out = Array3::<f64>::zeros((out_h, out_w, c));
    for oi in 0..out_h {
        for oj in 0..out_w {
            let fi = if out_h > 1 {
                oi as f64 * (h - 1) as f64 / (out_h - 1) as f64
            } else {
                0.0
            };
            let fj = if out_w > 1 {
                oj as f64 * (w - 1) as f64 / (out_w - 1) as f64
            } else {
                0.0
            };
            let i0 = fi.floor() as usize;
            let j0 = fj.floor() as usize;
            let i1 = (i0 + 1).min(h - 1);
            let j1 = (j0 + 1).min(w - 1);
            let di = fi - i0 as f64;
            let dj = fj - j0 as f64;
            for ch in 0..c {
                let v = pixels[(i0, j0, ch)] * (1.0 - di) * (1.0 - dj)
                    + pixels[(i1, j0, ch)] * di * (1.0 - dj)
                    + pixels[(i0, j1, ch)] * (1.0 - di) * dj
                    + pixels[(i1, j1, ch)] * di * dj;
                out[(oi, oj, ch)] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nifti::Affine;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vol_from(data: Array3<f64>) -> Volume {
        Volume::new(data, Affine::identity())
    }

    #[test]
    fn clip_maps_paper_examples() {
        let w = IntensityWindow::default();
        let data = Array3::from_shape_vec((3, 1, 1), vec![-2000.0, 0.0, 1000.0]).unwrap();
        let v = clip_intensity(&vol_from(data), &w);
        assert_eq!(v.data[(0, 0, 0)], -1000.0);
        assert_eq!(v.data[(1, 0, 0)], 0.0);
        assert_eq!(v.data[(2, 0, 0)], 800.0);
    }

    #[test]
    fn window_rejects_inverted_bounds() {
        assert!(IntensityWindow::new(800.0, -1000.0).is_err());
        assert!(IntensityWindow::new(5.0, 5.0).is_err());
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let w = IntensityWindow::default();
        let data = Array3::from_shape_vec((3, 1, 1), vec![-1000.0, 800.0, -100.0]).unwrap();
        let v = normalize_intensity(&vol_from(data), &w).unwrap();
        assert_eq!(v.data[(0, 0, 0)], 0.0);
        assert_eq!(v.data[(1, 0, 0)], 1.0);
        assert_eq!(v.data[(2, 0, 0)], 0.5);
    }

    #[test]
    fn normalize_rejects_out_of_window() {
        let w = IntensityWindow::default();
        let data = Array3::from_shape_vec((1, 1, 1), vec![900.0]).unwrap();
        assert!(matches!(
            normalize_intensity(&vol_from(data), &w),
            Err(IntensityError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn normalize_is_affine_in_input() {
        let w = IntensityWindow::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-1000.0..800.0);
            let b: f64 = rng.gen_range(-1000.0..800.0);
            let data = Array3::from_shape_vec((2, 1, 1), vec![a, b]).unwrap();
            let v = normalize_intensity(&vol_from(data), &w).unwrap();
            let lhs = v.data[(0, 0, 0)] - v.data[(1, 0, 0)];
            assert!((lhs - (a - b) / 1800.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_then_normalize_covers_unit_interval() {
        let w = IntensityWindow::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut data = Array3::from_shape_fn((5, 5, 5), |_| rng.gen_range(-4000.0..4000.0));
        data[(0, 0, 0)] = -5000.0;
        data[(1, 0, 0)] = 5000.0;
        let v = normalize_intensity(&clip_intensity(&vol_from(data), &w), &w).unwrap();
        let min = v.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 0.0);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn slice_indices_from_unit_spacing() {
        let data = Array3::zeros((240, 240, 155));
        let v = vol_from(data);
        let stack =
            extract_slice_stack(&v, [60.0, 90.0, 120.0], SliceAxis::Axial, "p0", Modality::T2)
                .unwrap();
        assert_eq!(stack.provenance.indices, [60, 90, 120]);
        assert!(!stack.provenance.clamped);
        assert_eq!(stack.pixels.shape(), &[240, 240, 3]);
    }

    #[test]
    fn constant_volume_gives_constant_channels() {
        let data = Array3::from_elem((12, 12, 12), 0.25);
        let v = vol_from(data);
        let stack =
            extract_slice_stack(&v, [2.0, 5.0, 9.0], SliceAxis::Axial, "p0", Modality::T1)
                .unwrap();
        assert!(stack.pixels.iter().all(|&p| p == 0.25));
    }

    #[test]
    fn out_of_range_position_clamps_with_flag() {
        let data = Array3::zeros((8, 8, 50));
        let v = vol_from(data);
        let stack =
            extract_slice_stack(&v, [0.0, 30.0, 60.0], SliceAxis::Axial, "p0", Modality::Flair)
                .unwrap();
        assert_eq!(stack.provenance.indices, [0, 30, 49]);
        assert!(stack.provenance.clamped);
    }

    #[test]
    fn too_thin_volume_rejected() {
        let data = Array3::zeros((8, 8, 2));
        let v = vol_from(data);
        let err = extract_slice_stack(&v, [0.0, 30.0, 60.0], SliceAxis::Axial, "p0", Modality::T1)
            .unwrap_err();
        assert!(matches!(err, IntensityError::TooThin { distinct: 2, .. }));
    }

    #[test]
    fn positions_must_increase() {
        let data = Array3::zeros((8, 8, 8));
        let v = vol_from(data);
        assert!(matches!(
            extract_slice_stack(&v, [5.0, 2.0, 7.0], SliceAxis::Axial, "p0", Modality::T1),
            Err(IntensityError::PositionsNotIncreasing(_))
        ));
    }

    #[test]
    fn non_ras_volume_rejected() {
        let data = Array3::zeros((4, 4, 4));
        let v = Volume::new(data, Affine::from_diag([-1.0, 1.0, 1.0]));
        assert!(matches!(
            extract_slice_stack(&v, [0.0, 1.0, 2.0], SliceAxis::Axial, "p0", Modality::T1),
            Err(IntensityError::NotRas(_))
        ));
    }

    #[test]
    fn channels_match_direct_slabs_on_random_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = Array3::from_shape_fn((6, 7, 9), |_| rng.gen::<f64>());
        let v = vol_from(data.clone());
        for axis in [SliceAxis::Sagittal, SliceAxis::Coronal, SliceAxis::Axial] {
            let stack =
                extract_slice_stack(&v, [1.0, 3.0, 5.0], axis, "p0", Modality::T1ce).unwrap();
            for (c, &idx) in stack.provenance.indices.iter().enumerate() {
                let ch = stack.pixels.index_axis(ndarray::Axis(2), c);
                for i in 0..ch.shape()[0] {
                    for j in 0..ch.shape()[1] {
                        let direct = match axis {
                            SliceAxis::Sagittal => data[(idx, i, j)],
                            SliceAxis::Coronal => data[(i, idx, j)],
                            SliceAxis::Axial => data[(i, j, idx)],
                        };
                        assert_eq!(ch[(i, j)], direct);
                    }
                }
            }
        }
    }

    #[test]
    fn provenance_round_trips_to_positions() {
        // mm -> index -> mm must land within half a voxel spacing
        let data = Array3::zeros((20, 20, 40));
        let mut affine = Affine::from_diag([1.0, 1.0, 2.5]);
        affine.0[2][3] = -10.0;
        let v = Volume::new(data, affine);
        let positions = [3.0, 17.5, 61.0];
        let stack =
            extract_slice_stack(&v, positions, SliceAxis::Axial, "p0", Modality::T2).unwrap();
        for (c, &idx) in stack.provenance.indices.iter().enumerate() {
            let back = -10.0 + 2.5 * idx as f64;
            assert!(
                (back - positions[c]).abs() <= 1.25 + 1e-12,
                "position {} -> index {} -> {}",
                positions[c],
                idx,
                back
            );
        }
    }

    #[test]
    fn resize_preserves_constant_images() {
        let px = Array3::from_elem((10, 10, 3), 0.6);
        let out = resize_stack(&px, 7, 13);
        assert_eq!(out.shape(), &[7, 13, 3]);
        assert!(out.iter().all(|&v| (v - 0.6).abs() < 1e-12));
    }
}
