//! Slice-by-slice bidirectional mask propagation with an inter-slice IoU
//! early stop.
//!
//! Each step derives positive prompts from the previous slice's mask,
//! segments the next slice from an empty mask with those prompts, and
//! accepts the result only while it stays non-empty and (when the break
//! rule is on) overlaps the previous mask with IoU at or above the
//! threshold. The superior pass runs to completion before the inferior
//! pass starts; accepted masks are handed to the sink as they are produced.

use std::sync::mpsc::SyncSender;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::label_components;
use crate::mask::{MaskVolume, SliceMask};
use crate::segmenter::{
    refine_with_prompts, PointPrompt, Polarity, PromptSet, SegmentationBackend, TargetProfile,
};
use crate::volume::{SliceAxis, Volume};

pub const DEFAULT_IOU_BREAK: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("cannot derive prompts from an empty mask")]
    EmptyMask,
    #[error("seed slice {index} out of range for extent {extent}")]
    SeedOutOfRange { index: usize, extent: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directions {
    Superior,
    Inferior,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Superior,
    Inferior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub iou_break_threshold: f64,
    pub break_enabled: bool,
    /// `None` means the slicing-axis extent.
    pub max_steps_per_direction: Option<usize>,
    pub directions: Directions,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            iou_break_threshold: DEFAULT_IOU_BREAK,
            break_enabled: true,
            max_steps_per_direction: None,
            directions: Directions::Both,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropagationError> {
        if !(0.0..=1.0).contains(&self.iou_break_threshold) {
            return Err(PropagationError::Config(format!(
                "iou_break_threshold {} outside [0, 1]",
                self.iou_break_threshold
            )));
        }
        if self.max_steps_per_direction == Some(0) {
            return Err(PropagationError::Config("max_steps_per_direction must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum HaltReason {
    IouBreak,
    VolumeBoundary,
    EmptyMask,
    StepLimit,
    BackendError { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub direction: Direction,
    pub slice_index: usize,
    pub iou_vs_previous: f64,
    pub mask_area: usize,
    pub accepted: bool,
    /// Emission ordinal; `None` for the discarded halting step.
    pub emitted_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub seed_slice_index: usize,
    pub axis: SliceAxis,
    pub steps: Vec<StepRecord>,
    pub superior_halt: Option<HaltReason>,
    pub inferior_halt: Option<HaltReason>,
}

impl PropagationReport {
    pub fn halt(&self, direction: Direction) -> Option<&HaltReason> {
        match direction {
            Direction::Superior => self.superior_halt.as_ref(),
            Direction::Inferior => self.inferior_halt.as_ref(),
        }
    }

    pub fn accepted(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.accepted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceUpdate {
    pub ordinal: u64,
    pub direction: Direction,
    pub slice_index: usize,
    pub iou_vs_previous: f64,
    pub mask: SliceMask,
}

/// Receives accepted masks in production order. Implementations may block
/// to apply back-pressure.
pub trait PropagationSink {
    fn emit(&mut self, update: SliceUpdate);
}

impl PropagationSink for Vec<SliceUpdate> {
    fn emit(&mut self, update: SliceUpdate) {
        self.push(update);
    }
}

/// Blocks while the channel is full; a hung-up receiver is ignored so the
/// run still completes and its result can be persisted.
impl PropagationSink for SyncSender<SliceUpdate> {
    fn emit(&mut self, update: SliceUpdate) {
        let _ = self.send(update);
    }
}

pub struct FnSink<F>(pub F);

impl<F: FnMut(SliceUpdate)> PropagationSink for FnSink<F> {
    fn emit(&mut self, update: SliceUpdate) {
        (self.0)(update)
    }
}

/// `|a ∩ b| / |a ∪ b|`, and 0.0 when both are empty.
pub fn inter_slice_iou(a: &SliceMask, b: &SliceMask) -> Result<f64, PropagationError> {
    if a.dims() != b.dims() {
        return Err(PropagationError::DimensionMismatch(a.dims(), b.dims()));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// One-ring 8-neighbour erosion; pixels on the grid border never survive.
pub fn erode(mask: &SliceMask) -> SliceMask {
    let (w, h) = mask.dims();
    SliceMask::from_fn(w, h, |x, y| {
        if !mask.get(x, y) || x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return false;
        }
        (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| mask.get(xx, yy)))
    })
}

/// One positive prompt per 8-connected component of `prev`, placed at the
/// eroded-interior pixel nearest the component centroid, or at the nearest
/// member pixel when erosion removes the whole component. Distance ties go
/// to the earlier row-major pixel.
pub fn derive_seed_prompts(prev: &SliceMask, slice_index: usize) -> Result<PromptSet, PropagationError> {
    if prev.is_empty() {
        return Err(PropagationError::EmptyMask);
    }
    let (w, h) = prev.dims();
    let interior = erode(prev);
    let comps = label_components(w, h, |i| prev.bits()[i]);
    let mut prompts = PromptSet::new();
    for (seq, comp) in comps.iter().enumerate() {
        let n = comp.len() as f64;
        let cx = comp.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
        let cy = comp.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
        let nearest = |pixels: &mut dyn Iterator<Item = usize>| {
            pixels.min_by(|&a, &b| {
                let d = |i: usize| ((i % w) as f64 - cx).powi(2) + ((i / w) as f64 - cy).powi(2);
                d(a).total_cmp(&d(b)).then(a.cmp(&b))
            })
        };
        let pick = nearest(&mut comp.iter().copied().filter(|&i| interior.bits()[i]))
            .or_else(|| nearest(&mut comp.iter().copied()))
            .expect("component is non-empty");
        prompts.push(PointPrompt {
            slice_index,
            x: pick % w,
            y: pick / w,
            polarity: Polarity::Positive,
            sequence: seq as u64,
        });
    }
    Ok(prompts)
}

/// Propagates `seed_mask` from `seed_index` along `axis` through `volume`.
///
/// Backend failures do not abort the call: the failing direction halts
/// with [`HaltReason::BackendError`] and the partial result is returned.
#[allow(clippy::too_many_arguments)]
pub fn propagate_bidirectional(
    volume: &Volume,
    axis: SliceAxis,
    seed_index: usize,
    seed_mask: &SliceMask,
    profile: &TargetProfile,
    backend: &dyn SegmentationBackend,
    config: &PropagationConfig,
    sink: &mut dyn PropagationSink,
) -> Result<(MaskVolume, PropagationReport), PropagationError> {
    config.validate()?;
    let dims = volume.dims();
    let extent = axis.extent(dims);
    if seed_index >= extent {
        return Err(PropagationError::SeedOutOfRange {
            index: seed_index,
            extent,
        });
    }
    let plane = axis.plane_dims(dims);
    if seed_mask.dims() != plane {
        return Err(PropagationError::DimensionMismatch(plane, seed_mask.dims()));
    }
    if seed_mask.is_empty() {
        return Err(PropagationError::EmptyMask);
    }

    let mut masks = MaskVolume::empty(dims, profile.name.clone());
    masks
        .set_slice(axis, seed_index, seed_mask)
        .expect("seed dims checked");
    let mut report = PropagationReport {
        seed_slice_index: seed_index,
        axis,
        steps: Vec::new(),
        superior_halt: None,
        inferior_halt: None,
    };
    let superior = volume.axis_order().superior_step(axis);
    let passes: &[Direction] = match config.directions {
        Directions::Superior => &[Direction::Superior],
        Directions::Inferior => &[Direction::Inferior],
        Directions::Both => &[Direction::Superior, Direction::Inferior],
    };
    let max_steps = config.max_steps_per_direction.unwrap_or(extent);
    let mut ordinal = 0u64;

    for &direction in passes {
        let step = match direction {
            Direction::Superior => superior,
            Direction::Inferior => -superior,
        };
        let mut prev = seed_mask.clone();
        let mut index = seed_index as i64;
        let mut taken = 0usize;
        let halt = loop {
            let next_index = index + step;
            if next_index < 0 || next_index >= extent as i64 {
                break HaltReason::VolumeBoundary;
            }
            if taken >= max_steps {
                break HaltReason::StepLimit;
            }
            let next_index = next_index as usize;
            let slice = volume
                .slice_along(axis, next_index)
                .expect("index checked against extent");
            let prompts = derive_seed_prompts(&prev, next_index).expect("prev is non-empty");
            let empty = SliceMask::empty(plane.0, plane.1);
            let next = match refine_with_prompts(&slice, &empty, &prompts, profile, backend) {
                Ok(m) => m,
                Err(e) => {
                    break HaltReason::BackendError {
                        message: e.to_string(),
                    }
                }
            };
            taken += 1;

            if next.is_empty() {
                report.steps.push(StepRecord {
                    direction,
                    slice_index: next_index,
                    iou_vs_previous: 0.0,
                    mask_area: 0,
                    accepted: false,
                    emitted_at: None,
                });
                break HaltReason::EmptyMask;
            }
            let iou = inter_slice_iou(&next, &prev).expect("same plane dims");
            if config.break_enabled && iou < config.iou_break_threshold {
                report.steps.push(StepRecord {
                    direction,
                    slice_index: next_index,
                    iou_vs_previous: iou,
                    mask_area: next.area(),
                    accepted: false,
                    emitted_at: None,
                });
                break HaltReason::IouBreak;
            }

            masks
                .set_slice(axis, next_index, &next)
                .expect("plane dims checked");
            report.steps.push(StepRecord {
                direction,
                slice_index: next_index,
                iou_vs_previous: iou,
                mask_area: next.area(),
                accepted: true,
                emitted_at: Some(ordinal),
            });
            sink.emit(SliceUpdate {
                ordinal,
                direction,
                slice_index: next_index,
                iou_vs_previous: iou,
                mask: next.clone(),
            });
            ordinal += 1;
            prev = next;
            index = next_index as i64;
        };
        match direction {
            Direction::Superior => report.superior_halt = Some(halt),
            Direction::Inferior => report.inferior_halt = Some(halt),
        }
    }
    Ok((masks, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{BackendIdentity, CommandIntent, RegionGrowBackend, SegmentError};
    use crate::volume::SliceImage;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, bw: usize, bh: usize) -> SliceMask {
        SliceMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh)
    }

    #[test]
    fn iou_examples() {
        let a = rect(8, 8, 1, 1, 3, 3);
        assert_eq!(inter_slice_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(inter_slice_iou(&a, &rect(8, 8, 5, 5, 2, 2)).unwrap(), 0.0);
        let p = rect(8, 8, 0, 0, 4, 1);
        let q = rect(8, 8, 2, 0, 4, 1);
        assert!((inter_slice_iou(&p, &q).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        let e = SliceMask::empty(8, 8);
        assert_eq!(inter_slice_iou(&e, &e).unwrap(), 0.0);
        assert!(inter_slice_iou(&e, &SliceMask::empty(7, 8)).is_err());
    }

    #[test]
    fn prompt_at_square_center() {
        let ps = derive_seed_prompts(&rect(12, 12, 3, 3, 5, 5), 4).unwrap();
        assert_eq!(ps.len(), 1);
        let p = ps.as_slice()[0];
        assert_eq!((p.x, p.y, p.slice_index, p.polarity), (5, 5, 4, Polarity::Positive));
    }

    #[test]
    fn one_prompt_per_component() {
        let mut m = rect(20, 20, 1, 1, 4, 4);
        m.union_with(&rect(20, 20, 12, 12, 5, 5));
        let ps = derive_seed_prompts(&m, 0).unwrap();
        assert_eq!(ps.len(), 2);
        for p in ps.as_slice() {
            assert!(m.get(p.x, p.y));
        }
        assert_ne!(ps.as_slice()[0].sequence, ps.as_slice()[1].sequence);
    }

    #[test]
    fn thin_component_falls_back_to_member_pixel() {
        // A 1-pixel-wide line erodes away entirely.
        let m = rect(10, 10, 2, 4, 6, 1);
        let ps = derive_seed_prompts(&m, 0).unwrap();
        let p = ps.as_slice()[0];
        assert!(m.get(p.x, p.y));
        // Centroid x = 4.5: tie between 4 and 5, earlier pixel wins.
        assert_eq!((p.x, p.y), (4, 4));
    }

    #[test]
    fn empty_mask_has_no_prompts() {
        assert_eq!(
            derive_seed_prompts(&SliceMask::empty(4, 4), 0),
            Err(PropagationError::EmptyMask)
        );
    }

    fn profile() -> TargetProfile {
        TargetProfile {
            name: "lesion".into(),
            synonyms: vec![],
            intensity_range: (50.0, 150.0),
            min_area: 4,
            grow_tolerance: 30.0,
        }
    }

    /// Bright 8×8 square on slices 5..=14 of a 24×24×20 volume.
    fn square_volume() -> Volume {
        Volume::from_fn([24, 24, 20], [1.0; 3], |x, y, z| {
            if (8..16).contains(&x) && (8..16).contains(&y) && (5..=14).contains(&z) {
                100.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn square_phantom_covers_lesion_span() {
        let vol = square_volume();
        let seed = rect(24, 24, 8, 8, 8, 8);
        let mut sink = Vec::new();
        let (masks, report) = propagate_bidirectional(
            &vol,
            SliceAxis::Z,
            9,
            &seed,
            &profile(),
            &RegionGrowBackend,
            &PropagationConfig::default(),
            &mut sink,
        )
        .unwrap();
        for z in 0..20 {
            let expected = if (5..=14).contains(&z) { seed.clone() } else { SliceMask::empty(24, 24) };
            assert_eq!(masks.slice(SliceAxis::Z, z).unwrap(), expected, "slice {z}");
        }
        assert_eq!(report.superior_halt, Some(HaltReason::EmptyMask));
        assert_eq!(report.inferior_halt, Some(HaltReason::EmptyMask));
        // Superior is decreasing index by default: 8,7,6,5 then 10..=14.
        let order: Vec<usize> = sink.iter().map(|u| u.slice_index).collect();
        assert_eq!(order, vec![8, 7, 6, 5, 10, 11, 12, 13, 14]);
        assert!(sink.iter().enumerate().all(|(i, u)| u.ordinal == i as u64));
    }

    #[test]
    fn step_limit_and_single_direction() {
        let vol = square_volume();
        let seed = rect(24, 24, 8, 8, 8, 8);
        let config = PropagationConfig {
            max_steps_per_direction: Some(2),
            directions: Directions::Inferior,
            ..Default::default()
        };
        let mut sink = Vec::new();
        let (_, report) = propagate_bidirectional(
            &vol, SliceAxis::Z, 9, &seed, &profile(), &RegionGrowBackend, &config, &mut sink,
        )
        .unwrap();
        assert_eq!(report.superior_halt, None);
        assert_eq!(report.inferior_halt, Some(HaltReason::StepLimit));
        assert_eq!(sink.len(), 2);
    }

    #[test]
    fn volume_boundary_halt() {
        let vol = Volume::from_fn([10, 10, 4], [1.0; 3], |x, y, _| {
            if (2..8).contains(&x) && (2..8).contains(&y) { 100.0 } else { 0.0 }
        });
        let seed = rect(10, 10, 2, 2, 6, 6);
        let (masks, report) = propagate_bidirectional(
            &vol, SliceAxis::Z, 1, &seed, &profile(), &RegionGrowBackend,
            &PropagationConfig::default(), &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(report.superior_halt, Some(HaltReason::VolumeBoundary));
        assert_eq!(report.inferior_halt, Some(HaltReason::VolumeBoundary));
        assert_eq!(masks.count(), 4 * 36);
    }

    struct FailAfter(std::sync::atomic::AtomicUsize);

    impl SegmentationBackend for FailAfter {
        fn identity(&self) -> BackendIdentity {
            RegionGrowBackend.identity()
        }
        fn seed(&self, s: &SliceImage, p: &TargetProfile, i: &CommandIntent) -> Result<SliceMask, SegmentError> {
            RegionGrowBackend.seed(s, p, i)
        }
        fn refine(
            &self,
            s: &SliceImage,
            c: &SliceMask,
            prompts: &[PointPrompt],
            p: &TargetProfile,
        ) -> Result<SliceMask, SegmentError> {
            if self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 2 {
                return Err(SegmentError::Backend("timeout".into()));
            }
            RegionGrowBackend.refine(s, c, prompts, p)
        }
    }

    #[test]
    fn backend_failure_keeps_partial_result() {
        let vol = square_volume();
        let seed = rect(24, 24, 8, 8, 8, 8);
        let backend = FailAfter(std::sync::atomic::AtomicUsize::new(0));
        let mut sink = Vec::new();
        let (masks, report) = propagate_bidirectional(
            &vol, SliceAxis::Z, 9, &seed, &profile(), &backend,
            &PropagationConfig::default(), &mut sink,
        )
        .unwrap();
        assert_eq!(sink.len(), 2);
        assert!(matches!(report.superior_halt, Some(HaltReason::BackendError { .. })));
        assert!(matches!(report.inferior_halt, Some(HaltReason::BackendError { .. })));
        assert_eq!(masks.count(), 3 * 64);
    }

    #[test]
    fn precondition_errors() {
        let vol = square_volume();
        let run = |idx, seed: &SliceMask| {
            propagate_bidirectional(
                &vol, SliceAxis::Z, idx, seed, &profile(), &RegionGrowBackend,
                &PropagationConfig::default(), &mut Vec::new(),
            )
        };
        assert_eq!(run(9, &SliceMask::empty(24, 24)).unwrap_err(), PropagationError::EmptyMask);
        assert!(matches!(
            run(20, &rect(24, 24, 8, 8, 8, 8)),
            Err(PropagationError::SeedOutOfRange { .. })
        ));
        assert!(matches!(
            run(9, &rect(20, 24, 8, 8, 8, 8)),
            Err(PropagationError::DimensionMismatch(..))
        ));
    }
}
