use crate::components::{flood_fill, label_components};
use crate::mask::SliceMask;
use crate::volume::SliceImage;

use super::{
    BackendIdentity, CommandIntent, PointPrompt, Polarity, SegmentError, SegmentationBackend,
    TargetProfile,
};

/// Threshold + connected components for seeding, tolerance-bounded region
/// growing for positive prompts, component deletion for negative prompts.
/// Stateless; all connectivity is 8-neighbour.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegionGrowBackend;

impl SegmentationBackend for RegionGrowBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "region-grow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            deterministic: true,
        }
    }

    fn seed(
        &self,
        slice: &SliceImage,
        profile: &TargetProfile,
        _intent: &CommandIntent,
    ) -> Result<SliceMask, SegmentError> {
        let (w, h) = slice.dims();
        // Components come back ordered by their first row-major pixel, so a
        // strict `>` keeps the earliest one among equal areas.
        let mut best: Option<Vec<usize>> = None;
        for comp in label_components(w, h, |i| profile.in_range(slice.values[i])) {
            if comp.len() < profile.min_area {
                continue;
            }
            if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
                best = Some(comp);
            }
        }
        let mut mask = SliceMask::empty(w, h);
        for i in best.unwrap_or_default() {
            mask.set(i % w, i / w, true);
        }
        Ok(mask)
    }

    fn refine(
        &self,
        slice: &SliceImage,
        current: &SliceMask,
        prompts: &[PointPrompt],
        profile: &TargetProfile,
    ) -> Result<SliceMask, SegmentError> {
        let (w, h) = slice.dims();
        let mut mask = current.clone();
        for p in prompts {
            let start = p.y * w + p.x;
            match p.polarity {
                Polarity::Positive => {
                    let seed_value = slice.values[start];
                    let grown = flood_fill(w, h, start, |i| {
                        let v = slice.values[i];
                        profile.in_range(v) && (v - seed_value).abs() <= profile.grow_tolerance
                    });
                    for i in grown {
                        mask.set(i % w, i / w, true);
                    }
                }
                Polarity::Negative => {
                    let bits = mask.bits().to_vec();
                    for i in flood_fill(w, h, start, |i| bits[i]) {
                        mask.set(i % w, i / w, false);
                    }
                }
            }
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{
        refine_with_prompts, seed_segment, ProfileSet, PromptSet, Verb,
    };

    fn profile() -> TargetProfile {
        TargetProfile {
            name: "lesion".into(),
            synonyms: vec![],
            intensity_range: (50.0, 150.0),
            min_area: 9,
            grow_tolerance: 20.0,
        }
    }

    fn intent() -> CommandIntent {
        CommandIntent {
            verb: Verb::Segment,
            target: "lesion".into(),
            raw_text: "show me the lesion".into(),
        }
    }

    fn blocks(w: usize, h: usize, rects: &[(usize, usize, usize, usize, f32)]) -> SliceImage {
        let mut values = vec![0.0; w * h];
        for &(x0, y0, bw, bh, v) in rects {
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    values[y * w + x] = v;
                }
            }
        }
        SliceImage::new(w, h, values)
    }

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, bw: usize, bh: usize) -> SliceMask {
        SliceMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh)
    }

    fn prompt(x: usize, y: usize, polarity: Polarity, sequence: u64) -> PointPrompt {
        PointPrompt {
            slice_index: 0,
            x,
            y,
            polarity,
            sequence,
        }
    }

    #[test]
    fn seed_single_block() {
        let s = blocks(16, 16, &[(3, 4, 6, 6, 100.0)]);
        let set = ProfileSet::new(vec![profile()]).unwrap();
        let m = seed_segment(&s, &intent(), &set, &RegionGrowBackend).unwrap();
        assert_eq!(m, rect_mask(16, 16, 3, 4, 6, 6));
    }

    #[test]
    fn seed_keeps_largest_component() {
        let s = blocks(20, 20, &[(1, 1, 3, 3, 100.0), (10, 10, 6, 6, 100.0)]);
        let set = ProfileSet::new(vec![profile()]).unwrap();
        let m = seed_segment(&s, &intent(), &set, &RegionGrowBackend).unwrap();
        assert_eq!(m, rect_mask(20, 20, 10, 10, 6, 6));
    }

    #[test]
    fn seed_tie_prefers_first_row_major() {
        let s = blocks(20, 20, &[(12, 2, 4, 4, 100.0), (2, 10, 4, 4, 100.0)]);
        let set = ProfileSet::new(vec![profile()]).unwrap();
        let m = seed_segment(&s, &intent(), &set, &RegionGrowBackend).unwrap();
        assert_eq!(m, rect_mask(20, 20, 12, 2, 4, 4));
    }

    #[test]
    fn seed_below_min_area_is_empty() {
        let s = blocks(10, 10, &[(1, 1, 2, 2, 100.0)]);
        let set = ProfileSet::new(vec![profile()]).unwrap();
        assert!(seed_segment(&s, &intent(), &set, &RegionGrowBackend)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn positive_prompt_grows_uniform_square() {
        let s = blocks(12, 12, &[(4, 4, 5, 5, 100.0)]);
        let prompts: PromptSet = [prompt(6, 6, Polarity::Positive, 0)].into_iter().collect();
        let m = refine_with_prompts(&s, &SliceMask::empty(12, 12), &prompts, &profile(), &RegionGrowBackend)
            .unwrap();
        assert_eq!(m, rect_mask(12, 12, 4, 4, 5, 5));
    }

    #[test]
    fn positive_prompt_outside_range_adds_nothing() {
        let s = blocks(12, 12, &[(4, 4, 5, 5, 100.0)]);
        let prompts: PromptSet = [prompt(0, 0, Polarity::Positive, 0)].into_iter().collect();
        let m = refine_with_prompts(&s, &SliceMask::empty(12, 12), &prompts, &profile(), &RegionGrowBackend)
            .unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn negative_prompt_deletes_its_component() {
        let s = blocks(12, 12, &[]);
        let mut current = rect_mask(12, 12, 0, 0, 3, 3);
        current.union_with(&rect_mask(12, 12, 7, 7, 3, 3));
        let prompts: PromptSet = [prompt(1, 1, Polarity::Negative, 0)].into_iter().collect();
        let m = refine_with_prompts(&s, &current, &prompts, &profile(), &RegionGrowBackend).unwrap();
        assert_eq!(m, rect_mask(12, 12, 7, 7, 3, 3));

        // Outside the mask: no-op.
        let prompts: PromptSet = [prompt(5, 5, Polarity::Negative, 0)].into_iter().collect();
        let m = refine_with_prompts(&s, &current, &prompts, &profile(), &RegionGrowBackend).unwrap();
        assert_eq!(m, current);
    }

    #[test]
    fn sequence_order_wins_over_insertion_order() {
        let s = blocks(12, 12, &[(4, 4, 5, 5, 100.0)]);
        // Inserted negative-first, but the positive has the lower sequence.
        let prompts: PromptSet = [
            prompt(6, 6, Polarity::Negative, 2),
            prompt(6, 6, Polarity::Positive, 1),
        ]
        .into_iter()
        .collect();
        let m = refine_with_prompts(&s, &SliceMask::empty(12, 12), &prompts, &profile(), &RegionGrowBackend)
            .unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn prompt_validation() {
        let s = blocks(8, 8, &[]);
        let empty = SliceMask::empty(8, 8);
        let out: PromptSet = [prompt(8, 0, Polarity::Positive, 0)].into_iter().collect();
        assert!(matches!(
            refine_with_prompts(&s, &empty, &out, &profile(), &RegionGrowBackend),
            Err(SegmentError::PromptOutOfBounds { .. })
        ));
        let mut wrong = prompt(1, 1, Polarity::Positive, 0);
        wrong.slice_index = 3;
        let wrong: PromptSet = [wrong].into_iter().collect();
        assert!(matches!(
            refine_with_prompts(&s, &empty, &wrong, &profile(), &RegionGrowBackend),
            Err(SegmentError::PromptSliceMismatch { expected: 0, got: 3 })
        ));
        assert!(matches!(
            refine_with_prompts(&s, &empty, &PromptSet::new(), &profile(), &RegionGrowBackend),
            Err(SegmentError::NoPrompts)
        ));
    }
}
