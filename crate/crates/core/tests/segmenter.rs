use std::collections::VecDeque;

use medseg_core::mask::SliceMask;
use medseg_core::phantom::{ellipsoid_volume, lesion_profile};
use medseg_core::segmenter::{
    refine_with_prompts, seed_segment, CommandIntent, PointPrompt, Polarity, ProfileSet, PromptSet, RegionGrowBackend,
    SegmentationBackend, Verb,
};
use medseg_core::volume::SliceImage;
use proptest::prelude::*;

fn intent() -> CommandIntent {
    CommandIntent {
        verb: Verb::Segment,
        target: "lesion".into(),
        raw_text: "segment the lesion".into(),
    }
}

fn profiles() -> ProfileSet {
    ProfileSet::new(vec![lesion_profile("lesion")]).unwrap()
}

/// Independent labelling: BFS with an explicit 3×3 neighbourhood.
fn oracle_components(w: usize, h: usize, fg: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !fg[y * w + x] || seen[y * w + x] {
                continue;
            }
            let mut comp = Vec::new();
            let mut q = VecDeque::from([(x, y)]);
            seen[y * w + x] = true;
            while let Some((cx, cy)) = q.pop_front() {
                comp.push((cx, cy));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let i = ny as usize * w + nx as usize;
                        if fg[i] && !seen[i] {
                            seen[i] = true;
                            q.push_back((nx as usize, ny as usize));
                        }
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

#[test]
fn equatorial_seed_matches_component_oracle() {
    // Main ellipsoid plus a smaller one that also crosses the equator.
    let a = ellipsoid_volume([40, 40, 20], [1.0; 3], [14.0, 18.0, 10.0], [8.0, 6.0, 5.0], 100.0, 0.0);
    let b = ellipsoid_volume([40, 40, 20], [1.0; 3], [31.0, 10.0, 10.0], [3.0, 3.0, 3.0], 120.0, 0.0);
    let slice_a = a.slice_at(10).unwrap();
    let slice_b = b.slice_at(10).unwrap();
    let values: Vec<f32> = slice_a.values.iter().zip(&slice_b.values).map(|(p, q)| p.max(*q)).collect();
    let slice = SliceImage::new(40, 40, values);

    let prof = lesion_profile("lesion");
    let fg: Vec<bool> = slice.values.iter().map(|&v| prof.in_range(v)).collect();
    let comps = oracle_components(40, 40, &fg);
    assert_eq!(comps.len(), 2);
    let largest = comps.iter().max_by_key(|c| c.len()).unwrap();

    let mask = seed_segment(&slice, &intent(), &profiles(), &RegionGrowBackend).unwrap();
    assert_eq!(mask.area(), largest.len());
    for &(x, y) in largest {
        assert!(mask.get(x, y));
    }
}

fn slice_strategy() -> impl Strategy<Value = SliceImage> {
    (3usize..14, 3usize..14).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop_oneof![Just(0.0f32), Just(100.0), Just(120.0), Just(140.0), 0f32..200.0], w * h)
            .prop_map(move |v| SliceImage::new(w, h, v))
    })
}

fn prompts_for(slice: &SliceImage, raw: &[(usize, usize, bool)]) -> PromptSet {
    raw.iter()
        .enumerate()
        .map(|(i, &(x, y, pos))| PointPrompt {
            slice_index: slice.slice_index,
            x: x % slice.width,
            y: y % slice.height,
            polarity: if pos { Polarity::Positive } else { Polarity::Negative },
            sequence: i as u64,
        })
        .collect()
}

fn is_single_component(m: &SliceMask) -> bool {
    oracle_components(m.width(), m.height(), m.bits()).len() == 1
}

fn subset(a: &SliceMask, b: &SliceMask) -> bool {
    a.bits().iter().zip(b.bits()).all(|(&x, &y)| !x || y)
}

proptest! {
    #[test]
    fn seed_is_deterministic_single_component(slice in slice_strategy()) {
        let a = RegionGrowBackend.seed(&slice, &lesion_profile("lesion"), &intent()).unwrap();
        let b = RegionGrowBackend.seed(&slice, &lesion_profile("lesion"), &intent()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.is_empty() || is_single_component(&a));
    }

    #[test]
    fn positive_prompts_never_shrink(slice in slice_strategy(), pts in prop::collection::vec((0usize..20, 0usize..20), 1..6)) {
        let prof = lesion_profile("lesion");
        let start = RegionGrowBackend.seed(&slice, &prof, &intent()).unwrap();
        let raw: Vec<_> = pts.iter().map(|&(x, y)| (x, y, true)).collect();
        let out = refine_with_prompts(&slice, &start, &prompts_for(&slice, &raw), &prof, &RegionGrowBackend).unwrap();
        prop_assert!(subset(&start, &out));
        let again = refine_with_prompts(&slice, &start, &prompts_for(&slice, &raw), &prof, &RegionGrowBackend).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn negative_prompts_never_grow(slice in slice_strategy(), pts in prop::collection::vec((0usize..20, 0usize..20), 1..6)) {
        let prof = lesion_profile("lesion");
        let full = SliceMask::from_fn(slice.width, slice.height, |x, y| prof.in_range(slice.get(x, y)));
        let raw: Vec<_> = pts.iter().map(|&(x, y)| (x, y, false)).collect();
        let out = refine_with_prompts(&slice, &full, &prompts_for(&slice, &raw), &prof, &RegionGrowBackend).unwrap();
        prop_assert!(subset(&out, &full));
    }

    #[test]
    fn negative_prompt_outside_mask_is_a_no_op(slice in slice_strategy(), x in 0usize..20, y in 0usize..20) {
        let prof = lesion_profile("lesion");
        let current = RegionGrowBackend.seed(&slice, &prof, &intent()).unwrap();
        let (x, y) = (x % slice.width, y % slice.height);
        prop_assume!(!current.get(x, y));
        let out = refine_with_prompts(&slice, &current, &prompts_for(&slice, &[(x, y, false)]), &prof, &RegionGrowBackend).unwrap();
        prop_assert_eq!(out, current);
    }
}
