//! Synthetic volumes with known ground truth, used by tests, the demo
//! command and the acceptance suite.

use rand::Rng;

use crate::mask::{MaskVolume, SliceMask};
use crate::propagation::Direction;
use crate::retrieval::{EmbeddingProvider, ReferenceIndex, ReferenceRecord, RetrievalError};
use crate::segmenter::{ProfileSet, TargetProfile};
use crate::volume::{AxisCode, AxisOrder, SliceAxis, Volume};

/// Voxels with `Σ ((p - c) / r)² ≤ 1`, in voxel units.
pub fn ellipsoid_mask(dims: [usize; 3], center: [f64; 3], semi_axes: [f64; 3], name: &str) -> MaskVolume {
    let mut m = MaskVolume::empty(dims, name);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = [x as f64, y as f64, z as f64]
                    .iter()
                    .zip(center.iter().zip(&semi_axes))
                    .map(|(p, (c, r))| ((p - c) / r).powi(2))
                    .sum::<f64>();
                if d <= 1.0 {
                    m.set(x, y, z, true);
                }
            }
        }
    }
    m
}

/// Ellipsoid of `inside` intensity in a background of `outside`.
pub fn ellipsoid_volume(
    dims: [usize; 3],
    spacing: [f32; 3],
    center: [f64; 3],
    semi_axes: [f64; 3],
    inside: f32,
    outside: f32,
) -> Volume {
    let m = ellipsoid_mask(dims, center, semi_axes, "");
    Volume::from_fn(dims, spacing, |x, y, z| if m.get(x, y, z) { inside } else { outside })
}

/// A bright ball of intensity 600 in zero background.
pub fn phantom_head(n: usize) -> Volume {
    let c = (n as f64 - 1.0) / 2.0;
    let r = n as f64 * 0.35;
    ellipsoid_volume([n; 3], [1.0; 3], [c; 3], [r; 3], 600.0, 0.0)
}

/// Profile matching the lesion intensity used by the phantoms below.
pub fn lesion_profile(name: &str) -> TargetProfile {
    TargetProfile {
        name: name.into(),
        synonyms: vec![],
        intensity_range: (50.0, 150.0),
        min_area: 4,
        grow_tolerance: 30.0,
    }
}

/// Bright `size`² squares on slices `z_span`, zero elsewhere.
pub fn square_phantom(dims: [usize; 3], origin: (usize, usize), size: usize, z_span: (usize, usize)) -> (Volume, MaskVolume) {
    let inside = |x: usize, y: usize, z: usize| {
        x >= origin.0 && x < origin.0 + size && y >= origin.1 && y < origin.1 + size && z >= z_span.0 && z <= z_span.1
    };
    let vol = Volume::from_fn(dims, [1.0; 3], |x, y, z| if inside(x, y, z) { 100.0 } else { 0.0 });
    let mut truth = MaskVolume::empty(dims, "lesion");
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                truth.set(x, y, z, inside(x, y, z));
            }
        }
    }
    (vol, truth)
}

/// A drifting square lesion with a slab of speckled slices on one side.
///
/// Each slab slice holds a 3×3 bright blob over the centre of the last
/// lesion square plus isolated speckles that never touch the blob, so
/// once propagation enters the slab it tracks only the blob. The blob's
/// overlap with the last lesion square is far below 0.3, which makes the
/// first slab slice the first sub-threshold step.
#[derive(Debug, Clone)]
pub struct NoiseSlabPhantom {
    pub volume: Volume,
    pub truth: MaskVolume,
    pub profile: TargetProfile,
    pub seed_index: usize,
    pub seed_mask: SliceMask,
    pub lesion_span: (usize, usize),
    pub slab_span: (usize, usize),
    pub slab_direction: Direction,
    /// First slab slice reached from the lesion.
    pub expected_break: usize,
    /// IoU between the blob footprint and the adjacent lesion square,
    /// counted voxel by voxel at construction.
    pub break_iou: f64,
}

struct Square {
    x0: usize,
    y0: usize,
    size: usize,
}

impl Square {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.size && y >= self.y0 && y < self.y0 + self.size
    }

    fn center(&self) -> (usize, usize) {
        (self.x0 + (self.size - 1) / 2, self.y0 + (self.size - 1) / 2)
    }
}

impl NoiseSlabPhantom {
    pub fn generate<R: Rng>(rng: &mut R) -> Self {
        let n = rng.gen_range(32..=44);
        let nz = rng.gen_range(28..=36);
        let size = rng.gen_range(7..=12);
        let lesion_len = rng.gen_range(5..=10);
        let slab_len = rng.gen_range(2..=6);
        let slab_direction = if rng.gen_bool(0.5) {
            Direction::Superior
        } else {
            Direction::Inferior
        };
        // Leave room for the slab and one empty slice on each side.
        let z0 = rng.gen_range(slab_len + 2..=nz - lesion_len - slab_len - 2);
        let z1 = z0 + lesion_len - 1;
        // Superior is decreasing index under the default axis order.
        let slab_span = match slab_direction {
            Direction::Superior => (z0 - slab_len, z0 - 1),
            Direction::Inferior => (z1 + 1, z1 + slab_len),
        };
        let margin = 3;
        let mut squares = Vec::with_capacity(lesion_len);
        let mut x0 = rng.gen_range(margin + 1..n - size - margin - 1);
        let mut y0 = rng.gen_range(margin + 1..n - size - margin - 1);
        for _ in 0..lesion_len {
            squares.push(Square { x0, y0, size });
            let step = |v: usize, r: &mut R| -> usize {
                let d: i64 = r.gen_range(-1..=1);
                (v as i64 + d).clamp(margin as i64, (n - size - margin) as i64) as usize
            };
            x0 = step(x0, rng);
            y0 = step(y0, rng);
        }
        let edge = match slab_direction {
            Direction::Superior => &squares[0],
            Direction::Inferior => &squares[lesion_len - 1],
        };
        let (bx, by) = edge.center();
        let in_blob = |x: usize, y: usize| x + 1 >= bx && x <= bx + 1 && y + 1 >= by && y <= by + 1;

        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..n {
            for x in 0..n {
                let (a, b) = (in_blob(x, y), edge.contains(x, y));
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        let break_iou = inter as f64 / union as f64;
        assert!(break_iou < 0.3, "construction guarantees a sub-threshold step");

        let mut values = vec![0f32; n * n * nz];
        let mut truth = MaskVolume::empty([n, n, nz], "lesion");
        for z in 0..nz {
            let lesion = (z0..=z1).contains(&z).then(|| &squares[z - z0]);
            let slab = (slab_span.0..=slab_span.1).contains(&z);
            for y in 0..n {
                for x in 0..n {
                    let i = x + n * (y + n * z);
                    values[i] = rng.gen_range(0.0..10.0);
                    if lesion.is_some_and(|s| s.contains(x, y)) {
                        values[i] = 100.0 + rng.gen_range(-5.0..5.0);
                        truth.set(x, y, z, true);
                    } else if slab && in_blob(x, y) {
                        values[i] = 100.0 + rng.gen_range(-5.0..5.0);
                    }
                }
            }
            if slab {
                let speckles = rng.gen_range(5..=20);
                for _ in 0..speckles {
                    let (sx, sy) = (rng.gen_range(0..n), rng.gen_range(0..n));
                    // Chebyshev distance 2 or more from every blob pixel.
                    if sx + 3 <= bx || sx >= bx + 3 || sy + 3 <= by || sy >= by + 3 {
                        values[sx + n * (sy + n * z)] = 100.0;
                    }
                }
            }
        }
        let volume = Volume::new([n, n, nz], [1.0; 3], values, AxisOrder::default(), "noise-slab")
            .expect("valid phantom");
        let seed_index = rng.gen_range(z0..=z1);
        let seed_mask = truth.slice(SliceAxis::Z, seed_index).expect("in range");
        let expected_break = match slab_direction {
            Direction::Superior => slab_span.1,
            Direction::Inferior => slab_span.0,
        };
        Self {
            volume,
            truth,
            profile: lesion_profile("lesion"),
            seed_index,
            seed_mask,
            lesion_span: (z0, z1),
            slab_span,
            slab_direction,
            expected_break,
            break_iou,
        }
    }
}

/// A spheroid lesion whose cross-section shrinks toward its poles, so
/// propagation may stop on IoU collapse, on an empty slice or at the
/// volume edge depending on the draw.
pub fn fuzzed_lesion<R: Rng>(rng: &mut R) -> (Volume, MaskVolume, usize) {
    let n = rng.gen_range(16..=28);
    let nz = rng.gen_range(8..=24);
    let c = [
        rng.gen_range(6.0..n as f64 - 6.0),
        rng.gen_range(6.0..n as f64 - 6.0),
        rng.gen_range(0.0..nz as f64),
    ];
    let r = [
        rng.gen_range(3.0..6.0),
        rng.gen_range(3.0..6.0),
        rng.gen_range(2.0..nz as f64),
    ];
    let order = if rng.gen_bool(0.3) {
        AxisOrder([AxisCode::LR, AxisCode::AP, AxisCode::IS])
    } else {
        AxisOrder::default()
    };
    let mut truth = ellipsoid_mask([n, n, nz], c, r, "lesion");
    // Always keep a non-empty seed slice.
    let seed = (c[2].round() as usize).min(nz - 1);
    if truth.slice(SliceAxis::Z, seed).expect("in range").is_empty() {
        truth.set(c[0] as usize, c[1] as usize, seed, true);
    }
    let speckle = rng.gen_bool(0.5);
    let vol = Volume::from_fn([n, n, nz], [1.0; 3], |x, y, z| {
        if truth.get(x, y, z) {
            100.0
        } else if speckle && (x * 7 + y * 13 + z * 3) % 11 == 0 {
            90.0
        } else {
            0.0
        }
    })
    .with_axis_order(order)
    .expect("valid order");
    (vol, truth, seed)
}

/// Head-shaped volume for end-to-end runs: a 600-intensity ball with a
/// 1000-intensity tumour sphere inside it.
#[derive(Debug, Clone)]
pub struct TumorHead {
    pub volume: Volume,
    pub truth: MaskVolume,
    pub tumor_slices: (usize, usize),
}

pub const TUMOR_INTENSITY: f32 = 1000.0;
pub const HEAD_INTENSITY: f32 = 600.0;

pub fn tumor_head(dims: [usize; 3], spacing: [f32; 3], tumor_center: [f64; 3], tumor_radius: f64) -> TumorHead {
    let c = [
        (dims[0] as f64 - 1.0) / 2.0,
        (dims[1] as f64 - 1.0) / 2.0,
        (dims[2] as f64 - 1.0) / 2.0,
    ];
    let head = ellipsoid_mask(
        dims,
        c,
        [dims[0] as f64 * 0.42, dims[1] as f64 * 0.42, dims[2] as f64 * 0.42],
        "head",
    );
    let truth = ellipsoid_mask(dims, tumor_center, [tumor_radius; 3], "brain tumor");
    let volume = Volume::from_fn(dims, spacing, |x, y, z| {
        if truth.get(x, y, z) {
            TUMOR_INTENSITY
        } else if head.get(x, y, z) {
            HEAD_INTENSITY
        } else {
            0.0
        }
    });
    let zs: Vec<usize> = (0..dims[2])
        .filter(|&z| !truth.slice(SliceAxis::Z, z).expect("in range").is_empty())
        .collect();
    TumorHead {
        volume,
        truth,
        tumor_slices: (zs[0], *zs.last().expect("tumour inside grid")),
    }
}

/// Profiles matching [`tumor_head`].
pub fn tumor_profiles() -> ProfileSet {
    ProfileSet::new(vec![TargetProfile {
        name: "brain tumor".into(),
        synonyms: vec!["tumor".into(), "glioma".into(), "lesion".into()],
        intensity_range: (900.0, 1100.0),
        min_area: 4,
        grow_tolerance: 100.0,
    }])
    .expect("valid profiles")
}

/// Standard demo case: 48×48×40 at (0.5, 0.5, 1.0) mm with the tumour
/// centred on the middle slice.
pub fn demo_head() -> TumorHead {
    tumor_head([48, 48, 40], [0.5, 0.5, 1.0], [26.0, 22.0, 20.0], 6.0)
}

/// Labelled reference slices drawn from several tumour heads, for tests
/// and demos that need a populated index.
pub fn reference_index(embedder: &dyn EmbeddingProvider) -> Result<ReferenceIndex, RetrievalError> {
    let cases = [
        ("ref-a", [20.0, 24.0, 14.0], 5.0),
        ("ref-b", [28.0, 20.0, 24.0], 7.0),
        ("ref-c", [22.0, 28.0, 18.0], 4.0),
    ];
    let mut records = Vec::new();
    for (patient, center, radius) in cases {
        let case = tumor_head([48, 48, 40], [0.5, 0.5, 1.0], center, radius);
        for z in (2..38).step_by(3) {
            let slice = case.volume.slice_at(z).expect("in range");
            let has_pathology = !case.truth.slice(SliceAxis::Z, z).expect("in range").is_empty();
            records.push(ReferenceRecord {
                record_id: records.len() as u64,
                patient_id: patient.into(),
                slice_index: z,
                has_pathology,
                vector: embedder.embed(&slice)?,
                thumbnail_ref: format!("{patient}#{z}"),
            });
        }
    }
    ReferenceIndex::build(records)
}
