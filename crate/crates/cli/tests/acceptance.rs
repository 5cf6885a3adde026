//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always print.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medseg_client::Client;
use medseg_core::mask::{MaskVolume, SliceMask};
use medseg_core::mesh::mask_mesh;
use medseg_core::mesh::obj::{read_obj, write_obj};
use medseg_core::metrics::{angle_between, composite_scores, dice, tlx_scale, SmoothingState, TrialRecord};
use medseg_core::phantom::{demo_head, ellipsoid_mask, fuzzed_lesion, reference_index, tumor_profiles, NoiseSlabPhantom};
use medseg_core::propagation::{
    inter_slice_iou, propagate_bidirectional, Direction, HaltReason, PropagationConfig, PropagationReport, SliceUpdate,
};
use medseg_core::protocol::{MeshRequest, PropagateRequest};
use medseg_core::retrieval::{BuiltinEmbedder, EmbeddingVector, ReferenceIndex, ReferenceRecord, SearchFilter};
use medseg_core::segmenter::{Polarity, RegionGrowBackend, TargetProfile};
use medseg_core::session::{replay, SessionContext, SessionState, EVENTS_FILE, MASKS_FILE};
use medseg_core::volume::{load_mask, save_mask, save_volume, SliceAxis, Volume};
use medseg_server::AppState;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    if let Some(limit) = limit {
        ensure!(took < limit, "{detail}; took {took:.2?}, limit {limit:?}");
    }
    Ok(format!("{detail}; {took:.2?}"))
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for i in 0..1000 {
        let pa = rng.gen_range(0.0..1.0);
        let pb = rng.gen_range(0.0..1.0);
        let a = SliceMask::from_fn(8, 8, |_, _| rng.gen_bool(pa));
        let b = SliceMask::from_fn(8, 8, |_, _| rng.gen_bool(pb));
        let (mut na, mut nb, mut both, mut either) = (0u32, 0u32, 0u32, 0u32);
        for (&p, &q) in a.bits().iter().zip(b.bits()) {
            na += p as u32;
            nb += q as u32;
            both += (p && q) as u32;
            either += (p || q) as u32;
        }
        let d = if na + nb == 0 { 1.0 } else { (2 * both) as f64 / (na + nb) as f64 };
        let j = if either == 0 { 0.0 } else { both as f64 / either as f64 };
        ensure!(dice(&a, &b).map_err(|e| e.to_string())? == d, "pair {i}: dice mismatch");
        ensure!(inter_slice_iou(&a, &b).map_err(|e| e.to_string())? == j, "pair {i}: IoU mismatch");
    }
    let e = SliceMask::empty(8, 8);
    ensure!(dice(&e, &e).unwrap() == 1.0, "both-empty Dice is not 1.0");
    ensure!(inter_slice_iou(&e, &e).unwrap() == 0.0, "both-empty IoU is not 0.0");
    Ok("1000 random 8x8 pairs equal voxel counting exactly, empty conventions hold".into())
}

fn smoothing() -> Check {
    let s = SmoothingState::new([1.0, 0.0, 0.0], 0.2).map_err(|e| e.to_string())?;
    let raw = s.blend([0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    for (got, want) in raw.iter().zip([0.8, 0.2, 0.0]) {
        ensure!((got - want).abs() <= 1e-9, "raw blend {raw:?}");
    }
    let mut s = SmoothingState::new([1.0, 0.0, 0.0], 0.2).unwrap();
    let mut oracle = [1.0f64, 0.0, 0.0];
    let mut out = [0.0; 3];
    for _ in 0..50 {
        out = s.smooth([0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
        let b = [0.8 * oracle[0], 0.8 * oracle[1] + 0.2, 0.8 * oracle[2]];
        let n = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        oracle = b.map(|v| v / n);
    }
    let angle = angle_between(out, [0.0, 1.0, 0.0]);
    ensure!(angle < 0.01, "after 50 steps the angle is {angle} rad");
    ensure!(angle_between(out, oracle) < 1e-12, "diverges from the recurrence");
    Ok(format!("raw blend (0.8, 0.2, 0), angle after 50 steps {angle:.2e} rad"))
}

fn run_propagation(
    volume: &Volume,
    seed: usize,
    mask: &SliceMask,
    profile: &TargetProfile,
    break_enabled: bool,
) -> Result<(MaskVolume, PropagationReport, Vec<SliceUpdate>), String> {
    let mut sink = Vec::new();
    let config = PropagationConfig { break_enabled, ..Default::default() };
    let (mv, report) = propagate_bidirectional(volume, volume.axial_axis(), seed, mask, profile, &RegionGrowBackend, &config, &mut sink)
        .map_err(|e| e.to_string())?;
    Ok((mv, report, sink))
}

fn iou_break_ablation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 24;
    let mut strictly = 0;
    let (mut sum_on, mut sum_off) = (0.0, 0.0);
    for i in 0..cases {
        let p = NoiseSlabPhantom::generate(&mut rng);
        let (on, report, _) = run_propagation(&p.volume, p.seed_index, &p.seed_mask, &p.profile, true)?;
        let (off, _, _) = run_propagation(&p.volume, p.seed_index, &p.seed_mask, &p.profile, false)?;
        let (d_on, d_off) = (dice(&on, &p.truth).unwrap(), dice(&off, &p.truth).unwrap());
        ensure!(d_on >= d_off, "case {i}: Dice on {d_on} < off {d_off}");
        strictly += (d_on > d_off) as usize;
        sum_on += d_on;
        sum_off += d_off;
        ensure!(report.halt(p.slab_direction) == Some(&HaltReason::IouBreak), "case {i}: halt {:?}", report.halt(p.slab_direction));
        let first = report.steps.iter().find(|s| s.direction == p.slab_direction && !s.accepted);
        ensure!(
            first.map(|s| s.slice_index) == Some(p.expected_break),
            "case {i}: broke at {:?}, construction says {}",
            first.map(|s| s.slice_index),
            p.expected_break
        );
    }
    ensure!(strictly * 10 >= cases * 9, "strictly better in only {strictly}/{cases}");
    Ok(format!(
        "{cases} phantoms, on >= off in all, strictly in {strictly}, mean Dice {:.3} vs {:.3}, every break at the oracle slice",
        sum_on / cases as f64,
        sum_off / cases as f64
    ))
}

fn propagation_ordering() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let mut total = 0;
    for i in 0..100 {
        let (vol, truth, seed) = fuzzed_lesion(&mut rng);
        let seed_mask = truth.slice(SliceAxis::Z, seed).unwrap();
        let profile = medseg_core::phantom::lesion_profile("lesion");
        let (_, report, updates) = run_propagation(&vol, seed, &seed_mask, &profile, true)?;
        let emitted: Vec<_> = report.steps.iter().filter(|s| s.emitted_at.is_some()).collect();
        ensure!(emitted.len() == updates.len(), "phantom {i}: {} events for {} accepted steps", updates.len(), emitted.len());
        for (n, (u, s)) in updates.iter().zip(&emitted).enumerate() {
            ensure!(u.ordinal == n as u64 && s.emitted_at == Some(u.ordinal), "phantom {i}: ordinal {} at position {n}", u.ordinal);
            ensure!(u.slice_index == s.slice_index && u.direction == s.direction, "phantom {i}: event {n} differs from the report");
        }
        let first_inf = updates.iter().position(|u| u.direction == Direction::Inferior).unwrap_or(updates.len());
        ensure!(
            updates[first_inf..].iter().all(|u| u.direction == Direction::Inferior),
            "phantom {i}: superior event after the inferior pass began"
        );
        total += updates.len();
    }
    Ok(format!("100 fuzzed phantoms, {total} events, all in report order with the superior pass first"))
}

fn mesh_fidelity() -> Check {
    let mask = ellipsoid_mask([26, 26, 16], [12.5, 12.5, 7.5], [10.0, 10.0, 5.0], "lesion");
    let mesh = mask_mesh(&mask, [0.5, 0.5, 1.0], "lesion").map_err(|e| e.to_string())?;
    let report = mesh.edge_report();
    ensure!(report.is_watertight(), "not watertight: {report:?}");
    let analytic = 4.0 / 3.0 * PI * 125.0;
    let err = (mesh.signed_volume() - analytic).abs() / analytic;
    ensure!(err < 0.05, "volume {:.1} mm^3 vs {analytic:.1}", mesh.signed_volume());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("lesion.obj");
    write_obj(&mesh, &path).map_err(|e| e.to_string())?;
    let back = read_obj(&path).map_err(|e| e.to_string())?;
    ensure!(back.vertices.len() == mesh.vertices.len() && back.triangles == mesh.triangles, "OBJ counts changed");
    let worst = mesh
        .vertices
        .iter()
        .zip(&back.vertices)
        .flat_map(|(a, b)| (0..3).map(move |i| (a[i] as f64 - b[i] as f64).abs()))
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-4, "OBJ coordinate drift {worst}");
    Ok(format!(
        "watertight, {:.1} mm^3 vs {analytic:.1} ({:.2}%), OBJ drift {worst:.1e} mm",
        mesh.signed_volume(),
        err * 100.0
    ))
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        if let Ok(e) = EmbeddingVector::normalized(v) {
            return e;
        }
    }
}

fn brute_force(records: &[ReferenceRecord], q: &EmbeddingVector, k: usize, f: &SearchFilter) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = records
        .iter()
        .filter(|r| f.has_pathology.is_none_or(|l| l == r.has_pathology))
        .filter(|r| f.exclude_patient.as_ref().is_none_or(|p| p != &r.patient_id))
        .map(|r| (r.record_id, q.values().iter().zip(r.vector.values()).map(|(&a, &b)| a as f64 * b as f64).sum()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let dim = 64;
    let mut records: Vec<ReferenceRecord> = (0..10_000u64)
        .map(|i| ReferenceRecord {
            record_id: i * 7 + 3,
            patient_id: format!("p{}", rng.gen_range(0..50)),
            slice_index: rng.gen_range(0..155),
            has_pathology: rng.gen_bool(0.4),
            vector: random_unit(&mut rng, dim),
            thumbnail_ref: String::new(),
        })
        .collect();
    // Copies under other ids make exact score ties.
    for i in 0..200 {
        let src = rng.gen_range(0..records.len());
        let dst = records.len() - 1 - i;
        records[dst].vector = records[src].vector.clone();
    }
    let index = ReferenceIndex::build(records.clone()).map_err(|e| e.to_string())?;
    for qi in 0..100 {
        let q = if qi % 4 == 0 { records[rng.gen_range(0..records.len())].vector.clone() } else { random_unit(&mut rng, dim) };
        let hits = index.knn_search(&q, 5, &SearchFilter::default()).map_err(|e| e.to_string())?;
        let got: Vec<(u64, f64)> = hits.iter().map(|h| (h.record_id, h.score)).collect();
        ensure!(got == brute_force(&records, &q, 5, &SearchFilter::default()), "query {qi}: {got:?}");
    }
    for round in 0..200 {
        let q = random_unit(&mut rng, dim);
        let exclude = (round % 2 == 0).then(|| format!("p{}", rng.gen_range(0..50)));
        let (pos, neg) = index.contrastive_retrieve(&q, exclude.as_deref()).map_err(|e| e.to_string())?;
        ensure!(pos.has_pathology && !neg.has_pathology, "round {round}: labels swapped");
        let f = |l| SearchFilter { has_pathology: Some(l), exclude_patient: exclude.clone() };
        ensure!(pos.record_id == brute_force(&records, &q, 1, &f(true))[0].0, "round {round}: wrong positive");
        ensure!(neg.record_id == brute_force(&records, &q, 1, &f(false))[0].0, "round {round}: wrong negative");
    }
    Ok("100 queries over 10000 vectors match brute force with tie-breaks, 200 contrastive rounds hold".into())
}

fn trial(id: String, accuracy: f64, tlx_total: f64, time: f64) -> TrialRecord {
    TrialRecord { trial_id: id, paradigm: "p".into(), accuracy, tlx_total, time, confirmed: 1, clears: 1 }
}

fn composites() -> Check {
    let worked = [
        trial("a".into(), 99.0, 10.0, 100.0),
        trial("b".into(), 98.0, 20.0, 200.0),
        trial("c".into(), 97.0, 30.0, 300.0),
    ];
    let got: Vec<f64> = composite_scores(&worked).map_err(|e| e.to_string())?.trials.iter().map(|t| t.composite).collect();
    for (g, w) in got.iter().zip([3.0, 0.0, -3.0]) {
        ensure!((g - w).abs() < 1e-12, "worked example gives {got:?}");
    }
    for (raw, want) in [(1.0, 0.0), (21.0, 100.0), (11.0, 50.0)] {
        ensure!(tlx_scale(raw).map_err(|e| e.to_string())? == want, "tlx_scale({raw})");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    for round in 0..500 {
        let n = rng.gen_range(2..15);
        let trials: Vec<_> = (0..n)
            .map(|i| trial(format!("t{i}"), rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0), rng.gen_range(1.0..600.0)))
            .collect();
        // Shifts keep every field inside its admitted range.
        let shift = [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0), rng.gen_range(0.0..1e3)];
        let moved: Vec<_> = trials
            .iter()
            .map(|t| trial(t.trial_id.clone(), t.accuracy + shift[0], t.tlx_total + shift[1], t.time + shift[2]))
            .collect();
        let a = composite_scores(&trials).map_err(|e| e.to_string())?;
        let b = composite_scores(&moved).map_err(|e| format!("round {round}: {e}"))?;
        for (x, y) in a.trials.iter().zip(&b.trials) {
            ensure!((x.composite - y.composite).abs() < 1e-9, "round {round}: composite moved under translation");
        }
    }
    Ok("worked example (3, 0, -3), TLX endpoints, translation invariance on 500 fuzzed sets".into())
}

struct Served {
    _dir: tempfile::TempDir,
    ctx: Arc<SessionContext>,
    head: String,
    ws: String,
}

async fn served() -> Result<Served, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let head = dir.path().join("head.nii.gz");
    save_volume(&demo_head().volume, &head).map_err(|e| e.to_string())?;
    let index = reference_index(&BuiltinEmbedder).map_err(|e| e.to_string())?;
    let ctx = Arc::new(
        SessionContext::new(tumor_profiles(), Arc::new(RegionGrowBackend), Arc::new(BuiltinEmbedder), dir.path().join("data"))
            .with_index("mr", Arc::new(index)),
    );
    let (addr, _) = medseg_server::spawn("127.0.0.1:0".parse().unwrap(), AppState::new(ctx.clone(), None))
        .await
        .map_err(|e| e.to_string())?;
    Ok(Served { head: head.display().to_string(), ws: format!("ws://{addr}/ws"), ctx, _dir: dir })
}

async fn end_to_end() -> Check {
    let e = |e: medseg_client::ClientError| e.to_string();
    let svc = served().await?;
    let mut c = Client::connect(&svc.ws).await.map_err(e)?;
    let open = c.open(&svc.head, Some("mr"), Some("brain tumor")).await.map_err(e)?;
    ensure!(open.guidance.is_some(), "no opening guidance");
    c.navigate(21).await.map_err(e)?;
    c.submit_command("show me the brain tumor").await.map_err(e)?;
    let seed = c.confirm_command().await.map_err(e)?;
    ensure!(seed.area > 0 && seed.slice_index == 21, "seed area {} on slice {}", seed.area, seed.slice_index);
    c.add_prompt(26, 22, Polarity::Positive).await.map_err(e)?;
    c.add_prompt(2, 2, Polarity::Negative).await.map_err(e)?;
    let refined = c.refine().await.map_err(e)?;
    let (done, updates) = c.propagate(&PropagateRequest::default()).await.map_err(e)?;
    ensure!(!updates.is_empty(), "no propagation updates");

    let first = c.complete(true).await.map_err(e)?;
    ensure!(first.challenge && first.state == SessionState::Review, "first complete did not challenge");
    let fin = c.complete(true).await.map_err(e)?;
    ensure!(!fin.challenge && fin.state == SessionState::Completed, "second complete did not finish");
    let mesh = c.request_mesh(&MeshRequest { context_threshold: None, include_context: true }).await.map_err(e)?;
    ensure!(mesh.lesion.volume_mm3 > 0.0 && mesh.context.is_some(), "mesh reply {mesh:?}");

    // The saved volume equals the masks the client was shown.
    let id = c.session_id().unwrap().to_string();
    let dir = svc.ctx.data_dir.join(&id);
    let saved = load_mask(&dir.join(MASKS_FILE)).map_err(|e| e.to_string())?;
    let mut seen = MaskVolume::empty(saved.dims(), saved.target_name.clone());
    let dec = |r| SliceMask::from_rle(r).map_err(|e| e.to_string());
    seen.set_slice(SliceAxis::Z, refined.slice_index, &dec(&refined.mask)?).unwrap();
    for u in &updates {
        seen.set_slice(SliceAxis::Z, u.slice_index, &dec(&u.mask)?).unwrap();
    }
    ensure!(seen.labels() == saved.labels(), "saved mask differs from the streamed slices");
    ensure!(done.report.accepted().count() == updates.len(), "report and stream disagree");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let again = tmp.path().join("again.nii.gz");
    save_mask(&saved, demo_head().volume.spacing(), &again).map_err(|e| e.to_string())?;
    ensure!(load_mask(&again).map_err(|e| e.to_string())? == saved, "mask save/load is not the identity");
    let bytes = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    ensure!(bytes(&again)? == bytes(&dir.join(MASKS_FILE))?, "re-saved file differs byte for byte");

    let replay_ctx = Arc::new(svc.ctx.relocated(tmp.path().join("replay")));
    let replayed = tokio::task::spawn_blocking(move || replay(replay_ctx, &dir.join(EVENTS_FILE), "replay"))
        .await
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    ensure!(replayed.masks().labels() == saved.labels(), "replayed masks differ");
    ensure!(replayed.state() == SessionState::Completed, "replay ends in {:?}", replayed.state());
    c.close().await.map_err(e)?;
    Ok(format!(
        "{} voxels over {} slices, challenge fired, mask file and replay identical",
        saved.count(),
        updates.len() + 1
    ))
}

fn main() {
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let secs = |s| Some(Duration::from_secs(s));
    let results: Vec<(u32, &str, Check)> = vec![
        (1, "metric oracles", timed(secs(1), metric_oracles)),
        (2, "direction smoothing", timed(None, smoothing)),
        (3, "IoU-break ablation", timed(secs(30), iou_break_ablation)),
        (4, "propagation ordering", timed(None, propagation_ordering)),
        (5, "mesh fidelity", timed(secs(5), mesh_fidelity)),
        (6, "retrieval exactness", timed(secs(10), retrieval_exactness)),
        (7, "composite and TLX", timed(None, composites)),
        (8, "end-to-end session", timed(secs(60), || rt.block_on(end_to_end()))),
    ];
    let mut failed = 0;
    for (n, name, result) in &results {
        match result {
            Ok(detail) => println!("PASS criterion {n} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
