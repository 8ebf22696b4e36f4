//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 7 needs the licensed Cityscapes dataset: set `CITYSCAPES_ROOT`
//! to the dataset root and `AMODAL_SPLITS` to a directory holding
//! `train.txt`, `val.txt` and `test.txt`. Without them it reports SKIPPED.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use amodal_core::bank::{build_bank, BBox, InstanceBank, InstanceExtractor, InstancePatch};
use amodal_core::blend::{blend_paste, GaussianKernel};
use amodal_core::cityscapes::{load_frame, load_split, AmodalMask, FrameId, LabeledFrame};
use amodal_core::codec::{
    argmax, decode_occluded_pixel, decode_visible_pixel, encode_pixel, occluded_group,
    GroupingScheme,
};
use amodal_core::compositor::{compose_frame, occluder_region, Composition, GenerationConfig};
use amodal_core::fixtures::SyntheticDataset;
use amodal_core::labels::{IGNORE, NUM_CLASSES, PERSON, RIDER, TERRAIN};
use amodal_core::metrics::{finalize, ConfusionAccumulator, MeanMode};
use amodal_core::raster::{BinaryMask, Raster};
use amodal_core::stats::{histogram_intersection, spearman, ClassCounts, LocationPriorAccumulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

enum Verdict {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

// 1 ---------------------------------------------------------------------------

fn codec_roundtrip() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for (scheme, expected_len, expected_pairs) in
        [(GroupingScheme::k3(), 25, 243), (GroupingScheme::k4(), 27, 267)]
    {
        let mut buf = vec![0.0f32; scheme.vector_len()];
        let mut pairs = 0;
        for v in 0..NUM_CLASSES as u8 {
            for o in (0..NUM_CLASSES as u8).chain([IGNORE]) {
                if o != IGNORE && scheme.group_of(o) == scheme.group_of(v) {
                    continue;
                }
                pairs += 1;
                encode_pixel(&scheme, v, o, &mut buf);
                let (dv, fallback) = decode_visible_pixel(&scheme, &buf);
                let dov = decode_occluded_pixel(&scheme, &buf);
                if (dv, fallback, dov) != (v, false, o) {
                    failures.push(format!("{}: ({v},{o}) -> ({dv},{dov})", scheme.name()));
                }
            }
        }
        if scheme.vector_len() != expected_len || pairs != expected_pairs {
            failures.push(format!(
                "{}: L={} pairs={pairs}",
                scheme.name(),
                scheme.vector_len()
            ));
        }
        details.push(format!("{} L={} {pairs} pairs", scheme.name(), scheme.vector_len()));
    }
    let elapsed = start.elapsed();
    if !within(elapsed, Duration::from_secs(1)) {
        failures.push(format!("took {elapsed:?}"));
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{}, {elapsed:.2?}", details.join("; "))
        } else {
            failures.join("; ")
        },
    )
}

// 2 ---------------------------------------------------------------------------

fn figure_example() -> Verdict {
    let scheme = GroupingScheme::k4();
    let mut v = vec![0.0f32; 27];
    encode_pixel(&scheme, RIDER, TERRAIN, &mut v);

    // p, then q_static (8+1), q_traffic (3+1), q_person (2+1), q_vehicle (6+1)
    #[rustfmt::skip]
    let expected: [f32; 27] = [
        0., 0., 1., 0.,
        0., 0., 0., 0., 0., 1., 0., 0., 0.,
        0., 0., 0., 1.,
        0., 1., 0.,
        0., 0., 0., 0., 0., 0., 1.,
    ];
    let k1 = argmax(&v[..4]);
    let k2 = occluded_group(&scheme, &v);
    let (vis, _) = decode_visible_pixel(&scheme, &v);
    let occ = decode_occluded_pixel(&scheme, &v);
    let ok = v == expected && k1 == 2 && k2 == Some(0) && vis == 12 && occ == 9;
    check(
        ok,
        format!("p={:?} k'={k1} k''={k2:?} visible={vis} occluded={occ}", &v[..4]),
    )
}

// 3 ---------------------------------------------------------------------------

fn metric_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let mut mismatches = 0;
    let mut pixels = 0;
    for _ in 0..1000 {
        let (gt, pred, region) = support::random_case(&mut rng);
        pixels += gt.visible.len();
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate_frame(&gt, &pred, &region).unwrap();
        if support::counts_of(&acc) != support::naive_counts(&gt, &pred, &region) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && within(elapsed, Duration::from_secs(30)),
        format!("1000 cases, {pixels} pixels, {mismatches} mismatches, {elapsed:.2?}"),
    )
}

// 4 ---------------------------------------------------------------------------

fn fixture() -> (Vec<LabeledFrame>, InstanceBank) {
    let frames = SyntheticDataset::new(50, 4).labeled_frames("train");
    let bank = build_bank(frames.clone()).unwrap();
    (frames, bank)
}

fn compose_all(frames: &[LabeledFrame], bank: &InstanceBank, seed: u64) -> Vec<Composition> {
    let cfg = GenerationConfig::with_seed(seed);
    frames
        .iter()
        .map(|f| compose_frame(f, bank, &cfg).unwrap())
        .collect()
}

fn footprint_problems(frame: &LabeledFrame, bank: &InstanceBank, comp: &Composition) -> Vec<String> {
    let mut problems = Vec::new();
    let (h, w) = frame.dims();
    let m = &comp.manifest;
    let mut cover = Raster::filled(h, w, 0u32);
    for rec in &m.pastes {
        let patch = bank.patch(bank.find(&rec.patch).expect("recorded patch in bank"));
        if rec.row != patch.anchor_row {
            problems.push(format!("row {} != anchor {}", rec.row, patch.anchor_row));
        }
        let top = rec.row + 1 - patch.height();
        for r in 0..patch.height() {
            for c in 0..patch.width() {
                if *patch.mask.get(r, c) {
                    *cover.get_mut(top + r, rec.col + c) += 1;
                }
            }
        }
    }
    if cover.as_slice().iter().any(|&n| n > 1) {
        problems.push("overlapping footprints".into());
    }

    let total = (h * w) as f64;
    let pasted: usize = m.pastes.iter().map(|p| p.pixels).sum();
    if pasted != m.pasted_pixels || (m.achieved_ratio - pasted as f64 / total).abs() > 1e-12 {
        problems.push("achieved ratio disagrees with pasted pixels".into());
    }
    if m.drawn_ratio == 0.0 {
        if !m.pastes.is_empty() {
            problems.push("pastes with zero drawn ratio".into());
        }
    } else if m.warning.is_none() {
        let before_last = (pasted - m.pastes.last().map_or(0, |p| p.pixels)) as f64 / total;
        if !(m.achieved_ratio > m.drawn_ratio && before_last <= m.drawn_ratio) {
            problems.push(format!(
                "bracket violated: drawn {} achieved {} before last {}",
                m.drawn_ratio, m.achieved_ratio, before_last
            ));
        }
    } else if m.achieved_ratio > m.drawn_ratio {
        problems.push("stopped early but already past the drawn ratio".into());
    }

    for r in 0..h {
        for c in 0..w {
            let covered = *cover.get(r, c) > 0;
            let original = *frame.semantic.get(r, c);
            let occ = *comp.mask.occluded.get(r, c);
            let expected = if covered { original } else { IGNORE };
            if occ != expected {
                problems.push(format!("occluded support mismatch at ({r},{c})"));
                return problems;
            }
        }
    }
    problems
}

fn generation_invariants() -> Verdict {
    let start = Instant::now();
    let (frames, bank) = fixture();
    let comps = compose_all(&frames, &bank, 77);
    let mut problems = Vec::new();
    for (f, comp) in frames.iter().zip(&comps) {
        for p in footprint_problems(f, &bank, comp) {
            problems.push(format!("{}: {p}", f.frame_id));
        }
    }
    let pastes: usize = comps.iter().map(|c| c.manifest.num_occluders()).sum();
    let bracketed = comps
        .iter()
        .filter(|c| c.manifest.warning.is_none() && !c.manifest.pastes.is_empty())
        .count();
    let elapsed = start.elapsed();
    if pastes == 0 || bracketed == 0 {
        problems.push("fixture produced no pastes".into());
    }
    if !within(elapsed, Duration::from_secs(60)) {
        problems.push(format!("took {elapsed:?}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "50 frames, {pastes} pastes, {bracketed} frames bracketed, {} bank patches, {elapsed:.2?}",
                bank.len()
            )
        } else {
            problems.truncate(5);
            problems.join("; ")
        },
    )
}

// 5 ---------------------------------------------------------------------------

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_amodalcs"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let (root, bank, split) = (p("cityscapes"), p("bank"), p("cityscapes/splits/train.txt"));
    if !cli(&["synth", "--out", &root, "--frames", "50", "--seed", "4"])
        || !cli(&["extract", "--root", &root, "--split", &split, "--bank", &bank])
    {
        return Verdict::Fail("fixture setup failed".into());
    }
    let mut trees = Vec::new();
    for (i, workers) in ["1", "4", "0"].iter().enumerate() {
        let out = p(&format!("gen{i}"));
        let ok = cli(&[
            "generate", "--root", &root, "--bank", &bank, "--split", &split, "--out", &out,
            "--seed", "1234", "--workers", workers,
        ]);
        if !ok {
            return Verdict::Fail(format!("generate with {workers} workers failed"));
        }
        trees.push(support::read_tree(Path::new(&out)));
    }
    let files = trees[0].len();
    let identical = trees.iter().all(|t| *t == trees[0]);
    check(
        identical && files > 150,
        format!("3 runs (1, 4, all workers), {files} files each, identical={identical}"),
    )
}

// 6 ---------------------------------------------------------------------------

fn edge_patch(h: usize, w: usize, edge: usize) -> InstancePatch {
    let mask: BinaryMask = Raster::from_fn(h, w, |_, c| c >= edge);
    InstancePatch {
        source_frame: FrameId::new("train/x/x_000000_000000"),
        instance_id: 26000,
        class_id: 13,
        bbox: BBox {
            top: 0,
            left: 0,
            height: h,
            width: w,
        },
        anchor_row: h - 1,
        rgb: Raster::filled(h, w, [200, 40, 10]),
        area: mask.count_set(),
        mask,
    }
}

fn blend_correctness() -> Verdict {
    let start = Instant::now();
    let kernel = GaussianKernel::new(5, 1.0).unwrap();
    let (h, w, edge) = (20, 24, 10);
    let patch = edge_patch(h, w, edge);

    // separable closed form: the row factor integrates to one, so the profile
    // across a vertical edge is the 1-D normalized cumulative weight
    let g: Vec<f64> = (-2i64..=2).map(|d| (-(d * d) as f64 / 2.0).exp()).collect();
    let gsum: f64 = g.iter().sum();
    let profile = |c: usize| -> f64 {
        (-2i64..=2)
            .zip(&g)
            .filter(|(d, _)| {
                let cc = c as i64 + d;
                cc >= edge as i64 && cc < w as i64
            })
            .map(|(_, wgt)| wgt)
            .sum::<f64>()
            / gsum
    };
    let alpha = kernel.alpha_map(&patch.mask);
    let mut worst = 0.0f64;
    for r in 2..h - 2 {
        for c in 0..w {
            worst = worst.max((*alpha.get(r, c) as f64 - profile(c)).abs());
        }
    }

    // paste into a larger canvas and check pixels far from any mask boundary
    let (top, left) = (6, 5);
    let base = [0.1f32, 0.6, 0.3];
    let canvas = Raster::filled(40, 40, base);
    let out = blend_paste(&canvas, &patch, top, left, &kernel);
    let inside = |r: i64, c: i64| {
        let (pr, pc) = (r - top as i64, c - left as i64);
        pr >= 0 && pc >= 0 && pr < h as i64 && pc < w as i64 && *patch.mask.get(pr as usize, pc as usize)
    };
    let pure = [200.0f32 / 255.0, 40.0 / 255.0, 10.0 / 255.0];
    let mut impure = 0;
    let mut checked = 0;
    for r in 0..40i64 {
        for c in 0..40i64 {
            let state = inside(r, c);
            let far = (-2..=2).all(|dr| (-2..=2).all(|dc| inside(r + dr, c + dc) == state));
            if !far {
                continue;
            }
            checked += 1;
            let want = if state { pure } else { base };
            if *out.get(r as usize, c as usize) != want {
                impure += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-6 && impure == 0 && checked > 1000 && within(elapsed, Duration::from_secs(1)),
        format!("max profile error {worst:.2e}, {impure}/{checked} far pixels altered, {elapsed:.2?}"),
    )
}

// 7 ---------------------------------------------------------------------------

struct SplitRun {
    frames: usize,
    generated: usize,
    bank_patches: usize,
    mean_ratio: f64,
    gen_counts: ClassCounts,
    orig_counts: ClassCounts,
    gen_prior: LocationPriorAccumulator,
    orig_prior: LocationPriorAccumulator,
}

fn regenerate_split(root: &Path, list: &Path, seed: u64) -> amodal_core::Result<SplitRun> {
    let split = load_split(list)?;
    let extractor = InstanceExtractor::default();
    let extractions = split
        .target_frames
        .par_iter()
        .map(|id| load_frame(root, id).map(|f| extractor.extract(&f)))
        .collect::<amodal_core::Result<Vec<_>>>()?;
    let bank = InstanceBank::from_extractions(extractor.filter, extractions)?;
    let dims = load_frame(root, &split.target_frames[0])?.dims();
    let cfg = GenerationConfig::with_seed(seed);

    let empty = || {
        (
            0usize,
            0.0f64,
            ClassCounts::default(),
            ClassCounts::default(),
            LocationPriorAccumulator::new(PERSON, dims, 8),
            LocationPriorAccumulator::new(PERSON, dims, 8),
        )
    };
    let (generated, ratio_sum, gen_counts, orig_counts, gen_prior, orig_prior) = split
        .target_frames
        .par_iter()
        .map(|id| {
            let mut acc = empty();
            if let Ok(frame) = load_frame(root, id) {
                if let Ok(comp) = compose_frame(&frame, &bank, &cfg) {
                    let original = AmodalMask::unoccluded(frame.semantic.clone());
                    acc.0 = 1;
                    acc.1 = comp.manifest.achieved_ratio;
                    acc.2.add(&comp.mask);
                    acc.3.add(&original);
                    acc.4.add(&comp.mask);
                    acc.5.add(&original);
                }
            }
            acc
        })
        .reduce(empty, |mut a, b| {
            a.0 += b.0;
            a.1 += b.1;
            a.2.merge(&b.2);
            a.3.merge(&b.3);
            a.4.merge(&b.4);
            a.5.merge(&b.5);
            a
        });
    Ok(SplitRun {
        frames: split.len(),
        generated,
        bank_patches: bank.len(),
        mean_ratio: ratio_sum / generated.max(1) as f64,
        gen_counts,
        orig_counts,
        gen_prior,
        orig_prior,
    })
}

fn cityscapes_scale() -> Verdict {
    let (Some(root), Some(splits)) = (
        std::env::var_os("CITYSCAPES_ROOT").map(PathBuf::from),
        std::env::var_os("AMODAL_SPLITS").map(PathBuf::from),
    ) else {
        return Verdict::Skipped("set CITYSCAPES_ROOT and AMODAL_SPLITS to run".into());
    };
    let mut problems = Vec::new();
    let mut details = Vec::new();
    for (name, expected) in [("train", 2900), ("val", 75), ("test", 500)] {
        let run = match regenerate_split(&root, &splits.join(format!("{name}.txt")), 2024) {
            Ok(r) => r,
            Err(e) => return Verdict::Fail(format!("{name}: {e}")),
        };
        details.push(format!("{name} {}/{} frames", run.generated, run.frames));
        if run.generated != expected {
            problems.push(format!("{name}: {} outputs, expected {expected}", run.generated));
        }
        if name != "train" {
            continue;
        }
        let dev = (run.bank_patches as f64 - 36303.0).abs() / 36303.0;
        details.push(format!("bank {}", run.bank_patches));
        if dev > 0.01 {
            problems.push(format!("train bank {} deviates {:.1}% from 36303", run.bank_patches, 100.0 * dev));
        }
        details.push(format!("mean ratio {:.4}", run.mean_ratio));
        if run.generated < 500 || !(0.04..=0.08).contains(&run.mean_ratio) {
            problems.push(format!("mean achieved ratio {:.4}", run.mean_ratio));
        }
        let rho = spearman(&run.gen_counts.table().visible, &run.orig_counts.table().visible)
            .unwrap_or(f64::NAN);
        details.push(format!("spearman {rho:.3}"));
        if !(rho >= 0.95) {
            problems.push(format!("visible frequency spearman {rho:.3}"));
        }
        let hi = histogram_intersection(&run.gen_prior.finish(), &run.orig_prior.finish())
            .unwrap_or(f64::NAN);
        details.push(format!("person prior intersection {hi:.3}"));
        if !(hi >= 0.8) {
            problems.push(format!("person prior intersection {hi:.3}"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            details.join(", ")
        } else {
            problems.join("; ")
        },
    )
}

// 8 ---------------------------------------------------------------------------

fn sanity_floor() -> Verdict {
    let (frames, bank) = fixture();
    let comps = compose_all(&frames, &bank, 88);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut perfect = ConfusionAccumulator::new();
    let mut random = ConfusionAccumulator::new();
    for comp in &comps {
        let region = occluder_region(&comp.manifest, &bank, comp.mask.dims()).unwrap();
        perfect.accumulate_frame(&comp.mask, &comp.mask, &region).unwrap();
        let (h, w) = comp.mask.dims();
        let pred = AmodalMask {
            visible: comp.mask.visible.clone(),
            occluded: Raster::from_fn(h, w, |_, _| rng.random_range(0..NUM_CLASSES as u8)),
        };
        random.accumulate_frame(&comp.mask, &pred, &region).unwrap();
    }
    let p = finalize(&perfect, MeanMode::Present);
    let r = finalize(&random, MeanMode::Present);
    let all_one = [p.miou_visible(), p.miou_invisible(), p.miou_total()]
        .iter()
        .all(|m| *m == Some(1.0));
    let inv = r.miou_invisible().unwrap_or(f64::NAN);
    check(
        all_one && inv > 0.0 && inv < 0.1,
        format!(
            "gt as prediction: {:?}/{:?}/{:?}; random occluded mIoU^inv {inv:.4} over {} pixels",
            p.miou_visible(),
            p.miou_invisible(),
            p.miou_total(),
            r.invisible.pixels
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("codec exhaustive round trip", codec_roundtrip),
        ("rider over terrain encoding", figure_example),
        ("metric oracle equivalence", metric_oracle),
        ("generation invariants", generation_invariants),
        ("determinism across worker counts", determinism),
        ("blend correctness", blend_correctness),
        ("Cityscapes regeneration scale", cityscapes_scale),
        ("metric sanity floor", sanity_floor),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|_| Verdict::Fail("panicked".into()));
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {} {tag}: {name} ({detail})", i + 1);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
