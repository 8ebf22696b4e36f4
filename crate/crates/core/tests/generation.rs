use amodal_core::bank::{build_bank, InstanceBank};
use amodal_core::cityscapes::{AmodalMask, LabeledFrame};
use amodal_core::compositor::{compose_frame, occluder_region, replay_manifest, GenerationConfig, GenerationManifest};
use amodal_core::fixtures::SyntheticDataset;
use amodal_core::labels::IGNORE;
use amodal_core::stats::{class_frequencies, instance_census, location_prior};
use proptest::prelude::*;
use std::sync::OnceLock;

fn fixture() -> &'static (Vec<LabeledFrame>, InstanceBank) {
    static FIXTURE: OnceLock<(Vec<LabeledFrame>, InstanceBank)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let frames = SyntheticDataset::new(12, 21).labeled_frames("train");
        let bank = build_bank(frames.clone()).unwrap();
        (frames, bank)
    })
}

#[test]
fn replay_without_one_paste_differs_only_inside_its_box() {
    let (frames, bank) = fixture();
    let cfg = GenerationConfig::with_seed(3);
    let mut checked = 0;
    for frame in frames {
        let comp = compose_frame(frame, bank, &cfg).unwrap();
        if comp.manifest.pastes.len() < 2 {
            continue;
        }
        let mut reduced = comp.manifest.clone();
        let removed = reduced.pastes.remove(0);
        let (image, mask) = replay_manifest(frame, bank, &reduced, &cfg).unwrap();
        let patch = bank.patch(bank.find(&removed.patch).unwrap());
        let top = removed.row + 1 - patch.height();
        let inside = |r: usize, c: usize| {
            (top..=removed.row).contains(&r) && (removed.col..removed.col + patch.width()).contains(&c)
        };
        let (h, w) = frame.dims();
        let mut differing = 0;
        for r in 0..h {
            for c in 0..w {
                let same = image.get(r, c) == comp.image.get(r, c)
                    && mask.visible.get(r, c) == comp.mask.visible.get(r, c)
                    && mask.occluded.get(r, c) == comp.mask.occluded.get(r, c);
                if !same {
                    assert!(inside(r, c), "difference at ({r},{c}) outside the removed box");
                    differing += 1;
                }
            }
        }
        assert!(differing >= removed.pixels);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn full_replay_is_exact() {
    let (frames, bank) = fixture();
    let cfg = GenerationConfig::with_seed(8);
    for frame in frames {
        let comp = compose_frame(frame, bank, &cfg).unwrap();
        let (image, mask) = replay_manifest(frame, bank, &comp.manifest, &cfg).unwrap();
        assert_eq!(image, comp.image);
        assert_eq!(mask, comp.mask);
    }
}

#[test]
fn manifests_roundtrip_through_json() {
    let (frames, bank) = fixture();
    let comp = compose_frame(&frames[0], bank, &GenerationConfig::with_seed(1)).unwrap();
    let json = serde_json::to_string(&comp.manifest).unwrap();
    let back: GenerationManifest = serde_json::from_str(&json).unwrap();
    assert_eq!(back, comp.manifest);
}

#[test]
fn census_adds_pastes_per_class() {
    let (frames, bank) = fixture();
    let cfg = GenerationConfig::with_seed(5);
    let manifests: Vec<GenerationManifest> = frames
        .iter()
        .map(|f| compose_frame(f, bank, &cfg).unwrap().manifest)
        .collect();
    let census = instance_census(bank, &manifests);
    let pastes: u64 = manifests.iter().map(|m| m.num_occluders() as u64).sum();
    assert_eq!(census.generated_total, census.original_total + pastes);
    for row in &census.rows {
        let added = manifests
            .iter()
            .flat_map(|m| &m.pastes)
            .filter(|p| p.class_id == row.class)
            .count() as u64;
        assert_eq!(row.generated, row.original + added);
    }
}

#[test]
fn statistics_ignore_frame_order() {
    let (frames, bank) = fixture();
    let cfg = GenerationConfig::with_seed(6);
    let masks: Vec<AmodalMask> = frames
        .iter()
        .map(|f| compose_frame(f, bank, &cfg).unwrap().mask)
        .collect();
    let reversed: Vec<&AmodalMask> = masks.iter().rev().collect();
    assert_eq!(class_frequencies(&masks), class_frequencies(reversed.iter().copied()));
    assert_eq!(
        location_prior(&masks, 11, 8),
        location_prior(reversed.iter().copied(), 11, 8)
    );
    let t = class_frequencies(&masks);
    assert!((t.visible.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((t.occluded.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composed_frames_keep_their_invariants(seed in any::<u64>(), idx in 0usize..12, ratio in 0.0f64..0.5) {
        let (frames, bank) = fixture();
        let frame = &frames[idx];
        let cfg = GenerationConfig { max_occlusion_ratio: ratio, ..GenerationConfig::with_seed(seed) };
        let comp = compose_frame(frame, bank, &cfg).unwrap();
        let region = occluder_region(&comp.manifest, bank, frame.dims()).unwrap();
        prop_assert_eq!(region.count_set(), comp.manifest.pasted_pixels);
        for rec in &comp.manifest.pastes {
            let patch = bank.patch(bank.find(&rec.patch).unwrap());
            prop_assert_eq!(rec.row, patch.anchor_row);
            prop_assert!(patch.source_frame != frame.frame_id);
        }
        let (h, w) = frame.dims();
        for r in 0..h {
            for c in 0..w {
                let occ = *comp.mask.occluded.get(r, c);
                if *region.get(r, c) {
                    prop_assert_eq!(occ, *frame.semantic.get(r, c));
                } else {
                    prop_assert_eq!(occ, IGNORE);
                    prop_assert_eq!(comp.mask.visible.get(r, c), frame.semantic.get(r, c));
                }
            }
        }
    }
}
