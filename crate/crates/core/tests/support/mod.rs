#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use amodal_core::cityscapes::AmodalMask;
use amodal_core::labels::{IGNORE, NUM_CLASSES};
use amodal_core::metrics::ConfusionAccumulator;
use amodal_core::raster::{BinaryMask, LabelMap, Raster};
use rand::seq::IndexedRandom;
use rand::Rng;

/// TP/FP/FN per class for one metric variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: [u64; NUM_CLASSES],
    pub fp: [u64; NUM_CLASSES],
    pub fn_: [u64; NUM_CLASSES],
}

/// Brute-force counters for (visible, invisible, total), written straight
/// from the per-class predicates: every pixel, every class, every channel.
pub fn naive_counts(gt: &AmodalMask, pred: &AmodalMask, region: &BinaryMask) -> [Counts; 3] {
    let mut out = [Counts::default(); 3];
    let (h, w) = gt.dims();
    for r in 0..h {
        for c in 0..w {
            let g = [*gt.visible.get(r, c), *gt.occluded.get(r, c)];
            let p = [*pred.visible.get(r, c), *pred.occluded.get(r, c)];
            let inside = *region.get(r, c);
            for s in 0..NUM_CLASSES as u8 {
                let si = s as usize;
                if g[0] != IGNORE {
                    out[0].tp[si] += u64::from(g[0] == s && p[0] == s);
                    out[0].fp[si] += u64::from(g[0] != s && p[0] == s);
                    out[0].fn_[si] += u64::from(g[0] == s && p[0] != s);
                }
                if inside && g[1] != IGNORE {
                    out[1].tp[si] += u64::from(g[1] == s && p[1] == s);
                    out[1].fp[si] += u64::from(g[1] != s && p[1] == s);
                    out[1].fn_[si] += u64::from(g[1] == s && p[1] != s);
                }
                let mut tp = false;
                let mut fp = false;
                let mut fn_ = false;
                for f in 0..2 {
                    if g[f] == IGNORE {
                        continue;
                    }
                    tp = tp || (g[f] == s && p[f] == s);
                    fp = fp || (g[f] != s && p[f] == s);
                    fn_ = fn_ || (g[f] == s && p[f] != s);
                }
                out[2].tp[si] += u64::from(tp);
                out[2].fp[si] += u64::from(fp);
                out[2].fn_[si] += u64::from(fn_);
            }
        }
    }
    out
}

pub fn counts_of(acc: &ConfusionAccumulator) -> [Counts; 3] {
    [acc.visible, acc.invisible, acc.total].map(|c| Counts {
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
    })
}

/// A random label map over `palette`, with roughly `void` share of 255.
pub fn random_labels<R: Rng>(rng: &mut R, h: usize, w: usize, palette: &[u8], void: f64) -> LabelMap {
    Raster::from_fn(h, w, |_, _| {
        if rng.random_bool(void) {
            IGNORE
        } else {
            *palette.choose(rng).unwrap()
        }
    })
}

pub fn random_region<R: Rng>(rng: &mut R, h: usize, w: usize) -> BinaryMask {
    let density = rng.random_range(0.0..1.0);
    Raster::from_fn(h, w, |_, _| rng.random_bool(density))
}

/// A random small case: up to 16×16, up to five classes.
pub fn random_case<R: Rng>(rng: &mut R) -> (AmodalMask, AmodalMask, BinaryMask) {
    let h = rng.random_range(1..=16);
    let w = rng.random_range(1..=16);
    let n = rng.random_range(1..=5);
    let palette: Vec<u8> = (0..n).map(|_| rng.random_range(0..NUM_CLASSES as u8)).collect();
    let gt = AmodalMask {
        visible: random_labels(rng, h, w, &palette, 0.1),
        occluded: random_labels(rng, h, w, &palette, 0.5),
    };
    let pred = AmodalMask {
        visible: random_labels(rng, h, w, &palette, 0.05),
        occluded: random_labels(rng, h, w, &palette, 0.3),
    };
    let region = random_region(rng, h, w);
    (gt, pred, region)
}

/// Relative path → file bytes for every file below `root`.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
