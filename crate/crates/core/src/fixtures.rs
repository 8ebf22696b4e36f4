//! Synthetic street scenes in Cityscapes layout, for tests, demos and smoke
//! runs without the licensed dataset.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cityscapes::{write_cityscapes_frame, FrameId, LabeledFrame};
use crate::error::Result;
use crate::labels::raw_to_train_id;
use crate::raster::{InstanceMap, LabelMap, Raster, RgbRaster};

const RAW_UNLABELED: u8 = 0;
const RAW_EGO: u8 = 1;
const RAW_ROAD: u8 = 7;
const RAW_SIDEWALK: u8 = 8;
const RAW_BUILDING: u8 = 11;
const RAW_POLE: u8 = 17;
const RAW_VEGETATION: u8 = 21;
const RAW_SKY: u8 = 23;
const RAW_PERSON: u8 = 24;
const RAW_RIDER: u8 = 25;
const RAW_CAR: u8 = 26;
const RAW_BICYCLE: u8 = 33;

fn base_color(raw: u8) -> [f32; 3] {
    match raw {
        RAW_ROAD => [0.50, 0.25, 0.50],
        RAW_SIDEWALK => [0.95, 0.14, 0.91],
        RAW_BUILDING => [0.27, 0.27, 0.27],
        RAW_POLE => [0.60, 0.60, 0.60],
        RAW_VEGETATION => [0.42, 0.56, 0.14],
        RAW_SKY => [0.27, 0.51, 0.71],
        RAW_PERSON => [0.86, 0.08, 0.24],
        RAW_RIDER => [1.00, 0.00, 0.00],
        RAW_CAR => [0.00, 0.00, 0.56],
        RAW_BICYCLE => [0.47, 0.04, 0.13],
        _ => [0.0, 0.0, 0.0],
    }
}

/// One synthetic frame in raw Cityscapes encoding.
#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub frame_id: FrameId,
    pub image: RgbRaster,
    pub raw_labels: LabelMap,
    pub instances: InstanceMap,
}

impl SyntheticFrame {
    pub fn to_labeled(&self) -> LabeledFrame {
        LabeledFrame::new(
            self.frame_id.clone(),
            self.image.clone(),
            self.raw_labels.map(|&v| raw_to_train_id(v)),
            self.instances.clone(),
        )
        .expect("synthetic rasters agree in size")
    }
}

/// Deterministic generator of simple street scenes: sky, buildings,
/// vegetation, sidewalk and road bands, poles, a void ego-vehicle strip,
/// and person / rider / car / bicycle instances standing on the ground.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub seed: u64,
    pub city: String,
}

impl SyntheticDataset {
    pub fn new(frames: usize, seed: u64) -> Self {
        Self {
            height: 128,
            width: 256,
            frames,
            seed,
            city: "synthcity".into(),
        }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn frame_id(&self, subset: &str, index: usize) -> FrameId {
        FrameId::new(format!(
            "{subset}/{city}/{city}_{index:06}_000019",
            city = self.city
        ))
    }

    pub fn frame_ids(&self, subset: &str) -> Vec<FrameId> {
        (0..self.frames).map(|i| self.frame_id(subset, i)).collect()
    }

    pub fn frame(&self, subset: &str, index: usize) -> SyntheticFrame {
        let (h, w) = (self.height, self.width);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let horizon = h * rng.random_range(30..45) / 100;
        let sidewalk_top = h * rng.random_range(55..62) / 100;
        let road_top = h * rng.random_range(64..70) / 100;
        let ego_top = h - h / 16;
        let building_height: Vec<usize> = {
            let mut v = Vec::with_capacity(w);
            let mut cur = horizon / 2;
            for c in 0..w {
                if c % 24 == 0 {
                    cur = rng.random_range(horizon / 4..horizon);
                }
                v.push(cur);
            }
            v
        };

        let mut raw = Raster::from_fn(h, w, |r, c| {
            if r >= ego_top {
                RAW_EGO
            } else if r >= road_top {
                RAW_ROAD
            } else if r >= sidewalk_top {
                RAW_SIDEWALK
            } else if r >= horizon {
                if (c / 16) % 5 == 0 {
                    RAW_VEGETATION
                } else {
                    RAW_BUILDING
                }
            } else if r >= building_height[c] {
                RAW_BUILDING
            } else {
                RAW_SKY
            }
        });
        // a few void pixels inside the scene
        raw.set(horizon, w / 2, RAW_UNLABELED);
        for _ in 0..rng.random_range(1..4) {
            let c = rng.random_range(0..w - 2);
            for r in horizon / 2..sidewalk_top {
                raw.set(r, c, RAW_POLE);
                raw.set(r, c + 1, RAW_POLE);
            }
        }

        let mut instances = raw.map(|&v| v as u16);
        let mut next_index = [0u16; 34];
        let n_instances = rng.random_range(1..6);
        for _ in 0..n_instances {
            let kind = rng.random_range(0..10);
            let (raw_class, bh, bw) = match kind {
                0..=4 => (RAW_PERSON, rng.random_range(20..40), rng.random_range(10..18)),
                5 => (RAW_RIDER, rng.random_range(22..36), rng.random_range(12..20)),
                6..=7 => (RAW_CAR, rng.random_range(20..34), rng.random_range(30..60)),
                8 => (RAW_BICYCLE, rng.random_range(20..26), rng.random_range(20..30)),
                // below the size filter
                _ => (RAW_PERSON, rng.random_range(6..15), rng.random_range(4..9)),
            };
            let bh = bh.min(ego_top);
            let bw = bw.min(w);
            let bottom = rng.random_range(sidewalk_top.max(bh)..ego_top);
            let top = bottom + 1 - bh;
            let left = rng.random_range(0..=w - bw);
            let id = raw_class as u16 * 1000 + next_index[raw_class as usize];
            next_index[raw_class as usize] += 1;
            // ellipse-ish silhouette touching every bbox edge
            let (cy, cx) = ((bh - 1) as f32 / 2.0, (bw - 1) as f32 / 2.0);
            for r in 0..bh {
                for c in 0..bw {
                    let dy = (r as f32 - cy) / (cy + 0.5);
                    let dx = (c as f32 - cx) / (cx + 0.5);
                    let on_axis = r as f32 == cy.floor() || c as f32 == cx.floor();
                    if dy * dy + dx * dx <= 1.0 || on_axis {
                        raw.set(top + r, left + c, raw_class);
                        instances.set(top + r, left + c, id);
                    }
                }
            }
        }

        let image = Raster::from_fn(h, w, |r, c| {
            let base = base_color(*raw.get(r, c));
            let shade = ((r * 7 + c * 13) % 17) as f32 / 17.0 * 0.1;
            base.map(|v| (v * 0.9 + shade).clamp(0.0, 1.0))
        })
        .map(|p| p.map(|v| (v * 255.0).round() / 255.0));

        SyntheticFrame {
            frame_id: self.frame_id(subset, index),
            image,
            raw_labels: raw,
            instances,
        }
    }

    pub fn labeled_frames(&self, subset: &str) -> Vec<LabeledFrame> {
        (0..self.frames)
            .map(|i| self.frame(subset, i).to_labeled())
            .collect()
    }

    /// Writes every frame under `root` in Cityscapes layout and returns the frame ids.
    pub fn write(&self, root: &Path, subset: &str) -> Result<Vec<FrameId>> {
        let mut ids = Vec::with_capacity(self.frames);
        for i in 0..self.frames {
            let f = self.frame(subset, i);
            write_cityscapes_frame(root, &f.frame_id, &f.image, &f.raw_labels, &f.instances)?;
            ids.push(f.frame_id);
        }
        Ok(ids)
    }
}
