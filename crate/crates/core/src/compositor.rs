//! Copy-paste synthesis of amodal frames.
//!
//! For each target frame an occlusion ratio is drawn, then occluders from
//! other frames of the split are pasted until the pasted pixel fraction first
//! exceeds that ratio. Occluders keep the vertical position they had in their
//! source frame, are placed at a random column, and never overlap one another,
//! so every pixel carries at most one occluded label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{InstanceBank, InstancePatch, PatchKey};
use crate::blend::{blend_paste_into, GaussianKernel};
use crate::cityscapes::{AmodalMask, FrameId, LabeledFrame};
use crate::error::{Error, Result};
use crate::labels::IGNORE;
use crate::raster::{BinaryMask, LabelMap, Raster, RgbRaster};

/// Per-frame random stream.
pub type FrameRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Upper bound of the uniformly drawn per-frame occlusion ratio.
    pub max_occlusion_ratio: f64,
    pub blend_kernel: usize,
    pub blend_sigma: f64,
    pub max_place_attempts: u32,
    /// Fresh patches drawn after a placement rejection before the frame gives up.
    pub max_patch_redraws: u32,
    pub master_seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_occlusion_ratio: 0.1,
            blend_kernel: 5,
            blend_sigma: 1.0,
            max_place_attempts: 50,
            max_patch_redraws: 10,
            master_seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn with_seed(master_seed: u64) -> Self {
        Self {
            master_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.max_occlusion_ratio) {
            return Err(Error::InvalidConfig(format!(
                "max occlusion ratio must lie in [0, 1), got {}",
                self.max_occlusion_ratio
            )));
        }
        if self.max_place_attempts == 0 || self.max_patch_redraws == 0 {
            return Err(Error::InvalidConfig(
                "placement attempts and patch redraws must be positive".into(),
            ));
        }
        self.kernel().map(|_| ())
    }

    pub fn kernel(&self) -> Result<GaussianKernel> {
        GaussianKernel::new(self.blend_kernel, self.blend_sigma)
    }
}

/// Derives the seed of one frame's random stream from the run seed.
///
/// First 8 bytes (little endian) of SHA-256 over the seed's little-endian
/// bytes followed by the UTF-8 frame id.
pub fn derive_frame_seed(master_seed: u64, frame_id: &FrameId) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(frame_id.as_str().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn frame_rng(master_seed: u64, frame_id: &FrameId) -> FrameRng {
    FrameRng::seed_from_u64(derive_frame_seed(master_seed, frame_id))
}

/// Uniform draw in `[0, max_ratio]`.
pub fn sample_occlusion_ratio<R: Rng + ?Sized>(rng: &mut R, max_ratio: f64) -> f64 {
    rng.random::<f64>() * max_ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Accepted { col: usize, attempts: u32 },
    Rejected { attempts: u32 },
}

/// Chooses a column for `patch` at its source row.
///
/// Columns are sampled uniformly from `[0, W - bbox_width]`; the first one
/// whose mask footprint avoids `occupied` is accepted.
pub fn place_occluder<R: Rng + ?Sized>(
    rng: &mut R,
    patch: &InstancePatch,
    occupied: &BinaryMask,
    max_attempts: u32,
) -> Placement {
    let (h, w) = occupied.dims();
    if patch.width() > w || patch.anchor_row >= h {
        return Placement::Rejected { attempts: 0 };
    }
    let top = patch.top_row();
    for attempt in 1..=max_attempts {
        let col = rng.random_range(0..=w - patch.width());
        if !footprint_intersects(patch, top, col, occupied) {
            return Placement::Accepted {
                col,
                attempts: attempt,
            };
        }
    }
    Placement::Rejected {
        attempts: max_attempts,
    }
}

fn footprint_intersects(patch: &InstancePatch, top: usize, left: usize, occupied: &BinaryMask) -> bool {
    (0..patch.height()).any(|r| {
        let occ = &occupied.row(top + r)[left..left + patch.width()];
        patch
            .mask
            .row(r)
            .iter()
            .zip(occ)
            .any(|(&m, &o)| m && o)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub patch: PatchKey,
    pub class_id: u8,
    /// Target row of the occluder's bottom edge, equal to its source anchor row.
    pub row: usize,
    /// Target column of the occluder's left edge.
    pub col: usize,
    /// Pasted mask pixels.
    pub pixels: usize,
    /// Column samples spent on this placement.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub frame_id: FrameId,
    pub frame_seed: u64,
    /// Drawn occlusion ratio `P_o`.
    pub drawn_ratio: f64,
    /// Pasted pixels over all image pixels.
    pub achieved_ratio: f64,
    pub pasted_pixels: usize,
    pub total_pixels: usize,
    pub pastes: Vec<PasteRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl GenerationManifest {
    /// Number of pasted occluders.
    pub fn num_occluders(&self) -> usize {
        self.pastes.len()
    }
}

/// Output of [`compose_frame`].
#[derive(Debug, Clone)]
pub struct Composition {
    pub image: RgbRaster,
    pub mask: AmodalMask,
    pub manifest: GenerationManifest,
}

struct Canvas {
    image: RgbRaster,
    visible: LabelMap,
    occluded: LabelMap,
    occupied: BinaryMask,
}

impl Canvas {
    fn new(target: &LabeledFrame) -> Self {
        let (h, w) = target.dims();
        Self {
            image: target.image.clone(),
            visible: target.semantic.clone(),
            occluded: Raster::filled(h, w, IGNORE),
            occupied: Raster::filled(h, w, false),
        }
    }

    fn paste(&mut self, patch: &InstancePatch, col: usize, kernel: &GaussianKernel) {
        let top = patch.top_row();
        blend_paste_into(&mut self.image, patch, top, col, kernel);
        for r in 0..patch.height() {
            for (c, &m) in patch.mask.row(r).iter().enumerate() {
                if !m {
                    continue;
                }
                let (tr, tc) = (top + r, col + c);
                let previous = *self.visible.get(tr, tc);
                self.occluded.set(tr, tc, previous);
                self.visible.set(tr, tc, patch.class_id);
                self.occupied.set(tr, tc, true);
            }
        }
    }

    fn finish(self) -> (RgbRaster, AmodalMask) {
        (
            self.image,
            AmodalMask {
                visible: self.visible,
                occluded: self.occluded,
            },
        )
    }
}

/// Synthesizes the amodal version of `target` with occluders from `bank`.
pub fn compose_frame(
    target: &LabeledFrame,
    bank: &InstanceBank,
    cfg: &GenerationConfig,
) -> Result<Composition> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let candidates = bank.candidate_set(&target.frame_id);
    if candidates.is_empty() {
        return Err(Error::NoCandidates(target.frame_id.to_string()));
    }

    let frame_seed = derive_frame_seed(cfg.master_seed, &target.frame_id);
    let mut rng = FrameRng::seed_from_u64(frame_seed);
    let drawn_ratio = sample_occlusion_ratio(&mut rng, cfg.max_occlusion_ratio);

    let (h, w) = target.dims();
    let total_pixels = h * w;
    let mut canvas = Canvas::new(target);
    let mut pastes = Vec::new();
    let mut pasted_pixels = 0usize;
    let mut warning = None;

    while drawn_ratio > 0.0 && (pasted_pixels as f64 / total_pixels as f64) <= drawn_ratio {
        let mut placed = false;
        for _ in 0..cfg.max_patch_redraws {
            let id = candidates.nth(rng.random_range(0..candidates.len()));
            let patch = bank.patch(id);
            if let Placement::Accepted { col, attempts } =
                place_occluder(&mut rng, patch, &canvas.occupied, cfg.max_place_attempts)
            {
                canvas.paste(patch, col, &kernel);
                pasted_pixels += patch.area;
                pastes.push(PasteRecord {
                    patch: patch.key(),
                    class_id: patch.class_id,
                    row: patch.anchor_row,
                    col,
                    pixels: patch.area,
                    attempts,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            warning = Some(if pastes.is_empty() {
                "no occluder could be placed".to_owned()
            } else {
                "placement saturated before the drawn ratio was exceeded".to_owned()
            });
            log::warn!("{}: {}", target.frame_id, warning.as_deref().unwrap_or_default());
            break;
        }
    }

    let (image, mask) = canvas.finish();
    Ok(Composition {
        image,
        mask,
        manifest: GenerationManifest {
            frame_id: target.frame_id.clone(),
            frame_seed,
            drawn_ratio,
            achieved_ratio: pasted_pixels as f64 / total_pixels as f64,
            pasted_pixels,
            total_pixels,
            pastes,
            warning,
        },
    })
}

fn resolve_record<'b>(
    bank: &'b InstanceBank,
    record: &PasteRecord,
    dims: (usize, usize),
) -> Result<&'b InstancePatch> {
    let id = bank.find(&record.patch).ok_or_else(|| {
        Error::ManifestMismatch(format!(
            "patch {}#{} is not in the bank",
            record.patch.source_frame, record.patch.instance_id
        ))
    })?;
    let patch = bank.patch(id);
    let (h, w) = dims;
    if patch.class_id != record.class_id
        || patch.anchor_row != record.row
        || patch.area != record.pixels
        || record.row >= h
        || record.col + patch.width() > w
    {
        return Err(Error::ManifestMismatch(format!(
            "paste of {}#{} disagrees with the bank patch or frame size",
            record.patch.source_frame, record.patch.instance_id
        )));
    }
    Ok(patch)
}

/// Re-applies the pastes recorded in `manifest` to `target`.
pub fn replay_manifest(
    target: &LabeledFrame,
    bank: &InstanceBank,
    manifest: &GenerationManifest,
    cfg: &GenerationConfig,
) -> Result<(RgbRaster, AmodalMask)> {
    if manifest.frame_id != target.frame_id {
        return Err(Error::ManifestMismatch(format!(
            "manifest for {} applied to {}",
            manifest.frame_id, target.frame_id
        )));
    }
    let kernel = cfg.kernel()?;
    let mut canvas = Canvas::new(target);
    for record in &manifest.pastes {
        let patch = resolve_record(bank, record, target.dims())?;
        canvas.paste(patch, record.col, &kernel);
    }
    Ok(canvas.finish())
}

/// Union of the binary-mask footprints of every paste in `manifest`.
pub fn occluder_region(
    manifest: &GenerationManifest,
    bank: &InstanceBank,
    dims: (usize, usize),
) -> Result<BinaryMask> {
    let mut region = Raster::filled(dims.0, dims.1, false);
    for record in &manifest.pastes {
        let patch = resolve_record(bank, record, dims)?;
        let top = patch.top_row();
        for r in 0..patch.height() {
            for (c, &m) in patch.mask.row(r).iter().enumerate() {
                if m {
                    region.set(top + r, record.col + c, true);
                }
            }
        }
    }
    Ok(region)
}
