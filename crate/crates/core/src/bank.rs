//! Occluder instance extraction and the persisted instance bank.
//!
//! Bank directory layout:
//!
//! ```text
//! <bank>/patches/<stem>_<instance id>.png   RGBA crop, mask in alpha
//! <bank>/index.jsonl                        one record per patch, bank order
//! <bank>/bank.json                          source frame order and counts
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgba};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cityscapes::{FrameId, LabeledFrame};
use crate::error::{Error, Result};
use crate::labels::{is_instance_class, raw_to_train_id, NUM_CLASSES};
use crate::raster::{quantize, BinaryMask, Raster, Rgb8Raster};

/// Axis-aligned box in source-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn bottom(&self) -> usize {
        self.top + self.height - 1
    }
}

/// Minimum bounding-box size an instance needs to be kept as an occluder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeFilter {
    pub min_width: usize,
    pub min_height: usize,
}

impl Default for SizeFilter {
    fn default() -> Self {
        Self {
            min_width: 10,
            min_height: 20,
        }
    }
}

impl SizeFilter {
    pub fn accepts(&self, bbox: &BBox) -> bool {
        bbox.width >= self.min_width && bbox.height >= self.min_height
    }
}

/// Stable identity of a patch across bank rebuilds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchKey {
    pub source_frame: FrameId,
    pub instance_id: u16,
}

/// Index of a patch within an [`InstanceBank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchId(pub usize);

/// An extracted occluder.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePatch {
    pub source_frame: FrameId,
    /// Raw Cityscapes instance id (`rawId * 1000 + index`).
    pub instance_id: u16,
    /// trainId, always one of the eight instance classes.
    pub class_id: u8,
    /// Tight bounding box in the source frame.
    pub bbox: BBox,
    /// Source row of the bbox's bottom edge; pastes keep this row.
    pub anchor_row: usize,
    /// 8-bit RGB crop over `bbox`.
    pub rgb: Rgb8Raster,
    /// Instance mask over `bbox`.
    pub mask: BinaryMask,
    /// Number of set mask pixels.
    pub area: usize,
}

impl InstancePatch {
    pub fn key(&self) -> PatchKey {
        PatchKey {
            source_frame: self.source_frame.clone(),
            instance_id: self.instance_id,
        }
    }

    pub fn height(&self) -> usize {
        self.bbox.height
    }

    pub fn width(&self) -> usize {
        self.bbox.width
    }

    /// Row in any same-sized target where the patch's top edge lands.
    pub fn top_row(&self) -> usize {
        self.anchor_row + 1 - self.bbox.height
    }
}

/// Per-class instance counts before and after the size filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCounts {
    pub seen_per_class: [u64; NUM_CLASSES],
    pub kept_per_class: [u64; NUM_CLASSES],
}

impl InstanceCounts {
    pub fn seen(&self) -> u64 {
        self.seen_per_class.iter().sum()
    }

    pub fn kept(&self) -> u64 {
        self.kept_per_class.iter().sum()
    }

    pub fn merge(&mut self, other: &InstanceCounts) {
        for c in 0..NUM_CLASSES {
            self.seen_per_class[c] += other.seen_per_class[c];
            self.kept_per_class[c] += other.kept_per_class[c];
        }
    }
}

/// Result of extracting one frame.
#[derive(Debug, Clone)]
pub struct FrameInstances {
    pub frame_id: FrameId,
    pub patches: Vec<InstancePatch>,
    pub counts: InstanceCounts,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InstanceExtractor {
    pub filter: SizeFilter,
}

struct Extent {
    min_r: usize,
    max_r: usize,
    min_c: usize,
    max_c: usize,
}

impl InstanceExtractor {
    pub fn new(filter: SizeFilter) -> Self {
        Self { filter }
    }

    /// Extracts every instance of an occluder class, in increasing instance-id order.
    pub fn extract(&self, frame: &LabeledFrame) -> FrameInstances {
        let inst = &frame.instances;
        let mut extents: BTreeMap<u16, Extent> = BTreeMap::new();
        for r in 0..inst.height() {
            for (c, &id) in inst.row(r).iter().enumerate() {
                // ids below 1000 are crowd regions or stuff classes
                if id < 1000 || !is_instance_class(raw_to_train_id((id / 1000) as u8)) {
                    continue;
                }
                extents
                    .entry(id)
                    .and_modify(|e| {
                        e.min_r = e.min_r.min(r);
                        e.max_r = e.max_r.max(r);
                        e.min_c = e.min_c.min(c);
                        e.max_c = e.max_c.max(c);
                    })
                    .or_insert(Extent {
                        min_r: r,
                        max_r: r,
                        min_c: c,
                        max_c: c,
                    });
            }
        }

        let mut counts = InstanceCounts::default();
        let mut patches = Vec::new();
        for (id, e) in extents {
            let class_id = raw_to_train_id((id / 1000) as u8);
            counts.seen_per_class[class_id as usize] += 1;
            let bbox = BBox {
                top: e.min_r,
                left: e.min_c,
                height: e.max_r - e.min_r + 1,
                width: e.max_c - e.min_c + 1,
            };
            if !self.filter.accepts(&bbox) {
                continue;
            }
            counts.kept_per_class[class_id as usize] += 1;
            let mask = inst
                .crop(bbox.top, bbox.left, bbox.height, bbox.width)
                .map(|&v| v == id);
            let rgb = frame
                .image
                .crop(bbox.top, bbox.left, bbox.height, bbox.width)
                .map(|p| p.map(quantize));
            let area = mask.count_set();
            patches.push(InstancePatch {
                source_frame: frame.frame_id.clone(),
                instance_id: id,
                class_id,
                anchor_row: bbox.bottom(),
                bbox,
                rgb,
                mask,
                area,
            });
        }
        FrameInstances {
            frame_id: frame.frame_id.clone(),
            patches,
            counts,
        }
    }
}

/// Extracts occluder patches from a frame with the default 10 × 20 size filter.
pub fn extract_instances(frame: &LabeledFrame) -> Vec<InstancePatch> {
    InstanceExtractor::default().extract(frame).patches
}

/// Patches eligible for pasting into one target frame: every patch outside
/// the target's own contiguous block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidates {
    total: usize,
    excluded: (usize, usize),
}

impl Candidates {
    pub fn len(&self) -> usize {
        self.total - (self.excluded.1 - self.excluded.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th candidate in bank order.
    pub fn nth(&self, i: usize) -> PatchId {
        debug_assert!(i < self.len());
        if i < self.excluded.0 {
            PatchId(i)
        } else {
            PatchId(i + self.excluded.1 - self.excluded.0)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = PatchId> + '_ {
        (0..self.len()).map(|i| self.nth(i))
    }
}

#[derive(Debug, Clone, Default)]
pub struct InstanceBank {
    patches: Vec<InstancePatch>,
    frames: Vec<FrameId>,
    by_source: BTreeMap<FrameId, Range<usize>>,
    by_key: BTreeMap<PatchKey, usize>,
    counts: InstanceCounts,
    filter: SizeFilter,
}

/// Builds a bank by extracting every frame, in iteration order.
pub fn build_bank<I>(frames: I) -> Result<InstanceBank>
where
    I: IntoIterator<Item = LabeledFrame>,
{
    let extractor = InstanceExtractor::default();
    InstanceBank::from_extractions(
        extractor.filter,
        frames.into_iter().map(|f| extractor.extract(&f)),
    )
}

impl InstanceBank {
    /// Assembles per-frame extraction results in the given order.
    pub fn from_extractions<I>(filter: SizeFilter, extractions: I) -> Result<Self>
    where
        I: IntoIterator<Item = FrameInstances>,
    {
        let mut bank = InstanceBank {
            filter,
            ..Default::default()
        };
        for fi in extractions {
            bank.push_frame(fi)?;
        }
        Ok(bank)
    }

    fn push_frame(&mut self, fi: FrameInstances) -> Result<()> {
        if self.by_source.contains_key(&fi.frame_id) {
            return Err(Error::InvalidInput(format!(
                "frame '{}' appears twice in the bank input",
                fi.frame_id
            )));
        }
        let start = self.patches.len();
        for p in fi.patches {
            if p.source_frame != fi.frame_id {
                return Err(Error::InvalidInput(format!(
                    "patch from '{}' listed under frame '{}'",
                    p.source_frame, fi.frame_id
                )));
            }
            self.by_key.insert(p.key(), self.patches.len());
            self.patches.push(p);
        }
        self.counts.merge(&fi.counts);
        self.by_source
            .insert(fi.frame_id.clone(), start..self.patches.len());
        self.frames.push(fi.frame_id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[InstancePatch] {
        &self.patches
    }

    pub fn patch(&self, id: PatchId) -> &InstancePatch {
        &self.patches[id.0]
    }

    pub fn find(&self, key: &PatchKey) -> Option<PatchId> {
        self.by_key.get(key).copied().map(PatchId)
    }

    /// Source frames in bank order, including frames that yielded no patches.
    pub fn frames(&self) -> &[FrameId] {
        &self.frames
    }

    pub fn patches_from(&self, frame: &FrameId) -> Range<usize> {
        self.by_source.get(frame).cloned().unwrap_or(0..0)
    }

    pub fn counts(&self) -> &InstanceCounts {
        &self.counts
    }

    pub fn filter(&self) -> SizeFilter {
        self.filter
    }

    pub fn candidate_set(&self, target: &FrameId) -> Candidates {
        let own = self.patches_from(target);
        Candidates {
            total: self.patches.len(),
            excluded: (own.start, own.end),
        }
    }

    /// Every patch not taken from `target`, in bank order.
    pub fn candidates_for(&self, target: &FrameId) -> Vec<PatchId> {
        self.candidate_set(target).iter().collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let patch_dir = dir.join("patches");
        fs::create_dir_all(&patch_dir)?;

        self.patches
            .par_iter()
            .try_for_each(|p| write_patch_png(&patch_dir.join(patch_file_name(p)), p))?;

        let mut index = BufWriter::new(fs::File::create(dir.join("index.jsonl"))?);
        for p in &self.patches {
            serde_json::to_writer(&mut index, &IndexRecord::from(p))?;
            index.write_all(b"\n")?;
        }
        index.flush()?;

        let summary = BankSummary {
            frames: self.frames.clone(),
            instances_seen: self.counts.seen(),
            patches_kept: self.counts.kept(),
            size_filter: self.filter,
            counts: self.counts.clone(),
        };
        fs::write(
            dir.join("bank.json"),
            serde_json::to_string_pretty(&summary)? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let summary_path = dir.join("bank.json");
        let summary: BankSummary = serde_json::from_slice(
            &fs::read(&summary_path).map_err(|e| Error::io_at(&summary_path, e))?,
        )?;
        let index_path = dir.join("index.jsonl");
        let file = fs::File::open(&index_path).map_err(|e| Error::io_at(&index_path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<IndexRecord>(&line)?);
        }

        let patch_dir = dir.join("patches");
        let patches: Vec<InstancePatch> = records
            .into_par_iter()
            .map(|rec| rec.load_patch(&patch_dir))
            .collect::<Result<_>>()?;

        let mut grouped: BTreeMap<FrameId, Vec<InstancePatch>> = BTreeMap::new();
        let known: HashSet<&FrameId> = summary.frames.iter().collect();
        for p in patches {
            if !known.contains(&p.source_frame) {
                return Err(Error::InvalidInput(format!(
                    "index lists patch from '{}' which is not a bank frame",
                    p.source_frame
                )));
            }
            grouped.entry(p.source_frame.clone()).or_default().push(p);
        }

        let mut bank = InstanceBank {
            filter: summary.size_filter,
            ..Default::default()
        };
        for frame in &summary.frames {
            let patches = grouped.remove(frame).unwrap_or_default();
            bank.push_frame(FrameInstances {
                frame_id: frame.clone(),
                patches,
                counts: InstanceCounts::default(),
            })?;
        }
        bank.counts = summary.counts;
        Ok(bank)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankSummary {
    frames: Vec<FrameId>,
    instances_seen: u64,
    patches_kept: u64,
    size_filter: SizeFilter,
    counts: InstanceCounts,
}

/// One line of `index.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexRecord {
    pub frame: FrameId,
    pub instance_id: u16,
    pub class: u8,
    /// `[top, left, height, width]`
    pub bbox: [usize; 4],
    pub anchor_row: usize,
    pub area: usize,
}

impl From<&InstancePatch> for IndexRecord {
    fn from(p: &InstancePatch) -> Self {
        IndexRecord {
            frame: p.source_frame.clone(),
            instance_id: p.instance_id,
            class: p.class_id,
            bbox: [p.bbox.top, p.bbox.left, p.bbox.height, p.bbox.width],
            anchor_row: p.anchor_row,
            area: p.area,
        }
    }
}

impl IndexRecord {
    fn load_patch(self, patch_dir: &Path) -> Result<InstancePatch> {
        let bbox = BBox {
            top: self.bbox[0],
            left: self.bbox[1],
            height: self.bbox[2],
            width: self.bbox[3],
        };
        let path = patch_dir.join(format!("{}_{}.png", self.frame.stem(), self.instance_id));
        let (rgb, mask) = read_patch_png(&path)?;
        if rgb.dims() != (bbox.height, bbox.width) || mask.count_set() != self.area {
            return Err(Error::InvalidInput(format!(
                "patch {} does not match its index record",
                path.display()
            )));
        }
        Ok(InstancePatch {
            source_frame: self.frame,
            instance_id: self.instance_id,
            class_id: self.class,
            bbox,
            anchor_row: self.anchor_row,
            rgb,
            mask,
            area: self.area,
        })
    }
}

pub fn patch_file_name(p: &InstancePatch) -> PathBuf {
    PathBuf::from(format!("{}_{}.png", p.source_frame.stem(), p.instance_id))
}

fn write_patch_png(path: &Path, p: &InstancePatch) -> Result<()> {
    let mut flat = Vec::with_capacity(p.rgb.len() * 4);
    for (px, &m) in p.rgb.as_slice().iter().zip(p.mask.as_slice()) {
        flat.extend_from_slice(px);
        flat.push(if m { 255 } else { 0 });
    }
    let buf: ImageBuffer<Rgba<u8>, _> =
        ImageBuffer::from_raw(p.width() as u32, p.height() as u32, flat)
            .expect("buffer size matches patch");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn read_patch_png(path: &Path) -> Result<(Rgb8Raster, BinaryMask)> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let img = match image::open(path)? {
        DynamicImage::ImageRgba8(buf) => buf,
        other => {
            return Err(Error::InvalidInput(format!(
                "{} is {:?}, expected RGBA8",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = img.pixels().map(|p| [p.0[0], p.0[1], p.0[2]]).collect();
    let mask = img.pixels().map(|p| p.0[3] >= 128).collect();
    Ok((Raster::from_vec(h, w, rgb)?, Raster::from_vec(h, w, mask)?))
}
