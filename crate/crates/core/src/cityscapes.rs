//! Cityscapes-format input, amodal dataset output, and split lists.
//!
//! Input layout (as distributed by Cityscapes):
//!
//! ```text
//! <root>/leftImg8bit/<subset>/<city>/<stem>_leftImg8bit.png
//! <root>/gtFine/<subset>/<city>/<stem>_gtFine_labelIds.png
//! <root>/gtFine/<subset>/<city>/<stem>_gtFine_instanceIds.png   (16-bit)
//! ```
//!
//! Output layout of a generated amodal dataset:
//!
//! ```text
//! <out>/images/<stem>.png
//! <out>/labels_visible/<stem>.png
//! <out>/labels_occluded/<stem>.png
//! <out>/splits/{train,val,test}.txt
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{is_valid_label, raw_to_train_id, IGNORE};
use crate::raster::{dequantize, quantize, InstanceMap, LabelMap, Raster, RgbRaster};

/// Frame identifier of the form `<subset>/<city>/<stem>`, e.g.
/// `train/aachen/aachen_000000_000019`.
///
/// The subset is the original Cityscapes folder the frame lives in, which is
/// not necessarily the amodal split it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameId(String);

impl FrameId {
    pub fn new(id: impl Into<String>) -> Self {
        FrameId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last path component; unique across Cityscapes and used for output file names.
    pub fn stem(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    fn components(&self) -> Vec<&str> {
        self.0.split('/').filter(|s| !s.is_empty()).collect()
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FrameId {
    fn from(s: &str) -> Self {
        FrameId::new(s)
    }
}

/// One Cityscapes frame with its fine annotations.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub frame_id: FrameId,
    pub image: RgbRaster,
    /// trainIds, 255 for void.
    pub semantic: LabelMap,
    /// Raw Cityscapes instance ids (`rawId * 1000 + index` for instances).
    pub instances: InstanceMap,
}

impl LabeledFrame {
    pub fn new(
        frame_id: FrameId,
        image: RgbRaster,
        semantic: LabelMap,
        instances: InstanceMap,
    ) -> Result<Self> {
        if !image.same_dims(&semantic) || !image.same_dims(&instances) {
            return Err(Error::CorruptFrame {
                frame: frame_id.to_string(),
                reason: format!(
                    "raster dimensions disagree: image {:?}, labels {:?}, instances {:?}",
                    image.dims(),
                    semantic.dims(),
                    instances.dims()
                ),
            });
        }
        Ok(Self {
            frame_id,
            image,
            semantic,
            instances,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// Two-channel amodal ground truth: visible and occluded trainIds.
#[derive(Debug, Clone, PartialEq)]
pub struct AmodalMask {
    pub visible: LabelMap,
    /// 255 wherever no occluded class is recorded.
    pub occluded: LabelMap,
}

impl AmodalMask {
    pub fn new(visible: LabelMap, occluded: LabelMap) -> Result<Self> {
        if !visible.same_dims(&occluded) {
            return Err(Error::InvalidInput(format!(
                "visible {:?} and occluded {:?} channels differ in size",
                visible.dims(),
                occluded.dims()
            )));
        }
        Ok(Self { visible, occluded })
    }

    /// A mask without any occlusion.
    pub fn unoccluded(visible: LabelMap) -> Self {
        let occluded = Raster::filled(visible.height(), visible.width(), IGNORE);
        Self { visible, occluded }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.visible.dims()
    }

    pub fn is_well_formed(&self) -> bool {
        self.visible.as_slice().iter().all(|&v| is_valid_label(v))
            && self.occluded.as_slice().iter().all(|&v| is_valid_label(v))
    }
}

/// Ordered target and source frame lists of one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub name: String,
    pub target_frames: Vec<FrameId>,
    /// Always equal to `target_frames`: every split sources its own occluders,
    /// excluding the current target frame.
    pub source_frames: Vec<FrameId>,
}

impl SplitSpec {
    pub fn new(name: impl Into<String>, frames: Vec<FrameId>) -> Result<Self> {
        let name = name.into();
        if frames.is_empty() {
            return Err(Error::InvalidSplit(format!("split '{name}' is empty")));
        }
        let mut seen = HashSet::with_capacity(frames.len());
        for f in &frames {
            if !seen.insert(f.as_str()) {
                return Err(Error::InvalidSplit(format!(
                    "duplicate frame '{f}' in split '{name}'"
                )));
            }
        }
        Ok(Self {
            name,
            source_frames: frames.clone(),
            target_frames: frames,
        })
    }

    pub fn len(&self) -> usize {
        self.target_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_frames.is_empty()
    }
}

const FILE_SUFFIXES: [&str; 4] = [
    "_leftImg8bit.png",
    "_gtFine_labelIds.png",
    "_gtFine_instanceIds.png",
    ".png",
];

fn normalize_list_entry(line: &str) -> Option<FrameId> {
    let mut entry = line.trim();
    if entry.is_empty() || entry.starts_with('#') {
        return None;
    }
    for prefix in ["leftImg8bit/", "gtFine/"] {
        if let Some(rest) = entry.strip_prefix(prefix) {
            entry = rest;
        }
    }
    for suffix in FILE_SUFFIXES {
        if let Some(rest) = entry.strip_suffix(suffix) {
            entry = rest;
            break;
        }
    }
    Some(FrameId::new(entry))
}

/// Reads a split list with one frame id per line. The split name is the file stem.
///
/// Lines may also be Cityscapes file paths (`leftImg8bit/train/aachen/..._leftImg8bit.png`);
/// the prefix and suffix are stripped. Blank lines and `#` comments are skipped.
pub fn load_split(list_path: &Path) -> Result<SplitSpec> {
    let (name, frames) = read_split_list(list_path)?;
    SplitSpec::new(name, frames)
}

/// Split name and raw entries of a list file, without the checks of [`SplitSpec::new`].
pub fn read_split_list(list_path: &Path) -> Result<(String, Vec<FrameId>)> {
    let text = fs::read_to_string(list_path).map_err(|e| Error::io_at(list_path, e))?;
    let frames = text.lines().filter_map(normalize_list_entry).collect();
    let name = list_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".to_owned());
    Ok((name, frames))
}

pub fn write_split(out_root: &Path, split: &SplitSpec) -> Result<PathBuf> {
    let dir = out_root.join("splits");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.txt", split.name));
    let mut text = String::new();
    for f in &split.target_frames {
        text.push_str(f.as_str());
        text.push('\n');
    }
    fs::write(&path, text)?;
    Ok(path)
}

/// Paths of a frame's three Cityscapes input files.
#[derive(Debug, Clone)]
pub struct FramePaths {
    pub image: PathBuf,
    pub label_ids: PathBuf,
    pub instance_ids: PathBuf,
}

impl FramePaths {
    pub fn new(root: &Path, subset: &str, city: &str, stem: &str) -> Self {
        Self {
            image: root
                .join("leftImg8bit")
                .join(subset)
                .join(city)
                .join(format!("{stem}_leftImg8bit.png")),
            label_ids: root
                .join("gtFine")
                .join(subset)
                .join(city)
                .join(format!("{stem}_gtFine_labelIds.png")),
            instance_ids: root
                .join("gtFine")
                .join(subset)
                .join(city)
                .join(format!("{stem}_gtFine_instanceIds.png")),
        }
    }

    /// Resolves a frame id. Ids without the subset component (`<city>/<stem>`)
    /// are looked up in `train`, then `val`, then `test`.
    pub fn resolve(root: &Path, frame_id: &FrameId) -> Result<Self> {
        match frame_id.components().as_slice() {
            [subset, city, stem] => Ok(Self::new(root, subset, city, stem)),
            [city, stem] => {
                let candidates = ["train", "val", "test"].map(|s| Self::new(root, s, city, stem));
                let found = candidates.iter().find(|p| p.image.exists()).cloned();
                found.ok_or_else(|| Error::NotFound(candidates[0].image.clone()))
            }
            _ => Err(Error::InvalidInput(format!(
                "frame id '{frame_id}' is not of the form <subset>/<city>/<stem>"
            ))),
        }
    }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    Ok(image::open(path)?)
}

pub(crate) fn read_rgb8(path: &Path) -> Result<Raster<[u8; 3]>> {
    let img = open_image(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Raster::from_vec(h, w, data)
}

pub fn read_rgb(path: &Path) -> Result<RgbRaster> {
    Ok(read_rgb8(path)?.map(|p| p.map(dequantize)))
}

/// Reads an 8-bit single-channel PNG without rescaling.
pub fn read_gray8(path: &Path) -> Result<LabelMap> {
    let img = open_image(path)?;
    let luma = match img {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::InvalidInput(format!(
                "{} is {:?}, expected 8-bit grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    Raster::from_vec(h, w, luma.into_raw())
}

/// Reads a 16-bit (or 8-bit) single-channel PNG without rescaling.
pub fn read_gray16(path: &Path) -> Result<InstanceMap> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        other => {
            return Err(Error::InvalidInput(format!(
                "{} is {:?}, expected grayscale",
                path.display(),
                other.color()
            )))
        }
    };
    Raster::from_vec(h, w, data)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

pub(crate) fn write_rgb8(path: &Path, img: &Raster<[u8; 3]>) -> Result<()> {
    ensure_parent(path)?;
    let flat: Vec<u8> = img.as_slice().iter().flat_map(|p| *p).collect();
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, flat)
            .expect("buffer size matches raster");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes an RGB raster as 8-bit PNG, quantizing each intensity.
pub fn write_rgb(path: &Path, img: &RgbRaster) -> Result<()> {
    write_rgb8(path, &img.map(|p| p.map(quantize)))
}

pub fn write_gray8(path: &Path, map: &LabelMap) -> Result<()> {
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, map.as_slice().to_vec())
            .expect("buffer size matches raster");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_gray16(path: &Path, map: &InstanceMap) -> Result<()> {
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, map.as_slice().to_vec())
            .expect("buffer size matches raster");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Loads a Cityscapes frame, mapping raw label ids to trainIds.
pub fn load_frame(root: &Path, frame_id: &FrameId) -> Result<LabeledFrame> {
    let paths = FramePaths::resolve(root, frame_id)?;
    let image = read_rgb(&paths.image)?;
    let raw = read_gray8(&paths.label_ids)?;
    let instances = read_gray16(&paths.instance_ids)?;
    let semantic = raw.map(|&v| raw_to_train_id(v));
    LabeledFrame::new(frame_id.clone(), image, semantic, instances)
}

/// Writes a frame in Cityscapes input layout (raw label ids). The inverse of
/// [`load_frame`] up to the raw → trainId mapping.
pub fn write_cityscapes_frame(
    root: &Path,
    frame_id: &FrameId,
    image: &RgbRaster,
    raw_labels: &LabelMap,
    instances: &InstanceMap,
) -> Result<()> {
    let paths = FramePaths::resolve(root, frame_id)?;
    write_rgb(&paths.image, image)?;
    write_gray8(&paths.label_ids, raw_labels)?;
    write_gray16(&paths.instance_ids, instances)?;
    Ok(())
}

/// Output file locations of one generated frame.
#[derive(Debug, Clone)]
pub struct AmodalPaths {
    pub image: PathBuf,
    pub visible: PathBuf,
    pub occluded: PathBuf,
}

impl AmodalPaths {
    pub fn new(out_root: &Path, frame_id: &FrameId) -> Self {
        let file = format!("{}.png", frame_id.stem());
        Self {
            image: out_root.join("images").join(&file),
            visible: out_root.join("labels_visible").join(&file),
            occluded: out_root.join("labels_occluded").join(&file),
        }
    }
}

pub fn write_amodal_mask(out_root: &Path, frame_id: &FrameId, mask: &AmodalMask) -> Result<()> {
    let paths = AmodalPaths::new(out_root, frame_id);
    write_gray8(&paths.visible, &mask.visible)?;
    write_gray8(&paths.occluded, &mask.occluded)?;
    Ok(())
}

pub fn write_amodal_frame(
    out_root: &Path,
    frame_id: &FrameId,
    image: &RgbRaster,
    mask: &AmodalMask,
) -> Result<()> {
    if !image.same_dims(&mask.visible) || !mask.visible.same_dims(&mask.occluded) {
        return Err(Error::InvalidInput(format!(
            "image {:?} and mask {:?} dimensions disagree for {frame_id}",
            image.dims(),
            mask.dims()
        )));
    }
    let paths = AmodalPaths::new(out_root, frame_id);
    write_rgb(&paths.image, image)?;
    write_amodal_mask(out_root, frame_id, mask)
}

pub fn load_amodal_mask(root: &Path, frame_id: &FrameId) -> Result<AmodalMask> {
    let paths = AmodalPaths::new(root, frame_id);
    let visible = read_gray8(&paths.visible)?;
    let occluded = read_gray8(&paths.occluded)?;
    AmodalMask::new(visible, occluded).map_err(|_| Error::CorruptFrame {
        frame: frame_id.to_string(),
        reason: "visible and occluded label maps differ in size".into(),
    })
}

pub fn load_amodal_frame(root: &Path, frame_id: &FrameId) -> Result<(RgbRaster, AmodalMask)> {
    let paths = AmodalPaths::new(root, frame_id);
    let image = read_rgb(&paths.image)?;
    let mask = load_amodal_mask(root, frame_id)?;
    if !image.same_dims(&mask.visible) {
        return Err(Error::CorruptFrame {
            frame: frame_id.to_string(),
            reason: "image and label maps differ in size".into(),
        });
    }
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{CAR, ROAD};

    fn frame_id() -> FrameId {
        FrameId::new("train/testcity/testcity_000000_000001")
    }

    fn write_fixture(root: &Path, raw: u8, inst: impl Fn(usize, usize) -> u16) {
        let image = Raster::from_fn(4, 4, |r, c| [r as f32 / 4.0, c as f32 / 4.0, 0.5]);
        let raw_labels = Raster::filled(4, 4, raw);
        let instances = Raster::from_fn(4, 4, inst);
        write_cityscapes_frame(root, &frame_id(), &image, &raw_labels, &instances).unwrap();
    }

    #[test]
    fn road_maps_to_train_id_zero() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 7, |_, _| 7);
        let f = load_frame(dir.path(), &frame_id()).unwrap();
        assert!(f.semantic.as_slice().iter().all(|&v| v == ROAD));
    }

    #[test]
    fn unlabeled_maps_to_ignore() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 0, |_, _| 0);
        let f = load_frame(dir.path(), &frame_id()).unwrap();
        assert!(f.semantic.as_slice().iter().all(|&v| v == IGNORE));
    }

    #[test]
    fn car_instance_ids_survive_16_bit_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 26, |r, c| if r < 2 && c < 2 { 26001 } else { 26 });
        let f = load_frame(dir.path(), &frame_id()).unwrap();
        assert_eq!(*f.instances.get(0, 0), 26001);
        assert_eq!(*f.instances.get(1, 1), 26001);
        assert_eq!(*f.instances.get(3, 3), 26);
        assert_eq!(
            f.instances.as_slice().iter().filter(|&&v| v == 26001).count(),
            4
        );
        assert!(f.semantic.as_slice().iter().all(|&v| v == CAR));
    }

    #[test]
    fn missing_frame_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_frame(dir.path(), &frame_id()).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 7, |_, _| 7);
        let paths = FramePaths::resolve(dir.path(), &frame_id()).unwrap();
        write_gray8(&paths.label_ids, &Raster::filled(3, 4, 7u8)).unwrap();
        let err = load_frame(dir.path(), &frame_id()).unwrap_err();
        assert!(matches!(err, Error::CorruptFrame { .. }), "{err}");
    }

    #[test]
    fn amodal_frame_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let image = Raster::from_fn(16, 16, |r, c| {
            [r as f32 / 15.0, c as f32 / 15.0, ((r * c) % 256) as f32 / 255.0]
        });
        let visible = Raster::from_fn(16, 16, |r, c| ((r + c) % 19) as u8);
        let occluded = Raster::from_fn(16, 16, |r, c| {
            if (4..8).contains(&r) && (4..8).contains(&c) {
                2
            } else {
                IGNORE
            }
        });
        let mask = AmodalMask::new(visible, occluded).unwrap();
        write_amodal_frame(dir.path(), &frame_id(), &image, &mask).unwrap();
        let (img2, mask2) = load_amodal_frame(dir.path(), &frame_id()).unwrap();
        assert_eq!(mask2, mask);
        assert_eq!(img2.map(|p| p.map(quantize)), image.map(|p| p.map(quantize)));
        let occluded_pixels = mask2
            .occluded
            .as_slice()
            .iter()
            .filter(|&&v| v != IGNORE)
            .count();
        assert_eq!(occluded_pixels, 16);
    }

    #[test]
    fn unoccluded_mask_has_all_sentinel_occluded_channel() {
        let dir = tempfile::tempdir().unwrap();
        let mask = AmodalMask::unoccluded(Raster::filled(5, 7, ROAD));
        let image = Raster::filled(5, 7, [0.0f32; 3]);
        write_amodal_frame(dir.path(), &frame_id(), &image, &mask).unwrap();
        let loaded = load_amodal_mask(dir.path(), &frame_id()).unwrap();
        assert!(loaded.occluded.as_slice().iter().all(|&v| v == IGNORE));
    }

    #[test]
    fn split_lists() {
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("train.txt");
        fs::write(&one, "train/aachen/aachen_000000_000019\n").unwrap();
        let split = load_split(&one).unwrap();
        assert_eq!(split.len(), 1);
        assert_eq!(split.name, "train");
        assert_eq!(split.source_frames, split.target_frames);

        let dup = dir.path().join("dup.txt");
        fs::write(&dup, "a/b/c\na/b/c\n").unwrap();
        assert!(matches!(load_split(&dup), Err(Error::InvalidSplit(_))));

        let empty = dir.path().join("empty.txt");
        fs::write(&empty, "\n\n").unwrap();
        assert!(matches!(load_split(&empty), Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn split_entries_accept_cityscapes_file_paths() {
        let dir = tempfile::tempdir().unwrap();
        let list = dir.path().join("val.txt");
        fs::write(
            &list,
            "leftImg8bit/train/aachen/aachen_000000_000019_leftImg8bit.png\n# comment\n",
        )
        .unwrap();
        let split = load_split(&list).unwrap();
        assert_eq!(
            split.target_frames,
            vec![FrameId::new("train/aachen/aachen_000000_000019")]
        );
    }

    #[test]
    fn split_written_then_loaded_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let split = SplitSpec::new(
            "test",
            vec![FrameId::new("val/x/x_1"), FrameId::new("val/x/x_2")],
        )
        .unwrap();
        let path = write_split(dir.path(), &split).unwrap();
        assert_eq!(load_split(&path).unwrap(), split);
    }
}
