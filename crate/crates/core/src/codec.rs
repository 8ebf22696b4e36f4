//! Groupwise amodal label representation.
//!
//! The 19 classes are partitioned into `K` groups. Each pixel carries a vector
//! `(p, q_0, …, q_{K-1})` where `p` (length `K`) scores which group is visible
//! and each `q_k` (length `g_k + 1`) scores the classes of group `k` plus a
//! final "group absent" slot. Total length is `K + Σ (g_k + 1)`.
//!
//! A ground-truth pixel with visible class `s₁` (group `k₁`) and occluded
//! class `s₂` (group `k₂ ≠ k₁`) encodes as `p = e_{k₁}`, `q_{k₁} = e_{slot(s₁)}`,
//! `q_{k₂} = e_{slot(s₂)}` and every other `q_k` one-hot at its absence slot.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cityscapes::AmodalMask;
use crate::error::{Error, Result};
use crate::labels::{self, IGNORE, NUM_CLASSES};
use crate::raster::{LabelMap, Raster};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    /// trainIds in slot order.
    pub classes: Vec<u8>,
}

/// JSON form of a scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: String,
    pub groups: Vec<GroupSpec>,
}

/// Validated partition of the classes into groups, with slot lookups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingScheme {
    spec: SchemeSpec,
    /// Offset of each `q_k` block within the vector.
    offsets: Vec<usize>,
    /// trainId → (group, slot)
    lookup: [(u8, u8); NUM_CLASSES],
    len: usize,
}

impl GroupingScheme {
    pub fn new(spec: SchemeSpec) -> Result<Self> {
        if spec.groups.is_empty() {
            return Err(Error::InvalidScheme(format!(
                "scheme '{}' has no groups",
                spec.name
            )));
        }
        let mut lookup = [(u8::MAX, u8::MAX); NUM_CLASSES];
        for (k, group) in spec.groups.iter().enumerate() {
            if group.classes.is_empty() {
                return Err(Error::InvalidScheme(format!(
                    "group '{}' has no classes",
                    group.name
                )));
            }
            for (slot, &class) in group.classes.iter().enumerate() {
                let entry = lookup.get_mut(class as usize).ok_or_else(|| {
                    Error::InvalidScheme(format!(
                        "group '{}' lists {class}, which is not a trainId",
                        group.name
                    ))
                })?;
                if entry.0 != u8::MAX {
                    return Err(Error::InvalidScheme(format!(
                        "class {class} ({}) appears in more than one slot",
                        labels::class_name(class)
                    )));
                }
                *entry = (k as u8, slot as u8);
            }
        }
        let missing: Vec<String> = (0..NUM_CLASSES)
            .filter(|&c| lookup[c].0 == u8::MAX)
            .map(|c| format!("{c} ({})", labels::CLASS_NAMES[c]))
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidScheme(format!(
                "classes not covered by any group: {}",
                missing.join(", ")
            )));
        }
        let k = spec.groups.len();
        let mut offsets = Vec::with_capacity(k);
        let mut next = k;
        for g in &spec.groups {
            offsets.push(next);
            next += g.classes.len() + 1;
        }
        Ok(Self {
            spec,
            offsets,
            lookup,
            len: next,
        })
    }

    /// Four groups: static, traffic objects, person-like, vehicle-like.
    pub fn k4() -> Self {
        Self::new(SchemeSpec {
            name: "k4".into(),
            groups: vec![
                static_group(),
                traffic_group(),
                GroupSpec {
                    name: "person-like".into(),
                    classes: vec![labels::PERSON, labels::RIDER],
                },
                GroupSpec {
                    name: "vehicle-like".into(),
                    classes: vehicle_classes(),
                },
            ],
        })
        .expect("k4 preset is a partition")
    }

    /// Three groups: static, traffic objects, and person- plus vehicle-like fused.
    pub fn k3() -> Self {
        let mut dynamic = vec![labels::PERSON, labels::RIDER];
        dynamic.extend(vehicle_classes());
        Self::new(SchemeSpec {
            name: "k3".into(),
            groups: vec![
                static_group(),
                traffic_group(),
                GroupSpec {
                    name: "dynamic".into(),
                    classes: dynamic,
                },
            ],
        })
        .expect("k3 preset is a partition")
    }

    /// `k3`, `k4`, or a path to a JSON scheme file.
    pub fn from_name_or_path(s: &str) -> Result<Self> {
        match s {
            "k3" | "K3" | "3" => Ok(Self::k3()),
            "k4" | "K4" | "4" => Ok(Self::k4()),
            path => Self::from_json_file(Path::new(path)),
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("scheme serializes")
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Number of groups `K`.
    pub fn num_groups(&self) -> usize {
        self.spec.groups.len()
    }

    /// `g_k`, the number of classes in group `k`.
    pub fn group_size(&self, k: usize) -> usize {
        self.spec.groups[k].classes.len()
    }

    /// Per-pixel vector length `K + Σ (g_k + 1)`.
    pub fn vector_len(&self) -> usize {
        self.len
    }

    /// Start of `q_k` within the per-pixel vector.
    pub fn q_offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Slot index of the absence option of group `k` (`g_k`).
    pub fn absence_slot(&self, k: usize) -> usize {
        self.group_size(k)
    }

    /// `(group, slot)` of a trainId.
    pub fn locate(&self, class: u8) -> Option<(usize, usize)> {
        self.lookup
            .get(class as usize)
            .map(|&(k, s)| (k as usize, s as usize))
    }

    /// Projection `f_k`: slot of group `k` → trainId, `None` for the absence slot.
    pub fn class_at(&self, k: usize, slot: usize) -> Option<u8> {
        self.spec.groups[k].classes.get(slot).copied()
    }

    pub fn group_of(&self, class: u8) -> Option<usize> {
        self.locate(class).map(|(k, _)| k)
    }
}

fn static_group() -> GroupSpec {
    GroupSpec {
        name: "static".into(),
        classes: vec![
            labels::ROAD,
            labels::SIDEWALK,
            labels::BUILDING,
            labels::WALL,
            labels::SKY,
            labels::TERRAIN,
            labels::FENCE,
            labels::VEGETATION,
        ],
    }
}

fn traffic_group() -> GroupSpec {
    GroupSpec {
        name: "traffic objects".into(),
        classes: vec![labels::TRAFFIC_SIGN, labels::TRAFFIC_LIGHT, labels::POLE],
    }
}

fn vehicle_classes() -> Vec<u8> {
    vec![
        labels::CAR,
        labels::TRUCK,
        labels::BUS,
        labels::TRAIN,
        labels::BICYCLE,
        labels::MOTORCYCLE,
    ]
}

/// Per-pixel groupwise vectors, row-major `H × W × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupwiseTensor {
    height: usize,
    width: usize,
    scheme: GroupingScheme,
    data: Vec<f32>,
}

impl GroupwiseTensor {
    pub fn zeros(height: usize, width: usize, scheme: GroupingScheme) -> Self {
        let data = vec![0.0; height * width * scheme.vector_len()];
        Self {
            height,
            width,
            scheme,
            data,
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        scheme: GroupingScheme,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = height * width * scheme.vector_len();
        if data.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "{} values for a {height}x{width}x{} tensor",
                data.len(),
                scheme.vector_len()
            )));
        }
        Ok(Self {
            height,
            width,
            scheme,
            data,
        })
    }

    pub fn scheme(&self) -> &GroupingScheme {
        &self.scheme
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn vector_len(&self) -> usize {
        self.scheme.vector_len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let l = self.vector_len();
        let i = (row * self.width + col) * l;
        &self.data[i..i + l]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let l = self.vector_len();
        let i = (row * self.width + col) * l;
        &mut self.data[i..i + l]
    }

    fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.vector_len())
    }

    fn map_pixels(&self, f: impl Fn(&[f32]) -> u8) -> LabelMap {
        let data = self.pixels().map(f).collect();
        Raster::from_vec(self.height, self.width, data).expect("one label per pixel")
    }
}

/// Counters for pixels the groupwise form cannot represent faithfully.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeStats {
    /// Pixels with a void visible label, encoded with uniform `p` and all groups absent.
    pub invalid_pixels: u64,
    /// Pixels whose occluded class shares the visible class's group; the occluded label is dropped.
    pub same_group_dropped: u64,
}

/// Writes the one-hot encoding of one pixel into `out` (length `L`).
/// Returns `(valid, occluded_dropped)`.
pub fn encode_pixel(scheme: &GroupingScheme, visible: u8, occluded: u8, out: &mut [f32]) -> (bool, bool) {
    let k_count = scheme.num_groups();
    out.fill(0.0);
    for k in 0..k_count {
        out[scheme.q_offset(k) + scheme.absence_slot(k)] = 1.0;
    }
    let Some((k1, slot1)) = scheme.locate(visible) else {
        out[..k_count].fill(1.0 / k_count as f32);
        return (false, false);
    };
    out[k1] = 1.0;
    set_one_hot(scheme, out, k1, slot1);
    let mut dropped = false;
    if let Some((k2, slot2)) = scheme.locate(occluded) {
        if k2 != k1 {
            set_one_hot(scheme, out, k2, slot2);
        } else {
            dropped = true;
        }
    }
    (true, dropped)
}

fn set_one_hot(scheme: &GroupingScheme, out: &mut [f32], k: usize, slot: usize) {
    let off = scheme.q_offset(k);
    out[off..off + scheme.group_size(k) + 1].fill(0.0);
    out[off + slot] = 1.0;
}

/// Groupwise one-hot encoding of a two-channel amodal mask.
pub fn encode(mask: &AmodalMask, scheme: &GroupingScheme) -> (GroupwiseTensor, EncodeStats) {
    let (h, w) = mask.dims();
    let mut tensor = GroupwiseTensor::zeros(h, w, scheme.clone());
    let mut stats = EncodeStats::default();
    let l = scheme.vector_len();
    for (i, out) in tensor.data.chunks_exact_mut(l).enumerate() {
        let (valid, dropped) = encode_pixel(
            scheme,
            mask.visible.as_slice()[i],
            mask.occluded.as_slice()[i],
            out,
        );
        stats.invalid_pixels += u64::from(!valid);
        stats.same_group_dropped += u64::from(dropped);
    }
    (tensor, stats)
}

/// Index of the largest value; ties and NaNs resolve to the lowest index.
#[inline]
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Visible class of one pixel vector, and whether the absence slot had to be skipped.
pub fn decode_visible_pixel(scheme: &GroupingScheme, v: &[f32]) -> (u8, bool) {
    let k = argmax(&v[..scheme.num_groups()]);
    let off = scheme.q_offset(k);
    let g = scheme.group_size(k);
    let slot = argmax(&v[off..off + g + 1]);
    if slot == g {
        // a visible class must exist: fall back to the best class slot
        let slot = argmax(&v[off..off + g]);
        (scheme.class_at(k, slot).expect("class slot"), true)
    } else {
        (scheme.class_at(k, slot).expect("class slot"), false)
    }
}

/// Group holding the occluded class: the runner-up of `p`.
///
/// Ties in `p` (always the case for one-hot ground truth, where every group
/// but the visible one is 0) go to a group whose `q` names a class over one
/// whose absence slot wins, then to the lowest index.
pub fn occluded_group(scheme: &GroupingScheme, v: &[f32]) -> Option<usize> {
    let p = &v[..scheme.num_groups()];
    let visible = argmax(p);
    let mut best: Option<(usize, bool)> = None;
    for (k, &pk) in p.iter().enumerate() {
        if k == visible {
            continue;
        }
        let present = group_present(scheme, v, k);
        best = match best {
            Some((b, bp)) if !(pk > p[b] || (pk == p[b] && present && !bp)) => Some((b, bp)),
            _ => Some((k, present)),
        };
    }
    best.map(|(k, _)| k)
}

fn group_present(scheme: &GroupingScheme, v: &[f32], k: usize) -> bool {
    let off = scheme.q_offset(k);
    argmax(&v[off..off + scheme.group_size(k) + 1]) != scheme.absence_slot(k)
}

/// Occluded class of one pixel vector, [`IGNORE`] when the occluded group is absent.
pub fn decode_occluded_pixel(scheme: &GroupingScheme, v: &[f32]) -> u8 {
    match occluded_group(scheme, v) {
        Some(k) => decode_group_pixel(scheme, v, k),
        None => IGNORE,
    }
}

pub fn decode_group_pixel(scheme: &GroupingScheme, v: &[f32], k: usize) -> u8 {
    let off = scheme.q_offset(k);
    let slot = argmax(&v[off..off + scheme.group_size(k) + 1]);
    scheme.class_at(k, slot).unwrap_or(IGNORE)
}

/// Visible class map; also returns how many pixels fell back from the absence slot.
pub fn decode_visible_with_stats(tensor: &GroupwiseTensor) -> (LabelMap, u64) {
    let scheme = tensor.scheme();
    let mut fallbacks = 0u64;
    let data = tensor
        .pixels()
        .map(|v| {
            let (class, fell_back) = decode_visible_pixel(scheme, v);
            fallbacks += u64::from(fell_back);
            class
        })
        .collect();
    let (h, w) = tensor.dims();
    (Raster::from_vec(h, w, data).expect("one label per pixel"), fallbacks)
}

pub fn decode_visible(tensor: &GroupwiseTensor) -> LabelMap {
    decode_visible_with_stats(tensor).0
}

pub fn decode_occluded(tensor: &GroupwiseTensor) -> LabelMap {
    let scheme = tensor.scheme();
    tensor.map_pixels(|v| decode_occluded_pixel(scheme, v))
}

/// Class present in group `k` per pixel, [`IGNORE`] where the group is absent.
pub fn decode_group(tensor: &GroupwiseTensor, k: usize) -> Result<LabelMap> {
    let scheme = tensor.scheme();
    if k >= scheme.num_groups() {
        return Err(Error::InvalidGroup {
            index: k,
            groups: scheme.num_groups(),
        });
    }
    Ok(tensor.map_pixels(|v| decode_group_pixel(scheme, v, k)))
}

pub fn decode_mask(tensor: &GroupwiseTensor) -> AmodalMask {
    AmodalMask {
        visible: decode_visible(tensor),
        occluded: decode_occluded(tensor),
    }
}

/// Magic bytes of the tensor file format.
pub const TENSOR_MAGIC: [u8; 4] = *b"AGWT";

/// Writes `tensor` as a 16-byte header (magic, `H`, `W`, `L` as `u32` LE)
/// followed by `H·W·L` little-endian `f32` values in row-major order.
pub fn write_tensor<W: Write>(mut out: W, tensor: &GroupwiseTensor) -> Result<()> {
    let (h, w) = tensor.dims();
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(&TENSOR_MAGIC);
    header[4..8].copy_from_slice(&(h as u32).to_le_bytes());
    header[8..12].copy_from_slice(&(w as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(tensor.vector_len() as u32).to_le_bytes());
    out.write_all(&header)?;
    let mut body = Vec::with_capacity(tensor.data.len() * 4);
    for v in &tensor.data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R, scheme: &GroupingScheme) -> Result<GroupwiseTensor> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::InvalidTensor("truncated header".into()))?;
    if header[..4] != TENSOR_MAGIC {
        return Err(Error::InvalidTensor("bad magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, l) = (field(4), field(8), field(12));
    if l != scheme.vector_len() {
        return Err(Error::InvalidTensor(format!(
            "vector length {l} does not match scheme '{}' (L = {})",
            scheme.name(),
            scheme.vector_len()
        )));
    }
    let mut body = Vec::with_capacity(h * w * l * 4);
    input.read_to_end(&mut body)?;
    if body.len() != h * w * l * 4 {
        return Err(Error::InvalidTensor(format!(
            "expected {} bytes of data, found {}",
            h * w * l * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    GroupwiseTensor::from_vec(h, w, scheme.clone(), data)
}

pub fn save_tensor(path: &Path, tensor: &GroupwiseTensor) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    write_tensor(file, tensor)
}

pub fn load_tensor(path: &Path, scheme: &GroupingScheme) -> Result<GroupwiseTensor> {
    let file = fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    read_tensor(std::io::BufReader::new(file), scheme)
}
