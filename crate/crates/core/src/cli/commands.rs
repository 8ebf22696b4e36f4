use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    DecodeArgs, EncodeArgs, EvaluateArgs, ExtractArgs, GenerateArgs, PredFormat, StatsArgs,
    SynthArgs,
};
use crate::bank::{FrameInstances, InstanceBank, InstanceExtractor, SizeFilter};
use crate::cityscapes::{
    load_amodal_mask, load_frame, load_split, read_split_list, write_amodal_frame,
    write_amodal_mask, write_split, AmodalMask, FrameId, SplitSpec,
};
use crate::codec::{self, decode_mask, load_tensor, save_tensor, EncodeStats, GroupingScheme};
use crate::compositor::{compose_frame, occluder_region, GenerationConfig, GenerationManifest};
use crate::error::{Error, Result};
use crate::fixtures::SyntheticDataset;
use crate::labels::{class_name, CLASS_NAMES, INSTANCE_CLASSES, NUM_CLASSES};
use crate::metrics::{finalize, ConfusionAccumulator, MeanMode};
use crate::raster::Raster;
use crate::stats::{
    frequency_svg, histogram_intersection, instance_census, prior_svg, spearman,
    write_census_csv, write_frequency_csv, ClassCounts, ClassFrequencyTable, InstanceCensus,
    LocationPrior, LocationPriorAccumulator,
};

/// `<dir>/<stem>.json`, where `dir` is a run's `manifests/` directory.
pub fn manifest_path(dir: &Path, frame: &FrameId) -> PathBuf {
    dir.join(format!("{}.json", frame.stem()))
}

/// `<dir>/<stem>.agwt`.
pub fn tensor_path(dir: &Path, frame: &FrameId) -> PathBuf {
    dir.join(format!("{}.agwt", frame.stem()))
}

/// Everything needed to rerun `generate` bit-identically, written to
/// `manifests/_run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: GenerationConfig,
    pub split: String,
    pub frames: usize,
    pub bank_patches: usize,
    /// SHA-256 of the bank's `index.jsonl`.
    pub bank_index_sha256: String,
    pub failed_frames: Vec<FrameId>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs `f` over `frames` on a pool of `workers` threads, keeping input order.
fn per_frame<T, F>(workers: usize, frames: &[FrameId], f: F) -> Result<Vec<(FrameId, Result<T>)>>
where
    T: Send,
    F: Fn(&FrameId) -> Result<T> + Sync,
{
    Ok(pool(workers)?.install(|| {
        frames
            .par_iter()
            .map(|id| (id.clone(), f(id)))
            .collect()
    }))
}

type Partitioned<T> = (Vec<(FrameId, T)>, Vec<(FrameId, Error)>);

/// Splits per-frame results into successes and failures, reporting each failure.
fn partition<T>(results: Vec<(FrameId, Result<T>)>) -> Partitioned<T> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => {
                log::error!("{id}: {e}");
                failed.push((id, e));
            }
        }
    }
    (ok, failed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<GenerationManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(super) fn extract(a: &ExtractArgs) -> Result<usize> {
    let (name, frames) = read_split_list(&a.split)?;
    if !frames.is_empty() {
        SplitSpec::new(name, frames.clone())?;
    }
    let filter = SizeFilter {
        min_width: a.min_width,
        min_height: a.min_height,
    };
    let extractor = InstanceExtractor::new(filter);
    let results = per_frame(a.workers, &frames, |id| {
        load_frame(&a.root, id).map(|f| extractor.extract(&f))
    })?;
    let (ok, failed) = partition(results);
    if !failed.is_empty() {
        return Ok(failed.len());
    }
    let extractions: Vec<FrameInstances> = ok.into_iter().map(|(_, x)| x).collect();
    let bank = InstanceBank::from_extractions(filter, extractions)?;
    bank.save(&a.bank)?;

    let counts = bank.counts();
    println!("frames: {}", bank.frames().len());
    println!("instances: {}", counts.seen());
    println!(
        "patches kept (width >= {}, height >= {}): {}",
        filter.min_width,
        filter.min_height,
        counts.kept()
    );
    for c in INSTANCE_CLASSES {
        println!(
            "  {:<12} {:>8} {:>8}",
            class_name(c),
            counts.seen_per_class[c as usize],
            counts.kept_per_class[c as usize]
        );
    }
    Ok(0)
}

pub(super) fn generate(a: &GenerateArgs) -> Result<usize> {
    let split = load_split(&a.split)?;
    let bank = InstanceBank::load(&a.bank)?;
    let master_seed = a.seed.unwrap_or_else(rand::random);
    let cfg = GenerationConfig {
        max_occlusion_ratio: a.max_occlusion_ratio,
        blend_kernel: a.blend_kernel,
        blend_sigma: a.blend_sigma,
        max_place_attempts: a.max_place_attempts,
        max_patch_redraws: a.max_patch_redraws,
        master_seed,
    };
    cfg.validate()?;
    let index = a.bank.join("index.jsonl");
    let index_digest = hex(&Sha256::digest(
        fs::read(&index).map_err(|e| Error::io_at(&index, e))?,
    ));
    if a.seed.is_none() {
        eprintln!("master seed: {master_seed}");
    }

    let manifests = a.out.join("manifests");
    fs::create_dir_all(&manifests)?;
    let results = per_frame(a.workers, &split.target_frames, |id| {
        let target = load_frame(&a.root, id)?;
        let comp = compose_frame(&target, &bank, &cfg)?;
        write_amodal_frame(&a.out, id, &comp.image, &comp.mask)?;
        write_json(&manifest_path(&manifests, id), &comp.manifest)?;
        Ok(comp.manifest)
    })?;
    let (ok, failed) = partition(results);

    write_split(&a.out, &split)?;
    write_json(
        &manifests.join("_run.json"),
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: cfg,
            split: split.name.clone(),
            frames: split.len(),
            bank_patches: bank.len(),
            bank_index_sha256: index_digest,
            failed_frames: failed.iter().map(|(id, _)| id.clone()).collect(),
        },
    )?;
    let error_log = a.out.join("errors.log");
    if failed.is_empty() {
        if error_log.exists() {
            fs::remove_file(&error_log)?;
        }
    } else {
        let text: String = failed.iter().map(|(id, e)| format!("{id}\t{e}\n")).collect();
        fs::write(&error_log, text)?;
    }

    let pastes: usize = ok.iter().map(|(_, m)| m.num_occluders()).sum();
    let warnings = ok.iter().filter(|(_, m)| m.warning.is_some()).count();
    let mean_ratio = if ok.is_empty() {
        0.0
    } else {
        ok.iter().map(|(_, m)| m.achieved_ratio).sum::<f64>() / ok.len() as f64
    };
    println!("frames generated: {}", ok.len());
    println!("occluders pasted: {pastes}");
    println!("mean occlusion ratio: {mean_ratio:.4}");
    if warnings > 0 {
        println!("frames with placement warnings: {warnings}");
    }
    Ok(failed.len())
}

pub(super) fn evaluate(a: &EvaluateArgs) -> Result<usize> {
    let split = load_split(&a.split)?;
    let scheme = match a.format {
        PredFormat::Tensor => Some(GroupingScheme::from_name_or_path(&a.scheme)?),
        PredFormat::Png => None,
    };
    let bank = a.bank.as_deref().map(InstanceBank::load).transpose()?;
    let manifests = a
        .manifests
        .clone()
        .unwrap_or_else(|| a.root.join("manifests"));
    let mode = if a.strict_mean {
        MeanMode::Strict
    } else {
        MeanMode::Present
    };

    let results = per_frame(a.workers, &split.target_frames, |id| {
        let gt = load_amodal_mask(&a.root, id)?;
        let pred = match &scheme {
            Some(s) => decode_mask(&load_tensor(&tensor_path(&a.pred, id), s)?),
            None => load_amodal_mask(&a.pred, id)?,
        };
        let (h, w) = gt.dims();
        let region = match &bank {
            Some(b) => occluder_region(&read_manifest(&manifest_path(&manifests, id))?, b, (h, w))?,
            None => Raster::filled(h, w, true),
        };
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate_frame(&gt, &pred, &region)?;
        Ok(acc)
    })?;
    let (ok, failed) = partition(results);
    if !failed.is_empty() {
        return Ok(failed.len());
    }
    let acc = ok
        .into_iter()
        .fold(ConfusionAccumulator::new(), |a, (_, b)| a.merged(b));
    let report = finalize(&acc, mode);
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    let summary = report.summary();
    fs::write(a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(0)
}

fn parse_class(s: &str) -> Result<u8> {
    let s = s.trim();
    if let Ok(id) = s.parse::<u8>() {
        if (id as usize) < NUM_CLASSES {
            return Ok(id);
        }
    }
    CLASS_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(s))
        .map(|i| i as u8)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown class '{s}'")))
}

#[derive(Debug, Clone)]
struct SplitStats {
    counts: ClassCounts,
    priors: Vec<LocationPriorAccumulator>,
}

impl SplitStats {
    fn merged(mut self, other: SplitStats) -> Self {
        self.counts.merge(&other.counts);
        for (a, b) in self.priors.iter_mut().zip(&other.priors) {
            a.merge(b);
        }
        self
    }
}

/// Map-reduce of class counts and location priors; all priors share the grid
/// of the first frame.
fn split_stats<F>(
    workers: usize,
    frames: &[FrameId],
    classes: &[u8],
    downsample: usize,
    load: F,
) -> Result<(Option<SplitStats>, usize)>
where
    F: Fn(&FrameId) -> Result<AmodalMask> + Sync,
{
    let Some(first) = frames.first() else {
        return Ok((None, 0));
    };
    let dims = load(first)?.dims();
    let empty = SplitStats {
        counts: ClassCounts::default(),
        priors: classes
            .iter()
            .map(|&c| LocationPriorAccumulator::new(c, dims, downsample))
            .collect(),
    };
    let results = per_frame(workers, frames, |id| {
        let mask = load(id)?;
        let mut s = empty.clone();
        s.counts.add(&mask);
        for p in &mut s.priors {
            p.add(&mask);
        }
        Ok(s)
    })?;
    let (ok, failed) = partition(results);
    let total = ok.into_iter().fold(empty.clone(), |a, (_, b)| a.merged(b));
    Ok((Some(total), failed.len()))
}

#[derive(Debug, Clone, Serialize)]
struct PriorReport {
    class: u8,
    name: String,
    generated: LocationPrior,
    #[serde(skip_serializing_if = "Option::is_none")]
    original: Option<LocationPrior>,
    /// Histogram intersection of the generated and original densities.
    #[serde(skip_serializing_if = "Option::is_none")]
    intersection: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct StatsReport {
    frames: usize,
    frequencies: ClassFrequencyTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    original_frequencies: Option<ClassFrequencyTable>,
    /// Spearman correlation of generated and original visible-class frequencies.
    #[serde(skip_serializing_if = "Option::is_none")]
    visible_rank_correlation: Option<f64>,
    priors: Vec<PriorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    census: Option<InstanceCensus>,
}

pub(super) fn stats(a: &StatsArgs) -> Result<usize> {
    let split = load_split(&a.split)?;
    let classes = a
        .prior_class
        .iter()
        .map(|s| parse_class(s))
        .collect::<Result<Vec<_>>>()?;
    let downsample = if a.full_res { 1 } else { a.downsample.max(1) };
    let frames = &split.target_frames;

    let (generated, mut failed) = split_stats(a.workers, frames, &classes, downsample, |id| {
        load_amodal_mask(&a.root, id)
    })?;
    let generated = generated.expect("split is nonempty");
    let original = match &a.original_root {
        Some(root) => {
            let (s, f) = split_stats(a.workers, frames, &classes, downsample, |id| {
                load_frame(root, id).map(|fr| AmodalMask::unoccluded(fr.semantic))
            })?;
            failed += f;
            s
        }
        None => None,
    };
    let census = match &a.bank {
        Some(dir) => {
            let bank = InstanceBank::load(dir)?;
            let mdir = a.root.join("manifests");
            let results = per_frame(a.workers, frames, |id| read_manifest(&manifest_path(&mdir, id)))?;
            let (ok, f) = partition(results);
            failed += f.len();
            let manifests: Vec<GenerationManifest> = ok.into_iter().map(|(_, m)| m).collect();
            Some(instance_census(&bank, &manifests))
        }
        None => None,
    };

    let freq = generated.counts.table();
    let orig_freq = original.as_ref().map(|o| o.counts.table());
    let rank_corr = orig_freq
        .as_ref()
        .and_then(|o| spearman(&freq.visible, &o.visible));
    let priors: Vec<PriorReport> = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let g = generated.priors[i].finish();
            let o = original.as_ref().map(|o| o.priors[i].finish());
            let intersection = o.as_ref().and_then(|o| histogram_intersection(&g, o));
            PriorReport {
                class: c,
                name: class_name(c).to_owned(),
                generated: g,
                original: o,
                intersection,
            }
        })
        .collect();

    fs::create_dir_all(&a.out)?;
    write_frequency_csv(&a.out.join("class_frequencies.csv"), &freq, orig_freq.as_ref())?;
    let mut series: Vec<(&str, &[f64], &str)> = vec![
        ("visible", &freq.visible, "#2ca02c"),
        ("occluded", &freq.occluded, "#d62728"),
    ];
    if let Some(o) = &orig_freq {
        series.push(("original visible", &o.visible, "#7f7f7f"));
    }
    fs::write(a.out.join("class_frequencies.svg"), frequency_svg(&series))?;
    for p in &priors {
        let name = p.name.replace(' ', "_");
        fs::write(a.out.join(format!("prior_{name}.svg")), prior_svg(&p.generated))?;
        if let Some(o) = &p.original {
            fs::write(a.out.join(format!("prior_{name}_original.svg")), prior_svg(o))?;
        }
    }
    if let Some(c) = &census {
        write_census_csv(&a.out.join("census.csv"), c)?;
    }

    println!("frames: {}", frames.len());
    if let Some(r) = rank_corr {
        println!("visible frequency rank correlation: {r:.4}");
    }
    for p in &priors {
        if let Some(x) = p.intersection {
            println!("{} prior intersection: {x:.4}", p.name);
        }
    }
    if let Some(c) = &census {
        println!("instances: {} original, {} after generation", c.original_total, c.generated_total);
    }
    write_json(
        &a.out.join("stats.json"),
        &StatsReport {
            frames: frames.len(),
            frequencies: freq,
            original_frequencies: orig_freq,
            visible_rank_correlation: rank_corr,
            priors,
            census,
        },
    )?;
    Ok(failed)
}

pub(super) fn encode(a: &EncodeArgs) -> Result<usize> {
    let split = load_split(&a.split)?;
    let scheme = GroupingScheme::from_name_or_path(&a.scheme)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("scheme.json"), scheme.to_json() + "\n")?;
    let results = per_frame(a.workers, &split.target_frames, |id| {
        let mask = load_amodal_mask(&a.root, id)?;
        let (tensor, st) = codec::encode(&mask, &scheme);
        save_tensor(&tensor_path(&a.out, id), &tensor)?;
        Ok(st)
    })?;
    let (ok, failed) = partition(results);
    let total = ok.iter().fold(EncodeStats::default(), |acc, (_, s)| EncodeStats {
        invalid_pixels: acc.invalid_pixels + s.invalid_pixels,
        same_group_dropped: acc.same_group_dropped + s.same_group_dropped,
    });
    println!(
        "encoded {} frame(s), scheme {} (K={}, L={})",
        ok.len(),
        scheme.name(),
        scheme.num_groups(),
        scheme.vector_len()
    );
    println!("void visible pixels: {}", total.invalid_pixels);
    println!("occluded labels dropped (same group): {}", total.same_group_dropped);
    Ok(failed.len())
}

pub(super) fn decode(a: &DecodeArgs) -> Result<usize> {
    let split = load_split(&a.split)?;
    let scheme = GroupingScheme::from_name_or_path(&a.scheme)?;
    let results = per_frame(a.workers, &split.target_frames, |id| {
        let tensor = load_tensor(&tensor_path(&a.root, id), &scheme)?;
        write_amodal_mask(&a.out, id, &decode_mask(&tensor))
    })?;
    let (ok, failed) = partition(results);
    write_split(&a.out, &split)?;
    println!("decoded {} frame(s)", ok.len());
    Ok(failed.len())
}

pub(super) fn synth(a: &SynthArgs) -> Result<usize> {
    let ds = SyntheticDataset::new(a.frames, a.seed).with_size(a.height, a.width);
    let ids = ds.write(&a.out, &a.subset)?;
    let split = SplitSpec::new(a.subset.clone(), ids)?;
    let list = write_split(&a.out, &split)?;
    println!("wrote {} frame(s); split list {}", split.len(), list.display());
    Ok(0)
}
