//! Dataset characterization: class frequencies, location priors, and
//! instance counts before and after generation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::InstanceBank;
use crate::cityscapes::AmodalMask;
use crate::compositor::GenerationManifest;
use crate::error::Result;
use crate::labels::{class_name, CLASS_NAMES, INSTANCE_CLASSES, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub visible: [u64; NUM_CLASSES],
    pub occluded: [u64; NUM_CLASSES],
}

impl Default for ClassCounts {
    fn default() -> Self {
        Self {
            visible: [0; NUM_CLASSES],
            occluded: [0; NUM_CLASSES],
        }
    }
}

impl ClassCounts {
    pub fn add(&mut self, mask: &AmodalMask) {
        for &v in mask.visible.as_slice() {
            if let Some(n) = self.visible.get_mut(v as usize) {
                *n += 1;
            }
        }
        for &v in mask.occluded.as_slice() {
            if let Some(n) = self.occluded.get_mut(v as usize) {
                *n += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        for c in 0..NUM_CLASSES {
            self.visible[c] += other.visible[c];
            self.occluded[c] += other.occluded[c];
        }
    }

    pub fn table(&self) -> ClassFrequencyTable {
        ClassFrequencyTable {
            visible: fractions(&self.visible),
            occluded: fractions(&self.occluded),
            counts: *self,
        }
    }
}

fn fractions(counts: &[u64; NUM_CLASSES]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&n| if total == 0 { 0.0 } else { n as f64 / total as f64 })
        .collect()
}

/// Share of labeled pixels per class, separately for the two channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencyTable {
    /// Sums to 1 over classes when any visible pixel is labeled, else all zero.
    pub visible: Vec<f64>,
    pub occluded: Vec<f64>,
    pub counts: ClassCounts,
}

pub fn class_frequencies<'a, I>(frames: I) -> ClassFrequencyTable
where
    I: IntoIterator<Item = &'a AmodalMask>,
{
    let mut counts = ClassCounts::default();
    for m in frames {
        counts.add(m);
    }
    counts.table()
}

/// Occurrence counts of one class over a coarse grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPriorAccumulator {
    pub class: u8,
    pub downsample: usize,
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl LocationPriorAccumulator {
    /// Grid for frames of `dims` = `(H, W)` at `downsample`× reduction.
    pub fn new(class: u8, dims: (usize, usize), downsample: usize) -> Self {
        let downsample = downsample.max(1);
        let height = dims.0.div_ceil(downsample);
        let width = dims.1.div_ceil(downsample);
        Self {
            class,
            downsample,
            height,
            width,
            counts: vec![0; height * width],
        }
    }

    /// Adds the visible-channel occurrences of one frame. Frames of other
    /// sizes are mapped onto the same grid by scaling coordinates.
    pub fn add(&mut self, mask: &AmodalMask) {
        let (h, w) = mask.dims();
        let native = h.div_ceil(self.downsample) == self.height
            && w.div_ceil(self.downsample) == self.width;
        for r in 0..h {
            for (c, &v) in mask.visible.row(r).iter().enumerate() {
                if v != self.class {
                    continue;
                }
                let (rr, cc) = if native {
                    (r / self.downsample, c / self.downsample)
                } else {
                    (r * self.height / h, c * self.width / w)
                };
                self.counts[rr * self.width + cc] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &LocationPriorAccumulator) {
        assert_eq!((self.height, self.width), (other.height, other.width));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn finish(&self) -> LocationPrior {
        let occurrences: u64 = self.counts.iter().sum();
        let density = self
            .counts
            .iter()
            .map(|&n| {
                if occurrences == 0 {
                    0.0
                } else {
                    n as f64 / occurrences as f64
                }
            })
            .collect();
        LocationPrior {
            class: self.class,
            height: self.height,
            width: self.width,
            downsample: self.downsample,
            occurrences,
            never_occurs: occurrences == 0,
            density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPrior {
    pub class: u8,
    pub height: usize,
    pub width: usize,
    pub downsample: usize,
    pub occurrences: u64,
    /// The class never appeared; `density` is all zero.
    pub never_occurs: bool,
    /// Row-major, sums to 1 unless `never_occurs`.
    pub density: Vec<f64>,
}

impl LocationPrior {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.density[row * self.width + col]
    }
}

/// Location prior of `class` with `downsample`× grid reduction. Returns
/// `None` for an empty frame iterator.
pub fn location_prior<'a, I>(frames: I, class: u8, downsample: usize) -> Option<LocationPrior>
where
    I: IntoIterator<Item = &'a AmodalMask>,
{
    let mut acc: Option<LocationPriorAccumulator> = None;
    for m in frames {
        acc.get_or_insert_with(|| LocationPriorAccumulator::new(class, m.dims(), downsample))
            .add(m);
    }
    acc.map(|a| a.finish())
}

/// `Σ min(a_i, b_i)` of two densities on the same grid.
pub fn histogram_intersection(a: &LocationPrior, b: &LocationPrior) -> Option<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return None;
    }
    Some(a.density.iter().zip(&b.density).map(|(x, y)| x.min(*y)).sum())
}

/// Ranks with ties sharing their average rank (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub class: u8,
    pub name: String,
    pub original: u64,
    pub original_share: f64,
    pub generated: u64,
    pub generated_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCensus {
    pub rows: Vec<CensusRow>,
    pub original_total: u64,
    pub generated_total: u64,
}

/// Instance counts per occluder class in the source split (all annotated
/// instances, before the size filter) and after adding every recorded paste.
pub fn instance_census<'a, I>(bank: &InstanceBank, manifests: I) -> InstanceCensus
where
    I: IntoIterator<Item = &'a GenerationManifest>,
{
    let original = bank.counts().seen_per_class;
    let mut generated = original;
    for m in manifests {
        for p in &m.pastes {
            generated[p.class_id as usize] += 1;
        }
    }
    let original_total: u64 = INSTANCE_CLASSES.iter().map(|&c| original[c as usize]).sum();
    let generated_total: u64 = INSTANCE_CLASSES.iter().map(|&c| generated[c as usize]).sum();
    let share = |n: u64, total: u64| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    let rows = INSTANCE_CLASSES
        .iter()
        .map(|&c| CensusRow {
            class: c,
            name: class_name(c).to_owned(),
            original: original[c as usize],
            original_share: share(original[c as usize], original_total),
            generated: generated[c as usize],
            generated_share: share(generated[c as usize], generated_total),
        })
        .collect();
    InstanceCensus {
        rows,
        original_total,
        generated_total,
    }
}

pub fn write_frequency_csv(
    path: &Path,
    generated: &ClassFrequencyTable,
    original: Option<&ClassFrequencyTable>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["class_id", "class", "visible", "occluded"];
    if original.is_some() {
        header.push("original_visible");
    }
    w.write_record(&header)?;
    for c in 0..NUM_CLASSES {
        let mut rec = vec![
            c.to_string(),
            CLASS_NAMES[c].to_owned(),
            generated.visible[c].to_string(),
            generated.occluded[c].to_string(),
        ];
        if let Some(o) = original {
            rec.push(o.visible[c].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_census_csv(path: &Path, census: &InstanceCensus) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class_id", "class", "original", "original_share", "generated", "generated_share"])?;
    for row in &census.rows {
        w.write_record([
            row.class.to_string(),
            row.name.clone(),
            row.original.to_string(),
            row.original_share.to_string(),
            row.generated.to_string(),
            row.generated_share.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grouped bar chart of per-class pixel shares (log scale), one series per table.
pub fn frequency_svg(series: &[(&str, &[f64], &str)]) -> String {
    let bar = 6.0;
    let group = bar * series.len() as f64 + 8.0;
    let (left, top, plot_h) = (50.0, 20.0, 220.0);
    let width = left + group * NUM_CLASSES as f64 + 20.0;
    let height = top + plot_h + 110.0;
    // log10 scale from 1e-5 to 1
    let y = |v: f64| {
        let lv = v.max(1e-5).log10();
        top + plot_h * (-lv / 5.0)
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    for e in 0..=5 {
        let yy = top + plot_h * e as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{left}" y1="{yy}" x2="{}" y2="{yy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">1e-{e}</text>"##,
            width - 20.0,
            left - 4.0,
            yy + 3.0
        )
        .unwrap();
    }
    for c in 0..NUM_CLASSES {
        let x0 = left + group * c as f64 + 4.0;
        for (i, (_, values, color)) in series.iter().enumerate() {
            let v = values.get(c).copied().unwrap_or(0.0);
            if v <= 0.0 {
                continue;
            }
            let yy = y(v);
            writeln!(
                s,
                r#"<rect x="{:.1}" y="{yy:.2}" width="{bar}" height="{:.2}" fill="{color}"/>"#,
                x0 + bar * i as f64,
                top + plot_h - yy
            )
            .unwrap();
        }
        let tx = x0 + bar * series.len() as f64 / 2.0;
        let ty = top + plot_h + 8.0;
        writeln!(
            s,
            r#"<text x="{tx:.1}" y="{ty}" transform="rotate(60 {tx:.1} {ty})">{}</text>"#,
            CLASS_NAMES[c]
        )
        .unwrap();
    }
    for (i, (label, _, color)) in series.iter().enumerate() {
        let lx = left + 10.0 + 110.0 * i as f64;
        writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{label}</text>"#,
            height - 20.0,
            lx + 14.0,
            height - 11.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Heatmap of a location prior, one rect per grid cell, normalized to its maximum.
pub fn prior_svg(prior: &LocationPrior) -> String {
    let cell = 4.0;
    let max = prior.density.iter().copied().fold(0.0, f64::max);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">"#,
        prior.width as f64 * cell,
        prior.height as f64 * cell
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="rgb(0,0,0)"/>"#).unwrap();
    for r in 0..prior.height {
        for c in 0..prior.width {
            let v = prior.at(r, c);
            if v <= 0.0 {
                continue;
            }
            let t = (v / max).clamp(0.0, 1.0);
            let red = (255.0 * t.sqrt()).round() as u8;
            let green = (255.0 * t).round() as u8;
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({red},{green},0)"/>"#,
                c as f64 * cell,
                r as f64 * cell
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
