//! Amodal segmentation metrics: mIoU on visible labels, on occluded labels
//! inside pasted regions, and a total mIoU over both channels jointly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cityscapes::AmodalMask;
use crate::error::{Error, Result};
use crate::labels::{CLASS_NAMES, IGNORE, NUM_CLASSES};
use crate::raster::BinaryMask;

/// Per-class TP/FP/FN counters of one metric variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounters {
    pub tp: [u64; NUM_CLASSES],
    pub fp: [u64; NUM_CLASSES],
    #[serde(rename = "fn")]
    pub fn_: [u64; NUM_CLASSES],
    /// Pixels that contributed to this variant.
    pub pixels: u64,
}

impl Default for ClassCounters {
    fn default() -> Self {
        Self {
            tp: [0; NUM_CLASSES],
            fp: [0; NUM_CLASSES],
            fn_: [0; NUM_CLASSES],
            pixels: 0,
        }
    }
}

impl ClassCounters {
    /// Single-label counting: `gt` is valid (not void), `pred` may be anything.
    #[inline]
    fn add_pair(&mut self, gt: u8, pred: u8) {
        if gt == pred {
            self.tp[gt as usize] += 1;
        } else {
            self.fn_[gt as usize] += 1;
            if (pred as usize) < NUM_CLASSES {
                self.fp[pred as usize] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ClassCounters) {
        for c in 0..NUM_CLASSES {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        self.pixels += other.pixels;
    }

    pub fn iou(&self, class: usize) -> Option<f64> {
        let denom = self.tp[class] + self.fp[class] + self.fn_[class];
        (denom > 0).then(|| self.tp[class] as f64 / denom as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    pub visible: ClassCounters,
    pub invisible: ClassCounters,
    pub total: ClassCounters,
}

fn check_dims(gt: &AmodalMask, pred: &AmodalMask) -> Result<()> {
    if gt.dims() != pred.dims() {
        return Err(Error::Eval(format!(
            "prediction {:?} and ground truth {:?} differ in size",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

impl ConfusionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Standard IoU counting on the visible channels, skipping void ground truth.
    pub fn accumulate_visible(&mut self, gt: &AmodalMask, pred: &AmodalMask) -> Result<()> {
        check_dims(gt, pred)?;
        for (&g, &p) in gt.visible.as_slice().iter().zip(pred.visible.as_slice()) {
            if g == IGNORE {
                continue;
            }
            self.visible.pixels += 1;
            self.visible.add_pair(g, p);
        }
        Ok(())
    }

    /// IoU counting on the occluded channels inside `region`, skipping pixels
    /// without an occluded ground-truth label.
    pub fn accumulate_invisible(
        &mut self,
        gt: &AmodalMask,
        pred: &AmodalMask,
        region: &BinaryMask,
    ) -> Result<()> {
        check_dims(gt, pred)?;
        if region.dims() != gt.dims() {
            return Err(Error::Eval(format!(
                "occluder region {:?} does not match frame {:?}",
                region.dims(),
                gt.dims()
            )));
        }
        let pixels = gt
            .occluded
            .as_slice()
            .iter()
            .zip(pred.occluded.as_slice())
            .zip(region.as_slice());
        for ((&g, &p), &inside) in pixels {
            if !inside || g == IGNORE {
                continue;
            }
            self.invisible.pixels += 1;
            self.invisible.add_pair(g, p);
        }
        Ok(())
    }

    /// Joint counting over both channels.
    ///
    /// For class `s`, a pixel is a TP if either channel has `gt = pred = s`,
    /// an FP if either channel has `gt ≠ s = pred`, and an FN if either channel
    /// has `gt = s ≠ pred`. A channel whose ground truth is void takes no part.
    /// One pixel may count towards several classes.
    pub fn accumulate_total(&mut self, gt: &AmodalMask, pred: &AmodalMask) -> Result<()> {
        check_dims(gt, pred)?;
        let n = gt.visible.len();
        let (gv, go) = (gt.visible.as_slice(), gt.occluded.as_slice());
        let (pv, po) = (pred.visible.as_slice(), pred.occluded.as_slice());
        for i in 0..n {
            let ch = [(gv[i], pv[i]), (go[i], po[i])];
            if ch.iter().all(|&(g, _)| g == IGNORE) {
                continue;
            }
            self.total.pixels += 1;
            // only classes named somewhere on this pixel can satisfy a predicate
            let mut classes = [IGNORE; 4];
            let mut n_classes = 0;
            for &(g, p) in &ch {
                if g == IGNORE {
                    continue;
                }
                for s in [g, p] {
                    if (s as usize) < NUM_CLASSES && !classes[..n_classes].contains(&s) {
                        classes[n_classes] = s;
                        n_classes += 1;
                    }
                }
            }
            for &s in &classes[..n_classes] {
                let mut tp = false;
                let mut fp = false;
                let mut fn_ = false;
                for &(g, p) in &ch {
                    if g == IGNORE {
                        continue;
                    }
                    tp |= g == s && p == s;
                    fp |= g != s && p == s;
                    fn_ |= g == s && p != s;
                }
                let s = s as usize;
                self.total.tp[s] += u64::from(tp);
                self.total.fp[s] += u64::from(fp);
                self.total.fn_[s] += u64::from(fn_);
            }
        }
        Ok(())
    }

    /// All three variants for one frame.
    pub fn accumulate_frame(
        &mut self,
        gt: &AmodalMask,
        pred: &AmodalMask,
        region: &BinaryMask,
    ) -> Result<()> {
        self.accumulate_visible(gt, pred)?;
        self.accumulate_invisible(gt, pred, region)?;
        self.accumulate_total(gt, pred)
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        self.visible.merge(&other.visible);
        self.invisible.merge(&other.invisible);
        self.total.merge(&other.total);
    }

    pub fn merged(mut self, other: ConfusionAccumulator) -> Self {
        self.merge(&other);
        self
    }
}

/// How per-class IoUs are averaged into a mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// Average over classes with a nonzero denominator.
    #[default]
    Present,
    /// Average over all 19 classes, absent classes counting as 0.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    /// Per-class IoU, `None` where the class never occurs in gt or prediction.
    pub iou: Vec<Option<f64>>,
    /// `None` when no pixel was evaluated.
    pub miou: Option<f64>,
    pub pixels: u64,
    /// Classes left out of the mean for a zero denominator.
    pub excluded_classes: Vec<u8>,
}

impl VariantReport {
    fn from_counters(c: &ClassCounters, mode: MeanMode) -> Self {
        let iou: Vec<Option<f64>> = (0..NUM_CLASSES).map(|s| c.iou(s)).collect();
        let excluded_classes = (0..NUM_CLASSES as u8)
            .filter(|&s| iou[s as usize].is_none())
            .collect();
        let miou = if c.pixels == 0 {
            None
        } else {
            match mode {
                MeanMode::Present => {
                    let present: Vec<f64> = iou.iter().flatten().copied().collect();
                    (!present.is_empty())
                        .then(|| present.iter().sum::<f64>() / present.len() as f64)
                }
                MeanMode::Strict => Some(
                    iou.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / NUM_CLASSES as f64,
                ),
            }
        };
        Self {
            iou,
            miou,
            pixels: c.pixels,
            excluded_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_mode: MeanMode,
    pub visible: VariantReport,
    pub invisible: VariantReport,
    pub total: VariantReport,
}

pub fn finalize(acc: &ConfusionAccumulator, mode: MeanMode) -> EvalReport {
    EvalReport {
        mean_mode: mode,
        visible: VariantReport::from_counters(&acc.visible, mode),
        invisible: VariantReport::from_counters(&acc.invisible, mode),
        total: VariantReport::from_counters(&acc.total, mode),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}%", 100.0 * x))
        .unwrap_or_else(|| "n/a".to_owned())
}

impl EvalReport {
    pub fn miou_visible(&self) -> Option<f64> {
        self.visible.miou
    }

    pub fn miou_invisible(&self) -> Option<f64> {
        self.invisible.miou
    }

    pub fn miou_total(&self) -> Option<f64> {
        self.total.miou
    }

    /// Plain-text summary: headline mIoUs, then one row per class.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<16} {:>10} {:>10} {:>10}", "", "mIoU", "mIoU^inv", "mIoU^total").unwrap();
        writeln!(
            s,
            "{:<16} {:>10} {:>10} {:>10}",
            "mean",
            pct(self.visible.miou),
            pct(self.invisible.miou),
            pct(self.total.miou)
        )
        .unwrap();
        writeln!(s, "{}", "-".repeat(49)).unwrap();
        for (c, name) in CLASS_NAMES.iter().enumerate() {
            writeln!(
                s,
                "{:<16} {:>10} {:>10} {:>10}",
                name,
                pct(self.visible.iou[c]),
                pct(self.invisible.iou[c]),
                pct(self.total.iou[c])
            )
            .unwrap();
        }
        writeln!(
            s,
            "pixels: visible {}, invisible {}, total {} ({} mean)",
            self.visible.pixels,
            self.invisible.pixels,
            self.total.pixels,
            match self.mean_mode {
                MeanMode::Present => "present-class",
                MeanMode::Strict => "strict 1/S",
            }
        )
        .unwrap();
        s
    }
}
