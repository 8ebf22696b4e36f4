//! Gaussian edge blending of pasted occluders.

use crate::bank::InstancePatch;
use crate::error::{Error, Result};
use crate::raster::{dequantize, BinaryMask, Raster, RgbRaster};

/// Square sampled Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    /// Unnormalized row-major `size × size` weights.
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size < 3 || size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "blend kernel size must be odd and >= 3, got {size}"
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "blend sigma must be positive, got {sigma}"
            )));
        }
        let radius = (size / 2) as isize;
        let mut weights = Vec::with_capacity(size * size);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let d2 = (dy * dy + dx * dx) as f64;
                weights.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        Ok(Self {
            size,
            sigma,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Mask convolved with the normalized kernel, zero outside the mask raster.
    ///
    /// Interior pixels whose whole window is set come out as exactly `1.0`:
    /// numerator and denominator are summed over the same weights in the same
    /// order.
    pub fn alpha_map(&self, mask: &BinaryMask) -> Raster<f32> {
        let (h, w) = mask.dims();
        let radius = self.radius() as isize;
        let total: f64 = self.weights.iter().sum();
        Raster::from_fn(h, w, |r, c| {
            let mut acc = 0.0f64;
            let mut k = 0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let rr = r as isize + dy;
                    let cc = c as isize + dx;
                    if rr >= 0
                        && cc >= 0
                        && (rr as usize) < h
                        && (cc as usize) < w
                        && *mask.get(rr as usize, cc as usize)
                    {
                        acc += self.weights[k];
                    } else {
                        acc += 0.0;
                    }
                    k += 1;
                }
            }
            (acc / total).clamp(0.0, 1.0) as f32
        })
    }
}

/// Alpha-blends `patch` into `image` in place with its top-left corner at `(top, left)`.
///
/// The alpha map is the patch mask smoothed by `kernel` and is confined to the
/// patch bounding box: pixels outside it are never touched.
pub fn blend_paste_into(
    image: &mut RgbRaster,
    patch: &InstancePatch,
    top: usize,
    left: usize,
    kernel: &GaussianKernel,
) {
    assert!(top + patch.height() <= image.height() && left + patch.width() <= image.width());
    let alpha = kernel.alpha_map(&patch.mask);
    for r in 0..patch.height() {
        for c in 0..patch.width() {
            let a = *alpha.get(r, c);
            if a <= 0.0 {
                continue;
            }
            let src = patch.rgb.get(r, c);
            let dst = image.get_mut(top + r, left + c);
            for ch in 0..3 {
                dst[ch] = a * dequantize(src[ch]) + (1.0 - a) * dst[ch];
            }
        }
    }
}

pub fn blend_paste(
    image: &RgbRaster,
    patch: &InstancePatch,
    top: usize,
    left: usize,
    kernel: &GaussianKernel,
) -> RgbRaster {
    let mut out = image.clone();
    blend_paste_into(&mut out, patch, top, left, kernel);
    out
}
