use crate::error::{Error, Result};
use crate::geo::TILE_PIXELS;

/// Spatial side of the final feature maps.
pub const CAM_SIZE: usize = 15;

/// `C × 15 × 15` activations, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapTensor {
    channels: usize,
    values: Vec<f32>,
}

impl FeatureMapTensor {
    pub fn new(channels: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Domain("feature map needs at least one channel".into()));
        }
        let expected = channels * CAM_SIZE * CAM_SIZE;
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: values.len(),
            });
        }
        Ok(FeatureMapTensor { channels, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = CAM_SIZE * CAM_SIZE;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Fully connected weights of the positive class, one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights(pub Vec<f32>);

impl ClassifierWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    /// 15×15 ReLU-clamped weighted sum, row-major.
    pub raw: Vec<f32>,
    /// 500×500 bilinear upsample of `raw`, scaled so the maximum is 1.
    pub upsampled: Vec<f32>,
}

impl Cam {
    /// 8-bit grayscale quantization of the upsampled map.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        self.upsampled
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

pub fn compute_cam(features: &FeatureMapTensor, weights: &ClassifierWeights) -> Result<Cam> {
    if weights.len() != features.channels() {
        return Err(Error::Dimension {
            expected: features.channels(),
            actual: weights.len(),
        });
    }
    let n = CAM_SIZE * CAM_SIZE;
    let mut acc = vec![0f64; n];
    for (c, &w) in weights.0.iter().enumerate() {
        for (a, &f) in acc.iter_mut().zip(features.channel(c)) {
            *a += f64::from(w) * f64::from(f);
        }
    }
    let raw: Vec<f32> = acc.into_iter().map(|v| v.max(0.0) as f32).collect();

    let mut upsampled = bilinear_upsample(&raw, CAM_SIZE, TILE_PIXELS as usize);
    let max = upsampled.iter().copied().fold(0f32, f32::max);
    if max > 0.0 {
        upsampled.iter_mut().for_each(|v| *v /= max);
    } else {
        upsampled.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Cam { raw, upsampled })
}

/// Resizes a square row-major map from `src` to `dst` pixels per side.
///
/// Output pixel `i` samples the source at `(i + 0.5)·src/dst − 0.5`,
/// clamped to `[0, src − 1]`.
pub fn bilinear_upsample(map: &[f32], src: usize, dst: usize) -> Vec<f32> {
    assert_eq!(map.len(), src * src);
    let scale = src as f64 / dst as f64;
    let samples: Vec<(usize, usize, f64)> = (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect();

    let mut out = Vec::with_capacity(dst * dst);
    for &(y0, y1, fy) in &samples {
        for &(x0, x1, fx) in &samples {
            let at = |y: usize, x: usize| f64::from(map[y * src + x]);
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}
