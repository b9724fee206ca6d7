use fiqa_nn::Tensor;
use image::RgbImage;

use super::{DataError, ManifestEntry};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// A standardized `[3, H, W]` network input.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedImage {
    pub pixels: Tensor,
    pub source_id: String,
}

impl PreprocessedImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Decode `entry.path`, resize to `(height, width)` and standardize.
pub fn load_and_preprocess(
    entry: &ManifestEntry,
    target: (usize, usize),
) -> Result<PreprocessedImage, DataError> {
    let decoded = image::open(&entry.path).map_err(|e| DataError::DecodeFailure {
        image_id: entry.image_id.clone(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(DataError::ZeroAreaImage(entry.image_id.clone()));
    }
    Ok(PreprocessedImage {
        pixels: preprocess_rgb(&rgb, target),
        source_id: entry.image_id.clone(),
    })
}

/// Bilinear resize (no aspect preservation, no antialiasing), scale to
/// [0, 1], then subtract the ImageNet channel mean and divide by its std.
/// Returns `[3, height, width]`.
pub fn preprocess_rgb(img: &RgbImage, (height, width): (usize, usize)) -> Tensor {
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    let plane = iw * ih;
    let mut planar = vec![0.0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planar[c * plane + i] = px[c] as f32;
        }
    }
    let mut out = resize_bilinear(&planar, 3, (ih, iw), (height, width));
    let out_plane = height * width;
    for c in 0..3 {
        let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
        for v in &mut out[c * out_plane..(c + 1) * out_plane] {
            *v = (*v / 255.0 - m) / s;
        }
    }
    Tensor::from_vec(&[3, height, width], out)
}

/// Source coordinate and blend weight for output index `dst` using
/// half-pixel centres, clamped at the near edge.
fn source_index(dst: usize, scale: f64, len_in: usize) -> (usize, usize, f32) {
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(len_in - 1);
    let i1 = (i0 + 1).min(len_in - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Resize planar `[channels, h, w]` data.
pub fn resize_bilinear(
    src: &[f32],
    channels: usize,
    (ih, iw): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f32> {
    assert_eq!(src.len(), channels * ih * iw);
    let ys: Vec<_> = (0..oh).map(|y| source_index(y, ih as f64 / oh as f64, ih)).collect();
    let xs: Vec<_> = (0..ow).map(|x| source_index(x, iw as f64 / ow as f64, iw)).collect();
    let mut out = vec![0.0f32; channels * oh * ow];
    for c in 0..channels {
        let s = &src[c * ih * iw..(c + 1) * ih * iw];
        let o = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for (y, &(y0, y1, ly)) in ys.iter().enumerate() {
            let (r0, r1) = (&s[y0 * iw..(y0 + 1) * iw], &s[y1 * iw..(y1 + 1) * iw]);
            for (x, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * lx;
                o[y * ow + x] = top + (bottom - top) * ly;
            }
        }
    }
    out
}
