//! Procedural face-like images whose quality label is a known smooth
//! function of two degradations: Gaussian blur and darkening.

use std::fs;
use std::path::Path;

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, DataError, ManifestEntry};

pub const MAX_BLUR_SIGMA: f32 = 4.0;
pub const MIN_BRIGHTNESS: f32 = 0.35;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 256,
            seed: 0,
            width: 112,
            height: 160,
        }
    }
}

pub struct SynthSample {
    pub image: RgbImage,
    pub blur_sigma: f32,
    pub brightness: f32,
    pub mos: f64,
}

/// Label in [0, 1]: sharpness weighs 0.6, brightness 0.4.
pub fn mos_of(blur_sigma: f32, brightness: f32) -> f64 {
    let sharp = 1.0 - blur_sigma as f64 / MAX_BLUR_SIGMA as f64;
    let bright = (brightness - MIN_BRIGHTNESS) as f64 / (1.0 - MIN_BRIGHTNESS) as f64;
    0.6 * sharp + 0.4 * bright
}

fn inside_ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

/// Image `index` of the set drawn from `seed`. Each index has its own
/// random stream, so samples do not depend on the set size.
pub fn sample(seed: u64, index: u64, width: u32, height: u32) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let blur_sigma = rng.random_range(0.0..=MAX_BLUR_SIGMA);
    let brightness = rng.random_range(MIN_BRIGHTNESS..=1.0);

    let (w, h) = (width as f32, height as f32);
    let bg = [
        rng.random_range(40.0..120.0f32),
        rng.random_range(40.0..120.0f32),
        rng.random_range(40.0..120.0f32),
    ];
    let skin = [
        rng.random_range(170.0..235.0f32),
        rng.random_range(120.0..190.0f32),
        rng.random_range(90.0..160.0f32),
    ];
    let (cx, cy) = (
        w * rng.random_range(0.45..0.55f32),
        h * rng.random_range(0.45..0.55f32),
    );
    let (rx, ry) = (w * rng.random_range(0.28..0.36f32), h * rng.random_range(0.30..0.38f32));
    let eye_dx = rx * 0.4;
    let eye_y = cy - ry * 0.2;
    let eye_r = rx * 0.13;
    let mouth_y = cy + ry * 0.45;
    let stripe = rng.random_range(2.0..4.0f32);
    let noise = Normal::new(0.0f32, 22.0).expect("valid std");

    let mut img = RgbImage::new(width, height);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
        let mut c = if inside_ellipse(xf, yf, cx, cy, rx, ry) {
            let mut c = skin;
            let in_eye = inside_ellipse(xf, yf, cx - eye_dx, eye_y, eye_r, eye_r * 0.6)
                || inside_ellipse(xf, yf, cx + eye_dx, eye_y, eye_r, eye_r * 0.6);
            if in_eye {
                c = [30.0, 25.0, 20.0];
            } else if inside_ellipse(xf, yf, cx, mouth_y, rx * 0.35, ry * 0.07) {
                c = [150.0, 50.0, 60.0];
            }
            c
        } else if yf < cy - ry * 0.6 && inside_ellipse(xf, yf, cx, cy - ry * 0.1, rx * 1.15, ry * 1.0) {
            // Hair: fine vertical stripes carry high-frequency content.
            let v = if (xf / stripe).floor() as i64 % 2 == 0 { 25.0 } else { 85.0 };
            [v, v * 0.8, v * 0.6]
        } else {
            let shade = 0.7 + 0.3 * yf / h;
            [bg[0] * shade, bg[1] * shade, bg[2] * shade]
        };
        let n = noise.sample(&mut rng);
        for v in &mut c {
            *v = (*v + n).clamp(0.0, 255.0);
        }
        *px = Rgb([c[0] as u8, c[1] as u8, c[2] as u8]);
    }

    if blur_sigma > 0.05 {
        img = imageops::blur(&img, blur_sigma);
    }
    for px in img.pixels_mut() {
        for v in px.0.iter_mut() {
            *v = (*v as f32 * brightness).round().clamp(0.0, 255.0) as u8;
        }
    }
    SynthSample {
        image: img,
        blur_sigma,
        brightness,
        mos: mos_of(blur_sigma, brightness),
    }
}

/// Write `count` PNGs under `dir/images` and a `dir/manifest.csv` with
/// relative paths. Returns the entries with paths resolved against `dir`.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<Vec<ManifestEntry>, DataError> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|source| DataError::Io {
        path: images.clone(),
        source,
    })?;
    let mut rows = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let s = sample(cfg.seed, i as u64, cfg.width, cfg.height);
        let name = format!("synth_{i:05}.png");
        let path = images.join(&name);
        s.image.save(&path).map_err(|e| DataError::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
        rows.push(ManifestEntry {
            image_id: format!("synth_{i:05}"),
            path: Path::new("images").join(&name),
            mos: s.mos,
        });
    }
    write_manifest(&dir.join("manifest.csv"), &rows)?;
    Ok(rows
        .into_iter()
        .map(|mut e| {
            e.path = dir.join(&e.path);
            e
        })
        .collect())
}
