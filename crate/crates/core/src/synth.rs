//! Synthetic attention bundles with known ground truth.
//!
//! Each key token owns one rectangular plateau of patches. Every plane,
//! key or noise, also carries a shared "sink" block in one corner of the
//! grid plus independent uniform noise. Planes are scaled to sum to one so
//! they look like softmax rows over the image tokens.
//!
//! Sample `k` draws from its own [`Lcg64`] seeded with
//! `seed ^ (k · 0x9E3779B97F4A7C15)`, in this order: blob size and position
//! for each key token (rejection sampling), then one noise draw per patch
//! in raster order for each key plane, then for each noise plane.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::attention::{noise_prior, purify, SmoothingConfig};
use crate::boxes::{write_boxes, BoundingBox, BoxSet};
use crate::bundle::{write_bundle, AttentionBundle, TokenRef};
use crate::error::{Error, Result};
use crate::map::AttentionMap;
use crate::metrics::{evaluate, EvalReport};
use crate::regions::{boxes_from_purified, scale_span, ThresholdConfig};
use crate::rng::Lcg64;

const SAMPLE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const MAX_PLACEMENT_TRIES: usize = 10_000;

pub const BACKGROUND: Rgb<u8> = Rgb([240, 240, 240]);

/// Colours of the ground-truth rectangles, by key-token index.
pub const PALETTE: [Rgb<u8>; 8] = [
    Rgb([220, 40, 40]),
    Rgb([40, 160, 60]),
    Rgb([40, 80, 220]),
    Rgb([230, 180, 20]),
    Rgb([150, 50, 190]),
    Rgb([20, 180, 190]),
    Rgb([240, 120, 30]),
    Rgb([30, 30, 30]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corner {
    #[default]
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_samples: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub layer: u32,
    /// Key tokens per sample, one blob each.
    pub n_tokens: usize,
    /// Search-prompt tokens per sample.
    pub n_noise_tokens: usize,
    /// Blob width and height are drawn independently from this range.
    pub blob_min: usize,
    pub blob_max: usize,
    pub signal_amplitude: f32,
    pub sink_amplitude: f32,
    pub sink_size: usize,
    pub sink_corner: Corner,
    /// Standard deviation of the uniform per-patch noise.
    pub noise_std: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 100,
            patch_rows: 24,
            patch_cols: 24,
            image_width: 336,
            image_height: 336,
            layer: 15,
            n_tokens: 2,
            n_noise_tokens: 4,
            blob_min: 3,
            blob_max: 6,
            signal_amplitude: 1.0,
            sink_amplitude: 2.0,
            sink_size: 3,
            sink_corner: Corner::TopLeft,
            noise_std: 0.05,
        }
    }
}

impl SynthSpec {
    /// No sink and no noise: plateaus only.
    pub fn noise_free(self) -> Self {
        Self {
            sink_amplitude: 0.0,
            noise_std: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        crate::bundle::Geometry {
            image_width: self.image_width,
            image_height: self.image_height,
            patch_rows: self.patch_rows,
            patch_cols: self.patch_cols,
        }
        .validate()?;
        for (name, v) in [
            ("signal amplitude", self.signal_amplitude),
            ("sink amplitude", self.sink_amplitude),
            ("noise std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.signal_amplitude == 0.0 {
            return bad("signal amplitude must be positive".into());
        }
        if self.n_tokens == 0 {
            return bad("at least one key token is required".into());
        }
        if self.n_tokens > PALETTE.len() {
            return bad(format!("at most {} key tokens are supported", PALETTE.len()));
        }
        if self.blob_min == 0 || self.blob_min > self.blob_max {
            return bad(format!("invalid blob range {}..={}", self.blob_min, self.blob_max));
        }
        if self.blob_max > self.patch_rows.min(self.patch_cols) {
            return bad(format!(
                "blobs up to {} patches do not fit the {}x{} grid",
                self.blob_max, self.patch_cols, self.patch_rows
            ));
        }
        if self.sink_size > self.patch_rows.min(self.patch_cols) {
            return bad(format!("sink of {} patches does not fit the grid", self.sink_size));
        }
        Ok(())
    }

    fn has_sink(&self) -> bool {
        self.sink_amplitude > 0.0 && self.sink_size > 0
    }

    /// Sink block as a patch rectangle `(x, y, w, h)`.
    pub fn sink_rect(&self) -> (usize, usize, usize, usize) {
        let s = self.sink_size;
        let (x, y) = match self.sink_corner {
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (self.patch_cols - s, 0),
            Corner::BottomLeft => (0, self.patch_rows - s),
            Corner::BottomRight => (self.patch_cols - s, self.patch_rows - s),
        };
        (x, y, s, s)
    }
}

/// One generated sample.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub bundle: AttentionBundle,
    /// One box per key token, in token order.
    pub gt: BoxSet,
    /// Patch rectangles `(x, y, w, h)` of the blobs, in token order.
    pub blobs: Vec<(usize, usize, usize, usize)>,
    pub image: RgbImage,
}

fn rects_touch(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize), gap: usize) -> bool {
    a.0 < b.0 + b.2 + gap && b.0 < a.0 + a.2 + gap && a.1 < b.1 + b.3 + gap && b.1 < a.1 + a.3 + gap
}

fn place_blobs(spec: &SynthSpec, rng: &mut Lcg64) -> Result<Vec<(usize, usize, usize, usize)>> {
    let mut blobs = Vec::with_capacity(spec.n_tokens);
    for t in 0..spec.n_tokens {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let w = rng.between(spec.blob_min as u32, spec.blob_max as u32) as usize;
            let h = rng.between(spec.blob_min as u32, spec.blob_max as u32) as usize;
            let x = rng.below((spec.patch_cols - w + 1) as u32) as usize;
            let y = rng.below((spec.patch_rows - h + 1) as u32) as usize;
            let cand = (x, y, w, h);
            let hits_sink = spec.has_sink() && rects_touch(cand, spec.sink_rect(), 1);
            if !hits_sink && blobs.iter().all(|&b| !rects_touch(cand, b, 1)) {
                placed = Some(cand);
                break;
            }
        }
        blobs.push(placed.ok_or_else(|| {
            Error::Parameter(format!("could not place blob {t}; the grid is too crowded"))
        })?);
    }
    Ok(blobs)
}

fn inside(rect: (usize, usize, usize, usize), r: usize, c: usize) -> bool {
    c >= rect.0 && c < rect.0 + rect.2 && r >= rect.1 && r < rect.1 + rect.3
}

fn render_plane(spec: &SynthSpec, blob: Option<(usize, usize, usize, usize)>, rng: &mut Lcg64) -> AttentionMap {
    let (rows, cols) = (spec.patch_rows, spec.patch_cols);
    let noise_scale = spec.noise_std as f64 * 12f64.sqrt();
    let sink = spec.sink_rect();
    let mut raw = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut v = 0.0f64;
            if blob.is_some_and(|b| inside(b, r, c)) {
                v += spec.signal_amplitude as f64;
            }
            if spec.has_sink() && inside(sink, r, c) {
                v += spec.sink_amplitude as f64;
            }
            if noise_scale > 0.0 {
                v += rng.unit() * noise_scale;
            }
            raw.push(v);
        }
    }
    let total: f64 = raw.iter().sum();
    let values = if total > 0.0 {
        raw.iter().map(|v| (v / total) as f32).collect()
    } else {
        vec![0.0; rows * cols]
    };
    AttentionMap::new(rows, cols, values).expect("finite synthetic plane")
}

fn generate_one(spec: &SynthSpec, k: usize) -> Result<SynthSample> {
    let mut rng = Lcg64::new(spec.seed ^ (k as u64).wrapping_mul(SAMPLE_STREAM));
    let blobs = place_blobs(spec, &mut rng)?;

    let key_maps = blobs
        .iter()
        .enumerate()
        .map(|(t, &b)| (TokenRef::new(format!("object{t}"), 10 + t as u32), render_plane(spec, Some(b), &mut rng)))
        .collect();
    let noise_maps = (0..spec.n_noise_tokens)
        .map(|q| (TokenRef::new(format!("search{q}"), 100 + q as u32), render_plane(spec, None, &mut rng)))
        .collect();

    let mut gt = BoxSet::new(spec.image_width, spec.image_height);
    let mut image = RgbImage::from_pixel(spec.image_width, spec.image_height, BACKGROUND);
    for (t, &(x, y, w, h)) in blobs.iter().enumerate() {
        let (x1, x2) = scale_span(x, x + w, spec.image_width, spec.patch_cols);
        let (y1, y2) = scale_span(y, y + h, spec.image_height, spec.patch_rows);
        gt.boxes.push(BoundingBox::new(x1, y1, x2, y2, format!("object{t}")));
        for py in y1..y2 {
            for px in x1..x2 {
                image.put_pixel(px, py, PALETTE[t]);
            }
        }
    }

    let bundle = AttentionBundle {
        image_width: spec.image_width,
        image_height: spec.image_height,
        patch_rows: spec.patch_rows,
        patch_cols: spec.patch_cols,
        layer: spec.layer,
        key_maps,
        noise_maps,
        purified: false,
    };
    bundle.validate()?;
    Ok(SynthSample {
        id: format!("sample_{k:04}"),
        bundle,
        gt,
        blobs,
        image,
    })
}

/// Generates `spec.n_samples` samples; identical for identical specs.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    (0..spec.n_samples).map(|k| generate_one(spec, k)).collect()
}

/// Generates the single sample with index `k`.
pub fn generate_sample(spec: &SynthSpec, k: usize) -> Result<SynthSample> {
    spec.validate()?;
    generate_one(spec, k)
}

/// Writes `sample_NNNN/{bundle.hab, gt.json, image.png}` under `dir`.
pub fn write_samples(samples: &[SynthSample], dir: impl AsRef<Path>) -> Result<()> {
    for s in samples {
        let sub = dir.as_ref().join(&s.id);
        fs::create_dir_all(&sub)?;
        write_bundle(&s.bundle, sub.join("bundle.hab"))?;
        write_boxes(&s.gt, sub.join("gt.json"))?;
        s.image.save(sub.join("image.png"))?;
    }
    Ok(())
}

/// One pipeline configuration to score.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub smoothing: SmoothingConfig,
    pub threshold: ThresholdConfig,
    /// Subtract the noise prior; otherwise the smoothed, normalized key map
    /// is thresholded directly.
    pub purify: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub purify: bool,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub n_samples: usize,
    pub variants: Vec<VariantResult>,
}

/// Boxes predicted for `bundle` under `variant`.
pub fn predict(bundle: &AttentionBundle, variant: &Variant) -> Result<BoxSet> {
    let noise: Vec<&AttentionMap> = if variant.purify {
        bundle.noise_maps.iter().map(|(_, m)| m).collect()
    } else {
        Vec::new()
    };
    let prior = noise_prior(&noise, bundle.patch_rows, bundle.patch_cols, &variant.smoothing)?;
    let maps = bundle
        .key_maps
        .iter()
        .map(|(_, m)| purify(m, &prior, &variant.smoothing))
        .collect::<Result<Vec<_>>>()?;
    Ok(boxes_from_purified(bundle, &maps, &variant.threshold))
}

/// Scores every variant on every sample with ground truth.
pub fn run_suite(samples: &[SynthSample], variants: &[Variant], iou_threshold: f64) -> Result<SuiteReport> {
    let scored: Vec<&SynthSample> = samples.iter().filter(|s| !s.gt.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::Validation("suite has no samples with ground truth".into()));
    }
    let variants = variants
        .iter()
        .map(|v| {
            let preds = scored
                .iter()
                .map(|s| predict(&s.bundle, v))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate(
                scored.iter().zip(&preds).map(|(s, p)| (s.id.clone(), p, &s.gt)),
                iou_threshold,
            )?;
            Ok(VariantResult {
                name: v.name.clone(),
                purify: v.purify,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        n_samples: scored.len(),
        variants,
    })
}
