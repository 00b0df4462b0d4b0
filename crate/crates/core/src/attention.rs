//! Token-wise attention decoupling: smoothing, min-max normalization and
//! subtraction of a noise prior estimated from search-prompt tokens.
//!
//! For a key token map `A` and search-token maps `A_q` the purified map is
//!
//! ```text
//! norm(G * A) - mean_q norm(G * A_q)
//! ```
//!
//! where `G` is a truncated, renormalized Gaussian and `norm` rescales a
//! map affinely onto `[0, 1]`. Both operands are normalized after
//! smoothing; the result lies in `[-1, 1]` and is not clamped.

use crate::error::{Error, Result};
use crate::map::AttentionMap;

/// Gaussian smoothing parameters, in patch units.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    sigma: f64,
    radius: usize,
    kernel: Vec<f64>,
}

impl SmoothingConfig {
    /// Kernel of standard deviation `sigma`, truncated at `ceil(3σ)`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Parameter(format!(
                "sigma must be a positive number, got {sigma}"
            )));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            sigma,
            radius,
            kernel: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    /// The identity filter (the `σ → 0` limit).
    pub fn disabled() -> Self {
        Self {
            sigma: 0.0,
            radius: 0,
            kernel: vec![1.0],
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn is_disabled(&self) -> bool {
        self.radius == 0
    }

    /// Normalized 1-D weights for offsets `-radius..=radius`.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
}

/// Maps any integer index onto `0..n` by repeated mirroring about the
/// borders (`... b a | a b c d | d c ...`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_smooth(map: &AttentionMap, cfg: &SmoothingConfig) -> AttentionMap {
    if cfg.is_disabled() {
        return map.clone();
    }
    let (rows, cols) = map.shape();
    let k = cfg.kernel();
    let r = cfg.radius as isize;

    let mut horizontal = vec![0.0f64; rows * cols];
    for y in 0..rows {
        let src = &map.values()[y * cols..(y + 1) * cols];
        for x in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * src[reflect_index(x as isize + t as isize - r, cols)] as f64;
            }
            horizontal[y * cols + x] = acc;
        }
    }

    let mut out = vec![0.0f32; rows * cols];
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * horizontal[reflect_index(y as isize + t as isize - r, rows) * cols + x];
            }
            out[y * cols + x] = acc as f32;
        }
    }
    AttentionMap::new(rows, cols, out).expect("smoothing keeps values finite")
}

/// Affine rescale onto `[0, 1]`. A constant map carries no localization
/// signal and maps to all zeros.
pub fn minmax_normalize(map: &AttentionMap) -> AttentionMap {
    let lo = map.min() as f64;
    let hi = map.max() as f64;
    let (rows, cols) = map.shape();
    if hi <= lo {
        return AttentionMap::zeros(rows, cols);
    }
    let span = hi - lo;
    let values = map
        .values()
        .iter()
        .map(|&v| ((v as f64 - lo) / span) as f32)
        .collect();
    AttentionMap::new(rows, cols, values).expect("normalization keeps values finite")
}

/// Element-wise mean of the smoothed, normalized noise maps; all zeros
/// when there are none.
pub fn noise_prior(
    noise_maps: &[&AttentionMap],
    rows: usize,
    cols: usize,
    cfg: &SmoothingConfig,
) -> Result<AttentionMap> {
    let mut acc = vec![0.0f64; rows * cols];
    for (i, m) in noise_maps.iter().enumerate() {
        if m.shape() != (rows, cols) {
            return Err(Error::Validation(format!(
                "noise map {i} is {}x{}, expected {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
        let n = minmax_normalize(&gaussian_smooth(m, cfg));
        for (a, &v) in acc.iter_mut().zip(n.values()) {
            *a += v as f64;
        }
    }
    if noise_maps.is_empty() {
        return Ok(AttentionMap::zeros(rows, cols));
    }
    let count = noise_maps.len() as f64;
    let values = acc.into_iter().map(|a| (a / count) as f32).collect();
    AttentionMap::new(rows, cols, values)
}

/// `norm(smooth(key_map)) - prior`.
pub fn purify(key_map: &AttentionMap, prior: &AttentionMap, cfg: &SmoothingConfig) -> Result<AttentionMap> {
    prior.ensure_same_shape(key_map, "purify")?;
    let n = minmax_normalize(&gaussian_smooth(key_map, cfg));
    let values = n
        .values()
        .iter()
        .zip(prior.values())
        .map(|(&a, &b)| (a as f64 - b as f64) as f32)
        .collect();
    AttentionMap::new(n.rows(), n.cols(), values)
}

/// Element-wise maximum of the normalized maps, for visualization.
pub fn aggregate_overlay(maps: &[&AttentionMap]) -> Result<AttentionMap> {
    let (first, rest) = maps
        .split_first()
        .ok_or_else(|| Error::Validation("overlay needs at least one map".into()))?;
    let mut out = minmax_normalize(first).into_values();
    for m in rest {
        first.ensure_same_shape(m, "overlay")?;
        for (o, &v) in out.iter_mut().zip(minmax_normalize(m).values()) {
            *o = o.max(v);
        }
    }
    AttentionMap::new(first.rows(), first.cols(), out)
}
