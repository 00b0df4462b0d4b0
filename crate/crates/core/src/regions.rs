//! From purified attention maps to pixel-space bounding boxes: strict
//! thresholding of the renormalized map, connected-component labelling on
//! the patch grid and patch-to-pixel scaling of each component's extent.

use crate::attention::{minmax_normalize, noise_prior, purify, SmoothingConfig};
use crate::boxes::{BoundingBox, BoxSet};
use crate::bundle::{AttentionBundle, Geometry};
use crate::error::{Error, Result};
use crate::map::AttentionMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Edge neighbours only.
    Four,
    /// Edge and corner neighbours.
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Parameter(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    alpha: f64,
    pub connectivity: Connectivity,
    min_area: usize,
}

impl ThresholdConfig {
    pub fn new(alpha: f64, connectivity: Connectivity, min_area: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if min_area == 0 {
            return Err(Error::Parameter("min_area must be at least 1".into()));
        }
        Ok(Self {
            alpha,
            connectivity,
            min_area,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn min_area(&self) -> usize {
        self.min_area
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Validation(format!(
                "mask of {rows}x{cols} needs {} cells, got {}",
                rows * cols,
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// A patch-grid cell: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Patch {
    pub y: usize,
    pub x: usize,
}

/// A maximal connected set of foreground cells, members in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectedComponent {
    cells: Vec<Patch>,
}

impl ConnectedComponent {
    pub fn cells(&self) -> &[Patch] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Inclusive patch extent `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (usize, usize, usize, usize) {
        let mut e = (usize::MAX, usize::MAX, 0, 0);
        for p in &self.cells {
            e.0 = e.0.min(p.x);
            e.1 = e.1.min(p.y);
            e.2 = e.2.max(p.x);
            e.3 = e.3.max(p.y);
        }
        e
    }
}

/// `mask[p] = norm(map)[p] > alpha`, with a strict comparison.
pub fn binarize(map: &AttentionMap, cfg: &ThresholdConfig) -> BinaryMask {
    let n = minmax_normalize(map);
    let bits = n.values().iter().map(|&v| v as f64 > cfg.alpha).collect();
    BinaryMask {
        rows: map.rows(),
        cols: map.cols(),
        bits,
    }
}

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labelling.
///
/// Components smaller than `min_area` are dropped. The rest are ordered by
/// minimum row, then minimum column, then first member in raster order.
pub fn components(mask: &BinaryMask, cfg: &ThresholdConfig) -> Vec<ConnectedComponent> {
    let (rows, cols) = (mask.rows, mask.cols);
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; rows * cols];
    let mut sets = DisjointSets::new();

    // Already-visited neighbours: W, and NW, N, NE on the previous row.
    let back: &[(isize, isize)] = match cfg.connectivity {
        Connectivity::Four => &[(0, -1), (-1, 0)],
        Connectivity::Eight => &[(0, -1), (-1, -1), (-1, 0), (-1, 1)],
    };

    for y in 0..rows {
        for x in 0..cols {
            if !mask.get(y, x) {
                continue;
            }
            let mut label = NONE;
            for &(dy, dx) in back {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || nx >= cols as isize {
                    continue;
                }
                let l = labels[ny as usize * cols + nx as usize];
                if l == NONE {
                    continue;
                }
                if label == NONE {
                    label = l;
                } else {
                    sets.union(label, l);
                }
            }
            if label == NONE {
                label = sets.make();
            }
            labels[y * cols + x] = label;
        }
    }

    let mut slot = vec![usize::MAX; sets.parent.len()];
    let mut groups: Vec<Vec<Patch>> = Vec::new();
    for y in 0..rows {
        for x in 0..cols {
            let l = labels[y * cols + x];
            if l == NONE {
                continue;
            }
            let root = sets.find(l) as usize;
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(Patch { y, x });
        }
    }

    let mut out: Vec<ConnectedComponent> = groups
        .into_iter()
        .filter(|cells| cells.len() >= cfg.min_area)
        .map(|cells| ConnectedComponent { cells })
        .collect();
    out.sort_by_key(|c| {
        let (min_x, min_y, _, _) = c.extent();
        (min_y, min_x, c.cells[0])
    });
    out
}

/// Scales a component's tight patch extent to a half-open pixel box.
///
/// With `s = image_width / patch_cols`, `x1 = floor(min_x · s)` and
/// `x2 = ceil((max_x + 1) · s)`, clipped to the image; rows likewise.
/// Integer arithmetic keeps this exact for non-integer strides.
pub fn component_to_box(c: &ConnectedComponent, geometry: &Geometry, token: &str) -> BoundingBox {
    assert!(!c.is_empty(), "component must be non-empty");
    let (min_x, min_y, max_x, max_y) = c.extent();
    let (x1, x2) = scale_span(min_x, max_x + 1, geometry.image_width, geometry.patch_cols);
    let (y1, y2) = scale_span(min_y, max_y + 1, geometry.image_height, geometry.patch_rows);
    BoundingBox::new(x1, y1, x2, y2, token)
}

/// Pixel span `[floor(lo·len/n), ceil(hi·len/n))` of patches `lo..hi`.
pub(crate) fn scale_span(lo: usize, hi: usize, len: u32, n: usize) -> (u32, u32) {
    let len64 = len as u64;
    let n64 = n as u64;
    let start = lo as u64 * len64 / n64;
    let end = (hi as u64 * len64).div_ceil(n64).min(len64);
    (start as u32, end as u32)
}

/// Runs purification, thresholding and labelling for every key token.
///
/// Bundles already marked purified skip the purification step. Boxes from
/// all tokens are pooled; identical rectangles are merged with their tags
/// joined.
pub fn extract_boxes(
    bundle: &AttentionBundle,
    smoothing: &SmoothingConfig,
    thresh: &ThresholdConfig,
) -> Result<BoxSet> {
    bundle.validate()?;
    let purified = purified_maps(bundle, smoothing)?;
    Ok(boxes_from_purified(bundle, &purified, thresh))
}

/// The purified key maps of `bundle`, in key-token order.
pub fn purified_maps(bundle: &AttentionBundle, smoothing: &SmoothingConfig) -> Result<Vec<AttentionMap>> {
    if bundle.purified {
        return Ok(bundle.key_maps.iter().map(|(_, m)| m.clone()).collect());
    }
    let noise: Vec<&AttentionMap> = bundle.noise_maps.iter().map(|(_, m)| m).collect();
    let prior = noise_prior(&noise, bundle.patch_rows, bundle.patch_cols, smoothing)?;
    bundle
        .key_maps
        .iter()
        .map(|(_, m)| purify(m, &prior, smoothing))
        .collect()
}

/// Thresholds already-purified maps (one per key token of `bundle`).
pub fn boxes_from_purified(
    bundle: &AttentionBundle,
    purified: &[AttentionMap],
    thresh: &ThresholdConfig,
) -> BoxSet {
    let geometry = bundle.geometry();
    let mut set = BoxSet::new(bundle.image_width, bundle.image_height);
    for ((token, _), map) in bundle.key_maps.iter().zip(purified) {
        let mask = binarize(map, thresh);
        for c in components(&mask, thresh) {
            set.insert_merging(component_to_box(&c, &geometry, &token.text));
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::TokenRef;

    fn cfg(alpha: f64, connectivity: Connectivity) -> ThresholdConfig {
        ThresholdConfig::new(alpha, connectivity, 1).unwrap()
    }

    fn mask(rows: usize, cols: usize, cells: &[u8]) -> BinaryMask {
        BinaryMask::new(rows, cols, cells.iter().map(|&c| c == 1).collect()).unwrap()
    }

    #[test]
    fn threshold_config_validation() {
        assert!(ThresholdConfig::new(1.5, Connectivity::Eight, 1).is_err());
        assert!(ThresholdConfig::new(-0.1, Connectivity::Eight, 1).is_err());
        assert!(ThresholdConfig::new(0.5, Connectivity::Eight, 0).is_err());
        assert!(Connectivity::from_neighbors(6).is_err());
    }

    #[test]
    fn binarize_examples() {
        let m = AttentionMap::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let b = binarize(&m, &cfg(0.4, Connectivity::Eight));
        assert_eq!(b.bits(), &[false, true, true, false]);
        assert_eq!(binarize(&m, &cfg(1.0, Connectivity::Eight)).count(), 0);
        let b0 = binarize(&m, &cfg(0.0, Connectivity::Eight));
        assert_eq!(b0.bits(), &[false, true, true, true]);
        let flat = AttentionMap::new(2, 2, vec![0.3; 4]).unwrap();
        assert_eq!(binarize(&flat, &cfg(0.0, Connectivity::Eight)).count(), 0);
    }

    #[test]
    fn diagonal_connectivity() {
        let m = mask(2, 2, &[1, 0, 0, 1]);
        assert_eq!(components(&m, &cfg(0.5, Connectivity::Four)).len(), 2);
        assert_eq!(components(&m, &cfg(0.5, Connectivity::Eight)).len(), 1);
        assert!(components(&mask(3, 3, &[0; 9]), &cfg(0.5, Connectivity::Eight)).is_empty());
    }

    #[test]
    fn u_shape_merges_labels() {
        let m = mask(3, 5, &[1, 0, 1, 0, 1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1]);
        let cs = components(&m, &cfg(0.5, Connectivity::Four));
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].len(), 11);
    }

    #[test]
    fn min_area_filters_and_order_is_stable() {
        let m = mask(3, 4, &[0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1]);
        let c = ThresholdConfig::new(0.5, Connectivity::Four, 2).unwrap();
        let cs = components(&m, &c);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].cells(), &[Patch { y: 0, x: 2 }, Patch { y: 0, x: 3 }]);

        let all = components(&m, &cfg(0.5, Connectivity::Four));
        let firsts: Vec<Patch> = all.iter().map(|c| c.cells()[0]).collect();
        assert_eq!(firsts, vec![Patch { y: 0, x: 2 }, Patch { y: 1, x: 0 }, Patch { y: 2, x: 3 }]);
    }

    #[test]
    fn scaling_examples() {
        let one = |x, y| ConnectedComponent { cells: vec![Patch { y, x }] };
        let g224 = Geometry { image_width: 224, image_height: 224, patch_rows: 8, patch_cols: 8 };
        let b = component_to_box(&one(2, 3), &g224, "t");
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (56, 84, 84, 112));

        let g105 = Geometry { image_width: 105, image_height: 105, patch_rows: 10, patch_cols: 10 };
        let b = component_to_box(&one(0, 0), &g105, "t");
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (0, 0, 11, 11));
        let b = component_to_box(&one(9, 9), &g105, "t");
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (94, 94, 105, 105));

        let full = ConnectedComponent {
            cells: (0..10).flat_map(|y| (0..10).map(move |x| Patch { y, x })).collect(),
        };
        let b = component_to_box(&full, &g105, "t");
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (0, 0, 105, 105));
    }

    fn bundle_with(key: Vec<AttentionMap>, noise: Vec<AttentionMap>) -> AttentionBundle {
        let (rows, cols) = key[0].shape();
        AttentionBundle {
            image_width: cols as u32 * 10,
            image_height: rows as u32 * 10,
            patch_rows: rows,
            patch_cols: cols,
            layer: 15,
            key_maps: key.into_iter().enumerate().map(|(i, m)| (TokenRef::new(format!("k{i}"), i as u32), m)).collect(),
            noise_maps: noise.into_iter().enumerate().map(|(i, m)| (TokenRef::new(format!("n{i}"), 100 + i as u32), m)).collect(),
            purified: false,
        }
    }

    #[test]
    fn key_equal_to_prior_gives_nothing() {
        let m = AttentionMap::from_fn(6, 6, |r, c| ((r * 5 + c * 3) % 7) as f32 / 200.0);
        let b = bundle_with(vec![m.clone()], vec![m]);
        let smooth = SmoothingConfig::new(1.0).unwrap();
        let set = extract_boxes(&b, &smooth, &cfg(0.7, Connectivity::Eight)).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn single_blob_single_box() {
        let m = AttentionMap::from_fn(8, 8, |r, c| if (2..4).contains(&r) && (5..7).contains(&c) { 0.1 } else { 0.0 });
        let b = bundle_with(vec![m], vec![]);
        let set = extract_boxes(&b, &SmoothingConfig::disabled(), &cfg(0.7, Connectivity::Eight)).unwrap();
        assert_eq!(set.boxes, vec![BoundingBox::new(50, 20, 70, 40, "k0")]);
    }

    #[test]
    fn identical_boxes_from_two_tokens_merge() {
        let m = AttentionMap::from_fn(4, 4, |r, c| if r == 1 && c == 1 { 0.5 } else { 0.0 });
        let b = bundle_with(vec![m.clone(), m], vec![]);
        let set = extract_boxes(&b, &SmoothingConfig::disabled(), &cfg(0.5, Connectivity::Eight)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.boxes[0].token, "k0|k1");
    }
}
