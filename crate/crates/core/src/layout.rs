//! Layout-preserving compaction.
//!
//! Every box edge, together with the image border, becomes a grid line.
//! The resulting grid partitions the image into cells; a column (row) of
//! cells is kept when any of its cells overlaps a box. Kept columns and
//! rows are stitched together in their original order, so the relative
//! placement of boxes survives while the empty background between them
//! is dropped. A point `(x, y)` in kept column `i` and kept row `j` moves to
//!
//! ```text
//! x' = (x - S_X[i]) + sum over kept columns l < i of (S_X[l+1] - S_X[l])
//! y' = (y - S_Y[j]) + sum over kept rows    l < j of (S_Y[l+1] - S_Y[l])
//! ```
//!
//! Cells at the crossing of a kept row and a kept column that overlap no
//! box are painted with a fill colour. All intervals are half-open.

use image::{GenericImage, GenericImageView, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::boxes::{BoundingBox, BoxSet};
use crate::error::{Error, Result};

pub const DEFAULT_FILL: Rgb<u8> = Rgb([128, 128, 128]);

/// Canonical grid induced by a set of boxes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridDecomposition {
    /// Sorted unique vertical grid lines, `0` and the width included.
    pub xs: Vec<u32>,
    /// Sorted unique horizontal grid lines, `0` and the height included.
    pub ys: Vec<u32>,
    pub content_cols: Vec<bool>,
    pub content_rows: Vec<bool>,
    /// Destination x of each vertical grid line.
    pub x_map: Vec<u32>,
    /// Destination y of each horizontal grid line.
    pub y_map: Vec<u32>,
    pub new_width: u32,
    pub new_height: u32,
    cells: Vec<bool>,
}

impl GridDecomposition {
    pub fn n_cols(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.ys.len() - 1
    }

    /// Cached content flag of cell `(i, j)` (column `i`, row `j`).
    pub fn cell(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.n_cols() + i]
    }

    pub fn cell_rect(&self, i: usize, j: usize) -> (u32, u32, u32, u32) {
        (self.xs[i], self.ys[j], self.xs[i + 1], self.ys[j + 1])
    }

    pub fn width(&self) -> u32 {
        *self.xs.last().unwrap()
    }

    pub fn height(&self) -> u32 {
        *self.ys.last().unwrap()
    }
}

fn grid_lines(extent: u32, edges: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut lines: Vec<u32> = [0, extent].into_iter().chain(edges).collect();
    lines.sort_unstable();
    lines.dedup();
    lines
}

/// Builds the canonical grid and the cumulative coordinate maps.
pub fn build_grid(boxes: &[BoundingBox], width: u32, height: u32) -> Result<GridDecomposition> {
    if width == 0 || height == 0 {
        return Err(Error::Validation(format!("image must be non-empty, got {width}x{height}")));
    }
    for b in boxes {
        b.check_within(width, height)?;
    }
    let xs = grid_lines(width, boxes.iter().flat_map(|b| [b.x1, b.x2]));
    let ys = grid_lines(height, boxes.iter().flat_map(|b| [b.y1, b.y2]));
    let (n_cols, n_rows) = (xs.len() - 1, ys.len() - 1);

    let mut cells = vec![false; n_cols * n_rows];
    for j in 0..n_rows {
        for i in 0..n_cols {
            cells[j * n_cols + i] = boxes.iter().any(|b| b.intersects(xs[i], ys[j], xs[i + 1], ys[j + 1]));
        }
    }
    let content_cols: Vec<bool> = (0..n_cols).map(|i| (0..n_rows).any(|j| cells[j * n_cols + i])).collect();
    let content_rows: Vec<bool> = (0..n_rows).map(|j| (0..n_cols).any(|i| cells[j * n_cols + i])).collect();

    let cumulative = |lines: &[u32], kept: &[bool]| {
        let mut map = Vec::with_capacity(lines.len());
        let mut acc = 0;
        map.push(0);
        for (l, &k) in kept.iter().enumerate() {
            if k {
                acc += lines[l + 1] - lines[l];
            }
            map.push(acc);
        }
        map
    };
    let x_map = cumulative(&xs, &content_cols);
    let y_map = cumulative(&ys, &content_rows);

    Ok(GridDecomposition {
        new_width: *x_map.last().unwrap(),
        new_height: *y_map.last().unwrap(),
        xs,
        ys,
        content_cols,
        content_rows,
        x_map,
        y_map,
        cells,
    })
}

/// Whether cell `(i, j)` overlaps any box, under half-open semantics.
pub fn is_content_cell(i: usize, j: usize, boxes: &[BoundingBox], grid: &GridDecomposition) -> Result<bool> {
    if i >= grid.n_cols() || j >= grid.n_rows() {
        return Err(Error::Domain(format!(
            "cell ({i}, {j}) outside the {}x{} grid",
            grid.n_cols(),
            grid.n_rows()
        )));
    }
    let (x1, y1, x2, y2) = grid.cell_rect(i, j);
    Ok(boxes.iter().any(|b| b.intersects(x1, y1, x2, y2)))
}

fn interval_of(lines: &[u32], v: u32) -> Option<usize> {
    if v >= *lines.last()? {
        return None;
    }
    Some(lines.partition_point(|&l| l <= v) - 1)
}

/// Maps an original pixel into the compact image.
pub fn transform_point(x: u32, y: u32, grid: &GridDecomposition) -> Result<(u32, u32)> {
    let i = interval_of(&grid.xs, x)
        .ok_or_else(|| Error::Domain(format!("x = {x} lies outside the image")))?;
    let j = interval_of(&grid.ys, y)
        .ok_or_else(|| Error::Domain(format!("y = {y} lies outside the image")))?;
    if !grid.content_cols[i] {
        return Err(Error::Domain(format!("x = {x} lies in dropped column {i}")));
    }
    if !grid.content_rows[j] {
        return Err(Error::Domain(format!("y = {y} lies in dropped row {j}")));
    }
    Ok((x - grid.xs[i] + grid.x_map[i], y - grid.ys[j] + grid.y_map[j]))
}

/// One copied cell: source rectangle `[x1, y1, x2, y2]` and destination
/// top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCopy {
    pub src: [u32; 4],
    pub dst: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub cells: Vec<CellCopy>,
}

impl Provenance {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct CompactImage {
    pub raster: RgbImage,
    pub provenance: Provenance,
    pub fill: Rgb<u8>,
    /// No boxes were given and `raster` is the unmodified input.
    pub degenerate: bool,
}

fn check_dims(image: &RgbImage, boxes: &BoxSet) -> Result<()> {
    if image.dimensions() != (boxes.image_width, boxes.image_height) {
        return Err(Error::Dimension(format!(
            "image is {}x{} but boxes were computed for {}x{}",
            image.width(),
            image.height(),
            boxes.image_width,
            boxes.image_height
        )));
    }
    boxes.validate()
}

fn identity(image: &RgbImage, fill: Rgb<u8>) -> CompactImage {
    CompactImage {
        raster: image.clone(),
        provenance: Provenance {
            cells: vec![CellCopy {
                src: [0, 0, image.width(), image.height()],
                dst: [0, 0],
            }],
        },
        fill,
        degenerate: true,
    }
}

/// Stitches the kept rows and columns of `image` into a compact raster.
///
/// An empty box set returns the input unchanged with `degenerate` set.
pub fn compact_image(image: &RgbImage, boxes: &BoxSet, fill: Rgb<u8>) -> Result<CompactImage> {
    check_dims(image, boxes)?;
    if boxes.is_empty() {
        return Ok(identity(image, fill));
    }
    let grid = build_grid(&boxes.boxes, image.width(), image.height())?;
    Ok(compact_with_grid(image, &grid, fill))
}

pub fn compact_with_grid(image: &RgbImage, grid: &GridDecomposition, fill: Rgb<u8>) -> CompactImage {
    let mut raster = RgbImage::from_pixel(grid.new_width, grid.new_height, fill);
    let mut cells = Vec::new();
    for i in 0..grid.n_cols() {
        for j in 0..grid.n_rows() {
            if !grid.cell(i, j) {
                continue;
            }
            let (x1, y1, x2, y2) = grid.cell_rect(i, j);
            let (dx, dy) = (grid.x_map[i], grid.y_map[j]);
            let patch = image.view(x1, y1, x2 - x1, y2 - y1);
            raster
                .copy_from(&*patch, dx, dy)
                .expect("content cells fit inside the compact raster");
            cells.push(CellCopy {
                src: [x1, y1, x2, y2],
                dst: [dx, dy],
            });
        }
    }
    CompactImage {
        raster,
        provenance: Provenance { cells },
        fill,
        degenerate: false,
    }
}

/// Ways of turning the boxed regions back into a single picture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecomposeMode {
    /// Crops side by side, left to right, in scan order of their corners.
    SequenceTiling,
    /// The same crops in a seeded random order.
    RandomTiling { seed: u64 },
    /// Original resolution, everything outside the boxes filled.
    Masking,
    /// The compact layout placed on an original-size canvas at the
    /// original position of the first kept column and row.
    LayoutNoCompaction,
    /// [`compact_image`].
    LayoutCompact,
}

/// Applies one of the recomposition strategies. All modes return the
/// input unchanged when there are no boxes.
pub fn recompose(image: &RgbImage, boxes: &BoxSet, mode: RecomposeMode, fill: Rgb<u8>) -> Result<RgbImage> {
    check_dims(image, boxes)?;
    if boxes.is_empty() {
        return Ok(image.clone());
    }
    match mode {
        RecomposeMode::SequenceTiling => Ok(tile(image, &scan_order(&boxes.boxes), fill)),
        RecomposeMode::RandomTiling { seed } => {
            let mut order = scan_order(&boxes.boxes);
            crate::rng::Lcg64::new(seed).shuffle(&mut order);
            Ok(tile(image, &order, fill))
        }
        RecomposeMode::Masking => {
            let mut out = RgbImage::from_pixel(image.width(), image.height(), fill);
            for b in &boxes.boxes {
                let view = image.view(b.x1, b.y1, b.width(), b.height());
                out.copy_from(&*view, b.x1, b.y1).expect("box inside image");
            }
            Ok(out)
        }
        RecomposeMode::LayoutNoCompaction => {
            let grid = build_grid(&boxes.boxes, image.width(), image.height())?;
            let compact = compact_with_grid(image, &grid, fill);
            let left = grid.content_cols.iter().position(|&k| k).unwrap();
            let top = grid.content_rows.iter().position(|&k| k).unwrap();
            let mut out = RgbImage::from_pixel(image.width(), image.height(), fill);
            out.copy_from(&compact.raster, grid.xs[left], grid.ys[top])
                .expect("compact raster fits past its first kept cell");
            Ok(out)
        }
        RecomposeMode::LayoutCompact => Ok(compact_image(image, boxes, fill)?.raster),
    }
}

/// Boxes sorted top-left to bottom-right by their `(y1, x1)` corner.
pub fn scan_order(boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    let mut v = boxes.to_vec();
    v.sort_by_key(|b| (b.y1, b.x1, b.y2, b.x2));
    v
}

/// Horizontal strip of crops, top-aligned, as tall as the tallest crop.
/// Returns the strip and each crop's destination origin.
pub fn tile_positions(order: &[BoundingBox]) -> (u32, u32, Vec<(u32, u32)>) {
    let mut x = 0;
    let mut pos = Vec::with_capacity(order.len());
    for b in order {
        pos.push((x, 0));
        x += b.width();
    }
    let h = order.iter().map(BoundingBox::height).max().unwrap_or(0);
    (x, h, pos)
}

fn tile(image: &RgbImage, order: &[BoundingBox], fill: Rgb<u8>) -> RgbImage {
    let (w, h, pos) = tile_positions(order);
    let mut out = RgbImage::from_pixel(w, h, fill);
    for (b, &(x, y)) in order.iter().zip(&pos) {
        let view = image.view(b.x1, b.y1, b.width(), b.height());
        out.copy_from(&*view, x, y).expect("tile fits in strip");
    }
    out
}

/// Image of a box under the compaction transform.
pub fn transform_box(b: &BoundingBox, grid: &GridDecomposition) -> Result<BoundingBox> {
    let (x1, y1) = transform_point(b.x1, b.y1, grid)?;
    let (x2, y2) = transform_point(b.x2 - 1, b.y2 - 1, grid)?;
    Ok(BoundingBox::new(x1, y1, x2 + 1, y2 + 1, b.token.clone()))
}
