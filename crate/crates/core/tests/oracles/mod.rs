//! Brute-force reference implementations used to check the library.
//! Nothing here calls into the code paths it is used to verify.
#![allow(dead_code)]

use std::collections::VecDeque;

use hide_core::{AttentionMap, BoundingBox};
use image::{Rgb, RgbImage};

fn mirror(i: isize, n: usize) -> usize {
    // Walk the index back into range one bounce at a time.
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Dense 2-D convolution with the full `(2r+1)²` Gaussian kernel,
/// normalized over the square, with mirrored borders.
pub fn dense_gaussian(map: &AttentionMap, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::new();
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push((dy, dx, w));
            total += w;
        }
    }
    let (rows, cols) = map.shape();
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = 0.0;
            for &(dy, dx, w) in &kernel {
                let sy = mirror(y as isize + dy, rows);
                let sx = mirror(x as isize + dx, cols);
                acc += w / total * map.get(sy, sx) as f64;
            }
            out[y * cols + x] = acc;
        }
    }
    out
}

/// Breadth-first flood fill; returns each component as a sorted list of
/// `(row, col)`, components sorted.
pub fn flood_fill_partition(bits: &[bool], rows: usize, cols: usize, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; rows * cols];
    let mut parts = Vec::new();
    let mut steps: Vec<(isize, isize)> = vec![(-1, 0), (1, 0), (0, -1), (0, 1)];
    if eight {
        steps.extend([(-1, -1), (-1, 1), (1, -1), (1, 1)]);
    }
    for start in 0..rows * cols {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut part = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            part.push((r, c));
            for &(dr, dc) in &steps {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                    continue;
                }
                let j = nr as usize * cols + nc as usize;
                if bits[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        part.sort();
        parts.push(part);
    }
    parts.sort();
    parts
}

/// Keeps every pixel column and row covered by some box and re-stitches
/// them; pixels outside every box become `fill`.
pub fn keep_and_stitch(image: &RgbImage, boxes: &[BoundingBox], fill: Rgb<u8>) -> RgbImage {
    let (w, h) = image.dimensions();
    let kept_x: Vec<u32> = (0..w).filter(|&x| boxes.iter().any(|b| b.x1 <= x && x < b.x2)).collect();
    let kept_y: Vec<u32> = (0..h).filter(|&y| boxes.iter().any(|b| b.y1 <= y && y < b.y2)).collect();
    RgbImage::from_fn(kept_x.len() as u32, kept_y.len() as u32, |i, j| {
        let (x, y) = (kept_x[i as usize], kept_y[j as usize]);
        if boxes.iter().any(|b| b.x1 <= x && x < b.x2 && b.y1 <= y && y < b.y2) {
            *image.get_pixel(x, y)
        } else {
            fill
        }
    })
}

/// Mean over tokens and region cells by explicit double loop.
pub fn double_sum_mean(maps: &[AttentionMap], cells: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for m in maps {
        for &(r, c) in cells {
            total += m.get(r, c) as f64;
        }
    }
    total / (maps.len() * cells.len()) as f64
}
