//! Heat-map overlays of attention on the source image.

use image::{Rgb, RgbImage};

use crate::map::AttentionMap;

/// Weight of the heat colour in the blend; the image gets `1 - OVERLAY_ALPHA`.
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Blue (cold) to red (hot) ramp for a value in `[0, 1]`.
pub fn heat_color(v: f32) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    Rgb([(255.0 * v).round() as u8, 64, (255.0 * (1.0 - v)).round() as u8])
}

/// Upsamples `heat` to the image size by nearest neighbour and blends it
/// over `image`. Values of `heat` are expected in `[0, 1]`.
pub fn render_overlay(image: &RgbImage, heat: &AttentionMap) -> RgbImage {
    let (w, h) = image.dimensions();
    let (rows, cols) = heat.shape();
    RgbImage::from_fn(w, h, |x, y| {
        let r = (y as u64 * rows as u64 / h as u64) as usize;
        let c = (x as u64 * cols as u64 / w as u64) as usize;
        let hc = heat_color(heat.get(r, c));
        let src = image.get_pixel(x, y);
        let mut out = [0u8; 3];
        for k in 0..3 {
            let v = (1.0 - OVERLAY_ALPHA) * src[k] as f32 + OVERLAY_ALPHA * hc[k] as f32;
            out[k] = v.round() as u8;
        }
        Rgb(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_neighbour_blend() {
        let img = RgbImage::from_pixel(6, 4, Rgb([0, 0, 0]));
        let heat = AttentionMap::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = render_overlay(&img, &heat);
        assert_eq!(out.dimensions(), (6, 4));
        assert_eq!(*out.get_pixel(1, 1), Rgb([128, 32, 0]));
        assert_eq!(*out.get_pixel(2, 0), Rgb([0, 32, 128]));
    }
}
