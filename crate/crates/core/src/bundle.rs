//! The HAB attention-bundle interchange format.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | contents                                        |
//! |--------------|-------------------------------------------------|
//! | `0..4`       | magic `HAB1`                                    |
//! | `4..8`       | `u32` header length `N`                         |
//! | `8..8+N`     | UTF-8 JSON header                               |
//! | rest         | one `f32` plane per token, row-major, key first |
//!
//! The header carries image size, patch grid, layer index and the token
//! lists. A bundle written by the pipeline after purification also sets
//! `"purified": true`; raw bundles omit the field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::AttentionMap;

pub const MAGIC: &[u8; 4] = b"HAB1";
const PREFIX_LEN: usize = 8;

/// A text token of the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenRef {
    pub text: String,
    pub position: u32,
}

impl TokenRef {
    pub fn new(text: impl Into<String>, position: u32) -> Self {
        Self {
            text: text.into(),
            position,
        }
    }
}

/// Image size and patch grid shared by every plane of a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub image_width: u32,
    pub image_height: u32,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.patch_rows == 0 || self.patch_cols == 0 {
            return Err(Error::Validation(format!(
                "patch grid must be at least 1x1, got {}x{}",
                self.patch_rows, self.patch_cols
            )));
        }
        if (self.image_width as usize) < self.patch_cols
            || (self.image_height as usize) < self.patch_rows
        {
            return Err(Error::Validation(format!(
                "image {}x{} is smaller than the {}x{} patch grid",
                self.image_width, self.image_height, self.patch_cols, self.patch_rows
            )));
        }
        Ok(())
    }
}

/// Per-token attention planes for one image at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub image_width: u32,
    pub image_height: u32,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub layer: u32,
    /// Maps of the key-information tokens, in prompt order.
    pub key_maps: Vec<(TokenRef, AttentionMap)>,
    /// Maps of the search-prompt tokens that make up the noise prior.
    pub noise_maps: Vec<(TokenRef, AttentionMap)>,
    /// Key maps have already been through purification; they may be
    /// negative and no noise maps accompany them.
    pub purified: bool,
}

impl AttentionBundle {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            image_width: self.image_width,
            image_height: self.image_height,
            patch_rows: self.patch_rows,
            patch_cols: self.patch_cols,
        }
    }

    pub fn plane_count(&self) -> usize {
        self.key_maps.len() + self.noise_maps.len()
    }

    /// Iterates all planes in file order: key maps, then noise maps.
    pub fn planes(&self) -> impl Iterator<Item = (&TokenRef, &AttentionMap)> {
        self.key_maps
            .iter()
            .chain(&self.noise_maps)
            .map(|(t, m)| (t, m))
    }

    /// Looks up a plane by token, searching key maps before noise maps.
    pub fn find(&self, token: &TokenRef) -> Option<&AttentionMap> {
        self.planes().find(|(t, _)| *t == token).map(|(_, m)| m)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        if self.key_maps.is_empty() {
            return Err(Error::Validation("bundle has no key maps".into()));
        }
        if self.purified && !self.noise_maps.is_empty() {
            return Err(Error::Validation(
                "purified bundle must not carry noise maps".into(),
            ));
        }
        for (idx, (token, map)) in self.planes().enumerate() {
            let name = plane_name(idx, self.key_maps.len(), token);
            if map.shape() != (self.patch_rows, self.patch_cols) {
                return Err(Error::Validation(format!(
                    "{name} is {}x{}, expected {}x{}",
                    map.rows(),
                    map.cols(),
                    self.patch_rows,
                    self.patch_cols
                )));
            }
            let raw = !self.purified || idx >= self.key_maps.len();
            if raw {
                map.check_raw()
                    .map_err(|e| Error::Validation(format!("{name}: {e}")))?;
            }
        }
        Ok(())
    }

    fn header(&self) -> Header {
        let tokens = |maps: &[(TokenRef, AttentionMap)]| maps.iter().map(|(t, _)| t.clone()).collect();
        Header {
            image_width: self.image_width,
            image_height: self.image_height,
            patch_rows: self.patch_rows,
            patch_cols: self.patch_cols,
            layer: self.layer,
            key_tokens: tokens(&self.key_maps),
            noise_tokens: tokens(&self.noise_maps),
            purified: self.purified,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header())?;
        let header_len = u32::try_from(header.len())
            .map_err(|_| Error::Validation("header longer than 4 GiB".into()))?;
        let plane_bytes = self.patch_rows * self.patch_cols * 4;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + self.plane_count() * plane_bytes);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for (_, map) in self.planes() {
            for v in map.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let got = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(Error::Format(format!("bad magic {got:?}, expected \"HAB1\"")));
        }
        if bytes.len() < PREFIX_LEN {
            return Err(Error::Corruption("file ends inside the header length".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header_end = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "header length {header_len} runs past the end of a {}-byte file",
                    bytes.len()
                ))
            })?;
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        Geometry {
            image_width: header.image_width,
            image_height: header.image_height,
            patch_rows: header.patch_rows,
            patch_cols: header.patch_cols,
        }
        .validate()?;

        let cells = header.patch_rows * header.patch_cols;
        let plane_bytes = cells * 4;
        let declared = header.key_tokens.len() + header.noise_tokens.len();
        let body = &bytes[header_end..];
        if body.len() != declared * plane_bytes {
            let present = body.len() / plane_bytes;
            let detail = if present < declared {
                let missing = header
                    .key_tokens
                    .iter()
                    .chain(&header.noise_tokens)
                    .nth(present)
                    .unwrap();
                format!(
                    "; {} is missing or truncated",
                    plane_name(present, header.key_tokens.len(), missing)
                )
            } else {
                String::new()
            };
            return Err(Error::Corruption(format!(
                "header declares {declared} planes of {plane_bytes} bytes but {} bytes follow{detail}",
                body.len()
            )));
        }

        let n_key = header.key_tokens.len();
        let mut planes = Vec::with_capacity(declared);
        for (idx, (token, chunk)) in header
            .key_tokens
            .iter()
            .chain(&header.noise_tokens)
            .zip(body.chunks_exact(plane_bytes))
            .enumerate()
        {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let map = AttentionMap::new(header.patch_rows, header.patch_cols, values)
                .map_err(|e| Error::Validation(format!("{}: {e}", plane_name(idx, n_key, token))))?;
            planes.push((token.clone(), map));
        }
        let noise_maps = planes.split_off(n_key);
        let bundle = AttentionBundle {
            image_width: header.image_width,
            image_height: header.image_height,
            patch_rows: header.patch_rows,
            patch_cols: header.patch_cols,
            layer: header.layer,
            key_maps: planes,
            noise_maps,
            purified: header.purified,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

fn plane_name(idx: usize, n_key: usize, token: &TokenRef) -> String {
    let kind = if idx < n_key { "key" } else { "noise" };
    format!("plane {idx} ({kind} token {:?} at position {})", token.text, token.position)
}

#[derive(Serialize, Deserialize)]
struct Header {
    image_width: u32,
    image_height: u32,
    patch_rows: usize,
    patch_cols: usize,
    layer: u32,
    key_tokens: Vec<TokenRef>,
    noise_tokens: Vec<TokenRef>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    purified: bool,
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<AttentionBundle> {
    let bytes = fs::read(path)?;
    AttentionBundle::from_bytes(&bytes)
}

pub fn write_bundle(bundle: &AttentionBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bundle.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AttentionBundle {
        AttentionBundle {
            image_width: 2,
            image_height: 2,
            patch_rows: 2,
            patch_cols: 2,
            layer: 15,
            key_maps: vec![(
                TokenRef::new("dog", 4),
                AttentionMap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            )],
            noise_maps: vec![],
            purified: false,
        }
    }

    fn uniform(rows: usize, cols: usize) -> AttentionMap {
        let v = 1.0 / (rows * cols) as f32 / 2.0;
        AttentionMap::new(rows, cols, vec![v; rows * cols]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = tiny();
        let bytes = b.to_bytes().unwrap();
        let back = AttentionBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        for (x, y) in b.key_maps[0].1.values().iter().zip(back.key_maps[0].1.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_matches_schema() {
        let bytes = tiny().to_bytes().unwrap();
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[8..8 + n]).unwrap();
        assert_eq!(
            header,
            r#"{"image_width":2,"image_height":2,"patch_rows":2,"patch_cols":2,"layer":15,"key_tokens":[{"text":"dog","position":4}],"noise_tokens":[]}"#
        );
    }

    #[test]
    fn bad_magic() {
        let mut bytes = tiny().to_bytes().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(AttentionBundle::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(AttentionBundle::from_bytes(b"HA"), Err(Error::Format(_))));
    }

    #[test]
    fn missing_plane_is_corruption() {
        let mut b = tiny();
        b.key_maps.push((TokenRef::new("cat", 6), uniform(2, 2)));
        b.noise_maps.push((TokenRef::new("the", 1), uniform(2, 2)));
        let bytes = b.to_bytes().unwrap();
        let truncated = &bytes[..bytes.len() - 16];
        let err = AttentionBundle::from_bytes(truncated).unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "{err}");
        let msg = err.to_string();
        assert!(msg.contains("declares 3 planes"), "{msg}");
        assert!(msg.contains("plane 2 (noise token \"the\""), "{msg}");
    }

    #[test]
    fn nan_plane_is_validation_error() {
        let mut bytes = tiny().to_bytes().unwrap();
        let end = bytes.len();
        bytes[end - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = AttentionBundle::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("plane 0 (key token \"dog\""), "{err}");
    }

    #[test]
    fn empty_key_maps_rejected() {
        let mut b = tiny();
        b.key_maps.clear();
        assert!(matches!(b.to_bytes(), Err(Error::Validation(_))));
    }

    #[test]
    fn raw_maps_must_be_sub_distributions() {
        let mut b = tiny();
        b.key_maps[0].1 = AttentionMap::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(b.validate(), Err(Error::Validation(_))));
        b.purified = true;
        b.key_maps[0].1 = AttentionMap::new(2, 2, vec![-0.5, 0.5, 1.0, 0.0]).unwrap();
        assert!(b.validate().is_ok());
    }

    #[test]
    fn file_size_follows_layout() {
        // 2 key + 3 noise planes on a 4x6 grid
        let mk = |s: &str, p| (TokenRef::new(s, p), uniform(4, 6));
        let b = AttentionBundle {
            image_width: 60,
            image_height: 40,
            patch_rows: 4,
            patch_cols: 6,
            layer: 0,
            key_maps: vec![mk("a", 0), mk("b", 1)],
            noise_maps: vec![mk("c", 2), mk("d", 3), mk("e", 4)],
            purified: false,
        };
        let bytes = b.to_bytes().unwrap();
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 4 + 4 + header_len + 5 * (4 * 6 * 4));
    }

    #[test]
    fn grid_larger_than_image_rejected() {
        let mut b = tiny();
        b.image_width = 1;
        assert!(b.validate().is_err());
    }
}
