//! Pixel-space bounding boxes and their JSON file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open pixel rectangle `[x1, x2) × [y1, y2)` tagged with the token
/// that produced it. Boxes found by several tokens carry their tags
/// joined with `|`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
    pub token: String,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32, token: impl Into<String>) -> Self {
        Self {
            x1,
            y1,
            x2,
            y2,
            token: token.into(),
        }
    }

    pub fn width(&self) -> u32 {
        self.x2.saturating_sub(self.x1)
    }

    pub fn height(&self) -> u32 {
        self.y2.saturating_sub(self.y1)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn same_rect(&self, other: &BoundingBox) -> bool {
        (self.x1, self.y1, self.x2, self.y2) == (other.x1, other.y1, other.x2, other.y2)
    }

    /// Non-empty interior overlap with `[x1, x2) × [y1, y2)`.
    pub fn intersects(&self, x1: u32, y1: u32, x2: u32, y2: u32) -> bool {
        self.x1 < x2 && x1 < self.x2 && self.y1 < y2 && y1 < self.y2
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.x1 <= x && x < self.x2 && self.y1 <= y && y < self.y2
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.x1 < self.x2 && self.x2 <= width && self.y1 < self.y2 && self.y2 <= height {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "box ({}, {}, {}, {}) is empty or outside the {width}x{height} image",
                self.x1, self.y1, self.x2, self.y2
            )))
        }
    }
}

/// All boxes found for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSet {
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<BoundingBox>,
}

impl BoxSet {
    pub fn new(image_width: u32, image_height: u32) -> Self {
        Self {
            image_width,
            image_height,
            boxes: Vec::new(),
        }
    }

    pub fn with_boxes(image_width: u32, image_height: u32, boxes: Vec<BoundingBox>) -> Result<Self> {
        let set = Self {
            image_width,
            image_height,
            boxes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.boxes
            .iter()
            .try_for_each(|b| b.check_within(self.image_width, self.image_height))
    }

    /// Adds `b` unless an identical rectangle is present, in which case its
    /// token is appended to the existing tag.
    pub fn insert_merging(&mut self, b: BoundingBox) {
        match self.boxes.iter_mut().find(|e| e.same_rect(&b)) {
            Some(existing) => {
                if !existing.token.split('|').any(|t| t == b.token) {
                    existing.token.push('|');
                    existing.token.push_str(&b.token);
                }
            }
            None => self.boxes.push(b),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: BoxSet = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("malformed boxes file: {e}")))?;
        set.validate()?;
        Ok(set)
    }
}

pub fn write_boxes(boxes: &BoxSet, path: impl AsRef<Path>) -> Result<()> {
    let mut text = boxes.to_json()?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<BoxSet> {
    let text = fs::read_to_string(path)?;
    BoxSet::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_set_serializes_empty_list() {
        let json = BoxSet::new(10, 10).to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["boxes"], serde_json::json!([]));
    }

    #[test]
    fn single_box_schema() {
        let set = BoxSet::with_boxes(10, 10, vec![BoundingBox::new(2, 3, 5, 7, "dog")]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&set.to_json().unwrap()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "image_width": 10,
                "image_height": 10,
                "boxes": [{"x1": 2, "y1": 3, "x2": 5, "y2": 7, "token": "dog"}]
            })
        );
    }

    #[test]
    fn rejects_out_of_bounds_and_malformed() {
        let bad = r#"{"image_width":10,"image_height":10,"boxes":[{"x1":2,"y1":3,"x2":11,"y2":7,"token":"x"}]}"#;
        assert!(matches!(BoxSet::from_json(bad), Err(Error::Validation(_))));
        let inverted = r#"{"image_width":10,"image_height":10,"boxes":[{"x1":5,"y1":3,"x2":2,"y2":7,"token":"x"}]}"#;
        assert!(BoxSet::from_json(inverted).is_err());
        assert!(matches!(BoxSet::from_json("{\"boxes\": ["), Err(Error::Format(_))));
        let negative = r#"{"image_width":10,"image_height":10,"boxes":[{"x1":-1,"y1":3,"x2":2,"y2":7,"token":"x"}]}"#;
        assert!(BoxSet::from_json(negative).is_err());
    }

    #[test]
    fn merging_keeps_all_tags() {
        let mut set = BoxSet::new(10, 10);
        set.insert_merging(BoundingBox::new(0, 0, 2, 2, "dog"));
        set.insert_merging(BoundingBox::new(0, 0, 2, 2, "cat"));
        set.insert_merging(BoundingBox::new(0, 0, 2, 2, "dog"));
        set.insert_merging(BoundingBox::new(0, 0, 3, 2, "dog"));
        assert_eq!(set.len(), 2);
        assert_eq!(set.boxes[0].token, "dog|cat");
    }

    fn arb_box_set() -> impl Strategy<Value = BoxSet> {
        (1u32..500, 1u32..500).prop_flat_map(|(w, h)| {
            let one = (0..w, 0..h, 1..=w, 1..=h, "[a-z ]{0,8}").prop_map(move |(a, b, c, d, t)| {
                let x1 = a.min(c.saturating_sub(1));
                let y1 = b.min(d.saturating_sub(1));
                BoundingBox::new(x1, y1, c.max(x1 + 1), d.max(y1 + 1), t)
            });
            proptest::collection::vec(one, 0..6).prop_map(move |boxes| BoxSet {
                image_width: w,
                image_height: h,
                boxes,
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn json_round_trip(set in arb_box_set()) {
            prop_assert!(set.validate().is_ok());
            let back = BoxSet::from_json(&set.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
