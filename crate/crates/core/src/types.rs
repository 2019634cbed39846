//! Domain types shared by every stage of the toolkit, plus box geometry.
//!
//! Boxes live on the normalized `[0, 999]` grid used by layout token streams.
//! Area is computed half-open, `(x2 - x1) * (y2 - y1)`, so a box with
//! `x1 == x2` has zero area.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest coordinate on the normalized layout grid.
pub const GRID_MAX: u16 = 999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("coordinate {0} is outside the 0..=999 grid")]
    OutOfRange(i64),
    #[error("box corners are inverted: ({x1},{y1}) .. ({x2},{y2})")]
    Inverted { x1: u16, y1: u16, x2: u16, y2: u16 },
    #[error("page size must be positive, got {width}x{height}")]
    BadPageSize { width: f64, height: f64 },
}

/// Axis-aligned box on the `[0, 999]` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u16; 4]")]
pub struct BBox {
    x1: u16,
    y1: u16,
    x2: u16,
    y2: u16,
}

impl BBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, BoxError> {
        let c = |v: i64| -> Result<u16, BoxError> {
            if (0..=GRID_MAX as i64).contains(&v) {
                Ok(v as u16)
            } else {
                Err(BoxError::OutOfRange(v))
            }
        };
        let (x1, y1, x2, y2) = (c(x1)?, c(y1)?, c(x2)?, c(y2)?);
        if x1 > x2 || y1 > y2 {
            return Err(BoxError::Inverted { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Rescale a pixel-space box onto the grid. Coordinates are rounded and
    /// clamped so that slightly out-of-page detections still ingest.
    pub fn from_pixels(
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, BoxError> {
        if !(width > 0.0 && height > 0.0) {
            return Err(BoxError::BadPageSize { width, height });
        }
        let scale = |v: f64, extent: f64| -> i64 {
            ((v / extent) * GRID_MAX as f64)
                .round()
                .clamp(0.0, GRID_MAX as f64) as i64
        };
        Self::new(
            scale(x1.min(x2), width),
            scale(y1.min(y2), height),
            scale(x1.max(x2), width),
            scale(y1.max(y2), height),
        )
    }

    pub fn x1(&self) -> u16 {
        self.x1
    }
    pub fn y1(&self) -> u16 {
        self.y1
    }
    pub fn x2(&self) -> u16 {
        self.x2
    }
    pub fn y2(&self) -> u16 {
        self.y2
    }

    pub fn area(&self) -> u64 {
        (self.x2 - self.x1) as u64 * (self.y2 - self.y1) as u64
    }

    /// Overlap region, or `None` when the boxes do not touch at all.
    /// Boxes sharing only an edge intersect in a zero-area box.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x1 <= x2 && y1 <= y2).then_some(BBox { x1, y1, x2, y2 })
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = BoxError;
    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u16; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection over union on the half-open integer grid.
///
/// Two identical zero-area boxes score 1; any other pairing that involves no
/// overlapping area scores 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter as f64 / union as f64
}

/// Semantic class of a page element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Text,
    Title,
    Formula,
    Table,
    Figure,
    Header,
    Footer,
    ListItem,
    Ignore,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Text,
        Category::Title,
        Category::Formula,
        Category::Table,
        Category::Figure,
        Category::Header,
        Category::Footer,
        Category::ListItem,
        Category::Ignore,
    ];

    /// Canonical label used in layout token streams and JSON.
    pub fn label(self) -> &'static str {
        match self {
            Category::Text => "text",
            Category::Title => "title",
            Category::Formula => "formula",
            Category::Table => "table",
            Category::Figure => "figure",
            Category::Header => "header",
            Category::Footer => "footer",
            Category::ListItem => "list_item",
            Category::Ignore => "ignore",
        }
    }

    /// Map a model-emitted label to a category. Unknown labels become
    /// [`Category::Ignore`] with a warning.
    pub fn from_label(label: &str) -> Category {
        let norm = label.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "text" | "paragraph" | "plain_text" => Category::Text,
            "title" | "section_header" | "heading" | "doc_title" => Category::Title,
            "formula" | "equation" | "interline_equation" | "display_formula" => {
                Category::Formula
            }
            "table" => Category::Table,
            "figure" | "image" | "picture" => Category::Figure,
            "header" | "page_header" => Category::Header,
            "footer" | "page_footer" => Category::Footer,
            "list_item" | "list" => Category::ListItem,
            "ignore" | "abandon" => Category::Ignore,
            _ => {
                tracing::warn!(label, "unknown element category, mapped to ignore");
                Category::Ignore
            }
        }
    }

    /// Categories whose content is scored with text edit distance.
    pub fn is_text_like(self) -> bool {
        matches!(self, Category::Text | Category::Title | Category::ListItem)
    }

    /// Page furniture that never contributes to any score.
    pub fn is_excluded(self) -> bool {
        matches!(self, Category::Header | Category::Footer | Category::Ignore)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Text orientation of a layout region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    #[default]
    Up,
    Down,
    Left,
    Right,
}

impl Rotation {
    pub fn token(self) -> &'static str {
        match self {
            Rotation::Up => "<|rotate_up|>",
            Rotation::Down => "<|rotate_down|>",
            Rotation::Left => "<|rotate_left|>",
            Rotation::Right => "<|rotate_right|>",
        }
    }

    pub fn from_token(token: &str) -> Option<Rotation> {
        match token {
            "<|rotate_up|>" => Some(Rotation::Up),
            "<|rotate_down|>" => Some(Rotation::Down),
            "<|rotate_left|>" => Some(Rotation::Left),
            "<|rotate_right|>" => Some(Rotation::Right),
            _ => None,
        }
    }
}

/// One ground-truth or predicted page element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocElement {
    pub id: String,
    #[serde(default)]
    pub page_id: String,
    #[serde(deserialize_with = "deserialize_category")]
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub content: String,
    #[serde(default)]
    pub rotation: Rotation,
    pub order_index: u32,
}

fn deserialize_category<'de, D>(d: D) -> Result<Category, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = String::deserialize(d)?;
    Ok(Category::from_label(&raw))
}

impl DocElement {
    pub fn new(
        id: impl Into<String>,
        category: Category,
        content: impl Into<String>,
        order_index: u32,
    ) -> Self {
        Self {
            id: id.into(),
            page_id: String::new(),
            category,
            bbox: None,
            content: content.into(),
            rotation: Rotation::Up,
            order_index,
        }
    }

    pub fn with_page(mut self, page_id: impl Into<String>) -> Self {
        self.page_id = page_id.into();
        self
    }

    pub fn with_bbox(mut self, bbox: BBox) -> Self {
        self.bbox = Some(bbox);
        self
    }
}

/// Difficulty stratum assigned by cross-model consistency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyTier {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for DifficultyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyTier::Easy => "easy",
            DifficultyTier::Medium => "medium",
            DifficultyTier::Hard => "hard",
        })
    }
}
