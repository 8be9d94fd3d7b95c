//! Geometry and layout data model: normalized boxes, placed objects, the 3×3
//! position vocabulary and pairwise spatial relations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default generation canvas, in pixels per side.
pub const DEFAULT_CANVAS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): zero width or height")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("canvas must be positive")]
    InvalidCanvas,
    #[error("object name is empty")]
    EmptyName,
    #[error("unknown position token `{0}`")]
    UnknownPosition(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("invalid layout json: {0}")]
    Json(String),
}

/// Axis-aligned box in unit-square coordinates, origin at the top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    /// Builds a box from normalized coordinates. Coordinates are clipped to
    /// `[0, 1]` and reordered so that `x1 < x2` and `y1 < y2`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, LayoutError> {
        let degenerate = LayoutError::DegenerateBox { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(degenerate);
        }
        let clip = |v: f64| v.clamp(0.0, 1.0);
        let (x1, x2) = (clip(x1.min(x2)), clip(x1.max(x2)));
        let (y1, y2) = (clip(y1.min(y2)), clip(y1.max(y2)));
        if x1 >= x2 || y1 >= y2 {
            return Err(degenerate);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// Half-open membership test `[x1, x2) × [y1, y2)`, closed on the far
    /// edge when that edge is the canvas border.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let in_x = x >= self.x1 && (x < self.x2 || (self.x2 >= 1.0 && x <= 1.0));
        let in_y = y >= self.y1 && (y < self.y2 || (self.y2 >= 1.0 && y <= 1.0));
        in_x && in_y
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Integer pixel coordinates on a `canvas`-sized square, rounded to nearest.
    pub fn denormalize(&self, canvas: u32) -> [u32; 4] {
        let c = canvas as f64;
        [self.x1, self.y1, self.x2, self.y2].map(|v| (v * c).round() as u32)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        BoundingBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

/// Converts integer pixel coordinates emitted by a planner into a normalized box.
pub fn normalize_box(raw: [u32; 4], canvas: u32) -> Result<BoundingBox, LayoutError> {
    if canvas == 0 {
        return Err(LayoutError::InvalidCanvas);
    }
    let c = canvas as f64;
    let [x1, y1, x2, y2] = raw.map(|v| v as f64 / c);
    BoundingBox::new(x1, y1, x2, y2)
}

/// Nine-cell position vocabulary over the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionBucket {
    TopLeft,
    Top,
    TopRight,
    Left,
    Center,
    Right,
    BottomLeft,
    Bottom,
    BottomRight,
}

impl PositionBucket {
    pub const ALL: [PositionBucket; 9] = [
        PositionBucket::TopLeft,
        PositionBucket::Top,
        PositionBucket::TopRight,
        PositionBucket::Left,
        PositionBucket::Center,
        PositionBucket::Right,
        PositionBucket::BottomLeft,
        PositionBucket::Bottom,
        PositionBucket::BottomRight,
    ];

    /// `(column, row)` in the 3×3 grid.
    pub fn cell(self) -> (usize, usize) {
        let i = self as usize;
        (i % 3, i / 3)
    }

    pub fn from_cell(col: usize, row: usize) -> Self {
        Self::ALL[row.min(2) * 3 + col.min(2)]
    }

    /// The bucket's own grid cell as a box.
    pub fn cell_box(self) -> BoundingBox {
        let (col, row) = self.cell();
        let third = 1.0 / 3.0;
        let x2 = if col == 2 { 1.0 } else { (col + 1) as f64 * third };
        let y2 = if row == 2 { 1.0 } else { (row + 1) as f64 * third };
        BoundingBox::new(col as f64 * third, row as f64 * third, x2, y2)
            .expect("grid cells are non-degenerate")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PositionBucket::TopLeft => "top-left",
            PositionBucket::Top => "top",
            PositionBucket::TopRight => "top-right",
            PositionBucket::Left => "left",
            PositionBucket::Center => "center",
            PositionBucket::Right => "right",
            PositionBucket::BottomLeft => "bottom-left",
            PositionBucket::Bottom => "bottom",
            PositionBucket::BottomRight => "bottom-right",
        }
    }
}

impl fmt::Display for PositionBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionBucket {
    type Err = LayoutError;

    /// Accepts the canonical tokens plus common synonyms ("upper left",
    /// "middle", "centre", "lower", ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .trim_end_matches('.')
            .to_lowercase()
            .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
            .filter(|w| !w.is_empty())
            .map(|w| match w {
                "upper" => "top",
                "lower" => "bottom",
                "middle" | "centre" | "center" => "center",
                other => other,
            })
            .collect::<Vec<_>>()
            .join("-");
        let bucket = match norm.as_str() {
            "top-left" | "left-top" => PositionBucket::TopLeft,
            "top" | "top-center" | "center-top" => PositionBucket::Top,
            "top-right" | "right-top" => PositionBucket::TopRight,
            "left" | "center-left" | "left-center" => PositionBucket::Left,
            "center" => PositionBucket::Center,
            "right" | "center-right" | "right-center" => PositionBucket::Right,
            "bottom-left" | "left-bottom" => PositionBucket::BottomLeft,
            "bottom" | "bottom-center" | "center-bottom" => PositionBucket::Bottom,
            "bottom-right" | "right-bottom" => PositionBucket::BottomRight,
            _ => return Err(LayoutError::UnknownPosition(s.trim().to_string())),
        };
        Ok(bucket)
    }
}

fn grid_index(v: f64) -> usize {
    ((3.0 * v).floor().max(0.0) as usize).min(2)
}

/// Bucket containing the box center under the 3×3 partition.
pub fn bucket_of(b: &BoundingBox) -> PositionBucket {
    let (cx, cy) = b.center();
    bucket_of_point(cx, cy)
}

pub fn bucket_of_point(x: f64, y: f64) -> PositionBucket {
    PositionBucket::from_cell(grid_index(x), grid_index(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub fn inverse(self) -> Self {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::LeftOf => "left-of",
            Relation::RightOf => "right-of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = LayoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace(['_', ' '], "-").as_str() {
            "left-of" | "left" => Ok(Relation::LeftOf),
            "right-of" | "right" => Ok(Relation::RightOf),
            "above" | "top" => Ok(Relation::Above),
            "below" | "bottom" => Ok(Relation::Below),
            _ => Err(LayoutError::UnknownRelation(s.to_string())),
        }
    }
}

/// Relation of `a` with respect to `b`, from the center offset. A horizontal
/// offset strictly larger than the vertical one gives left/right; anything
/// else, ties included, gives above/below.
pub fn classify_relation(a: &BoundingBox, b: &BoundingBox) -> Relation {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let dx = bx - ax;
    let dy = by - ay;
    if dx.abs() > dy.abs() {
        if dx > 0.0 {
            Relation::LeftOf
        } else {
            Relation::RightOf
        }
    } else if dy > 0.0 {
        Relation::Above
    } else {
        Relation::Below
    }
}

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("persons", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("teeth", "tooth"),
    ("feet", "foot"),
    ("oxen", "ox"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("shelves", "shelf"),
    ("loaves", "loaf"),
    ("calves", "calf"),
    ("halves", "half"),
    ("scarves", "scarf"),
    ("shoes", "shoe"),
    ("toes", "toe"),
    ("ties", "tie"),
    ("pies", "pie"),
    ("cookies", "cookie"),
    ("movies", "movie"),
    ("skis", "ski"),
    ("buses", "bus"),
    ("glasses", "glass"),
    ("vases", "vase"),
    ("cases", "case"),
    ("horses", "horse"),
    ("houses", "house"),
    ("bases", "base"),
    ("giraffes", "giraffe"),
];

const INVARIANT_NOUNS: &[&str] = &[
    "sheep", "fish", "deer", "bison", "moose", "series", "species", "scissors", "glasses", "news",
    "bus", "cactus", "octopus", "grass", "glass", "dress", "compass", "bass",
];

/// Suffix-based singularization of one word with a small irregular table.
pub fn singularize(word: &str) -> String {
    let w = word.to_lowercase();
    if let Some((_, single)) = IRREGULAR_PLURALS.iter().find(|(plural, _)| *plural == w) {
        return single.to_string();
    }
    if INVARIANT_NOUNS.contains(&w.as_str()) || w.len() <= 2 {
        return w;
    }
    if let Some(stem) = w.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes"] {
        if w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if let Some(stem) = w.strip_suffix("oes") {
        return format!("{stem}o");
    }
    if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
        return w;
    }
    match w.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => w,
    }
}

/// Canonical category name: lowercase, single-spaced, last word singular.
pub fn canonical_name(name: &str) -> String {
    let mut words: Vec<String> = name
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    if let Some(last) = words.last_mut() {
        *last = singularize(last);
    }
    words.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacedObject {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(skip)]
    pub instance_index: usize,
}

impl PlacedObject {
    pub fn new(name: &str, bbox: BoundingBox) -> Result<Self, LayoutError> {
        let name = canonical_name(name);
        if name.is_empty() {
            return Err(LayoutError::EmptyName);
        }
        Ok(Self {
            name,
            bbox,
            instance_index: 0,
        })
    }
}

/// Ordered name-box pairs on a square canvas. Object order is decoding order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layout {
    pub prompt: String,
    pub canvas: u32,
    objects: Vec<PlacedObject>,
}

#[derive(Deserialize)]
struct RawObject {
    name: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Deserialize)]
struct RawLayout {
    #[serde(default)]
    prompt: String,
    #[serde(default = "default_canvas")]
    canvas: u32,
    objects: Vec<RawObject>,
}

fn default_canvas() -> u32 {
    DEFAULT_CANVAS
}

impl<'de> Deserialize<'de> for Layout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawLayout::deserialize(d)?;
        if raw.canvas == 0 {
            return Err(serde::de::Error::custom(LayoutError::InvalidCanvas));
        }
        let mut layout = Layout::new(raw.prompt, raw.canvas);
        for o in raw.objects {
            let obj = PlacedObject::new(&o.name, o.bbox).map_err(serde::de::Error::custom)?;
            layout.push(obj);
        }
        Ok(layout)
    }
}

impl Layout {
    pub fn new(prompt: impl Into<String>, canvas: u32) -> Self {
        Self {
            prompt: prompt.into(),
            canvas,
            objects: Vec::new(),
        }
    }

    /// Appends an object, assigning its ordinal within its category.
    pub fn push(&mut self, mut obj: PlacedObject) {
        obj.instance_index = self.objects.iter().filter(|o| o.name == obj.name).count();
        self.objects.push(obj);
    }

    pub fn add(&mut self, name: &str, bbox: BoundingBox) -> Result<(), LayoutError> {
        self.push(PlacedObject::new(name, bbox)?);
        Ok(())
    }

    pub fn objects(&self) -> &[PlacedObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// New layout holding the objects at `indices`, in the given order.
    pub fn subset(&self, indices: impl IntoIterator<Item = usize>) -> Layout {
        let mut out = Layout::new(self.prompt.clone(), self.canvas);
        for i in indices {
            if let Some(o) = self.objects.get(i) {
                out.push(o.clone());
            }
        }
        out
    }

    pub fn first_named(&self, name: &str) -> Option<&PlacedObject> {
        let name = canonical_name(name);
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for o in &self.objects {
            *counts.entry(o.name.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        serde_json::from_str(text).map_err(|e| LayoutError::Json(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn centered(cx: f64, cy: f64) -> BoundingBox {
        bx(cx - 0.05, cy - 0.05, cx + 0.05, cy + 0.05)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_box([0, 0, 512, 512], 512).unwrap().as_array(),
            [0.0, 0.0, 1.0, 1.0]
        );
        assert_eq!(
            normalize_box([128, 64, 384, 448], 512).unwrap().as_array(),
            [0.25, 0.125, 0.75, 0.875]
        );
        // swapped x coordinates are reordered before dividing
        assert_eq!(
            normalize_box([300, 100, 100, 200], 512).unwrap().as_array(),
            [0.1953125, 0.1953125, 0.5859375, 0.390625]
        );
    }

    #[test]
    fn normalize_rejects_degenerate_and_zero_canvas() {
        assert!(matches!(
            normalize_box([10, 10, 10, 50], 512),
            Err(LayoutError::DegenerateBox { .. })
        ));
        assert!(matches!(
            normalize_box([10, 10, 50, 10], 512),
            Err(LayoutError::DegenerateBox { .. })
        ));
        assert_eq!(normalize_box([0, 0, 1, 1], 0), Err(LayoutError::InvalidCanvas));
    }

    #[test]
    fn coordinates_beyond_canvas_are_clipped() {
        let b = normalize_box([256, 0, 1024, 512], 512).unwrap();
        assert_eq!(b.as_array(), [0.5, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn relation_examples() {
        assert_eq!(
            classify_relation(&centered(0.2, 0.5), &centered(0.8, 0.5)),
            Relation::LeftOf
        );
        assert_eq!(
            classify_relation(&centered(0.5, 0.2), &centered(0.5, 0.8)),
            Relation::Above
        );
        // |dx| == |dy| resolves to the vertical pair
        let a = bx(0.1, 0.1, 0.3, 0.3);
        let b = bx(0.4, 0.4, 0.6, 0.6);
        assert_eq!(classify_relation(&a, &b), Relation::Above);
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket_of(&bx(0.0, 0.0, 0.2, 0.2)), PositionBucket::TopLeft);
        assert_eq!(bucket_of(&bx(0.4, 0.4, 0.6, 0.6)), PositionBucket::Center);
        assert_eq!(bucket_of(&bx(0.7, 0.1, 0.95, 0.3)), PositionBucket::TopRight);
    }

    #[test]
    fn bucket_boundaries_use_floor_with_clamp() {
        assert_eq!(bucket_of_point(1.0 / 3.0, 0.0), PositionBucket::Top);
        assert_eq!(bucket_of_point(1.0, 1.0), PositionBucket::BottomRight);
        assert_eq!(bucket_of_point(0.0, 2.0 / 3.0), PositionBucket::BottomLeft);
    }

    #[test]
    fn bucket_tokens_parse() {
        assert_eq!("top-left".parse::<PositionBucket>().unwrap(), PositionBucket::TopLeft);
        assert_eq!("upper right".parse::<PositionBucket>().unwrap(), PositionBucket::TopRight);
        assert_eq!("middle".parse::<PositionBucket>().unwrap(), PositionBucket::Center);
        assert_eq!("Bottom".parse::<PositionBucket>().unwrap(), PositionBucket::Bottom);
        assert!("underneath".parse::<PositionBucket>().is_err());
        for b in PositionBucket::ALL {
            assert_eq!(b.as_str().parse::<PositionBucket>().unwrap(), b);
            assert_eq!(bucket_of(&b.cell_box()), b);
        }
    }

    #[test]
    fn singular_forms() {
        for (plural, single) in [
            ("apples", "apple"),
            ("fire hydrants", "fire hydrant"),
            ("Cell Phones", "cell phone"),
            ("strawberries", "strawberry"),
            ("benches", "bench"),
            ("boxes", "box"),
            ("people", "person"),
            ("sheep", "sheep"),
            ("tomatoes", "tomato"),
            ("bus", "bus"),
            ("cat", "cat"),
            ("knives", "knife"),
        ] {
            assert_eq!(canonical_name(plural), single, "{plural}");
        }
    }

    #[test]
    fn layout_json_round_trip() {
        let mut l = Layout::new("two apples", 512);
        l.add("apple", bx(0.1, 0.1, 0.3, 0.3)).unwrap();
        l.add("Apples", bx(0.5, 0.5, 0.7, 0.9)).unwrap();
        let back = Layout::from_json(&l.to_json()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.objects()[1].instance_index, 1);
        let v: serde_json::Value = serde_json::from_str(&l.to_json()).unwrap();
        assert_eq!(v["objects"][0]["box"][2], 0.3);
        assert_eq!(v["canvas"], 512);
    }

    #[test]
    fn layout_json_rejects_degenerate_box() {
        let text = r#"{"prompt":"x","canvas":512,"objects":[{"name":"a","box":[0.2,0.2,0.2,0.4]}]}"#;
        assert!(Layout::from_json(text).is_err());
    }

    proptest! {
        #[test]
        fn relation_is_antisymmetric(
            ax in 0.0f64..0.9, ay in 0.0f64..0.9, aw in 0.01f64..0.1, ah in 0.01f64..0.1,
            bx_ in 0.0f64..0.9, by in 0.0f64..0.9, bw in 0.01f64..0.1, bh in 0.01f64..0.1,
        ) {
            let a = bx(ax, ay, ax + aw, ay + ah);
            let b = bx(bx_, by, bx_ + bw, by + bh);
            let (acx, acy) = a.center();
            let (bcx, bcy) = b.center();
            // coincident centers have no direction
            prop_assume!(acx != bcx || acy != bcy);
            prop_assert_eq!(classify_relation(&a, &b), classify_relation(&b, &a).inverse());
        }

        #[test]
        fn buckets_tile_the_unit_square(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let owners: Vec<_> = PositionBucket::ALL
                .iter()
                .filter(|b| {
                    let (c, r) = b.cell();
                    let (col, row) = ((3.0 * x).floor() as usize, (3.0 * y).floor() as usize);
                    c == col.min(2) && r == row.min(2)
                })
                .collect();
            prop_assert_eq!(owners.len(), 1);
            prop_assert_eq!(*owners[0], bucket_of_point(x, y));
        }

        #[test]
        fn normalize_inverts_denormalize(a in 0u32..256, b in 0u32..256, w in 1u32..256, h in 1u32..256) {
            let raw = [a, b, a + w, b + h];
            let nb = normalize_box(raw, 512).unwrap();
            prop_assert_eq!(nb.denormalize(512), raw);
        }
    }
}
