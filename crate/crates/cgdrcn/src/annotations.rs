//! Annotation data model, dataset file format, and evaluation categories.
//!
//! A dataset file is a UTF-8 JSON object: `{"version": 1, "images": [...]}`.
//! Each image object carries `id`, `width`, `height`, `scene_label`,
//! `weather` (`"none" | "rain" | "snow" | "fog_haze"`), `is_distractor`,
//! `split` (`"train" | "val" | "test"`), and `heads`, an array of
//! `[x, y, occlusion, blur, size_level]` entries where occlusion is
//! 0 = un-occluded / 1 = partially occluded / 2 = fully occluded and blur is
//! 0 = no-blur / 1 = blur. Unknown keys are rejected in strict mode and
//! collected as warnings in lenient mode.

use crate::error::{Error, Result};
use crate::seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Occlusion {
    Unoccluded,
    PartiallyOccluded,
    FullyOccluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlurLevel {
    NoBlur,
    Blur,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Weather {
    None,
    Rain,
    Snow,
    FogHaze,
}

impl Weather {
    pub fn as_str(self) -> &'static str {
        match self {
            Weather::None => "none",
            Weather::Rain => "rain",
            Weather::Snow => "snow",
            Weather::FogHaze => "fog_haze",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Weather::None),
            "rain" => Some(Weather::Rain),
            "snow" => Some(Weather::Snow),
            "fog_haze" => Some(Weather::FogHaze),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One annotated head: position plus occlusion/blur/relative-size labels.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAnnotation {
    pub x: f64,
    pub y: f64,
    pub occlusion: Occlusion,
    pub blur: BlurLevel,
    pub size_level: u32,
}

/// One annotated image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub heads: Vec<HeadAnnotation>,
    pub scene_label: String,
    pub weather: Weather,
    pub is_distractor: bool,
    pub split: Split,
}

impl ImageRecord {
    /// Ground-truth person count.
    pub fn count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_points(&self) -> Vec<(f64, f64)> {
        self.heads.iter().map(|h| (h.x, h.y)).collect()
    }

    /// Check the record's structural invariants; returns a violation message
    /// if any fails.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!("degenerate image size {}x{}", self.width, self.height));
        }
        if self.is_distractor && !self.heads.is_empty() {
            return Err(format!("distractor image has {} heads", self.heads.len()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if !(0.0..self.width as f64).contains(&h.x) || !(0.0..self.height as f64).contains(&h.y) {
                return Err(format!(
                    "head out of bounds: head[{i}] at ({}, {}) in {}x{} image",
                    h.x, h.y, self.width, self.height
                ));
            }
        }
        Ok(())
    }
}

/// Reporting buckets. Not mutually exclusive: every image is in `Overall`,
/// and `Weather` overlays the density buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Distractors,
    Low,
    Medium,
    High,
    Weather,
    Overall,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Distractors,
        Category::Low,
        Category::Medium,
        Category::High,
        Category::Weather,
        Category::Overall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Distractors => "distractors",
            Category::Low => "low",
            Category::Medium => "medium",
            Category::High => "high",
            Category::Weather => "weather",
            Category::Overall => "overall",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Assign reporting buckets from ground truth.
///
/// Low covers counts 0..=50 (distractors excluded — they report under their
/// own bucket), Medium 51..=500, High >500. Weather adds on top of the
/// density bucket whenever a weather degradation is recorded.
pub fn categorize(record: &ImageRecord) -> Vec<Category> {
    let mut cats = Vec::with_capacity(3);
    let count = record.count();
    if record.is_distractor {
        cats.push(Category::Distractors);
    } else if count <= 50 {
        cats.push(Category::Low);
    } else if count <= 500 {
        cats.push(Category::Medium);
    } else {
        cats.push(Category::High);
    }
    if record.weather != Weather::None {
        cats.push(Category::Weather);
    }
    cats.push(Category::Overall);
    cats
}

/// Deterministically reassign `round(val_fraction * N)` of the Train records
/// to Val. Returns the indices (into `records`) that became Val.
pub fn split_train_val(records: &mut [ImageRecord], val_fraction: f64, seed_value: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(Error::Usage(format!("val_fraction must be in (0, 1), got {val_fraction}")));
    }
    let train_idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train_idx.len() < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 training records to split, have {}",
            train_idx.len()
        )));
    }
    let n_val = ((val_fraction * train_idx.len() as f64).round() as usize).min(train_idx.len() - 1);
    let mut shuffled = train_idx;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "train-val-split"));
    shuffled.shuffle(&mut rng);
    let val: Vec<usize> = shuffled[..n_val].to_vec();
    for &i in &val {
        records[i].split = Split::Val;
    }
    Ok(val)
}

// ── File format ──────────────────────────────────────────────────────────

/// Diagnostics accumulated while parsing in lenient mode.
#[derive(Clone, Debug, Default)]
pub struct ParseWarnings {
    pub unknown_keys: Vec<String>,
}

fn type_name(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "bool",
        serde_json::Value::Number(_) => "number",
        serde_json::Value::String(_) => "string",
        serde_json::Value::Array(_) => "array",
        serde_json::Value::Object(_) => "object",
    }
}

fn get_field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    ctx: &str,
    key: &str,
) -> Result<&'a serde_json::Value> {
    obj.get(key).ok_or_else(|| Error::Parse(format!("{ctx}: missing key \"{key}\"")))
}

fn as_u64(v: &serde_json::Value, ctx: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| Error::Parse(format!("{ctx}: expected non-negative integer, got {}", type_name(v))))
}

fn as_f64(v: &serde_json::Value, ctx: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Parse(format!("{ctx}: expected number, got {}", type_name(v))))
}

fn as_str<'a>(v: &'a serde_json::Value, ctx: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Parse(format!("{ctx}: expected string, got {}", type_name(v))))
}

fn parse_head(v: &serde_json::Value, ctx: &str) -> Result<HeadAnnotation> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{ctx}: head entry must be an array, got {}", type_name(v))))?;
    if arr.len() != 5 {
        return Err(Error::Parse(format!("{ctx}: head entry must have 5 elements, got {}", arr.len())));
    }
    let x = as_f64(&arr[0], &format!("{ctx}[0] (x)"))?;
    let y = as_f64(&arr[1], &format!("{ctx}[1] (y)"))?;
    let occ = match as_u64(&arr[2], &format!("{ctx}[2] (occlusion)"))? {
        0 => Occlusion::Unoccluded,
        1 => Occlusion::PartiallyOccluded,
        2 => Occlusion::FullyOccluded,
        other => return Err(Error::Parse(format!("{ctx}[2]: occlusion must be 0, 1 or 2, got {other}"))),
    };
    let blur = match as_u64(&arr[3], &format!("{ctx}[3] (blur)"))? {
        0 => BlurLevel::NoBlur,
        1 => BlurLevel::Blur,
        other => return Err(Error::Parse(format!("{ctx}[3]: blur must be 0 or 1, got {other}"))),
    };
    let size_level = as_u64(&arr[4], &format!("{ctx}[4] (size_level)"))? as u32;
    Ok(HeadAnnotation { x, y, occlusion: occ, blur, size_level })
}

const IMAGE_KEYS: [&str; 8] = ["id", "width", "height", "scene_label", "weather", "is_distractor", "split", "heads"];

fn parse_image(
    v: &serde_json::Value,
    index: usize,
    strict: bool,
    warnings: &mut ParseWarnings,
) -> Result<ImageRecord> {
    let ctx = format!("images[{index}]");
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse(format!("{ctx}: expected object, got {}", type_name(v))))?;
    for key in obj.keys() {
        if !IMAGE_KEYS.contains(&key.as_str()) {
            if strict {
                return Err(Error::Parse(format!("{ctx}: unknown key \"{key}\"")));
            }
            warnings.unknown_keys.push(format!("{ctx}.{key}"));
        }
    }
    let id = as_str(get_field(obj, &ctx, "id")?, &format!("{ctx}.id"))?.to_string();
    let width = as_u64(get_field(obj, &ctx, "width")?, &format!("{ctx}.width"))? as usize;
    let height = as_u64(get_field(obj, &ctx, "height")?, &format!("{ctx}.height"))? as usize;
    let scene_label = as_str(get_field(obj, &ctx, "scene_label")?, &format!("{ctx}.scene_label"))?.to_string();
    let weather_str = as_str(get_field(obj, &ctx, "weather")?, &format!("{ctx}.weather"))?;
    let weather = Weather::parse(weather_str)
        .ok_or_else(|| Error::Parse(format!("{ctx}.weather: unknown value \"{weather_str}\"")))?;
    let is_distractor = get_field(obj, &ctx, "is_distractor")?
        .as_bool()
        .ok_or_else(|| Error::Parse(format!("{ctx}.is_distractor: expected bool")))?;
    let split_str = as_str(get_field(obj, &ctx, "split")?, &format!("{ctx}.split"))?;
    let split = Split::parse(split_str)
        .ok_or_else(|| Error::Parse(format!("{ctx}.split: unknown value \"{split_str}\"")))?;
    let heads_val = get_field(obj, &ctx, "heads")?;
    let heads_arr = heads_val
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{ctx}.heads: expected array, got {}", type_name(heads_val))))?;
    let heads = heads_arr
        .iter()
        .enumerate()
        .map(|(j, h)| parse_head(h, &format!("{ctx}.heads[{j}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageRecord { id, width, height, heads, scene_label, weather, is_distractor, split })
}

/// Parse and validate a dataset from a JSON string.
pub fn parse_dataset_str(text: &str, strict: bool) -> Result<(Vec<ImageRecord>, ParseWarnings)> {
    let root: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Parse(format!("top level: expected object, got {}", type_name(&root))))?;
    let mut warnings = ParseWarnings::default();
    for key in obj.keys() {
        if key != "version" && key != "images" {
            if strict {
                return Err(Error::Parse(format!("top level: unknown key \"{key}\"")));
            }
            warnings.unknown_keys.push(key.clone());
        }
    }
    let version = as_u64(get_field(obj, "top level", "version")?, "version")?;
    if version != 1 {
        return Err(Error::Parse(format!("unsupported dataset version {version}")));
    }
    let images = get_field(obj, "top level", "images")?
        .as_array()
        .ok_or_else(|| Error::Parse("\"images\" must be an array".into()))?;
    let records = images
        .iter()
        .enumerate()
        .map(|(i, v)| parse_image(v, i, strict, &mut warnings))
        .collect::<Result<Vec<_>>>()?;

    let violations: Vec<(String, String)> = records
        .iter()
        .filter_map(|r| r.validate().err().map(|msg| (r.id.clone(), msg)))
        .collect();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(&r.id) {
            return Err(Error::Validation(vec![(r.id.clone(), "duplicate record id".into())]));
        }
    }
    Ok((records, warnings))
}

/// Parse a dataset file in strict mode.
pub fn parse_dataset(path: &Path) -> Result<Vec<ImageRecord>> {
    parse_dataset_file(path, true).map(|(r, _)| r)
}

pub fn parse_dataset_file(path: &Path, strict: bool) -> Result<(Vec<ImageRecord>, ParseWarnings)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_dataset_str(&text, strict)
}

/// Serialize records to the dataset format. Output is deterministic: fixed
/// key order, two-space indentation.
pub fn serialize_dataset(records: &[ImageRecord]) -> String {
    use serde_json::{json, Value};
    let images: Vec<Value> = records
        .iter()
        .map(|r| {
            let heads: Vec<Value> = r
                .heads
                .iter()
                .map(|h| {
                    json!([
                        h.x,
                        h.y,
                        match h.occlusion {
                            Occlusion::Unoccluded => 0,
                            Occlusion::PartiallyOccluded => 1,
                            Occlusion::FullyOccluded => 2,
                        },
                        match h.blur {
                            BlurLevel::NoBlur => 0,
                            BlurLevel::Blur => 1,
                        },
                        h.size_level
                    ])
                })
                .collect();
            // json! with literal keys preserves this insertion order only
            // with serde_json's default BTreeMap when keys happen to sort;
            // build the map explicitly to pin the written order.
            let mut m = serde_json::Map::new();
            m.insert("id".into(), json!(r.id));
            m.insert("width".into(), json!(r.width));
            m.insert("height".into(), json!(r.height));
            m.insert("scene_label".into(), json!(r.scene_label));
            m.insert("weather".into(), json!(r.weather.as_str()));
            m.insert("is_distractor".into(), json!(r.is_distractor));
            m.insert("split".into(), json!(r.split.as_str()));
            m.insert("heads".into(), Value::Array(heads));
            Value::Object(m)
        })
        .collect();
    let mut root = serde_json::Map::new();
    root.insert("version".into(), json!(1));
    root.insert("images".into(), Value::Array(images));
    serde_json::to_string_pretty(&Value::Object(root)).expect("serialization cannot fail") + "\n"
}

pub fn write_dataset(records: &[ImageRecord], path: &Path) -> Result<()> {
    std::fs::write(path, serialize_dataset(records)).map_err(|e| Error::io(path.display().to_string(), e))
}
