//! Pascal VOC annotation parsing, writing, size grouping, and dataset statistics.
//!
//! Coordinates are stored 0-based inclusive internally. VOC XML files are
//! 1-based; `parse_annotation` subtracts 1 and `write_annotation` adds it back.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};

/// The 20 canonical VOC category names, in the devkit's order.
pub const VOC_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

/// Maps common alternative spellings ("airplane", "potted plant", "tv monitor", ...)
/// onto the canonical VOC names. Returns an error for names outside the vocabulary.
pub fn canonical_class(name: &str) -> Result<&'static str> {
    let trimmed = name.trim();
    if let Some(c) = VOC_CLASSES.iter().find(|c| **c == trimmed) {
        return Ok(c);
    }
    let folded: String = trimmed
        .to_ascii_lowercase()
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .collect();
    let canon = match folded.as_str() {
        "airplane" | "aeroplane" => "aeroplane",
        "bike" | "bicycle" => "bicycle",
        "bird" => "bird",
        "boat" => "boat",
        "bottle" => "bottle",
        "bus" => "bus",
        "car" => "car",
        "cat" => "cat",
        "chair" => "chair",
        "cow" => "cow",
        "table" | "diningtable" => "diningtable",
        "dog" => "dog",
        "horse" => "horse",
        "moto" | "motorcycle" | "motorbike" => "motorbike",
        "person" => "person",
        "plant" | "pottedplant" => "pottedplant",
        "sheep" => "sheep",
        "sofa" => "sofa",
        "train" => "train",
        "tv" | "tvmonitor" => "tvmonitor",
        _ => return Err(Error::UnknownClass(name.to_string())),
    };
    Ok(VOC_CLASSES.iter().find(|c| **c == canon).unwrap())
}

/// Integer pixel rectangle, inclusive on both ends (VOC convention).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl BoundingBox {
    pub fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Result<Self> {
        if xmin > xmax || ymin > ymax {
            return Err(Error::Geometry(format!(
                "degenerate box: ({xmin},{ymin},{xmax},{ymax})"
            )));
        }
        if xmin < 0 || ymin < 0 {
            return Err(Error::Geometry(format!(
                "negative coordinates: ({xmin},{ymin},{xmax},{ymax})"
            )));
        }
        Ok(BoundingBox {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    /// Inclusive width: xmax - xmin + 1.
    pub fn width(&self) -> i64 {
        self.xmax - self.xmin + 1
    }

    /// Inclusive height: ymax - ymin + 1.
    pub fn height(&self) -> i64 {
        self.ymax - self.ymin + 1
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// Pixel-count area of the intersection, 0 when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> i64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin) + 1;
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin) + 1;
        if w <= 0 || h <= 0 {
            0
        } else {
            w * h
        }
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.xmin <= other.xmin
            && self.ymin <= other.ymin
            && self.xmax >= other.xmax
            && self.ymax >= other.ymax
    }
}

/// Size group of an object by bounding-box area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Big,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Big];

    pub fn name(&self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Big => "big",
        }
    }

    pub fn parse(s: &str) -> Result<SizeClass> {
        match s.to_ascii_lowercase().as_str() {
            "small" | "s" => Ok(SizeClass::Small),
            "medium" | "m" => Ok(SizeClass::Medium),
            "big" | "large" | "b" | "l" => Ok(SizeClass::Big),
            other => Err(Error::Validation(format!("unknown size class `{other}`"))),
        }
    }
}

/// Area thresholds: below 32x32 is small, 32x32 up to 64x64 is medium,
/// 64x64 and above is big. Lower bounds are inclusive.
pub fn size_class(bbox: &BoundingBox) -> SizeClass {
    let area = bbox.area();
    if area < 32 * 32 {
        SizeClass::Small
    } else if area < 64 * 64 {
        SizeClass::Medium
    } else {
        SizeClass::Big
    }
}

/// A single annotated object inside an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedObject {
    pub class_name: String,
    pub bbox: BoundingBox,
    pub difficult: bool,
    pub truncated: bool,
    /// True iff this object was pasted by the augmentor. Never serialized.
    pub synthetic: bool,
}

impl AnnotatedObject {
    pub fn new(class_name: &str, bbox: BoundingBox) -> Result<Self> {
        Ok(AnnotatedObject {
            class_name: canonical_class(class_name)?.to_string(),
            bbox,
            difficult: false,
            truncated: false,
            synthetic: false,
        })
    }

    pub fn size_class(&self) -> SizeClass {
        size_class(&self.bbox)
    }
}

/// One VOC XML record: image metadata plus its annotated objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub objects: Vec<AnnotatedObject>,
}

impl ImageAnnotation {
    /// Checks all invariants: positive dimensions, known classes, every box
    /// inside the image extent.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.depth == 0 {
            return Err(Error::Validation(format!(
                "non-positive image dimensions for {}",
                self.image_id
            )));
        }
        for obj in &self.objects {
            canonical_class(&obj.class_name)?;
            let b = &obj.bbox;
            if b.xmax >= self.width as i64 || b.ymax >= self.height as i64 {
                return Err(Error::Validation(format!(
                    "box ({},{},{},{}) exceeds image bounds {}x{} in {}",
                    b.xmin, b.ymin, b.xmax, b.ymax, self.width, self.height, self.image_id
                )));
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, byte_offset: usize) -> (usize, usize) {
    let prefix = &text[..byte_offset.min(text.len())];
    let line = prefix.bytes().filter(|b| *b == b'\n').count() + 1;
    let col = prefix.len() - prefix.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

fn parse_int(field: &str, text: &str) -> Result<i64> {
    // Some exporters write coordinates as floats.
    let t = text.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(v) = t.parse::<f64>() {
        if v.fract() == 0.0 {
            return Ok(v as i64);
        }
    }
    Err(Error::Schema {
        field: field.to_string(),
    })
}

fn parse_flag(text: &str) -> bool {
    matches!(text.trim(), "1" | "true" | "yes")
}

#[derive(Default)]
struct ObjectDraft {
    name: Option<String>,
    difficult: bool,
    truncated: bool,
    xmin: Option<i64>,
    ymin: Option<i64>,
    xmax: Option<i64>,
    ymax: Option<i64>,
}

impl ObjectDraft {
    fn finish(self) -> Result<AnnotatedObject> {
        let name = self.name.ok_or_else(|| Error::Schema {
            field: "object/name".into(),
        })?;
        let take = |v: Option<i64>, f: &str| {
            v.ok_or_else(|| Error::Schema {
                field: format!("object/bndbox/{f}"),
            })
        };
        let xmin = take(self.xmin, "xmin")?;
        let ymin = take(self.ymin, "ymin")?;
        let xmax = take(self.xmax, "xmax")?;
        let ymax = take(self.ymax, "ymax")?;
        // check inversion on the raw coordinates: clamping at 0 below could
        // otherwise mask it
        if xmin > xmax || ymin > ymax {
            return Err(Error::Geometry(format!(
                "degenerate box: ({xmin},{ymin},{xmax},{ymax})"
            )));
        }
        // Normalize 1-based VOC coordinates to 0-based, clamping at 0 for
        // files that already use 0-based corners.
        let bbox = BoundingBox::new(
            (xmin - 1).max(0),
            (ymin - 1).max(0),
            (xmax - 1).max(0),
            (ymax - 1).max(0),
        )?;
        Ok(AnnotatedObject {
            class_name: canonical_class(&name)?.to_string(),
            bbox,
            difficult: self.difficult,
            truncated: self.truncated,
            synthetic: false,
        })
    }
}

/// Parses one VOC annotation XML document.
///
/// Unknown elements are skipped. Required fields: `filename`,
/// `size/{width,height,depth}`, and per object `name` plus all four
/// `bndbox` coordinates. `difficult` and `truncated` default to false.
pub fn parse_annotation(xml_text: &str) -> Result<ImageAnnotation> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);

    let mut path: Vec<String> = Vec::new();
    let mut filename: Option<String> = None;
    let mut width: Option<i64> = None;
    let mut height: Option<i64> = None;
    let mut depth: Option<i64> = None;
    let mut objects: Vec<AnnotatedObject> = Vec::new();
    let mut draft: Option<ObjectDraft> = None;

    loop {
        let pos = reader.buffer_position() as usize;
        match reader.read_event() {
            Err(e) => {
                let (line, column) = line_col(xml_text, pos);
                return Err(Error::XmlParse {
                    line,
                    column,
                    message: e.to_string(),
                });
            }
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if name == "object" && path.last().map(String::as_str) == Some("annotation") {
                    draft = Some(ObjectDraft::default());
                }
                path.push(name);
            }
            Ok(Event::End(_)) => {
                let name = path.pop();
                if name.as_deref() == Some("object") {
                    if let Some(d) = draft.take() {
                        objects.push(d.finish()?);
                    }
                }
            }
            Ok(Event::Text(t)) => {
                let text = t
                    .unescape()
                    .map_err(|e| {
                        let (line, column) = line_col(xml_text, pos);
                        Error::XmlParse {
                            line,
                            column,
                            message: e.to_string(),
                        }
                    })?
                    .into_owned();
                let p: Vec<&str> = path.iter().map(String::as_str).collect();
                match p.as_slice() {
                    ["annotation", "filename"] => filename = Some(text),
                    ["annotation", "size", "width"] => {
                        width = Some(parse_int("size/width", &text)?)
                    }
                    ["annotation", "size", "height"] => {
                        height = Some(parse_int("size/height", &text)?)
                    }
                    ["annotation", "size", "depth"] => {
                        depth = Some(parse_int("size/depth", &text)?)
                    }
                    ["annotation", "object", rest @ ..] => {
                        if let Some(d) = draft.as_mut() {
                            match rest {
                                ["name"] => d.name = Some(text),
                                ["difficult"] => d.difficult = parse_flag(&text),
                                ["truncated"] => d.truncated = parse_flag(&text),
                                ["bndbox", "xmin"] => {
                                    d.xmin = Some(parse_int("bndbox/xmin", &text)?)
                                }
                                ["bndbox", "ymin"] => {
                                    d.ymin = Some(parse_int("bndbox/ymin", &text)?)
                                }
                                ["bndbox", "xmax"] => {
                                    d.xmax = Some(parse_int("bndbox/xmax", &text)?)
                                }
                                ["bndbox", "ymax"] => {
                                    d.ymax = Some(parse_int("bndbox/ymax", &text)?)
                                }
                                _ => {}
                            }
                        }
                    }
                    _ => {}
                }
            }
            Ok(_) => {}
        }
    }

    let filename = filename.ok_or_else(|| Error::Schema {
        field: "filename".into(),
    })?;
    let require_pos = |v: Option<i64>, f: &str| -> Result<u32> {
        match v {
            Some(x) if x > 0 => Ok(x as u32),
            _ => Err(Error::Schema {
                field: f.to_string(),
            }),
        }
    };
    let width = require_pos(width, "size/width")?;
    let height = require_pos(height, "size/height")?;
    let depth = require_pos(depth, "size/depth")?;

    let image_id = filename
        .rsplit_once('.')
        .map(|(stem, _)| stem.to_string())
        .unwrap_or(filename);

    Ok(ImageAnnotation {
        image_id,
        width,
        height,
        depth,
        objects,
    })
}

/// Serializes an annotation to VOC XML. Coordinates are re-emitted 1-based.
/// The `synthetic` flag is not serialized: pasted objects look like natural ones.
pub fn write_annotation(ann: &ImageAnnotation) -> Result<String> {
    ann.validate()?;
    let mut xml = String::new();
    xml.push_str("<annotation>\n");
    let _ = writeln!(xml, "  <folder>VOC2007</folder>");
    let _ = writeln!(xml, "  <filename>{}.jpg</filename>", ann.image_id);
    xml.push_str("  <size>\n");
    let _ = writeln!(xml, "    <width>{}</width>", ann.width);
    let _ = writeln!(xml, "    <height>{}</height>", ann.height);
    let _ = writeln!(xml, "    <depth>{}</depth>", ann.depth);
    xml.push_str("  </size>\n");
    xml.push_str("  <segmented>0</segmented>\n");
    for obj in &ann.objects {
        xml.push_str("  <object>\n");
        let _ = writeln!(xml, "    <name>{}</name>", obj.class_name);
        let _ = writeln!(xml, "    <pose>Unspecified</pose>");
        let _ = writeln!(xml, "    <truncated>{}</truncated>", obj.truncated as u8);
        let _ = writeln!(xml, "    <difficult>{}</difficult>", obj.difficult as u8);
        xml.push_str("    <bndbox>\n");
        let _ = writeln!(xml, "      <xmin>{}</xmin>", obj.bbox.xmin + 1);
        let _ = writeln!(xml, "      <ymin>{}</ymin>", obj.bbox.ymin + 1);
        let _ = writeln!(xml, "      <xmax>{}</xmax>", obj.bbox.xmax + 1);
        let _ = writeln!(xml, "      <ymax>{}</ymax>", obj.bbox.ymax + 1);
        xml.push_str("    </bndbox>\n");
        xml.push_str("  </object>\n");
    }
    xml.push_str("</annotation>\n");
    Ok(xml)
}

/// Restricts the dataset to one size group: keeps only images having at least
/// one object of that size, and within each kept image only that size's objects.
pub fn split_by_size(dataset: &[ImageAnnotation], size: SizeClass) -> Vec<ImageAnnotation> {
    dataset
        .iter()
        .filter_map(|ann| {
            let objects: Vec<AnnotatedObject> = ann
                .objects
                .iter()
                .filter(|o| o.size_class() == size)
                .cloned()
                .collect();
            if objects.is_empty() {
                None
            } else {
                Some(ImageAnnotation {
                    image_id: ann.image_id.clone(),
                    width: ann.width,
                    height: ann.height,
                    depth: ann.depth,
                    objects,
                })
            }
        })
        .collect()
}

/// Per-cell object count: all objects, and the non-difficult subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountCell {
    pub all: u64,
    pub non_difficult: u64,
}

/// Object and image counts per class and size group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetStats {
    /// (class, size) -> counts. Classes absent from the dataset are omitted.
    pub per_class: BTreeMap<(String, SizeClass), CountCell>,
    /// Images having at least one object of the size (an image may count in
    /// several size groups).
    pub images_per_size: BTreeMap<SizeClass, u64>,
    pub total_images: u64,
    pub total_objects: u64,
}

impl DatasetStats {
    pub fn size_total(&self, size: SizeClass) -> CountCell {
        let mut cell = CountCell::default();
        for ((_, s), c) in &self.per_class {
            if *s == size {
                cell.all += c.all;
                cell.non_difficult += c.non_difficult;
            }
        }
        cell
    }

    pub fn class_cell(&self, class: &str, size: SizeClass) -> CountCell {
        self.per_class
            .get(&(class.to_string(), size))
            .copied()
            .unwrap_or_default()
    }

    /// Associative merge of two partial tallies.
    pub fn merge(mut self, other: DatasetStats) -> DatasetStats {
        for (k, v) in other.per_class {
            let cell = self.per_class.entry(k).or_default();
            cell.all += v.all;
            cell.non_difficult += v.non_difficult;
        }
        for (k, v) in other.images_per_size {
            *self.images_per_size.entry(k).or_default() += v;
        }
        self.total_images += other.total_images;
        self.total_objects += other.total_objects;
        self
    }

    /// CSV export: `class,size,all_count,non_difficult_count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,size,all_count,non_difficult_count\n");
        for class in VOC_CLASSES {
            for size in SizeClass::ALL {
                let cell = self.class_cell(class, size);
                let _ = writeln!(
                    out,
                    "{class},{},{},{}",
                    size.name(),
                    cell.all,
                    cell.non_difficult
                );
            }
        }
        for size in SizeClass::ALL {
            let cell = self.size_total(size);
            let _ = writeln!(
                out,
                "TOTAL,{},{},{}",
                size.name(),
                cell.all,
                cell.non_difficult
            );
        }
        out
    }

    /// Markdown table: one row per class, size groups as columns.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "| class | small | small (non diff) | medium | medium (non diff) | big | big (non diff) |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|\n");
        for class in VOC_CLASSES {
            let _ = write!(out, "| {class} |");
            for size in SizeClass::ALL {
                let cell = self.class_cell(class, size);
                let _ = write!(out, " {} | {} |", cell.all, cell.non_difficult);
            }
            out.push('\n');
        }
        let _ = write!(out, "| total |");
        for size in SizeClass::ALL {
            let cell = self.size_total(size);
            let _ = write!(out, " {} | {} |", cell.all, cell.non_difficult);
        }
        out.push('\n');
        out
    }
}

/// Exact per-class, per-size object counts plus per-size image counts.
pub fn dataset_stats(dataset: &[ImageAnnotation]) -> DatasetStats {
    let mut stats = DatasetStats {
        total_images: dataset.len() as u64,
        ..Default::default()
    };
    for ann in dataset {
        let mut seen_sizes = [false; 3];
        for obj in &ann.objects {
            let size = obj.size_class();
            let cell = stats
                .per_class
                .entry((obj.class_name.clone(), size))
                .or_default();
            cell.all += 1;
            if !obj.difficult {
                cell.non_difficult += 1;
            }
            stats.total_objects += 1;
            seen_sizes[size as usize] = true;
        }
        for size in SizeClass::ALL {
            if seen_sizes[size as usize] {
                *stats.images_per_size.entry(size).or_default() += 1;
            }
        }
    }
    stats
}

/// Reads every `.xml` file in a directory, sorted by file name.
pub fn load_annotation_dir(dir: &std::path::Path) -> Result<Vec<ImageAnnotation>> {
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "xml").unwrap_or(false))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.clone(), e))?;
            parse_annotation(&text)
        })
        .collect()
}
