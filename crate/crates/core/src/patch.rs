//! Per-class pools of object patches: crops cut from VOC images and
//! externally generated 32x32 patches. Pools are immutable after
//! construction and sampled with replacement.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::voc::{canonical_class, BoundingBox, ImageAnnotation, SizeClass};

/// Where a patch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchSource {
    VocCrop,
    Generated,
}

/// One RGB object patch. Generated patches are always 32x32.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub pixels: RgbImage,
    pub class_name: String,
    pub source: PatchSource,
    /// Stable identifier for provenance records (image id or file path).
    pub id: String,
}

impl Patch {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Map from class name to its patches. Sampling is uniform with replacement;
/// querying an absent class is an error, never a silent empty draw.
#[derive(Debug, Clone, Default)]
pub struct ObjectPool {
    patches: BTreeMap<String, Vec<Patch>>,
}

impl ObjectPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, patch: Patch) {
        self.patches
            .entry(patch.class_name.clone())
            .or_default()
            .push(patch);
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.patches.keys().map(String::as_str)
    }

    pub fn contains_class(&self, class: &str) -> bool {
        self.patches.contains_key(class)
    }

    pub fn class_len(&self, class: &str) -> usize {
        self.patches.get(class).map(Vec::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.patches.values().map(Vec::len).sum()
    }

    /// Uniform draw with replacement from one class.
    pub fn sample(&self, class: &str, rng: &mut Rng) -> Result<&Patch> {
        let list = self.patches.get(class).ok_or_else(|| Error::PoolLookup {
            class: class.to_string(),
        })?;
        if list.is_empty() {
            return Err(Error::PoolLookup {
                class: class.to_string(),
            });
        }
        Ok(&list[rng.gen_range(0..list.len())])
    }
}

/// Pixel-exact rectangular crop of `bbox` out of `image`.
pub fn crop_object(image: &RgbImage, bbox: &BoundingBox, class_name: &str) -> Result<Patch> {
    let class = canonical_class(class_name)?;
    if bbox.xmax >= image.width() as i64 || bbox.ymax >= image.height() as i64 {
        return Err(Error::Geometry(format!(
            "crop box ({},{},{},{}) outside image {}x{}",
            bbox.xmin,
            bbox.ymin,
            bbox.xmax,
            bbox.ymax,
            image.width(),
            image.height()
        )));
    }
    let (w, h) = (bbox.width() as u32, bbox.height() as u32);
    let mut pixels = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            pixels.put_pixel(
                x,
                y,
                *image.get_pixel(bbox.xmin as u32 + x, bbox.ymin as u32 + y),
            );
        }
    }
    Ok(Patch {
        pixels,
        class_name: class.to_string(),
        source: PatchSource::VocCrop,
        id: format!(
            "crop:{},{},{},{}",
            bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax
        ),
    })
}

/// Loads the image file for an annotation: `<images_dir>/<image_id>.{jpg,png}`.
pub fn load_image_for(images_dir: &Path, image_id: &str) -> Result<RgbImage> {
    for ext in ["jpg", "png", "jpeg"] {
        let path = images_dir.join(format!("{image_id}.{ext}"));
        if path.exists() {
            let img = image::open(&path).map_err(|e| Error::image(path, e))?;
            return Ok(img.to_rgb8());
        }
    }
    Err(Error::io(
        images_dir.join(format!("{image_id}.jpg")),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no image file for annotation `{image_id}`"),
        ),
    ))
}

/// Builds a pool from VOC crops: one patch per non-difficult annotated object
/// passing the optional size filter.
pub fn build_voc_pool(
    dataset: &[ImageAnnotation],
    images_dir: &Path,
    size_filter: Option<SizeClass>,
) -> Result<ObjectPool> {
    let mut pool = ObjectPool::new();
    for ann in dataset {
        let wanted: Vec<_> = ann
            .objects
            .iter()
            .filter(|o| !o.difficult)
            .filter(|o| size_filter.map(|s| o.size_class() == s).unwrap_or(true))
            .collect();
        if wanted.is_empty() {
            continue;
        }
        let image = load_image_for(images_dir, &ann.image_id)?;
        for obj in wanted {
            let mut patch = crop_object(&image, &obj.bbox, &obj.class_name)?;
            patch.id = format!("{}:{}", ann.image_id, patch.id);
            pool.insert(patch);
        }
    }
    Ok(pool)
}

/// Loads externally generated patches from `<root>/<class_name>/*.png`.
/// Every file must decode to exactly 32x32 RGB.
pub fn load_generated_pool(root: &Path) -> Result<ObjectPool> {
    let mut pool = ObjectPool::new();
    if !root.exists() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "generated pool directory"),
        ));
    }
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    for dir in class_dirs {
        let dir_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let class = canonical_class(&dir_name)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file).map_err(|e| Error::image(file.clone(), e))?;
            let rgb = img.to_rgb8();
            if rgb.width() != 32 || rgb.height() != 32 {
                return Err(Error::Validation(format!(
                    "generated patch {} is {}x{}, expected 32x32",
                    file.display(),
                    rgb.width(),
                    rgb.height()
                )));
            }
            pool.insert(Patch {
                pixels: rgb,
                class_name: class.to_string(),
                source: PatchSource::Generated,
                id: file.display().to_string(),
            });
        }
    }
    Ok(pool)
}
