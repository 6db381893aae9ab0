//! Synthetic datasets on disk and their loader.
//!
//! Layout: `<root>/images/<id>.ppm` (P6 RGB), `<root>/masks/<id>.pgm` (P5,
//! values 0 or 255) and `<root>/splits.txt` (`id<TAB>train|val|test`).

mod pnm;
mod split;
mod synth;

pub use pnm::Raster;
pub use split::{split, Split, SplitAssignment, MIN_SPLIT_IDS};
pub use synth::{render, Scene, Style, SynthSpec};

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const SPLITS_FILE: &str = "splits.txt";

/// Paired image and binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `1 x H x W`, values in `{0, 1}`.
    pub mask: Tensor<f32>,
    pub id: String,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        let (is, ms) = (image.shape(), mask.shape());
        if is.len() != 3 || is[0] != 3 || ms.len() != 3 || ms[0] != 1 || is[1..] != ms[1..] {
            return Err(Error::Dataset(format!("{id}: image {is:?} and mask {ms:?} do not pair")));
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Dataset(format!("{id}: image values outside [0, 1]")));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset(format!("{id}: mask is not binary")));
        }
        Ok(Self { image, mask, id })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

/// `3 x H x W` float image from an RGB raster.
pub fn image_tensor(r: &Raster) -> Result<Tensor<f32>> {
    if r.channels != 3 {
        return Err(Error::Format("expected an RGB (P6) image".into()));
    }
    let plane = r.width * r.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in r.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new([3, r.height, r.width], data)
}

/// `1 x H x W` binary mask; pixels at or above 128 are foreground.
pub fn mask_tensor(r: &Raster) -> Result<Tensor<f32>> {
    if r.channels != 1 {
        return Err(Error::Format("expected a grayscale (P5) mask".into()));
    }
    let data = r.pixels.iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::new([1, r.height, r.width], data)
}

/// Grayscale raster with `round(255 * v)` per pixel of a single-channel map.
pub fn gray_raster(map: &Tensor<f32>) -> Result<Raster> {
    let s = map.shape();
    let (h, w) = match s {
        [1, h, w] | [1, 1, h, w] => (*h, *w),
        _ => return Err(Error::shape("gray_raster", format!("expected one 1 x H x W map, got {s:?}"))),
    };
    let pixels = map.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Raster::new(w, h, 1, pixels)
}

fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join(IMAGES_DIR).join(format!("{id}.ppm"))
}

fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join(MASKS_DIR).join(format!("{id}.pgm"))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Renders sample `index` of `spec` straight into tensors, matching what
/// [`generate`] followed by [`load_dataset`] yields.
pub fn synth_sample(spec: &SynthSpec, index: usize) -> Result<Sample> {
    let (h, w) = spec.size;
    let scene = render(spec, index)?;
    let image = image_tensor(&Raster::new(w, h, 3, scene.rgb)?)?;
    let mask = mask_tensor(&Raster::new(w, h, 1, scene.mask)?)?;
    Sample::new(spec.sample_id(index), image, mask)
}

/// Writes `spec.count` scenes plus a seeded 80/10/10 split under `root`.
/// Returns the split.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<SplitAssignment> {
    spec.validate()?;
    let ids: Vec<String> = (0..spec.count).map(|i| spec.sample_id(i)).collect();
    let assignment = split(&ids, spec.seed)?;
    let (h, w) = spec.size;
    mkdir(&root.join(IMAGES_DIR))?;
    mkdir(&root.join(MASKS_DIR))?;
    for (i, id) in ids.iter().enumerate() {
        let scene = render(spec, i)?;
        Raster::new(w, h, 3, scene.rgb)?.write(&image_path(root, id))?;
        Raster::new(w, h, 1, scene.mask)?.write(&mask_path(root, id))?;
    }
    let sp = root.join(SPLITS_FILE);
    fs::write(&sp, assignment.to_text()).map_err(|e| Error::io(&sp, e))?;
    Ok(assignment)
}

fn stems(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Reads the split file of a dataset directory.
pub fn read_splits(root: &Path) -> Result<SplitAssignment> {
    let sp = root.join(SPLITS_FILE);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    SplitAssignment::parse(&text)
}

fn load_sample(root: &Path, id: &str) -> Result<Sample> {
    let image = image_tensor(&Raster::read(&image_path(root, id))?)?;
    let mask = mask_tensor(&Raster::read(&mask_path(root, id))?)?;
    Sample::new(id, image, mask)
}

/// Loads one split (or every pair when `split` is `None`) in lexicographic
/// id order. Every image in the directory must have a mask of the same
/// size.
pub fn load_dataset(root: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    let images = stems(&root.join(IMAGES_DIR), "ppm")?;
    let masks = stems(&root.join(MASKS_DIR), "pgm")?;
    if let Some(orphan) = images.difference(&masks).next() {
        return Err(Error::Dataset(format!("image `{orphan}` has no mask")));
    }
    if let Some(orphan) = masks.difference(&images).next() {
        return Err(Error::Dataset(format!("mask `{orphan}` has no image")));
    }
    let ids: Vec<String> = match split {
        None => images.into_iter().collect(),
        Some(s) => {
            let assignment = read_splits(root)?;
            let mut ids = assignment.ids(s).to_vec();
            ids.sort();
            if let Some(missing) = ids.iter().find(|id| !images.contains(*id)) {
                return Err(Error::Dataset(format!("split lists `{missing}` but no image exists")));
            }
            ids
        }
    };
    ids.iter().map(|id| load_sample(root, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_threshold_at_128() {
        let r = Raster::new(4, 1, 1, vec![0, 127, 128, 255]).unwrap();
        assert_eq!(mask_tensor(&r).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn image_is_planar_unit_range() {
        let r = Raster::new(2, 1, 3, vec![255, 0, 51, 0, 255, 102]).unwrap();
        let t = image_tensor(&r).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn gray_quantization() {
        let m = Tensor::new([1, 1, 3], vec![0.0f32, 0.5, 1.0]).unwrap();
        assert_eq!(gray_raster(&m).unwrap().pixels, vec![0, 128, 255]);
    }

    #[test]
    fn sample_rejects_mismatch() {
        assert!(Sample::new("a", Tensor::zeros([3, 4, 4]), Tensor::zeros([1, 4, 5])).is_err());
        assert!(Sample::new("a", Tensor::zeros([3, 4, 4]), Tensor::full([1, 4, 4], 0.5)).is_err());
        assert!(Sample::new("a", Tensor::zeros([3, 4, 4]), Tensor::ones([1, 4, 4])).is_ok());
    }
}
