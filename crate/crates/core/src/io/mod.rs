//! Persistence: 8-bit PNG images, the dataset manifest, the flat run
//! configuration, the learning-curve CSV, and binary checkpoints and
//! sampler snapshots.
//!
//! Dataset directory:
//!
//! ```text
//! <dataset>/manifest.json
//! <dataset>/images/*.png
//! ```
//!
//! Run directory:
//!
//! ```text
//! <run>/config.json
//! <run>/curve.csv
//! <run>/checkpoint.bin
//! <run>/sampler/iter_<I>.bin
//! <run>/heatmaps/iter_<I>_image_<J>.png
//! ```

mod binary;
mod config;
mod curve;
mod manifest;

pub use binary::{load_checkpoint, load_sampler_snapshot, save_checkpoint, save_sampler_snapshot, Checkpoint, SamplerSnapshot};
pub use config::{Precision, RunConfig};
pub use curve::{read_curve, CurveRow, CurveWriter, CURVE_HEADER};
pub use manifest::{load_dataset, save_dataset, ManifestEntry, PoseManifest, Role, MANIFEST_FILE};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ErpImage;

pub fn write_png(path: &Path, img: &ErpImage) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    image::save_buffer(path, &img.to_rgb8(), w, h, image::ColorType::Rgb8).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

/// Grayscale images are expanded to RGB; alpha is dropped.
pub fn read_png(path: &Path) -> Result<ErpImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })?;
    let rgb = img.to_rgb8();
    ErpImage::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

/// Writes the first channel of an image in `[0, 1]` as 8-bit grayscale.
pub fn write_gray_png(path: &Path, img: &ErpImage) -> Result<()> {
    let bytes: Vec<u8> = img
        .pixels()
        .iter()
        .map(|p| (p[0].clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    image::save_buffer(path, &bytes, w, h, image::ColorType::L8).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Paths inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_owned() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create_dirs(&self) -> Result<()> {
        create_dir(&self.root.join("sampler"))?;
        create_dir(&self.root.join("heatmaps"))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn curve(&self) -> PathBuf {
        self.root.join("curve.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.bin")
    }

    pub fn snapshot(&self, iter: usize) -> PathBuf {
        self.root.join("sampler").join(format!("iter_{iter:06}.bin"))
    }

    pub fn heatmap(&self, iter: usize, image: usize) -> PathBuf {
        self.root
            .join("heatmaps")
            .join(format!("iter_{iter:06}_image_{image:03}.png"))
    }

    pub fn eval_summary(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn eval_bands(&self) -> PathBuf {
        self.root.join("eval_bands.csv")
    }

    pub fn eval_crops(&self) -> PathBuf {
        self.root.join("eval_crops.csv")
    }
}
