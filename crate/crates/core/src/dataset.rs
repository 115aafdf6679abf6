//! In-memory multi-view ERP datasets.

use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::image::ErpImage;
use crate::scene::AnalyticScene;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    /// File name relative to the dataset's image directory.
    pub name: String,
    pub image: ErpImage,
    pub pose: CameraPose,
    pub t_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<View>,
    pub test: Vec<View>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::domain("dataset needs at least one train and one test view"));
        }
        for v in self.train.iter().chain(&self.test) {
            v.pose.validate(1e-6)?;
            if !(v.t_far > 0.0 && v.t_far.is_finite()) {
                return Err(Error::domain(format!("view {} has invalid t_far {}", v.name, v.t_far)));
            }
        }
        Ok(())
    }

    pub fn train_dims(&self) -> Vec<(usize, usize)> {
        self.train
            .iter()
            .map(|v| (v.image.width(), v.image.height()))
            .collect()
    }

    /// Largest distance a sample point can be from the origin.
    pub fn scene_extent(&self) -> f64 {
        self.train
            .iter()
            .chain(&self.test)
            .map(|v| crate::geometry::norm(v.pose.position) + v.t_far)
            .fold(0.0, f64::max)
    }
}

/// Renders ground-truth views of `scene` at deterministic poses.
pub fn render_dataset(
    scene: &AnalyticScene,
    n_train: usize,
    n_test: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Dataset> {
    let (train_poses, test_poses) = scene.dataset_poses(n_train, n_test, seed);
    let render = |poses: Vec<CameraPose>, prefix: &str| -> Result<Vec<View>> {
        poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| {
                Ok(View {
                    name: format!("{prefix}_{i:03}.png"),
                    image: scene.oracle_render(&pose, width, height)?,
                    pose,
                    t_far: scene.t_far,
                })
            })
            .collect()
    };
    let ds = Dataset {
        train: render(train_poses, "train")?,
        test: render(test_poses, "test")?,
    };
    ds.validate()?;
    Ok(ds)
}

/// Rounds every image to 8 bits, as a saved and reloaded dataset would be.
pub fn quantized(ds: &Dataset) -> Dataset {
    let q = |v: &View| View {
        image: ErpImage::from_rgb8(v.image.width(), v.image.height(), &v.image.to_rgb8())
            .expect("same dimensions"),
        ..v.clone()
    };
    Dataset {
        train: ds.train.iter().map(q).collect(),
        test: ds.test.iter().map(q).collect(),
    }
}
