//! `manifest.json`: one entry per image.
//!
//! ```json
//! {
//!   "views": [
//!     {
//!       "file": "images/train_000.png",
//!       "role": "train",
//!       "position": [0.1, -0.2, 0.0],
//!       "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
//!       "width": 128,
//!       "height": 64,
//!       "t_far": 6.0
//!     }
//!   ]
//! }
//! ```
//!
//! `rotation` is the row-major world-from-camera matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, read_file, read_png, write_file, write_png};
use crate::dataset::{Dataset, View};
use crate::error::{Error, Result};
use crate::geometry::CameraPose;

pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_DIR: &str = "images";
const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub role: Role,
    pub position: [f64; 3],
    pub rotation: [f64; 9],
    pub width: usize,
    pub height: usize,
    pub t_far: f64,
}

impl ManifestEntry {
    pub fn pose(&self) -> CameraPose {
        let r = &self.rotation;
        CameraPose {
            position: self.position,
            rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseManifest {
    pub views: Vec<ManifestEntry>,
}

impl PoseManifest {
    /// Checks the manifest on its own, without touching image files.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let count = |role| self.views.iter().filter(|v| v.role == role).count();
        if count(Role::Train) == 0 {
            return Err(Error::data(path, "manifest has no train views"));
        }
        if count(Role::Test) == 0 {
            return Err(Error::data(path, "manifest has no test views"));
        }
        for v in &self.views {
            v.pose()
                .validate(ROTATION_TOL)
                .map_err(|e| Error::data(path, format!("entry {}: {e}", v.file)))?;
            if v.width == 0 || v.height == 0 {
                return Err(Error::data(path, format!("entry {}: zero image size", v.file)));
            }
            if !(v.t_far > 0.0 && v.t_far.is_finite()) {
                return Err(Error::data(path, format!("entry {}: invalid t_far {}", v.file, v.t_far)));
            }
        }
        Ok(())
    }
}

fn entry(view: &View, role: Role) -> ManifestEntry {
    let r = &view.pose.rotation;
    ManifestEntry {
        file: format!("{IMAGE_DIR}/{}", view.name),
        role,
        position: view.pose.position,
        rotation: [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
        width: view.image.width(),
        height: view.image.height(),
        t_far: view.t_far,
    }
}

/// Writes every view as an 8-bit PNG plus the manifest.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    create_dir(&dir.join(IMAGE_DIR))?;
    let mut views = Vec::with_capacity(ds.train.len() + ds.test.len());
    for (set, role) in [(&ds.train, Role::Train), (&ds.test, Role::Test)] {
        for v in set {
            let e = entry(v, role);
            write_png(&dir.join(&e.file), &v.image)?;
            views.push(e);
        }
    }
    let manifest = PoseManifest { views };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &json)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_file(&path)?;
    let manifest: PoseManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::data(&path, format!("malformed manifest: {e}")))?;
    manifest.validate(&path)?;
    let mut ds = Dataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for e in &manifest.views {
        let file = dir.join(&e.file);
        let image = read_png(&file)?;
        if (image.width(), image.height()) != (e.width, e.height) {
            return Err(Error::data(
                &file,
                format!(
                    "image is {}x{} but the manifest says {}x{}",
                    image.width(),
                    image.height(),
                    e.width,
                    e.height
                ),
            ));
        }
        let name = Path::new(&e.file)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.file.clone());
        let view = View {
            name,
            image,
            pose: e.pose(),
            t_far: e.t_far,
        };
        match e.role {
            Role::Train => ds.train.push(view),
            Role::Test => ds.test.push(view),
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ErpImage;

    fn tiny() -> Dataset {
        let view = |name: &str, yaw: f64, v: f64| View {
            name: name.into(),
            image: ErpImage::filled(8, 4, [v, 0.5, 1.0 - v]),
            pose: CameraPose::yawed([0.1, -0.2, 0.05], yaw),
            t_far: 3.0,
        };
        Dataset {
            train: vec![view("train_000.png", 0.3, 0.2), view("train_001.png", 1.1, 0.7)],
            test: vec![view("test_000.png", -0.4, 0.33)],
        }
    }

    fn rewrite_manifest(dir: &Path, edit: impl FnOnce(&mut PoseManifest)) {
        let path = dir.join(MANIFEST_FILE);
        let mut m: PoseManifest = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        edit(&mut m);
        std::fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.train.len(), 2);
        assert_eq!(back.test.len(), 1);
        for (a, b) in ds.train.iter().chain(&ds.test).zip(back.train.iter().chain(&back.test)) {
            assert_eq!(a.name, b.name);
            for i in 0..3 {
                assert!((a.pose.position[i] - b.pose.position[i]).abs() <= 1e-12);
                for j in 0..3 {
                    assert!((a.pose.rotation[i][j] - b.pose.rotation[i][j]).abs() <= 1e-12);
                }
            }
            for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() <= 1.0 / 510.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        rewrite_manifest(dir.path(), |m| m.views.retain(|v| v.role == Role::Test));
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no train views"), "{err}");
    }

    #[test]
    fn non_orthonormal_rotation_names_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        rewrite_manifest(dir.path(), |m| m.views[1].rotation[0] *= 1.01);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
        assert!(err.to_string().contains("images/train_001.png"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        rewrite_manifest(dir.path(), |m| m.views[0].width = 16);
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("8x4"), "{err}");
    }

    #[test]
    fn missing_image_and_malformed_manifest_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny()).unwrap();
        std::fs::remove_file(dir.path().join("images/test_000.png")).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("test_000.png"));
        std::fs::write(dir.path().join(MANIFEST_FILE), b"{\"views\": [").unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("malformed"));
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let json = r#"{"views": [], "extra": 1}"#;
        assert!(serde_json::from_str::<PoseManifest>(json).is_err());
    }
}
