//! Runner images: prepared environments keyed by the hash of a model's
//! canonical dependency list, built once and shared by every model and
//! invocation with the same dependencies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::error::OrchestratorError;
use crate::clock::Clock;
use crate::digest::BlobDigest;
use crate::metadata::{canonical_dependencies, dependency_hash, Dependency};

const IMAGE_FILE: &str = "image.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    Building,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerImage {
    pub image_id: String,
    pub dependency_hash: BlobDigest,
    pub dependencies: Vec<Dependency>,
    pub created_at: DateTime<Utc>,
    pub status: ImageStatus,
    #[serde(skip)]
    pub dir: PathBuf,
}

pub fn image_id_for(hash: &BlobDigest) -> String {
    format!("img-{}", &hash.hex()[..12])
}

/// Prepares the contents of an image directory.
pub trait ImageBuilder: Send + Sync {
    fn build(&self, dependencies: &[Dependency], dir: &Path) -> Result<(), String>;
}

/// Writes a pinned requirements file. With a package index configured,
/// every pin must name a known package version.
#[derive(Debug, Default, Clone)]
pub struct DirectoryImageBuilder {
    pub index: Option<BTreeMap<String, BTreeSet<String>>>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-+!=<>~".contains(c))
}

impl ImageBuilder for DirectoryImageBuilder {
    fn build(&self, dependencies: &[Dependency], dir: &Path) -> Result<(), String> {
        let mut lines = String::new();
        for d in dependencies {
            if !valid_token(&d.name) || !valid_token(&d.version) {
                return Err(format!("`{}=={}` is not a valid requirement", d.name, d.version));
            }
            if let Some(index) = &self.index {
                if !index.get(&d.name).is_some_and(|v| v.contains(&d.version)) {
                    return Err(format!("cannot resolve `{}=={}`", d.name, d.version));
                }
            }
            lines.push_str(&format!("{}=={}\n", d.name, d.version));
        }
        fs::write(dir.join("requirements.txt"), lines).map_err(|e| e.to_string())
    }
}

#[derive(Default)]
struct Slot {
    image: Option<RunnerImage>,
}

pub struct RunnerRegistry {
    root: PathBuf,
    builder: Box<dyn ImageBuilder>,
    clock: Arc<dyn Clock>,
    slots: Mutex<HashMap<BlobDigest, Arc<Mutex<Slot>>>>,
    building: Mutex<BTreeMap<String, RunnerImage>>,
    builds: AtomicU64,
}

impl std::fmt::Debug for RunnerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunnerRegistry").field("root", &self.root).finish()
    }
}

impl RunnerRegistry {
    /// Opens the registry, adopting every ready image already on disk.
    pub fn open(root: impl Into<PathBuf>, builder: Box<dyn ImageBuilder>, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut slots = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let dir = entry?.path();
            let Ok(bytes) = fs::read(dir.join(IMAGE_FILE)) else {
                // Interrupted build.
                let _ = fs::remove_dir_all(&dir);
                continue;
            };
            if let Ok(mut image) = serde_json::from_slice::<RunnerImage>(&bytes) {
                if image.status == ImageStatus::Ready {
                    image.dir = dir;
                    slots.insert(
                        image.dependency_hash.clone(),
                        Arc::new(Mutex::new(Slot { image: Some(image) })),
                    );
                }
            }
        }
        Ok(RunnerRegistry {
            root,
            builder,
            clock,
            slots: Mutex::new(slots),
            building: Mutex::new(BTreeMap::new()),
            builds: AtomicU64::new(0),
        })
    }

    /// Number of builds performed by this process.
    pub fn build_count(&self) -> u64 {
        self.builds.load(Ordering::Relaxed)
    }

    /// Ready images plus any currently building.
    pub fn images(&self) -> Vec<RunnerImage> {
        let slots: Vec<_> = self.slots.lock().values().cloned().collect();
        let mut out: Vec<RunnerImage> = slots.iter().filter_map(|s| s.try_lock().and_then(|s| s.image.clone())).collect();
        out.extend(self.building.lock().values().cloned());
        out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        out.dedup_by(|a, b| a.image_id == b.image_id);
        out
    }

    /// Returns the ready image for these dependencies, building it first if
    /// needed. Concurrent callers for the same hash wait on one build.
    pub fn resolve_runner(&self, dependencies: &[Dependency]) -> Result<RunnerImage, OrchestratorError> {
        let deps = canonical_dependencies(dependencies);
        let hash = dependency_hash(&deps);
        let slot = self.slots.lock().entry(hash.clone()).or_default().clone();
        let mut slot = slot.lock();
        if let Some(image) = &slot.image {
            return Ok(image.clone());
        }
        let image_id = image_id_for(&hash);
        let mut image = RunnerImage {
            image_id: image_id.clone(),
            dependency_hash: hash.clone(),
            dependencies: deps.clone(),
            created_at: self.clock.now(),
            status: ImageStatus::Building,
            dir: self.root.join(&image_id),
        };
        self.building.lock().insert(image_id.clone(), image.clone());
        let result = self.build_into(&image);
        self.building.lock().remove(&image_id);
        result?;
        image.status = ImageStatus::Ready;
        let write = serde_json::to_vec_pretty(&image)
            .map_err(|e| OrchestratorError::Internal(e.to_string()))
            .and_then(|b| fs::write(image.dir.join(IMAGE_FILE), b).map_err(|e| OrchestratorError::Internal(e.to_string())));
        if let Err(e) = write {
            let _ = fs::remove_dir_all(&image.dir);
            return Err(e);
        }
        slot.image = Some(image.clone());
        Ok(image)
    }

    fn build_into(&self, image: &RunnerImage) -> Result<(), OrchestratorError> {
        self.builds.fetch_add(1, Ordering::Relaxed);
        let _ = fs::remove_dir_all(&image.dir);
        fs::create_dir_all(&image.dir).map_err(|e| OrchestratorError::Internal(e.to_string()))?;
        if let Err(msg) = self.builder.build(&image.dependencies, &image.dir) {
            let _ = fs::remove_dir_all(&image.dir);
            return Err(OrchestratorError::BuildFailed(msg));
        }
        Ok(())
    }
}
