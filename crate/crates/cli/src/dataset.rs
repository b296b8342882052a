//! Dataset directories: `dataset.conf` (the generating configuration),
//! `manifest.csv`, and one raw tensor file per sample under `<split>/`.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use adafocus_core::crop::{CubeSize, CubeSpec};
use adafocus_core::synth::{generate, AnnotatedSample, Samples, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::tensor_io;

pub const CONFIG_FILE: &str = "dataset.conf";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: u64,
    pub label: usize,
    pub center_h: f64,
    pub center_w: f64,
    pub center_t: f64,
    pub size_h: usize,
    pub size_w: usize,
    pub size_t: usize,
    pub split: String,
    /// Path relative to the dataset directory.
    pub file: String,
    pub sha256: String,
}

impl ManifestRow {
    pub fn truth_cube(&self) -> CubeSpec {
        CubeSpec::new(
            [self.center_h, self.center_w, self.center_t],
            CubeSize::new(self.size_h, self.size_w, self.size_t),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::io(path))
}

/// Synthesises every split of `config` into `dir` and returns the files written.
pub fn write_dataset(dir: &Path, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let dataset = generate(&config.data, config.sizes)?;
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut rows = Vec::new();
    for split in Split::ALL {
        let sub = dir.join(split.name());
        std::fs::create_dir_all(&sub).map_err(Error::io(&sub))?;
        let part = dataset.split(split);
        let written: Vec<ManifestRow> = (0..part.size)
            .into_par_iter()
            .map(|i| {
                let s = part.sample(i);
                let file = format!("{}/{:06}.atsr", split.name(), s.id);
                let bytes = tensor_io::encode(&s.video);
                write_file(&dir.join(&file), &bytes)?;
                let c = s.truth_cube;
                Ok(ManifestRow {
                    sample_id: s.id,
                    label: s.label,
                    center_h: c.center[0],
                    center_w: c.center[1],
                    center_t: c.center[2],
                    size_h: c.size.h,
                    size_w: c.size.w,
                    size_t: c.size.t,
                    split: split.name().to_string(),
                    file,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<_>>()?;
        rows.extend(written);
    }
    let config_path = dir.join(CONFIG_FILE);
    write_file(&config_path, config.to_text().as_bytes())?;
    let manifest_path = dir.join(MANIFEST_FILE);
    crate::formats::write_rows(&manifest_path, &rows)?;
    Ok(vec![config_path, manifest_path])
}

/// An opened dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub config: RunConfig,
    pub rows: Vec<ManifestRow>,
}

impl DatasetDir {
    /// Reads the configuration and manifest and checks that every listed file
    /// exists with the size its video extents imply.
    pub fn open(root: &Path) -> Result<Self> {
        let config = RunConfig::load(&root.join(CONFIG_FILE))?;
        let manifest = root.join(MANIFEST_FILE);
        let rows: Vec<ManifestRow> = crate::formats::read_rows(&manifest)?;
        let [h, w, t] = config.data.extents();
        let expected_len = (8 + 4 * 4 + 8 * h * w * t) as u64;
        for split in Split::ALL {
            let want = match split {
                Split::Train => config.sizes.train,
                Split::Val => config.sizes.val,
                Split::Test => config.sizes.test,
            };
            let have = rows.iter().filter(|r| r.split == split.name()).count();
            if have != want {
                return Err(Error::format(&manifest, format!("{have} {} rows, expected {want}", split.name())));
            }
        }
        for r in &rows {
            let path = root.join(&r.file);
            let len = std::fs::metadata(&path).map_err(Error::io(&path))?.len();
            if len != expected_len {
                return Err(Error::format(&path, format!("{len} bytes, expected {expected_len}")));
            }
            if Split::from_name(&r.split).is_none() || r.label >= config.data.classes {
                return Err(Error::format(&manifest, format!("bad row for sample {}", r.sample_id)));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            config,
            rows,
        })
    }

    pub fn video_extents(&self) -> [usize; 3] {
        self.config.data.extents()
    }

    pub fn classes(&self) -> usize {
        self.config.data.classes
    }

    pub fn split(&self, split: Split) -> DirSplit<'_> {
        DirSplit {
            root: &self.root,
            rows: self.rows.iter().filter(|r| r.split == split.name()).collect(),
        }
    }
}

/// Samples of one split, read from disk on access.
pub struct DirSplit<'a> {
    root: &'a Path,
    pub rows: Vec<&'a ManifestRow>,
}

impl DirSplit<'_> {
    pub fn load(&self, index: usize) -> Result<AnnotatedSample> {
        let row = self.rows[index];
        Ok(AnnotatedSample {
            id: row.sample_id,
            video: tensor_io::load(&self.root.join(&row.file))?,
            label: row.label,
            truth_cube: row.truth_cube(),
        })
    }
}

impl Samples for DirSplit<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Panics if the file became unreadable after [`DatasetDir::open`] checked it.
    fn get(&self, index: usize) -> Cow<'_, AnnotatedSample> {
        Cow::Owned(self.load(index).unwrap_or_else(|e| panic!("{e}")))
    }
}
