//! Annotated dataset generation: every source image x grid value x crop index
//! becomes one modified crop on disk plus one manifest line.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{apply_modifier, BaseQuality, ModifierKind, ParamGrid};
use crate::error::{Error, Result};
use crate::image::{circular_pad, extract_crops, load_image, save_image, CropRect, Image};
use crate::par::{self, Execution};
use crate::rng::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const MANIFEST_FORMAT: &str = "qmrkit-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub modifier: ModifierKind,
    pub grid: ParamGrid,
    pub side: usize,
    pub crops: usize,
    pub seed: u64,
    pub base: BaseQuality,
    pub sources: Vec<String>,
    /// Sources that could not be read and were left out.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub source: String,
    pub modifier: ModifierKind,
    pub value: f64,
    pub class: usize,
    pub rect: CropRect,
    /// Seed of the crop-placement stream for this source.
    pub seed: u64,
    /// Crop path relative to the manifest directory.
    pub output: String,
}

/// Deterministic record of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    /// Directory that entry outputs are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn grid(&self) -> &ParamGrid {
        &self.header.grid
    }

    pub fn output_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.output)
    }

    /// JSON lines: the header first, then one entry per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header).map_err(|e| Error::Serde(e.to_string()))?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).map_err(|e| Error::Serde(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let text = self.to_jsonl()?;
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a manifest file; entry outputs resolve against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, e: serde_json::Error| Error::Decode {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", line + 1),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Decode {
            path: path.to_path_buf(),
            reason: "empty manifest".into(),
        })?;
        let header: ManifestHeader = serde_json::from_str(first).map_err(|e| bad(0, e))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("unsupported manifest {} v{}", header.format, header.version),
            });
        }
        let entries = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i, e)))
            .collect::<Result<Vec<ManifestEntry>>>()?;
        Ok(DatasetManifest {
            header,
            entries,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Modifies every source at every grid value, writes `crops` crops of `side`
/// pixels per combination under `out_dir/<modifier>/<class>/`, and writes the
/// manifest next to them.
///
/// Crop placement depends only on `(seed, source index, crop index)`, so all
/// classes of one source share windows whenever the modified raster keeps its size.
pub fn generate_annotated_dataset(
    images: &[PathBuf],
    grid: &ParamGrid,
    side: usize,
    crops: usize,
    seed: u64,
    out_dir: &Path,
    base: &BaseQuality,
) -> Result<DatasetManifest> {
    if images.is_empty() {
        return Err(Error::Empty("no source images".into()));
    }
    if side == 0 || crops == 0 {
        return Err(Error::Param(format!("crop side {side}, crops {crops}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let kind = grid.kind();

    let mut sources: Vec<(usize, &PathBuf, Image)> = Vec::new();
    let mut skipped = Vec::new();
    for (i, p) in images.iter().enumerate() {
        match load_image(p) {
            Ok(img) => sources.push((i, p, img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push(p.display().to_string());
            }
        }
    }
    if sources.is_empty() {
        return Err(Error::Empty("no readable source images".into()));
    }

    let n = grid.n();
    let tasks: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|s| (0..n).map(move |g| (s, g)))
        .collect();
    let results = par::map_slice(Execution::Parallel, &tasks, |&(s, g)| {
        let (idx, path, img) = &sources[s];
        let value = grid.values()[g];
        let modifier_seed = derive_seed(seed, &[*idx as u64, g as u64, 1]);
        let crop_seed = derive_seed(seed, &[*idx as u64, 0]);
        let modified = circular_pad(&apply_modifier(img, kind, value, base, modifier_seed)?, side);
        let rects = extract_crops(&modified, side, crops, crop_seed)?;
        let stem = file_stem(path);
        let mut entries = Vec::with_capacity(crops);
        for (c, rect) in rects.into_iter().enumerate() {
            let rel = format!("{kind}/{g:03}/{stem}_{idx:04}_{c:03}.png");
            save_image(&modified.crop(rect)?, out_dir.join(&rel))?;
            entries.push(ManifestEntry {
                source: path.display().to_string(),
                modifier: kind,
                value,
                class: g,
                rect,
                seed: crop_seed,
                output: rel,
            });
        }
        Ok::<_, Error>(entries)
    });

    let mut entries = Vec::with_capacity(tasks.len() * crops);
    let mut written = 0usize;
    for r in results {
        match r {
            Ok(e) => {
                written += e.len();
                entries.extend(e);
            }
            Err(e) => {
                log::error!(
                    "dataset generation aborted; {written} crops were written to {}",
                    out_dir.display()
                );
                return Err(e);
            }
        }
    }

    let manifest = DatasetManifest {
        header: ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            modifier: kind,
            grid: grid.clone(),
            side,
            crops,
            seed,
            base: *base,
            sources: images.iter().map(|p| p.display().to_string()).collect(),
            skipped,
        },
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.write()?;
    Ok(manifest)
}
