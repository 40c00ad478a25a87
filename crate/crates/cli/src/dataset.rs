//! Dataset manifests and lazy image loading.
//!
//! Two layouts are supported: one directory per class under `root`, or an
//! explicit list file with `path[,class-name]` per line. Both yield entries
//! ordered by image id; images are decoded only when an episode needs them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fcl_core::encoders::ImageTensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "ppm", "pgm", "pbm", "pnm", "pam"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    DirPerClass,
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Image root; relative to the manifest's directory.
    pub root: PathBuf,
    pub layout: Layout,
    /// Required for the `list` layout; relative to the manifest's directory.
    #[serde(default)]
    pub list_file: Option<PathBuf>,
    /// One class name per line; line order is the class index.
    pub class_names: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
}

pub fn read_class_names(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading class names {}", path.display()))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if names.is_empty() {
        return Err(anyhow::anyhow!("{}: no class names", path.display()).into());
    }
    Ok(names)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn class_index(names: &[String], name: &str, context: impl FnOnce() -> String) -> anyhow::Result<usize> {
    match names.iter().position(|n| n == name) {
        Some(i) => Ok(i),
        None => bail!("{}: class `{name}` is not in the class-names file", context()),
    }
}

impl DatasetManifest {
    pub fn read(path: &Path) -> CliResult<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read dataset manifest {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let manifest: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::usage(format!("dataset manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((manifest, base))
    }

    /// Resolves every entry and checks that each referenced image exists.
    pub fn load(&self, base: &Path) -> CliResult<Dataset> {
        let class_names = read_class_names(&base.join(&self.class_names))?;
        let root = base.join(&self.root);
        let mut entries = match self.layout {
            Layout::DirPerClass => {
                let mut entries = Vec::new();
                for dir in sorted_dir(&root)? {
                    if !dir.is_dir() {
                        continue;
                    }
                    let class = dir.file_name().unwrap().to_string_lossy().into_owned();
                    let label = class_index(&class_names, &class, || dir.display().to_string())?;
                    for file in sorted_dir(&dir)?.into_iter().filter(|f| f.is_file() && is_image(f)) {
                        let name = file.file_name().unwrap().to_string_lossy();
                        entries.push(Entry {
                            id: format!("{class}/{name}"),
                            path: file.clone(),
                            label: Some(label),
                        });
                    }
                }
                entries
            }
            Layout::List => {
                let list = self
                    .list_file
                    .as_ref()
                    .ok_or_else(|| CliError::usage("dataset manifest: the `list` layout needs `list_file`"))?;
                let list = base.join(list);
                let text = std::fs::read_to_string(&list).with_context(|| format!("reading {}", list.display()))?;
                let mut entries = Vec::new();
                for (lineno, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (rel, class) = match line.split_once(',') {
                        Some((p, c)) => (p.trim(), Some(c.trim())),
                        None => (line, None),
                    };
                    let label = class
                        .map(|c| class_index(&class_names, c, || format!("{}:{}", list.display(), lineno + 1)))
                        .transpose()?;
                    let path = root.join(rel);
                    if !path.is_file() {
                        return Err(anyhow::anyhow!(
                            "{}:{}: missing image {}",
                            list.display(),
                            lineno + 1,
                            path.display()
                        )
                        .into());
                    }
                    entries.push(Entry {
                        id: rel.to_string(),
                        path,
                        label,
                    });
                }
                entries
            }
        };
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(anyhow::anyhow!("duplicate image id `{}`", w[0].id).into());
        }
        Ok(Dataset { class_names, entries })
    }
}

/// Decodes PNG or PNM (format sniffed from the content) into a raw RGB tensor.
pub fn decode_image(path: &Path) -> anyhow::Result<ImageTensor> {
    let img = image::ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .with_guessed_format()?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImageTensor::from_rgb8(h as usize, w as usize, img.as_raw())?)
}
