//! Export manifest: the JSON document that ties the graph files and
//! embedding tables of an exported backend together.
//!
//! Paths are relative to the manifest's directory. Every artifact carries a
//! SHA-256 checksum that is verified before anything is loaded.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::table::ClassTokenTable;
use crate::error::{FclError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub source_model: String,
    /// Joint embedding width.
    pub d: usize,
    pub d_token: usize,
    pub tokens_per_class: usize,
    /// Number of hard-prompt tokens in the context table.
    pub n_ctx: usize,
    /// Square input resolution of the vision graph.
    pub image_size: usize,
    pub templates: Vec<String>,
    pub vision_graph: PathBuf,
    pub text_graph: PathBuf,
    pub class_table: PathBuf,
    /// One-class FCLE table holding the hard-prompt token embeddings that
    /// initialise the context.
    pub context_table: PathBuf,
    /// Hex SHA-256 per artifact, keyed by the path as written above.
    pub checksums: BTreeMap<String, String>,
}

/// Hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| FclError::Io(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// A manifest whose artifacts have been checked against it.
#[derive(Debug, Clone)]
pub struct VerifiedExport {
    pub manifest: ExportManifest,
    pub root: PathBuf,
    pub classes: ClassTokenTable,
    pub context: ClassTokenTable,
}

impl VerifiedExport {
    pub fn vision_path(&self) -> PathBuf {
        self.root.join(&self.manifest.vision_graph)
    }

    pub fn text_path(&self) -> PathBuf {
        self.root.join(&self.manifest.text_graph)
    }
}

impl ExportManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FclError::Format(format!("export manifest: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn artifacts(&self) -> [&Path; 4] {
        [
            &self.vision_graph,
            &self.text_graph,
            &self.class_table,
            &self.context_table,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d", self.d),
            ("d_token", self.d_token),
            ("tokens_per_class", self.tokens_per_class),
            ("image_size", self.image_size),
        ] {
            if v == 0 {
                return Err(FclError::invalid(format!("manifest.{field}"), "must be >= 1"));
            }
        }
        if self.templates.is_empty() {
            return Err(FclError::invalid(
                "manifest.templates",
                "must list at least one template",
            ));
        }
        for t in &self.templates {
            if !t.contains("{}") {
                return Err(FclError::invalid(
                    "manifest.templates",
                    format!("template `{t}` has no `{{}}` slot"),
                ));
            }
        }
        for a in self.artifacts() {
            if a.is_absolute() {
                return Err(FclError::invalid(
                    "manifest",
                    format!("artifact path {} must be relative", a.display()),
                ));
            }
            if !self.checksums.contains_key(&key(a)) {
                return Err(FclError::invalid(
                    "manifest.checksums",
                    format!("missing checksum for {}", a.display()),
                ));
            }
        }
        Ok(())
    }

    /// Reads the manifest at `path`, verifies checksums and table shapes.
    pub fn load(path: &Path) -> Result<VerifiedExport> {
        let text = std::fs::read_to_string(path).map_err(|e| FclError::Io(format!("{}: {e}", path.display())))?;
        let manifest = Self::from_json(&text)?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        manifest.verify(&root)
    }

    pub fn verify(self, root: &Path) -> Result<VerifiedExport> {
        self.validate()?;
        for a in self.artifacts() {
            let got = sha256_file(&root.join(a))?;
            let want = &self.checksums[&key(a)];
            if !got.eq_ignore_ascii_case(want) {
                return Err(FclError::Format(format!(
                    "checksum mismatch for {}: manifest {want}, file {got}",
                    a.display()
                )));
            }
        }
        let classes = ClassTokenTable::read(&root.join(&self.class_table))?;
        if classes.tokens_per_class() != self.tokens_per_class || classes.d_token() != self.d_token {
            return Err(FclError::Format(format!(
                "class table is {}x{} per class, manifest says {}x{}",
                classes.tokens_per_class(),
                classes.d_token(),
                self.tokens_per_class,
                self.d_token
            )));
        }
        let context = ClassTokenTable::read(&root.join(&self.context_table))?;
        if context.num_classes() != 1 || context.tokens_per_class() != self.n_ctx || context.d_token() != self.d_token {
            return Err(FclError::Format(format!(
                "context table must be 1x{}x{}, got {}x{}x{}",
                self.n_ctx,
                self.d_token,
                context.num_classes(),
                context.tokens_per_class(),
                context.d_token()
            )));
        }
        Ok(VerifiedExport {
            manifest: self,
            root: root.to_path_buf(),
            classes,
            context,
        })
    }
}

fn key(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_export(dir: &Path) -> ExportManifest {
        let classes = ClassTokenTable::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let context = ClassTokenTable::new(1, 2, 3, vec![1.0; 6]).unwrap();
        classes.write(&dir.join("classes.fcle")).unwrap();
        context.write(&dir.join("context.fcle")).unwrap();
        std::fs::write(dir.join("vision.onnx"), b"vision").unwrap();
        std::fs::write(dir.join("text.onnx"), b"text").unwrap();
        let names = ["vision.onnx", "text.onnx", "classes.fcle", "context.fcle"];
        ExportManifest {
            source_model: "test".into(),
            d: 4,
            d_token: 3,
            tokens_per_class: 1,
            n_ctx: 2,
            image_size: 8,
            templates: vec!["a photo of a {}.".into()],
            vision_graph: "vision.onnx".into(),
            text_graph: "text.onnx".into(),
            class_table: "classes.fcle".into(),
            context_table: "context.fcle".into(),
            checksums: names
                .iter()
                .map(|n| (n.to_string(), sha256_file(&dir.join(n)).unwrap()))
                .collect(),
        }
    }

    #[test]
    fn sha256_known_answer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_export(dir.path());
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, m.to_json()).unwrap();
        let v = ExportManifest::load(&path).unwrap();
        assert_eq!(v.manifest, m);
        assert_eq!(v.classes.num_classes(), 2);
        assert_eq!(v.context.class_row(0), vec![1.0; 6]);
    }

    #[test]
    fn tampered_artifact_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_export(dir.path());
        std::fs::write(dir.path().join("text.onnx"), b"text!").unwrap();
        let err = m.verify(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum mismatch for text.onnx"), "{err}");
    }

    #[test]
    fn shape_disagreement_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_export(dir.path());
        m.n_ctx = 3;
        assert!(m.clone().verify(dir.path()).is_err());
        m.n_ctx = 2;
        m.tokens_per_class = 2;
        assert!(m.verify(dir.path()).is_err());
    }

    #[test]
    fn schema_errors() {
        assert!(ExportManifest::from_json("{}").is_err());
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_export(dir.path());
        m.checksums.remove("vision.onnx");
        assert!(m.validate().is_err());
        let mut m = write_export(dir.path());
        m.templates = vec!["no slot".into()];
        assert!(m.validate().is_err());
        let mut json: serde_json::Value = serde_json::from_str(&write_export(dir.path()).to_json()).unwrap();
        json["extra"] = 1.into();
        assert!(ExportManifest::from_json(&json.to_string()).is_err());
    }
}
