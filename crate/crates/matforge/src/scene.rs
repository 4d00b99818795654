//! Paragraph to scene materials: prompt extraction, inference and MDL files.

use std::path::Path;

use matforge_core::text::extract_prompts;
use matforge_core::{export_mdl, MaterialFull};
use serde::Serialize;

use crate::app::{App, AppError, Result};
use crate::record::MaterialRecord;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMaterial {
    pub prompt: String,
    pub file: String,
    pub material: MaterialFull,
    pub mdl: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub materials: Vec<SceneMaterial>,
    pub status: String,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    prompt: &'a str,
    file: &'a str,
    material: MaterialRecord,
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    materials: Vec<ManifestEntry<'a>>,
}

/// `NN_words_of_prompt.mdl`, numbered from 1 in extraction order.
pub fn file_name(index: usize, prompt: &str) -> String {
    let slug: String = prompt
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{:02}_{slug}.mdl", index + 1)
}

pub fn build_scene(app: &App, paragraph: &str) -> Result<Scene> {
    if paragraph.trim().is_empty() {
        return Err(AppError::Usage("paragraph is empty".into()));
    }
    let records = extract_prompts(
        paragraph,
        &app.lexicon,
        &app.concreteness,
        app.config.concreteness_threshold,
    )?;
    let mut materials = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let prompt = rec.full_text();
        let material = app.predictor.predict(&prompt)?.material;
        let mdl = export_mdl(&material, &app.mdl_template)?;
        materials.push(SceneMaterial {
            file: file_name(i, &prompt),
            prompt,
            material,
            mdl,
        });
    }
    let status = match materials.len() {
        0 => "no concrete material nouns found in the paragraph".to_string(),
        1 => "extracted 1 material prompt".to_string(),
        n => format!("extracted {n} material prompts"),
    };
    Ok(Scene { materials, status })
}

impl Scene {
    pub fn manifest_json(&self) -> String {
        let manifest = Manifest {
            status: &self.status,
            materials: self
                .materials
                .iter()
                .map(|m| ManifestEntry {
                    prompt: &m.prompt,
                    file: &m.file,
                    material: (&m.material).into(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes every MDL file and the manifest into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        for m in &self.materials {
            crate::formats::write_bytes(&dir.join(&m.file), m.mdl.as_bytes())?;
        }
        crate::formats::write_bytes(&dir.join(MANIFEST_FILE), self.manifest_json().as_bytes())?;
        Ok(())
    }
}
