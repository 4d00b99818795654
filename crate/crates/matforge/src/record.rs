//! JSON form of a material: named fields plus the flat value array.

use matforge_core::brdf::{MaterialParams, MATERIAL_VALUE_COUNT};
use matforge_core::MaterialFull;
use serde::{Deserialize, Serialize};

/// Named material fields, serialized in record order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialRecord {
    pub roughness: f64,
    pub metallic: f64,
    pub specular_level: f64,
    pub anisotropy: f64,
    pub clearcoat_weight: f64,
    pub clearcoat_roughness: f64,
    pub sheen_weight: f64,
    pub sheen_tint: f64,
    pub base_color_r: f64,
    pub base_color_g: f64,
    pub base_color_b: f64,
    pub ior: f64,
    pub opacity: f64,
}

impl From<&MaterialFull> for MaterialRecord {
    fn from(m: &MaterialFull) -> Self {
        let p = &m.params;
        MaterialRecord {
            roughness: p.roughness,
            metallic: p.metallic,
            specular_level: p.specular_level,
            anisotropy: p.anisotropy,
            clearcoat_weight: p.clearcoat_weight,
            clearcoat_roughness: p.clearcoat_roughness,
            sheen_weight: p.sheen_weight,
            sheen_tint: p.sheen_tint,
            base_color_r: m.base_color[0],
            base_color_g: m.base_color[1],
            base_color_b: m.base_color[2],
            ior: m.ior,
            opacity: m.opacity,
        }
    }
}

impl MaterialRecord {
    pub fn to_material(&self) -> matforge_core::Result<MaterialFull> {
        let m = MaterialFull {
            params: MaterialParams {
                roughness: self.roughness,
                metallic: self.metallic,
                specular_level: self.specular_level,
                anisotropy: self.anisotropy,
                clearcoat_weight: self.clearcoat_weight,
                clearcoat_roughness: self.clearcoat_roughness,
                sheen_weight: self.sheen_weight,
                sheen_tint: self.sheen_tint,
            },
            base_color: [self.base_color_r, self.base_color_g, self.base_color_b],
            ior: self.ior,
            opacity: self.opacity,
        };
        m.validate()?;
        Ok(m)
    }
}

/// A prompt's material as written by `infer` and embedded in responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialDocument {
    pub prompt: String,
    pub material: MaterialRecord,
    pub values: Vec<f64>,
}

impl MaterialDocument {
    pub fn new(prompt: impl Into<String>, material: &MaterialFull) -> Self {
        let values: [f64; MATERIAL_VALUE_COUNT] = material.to_values();
        MaterialDocument {
            prompt: prompt.into(),
            material: material.into(),
            values: values.to_vec(),
        }
    }
}
