//! MDL export by placeholder substitution into a template.
//!
//! Placeholders are spelled `${field}` with `field` one of
//! [`FIELD_NAMES`](crate::brdf::FIELD_NAMES). Values are written with exactly
//! six fractional digits; ties on the exact binary value round half to even.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::brdf::{MaterialFull, FIELD_NAMES};
use crate::error::{Error, Result};

/// Six-fraction-digit decimal rendering used for every exported value.
pub fn format_value(v: f64) -> String {
    // `+ 0.0` folds negative zero
    format!("{:.6}", v + 0.0)
}

struct Placeholder<'a> {
    start: usize,
    end: usize,
    name: &'a str,
}

fn scan(template: &str) -> Vec<Placeholder<'_>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = template[pos..].find("${") {
        let start = pos + off;
        match template[start + 2..].find('}') {
            Some(close) => {
                let end = start + 2 + close + 1;
                out.push(Placeholder {
                    start,
                    end,
                    name: &template[start + 2..end - 1],
                });
                pos = end;
            }
            None => break,
        }
    }
    out
}

/// Checks that every exported field appears exactly once and nothing else does.
pub fn validate_template(template: &str) -> Result<()> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut unknown = Vec::new();
    for p in scan(template) {
        if FIELD_NAMES.contains(&p.name) {
            *counts.entry(p.name).or_default() += 1;
        } else if !unknown.contains(&p.name.to_string()) {
            unknown.push(p.name.to_string());
        }
    }
    let missing: Vec<String> = FIELD_NAMES
        .iter()
        .filter(|n| !counts.contains_key(*n))
        .map(|n| n.to_string())
        .collect();
    let duplicate: Vec<String> = FIELD_NAMES
        .iter()
        .filter(|n| counts.get(*n).copied().unwrap_or(0) > 1)
        .map(|n| n.to_string())
        .collect();
    if missing.is_empty() && duplicate.is_empty() && unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::Template {
            missing,
            duplicate,
            unknown,
        })
    }
}

/// Substitutes `material` into `template`.
pub fn export_mdl(material: &MaterialFull, template: &str) -> Result<String> {
    validate_template(template)?;
    let values = material.to_values();
    let mut out = String::with_capacity(template.len() + 64);
    let mut last = 0;
    for p in scan(template) {
        out.push_str(&template[last..p.start]);
        let idx = FIELD_NAMES
            .iter()
            .position(|n| *n == p.name)
            .expect("validated placeholder");
        out.push_str(&format_value(values[idx]));
        last = p.end;
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Substitutes into a fragment, ignoring the exactly-once rule; unknown names
/// are still rejected.
pub fn substitute_fragment(material: &MaterialFull, fragment: &str) -> Result<String> {
    let values = material.to_values();
    let mut out = String::new();
    let mut last = 0;
    let mut unknown = Vec::new();
    for p in scan(fragment) {
        out.push_str(&fragment[last..p.start]);
        match FIELD_NAMES.iter().position(|n| *n == p.name) {
            Some(idx) => out.push_str(&format_value(values[idx])),
            None => unknown.push(p.name.to_string()),
        }
        last = p.end;
    }
    if !unknown.is_empty() {
        return Err(Error::Template {
            missing: Vec::new(),
            duplicate: Vec::new(),
            unknown,
        });
    }
    out.push_str(&fragment[last..]);
    Ok(out)
}
