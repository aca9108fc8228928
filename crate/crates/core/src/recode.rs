//! Declarative recoding rules that map raw survey values and raw marginal
//! columns onto a shared set of binary category indicators.
//!
//! A recode file is TOML:
//!
//! ```toml
//! spec_version = 1
//! id_column = "id"
//! reference_variable = "age"
//! missing_values = ["7", "9", "refused"]
//! retain_columns = ["state"]
//!
//! [[variable]]
//! name = "age"
//! column = "age_years"
//! categories = [
//!     { name = "18to29", min = 18, max = 29 },
//!     { name = "30to49", min = 30, max = 49 },
//!     { name = "50to64", min = 50, max = 64 },
//!     { name = "65plus", min = 65 },
//! ]
//!
//! [[variable]]
//! name = "gender"
//! column = "sex"
//! categories = [
//!     { name = "male", values = ["1", "M"] },
//!     { name = "female", values = ["2", "F"] },
//! ]
//!
//! [[attribute]]
//! name = "smoking"
//! column = "smoker"
//! true_values = ["1"]
//! false_values = ["2"]
//! ```
//!
//! Category matching tries, in order: the explicit `values` list, the numeric
//! `min`/`max` range (both inclusive, `$` and `,` stripped), and finally the
//! category's own name. The last rule makes recoding idempotent: a harmonized
//! table written with category names reloads unchanged. Attributes likewise
//! accept `1`/`0` after their explicit value lists.
//!
//! Marginal columns are named `<variable>.<category>` unless a category lists
//! `marginal_columns`, in which case those raw columns are summed.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecodeSpec {
    pub spec_version: u32,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default)]
    pub reference_variable: Option<String>,
    #[serde(default)]
    pub missing_values: Vec<String>,
    #[serde(default)]
    pub retain_columns: Vec<String>,
    #[serde(default, rename = "variable")]
    pub variables: Vec<VariableSpec>,
    #[serde(default, rename = "attribute")]
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub marginals: MarginalsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    /// Raw survey column; defaults to `name`.
    #[serde(default)]
    pub column: Option<String>,
    pub categories: Vec<CategorySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default)]
    pub marginal_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default)]
    pub true_values: Vec<String>,
    #[serde(default)]
    pub false_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsSpec {
    #[serde(default = "default_zone_column")]
    pub zone_column: String,
    /// Raw marginal columns that are neither categories nor the zone id.
    #[serde(default)]
    pub ignore_columns: Vec<String>,
}

impl Default for MarginalsSpec {
    fn default() -> Self {
        MarginalsSpec {
            zone_column: default_zone_column(),
            ignore_columns: Vec::new(),
        }
    }
}

fn default_id_column() -> String {
    "id".to_string()
}

fn default_zone_column() -> String {
    "zone_id".to_string()
}

/// Outcome of classifying one raw cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classified {
    Category(usize),
    Missing,
    Unmapped,
}

impl RecodeSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: RecodeSpec =
            toml::from_str(text).map_err(|e| Error::schema(format!("recode spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("recode spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::schema(format!(
                "unsupported spec_version {} (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        if self.variables.is_empty() {
            return Err(Error::schema("recode spec declares no constraint variables"));
        }
        let mut names = HashSet::new();
        for v in &self.variables {
            check_name(&v.name)?;
            if !names.insert(v.name.as_str()) {
                return Err(Error::schema(format!("duplicate variable `{}`", v.name)));
            }
            if v.categories.len() < 2 {
                return Err(Error::schema(format!(
                    "variable `{}` needs at least two categories",
                    v.name
                )));
            }
            let mut cats = HashSet::new();
            let mut values = HashSet::new();
            for c in &v.categories {
                check_name(&c.name)?;
                if !cats.insert(c.name.as_str()) {
                    return Err(Error::schema(format!(
                        "duplicate category `{}.{}`",
                        v.name, c.name
                    )));
                }
                for raw in &c.values {
                    if !values.insert(raw.trim()) {
                        return Err(Error::schema(format!(
                            "raw value `{raw}` maps to more than one category of `{}`",
                            v.name
                        )));
                    }
                }
                if let (Some(lo), Some(hi)) = (c.min, c.max) {
                    if lo > hi {
                        return Err(Error::schema(format!(
                            "category `{}.{}` has min > max",
                            v.name, c.name
                        )));
                    }
                }
            }
            let ranged: Vec<_> = v
                .categories
                .iter()
                .filter(|c| c.min.is_some() || c.max.is_some())
                .collect();
            for (i, a) in ranged.iter().enumerate() {
                for b in &ranged[i + 1..] {
                    if ranges_overlap(a, b) {
                        return Err(Error::schema(format!(
                            "categories `{}.{}` and `{}.{}` overlap",
                            v.name, a.name, v.name, b.name
                        )));
                    }
                }
            }
        }
        for a in &self.attributes {
            check_name(&a.name)?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::schema(format!(
                    "attribute `{}` collides with another variable or attribute",
                    a.name
                )));
            }
            if a.true_values.iter().any(|t| a.false_values.contains(t)) {
                return Err(Error::schema(format!(
                    "attribute `{}` lists a value as both true and false",
                    a.name
                )));
            }
        }
        if let Some(reference) = &self.reference_variable {
            if !self.variables.iter().any(|v| &v.name == reference) {
                return Err(Error::schema(format!(
                    "reference variable `{reference}` is not a constraint variable"
                )));
            }
        }
        Ok(())
    }

    /// The variable whose category sum defines a zone's population. Defaults
    /// to `age` when present, otherwise the first declared variable.
    pub fn reference_variable(&self) -> &str {
        if let Some(r) = &self.reference_variable {
            return r;
        }
        self.variables
            .iter()
            .find(|v| v.name == "age")
            .unwrap_or(&self.variables[0])
            .name
            .as_str()
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    fn is_missing(&self, raw: &str) -> bool {
        raw.is_empty() || self.missing_values.iter().any(|m| m.trim() == raw)
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('.') || name.contains(',') {
        return Err(Error::schema(format!(
            "invalid name `{name}` (must be non-empty, without `.` or `,`)"
        )));
    }
    Ok(())
}

fn ranges_overlap(a: &CategorySpec, b: &CategorySpec) -> bool {
    let (alo, ahi) = (a.min.unwrap_or(f64::NEG_INFINITY), a.max.unwrap_or(f64::INFINITY));
    let (blo, bhi) = (b.min.unwrap_or(f64::NEG_INFINITY), b.max.unwrap_or(f64::INFINITY));
    alo <= bhi && blo <= ahi
}

fn parse_number(raw: &str) -> Option<f64> {
    let cleaned: String = raw.chars().filter(|c| *c != '$' && *c != ',').collect();
    cleaned.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

impl VariableSpec {
    pub fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn classify(&self, spec: &RecodeSpec, raw: &str) -> Classified {
        let raw = raw.trim();
        if spec.is_missing(raw) {
            return Classified::Missing;
        }
        if let Some(i) = self.categories.iter().position(|c| c.values.iter().any(|v| v.trim() == raw)) {
            return Classified::Category(i);
        }
        if let Some(x) = parse_number(raw) {
            if let Some(i) = self.categories.iter().position(|c| {
                (c.min.is_some() || c.max.is_some())
                    && c.min.is_none_or(|lo| x >= lo)
                    && c.max.is_none_or(|hi| x <= hi)
            }) {
                return Classified::Category(i);
            }
        }
        match self.categories.iter().position(|c| c.name == raw) {
            Some(i) => Classified::Category(i),
            None => Classified::Unmapped,
        }
    }

    /// Raw marginal columns feeding category `index`.
    pub fn marginal_columns(&self, index: usize) -> Vec<String> {
        let c = &self.categories[index];
        if c.marginal_columns.is_empty() {
            vec![format!("{}.{}", self.name, c.name)]
        } else {
            c.marginal_columns.clone()
        }
    }
}

impl AttributeSpec {
    pub fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }

    /// `Some(true|false)` for a usable value, `None` for missing or unmappable.
    pub fn classify(&self, spec: &RecodeSpec, raw: &str) -> Option<bool> {
        let raw = raw.trim();
        if spec.is_missing(raw) {
            return None;
        }
        if self.true_values.iter().any(|v| v.trim() == raw) {
            return Some(true);
        }
        if self.false_values.iter().any(|v| v.trim() == raw) {
            return Some(false);
        }
        match raw {
            "1" => Some(true),
            "0" => Some(false),
            _ => None,
        }
    }
}
