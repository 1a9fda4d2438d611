//! Sidecar schema for covariate tables.
//!
//! Covariate types are declared, never inferred: a JSON file lists each
//! column with its type, and for categorical columns the level set and the
//! reference level. Dummy coding then follows the declaration
//! deterministically.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context};
use firtree::regress::CovariateColumn;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<CovariateDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CovariateDecl {
    Continuous { name: String },
    Categorical { name: String, levels: Vec<String>, reference: String },
}

impl CovariateDecl {
    pub fn name(&self) -> &str {
        match self {
            CovariateDecl::Continuous { name } => name,
            CovariateDecl::Categorical { name, .. } => name,
        }
    }
}

impl CovariateSchema {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading schema {}", path.display()))?;
        let schema: CovariateSchema = serde_json::from_str(&text)
            .with_context(|| format!("parsing schema {}", path.display()))?;
        if schema.covariates.is_empty() {
            bail!("{}: schema declares no covariates", path.display());
        }
        let mut seen = std::collections::HashSet::new();
        for decl in &schema.covariates {
            if !seen.insert(decl.name().to_string()) {
                bail!("{}: duplicate covariate {}", path.display(), decl.name());
            }
            if let CovariateDecl::Categorical { name, levels, reference } = decl {
                if levels.len() < 2 {
                    bail!("{}: categorical {name} needs at least two levels", path.display());
                }
                if !levels.contains(reference) {
                    bail!(
                        "{}: reference {reference:?} of {name} is not among its levels",
                        path.display()
                    );
                }
            }
        }
        Ok(schema)
    }
}

fn is_na(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na")
}

/// Covariate values for one rater, kept as strings until design expansion.
/// Column order matches the schema declaration order.
#[derive(Debug, Clone)]
pub struct CovariateTable {
    /// rater_id -> one value per declared covariate; None marks a value that
    /// was missing, unparseable, or an undeclared level.
    pub rows: HashMap<String, Vec<Option<String>>>,
    /// Cells that held something, just not a usable value.
    pub n_bad_values: usize,
}

/// Reads the covariate CSV and validates it against the schema. Bad cells
/// become None with a warning count; duplicate rater ids are fatal.
pub fn load_covariates(
    path: &Path,
    schema: &CovariateSchema,
) -> anyhow::Result<CovariateTable> {
    let (header, raw_rows) = firtree::io::read_table_csv(path)?;
    if header.len() < 2 {
        bail!("{}: need a rater_id column plus covariates", path.display());
    }
    let mut col_index = Vec::with_capacity(schema.covariates.len());
    for decl in &schema.covariates {
        let idx = header
            .iter()
            .position(|h| h == decl.name())
            .with_context(|| format!("{}: missing column {}", path.display(), decl.name()))?;
        if idx == 0 {
            bail!("{}: first column must be the rater id, not a covariate", path.display());
        }
        col_index.push(idx);
    }
    let mut rows = HashMap::with_capacity(raw_rows.len());
    let mut n_bad = 0usize;
    for row in &raw_rows {
        let id = row[0].clone();
        let mut values = Vec::with_capacity(schema.covariates.len());
        for (decl, &idx) in schema.covariates.iter().zip(&col_index) {
            let field = row[idx].trim();
            let value = if is_na(field) {
                None
            } else {
                let parsed = match decl {
                    CovariateDecl::Continuous { .. } => {
                        field.parse::<f64>().map(f64::is_finite).unwrap_or(false)
                    }
                    CovariateDecl::Categorical { levels, .. } => {
                        levels.iter().any(|l| l == field)
                    }
                };
                if !parsed {
                    n_bad += 1;
                }
                parsed.then(|| field.to_string())
            };
            values.push(value);
        }
        if rows.insert(id.clone(), values).is_some() {
            bail!("{}: duplicate rater id {id:?}", path.display());
        }
    }
    if n_bad > 0 {
        log::warn!("{}: {} covariate values unparseable or undeclared", path.display(), n_bad);
    }
    Ok(CovariateTable { rows, n_bad_values: n_bad })
}

/// Builds typed covariate columns for the given raters, in schema order.
/// Every rater must have a complete covariate row; filter first.
pub fn columns_for(
    schema: &CovariateSchema,
    table: &CovariateTable,
    rater_ids: &[String],
) -> anyhow::Result<Vec<CovariateColumn>> {
    let mut columns = Vec::with_capacity(schema.covariates.len());
    for (k, decl) in schema.covariates.iter().enumerate() {
        match decl {
            CovariateDecl::Continuous { name } => {
                let mut values = Vec::with_capacity(rater_ids.len());
                for id in rater_ids {
                    let row = table.rows.get(id).with_context(|| format!("no covariates for rater {id}"))?;
                    let v = row[k].as_ref().with_context(|| format!("rater {id}: missing {name}"))?;
                    values.push(v.parse::<f64>().expect("validated at load"));
                }
                columns.push(CovariateColumn::Continuous { name: name.clone(), values });
            }
            CovariateDecl::Categorical { name, levels, reference } => {
                let mut values = Vec::with_capacity(rater_ids.len());
                for id in rater_ids {
                    let row = table.rows.get(id).with_context(|| format!("no covariates for rater {id}"))?;
                    let v = row[k].as_ref().with_context(|| format!("rater {id}: missing {name}"))?;
                    values.push(v.clone());
                }
                columns.push(CovariateColumn::Categorical {
                    name: name.clone(),
                    values,
                    levels: levels.clone(),
                    reference: reference.clone(),
                });
            }
        }
    }
    Ok(columns)
}

/// True when the rater has a usable value for every declared covariate.
pub fn has_complete_row(table: &CovariateTable, id: &str) -> bool {
    table.rows.get(id).is_some_and(|row| row.iter().all(Option::is_some))
}
