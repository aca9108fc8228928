//! Survey microdata and zone marginal ingestion, recoding, sampling and
//! marginal reconciliation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::seq::index;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::recode::{Classified, RecodeSpec};
use crate::rng;

/// A constraint variable and its ordered categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Variable {
    pub name: String,
    pub categories: Vec<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, categories: &[&str]) -> Self {
        Variable {
            name: name.into(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn category_position(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

/// Column layout shared by every record of a survey table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub variables: Vec<Variable>,
    pub attributes: Vec<String>,
    pub retained: Vec<String>,
}

impl Schema {
    pub fn from_spec(spec: &RecodeSpec) -> Self {
        Schema {
            variables: spec
                .variables
                .iter()
                .map(|v| Variable {
                    name: v.name.clone(),
                    categories: v.category_names(),
                })
                .collect(),
            attributes: spec.attributes.iter().map(|a| a.name.clone()).collect(),
            retained: spec.retain_columns.clone(),
        }
    }

    pub fn variable_position(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn attribute_position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    /// Total number of indicator columns across all constraint variables.
    pub fn indicator_width(&self) -> usize {
        self.variables.iter().map(|v| v.categories.len()).sum()
    }

    /// Column position of `variable.category` in the flattened indicator vector.
    pub fn indicator_column(&self, variable: &str, category: &str) -> Option<usize> {
        let mut offset = 0;
        for v in &self.variables {
            if v.name == variable {
                return v.category_position(category).map(|c| offset + c);
            }
            offset += v.categories.len();
        }
        None
    }
}

/// One harmonized respondent. Each constraint variable is stored as the index
/// of its single active category, so the one-hot invariant holds by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyRecord {
    pub id: Arc<str>,
    pub categories: Vec<u16>,
    pub attributes: Vec<bool>,
    pub retained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveyTable {
    schema: Arc<Schema>,
    records: Vec<SurveyRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SurveyLoadReport {
    pub rows_read: usize,
    pub dropped_missing: usize,
    pub dropped_unmapped: usize,
}

impl SurveyLoadReport {
    pub fn dropped(&self) -> usize {
        self.dropped_missing + self.dropped_unmapped
    }
}

impl SurveyTable {
    pub fn new(schema: Schema, records: Vec<SurveyRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.categories.len() != schema.variables.len()
                || r.attributes.len() != schema.attributes.len()
                || r.retained.len() != schema.retained.len()
            {
                return Err(Error::data(format!("record `{}` does not match the schema", r.id)));
            }
            for (v, &c) in schema.variables.iter().zip(&r.categories) {
                if c as usize >= v.categories.len() {
                    return Err(Error::data(format!(
                        "record `{}` has category index {c} out of range for `{}`",
                        r.id, v.name
                    )));
                }
            }
            if !seen.insert(r.id.clone()) {
                return Err(Error::data(format!("duplicate survey id `{}`", r.id)));
            }
        }
        Ok(SurveyTable {
            schema: Arc::new(schema),
            records,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[SurveyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Flattened 0/1 indicator row for record `i`.
    pub fn indicators(&self, i: usize) -> Vec<u8> {
        let mut row = vec![0u8; self.schema.indicator_width()];
        let mut offset = 0;
        for (v, &c) in self.schema.variables.iter().zip(&self.records[i].categories) {
            row[offset + c as usize] = 1;
            offset += v.categories.len();
        }
        row
    }

    /// Values of one carried attribute, aligned with the records.
    pub fn attribute_column(&self, name: &str) -> Result<Vec<bool>> {
        let a = self
            .schema
            .attribute_position(name)
            .ok_or_else(|| Error::schema(format!("unknown attribute `{name}`")))?;
        Ok(self.records.iter().map(|r| r.attributes[a]).collect())
    }

    fn subset(&self, mut keep: Vec<usize>) -> SurveyTable {
        keep.sort_unstable();
        SurveyTable {
            schema: self.schema.clone(),
            records: keep.into_iter().map(|i| self.records[i].clone()).collect(),
        }
    }
}

/// Reads raw survey microdata and recodes it. Rows with a missing or
/// unmappable value in any constraint variable or carried attribute are
/// dropped and counted in the report.
pub fn load_survey(path: impl AsRef<Path>, spec: &RecodeSpec) -> Result<(SurveyTable, SurveyLoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_survey(file, spec)
}

pub fn read_survey<R: Read>(reader: R, spec: &RecodeSpec) -> Result<(SurveyTable, SurveyLoadReport)> {
    spec.validate()?;
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(format!("survey is missing column `{name}`")))
    };
    let id_col = column(&spec.id_column)?;
    let var_cols = spec
        .variables
        .iter()
        .map(|v| column(v.column()))
        .collect::<Result<Vec<_>>>()?;
    let attr_cols = spec
        .attributes
        .iter()
        .map(|a| column(a.column()))
        .collect::<Result<Vec<_>>>()?;
    let retained_cols = spec
        .retain_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut report = SurveyLoadReport::default();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    'rows: for row in csv.records() {
        let row = row?;
        report.rows_read += 1;
        let id = row.get(id_col).unwrap_or("");
        if id.is_empty() {
            return Err(Error::data(format!("survey row {} has an empty id", report.rows_read)));
        }
        let mut categories = Vec::with_capacity(var_cols.len());
        for (v, &col) in spec.variables.iter().zip(&var_cols) {
            match v.classify(spec, row.get(col).unwrap_or("")) {
                Classified::Category(c) => categories.push(c as u16),
                Classified::Missing => {
                    report.dropped_missing += 1;
                    continue 'rows;
                }
                Classified::Unmapped => {
                    report.dropped_unmapped += 1;
                    continue 'rows;
                }
            }
        }
        let mut attributes = Vec::with_capacity(attr_cols.len());
        for (a, &col) in spec.attributes.iter().zip(&attr_cols) {
            let raw = row.get(col).unwrap_or("");
            match a.classify(spec, raw) {
                Some(b) => attributes.push(b),
                None => {
                    if raw.trim().is_empty() {
                        report.dropped_missing += 1;
                    } else {
                        report.dropped_unmapped += 1;
                    }
                    continue 'rows;
                }
            }
        }
        let retained = retained_cols
            .iter()
            .map(|&c| row.get(c).unwrap_or("").to_string())
            .collect();
        let id: Arc<str> = Arc::from(id);
        if !seen.insert(id.clone()) {
            return Err(Error::data(format!("duplicate survey id `{id}`")));
        }
        records.push(SurveyRecord {
            id,
            categories,
            attributes,
            retained,
        });
    }
    if records.is_empty() {
        return Err(Error::data(format!(
            "no usable survey rows ({} read, {} dropped)",
            report.rows_read,
            report.dropped()
        )));
    }
    if report.dropped() > 0 {
        warn!(
            "dropped {} of {} survey rows with missing or unmappable values",
            report.dropped(),
            report.rows_read
        );
    }
    Ok((
        SurveyTable {
            schema: Arc::new(Schema::from_spec(spec)),
            records,
        },
        report,
    ))
}

/// Writes a harmonized survey: category labels and `1`/`0` attributes under
/// the raw column names of `spec`, so the same spec reloads it unchanged.
pub fn write_survey<W: Write>(survey: &SurveyTable, spec: &RecodeSpec, writer: W) -> Result<()> {
    let schema = survey.schema();
    if Schema::from_spec(spec) != *schema {
        return Err(Error::schema("recode spec does not describe this survey table"));
    }
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec![spec.id_column.clone()];
    header.extend(spec.variables.iter().map(|v| v.column().to_string()));
    header.extend(spec.attributes.iter().map(|a| a.column().to_string()));
    header.extend(spec.retain_columns.iter().cloned());
    out.write_record(&header)?;
    for r in survey.records() {
        let mut row: Vec<&str> = vec![&r.id];
        for (v, &c) in schema.variables.iter().zip(&r.categories) {
            row.push(&v.categories[c as usize]);
        }
        for &a in &r.attributes {
            row.push(if a { "1" } else { "0" });
        }
        row.extend(r.retained.iter().map(String::as_str));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("survey output", e))?;
    Ok(())
}

/// Proportional stratified sampling without replacement. Strata are the
/// cross-classification of `strata_vars`; each stratum receives
/// `floor(target_n * stratum_size / total)` records, so the result can fall
/// slightly short of `target_n`.
pub fn stratified_sample(
    survey: &SurveyTable,
    strata_vars: &[&str],
    target_n: usize,
    seed: u64,
) -> Result<SurveyTable> {
    let total = survey.len();
    if target_n == 0 {
        return Err(Error::data("target sample size must be positive"));
    }
    if target_n > total {
        return Err(Error::data(format!(
            "target sample size {target_n} exceeds the {total} available records"
        )));
    }
    let positions = strata_vars
        .iter()
        .map(|name| {
            survey
                .schema()
                .variable_position(name)
                .ok_or_else(|| Error::schema(format!("unknown strata variable `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut strata: BTreeMap<Vec<u16>, Vec<usize>> = BTreeMap::new();
    for (i, r) in survey.records().iter().enumerate() {
        let key = positions.iter().map(|&p| r.categories[p]).collect();
        strata.entry(key).or_default().push(i);
    }

    let mut rng = rng::stream(seed, "stratified-sample");
    let mut keep = Vec::with_capacity(target_n);
    for members in strata.values() {
        let alloc = (target_n as u128 * members.len() as u128 / total as u128) as usize;
        if alloc == 0 {
            continue;
        }
        for j in index::sample(&mut rng, members.len(), alloc) {
            keep.push(members[j]);
        }
    }
    Ok(survey.subset(keep))
}

/// Keeps records whose retained `region_column` equals `region_value`.
pub fn filter_by_region(survey: &SurveyTable, region_column: &str, region_value: &str) -> Result<SurveyTable> {
    let col = survey
        .schema()
        .retained
        .iter()
        .position(|c| c == region_column)
        .ok_or_else(|| {
            Error::schema(format!(
                "region column `{region_column}` was not retained at load (add it to retain_columns)"
            ))
        })?;
    let keep: Vec<usize> = survey
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.retained[col] == region_value)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::data(format!("no survey records for region `{region_value}`")));
    }
    Ok(survey.subset(keep))
}

/// Target person counts for one zone, indexed `[variable][category]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneMarginals {
    pub zone_id: String,
    pub counts: Vec<Vec<f64>>,
}

impl ZoneMarginals {
    pub fn variable_total(&self, variable: usize) -> f64 {
        self.counts[variable].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintTable {
    pub variables: Vec<Variable>,
    /// Index of the variable whose category sum is the zone population.
    pub reference: usize,
    /// Sorted by zone id.
    pub zones: Vec<ZoneMarginals>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MarginalsLoadReport {
    pub rows_read: usize,
    pub dropped_zones: Vec<(String, String)>,
}

impl ConstraintTable {
    pub fn new(variables: Vec<Variable>, reference: usize, mut zones: Vec<ZoneMarginals>) -> Result<Self> {
        if reference >= variables.len() {
            return Err(Error::schema("reference variable index out of range"));
        }
        let mut seen = HashSet::new();
        for z in &zones {
            if !seen.insert(z.zone_id.as_str()) {
                return Err(Error::data(format!("duplicate zone `{}`", z.zone_id)));
            }
            if z.counts.len() != variables.len() {
                return Err(Error::data(format!("zone `{}` has the wrong number of variables", z.zone_id)));
            }
            for (v, counts) in variables.iter().zip(&z.counts) {
                if counts.len() != v.categories.len() {
                    return Err(Error::data(format!(
                        "zone `{}` variable `{}` has the wrong number of categories",
                        z.zone_id, v.name
                    )));
                }
                if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err(Error::data(format!(
                        "zone `{}` variable `{}` has a negative or non-finite count",
                        z.zone_id, v.name
                    )));
                }
            }
        }
        zones.sort_by(|a, b| a.zone_id.cmp(&b.zone_id));
        Ok(ConstraintTable {
            variables,
            reference,
            zones,
        })
    }

    pub fn reference_name(&self) -> &str {
        &self.variables[self.reference].name
    }

    pub fn variable_position(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Zone population N_z: the reference variable's category sum.
    pub fn population(&self, zone: usize) -> f64 {
        self.zones[zone].variable_total(self.reference)
    }

    pub fn zone(&self, zone_id: &str) -> Option<&ZoneMarginals> {
        self.zones
            .binary_search_by(|z| z.zone_id.as_str().cmp(zone_id))
            .ok()
            .map(|i| &self.zones[i])
    }

    /// Largest |category sum - N_z| over all zones and variables.
    pub fn max_total_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (z, zone) in self.zones.iter().enumerate() {
            let n = self.population(z);
            for v in 0..self.variables.len() {
                worst = worst.max((zone.variable_total(v) - n).abs());
            }
        }
        worst
    }

    /// Restricts the table to the given zone ids (which must all exist).
    pub fn select_zones(&self, ids: &[String]) -> Result<ConstraintTable> {
        let zones = ids
            .iter()
            .map(|id| {
                self.zone(id)
                    .cloned()
                    .ok_or_else(|| Error::data(format!("unknown zone `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        ConstraintTable::new(self.variables.clone(), self.reference, zones)
    }
}

pub fn load_marginals(path: impl AsRef<Path>, spec: &RecodeSpec) -> Result<(ConstraintTable, MarginalsLoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_marginals(file, spec)
}

/// Reads zone marginals. Zones with a missing cell or a zero total for any
/// constraint variable are dropped with a warning.
pub fn read_marginals<R: Read>(reader: R, spec: &RecodeSpec) -> Result<(ConstraintTable, MarginalsLoadReport)> {
    spec.validate()?;
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let zone_col = *index.get(spec.marginals.zone_column.as_str()).ok_or_else(|| {
        Error::schema(format!("marginals are missing column `{}`", spec.marginals.zone_column))
    })?;

    let mut used: HashSet<&str> = HashSet::new();
    used.insert(&spec.marginals.zone_column);
    for c in &spec.marginals.ignore_columns {
        used.insert(c);
    }
    // layout[v][c] = header positions summed into that category
    let mut layout: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut owned_names: Vec<String> = Vec::new();
    for v in &spec.variables {
        let mut cats = Vec::new();
        for c in 0..v.categories.len() {
            let mut cols = Vec::new();
            for name in v.marginal_columns(c) {
                let pos = *index
                    .get(name.as_str())
                    .ok_or_else(|| Error::schema(format!("marginals are missing column `{name}`")))?;
                cols.push(pos);
                owned_names.push(name);
            }
            cats.push(cols);
        }
        layout.push(cats);
    }
    for name in &owned_names {
        used.insert(name);
    }
    if let Some(unknown) = headers.iter().find(|h| !used.contains(h)) {
        return Err(Error::schema(format!("unknown marginal column `{unknown}`")));
    }

    let variables: Vec<Variable> = Schema::from_spec(spec).variables;
    let reference = variables
        .iter()
        .position(|v| v.name == spec.reference_variable())
        .expect("validated reference variable");

    let mut report = MarginalsLoadReport::default();
    let mut zones = Vec::new();
    for row in csv.records() {
        let row = row?;
        report.rows_read += 1;
        let zone_id = row.get(zone_col).unwrap_or("").to_string();
        if zone_id.is_empty() {
            return Err(Error::data(format!("marginals row {} has an empty zone id", report.rows_read)));
        }
        let mut counts = Vec::with_capacity(layout.len());
        let mut drop_reason = None;
        for (v, cats) in spec.variables.iter().zip(&layout) {
            let mut vc = Vec::with_capacity(cats.len());
            for cols in cats {
                let mut sum = 0.0;
                for &col in cols {
                    let raw = row.get(col).unwrap_or("");
                    if raw.is_empty() {
                        drop_reason.get_or_insert_with(|| format!("missing count for `{}`", &headers[col]));
                        continue;
                    }
                    let x: f64 = raw.parse().map_err(|_| {
                        Error::data(format!("zone `{zone_id}`: `{}` is not a number: {raw:?}", &headers[col]))
                    })?;
                    if !x.is_finite() || x < 0.0 {
                        return Err(Error::data(format!(
                            "zone `{zone_id}`: negative or non-finite count {raw} in `{}`",
                            &headers[col]
                        )));
                    }
                    sum += x;
                }
                vc.push(sum);
            }
            if drop_reason.is_none() && vc.iter().sum::<f64>() == 0.0 {
                drop_reason = Some(format!("zero total for `{}`", v.name));
            }
            counts.push(vc);
        }
        match drop_reason {
            Some(reason) => {
                warn!("dropping zone `{zone_id}`: {reason}");
                report.dropped_zones.push((zone_id, reason));
            }
            None => zones.push(ZoneMarginals { zone_id, counts }),
        }
    }
    if zones.is_empty() {
        return Err(Error::data("no usable zones in marginals"));
    }
    Ok((ConstraintTable::new(variables, reference, zones)?, report))
}

/// Writes marginals as `zone_id,<var>.<cat>,...` with full-precision counts.
pub fn write_marginals<W: Write>(table: &ConstraintTable, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["zone_id".to_string()];
    for v in &table.variables {
        for c in &v.categories {
            header.push(format!("{}.{}", v.name, c));
        }
    }
    out.write_record(&header)?;
    for z in &table.zones {
        let mut row = vec![z.zone_id.clone()];
        for counts in &z.counts {
            row.extend(counts.iter().map(|x| x.to_string()));
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("marginals output", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconciled {
    pub table: ConstraintTable,
    /// `factors[zone][variable]`: multiplier applied to that variable's
    /// categories (1.0 for the reference variable).
    pub factors: Vec<Vec<f64>>,
}

/// Rescales every non-reference variable so its category sum equals the
/// reference variable's sum in each zone.
pub fn reconcile_marginals(table: &ConstraintTable, reference_var: &str) -> Result<Reconciled> {
    let reference = table
        .variable_position(reference_var)
        .ok_or_else(|| Error::schema(format!("unknown reference variable `{reference_var}`")))?;
    let mut zones = table.zones.clone();
    let mut factors = Vec::with_capacity(zones.len());
    for zone in &mut zones {
        let n = zone.variable_total(reference);
        let mut zf = vec![1.0; table.variables.len()];
        for (v, f) in zf.iter_mut().enumerate() {
            if v == reference {
                continue;
            }
            let sum = zone.variable_total(v);
            if sum == n {
                continue;
            }
            if sum == 0.0 {
                return Err(Error::infeasible(
                    &zone.zone_id,
                    format!(
                        "variable `{}` sums to zero but the zone population is {n}",
                        table.variables[v].name
                    ),
                ));
            }
            *f = n / sum;
            for c in &mut zone.counts[v] {
                *c *= *f;
            }
        }
        factors.push(zf);
    }
    Ok(Reconciled {
        table: ConstraintTable {
            variables: table.variables.clone(),
            reference,
            zones,
        },
        factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
spec_version = 1
retain_columns = ["state"]
[[variable]]
name = "age"
column = "age_years"
categories = [
    { name = "18to29", min = 18, max = 29 },
    { name = "30to49", min = 30, max = 49 },
    { name = "50to64", min = 50, max = 64 },
    { name = "65plus", min = 65 },
]
[[variable]]
name = "income"
categories = [
    { name = "lt25k", max = 24999 },
    { name = "25to49k", min = 25000, max = 49999 },
    { name = "50to74k", min = 50000, max = 74999 },
    { name = "75kplus", min = 75000 },
]
[[attribute]]
name = "smoking"
column = "smoker"
true_values = ["yes"]
false_values = ["no"]
"#;

    const SURVEY: &str = "\
id,age_years,income,smoker,state
1,67,60000,yes,FL
2,25,$60000,no,NY
3,40,,no,FL
4,55,20000,yes,NY
5,70,90000,maybe,FL
6,19,30000,no,FL
7,33,80000,no,NY
8,45,40000,yes,NY
9,80,10000,no,NY
10,62,55000,no,NY
";

    fn spec() -> RecodeSpec {
        RecodeSpec::from_toml_str(SPEC).unwrap()
    }

    fn survey() -> (SurveyTable, SurveyLoadReport) {
        read_survey(SURVEY.as_bytes(), &spec()).unwrap()
    }

    #[test]
    fn load_recodes_and_drops() {
        let (t, report) = survey();
        assert_eq!(report.rows_read, 10);
        assert_eq!(report.dropped_missing, 1);
        assert_eq!(report.dropped_unmapped, 1);
        assert_eq!(t.len(), 8);
        let first = &t.records()[0];
        assert_eq!(&*first.id, "1");
        // age 67 -> 65plus only
        assert_eq!(t.indicators(0)[..4], [0, 0, 0, 1]);
        // income 60000 -> 50to74k
        assert_eq!(t.indicators(0)[4..], [0, 0, 1, 0]);
        assert_eq!(first.attributes, vec![true]);
        assert_eq!(t.schema().indicator_column("income", "50to74k"), Some(6));
    }

    #[test]
    fn each_variable_is_one_hot() {
        let (t, _) = survey();
        for i in 0..t.len() {
            let row = t.indicators(i);
            assert_eq!(row[..4].iter().sum::<u8>(), 1);
            assert_eq!(row[4..].iter().sum::<u8>(), 1);
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let text = SURVEY.replace("smoker", "smokes");
        let err = read_survey(text.as_bytes(), &spec()).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("smoker")), "{err}");
    }

    #[test]
    fn duplicate_id_is_data_error() {
        let text = format!("{SURVEY}1,30,1000,no,FL\n");
        assert!(matches!(read_survey(text.as_bytes(), &spec()), Err(Error::Data(_))));
    }

    #[test]
    fn empty_result_is_data_error() {
        let text = "id,age_years,income,smoker,state\n1,,,,FL\n";
        assert!(matches!(read_survey(text.as_bytes(), &spec()), Err(Error::Data(_))));
    }

    #[test]
    fn recoding_is_idempotent() {
        let (t, _) = survey();
        let mut buf = Vec::new();
        write_survey(&t, &spec(), &mut buf).unwrap();
        let (again, report) = read_survey(buf.as_slice(), &spec()).unwrap();
        assert_eq!(report.dropped(), 0);
        assert_eq!(again, t);
    }

    #[test]
    fn region_filter() {
        let (t, _) = survey();
        let fl = filter_by_region(&t, "state", "FL").unwrap();
        assert_eq!(fl.len(), 2);
        assert!(fl.records().iter().all(|r| r.retained[0] == "FL"));
        assert!(matches!(filter_by_region(&t, "state", "TX"), Err(Error::Data(m)) if m.contains("TX")));
        assert!(matches!(filter_by_region(&t, "county", "x"), Err(Error::Schema(_))));
    }

    fn synthetic_survey(strata: &[(u16, usize)]) -> SurveyTable {
        let schema = Schema {
            variables: vec![Variable::new("g", &["a", "b", "c", "d"])],
            attributes: vec![],
            retained: vec![],
        };
        let mut records = Vec::new();
        for &(cat, n) in strata {
            for _ in 0..n {
                records.push(SurveyRecord {
                    id: Arc::from(format!("r{}", records.len())),
                    categories: vec![cat],
                    attributes: vec![],
                    retained: vec![],
                });
            }
        }
        SurveyTable::new(schema, records).unwrap()
    }

    #[test]
    fn proportional_allocation_uses_floor() {
        // 10% stratum, target 15000 of 150000 -> exactly 1500 from it
        let t = synthetic_survey(&[(0, 15_000), (1, 135_000)]);
        let s = stratified_sample(&t, &["g"], 15_000, 7).unwrap();
        let from_small = s.records().iter().filter(|r| r.categories[0] == 0).count();
        assert_eq!(from_small, 1500);
        assert_eq!(s.len(), 15_000);

        // floor discards fractional seats: 3 equal strata, target 10 -> 3 each
        let t = synthetic_survey(&[(0, 5), (1, 5), (2, 5)]);
        let s = stratified_sample(&t, &["g"], 10, 7).unwrap();
        assert_eq!(s.len(), 9);
    }

    #[test]
    fn full_target_returns_everything() {
        let (t, _) = survey();
        let s = stratified_sample(&t, &["age", "income"], t.len(), 99).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn sampling_is_seeded() {
        let t = synthetic_survey(&[(0, 300), (1, 500), (2, 200)]);
        let a = stratified_sample(&t, &["g"], 100, 1).unwrap();
        let b = stratified_sample(&t, &["g"], 100, 1).unwrap();
        let c = stratified_sample(&t, &["g"], 100, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(stratified_sample(&t, &["g"], 1001, 1).is_err());
        assert!(matches!(stratified_sample(&t, &["nope"], 10, 1), Err(Error::Schema(_))));
    }

    const MARGINALS: &str = "\
zone_id,age.18to29,age.30to49,age.50to64,age.65plus,income.lt25k,income.25to49k,income.50to74k,income.75kplus
z2,100,200,300,400,250,250,250,240
z1,10,20,30,40,25,25,25,25
z3,0,0,0,0,1,1,1,1
";

    #[test]
    fn marginals_drop_zero_zones_and_sort() {
        let (t, report) = read_marginals(MARGINALS.as_bytes(), &spec()).unwrap();
        assert_eq!(t.zones.len(), 2);
        assert_eq!(t.zones[0].zone_id, "z1");
        assert_eq!(report.dropped_zones.len(), 1);
        assert_eq!(report.dropped_zones[0].0, "z3");
        assert_eq!(t.reference_name(), "age");
        assert_eq!(t.population(1), 1000.0);
    }

    #[test]
    fn marginals_errors() {
        let unknown = MARGINALS.replace("income.75kplus", "income.rich");
        assert!(matches!(read_marginals(unknown.as_bytes(), &spec()), Err(Error::Schema(_))));
        let negative = MARGINALS.replace("z1,10", "z1,-10");
        assert!(matches!(read_marginals(negative.as_bytes(), &spec()), Err(Error::Data(_))));
        let missing = MARGINALS.replace("z1,10,20", "z1,10,");
        let (t, report) = read_marginals(missing.as_bytes(), &spec()).unwrap();
        assert_eq!(t.zones.len(), 1);
        assert!(report.dropped_zones[0].1.contains("missing"));
    }

    #[test]
    fn reconcile_rescales_to_reference() {
        let (t, _) = read_marginals(MARGINALS.as_bytes(), &spec()).unwrap();
        let r = reconcile_marginals(&t, "age").unwrap();
        // z2: income sums to 990, N = 1000
        assert_eq!(r.factors[1][1], 1000.0 / 990.0);
        assert_eq!(r.factors[0], vec![1.0, 1.0]);
        assert!(r.table.max_total_mismatch() <= 0.5);
        assert!((r.table.zones[1].counts[1][0] - 250.0 * 1000.0 / 990.0).abs() < 1e-12);

        let consistent = reconcile_marginals(&r.table, "age").unwrap();
        assert_eq!(consistent.table, r.table);
    }

    #[test]
    fn reconcile_zero_variable_is_infeasible() {
        let t = ConstraintTable::new(
            vec![Variable::new("age", &["a", "b"]), Variable::new("gender", &["m", "f"])],
            0,
            vec![ZoneMarginals {
                zone_id: "z".into(),
                counts: vec![vec![600.0, 400.0], vec![0.0, 0.0]],
            }],
        )
        .unwrap();
        assert!(matches!(reconcile_marginals(&t, "age"), Err(Error::Infeasible { .. })));
        assert!(matches!(reconcile_marginals(&t, "nope"), Err(Error::Schema(_))));
    }
}
