//! Synthetic "mini-state" ground truth.
//!
//! Generates a full individual-level population over counties split into
//! tracts, assigns behaviors and outcomes with logistic models, then derives
//! what the pipeline would normally get from outside: a raw survey sample,
//! zone marginals at both scales, and the true zone prevalences to score
//! recovered estimates against.
//!
//! Coefficients are log-odds on seven binary predictors (male, black, age
//! 65+, bachelor's degree, income $100k+, urban, insured) plus smoking and
//! obesity for outcomes, taken from a published 2021 stratified BRFSS fit.
//! Intercepts are calibrated so state-wide prevalences hit the base rates.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harmonize::{ConstraintTable, Variable, ZoneMarginals};
use crate::pipeline::{PrevalenceRow, PrevalenceTable};
use crate::recode::RecodeSpec;
use crate::rng;

/// Recode specification matching the raw survey the generator writes.
pub const RECODE_TOML: &str = r#"spec_version = 1
id_column = "id"
reference_variable = "age"
missing_values = ["Refused", "Don't know"]
retain_columns = ["state"]

[[variable]]
name = "sex"
categories = [
  { name = "male", values = ["Male"] },
  { name = "female", values = ["Female"] },
]

[[variable]]
name = "race"
categories = [
  { name = "white", values = ["White"] },
  { name = "black", values = ["Black"] },
  { name = "hispanic", values = ["Hispanic"] },
  { name = "other", values = ["Other"] },
]

[[variable]]
name = "age"
categories = [
  { name = "18to29", min = 18, max = 29 },
  { name = "30to49", min = 30, max = 49 },
  { name = "50to64", min = 50, max = 64 },
  { name = "65plus", min = 65 },
]

[[variable]]
name = "education"
categories = [
  { name = "no_bachelor", values = ["No degree", "Some college"] },
  { name = "bachelor_plus", values = ["Bachelor", "Graduate"] },
]

[[variable]]
name = "income"
categories = [
  { name = "lt25k", min = 0, max = 24999 },
  { name = "25to49k", min = 25000, max = 49999 },
  { name = "50to99k", min = 50000, max = 99999 },
  { name = "100kplus", min = 100000 },
]

[[variable]]
name = "urban"
categories = [
  { name = "urban", values = ["Urban"] },
  { name = "rural", values = ["Rural"] },
]

[[variable]]
name = "insurance"
categories = [
  { name = "insured", values = ["Yes"] },
  { name = "uninsured", values = ["No"] },
]

[[attribute]]
name = "smoking"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "obesity"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "cancer"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "asthma"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "high_blood_pressure"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "diabetes"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "copd"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "arthritis"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "high_cholesterol"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "kidney_disease"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "heart_disease"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "depression"
true_values = ["Yes"]
false_values = ["No"]

[[attribute]]
name = "stroke"
true_values = ["Yes"]
false_values = ["No"]

[marginals]
zone_column = "zone_id"
ignore_columns = ["county_id"]
"#;

const VARIABLES: [(&str, &[&str]); 7] = [
    ("sex", &["male", "female"]),
    ("race", &["white", "black", "hispanic", "other"]),
    ("age", &["18to29", "30to49", "50to64", "65plus"]),
    ("education", &["no_bachelor", "bachelor_plus"]),
    ("income", &["lt25k", "25to49k", "50to99k", "100kplus"]),
    ("urban", &["urban", "rural"]),
    ("insurance", &["insured", "uninsured"]),
];

/// (name, base prevalence %, predictor coefficients, [smoking, obesity]).
type Model = (&'static str, f64, [f64; 7], [f64; 2]);

pub const BEHAVIOR_MODELS: [Model; 2] = [
    ("smoking", 12.369, [0.044, -0.027, -0.803, -0.974, -0.870, -0.206, -0.204], [0.0, 0.0]),
    ("obesity", 35.638, [-0.072, 0.584, -0.432, -0.378, -0.264, -0.150, 0.194], [0.0, 0.0]),
];

pub const OUTCOME_MODELS: [Model; 11] = [
    ("cancer", 7.710, [-0.271, 0.094, 1.105, -0.153, -0.046, -0.044, 0.473], [0.067, 0.077]),
    ("asthma", 9.666, [-0.764, 0.149, -0.254, -0.041, -0.236, 0.052, 0.135], [0.171, 0.622]),
    ("high_blood_pressure", 41.613, [0.399, 0.582, 1.322, -0.262, -0.193, -0.076, 0.335], [0.285, 0.989]),
    ("diabetes", 14.185, [0.239, 0.504, 0.958, -0.354, -0.449, -0.018, 0.243], [0.012, 1.052]),
    ("copd", 7.843, [-0.172, -0.191, 0.828, -0.571, -0.803, -0.016, 0.319], [1.429, 0.476]),
    ("arthritis", 35.405, [-0.340, -0.085, 1.171, -0.204, -0.216, -0.051, 0.789], [0.304, 0.555]),
    ("high_cholesterol", 39.624, [0.139, -0.053, 0.971, -0.040, 0.015, 0.062, 0.442], [0.178, 0.426]),
    ("kidney_disease", 4.212, [0.025, 0.149, 1.138, -0.275, -0.232, -0.003, 0.479], [-0.118, 0.421]),
    ("heart_disease", 5.928, [0.652, -0.018, 1.513, -0.251, -0.316, -0.064, 0.204], [0.404, 0.414]),
    ("depression", 20.746, [-0.768, -0.706, -0.546, 0.077, -0.539, 0.180, 0.727], [0.727, 0.455]),
    ("stroke", 4.058, [0.120, 0.656, 1.075, -0.452, -0.721, -0.070, 0.564], [0.545, 0.013]),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureOptions {
    pub seed: u64,
    pub counties: usize,
    /// Inclusive range of tracts per county.
    pub tracts_per_county: (usize, usize),
    /// Inclusive range of county populations.
    pub county_population: (u32, u32),
    /// Clean survey records; a few extra rows with refused answers are added.
    pub survey_size: usize,
    pub state: String,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            seed: 2021,
            counties: 6,
            tracts_per_county: (2, 3),
            county_population: (1_000, 10_000),
            survey_size: 200,
            state: "MS".into(),
        }
    }
}

impl FixtureOptions {
    pub fn validate(&self) -> Result<()> {
        let (tmin, tmax) = self.tracts_per_county;
        let (pmin, pmax) = self.county_population;
        if self.counties == 0 || tmin == 0 || tmin > tmax || pmin > pmax {
            return Err(Error::schema("fixture: empty or inverted county/tract/population ranges"));
        }
        if (pmin as usize) < tmax * 50 {
            return Err(Error::schema("fixture: counties too small to split into tracts"));
        }
        if self.survey_size < 20 {
            return Err(Error::schema("fixture: survey_size must be at least 20"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Person {
    tract: usize,
    cats: [usize; 7],
    age_years: u32,
    income_dollars: u32,
    education_label: &'static str,
    attrs: Vec<bool>,
}

impl Person {
    fn predictors(&self) -> [f64; 7] {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [
            b(self.cats[0] == 0),
            b(self.cats[1] == 1),
            b(self.cats[2] == 3),
            b(self.cats[3] == 1),
            b(self.cats[4] == 3),
            b(self.cats[5] == 0),
            b(self.cats[6] == 0),
        ]
    }
}

/// A generated mini-state.
#[derive(Debug, Clone)]
pub struct MiniState {
    pub options: FixtureOptions,
    pub recode: RecodeSpec,
    /// Raw survey as CSV text, in the layout `RECODE_TOML` describes.
    pub survey_csv: String,
    pub county: ConstraintTable,
    pub tract: ConstraintTable,
    /// Tract id to county id.
    pub tract_county: BTreeMap<String, String>,
    pub truth_county: PrevalenceTable,
    pub truth_tract: PrevalenceTable,
    /// Calibrated intercepts, behaviors then outcomes.
    pub intercepts: Vec<(String, f64)>,
}

pub fn attribute_names() -> Vec<&'static str> {
    BEHAVIOR_MODELS
        .iter()
        .chain(OUTCOME_MODELS.iter())
        .map(|m| m.0)
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept making the mean of sigmoid(b + eta) equal `target`.
fn calibrate_intercept(eta: &[f64], target: f64) -> f64 {
    let mean_at = |b: f64| eta.iter().map(|e| sigmoid(b + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Category probabilities for one tract from its latent factors
/// (affluence, age, minority share, urbanicity, sex balance).
fn tract_probabilities(f: [f64; 5]) -> Vec<Vec<f64>> {
    let [aff, age, minority, urban, sex] = f;
    let ordinal = |base: &[f64], load: f64| -> Vec<f64> {
        let logits: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(k, p)| p.ln() + load * (k as f64 - 1.5))
            .collect();
        softmax(&logits)
    };
    let binary = |p: f64, shift: f64| {
        let q = sigmoid((p / (1.0 - p)).ln() + shift);
        vec![q, 1.0 - q]
    };
    let race = softmax(&[
        0.72f64.ln(),
        0.10f64.ln() + 1.1 * minority,
        0.12f64.ln() + 0.9 * minority,
        0.06f64.ln() + 0.3 * minority,
    ]);
    vec![
        binary(0.49, 0.1 * sex),
        race,
        ordinal(&[0.20, 0.32, 0.25, 0.23], 0.45 * age),
        {
            let b = binary(0.33, 0.8 * aff - 0.2 * minority);
            vec![b[1], b[0]]
        },
        ordinal(&[0.18, 0.25, 0.31, 0.26], 0.55 * aff),
        binary(0.70, 1.3 * urban + 0.3 * minority),
        binary(0.92, 0.6 * aff),
    ]
}

const AGE_RANGES: [(u32, u32); 4] = [(18, 29), (30, 49), (50, 64), (65, 90)];
const INCOME_RANGES: [(u32, u32); 4] = [(0, 24_999), (25_000, 49_999), (50_000, 99_999), (100_000, 250_000)];

pub fn generate(opts: &FixtureOptions) -> Result<MiniState> {
    opts.validate()?;
    let recode = RecodeSpec::from_toml_str(RECODE_TOML)?;
    let mut rng = rng::stream(opts.seed, "fixture");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tract_noise = Normal::new(0.0, 0.4).expect("tract noise");

    // zones
    let mut tract_ids = Vec::new();
    let mut tract_county = BTreeMap::new();
    let mut tract_sizes = Vec::new();
    let mut tract_probs = Vec::new();
    for c in 0..opts.counties {
        let county_id = format!("C{:02}", c + 1);
        let factors: [f64; 5] = std::array::from_fn(|_| normal.sample(&mut rng));
        let pop = rng.random_range(opts.county_population.0..=opts.county_population.1);
        let n_tracts = rng.random_range(opts.tracts_per_county.0..=opts.tracts_per_county.1);
        let shares: Vec<f64> = (0..n_tracts).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = shares.iter().sum();
        let mut assigned = 0u32;
        for (t, share) in shares.iter().enumerate() {
            let size = if t + 1 == n_tracts {
                pop - assigned
            } else {
                ((pop as f64) * share / total).floor() as u32
            };
            assigned += size;
            let tract_id = format!("{county_id}T{:02}", t + 1);
            let f: [f64; 5] = std::array::from_fn(|k| factors[k] + tract_noise.sample(&mut rng));
            tract_probs.push(tract_probabilities(f));
            tract_sizes.push(size);
            tract_county.insert(tract_id.clone(), county_id.clone());
            tract_ids.push(tract_id);
        }
    }

    // individuals
    let mut people = Vec::new();
    for (t, (&size, probs)) in tract_sizes.iter().zip(&tract_probs).enumerate() {
        let dists: Vec<WeightedIndex<f64>> = probs
            .iter()
            .map(|p| WeightedIndex::new(p).map_err(|e| Error::Internal(format!("fixture weights: {e}"))))
            .collect::<Result<_>>()?;
        for _ in 0..size {
            let cats: [usize; 7] = std::array::from_fn(|v| dists[v].sample(&mut rng));
            let (alo, ahi) = AGE_RANGES[cats[2]];
            let (ilo, ihi) = INCOME_RANGES[cats[4]];
            let education_label = match (cats[3], rng.random_bool(0.5)) {
                (0, true) => "No degree",
                (0, false) => "Some college",
                (_, true) => "Bachelor",
                (_, false) => "Graduate",
            };
            people.push(Person {
                tract: t,
                cats,
                age_years: rng.random_range(alo..=ahi),
                income_dollars: rng.random_range(ilo..=ihi) / 100 * 100,
                education_label,
                attrs: Vec::new(),
            });
        }
    }

    // behaviors, then outcomes conditional on them
    let mut intercepts = Vec::new();
    let predictors: Vec<[f64; 7]> = people.iter().map(Person::predictors).collect();
    for stage in [&BEHAVIOR_MODELS[..], &OUTCOME_MODELS[..]] {
        let mut draws = Vec::new();
        for &(name, base, beta, behav) in stage {
            let eta: Vec<f64> = people
                .iter()
                .zip(&predictors)
                .map(|(p, x)| {
                    let mut e: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                    if p.attrs.len() >= 2 {
                        e += behav[0] * f64::from(u8::from(p.attrs[0])) + behav[1] * f64::from(u8::from(p.attrs[1]));
                    }
                    e
                })
                .collect();
            let b0 = calibrate_intercept(&eta, base / 100.0);
            intercepts.push((name.to_string(), b0));
            draws.push(eta.iter().map(|e| rng.random_bool(sigmoid(b0 + e))).collect::<Vec<bool>>());
        }
        for (i, p) in people.iter_mut().enumerate() {
            p.attrs.extend(draws.iter().map(|d| d[i]));
        }
    }

    let survey_csv = survey_csv(&people, opts, &mut rng)?;

    // marginals and truth
    let variables: Vec<Variable> = VARIABLES.iter().map(|(n, c)| Variable::new(*n, c)).collect();
    let county_ids: Vec<String> = (0..opts.counties).map(|c| format!("C{:02}", c + 1)).collect();
    let county_of: Vec<usize> = tract_ids
        .iter()
        .map(|t| county_ids.iter().position(|c| *c == tract_county[t]).expect("county"))
        .collect();
    let tabulate = |ids: &[String], zone_of: &dyn Fn(&Person) -> usize| -> Result<(ConstraintTable, PrevalenceTable)> {
        let mut counts: Vec<Vec<Vec<f64>>> = ids
            .iter()
            .map(|_| variables.iter().map(|v| vec![0.0; v.categories.len()]).collect())
            .collect();
        let names = attribute_names();
        let mut numerators = vec![vec![0u64; names.len()]; ids.len()];
        let mut sizes = vec![0u64; ids.len()];
        for p in &people {
            let z = zone_of(p);
            sizes[z] += 1;
            for (v, &c) in p.cats.iter().enumerate() {
                counts[z][v][c] += 1.0;
            }
            for (a, &x) in p.attrs.iter().enumerate() {
                numerators[z][a] += u64::from(x);
            }
        }
        let zones = ids
            .iter()
            .zip(counts)
            .map(|(id, counts)| ZoneMarginals {
                zone_id: id.clone(),
                counts,
            })
            .collect();
        let table = ConstraintTable::new(variables.clone(), 2, zones)?;
        let mut rows = Vec::new();
        for (z, id) in ids.iter().enumerate() {
            for (a, name) in names.iter().enumerate() {
                rows.push(PrevalenceRow {
                    zone_id: id.clone(),
                    variable: name.to_string(),
                    prevalence: 100.0 * numerators[z][a] as f64 / sizes[z] as f64,
                    numerator: numerators[z][a],
                    denominator: sizes[z],
                });
            }
        }
        Ok((table, PrevalenceTable { rows }))
    };
    let (county, truth_county) = tabulate(&county_ids, &|p: &Person| county_of[p.tract])?;
    let (tract, truth_tract) = tabulate(&tract_ids, &|p: &Person| p.tract)?;

    Ok(MiniState {
        options: opts.clone(),
        recode,
        survey_csv,
        county,
        tract,
        tract_county,
        truth_county,
        truth_tract,
        intercepts,
    })
}

fn survey_csv(people: &[Person], opts: &FixtureOptions, rng: &mut impl Rng) -> Result<String> {
    let n = opts.survey_size.min(people.len());
    let dirty = (n / 100).max(1);
    let mut picked = rand::seq::index::sample(rng, people.len(), n + dirty).into_vec();
    picked.sort_unstable();
    let dirty_rows: Vec<usize> = rand::seq::index::sample(rng, picked.len(), dirty).into_vec();

    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id", "state", "sex", "race", "age", "education", "income", "urban", "insurance"];
    let names = attribute_names();
    header.extend(&names);
    out.write_record(&header)?;
    const SEX: [&str; 2] = ["Male", "Female"];
    const RACE: [&str; 4] = ["White", "Black", "Hispanic", "Other"];
    const URBAN: [&str; 2] = ["Urban", "Rural"];
    const INSURED: [&str; 2] = ["Yes", "No"];
    for (row, &i) in picked.iter().enumerate() {
        let p = &people[i];
        let mut income = p.income_dollars.to_string();
        if dirty_rows.contains(&row) {
            income = if row % 2 == 0 { "Refused".into() } else { "Don't know".into() };
        }
        let mut rec = vec![
            format!("R{:06}", row + 1),
            opts.state.clone(),
            SEX[p.cats[0]].to_string(),
            RACE[p.cats[1]].to_string(),
            p.age_years.to_string(),
            p.education_label.to_string(),
            income,
            URBAN[p.cats[5]].to_string(),
            INSURED[p.cats[6]].to_string(),
        ];
        rec.extend(p.attrs.iter().map(|&a| if a { "Yes" } else { "No" }.to_string()));
        out.write_record(&rec)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Internal(format!("survey buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

fn write_marginals_csv(table: &ConstraintTable, county_of: Option<&BTreeMap<String, String>>) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["zone_id".to_string()];
    if county_of.is_some() {
        header.push("county_id".into());
    }
    for v in &table.variables {
        for c in &v.categories {
            header.push(format!("{}.{}", v.name, c));
        }
    }
    out.write_record(&header)?;
    for z in &table.zones {
        let mut rec = vec![z.zone_id.clone()];
        if let Some(map) = county_of {
            rec.push(map[&z.zone_id].clone());
        }
        for v in &z.counts {
            rec.extend(v.iter().map(|x| x.to_string()));
        }
        out.write_record(&rec)?;
    }
    out.into_inner().map_err(|e| Error::Internal(format!("marginals buffer: {e}")))
}

/// Reference estimates with synthetic confidence intervals, the shape an
/// external small-area product would ship.
pub fn reference_csv(truth: &PrevalenceTable, region: &str, outcomes: &[&str]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["region", "zone_id", "outcome", "estimate", "ci_low", "ci_high"])?;
    for r in truth.rows.iter().filter(|r| outcomes.contains(&r.variable.as_str())) {
        let p = r.prevalence / 100.0;
        let half = 100.0 * 1.96 * (p * (1.0 - p) / 400.0).sqrt();
        let round3 = |x: f64| (x * 1000.0).round() / 1000.0;
        out.write_record([
            region.to_string(),
            r.zone_id.clone(),
            r.variable.clone(),
            round3(r.prevalence).to_string(),
            round3((r.prevalence - half).max(0.0)).to_string(),
            round3((r.prevalence + half).min(100.0)).to_string(),
        ])?;
    }
    out.into_inner().map_err(|e| Error::Internal(format!("reference buffer: {e}")))
}

pub const CONFIG_TOML: &str = r#"seed = 1
scale = "county"
threads = 0

[inputs]
survey = "survey.csv"
recode = "recode.toml"
county_marginals = "county_marginals.csv"
tract_marginals = "tract_marginals.csv"

[output]
dir = "out"
"#;

impl MiniState {
    /// Writes survey, recode spec, marginals, truth, reference and a
    /// pipeline config into `dir`. Returns the written paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let outcomes: Vec<&str> = OUTCOME_MODELS.iter().map(|m| m.0).collect();
        let files: Vec<(&str, Vec<u8>)> = vec![
            ("survey.csv", self.survey_csv.clone().into_bytes()),
            ("recode.toml", RECODE_TOML.as_bytes().to_vec()),
            ("county_marginals.csv", write_marginals_csv(&self.county, None)?),
            ("tract_marginals.csv", write_marginals_csv(&self.tract, Some(&self.tract_county))?),
            ("truth_county.csv", self.truth_county.to_csv_bytes()?),
            ("truth_tract.csv", self.truth_tract.to_csv_bytes()?),
            ("reference_county.csv", reference_csv(&self.truth_county, &self.options.state, &outcomes)?),
            ("shape.toml", CONFIG_TOML.as_bytes().to_vec()),
        ];
        let mut written = Vec::new();
        for (name, bytes) in files {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Reads a prevalence table written by [`PrevalenceTable::write_csv`].
pub fn read_prevalence<R: std::io::Read>(reader: R) -> Result<PrevalenceTable> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in csv.records() {
        let rec = rec?;
        if rec.len() < 5 {
            return Err(Error::schema("prevalence table needs zone_id,variable,prevalence,numerator,denominator"));
        }
        let num = |i: usize| -> Result<u64> {
            rec[i].parse().map_err(|_| Error::data(format!("bad count `{}`", &rec[i])))
        };
        rows.push(PrevalenceRow {
            zone_id: rec[0].to_string(),
            variable: rec[1].to_string(),
            prevalence: rec[2].parse().map_err(|_| Error::data(format!("bad prevalence `{}`", &rec[2])))?,
            numerator: num(3)?,
            denominator: num(4)?,
        });
    }
    Ok(PrevalenceTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonize::read_survey;

    #[test]
    fn calibration_hits_target() {
        let eta: Vec<f64> = (0..1000).map(|i| (i as f64 / 500.0) - 1.0).collect();
        let b = calibrate_intercept(&eta, 0.2);
        let mean = eta.iter().map(|e| sigmoid(b + e)).sum::<f64>() / 1000.0;
        assert!((mean - 0.2).abs() < 1e-9);
    }

    #[test]
    fn generated_state_is_consistent() {
        let m = generate(&FixtureOptions::default()).unwrap();
        assert_eq!(m.county.zones.len(), 6);
        assert!(m.tract.zones.len() >= 12);
        // tract marginals sum to county marginals
        for cz in &m.county.zones {
            let mut sum = vec![0.0; 4];
            for tz in m.tract.zones.iter().filter(|t| m.tract_county[&t.zone_id] == cz.zone_id) {
                for (s, x) in sum.iter_mut().zip(&tz.counts[2]) {
                    *s += x;
                }
            }
            assert_eq!(sum, cz.counts[2]);
        }
        let (survey, report) = read_survey(m.survey_csv.as_bytes(), &m.recode).unwrap();
        assert_eq!(survey.len(), 200);
        assert_eq!(report.dropped_missing, 2);
        assert_eq!(m.truth_county.rows.len(), 6 * 13);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&FixtureOptions::default()).unwrap();
        let b = generate(&FixtureOptions::default()).unwrap();
        assert_eq!(a.survey_csv, b.survey_csv);
        let c = generate(&FixtureOptions {
            seed: 7,
            ..FixtureOptions::default()
        })
        .unwrap();
        assert_ne!(a.survey_csv, c.survey_csv);
    }
}
