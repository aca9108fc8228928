//! The two-level workflow: Level 1 fits the survey to sociodemographic
//! marginals and estimates behavior prevalence; Level 2 refits with those
//! behavior prevalences appended as constraints and estimates outcomes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonize::{self, ConstraintTable, SurveyTable, Variable, ZoneMarginals};
use crate::ipf::{self, FitOptions, WeightField};
use crate::manifest::RunManifest;
use crate::recode::RecodeSpec;
use crate::rng;
use crate::synthpop::{self, IntegerCounts, SyntheticPopulation};

pub const DEFAULT_BEHAVIORS: [&str; 2] = ["smoking", "obesity"];

pub const DEFAULT_OUTCOMES: [&str; 11] = [
    "cancer",
    "asthma",
    "high_blood_pressure",
    "diabetes",
    "copd",
    "arthritis",
    "high_cholesterol",
    "kidney_disease",
    "heart_disease",
    "depression",
    "stroke",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceRow {
    pub zone_id: String,
    pub variable: String,
    /// Percent in [0, 100].
    pub prevalence: f64,
    pub numerator: u64,
    pub denominator: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PrevalenceTable {
    pub rows: Vec<PrevalenceRow>,
}

impl PrevalenceTable {
    pub fn get(&self, zone_id: &str, variable: &str) -> Option<&PrevalenceRow> {
        self.rows
            .iter()
            .find(|r| r.zone_id == zone_id && r.variable == variable)
    }

    pub fn zones(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.zone_id.as_str()) {
                out.push(&r.zone_id);
            }
        }
        out
    }

    /// Prevalence of `variable` per zone, in table order.
    pub fn column(&self, variable: &str) -> Vec<(&str, f64)> {
        self.rows
            .iter()
            .filter(|r| r.variable == variable)
            .map(|r| (r.zone_id.as_str(), r.prevalence))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["zone_id", "variable", "prevalence", "numerator", "denominator"])?;
        for r in &self.rows {
            out.write_record([
                r.zone_id.clone(),
                r.variable.clone(),
                r.prevalence.to_string(),
                r.numerator.to_string(),
                r.denominator.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("prevalence output", e))?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }
}

/// Percent of agents in each zone with each attribute set.
pub fn aggregate_prevalence(pop: &SyntheticPopulation, variables: &[&str]) -> Result<PrevalenceTable> {
    let positions = variables
        .iter()
        .map(|v| {
            pop.attribute_position(v)
                .ok_or_else(|| Error::schema(format!("attribute `{v}` is not linked in the population")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut start = 0;
    for (zone_id, size) in pop.zone_sizes() {
        let agents = &pop.agents[start..start + size];
        start += size;
        for (name, &p) in variables.iter().zip(&positions) {
            let numerator = agents.iter().filter(|a| a.attributes[p]).count() as u64;
            let denominator = size as u64;
            rows.push(PrevalenceRow {
                zone_id: zone_id.to_string(),
                variable: name.to_string(),
                prevalence: 100.0 * numerator as f64 / denominator as f64,
                numerator,
                denominator,
            });
        }
    }
    Ok(PrevalenceTable { rows })
}

/// Weighted prevalence from continuous weights: `100 * sum(w*x) / sum(w)`.
pub fn weighted_prevalence(weights: &[f64], attribute: &[bool]) -> f64 {
    let total: f64 = weights.iter().sum();
    let hits: f64 = weights
        .iter()
        .zip(attribute)
        .filter(|(_, &x)| x)
        .map(|(w, _)| w)
        .sum();
    100.0 * hits / total
}

/// Appends one `[yes, no]` constraint variable per behavior, with counts
/// `p * N_z / 100` and `N_z - p * N_z / 100`, after the existing variables.
pub fn derive_behavior_constraints(
    level1: &PrevalenceTable,
    constraints: &ConstraintTable,
    behaviors: &[&str],
) -> Result<ConstraintTable> {
    let mut variables = constraints.variables.clone();
    for b in behaviors {
        if constraints.variable_position(b).is_some() {
            return Err(Error::schema(format!("behavior `{b}` is already a constraint variable")));
        }
        variables.push(Variable::new(*b, &["yes", "no"]));
    }
    let mut zones = Vec::with_capacity(constraints.zones.len());
    for (z, zone) in constraints.zones.iter().enumerate() {
        let n = constraints.population(z);
        let mut counts = zone.counts.clone();
        for b in behaviors {
            let row = level1.get(&zone.zone_id, b).ok_or_else(|| {
                Error::data(format!("no level-1 estimate of `{b}` for zone `{}`", zone.zone_id))
            })?;
            let yes = row.prevalence * n / 100.0;
            counts.push(vec![yes, n - yes]);
        }
        zones.push(ZoneMarginals {
            zone_id: zone.zone_id.clone(),
            counts,
        });
    }
    ConstraintTable::new(variables, constraints.reference, zones)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    County,
    Tract,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "county" => Ok(Scale::County),
            "tract" => Ok(Scale::Tract),
            other => Err(Error::schema(format!("unknown scale `{other}` (expected county or tract)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub survey: PathBuf,
    pub recode: PathBuf,
    #[serde(default)]
    pub county_marginals: Option<PathBuf>,
    #[serde(default)]
    pub tract_marginals: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    pub dir: PathBuf,
    #[serde(default)]
    pub populations: bool,
    #[serde(default)]
    pub weights: bool,
}

/// Pipeline configuration file (TOML). Relative paths resolve against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    /// Worker threads; 0 means all available cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_behaviors")]
    pub behaviors: Vec<String>,
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<String>,
    pub inputs: InputPaths,
    #[serde(default)]
    pub fit: FitOptions,
    pub output: OutputOptions,
}

fn default_seed() -> u64 {
    1
}

fn default_scale() -> Scale {
    Scale::County
}

fn default_behaviors() -> Vec<String> {
    DEFAULT_BEHAVIORS.iter().map(|s| s.to_string()).collect()
}

fn default_outcomes() -> Vec<String> {
    DEFAULT_OUTCOMES.iter().map(|s| s.to_string()).collect()
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::schema(format!("pipeline config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.inputs.survey);
        resolve(&mut cfg.inputs.recode);
        if let Some(p) = cfg.inputs.county_marginals.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.inputs.tract_marginals.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if let Some(b) = self.behaviors.iter().find(|b| self.outcomes.contains(b)) {
            return Err(Error::schema(format!("`{b}` is listed as both a behavior and an outcome")));
        }
        if self.outcomes.is_empty() {
            return Err(Error::schema("no outcome variables configured"));
        }
        Ok(())
    }

    pub fn marginals_path(&self) -> Result<&Path> {
        let p = match self.scale {
            Scale::County => self.inputs.county_marginals.as_deref(),
            Scale::Tract => self.inputs.tract_marginals.as_deref(),
        };
        p.ok_or_else(|| Error::schema(format!("no marginals configured for scale {:?}", self.scale)))
    }

    fn behaviors(&self) -> Vec<&str> {
        self.behaviors.iter().map(String::as_str).collect()
    }

    fn outcomes(&self) -> Vec<&str> {
        self.outcomes.iter().map(String::as_str).collect()
    }
}

/// Everything one fitting stage produced.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub weights: WeightField,
    pub counts: Vec<IntegerCounts>,
    pub population: SyntheticPopulation,
    pub prevalence: PrevalenceTable,
    pub warnings: Vec<String>,
}

/// Fit, integerise, expand with `attributes` and aggregate. Zones that fail
/// to fit or end up with no agents are excluded and reported as warnings.
pub fn simulate(
    stage: &'static str,
    survey: &SurveyTable,
    constraints: &ConstraintTable,
    opts: &FitOptions,
    seed: u64,
    attributes: &[&str],
) -> Result<StageResult> {
    let weights = ipf::fit_all(survey, constraints, opts).map_err(|e| e.in_stage(stage))?;
    let mut warnings = Vec::new();
    for f in &weights.failures {
        warnings.push(format!("{stage}: zone `{}` excluded: {}", f.zone_id, f.error));
    }
    for z in &weights.zones {
        if !z.diagnostics.converged {
            warnings.push(format!(
                "{stage}: zone `{}` did not converge (residual {:e} after {} sweeps)",
                z.zone_id, z.diagnostics.max_residual, z.diagnostics.iterations
            ));
        }
        for v in &z.diagnostics.skipped_variables {
            warnings.push(format!("{stage}: zone `{}` fitted without `{v}`", z.zone_id));
        }
    }
    if weights.zones.is_empty() {
        return Err(Error::data("no zone could be fitted").in_stage(stage));
    }

    let integerise = |z: &ipf::ZoneWeights| {
        synthpop::integerise_with(&z.weights, &mut rng::zone_stream(seed, stage, &z.zone_id), &z.zone_id)
    };
    #[cfg(feature = "parallel")]
    let counts: Vec<IntegerCounts> = {
        use rayon::prelude::*;
        weights.zones.par_iter().map(integerise).collect::<Result<_>>()
    }
    .map_err(|e| e.in_stage(stage))?;
    #[cfg(not(feature = "parallel"))]
    let counts: Vec<IntegerCounts> = weights
        .zones
        .iter()
        .map(integerise)
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage(stage))?;

    for c in counts.iter().filter(|c| c.total == 0) {
        warn!("{stage}: zone `{}` has no agents", c.zone_id);
        warnings.push(format!("{stage}: zone `{}` excluded: no agents", c.zone_id));
    }
    let population = synthpop::expand(&counts, survey, attributes).map_err(|e| e.in_stage(stage))?;
    let prevalence = aggregate_prevalence(&population, attributes).map_err(|e| e.in_stage(stage))?;
    Ok(StageResult {
        weights,
        counts,
        population,
        prevalence,
        warnings,
    })
}

/// Level 1: sociodemographic fit, behaviors linked and aggregated.
pub fn run_level1(config: &PipelineConfig, survey: &SurveyTable, constraints: &ConstraintTable) -> Result<StageResult> {
    simulate("level1", survey, constraints, &config.fit, config.seed, &config.behaviors())
}

/// Level 2: refit from unit weights against sociodemographics plus the
/// Level-1 behavior prevalences; outcomes (and behaviors) linked.
pub fn run_level2(
    config: &PipelineConfig,
    survey: &SurveyTable,
    constraints: &ConstraintTable,
    level1: &PrevalenceTable,
) -> Result<StageResult> {
    let behaviors = config.behaviors();
    let zone_ids: Vec<String> = level1.zones().into_iter().map(String::from).collect();
    let covered = constraints.select_zones(&zone_ids).map_err(|e| e.in_stage("level2"))?;
    let augmented =
        derive_behavior_constraints(level1, &covered, &behaviors).map_err(|e| e.in_stage("level2"))?;
    let mut attributes = config.outcomes();
    attributes.extend(behaviors);
    let mut result = simulate("level2", survey, &augmented, &config.fit, config.seed, &attributes)?;
    // keep only outcome rows in the published table
    let outcomes = config.outcomes();
    result.prevalence.rows.retain(|r| outcomes.contains(&r.variable.as_str()));
    Ok(result)
}

/// Outcomes estimated from the sociodemographic fit alone (no behavior
/// constraints); the baseline Level 2 is compared against.
pub fn run_sociodemographic_only(
    config: &PipelineConfig,
    survey: &SurveyTable,
    constraints: &ConstraintTable,
) -> Result<StageResult> {
    simulate("sociodemographic", survey, constraints, &config.fit, config.seed, &config.outcomes())
}

#[derive(Debug, Clone)]
pub struct ShapeRun {
    pub level1: StageResult,
    pub level2: StageResult,
    pub manifest: RunManifest,
}

/// Loads inputs, runs both levels and writes `level1_prevalence.csv`,
/// `level2_prevalence.csv` and `manifest.json` to the output directory. On
/// failure the manifest is still written, with the error recorded.
pub fn run_shape(config: &PipelineConfig, manifest: RunManifest) -> Result<ShapeRun> {
    let out_dir = config.output.dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut manifest = manifest;
    manifest.seed = Some(config.seed);
    manifest.threads = Some(config.threads);
    manifest.option("scale", config.scale);
    manifest.option("fit", config.fit);
    manifest.option("behaviors", &config.behaviors);
    manifest.option("outcomes", &config.outcomes);

    let result = with_threads(config.threads, || run_stages(config, &mut manifest));
    let manifest_path = out_dir.join("manifest.json");
    match result {
        Ok((level1, level2)) => {
            manifest.status = "ok".into();
            manifest.write(&manifest_path)?;
            Ok(ShapeRun {
                level1,
                level2,
                manifest,
            })
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            manifest.write(&manifest_path)?;
            Err(e)
        }
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if threads > 0 {
            builder = builder.num_threads(threads);
        }
        match builder.build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                warn!("could not build a thread pool ({e}); running on the global pool");
                f()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

fn timed<T>(manifest: &mut RunManifest, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    manifest
        .stage_timings_ms
        .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
    out
}

fn run_stages(config: &PipelineConfig, manifest: &mut RunManifest) -> Result<(StageResult, StageResult)> {
    let out_dir = config.output.dir.as_path();
    let marginals_path = config.marginals_path()?.to_path_buf();
    let (survey, constraints) = timed(manifest, "load", || {
        let spec = RecodeSpec::load(&config.inputs.recode)?;
        let (survey, report) = harmonize::load_survey(&config.inputs.survey, &spec)?;
        let (marginals, mreport) = harmonize::load_marginals(&marginals_path, &spec)?;
        let reconciled = harmonize::reconcile_marginals(&marginals, spec.reference_variable())?;
        Ok((survey, report, reconciled.table, mreport))
    })
    .map_err(|e| e.in_stage("load"))
    .map(|(survey, report, table, mreport)| {
        if report.dropped() > 0 {
            manifest
                .warnings
                .push(format!("load: dropped {} survey rows with missing or unmappable values", report.dropped()));
        }
        for (zone, reason) in &mreport.dropped_zones {
            manifest.warnings.push(format!("load: zone `{zone}` dropped: {reason}"));
        }
        manifest.summarize("survey_records", survey.len());
        manifest.summarize("zones", table.zones.len());
        (survey, table)
    })?;
    manifest.record_input("survey", &config.inputs.survey)?;
    manifest.record_input("recode", &config.inputs.recode)?;
    manifest.record_input("marginals", &marginals_path)?;

    let level1 = timed(manifest, "level1", || run_level1(config, &survey, &constraints))?;
    manifest.warnings.extend(level1.warnings.iter().cloned());
    manifest.summarize("level1_agents", level1.population.len());
    manifest.write_output(out_dir, "level1_prevalence.csv", &level1.prevalence.to_csv_bytes()?)?;

    let level2 = timed(manifest, "level2", || {
        run_level2(config, &survey, &constraints, &level1.prevalence)
    })?;
    manifest.warnings.extend(level2.warnings.iter().cloned());
    manifest.summarize("level2_agents", level2.population.len());
    manifest.write_output(out_dir, "level2_prevalence.csv", &level2.prevalence.to_csv_bytes()?)?;

    if config.output.weights {
        for (name, stage) in [("level1", &level1), ("level2", &level2)] {
            let mut buf = Vec::new();
            ipf::write_weights(&stage.weights, &survey, &mut buf)?;
            manifest.write_output(out_dir, &format!("{name}_weights.csv"), &buf)?;
            let mut buf = Vec::new();
            ipf::write_diagnostics(&stage.weights, &mut buf)?;
            manifest.write_output(out_dir, &format!("{name}_diagnostics.csv"), &buf)?;
        }
    }
    if config.output.populations {
        for (name, stage) in [("level1", &level1), ("level2", &level2)] {
            let mut buf = Vec::new();
            synthpop::write_population(&stage.population, &mut buf)?;
            manifest.write_output(out_dir, &format!("{name}_population.csv"), &buf)?;
            let mut buf = Vec::new();
            synthpop::write_counts(&stage.counts, &survey, &mut buf)?;
            manifest.write_output(out_dir, &format!("{name}_counts.csv"), &buf)?;
        }
    }
    info!(
        "level 1: {} agents in {} zones; level 2: {} agents",
        level1.population.len(),
        level1.counts.len(),
        level2.population.len()
    );
    Ok((level1, level2))
}
