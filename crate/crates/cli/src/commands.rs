use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use log::warn;
use shape_synth::evaluate::{self, CompositeOptions, EstimateRow, EstimateSet, MaeRange, MetricMeans};
use shape_synth::fixture::{self, FixtureOptions};
use shape_synth::harmonize;
use shape_synth::manifest::{file_digest, RunManifest};
use shape_synth::recode::RecodeSpec;
use shape_synth::{Error, PipelineConfig, Result};

use crate::{EvaluateArgs, FixtureArgs, RankArgs, RunArgs, SampleArgs, SampleMode};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s).map_err(|e| Error::io(path, e))?;
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `body`, then writes the manifest whatever the outcome.
fn with_manifest(
    dir: &Path,
    mut manifest: RunManifest,
    body: impl FnOnce(&mut RunManifest) -> Result<()>,
) -> Result<()> {
    create_dir(dir)?;
    let result = body(&mut manifest);
    match &result {
        Ok(()) => manifest.status = "ok".into(),
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(dir.join("manifest.json"))?;
    result
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let mut manifest = RunManifest::new("sample");
    manifest.seed = Some(args.seed);
    let out_dir = args.out_dir.clone();
    with_manifest(&out_dir, manifest, |m| {
        let spec = RecodeSpec::load(&args.recode)?;
        m.record_input("survey", &args.survey)?;
        m.record_input("recode", &args.recode)?;
        let (survey, report) = harmonize::load_survey(&args.survey, &spec)?;
        if report.dropped() > 0 {
            m.warnings
                .push(format!("dropped {} rows with missing or unmappable values", report.dropped()));
        }
        let sampled = match args.mode {
            SampleMode::Stratified => {
                let target = args
                    .target_n
                    .ok_or_else(|| Error::schema("--target-n is required in stratified mode"))?;
                let strata: Vec<&str> = args.strata.iter().map(String::as_str).collect();
                m.option("mode", "stratified");
                m.option("target_n", target);
                m.option("strata", &args.strata);
                harmonize::stratified_sample(&survey, &strata, target, args.seed)?
            }
            SampleMode::Region => {
                let region = args
                    .region
                    .as_deref()
                    .ok_or_else(|| Error::schema("--region is required in region mode"))?;
                m.option("mode", "region");
                m.option("region_column", &args.region_column);
                m.option("region", region);
                harmonize::filter_by_region(&survey, &args.region_column, region)?
            }
        };
        m.summarize("input_records", survey.len());
        m.summarize("sampled_records", sampled.len());
        let mut buf = Vec::new();
        harmonize::write_survey(&sampled, &spec, &mut buf)?;
        m.write_output(&args.out_dir, "survey_sample.csv", &buf)
    })
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(scale) = args.scale {
        config.scale = scale.into();
    }
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    let mut manifest = RunManifest::new("run");
    manifest.config_digest = Some(file_digest(&args.config)?);
    let run = shape_synth::run_shape(&config, manifest)?;
    for w in &run.manifest.warnings {
        warn!("{w}");
    }
    Ok(())
}

/// Estimates either in long evaluation form or as a prevalence table from `run`.
fn load_estimates(path: &Path, model: Option<&str>, region: Option<&str>) -> Result<Vec<EstimateSet>> {
    let text = read_text(path)?;
    let header = text.lines().next().unwrap_or("");
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.contains(&"prevalence") && columns.contains(&"variable") {
        let (Some(model), Some(region)) = (model, region) else {
            return Err(Error::schema(format!(
                "{} is a prevalence table; pass --model and --region",
                path.display()
            )));
        };
        let table = fixture::read_prevalence(text.as_bytes())?;
        let rows = table
            .rows
            .into_iter()
            .map(|r| EstimateRow {
                zone_id: r.zone_id,
                outcome: r.variable,
                estimate: r.prevalence,
            })
            .collect();
        return Ok(vec![EstimateSet {
            model: model.to_string(),
            region: region.to_string(),
            rows,
        }]);
    }
    evaluate::read_estimates(text.as_bytes())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let out_dir = args.out_dir.clone();
    with_manifest(&out_dir, RunManifest::new("evaluate"), |m| {
        let (references, has_ci) = evaluate::read_reference(open(&args.reference)?)?;
        m.record_input("reference", &args.reference)?;
        if !has_ci {
            let msg = "reference has no ci_low/ci_high columns; CI coverage left empty".to_string();
            warn!("{msg}");
            m.warnings.push(msg);
        }
        let mut records = Vec::new();
        for path in &args.estimates {
            m.record_input(&format!("estimates:{}", path.display()), path)?;
            for set in load_estimates(path, args.model.as_deref(), args.region.as_deref())? {
                let reference = references
                    .iter()
                    .find(|r| r.region == set.region)
                    .ok_or_else(|| Error::data(format!("no reference rows for region `{}`", set.region)))?;
                let metrics = evaluate::evaluate(&set, reference)?;
                for r in &metrics {
                    if r.excluded > 0 {
                        m.warnings.push(format!(
                            "{}/{}/{}: {} zones without a reference value excluded",
                            r.model, r.region, r.outcome, r.excluded
                        ));
                    }
                    if r.r.is_none() {
                        m.warnings
                            .push(format!("{}/{}/{}: correlation undefined", r.model, r.region, r.outcome));
                    }
                }
                records.extend(metrics);
            }
        }
        if records.is_empty() {
            return Err(Error::data("no estimates matched the reference"));
        }
        m.summarize("records", records.len());
        m.summarize("excluded", records.iter().map(|r| r.excluded).sum::<usize>());
        let mut buf = Vec::new();
        evaluate::write_metrics(&records, &mut buf)?;
        m.write_output(&args.out_dir, "metrics.csv", &buf)
    })
}

fn is_deviation_grid(text: &str) -> bool {
    text.lines()
        .next()
        .is_some_and(|h| h.split(',').any(|c| c.trim() == "r_dev"))
}

pub fn rank(args: RankArgs) -> Result<()> {
    let out_dir = args.out_dir.clone();
    with_manifest(&out_dir, RunManifest::new("rank"), |m| {
        let text = read_text(&args.input)?;
        m.record_input("input", &args.input)?;
        if text.trim().is_empty() {
            return Err(Error::schema(format!("{} is empty", args.input.display())));
        }
        let report = if is_deviation_grid(&text) {
            if args.means.is_some() || args.mae_range.is_some() {
                return Err(Error::schema("--means and --mae-range apply to metric input, not deviations"));
            }
            let devs = evaluate::read_deviations(text.as_bytes())?;
            if devs.is_empty() {
                return Err(Error::schema(format!("{} has no records", args.input.display())));
            }
            m.option("input_kind", "deviations");
            evaluate::composite_from_deviations(&devs, args.missing.into())?
        } else {
            let metrics = evaluate::read_metrics(text.as_bytes())?;
            if metrics.is_empty() {
                return Err(Error::schema(format!("{} has no records", args.input.display())));
            }
            let opts = CompositeOptions {
                means: args.means.as_ref().map(|v| MetricMeans {
                    r: v[0],
                    mae: v[1],
                    ci: v[2],
                }),
                mae_range: args.mae_range.as_ref().map(|v| MaeRange::new(v[0], v[1])).transpose()?,
                missing: args.missing.into(),
            };
            m.option("input_kind", "metrics");
            evaluate::composite_scores(&metrics, &opts)?
        };
        let threshold = match (&args.threshold, &args.threshold_model) {
            (Some(t), _) => *t,
            (None, Some(model)) => report.lowest_positive(model).ok_or_else(|| {
                Error::data(format!("model `{model}` has no positive composite score to use as a threshold"))
            })?,
            (None, None) => 0.8,
        };
        let tiers = evaluate::rank_models(&report, threshold, args.moderate);
        m.option("threshold", threshold);
        m.option("moderate", tiers.moderate_threshold);
        if let Some(means) = report.means {
            m.summarize("means", means);
        }
        if let Some(range) = report.mae_range {
            m.summarize("mae_range", range);
        }
        m.summarize("composites", report.composites.len());

        let mut dev_buf = Vec::new();
        evaluate::write_deviations(&report.deviations, &mut dev_buf)?;
        m.write_output(&args.out_dir, "deviations.csv", &dev_buf)?;
        let mut rank_buf = Vec::new();
        evaluate::write_tiers(&tiers, &mut rank_buf)?;
        m.write_output(&args.out_dir, "ranking.csv", &rank_buf)
    })
}

pub fn make_fixture(args: FixtureArgs) -> Result<()> {
    let opts = FixtureOptions {
        seed: args.seed,
        counties: args.counties,
        survey_size: args.survey_size,
        state: args.state,
        ..FixtureOptions::default()
    };
    let mut manifest = RunManifest::new("make-fixture");
    manifest.seed = Some(opts.seed);
    manifest.option("fixture", &opts);
    let out_dir = args.out_dir.clone();
    with_manifest(&out_dir, manifest, |m| {
        let state = fixture::generate(&opts)?;
        let written: Vec<PathBuf> = state.write_to(&args.out_dir)?;
        for path in written {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            m.outputs.insert(name, file_digest(&path)?);
        }
        m.summarize("intercepts", &state.intercepts);
        Ok(())
    })
}
