//! Comparison of estimate sets against reference estimates, and the
//! composite-score ranking built on top of the per-outcome metrics.
//!
//! Composite scoring pools every (model, region, outcome) metric record into
//! one grid. MAE is min-max standardized over the whole pool and inverted so
//! that larger is better. Each metric's deviation from its grid mean is then
//! summed over the three metrics and all regions to give one score per
//! (model, outcome).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::data(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::data(format!("correlation needs at least 3 pairs, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean absolute error.
pub fn mae(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::data(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::data("MAE of empty vectors"));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub zone_id: String,
    pub outcome: String,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSet {
    pub model: String,
    pub region: String,
    pub rows: Vec<EstimateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub zone_id: String,
    pub outcome: String,
    pub estimate: f64,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSet {
    pub region: String,
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceSet {
    pub fn new(region: impl Into<String>, rows: Vec<ReferenceRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !r.estimate.is_finite() {
                return Err(Error::data(format!("non-finite reference for `{}` / `{}`", r.zone_id, r.outcome)));
            }
            if let Some((lo, hi)) = r.ci {
                if !(lo <= r.estimate && r.estimate <= hi) {
                    return Err(Error::data(format!(
                        "reference CI [{lo}, {hi}] does not contain {} for `{}` / `{}`",
                        r.estimate, r.zone_id, r.outcome
                    )));
                }
            }
            if !seen.insert((&r.zone_id, &r.outcome)) {
                return Err(Error::data(format!("duplicate reference row `{}` / `{}`", r.zone_id, r.outcome)));
            }
        }
        Ok(ReferenceSet {
            region: region.into(),
            rows,
        })
    }

    fn lookup(&self) -> HashMap<(&str, &str), &ReferenceRow> {
        self.rows
            .iter()
            .map(|r| ((r.zone_id.as_str(), r.outcome.as_str()), r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub fraction: f64,
    pub covered: usize,
    pub n: usize,
    /// Estimates without a matching reference interval.
    pub excluded: usize,
}

/// Fraction of estimates inside the reference intervals, bounds inclusive.
pub fn ci_coverage(estimates: &[(&str, f64)], reference: &HashMap<&str, (f64, f64)>) -> Result<Coverage> {
    let mut covered = 0;
    let mut n = 0;
    let mut excluded = 0;
    for (zone, est) in estimates {
        match reference.get(zone) {
            Some(&(lo, hi)) => {
                n += 1;
                if lo <= *est && *est <= hi {
                    covered += 1;
                }
            }
            None => excluded += 1,
        }
    }
    if n == 0 {
        return Err(Error::data("no estimates matched a reference interval"));
    }
    Ok(Coverage {
        fraction: covered as f64 / n as f64,
        covered,
        n,
        excluded,
    })
}

/// Metrics for one (model, region, outcome).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub region: String,
    pub outcome: String,
    pub r: Option<f64>,
    pub r2: Option<f64>,
    pub mae: Option<f64>,
    pub ci_coverage: Option<f64>,
    pub ci_covered: Option<usize>,
    pub n: usize,
    pub excluded: usize,
}

/// Compares one estimate set with the reference, outcome by outcome. Zones
/// present on only one side are excluded and counted.
pub fn evaluate(estimates: &EstimateSet, reference: &ReferenceSet) -> Result<Vec<MetricRecord>> {
    let lookup = reference.lookup();
    let mut by_outcome: BTreeMap<&str, Vec<&EstimateRow>> = BTreeMap::new();
    for row in &estimates.rows {
        if !row.estimate.is_finite() {
            return Err(Error::data(format!("non-finite estimate for `{}` / `{}`", row.zone_id, row.outcome)));
        }
        by_outcome.entry(&row.outcome).or_default().push(row);
    }
    let mut out = Vec::new();
    for (outcome, rows) in by_outcome {
        let mut est = Vec::new();
        let mut refv = Vec::new();
        let mut with_ci = Vec::new();
        let mut intervals = HashMap::new();
        let mut excluded = 0;
        for row in rows {
            match lookup.get(&(row.zone_id.as_str(), outcome)) {
                Some(r) => {
                    est.push(row.estimate);
                    refv.push(r.estimate);
                    if let Some(ci) = r.ci {
                        intervals.insert(row.zone_id.as_str(), ci);
                        with_ci.push((row.zone_id.as_str(), row.estimate));
                    }
                }
                None => excluded += 1,
            }
        }
        if est.is_empty() {
            warn!("{}/{}: `{outcome}` has no zones in common with the reference", estimates.model, estimates.region);
            continue;
        }
        let r = match pearson_r(&est, &refv) {
            Ok(r) => Some(r),
            Err(e) => {
                warn!("{}/{}: `{outcome}`: {e}", estimates.model, estimates.region);
                None
            }
        };
        let coverage = if with_ci.is_empty() {
            None
        } else {
            Some(ci_coverage(&with_ci, &intervals)?)
        };
        out.push(MetricRecord {
            model: estimates.model.clone(),
            region: estimates.region.clone(),
            outcome: outcome.to_string(),
            r,
            r2: r.map(|r| r * r),
            mae: Some(mae(&est, &refv)?),
            ci_coverage: coverage.map(|c| c.fraction),
            ci_covered: coverage.map(|c| c.covered),
            n: est.len(),
            excluded,
        });
    }
    Ok(out)
}

/// Min-max standardization inverted so the smallest MAE maps to 1 and the
/// largest to 0.
pub fn standardize_mae(values: &[f64]) -> Result<Vec<f64>> {
    let range = MaeRange::of(values)?;
    Ok(values.iter().map(|&v| range.standardize(v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeRange {
    pub min: f64,
    pub max: f64,
}

impl MaeRange {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::data("no MAE values to standardize"));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        MaeRange::new(min, max)
    }

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if max.partial_cmp(&min) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::data(format!("degenerate MAE range [{min}, {max}]")));
        }
        Ok(MaeRange { min, max })
    }

    pub fn standardize(&self, mae: f64) -> f64 {
        1.0 - (mae - self.min) / (self.max - self.min)
    }
}

/// Grid means of r, standardized MAE and CI coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub r: f64,
    pub mae: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    pub model: String,
    pub region: String,
    pub outcome: String,
    pub r_dev: f64,
    pub mae_dev: f64,
    pub ci_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Any hole in the model x region x outcome grid is an error.
    #[default]
    Error,
    /// Holes are left out of the means and contribute no deviation.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeOptions {
    /// Use these means instead of the grid means.
    pub means: Option<MetricMeans>,
    /// Use this range instead of the pool extremes.
    pub mae_range: Option<MaeRange>,
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Composite {
    pub model: String,
    pub outcome: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeReport {
    pub means: Option<MetricMeans>,
    pub mae_range: Option<MaeRange>,
    pub deviations: Vec<DeviationRecord>,
    /// Grouped by model (sorted), each group ranked best first.
    pub composites: Vec<Composite>,
}

/// Decimal places composite scores are reported and ranked at.
pub const REPORT_DECIMALS: u32 = 2;

/// Rounds half to even at `decimals` places after snapping to 1e-9, so sums
/// of short decimals like `0.645` round as the decimal they represent.
pub fn round_half_even(x: f64, decimals: u32) -> f64 {
    assert!(decimals <= 9);
    let snapped = (x * 1e9).round() as i128;
    let unit = 10i128.pow(9 - decimals);
    let mut q = snapped.div_euclid(unit);
    let twice_rem = 2 * snapped.rem_euclid(unit);
    if twice_rem > unit || (twice_rem == unit && q % 2 != 0) {
        q += 1;
    }
    q as f64 / 10f64.powi(decimals as i32)
}

/// Checks that every model has a record for every (region, outcome) seen
/// anywhere in the grid; returns the missing triples.
fn grid_holes<'a>(keys: impl Iterator<Item = (&'a str, &'a str, &'a str)> + Clone) -> Vec<String> {
    let models: BTreeSet<&str> = keys.clone().map(|k| k.0).collect();
    let cells: BTreeSet<(&str, &str)> = keys.clone().map(|k| (k.1, k.2)).collect();
    let present: BTreeSet<(&str, &str, &str)> = keys.collect();
    let mut holes = Vec::new();
    for m in &models {
        for (region, outcome) in &cells {
            if !present.contains(&(*m, *region, *outcome)) {
                holes.push(format!("{m}/{region}/{outcome}"));
            }
        }
    }
    holes
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Builds deviations and composite scores from metric records.
pub fn composite_scores(metrics: &[MetricRecord], opts: &CompositeOptions) -> Result<CompositeReport> {
    if metrics.is_empty() {
        return Err(Error::data("no metric records to score"));
    }
    let mut seen = BTreeSet::new();
    for m in metrics {
        if !seen.insert((&m.model, &m.region, &m.outcome)) {
            return Err(Error::data(format!("duplicate metric record {}/{}/{}", m.model, m.region, m.outcome)));
        }
    }
    if opts.missing == MissingPolicy::Error {
        let mut holes = grid_holes(metrics.iter().map(|m| (m.model.as_str(), m.region.as_str(), m.outcome.as_str())));
        for m in metrics {
            for (name, missing) in [("r", m.r.is_none()), ("mae", m.mae.is_none()), ("ci_coverage", m.ci_coverage.is_none())] {
                if missing {
                    holes.push(format!("{}/{}/{} {name}", m.model, m.region, m.outcome));
                }
            }
        }
        if !holes.is_empty() {
            return Err(Error::data(format!("incomplete metric grid: {}", holes.join(", "))));
        }
    }

    let range = match opts.mae_range {
        Some(r) => r,
        None => MaeRange::of(&metrics.iter().filter_map(|m| m.mae).collect::<Vec<_>>())?,
    };
    let means = match opts.means {
        Some(m) => m,
        None => MetricMeans {
            r: mean(metrics.iter().filter_map(|m| m.r)).ok_or_else(|| Error::data("no r values"))?,
            mae: mean(metrics.iter().filter_map(|m| m.mae.map(|v| range.standardize(v))))
                .ok_or_else(|| Error::data("no MAE values"))?,
            ci: mean(metrics.iter().filter_map(|m| m.ci_coverage)).ok_or_else(|| Error::data("no CI coverage values"))?,
        },
    };
    let deviations: Vec<DeviationRecord> = metrics
        .iter()
        .map(|m| DeviationRecord {
            model: m.model.clone(),
            region: m.region.clone(),
            outcome: m.outcome.clone(),
            r_dev: m.r.map_or(0.0, |r| r - means.r),
            mae_dev: m.mae.map_or(0.0, |v| range.standardize(v) - means.mae),
            ci_dev: m.ci_coverage.map_or(0.0, |c| c - means.ci),
        })
        .collect();
    let mut report = composite_from_deviations(&deviations, MissingPolicy::Skip)?;
    report.means = Some(means);
    report.mae_range = Some(range);
    Ok(report)
}

/// Sums a ready-made deviation grid into composite scores.
pub fn composite_from_deviations(deviations: &[DeviationRecord], missing: MissingPolicy) -> Result<CompositeReport> {
    if deviations.is_empty() {
        return Err(Error::data("no deviation records to score"));
    }
    if missing == MissingPolicy::Error {
        let holes = grid_holes(deviations.iter().map(|d| (d.model.as_str(), d.region.as_str(), d.outcome.as_str())));
        if !holes.is_empty() {
            return Err(Error::data(format!("incomplete deviation grid: {}", holes.join(", "))));
        }
    }
    let mut scores: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for d in deviations {
        *scores.entry((&d.model, &d.outcome)).or_insert(0.0) += d.r_dev + d.mae_dev + d.ci_dev;
    }
    let mut composites: Vec<Composite> = scores
        .into_iter()
        .map(|((model, outcome), score)| Composite {
            model: model.to_string(),
            outcome: outcome.to_string(),
            score,
        })
        .collect();
    composites.sort_by(|a, b| {
        a.model.cmp(&b.model).then_with(|| {
            let (sa, sb) = (round_half_even(a.score, REPORT_DECIMALS), round_half_even(b.score, REPORT_DECIMALS));
            sb.total_cmp(&sa).then_with(|| a.outcome.cmp(&b.outcome))
        })
    });
    Ok(CompositeReport {
        means: None,
        mae_range: None,
        deviations: deviations.to_vec(),
        composites,
    })
}

impl CompositeReport {
    pub fn models(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.composites {
            if out.last() != Some(&c.model.as_str()) {
                out.push(&c.model);
            }
        }
        out
    }

    /// Ranked composites for one model, best first.
    pub fn ranked(&self, model: &str) -> Vec<&Composite> {
        self.composites.iter().filter(|c| c.model == model).collect()
    }

    pub fn score(&self, model: &str, outcome: &str) -> Option<f64> {
        self.composites
            .iter()
            .find(|c| c.model == model && c.outcome == outcome)
            .map(|c| c.score)
    }

    /// Mean composite over every (model, outcome).
    pub fn grid_mean(&self) -> f64 {
        self.composites.iter().map(|c| c.score).sum::<f64>() / self.composites.len() as f64
    }

    /// Smallest positive composite of `model`, if any.
    pub fn lowest_positive(&self, model: &str) -> Option<f64> {
        self.ranked(model)
            .into_iter()
            .map(|c| c.score)
            .filter(|s| *s > 0.0)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Reliable,
    Moderate,
    Caution,
    Limited,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Reliable => "reliable",
            Tier::Moderate => "moderate",
            Tier::Caution => "caution",
            Tier::Limited => "limited",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierEntry {
    pub model: String,
    pub rank: usize,
    pub outcome: String,
    pub score: f64,
    pub reported_score: f64,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierTable {
    pub threshold: f64,
    pub moderate_threshold: f64,
    pub entries: Vec<TierEntry>,
}

impl TierTable {
    pub fn outcomes_in(&self, model: &str, tier: Tier) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.model == model && e.tier == tier)
            .map(|e| e.outcome.as_str())
            .collect()
    }
}

/// Assigns reliability tiers: reliable (>= threshold), moderate (>= the
/// moderate cut, by default the grid mean of all composites), caution
/// (positive) and limited (the rest). Scores are compared at reported
/// precision.
pub fn rank_models(report: &CompositeReport, threshold: f64, moderate: Option<f64>) -> TierTable {
    let moderate_threshold = moderate.unwrap_or_else(|| report.grid_mean());
    let mut entries = Vec::with_capacity(report.composites.len());
    for model in report.models() {
        for (i, c) in report.ranked(model).into_iter().enumerate() {
            let reported = round_half_even(c.score, REPORT_DECIMALS);
            let tier = if reported >= threshold {
                Tier::Reliable
            } else if reported >= moderate_threshold {
                Tier::Moderate
            } else if reported > 0.0 {
                Tier::Caution
            } else {
                Tier::Limited
            };
            entries.push(TierEntry {
                model: model.to_string(),
                rank: i + 1,
                outcome: c.outcome.clone(),
                score: c.score,
                reported_score: reported,
                tier,
            });
        }
    }
    TierTable {
        threshold,
        moderate_threshold,
        entries,
    }
}

// ---------------------------------------------------------------------------
// CSV surfaces

fn header_index<'a>(headers: &'a csv::StringRecord, what: &str) -> impl Fn(&str) -> Result<usize> + 'a {
    let what = what.to_string();
    move |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(format!("{what} are missing column `{name}`")))
    }
}

fn parse_f64(raw: &str, what: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::data(format!("{what}: `{raw}` is not a finite number")))
}

fn parse_opt_f64(raw: &str, what: &str) -> Result<Option<f64>> {
    if raw.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(raw, what).map(Some)
    }
}

/// Reads `model,region,zone_id,outcome,estimate`, one set per (model, region).
pub fn read_estimates<R: Read>(reader: R) -> Result<Vec<EstimateSet>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = header_index(&headers, "estimates");
    let (mc, rc, zc, oc, ec) = (col("model")?, col("region")?, col("zone_id")?, col("outcome")?, col("estimate")?);
    let mut sets: BTreeMap<(String, String), Vec<EstimateRow>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for row in csv.records() {
        let row = row?;
        let key = (row[mc].to_string(), row[rc].to_string());
        if !seen.insert((key.clone(), row[zc].to_string(), row[oc].to_string())) {
            return Err(Error::data(format!(
                "duplicate estimate for {}/{} zone `{}` outcome `{}`",
                key.0, key.1, &row[zc], &row[oc]
            )));
        }
        sets.entry(key).or_default().push(EstimateRow {
            zone_id: row[zc].to_string(),
            outcome: row[oc].to_string(),
            estimate: parse_f64(&row[ec], "estimate")?,
        });
    }
    if sets.is_empty() {
        return Err(Error::data("no estimates"));
    }
    Ok(sets
        .into_iter()
        .map(|((model, region), rows)| EstimateSet { model, region, rows })
        .collect())
}

/// Reads `region,zone_id,outcome,estimate[,ci_low,ci_high]`; a `model`
/// column, if present, is ignored. Returns one set per region and whether the
/// file carried CI columns at all.
pub fn read_reference<R: Read>(reader: R) -> Result<(Vec<ReferenceSet>, bool)> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = header_index(&headers, "reference");
    let (rc, zc, oc, ec) = (col("region")?, col("zone_id")?, col("outcome")?, col("estimate")?);
    let lo = headers.iter().position(|h| h == "ci_low");
    let hi = headers.iter().position(|h| h == "ci_high");
    let has_ci = match (lo, hi) {
        (Some(_), Some(_)) => true,
        (None, None) => false,
        _ => return Err(Error::schema("reference must carry both ci_low and ci_high, or neither")),
    };
    let mut sets: BTreeMap<String, Vec<ReferenceRow>> = BTreeMap::new();
    for row in csv.records() {
        let row = row?;
        let ci = match (lo, hi) {
            (Some(l), Some(h)) => match (parse_opt_f64(&row[l], "ci_low")?, parse_opt_f64(&row[h], "ci_high")?) {
                (Some(a), Some(b)) => Some((a, b)),
                (None, None) => None,
                _ => return Err(Error::data(format!("zone `{}`: CI bounds must come as a pair", &row[zc]))),
            },
            _ => None,
        };
        sets.entry(row[rc].to_string()).or_default().push(ReferenceRow {
            zone_id: row[zc].to_string(),
            outcome: row[oc].to_string(),
            estimate: parse_f64(&row[ec], "estimate")?,
            ci,
        });
    }
    if sets.is_empty() {
        return Err(Error::data("no reference rows"));
    }
    let sets = sets
        .into_iter()
        .map(|(region, rows)| ReferenceSet::new(region, rows))
        .collect::<Result<_>>()?;
    Ok((sets, has_ci))
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRIC_COLUMNS: [&str; 10] = [
    "model", "region", "outcome", "r", "r2", "mae", "ci_coverage", "ci_covered", "n", "excluded",
];

pub fn write_metrics<W: Write>(records: &[MetricRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(METRIC_COLUMNS)?;
    for m in records {
        out.write_record([
            m.model.clone(),
            m.region.clone(),
            m.outcome.clone(),
            fmt_opt(m.r),
            fmt_opt(m.r2),
            fmt_opt(m.mae),
            fmt_opt(m.ci_coverage),
            fmt_opt(m.ci_covered),
            m.n.to_string(),
            m.excluded.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("metrics output", e))?;
    Ok(())
}

/// Reads metric records; only `model,region,outcome,r,mae,ci_coverage` are
/// required.
pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricRecord>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = header_index(&headers, "metrics");
    let (mc, rc, oc, r_c, mae_c, ci_c) = (col("model")?, col("region")?, col("outcome")?, col("r")?, col("mae")?, col("ci_coverage")?);
    let opt = |name: &str| headers.iter().position(|h| h == name);
    let (r2_c, cov_c, n_c, ex_c) = (opt("r2"), opt("ci_covered"), opt("n"), opt("excluded"));
    let mut out = Vec::new();
    for row in csv.records() {
        let row = row?;
        let r = parse_opt_f64(&row[r_c], "r")?;
        let ci_coverage = parse_opt_f64(&row[ci_c], "ci_coverage")?;
        if let Some(c) = ci_coverage {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::data(format!("ci_coverage {c} is not a fraction in [0, 1]")));
            }
        }
        let int = |c: Option<usize>| -> Result<Option<usize>> {
            match c.map(|c| row[c].trim()).filter(|s| !s.is_empty()) {
                Some(s) => s.parse().map(Some).map_err(|_| Error::data(format!("bad count `{s}`"))),
                None => Ok(None),
            }
        };
        out.push(MetricRecord {
            model: row[mc].to_string(),
            region: row[rc].to_string(),
            outcome: row[oc].to_string(),
            r,
            r2: match r2_c {
                Some(c) => parse_opt_f64(&row[c], "r2")?,
                None => r.map(|r| r * r),
            },
            mae: parse_opt_f64(&row[mae_c], "mae")?,
            ci_coverage,
            ci_covered: int(cov_c)?,
            n: int(n_c)?.unwrap_or(0),
            excluded: int(ex_c)?.unwrap_or(0),
        });
    }
    Ok(out)
}

pub const DEVIATION_COLUMNS: [&str; 6] = ["model", "region", "outcome", "r_dev", "mae_dev", "ci_dev"];

pub fn read_deviations<R: Read>(reader: R) -> Result<Vec<DeviationRecord>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = header_index(&headers, "deviations");
    let idx = DEVIATION_COLUMNS.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for row in csv.records() {
        let row = row?;
        out.push(DeviationRecord {
            model: row[idx[0]].to_string(),
            region: row[idx[1]].to_string(),
            outcome: row[idx[2]].to_string(),
            r_dev: parse_f64(&row[idx[3]], "r_dev")?,
            mae_dev: parse_f64(&row[idx[4]], "mae_dev")?,
            ci_dev: parse_f64(&row[idx[5]], "ci_dev")?,
        });
    }
    Ok(out)
}

pub fn write_deviations<W: Write>(records: &[DeviationRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(DEVIATION_COLUMNS)?;
    for d in records {
        out.write_record([
            d.model.clone(),
            d.region.clone(),
            d.outcome.clone(),
            d.r_dev.to_string(),
            d.mae_dev.to_string(),
            d.ci_dev.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("deviations output", e))?;
    Ok(())
}

/// `model,rank,outcome,score,reported_score,tier`.
pub fn write_tiers<W: Write>(table: &TierTable, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["model", "rank", "outcome", "score", "reported_score", "tier"])?;
    for e in &table.entries {
        out.write_record([
            e.model.clone(),
            e.rank.to_string(),
            e.outcome.clone(),
            e.score.to_string(),
            format!("{:.2}", e.reported_score),
            e.tier.as_str().to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("ranking output", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson_r(&x, &[3.0; 4]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson_r(&x[..2], &x[..2]).is_err());
        assert!(pearson_r(&x, &x[..3]).is_err());
    }

    #[test]
    fn mae_basics() {
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 1.5);
        assert_eq!(mae(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn coverage_is_inclusive() {
        let mut ci = HashMap::new();
        ci.insert("a", (1.0, 2.0));
        ci.insert("b", (1.0, 2.0));
        let c = ci_coverage(&[("a", 1.0), ("b", 2.0000001), ("c", 1.5)], &ci).unwrap();
        assert_eq!((c.covered, c.n, c.excluded), (1, 2, 1));
        assert_eq!(c.fraction, 0.5);
        assert!(ci_coverage(&[("z", 1.0)], &ci).is_err());
    }

    #[test]
    fn standardization_endpoints() {
        let s = standardize_mae(&[0.764, 5.946, 2.785]).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        assert!(standardize_mae(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(0.645, 2), 0.64);
        assert_eq!(round_half_even(0.655, 2), 0.66);
        assert_eq!(round_half_even(1.415, 2), 1.42);
        assert_eq!(round_half_even(-1.133, 2), -1.13);
        assert_eq!(round_half_even(-0.125, 2), -0.12);
        assert_eq!(round_half_even(0.0, 2), 0.0);
    }

    fn dev(model: &str, region: &str, outcome: &str, d: [f64; 3]) -> DeviationRecord {
        DeviationRecord {
            model: model.into(),
            region: region.into(),
            outcome: outcome.into(),
            r_dev: d[0],
            mae_dev: d[1],
            ci_dev: d[2],
        }
    }

    #[test]
    fn zero_deviations_tie_everything() {
        let devs = vec![
            dev("m", "x", "b", [0.0; 3]),
            dev("m", "x", "a", [0.0; 3]),
            dev("m", "x", "c", [0.0; 3]),
        ];
        let report = composite_from_deviations(&devs, MissingPolicy::Error).unwrap();
        let order: Vec<_> = report.ranked("m").iter().map(|c| c.outcome.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
        assert!(report.composites.iter().all(|c| c.score == 0.0));
    }

    #[test]
    fn incomplete_grid_lists_holes() {
        let devs = vec![dev("m", "x", "a", [0.1; 3]), dev("n", "x", "b", [0.1; 3])];
        let err = composite_from_deviations(&devs, MissingPolicy::Error).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("m/x/b") && msg.contains("n/x/a"), "{msg}");
        assert!(composite_from_deviations(&devs, MissingPolicy::Skip).is_ok());
    }

    #[test]
    fn composite_over_regions_and_metrics() {
        let devs = vec![
            dev("m", "NY", "heart", [-0.229, 0.529, 0.093]),
            dev("m", "FL", "heart", [0.012, 0.531, 0.091]),
        ];
        let report = composite_from_deviations(&devs, MissingPolicy::Error).unwrap();
        assert!((report.score("m", "heart").unwrap() - 1.027).abs() < 1e-12);
        assert_eq!(round_half_even(report.score("m", "heart").unwrap(), 2), 1.03);
    }

    fn metric(model: &str, region: &str, outcome: &str, r: f64, mae: f64, ci: f64) -> MetricRecord {
        MetricRecord {
            model: model.into(),
            region: region.into(),
            outcome: outcome.into(),
            r: Some(r),
            r2: Some(r * r),
            mae: Some(mae),
            ci_coverage: Some(ci),
            ci_covered: None,
            n: 10,
            excluded: 0,
        }
    }

    #[test]
    fn grid_deviations_are_mean_centred() {
        let metrics = vec![
            metric("a", "x", "o1", 0.72, 1.0, 0.8),
            metric("a", "x", "o2", 0.44, 2.0, 0.6),
            metric("b", "x", "o1", 0.30, 3.0, 0.5),
            metric("b", "x", "o2", 0.86, 1.5, 0.9),
        ];
        let report = composite_scores(&metrics, &CompositeOptions::default()).unwrap();
        let means = report.means.unwrap();
        assert!((means.r - 0.58).abs() < 1e-12);
        let sum = |f: fn(&DeviationRecord) -> f64| report.deviations.iter().map(f).sum::<f64>();
        assert!(sum(|d| d.r_dev).abs() < 1e-12);
        assert!(sum(|d| d.mae_dev).abs() < 1e-12);
        assert!(sum(|d| d.ci_dev).abs() < 1e-12);
        // the composite is exactly the sum of its listed deviations
        for c in &report.composites {
            let s: f64 = report
                .deviations
                .iter()
                .filter(|d| d.model == c.model && d.outcome == c.outcome)
                .map(|d| d.r_dev + d.mae_dev + d.ci_dev)
                .sum();
            assert_eq!(s, c.score);
        }
        let r_dev = report.deviations.iter().find(|d| d.model == "a" && d.outcome == "o1").unwrap().r_dev;
        assert!((r_dev - 0.14).abs() < 1e-12);
    }

    #[test]
    fn missing_ci_is_a_hole_unless_skipped() {
        let mut m = metric("a", "x", "o1", 0.5, 1.0, 0.5);
        m.ci_coverage = None;
        let metrics = vec![m, metric("a", "x", "o2", 0.6, 2.0, 0.7)];
        assert!(composite_scores(&metrics, &CompositeOptions::default()).is_err());
        let opts = CompositeOptions {
            missing: MissingPolicy::Skip,
            ..CompositeOptions::default()
        };
        let report = composite_scores(&metrics, &opts).unwrap();
        assert_eq!(report.means.unwrap().ci, 0.7);
    }

    #[test]
    fn tiers() {
        let devs: Vec<_> = [("a", 0.9), ("b", 0.6), ("c", 0.2), ("d", -0.1), ("e", 0.0)]
            .iter()
            .map(|(o, s)| dev("m", "x", o, [*s, 0.0, 0.0]))
            .collect();
        let report = composite_from_deviations(&devs, MissingPolicy::Error).unwrap();
        let t = rank_models(&report, 0.8, Some(0.5));
        assert_eq!(t.outcomes_in("m", Tier::Reliable), vec!["a"]);
        assert_eq!(t.outcomes_in("m", Tier::Moderate), vec!["b"]);
        assert_eq!(t.outcomes_in("m", Tier::Caution), vec!["c"]);
        assert_eq!(t.outcomes_in("m", Tier::Limited), vec!["e", "d"]);
        let empty = rank_models(&report, 5.0, Some(0.5));
        assert!(empty.outcomes_in("m", Tier::Reliable).is_empty());
        assert_eq!(report.lowest_positive("m"), Some(0.2));
    }

    #[test]
    fn evaluate_matches_zones() {
        let est = EstimateSet {
            model: "m".into(),
            region: "x".into(),
            rows: (0..5)
                .map(|i| EstimateRow {
                    zone_id: format!("z{i}"),
                    outcome: "o".into(),
                    estimate: 10.0 + i as f64,
                })
                .collect(),
        };
        let reference = ReferenceSet::new(
            "x",
            (0..4)
                .map(|i| ReferenceRow {
                    zone_id: format!("z{i}"),
                    outcome: "o".into(),
                    estimate: 11.0 + i as f64,
                    ci: Some((10.5 + i as f64, 12.0 + i as f64)),
                })
                .collect(),
        )
        .unwrap();
        let m = evaluate(&est, &reference).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].n, 4);
        assert_eq!(m[0].excluded, 1);
        assert_eq!(m[0].mae, Some(1.0));
        assert!((m[0].r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m[0].ci_coverage, Some(0.0));
    }

    #[test]
    fn reference_ci_must_contain_estimate() {
        let bad = ReferenceSet::new(
            "x",
            vec![ReferenceRow {
                zone_id: "z".into(),
                outcome: "o".into(),
                estimate: 5.0,
                ci: Some((6.0, 7.0)),
            }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn csv_readers() {
        let est = "model,region,zone_id,outcome,estimate\nm,x,z1,o,1.5\nm,y,z1,o,2\n";
        let sets = read_estimates(est.as_bytes()).unwrap();
        assert_eq!(sets.len(), 2);
        let dup = "model,region,zone_id,outcome,estimate\nm,x,z1,o,1.5\nm,x,z1,o,2\n";
        assert!(read_estimates(dup.as_bytes()).is_err());

        let reference = "region,zone_id,outcome,estimate,ci_low,ci_high\nx,z1,o,1,0.5,2\nx,z2,o,1,,\n";
        let (sets, has_ci) = read_reference(reference.as_bytes()).unwrap();
        assert!(has_ci);
        assert_eq!(sets[0].rows[1].ci, None);
        let half = "region,zone_id,outcome,estimate,ci_low\nx,z1,o,1,0.5\n";
        assert!(matches!(read_reference(half.as_bytes()), Err(Error::Schema(_))));

        let metrics = "model,region,outcome,r,mae,ci_coverage\nm,x,o,0.5,1.2,0.75\nm,x,p,,1.0,\n";
        let m = read_metrics(metrics.as_bytes()).unwrap();
        assert_eq!(m[0].r2, Some(0.25));
        assert_eq!(m[1].r, None);
        let pct = "model,region,outcome,r,mae,ci_coverage\nm,x,o,0.5,1.2,75\n";
        assert!(read_metrics(pct.as_bytes()).is_err());
    }
}
