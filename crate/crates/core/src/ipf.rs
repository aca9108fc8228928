//! Per-zone iterative proportional fitting.
//!
//! Starting from unit weights, each sweep visits the constraint variables in
//! declaration order and rescales the weights of every category's members so
//! the weighted category count hits its target. Sweeps repeat until the
//! largest relative marginal deviation `|sum - target| / max(1, target)` is
//! within tolerance. The limit is the minimum Kullback-Leibler reweighting of
//! the uniform prior that satisfies all marginals.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonize::{ConstraintTable, SurveyTable, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityPolicy {
    /// Fail the zone.
    Error,
    /// Drop the offending variable from this zone's fit and warn.
    SkipVariable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub infeasibility: InfeasibilityPolicy,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-8,
            max_iterations: 1000,
            infeasibility: InfeasibilityPolicy::Error,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::schema("fit tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::schema("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Category membership of every record for each constraint variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n_records: usize,
    variables: Vec<DesignVariable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignVariable {
    pub name: String,
    pub n_categories: usize,
    /// Category index of each record.
    pub membership: Vec<u32>,
}

impl Design {
    pub fn new(n_records: usize, variables: Vec<DesignVariable>) -> Result<Self> {
        if n_records == 0 {
            return Err(Error::data("cannot fit an empty survey"));
        }
        for v in &variables {
            if v.membership.len() != n_records {
                return Err(Error::data(format!("variable `{}` has the wrong length", v.name)));
            }
            if v.membership.iter().any(|&c| c as usize >= v.n_categories) {
                return Err(Error::data(format!("variable `{}` has an out-of-range category", v.name)));
            }
        }
        Ok(Design { n_records, variables })
    }

    /// Resolves each constraint variable against the survey. A name may refer
    /// to a survey constraint variable (categories must match in order) or to
    /// a binary attribute, whose categories are read as `[true, false]`.
    pub fn from_survey(survey: &SurveyTable, variables: &[Variable]) -> Result<Self> {
        let schema = survey.schema();
        let mut out = Vec::with_capacity(variables.len());
        for v in variables {
            let membership: Vec<u32> = if let Some(p) = schema.variable_position(&v.name) {
                if schema.variables[p].categories != v.categories {
                    return Err(Error::schema(format!(
                        "marginal categories of `{}` do not match the survey's",
                        v.name
                    )));
                }
                survey.records().iter().map(|r| r.categories[p] as u32).collect()
            } else if let Some(a) = schema.attribute_position(&v.name) {
                if v.categories.len() != 2 {
                    return Err(Error::schema(format!(
                        "attribute constraint `{}` must have exactly two categories",
                        v.name
                    )));
                }
                survey
                    .records()
                    .iter()
                    .map(|r| if r.attributes[a] { 0 } else { 1 })
                    .collect()
            } else {
                return Err(Error::schema(format!(
                    "constraint variable `{}` is not in the survey",
                    v.name
                )));
            };
            out.push(DesignVariable {
                name: v.name.clone(),
                n_categories: v.categories.len(),
                membership,
            });
        }
        Design::new(survey.len(), out)
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn variables(&self) -> &[DesignVariable] {
        &self.variables
    }

    /// Weighted count of each category of variable `v`.
    pub fn weighted_counts(&self, v: usize, weights: &[f64]) -> Vec<f64> {
        let var = &self.variables[v];
        let mut totals = vec![0.0; var.n_categories];
        for (&c, &w) in var.membership.iter().zip(weights) {
            totals[c as usize] += w;
        }
        totals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneDiagnostics {
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
    /// Largest relative deviation per constraint variable.
    pub residuals: Vec<f64>,
    pub skipped_variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneFit {
    pub weights: Vec<f64>,
    pub diagnostics: ZoneDiagnostics,
}

/// Largest `|sum - target| / max(1, target)` over the categories of `v`.
fn relative_residual(design: &Design, v: usize, target: &[f64], weights: &[f64]) -> f64 {
    design
        .weighted_counts(v, weights)
        .iter()
        .zip(target)
        .map(|(s, m)| (s - m).abs() / m.max(1.0))
        .fold(0.0, f64::max)
}

/// Fits one zone. `targets[v][c]` is the marginal count for category `c` of
/// design variable `v`.
pub fn fit_zone(design: &Design, targets: &[Vec<f64>], opts: &FitOptions, zone_id: &str) -> Result<ZoneFit> {
    opts.validate()?;
    if targets.len() != design.variables.len() {
        return Err(Error::data(format!(
            "zone `{zone_id}`: {} target variables for {} design variables",
            targets.len(),
            design.variables.len()
        )));
    }
    let mut active = Vec::with_capacity(targets.len());
    let mut skipped = Vec::new();
    for (v, (var, target)) in design.variables.iter().zip(targets).enumerate() {
        if target.len() != var.n_categories {
            return Err(Error::data(format!(
                "zone `{zone_id}`: variable `{}` expects {} categories, got {}",
                var.name,
                var.n_categories,
                target.len()
            )));
        }
        if target.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::data(format!(
                "zone `{zone_id}`: variable `{}` has a negative or non-finite target",
                var.name
            )));
        }
        let mut members = vec![0usize; var.n_categories];
        for &c in &var.membership {
            members[c as usize] += 1;
        }
        let empty = (0..var.n_categories).find(|&c| target[c] > 0.0 && members[c] == 0);
        match (empty, opts.infeasibility) {
            (None, _) => active.push(v),
            (Some(c), InfeasibilityPolicy::Error) => {
                return Err(Error::infeasible(
                    zone_id,
                    format!(
                        "category {} of `{}` has target {} but no survey members",
                        c, var.name, target[c]
                    ),
                ));
            }
            (Some(c), InfeasibilityPolicy::SkipVariable) => {
                warn!(
                    "zone `{zone_id}`: skipping `{}` (category {c} has a target but no survey members)",
                    var.name
                );
                skipped.push(var.name.clone());
            }
        }
    }

    let mut weights = vec![1.0; design.n_records];
    let mut iterations = 0;
    let mut max_residual = f64::INFINITY;
    while iterations < opts.max_iterations {
        iterations += 1;
        for &v in &active {
            let totals = design.weighted_counts(v, &weights);
            let factors: Vec<f64> = totals
                .iter()
                .zip(&targets[v])
                .map(|(&s, &m)| if s > 0.0 { m / s } else { 1.0 })
                .collect();
            for (w, &c) in weights.iter_mut().zip(&design.variables[v].membership) {
                *w *= factors[c as usize];
            }
        }
        max_residual = active
            .iter()
            .map(|&v| relative_residual(design, v, &targets[v], &weights))
            .fold(0.0, f64::max);
        if max_residual <= opts.tolerance {
            break;
        }
    }
    let residuals = (0..design.variables.len())
        .map(|v| relative_residual(design, v, &targets[v], &weights))
        .collect();
    Ok(ZoneFit {
        weights,
        diagnostics: ZoneDiagnostics {
            iterations,
            max_residual,
            converged: max_residual <= opts.tolerance,
            residuals,
            skipped_variables: skipped,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneWeights {
    pub zone_id: String,
    pub weights: Vec<f64>,
    pub diagnostics: ZoneDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneFailure {
    pub zone_id: String,
    pub error: String,
}

/// Fitted weights for every feasible zone, in zone-id order, plus the zones
/// that could not be fitted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightField {
    pub zones: Vec<ZoneWeights>,
    pub failures: Vec<ZoneFailure>,
}

impl WeightField {
    pub fn converged(&self) -> usize {
        self.zones.iter().filter(|z| z.diagnostics.converged).count()
    }
}

/// Fits every zone of `constraints` independently. Runs on the current rayon
/// pool when the `parallel` feature is on; results do not depend on the pool
/// size.
pub fn fit_all(survey: &SurveyTable, constraints: &ConstraintTable, opts: &FitOptions) -> Result<WeightField> {
    opts.validate()?;
    let design = Design::from_survey(survey, &constraints.variables)?;
    Ok(fit_design(&design, constraints, opts))
}

pub fn fit_design(design: &Design, constraints: &ConstraintTable, opts: &FitOptions) -> WeightField {
    let fit = |zone: &crate::harmonize::ZoneMarginals| (zone.zone_id.clone(), fit_zone(design, &zone.counts, opts, &zone.zone_id));

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        constraints.zones.par_iter().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = constraints.zones.iter().map(fit).collect();

    let mut field = WeightField::default();
    for (zone_id, result) in results {
        match result {
            Ok(f) => {
                if !f.diagnostics.converged {
                    warn!(
                        "zone `{zone_id}` did not converge in {} sweeps (residual {:e})",
                        f.diagnostics.iterations, f.diagnostics.max_residual
                    );
                }
                field.zones.push(ZoneWeights {
                    zone_id,
                    weights: f.weights,
                    diagnostics: f.diagnostics,
                })
            }
            Err(e) => field.failures.push(ZoneFailure {
                zone_id,
                error: e.to_string(),
            }),
        }
    }
    field
}

/// `zone_id,survey_id,weight` with round-trip precision.
pub fn write_weights<W: Write>(field: &WeightField, survey: &SurveyTable, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["zone_id", "survey_id", "weight"])?;
    for z in &field.zones {
        for (r, w) in survey.records().iter().zip(&z.weights) {
            out.write_record([z.zone_id.as_str(), &r.id, &format!("{w:e}")])?;
        }
    }
    out.flush().map_err(|e| Error::io("weights output", e))?;
    Ok(())
}

/// `zone_id,iterations,max_residual,converged`.
pub fn write_diagnostics<W: Write>(field: &WeightField, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["zone_id", "iterations", "max_residual", "converged"])?;
    for z in &field.zones {
        out.write_record([
            z.zone_id.clone(),
            z.diagnostics.iterations.to_string(),
            format!("{:e}", z.diagnostics.max_residual),
            z.diagnostics.converged.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("diagnostics output", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(vars: &[(&str, usize, &[u32])]) -> Design {
        let n = vars[0].2.len();
        Design::new(
            n,
            vars.iter()
                .map(|(name, k, m)| DesignVariable {
                    name: name.to_string(),
                    n_categories: *k,
                    membership: m.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn own_counts_are_a_fixed_point() {
        let d = design(&[("a", 2, &[0, 0, 1, 1, 1]), ("b", 3, &[0, 1, 2, 2, 0])]);
        let fit = fit_zone(&d, &[vec![2.0, 3.0], vec![2.0, 1.0, 2.0]], &FitOptions::default(), "z").unwrap();
        assert_eq!(fit.weights, vec![1.0; 5]);
        assert_eq!(fit.diagnostics.iterations, 1);
        assert!(fit.diagnostics.converged);
    }

    #[test]
    fn single_variable_is_direct_rescaling() {
        let d = design(&[("a", 2, &[0, 0, 1, 1])]);
        let fit = fit_zone(&d, &[vec![6.0, 2.0]], &FitOptions::default(), "z").unwrap();
        assert_eq!(fit.weights, vec![3.0, 3.0, 1.0, 1.0]);
        assert_eq!(fit.diagnostics.iterations, 1);
    }

    #[test]
    fn zero_target_zeroes_members() {
        let d = design(&[("a", 2, &[0, 0, 1, 1]), ("b", 2, &[0, 1, 0, 1])]);
        let fit = fit_zone(&d, &[vec![0.0, 4.0], vec![1.0, 3.0]], &FitOptions::default(), "z").unwrap();
        assert_eq!(fit.weights[0], 0.0);
        assert_eq!(fit.weights[1], 0.0);
        assert!(fit.diagnostics.converged);
        assert!((fit.weights[2] - 1.0).abs() < 1e-9);
        assert!((fit.weights[3] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_cell_policy() {
        let d = design(&[("a", 2, &[0, 0, 0]), ("b", 2, &[0, 1, 0])]);
        let targets = [vec![2.0, 1.0], vec![2.0, 1.0]];
        let err = fit_zone(&d, &targets, &FitOptions::default(), "z9").unwrap_err();
        assert!(matches!(&err, Error::Infeasible { zone, .. } if zone == "z9"));

        let opts = FitOptions {
            infeasibility: InfeasibilityPolicy::SkipVariable,
            ..FitOptions::default()
        };
        let fit = fit_zone(&d, &targets, &opts, "z9").unwrap();
        assert_eq!(fit.diagnostics.skipped_variables, vec!["a".to_string()]);
        assert!(fit.diagnostics.converged);
        let counts = d.weighted_counts(1, &fit.weights);
        assert!((counts[0] - 2.0).abs() < 1e-12 && (counts[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_totals_flag_nonconvergence() {
        let d = design(&[("a", 2, &[0, 1, 0, 1]), ("b", 2, &[0, 0, 1, 1])]);
        let opts = FitOptions {
            max_iterations: 20,
            ..FitOptions::default()
        };
        let fit = fit_zone(&d, &[vec![5.0, 5.0], vec![3.0, 3.0]], &opts, "z").unwrap();
        assert!(!fit.diagnostics.converged);
        assert_eq!(fit.diagnostics.iterations, 20);
        assert!(fit.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
    }

    #[test]
    fn bad_options_rejected() {
        let d = design(&[("a", 2, &[0, 1])]);
        let opts = FitOptions {
            tolerance: 0.0,
            ..FitOptions::default()
        };
        assert!(fit_zone(&d, &[vec![1.0, 1.0]], &opts, "z").is_err());
        let opts = FitOptions {
            max_iterations: 0,
            ..FitOptions::default()
        };
        assert!(fit_zone(&d, &[vec![1.0, 1.0]], &opts, "z").is_err());
    }
}
