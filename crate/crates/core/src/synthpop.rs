//! Truncate-replicate-sample integerisation, expansion into synthetic agents
//! and attribute linkage.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harmonize::SurveyTable;
use crate::rng;

/// Integer replication counts for one zone, aligned with survey record order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntegerCounts {
    pub zone_id: String,
    pub counts: Vec<u32>,
    /// `round(sum of weights)`; always equals the sum of `counts`.
    pub total: u64,
    /// Records topped up from the fractional remainders.
    pub deficit: u64,
}

/// Selection probabilities proportional to `fractions`, summing to `draws`,
/// with every probability capped at one. Records whose proportional share
/// would exceed one are taken with certainty and the remaining draws are
/// spread over the rest.
fn capped_inclusion(fractions: &[f64], draws: u64) -> Vec<f64> {
    let mut pi = vec![0.0; fractions.len()];
    let mut certain = vec![false; fractions.len()];
    let mut remaining = draws as f64;
    loop {
        let mass: f64 = fractions
            .iter()
            .zip(&certain)
            .filter(|(_, c)| !**c)
            .map(|(f, _)| f)
            .sum();
        if remaining <= 0.0 || mass <= 0.0 {
            break;
        }
        let scale = remaining / mass;
        let mut newly_certain = false;
        for (i, &f) in fractions.iter().enumerate() {
            if !certain[i] && f * scale >= 1.0 {
                certain[i] = true;
                pi[i] = 1.0;
                remaining -= 1.0;
                newly_certain = true;
            }
        }
        if !newly_certain {
            for (i, &f) in fractions.iter().enumerate() {
                if !certain[i] {
                    pi[i] = f * scale;
                }
            }
            break;
        }
    }
    pi
}

/// Truncates each weight, then tops the zone up to `round(sum w)` by
/// systematic sampling over the fractional remainders. The random start is
/// drawn from the stream keyed by `(seed, zone_id)`.
///
/// With `D` draws over remainders summing to `S`, record `i` is selected with
/// probability `D * f_i / S` (capped at one), so `E[count_i] = w_i` whenever
/// the weights sum to an integer.
pub fn integerise_trs(weights: &[f64], seed: u64, zone_id: &str) -> Result<IntegerCounts> {
    integerise_with(weights, &mut rng::zone_stream(seed, "trs", zone_id), zone_id)
}

pub fn integerise_with<R: Rng>(weights: &[f64], rng: &mut R, zone_id: &str) -> Result<IntegerCounts> {
    if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::data(format!("zone `{zone_id}`: invalid weight {bad}")));
    }
    let sum: f64 = weights.iter().sum();
    let total = sum.round() as u64;
    let mut counts: Vec<u32> = weights.iter().map(|w| w.floor() as u32).collect();
    let base: u64 = counts.iter().map(|&c| c as u64).sum();
    let deficit = total.saturating_sub(base);
    if deficit > 0 {
        let fractions: Vec<f64> = weights.iter().map(|w| w - w.floor()).collect();
        let pi = capped_inclusion(&fractions, deficit);
        let start: f64 = rng.random::<f64>();
        let mut next = start;
        let mut cumulative = 0.0;
        let mut taken = 0u64;
        for (i, &p) in pi.iter().enumerate() {
            cumulative += p;
            if taken < deficit && next < cumulative {
                counts[i] += 1;
                taken += 1;
                next += 1.0;
            }
        }
        // Floating-point shortfall on the final pointer: give it to the last
        // eligible record not yet incremented.
        if taken < deficit {
            for i in (0..pi.len()).rev() {
                if taken == deficit {
                    break;
                }
                if pi[i] > 0.0 && counts[i] == weights[i].floor() as u32 {
                    counts[i] += 1;
                    taken += 1;
                }
            }
        }
        if taken != deficit {
            return Err(Error::Internal(format!(
                "zone `{zone_id}`: integerisation placed {taken} of {deficit} top-ups"
            )));
        }
    }
    Ok(IntegerCounts {
        zone_id: zone_id.to_string(),
        counts,
        total,
        deficit,
    })
}

/// One synthetic individual.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Agent {
    pub zone_id: Arc<str>,
    pub survey_id: Arc<str>,
    pub replicate: u32,
    pub attributes: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SyntheticPopulation {
    pub attributes: Vec<String>,
    /// Ordered by (zone_id, survey_id, replicate).
    pub agents: Vec<Agent>,
}

impl SyntheticPopulation {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn attribute_position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    /// Agent count per zone, in zone order.
    pub fn zone_sizes(&self) -> Vec<(Arc<str>, usize)> {
        let mut out: Vec<(Arc<str>, usize)> = Vec::new();
        for a in &self.agents {
            match out.last_mut() {
                Some((z, n)) if *z == a.zone_id => *n += 1,
                _ => out.push((a.zone_id.clone(), 1)),
            }
        }
        out
    }
}

/// Emits `count_i` replicates of every survey record in every zone and copies
/// the named attributes from the source record.
pub fn expand(counts: &[IntegerCounts], survey: &SurveyTable, attributes: &[&str]) -> Result<SyntheticPopulation> {
    let positions = attributes
        .iter()
        .map(|name| {
            survey
                .schema()
                .attribute_position(name)
                .ok_or_else(|| Error::schema(format!("unknown attribute `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut by_id: Vec<usize> = (0..survey.len()).collect();
    by_id.sort_by(|&a, &b| survey.records()[a].id.cmp(&survey.records()[b].id));

    let mut zones: Vec<&IntegerCounts> = counts.iter().collect();
    zones.sort_by(|a, b| a.zone_id.cmp(&b.zone_id));

    let total: u64 = zones.iter().map(|z| z.total).sum();
    let mut agents = Vec::with_capacity(total as usize);
    for z in zones {
        if z.counts.len() != survey.len() {
            return Err(Error::data(format!(
                "zone `{}`: {} counts for {} survey records",
                z.zone_id,
                z.counts.len(),
                survey.len()
            )));
        }
        let zone_id: Arc<str> = Arc::from(z.zone_id.as_str());
        for &i in &by_id {
            let record = &survey.records()[i];
            let linked: Vec<bool> = positions.iter().map(|&p| record.attributes[p]).collect();
            for replicate in 1..=z.counts[i] {
                agents.push(Agent {
                    zone_id: zone_id.clone(),
                    survey_id: record.id.clone(),
                    replicate,
                    attributes: linked.clone(),
                });
            }
        }
    }
    Ok(SyntheticPopulation {
        attributes: attributes.iter().map(|a| a.to_string()).collect(),
        agents,
    })
}

/// `zone_id,survey_id,count`, skipping zero counts.
pub fn write_counts<W: Write>(counts: &[IntegerCounts], survey: &SurveyTable, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["zone_id", "survey_id", "count"])?;
    for z in counts {
        for (r, &c) in survey.records().iter().zip(&z.counts) {
            if c > 0 {
                out.write_record([z.zone_id.as_str(), &r.id, &c.to_string()])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("counts output", e))?;
    Ok(())
}

/// Reads a counts file and joins it to the survey by id.
pub fn read_counts<R: Read>(reader: R, survey: &SurveyTable) -> Result<Vec<IntegerCounts>> {
    let index: HashMap<&str, usize> = survey
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (&*r.id, i))
        .collect();
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(format!("counts are missing column `{name}`")))
    };
    let (zc, ic, cc) = (col("zone_id")?, col("survey_id")?, col("count")?);
    let mut zones: Vec<IntegerCounts> = Vec::new();
    let mut zone_index: HashMap<String, usize> = HashMap::new();
    for row in csv.records() {
        let row = row?;
        let zone = &row[zc];
        let id = &row[ic];
        let i = *index
            .get(id)
            .ok_or_else(|| Error::data(format!("survey id `{id}` in counts is not in the survey")))?;
        let c: u32 = row[cc]
            .parse()
            .map_err(|_| Error::data(format!("bad count `{}` for `{id}`", &row[cc])))?;
        let z = *zone_index.entry(zone.to_string()).or_insert_with(|| {
            zones.push(IntegerCounts {
                zone_id: zone.to_string(),
                counts: vec![0; survey.len()],
                total: 0,
                deficit: 0,
            });
            zones.len() - 1
        });
        zones[z].counts[i] += c;
        zones[z].total += c as u64;
    }
    Ok(zones)
}

/// `zone_id,survey_id,replicate,<attributes...>`.
pub fn write_population<W: Write>(pop: &SyntheticPopulation, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["zone_id".to_string(), "survey_id".into(), "replicate".into()];
    header.extend(pop.attributes.iter().cloned());
    out.write_record(&header)?;
    for a in &pop.agents {
        let mut row = vec![a.zone_id.to_string(), a.survey_id.to_string(), a.replicate.to_string()];
        row.extend(a.attributes.iter().map(|&b| if b { "1".to_string() } else { "0".to_string() }));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("population output", e))?;
    Ok(())
}
