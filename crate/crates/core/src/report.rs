//! Aggregate audit results into summary tables (markdown + CSV) and figure
//! analogues.

use crate::analysis::{seed_variation_report, SeedVariationRow};
use crate::error::{Error, Result};
use crate::score::{MScoreResult, ScoreMeta, TTestKind};
use std::collections::BTreeMap;

/// Parse a results CSV produced by [`MScoreResult::append_csv`]. The
/// divergence vectors are not stored in the table, so they come back empty.
pub fn parse_results_csv(text: &str) -> Result<Vec<MScoreResult>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty results table".into()))?;
    if header != MScoreResult::CSV_HEADER {
        return Err(Error::InvalidArgument(format!(
            "unexpected results header: {header}"
        )));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::InvalidArgument(format!(
                "row {}: expected 9 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad number {s}", lineno + 2)))
        };
        out.push(MScoreResult {
            x_u: Vec::new(),
            x_r: Vec::new(),
            m: parse_f(fields[5])?,
            t_stat: parse_f(fields[6])?,
            p_value: parse_f(fields[7])?,
            n: fields[4]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad n", lineno + 2)))?,
            t_test: if fields[8] == "paired" {
                TTestKind::Paired
            } else {
                TTestKind::Welch
            },
            meta: ScoreMeta {
                canary_id: fields[0].to_string(),
                dataset: fields[1].to_string(),
                model_id: fields[2].to_string(),
                seed: fields[3].parse().unwrap_or(0),
            },
        });
    }
    Ok(out)
}

/// Group-average row of the per-(dataset, model) summary.
#[derive(Clone, Debug)]
pub struct GroupAverage {
    pub dataset: String,
    pub model: String,
    pub canaries: usize,
    /// Average M over canaries with M > 0 ("memorised"), None when empty.
    pub avg_memorised: Option<f64>,
    /// Unfiltered average over every canary.
    pub avg_all: f64,
    pub significant: usize,
}

/// Averages per (dataset, model): the M > 0 filtered mean (the headline
/// convention) plus the unfiltered mean for transparency.
pub fn group_averages(rows: &[MScoreResult]) -> Vec<GroupAverage> {
    let mut groups: BTreeMap<(String, String), Vec<&MScoreResult>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.meta.dataset.clone(), r.meta.model_id.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, model), rs)| {
            let memorised: Vec<f64> = rs.iter().map(|r| r.m).filter(|m| *m > 0.0).collect();
            let avg_memorised = if memorised.is_empty() {
                None
            } else {
                Some(memorised.iter().sum::<f64>() / memorised.len() as f64)
            };
            let avg_all = rs.iter().map(|r| r.m).sum::<f64>() / rs.len() as f64;
            GroupAverage {
                dataset,
                model,
                canaries: rs.len(),
                avg_memorised,
                avg_all,
                significant: rs.iter().filter(|r| r.p_value < 0.05).count(),
            }
        })
        .collect()
}

fn fmt_m(m: f64, p: f64) -> String {
    // Significant results in bold, matching the p < 0.05 convention.
    if p < 0.05 {
        format!("**{m:.4}**")
    } else {
        format!("{m:.4}")
    }
}

/// Render the aggregate markdown report: per-canary scores, group averages,
/// and (when several seeds per canary exist) the seed-variation table.
pub fn render_markdown(rows: &[MScoreResult]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no audit results to report".into()));
    }
    let mut md = String::from("# Memorisation audit report\n\n");

    md.push_str("## Per-canary M scores\n\n");
    md.push_str("Bold marks p < 0.05 (one-tailed).\n\n");
    md.push_str("| canary | dataset | model | seed | n | M | p-value |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    let mut sorted: Vec<&MScoreResult> = rows.iter().collect();
    sorted.sort_by(|a, b| b.m.partial_cmp(&a.m).expect("finite M"));
    for r in &sorted {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {:.4} |\n",
            r.meta.canary_id,
            r.meta.dataset,
            r.meta.model_id,
            r.meta.seed,
            r.n,
            fmt_m(r.m, r.p_value),
            r.p_value,
        ));
    }

    md.push_str("\n## Group averages\n\n");
    md.push_str("`avg (M>0)` averages only memorised canaries; `avg (all)` is unfiltered.\n\n");
    md.push_str("| dataset | model | canaries | avg (M>0) | avg (all) | p<0.05 |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for g in group_averages(rows) {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {} |\n",
            g.dataset,
            g.model,
            g.canaries,
            g.avg_memorised
                .map_or("n/a".to_string(), |v| format!("{v:.4}")),
            g.avg_all,
            g.significant,
        ));
    }

    // Seed variation only when some canary has two or more runs.
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        *counts.entry(r.meta.canary_id.as_str()).or_default() += 1;
    }
    if counts.values().any(|c| *c >= 2) {
        let eligible: Vec<MScoreResult> = rows
            .iter()
            .filter(|r| counts[r.meta.canary_id.as_str()] >= 2)
            .cloned()
            .collect();
        let report = seed_variation_report(&eligible)?;
        md.push_str("\n## Seed variation\n\n");
        md.push_str("| canary | runs | min M | max M | range | +/- | spans zero |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for row in &report {
            md.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} | {:.4} | {}/{} | {} |\n",
                row.canary_id,
                row.runs,
                row.min,
                row.max,
                row.range,
                row.positive,
                row.negative,
                if row.spans_zero { "yes" } else { "no" },
            ));
        }
    }
    Ok(md)
}

/// Summary CSV of the group averages.
pub fn render_summary_csv(rows: &[MScoreResult]) -> String {
    let mut out = String::from("dataset,model,canaries,avg_memorised,avg_all,significant\n");
    for g in group_averages(rows) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.dataset,
            g.model,
            g.canaries,
            g.avg_memorised
                .map_or("n/a".to_string(), |v| v.to_string()),
            g.avg_all,
            g.significant,
        ));
    }
    out
}

/// Seed-range rows for the range-figure analogue.
pub fn seed_ranges(rows: &[MScoreResult]) -> Result<Vec<(String, f64, f64)>> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        *counts.entry(r.meta.canary_id.as_str()).or_default() += 1;
    }
    let eligible: Vec<MScoreResult> = rows
        .iter()
        .filter(|r| counts[r.meta.canary_id.as_str()] >= 2)
        .cloned()
        .collect();
    let report: Vec<SeedVariationRow> = seed_variation_report(&eligible)?;
    Ok(report
        .into_iter()
        .map(|r| (r.canary_id, r.min, r.max))
        .collect())
}
