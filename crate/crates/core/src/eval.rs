//! Evaluation report: CC and SC++ split by same/different content, SC, and
//! per-category rows.

use crate::error::Result;
use crate::metrics::{metric_cc, metric_sc, metric_scpp, EvalPair, StyleTransfer};
use crate::motion::MotionSequence;

/// Every ordered pair of distinct test motions, transferred by `model`.
pub fn build_pairs(model: &impl StyleTransfer, test: &[MotionSequence]) -> Result<Vec<EvalPair>> {
    let mut out = Vec::new();
    for (i, c) in test.iter().enumerate() {
        for (j, s) in test.iter().enumerate() {
            if i != j {
                out.push(EvalPair::run(model, c, s)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// `overall`, `content` or `style`.
    pub group: String,
    pub category: String,
    pub metric: &'static str,
    pub average: Option<f64>,
    pub same_content: Option<f64>,
    pub diff_content: Option<f64>,
    /// Pairs behind `average`.
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    /// Pairs without training clips in their SC++ cell, over the overall rows.
    pub scpp_skipped: usize,
}

fn subset<'a>(pairs: &[&'a EvalPair], keep: impl Fn(&EvalPair) -> Result<bool>) -> Result<Vec<&'a EvalPair>> {
    let mut out = Vec::new();
    for &p in pairs {
        if keep(p)? {
            out.push(p);
        }
    }
    Ok(out)
}

fn cc(pairs: &[&EvalPair]) -> Result<(Option<f64>, usize)> {
    let eligible = subset(pairs, |p| p.same_style())?;
    if eligible.is_empty() {
        return Ok((None, 0));
    }
    Ok((Some(metric_cc(eligible.iter().copied())?), eligible.len()))
}

fn scpp(pairs: &[&EvalPair], train: &[MotionSequence]) -> Result<(Option<f64>, usize, usize)> {
    if pairs.is_empty() {
        return Ok((None, 0, 0));
    }
    match metric_scpp(pairs.iter().copied(), train) {
        Ok(r) => Ok((Some(r.value), r.used, r.skipped)),
        Err(crate::Error::Data(_)) => Ok((None, 0, pairs.len())),
        Err(e) => Err(e),
    }
}

fn rows_for(group: &str, category: &str, pairs: &[&EvalPair], train: &[MotionSequence]) -> Result<(Vec<MetricRow>, usize)> {
    let same = subset(pairs, |p| p.same_content())?;
    let diff = subset(pairs, |p| p.same_content().map(|s| !s))?;
    let row = |metric, average: Option<f64>, same_content, diff_content, pairs| MetricRow {
        group: group.to_string(),
        category: category.to_string(),
        metric,
        average,
        same_content,
        diff_content,
        pairs,
    };
    let (cc_all, n_cc) = cc(pairs)?;
    let (scpp_all, n_scpp, skipped) = scpp(pairs, train)?;
    let sc = if same.is_empty() { None } else { Some(metric_sc(same.iter().copied())?) };
    let rows = vec![
        row("CC", cc_all, cc(&same)?.0, cc(&diff)?.0, n_cc),
        row("SC++", scpp_all, scpp(&same, train)?.0, scpp(&diff, train)?.0, n_scpp),
        row("SC", sc, sc, None, same.len()),
    ];
    Ok((rows, skipped))
}

fn labels(pairs: &[EvalPair], pick: impl Fn(&EvalPair) -> Option<&String>) -> Vec<String> {
    let mut v: Vec<String> = pairs.iter().filter_map(|p| pick(p).cloned()).collect();
    v.sort();
    v.dedup();
    v
}

/// Overall rows, then one block per content label of the content motion and
/// per style label of the style motion.
pub fn evaluate_pairs(pairs: &[EvalPair], train: &[MotionSequence]) -> Result<EvalReport> {
    let all: Vec<&EvalPair> = pairs.iter().collect();
    let (mut rows, scpp_skipped) = rows_for("overall", "all", &all, train)?;
    for c in labels(pairs, |p| p.content.labels.content.as_ref()) {
        let sub = subset(&all, |p| Ok(p.content.labels.content.as_ref() == Some(&c)))?;
        rows.extend(rows_for("content", &c, &sub, train)?.0);
    }
    for s in labels(pairs, |p| p.style.labels.style.as_ref()) {
        let sub = subset(&all, |p| Ok(p.style.labels.style.as_ref() == Some(&s)))?;
        rows.extend(rows_for("style", &s, &sub, train)?.0);
    }
    Ok(EvalReport { rows, scpp_skipped })
}

impl EvalReport {
    pub fn get(&self, group: &str, category: &str, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.group == group && r.category == category && r.metric == metric)
    }

    /// CSV with `NA` for splits that have no pairs.
    pub fn to_csv(&self) -> Result<String> {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| crate::Error::Data(format!("csv: {e}"));
        w.write_record(["group", "category", "metric", "average", "same_content", "diff_content", "pairs"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.group.clone(),
                r.category.clone(),
                r.metric.to_string(),
                fmt(r.average),
                fmt(r.same_content),
                fmt(r.diff_content),
                r.pairs.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Data(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}
