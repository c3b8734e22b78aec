use std::fmt::Write as _;
use std::path::Path;

use crate::config::{parse_kv, read_kv, HyperParams, HYPER_KEYS};
use crate::corpus::InteractionCorpus;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalOptions, EvalSplit, Metrics};
use crate::relstore::RelationStore;

use super::fit;

/// Grid axes in key order: `key=v1,v2,…` per line.
pub type Grid = Vec<(String, Vec<String>)>;

pub fn parse_grid(text: &str, path: &Path) -> Result<Grid> {
    grid_from_kv(parse_kv(text, path)?)
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    grid_from_kv(read_kv(path)?)
}

fn grid_from_kv(kv: std::collections::BTreeMap<String, String>) -> Result<Grid> {
    let mut grid = Vec::new();
    for (k, v) in kv {
        if !HYPER_KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "grid key {k:?} is not a hyperparameter"
            )));
        }
        let values: Vec<String> = v
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid key {k:?} has no values")));
        }
        grid.push((k, values));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    Ok(grid)
}

/// Cartesian product of the grid, last axis varying fastest.
pub fn grid_points(grid: &Grid) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for (k, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub setting: Vec<(String, String)>,
    pub valid_mrr: Option<f64>,
    pub test: Option<Metrics>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn label(&self) -> String {
        self.setting
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn run_point(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    base: &HyperParams,
    setting: &[(String, String)],
) -> Result<(f64, Metrics)> {
    let mut hyper = base.clone();
    for (k, v) in setting {
        hyper.set(k, v)?;
    }
    hyper.validate()?;
    let out = fit(corpus, store, &hyper)?;
    let opts = EvalOptions {
        threads: hyper.threads,
        ..EvalOptions::new(EvalSplit::Test)
    };
    let report = evaluate(&out.best.params, &hyper, corpus, &opts)?;
    Ok((out.best_valid_mrr, report.metrics))
}

/// Runs [`fit`] per grid point. Failed points are kept with their error.
/// Rows are sorted by validation MRR, best first; failures last.
pub fn sweep(
    corpus: &InteractionCorpus,
    store: &RelationStore,
    base: &HyperParams,
    grid: &Grid,
) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = grid_points(grid)
        .into_iter()
        .map(|setting| match run_point(corpus, store, base, &setting) {
            Ok((mrr, test)) => SweepRow {
                setting,
                valid_mrr: Some(mrr),
                test: Some(test),
                error: None,
            },
            Err(e) => SweepRow {
                setting,
                valid_mrr: None,
                test: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &SweepRow| r.valid_mrr.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });
    rows
}

/// Tab-separated results table with a header line.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("setting\tvalid_mrr\ttest_recall@5\ttest_recall@10\ttest_ndcg@5\ttest_ndcg@10\ttest_mrr\terror\n");
    for r in rows {
        let _ = write!(s, "{}", r.label());
        match (r.valid_mrr, &r.test) {
            (Some(v), Some(m)) => {
                let _ = write!(
                    s,
                    "\t{v:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t",
                    m.recall_5, m.recall_10, m.ndcg_5, m.ndcg_10, m.mrr
                );
            }
            _ => s.push_str("\t\t\t\t\t\t\t"),
        }
        let _ = writeln!(
            s,
            "{}",
            r.error.as_deref().unwrap_or("").replace(['\t', '\n'], " ")
        );
    }
    s
}
