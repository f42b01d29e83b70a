//! Batch evaluation: every evaluation point x every non-predicted class,
//! aggregated into counterfactual / common-point counts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{Classifier, Family};
use crate::contrastive::ContrastiveQuery;
use crate::counterfactual::{find_counterfactuals, CounterfactualSet, NeighborIndex, NEIGHBOR_STEP};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, PipelineConfig};
use crate::shapley::{self, ShapleyConfig, ShapleyMatrix, ValueFunction};
use crate::Scalar;

/// Per-coordinate tolerance for matching a counterfactual to a dataset row.
pub const COMMON_POINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    pub eval_set: EvalSet,
    /// Keep only the first N evaluation points (in row order).
    pub max_points: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            eval_set: EvalSet::Test,
            max_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvalQuery<F: Scalar = f64> {
    /// Row of the dataset the point came from.
    pub row: usize,
    pub query: ContrastiveQuery<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub model: String,
    pub total_queries: usize,
    pub cfs: usize,
    pub cps: usize,
    /// Percentage, 0 when `cfs` is 0.
    pub ratio: f64,
    pub avg: f64,
    pub raw_cfs: usize,
    pub fallback_count: usize,
    /// Queries with neither a counterfactual nor a fallback point.
    pub unresolved_count: usize,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome<F: Scalar = f64> {
    pub row: usize,
    pub predicted: usize,
    pub desired: usize,
    pub shapley: ShapleyMatrix<F>,
    pub result: Option<CounterfactualSet<F>>,
    pub common: usize,
}

#[derive(Debug, Clone)]
pub struct EvaluationRun<F: Scalar = f64> {
    pub report: EvaluationReport,
    pub outcomes: Vec<QueryOutcome<F>>,
}

fn evaluation_rows(split: &Split, n_rows: usize, eval_set: EvalSet, max_points: Option<usize>) -> Vec<usize> {
    let mut rows = match eval_set {
        EvalSet::Test => split.test_indices.clone(),
        EvalSet::All => (0..n_rows).collect(),
    };
    if let Some(m) = max_points {
        rows.truncate(m);
    }
    rows
}

/// One query per evaluation point and class other than the prediction.
pub fn enumerate_queries<F: Scalar>(
    ds: &Dataset<F>,
    split: &Split,
    model: &dyn Classifier<F>,
    eval_set: EvalSet,
    max_points: Option<usize>,
) -> Result<Vec<EvalQuery<F>>> {
    let mut queries = Vec::new();
    for row in evaluation_rows(split, ds.n_rows(), eval_set, max_points) {
        let point = ds.row(row);
        let predicted = model.predict(point)?;
        for desired in (0..model.n_classes()).filter(|&c| c != predicted) {
            queries.push(EvalQuery {
                row,
                query: ContrastiveQuery::new(point.to_vec(), predicted, desired, model.n_classes())?,
            });
        }
    }
    Ok(queries)
}

/// Lookup of dataset rows for tolerance matching, sorted on the first
/// coordinate so each probe scans only a narrow window.
pub struct CommonPointIndex<F: Scalar = f64> {
    rows: Vec<Vec<F>>,
}

impl<F: Scalar> CommonPointIndex<F> {
    pub fn new(ds: &Dataset<F>) -> Self {
        let mut rows: Vec<Vec<F>> = ds.rows().map(<[F]>::to_vec).collect();
        rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).expect("finite"));
        Self { rows }
    }

    pub fn contains(&self, x: &[F]) -> bool {
        let tol = F::of(COMMON_POINT_TOLERANCE);
        let lo = self.rows.partition_point(|r| r[0] < x[0] - tol);
        self.rows[lo..]
            .iter()
            .take_while(|r| r[0] <= x[0] + tol)
            .any(|r| r.iter().zip(x).all(|(a, b)| (*a - *b).abs() <= tol))
    }

    pub fn count(&self, points: &[Vec<F>]) -> usize {
        points.iter().filter(|p| self.contains(p)).count()
    }
}

/// Number of `points` matching some row of `ds` within the tolerance.
pub fn count_common<F: Scalar>(points: &[Vec<F>], ds: &Dataset<F>) -> usize {
    if points.is_empty() {
        return 0;
    }
    CommonPointIndex::new(ds).count(points)
}

/// Trains `family` on `raw` and evaluates every query.
pub fn run_evaluation<F: Scalar>(raw: &Dataset<F>, family: Family, config: &EvalConfig) -> Result<EvaluationReport> {
    Ok(run_evaluation_detailed(raw, family, config)?.report)
}

pub fn run_evaluation_detailed<F: Scalar>(
    raw: &Dataset<F>,
    family: Family,
    config: &EvalConfig,
) -> Result<EvaluationRun<F>> {
    let pipeline = Pipeline::build(raw.clone(), family, config.pipeline.clone())?;
    evaluate_pipeline(&pipeline, config)
}

pub fn evaluate_pipeline<F: Scalar>(pipeline: &Pipeline<F>, config: &EvalConfig) -> Result<EvaluationRun<F>> {
    evaluate_model(
        pipeline.data(),
        pipeline.split(),
        pipeline.model(),
        pipeline.family().label(),
        pipeline.background(),
        pipeline.index(),
        config,
    )
}

/// Evaluates an arbitrary classifier over a standardized dataset.
pub fn evaluate_model<F: Scalar>(
    data: &Dataset<F>,
    split: &Split,
    model: &dyn Classifier<F>,
    model_label: &str,
    background: &[F],
    index: &NeighborIndex<F>,
    config: &EvalConfig,
) -> Result<EvaluationRun<F>> {
    let vf = ValueFunction::new(model, background.to_vec())?;
    let queries = enumerate_queries(data, split, model, config.eval_set, config.max_points)?;
    let common_index = CommonPointIndex::new(data);
    let shap_config: &ShapleyConfig = &config.pipeline.shapley;

    let mut outcomes = Vec::with_capacity(queries.len());
    let mut cached: Option<(usize, ShapleyMatrix<F>)> = None;
    for (qi, q) in queries.iter().enumerate() {
        let attach = |e: Error| Error::Query {
            index: qi,
            point: q.row,
            desired: q.query.desired,
            source: Box::new(e),
        };
        // attributions cover every class, so compute once per point
        let sv = match &cached {
            Some((row, sv)) if *row == q.row => sv.clone(),
            _ => {
                let sv = shapley::explain(&vf, &q.query.point, shap_config).map_err(attach)?;
                cached = Some((q.row, sv.clone()));
                sv
            }
        };
        let result = match find_counterfactuals(model, &q.query.point, q.query.desired, &sv, index) {
            Ok(set) => Some(set),
            Err(Error::NoCounterfactual(_)) => None,
            Err(e) => return Err(attach(e)),
        };
        let common = result.as_ref().map_or(0, |s| common_index.count(&s.points));
        outcomes.push(QueryOutcome {
            row: q.row,
            predicted: q.query.predicted,
            desired: q.query.desired,
            shapley: sv,
            result,
            common,
        });
    }

    let total_queries = outcomes.len();
    let cfs: usize = outcomes.iter().filter_map(|o| o.result.as_ref()).map(|s| s.points.len()).sum();
    let raw_cfs: usize = outcomes.iter().filter_map(|o| o.result.as_ref()).map(|s| s.raw_count).sum();
    let cps: usize = outcomes.iter().map(|o| o.common).sum();
    let fallback_count = outcomes
        .iter()
        .filter(|o| o.result.as_ref().is_none_or(|s| s.is_fallback))
        .count();
    let unresolved_count = outcomes.iter().filter(|o| o.result.is_none()).count();
    let report = EvaluationReport {
        dataset: data.name().to_string(),
        model: model_label.to_string(),
        total_queries,
        cfs,
        cps,
        ratio: if cfs == 0 { 0.0 } else { 100.0 * cps as f64 / cfs as f64 },
        avg: if total_queries == 0 {
            0.0
        } else {
            cfs as f64 / total_queries as f64
        },
        raw_cfs,
        fallback_count,
        unresolved_count,
        config_fingerprint: config_fingerprint::<F>(data, model_label, config),
    };
    Ok(EvaluationRun { report, outcomes })
}

/// Hash of the data, model label, configuration and fixed search policy.
pub fn config_fingerprint<F: Scalar>(data: &Dataset<F>, model_label: &str, config: &EvalConfig) -> String {
    let policy = serde_json::json!({
        "dataset": data.content_hash(),
        "model": model_label,
        "config": config,
        "scalar": std::any::type_name::<F>(),
        "neighbor_step": NEIGHBOR_STEP,
        "dedup": true,
        "fallback": "model-predicted",
        "common_tolerance": COMMON_POINT_TOLERANCE,
        "avg_denominator": "queries",
    });
    hex::encode(Sha256::digest(policy.to_string().as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl ReportFormat {
    /// `.csv` selects CSV, anything else markdown.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Markdown,
        }
    }
}

pub fn emit_report(reports: &[EvaluationReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(reports),
        ReportFormat::Csv => csv_text(reports),
    }
}

fn markdown(reports: &[EvaluationReport]) -> String {
    let mut s = String::new();
    s.push_str(
        "Avg = CFs per query. CFs count distinct counterfactual points; fallback points are excluded.\n\n",
    );
    s.push_str("| Model | CFs | CPs | Ratio | Avg |\n");
    s.push_str("|-------|-----|-----|-------|-----|\n");
    for r in reports {
        let _ = writeln!(s, "| {} | {} | {} | {:.2}% | {:.2} |", r.model, r.cfs, r.cps, r.ratio, r.avg);
    }
    if !reports.is_empty() {
        s.push('\n');
        for r in reports {
            let _ = writeln!(
                s,
                "- {} on {}: {} queries, {} CFs before deduplication, {} fallback, {} unresolved, config {}",
                r.model,
                r.dataset,
                r.total_queries,
                r.raw_cfs,
                r.fallback_count,
                r.unresolved_count,
                &r.config_fingerprint[..r.config_fingerprint.len().min(16)]
            );
        }
    }
    s
}

fn csv_text(reports: &[EvaluationReport]) -> String {
    let mut s = String::from("dataset,model,queries,cfs,cps,ratio,avg,raw_cfs,fallbacks,unresolved,config_fingerprint\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4},{:.4},{},{},{},{}",
            r.dataset,
            r.model,
            r.total_queries,
            r.cfs,
            r.cps,
            r.ratio,
            r.avg,
            r.raw_cfs,
            r.fallback_count,
            r.unresolved_count,
            r.config_fingerprint
        );
    }
    s
}
