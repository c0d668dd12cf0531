//! Ranking metrics, paired significance testing and the ablation runner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::agents::AgentId;
use crate::clock::Clock;
use crate::config::AnnotationConfig;
use crate::knowledge_base::{Catalog, TrainingExample};
use crate::pipeline::{Engine, EngineError, EngineOptions};
use crate::prompting::Confidence;
use crate::provider::ModelProvider;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("paired samples differ in length ({0} vs {1}) or have fewer than 2 items")]
    LengthMismatch(usize, usize),
    #[error("all paired differences are identical (t = {t}, p = {p})")]
    DegenerateDifferences { t: f64, p: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub utterance: String,
    pub gold_id: String,
    pub predicted: Vec<String>,
    #[serde(default)]
    pub band: Option<Confidence>,
}

impl EvalInstance {
    /// 1-based rank of the gold id.
    pub fn rank(&self) -> Option<usize> {
        self.predicted.iter().position(|p| p == &self.gold_id).map(|i| i + 1)
    }

    pub fn reciprocal_rank(&self) -> f64 {
        self.rank().map_or(0.0, |r| 1.0 / r as f64)
    }
}

fn nonempty(instances: &[EvalInstance]) -> Result<(), EvalError> {
    if instances.is_empty() {
        Err(EvalError::EmptyDataset)
    } else {
        Ok(())
    }
}

pub fn topk_accuracy(instances: &[EvalInstance], k: usize) -> Result<f64, EvalError> {
    nonempty(instances)?;
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let hits = instances.iter().filter(|i| i.rank().is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / instances.len() as f64)
}

pub fn mrr(instances: &[EvalInstance]) -> Result<f64, EvalError> {
    nonempty(instances)?;
    Ok(instances.iter().map(EvalInstance::reciprocal_rank).sum::<f64>() / instances.len() as f64)
}

/// Binary single-gold NDCG: 1/log2(rank + 1) inside the cutoff, else 0.
pub fn ndcg_at_k(instances: &[EvalInstance], k: usize) -> Result<f64, EvalError> {
    nonempty(instances)?;
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let total: f64 = instances
        .iter()
        .map(|i| match i.rank() {
            Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
            _ => 0.0,
        })
        .sum();
    Ok(total / instances.len() as f64)
}

/// Macro-averaged F1 over gold classes, using the top-1 prediction as the
/// predicted class.
pub fn macro_f1_top1(instances: &[EvalInstance]) -> Result<f64, EvalError> {
    nonempty(instances)?;
    let classes: BTreeSet<&str> = instances.iter().map(|i| i.gold_id.as_str()).collect();
    let f1s = classes.iter().map(|c| {
        let tp = instances
            .iter()
            .filter(|i| i.gold_id == *c && i.predicted.first().map(String::as_str) == Some(c))
            .count() as f64;
        let predicted = instances
            .iter()
            .filter(|i| i.predicted.first().map(String::as_str) == Some(c))
            .count() as f64;
        let actual = instances.iter().filter(|i| i.gold_id == *c).count() as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let p = tp / predicted;
        let r = tp / actual;
        2.0 * p * r / (p + r)
    });
    Ok(f1s.sum::<f64>() / classes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub mrr: f64,
    pub ndcg3: f64,
    pub ndcg5: f64,
    pub macro_f1_top1: f64,
    /// Fraction of instances in each band whose top-1 equals gold.
    pub per_band_agreement: BTreeMap<String, f64>,
}

/// All metrics, with predictions capped at `cap` (the configured top-N).
pub fn metrics_report(instances: &[EvalInstance], cap: usize) -> Result<MetricsReport, EvalError> {
    nonempty(instances)?;
    let capped: Vec<EvalInstance> = instances
        .iter()
        .map(|i| EvalInstance {
            predicted: i.predicted.iter().take(cap).cloned().collect(),
            ..i.clone()
        })
        .collect();
    let mut per_band_agreement = BTreeMap::new();
    for band in [Confidence::High, Confidence::Medium, Confidence::Low] {
        let in_band: Vec<&EvalInstance> = capped.iter().filter(|i| i.band == Some(band)).collect();
        if !in_band.is_empty() {
            let agree = in_band.iter().filter(|i| i.rank() == Some(1)).count();
            per_band_agreement.insert(band.as_str().to_string(), agree as f64 / in_band.len() as f64);
        }
    }
    Ok(MetricsReport {
        n: capped.len(),
        top1: topk_accuracy(&capped, 1)?,
        top3: topk_accuracy(&capped, 3)?,
        top5: topk_accuracy(&capped, 5)?,
        mrr: mrr(&capped)?,
        ndcg3: ndcg_at_k(&capped, 3)?,
        ndcg5: ndcg_at_k(&capped, 5)?,
        macro_f1_top1: macro_f1_top1(&capped)?,
        per_band_agreement,
    })
}

// Student-t tail via the regularized incomplete beta function.

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// Bonferroni-corrected level, 0.05 / m.
    pub threshold: f64,
    pub significant: bool,
    pub degenerate: bool,
}

pub const ALPHA: f64 = 0.05;

/// Paired t-test of `a` against `b` with a Bonferroni correction for
/// `m_comparisons`.
pub fn paired_ttest(a: &[f64], b: &[f64], m_comparisons: usize) -> Result<TTest, EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 || d.iter().all(|x| *x == d[0]) {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Err(EvalError::DegenerateDifferences { t, p });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = a.len() - 1;
    let p = student_t_two_sided(t, df as f64);
    let threshold = ALPHA / m_comparisons.max(1) as f64;
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: mean,
        threshold,
        significant: p < threshold,
        degenerate: false,
    })
}

/// [`paired_ttest`] with degenerate samples folded into the result.
pub fn significance(a: &[f64], b: &[f64], m_comparisons: usize) -> Result<TTest, EvalError> {
    match paired_ttest(a, b, m_comparisons) {
        Err(EvalError::DegenerateDifferences { t, p }) => {
            let n = a.len() as f64;
            let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
            let threshold = ALPHA / m_comparisons.max(1) as f64;
            Ok(TTest {
                t,
                p,
                df: a.len() - 1,
                mean_diff: mean,
                threshold,
                significant: p < threshold,
                degenerate: true,
            })
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPlanner,
    NoJudge,
    NoEmbeddings,
    SharedFewShots,
    FourAgents,
    Single,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Self::Full,
        Self::NoPlanner,
        Self::NoJudge,
        Self::NoEmbeddings,
        Self::SharedFewShots,
        Self::FourAgents,
        Self::Single,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoPlanner => "no_planner",
            Self::NoJudge => "no_judge",
            Self::NoEmbeddings => "no_embeddings",
            Self::SharedFewShots => "shared_few_shots",
            Self::FourAgents => "four_agents",
            Self::Single => "single",
        }
    }

    /// Engine toggles for this variant.
    pub fn options(self, embeddings_enabled: bool) -> EngineOptions {
        let full = EngineOptions::default();
        match self {
            Self::Full => full,
            Self::NoPlanner => EngineOptions {
                use_planner: false,
                ..full
            },
            Self::NoJudge => EngineOptions {
                use_judge: false,
                ..full
            },
            Self::NoEmbeddings => EngineOptions {
                agents: vec![AgentId::PrimaryNoEmb, AgentId::FullNoEmb],
                ..full
            },
            Self::SharedFewShots => EngineOptions {
                shared_few_shots: true,
                ..full
            },
            Self::FourAgents => EngineOptions {
                use_planner: false,
                use_judge: false,
                ..full
            },
            Self::Single => EngineOptions {
                use_planner: false,
                use_judge: false,
                agents: vec![if embeddings_enabled { AgentId::FullEmb } else { AgentId::FullNoEmb }],
                shared_few_shots: false,
            },
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| EvalError::UnknownVariant(s.to_string()))
    }
}

pub fn parse_variants(list: &str) -> Result<Vec<Variant>, EvalError> {
    let mut out = Vec::new();
    for v in list.split(',').filter(|s| !s.trim().is_empty()) {
        let v: Variant = v.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub utterance: String,
    pub gold_id: String,
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldItem>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<Vec<GoldItem>, EvalError> {
    parse_gold(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub metrics: MetricsReport,
    /// Requests in which the pipeline produced no ranking.
    pub failures: usize,
    pub judge_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub variants: Vec<String>,
    /// Number of pairwise comparisons used for the correction.
    pub comparisons: usize,
    pub alpha: f64,
    pub threshold: f64,
    /// Per-instance score compared between variants.
    pub statistic: String,
    /// `cells[i][j]` compares variant i against j; diagonal is empty.
    pub cells: Vec<Vec<Option<TTest>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_size: usize,
    pub seed: u64,
    pub variants: Vec<VariantReport>,
    pub significance: SignificanceMatrix,
}

/// Inputs shared by every variant run.
pub struct EvalContext {
    pub config: AnnotationConfig,
    pub catalog: Catalog,
    pub training: Vec<TrainingExample>,
    pub provider: Arc<dyn ModelProvider>,
    pub clock: Arc<dyn Clock>,
}

/// Run every variant over `dataset` and compare them pairwise.
pub async fn run_eval(ctx: &EvalContext, dataset: &[GoldItem], variants: &[Variant]) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut reports = Vec::new();
    let mut rr: Vec<Vec<f64>> = Vec::new();
    for v in variants {
        let engine = Engine::builder(ctx.config.clone(), ctx.catalog.clone(), ctx.provider.clone())
            .training(ctx.training.clone())
            .clock(ctx.clock.clone())
            .options(v.options(ctx.config.enable_embeddings))
            .build()
            .await?;
        let parallel = ctx.config.worker_count.max(1);
        let engine_ref = &engine;
        let outcomes: Vec<(EvalInstance, bool, bool)> = stream::iter(dataset.iter())
            .map(|g| async move {
                match engine_ref.annotate(&g.utterance, None).await {
                    Ok(r) => (
                        EvalInstance {
                            utterance: g.utterance.clone(),
                            gold_id: g.gold_id.clone(),
                            predicted: r.predicted_ids(),
                            band: Some(r.routing.band),
                        },
                        false,
                        r.judge.source == crate::judge::JudgeSource::FallbackAggregation,
                    ),
                    Err(_) => (
                        EvalInstance {
                            utterance: g.utterance.clone(),
                            gold_id: g.gold_id.clone(),
                            predicted: Vec::new(),
                            band: None,
                        },
                        true,
                        false,
                    ),
                }
            })
            .buffered(parallel)
            .collect()
            .await;
        let instances: Vec<EvalInstance> = outcomes.iter().map(|o| o.0.clone()).collect();
        rr.push(instances.iter().map(EvalInstance::reciprocal_rank).collect());
        reports.push(VariantReport {
            variant: v.as_str().to_string(),
            metrics: metrics_report(&instances, ctx.config.top_n_results)?,
            failures: outcomes.iter().filter(|o| o.1).count(),
            judge_fallbacks: outcomes.iter().filter(|o| o.2).count(),
        });
    }
    let k = variants.len();
    let m = (k * k.saturating_sub(1) / 2).max(1);
    let mut cells = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j && dataset.len() >= 2 {
                cells[i][j] = Some(significance(&rr[i], &rr[j], m)?);
            }
        }
    }
    Ok(EvalReport {
        dataset_size: dataset.len(),
        seed: ctx.config.seed,
        variants: reports,
        significance: SignificanceMatrix {
            variants: variants.iter().map(|v| v.as_str().to_string()).collect(),
            comparisons: m,
            alpha: ALPHA,
            threshold: ALPHA / m as f64,
            statistic: "reciprocal_rank".into(),
            cells,
        },
    })
}

/// Aligned plain-text table of the per-variant metrics.
pub fn render_table(report: &EvalReport) -> String {
    let header = ["variant", "n", "top1", "top3", "top5", "mrr", "ndcg@3", "ndcg@5", "macroF1@1", "failures"];
    let rows: Vec<Vec<String>> = report
        .variants
        .iter()
        .map(|v| {
            let m = &v.metrics;
            vec![
                v.variant.clone(),
                m.n.to_string(),
                format!("{:.4}", m.top1),
                format!("{:.4}", m.top3),
                format!("{:.4}", m.top5),
                format!("{:.4}", m.mrr),
                format!("{:.4}", m.ndcg3),
                format!("{:.4}", m.ndcg5),
                format!("{:.4}", m.macro_f1_top1),
                v.failures.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let fmt_row = |cells: Vec<String>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = fmt_row(header.iter().map(|s| s.to_string()).collect());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_row(r));
        out.push('\n');
    }
    out
}
