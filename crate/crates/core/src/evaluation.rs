//! Accuracy, confusion matrices, per-class metrics and report assembly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{compute_cost, format_usd, Pricing, RunLedger};
use crate::exec;
use crate::ingest::{write_atomic, Dataset};
use crate::label::{Category, Label, LabelMap, LabelSource};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("id sets differ: {} missing from predictions ({}), {} not in gold ({})",
        missing.len(), preview(missing), extra.len(), preview(extra))]
    IdMismatch {
        /// Gold ids without a prediction.
        missing: Vec<String>,
        /// Predicted ids absent from gold.
        extra: Vec<String>,
    },
    #[error("{count} item(s) lack a {label_source} label: {}", preview(ids))]
    MissingLabel {
        label_source: LabelSource,
        count: usize,
        ids: Vec<String>,
    },
    #[error("nothing to evaluate")]
    NoItems,
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

fn check_ids(pred: &LabelMap, gold: &LabelMap) -> Result<(), EvalError> {
    let missing: Vec<String> = gold.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
    let extra: Vec<String> = pred.keys().filter(|k| !gold.contains_key(*k)).cloned().collect();
    if missing.is_empty() && extra.is_empty() {
        Ok(())
    } else {
        Err(EvalError::IdMismatch { missing, extra })
    }
}

/// `count / total` as a percentage in hundredths, rounded half up.
pub fn percent_hundredths(count: u64, total: u64) -> u64 {
    if total == 0 {
        return 0;
    }
    (count * 20_000 + total) / (2 * total)
}

/// `count / total` rendered as `"xx.yy"`.
pub fn percent_string(count: u64, total: u64) -> String {
    let h = percent_hundredths(count, total);
    format!("{}.{:02}", h / 100, h % 100)
}

/// 3x3 counts indexed by (actual, predicted) in Yes/No/Unclear order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
    total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        let total = counts.iter().flatten().sum();
        Self { counts, total }
    }

    pub fn get(&self, actual: Label, predicted: Label) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn counts(&self) -> &[[u64; 3]; 3] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, actual: Label) -> u64 {
        self.counts[actual.index()].iter().sum()
    }

    pub fn column_sum(&self, predicted: Label) -> u64 {
        self.counts.iter().map(|r| r[predicted.index()]).sum()
    }

    pub fn row_sums(&self) -> [u64; 3] {
        Label::ALL.map(|l| self.row_sum(l))
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.trace() as f64 / self.total as f64)
    }

    /// Cell share of the total, `"xx.yy"`.
    pub fn cell_percent(&self, actual: Label, predicted: Label) -> String {
        percent_string(self.get(actual, predicted), self.total)
    }

    fn record(&mut self, actual: Label, predicted: Label) {
        self.counts[actual.index()][predicted.index()] += 1;
        self.total += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for a in 0..3 {
            for p in 0..3 {
                self.counts[a][p] += other.counts[a][p];
            }
        }
        self.total += other.total;
        self
    }

    /// CSV with a header row and a leading column of label names.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "actual/predicted,Yes,No,Unclear")?;
        for a in Label::ALL {
            let r = &self.counts[a.index()];
            writeln!(w, "{a},{},{},{}", r[0], r[1], r[2])?;
        }
        Ok(())
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, rhs: Self) -> Self {
        self.merge(rhs)
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>18}{:>18}{:>18}", "actual", "Yes", "No", "Unclear")?;
        for a in Label::ALL {
            write!(f, "{:<10}", a.as_str())?;
            for p in Label::ALL {
                let cell = format!("{} ({}%)", self.get(a, p), self.cell_percent(a, p));
                write!(f, "{cell:>18}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    labels: [Label; 3],
    counts: [[u64; 3]; 3],
    total: u64,
    percentages: [[String; 3]; 3],
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let percentages = Label::ALL.map(|a| Label::ALL.map(|p| self.cell_percent(a, p)));
        MatrixRepr {
            labels: Label::ALL,
            counts: self.counts,
            total: self.total,
            percentages,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(d)?;
        if repr.labels != Label::ALL {
            return Err(serde::de::Error::custom("matrix labels must be Yes, No, Unclear"));
        }
        let m = ConfusionMatrix::from_counts(repr.counts);
        if m.total != repr.total {
            return Err(serde::de::Error::custom("matrix total disagrees with counts"));
        }
        Ok(m)
    }
}

pub fn confusion(pred: &LabelMap, gold: &LabelMap) -> Result<ConfusionMatrix, EvalError> {
    // One lookup per gold id; the id lists are only built on a mismatch.
    let pairs: Vec<(&str, Label)> = gold.iter().map(|(id, g)| (id.as_str(), *g)).collect();
    let (m, missing) = exec::fold_reduce(
        &pairs,
        || (ConfusionMatrix::default(), 0usize),
        |(mut m, miss), &(id, actual)| match pred.get(id) {
            Some(p) => {
                m.record(actual, *p);
                (m, miss)
            }
            None => (m, miss + 1),
        },
        |(a, x), (b, y)| (a.merge(b), x + y),
    );
    if missing > 0 || pred.len() != gold.len() {
        check_ids(pred, gold)?;
    }
    Ok(m)
}

pub fn accuracy(pred: &LabelMap, gold: &LabelMap) -> Result<f64, EvalError> {
    check_ids(pred, gold)?;
    if gold.is_empty() {
        return Err(EvalError::NoItems);
    }
    let correct = gold.iter().filter(|(id, g)| pred[id.as_str()] == **g).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Precision and recall of one class; `None` where the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn per_class_metrics(matrix: &ConfusionMatrix) -> BTreeMap<Label, ClassMetrics> {
    Label::ALL
        .into_iter()
        .map(|l| {
            let hit = matrix.get(l, l) as f64;
            let col = matrix.column_sum(l);
            let row = matrix.row_sum(l);
            let m = ClassMetrics {
                precision: (col > 0).then(|| hit / col as f64),
                recall: (row > 0).then(|| hit / row as f64),
            };
            (l, m)
        })
        .collect()
}

/// One prediction source scored against gold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub source: String,
    pub n_items: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// Accuracy in percent, two decimals.
    pub accuracy_percent: String,
    pub confusion: ConfusionMatrix,
    pub per_class: BTreeMap<Label, ClassMetrics>,
}

impl Comparison {
    pub fn from_matrix(source: impl Into<String>, confusion: ConfusionMatrix) -> Self {
        Comparison {
            source: source.into(),
            n_items: confusion.total(),
            correct: confusion.trace(),
            accuracy: confusion.accuracy().unwrap_or(0.0),
            accuracy_percent: percent_string(confusion.trace(), confusion.total()),
            per_class: per_class_metrics(&confusion),
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySection {
    pub n_items: u64,
    pub llm: Comparison,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crowd: Option<Comparison>,
}

/// Which prediction source a published figure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Llm,
    Crowd,
}

/// An externally published accuracy to compare against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedAccuracy {
    /// Category key, or `None` for the total.
    pub category: Option<String>,
    pub predictor: Predictor,
    /// Percent, at the precision it was published with (e.g. `"79.1"`).
    pub percent: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub category: Option<String>,
    pub predictor: Predictor,
    pub published_percent: Decimal,
    pub computed_percent: String,
    pub agrees: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalSection {
    pub n_items: u64,
    pub llm: Comparison,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crowd: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: BTreeMap<String, CategorySection>,
    pub total: TotalSection,
    pub total_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crowd_total_accuracy: Option<f64>,
    pub cost_usd: Decimal,
    pub cost_display: String,
    pub wall_time_s: f64,
    pub generated_at: String,
    /// Comparisons with published figures; disagreements are kept, not hidden.
    #[serde(default)]
    pub reference_checks: Vec<ReferenceCheck>,
}

impl EvalReport {
    pub fn discrepancies(&self) -> impl Iterator<Item = &ReferenceCheck> {
        self.reference_checks.iter().filter(|c| !c.agrees)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, |w| {
            w.write_all(self.to_json().as_bytes())?;
            w.write_all(b"\n")
        })
    }
}

/// Assembles a report from per-category label maps.
#[derive(Debug, Default)]
pub struct ReportBuilder {
    sections: BTreeMap<String, (ConfusionMatrix, Option<ConfusionMatrix>)>,
    references: Vec<PublishedAccuracy>,
    cost_usd: Decimal,
    wall_time_s: f64,
}

impl ReportBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_category(
        &mut self,
        name: impl Into<String>,
        pred: &LabelMap,
        gold: &LabelMap,
        crowd: Option<&LabelMap>,
    ) -> Result<&mut Self, EvalError> {
        let llm = confusion(pred, gold)?;
        let crowd = crowd.map(|c| confusion(c, gold)).transpose()?;
        self.sections.insert(name.into(), (llm, crowd));
        Ok(self)
    }

    pub fn ledger(&mut self, ledger: &RunLedger, pricing: Pricing) -> &mut Self {
        self.cost_usd = compute_cost(ledger, pricing);
        self.wall_time_s = ledger.wall_time_s;
        self
    }

    pub fn published(&mut self, reference: PublishedAccuracy) -> &mut Self {
        self.references.push(reference);
        self
    }

    pub fn build(&self) -> Result<EvalReport, EvalError> {
        if self.sections.is_empty() {
            return Err(EvalError::NoItems);
        }
        let with_crowd = self.sections.values().all(|(_, c)| c.is_some());
        let mut total_llm = ConfusionMatrix::default();
        let mut total_crowd = ConfusionMatrix::default();
        let mut categories = BTreeMap::new();
        for (name, (llm, crowd)) in &self.sections {
            total_llm = total_llm + *llm;
            if let Some(c) = crowd {
                total_crowd = total_crowd + *c;
            }
            categories.insert(
                name.clone(),
                CategorySection {
                    n_items: llm.total(),
                    llm: Comparison::from_matrix("llm", *llm),
                    crowd: crowd.map(|c| Comparison::from_matrix("crowd", c)),
                },
            );
        }
        let total = TotalSection {
            n_items: total_llm.total(),
            llm: Comparison::from_matrix("llm", total_llm),
            crowd: with_crowd.then(|| Comparison::from_matrix("crowd", total_crowd)),
        };
        let reference_checks = self
            .references
            .iter()
            .map(|r| check_reference(r, &categories, &total))
            .collect();
        Ok(EvalReport {
            total_accuracy: total.llm.accuracy,
            crowd_total_accuracy: total.crowd.as_ref().map(|c| c.accuracy),
            categories,
            total,
            cost_usd: self.cost_usd,
            cost_display: format_usd(self.cost_usd),
            wall_time_s: self.wall_time_s,
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            reference_checks,
        })
    }
}

/// Rounds the computed accuracy to the published precision and compares.
fn check_reference(
    r: &PublishedAccuracy,
    categories: &BTreeMap<String, CategorySection>,
    total: &TotalSection,
) -> ReferenceCheck {
    let (llm, crowd) = match &r.category {
        Some(c) => match categories.get(c) {
            Some(s) => (Some(&s.llm), s.crowd.as_ref()),
            None => (None, None),
        },
        None => (Some(&total.llm), total.crowd.as_ref()),
    };
    let section = match r.predictor {
        Predictor::Llm => llm,
        Predictor::Crowd => crowd,
    };
    let scope = r.category.as_deref().unwrap_or("total");
    let Some(section) = section else {
        return ReferenceCheck {
            category: r.category.clone(),
            predictor: r.predictor,
            published_percent: r.percent,
            computed_percent: String::new(),
            agrees: false,
            note: format!("no {:?} section for {scope}", r.predictor),
        };
    };
    let exact = Decimal::from(section.correct * 100) / Decimal::from(section.n_items.max(1));
    let computed = exact.round_dp_with_strategy(
        r.percent.scale(),
        rust_decimal::RoundingStrategy::MidpointAwayFromZero,
    );
    let agrees = computed == r.percent;
    let note = if agrees {
        format!("{scope} {:?} accuracy matches the published {}%", r.predictor, r.percent)
    } else {
        format!(
            "{scope} {:?} accuracy computed from the confusion counts is {}% but {}% was published",
            r.predictor, section.accuracy_percent, r.percent
        )
    };
    ReferenceCheck {
        category: r.category.clone(),
        predictor: r.predictor,
        published_percent: r.percent,
        computed_percent: section.accuracy_percent.clone(),
        agrees,
        note,
    }
}

/// Per-category report over a dataset carrying `pred`, `gold` and
/// optionally `crowd` labels on every item.
pub fn build_report(
    dataset: &Dataset,
    pred: LabelSource,
    gold: LabelSource,
    crowd: Option<LabelSource>,
    ledger: Option<&RunLedger>,
    pricing: Pricing,
    published: &[PublishedAccuracy],
) -> Result<EvalReport, EvalError> {
    for source in [Some(pred), Some(gold), crowd].into_iter().flatten() {
        let missing = dataset.unlabeled(source);
        if !missing.is_empty() {
            return Err(EvalError::MissingLabel {
                label_source: source,
                count: missing.len(),
                ids: missing,
            });
        }
    }
    let mut builder = ReportBuilder::new();
    let categories: Vec<Category> = dataset.category_counts().keys().copied().collect();
    for category in categories {
        let slice = dataset.category_slice(category);
        let crowd_map = crowd.map(|c| slice.labels_of(c));
        builder.add_category(
            category.key(),
            &slice.labels_of(pred),
            &slice.labels_of(gold),
            crowd_map.as_ref(),
        )?;
    }
    if let Some(l) = ledger {
        builder.ledger(l, pricing);
    }
    for r in published {
        builder.published(r.clone());
    }
    builder.build()
}

/// Ids appearing in exactly one of the maps, sorted.
pub fn symmetric_difference(a: &LabelMap, b: &LabelMap) -> Vec<String> {
    let ka: HashSet<&String> = a.keys().collect();
    let kb: HashSet<&String> = b.keys().collect();
    let mut d: Vec<String> = ka.symmetric_difference(&kb).map(|s| (*s).clone()).collect();
    d.sort();
    d
}
