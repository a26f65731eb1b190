//! Token estimation and order-preserving, budget-respecting batch plans.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::label::AnnotatedItem;
use crate::prompting::item_line;

/// Reply tokens budgeted per item (one short `id,label` line).
pub const REPLY_TOKENS_PER_ITEM: usize = 10;

/// Default over-estimation factor applied to the bytes/4 heuristic.
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenEstimate(pub usize);

impl TokenEstimate {
    pub fn tokens(self) -> usize {
        self.0
    }
}

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> TokenEstimate;
}

/// `ceil(ceil(bytes / 4) * safety_factor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicEstimator {
    safety_factor: f64,
}

impl HeuristicEstimator {
    /// Factors below 1 or non-finite are rejected.
    pub fn new(safety_factor: f64) -> Option<Self> {
        (safety_factor.is_finite() && safety_factor >= 1.0).then_some(Self { safety_factor })
    }

    pub fn safety_factor(&self) -> f64 {
        self.safety_factor
    }
}

impl Default for HeuristicEstimator {
    fn default() -> Self {
        Self {
            safety_factor: DEFAULT_SAFETY_FACTOR,
        }
    }
}

impl TokenEstimator for HeuristicEstimator {
    fn estimate(&self, text: &str) -> TokenEstimate {
        let base = text.len().div_ceil(4);
        // The epsilon keeps factors like 1.1 from rounding 11.000000000000002 up to 12.
        let scaled = (base as f64 * self.safety_factor - 1e-9).ceil();
        TokenEstimate(scaled.max(0.0) as usize)
    }
}

pub fn estimate_tokens(text: &str) -> TokenEstimate {
    HeuristicEstimator::default().estimate(text)
}

/// A contiguous run of items sent in one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub id: usize,
    pub range: Range<usize>,
    /// Header tokens plus the item line estimates.
    pub estimated_tokens: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn items<'a>(&self, items: &'a [AnnotatedItem]) -> &'a [AnnotatedItem] {
        &items[self.range.clone()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub budget: usize,
    pub max_items: Option<usize>,
    pub header_tokens: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Total items covered by the plan.
    pub fn item_count(&self) -> usize {
        self.batches.iter().map(Batch::len).sum()
    }

    pub fn estimated_prompt_tokens(&self) -> usize {
        self.batches.iter().map(|b| b.estimated_tokens).sum()
    }

    pub fn reply_token_bound(&self) -> usize {
        self.item_count() * REPLY_TOKENS_PER_ITEM
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BatchError {
    #[error("item {id:?} needs {tokens} tokens but only {available} remain after the header")]
    OversizeItem {
        id: String,
        tokens: usize,
        available: usize,
    },
    #[error("budget {budget} does not exceed header size {header_tokens}")]
    BudgetTooSmall { header_tokens: usize, budget: usize },
    #[error("max_items must be at least 1")]
    ZeroMaxItems,
}

/// Estimated cost of one item's prompt line, newline included.
pub fn line_tokens(estimator: &dyn TokenEstimator, item: &AnnotatedItem) -> usize {
    let mut line = item_line(item);
    line.push('\n');
    estimator.estimate(&line).tokens()
}

/// Greedy in-order partition: a new batch starts whenever the next item
/// would push the batch past `budget` tokens or `max_items` items.
pub fn partition(
    items: &[AnnotatedItem],
    header_tokens: usize,
    budget: usize,
    max_items: Option<usize>,
    estimator: &dyn TokenEstimator,
) -> Result<BatchPlan, BatchError> {
    if budget <= header_tokens {
        return Err(BatchError::BudgetTooSmall {
            header_tokens,
            budget,
        });
    }
    if max_items == Some(0) {
        return Err(BatchError::ZeroMaxItems);
    }
    let cap = max_items.unwrap_or(usize::MAX);
    let available = budget - header_tokens;
    let costs = exec::map_ordered(items, |it| line_tokens(estimator, it));

    let mut batches = Vec::new();
    let mut start = 0usize;
    let mut used = 0usize;
    for (i, (&cost, item)) in costs.iter().zip(items).enumerate() {
        if cost > available {
            return Err(BatchError::OversizeItem {
                id: item.id.clone(),
                tokens: cost,
                available,
            });
        }
        if i > start && (used + cost > available || i - start >= cap) {
            batches.push(Batch {
                id: batches.len(),
                range: start..i,
                estimated_tokens: header_tokens + used,
            });
            start = i;
            used = 0;
        }
        used += cost;
    }
    if start < items.len() {
        batches.push(Batch {
            id: batches.len(),
            range: start..items.len(),
            estimated_tokens: header_tokens + used,
        });
    }
    Ok(BatchPlan {
        batches,
        budget,
        max_items,
        header_tokens,
    })
}
