use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExchangeOutcome {
    Accepted,
    Rejected { kind: String, reason: String },
    TransportError { reason: String },
}

impl ExchangeOutcome {
    pub fn summary(&self) -> &str {
        match self {
            ExchangeOutcome::Accepted => "accepted",
            ExchangeOutcome::Rejected { kind, .. } => kind,
            ExchangeOutcome::TransportError { .. } => "transport error",
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, ExchangeOutcome::Accepted)
    }
}

/// One request/response round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub run: usize,
    pub batch_id: usize,
    /// 1-based attempt number within (run, batch).
    pub attempt: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub outcome: ExchangeOutcome,
}

/// Append-only exchange log shared by concurrent workers.
#[derive(Debug, Default)]
pub struct LedgerSink {
    exchanges: Mutex<Vec<LlmExchange>>,
}

impl LedgerSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, exchange: LlmExchange) {
        self.exchanges
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(exchange);
    }

    pub fn finish(self, wall_time: Duration) -> RunLedger {
        let exchanges = self.exchanges.into_inner().unwrap_or_else(|p| p.into_inner());
        RunLedger::from_exchanges(exchanges, wall_time)
    }
}

/// Every attempt of a labeling run, with token and time totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub exchanges: Vec<LlmExchange>,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub wall_time_s: f64,
}

impl RunLedger {
    /// Orders exchanges by (run, batch, attempt) so the log does not depend
    /// on completion order.
    pub fn from_exchanges(mut exchanges: Vec<LlmExchange>, wall_time: Duration) -> Self {
        exchanges.sort_by_key(|e| (e.run, e.batch_id, e.attempt));
        let total_prompt_tokens = exchanges.iter().map(|e| e.prompt_tokens).sum();
        let total_completion_tokens = exchanges.iter().map(|e| e.completion_tokens).sum();
        let max_latency = exchanges.iter().map(|e| e.latency_ms).max().unwrap_or(0);
        let wall_time_s = wall_time.as_secs_f64().max(max_latency as f64 / 1000.0);
        Self {
            exchanges,
            total_prompt_tokens,
            total_completion_tokens,
            wall_time_s,
        }
    }

    /// Concatenates two ledgers from sequential runs.
    pub fn merge(&mut self, other: RunLedger) {
        self.total_prompt_tokens += other.total_prompt_tokens;
        self.total_completion_tokens += other.total_completion_tokens;
        self.wall_time_s += other.wall_time_s;
        self.exchanges.extend(other.exchanges);
    }

    /// Attempts beyond the first, summed over all (run, batch) pairs.
    pub fn retries(&self) -> usize {
        self.exchanges.iter().filter(|e| e.attempt > 1).count()
    }

    pub fn rejected(&self) -> usize {
        self.exchanges
            .iter()
            .filter(|e| matches!(e.outcome, ExchangeOutcome::Rejected { .. }))
            .count()
    }

    pub fn transport_errors(&self) -> usize {
        self.exchanges
            .iter()
            .filter(|e| matches!(e.outcome, ExchangeOutcome::TransportError { .. }))
            .count()
    }

    /// Highest attempt count recorded for any single (run, batch).
    pub fn max_attempts_per_batch(&self) -> u32 {
        self.exchanges.iter().map(|e| e.attempt).max().unwrap_or(0)
    }
}
