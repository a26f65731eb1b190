//! Chat backends, the retrying batch submitter, run ledgers and costs.

mod ledger;
pub mod mock;
mod pacer;

#[cfg(feature = "http")]
pub mod http;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{ExchangeOutcome, LedgerSink, LlmExchange, RunLedger};
pub use pacer::RequestPacer;

use crate::batching::BatchPlan;
use crate::exec;
use crate::ingest::Dataset;
use crate::label::{majority_vote, strict_majority_or_unclear, Label};
use crate::parsing::{parse_response, ParsedReply};
use crate::prompting::{build_prompt, PromptError, PromptHeader, PromptText};

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}
fn default_model() -> String {
    "gpt-4-turbo".into()
}
fn default_max_reply_tokens() -> u32 {
    4096
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout() -> u64 {
    300
}
fn default_attempts() -> u32 {
    5
}
fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint_url: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_reply_tokens")]
    pub max_reply_tokens: u32,
    /// Name of the environment variable holding the API key. Empty means
    /// no `Authorization` header is sent.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_s: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub min_request_interval_ms: u64,
    /// Batches of one run dispatched concurrently.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: default_endpoint(),
            model_name: default_model(),
            temperature: 0.0,
            max_reply_tokens: default_max_reply_tokens(),
            api_key_env: default_api_key_env(),
            request_timeout_s: default_timeout(),
            max_attempts: default_attempts(),
            min_request_interval_ms: 0,
            parallelism: default_parallelism(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("max_attempts must be >= 1".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        if self.parallelism < 1 {
            return Err("parallelism must be >= 1".into());
        }
        Ok(())
    }

    pub fn min_request_interval(&self) -> Duration {
        Duration::from_millis(self.min_request_interval_ms)
    }
}

/// One chat completion: first choice text plus token usage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
}

impl BackendError {
    /// Client errors other than timeouts and rate limits will not improve on retry.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Status { status, .. } => {
                !(400..500).contains(status) || *status == 408 || *status == 429
            }
            BackendError::MissingApiKey(_) => false,
            _ => true,
        }
    }
}

/// A chat-completion endpoint. Implementations are called from several
/// worker threads at once.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, config: &BackendConfig) -> Result<Completion, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, prompt: &str, config: &BackendConfig) -> Result<Completion, BackendError> {
        (**self).complete(prompt, config)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, prompt: &str, config: &BackendConfig) -> Result<Completion, BackendError> {
        (**self).complete(prompt, config)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("batch {batch_id} of run {run} failed after {attempts} attempt(s): {last_reason}")]
pub struct BatchFailed {
    pub run: usize,
    pub batch_id: usize,
    pub attempts: u32,
    pub last_reason: String,
    /// Ids of the batch, all left unlabeled by this run.
    pub ids: Vec<String>,
}

/// Every attempt made for one batch, and how it ended.
#[derive(Debug, Clone)]
pub struct BatchAttempts {
    pub exchanges: Vec<LlmExchange>,
    pub result: Result<ParsedReply, BatchFailed>,
}

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("runs must be odd and >= 1, got {0}")]
    BadRunCount(usize),
    #[error("batch plan covers {planned} items but the dataset has {actual}")]
    PlanMismatch { planned: usize, actual: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid backend config: {0}")]
    Config(String),
}

/// Result of labeling a dataset.
#[derive(Debug, Clone)]
pub struct LabelingOutcome {
    /// Final voted labels, in dataset order.
    pub labels: IndexMap<String, Label>,
    /// Per-run labels; index 0 is the first run.
    pub run_labels: Vec<HashMap<String, Label>>,
    /// Ids that did not collect enough run labels to vote, in dataset order.
    pub unlabeled: Vec<String>,
    pub failures: Vec<BatchFailed>,
    pub ledger: RunLedger,
}

/// Submits prompts through a backend with bounded retries and pacing.
pub struct Labeler<'a> {
    backend: &'a dyn ChatBackend,
    config: &'a BackendConfig,
    pacer: RequestPacer,
}

impl<'a> Labeler<'a> {
    pub fn new(backend: &'a dyn ChatBackend, config: &'a BackendConfig) -> Result<Self, LabelingError> {
        config.validate().map_err(LabelingError::Config)?;
        Ok(Self {
            backend,
            config,
            pacer: RequestPacer::new(config.min_request_interval()),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        self.config
    }

    /// Sends `prompt` until a reply passes the output check or
    /// `max_attempts` is exhausted. Exchanges go to `sink` as they happen.
    pub fn submit_batch(
        &self,
        prompt: &PromptText,
        run: usize,
        batch_id: usize,
        sink: &LedgerSink,
    ) -> BatchAttempts {
        let mut exchanges = Vec::new();
        let mut last_reason = String::from("no attempt made");
        let mut attempt = 0u32;
        while attempt < self.config.max_attempts {
            attempt += 1;
            self.pacer.wait();
            let started = Instant::now();
            let response = self.backend.complete(&prompt.rendered, self.config);
            let latency_ms = started.elapsed().as_millis() as u64;
            let (exchange, accepted, give_up) = match response {
                Ok(c) => {
                    let parsed = parse_response(&c.text, &prompt.item_ids);
                    let outcome = match &parsed {
                        Ok(_) => ExchangeOutcome::Accepted,
                        Err(e) => ExchangeOutcome::Rejected {
                            kind: format!("{:?}", e.kind),
                            reason: e.detail.clone(),
                        },
                    };
                    let ex = LlmExchange {
                        run,
                        batch_id,
                        attempt,
                        prompt_tokens: c.prompt_tokens,
                        completion_tokens: c.completion_tokens,
                        latency_ms,
                        outcome,
                    };
                    match parsed {
                        Ok(reply) => (ex, Some(reply), false),
                        Err(e) => {
                            last_reason = e.to_string();
                            (ex, None, false)
                        }
                    }
                }
                Err(e) => {
                    last_reason = e.to_string();
                    let ex = LlmExchange {
                        run,
                        batch_id,
                        attempt,
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        latency_ms,
                        outcome: ExchangeOutcome::TransportError {
                            reason: e.to_string(),
                        },
                    };
                    (ex, None, !e.is_retryable())
                }
            };
            log::debug!(
                "run {run} batch {batch_id} attempt {attempt}: {}",
                exchange.outcome.summary()
            );
            sink.append(exchange.clone());
            exchanges.push(exchange);
            if let Some(reply) = accepted {
                return BatchAttempts {
                    exchanges,
                    result: Ok(reply),
                };
            }
            if give_up {
                break;
            }
        }
        log::warn!("run {run} batch {batch_id} failed: {last_reason}");
        BatchAttempts {
            exchanges,
            result: Err(BatchFailed {
                run,
                batch_id,
                attempts: attempt,
                last_reason,
                ids: prompt.item_ids.clone(),
            }),
        }
    }

    /// Runs `runs` full passes over the plan and votes per id.
    ///
    /// Batches of one run are dispatched on up to `parallelism` workers;
    /// runs are sequential. An id needs labels from at least half of the
    /// runs (rounded up) to be voted; the rest are reported unlabeled.
    pub fn label_dataset(
        &self,
        dataset: &Dataset,
        header: &PromptHeader,
        plan: &BatchPlan,
        runs: usize,
    ) -> Result<LabelingOutcome, LabelingError> {
        if runs == 0 || runs.is_multiple_of(2) {
            return Err(LabelingError::BadRunCount(runs));
        }
        if plan.item_count() != dataset.len() {
            return Err(LabelingError::PlanMismatch {
                planned: plan.item_count(),
                actual: dataset.len(),
            });
        }
        let items = dataset.items();
        let prompts = plan
            .batches
            .iter()
            .map(|b| build_prompt(header, b.items(items)))
            .collect::<Result<Vec<_>, _>>()?;

        let started = Instant::now();
        let sink = LedgerSink::new();
        let mut run_labels = Vec::with_capacity(runs);
        let mut failures = Vec::new();
        for run in 1..=runs {
            let results = exec::run_indexed(prompts.len(), self.config.parallelism, |b| {
                self.submit_batch(&prompts[b], run, plan.batches[b].id, &sink)
            });
            let mut labels = HashMap::with_capacity(items.len());
            for attempts in results {
                match attempts.result {
                    Ok(reply) => labels.extend(reply.records),
                    Err(failed) => failures.push(failed),
                }
            }
            run_labels.push(labels);
        }
        let ledger = sink.finish(started.elapsed());

        let quorum = runs.div_ceil(2);
        let mut labels = IndexMap::with_capacity(items.len());
        let mut unlabeled = Vec::new();
        for id in dataset.ids() {
            let votes: Vec<Label> = run_labels.iter().filter_map(|m| m.get(id).copied()).collect();
            if votes.len() < quorum {
                unlabeled.push(id.to_string());
                continue;
            }
            let voted = if votes.len() == runs {
                majority_vote(&votes).expect("odd, nonempty")
            } else {
                strict_majority_or_unclear(&votes)
            };
            labels.insert(id.to_string(), voted);
        }
        Ok(LabelingOutcome {
            labels,
            run_labels,
            unlabeled,
            failures,
            ledger,
        })
    }
}

/// Dollar prices per 1,000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pricing {
    pub price_in: Decimal,
    pub price_out: Decimal,
}

impl Default for Pricing {
    /// $0.01 per 1K prompt tokens, $0.03 per 1K completion tokens.
    fn default() -> Self {
        Self {
            price_in: Decimal::new(1, 2),
            price_out: Decimal::new(3, 2),
        }
    }
}

/// Exact dollar cost of the given token totals.
pub fn cost_of_tokens(prompt_tokens: u64, completion_tokens: u64, pricing: Pricing) -> Decimal {
    let thousand = Decimal::from(1000u32);
    Decimal::from(prompt_tokens) * pricing.price_in / thousand
        + Decimal::from(completion_tokens) * pricing.price_out / thousand
}

pub fn compute_cost(ledger: &RunLedger, pricing: Pricing) -> Decimal {
    cost_of_tokens(
        ledger.total_prompt_tokens,
        ledger.total_completion_tokens,
        pricing,
    )
}

/// `$x.yy`, rounding half away from zero.
pub fn format_usd(amount: Decimal) -> String {
    let r = amount.round_dp_with_strategy(2, rust_decimal::RoundingStrategy::MidpointAwayFromZero);
    format!("${r:.2}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger_with(prompt: u64, completion: u64) -> RunLedger {
        RunLedger::from_exchanges(
            vec![LlmExchange {
                run: 1,
                batch_id: 0,
                attempt: 1,
                prompt_tokens: prompt,
                completion_tokens: completion,
                latency_ms: 1,
                outcome: ExchangeOutcome::Accepted,
            }],
            Duration::from_millis(5),
        )
    }

    #[test]
    fn cost_examples() {
        let p = Pricing::default();
        assert_eq!(compute_cost(&ledger_with(1000, 0), p), Decimal::new(1, 2));
        assert_eq!(compute_cost(&ledger_with(0, 0), p), Decimal::ZERO);
        let c = compute_cost(&ledger_with(500_000, 33_334), p);
        assert_eq!(c, "6.00002".parse::<Decimal>().unwrap());
        assert_eq!(format_usd(c), "$6.00");
        assert_eq!(format_usd(Decimal::ZERO), "$0.00");
        assert_eq!(format_usd("0.005".parse().unwrap()), "$0.01");
    }

    #[test]
    fn retryability() {
        assert!(BackendError::Transport("reset".into()).is_retryable());
        assert!(BackendError::Status { status: 429, body: String::new() }.is_retryable());
        assert!(BackendError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(!BackendError::Status { status: 401, body: String::new() }.is_retryable());
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_ok());
        c.max_attempts = 0;
        assert!(c.validate().is_err());
        c.max_attempts = 1;
        c.temperature = f64::INFINITY;
        assert!(c.validate().is_err());
    }
}
