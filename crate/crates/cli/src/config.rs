use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use indexmap::IndexMap;
use labelflow_core::batching::{HeuristicEstimator, DEFAULT_SAFETY_FACTOR};
use labelflow_core::client::mock::MockSettings;
use labelflow_core::client::{BackendConfig, Pricing};
use labelflow_core::ingest::CsvSchema;
use labelflow_core::Category;
use rust_decimal::Decimal;
use serde::Deserialize;

/// Files for one category. Relative paths resolve against the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryFiles {
    pub input: PathBuf,
    pub header: PathBuf,
    pub output: PathBuf,
    /// Defaults to `<output>.unlabeled.txt`.
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
}

impl CategoryFiles {
    pub fn sidecar(&self) -> PathBuf {
        self.unlabeled.clone().unwrap_or_else(|| {
            let mut s = self.output.clone().into_os_string();
            s.push(".unlabeled.txt");
            PathBuf::from(s)
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchingConfig {
    /// Prompt tokens per request, header included.
    pub budget: usize,
    pub max_items: Option<usize>,
    pub safety_factor: f64,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        Self {
            budget: 120_000,
            max_items: Some(1000),
            safety_factor: DEFAULT_SAFETY_FACTOR,
        }
    }
}

fn default_runs() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub categories: IndexMap<String, CategoryFiles>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub mock: MockSettings,
    #[serde(default)]
    pub batching: BatchingConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub pricing: Pricing,
    /// Where `label` writes the exchange ledger as JSON.
    #[serde(default)]
    pub ledger: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for files in cfg.categories.values_mut() {
            resolve(base, &mut files.input);
            resolve(base, &mut files.header);
            resolve(base, &mut files.output);
            if let Some(u) = files.unlabeled.as_mut() {
                resolve(base, u);
            }
        }
        if let Some(p) = cfg.mock.policy_file.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.ledger.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.runs.is_multiple_of(2) {
            bail!("runs must be odd and >= 1, got {}", self.runs);
        }
        let mut seen = Vec::new();
        for (key, files) in &self.categories {
            let c = key
                .parse::<Category>()
                .map_err(|_| anyhow::anyhow!("unknown category key {key:?}"))?;
            if seen.contains(&c) {
                bail!("category {} configured twice", c.key());
            }
            seen.push(c);
            for (what, p) in [("input", &files.input), ("header", &files.header)] {
                if !p.is_file() {
                    bail!("{key}: {what} file {} does not exist", p.display());
                }
            }
        }
        self.schema.validate()?;
        self.backend.validate().map_err(anyhow::Error::msg)?;
        self.mock.validate().map_err(anyhow::Error::msg)?;
        if let Some(p) = &self.mock.policy_file {
            if !p.is_file() {
                bail!("mock policy file {} does not exist", p.display());
            }
        }
        self.estimator()?;
        if self.batching.max_items == Some(0) {
            bail!("batching.max_items must be >= 1");
        }
        if self.pricing.price_in < Decimal::ZERO || self.pricing.price_out < Decimal::ZERO {
            bail!("prices must be >= 0");
        }
        Ok(())
    }

    pub fn estimator(&self) -> Result<HeuristicEstimator> {
        HeuristicEstimator::new(self.batching.safety_factor).with_context(|| {
            format!(
                "batching.safety_factor must be finite and >= 1, got {}",
                self.batching.safety_factor
            )
        })
    }

    /// Categories to process, optionally narrowed to one key.
    pub fn selected(&self, only: Option<&str>) -> Result<Vec<(Category, &CategoryFiles)>> {
        if let Some(k) = only {
            if !self.categories.contains_key(k) {
                bail!("category {k:?} is not in the config");
            }
        }
        self.categories
            .iter()
            .filter(|(k, _)| only.is_none_or(|o| o == k.as_str()))
            .map(|(k, f)| Ok((k.parse::<Category>().map_err(anyhow::Error::msg)?, f)))
            .collect()
    }
}
