//! Seeded, deterministic stand-in for a chat endpoint.
//!
//! The mock reads the item lines back out of the prompt and answers with a
//! label per id taken from its policy. Randomness (label noise, malformed
//! replies, transport failures) is drawn from a generator keyed by the
//! seed, the prompt content and how many times that prompt has been seen,
//! so results do not depend on thread scheduling.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, ChatBackend, Completion};
use crate::batching::estimate_tokens;
use crate::label::Label;
use crate::prompting::parse_item_section;

/// A forced outcome for the n-th call of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFault {
    WellFormed,
    Malformed,
    Transport,
}

/// Serializable knobs; the policy itself is loaded separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    #[serde(default)]
    pub seed: u64,
    /// `id,label` file giving the label the mock answers with.
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
    #[serde(default)]
    pub malformed_probability: f64,
    #[serde(default)]
    pub transport_failure_probability: f64,
    /// Chance that a label is replaced by one of the two other labels.
    #[serde(default)]
    pub flip_probability: f64,
    #[serde(default)]
    pub latency_ms: u64,
    /// Outcomes forced for the first calls of every prompt.
    #[serde(default)]
    pub script: Vec<MockFault>,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            policy_file: None,
            malformed_probability: 0.0,
            transport_failure_probability: 0.0,
            flip_probability: 0.0,
            latency_ms: 0,
            script: Vec::new(),
        }
    }
}

impl MockSettings {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("malformed_probability", self.malformed_probability),
            ("transport_failure_probability", self.transport_failure_probability),
            ("flip_probability", self.flip_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be within [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct MockBackend {
    settings: MockSettings,
    policy: HashMap<String, Label>,
    calls: Mutex<HashMap<u64, u64>>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl MockBackend {
    /// Ids missing from `policy` get a label derived from the seed and id.
    pub fn new(settings: MockSettings, policy: HashMap<String, Label>) -> Self {
        Self {
            settings,
            policy,
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &MockSettings {
        &self.settings
    }

    /// The noise-free label the mock holds for `id`.
    pub fn true_label(&self, id: &str) -> Label {
        if let Some(l) = self.policy.get(id) {
            return *l;
        }
        let h = mix(self.settings.seed ^ fnv1a(id.as_bytes()));
        Label::ALL[(h % 3) as usize]
    }

    fn next_call(&self, prompt_key: u64) -> u64 {
        let mut calls = self.calls.lock().unwrap_or_else(|p| p.into_inner());
        let n = calls.entry(prompt_key).or_insert(0);
        let call = *n;
        *n += 1;
        call
    }

    fn noisy_label(&self, id: &str, rng: &mut ChaCha8Rng) -> Label {
        let truth = self.true_label(id);
        if self.settings.flip_probability > 0.0 && rng.gen_bool(self.settings.flip_probability) {
            let others: Vec<Label> = Label::ALL.into_iter().filter(|l| *l != truth).collect();
            others[rng.gen_range(0..2)]
        } else {
            truth
        }
    }

    fn render_reply(lines: &[String]) -> String {
        lines.join("\n")
    }

    /// Damages a well-formed reply in a way the output check must catch.
    fn corrupt(lines: &mut Vec<String>, ids: &[&str], rng: &mut ChaCha8Rng) {
        let pick = rng.gen_range(0..lines.len().max(1));
        match rng.gen_range(0..6) {
            0 => lines.insert(0, "Sure! Here are the labels for each tweet:".into()),
            1 => {
                if !lines.is_empty() {
                    lines.remove(pick);
                }
            }
            2 => {
                if let Some(id) = ids.get(pick) {
                    lines[pick] = format!("{id},Maybe");
                }
            }
            3 => {
                if let Some(l) = lines.get(pick).cloned() {
                    lines.push(l);
                }
            }
            4 => {
                let mut stray = format!("{}x", ids.first().copied().unwrap_or("id"));
                while ids.contains(&stray.as_str()) {
                    stray.push('x');
                }
                lines.push(format!("{stray},No"));
            }
            _ => {
                if let Some(l) = lines.get_mut(pick) {
                    l.push_str(" - the author mentions it explicitly");
                }
            }
        }
        if lines.is_empty() {
            lines.push("I could not label these tweets.".into());
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &str, _config: &BackendConfig) -> Result<Completion, BackendError> {
        let key = fnv1a(prompt.as_bytes());
        let call = self.next_call(key);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.settings.seed ^ mix(key ^ mix(call))));
        if self.settings.latency_ms > 0 {
            thread::sleep(Duration::from_millis(self.settings.latency_ms));
        }

        let fault = match self.settings.script.get(call as usize) {
            Some(f) => *f,
            None => {
                let t = rng.gen::<f64>();
                let m = rng.gen::<f64>();
                if t < self.settings.transport_failure_probability {
                    MockFault::Transport
                } else if m < self.settings.malformed_probability {
                    MockFault::Malformed
                } else {
                    MockFault::WellFormed
                }
            }
        };
        if fault == MockFault::Transport {
            return Err(BackendError::Transport("simulated connection reset".into()));
        }

        let ids: Vec<&str> = match parse_item_section(prompt) {
            Ok(items) => items.into_iter().map(|(id, _)| id).collect(),
            Err(_) => Vec::new(),
        };
        let mut lines: Vec<String> = ids
            .iter()
            .map(|id| format!("{id},{}", self.noisy_label(id, &mut rng)))
            .collect();
        if fault == MockFault::Malformed {
            Self::corrupt(&mut lines, &ids, &mut rng);
        } else if rng.gen_bool(0.05) {
            // well-formed replies are sometimes fenced or reordered
            lines.shuffle(&mut rng);
            lines.insert(0, "```csv".into());
            lines.push("```".into());
        }
        let text = Self::render_reply(&lines);
        Ok(Completion {
            prompt_tokens: estimate_tokens(prompt).tokens() as u64,
            completion_tokens: estimate_tokens(&text).tokens() as u64,
            text,
        })
    }
}
