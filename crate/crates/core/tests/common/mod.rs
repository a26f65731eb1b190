//! Synthetic label sets realizing the published per-category and total
//! confusion matrices (GPT and AMT columns against expert gold).

#![allow(dead_code)]

use labelflow_core::{Category, Label, LabelMap};

/// Rows are gold Yes/No/Unclear, columns predicted Yes/No/Unclear.
pub type Counts = [[u64; 3]; 3];

pub const GPT_TOTAL: Counts = [[356, 1826, 5], [415, 8222, 5], [115, 1053, 3]];
pub const AMT_TOTAL: Counts = [[1471, 696, 20], [1688, 6869, 85], [452, 689, 30]];

/// Per-category splits chosen so the GPT diagonals match the published
/// category accuracies and every column sums to the totals above.
pub const SPLITS: [(Category, Counts, Counts); 3] = [
    (
        Category::PhysicalActivity,
        [[200, 600, 2], [200, 3850, 2], [46, 100, 0]],
        [[600, 195, 7], [700, 3322, 30], [50, 90, 6]],
    ),
    (
        Category::SleepProblems,
        [[56, 700, 2], [100, 1907, 2], [31, 700, 2]],
        [[500, 250, 8], [500, 1484, 25], [250, 470, 13]],
    ),
    (
        Category::SedentaryBehavior,
        [[100, 526, 1], [115, 2465, 1], [38, 253, 1]],
        [[371, 251, 5], [488, 2063, 30], [152, 129, 11]],
    ),
];

pub struct Fixture {
    pub category: Category,
    pub gold: LabelMap,
    pub gpt: LabelMap,
    pub amt: LabelMap,
}

fn expand(row: &[u64; 3]) -> Vec<Label> {
    Label::ALL
        .iter()
        .zip(row)
        .flat_map(|(l, n)| std::iter::repeat_n(*l, *n as usize))
        .collect()
}

/// One fixture per category. Within a gold class the GPT and AMT labels are
/// laid out independently; each only has to reproduce its own matrix.
pub fn fixtures() -> Vec<Fixture> {
    let mut next_id = 0u64;
    SPLITS
        .iter()
        .map(|(category, gpt, amt)| {
            let mut f = Fixture {
                category: *category,
                gold: LabelMap::new(),
                gpt: LabelMap::new(),
                amt: LabelMap::new(),
            };
            for (g, gold) in Label::ALL.iter().enumerate() {
                let gpt_row = expand(&gpt[g]);
                let mut amt_row = expand(&amt[g]);
                assert_eq!(gpt_row.len(), amt_row.len(), "gold row mismatch");
                let shift = amt_row.len() / 3;
                amt_row.rotate_left(shift);
                for (p, c) in gpt_row.into_iter().zip(amt_row) {
                    let id = format!("{}", 1_300_000_000_000_000_000u64 + next_id * 7919);
                    next_id += 1;
                    f.gold.insert(id.clone(), *gold);
                    f.gpt.insert(id.clone(), p);
                    f.amt.insert(id, c);
                }
            }
            f
        })
        .collect()
}

/// All three categories concatenated.
pub fn combined(fixtures: &[Fixture]) -> (LabelMap, LabelMap, LabelMap) {
    let mut gold = LabelMap::new();
    let mut gpt = LabelMap::new();
    let mut amt = LabelMap::new();
    for f in fixtures {
        gold.extend(f.gold.clone());
        gpt.extend(f.gpt.clone());
        amt.extend(f.amt.clone());
    }
    (gold, gpt, amt)
}

/// Cell percentages as printed in the published matrix table.
pub const GPT_PRINTED: [[&str; 3]; 3] = [
    ["2.97", "15.21", "0.04"],
    ["3.46", "68.52", "0.04"],
    ["0.96", "8.78", "0.03"],
];
pub const AMT_PRINTED: [[&str; 3]; 3] = [
    ["12.26", "5.8", "0.17"],
    ["14.07", "57.24", "0.71"],
    ["3.77", "5.74", "0.25"],
];

const WORDS: &[&str] = &[
    "just", "finished", "a", "5k", "run", "this", "morning", "couldn't", "sleep", "again",
    "last", "night", "sat", "on", "the", "couch", "all", "day", "gym", "yoga", "walked",
    "dog", "tired", "nap", "binge", "watching", "desk", "job", "3am", "awake", "🏃", "😴",
];

/// Deterministic tweet-like items with 19-digit ids.
pub fn tweet_items(n: usize, category: Category, seed: u64) -> Vec<labelflow_core::AnnotatedItem> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let words = rng.gen_range(3..25);
            let text = (0..words)
                .map(|_| *WORDS.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            labelflow_core::AnnotatedItem::new(
                format!("{}", 1_200_000_000_000_000_000u64 + i as u64),
                text,
                category,
            )
        })
        .collect()
}
