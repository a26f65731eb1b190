mod common;

use labelflow_core::batching::{estimate_tokens, line_tokens, partition, HeuristicEstimator};
use labelflow_core::client::{cost_of_tokens, Pricing};
use labelflow_core::evaluation::{accuracy, confusion, percent_hundredths, ConfusionMatrix, EvalReport, ReportBuilder};
use labelflow_core::ingest::{load_dataset, load_labels, write_labels, CsvSchema, Dataset};
use labelflow_core::parsing::{canonicalize_reply, parse_response};
use labelflow_core::prompting::{build_prompt, parse_item_section, unescape_item_text, PromptHeader};
use labelflow_core::{majority_vote, AnnotatedItem, Category, Label, LabelMap, LabelSource, SourceKind};
use proptest::prelude::*;
use rust_decimal::Decimal;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Yes), Just(Label::No), Just(Label::Unclear)]
}

fn odd_votes() -> impl Strategy<Value = Vec<Label>> {
    (0usize..5).prop_flat_map(|k| prop::collection::vec(label(), 2 * k + 1))
}

/// Pairs of (pred, gold) maps over the same ids.
fn paired_maps() -> impl Strategy<Value = (LabelMap, LabelMap)> {
    prop::collection::vec((label(), label()), 1..300).prop_map(|v| {
        let mut pred = LabelMap::new();
        let mut gold = LabelMap::new();
        for (i, (p, g)) in v.into_iter().enumerate() {
            pred.insert(format!("id{i}"), p);
            gold.insert(format!("id{i}"), g);
        }
        (pred, gold)
    })
}

proptest! {
    #[test]
    fn vote_is_permutation_invariant(votes in odd_votes(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = votes.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(majority_vote(&votes).unwrap(), majority_vote(&shuffled).unwrap());
    }

    #[test]
    fn vote_majority_dominates(votes in odd_votes()) {
        let r = majority_vote(&votes).unwrap();
        for l in Label::ALL {
            if votes.iter().filter(|v| **v == l).count() * 2 > votes.len() {
                prop_assert_eq!(r, l);
            }
        }
    }

    #[test]
    fn vote_unanimity(l in label(), k in 0usize..5) {
        prop_assert_eq!(majority_vote(&vec![l; 2 * k + 1]).unwrap(), l);
    }

    #[test]
    fn label_codecs_round_trip(l in label(), upper in any::<bool>()) {
        prop_assert_eq!(Label::from_code(l.code() as i64).unwrap(), l);
        let text = if upper { l.as_str().to_uppercase() } else { l.as_str().to_lowercase() };
        prop_assert_eq!(text.parse::<Label>().unwrap(), l);
        prop_assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
    }

    #[test]
    fn out_of_domain_codes_rejected(code in any::<i64>().prop_filter("outside", |c| !(-1..=1).contains(c))) {
        prop_assert!(Label::from_code(code).is_err());
    }

    #[test]
    fn token_estimate_is_monotone(a in ".{0,80}", b in ".{0,80}") {
        let joined = format!("{a}{b}");
        prop_assert!(estimate_tokens(&joined).tokens() >= estimate_tokens(&a).tokens());
    }

    #[test]
    fn partition_preserves_items_and_caps(
        lens in prop::collection::vec(1usize..300, 0..400),
        header in 0usize..200,
        slack in 200usize..5000,
        cap in prop::option::of(1usize..80),
    ) {
        let items: Vec<AnnotatedItem> = lens
            .iter()
            .enumerate()
            .map(|(i, n)| AnnotatedItem::new(format!("i{i}"), "x".repeat(*n), Category::SleepProblems))
            .collect();
        let est = HeuristicEstimator::default();
        let budget = header + slack;
        let plan = partition(&items, header, budget, cap, &est).unwrap();
        let again = partition(&items, header, budget, cap, &est).unwrap();
        prop_assert_eq!(&plan, &again);
        let flat: Vec<&str> = plan.batches.iter().flat_map(|b| b.items(&items)).map(|i| i.id.as_str()).collect();
        let want: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
        prop_assert_eq!(flat, want);
        for b in &plan.batches {
            let used: usize = b.items(&items).iter().map(|i| line_tokens(&est, i)).sum();
            prop_assert!(header + used <= budget);
            prop_assert_eq!(b.estimated_tokens, header + used);
            if let Some(c) = cap {
                prop_assert!(b.len() <= c);
            }
        }
    }

    #[test]
    fn prompt_item_section_round_trips(texts in prop::collection::vec("[^\u{0}]{1,40}", 1..20)) {
        let items: Vec<AnnotatedItem> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| AnnotatedItem::new(format!("t{i}"), t.clone(), Category::PhysicalActivity))
            .collect();
        prop_assume!(!items.is_empty());
        let header = PromptHeader::new(Category::PhysicalActivity, "rules").unwrap();
        let prompt = build_prompt(&header, &items).unwrap();
        let back = parse_item_section(&prompt.rendered).unwrap();
        prop_assert_eq!(back.len(), items.len());
        for ((id, text), item) in back.into_iter().zip(&items) {
            prop_assert_eq!(id, item.id.as_str());
            prop_assert_eq!(unescape_item_text(text), item.text.clone());
        }
        prop_assert_eq!(prompt.rendered.matches(header.format_contract()).count(), 1);
    }

    #[test]
    fn parser_is_total_and_deterministic(raw in "(?s).{0,200}", n in 1usize..5) {
        let ids: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        prop_assert_eq!(parse_response(&raw, &ids), parse_response(&raw, &ids));
    }

    #[test]
    fn canonical_reply_round_trips(labels in prop::collection::vec(label(), 1..60), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("{}", 1_000_000 + i)).collect();
        let mut lines: Vec<String> = ids.iter().zip(&labels).map(|(i, l)| format!(" {i} , {} ", l.as_str().to_lowercase())).collect();
        lines.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let reply = parse_response(&lines.join("\n"), &ids).unwrap();
        let canon = canonicalize_reply(&reply);
        prop_assert!(canon.ends_with('\n') && !canon.ends_with("\n\n"));
        let again = parse_response(&canon, &ids).unwrap();
        prop_assert_eq!(&again.records, &reply.records);
        prop_assert_eq!(canonicalize_reply(&again), canon);
    }

    #[test]
    fn unknown_label_words_never_coerced(word in "[A-Za-z]{1,8}") {
        prop_assume!(word.parse::<Label>().is_err());
        let ids = vec!["a".to_string()];
        let raw = format!("a,{}", word);
        prop_assert!(parse_response(&raw, &ids).is_err());
    }

    #[test]
    fn accuracy_is_trace_over_total((pred, gold) in paired_maps()) {
        let m = confusion(&pred, &gold).unwrap();
        let acc = accuracy(&pred, &gold).unwrap();
        prop_assert_eq!(acc, m.trace() as f64 / m.total() as f64);
        prop_assert_eq!(m.total(), gold.len() as u64);
    }

    #[test]
    fn order_changes_no_number((pred, gold) in paired_maps(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut entries: Vec<_> = gold.iter().map(|(k, v)| (k.clone(), *v)).collect();
        entries.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled: LabelMap = entries.into_iter().collect();
        prop_assert_eq!(confusion(&pred, &gold).unwrap(), confusion(&pred, &shuffled).unwrap());
    }

    #[test]
    fn cell_percentages_sum_near_100(counts in prop::array::uniform3(prop::array::uniform3(0u64..5000))) {
        let m = ConfusionMatrix::from_counts(counts);
        prop_assume!(m.total() > 0);
        let sum: u64 = counts.iter().flatten().map(|c| percent_hundredths(*c, m.total())).sum();
        prop_assert!(sum.abs_diff(10_000) <= 45, "sum {}", sum);
    }

    #[test]
    fn shared_gold_gives_shared_row_sums((pred, gold) in paired_maps()) {
        let flipped: LabelMap = pred.iter().map(|(k, v)| (k.clone(), Label::ALL[(v.index() + 1) % 3])).collect();
        prop_assert_eq!(confusion(&pred, &gold).unwrap().row_sums(), confusion(&flipped, &gold).unwrap().row_sums());
    }

    #[test]
    fn cost_is_monotone_and_linear(p in 0u64..1u64 << 40, c in 0u64..1u64 << 40, dp in 0u64..1000, k in 0u64..1000) {
        let pr = Pricing::default();
        prop_assert!(cost_of_tokens(p + dp, c, pr) >= cost_of_tokens(p, c, pr));
        prop_assert!(cost_of_tokens(p, c + dp, pr) >= cost_of_tokens(p, c, pr));
        prop_assert_eq!(cost_of_tokens(p * k, c * k, pr), cost_of_tokens(p, c, pr) * Decimal::from(k));
    }

    #[test]
    fn report_json_round_trips((pred, gold) in paired_maps()) {
        let mut b = ReportBuilder::new();
        b.add_category("sleep_problems", &pred, &gold, Some(&gold)).unwrap();
        let report = b.build().unwrap();
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        prop_assert_eq!(back, report);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_survive_write_then_load(
        rows in prop::collection::vec(("[^\u{0}]{1,30}", label()), 1..40),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let src = LabelSource::new(SourceKind::Llm, 1);
        let items: Vec<AnnotatedItem> = rows
            .iter()
            .enumerate()
            .filter(|(_, (t, _))| !t.trim().is_empty())
            .map(|(i, (t, l))| AnnotatedItem::new(format!("id,{i}"), t.clone(), Category::SleepProblems).with_label(src, *l))
            .collect();
        prop_assume!(!items.is_empty());
        let ds = Dataset::from_items(items).unwrap();
        let path = dir.path().join("labels.csv");
        write_labels(&ds, src, &path).unwrap();
        prop_assert_eq!(load_labels(&path).unwrap(), ds.labels_of(src));
    }

    #[test]
    fn dataset_text_is_preserved(texts in prop::collection::vec("[^\u{0}]{1,30}", 1..30)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("in.csv");
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.write_record(["id", "text"]).unwrap();
        let kept: Vec<&String> = texts.iter().filter(|t| !t.trim().is_empty()).collect();
        prop_assume!(!kept.is_empty());
        for (i, t) in kept.iter().enumerate() {
            w.write_record([format!("r{i}").as_str(), t.as_str()]).unwrap();
        }
        w.flush().unwrap();
        let ds = load_dataset(&path, &CsvSchema::default(), Category::SedentaryBehavior).unwrap();
        prop_assert_eq!(ds.len(), kept.len());
        for (item, t) in ds.items().iter().zip(&kept) {
            prop_assert_eq!(item.text.len(), t.len());
            prop_assert_eq!(&item.text, *t);
        }
    }
}

#[test]
fn fixture_report_reproduces_gpt_category_accuracies() {
    let fixtures = common::fixtures();
    let mut b = ReportBuilder::new();
    for f in &fixtures {
        b.add_category(f.category.key(), &f.gpt, &f.gold, Some(&f.amt)).unwrap();
    }
    let report = b.build().unwrap();
    let pct = |k: &str| report.categories[k].llm.accuracy_percent.clone();
    assert_eq!(pct("physical_activity"), "81.00");
    assert_eq!(pct("sleep_problems"), "56.14");
    assert_eq!(pct("sedentary_behavior"), "73.31");
    assert_eq!(report.total.llm.accuracy_percent, "71.51");
    assert_eq!(report.total.llm.confusion.counts(), &common::GPT_TOTAL);
    assert_eq!(report.total.crowd.as_ref().unwrap().confusion.counts(), &common::AMT_TOTAL);
    let recall = report.total.llm.per_class[&Label::Yes].recall.unwrap();
    assert!((recall - 356.0 / 2187.0).abs() < 1e-12);
    assert!((recall - 0.1628).abs() < 5e-5);
}
