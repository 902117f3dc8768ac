use goat_core::dataset_io::{self, parse_sft_target, render_target, PlannedCall, SampleRecord};
use goat_core::eval;
use goat_core::json_util::{canonical_string, json_eq};
use goat_core::provider::TrigramEmbedder;
use goat_core::retriever::DocIndex;
use goat_core::sim;
use proptest::prelude::*;
use serde_json::{json, Map, Value};
use std::collections::BTreeSet;

fn name_set() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set("[a-e]", 0..5)
}

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i32>().prop_map(|n| json!(n)),
        (-1e6f64..1e6).prop_map(|f| json!(f)),
        "[a-zA-Z0-9 ,'\"{}:]{0,12}".prop_map(Value::String),
        any::<bool>().prop_map(Value::Bool),
    ]
}

fn calls() -> impl Strategy<Value = Vec<PlannedCall>> {
    prop::collection::vec(
        ("[A-Z][a-z]{1,6}", prop::collection::btree_map("[a-z_]{1,6}", scalar(), 0..4)).prop_map(|(api_name, m)| {
            PlannedCall { api_name, input: m.into_iter().collect::<Map<String, Value>>() }
        }),
        0..4,
    )
}

proptest! {
    #[test]
    fn selection_accuracy_is_symmetric(a in name_set(), b in name_set()) {
        let ab = eval::selection_accuracy(&a, &b);
        prop_assert_eq!(ab, eval::selection_accuracy(&b, &a));
        prop_assert_eq!(ab == 1.0, a == b);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn name_only_invocation_accuracy_equals_selection_accuracy(a in name_set(), b in name_set()) {
        let project = |s: &BTreeSet<String>| s.iter().map(|n| eval::call_key(n, &Map::new())).collect::<BTreeSet<_>>();
        prop_assert_eq!(eval::invocation_accuracy(&project(&a), &project(&b)), eval::selection_accuracy(&a, &b));
    }

    #[test]
    fn rouge_l_is_bounded_and_symmetric(a in "[a-c ]{0,20}", b in "[a-c ]{0,20}") {
        let r = eval::rouge_l(&a, &b);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(r, eval::rouge_l(&b, &a));
    }

    #[test]
    fn integral_floats_equal_integers(n in -1_000_000i64..1_000_000) {
        prop_assert!(json_eq(&json!(n), &json!(n as f64)));
        prop_assert_eq!(canonical_string(&json!({"v": n as f64})), canonical_string(&json!({"v": n})));
    }

    #[test]
    fn sft_targets_round_trip_with_exact_spans(calls in calls(), answer in "[ -~]{0,30}") {
        let (target, spans) = render_target(&calls, &answer);
        let parsed = parse_sft_target(&target).unwrap();
        prop_assert_eq!(&parsed.calls, &calls);
        prop_assert_eq!(parsed.final_response, answer);
        let values: Vec<&Value> = calls.iter().flat_map(|c| c.input.values()).collect();
        prop_assert_eq!(spans.len(), values.len());
        let chars: Vec<char> = target.chars().collect();
        for (span, value) in spans.iter().zip(values) {
            let text: String = chars[span.0..span.1].iter().collect();
            let back: Value = serde_json::from_str(&text).unwrap();
            prop_assert!(json_eq(&back, value), "{} vs {}", text, value);
        }
    }

    #[test]
    fn sample_records_round_trip(query in "[ -~]{1,40}", answer in "[ -~]{0,40}", args in prop::collection::btree_map("[a-z]{1,5}", scalar(), 0..3)) {
        let record = json!({
            "query": query,
            "api_path": [{"api_name": "F", "input": args, "output": {"error": "", "response": {"ok": 1}}, "sub_instruction": "do it"}],
            "final_response": answer,
        });
        let sample = SampleRecord::from_value(record, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        dataset_io::write_samples(&path, std::slice::from_ref(&sample)).unwrap();
        let back = dataset_io::read_samples(&path, true).unwrap();
        prop_assert_eq!(back, vec![sample]);
    }

    #[test]
    fn search_results_grow_by_prefix(query in "[a-z ]{1,30}", k in 1usize..8) {
        let index = DocIndex::build(&sim::corpus(), &TrigramEmbedder).unwrap();
        let short = index.search_ids(&TrigramEmbedder, &query, k).unwrap();
        let long = index.search_ids(&TrigramEmbedder, &query, k + 1).unwrap();
        prop_assert_eq!(&long[..short.len()], &short[..]);
    }
}
