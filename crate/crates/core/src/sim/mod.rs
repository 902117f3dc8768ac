//! Bundled offline world: a small two-tool API corpus, its simulated
//! environment, reference fixtures and a rule-based stand-in model.

mod oracle;

pub use oracle::{GoldStep, GoldTrace, SimOracle};

use crate::api_spec::{parse_corpus_jsonl, ApiDocument};
use crate::provider::{FixtureSet, ScriptedProvider};
use crate::tool_env::{SimEnvironment, SimManifest};
use std::sync::Arc;

pub const MANIFEST_JSON: &str = include_str!("../../data/sim_manifest.json");
pub const CORPUS_JSONL: &str = include_str!("../../data/corpus.jsonl");
pub const FIXTURES_JSON: &str = include_str!("../../data/fixtures.json");

pub fn manifest() -> SimManifest {
    SimManifest::from_json(MANIFEST_JSON).expect("bundled manifest is valid")
}

pub fn environment() -> SimEnvironment {
    SimEnvironment::from_manifest(&manifest()).expect("bundled manifest has unique names")
}

pub fn corpus() -> Vec<ApiDocument> {
    parse_corpus_jsonl(CORPUS_JSONL).expect("bundled corpus is valid")
}

pub fn fixtures() -> FixtureSet {
    FixtureSet::from_json(FIXTURES_JSON).expect("bundled fixtures are valid")
}

/// Scripted provider answering from `fixtures` first and the stand-in model
/// for everything else.
pub fn recording_provider(fixtures: FixtureSet, oracle: SimOracle) -> ScriptedProvider {
    ScriptedProvider::new(fixtures).with_responder(Arc::new(oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tool_env::{ApiCall, Executor};
    use serde_json::json;

    #[test]
    fn bundle_is_consistent() {
        let m = manifest();
        assert!(m.functions.len() >= 8);
        let tools: std::collections::BTreeSet<_> = m.functions.iter().map(|f| f.tool.as_str()).collect();
        assert_eq!(tools.len(), 2);
        assert_eq!(corpus(), m.documents());
        assert!(!fixtures().fixtures.is_empty());
    }

    #[test]
    fn reference_salary_chain() {
        let env = environment();
        let salary = env
            .execute(&ApiCall::new("GetOccupationSalary", json!({"occupation": "Data Scientist"}).as_object().unwrap().clone()))
            .unwrap();
        assert_eq!(salary.response, json!({"salary": 150000}));
        let tax = env
            .execute(&ApiCall::new("TaxCalculator", json!({"salary": 150000.0}).as_object().unwrap().clone()))
            .unwrap();
        assert_eq!(serde_json::to_string(&tax.response).unwrap(), r#"{"salary_after_tax":105000.0}"#);
        let missing = env.execute(&ApiCall::new("TaxCalculator", Default::default())).unwrap();
        assert_eq!(missing.error, "missing 1 required positional argument: 'salary'");
    }
}
