//! Agent metrics against gold samples, including the LLM success judge.

use crate::agent::{ExecutedCall, Trajectory};
use crate::dataset_io::{PathStep, SampleRecord};
use crate::json_util::{canonical_string, json_eq};
use crate::prompts::{self, PromptId};
use crate::provider::{parse_json_reply, ChatProvider, ProviderError, Session};
use crate::tool_env::ApiOutput;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("judge reply was not a valid verdict: {0}")]
    JudgeFormat(String),
    #[error("{trajectories} trajectories for {samples} gold samples")]
    LengthMismatch { trajectories: usize, samples: usize },
    #[error("trajectory {index} answers '{found}' but gold sample asks '{expected}'")]
    QueryMismatch { index: usize, expected: String, found: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn selection_accuracy(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    jaccard(pred, gold)
}

/// A call as a comparable pair: name plus canonical argument map.
pub fn call_key(api_name: &str, input: &Map<String, Value>) -> (String, String) {
    (api_name.to_string(), canonical_string(&Value::Object(input.clone())))
}

pub fn invocation_accuracy(pred: &BTreeSet<(String, String)>, gold: &BTreeSet<(String, String)>) -> f64 {
    jaccard(pred, gold)
}

/// Whether `gold` occurs in `pred` as a not necessarily contiguous subsequence.
pub fn correct_path<T: PartialEq>(gold: &[T], pred: &[T]) -> bool {
    let mut it = pred.iter();
    gold.iter().all(|g| it.any(|p| p == g))
}

/// Mean of `pred - gold` over successful cases; `None` when there are none.
pub fn delta_solution_length(successes: &[(usize, usize)]) -> Option<f64> {
    if successes.is_empty() {
        return None;
    }
    let total: f64 = successes.iter().map(|&(p, g)| p as f64 - g as f64).sum();
    Some(total / successes.len() as f64)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 over whitespace tokens.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    // 2PR / (P + R) with P = lcs/|p| and R = lcs/|g| reduces to this.
    2.0 * lcs_len(&p, &g) as f64 / (p.len() + g.len()) as f64
}

/// Share of predicted outputs that equal a distinct gold output, matched
/// greedily in prediction order.
pub fn correctness(pred: &[ApiOutput], gold: &[ApiOutput]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let gold: Vec<Value> = gold.iter().map(|o| serde_json::to_value(o).expect("outputs serialize")).collect();
    let mut used = vec![false; gold.len()];
    let mut hits = 0;
    for p in pred {
        let p = serde_json::to_value(p).expect("outputs serialize");
        if let Some(i) = (0..gold.len()).find(|&i| !used[i] && json_eq(&p, &gold[i])) {
            used[i] = true;
            hits += 1;
        }
    }
    hits as f64 / pred.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Solved,
    Unsolved,
}

const VERDICT_REMINDER: &str =
    "The \"answer_status\" field must be exactly \"Solved\" or \"Unsolved\". Return the JSON object only.";

pub fn judge_payload(query: &str, calls: &[ExecutedCall], answer: &str) -> Value {
    json!({"query": query, "tool execution details": calls, "final answer": answer})
}

pub fn judge_request(query: &str, calls: &[ExecutedCall], answer: &str) -> crate::provider::ChatRequest {
    prompts::request(PromptId::SuccessRate, &judge_payload(query, calls, answer))
}

fn read_verdict(text: &str) -> Option<Verdict> {
    match parse_json_reply(text).ok()?.get("answer_status")?.as_str()? {
        "Solved" => Some(Verdict::Solved),
        "Unsolved" => Some(Verdict::Unsolved),
        _ => None,
    }
}

/// Asks the judge once, and once more if the verdict is unreadable.
pub fn success_rate(
    query: &str,
    calls: &[ExecutedCall],
    answer: &str,
    judge: &dyn ChatProvider,
) -> Result<Verdict, EvalError> {
    let mut session = Session::new(judge);
    let request = judge_request(query, calls, answer);
    let first = session.chat(&request)?;
    if let Some(v) = read_verdict(&first.text) {
        return Ok(v);
    }
    let second = session.chat(&request.with_user_turn_after(&first.text, VERDICT_REMINDER))?;
    read_verdict(&second.text).ok_or(EvalError::JudgeFormat(second.text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub query: String,
    pub selection_accuracy: f64,
    pub invocation_accuracy: f64,
    pub correct_path: bool,
    pub pred_len: usize,
    pub gold_len: usize,
    pub rouge_l: f64,
    pub correctness: f64,
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub agent: String,
    pub samples: usize,
    pub selection_accuracy: f64,
    pub invocation_accuracy: f64,
    pub correct_path_rate: f64,
    /// Over judged-Solved samples only.
    pub delta_solution_length: Option<f64>,
    pub rouge_l: f64,
    pub correctness: f64,
    pub success_rate: Option<f64>,
    pub solved: usize,
    pub unsolved: usize,
    pub judge_errors: usize,
    /// Set because the success rate stands in for human judgement of success.
    pub sr_substitutes_human_eval: bool,
    pub per_sample: Vec<SampleMetrics>,
}

fn names(steps: impl Iterator<Item = String>) -> Vec<String> {
    steps.collect()
}

/// Metrics for one trajectory; the judge verdict is filled in separately.
pub fn score(traj: &Trajectory, gold: &SampleRecord) -> SampleMetrics {
    let pred_names = traj.called_functions();
    let gold_names = names(gold.api_path.iter().map(|s| s.api_name.clone()));
    let pred_calls: BTreeSet<_> = traj.calls.iter().map(|c| call_key(&c.api_name, &c.input)).collect();
    let gold_calls: BTreeSet<_> = gold.api_path.iter().map(|s: &PathStep| call_key(&s.api_name, &s.input)).collect();
    let pred_outputs: Vec<ApiOutput> = traj.calls.iter().map(|c| c.output.clone()).collect();
    let gold_outputs: Vec<ApiOutput> = gold.api_path.iter().map(|s| s.output.clone()).collect();
    SampleMetrics {
        query: gold.query.clone(),
        selection_accuracy: selection_accuracy(
            &pred_names.iter().cloned().collect(),
            &gold_names.iter().cloned().collect(),
        ),
        invocation_accuracy: invocation_accuracy(&pred_calls, &gold_calls),
        correct_path: correct_path(&gold_names, &pred_names),
        pred_len: pred_names.len(),
        gold_len: gold_names.len(),
        rouge_l: rouge_l(&traj.final_answer, &gold.final_response),
        correctness: correctness(&pred_outputs, &gold_outputs),
        verdict: None,
        judge_error: None,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

/// Pairs trajectories with gold samples by position. Judge format failures
/// count as unsolved and are tallied in `judge_errors`.
pub fn evaluate(
    trajectories: &[Trajectory],
    gold: &[SampleRecord],
    judge: Option<&dyn ChatProvider>,
    pool: &rayon::ThreadPool,
) -> Result<MetricReport, EvalError> {
    if trajectories.len() != gold.len() {
        return Err(EvalError::LengthMismatch { trajectories: trajectories.len(), samples: gold.len() });
    }
    for (index, (t, g)) in trajectories.iter().zip(gold).enumerate() {
        if t.query != g.query {
            return Err(EvalError::QueryMismatch { index, expected: g.query.clone(), found: t.query.clone() });
        }
    }
    let per_sample: Vec<SampleMetrics> = pool.install(|| {
        trajectories
            .par_iter()
            .zip(gold)
            .map(|(t, g)| {
                let mut m = score(t, g);
                if let Some(judge) = judge {
                    match success_rate(&t.query, &t.calls, &t.final_answer, judge) {
                        Ok(v) => m.verdict = Some(v),
                        Err(EvalError::JudgeFormat(text)) => m.judge_error = Some(text),
                        Err(e) => return Err(e),
                    }
                }
                Ok(m)
            })
            .collect::<Result<_, EvalError>>()
    })?;
    let solved = per_sample.iter().filter(|m| m.verdict == Some(Verdict::Solved)).count();
    let unsolved = per_sample.iter().filter(|m| m.verdict == Some(Verdict::Unsolved)).count();
    let judge_errors = per_sample.iter().filter(|m| m.judge_error.is_some()).count();
    let successes: Vec<(usize, usize)> =
        per_sample.iter().filter(|m| m.verdict == Some(Verdict::Solved)).map(|m| (m.pred_len, m.gold_len)).collect();
    let n = per_sample.len();
    Ok(MetricReport {
        agent: trajectories.first().map(|t| t.agent.clone()).unwrap_or_default(),
        samples: n,
        selection_accuracy: mean(per_sample.iter().map(|m| m.selection_accuracy)),
        invocation_accuracy: mean(per_sample.iter().map(|m| m.invocation_accuracy)),
        correct_path_rate: mean(per_sample.iter().map(|m| if m.correct_path { 1.0 } else { 0.0 })),
        delta_solution_length: delta_solution_length(&successes),
        rouge_l: mean(per_sample.iter().map(|m| m.rouge_l)),
        correctness: mean(per_sample.iter().map(|m| m.correctness)),
        success_rate: (judge.is_some() && n > 0).then(|| solved as f64 / n as f64),
        solved,
        unsolved,
        judge_errors,
        sr_substitutes_human_eval: judge.is_some(),
        per_sample,
    })
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let mut rows = vec![
            ("SA", pct(self.selection_accuracy)),
            ("IA", pct(self.invocation_accuracy)),
            ("Correct Path%", pct(self.correct_path_rate)),
            ("ROUGE-L", format!("{:.4}", self.rouge_l)),
            ("Correctness", pct(self.correctness)),
        ];
        rows.push(("SR", self.success_rate.map(pct).unwrap_or_else(|| "n/a".into())));
        rows.push(("dLen", self.delta_solution_length.map(|d| format!("{d:+.2}")).unwrap_or_else(|| "undefined".into())));
        let mut out = format!("agent: {}  samples: {}\n", self.agent, self.samples);
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<14} {value:>9}");
        }
        let _ = writeln!(out, "solved {} / unsolved {} / judge errors {}", self.solved, self.unsolved, self.judge_errors);
        if self.sr_substitutes_human_eval {
            out.push_str("note: SR is judged by a model in place of human evaluation\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(selection_accuracy(&set(&["A", "B", "C"]), &set(&["B", "C", "D"])), 0.5);
        assert_eq!(selection_accuracy(&set(&["A"]), &set(&["A"])), 1.0);
        assert_eq!(selection_accuracy(&set(&["A"]), &set(&["B"])), 0.0);
        assert_eq!(selection_accuracy(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn call_keys_ignore_order_and_number_form() {
        let a: Map<String, Value> = serde_json::from_str(r#"{"a":1,"b":2}"#).unwrap();
        let b: Map<String, Value> = serde_json::from_str(r#"{"b":2.0,"a":1}"#).unwrap();
        let c: Map<String, Value> = serde_json::from_str(r#"{"b":3,"a":1}"#).unwrap();
        assert_eq!(call_key("f", &a), call_key("f", &b));
        assert_ne!(call_key("f", &a), call_key("f", &c));
    }

    #[test]
    fn path_and_length_cases() {
        assert!(correct_path(&["a", "b"], &["a", "x", "b"]));
        assert!(!correct_path(&["a", "b"], &["b", "a"]));
        assert!(correct_path::<&str>(&[], &["q"]));
        assert_eq!(delta_solution_length(&[(3, 2)]), Some(1.0));
        assert_eq!(delta_solution_length(&[(2, 2), (4, 2)]), Some(1.0));
        assert_eq!(delta_solution_length(&[]), None);
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge_l("a b c", "a b c"), 1.0);
        assert_eq!(rouge_l("a b", "c d"), 0.0);
        assert!((rouge_l("the cat sat", "the dog sat") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn correctness_cases() {
        let a = ApiOutput::ok(json!(1));
        let b = ApiOutput::ok(json!(2));
        assert_eq!(correctness(&[a.clone(), b.clone()], &[b.clone(), a.clone()]), 1.0);
        assert_eq!(correctness(std::slice::from_ref(&a), std::slice::from_ref(&b)), 0.0);
        assert_eq!(correctness(&[a.clone(), a.clone()], std::slice::from_ref(&a)), 0.5);
        assert_eq!(correctness(&[], &[a]), 0.0);
    }
}
