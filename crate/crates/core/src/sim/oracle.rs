use crate::json_util::{all_keys, find_key, leaves, scalar_text, value_contained};
use crate::prompts::PromptId;
use crate::provider::{ChatRequest, Responder, Role};
use crate::tool_env::{ManifestFunction, SimManifest};
use serde_json::{json, Map, Number, Value};
use std::collections::BTreeMap;

/// One step of a known task, used when the stand-in model plays an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldStep {
    pub api_name: String,
    pub sub_instruction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldTrace {
    pub query: String,
    pub steps: Vec<GoldStep>,
}

/// Rule-based stand-in for the chat model, answering every pipeline and
/// agent prompt from the simulated manifest. It reads the first user
/// payload of a request, so follow-up turns get the same answer.
#[derive(Debug, Clone)]
pub struct SimOracle {
    functions: BTreeMap<String, ManifestFunction>,
    memory: BTreeMap<String, GoldTrace>,
}

impl SimOracle {
    pub fn new(manifest: &SimManifest) -> Self {
        Self {
            functions: manifest.functions.iter().map(|f| (f.name.clone(), f.clone())).collect(),
            memory: BTreeMap::new(),
        }
    }

    /// Known tasks the model "remembers" when acting as an agent.
    pub fn with_memory(mut self, traces: impl IntoIterator<Item = GoldTrace>) -> Self {
        for t in traces {
            self.memory.entry(t.query.clone()).or_insert(t);
        }
        self
    }

    fn function(&self, doc: &Value) -> Option<&ManifestFunction> {
        doc.get("name").and_then(Value::as_str).and_then(|n| self.functions.get(n))
    }

    fn output_keys(&self, name: &str) -> Vec<String> {
        let Some(f) = self.functions.get(name) else { return Vec::new() };
        let mut keys: Vec<String> = f
            .rows
            .iter()
            .map(|r| &r.response)
            .chain(f.default_response.iter())
            .flat_map(|v| all_keys(v).into_iter().map(str::to_string))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    fn answer(&self, prompt: PromptId, p: &Value) -> Option<Value> {
        Some(match prompt {
            PromptId::ParseDocument => self.parse(&p["API Document"]),
            PromptId::LlmFilter => self.connectable(p),
            PromptId::EdgeFirstCall | PromptId::MakeFirstCall => {
                Value::Object(self.first_call(self.function(&p["API Document"])?))
            }
            PromptId::EdgeSubsequentCall => {
                let f = self.function(&p["API Document"])?;
                let results: Vec<&Value> = p["API Call Results"].as_object()?.values().collect();
                let mut args = Map::new();
                for param in &f.parameters {
                    if let Some(v) = grounded(param, &results) {
                        args.insert(param.name.clone(), v);
                    } else if param.required {
                        args.insert(param.name.clone(), self.first_call(f).get(&param.name)?.clone());
                    }
                }
                Value::Object(args)
            }
            PromptId::CallFilter => {
                let used: Vec<&String> = p["llm_result"]
                    .as_object()?
                    .iter()
                    .filter(|(_, v)| value_contained(v, &p["api_result"]))
                    .map(|(k, _)| k)
                    .collect();
                match used.first() {
                    Some(k) => json!({"connectable": true, "reason": format!("The value of '{k}' is taken from the first result.")}),
                    None => json!({"connectable": false, "reason": "No parameter value appears in the first result."}),
                }
            }
            PromptId::MakeCallStep1 => {
                let f = self.function(&p["API Document"])?;
                let mut args = Map::new();
                for (idx, name) in p["Parameter Dictionary"].as_object()? {
                    let param = f.parameters.iter().find(|x| Some(x.name.as_str()) == name.as_str())?;
                    let docid = p["Parameter Value"][idx]["docid"].as_str()?;
                    let source = &p["Previous Result"][docid];
                    if let Some(v) = grounded(param, &[source]) {
                        args.insert(param.name.clone(), v);
                    }
                }
                Value::Object(args)
            }
            PromptId::MakeCallStep2 => {
                let f = self.function(&p["API Document"])?;
                let mut args = p["Partially Filled Parameters"].as_object().cloned().unwrap_or_default();
                let defaults = self.first_call(f);
                for param in f.parameters.iter().filter(|x| x.required) {
                    if !args.contains_key(&param.name) {
                        args.insert(param.name.clone(), defaults.get(&param.name)?.clone());
                    }
                }
                Value::Object(args)
            }
            PromptId::SubInstruction => {
                let f = self.function(&p["API Document"])?;
                let call = p["API call"].as_object()?;
                let instruction = match &f.instruction {
                    Some(t) => render(t, call),
                    None => format!("{}.", f.description.trim_end_matches('.')),
                };
                json!({"thought": "Parameters are stated with their values.", "instruction": instruction})
            }
            PromptId::UserQuery => {
                let subs: Vec<String> = p["Subinstructions"]
                    .as_array()?
                    .iter()
                    .filter_map(Value::as_str)
                    .map(|s| lower_first(s.trim().trim_end_matches('.')))
                    .collect();
                json!({"thought": "The steps are joined in order.", "query": format!("Could you {}?", subs.join(", then "))})
            }
            PromptId::FinalResponse => {
                let parts: Vec<String> = p["API Call Result"]
                    .as_array()?
                    .iter()
                    .map(|u| {
                        let step = u["subinstruction"].as_str().unwrap_or("").trim().trim_end_matches('.');
                        format!("{step}: {}", compact(response_of(&u["api response"])))
                    })
                    .collect();
                json!({"thought": "Each result is reported.", "final_answer": summary(&parts)})
            }
            PromptId::SuccessRate => judge(p),
            PromptId::AgentGlobalPlan => {
                let available = doc_names(&p["API Documents"]);
                let plan: Vec<String> = match self.memory.get(p["User Query"].as_str()?) {
                    Some(t) => t.steps.iter().map(|s| s.api_name.clone()).filter(|n| available.contains(n)).collect(),
                    None => available.into_iter().take(1).collect(),
                };
                json!({"thought": "Calls are ordered by dependency.", "plan": plan})
            }
            PromptId::AgentCallArgs => {
                let f = self.function(&p["API Document"])?;
                Value::Object(self.agent_args(f, &p["Previous Calls"]))
            }
            PromptId::AgentReactStep => {
                let history = p["History"].as_array()?;
                let available = doc_names(&p["API Documents"]);
                let next = self
                    .memory
                    .get(p["User Query"].as_str()?)
                    .and_then(|t| t.steps.get(history.len()))
                    .filter(|s| available.contains(&s.api_name))
                    .and_then(|s| self.functions.get(&s.api_name));
                match next {
                    Some(f) => json!({"action": "call", "api_name": f.name, "input": self.agent_args(f, &p["History"])}),
                    None => json!({"action": "finish", "final_answer": summarize_calls(history)}),
                }
            }
            PromptId::AgentDecomposeStep => {
                let history = p["History"].as_array()?;
                let next = self.memory.get(p["User Query"].as_str()?).and_then(|t| t.steps.get(history.len()));
                match next {
                    Some(s) => json!({"action": "subinstruction", "subinstruction": s.sub_instruction}),
                    None => json!({"action": "finish", "final_answer": summarize_calls(history)}),
                }
            }
            PromptId::AgentDecomposePlan => {
                let query = p["User Query"].as_str()?;
                let subs: Vec<String> = match self.memory.get(query) {
                    Some(t) => t.steps.iter().map(|s| s.sub_instruction.clone()).collect(),
                    None => vec![query.to_string()],
                };
                json!({"thought": "One step per call.", "subinstructions": subs})
            }
            PromptId::AgentSelectCall => {
                let sub = p["Subinstruction"].as_str()?;
                let available = doc_names(&p["API Documents"]);
                let pick = self
                    .memory
                    .values()
                    .flat_map(|t| &t.steps)
                    .find(|s| s.sub_instruction == sub && available.contains(&s.api_name))
                    .and_then(|s| self.functions.get(&s.api_name));
                match pick {
                    Some(f) => json!({"api_name": f.name, "input": self.agent_args(f, &p["History"])}),
                    None => json!({"api_name": null, "input": {}}),
                }
            }
            PromptId::AgentFinalAnswer => {
                json!({"thought": "Each result is reported.", "final_answer": summarize_calls(p["API Call Results"].as_array()?)})
            }
        })
    }

    fn parse(&self, doc: &Value) -> Value {
        let inputs: Vec<String> = doc["parameters"]
            .as_array()
            .map(|ps| {
                ps.iter()
                    .map(|x| match x["description"].as_str() {
                        Some(d) if !d.is_empty() => d.to_string(),
                        _ => format!("value of {}", x["name"].as_str().unwrap_or("the parameter")),
                    })
                    .collect()
            })
            .unwrap_or_default();
        let output = match &doc["output_schema"] {
            Value::String(s) if !s.is_empty() => s.clone(),
            Value::Null => doc["description"].as_str().unwrap_or("the result").to_string(),
            other => other.to_string(),
        };
        json!({"input_params": inputs, "output": output})
    }

    fn connectable(&self, p: &Value) -> Value {
        let src = p["API1 Document"]["name"].as_str().unwrap_or("");
        let dst = self.function(&p["API2 Document"]);
        let param_name = p["API2 Semantic Descriptions"].as_object().and_then(|m| m.keys().next().cloned());
        let param = dst.zip(param_name).and_then(|(f, n)| f.parameters.iter().find(|x| x.name == n));
        let keys = self.output_keys(src);
        let hit = param.and_then(|param| candidates(param).into_iter().find(|c| keys.contains(c)).map(|c| (param, c)));
        match hit {
            Some((param, key)) => json!({
                "connectable": true,
                "reason": format!("The '{key}' field in the output of {src} supplies the '{}' argument.", param.name),
            }),
            None => json!({"connectable": false, "reason": "The output of the first API does not carry this input."}),
        }
    }

    /// Arguments of the first table row, cast to the declared types.
    fn first_call(&self, f: &ManifestFunction) -> Map<String, Value> {
        let Some(row) = f.rows.first() else { return Map::new() };
        f.parameters
            .iter()
            .filter_map(|param| row.input.get(&param.name).map(|v| (param.name.clone(), cast(v, &param.type_tag))))
            .collect()
    }

    /// Fills each parameter from the most recent call output that carries
    /// it, falling back to the first table row for required parameters.
    fn agent_args(&self, f: &ManifestFunction, calls: &Value) -> Map<String, Value> {
        let outputs: Vec<&Value> =
            calls.as_array().map(|c| c.iter().rev().map(|u| response_of(&u["output"])).collect()).unwrap_or_default();
        let defaults = self.first_call(f);
        let mut args = Map::new();
        for param in &f.parameters {
            let value = outputs.iter().find_map(|o| grounded(param, &[o]));
            match (value, defaults.get(&param.name)) {
                (Some(v), _) => {
                    args.insert(param.name.clone(), v);
                }
                (None, Some(d)) if param.required => {
                    args.insert(param.name.clone(), d.clone());
                }
                _ => {}
            }
        }
        args
    }
}

impl Responder for SimOracle {
    fn respond(&self, request: &ChatRequest) -> Option<String> {
        let first_user = request.messages.iter().find(|m| m.role == Role::User)?;
        let payload: Value = serde_json::from_str(&first_user.content).ok()?;
        self.answer(request.prompt_id, &payload).map(|v| serde_json::to_string(&v).expect("json serializes"))
    }
}

fn candidates(param: &crate::tool_env::ManifestParam) -> Vec<String> {
    let mut c = vec![param.name.clone()];
    c.extend(param.accepts.iter().cloned());
    c
}

fn grounded(param: &crate::tool_env::ManifestParam, sources: &[&Value]) -> Option<Value> {
    candidates(param)
        .iter()
        .find_map(|key| sources.iter().find_map(|s| find_key(s, key)))
        .map(|v| cast(v, &param.type_tag))
}

/// Coerces an extracted value to a declared type tag; lists feeding scalar
/// parameters contribute their first element.
fn cast(v: &Value, type_tag: &str) -> Value {
    let tag = type_tag.to_ascii_lowercase();
    if let Value::Array(items) = v {
        if !matches!(tag.as_str(), "array" | "list") {
            return items.first().map(|x| cast(x, type_tag)).unwrap_or(Value::Null);
        }
    }
    let as_f64 = || match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    };
    match tag.as_str() {
        "float" | "number" | "double" => {
            as_f64().and_then(Number::from_f64).map(Value::Number).unwrap_or_else(|| v.clone())
        }
        "integer" | "int" => match as_f64() {
            Some(f) if f.fract() == 0.0 => json!(f as i64),
            _ => v.clone(),
        },
        "string" | "str" => match v {
            Value::String(_) => v.clone(),
            other => Value::String(scalar_text(other).unwrap_or_else(|| other.to_string())),
        },
        _ => v.clone(),
    }
}

fn render(template: &str, call: &Map<String, Value>) -> String {
    let mut out = template.to_string();
    for (k, v) in call {
        let text = match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        out = out.replace(&format!("{{{k}}}"), &text);
    }
    out
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn compact(v: &Value) -> String {
    serde_json::to_string(v).expect("json serializes")
}

fn response_of(output: &Value) -> &Value {
    match output {
        Value::Object(m) if m.contains_key("error") && m.contains_key("response") => &m["response"],
        other => other,
    }
}

fn summary(parts: &[String]) -> String {
    if parts.is_empty() {
        "I could not find any information for this request.".to_string()
    } else {
        format!("Here is what I found. {}.", parts.join("; "))
    }
}

fn summarize_calls(calls: &[Value]) -> String {
    let parts: Vec<String> = calls
        .iter()
        .filter(|c| c["output"]["error"].as_str().is_none_or(str::is_empty))
        .filter_map(|c| {
            let name = c["api_name"].as_str()?;
            Some(format!("{name} returned {}", compact(response_of(&c["output"]))))
        })
        .collect();
    summary(&parts)
}

fn doc_names(docs: &Value) -> Vec<String> {
    docs.as_array()
        .map(|ds| ds.iter().filter_map(|d| d["name"].as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

/// Solved when at least one call ran, none failed, and the answer quotes a
/// value from the results (thousands separators ignored).
fn judge(p: &Value) -> Value {
    let answer = p["final answer"].as_str().unwrap_or("").replace(',', "");
    let details = p["tool execution details"].as_array().cloned().unwrap_or_default();
    let all_ok = !details.is_empty()
        && details.iter().all(|d| d["output"]["error"].as_str().is_none_or(str::is_empty));
    let grounded = details.iter().any(|d| {
        leaves(response_of(&d["output"]))
            .into_iter()
            .filter_map(scalar_text)
            .any(|t| t.len() > 1 && answer.contains(&t))
    });
    let status = if all_ok && grounded && !answer.trim().is_empty() { "Solved" } else { "Unsolved" };
    json!({"content": format!("All calls succeeded: {all_ok}; answer grounded in results: {grounded}."), "answer_status": status})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts;

    fn oracle() -> SimOracle {
        SimOracle::new(&crate::sim::manifest())
    }

    fn ask(o: &SimOracle, prompt: PromptId, payload: Value) -> Value {
        serde_json::from_str(&o.respond(&prompts::request(prompt, &payload)).unwrap()).unwrap()
    }

    #[test]
    fn casts_follow_declared_types() {
        assert_eq!(serde_json::to_string(&cast(&json!(150000), "float")).unwrap(), "150000.0");
        assert_eq!(cast(&json!(["Data Scientist", "Teacher"]), "string"), json!("Data Scientist"));
        assert_eq!(cast(&json!("278"), "integer"), json!(278));
    }

    #[test]
    fn llm_filter_uses_output_keys() {
        let o = oracle();
        let m = crate::sim::manifest();
        let doc = |n: &str| serde_json::to_value(m.function(n).unwrap().document()).unwrap();
        let payload = |src: &str, dst: &str, param: &str| {
            json!({"API1 Document": doc(src), "API2 Document": doc(dst), "API2 Semantic Descriptions": {param: "x"}})
        };
        let yes = ask(&o, PromptId::LlmFilter, payload("GetOccupationSalary", "TaxCalculator", "salary"));
        assert_eq!(yes["connectable"], json!(true));
        let no = ask(&o, PromptId::LlmFilter, payload("TaxCalculator", "GetOccupationSalary", "occupation"));
        assert_eq!(no["connectable"], json!(false));
    }

    #[test]
    fn subsequent_call_extracts_and_casts() {
        let o = oracle();
        let doc = serde_json::to_value(crate::sim::manifest().function("TaxCalculator").unwrap().document()).unwrap();
        let args = ask(
            &o,
            PromptId::EdgeSubsequentCall,
            json!({"API Document": doc, "API Call Results": {"GetOccupationSalary": {"salary": 150000}}, "Reason": []}),
        );
        assert_eq!(serde_json::to_string(&args).unwrap(), r#"{"salary":150000.0}"#);
    }

    #[test]
    fn judge_needs_grounded_answer() {
        let details = json!([{"api_name": "T", "input": {}, "output": {"error": "", "response": {"salary_after_tax": 105000.0}}}]);
        let solved = judge(&json!({"query": "q", "tool execution details": details, "final answer": "about $105,000"}));
        assert_eq!(solved["answer_status"], "Solved");
        let unsolved = judge(&json!({"query": "q", "tool execution details": details, "final answer": "no idea"}));
        assert_eq!(unsolved["answer_status"], "Unsolved");
    }
}
