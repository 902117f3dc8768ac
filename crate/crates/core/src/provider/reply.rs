use super::ProviderError;
use serde_json::Value;

/// Extracts the first well-formed JSON object from a model reply.
///
/// Code fences and surrounding prose are tolerated. Python-style literals
/// (`True`, `False`, `None`) outside of strings are accepted as a fallback,
/// since the templates ask for "True"/"False".
pub fn parse_json_reply(text: &str) -> Result<Value, ProviderError> {
    let body = strip_fence(text);
    if let Some(v) = first_object(body).or_else(|| first_object(text)) {
        return Ok(v);
    }
    let pythonic = depythonize(body);
    if let Some(v) = first_object(&pythonic) {
        return Ok(v);
    }
    let preview: String = text.chars().take(80).collect();
    Err(ProviderError::Format(preview))
}

fn strip_fence(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    let after = match after.find('\n') {
        Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &after[nl + 1..],
        _ => after,
    };
    match after.find("```") {
        Some(close) => &after[..close],
        None => after,
    }
}

fn first_object(text: &str) -> Option<Value> {
    for (idx, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn depythonize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        match word.as_str() {
            "True" => out.push_str("true"),
            "False" => out.push_str("false"),
            "None" => out.push_str("null"),
            w => out.push_str(w),
        }
        word.clear();
    };
    for c in text.chars() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c.is_ascii_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        flush(&mut word, &mut out);
        if c == '"' {
            in_string = true;
        }
        out.push(c);
    }
    flush(&mut word, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn plain_object() {
        let v = parse_json_reply(r#"{"connectable": true, "reason": "x"}"#).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 2);
    }

    #[test]
    fn fenced_object() {
        assert_eq!(parse_json_reply("```json\n{\"a\":1}\n```").unwrap(), json!({"a": 1}));
    }

    #[test]
    fn prose_without_json_is_a_format_error() {
        assert!(matches!(parse_json_reply("I cannot help"), Err(ProviderError::Format(_))));
        assert!(parse_json_reply("[1, 2]").is_err());
    }

    #[test]
    fn leading_prose_and_python_literals() {
        assert_eq!(
            parse_json_reply("Sure! {\"ok\": 1} trailing").unwrap(),
            json!({"ok": 1})
        );
        assert_eq!(
            parse_json_reply("{\"connectable\": True, \"reason\": \"True story\"}").unwrap(),
            json!({"connectable": true, "reason": "True story"})
        );
    }

    #[test]
    fn skips_broken_braces_before_the_object() {
        assert_eq!(parse_json_reply("{oops} then {\"a\": [1]}").unwrap(), json!({"a": [1]}));
    }
}
