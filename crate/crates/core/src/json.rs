//! Pulling JSON objects out of free-form model output.

use serde_json::{Deserializer, Map, Value};

/// Returns the first JSON object embedded in `text` that has `key` at its
/// top level. Prose and code fences around the object are ignored.
pub fn first_object_with_key(text: &str, key: &str) -> Option<Map<String, Value>> {
    for (start, _) in text.match_indices('{') {
        let mut stream = Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if map.contains_key(key) {
                return Some(map);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_prose_and_unrelated_objects() {
        let text = "Here: {\"x\":1} then ```json\n{\"action\":\"a\",\"args\":{}}\n``` done";
        let obj = first_object_with_key(text, "action").unwrap();
        assert_eq!(obj["action"], "a");
    }

    #[test]
    fn nested_object_is_not_mistaken_for_outer() {
        let text = r#"{"action":"a","args":{"action":"inner"}}"#;
        let obj = first_object_with_key(text, "action").unwrap();
        assert_eq!(obj["action"], "a");
    }

    #[test]
    fn none_when_absent() {
        assert!(first_object_with_key("no json { here", "action").is_none());
    }
}
