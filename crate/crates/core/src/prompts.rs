//! Prompt templates and a minimal `{{$name}}` renderer.

use std::collections::HashMap;

pub const EXTRACTION: &str = include_str!("../prompts/extraction.txt");
pub const EXTRACTION_CATEGORIES: &str = include_str!("../prompts/extraction_categories.txt");
pub const EXTRACTION_FLAT: &str = include_str!("../prompts/extraction_flat.txt");
pub const EXAMPLE_ANSWER_CATEGORIES: &str = include_str!("../prompts/example_answer_categories.txt");
pub const EXAMPLE_ANSWER_FLAT: &str = include_str!("../prompts/example_answer_flat.txt");
pub const REASONING: &str = include_str!("../prompts/reasoning.txt");
pub const ANSWER_LOCOMO: &str = include_str!("../prompts/answer_locomo.txt");
pub const ANSWER_LONGMEMEVAL: &str = include_str!("../prompts/answer_longmemeval.txt");
pub const JUDGE: &str = include_str!("../prompts/judge.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template variable {{{{${0}}}}} has no value")]
    MissingVariable(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

/// Substitutes every `{{$name}}` in `template`.
///
/// Placeholders are resolved in the template only, so substituted text that
/// happens to contain `{{$` is left alone. Trailing newlines of the template
/// and of each value are dropped.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let values: HashMap<&str, &str> = vars.iter().copied().collect();
    let template = template.trim_end_matches('\n');
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("{{$") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 3..];
        let end = after.find("}}").ok_or(PromptError::Unterminated(offset + start))?;
        let name = &after[..end];
        let value = values
            .get(name)
            .ok_or_else(|| PromptError::MissingVariable(name.to_string()))?;
        out.push_str(value.trim_end_matches('\n'));
        let consumed = start + 3 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Names of all placeholders in a template, in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{$") {
        let after = &rest[start + 3..];
        match after.find("}}") {
            Some(end) => {
                names.push(after[..end].to_string());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_and_ignores_placeholders_in_values() {
        let out = render("a {{$x}} b {{$y}}\n", &[("x", "{{$y}}"), ("y", "2\n")]).unwrap();
        assert_eq!(out, "a {{$y}} b 2");
    }

    #[test]
    fn missing_variable_is_an_error() {
        assert_eq!(
            render("{{$nope}}", &[]),
            Err(PromptError::MissingVariable("nope".into()))
        );
        assert!(matches!(render("x {{$open", &[]), Err(PromptError::Unterminated(2))));
    }

    #[test]
    fn template_variables() {
        assert_eq!(placeholders(JUDGE), ["question", "gold_answer", "predicted_answer"]);
        assert_eq!(placeholders(REASONING), ["memory_fragments"]);
        assert_eq!(placeholders(ANSWER_LOCOMO), ["context", "question"]);
        assert_eq!(placeholders(ANSWER_LONGMEMEVAL), ["context", "question"]);
        assert_eq!(
            placeholders(EXTRACTION),
            [
                "goal_output",
                "category_definitions",
                "identify_instruction",
                "date_instructions",
                "format_instruction",
                "example_answer",
                "conversation"
            ]
        );
    }
}
