//! Deterministic rule-based stand-in for a language model.
//!
//! Recognizes the four prompt families this crate renders (extraction,
//! reasoning, answer, judge) by their fixed markers and answers each with a
//! well-formed reply built from keyword rules. The replies are plausible, not
//! good; the point is exercising every parsing path offline.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use regex::Regex;
use serde_json::{json, Value};

use super::{ChatBackend, CompletionRequest, GatewayError};
use crate::eval::metrics::{rouge1, tokenize};
use crate::temporal::{parse_temporal, render_date, resolve_relative_date, TemporalRef};

const SUBJECTIVE_WORDS: &[&str] = &[
    "like", "love", "hate", "prefer", "think", "believe", "feel", "want", "plan", "hope", "usually", "often", "goal",
    "enjoy", "favorite", "excited", "wish",
];
const PLAN_WORDS: &[&str] = &["plan", "planning", "want", "hope", "will", "going", "next", "soon"];
const EXPERIENCE_WORDS: &[&str] = &[
    "went",
    "did",
    "saw",
    "met",
    "visited",
    "attended",
    "bought",
    "ate",
    "tried",
    "finished",
    "started",
    "took",
    "made",
    "got",
    "joined",
    "quit",
    "moved",
    "yesterday",
    "ago",
    "last",
];
const STOPWORDS: &[&str] = &[
    "i", "i'm", "im", "my", "me", "a", "an", "the", "and", "to", "of", "in", "on", "at", "for", "with", "is", "am",
    "are", "was", "were", "it", "this", "that", "we", "so", "just", "really", "have", "has", "had", "be", "been", "do",
    "you", "your", "about", "now", "m", "s", "ve", "t", "what", "when", "where", "who", "which", "why", "how", "does",
    "did", "kind",
];

#[derive(Debug, Clone, Default)]
pub struct SyntheticBackend;

impl ChatBackend for SyntheticBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let prompt = request.user_prompt.as_str();
        let reply = if prompt.contains("<predicted_answer>") {
            judge_reply(prompt)
        } else if prompt.contains("\"extended_insight\"") {
            reasoning_reply(prompt)
        } else if prompt.contains("_Information\"") && prompt.contains("<Conversation>") {
            extraction_reply(prompt)
        } else if prompt.contains("Short Answer:") || prompt.contains("inform your answer:") {
            answer_reply(prompt)
        } else {
            "OK".to_string()
        };
        Ok(reply)
    }

    fn backend_id(&self) -> String {
        "synthetic".into()
    }
}

fn after_last<'a>(text: &'a str, marker: &str) -> &'a str {
    text.rfind(marker).map(|i| &text[i + marker.len()..]).unwrap_or("")
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> &'a str {
    let start = match text.rfind(open) {
        Some(i) => i + open.len(),
        None => return "",
    };
    let rest = &text[start..];
    rest.find(close).map(|end| &rest[..end]).unwrap_or(rest).trim()
}

fn content_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()) && w.len() > 1)
        .collect()
}

fn has_any(words: &[String], vocabulary: &[&str]) -> bool {
    words.iter().any(|w| vocabulary.contains(&w.as_str()))
}

fn extraction_reply(prompt: &str) -> String {
    let line_re = Regex::new(r"^\[([^\]]+)\] \((\d{4}-\d{2}-\d{2}) [A-Za-z]+\) (.*)$").unwrap();
    let speaker_re = Regex::new(r"^[A-Z][A-Za-z .'-]{0,30}: ").unwrap();
    let flat = !prompt.contains("\"Factual_Information\"");
    let temporal = prompt.contains("Before [message-date]");

    let mut lists: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
    for line in after_last(prompt, "<Conversation>\n").lines() {
        let Some(caps) = line_re.captures(line.trim()) else {
            continue;
        };
        let id = &caps[1];
        let Ok(date) = NaiveDate::parse_from_str(&caps[2], "%Y-%m-%d") else {
            continue;
        };
        let said = speaker_re.replace(&caps[3], "");
        for sentence in split_sentences(&said) {
            let words = tokenize(sentence);
            let keys = content_words(sentence);
            if words.len() < 4 || keys.is_empty() {
                continue;
            }
            let list = if flat {
                "Personal_Information"
            } else if has_any(&words, SUBJECTIVE_WORDS) {
                "Subjective_Information"
            } else if has_any(&words, EXPERIENCE_WORDS) {
                "Experiential_Information"
            } else {
                "Factual_Information"
            };
            let when = if temporal {
                sentence_date(sentence, &words, date, list)
            } else {
                render_date(date)
            };
            lists.entry(list).or_default().push(json!({
                "key": keys.iter().take(3).cloned().collect::<Vec<_>>().join(" "),
                "value": sentence.trim_end_matches(['.', '!', '?']).trim(),
                "message_id": id,
                "date": when,
            }));
        }
    }

    let mut reply = serde_json::Map::new();
    let names: &[&str] = if flat {
        &["Personal_Information"]
    } else {
        &[
            "Factual_Information",
            "Experiential_Information",
            "Subjective_Information",
        ]
    };
    for name in names {
        reply.insert(name.to_string(), Value::Array(lists.remove(name).unwrap_or_default()));
    }
    format!(
        "```json\n{}\n```",
        serde_json::to_string_pretty(&Value::Object(reply)).unwrap()
    )
}

fn split_sentences(text: &str) -> Vec<&str> {
    text.split_inclusive(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn sentence_date(sentence: &str, words: &[String], date: NaiveDate, list: &str) -> String {
    let lower = sentence.to_ascii_lowercase();
    let ago = Regex::new(r"\b([a-z0-9-]+) (days?|weeks?) ago\b").unwrap();
    let mut candidates: Vec<String> = ["yesterday", "last week", "last month", "tomorrow"]
        .iter()
        .filter(|p| lower.contains(*p))
        .map(|p| p.to_string())
        .collect();
    candidates.extend(ago.find_iter(&lower).map(|m| m.as_str().to_string()));
    if let Some(resolved) = candidates.iter().find_map(|c| resolve_relative_date(c, date).ok()) {
        return render_date(resolved);
    }
    let when = match list {
        "Experiential_Information" => TemporalRef::Before(date),
        "Subjective_Information" if has_any(words, PLAN_WORDS) => TemporalRef::After(date),
        _ => TemporalRef::OnDate(date),
    };
    when.to_string()
}

fn reasoning_reply(prompt: &str) -> String {
    let line_re = Regex::new(r"^\[(.*), ([^,\]]+)\]: (.*)$").unwrap();
    let body = after_last(prompt, "Below are the memory fragments to analyze:\n");
    let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();

    let mut keys: Vec<String> = Vec::new();
    let mut contents: Vec<String> = Vec::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    for line in body.lines() {
        if let Some(caps) = line_re.captures(line.trim()) {
            keys.push(caps[1].to_string());
            let t = parse_temporal(&caps[2], epoch).value;
            dates.push(t.anchor());
            if let TemporalRef::Range(_, end) = t {
                dates.push(end);
            }
            contents.push(caps[3].to_string());
        }
    }
    if keys.is_empty() {
        return json!({"extended_insight": []}).to_string();
    }

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for word in keys.iter().flat_map(|k| content_words(k)) {
        *counts.entry(word).or_default() += 1;
    }
    let theme = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(w, _)| w.clone())
        .unwrap_or_else(|| keys[0].clone());
    let first = *dates.iter().min().unwrap();
    let last = *dates.iter().max().unwrap();
    let span = if first == last {
        render_date(first)
    } else {
        TemporalRef::range(first, last).to_string()
    };

    let mut insights = vec![json!({
        "inference_type": "accumulation",
        "key": format!("recurring {theme}"),
        "date": span,
        "value": format!("Mentions {theme} in {} related memories", keys.len()),
    })];
    let distinct: Vec<&String> = {
        let mut seen = Vec::new();
        for k in &keys {
            if !seen.contains(&k) {
                seen.push(k);
            }
        }
        seen
    };
    if distinct.len() >= 2 {
        let clip = |s: &str| s.split_whitespace().take(5).collect::<Vec<_>>().join(" ");
        insights.push(json!({
            "inference_type": "connection/implication",
            "key": format!("{} and {}", distinct[0], distinct[distinct.len() - 1]),
            "date": render_date(last),
            "value": format!("Links {} with {}", clip(&contents[0]), clip(&contents[contents.len() - 1])),
        }));
    }
    serde_json::to_string_pretty(&json!({ "extended_insight": insights })).unwrap()
}

fn answer_reply(prompt: &str) -> String {
    let (context, question) = if prompt.contains("Short Answer:") {
        (
            between(prompt, "Context:\n", "\n\nQuestion:"),
            between(prompt, "Question: ", "\n\nShort Answer:"),
        )
    } else {
        (
            between(prompt, "inform your answer:\n\n", "\n\nNow, please consider"),
            between(prompt, "following question:\n\n", "\n\nInstructions:"),
        )
    };
    let mut question_words = content_words(question);
    question_words.sort();
    question_words.dedup();
    let lines: Vec<(&str, Vec<String>)> = context
        .lines()
        .map(|line| {
            (
                line.split_once("]: ").map(|(_, c)| c).unwrap_or(line),
                content_words(line),
            )
        })
        .collect();
    // Words present in many lines (speaker names, the topic) carry little signal.
    let weight = |w: &String| {
        let df = lines.iter().filter(|(_, words)| words.contains(w)).count();
        (1.0 + lines.len() as f64 / df.max(1) as f64).ln()
    };
    let mut best: Option<(f64, &str)> = None;
    for (content, words) in &lines {
        let score: f64 = question_words.iter().filter(|w| words.contains(w)).map(weight).sum();
        if score > 0.0 && best.is_none_or(|(b, _)| score > b) {
            best = Some((score, content));
        }
    }
    match best {
        Some((_, content)) => content.to_string(),
        None => "Not mentioned in the conversation".to_string(),
    }
}

fn judge_reply(prompt: &str) -> String {
    let gold = between(prompt, "<gold_answer>\n", "\n</gold_answer>");
    let predicted = between(prompt, "<predicted_answer>\n", "\n</predicted_answer>");
    let score = (rouge1(predicted, gold).f1 * 100.0).round() as u32;
    score.to_string()
}
