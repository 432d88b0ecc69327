//! Four-pattern temporal references attached to every memory fragment.
//!
//! A fragment's time is one of: a concrete date, "before" a date (an unclear
//! past event), "after" a date (a plan or intention), or an inclusive date
//! range. The surface forms are the ones the extraction and reasoning prompts
//! ask the model to emit:
//!
//! | variant  | rendering                  |
//! |----------|----------------------------|
//! | on date  | `2024-05-17`               |
//! | before   | `Before 2024-05-17`        |
//! | after    | `After 2024-05-17`         |
//! | range    | `2023-03-05 to 2023-03-22` |

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, Months, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// A point or interval in calendar time, at day resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalRef {
    OnDate(NaiveDate),
    Before(NaiveDate),
    After(NaiveDate),
    /// Inclusive range; constructors keep `start <= end`.
    Range(NaiveDate, NaiveDate),
}

impl TemporalRef {
    /// Builds a range, swapping the endpoints if they arrive reversed.
    pub fn range(a: NaiveDate, b: NaiveDate) -> Self {
        if a <= b {
            TemporalRef::Range(a, b)
        } else {
            TemporalRef::Range(b, a)
        }
    }

    /// The date used for chronological ordering.
    pub fn anchor(&self) -> NaiveDate {
        match *self {
            TemporalRef::OnDate(d) | TemporalRef::Before(d) | TemporalRef::After(d) => d,
            TemporalRef::Range(start, _) => start,
        }
    }

    // before < on_date < range < after at equal anchors
    fn variant_rank(&self) -> u8 {
        match self {
            TemporalRef::Before(_) => 0,
            TemporalRef::OnDate(_) => 1,
            TemporalRef::Range(..) => 2,
            TemporalRef::After(_) => 3,
        }
    }

    fn tail(&self) -> NaiveDate {
        match *self {
            TemporalRef::Range(_, end) => end,
            other => other.anchor(),
        }
    }
}

impl Ord for TemporalRef {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_temporal(self, other)
    }
}

impl PartialOrd for TemporalRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order over temporal references.
///
/// Anchor dates compare first. At equal anchors the variant decides, with
/// `before < on_date < range < after`; two ranges sharing a start compare by
/// their end date. Callers break any remaining tie by fragment id.
pub fn compare_temporal(a: &TemporalRef, b: &TemporalRef) -> Ordering {
    a.anchor()
        .cmp(&b.anchor())
        .then_with(|| a.variant_rank().cmp(&b.variant_rank()))
        .then_with(|| a.tail().cmp(&b.tail()))
}

impl fmt::Display for TemporalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemporalRef::OnDate(d) => write!(f, "{}", d.format(DATE_FORMAT)),
            TemporalRef::Before(d) => write!(f, "Before {}", d.format(DATE_FORMAT)),
            TemporalRef::After(d) => write!(f, "After {}", d.format(DATE_FORMAT)),
            TemporalRef::Range(s, e) => {
                write!(f, "{} to {}", s.format(DATE_FORMAT), e.format(DATE_FORMAT))
            }
        }
    }
}

/// Error from [`TemporalRef::from_str`]; the lenient entry point is
/// [`parse_temporal`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized temporal expression: {0:?}")]
pub struct TemporalParseError(pub String);

impl FromStr for TemporalRef {
    type Err = TemporalParseError;

    /// Strict parse of the four canonical surface forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        let err = || TemporalParseError(s.to_string());
        if let Some(rest) = strip_prefix_ci(text, "before ") {
            return parse_date(rest).map(TemporalRef::Before).ok_or_else(err);
        }
        if let Some(rest) = strip_prefix_ci(text, "after ") {
            return parse_date(rest).map(TemporalRef::After).ok_or_else(err);
        }
        if let Some((start, end)) = split_range(text) {
            return match (parse_date(start), parse_date(end)) {
                (Some(a), Some(b)) => Ok(TemporalRef::range(a, b)),
                _ => Err(err()),
            };
        }
        parse_date(text).map(TemporalRef::OnDate).ok_or_else(err)
    }
}

impl Serialize for TemporalRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TemporalRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Result of the lenient parse: the value plus a warning when the fallback
/// was used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTemporal {
    pub value: TemporalRef,
    pub warning: Option<String>,
}

/// Lenient parse used on model output. Never fails.
///
/// Accepts the four canonical forms (case-insensitive keywords), then a
/// supported relative expression resolved against `fallback`, and otherwise
/// degrades to `on_date(fallback)` with a warning.
pub fn parse_temporal(text: &str, fallback: NaiveDate) -> ParsedTemporal {
    if let Ok(value) = text.parse::<TemporalRef>() {
        return ParsedTemporal { value, warning: None };
    }
    if let Ok(date) = resolve_relative_date(text, fallback) {
        return ParsedTemporal {
            value: TemporalRef::OnDate(date),
            warning: None,
        };
    }
    ParsedTemporal {
        value: TemporalRef::OnDate(fallback),
        warning: Some(format!(
            "unparseable date {:?}; using message date {}",
            text,
            fallback.format(DATE_FORMAT)
        )),
    }
}

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| text[prefix.len()..].trim())
}

fn split_range(text: &str) -> Option<(&str, &str)> {
    let lower = text.to_ascii_lowercase();
    let idx = lower.find(" to ")?;
    Some((text[..idx].trim(), text[idx + 4..].trim()))
}

fn parse_date(text: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(text.trim(), DATE_FORMAT).ok()
}

/// Renders a date as `YYYY-MM-DD`.
pub fn render_date(date: NaiveDate) -> String {
    date.format(DATE_FORMAT).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("relative date expression not resolvable: {0:?}")]
pub struct NotResolvable(pub String);

/// Resolves a relative day expression against the date it was said on.
///
/// Supported: `today`, `yesterday`, `tomorrow`, `N days ago`, `in N days`,
/// `N weeks ago`, `last week`, `last month`. `N` may be digits, a number
/// word up to thirty, or `a`/`an`. `last month` keeps the day of month and
/// clamps to the end of the shorter month.
pub fn resolve_relative_date(expression: &str, message_date: NaiveDate) -> Result<NaiveDate, NotResolvable> {
    let normalized = expression.trim().trim_end_matches(['.', '!', ',']).to_ascii_lowercase();
    let words: Vec<&str> = normalized.split_whitespace().collect();
    let fail = || NotResolvable(expression.to_string());

    let offset_days: i64 = match words.as_slice() {
        ["today"] => 0,
        ["yesterday"] => -1,
        ["tomorrow"] => 1,
        ["last", "week"] => -7,
        ["last", "month"] => return message_date.checked_sub_months(Months::new(1)).ok_or_else(fail),
        [n, unit, "ago"] if is_day_unit(unit) => -count(n).ok_or_else(fail)?,
        [n, unit, "ago"] if is_week_unit(unit) => -7 * count(n).ok_or_else(fail)?,
        ["in", n, unit] if is_day_unit(unit) => count(n).ok_or_else(fail)?,
        ["in", n, unit] if is_week_unit(unit) => 7 * count(n).ok_or_else(fail)?,
        _ => return Err(fail()),
    };
    message_date
        .checked_add_signed(Duration::days(offset_days))
        .ok_or_else(fail)
}

fn is_day_unit(unit: &str) -> bool {
    matches!(unit, "day" | "days")
}

fn is_week_unit(unit: &str) -> bool {
    matches!(unit, "week" | "weeks")
}

fn count(word: &str) -> Option<i64> {
    if let Ok(n) = word.parse::<i64>() {
        return (n >= 0).then_some(n);
    }
    const WORDS: [&str; 31] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
        "twenty",
        "twenty-one",
        "twenty-two",
        "twenty-three",
        "twenty-four",
        "twenty-five",
        "twenty-six",
        "twenty-seven",
        "twenty-eight",
        "twenty-nine",
        "thirty",
    ];
    match word {
        "a" | "an" => Some(1),
        _ => WORDS.iter().position(|w| *w == word).map(|n| n as i64),
    }
}
