//! Answer extraction, canonical normalization, binary grading, and the
//! plan answer-leak check.
//!
//! Numeric answers are compared as exact rationals (integers, `a/b`,
//! `\frac{a}{b}`, finite decimals, with signs), so `0.5`, `1/2`, `2/4` and
//! `\frac{1}{2}` all grade as equal. Everything else falls back to canonical
//! text: case-folded with runs of whitespace collapsed to single spaces.
//! There is deliberately no symbolic algebra, scientific notation, or
//! approximate matching; a non-terminating decimal never equals the exact
//! fraction it truncates.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::model::{AnticipatoryPlan, ExtractionMode, Problem, Solution, TaskKind};

/// Marker that designates a boxed final answer inside solution text.
const BOXED_MARKER: &str = "\\boxed{";
/// Marker that designates a final-answer line, matched case-insensitively.
const FINAL_ANSWER_MARKER: &str = "final answer:";
/// Leak patterns shorter than this many characters are ignored: one-character
/// answers ("4", "x") appear in almost any plan by accident.
const MIN_LEAK_PATTERN_CHARS: usize = 2;

/// An answer reduced to comparable form: a canonical text rendering plus the
/// exact rational value when the answer parses as a simple numeric form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAnswer {
    /// For numeric answers, the reduced fraction rendering (`"3"`, `"-1/2"`);
    /// otherwise the case-folded, whitespace-collapsed text.
    pub canonical_text: String,
    pub rational: Option<BigRational>,
}

impl NormalizedAnswer {
    /// Grading equivalence: exact rational equality when both sides are
    /// numeric, canonical-text equality otherwise.
    pub fn equivalent(&self, other: &NormalizedAnswer) -> bool {
        match (&self.rational, &other.rational) {
            (Some(a), Some(b)) => a == b,
            _ => self.canonical_text == other.canonical_text,
        }
    }
}

/// Result of grading one solution against one problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOutcome {
    /// Binary correctness: 1 = correct, 0 = incorrect.
    pub score: u8,
    /// Set when the solution never stated an answer (extraction came up
    /// empty). Such solutions are wrong, not errors.
    pub missing_extracted_answer: bool,
}

impl ScoreOutcome {
    fn correct() -> Self {
        ScoreOutcome {
            score: 1,
            missing_extracted_answer: false,
        }
    }

    fn incorrect() -> Self {
        ScoreOutcome {
            score: 0,
            missing_extracted_answer: false,
        }
    }

    fn missing() -> Self {
        ScoreOutcome {
            score: 0,
            missing_extracted_answer: true,
        }
    }
}

/// Locates the final answer inside solution text.
///
/// The convention, in order: the last `\boxed{...}` occurrence; else the text
/// after the last case-insensitive `Final Answer:` marker; else (lenient mode
/// only) the last non-empty line. Returns `None` when nothing matches or the
/// designated substring is empty. Choice and boolean tasks additionally shed
/// one trailing period, so "Final Answer: (B)." yields "(B)".
pub fn extract_final_answer(
    text: &str,
    task_kind: TaskKind,
    mode: ExtractionMode,
) -> Option<String> {
    let raw = extract_raw(text, mode)?;
    let raw = raw.trim();
    let cleaned = match task_kind {
        TaskKind::MultipleChoice | TaskKind::Boolean => raw.strip_suffix('.').unwrap_or(raw),
        TaskKind::FreeFormMath => raw,
    }
    .trim();
    if cleaned.is_empty() {
        None
    } else {
        Some(cleaned.to_string())
    }
}

fn extract_raw(text: &str, mode: ExtractionMode) -> Option<String> {
    if let Some(inner) = last_boxed_content(text) {
        return Some(inner);
    }
    if let Some(line) = text
        .lines()
        .rev()
        .find(|line| line.to_lowercase().contains(FINAL_ANSWER_MARKER))
    {
        let lower = line.to_lowercase();
        let start = lower.rfind(FINAL_ANSWER_MARKER)? + FINAL_ANSWER_MARKER.len();
        let answer = line[start..].trim();
        // A bare marker with nothing after it states no answer; the marker
        // line itself must not fall through to the last-line rule.
        return if answer.is_empty() {
            None
        } else {
            Some(answer.to_string())
        };
    }
    match mode {
        ExtractionMode::Lenient => text
            .lines()
            .rev()
            .map(str::trim)
            .find(|line| !line.is_empty())
            .map(str::to_string),
        ExtractionMode::Strict => None,
    }
}

/// Contents of the last balanced `\boxed{...}` in the text, if any.
fn last_boxed_content(text: &str) -> Option<String> {
    let start = text.rfind(BOXED_MARKER)?;
    let inner_start = start + BOXED_MARKER.len();
    let mut depth = 1usize;
    for (offset, ch) in text[inner_start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[inner_start..inner_start + offset].to_string());
                }
            }
            _ => {}
        }
    }
    // Unbalanced braces: treat the marker as absent rather than guessing.
    None
}

/// Reduces an answer string to canonical comparable form.
///
/// Strips surrounding math-mode wrappers (`$...$`, `\(...\)`, `\[...\]`,
/// `\boxed{...}`), maps the Unicode minus sign to `-`, and parses integers,
/// `a/b`, `\frac{a}{b}` (also `\dfrac`/`\tfrac`), and finite decimals into
/// exact rationals. Non-numeric answers canonicalize to case-folded text with
/// whitespace runs collapsed. The function is idempotent: normalizing a
/// canonical rendering reproduces it.
pub fn normalize_math(answer: &str) -> NormalizedAnswer {
    let mut text = answer.replace('\u{2212}', "-").trim().to_string();
    loop {
        let stripped = strip_one_wrapper(&text);
        if stripped == text {
            break;
        }
        text = stripped;
    }
    if let Some(rational) = parse_rational(&text) {
        NormalizedAnswer {
            canonical_text: render_rational(&rational),
            rational: Some(rational),
        }
    } else {
        NormalizedAnswer {
            canonical_text: canonical_text(&text),
            rational: None,
        }
    }
}

/// Case-fold and collapse whitespace runs to single spaces.
fn canonical_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn strip_one_wrapper(text: &str) -> String {
    let t = text.trim();
    for (open, close) in [("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")] {
        if t.len() > open.len() + close.len() && t.starts_with(open) && t.ends_with(close) {
            let inner = &t[open.len()..t.len() - close.len()];
            // Only unwrap when the delimiters pair with each other:
            // "$a$ + $b$" is two math spans, not one wrapped answer.
            if !inner.contains('$') {
                return inner.trim().to_string();
            }
        }
    }
    if t.starts_with(BOXED_MARKER) && t.ends_with('}') {
        if let Some(inner) = last_boxed_content(t) {
            // Only unwrap when the box spans the whole string.
            if format!("{BOXED_MARKER}{inner}}}") == t {
                return inner.trim().to_string();
            }
        }
    }
    t.to_string()
}

fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let (sign, rest) = match t.strip_prefix('-') {
        Some(rest) => (-1, rest.trim_start()),
        None => (1, t.strip_prefix('+').unwrap_or(t).trim_start()),
    };
    let value = parse_frac_macro(rest)
        .or_else(|| parse_slash_fraction(rest))
        .or_else(|| parse_decimal(rest))?;
    Some(if sign < 0 { -value } else { value })
}

/// `\frac{a}{b}`, `\dfrac{a}{b}`, `\tfrac{a}{b}` with integer parts.
fn parse_frac_macro(text: &str) -> Option<BigRational> {
    let rest = ["\\frac", "\\dfrac", "\\tfrac"]
        .iter()
        .find_map(|m| text.strip_prefix(m))?;
    let rest = rest.trim_start();
    let (numer, rest) = parse_braced_int(rest)?;
    let (denom, rest) = parse_braced_int(rest.trim_start())?;
    if !rest.trim().is_empty() || denom.is_zero() {
        return None;
    }
    Some(BigRational::new(numer, denom))
}

fn parse_braced_int(text: &str) -> Option<(BigInt, &str)> {
    let rest = text.strip_prefix('{')?;
    let end = rest.find('}')?;
    let value: BigInt = rest[..end].trim().parse().ok()?;
    Some((value, &rest[end + 1..]))
}

/// `a/b` with integer parts and optional spaces around the slash.
fn parse_slash_fraction(text: &str) -> Option<BigRational> {
    let (numer, denom) = text.split_once('/')?;
    let numer: BigInt = strip_digit_commas(numer.trim())?.parse().ok()?;
    let denom: BigInt = strip_digit_commas(denom.trim())?.parse().ok()?;
    if denom.is_zero() {
        return None;
    }
    Some(BigRational::new(numer, denom))
}

/// Unsigned integer or finite decimal: `42`, `42.`, `.25`, `1,000`, `3.50`.
fn parse_decimal(text: &str) -> Option<BigRational> {
    let cleaned = strip_digit_commas(text)?;
    let (int_part, frac_part) = match cleaned.split_once('.') {
        Some((i, f)) => (i, f),
        None => (cleaned.as_str(), ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() {
        return None;
    } else {
        digits.parse().ok()?
    };
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(BigRational::new(numer, denom))
}

/// Drops thousands-separator commas, but only from strings that otherwise
/// look numeric, so text answers keep their punctuation.
fn strip_digit_commas(text: &str) -> Option<String> {
    if text.is_empty() || !text.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') {
        return None;
    }
    Some(text.replace(',', ""))
}

fn render_rational(value: &BigRational) -> String {
    if value.is_integer() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

/// Grades a solution against a problem's gold answer: 1 for a match under the
/// task's comparison rule, else 0. A solution without an extracted answer
/// scores 0 with the diagnostic flag set. A problem without a gold answer is
/// an error: grading it would be meaningless, not merely wrong.
pub fn f_cor(problem: &Problem, solution: &Solution) -> Result<ScoreOutcome> {
    let gold = problem
        .gold_answer
        .as_deref()
        .ok_or_else(|| Error::MissingGoldAnswer {
            problem_id: problem.id.clone(),
        })?;
    let Some(extracted) = solution.extracted_answer.as_deref() else {
        return Ok(ScoreOutcome::missing());
    };
    let correct = match problem.task_kind {
        TaskKind::FreeFormMath => normalize_math(extracted).equivalent(&normalize_math(gold)),
        TaskKind::MultipleChoice => {
            match (
                identify_choice(gold, &problem.choices),
                identify_choice(extracted, &problem.choices),
            ) {
                (Some(g), Some(e)) => g == e,
                (None, _) => {
                    log::warn!(
                        "gold answer '{gold}' of problem '{}' identifies no choice; scoring 0",
                        problem.id
                    );
                    false
                }
                _ => false,
            }
        }
        TaskKind::Boolean => match (normalize_boolean(gold), normalize_boolean(extracted)) {
            (Some(g), Some(e)) => g == e,
            _ => false,
        },
    };
    Ok(if correct {
        ScoreOutcome::correct()
    } else {
        ScoreOutcome::incorrect()
    })
}

/// Extracts and grades in one step; used when re-scoring stored solution text.
pub fn score_solution_text(
    problem: &Problem,
    text: &str,
    mode: ExtractionMode,
) -> Result<ScoreOutcome> {
    let solution = Solution {
        text: text.to_string(),
        extracted_answer: extract_final_answer(text, problem.task_kind, mode),
        token_count: 0,
    };
    f_cor(problem, &solution)
}

/// Resolves an answer string to a choice index.
///
/// Accepted forms, tried in order: a single letter (`B`, `(b)`, `B)`,
/// `B.` — `A` is the first choice), a bare integer taken as a 0-based index,
/// or text equal (canonically) to exactly one choice. Returns `None` when
/// nothing matches or a text match is ambiguous.
pub fn identify_choice(answer: &str, choices: &[String]) -> Option<usize> {
    let mut t = answer.trim();
    for (open, close) in [("(", ")"), ("[", "]")] {
        if t.len() > 1 && t.starts_with(open) && t.ends_with(close) {
            t = t[open.len()..t.len() - close.len()].trim();
        }
    }
    t = t.trim_end_matches(['.', ')', ':']).trim();
    if t.is_empty() {
        return None;
    }

    let mut chars = t.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_ascii_alphabetic() {
            let idx = (c.to_ascii_uppercase() as u8 - b'A') as usize;
            return (idx < choices.len()).then_some(idx);
        }
    }
    if t.chars().all(|c| c.is_ascii_digit()) {
        let idx: usize = t.parse().ok()?;
        return (idx < choices.len()).then_some(idx);
    }
    let canon = canonical_text(t);
    let mut matches = choices
        .iter()
        .enumerate()
        .filter(|(_, choice)| canonical_text(choice) == canon);
    match (matches.next(), matches.next()) {
        (Some((idx, _)), None) => Some(idx),
        _ => None,
    }
}

/// Canonicalizes a yes/no answer. Accepts `yes`/`no`/`true`/`false` in any
/// case, with one trailing period tolerated.
pub fn normalize_boolean(answer: &str) -> Option<bool> {
    let t = answer.trim().trim_end_matches('.').trim().to_lowercase();
    match t.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// True when the plan gives away the gold answer.
///
/// The check is substring-after-normalization: the gold answer's canonical
/// rendering (and its collapsed raw form, when different) must not appear in
/// the case-folded, whitespace-collapsed plan text. Patterns shorter than two
/// characters are ignored — single characters match almost anything.
pub fn answer_leak_check(plan: &AnticipatoryPlan, problem: &Problem) -> bool {
    let Some(gold) = problem.gold_answer.as_deref() else {
        return false;
    };
    let plan_text = canonical_text(&plan.text);
    let mut patterns = vec![normalize_math(gold).canonical_text];
    let raw = canonical_text(gold);
    if !patterns.contains(&raw) {
        patterns.push(raw);
    }
    patterns
        .iter()
        .any(|p| p.chars().count() >= MIN_LEAK_PATTERN_CHARS && plan_text.contains(p.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_form(gold: &str) -> Problem {
        Problem {
            id: "p".into(),
            statement: "s".into(),
            gold_answer: Some(gold.into()),
            choices: vec![],
            task_kind: TaskKind::FreeFormMath,
        }
    }

    fn solution(text: &str, task: TaskKind) -> Solution {
        Solution {
            text: text.into(),
            extracted_answer: extract_final_answer(text, task, ExtractionMode::Lenient),
            token_count: 0,
        }
    }

    // ---------- extraction ----------
    //
    // The expected values below were frozen against an independent oracle
    // (a separate minimal extractor in `extraction_oracle`) before the
    // implementation above existed; `extraction_table_matches_oracle` keeps
    // the two in agreement.

    mod extraction_oracle {
        /// Deliberately independent re-statement of the extraction
        /// convention, structured differently from the implementation:
        /// byte-scanning instead of char_indices, explicit loops instead of
        /// iterator chains.
        pub fn extract(text: &str, strict: bool, shed_period: bool) -> Option<String> {
            let picked = pick(text, strict)?;
            let mut s = picked.trim().to_string();
            if shed_period && s.ends_with('.') {
                s.pop();
            }
            let s = s.trim().to_string();
            if s.is_empty() {
                None
            } else {
                Some(s)
            }
        }

        fn pick(text: &str, strict: bool) -> Option<String> {
            if let Some(pos) = text.rfind("\\boxed{") {
                let bytes = text.as_bytes();
                let mut depth = 0i32;
                let start = pos + "\\boxed{".len();
                let mut i = start;
                while i < bytes.len() {
                    if bytes[i] == b'{' {
                        depth += 1;
                    } else if bytes[i] == b'}' {
                        if depth == 0 {
                            return Some(text[start..i].to_string());
                        }
                        depth -= 1;
                    }
                    i += 1;
                }
                // Unbalanced: the box convention yields nothing; fall
                // through to the weaker conventions.
            }
            let mut marker_line: Option<&str> = None;
            for line in text.lines() {
                if line.to_lowercase().contains("final answer:") {
                    marker_line = Some(line);
                }
            }
            if let Some(line) = marker_line {
                let lower = line.to_lowercase();
                let idx = lower.rfind("final answer:").unwrap() + "final answer:".len();
                let rest = line[idx..].trim();
                return if rest.is_empty() {
                    None
                } else {
                    Some(rest.to_string())
                };
            }
            if strict {
                return None;
            }
            let mut last = None;
            for line in text.lines() {
                if !line.trim().is_empty() {
                    last = Some(line.trim().to_string());
                }
            }
            last
        }
    }

    /// (text, task, mode, frozen expected extraction)
    fn extraction_cases() -> Vec<(&'static str, TaskKind, ExtractionMode, Option<&'static str>)> {
        use ExtractionMode::{Lenient, Strict};
        use TaskKind::{Boolean, FreeFormMath as Free, MultipleChoice as Mc};
        vec![
            ("The answer is \\boxed{42}.", Free, Lenient, Some("42")),
            ("\\boxed{1} then \\boxed{2}", Free, Lenient, Some("2")),
            ("\\boxed{\\frac{1}{2}}", Free, Lenient, Some("\\frac{1}{2}")),
            ("Final Answer: 3/4\n", Free, Lenient, Some("3/4")),
            ("final answer: 7", Free, Lenient, Some("7")),
            ("Final Answer: 5\nFinal Answer: 6", Free, Lenient, Some("6")),
            ("Some text\nFinal Answer:", Free, Lenient, None),
            ("The result is 9", Free, Lenient, Some("The result is 9")),
            ("The result is 9", Free, Strict, None),
            ("", Free, Lenient, None),
            ("   \n  ", Free, Lenient, None),
            (
                "\\boxed{unbalanced",
                Free,
                Lenient,
                Some("\\boxed{unbalanced"),
            ),
            ("\\boxed{unbalanced", Free, Strict, None),
            ("line1\nline2  ", Free, Lenient, Some("line2")),
            ("Answer: \\boxed{x^2 + 1}", Free, Lenient, Some("x^2 + 1")),
            ("Final Answer: (B).", Mc, Lenient, Some("(B)")),
            ("Final Answer: (B).", Free, Lenient, Some("(B).")),
            ("Final answer: yes.", Boolean, Lenient, Some("yes")),
            ("\\boxed{3}\nFinal Answer: 4", Free, Lenient, Some("3")),
            ("Final Answer:    7   ", Free, Lenient, Some("7")),
            (
                "Final Answer: multi word answer",
                Free,
                Lenient,
                Some("multi word answer"),
            ),
        ]
    }

    #[test]
    fn extraction_table_matches_oracle() {
        for (text, task, mode, _) in extraction_cases() {
            let strict = mode == ExtractionMode::Strict;
            let shed = task != TaskKind::FreeFormMath;
            assert_eq!(
                extraction_oracle::extract(text, strict, shed).as_deref(),
                extract_final_answer(text, task, mode).as_deref(),
                "oracle disagreement on {text:?}"
            );
        }
    }

    #[test]
    fn extraction_matches_frozen_expectations() {
        for (text, task, mode, expected) in extraction_cases() {
            assert_eq!(
                extract_final_answer(text, task, mode).as_deref(),
                expected,
                "case {text:?} ({task:?}, {mode:?})"
            );
        }
    }

    // ---------- normalization ----------

    #[test]
    fn numeric_forms_share_one_canonical_rendering() {
        for (input, expected) in [
            ("0.5", "1/2"),
            ("2/4", "1/2"),
            ("\\frac{1}{2}", "1/2"),
            ("\\dfrac{2}{4}", "1/2"),
            ("-\\frac{1}{3}", "-1/3"),
            ("+42", "42"),
            ("42.", "42"),
            (".25", "1/4"),
            ("1,000", "1000"),
            ("-0", "0"),
            ("$\\frac{1}{2}$", "1/2"),
            ("\\boxed{6/4}", "3/2"),
            ("\u{2212}3", "-3"),
            ("7 / 2", "7/2"),
        ] {
            let n = normalize_math(input);
            assert_eq!(n.canonical_text, expected, "input {input:?}");
            assert!(n.rational.is_some(), "input {input:?} should parse");
        }
    }

    #[test]
    fn non_numeric_answers_canonicalize_as_text() {
        for (input, expected) in [
            ("  X + 1 ", "x + 1"),
            ("YES", "yes"),
            ("1e2", "1e2"),
            ("5/0", "5/0"),
            ("22/7 apples", "22/7 apples"),
        ] {
            let n = normalize_math(input);
            assert_eq!(n.canonical_text, expected, "input {input:?}");
            assert!(n.rational.is_none(), "input {input:?} must stay text");
        }
    }

    #[test]
    fn normalization_is_idempotent_on_the_basic_forms() {
        for input in [
            "0.5", "2/4", "-\\frac{1}{3}", "x + 1", "YES", "42.", "1,000", "",
        ] {
            let once = normalize_math(input);
            let twice = normalize_math(&once.canonical_text);
            assert_eq!(once.canonical_text, twice.canonical_text, "input {input:?}");
            assert_eq!(once.rational, twice.rational, "input {input:?}");
        }
    }

    // ---------- grading ----------

    #[test]
    fn f_cor_requires_a_gold_answer() {
        let mut p = free_form("4");
        p.gold_answer = None;
        let s = solution("Final Answer: 4", TaskKind::FreeFormMath);
        assert!(matches!(
            f_cor(&p, &s),
            Err(Error::MissingGoldAnswer { .. })
        ));
    }

    #[test]
    fn missing_extracted_answer_scores_zero_with_flag() {
        let p = free_form("4");
        let s = Solution {
            text: "".into(),
            extracted_answer: None,
            token_count: 0,
        };
        let outcome = f_cor(&p, &s).unwrap();
        assert_eq!(outcome.score, 0);
        assert!(outcome.missing_extracted_answer);
    }

    #[test]
    fn free_form_grading_uses_rational_equality() {
        let p = free_form("0.75");
        assert_eq!(
            f_cor(&p, &solution("Final Answer: 3/4", p.task_kind))
                .unwrap()
                .score,
            1
        );
        assert_eq!(
            f_cor(&p, &solution("Final Answer: 3/5", p.task_kind))
                .unwrap()
                .score,
            0
        );
    }

    #[test]
    fn multiple_choice_grading_accepts_letters_indices_and_text() {
        let p = Problem {
            id: "mc".into(),
            statement: "s".into(),
            gold_answer: Some("(B)".into()),
            choices: vec!["red".into(), "green".into(), "blue".into()],
            task_kind: TaskKind::MultipleChoice,
        };
        for correct in ["Final Answer: B", "Final Answer: 1", "Final Answer: Green"] {
            assert_eq!(
                f_cor(&p, &solution(correct, p.task_kind)).unwrap().score,
                1,
                "{correct}"
            );
        }
        for wrong in ["Final Answer: C", "Final Answer: 0", "Final Answer: cyan"] {
            assert_eq!(
                f_cor(&p, &solution(wrong, p.task_kind)).unwrap().score,
                0,
                "{wrong}"
            );
        }
    }

    #[test]
    fn boolean_grading_canonicalizes_yes_no_true_false() {
        let p = Problem {
            id: "b".into(),
            statement: "s".into(),
            gold_answer: Some("yes".into()),
            choices: vec![],
            task_kind: TaskKind::Boolean,
        };
        assert_eq!(
            f_cor(&p, &solution("Final Answer: TRUE", p.task_kind))
                .unwrap()
                .score,
            1
        );
        assert_eq!(
            f_cor(&p, &solution("Final Answer: no", p.task_kind))
                .unwrap()
                .score,
            0
        );
    }

    #[test]
    fn identify_choice_is_zero_based_for_bare_integers() {
        let choices: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert_eq!(identify_choice("0", &choices), Some(0));
        assert_eq!(identify_choice("2", &choices), Some(2));
        assert_eq!(identify_choice("3", &choices), None);
        assert_eq!(identify_choice("(b)", &choices), Some(1));
        assert_eq!(identify_choice("C.", &choices), Some(2));
    }

    #[test]
    fn ambiguous_text_matches_identify_nothing() {
        let choices: Vec<String> = vec!["same".into(), "same".into()];
        assert_eq!(identify_choice("same", &choices), None);
    }

    // ---------- leak check ----------

    fn plan(text: &str) -> AnticipatoryPlan {
        AnticipatoryPlan { text: text.into() }
    }

    #[test]
    fn leaking_the_canonical_gold_rendering_is_flagged() {
        let p = free_form("3/4");
        assert!(answer_leak_check(
            &plan("First compute; the answer will be 3/4; verify it."),
            &p
        ));
        assert!(!answer_leak_check(
            &plan("Recall the ratio identities, then verify the result."),
            &p
        ));
    }

    #[test]
    fn raw_gold_form_also_counts_as_a_leak() {
        // Canonical form of "0.75" is "3/4"; a plan quoting "0.75" verbatim
        // still gives the answer away.
        let p = free_form("0.75");
        assert!(answer_leak_check(&plan("the value 0.75 will appear"), &p));
    }

    #[test]
    fn short_and_absent_golds_never_leak() {
        let single = free_form("4");
        assert!(!answer_leak_check(&plan("step 4: add the numbers"), &single));
        let mut unlabeled = free_form("whatever");
        unlabeled.gold_answer = None;
        assert!(!answer_leak_check(&plan("anything at all"), &unlabeled));
    }

    #[test]
    fn leak_comparison_is_case_and_whitespace_insensitive() {
        let p = free_form("x=2");
        assert!(answer_leak_check(&plan("note that X=2 here"), &p));
    }
}
