//! Surface syntax for probabilistic queries and translation of natural
//! language questions into it.
//!
//! ```text
//! query    := "P" "(" assign [ "|" assign { "," assign } ] ")"
//! assign   := node "=" label
//! node     := bare | quoted
//! label    := bare | quoted | "#" digits
//! quoted   := '"' { char | '\"' | '\\' } '"'
//! ```
//!
//! Bare nodes stop at `= | , ( ) "`; bare labels stop at `| , )`. Both are
//! trimmed, so whitespace between tokens never matters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_number, Codebook, ColumnCodebook};
use crate::inference::ProbQuery;
use crate::llm::{CompletionParams, LanguageModelClient, LlmError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Issue {
    UnknownNode { name: String, pos: usize },
    UnresolvableState { node: String, label: String, pos: usize },
    DuplicateNode { node: String, pos: usize },
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Issue::UnknownNode { name, pos } => write!(f, "unknown node {name:?} at {pos}"),
            Issue::UnresolvableState { node, label, pos } => {
                write!(f, "no state of {node} matches {label:?} at {pos}")
            }
            Issue::DuplicateNode { node, pos } => write!(f, "node {node} appears more than once (at {pos})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Resolution(Vec<Issue>),
}

#[derive(Clone, Debug, PartialEq)]
enum Label {
    Bare(String),
    Quoted(String),
    Id(usize),
}

struct Assign {
    node: String,
    node_pos: usize,
    label: Label,
    label_pos: usize,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn expect(&mut self, c: char) -> Result<(), QueryError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            match self.peek() {
                Some(found) => self.err(format!("expected '{c}', found '{found}'")),
                None => self.err(format!("expected '{c}', found end of input")),
            }
        }
    }

    fn quoted(&mut self) -> Result<String, QueryError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e @ ('"' | '\\'))) => out.push(e),
                    _ => {
                        self.pos += i;
                        return self.err("invalid escape in quoted string");
                    }
                },
                c => out.push(c),
            }
        }
        self.pos = start;
        self.err("unterminated quoted string")
    }

    fn bare(&mut self, stops: &[char], what: &str) -> Result<String, QueryError> {
        let len = self.rest().find(|c| stops.contains(&c)).unwrap_or(self.rest().len());
        let text = self.rest()[..len].trim();
        if text.is_empty() {
            return self.err(format!("expected {what}"));
        }
        self.pos += len;
        Ok(text.to_string())
    }

    fn assign(&mut self) -> Result<Assign, QueryError> {
        self.skip_ws();
        let node_pos = self.pos;
        let node = if self.peek() == Some('"') {
            self.quoted()?
        } else {
            self.bare(&['=', '|', ',', '(', ')', '"'], "node name")?
        };
        self.expect('=')?;
        self.skip_ws();
        let label_pos = self.pos;
        let label = match self.peek() {
            Some('"') => Label::Quoted(self.quoted()?),
            Some('#') => {
                self.pos += 1;
                let digits = self.rest().len() - self.rest().trim_start_matches(|c: char| c.is_ascii_digit()).len();
                let id = self.rest()[..digits].parse().or_else(|_| self.err("expected state id after '#'"))?;
                self.pos += digits;
                Label::Id(id)
            }
            _ => Label::Bare(self.bare(&['|', ',', ')'], "state label")?),
        };
        Ok(Assign {
            node,
            node_pos,
            label,
            label_pos,
        })
    }

    /// Parses one query starting at the current position; returns the
    /// assignments (target first) and leaves `pos` just past the `)`.
    fn query(&mut self) -> Result<Vec<Assign>, QueryError> {
        self.skip_ws();
        match self.peek() {
            Some('P' | 'p') => self.pos += 1,
            _ => return self.err("query must start with P("),
        }
        self.expect('(')?;
        let mut out = vec![self.assign()?];
        self.skip_ws();
        if self.peek() == Some('|') {
            self.pos += 1;
            out.push(self.assign()?);
            loop {
                self.skip_ws();
                if self.peek() != Some(',') {
                    break;
                }
                self.pos += 1;
                out.push(self.assign()?);
            }
        }
        self.expect(')')?;
        Ok(out)
    }
}

fn resolve_label(column: &ColumnCodebook, label: &Label) -> Option<usize> {
    let values = |text: &str| {
        column
            .states
            .iter()
            .find(|s| s.values.as_ref().is_some_and(|v| v.iter().any(|x| x == text)))
            .map(|s| s.id)
    };
    match label {
        Label::Id(id) => (*id < column.cardinality()).then_some(*id),
        Label::Quoted(text) => column
            .states
            .iter()
            .find(|s| s.label == *text)
            .map(|s| s.id)
            .or_else(|| values(text)),
        Label::Bare(text) => {
            let exact = column.states.iter().find(|s| s.label == *text).map(|s| s.id);
            let folded = || {
                let mut hits = column.states.iter().filter(|s| s.label.to_lowercase() == text.to_lowercase());
                match (hits.next(), hits.next()) {
                    (Some(s), None) => Some(s.id),
                    _ => None,
                }
            };
            let phrase = || {
                column
                    .states
                    .iter()
                    .find(|s| s.phrase.eq_ignore_ascii_case(text))
                    .map(|s| s.id)
            };
            exact
                .or_else(folded)
                .or_else(|| parse_number(text).and_then(|x| column.resolve_number(x)))
                .or_else(|| values(text))
                .or_else(phrase)
        }
    }
}

fn resolve(assigns: Vec<Assign>, codebook: &Codebook) -> Result<ProbQuery, QueryError> {
    let mut issues = Vec::new();
    let mut seen = BTreeMap::new();
    let mut resolved = Vec::new();
    for a in assigns {
        let Some(node) = codebook.find_column(&a.node) else {
            issues.push(Issue::UnknownNode {
                name: a.node,
                pos: a.node_pos,
            });
            continue;
        };
        if seen.insert(node.to_string(), a.node_pos).is_some() {
            issues.push(Issue::DuplicateNode {
                node: node.to_string(),
                pos: a.node_pos,
            });
        }
        let column = codebook.column(node).expect("found above");
        match resolve_label(column, &a.label) {
            Some(state) => resolved.push((node.to_string(), state)),
            None => issues.push(Issue::UnresolvableState {
                node: node.to_string(),
                label: match a.label {
                    Label::Bare(s) | Label::Quoted(s) => s,
                    Label::Id(id) => format!("#{id}"),
                },
                pos: a.label_pos,
            }),
        }
    }
    if !issues.is_empty() {
        return Err(QueryError::Resolution(issues));
    }
    let mut it = resolved.into_iter();
    let (target, state) = it.next().expect("grammar requires a target");
    Ok(it.fold(ProbQuery::new(target, state), |q, (n, s)| q.given(n, s)))
}

/// Parses and resolves a query against the codebook, reporting every
/// unresolvable token at once.
pub fn parse_query(text: &str, codebook: &Codebook) -> Result<ProbQuery, QueryError> {
    let mut p = Parser { src: text, pos: 0 };
    let assigns = p.query()?;
    p.skip_ws();
    if p.pos < text.len() {
        return p.err("unexpected text after query");
    }
    resolve(assigns, codebook)
}

/// Parses the first query embedded in free text, e.g. a model reply.
pub fn extract_query(reply: &str, codebook: &Codebook) -> Result<ProbQuery, QueryError> {
    let start = reply.find("P(").ok_or(QueryError::Syntax {
        pos: 0,
        message: "reply contains no query starting with P(".into(),
    })?;
    let mut p = Parser { src: reply, pos: start };
    let assigns = p.query()?;
    resolve(assigns, codebook)
}

fn bare_node_ok(s: &str) -> bool {
    !s.is_empty() && s.trim() == s && !s.contains(['=', '|', ',', '(', ')', '"'])
}

fn bare_label_ok(s: &str) -> bool {
    !s.is_empty() && s.trim() == s && !s.starts_with(['"', '#']) && !s.contains(['|', ',', ')'])
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn render_assign(codebook: &Codebook, node: &str, state: usize) -> String {
    let node_text = if bare_node_ok(node) && codebook.find_column(node) == Some(node) {
        node.to_string()
    } else {
        quote(node)
    };
    let label_text = match codebook.column(node) {
        Some(column) if state < column.cardinality() => {
            let label = &column.states[state].label;
            if bare_label_ok(label) && resolve_label(column, &Label::Bare(label.clone())) == Some(state) {
                label.clone()
            } else if resolve_label(column, &Label::Quoted(label.clone())) == Some(state) {
                quote(label)
            } else {
                format!("#{state}")
            }
        }
        _ => format!("#{state}"),
    };
    format!("{node_text}={label_text}")
}

/// Canonical text: evidence sorted by node name, labels quoted or replaced by
/// `#id` only when needed for the text to parse back to the same query.
pub fn render_query(q: &ProbQuery, codebook: &Codebook) -> String {
    let target = render_assign(codebook, &q.target, q.target_state);
    if q.evidence.is_empty() {
        return format!("P({target})");
    }
    let evidence: Vec<String> = q.evidence.iter().map(|(n, &s)| render_assign(codebook, n, s)).collect();
    format!("P({target} | {})", evidence.join(", "))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantType {
    Exact,
    Shifted,
    Certain,
    Natural,
}

impl VariantType {
    pub const ALL: [VariantType; 4] = [Self::Exact, Self::Shifted, Self::Certain, Self::Natural];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Shifted => "shifted",
            Self::Certain => "certain",
            Self::Natural => "natural",
        }
    }
}

impl std::str::FromStr for VariantType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown question variant {s:?} (exact, shifted, certain, natural)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlQuestion {
    pub text: String,
    pub table: String,
    pub question_type: VariantType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

/// Both attempts produced replies that did not parse.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("translation failed after {} attempt(s): {last_error}", replies.len())]
pub struct TranslationFailure {
    pub replies: Vec<String>,
    pub last_error: String,
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error(transparent)]
    Failed(#[from] TranslationFailure),
    #[error(transparent)]
    Transport(#[from] LlmError),
}

/// Node and state vocabulary shown to the model.
pub fn schema_summary(codebook: &Codebook) -> String {
    let mut out = String::new();
    for (name, column) in &codebook.columns {
        let states: Vec<String> = column
            .states
            .iter()
            .map(|s| {
                if s.phrase == s.label {
                    s.label.clone()
                } else {
                    format!("{} ({})", s.label, s.phrase)
                }
            })
            .collect();
        out.push_str(&format!("- {name}: {}\n", states.join("; ")));
    }
    out
}

pub fn translation_prompt(question: &NlQuestion, codebook: &Codebook) -> String {
    format!(
        "Translate the question into a probabilistic query over table {table}.\n\
         Variables and their states, as label (description):\n{schema}\
         Answer with exactly one query of the form P(target=state | node=state, ...), \
         using the variable names and state labels above. Quote labels containing commas, bars or parentheses.\n\
         Question: {text}\n",
        table = question.table,
        schema = schema_summary(codebook),
        text = question.text,
    )
}

pub const TRANSLATION_ATTEMPTS: usize = 2;

/// Asks the model for a query, retrying once with the parser's complaint.
pub fn translate_question(
    question: &NlQuestion,
    codebook: &Codebook,
    llm: &dyn LanguageModelClient,
) -> Result<ProbQuery, TranslateError> {
    let params = CompletionParams::default();
    let base = translation_prompt(question, codebook);
    let mut prompt = base.clone();
    let mut replies = Vec::new();
    loop {
        let reply = llm.complete(&prompt, &params)?;
        let outcome = extract_query(&reply, codebook);
        replies.push(reply);
        match outcome {
            Ok(q) => return Ok(q),
            Err(e) if replies.len() >= TRANSLATION_ATTEMPTS => {
                return Err(TranslationFailure {
                    replies,
                    last_error: e.to_string(),
                }
                .into())
            }
            Err(e) => {
                prompt = format!(
                    "{base}Your previous answer was:\n{}\nIt could not be used: {e}\nReply with a corrected query.\n",
                    replies.last().expect("just pushed")
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{StateDef, StateKind};
    use crate::llm::ScriptedMock;

    fn cat(values: &[&str]) -> ColumnCodebook {
        ColumnCodebook {
            kind: StateKind::Categorical,
            states: values
                .iter()
                .enumerate()
                .map(|(id, v)| StateDef {
                    id,
                    label: v.to_string(),
                    phrase: v.to_string(),
                    lower: None,
                    upper: None,
                    values: Some(vec![v.to_string()]),
                    role: None,
                })
                .collect(),
        }
    }

    fn num(bounds: &[f64]) -> ColumnCodebook {
        ColumnCodebook {
            kind: StateKind::Numeric,
            states: bounds
                .windows(2)
                .enumerate()
                .map(|(id, w)| StateDef {
                    id,
                    label: format!("between {} and {}", w[0], w[1]),
                    phrase: ["low", "medium", "high"][id].to_string(),
                    lower: Some(w[0]),
                    upper: Some(w[1]),
                    values: None,
                    role: None,
                })
                .collect(),
        }
    }

    fn codebook() -> Codebook {
        let mut cb = Codebook::default();
        cb.columns.insert("delay".into(), cat(&["low", "high"]));
        cb.columns.insert("region".into(), cat(&["west", "east", "a, b", "#1"]));
        cb.columns.insert("month".into(), cat(&["jun", "jul"]));
        cb.columns.insert("price".into(), num(&[0.0, 2.0, 5.0, 9.0]));
        cb.columns.insert("volume".into(), num(&[0.0, 10.0, 20.0, 30.0]));
        cb
    }

    #[test]
    fn parses_conditional_query() {
        let q = parse_query("P(delay=high | region=west, month=jul)", &codebook()).unwrap();
        assert_eq!(q, ProbQuery::new("delay", 1).given("region", 0).given("month", 1));
        let spaced = parse_query("  p ( Delay = high|REGION=west ,month = jul )  ", &codebook()).unwrap();
        assert_eq!(spaced, q);
    }

    #[test]
    fn numeric_literals_resolve_to_bins() {
        let q = parse_query("P(price = 3.2 | volume = 10)", &codebook()).unwrap();
        assert_eq!(q, ProbQuery::new("price", 1).given("volume", 1));
        let q = parse_query("P(price = high)", &codebook()).unwrap();
        assert_eq!(q.target_state, 2);
    }

    #[test]
    fn duplicate_and_unresolvable_tokens_all_reported() {
        let err = parse_query("P(delay=high | delay=low)", &codebook()).unwrap_err();
        assert!(matches!(&err, QueryError::Resolution(v) if matches!(v[0], Issue::DuplicateNode { .. })));
        let err = parse_query("P(nope=1 | price=99, region=north)", &codebook()).unwrap_err();
        let QueryError::Resolution(issues) = err else { panic!() };
        assert_eq!(issues.len(), 3);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        for (text, pos) in [("Q(a=b)", 0), ("P(delay=high", 12), ("P(delay=)", 8), ("P(delay=high) x", 14), ("P(=x)", 2)] {
            match parse_query(text, &codebook()) {
                Err(QueryError::Syntax { pos: p, .. }) => assert_eq!(p, pos, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn rendering_quotes_only_when_needed() {
        let cb = codebook();
        let q = ProbQuery::new("region", 2).given("price", 0).given("month", 1);
        let text = render_query(&q, &cb);
        assert_eq!(text, r#"P(region="a, b" | month=jul, price=between 0 and 2)"#);
        assert_eq!(parse_query(&text, &cb).unwrap(), q);
        let q = ProbQuery::new("region", 3);
        assert_eq!(render_query(&q, &cb), r##"P(region="#1")"##);
        assert_eq!(parse_query(&render_query(&q, &cb), &cb).unwrap(), q);
        assert_eq!(render_query(&ProbQuery::new("delay", 0), &cb), "P(delay=low)");
    }

    #[test]
    fn translation_retries_once() {
        let cb = codebook();
        let question = NlQuestion {
            text: "Is delay high in the west?".into(),
            table: "t".into(),
            question_type: VariantType::Natural,
            source_id: None,
        };
        let ok = ScriptedMock::sequence(["garbage", "Sure: P(delay=high | region=west)."]);
        assert_eq!(
            translate_question(&question, &cb, &ok).unwrap(),
            ProbQuery::new("delay", 1).given("region", 0)
        );
        let bad = ScriptedMock::sequence(["garbage", "P(zzz=1)"]);
        assert!(matches!(translate_question(&question, &cb, &bad), Err(TranslateError::Failed(f)) if f.replies.len() == 2));
        let empty = ScriptedMock::sequence(Vec::<String>::new());
        assert!(matches!(translate_question(&question, &cb, &empty), Err(TranslateError::Transport(_))));
    }
}
