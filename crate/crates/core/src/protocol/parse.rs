//! Segment and block parsers: turning raw policy output into actions, and
//! rendered information blocks back into passages.

use super::render::NO_RESULTS_SENTINEL;
use super::validate::{FormatRule, Violation};
use super::{AgentAction, Passage, ProtocolError, MAX_QUERIES_PER_SEARCH};

/// Result of pulling queries out of a `<search>` interior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryExtraction {
    /// At most [`MAX_QUERIES_PER_SEARCH`] trimmed, non-empty query strings.
    pub queries: Vec<String>,
    /// Recorded protocol violations (currently only the query cap).
    pub violations: Vec<Violation>,
}

/// Finds a closed `tag … /tag` pair starting the search at `from`; returns
/// the interior byte range.
fn closed_pair(text: &str, open: &str, close: &str, from: usize) -> Option<(usize, usize)> {
    let open_at = text[from..].find(open)? + from;
    let interior_start = open_at + open.len();
    let close_at = text[interior_start..].find(close)? + interior_start;
    Some((interior_start, close_at))
}

/// Extracts the ordered `<query>` interiors from the inside of a `<search>`
/// block. Whitespace-only queries are dropped, stray text between queries is
/// ignored, and anything past the first three queries is discarded with a
/// recorded violation. A block yielding no usable query is an error.
pub fn extract_queries(search_interior: &str) -> Result<QueryExtraction, ProtocolError> {
    let mut queries = Vec::new();
    let mut violations = Vec::new();
    let mut cursor = 0;
    while let Some((start, end)) = closed_pair(search_interior, "<query>", "</query>", cursor) {
        let query = search_interior[start..end].trim();
        if !query.is_empty() {
            if queries.len() == MAX_QUERIES_PER_SEARCH {
                violations.push(Violation {
                    position: start - "<query>".len(),
                    rule: FormatRule::QueryCapExceeded,
                });
                break;
            }
            queries.push(query.to_string());
        }
        cursor = end + "</query>".len();
    }
    if queries.is_empty() {
        return Err(ProtocolError::EmptySearch);
    }
    Ok(QueryExtraction { queries, violations })
}

/// Interior of the first closed pair of `tag` in `text`, untrimmed.
pub(crate) fn first_closed_interior(text: &str, tag: super::TagName) -> Option<&str> {
    let (start, end) = closed_pair(text, tag.open_token(), tag.close_token(), 0)?;
    Some(&text[start..end])
}

/// Classifies one generated segment.
///
/// A closed `<search>` block takes priority; failing that, a closed
/// `<answer>` block (interior trimmed); anything else is malformed with a
/// short reason. A closed search block without usable queries falls through
/// to the answer check before being reported malformed.
pub fn parse_segment(text: &str) -> AgentAction {
    let search = closed_pair(text, "<search>", "</search>", 0);
    if let Some((start, end)) = search {
        match extract_queries(&text[start..end]) {
            Ok(extraction) => return AgentAction::Search(extraction.queries),
            Err(ProtocolError::EmptySearch) => {
                if let Some((a_start, a_end)) = closed_pair(text, "<answer>", "</answer>", 0) {
                    return AgentAction::Answer(text[a_start..a_end].trim().to_string());
                }
                return AgentAction::Malformed("empty search".to_string());
            }
            Err(other) => return AgentAction::Malformed(other.to_string()),
        }
    }
    if let Some((start, end)) = closed_pair(text, "<answer>", "</answer>", 0) {
        return AgentAction::Answer(text[start..end].trim().to_string());
    }
    if text.contains("<search>") || text.contains("<answer>") {
        AgentAction::Malformed("unclosed tag".to_string())
    } else {
        AgentAction::Malformed("no terminal tag".to_string())
    }
}

/// Parses a rendered information block back into passages, the inverse of
/// [`super::render_information`] for engine-rendered blocks. Document ids are
/// not part of the rendering, so recovered passages carry empty ids.
pub fn parse_information(text: &str) -> Result<Vec<Passage>, ProtocolError> {
    let trimmed = text.trim();
    let interior = trimmed
        .strip_prefix("<information>")
        .and_then(|t| t.strip_suffix("</information>"))
        .ok_or_else(|| {
            ProtocolError::MalformedInformation(
                "text is not wrapped in <information> tags".to_string(),
            )
        })?;

    let interior = interior.trim_matches('\n');
    if interior.trim() == NO_RESULTS_SENTINEL {
        return Ok(Vec::new());
    }

    let mut passages: Vec<Passage> = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in interior.lines() {
        if let Some(title) = parse_doc_header(line) {
            if let Some((title, lines)) = current.take() {
                passages.push(finish_passage(title, lines));
            }
            current = Some((title, Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        } else {
            return Err(ProtocolError::MalformedInformation(format!(
                "unexpected text before first Doc header: {line:?}"
            )));
        }
    }
    match current {
        Some((title, lines)) => passages.push(finish_passage(title, lines)),
        None => {
            return Err(ProtocolError::MalformedInformation(
                "no Doc entries and no empty-result sentinel".to_string(),
            ))
        }
    }
    Ok(passages)
}

/// Recognizes `Doc <k> (Title: "<title>")` header lines, returning the title.
fn parse_doc_header(line: &str) -> Option<String> {
    let rest = line.strip_prefix("Doc ")?;
    let digits_end = rest.find(|c: char| !c.is_ascii_digit())?;
    if digits_end == 0 {
        return None;
    }
    let rest = rest[digits_end..].strip_prefix(" (Title: \"")?;
    let title = rest.strip_suffix("\")")?;
    Some(title.to_string())
}

fn finish_passage(title: String, mut lines: Vec<&str>) -> Passage {
    // Entries are separated by one blank line; passage texts themselves are
    // stored trimmed, so trailing empties are separator artifacts.
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    Passage {
        doc_id: String::new(),
        title,
        text: lines.join("\n"),
    }
}
