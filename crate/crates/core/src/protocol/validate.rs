//! Whole-transcript validation against the protocol rules, and extraction of
//! information-block spans for loss masking.

use serde::{Deserialize, Serialize};

use super::scan::{build_elements, Element, StructuralIssue, TagName};

/// The rule a [`Violation`] points at. Serialized in kebab case, matching
/// the names printed by diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatRule {
    /// `<search>` not immediately preceded by a closed `<plan>`.
    MissingPlan,
    /// `<information>` not immediately followed by a closed `<reflection>`.
    MissingReflection,
    /// No `<answer>` element in the transcript.
    MissingAnswer,
    /// More than one `<answer>` element.
    MultipleAnswers,
    /// The `<answer>` element is not the final element, or trailing text
    /// follows it.
    AnswerNotLast,
    /// An opened tag was never closed.
    UnclosedTag,
    /// A close tag without a matching open.
    MismatchedClose,
    /// A tag opened where the grammar does not allow it.
    MisnestedTag,
    /// A `<search>` block carried more queries than the per-search cap.
    QueryCapExceeded,
}

impl FormatRule {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatRule::MissingPlan => "missing-plan",
            FormatRule::MissingReflection => "missing-reflection",
            FormatRule::MissingAnswer => "missing-answer",
            FormatRule::MultipleAnswers => "multiple-answers",
            FormatRule::AnswerNotLast => "answer-not-last",
            FormatRule::UnclosedTag => "unclosed-tag",
            FormatRule::MismatchedClose => "mismatched-close",
            FormatRule::MisnestedTag => "misnested-tag",
            FormatRule::QueryCapExceeded => "query-cap-exceeded",
        }
    }
}

impl std::fmt::Display for FormatRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One broken rule at a byte position of the validated text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub position: usize,
    pub rule: FormatRule,
}

/// Outcome of [`validate_format`]: valid iff no violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

fn whitespace_gap(text: &str, from: usize, to: usize) -> bool {
    from <= to && text[from..to].trim().is_empty()
}

/// Checks a full rollout transcript against the protocol:
///
/// 1. every `<search>` is immediately preceded (whitespace apart) by a
///    closed `<plan>`;
/// 2. every `<information>` is immediately followed (whitespace apart) by a
///    closed `<reflection>`;
/// 3. exactly one `<answer>` appears, and it ends the transcript;
/// 4. tags pair up and nest properly (`<query>` only inside `<search>`).
///
/// A transcript with zero search rounds is still valid — a policy may answer
/// directly. Prose *between* elements other than at the two adjacency points
/// above is tolerated; models drift, and the reward gate only needs the
/// structural skeleton to hold.
pub fn validate_format(text: &str) -> FormatReport {
    let (elements, issues) = build_elements(text);
    let mut violations: Vec<Violation> = issues
        .iter()
        .map(|issue| match *issue {
            StructuralIssue::Misnested { position } => Violation {
                position,
                rule: FormatRule::MisnestedTag,
            },
            StructuralIssue::MismatchedClose { position } => Violation {
                position,
                rule: FormatRule::MismatchedClose,
            },
            StructuralIssue::Unclosed { position } => Violation {
                position,
                rule: FormatRule::UnclosedTag,
            },
        })
        .collect();

    for (i, element) in elements.iter().enumerate() {
        match element.name {
            TagName::Search => {
                let preceded_by_plan = i > 0
                    && elements[i - 1].name == TagName::Plan
                    && whitespace_gap(text, elements[i - 1].close_end, element.open_start);
                if !preceded_by_plan {
                    violations.push(Violation {
                        position: element.open_start,
                        rule: FormatRule::MissingPlan,
                    });
                }
            }
            TagName::Information => {
                let followed_by_reflection = elements.get(i + 1).is_some_and(|next| {
                    next.name == TagName::Reflection
                        && whitespace_gap(text, element.close_end, next.open_start)
                });
                if !followed_by_reflection {
                    violations.push(Violation {
                        position: element.close_end,
                        rule: FormatRule::MissingReflection,
                    });
                }
            }
            _ => {}
        }
    }

    let answers: Vec<&Element> = elements
        .iter()
        .filter(|e| e.name == TagName::Answer)
        .collect();
    match answers.len() {
        0 => violations.push(Violation {
            position: text.len(),
            rule: FormatRule::MissingAnswer,
        }),
        1 => {
            let answer = answers[0];
            let is_last_element = elements
                .last()
                .is_some_and(|last| std::ptr::eq(last, answer));
            if !is_last_element || !whitespace_gap(text, answer.close_end, text.len()) {
                violations.push(Violation {
                    position: answer.close_end,
                    rule: FormatRule::AnswerNotLast,
                });
            }
        }
        _ => violations.push(Violation {
            position: answers[1].open_start,
            rule: FormatRule::MultipleAnswers,
        }),
    }

    violations.sort_by_key(|v| v.position);
    FormatReport {
        valid: violations.is_empty(),
        violations,
    }
}

/// Byte spans (tags included) of every well-formed *top-level*
/// `<information>` element. Injected retrieval blocks are always top level;
/// stray information tags inside other elements are model text and excluded.
pub fn information_spans(text: &str) -> Vec<(usize, usize)> {
    let (elements, _) = build_elements(text);
    elements
        .iter()
        .filter(|e| e.name == TagName::Information)
        .map(Element::span)
        .collect()
}
