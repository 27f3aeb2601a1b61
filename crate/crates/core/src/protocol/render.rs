//! Rendering retrieval results into the `<information>` blocks spliced into
//! the rollout context.

use super::{InformationBlock, Passage};

/// Interior text of an information block when retrieval came back empty.
pub const NO_RESULTS_SENTINEL: &str = "No results found.";

/// Renders passages as numbered `Doc k (Title: "…")` entries separated by
/// blank lines. Shared between information blocks and the frozen generator
/// prompt so the policy and the generator see passages identically.
pub fn render_passage_list(passages: &[Passage]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Doc {} (Title: \"{}\")\n{}", i + 1, p.title, p.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders a whole block, byte-exactly:
///
/// ```text
/// <information>
/// Doc 1 (Title: "Apples")
/// apple apple
/// </information>
/// ```
///
/// An empty block renders the fixed `No results found.` sentinel so the
/// policy still sees a well-formed information element.
pub fn render_information(block: &InformationBlock) -> String {
    let body = if block.passages.is_empty() {
        NO_RESULTS_SENTINEL.to_string()
    } else {
        render_passage_list(&block.passages)
    };
    format!("<information>\n{body}\n</information>")
}
