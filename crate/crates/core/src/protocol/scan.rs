//! Low-level tag scanner shared by segment parsing, transcript validation,
//! and information-span extraction.
//!
//! Tags are matched bit-exactly: lowercase, no attributes, no whitespace
//! inside the angle brackets. Anything else — `<Search>`, `< plan>`,
//! unknown names — is ordinary text.

/// The six element names of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagName {
    Plan,
    Search,
    Query,
    Information,
    Reflection,
    Answer,
}

pub(crate) const ALL_TAGS: [TagName; 6] = [
    TagName::Plan,
    TagName::Search,
    TagName::Query,
    TagName::Information,
    TagName::Reflection,
    TagName::Answer,
];

impl TagName {
    pub fn as_str(self) -> &'static str {
        match self {
            TagName::Plan => "plan",
            TagName::Search => "search",
            TagName::Query => "query",
            TagName::Information => "information",
            TagName::Reflection => "reflection",
            TagName::Answer => "answer",
        }
    }

    pub fn open_token(self) -> &'static str {
        match self {
            TagName::Plan => "<plan>",
            TagName::Search => "<search>",
            TagName::Query => "<query>",
            TagName::Information => "<information>",
            TagName::Reflection => "<reflection>",
            TagName::Answer => "<answer>",
        }
    }

    pub fn close_token(self) -> &'static str {
        match self {
            TagName::Plan => "</plan>",
            TagName::Search => "</search>",
            TagName::Query => "</query>",
            TagName::Information => "</information>",
            TagName::Reflection => "</reflection>",
            TagName::Answer => "</answer>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TagKind {
    Open,
    Close,
}

/// One literal tag occurrence: byte span `[start, end)` in the scanned text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TagEvent {
    pub name: TagName,
    pub kind: TagKind,
    pub start: usize,
    pub end: usize,
}

/// Finds every tag occurrence in order. Tag tokens are ASCII, so byte
/// scanning is safe in UTF-8 text.
pub(crate) fn scan_tags(text: &str) -> Vec<TagEvent> {
    let bytes = text.as_bytes();
    let mut events = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &text[i..];
        let mut matched = None;
        for name in ALL_TAGS {
            if rest.starts_with(name.open_token()) {
                matched = Some((name, TagKind::Open, name.open_token().len()));
                break;
            }
            if rest.starts_with(name.close_token()) {
                matched = Some((name, TagKind::Close, name.close_token().len()));
                break;
            }
        }
        match matched {
            Some((name, kind, len)) => {
                events.push(TagEvent {
                    name,
                    kind,
                    start: i,
                    end: i + len,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    events
}

/// A matched element: open/close tag spans plus any `<query>` children
/// (populated for `<search>` elements only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Element {
    pub name: TagName,
    pub open_start: usize,
    pub open_end: usize,
    pub close_start: usize,
    pub close_end: usize,
    pub children: Vec<Element>,
}

impl Element {
    #[cfg(test)]
    pub fn interior<'a>(&self, text: &'a str) -> &'a str {
        &text[self.open_end..self.close_start]
    }

    pub fn span(&self) -> (usize, usize) {
        (self.open_start, self.close_end)
    }
}

/// A structural problem found while pairing tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StructuralIssue {
    /// Open tag in a position the grammar does not allow (e.g. `<query>`
    /// outside `<search>`, or any tag opened inside a non-search element).
    Misnested { position: usize },
    /// Close tag with no matching open on top of the stack.
    MismatchedClose { position: usize },
    /// Open tag never closed.
    Unclosed { position: usize },
}

/// Pairs tags into elements. Returns top-level elements in order plus every
/// structural issue encountered. The grammar is flat: the only legal nesting
/// is `<query>` directly inside `<search>`. Misplaced elements still get
/// matched (so one mistake yields one issue, not a cascade) but are excluded
/// from the returned tree.
pub(crate) fn build_elements(text: &str) -> (Vec<Element>, Vec<StructuralIssue>) {
    struct Pending {
        name: TagName,
        open_start: usize,
        open_end: usize,
        children: Vec<Element>,
        misplaced: bool,
    }

    let mut stack: Vec<Pending> = Vec::new();
    let mut top_level: Vec<Element> = Vec::new();
    let mut issues = Vec::new();

    for event in scan_tags(text) {
        match event.kind {
            TagKind::Open => {
                let legal = match stack.last() {
                    None => event.name != TagName::Query,
                    Some(parent) => {
                        parent.name == TagName::Search
                            && event.name == TagName::Query
                            && !parent.misplaced
                    }
                };
                if !legal {
                    issues.push(StructuralIssue::Misnested {
                        position: event.start,
                    });
                }
                stack.push(Pending {
                    name: event.name,
                    open_start: event.start,
                    open_end: event.end,
                    children: Vec::new(),
                    misplaced: !legal,
                });
            }
            TagKind::Close => {
                // Match the nearest same-name open, looking through misplaced
                // entries (flagged already at their open tag) so one stray
                // open cannot cascade into failures for everything after it.
                // A legal open blocks the search: a stray close never
                // consumes a well-placed pending element.
                let mut matched = None;
                for (depth, pending) in stack.iter().enumerate().rev() {
                    if pending.name == event.name {
                        matched = Some(depth);
                        break;
                    }
                    if !pending.misplaced {
                        break;
                    }
                }
                match matched {
                    Some(depth) => {
                        stack.truncate(depth + 1);
                        let pending = stack.pop().expect("non-empty stack");
                        let element = Element {
                            name: pending.name,
                            open_start: pending.open_start,
                            open_end: pending.open_end,
                            close_start: event.start,
                            close_end: event.end,
                            children: pending.children,
                        };
                        if pending.misplaced {
                            // Issue already recorded at the open tag.
                        } else if let Some(parent) = stack.last_mut() {
                            parent.children.push(element);
                        } else {
                            top_level.push(element);
                        }
                    }
                    None => issues.push(StructuralIssue::MismatchedClose {
                        position: event.start,
                    }),
                }
            }
        }
    }

    for pending in &stack {
        if !pending.misplaced {
            issues.push(StructuralIssue::Unclosed {
                position: pending.open_start,
            });
        }
    }

    (top_level, issues)
}
