//! Parsing of tag-structured reasoning trajectories.
//!
//! A trajectory is a `<think>…</think>` block followed by the final answer,
//! which the prompt asks to be wrapped in `\boxed{…}`. Inside the think block
//! the model declares its cognitive foci as
//! `<focus>Label</focus><focus_attr>description</focus_attr>` pairs.
//!
//! Parsing is total over UTF-8 input: structural defects never abort, they
//! are collected as [`Diagnostic`]s and clear [`ParsedTrajectory::format_valid`]
//! when their severity is [`Severity::Error`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const FOCUS_OPEN: &str = "<focus>";
const FOCUS_CLOSE: &str = "</focus>";
const ATTR_OPEN: &str = "<focus_attr>";
const ATTR_CLOSE: &str = "</focus_attr>";
const BOXED_OPEN: &str = "\\boxed{";

/// The closed set of cognitive focus dimensions a trajectory may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FocusDimension {
    Knowledge,
    Style,
    Worldview,
    Emotion,
    Empathetic,
    Engagement,
    HumanLike,
    Extension,
    Memory,
    Safety,
}

impl FocusDimension {
    pub const ALL: [FocusDimension; 10] = [
        FocusDimension::Knowledge,
        FocusDimension::Style,
        FocusDimension::Worldview,
        FocusDimension::Emotion,
        FocusDimension::Empathetic,
        FocusDimension::Engagement,
        FocusDimension::HumanLike,
        FocusDimension::Extension,
        FocusDimension::Memory,
        FocusDimension::Safety,
    ];

    /// Canonical label as written in the prompt.
    pub fn name(self) -> &'static str {
        match self {
            FocusDimension::Knowledge => "Knowledge",
            FocusDimension::Style => "Style",
            FocusDimension::Worldview => "Worldview",
            FocusDimension::Emotion => "Emotion",
            FocusDimension::Empathetic => "Empathetic",
            FocusDimension::Engagement => "Engagement",
            FocusDimension::HumanLike => "Human_Like",
            FocusDimension::Extension => "Extension",
            FocusDimension::Memory => "Memory",
            FocusDimension::Safety => "Safety",
        }
    }
}

/// Label lookup failed: the text is not one of the ten dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown focus label `{0}`")]
pub struct UnknownFocusLabel(pub String);

fn normalize_label(label: &str) -> String {
    label
        .trim()
        .chars()
        .map(|c| {
            if c.is_whitespace() || c == '-' {
                '_'
            } else {
                c
            }
        })
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for FocusDimension {
    type Err = UnknownFocusLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = normalize_label(s);
        FocusDimension::ALL
            .into_iter()
            .find(|d| d.name().to_lowercase() == wanted)
            .ok_or_else(|| UnknownFocusLabel(s.trim().to_string()))
    }
}

impl fmt::Display for FocusDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for FocusDimension {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FocusDimension {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One declared focus with its attribute payload.
///
/// `offset` is the byte position in [`ParsedTrajectory::think_text`] where the
/// declaration appeared; rendering re-inserts the tags there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusDeclaration {
    pub dimension: FocusDimension,
    pub attribute: String,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagKind {
    Think,
    Focus,
    FocusAttr,
    Boxed,
}

impl TagKind {
    pub fn name(self) -> &'static str {
        match self {
            TagKind::Think => "think",
            TagKind::Focus => "focus",
            TagKind::FocusAttr => "focus_attr",
            TagKind::Boxed => "boxed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

/// A structural finding produced while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    MissingThinkBlock,
    /// More than one think block, or a nested one.
    ExtraThinkBlock,
    UnclosedTag(TagKind),
    /// A closing tag with no matching opener.
    StrayClosingTag(TagKind),
    UnknownFocusLabel(String),
    /// `<focus>` with no following `<focus_attr>`; the declaration is kept
    /// with an empty attribute.
    MissingAttr(FocusDimension),
    /// `<focus_attr>` with no preceding `<focus>`; its content is dropped.
    OrphanAttr,
    MissingAnswer,
    /// The answer was taken from trailing text instead of `\boxed{}`.
    AnswerNotBoxed,
}

impl Diagnostic {
    pub fn severity(&self) -> Severity {
        match self {
            Diagnostic::MissingAttr(_) | Diagnostic::OrphanAttr | Diagnostic::AnswerNotBoxed => {
                Severity::Warning
            }
            _ => Severity::Error,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Diagnostic::MissingThinkBlock => "missing_think_block",
            Diagnostic::ExtraThinkBlock => "extra_think_block",
            Diagnostic::UnclosedTag(_) => "unclosed_tag",
            Diagnostic::StrayClosingTag(_) => "stray_closing_tag",
            Diagnostic::UnknownFocusLabel(_) => "unknown_focus_label",
            Diagnostic::MissingAttr(_) => "missing_attr",
            Diagnostic::OrphanAttr => "orphan_attr",
            Diagnostic::MissingAnswer => "missing_answer",
            Diagnostic::AnswerNotBoxed => "answer_not_boxed",
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MissingThinkBlock => f.write_str("no <think>…</think> block"),
            Diagnostic::ExtraThinkBlock => f.write_str("more than one <think> block"),
            Diagnostic::UnclosedTag(tag) => write!(f, "unclosed tag `{}`", tag.name()),
            Diagnostic::StrayClosingTag(tag) => {
                write!(f, "closing tag `{}` without opener", tag.name())
            }
            Diagnostic::UnknownFocusLabel(label) => write!(f, "unknown focus label `{label}`"),
            Diagnostic::MissingAttr(dim) => write!(f, "focus `{dim}` has no <focus_attr>"),
            Diagnostic::OrphanAttr => f.write_str("<focus_attr> without a preceding <focus>"),
            Diagnostic::MissingAnswer => f.write_str("no final answer"),
            Diagnostic::AnswerNotBoxed => f.write_str("final answer not wrapped in \\boxed{}"),
        }
    }
}

/// Structured decomposition of a raw model output.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedTrajectory {
    /// Content of the think block with the focus markup removed.
    pub think_text: String,
    pub foci: Vec<FocusDeclaration>,
    pub answer: String,
    pub answer_was_boxed: bool,
    pub format_valid: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedTrajectory {
    /// Labels of the declared foci, deduplicated.
    pub fn focus_labels(&self) -> std::collections::BTreeSet<FocusDimension> {
        self.foci.iter().map(|f| f.dimension).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatReport {
    pub pass: bool,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("trajectory is not valid UTF-8: {0}")]
    InvalidUtf8(#[from] std::str::Utf8Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("cannot render a trajectory that failed format validation")]
    InvalidFormat,
    #[error("answer has unbalanced braces and cannot be boxed")]
    UnbalancedAnswer,
    #[error("{0} contains reserved tag markup")]
    ReservedMarkup(&'static str),
    #[error("focus offset {0} is not a character boundary of the think text")]
    BadOffset(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    FocusOpen,
    FocusClose,
    AttrOpen,
    AttrClose,
}

#[derive(Debug, Clone, Copy)]
enum Segment<'a> {
    Text(&'a str),
    Tag(Tag),
}

const FOCUS_TAGS: [(&str, Tag); 4] = [
    (FOCUS_OPEN, Tag::FocusOpen),
    (FOCUS_CLOSE, Tag::FocusClose),
    (ATTR_OPEN, Tag::AttrOpen),
    (ATTR_CLOSE, Tag::AttrClose),
];

fn segment(inner: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut pos = 0;
    while let Some(rel) = inner[pos..].find('<') {
        let at = pos + rel;
        match FOCUS_TAGS
            .iter()
            .find(|(lit, _)| inner[at..].starts_with(lit))
        {
            Some((lit, tag)) => {
                if at > text_start {
                    out.push(Segment::Text(&inner[text_start..at]));
                }
                out.push(Segment::Tag(*tag));
                pos = at + lit.len();
                text_start = pos;
            }
            None => pos = at + 1,
        }
    }
    if text_start < inner.len() {
        out.push(Segment::Text(&inner[text_start..]));
    }
    out
}

/// Collects text segments starting at `i` until a tag; returns the joined
/// text, the index of the first tag (or `segs.len()`), and that tag.
fn take_text(segs: &[Segment<'_>], mut i: usize) -> (String, usize, Option<Tag>) {
    let mut text = String::new();
    while i < segs.len() {
        match segs[i] {
            Segment::Text(t) => text.push_str(t),
            Segment::Tag(tag) => return (text, i, Some(tag)),
        }
        i += 1;
    }
    (text, i, None)
}

struct ThinkScan {
    prose: String,
    foci: Vec<FocusDeclaration>,
}

fn scan_think(inner: &str, diagnostics: &mut Vec<Diagnostic>) -> ThinkScan {
    let segs = segment(inner);
    let mut prose = String::new();
    let mut foci = Vec::new();
    let mut i = 0;
    while i < segs.len() {
        match segs[i] {
            Segment::Text(t) => {
                prose.push_str(t);
                i += 1;
            }
            Segment::Tag(Tag::FocusClose) => {
                diagnostics.push(Diagnostic::StrayClosingTag(TagKind::Focus));
                i += 1;
            }
            Segment::Tag(Tag::AttrClose) => {
                diagnostics.push(Diagnostic::StrayClosingTag(TagKind::FocusAttr));
                i += 1;
            }
            Segment::Tag(Tag::AttrOpen) => {
                diagnostics.push(Diagnostic::OrphanAttr);
                let (_, next, tag) = take_text(&segs, i + 1);
                if tag == Some(Tag::AttrClose) {
                    i = next + 1;
                } else {
                    diagnostics.push(Diagnostic::UnclosedTag(TagKind::FocusAttr));
                    i = next;
                }
            }
            Segment::Tag(Tag::FocusOpen) => {
                let offset = prose.len();
                let (label, next, tag) = take_text(&segs, i + 1);
                if tag != Some(Tag::FocusClose) {
                    diagnostics.push(Diagnostic::UnclosedTag(TagKind::Focus));
                    prose.push_str(&label);
                    i = next;
                    continue;
                }
                i = next + 1;
                let dimension = match label.parse::<FocusDimension>() {
                    Ok(d) => Some(d),
                    Err(UnknownFocusLabel(l)) => {
                        diagnostics.push(Diagnostic::UnknownFocusLabel(l));
                        None
                    }
                };

                // Look past interleaved text for the attribute.
                let (between, attr_at, tag) = take_text(&segs, i);
                let mut attribute = None;
                if tag == Some(Tag::AttrOpen) {
                    prose.push_str(&between);
                    let (attr, close_at, close) = take_text(&segs, attr_at + 1);
                    if close == Some(Tag::AttrClose) {
                        attribute = Some(attr.trim().to_string());
                        i = close_at + 1;
                    } else {
                        diagnostics.push(Diagnostic::UnclosedTag(TagKind::FocusAttr));
                        i = close_at;
                    }
                }
                if let Some(dimension) = dimension {
                    if attribute.is_none() && tag != Some(Tag::AttrOpen) {
                        diagnostics.push(Diagnostic::MissingAttr(dimension));
                    }
                    foci.push(FocusDeclaration {
                        dimension,
                        attribute: attribute.unwrap_or_default(),
                        offset,
                    });
                }
            }
        }
    }
    ThinkScan { prose, foci }
}

/// Brace-balanced extraction of the first `\boxed{…}` in `region`.
/// `Some(None)` means a box was opened but never closed.
fn extract_boxed(region: &str) -> Option<Option<&str>> {
    let start = region.find(BOXED_OPEN)? + BOXED_OPEN.len();
    let mut depth = 1usize;
    for (idx, c) in region[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(Some(&region[start..start + idx]));
                }
            }
            _ => {}
        }
    }
    Some(None)
}

/// Parses raw model output. Never fails; see the module docs.
pub fn parse_trajectory(raw: &str) -> ParsedTrajectory {
    let mut diagnostics = Vec::new();
    let mut think_text = String::new();
    let mut foci = Vec::new();

    // Region searched for `\boxed{}`, and trailing text usable as a fallback.
    let (boxed_region, trailing): (&str, Option<&str>) = match raw.find(THINK_OPEN) {
        None => {
            diagnostics.push(Diagnostic::MissingThinkBlock);
            if raw.contains(THINK_CLOSE) {
                diagnostics.push(Diagnostic::StrayClosingTag(TagKind::Think));
            }
            (raw, None)
        }
        Some(open) => {
            let body = open + THINK_OPEN.len();
            match raw[body..].find(THINK_CLOSE) {
                None => {
                    diagnostics.push(Diagnostic::UnclosedTag(TagKind::Think));
                    ("", None)
                }
                Some(rel) => {
                    let close = body + rel;
                    let inner = &raw[body..close];
                    let rest = &raw[close + THINK_CLOSE.len()..];
                    if inner.contains(THINK_OPEN)
                        || rest.contains(THINK_OPEN)
                        || rest.contains(THINK_CLOSE)
                        || raw[..open].contains(THINK_CLOSE)
                    {
                        diagnostics.push(Diagnostic::ExtraThinkBlock);
                    }
                    let scan = scan_think(inner, &mut diagnostics);
                    think_text = scan.prose;
                    foci = scan.foci;
                    (rest, Some(rest))
                }
            }
        }
    };

    let mut answer = String::new();
    let mut answer_was_boxed = false;
    match extract_boxed(boxed_region) {
        Some(Some(content)) => {
            answer = content.trim().to_string();
            answer_was_boxed = true;
            if answer.is_empty() {
                diagnostics.push(Diagnostic::MissingAnswer);
            }
        }
        Some(None) => diagnostics.push(Diagnostic::UnclosedTag(TagKind::Boxed)),
        None => match trailing.map(str::trim).filter(|t| !t.is_empty()) {
            Some(text) => {
                answer = text.to_string();
                diagnostics.push(Diagnostic::AnswerNotBoxed);
            }
            None => diagnostics.push(Diagnostic::MissingAnswer),
        },
    }

    let format_valid = diagnostics.iter().all(|d| d.severity() != Severity::Error);
    ParsedTrajectory {
        think_text,
        foci,
        answer,
        answer_was_boxed,
        format_valid,
        diagnostics,
    }
}

/// Byte-level entry point; the only hard failure is invalid UTF-8.
pub fn parse_trajectory_bytes(raw: &[u8]) -> Result<ParsedTrajectory, ParseError> {
    Ok(parse_trajectory(std::str::from_utf8(raw)?))
}

pub fn validate_format(t: &ParsedTrajectory) -> FormatReport {
    FormatReport {
        pass: t.format_valid,
        diagnostics: t.diagnostics.clone(),
    }
}

const RESERVED: [&str; 7] = [
    THINK_OPEN,
    THINK_CLOSE,
    FOCUS_OPEN,
    FOCUS_CLOSE,
    ATTR_OPEN,
    ATTR_CLOSE,
    BOXED_OPEN,
];

fn has_reserved(s: &str) -> bool {
    RESERVED.iter().any(|tag| s.contains(tag))
}

fn braces_balanced(s: &str) -> bool {
    let mut depth = 0i64;
    for c in s.chars() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

/// Emits the canonical text form of a valid trajectory.
pub fn render_trajectory(t: &ParsedTrajectory) -> Result<String, RenderError> {
    if !t.format_valid {
        return Err(RenderError::InvalidFormat);
    }
    if !braces_balanced(&t.answer) {
        return Err(RenderError::UnbalancedAnswer);
    }
    if has_reserved(&t.think_text) {
        return Err(RenderError::ReservedMarkup("think text"));
    }
    if has_reserved(&t.answer) {
        return Err(RenderError::ReservedMarkup("answer"));
    }
    if t.foci.iter().any(|f| has_reserved(&f.attribute)) {
        return Err(RenderError::ReservedMarkup("focus attribute"));
    }

    let mut out = String::with_capacity(t.think_text.len() + t.answer.len() + 64);
    out.push_str(THINK_OPEN);
    let mut cursor = 0;
    let mut foci: Vec<&FocusDeclaration> = t.foci.iter().collect();
    foci.sort_by_key(|f| f.offset);
    for focus in foci {
        let offset = focus.offset.min(t.think_text.len());
        if offset < cursor || !t.think_text.is_char_boundary(offset) {
            return Err(RenderError::BadOffset(focus.offset));
        }
        out.push_str(&t.think_text[cursor..offset]);
        cursor = offset;
        out.push_str(FOCUS_OPEN);
        out.push_str(focus.dimension.name());
        out.push_str(FOCUS_CLOSE);
        out.push_str(ATTR_OPEN);
        out.push_str(&focus.attribute);
        out.push_str(ATTR_CLOSE);
    }
    out.push_str(&t.think_text[cursor..]);
    out.push_str(THINK_CLOSE);
    out.push_str(BOXED_OPEN);
    out.push_str(&t.answer);
    out.push('}');
    Ok(out)
}
