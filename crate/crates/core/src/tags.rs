//! Stack-instruction tags for nested and crossing mentions.
//!
//! Each token gets one tag made of three sections, executed left to right on a
//! stack of open mentions:
//!
//! 1. `POP(i)` instructions, each closing the mention `i` positions from the top
//!    (`POP(1)` is the top) at the current token, inclusive;
//! 2. `PUSH` instructions, each opening a mention at the current token;
//! 3. trailing `POP(1)` instructions, each closing a mention pushed by this
//!    same tag, which yields a single-token mention.
//!
//! The canonical text form joins instructions with single spaces
//! (`POP(2) PUSH PUSH POP(1)`), renders the empty tag as `O`, and prefixes
//! depth-dependent tags with the stack size before the tag (`2:POP(2)`).
//!
//! "Depth" throughout means the stack size between tokens, i.e. the number of
//! open multi-token mentions. Single-token mentions never count against it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// A contiguous token span, 0-based and inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Overlapping without either containing the other.
    pub fn crosses(&self, other: &Span) -> bool {
        let overlap = self.start <= other.end && other.start <= self.end;
        overlap && !self.contains(other) && !other.contains(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Pop(usize),
    Push,
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Pop(i) => write!(f, "POP({i})"),
            Instruction::Push => f.write_str("PUSH"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagError {
    #[error("cannot parse tag `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("more trailing POP(1) than PUSH instructions")]
    TrailingPops,
    #[error("span {start}..={end} lies outside a sentence of {len} tokens")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("token {token}: {depth} open mentions exceed the maximum depth {max_depth}")]
    DepthExceeded {
        token: usize,
        depth: usize,
        max_depth: usize,
    },
    #[error("token {token}: stack underflow")]
    Underflow { token: usize },
    #[error("token {token}: tag annotated with depth {expected} applied at depth {actual}")]
    DepthMismatch {
        token: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unbalanced tags: mention opened at token {token} is never closed")]
    Unbalanced { token: usize },
    #[error("vocabulary: {0}")]
    Vocabulary(String),
}

/// One token's instruction sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Tag {
    leading_pops: Vec<usize>,
    pushes: usize,
    trailing_pops: usize,
    depth: Option<usize>,
}

impl Tag {
    /// The empty tag `O`.
    pub fn outside() -> Self {
        Tag::default()
    }

    pub fn new(
        leading_pops: Vec<usize>,
        pushes: usize,
        trailing_pops: usize,
    ) -> Result<Self, TagError> {
        if trailing_pops > pushes {
            return Err(TagError::TrailingPops);
        }
        if leading_pops.contains(&0) {
            return Err(TagError::Parse {
                text: "POP(0)".into(),
                reason: "pop index must be at least 1".into(),
            });
        }
        Ok(Tag {
            leading_pops,
            pushes,
            trailing_pops,
            depth: None,
        })
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn without_depth(&self) -> Self {
        Tag {
            depth: None,
            ..self.clone()
        }
    }

    pub fn leading_pops(&self) -> &[usize] {
        &self.leading_pops
    }

    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn trailing_pops(&self) -> usize {
        self.trailing_pops
    }

    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    pub fn is_outside(&self) -> bool {
        self.leading_pops.is_empty() && self.pushes == 0
    }

    pub fn instructions(&self) -> impl Iterator<Item = Instruction> + '_ {
        self.leading_pops
            .iter()
            .map(|&i| Instruction::Pop(i))
            .chain(std::iter::repeat_n(Instruction::Push, self.pushes))
            .chain(std::iter::repeat_n(Instruction::Pop(1), self.trailing_pops))
    }

    /// Change in depth caused by the tag, or `None` if it can never be valid.
    fn net_change(&self) -> isize {
        self.pushes as isize - self.trailing_pops as isize - self.leading_pops.len() as isize
    }

    /// Executes the tag at stack size `depth`; `None` if it underflows or the
    /// depth annotation disagrees.
    pub fn apply(&self, depth: usize) -> Option<usize> {
        if self.depth.is_some_and(|d| d != depth) {
            return None;
        }
        let mut d = depth;
        for &i in &self.leading_pops {
            if d < i {
                return None;
            }
            d -= 1;
        }
        // Trailing pops are bounded by pushes, so the rest cannot underflow.
        let after = d as isize + self.pushes as isize - self.trailing_pops as isize;
        debug_assert_eq!(after, depth as isize + self.net_change());
        Some(after as usize)
    }
}

/// Free-function form of [`Tag::apply`].
pub fn apply_tag(depth: usize, tag: &Tag) -> Option<usize> {
    tag.apply(depth)
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(d) = self.depth {
            write!(f, "{d}:")?;
        }
        if self.is_outside() {
            return f.write_str("O");
        }
        let mut first = true;
        for instr in self.instructions() {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            write!(f, "{instr}")?;
        }
        Ok(())
    }
}

impl FromStr for Tag {
    type Err = TagError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| TagError::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let (depth, body) = match text.split_once(':') {
            Some((d, rest)) => (
                Some(d.parse::<usize>().map_err(|_| fail("bad depth prefix"))?),
                rest,
            ),
            None => (None, text),
        };
        let mut tag = Tag {
            depth,
            ..Tag::default()
        };
        if body == "O" {
            return Ok(tag);
        }
        if body.is_empty() {
            return Err(fail("empty tag"));
        }
        for word in body.split(' ') {
            if word == "PUSH" {
                if tag.trailing_pops > 0 {
                    return Err(fail("PUSH after trailing POP(1)"));
                }
                tag.pushes += 1;
                continue;
            }
            let index = word
                .strip_prefix("POP(")
                .and_then(|w| w.strip_suffix(')'))
                .and_then(|w| w.parse::<usize>().ok())
                .ok_or_else(|| fail("unknown instruction"))?;
            if index == 0 {
                return Err(fail("pop index must be at least 1"));
            }
            if tag.pushes == 0 {
                tag.leading_pops.push(index);
            } else if index == 1 {
                tag.trailing_pops += 1;
            } else {
                return Err(fail("only POP(1) may follow PUSH"));
            }
        }
        if tag.trailing_pops > tag.pushes {
            return Err(TagError::TrailingPops);
        }
        Ok(tag)
    }
}

/// Largest number of multi-token spans open between two adjacent tokens.
pub fn nesting_depth(spans: &[Span]) -> usize {
    let Some(last) = spans.iter().map(|s| s.end).max() else {
        return 0;
    };
    let mut delta = vec![0isize; last + 2];
    for s in spans.iter().filter(|s| s.start < s.end) {
        delta[s.start] += 1;
        delta[s.end] -= 1;
    }
    let mut cur = 0isize;
    let mut best = 0isize;
    for d in delta {
        cur += d;
        best = best.max(cur);
    }
    best as usize
}

/// Canonical encoding of a span multiset over a sentence of `len` tokens.
///
/// At each token, ending mentions are popped nearest-to-top first, then
/// multi-token mentions starting here are pushed longest first (so the
/// earliest-ending one is on top), then single-token mentions are pushed and
/// immediately popped.
pub fn encode_mentions(
    spans: &[Span],
    len: usize,
    depth_dependent: bool,
    max_depth: Option<usize>,
) -> Result<Vec<Tag>, TagError> {
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(TagError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
    }
    let mut starting: Vec<Vec<usize>> = vec![Vec::new(); len];
    let mut singles = vec![0usize; len];
    for s in spans {
        if s.start == s.end {
            singles[s.start] += 1;
        } else {
            starting[s.start].push(s.end);
        }
    }
    // Stack of end positions of open mentions, bottom first.
    let mut stack: Vec<usize> = Vec::new();
    let mut tags = Vec::with_capacity(len);
    for t in 0..len {
        let before = stack.len();
        let mut tag = Tag::default();
        while let Some(pos) = stack.iter().rposition(|&end| end == t) {
            tag.leading_pops.push(stack.len() - pos);
            stack.remove(pos);
        }
        let mut ends = std::mem::take(&mut starting[t]);
        ends.sort_unstable_by(|a, b| b.cmp(a));
        tag.pushes = ends.len() + singles[t];
        tag.trailing_pops = singles[t];
        stack.extend(ends);
        if let Some(max_depth) = max_depth {
            if stack.len() > max_depth {
                return Err(TagError::DepthExceeded {
                    token: t,
                    depth: stack.len(),
                    max_depth,
                });
            }
        }
        if depth_dependent {
            tag.depth = Some(before);
        }
        tags.push(tag);
    }
    debug_assert!(stack.is_empty());
    Ok(tags)
}

/// Replays tags and returns the spans they describe, sorted.
pub fn decode_tags(tags: &[Tag]) -> Result<Vec<Span>, TagError> {
    let mut stack: Vec<usize> = Vec::new();
    let mut spans = Vec::new();
    for (t, tag) in tags.iter().enumerate() {
        if let Some(expected) = tag.depth {
            if expected != stack.len() {
                return Err(TagError::DepthMismatch {
                    token: t,
                    expected,
                    actual: stack.len(),
                });
            }
        }
        for &i in &tag.leading_pops {
            if i > stack.len() {
                return Err(TagError::Underflow { token: t });
            }
            let start = stack.remove(stack.len() - i);
            spans.push(Span::new(start, t));
        }
        stack.extend(std::iter::repeat_n(t, tag.pushes));
        for _ in 0..tag.trailing_pops {
            let start = stack.pop().expect("trailing pops never exceed pushes");
            spans.push(Span::new(start, t));
        }
    }
    if let Some(&start) = stack.first() {
        return Err(TagError::Unbalanced { token: start });
    }
    spans.sort();
    Ok(spans)
}

/// Best-effort replay for unconstrained decoder output: pops that would
/// underflow are ignored and mentions still open at the end are dropped.
pub fn decode_tags_lenient(tags: &[Tag]) -> Vec<Span> {
    let mut stack: Vec<usize> = Vec::new();
    let mut spans = Vec::new();
    for (t, tag) in tags.iter().enumerate() {
        for &i in &tag.leading_pops {
            if i <= stack.len() {
                let start = stack.remove(stack.len() - i);
                spans.push(Span::new(start, t));
            }
        }
        stack.extend(std::iter::repeat_n(t, tag.pushes));
        for _ in 0..tag.trailing_pops {
            if let Some(start) = stack.pop() {
                spans.push(Span::new(start, t));
            }
        }
    }
    spans.sort();
    spans
}

/// Ordered, duplicate-free list of tags with index lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<Tag>,
    names: Vec<String>,
    index: HashMap<String, usize>,
    depth_dependent: bool,
}

impl TagVocabulary {
    /// Builds a vocabulary from canonical tag strings. The depth-dependent
    /// flag is inferred from the first tag and must be consistent.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, TagError> {
        let mut tags = Vec::with_capacity(names.len());
        let mut canonical = Vec::with_capacity(names.len());
        let mut index = HashMap::new();
        let mut depth_dependent = None;
        for name in names {
            let tag: Tag = name.as_ref().parse()?;
            let dd = tag.depth.is_some();
            if *depth_dependent.get_or_insert(dd) != dd {
                return Err(TagError::Vocabulary(
                    "mixes depth-dependent and depth-independent tags".into(),
                ));
            }
            let text = tag.to_string();
            if index.insert(text.clone(), tags.len()).is_some() {
                return Err(TagError::Vocabulary(format!("duplicate tag `{text}`")));
            }
            tags.push(tag);
            canonical.push(text);
        }
        Ok(TagVocabulary {
            tags,
            names: canonical,
            index,
            depth_dependent: depth_dependent.unwrap_or(false),
        })
    }

    /// Collects the distinct tags of an encoded corpus in first-occurrence
    /// order, with `O` (or `0:O`) always at index 0.
    pub fn build<'a, I>(sentences: I, depth_dependent: bool) -> Self
    where
        I: IntoIterator<Item = &'a [Tag]>,
    {
        let outside = if depth_dependent {
            Tag::outside().with_depth(0)
        } else {
            Tag::outside()
        };
        let mut vocab = TagVocabulary {
            tags: Vec::new(),
            names: Vec::new(),
            index: HashMap::new(),
            depth_dependent,
        };
        vocab.insert(outside);
        for sentence in sentences {
            for tag in sentence {
                let tag = if depth_dependent {
                    tag.clone().with_depth(tag.depth.unwrap_or(0))
                } else {
                    tag.without_depth()
                };
                vocab.insert(tag);
            }
        }
        vocab
    }

    fn insert(&mut self, tag: Tag) -> usize {
        let name = tag.to_string();
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.tags.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.tags.push(tag);
        i
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn is_depth_dependent(&self) -> bool {
        self.depth_dependent
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tag(&self, i: usize) -> &Tag {
        &self.tags[i]
    }

    pub fn index_of(&self, tag: &Tag) -> Option<usize> {
        self.index.get(&tag.to_string()).copied()
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// One tag per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, TagError> {
        let names: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        Self::from_names(&names)
    }
}
