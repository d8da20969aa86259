//! Reader and writer for the CorefUD flavour of CoNLL-U.
//!
//! Only the subset needed for mention-level coreference is interpreted:
//! document/sentence headers, the HEAD column, and the `Entity=` attribute in
//! MISC, which carries bracketed mention annotations:
//!
//! ```text
//! 1  The     ...  Entity=(e1
//! 2  cat     ...  Entity=(e2)
//! 3  sat     ...  Entity=e1)
//! ```
//!
//! `(e1` opens a mention of entity `e1`, `e1)` closes the most recently opened
//! mention of `e1`, and `(e2)` is a single-token mention. Any text after the
//! first `-` of an opening bracket (`(e1-person-1`) is kept verbatim on the
//! mention but not interpreted. Multiword-token ranges and empty nodes are
//! skipped. Mentions must be contiguous and may not cross sentence boundaries.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::tags::Span;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorefudError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: sentence `{sent_id}` appears before any `# newdoc id` header")]
    MissingDocHeader { line: usize, sent_id: String },
    #[error("line {line}: mention of `{entity}` opened here is not closed within its sentence")]
    UnclosedMention { line: usize, entity: String },
    #[error("line {line}: closing bracket for `{entity}` without a matching open bracket")]
    UnknownClose { line: usize, entity: String },
    #[error("line {line}: discontinuous mention of `{entity}` is not supported")]
    Discontinuous { line: usize, entity: String },
    #[error("line {line}: invalid dependency tree: {reason}")]
    InvalidTree { line: usize, reason: String },
    #[error(
        "document `{doc_id}`: mentions {first} and {second} cannot be serialized unambiguously"
    )]
    Ambiguous {
        doc_id: String,
        first: String,
        second: String,
    },
    #[error("document `{doc_id}` has no sentences")]
    EmptyDocument { doc_id: String },
    #[error("document `{doc_id}`: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
}

/// One syntactic word of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position within the sentence (the CoNLL-U ID column).
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// 0-based index of the syntactic parent, `None` for the root.
    pub parent: Option<usize>,
    pub deprel: String,
    pub deps: String,
    /// MISC attributes other than `Entity`, in file order. Bare attributes
    /// without `=` are stored with an empty value.
    pub misc: Vec<(String, String)>,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>, parent: Option<usize>) -> Self {
        let underscore = || "_".to_string();
        Token {
            index,
            form: form.into(),
            lemma: underscore(),
            upos: underscore(),
            xpos: underscore(),
            feats: underscore(),
            parent,
            deprel: underscore(),
            deps: underscore(),
            misc: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub text: Option<String>,
    /// Comment lines other than newdoc/corpus/sent_id/text, verbatim.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A contiguous span of tokens referring to an entity.
///
/// `start` and `end` are 0-based, inclusive positions in `sentence`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mention {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub entity: String,
    /// Uninterpreted bracket suffix, e.g. `-person-1` from `(e1-person-1`.
    pub attrs: String,
}

impl Mention {
    pub fn new(sentence: usize, start: usize, end: usize, entity: impl Into<String>) -> Self {
        Mention {
            sentence,
            start,
            end,
            entity: entity.into(),
            attrs: String::new(),
        }
    }

    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }

    /// Document-order key.
    pub fn position(&self) -> (usize, usize, usize) {
        (self.sentence, self.start, self.end)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::fmt::Display for Mention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}@s{}[{}..={}]",
            self.entity, self.sentence, self.start, self.end
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub mentions: Vec<Mention>,
}

impl Entity {
    pub fn is_singleton(&self) -> bool {
        self.mentions.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    /// Dataset label; read from a `# corpus = NAME` comment, empty if absent.
    pub corpus_id: String,
    pub sentences: Vec<Sentence>,
    pub entities: Vec<Entity>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, corpus_id: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            corpus_id: corpus_id.into(),
            sentences: Vec::new(),
            entities: Vec::new(),
        }
    }

    /// All mentions in document order.
    pub fn mentions(&self) -> Vec<&Mention> {
        let mut all: Vec<&Mention> = self.entities.iter().flat_map(|e| &e.mentions).collect();
        all.sort_by(|a, b| {
            a.position()
                .cmp(&b.position())
                .then(a.entity.cmp(&b.entity))
        });
        all
    }

    /// Spans of every mention in sentence `sentence`, sorted.
    pub fn sentence_spans(&self, sentence: usize) -> Vec<Span> {
        let mut spans: Vec<Span> = self
            .entities
            .iter()
            .flat_map(|e| &e.mentions)
            .filter(|m| m.sentence == sentence)
            .map(Mention::span)
            .collect();
        spans.sort();
        spans
    }

    /// Puts mentions and entities into canonical order: mentions by
    /// position, entities by their first mention (then id).
    pub fn normalize(&mut self) {
        for entity in &mut self.entities {
            entity
                .mentions
                .sort_by(|a, b| a.position().cmp(&b.position()).then(a.attrs.cmp(&b.attrs)));
        }
        self.entities.sort_by(|a, b| {
            let ka = a.mentions.first().map(Mention::position);
            let kb = b.mentions.first().map(Mention::position);
            ka.cmp(&kb).then(a.id.cmp(&b.id))
        });
    }

    /// Checks the structural invariants the rest of the crate relies on.
    pub fn validate(&self) -> Result<(), CorefudError> {
        let invalid = |reason: String| CorefudError::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason,
        };
        let mut seen = HashMap::new();
        for entity in &self.entities {
            if seen.insert(entity.id.as_str(), ()).is_some() {
                return Err(invalid(format!("duplicate entity id `{}`", entity.id)));
            }
            if entity.mentions.is_empty() {
                return Err(invalid(format!("entity `{}` has no mentions", entity.id)));
            }
            for m in &entity.mentions {
                if m.entity != entity.id {
                    return Err(invalid(format!("mention {m} listed under `{}`", entity.id)));
                }
                let Some(sentence) = self.sentences.get(m.sentence) else {
                    return Err(invalid(format!("mention {m} refers to a missing sentence")));
                };
                if m.start > m.end || m.end >= sentence.len() {
                    return Err(invalid(format!("mention {m} is outside its sentence")));
                }
            }
        }
        Ok(())
    }
}

/// The head token of `span`: the first token whose parent lies outside the
/// span (or is the root). Falls back to the first token when every parent is
/// inside the span.
pub fn span_head(span: Span, tokens: &[Token]) -> usize {
    (span.start..=span.end)
        .find(|&t| match tokens[t].parent {
            None => true,
            Some(p) => p < span.start || p > span.end,
        })
        .unwrap_or(span.start)
}

pub fn mention_head(mention: &Mention, tokens: &[Token]) -> usize {
    span_head(mention.span(), tokens)
}

/// Splits a bracket label into entity id and uninterpreted suffix.
fn split_label(label: &str) -> (&str, &str) {
    match label.find('-') {
        Some(i) => (&label[..i], &label[i..]),
        None => (label, ""),
    }
}

#[derive(Debug, PartialEq)]
enum Bracket<'a> {
    Open { label: &'a str },
    Close { label: &'a str },
    Single { label: &'a str },
}

fn scan_brackets(value: &str, line: usize) -> Result<Vec<Bracket<'_>>, CorefudError> {
    let bytes = value.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let malformed = |reason: String| CorefudError::Malformed { line, reason };
    while i < bytes.len() {
        if bytes[i] == b'(' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j] != b'(' && bytes[j] != b')' {
                j += 1;
            }
            let label = &value[i + 1..j];
            if label.is_empty() {
                return Err(malformed(format!("empty entity label in `{value}`")));
            }
            if j < bytes.len() && bytes[j] == b')' {
                out.push(Bracket::Single { label });
                i = j + 1;
            } else {
                out.push(Bracket::Open { label });
                i = j;
            }
        } else {
            let mut j = i;
            while j < bytes.len() && bytes[j] != b'(' && bytes[j] != b')' {
                j += 1;
            }
            if j >= bytes.len() || bytes[j] != b')' {
                return Err(malformed(format!(
                    "unterminated closing bracket in `{value}`"
                )));
            }
            out.push(Bracket::Close {
                label: &value[i..j],
            });
            i = j + 1;
        }
    }
    Ok(out)
}

struct OpenMention {
    entity: String,
    attrs: String,
    start: usize,
    line: usize,
}

#[derive(Default)]
struct PendingSentence {
    id: Option<String>,
    text: Option<String>,
    comments: Vec<String>,
    tokens: Vec<Token>,
    token_lines: Vec<usize>,
    mentions: Vec<Mention>,
    open: Vec<OpenMention>,
    newdoc: Option<String>,
    corpus: Option<String>,
    first_line: usize,
}

impl PendingSentence {
    fn has_content(&self) -> bool {
        !self.tokens.is_empty()
    }
}

struct DocBuilder {
    doc: Document,
    entity_index: HashMap<String, usize>,
}

impl DocBuilder {
    fn new(doc_id: String, corpus_id: String) -> Self {
        DocBuilder {
            doc: Document::new(doc_id, corpus_id),
            entity_index: HashMap::new(),
        }
    }

    fn add_mention(&mut self, mention: Mention) {
        let idx = *self
            .entity_index
            .entry(mention.entity.clone())
            .or_insert_with(|| {
                self.doc.entities.push(Entity {
                    id: mention.entity.clone(),
                    mentions: Vec::new(),
                });
                self.doc.entities.len() - 1
            });
        self.doc.entities[idx].mentions.push(mention);
    }

    fn finish(mut self) -> Document {
        self.doc.normalize();
        self.doc
    }
}

fn check_tree(tokens: &[Token], lines: &[usize]) -> Result<(), CorefudError> {
    let n = tokens.len();
    for (i, token) in tokens.iter().enumerate() {
        if let Some(p) = token.parent {
            if p >= n {
                return Err(CorefudError::InvalidTree {
                    line: lines[i],
                    reason: format!("head {} is outside the sentence", p + 1),
                });
            }
            if p == i {
                return Err(CorefudError::InvalidTree {
                    line: lines[i],
                    reason: "token is its own head".into(),
                });
            }
        }
    }
    // Every token must reach a root within n steps.
    for (i, _) in tokens.iter().enumerate() {
        let mut cur = i;
        let mut steps = 0;
        while let Some(p) = tokens[cur].parent {
            cur = p;
            steps += 1;
            if steps > n {
                return Err(CorefudError::InvalidTree {
                    line: lines[i],
                    reason: "cycle in head relation".into(),
                });
            }
        }
    }
    Ok(())
}

fn parse_token_line(
    fields: &[&str],
    line: usize,
    pending: &mut PendingSentence,
) -> Result<(), CorefudError> {
    let malformed = |reason: String| CorefudError::Malformed { line, reason };
    let position = pending.tokens.len();
    let index: usize = fields[0]
        .parse()
        .map_err(|_| malformed(format!("invalid token id `{}`", fields[0])))?;
    if index != position + 1 {
        return Err(malformed(format!(
            "token id {index} out of sequence (expected {})",
            position + 1
        )));
    }
    let parent = match fields[6] {
        "_" | "0" => None,
        h => {
            let h: usize = h
                .parse()
                .map_err(|_| malformed(format!("invalid head `{h}`")))?;
            Some(h - 1)
        }
    };

    let mut misc = Vec::new();
    let mut entity_value = None;
    if fields[9] != "_" {
        for item in fields[9].split('|') {
            let (key, value) = item.split_once('=').unwrap_or((item, ""));
            if key == "Entity" {
                entity_value = Some(value);
            } else {
                misc.push((key.to_string(), value.to_string()));
            }
        }
    }

    if let Some(value) = entity_value {
        for bracket in scan_brackets(value, line)? {
            let label = match bracket {
                Bracket::Open { label } | Bracket::Close { label } | Bracket::Single { label } => {
                    label
                }
            };
            let (entity, attrs) = split_label(label);
            if label.contains('[') {
                return Err(CorefudError::Discontinuous {
                    line,
                    entity: entity.to_string(),
                });
            }
            match bracket {
                Bracket::Open { .. } => pending.open.push(OpenMention {
                    entity: entity.to_string(),
                    attrs: attrs.to_string(),
                    start: position,
                    line,
                }),
                Bracket::Single { .. } => pending.mentions.push(Mention {
                    sentence: 0,
                    start: position,
                    end: position,
                    entity: entity.to_string(),
                    attrs: attrs.to_string(),
                }),
                Bracket::Close { .. } => {
                    let found = pending.open.iter().rposition(|o| o.entity == entity);
                    let Some(found) = found else {
                        return Err(CorefudError::UnknownClose {
                            line,
                            entity: entity.to_string(),
                        });
                    };
                    let open = pending.open.remove(found);
                    pending.mentions.push(Mention {
                        sentence: 0,
                        start: open.start,
                        end: position,
                        entity: open.entity,
                        attrs: open.attrs,
                    });
                }
            }
        }
    }

    pending.tokens.push(Token {
        index,
        form: fields[1].to_string(),
        lemma: fields[2].to_string(),
        upos: fields[3].to_string(),
        xpos: fields[4].to_string(),
        feats: fields[5].to_string(),
        parent,
        deprel: fields[7].to_string(),
        deps: fields[8].to_string(),
        misc,
    });
    pending.token_lines.push(line);
    Ok(())
}

/// Parses a CorefUD CoNLL-U stream into documents.
pub fn parse_corefud(text: &str) -> Result<Vec<Document>, CorefudError> {
    let mut docs = Vec::new();
    let mut current: Option<DocBuilder> = None;
    let mut pending = PendingSentence::default();

    let flush = |pending: &mut PendingSentence,
                 current: &mut Option<DocBuilder>,
                 docs: &mut Vec<Document>|
     -> Result<(), CorefudError> {
        let sentence = std::mem::take(pending);
        if let Some(open) = sentence.open.first() {
            return Err(CorefudError::UnclosedMention {
                line: open.line,
                entity: open.entity.clone(),
            });
        }
        check_tree(&sentence.tokens, &sentence.token_lines)?;
        let sent_id = sentence.id.unwrap_or_default();
        if let Some(doc_id) = sentence.newdoc {
            if let Some(done) = current.take() {
                docs.push(done.finish());
            }
            *current = Some(DocBuilder::new(doc_id, sentence.corpus.unwrap_or_default()));
        }
        let Some(builder) = current.as_mut() else {
            return Err(CorefudError::MissingDocHeader {
                line: sentence.first_line,
                sent_id,
            });
        };
        let index = builder.doc.sentences.len();
        for mut m in sentence.mentions {
            m.sentence = index;
            builder.add_mention(m);
        }
        builder.doc.sentences.push(Sentence {
            id: sent_id,
            text: sentence.text,
            comments: sentence.comments,
            tokens: sentence.tokens,
        });
        Ok(())
    };

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            if pending.has_content() {
                flush(&mut pending, &mut current, &mut docs)?;
            }
            continue;
        }
        if pending.first_line == 0 {
            pending.first_line = line;
        }
        if let Some(comment) = raw.strip_prefix('#') {
            if pending.has_content() {
                return Err(CorefudError::Malformed {
                    line,
                    reason: "comment line inside a sentence".into(),
                });
            }
            let body = comment.trim();
            let value_of = |key: &str| -> Option<String> {
                let rest = body.strip_prefix(key)?.trim_start();
                let rest = rest.strip_prefix('=')?;
                Some(rest.trim().to_string())
            };
            if let Some(v) = value_of("newdoc id") {
                pending.newdoc = Some(v);
            } else if body == "newdoc" {
                pending.newdoc = Some(String::new());
            } else if let Some(v) = value_of("corpus") {
                pending.corpus = Some(v);
            } else if let Some(v) = value_of("sent_id") {
                pending.id = Some(v);
            } else if let Some(v) = value_of("text") {
                pending.text = Some(v);
            } else {
                pending.comments.push(raw.to_string());
            }
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 10 {
            return Err(CorefudError::Malformed {
                line,
                reason: format!("expected 10 tab-separated columns, found {}", fields.len()),
            });
        }
        if fields[0].contains('-') || fields[0].contains('.') {
            continue;
        }
        parse_token_line(&fields, line, &mut pending)?;
    }
    if pending.has_content() {
        flush(&mut pending, &mut current, &mut docs)?;
    }
    if let Some(done) = current.take() {
        docs.push(done.finish());
    }
    Ok(docs)
}

/// Builds the `Entity=` value for every token of one sentence.
fn sentence_brackets(
    doc: &Document,
    sentence: usize,
    mentions: &[&Mention],
) -> Result<Vec<String>, CorefudError> {
    let n = doc.sentences[sentence].len();
    let mut fields = vec![String::new(); n];
    // Mentions currently open, in opening order.
    let mut open: Vec<&Mention> = Vec::new();
    for (t, field) in fields.iter_mut().enumerate() {
        let mut closes: Vec<&Mention> = mentions
            .iter()
            .copied()
            .filter(|m| m.end == t && m.start < t)
            .collect();
        closes.sort_by(|a, b| b.start.cmp(&a.start).then(a.entity.cmp(&b.entity)));
        for m in closes {
            // The reader closes the most recent open mention of this entity.
            let pos = open
                .iter()
                .rposition(|o| o.entity == m.entity)
                .expect("every multi-token mention is opened before it closes");
            if open[pos].end != t {
                return Err(CorefudError::Ambiguous {
                    doc_id: doc.doc_id.clone(),
                    first: m.to_string(),
                    second: open[pos].to_string(),
                });
            }
            open.remove(pos);
            let _ = write!(field, "{})", m.entity);
        }
        let mut opens: Vec<&Mention> = mentions
            .iter()
            .copied()
            .filter(|m| m.start == t && m.end > t)
            .collect();
        opens.sort_by(|a, b| {
            b.end
                .cmp(&a.end)
                .then(a.entity.cmp(&b.entity))
                .then(a.attrs.cmp(&b.attrs))
        });
        for m in opens {
            let _ = write!(field, "({}{}", m.entity, m.attrs);
            open.push(m);
        }
        let mut singles: Vec<&Mention> = mentions
            .iter()
            .copied()
            .filter(|m| m.start == t && m.end == t)
            .collect();
        singles.sort_by(|a, b| a.entity.cmp(&b.entity).then(a.attrs.cmp(&b.attrs)));
        for m in singles {
            let _ = write!(field, "({}{})", m.entity, m.attrs);
        }
    }
    Ok(fields)
}

fn write_token(out: &mut String, token: &Token, entity: &str) {
    let head = token.parent.map_or(0, |p| p + 1);
    let mut misc: Vec<String> = Vec::with_capacity(token.misc.len() + 1);
    if !entity.is_empty() {
        misc.push(format!("Entity={entity}"));
    }
    for (k, v) in &token.misc {
        if v.is_empty() {
            misc.push(k.clone());
        } else {
            misc.push(format!("{k}={v}"));
        }
    }
    let misc = if misc.is_empty() {
        "_".to_string()
    } else {
        misc.join("|")
    };
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        token.index,
        token.form,
        token.lemma,
        token.upos,
        token.xpos,
        token.feats,
        head,
        token.deprel,
        token.deps,
        misc
    );
}

/// Serializes documents as CorefUD CoNLL-U.
pub fn write_corefud(docs: &[Document]) -> Result<String, CorefudError> {
    let mut out = String::new();
    for doc in docs {
        doc.validate()?;
        if doc.sentences.is_empty() {
            return Err(CorefudError::EmptyDocument {
                doc_id: doc.doc_id.clone(),
            });
        }
        let mut by_sentence: Vec<Vec<&Mention>> = vec![Vec::new(); doc.sentences.len()];
        for m in doc.entities.iter().flat_map(|e| &e.mentions) {
            by_sentence[m.sentence].push(m);
        }
        for (s, sentence) in doc.sentences.iter().enumerate() {
            if s == 0 {
                let _ = writeln!(out, "# newdoc id = {}", doc.doc_id);
                if !doc.corpus_id.is_empty() {
                    let _ = writeln!(out, "# corpus = {}", doc.corpus_id);
                }
            }
            let _ = writeln!(out, "# sent_id = {}", sentence.id);
            if let Some(text) = &sentence.text {
                let _ = writeln!(out, "# text = {text}");
            }
            for c in &sentence.comments {
                out.push_str(c);
                out.push('\n');
            }
            let brackets = sentence_brackets(doc, s, &by_sentence[s])?;
            for (token, entity) in sentence.tokens.iter().zip(&brackets) {
                write_token(&mut out, token, entity);
            }
            out.push('\n');
        }
    }
    Ok(out)
}
