//! Parser-output ingestion and the gold evidence dataset.
//!
//! Two parser output styles are accepted: layout-marked Markdown (headers,
//! paragraphs, pipe tables) and plain extracted lines. Both are normalized
//! into an ordered list of [`Block`]s whose texts, joined by single spaces,
//! form the document's canonical full text.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result, Violation};
use crate::stance::QueryId;

/// NFC-normalizes, collapses whitespace runs to one space and trims. Case is kept.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A stance label on the −2..=+2 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Stance(i8);

impl Stance {
    pub const ALL: [Stance; 5] = [Stance(-2), Stance(-1), Stance(0), Stance(1), Stance(2)];

    pub fn new(value: i64) -> Result<Self> {
        if (-2..=2).contains(&value) {
            Ok(Stance(value as i8))
        } else {
            Err(Error::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    pub fn sign(self) -> i8 {
        self.0.signum()
    }

    /// Canonical signless label used in prompts and completions ("-2".."2").
    pub fn label(self) -> String {
        self.0.to_string()
    }

    /// Accepts both "+2" and "2" style labels.
    pub fn parse_label(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix('+').unwrap_or(t);
        let v: i64 = t
            .parse()
            .map_err(|_| Error::InvalidInput(format!("not a stance label: {s:?}")))?;
        Stance::new(v)
    }
}

impl TryFrom<i64> for Stance {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        Stance::new(v)
    }
}

impl From<Stance> for i64 {
    fn from(s: Stance) -> i64 {
        s.0 as i64
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMetadata {
    pub company: String,
    pub language: String,
    pub region: String,
    pub date: NaiveDate,
    #[serde(default)]
    pub source_name: String,
}

impl DocumentMetadata {
    pub fn validate(&self) -> Result<()> {
        if !is_language_code(&self.language) {
            return Err(Error::InvalidInput(format!(
                "language must be a two-letter ISO-639-1 code, got {:?}",
                self.language
            )));
        }
        Ok(())
    }

    pub fn is_english(&self) -> bool {
        self.language == "en"
    }
}

fn is_language_code(s: &str) -> bool {
    s.len() == 2 && s.bytes().all(|b| b.is_ascii_lowercase())
}

/// Language grouping used by every aggregate: all records, English, everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LanguageGroup {
    All,
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "Non-EN")]
    NonEn,
}

impl LanguageGroup {
    pub const ALL: [LanguageGroup; 3] = [LanguageGroup::All, LanguageGroup::En, LanguageGroup::NonEn];

    pub fn contains(self, language: &str) -> bool {
        match self {
            LanguageGroup::All => true,
            LanguageGroup::En => language == "en",
            LanguageGroup::NonEn => language != "en",
        }
    }
}

impl fmt::Display for LanguageGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LanguageGroup::All => "All",
            LanguageGroup::En => "EN",
            LanguageGroup::NonEn => "Non-EN",
        })
    }
}

impl std::str::FromStr for LanguageGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(LanguageGroup::All),
            "en" => Ok(LanguageGroup::En),
            "non-en" | "non_en" | "nonen" => Ok(LanguageGroup::NonEn),
            _ => Err(Error::InvalidInput(format!("unknown language group {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Header,
    Paragraph,
    Table,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub text: String,
    pub ordinal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParserStyle {
    LayoutMarkdown,
    PlainLines,
}

impl ParserStyle {
    pub const ALL: [ParserStyle; 2] = [ParserStyle::LayoutMarkdown, ParserStyle::PlainLines];
}

impl fmt::Display for ParserStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParserStyle::LayoutMarkdown => "layout_markdown",
            ParserStyle::PlainLines => "plain_lines",
        })
    }
}

impl std::str::FromStr for ParserStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "layout_markdown" | "layout" => Ok(ParserStyle::LayoutMarkdown),
            "plain_lines" | "plain" => Ok(ParserStyle::PlainLines),
            _ => Err(Error::InvalidInput(format!("unknown parser style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub doc_id: String,
    pub blocks: Vec<Block>,
    pub metadata: DocumentMetadata,
    pub parser_style: ParserStyle,
}

impl ParsedDocument {
    /// Block texts joined by single spaces, in ordinal order.
    pub fn full_text(&self) -> String {
        self.blocks.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join(" ")
    }
}

/// Wire payload for uploading one parsed document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadPayload {
    pub doc_id: String,
    pub parser_style: ParserStyle,
    pub raw_text: String,
    pub metadata: DocumentMetadata,
}

impl UploadPayload {
    pub fn ingest(&self) -> Result<ParsedDocument> {
        if self.doc_id.trim().is_empty() {
            return Err(Error::InvalidInput("doc_id must not be empty".into()));
        }
        let mut doc = match self.parser_style {
            ParserStyle::LayoutMarkdown => ingest_layout_markdown(&self.raw_text, self.metadata.clone())?,
            ParserStyle::PlainLines => ingest_plain_lines(&self.raw_text, self.metadata.clone())?,
        };
        doc.doc_id = self.doc_id.clone();
        Ok(doc)
    }
}

fn new_document(blocks: Vec<Block>, metadata: DocumentMetadata, style: ParserStyle) -> Result<ParsedDocument> {
    metadata.validate()?;
    if blocks.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let doc_id = metadata.source_name.clone();
    Ok(ParsedDocument { doc_id, blocks, metadata, parser_style: style })
}

struct BlockBuilder {
    blocks: Vec<Block>,
    pending: Vec<String>,
    pending_kind: BlockKind,
}

impl BlockBuilder {
    fn new() -> Self {
        Self { blocks: Vec::new(), pending: Vec::new(), pending_kind: BlockKind::Paragraph }
    }

    fn push_line(&mut self, kind: BlockKind, line: &str) {
        if kind != self.pending_kind {
            self.flush();
            self.pending_kind = kind;
        }
        self.pending.push(line.to_string());
    }

    fn emit(&mut self, kind: BlockKind, text: &str) {
        self.flush();
        let text = normalize_text(text);
        if !text.is_empty() {
            let ordinal = self.blocks.len();
            self.blocks.push(Block { kind, text, ordinal });
        }
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let text = normalize_text(&self.pending.join(" "));
        self.pending.clear();
        if !text.is_empty() {
            let ordinal = self.blocks.len();
            self.blocks.push(Block { kind: self.pending_kind, text, ordinal });
        }
    }
}

fn header_text(line: &str) -> Option<&str> {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if !(1..=6).contains(&hashes) {
        return None;
    }
    let rest = &line[hashes..];
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest.trim())
    } else {
        None
    }
}

/// Classifies layout-marked Markdown into header, table, paragraph and other blocks.
pub fn ingest_layout_markdown(raw: &str, metadata: DocumentMetadata) -> Result<ParsedDocument> {
    let mut b = BlockBuilder::new();
    for line in raw.lines() {
        let t = line.trim();
        if t.is_empty() {
            b.flush();
        } else if let Some(h) = header_text(t) {
            b.emit(BlockKind::Header, h);
        } else if t.starts_with('|') {
            b.push_line(BlockKind::Table, t);
        } else if t.starts_with("<!--") && t.ends_with("-->") {
            b.emit(BlockKind::Other, t);
        } else {
            b.push_line(BlockKind::Paragraph, t);
        }
    }
    b.flush();
    new_document(b.blocks, metadata, ParserStyle::LayoutMarkdown)
}

/// Blank-line separated runs of plain lines become paragraphs.
pub fn ingest_plain_lines(raw: &str, metadata: DocumentMetadata) -> Result<ParsedDocument> {
    let mut b = BlockBuilder::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            b.flush();
        } else {
            b.push_line(BlockKind::Paragraph, line);
        }
    }
    b.flush();
    new_document(b.blocks, metadata, ParserStyle::PlainLines)
}

/// One gold instance: evidence text and stance for one query over one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub doc_id: String,
    pub query_id: QueryId,
    pub gold_evidence: String,
    pub stance: Stance,
    pub comment: String,
    pub metadata: DocumentMetadata,
}

/// Flat on-disk layout of a dataset line.
#[derive(Serialize)]
struct DatasetRow<'a> {
    doc_id: &'a str,
    query_id: u8,
    evidence: &'a str,
    stance: i64,
    comment: &'a str,
    company: &'a str,
    language: &'a str,
    region: &'a str,
    date: String,
}

impl EvidenceRecord {
    pub fn to_dataset_line(&self) -> String {
        let row = DatasetRow {
            doc_id: &self.doc_id,
            query_id: self.query_id.get(),
            evidence: &self.gold_evidence,
            stance: self.stance.into(),
            comment: &self.comment,
            company: &self.metadata.company,
            language: &self.metadata.language,
            region: &self.metadata.region,
            date: self.metadata.date.format("%Y-%m-%d").to_string(),
        };
        serde_json::to_string(&row).expect("dataset row serializes")
    }
}

fn parse_dataset_line(line_no: usize, line: &str, out: &mut Vec<Violation>) -> Option<EvidenceRecord> {
    let viol = |field: &str, message: String| Violation { line: line_no, field: field.to_string(), message };
    let obj: Map<String, Value> = match serde_json::from_str(line) {
        Ok(Value::Object(m)) => m,
        Ok(_) => {
            out.push(viol("<record>", "expected a JSON object".into()));
            return None;
        }
        Err(e) => {
            out.push(viol("<record>", e.to_string()));
            return None;
        }
    };
    let before = out.len();
    let mut string_field = |name: &str, allow_empty: bool| -> String {
        match obj.get(name) {
            Some(Value::String(s)) if allow_empty || !s.trim().is_empty() => s.clone(),
            Some(Value::String(_)) => {
                out.push(viol(name, "must not be empty".into()));
                String::new()
            }
            Some(_) => {
                out.push(viol(name, "must be a string".into()));
                String::new()
            }
            None => {
                out.push(viol(name, "missing".into()));
                String::new()
            }
        }
    };
    let doc_id = string_field("doc_id", false);
    let evidence = string_field("evidence", false);
    let comment = string_field("comment", true);
    let company = string_field("company", true);
    let language = string_field("language", false);
    let region = string_field("region", true);
    let date_raw = string_field("date", false);

    let query_id = match obj.get("query_id").and_then(Value::as_i64) {
        Some(q) => match QueryId::new(q) {
            Ok(q) => Some(q),
            Err(_) => {
                out.push(viol("query_id", format!("{q} is not in 1..=13")));
                None
            }
        },
        None => {
            out.push(viol("query_id", "missing or not an integer".into()));
            None
        }
    };
    let stance = match obj.get("stance").and_then(Value::as_i64) {
        Some(s) => match Stance::new(s) {
            Ok(s) => Some(s),
            Err(_) => {
                out.push(viol("stance", format!("{s} is not in {{-2,-1,0,1,2}}")));
                None
            }
        },
        None => {
            out.push(viol("stance", "missing or not an integer".into()));
            None
        }
    };
    if !language.is_empty() && !is_language_code(&language) {
        out.push(viol("language", format!("{language:?} is not a two-letter code")));
    }
    let date = if date_raw.is_empty() {
        None
    } else {
        match NaiveDate::parse_from_str(&date_raw, "%Y-%m-%d") {
            Ok(d) => Some(d),
            Err(_) => {
                out.push(viol("date", format!("{date_raw:?} is not an ISO-8601 date")));
                None
            }
        }
    };
    if out.len() != before {
        return None;
    }
    Some(EvidenceRecord {
        metadata: DocumentMetadata {
            company,
            language,
            region,
            date: date?,
            source_name: doc_id.clone(),
        },
        doc_id,
        query_id: query_id?,
        gold_evidence: evidence,
        stance: stance?,
        comment,
    })
}

/// Parses line-delimited dataset records; every invalid line is reported.
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<EvidenceRecord>> {
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(r) = parse_dataset_line(i + 1, &line, &mut violations) {
            records.push(r);
        }
    }
    if violations.is_empty() {
        Ok(records)
    } else {
        Err(Error::SchemaViolation(violations))
    }
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvidenceRecord>> {
    let file = std::fs::File::open(path)?;
    parse_dataset(std::io::BufReader::new(file))
}

pub fn write_dataset(path: &Path, records: &[EvidenceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(f, "{}", r.to_dataset_line())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads upload payloads from a `.jsonl` file, or every `.jsonl` file of a directory in name order.
pub fn load_payloads(path: &Path) -> Result<Vec<UploadPayload>> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: UploadPayload = serde_json::from_str(line)
                .map_err(|e| Error::format(format!("{}:{}", f.display(), i + 1), e))?;
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn test_metadata(language: &str) -> DocumentMetadata {
    DocumentMetadata {
        company: "Acme".into(),
        language: language.into(),
        region: "EU".into(),
        date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
        source_name: String::new(),
    }
}
