//! Record schema DSL and packed record layout.
//!
//! ```text
//! # comment
//! schema particle {
//!     field x   : f64 x3;
//!     field rho : f32 @truncate(16);
//!     field id  : i64;
//! }
//! kernel density reads x, m, h writes rho;
//! ```
//!
//! Field declarations may also appear at top level without a `schema` block.
//! Layouts are padding-free: each field occupies `arity` consecutive lanes of
//! its stored width, and fields follow each other in declaration order.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::bitpack::FieldSlot;
use crate::fpcodec::{layout_for, BaseFormat, PrecisionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    F32,
    F64,
    I64,
}

impl ScalarKind {
    pub fn width(self) -> u32 {
        match self {
            ScalarKind::F32 => 32,
            ScalarKind::F64 | ScalarKind::I64 => 64,
        }
    }

    pub fn is_float(self) -> bool {
        !matches!(self, ScalarKind::I64)
    }

    fn keyword(self) -> &'static str {
        match self {
            ScalarKind::F32 => "f32",
            ScalarKind::F64 => "f64",
            ScalarKind::I64 => "i64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldDecl {
    pub name: String,
    pub kind: ScalarKind,
    pub arity: u32,
    pub truncation: Option<u32>,
}

impl FieldDecl {
    pub fn scalar(name: &str, kind: ScalarKind) -> Self {
        FieldDecl {
            name: name.to_string(),
            kind,
            arity: 1,
            truncation: None,
        }
    }

    pub fn vector(name: &str, kind: ScalarKind) -> Self {
        FieldDecl {
            arity: 3,
            ..FieldDecl::scalar(name, kind)
        }
    }

    pub fn truncated(mut self, bits: u32) -> Self {
        self.truncation = Some(bits);
        self
    }

    /// Storage format of a floating field; `None` for integers.
    pub fn precision(&self) -> Option<PrecisionSpec> {
        if !self.kind.is_float() {
            return None;
        }
        let bits = self.truncation.unwrap_or(self.kind.width());
        // validated at construction
        Some(layout_for(bits).expect("validated truncation width"))
    }

    /// Bits per lane in compressed storage.
    pub fn stored_width(&self) -> u32 {
        match self.precision() {
            Some(p) => p.total_bits(),
            None => self.kind.width(),
        }
    }

    /// Bits per lane once unpacked to the base IEEE format.
    pub fn native_width(&self) -> u32 {
        match self.precision() {
            Some(p) => p.base().width(),
            None => self.kind.width(),
        }
    }

    pub fn native_format(&self) -> Option<BaseFormat> {
        self.precision().map(|p| p.base())
    }
}

impl fmt::Display for FieldDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field {} : {}", self.name, self.kind.keyword())?;
        if self.arity == 3 {
            write!(f, " x3")?;
        }
        if let Some(t) = self.truncation {
            write!(f, " @truncate({t})")?;
        }
        write!(f, ";")
    }
}

/// Ordered field declarations plus their compressed AoS layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSchema {
    name: String,
    fields: Vec<FieldDecl>,
    offsets: Vec<usize>,
    record_bits: usize,
}

impl RecordSchema {
    pub fn new(name: &str, fields: Vec<FieldDecl>) -> Result<Self, SchemaError> {
        let mut seen = BTreeSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
            if f.arity != 1 && f.arity != 3 {
                return Err(SchemaError::BadArity(f.name.clone(), f.arity));
            }
            if let Some(t) = f.truncation {
                if !f.kind.is_float() {
                    return Err(SchemaError::TruncatedInteger(f.name.clone()));
                }
                layout_for(t).map_err(|_| SchemaError::TruncationRange(f.name.clone(), t))?;
            }
        }
        let mut offsets = Vec::with_capacity(fields.len());
        let mut acc = 0usize;
        for f in &fields {
            offsets.push(acc);
            acc += (f.arity * f.stored_width()) as usize;
        }
        Ok(RecordSchema {
            name: name.to_string(),
            fields,
            offsets,
            record_bits: acc,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[FieldDecl] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, i: usize) -> &FieldDecl {
        &self.fields[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Bits per compressed record.
    pub fn record_bits(&self) -> usize {
        self.record_bits
    }

    /// Bits per record with every field at its native width.
    pub fn native_record_bits(&self) -> usize {
        self.fields
            .iter()
            .map(|f| (f.arity * f.native_width()) as usize)
            .sum()
    }

    /// Offset of field `i` within a compressed record.
    pub fn field_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn lane_slot(&self, field: usize, lane: u32) -> FieldSlot {
        let f = &self.fields[field];
        FieldSlot::new(
            self.offsets[field] + (lane * f.stored_width()) as usize,
            f.stored_width(),
        )
    }

    /// Same schema with every floating field not named in `keep` stored at
    /// `bits` total width.
    pub fn with_uniform_truncation(&self, bits: u32, keep: &[&str]) -> Result<Self, SchemaError> {
        let fields = self
            .fields
            .iter()
            .map(|f| {
                let mut f = f.clone();
                if f.kind.is_float() && !keep.contains(&f.name.as_str()) {
                    f.truncation = Some(bits);
                }
                f
            })
            .collect();
        RecordSchema::new(&self.name, fields)
    }
}

impl fmt::Display for RecordSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "schema {} {{", self.name)?;
        for field in &self.fields {
            writeln!(f, "    {field}")?;
        }
        writeln!(f, "}}")
    }
}

/// Lane slots of every field in declaration order.
pub fn compute_layout(schema: &RecordSchema) -> Vec<FieldSlot> {
    (0..schema.len())
        .flat_map(|i| (0..schema.field(i).arity).map(move |lane| (i, lane)))
        .map(|(i, lane)| schema.lane_slot(i, lane))
        .collect()
}

/// Fields a kernel reads and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelAccessSet {
    pub kernel: String,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
}

impl KernelAccessSet {
    pub fn new<'a>(
        kernel: &str,
        reads: impl IntoIterator<Item = &'a str>,
        writes: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        KernelAccessSet {
            kernel: kernel.to_string(),
            reads: reads.into_iter().map(str::to_string).collect(),
            writes: writes.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn touched(&self) -> BTreeSet<&str> {
        self.reads
            .iter()
            .chain(self.writes.iter())
            .map(String::as_str)
            .collect()
    }

    /// Check every named field exists in `schema`.
    pub fn validate(&self, schema: &RecordSchema) -> Result<(), SchemaError> {
        if self.reads.is_empty() && self.writes.is_empty() {
            return Err(SchemaError::EmptyAccessSet(self.kernel.clone()));
        }
        for name in self.touched() {
            if schema.index_of(name).is_none() {
                return Err(SchemaError::UnknownField(name.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for KernelAccessSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kernel {}", self.kernel)?;
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        if !self.reads.is_empty() {
            write!(f, " reads {}", join(&self.reads))?;
        }
        if !self.writes.is_empty() {
            write!(f, " writes {}", join(&self.writes))?;
        }
        write!(f, ";")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("field `{0}` has arity {1}; expected 1 or 3")]
    BadArity(String, u32),
    #[error("field `{0}`: truncation is only allowed on floating-point fields")]
    TruncatedInteger(String),
    #[error("field `{0}`: truncation width {1} is outside 7..=64")]
    TruncationRange(String, u32),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("kernel `{0}` reads and writes nothing")]
    EmptyAccessSet(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("unknown base kind `{0}` (expected f32, f64 or i64)")]
    UnknownKind(String),
    #[error("truncation width {0} is outside 7..=64")]
    TruncationRange(u64),
    #[error("truncation on integer field `{0}`")]
    TruncatedInteger(String),
    #[error("kernel `{kernel}` names unknown field `{field}`")]
    UnknownField { kernel: String, field: String },
    #[error("kernel `{0}` declared twice")]
    DuplicateKernel(String),
    #[error("kernel `{0}` reads and writes nothing")]
    EmptyAccessSet(String),
    #[error("expected {expected}, found {found}")]
    Unexpected {
        expected: &'static str,
        found: String,
    },
    #[error("unexpected character `{0}`")]
    BadChar(char),
}

/// A parsed schema file: the record schema plus any kernel access sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDocument {
    pub schema: RecordSchema,
    pub kernels: Vec<KernelAccessSet>,
}

impl fmt::Display for SchemaDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.schema)?;
        for k in &self.kernels {
            writeln!(f, "{k}")?;
        }
        Ok(())
    }
}

pub fn parse_document(text: &str) -> Result<SchemaDocument, ParseError> {
    Parser::new(text)?.document()
}

pub fn parse_schema(text: &str) -> Result<RecordSchema, ParseError> {
    parse_document(text).map(|d| d.schema)
}

pub fn parse_access_sets(text: &str) -> Result<Vec<KernelAccessSet>, ParseError> {
    parse_document(text).map(|d| d.kernels)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Punct(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: tl,
                column: tc,
            });
        } else if c.is_ascii_digit() {
            let mut n: u64 = 0;
            while let Some(&c) = chars.peek() {
                if let Some(d) = c.to_digit(10) {
                    n = n.saturating_mul(10).saturating_add(d as u64);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Int(n),
                line: tl,
                column: tc,
            });
        } else if "{}:;,@()".contains(c) {
            chars.next();
            col += 1;
            out.push(Token {
                tok: Tok::Punct(c),
                line: tl,
                column: tc,
            });
        } else {
            return Err(ParseError {
                line,
                column: col,
                kind: ParseErrorKind::BadChar(c),
            });
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

/// Access set, token index of its name, token index per named field.
type PendingKernel = (KernelAccessSet, usize, Vec<(String, usize)>);

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn err_here(&self, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            line: t.line,
            column: t.column,
            kind,
        }
    }

    fn err_at(&self, at: usize, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[at];
        ParseError {
            line: t.line,
            column: t.column,
            kind,
        }
    }

    fn unexpected(&self, expected: &'static str) -> ParseError {
        self.err_here(ParseErrorKind::Unexpected {
            expected,
            found: self.peek().to_string(),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn punct(&mut self, c: char, expected: &'static str) -> Result<(), ParseError> {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn ident(&mut self, expected: &'static str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(expected)),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn document(&mut self) -> Result<SchemaDocument, ParseError> {
        let mut name = String::from("record");
        let mut fields: Vec<(FieldDecl, usize)> = Vec::new();
        let mut kernels: Vec<PendingKernel> = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "schema" => {
                    self.bump();
                    name = self.ident("schema name")?;
                    self.punct('{', "`{`")?;
                    while !matches!(self.peek(), Tok::Punct('}')) {
                        if !self.is_keyword("field") {
                            return Err(self.unexpected("`field` or `}`"));
                        }
                        fields.push(self.field(&fields)?);
                    }
                    self.bump();
                }
                Tok::Ident(kw) if kw == "field" => {
                    fields.push(self.field(&fields)?);
                }
                Tok::Ident(kw) if kw == "kernel" => {
                    let k = self.kernel()?;
                    if kernels.iter().any(|(o, _, _)| o.kernel == k.0.kernel) {
                        return Err(self.err_at(k.1, ParseErrorKind::DuplicateKernel(k.0.kernel)));
                    }
                    kernels.push(k);
                }
                _ => return Err(self.unexpected("`schema`, `field` or `kernel`")),
            }
        }
        let schema = RecordSchema::new(&name, fields.into_iter().map(|(f, _)| f).collect())
            .expect("field declarations validated while parsing");
        for (k, at, names) in &kernels {
            for (field, fat) in names {
                if schema.index_of(field).is_none() {
                    return Err(self.err_at(
                        *fat,
                        ParseErrorKind::UnknownField {
                            kernel: k.kernel.clone(),
                            field: field.clone(),
                        },
                    ));
                }
            }
            if k.reads.is_empty() && k.writes.is_empty() {
                return Err(self.err_at(*at, ParseErrorKind::EmptyAccessSet(k.kernel.clone())));
            }
        }
        Ok(SchemaDocument {
            schema,
            kernels: kernels.into_iter().map(|(k, _, _)| k).collect(),
        })
    }

    fn field(&mut self, prior: &[(FieldDecl, usize)]) -> Result<(FieldDecl, usize), ParseError> {
        self.bump(); // `field`
        let name_at = self.pos;
        let name = self.ident("field name")?;
        if prior.iter().any(|(f, _)| f.name == name) {
            return Err(self.err_at(name_at, ParseErrorKind::DuplicateField(name)));
        }
        self.punct(':', "`:`")?;
        let kind_at = self.pos;
        let kind = match self.ident("base kind")?.as_str() {
            "f32" => ScalarKind::F32,
            "f64" => ScalarKind::F64,
            "i64" => ScalarKind::I64,
            other => {
                return Err(self.err_at(kind_at, ParseErrorKind::UnknownKind(other.to_string())))
            }
        };
        let mut decl = FieldDecl::scalar(&name, kind);
        if self.is_keyword("x3") {
            self.bump();
            decl.arity = 3;
        }
        if *self.peek() == Tok::Punct('@') {
            let at = self.pos;
            self.bump();
            if !self.is_keyword("truncate") {
                return Err(self.unexpected("`truncate`"));
            }
            self.bump();
            self.punct('(', "`(`")?;
            let width_at = self.pos;
            let width = match self.bump() {
                Tok::Int(n) => n,
                _ => {
                    self.pos = width_at;
                    return Err(self.unexpected("integer width"));
                }
            };
            self.punct(')', "`)`")?;
            if !kind.is_float() {
                return Err(self.err_at(at, ParseErrorKind::TruncatedInteger(name)));
            }
            if !(PrecisionSpec::MIN_BITS as u64..=PrecisionSpec::MAX_BITS as u64).contains(&width) {
                return Err(self.err_at(width_at, ParseErrorKind::TruncationRange(width)));
            }
            decl.truncation = Some(width as u32);
        }
        self.punct(';', "`;`")?;
        Ok((decl, name_at))
    }

    #[allow(clippy::type_complexity)]
    fn kernel(&mut self) -> Result<(KernelAccessSet, usize, Vec<(String, usize)>), ParseError> {
        self.bump(); // `kernel`
        let at = self.pos;
        let name = self.ident("kernel name")?;
        let mut set = KernelAccessSet::new(&name, [], []);
        let mut named = Vec::new();
        loop {
            let into_writes = if self.is_keyword("reads") {
                false
            } else if self.is_keyword("writes") {
                true
            } else {
                break;
            };
            self.bump();
            loop {
                let fat = self.pos;
                let f = self.ident("field name")?;
                named.push((f.clone(), fat));
                if into_writes {
                    set.writes.insert(f);
                } else {
                    set.reads.insert(f);
                }
                if *self.peek() == Tok::Punct(',') {
                    self.bump();
                    continue;
                }
                match self.peek() {
                    Tok::Ident(s) if s != "reads" && s != "writes" => continue,
                    _ => break,
                }
            }
        }
        self.punct(';', "`reads`, `writes` or `;`")?;
        Ok((set, at, named))
    }
}

/// The particle record used throughout the workload: positions in binary64,
/// every other floating quantity in binary32, plus a 64-bit id.
pub const PARTICLE_SCHEMA: &str = "\
schema particle {
    field x : f64 x3;
    field v : f32 x3;
    field u : f32;
    field m : f32;
    field h : f32;
    field rho : f32;
    field P : f32;
    field cs : f32;
    field a : f32 x3;
    field du : f32;
    field dt : f32;
    field id : i64;
}
kernel density reads x, m, h writes rho;
kernel force reads x, v, m, h, rho, P, cs writes a, du;
kernel kick reads v, u, a, du writes v, u;
kernel drift reads x, v writes x;
";

pub fn particle_document() -> SchemaDocument {
    parse_document(PARTICLE_SCHEMA).expect("built-in schema parses")
}
