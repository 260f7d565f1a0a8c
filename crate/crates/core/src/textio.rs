//! Textual IR: parser, canonical printer, trace lines and JSON reports.
//!
//! ```text
//! type Pt(Int, Int) <: APt
//!
//! method x(Pt) {
//!   %1 = field %0 0
//! }
//! ```
//!
//! Compiled instances carry their origin signature in a trailing comment on
//! the method line, `method f(Pt) {  # origin: f(APt)`, and may contain
//! `invoke` instructions. Both are accepted only in [`ParseMode::Compiled`].

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::interp::{Entry, StepEvent, Value};
use crate::ir::{Body, Instr, Method, MethodTable, Op, Reg, SigDisplay, Type, TypeDecl, TypeTable, ANY, INT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    /// Source programs: originals only.
    Source,
    /// Dumps of compiled tables: instances and direct calls allowed.
    Compiled,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(String),
    Reg(String),
    Punct(&'static str),
    /// Text after `# origin:` in a comment.
    Origin(String),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(s) => write!(f, "integer `{s}`"),
            Tok::Reg(s) => write!(f, "register `%{s}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Origin(_) => f.write_str("origin annotation"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

const PUNCT: [&str; 9] = ["<:", "(", ")", "{", "}", "[", "]", ",", "="];

fn lex(src: &str, origin: Pos) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    let (mut line, mut col) = (origin.line, origin.col);
    let advance = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while let Some(&(i, c)) = chars.peek() {
        let pos = Pos { line, col };
        if c.is_whitespace() {
            chars.next();
            advance(c, &mut line, &mut col);
            continue;
        }
        if c == '#' {
            let end = src[i..].find('\n').map_or(src.len(), |e| i + e);
            let text = src[i + 1..end].trim();
            if let Some(rest) = text.strip_prefix("origin:") {
                out.push((Tok::Origin(rest.trim().to_string()), pos));
            }
            while chars.peek().is_some_and(|&(j, _)| j < end) {
                chars.next();
                col += 1;
            }
            continue;
        }
        if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            for _ in 0..p.len() {
                chars.next();
                col += 1;
            }
            out.push((Tok::Punct(p), pos));
            continue;
        }
        let word = |chars: &mut std::iter::Peekable<std::str::CharIndices<'_>>, col: &mut usize, ok: fn(char) -> bool| {
            let mut s = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if !ok(c) {
                    break;
                }
                s.push(c);
                chars.next();
                *col += 1;
            }
            s
        };
        if c == '%' {
            chars.next();
            col += 1;
            let digits = word(&mut chars, &mut col, |c| c.is_ascii_digit());
            if digits.is_empty() {
                return Err(err(pos, "expected register number after `%`"));
            }
            out.push((Tok::Reg(digits), pos));
        } else if c == '-' || c.is_ascii_digit() {
            chars.next();
            col += 1;
            let mut s = c.to_string();
            s.push_str(&word(&mut chars, &mut col, |c| c.is_ascii_digit()));
            if s == "-" {
                return Err(err(pos, "expected digits after `-`"));
            }
            out.push((Tok::Int(s), pos));
        } else if c.is_alphabetic() || c == '_' {
            let s = word(&mut chars, &mut col, |c| c.is_alphanumeric() || c == '_');
            out.push((Tok::Ident(s), pos));
        } else {
            return Err(err(pos, &format!("unexpected character {c:?}")));
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

fn err(pos: Pos, msg: &str) -> ParseError {
    ParseError {
        line: pos.line,
        col: pos.col,
        message: msg.to_string(),
    }
}

/// A type name as written, resolved once all declarations are known.
#[derive(Clone, Debug)]
struct RawTy {
    name: String,
    pos: Pos,
}

#[derive(Debug)]
enum RawOp {
    Const(i64),
    Copy(Reg),
    New(RawTy, Vec<Reg>),
    Field(Reg, usize),
    Call(Reg, String, Vec<Reg>, Reg),
    Invoke(Reg, String, Vec<RawTy>, Vec<Reg>, Reg),
}

#[derive(Debug)]
struct RawMethod {
    name: String,
    params: Vec<RawTy>,
    origin: Option<(Vec<RawTy>, Pos)>,
    body: Vec<(Reg, RawOp, Pos)>,
    pos: Pos,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    mode: ParseMode,
}

impl Parser {
    /// Next token, skipping origin annotations.
    fn peek(&mut self) -> &(Tok, Pos) {
        while matches!(self.toks[self.at].0, Tok::Origin(_)) {
            self.at += 1;
        }
        &self.toks[self.at]
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.peek().clone();
        if t.0 != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&mut self, expected: &str) -> Result<T, ParseError> {
        let (t, pos) = self.peek().clone();
        Err(err(pos, &format!("expected {expected}, found {t}")))
    }

    fn punct(&mut self, p: &'static str) -> Result<Pos, ParseError> {
        match self.peek().clone() {
            (Tok::Punct(q), pos) if q == p => {
                self.bump();
                Ok(pos)
            }
            _ => self.fail(&format!("`{p}`")),
        }
    }

    fn is_punct(&mut self, p: &str) -> bool {
        matches!(&self.peek().0, Tok::Punct(q) if *q == p)
    }

    fn keyword(&mut self, k: &str) -> Result<Pos, ParseError> {
        match self.peek().clone() {
            (Tok::Ident(s), pos) if s == k => {
                self.bump();
                Ok(pos)
            }
            _ => self.fail(&format!("`{k}`")),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek().clone() {
            (Tok::Ident(s), pos) => {
                self.bump();
                Ok((s, pos))
            }
            _ => self.fail(what),
        }
    }

    fn type_name(&mut self) -> Result<RawTy, ParseError> {
        let (name, pos) = self.ident("a type name")?;
        if !name.starts_with(|c: char| c.is_uppercase()) {
            return Err(err(pos, &format!("type name `{name}` must be capitalized")));
        }
        Ok(RawTy { name, pos })
    }

    fn nat(&mut self, what: &str) -> Result<usize, ParseError> {
        match self.peek().clone() {
            (Tok::Int(s), pos) => {
                self.bump();
                s.parse()
                    .map_err(|_| err(pos, &format!("invalid {what} `{s}`")))
            }
            _ => self.fail(what),
        }
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        match self.peek().clone() {
            (Tok::Reg(s), pos) => {
                self.bump();
                s.parse()
                    .map(Reg)
                    .map_err(|_| err(pos, &format!("register number `{s}` too large")))
            }
            _ => self.fail("a register"),
        }
    }

    /// Comma-separated items up to `close`, which is consumed.
    fn list<T>(
        &mut self,
        close: &'static str,
        mut item: impl FnMut(&mut Self) -> Result<T, ParseError>,
    ) -> Result<Vec<T>, ParseError> {
        let mut out = Vec::new();
        if self.is_punct(close) {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.is_punct(",") {
                self.bump();
            } else {
                self.punct(close)?;
                return Ok(out);
            }
        }
    }

    fn typedecl(&mut self) -> Result<(RawTy, Vec<RawTy>, RawTy), ParseError> {
        self.keyword("type")?;
        let name = self.type_name()?;
        self.punct("(")?;
        let fields = self.list(")", Self::type_name)?;
        self.punct("<:")?;
        let sup = self.type_name()?;
        Ok((name, fields, sup))
    }

    fn method(&mut self) -> Result<RawMethod, ParseError> {
        let pos = self.keyword("method")?;
        let (name, _) = self.ident("a method name")?;
        self.punct("(")?;
        let params = self.list(")", Self::type_name)?;
        self.punct("{")?;
        let origin = match self.toks[self.at].clone() {
            (Tok::Origin(text), opos) => {
                self.at += 1;
                if self.mode == ParseMode::Source {
                    return Err(err(opos, "origin annotation in source"));
                }
                Some((self.origin_sig(&text, &name, opos)?, opos))
            }
            _ => None,
        };
        let mut body = Vec::new();
        while !self.is_punct("}") {
            body.push(self.instr()?);
        }
        self.bump();
        Ok(RawMethod {
            name,
            params,
            origin,
            body,
            pos,
        })
    }

    fn origin_sig(&mut self, text: &str, name: &str, pos: Pos) -> Result<Vec<RawTy>, ParseError> {
        let toks = lex(text, pos)?;
        let mut sub = Parser {
            toks,
            at: 0,
            mode: self.mode,
        };
        let (n, npos) = sub.ident("a method name")?;
        if n != name {
            return Err(err(npos, &format!("origin names `{n}`, not `{name}`")));
        }
        sub.punct("(")?;
        let sig = sub.list(")", Self::type_name)?;
        match sub.peek().clone() {
            (Tok::Eof, _) => Ok(sig),
            _ => sub.fail("end of origin annotation"),
        }
    }

    fn instr(&mut self) -> Result<(Reg, RawOp, Pos), ParseError> {
        let pos = self.peek().1;
        let target = self.reg()?;
        self.punct("=")?;
        let (word, wpos) = match self.peek().clone() {
            (Tok::Ident(w), p) => (w, p),
            _ => return self.fail("an instruction"),
        };
        self.bump();
        let op = match word.as_str() {
            "const" => match self.peek().clone() {
                (Tok::Int(s), p) => {
                    self.bump();
                    RawOp::Const(s.parse().map_err(|_| err(p, &format!("integer `{s}` out of range")))?)
                }
                _ => return self.fail("an integer"),
            },
            "reg" => RawOp::Copy(self.reg()?),
            "new" => {
                let ty = self.type_name()?;
                self.punct("(")?;
                RawOp::New(ty, self.list(")", Self::reg)?)
            }
            "field" => {
                let r = self.reg()?;
                RawOp::Field(r, self.nat("a field index")?)
            }
            "if" => {
                let guard = self.reg()?;
                let (kind, kpos) = self.ident("`call` or `invoke`")?;
                let (callee, _) = self.ident("a method name")?;
                let sig = match kind.as_str() {
                    "call" => None,
                    "invoke" => {
                        if self.mode == ParseMode::Source {
                            return Err(err(kpos, "direct call in source"));
                        }
                        self.punct("[")?;
                        Some(self.list("]", Self::type_name)?)
                    }
                    _ => return Err(err(kpos, "expected `call` or `invoke`")),
                };
                self.punct("(")?;
                let args = self.list(")", Self::reg)?;
                self.keyword("else")?;
                let alt = self.reg()?;
                match sig {
                    None => RawOp::Call(guard, callee, args, alt),
                    Some(sig) => RawOp::Invoke(guard, callee, sig, args, alt),
                }
            }
            "invoke" if self.mode == ParseMode::Source => {
                return Err(err(wpos, "direct call in source"))
            }
            _ => return Err(err(wpos, &format!("unknown instruction `{word}`"))),
        };
        Ok((target, op, pos))
    }
}

/// Parses a program. Names declared by `type` are concrete; any other
/// capitalized name except `Int` is abstract.
pub fn parse_program(src: &str, mode: ParseMode) -> Result<(TypeTable, MethodTable), Vec<ParseError>> {
    let toks = lex(src, Pos { line: 1, col: 1 }).map_err(|e| vec![e])?;
    let mut p = Parser { toks, at: 0, mode };
    let mut decls = Vec::new();
    let mut methods = Vec::new();
    loop {
        match p.peek().clone() {
            (Tok::Eof, _) => break,
            (Tok::Ident(k), _) if k == "type" => decls.push(p.typedecl().map_err(|e| vec![e])?),
            (Tok::Ident(k), _) if k == "method" => methods.push(p.method().map_err(|e| vec![e])?),
            _ => return Err(vec![p.fail::<()>("`type` or `method`").unwrap_err()]),
        }
    }

    let mut errors = Vec::new();
    let mut types = TypeTable::new();
    for (name, fields, sup) in &decls {
        if sup.name == INT || decls.iter().any(|(n, _, _)| n.name == sup.name) {
            errors.push(err(sup.pos, &format!("supertype `{}` must be abstract", sup.name)));
            continue;
        }
        let decl = TypeDecl {
            name: name.name.as_str().into(),
            fields: fields.iter().map(|f| resolve(&decls, f)).collect(),
            supertype: sup.name.as_str().into(),
        };
        if let Err(e) = types.declare(decl) {
            errors.push(err(name.pos, &e.to_string()));
        }
    }

    let mut table = MethodTable::new();
    for m in methods {
        let params: Vec<Type> = m.params.iter().map(|t| resolve(&decls, t)).collect();
        let origin = m
            .origin
            .as_ref()
            .map_or_else(|| params.clone(), |(o, _)| o.iter().map(|t| resolve(&decls, t)).collect());
        if let Some((_, opos)) = &m.origin {
            if origin == params {
                errors.push(err(*opos, "origin annotation on an original method"));
                continue;
            }
        }
        let mut instrs = Vec::with_capacity(m.body.len());
        for (target, op, pos) in m.body {
            let op = match op {
                RawOp::Const(p) => Op::Const(p),
                RawOp::Copy(r) => Op::Copy(r),
                RawOp::New(ty, args) => {
                    let t = resolve(&decls, &ty);
                    if !t.is_concrete() || t.is_int() {
                        errors.push(err(ty.pos, &format!("`{}` is not a declared struct type", ty.name)));
                        continue;
                    }
                    Op::New { ty: t, args }
                }
                RawOp::Field(recv, index) => Op::Field { recv, index },
                RawOp::Call(guard, callee, args, alt) => Op::Call {
                    guard,
                    callee: callee.as_str().into(),
                    args,
                    alt,
                },
                RawOp::Invoke(guard, callee, sig, args, alt) => {
                    if m.origin.is_none() {
                        errors.push(err(pos, "direct call in an original method"));
                        continue;
                    }
                    Op::Invoke {
                        guard,
                        callee: callee.as_str().into(),
                        sig: sig.iter().map(|t| resolve(&decls, t)).collect(),
                        args,
                        alt,
                    }
                }
            };
            instrs.push(Instr { target, op });
        }
        let body = if m.origin.is_some() && instrs.is_empty() {
            Body::Stub
        } else {
            Body::code(instrs)
        };
        let method = Method {
            name: m.name.as_str().into(),
            params,
            body,
            origin,
        };
        if let Err(e) = table.add(method) {
            errors.push(err(m.pos, &e.to_string()));
        }
    }
    if errors.is_empty() {
        Ok((types, table))
    } else {
        Err(errors)
    }
}

fn resolve(decls: &[(RawTy, Vec<RawTy>, RawTy)], t: &RawTy) -> Type {
    if t.name == INT || decls.iter().any(|(n, _, _)| n.name == t.name) {
        Type::concrete(&t.name)
    } else if t.name == ANY {
        Type::any()
    } else {
        Type::abstract_(&t.name)
    }
}

/// Parses raw bytes; non-UTF-8 input is a parse error.
pub fn parse_bytes(src: &[u8], mode: ParseMode) -> Result<(TypeTable, MethodTable), Vec<ParseError>> {
    match std::str::from_utf8(src) {
        Ok(s) => parse_program(s, mode),
        Err(e) => {
            let prefix = &src[..e.valid_up_to()];
            let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count();
            let col = 1 + prefix.iter().rev().take_while(|&&b| b != b'\n').count();
            Err(vec![ParseError {
                line,
                col,
                message: "input is not valid UTF-8".into(),
            }])
        }
    }
}

/// Parses an entry point such as `main()`, `f(3, Pt)` or `g(Pt(1, 2))`.
/// A bare struct name stands for a default value of that type.
pub fn parse_entry(types: &TypeTable, text: &str) -> Result<Entry, ParseError> {
    let toks = lex(text, Pos { line: 1, col: 1 })?;
    let mut p = Parser {
        toks,
        at: 0,
        mode: ParseMode::Source,
    };
    let (name, _) = p.ident("a method name")?;
    p.punct("(")?;
    let args = p.list(")", |p| entry_value(p, types))?;
    match p.peek().clone() {
        (Tok::Eof, _) => Ok(Entry {
            name: name.as_str().into(),
            args,
        }),
        _ => p.fail("end of entry"),
    }
}

fn entry_value(p: &mut Parser, types: &TypeTable) -> Result<Value, ParseError> {
    match p.peek().clone() {
        (Tok::Int(s), pos) => {
            p.bump();
            s.parse()
                .map(Value::Int)
                .map_err(|_| err(pos, &format!("integer `{s}` out of range")))
        }
        (Tok::Ident(name), pos) => {
            p.bump();
            let ty = Type::concrete(&name);
            let Some(fields) = types.fields(&ty) else {
                return Err(err(pos, &format!("`{name}` is not a concrete type")));
            };
            if !p.is_punct("(") {
                return default_value(types, &ty, 0).ok_or_else(|| err(pos, &format!("no default value for `{name}`")));
            }
            p.bump();
            let vals = p.list(")", |p| entry_value(p, types))?;
            if vals.len() != fields.len() || ty.is_int() {
                return Err(err(pos, &format!("wrong number of fields for `{name}`")));
            }
            Ok(Value::new_struct(&name, vals))
        }
        _ => p.fail("a value"),
    }
}

/// Zero for `Int`, and a struct of default values otherwise; abstract field
/// types take their first concrete child.
pub fn default_value(types: &TypeTable, ty: &Type, depth: usize) -> Option<Value> {
    if depth > 32 {
        return None;
    }
    match ty {
        Type::Concrete(_) if ty.is_int() => Some(Value::Int(0)),
        Type::Concrete(n) => {
            let fields = types.fields(ty)?;
            let vals = fields
                .iter()
                .map(|f| default_value(types, f, depth + 1))
                .collect::<Option<Vec<_>>>()?;
            Some(Value::new_struct(n, vals))
        }
        Type::Abstract(a) => types
            .children_of(a)
            .iter()
            .find_map(|c| default_value(types, c, depth + 1)),
    }
}

/// Canonical text: type declarations in order, then methods sorted by name
/// and signature, separated by blank lines.
pub fn print_program(types: &TypeTable, table: &MethodTable) -> String {
    let mut items: Vec<String> = Vec::new();
    for d in types.decls() {
        items.push(format!(
            "type {}({}) <: {}\n",
            d.name,
            SigDisplay(&d.fields),
            d.supertype
        ));
    }
    for m in table.iter() {
        let mut s = format!("method {m} {{");
        if !m.is_original() {
            let _ = write!(s, "  # origin: {}({})", m.name, SigDisplay(&m.origin));
        }
        s.push('\n');
        for i in m.instrs() {
            let _ = writeln!(s, "  {i}");
        }
        s.push_str("}\n");
        items.push(s);
    }
    items.join("\n")
}

/// One trace line: `step <n> <rule> depth=<d> %<i>=<value>`. Call steps
/// name the callee activation instead of an assignment.
pub fn format_trace_line(step: u64, ev: &StepEvent) -> String {
    let mut s = format!("step {step} {} depth={}", ev.rule, ev.depth);
    if let Some((r, v)) = &ev.assigned {
        let _ = write!(s, " {r}={v}");
    } else if let Some(k) = &ev.call {
        let _ = write!(s, " {k}");
    }
    s
}

/// Serializes a report with stable field order.
pub fn report_to_json<T: Serialize + ?Sized>(report: &T) -> String {
    serde_json::to_string(report).expect("reports serialize")
}
