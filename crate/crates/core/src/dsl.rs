//! Textual model language and dataset loading.
//!
//! The language is line oriented; one statement per line, `#` starts a
//! comment. Statements declare plates, covariates, latents and observations:
//!
//! ```text
//! plate county[85]
//! covariate basement[county]: real
//! latent mu ~ Gaussian(0, 1)
//! latent alpha[county] ~ Gaussian(mu, 1) proposal Gaussian(0, 1)
//! observe y[county] ~ Gaussian(alpha + 0.7 * basement, 1) from radon
//! ```
//!
//! Latents may be referenced before their declaration; resolution runs after
//! a collection pass. An omitted proposal clause defaults to a Gaussian with
//! mean parameters (0, 1). Parsing is total: it returns a list of positioned
//! errors rather than aborting.

use crate::dist::{in_support, Family, MeanParams};
use crate::graph::{
    CovKind, CovValue, CovariateDecl, Expr, LatentDecl, ModelIR, ObservationDecl, PlateDecl,
    PlateId, TableRef, ValidationError,
};
use crate::tensor::{AxisId, IntTensor, Tensor};
use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    /// 1-based line.
    pub line: usize,
    /// 1-based column.
    pub column: usize,
    /// Length in characters, at least 1.
    pub length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownIdentifier,
    DuplicateName,
    Cycle,
    PlateMismatch,
    UnsupportedFamily,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::UnknownIdentifier => "unknown-identifier",
            ParseErrorKind::DuplicateName => "duplicate-name",
            ParseErrorKind::Cycle => "cycle",
            ParseErrorKind::PlateMismatch => "plate-mismatch",
            ParseErrorKind::UnsupportedFamily => "unsupported-family",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub span: SourceSpan,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {} error: {}",
            self.span.line, self.span.column, self.kind, self.message
        )
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    LBrack,
    RBrack,
    LParen,
    RParen,
    Comma,
    Colon,
    Tilde,
    Plus,
    Minus,
    Star,
    Slash,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: SourceSpan,
}

/// Tokenizes one line. Bad characters are reported and skipped.
fn lex_line(line_no: usize, line: &str, errors: &mut Vec<ParseError>) -> Vec<Token> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let span1 = SourceSpan { line: line_no, column: col, length: 1 };
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                i += 1;
            }
            '[' => {
                toks.push(Token { tok: Tok::LBrack, span: span1 });
                i += 1;
            }
            ']' => {
                toks.push(Token { tok: Tok::RBrack, span: span1 });
                i += 1;
            }
            '(' => {
                toks.push(Token { tok: Tok::LParen, span: span1 });
                i += 1;
            }
            ')' => {
                toks.push(Token { tok: Tok::RParen, span: span1 });
                i += 1;
            }
            ',' => {
                toks.push(Token { tok: Tok::Comma, span: span1 });
                i += 1;
            }
            ':' => {
                toks.push(Token { tok: Tok::Colon, span: span1 });
                i += 1;
            }
            '~' => {
                toks.push(Token { tok: Tok::Tilde, span: span1 });
                i += 1;
            }
            '+' => {
                toks.push(Token { tok: Tok::Plus, span: span1 });
                i += 1;
            }
            '-' => {
                toks.push(Token { tok: Tok::Minus, span: span1 });
                i += 1;
            }
            '*' => {
                toks.push(Token { tok: Tok::Star, span: span1 });
                i += 1;
            }
            '/' => {
                toks.push(Token { tok: Tok::Slash, span: span1 });
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // Exponent part, possibly signed.
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                toks.push(Token {
                    tok: Tok::Number(text),
                    span: SourceSpan { line: line_no, column: start + 1, length: i - start },
                });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                toks.push(Token {
                    tok: Tok::Ident(text),
                    span: SourceSpan { line: line_no, column: start + 1, length: i - start },
                });
            }
            other => {
                errors.push(ParseError {
                    span: span1,
                    kind: ParseErrorKind::Syntax,
                    message: format!("unexpected character `{other}`"),
                });
                i += 1;
            }
        }
    }
    toks
}

// --------------------------------------------------------------- parsing

/// Expression with unresolved names.
#[derive(Clone, Debug)]
enum RawExpr {
    Num(f64),
    Name(String, SourceSpan),
    Add(Box<RawExpr>, Box<RawExpr>),
    Sub(Box<RawExpr>, Box<RawExpr>),
    Mul(Box<RawExpr>, Box<RawExpr>),
    Div(Box<RawExpr>, Box<RawExpr>),
    Neg(Box<RawExpr>),
    Exp(Box<RawExpr>),
    Sigmoid(Box<RawExpr>),
    Gather { table: (String, SourceSpan), index: (String, SourceSpan) },
}

#[derive(Clone, Debug)]
struct RawLatent {
    name: String,
    span: SourceSpan,
    plates: Vec<(String, SourceSpan)>,
    family: (String, SourceSpan),
    params: Vec<RawExpr>,
    proposal: Option<((String, SourceSpan), Vec<f64>)>,
}

#[derive(Clone, Debug)]
struct RawObs {
    name: String,
    span: SourceSpan,
    plates: Vec<(String, SourceSpan)>,
    family: (String, SourceSpan),
    params: Vec<RawExpr>,
    binding: (String, SourceSpan),
}

#[derive(Default)]
struct RawModel {
    plates: Vec<(String, usize, SourceSpan)>,
    covariates: Vec<(String, Vec<(String, SourceSpan)>, CovKind, SourceSpan)>,
    latents: Vec<RawLatent>,
    observes: Vec<RawObs>,
}

struct LineParser {
    toks: Vec<Token>,
    pos: usize,
    line: usize,
    line_len: usize,
}

impl LineParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn span(&self) -> SourceSpan {
        self.toks.get(self.pos).map(|t| t.span).unwrap_or(SourceSpan {
            line: self.line,
            column: self.line_len.max(1),
            length: 1,
        })
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError { span: self.span(), kind: ParseErrorKind::Syntax, message: message.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<SourceSpan, ParseError> {
        match self.peek() {
            Some(t) if *t == tok => Ok(self.bump().unwrap().span),
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, SourceSpan), ParseError> {
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let t = self.bump().unwrap();
                match t.tok {
                    Tok::Ident(s) => Ok((s, t.span)),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<(String, SourceSpan), ParseError> {
        match self.peek() {
            Some(Tok::Number(_)) => {
                let t = self.bump().unwrap();
                match t.tok {
                    Tok::Number(s) => Ok((s, t.span)),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn done(&mut self) -> Result<(), ParseError> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing tokens"))
        }
    }

    /// `[a, b, c]`, optional.
    fn plate_list(&mut self) -> Result<Vec<(String, SourceSpan)>, ParseError> {
        let mut out = Vec::new();
        if self.peek() == Some(&Tok::LBrack) {
            self.bump();
            loop {
                out.push(self.ident("plate name")?);
                match self.peek() {
                    Some(Tok::Comma) => {
                        self.bump();
                    }
                    Some(Tok::RBrack) => {
                        self.bump();
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `]`")),
                }
            }
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<RawExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = RawExpr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = RawExpr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<RawExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = RawExpr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = RawExpr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<RawExpr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            let inner = self.unary()?;
            // Fold a literal so `-2` round-trips as a constant.
            return Ok(match inner {
                RawExpr::Num(v) => RawExpr::Num(-v),
                other => RawExpr::Neg(Box::new(other)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<RawExpr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Number(text)) => {
                let span = self.bump().unwrap().span;
                let v: f64 = text.parse().map_err(|_| ParseError {
                    span,
                    kind: ParseErrorKind::Syntax,
                    message: format!("bad number `{text}`"),
                })?;
                Ok(RawExpr::Num(v))
            }
            Some(Tok::LParen) => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                let span = self.bump().unwrap().span;
                match name.as_str() {
                    "exp" => {
                        self.expect(Tok::LParen, "`(` after exp")?;
                        let e = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(RawExpr::Exp(Box::new(e)))
                    }
                    "sigmoid" => {
                        self.expect(Tok::LParen, "`(` after sigmoid")?;
                        let e = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(RawExpr::Sigmoid(Box::new(e)))
                    }
                    "gather" => {
                        self.expect(Tok::LParen, "`(` after gather")?;
                        let table = self.ident("table name")?;
                        self.expect(Tok::Comma, "`,`")?;
                        let index = self.ident("index covariate name")?;
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(RawExpr::Gather { table, index })
                    }
                    _ => Ok(RawExpr::Name(name, span)),
                }
            }
            _ => Err(self.err("expected expression")),
        }
    }

    fn family(&mut self) -> Result<(String, SourceSpan), ParseError> {
        self.ident("family name")
    }

    /// `FAMILY ( expr, ... )`
    fn family_call(&mut self) -> Result<((String, SourceSpan), Vec<RawExpr>), ParseError> {
        let fam = self.family()?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                params.push(self.expr()?);
                match self.peek() {
                    Some(Tok::Comma) => {
                        self.bump();
                    }
                    _ => break,
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok((fam, params))
    }
}

fn parse_statement(p: &mut LineParser, raw: &mut RawModel) -> Result<(), ParseError> {
    let (kw, kw_span) = p.ident("statement keyword")?;
    match kw.as_str() {
        "plate" => {
            let (name, span) = p.ident("plate name")?;
            p.expect(Tok::LBrack, "`[`")?;
            let (num, num_span) = p.number("plate size")?;
            let size: usize = num.parse().map_err(|_| ParseError {
                span: num_span,
                kind: ParseErrorKind::Syntax,
                message: format!("plate size must be a non-negative integer, got `{num}`"),
            })?;
            p.expect(Tok::RBrack, "`]`")?;
            p.done()?;
            raw.plates.push((name, size, span));
            Ok(())
        }
        "covariate" => {
            let (name, span) = p.ident("covariate name")?;
            let plates = p.plate_list()?;
            p.expect(Tok::Colon, "`:`")?;
            let (kind_name, kind_span) = p.ident("`real` or `int`")?;
            let kind = match kind_name.as_str() {
                "real" => CovKind::Real,
                "int" => CovKind::Int,
                other => {
                    return Err(ParseError {
                        span: kind_span,
                        kind: ParseErrorKind::Syntax,
                        message: format!("expected `real` or `int`, got `{other}`"),
                    })
                }
            };
            p.done()?;
            raw.covariates.push((name, plates, kind, span));
            Ok(())
        }
        "latent" => {
            let (name, span) = p.ident("latent name")?;
            let plates = p.plate_list()?;
            p.expect(Tok::Tilde, "`~`")?;
            let (family, params) = p.family_call()?;
            let proposal = if matches!(p.peek(), Some(Tok::Ident(s)) if s == "proposal") {
                p.bump();
                let fam = p.family()?;
                p.expect(Tok::LParen, "`(`")?;
                let mut nums = Vec::new();
                if p.peek() != Some(&Tok::RParen) {
                    loop {
                        let neg = if p.peek() == Some(&Tok::Minus) {
                            p.bump();
                            true
                        } else {
                            false
                        };
                        let (text, nspan) = p.number("proposal parameter")?;
                        let v: f64 = text.parse().map_err(|_| ParseError {
                            span: nspan,
                            kind: ParseErrorKind::Syntax,
                            message: format!("bad number `{text}`"),
                        })?;
                        nums.push(if neg { -v } else { v });
                        match p.peek() {
                            Some(Tok::Comma) => {
                                p.bump();
                            }
                            _ => break,
                        }
                    }
                }
                p.expect(Tok::RParen, "`)`")?;
                Some((fam, nums))
            } else {
                None
            };
            p.done()?;
            raw.latents.push(RawLatent { name, span, plates, family, params, proposal });
            Ok(())
        }
        "observe" => {
            let (name, span) = p.ident("observation name")?;
            let plates = p.plate_list()?;
            p.expect(Tok::Tilde, "`~`")?;
            let (family, params) = p.family_call()?;
            match p.ident("`from`")? {
                (s, _) if s == "from" => {}
                (other, sp) => {
                    return Err(ParseError {
                        span: sp,
                        kind: ParseErrorKind::Syntax,
                        message: format!("expected `from`, got `{other}`"),
                    })
                }
            }
            let binding = p.ident("binding column name")?;
            p.done()?;
            raw.observes.push(RawObs { name, span, plates, family, params, binding });
            Ok(())
        }
        other => Err(ParseError {
            span: kw_span,
            kind: ParseErrorKind::Syntax,
            message: format!(
                "expected `plate`, `covariate`, `latent` or `observe`, got `{other}`"
            ),
        }),
    }
}

struct Resolver<'a> {
    plate_ids: BTreeMap<&'a str, PlateId>,
    latent_ids: BTreeMap<&'a str, usize>,
    covariate_ids: BTreeMap<&'a str, usize>,
}

impl<'a> Resolver<'a> {
    fn resolve_plates(
        &self,
        plates: &[(String, SourceSpan)],
        errors: &mut Vec<ParseError>,
    ) -> Vec<PlateId> {
        let mut out = Vec::new();
        for (name, span) in plates {
            match self.plate_ids.get(name.as_str()) {
                Some(&id) => out.push(id),
                None => errors.push(ParseError {
                    span: *span,
                    kind: ParseErrorKind::UnknownIdentifier,
                    message: format!("unknown plate `{name}`"),
                }),
            }
        }
        out
    }

    fn resolve_expr(&self, e: &RawExpr, errors: &mut Vec<ParseError>) -> Expr {
        match e {
            RawExpr::Num(v) => Expr::Const(*v),
            RawExpr::Name(name, span) => {
                if let Some(&i) = self.latent_ids.get(name.as_str()) {
                    Expr::Latent(crate::graph::LatentId(i))
                } else if let Some(&i) = self.covariate_ids.get(name.as_str()) {
                    Expr::Covariate(crate::graph::CovariateId(i))
                } else {
                    errors.push(ParseError {
                        span: *span,
                        kind: ParseErrorKind::UnknownIdentifier,
                        message: format!("unknown name `{name}`"),
                    });
                    Expr::Const(f64::NAN)
                }
            }
            RawExpr::Add(a, b) => Expr::Add(
                Box::new(self.resolve_expr(a, errors)),
                Box::new(self.resolve_expr(b, errors)),
            ),
            RawExpr::Sub(a, b) => Expr::Sub(
                Box::new(self.resolve_expr(a, errors)),
                Box::new(self.resolve_expr(b, errors)),
            ),
            RawExpr::Mul(a, b) => Expr::Mul(
                Box::new(self.resolve_expr(a, errors)),
                Box::new(self.resolve_expr(b, errors)),
            ),
            RawExpr::Div(a, b) => Expr::Div(
                Box::new(self.resolve_expr(a, errors)),
                Box::new(self.resolve_expr(b, errors)),
            ),
            RawExpr::Neg(a) => Expr::Neg(Box::new(self.resolve_expr(a, errors))),
            RawExpr::Exp(a) => Expr::Exp(Box::new(self.resolve_expr(a, errors))),
            RawExpr::Sigmoid(a) => Expr::Sigmoid(Box::new(self.resolve_expr(a, errors))),
            RawExpr::Gather { table: (tname, tspan), index: (iname, ispan) } => {
                let table = if let Some(&i) = self.latent_ids.get(tname.as_str()) {
                    Some(TableRef::Latent(crate::graph::LatentId(i)))
                } else if let Some(&i) = self.covariate_ids.get(tname.as_str()) {
                    Some(TableRef::Covariate(crate::graph::CovariateId(i)))
                } else {
                    errors.push(ParseError {
                        span: *tspan,
                        kind: ParseErrorKind::UnknownIdentifier,
                        message: format!("unknown gather table `{tname}`"),
                    });
                    None
                };
                let index = match self.covariate_ids.get(iname.as_str()) {
                    Some(&i) => Some(crate::graph::CovariateId(i)),
                    None => {
                        errors.push(ParseError {
                            span: *ispan,
                            kind: ParseErrorKind::UnknownIdentifier,
                            message: format!("unknown gather index covariate `{iname}`"),
                        });
                        None
                    }
                };
                match (table, index) {
                    (Some(t), Some(i)) => Expr::Gather { table: t, index: i },
                    _ => Expr::Const(f64::NAN),
                }
            }
        }
    }

    fn resolve_family(
        &self,
        (name, span): &(String, SourceSpan),
        errors: &mut Vec<ParseError>,
    ) -> Family {
        match Family::parse(name) {
            Some(f) => f,
            None => {
                errors.push(ParseError {
                    span: *span,
                    kind: ParseErrorKind::UnsupportedFamily,
                    message: format!("unknown family `{name}`"),
                });
                Family::Gaussian
            }
        }
    }
}

/// Parses model source into a validated IR, or a list of positioned errors.
pub fn parse(source: &str) -> Result<ModelIR, Vec<ParseError>> {
    let mut errors = Vec::new();
    let mut raw = RawModel::default();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let toks = lex_line(line_no, line, &mut errors);
        if toks.is_empty() {
            continue;
        }
        let line_len = line.chars().count();
        let mut p = LineParser { toks, pos: 0, line: line_no, line_len };
        if let Err(e) = parse_statement(&mut p, &mut raw) {
            errors.push(e);
        }
    }

    // Collection pass done; build symbol tables. Duplicates are reported at
    // the second occurrence; resolution uses the first.
    let mut resolver = Resolver {
        plate_ids: BTreeMap::new(),
        latent_ids: BTreeMap::new(),
        covariate_ids: BTreeMap::new(),
    };
    let mut span_of_name: BTreeMap<&str, SourceSpan> = BTreeMap::new();
    for (i, (name, _, span)) in raw.plates.iter().enumerate() {
        if resolver.plate_ids.insert(name, PlateId(i)).is_some() {
            errors.push(dup(name, *span));
        }
        span_of_name.entry(name).or_insert(*span);
    }
    for (i, l) in raw.latents.iter().enumerate() {
        if resolver.latent_ids.insert(&l.name, i).is_some() {
            errors.push(dup(&l.name, l.span));
        }
        span_of_name.entry(&l.name).or_insert(l.span);
    }
    for (i, (name, _, _, span)) in raw.covariates.iter().enumerate() {
        if resolver.covariate_ids.insert(name, i).is_some()
            || resolver.latent_ids.contains_key(name.as_str())
        {
            errors.push(dup(name, *span));
        }
        span_of_name.entry(name).or_insert(*span);
    }
    for o in &raw.observes {
        span_of_name.entry(&o.name).or_insert(o.span);
    }

    let plates: Vec<PlateDecl> = raw
        .plates
        .iter()
        .map(|(name, size, _)| PlateDecl { name: name.clone(), size: *size })
        .collect();
    let covariates: Vec<CovariateDecl> = raw
        .covariates
        .iter()
        .map(|(name, plates, kind, _)| CovariateDecl {
            name: name.clone(),
            plates: resolver.resolve_plates(plates, &mut errors),
            kind: *kind,
        })
        .collect();
    let latents: Vec<LatentDecl> = raw
        .latents
        .iter()
        .map(|l| {
            let family = resolver.resolve_family(&l.family, &mut errors);
            let default_init = || {
                MeanParams::new_unchecked(Family::Gaussian, vec![0.0, 1.0])
                    .expect("gaussian default init")
            };
            let (proposal_family, proposal_init) = match &l.proposal {
                None => (Family::Gaussian, default_init()),
                Some((fam, nums)) => {
                    let pf = resolver.resolve_family(fam, &mut errors);
                    match MeanParams::new_unchecked(pf, nums.clone()) {
                        Ok(init) => (pf, init),
                        Err(e) => {
                            errors.push(ParseError {
                                span: fam.1,
                                kind: ParseErrorKind::UnsupportedFamily,
                                message: e.to_string(),
                            });
                            (Family::Gaussian, default_init())
                        }
                    }
                }
            };
            LatentDecl {
                name: l.name.clone(),
                plates: resolver.resolve_plates(&l.plates, &mut errors),
                family,
                prior_params: l
                    .params
                    .iter()
                    .map(|e| resolver.resolve_expr(e, &mut errors))
                    .collect(),
                proposal_family,
                proposal_init,
            }
        })
        .collect();
    let observations: Vec<ObservationDecl> = raw
        .observes
        .iter()
        .map(|o| ObservationDecl {
            name: o.name.clone(),
            plates: resolver.resolve_plates(&o.plates, &mut errors),
            family: resolver.resolve_family(&o.family, &mut errors),
            params: o
                .params
                .iter()
                .map(|e| resolver.resolve_expr(e, &mut errors))
                .collect(),
            binding: o.binding.0.clone(),
        })
        .collect();

    if !errors.is_empty() {
        return Err(errors);
    }

    let ir = ModelIR { plates, covariates, latents, observations };
    let report = ir.validate();
    if report.is_ok() {
        Ok(ir)
    } else {
        let fallback = SourceSpan { line: 1, column: 1, length: 1 };
        Err(report
            .errors
            .into_iter()
            .map(|e| {
                let (kind, anchor) = classify(&e);
                let span = anchor
                    .and_then(|n| span_of_name.get(n.as_str()).copied())
                    .unwrap_or(fallback);
                ParseError { span, kind, message: e.to_string() }
            })
            .collect())
    }
}

fn dup(name: &str, span: SourceSpan) -> ParseError {
    ParseError {
        span,
        kind: ParseErrorKind::DuplicateName,
        message: format!("`{name}` is already declared"),
    }
}

/// Maps a structural validation error onto a parse-error kind and the name
/// whose declaration the error should point at.
fn classify(e: &ValidationError) -> (ParseErrorKind, Option<String>) {
    match e {
        ValidationError::DuplicateName(n) => (ParseErrorKind::DuplicateName, Some(n.clone())),
        ValidationError::EmptyPlate(n) => (ParseErrorKind::PlateMismatch, Some(n.clone())),
        ValidationError::ParamArity { what, .. } => {
            (ParseErrorKind::Syntax, strip_what(what))
        }
        ValidationError::PlateNotDeclared { what, .. } => {
            (ParseErrorKind::PlateMismatch, strip_what(what))
        }
        ValidationError::UnsupportedProposal { latent, .. }
        | ValidationError::ProposalSupportMismatch { latent, .. }
        | ValidationError::BadProposalInit { latent, .. } => {
            (ParseErrorKind::UnsupportedFamily, Some(latent.clone()))
        }
        ValidationError::GatherIndexKind { what, .. }
        | ValidationError::GatherTablePlates { what, .. } => {
            (ParseErrorKind::PlateMismatch, strip_what(what))
        }
        ValidationError::Cycle(n) => (ParseErrorKind::Cycle, Some(n.clone())),
    }
}

/// "latent `z`" -> "z"
fn strip_what(what: &str) -> Option<String> {
    let start = what.find('`')? + 1;
    let end = what.rfind('`')?;
    (start < end).then(|| what[start..end].to_string())
}

// ---------------------------------------------------------- pretty print

/// Renders an IR back to source text; `parse` of the output rebuilds an
/// equal IR.
pub fn pretty_print(ir: &ModelIR) -> String {
    let mut out = String::new();
    for p in &ir.plates {
        out.push_str(&format!("plate {}[{}]\n", p.name, p.size));
    }
    for c in &ir.covariates {
        let kind = match c.kind {
            CovKind::Real => "real",
            CovKind::Int => "int",
        };
        out.push_str(&format!(
            "covariate {}{}: {}\n",
            c.name,
            plates_text(ir, &c.plates),
            kind
        ));
    }
    for l in &ir.latents {
        let params: Vec<String> = l.prior_params.iter().map(|e| expr_text(ir, e, 0)).collect();
        let init: Vec<String> = l.proposal_init.values.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!(
            "latent {}{} ~ {}({}) proposal {}({})\n",
            l.name,
            plates_text(ir, &l.plates),
            l.family,
            params.join(", "),
            l.proposal_family,
            init.join(", ")
        ));
    }
    for o in &ir.observations {
        let params: Vec<String> = o.params.iter().map(|e| expr_text(ir, e, 0)).collect();
        out.push_str(&format!(
            "observe {}{} ~ {}({}) from {}\n",
            o.name,
            plates_text(ir, &o.plates),
            o.family,
            params.join(", "),
            o.binding
        ));
    }
    out
}

fn plates_text(ir: &ModelIR, plates: &[PlateId]) -> String {
    if plates.is_empty() {
        String::new()
    } else {
        let names: Vec<&str> = plates.iter().map(|&p| ir.plate(p).name.as_str()).collect();
        format!("[{}]", names.join(", "))
    }
}

/// Precedence-aware expression printer: parenthesizes whenever the child
/// binds looser than its context, so the parse tree survives the round trip.
fn expr_text(ir: &ModelIR, e: &Expr, parent_prec: u8) -> String {
    let (text, prec) = match e {
        Expr::Const(v) => (format!("{v}"), 4),
        Expr::Latent(id) => (ir.latent(*id).name.clone(), 4),
        Expr::Covariate(id) => (ir.covariate(*id).name.clone(), 4),
        Expr::Add(a, b) => {
            (format!("{} + {}", expr_text(ir, a, 1), expr_text(ir, b, 2)), 1)
        }
        Expr::Sub(a, b) => {
            (format!("{} - {}", expr_text(ir, a, 1), expr_text(ir, b, 2)), 1)
        }
        Expr::Mul(a, b) => {
            (format!("{} * {}", expr_text(ir, a, 2), expr_text(ir, b, 3)), 2)
        }
        Expr::Div(a, b) => {
            (format!("{} / {}", expr_text(ir, a, 2), expr_text(ir, b, 3)), 2)
        }
        Expr::Neg(a) => (format!("-{}", expr_text(ir, a, 3)), 3),
        Expr::Exp(a) => (format!("exp({})", expr_text(ir, a, 0)), 4),
        Expr::Sigmoid(a) => (format!("sigmoid({})", expr_text(ir, a, 0)), 4),
        Expr::Gather { table, index } => {
            let tname = match table {
                TableRef::Latent(id) => ir.latent(*id).name.as_str(),
                TableRef::Covariate(id) => ir.covariate(*id).name.as_str(),
            };
            (format!("gather({}, {})", tname, ir.covariate(*index).name), 4)
        }
    };
    if prec < parent_prec {
        format!("({text})")
    } else {
        text
    }
}

// ---------------------------------------------------------- data loading

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("column `{column}` does not match any covariate or observation binding")]
    UnknownColumn { column: String },
    #[error("column `{column}` is bound more than once")]
    DuplicateColumn { column: String },
    #[error("no file provides column `{column}`")]
    MissingColumn { column: String },
    #[error("column `{column}` has {got} rows, expected {expected}")]
    WrongRowCount { column: String, expected: usize, got: usize },
    #[error("column `{column}` row {row}: bad value `{value}`: {detail}")]
    BadValue { column: String, row: usize, value: String, detail: String },
    #[error("column `{column}` row {row}: value {value} is outside the {family} support")]
    OutOfSupport { column: String, row: usize, value: f64, family: Family },
    #[error("int covariate `{column}` row {row}: index {value} out of range for plate of size {size}")]
    IndexOutOfRange { column: String, row: usize, value: i64, size: usize },
}

/// Fully bound dataset: one value tensor per covariate and one per
/// observation declaration, indexed by declaration order.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub covariates: Vec<CovValue>,
    pub observations: Vec<Tensor>,
}

enum ColTarget {
    Cov(usize),
    Obs(usize),
}

/// Loads one or more CSV files. Each file has a header row naming bindings;
/// each bound column holds its binding's cells in row-major order over the
/// binding's declared plate list.
pub fn load_dataset(
    ir: &ModelIR,
    paths: &[impl AsRef<Path>],
) -> Result<DataSet, DataError> {
    let mut cov_vals: Vec<Option<CovValue>> = vec![None; ir.covariates.len()];
    let mut obs_vals: Vec<Option<Tensor>> = vec![None; ir.observations.len()];
    // Raw int columns in CSV order, kept for index bounds reporting by row.
    let mut int_raw: Vec<Option<Vec<i64>>> = vec![None; ir.covariates.len()];

    for path in paths {
        let path = path.as_ref();
        let pstr = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => DataError::Io {
                    path: pstr.clone(),
                    source: std::io::Error::other(e.to_string()),
                },
                _ => DataError::Csv { path: pstr.clone(), source: e },
            })?;
        let headers = reader
            .headers()
            .map_err(|e| DataError::Csv { path: pstr.clone(), source: e })?
            .clone();

        let mut targets: Vec<ColTarget> = Vec::with_capacity(headers.len());
        for name in headers.iter() {
            if let Some(i) = ir.covariates.iter().position(|c| c.name == name) {
                if cov_vals[i].is_some() {
                    return Err(DataError::DuplicateColumn { column: name.to_string() });
                }
                targets.push(ColTarget::Cov(i));
            } else if let Some(i) = ir.observations.iter().position(|o| o.binding == name) {
                if obs_vals[i].is_some() {
                    return Err(DataError::DuplicateColumn { column: name.to_string() });
                }
                targets.push(ColTarget::Obs(i));
            } else {
                return Err(DataError::UnknownColumn { column: name.to_string() });
            }
        }

        let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for record in reader.records() {
            let record = record.map_err(|e| DataError::Csv { path: pstr.clone(), source: e })?;
            for (j, field) in record.iter().enumerate() {
                if j < columns.len() {
                    columns[j].push(field.to_string());
                }
            }
        }

        for (j, target) in targets.iter().enumerate() {
            let column = headers.get(j).unwrap_or("").to_string();
            let cells = &columns[j];
            match target {
                ColTarget::Cov(i) => {
                    let decl = &ir.covariates[*i];
                    check_rows(ir, &column, &decl.plates, cells.len())?;
                    let (value, raw) = parse_covariate(ir, decl, &column, cells)?;
                    cov_vals[*i] = Some(value);
                    int_raw[*i] = raw;
                }
                ColTarget::Obs(i) => {
                    let decl = &ir.observations[*i];
                    check_rows(ir, &column, &decl.plates, cells.len())?;
                    obs_vals[*i] = Some(parse_observation(ir, decl, &column, cells)?);
                }
            }
        }
    }

    for (i, v) in cov_vals.iter().enumerate() {
        if v.is_none() {
            return Err(DataError::MissingColumn { column: ir.covariates[i].name.clone() });
        }
    }
    for (i, v) in obs_vals.iter().enumerate() {
        if v.is_none() {
            return Err(DataError::MissingColumn {
                column: ir.observations[i].binding.clone(),
            });
        }
    }

    // Every covariate used as a gather index must hold valid positions for
    // the table plate it indexes; checking here gives row-level reporting.
    let mut constraints: Vec<(usize, usize)> = Vec::new();
    let exprs = ir
        .latents
        .iter()
        .flat_map(|l| l.prior_params.iter())
        .chain(ir.observations.iter().flat_map(|o| o.params.iter()));
    for e in exprs {
        e.walk(&mut |sub| {
            if let Expr::Gather { table, index } = sub {
                let table_plates = match table {
                    TableRef::Latent(id) => &ir.latent(*id).plates,
                    TableRef::Covariate(id) => &ir.covariate(*id).plates,
                };
                if let [p] = table_plates[..] {
                    constraints.push((index.0, ir.plate(p).size));
                }
            }
        });
    }
    for (cov_i, size) in constraints {
        if let Some(raw) = &int_raw[cov_i] {
            for (row, &v) in raw.iter().enumerate() {
                if v < 0 || v as usize >= size {
                    return Err(DataError::IndexOutOfRange {
                        column: ir.covariates[cov_i].name.clone(),
                        row: csv_line(row),
                        value: v,
                        size,
                    });
                }
            }
        }
    }

    Ok(DataSet {
        covariates: cov_vals.into_iter().map(Option::unwrap).collect(),
        observations: obs_vals.into_iter().map(Option::unwrap).collect(),
    })
}

fn check_rows(
    ir: &ModelIR,
    column: &str,
    plates: &[PlateId],
    got: usize,
) -> Result<(), DataError> {
    let expected = ir.cell_count(plates);
    if got != expected {
        return Err(DataError::WrongRowCount { column: column.to_string(), expected, got });
    }
    Ok(())
}

/// CSV data rows start after the header, so cell `i` sits on line `i + 2`.
fn csv_line(i: usize) -> usize {
    i + 2
}

fn declared_shape(ir: &ModelIR, plates: &[PlateId]) -> (Vec<AxisId>, Vec<usize>) {
    let axes: Vec<AxisId> = plates.iter().map(|&p| AxisId::Plate(p)).collect();
    let sizes: Vec<usize> = plates.iter().map(|&p| ir.plate(p).size).collect();
    (axes, sizes)
}

fn parse_covariate(
    ir: &ModelIR,
    decl: &CovariateDecl,
    column: &str,
    cells: &[String],
) -> Result<(CovValue, Option<Vec<i64>>), DataError> {
    let (axes, sizes) = declared_shape(ir, &decl.plates);
    match decl.kind {
        CovKind::Real => {
            let mut vals = Vec::with_capacity(cells.len());
            for (i, c) in cells.iter().enumerate() {
                let v: f64 = c.parse().map_err(|_| DataError::BadValue {
                    column: column.to_string(),
                    row: csv_line(i),
                    value: c.clone(),
                    detail: "not a number".into(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::BadValue {
                        column: column.to_string(),
                        row: csv_line(i),
                        value: c.clone(),
                        detail: "not finite".into(),
                    });
                }
                vals.push(v);
            }
            let data = ArrayD::from_shape_vec(IxDyn(&sizes), vals).expect("row count checked");
            Ok((CovValue::Real(Tensor::from_unsorted(axes, data)), None))
        }
        CovKind::Int => {
            let mut vals = Vec::with_capacity(cells.len());
            for (i, c) in cells.iter().enumerate() {
                let v: i64 = c.parse().map_err(|_| DataError::BadValue {
                    column: column.to_string(),
                    row: csv_line(i),
                    value: c.clone(),
                    detail: "not an integer".into(),
                })?;
                vals.push(v);
            }
            let data =
                ArrayD::from_shape_vec(IxDyn(&sizes), vals.clone()).expect("row count checked");
            Ok((CovValue::Int(IntTensor::from_unsorted(axes, data)), Some(vals)))
        }
    }
}

fn parse_observation(
    ir: &ModelIR,
    decl: &ObservationDecl,
    column: &str,
    cells: &[String],
) -> Result<Tensor, DataError> {
    let (axes, sizes) = declared_shape(ir, &decl.plates);
    let mut vals = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let v: f64 = c.parse().map_err(|_| DataError::BadValue {
            column: column.to_string(),
            row: csv_line(i),
            value: c.clone(),
            detail: "not a number".into(),
        })?;
        if !v.is_finite() {
            return Err(DataError::BadValue {
                column: column.to_string(),
                row: csv_line(i),
                value: c.clone(),
                detail: "not finite".into(),
            });
        }
        if !in_support(decl.family, v) {
            return Err(DataError::OutOfSupport {
                column: column.to_string(),
                row: csv_line(i),
                value: v,
                family: decl.family,
            });
        }
        vals.push(v);
    }
    let data = ArrayD::from_shape_vec(IxDyn(&sizes), vals).expect("row count checked");
    Ok(Tensor::from_unsorted(axes, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LatentId;
    use std::io::Write;

    #[test]
    fn minimal_model_parses() {
        let ir = parse("latent z ~ Gaussian(0,1)\nobserve x ~ Gaussian(z,1) from xdata\n")
            .expect("parses");
        assert_eq!(ir.latents.len(), 1);
        assert_eq!(ir.observations.len(), 1);
        assert_eq!(ir.latents[0].family, Family::Gaussian);
        assert_eq!(ir.observations[0].binding, "xdata");
        // Omitted proposal defaults to Gaussian with mean parameters (0, 1).
        assert_eq!(ir.latents[0].proposal_family, Family::Gaussian);
        assert_eq!(ir.latents[0].proposal_init.values, vec![0.0, 1.0]);
    }

    #[test]
    fn forward_references_resolve() {
        let src = "latent child ~ Gaussian(parent, 1)\nlatent parent ~ Gaussian(0, 1)\nobserve x ~ Gaussian(child, 1) from xs\n";
        let ir = parse(src).expect("parses");
        assert_eq!(
            ir.latents[0].prior_params[0],
            Expr::Latent(LatentId(1))
        );
    }

    #[test]
    fn cycle_reports_with_kind() {
        let errs = parse("latent z ~ Gaussian(w,1)\nlatent w ~ Gaussian(z,1)\n").unwrap_err();
        assert!(errs.iter().any(|e| e.kind == ParseErrorKind::Cycle));
        assert!(errs.iter().any(|e| e.message.contains('z') || e.message.contains('w')));
    }

    #[test]
    fn unknown_identifier_has_exact_span() {
        let errs = parse("latent z ~ Gaussian(nope, 1)\n").unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].kind, ParseErrorKind::UnknownIdentifier);
        assert_eq!(errs[0].span.line, 1);
        assert_eq!(errs[0].span.column, 21);
        assert_eq!(errs[0].span.length, 4);
    }

    #[test]
    fn duplicate_names_are_flagged() {
        let errs = parse("plate g[2]\nlatent g ~ Gaussian(0,1)\n").unwrap_err();
        assert!(errs.iter().any(|e| e.kind == ParseErrorKind::DuplicateName));
    }

    #[test]
    fn bad_statements_collect_errors_without_aborting() {
        let src = "platypus g[2]\nlatent z ~ Gaussian(0,1)\nobserve x ~ Wat(z) from xs\nlatent ~~\n";
        let errs = parse(src).unwrap_err();
        assert!(errs.len() >= 3);
        assert!(errs.iter().any(|e| e.kind == ParseErrorKind::Syntax));
        assert!(errs.iter().any(|e| e.kind == ParseErrorKind::UnsupportedFamily));
        // Spans index real characters.
        for e in &errs {
            assert!(e.span.line >= 1 && e.span.column >= 1 && e.span.length >= 1);
        }
    }

    #[test]
    fn explicit_proposal_and_negative_numbers() {
        let src = "latent p ~ Beta(2, 2) proposal Beta(-0.9, -0.9)\nobserve y ~ Bernoulli(p) from ys\n";
        let ir = parse(src).expect("parses");
        assert_eq!(ir.latents[0].proposal_family, Family::Beta);
        assert_eq!(ir.latents[0].proposal_init.values, vec![-0.9, -0.9]);
    }

    #[test]
    fn pretty_print_round_trips() {
        let src = "\
plate g[3]
plate r[2]
covariate load[r]: real
covariate gid[r]: int
latent mu ~ Gaussian(0, 1) proposal Gaussian(0, 1)
latent z[g] ~ Gaussian(mu + 1 - -2, exp(mu) / (mu + 4)) proposal Gaussian(0, 1)
observe y[g, r] ~ Gaussian(gather(z, gid) * sigmoid(load - 0.5), 0.25) from ys
";
        let ir = parse(src).expect("parses");
        let printed = pretty_print(&ir);
        let reparsed = parse(&printed).expect("round trip parses");
        assert_eq!(ir, reparsed);
        // And printing is a fixed point from then on.
        assert_eq!(printed, pretty_print(&reparsed));
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new()
            .suffix(".csv")
            .tempfile()
            .expect("temp file");
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn plated_model() -> ModelIR {
        match parse(
            "plate g[2]\nplate r[3]\ncovariate w[r, g]: real\ncovariate gid[r]: int\nlatent z[g] ~ Gaussian(0, 1)\nobserve y[g, r] ~ Gaussian(z + 0 * w, 1) from ys\nobserve hits[r] ~ Bernoulli(sigmoid(gather(z, gid))) from hit\n",
        ) {
            Ok(ir) => ir,
            Err(e) => panic!("{e:?}"),
        }
    }

    #[test]
    fn dataset_loads_and_transposes_declared_order() {
        let ir = plated_model();
        // w is declared [r, g]: 3 rows of g-pairs, row-major over (r, g).
        let f1 = write_temp("w\n1\n2\n3\n4\n5\n6\n");
        // ys is declared [g, r].
        let f2 = write_temp("ys\n0.5\n0.25\n0\n-1\n-2\n-3\n");
        // hit and gid both range over r; gid indexes into plate g (size 2).
        let f3 = write_temp("hit,gid\n1,1\n0,0\n1,1\n");
        let ds = load_dataset(&ir, &[f1.path(), f2.path(), f3.path()]).expect("loads");
        match &ds.covariates[0] {
            CovValue::Real(t) => {
                // Sorted axis order is (g, r) regardless of declaration.
                assert_eq!(t.shape(), &[2, 3]);
                assert_eq!(t.data().as_slice().unwrap(), &[1., 3., 5., 2., 4., 6.]);
            }
            _ => panic!("w should be real"),
        }
        assert_eq!(ds.observations[0].shape(), &[2, 3]);
        assert_eq!(
            ds.observations[0].data().as_slice().unwrap(),
            &[0.5, 0.25, 0., -1., -2., -3.]
        );
        match &ds.covariates[1] {
            CovValue::Int(t) => assert_eq!(t.data().as_slice().unwrap(), &[1, 0, 1]),
            _ => panic!("gid should be int"),
        }
    }

    #[test]
    fn dataset_errors_name_column_and_row() {
        let ir = plated_model();
        let w = write_temp("w\n1\n2\n3\n4\n5\n6\n");
        let ys = write_temp("ys\n0.5\n0.25\n0\n-1\n-2\n-3\n");
        let bad_bernoulli = write_temp("hit,gid\n1,1\n2,0\n0,1\n");
        let err = load_dataset(&ir, &[w.path(), ys.path(), bad_bernoulli.path()]).unwrap_err();
        match err {
            DataError::OutOfSupport { column, row, value, family } => {
                assert_eq!(column, "hit");
                assert_eq!(row, 3);
                assert_eq!(value, 2.0);
                assert_eq!(family, Family::Bernoulli);
            }
            other => panic!("expected out-of-support, got {other}"),
        }

        let short = write_temp("w\n1\n2\n");
        let err = load_dataset(&ir, &[short.path()]).unwrap_err();
        assert!(matches!(err, DataError::WrongRowCount { expected: 6, got: 2, .. }));

        let err = load_dataset(&ir, &[write_temp("mystery\n1\n").path()]).unwrap_err();
        assert!(matches!(err, DataError::UnknownColumn { .. }));

        let good_hit = write_temp("hit,gid\n1,1\n0,0\n1,1\n");
        let err = load_dataset(&ir, &[w.path(), good_hit.path()]).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { .. }));

        let bad_int = write_temp("hit,gid\n1,1.5\n0,0\n1,1\n");
        let err = load_dataset(&ir, &[w.path(), ys.path(), bad_int.path()]).unwrap_err();
        assert!(matches!(err, DataError::BadValue { row: 2, .. }));

        // gid indexes plate g of size 2, so a 2 is out of range.
        let oob = write_temp("hit,gid\n1,1\n0,0\n1,2\n");
        let err = load_dataset(&ir, &[w.path(), ys.path(), oob.path()]).unwrap_err();
        match err {
            DataError::IndexOutOfRange { column, row, value, size } => {
                assert_eq!(column, "gid");
                assert_eq!(row, 4);
                assert_eq!(value, 2);
                assert_eq!(size, 2);
            }
            other => panic!("expected index-out-of-range, got {other}"),
        }
    }
}
