use std::collections::{BTreeSet, HashMap};

use super::ast::{Ast, BinOp, Builtin, Expr, ExprKind, Stmt, UnOp};
use super::error::{ParseError, ParseErrorKind};
use super::lexer::{Pos, Tok, Token};

const MAX_NESTING: usize = 96;

pub struct Parsed {
    pub ast: Ast,
    pub referenced_fields: BTreeSet<String>,
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
    slots: HashMap<String, usize>,
    names: Vec<String>,
    assigned: BTreeSet<String>,
    reads: Vec<(String, Pos)>,
    fields: BTreeSet<String>,
    depth: usize,
}

pub fn parse_tokens(toks: Vec<Token>) -> Result<Parsed, ParseError> {
    let mut p = Parser {
        toks,
        at: 0,
        slots: HashMap::new(),
        names: Vec::new(),
        assigned: BTreeSet::new(),
        reads: Vec::new(),
        fields: BTreeSet::new(),
        depth: 0,
    };
    let mut body = Vec::new();
    while !p.check(&Tok::Return) {
        if p.check(&Tok::Eof) {
            return Err(p.error(ParseErrorKind::Syntax, "program must end with `return <total>, <components>`"));
        }
        body.push(p.statement()?);
    }
    p.advance();
    let total = p.expr()?;
    p.expect(&Tok::Comma, "`,` between the total and the component record")?;
    let components = p.expr()?;
    p.eat(&Tok::Semi);
    if !p.check(&Tok::Eof) {
        return Err(p.error(ParseErrorKind::Syntax, "`return` must be the final statement"));
    }
    for (name, pos) in &p.reads {
        if !p.assigned.contains(name) {
            return Err(ParseError::new(
                ParseErrorKind::UnknownIdentifier,
                *pos,
                format!("`{name}` is never assigned"),
            ));
        }
    }
    Ok(Parsed {
        ast: Ast {
            body,
            total,
            components,
            slots: p.names,
        },
        referenced_fields: p.fields,
    })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn check(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.check(t) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> Result<Token, ParseError> {
        if self.check(t) {
            Ok(self.advance())
        } else {
            Err(self.error(
                ParseErrorKind::Syntax,
                format!("expected {what}, found `{}`", self.peek().canonical()),
            ))
        }
    }

    fn error(&self, kind: ParseErrorKind, msg: impl Into<String>) -> ParseError {
        ParseError::new(kind, self.pos(), msg)
    }

    fn slot(&mut self, name: &str) -> usize {
        if let Some(s) = self.slots.get(name) {
            return *s;
        }
        let s = self.names.len();
        self.names.push(name.to_string());
        self.slots.insert(name.to_string(), s);
        s
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.error(ParseErrorKind::Syntax, "nesting too deep"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                Ok((name, pos))
            }
            other => Err(self.error(
                ParseErrorKind::Syntax,
                format!("expected {what}, found `{}`", other.canonical()),
            )),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.enter()?;
        self.expect(&Tok::LBrace, "`{` to open a block")?;
        let mut out = Vec::new();
        while !self.check(&Tok::RBrace) {
            if self.check(&Tok::Eof) {
                return Err(self.error(ParseErrorKind::Syntax, "unterminated block"));
            }
            if self.check(&Tok::Return) {
                return Err(self.error(ParseErrorKind::Syntax, "`return` is only allowed as the final statement"));
            }
            out.push(self.statement()?);
        }
        self.advance();
        self.leave();
        Ok(out)
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        let stmt = match self.peek().clone() {
            Tok::If => {
                self.advance();
                let mut branches = Vec::new();
                let cond = self.expr()?;
                branches.push((cond, self.block()?));
                let mut otherwise = None;
                loop {
                    if self.eat(&Tok::Elif) {
                        let cond = self.expr()?;
                        branches.push((cond, self.block()?));
                    } else if self.check(&Tok::Else) {
                        self.advance();
                        if self.check(&Tok::If) {
                            return Err(self.error(ParseErrorKind::Syntax, "use `elif` instead of `else if`"));
                        }
                        otherwise = Some(self.block()?);
                        break;
                    } else {
                        break;
                    }
                }
                Stmt::If { branches, otherwise }
            }
            Tok::For => {
                self.advance();
                let (var, _) = self.ident("loop variable")?;
                self.expect(&Tok::In, "`in`")?;
                let (range, rpos) = self.ident("`range`")?;
                if range != "range" {
                    return Err(ParseError::new(
                        ParseErrorKind::Unsupported,
                        rpos,
                        "loops must iterate over `range(...)`",
                    ));
                }
                self.expect(&Tok::LParen, "`(`")?;
                let first = self.expr()?;
                let (start, end) = if self.eat(&Tok::Comma) {
                    (Some(first), self.expr()?)
                } else {
                    (None, first)
                };
                self.expect(&Tok::RParen, "`)`")?;
                if var == "ctx" {
                    return Err(ParseError::new(ParseErrorKind::Syntax, pos, "`ctx` cannot be assigned"));
                }
                let slot = self.slot(&var);
                self.assigned.insert(var);
                let body = self.block()?;
                Stmt::For {
                    slot,
                    start,
                    end,
                    body,
                    pos,
                }
            }
            Tok::Ident(name) => {
                self.advance();
                if name == "ctx" {
                    return Err(ParseError::new(ParseErrorKind::Syntax, pos, "`ctx` cannot be assigned"));
                }
                if self.eat(&Tok::LBracket) {
                    let index = self.expr()?;
                    self.expect(&Tok::RBracket, "`]`")?;
                    self.expect(&Tok::Assign, "`=`")?;
                    let value = self.expr()?;
                    let slot = self.slot(&name);
                    self.reads.push((name.clone(), pos));
                    Stmt::IndexAssign {
                        slot,
                        name,
                        index,
                        value,
                        pos,
                    }
                } else {
                    self.expect(&Tok::Assign, "`=` in an assignment")?;
                    let value = self.expr()?;
                    let slot = self.slot(&name);
                    self.assigned.insert(name);
                    Stmt::Assign { slot, value, pos }
                }
            }
            other => {
                return Err(self.error(
                    ParseErrorKind::Syntax,
                    format!("a statement cannot start with `{}`", other.canonical()),
                ))
            }
        };
        self.eat(&Tok::Semi);
        Ok(stmt)
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let e = self.or_expr();
        self.leave();
        e
    }

    fn binary(&mut self, op: BinOp, lhs: Expr, rhs: Expr, pos: Pos) -> Result<Expr, ParseError> {
        // Long operator chains build deep left spines; bound them like parentheses.
        let depth = spine_depth(&lhs) + 1;
        if depth > MAX_NESTING * 4 {
            return Err(ParseError::new(ParseErrorKind::Syntax, pos, "expression too long"));
        }
        Ok(Expr {
            kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
            pos,
        })
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.check(&Tok::Or) {
            let pos = self.advance().pos;
            let rhs = self.and_expr()?;
            lhs = self.binary(BinOp::Or, lhs, rhs, pos)?;
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.check(&Tok::And) {
            let pos = self.advance().pos;
            let rhs = self.not_expr()?;
            lhs = self.binary(BinOp::And, lhs, rhs, pos)?;
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.check(&Tok::Not) {
            let pos = self.advance().pos;
            self.enter()?;
            let inner = self.not_expr()?;
            self.leave();
            return Ok(Expr {
                kind: ExprKind::Unary(UnOp::Not, Box::new(inner)),
                pos,
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        let pos = self.advance().pos;
        let rhs = self.additive()?;
        if matches!(self.peek(), Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge) {
            return Err(self.error(ParseErrorKind::Syntax, "chained comparisons are not supported"));
        }
        self.binary(op, lhs, rhs, pos)
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.advance().pos;
            let rhs = self.multiplicative()?;
            lhs = self.binary(op, lhs, rhs, pos)?;
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Mod,
                _ => return Ok(lhs),
            };
            let pos = self.advance().pos;
            let rhs = self.unary()?;
            lhs = self.binary(op, lhs, rhs, pos)?;
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Minus => {
                let pos = self.advance().pos;
                self.enter()?;
                let inner = self.unary()?;
                self.leave();
                Ok(Expr {
                    kind: ExprKind::Unary(UnOp::Neg, Box::new(inner)),
                    pos,
                })
            }
            Tok::Plus => {
                self.advance();
                self.enter()?;
                let inner = self.unary();
                self.leave();
                inner
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if self.check(&Tok::Pow) {
            let pos = self.advance().pos;
            self.enter()?;
            let exp = self.unary()?;
            self.leave();
            return self.binary(BinOp::Pow, base, exp, pos);
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while self.check(&Tok::LBracket) {
            let pos = self.advance().pos;
            let idx = self.expr()?;
            self.expect(&Tok::RBracket, "`]`")?;
            if spine_depth(&e) > MAX_NESTING {
                return Err(ParseError::new(ParseErrorKind::Syntax, pos, "nesting too deep"));
            }
            e = Expr {
                kind: ExprKind::Index(Box::new(e), Box::new(idx)),
                pos,
            };
        }
        Ok(e)
    }

    fn comma_list(&mut self, close: &Tok) -> Result<Vec<Expr>, ParseError> {
        let mut items = Vec::new();
        while !self.check(close) {
            items.push(self.expr()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(close, &format!("`{}`", close.canonical()))?;
        Ok(items)
    }

    fn string_literal(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(s)
            }
            other => Err(self.error(
                ParseErrorKind::Syntax,
                format!("expected {what} as a string literal, found `{}`", other.canonical()),
            )),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let tok = self.peek().clone();
        let kind = match tok {
            Tok::Num(v) => {
                self.advance();
                ExprKind::Num(v)
            }
            Tok::Str(s) => {
                self.advance();
                ExprKind::Str(s)
            }
            Tok::True => {
                self.advance();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.advance();
                ExprKind::Bool(false)
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                return Ok(e);
            }
            Tok::LBracket => {
                self.advance();
                ExprKind::VectorLit(self.comma_list(&Tok::RBracket)?)
            }
            Tok::LBrace => {
                self.advance();
                let mut entries = Vec::new();
                while !self.check(&Tok::RBrace) {
                    let key = self.string_literal("a record key")?;
                    self.expect(&Tok::Colon, "`:` after a record key")?;
                    entries.push((key, self.expr()?));
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::RBrace, "`}` to close the record")?;
                ExprKind::RecordLit(entries)
            }
            Tok::Ident(name) => {
                self.advance();
                if name == "ctx" {
                    return self.context_access(pos);
                }
                if self.check(&Tok::LParen) {
                    let Some(builtin) = Builtin::lookup(&name) else {
                        return Err(ParseError::new(
                            ParseErrorKind::UnknownFunction,
                            pos,
                            format!("`{name}` is not a builtin function"),
                        ));
                    };
                    self.advance();
                    let args = self.comma_list(&Tok::RParen)?;
                    let (lo, hi) = builtin.arity();
                    if args.len() < lo || args.len() > hi {
                        return Err(ParseError::new(
                            ParseErrorKind::Syntax,
                            pos,
                            format!("`{name}` takes {lo}..={hi} arguments, got {}", args.len()),
                        ));
                    }
                    ExprKind::Call(builtin, args)
                } else if name == "range" {
                    return Err(ParseError::new(
                        ParseErrorKind::Unsupported,
                        pos,
                        "`range` is only valid as a loop header",
                    ));
                } else {
                    let slot = self.slot(&name);
                    self.reads.push((name.clone(), pos));
                    ExprKind::Var { name, slot }
                }
            }
            other => {
                return Err(self.error(
                    ParseErrorKind::Syntax,
                    format!("unexpected `{}` in expression", other.canonical()),
                ))
            }
        };
        Ok(Expr { kind, pos })
    }

    fn context_access(&mut self, pos: Pos) -> Result<Expr, ParseError> {
        self.expect(&Tok::Dot, "`.` after `ctx`")?;
        let (first, _) = self.ident("a context field")?;
        if (first == "get" || first == "has") && self.check(&Tok::LParen) {
            self.advance();
            let name = self.string_literal("the context key")?;
            self.fields.insert(name.clone());
            let kind = if first == "get" {
                self.expect(&Tok::Comma, "`,` before the default value")?;
                let default = self.expr()?;
                ExprKind::CtxGet {
                    name,
                    default: Box::new(default),
                }
            } else {
                ExprKind::CtxHas(name)
            };
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(Expr { kind, pos });
        }
        let mut path = first;
        while self.check(&Tok::Dot) {
            self.advance();
            let (next, _) = self.ident("a context field")?;
            path.push('.');
            path.push_str(&next);
        }
        self.fields.insert(path.clone());
        Ok(Expr {
            kind: ExprKind::Field(path),
            pos,
        })
    }
}

fn spine_depth(e: &Expr) -> usize {
    let mut depth = 0;
    let mut cur = e;
    loop {
        match &cur.kind {
            ExprKind::Binary(_, l, _) | ExprKind::Index(l, _) => {
                depth += 1;
                cur = l;
            }
            _ => return depth,
        }
    }
}
