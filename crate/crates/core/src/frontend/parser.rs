use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::{ErrorKind, FrontendError, Span};

type PResult<T> = Result<T, FrontendError>;

/// Parses controller source into a [`SourceProgram`].
pub fn parse(text: &str) -> PResult<SourceProgram> {
    let tokens = tokenize(text)?;
    let token_hash = hash_tokens(&tokens);
    let mut p = Parser { toks: tokens, pos: 0, decls: Vec::new(), known: HashMap::new(), nonlins: Vec::new(), next_id: 0 };
    let body = p.program()?;
    Ok(SourceProgram { decls: p.decls, nonlins: p.nonlins, body, token_hash })
}

/// SHA-256 over the token texts, separated by a unit separator.
pub fn hash_tokens(tokens: &[Token]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.text.as_bytes());
        h.update([0x1f]);
    }
    hex::encode(h.finalize())
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    decls: Vec<VarDecl>,
    /// name → number of subscripts
    known: HashMap<String, usize>,
    nonlins: Vec<String>,
    next_id: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn span(&self) -> Span {
        self.peek().span
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Punct(q) if *q == p)
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(w) if w == word)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{p}`, found {}", describe(self.peek()))))
        }
    }

    fn expect_ident(&mut self) -> PResult<(String, Span)> {
        match &self.peek().kind {
            TokenKind::Ident(name) => {
                let name = name.clone();
                let span = self.advance().span;
                Ok((name, span))
            }
            _ => Err(self.syntax(format!("expected identifier, found {}", describe(self.peek())))),
        }
    }

    fn syntax(&self, msg: impl Into<String>) -> FrontendError {
        FrontendError::new(ErrorKind::Syntax, self.span(), msg)
    }

    fn new_id(&mut self) -> StmtId {
        self.next_id += 1;
        StmtId(self.next_id)
    }

    fn at_type(&self) -> Option<ScalarType> {
        match &self.peek().kind {
            TokenKind::Ident(w) if w == "double" => Some(ScalarType::Double),
            TokenKind::Ident(w) if w == "float" => Some(ScalarType::Float),
            TokenKind::Ident(w) if w == "int" => Some(ScalarType::Int),
            _ => None,
        }
    }

    fn program(&mut self) -> PResult<Vec<Stmt>> {
        let mut body = Vec::new();
        while self.peek().kind != TokenKind::Eof {
            if self.is_ident("void") {
                self.main_fn(&mut body)?;
            } else {
                self.item(&mut body)?;
            }
        }
        let loops = body.iter().filter(|s| matches!(s.kind, StmtKind::WhileTrue { .. })).count();
        if loops > 1 {
            let span = body.iter().filter(|s| matches!(s.kind, StmtKind::WhileTrue { .. })).nth(1).unwrap().span;
            return Err(FrontendError::new(ErrorKind::Unsupported, span, "more than one top-level while(1) loop"));
        }
        Ok(body)
    }

    fn main_fn(&mut self, body: &mut Vec<Stmt>) -> PResult<()> {
        self.advance();
        let (name, span) = self.expect_ident()?;
        if name != "main" {
            return Err(FrontendError::new(ErrorKind::Unsupported, span, "function definitions other than main"));
        }
        self.expect_punct("(")?;
        if self.is_ident("void") {
            self.advance();
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        while !self.is_punct("}") {
            if self.peek().kind == TokenKind::Eof {
                return Err(self.syntax("unexpected end of input in main"));
            }
            self.item(body)?;
        }
        self.advance();
        Ok(())
    }

    /// A declaration (hoisted) or a statement appended to `body`.
    fn item(&mut self, body: &mut Vec<Stmt>) -> PResult<()> {
        if let Some(ty) = self.at_type() {
            self.advance();
            return self.declaration(ty);
        }
        if self.is_ident("nonlin") {
            self.advance();
            loop {
                let (name, span) = self.expect_ident()?;
                if self.known.contains_key(&name) || self.nonlins.contains(&name) {
                    return Err(FrontendError::new(ErrorKind::Syntax, span, format!("`{name}` declared twice")));
                }
                self.nonlins.push(name);
                if !self.eat_punct(",") {
                    break;
                }
            }
            return self.expect_punct(";");
        }
        let stmt = self.statement(true)?;
        body.push(stmt);
        Ok(())
    }

    fn declaration(&mut self, ty: ScalarType) -> PResult<()> {
        loop {
            let (name, span) = self.expect_ident()?;
            if self.known.contains_key(&name) || self.nonlins.contains(&name) {
                return Err(FrontendError::new(ErrorKind::Syntax, span, format!("`{name}` declared twice")));
            }
            let mut dims = Vec::new();
            while self.eat_punct("[") {
                let at = self.span();
                let e = self.expr_unchecked()?;
                let n = match e.const_value() {
                    Some(v) if v >= 1.0 && v.fract() == 0.0 => v as usize,
                    Some(_) => return Err(FrontendError::new(ErrorKind::Syntax, at, "array dimension must be a positive integer")),
                    None => {
                        return Err(FrontendError::new(ErrorKind::NonConstant, at, "array dimension must be a compile-time constant"))
                    }
                };
                dims.push(n);
                self.expect_punct("]")?;
            }
            let init = if self.eat_punct("=") { Some(self.initializer()?) } else { None };
            self.known.insert(name.clone(), dims.len());
            self.decls.push(VarDecl { name, ty, dims, init, span });
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(";")
    }

    fn initializer(&mut self) -> PResult<Init> {
        if self.eat_punct("{") {
            let mut items = Vec::new();
            if !self.is_punct("}") {
                loop {
                    items.push(self.initializer()?);
                    if !self.eat_punct(",") || self.is_punct("}") {
                        break;
                    }
                }
            }
            self.expect_punct("}")?;
            return Ok(Init::List(items));
        }
        let at = self.span();
        let e = self.expr_unchecked()?;
        e.const_value()
            .map(Init::Value)
            .ok_or_else(|| FrontendError::new(ErrorKind::NonConstant, at, "initializer must be a constant"))
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        if self.eat_punct("{") {
            let mut body = Vec::new();
            while !self.is_punct("}") {
                if self.peek().kind == TokenKind::Eof {
                    return Err(self.syntax("unexpected end of input, expected `}`"));
                }
                if let Some(ty) = self.at_type() {
                    self.advance();
                    self.declaration(ty)?;
                } else {
                    body.push(self.statement(false)?);
                }
            }
            self.advance();
            Ok(body)
        } else {
            Ok(vec![self.statement(false)?])
        }
    }

    fn statement(&mut self, top_level: bool) -> PResult<Stmt> {
        let span = self.span();
        let id = self.new_id();
        let kind = match &self.peek().kind {
            TokenKind::Ident(w) if w == "while" => {
                self.advance();
                self.expect_punct("(")?;
                let at = self.span();
                let c = self.expr_unchecked()?;
                if !matches!(c.const_value(), Some(v) if v != 0.0) {
                    return Err(FrontendError::new(ErrorKind::Unsupported, at, "only `while(1)` loops are supported"));
                }
                self.expect_punct(")")?;
                if !top_level {
                    return Err(FrontendError::new(ErrorKind::Unsupported, span, "nested while loops"));
                }
                let body = self.block()?;
                if body.is_empty() {
                    return Err(FrontendError::new(ErrorKind::Unsupported, span, "empty while(1) body"));
                }
                StmtKind::WhileTrue { body }
            }
            TokenKind::Ident(w) if w == "for" => self.for_loop()?,
            TokenKind::Ident(w) if w == "write" => {
                self.advance();
                self.expect_punct("(")?;
                let value = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                StmtKind::Write { value }
            }
            TokenKind::Ident(w) if w == "assume" => {
                self.advance();
                self.expect_punct("(")?;
                let lhs = self.expr()?;
                let op = self.relop()?;
                let rhs = self.expr()?;
                self.expect_punct(")")?;
                self.expect_punct(";")?;
                StmtKind::Assume { cond: Cond { lhs, op, rhs } }
            }
            TokenKind::Ident(w) if w == "if" || w == "return" || w == "do" || w == "switch" => {
                return Err(FrontendError::new(ErrorKind::Unsupported, span, format!("`{w}` statements")));
            }
            TokenKind::Ident(_) => self.assignment()?,
            TokenKind::Punct("{") => {
                return Err(FrontendError::new(ErrorKind::Unsupported, span, "bare blocks"));
            }
            TokenKind::Punct("*") | TokenKind::Punct("&") => {
                return Err(FrontendError::new(ErrorKind::Unsupported, span, "pointers"));
            }
            _ => return Err(self.syntax(format!("expected statement, found {}", describe(self.peek())))),
        };
        Ok(Stmt { id, span, kind })
    }

    fn relop(&mut self) -> PResult<RelOp> {
        let op = match &self.peek().kind {
            TokenKind::Punct("<") => RelOp::Lt,
            TokenKind::Punct("<=") => RelOp::Le,
            TokenKind::Punct(">") => RelOp::Gt,
            TokenKind::Punct(">=") => RelOp::Ge,
            TokenKind::Punct("==") => RelOp::Eq,
            TokenKind::Punct("!=") => RelOp::Ne,
            _ => return Err(self.syntax(format!("expected comparison, found {}", describe(self.peek())))),
        };
        self.advance();
        Ok(op)
    }

    fn const_int(&mut self) -> PResult<i64> {
        let at = self.span();
        let e = self.expr()?;
        match e.const_value() {
            Some(v) if v.fract() == 0.0 && v.abs() < 1e15 => Ok(v as i64),
            Some(_) => Err(FrontendError::new(ErrorKind::NonConstant, at, "loop bound must be an integer")),
            None => Err(FrontendError::new(ErrorKind::NonConstant, at, "loop bound must be a compile-time constant")),
        }
    }

    fn for_loop(&mut self) -> PResult<StmtKind> {
        self.advance();
        self.expect_punct("(")?;
        let (index, span) = self.expect_ident()?;
        self.check_declared(&index, 0, span)?;
        self.expect_punct("=")?;
        let lo = self.const_int()?;
        self.expect_punct(";")?;
        let (test_var, tspan) = self.expect_ident()?;
        if test_var != index {
            return Err(FrontendError::new(ErrorKind::Unsupported, tspan, "loop test must compare the loop index"));
        }
        let inclusive = if self.eat_punct("<") {
            false
        } else if self.eat_punct("<=") {
            true
        } else {
            return Err(self.syntax("expected `<` or `<=` in loop test"));
        };
        let hi = self.const_int()? + i64::from(inclusive);
        self.expect_punct(";")?;
        // i++ | ++i | i += 1 | i = i + 1
        let step_span = self.span();
        let ok = if self.eat_punct("++") {
            self.expect_ident()?.0 == index
        } else {
            let name = self.expect_ident()?.0;
            if self.eat_punct("++") {
                name == index
            } else if self.eat_punct("+=") {
                name == index && self.const_int()? == 1
            } else {
                false
            }
        };
        if !ok {
            return Err(FrontendError::new(ErrorKind::Unsupported, step_span, "loop step must be `index++`"));
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(StmtKind::For { index, lo, hi, body })
    }

    fn assignment(&mut self) -> PResult<StmtKind> {
        let lhs = self.lvalue()?;
        let op = if self.eat_punct("=") {
            AssignOp::Set
        } else if self.eat_punct("+=") {
            AssignOp::Add
        } else if self.eat_punct("-=") {
            AssignOp::Sub
        } else {
            return Err(self.syntax(format!("expected assignment operator, found {}", describe(self.peek()))));
        };
        if op == AssignOp::Set && self.is_ident("read") {
            let at = self.span();
            self.advance();
            self.expect_punct("(")?;
            let channel = self.const_int()?;
            self.expect_punct(")")?;
            self.expect_punct(";")?;
            let channel = u32::try_from(channel)
                .map_err(|_| FrontendError::new(ErrorKind::Syntax, at, "input channel must be a non-negative integer"))?;
            return Ok(StmtKind::Read { lhs, channel });
        }
        let rhs = self.expr()?;
        self.expect_punct(";")?;
        Ok(StmtKind::Assign { lhs, op, rhs })
    }

    fn check_declared(&self, name: &str, subscripts: usize, span: Span) -> PResult<()> {
        match self.known.get(name) {
            None => Err(FrontendError::new(ErrorKind::Undeclared, span, format!("undeclared identifier `{name}`"))),
            Some(&dims) if dims != subscripts => Err(FrontendError::new(
                ErrorKind::Unsupported,
                span,
                format!("`{name}` has {dims} dimension(s) but is used with {subscripts} subscript(s)"),
            )),
            Some(_) => Ok(()),
        }
    }

    fn lvalue(&mut self) -> PResult<LValue> {
        let (name, span) = self.expect_ident()?;
        let mut indices = Vec::new();
        while self.eat_punct("[") {
            indices.push(self.expr()?);
            self.expect_punct("]")?;
        }
        self.check_declared(&name, indices.len(), span)?;
        Ok(LValue { name, indices })
    }

    /// Expression with identifier checks.
    fn expr(&mut self) -> PResult<Expr> {
        self.additive(true)
    }

    /// Expression in a position where only literals are legal; identifiers are
    /// reported by the caller as non-constant rather than undeclared.
    fn expr_unchecked(&mut self) -> PResult<Expr> {
        self.additive(false)
    }

    fn additive(&mut self, checked: bool) -> PResult<Expr> {
        let mut lhs = self.term(checked)?;
        loop {
            let op = if self.eat_punct("+") {
                BinOp::Add
            } else if self.eat_punct("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.term(checked)?);
        }
    }

    fn term(&mut self, checked: bool) -> PResult<Expr> {
        let mut lhs = self.unary(checked)?;
        loop {
            let op = if self.eat_punct("*") {
                BinOp::Mul
            } else if self.eat_punct("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.unary(checked)?);
        }
    }

    fn unary(&mut self, checked: bool) -> PResult<Expr> {
        if self.eat_punct("-") {
            return Ok(Expr::Neg(Box::new(self.unary(checked)?)));
        }
        if self.eat_punct("+") {
            return self.unary(checked);
        }
        self.primary(checked)
    }

    fn primary(&mut self, checked: bool) -> PResult<Expr> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Number(v) => {
                self.advance();
                Ok(Expr::Num(v))
            }
            TokenKind::Punct("(") => {
                self.advance();
                let e = self.additive(checked)?;
                self.expect_punct(")")?;
                Ok(e)
            }
            TokenKind::Punct("&") | TokenKind::Punct("*") => {
                Err(FrontendError::new(ErrorKind::Unsupported, tok.span, "pointers"))
            }
            TokenKind::Ident(name) => {
                if matches!(&self.peek_at(1).kind, TokenKind::Punct("(")) {
                    self.advance();
                    if name == "read" {
                        return Err(FrontendError::new(
                            ErrorKind::Unsupported,
                            tok.span,
                            "`read` may only appear as `v = read(k);`",
                        ));
                    }
                    if !(BUILTIN_SECTOR.contains(&name.as_str()) || self.nonlins.contains(&name)) {
                        let msg = if ["malloc", "calloc", "free"].contains(&name.as_str()) {
                            "dynamic allocation".to_string()
                        } else {
                            format!("call to `{name}` (only sector-bounded functions may be called)")
                        };
                        return Err(FrontendError::new(ErrorKind::Unsupported, tok.span, msg));
                    }
                    self.expect_punct("(")?;
                    let arg = self.additive(checked)?;
                    self.expect_punct(")")?;
                    return Ok(Expr::Call(name, Box::new(arg)));
                }
                if !checked {
                    self.advance();
                    let mut indices = Vec::new();
                    while self.eat_punct("[") {
                        indices.push(self.additive(false)?);
                        self.expect_punct("]")?;
                    }
                    return Ok(Expr::Var(LValue { name, indices }));
                }
                Ok(Expr::Var(self.lvalue()?))
            }
            _ => Err(self.syntax(format!("expected expression, found {}", describe(&tok)))),
        }
    }
}

fn describe(t: &Token) -> String {
    match &t.kind {
        TokenKind::Eof => "end of input".to_string(),
        _ => format!("`{}`", t.text),
    }
}
