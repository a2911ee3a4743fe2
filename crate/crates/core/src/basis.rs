//! Scalar basis functions over the parameter vector.
//!
//! Expressions are parsed from a small grammar (numbers, parameter names,
//! `+ - * /`, unary minus, integer powers, `sin`, `cos`, `exp`), evaluated
//! pointwise, and differentiated symbolically. Division is only admitted
//! when interval evaluation over the parameter box proves the denominator
//! cannot vanish.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("unsupported function `{name}` at byte {pos}")]
    UnsupportedFunction { pos: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("basis function {index} (`{source_text}`): {err}")]
    Parse {
        index: usize,
        source_text: String,
        #[source]
        err: ParseError,
    },
    #[error("basis function {index} (`{source_text}`): denominator may vanish on the parameter box")]
    SingularDivision { index: usize, source_text: String },
    #[error("parameter box has {bounds} components but {names} parameter names")]
    BoxMismatch { bounds: usize, names: usize },
}

/// Expression tree of a scalar basis function.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Reference to parameter component by index.
    Param(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, alpha: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Param(i) => alpha[*i],
            Expr::Add(a, b) => a.eval(alpha) + b.eval(alpha),
            Expr::Sub(a, b) => a.eval(alpha) - b.eval(alpha),
            Expr::Mul(a, b) => a.eval(alpha) * b.eval(alpha),
            Expr::Div(a, b) => a.eval(alpha) / b.eval(alpha),
            Expr::Neg(a) => -a.eval(alpha),
            Expr::Pow(a, k) => a.eval(alpha).powi(*k),
            Expr::Sin(a) => a.eval(alpha).sin(),
            Expr::Cos(a) => a.eval(alpha).cos(),
            Expr::Exp(a) => a.eval(alpha).exp(),
        }
    }

    /// Parameter indices referenced textually by the expression.
    pub fn deps(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_deps(&mut out);
        out
    }

    fn collect_deps(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Param(i) => {
                out.insert(*i);
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_deps(out);
                b.collect_deps(out);
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => {
                a.collect_deps(out)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Exact partial derivative with respect to parameter `i`.
    pub fn diff(&self, i: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Param(j) => Expr::Const(if *j == i { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => add(a.diff(i), b.diff(i)),
            Expr::Sub(a, b) => sub(a.diff(i), b.diff(i)),
            Expr::Mul(a, b) => add(
                mul(a.diff(i), (**b).clone()),
                mul((**a).clone(), b.diff(i)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(i);
                let db = b.diff(i);
                if db.is_zero() {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), 2),
                    )
                }
            }
            Expr::Neg(a) => neg(a.diff(i)),
            Expr::Pow(a, k) => {
                if *k == 0 {
                    return Expr::Const(0.0);
                }
                let inner = mul(Expr::Const(*k as f64), pow((**a).clone(), k - 1));
                mul(inner, a.diff(i))
            }
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(i)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(i))),
            Expr::Exp(a) => mul(Expr::Exp(a.clone()), a.diff(i)),
        }
    }

    /// Conservative enclosure of the expression's image over a box.
    /// Fails if any division's denominator enclosure contains zero.
    pub fn enclose(&self, lo: &[f64], hi: &[f64]) -> Result<Interval, ()> {
        Ok(match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Param(i) => Interval::new(lo[*i], hi[*i]),
            Expr::Add(a, b) => a.enclose(lo, hi)?.add(b.enclose(lo, hi)?),
            Expr::Sub(a, b) => a.enclose(lo, hi)?.add(b.enclose(lo, hi)?.neg()),
            Expr::Mul(a, b) => a.enclose(lo, hi)?.mul(b.enclose(lo, hi)?),
            Expr::Div(a, b) => {
                let den = b.enclose(lo, hi)?;
                a.enclose(lo, hi)?.mul(den.recip()?)
            }
            Expr::Neg(a) => a.enclose(lo, hi)?.neg(),
            Expr::Pow(a, k) => a.enclose(lo, hi)?.powi(*k)?,
            Expr::Sin(a) => a.enclose(lo, hi)?.sin(),
            Expr::Cos(a) => a.enclose(lo, hi)?.cos(),
            Expr::Exp(a) => a.enclose(lo, hi)?.exp(),
        })
    }

    /// Writes the expression with parameter names substituted.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if a.is_zero() => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    match (&a, k) {
        (_, 0) => Expr::Const(1.0),
        (_, 1) => a,
        (Expr::Const(c), _) => Expr::Const(c.powi(k)),
        _ => Expr::Pow(Box::new(a), k),
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self.expr, self.names, f)
    }
}

// Fully parenthesized so that re-parsing reproduces the same tree.
fn write_expr(e: &Expr, names: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let bin = |f: &mut fmt::Formatter<'_>, a: &Expr, op: &str, b: &Expr| -> fmt::Result {
        write!(f, "(")?;
        write_expr(a, names, f)?;
        write!(f, " {op} ")?;
        write_expr(b, names, f)?;
        write!(f, ")")
    };
    let call = |f: &mut fmt::Formatter<'_>, name: &str, a: &Expr| -> fmt::Result {
        write!(f, "{name}(")?;
        write_expr(a, names, f)?;
        write!(f, ")")
    };
    match e {
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
            write!(f, "(-{})", -c)
        }
        Expr::Const(c) => write!(f, "{c}"),
        Expr::Param(i) => write!(f, "{}", names[*i]),
        Expr::Add(a, b) => bin(f, a, "+", b),
        Expr::Sub(a, b) => bin(f, a, "-", b),
        Expr::Mul(a, b) => bin(f, a, "*", b),
        Expr::Div(a, b) => bin(f, a, "/", b),
        Expr::Neg(a) => {
            write!(f, "(-")?;
            write_expr(a, names, f)?;
            write!(f, ")")
        }
        Expr::Pow(a, k) => {
            write!(f, "(")?;
            write_expr(a, names, f)?;
            write!(f, ")^{k}")
        }
        Expr::Sin(a) => call(f, "sin", a),
        Expr::Cos(a) => call(f, "cos", a),
        Expr::Exp(a) => call(f, "exp", a),
    }
}

/// Closed interval with outward-rounded arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(x: f64) -> f64 {
    x.next_down()
}

fn up(x: f64) -> f64 {
    x.next_up()
}

// Widening for library transcendental and powi results, which are not
// correctly rounded.
fn down_loose(x: f64) -> f64 {
    down(x - x.abs() * 8.0 * f64::EPSILON)
}

fn up_loose(x: f64) -> f64 {
    up(x + x.abs() * 8.0 * f64::EPSILON)
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn add(self, o: Interval) -> Interval {
        Interval::new(down(self.lo + o.lo), up(self.hi + o.hi))
    }

    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    fn mul(self, o: Interval) -> Interval {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(down(lo), up(hi))
    }

    fn recip(self) -> Result<Interval, ()> {
        if self.contains(0.0) {
            return Err(());
        }
        Ok(Interval::new(down(1.0 / self.hi), up(1.0 / self.lo)))
    }

    fn powi(self, k: i32) -> Result<Interval, ()> {
        if k == 0 {
            return Ok(Interval::point(1.0));
        }
        if k < 0 {
            return self.powi(-k)?.recip();
        }
        let (a, b) = (self.lo.powi(k), self.hi.powi(k));
        let (lo, hi) = if k % 2 == 1 {
            (a, b)
        } else if self.contains(0.0) {
            (0.0, a.max(b))
        } else {
            (a.min(b), a.max(b))
        };
        let lo = if k % 2 == 0 { down_loose(lo).max(0.0) } else { down_loose(lo) };
        Ok(Interval::new(lo, up_loose(hi)))
    }

    fn exp(self) -> Interval {
        Interval::new(down_loose(self.lo.exp()).max(0.0), up_loose(self.hi.exp()))
    }

    fn sin(self) -> Interval {
        use std::f64::consts::{FRAC_PI_2, TAU};
        if !(self.hi - self.lo < TAU) {
            return Interval::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.sin(), self.hi.sin());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        // Extrema at pi/2 + 2k pi (max) and -pi/2 + 2k pi (min).
        let hits = |offset: f64| {
            let k = ((self.lo - offset) / TAU).ceil();
            offset + k * TAU <= self.hi
        };
        if hits(FRAC_PI_2) {
            hi = 1.0;
        }
        if hits(-FRAC_PI_2) {
            lo = -1.0;
        }
        Interval::new(down_loose(lo).max(-1.0), up_loose(hi).min(1.0))
    }

    fn cos(self) -> Interval {
        use std::f64::consts::FRAC_PI_2;
        Interval::new(down(self.lo + FRAC_PI_2), up(self.hi + FRAC_PI_2)).sin()
    }
}

/// Parses `source` against the ordered parameter names.
pub fn parse_expr(source: &str, params: &[String]) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        params,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    params: &'a [String],
}

impl Parser<'_> {
    fn syntax(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let k = if self.eat(b'(') {
            let k = self.integer()?;
            self.expect(b')')?;
            k
        } else {
            self.integer()?
        };
        Ok(Expr::Pow(Box::new(base), k))
    }

    fn integer(&mut self) -> Result<i32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.src.get(self.pos), Some(b'-') | Some(b'+')) {
            self.pos += 1;
        }
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<i32>().map_err(|_| ParseError::Syntax {
            pos: start,
            msg: "exponent must be an integer literal".into(),
        })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(self.syntax(format!("unexpected `{}`", c as char))),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'-' || s[self.pos] == b'+') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(&mut self.pos);
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        if self.peek() == Some(b'(') {
            let ctor: fn(Box<Expr>) -> Expr = match name {
                "sin" => Expr::Sin,
                "cos" => Expr::Cos,
                "exp" => Expr::Exp,
                _ => {
                    return Err(ParseError::UnsupportedFunction {
                        pos: start,
                        name: name.to_string(),
                    })
                }
            };
            self.pos += 1;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(ctor(Box::new(arg)));
        }
        match self.params.iter().position(|p| p == name) {
            Some(i) => Ok(Expr::Param(i)),
            None => Err(ParseError::UnknownIdentifier {
                pos: start,
                name: name.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisRole {
    /// Expands the plant matrices.
    Plant,
    /// Expands the control design strategy.
    Strategy,
}

/// Ordered basis functions with cached dependency sets and gradients.
#[derive(Debug, Clone)]
pub struct BasisSet {
    role: BasisRole,
    params: Vec<String>,
    sources: Vec<String>,
    funcs: Vec<Expr>,
    deps: Vec<BTreeSet<usize>>,
    // grads[l][i] = d funcs[l] / d alpha_i
    grads: Vec<Vec<Expr>>,
}

impl BasisSet {
    /// Parses every source and checks every division against the box
    /// `[lo, hi]`.
    pub fn new<S: AsRef<str>>(
        role: BasisRole,
        params: &[String],
        sources: &[S],
        lo: &[f64],
        hi: &[f64],
    ) -> Result<Self, BasisError> {
        if lo.len() != params.len() || hi.len() != params.len() {
            return Err(BasisError::BoxMismatch {
                bounds: lo.len().min(hi.len()),
                names: params.len(),
            });
        }
        let mut funcs = Vec::with_capacity(sources.len());
        for (index, src) in sources.iter().enumerate() {
            let src = src.as_ref();
            let e = parse_expr(src, params).map_err(|err| BasisError::Parse {
                index,
                source_text: src.to_string(),
                err,
            })?;
            // Derivatives may introduce new divisions by powers of the same
            // denominators, which the check on `e` already covers.
            if e.enclose(lo, hi).is_err() {
                return Err(BasisError::SingularDivision {
                    index,
                    source_text: src.to_string(),
                });
            }
            funcs.push(e);
        }
        let deps = funcs.iter().map(Expr::deps).collect();
        let grads = funcs
            .iter()
            .map(|e| (0..params.len()).map(|i| e.diff(i)).collect())
            .collect();
        Ok(BasisSet {
            role,
            params: params.to_vec(),
            sources: sources.iter().map(|s| s.as_ref().to_string()).collect(),
            funcs,
            deps,
            grads,
        })
    }

    /// The single constant function `1`.
    pub fn constant(role: BasisRole, params: &[String]) -> Self {
        BasisSet {
            role,
            params: params.to_vec(),
            sources: vec!["1".into()],
            funcs: vec![Expr::Const(1.0)],
            deps: vec![BTreeSet::new()],
            grads: vec![vec![Expr::Const(0.0); params.len()]],
        }
    }

    pub fn role(&self) -> BasisRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn funcs(&self) -> &[Expr] {
        &self.funcs
    }

    pub fn deps(&self, l: usize) -> &BTreeSet<usize> {
        &self.deps[l]
    }

    pub fn eval(&self, alpha: &[f64]) -> Vec<f64> {
        self.funcs.iter().map(|e| e.eval(alpha)).collect()
    }

    /// `out[i][l]` is the partial derivative of function `l` along `alpha_i`.
    pub fn jacobian(&self, alpha: &[f64]) -> Vec<Vec<f64>> {
        (0..self.params.len())
            .map(|i| self.grads.iter().map(|g| g[i].eval(alpha)).collect())
            .collect()
    }

    pub fn derivative(&self, l: usize, i: usize) -> &Expr {
        &self.grads[l][i]
    }
}
