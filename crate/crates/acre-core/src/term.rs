//! First-order content language: terms, predicates and variable bindings.
//!
//! Protocol transitions are written with variables (`?x` immutable, `??x`
//! mutable, `?` anonymous) while message content is always ground. Matching
//! one against the other produces bindings that persist for the lifetime of
//! a conversation.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Context in which a variable occurrence is used.
///
/// An immutable occurrence is replaced by its bound value before matching,
/// so it can only ever re-match that value. A mutable occurrence is never
/// replaced and is free to overwrite the variable's binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarContext {
    Mutable,
    Immutable,
}

/// A term of the content language.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// A constant symbol. Numbers are constants compared textually.
    Constant(String),
    /// A variable occurrence. `name` is `None` for the anonymous variable
    /// `?`, which matches anything and never acquires a binding.
    Variable {
        name: Option<String>,
        context: VarContext,
    },
    /// A function application. Zero-argument functions are represented as
    /// constants, so `args` is always non-empty.
    Function { functor: String, args: Vec<Term> },
}

impl Term {
    pub fn constant(symbol: impl Into<String>) -> Term {
        Term::Constant(symbol.into())
    }

    pub fn variable(name: impl Into<String>, context: VarContext) -> Term {
        Term::Variable {
            name: Some(name.into()),
            context,
        }
    }

    pub fn anonymous() -> Term {
        Term::Variable {
            name: None,
            context: VarContext::Immutable,
        }
    }

    /// Builds a function term, collapsing the zero-argument case to a
    /// constant.
    pub fn function(functor: impl Into<String>, args: Vec<Term>) -> Term {
        let functor = functor.into();
        if args.is_empty() {
            Term::Constant(functor)
        } else {
            Term::Function { functor, args }
        }
    }

    /// True when the term contains no variable at any depth.
    pub fn is_ground(&self) -> bool {
        match self {
            Term::Constant(_) => true,
            Term::Variable { .. } => false,
            Term::Function { args, .. } => args.iter().all(Term::is_ground),
        }
    }

    /// Tests whether this (possibly variable-carrying) term matches a ground
    /// term. Any variable occurrence matches anything; constants must be
    /// equal; functions must agree on functor and arity with argument lists
    /// matched left to right, each position seen after applying the bindings
    /// accumulated from earlier positions.
    pub fn matches(&self, ground: &Term) -> bool {
        debug_assert!(ground.is_ground());
        match (self, ground) {
            (Term::Variable { .. }, _) => true,
            (Term::Constant(a), Term::Constant(b)) => a == b,
            (
                Term::Function { functor, args },
                Term::Function {
                    functor: gf,
                    args: gargs,
                },
            ) => functor == gf && args.len() == gargs.len() && list_matches(args, gargs),
            _ => false,
        }
    }

    /// Applies bindings: an immutable variable occurrence with a bound value
    /// is replaced by that value; mutable occurrences, unbound variables, the
    /// anonymous variable and constants are returned unchanged.
    pub fn apply(&self, bindings: &Bindings) -> Term {
        match self {
            Term::Function { functor, args } => Term::Function {
                functor: functor.clone(),
                args: args.iter().map(|a| a.apply(bindings)).collect(),
            },
            Term::Variable {
                name: Some(name),
                context: VarContext::Immutable,
            } => match bindings.get(name) {
                Some(value) => value.clone(),
                None => self.clone(),
            },
            _ => self.clone(),
        }
    }

    /// Bindings arising from comparing this term with a ground term. A named
    /// variable yields a single binding, the anonymous variable yields none,
    /// matching functions bind their argument lists incrementally, and
    /// everything else yields nothing.
    pub fn bind(&self, ground: &Term) -> Bindings {
        debug_assert!(ground.is_ground());
        match self {
            Term::Variable {
                name: Some(name), ..
            } => {
                let mut b = Bindings::new();
                b.insert(name.clone(), ground.clone());
                b
            }
            Term::Function { functor, args } => match ground {
                Term::Function {
                    functor: gf,
                    args: gargs,
                } if functor == gf && args.len() == gargs.len() && list_matches(args, gargs) => {
                    list_bind(args, gargs)
                }
                _ => Bindings::new(),
            },
            _ => Bindings::new(),
        }
    }
}

/// Matches two equal-length term lists left to right, threading bindings
/// from earlier positions into later ones.
fn list_matches(patterns: &[Term], grounds: &[Term]) -> bool {
    let mut acc = Bindings::new();
    for (p, g) in patterns.iter().zip(grounds) {
        let applied = p.apply(&acc);
        if !applied.matches(g) {
            return false;
        }
        acc = acc.combine(&applied.bind(g));
    }
    true
}

/// Accumulates the bindings produced by matching two equal-length term
/// lists. Does not itself check that the lists match.
fn list_bind(patterns: &[Term], grounds: &[Term]) -> Bindings {
    let mut acc = Bindings::new();
    for (p, g) in patterns.iter().zip(grounds) {
        let applied = p.apply(&acc);
        acc = acc.combine(&applied.bind(g));
    }
    acc
}

/// A predicate: the content of a message or of a transition pattern.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    pub symbol: String,
    pub args: Vec<Term>,
}

impl Predicate {
    pub fn new(symbol: impl Into<String>, args: Vec<Term>) -> Predicate {
        Predicate {
            symbol: symbol.into(),
            args,
        }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    /// True when symbols and arities are equal and the argument lists match.
    pub fn matches(&self, ground: &Predicate) -> bool {
        debug_assert!(ground.is_ground());
        self.symbol == ground.symbol
            && self.args.len() == ground.args.len()
            && list_matches(&self.args, &ground.args)
    }

    /// Applies bindings to each argument; the symbol is untouched.
    pub fn apply(&self, bindings: &Bindings) -> Predicate {
        Predicate {
            symbol: self.symbol.clone(),
            args: self.args.iter().map(|a| a.apply(bindings)).collect(),
        }
    }

    /// Bindings from comparing with a ground predicate; empty when the
    /// predicates do not match.
    pub fn bind(&self, ground: &Predicate) -> Bindings {
        if self.matches(ground) {
            list_bind(&self.args, &ground.args)
        } else {
            Bindings::new()
        }
    }

    /// The predicate viewed as a ground term (zero-arity collapses to a
    /// constant). Panics if the predicate is not ground.
    pub fn to_term(&self) -> Term {
        assert!(self.is_ground(), "only ground predicates convert to terms");
        Term::function(self.symbol.clone(), self.args.clone())
    }

    /// Re-reads a ground term as a predicate.
    pub fn from_term(term: &Term) -> Option<Predicate> {
        match term {
            Term::Constant(c) => Some(Predicate::new(c.clone(), Vec::new())),
            Term::Function { functor, args } => Some(Predicate::new(functor.clone(), args.clone())),
            Term::Variable { .. } => None,
        }
    }
}

/// A set of variable-name → ground-term associations. Each variable appears
/// at most once; combining gives precedence to the newer set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    entries: BTreeMap<String, Term>,
}

impl Bindings {
    pub fn new() -> Bindings {
        Bindings::default()
    }

    pub fn insert(&mut self, name: String, value: Term) {
        assert!(value.is_ground(), "binding values must be ground");
        self.entries.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Term> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Term)> {
        self.entries.iter()
    }

    /// Merges `newer` over `self`: entries of `newer` win on common names.
    pub fn combine(&self, newer: &Bindings) -> Bindings {
        let mut entries = self.entries.clone();
        for (k, v) in &newer.entries {
            entries.insert(k.clone(), v.clone());
        }
        Bindings { entries }
    }
}

impl FromIterator<(String, Term)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (String, Term)>>(iter: I) -> Bindings {
        let mut b = Bindings::new();
        for (k, v) in iter {
            b.insert(k, v);
        }
        b
    }
}

impl fmt::Display for Bindings {
    /// Renders as `?a=v,?b=w` with names in sorted order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, value) in &self.entries {
            if !first {
                write!(f, ",")?;
            }
            first = false;
            write!(f, "?{}={}", name, value)?;
        }
        Ok(())
    }
}

/// Errors raised while parsing terms and predicates.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected end of input at position {0}")]
    UnexpectedEnd(usize),
    #[error("unexpected character {1:?} at position {0}")]
    UnexpectedChar(usize, char),
    #[error("empty functor at position {0}")]
    EmptyFunctor(usize),
    #[error("mutable variable `??` requires a name at position {0}")]
    UnnamedMutable(usize),
    #[error("unbalanced parenthesis at position {0}")]
    Unbalanced(usize),
    #[error("unterminated quoted string starting at position {0}")]
    UnterminatedString(usize),
    #[error("trailing input at position {0}")]
    TrailingInput(usize),
    #[error("variable not allowed here at position {0}")]
    UnexpectedVariable(usize),
    #[error("empty input")]
    Empty,
}

fn is_bare_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

fn needs_quoting(symbol: &str) -> bool {
    symbol.is_empty() || !symbol.chars().all(is_bare_char)
}

fn write_symbol(f: &mut fmt::Formatter<'_>, symbol: &str) -> fmt::Result {
    if needs_quoting(symbol) {
        write!(f, "\"{}\"", symbol.replace('"', "\"\""))
    } else {
        f.write_str(symbol)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Constant(c) => write_symbol(f, c),
            Term::Variable { name: None, .. } => f.write_str("?"),
            Term::Variable {
                name: Some(n),
                context,
            } => match context {
                VarContext::Immutable => write!(f, "?{}", n),
                VarContext::Mutable => write!(f, "??{}", n),
            },
            Term::Function { functor, args } => {
                write_symbol(f, functor)?;
                f.write_str("(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}", a)?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}",
            Term::function(self.symbol.clone(), self.args.clone())
        )
    }
}

struct Parser<'a> {
    input: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(input: &'a str) -> Parser<'a> {
        Parser {
            input,
            chars: input.char_indices().collect(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn byte_pos(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|&(i, _)| i)
            .unwrap_or(self.input.len())
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn bare_token(&mut self) -> String {
        let mut s = String::new();
        while matches!(self.peek(), Some(c) if is_bare_char(c)) {
            s.push(self.bump().unwrap());
        }
        s
    }

    fn quoted_string(&mut self) -> Result<String, ParseError> {
        let start = self.byte_pos();
        self.bump(); // opening quote
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::UnterminatedString(start)),
                Some('"') => {
                    // doubled quote is an escaped quote
                    if self.peek() == Some('"') {
                        self.bump();
                        s.push('"');
                    } else {
                        return Ok(s);
                    }
                }
                Some(c) => s.push(c),
            }
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        self.skip_ws();
        let pos = self.byte_pos();
        match self.peek() {
            None => Err(ParseError::UnexpectedEnd(pos)),
            Some('?') => {
                self.bump();
                let context = if self.peek() == Some('?') {
                    self.bump();
                    VarContext::Mutable
                } else {
                    VarContext::Immutable
                };
                let name = self.bare_token();
                if name.is_empty() {
                    match context {
                        VarContext::Immutable => Ok(Term::anonymous()),
                        VarContext::Mutable => Err(ParseError::UnnamedMutable(pos)),
                    }
                } else {
                    Ok(Term::Variable {
                        name: Some(name),
                        context,
                    })
                }
            }
            Some('"') => Ok(Term::Constant(self.quoted_string()?)),
            Some(c) if is_bare_char(c) => {
                let token = self.bare_token();
                self.skip_ws();
                if self.peek() == Some('(') {
                    if token.is_empty() {
                        return Err(ParseError::EmptyFunctor(pos));
                    }
                    let args = self.arg_list()?;
                    Ok(Term::function(token, args))
                } else {
                    Ok(Term::Constant(token))
                }
            }
            Some(c) => Err(ParseError::UnexpectedChar(pos, c)),
        }
    }

    fn arg_list(&mut self) -> Result<Vec<Term>, ParseError> {
        let open = self.byte_pos();
        self.bump(); // '('
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.term()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(')') => {
                    self.bump();
                    return Ok(args);
                }
                None => return Err(ParseError::Unbalanced(open)),
                Some(c) => return Err(ParseError::UnexpectedChar(self.byte_pos(), c)),
            }
        }
    }
}

/// Parses one term from the whole input.
pub fn parse_term(input: &str) -> Result<Term, ParseError> {
    let (term, consumed) = parse_term_prefix(input)?;
    let rest = &input[consumed..];
    if let Some(extra) = rest.find(|c: char| !c.is_whitespace()) {
        return Err(ParseError::TrailingInput(consumed + extra));
    }
    Ok(term)
}

/// Parses a leading term and reports how many bytes were consumed. Used by
/// the message parser to pull a predicate out of a larger expression.
pub fn parse_term_prefix(input: &str) -> Result<(Term, usize), ParseError> {
    let mut p = Parser::new(input);
    p.skip_ws();
    if p.peek().is_none() {
        return Err(ParseError::Empty);
    }
    let term = p.term()?;
    Ok((term, p.byte_pos()))
}

/// Parses a predicate. A bare constant denotes a zero-arity predicate; a
/// function denotes a predicate with the same symbol and arguments.
pub fn parse_predicate(input: &str) -> Result<Predicate, ParseError> {
    let term = parse_term(input)?;
    match term {
        Term::Constant(c) => Ok(Predicate::new(c, Vec::new())),
        Term::Function { functor, args } => Ok(Predicate::new(functor, args)),
        Term::Variable { .. } => Err(ParseError::UnexpectedVariable(0)),
    }
}
