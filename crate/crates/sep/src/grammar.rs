//! Runtime-modifiable BNF grammars and the backtracking parser that
//! reads them. Grammars are plain data: rules can be added at any time,
//! including between two parses, which is how query-language palettes
//! and user definitions graft themselves onto the core syntax.

use std::collections::{HashMap, HashSet};

use regex::Regex;

use crate::error::ParseError;

/// One symbol in an alternative: a literal token, a nonterminal
/// reference, or a regex-matched terminal (patterns start with `^`).
#[derive(Debug, Clone, PartialEq)]
pub enum Sym {
    Lit(String),
    Nt(String),
    Rx(String),
}

impl Sym {
    /// Reads a symbol from grammar-file notation: `<name>` is a
    /// nonterminal, a token starting with `^` is a regex, anything else
    /// a literal.
    pub fn from_token(tok: &str) -> Sym {
        if tok.len() > 2 && tok.starts_with('<') && tok.ends_with('>') {
            Sym::Nt(tok[1..tok.len() - 1].to_string())
        } else if let Some(p) = tok.strip_prefix('^') {
            Sym::Rx(p.to_string())
        } else {
            Sym::Lit(tok.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseTree {
    Node { label: String, children: Vec<ParseTree> },
    Leaf(String),
}

impl ParseTree {
    pub fn label(&self) -> &str {
        match self {
            ParseTree::Node { label, .. } => label,
            ParseTree::Leaf(t) => t,
        }
    }

    pub fn children(&self) -> &[ParseTree] {
        match self {
            ParseTree::Node { children, .. } => children,
            ParseTree::Leaf(_) => &[],
        }
    }

    /// Concatenated leaf tokens, in order.
    pub fn leaves(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<String>) {
        match self {
            ParseTree::Leaf(t) => out.push(t.clone()),
            ParseTree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Grammar {
    start: String,
    rules: HashMap<String, Vec<Vec<Sym>>>,
}

impl Grammar {
    pub fn new(start: &str) -> Grammar {
        Grammar { start: start.to_string(), rules: HashMap::new() }
    }

    pub fn set_start(&mut self, start: &str) {
        self.start = start.to_string();
    }

    pub fn start_symbol(&self) -> &str {
        &self.start
    }

    pub fn has_rule(&self, lhs: &str) -> bool {
        self.rules.contains_key(lhs)
    }

    /// Appends one alternative to a nonterminal's rule list, creating
    /// the rule if absent. Order matters: earlier alternatives win.
    pub fn add_rule(&mut self, lhs: &str, alternative: Vec<Sym>) -> Result<(), ParseError> {
        if alternative.is_empty() {
            return Err(ParseError {
                position: 0,
                message: format!("empty alternative for <{}>", lhs),
            });
        }
        self.rules.entry(lhs.to_string()).or_default().push(alternative);
        Ok(())
    }

    /// Appends the single-symbol alternative `<case>` to `lhs`: the
    /// grafting point used by palettes to extend `<processor>` and
    /// friends.
    pub fn add_case_to_rule(&mut self, lhs: &str, case: &str) {
        self.rules
            .entry(lhs.to_string())
            .or_default()
            .push(vec![Sym::Nt(case.to_string())]);
    }

    /// Loads rules from text: `<lhs> ::= alt1 | alt2 ;` with `#`
    /// comments. `:=` is accepted as well, the trailing `;` is
    /// optional, and a rule may continue over several lines until the
    /// next line that introduces a new left side.
    pub fn load_text(&mut self, text: &str) -> Result<(), ParseError> {
        let mut rules: Vec<(usize, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match rules.last_mut() {
                Some((_, prev)) if !line.contains("::=") && !line.contains(":=") => {
                    prev.push(' ');
                    prev.push_str(line);
                }
                _ => rules.push((lineno, line.to_string())),
            }
        }
        for (lineno, line) in rules {
            let line = line.strip_suffix(';').unwrap_or(&line).trim();
            let (lhs, rhs) = line
                .split_once("::=")
                .or_else(|| line.split_once(":="))
                .ok_or_else(|| ParseError {
                    position: lineno + 1,
                    message: format!("line {}: missing `::=`", lineno + 1),
                })?;
            let lhs = lhs.trim();
            let lhs = lhs
                .strip_prefix('<')
                .and_then(|s| s.strip_suffix('>'))
                .ok_or_else(|| ParseError {
                    position: lineno + 1,
                    message: format!("line {}: left side must be <name>", lineno + 1),
                })?;
            for alt in rhs.split('|') {
                let syms: Vec<Sym> = alt.split_whitespace().map(Sym::from_token).collect();
                self.add_rule(lhs, syms).map_err(|e| ParseError {
                    position: lineno + 1,
                    message: format!("line {}: {}", lineno + 1, e.message),
                })?;
            }
        }
        Ok(())
    }

    /// Parses the input, returning the first derivation under ordered
    /// alternatives with full backtracking. The whole token stream must
    /// be consumed.
    pub fn parse(&self, input: &str) -> Result<ParseTree, ParseError> {
        let tokens = tokenize(input);
        self.parse_tokens(&tokens)
    }

    pub fn parse_tokens(&self, tokens: &[String]) -> Result<ParseTree, ParseError> {
        self.parse_tokens_from(&self.start, tokens)
    }

    /// Like `parse`, but derives from an arbitrary nonterminal instead
    /// of the start symbol.
    pub fn parse_with_start(&self, start: &str, input: &str) -> Result<ParseTree, ParseError> {
        let tokens = tokenize(input);
        self.parse_tokens_from(start, &tokens)
    }

    fn parse_tokens_from(&self, start: &str, tokens: &[String]) -> Result<ParseTree, ParseError> {
        let mut p = Parser {
            g: self,
            toks: tokens,
            furthest: 0,
            expected: Vec::new(),
            path: Vec::new(),
            fail_memo: HashSet::new(),
            regexes: HashMap::new(),
        };
        let mut result = None;
        let full = parse_nt(&mut p, start, 0, &mut |_p, tree, pos| {
            if pos == tokens.len() {
                result = Some(tree);
                Ok(true)
            } else {
                Ok(false)
            }
        })?;
        if full {
            return Ok(result.expect("continuation stored the tree"));
        }
        let found = p
            .toks
            .get(p.furthest)
            .map(|t| format!("`{}`", t))
            .unwrap_or_else(|| "end of input".to_string());
        let mut expected = p.expected;
        expected.sort();
        expected.dedup();
        Err(ParseError {
            position: p.furthest,
            message: format!("expected one of [{}], found {}", expected.join(", "), found),
        })
    }
}

struct Parser<'g> {
    g: &'g Grammar,
    toks: &'g [String],
    furthest: usize,
    expected: Vec<String>,
    /// (nonterminal, position) pairs on the active derivation path, for
    /// left-recursion detection.
    path: Vec<(String, usize)>,
    /// Nonterminals known to yield no parse at a position, regardless of
    /// what follows them.
    fail_memo: HashSet<(String, usize)>,
    regexes: HashMap<String, Regex>,
}

impl Parser<'_> {
    fn note_failure(&mut self, pos: usize, expected: &str) {
        if pos > self.furthest {
            self.furthest = pos;
            self.expected.clear();
        }
        if pos == self.furthest {
            self.expected.push(expected.to_string());
        }
    }
}

type Cont<'a> = dyn FnMut(&mut Parser, ParseTree, usize) -> Result<bool, ParseError> + 'a;

fn parse_nt(p: &mut Parser, nt: &str, pos: usize, k: &mut Cont) -> Result<bool, ParseError> {
    let key = (nt.to_string(), pos);
    if p.fail_memo.contains(&key) {
        return Ok(false);
    }
    if p.path.contains(&key) {
        return Err(ParseError {
            position: pos,
            message: format!("left-recursive rule <{}>", nt),
        });
    }
    let alts = match p.g.rules.get(nt) {
        Some(a) => a.clone(),
        None => {
            return Err(ParseError {
                position: pos,
                message: format!("no rule for nonterminal <{}>", nt),
            })
        }
    };
    p.path.push(key.clone());
    let mut yielded = false;
    let mut done = false;
    for alt in &alts {
        let mut children = Vec::new();
        let ok = parse_seq(p, alt, pos, &mut children, &mut |p, children, pos2| {
            yielded = true;
            let tree = ParseTree::Node { label: nt.to_string(), children: children.clone() };
            k(p, tree, pos2)
        })?;
        if ok {
            done = true;
            break;
        }
    }
    p.path.pop();
    if !yielded {
        p.fail_memo.insert(key);
    }
    Ok(done)
}

type SeqCont<'a> =
    dyn FnMut(&mut Parser, &mut Vec<ParseTree>, usize) -> Result<bool, ParseError> + 'a;

fn parse_seq(
    p: &mut Parser,
    syms: &[Sym],
    pos: usize,
    out: &mut Vec<ParseTree>,
    k: &mut SeqCont,
) -> Result<bool, ParseError> {
    let (first, rest) = match syms.split_first() {
        Some(x) => x,
        None => return k(p, out, pos),
    };
    match first {
        Sym::Lit(lit) => {
            if p.toks.get(pos).map(String::as_str) == Some(lit.as_str()) {
                out.push(ParseTree::Leaf(lit.clone()));
                let r = parse_seq(p, rest, pos + 1, out, k);
                out.pop();
                r
            } else {
                p.note_failure(pos, lit);
                Ok(false)
            }
        }
        Sym::Rx(pat) => {
            let matched = match p.toks.get(pos) {
                Some(tok) => {
                    if !p.regexes.contains_key(pat) {
                        let anchored = format!("^(?:{})", pat.trim_start_matches('^'));
                        let rx = Regex::new(&anchored).map_err(|e| ParseError {
                            position: pos,
                            message: format!("bad regex terminal `{}`: {}", pat, e),
                        })?;
                        p.regexes.insert(pat.clone(), rx);
                    }
                    let rx = &p.regexes[pat];
                    match rx.find(tok) {
                        Some(m) if m.end() == tok.len() => Some(tok.clone()),
                        _ => None,
                    }
                }
                None => None,
            };
            match matched {
                Some(tok) => {
                    out.push(ParseTree::Leaf(tok));
                    let r = parse_seq(p, rest, pos + 1, out, k);
                    out.pop();
                    r
                }
                None => {
                    p.note_failure(pos, pat);
                    Ok(false)
                }
            }
        }
        Sym::Nt(name) => {
            let rest = rest.to_vec();
            parse_nt(p, name, pos, &mut |p, tree, pos2| {
                out.push(tree);
                let r = parse_seq(p, &rest, pos2, out, k);
                out.pop();
                r
            })
        }
    }
}

/// Splits query text into tokens: whitespace-separated words, with
/// parentheses, commas, operators and quoted strings standing alone.
/// A run of digits directly followed by letters splits ("4TH" is two
/// tokens) so that ordinal suffixes read naturally; a dot between
/// digits stays inside the number.
pub fn tokenize(input: &str) -> Vec<String> {
    let chars: Vec<char> = input.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' || c == '"' {
            let quote = c;
            let mut tok = String::from(c);
            i += 1;
            while i < chars.len() {
                tok.push(chars[i]);
                i += 1;
                if chars[i - 1] == quote {
                    break;
                }
            }
            toks.push(tok);
        } else if "(),=+*/<>:#".contains(c) {
            toks.push(c.to_string());
            i += 1;
        } else if c.is_ascii_digit() {
            let mut tok = String::new();
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || (chars[i] == '.'
                        && i + 1 < chars.len()
                        && chars[i + 1].is_ascii_digit()))
            {
                tok.push(chars[i]);
                i += 1;
            }
            toks.push(tok);
        } else if c == '.' {
            toks.push(".".to_string());
            i += 1;
        } else {
            let mut tok = String::new();
            while i < chars.len()
                && !chars[i].is_whitespace()
                && !"(),=+*/<>:#.'\"".contains(chars[i])
            {
                tok.push(chars[i]);
                i += 1;
            }
            toks.push(tok);
        }
    }
    toks
}
