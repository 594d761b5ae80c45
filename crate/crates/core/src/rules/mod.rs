//! Closed Horn rules of length one or two: representation, text format,
//! mining and one-cycle grounding.
//!
//! Every rule has one of these shapes (up to the orientation of each premise
//! atom):
//!
//! ```text
//! r(x,y)            => c(x,y)        r(y,x)            => c(x,y)
//! r1(x,y) & r2(y,z) => c(x,z)        r1(y,x) & r2(z,y) => c(x,z)   ...
//! ```
//!
//! The text format is one rule per line:
//! `atoms => conclusion<TAB>confidence<TAB>support[<TAB>body_count]`.

mod grounding;
mod mining;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};

pub use grounding::{ground_rules, ConclusionSet, ConclusionState};
pub use mining::{
    dedupe_rules, mine_rules, rule_statistics, ConfidenceKind, MiningConfig, PcaDirection,
    RuleStatistics,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    X,
    Y,
    Z,
}

impl Var {
    fn parse(s: &str) -> Option<Var> {
        match s.trim() {
            "x" => Some(Var::X),
            "y" => Some(Var::Y),
            "z" => Some(Var::Z),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub relation: RelationId,
    pub arg1: Var,
    pub arg2: Var,
}

impl Atom {
    pub fn new(relation: RelationId, arg1: Var, arg2: Var) -> Self {
        Atom {
            relation,
            arg1,
            arg2,
        }
    }

    /// Grounds the atom under a binding of `x`, `y`, `z`.
    pub fn ground(&self, x: EntityId, y: EntityId, z: EntityId) -> Triple {
        let pick = |v: Var| match v {
            Var::X => x,
            Var::Y => y,
            Var::Z => z,
        };
        Triple {
            head: pick(self.arg1),
            relation: self.relation,
            tail: pick(self.arg2),
        }
    }
}

/// Orientation of a premise atom along the `x → y → z` chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Dir {
    Forward,
    Inverse,
}

/// One hop of a rule body: the atom's relation and whether it is read
/// along the chain (`r(a,b)`) or against it (`r(b,a)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Step {
    pub relation: RelationId,
    pub dir: Dir,
}

impl Step {
    /// Entities reachable from `from` in one hop.
    pub fn next<'a>(&self, kg: &'a KnowledgeGraph, from: EntityId) -> &'a [EntityId] {
        match self.dir {
            Dir::Forward => kg.tails_of(from, self.relation),
            Dir::Inverse => kg.heads_of(from, self.relation),
        }
    }

    /// Every `(from, to)` pair the hop connects.
    pub fn pairs<'a>(
        &self,
        kg: &'a KnowledgeGraph,
    ) -> impl Iterator<Item = (EntityId, EntityId)> + 'a {
        let dir = self.dir;
        kg.pairs(self.relation)
            .iter()
            .map(move |&(h, t)| match dir {
                Dir::Forward => (h, t),
                Dir::Inverse => (t, h),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HornRule {
    pub premise: Vec<Atom>,
    pub conclusion: Atom,
    pub confidence: f64,
    pub support: u64,
    /// Denominator of `confidence`; unknown for rules written by hand.
    pub body_count: Option<u64>,
}

impl HornRule {
    /// Validates shape and statistics.
    pub fn new(
        premise: Vec<Atom>,
        conclusion: Atom,
        confidence: f64,
        support: u64,
        body_count: Option<u64>,
    ) -> Result<Self> {
        let rule = HornRule {
            premise,
            conclusion,
            confidence,
            support,
            body_count,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn len(&self) -> usize {
        self.premise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.premise.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::Rule(format!(
                "confidence {} outside (0, 1]",
                self.confidence
            )));
        }
        if let Some(body) = self.body_count {
            if self.support > body {
                return Err(Error::Rule(format!(
                    "support {} exceeds body count {body}",
                    self.support
                )));
            }
        }
        self.steps().map(|_| ())
    }

    /// The premise as a chain of hops from `x`, checking closedness.
    pub(crate) fn steps(&self) -> Result<Vec<Step>> {
        use Var::*;
        let c = self.conclusion;
        let orient = |atom: &Atom, from: Var, to: Var| -> Result<Step> {
            let dir = if (atom.arg1, atom.arg2) == (from, to) {
                Dir::Forward
            } else if (atom.arg1, atom.arg2) == (to, from) {
                Dir::Inverse
            } else {
                return Err(Error::Rule(format!(
                    "atom ({}, {}) does not link {} and {}",
                    atom.arg1.name(),
                    atom.arg2.name(),
                    from.name(),
                    to.name()
                )));
            };
            Ok(Step {
                relation: atom.relation,
                dir,
            })
        };
        match self.premise.as_slice() {
            [a] => {
                if (c.arg1, c.arg2) != (X, Y) {
                    return Err(Error::Rule("length-1 conclusion must be c(x,y)".into()));
                }
                let step = orient(a, X, Y)?;
                if step.dir == Dir::Forward && step.relation == c.relation {
                    return Err(Error::Rule("rule concludes its own premise".into()));
                }
                Ok(vec![step])
            }
            [a, b] => {
                if (c.arg1, c.arg2) != (X, Z) {
                    return Err(Error::Rule("length-2 conclusion must be c(x,z)".into()));
                }
                Ok(vec![orient(a, X, Y)?, orient(b, Y, Z)?])
            }
            _ => Err(Error::Rule(format!(
                "premise must have 1 or 2 atoms, found {}",
                self.premise.len()
            ))),
        }
    }

    /// Every relation the rule mentions.
    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.premise
            .iter()
            .map(|a| a.relation)
            .chain(std::iter::once(self.conclusion.relation))
    }

    /// Same logical rule, statistics aside.
    pub fn same_shape(&self, other: &HornRule) -> bool {
        self.premise == other.premise && self.conclusion == other.conclusion
    }

    pub fn display<'a>(&'a self, vocab: &'a Vocabulary) -> RuleDisplay<'a> {
        RuleDisplay { rule: self, vocab }
    }
}

pub(crate) fn chain_rule(steps: &[Step], conclusion: RelationId) -> (Vec<Atom>, Atom) {
    use Var::*;
    let vars: &[(Var, Var)] = if steps.len() == 1 {
        &[(X, Y)]
    } else {
        &[(X, Y), (Y, Z)]
    };
    let premise = steps
        .iter()
        .zip(vars)
        .map(|(s, &(a, b))| match s.dir {
            Dir::Forward => Atom::new(s.relation, a, b),
            Dir::Inverse => Atom::new(s.relation, b, a),
        })
        .collect();
    let last = if steps.len() == 1 { Y } else { Z };
    (premise, Atom::new(conclusion, X, last))
}

pub struct RuleDisplay<'a> {
    rule: &'a HornRule,
    vocab: &'a Vocabulary,
}

impl fmt::Display for RuleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atom = |f: &mut fmt::Formatter<'_>, a: &Atom| {
            let name = self.vocab.relation_name(a.relation).unwrap_or("?");
            write!(f, "{name}({},{})", a.arg1.name(), a.arg2.name())
        };
        for (i, a) in self.rule.premise.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            atom(f, a)?;
        }
        f.write_str(" => ")?;
        atom(f, &self.rule.conclusion)?;
        write!(f, "\t{}\t{}", self.rule.confidence, self.rule.support)?;
        if let Some(body) = self.rule.body_count {
            write!(f, "\t{body}")?;
        }
        Ok(())
    }
}

fn parse_atom(text: &str, vocab: &Vocabulary) -> std::result::Result<Atom, String> {
    let text = text.trim();
    let open = text
        .rfind('(')
        .ok_or_else(|| format!("atom '{text}' lacks '('"))?;
    let args = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| format!("atom '{text}' lacks ')'"))?;
    let name = text[..open].trim();
    let (a, b) = args
        .split_once(',')
        .ok_or_else(|| format!("atom '{text}' needs two arguments"))?;
    let arg1 = Var::parse(a).ok_or_else(|| format!("unknown variable '{a}'"))?;
    let arg2 = Var::parse(b).ok_or_else(|| format!("unknown variable '{b}'"))?;
    let relation = vocab
        .relation_id(name)
        .ok_or_else(|| format!("unknown relation '{name}'"))?;
    Ok(Atom::new(relation, arg1, arg2))
}

/// Parses rule text. Blank lines and lines starting with `#` are skipped.
pub fn parse_rules(text: &str, origin: &str, vocab: &Vocabulary) -> Result<Vec<HornRule>> {
    let mut rules = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |m: String| Error::parse(origin, line_no, m);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(err(format!(
                "expected 3 or 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (body, head) = fields[0]
            .split_once("=>")
            .ok_or_else(|| err("missing '=>'".into()))?;
        let premise = body
            .split('&')
            .map(|a| parse_atom(a, vocab))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(err)?;
        let conclusion = parse_atom(head, vocab).map_err(err)?;
        let confidence: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad confidence '{}'", fields[1])))?;
        let support: u64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad support '{}'", fields[2])))?;
        let body_count = match fields.get(3) {
            Some(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| err(format!("bad body count '{s}'")))?,
            ),
            None => None,
        };
        let rule = HornRule::new(premise, conclusion, confidence, support, body_count)
            .map_err(|e| err(e.to_string()))?;
        rules.push(rule);
    }
    Ok(rules)
}

pub fn format_rules(rules: &[HornRule], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for r in rules {
        out.push_str(&r.display(vocab).to_string());
        out.push('\n');
    }
    out
}

pub fn load_rules(path: &Path, vocab: &Vocabulary) -> Result<Vec<HornRule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rules(&text, &path.display().to_string(), vocab)
}

pub fn save_rules(rules: &[HornRule], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(format_rules(rules, vocab).as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Rules whose confidence is at least `threshold`, in their original order.
pub fn filter_by_confidence(rules: &[HornRule], threshold: f64) -> Vec<HornRule> {
    rules
        .iter()
        .filter(|r| r.confidence >= threshold)
        .cloned()
        .collect()
}
