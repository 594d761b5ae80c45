//! Vocabulary, triple storage and join indexes.
//!
//! A [`KnowledgeGraph`] keeps its triples in insertion order alongside a
//! membership set and three projections used by grounding, mining and
//! filtered ranking:
//!
//! * relation → list of `(head, tail)` pairs
//! * `(head, relation)` → tails
//! * `(tail, relation)` → heads
//!
//! plus an `(head, tail)` → relations index that rule mining uses to count
//! rule support without scanning every relation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A `(head, relation, tail)` fact. Ordering is lexicographic in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

/// Bijective string ↔ id maps. Ids are assigned densely in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(i) = self.entities.get_index_of(name) {
            return EntityId(i as u32);
        }
        let (i, _) = self.entities.insert_full(name.to_owned());
        EntityId(i as u32)
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(i) = self.relations.get_index_of(name) {
            return RelationId(i as u32);
        }
        let (i, _) = self.relations.insert_full(name.to_owned());
        RelationId(i as u32)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get_index_of(name).map(|i| EntityId(i as u32))
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations
            .get_index_of(name)
            .map(|i| RelationId(i as u32))
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get_index(id.index()).map(String::as_str)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id.index()).map(String::as_str)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    /// Writes `entities.tsv` and `relations.tsv` (`id<TAB>name`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_id_file(&dir.join("entities.tsv"), self.entities())?;
        write_id_file(&dir.join("relations.tsv"), self.relations())
    }

    /// Reads back the files written by [`Vocabulary::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for name in read_id_file(&dir.join("entities.tsv"))? {
            vocab.intern_entity(&name);
        }
        for name in read_id_file(&dir.join("relations.tsv"))? {
            vocab.intern_relation(&name);
        }
        Ok(vocab)
    }
}

fn write_id_file<'a>(path: &Path, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, name) in names.enumerate() {
        writeln!(out, "{i}\t{name}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_id_file(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut names = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&origin, n + 1, "expected id<TAB>name"))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse(&origin, n + 1, format!("bad id '{id}'")))?;
        if id != names.len() {
            return Err(Error::parse(
                &origin,
                n + 1,
                "ids must be contiguous from 0",
            ));
        }
        names.push(name.to_owned());
    }
    Ok(names)
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    triples: Vec<Triple>,
    members: HashSet<Triple>,
    by_relation: Vec<Vec<(EntityId, EntityId)>>,
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    heads: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    pair_relations: HashMap<(EntityId, EntityId), Vec<RelationId>>,
}

impl KnowledgeGraph {
    pub fn new(entity_count: usize, relation_count: usize) -> Self {
        KnowledgeGraph {
            entity_count,
            relation_count,
            by_relation: vec![Vec::new(); relation_count],
            ..Default::default()
        }
    }

    /// Builds a graph from triples, silently dropping duplicates.
    pub fn from_triples(
        entity_count: usize,
        relation_count: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut kg = Self::new(entity_count, relation_count);
        kg.add_triples(triples)?;
        Ok(kg)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples in insertion order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.members.contains(triple)
    }

    pub fn check_bounds(&self, triple: &Triple) -> Result<()> {
        if triple.head.index() >= self.entity_count {
            return Err(Error::Bounds {
                kind: "entity",
                id: triple.head.index(),
                count: self.entity_count,
            });
        }
        if triple.tail.index() >= self.entity_count {
            return Err(Error::Bounds {
                kind: "entity",
                id: triple.tail.index(),
                count: self.entity_count,
            });
        }
        self.check_relation(triple.relation)
    }

    pub fn check_relation(&self, relation: RelationId) -> Result<()> {
        if relation.index() >= self.relation_count {
            return Err(Error::Bounds {
                kind: "relation",
                id: relation.index(),
                count: self.relation_count,
            });
        }
        Ok(())
    }

    /// Inserts one triple; returns whether it was new.
    pub fn insert(&mut self, triple: Triple) -> Result<bool> {
        self.check_bounds(&triple)?;
        if !self.members.insert(triple) {
            return Ok(false);
        }
        let Triple {
            head,
            relation,
            tail,
        } = triple;
        self.triples.push(triple);
        self.by_relation[relation.index()].push((head, tail));
        self.tails.entry((head, relation)).or_default().push(tail);
        self.heads.entry((tail, relation)).or_default().push(head);
        self.pair_relations
            .entry((head, tail))
            .or_default()
            .push(relation);
        Ok(true)
    }

    /// Inserts every triple not already present and returns how many were new.
    ///
    /// Bounds are checked for the whole batch before anything is inserted.
    pub fn add_triples(&mut self, new: impl IntoIterator<Item = Triple>) -> Result<usize> {
        let new: Vec<Triple> = new.into_iter().collect();
        for t in &new {
            self.check_bounds(t)?;
        }
        let mut inserted = 0;
        for t in new {
            if self.insert(t)? {
                inserted += 1;
            }
        }
        Ok(inserted)
    }

    pub fn pairs(&self, relation: RelationId) -> &[(EntityId, EntityId)] {
        self.by_relation
            .get(relation.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn tails_of(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn heads_of(&self, tail: EntityId, relation: RelationId) -> &[EntityId] {
        self.heads
            .get(&(tail, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Relations `r` with `(head, r, tail)` in the graph.
    pub fn relations_between(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.pair_relations
            .get(&(head, tail))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn has_tail_for(&self, head: EntityId, relation: RelationId) -> bool {
        self.tails.contains_key(&(head, relation))
    }

    pub fn has_head_for(&self, tail: EntityId, relation: RelationId) -> bool {
        self.heads.contains_key(&(tail, relation))
    }

    /// All `(x, y, z)` with `(x, r1, y)` and `(y, r2, z)` in the graph.
    pub fn join_pairs(
        &self,
        r1: RelationId,
        r2: RelationId,
    ) -> Result<Vec<(EntityId, EntityId, EntityId)>> {
        self.check_relation(r1)?;
        self.check_relation(r2)?;
        let mut out = Vec::new();
        for &(x, y) in self.pairs(r1) {
            for &z in self.tails_of(y, r2) {
                out.push((x, y, z));
            }
        }
        Ok(out)
    }

    /// Union of several graphs sharing one vocabulary.
    pub fn union<'a>(graphs: impl IntoIterator<Item = &'a KnowledgeGraph>) -> Result<Self> {
        let graphs: Vec<&KnowledgeGraph> = graphs.into_iter().collect();
        let entities = graphs.iter().map(|g| g.entity_count).max().unwrap_or(0);
        let relations = graphs.iter().map(|g| g.relation_count).max().unwrap_or(0);
        let mut out = KnowledgeGraph::new(entities, relations);
        for g in graphs {
            out.add_triples(g.triples.iter().copied())?;
        }
        Ok(out)
    }

    /// Writes the graph in the tab-separated `head relation tail` layout.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut out: W) -> Result<()> {
        for t in &self.triples {
            let head = vocab.entity_name(t.head);
            let rel = vocab.relation_name(t.relation);
            let tail = vocab.entity_name(t.tail);
            match (head, rel, tail) {
                (Some(h), Some(r), Some(t)) => {
                    writeln!(out, "{h}\t{r}\t{t}").map_err(|e| Error::io("<tsv output>", e))?
                }
                _ => {
                    return Err(Error::Bounds {
                        kind: "vocabulary",
                        id: t.head.index().max(t.tail.index()),
                        count: vocab.entity_count(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn save_tsv(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_tsv(vocab, &mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub vocab: Vocabulary,
    pub report: LoadReport,
}

/// Parses tab-separated triples.
///
/// With `fixed_vocab` set, unseen names are an error and the graph is sized to
/// the given vocabulary; otherwise names are interned into a fresh copy of
/// `vocab` (or an empty one).
pub fn read_triples<R: BufRead>(
    reader: R,
    origin: &str,
    vocab: Option<&Vocabulary>,
) -> Result<LoadedGraph> {
    let fixed = vocab.is_some();
    let mut vocab = vocab.cloned().unwrap_or_default();
    let mut parsed = Vec::new();
    let mut report = LoadReport::default();

    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                origin,
                n + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let triple = if fixed {
            let lookup_entity = |name: &str| {
                vocab.entity_id(name).ok_or_else(|| Error::Vocabulary {
                    kind: "entity",
                    name: name.to_owned(),
                })
            };
            let head = lookup_entity(fields[0])?;
            let relation = vocab
                .relation_id(fields[1])
                .ok_or_else(|| Error::Vocabulary {
                    kind: "relation",
                    name: fields[1].to_owned(),
                })?;
            let tail = lookup_entity(fields[2])?;
            Triple {
                head,
                relation,
                tail,
            }
        } else {
            let head = vocab.intern_entity(fields[0]);
            let relation = vocab.intern_relation(fields[1]);
            let tail = vocab.intern_entity(fields[2]);
            Triple {
                head,
                relation,
                tail,
            }
        };
        parsed.push(triple);
    }

    let mut graph = KnowledgeGraph::new(vocab.entity_count(), vocab.relation_count());
    let inserted = graph.add_triples(parsed)?;
    report.duplicates = report.lines - inserted;
    if report.duplicates > 0 {
        log::warn!("{origin}: dropped {} duplicate triples", report.duplicates);
    }
    Ok(LoadedGraph {
        graph,
        vocab,
        report,
    })
}

pub fn load_triples(path: &Path, vocab: Option<&Vocabulary>) -> Result<LoadedGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let loaded = read_triples(BufReader::new(file), &path.display().to_string(), vocab)?;
    log::info!(
        "{}: {} lines, {} triples, {} duplicates",
        path.display(),
        loaded.report.lines,
        loaded.graph.len(),
        loaded.report.duplicates
    );
    Ok(loaded)
}

/// Train/valid/test splits over one vocabulary built from the training file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

impl Dataset {
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        let LoadedGraph {
            graph: train,
            vocab,
            ..
        } = load_triples(train, None)?;
        let load_split = |path: Option<&Path>| -> Result<KnowledgeGraph> {
            match path {
                Some(p) => Ok(load_triples(p, Some(&vocab))?.graph),
                None => Ok(KnowledgeGraph::new(
                    vocab.entity_count(),
                    vocab.relation_count(),
                )),
            }
        };
        let valid = load_split(valid)?;
        let test = load_split(test)?;
        Ok(Dataset {
            vocab,
            train,
            valid,
            test,
        })
    }

    /// `train ∪ valid ∪ test`, the filter set for ranking.
    pub fn all_known(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::union([&self.train, &self.valid, &self.test])
    }
}
