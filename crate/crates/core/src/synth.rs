//! Planted-rule knowledge graphs with known ground truth.
//!
//! The world has persons, cities and countries. Every city lies in one
//! country (`city_of`) and every person has a home country, usually
//! witnessed by a `lives_in` fact and by friends from the same country.
//! Each planted rule `k` adds two relations:
//!
//! ```text
//! born_in_k(x, y) & city_of(y, z) => nationality_k(x, z)
//! ```
//!
//! `nationality_k` always points to the home country. A *consistent* person
//! was born at home; a share of their nationality facts is held out of
//! training, so grounding the rule recovers them as true candidates. An
//! *inconsistent* person was born abroad and has their nationality held
//! out, so grounding yields a false candidate that contradicts the rest of
//! their facts. The number of inconsistent persons makes the false share of
//! the candidates equal `false_share`, or one minus the rule's confidence.
//!
//! Held-out `friend_of` facts fill the rest of the evaluation splits.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub persons: usize,
    pub cities: usize,
    pub countries: usize,
    /// Declared confidence of each planted rule.
    pub rule_confidences: Vec<f64>,
    /// Share of each rule's true conclusions kept out of training.
    pub held_out: f64,
    /// Share of each rule's candidates that are false; `None` uses one minus
    /// the rule's confidence.
    pub false_share: Option<f64>,
    /// Probability of each evidence fact: `resident_of` the home country and
    /// the city relations below.
    pub evidence: f64,
    /// How many of `lives_in`, `works_in`, `studied_in`, `married_in` and
    /// `votes_in` witness the home country.
    pub evidence_relations: usize,
    /// Number of unordered `friend_of` pairs.
    pub friend_pairs: usize,
    /// Probability of rejecting a proposed friendship across countries.
    pub friend_homophily: f64,
    /// Share of `friend_of` facts moved to the evaluation splits.
    pub background_held_out: f64,
}

impl Default for SynthConfig {
    /// 200 entities and one rule of confidence 1.0 whose candidates are 5%
    /// false. Persons carry no evidence facts, so the rule adds information
    /// the embedding cannot recover by itself.
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            persons: 150,
            cities: 30,
            countries: 20,
            rule_confidences: vec![1.0],
            held_out: 0.2,
            false_share: Some(0.05),
            evidence: 0.0,
            evidence_relations: 1,
            friend_pairs: 120,
            friend_homophily: 0.8,
            background_held_out: 0.1,
        }
    }
}

impl SynthConfig {
    /// Five rules of confidence 1.0 over persons with full evidence of their
    /// home country.
    pub fn polarization() -> Self {
        SynthConfig {
            rule_confidences: vec![1.0; 5],
            evidence: 1.0,
            friend_pairs: 240,
            ..Default::default()
        }
    }

    /// Rules of confidence 0.6, 0.8 and 1.0 whose false share is one minus
    /// the confidence.
    pub fn fidelity() -> Self {
        SynthConfig {
            persons: 120,
            cities: 50,
            countries: 30,
            rule_confidences: vec![0.6, 0.8, 1.0],
            false_share: None,
            evidence: 1.0,
            friend_pairs: 240,
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "polarization" => Ok(Self::polarization()),
            "fidelity" => Ok(Self::fidelity()),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?}, expected default, polarization or fidelity"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.persons < 2 || self.countries < 2 || self.cities < self.countries {
            return fail("need at least 2 persons, 2 countries and a city per country".into());
        }
        for (name, v) in [
            ("evidence", self.evidence),
            ("friend_homophily", self.friend_homophily),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self
            .rule_confidences
            .iter()
            .any(|&c| !(c > 0.0 && c <= 1.0))
        {
            return fail("rule confidences must lie in (0, 1]".into());
        }
        if !(self.held_out > 0.0 && self.held_out < 1.0) {
            return fail(format!(
                "held_out must lie in (0, 1), got {}",
                self.held_out
            ));
        }
        if let Some(f) = self.false_share {
            if !(0.0..1.0).contains(&f) {
                return fail(format!("false_share must lie in [0, 1), got {f}"));
            }
        }
        if !(0.0..1.0).contains(&self.background_held_out) {
            return fail("background_held_out must lie in [0, 1)".into());
        }
        if self.evidence_relations > EVIDENCE_RELATIONS.len() {
            return fail(format!(
                "at most {} evidence relations",
                EVIDENCE_RELATIONS.len()
            ));
        }
        let max_pairs = self.persons * (self.persons - 1) / 2;
        if self.friend_pairs > max_pairs {
            return fail(format!("at most {max_pairs} friend pairs fit"));
        }
        Ok(())
    }
}

const EVIDENCE_RELATIONS: [&str; 5] = [
    "lives_in",
    "works_in",
    "studied_in",
    "married_in",
    "votes_in",
];

pub type NamedTriple = (String, String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub premise: [String; 2],
    pub conclusion: String,
    pub confidence: f64,
    pub support: u64,
    pub body_count: u64,
    pub true_candidates: usize,
    pub false_candidates: usize,
}

impl PlantedRule {
    fn line(&self) -> String {
        format!(
            "{}(x,y) & {}(y,z) => {}(x,z)\t{}\t{}\t{}",
            self.premise[0],
            self.premise[1],
            self.conclusion,
            self.confidence,
            self.support,
            self.body_count
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthDataset {
    pub train: Vec<NamedTriple>,
    pub valid: Vec<NamedTriple>,
    pub test: Vec<NamedTriple>,
    pub rules: Vec<PlantedRule>,
    /// True rule conclusions missing from training (all are in `test`).
    pub held_out_true: Vec<NamedTriple>,
    /// Candidates the rules derive that are false.
    pub planted_false: Vec<NamedTriple>,
}

fn named(h: String, r: &str, t: String) -> NamedTriple {
    (h, r.to_string(), t)
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let person = |i: usize| format!("person_{i:03}");
    let city = |i: usize| format!("city_{i:02}");
    let country = |i: usize| format!("country_{i:02}");

    let mut out = SynthDataset::default();

    // Every country gets at least one city.
    let mut country_of: Vec<usize> = (0..config.cities)
        .map(|c| {
            if c < config.countries {
                c
            } else {
                rng.gen_range(0..config.countries)
            }
        })
        .collect();
    country_of.shuffle(&mut rng);
    let mut cities_in = vec![Vec::new(); config.countries];
    for (c, &k) in country_of.iter().enumerate() {
        cities_in[k].push(c);
        out.train.push(named(city(c), "city_of", country(k)));
    }
    let home: Vec<usize> = (0..config.persons)
        .map(|_| rng.gen_range(0..config.countries))
        .collect();
    for (p, &h) in home.iter().enumerate() {
        if rng.gen_bool(config.evidence) {
            out.train.push(named(person(p), "resident_of", country(h)));
        }
        for rel in &EVIDENCE_RELATIONS[..config.evidence_relations] {
            if rng.gen_bool(config.evidence) {
                let c = *cities_in[h].choose(&mut rng).expect("country without city");
                out.train.push(named(person(p), rel, city(c)));
            }
        }
    }

    for (k, &confidence) in config.rule_confidences.iter().enumerate() {
        let (born, nat) = (format!("born_in_{k}"), format!("nationality_{k}"));

        // wrong / (held + wrong) = share
        let share = config.false_share.unwrap_or(1.0 - confidence);
        let odds = share / (1.0 - share);
        let consistent =
            ((config.persons as f64) / (1.0 + config.held_out * odds)).floor() as usize;
        let held = ((config.held_out * consistent as f64).round() as usize).max(1);
        let wrong = ((held as f64 * odds).round() as usize).min(config.persons - consistent);

        let mut people: Vec<usize> = (0..config.persons).collect();
        people.shuffle(&mut rng);
        for (rank, &p) in people.iter().enumerate() {
            let fact = named(person(p), &nat, country(home[p]));
            if rank < consistent {
                let c = *cities_in[home[p]]
                    .choose(&mut rng)
                    .expect("country without city");
                out.train.push(named(person(p), &born, city(c)));
                if rank < held {
                    out.held_out_true.push(fact.clone());
                    out.test.push(fact);
                } else {
                    out.train.push(fact);
                }
            } else if rank < consistent + wrong {
                let mut abroad = rng.gen_range(0..config.countries - 1);
                if abroad >= home[p] {
                    abroad += 1;
                }
                let c = *cities_in[abroad]
                    .choose(&mut rng)
                    .expect("country without city");
                out.train.push(named(person(p), &born, city(c)));
                out.test.push(fact);
                out.planted_false
                    .push(named(person(p), &nat, country(abroad)));
            } else {
                out.train.push(fact);
            }
        }
        out.rules.push(PlantedRule {
            premise: [born, "city_of".to_string()],
            conclusion: nat,
            confidence,
            support: (consistent - held) as u64,
            body_count: (consistent + wrong) as u64,
            true_candidates: held,
            false_candidates: wrong,
        });
    }

    let mut pairs = HashSet::new();
    while pairs.len() < config.friend_pairs {
        let a = rng.gen_range(0..config.persons);
        let b = rng.gen_range(0..config.persons);
        let same = home[a] == home[b];
        if a != b && (same || !rng.gen_bool(config.friend_homophily)) {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    pairs.sort_unstable();
    let mut friends = Vec::with_capacity(2 * pairs.len());
    for (a, b) in pairs {
        friends.push(named(person(a), "friend_of", person(b)));
        friends.push(named(person(b), "friend_of", person(a)));
    }
    friends.shuffle(&mut rng);
    let held = (config.background_held_out * friends.len() as f64).round() as usize;
    for (i, f) in friends.into_iter().enumerate() {
        if i < held / 2 {
            out.valid.push(f);
        } else if i < held {
            out.test.push(f);
        } else {
            out.train.push(f);
        }
    }

    // Evaluation facts must only mention entities seen in training.
    let mut seen: HashSet<String> = out
        .train
        .iter()
        .flat_map(|(h, _, t)| [h.clone(), t.clone()])
        .collect();
    for split in [&mut out.valid, &mut out.test] {
        let (keep, back): (Vec<_>, Vec<_>) = std::mem::take(split)
            .into_iter()
            .partition(|(h, _, t)| seen.contains(h) && seen.contains(t));
        for (h, r, t) in back {
            seen.insert(h.clone());
            seen.insert(t.clone());
            out.train.push((h, r, t));
        }
        *split = keep;
    }
    out.held_out_true.retain(|f| out.test.contains(f));

    out.train.shuffle(&mut rng);
    Ok(out)
}

fn tsv(triples: &[NamedTriple]) -> String {
    let mut s = String::new();
    for (h, r, t) in triples {
        let _ = writeln!(s, "{h}\t{r}\t{t}");
    }
    s
}

pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const RULES_FILE: &str = "rules.tsv";
pub const HELD_OUT_FILE: &str = "held_out_true.tsv";
pub const FALSE_FILE: &str = "planted_false.tsv";

impl SynthDataset {
    pub fn rules_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rules {
            s.push_str(&r.line());
            s.push('\n');
        }
        s
    }

    /// Writes the splits, the rules and both ground-truth files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (TRAIN_FILE, tsv(&self.train)),
            (VALID_FILE, tsv(&self.valid)),
            (TEST_FILE, tsv(&self.test)),
            (RULES_FILE, self.rules_text()),
            (HELD_OUT_FILE, tsv(&self.held_out_true)),
            (FALSE_FILE, tsv(&self.planted_false)),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
