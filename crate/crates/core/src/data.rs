//! Triple ingestion, vocabularies, reciprocal augmentation, the filter index
//! used for ranking, adjacency lists and the synthetic tree generator.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Suffix appended to a relation name to form its reciprocal.
pub const RECIPROCAL_SUFFIX: &str = "^-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Unknown {
                kind: "split",
                name: name.to_string(),
            })
    }
}

/// Name <-> id map, ids assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab::new();
        for n in names {
            v.get_or_insert(&n);
        }
        v
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn hash_into(&self, h: &mut Sha256) {
        h.update((self.names.len() as u64).to_le_bytes());
        for n in &self.names {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
        }
    }
}

/// One line of a triple file, still as names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub line: usize,
}

/// Reads a tab-separated `head<TAB>relation<TAB>tail` file.
///
/// Blank lines are skipped. Malformed lines, duplicates and files without any
/// triple are errors.
pub fn load_tsv(path: &Path) -> Result<Vec<RawTriple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path)
}

fn parse_tsv(text: &str, path: &Path) -> Result<Vec<RawTriple>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut seen: HashMap<(&str, &str, &str), usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(line, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(line, "empty field".into()));
        }
        if let Some(first) = seen.insert((fields[0], fields[1], fields[2]), line) {
            return Err(parse_err(line, format!("duplicate triple, first seen on line {first}")));
        }
        out.push(RawTriple {
            head: fields[0].to_string(),
            relation: fields[1].to_string(),
            tail: fields[2].to_string(),
            line,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("triple file"));
    }
    Ok(out)
}

/// Indexed knowledge graph with train/valid/test splits.
///
/// After [`TripleStore::augment_reciprocal`] the relation vocabulary holds the
/// `num_base_relations` originals followed by their reciprocals, and the
/// training split holds both directions. Validation and test splits always
/// keep only original relations.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleStore {
    entities: Vocab,
    relations: Vocab,
    num_base_relations: usize,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    augmented: bool,
}

impl TripleStore {
    /// Indexes named splits; ids follow first appearance over train, valid,
    /// test.
    pub fn from_raw(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut index = |split: &[RawTriple]| -> Vec<Triple> {
            split
                .iter()
                .map(|t| {
                    let h = entities.get_or_insert(&t.head);
                    let r = relations.get_or_insert(&t.relation);
                    let tl = entities.get_or_insert(&t.tail);
                    Triple::new(h, r, tl)
                })
                .collect()
        };
        let train = index(train);
        let valid = index(valid);
        let test = index(test);
        if let Some(name) = relations.names().iter().find(|n| n.ends_with(RECIPROCAL_SUFFIX)) {
            return Err(Error::InvalidParameter(format!(
                "relation name {name:?} uses the reserved suffix {RECIPROCAL_SUFFIX:?}"
            )));
        }
        let num_base_relations = relations.len();
        Ok(TripleStore {
            entities,
            relations,
            num_base_relations,
            train,
            valid,
            test,
            augmented: false,
        })
    }

    /// Loads `train`, and optionally `valid` and `test`, from a directory.
    /// Each split is read from `{split}.tsv` or `{split}.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let find = |split: Split| -> Option<PathBuf> {
            ["tsv", "txt"]
                .iter()
                .map(|ext| dir.join(format!("{}.{ext}", split.name())))
                .find(|p| p.is_file())
        };
        let train_path = find(Split::Train).ok_or_else(|| Error::Io {
            path: dir.join("train.tsv"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "training file not found"),
        })?;
        let train = load_tsv(&train_path)?;
        let load_opt = |split| -> Result<Vec<RawTriple>> {
            match find(split) {
                Some(p) => load_tsv(&p),
                None => Ok(Vec::new()),
            }
        };
        let valid = load_opt(Split::Valid)?;
        let test = load_opt(Split::Test)?;
        TripleStore::from_raw(&train, &valid, &test)
    }

    /// Builds a store straight from id triples. Names are `e{i}` / `r{i}`.
    pub fn from_ids(
        num_entities: usize,
        num_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        for t in train.iter().chain(&valid).chain(&test) {
            for (index, len) in [(t.head, num_entities), (t.tail, num_entities), (t.relation, num_relations)] {
                if index >= len {
                    return Err(Error::IndexOutOfRange { index, len });
                }
            }
        }
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        Ok(TripleStore {
            entities: Vocab::from_names((0..num_entities).map(|i| format!("e{i}"))),
            relations: Vocab::from_names((0..num_relations).map(|i| format!("r{i}"))),
            num_base_relations: num_relations,
            train,
            valid,
            test,
            augmented: false,
        })
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relation count including reciprocals when augmented.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// Id of the reciprocal of base relation `r`.
    pub fn reciprocal(&self, r: usize) -> usize {
        if r < self.num_base_relations {
            r + self.num_base_relations
        } else {
            r - self.num_base_relations
        }
    }

    /// Adds `(t, r⁻¹, h)` for every training triple. Idempotent.
    pub fn augment_reciprocal(&self) -> TripleStore {
        if self.augmented {
            return self.clone();
        }
        let mut out = self.clone();
        let base = self.num_base_relations;
        for r in 0..base {
            let name = format!("{}{RECIPROCAL_SUFFIX}", self.relations.names()[r]);
            out.relations.get_or_insert(&name);
        }
        out.train
            .extend(self.train.iter().map(|t| Triple::new(t.tail, t.relation + base, t.head)));
        out.augmented = true;
        out
    }

    /// Removes reciprocal relations and the triples that use them.
    pub fn drop_reciprocal(&self) -> TripleStore {
        if !self.augmented {
            return self.clone();
        }
        let base = self.num_base_relations;
        let mut out = self.clone();
        out.relations = Vocab::from_names(self.relations.names()[..base].iter().cloned());
        out.train.retain(|t| t.relation < base);
        out.augmented = false;
        out
    }

    /// Ranking queries for a split: the tail query `(h, r, ?)` with target `t`
    /// and the head query rewritten as `(t, r⁻¹, ?)` with target `h`.
    pub fn queries(&self, split: Split) -> Vec<Triple> {
        let base = self.num_base_relations;
        self.split(split)
            .iter()
            .filter(|t| t.relation < base)
            .flat_map(|t| [*t, Triple::new(t.tail, t.relation + base, t.head)])
            .collect()
    }

    /// SHA-256 over both vocabularies and the base relation count, used to tie
    /// checkpoints to a dataset.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        self.entities.hash_into(&mut h);
        let base = Vocab::from_names(self.relations.names()[..self.num_base_relations].iter().cloned());
        base.hash_into(&mut h);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `train.tsv`, `valid.tsv` and `test.tsv` with original relations
    /// only.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let base = self.num_base_relations;
        for split in Split::ALL {
            let path = dir.join(format!("{}.tsv", split.name()));
            let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
            for t in self.split(split).iter().filter(|t| t.relation < base) {
                writeln!(
                    f,
                    "{}\t{}\t{}",
                    self.entities.names()[t.head],
                    self.relations.names()[t.relation],
                    self.entities.names()[t.tail]
                )
                .map_err(|e| Error::io(&path, e))?;
            }
            f.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Known answers per `(entity, relation)` query over every split, in both
/// directions.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    known: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn build(store: &TripleStore) -> Self {
        let base = store.num_base_relations();
        let mut known: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
        for split in Split::ALL {
            for t in store.split(split).iter().filter(|t| t.relation < base) {
                known.entry((t.head, t.relation)).or_default().insert(t.tail);
                known
                    .entry((t.tail, t.relation + base))
                    .or_default()
                    .insert(t.head);
            }
        }
        FilterIndex { known }
    }

    pub fn answers(&self, entity: usize, relation: usize) -> Option<&HashSet<usize>> {
        self.known.get(&(entity, relation))
    }

    pub fn contains(&self, entity: usize, relation: usize, answer: usize) -> bool {
        self.answers(entity, relation).is_some_and(|s| s.contains(&answer))
    }
}

/// Outgoing `(relation, neighbor)` lists per entity.
///
/// The encoder treats relation id `num_relations()` as the self-loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<(usize, usize)>>,
    num_relations: usize,
}

impl Adjacency {
    /// From `(head, relation, tail)` edges; `tail` becomes a neighbor of
    /// `head`.
    pub fn from_edges(num_entities: usize, num_relations: usize, edges: &[(usize, usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); num_entities];
        for &(h, r, t) in edges {
            assert!(h < num_entities && t < num_entities && r < num_relations);
            neighbors[h].push((r, t));
        }
        Adjacency {
            neighbors,
            num_relations,
        }
    }

    /// From the training split of an augmented store, so every edge is seen
    /// from both endpoints.
    pub fn from_store(store: &TripleStore) -> Result<Self> {
        if !store.is_augmented() {
            return Err(Error::InvalidParameter(
                "adjacency needs a store with reciprocal relations".into(),
            ));
        }
        let edges: Vec<(usize, usize, usize)> = store
            .train()
            .iter()
            .map(|t| (t.head, t.relation, t.tail))
            .collect();
        Ok(Adjacency::from_edges(store.num_entities(), store.num_relations(), &edges))
    }

    pub fn num_entities(&self) -> usize {
        self.neighbors.len()
    }

    /// Relation count, excluding the self-loop.
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn neighbors(&self, entity: usize) -> &[(usize, usize)] {
        &self.neighbors[entity]
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// Complete `branching`-ary tree with `depth` levels and a single `child_of`
/// relation pointing from child to parent.
///
/// About a tenth of the edges go to each of valid and test, drawn only among
/// edges whose endpoints both keep a training edge, so every entity appears
/// in train.
pub fn generate_synthetic_tree(depth: usize, branching: usize, seed: u64) -> Result<TripleStore> {
    if depth < 2 {
        return Err(Error::InvalidParameter(format!("tree depth must be at least 2, got {depth}")));
    }
    if branching < 2 {
        return Err(Error::InvalidParameter(format!(
            "tree branching must be at least 2, got {branching}"
        )));
    }
    let mut num_entities = 0usize;
    let mut level = 1usize;
    for _ in 0..depth {
        num_entities = num_entities
            .checked_add(level)
            .filter(|&n| n <= 10_000_000)
            .ok_or_else(|| Error::InvalidParameter("synthetic tree too large".into()))?;
        level = level.saturating_mul(branching);
    }
    // node i > 0 has parent (i - 1) / branching
    let mut edges: Vec<Triple> = (1..num_entities)
        .map(|i| Triple::new(i, 0, (i - 1) / branching))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);

    let holdout = ((edges.len() as f64) * 0.1).round() as usize;
    let mut degree = vec![0usize; num_entities];
    for e in &edges {
        degree[e.head] += 1;
        degree[e.tail] += 1;
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for e in edges {
        let movable = degree[e.head] > 1 && degree[e.tail] > 1;
        let dest = if !movable {
            Split::Train
        } else if valid.len() < holdout && valid.len() <= test.len() {
            Split::Valid
        } else if test.len() < holdout {
            Split::Test
        } else if valid.len() < holdout {
            Split::Valid
        } else {
            Split::Train
        };
        match dest {
            Split::Train => train.push(e),
            Split::Valid => valid.push(e),
            Split::Test => test.push(e),
        }
        if dest != Split::Train {
            degree[e.head] -= 1;
            degree[e.tail] -= 1;
        }
    }
    let mut store = TripleStore::from_ids(num_entities, 1, train, valid, test)?;
    store.entities = Vocab::from_names((0..num_entities).map(|i| format!("node{i}")));
    store.relations = Vocab::from_names(["child_of".to_string()]);
    Ok(store)
}
