//! Q-value bucketing state abstraction.
//!
//! Two states are abstractly equal when, for every action, their Q-values
//! fall into the same bucket of width `d`: `ceil(q / d)` agrees. Because the
//! predicate is key equality it is transitive, so grouping reduces to a hash
//! table lookup instead of a pairwise scan over previously seen states.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, QNetwork};
use crate::artifact::Provenance;
use crate::env::State;

pub const INDEX_FORMAT: &str = "rlfault-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("abstraction level must be positive and finite, got {0}")]
    Level(f64),
    #[error("Q-value {0} cannot be bucketed")]
    NonFinite(f64),
    #[error("no states to abstract")]
    Empty,
    #[error("key has {got} entries, index expects {expected}")]
    KeyLength { expected: usize, got: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AbstractionLevel(f64);

impl AbstractionLevel {
    pub fn new(d: f64) -> Result<Self, AbstractionError> {
        if d > 0.0 && d.is_finite() {
            Ok(AbstractionLevel(d))
        } else {
            Err(AbstractionError::Level(d))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Per-action bucket numbers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AbstractKey(pub Vec<i64>);

pub fn abstract_key(q: &[f64], d: AbstractionLevel) -> Result<AbstractKey, AbstractionError> {
    q.iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(AbstractionError::NonFinite(v));
            }
            let bucket = (v / d.0).ceil();
            // i64 range check; beyond 2^62 the quotient has lost integer precision anyway
            if bucket.abs() > 4.0e18 {
                return Err(AbstractionError::NonFinite(v));
            }
            Ok(bucket as i64)
        })
        .collect::<Result<Vec<_>, _>>()
        .map(AbstractKey)
}

pub fn state_key(net: &QNetwork, s: &State, d: AbstractionLevel) -> Result<AbstractKey, AbstractionError> {
    abstract_key(&net.q_values(s)?, d)
}

pub fn same_abstract(s1: &State, s2: &State, net: &QNetwork, d: AbstractionLevel) -> Result<bool, AbstractionError> {
    Ok(state_key(net, s1, d)? == state_key(net, s2, d)?)
}

pub type AbstractStateId = usize;

/// Key table with dense, first-seen ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionIndex {
    d: AbstractionLevel,
    action_count: usize,
    keys: Vec<AbstractKey>,
    ids: HashMap<AbstractKey, AbstractStateId>,
}

impl AbstractionIndex {
    pub fn empty(d: AbstractionLevel, action_count: usize) -> Self {
        AbstractionIndex {
            d,
            action_count,
            keys: Vec::new(),
            ids: HashMap::new(),
        }
    }

    pub fn level(&self) -> AbstractionLevel {
        self.d
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Number of known abstract states.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[AbstractKey] {
        &self.keys
    }

    fn insert(&mut self, key: AbstractKey) -> Result<AbstractStateId, AbstractionError> {
        if key.0.len() != self.action_count {
            return Err(AbstractionError::KeyLength {
                expected: self.action_count,
                got: key.0.len(),
            });
        }
        if let Some(&id) = self.ids.get(&key) {
            return Ok(id);
        }
        let id = self.keys.len();
        self.ids.insert(key.clone(), id);
        self.keys.push(key);
        Ok(id)
    }

    /// `None` for keys never seen while the index was built.
    pub fn lookup(&self, key: &AbstractKey) -> Option<AbstractStateId> {
        self.ids.get(key).copied()
    }

    pub fn id_of_state(&self, net: &QNetwork, s: &State) -> Result<Option<AbstractStateId>, AbstractionError> {
        Ok(self.lookup(&state_key(net, s, self.d)?))
    }
}

/// Builds the index and returns each input state's id, in input order.
pub fn build_index_with_assignment<'a, I>(
    states: I,
    net: &QNetwork,
    d: AbstractionLevel,
) -> Result<(AbstractionIndex, Vec<AbstractStateId>), AbstractionError>
where
    I: IntoIterator<Item = &'a State>,
{
    let mut index = AbstractionIndex::empty(d, net.action_count());
    let mut assignment = Vec::new();
    for s in states {
        assignment.push(index.insert(state_key(net, s, d)?)?);
    }
    if assignment.is_empty() {
        return Err(AbstractionError::Empty);
    }
    Ok((index, assignment))
}

pub fn build_index<'a, I>(states: I, net: &QNetwork, d: AbstractionLevel) -> Result<AbstractionIndex, AbstractionError>
where
    I: IntoIterator<Item = &'a State>,
{
    build_index_with_assignment(states, net, d).map(|(index, _)| index)
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    provenance: Provenance,
    d: f64,
    action_count: usize,
    /// `(key, id)` pairs in id order.
    entries: Vec<(Vec<i64>, usize)>,
}

pub fn save_index(path: &Path, index: &AbstractionIndex, provenance: &Provenance) -> Result<(), AbstractionError> {
    let file = IndexFile {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        provenance: provenance.clone(),
        d: index.d.0,
        action_count: index.action_count,
        entries: index.keys.iter().enumerate().map(|(id, k)| (k.0.clone(), id)).collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| AbstractionError::Corrupt(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<(AbstractionIndex, Provenance), AbstractionError> {
    let text = fs::read_to_string(path)?;
    let file: IndexFile = serde_json::from_str(&text).map_err(|e| AbstractionError::Corrupt(e.to_string()))?;
    if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
        return Err(AbstractionError::Corrupt(format!(
            "unexpected format {} v{}",
            file.format, file.version
        )));
    }
    let mut index = AbstractionIndex::empty(AbstractionLevel::new(file.d)?, file.action_count);
    for (expected, (key, id)) in file.entries.into_iter().enumerate() {
        if id != expected || index.insert(AbstractKey(key))? != id {
            return Err(AbstractionError::Corrupt(format!("entry {expected} out of order or duplicated")));
        }
    }
    Ok((index, file.provenance))
}
