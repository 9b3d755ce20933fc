//! Clause-level corpus model and the line-delimited JSON record format.
//!
//! Each line holds one instance:
//!
//! ```json
//! {"id": "d1", "clauses": ["...", "..."], "emotion_index": 1, "emotion_keyword": "...", "cause_indices": [0]}
//! ```
//!
//! Fields other than the five above are kept verbatim and written back on
//! serialization. Clause segmentation is taken from the input as-is.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: InstanceError,
    },
    #[error("duplicate instance id {id:?}")]
    DuplicateId { id: String, line: Option<usize> },
    #[error("clause {cause_index} is not annotated as a cause of instance {id:?}")]
    NotACause { id: String, cause_index: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Structural problems with a single instance.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("instance {0:?} has no clauses")]
    NoClauses(String),
    #[error("instance {id:?}: emotion_index {index} out of range for {clauses} clauses")]
    EmotionOutOfRange {
        id: String,
        index: usize,
        clauses: usize,
    },
    #[error("instance {id:?}: cause index {index} out of range for {clauses} clauses")]
    CauseOutOfRange {
        id: String,
        index: usize,
        clauses: usize,
    },
    #[error("instance {0:?} has an empty cause set")]
    NoCauses(String),
    #[error("instance {id:?}: cause index {index} listed twice")]
    DuplicateCause { id: String, index: usize },
}

/// Signed offset of a cause clause from the emotion clause.
///
/// `0` is the emotion clause itself, `-1` the clause immediately before it.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RelativePosition(pub i64);

impl RelativePosition {
    pub const SAME: RelativePosition = RelativePosition(0);
    pub const PREVIOUS: RelativePosition = RelativePosition(-1);

    pub fn value(self) -> i64 {
        self.0
    }

    /// Row label in the style of the published position tables.
    pub fn describe(self) -> String {
        match self.0 {
            0 => "In the same clauses".to_string(),
            v if v < 0 => format!("Previous {} Clauses", -v),
            v => format!("Next {} Clauses", v),
        }
    }
}

impl fmt::Display for RelativePosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 > 0 {
            write!(f, "+{}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for RelativePosition {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .trim_start_matches('+')
            .parse()
            .map(RelativePosition)
    }
}

impl From<i64> for RelativePosition {
    fn from(v: i64) -> Self {
        RelativePosition(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub index: usize,
    pub text: String,
}

/// One document with a single annotated emotion clause.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    id: String,
    clauses: Vec<Clause>,
    emotion_index: usize,
    emotion_keyword: String,
    cause_indices: Vec<usize>,
    extra: Map<String, Value>,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        clauses: Vec<String>,
        emotion_index: usize,
        emotion_keyword: impl Into<String>,
        cause_indices: Vec<usize>,
    ) -> Result<Self, InstanceError> {
        Self::with_extra(
            id,
            clauses,
            emotion_index,
            emotion_keyword,
            cause_indices,
            Map::new(),
        )
    }

    pub fn with_extra(
        id: impl Into<String>,
        clauses: Vec<String>,
        emotion_index: usize,
        emotion_keyword: impl Into<String>,
        cause_indices: Vec<usize>,
        extra: Map<String, Value>,
    ) -> Result<Self, InstanceError> {
        let id = id.into();
        let n = clauses.len();
        if n == 0 {
            return Err(InstanceError::NoClauses(id));
        }
        if emotion_index >= n {
            return Err(InstanceError::EmotionOutOfRange {
                id,
                index: emotion_index,
                clauses: n,
            });
        }
        if cause_indices.is_empty() {
            return Err(InstanceError::NoCauses(id));
        }
        let mut seen = HashSet::new();
        for &c in &cause_indices {
            if c >= n {
                return Err(InstanceError::CauseOutOfRange {
                    id,
                    index: c,
                    clauses: n,
                });
            }
            if !seen.insert(c) {
                return Err(InstanceError::DuplicateCause { id, index: c });
            }
        }
        let clauses = clauses
            .into_iter()
            .enumerate()
            .map(|(index, text)| Clause { index, text })
            .collect();
        Ok(Instance {
            id,
            clauses,
            emotion_index,
            emotion_keyword: emotion_keyword.into(),
            cause_indices,
            extra,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn clause_count(&self) -> usize {
        self.clauses.len()
    }

    pub fn emotion_index(&self) -> usize {
        self.emotion_index
    }

    pub fn emotion_keyword(&self) -> &str {
        &self.emotion_keyword
    }

    pub fn emotion_clause(&self) -> &Clause {
        &self.clauses[self.emotion_index]
    }

    /// Annotated cause clause indices, in input order.
    pub fn cause_indices(&self) -> &[usize] {
        &self.cause_indices
    }

    pub fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }

    pub fn is_cause(&self, clause_index: usize) -> bool {
        self.cause_indices.contains(&clause_index)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn relative_position(&self, cause_index: usize) -> Result<RelativePosition, CorpusError> {
        if !self.is_cause(cause_index) {
            return Err(CorpusError::NotACause {
                id: self.id.clone(),
                cause_index,
            });
        }
        Ok(self.offset_of(cause_index))
    }

    /// Relative positions of all annotated causes, in annotation order.
    pub fn cause_positions(&self) -> impl Iterator<Item = RelativePosition> + '_ {
        self.cause_indices.iter().map(|&c| self.offset_of(c))
    }

    /// Every offset `p` with `0 <= emotion_index + p < clause_count`, ascending.
    pub fn valid_positions(&self) -> Vec<RelativePosition> {
        let e = self.emotion_index as i64;
        let n = self.clauses.len() as i64;
        (-e..n - e).map(RelativePosition).collect()
    }

    pub fn is_valid_position(&self, p: RelativePosition) -> bool {
        self.clause_at(p).is_some()
    }

    /// Clause index at offset `p` from the emotion clause, if inside the document.
    pub fn clause_at(&self, p: RelativePosition) -> Option<usize> {
        let idx = self.emotion_index as i64 + p.0;
        (0..self.clauses.len() as i64)
            .contains(&idx)
            .then_some(idx as usize)
    }

    fn offset_of(&self, clause_index: usize) -> RelativePosition {
        RelativePosition(clause_index as i64 - self.emotion_index as i64)
    }
}

/// Free function form of [`Instance::relative_position`].
pub fn relative_position(
    instance: &Instance,
    cause_index: usize,
) -> Result<RelativePosition, CorpusError> {
    instance.relative_position(cause_index)
}

/// Free function form of [`Instance::valid_positions`].
pub fn valid_positions(instance: &Instance) -> Vec<RelativePosition> {
    instance.valid_positions()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    instances: Vec<Instance>,
    pub source_label: String,
}

impl Corpus {
    pub fn new(
        instances: Vec<Instance>,
        source_label: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let mut ids = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: inst.id.clone(),
                    line: None,
                });
            }
        }
        Ok(Corpus {
            instances,
            source_label: source_label.into(),
        })
    }

    pub fn empty(source_label: impl Into<String>) -> Self {
        Corpus {
            instances: Vec::new(),
            source_label: source_label.into(),
        }
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_causes(&self) -> usize {
        self.instances.iter().map(|i| i.cause_indices.len()).sum()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Sub-corpus of the instances selected by `keep`, in original order.
    pub fn filter<F>(&self, label: impl Into<String>, mut keep: F) -> Corpus
    where
        F: FnMut(&Instance) -> bool,
    {
        Corpus {
            instances: self.instances.iter().filter(|i| keep(i)).cloned().collect(),
            source_label: label.into(),
        }
    }

    /// Sub-corpus at the given positions of the instance list, in the order given.
    pub fn select(&self, label: impl Into<String>, indices: &[usize]) -> Corpus {
        Corpus {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            source_label: label.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    clauses: Vec<String>,
    emotion_index: usize,
    emotion_keyword: String,
    cause_indices: Vec<usize>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    id: &'a str,
    clauses: Vec<&'a str>,
    emotion_index: usize,
    emotion_keyword: &'a str,
    cause_indices: &'a [usize],
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

/// Parse a JSON-lines corpus. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_corpus<R: BufRead>(
    reader: R,
    source_label: impl Into<String>,
) -> Result<Corpus, CorpusError> {
    let mut instances = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        if !ids.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: rec.id,
                line: Some(lineno),
            });
        }
        let inst = Instance::with_extra(
            rec.id,
            rec.clauses,
            rec.emotion_index,
            rec.emotion_keyword,
            rec.cause_indices,
            rec.extra,
        )
        .map_err(|source| CorpusError::Invalid {
            line: lineno,
            source,
        })?;
        if !inst.emotion_keyword.is_empty()
            && !inst.emotion_clause().text.contains(&inst.emotion_keyword)
        {
            log::warn!(
                "line {lineno}: emotion keyword {:?} not found in emotion clause of {:?}",
                inst.emotion_keyword,
                inst.id
            );
        }
        instances.push(inst);
    }
    Ok(Corpus {
        instances,
        source_label: source_label.into(),
    })
}

pub fn parse_corpus_str(s: &str, source_label: impl Into<String>) -> Result<Corpus, CorpusError> {
    parse_corpus(s.as_bytes(), source_label)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), CorpusError> {
    for inst in &corpus.instances {
        let rec = RecordRef {
            id: &inst.id,
            clauses: inst.clauses.iter().map(|c| c.text.as_str()).collect(),
            emotion_index: inst.emotion_index,
            emotion_keyword: &inst.emotion_keyword,
            cause_indices: &inst.cause_indices,
            extra: &inst.extra,
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Serialize to JSON lines; one `\n`-terminated line per instance.
pub fn serialize_corpus(corpus: &Corpus) -> Vec<u8> {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    buf
}
