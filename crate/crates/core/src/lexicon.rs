//! Cue-word lexicon matching and per-group coverage of causes at anchor positions.
//!
//! A lexicon is a list of cue groups, each tied to an anchor position (`-1` or
//! `0`). For a cause at `-1` the cause clause and the emotion clause are
//! scanned for that anchor's cues; for a cause at `0` only the emotion clause
//! is scanned. The first group in listed order with a match is the instance's
//! primary group, which keeps per-group primary fractions disjoint.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Instance, RelativePosition};
use crate::scalar::{ratio, Real};
use crate::stats::percent;

pub const DEFAULT_LEXICON: &str = include_str!("../data/default_lexicon.toml");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon schema violation: {0}")]
    Schema(String),
    #[error("duplicate group id {id:?} at anchor {anchor}")]
    DuplicateGroup {
        anchor: RelativePosition,
        id: String,
    },
    #[error("group {id:?} at anchor {anchor} has no cues")]
    EmptyCues {
        anchor: RelativePosition,
        id: String,
    },
    #[error("group {id:?}: anchor {anchor} is not -1 or 0")]
    BadAnchor {
        anchor: RelativePosition,
        id: String,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Whole whitespace-delimited tokens only.
    Token,
    /// Any occurrence inside the clause text.
    #[default]
    Substring,
}

impl MatchMode {
    pub fn matches(self, text: &str, cue: &str) -> bool {
        match self {
            MatchMode::Substring => text.contains(cue),
            MatchMode::Token => text.split_whitespace().any(|t| t == cue),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueGroup {
    pub anchor: RelativePosition,
    pub id: String,
    pub label: String,
    /// Distinct cues in file order.
    pub cues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CueLexicon {
    pub groups: Vec<CueGroup>,
    pub match_mode: MatchMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    match_mode: MatchMode,
    #[serde(default, rename = "group")]
    groups: Vec<CueGroup>,
}

impl CueLexicon {
    pub fn new(groups: Vec<CueGroup>, match_mode: MatchMode) -> Result<Self, LexiconError> {
        let mut seen = HashSet::new();
        let mut clean = Vec::with_capacity(groups.len());
        for mut g in groups {
            if g.anchor.0 != -1 && g.anchor.0 != 0 {
                return Err(LexiconError::BadAnchor {
                    anchor: g.anchor,
                    id: g.id,
                });
            }
            if g.id.is_empty() {
                return Err(LexiconError::Schema("group id must be non-empty".into()));
            }
            if !seen.insert((g.anchor, g.id.clone())) {
                return Err(LexiconError::DuplicateGroup {
                    anchor: g.anchor,
                    id: g.id,
                });
            }
            let mut distinct = HashSet::new();
            g.cues
                .retain(|c| !c.is_empty() && distinct.insert(c.clone()));
            if g.cues.is_empty() {
                return Err(LexiconError::EmptyCues {
                    anchor: g.anchor,
                    id: g.id,
                });
            }
            clean.push(g);
        }
        Ok(CueLexicon {
            groups: clean,
            match_mode,
        })
    }

    /// The lexicon shipped with the crate.
    pub fn default_lexicon() -> Self {
        load_lexicon(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn with_mode(mut self, mode: MatchMode) -> Self {
        self.match_mode = mode;
        self
    }

    /// Anchors in order of first appearance.
    pub fn anchors(&self) -> Vec<RelativePosition> {
        let mut out = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.anchor) {
                out.push(g.anchor);
            }
        }
        out
    }

    pub fn groups_at(&self, anchor: RelativePosition) -> impl Iterator<Item = &CueGroup> {
        self.groups.iter().filter(move |g| g.anchor == anchor)
    }

    pub fn group(&self, anchor: RelativePosition, id: &str) -> Option<&CueGroup> {
        self.groups_at(anchor).find(|g| g.id == id)
    }
}

/// Parse a TOML lexicon document.
pub fn load_lexicon(text: &str) -> Result<CueLexicon, LexiconError> {
    let file: LexiconFile =
        toml::from_str(text).map_err(|e| LexiconError::Schema(e.to_string()))?;
    CueLexicon::new(file.groups, file.match_mode)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CueMatch {
    pub instance_id: String,
    pub group_id: String,
    pub anchor: RelativePosition,
    pub cue: String,
    pub clause_index: usize,
    /// Set on the first match of the first matching group at this anchor.
    pub primary: bool,
}

/// Clauses scanned for cues of a cause at `anchor`.
fn scan_window(instance: &Instance, anchor: RelativePosition) -> Vec<usize> {
    let e = instance.emotion_index();
    match anchor.0 {
        -1 => vec![e - 1, e],
        _ => vec![e],
    }
}

/// All cue matches for the instance's causes at lexicon anchors.
pub fn match_instance(instance: &Instance, lexicon: &CueLexicon) -> Vec<CueMatch> {
    let mut out = Vec::new();
    let cause_positions: Vec<_> = instance.cause_positions().collect();
    for anchor in lexicon.anchors() {
        if !cause_positions.contains(&anchor) {
            continue;
        }
        let window = scan_window(instance, anchor);
        let mut primary_taken = false;
        for group in lexicon.groups_at(anchor) {
            for &ci in &window {
                let text = &instance.clauses()[ci].text;
                for cue in &group.cues {
                    if lexicon.match_mode.matches(text, cue) {
                        out.push(CueMatch {
                            instance_id: instance.id().to_string(),
                            group_id: group.id.clone(),
                            anchor,
                            cue: cue.clone(),
                            clause_index: ci,
                            primary: !primary_taken,
                        });
                        primary_taken = true;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct GroupCoverage<P: Real> {
    pub id: String,
    pub label: String,
    /// Anchor causes whose instance has at least one match in this group.
    pub matched: usize,
    pub matched_fraction: P,
    /// Anchor causes whose first matching group (in listed order) is this one.
    pub primary: usize,
    pub primary_fraction: P,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct AnchorCoverage<P: Real> {
    pub anchor: RelativePosition,
    /// Number of causes at this anchor; the denominator of every fraction below.
    pub causes: usize,
    pub groups: Vec<GroupCoverage<P>>,
    pub union: usize,
    pub union_fraction: P,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct CoverageReport<P: Real> {
    pub match_mode: MatchMode,
    pub total_causes: usize,
    pub anchors: Vec<AnchorCoverage<P>>,
}

impl<P: Real> CoverageReport<P> {
    pub fn anchor(&self, anchor: RelativePosition) -> Option<&AnchorCoverage<P>> {
        self.anchors.iter().find(|a| a.anchor == anchor)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Match mode: {:?}; total causes: {}",
            self.match_mode, self.total_causes
        );
        for a in &self.anchors {
            let _ = writeln!(s);
            let _ = writeln!(s, "Anchor {} ({} causes)", a.anchor, a.causes);
            let _ = writeln!(
                s,
                "{:<6} {:<20} {:>18} {:>10} {:>12}",
                "Group", "Label", "Primary", "Percent", "Any-match"
            );
            let _ = writeln!(s, "{}", "-".repeat(70));
            for g in &a.groups {
                let _ = writeln!(
                    s,
                    "{:<6} {:<20} {:>18} {:>10} {:>12}",
                    g.id,
                    g.label,
                    format!("{}/{}", g.primary, a.causes),
                    percent(g.primary_fraction),
                    percent(g.matched_fraction)
                );
            }
            let _ = writeln!(
                s,
                "{:<6} {:<20} {:>18} {:>10}",
                "",
                "Union",
                format!("{}/{}", a.union, a.causes),
                percent(a.union_fraction)
            );
        }
        s
    }
}

pub fn coverage_report<P: Real>(
    corpus: &Corpus,
    lexicon: &CueLexicon,
) -> Result<CoverageReport<P>, LexiconError> {
    if corpus.is_empty() {
        return Err(LexiconError::EmptyCorpus);
    }
    let anchors = lexicon.anchors();
    // anchor -> (causes, group id -> matched, group id -> primary, union)
    let mut causes: BTreeMap<RelativePosition, usize> = BTreeMap::new();
    let mut matched: BTreeMap<(RelativePosition, &str), usize> = BTreeMap::new();
    let mut primary: BTreeMap<(RelativePosition, &str), usize> = BTreeMap::new();
    let mut union: BTreeMap<RelativePosition, usize> = BTreeMap::new();

    for inst in corpus.instances() {
        let positions: Vec<_> = inst.cause_positions().collect();
        let matches = match_instance(inst, lexicon);
        for &anchor in &anchors {
            if !positions.contains(&anchor) {
                continue;
            }
            *causes.entry(anchor).or_default() += 1;
            let here: Vec<&CueMatch> = matches.iter().filter(|m| m.anchor == anchor).collect();
            if here.is_empty() {
                continue;
            }
            *union.entry(anchor).or_default() += 1;
            for g in lexicon.groups_at(anchor) {
                if here.iter().any(|m| m.group_id == g.id) {
                    *matched.entry((anchor, g.id.as_str())).or_default() += 1;
                }
            }
            let first = here.iter().find(|m| m.primary).expect("one primary match");
            let gid = lexicon
                .groups_at(anchor)
                .find(|g| g.id == first.group_id)
                .map(|g| g.id.as_str())
                .expect("group exists");
            *primary.entry((anchor, gid)).or_default() += 1;
        }
    }

    let frac = |n: usize, d: usize| ratio(P::from_count(n), P::from_count(d));
    let anchors = anchors
        .into_iter()
        .map(|anchor| {
            let den = causes.get(&anchor).copied().unwrap_or(0);
            let groups = lexicon
                .groups_at(anchor)
                .map(|g| {
                    let m = matched.get(&(anchor, g.id.as_str())).copied().unwrap_or(0);
                    let p = primary.get(&(anchor, g.id.as_str())).copied().unwrap_or(0);
                    GroupCoverage {
                        id: g.id.clone(),
                        label: g.label.clone(),
                        matched: m,
                        matched_fraction: frac(m, den),
                        primary: p,
                        primary_fraction: frac(p, den),
                    }
                })
                .collect();
            let u = union.get(&anchor).copied().unwrap_or(0);
            AnchorCoverage {
                anchor,
                causes: den,
                groups,
                union: u,
                union_fraction: frac(u, den),
            }
        })
        .collect();
    Ok(CoverageReport {
        match_mode: lexicon.match_mode,
        total_causes: corpus.n_causes(),
        anchors,
    })
}
