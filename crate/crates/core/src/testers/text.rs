//! Text perturbations (keyboard typos, boundary noise) and the sensitivity testers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CoreError, Result};
use crate::ids::derive_seed;
use crate::model::{TestCase, TestResult};
use crate::sample::{Outcome, Predictor, Sample};

use super::{choose_indices, flip_rate_of, judge_label_pair, Bindings, CaseDraft, Generated, Judgement, PropertyTester, SubjectData};

/// Letter rows of a QWERTY keyboard.
pub const QWERTY_ROWS: [&str; 3] = ["qwertyuiop", "asdfghjkl", "zxcvbnm"];
/// Minimum token length (in characters) eligible for typos.
pub const MIN_TOKEN_LEN: usize = 3;
const NOISE_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// Keys next to `c` on a staggered QWERTY layout, lower-case.
pub fn keyboard_neighbors(c: char) -> Vec<char> {
    let lower = c.to_ascii_lowercase();
    let rows: Vec<Vec<char>> = QWERTY_ROWS.iter().map(|r| r.chars().collect()).collect();
    let Some((r, i)) = rows
        .iter()
        .enumerate()
        .find_map(|(r, row)| row.iter().position(|&k| k == lower).map(|i| (r, i)))
    else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut push = |row: usize, idx: isize| {
        if idx >= 0 {
            if let Some(&k) = rows[row].get(idx as usize) {
                out.push(k);
            }
        }
    };
    let i = i as isize;
    push(r, i - 1);
    push(r, i + 1);
    if r > 0 {
        push(r - 1, i);
        push(r - 1, i + 1);
    }
    if r + 1 < rows.len() {
        push(r + 1, i - 1);
        push(r + 1, i);
    }
    out
}

fn match_case(original: char, replacement: char) -> char {
    if original.is_uppercase() {
        replacement.to_ascii_uppercase()
    } else {
        replacement
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Swap,
    Delete,
    Insert,
    Substitute,
}

/// One applied edit, in character positions of the text it was applied to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub position: usize,
    pub op: EditKind,
    /// Characters at `position` before (swap: the two swapped, delete: the removed one).
    pub before: String,
    /// Characters written (insert: the inserted one after `position`).
    pub after: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transformed {
    pub text: String,
    /// Ops in application order (descending position for typos).
    pub operations: Vec<EditOp>,
    pub requested: usize,
    /// Requested operations that could not be applied.
    pub shortfall: usize,
}

/// Character positions inside whitespace-separated tokens of at least
/// [`MIN_TOKEN_LEN`] characters.
fn eligible_positions(chars: &[char]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        if i - start >= MIN_TOKEN_LEN {
            out.extend(start..i);
        }
    }
    out
}

/// `level` keyboard typos at distinct positions, applied right to left.
pub fn apply_typo(text: &str, level: usize, seed: u64) -> Transformed {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chars: Vec<char> = text.chars().collect();
    let eligible = eligible_positions(&chars);
    let k = level.min(eligible.len());
    let mut chosen: Vec<usize> = eligible.choose_multiple(&mut rng, k).copied().collect();
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    let mut operations = Vec::with_capacity(k);
    for p in chosen {
        let c = chars[p];
        let neighbors = keyboard_neighbors(c);
        let mut kinds = vec![EditKind::Delete];
        if chars.get(p + 1).is_some_and(|&next| !next.is_whitespace() && next != c) {
            kinds.push(EditKind::Swap);
        }
        if !neighbors.is_empty() {
            kinds.push(EditKind::Insert);
            kinds.push(EditKind::Substitute);
        }
        kinds.sort_by_key(|k| *k as u8);
        let kind = *kinds.choose(&mut rng).expect("delete is always possible");
        let op = match kind {
            EditKind::Swap => {
                let before: String = [chars[p], chars[p + 1]].iter().collect();
                chars.swap(p, p + 1);
                let after: String = [chars[p], chars[p + 1]].iter().collect();
                EditOp { position: p, op: kind, before, after }
            }
            EditKind::Delete => {
                let removed = chars.remove(p);
                EditOp { position: p, op: kind, before: removed.to_string(), after: String::new() }
            }
            EditKind::Insert => {
                let n = match_case(c, *neighbors.choose(&mut rng).expect("non-empty"));
                chars.insert(p + 1, n);
                EditOp { position: p, op: kind, before: String::new(), after: n.to_string() }
            }
            EditKind::Substitute => {
                let n = match_case(c, *neighbors.choose(&mut rng).expect("non-empty"));
                chars[p] = n;
                EditOp { position: p, op: kind, before: c.to_string(), after: n.to_string() }
            }
        };
        operations.push(op);
    }
    Transformed {
        text: chars.into_iter().collect(),
        operations,
        requested: level,
        shortfall: level - k,
    }
}

/// Reverts typo operations, restoring the original text.
pub fn undo_typo(transformed: &Transformed) -> Result<String> {
    let mut chars: Vec<char> = transformed.text.chars().collect();
    let bad = || CoreError::invalid("operation log does not match the text");
    for op in transformed.operations.iter().rev() {
        let p = op.position;
        match op.op {
            EditKind::Swap => {
                if p + 1 >= chars.len() {
                    return Err(bad());
                }
                chars.swap(p, p + 1);
            }
            EditKind::Delete => {
                let c = op.before.chars().next().ok_or_else(bad)?;
                if p > chars.len() {
                    return Err(bad());
                }
                chars.insert(p, c);
            }
            EditKind::Insert => {
                if p + 1 >= chars.len() {
                    return Err(bad());
                }
                chars.remove(p + 1);
            }
            EditKind::Substitute => {
                let c = op.before.chars().next().ok_or_else(bad)?;
                *chars.get_mut(p).ok_or_else(bad)? = c;
            }
        }
    }
    Ok(chars.into_iter().collect())
}

/// Character positions where noise may go: string ends and either side of whitespace.
fn boundary_slots(chars: &[char]) -> Vec<usize> {
    let mut slots = vec![0, chars.len()];
    for (i, c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            slots.push(i);
            slots.push(i + 1);
        }
    }
    slots.sort_unstable();
    slots.dedup();
    slots
}

/// `level` random alphanumeric insertions at word boundaries or string ends.
/// Operation positions refer to the original text.
pub fn apply_noise(text: &str, level: usize, seed: u64) -> Transformed {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chars: Vec<char> = text.chars().collect();
    let slots = boundary_slots(&chars);
    let mut inserts: Vec<(usize, char)> = (0..level)
        .map(|_| {
            let slot = slots[rng.gen_range(0..slots.len())];
            let c = NOISE_ALPHABET[rng.gen_range(0..NOISE_ALPHABET.len())] as char;
            (slot, c)
        })
        .collect();
    inserts.sort_by_key(|(slot, _)| *slot);
    let mut out = String::with_capacity(text.len() + level);
    let mut next = inserts.iter().peekable();
    for i in 0..=chars.len() {
        while let Some((_, c)) = next.next_if(|(slot, _)| *slot == i) {
            out.push(*c);
        }
        if let Some(c) = chars.get(i) {
            out.push(*c);
        }
    }
    Transformed {
        text: out,
        operations: inserts
            .into_iter()
            .map(|(position, c)| EditOp {
                position,
                op: EditKind::Insert,
                before: String::new(),
                after: c.to_string(),
            })
            .collect(),
        requested: level,
        shortfall: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextTransformKind {
    Typo,
    Noise,
}

/// Transformation plug-in point: text in, text plus operation log out.
pub trait TextTransform: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, text: &str, level: usize, seed: u64) -> Transformed;
}

impl TextTransform for TextTransformKind {
    fn name(&self) -> &'static str {
        match self {
            TextTransformKind::Typo => "typo",
            TextTransformKind::Noise => "noise",
        }
    }

    fn apply(&self, text: &str, level: usize, seed: u64) -> Transformed {
        match self {
            TextTransformKind::Typo => apply_typo(text, level, seed),
            TextTransformKind::Noise => apply_noise(text, level, seed),
        }
    }
}

/// Pairs `(sentence, transformed sentence)` for a seeded subset of the corpus.
pub fn sensitivity_cases(
    corpus: &[String],
    transform: &dyn TextTransform,
    level: usize,
    limit: usize,
    seed: u64,
) -> Vec<CaseDraft> {
    choose_indices(corpus.len(), limit, seed)
        .into_iter()
        .map(|i| {
            let t = transform.apply(&corpus[i], level, derive_seed(seed, i as u64));
            CaseDraft::pair(
                Sample::Text(corpus[i].clone()),
                Sample::Text(t.text.clone()),
                json!({
                    "source_row": i,
                    "transform": transform.name(),
                    "level": level,
                    "operations": t.operations,
                    "shortfall": t.shortfall,
                }),
            )
        })
        .collect()
}

pub struct TextSensitivity {
    pub transform: Box<dyn TextTransform>,
    pub property: &'static str,
}

impl TextSensitivity {
    pub fn typo() -> Self {
        TextSensitivity {
            transform: Box::new(TextTransformKind::Typo),
            property: crate::catalog::ids::TYPO_SENSITIVITY,
        }
    }

    pub fn noise() -> Self {
        TextSensitivity {
            transform: Box::new(TextTransformKind::Noise),
            property: crate::catalog::ids::NOISE_SENSITIVITY,
        }
    }
}

impl PropertyTester for TextSensitivity {
    fn property_id(&self) -> &'static str {
        self.property
    }

    fn generate(&self, data: &SubjectData, bind: &Bindings, _predictor: &dyn Predictor) -> Result<Generated> {
        let SubjectData::Text { training } = data else {
            return Err(CoreError::invalid("property needs a text corpus"));
        };
        if training.is_empty() {
            return Err(CoreError::Data("empty training data".into()));
        }
        let level = bind.integer("level")?;
        let corpus: Vec<String> = training.iter().map(|r| r.text.clone()).collect();
        let cases = sensitivity_cases(&corpus, self.transform.as_ref(), level, bind.generation_limit, bind.seed);
        let short = cases
            .iter()
            .filter(|c| c.reference.get("shortfall").and_then(Value::as_u64).unwrap_or(0) > 0)
            .count();
        let notes = if short > 0 {
            vec![format!("{short} sentences had fewer than {level} eligible positions")]
        } else {
            Vec::new()
        };
        Ok(Generated {
            source_count: cases.len(),
            cases,
            notes,
            inapplicable: None,
        })
    }

    fn judge(&self, _case: &TestCase, outcomes: &[Outcome], _bind: &Bindings) -> Judgement {
        judge_label_pair(outcomes)
    }

    fn metrics(&self, _cases: &[TestCase], results: &[TestResult], _bind: &Bindings) -> BTreeMap<String, f64> {
        BTreeMap::from([("flip_rate".to_string(), flip_rate_of(results))])
    }
}
