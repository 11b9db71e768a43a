//! Grammar-aware attention encoder-decoder over `[table] ⧺ header ⧺ <sep> ⧺ question`.
//!
//! Every decode step is typed by the grammar automaton: τV steps pick an
//! operator terminal, τC steps copy a column name (from the header or the
//! question) or the table id, and τQ steps copy a constant from the question.

mod network;

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ptmaml_autodiff::AutodiffError;

use crate::data::Example;
use crate::sql::{decode_sequence, ColumnSlot, DecodeTag, DecodeToken, GrammarState, SqlError, Terminal};

pub use network::{DecodeStepDist, Learner};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("example {id}: copy target `{value}` does not occur among its legal positions")]
    UncopyableTarget { id: usize, value: String },
    #[error("example {id}: gold decode has {len} steps, max_decode_len is {max}")]
    DecodeTooLong { id: usize, len: usize, max: usize },
    #[error("decode reached max_decode_len ({0}) without <END>")]
    Truncated(usize),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Cross-entropy on one designated occurrence (the first legal one).
    Pointer,
    /// `−log` of the highest probability among occurrences of the gold value.
    Max,
    /// `−log` of the total probability of all occurrences of the gold value.
    Sum,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Pointer, LossKind::Max, LossKind::Sum];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pointer => "pointer",
            LossKind::Max => "max",
            LossKind::Sum => "sum",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pointer" => Ok(LossKind::Pointer),
            "max" => Ok(LossKind::Max),
            "sum" => Ok(LossKind::Sum),
            other => Err(format!("unknown loss `{other}` (pointer|max|sum)")),
        }
    }
}

/// Recurrent cell used by encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub loss_kind: LossKind,
    pub max_decode_len: usize,
    pub cell: CellKind,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl LearnerConfig {
    pub fn desk() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            loss_kind: LossKind::Sum,
            max_decode_len: 40,
            cell: CellKind::Gru,
        }
    }

    /// The reference architecture: 200-d inputs, 3 stacked layers of width 100, LSTM cells.
    pub fn paper() -> Self {
        Self {
            embed_dim: 200,
            hidden_dim: 100,
            encoder_layers: 3,
            decoder_layers: 3,
            loss_kind: LossKind::Sum,
            max_decode_len: 40,
            cell: CellKind::Lstm,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if [self.embed_dim, self.hidden_dim, self.encoder_layers, self.decoder_layers, self.max_decode_len]
            .contains(&0)
        {
            return Err("learner dimensions, layer counts and max_decode_len must be positive".into());
        }
        Ok(())
    }
}

pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const TABLE: &str = "<table>";

/// Input-token vocabulary. Ids 0..3 are `<unk>`, `<sep>`, `<table>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Question tokens and header names of the given (training) examples, in first-seen order.
    pub fn build<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut v = Self::from_tokens(vec![UNK.into(), SEP.into(), TABLE.into()]);
        for ex in examples {
            for t in ex.header.iter().chain(&ex.tokens) {
                if !v.index.contains_key(t) {
                    v.index.insert(t.clone(), v.tokens.len());
                    v.tokens.push(t.clone());
                }
            }
        }
        v
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Gold action at one decode step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepTarget {
    Op(Terminal),
    /// Copy of `value`; `positions` are the legal input positions holding it, ascending.
    Copy { value: String, positions: Vec<usize> },
}

/// An example laid out as model input, with its gold decode steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub id: usize,
    pub input_ids: Vec<usize>,
    /// Copyable string at each input position (empty for the separator).
    pub values: Vec<String>,
    pub table_pos: usize,
    pub header: Range<usize>,
    pub question: Range<usize>,
    pub targets: Vec<StepTarget>,
}

impl Encoded {
    /// Legal copy positions for a τC/τQ step. Column copies from the question
    /// are limited to tokens that name a header column, so every decode names a real column.
    pub fn candidates(&self, tag: DecodeTag, slot: Option<ColumnSlot>) -> Vec<usize> {
        match (tag, slot) {
            (DecodeTag::Column, Some(ColumnSlot::Table)) => vec![self.table_pos],
            (DecodeTag::Column, _) => {
                let names = &self.values[self.header.clone()];
                self.header
                    .clone()
                    .chain(self.question.clone().filter(|&p| names.contains(&self.values[p])))
                    .collect()
            }
            (DecodeTag::Constant, _) => self.question.clone().collect(),
            (DecodeTag::Operator, _) => Vec::new(),
        }
    }

    /// True when every copy target has exactly one legal occurrence.
    pub fn copy_targets_unique(&self) -> bool {
        self.targets.iter().all(|t| match t {
            StepTarget::Copy { positions, .. } => positions.len() == 1,
            StepTarget::Op(_) => true,
        })
    }
}

impl Learner {
    /// Input layout only, with no gold targets. Enough for prediction.
    pub fn encode_input(&self, ex: &Example) -> Encoded {
        let vocab = self.vocab();
        let mut input_ids = vec![vocab.id(TABLE)];
        let mut values = vec![ex.table_id.clone()];
        for h in &ex.header {
            input_ids.push(vocab.id(h));
            values.push(h.clone());
        }
        input_ids.push(vocab.id(SEP));
        values.push(String::new());
        for t in &ex.tokens {
            input_ids.push(vocab.id(t));
            values.push(t.clone());
        }
        let header = 1..1 + ex.header.len();
        let question = header.end + 1..values.len();
        Encoded {
            id: ex.id,
            input_ids,
            values,
            table_pos: 0,
            header,
            question,
            targets: Vec::new(),
        }
    }

    /// Lays out the input sequence and derives gold copy positions from the grammar.
    pub fn encode(&self, ex: &Example) -> Result<Encoded, LearnerError> {
        let mut enc = self.encode_input(ex);
        let seq = decode_sequence(&ex.gold);
        if seq.len() > self.config().max_decode_len {
            return Err(LearnerError::DecodeTooLong {
                id: ex.id,
                len: seq.len(),
                max: self.config().max_decode_len,
            });
        }
        let mut state = GrammarState::initial();
        for tok in &seq {
            let allowed = state.allowed()?;
            let target = match tok {
                DecodeToken::Op(t) => StepTarget::Op(*t),
                DecodeToken::Column(v) | DecodeToken::Value(v) => {
                    let positions: Vec<usize> = enc
                        .candidates(tok.tag(), allowed.column)
                        .into_iter()
                        .filter(|&p| enc.values[p] == *v)
                        .collect();
                    if positions.is_empty() {
                        return Err(LearnerError::UncopyableTarget {
                            id: ex.id,
                            value: v.clone(),
                        });
                    }
                    StepTarget::Copy {
                        value: v.clone(),
                        positions,
                    }
                }
            };
            enc.targets.push(target);
            state = state.advance(tok)?;
        }
        Ok(enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{Comparator, Condition, SqlQuery, SqlType};

    pub(crate) fn example() -> Example {
        Example {
            id: 3,
            tokens: "what is the lowest wins when team is new^york and wins greater than 3 ?"
                .split(' ')
                .map(str::to_string)
                .collect(),
            header: vec!["team".into(), "wins".into(), "losses".into()],
            table_id: "1-23-4".into(),
            gold: SqlQuery {
                agg: SqlType::Min,
                select_col: "wins".into(),
                table: "1-23-4".into(),
                conds: vec![
                    Condition::new("team", Comparator::Eq, "new^york"),
                    Condition::new("wins", Comparator::Gt, "3"),
                ],
            },
        }
    }

    #[test]
    fn layout_and_targets() {
        let ex = example();
        let learner = Learner::new(LearnerConfig::desk(), Vocab::build([&ex]));
        let enc = learner.encode(&ex).unwrap();
        assert_eq!(enc.values[0], "1-23-4");
        assert_eq!(enc.header, 1..4);
        assert_eq!(enc.values[4], "");
        assert_eq!(enc.question, 5..5 + ex.tokens.len());
        assert_eq!(enc.targets.len(), 6 + 3 * 2 + 1);
        // select column "wins": header position 2 and two question positions.
        match &enc.targets[2] {
            StepTarget::Copy { positions, .. } => assert_eq!(positions, &vec![2, 5 + 4, 5 + 10]),
            other => panic!("{other:?}"),
        }
        match &enc.targets[4] {
            StepTarget::Copy { positions, .. } => assert_eq!(positions, &vec![0]),
            other => panic!("{other:?}"),
        }
        // constant "3" only from the question.
        match &enc.targets[11] {
            StepTarget::Copy { value, positions } => {
                assert_eq!(value, "3");
                assert_eq!(positions, &vec![5 + 13]);
            }
            other => panic!("{other:?}"),
        }
        assert!(!enc.copy_targets_unique());
    }

    #[test]
    fn missing_constant_is_an_error() {
        let mut ex = example();
        ex.gold.conds[0].value = "boston".into();
        let learner = Learner::new(LearnerConfig::desk(), Vocab::build([&ex]));
        assert!(matches!(
            learner.encode(&ex),
            Err(LearnerError::UncopyableTarget { id: 3, .. })
        ));
    }

    #[test]
    fn too_long_decode_rejected() {
        let ex = example();
        let cfg = LearnerConfig {
            max_decode_len: 8,
            ..LearnerConfig::desk()
        };
        let learner = Learner::new(cfg, Vocab::build([&ex]));
        assert!(matches!(learner.encode(&ex), Err(LearnerError::DecodeTooLong { .. })));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocab::build([&example()]);
        assert_eq!(v.id("zzz"), 0);
        assert_eq!(v.id(SEP), 1);
        let mut back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        back.reindex();
        assert_eq!(back, v);
        assert_eq!(back.id("lowest"), v.id("lowest"));
    }
}
