//! Decoding-type automaton for `τV τV τC τV τC τV (τC τV τQ)* τV(<END>)`.
//!
//! `<GO>` is consumed before the first step. `AND` between conditions is
//! implied by the loop and never decoded.

use serde::{Deserialize, Serialize};

use super::{Comparator, Condition, SqlError, SqlQuery, SqlType};

/// The 17 SQL operator terminals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Terminal {
    Select,
    From,
    Where,
    Id,
    Max,
    Min,
    Count,
    Sum,
    Avg,
    And,
    Eq,
    Gt,
    Ge,
    Lt,
    Le,
    End,
    Go,
}

impl Terminal {
    pub const ALL: [Terminal; 17] = [
        Terminal::Select,
        Terminal::From,
        Terminal::Where,
        Terminal::Id,
        Terminal::Max,
        Terminal::Min,
        Terminal::Count,
        Terminal::Sum,
        Terminal::Avg,
        Terminal::And,
        Terminal::Eq,
        Terminal::Gt,
        Terminal::Ge,
        Terminal::Lt,
        Terminal::Le,
        Terminal::End,
        Terminal::Go,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn for_aggregate(t: SqlType) -> Terminal {
        match t {
            SqlType::Count => Terminal::Count,
            SqlType::Min => Terminal::Min,
            SqlType::Max => Terminal::Max,
            SqlType::Sum => Terminal::Sum,
            SqlType::Avg => Terminal::Avg,
            SqlType::Select => Terminal::Id,
        }
    }

    pub fn aggregate(self) -> Option<SqlType> {
        Some(match self {
            Terminal::Count => SqlType::Count,
            Terminal::Min => SqlType::Min,
            Terminal::Max => SqlType::Max,
            Terminal::Sum => SqlType::Sum,
            Terminal::Avg => SqlType::Avg,
            Terminal::Id => SqlType::Select,
            _ => return None,
        })
    }

    pub fn for_comparator(c: Comparator) -> Terminal {
        match c {
            Comparator::Eq => Terminal::Eq,
            Comparator::Gt => Terminal::Gt,
            Comparator::Ge => Terminal::Ge,
            Comparator::Lt => Terminal::Lt,
            Comparator::Le => Terminal::Le,
        }
    }

    pub fn comparator(self) -> Option<Comparator> {
        Some(match self {
            Terminal::Eq => Comparator::Eq,
            Terminal::Gt => Comparator::Gt,
            Terminal::Ge => Comparator::Ge,
            Terminal::Lt => Comparator::Lt,
            Terminal::Le => Comparator::Le,
            _ => return None,
        })
    }
}

/// Per-step output category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodeTag {
    /// τV: a SQL operator terminal.
    Operator,
    /// τC: a column name (or the table id) copied from the input.
    Column,
    /// τQ: a constant copied from the question.
    Constant,
}

/// Which kind of name a τC step produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnSlot {
    Select,
    Table,
    Condition,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodeToken {
    Op(Terminal),
    Column(String),
    Value(String),
}

impl DecodeToken {
    pub fn tag(&self) -> DecodeTag {
        match self {
            DecodeToken::Op(_) => DecodeTag::Operator,
            DecodeToken::Column(_) => DecodeTag::Column,
            DecodeToken::Value(_) => DecodeTag::Constant,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GrammarState {
    Start,
    AfterSelect,
    AfterAggregate,
    AfterSelectColumn,
    AfterFrom,
    AfterTable,
    AfterWhere,
    AfterConditionColumn,
    AfterComparator,
    AfterValue,
    Done,
}

/// Legal continuations from a state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllowedNext {
    /// τV terminals allowed here (empty if τV is not allowed).
    pub terminals: Vec<Terminal>,
    /// Set when τC is allowed.
    pub column: Option<ColumnSlot>,
    /// True when τQ is allowed.
    pub constant: bool,
}

impl AllowedNext {
    pub fn tags(&self) -> Vec<DecodeTag> {
        let mut tags = Vec::new();
        if !self.terminals.is_empty() {
            tags.push(DecodeTag::Operator);
        }
        if self.column.is_some() {
            tags.push(DecodeTag::Column);
        }
        if self.constant {
            tags.push(DecodeTag::Constant);
        }
        tags
    }

    fn ops(terminals: &[Terminal]) -> Self {
        Self {
            terminals: terminals.to_vec(),
            column: None,
            constant: false,
        }
    }
}

const AGGREGATES: [Terminal; 6] = [
    Terminal::Id,
    Terminal::Max,
    Terminal::Min,
    Terminal::Count,
    Terminal::Sum,
    Terminal::Avg,
];
const COMPARATORS: [Terminal; 5] = [Terminal::Eq, Terminal::Gt, Terminal::Ge, Terminal::Lt, Terminal::Le];

impl GrammarState {
    pub fn initial() -> Self {
        GrammarState::Start
    }

    pub fn is_accepting(self) -> bool {
        self == GrammarState::Done
    }

    pub fn allowed(self) -> Result<AllowedNext, SqlError> {
        use GrammarState::*;
        Ok(match self {
            Start => AllowedNext::ops(&[Terminal::Select]),
            AfterSelect => AllowedNext::ops(&AGGREGATES),
            AfterAggregate => AllowedNext {
                terminals: vec![],
                column: Some(ColumnSlot::Select),
                constant: false,
            },
            AfterSelectColumn => AllowedNext::ops(&[Terminal::From]),
            AfterFrom => AllowedNext {
                terminals: vec![],
                column: Some(ColumnSlot::Table),
                constant: false,
            },
            AfterTable => AllowedNext::ops(&[Terminal::Where]),
            AfterWhere | AfterValue => AllowedNext {
                terminals: vec![Terminal::End],
                column: Some(ColumnSlot::Condition),
                constant: false,
            },
            AfterConditionColumn => AllowedNext::ops(&COMPARATORS),
            AfterComparator => AllowedNext {
                terminals: vec![],
                column: None,
                constant: true,
            },
            Done => {
                return Err(SqlError::Grammar {
                    state: self,
                    message: "accepting state has no successors".into(),
                })
            }
        })
    }

    pub fn advance(self, token: &DecodeToken) -> Result<GrammarState, SqlError> {
        use GrammarState::*;
        let allowed = self.allowed()?;
        let legal = match token {
            DecodeToken::Op(t) => allowed.terminals.contains(t),
            DecodeToken::Column(_) => allowed.column.is_some(),
            DecodeToken::Value(_) => allowed.constant,
        };
        if !legal {
            return Err(SqlError::Grammar {
                state: self,
                message: format!("illegal token {token:?}"),
            });
        }
        Ok(match (self, token) {
            (Start, _) => AfterSelect,
            (AfterSelect, _) => AfterAggregate,
            (AfterAggregate, _) => AfterSelectColumn,
            (AfterSelectColumn, _) => AfterFrom,
            (AfterFrom, _) => AfterTable,
            (AfterTable, _) => AfterWhere,
            (AfterWhere | AfterValue, DecodeToken::Op(_)) => Done,
            (AfterWhere | AfterValue, _) => AfterConditionColumn,
            (AfterConditionColumn, _) => AfterComparator,
            (AfterComparator, _) => AfterValue,
            (Done, _) => unreachable!("rejected by allowed()"),
        })
    }
}

/// Gold decode sequence for a query, ending in `<END>`.
pub fn decode_sequence(q: &SqlQuery) -> Vec<DecodeToken> {
    let mut seq = vec![
        DecodeToken::Op(Terminal::Select),
        DecodeToken::Op(Terminal::for_aggregate(q.agg)),
        DecodeToken::Column(q.select_col.clone()),
        DecodeToken::Op(Terminal::From),
        DecodeToken::Column(q.table.clone()),
        DecodeToken::Op(Terminal::Where),
    ];
    for c in &q.conds {
        seq.push(DecodeToken::Column(c.column.clone()));
        seq.push(DecodeToken::Op(Terminal::for_comparator(c.op)));
        seq.push(DecodeToken::Value(c.value.clone()));
    }
    seq.push(DecodeToken::Op(Terminal::End));
    seq
}

/// Rebuilds the query from a complete decode sequence, validating it against the automaton.
pub fn query_from_decode(tokens: &[DecodeToken]) -> Result<SqlQuery, SqlError> {
    let mut state = GrammarState::initial();
    let mut agg = SqlType::Select;
    let mut select_col = String::new();
    let mut table = String::new();
    let mut conds: Vec<Condition> = Vec::new();
    let mut pending_col = String::new();
    let mut pending_op = Comparator::Eq;
    for tok in tokens {
        let next = state.advance(tok)?;
        match (state, tok) {
            (GrammarState::AfterSelect, DecodeToken::Op(t)) => agg = t.aggregate().expect("checked by automaton"),
            (GrammarState::AfterAggregate, DecodeToken::Column(c)) => select_col = c.clone(),
            (GrammarState::AfterFrom, DecodeToken::Column(c)) => table = c.clone(),
            (GrammarState::AfterWhere | GrammarState::AfterValue, DecodeToken::Column(c)) => pending_col = c.clone(),
            (GrammarState::AfterConditionColumn, DecodeToken::Op(t)) => {
                pending_op = t.comparator().expect("checked by automaton")
            }
            (GrammarState::AfterComparator, DecodeToken::Value(v)) => {
                conds.push(Condition::new(std::mem::take(&mut pending_col), pending_op, v.clone()))
            }
            _ => {}
        }
        state = next;
    }
    if !state.is_accepting() {
        return Err(SqlError::Grammar {
            state,
            message: "decode sequence ended before <END>".into(),
        });
    }
    Ok(SqlQuery {
        agg,
        select_col,
        table,
        conds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_allows_only_select() {
        let a = GrammarState::initial().allowed().unwrap();
        assert_eq!(a.terminals, vec![Terminal::Select]);
        assert_eq!(a.tags(), vec![DecodeTag::Operator]);
    }

    #[test]
    fn after_where_allows_column_or_end() {
        let a = GrammarState::AfterWhere.allowed().unwrap();
        assert_eq!(a.terminals, vec![Terminal::End]);
        assert_eq!(a.column, Some(ColumnSlot::Condition));
        assert_eq!(a.tags(), vec![DecodeTag::Operator, DecodeTag::Column]);
        assert_eq!(GrammarState::AfterValue.allowed().unwrap(), a);
    }

    #[test]
    fn illegal_tag_is_rejected() {
        let err = GrammarState::AfterConditionColumn
            .advance(&DecodeToken::Value("x".into()))
            .unwrap_err();
        assert!(matches!(err, SqlError::Grammar { .. }));
        assert!(GrammarState::Done.allowed().is_err());
        assert!(GrammarState::Start.advance(&DecodeToken::Op(Terminal::Where)).is_err());
    }

    #[test]
    fn round_trip_through_decode() {
        let q = SqlQuery {
            agg: SqlType::Max,
            select_col: "points".into(),
            table: "t1".into(),
            conds: vec![
                Condition::new("team", Comparator::Eq, "new^york"),
                Condition::new("year", Comparator::Ge, "1999"),
            ],
        };
        let seq = decode_sequence(&q);
        assert_eq!(seq.len(), 6 + 3 * 2 + 1);
        assert_eq!(query_from_decode(&seq).unwrap(), q);
    }

    #[test]
    fn truncated_sequence_rejected() {
        let q = SqlQuery {
            agg: SqlType::Select,
            select_col: "a".into(),
            table: "t".into(),
            conds: vec![],
        };
        let seq = decode_sequence(&q);
        assert!(query_from_decode(&seq[..seq.len() - 1]).is_err());
    }
}
