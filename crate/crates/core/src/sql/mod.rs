//! The restricted SQL language: `SELECT [agg](col) FROM table [WHERE c op v (AND c op v)*]`.
//!
//! Covers the AST, a parser and canonical renderer, the decoding-type grammar
//! automaton that constrains the decoder, and an in-memory executor.

mod exec;
mod grammar;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exec::{execute, execution_match, ExecResult};
pub use grammar::{
    decode_sequence, query_from_decode, AllowedNext, ColumnSlot, DecodeTag, DecodeToken, GrammarState, Terminal,
};
pub use parse::parse_sql;

#[derive(Debug, Error, PartialEq)]
pub enum SqlError {
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("query targets table `{query}` but the table is `{table}`")]
    WrongTable { query: String, table: String },
    #[error("invalid table `{id}`: {reason}")]
    InvalidTable { id: String, reason: String },
    #[error("grammar violation at state {state:?}: {message}")]
    Grammar { state: GrammarState, message: String },
}

/// Query type: the aggregator, with `Select` meaning "no aggregator".
///
/// Variant order is the class index used by the type classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SqlType {
    Count,
    Min,
    Max,
    Sum,
    Avg,
    Select,
}

impl SqlType {
    pub const ALL: [SqlType; 6] = [
        SqlType::Count,
        SqlType::Min,
        SqlType::Max,
        SqlType::Sum,
        SqlType::Avg,
        SqlType::Select,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// SQL keyword for aggregating types, `None` for `Select`.
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            SqlType::Count => Some("COUNT"),
            SqlType::Min => Some("MIN"),
            SqlType::Max => Some("MAX"),
            SqlType::Sum => Some("SUM"),
            SqlType::Avg => Some("AVG"),
            SqlType::Select => None,
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word.to_ascii_uppercase().as_str() {
            "COUNT" => Some(SqlType::Count),
            "MIN" => Some(SqlType::Min),
            "MAX" => Some(SqlType::Max),
            "SUM" => Some(SqlType::Sum),
            "AVG" => Some(SqlType::Avg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub const ALL: [Comparator; 5] = [
        Comparator::Eq,
        Comparator::Gt,
        Comparator::Ge,
        Comparator::Lt,
        Comparator::Le,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "=" => Some(Comparator::Eq),
            ">" => Some(Comparator::Gt),
            ">=" | "≥" => Some(Comparator::Ge),
            "<" => Some(Comparator::Lt),
            "<=" | "≤" => Some(Comparator::Le),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    pub op: Comparator,
    pub value: String,
}

impl Condition {
    pub fn new(column: impl Into<String>, op: Comparator, value: impl Into<String>) -> Self {
        Self {
            column: column.into(),
            op,
            value: value.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlQuery {
    pub agg: SqlType,
    pub select_col: String,
    pub table: String,
    pub conds: Vec<Condition>,
}

impl SqlQuery {
    pub fn sql_type(&self) -> SqlType {
        self.agg
    }

    /// Checks every referenced column against `table`'s header.
    pub fn validate(&self, table: &Table) -> Result<(), SqlError> {
        std::iter::once(&self.select_col)
            .chain(self.conds.iter().map(|c| &c.column))
            .try_for_each(|c| {
                if table.column_index(c).is_some() {
                    Ok(())
                } else {
                    Err(SqlError::UnknownColumn(c.clone()))
                }
            })
    }
}

impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonicalize(self))
    }
}

pub fn sql_type_of(q: &SqlQuery) -> SqlType {
    q.agg
}

/// Deterministic rendering: uppercase keywords, single spaces, conditions in AST order,
/// and no `WHERE` clause when there are no conditions.
pub fn canonicalize(q: &SqlQuery) -> String {
    let mut out = String::from("SELECT ");
    match q.agg.keyword() {
        Some(kw) => {
            out.push_str(kw);
            out.push('(');
            out.push_str(&q.select_col);
            out.push(')');
        }
        None => out.push_str(&q.select_col),
    }
    out.push_str(" FROM ");
    out.push_str(&q.table);
    for (i, c) in q.conds.iter().enumerate() {
        out.push_str(if i == 0 { " WHERE " } else { " AND " });
        out.push_str(&c.column);
        out.push(' ');
        out.push_str(c.op.symbol());
        out.push(' ');
        out.push_str(&c.value);
    }
    out
}

/// Token count of the canonical form, counting each keyword, column name,
/// comparator and constant as one token.
pub fn normalized_sql_length(q: &SqlQuery) -> usize {
    let agg = usize::from(q.agg != SqlType::Select);
    let conds = match q.conds.len() {
        0 => 0,
        n => 1 + 3 * n + (n - 1),
    };
    4 + agg + conds
}

/// Structural match. Conditions compare as multisets.
pub fn logical_form_match(pred: &SqlQuery, gold: &SqlQuery) -> bool {
    if pred.agg != gold.agg || pred.select_col != gold.select_col || pred.table != gold.table {
        return false;
    }
    if pred.conds.len() != gold.conds.len() {
        return false;
    }
    let mut a = pred.conds.clone();
    let mut b = gold.conds.clone();
    a.sort();
    b.sort();
    a == b
}

/// Order-sensitive variant of [`logical_form_match`], for ablations.
pub fn logical_form_match_strict(pred: &SqlQuery, gold: &SqlQuery) -> bool {
    pred == gold
}

/// A database table. Cells are strings; numeric cells are parsed on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(id: impl Into<String>, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, SqlError> {
        let t = Self {
            id: id.into(),
            header,
            rows,
        };
        t.check()?;
        Ok(t)
    }

    /// Rectangular rows and unique header names.
    pub fn check(&self) -> Result<(), SqlError> {
        let invalid = |reason: String| SqlError::InvalidTable {
            id: self.id.clone(),
            reason,
        };
        for (i, name) in self.header.iter().enumerate() {
            if self.header[..i].contains(name) {
                return Err(invalid(format!("duplicate column `{name}`")));
            }
        }
        if let Some((i, r)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != self.header.len()) {
            return Err(invalid(format!(
                "row {i} has {} cells, header has {}",
                r.len(),
                self.header.len()
            )));
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(agg: SqlType, conds: Vec<Condition>) -> SqlQuery {
        SqlQuery {
            agg,
            select_col: "c".into(),
            table: "t".into(),
            conds,
        }
    }

    #[test]
    fn lengths() {
        assert_eq!(normalized_sql_length(&q(SqlType::Select, vec![])), 4);
        let one = vec![Condition::new("c1", Comparator::Eq, "v")];
        assert_eq!(normalized_sql_length(&q(SqlType::Select, one.clone())), 8);
        assert_eq!(normalized_sql_length(&q(SqlType::Min, one)), 9);
        let two = vec![
            Condition::new("c1", Comparator::Eq, "v"),
            Condition::new("c2", Comparator::Lt, "3"),
        ];
        assert_eq!(normalized_sql_length(&q(SqlType::Select, two)), 12);
        assert_eq!(sql_type_of(&q(SqlType::Count, vec![])), SqlType::Count);
    }

    #[test]
    fn no_where_without_conditions() {
        assert_eq!(canonicalize(&q(SqlType::Select, vec![])), "SELECT c FROM t");
        assert_eq!(canonicalize(&q(SqlType::Avg, vec![])), "SELECT AVG(c) FROM t");
    }

    #[test]
    fn condition_order_ignored() {
        let a = Condition::new("x", Comparator::Eq, "1");
        let b = Condition::new("y", Comparator::Gt, "2");
        let p = q(SqlType::Select, vec![a.clone(), b.clone()]);
        let g = q(SqlType::Select, vec![b, a]);
        assert!(logical_form_match(&p, &g));
        assert!(!logical_form_match_strict(&p, &g));
        assert!(logical_form_match(&p, &p));
    }

    #[test]
    fn comparator_difference_breaks_match() {
        let p = q(SqlType::Select, vec![Condition::new("x", Comparator::Eq, "1")]);
        let g = q(SqlType::Select, vec![Condition::new("x", Comparator::Lt, "1")]);
        assert!(!logical_form_match(&p, &g));
    }

    #[test]
    fn six_types() {
        assert_eq!(SqlType::ALL.len(), 6);
        for (i, t) in SqlType::ALL.iter().enumerate() {
            assert_eq!(t.index(), i);
        }
    }

    #[test]
    fn table_checks() {
        assert!(Table::new("t", vec!["a".into(), "a".into()], vec![]).is_err());
        assert!(Table::new("t", vec!["a".into()], vec![vec![]]).is_err());
        assert!(Table::new("t", vec!["a".into()], vec![vec!["1".into()]]).is_ok());
    }
}
