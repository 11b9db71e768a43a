use super::{Comparator, Condition, SqlError, SqlQuery, SqlType, Table};
use crate::text::{entity_key, parse_number};

/// Result of running a query against a table.
#[derive(Clone, Debug, PartialEq)]
pub enum ExecResult {
    /// Selected cells for aggregator-free queries (a multiset; order is not significant).
    Cells(Vec<String>),
    Count(usize),
    Number(f64),
    /// Numeric aggregate over zero numeric cells. Distinct from `Number(0.0)`.
    Empty,
}

impl ExecResult {
    /// Multiset equality; numbers compare within `1e-9` (relative beyond magnitude 1).
    pub fn same_as(&self, other: &ExecResult) -> bool {
        match (self, other) {
            (ExecResult::Cells(a), ExecResult::Cells(b)) => {
                if a.len() != b.len() {
                    return false;
                }
                let (mut a, mut b) = (a.clone(), b.clone());
                a.sort();
                b.sort();
                a == b
            }
            (ExecResult::Count(a), ExecResult::Count(b)) => a == b,
            (ExecResult::Number(a), ExecResult::Number(b)) => {
                (a - b).abs() <= 1e-9 * 1f64.max(a.abs()).max(b.abs())
            }
            (ExecResult::Empty, ExecResult::Empty) => true,
            _ => false,
        }
    }
}

fn holds(cond: &Condition, cell: &str) -> bool {
    match cond.op {
        Comparator::Eq => entity_key(cell) == entity_key(&cond.value),
        op => match (parse_number(cell), parse_number(&cond.value)) {
            (Some(x), Some(v)) => match op {
                Comparator::Gt => x > v,
                Comparator::Ge => x >= v,
                Comparator::Lt => x < v,
                Comparator::Le => x <= v,
                Comparator::Eq => unreachable!(),
            },
            _ => false,
        },
    }
}

/// Scans `table`, keeps rows satisfying every condition, then aggregates the selected column.
///
/// Equality compares normalized entity keys. Order comparators need both the
/// cell and the constant to be numeric, otherwise the condition is false.
pub fn execute(q: &SqlQuery, table: &Table) -> Result<ExecResult, SqlError> {
    let col_of = |name: &str| table.column_index(name).ok_or_else(|| SqlError::UnknownColumn(name.to_string()));
    let sel = col_of(&q.select_col)?;
    let conds = q
        .conds
        .iter()
        .map(|c| Ok((col_of(&c.column)?, c)))
        .collect::<Result<Vec<_>, SqlError>>()?;

    let selected: Vec<&String> = table
        .rows
        .iter()
        .filter(|row| conds.iter().all(|(ci, c)| holds(c, &row[*ci])))
        .map(|row| &row[sel])
        .collect();

    let numbers = || selected.iter().filter_map(|c| parse_number(c)).collect::<Vec<f64>>();
    Ok(match q.agg {
        SqlType::Select => ExecResult::Cells(selected.into_iter().cloned().collect()),
        SqlType::Count => ExecResult::Count(selected.len()),
        agg => {
            let xs = numbers();
            if xs.is_empty() {
                ExecResult::Empty
            } else {
                ExecResult::Number(match agg {
                    SqlType::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
                    SqlType::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    SqlType::Sum => xs.iter().sum(),
                    SqlType::Avg => xs.iter().sum::<f64>() / xs.len() as f64,
                    SqlType::Count | SqlType::Select => unreachable!(),
                })
            }
        }
    })
}

/// True iff both queries produce the same result on `table`.
///
/// A prediction that fails to execute is simply wrong; a gold query that
/// fails to execute is an error in the corpus.
pub fn execution_match(pred: &SqlQuery, gold: &SqlQuery, table: &Table) -> Result<bool, SqlError> {
    let gold_result = execute(gold, table)?;
    Ok(match execute(pred, table) {
        Ok(r) => r.same_as(&gold_result),
        Err(_) => false,
    })
}
