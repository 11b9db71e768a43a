use proptest::prelude::*;

use ptmaml_core::sql::{
    canonicalize, decode_sequence, execute, logical_form_match, normalized_sql_length, parse_sql, query_from_decode,
    Comparator, Condition, ExecResult, GrammarState, SqlQuery, SqlType, Table,
};

const NAMES: [&str; 8] = ["team", "wins", "losses", "city", "year", "points", "coach", "rank"];
const WORDS: [&str; 6] = ["red", "blue", "green", "and", "where", "10"];

fn comparators() -> impl Strategy<Value = Comparator> {
    prop::sample::select(vec![Comparator::Eq, Comparator::Gt, Comparator::Lt, Comparator::Ge, Comparator::Le])
}

fn aggs() -> impl Strategy<Value = SqlType> {
    prop::sample::select(SqlType::ALL.to_vec())
}

fn cell() -> impl Strategy<Value = String> {
    prop_oneof![(0u32..20).prop_map(|n| n.to_string()), prop::sample::select(WORDS.to_vec()).prop_map(String::from)]
}

/// A table with 2..=6 columns, up to 20 rows, and a query over it.
fn table_and_query() -> impl Strategy<Value = (Table, SqlQuery)> {
    (2usize..=6, 0usize..=20).prop_flat_map(|(ncols, nrows)| {
        let rows = prop::collection::vec(prop::collection::vec(cell(), ncols), nrows);
        let conds = prop::collection::vec((0..ncols, comparators(), cell()), 0..=3);
        (rows, aggs(), 0..ncols, conds).prop_map(move |(rows, agg, sel, conds)| {
            let header: Vec<String> = NAMES[..ncols].iter().map(|s| s.to_string()).collect();
            let q = SqlQuery {
                agg,
                select_col: header[sel].clone(),
                table: "t-1".into(),
                conds: conds.into_iter().map(|(c, op, v)| Condition::new(header[c].clone(), op, v)).collect(),
            };
            (Table::new("t-1", header, rows).unwrap(), q)
        })
    })
}

fn num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

/// Row-by-row reference evaluation. Cells here are single lowercase tokens, so
/// equality is plain string equality.
fn naive(q: &SqlQuery, t: &Table) -> ExecResult {
    let col = |n: &str| t.header.iter().position(|h| h == n).unwrap();
    let mut picked = Vec::new();
    for row in &t.rows {
        let mut keep = true;
        for c in &q.conds {
            let cell = &row[col(&c.column)];
            let ok = match c.op {
                Comparator::Eq => *cell == c.value,
                op => match (num(cell), num(&c.value)) {
                    (Some(x), Some(v)) => match op {
                        Comparator::Gt => x > v,
                        Comparator::Lt => x < v,
                        Comparator::Ge => x >= v,
                        Comparator::Le => x <= v,
                        Comparator::Eq => unreachable!(),
                    },
                    _ => false,
                },
            };
            keep &= ok;
        }
        if keep {
            picked.push(row[col(&q.select_col)].clone());
        }
    }
    let xs: Vec<f64> = picked.iter().filter_map(|c| num(c)).collect();
    match q.agg {
        SqlType::Select => ExecResult::Cells(picked),
        SqlType::Count => ExecResult::Count(picked.len()),
        _ if xs.is_empty() => ExecResult::Empty,
        SqlType::Max => ExecResult::Number(xs.iter().cloned().fold(f64::MIN, f64::max)),
        SqlType::Min => ExecResult::Number(xs.iter().cloned().fold(f64::MAX, f64::min)),
        SqlType::Sum => ExecResult::Number(xs.iter().sum()),
        SqlType::Avg => ExecResult::Number(xs.iter().sum::<f64>() / xs.len() as f64),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn executor_agrees_with_row_scan((t, q) in table_and_query()) {
        let got = execute(&q, &t).unwrap();
        let want = naive(&q, &t);
        prop_assert!(got.same_as(&want), "{got:?} vs {want:?} for {}", canonicalize(&q));
    }

    #[test]
    fn canonical_text_parses_back((t, q) in table_and_query()) {
        let text = canonicalize(&q);
        let back = parse_sql(&text, &t).unwrap();
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(canonicalize(&back), text.clone());
        prop_assert_eq!(normalized_sql_length(&q), text.split_whitespace().count() + usize::from(q.agg != SqlType::Select));
    }

    #[test]
    fn decode_sequence_round_trips((_t, q) in table_and_query()) {
        let seq = decode_sequence(&q);
        let mut s = GrammarState::initial();
        for tok in &seq {
            s = s.advance(tok).unwrap();
        }
        prop_assert!(s.is_accepting());
        prop_assert_eq!(query_from_decode(&seq).unwrap(), q);
    }

    #[test]
    fn condition_order_does_not_matter((_t, q) in table_and_query()) {
        let mut r = q.clone();
        r.conds.reverse();
        prop_assert!(logical_form_match(&q, &r));
    }
}
