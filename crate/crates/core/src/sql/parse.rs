use super::{Comparator, Condition, SqlError, SqlQuery, SqlType, Table};

fn lex(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if c == '(' || c == ')' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

struct Parser<'a> {
    tokens: Vec<String>,
    pos: usize,
    table: &'a Table,
    /// Header names split into words, for greedy multi-word matching.
    header_words: Vec<Vec<String>>,
}

fn is_keyword(tok: &str, kw: &str) -> bool {
    tok.eq_ignore_ascii_case(kw)
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> SqlError {
        SqlError::Parse {
            position: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        match self.peek() {
            Some(t) if is_keyword(t, kw) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected {kw}, found `{t}`"))),
            None => Err(self.error(format!("expected {kw}, found end of input"))),
        }
    }

    /// Longest header name matching the upcoming tokens; ties go to the earlier column.
    fn column(&mut self) -> Result<String, SqlError> {
        let rest = &self.tokens[self.pos..];
        let mut best: Option<(usize, usize)> = None;
        for (ci, words) in self.header_words.iter().enumerate() {
            let n = words.len();
            if n == 0 || n > rest.len() || best.is_some_and(|(_, len)| len >= n) {
                continue;
            }
            if words.iter().zip(rest).all(|(w, t)| w.eq_ignore_ascii_case(t)) {
                best = Some((ci, n));
            }
        }
        match best {
            Some((ci, n)) => {
                self.pos += n;
                Ok(self.table.header[ci].clone())
            }
            None => {
                if rest.is_empty() {
                    return Err(self.error("expected a column name, found end of input"));
                }
                let name: Vec<&str> = rest
                    .iter()
                    .map(String::as_str)
                    .take_while(|t| {
                        !(*t == ")"
                            || Comparator::from_symbol(t).is_some()
                            || ["FROM", "WHERE", "AND"].iter().any(|k| is_keyword(t, k)))
                    })
                    .collect();
                Err(SqlError::UnknownColumn(name.join(" ")))
            }
        }
    }

    fn query(&mut self) -> Result<SqlQuery, SqlError> {
        self.expect_keyword("SELECT")?;
        let agg = match (self.peek().and_then(SqlType::from_keyword), self.tokens.get(self.pos + 1)) {
            (Some(t), Some(paren)) if paren == "(" => {
                self.pos += 2;
                t
            }
            _ => SqlType::Select,
        };
        let select_col = self.column()?;
        if agg != SqlType::Select {
            self.expect_keyword(")")?;
        }
        self.expect_keyword("FROM")?;
        let table = match self.peek() {
            Some(t) => t.to_string(),
            None => return Err(self.error("expected a table name, found end of input")),
        };
        if table != self.table.id {
            return Err(SqlError::WrongTable {
                query: table,
                table: self.table.id.clone(),
            });
        }
        self.pos += 1;

        let mut conds = Vec::new();
        if self.peek().is_some() {
            self.expect_keyword("WHERE")?;
            loop {
                conds.push(self.condition()?);
                match self.peek() {
                    None => break,
                    Some(t) if is_keyword(t, "AND") => self.pos += 1,
                    Some(t) => return Err(self.error(format!("expected AND or end, found `{t}`"))),
                }
            }
        }
        Ok(SqlQuery {
            agg,
            select_col,
            table,
            conds,
        })
    }

    fn condition(&mut self) -> Result<Condition, SqlError> {
        let column = self.column()?;
        let op = match self.peek().and_then(Comparator::from_symbol) {
            Some(op) => op,
            None => return Err(self.error("expected a comparator")),
        };
        self.pos += 1;
        let start = self.pos;
        // the first token always belongs to the constant, even a literal "and"
        if self.peek().is_none() {
            return Err(self.error("expected a constant"));
        }
        self.pos += 1;
        while self.peek().is_some_and(|t| !is_keyword(t, "AND")) {
            self.pos += 1;
        }
        let value = self.tokens[start..self.pos].join(" ");
        Ok(Condition { column, op, value })
    }
}

/// Parses canonical (or hand-written) query text against `table`.
///
/// Multi-word column names are matched greedily against the header. A
/// constant extends up to the next `AND` or the end of input.
pub fn parse_sql(text: &str, table: &Table) -> Result<SqlQuery, SqlError> {
    let mut p = Parser {
        tokens: lex(text),
        pos: 0,
        table,
        header_words: table
            .header
            .iter()
            .map(|h| h.split_whitespace().map(str::to_string).collect())
            .collect(),
    };
    p.query()
}

#[cfg(test)]
mod tests {
    use super::super::{canonicalize, Comparator, SqlType};
    use super::*;

    fn footy() -> Table {
        Table::new(
            "2-17982145-1",
            vec!["benalla dfl".into(), "wins".into(), "losses".into(), "draws".into()],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn appendix_min_query() {
        let q = parse_sql(
            "SELECT MIN(losses) FROM 2-17982145-1 WHERE benalla dfl = goorambat AND wins < 13",
            &footy(),
        )
        .unwrap();
        assert_eq!(q.agg, SqlType::Min);
        assert_eq!(q.select_col, "losses");
        assert_eq!(
            q.conds,
            vec![
                Condition::new("benalla dfl", Comparator::Eq, "goorambat"),
                Condition::new("wins", Comparator::Lt, "13"),
            ]
        );
        assert_eq!(parse_sql(&canonicalize(&q), &footy()).unwrap(), q);
    }

    #[test]
    fn appendix_plain_select() {
        let t = Table::new("1-26223231-1", vec!["poles".into(), "wins".into()], vec![]).unwrap();
        let q = parse_sql("SELECT poles FROM 1-26223231-1 WHERE wins = 2", &t).unwrap();
        assert_eq!(q.agg, SqlType::Select);
        assert_eq!(q.conds.len(), 1);
    }

    #[test]
    fn constant_spelled_like_and() {
        let q = parse_sql("SELECT wins FROM 2-17982145-1 WHERE losses = and AND draws = 1", &footy()).unwrap();
        assert_eq!(q.conds[0].value, "and");
        assert_eq!(q.conds.len(), 2);
    }

    #[test]
    fn empty_where() {
        let t = Table::new("t", vec!["col1".into()], vec![]).unwrap();
        let q = parse_sql("SELECT col1 FROM t", &t).unwrap();
        assert_eq!(q.agg, SqlType::Select);
        assert!(q.conds.is_empty());
    }

    #[test]
    fn greedy_prefers_longest_column() {
        let t = Table::new("t", vec!["points".into(), "points against".into()], vec![]).unwrap();
        let q = parse_sql("SELECT points against FROM t WHERE points > 3", &t).unwrap();
        assert_eq!(q.select_col, "points against");
        assert_eq!(q.conds[0].column, "points");
    }

    #[test]
    fn unknown_column_is_named() {
        let err = parse_sql("SELECT MAX(goals scored) FROM 2-17982145-1", &footy()).unwrap_err();
        assert_eq!(err, SqlError::UnknownColumn("goals scored".into()));
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_sql("SELECT wins 2-17982145-1", &footy()).unwrap_err();
        assert!(matches!(err, SqlError::Parse { position: 2, .. }));
        let err = parse_sql("SELECT wins FROM 2-17982145-1 WHERE wins 3", &footy()).unwrap_err();
        assert!(matches!(err, SqlError::Parse { position: 6, .. }));
    }

    #[test]
    fn column_named_like_aggregator() {
        let t = Table::new("t", vec!["count".into(), "x".into()], vec![]).unwrap();
        let q = parse_sql("SELECT count FROM t", &t).unwrap();
        assert_eq!((q.agg, q.select_col.as_str()), (SqlType::Select, "count"));
        let q = parse_sql("SELECT COUNT(count) FROM t", &t).unwrap();
        assert_eq!((q.agg, q.select_col.as_str()), (SqlType::Count, "count"));
    }

    #[test]
    fn unicode_comparators() {
        let q = parse_sql("SELECT wins FROM 2-17982145-1 WHERE losses ≥ 2 AND draws ≤ 1", &footy()).unwrap();
        assert_eq!(q.conds[0].op, Comparator::Ge);
        assert_eq!(q.conds[1].op, Comparator::Le);
    }
}
