//! Corpus schema, JSON-lines ingestion, question normalization and the
//! copyability filter.

mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sql::{Comparator, Condition, SqlError, SqlQuery, SqlType, Table};
use crate::text::{entity_key, normalize_column, tokenize, ENTITY_JOINER};

pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed JSON: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: unknown table `{table_id}`")]
    DanglingTable { line: usize, table_id: String },
    #[error("line {line}: {what} index {index} out of range")]
    IndexOutOfRange { line: usize, what: &'static str, index: usize },
    #[error("line {line}: {source}")]
    Table { line: usize, source: SqlError },
    #[error("duplicate {what} `{id}`")]
    Duplicate { what: &'static str, id: String },
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

/// Aggregator codes of the benchmark encoding: index → type.
pub const AGG_CODES: [SqlType; 6] = [
    SqlType::Select,
    SqlType::Max,
    SqlType::Min,
    SqlType::Count,
    SqlType::Sum,
    SqlType::Avg,
];

/// Comparator codes of the benchmark encoding: index → comparator. Codes 3 and 4
/// extend the benchmark's `=, >, <` with `>=` and `<=`.
pub const COND_CODES: [Comparator; 5] = [
    Comparator::Eq,
    Comparator::Gt,
    Comparator::Lt,
    Comparator::Ge,
    Comparator::Le,
];

pub fn agg_code(t: SqlType) -> usize {
    AGG_CODES.iter().position(|a| *a == t).expect("every type has a code")
}

pub fn cond_code(c: Comparator) -> usize {
    COND_CODES.iter().position(|a| *a == c).expect("every comparator has a code")
}

/// A scalar that the benchmark files store either as a string or as a number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Text(String),
    Number(serde_json::Number),
}

impl Cell {
    pub fn as_text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Number(n) => n.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSql {
    pub sel: usize,
    pub agg: usize,
    pub conds: Vec<(usize, usize, Cell)>,
}

/// One line of an examples file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub question: String,
    pub table_id: String,
    pub sql: RawSql,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawTable {
    id: String,
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

/// A normalized question paired with its gold query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub tokens: Vec<String>,
    pub header: Vec<String>,
    pub table_id: String,
    pub gold: SqlQuery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub examples: Vec<Example>,
    pub tables: BTreeMap<String, Table>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn table(&self, id: &str) -> Option<&Table> {
        self.tables.get(id)
    }

    /// Table of an example. Resolvability is a dataset invariant.
    pub fn table_of(&self, ex: &Example) -> &Table {
        &self.tables[&ex.table_id]
    }

    pub fn get(&self, id: usize) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: usize, text: &str) -> Result<T, DataError> {
    serde_json::from_str(text).map_err(|source| DataError::Json { line, source })
}

/// Reads a tables file. Header names are normalized (lowercased, tokenized, single-spaced).
pub fn load_tables(path: &Path) -> Result<BTreeMap<String, Table>, DataError> {
    let mut tables = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let raw: RawTable = parse_line(line, &text)?;
        let table = Table::new(
            raw.id.clone(),
            raw.header.iter().map(|h| normalize_column(h)).collect(),
            raw.rows
                .iter()
                .map(|r| r.iter().map(Cell::as_text).collect())
                .collect(),
        )
        .map_err(|source| DataError::Table { line, source })?;
        if tables.insert(raw.id.clone(), table).is_some() {
            return Err(DataError::Duplicate {
                what: "table id",
                id: raw.id,
            });
        }
    }
    Ok(tables)
}

pub fn write_tables<'a>(path: &Path, tables: impl IntoIterator<Item = &'a Table>) -> Result<(), DataError> {
    let lines = tables
        .into_iter()
        .map(|t| serde_json::to_string(t).expect("tables serialize"));
    write_lines(path, lines)
}

pub fn write_raw_examples(path: &Path, examples: &[RawExample]) -> Result<(), DataError> {
    write_lines(path, examples.iter().map(|e| serde_json::to_string(e).expect("examples serialize")))
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    for line in lines {
        writeln!(file, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

/// Loads raw examples plus their tables and normalizes every example.
/// Example ids are assigned in file order.
pub fn load_dataset(examples_path: &Path, tables_path: &Path, split: Split) -> Result<Dataset, DataError> {
    let tables = load_tables(tables_path)?;
    let mut examples = Vec::new();
    for (line, text) in read_lines(examples_path)? {
        let raw: RawExample = parse_line(line, &text)?;
        let table = tables.get(&raw.table_id).ok_or_else(|| DataError::DanglingTable {
            line,
            table_id: raw.table_id.clone(),
        })?;
        check_indices(&raw, table).map_err(|(what, index)| DataError::IndexOutOfRange { line, what, index })?;
        examples.push(normalize_example(&raw, table, examples.len()));
    }
    Ok(Dataset {
        split,
        examples,
        tables,
    })
}

/// Normalizes in-memory raw examples, as [`load_dataset`] does for files.
/// Error line numbers are 1-based positions in `raws`.
pub fn dataset_from_raw(split: Split, raws: &[RawExample], tables: &BTreeMap<String, Table>) -> Result<Dataset, DataError> {
    let mut examples = Vec::with_capacity(raws.len());
    for (i, raw) in raws.iter().enumerate() {
        let line = i + 1;
        let table = tables.get(&raw.table_id).ok_or_else(|| DataError::DanglingTable {
            line,
            table_id: raw.table_id.clone(),
        })?;
        check_indices(raw, table).map_err(|(what, index)| DataError::IndexOutOfRange { line, what, index })?;
        examples.push(normalize_example(raw, table, i));
    }
    Ok(Dataset {
        split,
        examples,
        tables: tables.clone(),
    })
}

fn check_indices(raw: &RawExample, table: &Table) -> Result<(), (&'static str, usize)> {
    let width = table.header.len();
    if raw.sql.sel >= width {
        return Err(("select column", raw.sql.sel));
    }
    if raw.sql.agg >= AGG_CODES.len() {
        return Err(("aggregator", raw.sql.agg));
    }
    for (col, op, _) in &raw.sql.conds {
        if *col >= width {
            return Err(("condition column", *col));
        }
        if *op >= COND_CODES.len() {
            return Err(("comparator", *op));
        }
    }
    Ok(())
}

/// Entity phrases of a table: the tokenization of every multi-token cell,
/// grouped by first token.
struct EntityIndex {
    by_first: HashMap<String, Vec<Vec<String>>>,
}

impl EntityIndex {
    fn new(table: &Table) -> Self {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for cell in table.rows.iter().flatten() {
            let toks = tokenize(cell);
            if toks.len() >= 2 {
                let entry = by_first.entry(toks[0].clone()).or_default();
                if !entry.contains(&toks) {
                    entry.push(toks);
                }
            }
        }
        Self { by_first }
    }

    fn longest_at(&self, tokens: &[String]) -> usize {
        self.by_first
            .get(&tokens[0])
            .into_iter()
            .flatten()
            .filter(|p| p.len() <= tokens.len() && p[..] == tokens[..p.len()])
            .map(Vec::len)
            .max()
            .unwrap_or(1)
    }
}

/// Lowercases, splits punctuation and collapses table-cell mentions into
/// single `^`-joined tokens, scanning left to right and taking the longest
/// matching cell at each position.
pub fn normalize_question(question: &str, table: &Table) -> Vec<String> {
    collapse_entities(tokenize(question), &EntityIndex::new(table))
}

fn collapse_entities(tokens: Vec<String>, index: &EntityIndex) -> Vec<String> {
    let joiner = ENTITY_JOINER.to_string();
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let n = index.longest_at(&tokens[i..]);
        out.push(tokens[i..i + n].join(&joiner));
        i += n;
    }
    out
}

/// Normalizes a raw example against its table. Indices must already be in range.
pub fn normalize_example(raw: &RawExample, table: &Table, id: usize) -> Example {
    let tokens = normalize_question(&raw.question, table);
    let gold = SqlQuery {
        agg: AGG_CODES[raw.sql.agg],
        select_col: table.header[raw.sql.sel].clone(),
        table: table.id.clone(),
        conds: raw
            .sql
            .conds
            .iter()
            .map(|(c, op, v)| Condition::new(table.header[*c].clone(), COND_CODES[*op], entity_key(&v.as_text())))
            .collect(),
    };
    Example {
        id,
        tokens,
        header: table.header.clone(),
        table_id: table.id.clone(),
        gold,
    }
}

/// Inverse of [`normalize_example`] up to normalization: re-encodes an example in the raw format.
pub fn to_raw(ex: &Example, table: &Table) -> Option<RawExample> {
    let col = |name: &str| table.column_index(name);
    Some(RawExample {
        question: ex.tokens.join(" "),
        table_id: ex.table_id.clone(),
        sql: RawSql {
            sel: col(&ex.gold.select_col)?,
            agg: agg_code(ex.gold.agg),
            conds: ex
                .gold
                .conds
                .iter()
                .map(|c| Some((col(&c.column)?, cond_code(c.op), Cell::Text(c.value.clone()))))
                .collect::<Option<Vec<_>>>()?,
        },
    })
}

/// True when every gold constant appears verbatim among the question tokens.
pub fn is_copyable(ex: &Example) -> bool {
    ex.gold.conds.iter().all(|c| ex.tokens.contains(&c.value))
}

/// Drops training examples whose gold constants cannot be copied from the
/// question. Dev and test splits pass through untouched.
pub fn filter_copyable(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    if ds.split == Split::Train {
        out.examples.retain(is_copyable);
    }
    out
}

/// Token count after entity collapsing.
pub fn question_length(ex: &Example) -> usize {
    ex.tokens.len()
}

/// Writes preprocessed examples, one JSON object per line.
pub fn save_examples(path: &Path, examples: &[Example]) -> Result<(), DataError> {
    write_lines(path, examples.iter().map(|e| serde_json::to_string(e).expect("examples serialize")))
}

pub fn load_examples(path: &Path) -> Result<Vec<Example>, DataError> {
    let mut out: Vec<Example> = Vec::new();
    for (line, text) in read_lines(path)? {
        out.push(parse_line(line, &text)?);
    }
    let mut ids: Vec<usize> = out.iter().map(|e| e.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(DataError::Duplicate {
            what: "example id",
            id: w[0].to_string(),
        });
    }
    Ok(out)
}

/// Assembles a dataset from preprocessed examples, checking that every table resolves.
pub fn assemble(split: Split, examples: Vec<Example>, tables: &BTreeMap<String, Table>) -> Result<Dataset, DataError> {
    for (i, ex) in examples.iter().enumerate() {
        if !tables.contains_key(&ex.table_id) {
            return Err(DataError::DanglingTable {
                line: i + 1,
                table_id: ex.table_id.clone(),
            });
        }
    }
    Ok(Dataset {
        split,
        examples,
        tables: tables.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{canonicalize, parse_sql};

    fn table() -> Table {
        Table::new(
            "t1",
            vec!["team".into(), "score".into()],
            vec![
                vec!["New York".into(), "3".into()],
                vec!["Boston".into(), "5".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn collapses_cell_mentions() {
        let toks = normalize_question("What is New York 's score ?", &table());
        assert_eq!(toks, vec!["what", "is", "new^york", "'s", "score", "?"]);
    }

    #[test]
    fn no_matches_is_plain_split() {
        let toks = normalize_question("Which team won?", &table());
        assert_eq!(toks, vec!["which", "team", "won", "?"]);
    }

    #[test]
    fn overlapping_cells_take_leftmost_longest() {
        let t = Table::new("t", vec!["x".into()], vec![vec!["a b".into()], vec!["b c".into()]]).unwrap();
        assert_eq!(normalize_question("a b c", &t), vec!["a^b", "c"]);
        let t = Table::new("t", vec!["x".into()], vec![vec!["a b".into()], vec!["a b c".into()]]).unwrap();
        assert_eq!(normalize_question("a b c d", &t), vec!["a^b^c", "d"]);
    }

    #[test]
    fn normalization_is_idempotent() {
        let t = table();
        let once = normalize_question("What is New York's score, in 1.5 games?", &t);
        let twice = normalize_question(&once.join(" "), &t);
        assert_eq!(once, twice);
    }

    #[test]
    fn question_length_counts_collapsed_tokens() {
        let t = Table::new("t", vec!["x".into()], vec![vec!["one two three four five".into()]]).unwrap();
        let raw = RawExample {
            question: "what is one two three four five".into(),
            table_id: "t".into(),
            sql: RawSql {
                sel: 0,
                agg: 0,
                conds: vec![],
            },
        };
        let ex = normalize_example(&raw, &t, 0);
        assert_eq!(question_length(&ex), 3);
    }

    fn example(values: &[&str], tokens: &[&str]) -> Example {
        Example {
            id: 0,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            header: vec!["a".into()],
            table_id: "t".into(),
            gold: SqlQuery {
                agg: SqlType::Select,
                select_col: "a".into(),
                table: "t".into(),
                conds: values.iter().map(|v| Condition::new("a", Comparator::Eq, *v)).collect(),
            },
        }
    }

    #[test]
    fn filter_rules() {
        let keep = example(&["goorambat"], &["wins", "goorambat"]);
        let drop = example(&["goorambat"], &["wins"]);
        let empty = example(&[], &["wins"]);
        let mut ds = Dataset {
            split: Split::Train,
            examples: vec![keep.clone(), drop.clone(), empty.clone()],
            tables: BTreeMap::new(),
        };
        let f = filter_copyable(&ds);
        assert_eq!(f.examples, vec![keep, empty]);
        assert_eq!(filter_copyable(&f), f);
        ds.split = Split::Dev;
        assert_eq!(filter_copyable(&ds), ds);
    }

    #[test]
    fn gold_round_trips_through_canonical_text() {
        let t = table();
        let raw = RawExample {
            question: "how many team have score greater than 3 or team is New York".into(),
            table_id: "t1".into(),
            sql: RawSql {
                sel: 0,
                agg: 3,
                conds: vec![(1, 1, Cell::Number(3.into())), (0, 0, Cell::Text("New York".into()))],
            },
        };
        let ex = normalize_example(&raw, &t, 0);
        assert_eq!(ex.gold.conds[1].value, "new^york");
        assert!(is_copyable(&ex));
        assert_eq!(parse_sql(&canonicalize(&ex.gold), &t).unwrap(), ex.gold);
        let back = to_raw(&ex, &t).unwrap();
        assert_eq!(normalize_example(&back, &t, 0), ex);
    }

    #[test]
    fn code_tables_are_bijective() {
        for t in SqlType::ALL {
            assert_eq!(AGG_CODES[agg_code(t)], t);
        }
        for c in Comparator::ALL {
            assert_eq!(COND_CODES[cond_code(c)], c);
        }
    }
}
