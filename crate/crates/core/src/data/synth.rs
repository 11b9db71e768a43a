//! Synthetic question/SQL corpus in the benchmark's file formats.
//!
//! Questions come from per-type templates whose wording identifies the query
//! type, so a bag-of-words classifier can separate the six types. Every
//! condition constant is written into the question, so all examples survive
//! the copyability filter.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{agg_code, cond_code, dataset_from_raw, Cell, DataError, Dataset, RawExample, RawSql, Split};
use crate::sql::{Comparator, SqlType, Table};

const TEXT_COLUMNS: &[&str] = &[
    "team", "city", "player", "venue", "country", "coach", "school", "position", "opponent", "club", "driver",
    "network", "district", "captain", "label",
];

const NUMERIC_COLUMNS: &[&str] = &[
    "wins", "losses", "points", "year", "goals", "rank", "games", "draws", "attendance", "age", "laps", "seats",
    "votes", "tries", "round",
];

const SINGLE_VALUES: &[&str] = &[
    "Boston", "Denver", "Phoenix", "Toronto", "Dallas", "Austin", "Leeds", "Oslo", "Lima", "Cairo", "Dublin", "Perth",
    "Madrid", "Vienna", "Geneva", "Porto", "Ajax", "Celtic", "Rangers", "Hawks", "Bulls", "Lakers", "Jets", "Kings",
    "Smith", "Jones", "Garcia", "Chen", "Nguyen", "Kowalski", "Murphy", "Rossi", "Tanaka", "Silva", "Mueller",
    "Dubois", "Forward", "Guard", "Center", "Keeper", "Striker", "Winger", "NBC", "CBS", "ESPN", "Fox", "Sky", "BBC",
    "Goorambat", "Benalla", "Tatong", "Longwood", "Swanpool", "Euroa", "Violet", "Maple", "Cedar", "Willow", "Aspen",
    "Birch",
];

const MULTI_VALUES: &[&str] = &[
    "New York", "San Jose", "Los Angeles", "Red Sox", "Blue Jays", "Golden State", "North Melbourne", "Port Adelaide",
    "St Kilda", "Real Madrid", "Inter Milan", "Santa Fe", "Las Vegas", "Hong Kong", "Cape Town", "El Paso",
];

fn default_templates() -> BTreeMap<SqlType, Vec<String>> {
    let t = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    BTreeMap::from([
        (
            SqlType::Count,
            t(&[
                "how many {sel} are there {conds}",
                "what is the number of {sel} {conds}",
                "count the {sel} {conds}",
            ]),
        ),
        (
            SqlType::Min,
            t(&[
                "what is the lowest {sel} {conds}",
                "what is the smallest {sel} {conds}",
                "give the minimum {sel} {conds}",
            ]),
        ),
        (
            SqlType::Max,
            t(&[
                "what is the highest {sel} {conds}",
                "what is the largest {sel} {conds}",
                "give the maximum {sel} {conds}",
            ]),
        ),
        (
            SqlType::Sum,
            t(&[
                "what is the total {sel} {conds}",
                "what is the sum of {sel} {conds}",
                "add up the {sel} {conds}",
            ]),
        ),
        (
            SqlType::Avg,
            t(&[
                "what is the average {sel} {conds}",
                "what is the mean {sel} {conds}",
                "give the typical average {sel} {conds}",
            ]),
        ),
        (
            SqlType::Select,
            t(&["which {sel} has {conds}", "what is the {sel} {conds}", "name the {sel} {conds}"]),
        ),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_tables: usize,
    pub rows_per_table: usize,
    pub columns_per_table: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Maximum number of WHERE conditions per query.
    pub max_conditions: usize,
    /// Number of distinct text cell values to draw from (capped by the built-in pools).
    pub text_vocab: usize,
    /// Numeric cells are drawn from `0..numeric_range`.
    pub numeric_range: u32,
    pub templates: BTreeMap<SqlType, Vec<String>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tables: 60,
            rows_per_table: 10,
            columns_per_table: 5,
            n_train: 600,
            n_dev: 100,
            n_test: 100,
            max_conditions: 2,
            text_vocab: 76,
            numeric_range: 100,
            templates: default_templates(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        for t in SqlType::ALL {
            let ok = self.templates.get(&t).is_some_and(|v| !v.is_empty());
            if !ok {
                return Err(DataError::Config(format!("no template for {t:?}")));
            }
        }
        if self.n_tables < 3 {
            return Err(DataError::Config("need at least 3 tables (one per split)".into()));
        }
        if self.columns_per_table < 4 || self.columns_per_table > TEXT_COLUMNS.len() {
            return Err(DataError::Config("columns_per_table must be in 4..=15".into()));
        }
        if self.rows_per_table == 0 || self.numeric_range < 2 || self.text_vocab < 2 {
            return Err(DataError::Config("rows_per_table, numeric_range and text_vocab too small".into()));
        }
        if self.n_train == 0 {
            return Err(DataError::Config("n_train must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub tables: Vec<Table>,
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
    pub test: Vec<RawExample>,
}

impl SyntheticCorpus {
    pub fn table_map(&self) -> BTreeMap<String, Table> {
        self.tables.iter().map(|t| (t.id.clone(), t.clone())).collect()
    }

    /// Normalized train, dev and test datasets, without going through files.
    pub fn datasets(&self) -> Result<[Dataset; 3], DataError> {
        let tables = self.table_map();
        Ok([
            dataset_from_raw(Split::Train, &self.train, &tables)?,
            dataset_from_raw(Split::Dev, &self.dev, &tables)?,
            dataset_from_raw(Split::Test, &self.test, &tables)?,
        ])
    }
}

struct TableSpec {
    table: Table,
    numeric: Vec<bool>,
}

fn value_pool(n: usize) -> Vec<&'static str> {
    // Interleave so that small vocabularies still contain multi-word entities.
    let mut pool = Vec::new();
    let (mut s, mut m) = (SINGLE_VALUES.iter(), MULTI_VALUES.iter());
    while pool.len() < n {
        let before = pool.len();
        for _ in 0..4 {
            if let Some(v) = s.next() {
                pool.push(*v);
            }
        }
        if let Some(v) = m.next() {
            pool.push(*v);
        }
        if pool.len() == before {
            break;
        }
    }
    pool.truncate(n);
    pool
}

fn make_table(cfg: &SynthConfig, index: usize, pool: &[&str], rng: &mut ChaCha8Rng) -> TableSpec {
    let n_numeric = cfg.columns_per_table / 2;
    let n_text = cfg.columns_per_table - n_numeric;
    let mut cols: Vec<(String, bool)> = TEXT_COLUMNS
        .choose_multiple(rng, n_text)
        .map(|c| (c.to_string(), false))
        .chain(NUMERIC_COLUMNS.choose_multiple(rng, n_numeric).map(|c| (c.to_string(), true)))
        .collect();
    cols.shuffle(rng);
    let rows = (0..cfg.rows_per_table)
        .map(|_| {
            cols.iter()
                .map(|(_, numeric)| {
                    if *numeric {
                        rng.random_range(0..cfg.numeric_range).to_string()
                    } else {
                        pool.choose(rng).expect("nonempty pool").to_string()
                    }
                })
                .collect()
        })
        .collect();
    let id = format!("{}-{}-{}", 1 + index % 2, 10_000_000 + rng.random_range(0..90_000_000u32), index);
    TableSpec {
        table: Table {
            id,
            header: cols.iter().map(|(c, _)| c.clone()).collect(),
            rows,
        },
        numeric: cols.iter().map(|(_, n)| *n).collect(),
    }
}

fn phrase(op: Comparator) -> &'static str {
    match op {
        Comparator::Eq => "is",
        Comparator::Gt => "greater than",
        Comparator::Ge => "at least",
        Comparator::Lt => "less than",
        Comparator::Le => "at most",
    }
}

fn make_example(cfg: &SynthConfig, spec: &TableSpec, rng: &mut ChaCha8Rng) -> RawExample {
    let table = &spec.table;
    let width = table.header.len();
    let agg = *SqlType::ALL.choose(rng).expect("six types");
    let numeric_cols: Vec<usize> = (0..width).filter(|&c| spec.numeric[c]).collect();
    let sel = match agg {
        SqlType::Min | SqlType::Max | SqlType::Sum | SqlType::Avg => *numeric_cols.choose(rng).expect("numeric column"),
        _ => rng.random_range(0..width),
    };
    let n_conds = rng.random_range(0..=cfg.max_conditions.min(width - 1));
    let mut cond_cols: Vec<usize> = (0..width).filter(|&c| c != sel).collect();
    cond_cols.shuffle(rng);
    cond_cols.truncate(n_conds);

    let anchor = &table.rows[rng.random_range(0..table.rows.len())];
    let mut conds = Vec::new();
    let mut parts = Vec::new();
    for &c in &cond_cols {
        let (op, value) = if spec.numeric[c] {
            let op = *[Comparator::Eq, Comparator::Gt, Comparator::Lt, Comparator::Ge, Comparator::Le]
                .choose(rng)
                .expect("comparators");
            (op, anchor[c].clone())
        } else {
            (Comparator::Eq, anchor[c].clone())
        };
        parts.push(format!("{} {} {}", table.header[c], phrase(op), value));
        conds.push((c, cond_code(op), Cell::Text(value)));
    }
    let cond_text = if parts.is_empty() {
        String::new()
    } else {
        let intro = *["when", "where", "with"].choose(rng).expect("intros");
        format!("{intro} {}", parts.join(" and "))
    };
    let template = cfg.templates[&agg].choose(rng).expect("validated nonempty");
    let mut question = template
        .replace("{sel}", &table.header[sel])
        .replace("{conds}", &cond_text)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    question.push_str(" ?");
    RawExample {
        question,
        table_id: table.id.clone(),
        sql: RawSql {
            sel,
            agg: agg_code(agg),
            conds,
        },
    }
}

/// Generates tables and train/dev/test examples. Each split draws from its
/// own disjoint set of tables. Deterministic given `cfg.seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = value_pool(cfg.text_vocab);
    let specs: Vec<TableSpec> = (0..cfg.n_tables).map(|i| make_table(cfg, i, &pool, &mut rng)).collect();

    let n_eval = (cfg.n_tables * 3 / 20).max(1);
    let n_train_tables = cfg.n_tables - 2 * n_eval;
    let (train_t, rest) = specs.split_at(n_train_tables);
    let (dev_t, test_t) = rest.split_at(n_eval);

    let mut draw = |tables: &[TableSpec], n: usize| -> Vec<RawExample> {
        (0..n)
            .map(|_| {
                let spec = tables.choose(&mut rng).expect("nonempty split");
                make_example(cfg, spec, &mut rng)
            })
            .collect()
    };
    let train = draw(train_t, cfg.n_train);
    let dev = draw(dev_t, cfg.n_dev);
    let test = draw(test_t, cfg.n_test);
    Ok(SyntheticCorpus {
        tables: specs.into_iter().map(|s| s.table).collect(),
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 50,
            n_dev: 10,
            n_test: 10,
            n_tables: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic(&small()).unwrap(), generate_synthetic(&small()).unwrap());
        let other = SynthConfig { seed: 9, ..small() };
        assert_ne!(generate_synthetic(&small()).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn missing_template_rejected() {
        let mut cfg = small();
        cfg.templates.insert(SqlType::Avg, vec![]);
        assert!(matches!(generate_synthetic(&cfg), Err(DataError::Config(_))));
        cfg.templates.remove(&SqlType::Avg);
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn sizes_and_tables_valid() {
        let c = generate_synthetic(&small()).unwrap();
        assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (50, 10, 10));
        for t in &c.tables {
            t.check().unwrap();
        }
    }

    #[test]
    fn pool_has_entities() {
        let p = value_pool(10);
        assert_eq!(p.len(), 10);
        assert!(p.iter().any(|v| v.contains(' ')));
        assert_eq!(value_pool(1000).len(), SINGLE_VALUES.len() + MULTI_VALUES.len());
    }
}
