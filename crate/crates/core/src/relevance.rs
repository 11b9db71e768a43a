//! Relevance-driven pseudo-task construction.
//!
//! Two examples are relevant to each other only if their questions are
//! predicted to have the same query type; among those, the score is
//! `1 − |len(a) − len(b)|` over entity-collapsed question lengths. Each
//! training example's top-K relevant neighbours form the support set of the
//! pseudo-task built around it.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{question_length, Dataset, Example};
use crate::sql::SqlType;

const N_TYPES: usize = SqlType::ALL.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 regularization strength.
    pub reg: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.05,
            reg: 1e-4,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM over bag-of-words counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeClassifier {
    vocab: BTreeMap<String, usize>,
    /// One weight row per [`SqlType`], in `SqlType::ALL` order.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    /// Classes seen during training; unseen classes are never predicted.
    present: Vec<bool>,
}

impl TypeClassifier {
    fn features(&self, tokens: &[String]) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.vocab.get(t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    /// Per-class decision values `w_c·x + b_c`.
    pub fn scores(&self, tokens: &[String]) -> [f64; N_TYPES] {
        let x = self.features(tokens);
        let mut out = [0.0; N_TYPES];
        for (c, s) in out.iter_mut().enumerate() {
            *s = self.bias[c] + x.iter().map(|(i, v)| self.weights[c][*i] * v).sum::<f64>();
        }
        out
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }
}

/// Trains the type classifier with per-example hinge-loss subgradient steps.
///
/// Labels come from the gold query type. Deterministic given `cfg.seed`.
pub fn train_type_classifier(train: &Dataset, cfg: &ClassifierConfig) -> TypeClassifier {
    let mut vocab = BTreeMap::new();
    for ex in &train.examples {
        for t in &ex.tokens {
            let next = vocab.len();
            vocab.entry(t.clone()).or_insert(next);
        }
    }
    // Re-index in sorted order so the layout does not depend on example order.
    for (i, v) in vocab.values_mut().enumerate() {
        *v = i;
    }
    let mut present = vec![false; N_TYPES];
    for ex in &train.examples {
        present[ex.gold.agg.index()] = true;
    }
    for (t, p) in SqlType::ALL.iter().zip(&present) {
        if !p {
            log::warn!("no training examples of type {t:?}; it will never be predicted");
        }
    }
    let mut clf = TypeClassifier {
        weights: vec![vec![0.0; vocab.len()]; N_TYPES],
        bias: vec![0.0; N_TYPES],
        vocab,
        present,
    };
    let data: Vec<(Vec<(usize, f64)>, usize)> = train
        .examples
        .iter()
        .map(|ex| (clf.features(&ex.tokens), ex.gold.agg.index()))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let (x, label) = &data[k];
            for c in 0..N_TYPES {
                let y = if *label == c { 1.0 } else { -1.0 };
                let w = &mut clf.weights[c];
                let margin = y * (clf.bias[c] + x.iter().map(|(i, v)| w[*i] * v).sum::<f64>());
                // L2 shrinkage is applied lazily, to active features only.
                let shrink = 1.0 - cfg.learning_rate * cfg.reg;
                for (i, _) in x {
                    w[*i] *= shrink;
                }
                if margin < 1.0 {
                    for (i, v) in x {
                        w[*i] += cfg.learning_rate * y * v;
                    }
                    clf.bias[c] += cfg.learning_rate * y;
                }
            }
        }
    }
    clf
}

/// Arg-max class; ties go to the lowest type index. Out-of-vocabulary tokens are ignored.
pub fn predict_sql_type(clf: &TypeClassifier, tokens: &[String]) -> SqlType {
    let scores = clf.scores(tokens);
    let mut best: Option<usize> = None;
    for c in 0..N_TYPES {
        if clf.present[c] && best.is_none_or(|b| scores[c] > scores[b]) {
            best = Some(c);
        }
    }
    SqlType::from_index(best.unwrap_or(SqlType::Select.index())).expect("valid index")
}

/// `None` when the predicted types differ, else `1 − |Δ question length|`.
pub fn relevance_score(clf: &TypeClassifier, a: &Example, b: &Example) -> Option<f64> {
    if predict_sql_type(clf, &a.tokens) != predict_sql_type(clf, &b.tokens) {
        return None;
    }
    Some(1.0 - (question_length(a) as f64 - question_length(b) as f64).abs())
}

/// Precomputed (type, length) for every training example, bucketed by type
/// and sorted by `(length, id)` so retrieval scans outward from the query length.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    buckets: HashMap<SqlType, Vec<(usize, usize)>>,
}

impl RetrievalIndex {
    /// With `gold_types`, training examples are grouped by their gold type
    /// instead of the predicted one.
    pub fn build(train: &Dataset, clf: &TypeClassifier, gold_types: bool) -> Self {
        let mut buckets: HashMap<SqlType, Vec<(usize, usize)>> = HashMap::new();
        for ex in &train.examples {
            let t = if gold_types {
                ex.gold.agg
            } else {
                predict_sql_type(clf, &ex.tokens)
            };
            buckets.entry(t).or_default().push((question_length(ex), ex.id));
        }
        for b in buckets.values_mut() {
            b.sort_unstable();
        }
        Self { buckets }
    }

    /// The `k` most relevant candidates of type `ty` for a question of length
    /// `len`, excluding `exclude`. Ties on score go to the smaller id.
    pub fn top_k(&self, ty: SqlType, len: usize, exclude: Option<usize>, k: usize) -> Vec<usize> {
        let Some(bucket) = self.buckets.get(&ty) else {
            return Vec::new();
        };
        let with_len = |l: usize| {
            let lo = bucket.partition_point(|(bl, _)| *bl < l);
            let hi = bucket.partition_point(|(bl, _)| *bl <= l);
            &bucket[lo..hi]
        };
        let max_len = bucket.last().map_or(0, |(l, _)| *l);
        let mut out = Vec::with_capacity(k);
        let mut d = 0;
        while out.len() < k && (len >= d || len + d <= max_len) {
            let mut ring: Vec<usize> = Vec::new();
            if len >= d {
                ring.extend(with_len(len - d).iter().map(|(_, id)| *id));
            }
            if d > 0 {
                ring.extend(with_len(len + d).iter().map(|(_, id)| *id));
            }
            ring.sort_unstable();
            out.extend(ring.into_iter().filter(|id| Some(*id) != exclude).take(k - out.len()));
            d += 1;
        }
        out
    }
}

/// Support set for training example `j`: its `k` most relevant other training examples.
pub fn top_k_support(train: &Dataset, j: usize, k: usize, clf: &TypeClassifier) -> Vec<usize> {
    let index = RetrievalIndex::build(train, clf, false);
    let ex = train.get(j).expect("example id in training set");
    index.top_k(predict_sql_type(clf, &ex.tokens), question_length(ex), Some(j), k)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoTask {
    pub test_id: usize,
    pub support_ids: Vec<usize>,
}

/// One pseudo-task per training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSet {
    pub tasks: Vec<PseudoTask>,
}

impl TaskSet {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        for t in &self.tasks {
            writeln!(f, "{}", serde_json::to_string(t).expect("tasks serialize"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let tasks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<Vec<PseudoTask>, String>>()?;
        Ok(Self { tasks })
    }
}

/// Builds every pseudo-task with a single precomputed retrieval index.
pub fn build_pseudo_tasks(train: &Dataset, k: usize, clf: &TypeClassifier, gold_types: bool) -> TaskSet {
    let index = RetrievalIndex::build(train, clf, gold_types);
    let tasks = train
        .examples
        .iter()
        .map(|ex| {
            let ty = if gold_types {
                ex.gold.agg
            } else {
                predict_sql_type(clf, &ex.tokens)
            };
            PseudoTask {
                test_id: ex.id,
                support_ids: index.top_k(ty, question_length(ex), Some(ex.id), k),
            }
        })
        .collect();
    TaskSet { tasks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::sql::SqlQuery;

    fn ex(id: usize, text: &str, agg: SqlType) -> Example {
        Example {
            id,
            tokens: text.split_whitespace().map(str::to_string).collect(),
            header: vec!["c".into()],
            table_id: "t".into(),
            gold: SqlQuery {
                agg,
                select_col: "c".into(),
                table: "t".into(),
                conds: vec![],
            },
        }
    }

    fn ds(examples: Vec<Example>) -> Dataset {
        Dataset {
            split: Split::Train,
            examples,
            tables: BTreeMap::new(),
        }
    }

    fn toy() -> Dataset {
        ds(vec![
            ex(0, "how many c are there", SqlType::Count),
            ex(1, "how many c are there when x is y", SqlType::Count),
            ex(2, "what is the lowest c", SqlType::Min),
            ex(3, "what is the lowest c when x is y", SqlType::Min),
            ex(4, "which c has x is y", SqlType::Select),
            ex(5, "how many c", SqlType::Count),
        ])
    }

    #[test]
    fn separable_corpus_is_learned() {
        let d = toy();
        let clf = train_type_classifier(&d, &ClassifierConfig::default());
        for e in &d.examples {
            assert_eq!(predict_sql_type(&clf, &e.tokens), e.gold.agg);
        }
        let probe: Vec<String> = "how many zz are there".split(' ').map(str::to_string).collect();
        assert_eq!(predict_sql_type(&clf, &probe), SqlType::Count);
    }

    #[test]
    fn single_class_always_predicted() {
        let d = ds(vec![ex(0, "a b", SqlType::Sum), ex(1, "c d e", SqlType::Sum)]);
        let clf = train_type_classifier(&d, &ClassifierConfig::default());
        let probe = vec!["zzz".to_string(), "a".to_string()];
        assert_eq!(predict_sql_type(&clf, &probe), SqlType::Sum);
    }

    #[test]
    fn oov_question_falls_back_to_bias() {
        let clf = train_type_classifier(&toy(), &ClassifierConfig::default());
        let probe = vec!["qqq".to_string()];
        let scores = clf.scores(&probe);
        let expected = (0..N_TYPES)
            .filter(|&c| clf.present[c])
            .fold(None::<usize>, |b, c| match b {
                Some(b) if clf.bias[b] >= clf.bias[c] => Some(b),
                _ => Some(c),
            })
            .unwrap();
        assert_eq!(scores[expected], clf.bias[expected]);
        assert_eq!(predict_sql_type(&clf, &probe).index(), expected);
    }

    #[test]
    fn duplicates_count_as_a_bag() {
        let clf = train_type_classifier(&toy(), &ClassifierConfig::default());
        let once: Vec<String> = vec!["lowest".into()];
        let twice: Vec<String> = vec!["lowest".into(), "lowest".into()];
        let (s1, s2) = (clf.scores(&once), clf.scores(&twice));
        let c = SqlType::Min.index();
        let w = s1[c] - clf.bias[c];
        assert!(w != 0.0);
        assert!((s2[c] - clf.bias[c] - 2.0 * w).abs() < 1e-12);
    }

    #[test]
    fn scores() {
        let d = toy();
        let clf = train_type_classifier(&d, &ClassifierConfig::default());
        let a = ex(10, "how many a b c d e f", SqlType::Count);
        let b = ex(11, "how many a b c d e f g h", SqlType::Count);
        assert_eq!(relevance_score(&clf, &a, &b), Some(-1.0));
        assert_eq!(relevance_score(&clf, &a, &a), Some(1.0));
        assert_eq!(relevance_score(&clf, &a, &d.examples[2]), None);
    }

    #[test]
    fn support_excludes_self_and_truncates() {
        let d = toy();
        let clf = train_type_classifier(&d, &ClassifierConfig::default());
        assert_eq!(top_k_support(&d, 0, 2, &clf), vec![5, 1]);
        // Only one other Min example exists.
        assert_eq!(top_k_support(&d, 2, 5, &clf), vec![3]);
        assert!(top_k_support(&d, 4, 2, &clf).is_empty());
        let tasks = build_pseudo_tasks(&d, 2, &clf, false);
        assert_eq!(tasks.len(), d.len());
        assert!(tasks.tasks.iter().all(|t| !t.support_ids.contains(&t.test_id)));
    }

    #[test]
    fn exact_match_ranked_first() {
        let d = ds(vec![
            ex(0, "how many a", SqlType::Count),
            ex(7, "how many a b c", SqlType::Count),
            ex(3, "how many a b", SqlType::Count),
            ex(9, "how many a b", SqlType::Count),
        ]);
        let clf = train_type_classifier(&d, &ClassifierConfig::default());
        let index = RetrievalIndex::build(&d, &clf, true);
        // Length 4: ids 3 and 9 exact; then 0 and 7 at distance 1, smaller id first.
        assert_eq!(index.top_k(SqlType::Count, 4, None, 4), vec![3, 9, 0, 7]);
        assert_eq!(index.top_k(SqlType::Count, 4, Some(3), 2), vec![9, 0]);
    }
}
