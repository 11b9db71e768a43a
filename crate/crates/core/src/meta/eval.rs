use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use ptmaml_autodiff::ParamSet;

use super::{inner_update, par_map, MetaError};
use crate::data::{question_length, Dataset, Example};
use crate::learner::{Encoded, Learner, LearnerError};
use crate::relevance::{predict_sql_type, RetrievalIndex, TypeClassifier};
use crate::sql::{execution_match, logical_form_match, normalized_sql_length, SqlQuery};

/// Accuracy summary. `per_length` maps normalized gold SQL length to `(count, acc_lf)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_lf: f64,
    pub acc_ex: f64,
    pub per_length: BTreeMap<usize, (usize, f64)>,
}

impl Metrics {
    pub fn count(&self) -> usize {
        self.per_length.values().map(|(n, _)| n).sum()
    }
}

/// What test-time adaptation needs: the training split, its encodings and a retrieval index.
pub struct Adapter<'a> {
    pub train: &'a Dataset,
    /// Encodings of `train.examples`, same order.
    pub train_enc: &'a [Encoded],
    pub clf: &'a TypeClassifier,
    pub index: RetrievalIndex,
    pub k: usize,
    pub alpha: f64,
    pub steps: usize,
    positions: BTreeMap<usize, usize>,
}

impl<'a> Adapter<'a> {
    pub fn new(
        train: &'a Dataset,
        train_enc: &'a [Encoded],
        clf: &'a TypeClassifier,
        k: usize,
        alpha: f64,
        steps: usize,
    ) -> Self {
        Self {
            index: RetrievalIndex::build(train, clf, false),
            positions: train.examples.iter().enumerate().map(|(i, e)| (e.id, i)).collect(),
            train,
            train_enc,
            clf,
            k,
            alpha,
            steps,
        }
    }

    /// Encoded support set for a query example.
    pub fn support(&self, ex: &Example) -> Vec<&'a Encoded> {
        if self.k == 0 {
            return Vec::new();
        }
        let ty = predict_sql_type(self.clf, &ex.tokens);
        self.index
            .top_k(ty, question_length(ex), None, self.k)
            .into_iter()
            .map(|id| &self.train_enc[self.positions[&id]])
            .collect()
    }
}

/// Adapts a copy of θ on the retrieved support set, then decodes greedily.
/// With no support the plain prediction is returned.
pub fn adapt_and_predict(
    learner: &Learner,
    params: &ParamSet,
    ex: &Example,
    enc: &Encoded,
    adapter: &Adapter<'_>,
) -> Result<SqlQuery, MetaError> {
    let support = adapter.support(ex);
    if support.is_empty() {
        return Ok(learner.predict_greedy(params, enc)?);
    }
    let adapted = inner_update(learner, params, &support, adapter.alpha, adapter.steps)?;
    Ok(learner.predict_greedy(&adapted, enc)?)
}

/// Decodes every example of `ds` and scores it. A truncated decode counts as wrong.
pub fn evaluate(
    learner: &Learner,
    params: &ParamSet,
    ds: &Dataset,
    adapter: Option<&Adapter<'_>>,
    threads: usize,
) -> Result<Metrics, MetaError> {
    let items: Vec<&Example> = ds.examples.iter().collect();
    let preds = par_map(&items, threads, |ex| {
        let enc = learner.encode_input(ex);
        let pred = match adapter {
            Some(a) => adapt_and_predict(learner, params, ex, &enc, a),
            None => learner.predict_greedy(params, &enc).map_err(MetaError::from),
        };
        match pred {
            Ok(q) => Ok(Some(q)),
            Err(MetaError::Learner(LearnerError::Truncated(_))) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut lf = 0usize;
    let mut ex_ok = 0usize;
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (ex, pred) in items.iter().zip(preds) {
        let pred = pred?;
        let table = ds.table_of(ex);
        let (m_lf, m_ex) = match &pred {
            Some(q) => (logical_form_match(q, &ex.gold), execution_match(q, &ex.gold, table)?),
            None => {
                // still surfaces a broken gold query
                crate::sql::execute(&ex.gold, table)?;
                (false, false)
            }
        };
        lf += m_lf as usize;
        ex_ok += m_ex as usize;
        let b = buckets.entry(normalized_sql_length(&ex.gold)).or_default();
        b.0 += 1;
        b.1 += m_lf as usize;
    }
    let n = items.len().max(1) as f64;
    Ok(Metrics {
        acc_lf: lf as f64 / n,
        acc_ex: ex_ok as f64 / n,
        per_length: buckets
            .into_iter()
            .map(|(len, (c, ok))| (len, (c, ok as f64 / c as f64)))
            .collect(),
    })
}
