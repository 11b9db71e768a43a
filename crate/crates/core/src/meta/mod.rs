//! First-order MAML over pseudo-tasks, the plain minibatch baseline, test-time
//! adaptation and evaluation.

mod eval;
mod train;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ptmaml_autodiff::{GradStore, OptimConfig, Optimizer, ParamSet};

use crate::learner::{Encoded, Learner, LearnerError};

pub use eval::{adapt_and_predict, evaluate, Adapter, Metrics};
pub use train::{train, EpochRecord, Mode, TrainData, TrainOutcome, TrainReport};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Sql(#[from] crate::sql::SqlError),
    #[error("model error: {0}")]
    Model(Box<dyn std::error::Error + Send + Sync>),
    #[error("non-finite gradient in batch starting at position {batch_start} of epoch {epoch}")]
    NonFinite { epoch: usize, batch_start: usize },
    #[error("invalid meta config: {0}")]
    Config(String),
    #[error("pseudo-task refers to example {0}, which is not in the training split")]
    UnknownExample(usize),
}

/// Anything that can report a loss and its gradient on one example.
pub trait Model: Sync {
    type Example: Sync;
    type Error: std::error::Error + Send + Sync + 'static;

    fn loss_and_grad(&self, params: &ParamSet, ex: &Self::Example) -> Result<(f64, GradStore), Self::Error>;
}

impl Model for Learner {
    type Example = Encoded;
    type Error = LearnerError;

    fn loss_and_grad(&self, params: &ParamSet, ex: &Encoded) -> Result<(f64, GradStore), LearnerError> {
        Learner::loss_and_grad(self, params, ex)
    }
}

fn model_err<E: std::error::Error + Send + Sync + 'static>(e: E) -> MetaError {
    MetaError::Model(Box::new(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Inner (adaptation) step size.
    pub alpha: f64,
    /// Meta step size; also the baseline's learning rate.
    pub beta: f64,
    /// Support-set size.
    pub k: usize,
    pub inner_steps: usize,
    pub task_batch: usize,
    pub epochs: usize,
    /// Learning rate here is ignored; `beta` is used.
    pub optim: OptimConfig,
    /// Only first-order updates are implemented.
    pub first_order: bool,
    /// Average task gradients in a batch instead of summing them.
    pub average_tasks: bool,
    /// Worker threads for per-task gradients. The reduction order is fixed, so results do not depend on it.
    pub threads: usize,
    /// How many training examples to decode for the per-epoch train accuracy.
    pub train_eval_limit: usize,
    /// Evaluate adapted dev accuracy every epoch (always done in ptmaml mode).
    pub eval_adapted: bool,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MetaConfig {
    pub fn desk() -> Self {
        Self {
            alpha: 0.001,
            beta: 0.1,
            k: 2,
            inner_steps: 1,
            task_batch: 16,
            epochs: 30,
            optim: OptimConfig::default(),
            first_order: true,
            average_tasks: false,
            threads: 1,
            train_eval_limit: 100,
            eval_adapted: false,
            seed: 0,
        }
    }

    pub fn paper() -> Self {
        Self {
            task_batch: 200,
            epochs: 100,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: &str| Err(MetaError::Config(m.into()));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and nonnegative");
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.inner_steps == 0 || self.task_batch == 0 || self.epochs == 0 || self.threads == 0 {
            return bad("inner_steps, task_batch, epochs and threads must be positive");
        }
        if !self.first_order {
            return bad("second-order meta-gradients are not supported");
        }
        self.optim.validate().map_err(MetaError::Config)
    }

    /// Optimizer settings for the outer loop: Adagrad at rate β.
    pub fn outer_optim(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.beta,
            seed: self.optim.seed ^ self.seed,
            ..self.optim.clone()
        }
    }

    pub fn optimizer(&self, params: &ParamSet) -> Optimizer {
        Optimizer::new(self.outer_optim(), params)
    }
}

/// `steps` plain gradient steps on the mean support loss, starting from `params`.
///
/// No clipping or noise here. With `alpha == 0` or an empty support the input is returned unchanged.
pub fn inner_update<M: Model>(
    model: &M,
    params: &ParamSet,
    support: &[&M::Example],
    alpha: f64,
    steps: usize,
) -> Result<ParamSet, MetaError> {
    let mut adapted = params.clone();
    if support.is_empty() {
        warn!("empty support set; skipping adaptation");
        return Ok(adapted);
    }
    if alpha == 0.0 {
        return Ok(adapted);
    }
    let scale = alpha / support.len() as f64;
    for _ in 0..steps {
        let mut total = GradStore::zeros_like(&adapted);
        for ex in support {
            let (_, g) = model.loss_and_grad(&adapted, ex).map_err(model_err)?;
            total.add_assign(&g);
        }
        adapted.sub_scaled(&total, scale);
    }
    Ok(adapted)
}

/// One task: support examples and the test example.
pub struct TaskRef<'a, E> {
    pub support: Vec<&'a E>,
    pub test: &'a E,
}

/// Loss and gradient of the test example at the adapted parameters θ′.
/// Under the first-order rule this gradient is applied directly to θ.
pub fn task_gradient<M: Model>(
    model: &M,
    params: &ParamSet,
    task: &TaskRef<'_, M::Example>,
    alpha: f64,
    steps: usize,
) -> Result<(f64, GradStore), MetaError> {
    let adapted = inner_update(model, params, &task.support, alpha, steps)?;
    model.loss_and_grad(&adapted, task.test).map_err(model_err)
}

/// Runs `f` over `items` on up to `threads` workers, returning results in input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Sums per-item gradients in input order. Returns (summed loss, summed gradient).
fn reduce(params: &ParamSet, parts: Vec<Result<(f64, GradStore), MetaError>>) -> Result<(f64, GradStore), MetaError> {
    let mut total = GradStore::zeros_like(params);
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// Meta-gradient of a task batch: Σ_i ∇L_test_i(θ′_i), or the mean with `average_tasks`.
pub fn meta_gradient<M: Model>(
    model: &M,
    params: &ParamSet,
    batch: &[TaskRef<'_, M::Example>],
    cfg: &MetaConfig,
) -> Result<(f64, GradStore), MetaError> {
    let parts = par_map(batch, cfg.threads, |t| task_gradient(model, params, t, cfg.alpha, cfg.inner_steps));
    let (loss, mut g) = reduce(params, parts)?;
    if cfg.average_tasks && !batch.is_empty() {
        g.scale(1.0 / batch.len() as f64);
    }
    Ok((loss, g))
}

/// Summed gradient of a plain minibatch (the baseline).
pub fn batch_gradient<M: Model>(
    model: &M,
    params: &ParamSet,
    batch: &[&M::Example],
    cfg: &MetaConfig,
) -> Result<(f64, GradStore), MetaError> {
    let parts = par_map(batch, cfg.threads, |ex| model.loss_and_grad(params, ex).map_err(model_err));
    let (loss, mut g) = reduce(params, parts)?;
    if cfg.average_tasks && !batch.is_empty() {
        g.scale(1.0 / batch.len() as f64);
    }
    Ok((loss, g))
}

/// Outcome of one optimizer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

fn apply(params: &mut ParamSet, g: GradStore, loss: f64, opt: &mut Optimizer) -> Option<StepStats> {
    if !g.all_finite() {
        return None;
    }
    let grad_norm = opt.step(params, g);
    Some(StepStats { loss, grad_norm })
}

/// One meta update: meta-gradient, then clipping, noise and Adagrad at rate β.
/// Returns `None` (leaving θ untouched) when the gradient is not finite.
pub fn meta_batch_step<M: Model>(
    model: &M,
    params: &mut ParamSet,
    batch: &[TaskRef<'_, M::Example>],
    cfg: &MetaConfig,
    opt: &mut Optimizer,
) -> Result<Option<StepStats>, MetaError> {
    let (loss, g) = meta_gradient(model, params, batch, cfg)?;
    Ok(apply(params, g, loss, opt))
}

/// One baseline update on a plain minibatch, with the same optimizer pipeline.
pub fn baseline_step<M: Model>(
    model: &M,
    params: &mut ParamSet,
    batch: &[&M::Example],
    cfg: &MetaConfig,
    opt: &mut Optimizer,
) -> Result<Option<StepStats>, MetaError> {
    let (loss, g) = batch_gradient(model, params, batch, cfg)?;
    Ok(apply(params, g, loss, opt))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ptmaml_autodiff::{Graph, Tensor};

    /// Scalar model with per-example loss `(θ − c)²`.
    pub struct Quadratic;

    impl Model for Quadratic {
        type Example = f64;
        type Error = ptmaml_autodiff::AutodiffError;

        fn loss_and_grad(&self, params: &ParamSet, c: &f64) -> Result<(f64, GradStore), Self::Error> {
            let mut g = Graph::new(params);
            let t = g.param(ptmaml_autodiff::ParamId(0));
            let c = g.constant(Tensor::vector(vec![*c]));
            let d = g.sub(t, c)?;
            let sq = g.mul(d, d)?;
            let l = g.sum(sq)?;
            let grads = g.backward(l)?;
            Ok((g.scalar(l), grads))
        }
    }

    pub fn theta(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("theta", Tensor::vector(vec![v])).unwrap();
        p
    }

    fn value(p: &ParamSet) -> f64 {
        p.get(ptmaml_autodiff::ParamId(0)).data()[0]
    }

    #[test]
    fn inner_step_on_quadratic() {
        let p = theta(0.0);
        let out = inner_update(&Quadratic, &p, &[&1.0], 0.1, 1).unwrap();
        assert!((value(&out) - 0.2).abs() < 1e-15);
        assert_eq!(value(&p), 0.0);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let p = theta(0.37);
        let out = inner_update(&Quadratic, &p, &[&1.0, &-3.0], 0.0, 3).unwrap();
        assert_eq!(out, p);
        let out = inner_update(&Quadratic, &p, &[], 0.5, 1).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn two_steps_compose() {
        let p = theta(0.5);
        let sup = [&1.0, &2.0];
        let twice = inner_update(&Quadratic, &p, &sup, 0.05, 2).unwrap();
        let once = inner_update(&Quadratic, &p, &sup, 0.05, 1).unwrap();
        let again = inner_update(&Quadratic, &once, &sup, 0.05, 1).unwrap();
        assert_eq!(twice, again);
    }

    #[test]
    fn first_order_gradient_by_hand() {
        // θ=0, support c=1, α=0.1 → θ′=0.2; test c=3 → ∇ = 2(0.2−3) = −5.6
        let p = theta(0.0);
        let task = TaskRef {
            support: vec![&1.0],
            test: &3.0,
        };
        let (l, g) = task_gradient(&Quadratic, &p, &task, 0.1, 1).unwrap();
        assert!((l - 2.8f64.powi(2)).abs() < 1e-12);
        assert!((g.iter().next().unwrap().data()[0] + 5.6).abs() < 1e-12);
    }

    #[test]
    fn identical_tasks_double_the_gradient() {
        let p = theta(0.25);
        let one = [TaskRef {
            support: vec![&1.0],
            test: &2.0,
        }];
        let two = [
            TaskRef {
                support: vec![&1.0],
                test: &2.0,
            },
            TaskRef {
                support: vec![&1.0],
                test: &2.0,
            },
        ];
        let cfg = MetaConfig::desk();
        let (_, g1) = meta_gradient(&Quadratic, &p, &one, &cfg).unwrap();
        let (_, g2) = meta_gradient(&Quadratic, &p, &two, &cfg).unwrap();
        let a = g1.iter().next().unwrap().data()[0];
        assert_eq!(g2.iter().next().unwrap().data()[0], 2.0 * a);
    }

    #[test]
    fn zero_alpha_meta_equals_baseline() {
        let cfg = MetaConfig {
            alpha: 0.0,
            ..MetaConfig::desk()
        };
        let tests = [0.5, -1.0, 2.0];
        let mut a = theta(0.1);
        let mut b = theta(0.1);
        let mut oa = cfg.optimizer(&a);
        let mut ob = cfg.optimizer(&b);
        for _ in 0..5 {
            let tasks: Vec<_> = tests
                .iter()
                .map(|t| TaskRef {
                    support: vec![&9.0],
                    test: t,
                })
                .collect();
            meta_batch_step(&Quadratic, &mut a, &tasks, &cfg, &mut oa).unwrap();
            let refs: Vec<&f64> = tests.iter().collect();
            baseline_step(&Quadratic, &mut b, &refs, &cfg, &mut ob).unwrap();
        }
        assert_eq!(value(&a).to_bits(), value(&b).to_bits());
    }

    #[test]
    fn threads_do_not_change_results() {
        let p = theta(0.3);
        let tests: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let tasks: Vec<_> = tests
            .iter()
            .map(|t| TaskRef {
                support: vec![&1.0, &-1.0],
                test: t,
            })
            .collect();
        let single = meta_gradient(&Quadratic, &p, &tasks, &MetaConfig::desk()).unwrap();
        let multi = meta_gradient(
            &Quadratic,
            &p,
            &tasks,
            &MetaConfig {
                threads: 4,
                ..MetaConfig::desk()
            },
        )
        .unwrap();
        assert_eq!(single.0.to_bits(), multi.0.to_bits());
        assert_eq!(single.1, multi.1);
    }

    #[test]
    fn invalid_configs() {
        assert!(MetaConfig {
            beta: 0.0,
            ..MetaConfig::desk()
        }
        .validate()
        .is_err());
        assert!(MetaConfig {
            first_order: false,
            ..MetaConfig::desk()
        }
        .validate()
        .is_err());
        MetaConfig::paper().validate().unwrap();
    }
}
