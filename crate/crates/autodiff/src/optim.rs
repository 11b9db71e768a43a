//! Adagrad with global-norm clipping and annealed Gaussian gradient noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::{GradStore, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    /// η: initial noise variance.
    pub noise_eta: f64,
    /// γ: annealing exponent.
    pub noise_gamma: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epsilon: 1e-8,
            clip_norm: 5.0,
            noise_eta: 0.3,
            noise_gamma: 0.55,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let reals = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("clip_norm", self.clip_norm),
            ("noise_eta", self.noise_eta),
            ("noise_gamma", self.noise_gamma),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} must be finite"));
        }
        if self.learning_rate <= 0.0 || self.epsilon <= 0.0 || self.clip_norm <= 0.0 {
            return Err("learning_rate, epsilon and clip_norm must be positive".into());
        }
        if self.noise_eta < 0.0 || self.noise_gamma < 0.0 {
            return Err("noise_eta and noise_gamma must be nonnegative".into());
        }
        Ok(())
    }
}

/// Rescales all gradients so the global L2 norm is at most `clip_norm`.
pub fn clip_gradients(grads: &GradStore, clip_norm: f64) -> GradStore {
    let mut out = grads.clone();
    clip_in_place(&mut out, clip_norm);
    out
}

/// In-place variant of [`clip_gradients`]. Returns the pre-clip norm.
pub fn clip_in_place(grads: &mut GradStore, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

/// σ_t² = η / (1 + t)^γ.
pub fn noise_variance(t: u64, eta: f64, gamma: f64) -> f64 {
    eta / (1.0 + t as f64).powf(gamma)
}

/// Adds i.i.d. `N(0, σ_t²)` noise to every gradient value.
pub fn add_gradient_noise(grads: &GradStore, t: u64, cfg: &OptimConfig, rng: &mut ChaCha8Rng) -> GradStore {
    let mut out = grads.clone();
    add_noise_in_place(&mut out, t, cfg, rng);
    out
}

pub fn add_noise_in_place(grads: &mut GradStore, t: u64, cfg: &OptimConfig, rng: &mut ChaCha8Rng) {
    if cfg.noise_eta == 0.0 {
        return;
    }
    let sigma = noise_variance(t, cfg.noise_eta, cfg.noise_gamma).sqrt();
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub accumulators: Vec<Tensor>,
    pub step_count: u64,
}

impl AdagradState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            accumulators: params.iter().map(|(_, _, t)| Tensor::zeros_like(t)).collect(),
            step_count: 0,
        }
    }
}

/// One Adagrad update: `acc += g²; p -= lr·g / (√acc + ε)`.
pub fn adagrad_step(params: &mut ParamSet, grads: &GradStore, state: &mut AdagradState, cfg: &OptimConfig) {
    let ids: Vec<_> = params.ids().collect();
    for ((id, g), acc) in ids.into_iter().zip(grads.iter()).zip(state.accumulators.iter_mut()) {
        let p = params.get_mut(id);
        for ((pv, gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
            *av += gv * gv;
            *pv -= cfg.learning_rate * gv / (av.sqrt() + cfg.epsilon);
        }
    }
    state.step_count += 1;
}

/// Clip → noise → Adagrad, with the noise schedule driven by the global step count.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub cfg: OptimConfig,
    pub state: AdagradState,
    rng: ChaCha8Rng,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, params: &ParamSet) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            state: AdagradState::new(params),
            cfg,
        }
    }

    /// Applies one full update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamSet, mut grads: GradStore) -> f64 {
        let norm = clip_in_place(&mut grads, self.cfg.clip_norm);
        add_noise_in_place(&mut grads, self.state.step_count, &self.cfg, &mut self.rng);
        adagrad_step(params, &grads, &mut self.state, &self.cfg);
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: Vec<f64>) -> (ParamSet, GradStore) {
        let mut p = ParamSet::new();
        let id = p.insert("p", Tensor::vector(vec![0.0; values.len()])).unwrap();
        let mut g = GradStore::zeros_like(&p);
        g.get_mut(id).data_mut().copy_from_slice(&values);
        (p, g)
    }

    #[test]
    fn clip_boundary_is_unchanged() {
        let (_, g) = single(vec![3.0, 4.0]);
        assert_eq!(clip_gradients(&g, 5.0), g);
    }

    #[test]
    fn clip_scales_down() {
        let (_, g) = single(vec![6.0, 8.0]);
        let c = clip_gradients(&g, 5.0);
        let v = c.iter().next().unwrap().data();
        assert!((v[0] - 3.0).abs() < 1e-15 && (v[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn clip_zero() {
        let (_, g) = single(vec![0.0, 0.0]);
        assert_eq!(clip_gradients(&g, 5.0), g);
    }

    #[test]
    fn zero_eta_means_no_noise() {
        let (_, g) = single(vec![1.0, -2.0]);
        let cfg = OptimConfig {
            noise_eta: 0.0,
            ..OptimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_gradient_noise(&g, 0, &cfg, &mut rng), g);
    }

    #[test]
    fn paper_noise_variance_at_step_zero() {
        assert_eq!(noise_variance(0, 0.3, 0.55), 0.3);
    }

    #[test]
    fn adagrad_first_step() {
        let (mut p, g) = single(vec![1.0]);
        let mut st = AdagradState::new(&p);
        let cfg = OptimConfig::default();
        adagrad_step(&mut p, &g, &mut st, &cfg);
        let v = p.iter().next().unwrap().2.data()[0];
        assert!((v + 0.1).abs() < 1e-8);
        assert_eq!(st.accumulators[0].data(), &[1.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adagrad_zero_gradient_is_noop() {
        let (mut p, g) = single(vec![0.0]);
        let mut st = AdagradState::new(&p);
        adagrad_step(&mut p, &g, &mut st, &OptimConfig::default());
        assert_eq!(p.iter().next().unwrap().2.data(), &[0.0]);
        assert_eq!(st.accumulators[0].data(), &[0.0]);
    }

    #[test]
    fn adagrad_second_step_magnitude() {
        let (mut p, g) = single(vec![1.0]);
        let mut st = AdagradState::new(&p);
        let cfg = OptimConfig::default();
        adagrad_step(&mut p, &g, &mut st, &cfg);
        let after_one = p.iter().next().unwrap().2.data()[0];
        adagrad_step(&mut p, &g, &mut st, &cfg);
        let after_two = p.iter().next().unwrap().2.data()[0];
        let delta = after_one - after_two;
        assert!((delta - 0.1 / 2f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OptimConfig {
            clip_norm: 0.0,
            ..OptimConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(OptimConfig::default().validate().is_ok());
    }
}
