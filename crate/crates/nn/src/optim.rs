//! Adam with per-group learning rates, and a reduce-on-plateau schedule.

use crate::params::{Gradients, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `step` is the
/// 1-based update count after this step.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), m.len());
    assert_eq!(param.len(), v.len());
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    for i in 0..param.len() {
        let mut g = grad[i].as_f64();
        if cfg.weight_decay != 0.0 {
            g += cfg.weight_decay * param[i].as_f64();
        }
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::from_f64_lossy(mi);
        v[i] = T::from_f64_lossy(vi);
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        let p = param[i].as_f64() - lr * mhat / (vhat.sqrt() + cfg.eps);
        param[i] = T::from_f64_lossy(p);
    }
}

/// A named-prefix parameter group with its own learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub prefix: String,
    pub lr: f64,
}

/// Adam over a whole [`ParamStore`]. Parameters match the first group whose
/// prefix they start with; the rest use `default_lr`.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub default_lr: f64,
    pub groups: Vec<ParamGroup>,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            default_lr: lr,
            groups: Vec::new(),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn with_group(mut self, prefix: impl Into<String>, lr: f64) -> Self {
        self.groups.push(ParamGroup {
            prefix: prefix.into(),
            lr,
        });
        self
    }

    pub fn lr_for(&self, name: &str) -> f64 {
        self.groups
            .iter()
            .find(|g| name.starts_with(&g.prefix))
            .map(|g| g.lr)
            .unwrap_or(self.default_lr)
    }

    /// Multiply every learning rate (default and groups) by `factor`.
    pub fn scale_lr(&mut self, factor: f64) {
        self.default_lr *= factor;
        for g in &mut self.groups {
            g.lr *= factor;
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_steps(&mut self, step: u64) {
        self.step = step;
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    pub fn set_moments(&mut self, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let lr = self.lr_for(store.name(id));
            let p = store.get_mut(id);
            adam_update(
                p.data_mut(),
                g.data(),
                self.m[id.0].data_mut(),
                self.v[id.0].data_mut(),
                self.step,
                lr,
                &self.config,
            );
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauMode {
    /// Higher metric is better (F1, precision).
    Max,
    /// Lower metric is better (loss).
    Min,
}

/// Reduce the learning rate by `factor` once the metric has failed to
/// improve for `patience` consecutive evaluations. The counter resets after
/// every reduction and after every improvement.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub mode: PlateauMode,
    best: Option<f64>,
    bad: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, mode: PlateauMode) -> Self {
        Self {
            factor,
            patience,
            mode,
            best: None,
            bad: 0,
        }
    }

    /// Record one evaluation; returns the multiplier to apply to the lr
    /// (1.0 or `factor`).
    pub fn observe(&mut self, metric: f64) -> f64 {
        let improved = match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), PlateauMode::Max) => metric > b,
            (Some(b), PlateauMode::Min) => metric < b,
        };
        if improved {
            self.best = Some(metric);
            self.bad = 0;
            return 1.0;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.bad = 0;
            self.factor
        } else {
            1.0
        }
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.1, 2, PlateauMode::Max)
    }
}

/// Learning rate after replaying `history` through a fresh scheduler.
pub fn plateau_schedule(
    history: &[f64],
    lr: f64,
    factor: f64,
    patience: usize,
    mode: PlateauMode,
) -> f64 {
    let mut s = PlateauScheduler::new(factor, patience, mode);
    let mut mult = 1.0;
    for &m in history {
        mult = s.observe(m);
    }
    lr * mult
}
