//! Initialisation, optimisers and the mini-batch training loop.

use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::bounds::ParamBounds;
use crate::data::Dataset;
use crate::error::{KafError, Result};
use crate::grad::{backward, Gradient};
use crate::net::{cross_entropy, make_dictionary, Network, ParamId};
use crate::rng::{self, streams, Rng};
use crate::scalar::Scalar;

/// Floor on the training risk when forming the gap ratio.
pub const GAP_FLOOR: f64 = 1e-12;
pub const DEFAULT_MIXING_STD: f64 = 0.3;

/// Architecture and dictionary of a network to initialise.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub d: usize,
    pub r: f64,
    pub gamma: f64,
    pub mixing_std: f64,
}

impl NetSpec {
    /// `H_1..H_Q`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = self.hidden.clone();
        w.push(self.classes);
        w
    }
}

/// Weights `N(0, 1/fan_in)`, biases zero, mixing `N(0, mixing_std^2)`.
///
/// Draws depend on the architecture and `seed` only, so networks that differ only in
/// `gamma` start from identical parameters.
pub fn init_network<T: Scalar>(spec: &NetSpec, seed: u64) -> Result<Network<T>> {
    if !(spec.mixing_std >= 0.0 && spec.mixing_std.is_finite()) {
        return Err(KafError::InvalidArgument(format!(
            "mixing std must be non-negative, got {}",
            spec.mixing_std
        )));
    }
    let dict = make_dictionary(spec.d, T::lit(spec.r), T::lit(spec.gamma))?;
    let mut net = Network::zeros(spec.input_dim, &spec.widths(), dict)?;
    let mut rng = rng::stream(seed, streams::INIT);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for id in net.params.ids() {
        let v = match id {
            ParamId::Weight { layer, .. } => {
                let fan_in = net.params.affine(layer).in_dim() as f64;
                unit.sample(&mut rng) / fan_in.sqrt()
            }
            ParamId::Bias { .. } => 0.0,
            ParamId::Mixing { .. } => spec.mixing_std * unit.sample(&mut rng),
        };
        net.params.set(id, T::lit(v));
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain SGD with `mu_t = c / t`.
    SgdCOverT,
    /// Adam with constant base learning rate `c`.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub optimizer: Optimizer,
    /// Step constant for SGD, base learning rate for Adam.
    pub c: f64,
    pub t_steps: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub adam: AdamHyper,
    /// Clamp every parameter into its interval after each step.
    pub project_to: Option<ParamBounds<T>>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn adam(lr: f64, t_steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            optimizer: Optimizer::Adam,
            c: lr,
            t_steps,
            batch_size,
            eval_batch_size: batch_size,
            seed,
            adam: AdamHyper::default(),
            project_to: None,
        }
    }

    pub fn sgd(c: f64, t_steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            optimizer: Optimizer::SgdCOverT,
            ..Self::adam(c, t_steps, batch_size, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(KafError::InvalidArgument("t_steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(KafError::InvalidArgument("batch sizes must be at least 1".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(KafError::InvalidArgument(format!(
                "step constant must be positive, got {}",
                self.c
            )));
        }
        Ok(())
    }

    /// `c / t` for SGD, `c` for Adam.
    pub fn step_size(&self, t: usize) -> f64 {
        match self.optimizer {
            Optimizer::SgdCOverT => self.c / t as f64,
            Optimizer::Adam => self.c,
        }
    }
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradient<T: Scalar>(
    net: &Network<T>,
    batch: &[(&[T], usize)],
) -> Result<(T, Gradient<T>)> {
    if batch.is_empty() {
        return Err(KafError::EmptyDataset);
    }
    let mut total = T::zero();
    let mut grad = net.params.zeros_like();
    for &(x, y) in batch {
        let trace = net.forward(x)?;
        total += cross_entropy(&trace.probs, y)?;
        grad.axpy(T::one(), &backward(net, &trace, y)?)?;
    }
    let scale = T::one() / T::lit(batch.len() as f64);
    grad.map_inplace(|g| g * scale);
    if !grad.all_finite() {
        return Err(KafError::NonFinite("batch gradient".into()));
    }
    Ok((total * scale, grad))
}

/// Clamp each parameter into `[-bound, bound]` of its kind.
pub fn project<T: Scalar>(net: &mut Network<T>, bounds: &ParamBounds<T>) {
    for id in net.params.ids() {
        let (lo, hi) = bounds.interval(id);
        let v = net.params.get(id);
        net.params.set(id, v.max(lo).min(hi));
    }
}

/// `w <- w - (c/t) grad`, then optional projection.
pub fn sgd_update<T: Scalar>(
    net: &mut Network<T>,
    grad: &Gradient<T>,
    t: usize,
    config: &TrainConfig<T>,
) -> Result<()> {
    if t == 0 {
        return Err(KafError::InvalidArgument("steps are counted from 1".into()));
    }
    if !grad.all_finite() {
        return Err(KafError::NonFinite(format!("gradient at step {t}")));
    }
    let mu = T::lit(config.step_size(t));
    net.params.axpy(-mu, grad)?;
    if let Some(b) = &config.project_to {
        project(net, b);
    }
    Ok(())
}

/// One SGD step on the mean gradient of `batch`.
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    batch: &[(&[T], usize)],
    t: usize,
    config: &TrainConfig<T>,
) -> Result<()> {
    let (_, grad) = batch_gradient(net, batch)?;
    sgd_update(net, &grad, t, config)
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Gradient<T>,
    v: Gradient<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            m: net.params.zeros_like(),
            v: net.params.zeros_like(),
        }
    }
}

/// Bias-corrected Adam update, then optional projection.
pub fn adam_update<T: Scalar>(
    net: &mut Network<T>,
    state: &mut AdamState<T>,
    grad: &Gradient<T>,
    t: usize,
    config: &TrainConfig<T>,
) -> Result<()> {
    if t == 0 {
        return Err(KafError::InvalidArgument("steps are counted from 1".into()));
    }
    if !grad.all_finite() {
        return Err(KafError::NonFinite(format!("gradient at step {t}")));
    }
    let AdamHyper { beta1, beta2, eps } = config.adam;
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let one = T::one();
    state.m.zip_inplace(grad, |m, g| b1 * m + (one - b1) * g)?;
    state.v.zip_inplace(grad, |v, g| b2 * v + (one - b2) * g * g)?;
    let c1 = T::lit(1.0 - beta1.powi(t as i32));
    let c2 = T::lit(1.0 - beta2.powi(t as i32));
    let lr = T::lit(config.c);
    let eps = T::lit(eps);
    let mut step = state.m.clone();
    step.zip_inplace(&state.v, |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps))?;
    net.params.axpy(-one, &step)?;
    if let Some(b) = &config.project_to {
        project(net, b);
    }
    Ok(())
}

pub fn adam_step<T: Scalar>(
    net: &mut Network<T>,
    state: &mut AdamState<T>,
    batch: &[(&[T], usize)],
    t: usize,
    config: &TrainConfig<T>,
) -> Result<()> {
    let (_, grad) = batch_gradient(net, batch)?;
    adam_update(net, state, &grad, t, config)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint {
    pub step: usize,
    pub train_risk: f64,
    pub test_risk: f64,
    /// `test_risk / max(train_risk, GAP_FLOOR)`
    pub gap: f64,
    /// The training risk was below [`GAP_FLOOR`].
    pub floored: bool,
}

/// Per-step training and held-out mini-batch risks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapSeries {
    pub points: Vec<GapPoint>,
}

/// Trailing moving average; the first `window - 1` entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Ratio of two risks with the training risk floored at [`GAP_FLOOR`].
pub fn gap_ratio(train: f64, test: f64) -> (f64, bool) {
    (test / train.max(GAP_FLOOR), train <= GAP_FLOOR)
}

impl GapSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn train_risks(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.train_risk).collect()
    }

    pub fn test_risks(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.test_risk).collect()
    }

    /// Moving averages of train and test risk and the gap of those averages.
    pub fn smoothed(&self, window: usize) -> Vec<(f64, f64, f64)> {
        let tr = moving_average(&self.train_risks(), window);
        let te = moving_average(&self.test_risks(), window);
        tr.into_iter()
            .zip(te)
            .map(|(a, b)| (a, b, gap_ratio(a, b).0))
            .collect()
    }

    /// `step,train_risk,test_risk,gap`, plus `train_risk_ma,test_risk_ma,gap_ma` when a
    /// smoothing window is given.
    pub fn write_csv<W: Write>(&self, mut out: W, window: Option<usize>) -> Result<()> {
        let smooth = window.map(|w| self.smoothed(w));
        match smooth {
            Some(_) => writeln!(
                out,
                "step,train_risk,test_risk,gap,train_risk_ma,test_risk_ma,gap_ma"
            )?,
            None => writeln!(out, "step,train_risk,test_risk,gap")?,
        }
        for (i, p) in self.points.iter().enumerate() {
            write!(
                out,
                "{},{},{},{}",
                p.step,
                p.train_risk.to_exact_string(),
                p.test_risk.to_exact_string(),
                p.gap.to_exact_string()
            )?;
            if let Some(s) = &smooth {
                let (a, b, g) = s[i];
                write!(
                    out,
                    ",{},{},{}",
                    a.to_exact_string(),
                    b.to_exact_string(),
                    g.to_exact_string()
                )?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn draw_batch<'a, T: Scalar>(
    ds: &'a Dataset<T>,
    size: usize,
    rng: &mut Rng,
) -> Vec<(&'a [T], usize)> {
    (0..size)
        .map(|_| ds.sample(rng.random_range(0..ds.len())))
        .collect()
}

/// Runs `t_steps` optimiser steps. At step `t` a training batch and an independent test batch
/// are drawn uniformly with replacement; both risks are recorded at the parameters before the
/// update, which then uses the training batch's gradient.
pub fn run_training<T: Scalar>(
    mut net: Network<T>,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    config: &TrainConfig<T>,
) -> Result<(Network<T>, GapSeries)> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(KafError::EmptyDataset);
    }
    for ds in [train_set, test_set] {
        crate::error::check_dim("dataset features", net.input_dim(), ds.dim())?;
        if ds.labels.iter().any(|&y| y >= net.num_classes()) {
            return Err(KafError::InvalidArgument(format!(
                "labels must be below {}",
                net.num_classes()
            )));
        }
    }
    if let Some(b) = &config.project_to {
        project(&mut net, b);
    }
    let mut train_rng = rng::stream(config.seed, streams::TRAIN_BATCHES);
    let mut test_rng = rng::stream(config.seed, streams::TEST_BATCHES);
    let mut adam = AdamState::new(&net);
    let mut series = GapSeries {
        points: Vec::with_capacity(config.t_steps),
    };
    for t in 1..=config.t_steps {
        let batch = draw_batch(train_set, config.batch_size, &mut train_rng);
        let eval = draw_batch(test_set, config.eval_batch_size, &mut test_rng);
        let (train_risk, grad) = batch_gradient(&net, &batch)?;
        let test_risk = crate::net::empirical_risk(&net, eval.iter().copied())?;
        let (train_risk, test_risk) = (train_risk.as_f64(), test_risk.as_f64());
        if !(train_risk.is_finite() && test_risk.is_finite()) {
            return Err(KafError::NonFinite(format!("risk at step {t}")));
        }
        let (gap, floored) = gap_ratio(train_risk, test_risk);
        series.points.push(GapPoint {
            step: t,
            train_risk,
            test_risk,
            gap,
            floored,
        });
        match config.optimizer {
            Optimizer::SgdCOverT => sgd_update(&mut net, &grad, t, config)?,
            Optimizer::Adam => adam_update(&mut net, &mut adam, &grad, t, config)?,
        }
    }
    Ok((net, series))
}
