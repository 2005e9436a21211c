//! Sampling lower bounds on the Lipschitz and smoothness constants of the loss.
//!
//! Pairs `(w', w'')` are drawn uniformly from a box of parameters, together with an input and
//! a label, and the largest observed ratios
//!
//! ```text
//! |l(w') - l(w'')| / |w' - w''|      and      |grad l(w') - grad l(w'')| / |w' - w''|
//! ```
//!
//! are reported. A maximum over finitely many pairs can only underestimate the true constant.
//! Pair `i` draws from its own stream `(seed, PROBE_BASE + i)`.

use rand::Rng as _;

use super::loss_and_gradient;
use crate::bounds::ParamBounds;
use crate::error::{check_dim, KafError, Result};
use crate::net::{Network, ParamId};
use crate::rng::{self, streams, Rng};
use crate::scalar::Scalar;

/// Retries before a pair with `w' == w''` is declared impossible to avoid.
const MAX_RESAMPLE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub lipschitz_lower: f64,
    pub smoothness_lower: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl ProbeReport {
    pub const CSV_HEADER: &'static str = "seed,samples,lipschitz_lower,smoothness_lower";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e}",
            self.seed, self.sample_count, self.lipschitz_lower, self.smoothness_lower
        )
    }
}

/// A loss over a box of parameters, evaluated in a randomly drawn context.
pub trait ProbeTarget<T: Scalar> {
    type Context;

    fn dim(&self) -> usize;

    /// Closed interval for coordinate `i`; equal endpoints freeze the coordinate.
    fn interval(&self, i: usize) -> (T, T);

    fn draw_context(&self, rng: &mut Rng) -> Self::Context;

    fn loss_and_gradient(&self, ctx: &Self::Context, w: &[T]) -> Result<(T, Vec<T>)>;
}

fn draw_point<T: Scalar, P: ProbeTarget<T>>(target: &P, rng: &mut Rng) -> Vec<T> {
    (0..target.dim())
        .map(|i| {
            let (lo, hi) = target.interval(i);
            if lo == hi {
                lo
            } else {
                let u: f64 = rng.random();
                lo + (hi - lo) * T::lit(u)
            }
        })
        .collect()
}

fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Maximum loss and gradient difference ratios over `samples` pairs.
pub fn probe<T: Scalar, P: ProbeTarget<T>>(
    target: &P,
    samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if samples == 0 {
        return Err(KafError::InvalidArgument("need at least one sample".into()));
    }
    let mut lipschitz = 0.0_f64;
    let mut smoothness = 0.0_f64;
    for pair in 0..samples {
        let mut rng = rng::stream(seed, streams::PROBE_BASE + pair as u64);
        let ctx = target.draw_context(&mut rng);
        let mut attempt = 0;
        let (w1, w2, dist) = loop {
            let w1 = draw_point(target, &mut rng);
            let w2 = draw_point(target, &mut rng);
            let dist = distance(&w1, &w2);
            if dist > T::zero() {
                break (w1, w2, dist);
            }
            attempt += 1;
            if attempt >= MAX_RESAMPLE {
                return Err(KafError::InvalidArgument(
                    "parameter box has no free coordinate".into(),
                ));
            }
        };
        let (l1, g1) = target.loss_and_gradient(&ctx, &w1)?;
        let (l2, g2) = target.loss_and_gradient(&ctx, &w2)?;
        let dist = dist.as_f64();
        lipschitz = lipschitz.max((l1 - l2).abs().as_f64() / dist);
        smoothness = smoothness.max(distance(&g1, &g2).as_f64() / dist);
    }
    Ok(ProbeReport {
        lipschitz_lower: lipschitz,
        smoothness_lower: smoothness,
        sample_count: samples,
        seed,
    })
}

/// Kafnet cross-entropy with parameters in a [`ParamBounds`] box and inputs in `[-a, a]^m`.
#[derive(Debug, Clone)]
pub struct KafnetTarget<T> {
    template: Network<T>,
    ids: Vec<ParamId>,
    intervals: Vec<(T, T)>,
    input_bound: T,
}

impl<T: Scalar> KafnetTarget<T> {
    /// Every parameter free within its bound.
    pub fn new(template: &Network<T>, bounds: &ParamBounds<T>) -> Result<Self> {
        Self::with_free(template, bounds, |_| true)
    }

    /// Only parameters selected by `free` move; the rest keep their template values.
    pub fn with_free(
        template: &Network<T>,
        bounds: &ParamBounds<T>,
        free: impl Fn(ParamId) -> bool,
    ) -> Result<Self> {
        bounds.validate()?;
        check_dim("bounds input dimension", template.input_dim(), bounds.m)?;
        if bounds.widths != template.widths() {
            return Err(KafError::InvalidArgument(
                "bounds widths differ from the network".into(),
            ));
        }
        let ids = template.params.ids();
        let intervals = ids
            .iter()
            .map(|&id| {
                if free(id) {
                    bounds.interval(id)
                } else {
                    let v = template.params.get(id);
                    (v, v)
                }
            })
            .collect();
        Ok(Self {
            template: template.clone(),
            ids,
            intervals,
            input_bound: bounds.a,
        })
    }
}

impl<T: Scalar> ProbeTarget<T> for KafnetTarget<T> {
    type Context = (Vec<T>, usize);

    fn dim(&self) -> usize {
        self.ids.len()
    }

    fn interval(&self, i: usize) -> (T, T) {
        self.intervals[i]
    }

    fn draw_context(&self, rng: &mut Rng) -> Self::Context {
        let a = self.input_bound.as_f64();
        let x = (0..self.template.input_dim())
            .map(|_| {
                let u: f64 = rng.random();
                T::lit(a * (2.0 * u - 1.0))
            })
            .collect();
        let label = rng.random_range(0..self.template.num_classes());
        (x, label)
    }

    fn loss_and_gradient(&self, ctx: &Self::Context, w: &[T]) -> Result<(T, Vec<T>)> {
        let mut net = self.template.clone();
        net.params.set_flat(w)?;
        let (loss, grad) = loss_and_gradient(&net, &ctx.0, ctx.1)?;
        Ok((loss, grad.to_flat()))
    }
}

/// Lower bound on the Lipschitz constant over the box. The smoothness ratio of the same pairs
/// is reported alongside.
pub fn estimate_lipschitz<T: Scalar>(
    net_template: &Network<T>,
    bounds: &ParamBounds<T>,
    samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    probe(&KafnetTarget::new(net_template, bounds)?, samples, seed)
}

/// Lower bound on the smoothness constant over the box. Uses the same pairs as
/// [`estimate_lipschitz`] for equal seeds.
pub fn estimate_smoothness<T: Scalar>(
    net_template: &Network<T>,
    bounds: &ParamBounds<T>,
    samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    probe(&KafnetTarget::new(net_template, bounds)?, samples, seed)
}
