//! Randomised gradient check: reverse pass against central differences.

use std::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{backward, finite_diff_gradient, FD_STEP};
use crate::error::Result;
use crate::net::{make_dictionary, Network, ParamId};
use crate::rng::{self, streams, Rng};
use crate::scalar::Scalar;

/// Relative tolerance.
pub const REL_TOL: f64 = 1e-6;
/// Absolute tolerance, which governs coordinates of magnitude below `ABS_TOL / REL_TOL`.
pub const ABS_TOL: f64 = 1e-8;

/// Gammas the suite cycles through.
pub const GAMMAS: [f64; 3] = [0.005, 0.1, 1.0];

/// `|a - n| / max(|a|, |n|, ABS_TOL / REL_TOL)`: relative error whose denominator is floored so
/// that near-zero coordinates are held to the absolute tolerance instead. A central difference
/// in double precision carries roughly `1e-11` of round-off regardless of the coordinate's size,
/// so an unfloored relative error is meaningless for coordinates near `1e-6` and below.
pub fn coordinate_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_TOL / REL_TOL);
    (analytic - numeric).abs() / scale
}

/// `|a - n| <= max(ABS_TOL, REL_TOL * max(|a|, |n|))`.
pub fn coordinate_ok(analytic: f64, numeric: f64) -> bool {
    coordinate_error(analytic, numeric) <= REL_TOL
}

/// Network with weights `N(0, 1/fan_in)`, biases `N(0, 0.5^2)` and mixing `N(0, 0.5^2)`.
pub fn random_network<T: Scalar>(
    rng: &mut Rng,
    input_dim: usize,
    widths: &[usize],
    d: usize,
    gamma: f64,
) -> Network<T> {
    let dict = make_dictionary(d, T::lit(3.0), T::lit(gamma)).expect("valid dictionary");
    let mut net = Network::zeros(input_dim, widths, dict).expect("valid widths");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for id in net.params.ids() {
        let std = match id {
            ParamId::Weight { layer, .. } => {
                let fan_in = net.params.affine(layer).in_dim() as f64;
                1.0 / fan_in.sqrt()
            }
            ParamId::Bias { .. } | ParamId::Mixing { .. } => 0.5,
        };
        net.params.set(id, T::lit(std * unit.sample(rng)));
    }
    net
}

/// Injected fault for exercising the failure path of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate the largest-magnitude analytic coordinate.
    FlipSign,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub index: usize,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub d: usize,
    pub gamma: f64,
    pub label: usize,
    pub params: usize,
    /// Largest [`coordinate_error`].
    pub max_rel_err: f64,
    /// Largest plain absolute difference.
    pub max_abs_err: f64,
    /// First failing coordinate with its analytic and numeric values.
    pub failure: Option<(ParamId, f64, f64)>,
}

impl TrialOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub trials: Vec<TrialOutcome>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> usize {
        self.trials.iter().filter(|t| t.passed()).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.trials.len()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.trials.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.trials.iter().map(|t| t.max_abs_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cmp = if self.max_rel_err() < REL_TOL { "<" } else { ">=" };
        write!(
            f,
            "{}/{} passed, max rel err {cmp} {REL_TOL:e} ({:.3e})",
            self.passed(),
            self.trials.len(),
            self.max_rel_err()
        )?;
        for t in self.trials.iter().filter(|t| !t.passed()) {
            let (id, a, n) = t.failure.expect("failed trial has a failure");
            write!(
                f,
                "\ntrial {} failed at {id}: backward {a:.12e}, finite difference {n:.12e}",
                t.index
            )?;
        }
        Ok(())
    }
}

/// Draws trial `index`: depth 2 or 3, hidden widths 2..=10, 2..=4 classes, D in 2..=20,
/// gamma from [`GAMMAS`], inputs in [-1.5, 1.5].
pub fn draw_trial(seed: u64, index: usize) -> (Network<f64>, Vec<f64>, usize) {
    let mut rng = rng::stream(seed, streams::GRADCHECK_BASE + index as u64);
    let q = if index % 2 == 0 { 2 } else { 3 };
    let gamma = GAMMAS[(index / 2) % GAMMAS.len()];
    let m = rng.random_range(1..=5);
    let mut widths: Vec<usize> = (0..q - 1).map(|_| rng.random_range(2..=10)).collect();
    widths.push(rng.random_range(2..=4));
    let d = rng.random_range(2..=20);
    let net = random_network(&mut rng, m, &widths, d, gamma);
    let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..=1.5)).collect();
    let label = rng.random_range(0..widths[q - 1]);
    (net, x, label)
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckSummary> {
    let mut trials = Vec::with_capacity(cfg.trials);
    for index in 0..cfg.trials {
        let (net, x, label) = draw_trial(cfg.seed, index);
        let trace = net.forward(&x)?;
        let mut analytic = backward(&net, &trace, label)?;
        let numeric = finite_diff_gradient(&net, &x, label, FD_STEP)?;
        let ids = net.params.ids();
        if cfg.fault == Some(Fault::FlipSign) {
            let worst = ids
                .iter()
                .copied()
                .max_by(|a, b| analytic.get(*a).abs().total_cmp(&analytic.get(*b).abs()))
                .expect("non-empty parameters");
            analytic.set(worst, -analytic.get(worst));
        }
        let mut outcome = TrialOutcome {
            index,
            input_dim: net.input_dim(),
            widths: net.widths(),
            d: net.dictionary().len(),
            gamma: net.gamma(),
            label,
            params: ids.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            failure: None,
        };
        for id in ids {
            let (a, n) = (analytic.get(id), numeric.get(id));
            outcome.max_rel_err = outcome.max_rel_err.max(coordinate_error(a, n));
            outcome.max_abs_err = outcome.max_abs_err.max((a - n).abs());
            if outcome.failure.is_none() && !coordinate_ok(a, n) {
                outcome.failure = Some((id, a, n));
            }
        }
        trials.push(outcome);
    }
    Ok(GradCheckSummary { trials })
}
