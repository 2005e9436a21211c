//! Smoothness hypotheses, the per-layer derivative bound recursion and the SGD
//! uniform-stability bound.
//!
//! For a network whose inputs, weights, biases and mixing coefficients are bounded by
//! `a`, `W`, `b`, `alpha`, and whose dictionary lies in `[-R, R]`, every layer `i` satisfies
//! `|G_ij| <= X_i`, `|dG_ij/dz| <= Y_i` and `|d2G_ij/dz dw| <= Z_i` for all parameters `z`, `w`,
//! where
//!
//! ```text
//! X_1 = m W a + b                X_i = H_(i-1) W D alpha + b
//! Y_1 = max{1, a}                Y_i = max{D alpha, 1, 2 H_(i-1) W D alpha gamma (X_(i-1) + R) Y_(i-1)}
//! Z_1 = 0                        Z_i = max{1,
//!                                          2 D alpha gamma (X_(i-1) + R) Y_(i-1),
//!                                          2 H_(i-1) W gamma (X_(i-1) + R) Y_(i-1),
//!                                          2 H_(i-1) W D alpha gamma [(1 + 2 gamma (X_(i-1) + R)^2) Y_(i-1)^2
//!                                                                    + (X_(i-1) + R) Z_(i-1)]}
//! ```
//!
//! The `Y_i` recursion accounts for a mixing coefficient of the previous layer through the
//! constant `1`, while the actual derivative is `W_ijh E_(i-1)hk`, i.e. up to `W`. The bound is
//! therefore valid whenever `W <= 1` or the third entry of the maximum dominates `W`.

use crate::error::{KafError, Result};
use crate::net::{Network, ParamId};
use crate::scalar::Scalar;

/// Default constant for the `R <= c_R D` reading of the dictionary-range condition.
pub const DEFAULT_C_R: f64 = 1.0;

/// Constants bounding inputs, parameters and architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds<T> {
    /// `|x_h| <= a`
    pub a: T,
    /// `|W_ijh| <= W`
    pub w_max: T,
    /// `|b_ij| <= b`
    pub b_max: T,
    /// `|alpha_ijk| <= alpha`
    pub alpha_max: T,
    /// Dictionary range `R`.
    pub r: T,
    pub gamma: T,
    /// Input dimension `m`.
    pub m: usize,
    /// `H_1..H_Q`, output layer included.
    pub widths: Vec<usize>,
    /// Dictionary size `D`.
    pub d: usize,
}

impl<T: Scalar> ParamBounds<T> {
    /// Architecture of `net` with the given magnitude bounds.
    pub fn for_network(net: &Network<T>, a: T, w_max: T, b_max: T, alpha_max: T) -> Self {
        Self {
            a,
            w_max,
            b_max,
            alpha_max,
            r: net.dictionary().range_r(),
            gamma: net.gamma(),
            m: net.input_dim(),
            widths: net.widths(),
            d: net.dictionary().len(),
        }
    }

    /// Depth `Q`.
    pub fn q(&self) -> usize {
        self.widths.len()
    }

    /// `H = max{H_1, ..., H_Q, D}`.
    pub fn h_star(&self) -> usize {
        self.widths.iter().copied().chain([self.d]).max().unwrap_or(0)
    }

    /// Largest hidden width `max{H_1, ..., H_(Q-1)}`.
    pub fn h_hidden(&self) -> usize {
        self.widths[..self.q().saturating_sub(1)]
            .iter()
            .copied()
            .max()
            .unwrap_or(0)
    }

    /// Checks ranges: magnitudes non-negative and finite, `R` and `gamma` positive, `m >= 1`,
    /// `D >= 1`, positive widths. Depth is not checked here (see [`check_admissibility`]).
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("a", self.a),
            ("W", self.w_max),
            ("b", self.b_max),
            ("alpha", self.alpha_max),
        ];
        for (name, v) in nonneg {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(KafError::InvalidArgument(format!(
                    "bound {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [("R", self.r), ("gamma", self.gamma)] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(KafError::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.m == 0 || self.d == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return Err(KafError::InvalidArgument(
                "dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Interval `[-bound, bound]` admissible for parameter `id`.
    pub fn interval(&self, id: ParamId) -> (T, T) {
        let v = match id {
            ParamId::Weight { .. } => self.w_max,
            ParamId::Bias { .. } => self.b_max,
            ParamId::Mixing { .. } => self.alpha_max,
        };
        (-v, v)
    }

    /// Whether some parameter bound is zero, which collapses the recursion to constants.
    pub fn is_degenerate(&self) -> bool {
        self.w_max == T::zero() || self.alpha_max == T::zero()
    }
}

/// Flags for the structural conditions of the smoothness theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admissibility {
    /// `Q >= 2`
    pub depth: bool,
    /// `R <= c_R D`
    pub range: bool,
    /// `gamma H^2 >= 1` with `H = max{H_1, ..., H_Q, D}`.
    pub gamma: bool,
    /// `gamma H^2 >= 1` with `H` the largest hidden width.
    pub gamma_hidden: bool,
}

impl Admissibility {
    pub fn as_triple(&self) -> (bool, bool, bool) {
        (self.depth, self.range, self.gamma)
    }

    pub fn all(&self) -> bool {
        self.depth && self.range && self.gamma
    }
}

pub fn check_admissibility<T: Scalar>(pb: &ParamBounds<T>, c_r: T) -> Admissibility {
    let gamma_ok = |h: usize| {
        let h = T::lit(h as f64);
        pb.gamma * h * h >= T::one()
    };
    Admissibility {
        depth: pb.q() >= 2,
        range: pb.r <= c_r * T::lit(pb.d as f64),
        gamma: gamma_ok(pb.h_star()),
        gamma_hidden: gamma_ok(pb.h_hidden()),
    }
}

/// Per-layer bounds `X_i`, `Y_i`, `Z_i` (index 0 is layer 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub z: Vec<T>,
}

/// Evaluates the bound recursion for every layer `1..=Q`.
pub fn layer_bounds<T: Scalar>(pb: &ParamBounds<T>) -> LayerBounds<T> {
    let q = pb.q();
    let two = T::two();
    let d_alpha = T::lit(pb.d as f64) * pb.alpha_max;
    let mut x = Vec::with_capacity(q);
    let mut y = Vec::with_capacity(q);
    let mut z = Vec::with_capacity(q);
    if q == 0 {
        return LayerBounds { x, y, z };
    }
    x.push(T::lit(pb.m as f64) * pb.w_max * pb.a + pb.b_max);
    y.push(T::one().max(pb.a));
    z.push(T::zero());
    for i in 1..q {
        let h_prev = T::lit(pb.widths[i - 1] as f64);
        let (xp, yp, zp) = (x[i - 1], y[i - 1], z[i - 1]);
        let shift = xp + pb.r;
        let gamma = pb.gamma;

        x.push(h_prev * pb.w_max * d_alpha + pb.b_max);

        let y_chain = two * h_prev * pb.w_max * d_alpha * gamma * shift * yp;
        y.push(d_alpha.max(T::one()).max(y_chain));

        let z_mix = two * d_alpha * gamma * shift * yp;
        let z_weight = two * h_prev * pb.w_max * gamma * shift * yp;
        let z_chain = two
            * h_prev
            * pb.w_max
            * d_alpha
            * gamma
            * ((T::one() + two * gamma * shift * shift) * yp * yp + shift * zp);
        z.push(T::one().max(z_mix).max(z_weight).max(z_chain));
    }
    LayerBounds { x, y, z }
}

/// Order magnitudes `sqrt(Q) (gamma H^4)^(Q-1)` and `Q (gamma H^4)^(2(Q-1))`.
///
/// These are asymptotic orders, not constants. Computed in log space; overflow gives `+inf`.
pub fn theorem_orders<T: Scalar>(pb: &ParamBounds<T>) -> (T, T) {
    let q = pb.q() as f64;
    let h = pb.h_star() as f64;
    let ln_base = pb.gamma.as_f64().ln() + 4.0 * h.ln();
    let ln_l = 0.5 * q.ln() + (q - 1.0) * ln_base;
    let ln_beta = q.ln() + 2.0 * (q - 1.0) * ln_base;
    (T::lit(ln_l.exp()), T::lit(ln_beta.exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    pub x_per_layer: Vec<T>,
    pub y_per_layer: Vec<T>,
    pub z_per_layer: Vec<T>,
    pub admissible: Admissibility,
    pub l_order: T,
    pub beta_order: T,
    /// Some parameter bound is zero.
    pub degenerate: bool,
}

impl<T: Scalar> BoundReport<T> {
    /// `Y_i` non-decreasing over layers.
    pub fn y_monotone(&self) -> bool {
        self.y_per_layer.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Full report with the default `c_R`.
pub fn recursion_xyz<T: Scalar>(pb: &ParamBounds<T>) -> BoundReport<T> {
    bound_report(pb, T::lit(DEFAULT_C_R))
}

pub fn bound_report<T: Scalar>(pb: &ParamBounds<T>, c_r: T) -> BoundReport<T> {
    let LayerBounds { x, y, z } = layer_bounds(pb);
    let (l_order, beta_order) = theorem_orders(pb);
    BoundReport {
        x_per_layer: x,
        y_per_layer: y,
        z_per_layer: z,
        admissible: check_admissibility(pb, c_r),
        l_order,
        beta_order,
        degenerate: pb.is_degenerate(),
    }
}

/// Inputs of the SGD uniform-stability bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityInputs<T> {
    /// Lipschitz constant `L`.
    pub l_const: T,
    /// Smoothness constant `beta`.
    pub beta_const: T,
    /// Step sizes satisfy `mu_t <= c / t`.
    pub c: T,
    pub t_steps: u64,
    pub n_samples: u64,
}

/// `(1 + 1/(beta c)) / (n - 1) * (2 c L^2)^(1/(beta c + 1)) * T^(beta c / (beta c + 1))`.
pub fn stability_epsilon<T: Scalar>(si: &StabilityInputs<T>) -> Result<T> {
    for (name, v) in [("L", si.l_const), ("beta", si.beta_const), ("c", si.c)] {
        if !(v > T::zero() && v.is_finite()) {
            return Err(KafError::InvalidArgument(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    if si.t_steps == 0 || si.n_samples < 2 {
        return Err(KafError::InvalidArgument(
            "need T >= 1 and n >= 2".into(),
        ));
    }
    let one = T::one();
    let bc = si.beta_const * si.c;
    let n = T::lit(si.n_samples as f64);
    let t = T::lit(si.t_steps as f64);
    let lead = (one + one / bc) / (n - one);
    let ln_tail = (T::two() * si.c * si.l_const * si.l_const).ln() / (bc + one)
        + t.ln() * bc / (bc + one);
    Ok(lead * ln_tail.exp())
}

/// Bounds realised by a concrete network on a dataset.
pub fn realized_bounds<'a, T, I>(net: &Network<T>, samples: I) -> Result<ParamBounds<T>>
where
    T: Scalar,
    I: IntoIterator<Item = &'a [T]>,
{
    let mut a = T::zero();
    let mut count = 0usize;
    for x in samples {
        a = x.iter().fold(a, |acc, v| acc.max(v.abs()));
        count += 1;
    }
    if count == 0 {
        return Err(KafError::EmptyDataset);
    }
    let mut w_max = T::zero();
    let mut b_max = T::zero();
    let mut alpha_max = T::zero();
    for i in 0..net.depth() {
        let aff = net.params.affine(i);
        w_max = w_max.max(aff.weights.max_abs());
        b_max = aff.biases.iter().fold(b_max, |acc, v| acc.max(v.abs()));
    }
    for h in &net.params.hidden {
        alpha_max = alpha_max.max(h.kaf.mixing.max_abs());
    }
    Ok(ParamBounds::for_network(net, a, w_max, b_max, alpha_max))
}
