//! Exact gradients of the cross-entropy loss and derivative probes.
//!
//! [`backward`] is a hand-written reverse pass for the fixed architecture. With
//! `E'_ijk = -2 gamma E_ijk (G_ij - d_k)`, the adjoints are
//!
//! ```text
//! dl/dG_Qj      = p_j - [j = y]
//! dl/dA_(i-1)h  = sum_j W_ijh dl/dG_ij
//! dl/dalpha_ijk = dl/dA_ij E_ijk
//! dl/dG_ij      = dl/dA_ij sum_k alpha_ijk E'_ijk
//! dl/dW_ijh     = dl/dG_ij A_(i-1)h,   dl/db_ij = dl/dG_ij
//! ```
//!
//! [`tangent`] propagates first and second directional derivatives forward instead, and
//! [`finite_diff_gradient`] differentiates numerically; both serve as independent checks.

pub mod check;
pub mod probe;
pub mod tangent;

use crate::error::{check_dim, KafError, Result};
use crate::net::{cross_entropy, ForwardTrace, Network, ParamId, Parameters};
use crate::scalar::Scalar;

pub use probe::{estimate_lipschitz, estimate_smoothness, ProbeReport};
pub use tangent::{second_order, SecondOrderTrace};

/// Gradient with the shape of the network parameters.
pub type Gradient<T> = Parameters<T>;

/// Central-difference step for first derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Central-difference step for second derivatives.
pub const FD_STEP_SECOND: f64 = 1e-4;

/// A pre-activation `G_ij`; `layer` is 0-based and `layer == Q - 1` addresses the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub layer: usize,
    pub neuron: usize,
}

/// Gradient of `cross_entropy(softmax(logits), label)` with respect to every parameter.
pub fn backward<T: Scalar>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    label: usize,
) -> Result<Gradient<T>> {
    if label >= net.num_classes() {
        return Err(KafError::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            net.num_classes()
        )));
    }
    check_dim("trace probabilities", net.num_classes(), trace.probs.len())?;
    let mut seed = trace.probs.clone();
    seed[label] -= T::one();
    backward_from(net, trace, net.depth() - 1, &seed)
}

/// Reverse pass seeded with `d(.)/dG` at `layer`. Parameters above `layer` get zero.
pub fn backward_from<T: Scalar>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    layer: usize,
    seed: &[T],
) -> Result<Gradient<T>> {
    check_trace(net, trace)?;
    if layer >= net.depth() {
        return Err(KafError::InvalidArgument(format!(
            "layer {layer} out of range for depth {}",
            net.depth()
        )));
    }
    check_dim("backward seed", net.params.affine(layer).out_dim(), seed.len())?;

    let gamma = net.gamma();
    let two = T::two();
    let dict = net.dictionary().elements();
    let mut grad = net.params.zeros_like();
    let mut d_pre: Vec<T> = seed.to_vec();

    for i in (0..=layer).rev() {
        let input = trace.layer_input(i);
        let aff = net.params.affine(i);
        {
            let g_aff = if i < net.params.hidden.len() {
                &mut grad.hidden[i].affine
            } else {
                &mut grad.output
            };
            for (j, &dg) in d_pre.iter().enumerate() {
                for (h, &u) in input.iter().enumerate() {
                    g_aff.weights.set(j, h, dg * u);
                }
                g_aff.biases[j] = dg;
            }
        }
        if i == 0 {
            break;
        }
        // adjoint of the previous layer's activations
        let prev = i - 1;
        let d_act: Vec<T> = (0..aff.in_dim())
            .map(|h| {
                d_pre
                    .iter()
                    .enumerate()
                    .map(|(j, &dg)| aff.weights.get(j, h) * dg)
                    .sum()
            })
            .collect();
        let ht = &trace.hidden[prev];
        let mixing = &net.params.hidden[prev].kaf.mixing;
        let g_mix = &mut grad.hidden[prev].kaf.mixing;
        d_pre = d_act
            .iter()
            .enumerate()
            .map(|(j, &da)| {
                let g = ht.pre[j];
                let mut slope = T::zero();
                for (k, &d_k) in dict.iter().enumerate() {
                    let e = ht.kernels.get(j, k);
                    g_mix.set(j, k, da * e);
                    slope += mixing.get(j, k) * (-two * gamma * e * (g - d_k));
                }
                da * slope
            })
            .collect();
    }
    if !grad.all_finite() {
        return Err(KafError::NonFinite("gradient".into()));
    }
    Ok(grad)
}

fn check_trace<T: Scalar>(net: &Network<T>, trace: &ForwardTrace<T>) -> Result<()> {
    check_dim("trace input", net.input_dim(), trace.input.len())?;
    check_dim("trace hidden layers", net.params.hidden.len(), trace.hidden.len())?;
    for (layer, ht) in net.params.hidden.iter().zip(&trace.hidden) {
        check_dim("trace layer width", layer.affine.out_dim(), ht.pre.len())?;
        check_dim("trace kernels", net.dictionary().len(), ht.kernels.cols())?;
    }
    check_dim("trace logits", net.num_classes(), trace.logits.len())
}

/// Central differences `(l(w + h e_i) - l(w - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_gradient<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    label: usize,
    step: T,
) -> Result<Gradient<T>> {
    if !(step >= T::lit(1e-8) && step <= T::lit(1e-2)) {
        return Err(KafError::InvalidArgument(format!(
            "finite-difference step must lie in [1e-8, 1e-2], got {step}"
        )));
    }
    let mut probe = net.clone();
    let mut grad = net.params.zeros_like();
    for id in net.params.ids() {
        let w0 = net.params.get(id);
        probe.params.set(id, w0 + step);
        let plus = probe.loss(x, label);
        probe.params.set(id, w0 - step);
        let minus = probe.loss(x, label);
        probe.params.set(id, w0);
        let (plus, minus) = match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
            _ => return Err(KafError::NonFinite(format!("loss perturbed along {id}"))),
        };
        grad.set(id, (plus - minus) / (T::two() * step));
    }
    Ok(grad)
}

/// Cross-entropy of one sample together with its gradient.
pub fn loss_and_gradient<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    label: usize,
) -> Result<(T, Gradient<T>)> {
    let trace = net.forward(x)?;
    let loss = cross_entropy(&trace.probs, label)?;
    Ok((loss, backward(net, &trace, label)?))
}

/// `dG/dz` for one pre-activation, via a reverse pass seeded at `node`.
pub fn pre_activation_gradient<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    node: Node,
) -> Result<Gradient<T>> {
    let trace = net.forward(x)?;
    let width = net
        .widths()
        .get(node.layer)
        .copied()
        .ok_or_else(|| KafError::InvalidArgument(format!("no layer {}", node.layer)))?;
    if node.neuron >= width {
        return Err(KafError::InvalidArgument(format!(
            "neuron {} out of range for width {width}",
            node.neuron
        )));
    }
    let mut seed = vec![T::zero(); width];
    seed[node.neuron] = T::one();
    backward_from(net, &trace, node.layer, &seed)
}

/// `(dG/dz, d2G/dz dw)` for the pre-activation at `node`.
///
/// The first derivative comes from a reverse pass; the second is the central difference of
/// that first derivative along `w` with step [`FD_STEP_SECOND`].
pub fn grad_step_derivatives<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    node: Node,
    z: ParamId,
    w: ParamId,
) -> Result<(T, T)> {
    let first = pre_activation_gradient(net, x, node)?.get(z);
    let h = T::lit(FD_STEP_SECOND);
    let mut shifted = net.clone();
    let w0 = net.params.get(w);
    shifted.params.set(w, w0 + h);
    let plus = pre_activation_gradient(&shifted, x, node)?.get(z);
    shifted.params.set(w, w0 - h);
    let minus = pre_activation_gradient(&shifted, x, node)?.get(z);
    let second = (plus - minus) / (T::two() * h);
    if !(first.is_finite() && second.is_finite()) {
        return Err(KafError::NonFinite(format!("derivatives along ({z}, {w})")));
    }
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::{make_dictionary, AffineParams, Parameters};

    fn seeded_net(seed: u64, widths: &[usize], d: usize, gamma: f64) -> Network<f64> {
        check::random_network(&mut crate::rng::stream(seed, 99), 3, widths, d, gamma)
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let mut net =
            Network::<f64>::zeros(2, &[3, 2], make_dictionary(4, 2.0, 1.0).unwrap()).unwrap();
        net.params.output.biases = vec![800.0, -800.0];
        let trace = net.forward(&[0.3, 0.1]).unwrap();
        assert_eq!(trace.probs, vec![1.0, 0.0]);
        let g = backward(&net, &trace, 0).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_mixing_kills_hidden_affine_gradient() {
        let mut net = seeded_net(3, &[4, 3, 2], 5, 1.0);
        for h in &mut net.params.hidden {
            h.kaf.mixing = Matrix::zeros(h.kaf.mixing.rows(), h.kaf.mixing.cols());
        }
        let x = [0.2, -0.4, 1.0];
        let g = backward(&net, &net.forward(&x).unwrap(), 1).unwrap();
        for h in &g.hidden {
            assert!(h.affine.weights.as_slice().iter().all(|&v| v == 0.0));
            assert!(h.affine.biases.iter().all(|&v| v == 0.0));
        }
        // mixing of the last hidden layer still receives gradient
        assert!(g.hidden[1].kaf.mixing.max_abs() > 0.0);
    }

    #[test]
    fn mixing_gradient_is_adjoint_times_kernel() {
        let net = seeded_net(5, &[3, 2], 6, 0.1);
        let x = [0.5, 0.25, -1.0];
        let trace = net.forward(&x).unwrap();
        let g = backward(&net, &trace, 1).unwrap();
        let mut seed = trace.probs.clone();
        seed[1] -= 1.0;
        for j in 0..3 {
            let d_act: f64 = (0..2).map(|c| net.params.output.weights.get(c, j) * seed[c]).sum();
            for k in 0..6 {
                let expect = d_act * trace.hidden[0].kernels.get(j, k);
                assert!((g.hidden[0].kaf.mixing.get(j, k) - expect).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn matches_finite_differences() {
        let net = seeded_net(11, &[5, 4, 3], 7, 1.0);
        let x = [0.3, -0.8, 0.5];
        let g = backward(&net, &net.forward(&x).unwrap(), 2).unwrap();
        let fd = finite_diff_gradient(&net, &x, 2, FD_STEP).unwrap();
        for (a, b) in g.to_flat().iter().zip(fd.to_flat()) {
            assert!(check::coordinate_ok(*a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn finite_differences_on_constant_loss() {
        let net =
            Network::<f64>::zeros(2, &[3, 2], make_dictionary(4, 2.0, 1.0).unwrap()).unwrap();
        let fd = finite_diff_gradient(&net, &[1.0, 2.0], 0, 1e-5).unwrap();
        // only the output layer can move the logits of a zero network
        for h in &fd.hidden {
            assert!(h.affine.weights.max_abs() <= 1e-9);
            assert!(h.kaf.mixing.max_abs() <= 1e-9);
        }
        assert!(finite_diff_gradient(&net, &[1.0, 2.0], 0, 0.5).is_err());
    }

    #[test]
    fn single_weight_toy_matches_hand_derivative() {
        // only the output weight W_211 is non-zero; logits = [w * A_11, 0] with A_11 = 1
        let dict = make_dictionary(2, 1.0, 1.0).unwrap();
        let mut params = Parameters::<f64>::zeros(1, &[1, 2], 2);
        params.hidden[0].affine.biases[0] = -1.0;
        params.hidden[0].kaf.mixing.set(0, 0, 1.0);
        let w = 0.7;
        params.output = AffineParams::new(Matrix::from_rows(&[vec![w], vec![0.0]]).unwrap(), vec![0.0, 0.0]).unwrap();
        let net = Network::new(1, params, dict).unwrap();
        let act = net.forward(&[0.0]).unwrap().hidden[0].activations[0];
        assert_eq!(act, 1.0);
        // l(w) = -ln(e^0 / (e^w + e^0)) = ln(1 + e^w), l'(w) = sigmoid(w)
        let expect = 1.0 / (1.0 + (-w).exp());
        let fd = finite_diff_gradient(&net, &[0.0], 1, 1e-5).unwrap();
        let id = ParamId::Weight { layer: 1, row: 0, col: 0 };
        assert!((fd.get(id) - expect).abs() < 1e-7);
        let g = backward(&net, &net.forward(&[0.0]).unwrap(), 1).unwrap();
        assert!((g.get(id) - expect).abs() < 1e-12);
    }

    #[test]
    fn first_layer_second_derivatives_vanish() {
        let net = seeded_net(21, &[3, 2], 4, 1.0);
        let x = [0.1, 0.2, 0.3];
        let node = Node { layer: 0, neuron: 1 };
        let ids: Vec<ParamId> = net.params.ids().into_iter().filter(|id| id.layer() == 0).collect();
        for &z in ids.iter().step_by(3) {
            for &w in ids.iter().step_by(4) {
                let (_, second) = grad_step_derivatives(&net, &x, node, z, w).unwrap();
                assert!(second.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn bias_derivative_is_one() {
        let net = seeded_net(22, &[3, 4, 2], 5, 0.1);
        let x = [0.4, -0.2, 0.9];
        for (layer, width) in [(0, 3), (1, 4), (2, 2)] {
            for j in 0..width {
                let node = Node { layer, neuron: j };
                let z = ParamId::Bias { layer, row: j };
                let (first, _) = grad_step_derivatives(&net, &x, node, z, z).unwrap();
                assert_eq!(first, 1.0);
            }
        }
    }

    #[test]
    fn mixed_partials_are_symmetric() {
        let net = seeded_net(23, &[4, 2], 5, 1.0);
        let x = [0.4, -0.2, 0.9];
        let ids = net.params.ids();
        let node = Node { layer: 1, neuron: 0 };
        let mut rng = crate::rng::stream(23, 0);
        use rand::Rng as _;
        for _ in 0..40 {
            let z = ids[rng.random_range(0..ids.len())];
            let w = ids[rng.random_range(0..ids.len())];
            let (_, zw) = grad_step_derivatives(&net, &x, node, z, w).unwrap();
            let (_, wz) = grad_step_derivatives(&net, &x, node, w, z).unwrap();
            assert!((zw - wz).abs() <= 1e-5, "{z} {w}: {zw} vs {wz}");
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let net = seeded_net(1, &[3, 2], 4, 1.0);
        let other = seeded_net(1, &[4, 2], 4, 1.0);
        let trace = other.forward(&[0.0, 0.0, 0.0]).unwrap();
        assert!(backward(&net, &trace, 0).is_err());
        assert!(backward(&net, &net.forward(&[0.0; 3]).unwrap(), 2).is_err());
    }
}
