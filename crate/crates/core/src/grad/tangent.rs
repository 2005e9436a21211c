//! Forward-mode first and second derivatives of every pre-activation.
//!
//! For a pair of parameters `(z, w)` the pass carries `G`, `G'(z)`, `G'(w)` and `G''(z, w)`
//! layer by layer using
//!
//! ```text
//! E'(z)     = -2 gamma E (G - d) G'(z)
//! E''(z,w)  = -2 gamma E [(1 - 2 gamma (G - d)^2) G'(z) G'(w) + (G - d) G''(z,w)]
//! A'(z)     = sum_k alpha_k E'_k(z)          + [z = alpha_k] E_k
//! A''(z,w)  = sum_k alpha_k E''_k(z,w)       + [z = alpha_k] E'_k(w) + [w = alpha_k] E'_k(z)
//! G'(z)     = sum_h W_h A'_h(z)              + [z = W_h] A_h + [z = b]
//! G''(z,w)  = sum_h W_h A''_h(z,w)           + [z = W_h] A'_h(w) + [w = W_h] A'_h(z)
//! ```

use crate::error::Result;
use crate::net::{kernel_eval, Network, ParamId};
use crate::scalar::Scalar;

/// Derivatives of the pre-activations of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDerivatives<T> {
    pub pre: Vec<T>,
    pub d_z: Vec<T>,
    pub d_w: Vec<T>,
    pub d_zw: Vec<T>,
}

/// One [`LayerDerivatives`] per layer, output logits last.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderTrace<T> {
    pub layers: Vec<LayerDerivatives<T>>,
}

/// Activations of a layer with their derivatives along `z`, `w` and `(z, w)`.
struct Jet<T> {
    v: Vec<T>,
    d_z: Vec<T>,
    d_w: Vec<T>,
    d_zw: Vec<T>,
}

fn weight_hit(id: ParamId, layer: usize, row: usize) -> Option<usize> {
    match id {
        ParamId::Weight { layer: l, row: r, col } if l == layer && r == row => Some(col),
        _ => None,
    }
}

fn bias_hit(id: ParamId, layer: usize, row: usize) -> bool {
    matches!(id, ParamId::Bias { layer: l, row: r } if l == layer && r == row)
}

fn mixing_hit(id: ParamId, layer: usize, neuron: usize) -> Option<usize> {
    match id {
        ParamId::Mixing { layer: l, neuron: n, k } if l == layer && n == neuron => Some(k),
        _ => None,
    }
}

pub fn second_order<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    z: ParamId,
    w: ParamId,
) -> Result<SecondOrderTrace<T>> {
    crate::error::check_dim("network input", net.input_dim(), x.len())?;
    let zero = T::zero();
    let two = T::two();
    let gamma = net.gamma();
    let dict = net.dictionary().elements();
    let mut input = Jet {
        v: x.to_vec(),
        d_z: vec![zero; x.len()],
        d_w: vec![zero; x.len()],
        d_zw: vec![zero; x.len()],
    };
    let mut layers = Vec::with_capacity(net.depth());
    for i in 0..net.depth() {
        let aff = net.params.affine(i);
        let width = aff.out_dim();
        let mut out = LayerDerivatives {
            pre: Vec::with_capacity(width),
            d_z: Vec::with_capacity(width),
            d_w: Vec::with_capacity(width),
            d_zw: Vec::with_capacity(width),
        };
        for j in 0..width {
            let row = aff.weights.row(j);
            let dot = |u: &[T]| row.iter().zip(u).map(|(&a, &b)| a * b).sum::<T>();
            let g = dot(&input.v) + aff.biases[j];
            let mut gz = dot(&input.d_z);
            let mut gw = dot(&input.d_w);
            let mut gzw = dot(&input.d_zw);
            if let Some(h) = weight_hit(z, i, j) {
                gz += input.v[h];
                gzw += input.d_w[h];
            }
            if let Some(h) = weight_hit(w, i, j) {
                gw += input.v[h];
                gzw += input.d_z[h];
            }
            if bias_hit(z, i, j) {
                gz += T::one();
            }
            if bias_hit(w, i, j) {
                gw += T::one();
            }
            out.pre.push(g);
            out.d_z.push(gz);
            out.d_w.push(gw);
            out.d_zw.push(gzw);
        }

        if let Some(hidden) = net.params.hidden.get(i) {
            let mixing = &hidden.kaf.mixing;
            let mut next = Jet {
                v: Vec::with_capacity(width),
                d_z: Vec::with_capacity(width),
                d_w: Vec::with_capacity(width),
                d_zw: Vec::with_capacity(width),
            };
            for j in 0..width {
                let (g, gz, gw, gzw) = (out.pre[j], out.d_z[j], out.d_w[j], out.d_zw[j]);
                let (mut a, mut az, mut aw, mut azw) = (zero, zero, zero, zero);
                let kz = mixing_hit(z, i, j);
                let kw = mixing_hit(w, i, j);
                for (k, &d_k) in dict.iter().enumerate() {
                    let e = kernel_eval(g, d_k, gamma);
                    let diff = g - d_k;
                    let ez = -two * gamma * e * diff * gz;
                    let ew = -two * gamma * e * diff * gw;
                    let ezw = -two
                        * gamma
                        * e
                        * ((T::one() - two * gamma * diff * diff) * gz * gw + diff * gzw);
                    let alpha = mixing.get(j, k);
                    a += alpha * e;
                    az += alpha * ez;
                    aw += alpha * ew;
                    azw += alpha * ezw;
                    if kz == Some(k) {
                        az += e;
                        azw += ew;
                    }
                    if kw == Some(k) {
                        aw += e;
                        azw += ez;
                    }
                }
                next.v.push(a);
                next.d_z.push(az);
                next.d_w.push(aw);
                next.d_zw.push(azw);
            }
            input = next;
        }
        layers.push(out);
    }
    Ok(SecondOrderTrace { layers })
}
