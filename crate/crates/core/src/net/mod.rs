//! Kafnet model and forward pass.
//!
//! Hidden layer `i` computes, for every neuron `j`,
//!
//! ```text
//! G_ij = sum_h W_ijh * A_(i-1)h + b_ij
//! E_ijk = exp(-gamma * (G_ij - d_k)^2)
//! A_ij = sum_k alpha_ijk * E_ijk
//! ```
//!
//! with `A_0h = x_h`. The output layer is affine followed by a softmax; the dictionary
//! `d_1..d_D` and `gamma` are fixed and shared by every hidden neuron.

mod format;

use std::fmt;

use crate::error::{check_dim, KafError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub use format::{read_network, write_network};

/// Probability floor applied before the logarithm in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Fixed kernel centres shared by all hidden neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T> {
    elements: Vec<T>,
    range_r: T,
    gamma: T,
}

impl<T: Scalar> Dictionary<T> {
    /// Uniform grid of `d` points from `-range_r` to `range_r` inclusive.
    pub fn grid(d: usize, range_r: T, gamma: T) -> Result<Self> {
        if d < 2 {
            return Err(KafError::InvalidArgument(format!(
                "dictionary size must be at least 2, got {d}"
            )));
        }
        if !(range_r > T::zero() && range_r.is_finite()) {
            return Err(KafError::InvalidArgument(format!(
                "dictionary range must be positive, got {range_r}"
            )));
        }
        let step = T::two() * range_r / T::lit((d - 1) as f64);
        let elements = (0..d)
            .map(|k| {
                if k == d - 1 {
                    range_r
                } else {
                    -range_r + step * T::lit(k as f64)
                }
            })
            .collect();
        Self::from_elements(elements, range_r, gamma)
    }

    /// Arbitrary strictly increasing elements inside `[-range_r, range_r]`.
    pub fn from_elements(elements: Vec<T>, range_r: T, gamma: T) -> Result<Self> {
        if elements.is_empty() {
            return Err(KafError::InvalidArgument("empty dictionary".into()));
        }
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(KafError::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(range_r > T::zero() && range_r.is_finite()) {
            return Err(KafError::InvalidArgument(format!(
                "dictionary range must be positive, got {range_r}"
            )));
        }
        if elements.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(KafError::InvalidArgument(
                "dictionary elements must be strictly increasing".into(),
            ));
        }
        if elements.iter().any(|d| !(d.abs() <= range_r)) {
            return Err(KafError::InvalidArgument(format!(
                "dictionary elements must lie in [-{range_r}, {range_r}]"
            )));
        }
        Ok(Self {
            elements,
            range_r,
            gamma,
        })
    }

    pub fn elements(&self) -> &[T] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn range_r(&self) -> T {
        self.range_r
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Same elements with a different inverse bandwidth.
    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        Self::from_elements(self.elements.clone(), self.range_r, gamma)
    }

    /// Whether the elements are exactly the grid [`Dictionary::grid`] would produce.
    pub fn is_grid(&self) -> bool {
        Self::grid(self.len(), self.range_r, self.gamma)
            .map(|g| g.elements == self.elements)
            .unwrap_or(false)
    }
}

/// Grid dictionary constructor, see [`Dictionary::grid`].
pub fn make_dictionary<T: Scalar>(d: usize, range_r: T, gamma: T) -> Result<Dictionary<T>> {
    if !(gamma > T::zero()) {
        return Err(KafError::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Dictionary::grid(d, range_r, gamma)
}

/// Gaussian kernel `exp(-gamma (s - d_k)^2)`.
#[inline]
pub fn kernel_eval<T: Scalar>(s: T, d_k: T, gamma: T) -> T {
    let diff = s - d_k;
    (-gamma * diff * diff).exp()
}

/// Kernel expansion `sum_k alpha_k kappa(s, d_k)`.
pub fn kaf_eval<T: Scalar>(s: T, mixing_row: &[T], dict: &Dictionary<T>) -> Result<T> {
    check_dim("kaf mixing row", dict.len(), mixing_row.len())?;
    Ok(mixing_row
        .iter()
        .zip(dict.elements())
        .map(|(&a, &d)| a * kernel_eval(s, d, dict.gamma()))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams<T> {
    /// `out_dim x in_dim`
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> AffineParams<T> {
    pub fn new(weights: Matrix<T>, biases: Vec<T>) -> Result<Self> {
        check_dim("affine biases", weights.rows(), biases.len())?;
        Ok(Self { weights, biases })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            biases: vec![T::zero(); out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// `W u + b`.
pub fn affine_eval<T: Scalar>(input: &[T], params: &AffineParams<T>) -> Result<Vec<T>> {
    check_dim("affine input", params.in_dim(), input.len())?;
    Ok((0..params.out_dim())
        .map(|j| {
            params
                .weights
                .row(j)
                .iter()
                .zip(input)
                .map(|(&w, &u)| w * u)
                .sum::<T>()
                + params.biases[j]
        })
        .collect())
}

/// Per-neuron mixing coefficients, `width x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct KafParams<T> {
    pub mixing: Matrix<T>,
}

impl<T: Scalar> KafParams<T> {
    pub fn zeros(width: usize, d: usize) -> Self {
        Self {
            mixing: Matrix::zeros(width, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    pub affine: AffineParams<T>,
    pub kaf: KafParams<T>,
}

/// Location of a single trainable scalar. Layers are 0-based; the last layer is the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
    Mixing { layer: usize, neuron: usize, k: usize },
}

impl ParamId {
    pub fn layer(&self) -> usize {
        match *self {
            ParamId::Weight { layer, .. }
            | ParamId::Bias { layer, .. }
            | ParamId::Mixing { layer, .. } => layer,
        }
    }
}

impl fmt::Display for ParamId {
    // 1-based, matching the usual W_ijh / b_ij / alpha_ijk naming
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ParamId::Weight { layer, row, col } => {
                write!(f, "W[{},{},{}]", layer + 1, row + 1, col + 1)
            }
            ParamId::Bias { layer, row } => write!(f, "b[{},{}]", layer + 1, row + 1),
            ParamId::Mixing { layer, neuron, k } => {
                write!(f, "alpha[{},{},{}]", layer + 1, neuron + 1, k + 1)
            }
        }
    }
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub hidden: Vec<HiddenLayer<T>>,
    pub output: AffineParams<T>,
}

impl<T: Scalar> Parameters<T> {
    /// Zero parameters for `input_dim` inputs and widths `H_1..H_Q`.
    pub fn zeros(input_dim: usize, widths: &[usize], d: usize) -> Self {
        assert!(!widths.is_empty(), "at least the output width is required");
        let mut fan_in = input_dim;
        let mut hidden = Vec::with_capacity(widths.len() - 1);
        for &w in &widths[..widths.len() - 1] {
            hidden.push(HiddenLayer {
                affine: AffineParams::zeros(w, fan_in),
                kaf: KafParams::zeros(w, d),
            });
            fan_in = w;
        }
        Self {
            hidden,
            output: AffineParams::zeros(widths[widths.len() - 1], fan_in),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.map_inplace(|_| T::zero());
        z
    }

    /// Number of layers `Q`, output included.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn affine(&self, layer: usize) -> &AffineParams<T> {
        if layer < self.hidden.len() {
            &self.hidden[layer].affine
        } else {
            &self.output
        }
    }

    fn affine_mut(&mut self, layer: usize) -> &mut AffineParams<T> {
        if layer < self.hidden.len() {
            &mut self.hidden[layer].affine
        } else {
            &mut self.output
        }
    }

    /// Parameter slices in canonical order: per layer weights (row-major), biases, mixing.
    fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(3 * self.depth());
        for layer in &self.hidden {
            out.push(layer.affine.weights.as_slice());
            out.push(&layer.affine.biases[..]);
            out.push(layer.kaf.mixing.as_slice());
        }
        out.push(self.output.weights.as_slice());
        out.push(&self.output.biases[..]);
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(3 * self.depth());
        for layer in &mut self.hidden {
            out.push(layer.affine.weights.as_mut_slice());
            out.push(&mut layer.affine.biases[..]);
            out.push(layer.kaf.mixing.as_mut_slice());
        }
        out.push(self.output.weights.as_mut_slice());
        out.push(&mut self.output.biases[..]);
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Identifiers in the same order as [`Parameters::to_flat`].
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(self.len());
        for layer in 0..self.depth() {
            let aff = self.affine(layer);
            for row in 0..aff.out_dim() {
                for col in 0..aff.in_dim() {
                    ids.push(ParamId::Weight { layer, row, col });
                }
            }
            for row in 0..aff.out_dim() {
                ids.push(ParamId::Bias { layer, row });
            }
            if let Some(h) = self.hidden.get(layer) {
                for neuron in 0..h.kaf.mixing.rows() {
                    for k in 0..h.kaf.mixing.cols() {
                        ids.push(ParamId::Mixing { layer, neuron, k });
                    }
                }
            }
        }
        ids
    }

    pub fn get(&self, id: ParamId) -> T {
        match id {
            ParamId::Weight { layer, row, col } => self.affine(layer).weights.get(row, col),
            ParamId::Bias { layer, row } => self.affine(layer).biases[row],
            ParamId::Mixing { layer, neuron, k } => self.hidden[layer].kaf.mixing.get(neuron, k),
        }
    }

    pub fn set(&mut self, id: ParamId, v: T) {
        match id {
            ParamId::Weight { layer, row, col } => {
                self.affine_mut(layer).weights.set(row, col, v)
            }
            ParamId::Bias { layer, row } => self.affine_mut(layer).biases[row] = v,
            ParamId::Mixing { layer, neuron, k } => {
                self.hidden[layer].kaf.mixing.set(neuron, k, v)
            }
        }
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        check_dim("flat parameters", self.len(), flat.len())?;
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(T) -> T) {
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v = f(*v);
            }
        }
    }

    /// Element-wise combination with a congruent parameter set.
    pub fn zip_inplace(&mut self, other: &Self, mut f: impl FnMut(T, T) -> T) -> Result<()> {
        check_dim("parameter sets", self.len(), other.len())?;
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            check_dim("parameter block", dst.len(), src.len())?;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = f(*d, s);
            }
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: T, other: &Self) -> Result<()> {
        self.zip_inplace(other, |a, b| a + scale * b)
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> T {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    /// Same layer shapes (not values).
    pub fn congruent(&self, other: &Self) -> bool {
        self.hidden.len() == other.hidden.len()
            && self
                .slices()
                .iter()
                .zip(other.slices())
                .all(|(a, b)| a.len() == b.len())
            && self
                .hidden
                .iter()
                .zip(&other.hidden)
                .all(|(a, b)| {
                    a.affine.weights.rows() == b.affine.weights.rows()
                        && a.kaf.mixing.cols() == b.kaf.mixing.cols()
                })
    }
}

/// Feed-forward network with KAF hidden layers and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_dim: usize,
    pub params: Parameters<T>,
    dictionary: Dictionary<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_dim: usize, params: Parameters<T>, dictionary: Dictionary<T>) -> Result<Self> {
        if input_dim == 0 {
            return Err(KafError::InvalidArgument("input dimension must be positive".into()));
        }
        if params.hidden.is_empty() {
            return Err(KafError::InvalidArgument(
                "a Kafnet needs at least one hidden layer".into(),
            ));
        }
        let mut fan_in = input_dim;
        for layer in &params.hidden {
            check_dim("hidden layer input", fan_in, layer.affine.in_dim())?;
            check_dim("hidden layer biases", layer.affine.out_dim(), layer.affine.biases.len())?;
            check_dim("mixing rows", layer.affine.out_dim(), layer.kaf.mixing.rows())?;
            check_dim("mixing columns", dictionary.len(), layer.kaf.mixing.cols())?;
            if layer.affine.out_dim() == 0 {
                return Err(KafError::InvalidArgument("layer width must be positive".into()));
            }
            fan_in = layer.affine.out_dim();
        }
        check_dim("output layer input", fan_in, params.output.in_dim())?;
        check_dim("output biases", params.output.out_dim(), params.output.biases.len())?;
        if params.output.out_dim() == 0 {
            return Err(KafError::InvalidArgument("output width must be positive".into()));
        }
        if !params.all_finite() {
            return Err(KafError::NonFinite("network parameters".into()));
        }
        Ok(Self {
            input_dim,
            params,
            dictionary,
        })
    }

    /// All-zero network with widths `H_1..H_Q` (the last entry is the class count).
    pub fn zeros(input_dim: usize, widths: &[usize], dictionary: Dictionary<T>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(KafError::InvalidArgument(format!(
                "need at least one hidden layer and an output layer, got {} widths",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(KafError::InvalidArgument("layer width must be positive".into()));
        }
        let params = Parameters::zeros(input_dim, widths, dictionary.len());
        Self::new(input_dim, params, dictionary)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn dictionary(&self) -> &Dictionary<T> {
        &self.dictionary
    }

    pub fn gamma(&self) -> T {
        self.dictionary.gamma()
    }

    /// Copy with a different inverse bandwidth; parameters unchanged.
    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        Ok(Self {
            input_dim: self.input_dim,
            params: self.params.clone(),
            dictionary: self.dictionary.with_gamma(gamma)?,
        })
    }

    /// `Q`: hidden layers plus the output layer.
    pub fn depth(&self) -> usize {
        self.params.depth()
    }

    /// `H_1..H_Q`.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.depth())
            .map(|i| self.params.affine(i).out_dim())
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.params.output.out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[T]) -> Result<ForwardTrace<T>> {
        forward(self, x)
    }

    /// Cross-entropy of one sample.
    pub fn loss(&self, x: &[T], label: usize) -> Result<T> {
        cross_entropy(&self.forward(x)?.probs, label)
    }

    /// Replace parameters, keeping architecture and dictionary.
    pub fn with_params(&self, params: Parameters<T>) -> Result<Self> {
        if !self.params.congruent(&params) {
            return Err(KafError::InvalidArgument("parameter shapes differ".into()));
        }
        Self::new(self.input_dim, params, self.dictionary.clone())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let cast_aff = |a: &AffineParams<T>| AffineParams {
            weights: a.weights.cast(),
            biases: a.biases.iter().map(|v| U::lit(v.as_f64())).collect(),
        };
        let dict = Dictionary {
            elements: self.dictionary.elements.iter().map(|v| U::lit(v.as_f64())).collect(),
            range_r: U::lit(self.dictionary.range_r.as_f64()),
            gamma: U::lit(self.dictionary.gamma.as_f64()),
        };
        Network {
            input_dim: self.input_dim,
            params: Parameters {
                hidden: self
                    .params
                    .hidden
                    .iter()
                    .map(|h| HiddenLayer {
                        affine: cast_aff(&h.affine),
                        kaf: KafParams {
                            mixing: h.kaf.mixing.cast(),
                        },
                    })
                    .collect(),
                output: cast_aff(&self.params.output),
            },
            dictionary: dict,
        }
    }
}

/// Intermediate values of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace<T> {
    /// `G_ij`
    pub pre: Vec<T>,
    /// `E_ijk`, `width x D`
    pub kernels: Matrix<T>,
    /// `A_ij`
    pub activations: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub hidden: Vec<HiddenTrace<T>>,
    /// `G_Qj`
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Pre-activations of layer `layer` (0-based; the last one is the logits).
    pub fn pre(&self, layer: usize) -> &[T] {
        if layer < self.hidden.len() {
            &self.hidden[layer].pre
        } else {
            &self.logits
        }
    }

    /// Input to layer `layer`: `x` for the first one, otherwise the previous activations.
    pub fn layer_input(&self, layer: usize) -> &[T] {
        if layer == 0 {
            &self.input
        } else {
            &self.hidden[layer - 1].activations
        }
    }
}

pub fn forward<T: Scalar>(net: &Network<T>, x: &[T]) -> Result<ForwardTrace<T>> {
    check_dim("network input", net.input_dim, x.len())?;
    let dict = &net.dictionary;
    let gamma = dict.gamma();
    let mut hidden = Vec::with_capacity(net.params.hidden.len());
    let mut current: Vec<T> = x.to_vec();
    for (i, layer) in net.params.hidden.iter().enumerate() {
        let pre = affine_eval(&current, &layer.affine)?;
        let width = pre.len();
        let kernels = Matrix::from_fn(width, dict.len(), |j, k| {
            kernel_eval(pre[j], dict.elements()[k], gamma)
        });
        let activations: Vec<T> = (0..width)
            .map(|j| {
                layer
                    .kaf
                    .mixing
                    .row(j)
                    .iter()
                    .zip(kernels.row(j))
                    .map(|(&a, &e)| a * e)
                    .sum()
            })
            .collect();
        if !pre.iter().chain(&activations).all(|v| v.is_finite()) {
            return Err(KafError::NonFinite(format!("hidden layer {}", i + 1)));
        }
        current = activations.clone();
        hidden.push(HiddenTrace {
            pre,
            kernels,
            activations,
        });
    }
    let logits = affine_eval(&current, &net.params.output)?;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(KafError::NonFinite("output logits".into()));
    }
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        input: x.to_vec(),
        hidden,
        logits,
        probs,
    })
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln p[label]`, with `p[label]` floored at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<T> {
    let p = *probs.get(label).ok_or_else(|| {
        KafError::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        ))
    })?;
    if !p.is_finite() {
        return Err(KafError::NonFinite("probability".into()));
    }
    Ok(-p.max(T::lit(PROB_FLOOR)).ln())
}

/// Mean cross-entropy over `(features, label)` samples.
pub fn empirical_risk<'a, T, I>(net: &Network<T>, samples: I) -> Result<T>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a [T], usize)>,
{
    let mut total = T::zero();
    let mut count = 0usize;
    for (x, y) in samples {
        total += net.loss(x, y)?;
        count += 1;
    }
    if count == 0 {
        return Err(KafError::EmptyDataset);
    }
    Ok(total / T::lit(count as f64))
}
