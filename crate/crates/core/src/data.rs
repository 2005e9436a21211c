//! Two-class synthetic data: clusters on the vertices of a square plus label-independent noise
//! features.
//!
//! The four vertices `(+-class_sep, +-class_sep)` are shuffled and split two per class. Each
//! class is divided evenly between its two vertices; a sample is its vertex plus isotropic
//! Gaussian noise of scale `cluster_std`. Two further standard-normal columns carry no label
//! information. Rows are shuffled at the end.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KafError, Result};
use crate::rng::{self, streams};
use crate::scalar::Scalar;

pub const INFORMATIVE_DIMS: usize = 2;
pub const NOISE_DIMS: usize = 2;
pub const DEFAULT_CLASS_SEP: f64 = 1.0;
pub const DEFAULT_CLUSTER_STD: f64 = 1.0;

/// How a dataset was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub informative_dims: usize,
    pub noise_dims: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    /// `None` for data read from disk.
    pub provenance: Option<Provenance>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Vec<Vec<T>>, labels: Vec<usize>) -> Result<Self> {
        crate::error::check_dim("labels", features.len(), labels.len())?;
        if let Some(first) = features.first() {
            for row in &features {
                crate::error::check_dim("feature row", first.len(), row.len())?;
            }
        }
        Ok(Self {
            features,
            labels,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension `m` (0 when empty).
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn sample(&self, i: usize) -> (&[T], usize) {
        (&self.features[i], self.labels[i])
    }

    pub fn samples(&self) -> impl Iterator<Item = (&[T], usize)> + '_ {
        self.features.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.features.iter().map(Vec::as_slice)
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.labels {
            if y < classes {
                counts[y] += 1;
            }
        }
        counts
    }

    fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            features: self.features[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
            provenance: self.provenance,
        }
    }
}

/// Balanced two-class dataset of `n` rows with `INFORMATIVE_DIMS + NOISE_DIMS` features.
pub fn generate<T: Scalar>(
    n: usize,
    seed: u64,
    class_sep: f64,
    cluster_std: f64,
) -> Result<Dataset<T>> {
    if n < 4 || n % 2 != 0 {
        return Err(KafError::InvalidArgument(format!(
            "sample count must be even and at least 4, got {n}"
        )));
    }
    if !(class_sep > 0.0 && class_sep.is_finite()) || !(cluster_std >= 0.0 && cluster_std.is_finite()) {
        return Err(KafError::InvalidArgument(format!(
            "class_sep must be positive and cluster_std non-negative, got {class_sep}, {cluster_std}"
        )));
    }
    let mut rng = rng::stream(seed, streams::DATA);
    let mut vertices = [
        [-class_sep, -class_sep],
        [-class_sep, class_sep],
        [class_sep, -class_sep],
        [class_sep, class_sep],
    ];
    vertices.shuffle(&mut rng);

    let per_class = n / 2;
    let mut rows: Vec<(Vec<T>, usize)> = Vec::with_capacity(n);
    for label in 0..2 {
        for i in 0..per_class {
            let vertex = vertices[2 * label + i % 2];
            let mut row = Vec::with_capacity(INFORMATIVE_DIMS + NOISE_DIMS);
            for &c in &vertex {
                let e: f64 = StandardNormal.sample(&mut rng);
                row.push(T::lit(c + cluster_std * e));
            }
            for _ in 0..NOISE_DIMS {
                let e: f64 = StandardNormal.sample(&mut rng);
                row.push(T::lit(e));
            }
            rows.push((row, label));
        }
    }
    rows.shuffle(&mut rng);
    let (features, labels) = rows.into_iter().unzip();
    Ok(Dataset {
        features,
        labels,
        provenance: Some(Provenance {
            seed,
            informative_dims: INFORMATIVE_DIMS,
            noise_dims: NOISE_DIMS,
        }),
    })
}

/// First `n_train` rows and the rest.
pub fn split<T: Scalar>(ds: &Dataset<T>, n_train: usize) -> Result<(Dataset<T>, Dataset<T>)> {
    if n_train == 0 || n_train >= ds.len() {
        return Err(KafError::InvalidArgument(format!(
            "training size must lie in 1..{}, got {n_train}",
            ds.len()
        )));
    }
    Ok((ds.subset(0..n_train), ds.subset(n_train..ds.len())))
}

pub fn write_csv<T: Scalar, W: Write>(ds: &Dataset<T>, mut out: W) -> Result<()> {
    let header: Vec<String> = (1..=ds.dim()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},label", header.join(","))?;
    for (x, y) in ds.samples() {
        let cells: Vec<String> = x.iter().map(|v| v.to_exact_string()).collect();
        writeln!(out, "{},{y}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_csv<T: Scalar, R: BufRead>(input: R) -> Result<Dataset<T>> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(KafError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    let m = cols.len().saturating_sub(1);
    let header_ok = m >= 1
        && cols[m] == "label"
        && cols[..m]
            .iter()
            .enumerate()
            .all(|(i, c)| *c == format!("x{}", i + 1));
    if !header_ok {
        return Err(KafError::Parse {
            line: 1,
            message: format!("expected header x1,...,xm,label, found `{}`", header.trim()),
        });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| KafError::Parse {
            line: line_no,
            message,
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != m + 1 {
            return Err(err(format!(
                "expected {} features and a label, found {} fields",
                m,
                cells.len()
            )));
        }
        let row = cells[..m]
            .iter()
            .map(|c| c.trim().parse::<T>().map_err(|_| err(format!("invalid number `{c}`"))))
            .collect::<Result<Vec<T>>>()?;
        let label = cells[m]
            .trim()
            .parse::<usize>()
            .map_err(|_| err(format!("invalid label `{}`", cells[m])))?;
        features.push(row);
        labels.push(label);
    }
    Dataset::new(features, labels)
}
