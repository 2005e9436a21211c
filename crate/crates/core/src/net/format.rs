//! Line-oriented text format for networks.
//!
//! ```text
//! kafnet v1 m=<m> Q=<Q> D=<D> R=<R> gamma=<g> widths=<h1,...,hQ>
//! layer 1 hidden
//! weights
//! <H_1 rows of m values>
//! biases
//! <H_1 values>
//! mixing
//! <H_1 rows of D values>
//! ...
//! layer Q output
//! weights
//! <H_Q rows of H_(Q-1) values>
//! biases
//! <H_Q values>
//! ```
//!
//! Values are space separated and printed with enough significant digits to parse back
//! bit-exactly. The dictionary is the grid defined by `D` and `R`.

use std::io::{BufRead, Write};

use super::{AffineParams, Dictionary, HiddenLayer, KafParams, Network, Parameters};
use crate::error::{KafError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub fn write_network<T: Scalar, W: Write>(net: &Network<T>, mut out: W) -> Result<()> {
    let dict = net.dictionary();
    if !dict.is_grid() {
        return Err(KafError::InvalidArgument(
            "only grid dictionaries can be serialized".into(),
        ));
    }
    let widths: Vec<String> = net.widths().iter().map(usize::to_string).collect();
    writeln!(
        out,
        "kafnet v1 m={} Q={} D={} R={} gamma={} widths={}",
        net.input_dim(),
        net.depth(),
        dict.len(),
        dict.range_r().to_exact_string(),
        dict.gamma().to_exact_string(),
        widths.join(",")
    )?;
    let q = net.depth();
    for i in 0..q {
        let kind = if i + 1 < q { "hidden" } else { "output" };
        writeln!(out, "layer {} {kind}", i + 1)?;
        let aff = net.params.affine(i);
        writeln!(out, "weights")?;
        write_matrix(&mut out, &aff.weights)?;
        writeln!(out, "biases")?;
        write_row(&mut out, &aff.biases)?;
        if let Some(h) = net.params.hidden.get(i) {
            writeln!(out, "mixing")?;
            write_matrix(&mut out, &h.kaf.mixing)?;
        }
    }
    Ok(())
}

fn write_row<T: Scalar, W: Write>(out: &mut W, row: &[T]) -> Result<()> {
    let cells: Vec<String> = row.iter().map(|v| v.to_exact_string()).collect();
    writeln!(out, "{}", cells.join(" "))?;
    Ok(())
}

fn write_matrix<T: Scalar, W: Write>(out: &mut W, m: &Matrix<T>) -> Result<()> {
    for r in 0..m.rows() {
        write_row(out, m.row(r))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line_no += 1;
            match self.inner.next() {
                Some(line) => {
                    let line = line?;
                    let trimmed = line.trim();
                    if !trimmed.is_empty() {
                        return Ok(trimmed.to_string());
                    }
                }
                None => return Err(self.err("unexpected end of file")),
            }
        }
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let got = self.next_line()?;
        if got == want {
            Ok(())
        } else {
            Err(self.err(format!("expected `{want}`, found `{got}`")))
        }
    }

    fn row<T: Scalar>(&mut self, len: usize) -> Result<Vec<T>> {
        let line = self.next_line()?;
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<T>()
                    .map_err(|_| self.err(format!("invalid number `{tok}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if values.len() != len {
            return Err(self.err(format!("expected {len} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row::<T>(cols)?);
        }
        Matrix::from_vec(rows, cols, data)
    }

    fn err(&self, message: impl Into<String>) -> KafError {
        KafError::Parse {
            line: self.line_no,
            message: message.into(),
        }
    }
}

fn header_field<'a>(fields: &[&'a str], key: &str) -> Option<&'a str> {
    fields
        .iter()
        .find_map(|f| f.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
}

pub fn read_network<T: Scalar, R: BufRead>(input: R) -> Result<Network<T>> {
    let mut lines = Lines {
        inner: input.lines(),
        line_no: 0,
    };
    let header = lines.next_line()?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 2 || fields[0] != "kafnet" || fields[1] != "v1" {
        return Err(lines.err("missing `kafnet v1` header"));
    }
    let get = |key: &str| {
        header_field(&fields, key).ok_or_else(|| KafError::Parse {
            line: 1,
            message: format!("header is missing `{key}=`"),
        })
    };
    let bad = |key: &str| KafError::Parse {
        line: 1,
        message: format!("invalid `{key}` in header"),
    };
    let m: usize = get("m")?.parse().map_err(|_| bad("m"))?;
    let q: usize = get("Q")?.parse().map_err(|_| bad("Q"))?;
    let d: usize = get("D")?.parse().map_err(|_| bad("D"))?;
    let r: T = get("R")?.parse().map_err(|_| bad("R"))?;
    let gamma: T = get("gamma")?.parse().map_err(|_| bad("gamma"))?;
    let widths: Vec<usize> = get("widths")?
        .split(',')
        .map(|w| w.parse().map_err(|_| bad("widths")))
        .collect::<Result<_>>()?;
    if widths.len() != q || q < 2 {
        return Err(bad("widths"));
    }
    let dictionary = Dictionary::grid(d, r, gamma)?;

    let mut hidden = Vec::with_capacity(q - 1);
    let mut fan_in = m;
    let mut output = None;
    for (i, &width) in widths.iter().enumerate() {
        let is_output = i + 1 == q;
        let kind = if is_output { "output" } else { "hidden" };
        lines.expect(&format!("layer {} {kind}", i + 1))?;
        lines.expect("weights")?;
        let weights = lines.matrix::<T>(width, fan_in)?;
        lines.expect("biases")?;
        let biases = lines.row::<T>(width)?;
        let affine = AffineParams::new(weights, biases)?;
        if is_output {
            output = Some(affine);
        } else {
            lines.expect("mixing")?;
            let mixing = lines.matrix::<T>(width, d)?;
            hidden.push(HiddenLayer {
                affine,
                kaf: KafParams { mixing },
            });
        }
        fan_in = width;
    }
    let params = Parameters {
        hidden,
        output: output.expect("q >= 2 guarantees an output layer"),
    };
    Network::new(m, params, dictionary)
}
