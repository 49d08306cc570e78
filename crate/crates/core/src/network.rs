//! Deep linear network state and the partial products `W_{i:j}`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matcore::{ensure_finite, Matrix};

/// Layers `W_1 … W_L`; layer `ℓ` has shape `n_ℓ × n_{ℓ-1}`.
///
/// Layer indices in the public API are 1-based to match the dimension chain
/// `(n_0, …, n_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Matrix>,
    dims: Vec<usize>,
}

impl Network {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("a network needs at least one layer"));
        }
        let mut dims = vec![layers[0].ncols()];
        for (idx, w) in layers.iter().enumerate() {
            let l = idx + 1;
            if w.ncols() != dims[idx] {
                return Err(Error::DimensionMismatch {
                    context: "network layers",
                    expected: format!("layer {l} with {} columns", dims[idx]),
                    actual: format!("{} columns", w.ncols()),
                });
            }
            ensure_finite(w, &format!("layer {l}"))?;
            dims.push(w.nrows());
        }
        if dims.contains(&0) {
            return Err(Error::domain("layer widths must be positive"));
        }
        Ok(Network { layers, dims })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `(n_0, …, n_L)`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    /// `W_l` for `1 ≤ l ≤ L`.
    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l - 1]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.layers[l - 1]
    }

    pub fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.depth() {
            Err(Error::domain(format!(
                "layer index {l} outside 1..={}",
                self.depth()
            )))
        } else {
            Ok(())
        }
    }

    /// `W_i W_{i-1} ⋯ W_j`, or the identity `I_{n_i}` when `i < j`.
    /// Indices live in `0..=L+1`, so `(L, L+1)` gives `I_{n_L}` and `(0, 1)`
    /// gives `I_{n_0}`.
    pub fn partial_product(&self, i: usize, j: usize) -> Result<Matrix> {
        let l = self.depth();
        if i > l + 1 || j > l + 1 || (i >= j && (j == 0 || i > l)) {
            return Err(Error::domain(format!(
                "partial product W_{{{i}:{j}}} outside the 0..={} window",
                l + 1
            )));
        }
        if i < j {
            let n = self.dims[i.min(l)];
            return Ok(Matrix::identity(n, n));
        }
        let mut acc = self.layers[j - 1].clone();
        for k in j + 1..=i {
            acc = &self.layers[k - 1] * acc;
        }
        Ok(acc)
    }

    /// `W_{L:1}`.
    pub fn end_to_end(&self) -> Matrix {
        self.partial_product(self.depth(), 1)
            .expect("full range is always valid")
    }

    /// Text dump: a `dims` line followed by each layer's rows. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# layerwise network\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "dims {}", dims.join(" ")).unwrap();
        for (idx, w) in self.layers.iter().enumerate() {
            writeln!(out, "layer {} {} {}", idx + 1, w.nrows(), w.ncols()).unwrap();
            for row in w.row_iter() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", vals.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, s)| (i as u64 + 1, s.trim()))
            .filter(|(_, s)| !s.is_empty() && !s.starts_with('#'));

        let (ln, header) = lines.next().ok_or_else(|| Error::parse(0, "empty network dump"))?;
        let dims: Vec<usize> = header
            .strip_prefix("dims ")
            .ok_or_else(|| Error::parse(ln, "expected `dims` line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(ln, format!("bad dimension {t:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            return Err(Error::parse(ln, "need at least two dimensions"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 1..dims.len() {
            let (ln, head) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing layer {l}")))?;
            let expect = format!("layer {l} {} {}", dims[l], dims[l - 1]);
            if head.split_whitespace().collect::<Vec<_>>().join(" ") != expect {
                return Err(Error::parse(ln, format!("expected `{expect}`")));
            }
            let mut vals = Vec::with_capacity(dims[l] * dims[l - 1]);
            for _ in 0..dims[l] {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| Error::parse(0, format!("layer {l} is truncated")))?;
                let before = vals.len();
                for t in row.split_whitespace() {
                    vals.push(
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(ln, format!("bad value {t:?}")))?,
                    );
                }
                if vals.len() - before != dims[l - 1] {
                    return Err(Error::parse(ln, format!("expected {} values", dims[l - 1])));
                }
            }
            layers.push(Matrix::from_row_slice(dims[l], dims[l - 1], &vals));
        }
        Network::new(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Network::from_text(&text)
    }
}

/// Padding relation between a large matrix and a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// `A = [[B, 0], [0, 0]]`.
    Plain,
    /// `A = [[B, 0, 0], [0, I, 0], [0, 0, 0]]` with the identity filling the
    /// diagonal up to `min(rows, cols)`.
    One,
}

pub const PAD_TOLERANCE: f64 = 1e-12;

/// Whether `a` equals `b` up to zero padding (`Plain`), or up to zero padding
/// of `[[b, 0], [0, I]]` (`One`), entrywise within [`PAD_TOLERANCE`].
pub fn pad_equiv(a: &Matrix, b: &Matrix, mode: PadMode) -> Result<bool> {
    let (m, n) = a.shape();
    let (k, s) = b.shape();
    if k > m || s > n {
        return Err(Error::DimensionMismatch {
            context: "pad_equiv",
            expected: format!("block no larger than {m}×{n}"),
            actual: format!("{k}×{s}"),
        });
    }
    let diag_end = match mode {
        PadMode::Plain => 0,
        PadMode::One => {
            if k != s || m.min(n) <= k {
                return Err(Error::domain(format!(
                    "≈₁ needs a square block smaller than min({m}, {n}), got {k}×{s}"
                )));
            }
            m.min(n)
        }
    };
    for i in 0..m {
        for j in 0..n {
            let want = if i < k && j < s {
                b[(i, j)]
            } else if i == j && i < diag_end {
                1.0
            } else {
                0.0
            };
            if (a[(i, j)] - want).abs() > PAD_TOLERANCE {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Whether every intermediate width is at least `max(n0, nL)`.
pub fn width_ok(dims: &[usize], n0: usize, nl: usize) -> bool {
    let need = n0.max(nl);
    dims.len() < 3 || dims[1..dims.len() - 1].iter().all(|&w| w >= need)
}

/// Top-left `rows × cols` embedding of `block` into a zero matrix.
pub(crate) fn embed(block: &Matrix, rows: usize, cols: usize) -> Matrix {
    let mut out = Matrix::zeros(rows, cols);
    let (k, s) = block.shape();
    out.view_mut((0, 0), (k.min(rows), s.min(cols)))
        .copy_from(&block.view((0, 0), (k.min(rows), s.min(cols))));
    out
}
