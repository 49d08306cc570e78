//! Weight initialization schemes.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::data::{gaussian_matrix, rng_for, streams};
use crate::error::{Error, Result};
use crate::matcore::{sorted_thin_svd, Matrix};
use crate::network::{embed, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// `W_j ≈ Q_{min(n_j, n_{j-1})}`.
    Orthogonal,
    /// `W_j ≈₁ Q_{min(n_j, n_{j-1}, max(n_0, n_L))}`.
    OrthIdentity,
    /// `W_j ≈ I_{min(n_j, n_{j-1})}`.
    Identity,
    /// Factor a seed matrix `UΣVᵀ` as `UΣ^{1/L}`, `Σ^{1/L}`, …, `Σ^{1/L}Vᵀ`.
    Balanced,
    /// I.i.d. `N(0, σ_j²)` entries.
    Random,
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthogonal" => Ok(InitKind::Orthogonal),
            "orth-identity" | "orth_identity" => Ok(InitKind::OrthIdentity),
            "identity" => Ok(InitKind::Identity),
            "balanced" => Ok(InitKind::Balanced),
            "random" => Ok(InitKind::Random),
            _ => Err(Error::domain(format!(
                "unknown init scheme {s:?} (orthogonal|orth-identity|identity|balanced|random)"
            ))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Orthogonal => "orthogonal",
            InitKind::OrthIdentity => "orth-identity",
            InitKind::Identity => "identity",
            InitKind::Balanced => "balanced",
            InitKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitScheme {
    pub kind: InitKind,
    /// Per-layer variances `σ_j²` for [`InitKind::Random`]; defaults to `1/n_{j-1}`.
    pub variance_overrides: Option<Vec<f64>>,
    /// Explicit `n_L × n_0` seed for [`InitKind::Balanced`]; otherwise one is
    /// drawn from `N(0, 1/n_0)`.
    pub balanced_seed: Option<Matrix>,
}

impl InitScheme {
    pub fn new(kind: InitKind) -> Self {
        InitScheme {
            kind,
            variance_overrides: None,
            balanced_seed: None,
        }
    }
}

impl From<InitKind> for InitScheme {
    fn from(kind: InitKind) -> Self {
        InitScheme::new(kind)
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub(crate) fn orthogonal_from_rng(n: usize, rng: &mut impl Rng) -> Matrix {
    let g = gaussian_matrix(n, n, 1.0, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    orthogonal_from_rng(n, &mut rng_for(seed, streams::LAYER_BASE))
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::domain("dimension chain needs n_0 and at least one layer"));
    }
    if dims.contains(&0) {
        return Err(Error::domain(format!("zero width in dimension chain {dims:?}")));
    }
    Ok(())
}

pub fn initialize(scheme: &InitScheme, dims: &[usize], seed: u64) -> Result<Network> {
    validate_dims(dims)?;
    let depth = dims.len() - 1;
    let layer_rng = |j: usize| rng_for(seed, streams::LAYER_BASE + j as u64);

    let layers: Vec<Matrix> = match scheme.kind {
        InitKind::Orthogonal => (1..=depth)
            .map(|j| {
                let k = dims[j].min(dims[j - 1]);
                embed(&orthogonal_from_rng(k, &mut layer_rng(j)), dims[j], dims[j - 1])
            })
            .collect(),
        InitKind::OrthIdentity => {
            let cap = dims[0].max(dims[depth]);
            (1..=depth)
                .map(|j| {
                    let full = dims[j].min(dims[j - 1]);
                    let k = full.min(cap);
                    let mut w =
                        embed(&orthogonal_from_rng(k, &mut layer_rng(j)), dims[j], dims[j - 1]);
                    for d in k..full {
                        w[(d, d)] = 1.0;
                    }
                    w
                })
                .collect()
        }
        InitKind::Identity => (1..=depth)
            .map(|j| {
                let k = dims[j].min(dims[j - 1]);
                embed(&Matrix::identity(k, k), dims[j], dims[j - 1])
            })
            .collect(),
        InitKind::Balanced => balanced_layers(scheme, dims, seed)?,
        InitKind::Random => {
            if let Some(v) = &scheme.variance_overrides {
                if v.len() != depth || v.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(Error::domain(format!(
                        "random init needs {depth} nonnegative layer variances"
                    )));
                }
            }
            (1..=depth)
                .map(|j| {
                    let var = scheme
                        .variance_overrides
                        .as_ref()
                        .map_or(1.0 / dims[j - 1] as f64, |v| v[j - 1]);
                    gaussian_matrix(dims[j], dims[j - 1], var.sqrt(), &mut layer_rng(j))
                })
                .collect()
        }
    };
    Network::new(layers)
}

fn balanced_layers(scheme: &InitScheme, dims: &[usize], seed: u64) -> Result<Vec<Matrix>> {
    let depth = dims.len() - 1;
    let (n0, nl) = (dims[0], dims[depth]);
    let seed_matrix = match &scheme.balanced_seed {
        Some(w) if w.shape() != (nl, n0) => {
            return Err(Error::DimensionMismatch {
                context: "balanced seed matrix",
                expected: format!("{nl}×{n0}"),
                actual: format!("{}×{}", w.nrows(), w.ncols()),
            })
        }
        Some(w) => w.clone(),
        None => gaussian_matrix(
            nl,
            n0,
            (1.0 / n0 as f64).sqrt(),
            &mut rng_for(seed, streams::BALANCED_SEED),
        ),
    };
    if depth == 1 {
        return Ok(vec![seed_matrix]);
    }
    let p = n0.min(nl);
    if let Some(w) = dims[1..depth].iter().find(|&&w| w < p) {
        return Err(Error::domain(format!(
            "balanced init needs intermediate widths >= min(n_0, n_L) = {p}, found {w}"
        )));
    }
    let (u, s, v) = sorted_thin_svd(&seed_matrix);
    let root = Matrix::from_diagonal(&DVector::from_iterator(
        p,
        s.iter().map(|x| x.powf(1.0 / depth as f64)),
    ));
    let mut layers = Vec::with_capacity(depth);
    layers.push(embed(&(&root * v.transpose()), dims[1], n0));
    for j in 2..depth {
        layers.push(embed(&root, dims[j], dims[j - 1]));
    }
    layers.push(embed(&(u * &root), nl, dims[depth - 1]));
    Ok(layers)
}
