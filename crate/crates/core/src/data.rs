//! Training data: seeded synthetic generators and CSV ingestion.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::matcore::{self, ensure_finite, Matrix};

/// Inputs `X` (`d_in × m`) and outputs `Y` (`d_out × m`), one column per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                context: "dataset",
                expected: format!("Y with {} columns", x.ncols()),
                actual: format!("{} columns", y.ncols()),
            });
        }
        if x.ncols() == 0 || x.nrows() == 0 || y.nrows() == 0 {
            return Err(Error::domain("dataset needs m >= 1 and nonzero dimensions"));
        }
        ensure_finite(&x, "input matrix X")?;
        ensure_finite(&y, "output matrix Y")?;
        Ok(Dataset { x, y })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_in(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.y.nrows()
    }

    /// Keeps only example `i` (used by single-sample gradients).
    pub fn example(&self, i: usize) -> (Matrix, Matrix) {
        (
            self.x.columns(i, 1).into_owned(),
            self.y.columns(i, 1).into_owned(),
        )
    }
}

/// Deterministic generator for `(seed, stream)`. Distinct streams of the same
/// seed are independent, so X, Y and per-layer draws never share randomness.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const INPUT: u64 = 1;
    pub const OUTPUT: u64 = 2;
    pub const SPECTRUM: u64 = 3;
    pub const COMPLETION: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const TEACHER: u64 = 6;
    /// Per-layer initialization streams start here.
    pub const LAYER_BASE: u64 = 1 << 16;
    pub const BALANCED_SEED: u64 = 7;
    /// Stochastic training streams.
    pub const SAMPLING: u64 = 1 << 32;
}

/// I.i.d. `N(0, std_dev²)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, std_dev: f64, rng: &mut impl Rng) -> Matrix {
    let normal = Normal::new(0.0, std_dev).expect("standard deviation is finite and nonnegative");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// `d_in × m` matrix with i.i.d. `N(0, 1/d_in)` entries.
pub fn gen_input_gaussian(d_in: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = rng_for(seed, streams::INPUT);
    gaussian_matrix(d_in, m, (1.0 / d_in.max(1) as f64).sqrt(), &mut rng)
}

/// `d_out × m` matrix with i.i.d. `U(-1, 2)` entries.
pub fn gen_output_uniform(d_out: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = rng_for(seed, streams::OUTPUT);
    let dist = Uniform::new(-1.0, 2.0).expect("valid range");
    let mut out = Matrix::from_fn(d_out, m, |_, _| dist.sample(&mut rng));
    // U[-1, 2) may return the closed lower end; the open interval excludes it.
    for v in out.iter_mut() {
        while *v <= -1.0 {
            *v = dist.sample(&mut rng);
        }
    }
    out
}

/// `k` singular values drawn from `1e-5 + U(0, 1)`.
pub fn gen_spectrum_uniform(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, streams::SPECTRUM);
    (0..k).map(|_| 1e-5 + rng.random::<f64>()).collect()
}

/// Extends orthonormal columns `basis` (n × r) to `k` orthonormal columns
/// using seeded Gaussian directions and twice-repeated Gram–Schmidt.
fn complete_orthonormal(basis: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = basis.nrows();
    let mut out = Matrix::zeros(n, k);
    let r = basis.ncols().min(k);
    for j in 0..r {
        out.set_column(j, &basis.column(j));
    }
    let mut j = r;
    while j < k {
        let mut v: DVector<f64> = gaussian_matrix(n, 1, 1.0, rng).column(0).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = out.column(i);
                let c = qi.dot(&v);
                v.axpy(-c, &qi, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            out.set_column(j, &(v / nv));
            j += 1;
        }
    }
    out
}

/// Replaces the singular values of `a` by `new_singulars` (sorted
/// nonincreasing) while keeping its singular vectors. Missing singular
/// directions of a rank-deficient `a` are completed from the seed.
pub fn reshape_spectrum(a: &Matrix, new_singulars: &[f64], seed: u64) -> Result<Matrix> {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if new_singulars.len() != k {
        return Err(Error::DimensionMismatch {
            context: "reshape_spectrum",
            expected: format!("{k} target singular values"),
            actual: new_singulars.len().to_string(),
        });
    }
    if let Some(bad) = new_singulars.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::domain(format!(
            "target singular values must be positive and finite (got {bad})"
        )));
    }
    let mut targets = new_singulars.to_vec();
    targets.sort_by(|x, y| y.total_cmp(x));

    let svd = matcore::compact_svd(a);
    let mut rng = rng_for(seed, streams::COMPLETION);
    let u = complete_orthonormal(&svd.u, k, &mut rng);
    let v = complete_orthonormal(&svd.v, k, &mut rng);
    let mut us = u;
    for (j, s) in targets.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    Ok(us * v.transpose())
}

/// Shape of the synthetic input spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spectrum {
    /// Plain `N(0, 1/d_in)` draw.
    Gaussian,
    /// Gaussian singular vectors with singular values `1e-5 + U(0, 1)`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub m: usize,
    pub spectrum: Spectrum,
    pub seed: u64,
}

pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.d_in == 0 || spec.d_out == 0 || spec.m == 0 {
        return Err(Error::domain("synthetic data needs d_in, d_out, m >= 1"));
    }
    let mut x = gen_input_gaussian(spec.d_in, spec.m, spec.seed);
    if spec.spectrum == Spectrum::Uniform {
        let targets = gen_spectrum_uniform(spec.d_in.min(spec.m), spec.seed);
        x = reshape_spectrum(&x, &targets, spec.seed)?;
    }
    let y = gen_output_uniform(spec.d_out, spec.m, spec.seed);
    Dataset::new(x, y)
}

/// Outputs from a random linear teacher plus Gaussian noise of the given
/// standard deviation: `Y = W₀X + noise`.
pub fn teacher_outputs(x: &Matrix, d_out: usize, noise_std: f64, seed: u64) -> Matrix {
    let mut rng = rng_for(seed, streams::TEACHER);
    let w0 = gaussian_matrix(d_out, x.nrows(), 1.0, &mut rng);
    let mut rng = rng_for(seed, streams::NOISE);
    let noise = gaussian_matrix(d_out, x.ncols(), noise_std, &mut rng);
    w0 * x + noise
}

fn standardize_rows(a: &mut Matrix) {
    let m = a.ncols() as f64;
    for mut row in a.row_iter_mut() {
        let first = row[0];
        if row.iter().all(|v| *v == first) {
            row.fill(0.0);
            continue;
        }
        let mean = row.iter().sum::<f64>() / m;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

/// Parses examples (one per line: `d_in` inputs then `d_out` outputs; lines
/// starting with `#` are skipped) and standardizes every input and output row
/// to mean 0, population variance 1.
pub fn parse_normalize_csv<R: Read>(reader: R, d_in: usize, d_out: usize) -> Result<Dataset> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::domain("d_in and d_out must be positive"));
    }
    let width = d_in + d_out;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut columns: Vec<f64> = Vec::new();
    let mut m = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(Error::parse(
                line,
                format!("expected {width} fields ({d_in} inputs + {d_out} outputs), found {}", rec.len()),
            ));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line, format!("field {} is not numeric: {field:?}", k + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("field {} is not finite", k + 1)));
            }
            columns.push(v);
        }
        m += 1;
    }
    if m == 0 {
        return Err(Error::parse(0, "no examples found"));
    }
    // `columns` holds one example per column of a width × m column-major matrix.
    let all = Matrix::from_vec(width, m, columns);
    let mut x = all.rows(0, d_in).into_owned();
    let mut y = all.rows(d_in, d_out).into_owned();
    standardize_rows(&mut x);
    standardize_rows(&mut y);
    Dataset::new(x, y)
}

pub fn load_normalize_csv(path: impl AsRef<Path>, d_in: usize, d_out: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_normalize_csv(file, d_in, d_out)
}

/// Writes the dataset in the ingestion layout (raw values, full precision).
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# d_in={} d_out={} m={}", data.d_in(), data.d_out(), data.m()).map_err(io)?;
    for i in 0..data.m() {
        let fields: Vec<String> = data
            .x
            .column(i)
            .iter()
            .chain(data.y.column(i).iter())
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{}", fields.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_variance_matches_recipe() {
        let x = gen_input_gaussian(128, 600, 42);
        let n = (128 * 600) as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(var > 0.7 / 128.0 && var < 1.3 / 128.0, "var = {var}");
    }

    #[test]
    fn single_draws_and_determinism() {
        let one = gen_input_gaussian(1, 1, 9);
        assert!(one[(0, 0)].is_finite());
        assert_eq!(gen_input_gaussian(5, 7, 3), gen_input_gaussian(5, 7, 3));
        assert_ne!(gen_input_gaussian(5, 7, 3), gen_input_gaussian(5, 7, 4));
        assert_eq!(gen_output_uniform(3, 4, 1), gen_output_uniform(3, 4, 1));
        let y = gen_output_uniform(1, 1, 2);
        assert!(y[(0, 0)] > -1.0 && y[(0, 0)] < 2.0);
    }

    #[test]
    fn uniform_outputs_in_range_with_expected_mean() {
        let y = gen_output_uniform(10, 600, 7);
        assert!(y.iter().all(|v| *v > -1.0 && *v < 2.0));
        let big = gen_output_uniform(100, 1000, 7);
        let mean = big.iter().sum::<f64>() / big.len() as f64;
        assert!((0.45..=0.55).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn reshape_identity() {
        let r = reshape_spectrum(&Matrix::identity(3, 3), &[1.0, 3.0, 2.0], 0).unwrap();
        let s = matcore::singular_values(&r);
        for (got, want) in s.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reshape_with_own_spectrum_reconstructs() {
        let a = gen_input_gaussian(5, 9, 1);
        let s = matcore::singular_values(&a);
        let r = reshape_spectrum(&a, &s, 1).unwrap();
        assert!((&r - &a).norm() / a.norm() < 1e-9);
    }

    #[test]
    fn reshape_rank_deficient_input() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let r = reshape_spectrum(&a, &[2.0, 0.5], 3).unwrap();
        let s = matcore::singular_values(&r);
        assert!((s[0] - 2.0).abs() < 1e-10 && (s[1] - 0.5).abs() < 1e-10);
        assert_eq!(matcore::numeric_rank(&r), 2);
    }

    #[test]
    fn reshape_rejects_bad_targets() {
        let a = Matrix::identity(2, 2);
        assert!(reshape_spectrum(&a, &[1.0, 0.0], 0).is_err());
        assert!(reshape_spectrum(&a, &[1.0], 0).is_err());
    }

    #[test]
    fn shaped_spectrum_condition_number() {
        let x = gen_input_gaussian(128, 600, 0);
        let t = gen_spectrum_uniform(128, 0);
        let shaped = reshape_spectrum(&x, &t, 0).unwrap();
        let want = t.iter().cloned().fold(0.0, f64::max) / t.iter().cloned().fold(f64::INFINITY, f64::min);
        let got = matcore::cond(&shaped);
        assert!((got - want).abs() / want < 1e-8);
        assert!(t.iter().all(|s| *s > 1e-5 && *s < 1.0 + 1e-5));
    }

    #[test]
    fn two_point_normalization() {
        let d = parse_normalize_csv("0,0\n2,4\n".as_bytes(), 1, 1).unwrap();
        assert_eq!(d.x().as_slice(), &[-1.0, 1.0]);
        assert_eq!(d.y().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_feature_is_zeroed() {
        let d = parse_normalize_csv("# header\n5,1,0\n5,2,1\n5,3,3\n".as_bytes(), 2, 1).unwrap();
        assert!(d.x().row(0).iter().all(|v| *v == 0.0));
        let row = d.x().row(1);
        let mean = row.iter().sum::<f64>() / 3.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-8);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = parse_normalize_csv("1,2\n3\n".as_bytes(), 1, 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_normalize_csv("# h\n1,2\n3,abc\n".as_bytes(), 1, 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(parse_normalize_csv("# only a header\n".as_bytes(), 1, 1).is_err());
    }

    #[test]
    fn csv_of_realistic_size() {
        let mut text = String::new();
        let x = gen_input_gaussian(128, 2565, 1);
        let y = gen_output_uniform(1, 2565, 1);
        for i in 0..2565 {
            let row: Vec<String> = x.column(i).iter().chain(y.column(i).iter()).map(|v| v.to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let d = parse_normalize_csv(text.as_bytes(), 128, 1).unwrap();
        assert_eq!((d.m(), d.d_in(), d.d_out()), (2565, 128, 1));
        for row in d.x().row_iter() {
            let mean = row.iter().sum::<f64>() / 2565.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2565.0;
            assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = synthetic(&SyntheticSpec { d_in: 3, d_out: 2, m: 6, spectrum: Spectrum::Gaussian, seed: 1 }).unwrap();
        write_csv(&d, &path).unwrap();
        let back = load_normalize_csv(&path, 3, 2).unwrap();
        let mut expect = d.clone();
        standardize_rows(&mut expect.x);
        standardize_rows(&mut expect.y);
        assert!((back.x() - expect.x()).norm() < 1e-12);
        assert!((back.y() - expect.y()).norm() < 1e-12);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Matrix::zeros(2, 3), Matrix::zeros(1, 4)).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 0), Matrix::zeros(1, 0)).is_err());
        let mut y = Matrix::zeros(1, 3);
        y[(0, 1)] = f64::INFINITY;
        assert!(Dataset::new(Matrix::zeros(2, 3), y).is_err());
    }
}
