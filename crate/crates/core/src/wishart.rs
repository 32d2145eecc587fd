//! Covariances `Sigma = W W^T` of linear images `X = W Z` of a standard
//! Gaussian latent, and the cone they span.
//!
//! Membership in the cone means positive semidefinite with numerical rank at
//! most `min(n, m)`. Rank counts eigenvalues above `1e-8` times the largest.
//! Scaling by `lambda` uses the witness `sqrt(lambda) W`; addition stacks the
//! two witnesses side by side.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigenvalues, symmetrize};
use crate::rng::{self, Rng};

/// Relative eigenvalue threshold for numerical rank.
pub const RANK_RTOL: f64 = 1e-8;
/// Most negative eigenvalue still accepted as PSD.
pub const PSD_TOL: f64 = 1e-10;
/// Largest asymmetry that is silently symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dimension `m` of the latent `Z ~ N(0, I_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentSpec {
    latent_dim: usize,
}

impl LatentSpec {
    pub fn new(latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidInput(
                "latent dimension must be at least 1".into(),
            ));
        }
        Ok(Self { latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }
}

/// Linear map `R^m -> R^n` given by an `n x m` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    w: DMatrix<f64>,
}

impl Generator {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidInput(
                "generator matrix must be non-empty".into(),
            ));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "generator entries must be finite".into(),
            ));
        }
        Ok(Self { w })
    }

    /// Entries i.i.d. standard Gaussian.
    pub fn random(n: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng)))
    }

    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent(&self) -> LatentSpec {
        LatentSpec {
            latent_dim: self.w.ncols(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }
}

/// `x = W z`.
pub fn push_latent(gen: &Generator, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != gen.w.ncols() {
        return Err(Error::dims("latent dimension", gen.w.ncols(), z.len()));
    }
    Ok((&gen.w * DVector::from_column_slice(z))
        .iter()
        .copied()
        .collect())
}

/// A symmetric PSD matrix, optionally with a factor `W` such that `Sigma = W W^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSample {
    sigma: DMatrix<f64>,
    witness: Option<DMatrix<f64>>,
}

impl CovarianceSample {
    /// Wrap a matrix; it must be square and symmetric within [`SYMMETRY_TOL`].
    pub fn from_matrix(sigma: DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            sigma: symmetrize(&sigma, SYMMETRY_TOL)?,
            witness: None,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn witness(&self) -> Option<&DMatrix<f64>> {
        self.witness.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Rank bound implied by the witness: `min(n, columns of W)`.
    pub fn rank_bound(&self) -> usize {
        self.witness
            .as_ref()
            .map_or(self.dim(), |w| w.ncols().min(self.dim()))
    }
}

/// `Sigma = W W^T` with `W` kept as witness.
pub fn covariance(gen: &Generator) -> CovarianceSample {
    let sigma = &gen.w * gen.w.transpose();
    // W W^T is symmetric up to summation order; force exact symmetry.
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    CovarianceSample {
        sigma,
        witness: Some(gen.w.clone()),
    }
}

/// `count` draws of `W W^T` with `W` an `n x m` standard Gaussian matrix.
pub fn sample_wishart(
    n: usize,
    m: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<CovarianceSample>> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".into()));
    }
    let mut rng = rng::from_seed(seed);
    (0..count)
        .map(|_| Generator::random(n, m, &mut rng).map(|g| covariance(&g)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub min_eigenvalue: f64,
    pub rank: usize,
}

/// Number of eigenvalues above `RANK_RTOL * max eigenvalue`.
pub fn numerical_rank(eigenvalues: &DVector<f64>) -> usize {
    let max = eigenvalues.max();
    if !(max > 0.0) {
        return 0;
    }
    eigenvalues.iter().filter(|&&e| e > RANK_RTOL * max).count()
}

/// PSD within [`PSD_TOL`] and rank at most `min(n, m)`.
pub fn cone_membership(sigma: &DMatrix<f64>, n: usize, m: usize) -> Result<Membership> {
    if sigma.nrows() != n {
        return Err(Error::dims("matrix rows", n, sigma.nrows()));
    }
    let s = symmetrize(sigma, SYMMETRY_TOL)?;
    let eig = sym_eigenvalues(&s);
    let min_eigenvalue = eig.min();
    let rank = numerical_rank(&eig);
    Ok(Membership {
        member: min_eigenvalue >= -PSD_TOL && rank <= n.min(m),
        min_eigenvalue,
        rank,
    })
}

/// `lambda Sigma` with witness `sqrt(lambda) W`.
pub fn cone_scale(sample: &CovarianceSample, lambda: f64) -> Result<CovarianceSample> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale must be positive, got {lambda}"
        )));
    }
    Ok(CovarianceSample {
        sigma: &sample.sigma * lambda,
        witness: sample.witness.as_ref().map(|w| w * lambda.sqrt()),
    })
}

/// `Sigma_1 + Sigma_2` with witness `[W_1 W_2]`.
pub fn cone_add(a: &CovarianceSample, b: &CovarianceSample) -> Result<CovarianceSample> {
    if a.dim() != b.dim() {
        return Err(Error::dims("covariance dimension", a.dim(), b.dim()));
    }
    let witness = match (&a.witness, &b.witness) {
        (Some(wa), Some(wb)) => {
            let mut w = DMatrix::zeros(a.dim(), wa.ncols() + wb.ncols());
            w.columns_mut(0, wa.ncols()).copy_from(wa);
            w.columns_mut(wa.ncols(), wb.ncols()).copy_from(wb);
            Some(w)
        }
        _ => None,
    };
    Ok(CovarianceSample {
        sigma: &a.sigma + &b.sigma,
        witness,
    })
}

/// `tr(A B)`.
pub fn trace_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::dims("matrix dimension", a.nrows(), b.nrows()));
    }
    Ok(a.component_mul(&b.transpose()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub min_inner: f64,
    pub pass: bool,
}

/// Finite-dimensional self-duality proxy: every pair must satisfy
/// `tr(Sigma_1 Sigma_2) >= -1e-10`.
pub fn trace_duality_check(pairs: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<DualityReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut min_inner = f64::INFINITY;
    for (a, b) in pairs {
        min_inner = min_inner.min(trace_inner(a, b)?);
    }
    Ok(DualityReport {
        min_inner,
        pass: min_inner >= -PSD_TOL,
    })
}

/// CSV export: a `# wishart n=<n> m=<m> seed=<seed>` line, a column header,
/// then one row per sample holding the row-major upper triangle.
pub fn write_samples_csv<W: Write>(
    mut out: W,
    samples: &[CovarianceSample],
    n: usize,
    m: usize,
    seed: u64,
) -> Result<()> {
    writeln!(out, "# wishart n={n} m={m} seed={seed}")?;
    let mut cols = Vec::new();
    for i in 0..n {
        for j in i..n {
            cols.push(format!("s_{i}_{j}"));
        }
    }
    writeln!(out, "{}", cols.join(","))?;
    for s in samples {
        if s.dim() != n {
            return Err(Error::dims("covariance dimension", n, s.dim()));
        }
        let mut row = Vec::with_capacity(cols.len());
        for i in 0..n {
            for j in i..n {
                row.push(s.sigma[(i, j)].to_string());
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
