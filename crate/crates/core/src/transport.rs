//! Monge–Ampère residuals for transport maps and convex potentials, Gaussian
//! optimal transport, and 1D monotone transport on grids.
//!
//! Two residual forms are provided:
//!
//! * map form: `r(x) = rho0(x) - rho1(T(x)) det DT(x)`
//! * potential form: `r(x) = det D^2 phi(x) - mu(x) / nu(grad phi(x))`

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ising::SpinLattice;
use crate::linalg::{check_spd, inv_sqrt_spd, sqrt_spd};

/// Tolerance on the trapezoidal mass of a [`DensityGrid`].
pub const MASS_TOL: f64 = 1e-6;
/// `|det A|` at or below this counts as singular.
pub const SINGULAR_DET: f64 = 1e-12;
/// Target densities at or below this are treated as vanishing.
pub const VANISHING_DENSITY: f64 = 1e-300;
/// Default central-difference step for function maps.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// A probability density on `R^d`.
pub trait Density {
    fn dim(&self) -> usize;
    fn pdf(&self, x: &[f64]) -> Result<f64>;
}

fn check_point(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::dims("point dimension", dim, x.len()));
    }
    Ok(())
}

/// `N(mean, covariance)` with SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("mean"));
        }
        if covariance.nrows() != mean.len() {
            return Err(Error::dims(
                "covariance dimension",
                mean.len(),
                covariance.nrows(),
            ));
        }
        let covariance = check_spd(&covariance)?;
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::NotPositiveDefinite(0.0))?
            .unpack();
        let d = mean.len() as f64;
        let log_det_half: f64 = chol.diagonal().iter().map(|l| l.ln()).sum();
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
            chol,
            log_norm: -0.5 * d * (2.0 * std::f64::consts::PI).ln() - log_det_half,
        })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim))
    }

    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], DMatrix::from_element(1, 1, variance))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        check_point(self.mean.len(), x)?;
        let diff = DVector::from_column_slice(x) - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        Ok(self.log_norm - 0.5 * y.norm_squared())
    }
}

impl Density for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }
}

/// A density given by a closure.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64> Density for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn pdf(&self, x: &[f64]) -> Result<f64> {
        check_point(self.dim, x)?;
        Ok((self.f)(x))
    }
}

/// Uniformly spaced nodes `start, start + step, ..., end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    start: f64,
    step: f64,
    len: usize,
}

impl Axis {
    pub fn new(start: f64, end: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidInput(format!(
                "axis needs at least 2 nodes, got {len}"
            )));
        }
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(Error::InvalidInput(format!(
                "invalid axis range [{start}, {end}]"
            )));
        }
        Ok(Self {
            start,
            step: (end - start) / (len - 1) as f64,
            len,
        })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn node(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    /// Cell index and fractional position, or `None` outside the range.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let u = (x - self.start) / self.step;
        let last = (self.len - 1) as f64;
        let slack = 1e-9;
        if !(u >= -slack && u <= last + slack) {
            return None;
        }
        let k = (u.floor().max(0.0) as usize).min(self.len - 2);
        Some((k, (u - k as f64).clamp(0.0, 1.0)))
    }

    fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.len {
            0.5 * self.step
        } else {
            self.step
        }
    }
}

/// Tensor grid in one or two dimensions, nodes stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidInput(format!(
                "grids must be 1D or 2D, got {} axes",
                axes.len()
            )));
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(Axis::len).product()
    }

    fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = k % self.axes[a].len;
            k /= self.axes[a].len;
        }
        idx
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        self.multi_index(k)
            .iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.node(i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.n_nodes()).map(|k| self.node(k)).collect()
    }

    /// Multilinear interpolation weights at `x`.
    fn weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        check_point(self.dim(), x)?;
        let mut out = vec![(0usize, 1.0)];
        for (a, ax) in self.axes.iter().enumerate() {
            let (k, t) = ax
                .locate(x[a])
                .ok_or_else(|| Error::OutsideSupport(x.to_vec()))?;
            let s = self.stride(a);
            out = out
                .into_iter()
                .flat_map(|(i, w)| [(i + k * s, w * (1.0 - t)), (i + (k + 1) * s, w * t)])
                .collect();
        }
        Ok(out)
    }

    fn trapezoid_weight(&self, k: usize) -> f64 {
        self.multi_index(k)
            .iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.trapezoid_weight(i))
            .product()
    }

    fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.trapezoid_weight(k))
            .sum()
    }

    /// Central difference of a nodal field along `axis` at node `k`;
    /// second-order one-sided at the ends.
    fn nodal_derivative(&self, field: impl Fn(usize) -> f64, k: usize, axis: usize) -> f64 {
        let ax = self.axes[axis];
        let i = self.multi_index(k)[axis];
        let s = self.stride(axis);
        let h = ax.step;
        if i > 0 && i + 1 < ax.len {
            (field(k + s) - field(k - s)) / (2.0 * h)
        } else if ax.len == 2 {
            let base = k - i * s;
            (field(base + s) - field(base)) / h
        } else if i == 0 {
            (-3.0 * field(k) + 4.0 * field(k + s) - field(k + 2 * s)) / (2.0 * h)
        } else {
            (3.0 * field(k) - 4.0 * field(k - s) + field(k - 2 * s)) / (2.0 * h)
        }
    }
}

/// Nonnegative nodal density values with unit trapezoidal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let g = Self::unchecked(axes, values)?;
        let mass = g.integral();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::NotNormalized(mass));
        }
        Ok(g)
    }

    /// Rescale `values` to unit trapezoidal mass.
    pub fn normalized(axes: Vec<Axis>, mut values: Vec<f64>) -> Result<Self> {
        let g = Self::unchecked(axes, values.clone())?;
        let mass = g.integral();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Degenerate(format!("density grid has mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self {
            grid: g.grid,
            values,
        })
    }

    /// Sample `density` at the nodes and normalize.
    pub fn from_density(axes: Vec<Axis>, density: &dyn Density) -> Result<Self> {
        let grid = Grid::new(axes.clone())?;
        let values = grid
            .nodes()
            .iter()
            .map(|x| density.pdf(x))
            .collect::<Result<Vec<_>>>()?;
        Self::normalized(axes, values)
    }

    fn unchecked(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(axes)?;
        if values.len() != grid.n_nodes() {
            return Err(Error::dims(
                "density grid values",
                grid.n_nodes(),
                values.len(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "density values must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

impl Density for DensityGrid {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self
            .grid
            .weights(x)?
            .iter()
            .map(|&(k, w)| w * self.values[k])
            .sum())
    }
}

/// Vector field sampled on a grid, with nodal finite-difference Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    grid: Grid,
    values: Vec<f64>,
    jacobians: Vec<f64>,
}

impl GridMap {
    /// `values` holds `dim` components per node, node-major.
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(axes)?;
        let d = grid.dim();
        if values.len() != grid.n_nodes() * d {
            return Err(Error::dims(
                "grid map values",
                grid.n_nodes() * d,
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid map values must be finite".into()));
        }
        let mut jacobians = Vec::with_capacity(grid.n_nodes() * d * d);
        for k in 0..grid.n_nodes() {
            for i in 0..d {
                for j in 0..d {
                    jacobians.push(grid.nodal_derivative(|n| values[n * d + i], k, j));
                }
            }
        }
        Ok(Self {
            grid,
            values,
            jacobians,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Image of node `k`.
    pub fn node_value(&self, k: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[k * d..(k + 1) * d]
    }

    fn interpolate(&self, x: &[f64], data: &[f64], width: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; width];
        for (k, w) in self.grid.weights(x)? {
            for (o, v) in out.iter_mut().zip(&data[k * width..(k + 1) * width]) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

/// A transport map `T: R^d -> R^d`.
#[derive(Clone)]
pub enum MapSpec {
    /// `T(x) = A x + c`.
    Linear {
        a: DMatrix<f64>,
        c: DVector<f64>,
    },
    /// Arbitrary map; Jacobian by central differences with step `h`.
    Function {
        dim: usize,
        f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        h: f64,
    },
    Grid(GridMap),
}

impl fmt::Debug for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapSpec::Linear { a, c } => f
                .debug_struct("Linear")
                .field("a", a)
                .field("c", c)
                .finish(),
            MapSpec::Function { dim, h, .. } => f
                .debug_struct("Function")
                .field("dim", dim)
                .field("h", h)
                .finish_non_exhaustive(),
            MapSpec::Grid(g) => f.debug_tuple("Grid").field(g).finish(),
        }
    }
}

impl MapSpec {
    pub fn linear(a: DMatrix<f64>, c: Vec<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::dims("square map matrix", a.nrows(), a.ncols()));
        }
        if c.len() != a.nrows() {
            return Err(Error::dims("offset dimension", a.nrows(), c.len()));
        }
        if a.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("map entries must be finite".into()));
        }
        Ok(MapSpec::Linear {
            a,
            c: DVector::from_vec(c),
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::linear(DMatrix::identity(dim, dim), vec![0.0; dim])
    }

    pub fn function(
        dim: usize,
        h: f64,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "map dimension must be at least 1".into(),
            ));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        Ok(MapSpec::Function {
            dim,
            f: Arc::new(f),
            h,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            MapSpec::Linear { a, .. } => a.nrows(),
            MapSpec::Function { dim, .. } => *dim,
            MapSpec::Grid(g) => g.grid.dim(),
        }
    }

    pub fn linear_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match self {
            MapSpec::Linear { a, c } => Some((a, c)),
            _ => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), x)?;
        match self {
            MapSpec::Linear { a, c } => Ok((a * DVector::from_column_slice(x) + c)
                .iter()
                .copied()
                .collect()),
            MapSpec::Function { dim, f, .. } => {
                let y = f(x);
                if y.len() != *dim {
                    return Err(Error::dims("map output dimension", *dim, y.len()));
                }
                Ok(y)
            }
            MapSpec::Grid(g) => g.interpolate(x, &g.values, g.grid.dim()),
        }
    }

    /// `DT(x)`, entry `(i, j)` = `d T_i / d x_j`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_point(self.dim(), x)?;
        let d = self.dim();
        match self {
            MapSpec::Linear { a, .. } => Ok(a.clone()),
            MapSpec::Function { h, .. } => {
                let mut jac = DMatrix::zeros(d, d);
                let mut xp = x.to_vec();
                for j in 0..d {
                    xp[j] = x[j] + h;
                    let fp = self.apply(&xp)?;
                    xp[j] = x[j] - h;
                    let fm = self.apply(&xp)?;
                    xp[j] = x[j];
                    for i in 0..d {
                        jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                Ok(jac)
            }
            MapSpec::Grid(g) => {
                let flat = g.interpolate(x, &g.jacobians, d * d)?;
                Ok(DMatrix::from_row_slice(d, d, &flat))
            }
        }
    }
}

/// One evaluation of the map-form residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPoint {
    pub x: Vec<f64>,
    pub tx: Vec<f64>,
    pub det: f64,
    pub rho0: f64,
    pub rho1_at_t: f64,
    pub residual: f64,
    /// `|det DT(x)| <= 1e-12`.
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub points: Vec<ResidualPoint>,
    pub max_abs: f64,
    pub mean_abs: f64,
}

fn abs_stats(res: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for r in res {
        max = max.max(r.abs());
        sum += r.abs();
        n += 1;
    }
    (max, sum / n.max(1) as f64)
}

/// `rho0(x) - rho1(T(x)) det DT(x)` at each point.
pub fn ma_residual_map(
    rho0: &dyn Density,
    rho1: &dyn Density,
    t: &MapSpec,
    points: &[Vec<f64>],
) -> Result<ResidualField> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let d = t.dim();
    if rho0.dim() != d || rho1.dim() != d {
        return Err(Error::dims(
            "density dimension",
            d,
            if rho0.dim() != d {
                rho0.dim()
            } else {
                rho1.dim()
            },
        ));
    }
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let tx = t.apply(x)?;
        let det = t.jacobian(x)?.determinant();
        let r0 = rho0.pdf(x)?;
        let r1 = rho1.pdf(&tx)?;
        out.push(ResidualPoint {
            x: x.clone(),
            tx,
            det,
            rho0: r0,
            rho1_at_t: r1,
            residual: r0 - r1 * det,
            singular: det.abs() <= SINGULAR_DET,
        });
    }
    let (max_abs, mean_abs) = abs_stats(out.iter().map(|p| p.residual));
    Ok(ResidualField {
        points: out,
        max_abs,
        mean_abs,
    })
}

/// Residual report: header, one row per point, then a summary comment line.
pub fn write_residual_csv<W: Write>(mut out: W, field: &ResidualField) -> Result<()> {
    let d = field.points.first().map_or(1, |p| p.x.len());
    let header = match d {
        1 => "x,T(x),detDT,rho0,rho1_at_T,residual".to_string(),
        2 => "x,y,T_x,T_y,detDT,rho0,rho1_at_T,residual".to_string(),
        _ => {
            let xs: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
            let ts: Vec<String> = (0..d).map(|i| format!("T{i}")).collect();
            format!(
                "{},{},detDT,rho0,rho1_at_T,residual",
                xs.join(","),
                ts.join(",")
            )
        }
    };
    writeln!(out, "{header}")?;
    for p in &field.points {
        let cells: Vec<String> =
            p.x.iter()
                .chain(&p.tx)
                .chain([&p.det, &p.rho0, &p.rho1_at_t, &p.residual])
                .map(f64::to_string)
                .collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    writeln!(
        out,
        "# max_abs={} mean_abs={}",
        field.max_abs, field.mean_abs
    )?;
    Ok(())
}

/// Scalar potential sampled on a grid; derivatives by central differences
/// with the grid spacing as step.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGrid {
    grid: Grid,
    values: Vec<f64>,
}

impl PotentialGrid {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(axes)?;
        if values.len() != grid.n_nodes() {
            return Err(Error::dims(
                "potential values",
                grid.n_nodes(),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "potential values must be finite".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(axes: Vec<Axis>, phi: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let grid = Grid::new(axes.clone())?;
        Self::new(axes, grid.nodes().iter().map(|x| phi(x)).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Nodes where every central difference stencil fits.
    pub fn interior_nodes(&self) -> Vec<Vec<f64>> {
        (0..self.grid.n_nodes())
            .filter(|&k| self.interior(k))
            .map(|k| self.grid.node(k))
            .collect()
    }

    fn interior(&self, k: usize) -> bool {
        self.grid
            .multi_index(k)
            .iter()
            .zip(&self.grid.axes)
            .all(|(&i, ax)| i > 0 && i + 1 < ax.len)
    }

    fn node_at(&self, x: &[f64]) -> Result<usize> {
        check_point(self.grid.dim(), x)?;
        let mut k = 0;
        for (a, ax) in self.grid.axes.iter().enumerate() {
            let u = (x[a] - ax.start) / ax.step;
            let i = u.round();
            if !(i >= 0.0 && i <= (ax.len - 1) as f64) {
                return Err(Error::OutsideSupport(x.to_vec()));
            }
            if (u - i).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "point {x:?} is not a grid node"
                )));
            }
            k += i as usize * self.grid.stride(a);
        }
        if !self.interior(k) {
            return Err(Error::InvalidInput(format!(
                "point {x:?} is on the grid boundary"
            )));
        }
        Ok(k)
    }

    fn gradient(&self, k: usize) -> Vec<f64> {
        (0..self.grid.dim())
            .map(|a| self.grid.nodal_derivative(|n| self.values[n], k, a))
            .collect()
    }

    fn hessian(&self, k: usize) -> DMatrix<f64> {
        let d = self.grid.dim();
        let v = &self.values;
        let mut hess = DMatrix::zeros(d, d);
        for a in 0..d {
            let s = self.grid.stride(a);
            let h = self.grid.axes[a].step;
            hess[(a, a)] = (v[k + s] - 2.0 * v[k] + v[k - s]) / (h * h);
            for b in a + 1..d {
                let t = self.grid.stride(b);
                let g = self.grid.axes[b].step;
                let m = (v[k + s + t] - v[k + s - t] - v[k - s + t] + v[k - s - t]) / (4.0 * h * g);
                hess[(a, b)] = m;
                hess[(b, a)] = m;
            }
        }
        hess
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialResidualPoint {
    pub x: Vec<f64>,
    pub gradient: Vec<f64>,
    pub det_hessian: f64,
    pub mu: f64,
    pub nu_at_gradient: f64,
    pub residual: f64,
    /// Hessian has no negative eigenvalue.
    pub convex: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialResidualField {
    pub points: Vec<PotentialResidualPoint>,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// `det D^2 phi(x) - mu(x) / nu(grad phi(x))` at interior grid nodes.
pub fn ma_residual_potential(
    mu: &dyn Density,
    nu: &dyn Density,
    phi: &PotentialGrid,
    points: &[Vec<f64>],
) -> Result<PotentialResidualField> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let d = phi.grid.dim();
    if mu.dim() != d || nu.dim() != d {
        return Err(Error::dims(
            "density dimension",
            d,
            if mu.dim() != d { mu.dim() } else { nu.dim() },
        ));
    }
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let k = phi.node_at(x)?;
        let gradient = phi.gradient(k);
        let hess = phi.hessian(k);
        let m = mu.pdf(x)?;
        let n = nu.pdf(&gradient)?;
        if !(n > VANISHING_DENSITY) {
            return Err(Error::VanishingDensity(gradient));
        }
        let min_eig = hess.symmetric_eigenvalues().min();
        let det_hessian = hess.determinant();
        out.push(PotentialResidualPoint {
            x: x.clone(),
            gradient,
            det_hessian,
            mu: m,
            nu_at_gradient: n,
            residual: det_hessian - m / n,
            convex: min_eig >= 0.0,
        });
    }
    let (max_abs, mean_abs) = abs_stats(out.iter().map(|p| p.residual));
    Ok(PotentialResidualField {
        points: out,
        max_abs,
        mean_abs,
    })
}

/// Density of `T_# P_latent` for invertible linear `T`:
/// `P_latent(T^{-1} x) |det A^{-1}|`.
pub fn pushforward_density(
    latent: &GaussianDensity,
    t: &MapSpec,
    xs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let (a, c) = t
        .linear_parts()
        .ok_or_else(|| Error::InvalidInput("push-forward density needs a linear map".into()))?;
    if a.nrows() != latent.dim() {
        return Err(Error::dims("map dimension", latent.dim(), a.nrows()));
    }
    let det = a.determinant();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::Singular(det.abs()));
    }
    let lu = a.clone().lu();
    xs.iter()
        .map(|x| {
            check_point(latent.dim(), x)?;
            let z = lu
                .solve(&(DVector::from_column_slice(x) - c))
                .ok_or(Error::Singular(det.abs()))?;
            Ok(latent.pdf(z.as_slice())? / det.abs())
        })
        .collect()
}

fn ot_matrix(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if sigma0.shape() != sigma1.shape() {
        return Err(Error::dims(
            "covariance dimension",
            sigma0.nrows(),
            sigma1.nrows(),
        ));
    }
    let s0 = check_spd(sigma0)?;
    let s1 = check_spd(sigma1)?;
    let r = sqrt_spd(&s0);
    let ri = inv_sqrt_spd(&s0);
    let middle = &r * &s1 * &r;
    let middle = (&middle + middle.transpose()) * 0.5;
    let a = &ri * sqrt_spd(&middle) * &ri;
    Ok(((&a + a.transpose()) * 0.5, r))
}

/// Optimal linear map pushing `N(0, sigma0)` onto `N(0, sigma1)`:
/// `A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}`.
pub fn gaussian_ot_map(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<MapSpec> {
    let (a, _) = ot_matrix(sigma0, sigma1)?;
    let d = a.nrows();
    MapSpec::linear(a, vec![0.0; d])
}

/// 2-Wasserstein distance between centred Gaussians, evaluated as
/// `||(I - A) S0^{1/2}||_F` with `A` the optimal map.
pub fn w2_gaussian(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<f64> {
    let (a, r) = ot_matrix(sigma0, sigma1)?;
    let d = a.nrows();
    Ok(((DMatrix::identity(d, d) - a) * r).norm())
}

fn cumulative(g: &DensityGrid) -> Vec<f64> {
    let h = g.grid.axes[0].step;
    let v = &g.values;
    let mut f = Vec::with_capacity(v.len());
    f.push(0.0);
    for k in 1..v.len() {
        f.push(f[k - 1] + 0.5 * h * (v[k - 1] + v[k]));
    }
    let total = f[v.len() - 1];
    f.iter_mut().for_each(|x| *x /= total);
    f
}

fn require_positive_1d(g: &DensityGrid, name: &str) -> Result<()> {
    if g.dim() != 1 {
        return Err(Error::dims("monotone transport dimension", 1, g.dim()));
    }
    if let Some(k) = g.values.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate(format!(
            "{name} vanishes at x = {}; inverse CDF is ambiguous",
            g.grid.node(k)[0]
        )));
    }
    Ok(())
}

/// `T = F1^{-1} o F0`, sampled at the nodes of `rho0`.
pub fn monotone_transport_1d(rho0: &DensityGrid, rho1: &DensityGrid) -> Result<MapSpec> {
    require_positive_1d(rho0, "source density")?;
    require_positive_1d(rho1, "target density")?;
    let f0 = cumulative(rho0);
    let f1 = cumulative(rho1);
    let ax1 = rho1.grid.axes[0];
    let values = f0
        .iter()
        .map(|&u| {
            let k = f1.partition_point(|&f| f <= u).clamp(1, f1.len() - 1) - 1;
            let span = f1[k + 1] - f1[k];
            let t = if span > 0.0 {
                ((u - f1[k]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            ax1.node(k) + t * ax1.step
        })
        .collect();
    Ok(MapSpec::Grid(GridMap::new(rho0.grid.axes.clone(), values)?))
}

/// Per-site magnetization of each sample.
pub fn magnetization_per_site(samples: &[SpinLattice]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| s.magnetization() as f64 / s.spins().len() as f64)
        .collect()
}

/// Weighted sample with duplicate values merged.
fn weighted_sample(values: &[f64], weights: Option<&[f64]>) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::Empty("statistic values"));
    }
    if let Some(w) = weights {
        if w.len() != values.len() {
            return Err(Error::dims("statistic weights", values.len(), w.len()));
        }
    }
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if !v.is_finite() || !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "bad statistic value {v} with weight {w}"
            )));
        }
        pairs.push((v, w));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (v, w) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    merged.retain(|p| p.1 > 0.0);
    if merged.is_empty() {
        return Err(Error::Degenerate("all statistic weights are zero".into()));
    }
    Ok(merged)
}

fn weighted_quantile(sorted: &[(f64, f64)], total: f64, q: f64) -> f64 {
    let mut acc = 0.0;
    for &(v, w) in sorted {
        acc += w;
        if acc >= q * total {
            return v;
        }
    }
    sorted[sorted.len() - 1].0
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^{-1/5}`, with the Kish
/// effective sample size for weighted input.
pub fn silverman_bandwidth(values: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let s = weighted_sample(values, weights)?;
    silverman(&s)
}

fn silverman(s: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = s.iter().map(|p| p.1).sum();
    let mean = s.iter().map(|p| p.0 * p.1).sum::<f64>() / total;
    let var = s.iter().map(|p| p.1 * (p.0 - mean).powi(2)).sum::<f64>() / total;
    let sd = var.sqrt();
    if s.len() < 2 || !(sd > 0.0) {
        return Err(Error::Degenerate("statistic is constant".into()));
    }
    let n_eff = total * total / s.iter().map(|p| p.1 * p.1).sum::<f64>();
    let iqr = weighted_quantile(s, total, 0.75) - weighted_quantile(s, total, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * n_eff.powf(-0.2))
}

fn kde_values(sample: &[(f64, f64)], bandwidth: f64, axis: Axis) -> Vec<f64> {
    let total: f64 = sample.iter().map(|p| p.1).sum();
    let norm = 1.0 / (total * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    (0..axis.len())
        .map(|i| {
            let x = axis.node(i);
            norm * sample
                .iter()
                .map(|&(v, w)| w * (-0.5 * ((x - v) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Gaussian kernel density estimate on `axis`, normalized on the grid.
pub fn kde_grid(
    values: &[f64],
    weights: Option<&[f64]>,
    bandwidth: f64,
    axis: Axis,
) -> Result<DensityGrid> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let s = weighted_sample(values, weights)?;
    DensityGrid::normalized(vec![axis], kde_values(&s, bandwidth, axis))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentCheckConfig {
    /// Kernel bandwidth; Silverman's rule when `None`.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    /// The latent grid spans `[-w, w]`.
    pub latent_half_width: f64,
    /// The data grid extends this many bandwidths past the sample range.
    pub margin: f64,
}

impl Default for LatentCheckConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            grid_points: 2048,
            latent_half_width: 8.0,
            margin: 6.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentDataReport {
    pub bandwidth: f64,
    pub latent: DensityGrid,
    pub data: DensityGrid,
    pub map: MapSpec,
    pub residual: ResidualField,
    /// `sqrt(integral (x - T(x))^2 rho0(x) dx)` on the latent grid.
    pub w2: f64,
}

/// Transport from a standard Gaussian latent to the smoothed density of a
/// scalar statistic.
pub fn latent_to_data_check(
    values: &[f64],
    weights: Option<&[f64]>,
    cfg: &LatentCheckConfig,
) -> Result<LatentDataReport> {
    if cfg.grid_points < 3 {
        return Err(Error::InvalidInput(format!(
            "grid_points must be at least 3, got {}",
            cfg.grid_points
        )));
    }
    if !(cfg.latent_half_width > 0.0 && cfg.margin > 0.0) {
        return Err(Error::InvalidInput(
            "latent_half_width and margin must be positive".into(),
        ));
    }
    let sample = weighted_sample(values, weights)?;
    if sample.len() < 2 {
        return Err(Error::Degenerate("statistic is constant".into()));
    }
    let bandwidth = match cfg.bandwidth {
        Some(b) if b.is_finite() && b > 0.0 => b,
        Some(b) => {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be positive, got {b}"
            )))
        }
        None => silverman(&sample)?,
    };
    let lo = sample[0].0 - cfg.margin * bandwidth;
    let hi = sample[sample.len() - 1].0 + cfg.margin * bandwidth;
    let data_axis = Axis::new(lo, hi, cfg.grid_points)?;
    let data = DensityGrid::normalized(vec![data_axis], kde_values(&sample, bandwidth, data_axis))?;

    let w = cfg.latent_half_width;
    let latent_axis = Axis::new(-w, w, cfg.grid_points)?;
    let latent = DensityGrid::from_density(vec![latent_axis], &GaussianDensity::standard(1)?)?;

    let map = monotone_transport_1d(&latent, &data)?;
    let nodes = latent.grid.nodes();
    let residual = ma_residual_map(&latent, &data, &map, &nodes)?;
    let sq: Vec<f64> = residual
        .points
        .iter()
        .map(|p| (p.x[0] - p.tx[0]).powi(2) * p.rho0)
        .collect();
    let w2 = latent.grid.integrate(&sq).sqrt();
    Ok(LatentDataReport {
        bandwidth,
        latent,
        data,
        map,
        residual,
        w2,
    })
}
