//! 2D Ising lattices: Hamiltonian, exact enumeration for small lattices,
//! single-spin-flip Metropolis sampling and the plain-text ensemble format.
//!
//! Configurations are indexed by the integer whose bit `i` is `(s_i + 1) / 2`
//! with sites in row-major order. The same key is used by the RBM and
//! coarse-graining modules.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Largest number of sites accepted by any exhaustive enumeration.
pub const MAX_ENUM_SITES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Free,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Free => "free",
            Boundary::Periodic => "periodic",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Boundary::Free),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Parse(format!("unknown boundary `{other}`"))),
        }
    }
}

/// Coupling `J > 0` and inverse temperature `beta > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsingParams {
    coupling: f64,
    beta: f64,
}

impl IsingParams {
    pub fn new(coupling: f64, beta: f64) -> Result<Self> {
        if !(coupling.is_finite() && coupling > 0.0) {
            return Err(Error::InvalidInput(format!(
                "coupling J must be positive, got {coupling}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "inverse temperature beta must be positive, got {beta}"
            )));
        }
        Ok(Self { coupling, beta })
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Geometry of a rectangular lattice. Square `L x L` lattices are the normal
/// case; `1 x 2` chains are handy as hand-checkable fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeShape {
    pub rows: usize,
    pub cols: usize,
    pub boundary: Boundary,
}

impl LatticeShape {
    pub fn new(rows: usize, cols: usize, boundary: Boundary) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "lattice sides must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            boundary,
        })
    }

    pub fn square(side: usize, boundary: Boundary) -> Result<Self> {
        Self::new(side, side, boundary)
    }

    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Unordered nearest-neighbour pairs `(i, j)` with `i < j`, each listed
    /// once. Periodic wrap bonds that coincide with an existing bond (sides of
    /// length 2) or that would join a site to itself (sides of length 1) are
    /// dropped.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        let mut add = |a: usize, b: usize| {
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        };
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                if c + 1 < self.cols {
                    add(i, i + 1);
                } else if self.boundary == Boundary::Periodic {
                    add(i, r * self.cols);
                }
                if r + 1 < self.rows {
                    add(i, i + self.cols);
                } else if self.boundary == Boundary::Periodic {
                    add(i, c);
                }
            }
        }
        set.into_iter().collect()
    }

    /// Adjacency lists derived from [`LatticeShape::bonds`].
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.sites()];
        for (a, b) in self.bonds() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.sites() > MAX_ENUM_SITES {
            return Err(Error::SizeLimit {
                what: "lattice sites",
                got: self.sites(),
                max: MAX_ENUM_SITES,
            });
        }
        Ok(())
    }
}

/// A configuration of `+-1` spins on a lattice, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinLattice {
    shape: LatticeShape,
    spins: Vec<i8>,
}

impl SpinLattice {
    pub fn new(shape: LatticeShape, spins: Vec<i8>) -> Result<Self> {
        if spins.len() != shape.sites() {
            return Err(Error::dims("spin count", shape.sites(), spins.len()));
        }
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidInput(format!("spin value {bad} is not +-1")));
        }
        Ok(Self { shape, spins })
    }

    pub fn uniform(shape: LatticeShape, spin: i8) -> Result<Self> {
        Self::new(shape, vec![spin; shape.sites()])
    }

    pub fn random(shape: LatticeShape, rng: &mut Rng) -> Self {
        let spins = (0..shape.sites())
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self { shape, spins }
    }

    /// Decode a configuration index (bit `i` set means spin `i` is `+1`).
    pub fn from_index(shape: LatticeShape, index: u64) -> Self {
        Self {
            shape,
            spins: index_to_spins(index, shape.sites()),
        }
    }

    pub fn index(&self) -> u64 {
        spins_to_index(&self.spins)
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| i64::from(s)).sum()
    }

    pub fn flipped(&self) -> Self {
        Self {
            shape: self.shape,
            spins: self.spins.iter().map(|&s| -s).collect(),
        }
    }
}

pub fn spins_to_index(spins: &[i8]) -> u64 {
    spins
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .fold(0u64, |acc, (i, _)| acc | (1u64 << i))
}

pub fn index_to_spins(index: u64, sites: usize) -> Vec<i8> {
    (0..sites)
        .map(|i| if index >> i & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// `H(s) = -J * sum over bonds of s_i s_j`.
pub fn hamiltonian(lattice: &SpinLattice, params: &IsingParams) -> f64 {
    bond_sum(lattice.spins(), &lattice.shape.bonds()) as f64 * -params.coupling
}

fn bond_sum(spins: &[i8], bonds: &[(usize, usize)]) -> i64 {
    bonds
        .iter()
        .map(|&(a, b)| i64::from(spins[a]) * i64::from(spins[b]))
        .sum()
}

/// Energies and Boltzmann probabilities of every configuration of a small
/// lattice, indexed by configuration index.
#[derive(Debug, Clone)]
pub struct ExactTable {
    shape: LatticeShape,
    params: IsingParams,
    energies: Vec<f64>,
    probabilities: Vec<f64>,
    log_z: f64,
}

impl ExactTable {
    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn params(&self) -> IsingParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn partition_z(&self) -> f64 {
        self.log_z.exp()
    }

    /// Draw `n` independent configurations by inverse-CDF sampling.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<u64> {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for p in &self.probabilities {
            acc += p;
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let k = cdf.partition_point(|&c| c <= u).min(self.len() - 1);
                k as u64
            })
            .collect()
    }
}

/// Enumerate all `2^sites` configurations. Rejects lattices with more than
/// [`MAX_ENUM_SITES`] sites.
pub fn exact_enumerate(shape: LatticeShape, params: IsingParams) -> Result<ExactTable> {
    shape.check_enumerable()?;
    let sites = shape.sites();
    let bonds = shape.bonds();
    let count = 1usize << sites;
    let mut energies = Vec::with_capacity(count);
    let mut spins = vec![-1i8; sites];
    for index in 0..count as u64 {
        for (i, s) in spins.iter_mut().enumerate() {
            *s = if index >> i & 1 == 1 { 1 } else { -1 };
        }
        energies.push(-params.coupling * bond_sum(&spins, &bonds) as f64);
    }
    let log_weights: Vec<f64> = energies.iter().map(|e| -params.beta * e).collect();
    let log_z = log_sum_exp(&log_weights);
    let probabilities = log_weights.iter().map(|w| (w - log_z).exp()).collect();
    Ok(ExactTable {
        shape,
        params,
        energies,
        probabilities,
        log_z,
    })
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Single-spin-flip Metropolis kernel with precomputed adjacency.
#[derive(Debug, Clone)]
pub struct Metropolis {
    shape: LatticeShape,
    params: IsingParams,
    neighbors: Vec<Vec<usize>>,
}

impl Metropolis {
    pub fn new(shape: LatticeShape, params: IsingParams) -> Self {
        Self {
            shape,
            params,
            neighbors: shape.neighbors(),
        }
    }

    /// One sweep: a flip proposal at every site in raster order, accepted with
    /// probability `min(1, exp(-beta * dE))`. Returns the number accepted.
    pub fn sweep(&self, lattice: &mut SpinLattice, rng: &mut Rng) -> Result<usize> {
        if lattice.shape != self.shape {
            return Err(Error::dims(
                "lattice sites",
                self.shape.sites(),
                lattice.shape.sites(),
            ));
        }
        let two_j = 2.0 * self.params.coupling;
        let mut accepted = 0;
        for i in 0..lattice.spins.len() {
            let field: i64 = self.neighbors[i]
                .iter()
                .map(|&j| i64::from(lattice.spins[j]))
                .sum();
            let delta = two_j * f64::from(lattice.spins[i]) * field as f64;
            if delta <= 0.0 || rng.random::<f64>() < (-self.params.beta * delta).exp() {
                lattice.spins[i] = -lattice.spins[i];
                accepted += 1;
            }
        }
        Ok(accepted)
    }
}

/// Convenience wrapper around [`Metropolis::sweep`] that leaves the input untouched.
pub fn metropolis_sweep(
    lattice: &SpinLattice,
    params: IsingParams,
    rng: &mut Rng,
) -> Result<SpinLattice> {
    let mut next = lattice.clone();
    Metropolis::new(lattice.shape, params).sweep(&mut next, rng)?;
    Ok(next)
}

/// Sampling schedule for [`sample_ensemble`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSchedule {
    pub n_samples: usize,
    pub sweeps_between: usize,
    pub burn_in: usize,
}

/// Run a chain from a uniformly random start, discard `burn_in` sweeps, then
/// hand every `sweeps_between`-th state to `visit`.
pub fn sample_ensemble_with<F>(
    shape: LatticeShape,
    params: IsingParams,
    schedule: SampleSchedule,
    seed: u64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&SpinLattice),
{
    if schedule.sweeps_between == 0 {
        return Err(Error::InvalidInput(
            "sweeps_between must be positive".into(),
        ));
    }
    if schedule.n_samples == 0 {
        return Ok(());
    }
    let mut rng = rng::from_seed(seed);
    let kernel = Metropolis::new(shape, params);
    let mut lattice = SpinLattice::random(shape, &mut rng);
    for _ in 0..schedule.burn_in {
        kernel.sweep(&mut lattice, &mut rng)?;
    }
    for _ in 0..schedule.n_samples {
        for _ in 0..schedule.sweeps_between {
            kernel.sweep(&mut lattice, &mut rng)?;
        }
        visit(&lattice);
    }
    Ok(())
}

pub fn sample_ensemble(
    shape: LatticeShape,
    params: IsingParams,
    schedule: SampleSchedule,
    seed: u64,
) -> Result<Vec<SpinLattice>> {
    let mut out = Vec::with_capacity(schedule.n_samples);
    sample_ensemble_with(shape, params, schedule, seed, |s| out.push(s.clone()))?;
    Ok(out)
}

/// Histogram of configuration indices, normalized to a probability vector.
pub fn empirical_distribution(samples: &[SpinLattice]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or(Error::Empty("ensemble"))?;
    let shape = first.shape;
    shape.check_enumerable()?;
    let mut counts = vec![0u64; 1 << shape.sites()];
    for s in samples {
        if s.shape != shape {
            return Err(Error::dims("lattice sites", shape.sites(), s.shape.sites()));
        }
        counts[s.index() as usize] += 1;
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims("distribution length", p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    /// Mean of `H(s) / sites`.
    pub mean_energy: f64,
    /// Mean of `|sum s_i| / sites`.
    pub mean_abs_magnetization: f64,
}

pub fn ensemble_stats(samples: &[SpinLattice], params: &IsingParams) -> Result<EnsembleStats> {
    if samples.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    let (mut e, mut m) = (0.0, 0.0);
    for s in samples {
        let n = s.shape.sites() as f64;
        e += hamiltonian(s, params) / n;
        m += s.magnetization().unsigned_abs() as f64 / n;
    }
    let count = samples.len() as f64;
    Ok(EnsembleStats {
        mean_energy: e / count,
        mean_abs_magnetization: m / count,
    })
}

/// Header of an ensemble file:
/// `# ising L=<L> boundary=<b> J=<J> beta=<beta> seed=<s>`.
/// Non-square shapes write `L=<rows>x<cols>`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHeader {
    pub shape: LatticeShape,
    pub coupling: f64,
    pub beta: f64,
    pub seed: u64,
}

impl fmt::Display for EnsembleHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.shape.is_square() {
            self.shape.rows.to_string()
        } else {
            format!("{}x{}", self.shape.rows, self.shape.cols)
        };
        write!(
            f,
            "# ising L={side} boundary={} J={} beta={} seed={}",
            self.shape.boundary, self.coupling, self.beta, self.seed
        )
    }
}

impl FromStr for EnsembleHeader {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let rest = line
            .trim()
            .strip_prefix("# ising")
            .ok_or_else(|| Error::Parse("missing `# ising` header".into()))?;
        let (mut side, mut boundary, mut coupling, mut beta, mut seed) =
            (None, None, None, None, None);
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Parse(e.to_string()));
            match k {
                "L" => side = Some(v.to_string()),
                "boundary" => boundary = Some(v.parse::<Boundary>()?),
                "J" => coupling = Some(num(v)?),
                "beta" => beta = Some(num(v)?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
                _ => return Err(Error::Parse(format!("unknown header key `{k}`"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("header missing `{k}`"));
        let side = side.ok_or_else(|| missing("L"))?;
        let parse_side = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
        let (rows, cols) = match side.split_once('x') {
            Some((r, c)) => (parse_side(r)?, parse_side(c)?),
            None => {
                let l = parse_side(&side)?;
                (l, l)
            }
        };
        let boundary = boundary.ok_or_else(|| missing("boundary"))?;
        Ok(Self {
            shape: LatticeShape::new(rows, cols, boundary)?,
            coupling: coupling.ok_or_else(|| missing("J"))?,
            beta: beta.ok_or_else(|| missing("beta"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        })
    }
}

pub fn write_ensemble<W: Write>(
    mut out: W,
    header: &EnsembleHeader,
    samples: &[SpinLattice],
) -> Result<()> {
    writeln!(out, "{header}")?;
    for s in samples {
        let line: Vec<String> = s.spins().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_ensemble<R: BufRead>(input: R) -> Result<(EnsembleHeader, Vec<SpinLattice>)> {
    let mut lines = input.lines();
    let header: EnsembleHeader = lines
        .next()
        .ok_or(Error::Empty("ensemble file"))??
        .parse()?;
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spins = line
            .split_whitespace()
            .map(|t| t.parse::<i8>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        samples.push(SpinLattice::new(header.shape, spins)?);
    }
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(j: f64, beta: f64) -> IsingParams {
        IsingParams::new(j, beta).unwrap()
    }

    fn free(side: usize) -> LatticeShape {
        LatticeShape::square(side, Boundary::Free).unwrap()
    }

    #[test]
    fn hamiltonian_small_fixtures() {
        let p = params(1.0, 1.0);
        let up = SpinLattice::uniform(free(2), 1).unwrap();
        assert_eq!(hamiltonian(&up, &p), -4.0);

        let one_down = SpinLattice::new(free(2), vec![-1, 1, 1, 1]).unwrap();
        assert_eq!(hamiltonian(&one_down, &p), 0.0);

        let chain = LatticeShape::new(1, 2, Boundary::Free).unwrap();
        let anti = SpinLattice::new(chain, vec![1, -1]).unwrap();
        assert_eq!(hamiltonian(&anti, &p), 1.0);
    }

    #[test]
    fn bond_counts() {
        assert_eq!(free(2).bonds().len(), 4);
        assert_eq!(free(3).bonds().len(), 12);
        // 2x2 periodic: wrap bonds coincide with the open ones.
        let p2 = LatticeShape::square(2, Boundary::Periodic).unwrap();
        assert_eq!(p2.bonds().len(), 4);
        let p3 = LatticeShape::square(3, Boundary::Periodic).unwrap();
        assert_eq!(p3.bonds().len(), 18);
        let p4 = LatticeShape::square(4, Boundary::Periodic).unwrap();
        assert_eq!(p4.bonds().len(), 32);
        assert!(p4.neighbors().iter().all(|n| n.len() == 4));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(IsingParams::new(0.0, 1.0).is_err());
        assert!(IsingParams::new(1.0, -1.0).is_err());
        assert!(SpinLattice::new(free(2), vec![1, 0, 1, 1]).is_err());
        assert!(SpinLattice::new(free(2), vec![1, 1, 1]).is_err());
        let err = exact_enumerate(free(5), params(1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { got: 25, .. }));
    }

    #[test]
    fn two_site_chain_partition_function() {
        // States ++ and -- have energy -1, the mixed ones +1.
        let chain = LatticeShape::new(1, 2, Boundary::Free).unwrap();
        let t = exact_enumerate(chain, params(1.0, 1.0)).unwrap();
        let expected = 2.0 * 1f64.exp() + 2.0 * (-1f64).exp();
        assert!((t.partition_z() - expected).abs() < 1e-12);
        assert!((t.partition_z() - 6.1723).abs() < 1e-4);
    }

    #[test]
    fn two_by_two_brute_force() {
        let p = params(1.0, 1.0);
        let t = exact_enumerate(free(2), p).unwrap();
        let mut z = 0.0;
        for idx in 0..16u64 {
            let s = SpinLattice::from_index(free(2), idx);
            z += (-hamiltonian(&s, &p)).exp();
        }
        assert!((t.partition_z() - z).abs() < 1e-12 * z);
        let total: f64 = t.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (e, pr) in t.energies().iter().zip(t.probabilities()) {
            assert!((pr - (-e).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn high_temperature_is_uniform() {
        let t = exact_enumerate(free(3), params(1.0, 1e-9)).unwrap();
        let u = 1.0 / 512.0;
        assert!(t.probabilities().iter().all(|p| (p - u).abs() < 1e-6));
    }

    #[test]
    fn index_round_trip() {
        let s = SpinLattice::new(free(2), vec![1, -1, -1, 1]).unwrap();
        assert_eq!(s.index(), 0b1001);
        assert_eq!(SpinLattice::from_index(free(2), 0b1001), s);
    }

    #[test]
    fn downhill_moves_always_accepted() {
        // A lone down spin in an all-up 3x3 lattice has dE < 0 for flipping back.
        let mut spins = vec![1i8; 9];
        spins[4] = -1;
        let lattice = SpinLattice::new(free(3), spins).unwrap();
        let p = params(1.0, 50.0);
        let kernel = Metropolis::new(free(3), p);
        for seed in 0..20 {
            let mut l = lattice.clone();
            let mut rng = rng::from_seed(seed);
            kernel.sweep(&mut l, &mut rng).unwrap();
            assert_eq!(l.spins()[4], 1);
        }
    }

    #[test]
    fn infinite_temperature_accepts_everything() {
        let p = params(1.0, 1e-12);
        let kernel = Metropolis::new(free(4), p);
        let mut rng = rng::from_seed(3);
        let mut l = SpinLattice::uniform(free(4), 1).unwrap();
        let mut accepted = 0;
        for _ in 0..100 {
            accepted += kernel.sweep(&mut l, &mut rng).unwrap();
        }
        assert!(accepted as f64 / 1600.0 > 0.999);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let p = params(1.0, 0.4);
        let start = SpinLattice::random(free(4), &mut rng::from_seed(1));
        let a = metropolis_sweep(&start, p, &mut rng::from_seed(9)).unwrap();
        let b = metropolis_sweep(&start, p, &mut rng::from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensembles_are_deterministic() {
        let p = params(1.0, 0.4);
        let sched = SampleSchedule {
            n_samples: 50,
            sweeps_between: 2,
            burn_in: 10,
        };
        let a = sample_ensemble(free(3), p, sched, 42).unwrap();
        let b = sample_ensemble(free(3), p, sched, 42).unwrap();
        assert_eq!(a, b);
        let empty = sample_ensemble(
            free(3),
            p,
            SampleSchedule {
                n_samples: 0,
                ..sched
            },
            42,
        );
        assert!(empty.unwrap().is_empty());
    }

    #[test]
    fn stats_of_all_up() {
        let p = params(1.0, 1.0);
        let up = vec![SpinLattice::uniform(free(2), 1).unwrap()];
        let s = ensemble_stats(&up, &p).unwrap();
        assert_eq!(s.mean_energy, -1.0);
        assert_eq!(s.mean_abs_magnetization, 1.0);
        assert!(matches!(ensemble_stats(&[], &p), Err(Error::Empty(_))));
    }

    #[test]
    fn uniform_ensemble_magnetization_matches_enumeration() {
        // Oracle: E|sum s| / 9 under the uniform law, by enumeration.
        let exact: f64 = (0..512u64)
            .map(|i| {
                SpinLattice::from_index(free(3), i)
                    .magnetization()
                    .unsigned_abs() as f64
                    / 9.0
            })
            .sum::<f64>()
            / 512.0;
        // Raster Metropolis at beta -> 0 flips every spin on every sweep, so the
        // ensemble is drawn i.i.d. from the exact table instead.
        let p = params(1.0, 1e-9);
        let table = exact_enumerate(free(3), p).unwrap();
        let samples: Vec<SpinLattice> = table
            .sample_indices(20_000, &mut rng::from_seed(5))
            .into_iter()
            .map(|i| SpinLattice::from_index(free(3), i))
            .collect();
        let s = ensemble_stats(&samples, &p).unwrap();
        assert!((s.mean_abs_magnetization - exact).abs() < 0.01);
        assert!(s.mean_abs_magnetization < 0.3);
    }

    #[test]
    fn ensemble_file_round_trip() {
        let p = params(1.0, 0.4);
        let sched = SampleSchedule {
            n_samples: 5,
            sweeps_between: 1,
            burn_in: 0,
        };
        let samples = sample_ensemble(free(3), p, sched, 11).unwrap();
        let header = EnsembleHeader {
            shape: free(3),
            coupling: 1.0,
            beta: 0.4,
            seed: 11,
        };
        let mut buf = Vec::new();
        write_ensemble(&mut buf, &header, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# ising L=3 boundary=free J=1 beta=0.4 seed=11\n"));
        let (h, back) = read_ensemble(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, samples);
    }

    proptest! {
        #[test]
        fn global_flip_preserves_energy(
            idx in 0u64..(1 << 16),
            periodic in any::<bool>(),
            j in 0.1f64..3.0,
        ) {
            let b = if periodic { Boundary::Periodic } else { Boundary::Free };
            let shape = LatticeShape::square(4, b).unwrap();
            let s = SpinLattice::from_index(shape, idx);
            let p = params(j, 1.0);
            prop_assert_eq!(hamiltonian(&s, &p), hamiltonian(&s.flipped(), &p));
        }

        #[test]
        fn exact_table_is_boltzmann(beta in 0.01f64..1.5, side in 1usize..4) {
            let p = params(1.0, beta);
            let t = exact_enumerate(free(side), p).unwrap();
            let total: f64 = t.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let z = t.partition_z();
            for (e, pr) in t.energies().iter().zip(t.probabilities()) {
                prop_assert!((pr - (-beta * e).exp() / z).abs() < 1e-12);
            }
        }
    }
}
