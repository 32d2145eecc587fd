//! Block-spin coarse-graining of square lattices.
//!
//! A [`BlockMap`] sends each `B x B` block of an `L x L` lattice to the sign
//! of its spin sum. Fibers of this map give multiplicities, entropies and the
//! effective Hamiltonian `H_eff(y) = -log sum_{x: pi(x) = y} exp(-beta H(x))`
//! (beta absorbed, so `sum_y exp(-H_eff(y))` is the microscopic `Z`).
//! The same block structure is used to score how local an RBM's hidden units are.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::{
    hamiltonian, log_sum_exp, Boundary, IsingParams, LatticeShape, SpinLattice, MAX_ENUM_SITES,
};
use crate::rbm::{hidden_conditional, RbmModel};
use crate::rng::Rng;

/// How a block with zero spin sum is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    PlusOne,
    MinusOne,
}

impl TieRule {
    fn spin(self) -> i8 {
        match self {
            TieRule::PlusOne => 1,
            TieRule::MinusOne => -1,
        }
    }
}

impl fmt::Display for TieRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieRule::PlusOne => "plus_one",
            TieRule::MinusOne => "minus_one",
        })
    }
}

impl FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus_one" => Ok(TieRule::PlusOne),
            "minus_one" => Ok(TieRule::MinusOne),
            other => Err(Error::Parse(format!("unknown tie rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMap {
    micro_side: usize,
    block_side: usize,
    tie_rule: TieRule,
}

impl BlockMap {
    pub fn new(micro_side: usize, block_side: usize, tie_rule: TieRule) -> Result<Self> {
        if micro_side == 0 || block_side == 0 || micro_side % block_side != 0 {
            return Err(Error::InvalidInput(format!(
                "block side {block_side} must divide lattice side {micro_side}"
            )));
        }
        Ok(Self {
            micro_side,
            block_side,
            tie_rule,
        })
    }

    pub fn micro_side(&self) -> usize {
        self.micro_side
    }

    pub fn block_side(&self) -> usize {
        self.block_side
    }

    pub fn tie_rule(&self) -> TieRule {
        self.tie_rule
    }

    pub fn macro_side(&self) -> usize {
        self.micro_side / self.block_side
    }

    pub fn micro_sites(&self) -> usize {
        self.micro_side * self.micro_side
    }

    pub fn n_blocks(&self) -> usize {
        self.macro_side() * self.macro_side()
    }

    /// Block index (row-major over blocks) of a micro site.
    pub fn block_of(&self, site: usize) -> usize {
        let (r, c) = (site / self.micro_side, site % self.micro_side);
        (r / self.block_side) * self.macro_side() + c / self.block_side
    }

    /// Micro sites of each block, in row-major block order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks()];
        for site in 0..self.micro_sites() {
            out[self.block_of(site)].push(site);
        }
        out
    }

    fn majority(&self, sum: i64) -> i8 {
        match sum.signum() {
            1 => 1,
            -1 => -1,
            _ => self.tie_rule.spin(),
        }
    }

    /// Image of a micro configuration index under the block map.
    pub fn project_index(&self, micro: u64) -> u64 {
        let mut sums = vec![0i64; self.n_blocks()];
        for site in 0..self.micro_sites() {
            sums[self.block_of(site)] += if micro >> site & 1 == 1 { 1 } else { -1 };
        }
        sums.iter()
            .enumerate()
            .filter(|(_, &s)| self.majority(s) > 0)
            .fold(0u64, |acc, (b, _)| acc | 1u64 << b)
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.micro_sites() > MAX_ENUM_SITES {
            return Err(Error::SizeLimit {
                what: "lattice sites",
                got: self.micro_sites(),
                max: MAX_ENUM_SITES,
            });
        }
        Ok(())
    }
}

/// Coarse configuration on the `(L/B) x (L/B)` lattice of blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MacroState {
    side: usize,
    spins: Vec<i8>,
}

impl MacroState {
    pub fn new(side: usize, spins: Vec<i8>) -> Result<Self> {
        let lattice = SpinLattice::new(LatticeShape::square(side, Boundary::Free)?, spins)?;
        Ok(Self {
            side,
            spins: lattice.spins().to_vec(),
        })
    }

    pub fn from_index(side: usize, index: u64) -> Self {
        Self {
            side,
            spins: crate::ising::index_to_spins(index, side * side),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn index(&self) -> u64 {
        crate::ising::spins_to_index(&self.spins)
    }
}

fn check_lattice(lattice: &SpinLattice, map: &BlockMap) -> Result<()> {
    let shape = lattice.shape();
    if shape.rows != map.micro_side || shape.cols != map.micro_side {
        return Err(Error::dims(
            "lattice side",
            map.micro_side,
            shape.rows.max(shape.cols),
        ));
    }
    Ok(())
}

/// Majority spin of each block; zero sums follow the map's tie rule.
pub fn block_spin(lattice: &SpinLattice, map: &BlockMap) -> Result<MacroState> {
    check_lattice(lattice, map)?;
    let mut sums = vec![0i64; map.n_blocks()];
    for (site, &s) in lattice.spins().iter().enumerate() {
        sums[map.block_of(site)] += i64::from(s);
    }
    Ok(MacroState {
        side: map.macro_side(),
        spins: sums.into_iter().map(|s| map.majority(s)).collect(),
    })
}

const MASS_TOLERANCE: f64 = 1e-9;

/// `nu(y) = sum_{x: project(x) = y} mu(x)` for an arbitrary projection of
/// indices `0..mu.len()` onto `0..n_macro`.
pub fn pushforward_by<F>(micro_dist: &[f64], n_macro: usize, project: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> u64,
{
    let total: f64 = micro_dist.iter().sum();
    if !((total - 1.0).abs() <= MASS_TOLERANCE) || micro_dist.iter().any(|&p| p < 0.0) {
        return Err(Error::NotNormalized(total));
    }
    let mut nu = vec![0.0; n_macro];
    for (x, &p) in micro_dist.iter().enumerate() {
        let y = project(x as u64) as usize;
        let slot = nu
            .get_mut(y)
            .ok_or_else(|| Error::InvalidInput(format!("projection target {y} >= {n_macro}")))?;
        *slot += p;
    }
    Ok(nu)
}

/// Push a distribution over micro configuration indices through the block map.
pub fn pushforward_measure(micro_dist: &[f64], map: &BlockMap) -> Result<Vec<f64>> {
    map.check_enumerable()?;
    let expected = 1usize << map.micro_sites();
    if micro_dist.len() != expected {
        return Err(Error::dims(
            "micro distribution length",
            expected,
            micro_dist.len(),
        ));
    }
    pushforward_by(micro_dist, 1 << map.n_blocks(), |x| map.project_index(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveEntry {
    pub h_eff: f64,
    pub multiplicity: u64,
    /// `ln(multiplicity)` with `k_B = 1`.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct EffectiveTable {
    map: BlockMap,
    entries: Vec<EffectiveEntry>,
}

impl EffectiveTable {
    pub fn map(&self) -> BlockMap {
        self.map
    }

    /// Entries indexed by macro configuration index.
    pub fn entries(&self) -> &[EffectiveEntry] {
        &self.entries
    }

    /// `log sum_y exp(-H_eff(y))`, counting measure on macro states.
    pub fn log_partition(&self) -> f64 {
        let logs: Vec<f64> = self.entries.iter().map(|e| -e.h_eff).collect();
        log_sum_exp(&logs)
    }

    /// `exp(-H_eff(y)) / Z_eff`.
    pub fn induced_distribution(&self) -> Vec<f64> {
        let log_z = self.log_partition();
        self.entries
            .iter()
            .map(|e| (-e.h_eff - log_z).exp())
            .collect()
    }

    /// CSV with header `macro_index,H_eff,multiplicity,entropy`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "macro_index,H_eff,multiplicity,entropy")?;
        for (y, e) in self.entries.iter().enumerate() {
            writeln!(out, "{y},{},{},{}", e.h_eff, e.multiplicity, e.entropy)?;
        }
        Ok(())
    }
}

/// Enumerate every micro configuration of the `L x L` lattice (`L^2 <= 20`)
/// and accumulate Boltzmann weights per fiber.
pub fn effective_hamiltonian(
    boundary: Boundary,
    params: IsingParams,
    map: &BlockMap,
) -> Result<EffectiveTable> {
    map.check_enumerable()?;
    let shape = LatticeShape::square(map.micro_side, boundary)?;
    let n_macro = 1usize << map.n_blocks();
    let mut fiber_logs: Vec<Vec<f64>> = vec![Vec::new(); n_macro];
    for x in 0..1u64 << map.micro_sites() {
        let lattice = SpinLattice::from_index(shape, x);
        let y = map.project_index(x) as usize;
        fiber_logs[y].push(-params.beta() * hamiltonian(&lattice, &params));
    }
    let entries = fiber_logs
        .into_iter()
        .map(|logs| {
            let m = logs.len() as u64;
            EffectiveEntry {
                h_eff: -log_sum_exp(&logs),
                multiplicity: m,
                entropy: (m as f64).ln(),
            }
        })
        .collect();
    Ok(EffectiveTable { map: *map, entries })
}

/// `m = |pi^{-1}(y)|` by enumeration and `S = ln m`.
pub fn multiplicity_entropy(map: &BlockMap, y: &MacroState) -> Result<(u64, f64)> {
    map.check_enumerable()?;
    if y.side != map.macro_side() {
        return Err(Error::dims("macro side", map.macro_side(), y.side));
    }
    let target = y.index();
    let m = (0..1u64 << map.micro_sites())
        .filter(|&x| map.project_index(x) == target)
        .count() as u64;
    Ok((m, (m as f64).ln()))
}

/// Per hidden unit: the block holding the largest share of `|W_.j|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBlock {
    pub block: usize,
    /// Fraction of the unit's absolute weight mass inside `block`.
    pub share: f64,
    /// Sign of the summed (signed) weights inside `block`; `+1` when zero.
    pub sign: i8,
}

/// Dominant block of each hidden unit. Ties go to the lowest block index;
/// a unit with no weight mass gets share `1 / n_blocks`.
pub fn dominant_blocks(model: &RbmModel, map: &BlockMap) -> Result<Vec<UnitBlock>> {
    if model.n_visible() != map.micro_sites() {
        return Err(Error::dims(
            "n_visible",
            map.micro_sites(),
            model.n_visible(),
        ));
    }
    let blocks = map.blocks();
    Ok((0..model.n_hidden())
        .map(|j| {
            let mass: Vec<f64> = blocks
                .iter()
                .map(|sites| sites.iter().map(|&i| model.weight(i, j).abs()).sum())
                .collect();
            let total: f64 = mass.iter().sum();
            let (block, best) =
                mass.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (b, &m)| if m > acc.1 { (b, m) } else { acc },
                    );
            let share = if total > 0.0 {
                best / total
            } else {
                1.0 / blocks.len() as f64
            };
            let net: f64 = blocks[block].iter().map(|&i| model.weight(i, j)).sum();
            UnitBlock {
                block,
                share,
                sign: if net < 0.0 { -1 } else { 1 },
            }
        })
        .collect())
}

/// Mean over hidden units of the dominant-block share of absolute weight.
pub fn rbm_weight_locality(model: &RbmModel, map: &BlockMap) -> Result<f64> {
    let units = dominant_blocks(model, map)?;
    Ok(units.iter().map(|u| u.share).sum::<f64>() / units.len() as f64)
}

/// Fraction of (sample, hidden unit) pairs where the unit's reading of its
/// dominant block, `sign(P(h_j = 1 | v) - 1/2) * sign(net block weight)`,
/// equals the block's majority spin. Tied blocks and `P = 1/2` count as
/// disagreement.
pub fn hidden_block_agreement(
    model: &RbmModel,
    map: &BlockMap,
    samples: &[SpinLattice],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let units = dominant_blocks(model, map)?;
    let blocks = map.blocks();
    let mut agree = 0usize;
    for s in samples {
        check_lattice(s, map)?;
        let p = hidden_conditional(s.spins(), model)?;
        for (u, pj) in units.iter().zip(&p) {
            let block_sum: i64 = blocks[u.block]
                .iter()
                .map(|&i| i64::from(s.spins()[i]))
                .sum();
            let read = if *pj > 0.5 {
                1
            } else if *pj < 0.5 {
                -1
            } else {
                0
            };
            if block_sum != 0 && read != 0 && i64::from(read * u.sign) == block_sum.signum() {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (samples.len() * units.len()) as f64)
}

/// Scores of `n` models whose visible units were relabelled by uniformly
/// random permutations.
pub fn permutation_null<F>(
    model: &RbmModel,
    n: usize,
    rng: &mut Rng,
    mut score: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&RbmModel) -> Result<f64>,
{
    let mut perm: Vec<usize> = (0..model.n_visible()).collect();
    (0..n)
        .map(|_| {
            perm.shuffle(rng);
            score(&model.permute_visible(&perm)?)
        })
        .collect()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}
