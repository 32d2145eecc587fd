//! C ABI over the `mongeboltz` library.
//!
//! Every fallible function returns an [`MbStatus`] and writes results through
//! out-pointers. On failure, [`mb_last_error_message`] returns a description
//! of the most recent error on the calling thread. Objects are opaque handles
//! released with their matching `*_free` function. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mongeboltz::coarsegrain::{self, BlockMap, EffectiveTable, TieRule};
use mongeboltz::ising::{self, Boundary, ExactTable, IsingParams, LatticeShape, SpinLattice};
use mongeboltz::rbm::{self, Checkpoint, RbmModel};
use mongeboltz::{transport, wishart, Error};
use nalgebra::DMatrix;

pub const MB_FFI_API_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbStatus {
    MbOk = 0,
    MbErrNullPointer = 1,
    MbErrInvalidInput = 2,
    MbErrSizeLimit = 3,
    MbErrNumerical = 4,
    MbErrIo = 5,
    MbErrPanic = 6,
}

/// Exact Boltzmann table of a small Ising lattice.
pub struct MbExactTable {
    inner: ExactTable,
}

/// Restricted Boltzmann machine parameters.
pub struct MbRbm {
    inner: RbmModel,
}

/// Effective Hamiltonian of block-majority coarse-graining.
pub struct MbEffectiveTable {
    inner: EffectiveTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MbStatus {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::Empty(_) => MbStatus::MbErrInvalidInput,
        Error::SizeLimit { .. } => MbStatus::MbErrSizeLimit,
        Error::Io(_) | Error::Json(_) => MbStatus::MbErrIo,
        _ => MbStatus::MbErrNumerical,
    }
}

struct Fail(MbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MbStatus::MbErrNullPointer, format!("{what} is null"))
}

fn guard<F>(f: F) -> MbStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MbStatus::MbOk,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            MbStatus::MbErrPanic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            MbStatus::MbErrInvalidInput,
            "path is not valid UTF-8".into(),
        )
    })
}

fn boundary(periodic: c_int) -> Boundary {
    if periodic != 0 {
        Boundary::Periodic
    } else {
        Boundary::Free
    }
}

unsafe fn square(p: *const c_double, d: usize, what: &str) -> Result<DMatrix<f64>, Fail> {
    let s = slice(p, d * d, what)?;
    Ok(DMatrix::from_row_slice(d, d, s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn mb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Energy of a `rows x cols` configuration of `+1/-1` spins.
///
/// # Safety
/// `spins` must point to `n_spins` readable values and `out_energy` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mb_ising_hamiltonian(
    rows: usize,
    cols: usize,
    periodic: c_int,
    coupling: c_double,
    spins: *const i8,
    n_spins: usize,
    out_energy: *mut c_double,
) -> MbStatus {
    guard(|| {
        let spins = slice(spins, n_spins, "spins")?;
        let out_energy = out(out_energy, "out_energy")?;
        let shape = LatticeShape::new(rows, cols, boundary(periodic))?;
        let lattice = SpinLattice::new(shape, spins.to_vec())?;
        let params = IsingParams::new(coupling, 1.0)?;
        *out_energy = ising::hamiltonian(&lattice, &params);
        Ok(())
    })
}

/// Enumerate all configurations of a lattice with at most 20 sites.
///
/// # Safety
/// `out_table` must be writable. The handle it receives must be released
/// with [`mb_exact_table_free`].
#[no_mangle]
pub unsafe extern "C" fn mb_ising_exact_enumerate(
    rows: usize,
    cols: usize,
    periodic: c_int,
    coupling: c_double,
    beta: c_double,
    out_table: *mut *mut MbExactTable,
) -> MbStatus {
    guard(|| {
        let out_table = out(out_table, "out_table")?;
        let shape = LatticeShape::new(rows, cols, boundary(periodic))?;
        let params = IsingParams::new(coupling, beta)?;
        let inner = ising::exact_enumerate(shape, params)?;
        *out_table = Box::into_raw(Box::new(MbExactTable { inner }));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle from [`mb_ising_exact_enumerate`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn mb_exact_table_free(table: *mut MbExactTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of configurations, `2^sites`.
///
/// # Safety
/// `table` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_exact_table_len(
    table: *const MbExactTable,
    out_len: *mut usize,
) -> MbStatus {
    guard(|| {
        let t = handle(table, "table")?;
        *out(out_len, "out_len")? = t.inner.len();
        Ok(())
    })
}

/// `ln Z` of the enumerated table.
///
/// # Safety
/// `table` must be a live handle and `out_log_z` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_ising_partition(
    table: *const MbExactTable,
    out_log_z: *mut c_double,
) -> MbStatus {
    guard(|| {
        let t = handle(table, "table")?;
        *out(out_log_z, "out_log_z")? = t.inner.log_partition();
        Ok(())
    })
}

/// Energy and probability of the configuration with the given index.
///
/// # Safety
/// `table` must be a live handle. Either out-pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn mb_exact_table_entry(
    table: *const MbExactTable,
    index: u64,
    out_energy: *mut c_double,
    out_probability: *mut c_double,
) -> MbStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let k = usize::try_from(index)
            .ok()
            .filter(|&k| k < t.inner.len())
            .ok_or_else(|| {
                Fail(
                    MbStatus::MbErrInvalidInput,
                    format!("index {index} out of range"),
                )
            })?;
        if let Some(e) = out_energy.as_mut() {
            *e = t.inner.energies()[k];
        }
        if let Some(p) = out_probability.as_mut() {
            *p = t.inner.probabilities()[k];
        }
        Ok(())
    })
}

/// Build a model from row-major `n_visible x n_hidden` weights and biases.
///
/// # Safety
/// The arrays must hold `n_visible * n_hidden`, `n_visible` and `n_hidden`
/// values. `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_new(
    n_visible: usize,
    n_hidden: usize,
    weights: *const c_double,
    visible_bias: *const c_double,
    hidden_bias: *const c_double,
    out_model: *mut *mut MbRbm,
) -> MbStatus {
    guard(|| {
        let w = slice(weights, n_visible.saturating_mul(n_hidden), "weights")?;
        let b = slice(visible_bias, n_visible, "visible_bias")?;
        let c = slice(hidden_bias, n_hidden, "hidden_bias")?;
        let out_model = out(out_model, "out_model")?;
        let inner = RbmModel::new(n_visible, n_hidden, w.to_vec(), b.to_vec(), c.to_vec())?;
        *out_model = Box::into_raw(Box::new(MbRbm { inner }));
        Ok(())
    })
}

/// Load a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_load(path: *const c_char, out_model: *mut *mut MbRbm) -> MbStatus {
    guard(|| {
        let p = self::path(path)?;
        let out_model = out(out_model, "out_model")?;
        let file = File::open(p).map_err(Error::from)?;
        let ckpt = Checkpoint::load(BufReader::new(file))?;
        *out_model = Box::into_raw(Box::new(MbRbm { inner: ckpt.model }));
        Ok(())
    })
}

/// Save the model as a JSON checkpoint without training metadata.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_save(model: *const MbRbm, path: *const c_char) -> MbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let p = self::path(path)?;
        let file = File::create(p).map_err(Error::from)?;
        let ckpt = Checkpoint {
            model: m.inner.clone(),
            train_config: None,
        };
        ckpt.save(BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_free(model: *mut MbRbm) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle. Either out-pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_dims(
    model: *const MbRbm,
    out_visible: *mut usize,
    out_hidden: *mut usize,
) -> MbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if let Some(v) = out_visible.as_mut() {
            *v = m.inner.n_visible();
        }
        if let Some(h) = out_hidden.as_mut() {
            *h = m.inner.n_hidden();
        }
        Ok(())
    })
}

/// Free energy `F(v)` of a `+1/-1` visible vector.
///
/// # Safety
/// `model` must be a live handle, `v` must hold `n` values and
/// `out_free_energy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_free_energy(
    model: *const MbRbm,
    v: *const i8,
    n: usize,
    out_free_energy: *mut c_double,
) -> MbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let v = slice(v, n, "v")?;
        let o = out(out_free_energy, "out_free_energy")?;
        *o = rbm::free_energy(v, &m.inner)?;
        Ok(())
    })
}

/// Exact marginal `p(v)`, for at most 20 visible units.
///
/// # Safety
/// As for [`mb_rbm_free_energy`].
#[no_mangle]
pub unsafe extern "C" fn mb_rbm_marginal(
    model: *const MbRbm,
    v: *const i8,
    n: usize,
    out_probability: *mut c_double,
) -> MbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let v = slice(v, n, "v")?;
        let o = out(out_probability, "out_probability")?;
        *o = rbm::exact_marginal(v, &m.inner)?;
        Ok(())
    })
}

/// Effective Hamiltonian of an `side x side` lattice under `block x block`
/// majority. `tie_minus_one` selects the tie rule, otherwise ties go to +1.
///
/// # Safety
/// `out_table` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_effective_hamiltonian(
    side: usize,
    block: usize,
    periodic: c_int,
    tie_minus_one: c_int,
    coupling: c_double,
    beta: c_double,
    out_table: *mut *mut MbEffectiveTable,
) -> MbStatus {
    guard(|| {
        let out_table = out(out_table, "out_table")?;
        let tie = if tie_minus_one != 0 {
            TieRule::MinusOne
        } else {
            TieRule::PlusOne
        };
        let map = BlockMap::new(side, block, tie)?;
        let params = IsingParams::new(coupling, beta)?;
        let inner = coarsegrain::effective_hamiltonian(boundary(periodic), params, &map)?;
        *out_table = Box::into_raw(Box::new(MbEffectiveTable { inner }));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_effective_table_free(table: *mut MbEffectiveTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of macro configurations.
///
/// # Safety
/// `table` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_effective_table_len(
    table: *const MbEffectiveTable,
    out_len: *mut usize,
) -> MbStatus {
    guard(|| {
        let t = handle(table, "table")?;
        *out(out_len, "out_len")? = t.inner.entries().len();
        Ok(())
    })
}

/// `H_eff`, fiber size and `ln` of the fiber size for one macro index.
///
/// # Safety
/// `table` must be a live handle. Any out-pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn mb_effective_table_entry(
    table: *const MbEffectiveTable,
    index: u64,
    out_h_eff: *mut c_double,
    out_multiplicity: *mut u64,
    out_entropy: *mut c_double,
) -> MbStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let e = usize::try_from(index)
            .ok()
            .and_then(|k| t.inner.entries().get(k))
            .ok_or_else(|| {
                Fail(
                    MbStatus::MbErrInvalidInput,
                    format!("index {index} out of range"),
                )
            })?;
        if let Some(o) = out_h_eff.as_mut() {
            *o = e.h_eff;
        }
        if let Some(o) = out_multiplicity.as_mut() {
            *o = e.multiplicity;
        }
        if let Some(o) = out_entropy.as_mut() {
            *o = e.entropy;
        }
        Ok(())
    })
}

/// `ln Z_eff` over macro configurations.
///
/// # Safety
/// `table` must be a live handle and `out_log_z` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_effective_table_log_partition(
    table: *const MbEffectiveTable,
    out_log_z: *mut c_double,
) -> MbStatus {
    guard(|| {
        let t = handle(table, "table")?;
        *out(out_log_z, "out_log_z")? = t.inner.log_partition();
        Ok(())
    })
}

/// Membership of an `n x n` matrix in the cone of covariances reachable from
/// `m` latent dimensions.
///
/// # Safety
/// `sigma` must hold `n * n` values. Any out-pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn mb_wishart_cone_membership(
    sigma: *const c_double,
    n: usize,
    m: usize,
    out_member: *mut c_int,
    out_min_eigenvalue: *mut c_double,
    out_rank: *mut usize,
) -> MbStatus {
    guard(|| {
        let s = square(sigma, n, "sigma")?;
        let r = wishart::cone_membership(&s, n, m)?;
        if let Some(o) = out_member.as_mut() {
            *o = c_int::from(r.member);
        }
        if let Some(o) = out_min_eigenvalue.as_mut() {
            *o = r.min_eigenvalue;
        }
        if let Some(o) = out_rank.as_mut() {
            *o = r.rank;
        }
        Ok(())
    })
}

/// 2-Wasserstein distance between centered Gaussians with SPD covariances.
///
/// # Safety
/// `sigma0` and `sigma1` must hold `d * d` values; `out_w2` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_w2_gaussian(
    sigma0: *const c_double,
    sigma1: *const c_double,
    d: usize,
    out_w2: *mut c_double,
) -> MbStatus {
    guard(|| {
        let s0 = square(sigma0, d, "sigma0")?;
        let s1 = square(sigma1, d, "sigma1")?;
        let o = out(out_w2, "out_w2")?;
        *o = transport::w2_gaussian(&s0, &s1)?;
        Ok(())
    })
}

/// Matrix `A` of the optimal map `x -> A x` between centered Gaussians,
/// written row-major into `out_a`.
///
/// # Safety
/// `sigma0` and `sigma1` must hold `d * d` values; `out_a` must have room for
/// `d * d` values.
#[no_mangle]
pub unsafe extern "C" fn mb_gaussian_ot_map(
    sigma0: *const c_double,
    sigma1: *const c_double,
    d: usize,
    out_a: *mut c_double,
) -> MbStatus {
    guard(|| {
        let s0 = square(sigma0, d, "sigma0")?;
        let s1 = square(sigma1, d, "sigma1")?;
        if out_a.is_null() {
            return Err(null("out_a"));
        }
        let map = transport::gaussian_ot_map(&s0, &s1)?;
        let (a, _) = map
            .linear_parts()
            .ok_or_else(|| Fail(MbStatus::MbErrNumerical, "map is not linear".into()))?;
        let dst = std::slice::from_raw_parts_mut(out_a, d * d);
        for i in 0..d {
            for j in 0..d {
                dst[i * d + j] = a[(i, j)];
            }
        }
        Ok(())
    })
}
