//! C ABI for pdenet models.
//!
//! Models are opaque [`PdenetModel`] handles created by
//! [`pdenet_model_load`], [`pdenet_model_from_json`] or
//! [`pdenet_model_exact`] and released with [`pdenet_model_free`]. Every
//! fallible call returns a [`PdenetStatus`]; on failure
//! [`pdenet_last_error`] describes the problem.
//!
//! State buffers are component-major: value `(c, ix, iy)` lives at
//! `c*nx*ny + ix*ny + iy`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pdenet::config::ExperimentConfig;
use pdenet::grid::relative_error;
use pdenet::report::exact_model;
use pdenet::simulator::generate_sample;
use pdenet::trainer::equation_snapshot;
use pdenet::{Error, Field, Grid, PdeNetModel, State};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdenetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Degenerate = 4,
    Divergence = 5,
    Config = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct PdenetModel {
    inner: PdeNetModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PdenetStatus {
    match e {
        Error::Shape(_) => PdenetStatus::Shape,
        Error::InvalidArgument(_) => PdenetStatus::InvalidArgument,
        Error::Degenerate(_) => PdenetStatus::Degenerate,
        Error::Divergence { .. } | Error::TrainingDiverged { .. } => PdenetStatus::Divergence,
        Error::Config(_) => PdenetStatus::Config,
        Error::Io(_) => PdenetStatus::Io,
        Error::Json(_) => PdenetStatus::Parse,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (PdenetStatus, String)>) -> PdenetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdenetStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PdenetStatus::Panic
        }
    }
}

fn fail(e: Error) -> (PdenetStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PdenetStatus, String) {
    (PdenetStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PdenetStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            PdenetStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn model_arg<'a>(p: *const PdenetModel) -> Result<&'a PdeNetModel, (PdenetStatus, String)> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn slice_arg<'a>(
    p: *const f64,
    len: usize,
    what: &str,
) -> Result<&'a [f64], (PdenetStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a>(
    p: *mut f64,
    len: usize,
    what: &str,
) -> Result<&'a mut [f64], (PdenetStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn state_from(buf: &[f64], grid: Grid, components: usize) -> Result<State, Error> {
    if buf.len() != components * grid.len() {
        return Err(Error::Shape(format!(
            "buffer holds {} values, expected {} components of {}x{}",
            buf.len(),
            components,
            grid.nx,
            grid.ny
        )));
    }
    let fields = buf
        .chunks_exact(grid.len())
        .map(|c| Field::from_values(grid, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    State::new(fields, 0.0)
}

fn write_state(s: &State, out: &mut [f64]) {
    for (chunk, f) in out.chunks_exact_mut(s.grid().len()).zip(&s.components) {
        chunk.copy_from_slice(f.values());
    }
}

fn store(out: *mut *mut PdenetModel, model: PdeNetModel) {
    // SAFETY: callers check `out` for null before building the model.
    unsafe { *out = Box::into_raw(Box::new(PdenetModel { inner: model })) };
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pdenet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model checkpoint written by the `pdenet` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_load(
    path: *const c_char,
    out: *mut *mut PdenetModel,
) -> PdenetStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        store(out, pdenet::io::load_model(Path::new(path)).map_err(fail)?);
        Ok(())
    })
}

/// Parses a model from checkpoint JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_from_json(
    json: *const c_char,
    out: *mut *mut PdenetModel,
) -> PdenetStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rec = serde_json::from_str(json).map_err(|e| fail(e.into()))?;
        store(out, PdeNetModel::from_record(&rec).map_err(fail)?);
        Ok(())
    })
}

/// Builds the model that represents the config's true PDE exactly.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_exact(
    config_json: *const c_char,
    out: *mut *mut PdenetModel,
) -> PdenetStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::from_json(text).map_err(fail)?;
        let spec = cfg.spec();
        let mspec = cfg
            .train
            .model_spec(spec.system.components(), spec.snapshot_dt);
        store(out, exact_model(&spec, &mspec).map_err(fail)?);
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from a pdenet constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_free(model: *mut PdenetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of components and grid size of a model.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_shape(
    model: *const PdenetModel,
    components: *mut usize,
    nx: *mut usize,
    ny: *mut usize,
) -> PdenetStatus {
    guard(|| {
        let m = model_arg(model)?;
        if components.is_null() || nx.is_null() || ny.is_null() {
            return Err(null("output"));
        }
        *components = m.n_components();
        *nx = m.grid.nx;
        *ny = m.grid.ny;
        Ok(())
    })
}

/// Time step of one block.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_dt(model: *const PdenetModel, dt: *mut f64) -> PdenetStatus {
    guard(|| {
        let m = model_arg(model)?;
        if dt.is_null() {
            return Err(null("dt"));
        }
        *dt = m.dt;
        Ok(())
    })
}

/// One block: `output = input + dt·F(D input)`. Both buffers hold `len`
/// values; they may not overlap.
///
/// # Safety
/// Buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_step(
    model: *const PdenetModel,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> PdenetStatus {
    guard(|| {
        let m = model_arg(model)?;
        let u =
            state_from(slice_arg(input, len, "input")?, m.grid, m.n_components()).map_err(fail)?;
        let out = slice_mut_arg(output, len, "output")?;
        write_state(&m.dt_block(&u).map_err(fail)?, out);
        Ok(())
    })
}

/// `n_steps` chained blocks from `input` (`len` values). `output` receives
/// the `n_steps` predicted states back to back (`n_steps·len` values). On
/// divergence the states before it are written, the rest is NaN and the
/// status is `Divergence`.
///
/// # Safety
/// `input` must hold `len` values and `output` `n_steps·len` values.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_rollout(
    model: *const PdenetModel,
    input: *const f64,
    len: usize,
    n_steps: usize,
    output: *mut f64,
) -> PdenetStatus {
    guard(|| {
        let m = model_arg(model)?;
        let u =
            state_from(slice_arg(input, len, "input")?, m.grid, m.n_components()).map_err(fail)?;
        let total = n_steps.checked_mul(len).ok_or_else(|| {
            (
                PdenetStatus::InvalidArgument,
                "n_steps·len overflows".to_string(),
            )
        })?;
        let out = slice_mut_arg(output, total, "output")?;
        let r = m.rollout(&u, n_steps).map_err(fail)?;
        for (chunk, s) in out.chunks_exact_mut(len).zip(&r.states) {
            write_state(s, chunk);
        }
        if let Some(block) = r.diverged_at {
            out[r.states.len() * len..].fill(f64::NAN);
            return Err(fail(Error::Divergence { block }));
        }
        Ok(())
    })
}

/// The recovered right-hand side of `component`, e.g.
/// `u_t = -0.98*u*u_x + …`, omitting terms below `threshold`. Release the
/// string with [`pdenet_string_free`].
///
/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdenet_model_equation(
    model: *const PdenetModel,
    component: usize,
    threshold: f64,
    out: *mut *mut c_char,
) -> PdenetStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if component >= m.n_components() || !(threshold >= 0.0) {
            return Err((
                PdenetStatus::InvalidArgument,
                format!("component {component} or threshold {threshold} out of range"),
            ));
        }
        let eq = equation_snapshot(m, threshold).swap_remove(component);
        *out = CString::new(eq)
            .expect("equations contain no NUL")
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdenet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Mean-centred relative error `‖pred − truth‖² / ‖truth − mean(truth)‖²`
/// summed over components of `nx×ny` grids.
///
/// # Safety
/// Both buffers must hold `components·nx·ny` values.
#[no_mangle]
pub unsafe extern "C" fn pdenet_relative_error(
    truth: *const f64,
    pred: *const f64,
    components: usize,
    nx: usize,
    ny: usize,
    out: *mut f64,
) -> PdenetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = Grid::new(nx, ny, 1.0, 1.0).map_err(fail)?;
        let len = components * grid.len();
        let t = state_from(slice_arg(truth, len, "truth")?, grid, components).map_err(fail)?;
        let p = state_from(slice_arg(pred, len, "pred")?, grid, components).map_err(fail)?;
        *out = relative_error(&t, &p).map_err(fail)?;
        Ok(())
    })
}

/// Simulates one clean coarse trajectory of the config's PDE from a random
/// initial condition drawn with `seed`. `output` receives `n_steps + 1`
/// states (`(n_steps+1)·components·n²` values, `n` the coarse size).
///
/// # Safety
/// `config_json` must be NUL-terminated; `output` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pdenet_simulate(
    config_json: *const c_char,
    seed: u64,
    n_steps: usize,
    output: *mut f64,
    len: usize,
) -> PdenetStatus {
    guard(|| {
        let cfg =
            ExperimentConfig::from_json(str_arg(config_json, "config_json")?).map_err(fail)?;
        let spec = cfg.spec();
        let per_state = spec.system.n_components() * spec.coarse_grid().len();
        if len != (n_steps + 1) * per_state {
            return Err(fail(Error::Shape(format!(
                "output holds {len} values, trajectory needs {}",
                (n_steps + 1) * per_state
            ))));
        }
        let out = slice_mut_arg(output, len, "output")?;
        let pair = generate_sample(&spec, n_steps, seed).map_err(fail)?;
        for (chunk, s) in out.chunks_exact_mut(per_state).zip(&pair.clean) {
            write_state(s, chunk);
        }
        Ok(())
    })
}
