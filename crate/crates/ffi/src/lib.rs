// SPDX-License-Identifier: Apache-2.0

//! C ABI over the fipgraph toolkit.
//!
//! Objects are opaque handles created by `fg_*_parse` / `fg_*_load` /
//! `fg_*_simulate` and released with the matching `fg_*_free`. Every
//! fallible call returns an [`FgStatus`]; the message of the last failure on
//! the calling thread is available through [`fg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fipgraph::fault_sim::{build_fip_matrix, FaultKind, FipMatrix, ObservationSet, PatternSet, SimOptions};
use fipgraph::netlist::{parse_bench, s27, Circuit};
use fipgraph::stgcn::Model;
use fipgraph::stgraph::{convert_circuit, convert_unlabeled, ConvertOptions, FeatureMode};
use fipgraph::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Io = 5,
    ConfigMismatch = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Circuit size summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FgStats {
    pub gates: usize,
    pub dffs: usize,
    pub pis: usize,
    pub pos: usize,
    pub lines: usize,
}

/// Parsed netlist.
pub struct FgCircuit(Circuit);

/// Fault impact probabilities per kind, line and cycle.
pub struct FgFip(FipMatrix);

/// Trained predictor loaded from a checkpoint.
pub struct FgModel(Model);

pub const FG_KIND_SA0: u32 = 1;
pub const FG_KIND_SA1: u32 = 2;
pub const FG_KIND_STR: u32 = 4;
pub const FG_KIND_STF: u32 = 8;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FgStatus {
    match e {
        Error::UnknownGate { .. }
        | Error::Syntax { .. }
        | Error::UndefinedSignal(_)
        | Error::DuplicateDriver { .. }
        | Error::CombinationalCycle(_)
        | Error::UnknownOutput(_)
        | Error::Schema { .. }
        | Error::Json(_) => FgStatus::Parse,
        Error::Io { .. } => FgStatus::Io,
        Error::ConfigMismatch(_) => FgStatus::ConfigMismatch,
        Error::NonFiniteLoss { .. } => FgStatus::Numeric,
        _ => FgStatus::InvalidArgument,
    }
}

fn fail(status: FgStatus, msg: impl Into<String>) -> FgStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FgStatus>) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FgStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(FgStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: fipgraph::Result<T>) -> Result<T, FgStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, FgStatus> {
    if p.is_null() {
        return Err(fail(FgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FgStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, FgStatus> {
    p.as_ref().ok_or_else(|| fail(FgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FgStatus> {
    p.as_mut().ok_or_else(|| fail(FgStatus::NullPointer, format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Parses ISCAS'89 `.bench` text.
///
/// # Safety
/// `name` and `text` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_circuit_parse(name: *const c_char, text: *const c_char, out: *mut *mut FgCircuit) -> FgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let name = str_arg(name, "name")?;
        let text = str_arg(text, "text")?;
        let c = lift(parse_bench(name, text))?;
        *out = Box::into_raw(Box::new(FgCircuit(c)));
        Ok(())
    })
}

/// The built-in s27 benchmark.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_circuit_s27(out: *mut *mut FgCircuit) -> FgStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(FgCircuit(s27())));
        Ok(())
    })
}

/// # Safety
/// `circuit` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_circuit_stats(circuit: *const FgCircuit, out: *mut FgStats) -> FgStatus {
    guard(|| {
        let c = &ref_arg(circuit, "circuit")?.0;
        let s = c.stats();
        *out_arg(out, "out")? = FgStats {
            gates: s.gates,
            dffs: s.dffs,
            pis: s.pis,
            pos: s.pos,
            lines: s.lines,
        };
        Ok(())
    })
}

/// # Safety
/// `circuit` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fg_circuit_free(circuit: *mut FgCircuit) {
    if !circuit.is_null() {
        drop(Box::from_raw(circuit));
    }
}

fn kinds_from_mask(mask: u32) -> Result<Vec<FaultKind>, FgStatus> {
    let table = [
        (FG_KIND_SA0, FaultKind::Sa0),
        (FG_KIND_SA1, FaultKind::Sa1),
        (FG_KIND_STR, FaultKind::Str),
        (FG_KIND_STF, FaultKind::Stf),
    ];
    if mask == 0 || mask & !0xf != 0 {
        return Err(fail(FgStatus::InvalidArgument, format!("bad fault-kind mask {mask:#x}")));
    }
    Ok(table.iter().filter(|(bit, _)| mask & bit != 0).map(|&(_, k)| k).collect())
}

/// Fault-simulates every line for the kinds in `kind_mask` (`FG_KIND_*`),
/// observing primary outputs and, if `observe_ppo` is set, flip-flop D pins.
///
/// # Safety
/// `circuit` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_fip_simulate(
    circuit: *const FgCircuit,
    kind_mask: u32,
    n_patterns: usize,
    n_cycles: usize,
    seed: u64,
    observe_ppo: bool,
    out: *mut *mut FgFip,
) -> FgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let c = &ref_arg(circuit, "circuit")?.0;
        let kinds = kinds_from_mask(kind_mask)?;
        let ps = lift(PatternSet::random(seed, n_patterns, n_cycles, c.primary_inputs.len()))?;
        let observe = if observe_ppo {
            ObservationSet::pos_and_ppos()
        } else {
            ObservationSet::pos()
        };
        let m = lift(build_fip_matrix(c, &kinds, &ps, &observe, &SimOptions::default()))?;
        *out = Box::into_raw(Box::new(FgFip(m)));
        Ok(())
    })
}

/// Dimensions of a FIP matrix. Any output pointer may be null.
///
/// # Safety
/// `fip` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn fg_fip_dims(fip: *const FgFip, kinds: *mut usize, lines: *mut usize, cycles: *mut usize) -> FgStatus {
    guard(|| {
        let m = &ref_arg(fip, "fip")?.0;
        for (p, v) in [(kinds, m.kinds.len()), (lines, m.n_lines()), (cycles, m.n_cycles)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// FIP of `line` at `cycle` (1-based) for the `kind_index`-th simulated kind.
///
/// # Safety
/// `fip` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_fip_get(fip: *const FgFip, kind_index: usize, line: usize, cycle: usize, out: *mut f64) -> FgStatus {
    guard(|| {
        let m = &ref_arg(fip, "fip")?.0;
        let out = out_arg(out, "out")?;
        if kind_index >= m.kinds.len() || line >= m.n_lines() || cycle == 0 || cycle > m.n_cycles {
            return Err(fail(
                FgStatus::InvalidArgument,
                format!("index ({kind_index}, {line}, {cycle}) out of range"),
            ));
        }
        *out = m.fip(line, m.kinds[kind_index], cycle);
        Ok(())
    })
}

/// # Safety
/// `fip` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fg_fip_free(fip: *mut FgFip) {
    if !fip.is_null() {
        drop(Box::from_raw(fip));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_model_load(path: *const c_char, out: *mut *mut FgModel) -> FgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let m = lift(Model::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(FgModel(m)));
        Ok(())
    })
}

/// Number of values [`fg_model_predict`] writes for `circuit`.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_model_output_len(model: *const FgModel, circuit: *const FgCircuit, out: *mut usize) -> FgStatus {
    guard(|| {
        let cfg = &ref_arg(model, "model")?.0.config;
        let c = &ref_arg(circuit, "circuit")?.0;
        *out_arg(out, "out")? = cfg.s * c.gates.len() * cfg.q;
        Ok(())
    })
}

/// Predicts the FIP of the first output window, laid out as
/// `[frame][node][channel]`. Testability-feature models need no simulation;
/// FIP-feature models simulate `n_patterns` patterns for their inputs.
///
/// # Safety
/// Handles must come from this library; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fg_model_predict(
    model: *const FgModel,
    circuit: *const FgCircuit,
    seed: u64,
    n_patterns: usize,
    buf: *mut f64,
    len: usize,
) -> FgStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let c = &ref_arg(circuit, "circuit")?.0;
        if buf.is_null() {
            return Err(fail(FgStatus::NullPointer, "buf is null"));
        }
        let cfg = &model.config;
        let need = cfg.s * c.gates.len() * cfg.q;
        if len < need {
            return Err(fail(FgStatus::BufferTooSmall, format!("need {need} values, got {len}")));
        }
        let mode = if cfg.p == FeatureMode::Tm.channels() {
            FeatureMode::Tm
        } else {
            FeatureMode::Fip
        };
        let opts = ConvertOptions {
            mode,
            m: cfg.m,
            s: cfg.s,
            n_patterns,
            n_cycles: cfg.m + cfg.s,
            seed,
            ..Default::default()
        };
        let windows = lift(match mode {
            FeatureMode::Tm => convert_unlabeled(c, &opts),
            FeatureMode::Fip => convert_circuit(c, &opts),
        })?;
        let y = lift(model.predict(&windows[0]))?;
        std::slice::from_raw_parts_mut(buf, need).copy_from_slice(&y);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fg_model_free(model: *mut FgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_decoding() {
        assert_eq!(kinds_from_mask(FG_KIND_SA1 | FG_KIND_STF).unwrap(), vec![FaultKind::Sa1, FaultKind::Stf]);
        assert!(kinds_from_mask(0).is_err());
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::CombinationalCycle("x".into())), FgStatus::Parse);
        assert_eq!(status_of(&Error::ConfigMismatch("d".into())), FgStatus::ConfigMismatch);
        assert_eq!(status_of(&Error::NoFlipFlops), FgStatus::InvalidArgument);
    }

    #[test]
    fn truncated_error_copy() {
        set_error("abcdef".into());
        let mut buf = [1 as c_char; 4];
        let n = unsafe { fg_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 7);
        assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "abc");
    }
}
