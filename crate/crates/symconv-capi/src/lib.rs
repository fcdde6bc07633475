//! C ABI for the symconv library.
//!
//! Handles are opaque pointers created and destroyed by this module; every
//! fallible call returns an [`ScStatus`] and the last failure message on the
//! calling thread is available via [`sc_last_error`]. The generated header
//! lands in `include/symconv.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use symconv::matrix::Matrix;
use symconv::network::{Condition, Network};
use symconv::symmetry::{
    count_parameters, expand, random_kernel, SymmetricKernel, SymmetryClass, T2bMode,
};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScStatus {
    ScOk = 0,
    ScNullPointer = 1,
    ScInvalidArgument = 2,
    ScParseError = 3,
    ScIoError = 4,
    ScInternalError = 5,
}

/// Kernel symmetry families.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScSymmetryClass {
    ScClassR = 0,
    ScClassT1 = 1,
    ScClassT2a = 2,
    ScClassT2b = 3,
}

impl From<ScSymmetryClass> for SymmetryClass {
    fn from(c: ScSymmetryClass) -> SymmetryClass {
        match c {
            ScSymmetryClass::ScClassR => SymmetryClass::R,
            ScSymmetryClass::ScClassT1 => SymmetryClass::T1,
            ScSymmetryClass::ScClassT2a => SymmetryClass::T2A,
            ScSymmetryClass::ScClassT2b => SymmetryClass::T2B,
        }
    }
}

/// T2B gradient-folding mode used by networks created over the ABI.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScT2bMode {
    ScT2bLiteral = 0,
    ScT2bConsistent = 1,
}

impl From<ScT2bMode> for T2bMode {
    fn from(m: ScT2bMode) -> T2bMode {
        match m {
            ScT2bMode::ScT2bLiteral => T2bMode::Literal,
            ScT2bMode::ScT2bConsistent => T2bMode::Consistent,
        }
    }
}

/// Opaque kernel handle.
pub struct ScKernel {
    inner: SymmetricKernel,
}

/// Opaque network handle.
pub struct ScNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(msg).unwrap_or_default();
    });
}

fn status_of(err: &symconv::Error) -> ScStatus {
    use symconv::Error as E;
    match err {
        E::InvalidArgument(_) | E::InvalidGeometry(_) | E::InvalidCondition { .. } => {
            ScStatus::ScInvalidArgument
        }
        E::IdxParse { .. } | E::Parse(_) | E::Checkpoint(_) | E::Json(_) => ScStatus::ScParseError,
        E::Io(_) => ScStatus::ScIoError,
        _ => ScStatus::ScInternalError,
    }
}

fn fail(err: symconv::Error) -> ScStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> ScStatus) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            ScStatus::ScInternalError
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Number of free weights for a kernel class at an odd size >= 3.
#[no_mangle]
pub extern "C" fn sc_parameter_count(
    class: ScSymmetryClass,
    kernel_size: usize,
    out: *mut usize,
) -> ScStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return ScStatus::ScNullPointer;
        }
        match count_parameters(class.into(), kernel_size) {
            Ok(n) => {
                unsafe { *out = n };
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Create a kernel with Gaussian canonical weights (std = 1/sqrt(fan_in)).
#[no_mangle]
pub extern "C" fn sc_kernel_new_random(
    class: ScSymmetryClass,
    kernel_size: usize,
    fan_in: usize,
    seed: u64,
    out: *mut *mut ScKernel,
) -> ScStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return ScStatus::ScNullPointer;
        }
        if fan_in == 0 {
            set_error("fan_in must be positive");
            return ScStatus::ScInvalidArgument;
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (fan_in as f64).sqrt();
        match random_kernel(class.into(), kernel_size, std, &mut rng) {
            Ok(k) => {
                unsafe { *out = Box::into_raw(Box::new(ScKernel { inner: k })) };
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Create a kernel from explicit canonical weights.
#[no_mangle]
pub extern "C" fn sc_kernel_from_canonical(
    class: ScSymmetryClass,
    kernel_size: usize,
    values: *const f64,
    len: usize,
    out: *mut *mut ScKernel,
) -> ScStatus {
    guard(|| {
        if out.is_null() || values.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        let slice = unsafe { std::slice::from_raw_parts(values, len) };
        match SymmetricKernel::new(class.into(), kernel_size, slice.to_vec()) {
            Ok(k) => {
                unsafe { *out = Box::into_raw(Box::new(ScKernel { inner: k })) };
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Length of the kernel's canonical weight vector.
#[no_mangle]
pub extern "C" fn sc_kernel_canonical_len(kernel: *const ScKernel, out: *mut usize) -> ScStatus {
    guard(|| {
        if kernel.is_null() || out.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        unsafe { *out = (*kernel).inner.canonical.len() };
        ScStatus::ScOk
    })
}

/// Expand to the full row-major `kernel_size x kernel_size` filter.
/// `buf` must hold `kernel_size * kernel_size` doubles.
#[no_mangle]
pub extern "C" fn sc_kernel_expand(
    kernel: *const ScKernel,
    buf: *mut f64,
    buf_len: usize,
) -> ScStatus {
    guard(|| {
        if kernel.is_null() || buf.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        let k = unsafe { &(*kernel).inner };
        let need = k.kernel_size * k.kernel_size;
        if buf_len < need {
            set_error(format!("buffer holds {buf_len} values, need {need}"));
            return ScStatus::ScInvalidArgument;
        }
        match expand(k) {
            Ok(w) => {
                let dst = unsafe { std::slice::from_raw_parts_mut(buf, need) };
                dst.copy_from_slice(w.as_slice());
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn sc_kernel_free(kernel: *mut ScKernel) {
    if !kernel.is_null() {
        drop(unsafe { Box::from_raw(kernel) });
    }
}

/// Build the 4-layer digit classifier for a condition name like "L-T2B-R".
#[no_mangle]
pub extern "C" fn sc_network_new(
    condition: *const c_char,
    t2b_mode: ScT2bMode,
    seed: u64,
    out: *mut *mut ScNetwork,
) -> ScStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return ScStatus::ScNullPointer;
        }
        let Some(cond_str) = (unsafe { cstr_arg(condition) }) else {
            set_error("condition string is null or not UTF-8");
            return ScStatus::ScNullPointer;
        };
        let cond = match Condition::parse(cond_str) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match Network::digit_classifier(cond, t2b_mode.into(), seed) {
            Ok(n) => {
                unsafe { *out = Box::into_raw(Box::new(ScNetwork { inner: n })) };
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a network from a JSON checkpoint file.
#[no_mangle]
pub extern "C" fn sc_network_load(path: *const c_char, out: *mut *mut ScNetwork) -> ScStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return ScStatus::ScNullPointer;
        }
        let Some(path) = (unsafe { cstr_arg(path) }) else {
            set_error("path is null or not UTF-8");
            return ScStatus::ScNullPointer;
        };
        match Network::load_checkpoint(Path::new(path)) {
            Ok(n) => {
                unsafe { *out = Box::into_raw(Box::new(ScNetwork { inner: n })) };
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Save a network to a JSON checkpoint file.
#[no_mangle]
pub extern "C" fn sc_network_save(network: *const ScNetwork, path: *const c_char) -> ScStatus {
    guard(|| {
        if network.is_null() {
            set_error("network is null");
            return ScStatus::ScNullPointer;
        }
        let Some(path) = (unsafe { cstr_arg(path) }) else {
            set_error("path is null or not UTF-8");
            return ScStatus::ScNullPointer;
        };
        match unsafe { &(*network).inner }.save_checkpoint(Path::new(path)) {
            Ok(()) => ScStatus::ScOk,
            Err(e) => fail(e),
        }
    })
}

/// Side length of the square input expected by the network.
#[no_mangle]
pub extern "C" fn sc_network_input_size(network: *const ScNetwork, out: *mut usize) -> ScStatus {
    guard(|| {
        if network.is_null() || out.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        unsafe { *out = (*network).inner.input_size };
        ScStatus::ScOk
    })
}

/// Number of output classes.
#[no_mangle]
pub extern "C" fn sc_network_num_classes(network: *const ScNetwork, out: *mut usize) -> ScStatus {
    guard(|| {
        if network.is_null() || out.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        unsafe { *out = (*network).inner.output_classes() };
        ScStatus::ScOk
    })
}

/// Free-parameter counts: canonical conv weights vs dense weights+biases.
#[no_mangle]
pub extern "C" fn sc_network_param_counts(
    network: *const ScNetwork,
    features: *mut usize,
    classifier: *mut usize,
) -> ScStatus {
    guard(|| {
        if network.is_null() || features.is_null() || classifier.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        let counts = unsafe { &(*network).inner }.param_counts();
        unsafe {
            *features = counts.features;
            *classifier = counts.classifier;
        }
        ScStatus::ScOk
    })
}

/// Class probabilities for a row-major square image of
/// `input_size * input_size` doubles. `probs` must hold one double per
/// class.
#[no_mangle]
pub extern "C" fn sc_network_predict(
    network: *const ScNetwork,
    image: *const f64,
    image_len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> ScStatus {
    guard(|| {
        if network.is_null() || image.is_null() || probs.is_null() {
            set_error("null pointer argument");
            return ScStatus::ScNullPointer;
        }
        let net = unsafe { &(*network).inner };
        let side = net.input_size;
        if image_len != side * side {
            set_error(format!("image has {image_len} values, need {}", side * side));
            return ScStatus::ScInvalidArgument;
        }
        let classes = net.output_classes();
        if probs_len < classes {
            set_error(format!("probs buffer holds {probs_len} values, need {classes}"));
            return ScStatus::ScInvalidArgument;
        }
        let pixels = unsafe { std::slice::from_raw_parts(image, image_len) };
        let matrix = Matrix::from_vec(side, side, pixels.to_vec());
        match net.predict(&matrix) {
            Ok(p) => {
                let dst = unsafe { std::slice::from_raw_parts_mut(probs, classes) };
                dst.copy_from_slice(&p);
                ScStatus::ScOk
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn sc_network_free(network: *mut ScNetwork) {
    if !network.is_null() {
        drop(unsafe { Box::from_raw(network) });
    }
}
