//! C ABI for the feddt simulator.
//!
//! Every function returns an [`FdtStatus`]; on failure a description is
//! available from [`fdt_last_error`] on the same thread. Models are opaque
//! [`FdtModel`] handles released with [`fdt_model_free`]. Buffers and strings
//! returned by the library are released with [`fdt_bytes_free`] and
//! [`fdt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use feddt::config::RunConfig;
use feddt::cost::{
    feddt_total_closed_form, feddt_total_series, fedt_total, reduction_ratio, CostInputs,
};
use feddt::model::{DynamicTransformer, ModelConfig, PayloadMode};
use feddt::{gradcheck, harness, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Dimension = 5,
    Format = 6,
    Protocol = 7,
    Integrity = 8,
    GrowthCap = 9,
    Verification = 10,
    Io = 11,
    Contract = 12,
    Panic = 99,
}

impl From<&Error> for FdtStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => FdtStatus::Dimension,
            Error::Contract(_) => FdtStatus::Contract,
            Error::Config(_) => FdtStatus::Config,
            Error::Data(_) => FdtStatus::Data,
            Error::Format { .. } => FdtStatus::Format,
            Error::Protocol(_) => FdtStatus::Protocol,
            Error::Integrity(_) => FdtStatus::Integrity,
            Error::GrowthCap { .. } => FdtStatus::GrowthCap,
            Error::Verification(_) => FdtStatus::Verification,
            Error::Io { .. } => FdtStatus::Io,
        }
    }
}

/// Opaque model handle.
pub struct FdtModel {
    inner: DynamicTransformer,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FdtModelConfig {
    pub vocab_size: usize,
    pub frame_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub target_layers: usize,
    pub growth_parts: usize,
    pub max_seq_len: usize,
    pub literal_division: bool,
}

impl From<&FdtModelConfig> for ModelConfig {
    fn from(c: &FdtModelConfig) -> Self {
        ModelConfig {
            vocab_size: c.vocab_size,
            frame_dim: c.frame_dim,
            d_model: c.d_model,
            heads: c.heads,
            ffn_dim: c.ffn_dim,
            target_layers: c.target_layers,
            growth_parts: c.growth_parts,
            max_seq_len: c.max_seq_len,
            literal_division: c.literal_division,
        }
    }
}

impl From<&ModelConfig> for FdtModelConfig {
    fn from(c: &ModelConfig) -> Self {
        FdtModelConfig {
            vocab_size: c.vocab_size,
            frame_dim: c.frame_dim,
            d_model: c.d_model,
            heads: c.heads,
            ffn_dim: c.ffn_dim,
            target_layers: c.target_layers,
            growth_parts: c.growth_parts,
            max_seq_len: c.max_seq_len,
            literal_division: c.literal_division,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FdtParamCount {
    pub block_params: usize,
    pub fixed_params: usize,
    pub per_enc_block: usize,
    pub per_dec_block: usize,
}

/// Closed-form totals in weight units. The FedDT closed form is a reduced
/// fraction `closed_form_num / closed_form_den`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdtCostTotals {
    pub fedt_total: u64,
    pub feddt_series_total: u64,
    pub feddt_closed_form_num: u64,
    pub feddt_closed_form_den: u64,
    pub series_ratio: f64,
    pub closed_form_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(FdtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(FdtStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FdtStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FdtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FdtStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const FdtModel) -> Result<&'a FdtModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn to_u64(x: u128, what: &str) -> Result<u64, Fail> {
    u64::try_from(x).map_err(|_| Fail(FdtStatus::InvalidArgument, format!("{what} overflows u64")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(FdtStatus::Data, "string contains NUL".into()))
}

fn into_c_bytes(bytes: Vec<u8>, out_ptr: &mut *mut u8, out_len: &mut usize) {
    let boxed = bytes.into_boxed_slice();
    *out_len = boxed.len();
    *out_ptr = Box::into_raw(boxed).cast::<u8>();
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn fdt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_config_default(out: *mut FdtModelConfig) -> FdtStatus {
    guard(|| {
        *out_ref(out, "out")? = FdtModelConfig::from(&ModelConfig::default());
        Ok(())
    })
}

/// Creates a model at its initial depth.
///
/// # Safety
/// `config` must be null or point to a valid config; `out` must be null or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_new(
    config: *const FdtModelConfig,
    seed: u64,
    out: *mut *mut FdtModel,
) -> FdtStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_ref(out, "out")?;
        let inner = DynamicTransformer::new(ModelConfig::from(cfg), seed)?;
        *out = Box::into_raw(Box::new(FdtModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_free(model: *mut FdtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_layers(model: *const FdtModel, out: *mut usize) -> FdtStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out_ref(out, "out")? = m.inner.layers();
        Ok(())
    })
}

/// Appends `q` blocks to both stacks.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_grow(model: *mut FdtModel, q: usize) -> FdtStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        m.inner.grow(q)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_param_count(
    model: *const FdtModel,
    out: *mut FdtParamCount,
) -> FdtStatus {
    guard(|| {
        let pc = model_ref(model)?.inner.param_count();
        *out_ref(out, "out")? = FdtParamCount {
            block_params: pc.block_params,
            fixed_params: pc.fixed_params,
            per_enc_block: pc.per_enc_block,
            per_dec_block: pc.per_dec_block,
        };
        Ok(())
    })
}

/// Serializes the model; `full` adds the growth seed and Adam moments. The
/// buffer is released with [`fdt_bytes_free`].
///
/// # Safety
/// `model` must be a live handle; `out_ptr` and `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_serialize(
    model: *const FdtModel,
    full: bool,
    out_ptr: *mut *mut u8,
    out_len: *mut usize,
) -> FdtStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (p, l) = (out_ref(out_ptr, "out_ptr")?, out_ref(out_len, "out_len")?);
        let mode = if full {
            PayloadMode::Full
        } else {
            PayloadMode::WeightsOnly
        };
        into_c_bytes(m.inner.serialize(mode), p, l);
        Ok(())
    })
}

/// # Safety
/// `config` must point to a valid config, `data` to `len` readable bytes and
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_deserialize(
    config: *const FdtModelConfig,
    data: *const u8,
    len: usize,
    out: *mut *mut FdtModel,
) -> FdtStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        if data.is_null() {
            return Err(null("data"));
        }
        let out = out_ref(out, "out")?;
        let bytes = std::slice::from_raw_parts(data, len);
        let inner = DynamicTransformer::deserialize(bytes, &ModelConfig::from(cfg))?;
        *out = Box::into_raw(Box::new(FdtModel { inner }));
        Ok(())
    })
}

/// Generates `n_frames` frames into `out` (row-major, `n_frames · frame_dim`
/// values; `out_len` must be exactly that).
///
/// # Safety
/// `tokens` must point to `n_tokens` values and `out` to `out_len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn fdt_model_infer(
    model: *const FdtModel,
    tokens: *const u32,
    n_tokens: usize,
    n_frames: usize,
    out: *mut f64,
    out_len: usize,
) -> FdtStatus {
    guard(|| {
        let m = model_ref(model)?;
        if tokens.is_null() {
            return Err(null("tokens"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let need = n_frames * m.inner.config().frame_dim;
        if out_len != need {
            return Err(Fail(
                FdtStatus::InvalidArgument,
                format!("out_len is {out_len}, expected {need}"),
            ));
        }
        let toks = std::slice::from_raw_parts(tokens, n_tokens);
        let frames = m.inner.infer(toks, n_frames)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(frames.data());
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_cost(
    rounds: u64,
    parts: u64,
    layers: u64,
    w1: u64,
    w2: u64,
    out: *mut FdtCostTotals,
) -> FdtStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let i = CostInputs::new(rounds, parts, layers, w1, w2)?;
        let closed = feddt_total_closed_form(&i);
        let ratio = reduction_ratio(&i);
        *out = FdtCostTotals {
            fedt_total: to_u64(fedt_total(&i), "fedt_total")?,
            feddt_series_total: to_u64(feddt_total_series(&i), "feddt_series_total")?,
            feddt_closed_form_num: to_u64(closed.num, "closed-form numerator")?,
            feddt_closed_form_den: to_u64(closed.den, "closed-form denominator")?,
            series_ratio: ratio.series_ratio,
            closed_form_ratio: ratio.closed_form_ratio,
        };
        Ok(())
    })
}

/// Runs the experiment described by a TOML run configuration in memory and
/// returns its JSON summary (release with [`fdt_string_free`]).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_run_training(
    config_toml: *const c_char,
    out_json: *mut *mut c_char,
) -> FdtStatus {
    guard(|| {
        if config_toml.is_null() {
            return Err(null("config_toml"));
        }
        let out = out_ref(out_json, "out_json")?;
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|_| Fail(FdtStatus::InvalidArgument, "config is not UTF-8".into()))?;
        let cfg = RunConfig::from_toml_str(text)?;
        let result = harness::execute(&cfg)?;
        let json = serde_json::to_string(&result.summary).expect("summary serializes");
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// Runs the finite-difference suite; `passed` is false when the largest
/// relative error reaches the tolerance.
///
/// # Safety
/// `max_rel_err` and `passed` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fdt_gradcheck(
    seed: u64,
    max_rel_err: *mut f64,
    passed: *mut bool,
) -> FdtStatus {
    guard(|| {
        let (e, p) = (
            out_ref(max_rel_err, "max_rel_err")?,
            out_ref(passed, "passed")?,
        );
        let report = gradcheck::run(seed, None)?;
        *e = report.max_rel_err;
        *p = report.passed;
        Ok(())
    })
}

/// # Safety
/// `ptr`/`len` must come from a single library call returning bytes, or
/// `ptr` may be null.
#[no_mangle]
pub unsafe extern "C" fn fdt_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fdt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
