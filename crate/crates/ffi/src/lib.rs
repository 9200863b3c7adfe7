//! C ABI over the `rebalance` crate.
//!
//! Datasets and heads cross the boundary as opaque handles created by
//! `rb_*` constructors and released with the matching `_free` function.
//! Every fallible call returns an [`RbStatus`]; on failure the message is
//! available from [`rb_last_error_message`] on the same thread until the
//! next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rebalance::dataset::{
    load_embeddings, save_embeddings, split, AnnotationLedger, EmbeddingDataset, SplitSpec,
};
use rebalance::evalreport::evaluate;
use rebalance::mathcore::{LinearHead, OptimConfig, OptimizerKind, Schedule};
use rebalance::samplers::BalanceMode;
use rebalance::synthlab::{generate_synthetic, verify_theorem, SyntheticSpec};
use rebalance::trainer::{cb_last_layer_retrain, dfr, load_head, save_head, train_head};
use rebalance::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Parse = 3,
    Io = 4,
    DegenerateSplit = 5,
    DegenerateStratum = 6,
    MissingAnnotation = 7,
    PoolExhausted = 8,
    Divergence = 9,
    LinkValidity = 10,
    TheoremViolation = 11,
    Panic = 99,
}

impl From<&Error> for RbStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => RbStatus::InvalidInput,
            Error::Parse { .. } => RbStatus::Parse,
            Error::Io { .. } => RbStatus::Io,
            Error::DegenerateSplit { .. } => RbStatus::DegenerateSplit,
            Error::DegenerateStratum { .. } => RbStatus::DegenerateStratum,
            Error::MissingAnnotation(_) => RbStatus::MissingAnnotation,
            Error::PoolExhausted { .. } => RbStatus::PoolExhausted,
            Error::Divergence { .. } => RbStatus::Divergence,
            Error::LinkValidity { .. } => RbStatus::LinkValidity,
            Error::TheoremViolation { .. } => RbStatus::TheoremViolation,
        }
    }
}

/// Minibatch balance modes accepted by [`rb_train`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbBalanceMode {
    Unbalanced = 0,
    ClassSampling = 1,
    GroupSampling = 2,
    SpuriousSampling = 3,
    ClassSubset = 4,
    GroupSubset = 5,
}

/// Optimizer choices for [`RbOptimConfig::optimizer`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbOptimizer {
    Sgd = 0,
    AdamW = 1,
}

/// Schedule choices for [`RbOptimConfig::schedule`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbSchedule {
    Constant = 0,
    Cosine = 1,
    Linear = 2,
}

/// Optimizer settings. `optimizer` and `schedule` hold `RbOptimizer` and
/// `RbSchedule` values; anything else is rejected as invalid input.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RbOptimConfig {
    pub optimizer: u32,
    pub schedule: u32,
    pub lr0: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RbSyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub minority_rate: f64,
    pub core_magnitude: f64,
    pub core_noise: f64,
    pub spurious_magnitude: f64,
    pub spurious_noise: f64,
    pub junk_scale: f64,
    pub class_prior: f64,
    pub seed: u64,
}

/// Summary filled by [`rb_evaluate`]. `worst_group_accuracy` is NaN when
/// the dataset has no spurious labels.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RbMetrics {
    pub worst_group_accuracy: f64,
    pub average_accuracy: f64,
    pub total: usize,
    pub total_correct: usize,
    /// Number of non-empty groups.
    pub groups: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RbTheoremReport {
    pub trials: usize,
    pub max_abs_deviation: f64,
    pub min_gap: f64,
}

/// Opaque dataset handle.
pub struct RbDataset {
    inner: EmbeddingDataset,
}

/// Opaque linear head handle.
pub struct RbHead {
    inner: LinearHead,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: RbStatus, msg: impl Into<String>) -> RbStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), RbStatus>) -> RbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(RbStatus::Panic, "internal panic"),
    }
}

trait IntoStatus<T> {
    fn status(self) -> Result<T, RbStatus>;
}

impl<T> IntoStatus<T> for rebalance::Result<T> {
    fn status(self) -> Result<T, RbStatus> {
        self.map_err(|e| fail(RbStatus::from(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, RbStatus> {
    p.as_ref()
        .ok_or_else(|| fail(RbStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, RbStatus> {
    if p.is_null() {
        return Err(fail(RbStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(RbStatus::InvalidInput, "path is not valid UTF-8"))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), RbStatus> {
    if out.is_null() {
        return Err(fail(RbStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn balance_mode(mode: u32) -> Result<BalanceMode, RbStatus> {
    Ok(match mode {
        0 => BalanceMode::Unbalanced,
        1 => BalanceMode::ClassSampling,
        2 => BalanceMode::GroupSampling,
        3 => BalanceMode::SpuriousSampling,
        4 => BalanceMode::ClassSubset,
        5 => BalanceMode::GroupSubset,
        other => {
            return Err(fail(
                RbStatus::InvalidInput,
                format!("unknown balance mode {other}"),
            ))
        }
    })
}

fn optim_config(c: &RbOptimConfig) -> Result<OptimConfig, RbStatus> {
    let optimizer = match c.optimizer {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::AdaptiveDecoupled,
        other => {
            return Err(fail(
                RbStatus::InvalidInput,
                format!("unknown optimizer {other}"),
            ))
        }
    };
    let schedule = match c.schedule {
        0 => Schedule::Constant,
        1 => Schedule::Cosine,
        2 => Schedule::Linear,
        other => {
            return Err(fail(
                RbStatus::InvalidInput,
                format!("unknown schedule {other}"),
            ))
        }
    };
    let cfg = OptimConfig {
        optimizer,
        lr0: c.lr0,
        schedule,
        weight_decay: c.weight_decay,
        total_steps: c.total_steps,
        batch_size: c.batch_size,
        seed: c.seed,
    };
    cfg.validate().status()?;
    Ok(cfg)
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default optimizer settings: SGD, lr 3e-3, cosine, weight decay 1e-4,
/// 250 steps, batch 32, seed 0.
#[no_mangle]
pub extern "C" fn rb_optim_config_default() -> RbOptimConfig {
    let d = OptimConfig::default();
    RbOptimConfig {
        optimizer: RbOptimizer::Sgd as u32,
        schedule: RbSchedule::Cosine as u32,
        lr0: d.lr0,
        weight_decay: d.weight_decay,
        total_steps: d.total_steps,
        batch_size: d.batch_size,
        seed: d.seed,
    }
}

#[no_mangle]
pub extern "C" fn rb_synthetic_spec_default() -> RbSyntheticSpec {
    let d = SyntheticSpec::default();
    RbSyntheticSpec {
        n: d.n,
        d: d.d,
        minority_rate: d.minority_rate,
        core_magnitude: d.core_magnitude,
        core_noise: d.core_noise,
        spurious_magnitude: d.spurious_magnitude,
        spurious_noise: d.spurious_noise,
        junk_scale: d.junk_scale,
        class_prior: d.class_prior,
        seed: d.seed,
    }
}

/// Loads a GEMB file (CSV when the path ends in `.csv`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_dataset_load(
    path: *const c_char,
    out: *mut *mut RbDataset,
) -> RbStatus {
    guard(|| {
        let path = path_arg(path)?;
        let inner = load_embeddings(&path).status()?;
        store(out, RbDataset { inner })
    })
}

/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rb_dataset_save(ds: *const RbDataset, path: *const c_char) -> RbStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let path = path_arg(path)?;
        save_embeddings(&ds.inner, &path).status()
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rb_dataset_free(ds: *mut RbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rb_dataset_len(ds: *const RbDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rb_dataset_dim(ds: *const RbDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `spec` must point to a valid `RbSyntheticSpec` and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_synth_generate(
    spec: *const RbSyntheticSpec,
    out: *mut *mut RbDataset,
) -> RbStatus {
    guard(|| {
        let s = deref(spec, "spec")?;
        let spec = SyntheticSpec {
            n: s.n,
            d: s.d,
            minority_rate: s.minority_rate,
            core_magnitude: s.core_magnitude,
            core_noise: s.core_noise,
            spurious_magnitude: s.spurious_magnitude,
            spurious_noise: s.spurious_noise,
            junk_scale: s.junk_scale,
            class_prior: s.class_prior,
            seed: s.seed,
        };
        let inner = generate_synthetic(&spec).status()?;
        store(out, RbDataset { inner })
    })
}

/// Seeded split into `count` parts; `out_parts` receives `count` handles.
///
/// # Safety
/// `fractions` must hold `count` values and `out_parts` room for `count`
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn rb_dataset_split(
    ds: *const RbDataset,
    fractions: *const f64,
    count: usize,
    seed: u64,
    out_parts: *mut *mut RbDataset,
) -> RbStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if fractions.is_null() || out_parts.is_null() {
            return Err(fail(
                RbStatus::NullPointer,
                "fractions or output array is null",
            ));
        }
        let fractions = std::slice::from_raw_parts(fractions, count).to_vec();
        let parts = split(&ds.inner, &SplitSpec::new(fractions, seed).status()?).status()?;
        for (i, part) in parts.into_iter().enumerate() {
            *out_parts.add(i) = Box::into_raw(Box::new(RbDataset { inner: part }));
        }
        Ok(())
    })
}

/// Trains a fresh head under `mode` (an `RbBalanceMode` value).
///
/// # Safety
/// Handles and pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_train(
    ds: *const RbDataset,
    mode: u32,
    config: *const RbOptimConfig,
    out: *mut *mut RbHead,
) -> RbStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let cfg = optim_config(deref(config, "config")?)?;
        let report = train_head(&ds.inner, balance_mode(mode)?, &cfg, None, &[]).status()?;
        store(out, RbHead { inner: report.head })
    })
}

/// Group-balanced retraining of a fresh head on `heldout`.
///
/// # Safety
/// Handles and pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_dfr(
    heldout: *const RbDataset,
    config: *const RbOptimConfig,
    out: *mut *mut RbHead,
) -> RbStatus {
    guard(|| {
        let ds = deref(heldout, "dataset")?;
        let cfg = optim_config(deref(config, "config")?)?;
        let mut ledger = AnnotationLedger::new(ds.inner.len());
        let inner = dfr(&ds.inner, &cfg, &mut ledger).status()?;
        store(out, RbHead { inner })
    })
}

/// Class-balanced retraining of a fresh head on `heldout`.
///
/// # Safety
/// Handles and pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_cb_retrain(
    heldout: *const RbDataset,
    config: *const RbOptimConfig,
    out: *mut *mut RbHead,
) -> RbStatus {
    guard(|| {
        let ds = deref(heldout, "dataset")?;
        let cfg = optim_config(deref(config, "config")?)?;
        let mut ledger = AnnotationLedger::new(ds.inner.len());
        let inner = cb_last_layer_retrain(&ds.inner, &cfg, &mut ledger).status()?;
        store(out, RbHead { inner })
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rb_head_load(path: *const c_char, out: *mut *mut RbHead) -> RbStatus {
    guard(|| {
        let path = path_arg(path)?;
        let inner = load_head(&path).status()?;
        store(out, RbHead { inner })
    })
}

/// # Safety
/// `head` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rb_head_save(head: *const RbHead, path: *const c_char) -> RbStatus {
    guard(|| {
        let head = deref(head, "head")?;
        let path = path_arg(path)?;
        save_head(&head.inner, &path).status()
    })
}

/// # Safety
/// `head` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rb_head_free(head: *mut RbHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Predicted class of one embedding of length `dim`.
///
/// # Safety
/// `embedding` must hold `dim` values and `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_head_predict(
    head: *const RbHead,
    embedding: *const f64,
    dim: usize,
    out_class: *mut u32,
) -> RbStatus {
    guard(|| {
        let head = deref(head, "head")?;
        if embedding.is_null() || out_class.is_null() {
            return Err(fail(RbStatus::NullPointer, "embedding or output is null"));
        }
        if dim != head.inner.dim() {
            return Err(fail(
                RbStatus::InvalidInput,
                format!(
                    "embedding has {dim} values, head expects {}",
                    head.inner.dim()
                ),
            ));
        }
        let x = std::slice::from_raw_parts(embedding, dim);
        *out_class = head.inner.predict(x) as u32;
        Ok(())
    })
}

/// Scores `head` on `ds`. When `group_accuracy` is non-null, entry `g`
/// for `g < group_len` receives the accuracy of group `g`, or NaN when the
/// group is empty or the dataset has no spurious labels.
///
/// # Safety
/// Handles must be live, `out` writable, and `group_accuracy` null or
/// holding `group_len` slots.
#[no_mangle]
pub unsafe extern "C" fn rb_evaluate(
    head: *const RbHead,
    ds: *const RbDataset,
    out: *mut RbMetrics,
    group_accuracy: *mut f64,
    group_len: usize,
) -> RbStatus {
    guard(|| {
        let head = deref(head, "head")?;
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(fail(RbStatus::NullPointer, "output pointer is null"));
        }
        let m = evaluate(&head.inner, &ds.inner).status()?;
        if !group_accuracy.is_null() {
            let slots = std::slice::from_raw_parts_mut(group_accuracy, group_len);
            for (g, slot) in slots.iter_mut().enumerate() {
                *slot = m.per_group_accuracy.get(&g).copied().unwrap_or(f64::NAN);
            }
        }
        *out = RbMetrics {
            worst_group_accuracy: m.worst_group_accuracy.unwrap_or(f64::NAN),
            average_accuracy: m.average_accuracy,
            total: m.total,
            total_correct: m.total_correct,
            groups: m.per_group_accuracy.len(),
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_verify_theorem(
    trials: usize,
    seed: u64,
    out: *mut RbTheoremReport,
) -> RbStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RbStatus::NullPointer, "output pointer is null"));
        }
        let r = verify_theorem(trials, seed).status()?;
        *out = RbTheoremReport {
            trials: r.trials,
            max_abs_deviation: r.max_abs_deviation,
            min_gap: r.min_gap,
        };
        Ok(())
    })
}
