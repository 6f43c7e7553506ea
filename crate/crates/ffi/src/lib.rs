//! C ABI over `actchange`.
//!
//! Every entry point returns an [`ActStatus`]. On failure a message is kept
//! per thread and can be read with [`actchange_last_error`]. Panics are caught
//! at the boundary and reported as `ACT_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use actchange::cli::{cmd_validate, DataPaths};
use actchange::eval::average_precision;
use actchange::model::{count_params, forward, load_checkpoint, predict_all_verbs, ModelConfig, ModelParams};
use actchange::ndnum::Array;
use actchange::textgeo::{cosine, euclidean};
use actchange::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Degenerate = 4,
    NonFinite = 5,
    MissingKey = 6,
    Load = 7,
    Io = 8,
    Config = 9,
    Contract = 10,
    /// Average precision is undefined without a relevant item.
    NoPositives = 11,
    Panic = 12,
}

/// A loaded checkpoint. Create with `actchange_model_load`, release with
/// `actchange_model_free`.
pub struct ActModel {
    params: ModelParams<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActModelDims {
    pub d_seg: usize,
    pub d_text: usize,
    pub embed: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub mlp_hidden_layers: usize,
    pub num_adverbs: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActParamCount {
    pub attention: usize,
    pub mlp: usize,
    pub total: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActCorpusSummary {
    pub videos: usize,
    pub train: usize,
    pub test: usize,
    pub verbs: usize,
    pub adverbs: usize,
    pub antonyms: bool,
    pub d_seg: usize,
    pub d_pool: usize,
    pub d_text: usize,
    pub embedding_keys: usize,
}

struct Failure {
    status: ActStatus,
    message: String,
}

impl Failure {
    fn new(status: ActStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => ActStatus::Dimension,
            Error::Degenerate(_) => ActStatus::Degenerate,
            Error::Contract(_) => ActStatus::Contract,
            Error::NonFinite(_) => ActStatus::NonFinite,
            Error::MissingKey(_) => ActStatus::MissingKey,
            Error::Load { .. } | Error::Json(_) | Error::Csv(_) => ActStatus::Load,
            Error::Config(_) => ActStatus::Config,
            Error::Io { .. } => ActStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ActStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(ActStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => ActStatus::Ok,
        Err(f) => {
            set_last_error(&f.message);
            f.status
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(ActStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(ActStatus::InvalidArgument, format!("`{name}` is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn model_ref<'a>(model: *const ActModel) -> Result<&'a ActModel, Failure> {
    non_null(model, "model")?;
    Ok(&*model)
}

/// Segments are `t x d_seg` row-major. A null mask marks every segment valid;
/// otherwise nonzero bytes are valid.
unsafe fn video_args(
    model: &ActModel,
    segments: *const f32,
    t: usize,
    mask: *const u8,
) -> Result<(Array<f32>, Vec<bool>), Failure> {
    if t == 0 {
        return Err(Failure::new(
            ActStatus::InvalidArgument,
            "a video needs at least one segment",
        ));
    }
    let d = model.params.config.d_seg;
    let seg = slice(segments, t * d, "segments")?;
    let mask = if mask.is_null() {
        vec![true; t]
    } else {
        slice(mask, t, "mask")?.iter().map(|&m| m != 0).collect()
    };
    Ok((Array::matrix(t, d, seg.to_vec())?, mask))
}

fn dims_of(c: &ModelConfig) -> ActModelDims {
    ActModelDims {
        d_seg: c.d_seg,
        d_text: c.d_text,
        embed: c.embed,
        heads: c.heads,
        mlp_hidden: c.mlp_hidden,
        mlp_hidden_layers: c.mlp_hidden_layers,
        num_adverbs: c.num_adverbs,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn actchange_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn actchange_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint. On success `*out` owns a new model.
#[no_mangle]
pub unsafe extern "C" fn actchange_model_load(path: *const c_char, out: *mut *mut ActModel) -> ActStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = load_checkpoint(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(ActModel { params }));
        Ok(())
    })
}

/// Releases a model. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn actchange_model_free(model: *mut ActModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn actchange_model_dims(model: *const ActModel, out: *mut ActModelDims) -> ActStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = dims_of(&model_ref(model)?.params.config);
        Ok(())
    })
}

/// Eval-mode scores for one video and one verb query. `query` has `d_text`
/// entries and `out_scores` receives `num_adverbs`.
#[no_mangle]
pub unsafe extern "C" fn actchange_model_forward(
    model: *const ActModel,
    segments: *const f32,
    t: usize,
    mask: *const u8,
    query: *const f32,
    out_scores: *mut f32,
) -> ActStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = &m.params.config;
        let (seg, mask) = video_args(m, segments, t, mask)?;
        let q = slice(query, c.d_text, "query")?;
        let out = slice_mut(out_scores, c.num_adverbs, "out_scores")?;
        let r = forward(&m.params, &seg, &mask, q, None)?;
        out.copy_from_slice(r.predictions.data());
        Ok(())
    })
}

/// Scores one video under `num_verbs` queries (`num_verbs x d_text`,
/// row-major). `out_scores` receives `num_verbs x num_adverbs`. The
/// label-free score of an adverb is the column maximum.
#[no_mangle]
pub unsafe extern "C" fn actchange_model_predict_all_verbs(
    model: *const ActModel,
    segments: *const f32,
    t: usize,
    mask: *const u8,
    queries: *const f32,
    num_verbs: usize,
    out_scores: *mut f32,
) -> ActStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = &m.params.config;
        if num_verbs == 0 {
            return Err(Failure::new(ActStatus::InvalidArgument, "num_verbs is 0"));
        }
        let (seg, mask) = video_args(m, segments, t, mask)?;
        let q = Array::matrix(
            num_verbs,
            c.d_text,
            slice(queries, num_verbs * c.d_text, "queries")?.to_vec(),
        )?;
        let out = slice_mut(out_scores, num_verbs * c.num_adverbs, "out_scores")?;
        out.copy_from_slice(predict_all_verbs(&m.params, &seg, &mask, &q)?.data());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn actchange_count_params(dims: *const ActModelDims, out: *mut ActParamCount) -> ActStatus {
    guard(|| {
        non_null(dims, "dims")?;
        non_null(out, "out")?;
        let d = *dims;
        let config = ModelConfig {
            d_seg: d.d_seg,
            d_text: d.d_text,
            embed: d.embed,
            heads: d.heads,
            mlp_hidden: d.mlp_hidden,
            mlp_hidden_layers: d.mlp_hidden_layers,
            num_adverbs: d.num_adverbs,
            ..ModelConfig::default()
        };
        config.validate()?;
        let c = count_params(&config);
        *out = ActParamCount {
            attention: c.attention,
            mlp: c.mlp,
            total: c.total,
        };
        Ok(())
    })
}

/// Average precision of one ranking (descending score, ties by position).
/// `relevant` holds one byte per item, nonzero meaning relevant.
#[no_mangle]
pub unsafe extern "C" fn actchange_average_precision(
    scores: *const f64,
    relevant: *const u8,
    n: usize,
    out: *mut f64,
) -> ActStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = slice(scores, n, "scores")?;
        let r: Vec<bool> = slice(relevant, n, "relevant")?.iter().map(|&b| b != 0).collect();
        *out = average_precision(s, &r).ok_or_else(|| Failure::new(ActStatus::NoPositives, "no relevant item"))?;
        Ok(())
    })
}

/// Action-change geometry from raw embeddings of length `dim`. `d` is the
/// distance between `phrase` ("v a") and `contrast` ("v h(a)", or "v" without
/// antonyms); `delta` is `d` times the cosine of `verb` and `adverb`.
#[no_mangle]
pub unsafe extern "C" fn actchange_delta(
    phrase: *const f32,
    contrast: *const f32,
    verb: *const f32,
    adverb: *const f32,
    dim: usize,
    out_d: *mut f64,
    out_delta: *mut f64,
) -> ActStatus {
    guard(|| {
        non_null(out_d, "out_d")?;
        non_null(out_delta, "out_delta")?;
        if dim == 0 {
            return Err(Failure::new(ActStatus::InvalidArgument, "dim is 0"));
        }
        let f =
            |p, name| -> Result<Vec<f64>, Failure> { Ok(slice(p, dim, name)?.iter().map(|&x| f64::from(x)).collect()) };
        let d = euclidean(&f(phrase, "phrase")?, &f(contrast, "contrast")?);
        let c = cosine(&f(verb, "verb")?, &f(adverb, "adverb")?)?;
        *out_d = d;
        *out_delta = d * c;
        Ok(())
    })
}

/// Runs the full corpus loader validation on a directory holding
/// vocab.json, manifest.jsonl and features.bin, and checks the text
/// embeddings (null `embeddings` means `<corpus_dir>/text_embeddings.jsonl`).
#[no_mangle]
pub unsafe extern "C" fn actchange_validate_corpus(
    corpus_dir: *const c_char,
    embeddings: *const c_char,
    out: *mut ActCorpusSummary,
) -> ActStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = path_arg(corpus_dir, "corpus_dir")?;
        let emb = if embeddings.is_null() {
            None
        } else {
            Some(path_arg(embeddings, "embeddings")?)
        };
        let s = cmd_validate(&DataPaths::new(dir, emb))?;
        *out = ActCorpusSummary {
            videos: s.videos,
            train: s.train,
            test: s.test,
            verbs: s.verbs,
            adverbs: s.adverbs,
            antonyms: s.antonyms,
            d_seg: s.d_seg,
            d_pool: s.d_pool,
            d_text: s.d_text,
            embedding_keys: s.embedding_keys,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message() -> String {
        unsafe { CStr::from_ptr(actchange_last_error()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn guard_catches_panics() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, ActStatus::Panic);
        assert_eq!(message(), "panic: boom");
    }

    #[test]
    fn errors_map_to_statuses() {
        let s = guard(|| Err(Error::MissingKey("sent:x".into()).into()));
        assert_eq!(s, ActStatus::MissingKey);
        assert!(message().contains("sent:x"));
        assert_eq!(guard(|| Err(Error::Config("bad".into()).into())), ActStatus::Config);
        assert_eq!(guard(|| Ok(())), ActStatus::Ok);
    }

    #[test]
    fn interior_nul_does_not_lose_the_message() {
        guard(|| Err(Failure::new(ActStatus::InvalidArgument, "a\0b")));
        assert_eq!(message(), "a b");
    }
}
