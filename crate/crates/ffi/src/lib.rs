//! C ABI over the `interlingua` crate.
//!
//! Every entry point returns an [`IlStatus`]; on failure a message is kept
//! per thread and can be read with [`il_last_error`]. Strings handed out by
//! the library must be released with [`il_string_free`], models with
//! [`il_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use interlingua::corpus::{load_vocabs, tokenize};
use interlingua::eval::{corpus_bleu, greedy_decode, load_checkpoint};
use interlingua::model::ModelGraph;
use interlingua::Error;

/// Result codes. Zero is success.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    UnknownLanguage = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Opaque handle to a loaded model.
pub struct IlModel {
    model: ModelGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IlStatus {
    match e {
        Error::Io(_) => IlStatus::Io,
        Error::Checkpoint(_) | Error::VocabHashMismatch { .. } => IlStatus::Checkpoint,
        Error::UnknownLanguage(_) => IlStatus::UnknownLanguage,
        _ => IlStatus::InvalidArgument,
    }
}

struct Fail(IlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IlStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            IlStatus::Panic
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(IlStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(IlStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), Fail> {
    let c = CString::new(s)
        .map_err(|_| Fail(IlStatus::InvalidArgument, "output has a nul byte".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn null_check<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(IlStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Loads a checkpoint whose vocabularies live in the corpus directory
/// `data_dir`. On success `*out` owns a new handle.
///
/// # Safety
/// `checkpoint` and `data_dir` must be NUL-terminated strings; `out` must be
/// valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn il_model_load(
    checkpoint: *const c_char,
    data_dir: *const c_char,
    out: *mut *mut IlModel,
) -> IlStatus {
    guard(|| {
        null_check(out, "out")?;
        let ck = arg_str(checkpoint, "checkpoint")?;
        let dir = arg_str(data_dir, "data_dir")?;
        let vocabs = load_vocabs(Path::new(dir))?;
        let model = load_checkpoint(Path::new(ck), &vocabs)?.model;
        *out = Box::into_raw(Box::new(IlModel { model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`il_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn il_model_free(model: *mut IlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of languages the model serves.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn il_model_language_count(
    model: *const IlModel,
    out: *mut usize,
) -> IlStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        *out = (*model).model.langs.len();
        Ok(())
    })
}

/// Code of the `index`-th language, as a string to free with
/// [`il_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn il_model_language(
    model: *const IlModel,
    index: usize,
    out: *mut *mut c_char,
) -> IlStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        let langs = &(*model).model.langs;
        let l = langs.get(index).ok_or_else(|| {
            Fail(
                IlStatus::InvalidArgument,
                format!(
                    "language index {index} out of range ({} languages)",
                    langs.len()
                ),
            )
        })?;
        out_string(l.clone(), out)
    })
}

/// Greedy translation of `text` (one space-tokenized sentence per line)
/// from `src` to `tgt`. `*out` receives the translations, one per line.
///
/// # Safety
/// `model` must be a live handle; the strings NUL-terminated; `out` valid
/// for writing.
#[no_mangle]
pub unsafe extern "C" fn il_translate(
    model: *const IlModel,
    src: *const c_char,
    tgt: *const c_char,
    text: *const c_char,
    max_len: usize,
    out: *mut *mut c_char,
) -> IlStatus {
    guard(|| {
        null_check(model, "model")?;
        null_check(out, "out")?;
        let m = &(*model).model;
        let (src, tgt, text) = (
            arg_str(src, "src")?,
            arg_str(tgt, "tgt")?,
            arg_str(text, "text")?,
        );
        let sv = &m.pack(src)?.vocab;
        let tv = &m.pack(tgt)?.vocab;
        let sources: Vec<Vec<usize>> = text.lines().map(|l| sv.encode(&tokenize(l))).collect();
        let hyps = greedy_decode(m, src, tgt, &sources, max_len)?;
        let lines: Vec<String> = hyps.iter().map(|h| tv.decode(h).join(" ")).collect();
        out_string(lines.join("\n"), out)
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn il_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Unsmoothed corpus BLEU of `n` whitespace-tokenized hypotheses against
/// one reference each.
///
/// # Safety
/// `hyps` and `refs` must each point to `n` NUL-terminated strings; `out`
/// must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn il_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> IlStatus {
    guard(|| {
        null_check(hyps, "hyps")?;
        null_check(refs, "refs")?;
        null_check(out, "out")?;
        let mut h = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        for i in 0..n {
            h.push(tokenize(arg_str(*hyps.add(i), "hyps[i]")?));
            r.push(tokenize(arg_str(*refs.add(i), "refs[i]")?));
        }
        *out = corpus_bleu(&h, &r)?;
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn il_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn il_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
