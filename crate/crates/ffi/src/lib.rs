//! C ABI over the apeqe toolkit.
//!
//! Every fallible function returns an [`ApeqeStatus`]; on failure
//! [`apeqe_last_error`] describes what went wrong. Strings handed out by the
//! library are owned by the caller and released with [`apeqe_string_free`].
//! Handles are opaque and released with their matching `_free` function.
//! Multi-sentence inputs are newline-separated, one sentence per line.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use apeqe::corpus::tokenize;
use apeqe::ensemble::{ensemble_beam_search, hypothesis_words, EnsembleManifest, EnsembleSpec};
use apeqe::input::{parse_factored, FactoredSentence, ModelInputKind};
use apeqe::metrics::{bleu, f1_mult, ter, TerOptions};
use apeqe::nmt::{beam_search, BeamConfig, Checkpoint, Seq2Seq};
use apeqe::qe::{format_tags, parse_tags, tag_sentence, TagOptions};
use apeqe::subword::{desegment_surfaces, BpeModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApeqeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Decode = 5,
    Panic = 6,
}

/// Learned BPE merges.
pub struct ApeqeBpe(BpeModel);

/// One model checkpoint.
pub struct ApeqeModel(Seq2Seq);

/// A weighted ensemble loaded from a manifest.
pub struct ApeqeEnsemble(EnsembleSpec);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(ApeqeStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: ApeqeStatus, message: impl std::fmt::Display) -> FfiResult<T> {
    Err(Failure(status, message.to_string()))
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guard(body: impl FnOnce() -> FfiResult<()>) -> ApeqeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            ApeqeStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            ApeqeStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(ApeqeStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(ApeqeStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .map_or_else(|| fail(ApeqeStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn write_out<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return fail(ApeqeStatus::NullPointer, "output pointer is null");
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).or_else(|_| fail(ApeqeStatus::InvalidArgument, "result contains a NUL byte"))?;
    write_out(out, c.into_raw())
}

fn corpus(text: &str) -> Vec<Vec<String>> {
    text.lines().map(tokenize).collect()
}

fn beam_config(beam: usize, max_len: usize) -> FfiResult<BeamConfig> {
    if beam == 0 || max_len == 0 {
        return fail(ApeqeStatus::InvalidArgument, "beam and max_len must be positive");
    }
    Ok(BeamConfig {
        beam_width: beam,
        n_best: 1,
        max_len,
    })
}

unsafe fn optional_marker<'a>(p: *const c_char) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        read_str(p, "desegment marker").map(Some)
    }
}

fn parse_for(line: &str, kind: ModelInputKind) -> FfiResult<FactoredSentence> {
    let mut s = parse_factored(line, Some(kind.arity())).or_else(|e| fail(ApeqeStatus::InvalidArgument, e))?;
    s.kind = kind;
    Ok(s)
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn apeqe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn apeqe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// OK/BAD tags for each MT line against the matching post-edit line, one
/// space-separated line per sentence.
///
/// # Safety
/// `mt` and `pe` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_qe_tags(
    mt: *const c_char,
    pe: *const c_char,
    shifts: bool,
    case_sensitive: bool,
    out: *mut *mut c_char,
) -> ApeqeStatus {
    guard(|| {
        let mt = corpus(read_str(mt, "mt")?);
        let pe = corpus(read_str(pe, "pe")?);
        if mt.len() != pe.len() {
            return fail(ApeqeStatus::InvalidArgument, format!("{} MT lines but {} post-edit lines", mt.len(), pe.len()));
        }
        let opts = TagOptions { case_sensitive, shifts };
        let lines: Vec<String> = mt.iter().zip(&pe).map(|(m, p)| format_tags(&tag_sentence(m, p, opts))).collect();
        write_string(out, lines.join("\n"))
    })
}

/// Corpus TER of newline-separated hypotheses against references.
///
/// # Safety
/// `hyps` and `refs` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_ter(
    hyps: *const c_char,
    refs: *const c_char,
    shifts: bool,
    case_sensitive: bool,
    out: *mut f64,
) -> ApeqeStatus {
    guard(|| {
        let hyps = corpus(read_str(hyps, "hyps")?);
        let refs = corpus(read_str(refs, "refs")?);
        let opts = TerOptions {
            shifts,
            case_sensitive,
            ..TerOptions::default()
        };
        let (score, _) = ter(&hyps, &refs, &opts).or_else(|e| fail(ApeqeStatus::InvalidArgument, e))?;
        write_out(out, score)
    })
}

/// Corpus BLEU of newline-separated hypotheses against references.
///
/// # Safety
/// `hyps` and `refs` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_bleu(hyps: *const c_char, refs: *const c_char, out: *mut f64) -> ApeqeStatus {
    guard(|| {
        let hyps = corpus(read_str(hyps, "hyps")?);
        let refs = corpus(read_str(refs, "refs")?);
        let (score, _) = bleu(&hyps, &refs).or_else(|e| fail(ApeqeStatus::InvalidArgument, e))?;
        write_out(out, score)
    })
}

/// F1-Mult of predicted against gold tag lines.
///
/// # Safety
/// `pred` and `gold` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_f1_mult(pred: *const c_char, gold: *const c_char, out: *mut f64) -> ApeqeStatus {
    guard(|| {
        let parse = |text: &str| -> FfiResult<Vec<_>> {
            text.lines()
                .enumerate()
                .map(|(i, l)| parse_tags(l, i + 1).or_else(|e| fail(ApeqeStatus::InvalidArgument, e)))
                .collect()
        };
        let pred = parse(read_str(pred, "pred")?)?;
        let gold = parse(read_str(gold, "gold")?)?;
        let (score, _) = f1_mult(&pred, &gold).or_else(|e| fail(ApeqeStatus::InvalidArgument, e))?;
        write_out(out, score)
    })
}

/// Loads a merges file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_bpe_load(path: *const c_char, out: *mut *mut ApeqeBpe) -> ApeqeStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let bpe = BpeModel::load(Path::new(path)).or_else(|e| fail(ApeqeStatus::Io, e))?;
        write_out(out, Box::into_raw(Box::new(ApeqeBpe(bpe))))
    })
}

/// Segments one tokenized line with the model's marker.
///
/// # Safety
/// `bpe` must be a live handle; `line` a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_bpe_apply(bpe: *const ApeqeBpe, line: *const c_char, out: *mut *mut c_char) -> ApeqeStatus {
    guard(|| {
        let bpe = handle(bpe, "bpe")?;
        let words = tokenize(read_str(line, "line")?);
        write_string(out, bpe.0.encode_sentence(&words).join(" "))
    })
}

/// # Safety
/// `bpe` must come from [`apeqe_bpe_load`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn apeqe_bpe_free(bpe: *mut ApeqeBpe) {
    if !bpe.is_null() {
        drop(Box::from_raw(bpe));
    }
}

/// Loads a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_model_load(path: *const c_char, out: *mut *mut ApeqeModel) -> ApeqeStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let ck = Checkpoint::load(Path::new(path)).or_else(|e| fail(ApeqeStatus::Io, e))?;
        write_out(out, Box::into_raw(Box::new(ApeqeModel(ck.model))))
    })
}

/// Number of `|`-separated fields each input token must carry.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn apeqe_model_input_arity(model: *const ApeqeModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.input_kind.arity())
}

/// Beam-decodes one factored input line. With a non-null `desegment`
/// marker, subword pieces are joined back into words.
///
/// # Safety
/// `model` must be a live handle; `line` a NUL-terminated string;
/// `desegment` null or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_model_translate(
    model: *const ApeqeModel,
    line: *const c_char,
    beam: usize,
    max_len: usize,
    desegment: *const c_char,
    out: *mut *mut c_char,
) -> ApeqeStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let input = parse_for(read_str(line, "line")?, model.config.input_kind)?;
        let marker = optional_marker(desegment)?;
        let cfg = beam_config(beam, max_len)?;
        let hyps = beam_search(model, &input, &cfg).or_else(|e| fail(ApeqeStatus::Decode, e))?;
        let mut words = model.target_vocab.decode(&hyps[0].tokens);
        if let Some(m) = marker {
            words = desegment_surfaces(&words, m);
        }
        write_string(out, words.join(" "))
    })
}

/// # Safety
/// `model` must come from [`apeqe_model_load`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn apeqe_model_free(model: *mut ApeqeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads an ensemble manifest and its checkpoints. Relative checkpoint
/// paths resolve against the manifest's directory.
///
/// # Safety
/// `manifest` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_ensemble_load(manifest: *const c_char, out: *mut *mut ApeqeEnsemble) -> ApeqeStatus {
    guard(|| {
        let path = Path::new(read_str(manifest, "manifest")?);
        let m = EnsembleManifest::load(path).or_else(|e| fail(ApeqeStatus::Io, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let spec = m.load_spec(base).or_else(|e| fail(ApeqeStatus::Io, e))?;
        write_out(out, Box::into_raw(Box::new(ApeqeEnsemble(spec))))
    })
}

/// Number of members, or 0 for null.
///
/// # Safety
/// `ensemble` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn apeqe_ensemble_size(ensemble: *const ApeqeEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.len())
}

/// Replaces the member weights; `len` must equal the member count.
///
/// # Safety
/// `ensemble` must be a live handle; `weights` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn apeqe_ensemble_set_weights(
    ensemble: *mut ApeqeEnsemble,
    weights: *const f64,
    len: usize,
) -> ApeqeStatus {
    guard(|| {
        let ensemble = ensemble
            .as_mut()
            .map_or_else(|| fail(ApeqeStatus::NullPointer, "ensemble is null"), Ok)?;
        if weights.is_null() {
            return fail(ApeqeStatus::NullPointer, "weights is null");
        }
        let w = std::slice::from_raw_parts(weights, len).to_vec();
        ensemble.0.set_weights(w).or_else(|e| fail(ApeqeStatus::InvalidArgument, e))
    })
}

/// Decodes one sentence. `inputs[k]` is member k's factored input line.
///
/// # Safety
/// `ensemble` must be a live handle; `inputs` must point to `len`
/// NUL-terminated strings; `desegment` null or a NUL-terminated string;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn apeqe_ensemble_decode(
    ensemble: *const ApeqeEnsemble,
    inputs: *const *const c_char,
    len: usize,
    beam: usize,
    max_len: usize,
    desegment: *const c_char,
    out: *mut *mut c_char,
) -> ApeqeStatus {
    guard(|| {
        let spec = &handle(ensemble, "ensemble")?.0;
        if inputs.is_null() {
            return fail(ApeqeStatus::NullPointer, "inputs is null");
        }
        if len != spec.len() {
            return fail(ApeqeStatus::InvalidArgument, format!("{len} inputs for {} members", spec.len()));
        }
        let lines = std::slice::from_raw_parts(inputs, len);
        let bundle = spec
            .members()
            .iter()
            .zip(lines)
            .map(|(m, &l)| parse_for(read_str(l, "input line")?, m.kind))
            .collect::<FfiResult<Vec<_>>>()?;
        let marker = optional_marker(desegment)?;
        let cfg = beam_config(beam, max_len)?;
        let hyps = ensemble_beam_search(spec, &bundle, &cfg).or_else(|e| fail(ApeqeStatus::Decode, e))?;
        write_string(out, hypothesis_words(spec, &hyps[0].tokens, marker).join(" "))
    })
}

/// # Safety
/// `ensemble` must come from [`apeqe_ensemble_load`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn apeqe_ensemble_free(ensemble: *mut ApeqeEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn apeqe_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        let status = unsafe { apeqe_qe_tags(ptr::null(), c"a".as_ptr(), false, false, &mut out) };
        assert_eq!(status, ApeqeStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(apeqe_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "mt is null");
        assert!(out.is_null());
    }

    #[test]
    fn success_clears_the_last_error() {
        let mut score = -1.0;
        unsafe { apeqe_bleu(ptr::null(), ptr::null(), &mut score) };
        let status = unsafe { apeqe_ter(c"a b".as_ptr(), c"a b".as_ptr(), true, false, &mut score) };
        assert_eq!(status, ApeqeStatus::Ok);
        assert_eq!(score, 0.0);
        assert!(unsafe { CStr::from_ptr(apeqe_last_error()) }.to_bytes().is_empty());
    }
}
