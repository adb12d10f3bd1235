//! C ABI for pscatter.
//!
//! Filterbanks are opaque [`PsBank`] handles created by `ps_bank_new` or
//! `ps_bank_from_json` and released with `ps_bank_free`. Every fallible call
//! returns a [`PsStatus`]; on failure `ps_last_error` describes the problem
//! for the calling thread. Images and outputs are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pscatter::analysis::filterbank_distance;
use pscatter::field::RealField;
use pscatter::filterbank::{FilterBank, FilterbankSpec, InitScheme, Parameterization};
use pscatter::scattering::{channel_count, forward};
use pscatter::Error;

/// Result of every fallible call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an unknown enum value.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Divergence = 4,
    /// The output buffer is smaller than required.
    BufferTooSmall = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsParameterization {
    Canonical = 0,
    Equivariant = 1,
    Pixelwise = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsInit {
    TightFrame = 0,
    Random = 1,
}

/// Opaque filterbank handle.
pub struct PsBank {
    inner: FilterBank,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::StrengthOutOfRange { .. }
        | Error::DegenerateEnvelope(_) => PsStatus::Config,
        Error::Divergence(_) => PsStatus::Divergence,
        Error::TapeMissing => PsStatus::Internal,
        _ => PsStatus::Data,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (PsStatus, String)>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PsStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (PsStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (PsStatus, String) {
    (PsStatus::InvalidArgument, msg.to_string())
}

unsafe fn bank_ref<'a>(bank: *const PsBank) -> Result<&'a FilterBank, (PsStatus, String)> {
    bank.as_ref()
        .map(|b| &b.inner)
        .ok_or_else(|| invalid("null filterbank handle"))
}

fn into_handle(bank: FilterBank, out: *mut *mut PsBank) {
    // SAFETY: callers check `out` for null before building the bank
    unsafe { *out = Box::into_raw(Box::new(PsBank { inner: bank })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Number of scattering channels for `j` scales and `l` orientations.
#[no_mangle]
pub extern "C" fn ps_channel_count(j: usize, l: usize) -> usize {
    channel_count(j, l)
}

/// Creates a filterbank. On success `*out` owns a handle to free with
/// `ps_bank_free`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_new(
    j: usize,
    l: usize,
    n: usize,
    parameterization: PsParameterization,
    init: PsInit,
    seed: u64,
    out: *mut *mut PsBank,
) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("null output pointer"));
        }
        let p = match parameterization {
            PsParameterization::Canonical => Parameterization::Canonical,
            PsParameterization::Equivariant => Parameterization::Equivariant,
            PsParameterization::Pixelwise => Parameterization::Pixelwise,
        };
        let i = match init {
            PsInit::TightFrame => InitScheme::TightFrame,
            PsInit::Random => InitScheme::Random,
        };
        let spec = FilterbankSpec::new(j, l, n).with_parameterization(p).with_init(i, seed);
        into_handle(FilterBank::new(spec).map_err(lib_err)?, out);
        Ok(())
    })
}

/// Reads a filterbank from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_from_json(json: *const c_char, out: *mut *mut PsBank) -> PsStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| invalid("filterbank JSON is not UTF-8"))?;
        into_handle(FilterBank::from_json(text).map_err(lib_err)?, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `bank` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_free(bank: *mut PsBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Serializes a bank. `*out` receives a string to release with
/// `ps_string_free`.
///
/// # Safety
/// `bank` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_to_json(bank: *const PsBank, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let bank = bank_ref(bank)?;
        if out.is_null() {
            return Err(invalid("null output pointer"));
        }
        let json = bank.to_json().map_err(lib_err)?;
        *out = CString::new(json)
            .map_err(|_| invalid("JSON contains a NUL byte"))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from `ps_bank_to_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of wavelet filters; 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_num_filters(bank: *const PsBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.num_filters())
}

/// Image side length; 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_side(bank: *const PsBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.spec().n)
}

/// Writes `(sigma, theta, xi, gamma)` for every filter into `out`, which must
/// hold `4 * ps_bank_num_filters(bank)` values.
///
/// # Safety
/// `bank` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_params(bank: *const PsBank, out: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        let bank = bank_ref(bank)?;
        let flat: Vec<f64> = bank.morlet_params().iter().flat_map(|p| p.to_array()).collect();
        if out.is_null() || len < flat.len() {
            return Err((
                PsStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", flat.len()),
            ));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
        Ok(())
    })
}

/// Number of doubles `ps_forward` writes for `batch` images:
/// `batch * channels * (n / 2^J)^2`. 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_output_len(bank: *const PsBank, batch: usize) -> usize {
    bank.as_ref().map_or(0, |b| output_len(&b.inner, batch))
}

fn output_len(bank: &FilterBank, batch: usize) -> usize {
    let s = bank.spec();
    let side = s.n >> s.j;
    batch * channel_count(s.j, s.l) * side * side
}

/// Scatters `batch` images of `n * n` doubles each. The output layout is
/// `[batch][channel][row][col]`.
///
/// # Safety
/// `bank` must be a live handle, `images` valid for `batch * n * n` doubles
/// and `out` valid for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_forward(
    bank: *const PsBank,
    images: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> PsStatus {
    guard(|| {
        let bank = bank_ref(bank)?;
        if images.is_null() && batch > 0 {
            return Err(invalid("null image buffer"));
        }
        let need = output_len(bank, batch);
        if out.is_null() || out_len < need {
            return Err((PsStatus::BufferTooSmall, format!("need {need} doubles, got {out_len}")));
        }
        let n = bank.spec().n;
        let fields = (0..batch)
            .map(|b| {
                let px = std::slice::from_raw_parts(images.add(b * n * n), n * n);
                RealField::from_vec(n, px.to_vec())
            })
            .collect::<pscatter::Result<Vec<_>>>()
            .map_err(lib_err)?;
        let (result, _) = forward(&fields, bank, false).map_err(lib_err)?;
        ptr::copy_nonoverlapping(result.data.as_ptr(), out, result.data.len());
        Ok(())
    })
}

/// Minimum-cost matching distance between two banks of equal size.
///
/// # Safety
/// `a` and `b` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_bank_distance(a: *const PsBank, b: *const PsBank, out: *mut f64) -> PsStatus {
    guard(|| {
        let (a, b) = (bank_ref(a)?, bank_ref(b)?);
        if out.is_null() {
            return Err(invalid("null output pointer"));
        }
        *out = filterbank_distance(&a.morlet_params(), &b.morlet_params())
            .map_err(lib_err)?
            .total;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = [0 as c_char; 256];
        unsafe { ps_last_error(buf.as_mut_ptr(), buf.len()) };
        unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
    }

    fn new_bank(j: usize, l: usize, n: usize) -> *mut PsBank {
        let mut h = ptr::null_mut();
        let s = unsafe { ps_bank_new(j, l, n, PsParameterization::Canonical, PsInit::TightFrame, 0, &mut h) };
        assert_eq!(s, PsStatus::Ok);
        h
    }

    #[test]
    fn forward_matches_library() {
        let h = new_bank(2, 4, 16);
        let images: Vec<f64> = (0..2 * 256).map(|i| ((i * 37) % 11) as f64).collect();
        let len = unsafe { ps_output_len(h, 2) };
        assert_eq!(len, 2 * channel_count(2, 4) * 16);
        let mut out = vec![0.0; len];
        assert_eq!(unsafe { ps_forward(h, images.as_ptr(), 2, out.as_mut_ptr(), len) }, PsStatus::Ok);

        let bank = unsafe { &(*h).inner };
        let fields: Vec<RealField> = images.chunks(256).map(|c| RealField::from_vec(16, c.to_vec()).unwrap()).collect();
        assert_eq!(forward(&fields, bank, false).unwrap().0.data, out);

        let s = unsafe { ps_forward(h, images.as_ptr(), 2, out.as_mut_ptr(), len - 1) };
        assert_eq!(s, PsStatus::BufferTooSmall);
        assert!(last_error().contains("need"));
        unsafe { ps_bank_free(h) };
    }

    #[test]
    fn json_round_trip_and_distance() {
        let h = new_bank(2, 4, 16);
        let mut s = ptr::null_mut();
        assert_eq!(unsafe { ps_bank_to_json(h, &mut s) }, PsStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(unsafe { ps_bank_from_json(s, &mut g) }, PsStatus::Ok);
        unsafe { ps_string_free(s) };
        let mut d = -1.0;
        assert_eq!(unsafe { ps_bank_distance(h, g, &mut d) }, PsStatus::Ok);
        assert_eq!(d, 0.0);

        let mut params = vec![0.0; 4 * 8];
        assert_eq!(unsafe { ps_bank_params(g, params.as_mut_ptr(), params.len()) }, PsStatus::Ok);
        assert_eq!(params[0], 0.8);

        let other = new_bank(1, 4, 16);
        assert_eq!(unsafe { ps_bank_distance(h, other, &mut d) }, PsStatus::Data);
        unsafe {
            ps_bank_free(h);
            ps_bank_free(g);
            ps_bank_free(other);
        }
    }

    #[test]
    fn errors_are_reported() {
        let mut h = ptr::null_mut();
        let s = unsafe { ps_bank_new(5, 4, 16, PsParameterization::Canonical, PsInit::TightFrame, 0, &mut h) };
        assert_eq!(s, PsStatus::Config);
        assert!(h.is_null());
        assert!(last_error().contains("must divide"), "{}", last_error());

        let bad = CString::new("{not json").unwrap();
        assert_eq!(unsafe { ps_bank_from_json(bad.as_ptr(), &mut h) }, PsStatus::Data);
        assert_eq!(unsafe { ps_bank_from_json(ptr::null(), &mut h) }, PsStatus::InvalidArgument);
        let mut d = 0.0;
        assert_eq!(
            unsafe { ps_bank_distance(ptr::null(), ptr::null(), &mut d) },
            PsStatus::InvalidArgument
        );
        assert_eq!(unsafe { ps_bank_num_filters(ptr::null()) }, 0);
        unsafe { ps_bank_free(ptr::null_mut()) };
        assert_eq!(ps_channel_count(2, 8), 81);
        assert_eq!(ps_channel_count(4, 8), 417);
        let v = unsafe { CStr::from_ptr(ps_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
