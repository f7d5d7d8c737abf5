//! C ABI for the msdcs codec.
//!
//! Every fallible function returns an [`MsdcsStatus`]; on failure the
//! message is available from [`msdcs_last_error`] on the same thread.
//! Models are opaque handles. Buffers and images returned by the library
//! must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use msdcs::format::{decode_model, decode_packet, encode_model, encode_packet, load_model, model_checksum};
use msdcs::{codec, metrics, Error, GrayImage, ModelParams, NetConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsdcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    UnsupportedFormat = 4,
    Malformed = 5,
    Checksum = 6,
    ModelMismatch = 7,
    Internal = 8,
}

/// A loaded model. Only ever handled through a pointer.
pub struct MsdcsModel {
    inner: ModelParams,
    checksum: u32,
}

/// Summary of a model's sampling setup.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MsdcsModelInfo {
    pub block_size: u32,
    pub measurements: u32,
    pub phase: u32,
    pub subrate_target: f64,
    pub subrate_realized: f64,
    pub checksum: u32,
}

/// Library-owned byte buffer.
#[repr(C)]
#[derive(Debug)]
pub struct MsdcsBuffer {
    pub data: *mut u8,
    pub len: usize,
}

/// Library-owned 8-bit grayscale image, row-major.
#[repr(C)]
#[derive(Debug)]
pub struct MsdcsImage {
    pub pixels: *mut u8,
    pub width: u32,
    pub height: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> MsdcsStatus {
    match err {
        Error::InvalidArgument(_) | Error::Shape { .. } | Error::NonFinite(_) | Error::Config(_) | Error::Data(_) => {
            MsdcsStatus::InvalidArgument
        }
        Error::Io { .. } => MsdcsStatus::Io,
        Error::UnsupportedFormat { .. } => MsdcsStatus::UnsupportedFormat,
        Error::Malformed { .. } => MsdcsStatus::Malformed,
        Error::Checksum { .. } => MsdcsStatus::Checksum,
        Error::ModelMismatch { .. } => MsdcsStatus::ModelMismatch,
        Error::Divergence { .. } => MsdcsStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic for [`msdcs_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (MsdcsStatus, String)>) -> MsdcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MsdcsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MsdcsStatus::Internal
        }
    }
}

fn lift<T>(r: msdcs::Result<T>) -> Result<T, (MsdcsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MsdcsStatus, String) {
    (MsdcsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(model: *const MsdcsModel) -> Result<&'a MsdcsModel, (MsdcsStatus, String)> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn bytes<'a>(data: *const u8, len: usize, what: &str) -> Result<&'a [u8], (MsdcsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn gray(pixels: *const u8, width: u32, height: u32, what: &str) -> Result<GrayImage, (MsdcsStatus, String)> {
    let (w, h) = (width as usize, height as usize);
    let px = bytes(pixels, w * h, what)?;
    lift(GrayImage::new(w, h, px.to_vec()))
}

fn into_handle(inner: ModelParams, out: *mut *mut MsdcsModel) {
    let checksum = model_checksum(&inner);
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(MsdcsModel { inner, checksum })) };
}

fn into_buffer(v: Vec<u8>) -> MsdcsBuffer {
    let b = v.into_boxed_slice();
    let len = b.len();
    MsdcsBuffer {
        data: Box::into_raw(b) as *mut u8,
        len,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn msdcs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn msdcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msdcs_model_load(path: *const c_char, out: *mut *mut MsdcsModel) -> MsdcsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("path or out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (MsdcsStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        into_handle(lift(load_model(path))?, out);
        Ok(())
    })
}

/// Decodes a model from the bytes of a model file.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn msdcs_model_from_bytes(data: *const u8, len: usize, out: *mut *mut MsdcsModel) -> MsdcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        into_handle(lift(decode_model(bytes(data, len, "data")?))?, out);
        Ok(())
    })
}

/// Full-rate model that reconstructs its input exactly.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msdcs_model_identity(block_size: u32, out: *mut *mut MsdcsModel) -> MsdcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        into_handle(
            lift(ModelParams::full_rate_identity(
                block_size as usize,
                NetConfig::default(),
            ))?,
            out,
        );
        Ok(())
    })
}

/// Serializes a model in the model file format.
///
/// # Safety
/// `model` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn msdcs_model_to_bytes(model: *const MsdcsModel, out: *mut MsdcsBuffer) -> MsdcsStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_buffer(encode_model(&model.inner));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn msdcs_model_info(model: *const MsdcsModel, out: *mut MsdcsModelInfo) -> MsdcsStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = &model.inner.sampling;
        *out = MsdcsModelInfo {
            block_size: s.block_size as u32,
            measurements: s.measurements as u32,
            phase: u32::from(model.inner.phase.number()),
            subrate_target: f64::from(s.subrate),
            subrate_realized: s.realized_subrate(),
            checksum: model.checksum,
        };
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn msdcs_model_free(model: *mut MsdcsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Compresses a row-major 8-bit image into a measurement packet.
///
/// # Safety
/// `pixels` must point to `width * height` bytes; `model` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msdcs_compress(
    model: *const MsdcsModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    out: *mut MsdcsBuffer,
) -> MsdcsStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let img = gray(pixels, width, height, "pixels")?;
        let packet = lift(codec::compress_with_checksum(&model.inner, &img, model.checksum))?;
        *out = into_buffer(encode_packet(&packet));
        Ok(())
    })
}

/// Reconstructs the cropped image from a measurement packet.
///
/// # Safety
/// `packet` must point to `len` bytes; `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn msdcs_decompress(
    model: *const MsdcsModel,
    packet: *const u8,
    len: usize,
    ignore_model_checksum: bool,
    out: *mut MsdcsImage,
) -> MsdcsStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let packet = lift(decode_packet(bytes(packet, len, "packet")?))?;
        let img = lift(codec::decompress(&model.inner, &packet, ignore_model_checksum))?;
        let (width, height) = (img.width as u32, img.height as u32);
        let buf = into_buffer(img.pixels);
        *out = MsdcsImage {
            pixels: buf.data,
            width,
            height,
        };
        Ok(())
    })
}

/// # Safety
/// `buffer` must be null or hold a buffer returned by this library.
#[no_mangle]
pub unsafe extern "C" fn msdcs_buffer_free(buffer: *mut MsdcsBuffer) {
    if let Some(b) = buffer.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = ptr::null_mut();
        b.len = 0;
    }
}

/// # Safety
/// `image` must be null or hold an image returned by this library.
#[no_mangle]
pub unsafe extern "C" fn msdcs_image_free(image: *mut MsdcsImage) {
    if let Some(img) = image.as_mut() {
        if !img.pixels.is_null() {
            let len = img.width as usize * img.height as usize;
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(img.pixels, len)));
        }
        img.pixels = ptr::null_mut();
        img.width = 0;
        img.height = 0;
    }
}

/// PSNR in dB between two 8-bit images of equal size.
///
/// # Safety
/// `a` and `b` must each point to `width * height` bytes; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msdcs_psnr(a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> MsdcsStatus {
    metric(a, b, width, height, out, metrics::psnr)
}

/// Mean SSIM between two 8-bit images of equal size.
///
/// # Safety
/// As for [`msdcs_psnr`].
#[no_mangle]
pub unsafe extern "C" fn msdcs_ssim(a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> MsdcsStatus {
    metric(a, b, width, height, out, metrics::ssim)
}

unsafe fn metric(
    a: *const u8,
    b: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
    f: fn(&GrayImage, &GrayImage) -> msdcs::Result<f64>,
) -> MsdcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (x, y) = (gray(a, width, height, "a")?, gray(b, width, height, "b")?);
        *out = lift(f(&x, &y))?;
        Ok(())
    })
}
