//! C ABI over the codec, the block-fading channel and the pilot estimator.
//!
//! Every fallible call returns a [`SwinsitStatus`]; on failure the message is
//! kept per thread and read back with [`swinsit_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use num_complex::Complex64;
use swinsit::ceac::{equalize, ml_estimate};
use swinsit::channel::{sample_rayleigh, snr_to_noise_var, transmit};
use swinsit::codec::{ComplexSymbols, ModelConfig, SwinSitCodec};
use swinsit::compression::prune::pruned_count;
use swinsit::nn::ForwardCtx;
use swinsit::rng::{self, Stream, StreamRng};
use swinsit::{checkpoint, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwinsitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Checkpoint = 5,
    DeepFade = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque codec handle.
pub struct SwinsitCodec {
    codec: SwinSitCodec,
}

/// Opaque channel handle owning its random stream.
pub struct SwinsitChannel {
    rng: StreamRng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SwinsitStatus, String);

fn status_of(e: &Error) -> SwinsitStatus {
    match e {
        Error::Dimension(_) => SwinsitStatus::Dimension,
        Error::Argument(_) | Error::Precondition(_) | Error::EmptyStream(_) | Error::DegeneratePilot => {
            SwinsitStatus::InvalidArgument
        }
        Error::DeepFade { .. } => SwinsitStatus::DeepFade,
        Error::Io(_) => SwinsitStatus::Io,
        Error::Checkpoint(_) | Error::MissingCheckpoint(_) | Error::Json(_) | Error::Parse { .. } => {
            SwinsitStatus::Checkpoint
        }
        _ => SwinsitStatus::Numeric,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn run<F: FnOnce() -> Result<(), Failure>>(f: F) -> SwinsitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SwinsitStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SwinsitStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SwinsitStatus::NullPointer, format!("{what} is null"))
}

fn arg(msg: impl Into<String>) -> Failure {
    Failure(SwinsitStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn complex_pairs(v: &[f64]) -> Vec<Complex64> {
    v.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Copy the calling thread's last error message into `buf` (truncated and
/// NUL-terminated). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn swinsit_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = (bytes.len() - 1).min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn swinsit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a codec checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_load(path: *const c_char, out: *mut *mut SwinsitCodec) -> SwinsitStatus {
    run(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let codec = checkpoint::load_codec(&path, DType::F32)?;
        *out = Box::into_raw(Box::new(SwinsitCodec { codec }));
        Ok(())
    })
}

/// Freshly initialized codec from a JSON model configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SwinsitCodec,
) -> SwinsitStatus {
    run(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: ModelConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let codec = SwinSitCodec::new(cfg, DType::F32, seed)?;
        *out = Box::into_raw(Box::new(SwinsitCodec { codec }));
        Ok(())
    })
}

/// # Safety
/// `codec` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_save(codec: *const SwinsitCodec, path: *const c_char) -> SwinsitStatus {
    run(|| {
        let c = codec.as_ref().ok_or_else(|| null("codec"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        checkpoint::save_codec(&path, &c.codec)?;
        Ok(())
    })
}

/// # Safety
/// `codec` must be null or come from this library; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_free(codec: *mut SwinsitCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Input image height and width in pixels.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_image_size(
    codec: *const SwinsitCodec,
    height: *mut usize,
    width: *mut usize,
) -> SwinsitStatus {
    run(|| {
        let c = codec.as_ref().ok_or_else(|| null("codec"))?;
        if height.is_null() || width.is_null() {
            return Err(null("height/width"));
        }
        *height = c.codec.config.image_height;
        *width = c.codec.config.image_width;
        Ok(())
    })
}

/// Complex channel symbols per image, or 0 for a null handle.
///
/// # Safety
/// `codec` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_symbol_count(codec: *const SwinsitCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.codec.symbol_count())
}

fn image_len(c: &SwinSitCodec, n: usize) -> usize {
    n * c.config.image_height * c.config.image_width * 3
}

/// Encode `n_images` row-major `H x W x 3` images in [0, 1] at `snr_db`.
/// Writes `n_images * k` symbols as interleaved real/imaginary pairs.
///
/// # Safety
/// `pixels` must hold `n_images * H * W * 3` floats and `symbols` have room
/// for `symbols_len` floats.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_encode(
    codec: *const SwinsitCodec,
    pixels: *const f32,
    n_images: usize,
    snr_db: f64,
    symbols: *mut f32,
    symbols_len: usize,
) -> SwinsitStatus {
    run(|| {
        let c = &codec.as_ref().ok_or_else(|| null("codec"))?.codec;
        if n_images == 0 {
            return Err(arg("n_images must be positive"));
        }
        let need = n_images * c.symbol_count() * 2;
        if symbols_len < need {
            return Err(Failure(SwinsitStatus::Dimension, format!("symbol buffer holds {symbols_len} floats, {need} needed")));
        }
        let px = slice(pixels, image_len(c, n_images), "pixels")?;
        let dst = slice_mut(symbols, need, "symbols")?;
        let (h, w) = (c.config.image_height, c.config.image_width);
        let x = Tensor::from_slice(px, (n_images, h, w, 3), &Device::Cpu).map_err(Error::from)?;
        let y = c.encode(&x, &[snr_db], &ForwardCtx::eval())?;
        let v = y.data.to_dtype(DType::F32).and_then(|t| t.flatten_all()).and_then(|t| t.to_vec1::<f32>());
        dst.copy_from_slice(&v.map_err(Error::from)?);
        Ok(())
    })
}

/// Decode `n_images * k` interleaved symbols into `H x W x 3` images in [0, 1].
///
/// # Safety
/// `symbols` must hold `n_images * k * 2` floats and `pixels` have room for
/// `pixels_len` floats.
#[no_mangle]
pub unsafe extern "C" fn swinsit_codec_decode(
    codec: *const SwinsitCodec,
    symbols: *const f32,
    n_images: usize,
    snr_db: f64,
    pixels: *mut f32,
    pixels_len: usize,
) -> SwinsitStatus {
    run(|| {
        let c = &codec.as_ref().ok_or_else(|| null("codec"))?.codec;
        if n_images == 0 {
            return Err(arg("n_images must be positive"));
        }
        let need = image_len(c, n_images);
        if pixels_len < need {
            return Err(Failure(SwinsitStatus::Dimension, format!("pixel buffer holds {pixels_len} floats, {need} needed")));
        }
        let k = c.symbol_count();
        let src = slice(symbols, n_images * k * 2, "symbols")?;
        let dst = slice_mut(pixels, need, "pixels")?;
        let t = Tensor::from_slice(src, (n_images, k, 2), &Device::Cpu).map_err(Error::from)?;
        let x = c.decode(&ComplexSymbols::new(t)?, &[snr_db], &ForwardCtx::eval())?;
        let v = x.to_dtype(DType::F32).and_then(|t| t.flatten_all()).and_then(|t| t.to_vec1::<f32>());
        dst.copy_from_slice(&v.map_err(Error::from)?);
        Ok(())
    })
}

/// Rayleigh block-fading channel seeded for reproducible draws.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swinsit_channel_new(seed: u64, out: *mut *mut SwinsitChannel) -> SwinsitStatus {
    run(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(SwinsitChannel {
            rng: rng::stream(seed, Stream::Noise),
        }));
        Ok(())
    })
}

/// # Safety
/// `channel` must be null or come from this library; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn swinsit_channel_free(channel: *mut SwinsitChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Pass `n` interleaved complex symbols through one fading block in place:
/// draw `h`, then `y <- h y + w` at `snr_db`. The drawn gain is written to
/// `h_re`/`h_im` when they are not null.
///
/// # Safety
/// `symbols` must hold `2 n` doubles; `h_re` and `h_im` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn swinsit_channel_transmit(
    channel: *mut SwinsitChannel,
    symbols: *mut f64,
    n: usize,
    snr_db: f64,
    h_re: *mut f64,
    h_im: *mut f64,
) -> SwinsitStatus {
    run(|| {
        let ch = channel.as_mut().ok_or_else(|| null("channel"))?;
        let buf = slice_mut(symbols, 2 * n, "symbols")?;
        let h = sample_rayleigh(&mut ch.rng);
        let y = transmit(&complex_pairs(buf), h, snr_to_noise_var(snr_db), &mut ch.rng)?;
        for (d, z) in buf.chunks_mut(2).zip(y) {
            d[0] = z.re;
            d[1] = z.im;
        }
        if !h_re.is_null() {
            *h_re = h.re;
        }
        if !h_im.is_null() {
            *h_im = h.im;
        }
        Ok(())
    })
}

/// Maximum-likelihood gain estimate from `n` pilot/received pairs.
///
/// # Safety
/// `pilots` and `received` must hold `2 n` doubles; `h_re`/`h_im` must be valid.
#[no_mangle]
pub unsafe extern "C" fn swinsit_ml_estimate(
    pilots: *const f64,
    received: *const f64,
    n: usize,
    h_re: *mut f64,
    h_im: *mut f64,
) -> SwinsitStatus {
    run(|| {
        let p = complex_pairs(slice(pilots, 2 * n, "pilots")?);
        let r = complex_pairs(slice(received, 2 * n, "received")?);
        if h_re.is_null() || h_im.is_null() {
            return Err(null("h_re/h_im"));
        }
        let h = ml_estimate(&p, &r)?;
        *h_re = h.re;
        *h_im = h.im;
        Ok(())
    })
}

/// Zero-forcing equalization of `n` interleaved symbols in place.
///
/// # Safety
/// `symbols` must hold `2 n` doubles.
#[no_mangle]
pub unsafe extern "C" fn swinsit_zf_equalize(symbols: *mut f64, n: usize, h_re: f64, h_im: f64) -> SwinsitStatus {
    run(|| {
        let buf = slice_mut(symbols, 2 * n, "symbols")?;
        let eq = equalize(&complex_pairs(buf), Complex64::new(h_re, h_im))?;
        for (d, z) in buf.chunks_mut(2).zip(eq) {
            d[0] = z.re;
            d[1] = z.im;
        }
        Ok(())
    })
}

/// Parameters removed when pruning `total` weights at ratio `sparsity`.
///
/// # Safety
/// `pruned` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swinsit_pruned_count(total: u64, sparsity: f64, pruned: *mut u64) -> SwinsitStatus {
    run(|| {
        if pruned.is_null() {
            return Err(null("pruned"));
        }
        *pruned = pruned_count(total as usize, sparsity)? as u64;
        Ok(())
    })
}
