//! C interface to `stegan-core`.
//!
//! Every function returns an [`SgnStatus`]; on failure a message is
//! available from [`sgn_last_error`] on the same thread. Models are opaque
//! handles released with [`sgn_model_free`]. Images are tightly packed 8-bit
//! RGB, row-major, `height * width * 3` bytes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stegan_core::keynoise::{EmbeddingKey, ShuffleKey};
use stegan_core::netarch::StegoModel;
use stegan_core::trainer::{NoopObserver, TrainConfig};
use stegan_core::{baseline, metrics, stego, Error, ImageU8};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Diverged = 5,
    Io = 6,
    Image = 7,
    SchemeMismatch = 8,
    Checksum = 9,
    BadMagic = 10,
    UnsupportedVersion = 11,
    Malformed = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

/// Opaque model handle.
pub struct SgnModel {
    inner: StegoModel,
}

/// Borrowed RGB image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgnImage {
    pub data: *const u8,
    pub height: usize,
    pub width: usize,
}

/// Borrowed byte string.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgnBytes {
    pub data: *const u8,
    pub len: usize,
}

/// Byte buffer owned by the library; release with [`sgn_buffer_free`].
#[repr(C)]
#[derive(Debug)]
pub struct SgnBuffer {
    pub data: *mut u8,
    pub len: usize,
}

/// Training settings; fill with [`sgn_train_config_default`] or
/// [`sgn_train_config_reduced`] before changing fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SgnTrainConfig {
    pub lambda: f64,
    pub gp_coeff: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_at_fraction: f64,
    pub iters_per_stage: usize,
    pub stages: usize,
    pub coarsest_min_dim: usize,
    pub trainable_block_window: usize,
    pub critic_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub hidden_width: usize,
    pub noise_amp_scale: f64,
    pub seed: u64,
}

impl From<&TrainConfig> for SgnTrainConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda: c.lambda,
            gp_coeff: c.gp_coeff,
            lr: c.lr,
            lr_decay: c.lr_decay,
            decay_at_fraction: c.decay_at_fraction,
            iters_per_stage: c.iters_per_stage,
            stages: c.stages,
            coarsest_min_dim: c.coarsest_min_dim,
            trainable_block_window: c.trainable_block_window,
            critic_steps: c.critic_steps,
            adam_beta1: c.adam_beta1,
            adam_beta2: c.adam_beta2,
            hidden_width: c.hidden_width,
            noise_amp_scale: c.noise_amp_scale,
            seed: c.seed,
        }
    }
}

impl From<&SgnTrainConfig> for TrainConfig {
    fn from(c: &SgnTrainConfig) -> Self {
        Self {
            lambda: c.lambda,
            gp_coeff: c.gp_coeff,
            lr: c.lr,
            lr_decay: c.lr_decay,
            decay_at_fraction: c.decay_at_fraction,
            iters_per_stage: c.iters_per_stage,
            stages: c.stages,
            coarsest_min_dim: c.coarsest_min_dim,
            trainable_block_window: c.trainable_block_window,
            critic_steps: c.critic_steps,
            adam_beta1: c.adam_beta1,
            adam_beta2: c.adam_beta2,
            hidden_width: c.hidden_width,
            noise_amp_scale: c.noise_amp_scale,
            seed: c.seed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SgnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => SgnStatus::InvalidArgument,
            Error::DimensionMismatch(_) => SgnStatus::DimensionMismatch,
            Error::NonFinite(_) => SgnStatus::NonFinite,
            Error::Diverged { .. } => SgnStatus::Diverged,
            Error::SchemeMismatch { .. } => SgnStatus::SchemeMismatch,
            Error::Checksum => SgnStatus::Checksum,
            Error::BadMagic => SgnStatus::BadMagic,
            Error::UnsupportedVersion(_) => SgnStatus::UnsupportedVersion,
            Error::Malformed(_) => SgnStatus::Malformed,
            Error::Io { .. } => SgnStatus::Io,
            Error::Image(_) => SgnStatus::Image,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SgnStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SgnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgnStatus::Panic
        }
    }
}

unsafe fn slice<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(SgnStatus::NullPointer, "null data pointer"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn image(img: *const SgnImage) -> Result<ImageU8, Failure> {
    let img = img.as_ref().ok_or_else(|| fail(SgnStatus::NullPointer, "null image"))?;
    let len = img
        .height
        .checked_mul(img.width)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| fail(SgnStatus::InvalidArgument, "image size overflows"))?;
    Ok(ImageU8::new(img.height, img.width, slice(img.data, len)?.to_vec())?)
}

unsafe fn model<'a>(m: *const SgnModel) -> Result<&'a StegoModel, Failure> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| fail(SgnStatus::NullPointer, "null model"))
}

unsafe fn write_image(img: &ImageU8, out: *mut u8, out_len: usize) -> Result<(), Failure> {
    let n = img.data().len();
    if out_len < n {
        return Err(fail(
            SgnStatus::BufferTooSmall,
            format!("output buffer holds {out_len} bytes, {n} needed"),
        ));
    }
    if out.is_null() {
        return Err(fail(SgnStatus::NullPointer, "null output buffer"));
    }
    ptr::copy_nonoverlapping(img.data().as_ptr(), out, n);
    Ok(())
}

fn publish(m: StegoModel, out: *mut *mut SgnModel) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(SgnStatus::NullPointer, "null output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(SgnModel { inner: m })) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sgn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn sgn_train_config_default(out: *mut SgnTrainConfig) -> SgnStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| fail(SgnStatus::NullPointer, "null config"))?;
        *out = (&TrainConfig::default()).into();
        Ok(())
    })
}

/// Small CPU profile: 500 iterations per stage, 4 stages.
#[no_mangle]
pub extern "C" fn sgn_train_config_reduced(out: *mut SgnTrainConfig) -> SgnStatus {
    guard(|| {
        let out = unsafe { out.as_mut() }.ok_or_else(|| fail(SgnStatus::NullPointer, "null config"))?;
        *out = (&TrainConfig::reduced()).into();
        Ok(())
    })
}

/// Parses a model container held in memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_model_load(bytes: *const u8, len: usize, out: *mut *mut SgnModel) -> SgnStatus {
    guard(|| publish(stego::load(slice(bytes, len)?)?, out))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_model_load_file(path: *const c_char, out: *mut *mut SgnModel) -> SgnStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(SgnStatus::NullPointer, "null path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(SgnStatus::InvalidArgument, "path is not UTF-8"))?;
        publish(stego::load_file(p)?, out)
    })
}

/// Serializes a model into a new buffer.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_model_save(m: *const SgnModel, out: *mut SgnBuffer) -> SgnStatus {
    guard(|| {
        let bytes = stego::save(model(m)?).into_boxed_slice();
        let out = out.as_mut().ok_or_else(|| fail(SgnStatus::NullPointer, "null buffer"))?;
        out.len = bytes.len();
        out.data = Box::into_raw(bytes) as *mut u8;
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sgn_model_save_file(m: *const SgnModel, path: *const c_char) -> SgnStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(SgnStatus::NullPointer, "null path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(SgnStatus::InvalidArgument, "path is not UTF-8"))?;
        Ok(stego::save_file(model(m)?, p)?)
    })
}

/// Releases a buffer from [`sgn_model_save`]. Null data is ignored.
///
/// # Safety
/// `buf` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sgn_buffer_free(buf: SgnBuffer) {
    if !buf.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf.data, buf.len)));
    }
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `m` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sgn_model_free(m: *mut SgnModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Output size of extraction and sampling.
///
/// # Safety
/// `m` must be a live handle; `height` and `width` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_model_dims(m: *const SgnModel, height: *mut usize, width: *mut usize) -> SgnStatus {
    guard(|| {
        let (h, w) = model(m)?.output_dims();
        if height.is_null() || width.is_null() {
            return Err(fail(SgnStatus::NullPointer, "null output"));
        }
        *height = h;
        *width = w;
        Ok(())
    })
}

/// Trains a model of `cover` hiding `count` secrets, one key each. Pass
/// `shuffle_keys` (also `count` entries) to scramble the secrets first, or
/// null. A null `config` uses the defaults.
///
/// # Safety
/// Every pointer must be valid for the stated counts; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_hide(
    cover: *const SgnImage,
    secrets: *const SgnImage,
    keys: *const SgnBytes,
    shuffle_keys: *const SgnBytes,
    count: usize,
    config: *const SgnTrainConfig,
    out: *mut *mut SgnModel,
) -> SgnStatus {
    guard(|| {
        let cover = image(cover)?;
        if count > 0 && (secrets.is_null() || keys.is_null()) {
            return Err(fail(SgnStatus::NullPointer, "null secrets or keys"));
        }
        let mut imgs = Vec::with_capacity(count);
        let mut ks = Vec::with_capacity(count);
        for i in 0..count {
            imgs.push(image(secrets.add(i))?);
            let k = &*keys.add(i);
            ks.push(EmbeddingKey::new(slice(k.data, k.len)?.to_vec())?);
        }
        let shuffle = if shuffle_keys.is_null() {
            None
        } else {
            let mut v = Vec::with_capacity(count);
            for i in 0..count {
                let k = &*shuffle_keys.add(i);
                v.push(ShuffleKey::new(slice(k.data, k.len)?.to_vec())?);
            }
            Some(v)
        };
        let cfg = config.as_ref().map_or_else(TrainConfig::default, TrainConfig::from);
        let m = stego::hide(
            &cover,
            &imgs,
            &ks,
            shuffle.is_some(),
            shuffle.as_deref(),
            &cfg,
            &mut NoopObserver,
        )?;
        publish(m, out)
    })
}

/// Regenerates the image hidden under `key` into `out` (`out_len` bytes,
/// at least `height * width * 3`). `shuffle_key` may be null.
///
/// # Safety
/// `m` must be a live handle; buffers valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn sgn_extract(
    m: *const SgnModel,
    key: SgnBytes,
    shuffle_key: *const SgnBytes,
    out: *mut u8,
    out_len: usize,
) -> SgnStatus {
    guard(|| {
        let m = model(m)?;
        let key = EmbeddingKey::new(slice(key.data, key.len)?.to_vec())?;
        let sk = match shuffle_key.as_ref() {
            Some(b) => Some(ShuffleKey::new(slice(b.data, b.len)?.to_vec())?),
            None => None,
        };
        write_image(&stego::extract(m, &key, sk.as_ref())?, out, out_len)
    })
}

/// Unconditional sample seeded by `seed`.
///
/// # Safety
/// `m` must be a live handle; `out` valid for `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sgn_sample(m: *const SgnModel, seed: u64, out: *mut u8, out_len: usize) -> SgnStatus {
    guard(|| write_image(&stego::sample(model(m)?, seed)?, out, out_len))
}

/// Least-significant-bit embedding; `out` must hold the cover's size.
///
/// # Safety
/// Images and `out` must be valid for their sizes.
#[no_mangle]
pub unsafe extern "C" fn sgn_lsb_hide(
    cover: *const SgnImage,
    secret: *const SgnImage,
    out: *mut u8,
    out_len: usize,
) -> SgnStatus {
    guard(|| write_image(&baseline::lsb_hide(&image(cover)?, &image(secret)?)?, out, out_len))
}

/// # Safety
/// `stego` and `out` must be valid for their sizes.
#[no_mangle]
pub unsafe extern "C" fn sgn_lsb_extract(stego: *const SgnImage, out: *mut u8, out_len: usize) -> SgnStatus {
    guard(|| write_image(&baseline::lsb_extract(&image(stego)?), out, out_len))
}

/// PSNR in dB; identical images give +infinity.
///
/// # Safety
/// Images must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_psnr(a: *const SgnImage, b: *const SgnImage, out: *mut f64) -> SgnStatus {
    guard(|| {
        let v = metrics::psnr(&image(a)?, &image(b)?)?;
        *out.as_mut().ok_or_else(|| fail(SgnStatus::NullPointer, "null output"))? = v;
        Ok(())
    })
}

/// # Safety
/// Images must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_ssim(a: *const SgnImage, b: *const SgnImage, out: *mut f64) -> SgnStatus {
    guard(|| {
        let v = metrics::ssim(&image(a)?, &image(b)?)?;
        *out.as_mut().ok_or_else(|| fail(SgnStatus::NullPointer, "null output"))? = v;
        Ok(())
    })
}
