//! C interface to the color augmentation, mIoU and checkpoint code.
//!
//! Every function returns a [`DgaugStatus`]; on failure the message is kept
//! per thread and can be read with [`dgaug_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_load` functions and released with the
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dgaug::colorlab::{
    decode_lab8, encode_lab8, lab_pixel_to_srgb, rica_apply, sample_rica_params_seeded, srgb_pixel_to_lab,
    ChannelParams, RgbImage, RicaMode, RicaParams, RicaRanges,
};
use dgaug::harness::Checkpoint;
use dgaug::segtoy::miou_from_maps;
use dgaug::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgaugStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Runtime = 6,
    Panic = 7,
}

/// RICA mode: which of the two steps run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgaugRicaMode {
    Step1 = 0,
    Step2 = 1,
    Both = 2,
}

/// Per-channel RICA parameters in L, A, B order: target mean, target
/// standard deviation, span S and start T.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DgaugRicaParams {
    pub values: [[f64; 4]; 3],
}

/// Opaque RGB image.
pub struct DgaugImage(RgbImage);

/// Opaque checkpoint.
pub struct DgaugCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn status_of(e: &Error) -> DgaugStatus {
    match e {
        Error::Shape(_) | Error::InvalidImage(_) => DgaugStatus::Shape,
        Error::Io { .. } => DgaugStatus::Io,
        Error::BadMagic | Error::UnsupportedVersion(_) | Error::Truncated(_) | Error::Checkpoint(_) => {
            DgaugStatus::Format
        }
        Error::InvalidRange(_) | Error::LabelOutOfRange { .. } | Error::Config(_) | Error::EmptyDataset => {
            DgaugStatus::InvalidArgument
        }
        _ => DgaugStatus::Runtime,
    }
}

fn fail(status: DgaugStatus, msg: impl Into<String>) -> DgaugStatus {
    LAST_ERROR.with(|m| *m.borrow_mut() = msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DgaugStatus>) -> DgaugStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgaugStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DgaugStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, DgaugStatus>;
}

impl<T> OrStatus<T> for dgaug::Result<T> {
    fn or_status(self) -> Result<T, DgaugStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), DgaugStatus> {
    if p.is_null() {
        Err(fail(DgaugStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, DgaugStatus> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(DgaugStatus::InvalidArgument, "path is not UTF-8"))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dgaug_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let m = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = m.len().min(len - 1);
            ptr::copy_nonoverlapping(m.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        m.len()
    })
}

/// Encoded CIELAB (`L*255/100`, `a+128`, `b+128`) of one sRGB pixel.
///
/// # Safety
/// `rgb` must point to 3 bytes and `lab` to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dgaug_srgb_to_lab8(rgb: *const u8, lab: *mut f64) -> DgaugStatus {
    guard(|| {
        non_null(rgb, "rgb")?;
        non_null(lab, "lab")?;
        let px = [*rgb, *rgb.add(1), *rgb.add(2)];
        let enc = encode_lab8(srgb_pixel_to_lab(px));
        ptr::copy_nonoverlapping(enc.as_ptr(), lab, 3);
        Ok(())
    })
}

/// sRGB of one encoded CIELAB triple, clamped to the gamut.
///
/// # Safety
/// `lab` must point to 3 doubles and `rgb` to 3 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dgaug_lab8_to_srgb(lab: *const f64, rgb: *mut u8) -> DgaugStatus {
    guard(|| {
        non_null(lab, "lab")?;
        non_null(rgb, "rgb")?;
        let enc = [*lab, *lab.add(1), *lab.add(2)];
        let px = lab_pixel_to_srgb(decode_lab8(enc));
        ptr::copy_nonoverlapping(px.as_ptr(), rgb, 3);
        Ok(())
    })
}

/// Creates an image from `width * height * 3` interleaved RGB bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_image_new(
    width: usize,
    height: usize,
    data: *const u8,
    len: usize,
    out: *mut *mut DgaugImage,
) -> DgaugStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(out, "out")?;
        let bytes = std::slice::from_raw_parts(data, len).to_vec();
        let img = RgbImage::from_raw(width, height, bytes).or_status()?;
        *out = Box::into_raw(Box::new(DgaugImage(img)));
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dgaug_image_free(img: *mut DgaugImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Writes width and height of `img`.
///
/// # Safety
/// `img` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_image_size(img: *const DgaugImage, width: *mut usize, height: *mut usize) -> DgaugStatus {
    guard(|| {
        non_null(img, "image")?;
        non_null(width, "width")?;
        non_null(height, "height")?;
        *width = (*img).0.width();
        *height = (*img).0.height();
        Ok(())
    })
}

/// Copies the interleaved RGB bytes of `img` into `buf`, which must hold
/// exactly `width * height * 3` bytes.
///
/// # Safety
/// `img` must be a live handle and `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dgaug_image_read(img: *const DgaugImage, buf: *mut u8, len: usize) -> DgaugStatus {
    guard(|| {
        non_null(img, "image")?;
        non_null(buf, "buf")?;
        let data = (*img).0.data();
        if len != data.len() {
            return Err(fail(DgaugStatus::Shape, format!("buffer holds {len} bytes, image has {}", data.len())));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, len);
        Ok(())
    })
}

fn params_to_c(p: &RicaParams) -> DgaugRicaParams {
    let mut out = DgaugRicaParams::default();
    for (dst, c) in out.values.iter_mut().zip(&p.channels) {
        *dst = [c.target_mean, c.target_std, c.span, c.start];
    }
    out
}

fn params_from_c(p: &DgaugRicaParams) -> RicaParams {
    let mut channels = [ChannelParams::default(); 3];
    for (dst, v) in channels.iter_mut().zip(&p.values) {
        *dst = ChannelParams {
            target_mean: v[0],
            target_std: v[1],
            span: v[2],
            start: v[3],
        };
    }
    RicaParams { channels }
}

/// Draws RICA parameters from the default ranges with a generator seeded
/// by `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_rica_sample(seed: u64, out: *mut DgaugRicaParams) -> DgaugStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = sample_rica_params_seeded(seed, &RicaRanges::default()).or_status()?;
        *out = params_to_c(&p);
        Ok(())
    })
}

/// Applies RICA with explicit parameters, producing a new image handle.
///
/// # Safety
/// `img` and `params` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_rica_apply(
    img: *const DgaugImage,
    params: *const DgaugRicaParams,
    mode: DgaugRicaMode,
    out: *mut *mut DgaugImage,
) -> DgaugStatus {
    guard(|| {
        non_null(img, "image")?;
        non_null(params, "params")?;
        non_null(out, "out")?;
        let p = params_from_c(&*params);
        p.validate().or_status()?;
        let mode = match mode {
            DgaugRicaMode::Step1 => RicaMode::Step1,
            DgaugRicaMode::Step2 => RicaMode::Step2,
            DgaugRicaMode::Both => RicaMode::Both,
        };
        let res = rica_apply(&(*img).0, &p, mode);
        *out = Box::into_raw(Box::new(DgaugImage(res)));
        Ok(())
    })
}

/// Mean IoU of a predicted label map against ground truth (`len` pixels,
/// `classes` classes, label 255 ignored).
///
/// # Safety
/// `pred` and `truth` must point to `len` bytes; `miou` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_miou(
    pred: *const u8,
    truth: *const u8,
    len: usize,
    classes: usize,
    miou: *mut f64,
) -> DgaugStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(truth, "truth")?;
        non_null(miou, "miou")?;
        let p = std::slice::from_raw_parts(pred, len).to_vec();
        let t = std::slice::from_raw_parts(truth, len).to_vec();
        *miou = miou_from_maps(&[p], &[t], classes).or_status()?.miou;
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_checkpoint_load(path: *const c_char, out: *mut *mut DgaugCheckpoint) -> DgaugStatus {
    guard(|| {
        let path = path_arg(path)?;
        non_null(out, "out")?;
        let c = Checkpoint::load(path).or_status()?;
        *out = Box::into_raw(Box::new(DgaugCheckpoint(c)));
        Ok(())
    })
}

/// Writes a checkpoint atomically.
///
/// # Safety
/// `ckpt` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dgaug_checkpoint_save(ckpt: *const DgaugCheckpoint, path: *const c_char) -> DgaugStatus {
    guard(|| {
        non_null(ckpt, "checkpoint")?;
        let path = path_arg(path)?;
        (*ckpt).0.save(path).or_status()
    })
}

/// # Safety
/// `ckpt` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dgaug_checkpoint_free(ckpt: *mut DgaugCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Number of named arrays.
///
/// # Safety
/// `ckpt` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_checkpoint_len(ckpt: *const DgaugCheckpoint, count: *mut usize) -> DgaugStatus {
    guard(|| {
        non_null(ckpt, "checkpoint")?;
        non_null(count, "count")?;
        *count = (*ckpt).0.arrays.len();
        Ok(())
    })
}

/// Name (NUL terminated, truncated to `name_len`) and shape of array
/// `index`. `ndim` receives the true rank; at most `max_dims` dimensions are
/// written.
///
/// # Safety
/// `ckpt` must be a live handle; `name` must point to `name_len` writable
/// bytes, `dims` to `max_dims` writable values, and `ndim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dgaug_checkpoint_array_info(
    ckpt: *const DgaugCheckpoint,
    index: usize,
    name: *mut c_char,
    name_len: usize,
    dims: *mut u64,
    max_dims: usize,
    ndim: *mut usize,
) -> DgaugStatus {
    guard(|| {
        non_null(ckpt, "checkpoint")?;
        non_null(ndim, "ndim")?;
        let ck = &*ckpt;
        let a = ck
            .0
            .arrays
            .get(index)
            .ok_or_else(|| fail(DgaugStatus::InvalidArgument, format!("no array #{index}")))?;
        if !name.is_null() && name_len > 0 {
            let n = a.name.len().min(name_len - 1);
            ptr::copy_nonoverlapping(a.name.as_ptr().cast::<c_char>(), name, n);
            *name.add(n) = 0;
        }
        if !dims.is_null() {
            for (k, &d) in a.shape.iter().take(max_dims).enumerate() {
                *dims.add(k) = d as u64;
            }
        }
        *ndim = a.shape.len();
        Ok(())
    })
}

/// Copies the values of array `index`; `len` must equal its element count.
///
/// # Safety
/// `ckpt` must be a live handle and `buf` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn dgaug_checkpoint_array_read(
    ckpt: *const DgaugCheckpoint,
    index: usize,
    buf: *mut f32,
    len: usize,
) -> DgaugStatus {
    guard(|| {
        non_null(ckpt, "checkpoint")?;
        non_null(buf, "buf")?;
        let ck = &*ckpt;
        let a = ck
            .0
            .arrays
            .get(index)
            .ok_or_else(|| fail(DgaugStatus::InvalidArgument, format!("no array #{index}")))?;
        if a.data.len() != len {
            return Err(fail(DgaugStatus::Shape, format!("array '{}' has {} values, buffer {len}", a.name, a.data.len())));
        }
        ptr::copy_nonoverlapping(a.data.as_ptr(), buf, len);
        Ok(())
    })
}
