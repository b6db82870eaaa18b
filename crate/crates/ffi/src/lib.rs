//! C interface. Clouds and models are opaque heap handles released with
//! their `_free` function; every call returns a [`DiregStatus`] and leaves a
//! message for [`direg_last_error_message`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use direg::eval::{register, EvalConfig, Matcher};
use direg::features::{load_checkpoint, Checkpoint};
use direg::geometry::kabsch_solve;
use direg::{CorrespondenceSet, Error, PointCloud, RigidTransform};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Unsupported = 6,
    Panic = 7,
}

/// Opaque point cloud.
pub struct DiregCloud {
    inner: PointCloud,
}

/// Opaque descriptor network checkpoint.
pub struct DiregModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> DiregStatus {
    match e {
        Error::Io { .. } => DiregStatus::Io,
        Error::Format { .. } | Error::Json(_) => DiregStatus::Format,
        Error::Unsupported2D => DiregStatus::Unsupported,
        Error::InvalidConfig(_)
        | Error::InvalidPointCloud(_)
        | Error::InvalidTransform(_)
        | Error::DimensionMismatch { .. }
        | Error::ShapeMismatch(_)
        | Error::EmptyInput => DiregStatus::InvalidArgument,
        _ => DiregStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DiregStatus, String)>) -> DiregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiregStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DiregStatus::Panic
        }
    }
}

fn lift(e: Error) -> (DiregStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DiregStatus, String) {
    (DiregStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: &str) -> (DiregStatus, String) {
    (DiregStatus::InvalidArgument, msg.to_string())
}

/// # Safety
/// `path` must be null or a NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, (DiregStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| bad("path is not UTF-8"))?;
    Ok(Path::new(s))
}

/// Writes `t` as a row-major 4×4 homogeneous matrix; 2D transforms act on
/// the first two axes and leave z fixed.
fn write_matrix(t: &RigidTransform, out: *mut f64) {
    let d = t.dim();
    let mut m = [0.0; 16];
    for i in 0..4 {
        m[i * 5] = 1.0;
    }
    for r in 0..d {
        for c in 0..d {
            m[r * 4 + c] = t.rotation()[(r, c)];
        }
        m[r * 4 + 3] = t.translation()[r];
    }
    // SAFETY: callers guarantee 16 writable doubles.
    unsafe { ptr::copy_nonoverlapping(m.as_ptr(), out, 16) };
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty when none failed.
#[no_mangle]
pub extern "C" fn direg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn direg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a cloud from `n` points of `dim` (2 or 3) coordinates and `k`
/// features per point. `features` may be null when `k` is 0.
///
/// # Safety
/// `coords` must hold `n * dim` doubles, `features` `n * k` doubles, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn direg_cloud_new(
    dim: usize,
    coords: *const f64,
    n: usize,
    k: usize,
    features: *const f64,
    out: *mut *mut DiregCloud,
) -> DiregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if coords.is_null() && n > 0 {
            return Err(null("coords"));
        }
        if features.is_null() && k > 0 && n > 0 {
            return Err(null("features"));
        }
        if dim != 2 && dim != 3 {
            return Err(bad("dim must be 2 or 3"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| bad("size overflow"))?;
        let flen = n.checked_mul(k).ok_or_else(|| bad("size overflow"))?;
        let c = if n == 0 { Vec::new() } else { std::slice::from_raw_parts(coords, len).to_vec() };
        let f = if flen == 0 { Vec::new() } else { std::slice::from_raw_parts(features, flen).to_vec() };
        let inner = PointCloud::with_features(dim, c, k, f).map_err(lift)?;
        *out = Box::into_raw(Box::new(DiregCloud { inner }));
        Ok(())
    })
}

/// Reads a PLY cloud written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn direg_cloud_load(path: *const c_char, out: *mut *mut DiregCloud) -> DiregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = direg::data::load_cloud(path_arg(path)?).map_err(lift)?;
        *out = Box::into_raw(Box::new(DiregCloud { inner }));
        Ok(())
    })
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn direg_cloud_len(cloud: *const DiregCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.len())
}

/// Spatial dimension, 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn direg_cloud_dim(cloud: *const DiregCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.dim())
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn direg_cloud_free(cloud: *mut DiregCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Loads a checkpoint written by `direg train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn direg_model_load(path: *const c_char, out: *mut *mut DiregModel) -> DiregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_checkpoint(path_arg(path)?).map_err(lift)?;
        *out = Box::into_raw(Box::new(DiregModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn direg_model_free(model: *mut DiregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Estimates the transform mapping `a` onto `b`. With a null `model` FPFH
/// descriptors are used (3D only). `voxel_size <= 0` picks the model's
/// voxel size, or 0.1 (3D) / 0.5 (2D) without a model. Writes a row-major
/// 4×4 matrix to `out_matrix` and, when non-null, the inlier ratio.
///
/// # Safety
/// Handles must be live, `out_matrix` must hold 16 doubles and
/// `out_inlier_ratio` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn direg_register(
    model: *const DiregModel,
    a: *const DiregCloud,
    b: *const DiregCloud,
    voxel_size: f64,
    ransac_iterations: usize,
    seed: u64,
    out_matrix: *mut f64,
    out_inlier_ratio: *mut f64,
) -> DiregStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("a"))?;
        let b = b.as_ref().ok_or_else(|| null("b"))?;
        if out_matrix.is_null() {
            return Err(null("out_matrix"));
        }
        if ransac_iterations == 0 {
            return Err(bad("ransac_iterations must be positive"));
        }
        let model = model.as_ref();
        let dim = a.inner.dim();
        let v = if voxel_size > 0.0 {
            voxel_size
        } else if let Some(m) = model {
            m.inner.voxel_size
        } else if dim == 2 {
            0.5
        } else {
            0.1
        };
        let mut cfg = EvalConfig::for_voxel(v, dim);
        cfg.ransac.max_iterations = ransac_iterations;
        cfg.ransac.seed = seed;
        let matcher = match model {
            Some(m) => Matcher::Net(&m.inner),
            None => Matcher::Fpfh,
        };
        let reg = register(&a.inner, &b.inner, &matcher, &cfg).map_err(lift)?;
        write_matrix(&reg.transform, out_matrix);
        if !out_inlier_ratio.is_null() {
            *out_inlier_ratio = reg.inlier_ratio;
        }
        Ok(())
    })
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` for `n`
/// points of `dim` coordinates. Writes a row-major 4×4 matrix.
///
/// # Safety
/// `src` and `dst` must hold `n * dim` doubles; `out_matrix` 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn direg_kabsch(
    dim: usize,
    src: *const f64,
    dst: *const f64,
    n: usize,
    out_matrix: *mut f64,
) -> DiregStatus {
    guard(|| {
        if src.is_null() || dst.is_null() || out_matrix.is_null() {
            return Err(null("src, dst or out_matrix"));
        }
        if dim != 2 && dim != 3 {
            return Err(bad("dim must be 2 or 3"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| bad("size overflow"))?;
        let a = PointCloud::new(dim, std::slice::from_raw_parts(src, len).to_vec()).map_err(lift)?;
        let b = PointCloud::new(dim, std::slice::from_raw_parts(dst, len).to_vec()).map_err(lift)?;
        let t = kabsch_solve(&a, &b, &CorrespondenceSet::identity(n)).map_err(lift)?;
        write_matrix(&t, out_matrix);
        Ok(())
    })
}
