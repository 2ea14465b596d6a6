//! C interface to the graph-to-image toolkit.
//!
//! Objects are opaque handles created by `g2i_*_load`/`g2i_*_synth`/`g2i_render`
//! and released with the matching `g2i_*_free`. Every fallible call returns a
//! [`G2iStatus`]; on failure [`g2i_last_error_message`] describes the problem.
//! Panics never cross the boundary: they are reported as `G2I_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use g2i_core::cli::pipeline::{self, Inputs};
use g2i_core::cli::{PipelineConfig, StageError};
use g2i_core::cnn::{load_checkpoint, CnnError, ConvNet};
use g2i_core::graph::{generate_sbm, load_graph, AttributedGraph, GraphError};
use g2i_core::imaging::{read_tensor, write_tensor, ImageSet, ImagingError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum G2iStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArgument = 2,
    /// A file could not be read or written.
    Io = 3,
    /// Input data was malformed or inconsistent.
    InvalidData = 4,
    /// A pipeline stage failed.
    StageFailed = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// An attributed graph.
pub struct G2iGraph(AttributedGraph);

/// A set of per-node images.
pub struct G2iImages(ImageSet);

/// A trained classifier.
pub struct G2iModel(ConvNet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(G2iStatus, String);

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        let status = match e {
            GraphError::Io { .. } | GraphError::Csv { .. } => G2iStatus::Io,
            _ => G2iStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

impl From<ImagingError> for Failure {
    fn from(e: ImagingError) -> Self {
        let status = if matches!(e, ImagingError::Io { .. }) { G2iStatus::Io } else { G2iStatus::InvalidData };
        Failure(status, e.to_string())
    }
}

impl From<CnnError> for Failure {
    fn from(e: CnnError) -> Self {
        let status = match e {
            CnnError::Io { .. } | CnnError::Imaging(ImagingError::Io { .. }) => G2iStatus::Io,
            _ => G2iStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure(G2iStatus::StageFailed, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> G2iStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => G2iStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {what}"));
            G2iStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(G2iStatus::NullArgument, format!("{name} is null"))
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    // SAFETY: non-null and NUL-terminated per the caller's contract.
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Failure(G2iStatus::InvalidArgument, format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `ptr` must be null or point to a live `T` created by this library.
unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes a handle from this library or null.
    unsafe { ptr.as_ref() }.ok_or_else(|| null(name))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: `out` is non-null and points to writable storage per the API contract.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn g2i_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn g2i_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a graph from an edge list, a feature CSV and an optional label CSV
/// (`labels` may be null).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_graph_load(
    edges: *const c_char,
    features: *const c_char,
    labels: *const c_char,
    out: *mut *mut G2iGraph,
) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (e, f) = unsafe { (path_arg(edges, "edges")?, path_arg(features, "features")?) };
        // SAFETY: as above.
        let l = if labels.is_null() { None } else { Some(unsafe { path_arg(labels, "labels")? }) };
        let graph = load_graph(&e, &f, l.as_deref())?;
        store(out, G2iGraph(graph))
    })
}

/// Generates a labelled stochastic block model graph.
///
/// # Safety
/// `blocks` must point to `n_blocks` readable sizes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_graph_synth(
    blocks: *const usize,
    n_blocks: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    signal: f64,
    seed: u64,
    out: *mut *mut G2iGraph,
) -> G2iStatus {
    guard(|| {
        if blocks.is_null() {
            return Err(null("blocks"));
        }
        // SAFETY: the caller guarantees `n_blocks` readable elements.
        let sizes = unsafe { std::slice::from_raw_parts(blocks, n_blocks) };
        let graph = generate_sbm(sizes, p_in, p_out, feature_dim, signal, seed)?;
        store(out, G2iGraph(graph))
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn g2i_graph_node_count(graph: *const G2iGraph) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { graph.as_ref() }.map_or(0, |g| g.0.n())
}

/// Number of features per node, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn g2i_graph_feature_count(graph: *const G2iGraph) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { graph.as_ref() }.map_or(0, |g| g.0.k())
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn g2i_graph_free(graph: *mut G2iGraph) {
    if !graph.is_null() {
        // SAFETY: created by Box::into_raw in this library and freed once.
        drop(unsafe { Box::from_raw(graph) });
    }
}

/// Clusters, lays out and renders every node with default settings and the
/// given seed. Matches `g2i render` run with the same seed.
///
/// # Safety
/// `graph` must be a live graph handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_render(graph: *const G2iGraph, seed: u64, out: *mut *mut G2iImages) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let graph = unsafe { handle(graph, "graph")? };
        let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
        let inputs = Inputs::from_graph(graph.0.clone(), &cfg.feature_modality)?;
        let images = pipeline::render_in_memory(&cfg, &inputs)?;
        store(out, G2iImages(images))
    })
}

/// Number of images, or 0 for a null handle.
///
/// # Safety
/// `images` must be null or a live image-set handle.
#[no_mangle]
pub unsafe extern "C" fn g2i_images_count(images: *const G2iImages) -> usize {
    // SAFETY: forwarded caller contract.
    unsafe { images.as_ref() }.map_or(0, |s| s.0.len())
}

/// Shape shared by all images: rows, columns and channels.
///
/// # Safety
/// `images` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_images_shape(
    images: *const G2iImages,
    rows: *mut usize,
    cols: *mut usize,
    channels: *mut usize,
) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let set = unsafe { handle(images, "images")? };
        if rows.is_null() || cols.is_null() || channels.is_null() {
            return Err(null("shape output"));
        }
        let (r, c, ch) = set.0.shape().ok_or(Failure(G2iStatus::InvalidData, "image set is empty".into()))?;
        // SAFETY: checked non-null above.
        unsafe {
            *rows = r;
            *cols = c;
            *channels = ch;
        }
        Ok(())
    })
}

/// Copies image `index` into `buffer` (channel-major, then row, then column).
/// `len` must equal rows * cols * channels. `label` (optional) receives the
/// class index or -1 for an unlabelled node.
///
/// # Safety
/// `images` must be a live handle; `buffer` must hold `len` floats; `label`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_images_get(
    images: *const G2iImages,
    index: usize,
    buffer: *mut f32,
    len: usize,
    label: *mut i64,
) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let set = unsafe { handle(images, "images")? };
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let img = set.0.images.get(index).ok_or_else(|| {
            Failure(G2iStatus::InvalidArgument, format!("index {index} out of range for {} images", set.0.len()))
        })?;
        let data = img.tensor.as_slice();
        if len != data.len() {
            return Err(Failure(G2iStatus::InvalidArgument, format!("buffer holds {len} values, image has {}", data.len())));
        }
        // SAFETY: `buffer` holds `len == data.len()` floats per the contract.
        unsafe { std::slice::from_raw_parts_mut(buffer, len) }.copy_from_slice(data);
        if !label.is_null() {
            // SAFETY: checked non-null.
            unsafe { *label = img.label.map_or(-1, |l| l as i64) };
        }
        Ok(())
    })
}

/// # Safety
/// `images` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn g2i_images_write(images: *const G2iImages, path: *const c_char) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (set, path) = unsafe { (handle(images, "images")?, path_arg(path, "path")?) };
        Ok(write_tensor(&set.0, &path)?)
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_images_read(path: *const c_char, out: *mut *mut G2iImages) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path, "path")? };
        store(out, G2iImages(read_tensor(&path)?))
    })
}

/// # Safety
/// `images` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn g2i_images_free(images: *mut G2iImages) {
    if !images.is_null() {
        // SAFETY: created by Box::into_raw in this library and freed once.
        drop(unsafe { Box::from_raw(images) });
    }
}

/// Loads a checkpoint written by `g2i train`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn g2i_model_load(path: *const c_char, out: *mut *mut G2iModel) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path, "path")? };
        store(out, G2iModel(load_checkpoint(&path)?))
    })
}

/// Predicted class of every image, written to `classes[0..len]`; `len` must
/// equal the number of images.
///
/// # Safety
/// Handles must be live; `classes` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn g2i_model_predict(
    model: *const G2iModel,
    images: *const G2iImages,
    classes: *mut usize,
    len: usize,
) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (model, set) = unsafe { (handle(model, "model")?, handle(images, "images")?) };
        if classes.is_null() {
            return Err(null("classes"));
        }
        if len != set.0.len() {
            return Err(Failure(G2iStatus::InvalidArgument, format!("{len} slots for {} images", set.0.len())));
        }
        let batch: Vec<f64> = set.0.images.iter().flat_map(|i| i.tensor.to_f64()).collect();
        let pred = model.0.predict(&batch, len)?;
        // SAFETY: `classes` holds `len` entries per the contract.
        unsafe { std::slice::from_raw_parts_mut(classes, len) }.copy_from_slice(&pred);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn g2i_model_free(model: *mut G2iModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library and freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Runs every stage as `g2i run --config <path>` would.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn g2i_pipeline_run(config_path: *const c_char) -> G2iStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(config_path, "config_path")? };
        let mut cfg = PipelineConfig::default();
        cfg.apply_file(&path)?;
        Ok(pipeline::run(&cfg)?)
    })
}
