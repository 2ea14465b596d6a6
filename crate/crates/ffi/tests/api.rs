use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use g2i_core::cli::pipeline::{render_in_memory, Inputs};
use g2i_core::cli::PipelineConfig;
use g2i_core::cnn::{save_checkpoint, ConvNet, ConvNetConfig};
use g2i_core::graph::generate_sbm;
use g2i_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = g2i_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synth(seed: u64) -> *mut G2iGraph {
    let blocks = [10usize, 10, 10];
    let mut g = ptr::null_mut();
    let s = unsafe { g2i_graph_synth(blocks.as_ptr(), blocks.len(), 0.5, 0.05, 9, 1.0, seed, &mut g) };
    assert_eq!(s, G2iStatus::Ok);
    g
}

#[test]
fn render_matches_the_library() {
    let g = synth(4);
    assert_eq!(unsafe { g2i_graph_node_count(g) }, 30);
    assert_eq!(unsafe { g2i_graph_feature_count(g) }, 9);
    let mut images = ptr::null_mut();
    assert_eq!(unsafe { g2i_render(g, 11, &mut images) }, G2iStatus::Ok);

    let (mut r, mut c, mut ch) = (0, 0, 0);
    assert_eq!(unsafe { g2i_images_shape(images, &mut r, &mut c, &mut ch) }, G2iStatus::Ok);
    assert_eq!((r, c, ch), (3, 3, 2));
    assert_eq!(unsafe { g2i_images_count(images) }, 30);

    let cfg = PipelineConfig { seed: 11, ..PipelineConfig::default() };
    let graph = generate_sbm(&[10, 10, 10], 0.5, 0.05, 9, 1.0, 4).unwrap();
    let expected = render_in_memory(&cfg, &Inputs::from_graph(graph, "features").unwrap()).unwrap();
    let mut buf = vec![0f32; r * c * ch];
    let mut label = 0i64;
    for i in 0..30 {
        assert_eq!(unsafe { g2i_images_get(images, i, buf.as_mut_ptr(), buf.len(), &mut label) }, G2iStatus::Ok);
        assert_eq!(buf, expected.images[i].tensor.as_slice());
        assert_eq!(label, expected.images[i].label.unwrap() as i64);
    }
    let s = unsafe { g2i_images_get(images, 30, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) };
    assert_eq!(s, G2iStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe {
        g2i_images_free(images);
        g2i_graph_free(g);
    }
}

#[test]
fn images_and_models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = synth(2);
    let mut images = ptr::null_mut();
    assert_eq!(unsafe { g2i_render(g, 0, &mut images) }, G2iStatus::Ok);
    let path = cstr(&dir.path().join("x.g2im"));
    assert_eq!(unsafe { g2i_images_write(images, path.as_ptr()) }, G2iStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { g2i_images_read(path.as_ptr(), &mut back) }, G2iStatus::Ok);
    assert_eq!(unsafe { g2i_images_count(images) }, unsafe { g2i_images_count(back) });

    let config = ConvNetConfig { conv_layers: 1, filters: 2, fc_sizes: vec![4], ..ConvNetConfig::new(3, 2, 3) };
    let net = ConvNet::new(config).unwrap();
    let ckpt = dir.path().join("m.g2im");
    save_checkpoint(&net, &ckpt).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { g2i_model_load(cstr(&ckpt).as_ptr(), &mut model) }, G2iStatus::Ok);
    let mut classes = vec![usize::MAX; 30];
    assert_eq!(unsafe { g2i_model_predict(model, back, classes.as_mut_ptr(), 30) }, G2iStatus::Ok);
    assert!(classes.iter().all(|&c| c < 3));
    assert_eq!(unsafe { g2i_model_predict(model, back, classes.as_mut_ptr(), 29) }, G2iStatus::InvalidArgument);
    unsafe {
        g2i_model_free(model);
        g2i_images_free(images);
        g2i_images_free(back);
        g2i_graph_free(g);
    }
}

#[test]
fn failures_report_status_and_message() {
    let mut g = ptr::null_mut();
    let missing = CString::new("/nonexistent/edges.tsv").unwrap();
    let s = unsafe { g2i_graph_load(missing.as_ptr(), missing.as_ptr(), ptr::null(), &mut g) };
    assert_eq!(s, G2iStatus::Io);
    assert!(last_error().contains("/nonexistent"));
    assert!(g.is_null());

    let s = unsafe { g2i_graph_load(ptr::null(), missing.as_ptr(), ptr::null(), &mut g) };
    assert_eq!(s, G2iStatus::NullArgument);
    assert_eq!(last_error(), "edges is null");

    let blocks = [5usize];
    let s = unsafe { g2i_graph_synth(blocks.as_ptr(), 1, 2.0, 0.0, 3, 1.0, 0, &mut g) };
    assert_eq!(s, G2iStatus::InvalidData);

    let mut images = ptr::null_mut();
    assert_eq!(unsafe { g2i_render(ptr::null(), 0, &mut images) }, G2iStatus::NullArgument);
    assert_eq!(unsafe { g2i_graph_node_count(ptr::null()) }, 0);
    unsafe { g2i_graph_free(ptr::null_mut()) };

    let bad_cfg = CString::new("/nonexistent/run.cfg").unwrap();
    assert_eq!(unsafe { g2i_pipeline_run(bad_cfg.as_ptr()) }, G2iStatus::StageFailed);
    assert!(last_error().starts_with("config:"));

    let version = unsafe { CStr::from_ptr(g2i_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = exe_dir.join("libg2i_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-o"])
        .arg(&bin)
        .arg(manifest_dir().join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "24 3 3 2 0");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
