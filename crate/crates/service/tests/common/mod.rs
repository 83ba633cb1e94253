#![allow(dead_code)]

use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use femseg_core::phantom::PhantomSpec;
use femseg_service::store::Store;

/// Zips every file in `dir` (flat) into memory.
pub fn zip_dir(dir: &Path) -> Vec<u8> {
    let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().flatten().map(|e| e.path()).collect();
    paths.sort();
    let mut w = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    for p in paths {
        w.start_file(p.file_name().unwrap().to_string_lossy(), opts).unwrap();
        w.write_all(&std::fs::read(&p).unwrap()).unwrap();
    }
    w.finish().unwrap().into_inner()
}

/// A small three-slice series written by the phantom generator.
pub fn three_slice_series(dir: &Path) -> PhantomSpec {
    let spec = PhantomSpec {
        width: 48,
        height: 40,
        slices: 3,
        first_slice: 38,
        femur_offset: 12.0,
        femur_y: 18.0,
        shaft_radius: 4.0,
        head_radius: 6.0,
        ..PhantomSpec::default()
    };
    spec.write_dir(dir).unwrap();
    spec
}

pub struct Server {
    pub base: String,
    pub addr: SocketAddr,
    pub handle: tokio::task::JoinHandle<()>,
}

pub async fn start(store_dir: &Path) -> Server {
    let store = Arc::new(Store::open_with_budget(store_dir, 256 << 20).unwrap());
    let (addr, handle) = femseg_service::api::spawn(store, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    Server {
        base: format!("http://{addr}"),
        addr,
        handle,
    }
}
