//! Generate the C header with cbindgen. The header is written into
//! `OUT_DIR` and mirrored at `include/plncf.h` so C consumers can use the
//! checked-in copy without building first.

use std::env;
use std::fs;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let out_path = PathBuf::from(env::var("OUT_DIR").expect("out dir")).join("plncf.h");

    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml"))
        .expect("cbindgen.toml parses");
    let bindings = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen generates the header");
    bindings.write_to_file(&out_path);

    // Refresh the checked-in copy; ignore failures (e.g. read-only source
    // trees) since OUT_DIR always has the authoritative header.
    let include_dir = crate_dir.join("include");
    let _ = fs::create_dir_all(&include_dir);
    let _ = fs::copy(&out_path, include_dir.join("plncf.h"));
}
