use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let out_dir = PathBuf::from(std::env::var("OUT_DIR").unwrap());
    let header = cbindgen::generate(&crate_dir).expect("cbindgen generates the header");
    header.write_to_file(out_dir.join("advc.h"));
    // Committed copy for C consumers that vendor the source tree.
    header.write_to_file(crate_dir.join("include/advc.h"));
}
