fn main() {
    // Header generation is opt-in so plain builds never need cbindgen:
    //   cargo build -p seqest-capi --features generate-header
    // regenerates include/seqest.h from the annotated sources.
    #[cfg(feature = "generate-header")]
    {
        let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
        let out = std::path::Path::new(&crate_dir).join("include/seqest.h");
        cbindgen::generate(&crate_dir)
            .expect("cbindgen failed")
            .write_to_file(out);
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
