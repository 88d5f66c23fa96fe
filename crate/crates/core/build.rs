fn main() {
    // Link the system OpenBLAS for the CBLAS symbols declared by cblas-sys.
    if std::env::var_os("CARGO_FEATURE_OPENBLAS").is_some() {
        println!("cargo:rustc-link-lib=openblas");
    }
}
