use std::env;

fn main() {
    let dir = env::var("CARGO_MANIFEST_DIR").unwrap();
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    cbindgen::generate(&dir)
        .expect("Unable to generate bindings")
        .write_to_file(format!("{dir}/include/mongeboltz.h"));
}
