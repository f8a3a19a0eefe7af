use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = crate_dir.join("include").join("epidrift.h");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();

    let generated = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).unwrap())
        .generate();
    match generated {
        Ok(bindings) => {
            bindings.write_to_file(&out);
        }
        // Keep the checked-in header if generation fails (e.g. offline
        // toolchain differences); the ABI is stable either way.
        Err(e) => println!("cargo:warning=cbindgen failed, keeping existing header: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
