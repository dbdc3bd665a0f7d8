//! Regenerate the frozen golden payload fixture.
//!
//! The golden file pins the byte-exact v1 serialization of the identity
//! parameters; tests compare against it to catch accidental layout or
//! compression changes.

fn main() {
    let identity = rja_core::transform::AdapterParams::identity();
    let payload = rja_core::codec::serialize(&identity).unwrap();
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/identity_payload.txt"
    );
    std::fs::write(path, payload.text()).unwrap();
    println!("wrote {} ({} bytes)", path, payload.byte_len());
}
