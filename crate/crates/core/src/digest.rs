use sha2::{Digest, Sha256};

use crate::numerics::Parameterized;

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

/// SHA-256 over every parameter's name, shape and exact `f64` bytes.
pub fn params_digest(model: &dyn Parameterized) -> String {
    let mut h = Sha256::new();
    model.visit_params(&mut |name, t| {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    });
    to_hex(&h.finalize())
}
