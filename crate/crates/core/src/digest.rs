//! Stable content digests for certificate inputs.

use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

/// Incremental SHA-256 over a canonical byte encoding of numbers and tags.
///
/// Floats are hashed by their IEEE-754 bit pattern, so two inputs share a
/// digest only if they are bit-identical.
#[derive(Clone, Default)]
pub struct DigestBuilder {
    hasher: Sha256,
}

impl DigestBuilder {
    pub fn new(domain: &str) -> Self {
        let mut b = Self::default();
        b.tag(domain);
        b
    }

    pub fn tag(&mut self, tag: &str) -> &mut Self {
        self.usize(tag.len());
        self.hasher.update(tag.as_bytes());
        self
    }

    pub fn f64(&mut self, x: f64) -> &mut Self {
        self.hasher.update(x.to_bits().to_le_bytes());
        self
    }

    pub fn f64s(&mut self, xs: &[f64]) -> &mut Self {
        self.usize(xs.len());
        for &x in xs {
            self.f64(x);
        }
        self
    }

    pub fn usize(&mut self, n: usize) -> &mut Self {
        self.hasher.update((n as u64).to_le_bytes());
        self
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        self.usize(data.len());
        self.hasher.update(data);
        self
    }

    /// Lower-case hex encoding of the digest.
    pub fn finish(self) -> String {
        let out = self.hasher.finalize();
        let mut s = String::with_capacity(64);
        for byte in out.iter() {
            let _ = write!(s, "{byte:02x}");
        }
        s
    }
}
