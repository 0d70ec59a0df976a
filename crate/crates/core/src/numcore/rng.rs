use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root of all randomness in a run.
///
/// Child generators are ChaCha streams keyed by the root seed and a label,
/// so independent consumers (per-layer probes, data generators, model init)
/// never share a stream and do not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Deterministic child seed for `label`.
    pub fn derive(&self, label: &str) -> u64 {
        let mut h = splitmix64(self.seed);
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        h
    }

    pub fn child(&self, label: &str) -> SeedStream {
        SeedStream::new(self.derive(label))
    }

    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.derive(label));
        rng
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
