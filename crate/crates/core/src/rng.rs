//! Counter-based random numbers for reproducible parallel simulation.
//!
//! Every draw is a pure function of a 64-bit key and a 128-bit counter, so a
//! value can be regenerated in any order and on any worker. The simulator
//! addresses draws by `(replicate key, subject, grid index, variable tag)`.
//!
//! The block function is Philox4x32 with 10 rounds.

use rand::RngCore;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32-10 block function.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// SplitMix64 finalizer; used to derive keys and replicate seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child `index` from a parent seed.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Maps the top 53 bits of `x` to a uniform in the open interval (0, 1).
#[inline(always)]
pub fn open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Keyed random-access generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: [u32; 2],
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        let k = splitmix64(seed);
        Self {
            key: [k as u32, (k >> 32) as u32],
        }
    }

    /// First 64 bits of the block at `(subject, index, tag)`.
    #[inline]
    pub fn u64_at(&self, subject: u32, index: u32, tag: u32) -> u64 {
        let b = philox4x32([0, index, subject, tag], self.key);
        u64::from(b[0]) | (u64::from(b[1]) << 32)
    }

    /// Uniform on (0, 1) at `(subject, index, tag)`.
    #[inline]
    pub fn uniform_at(&self, subject: u32, index: u32, tag: u32) -> f64 {
        open_unit(self.u64_at(subject, index, tag))
    }

    /// An independent stream addressed by `(subject, index, tag)` for draws
    /// that need a variable number of words (rejection samplers).
    pub fn stream(&self, subject: u32, index: u32, tag: u32) -> CounterStream {
        CounterStream {
            key: self.key,
            fixed: [index, subject, tag],
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }
}

/// Sequential view of one counter-addressed stream.
#[derive(Clone, Debug)]
pub struct CounterStream {
    key: [u32; 2],
    fixed: [u32; 3],
    block: u32,
    buf: [u32; 4],
    pos: usize,
}

impl CounterStream {
    fn refill(&mut self) {
        self.buf = philox4x32(
            [self.block, self.fixed[0], self.fixed[1], self.fixed[2]],
            self.key,
        );
        self.block = self.block.wrapping_add(1);
        self.pos = 0;
    }
}

impl RngCore for CounterStream {
    fn next_u32(&mut self) -> u32 {
        if self.pos >= 4 {
            self.refill();
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    fn next_u64(&mut self) -> u64 {
        let lo = u64::from(self.next_u32());
        let hi = u64::from(self.next_u32());
        lo | (hi << 32)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(4) {
            let bytes = self.next_u32().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
