//! PRBS-23 payloads (x^23 + x^18 + 1) for exact bit-error counting.

/// Fibonacci LFSR over x^23 + x^18 + 1.
#[derive(Debug, Clone)]
pub struct Prbs23 {
    state: u32,
}

const MASK: u32 = (1 << 23) - 1;

impl Prbs23 {
    /// A zero seed (after masking to 23 bits) is replaced by 1.
    pub fn new(seed: u32) -> Self {
        let state = seed & MASK;
        Prbs23 {
            state: if state == 0 { 1 } else { state },
        }
    }

    /// Seed derived from a frame's link and sequence number, so a receiver can
    /// regenerate the payload from the header alone.
    pub fn for_frame(src: u8, dst: u8, seq: u32) -> Self {
        let key = ((src as u64) << 40) | ((dst as u64) << 32) | seq as u64;
        Self::new((splitmix64(key) >> 20) as u32)
    }

    pub fn next_bit(&mut self) -> u8 {
        let bit = ((self.state >> 22) ^ (self.state >> 17)) & 1;
        self.state = ((self.state << 1) | bit) & MASK;
        bit as u8
    }

    /// Next byte, first generated bit in the MSB.
    pub fn next_byte(&mut self) -> u8 {
        (0..8).fold(0u8, |acc, _| (acc << 1) | self.next_bit())
    }

    pub fn bytes(&mut self, len: usize) -> Vec<u8> {
        (0..len).map(|_| self.next_byte()).collect()
    }
}

pub fn prbs23_payload(src: u8, dst: u8, seq: u32, len: usize) -> Vec<u8> {
    Prbs23::for_frame(src, dst, seq).bytes(len)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
