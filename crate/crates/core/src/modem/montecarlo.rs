//! Symbol-level bit-error Monte-Carlo over complex AWGN.

use crate::channel::complex_gaussian;
use crate::modem::metrics::{ber_qam16_theory, ber_qpsk_theory};
use crate::modem::Modulation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Symbols simulated per batch.
const BATCH_SYMBOLS: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub es_n0_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub theory: f64,
}

impl BerPoint {
    /// Binomial standard error of the theoretical BER at this bit count.
    pub fn standard_error(&self) -> f64 {
        (self.theory * (1.0 - self.theory) / self.bits as f64).sqrt()
    }
}

pub fn ber_theory(m: Modulation, es_n0: f64) -> f64 {
    match m {
        Modulation::Qpsk => ber_qpsk_theory(es_n0),
        Modulation::Qam16 => ber_qam16_theory(es_n0),
    }
}

/// Map random bits, add noise of variance `1/(Es/N0)` per complex symbol,
/// demap and count errors until at least `min_bits` bits are compared.
pub fn ber_point(m: Modulation, es_n0_db: f64, min_bits: u64, seed: u64, stream: u64) -> BerPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let es_n0 = 10f64.powf(es_n0_db / 10.0);
    let n0 = 1.0 / es_n0;
    let k = m.bits_per_symbol();
    let (mut bits, mut errors) = (0u64, 0u64);
    let mut tx = vec![0u8; BATCH_SYMBOLS * k];
    while bits < min_bits {
        tx.iter_mut().for_each(|b| *b = rng.random_range(0..2));
        let mut symbols = m.map(&tx).expect("whole symbols");
        for s in symbols.iter_mut() {
            *s += complex_gaussian(&mut rng, n0);
        }
        let rx = m.demap(&symbols);
        errors += tx.iter().zip(&rx).filter(|(a, b)| a != b).count() as u64;
        bits += tx.len() as u64;
    }
    BerPoint {
        es_n0_db,
        bits,
        errors,
        ber: errors as f64 / bits as f64,
        theory: ber_theory(m, es_n0),
    }
}

/// One point per Es/N0 value, each on its own random stream, computed in
/// parallel. Results do not depend on thread count.
pub fn ber_sweep(m: Modulation, es_n0_db: &[f64], min_bits: u64, seed: u64) -> Vec<BerPoint> {
    es_n0_db.par_iter().enumerate().map(|(i, &e)| ber_point(m, e, min_bits, seed, i as u64)).collect()
}
