//! Symbol-spaced normalized-LMS equalizer.

use super::Modulation;
use crate::error::param;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualizerConfig {
    pub taps: usize,
    pub mu: f64,
    /// Regularizer added to the input energy in the NLMS normalization.
    pub epsilon: f64,
    /// Outputs after a reset that count as warm-up.
    pub warmup: usize,
}

impl Default for EqualizerConfig {
    fn default() -> Self {
        EqualizerConfig {
            taps: 9,
            mu: 0.01,
            epsilon: 1e-9,
            warmup: 64,
        }
    }
}

/// Training signal available for one output symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Known(C64),
    /// Hard decision on the output.
    Decide(Modulation),
    /// No adaptation (silent slots).
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerOutput {
    pub symbols: Vec<C64>,
    /// True for outputs produced during warm-up.
    pub warmup: Vec<bool>,
}

/// Transversal filter initialised to a centre-tap impulse. Output `k` of
/// [`NlmsEqualizer::equalize`] estimates input symbol `k`; the filter itself
/// runs `(taps - 1) / 2` symbols behind its input.
#[derive(Debug, Clone)]
pub struct NlmsEqualizer {
    cfg: EqualizerConfig,
    w: Vec<C64>,
    updates: u64,
}

impl NlmsEqualizer {
    pub fn new(cfg: EqualizerConfig) -> Result<Self> {
        if cfg.taps == 0 || cfg.taps.is_multiple_of(2) {
            return Err(param(format!("equalizer needs an odd tap count, got {}", cfg.taps)));
        }
        if !(cfg.mu >= 0.0) {
            return Err(param(format!("step size {} must be non-negative", cfg.mu)));
        }
        let mut w = vec![C64::new(0.0, 0.0); cfg.taps];
        w[cfg.taps / 2] = C64::new(1.0, 0.0);
        Ok(NlmsEqualizer { cfg, w, updates: 0 })
    }

    pub fn taps(&self) -> &[C64] {
        &self.w
    }

    pub fn delay(&self) -> usize {
        self.cfg.taps / 2
    }

    pub fn reset(&mut self) {
        *self = NlmsEqualizer::new(self.cfg).expect("config already validated");
    }

    /// Filter one block. Inputs before the block and after its end are taken
    /// as zero. `refs[k]` drives adaptation at output `k`.
    pub fn equalize(&mut self, input: &[C64], refs: &[Reference]) -> EqualizerOutput {
        let n = self.cfg.taps;
        let delay = self.delay();
        let zero = C64::new(0.0, 0.0);
        let mut hist = vec![zero; n];
        let mut symbols = Vec::with_capacity(input.len());
        let mut warmup = Vec::with_capacity(input.len());
        for step in 0..input.len() + delay {
            hist.rotate_right(1);
            hist[0] = input.get(step).copied().unwrap_or(zero);
            if step < delay {
                continue;
            }
            let k = step - delay;
            let y: C64 = self.w.iter().zip(&hist).map(|(w, x)| w * x).sum();
            let target = match refs.get(k).copied().unwrap_or(Reference::Skip) {
                Reference::Known(s) => Some(s),
                Reference::Decide(m) => Some(m.slice(y)),
                Reference::Skip => None,
            };
            if let Some(d) = target {
                if self.cfg.mu > 0.0 {
                    let e = d - y;
                    let energy: f64 = hist.iter().map(|x| x.norm_sqr()).sum();
                    let g = self.cfg.mu / (energy + self.cfg.epsilon);
                    for (w, x) in self.w.iter_mut().zip(&hist) {
                        *w += e * x.conj() * g;
                    }
                }
                self.updates += 1;
            }
            warmup.push(self.updates <= self.cfg.warmup as u64);
            symbols.push(y);
        }
        EqualizerOutput { symbols, warmup }
    }
}

/// One-shot equalization with a fresh filter.
pub fn equalize_lms(symbols: &[C64], refs: &[Reference], cfg: EqualizerConfig) -> Result<EqualizerOutput> {
    Ok(NlmsEqualizer::new(cfg)?.equalize(symbols, refs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::metrics::evm_rms_pct;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn qam(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        let bits: Vec<u8> = (0..4 * n).map(|_| rng.random_range(0..2)).collect();
        Modulation::Qam16.map(&bits).unwrap()
    }

    #[test]
    fn identity_channel_keeps_impulse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = qam(&mut rng, 1000);
        let refs = vec![Reference::Decide(Modulation::Qam16); s.len()];
        let mut eq = NlmsEqualizer::new(EqualizerConfig::default()).unwrap();
        let out = eq.equalize(&s, &refs);
        for (k, w) in eq.taps().iter().enumerate() {
            let ideal = if k == 4 { 1.0 } else { 0.0 };
            assert!((w - ideal).norm() < 1e-3);
        }
        assert!(out.warmup[..64].iter().all(|&w| w) && !out.warmup[64]);
    }

    #[test]
    fn frozen_filter_is_a_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = qam(&mut rng, 100);
        let cfg = EqualizerConfig {
            mu: 0.0,
            ..Default::default()
        };
        let mut eq = NlmsEqualizer::new(cfg).unwrap();
        let mut hist = vec![C64::new(0.0, 0.0); 9];
        // Raw filter output at step k is the input delayed by 4 symbols.
        for (k, &x) in s.iter().enumerate() {
            hist.rotate_right(1);
            hist[0] = x;
            let y: C64 = eq.taps().iter().zip(&hist).map(|(w, x)| w * x).sum();
            if k >= 4 {
                assert_eq!(y, s[k - 4]);
            }
        }
        let out = eq.equalize(&s, &vec![Reference::Skip; s.len()]);
        assert_eq!(out.symbols, s);
    }

    #[test]
    fn two_tap_isi_improves_evm_by_6db() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let s = qam(&mut rng, n);
        let n0 = 10f64.powf(-2.5);
        let y: Vec<C64> = (0..n)
            .map(|k| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                s[k] + if k > 0 { s[k - 1] * 0.4 } else { C64::new(0.0, 0.0) } + C64::new(re, im) * (n0 / 2.0).sqrt()
            })
            .collect();
        let refs: Vec<Reference> = (0..n)
            .map(|k| if k % 33 == 32 || k < 64 { Reference::Known(s[k]) } else { Reference::Decide(Modulation::Qam16) })
            .collect();
        let out = equalize_lms(&y, &refs, EqualizerConfig::default()).unwrap();
        let pre = evm_rms_pct(&y, &s);
        let post = evm_rms_pct(&out.symbols, &s);
        let gain = 20.0 * (pre / post).log10();
        assert!(gain >= 6.0, "pre {pre:.2}% post {post:.2}% gain {gain:.2} dB");
    }

    #[test]
    fn even_taps_rejected() {
        let cfg = EqualizerConfig {
            taps: 8,
            ..Default::default()
        };
        assert!(NlmsEqualizer::new(cfg).is_err());
    }
}
