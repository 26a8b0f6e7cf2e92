use super::{FirFilter, FirTaps, SampleBlock};
use crate::error::param;
use crate::{Result, C64};

/// Streaming rational rate converter: zero-stuff by `up`, filter, keep every
/// `down`-th sample.
///
/// The anti-alias taps are scaled by `up` so in-band amplitude is preserved.
/// Which samples are kept is fixed by the absolute upsampled index (multiples
/// of `down`), so output does not depend on input blocking.
#[derive(Debug, Clone)]
pub struct RateChanger {
    up: usize,
    down: usize,
    filter: FirFilter<f64>,
    // Absolute index, at the upsampled rate, of the next stuffed sample.
    next_up_index: Option<u64>,
}

impl RateChanger {
    pub fn new(up: usize, down: usize, anti_alias: &FirTaps) -> Result<Self> {
        if up == 0 || down == 0 {
            return Err(param(format!("rate factors must be >= 1 (up {up}, down {down})")));
        }
        if anti_alias.is_empty() {
            return Err(param("anti-alias filter has no taps"));
        }
        let scaled: Vec<f64> = anti_alias.taps.iter().map(|t| t * up as f64).collect();
        Ok(RateChanger {
            up,
            down,
            filter: FirFilter::new(&scaled),
            next_up_index: None,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.up as f64 / self.down as f64
    }

    pub fn process(&mut self, input: &SampleBlock) -> SampleBlock {
        let up_start = *self.next_up_index.get_or_insert(input.start_index * self.up as u64);
        let zero = C64::new(0.0, 0.0);
        let mut stuffed = Vec::with_capacity(input.len() * self.up);
        for &s in &input.samples {
            stuffed.push(s);
            stuffed.extend(std::iter::repeat_n(zero, self.up - 1));
        }
        let filtered = self.filter.process(&stuffed);
        let down = self.down as u64;
        let first_keep = up_start.div_ceil(down) * down;
        let out_start = first_keep / down;
        let samples = filtered
            .into_iter()
            .enumerate()
            .filter(|(k, _)| (up_start + *k as u64).is_multiple_of(down))
            .map(|(_, s)| s)
            .collect();
        self.next_up_index = Some(up_start + stuffed.len() as u64);
        SampleBlock::new(samples, input.sample_rate * self.ratio(), out_start)
    }
}

/// One-shot rate conversion of a block (fresh filter state).
pub fn rate_change(input: &SampleBlock, up: usize, down: usize, anti_alias: &FirTaps) -> Result<SampleBlock> {
    Ok(RateChanger::new(up, down, anti_alias)?.process(input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{design_kaiser_lowpass, design_srrc, mean_power};
    use std::f64::consts::PI;

    fn tone(f: f64, len: usize) -> Vec<C64> {
        (0..len).map(|n| C64::from_polar(1.0, 2.0 * PI * f * n as f64)).collect()
    }

    #[test]
    fn unit_factors_pass_through() {
        let x = SampleBlock::new(tone(0.1, 50), 8.0, 3);
        let y = rate_change(&x, 1, 1, &FirTaps::identity()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_factor_rejected() {
        assert!(RateChanger::new(0, 1, &FirTaps::identity()).is_err());
        assert!(RateChanger::new(1, 0, &FirTaps::identity()).is_err());
    }

    // Peak bin of a DFT evaluated on a fine grid of candidate frequencies.
    fn peak_frequency(x: &[C64]) -> f64 {
        let grid = 4096;
        (0..grid)
            .map(|i| {
                let f = -0.5 + i as f64 / grid as f64;
                let p: C64 = x.iter().enumerate().map(|(n, s)| s * C64::from_polar(1.0, -2.0 * PI * f * n as f64)).sum();
                (f, p.norm())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn in_band_tone_decimated_by_8() {
        // Band filter: SRRC shaped for 8 samples/symbol passes |f| < 0.25/8.
        let taps = design_srrc(0.5, 8, 8).unwrap();
        // SRRC has unit energy; rescale to unit DC gain for a tone measurement.
        let dc: f64 = taps.taps.iter().sum();
        let taps = FirTaps::new(taps.taps.iter().map(|t| t / dc).collect(), taps.description);
        let f_in = 0.02;
        let x = SampleBlock::new(tone(f_in, 16384), 8.0, 0);
        let y = rate_change(&x, 1, 8, &taps).unwrap();
        assert_eq!(y.sample_rate, 1.0);
        let settled = &y.samples[16..];
        let f_out = peak_frequency(&settled[..1024]);
        assert!((f_out - 8.0 * f_in).abs() < 1.0 / 4096.0 + 1e-12, "{f_out}");
        let gain_db = 10.0 * mean_power(settled).log10();
        let expect_db = 20.0 * crate::dsp::freq_response(&taps.taps, f_in).norm().log10();
        assert!((gain_db - expect_db).abs() < 0.1, "{gain_db} vs {expect_db}");
        assert!(gain_db.abs() < 0.1);
    }

    #[test]
    fn out_of_band_tone_suppressed() {
        let taps = design_kaiser_lowpass(0.09375, 0.140625, 40.0).unwrap();
        let x = SampleBlock::new(tone(0.2, 16384), 8.0, 0);
        let y = rate_change(&x, 1, 8, &taps).unwrap();
        let p = mean_power(&y.samples[16..]);
        assert!(10.0 * p.log10() <= -40.0);
    }

    #[test]
    fn blocking_invariant() {
        let taps = design_kaiser_lowpass(0.09375, 0.140625, 40.0).unwrap();
        let x: Vec<C64> = tone(0.03, 1000);
        let whole = rate_change(&SampleBlock::new(x.clone(), 8.0, 5), 3, 4, &taps).unwrap();
        let mut rc = RateChanger::new(3, 4, &taps).unwrap();
        let mut got = Vec::new();
        let mut start = 5u64;
        for ch in x.chunks(13) {
            let out = rc.process(&SampleBlock::new(ch.to_vec(), 8.0, start));
            if got.is_empty() && !out.is_empty() {
                assert_eq!(out.start_index, whole.start_index);
            }
            got.extend(out.samples);
            start += ch.len() as u64;
        }
        assert_eq!(got, whole.samples);
    }
}
