//! Symbol timing from the smoothed preamble metric.

use crate::dsp::SampleBlock;
use crate::error::contract;
use crate::{Result, C64};

/// Moving average of length `sps` centred on `k`, with half-weight end
/// points when `sps` is even. Indices outside `metric` count as zero.
pub fn smoothed_metric(metric: &[f64], k: isize, sps: usize) -> f64 {
    let at = |i: isize| if i >= 0 && (i as usize) < metric.len() { metric[i as usize] } else { 0.0 };
    let h = (sps / 2) as isize;
    let mut acc = 0.0;
    if sps.is_multiple_of(2) {
        acc += 0.5 * (at(k - h) + at(k + h));
        for j in -h + 1..h {
            acc += at(k + j);
        }
    } else {
        for j in -h..=h {
            acc += at(k + j);
        }
    }
    acc / sps as f64
}

/// Among the `sps` candidate offsets around `peak`, the one maximising the
/// smoothed metric. Ties go to the lower index.
pub fn best_offset(metric: &[f64], peak: usize, sps: usize) -> usize {
    let h = (sps / 2) as isize;
    let mut best = peak as isize - h;
    let mut best_val = f64::NEG_INFINITY;
    for k in peak as isize - h..peak as isize - h + sps as isize {
        let v = smoothed_metric(metric, k, sps);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best.max(0) as usize
}

/// `count` symbol-rate samples starting at absolute index `first`, spaced by
/// `sps`.
pub fn symbol_samples(stream: &SampleBlock, first: u64, count: usize, sps: usize) -> Result<Vec<C64>> {
    if first < stream.start_index {
        return Err(contract(format!("sample {first} precedes block start {}", stream.start_index)));
    }
    let off = (first - stream.start_index) as usize;
    let last = off + count.saturating_sub(1) * sps;
    if count > 0 && last >= stream.len() {
        return Err(contract(format!("block ends before symbol {count}")));
    }
    Ok((0..count).map(|k| stream.samples[off + k * sps]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_peak_picked() {
        let mut m = vec![0.0; 40];
        for (i, v) in [1.0, 3.0, 7.0, 9.0, 7.0, 3.0, 1.0].iter().enumerate() {
            m[17 + i] = *v;
        }
        assert_eq!(best_offset(&m, 20, 8), 20);
        assert_eq!(best_offset(&m, 22, 8), 20);
    }

    #[test]
    fn ties_go_low() {
        let m = vec![1.0; 64];
        assert_eq!(best_offset(&m, 30, 8), 26);
    }

    #[test]
    fn trapezoid_weights() {
        let m = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert!((smoothed_metric(&m, 4, 8) - 1.0).abs() < 1e-15);
        assert!((smoothed_metric(&m, 0, 8) - 4.5 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn downsample_bounds() {
        let b = SampleBlock::new((0..20).map(|k| C64::new(k as f64, 0.0)).collect(), 8.0, 100);
        assert_eq!(symbol_samples(&b, 103, 3, 8).unwrap(), vec![C64::new(3.0, 0.0), C64::new(11.0, 0.0), C64::new(19.0, 0.0)]);
        assert!(symbol_samples(&b, 104, 3, 8).is_err());
        assert!(symbol_samples(&b, 99, 1, 8).is_err());
    }
}
