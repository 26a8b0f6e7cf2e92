//! Preamble detection with the complementary Golay metric.

use super::timing::best_offset;
use crate::dsp::{GolayCorrelator, SampleBlock};
use crate::error::{contract, param};
use crate::framing::PREAMBLE_SYMBOLS;
use crate::{Result, C64};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

const GOLAY_LOG2: u32 = 8;
const HALF: usize = 1 << GOLAY_LOG2;
/// Extra search beyond the preamble length, covering pulse-shaping tails
/// that can raise the metric before the correlation windows reach the
/// preamble proper.
const SEARCH_MARGIN_SYMBOLS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Threshold factor over the noise floor.
    pub alpha: f64,
    /// Trailing metric samples averaged into the noise floor.
    pub noise_window: usize,
    /// Floor samples needed before detections are allowed.
    pub min_floor_fill: usize,
    /// Lower bound on the floor, acting as a squelch: a silent band carries
    /// only leakage from its neighbours, whose preambles would otherwise
    /// cross a floor that small. A unit-gain preamble peaks near 1024.
    pub floor_min: f64,
    pub samples_per_symbol: usize,
    /// Detections suppressed for this many samples after a peak unless the
    /// caller extends the lockout.
    pub lockout: usize,
    /// Offset subtracted from a peak index before taking the timing phase.
    pub reference_delay: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 8.0,
            noise_window: 4096,
            min_floor_fill: 1024,
            floor_min: 0.5,
            samples_per_symbol: 8,
            lockout: PREAMBLE_SYMBOLS * 8,
            reference_delay: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Absolute index of the first preamble symbol's matched-filter peak.
    pub sample_index: u64,
    pub metric: f64,
    pub threshold_at_detection: f64,
    pub timing_phase: usize,
}

/// Streaming detector over one or more receive antennas.
///
/// The metric at index `n` sums `|corr_Ga[n]| + |corr_Gb[n + 256·sps]|` over
/// antennas. A crossing of `alpha` times the trailing floor opens a search
/// over the next `(512 + 64)·sps` samples; the maximum there is refined by the
/// smoothed timing metric. Metric samples between a crossing and the end of
/// its preamble are kept out of the floor.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    correlators: Vec<GolayCorrelator>,
    base: Option<u64>,
    next_input: u64,
    // (Σ|Ca|, Σ|Cb|) per correlation index, the first at `pair_base`.
    pairs: VecDeque<(f64, f64)>,
    pair_base: u64,
    metric: VecDeque<f64>,
    metric_base: u64,
    scan: u64,
    floor: VecDeque<f64>,
    floor_sum: f64,
    floor_pushes: u64,
    lockout_until: u64,
    exclude: std::ops::Range<u64>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, antennas: usize) -> Result<Self> {
        if antennas == 0 || cfg.noise_window == 0 || cfg.samples_per_symbol == 0 || !(cfg.alpha > 0.0) {
            return Err(param("detector needs antennas, a noise window, sps and alpha > 0"));
        }
        Ok(Detector {
            correlators: (0..antennas)
                .map(|_| GolayCorrelator::new(GOLAY_LOG2, cfg.samples_per_symbol))
                .collect::<Result<_>>()?,
            cfg,
            base: None,
            next_input: 0,
            pairs: VecDeque::new(),
            pair_base: 0,
            metric: VecDeque::new(),
            metric_base: 0,
            scan: 0,
            floor: VecDeque::new(),
            floor_sum: 0.0,
            floor_pushes: 0,
            lockout_until: 0,
            exclude: 0..0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    fn search_len(&self) -> usize {
        (PREAMBLE_SYMBOLS + SEARCH_MARGIN_SYMBOLS) * self.cfg.samples_per_symbol
    }

    /// Feed equal-length runs, one per antenna, starting at `start_index`.
    pub fn push(&mut self, antennas: &[&[C64]], start_index: u64) -> Result<()> {
        if antennas.len() != self.correlators.len() || antennas.iter().any(|a| a.len() != antennas[0].len()) {
            return Err(contract("detector input needs one equal-length run per antenna"));
        }
        let base = match self.base {
            Some(b) => {
                if start_index != self.next_input {
                    return Err(contract(format!("detector expected sample {}, got {start_index}", self.next_input)));
                }
                b
            }
            None => {
                self.base = Some(start_index);
                self.pair_base = start_index;
                self.metric_base = start_index;
                self.scan = start_index;
                start_index
            }
        };
        self.next_input = start_index + antennas[0].len() as u64;
        let mut sum: Vec<(f64, f64)> = Vec::new();
        for (k, (corr, x)) in self.correlators.iter_mut().zip(antennas).enumerate() {
            let (first, ca, cb) = corr.push(x);
            debug_assert_eq!(base + first, self.pair_base + self.pairs.len() as u64);
            if k == 0 {
                sum = ca.iter().zip(&cb).map(|(a, b)| (a.norm(), b.norm())).collect();
            } else {
                for (s, (a, b)) in sum.iter_mut().zip(ca.iter().zip(&cb)) {
                    s.0 += a.norm();
                    s.1 += b.norm();
                }
            }
        }
        self.pairs.extend(sum);
        let lag = HALF * self.cfg.samples_per_symbol;
        while self.pairs.len() > lag {
            let a = self.pairs.pop_front().expect("non-empty").0;
            let b = self.pairs[lag - 1].1;
            self.metric.push_back(a + b);
            self.pair_base += 1;
        }
        Ok(())
    }

    /// Index one past the last metric value computed.
    pub fn metric_end(&self) -> u64 {
        self.metric_base + self.metric.len() as u64
    }

    /// Metric value at absolute index `n`, if still buffered.
    pub fn metric_at(&self, n: u64) -> Option<f64> {
        n.checked_sub(self.metric_base).and_then(|k| self.metric.get(k as usize).copied())
    }

    /// Next metric index the scanner will examine. Later detections are
    /// refined to at most `sps / 2` samples before it.
    pub fn scan_position(&self) -> u64 {
        self.scan
    }

    /// Suppress detections before absolute index `until`.
    pub fn set_lockout(&mut self, until: u64) {
        self.lockout_until = until;
    }

    pub fn lockout_until(&self) -> u64 {
        self.lockout_until
    }

    pub fn noise_floor(&self) -> Option<f64> {
        (self.floor.len() >= self.cfg.min_floor_fill.min(self.cfg.noise_window))
            .then(|| (self.floor_sum / self.floor.len() as f64).max(self.cfg.floor_min))
    }

    fn feed_floor(&mut self, m: f64) {
        self.floor.push_back(m);
        self.floor_sum += m;
        if self.floor.len() > self.cfg.noise_window {
            self.floor_sum -= self.floor.pop_front().expect("non-empty");
        }
        self.floor_pushes += 1;
        // Re-sum periodically so rounding in the running sum cannot drift.
        if self.floor_pushes.is_multiple_of(self.cfg.noise_window as u64) {
            self.floor_sum = self.floor.iter().sum();
        }
    }

    /// Next detection in the buffered metric, if any.
    pub fn poll(&mut self) -> Option<DetectionResult> {
        let sps = self.cfg.samples_per_symbol;
        while self.scan < self.metric_end() {
            let n = self.scan;
            let m = self.metric_at(n).expect("scan within buffer");
            if n >= self.lockout_until {
                if let Some(floor) = self.noise_floor() {
                    let threshold = self.cfg.alpha * floor;
                    if m > threshold {
                        let search_end = n + self.search_len() as u64;
                        if self.metric_end() < search_end + sps as u64 {
                            self.trim();
                            return None;
                        }
                        let det = self.locate(n, search_end, threshold);
                        self.exclude = n..det.sample_index + (PREAMBLE_SYMBOLS * sps) as u64;
                        self.lockout_until = det.sample_index + self.cfg.lockout as u64;
                        return Some(det);
                    }
                }
            }
            if !self.exclude.contains(&n) {
                self.feed_floor(m);
            }
            self.scan += 1;
        }
        self.trim();
        None
    }

    fn locate(&self, from: u64, to: u64, threshold: f64) -> DetectionResult {
        let sps = self.cfg.samples_per_symbol;
        let mut peak = from;
        let mut peak_val = f64::NEG_INFINITY;
        for n in from..to {
            let v = self.metric_at(n).expect("search within buffer");
            if v > peak_val {
                peak_val = v;
                peak = n;
            }
        }
        // Local copy of the metric around the peak for the smoothing window.
        let lo = peak.saturating_sub(sps as u64).max(self.metric_base);
        let local: Vec<f64> = (lo..peak + sps as u64 + 1).map(|n| self.metric_at(n).unwrap_or(0.0)).collect();
        let refined = lo + best_offset(&local, (peak - lo) as usize, sps) as u64;
        let metric = self.metric_at(refined).unwrap_or(peak_val);
        DetectionResult {
            sample_index: refined,
            metric,
            threshold_at_detection: threshold,
            timing_phase: (refined.wrapping_sub(self.cfg.reference_delay as u64) % sps as u64) as usize,
        }
    }

    fn trim(&mut self) {
        let keep_from = self.scan.saturating_sub(2 * self.cfg.samples_per_symbol as u64);
        while self.metric_base < keep_from && !self.metric.is_empty() {
            self.metric.pop_front();
            self.metric_base += 1;
        }
    }
}

/// Push one single-antenna block and collect every detection it completes.
pub fn detect_frame(stream: &SampleBlock, state: &mut Detector) -> Result<Vec<DetectionResult>> {
    state.push(&[&stream.samples], stream.start_index)?;
    let mut out = Vec::new();
    while let Some(d) = state.poll() {
        out.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framing::build_preamble;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut ChaCha8Rng, n: usize, var: f64) -> Vec<C64> {
        let s = (var / 2.0).sqrt();
        (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re * s, im * s)
            })
            .collect()
    }

    fn chips(amplitude: f64) -> Vec<C64> {
        build_preamble().into_iter().map(|c| C64::new(c * amplitude, 0.0)).collect()
    }

    /// Brute-force metric of `x` at `n` (chip spacing 1).
    fn brute_metric(x: &[C64], n: usize) -> f64 {
        let p = build_preamble();
        let (ga, gb) = p.split_at(256);
        let corr = |code: &[f64], at: usize| -> C64 { code.iter().enumerate().map(|(i, &c)| x.get(at + i).copied().unwrap_or_default() * c).sum() };
        corr(ga, n).norm() + corr(gb, n + 256).norm()
    }

    #[test]
    fn clean_preamble_peak_is_512_amplitude() {
        let amplitude = 0.25;
        let mut x = vec![C64::new(0.0, 0.0); 1024];
        x.extend(chips(amplitude));
        x.extend(vec![C64::new(0.0, 0.0); 1024]);
        let cfg = DetectorConfig {
            samples_per_symbol: 1,
            min_floor_fill: 16,
            ..Default::default()
        };
        let mut det = Detector::new(cfg, 1).unwrap();
        det.push(&[&x], 0).unwrap();
        assert_eq!(det.metric_at(1024), Some(512.0 * amplitude));
        for n in 0..det.metric_end() {
            assert_eq!(det.metric_at(n).unwrap(), brute_metric(&x, n as usize), "n = {n}");
        }
        let hits: Vec<_> = std::iter::from_fn(|| det.poll()).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].sample_index, 1024);
    }

    #[test]
    fn aligned_sidelobes_are_bounded() {
        // The contiguous Ga‖Gb preamble leaves nonzero aligned sidelobes;
        // the largest one, from brute force, is frozen here.
        let mut x = vec![C64::new(0.0, 0.0); 600];
        x.extend(chips(1.0));
        x.extend(vec![C64::new(0.0, 0.0); 600]);
        let worst = (0..x.len() - 512).filter(|&n| n != 600).map(|n| brute_metric(&x, n)).fold(0.0, f64::max);
        assert_eq!(worst, WORST_ALIGNED_SIDELOBE);
        assert!(worst < 512.0 / 4.0);
    }

    const WORST_ALIGNED_SIDELOBE: f64 = 85.0;

    #[test]
    fn blocking_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = noise(&mut rng, 5000, 0.01);
        x.extend(chips(1.0).iter().flat_map(|&c| std::iter::repeat_n(c, 2)));
        x.extend(noise(&mut rng, 3000, 0.01));
        let cfg = DetectorConfig {
            samples_per_symbol: 2,
            ..Default::default()
        };
        let run = |sizes: &[usize]| {
            let mut det = Detector::new(cfg, 1).unwrap();
            let mut out = Vec::new();
            let mut pos = 0;
            for &s in sizes.iter().cycle() {
                if pos >= x.len() {
                    break;
                }
                let end = (pos + s).min(x.len());
                out.extend(detect_frame(&SampleBlock::new(x[pos..end].to_vec(), 2.0, 40 + pos as u64), &mut det).unwrap());
                pos = end;
            }
            out
        };
        let whole = run(&[x.len()]);
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].sample_index, 40 + 5000);
        assert_eq!(run(&[7, 300, 1]), whole);
    }

    #[test]
    fn out_of_order_input_rejected() {
        let mut det = Detector::new(DetectorConfig::default(), 2).unwrap();
        let z = [C64::new(0.0, 0.0); 10];
        det.push(&[&z, &z], 0).unwrap();
        assert!(det.push(&[&z, &z], 11).is_err());
        assert!(det.push(&[&z, &z[..5]], 10).is_err());
    }
}
