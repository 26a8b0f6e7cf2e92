use super::{FirTaps, SampleBlock};
use crate::error::contract;
use crate::{Result, C64};
use std::ops::Mul;

/// Coefficient type accepted by the FIR kernel.
pub trait Tap: Copy + Send + Sync + Mul<C64, Output = C64> {}

impl Tap for f64 {}
impl Tap for C64 {}

/// Delay line of a streaming FIR filter: the last `taps - 1` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FirState {
    history: Vec<C64>,
}

impl FirState {
    pub fn new(tap_count: usize) -> Self {
        FirState {
            history: vec![C64::new(0.0, 0.0); tap_count.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

/// Causal convolution of `input` with `taps`, continuing from `state`.
///
/// Output length and start index equal the input's. The group delay of a
/// linear-phase design, `(N - 1) / 2` samples, is left to the caller.
pub fn fir_filter(input: &SampleBlock, taps: &FirTaps, state: &mut FirState) -> Result<SampleBlock> {
    if state.history.len() + 1 != taps.len() {
        return Err(contract(format!(
            "FIR state holds {} samples, {} taps need {}",
            state.history.len(),
            taps.len(),
            taps.len() - 1
        )));
    }
    let rev: Vec<f64> = taps.taps.iter().rev().copied().collect();
    let samples = run(&rev, &mut state.history, &input.samples);
    Ok(SampleBlock::new(samples, input.sample_rate, input.start_index))
}

// Outputs are accumulated tap by tap over chunks of the output so the inner
// loop runs over independent samples. Each output still sums its terms in
// tap order.
fn run<T: Tap>(rev_taps: &[T], history: &mut Vec<C64>, input: &[C64]) -> Vec<C64> {
    const CHUNK: usize = 512;
    let n_hist = history.len();
    let mut ext = Vec::with_capacity(n_hist + input.len());
    ext.extend_from_slice(history);
    ext.extend_from_slice(input);
    let n_out = input.len();
    let mut out = vec![C64::new(0.0, 0.0); n_out];
    let mut start = 0;
    while start < n_out {
        let end = (start + CHUNK).min(n_out);
        let acc = &mut out[start..end];
        for (t, &tap) in rev_taps.iter().enumerate() {
            for (o, x) in acc.iter_mut().zip(&ext[start + t..end + t]) {
                *o += tap * *x;
            }
        }
        start = end;
    }
    let keep = ext.len() - n_hist;
    history.clear();
    history.extend_from_slice(&ext[keep..]);
    out
}

/// A streaming FIR filter owning its coefficients and delay line.
#[derive(Debug, Clone)]
pub struct FirFilter<T: Tap = f64> {
    rev_taps: Vec<T>,
    history: Vec<C64>,
}

impl<T: Tap> FirFilter<T> {
    pub fn new(taps: &[T]) -> Self {
        assert!(!taps.is_empty(), "FIR filter needs at least one tap");
        FirFilter {
            rev_taps: taps.iter().rev().copied().collect(),
            history: vec![C64::new(0.0, 0.0); taps.len() - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.rev_taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rev_taps.is_empty()
    }

    pub fn process(&mut self, input: &[C64]) -> Vec<C64> {
        run(&self.rev_taps, &mut self.history, input)
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(|h| *h = C64::new(0.0, 0.0));
    }
}

impl FirFilter<f64> {
    pub fn from_taps(taps: &FirTaps) -> Self {
        Self::new(&taps.taps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FilterDesign;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn impulse_response_is_taps() {
        let taps = FirTaps::new(vec![1.0, 0.5], FilterDesign::Custom);
        let mut input = vec![c(0.0); 5];
        input[0] = c(1.0);
        let mut state = FirState::new(taps.len());
        let out = fir_filter(&SampleBlock::new(input, 1.0, 10), &taps, &mut state).unwrap();
        assert_eq!(out.samples, vec![c(1.0), c(0.5), c(0.0), c(0.0), c(0.0)]);
        assert_eq!(out.start_index, 10);
    }

    #[test]
    fn state_mismatch_is_contract_error() {
        let taps = FirTaps::new(vec![1.0, 0.5, 0.25], FilterDesign::Custom);
        let mut state = FirState::new(2);
        let block = SampleBlock::zeros(4, 1.0, 0);
        assert!(matches!(fir_filter(&block, &taps, &mut state), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn blocks_of_seven_match_single_block() {
        let taps = FirTaps::new((0..13).map(|k| (k as f64 * 0.37).sin()).collect(), FilterDesign::Custom);
        let input: Vec<C64> = (0..200).map(|k| C64::new((k as f64).cos(), (k as f64 * 0.3).sin())).collect();
        let mut whole = FirFilter::from_taps(&taps);
        let expected = whole.process(&input);
        let mut chunked = FirFilter::from_taps(&taps);
        let got: Vec<C64> = input.chunks(7).flat_map(|ch| chunked.process(ch)).collect();
        assert_eq!(got, expected);
    }
}
