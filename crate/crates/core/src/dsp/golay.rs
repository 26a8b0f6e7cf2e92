use crate::error::param;
use crate::{Result, C64};

/// Binary Golay complementary pair of length `2^m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GolayPair {
    pub a: Vec<i8>,
    pub b: Vec<i8>,
}

impl GolayPair {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Sum of the aperiodic autocorrelations of `a` and `b` at lags `0..len`.
    pub fn autocorrelation_sum(&self) -> Vec<i64> {
        let n = self.len();
        (0..n)
            .map(|lag| {
                (0..n - lag)
                    .map(|i| {
                        self.a[i] as i64 * self.a[i + lag] as i64 + self.b[i] as i64 * self.b[i + lag] as i64
                    })
                    .sum()
            })
            .collect()
    }
}

/// Recursive construction `a' = [a b]`, `b' = [a -b]` from `a = b = [1]`.
pub fn golay_pair(log2_length: u32) -> Result<GolayPair> {
    if !(1..=16).contains(&log2_length) {
        return Err(param(format!("Golay log2 length {log2_length} outside 1..=16")));
    }
    let mut a = vec![1i8];
    let mut b = vec![1i8];
    for _ in 0..log2_length {
        let next_a: Vec<i8> = a.iter().chain(b.iter()).copied().collect();
        let next_b: Vec<i8> = a.iter().copied().chain(b.iter().map(|x| -x)).collect();
        a = next_a;
        b = next_b;
    }
    Ok(GolayPair { a, b })
}

/// Streaming correlator against both members of a Golay pair whose chips are
/// spaced `spacing` samples apart.
///
/// Uses the butterfly structure of the recursive construction: `log2 N`
/// add/subtract stages instead of `2N` multiplies per output. Output `n` is
/// the correlation of the window starting at absolute sample `n`, available
/// once sample `n + (N - 1)·spacing` has been pushed.
#[derive(Debug, Clone)]
pub struct GolayCorrelator {
    log2_length: u32,
    spacing: usize,
    history: Vec<C64>,
    next_output: u64,
}

impl GolayCorrelator {
    pub fn new(log2_length: u32, spacing: usize) -> Result<Self> {
        if !(1..=16).contains(&log2_length) || spacing == 0 {
            return Err(param("Golay correlator needs 1..=16 stages and nonzero spacing"));
        }
        Ok(GolayCorrelator {
            log2_length,
            spacing,
            history: Vec::new(),
            next_output: 0,
        })
    }

    /// Samples of look-ahead each output needs beyond its own index.
    pub fn span(&self) -> usize {
        ((1usize << self.log2_length) - 1) * self.spacing
    }

    /// Absolute index of the next correlation output.
    pub fn next_output_index(&self) -> u64 {
        self.next_output
    }

    /// Push samples; returns `(first_index, corr_a, corr_b)` for every window
    /// that became complete.
    pub fn push(&mut self, input: &[C64]) -> (u64, Vec<C64>, Vec<C64>) {
        let first = self.next_output;
        let mut ext = std::mem::take(&mut self.history);
        ext.extend_from_slice(input);
        let span = self.span();
        if ext.len() <= span {
            self.history = ext;
            return (first, Vec::new(), Vec::new());
        }
        let (ca, cb) = butterfly(&ext, self.log2_length, self.spacing);
        self.next_output += ca.len() as u64;
        self.history = ext[ext.len() - span..].to_vec();
        (first, ca, cb)
    }
}

fn butterfly(x: &[C64], stages: u32, spacing: usize) -> (Vec<C64>, Vec<C64>) {
    let mut ca = x.to_vec();
    let mut cb = x.to_vec();
    for k in 0..stages {
        let d = (1usize << k) * spacing;
        let len = ca.len() - d;
        let mut na = Vec::with_capacity(len);
        let mut nb = Vec::with_capacity(len);
        for n in 0..len {
            na.push(ca[n] + cb[n + d]);
            nb.push(ca[n] - cb[n + d]);
        }
        ca = na;
        cb = nb;
    }
    (ca, cb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step() {
        let p = golay_pair(1).unwrap();
        assert_eq!(p.a, vec![1, 1]);
        assert_eq!(p.b, vec![1, -1]);
    }

    #[test]
    fn complementary_at_every_supported_length() {
        for m in 1..=12 {
            let p = golay_pair(m).unwrap();
            let sum = p.autocorrelation_sum();
            assert_eq!(sum[0], 2 * p.len() as i64);
            assert!(sum[1..].iter().all(|&s| s == 0), "m = {m}");
        }
    }

    #[test]
    fn length_256_brute_force() {
        let p = golay_pair(8).unwrap();
        let n = 256;
        for lag in 0..n {
            let mut s = 0i64;
            for i in 0..n - lag {
                s += (p.a[i] * p.a[i + lag]) as i64;
                s += (p.b[i] * p.b[i + lag]) as i64;
            }
            assert_eq!(s, if lag == 0 { 512 } else { 0 });
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(golay_pair(0).is_err());
        assert!(golay_pair(17).is_err());
    }

    fn direct(x: &[C64], chips: &[i8], spacing: usize, n: usize) -> C64 {
        chips.iter().enumerate().map(|(i, &c)| x[n + i * spacing] * c as f64).sum()
    }

    #[test]
    fn butterfly_matches_direct_correlation() {
        let p = golay_pair(5).unwrap();
        let x: Vec<C64> = (0..400).map(|k| C64::new((k as f64 * 0.31).sin(), (k as f64 * 0.17).cos())).collect();
        let mut corr = GolayCorrelator::new(5, 3).unwrap();
        let (first, ca, cb) = corr.push(&x);
        assert_eq!(first, 0);
        assert_eq!(ca.len(), 400 - 31 * 3);
        for n in 0..ca.len() {
            assert!((ca[n] - direct(&x, &p.a, 3, n)).norm() < 1e-12);
            assert!((cb[n] - direct(&x, &p.b, 3, n)).norm() < 1e-12);
        }
    }

    #[test]
    fn streaming_is_block_invariant() {
        let x: Vec<C64> = (0..3000).map(|k| C64::new((k as f64 * 0.011).sin(), (k as f64 * 0.3).cos())).collect();
        let mut whole = GolayCorrelator::new(8, 2).unwrap();
        let (_, a_all, b_all) = whole.push(&x);
        let mut chunked = GolayCorrelator::new(8, 2).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for ch in x.chunks(97) {
            let (first, ca, cb) = chunked.push(ch);
            assert_eq!(first as usize, a.len());
            a.extend(ca);
            b.extend(cb);
        }
        assert_eq!(a, a_all);
        assert_eq!(b, b_all);
    }
}
