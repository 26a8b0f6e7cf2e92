//! Receive diversity combining.

use super::estimate::ChannelEstimate;
use crate::error::{contract, Error};
use crate::framing::DiversityMode;
use crate::{Result, C64};

/// Maximal-ratio combine two RX streams carrying TX antenna `column` alone.
pub fn mrc_column(y0: &[C64], y1: &[C64], est: &ChannelEstimate, column: usize) -> Result<Vec<C64>> {
    let (h0, h1) = (est.h[0][column], est.h[1][column]);
    let norm = h0.norm_sqr() + h1.norm_sqr();
    if !(norm > 0.0) {
        return Err(Error::DegenerateChannel(norm.sqrt()));
    }
    let (w0, w1) = (h0.conj() / norm, h1.conj() / norm);
    Ok(y0.iter().zip(y1).map(|(a, b)| w0 * a + w1 * b).collect())
}

/// Alamouti decode of consecutive symbol pairs received on both antennas.
/// `est` must already include the per-antenna transmit scaling.
pub fn alamouti_decode(y0: &[C64], y1: &[C64], est: &ChannelEstimate) -> Result<Vec<C64>> {
    if !y0.len().is_multiple_of(2) {
        return Err(contract("Alamouti decoding needs whole symbol pairs"));
    }
    let norm = est.total_energy();
    if !(norm > 0.0) {
        return Err(Error::DegenerateChannel(norm.sqrt()));
    }
    let h = est.h;
    let mut out = Vec::with_capacity(y0.len());
    for (p0, p1) in y0.chunks_exact(2).zip(y1.chunks_exact(2)) {
        let rx = [p0, p1];
        let mut s1 = C64::new(0.0, 0.0);
        let mut s2 = C64::new(0.0, 0.0);
        for i in 0..2 {
            let (r1, r2) = (rx[i][0], rx[i][1]);
            s1 += h[i][0].conj() * r1 + h[i][1] * r2.conj();
            s2 += h[i][1].conj() * r1 - h[i][0] * r2.conj();
        }
        out.push(s1 / norm);
        out.push(s2 / norm);
    }
    Ok(out)
}

/// Combine a payload stream. Returns the combined symbols and the combining
/// gain relative to a single unit branch, `Σ|h|²` over the used entries.
pub fn combine_mrc(y: [&[C64]; 2], est: &ChannelEstimate, mode: DiversityMode) -> Result<(Vec<C64>, f64)> {
    if y[0].len() != y[1].len() {
        return Err(contract("combiner inputs differ in length"));
    }
    match mode {
        DiversityMode::SingleTxMrc => Ok((mrc_column(y[0], y[1], est, 0)?, est.column_energy(0))),
        DiversityMode::Alamouti => Ok((alamouti_decode(y[0], y[1], est)?, est.total_energy())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::db;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn est(h: [[C64; 2]; 2]) -> ChannelEstimate {
        ChannelEstimate {
            h,
            dominant_tap_mag: 1.0,
            timestamp: 0,
        }
    }

    fn cn(rng: &mut ChaCha8Rng, var: f64) -> C64 {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * (var / 2.0).sqrt()
    }

    fn qpsk(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(if rng.random() { 1.0 } else { -1.0 }, if rng.random() { 1.0 } else { -1.0 }) * FRAC_1_SQRT_2
    }

    #[test]
    fn single_branch_pass_through() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let e = est([[one, zero], [zero, zero]]);
        let y0 = vec![C64::new(0.3, -0.2), C64::new(-1.0, 0.5)];
        let y1 = vec![C64::new(9.0, 9.0); 2];
        let (z, g) = combine_mrc([&y0, &y1], &e, DiversityMode::SingleTxMrc).unwrap();
        assert_eq!(z, y0);
        assert_eq!(g, 1.0);
    }

    /// Post-combining SNR in dB for two unit branches at `branch_db` each.
    fn mrc_snr(branch_db: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n0 = 10f64.powf(-branch_db / 10.0);
        let h = [C64::from_polar(1.0, 0.7), C64::from_polar(1.0, -2.1)];
        let zero = C64::new(0.0, 0.0);
        let e = est([[h[0], zero], [h[1], zero]]);
        let n = 100_000;
        let s: Vec<C64> = (0..n).map(|_| qpsk(&mut rng)).collect();
        let y0: Vec<C64> = s.iter().map(|&x| h[0] * x + cn(&mut rng, n0)).collect();
        let y1: Vec<C64> = s.iter().map(|&x| h[1] * x + cn(&mut rng, n0)).collect();
        let (z, _) = combine_mrc([&y0, &y1], &e, DiversityMode::SingleTxMrc).unwrap();
        let err: f64 = z.iter().zip(&s).map(|(z, s)| (z - s).norm_sqr()).sum::<f64>() / n as f64;
        db(1.0 / err)
    }

    #[test]
    fn mrc_adds_branch_snr() {
        let got = mrc_snr(10.0, 5);
        assert!((got - 13.0103).abs() <= 0.3, "{got}");
        for (k, b) in [0.0, 5.0, 10.0].into_iter().enumerate() {
            let got = mrc_snr(b, 10 + k as u64);
            assert!((got - (b + db(2.0))).abs() <= 0.3, "{b}: {got}");
        }
    }

    #[test]
    fn alamouti_noiseless_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let h = [[cn(&mut rng, 1.0), cn(&mut rng, 1.0)], [cn(&mut rng, 1.0), cn(&mut rng, 1.0)]];
            let s: Vec<C64> = (0..200).map(|_| qpsk(&mut rng)).collect();
            let mut y = [Vec::new(), Vec::new()];
            for p in s.chunks_exact(2) {
                let (s1, s2) = (p[0] * FRAC_1_SQRT_2, p[1] * FRAC_1_SQRT_2);
                for i in 0..2 {
                    y[i].push(h[i][0] * s1 + h[i][1] * s2);
                    y[i].push(h[i][0] * -s2.conj() + h[i][1] * s1.conj());
                }
            }
            let e = est(h).scaled(FRAC_1_SQRT_2);
            let (z, _) = combine_mrc([&y[0], &y[1]], &e, DiversityMode::Alamouti).unwrap();
            for (a, b) in z.iter().zip(&s) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_and_shape_errors() {
        let e = est([[C64::new(0.0, 0.0); 2]; 2]);
        let y = vec![C64::new(1.0, 0.0); 4];
        assert!(combine_mrc([&y, &y], &e, DiversityMode::SingleTxMrc).is_err());
        assert!(combine_mrc([&y, &y], &e, DiversityMode::Alamouti).is_err());
        let e = est([[C64::new(1.0, 0.0); 2]; 2]);
        assert!(combine_mrc([&y[..3], &y[..3]], &e, DiversityMode::Alamouti).is_err());
        assert!(combine_mrc([&y[..3], &y], &e, DiversityMode::SingleTxMrc).is_err());
    }
}
