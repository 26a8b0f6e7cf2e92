use crate::error::param;
use crate::Result;
use serde::Serialize;

pub const BAND_COUNT: usize = 4;
/// Band centers in units of the symbol rate, lowest band first.
pub const BAND_CENTERS_RS: [f64; BAND_COUNT] = [-2.8125, -0.9375, 0.9375, 2.8125];
pub const ROLL_OFF: f64 = 0.5;
pub const SAMPLES_PER_SYMBOL: usize = 8;
/// Band-isolation low-pass edges in units of the symbol rate.
pub const PASSBAND_EDGE_RS: f64 = 0.75;
pub const STOPBAND_EDGE_RS: f64 = 1.125;
pub const STAGE_ATTEN_DB: f64 = 40.0;

/// Shared composite band split into four FDMA bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandPlan {
    pub symbol_rate: f64,
    pub roll_off: f64,
    pub samples_per_symbol: usize,
    pub composite_rate: f64,
    pub band_centers: [f64; BAND_COUNT],
    pub occupied_bw: f64,
    pub band_spacing: f64,
    pub guard_band: f64,
    pub outer_edge: f64,
    pub nyquist_margin: f64,
    pub passband_edge: f64,
    pub stopband_edge: f64,
}

pub fn build_band_plan(symbol_rate: f64) -> Result<BandPlan> {
    if !(symbol_rate > 0.0) || !symbol_rate.is_finite() {
        return Err(param(format!("symbol rate {symbol_rate} must be positive")));
    }
    let composite_rate = SAMPLES_PER_SYMBOL as f64 * symbol_rate;
    let occupied_bw = (1.0 + ROLL_OFF) * symbol_rate;
    let band_spacing = (BAND_CENTERS_RS[2] - BAND_CENTERS_RS[1]) * symbol_rate;
    let outer_edge = BAND_CENTERS_RS[3] * symbol_rate + occupied_bw / 2.0;
    Ok(BandPlan {
        symbol_rate,
        roll_off: ROLL_OFF,
        samples_per_symbol: SAMPLES_PER_SYMBOL,
        composite_rate,
        band_centers: BAND_CENTERS_RS.map(|c| c * symbol_rate),
        occupied_bw,
        band_spacing,
        guard_band: band_spacing - occupied_bw,
        outer_edge,
        nyquist_margin: composite_rate / 2.0 - outer_edge,
        passband_edge: PASSBAND_EDGE_RS * symbol_rate,
        stopband_edge: STOPBAND_EDGE_RS * symbol_rate,
    })
}

impl BandPlan {
    pub fn normalized() -> Self {
        build_band_plan(1.0).expect("unit rate is valid")
    }

    pub fn check_band(&self, band_index: usize) -> Result<()> {
        if band_index >= BAND_COUNT {
            return Err(param(format!("band index {band_index} outside 0..{BAND_COUNT}")));
        }
        Ok(())
    }

    /// Band center in cycles per composite sample.
    pub fn center_normalized(&self, band_index: usize) -> Result<f64> {
        self.check_band(band_index)?;
        Ok(self.band_centers[band_index] / self.composite_rate)
    }

    /// Low-pass edges in cycles per composite sample.
    pub fn filter_edges_normalized(&self) -> (f64, f64) {
        (self.passband_edge / self.composite_rate, self.stopband_edge / self.composite_rate)
    }

    /// Uncoded line rate of one band in bits/s for a modulation with `bits_per_symbol`.
    pub fn line_rate(&self, bits_per_symbol: usize) -> f64 {
        self.symbol_rate * bits_per_symbol as f64
    }
}
