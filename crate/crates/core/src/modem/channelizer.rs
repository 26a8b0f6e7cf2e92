//! Receive front end: isolate one band of the composite signal.

use crate::dsp::{design_kaiser_lowpass, design_srrc, FirFilter, FirTaps, Nco, SampleBlock};
use crate::mesh::band::{BandPlan, STAGE_ATTEN_DB};
use crate::modem::tx::SRRC_SPAN_SYMBOLS;
use crate::{Result, C64};

/// Filter designs shared by every channelizer of a band plan.
#[derive(Debug, Clone)]
pub struct ChannelizerDesign {
    pub lowpass: FirTaps,
    pub srrc: FirTaps,
    /// Composite samples per output sample.
    pub decimation: usize,
}

impl ChannelizerDesign {
    pub fn new(plan: &BandPlan) -> Result<Self> {
        let (pass, stop) = plan.filter_edges_normalized();
        let composite_sps = (plan.composite_rate / plan.symbol_rate).round() as usize;
        Ok(ChannelizerDesign {
            lowpass: design_kaiser_lowpass(pass, stop, STAGE_ATTEN_DB)?,
            srrc: design_srrc(plan.roll_off, SRRC_SPAN_SYMBOLS, plan.samples_per_symbol)?,
            decimation: (composite_sps / plan.samples_per_symbol).max(1),
        })
    }

    /// Group delay in output samples from the composite input to the matched
    /// filter output.
    pub fn group_delay(&self) -> usize {
        (self.lowpass.len() - 1) / self.decimation + (self.srrc.len() - 1) / 2
    }

    /// Samples from a transmit symbol impulse to its matched-filter peak,
    /// including the transmit pulse shaper.
    pub fn end_to_end_delay(&self) -> usize {
        self.group_delay() + (self.srrc.len() - 1) / 2
    }
}

/// Streaming NCO → low-pass → low-pass → decimate → matched SRRC for one band.
#[derive(Debug, Clone)]
pub struct Channelizer {
    nco: Nco,
    lpf1: FirFilter,
    lpf2: FirFilter,
    mf: FirFilter,
    decimation: usize,
    sample_rate: f64,
}

impl Channelizer {
    pub fn new(plan: &BandPlan, band_index: usize, design: &ChannelizerDesign) -> Result<Self> {
        let center = plan.center_normalized(band_index)?;
        Ok(Channelizer {
            nco: Nco::new(-center, 0.0)?,
            lpf1: FirFilter::from_taps(&design.lowpass),
            lpf2: FirFilter::from_taps(&design.lowpass),
            mf: FirFilter::from_taps(&design.srrc),
            decimation: design.decimation,
            sample_rate: plan.symbol_rate * plan.samples_per_symbol as f64,
        })
    }

    pub fn process(&mut self, rx: &SampleBlock) -> SampleBlock {
        let mut x: Vec<C64> = rx.samples.clone();
        self.nco.mix_in_place(&mut x, rx.start_index);
        let x = self.lpf2.process(&self.lpf1.process(&x));
        let (x, start) = if self.decimation > 1 {
            let d = self.decimation as u64;
            let first = rx.start_index.div_ceil(d) * d;
            let skip = (first - rx.start_index) as usize;
            (x.into_iter().skip(skip).step_by(self.decimation).collect(), first / d)
        } else {
            (x, rx.start_index)
        };
        SampleBlock::new(self.mf.process(&x), self.sample_rate, start)
    }
}

/// One-shot channelization of a block with fresh filter state.
pub fn channelize(rx: &SampleBlock, band_index: usize, plan: &BandPlan) -> Result<SampleBlock> {
    let design = ChannelizerDesign::new(plan)?;
    Ok(Channelizer::new(plan, band_index, &design)?.process(rx))
}
