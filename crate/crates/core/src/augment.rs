//! Mel-spectrogram augmentations: time stretch (TS), pitch shift (PS),
//! equalization (EQ) and random resized crop (RRC), plus their parameter
//! samplers and the TS -> PS -> EQ pipeline.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melfront::{MelConfig, MelFilterbank, MelSpectrogram};
use crate::spline::NaturalSpline;

pub const TAU_RANGE: (f64, f64) = (0.75, 1.5);
/// Roughly -5 .. +5 semitones.
pub const MU_RANGE: (f64, f64) = (0.749, 1.335);
pub const LOWPASS_CORNER_HZ: (f64, f64) = (2200.0, 4000.0);
pub const HIGHPASS_CORNER_HZ: (f64, f64) = (200.0, 1200.0);
/// Accepted by [`time_stretch`]; wider than the training support so that
/// manipulation sweeps can reach half and double time.
pub const TAU_OP_RANGE: (f64, f64) = (0.25, 4.0);
pub const BUTTERWORTH_ORDER: u32 = 3;
/// Output duration over crop duration.
pub const RRC_TIME_SCALE: (f64, f64) = (2.0 / 3.0, 4.0 / 3.0);
pub const RRC_FREQ_SCALE: (f64, f64) = (0.6, 1.0);

/// Positions this close beyond the last band still count as inside it.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeStretchParams {
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchShiftParams {
    pub mu: f64,
}

impl PitchShiftParams {
    pub fn from_semitones(semitones: f64) -> Self {
        Self {
            mu: 2f64.powf(semitones / 12.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqMode {
    None,
    Lowpass,
    Highpass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqParams {
    pub mode: EqMode,
    pub corner_hz: f64,
    pub order: u32,
}

impl EqParams {
    pub fn none() -> Self {
        Self {
            mode: EqMode::None,
            corner_hz: 1000.0,
            order: BUTTERWORTH_ORDER,
        }
    }

    pub fn lowpass(corner_hz: f64) -> Self {
        Self {
            mode: EqMode::Lowpass,
            corner_hz,
            order: BUTTERWORTH_ORDER,
        }
    }

    pub fn highpass(corner_hz: f64) -> Self {
        Self {
            mode: EqMode::Highpass,
            corner_hz,
            order: BUTTERWORTH_ORDER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order != BUTTERWORTH_ORDER {
            return Err(Error::Parameter(format!(
                "butterworth order must be {BUTTERWORTH_ORDER}, got {}",
                self.order
            )));
        }
        let range = match self.mode {
            EqMode::None => return Ok(()),
            EqMode::Lowpass => LOWPASS_CORNER_HZ,
            EqMode::Highpass => HIGHPASS_CORNER_HZ,
        };
        if !(range.0..=range.1).contains(&self.corner_hz) {
            return Err(Error::Parameter(format!(
                "{:?} corner {} Hz outside [{}, {}]",
                self.mode, self.corner_hz, range.0, range.1
            )));
        }
        Ok(())
    }
}

/// Crop-and-rescale parameters.
///
/// `time_scale` is output duration over cropped duration, so values below 1
/// compress time like a stretch with `tau = 1 / time_scale`. `freq_scale` is
/// the cropped fraction of the band axis. Offsets place the crop within the
/// free range of each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrcParams {
    pub time_scale: f64,
    pub freq_scale: f64,
    pub time_offset: f64,
    pub freq_offset: f64,
}

impl RrcParams {
    pub fn identity() -> Self {
        Self {
            time_scale: 1.0,
            freq_scale: 1.0,
            time_offset: 0.0,
            freq_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "TS")]
    TimeStretch,
    #[serde(rename = "PS")]
    PitchShift,
    #[serde(rename = "EQ")]
    Equalize,
    #[serde(rename = "RRC")]
    ResizedCrop,
}

impl Stage {
    fn rank(self) -> u8 {
        match self {
            Stage::TimeStretch | Stage::ResizedCrop => 0,
            Stage::PitchShift => 1,
            Stage::Equalize => 2,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Stage::TimeStretch => "TS",
            Stage::PitchShift => "PS",
            Stage::Equalize => "EQ",
            Stage::ResizedCrop => "RRC",
        }
    }
}

/// An augmentation chain and its segment geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub chain: Vec<Stage>,
    pub rng_seed: u64,
    pub context_seconds: f64,
    pub output_seconds: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            chain: Vec::new(),
            rng_seed: 0,
            context_seconds: 4.5,
            output_seconds: 3.0,
        }
    }
}

/// Chain names such as `none`, `TS`, `TSPS`, `TSPSEQ`, `RRC`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainName(pub Vec<Stage>);

impl fmt::Display for ChainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        for s in &self.0 {
            f.write_str(s.code())?;
        }
        Ok(())
    }
}

impl FromStr for ChainName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("none") || t.is_empty() {
            return Ok(ChainName(Vec::new()));
        }
        let mut rest = t.to_ascii_uppercase();
        let mut chain = Vec::new();
        while !rest.is_empty() {
            let stage = [
                ("RRC", Stage::ResizedCrop),
                ("TS", Stage::TimeStretch),
                ("PS", Stage::PitchShift),
                ("EQ", Stage::Equalize),
            ]
            .into_iter()
            .find(|(code, _)| rest.starts_with(code))
            .ok_or_else(|| Error::Config(format!("unknown augmentation chain {s:?}")))?;
            chain.push(stage.1);
            rest.drain(..stage.0.len());
        }
        let name = ChainName(chain);
        AugmentationSpec {
            chain: name.0.clone(),
            ..Default::default()
        }
        .validate()?;
        Ok(name)
    }
}

impl AugmentationSpec {
    pub fn with_chain(chain: Vec<Stage>) -> Self {
        Self {
            chain,
            ..Default::default()
        }
    }

    pub fn name(&self) -> String {
        ChainName(self.chain.clone()).to_string()
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.chain.contains(&stage)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.chain.windows(2) {
            if w[0].rank() >= w[1].rank() {
                return Err(Error::Config(format!(
                    "augmentation chain must follow TS/RRC -> PS -> EQ order without repeats, got {}",
                    self.name()
                )));
            }
        }
        if self.has(Stage::ResizedCrop) && (self.has(Stage::TimeStretch) || self.has(Stage::PitchShift)) {
            return Err(Error::Config("RRC cannot be combined with TS or PS".into()));
        }
        if !(self.output_seconds > 0.0 && self.context_seconds >= self.output_seconds) {
            return Err(Error::Config(format!(
                "augmentation needs 0 < output_seconds <= context_seconds, got {} and {}",
                self.output_seconds, self.context_seconds
            )));
        }
        Ok(())
    }
}

/// Draws from the reciprocal distribution `p(x) ~ 1/x` on `[lo, hi]`.
pub fn sample_log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.gen();
    (lo.ln() + u * (hi / lo).ln()).exp().clamp(lo, hi)
}

pub fn sample_tau<R: Rng + ?Sized>(rng: &mut R) -> TimeStretchParams {
    TimeStretchParams {
        tau: sample_log_uniform(rng, TAU_RANGE.0, TAU_RANGE.1),
    }
}

pub fn sample_mu<R: Rng + ?Sized>(rng: &mut R) -> PitchShiftParams {
    PitchShiftParams {
        mu: sample_log_uniform(rng, MU_RANGE.0, MU_RANGE.1),
    }
}

pub fn sample_eq<R: Rng + ?Sized>(rng: &mut R) -> EqParams {
    match rng.gen_range(0..3) {
        0 => EqParams::none(),
        1 => EqParams::lowpass(rng.gen_range(LOWPASS_CORNER_HZ.0..=LOWPASS_CORNER_HZ.1)),
        _ => EqParams::highpass(rng.gen_range(HIGHPASS_CORNER_HZ.0..=HIGHPASS_CORNER_HZ.1)),
    }
}

pub fn sample_rrc<R: Rng + ?Sized>(rng: &mut R) -> RrcParams {
    RrcParams {
        time_scale: sample_log_uniform(rng, RRC_TIME_SCALE.0, RRC_TIME_SCALE.1),
        freq_scale: rng.gen_range(RRC_FREQ_SCALE.0..=RRC_FREQ_SCALE.1),
        time_offset: rng.gen(),
        freq_offset: rng.gen(),
    }
}

/// Source frames needed to produce `out_frames` at stretch `tau`.
pub fn required_frames(tau: f64, out_frames: usize) -> usize {
    if out_frames == 0 {
        return 0;
    }
    (tau * (out_frames - 1) as f64 - 1e-9).ceil().max(0.0) as usize + 1
}

/// Number of frames of a whole-signal stretch: every output frame samples
/// inside the source.
pub fn stretched_len(num_frames: usize, tau: f64) -> usize {
    if num_frames == 0 {
        return 0;
    }
    ((num_frames - 1) as f64 / tau + 1e-9).floor() as usize + 1
}

/// Resamples every band along time at `t = tau * m` with a natural cubic
/// spline, producing `out_frames` frames.
pub fn time_stretch(x: &MelSpectrogram, p: TimeStretchParams, out_frames: usize) -> Result<MelSpectrogram> {
    let tau = p.tau;
    if !(tau > TAU_OP_RANGE.0 && tau < TAU_OP_RANGE.1) {
        return Err(Error::Parameter(format!(
            "stretch factor {tau} outside ({}, {})",
            TAU_OP_RANGE.0, TAU_OP_RANGE.1
        )));
    }
    let required = required_frames(tau, out_frames);
    if required > x.num_frames() {
        return Err(Error::Context {
            required,
            available: x.num_frames(),
        });
    }
    let mut values = Vec::with_capacity(x.num_bands() * out_frames);
    for u in 0..x.num_bands() {
        let row = x.row(u);
        // only the knots the output touches, plus a margin for the boundary conditions
        let end = (required + 2).min(row.len());
        let spline = NaturalSpline::new(&row[..end]);
        values.extend((0..out_frames).map(|m| spline.eval(tau * m as f64)));
    }
    Ok(x.with_values(values, out_frames))
}

/// Stretches the whole spectrogram, keeping every sampled position inside it.
pub fn time_stretch_full(x: &MelSpectrogram, p: TimeStretchParams) -> Result<MelSpectrogram> {
    time_stretch(x, p, stretched_len(x.num_frames(), p.tau))
}

/// `S * log10(1 + mu * (10^(u / S) - 1))`: the position on a mel grid of
/// scale `S` whose linear frequency is `mu` times that of position `u`.
pub fn mel_position_scaled(u: f64, mu: f64, scale: f64) -> f64 {
    scale * (1.0 + mu * (10f64.powf(u / scale) - 1.0)).log10()
}

/// `U / log10(1 + R / 700)`.
pub fn paper_band_scale(num_bands: usize, sample_rate_hz: f64) -> f64 {
    num_bands as f64 / (1.0 + sample_rate_hz / 700.0).log10()
}

/// Band-grid scale of this frontend's filterbank: positions counted in band
/// spacings from 0 Hz, so band `u` sits at grid position `u + 1`.
pub fn filterbank_grid_scale(config: &MelConfig) -> f64 {
    2595.0 / config.mel_spacing()
}

/// Source band position read by output band `u` when shifting pitch by `mu`.
pub fn pitch_source_position(u: usize, mu: f64, config: &MelConfig) -> f64 {
    let scale = filterbank_grid_scale(config);
    mel_position_scaled(u as f64 + 1.0, 1.0 / mu, scale) - 1.0
}

/// Moves spectral content from linear frequency `f` to `mu * f`.
///
/// Each output band is spline-interpolated from the source column at the
/// mel position of its frequency divided by `mu`. Bands whose source lies
/// above the top band (only when `mu < 1`) become silence.
pub fn pitch_shift(x: &MelSpectrogram, p: PitchShiftParams) -> Result<MelSpectrogram> {
    if !(p.mu > 0.0 && p.mu.is_finite()) {
        return Err(Error::Parameter(format!("pitch factor {} must be positive", p.mu)));
    }
    let bands = x.num_bands();
    let frames = x.num_frames();
    let top = (bands - 1) as f64;
    let floor = x.config.floor_value();
    let positions: Vec<f64> = (0..bands).map(|u| pitch_source_position(u, p.mu, &x.config)).collect();
    let mut values = vec![0.0; bands * frames];
    let mut column = vec![0.0; bands];
    for m in 0..frames {
        for (u, c) in column.iter_mut().enumerate() {
            *c = x.get(u, m);
        }
        let spline = NaturalSpline::new(&column);
        for (u, &pos) in positions.iter().enumerate() {
            values[u * frames + m] = if pos > top + EDGE_EPS { floor } else { spline.eval(pos) };
        }
    }
    Ok(x.with_values(values, frames))
}

/// |H| of an analog Butterworth filter of the given order.
pub fn butterworth_magnitude(freq_hz: f64, corner_hz: f64, mode: EqMode, order: u32) -> f64 {
    let r = (freq_hz / corner_hz).powi(order as i32);
    match mode {
        EqMode::None => 1.0,
        EqMode::Lowpass => 1.0 / (1.0 + r * r).sqrt(),
        EqMode::Highpass => r / (1.0 + r * r).sqrt(),
    }
}

/// Filterbank state shared by the augmentations of one frontend config.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: MelConfig,
    filterbank: MelFilterbank,
    row_sums: Vec<f64>,
}

impl Augmenter {
    pub fn new(config: &MelConfig) -> Result<Self> {
        let filterbank = MelFilterbank::new(config)?;
        let row_sums = (0..filterbank.num_bands())
            .map(|u| filterbank.row(u).iter().sum())
            .collect();
        Ok(Self {
            config: config.clone(),
            filterbank,
            row_sums,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Per-band log offsets `log10(sum_k S_u[k] B[k] / sum_k S_u[k])`.
    pub fn eq_offsets(&self, p: &EqParams) -> Result<Vec<f64>> {
        p.validate()?;
        if p.mode == EqMode::None {
            return Ok(vec![0.0; self.filterbank.num_bands()]);
        }
        let bin_hz = self.config.sample_rate_hz as f64 / self.config.dft_size as f64;
        Ok((0..self.filterbank.num_bands())
            .map(|u| {
                let (a, b) = self.filterbank.support(u);
                let row = self.filterbank.row(u);
                let gain: f64 = (a..b)
                    .map(|k| row[k] * butterworth_magnitude(k as f64 * bin_hz, p.corner_hz, p.mode, p.order))
                    .sum();
                (gain / self.row_sums[u]).max(self.config.log_floor).log10()
            })
            .collect())
    }

    pub fn equalize(&self, x: &MelSpectrogram, p: &EqParams) -> Result<MelSpectrogram> {
        self.check(x)?;
        if p.mode == EqMode::None {
            p.validate()?;
            return Ok(x.clone());
        }
        let offsets = self.eq_offsets(p)?;
        Ok(x.map(|u, _, v| v + offsets[u]))
    }

    fn check(&self, x: &MelSpectrogram) -> Result<()> {
        if x.config != self.config {
            return Err(Error::Parameter(format!(
                "spectrogram {} was computed with a different frontend config",
                x.source_id
            )));
        }
        Ok(())
    }

    /// Runs the chain, sampling every stage's parameters from `rng` in
    /// pipeline order.
    pub fn apply_chain<R: Rng + ?Sized>(
        &self,
        x: &MelSpectrogram,
        spec: &AugmentationSpec,
        rng: &mut R,
    ) -> Result<(MelSpectrogram, SampledParams)> {
        spec.validate()?;
        self.check(x)?;
        let out_frames = self.config.frames_for_seconds(spec.output_seconds);
        if x.num_frames() < out_frames {
            return Err(Error::Context {
                required: out_frames,
                available: x.num_frames(),
            });
        }
        let mut sampled = SampledParams::default();
        let mut y = if spec.has(Stage::TimeStretch) {
            let p = sample_tau(rng);
            sampled.time_stretch = Some(p);
            time_stretch(x, p, out_frames)?
        } else if spec.has(Stage::ResizedCrop) {
            let p = sample_rrc(rng);
            sampled.resized_crop = Some(p);
            random_resized_crop(x, &p, out_frames)?
        } else {
            x.slice_frames((x.num_frames() - out_frames) / 2, out_frames)?
        };
        if spec.has(Stage::PitchShift) {
            let p = sample_mu(rng);
            sampled.pitch_shift = Some(p);
            y = pitch_shift(&y, p)?;
        }
        if spec.has(Stage::Equalize) {
            let p = sample_eq(rng);
            sampled.equalize = Some(p);
            y = self.equalize(&y, &p)?;
        }
        Ok((y, sampled))
    }
}

/// Parameters drawn by one [`Augmenter::apply_chain`] call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampledParams {
    pub time_stretch: Option<TimeStretchParams>,
    pub pitch_shift: Option<PitchShiftParams>,
    pub equalize: Option<EqParams>,
    pub resized_crop: Option<RrcParams>,
}

pub fn equalize(x: &MelSpectrogram, p: &EqParams) -> Result<MelSpectrogram> {
    Augmenter::new(&x.config)?.equalize(x, p)
}

pub fn apply_chain<R: Rng + ?Sized>(x: &MelSpectrogram, spec: &AugmentationSpec, rng: &mut R) -> Result<MelSpectrogram> {
    Ok(Augmenter::new(&x.config)?.apply_chain(x, spec, rng)?.0)
}

/// Crops a time x band rectangle and rescales it bilinearly to
/// `num_bands x out_frames`.
pub fn random_resized_crop(x: &MelSpectrogram, p: &RrcParams, out_frames: usize) -> Result<MelSpectrogram> {
    let finite = [p.time_scale, p.freq_scale, p.time_offset, p.freq_offset]
        .iter()
        .all(|v| v.is_finite());
    if !finite || p.time_scale <= 0.0 || p.freq_scale <= 0.0 || p.freq_scale > 1.0 {
        return Err(Error::Parameter(format!("degenerate crop {p:?}")));
    }
    if !(0.0..=1.0).contains(&p.time_offset) || !(0.0..=1.0).contains(&p.freq_offset) {
        return Err(Error::Parameter(format!("crop offsets must lie in [0, 1], got {p:?}")));
    }
    if out_frames == 0 {
        return Err(Error::Parameter("crop output has zero frames".into()));
    }
    let bands = x.num_bands();
    let frames = x.num_frames();
    let time_step = 1.0 / p.time_scale;
    let span = time_step * (out_frames - 1) as f64;
    let time_free = (frames as f64 - 1.0) - span;
    if time_free < -EDGE_EPS {
        return Err(Error::Context {
            required: span.ceil() as usize + 1,
            available: frames,
        });
    }
    let t0 = p.time_offset * time_free.max(0.0);
    let top = (bands - 1) as f64;
    let f0 = p.freq_offset * top * (1.0 - p.freq_scale);

    let lerp_index = |pos: f64, len: usize| -> (usize, usize, f64) {
        let last = (len - 1) as f64;
        let pos = pos.clamp(0.0, last);
        let i = pos.floor() as usize;
        let s = pos - i as f64;
        if s == 0.0 || i + 1 >= len {
            (i, i, 0.0)
        } else {
            (i, i + 1, s)
        }
    };
    let time_idx: Vec<_> = (0..out_frames).map(|m| lerp_index(t0 + m as f64 * time_step, frames)).collect();
    let mut values = Vec::with_capacity(bands * out_frames);
    for u in 0..bands {
        let (ua, ub, su) = lerp_index(f0 + u as f64 * p.freq_scale, bands);
        let (ra, rb) = (x.row(ua), x.row(ub));
        for &(ma, mb, sm) in &time_idx {
            let lo = ra[ma] + sm * (ra[mb] - ra[ma]);
            let hi = rb[ma] + sm * (rb[mb] - rb[ma]);
            values.push(lo + su * (hi - lo));
        }
    }
    Ok(x.with_values(values, out_frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random_spec(frames: usize, seed: u64) -> MelSpectrogram {
        let mut rng = stream(seed, &[]);
        let vals: Vec<f64> = (0..96 * frames).map(|_| rng.gen_range(-6.0..1.0)).collect();
        MelSpectrogram::from_values(vals, 96, frames, MelConfig::default(), "r").unwrap()
    }

    #[test]
    fn samplers_respect_supports() {
        let mut rng = stream(1, &[]);
        for _ in 0..20_000 {
            let t = sample_tau(&mut rng).tau;
            assert!((TAU_RANGE.0..=TAU_RANGE.1).contains(&t));
            let m = sample_mu(&mut rng).mu;
            assert!((MU_RANGE.0..=MU_RANGE.1).contains(&m));
            let e = sample_eq(&mut rng);
            e.validate().unwrap();
            let r = sample_rrc(&mut rng);
            assert!((RRC_TIME_SCALE.0..=RRC_TIME_SCALE.1).contains(&r.time_scale));
            assert!((RRC_FREQ_SCALE.0..=RRC_FREQ_SCALE.1).contains(&r.freq_scale));
        }
    }

    #[test]
    fn samplers_are_seeded() {
        let draw = |seed| {
            let mut rng = stream(seed, &[]);
            (0..16).map(|_| sample_tau(&mut rng).tau).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn mu_support_is_five_semitones() {
        assert!((2f64.powf(-5.0 / 12.0) - MU_RANGE.0).abs() < 1e-3);
        assert!((2f64.powf(5.0 / 12.0) - MU_RANGE.1).abs() < 1e-3);
    }

    #[test]
    fn tau_identity_is_prefix_crop() {
        let x = random_spec(450, 3);
        let y = time_stretch(&x, TimeStretchParams { tau: 1.0 }, 300).unwrap();
        assert_eq!(y.num_frames(), 300);
        for u in 0..96 {
            for m in 0..300 {
                assert!((y.get(u, m) - x.get(u, m)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stretch_reports_required_context() {
        let x = random_spec(400, 3);
        match time_stretch(&x, TimeStretchParams { tau: 1.5 }, 300) {
            Err(Error::Context { required, available }) => {
                assert_eq!(required, 450);
                assert_eq!(available, 400);
            }
            other => panic!("{other:?}"),
        }
        assert!(time_stretch(&x, TimeStretchParams { tau: 4.5 }, 10).is_err());
        assert_eq!(stretched_len(451, 1.5), 301);
        assert_eq!(time_stretch_full(&x, TimeStretchParams { tau: 0.5 }).unwrap().num_frames(), 799);
    }

    #[test]
    fn pitch_identity_and_dc_fixed_point() {
        let x = random_spec(20, 4);
        let y = pitch_shift(&x, PitchShiftParams { mu: 1.0 }).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        for mu in [0.5, 0.749, 1.335, 2.0] {
            assert_eq!(mel_position_scaled(0.0, mu, 69.68), 0.0);
        }
    }

    #[test]
    fn pitch_down_zero_fills_top_bands() {
        let x = random_spec(5, 9);
        let y = pitch_shift(&x, PitchShiftParams { mu: 0.749 }).unwrap();
        let floor = x.config.floor_value();
        let cfg = &x.config;
        for u in 0..96 {
            let filled = pitch_source_position(u, 0.749, cfg) > 95.0 + 1e-9;
            // band u holds content from frequency f/0.749, beyond Nyquist only near the top
            let hz = cfg.band_center_hz(u as f64) / 0.749;
            assert_eq!(filled, hz > cfg.band_center_hz(95.0) + 1e-6);
            for m in 0..5 {
                if filled {
                    assert_eq!(y.get(u, m), floor);
                } else {
                    assert!(y.get(u, m) > -9.0);
                }
            }
        }
        let up = pitch_shift(&x, PitchShiftParams { mu: 1.335 }).unwrap();
        assert!(up.values().iter().all(|&v| v > -9.0));
    }

    #[test]
    fn eq_none_is_identity_and_ranges_are_enforced() {
        let x = random_spec(10, 5);
        assert_eq!(equalize(&x, &EqParams::none()).unwrap(), x);
        assert!(equalize(&x, &EqParams::lowpass(1000.0)).is_err());
        assert!(equalize(&x, &EqParams::highpass(3000.0)).is_err());
        assert!(equalize(&x, &EqParams::lowpass(3000.0)).is_ok());
    }

    #[test]
    fn eq_offset_is_frame_constant() {
        let x = random_spec(30, 6);
        for p in [EqParams::lowpass(2500.0), EqParams::highpass(600.0)] {
            let y = equalize(&x, &p).unwrap();
            for u in 0..96 {
                let d0 = y.get(u, 0) - x.get(u, 0);
                assert!(d0 <= 1e-12);
                for m in 1..30 {
                    assert!((y.get(u, m) - x.get(u, m) - d0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn butterworth_corner_is_minus_3db() {
        for mode in [EqMode::Lowpass, EqMode::Highpass] {
            let g = butterworth_magnitude(1000.0, 1000.0, mode, 3);
            assert!((g - 0.5f64.sqrt()).abs() < 1e-15);
        }
        assert!(butterworth_magnitude(100.0, 1000.0, EqMode::Lowpass, 3) > 0.999);
        assert!(butterworth_magnitude(10_000.0, 1000.0, EqMode::Highpass, 3) > 0.999);
    }

    #[test]
    fn rrc_identity_and_errors() {
        let x = random_spec(300, 7);
        let y = random_resized_crop(&x, &RrcParams::identity(), 300).unwrap();
        for (a, b) in x.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        let zero = RrcParams {
            freq_scale: 0.0,
            ..RrcParams::identity()
        };
        assert!(matches!(random_resized_crop(&x, &zero, 300), Err(Error::Parameter(_))));
        let too_long = RrcParams {
            time_scale: 0.5,
            ..RrcParams::identity()
        };
        assert!(matches!(random_resized_crop(&x, &too_long, 300), Err(Error::Context { .. })));
    }

    #[test]
    fn chain_names_parse_and_validate() {
        for name in ["none", "TS", "PS", "EQ", "TSPS", "TSPSEQ", "RRC", "RRCEQ"] {
            let c: ChainName = name.parse().unwrap();
            assert_eq!(c.to_string(), name);
        }
        assert!("PSTS".parse::<ChainName>().is_err());
        assert!("RRCPS".parse::<ChainName>().is_err());
        assert!("XY".parse::<ChainName>().is_err());
    }

    #[test]
    fn empty_chain_center_crops() {
        let x = random_spec(450, 8);
        let aug = Augmenter::new(&x.config).unwrap();
        let (y, p) = aug
            .apply_chain(&x, &AugmentationSpec::default(), &mut stream(0, &[]))
            .unwrap();
        assert_eq!(p, SampledParams::default());
        assert_eq!(y, x.slice_frames(75, 300).unwrap());
    }

    #[test]
    fn seeded_chain_is_reproducible() {
        let x = random_spec(450, 8);
        let aug = Augmenter::new(&x.config).unwrap();
        let spec = AugmentationSpec::with_chain(vec![Stage::TimeStretch, Stage::PitchShift, Stage::Equalize]);
        let a = aug.apply_chain(&x, &spec, &mut stream(11, &[2])).unwrap();
        let b = aug.apply_chain(&x, &spec, &mut stream(11, &[2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.num_frames(), 300);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn stretch_and_shift_commute_with_offsets(tau in 0.75f64..1.5, mu in 1.0f64..1.335, c in -3.0f64..3.0, seed in 0u64..1000) {
            let x = random_spec(460, seed);
            let shifted = x.map(|_, _, v| v + c);
            let a = time_stretch(&x, TimeStretchParams { tau }, 300).unwrap();
            let b = time_stretch(&shifted, TimeStretchParams { tau }, 300).unwrap();
            for (p, q) in a.values().iter().zip(b.values()) {
                prop_assert!((p + c - q).abs() < 1e-9);
            }
            let a = pitch_shift(&x, PitchShiftParams { mu }).unwrap();
            let b = pitch_shift(&shifted, PitchShiftParams { mu }).unwrap();
            for (p, q) in a.values().iter().zip(b.values()) {
                prop_assert!((p + c - q).abs() < 1e-9);
            }
        }
    }
}
