//! Two-talker-plus-noise scenes built from synthetic harmonic word bursts.

mod features;
mod wav;

pub use features::{
    envelope, mel_band_centers, mel_features, DEFAULT_ENVELOPE_FRAME_MS, DEFAULT_MEL_BANDS, DEFAULT_MEL_FRAME_MS,
};
pub use wav::{read_wav, write_wav};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Pitch thresholds (Hz) separating low / normal / high.
pub const PITCH_LOW_BELOW_HZ: f64 = 136.6;
pub const PITCH_HIGH_ABOVE_HZ: f64 = 196.1;
/// Tempo thresholds (seconds per word). Slower than the first is low tempo.
pub const TEMPO_LOW_ABOVE_SPW: f64 = 0.39;
pub const TEMPO_HIGH_BELOW_SPW: f64 = 0.25;

const MAX_HARMONICS: usize = 16;
const ACTIVE_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("audio signal must contain at least one sample"));
        }
        if sample_rate_hz == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("audio samples must be finite"));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate_hz: self.sample_rate_hz }
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self { samples: self.samples[..len.min(self.samples.len())].to_vec(), sample_rate_hz: self.sample_rate_hz }
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

pub(crate) fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Normal,
    High,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Normal => "normal",
            Level::High => "high",
        }
    }

    pub const ALL: [Level; 3] = [Level::Low, Level::Normal, Level::High];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub f0_hz: f64,
    pub words: Vec<String>,
    pub seconds_per_word: f64,
    pub timbre_seed: u64,
    pub gender: Gender,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0_hz.is_finite() && self.f0_hz > 0.0) {
            return Err(invalid("f0 must be positive"));
        }
        if !(self.seconds_per_word.is_finite() && self.seconds_per_word > 0.0) {
            return Err(invalid("seconds per word must be positive"));
        }
        if self.words.is_empty() {
            return Err(invalid("word list must be nonempty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeakerAttributes {
    pub gender: Gender,
    pub pitch: Level,
    pub tempo: Level,
}

/// Pitch and tempo classes from the fixed thresholds. Values sitting exactly
/// on a threshold are classed as normal.
pub fn classify_attributes(spec: &SourceSpec) -> SpeakerAttributes {
    SpeakerAttributes { gender: spec.gender, pitch: pitch_class(spec.f0_hz), tempo: tempo_class(spec.seconds_per_word) }
}

pub fn pitch_class(f0_hz: f64) -> Level {
    if f0_hz < PITCH_LOW_BELOW_HZ {
        Level::Low
    } else if f0_hz > PITCH_HIGH_ABOVE_HZ {
        Level::High
    } else {
        Level::Normal
    }
}

pub fn tempo_class(seconds_per_word: f64) -> Level {
    if seconds_per_word > TEMPO_LOW_ABOVE_SPW {
        Level::Low
    } else if seconds_per_word < TEMPO_HIGH_BELOW_SPW {
        Level::High
    } else {
        Level::Normal
    }
}

/// One spoken word placed on the timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTiming {
    pub word: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub amplitude: f64,
}

/// Word slots: each word occupies a jittered slot around the nominal pace and
/// sounds during the first part of it. Words starting past `duration_s` are
/// dropped.
pub fn word_timeline(spec: &SourceSpec, duration_s: f64) -> Vec<WordTiming> {
    let mut out = Vec::with_capacity(spec.words.len());
    let mut t = 0.0;
    for (i, word) in spec.words.iter().enumerate() {
        if t >= duration_s {
            break;
        }
        let key = rng::derive(spec.timbre_seed, &[i as u64, rng::hash_str(word)]);
        let jitter = 0.75 + 0.5 * rng::unit_from_hash(key);
        let amplitude = 0.5 + 0.5 * rng::unit_from_hash(key ^ 0xA5A5);
        let slot = spec.seconds_per_word * jitter;
        out.push(WordTiming {
            word: word.clone(),
            onset_s: t,
            offset_s: (t + slot * ACTIVE_FRACTION).min(duration_s),
            amplitude,
        });
        t += slot;
    }
    out
}

/// Harmonic-stack carrier gated by per-word raised-sine bursts, normalized to
/// unit RMS. Deterministic in `(spec, duration_s, rate_hz)`.
pub fn synthesize_source(spec: &SourceSpec, duration_s: f64, rate_hz: u32) -> Result<AudioSignal> {
    spec.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(invalid("duration must be positive"));
    }
    if rate_hz == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    let rate = f64::from(rate_hz);
    let n = (duration_s * rate).round() as usize;
    if n == 0 {
        return Err(invalid("duration shorter than one sample"));
    }

    let mut timbre = rng::rng(rng::derive(spec.timbre_seed, &[0x7417]));
    let n_harm = ((0.45 * rate / spec.f0_hz).floor() as usize).clamp(1, MAX_HARMONICS);
    let harmonics: Vec<(f64, f64)> = (1..=n_harm)
        .map(|h| {
            let amp = if h == 1 { 1.0 } else { (0.3 + 0.5 * timbre.random::<f64>()) / h as f64 };
            let phase = std::f64::consts::TAU * timbre.random::<f64>();
            (amp, phase)
        })
        .collect();

    let mut carrier = vec![0.0; n];
    for (h, &(amp, phase)) in harmonics.iter().enumerate() {
        let omega = std::f64::consts::TAU * (h + 1) as f64 * spec.f0_hz / rate;
        let (step_s, step_c) = omega.sin_cos();
        let (mut s, mut c) = phase.sin_cos();
        for (i, v) in carrier.iter_mut().enumerate() {
            *v += amp * s;
            let ns = s * step_c + c * step_s;
            let nc = c * step_c - s * step_s;
            s = ns;
            c = nc;
            // keep the rotation on the unit circle
            if i % 4096 == 4095 {
                let r = (s * s + c * c).sqrt();
                s /= r;
                c /= r;
            }
        }
    }

    let mut gate = vec![0.0; n];
    for w in word_timeline(spec, duration_s) {
        let start = (w.onset_s * rate).round() as usize;
        let end = ((w.offset_s * rate).round() as usize).min(n);
        if end <= start {
            continue;
        }
        let len = (end - start) as f64;
        for (k, g) in gate[start..end].iter_mut().enumerate() {
            *g = w.amplitude * (std::f64::consts::PI * (k as f64 + 0.5) / len).sin();
        }
    }

    let mut samples: Vec<f64> = carrier.iter().zip(&gate).map(|(c, g)| c * g).collect();
    let rms = power(&samples).sqrt();
    if rms == 0.0 {
        return Err(Error::DegenerateInput("synthesized source is silent".into()));
    }
    samples.iter_mut().for_each(|s| *s /= rms);
    AudioSignal::new(samples, rate_hz)
}

/// Seeded white Gaussian noise at unit power.
pub fn white_noise(len: usize, rate_hz: u32, seed: u64) -> Result<AudioSignal> {
    let mut r = rng::rng(seed);
    let samples: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut r)).collect();
    let rms = power(&samples).sqrt();
    AudioSignal::new(samples.into_iter().map(|s| s / rms).collect(), rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Talker {
    A,
    B,
}

impl Talker {
    pub fn other(self) -> Self {
        match self {
            Talker::A => Talker::B,
            Talker::B => Talker::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Talker::A => 0,
            Talker::B => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Talker::A
        } else {
            Talker::B
        }
    }
}

/// Signal content of a scene after level alignment.
#[derive(Debug, Clone)]
pub struct Mix {
    pub source_a: AudioSignal,
    pub source_b: AudioSignal,
    pub noise: AudioSignal,
    pub mixture: AudioSignal,
    pub attended: Talker,
    pub snr_db: f64,
}

impl Mix {
    pub fn source(&self, talker: Talker) -> &AudioSignal {
        match talker {
            Talker::A => &self.source_a,
            Talker::B => &self.source_b,
        }
    }
}

/// Truncate to the common length, scale both talkers to unit power and the
/// noise to `10^(-snr_db/10)` of it, then sum.
pub fn mix_scene(a: &AudioSignal, b: &AudioSignal, noise: &AudioSignal, snr_db: f64, attended: Talker) -> Result<Mix> {
    let rate = a.sample_rate_hz();
    if b.sample_rate_hz() != rate || noise.sample_rate_hz() != rate {
        return Err(invalid("sample rates differ between scene components"));
    }
    if !snr_db.is_finite() {
        return Err(invalid("snr must be finite"));
    }
    let len = a.len().min(b.len()).min(noise.len());
    let (a, b, noise) = (a.truncated(len), b.truncated(len), noise.truncated(len));
    let (pa, pb, pn) = (a.power(), b.power(), noise.power());
    if pa == 0.0 || pb == 0.0 || pn == 0.0 {
        return Err(Error::DegenerateInput("scene component has zero power".into()));
    }
    let source_a = a.scaled(pa.sqrt().recip());
    let source_b = b.scaled(pb.sqrt().recip());
    let target_noise_power = 10f64.powf(-snr_db / 10.0);
    let noise = noise.scaled((target_noise_power / pn).sqrt());
    let mixture: Vec<f64> =
        (0..len).map(|i| source_a.samples()[i] + source_b.samples()[i] + noise.samples()[i]).collect();
    Ok(Mix { mixture: AudioSignal::new(mixture, rate)?, source_a, source_b, noise, attended, snr_db })
}

/// A complete trial scene: mixed signals plus the ground truth about both talkers.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub mix: Mix,
    pub spec_a: SourceSpec,
    pub spec_b: SourceSpec,
    pub attrs_a: SpeakerAttributes,
    pub attrs_b: SpeakerAttributes,
    pub transcript_a: Vec<String>,
    pub transcript_b: Vec<String>,
}

impl Scene {
    pub fn attended(&self) -> Talker {
        self.mix.attended
    }

    pub fn spec(&self, talker: Talker) -> &SourceSpec {
        match talker {
            Talker::A => &self.spec_a,
            Talker::B => &self.spec_b,
        }
    }

    pub fn attrs(&self, talker: Talker) -> SpeakerAttributes {
        match talker {
            Talker::A => self.attrs_a,
            Talker::B => self.attrs_b,
        }
    }

    pub fn transcript(&self, talker: Talker) -> &[String] {
        match talker {
            Talker::A => &self.transcript_a,
            Talker::B => &self.transcript_b,
        }
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.mix.mixture.sample_rate_hz()
    }
}

/// Synthesize both talkers and noise and assemble a scene. Transcripts hold
/// the words that actually start inside the scene.
pub fn build_scene(
    id: impl Into<String>,
    spec_a: SourceSpec,
    spec_b: SourceSpec,
    duration_s: f64,
    rate_hz: u32,
    snr_db: f64,
    attended: Talker,
    noise_seed: u64,
) -> Result<Scene> {
    let a = synthesize_source(&spec_a, duration_s, rate_hz)?;
    let b = synthesize_source(&spec_b, duration_s, rate_hz)?;
    let noise = white_noise(a.len(), rate_hz, noise_seed)?;
    let mix = mix_scene(&a, &b, &noise, snr_db, attended)?;
    let transcript = |s: &SourceSpec| word_timeline(s, duration_s).into_iter().map(|w| w.word).collect::<Vec<_>>();
    Ok(Scene {
        id: id.into(),
        attrs_a: classify_attributes(&spec_a),
        attrs_b: classify_attributes(&spec_b),
        transcript_a: transcript(&spec_a),
        transcript_b: transcript(&spec_b),
        spec_a,
        spec_b,
        mix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(f0: f64, n_words: usize, spw: f64) -> SourceSpec {
        SourceSpec {
            f0_hz: f0,
            words: (0..n_words).map(|i| format!("w{i}")).collect(),
            seconds_per_word: spw,
            timbre_seed: 11,
            gender: Gender::Male,
        }
    }

    #[test]
    fn synth_length_and_rms() {
        let s = synthesize_source(&spec(120.0, 10, 0.4), 4.0, 16000).unwrap();
        assert_eq!(s.len(), 64000);
        assert!((0.999..=1.001).contains(&s.rms()));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synthesize_source(&spec(150.0, 8, 0.3), 2.0, 16000).unwrap();
        let b = synthesize_source(&spec(150.0, 8, 0.3), 2.0, 16000).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn synth_rejects_bad_arguments() {
        assert!(matches!(synthesize_source(&spec(120.0, 3, 0.4), 0.0, 16000), Err(Error::InvalidArgument(_))));
        assert!(matches!(synthesize_source(&spec(120.0, 3, 0.4), -1.0, 16000), Err(Error::InvalidArgument(_))));
        assert!(matches!(synthesize_source(&spec(120.0, 3, 0.4), 1.0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dominant_peak_at_f0() {
        // naive DFT magnitude scan over 150..250 Hz in 0.25 Hz steps
        let s = synthesize_source(&spec(200.0, 10, 0.4), 4.0, 8000).unwrap();
        let rate = 8000.0;
        let x = s.samples();
        let mut best = (0.0, 0.0);
        let mut f = 20.0;
        while f < 3900.0 {
            let w = std::f64::consts::TAU * f / rate;
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let (sn, cs) = (w * n as f64).sin_cos();
                re += v * cs;
                im -= v * sn;
            }
            let mag = re.hypot(im);
            if mag > best.1 {
                best = (f, mag);
            }
            f += if (150.0..250.0).contains(&f) { 0.25 } else { 5.0 };
        }
        assert!((best.0 - 200.0).abs() <= 2.0, "peak at {}", best.0);
    }

    #[test]
    fn attribute_thresholds() {
        assert_eq!(pitch_class(120.0), Level::Low);
        assert_eq!(pitch_class(136.6), Level::Normal);
        assert_eq!(pitch_class(196.1), Level::Normal);
        assert_eq!(pitch_class(196.2), Level::High);
        assert_eq!(tempo_class(0.30), Level::Normal);
        assert_eq!(tempo_class(0.39), Level::Normal);
        assert_eq!(tempo_class(0.25), Level::Normal);
        assert_eq!(tempo_class(0.40), Level::Low);
        assert_eq!(tempo_class(0.2), Level::High);
    }

    #[test]
    fn noise_levels_follow_db() {
        let a = synthesize_source(&spec(120.0, 6, 0.3), 1.0, 8000).unwrap();
        let b = synthesize_source(&spec(210.0, 6, 0.35), 1.0, 8000).unwrap();
        let n = white_noise(8000, 8000, 3).unwrap();
        for (snr, expected) in [(12.0, 10f64.powf(-1.2)), (9.0, 10f64.powf(-0.9))] {
            let m = mix_scene(&a, &b, &n, snr, Talker::A).unwrap();
            assert!((m.source_a.power() - 1.0).abs() < 1e-12);
            assert!((m.noise.power() - expected).abs() < 1e-12);
            let measured = 10.0 * (m.source_a.power() / m.noise.power()).log10();
            assert!((measured - snr).abs() < 0.01);
            assert!((m.source_a.power() - m.source_b.power()).abs() / m.source_a.power() < 1e-6);
        }
        assert!((10f64.powf(-1.2) - 0.0631).abs() < 1e-4);
        assert!((10f64.powf(-0.9) - 0.1259).abs() < 1e-4);
    }

    #[test]
    fn mix_truncates_to_shortest() {
        let a = AudioSignal::new(vec![1.0; 10], 100).unwrap();
        let b = AudioSignal::new(vec![-1.0; 7], 100).unwrap();
        let n = AudioSignal::new(vec![0.5; 9], 100).unwrap();
        let m = mix_scene(&a, &b, &n, 10.0, Talker::B).unwrap();
        assert_eq!(m.mixture.len(), 7);
    }

    #[test]
    fn mix_errors() {
        let a = AudioSignal::new(vec![1.0; 10], 100).unwrap();
        let other_rate = AudioSignal::new(vec![1.0; 10], 200).unwrap();
        let silent = AudioSignal::new(vec![0.0; 10], 100).unwrap();
        assert!(matches!(mix_scene(&a, &other_rate, &a, 9.0, Talker::A), Err(Error::InvalidArgument(_))));
        assert!(matches!(mix_scene(&a, &silent, &a, 9.0, Talker::A), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn audio_signal_invariants() {
        assert!(AudioSignal::new(vec![], 100).is_err());
        assert!(AudioSignal::new(vec![f64::NAN], 100).is_err());
    }

    #[test]
    fn transcript_covers_started_words() {
        let s = spec(120.0, 30, 0.4);
        let tl = word_timeline(&s, 4.0);
        assert!(tl.len() < 30 && tl.len() >= 7);
        assert!(tl.iter().all(|w| w.onset_s < 4.0));
    }
}
