//! Forward encoding model producing synthetic multichannel low-rate neural
//! recordings in which the attended talker is represented more strongly
//! than the ignored one.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{envelope, Scene, Talker};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::speaker::SpeakerEmbedding;

pub const DEFAULT_FRAME_RATE_HZ: f64 = 100.0;
pub const DEFAULT_CHANNELS: usize = 32;
const IIZ_MAGIC: &[u8; 4] = b"IIZ1";

/// C×T recording stored channel-major (`data[c * T + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralRecording {
    data: Vec<f64>,
    channels: usize,
    frames: usize,
    frame_rate_hz: f64,
    pub scene_id: String,
}

impl NeuralRecording {
    pub fn new(data: Vec<f64>, channels: usize, frame_rate_hz: f64, scene_id: impl Into<String>) -> Result<Self> {
        if channels == 0 || data.is_empty() || !data.len().is_multiple_of(channels) {
            return Err(invalid("recording data must be a nonempty C×T matrix"));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(invalid("frame rate must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("recording entries must be finite"));
        }
        Ok(Self { frames: data.len() / channels, data, channels, frame_rate_hz, scene_id: scene_id.into() })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.frame_rate_hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn at(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.frames + t]
    }

    /// Mean across channels for every frame.
    pub fn channel_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.frames];
        for c in 0..self.channels {
            for (acc, v) in m.iter_mut().zip(self.channel(c)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.channels as f64);
        m
    }

    /// Contiguous window of `round(len_s · rate)` frames starting at
    /// `round(start_s · rate)`.
    pub fn slice_window(&self, start_s: f64, len_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && len_s.is_finite()) || start_s < 0.0 || len_s <= 0.0 {
            return Err(invalid("window start must be nonnegative and length positive"));
        }
        let start = (start_s * self.frame_rate_hz).round() as usize;
        let len = (len_s * self.frame_rate_hz).round() as usize;
        self.slice_frames(start, len)
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(invalid(format!(
                "window [{start}, {}) outside recording of {} frames",
                start + len,
                self.frames
            )));
        }
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(&self.channel(c)[start..start + len]);
        }
        Ok(Self {
            data,
            channels: self.channels,
            frames: len,
            frame_rate_hz: self.frame_rate_hz,
            scene_id: self.scene_id.clone(),
        })
    }

    /// Header: magic `IIZ1`, C and T as u32 LE, frame rate as f64 LE; then
    /// C×T row-major f32 LE.
    pub fn write_iiz(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + 4 * self.data.len());
        buf.extend_from_slice(IIZ_MAGIC);
        buf.extend_from_slice(&(self.channels as u32).to_le_bytes());
        buf.extend_from_slice(&(self.frames as u32).to_le_bytes());
        buf.extend_from_slice(&self.frame_rate_hz.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read_iiz(path: &Path, scene_id: impl Into<String>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..4] != IIZ_MAGIC {
            return Err(Error::Parse(format!("{}: missing IIZ1 header", path.display())));
        }
        let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let rate = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if bytes.len() != 20 + 4 * c * t {
            return Err(Error::Parse(format!("{}: payload size does not match {c}×{t}", path.display())));
        }
        let data = bytes[20..].chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))).collect();
        Self::new(data, c, rate, scene_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingParams {
    pub attended_gain: f64,
    pub unattended_gain: f64,
    /// Per-channel response latency in frames.
    pub lags: Vec<usize>,
    /// C×F row-major; column 0 weighs the envelope, the rest the identity features.
    pub weights: Vec<f64>,
    pub feature_dim: usize,
    /// F−1 × D row-major projection from speaker embedding to identity features.
    pub identity_projection: Vec<f64>,
    pub noise_sigma: f64,
    pub frame_rate_hz: f64,
    pub seed: u64,
}

/// Knobs from which a full [`EncodingParams`] is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub channels: usize,
    pub identity_dims: usize,
    /// Overall scale of the identity bias relative to the envelope drive.
    pub identity_scale: f64,
    pub attended_gain: f64,
    pub unattended_gain: f64,
    pub noise_sigma: f64,
    pub min_lag_frames: usize,
    pub max_lag_frames: usize,
    pub frame_rate_hz: f64,
    pub seed: u64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS,
            identity_dims: 8,
            identity_scale: 0.2,
            attended_gain: 1.0,
            unattended_gain: 0.3,
            noise_sigma: 1.0,
            min_lag_frames: 3,
            max_lag_frames: 15,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            seed: 7,
        }
    }
}

impl EncodingParams {
    /// Draws lags uniformly in `[min_lag, max_lag]`, positive envelope
    /// weights in `[0.5, 1.5)`, Gaussian identity weights and projection.
    pub fn generate(cfg: &EncodingConfig, embedding_dim: usize) -> Result<Self> {
        if cfg.channels == 0 {
            return Err(invalid("need at least one channel"));
        }
        if !(cfg.identity_scale >= 0.0 && cfg.identity_scale.is_finite()) {
            return Err(invalid("identity scale must be finite and nonnegative"));
        }
        if cfg.min_lag_frames > cfg.max_lag_frames {
            return Err(invalid("min lag exceeds max lag"));
        }
        let mut r = rng::rng_at(cfg.seed, &[0xE4C]);
        let f = 1 + cfg.identity_dims;
        let lags = (0..cfg.channels).map(|_| r.random_range(cfg.min_lag_frames..=cfg.max_lag_frames)).collect();
        let mut weights = Vec::with_capacity(cfg.channels * f);
        for _ in 0..cfg.channels {
            weights.push(0.5 + r.random::<f64>());
            for _ in 1..f {
                weights.push(StandardNormal.sample(&mut r));
            }
        }
        let scale = cfg.identity_scale / (cfg.identity_dims.max(1) as f64).sqrt();
        let identity_projection = (0..cfg.identity_dims * embedding_dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut r))
            .collect();
        let p = Self {
            attended_gain: cfg.attended_gain,
            unattended_gain: cfg.unattended_gain,
            lags,
            weights,
            feature_dim: f,
            identity_projection,
            noise_sigma: cfg.noise_sigma,
            frame_rate_hz: cfg.frame_rate_hz,
            seed: cfg.seed,
        };
        p.validate(embedding_dim)?;
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.lags.len()
    }

    pub fn validate(&self, embedding_dim: usize) -> Result<()> {
        if !(self.attended_gain > self.unattended_gain && self.unattended_gain >= 0.0) {
            return Err(invalid("gains must satisfy attended > unattended >= 0"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise sigma must be nonnegative"));
        }
        if self.lags.is_empty() || self.feature_dim == 0 || self.weights.len() != self.lags.len() * self.feature_dim {
            return Err(invalid("weights must be C×F with C = number of lags"));
        }
        if self.identity_projection.len() != (self.feature_dim - 1) * embedding_dim {
            return Err(invalid("identity projection must be (F-1)×D"));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(invalid("frame rate must be positive"));
        }
        Ok(())
    }

    fn identity_features(&self, e: &SpeakerEmbedding) -> Vec<f64> {
        let d = e.dim();
        self.identity_projection
            .chunks_exact(d)
            .map(|row| row.iter().zip(e.as_slice()).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Stream features at the neural frame rate: the source envelope.
pub fn stream_envelope(scene: &Scene, talker: Talker, frame_rate_hz: f64) -> Vec<f64> {
    envelope(scene.mix.source(talker), 1000.0 / frame_rate_hz)
}

/// Each channel sums gain-weighted projections of both streams' features
/// (envelope delayed by the channel lag, plus a constant identity bias from
/// the speaker embedding) and Gaussian noise drawn from `params.seed` and
/// the scene id.
pub fn encode(scene: &Scene, embeddings: [&SpeakerEmbedding; 2], params: &EncodingParams) -> Result<NeuralRecording> {
    params.validate(embeddings[0].dim())?;
    if embeddings[1].dim() != embeddings[0].dim() {
        return Err(invalid("speaker embeddings differ in dimension"));
    }
    let attended = scene.attended();
    let env = [
        stream_envelope(scene, Talker::A, params.frame_rate_hz),
        stream_envelope(scene, Talker::B, params.frame_rate_hz),
    ];
    let t_len = env[0].len().min(env[1].len());
    if let Some(&lag) = params.lags.iter().find(|&&l| l >= t_len) {
        return Err(invalid(format!("lag {lag} frames not shorter than recording ({t_len} frames)")));
    }
    let ids = [params.identity_features(embeddings[0]), params.identity_features(embeddings[1])];
    let gain = |talker: Talker| if talker == attended { params.attended_gain } else { params.unattended_gain };

    let f = params.feature_dim;
    let c_len = params.channels();
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let mut r = rng::rng_at(params.seed, &[0x2015E, rng::hash_str(&scene.id)]);
    let mut data = vec![0.0; c_len * t_len];
    for c in 0..c_len {
        let w = &params.weights[c * f..(c + 1) * f];
        let lag = params.lags[c];
        let mut bias = 0.0;
        for talker in [Talker::A, Talker::B] {
            bias += gain(talker) * w[1..].iter().zip(&ids[talker.index()]).map(|(a, b)| a * b).sum::<f64>();
        }
        let row = &mut data[c * t_len..(c + 1) * t_len];
        for (t, v) in row.iter_mut().enumerate() {
            let mut drive = bias;
            if t >= lag {
                drive += w[0] * (gain(Talker::A) * env[0][t - lag] + gain(Talker::B) * env[1][t - lag]);
            }
            *v = drive;
        }
    }
    if params.noise_sigma > 0.0 {
        for v in data.iter_mut() {
            *v += noise.sample(&mut r);
        }
    }
    NeuralRecording::new(data, c_len, params.frame_rate_hz, scene.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{build_scene, Gender, SourceSpec};
    use crate::speaker::embed_speaker;

    fn scene(attended: Talker) -> Scene {
        let words = |p: &str| (0..20).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let a = SourceSpec {
            f0_hz: 120.0,
            words: words("a"),
            seconds_per_word: 0.33,
            timbre_seed: 1,
            gender: Gender::Male,
        };
        let b = SourceSpec {
            f0_hz: 210.0,
            words: words("b"),
            seconds_per_word: 0.27,
            timbre_seed: 2,
            gender: Gender::Female,
        };
        build_scene("s0", a, b, 4.0, 8000, 12.0, attended, 5).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn embeddings(s: &Scene) -> [SpeakerEmbedding; 2] {
        [embed_speaker(&s.spec_a, 16).unwrap(), embed_speaker(&s.spec_b, 16).unwrap()]
    }

    #[test]
    fn degenerate_params_copy_lagged_envelope() {
        let s = scene(Talker::B);
        let e = embeddings(&s);
        let params = EncodingParams {
            attended_gain: 1.0,
            unattended_gain: 0.0,
            lags: vec![0, 3, 7],
            weights: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            feature_dim: 3,
            identity_projection: vec![0.5; 32],
            noise_sigma: 0.0,
            frame_rate_hz: 100.0,
            seed: 0,
        };
        let z = encode(&s, [&e[0], &e[1]], &params).unwrap();
        let env = stream_envelope(&s, Talker::B, 100.0);
        assert_eq!(z.frames(), 400);
        for (c, &lag) in params.lags.iter().enumerate() {
            for t in 0..z.frames() {
                let expected = if t >= lag { env[t - lag] } else { 0.0 };
                assert_eq!(z.at(c, t), expected);
            }
        }
    }

    #[test]
    fn encode_is_seed_deterministic() {
        let s = scene(Talker::A);
        let e = embeddings(&s);
        let p = EncodingParams::generate(&EncodingConfig::default(), 16).unwrap();
        let z1 = encode(&s, [&e[0], &e[1]], &p).unwrap();
        let z2 = encode(&s, [&e[0], &e[1]], &p).unwrap();
        assert_eq!(z1, z2);
        let p2 = EncodingParams { seed: 99, ..p };
        assert_ne!(encode(&s, [&e[0], &e[1]], &p2).unwrap(), z1);
    }

    #[test]
    fn attended_envelope_dominates_channel_mean() {
        for attended in [Talker::A, Talker::B] {
            let s = scene(attended);
            let e = embeddings(&s);
            let cfg = EncodingConfig { noise_sigma: 0.1, ..EncodingConfig::default() };
            let p = EncodingParams::generate(&cfg, 16).unwrap();
            let z = encode(&s, [&e[0], &e[1]], &p).unwrap();
            let lagged_corr = |talker: Talker| {
                let env = stream_envelope(&s, talker, 100.0);
                let mut total = 0.0;
                for (c, &lag) in p.lags.iter().enumerate() {
                    let shifted: Vec<f64> =
                        (0..z.frames()).map(|t| if t >= lag { env[t - lag] } else { 0.0 }).collect();
                    total += pearson(z.channel(c), &shifted);
                }
                total / p.lags.len() as f64
            };
            let (att, un) = (lagged_corr(attended), lagged_corr(attended.other()));
            assert!(att > un, "attended {att} vs unattended {un}");
        }
    }

    #[test]
    fn lag_longer_than_recording_rejected() {
        let s = scene(Talker::A);
        let e = embeddings(&s);
        let mut p = EncodingParams::generate(&EncodingConfig::default(), 16).unwrap();
        p.lags[0] = 400;
        assert!(matches!(encode(&s, [&e[0], &e[1]], &p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_gains_rejected() {
        let cfg = EncodingConfig { attended_gain: 0.3, unattended_gain: 0.3, ..EncodingConfig::default() };
        assert!(EncodingParams::generate(&cfg, 16).is_err());
    }

    #[test]
    fn windows() {
        let data: Vec<f64> = (0..2 * 300).map(|i| i as f64).collect();
        let z = NeuralRecording::new(data, 2, 100.0, "x").unwrap();
        assert_eq!(z.slice_window(0.0, 3.0).unwrap(), z);
        assert_eq!(z.slice_window(0.5, 1.0).unwrap().frames(), 100);
        let a = z.slice_window(0.0, 1.2).unwrap();
        let b = z.slice_window(1.2, 1.8).unwrap();
        for c in 0..2 {
            let joined: Vec<f64> = a.channel(c).iter().chain(b.channel(c)).copied().collect();
            assert_eq!(joined, z.channel(c));
        }
        assert!(z.slice_window(2.5, 1.0).is_err());
        assert!(z.slice_window(0.0, 0.0).is_err());
    }

    #[test]
    fn iiz_roundtrip() {
        let data: Vec<f64> = (0..3 * 50).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = NeuralRecording::new(data, 3, 100.0, "scene-1").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.iiz");
        z.write_iiz(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"IIZ1");
        assert_eq!(bytes.len(), 20 + 4 * 150);
        let back = NeuralRecording::read_iiz(&p, "scene-1").unwrap();
        assert_eq!((back.channels(), back.frames()), (3, 50));
        for (a, b) in z.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
