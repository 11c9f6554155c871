//! Intention-uninformed stream separation stand-ins, centroid-based stream
//! selection, and signal-level metrics.

use serde::{Deserialize, Serialize};

use crate::audio::{AudioSignal, Talker};
use crate::error::{invalid, Result};
use crate::rng;
use crate::speaker::SpeakerEmbedding;

/// Reported in place of ±∞ dB.
pub const DB_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityProfile {
    #[default]
    Oracle,
    Degraded { si_sdr_db: f64 },
}

#[derive(Debug, Clone)]
pub struct SeparatedStreams {
    /// Presentation order.
    pub streams: [AudioSignal; 2],
    /// Which talker each presented stream was derived from.
    pub origin: [Talker; 2],
    pub order_seed: u64,
    pub profile: QualityProfile,
}

impl SeparatedStreams {
    pub fn position_of(&self, talker: Talker) -> usize {
        if self.origin[0] == talker {
            0
        } else {
            1
        }
    }
}

/// Presentation order is a coin flip keyed by `order_seed`.
pub fn presentation_swapped(order_seed: u64) -> bool {
    rng::splitmix64(order_seed) & 1 == 1
}

/// Produces two streams from the talker sources and the scene noise. The
/// attended talker is not an input.
///
/// * `Oracle`: each stream is its source plus half the noise.
/// * `Degraded`: each stream is its source plus the other source's component
///   orthogonal to it, scaled so the stream's SI-SDR equals the target.
pub fn separate(
    sources: [&AudioSignal; 2],
    noise: &AudioSignal,
    profile: QualityProfile,
    order_seed: u64,
) -> Result<SeparatedStreams> {
    let rate = sources[0].sample_rate_hz();
    if sources[1].sample_rate_hz() != rate || noise.sample_rate_hz() != rate {
        return Err(invalid("sample rates differ"));
    }
    let len = sources[0].len().min(sources[1].len()).min(noise.len());
    let src = [&sources[0].samples()[..len], &sources[1].samples()[..len]];
    let n = &noise.samples()[..len];

    let make = |own: usize| -> Result<AudioSignal> {
        let s = src[own];
        let out: Vec<f64> = match profile {
            QualityProfile::Oracle => s.iter().zip(n).map(|(a, b)| a + 0.5 * b).collect(),
            QualityProfile::Degraded { si_sdr_db } => {
                let other = src[1 - own];
                let ss = dot(s, s);
                if ss == 0.0 {
                    return Err(invalid("cannot degrade a silent source"));
                }
                let proj = dot(other, s) / ss;
                let perp: Vec<f64> = other.iter().zip(s).map(|(o, a)| o - proj * a).collect();
                let pp = dot(&perp, &perp);
                let alpha = if pp > 0.0 { (ss * 10f64.powf(-si_sdr_db / 10.0) / pp).sqrt() } else { 0.0 };
                s.iter().zip(&perp).map(|(a, p)| a + alpha * p).collect()
            }
        };
        AudioSignal::new(out, rate)
    };
    let a = make(0)?;
    let b = make(1)?;
    let (streams, origin) = if presentation_swapped(order_seed) {
        ([b, a], [Talker::B, Talker::A])
    } else {
        ([a, b], [Talker::A, Talker::B])
    };
    Ok(SeparatedStreams { streams, origin, order_seed, profile })
}

/// Index of the stream whose embedding is nearest `target` (Euclidean);
/// ties go to the first presented stream.
pub fn select_stream(target: &SpeakerEmbedding, embeddings: [&SpeakerEmbedding; 2]) -> Result<usize> {
    if embeddings.iter().any(|e| e.dim() != target.dim()) {
        return Err(invalid("embedding dimensions differ"));
    }
    let d0 = target.distance(embeddings[0]);
    let d1 = target.distance(embeddings[1]);
    Ok(usize::from(d1 < d0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            -DB_CAP
        } else {
            DB_CAP
        }
    } else if num == 0.0 {
        -DB_CAP
    } else {
        (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
    }
}

/// `10·log10(‖ref‖² / ‖est − ref‖²)`, estimate first.
pub fn snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(invalid("snr needs equal-length signals"));
    }
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (e - r) * (e - r)).sum();
    Ok(ratio_db(dot(reference, reference), err))
}

/// Scale-invariant SDR of `est` against `reference`, estimate first.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(invalid("si-sdr needs equal-length signals"));
    }
    let rr = dot(reference, reference);
    if rr == 0.0 {
        return Err(invalid("si-sdr reference is silent"));
    }
    let scale = dot(est, reference) / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let s = scale * r;
        target += s * s;
        residual += (e - s) * (e - s);
    }
    Ok(ratio_db(target, residual))
}

/// Cosine similarity, zero if either vector is zero.
pub fn speaker_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid("embedding dimensions differ"));
    }
    let (na, nb) = (dot(a.as_slice(), a.as_slice()).sqrt(), dot(b.as_slice(), b.as_slice()).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMetrics {
    pub snr_db: f64,
    pub si_sdr_db: f64,
    pub wer_pct: f64,
    pub speaker_sim: f64,
}
