//! Attended-stream decoding comparison: mixture, separation with random or
//! reconstruction-based choice, centroid selection, and oracle attention.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusScene, Split};
use super::pipeline::{SceneData, World};
use super::text::wer;
use crate::audio::{envelope, mel_features, word_timeline, AudioSignal, Talker};
use crate::decoder::{
    fit_reconstruction, select_by_reconstruction, select_for_recording, AttentionDecoderModel, ReconstructionDecoder,
    SelectionTrial,
};
use crate::error::{invalid, Result};
use crate::rng;
use crate::separation::{presentation_swapped, si_sdr, snr, speaker_similarity, SignalMetrics};
use crate::speaker::SpeakerEmbedding;

pub const MEL_BANDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeSystem {
    /// The unseparated mixture.
    Mixture,
    BssRandom,
    BssEnvelopeRecon,
    BssMelRecon,
    CentroidDecoded,
    OracleAttention,
}

impl DecodeSystem {
    pub const ALL: [DecodeSystem; 6] = [
        DecodeSystem::Mixture,
        DecodeSystem::BssRandom,
        DecodeSystem::BssEnvelopeRecon,
        DecodeSystem::BssMelRecon,
        DecodeSystem::CentroidDecoded,
        DecodeSystem::OracleAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecodeSystem::Mixture => "mixture",
            DecodeSystem::BssRandom => "bss_random",
            DecodeSystem::BssEnvelopeRecon => "bss_envelope_recon",
            DecodeSystem::BssMelRecon => "bss_mel_recon",
            DecodeSystem::CentroidDecoded => "centroid_decoded",
            DecodeSystem::OracleAttention => "oracle_attention",
        }
    }
}

/// One system on one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrial {
    pub scene_id: String,
    pub system: DecodeSystem,
    pub true_label: usize,
    /// Only the centroid system predicts a label.
    pub predicted_label: Option<usize>,
    pub attended_position: usize,
    /// `None` for the mixture, which selects nothing.
    pub selected_position: Option<usize>,
    pub signal: SignalMetrics,
}

impl DecodeTrial {
    pub fn correct(&self) -> Option<bool> {
        self.selected_position.map(|p| p == self.attended_position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRow {
    pub system: DecodeSystem,
    pub accuracy_pct: Option<f64>,
    pub label_accuracy_pct: Option<f64>,
    pub snr_db: f64,
    pub si_sdr_db: f64,
    pub wer_pct: f64,
    pub speaker_sim: f64,
    pub n_trials: usize,
}

/// Envelope and mel ridge decoders trained on the attended source.
pub struct ReconstructionBaselines {
    pub envelope: ReconstructionDecoder,
    pub mel: ReconstructionDecoder,
}

fn frame_ms(world: &World) -> f64 {
    1000.0 / world.cfg.neural.frame_rate_hz
}

fn envelope_matrix(x: &AudioSignal, frame_ms: f64) -> DMatrix<f64> {
    let e = envelope(x, frame_ms);
    DMatrix::from_column_slice(e.len(), 1, &e)
}

/// Fits both ridge decoders on the first `ridge_train_scenes` of `train`.
pub fn fit_baselines(world: &World, train: &[SceneData]) -> Result<ReconstructionBaselines> {
    let pc = &world.cfg.predictor;
    let n = if pc.ridge_train_scenes == 0 { train.len() } else { pc.ridge_train_scenes.min(train.len()) };
    let fm = frame_ms(world);
    let targets: Vec<(DMatrix<f64>, DMatrix<f64>)> = train[..n]
        .par_iter()
        .map(|d| {
            let cs = world.scene(d.split, d.index)?;
            let src = cs.scene.mix.source(d.attended);
            Ok((envelope_matrix(src, fm), mel_features(src, MEL_BANDS, fm)?))
        })
        .collect::<Result<_>>()?;
    let lags: Vec<usize> = (0..=pc.ridge_max_lag_frames).collect();
    let env_set: Vec<_> = train[..n].iter().zip(&targets).map(|(d, t)| (d.recording.clone(), t.0.clone())).collect();
    let envelope = fit_reconstruction(&env_set, &lags, pc.ridge_lambda)?;
    drop(env_set);
    let mel_set: Vec<_> = train[..n].iter().zip(targets).map(|(d, t)| (d.recording.clone(), t.1)).collect();
    let mel = fit_reconstruction(&mel_set, &lags, pc.ridge_lambda)?;
    Ok(ReconstructionBaselines { envelope, mel })
}

/// Both talkers' words merged by onset, as a stand-in transcript of the
/// mixture.
pub fn mixture_transcript(cs: &CorpusScene) -> Vec<String> {
    let d = cs.scene.mix.mixture.duration_s();
    let mut timed: Vec<(f64, usize, String)> = Vec::new();
    for (k, talker) in [Talker::A, Talker::B].into_iter().enumerate() {
        let n = cs.scene.transcript(talker).len();
        for w in word_timeline(cs.scene.spec(talker), d).into_iter().take(n) {
            timed.push((w.onset_s, k, w.word));
        }
    }
    timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    timed.into_iter().map(|t| t.2).collect()
}

fn mean_embedding(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> SpeakerEmbedding {
    SpeakerEmbedding(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Every system on one scene.
pub fn decode_scene(
    world: &World,
    model: &AttentionDecoderModel,
    baselines: &ReconstructionBaselines,
    data: &SceneData,
) -> Result<Vec<DecodeTrial>> {
    let cs = world.scene(data.split, data.index)?;
    let sep = world.separate(&cs)?;
    let origin = sep.origin;
    let attended = data.attended;
    let attended_position = sep.position_of(attended);
    let reference = cs.scene.mix.source(attended).samples();
    let att_words = &data.streams[attended.index()].transcript;
    let true_label = data.attended_label();
    let presented = [&data.embeddings[origin[0].index()], &data.embeddings[origin[1].index()]];

    let stream_metrics = |pos: usize| -> Result<SignalMetrics> {
        let talker = origin[pos];
        let est = sep.streams[pos].samples();
        Ok(SignalMetrics {
            snr_db: snr(est, reference)?,
            si_sdr_db: si_sdr(est, reference)?,
            wer_pct: wer(&data.streams[talker.index()].transcript, att_words)?,
            speaker_sim: speaker_similarity(&data.embeddings[talker.index()], data.attended_embedding())?,
        })
    };
    let trial = |system, predicted_label, selected: usize| -> Result<DecodeTrial> {
        Ok(DecodeTrial {
            scene_id: data.id.clone(),
            system,
            true_label,
            predicted_label,
            attended_position,
            selected_position: Some(selected),
            signal: stream_metrics(selected)?,
        })
    };

    let mut out = Vec::with_capacity(DecodeSystem::ALL.len());
    let mix = cs.scene.mix.mixture.samples();
    out.push(DecodeTrial {
        scene_id: data.id.clone(),
        system: DecodeSystem::Mixture,
        true_label,
        predicted_label: None,
        attended_position,
        selected_position: None,
        signal: SignalMetrics {
            snr_db: snr(mix, reference)?,
            si_sdr_db: si_sdr(mix, reference)?,
            wer_pct: wer(&mixture_transcript(&cs), att_words)?,
            speaker_sim: speaker_similarity(
                &mean_embedding(&data.embeddings[0], &data.embeddings[1]),
                data.attended_embedding(),
            )?,
        },
    });

    let mut r = rng::rng_at(world.cfg.eval.seed, &[0xB55, rng::hash_str(&data.id)]);
    out.push(trial(DecodeSystem::BssRandom, None, usize::from(r.random::<bool>()))?);

    let fm = frame_ms(world);
    let env = [envelope_matrix(&sep.streams[0], fm), envelope_matrix(&sep.streams[1], fm)];
    let pick = select_by_reconstruction(&baselines.envelope, &data.recording, [&env[0], &env[1]])?;
    out.push(trial(DecodeSystem::BssEnvelopeRecon, None, pick.chosen)?);

    let mel = [mel_features(&sep.streams[0], MEL_BANDS, fm)?, mel_features(&sep.streams[1], MEL_BANDS, fm)?];
    let pick = select_by_reconstruction(&baselines.mel, &data.recording, [&mel[0], &mel[1]])?;
    out.push(trial(DecodeSystem::BssMelRecon, None, pick.chosen)?);

    let (label, chosen) = select_for_recording(model, &world.clusters, &data.recording, presented)?;
    out.push(trial(DecodeSystem::CentroidDecoded, Some(label), chosen)?);

    out.push(trial(DecodeSystem::OracleAttention, Some(true_label), attended_position)?);
    Ok(out)
}

pub fn decode_all(
    world: &World,
    model: &AttentionDecoderModel,
    baselines: &ReconstructionBaselines,
    test: &[SceneData],
) -> Result<Vec<DecodeTrial>> {
    let per: Vec<Vec<DecodeTrial>> =
        test.par_iter().map(|d| decode_scene(world, model, baselines, d)).collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn summarize(trials: &[DecodeTrial]) -> Vec<DecodeRow> {
    DecodeSystem::ALL
        .iter()
        .filter_map(|&system| {
            let ts: Vec<&DecodeTrial> = trials.iter().filter(|t| t.system == system).collect();
            if ts.is_empty() {
                return None;
            }
            let n = ts.len() as f64;
            let mean = |f: &dyn Fn(&DecodeTrial) -> f64| ts.iter().map(|t| f(t)).sum::<f64>() / n;
            let rate = |hits: Vec<bool>| 100.0 * hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
            let sel: Vec<bool> = ts.iter().filter_map(|t| t.correct()).collect();
            let lab: Vec<bool> = ts.iter().filter_map(|t| t.predicted_label.map(|l| l == t.true_label)).collect();
            Some(DecodeRow {
                system,
                accuracy_pct: (!sel.is_empty()).then(|| rate(sel)),
                label_accuracy_pct: (!lab.is_empty()).then(|| rate(lab)),
                snr_db: mean(&|t| t.signal.snr_db),
                si_sdr_db: mean(&|t| t.signal.si_sdr_db),
                wer_pct: mean(&|t| t.signal.wer_pct),
                speaker_sim: mean(&|t| t.signal.speaker_sim),
                n_trials: ts.len(),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

pub fn write_decode_csv(path: &Path, rows: &[DecodeRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "system,accuracy_pct,label_accuracy_pct,snr_db,si_sdr_db,wer_pct,speaker_sim,n_trials")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{:.3},{:.3},{:.2},{:.4},{}",
            r.system.as_str(),
            opt(r.accuracy_pct),
            opt(r.label_accuracy_pct),
            r.snr_db,
            r.si_sdr_db,
            r.wer_pct,
            r.speaker_sim,
            r.n_trials
        )?;
    }
    Ok(())
}

/// Sweep trials drawn from the dedicated sweep split.
pub fn sweep_trials(world: &World, n: usize) -> Result<Vec<SelectionTrial>> {
    if n == 0 {
        return Err(invalid("sweep needs at least one trial"));
    }
    let data = world.split_data(Split::Sweep, n)?;
    Ok(data
        .into_iter()
        .map(|d| {
            let swapped = presentation_swapped(world.order_seed(&d.id));
            let att = d.attended.index();
            let attended_position = if swapped { 1 - att } else { att };
            let [a, b] = d.embeddings;
            let stream_embeddings = if swapped { [b, a] } else { [a, b] };
            SelectionTrial { recording: d.recording, stream_embeddings, attended_position }
        })
        .collect())
}
