use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::AttentionDecoderModel;
use super::train::predict_intention;
use crate::error::{invalid, Result};
use crate::neural::NeuralRecording;
use crate::separation::select_stream;
use crate::speaker::{ClusterModel, SpeakerEmbedding};

/// One test trial for stream selection.
#[derive(Debug, Clone)]
pub struct SelectionTrial {
    pub recording: NeuralRecording,
    /// Stream embeddings in presentation order.
    pub stream_embeddings: [SpeakerEmbedding; 2],
    /// Presentation index of the attended stream.
    pub attended_position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window_s: f64,
    pub accuracy_pct: f64,
    pub n_trials: usize,
}

/// Centred window: starts at the midpoint minus half the window, clamped to
/// the recording.
pub fn centered_window(z: &NeuralRecording, window_s: f64) -> Result<NeuralRecording> {
    let len = (window_s * z.frame_rate_hz()).round() as usize;
    if len == 0 || len > z.frames() {
        return Err(invalid(format!("window of {window_s} s does not fit a {} s recording", z.duration_s())));
    }
    z.slice_frames((z.frames() - len) / 2, len)
}

/// Predicted cluster, then nearest-candidate stream choice. Returns
/// (label, chosen presentation index).
pub fn select_for_recording(
    model: &AttentionDecoderModel,
    clusters: &ClusterModel,
    z: &NeuralRecording,
    stream_embeddings: [&SpeakerEmbedding; 2],
) -> Result<(usize, usize)> {
    let intention = predict_intention(model, clusters, z)?;
    let chosen = select_stream(&intention.centroid, stream_embeddings)?;
    Ok((intention.label, chosen))
}

pub fn window_sweep(
    model: &AttentionDecoderModel,
    clusters: &ClusterModel,
    trials: &[SelectionTrial],
    windows_s: &[f64],
) -> Result<Vec<SweepRow>> {
    windows_s
        .iter()
        .map(|&w| {
            let hits: Vec<bool> = trials
                .par_iter()
                .map(|trial| {
                    let z = centered_window(&trial.recording, w)?;
                    let (_, chosen) = select_for_recording(
                        model,
                        clusters,
                        &z,
                        [&trial.stream_embeddings[0], &trial.stream_embeddings[1]],
                    )?;
                    Ok(chosen == trial.attended_position)
                })
                .collect::<Result<_>>()?;
            let n = hits.len();
            let correct = hits.iter().filter(|h| **h).count();
            Ok(SweepRow {
                window_s: w,
                accuracy_pct: if n == 0 { 0.0 } else { 100.0 * correct as f64 / n as f64 },
                n_trials: n,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "window_s,accuracy_pct,n_trials")?;
    for r in rows {
        writeln!(f, "{},{:.2},{}", r.window_s, r.accuracy_pct, r.n_trials)?;
    }
    Ok(())
}
