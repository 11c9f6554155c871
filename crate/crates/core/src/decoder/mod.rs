//! Attended-speaker decoding from neural recordings: the BiLSTM cluster
//! classifier and the stimulus-reconstruction baselines.

mod lstm;
mod ridge;
mod sweep;
mod train;

pub use lstm::{AttentionDecoderModel, Dims, Layout, DEFAULT_FC_HIDDEN, DEFAULT_HIDDEN};
pub use ridge::{
    default_lags, fit_reconstruction, lagged_design, pearson, ridge_solve, select_by_reconstruction,
    ReconstructionChoice, ReconstructionDecoder, DEFAULT_LAMBDA,
};
pub use sweep::{centered_window, select_for_recording, window_sweep, write_sweep_csv, SelectionTrial, SweepRow};
pub use train::{accuracy, predict_intention, train_predictor, Adam, Intention, TrainConfig, TrainReport};
