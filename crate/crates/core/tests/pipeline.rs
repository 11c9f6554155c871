use aad_core::eval::config::{AttentionMode, ExperimentConfig};
use aad_core::eval::corpus::Split;
use aad_core::eval::pipeline::{evaluate, evaluate_scene, World};
use aad_core::eval::report::ReportTable;
use aad_core::intention::{AnswerBackend, ModelOutput, OracleRecord, PromptBundle, Task};
use aad_core::{Error, Result};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.n_train = 4;
    cfg.scene.n_test = 6;
    cfg.scene.duration_s = 3.0;
    cfg.predictor.train.epochs = 1;
    cfg.predictor.train.hidden = 6;
    cfg.predictor.train.fc_hidden = 6;
    cfg
}

struct Broken;

impl AnswerBackend for Broken {
    fn respond(&self, _: &PromptBundle, _: &OracleRecord<'_>) -> Result<ModelOutput> {
        Err(Error::Transport("connection refused".into()))
    }
}

#[test]
fn failing_backend_marks_trials_and_continues() {
    let world = World::prepare(small()).unwrap();
    let data = world.split_data(Split::Test, 2).unwrap();
    for d in &data {
        let recs = evaluate_scene(&world, None, &Broken, d, &[AttentionMode::Oracle, AttentionMode::Random]);
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.failed.as_deref().is_some_and(|m| m.contains("connection refused"))));
    }
}

#[test]
fn oracle_answers_track_the_declared_target() {
    let mut cfg = small();
    cfg.eval.systems = vec![AttentionMode::Oracle];
    let world = World::prepare(cfg).unwrap();
    let data = world.split_data(Split::Test, 6).unwrap();
    let records = evaluate(&world, None, &data).unwrap();
    let table = ReportTable::from_records(&records);
    for target in ["foreground", "background"] {
        let w = table.get(AttentionMode::Oracle, Task::Transcription.as_str(), target, "wer").unwrap();
        assert_eq!((w.mean, w.n_trials), (0.0, 6));
        let c = table.get(AttentionMode::Oracle, Task::Transcription.as_str(), target, "closer_wer").unwrap();
        assert_eq!(c.mean, 100.0);
    }
    let sel = table.get(AttentionMode::Oracle, "selection", "-", "selection_accuracy").unwrap();
    assert_eq!(sel.mean, 100.0);
    for r in &records {
        for a in &r.answers {
            assert_eq!(a.model_output.parsed_cot.map(|c| c.attention), Some(r.true_labels.attended));
        }
    }
}

#[test]
fn report_is_invariant_to_record_order() {
    let mut cfg = small();
    cfg.eval.systems = vec![AttentionMode::Random, AttentionMode::Oracle];
    let world = World::prepare(cfg).unwrap();
    let data = world.split_data(Split::Test, 6).unwrap();
    let mut records = evaluate(&world, None, &data).unwrap();
    let forward = ReportTable::from_records(&records).to_csv();
    records.reverse();
    records.swap(1, 4);
    assert_eq!(ReportTable::from_records(&records).to_csv(), forward);
}

#[test]
fn decoded_mode_requires_a_model() {
    let mut cfg = small();
    cfg.eval.systems = vec![AttentionMode::Decoded];
    let world = World::prepare(cfg).unwrap();
    let data = world.split_data(Split::Test, 1).unwrap();
    let recs = evaluate(&world, None, &data).unwrap();
    assert!(recs[0].failed.is_some());
}

#[test]
fn scenes_are_pure_functions_of_config() {
    let world = World::prepare(small()).unwrap();
    let a = world.scene_data(Split::Test, 3).unwrap();
    let b = world.scene_data(Split::Test, 3).unwrap();
    assert_eq!(a.recording, b.recording);
    assert_eq!(a.streams, b.streams);
    assert_ne!(world.scene_data(Split::Train, 3).unwrap().id, a.id);
}
