//! End-to-end trials: scene → neural recording → separation → intention →
//! stream selection → prompts → answers → scores.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AttentionMode, ExperimentConfig};
use super::corpus::{cluster_corpus, generate_scene, voice_pool, CorpusScene, Split, StreamRecord, Voice};
use super::report::ReportTable;
use super::text::{description_accuracy, wer, Normalizer, TextMetric};
use crate::audio::Talker;
use crate::decoder::{predict_intention, train_predictor, AttentionDecoderModel, TrainReport};
use crate::error::{invalid, Error, Result};
use crate::intention::{
    build_prompt, description_text, draw_query, AnswerBackend, BackendKind, HttpBackend, MockBackend, ModelOutput,
    OracleRecord, StreamContent, StreamInput, Target, Task, TaskQuery,
};
use crate::neural::{encode, EncodingParams, NeuralRecording};
use crate::rng;
use crate::separation::{select_stream, separate, si_sdr, snr, speaker_similarity, SeparatedStreams, SignalMetrics};
use crate::speaker::{embed_speaker, kmeans_fit_traced, ClusterModel, SpeakerEmbedding};

/// Everything derived from the configuration before any trial runs.
pub struct World {
    pub cfg: ExperimentConfig,
    pub pool: Vec<Voice>,
    pub clusters: ClusterModel,
    pub encoding: EncodingParams,
}

/// A scene reduced to what decoding needs; audio is regenerated on demand.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub split: Split,
    pub index: usize,
    pub id: String,
    pub voices: [Voice; 2],
    pub streams: [StreamRecord; 2],
    pub attended: Talker,
    pub snr_db: f64,
    pub embeddings: [SpeakerEmbedding; 2],
    /// Cluster labels of talkers A and B.
    pub labels: [usize; 2],
    pub recording: NeuralRecording,
}

impl SceneData {
    pub fn attended_label(&self) -> usize {
        self.labels[self.attended.index()]
    }

    pub fn attended_embedding(&self) -> &SpeakerEmbedding {
        &self.embeddings[self.attended.index()]
    }
}

impl World {
    pub fn prepare(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = voice_pool(cfg.scene.speakers_per_gender, cfg.scene.seed);
        let corpus = cluster_corpus(cfg.scene.cluster_corpus_size, cfg.scene.seed);
        let embeddings: Vec<SpeakerEmbedding> =
            corpus.iter().map(|v| embed_speaker(&v.identity_spec(), cfg.clusters.dim)).collect::<Result<_>>()?;
        let corpus_id = format!("synthetic-{}x{}", cfg.scene.cluster_corpus_size, cfg.scene.seed);
        let clusters =
            kmeans_fit_traced(&embeddings, cfg.clusters.k, cfg.clusters.seed, cfg.clusters.max_iter, &corpus_id)?.model;
        let encoding = EncodingParams::generate(&cfg.neural, cfg.clusters.dim)?;
        Ok(Self { cfg, pool, clusters, encoding })
    }

    pub fn embed(&self, voice: &Voice) -> Result<SpeakerEmbedding> {
        embed_speaker(&voice.identity_spec(), self.cfg.clusters.dim)
    }

    pub fn scene(&self, split: Split, index: usize) -> Result<CorpusScene> {
        generate_scene(&self.cfg.scene, &self.pool, split, index)
    }

    pub fn reduce(&self, cs: &CorpusScene, split: Split, index: usize) -> Result<SceneData> {
        let embeddings = [self.embed(&cs.voices[0])?, self.embed(&cs.voices[1])?];
        let labels = [self.clusters.assign_label(&embeddings[0])?, self.clusters.assign_label(&embeddings[1])?];
        let recording = encode(&cs.scene, [&embeddings[0], &embeddings[1]], &self.encoding)?;
        Ok(SceneData {
            split,
            index,
            id: cs.scene.id.clone(),
            voices: cs.voices.clone(),
            streams: cs.streams.clone(),
            attended: cs.attended(),
            snr_db: cs.scene.mix.snr_db,
            embeddings,
            labels,
            recording,
        })
    }

    pub fn scene_data(&self, split: Split, index: usize) -> Result<SceneData> {
        let cs = self.scene(split, index)?;
        self.reduce(&cs, split, index)
    }

    pub fn split_data(&self, split: Split, n: usize) -> Result<Vec<SceneData>> {
        (0..n).into_par_iter().map(|i| self.scene_data(split, i)).collect()
    }

    /// Trains `n_restarts` predictors and keeps the lowest final loss.
    pub fn train(&self, data: &[SceneData]) -> Result<(AttentionDecoderModel, TrainReport)> {
        let set: Vec<(NeuralRecording, usize)> =
            data.iter().map(|d| (d.recording.clone(), d.attended_label())).collect();
        let pc = &self.cfg.predictor;
        let mut best: Option<(AttentionDecoderModel, TrainReport)> = None;
        for r in 0..pc.n_restarts {
            let mut tc = pc.train;
            if r > 0 {
                tc.seed = rng::derive(pc.train.seed, &[r as u64]);
            }
            let (model, report) = train_predictor(&set, &[], self.clusters.k(), self.encoding.channels(), &tc)?;
            let loss = |rep: &TrainReport| rep.epoch_losses.last().copied().unwrap_or(rep.initial_loss);
            if best.as_ref().is_none_or(|(_, b)| loss(&report) < loss(b)) {
                best = Some((model, report));
            }
        }
        best.ok_or_else(|| invalid("no predictor trained"))
    }

    /// Presentation-order seed of a scene.
    pub fn order_seed(&self, scene_id: &str) -> u64 {
        rng::derive(self.cfg.separation.order_seed, &[rng::hash_str(scene_id)])
    }

    pub fn separate(&self, cs: &CorpusScene) -> Result<SeparatedStreams> {
        let mix = &cs.scene.mix;
        separate([&mix.source_a, &mix.source_b], &mix.noise, self.cfg.separation.profile, self.order_seed(&cs.scene.id))
    }

    pub fn backend(&self) -> Result<Box<dyn AnswerBackend>> {
        Ok(match self.cfg.backend.kind {
            BackendKind::Mock => Box::new(MockBackend),
            BackendKind::Http => Box::new(HttpBackend::new(self.cfg.backend.clone())?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueLabels {
    pub attended: usize,
    /// Labels of the presented streams, in presentation order.
    pub spk1: usize,
    pub spk2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnswer {
    pub query: TaskQuery,
    /// References of the other talker, for closeness scoring.
    pub other_references: Vec<String>,
    pub model_output: ModelOutput,
    /// Talker picked by the nearest-centroid rule.
    pub selected_stream: Talker,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub scene: u64,
    pub order: u64,
    pub eval: u64,
    pub predictor: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scene_id: String,
    pub system: AttentionMode,
    pub true_labels: TrueLabels,
    pub predicted_label: usize,
    pub attended_position: usize,
    pub selected_position: usize,
    pub selection_correct: bool,
    pub label_correct: bool,
    pub answers: Vec<TaskAnswer>,
    pub signal: SignalMetrics,
    pub seeds: TrialSeeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    /// Wall-clock time; the only field that differs between identical runs.
    pub timestamp: String,
}

fn now_stamp() -> String {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

fn target_talker(attended: Talker, target: Target) -> Talker {
    match target {
        Target::Foreground => attended,
        Target::Background => attended.other(),
    }
}

fn references(task: Task, record: &StreamRecord, qa_index: Option<usize>) -> Vec<String> {
    match task {
        Task::Description => vec![description_text(record)],
        Task::Transcription => vec![record.transcript_text()],
        Task::Summarization => record.summaries.clone(),
        Task::FreeQa => qa_index.and_then(|i| record.qa.get(i)).map(|p| vec![p.answer.clone()]).unwrap_or_default(),
    }
}

fn bool_pct(b: bool) -> f64 {
    if b {
        100.0
    } else {
        0.0
    }
}

/// Scores an answer against its query's references; closeness compares
/// with the other talker's references under the task's headline metric.
pub fn score_answer(
    norm: &Normalizer,
    task: Task,
    answer: &str,
    target: &StreamRecord,
    references: &[String],
    other_references: &[String],
) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    if task == Task::Description {
        let d = description_accuracy(answer, &target.attributes);
        m.insert("gender".into(), bool_pct(d.gender));
        m.insert("pitch".into(), bool_pct(d.pitch));
        m.insert("tempo".into(), bool_pct(d.tempo));
        return Ok(m);
    }
    let hyp = norm.tokens(answer);
    let tok = |refs: &[String]| -> Vec<Vec<String>> {
        refs.iter().map(|r| norm.tokens(r)).filter(|t| !t.is_empty()).collect()
    };
    let (refs, others) = (tok(references), tok(other_references));
    let (metrics, headline): (&[TextMetric], TextMetric) = match task {
        Task::Transcription => (&[TextMetric::Wer], TextMetric::Wer),
        _ => (&[TextMetric::Bleu, TextMetric::Meteor, TextMetric::RougeL], TextMetric::RougeL),
    };
    for metric in metrics {
        m.insert(metric.as_str().into(), metric.score(&hyp, &refs)?);
    }
    if !others.is_empty() {
        let t = headline.score(&hyp, &refs)?;
        let o = headline.score(&hyp, &others)?;
        let closer = if headline.lower_is_better() { t < o } else { t > o };
        m.insert(format!("closer_{}", headline.as_str()), bool_pct(closer));
    }
    Ok(m)
}

/// Intention vector and its source for one system.
fn intention_for(
    mode: AttentionMode,
    world: &World,
    model: Option<&AttentionDecoderModel>,
    data: &SceneData,
    presented: [&SpeakerEmbedding; 2],
) -> Result<SpeakerEmbedding> {
    match mode {
        AttentionMode::Oracle => Ok(data.attended_embedding().clone()),
        AttentionMode::Random => {
            let mut r = rng::rng_at(world.cfg.eval.seed, &[0x2A4D, rng::hash_str(&data.id)]);
            Ok(presented[usize::from(r.random::<bool>())].clone())
        }
        AttentionMode::Decoded => {
            let model = model.ok_or_else(|| invalid("decoded attention needs a trained predictor"))?;
            Ok(predict_intention(model, &world.clusters, &data.recording)?.centroid)
        }
    }
}

/// All systems for one scene; audio is synthesized once and dropped.
pub fn evaluate_scene(
    world: &World,
    model: Option<&AttentionDecoderModel>,
    backend: &dyn AnswerBackend,
    data: &SceneData,
    systems: &[AttentionMode],
) -> Vec<TrialRecord> {
    let prepared = world.scene(data.split, data.index).and_then(|cs| {
        let sep = world.separate(&cs)?;
        Ok((cs, sep))
    });
    systems
        .iter()
        .map(|&mode| {
            let outcome = match &prepared {
                Ok((cs, sep)) => evaluate_system(world, model, backend, data, cs, sep, mode),
                Err(e) => Err(invalid(e.to_string())),
            };
            outcome.unwrap_or_else(|e| failed_record(world, data, mode, e))
        })
        .collect()
}

fn failed_record(world: &World, data: &SceneData, mode: AttentionMode, e: Error) -> TrialRecord {
    TrialRecord {
        scene_id: data.id.clone(),
        system: mode,
        true_labels: TrueLabels { attended: data.attended_label(), spk1: data.labels[0], spk2: data.labels[1] },
        predicted_label: 0,
        attended_position: 0,
        selected_position: 0,
        selection_correct: false,
        label_correct: false,
        answers: Vec::new(),
        signal: SignalMetrics { snr_db: 0.0, si_sdr_db: 0.0, wer_pct: 0.0, speaker_sim: 0.0 },
        seeds: seeds(world, data),
        failed: Some(e.to_string()),
        timestamp: now_stamp(),
    }
}

fn seeds(world: &World, data: &SceneData) -> TrialSeeds {
    TrialSeeds {
        scene: world.cfg.scene.seed,
        order: world.order_seed(&data.id),
        eval: world.cfg.eval.seed,
        predictor: world.cfg.predictor.train.seed,
    }
}

fn evaluate_system(
    world: &World,
    model: Option<&AttentionDecoderModel>,
    backend: &dyn AnswerBackend,
    data: &SceneData,
    cs: &CorpusScene,
    sep: &SeparatedStreams,
    mode: AttentionMode,
) -> Result<TrialRecord> {
    let norm = Normalizer { boilerplate: world.cfg.eval.boilerplate.clone() };
    let origin = sep.origin;
    let presented = [&data.embeddings[origin[0].index()], &data.embeddings[origin[1].index()]];
    let attended = data.attended;
    let attended_position = sep.position_of(attended);

    let intention = intention_for(mode, world, model, data, presented)?;
    let predicted_label = world.clusters.assign_label(&intention)?;
    let selected_position = select_stream(&intention, presented)?;
    let selected = origin[selected_position];

    let reference = cs.scene.mix.source(attended).samples();
    let chosen = sep.streams[selected_position].samples();
    let signal = SignalMetrics {
        snr_db: snr(chosen, reference)?,
        si_sdr_db: si_sdr(chosen, reference)?,
        wer_pct: wer(&data.streams[selected.index()].transcript, &data.streams[attended.index()].transcript)?,
        speaker_sim: speaker_similarity(&data.embeddings[selected.index()], data.attended_embedding())?,
    };

    let inputs: Vec<StreamInput> = (0..2)
        .map(|i| {
            let content = match world.cfg.backend.kind {
                BackendKind::Mock => StreamContent::Transcript(data.streams[origin[i].index()].transcript_text()),
                BackendKind::Http => StreamContent::Attachment(format!("{}/stream{}.wav", data.id, i + 1)),
            };
            StreamInput { content, embedding: presented[i].clone() }
        })
        .collect();
    let oracle = OracleRecord { streams: [&data.streams[origin[0].index()], &data.streams[origin[1].index()]] };

    let mut answers = Vec::new();
    for (ti, &task) in world.cfg.eval.tasks.iter().enumerate() {
        for (gi, &target) in world.cfg.eval.targets.iter().enumerate() {
            let talker = target_talker(attended, target);
            let record = &data.streams[talker.index()];
            let mut r = rng::rng_at(world.cfg.eval.seed, &[0x0A, rng::hash_str(&data.id), ti as u64, gi as u64]);
            let query = draw_query(task, target, record, &mut r)?;
            let other_references = references(task, &data.streams[talker.other().index()], query.qa_index);
            let bundle = build_prompt(&query, [&inputs[0], &inputs[1]], &intention, &world.clusters)?;
            let output = backend.respond(&bundle, &oracle)?;
            let metrics = score_answer(&norm, task, &output.answer_text, record, &query.references, &other_references)?;
            answers.push(TaskAnswer {
                query,
                other_references,
                model_output: output,
                selected_stream: selected,
                metrics,
            });
        }
    }

    Ok(TrialRecord {
        scene_id: data.id.clone(),
        system: mode,
        true_labels: TrueLabels {
            attended: data.attended_label(),
            spk1: data.labels[origin[0].index()],
            spk2: data.labels[origin[1].index()],
        },
        predicted_label,
        attended_position,
        selected_position,
        selection_correct: selected_position == attended_position,
        label_correct: predicted_label == data.attended_label(),
        answers,
        signal,
        seeds: seeds(world, data),
        failed: None,
        timestamp: now_stamp(),
    })
}

/// Runs every system over the test scenes; order is scene-major, then
/// system in configuration order.
pub fn evaluate(world: &World, model: Option<&AttentionDecoderModel>, test: &[SceneData]) -> Result<Vec<TrialRecord>> {
    let backend = world.backend()?;
    let systems = &world.cfg.eval.systems;
    let per_scene: Vec<Vec<TrialRecord>> =
        test.par_iter().map(|d| evaluate_scene(world, model, backend.as_ref(), d, systems)).collect();
    Ok(per_scene.into_iter().flatten().collect())
}

/// Appends records as JSON lines through one writer.
pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

/// Number of test scenes the evaluation covers.
pub fn n_eval_scenes(cfg: &ExperimentConfig) -> usize {
    if cfg.eval.n_trials == 0 {
        cfg.scene.n_test
    } else {
        cfg.eval.n_trials
    }
}

pub struct ExperimentOutcome {
    pub records: Vec<TrialRecord>,
    pub report: ReportTable,
    pub train_report: Option<TrainReport>,
    pub failures: usize,
}

/// Full pipeline; writes `trials.jsonl`, `report.csv`, `config.json` and,
/// when a predictor is trained, `train_report.json` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("config.json"))?;
    let world = World::prepare(cfg.clone())?;
    let (model, train_report) = if cfg.eval.systems.contains(&AttentionMode::Decoded) {
        let train = world.split_data(Split::Train, cfg.scene.n_train)?;
        let (m, r) = world.train(&train)?;
        std::fs::write(out_dir.join("train_report.json"), serde_json::to_string_pretty(&r)?)?;
        (Some(m), Some(r))
    } else {
        (None, None)
    };
    let test = world.split_data(Split::Test, n_eval_scenes(cfg))?;
    let records = evaluate(&world, model.as_ref(), &test)?;
    write_records(&out_dir.join("trials.jsonl"), &records)?;
    let report = ReportTable::from_records(&records);
    report.write_csv(&out_dir.join("report.csv"))?;
    let failures = records.iter().filter(|r| r.failed.is_some()).count();
    Ok(ExperimentOutcome { records, report, train_report, failures })
}

/// Clears the timestamp so records from separate runs can be compared.
pub fn without_timestamp(r: &TrialRecord) -> TrialRecord {
    TrialRecord { timestamp: String::new(), ..r.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{Gender, Level, SpeakerAttributes};
    use crate::eval::corpus::{qa_for, summaries_for};

    fn rec(topic: &str, words: &str) -> StreamRecord {
        let transcript: Vec<String> = words.split_whitespace().map(String::from).collect();
        StreamRecord {
            voice_id: "v".into(),
            attributes: SpeakerAttributes { gender: Gender::Male, pitch: Level::Low, tempo: Level::High },
            topic: topic.into(),
            summaries: summaries_for(topic),
            qa: qa_for(topic, &transcript),
            transcript,
        }
    }

    #[test]
    fn exact_answers_score_perfectly() {
        let n = Normalizer::default();
        let t = rec("music", "piano song tune");
        let o = rec("travel", "train map");
        let m = score_answer(
            &n,
            Task::Transcription,
            "piano song tune",
            &t,
            &[t.transcript_text()],
            &[o.transcript_text()],
        )
        .unwrap();
        assert_eq!(m["wer"], 0.0);
        assert_eq!(m["closer_wer"], 100.0);
        let m = score_answer(&n, Task::Summarization, &t.summaries[0], &t, &t.summaries, &o.summaries).unwrap();
        assert!((m["rouge_l"] - 100.0).abs() < 1e-9);
        assert!((m["bleu"] - 100.0).abs() < 1e-9);
        let m = score_answer(&n, Task::Description, &description_text(&t), &t, &[], &[]).unwrap();
        assert_eq!((m["gender"], m["pitch"], m["tempo"]), (100.0, 100.0, 100.0));
    }

    #[test]
    fn wrong_stream_is_not_closer() {
        let n = Normalizer::default();
        let t = rec("music", "piano song tune");
        let o = rec("travel", "train map");
        let m = score_answer(&n, Task::Summarization, &o.summaries[0], &t, &t.summaries, &o.summaries).unwrap();
        assert_eq!(m["closer_rouge_l"], 0.0);
    }
}
