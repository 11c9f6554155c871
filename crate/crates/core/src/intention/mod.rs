//! Prompt assembly around the decoded intention, chain-of-thought prefix
//! grammar, and answer backends (deterministic mock and HTTP chat endpoint).

mod http;

use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::audio::{pitch_class, Gender};
use crate::error::{invalid, Error, Result};
use crate::eval::corpus::StreamRecord;
use crate::rng;
use crate::separation::select_stream;
use crate::speaker::{implied_f0_hz, ClusterModel, SpeakerEmbedding};

pub use http::{BackendConfig, BackendKind, HttpBackend};

pub const SYSTEM_TEXT: &str = "You are a helpful assistant.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Description,
    Transcription,
    Summarization,
    FreeQa,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Description, Task::Transcription, Task::Summarization, Task::FreeQa];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Description => "description",
            Task::Transcription => "transcription",
            Task::Summarization => "summarization",
            Task::FreeQa => "free_qa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Task::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| invalid(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Foreground,
    Background,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Foreground, Target::Background];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Foreground => "foreground",
            Target::Background => "background",
        }
    }
}

/// Eight question templates per (task, target). Free-QA templates are
/// lead-ins placed before the scripted question.
pub fn question_pool(task: Task, target: Target) -> [&'static str; 8] {
    use Target::*;
    use Task::*;
    match (task, target) {
        (Description, Foreground) => [
            "Describe the attended speaker.",
            "Please write a description of the attended speaker.",
            "Can you identify the person the subject is listening to?",
            "Who is the listener focusing on? Describe their voice.",
            "What does the attended speaker sound like?",
            "Characterize the voice of the speaker being attended to.",
            "Give a short description of the talker the listener follows.",
            "How would you describe the voice the listener is paying attention to?",
        ],
        (Description, Background) => [
            "Describe the background speaker.",
            "Please write a description of the ignored speaker.",
            "Can you identify the person the subject is not listening to?",
            "Who is the listener tuning out? Describe their voice.",
            "What does the background speaker sound like?",
            "Characterize the voice of the speaker being ignored.",
            "Give a short description of the talker the listener ignores.",
            "How would you describe the voice the listener is not attending to?",
        ],
        (Transcription, Foreground) => [
            "Transcribe the attended speech.",
            "What exactly does the attended speaker say?",
            "Please write down the words of the speaker the listener focuses on.",
            "Provide a transcript of the attended speaker.",
            "Can you transcribe what the subject is listening to?",
            "Write out the speech of the foreground talker.",
            "What words does the attended speaker say?",
            "Give a verbatim transcription of the attended talker.",
        ],
        (Transcription, Background) => [
            "Transcribe the background speech.",
            "What exactly does the background speaker say?",
            "Please write down the words of the speaker being ignored.",
            "Provide a transcript of the unattended speaker.",
            "Can you transcribe what the subject is tuning out?",
            "Write out the speech of the background talker.",
            "What words does the ignored speaker say?",
            "Give a verbatim transcription of the unattended talker.",
        ],
        (Summarization, Foreground) => [
            "What is the attended speaker talking about?",
            "Can you summarize the speech of the speaker being attended to?",
            "What topic is the attended speaker discussing?",
            "Summarize what the listener is focusing on.",
            "Give a one-sentence summary of the attended speech.",
            "What is the gist of the attended talker's speech?",
            "Briefly, what does the foreground speaker discuss?",
            "What subject does the attended speaker cover?",
        ],
        (Summarization, Background) => [
            "What is the background speaker talking about?",
            "Can you summarize the speech of the speaker being ignored?",
            "What topic is the background speaker discussing?",
            "Summarize what the listener is tuning out.",
            "Give a one-sentence summary of the background speech.",
            "What is the gist of the ignored talker's speech?",
            "Briefly, what does the background speaker discuss?",
            "What subject does the unattended speaker cover?",
        ],
        (FreeQa, Foreground) => [
            "About the attended speaker:",
            "Regarding the speaker the listener focuses on:",
            "Answer about the attended speech.",
            "Considering only the attended talker:",
            "For the speaker being attended to:",
            "Based on the attended speech:",
            "Thinking about the foreground speaker:",
            "Using what the attended speaker says:",
        ],
        (FreeQa, Background) => [
            "About the background speaker:",
            "Regarding the speaker the listener ignores:",
            "Answer about the background speech.",
            "Considering only the ignored talker:",
            "For the speaker being ignored:",
            "Based on the background speech:",
            "Thinking about the unattended speaker:",
            "Using what the background speaker says:",
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskQuery {
    pub task: Task,
    pub target: Target,
    pub question_text: String,
    /// References for the declared target.
    pub references: Vec<String>,
    /// Scripted pair used for free-QA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_index: Option<usize>,
}

pub fn description_text(record: &StreamRecord) -> String {
    let a = record.attributes;
    format!("A {} speaker with {} pitch and {} tempo.", a.gender.as_str(), a.pitch.as_str(), a.tempo.as_str())
}

/// Draws a question for `task` about `target`, whose ground truth is
/// `record`.
pub fn draw_query(task: Task, target: Target, record: &StreamRecord, r: &mut rng::Rng) -> Result<TaskQuery> {
    let lead = *question_pool(task, target).choose(r).unwrap();
    let query = match task {
        Task::Description => TaskQuery {
            task,
            target,
            question_text: lead.into(),
            references: vec![description_text(record)],
            qa_index: None,
        },
        Task::Transcription => TaskQuery {
            task,
            target,
            question_text: lead.into(),
            references: vec![record.transcript_text()],
            qa_index: None,
        },
        Task::Summarization => {
            TaskQuery { task, target, question_text: lead.into(), references: record.summaries.clone(), qa_index: None }
        }
        Task::FreeQa => {
            if record.qa.is_empty() {
                return Err(invalid("stream has no scripted question/answer pairs"));
            }
            let i = rand::Rng::random_range(r, 0..record.qa.len());
            TaskQuery {
                task,
                target,
                question_text: format!("{lead} {}", record.qa[i].question),
                references: vec![record.qa[i].answer.clone()],
                qa_index: Some(i),
            }
        }
    };
    Ok(query)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CotLabels {
    pub attention: usize,
    pub spk1: usize,
    pub spk2: usize,
}

pub fn build_cot_prefix(att: usize, spk1: usize, spk2: usize, k: usize) -> Result<String> {
    if let Some(l) = [att, spk1, spk2].into_iter().find(|&l| l >= k) {
        return Err(invalid(format!("label {l} out of range for K={k}")));
    }
    Ok(format!("Attention:{att};\nSpk1:{spk1}; Spk2:{spk2};"))
}

/// What a stream slot shows the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StreamContent {
    Transcript(String),
    Attachment(String),
}

impl StreamContent {
    fn render(&self) -> String {
        match self {
            StreamContent::Transcript(t) => t.clone(),
            StreamContent::Attachment(p) => format!("<audio:{p}>"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamInput {
    pub content: StreamContent,
    pub embedding: SpeakerEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub attention_serialization: String,
    pub stream_summaries: [String; 2],
    pub question_text: String,
    pub attention_label: usize,
    pub spk_labels: [usize; 2],
    /// Stream closest to the intention vector.
    pub nearest_stream: usize,
    pub k: usize,
    pub expected_cot: String,
    pub query: TaskQuery,
}

/// `Attention label: <î> (voice: <pitch> pitch, <gender>)`, with pitch and
/// gender read back from the intention vector.
pub fn serialize_attention(label: usize, intention: &SpeakerEmbedding) -> String {
    let f0 = implied_f0_hz(intention);
    let gender = if f0 >= 165.0 { Gender::Female } else { Gender::Male };
    format!("Attention label: {label} (voice: {} pitch, {})", pitch_class(f0).as_str(), gender.as_str())
}

pub fn build_prompt(
    query: &TaskQuery,
    streams: [&StreamInput; 2],
    intention: &SpeakerEmbedding,
    clusters: &ClusterModel,
) -> Result<PromptBundle> {
    let attention_label = clusters.assign_label(intention)?;
    let spk_labels = [clusters.assign_label(&streams[0].embedding)?, clusters.assign_label(&streams[1].embedding)?];
    let nearest_stream = select_stream(intention, [&streams[0].embedding, &streams[1].embedding])?;
    let attention_serialization = serialize_attention(attention_label, intention);
    let stream_summaries = [streams[0].content.render(), streams[1].content.render()];
    let user_text = format!(
        "Attention: {attention_serialization}\nAudio 1: {}\nAudio 2: {}\nQuestion: {}",
        stream_summaries[0], stream_summaries[1], query.question_text
    );
    let expected_cot = build_cot_prefix(attention_label, spk_labels[0], spk_labels[1], clusters.k())?;
    Ok(PromptBundle {
        system_text: SYSTEM_TEXT.into(),
        user_text,
        attention_serialization,
        stream_summaries,
        question_text: query.question_text.clone(),
        attention_label,
        spk_labels,
        nearest_stream,
        k: clusters.k(),
        expected_cot,
        query: query.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub raw_text: String,
    pub parsed_cot: Option<CotLabels>,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn cot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*Attention:\s*(\d+);\s*Spk1:\s*(\d+);\s*Spk2:\s*(\d+);\s*").unwrap())
}

/// Splits a reply into CoT labels and answer. Replies without the prefix are
/// all answer; out-of-range labels are reported and dropped.
pub fn parse_output(raw_text: &str, k: usize) -> ModelOutput {
    let fallback = |parse_error| ModelOutput {
        raw_text: raw_text.into(),
        parsed_cot: None,
        answer_text: raw_text.trim().into(),
        parse_error,
        flags: Vec::new(),
    };
    let Some(caps) = cot_regex().captures(raw_text) else {
        return fallback(None);
    };
    let rest = raw_text[caps.get(0).unwrap().end()..].trim().to_string();
    let nums: Vec<Option<usize>> = (1..=3).map(|i| caps[i].parse::<usize>().ok()).collect();
    match nums[..] {
        [Some(a), Some(s1), Some(s2)] if a < k && s1 < k && s2 < k => ModelOutput {
            raw_text: raw_text.into(),
            parsed_cot: Some(CotLabels { attention: a, spk1: s1, spk2: s2 }),
            answer_text: rest,
            parse_error: None,
            flags: Vec::new(),
        },
        _ => ModelOutput {
            answer_text: rest,
            ..fallback(Some(format!("chain-of-thought label out of range for K={k}")))
        },
    }
}

/// Ground truth available to the mock, streams in presentation order.
#[derive(Debug, Clone, Copy)]
pub struct OracleRecord<'a> {
    pub streams: [&'a StreamRecord; 2],
}

pub trait AnswerBackend: Sync {
    fn respond(&self, bundle: &PromptBundle, oracle: &OracleRecord<'_>) -> Result<ModelOutput>;
}

/// Flag set when the attention label matches neither stream, or both.
pub const FLAG_UNRESOLVED: &str = "unresolved_attention";

/// Answers from the oracle record of the stream its labels point at.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    /// Presentation index treated as foreground, and whether the labels
    /// alone decided it.
    pub fn foreground(bundle: &PromptBundle) -> (usize, bool) {
        let hits: Vec<usize> = (0..2).filter(|&i| bundle.spk_labels[i] == bundle.attention_label).collect();
        match hits[..] {
            [only] => (only, true),
            _ => (bundle.nearest_stream, false),
        }
    }
}

impl AnswerBackend for MockBackend {
    fn respond(&self, bundle: &PromptBundle, oracle: &OracleRecord<'_>) -> Result<ModelOutput> {
        let (fg, resolved) = Self::foreground(bundle);
        let idx = match bundle.query.target {
            Target::Foreground => fg,
            Target::Background => 1 - fg,
        };
        let record = oracle.streams[idx];
        let answer = match bundle.query.task {
            Task::Description => description_text(record),
            Task::Transcription => record.transcript_text(),
            Task::Summarization => {
                record.summaries.first().cloned().ok_or_else(|| invalid("stream has no reference summary"))?
            }
            Task::FreeQa => {
                let i = bundle.query.qa_index.ok_or_else(|| invalid("free-QA query without a question index"))?;
                record
                    .qa
                    .get(i)
                    .map(|p| p.answer.clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("stream has no question {i}")))?
            }
        };
        let raw = format!("{}\n{answer}", bundle.expected_cot);
        let mut out = parse_output(&raw, bundle.k);
        if !resolved {
            out.flags.push(FLAG_UNRESOLVED.into());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{Level, SpeakerAttributes};
    use crate::eval::corpus::{qa_for, summaries_for};

    fn record(gender: Gender, topic: &str, words: &[&str]) -> StreamRecord {
        let transcript: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        StreamRecord {
            voice_id: topic.into(),
            attributes: SpeakerAttributes { gender, pitch: Level::High, tempo: Level::Normal },
            topic: topic.into(),
            summaries: summaries_for(topic),
            qa: qa_for(topic, &transcript),
            transcript,
        }
    }

    fn clusters() -> ClusterModel {
        ClusterModel::from_centroids(vec![vec![0.0; 8], vec![1.0; 8], vec![-1.0; 8]], 0, "t").unwrap()
    }

    fn input(text: &str, v: f64) -> StreamInput {
        StreamInput { content: StreamContent::Transcript(text.into()), embedding: SpeakerEmbedding(vec![v; 8]) }
    }

    fn query(task: Task, target: Target) -> TaskQuery {
        TaskQuery { task, target, question_text: "Q?".into(), references: vec![], qa_index: Some(1) }
    }

    #[test]
    fn cot_examples() {
        assert_eq!(build_cot_prefix(2, 2, 5, 8).unwrap(), "Attention:2;\nSpk1:2; Spk2:5;");
        assert_eq!(build_cot_prefix(0, 0, 0, 8).unwrap(), "Attention:0;\nSpk1:0; Spk2:0;");
        assert!(build_cot_prefix(8, 0, 0, 8).is_err());
    }

    #[test]
    fn parse_examples() {
        let o = parse_output("Attention:2;\nSpk1:2; Spk2:5;\nHello", 8);
        assert_eq!(o.parsed_cot, Some(CotLabels { attention: 2, spk1: 2, spk2: 5 }));
        assert_eq!(o.answer_text, "Hello");
        let o = parse_output("Hello", 8);
        assert_eq!((o.parsed_cot, o.answer_text.as_str()), (None, "Hello"));
        let o = parse_output("Attention:9;\nSpk1:1; Spk2:2;\nHi", 8);
        assert!(o.parsed_cot.is_none() && o.parse_error.is_some());
        assert_eq!(o.answer_text, "Hi");
    }

    #[test]
    fn prompt_layout() {
        let c = clusters();
        let q = query(Task::Transcription, Target::Foreground);
        let (a, b) = (input("one two", 0.9), input("three four", -0.8));
        let p = build_prompt(&q, [&a, &b], &SpeakerEmbedding(vec![1.0; 8]), &c).unwrap();
        assert_eq!(p.system_text, "You are a helpful assistant.");
        assert_eq!(p.attention_label, 1);
        assert_eq!(p.spk_labels, [1, 2]);
        let lines: Vec<&str> = p.user_text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("Attention: Attention label: 1 (voice: "));
        assert_eq!(lines[1], "Audio 1: one two");
        assert_eq!(lines[2], "Audio 2: three four");
        assert_eq!(lines[3], "Question: Q?");
        assert_eq!(p.expected_cot, "Attention:1;\nSpk1:1; Spk2:2;");

        let swapped = build_prompt(&q, [&b, &a], &SpeakerEmbedding(vec![1.0; 8]), &c).unwrap();
        assert_eq!(swapped.spk_labels, [2, 1]);
        assert_eq!(swapped.attention_serialization, p.attention_serialization);
        assert_eq!(swapped.stream_summaries, [p.stream_summaries[1].clone(), p.stream_summaries[0].clone()]);
    }

    #[test]
    fn attention_serialization_reads_voice() {
        let hi = crate::speaker::embed_speaker(
            &crate::audio::SourceSpec {
                f0_hz: 220.0,
                words: vec!["x".into()],
                seconds_per_word: 0.3,
                timbre_seed: 1,
                gender: Gender::Female,
            },
            16,
        )
        .unwrap();
        assert_eq!(serialize_attention(4, &hi), "Attention label: 4 (voice: high pitch, female)");
    }

    #[test]
    fn mock_follows_labels() {
        let c = clusters();
        let recs = [record(Gender::Female, "music", &["piano", "song"]), record(Gender::Male, "travel", &["train"])];
        let oracle = OracleRecord { streams: [&recs[0], &recs[1]] };
        let (a, b) = (input("x", 0.9), input("y", -0.8));
        for (target, want) in [(Target::Foreground, 0), (Target::Background, 1)] {
            let q = query(Task::Transcription, target);
            let p = build_prompt(&q, [&a, &b], &SpeakerEmbedding(vec![1.0; 8]), &c).unwrap();
            let out = MockBackend.respond(&p, &oracle).unwrap();
            assert_eq!(out.answer_text, recs[want].transcript_text());
            assert_eq!(out.parsed_cot, Some(CotLabels { attention: 1, spk1: 1, spk2: 2 }));
            assert!(out.flags.is_empty());
            assert_eq!(out, MockBackend.respond(&p, &oracle).unwrap());
        }
        let q = query(Task::Description, Target::Foreground);
        let p = build_prompt(&q, [&a, &b], &SpeakerEmbedding(vec![1.0; 8]), &c).unwrap();
        assert_eq!(
            MockBackend.respond(&p, &oracle).unwrap().answer_text,
            "A female speaker with high pitch and normal tempo."
        );
        let q = query(Task::FreeQa, Target::Background);
        let p = build_prompt(&q, [&a, &b], &SpeakerEmbedding(vec![1.0; 8]), &c).unwrap();
        assert_eq!(MockBackend.respond(&p, &oracle).unwrap().answer_text, "The first word is train.");
    }

    #[test]
    fn mock_unresolved_uses_nearest() {
        let c = clusters();
        let recs = [record(Gender::Female, "music", &["a"]), record(Gender::Male, "travel", &["b"])];
        let oracle = OracleRecord { streams: [&recs[0], &recs[1]] };
        // both streams in cluster 2, intention in cluster 0 but nearer stream 1
        let (a, b) = (input("x", -0.9), input("y", -0.6));
        let q = query(Task::Summarization, Target::Foreground);
        let p = build_prompt(&q, [&a, &b], &SpeakerEmbedding(vec![0.0; 8]), &c).unwrap();
        assert_eq!(p.nearest_stream, 1);
        let out = MockBackend.respond(&p, &oracle).unwrap();
        assert_eq!(out.answer_text, recs[1].summaries[0]);
        assert_eq!(out.flags, vec![FLAG_UNRESOLVED.to_string()]);
    }

    #[test]
    fn question_wording_never_moves_foreground() {
        let c = clusters();
        let (a, b) = (input("x", 0.9), input("y", -0.8));
        let mut seen = Vec::new();
        for text in question_pool(Task::Summarization, Target::Foreground) {
            let q = TaskQuery { question_text: text.into(), ..query(Task::Summarization, Target::Foreground) };
            let p = build_prompt(&q, [&a, &b], &SpeakerEmbedding(vec![1.0; 8]), &c).unwrap();
            seen.push(MockBackend::foreground(&p));
        }
        assert!(seen.iter().all(|s| *s == seen[0]));
    }

    #[test]
    fn pools_have_eight_distinct_questions() {
        for task in Task::ALL {
            for target in Target::ALL {
                let pool = question_pool(task, target);
                let mut sorted = pool.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), 8);
            }
        }
    }
}
