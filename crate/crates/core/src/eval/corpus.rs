//! Synthetic scene corpus: a speaker pool, topic-driven word streams, and the
//! per-stream reference texts the task battery scores against.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::{build_scene, classify_attributes, Gender, Scene, SourceSpec, SpeakerAttributes, Talker};
use crate::error::{invalid, Result};
use crate::rng;

/// Topic name and the words its speech is drawn from.
pub const TOPICS: [(&str, [&str; 12]); 10] = [
    (
        "cooking",
        ["pan", "onion", "garlic", "simmer", "recipe", "butter", "oven", "salt", "soup", "stir", "bread", "pepper"],
    ),
    (
        "football",
        [
            "goal", "keeper", "match", "striker", "league", "pass", "referee", "season", "coach", "penalty", "stadium",
            "fans",
        ],
    ),
    (
        "travel",
        [
            "train", "ticket", "hotel", "beach", "map", "airport", "luggage", "city", "museum", "passport", "journey",
            "harbor",
        ],
    ),
    (
        "gardening",
        [
            "soil", "seeds", "roses", "water", "compost", "spring", "tomato", "shovel", "weeds", "sunlight", "hedge",
            "bloom",
        ],
    ),
    (
        "music",
        [
            "guitar", "melody", "concert", "drums", "chorus", "piano", "rhythm", "singer", "album", "violin", "stage",
            "tune",
        ],
    ),
    (
        "weather",
        ["rain", "cloud", "storm", "forecast", "wind", "snow", "thunder", "humid", "sunny", "breeze", "frost", "fog"],
    ),
    (
        "astronomy",
        [
            "planet",
            "orbit",
            "comet",
            "galaxy",
            "telescope",
            "moon",
            "star",
            "nebula",
            "eclipse",
            "gravity",
            "meteor",
            "saturn",
        ],
    ),
    (
        "finance",
        [
            "budget", "market", "shares", "interest", "loan", "savings", "profit", "invest", "bank", "credit", "tax",
            "income",
        ],
    ),
    (
        "history",
        [
            "empire",
            "castle",
            "king",
            "battle",
            "treaty",
            "ancient",
            "ruins",
            "dynasty",
            "archive",
            "revolution",
            "queen",
            "medieval",
        ],
    ),
    (
        "computing",
        [
            "server", "code", "compiler", "memory", "network", "laptop", "software", "bug", "kernel", "database",
            "keyboard", "cloud",
        ],
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub snr_db: Vec<f64>,
    /// Voices per gender in the scene pool.
    pub speakers_per_gender: usize,
    /// Voices in the separate corpus the clusters are fitted on.
    pub cluster_corpus_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_train: 300,
            n_test: 100,
            duration_s: 8.0,
            sample_rate_hz: 16_000,
            snr_db: vec![9.0, 12.0],
            speakers_per_gender: 12,
            cluster_corpus_size: 200,
            seed: 2024,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("scene duration must be positive"));
        }
        if self.sample_rate_hz < 1000 {
            return Err(invalid("sample rate must be at least 1 kHz"));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(invalid("need at least one finite SNR"));
        }
        if self.speakers_per_gender == 0 {
            return Err(invalid("speaker pool is empty"));
        }
        Ok(())
    }
}

/// A voice: everything about a talker except what they say.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub id: String,
    pub gender: Gender,
    pub f0_hz: f64,
    pub seconds_per_word: f64,
    pub timbre_seed: u64,
}

impl Voice {
    pub fn spec(&self, words: Vec<String>) -> SourceSpec {
        SourceSpec {
            f0_hz: self.f0_hz,
            words,
            seconds_per_word: self.seconds_per_word,
            timbre_seed: self.timbre_seed,
            gender: self.gender,
        }
    }

    /// Spec with a placeholder word, enough for embedding.
    pub fn identity_spec(&self) -> SourceSpec {
        self.spec(vec!["_".into()])
    }
}

/// Male voices sit in 90–160 Hz, female in 170–250 Hz; pace spans
/// 0.20–0.46 s per word so every tempo class occurs.
pub fn draw_voice(id: impl Into<String>, gender: Gender, seed: u64) -> Voice {
    let mut r = rng::rng(seed);
    let f0_hz = match gender {
        Gender::Male => r.random_range(90.0..160.0),
        Gender::Female => r.random_range(170.0..250.0),
    };
    Voice { id: id.into(), gender, f0_hz, seconds_per_word: r.random_range(0.20..0.46), timbre_seed: r.random() }
}

/// Scene pool: `n` voices per gender, males first.
pub fn voice_pool(n: usize, seed: u64) -> Vec<Voice> {
    let mut out = Vec::with_capacity(2 * n);
    for (g, gender) in [Gender::Male, Gender::Female].into_iter().enumerate() {
        for i in 0..n {
            let tag = if gender == Gender::Male { "m" } else { "f" };
            out.push(draw_voice(format!("{tag}{i:02}"), gender, rng::derive(seed, &[0x9001, g as u64, i as u64])));
        }
    }
    out
}

/// Independent voices for fitting the cluster model, alternating genders.
pub fn cluster_corpus(n: usize, seed: u64) -> Vec<Voice> {
    (0..n)
        .map(|i| {
            let gender = if i % 2 == 0 { Gender::Male } else { Gender::Female };
            draw_voice(format!("c{i:03}"), gender, rng::derive(seed, &[0xC105, i as u64]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// Ground truth for one talker of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub voice_id: String,
    pub attributes: SpeakerAttributes,
    pub topic: String,
    pub transcript: Vec<String>,
    pub summaries: Vec<String>,
    pub qa: Vec<QaPair>,
}

impl StreamRecord {
    pub fn transcript_text(&self) -> String {
        self.transcript.join(" ")
    }
}

pub fn summaries_for(topic: &str) -> Vec<String> {
    vec![format!("The speaker is talking about {topic}."), format!("This speech is mainly about {topic}.")]
}

/// Three scripted question/answer pairs about a stream.
pub fn qa_for(topic: &str, transcript: &[String]) -> Vec<QaPair> {
    let first = transcript.first().map(String::as_str).unwrap_or("nothing");
    let last = transcript.last().map(String::as_str).unwrap_or("nothing");
    vec![
        QaPair {
            question: "What subject does this speaker talk about?".into(),
            answer: format!("The speaker talks about {topic}."),
        },
        QaPair {
            question: "What is the first word this speaker says?".into(),
            answer: format!("The first word is {first}."),
        },
        QaPair {
            question: "What is the last word this speaker says?".into(),
            answer: format!("The last word is {last}."),
        },
    ]
}

/// A generated scene plus its oracle record.
#[derive(Debug, Clone)]
pub struct CorpusScene {
    pub scene: Scene,
    pub voices: [Voice; 2],
    pub streams: [StreamRecord; 2],
}

impl CorpusScene {
    pub fn attended(&self) -> Talker {
        self.scene.attended()
    }

    pub fn stream(&self, talker: Talker) -> &StreamRecord {
        &self.streams[talker.index()]
    }
}

/// Which part of the corpus a scene belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    /// Extra held-out scenes for the window sweep.
    Sweep,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Sweep => "sweep",
        }
    }

    fn key(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
            Split::Sweep => 3,
        }
    }
}

pub fn scene_id(split: Split, index: usize) -> String {
    format!("{}-{index:04}", split.as_str())
}

fn topic_words(topic: usize, n: usize, r: &mut rng::Rng) -> Vec<String> {
    let lex = &TOPICS[topic].1;
    (0..n).map(|_| (*lex.choose(r).unwrap()).to_string()).collect()
}

/// Scene `index` of `split`: one male and one female voice from the pool in
/// random order, distinct topics, random attended talker and SNR.
pub fn generate_scene(cfg: &SceneConfig, pool: &[Voice], split: Split, index: usize) -> Result<CorpusScene> {
    let mut r = rng::rng_at(cfg.seed, &[0x5C, split.key(), index as u64]);
    let males: Vec<&Voice> = pool.iter().filter(|v| v.gender == Gender::Male).collect();
    let females: Vec<&Voice> = pool.iter().filter(|v| v.gender == Gender::Female).collect();
    let (m, f) = match (males.choose(&mut r), females.choose(&mut r)) {
        (Some(m), Some(f)) => ((*m).clone(), (*f).clone()),
        _ => return Err(invalid("pool needs voices of both genders")),
    };
    let voices = if r.random::<bool>() { [m, f] } else { [f, m] };
    let t0 = r.random_range(0..TOPICS.len());
    let t1 = (t0 + r.random_range(1..TOPICS.len())) % TOPICS.len();
    let topics = [t0, t1];
    let attended = if r.random::<bool>() { Talker::A } else { Talker::B };
    let snr_db = *cfg.snr_db.choose(&mut r).unwrap();
    let noise_seed = r.random();

    let specs: Vec<SourceSpec> = (0..2)
        .map(|i| {
            let n_words = (cfg.duration_s / (0.75 * voices[i].seconds_per_word)).ceil() as usize + 1;
            voices[i].spec(topic_words(topics[i], n_words, &mut r))
        })
        .collect();
    let [spec_a, spec_b]: [SourceSpec; 2] = specs.try_into().unwrap();
    let id = scene_id(split, index);
    let scene = build_scene(id, spec_a, spec_b, cfg.duration_s, cfg.sample_rate_hz, snr_db, attended, noise_seed)?;

    let record = |talker: Talker| {
        let i = talker.index();
        let topic = TOPICS[topics[i]].0;
        let transcript = scene.transcript(talker).to_vec();
        StreamRecord {
            voice_id: voices[i].id.clone(),
            attributes: classify_attributes(scene.spec(talker)),
            topic: topic.to_string(),
            summaries: summaries_for(topic),
            qa: qa_for(topic, &transcript),
            transcript,
        }
    };
    let streams = [record(Talker::A), record(Talker::B)];
    Ok(CorpusScene { scene, voices, streams })
}
