//! Text normalization and answer metrics: WER, BLEU-4, ROUGE-L,
//! METEOR (exact-match variant), description accuracy, closeness rate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::audio::{Gender, Level, SpeakerAttributes};
use crate::error::{invalid, Result};

/// Answer lead-ins stripped before scoring, already normalized.
pub fn default_boilerplate() -> Vec<String> {
    [
        "the attended speaker is discussing about",
        "the attended speaking is discussing about",
        "the attended speaker is talking about",
        "the background speaker is discussing about",
        "the background speaker is talking about",
        "the speaker is saying",
        "spoken text",
        "transcription",
        "the transcription is",
        "answer",
        "summary",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub boilerplate: Vec<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { boilerplate: default_boilerplate() }
    }
}

impl Normalizer {
    /// Lowercase, replace punctuation with spaces (apostrophes are dropped),
    /// collapse whitespace, then strip the longest matching lead-in.
    pub fn normalize(&self, text: &str) -> String {
        let mut s = String::with_capacity(text.len());
        for ch in text.chars().flat_map(char::to_lowercase) {
            if ch.is_alphanumeric() || ch.is_whitespace() {
                s.push(ch);
            } else if ch != '\'' {
                s.push(' ');
            }
        }
        let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
        let best = self
            .boilerplate
            .iter()
            .filter(|p| !p.is_empty())
            .filter(|p| collapsed == **p || collapsed.starts_with(&format!("{p} ")))
            .max_by_key(|p| p.len());
        match best {
            Some(p) => collapsed[p.len()..].trim_start().to_string(),
            None => collapsed,
        }
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        self.normalize(text).split_whitespace().map(String::from).collect()
    }
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word edit distance over reference length, in percent.
pub fn wer<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(invalid("WER needs a nonempty reference"));
    }
    Ok(100.0 * edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Single-reference BLEU-4: clipped n-gram precisions with uniform weights,
/// no smoothing, brevity penalty.
pub fn bleu<T: Eq + std::hash::Hash>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(invalid("BLEU needs a nonempty reference"));
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        let total: usize = h.values().sum();
        let clipped: usize = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
        if clipped == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += 0.25 * (clipped as f64 / total as f64).ln();
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(100.0 * bp * log_sum.exp())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

fn rouge_l_single<T: PartialEq>(hyp: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    100.0 * (1.0 + b2) * p * r / (r + b2 * p)
}

/// LCS F-measure, best over references.
pub fn rouge_l<T: PartialEq>(hyp: &[T], references: &[&[T]]) -> Result<f64> {
    if references.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(invalid("ROUGE-L needs nonempty references"));
    }
    Ok(references.iter().map(|r| rouge_l_single(hyp, r)).fold(0.0, f64::max))
}

const METEOR_ALPHA: f64 = 0.9;
const METEOR_GAMMA: f64 = 0.5;
const METEOR_THETA: f64 = 3.0;

/// Exact-match alignment: hypothesis tokens left to right, each taking the
/// first unused identical reference token. Returns (hyp, ref) index pairs.
fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, h) in hyp.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *h) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// METEOR with exact unigram matching only.
pub fn meteor_lite<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(invalid("METEOR needs a nonempty reference"));
    }
    let pairs = align(hyp, reference);
    let m = pairs.len();
    if m == 0 {
        return Ok(0.0);
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_THETA);
    Ok(100.0 * f_mean * (1.0 - penalty))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionScore {
    pub gender: bool,
    pub pitch: bool,
    pub tempo: bool,
    /// The answer did not follow the description template.
    pub unparsed: bool,
}

/// Reads `a <gender> speaker with <pitch> pitch and <tempo> tempo` out of a
/// normalized answer.
pub fn parse_description(answer: &str) -> Option<SpeakerAttributes> {
    let norm = Normalizer { boilerplate: Vec::new() }.normalize(answer);
    let toks: Vec<&str> = norm.split_whitespace().collect();
    let at = toks.windows(2).position(|w| w[1] == "speaker" && matches!(w[0], "male" | "female"))?;
    let gender = if toks[at] == "male" { Gender::Male } else { Gender::Female };
    let rest = &toks[at + 2..];
    let level_before = |noun: &str| -> Option<Level> {
        let i = rest.iter().position(|t| *t == noun)?;
        let word = rest.get(i.checked_sub(1)?)?;
        Level::ALL.into_iter().find(|l| l.as_str() == *word)
    };
    Some(SpeakerAttributes { gender, pitch: level_before("pitch")?, tempo: level_before("tempo")? })
}

pub fn description_accuracy(answer: &str, truth: &SpeakerAttributes) -> DescriptionScore {
    match parse_description(answer) {
        Some(a) => DescriptionScore {
            gender: a.gender == truth.gender,
            pitch: a.pitch == truth.pitch,
            tempo: a.tempo == truth.tempo,
            unparsed: false,
        },
        None => DescriptionScore { gender: false, pitch: false, tempo: false, unparsed: true },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMetric {
    Wer,
    Bleu,
    RougeL,
    Meteor,
}

impl TextMetric {
    pub const ALL: [TextMetric; 4] = [TextMetric::Wer, TextMetric::Bleu, TextMetric::RougeL, TextMetric::Meteor];

    pub fn as_str(self) -> &'static str {
        match self {
            TextMetric::Wer => "wer",
            TextMetric::Bleu => "bleu",
            TextMetric::RougeL => "rouge_l",
            TextMetric::Meteor => "meteor",
        }
    }

    pub fn lower_is_better(self) -> bool {
        self == TextMetric::Wer
    }

    /// Score against the best of several references (lowest for WER).
    pub fn score(self, hyp: &[String], references: &[Vec<String>]) -> Result<f64> {
        if references.is_empty() {
            return Err(invalid("no references to score against"));
        }
        if self == TextMetric::RougeL {
            let refs: Vec<&[String]> = references.iter().map(Vec::as_slice).collect();
            return rouge_l(hyp, &refs);
        }
        let mut scores = Vec::with_capacity(references.len());
        for r in references {
            scores.push(match self {
                TextMetric::Wer => wer(hyp, r)?,
                TextMetric::Bleu => bleu(hyp, r)?,
                TextMetric::Meteor => meteor_lite(hyp, r)?,
                TextMetric::RougeL => unreachable!(),
            });
        }
        Ok(if self.lower_is_better() {
            scores.into_iter().fold(f64::INFINITY, f64::min)
        } else {
            scores.into_iter().fold(f64::NEG_INFINITY, f64::max)
        })
    }
}

/// One answer with the references of its target and of the other talker.
pub struct ClosenessCase<'a> {
    pub answer: &'a [String],
    pub target: &'a [Vec<String>],
    pub other: &'a [Vec<String>],
}

/// Percentage of answers that score strictly better against the target's
/// references than against the other talker's.
pub fn closeness_rate(cases: &[ClosenessCase<'_>], metric: TextMetric) -> Result<f64> {
    if cases.is_empty() {
        return Ok(0.0);
    }
    let mut closer = 0;
    for c in cases {
        let t = metric.score(c.answer, c.target)?;
        let o = metric.score(c.answer, c.other)?;
        let wins = if metric.lower_is_better() { t < o } else { t > o };
        if wins {
            closer += 1;
        }
    }
    Ok(100.0 * closer as f64 / cases.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn normalization_pipeline() {
        let n = Normalizer::default();
        assert_eq!(n.normalize("  Hello,   WORLD! "), "hello world");
        assert_eq!(n.normalize("The attended speaking is discussing about: Cooking."), "cooking");
        assert_eq!(n.normalize("Spoken text: a b"), "a b");
        assert_eq!(n.normalize("don't stop"), "dont stop");
        // lead-ins only match whole words
        assert_eq!(n.normalize("answers matter"), "answers matter");
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).unwrap(), 0.0);
        assert!((wer(&toks("a x c"), &toks("a b c")).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer(&toks(""), &toks("a b c")).unwrap(), 100.0);
        assert_eq!(wer(&toks("a b c d e f"), &toks("x")).unwrap(), 600.0);
        assert!(wer(&toks("a"), &toks("")).is_err());
    }

    #[test]
    fn bleu_examples() {
        let r = toks("the cat sat on the mat");
        assert!((bleu(&r, &r).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&toks("dog ran"), &r).unwrap(), 0.0);
        assert_eq!(bleu(&toks(""), &r).unwrap(), 0.0);
        // hyp "the cat sat on the" : p1..p4 = 5/5, 4/4, 3/3, 2/2, bp = exp(1 - 6/5)
        let b = bleu(&toks("the cat sat on the"), &r).unwrap();
        assert!((b - 100.0 * (1.0f64 - 6.0 / 5.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_two_gram_clipping() {
        // hyp: a a b a b c d ; ref: a b c d e
        let hyp = toks("a a b a b c d");
        let r = toks("a b c d e");
        // 2-grams aa ab ba ab bc cd: "ab" clips to 1, so 3 of 6 match
        let p = [4.0 / 7.0, 3.0 / 6.0, 2.0 / 5.0, 1.0 / 4.0];
        let expected = 100.0 * (p.iter().map(|x: &f64| x.ln()).sum::<f64>() / 4.0).exp();
        assert!((bleu(&hyp, &r).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn rouge_examples() {
        let r = toks("a b c d");
        assert!((rouge_l(&r, &[&r]).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(rouge_l(&toks("x y"), &[&r]).unwrap(), 0.0);
        let other = toks("a b x x");
        let best = rouge_l(&toks("a b c d"), &[&other, &r]).unwrap();
        assert!((best - 100.0).abs() < 1e-9);
    }

    #[test]
    fn meteor_chunk_penalty() {
        let r = toks("a b c d");
        assert!((meteor_lite(&r, &r).unwrap() - 100.0 * (1.0 - 0.5 * (1.0f64 / 4.0).powi(3))).abs() < 1e-9);
        assert_eq!(meteor_lite(&toks("x"), &r).unwrap(), 0.0);
        // 4 matches in two chunks: "c d a b"
        let two = meteor_lite(&toks("c d a b"), &r).unwrap();
        assert!((two - 100.0 * (1.0 - 0.5 * (2.0f64 / 4.0).powi(3))).abs() < 1e-9);
        // one unmatched hyp token: P = 4/5, R = 1
        let f = (0.8 * 1.0) / (0.9 * 0.8 + 0.1 * 1.0);
        let extra = meteor_lite(&toks("a b c d z"), &r).unwrap();
        assert!((extra - 100.0 * f * (1.0 - 0.5 * (1.0f64 / 4.0).powi(3))).abs() < 1e-9);
    }

    #[test]
    fn description_template_enumeration() {
        for gender in [Gender::Male, Gender::Female] {
            for pitch in Level::ALL {
                for tempo in Level::ALL {
                    let a = SpeakerAttributes { gender, pitch, tempo };
                    let text = format!(
                        "A {} speaker with {} pitch and {} tempo.",
                        gender.as_str(),
                        pitch.as_str(),
                        tempo.as_str()
                    );
                    assert_eq!(parse_description(&text), Some(a));
                    let s = description_accuracy(&text, &a);
                    assert!(s.gender && s.pitch && s.tempo && !s.unparsed);
                }
            }
        }
    }

    #[test]
    fn description_partial_and_unparsed() {
        let truth = SpeakerAttributes { gender: Gender::Female, pitch: Level::High, tempo: Level::Normal };
        let s = description_accuracy("A male speaker with high pitch and normal tempo.", &truth);
        assert_eq!((s.gender, s.pitch, s.tempo), (false, true, true));
        let s = description_accuracy("no idea", &truth);
        assert!(s.unparsed && !s.gender && !s.pitch && !s.tempo);
    }

    #[test]
    fn closeness_ties_fail() {
        let t = vec![toks("a b c")];
        let o = vec![toks("x y z")];
        let same = toks("a b c");
        let mid = toks("a y");
        let cases = [
            ClosenessCase { answer: &same, target: &t, other: &o },
            ClosenessCase { answer: &mid, target: &t, other: &o },
        ];
        assert_eq!(closeness_rate(&cases, TextMetric::Wer).unwrap(), 50.0);
        assert_eq!(closeness_rate(&cases, TextMetric::RougeL).unwrap(), 50.0);
    }
}
