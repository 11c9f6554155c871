//! Discrete speaker-identity space: synthetic voice embeddings, K-means
//! clusters over them, and nearest-centroid labels.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::SourceSpec;
use crate::error::{invalid, Error, Result};
use crate::rng;

pub const DEFAULT_EMBEDDING_DIM: usize = 512;
pub const DEFAULT_CLUSTERS: usize = 8;

const PITCH_DIMS: usize = 4;
const TEMPO_DIMS: usize = 4;
const PITCH_REF_HZ: f64 = 165.0;
const TEMPO_REF_SPW: f64 = 0.32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerEmbedding(pub Vec<f64>);

impl SpeakerEmbedding {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(invalid("embedding must be nonempty and finite"));
        }
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &SpeakerEmbedding) -> f64 {
        sq_dist(&self.0, &other.0).sqrt()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Deterministic stand-in for a frozen x-vector extractor. The leading block
/// encodes log-pitch, the next one log-pace, and the remainder is a unit-norm
/// pseudo-random timbre vector keyed by `timbre_seed`. Words never enter.
pub fn embed_speaker(spec: &SourceSpec, dim: usize) -> Result<SpeakerEmbedding> {
    if dim < PITCH_DIMS + TEMPO_DIMS {
        return Err(invalid(format!("embedding dimension must be at least {}", PITCH_DIMS + TEMPO_DIMS)));
    }
    spec.validate()?;
    let pitch = 0.8 * (spec.f0_hz / PITCH_REF_HZ).log2();
    let tempo = 0.5 * (spec.seconds_per_word / TEMPO_REF_SPW).log2();
    let mut v = Vec::with_capacity(dim);
    v.extend(std::iter::repeat_n(pitch, PITCH_DIMS));
    v.extend(std::iter::repeat_n(tempo, TEMPO_DIMS));

    let timbre_len = dim - PITCH_DIMS - TEMPO_DIMS;
    if timbre_len > 0 {
        let mut r = rng::rng(rng::derive(spec.timbre_seed, &[0xE3B]));
        let mut t: Vec<f64> = (0..timbre_len).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        t.iter_mut().for_each(|x| *x /= norm);
        v.extend(t);
    }
    SpeakerEmbedding::new(v)
}

/// Pitch implied by the leading block of an embedding (inverse of
/// [`embed_speaker`]).
pub fn implied_f0_hz(e: &SpeakerEmbedding) -> f64 {
    let n = PITCH_DIMS.min(e.dim());
    let mean = e.0[..n].iter().sum::<f64>() / n.max(1) as f64;
    PITCH_REF_HZ * (mean / 0.8).exp2()
}

/// Pace implied by the second block of an embedding.
pub fn implied_seconds_per_word(e: &SpeakerEmbedding) -> f64 {
    let end = (PITCH_DIMS + TEMPO_DIMS).min(e.dim());
    let block = &e.0[PITCH_DIMS.min(end)..end];
    let mean = block.iter().sum::<f64>() / block.len().max(1) as f64;
    TEMPO_REF_SPW * (mean / 0.5).exp2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "D")]
    d: usize,
    /// Row-major K×D.
    centroids: Vec<f64>,
    seed: u64,
    corpus_id: String,
}

impl ClusterModel {
    pub fn from_centroids(rows: Vec<Vec<f64>>, seed: u64, corpus_id: impl Into<String>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(invalid("cluster model needs at least one centroid"));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(invalid("centroid rows must share a nonzero dimension"));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("centroids must be finite"));
        }
        Ok(Self { k, d, centroids: rows.into_iter().flatten().collect(), seed, corpus_id: corpus_id.into() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn centroid_row(&self, label: usize) -> &[f64] {
        &self.centroids[label * self.d..(label + 1) * self.d]
    }

    pub fn centroid_of(&self, label: usize) -> Result<SpeakerEmbedding> {
        if label >= self.k {
            return Err(invalid(format!("label {label} out of range for K={}", self.k)));
        }
        Ok(SpeakerEmbedding(self.centroid_row(label).to_vec()))
    }

    /// Nearest centroid by Euclidean distance, lowest index on ties.
    pub fn assign_label(&self, e: &SpeakerEmbedding) -> Result<usize> {
        if e.dim() != self.d {
            return Err(invalid(format!("embedding dimension {} does not match model dimension {}", e.dim(), self.d)));
        }
        Ok(nearest(&self.centroids, self.d, e.as_slice()).0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.k == 0 || m.d == 0 || m.centroids.len() != m.k * m.d {
            return Err(Error::Parse(format!("{}: inconsistent cluster model shape", path.display())));
        }
        Ok(m)
    }
}

fn nearest(flat: &[f64], d: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in flat.chunks_exact(d).enumerate() {
        let dist = sq_dist(c, x);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

/// Outcome of a K-means run with the objective recorded after every
/// assignment step.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans_fit(embeddings: &[SpeakerEmbedding], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    kmeans_fit_traced(embeddings, k, seed, max_iter, "").map(|f| f.model)
}

/// Lloyd iterations from k-means++ seeding. Empty clusters take the point
/// farthest from its current centroid.
pub fn kmeans_fit_traced(
    embeddings: &[SpeakerEmbedding],
    k: usize,
    seed: u64,
    max_iter: usize,
    corpus_id: &str,
) -> Result<KMeansFit> {
    if k == 0 {
        return Err(invalid("K must be positive"));
    }
    if embeddings.len() < k {
        return Err(invalid(format!("{} embeddings cannot form {k} clusters", embeddings.len())));
    }
    let d = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != d) {
        return Err(invalid("embeddings have mixed dimensions"));
    }
    let n = embeddings.len();
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.as_slice()).collect();
    let mut r = rng::rng(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(points[r.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[..d])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            r.random_range(0..n)
        };
        centroids.extend_from_slice(points[pick]);
        let c = &centroids[centroids.len() - d..];
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, c));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (label, dist) = nearest(&centroids, d, p);
            if assignments[i] != label {
                assignments[i] = label;
                changed = true;
            }
            dists[i] = dist;
        }
        trace.push(dists.iter().sum());

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // repair empty clusters with the worst-fit point of a cluster that can spare it
        for empty in 0..k {
            if counts[empty] != 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("n >= k guarantees a donor");
            counts[assignments[donor]] -= 1;
            counts[empty] = 1;
            assignments[donor] = empty;
            dists[donor] = 0.0;
            changed = true;
        }

        let mut sums = vec![0.0; k * d];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, x) in sums[a * d..(a + 1) * d].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for j in 0..d {
                centroids[c * d + j] = sums[c * d + j] * inv;
            }
        }
        if !changed {
            break;
        }
    }

    let rows = centroids.chunks_exact(d).map(<[f64]>::to_vec).collect();
    Ok(KMeansFit {
        model: ClusterModel::from_centroids(rows, seed, corpus_id)?,
        assignments,
        objective_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Gender;

    fn spec(f0: f64, spw: f64, seed: u64) -> SourceSpec {
        SourceSpec {
            f0_hz: f0,
            words: vec!["hello".into(), "there".into()],
            seconds_per_word: spw,
            timbre_seed: seed,
            gender: Gender::Female,
        }
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    pub(crate) fn blobs(n_blobs: usize, per_blob: usize, dim: usize, seed: u64) -> (Vec<SpeakerEmbedding>, Vec<usize>) {
        // centres on scaled basis vectors (pairwise 100 apart), radius <= 1
        let mut r = rng::rng(seed);
        let mut out = Vec::new();
        let mut truth = Vec::new();
        for b in 0..n_blobs {
            for _ in 0..per_blob {
                let mut v = vec![0.0; dim];
                v[b % dim] = 100.0 / 2f64.sqrt();
                let mut noise: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
                let norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
                let radius = r.random::<f64>();
                noise.iter_mut().for_each(|x| *x *= radius / norm);
                out.push(SpeakerEmbedding(v.iter().zip(&noise).map(|(a, b)| a + b).collect()));
                truth.push(b);
            }
        }
        (out, truth)
    }

    #[test]
    fn embedding_is_deterministic_and_word_blind() {
        let a = embed_speaker(&spec(180.0, 0.3, 5), 512).unwrap();
        let b = embed_speaker(&spec(180.0, 0.3, 5), 512).unwrap();
        assert_eq!(a, b);
        let mut other_words = spec(180.0, 0.3, 5);
        other_words.words = vec!["completely".into(), "different".into(), "words".into()];
        assert_eq!(embed_speaker(&other_words, 512).unwrap(), a);
        assert_eq!(a.dim(), 512);
    }

    #[test]
    fn pitch_separates_embeddings() {
        let lo = embed_speaker(&spec(120.0, 0.3, 5), 512).unwrap();
        let hi = embed_speaker(&spec(220.0, 0.3, 5), 512).unwrap();
        assert!(cosine(lo.as_slice(), hi.as_slice()) < 0.9);
    }

    #[test]
    fn implied_voice_inverts_embedding() {
        let e = embed_speaker(&spec(143.0, 0.41, 5), 64).unwrap();
        assert!((implied_f0_hz(&e) - 143.0).abs() < 1e-9);
        assert!((implied_seconds_per_word(&e) - 0.41).abs() < 1e-12);
    }

    #[test]
    fn small_dimension_rejected() {
        assert!(embed_speaker(&spec(120.0, 0.3, 5), 7).is_err());
        assert_eq!(embed_speaker(&spec(120.0, 0.3, 5), 8).unwrap().dim(), 8);
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts: Vec<SpeakerEmbedding> =
            vec![SpeakerEmbedding(vec![0.0, 1.0]), SpeakerEmbedding(vec![2.0, 3.0]), SpeakerEmbedding(vec![4.0, -1.0])];
        let m = kmeans_fit(&pts, 1, 0, 10).unwrap();
        assert_eq!(m.centroid_row(0), &[2.0, 1.0]);
    }

    #[test]
    fn four_blobs_perfect_purity() {
        let (pts, truth) = blobs(4, 25, 16, 3);
        let fit = kmeans_fit_traced(&pts, 4, 9, 100, "blobs").unwrap();
        let mut map = std::collections::HashMap::new();
        for (a, t) in fit.assignments.iter().zip(&truth) {
            assert_eq!(*map.entry(*t).or_insert(*a), *a);
        }
        let mut labels: Vec<_> = map.values().copied().collect();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn objective_non_increasing() {
        let mut r = rng::rng(1);
        let pts: Vec<SpeakerEmbedding> =
            (0..200).map(|_| SpeakerEmbedding((0..5).map(|_| StandardNormal.sample(&mut r)).collect())).collect();
        let fit = kmeans_fit_traced(&pts, 6, 2, 100, "").unwrap();
        assert!(fit.objective_trace.len() > 1);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{w:?}");
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![SpeakerEmbedding(vec![0.0]); 3];
        assert!(matches!(kmeans_fit(&pts, 4, 0, 5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let (pts, _) = blobs(3, 10, 6, 4);
        assert_eq!(kmeans_fit(&pts, 3, 17, 50).unwrap(), kmeans_fit(&pts, 3, 17, 50).unwrap());
    }

    #[test]
    fn assignment_rules() {
        let m = ClusterModel::from_centroids(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![0.0, 3.0], vec![3.0, 0.0]],
            0,
            "t",
        )
        .unwrap();
        assert_eq!(m.assign_label(&SpeakerEmbedding(vec![0.0, 3.0])).unwrap(), 3);
        // equidistant between centroids 1 and 4
        assert_eq!(m.assign_label(&SpeakerEmbedding(vec![2.0, 0.0])).unwrap(), 1);
        assert!(m.assign_label(&SpeakerEmbedding(vec![1.0])).is_err());
        assert!(m.centroid_of(5).is_err());
        assert_eq!(m.centroid_of(2).unwrap().0, vec![5.0, 5.0]);
    }

    #[test]
    fn persistence_is_bit_exact() {
        let mut r = rng::rng(8);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..16).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
        let m = ClusterModel::from_centroids(rows, 42, "corpus").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clusters.json");
        m.save(&p).unwrap();
        let back = ClusterModel::load(&p).unwrap();
        assert_eq!(back, m);
        let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        assert_eq!(json["K"], 8);
        assert_eq!(json["D"], 16);
        assert_eq!(json["centroids"].as_array().unwrap().len(), 128);
    }
}
