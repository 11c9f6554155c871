use aad_core::eval::text::{bleu, edit_distance, lcs_len, meteor_lite, rouge_l, wer, Normalizer};
use aad_core::intention::{build_cot_prefix, parse_output};
use aad_core::separation::{select_stream, si_sdr, snr, DB_CAP};
use aad_core::speaker::{ClusterModel, SpeakerEmbedding};
use proptest::prelude::*;

fn tokens() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..5, 1..12)
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #[test]
    fn assign_label_is_nearest_centroid(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..9),
        x in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let model = ClusterModel::from_centroids(rows.clone(), 0, "prop").unwrap();
        let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        for (k, c) in rows.iter().enumerate() {
            if dist(c) < dist(&rows[best]) {
                best = k;
            }
        }
        prop_assert_eq!(model.assign_label(&SpeakerEmbedding::new(x).unwrap()).unwrap(), best);
    }

    #[test]
    fn cot_round_trip(k in 1usize..16, a in 0usize..16, s1 in 0usize..16, s2 in 0usize..16, answer in "[A-Za-z][A-Za-z ,.]{0,30}[a-z.]") {
        prop_assume!(a < k && s1 < k && s2 < k);
        let prefix = build_cot_prefix(a, s1, s2, k).unwrap();
        let out = parse_output(&format!("{prefix}\n{answer}"), k);
        let cot = out.parsed_cot.unwrap();
        prop_assert_eq!((cot.attention, cot.spk1, cot.spk2), (a, s1, s2));
        prop_assert_eq!(out.answer_text, answer.trim());
    }

    #[test]
    fn out_of_range_labels_rejected(k in 1usize..8, extra in 0usize..4) {
        prop_assert!(build_cot_prefix(k + extra, 0, 0, k).is_err());
    }

    #[test]
    fn edit_distance_is_a_metric(a in tokens(), b in tokens(), c in tokens()) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert!(edit_distance(&a, &b) <= a.len().max(b.len()));
        prop_assert!(edit_distance(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert_eq!(wer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn overlap_metrics_bounded(a in tokens(), b in tokens()) {
        let l = lcs_len(&a, &b);
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(l, lcs_len(&b, &a));
        for v in [bleu(&a, &b).unwrap(), rouge_l(&a, &[&b[..]]).unwrap(), meteor_lite(&a, &b).unwrap()] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v), "{}", v);
        }
        prop_assert!((rouge_l(&a, &[&a[..]]).unwrap() - 100.0).abs() < 1e-9);
        prop_assert!((meteor_lite(&a, &a).unwrap() - 100.0 * (1.0 - 0.5 / (a.len() as f64).powi(3))).abs() < 1e-9);
    }

    #[test]
    fn rouge_takes_best_reference(a in tokens(), b in tokens(), c in tokens()) {
        let both = rouge_l(&a, &[&b[..], &c[..]]).unwrap();
        let best = rouge_l(&a, &[&b[..]]).unwrap().max(rouge_l(&a, &[&c[..]]).unwrap());
        prop_assert_eq!(both, best);
    }

    #[test]
    fn normalized_tokens_are_plain(text in "\\PC{0,40}") {
        for t in Normalizer::default().tokens(&text) {
            prop_assert!(!t.is_empty());
            prop_assert!(t.chars().all(char::is_alphanumeric), "{:?}", t);
            prop_assert_eq!(t.to_lowercase(), t.clone());
        }
    }

    #[test]
    fn si_sdr_ignores_gain(est in signal(64), reference in signal(64), beta in 0.01f64..100.0) {
        prop_assume!(est.iter().map(|v| v * v).sum::<f64>() > 1e-3 && reference.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let scaled: Vec<f64> = est.iter().map(|v| v * beta).collect();
        let (x, y) = (si_sdr(&est, &reference).unwrap(), si_sdr(&scaled, &reference).unwrap());
        prop_assert!((x - y).abs() < 1e-6 || (x.abs() >= DB_CAP && y.abs() >= DB_CAP), "{} vs {}", x, y);
        prop_assert!(x <= DB_CAP && x >= -DB_CAP);
    }

    #[test]
    fn perfect_estimate_hits_cap(reference in signal(64)) {
        prop_assume!(reference.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        prop_assert_eq!(snr(&reference, &reference).unwrap(), DB_CAP);
    }

    #[test]
    fn selection_picks_nearer_stream(
        t in prop::collection::vec(-1.0f64..1.0, 6),
        a in prop::collection::vec(-1.0f64..1.0, 6),
        b in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let d = |x: &Vec<f64>| x.iter().zip(&t).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        let e = |v: Vec<f64>| SpeakerEmbedding::new(v).unwrap();
        let expected = if d(&b) < d(&a) { 1 } else { 0 };
        prop_assert_eq!(select_stream(&e(t.clone()), [&e(a), &e(b)]).unwrap(), expected);
    }
}
