use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};

use super::AudioSignal;
use crate::error::{invalid, Result};

pub const DEFAULT_ENVELOPE_FRAME_MS: f64 = 10.0;
pub const DEFAULT_MEL_FRAME_MS: f64 = 25.0;
pub const DEFAULT_MEL_BANDS: usize = 40;

fn frame_samples(rate_hz: u32, frame_ms: f64) -> usize {
    ((frame_ms * f64::from(rate_hz) / 1000.0).round() as usize).max(1)
}

/// Per-frame RMS over non-overlapping frames; the trailing partial frame is
/// measured over the samples it has.
pub fn envelope(x: &AudioSignal, frame_ms: f64) -> Vec<f64> {
    let frame = frame_samples(x.sample_rate_hz(), frame_ms);
    x.samples().chunks(frame).map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt()).collect()
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edge and centre frequencies of the triangular filters: `n_bands + 2`
/// points evenly spaced on the mel scale from 0 Hz to Nyquist.
fn mel_points(rate_hz: u32, n_bands: usize) -> Vec<f64> {
    let top = hz_to_mel(f64::from(rate_hz) / 2.0);
    (0..n_bands + 2).map(|i| mel_to_hz(top * i as f64 / (n_bands + 1) as f64)).collect()
}

pub fn mel_band_centers(rate_hz: u32, n_bands: usize) -> Vec<f64> {
    mel_points(rate_hz, n_bands)[1..=n_bands].to_vec()
}

/// Log-compressed triangular-filterbank energies, `log(1 + E)`, one row per
/// non-overlapping frame (the last frame is zero padded).
pub fn mel_features(x: &AudioSignal, n_bands: usize, frame_ms: f64) -> Result<DMatrix<f64>> {
    if n_bands == 0 {
        return Err(invalid("need at least one mel band"));
    }
    if !(frame_ms.is_finite() && frame_ms > 0.0) {
        return Err(invalid("frame length must be positive"));
    }
    let rate = x.sample_rate_hz();
    let n_fft = frame_samples(rate, frame_ms);
    let n_bins = n_fft / 2 + 1;
    if n_bands > n_fft / 2 {
        return Err(invalid(format!(
            "{n_bands} bands exceed the {} resolvable bins of a {n_fft}-sample frame",
            n_fft / 2
        )));
    }

    let points = mel_points(rate, n_bands);
    let bin_hz = f64::from(rate) / n_fft as f64;
    // filter weights, bands × bins
    let weights: Vec<Vec<f64>> = (0..n_bands)
        .map(|b| {
            let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect();
    let window: Vec<f64> =
        (0..n_fft).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n_fft as f64).cos()).collect();

    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let frames: Vec<&[f64]> = x.samples().chunks(n_fft).collect();
    let mut out = DMatrix::zeros(frames.len(), n_bands);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (r, frame) in frames.iter().enumerate() {
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = frame.get(i).copied().unwrap_or(0.0);
            *slot = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        let spectrum: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr() / n_fft as f64).collect();
        for (b, w) in weights.iter().enumerate() {
            let e: f64 = w.iter().zip(&spectrum).map(|(w, p)| w * p).sum();
            out[(r, b)] = e.ln_1p();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: Vec<f64>, rate: u32) -> AudioSignal {
        AudioSignal::new(v, rate).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn envelope_of_constant_and_zero() {
        let e = envelope(&sig(vec![-0.7; 1000], 16000), 10.0);
        assert_eq!(e.len(), 7); // ceil(1000/160)
        assert!(e.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let z = envelope(&sig(vec![0.0; 480], 16000), 10.0);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn envelope_tracks_modulator() {
        let rate = 16000;
        let n = 32000;
        let modulator = |t: f64| 1.0 + 0.8 * (std::f64::consts::TAU * 3.0 * t).sin();
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                modulator(t) * (std::f64::consts::TAU * 1000.0 * t).sin()
            })
            .collect();
        let env = envelope(&sig(x, rate), 10.0);
        let truth: Vec<f64> = (0..env.len()).map(|k| modulator((k as f64 + 0.5) * 0.01)).collect();
        assert!(pearson(&env, &truth) > 0.95);
    }

    #[test]
    fn mel_shape_and_zero() {
        let m = mel_features(&sig(vec![0.0; 1000], 16000), 40, 25.0).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 40)); // ceil(1000/400)
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mel_rejects_too_many_bands() {
        // 1 ms at 16 kHz is 16 samples, 8 resolvable bins
        assert!(mel_features(&sig(vec![0.0; 100], 16000), 9, 1.0).is_err());
        assert!(mel_features(&sig(vec![0.0; 100], 16000), 0, 25.0).is_err());
        assert!(mel_features(&sig(vec![0.0; 100], 16000), 8, 1.0).is_ok());
    }

    #[test]
    fn tone_lands_in_its_band() {
        let rate = 16000;
        let centers = mel_band_centers(rate, 40);
        for band in [12usize, 20, 30, 38] {
            let f = centers[band];
            let x: Vec<f64> = (0..8000).map(|i| (std::f64::consts::TAU * f * i as f64 / rate as f64).sin()).collect();
            let m = mel_features(&sig(x, rate), 40, 25.0).unwrap();
            let row = m.row(5);
            let argmax = (0..40).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(argmax, band, "tone at {f} Hz");
        }
    }

    #[test]
    fn frame_shift_covariance() {
        let rate = 16000;
        let x: Vec<f64> = (0..4000).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let mut delayed = vec![0.0; 400];
        delayed.extend_from_slice(&x);
        let e0 = envelope(&sig(x.clone(), rate), 25.0);
        let e1 = envelope(&sig(delayed.clone(), rate), 25.0);
        assert_eq!(e1[0], 0.0);
        assert_eq!(&e1[1..], &e0[..]);
        let m0 = mel_features(&sig(x, rate), 40, 25.0).unwrap();
        let m1 = mel_features(&sig(delayed, rate), 40, 25.0).unwrap();
        for r in 0..m0.nrows() {
            for c in 0..40 {
                assert!((m0[(r, c)] - m1[(r + 1, c)]).abs() < 1e-12);
            }
        }
    }
}
