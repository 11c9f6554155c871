//! Backward (stimulus-reconstruction) decoders: ridge regression from lagged
//! neural frames to audio features, and correlation-based stream choice.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::neural::NeuralRecording;

/// 0–250 ms at 100 Hz.
pub fn default_lags() -> Vec<usize> {
    (0..=25).collect()
}

pub const DEFAULT_LAMBDA: f64 = 1e2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionDecoder {
    /// (C·L) × F, row index `lag_index * C + channel`.
    pub weights: Vec<f64>,
    pub channels: usize,
    pub features: usize,
    pub lags: Vec<usize>,
    pub lambda: f64,
}

/// Design matrix T×(C·L): row t holds `z[c, t + lag]` for every lag and
/// channel, zero past the end. Channels are mean-centred per recording.
pub fn lagged_design(z: &NeuralRecording, lags: &[usize]) -> DMatrix<f64> {
    let (c_len, t_len) = (z.channels(), z.frames());
    let means: Vec<f64> = (0..c_len).map(|c| z.channel(c).iter().sum::<f64>() / t_len as f64).collect();
    DMatrix::from_fn(t_len, c_len * lags.len(), |t, col| {
        let (li, c) = (col / c_len, col % c_len);
        let src = t + lags[li];
        if src < t_len {
            z.at(c, src) - means[c]
        } else {
            0.0
        }
    })
}

fn center_columns(mut y: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in y.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    y
}

/// Accumulates XᵀX and XᵀY using a strided GEMM.
struct NormalEquations {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
}

impl NormalEquations {
    fn new(p: usize, f: usize) -> Self {
        Self { xtx: DMatrix::zeros(p, p), xty: DMatrix::zeros(p, f) }
    }

    fn add(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>) {
        let (t, p) = x.shape();
        let f = y.ncols();
        // nalgebra storage is column-major: element (i, j) at i + j*nrows
        unsafe {
            matrixmultiply::dgemm(
                p,
                t,
                p,
                1.0,
                x.as_ptr(),
                t as isize,
                1,
                x.as_ptr(),
                1,
                t as isize,
                1.0,
                self.xtx.as_mut_ptr(),
                1,
                p as isize,
            );
            matrixmultiply::dgemm(
                p,
                t,
                f,
                1.0,
                x.as_ptr(),
                t as isize,
                1,
                y.as_ptr(),
                1,
                t as isize,
                1.0,
                self.xty.as_mut_ptr(),
                1,
                p as isize,
            );
        }
    }

    fn solve(mut self, lambda: f64) -> Result<DMatrix<f64>> {
        for i in 0..self.xtx.nrows() {
            self.xtx[(i, i)] += lambda;
        }
        let chol = self.xtx.cholesky().ok_or_else(|| invalid("regularized normal matrix is not positive definite"))?;
        Ok(chol.solve(&self.xty))
    }
}

/// Closed-form ridge solution `(XᵀX + λI)⁻¹ XᵀY`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(invalid("ridge parameter must be positive"));
    }
    if x.nrows() != y.nrows() {
        return Err(invalid("design and target row counts differ"));
    }
    let mut ne = NormalEquations::new(x.ncols(), y.ncols());
    ne.add(x, y);
    ne.solve(lambda)
}

/// Fits one decoder over all recordings; each target is T×F (rows are
/// frames) and is truncated with its recording to the shorter length.
pub fn fit_reconstruction(
    dataset: &[(NeuralRecording, DMatrix<f64>)],
    lags: &[usize],
    lambda: f64,
) -> Result<ReconstructionDecoder> {
    if !(lambda > 0.0) {
        return Err(invalid("ridge parameter must be positive"));
    }
    if lags.is_empty() {
        return Err(invalid("need at least one lag"));
    }
    let (first, first_y) = dataset.first().ok_or_else(|| invalid("reconstruction training set is empty"))?;
    let (c, f) = (first.channels(), first_y.ncols());
    let mut ne = NormalEquations::new(c * lags.len(), f);
    for (z, y) in dataset {
        if z.channels() != c || y.ncols() != f {
            return Err(invalid("inconsistent shapes in reconstruction training set"));
        }
        let t = z.frames().min(y.nrows());
        let z = z.slice_frames(0, t)?;
        let x = lagged_design(&z, lags);
        let y = center_columns(y.rows(0, t).into_owned());
        ne.add(&x, &y);
    }
    let w = ne.solve(lambda)?;
    let (p, f) = w.shape();
    let mut weights = Vec::with_capacity(p * f);
    for i in 0..p {
        for j in 0..f {
            weights.push(w[(i, j)]);
        }
    }
    Ok(ReconstructionDecoder { weights, channels: c, features: f, lags: lags.to_vec(), lambda })
}

impl ReconstructionDecoder {
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.channels * self.lags.len(), self.features, &self.weights)
    }

    /// Reconstructed features, T×F.
    pub fn reconstruct(&self, z: &NeuralRecording) -> Result<DMatrix<f64>> {
        if z.channels() != self.channels {
            return Err(invalid("recording channel count does not match decoder"));
        }
        Ok(lagged_design(z, &self.lags) * self.weight_matrix())
    }
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn mean_band_correlation(recon: &DMatrix<f64>, cand: &DMatrix<f64>) -> f64 {
    let t = recon.nrows().min(cand.nrows());
    let f = recon.ncols();
    (0..f)
        .map(|j| {
            let r: Vec<f64> = recon.column(j).rows(0, t).iter().copied().collect();
            let c: Vec<f64> = cand.column(j).rows(0, t).iter().copied().collect();
            pearson(&r, &c)
        })
        .sum::<f64>()
        / f as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionChoice {
    /// Index of the chosen candidate (0 or 1).
    pub chosen: usize,
    pub correlations: [f64; 2],
}

/// Reconstructs features from `z` and picks the candidate with the higher
/// mean per-band Pearson correlation; ties go to the first.
pub fn select_by_reconstruction(
    dec: &ReconstructionDecoder,
    z: &NeuralRecording,
    candidates: [&DMatrix<f64>; 2],
) -> Result<ReconstructionChoice> {
    if candidates.iter().any(|c| c.ncols() != dec.features) {
        return Err(invalid("candidate feature dimension does not match decoder"));
    }
    let recon = dec.reconstruct(z)?;
    let correlations = [mean_band_correlation(&recon, candidates[0]), mean_band_correlation(&recon, candidates[1])];
    let chosen = usize::from(correlations[1] > correlations[0]);
    Ok(ReconstructionChoice { chosen, correlations })
}
