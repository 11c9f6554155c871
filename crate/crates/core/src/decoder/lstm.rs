//! LayerNorm → BiLSTM → mean pool → FC → ReLU → FC → softmax classifier
//! with exact backpropagation.
//!
//! All parameters live in one flat vector. Blob order (also the checkpoint
//! order):
//!
//! | block          | shape          |
//! |----------------|----------------|
//! | `ln_gain`      | C              |
//! | `ln_bias`      | C              |
//! | `fwd_w`        | 4S × (C+S)     |
//! | `fwd_b`        | 4S             |
//! | `bwd_w`        | 4S × (C+S)     |
//! | `bwd_b`        | 4S             |
//! | `fc1_w`        | H × 2S         |
//! | `fc1_b`        | H              |
//! | `fc2_w`        | K × H          |
//! | `fc2_b`        | K              |
//!
//! Matrices are row-major. LSTM gate rows are ordered input, forget, cell,
//! output; within a row the first C columns act on the frame and the last S
//! on the previous hidden state.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural::NeuralRecording;
use crate::rng;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_FC_HIDDEN: usize = 128;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "S")]
    pub hidden: usize,
    #[serde(rename = "H")]
    pub fc_hidden: usize,
    #[serde(rename = "K")]
    pub classes: usize,
}

impl Dims {
    pub fn new(channels: usize, hidden: usize, fc_hidden: usize, classes: usize) -> Result<Self> {
        if channels == 0 || hidden == 0 || fc_hidden == 0 || classes < 2 {
            return Err(invalid("model dimensions must be positive with at least two classes"));
        }
        Ok(Self { channels, hidden, fc_hidden, classes })
    }

    /// C channels, S=64, FC width 128, K classes.
    pub fn standard(channels: usize, classes: usize) -> Result<Self> {
        Self::new(channels, DEFAULT_HIDDEN, DEFAULT_FC_HIDDEN, classes)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(*self)
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub dims: Dims,
    pub ln_gain: Range<usize>,
    pub ln_bias: Range<usize>,
    pub dir_w: [Range<usize>; 2],
    pub dir_b: [Range<usize>; 2],
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
    pub len: usize,
}

impl Layout {
    fn new(dims: Dims) -> Self {
        let Dims { channels: c, hidden: s, fc_hidden: h, classes: k } = dims;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let ln_gain = take(c);
        let ln_bias = take(c);
        let fw = take(4 * s * (c + s));
        let fb = take(4 * s);
        let bw = take(4 * s * (c + s));
        let bb = take(4 * s);
        let fc1_w = take(h * 2 * s);
        let fc1_b = take(h);
        let fc2_w = take(k * h);
        let fc2_b = take(k);
        Self { dims, ln_gain, ln_bias, dir_w: [fw, bw], dir_b: [fb, bb], fc1_w, fc1_b, fc2_w, fc2_b, len: at }
    }

    /// Named blocks, in blob order.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("ln_gain", self.ln_gain.clone()),
            ("ln_bias", self.ln_bias.clone()),
            ("fwd_w", self.dir_w[0].clone()),
            ("fwd_b", self.dir_b[0].clone()),
            ("bwd_w", self.dir_w[1].clone()),
            ("bwd_b", self.dir_b[1].clone()),
            ("fc1_w", self.fc1_w.clone()),
            ("fc1_b", self.fc1_b.clone()),
            ("fc2_w", self.fc2_w.clone()),
            ("fc2_b", self.fc2_b.clone()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDecoderModel {
    layout: Layout,
    params: Vec<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    #[serde(rename = "C")]
    c: usize,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "H")]
    h: usize,
    seed: u64,
    n_params: usize,
    blocks: Vec<String>,
}

impl AttentionDecoderModel {
    /// LayerNorm gain 1 and bias 0; every other block uniform in
    /// ±1/√fan_in of its layer.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let layout = dims.layout();
        let mut params = vec![0.0; layout.len];
        let mut r = rng::rng_at(seed, &[0x1417]);
        params[layout.ln_gain.clone()].fill(1.0);
        let mut fill = |range: Range<usize>, fan_in: usize, r: &mut rng::Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = r.random_range(-bound..bound);
            }
        };
        let Dims { channels: c, hidden: s, fc_hidden: h, .. } = dims;
        for d in 0..2 {
            fill(layout.dir_w[d].clone(), c + s, &mut r);
            fill(layout.dir_b[d].clone(), c + s, &mut r);
        }
        fill(layout.fc1_w.clone(), 2 * s, &mut r);
        fill(layout.fc1_b.clone(), 2 * s, &mut r);
        fill(layout.fc2_w.clone(), h, &mut r);
        fill(layout.fc2_b.clone(), h, &mut r);
        Self { layout, params, seed }
    }

    pub fn from_params(dims: Dims, params: Vec<f64>, seed: u64) -> Result<Self> {
        let layout = dims.layout();
        if params.len() != layout.len {
            return Err(invalid(format!("expected {} parameters, got {}", layout.len, params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("model weights must be finite"));
        }
        Ok(Self { layout, params, seed })
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, z: &NeuralRecording) -> Result<()> {
        if z.channels() != self.dims().channels {
            return Err(invalid(format!(
                "recording has {} channels, model expects {}",
                z.channels(),
                self.dims().channels
            )));
        }
        Ok(())
    }

    /// Class probabilities for one recording.
    pub fn forward(&self, z: &NeuralRecording) -> Result<Vec<f64>> {
        self.check_input(z)?;
        Ok(self.run_forward(z).probs)
    }

    /// Cross-entropy loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, z: &NeuralRecording, label: usize) -> Result<(f64, Vec<f64>)> {
        self.check_input(z)?;
        if label >= self.dims().classes {
            return Err(invalid(format!("label {label} out of range")));
        }
        let cache = self.run_forward(z);
        let loss = -cache.probs[label].max(f64::MIN_POSITIVE).ln();
        let grad = self.backward(&cache, label);
        Ok((loss, grad))
    }

    pub fn loss(&self, z: &NeuralRecording, label: usize) -> Result<f64> {
        let p = self.forward(z)?;
        if label >= p.len() {
            return Err(invalid(format!("label {label} out of range")));
        }
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }

    fn run_forward(&self, z: &NeuralRecording) -> ForwardCache {
        let Dims { channels: c, hidden: s, fc_hidden: h, classes: k } = self.dims();
        let t_len = z.frames();
        let l = &self.layout;
        let p = &self.params;

        // layer norm, output time-major T×C
        let gain = &p[l.ln_gain.clone()];
        let bias = &p[l.ln_bias.clone()];
        let mut xhat = vec![0.0; t_len * c];
        let mut y = vec![0.0; t_len * c];
        for t in 0..t_len {
            let mean = (0..c).map(|ch| z.at(ch, t)).sum::<f64>() / c as f64;
            let var = (0..c).map(|ch| (z.at(ch, t) - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for ch in 0..c {
                let xh = (z.at(ch, t) - mean) * is;
                xhat[t * c + ch] = xh;
                y[t * c + ch] = gain[ch] * xh + bias[ch];
            }
        }

        let (fwd, bwd) = rayon::join(|| self.run_direction(0, &y, t_len), || self.run_direction(1, &y, t_len));

        let mut pooled = vec![0.0; 2 * s];
        for (d, run) in [&fwd, &bwd].into_iter().enumerate() {
            for t in 0..t_len {
                for j in 0..s {
                    pooled[d * s + j] += run.h[t * s + j];
                }
            }
        }
        pooled.iter_mut().for_each(|v| *v /= t_len as f64);

        let a1 = affine(&p[l.fc1_w.clone()], &p[l.fc1_b.clone()], &pooled, h);
        let r1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
        let logits = affine(&p[l.fc2_w.clone()], &p[l.fc2_b.clone()], &r1, k);
        let probs = softmax(&logits);

        ForwardCache { t_len, xhat, y, dirs: [fwd, bwd], pooled, a1, r1, probs }
    }

    /// One LSTM direction over the normalized frames. Caches are indexed by
    /// real time, not processing order.
    fn run_direction(&self, d: usize, y: &[f64], t_len: usize) -> DirCache {
        let Dims { channels: c, hidden: s, .. } = self.dims();
        let g4 = 4 * s;
        let w = &self.params[self.layout.dir_w[d].clone()];
        let b = &self.params[self.layout.dir_b[d].clone()];
        let row = c + s;

        // input projections for all frames at once: T×4S = Y(T×C) · W_xᵀ
        let mut pre = vec![0.0; t_len * g4];
        unsafe {
            matrixmultiply::dgemm(
                t_len,
                c,
                g4,
                1.0,
                y.as_ptr(),
                c as isize,
                1,
                w.as_ptr(),
                1,
                row as isize,
                0.0,
                pre.as_mut_ptr(),
                g4 as isize,
                1,
            );
        }
        // recurrent weights transposed to S×4S for axpy-style products
        let mut wh_t = vec![0.0; s * g4];
        for r in 0..g4 {
            for j in 0..s {
                wh_t[j * g4 + r] = w[r * row + c + j];
            }
        }

        let mut gates = vec![0.0; t_len * g4];
        let mut cells = vec![0.0; t_len * s];
        let mut cell_tanh = vec![0.0; t_len * s];
        let mut hs = vec![0.0; t_len * s];
        let mut h_prev = vec![0.0; s];
        let mut c_prev = vec![0.0; s];
        let mut acc = vec![0.0; g4];
        for step in 0..t_len {
            let t = if d == 0 { step } else { t_len - 1 - step };
            acc.copy_from_slice(&pre[t * g4..(t + 1) * g4]);
            for (a, bv) in acc.iter_mut().zip(b) {
                *a += bv;
            }
            for (j, &hj) in h_prev.iter().enumerate() {
                if hj != 0.0 {
                    for (a, wv) in acc.iter_mut().zip(&wh_t[j * g4..(j + 1) * g4]) {
                        *a += hj * wv;
                    }
                }
            }
            let gt = &mut gates[t * g4..(t + 1) * g4];
            for q in 0..s {
                gt[q] = sigmoid(acc[q]);
                gt[s + q] = sigmoid(acc[s + q]);
                gt[2 * s + q] = tanh(acc[2 * s + q]);
                gt[3 * s + q] = sigmoid(acc[3 * s + q]);
            }
            for q in 0..s {
                let cell = gt[s + q] * c_prev[q] + gt[q] * gt[2 * s + q];
                cells[t * s + q] = cell;
                let tc = tanh(cell);
                cell_tanh[t * s + q] = tc;
                let hv = gt[3 * s + q] * tc;
                hs[t * s + q] = hv;
                c_prev[q] = cell;
                h_prev[q] = hv;
            }
        }
        DirCache { gates, c: cells, tc: cell_tanh, h: hs }
    }

    fn backward(&self, cache: &ForwardCache, label: usize) -> Vec<f64> {
        let Dims { channels: c, hidden: s, fc_hidden: h, classes: k } = self.dims();
        let l = &self.layout;
        let p = &self.params;
        let t_len = cache.t_len;
        let mut grad = vec![0.0; l.len];

        let mut dlogits = cache.probs.clone();
        dlogits[label] -= 1.0;
        outer_add(&mut grad[l.fc2_w.clone()], &dlogits, &cache.r1);
        add_into(&mut grad[l.fc2_b.clone()], &dlogits);
        let w2 = &p[l.fc2_w.clone()];
        let mut da1 = vec![0.0; h];
        for (o, dl) in dlogits.iter().enumerate().take(k) {
            for (j, v) in da1.iter_mut().enumerate() {
                *v += dl * w2[o * h + j];
            }
        }
        for (v, a) in da1.iter_mut().zip(&cache.a1) {
            if *a <= 0.0 {
                *v = 0.0;
            }
        }
        outer_add(&mut grad[l.fc1_w.clone()], &da1, &cache.pooled);
        add_into(&mut grad[l.fc1_b.clone()], &da1);
        let w1 = &p[l.fc1_w.clone()];
        let mut dpooled = vec![0.0; 2 * s];
        for (o, d) in da1.iter().enumerate() {
            for (j, v) in dpooled.iter_mut().enumerate() {
                *v += d * w1[o * 2 * s + j];
            }
        }
        // mean pooling spreads the same gradient over every frame
        let dh_frame: Vec<f64> = dpooled.iter().map(|v| v / t_len as f64).collect();

        let (gf, gb) = rayon::join(
            || self.backward_direction(0, cache, &dh_frame[..s]),
            || self.backward_direction(1, cache, &dh_frame[s..]),
        );
        let mut dy = vec![0.0; t_len * c];
        for (d, (dw, db, dyd)) in [gf, gb].into_iter().enumerate() {
            add_into(&mut grad[l.dir_w[d].clone()], &dw);
            add_into(&mut grad[l.dir_b[d].clone()], &db);
            add_into(&mut dy, &dyd);
        }

        // layer norm parameters; input gradient is not needed
        let (g_lo, b_lo) = (l.ln_gain.start, l.ln_bias.start);
        for t in 0..t_len {
            for ch in 0..c {
                let dyv = dy[t * c + ch];
                grad[g_lo + ch] += dyv * cache.xhat[t * c + ch];
                grad[b_lo + ch] += dyv;
            }
        }
        grad
    }

    /// Returns (dW, db, dY) for one direction.
    fn backward_direction(&self, d: usize, cache: &ForwardCache, dh_ext: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let Dims { channels: c, hidden: s, .. } = self.dims();
        let g4 = 4 * s;
        let row = c + s;
        let t_len = cache.t_len;
        let w = &self.params[self.layout.dir_w[d].clone()];
        let run = &cache.dirs[d];

        // previous hidden/cell in processing order
        let prev = |t: usize| -> Option<usize> {
            if d == 0 {
                t.checked_sub(1)
            } else if t + 1 < t_len {
                Some(t + 1)
            } else {
                None
            }
        };

        let mut dz_all = vec![0.0; t_len * g4];
        let mut h_prev_all = vec![0.0; t_len * s];
        let mut dh_next = vec![0.0; s];
        let mut dc_next = vec![0.0; s];
        for step in (0..t_len).rev() {
            let t = if d == 0 { step } else { t_len - 1 - step };
            let gt = &run.gates[t * g4..(t + 1) * g4];
            let pt = prev(t);
            let dz = &mut dz_all[t * g4..(t + 1) * g4];
            for q in 0..s {
                let (i, f, g, o) = (gt[q], gt[s + q], gt[2 * s + q], gt[3 * s + q]);
                let tc = run.tc[t * s + q];
                let c_prev = pt.map_or(0.0, |u| run.c[u * s + q]);
                let dh = dh_ext[q] + dh_next[q];
                let dc = dc_next[q] + dh * o * (1.0 - tc * tc);
                dz[q] = dc * g * i * (1.0 - i);
                dz[s + q] = dc * c_prev * f * (1.0 - f);
                dz[2 * s + q] = dc * i * (1.0 - g * g);
                dz[3 * s + q] = dh * tc * o * (1.0 - o);
                dc_next[q] = dc * f;
            }
            if let Some(u) = pt {
                h_prev_all[t * s..(t + 1) * s].copy_from_slice(&run.h[u * s..(u + 1) * s]);
            }
            dh_next.fill(0.0);
            for r in 0..g4 {
                let dzr = dz[r];
                if dzr != 0.0 {
                    let wr = &w[r * row + c..(r + 1) * row];
                    for (acc, wv) in dh_next.iter_mut().zip(wr) {
                        *acc += dzr * wv;
                    }
                }
            }
        }

        let mut dw = vec![0.0; g4 * row];
        unsafe {
            // dW_x = DZᵀ · Y  (4S×C), written into the first C columns
            matrixmultiply::dgemm(
                g4,
                t_len,
                c,
                1.0,
                dz_all.as_ptr(),
                1,
                g4 as isize,
                cache.y.as_ptr(),
                c as isize,
                1,
                0.0,
                dw.as_mut_ptr(),
                row as isize,
                1,
            );
            // dW_h = DZᵀ · H_prev (4S×S), last S columns
            matrixmultiply::dgemm(
                g4,
                t_len,
                s,
                1.0,
                dz_all.as_ptr(),
                1,
                g4 as isize,
                h_prev_all.as_ptr(),
                s as isize,
                1,
                0.0,
                dw.as_mut_ptr().add(c),
                row as isize,
                1,
            );
        }
        let mut db = vec![0.0; g4];
        for t in 0..t_len {
            add_into(&mut db, &dz_all[t * g4..(t + 1) * g4]);
        }
        // dY = DZ · W_x  (T×C)
        let mut dy = vec![0.0; t_len * c];
        unsafe {
            matrixmultiply::dgemm(
                t_len,
                g4,
                c,
                1.0,
                dz_all.as_ptr(),
                g4 as isize,
                1,
                w.as_ptr(),
                row as isize,
                1,
                0.0,
                dy.as_mut_ptr(),
                c as isize,
                1,
            );
        }
        (dw, db, dy)
    }

    /// One JSON header line followed by the f64 little-endian blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dims();
        let header = CheckpointHeader {
            c: d.channels,
            s: d.hidden,
            k: d.classes,
            h: d.fc_hidden,
            seed: self.seed,
            n_params: self.params.len(),
            blocks: self.layout.blocks().into_iter().map(|(n, _)| n.to_string()).collect(),
        };
        let mut buf = serde_json::to_vec(&header)?;
        buf.push(b'\n');
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse(format!("{}: missing checkpoint header", path.display())))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        let blob = &bytes[nl + 1..];
        if blob.len() != 8 * header.n_params {
            return Err(Error::Parse(format!("{}: weight blob has wrong size", path.display())));
        }
        let params = blob.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let dims = Dims::new(header.c, header.s, header.h, header.k)?;
        Self::from_params(dims, params, header.seed)
    }
}

struct DirCache {
    gates: Vec<f64>,
    c: Vec<f64>,
    /// tanh of the cell state.
    tc: Vec<f64>,
    h: Vec<f64>,
}

struct ForwardCache {
    t_len: usize,
    xhat: Vec<f64>,
    y: Vec<f64>,
    dirs: [DirCache; 2],
    pooled: Vec<f64>,
    a1: Vec<f64>,
    r1: Vec<f64>,
    probs: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same as `f64::tanh` to rounding, at the cost of one `exp`.
pub(crate) fn tanh(x: f64) -> f64 {
    2.0 * sigmoid(2.0 * x) - 1.0
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    (0..out).map(|o| b[o] + w[o * n..(o + 1) * n].iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).collect()
}

fn outer_add(dst: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (r, rv) in rows.iter().enumerate() {
        for (d, cv) in dst[r * n..(r + 1) * n].iter_mut().zip(cols) {
            *d += rv * cv;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
