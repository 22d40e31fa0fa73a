//! Nearest-neighbour vector quantization with EMA codebook updates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// How codebook entries move during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookMode {
    /// Entries track assigned-feature means by exponential moving average;
    /// the β-weighted embed term carries no gradient.
    Ema,
    /// Entries are ordinary parameters trained through the β-weighted embed term.
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    pub beta: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub mode: CodebookMode,
    /// Entries whose EMA cluster size falls below this are reseeded.
    pub dead_threshold: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            decay: 0.99,
            epsilon: 1e-5,
            mode: CodebookMode::Ema,
            dead_threshold: 1e-3,
        }
    }
}

/// Index of the closest row of `codebook` (`[n, dim]`) for every row of
/// `features`; ties go to the lowest index.
pub fn nearest(codebook: &[f64], dim: usize, features: &[f64]) -> Result<Vec<usize>> {
    if dim == 0 || codebook.is_empty() || !codebook.len().is_multiple_of(dim) || !features.len().is_multiple_of(dim) {
        return Err(Error::shape("nearest", &[codebook.len(), dim], &[features.len(), dim]));
    }
    let n = codebook.len() / dim;
    Ok(features
        .chunks_exact(dim)
        .map(|z| {
            let mut best = (f64::INFINITY, 0);
            for e in 0..n {
                let d: f64 = codebook[e * dim..(e + 1) * dim]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, e);
                }
            }
            best.1
        })
        .collect())
}

/// `[N, d, h, w]` channel-first values as `[N·h·w, d]` rows, in the order
/// [`Codebook::quantize`] assigns indices.
pub fn channel_last_rows(data: &[f64], shape: &[usize]) -> Result<Vec<f64>> {
    let [n, d, h, w] = shape else {
        return Err(Error::shape("channel_last_rows", shape, &[0, 0, 0, 0]));
    };
    let (n, d, hw) = (*n, *d, h * w);
    if data.len() != n * d * hw {
        return Err(Error::shape("channel_last_rows", shape, &[data.len()]));
    }
    let mut out = Vec::with_capacity(data.len());
    for b in 0..n {
        for p in 0..hw {
            out.extend((0..d).map(|c| data[(b * d + c) * hw + p]));
        }
    }
    Ok(out)
}

/// Exponentiated entropy of the empirical index distribution.
pub fn perplexity(indices: &[usize], n: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("perplexity"));
    }
    let mut counts = vec![0usize; n.max(indices.iter().max().map_or(0, |m| m + 1))];
    indices.iter().for_each(|&i| counts[i] += 1);
    let total = indices.len() as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * libm::log(p)
        })
        .sum();
    Ok(libm::exp(entropy))
}

#[derive(Debug, Clone)]
pub struct Codebook {
    pub entries: ParamId,
    pub n: usize,
    pub dim: usize,
    pub ema_cluster_size: Vec<f64>,
    pub ema_sum: Vec<f64>,
    pub cfg: QuantizerConfig,
}

#[derive(Debug, Clone)]
pub struct QuantizeResult {
    pub indices: Vec<usize>,
    /// Straight-through quantized features, laid out like the input.
    pub quantized: Var,
    /// `commit + β·embed`.
    pub codebook_loss: Var,
    pub commit: f64,
    pub embed: f64,
}

impl Codebook {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, n: usize, dim: usize, cfg: QuantizerConfig, rng: &mut R) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::Config(format!("{name}: codebook needs n >= 1 and dim >= 1")));
        }
        if !(cfg.decay > 0.0 && cfg.decay < 1.0) {
            return Err(Error::Config(format!("{name}: decay must lie in (0,1)")));
        }
        let init = Tensor::uniform(&[n, dim], -1.0 / n as f64, 1.0 / n as f64, rng);
        let ema_sum = init.data().to_vec();
        let entries = store.add(format!("{name}/entries"), init)?;
        Ok(Self {
            entries,
            n,
            dim,
            ema_cluster_size: vec![1.0; n],
            ema_sum,
            cfg,
        })
    }

    pub fn nearest(&self, store: &ParamStore, features: &[f64]) -> Result<Vec<usize>> {
        nearest(store.get(self.entries).data(), self.dim, features)
    }

    /// Quantizes `z`, shaped `[P, d]` or channel-first `[N, d, h, w]`.
    pub fn quantize(&self, t: &mut Tape, z: Var) -> Result<QuantizeResult> {
        let shape = t.shape(z).to_vec();
        let (rows_var, back) = match shape.as_slice() {
            [_, d] if *d == self.dim => (z, None),
            [n, d, h, w] if *d == self.dim => {
                let p = t.permute(z, &[0, 2, 3, 1])?;
                (t.reshape(p, &[n * h * w, *d])?, Some([*n, *h, *w, *d]))
            }
            _ => return Err(Error::shape("quantize", &shape, &[self.dim])),
        };
        let indices = nearest(t.param_data(self.entries), self.dim, t.value(rows_var))?;
        let book = match self.cfg.mode {
            CodebookMode::Loss => t.param(self.entries),
            CodebookMode::Ema => {
                let vals = t.param_data(self.entries).to_vec();
                t.constant(&[self.n, self.dim], vals)?
            }
        };
        let q = t.embedding_lookup(book, &indices)?;
        let rows = indices.len() as f64;
        let q_sg = t.detach(q);
        let z_sg = t.detach(rows_var);

        let dc = t.sub(rows_var, q_sg)?;
        let dc = t.square(dc)?;
        let commit = t.sum(dc)?;
        let commit = t.scale(commit, 1.0 / rows)?;
        let de = t.sub(z_sg, q)?;
        let de = t.square(de)?;
        let embed = t.sum(de)?;
        let embed = t.scale(embed, 1.0 / rows)?;
        let weighted = t.scale(embed, self.cfg.beta)?;
        let codebook_loss = t.add(commit, weighted)?;

        // sg(ẑ) + (z − sg(z)): the value is exactly ẑ since z − z = 0,
        // while the gradient passes to z unchanged.
        let zero = t.sub(rows_var, z_sg)?;
        let st = t.add(q_sg, zero)?;
        let quantized = match back {
            None => st,
            Some([n, h, w, d]) => {
                let r = t.reshape(st, &[n, h, w, d])?;
                t.permute(r, &[0, 3, 1, 2])?
            }
        };
        Ok(QuantizeResult {
            indices,
            quantized,
            codebook_loss,
            commit: t.scalar(commit),
            embed: t.scalar(embed),
        })
    }

    /// One EMA step from feature rows (`[P, d]`, row-major) and their assignments.
    pub fn ema_update(&mut self, store: &mut ParamStore, features: &[f64], indices: &[usize]) -> Result<()> {
        if features.len() != indices.len() * self.dim {
            return Err(Error::shape("ema_update", &[features.len()], &[indices.len(), self.dim]));
        }
        let d = self.cfg.decay;
        let mut counts = vec![0.0; self.n];
        let mut sums = vec![0.0; self.n * self.dim];
        for (row, &k) in features.chunks_exact(self.dim).zip(indices) {
            if k >= self.n {
                return Err(Error::invalid("ema_update", format!("index {k} out of range")));
            }
            counts[k] += 1.0;
            sums[k * self.dim..(k + 1) * self.dim]
                .iter_mut()
                .zip(row)
                .for_each(|(s, x)| *s += x);
        }
        for (cs, c) in self.ema_cluster_size.iter_mut().zip(&counts) {
            *cs = d * *cs + (1.0 - d) * c;
        }
        for (s, x) in self.ema_sum.iter_mut().zip(&sums) {
            *s = d * *s + (1.0 - d) * x;
        }
        self.refresh_entries(store);
        Ok(())
    }

    fn refresh_entries(&self, store: &mut ParamStore) {
        let entries = store.get_mut(self.entries).data_mut();
        for k in 0..self.n {
            let denom = self.ema_cluster_size[k] + self.cfg.epsilon;
            for j in 0..self.dim {
                entries[k * self.dim + j] = self.ema_sum[k * self.dim + j] / denom;
            }
        }
    }

    /// Resets entries whose cluster size dropped below the dead threshold to
    /// randomly chosen feature rows. Returns how many were reseeded.
    pub fn reseed_dead<R: Rng + ?Sized>(&mut self, store: &mut ParamStore, features: &[f64], rng: &mut R) -> usize {
        let rows = features.len() / self.dim;
        if rows == 0 || self.cfg.mode != CodebookMode::Ema {
            return 0;
        }
        let mut reseeded = 0;
        for k in 0..self.n {
            if self.ema_cluster_size[k] < self.cfg.dead_threshold {
                let r = rng.random_range(0..rows);
                let row = &features[r * self.dim..(r + 1) * self.dim];
                self.ema_sum[k * self.dim..(k + 1) * self.dim].copy_from_slice(row);
                self.ema_cluster_size[k] = 1.0;
                reseeded += 1;
            }
        }
        if reseeded > 0 {
            self.refresh_entries(store);
        }
        reseeded
    }
}
