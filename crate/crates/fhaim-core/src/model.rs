//! The clear-text Generate step: fit a full-joint distribution to the noisy
//! measurement log by entropic mirror descent and sample synthetic records.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{Dataset, DatasetSchema};
use crate::protocols::Clique;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("domain size {omega} exceeds the cell cap {cap}")]
    CellCapExceeded { omega: u64, cap: u64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint decode: {0}")]
    CheckpointDecode(String),
    #[error("checkpoint schema hash mismatch")]
    SchemaHashMismatch,
}

pub const DEFAULT_CELL_CAP: u64 = 1_000_000;

/// One released noisy marginal, tagged with the phase that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub clique: Clique,
    /// noisy counts ỹ, length ω_w
    pub values: Vec<f64>,
    pub sigma: f64,
    pub phase: MeasurementPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementPhase {
    Init,
    Round(usize),
}

/// Weight 1/σ² with the σ = 0 (ε = ∞) sentinel replaced by a large constant.
pub const NOISELESS_WEIGHT: f64 = 1e6;

fn measurement_weight(sigma: f64) -> f64 {
    if sigma == 0.0 {
        NOISELESS_WEIGHT
    } else {
        1.0 / (sigma * sigma)
    }
}

/// Full-joint distribution over Ω = Π ω_i, row-major (attribute 0 slowest).
#[derive(Debug, Clone)]
pub struct JointDistribution {
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
}

impl JointDistribution {
    pub fn uniform(sizes: &[usize]) -> Result<Self, ModelError> {
        let omega: u64 = sizes.iter().map(|&s| s as u64).product();
        if omega > DEFAULT_CELL_CAP {
            return Err(ModelError::CellCapExceeded { omega, cap: DEFAULT_CELL_CAP });
        }
        let n = omega as usize;
        Ok(JointDistribution { sizes: sizes.to_vec(), probs: vec![1.0 / n as f64; n] })
    }

    /// Row-major strides: index = Σ code_i · stride_i.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.sizes)
    }

    pub fn decode(&self, mut index: usize) -> Vec<u32> {
        let mut codes = vec![0u32; self.sizes.len()];
        for (i, &s) in self.sizes.iter().enumerate().rev() {
            codes[i] = (index % s) as u32;
            index /= s;
        }
        codes
    }

    /// Model-implied marginal of `w`, scaled to mass `n` (counts), in the same
    /// row-major cell order as the encrypted marginals.
    pub fn marginal_of(&self, w: &Clique, n: f64) -> Vec<f64> {
        let cell_of = CellMap::new(&self.sizes, w);
        let omega_w = w.omega(&self.sizes);
        // per-chunk partials combined in chunk order so the result is
        // bit-stable regardless of thread scheduling
        let partials: Vec<Vec<f64>> = self
            .probs
            .par_chunks(1 << 14)
            .enumerate()
            .map(|(chunk_idx, chunk)| {
                let base = chunk_idx << 14;
                let mut acc = vec![0.0; omega_w];
                for (j, &p) in chunk.iter().enumerate() {
                    acc[cell_of.cell(base + j)] += p;
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; omega_w];
        for part in partials {
            for (x, y) in total.iter_mut().zip(&part) {
                *x += y;
            }
        }
        total.into_iter().map(|p| p * n).collect()
    }

    /// i.i.d. categorical draws decoded to attribute codes.
    pub fn sample<R: Rng>(&self, schema: Arc<DatasetSchema>, n: usize, rng: &mut R) -> Dataset {
        assert!(n >= 1);
        assert_eq!(schema.sizes(), self.sizes);
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for &p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let total = *cdf.last().expect("non-empty distribution");
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let u = rng.gen_range(0.0..total);
                let idx = cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1);
                self.decode(idx)
            })
            .collect();
        Dataset::new(schema, rows).expect("sampled dataset")
    }

    /// Binary checkpoint: magic, schema hash, then the probability vector.
    pub fn save_checkpoint(&self, path: &Path, schema_hash: &str) -> Result<(), ModelError> {
        let mut out = Vec::with_capacity(16 + schema_hash.len() + self.probs.len() * 8);
        out.extend_from_slice(b"FHAIMPV1");
        out.extend_from_slice(&(schema_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(schema_hash.as_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.probs.len() as u64).to_le_bytes());
        for &p in &self.probs {
            out.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path, schema_hash: &str) -> Result<Self, ModelError> {
        let data = std::fs::read(path)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8], ModelError> {
            if *cur + n > data.len() {
                return Err(ModelError::CheckpointDecode("truncated".into()));
            }
            let s = &data[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        if take(&mut cur, 8)? != b"FHAIMPV1" {
            return Err(ModelError::CheckpointDecode("bad magic".into()));
        }
        let hash_len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let hash = String::from_utf8(take(&mut cur, hash_len)?.to_vec())
            .map_err(|e| ModelError::CheckpointDecode(e.to_string()))?;
        if hash != schema_hash {
            return Err(ModelError::SchemaHashMismatch);
        }
        let d = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let mut sizes = Vec::with_capacity(d);
        for _ in 0..d {
            sizes.push(u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize);
        }
        let len = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        let mut probs = Vec::with_capacity(len);
        for _ in 0..len {
            probs.push(f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()));
        }
        Ok(JointDistribution { sizes, probs })
    }
}

pub fn strides_of(sizes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; sizes.len()];
    for i in (0..sizes.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * sizes[i + 1];
    }
    strides
}

/// Closed-form map from a full-joint index to a clique's cell index.
struct CellMap {
    params: Vec<(usize, usize, usize)>, // (stride, size, out_stride)
}

impl CellMap {
    fn new(sizes: &[usize], w: &Clique) -> Self {
        let strides = strides_of(sizes);
        let mut out_stride = 1usize;
        let mut params: Vec<(usize, usize, usize)> = Vec::with_capacity(w.attrs.len());
        for &a in w.attrs.iter().rev() {
            params.push((strides[a], sizes[a], out_stride));
            out_stride *= sizes[a];
        }
        params.reverse();
        CellMap { params }
    }

    #[inline]
    fn cell(&self, index: usize) -> usize {
        self.params.iter().map(|&(st, sz, out)| (index / st % sz) * out).sum()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    /// iteration budget for the warm-started per-round refits inside the AIM
    /// loop; the final pre-sampling fit uses the full `max_iters`
    pub round_iters: usize,
    /// initial mirror step: the exponent range of the first multiplicative
    /// update, before backtracking
    pub step: f64,
    /// relative objective-decrease convergence threshold
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iters: 100, round_iters: 3, step: 1.0, tol: 1e-8 }
    }
}

/// Reusable fitting state: the current distribution (warm start across
/// rounds) plus cached full-joint → cell index tables per clique. The tables
/// turn every Ω-pass into plain array lookups, which is what keeps the
/// per-round refits affordable at |Ω| in the hundreds of thousands.
pub struct Fitter {
    pub dist: JointDistribution,
    n_records: f64,
    opts: FitOptions,
    tables: std::collections::BTreeMap<Clique, Vec<u32>>,
    /// adaptive mirror-step scale, persisted across iterations and refits so
    /// the line search resumes near the last accepted step instead of
    /// re-halving from `opts.step` every time (each halving costs a full
    /// Ω-pass marginal evaluation)
    step_scale: f64,
}

impl Fitter {
    pub fn new(sizes: &[usize], n_records: f64, opts: FitOptions) -> Result<Self, ModelError> {
        Ok(Fitter {
            dist: JointDistribution::uniform(sizes)?,
            n_records,
            opts,
            tables: Default::default(),
            step_scale: opts.step,
        })
    }

    fn table(&mut self, w: &Clique) -> &[u32] {
        if !self.tables.contains_key(w) {
            let map = CellMap::new(&self.dist.sizes, w);
            let table: Vec<u32> = (0..self.dist.probs.len())
                .into_par_iter()
                .map(|x| map.cell(x) as u32)
                .collect();
            self.tables.insert(w.clone(), table);
        }
        &self.tables[w]
    }

    /// Model-implied marginals (count scale) of several cliques via cached
    /// tables, one shared pass over Ω per clique.
    pub fn marginals_of(&mut self, cliques: &[Clique], probs: Option<&[f64]>) -> Vec<Vec<f64>> {
        for w in cliques {
            self.table(w);
        }
        let probs = probs.unwrap_or(&self.dist.probs);
        let n = self.n_records;
        cliques
            .par_iter()
            .map(|w| {
                let table = &self.tables[w];
                let mut acc = vec![0.0; w.omega(&self.dist.sizes)];
                for (x, &p) in probs.iter().enumerate() {
                    acc[table[x] as usize] += p;
                }
                acc.iter_mut().for_each(|c| *c *= n);
                acc
            })
            .collect()
    }

    /// Entropic mirror descent on
    /// F(P) = Σ_t (1/σ_t²)·‖N·μ_{w_t}(P) − ỹ_t‖²
    /// over the simplex, warm-started from the current distribution.
    pub fn refit(&mut self, log: &[Measurement]) -> &JointDistribution {
        self.refit_iters(log, self.opts.max_iters, None)
    }

    /// Budget-limited refit for the in-loop rounds: the warm start carries the
    /// previous round's solution, so a handful of iterations per round suffices
    /// and the full budget is only spent on the final pre-sampling fit.
    /// `precomputed` lets the caller donate marginals of the *current*
    /// distribution (e.g. the selection estimates computed moments earlier),
    /// saving the initial Ω-pass.
    pub fn refit_round(
        &mut self,
        log: &[Measurement],
        precomputed: Option<(&[Clique], &[Vec<f64>])>,
    ) -> &JointDistribution {
        self.refit_iters(log, self.opts.round_iters.min(self.opts.max_iters), precomputed)
    }

    fn refit_iters(
        &mut self,
        log: &[Measurement],
        max_iters: usize,
        precomputed: Option<(&[Clique], &[Vec<f64>])>,
    ) -> &JointDistribution {
        if log.is_empty() {
            return &self.dist;
        }
        let mut cliques: Vec<Clique> = log.iter().map(|m| m.clique.clone()).collect();
        cliques.sort();
        cliques.dedup();
        for w in &cliques {
            self.table(w);
        }
        let omega_w: Vec<usize> = cliques.iter().map(|w| w.omega(&self.dist.sizes)).collect();
        let per_clique: Vec<Vec<&Measurement>> = cliques
            .iter()
            .map(|w| log.iter().filter(|m| &m.clique == w).collect())
            .collect();
        let n = self.n_records;
        let tables: Vec<&[u32]> = cliques.iter().map(|w| self.tables[w].as_slice()).collect();

        let marginals = |probs: &[f64]| -> Vec<Vec<f64>> {
            tables
                .par_iter()
                .zip(&omega_w)
                .map(|(table, &om)| {
                    let mut acc = vec![0.0; om];
                    for (x, &p) in probs.iter().enumerate() {
                        acc[table[x] as usize] += p;
                    }
                    acc.iter_mut().for_each(|c| *c *= n);
                    acc
                })
                .collect()
        };
        let objective = |margs: &[Vec<f64>]| -> f64 {
            per_clique
                .iter()
                .enumerate()
                .map(|(ci, ms)| {
                    ms.iter()
                        .map(|m| {
                            let wt = measurement_weight(m.sigma);
                            wt * margs[ci]
                                .iter()
                                .zip(&m.values)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                        })
                        .sum::<f64>()
                })
                .sum()
        };

        let mut margs = match precomputed {
            Some((pre_w, pre_m)) if cliques.iter().all(|w| pre_w.contains(w)) => cliques
                .iter()
                .map(|w| pre_m[pre_w.iter().position(|p| p == w).unwrap()].clone())
                .collect(),
            _ => marginals(&self.dist.probs),
        };
        let mut obj = objective(&margs);
        for _ in 0..max_iters {
            // per-clique cell coefficients: Σ_t 2·w_t·N·(μ[cell] − ỹ[cell])
            let coeffs: Vec<Vec<f64>> = per_clique
                .iter()
                .enumerate()
                .map(|(ci, ms)| {
                    let mut c = vec![0.0; omega_w[ci]];
                    for m in ms {
                        let wt = measurement_weight(m.sigma);
                        for (cell, (&mu, &y)) in margs[ci].iter().zip(&m.values).enumerate() {
                            c[cell] += 2.0 * wt * n * (mu - y);
                        }
                    }
                    c
                })
                .collect();
            // gradient over Ω: g[x] = Σ_w coeffs_w[cell_w(x)], accumulated
            // clique-major so both the table read and the gradient write stay
            // sequential
            let mut grad = vec![0.0f64; self.dist.probs.len()];
            for (table, c) in tables.iter().zip(&coeffs) {
                for (g, &t) in grad.iter_mut().zip(*table) {
                    *g += c[t as usize];
                }
            }
            let g_max = grad.par_iter().cloned().map(f64::abs).reduce(|| 0.0, f64::max);
            if g_max == 0.0 {
                break;
            }

            // backtracking multiplicative update P ∝ P·exp(−η·g)
            let mut eta = self.step_scale / g_max;
            let mut improved = false;
            for halvings in 0..40 {
                let a_max = grad.par_iter().map(|g| -eta * g).reduce(|| f64::NEG_INFINITY, f64::max);
                let mut cand: Vec<f64> = self
                    .dist
                    .probs
                    .par_iter()
                    .zip(&grad)
                    .map(|(&p, &g)| p * (-eta * g - a_max).exp())
                    .collect();
                // sequential sum: rayon's reduction order is not deterministic
                // and this total must be bit-stable across runs
                let total: f64 = cand.iter().sum();
                cand.par_iter_mut().for_each(|p| *p /= total);
                let cand_margs = marginals(&cand);
                let cand_obj = objective(&cand_margs);
                if cand_obj <= obj {
                    let decrease = obj - cand_obj;
                    self.dist.probs = cand;
                    margs = cand_margs;
                    obj = cand_obj;
                    improved = true;
                    // accepted scale carries over; grow it again after a
                    // first-try acceptance
                    self.step_scale = if halvings == 0 {
                        (self.step_scale * 2.0).min(self.opts.step)
                    } else {
                        eta * g_max
                    };
                    if decrease < self.opts.tol * (1.0 + obj.abs()) {
                        return &self.dist;
                    }
                    break;
                }
                eta /= 2.0;
            }
            if !improved {
                // a fresh measurement next round reshapes the objective, so
                // don't let a collapsed scale poison future refits
                self.step_scale = self.opts.step;
                break;
            }
        }
        &self.dist
    }
}

/// One-shot fit from a cold (or warm) start; see [`Fitter`] for the loop API.
pub fn fit(
    log: &[Measurement],
    sizes: &[usize],
    n_records: f64,
    opts: FitOptions,
    warm: Option<&JointDistribution>,
) -> Result<JointDistribution, ModelError> {
    let mut fitter = Fitter::new(sizes, n_records, opts)?;
    if let Some(w) = warm {
        assert_eq!(w.sizes, sizes);
        fitter.dist = w.clone();
    }
    fitter.refit(log);
    Ok(fitter.dist)
}
