//! The encrypted marginal protocols: COMBINE, COMP (1- and 2-way), SELECT and
//! MEASURE. Every decryption funnels through a [`DecryptGate`], so trust
//! boundary policy stays outside this module.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{DpError, NoiseBuffer, NoiseWindow};
use crate::encode::EncryptedColumns;
use crate::he::{Ciphertext, EncryptKey, EvaluateKey, HeEngine, HeError};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("he: {0}")]
    He(#[from] HeError),
    #[error("dp: {0}")]
    Dp(#[from] DpError),
    #[error("combine of {count} scalars exceeds slot count {slots}")]
    CombineTooWide { count: usize, slots: usize },
    #[error("clique cell count {omega} exceeds slot count {slots}")]
    OmegaExceedsSlots { omega: usize, slots: usize },
    #[error("estimate length {got} does not match cell count {expected}")]
    EstimateLengthMismatch { got: usize, expected: usize },
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("missing marginal or estimate for clique {0}")]
    MissingClique(String),
    #[error("decrypt gate refused: {0}")]
    GateRefused(String),
}

/// Attribute subset of the workload; 1- or 2-way only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Clique {
    pub attrs: Vec<usize>,
}

impl Clique {
    pub fn one(a: usize) -> Self {
        Clique { attrs: vec![a] }
    }

    pub fn two(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "2-way clique attributes must be distinct");
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Clique { attrs: vec![lo, hi] }
    }

    pub fn omega(&self, sizes: &[usize]) -> usize {
        self.attrs.iter().map(|&a| sizes[a]).product()
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.attrs.iter().map(|a| a.to_string()).collect();
        format!("{{{}}}", parts.join(","))
    }
}

/// Cell index of a record under a clique's row-major order:
/// 1-way -> code; 2-way (a1, a2) -> code1 * omega_{a2} + code2.
pub fn cell_index(clique: &Clique, sizes: &[usize], row: &[u32]) -> usize {
    match clique.attrs[..] {
        [a] => row[a] as usize,
        [a1, a2] => row[a1] as usize * sizes[a2] + row[a2] as usize,
        _ => panic!("only 1- and 2-way cliques are supported"),
    }
}

/// Brute-force plaintext count oracle over the marginal's cells.
pub fn plaintext_marginal(rows: &[Vec<u32>], sizes: &[usize], clique: &Clique) -> Vec<f64> {
    let mut q = vec![0.0; clique.omega(sizes)];
    for row in rows {
        q[cell_index(clique, sizes, row)] += 1.0;
    }
    q
}

#[derive(Debug, Clone)]
pub struct EncryptedMarginal {
    pub clique: Clique,
    pub omega: usize,
    pub ct: Ciphertext,
}

/// Protocol 4: packs k encrypted scalars (value in slot 0) into one
/// ciphertext, slot i holding scalars[i]. One selector mult_plain level,
/// exactly k rotations.
pub fn combine(
    scalars: &[Ciphertext],
    engine: &HeEngine,
    evk: &EvaluateKey,
) -> Result<Ciphertext, ProtocolError> {
    let l = engine.slot_count();
    if scalars.len() > l {
        return Err(ProtocolError::CombineTooWide { count: scalars.len(), slots: l });
    }
    assert!(!scalars.is_empty(), "combine of zero scalars");
    let selector = [1.0];
    let mut acc: Option<Ciphertext> = None;
    for (i, scalar) in scalars.iter().enumerate() {
        let masked = engine.mult_plain(scalar, &selector, evk)?;
        // rotate left by L - i moves slot 0 to slot i (i = 0 rotates by 0)
        let shift = if i == 0 { 0 } else { l - i };
        let placed = engine.rotate(&masked, shift, evk)?;
        acc = Some(match acc {
            None => placed,
            Some(a) => engine.add(&a, &placed, evk)?,
        });
    }
    Ok(acc.expect("non-empty combine"))
}

/// Protocol 1, 1-way branch: per bin, add the chunk ciphertexts, slot-sum,
/// then COMBINE the bin totals. Depth 0 before combine.
pub fn comp_1way(
    cols: &EncryptedColumns,
    attr: usize,
    engine: &HeEngine,
    evk: &EvaluateKey,
) -> Result<EncryptedMarginal, ProtocolError> {
    let bins = &cols.columns[attr];
    let mut scalars = Vec::with_capacity(bins.len());
    for chunks in bins {
        let mut acc = chunks[0].clone();
        for chunk in &chunks[1..] {
            acc = engine.add(&acc, chunk, evk)?;
        }
        scalars.push(engine.slot_sum(&acc, evk)?);
    }
    let ct = combine(&scalars, engine, evk)?;
    Ok(EncryptedMarginal { clique: Clique::one(attr), omega: bins.len(), ct })
}

/// Protocol 1, 2-way branch: cell (j, k) = sum over chunks of the slotwise
/// product of the two indicator columns. One ct-ct mult per chunk per cell.
pub fn comp_2way(
    cols: &EncryptedColumns,
    a1: usize,
    a2: usize,
    engine: &HeEngine,
    evk: &EvaluateKey,
) -> Result<EncryptedMarginal, ProtocolError> {
    assert_ne!(a1, a2);
    let (b1, b2) = (&cols.columns[a1], &cols.columns[a2]);
    let omega = b1.len() * b2.len();
    if omega > engine.slot_count() {
        return Err(ProtocolError::OmegaExceedsSlots { omega, slots: engine.slot_count() });
    }
    let mut scalars = Vec::with_capacity(omega);
    for chunks1 in b1 {
        for chunks2 in b2 {
            let mut acc: Option<Ciphertext> = None;
            for (c1, c2) in chunks1.iter().zip(chunks2) {
                let prod = engine.mult(c1, c2, evk)?;
                acc = Some(match acc {
                    None => prod,
                    Some(a) => engine.add(&a, &prod, evk)?,
                });
            }
            scalars.push(engine.slot_sum(&acc.expect("at least one chunk"), evk)?);
        }
    }
    let ct = combine(&scalars, engine, evk)?;
    Ok(EncryptedMarginal { clique: Clique::two(a1, a2), omega, ct })
}

/// Computes every workload marginal once, up front. Candidate scoring later
/// reuses these ciphertexts.
pub fn comp_workload(
    cols: &EncryptedColumns,
    cliques: &[Clique],
    engine: &HeEngine,
    evk: &EvaluateKey,
) -> Result<BTreeMap<Clique, EncryptedMarginal>, ProtocolError> {
    let results: Result<Vec<_>, ProtocolError> = cliques
        .par_iter()
        .map(|w| {
            let m = match w.attrs[..] {
                [a] => comp_1way(cols, a, engine, evk)?,
                [a1, a2] => comp_2way(cols, a1, a2, engine, evk)?,
                _ => panic!("only 1- and 2-way cliques are supported"),
            };
            Ok((w.clone(), m))
        })
        .collect();
    Ok(results?.into_iter().collect())
}

/// Every decryption request carries whether DP noise was applied inside the
/// encrypted domain, plus the provenance of that noise window.
pub trait DecryptGate {
    fn decrypt(
        &mut self,
        ct: &Ciphertext,
        noised: bool,
        provenance: Option<NoiseWindow>,
        purpose: &str,
    ) -> Result<Vec<f64>, ProtocolError>;
}

/// In-process gate for standalone runs: decrypts with the held key, enforcing
/// the noised-flag policy, and records every request.
pub struct LocalGate<'a> {
    engine: &'a HeEngine,
    key: &'a crate::he::DecryptKey,
    /// set for ε = ∞ runs, where un-noised decryption is explicitly audited
    pub allow_unnoised: bool,
    pub records: Vec<GateRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateRecord {
    pub purpose: String,
    pub noised: bool,
    pub provenance: Option<NoiseWindow>,
}

impl<'a> LocalGate<'a> {
    pub fn new(engine: &'a HeEngine, key: &'a crate::he::DecryptKey, allow_unnoised: bool) -> Self {
        LocalGate { engine, key, allow_unnoised, records: Vec::new() }
    }
}

impl DecryptGate for LocalGate<'_> {
    fn decrypt(
        &mut self,
        ct: &Ciphertext,
        noised: bool,
        provenance: Option<NoiseWindow>,
        purpose: &str,
    ) -> Result<Vec<f64>, ProtocolError> {
        if !noised && !self.allow_unnoised {
            return Err(ProtocolError::GateRefused(format!(
                "un-noised decryption requested for {purpose}"
            )));
        }
        self.records.push(GateRecord { purpose: purpose.into(), noised, provenance });
        Ok(self.engine.decrypt(ct, self.key)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormVariant {
    L2sq,
    L1poly,
}

/// App. C degree-10 least-squares approximation of |x| on [-1, 1]:
/// p(x) = 0.0556 + 3.6049x^2 - 11.9929x^4 + 24.4175x^6 - 23.6236x^8 + 8.5577x^10.
pub const ABS_POLY_COEFFS: [f64; 6] = [0.0556, 3.6049, -11.9929, 24.4175, -23.6236, 8.5577];

/// Default range-extension scale for the polynomial: alpha * p(x / alpha).
pub const ABS_POLY_SCALE: f64 = 10000.0;

/// One candidate's scoring request.
pub struct SelectCandidate<'a> {
    pub clique: Clique,
    pub marginal: &'a EncryptedMarginal,
    pub estimate: &'a [f64],
    /// workload weight α_w
    pub alpha_w: f64,
}

pub struct SelectConfig {
    pub eps_t: f64,
    pub sigma_t: f64,
    /// score sensitivity Δ (Theorem 1)
    pub delta_sens: f64,
    pub norm: NormVariant,
    /// polynomial range scale α for the l1poly variant
    pub poly_scale: f64,
    /// batch all candidate score scalars into one ciphertext before
    /// decryption (off-spec optimization, default off)
    pub batch_scores: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectOutcome {
    pub chosen: Clique,
    /// decrypted (noisy, if ε < ∞) scores in candidate order
    pub noisy_scores: Vec<f64>,
    /// multiplicative levels consumed from marginal level to score level
    pub score_levels_consumed: u32,
    pub gumbel_windows: Vec<NoiseWindow>,
}

/// Encrypted L2² score ciphertext for one candidate, before noise: every slot
/// holds α_w(Σ_j (q_j - q̂_j)² - σ²ω). Consumes exactly 2 levels beyond the
/// marginal: the α_w-folded cell mask, then the square.
fn score_ct_l2(
    cand: &SelectCandidate,
    sigma_t: f64,
    engine: &HeEngine,
    enc_key: &EncryptKey,
    evk: &EvaluateKey,
) -> Result<Ciphertext, ProtocolError> {
    let omega = cand.marginal.omega;
    if cand.estimate.len() != omega {
        return Err(ProtocolError::EstimateLengthMismatch { got: cand.estimate.len(), expected: omega });
    }
    let est_ct = engine.encrypt(cand.estimate, enc_key)?;
    let diff = engine.sub(&cand.marginal.ct, &est_ct, evk)?;
    // mask to the first ω slots with α_w folded in, then square against the
    // raw difference: slot j = (α_w·d_j)·d_j
    let mask = vec![cand.alpha_w; omega];
    let masked = engine.mult_plain(&diff, &mask, evk)?;
    let sq = engine.mult(&masked, &diff, evk)?;
    let summed = engine.slot_sum(&sq, evk)?;
    let bias = cand.alpha_w * crate::dp::penalty(sigma_t, omega);
    let bias_vec = vec![bias; engine.slot_count()];
    Ok(engine.sub_plain(&summed, &bias_vec, evk)?)
}

/// Encrypted l1poly score: per cell α_w·α·p(d_j/α) summed, minus the expected
/// L1 penalty α_w·σ·ω·√(2/π). Consumes exactly 5 levels beyond the marginal:
/// the 1/α range scaling, then the 4-deep power/product tree for degree 10.
fn score_ct_l1(
    cand: &SelectCandidate,
    sigma_t: f64,
    poly_scale: f64,
    engine: &HeEngine,
    enc_key: &EncryptKey,
    evk: &EvaluateKey,
) -> Result<Ciphertext, ProtocolError> {
    let omega = cand.marginal.omega;
    if cand.estimate.len() != omega {
        return Err(ProtocolError::EstimateLengthMismatch { got: cand.estimate.len(), expected: omega });
    }
    let [c0, c2, c4, c6, c8, c10] = ABS_POLY_COEFFS;
    let a = poly_scale;
    let w = cand.alpha_w;
    let est_ct = engine.encrypt(cand.estimate, enc_key)?;
    let diff = engine.sub(&cand.marginal.ct, &est_ct, evk)?;

    // depth 1: u = d/α restricted to the ω live cells
    let u = engine.mult_plain(&diff, &vec![1.0 / a; omega], evk)?;
    // depth 2..4: even powers of u
    let y = engine.mult(&u, &u, evk)?; // u²
    let y2 = engine.mult(&y, &y, evk)?; // u⁴
    let y4 = engine.mult(&y2, &y2, evk)?; // u⁸
    let full = engine.slot_count();
    // terms of α_w·α·p(u), each ≤ depth 5
    let t1 = engine.mult_plain(&y, &vec![w * a * c2; full], evk)?;
    let t2 = engine.mult_plain(&y2, &vec![w * a * c4; full], evk)?;
    let t3 = engine.mult(&y2, &engine.mult_plain(&y, &vec![w * a * c6; full], evk)?, evk)?;
    let t4 = engine.mult_plain(&y4, &vec![w * a * c8; full], evk)?;
    let t5 = engine.mult(&y4, &engine.mult_plain(&y, &vec![w * a * c10; full], evk)?, evk)?;
    let mut acc = engine.add(&t1, &t2, evk)?;
    acc = engine.add(&acc, &t3, evk)?;
    acc = engine.add(&acc, &t4, evk)?;
    acc = engine.add(&acc, &t5, evk)?;
    // constant term only on the live cells (depth 0)
    acc = engine.add_plain(&acc, &vec![w * a * c0; omega], evk)?;
    let summed = engine.slot_sum(&acc, evk)?;
    // expected-L1-noise penalty: ρ = σ·ω·√(2/π)
    let bias = w * sigma_t * omega as f64 * (2.0 / std::f64::consts::PI).sqrt();
    Ok(engine.sub_plain(&summed, &vec![bias; full], evk)?)
}

/// Protocol 2: score every candidate under encryption, add the Gumbel noise
/// scaled by 2Δ/ε while still encrypted, decrypt through the gate, and take
/// the argmax in the clear. ε = ∞ skips the noise and consumes no buffer.
pub fn select(
    candidates: &[SelectCandidate],
    cfg: &SelectConfig,
    buffer: &mut NoiseBuffer,
    engine: &HeEngine,
    enc_key: &EncryptKey,
    evk: &EvaluateKey,
    gate: &mut dyn DecryptGate,
) -> Result<SelectOutcome, ProtocolError> {
    if candidates.is_empty() {
        return Err(ProtocolError::NoCandidates);
    }
    let noised = cfg.eps_t.is_finite();
    let beta = if noised { 2.0 * cfg.delta_sens / cfg.eps_t } else { 0.0 };
    let mut score_cts = Vec::with_capacity(candidates.len());
    let mut windows = Vec::new();
    let mut levels_consumed = 0;
    for cand in candidates {
        let score = match cfg.norm {
            NormVariant::L2sq => score_ct_l2(cand, cfg.sigma_t, engine, enc_key, evk)?,
            NormVariant::L1poly => {
                score_ct_l1(cand, cfg.sigma_t, cfg.poly_scale, engine, enc_key, evk)?
            }
        };
        levels_consumed = cand.marginal.ct.level() - score.level();
        let score = if noised {
            let (gumbel, win) = buffer.gumbel_window(1, beta, engine, evk)?;
            windows.push(win);
            engine.add(&score, &gumbel, evk)?
        } else {
            score
        };
        score_cts.push(score);
    }

    let noisy_scores: Vec<f64> = if cfg.batch_scores {
        let packed = combine(&score_cts, engine, evk)?;
        let dec = gate.decrypt(&packed, noised, windows.first().copied(), "select-scores-batched")?;
        dec[..candidates.len()].to_vec()
    } else {
        let mut out = Vec::with_capacity(candidates.len());
        for (i, ct) in score_cts.iter().enumerate() {
            let prov = windows.get(i).copied();
            let dec = gate.decrypt(ct, noised, prov, &format!("select-score-{}", candidates[i].clique.label()))?;
            out.push(dec[0]);
        }
        out
    };

    let chosen = candidates[crate::dp::argmax(&noisy_scores)].clique.clone();
    Ok(SelectOutcome { chosen, noisy_scores, score_levels_consumed: levels_consumed, gumbel_windows: windows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureOutcome {
    /// decrypted noisy marginal, length ω
    pub noisy_marginal: Vec<f64>,
    pub gaussian_window: Option<NoiseWindow>,
}

/// Protocol 3: add σ·z (a fresh window of the encrypted unit Gaussians) to the
/// packed marginal, decrypt through the gate. The buffer counter advances by
/// ω_w. σ = 0 returns the exact marginal without consuming the buffer.
pub fn measure(
    marginal: &EncryptedMarginal,
    sigma_t: f64,
    buffer: &mut NoiseBuffer,
    engine: &HeEngine,
    evk: &EvaluateKey,
    gate: &mut dyn DecryptGate,
) -> Result<MeasureOutcome, ProtocolError> {
    let purpose = format!("measure-{}", marginal.clique.label());
    if sigma_t == 0.0 {
        let dec = gate.decrypt(&marginal.ct, false, None, &purpose)?;
        return Ok(MeasureOutcome { noisy_marginal: dec[..marginal.omega].to_vec(), gaussian_window: None });
    }
    let (noise, win) = buffer.gaussian_window(marginal.omega, sigma_t, engine, evk)?;
    let noisy = engine.add(&marginal.ct, &noise, evk)?;
    let dec = gate.decrypt(&noisy, true, Some(win), &purpose)?;
    Ok(MeasureOutcome { noisy_marginal: dec[..marginal.omega].to_vec(), gaussian_window: Some(win) })
}
