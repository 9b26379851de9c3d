//! Differential-privacy machinery: zCDP accounting, the sensitivity and
//! penalty formulas, noise-budget bounds, and the pre-sampled encrypted
//! unit-noise buffers consumed inside the encrypted domain.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::he::{Ciphertext, EncryptKey, EvaluateKey, HeEngine, HeError};

#[derive(Debug, thiserror::Error)]
pub enum DpError {
    #[error("epsilon must be positive (or infinite), got {0}")]
    InvalidEpsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("rho must be positive or infinite, got {0}")]
    InvalidRho(f64),
    #[error("noise buffer exhausted: {kind} window of {requested} requested, {remaining} remaining")]
    BufferExhausted { kind: &'static str, requested: usize, remaining: usize },
    #[error("noise window of {requested} exceeds the slot count {slots}")]
    WindowTooWide { requested: usize, slots: usize },
    #[error("round index {0} outside the schedule")]
    RoundOutOfSchedule(usize),
    #[error("budget overspent: spent {spent} of {total}")]
    BudgetOverspent { spent: f64, total: f64 },
    #[error("he: {0}")]
    He(#[from] HeError),
}

/// (ε, δ)-DP guarantee implied by a zCDP budget ρ.
pub fn eps_of_rho(rho: f64, delta: f64) -> f64 {
    rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt()
}

/// Largest ρ with ρ + 2√(ρ·ln(1/δ)) ≤ ε, by bisection to 1e-12.
/// ε = ∞ returns the unlimited sentinel `f64::INFINITY`.
pub fn zcdp_from_eps_delta(eps: f64, delta: f64) -> Result<f64, DpError> {
    if eps.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if !(eps > 0.0) {
        return Err(DpError::InvalidEpsilon(eps));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidDelta(delta));
    }
    let (mut lo, mut hi) = (0.0f64, eps);
    while hi - lo > 1e-12 {
        let mid = (lo + hi) / 2.0;
        if eps_of_rho(mid, delta) <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Per-round budget: Gaussian measurement noise σ_t plus the exponential
/// mechanism's ε_t for selection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoundBudget {
    pub sigma: f64,
    pub eps_select: f64,
    pub rho_measure: f64,
    pub rho_select: f64,
}

pub const GAMMA_INIT: f64 = 0.1;
pub const MEASURE_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyAccountant {
    pub eps_total: f64,
    pub delta: f64,
    pub rho_total: f64,
    rho_spent: f64,
    pub sigma_init: f64,
    pub rho_init_per_attr: f64,
    pub attr_count: usize,
    pub rounds: Vec<RoundBudget>,
    init_spent: usize,
    rounds_spent: usize,
}

impl PrivacyAccountant {
    /// Builds the fixed schedule: T = 16d rounds; γ_init of ρ split equally
    /// over the d one-way initialization measurements; the remainder split
    /// equally per round, 0.9 to measurement and 0.1 to selection.
    pub fn build_schedule(rho: f64, d: usize, eps: f64, delta: f64) -> Result<Self, DpError> {
        if !(rho > 0.0) {
            return Err(DpError::InvalidRho(rho));
        }
        let t_max = 16 * d;
        if rho.is_infinite() {
            // non-private sentinel: zero noise, infinite selection budget
            return Ok(PrivacyAccountant {
                eps_total: f64::INFINITY,
                delta,
                rho_total: f64::INFINITY,
                rho_spent: 0.0,
                sigma_init: 0.0,
                rho_init_per_attr: 0.0,
                attr_count: d,
                rounds: vec![
                    RoundBudget { sigma: 0.0, eps_select: f64::INFINITY, rho_measure: 0.0, rho_select: 0.0 };
                    t_max
                ],
                init_spent: 0,
                rounds_spent: 0,
            });
        }
        let rho_init_per_attr = GAMMA_INIT * rho / d as f64;
        let sigma_init = (1.0 / (2.0 * rho_init_per_attr)).sqrt();
        let rho_round = (1.0 - GAMMA_INIT) * rho / t_max as f64;
        let rho_measure = MEASURE_FRACTION * rho_round;
        let rho_select = (1.0 - MEASURE_FRACTION) * rho_round;
        let round = RoundBudget {
            sigma: (1.0 / (2.0 * rho_measure)).sqrt(),
            eps_select: (8.0 * rho_select).sqrt(),
            rho_measure,
            rho_select,
        };
        Ok(PrivacyAccountant {
            eps_total: eps,
            delta,
            rho_total: rho,
            rho_spent: 0.0,
            sigma_init,
            rho_init_per_attr,
            attr_count: d,
            rounds: vec![round; t_max],
            init_spent: 0,
            rounds_spent: 0,
        })
    }

    pub fn from_eps_delta(eps: f64, delta: f64, d: usize) -> Result<Self, DpError> {
        let rho = zcdp_from_eps_delta(eps, delta)?;
        Self::build_schedule(rho, d, eps, delta)
    }

    pub fn non_private(&self) -> bool {
        self.rho_total.is_infinite()
    }

    pub fn round_cap(&self) -> usize {
        self.rounds.len()
    }

    pub fn rho_spent(&self) -> f64 {
        self.rho_spent
    }

    /// Scheduled total: d init portions plus every round's measure+select.
    pub fn rho_scheduled(&self) -> f64 {
        if self.non_private() {
            return f64::INFINITY;
        }
        self.attr_count as f64 * self.rho_init_per_attr
            + self.rounds.iter().map(|r| r.rho_measure + r.rho_select).sum::<f64>()
    }

    pub fn spend_init(&mut self) -> Result<f64, DpError> {
        assert!(self.init_spent < self.attr_count, "init allocation exhausted");
        self.init_spent += 1;
        self.charge(self.rho_init_per_attr)?;
        Ok(self.sigma_init)
    }

    pub fn spend_round(&mut self, t: usize) -> Result<RoundBudget, DpError> {
        let round = *self.rounds.get(t).ok_or(DpError::RoundOutOfSchedule(t))?;
        assert_eq!(t, self.rounds_spent, "rounds must be spent in order");
        self.rounds_spent += 1;
        self.charge(round.rho_measure + round.rho_select)?;
        Ok(round)
    }

    fn charge(&mut self, rho: f64) -> Result<(), DpError> {
        self.rho_spent += rho;
        if !self.non_private() && self.rho_spent > self.rho_total + 1e-9 {
            return Err(DpError::BudgetOverspent { spent: self.rho_spent, total: self.rho_total });
        }
        Ok(())
    }

    /// Post-run self-audit: everything spent came from the schedule, and a
    /// fully executed schedule spends exactly ρ_total.
    pub fn audit(&self) -> Result<(), DpError> {
        if self.non_private() {
            return Ok(());
        }
        let scheduled = self.attr_count as f64 * self.rho_init_per_attr * (self.init_spent as f64 / self.attr_count as f64)
            + self.rounds[..self.rounds_spent]
                .iter()
                .map(|r| r.rho_measure + r.rho_select)
                .sum::<f64>();
        if (self.rho_spent - scheduled).abs() > 1e-9 {
            return Err(DpError::BudgetOverspent { spent: self.rho_spent, total: scheduled });
        }
        if self.rho_spent > self.rho_total + 1e-9 {
            return Err(DpError::BudgetOverspent { spent: self.rho_spent, total: self.rho_total });
        }
        Ok(())
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("accountant json")
    }
}

/// Global sensitivity of the quality score (Theorem 1): Δ = max_w |α_w|·(2N+1).
pub fn sensitivity(alpha_w: &[f64], n: usize) -> f64 {
    assert!(n >= 1, "N >= 1 required");
    let max_alpha = alpha_w.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    max_alpha * (2 * n + 1) as f64
}

/// Expected squared norm of the measurement noise (Theorem 2): σ²·ω_w.
pub fn penalty(sigma: f64, omega_w: usize) -> f64 {
    assert!(sigma >= 0.0);
    sigma * sigma * omega_w as f64
}

/// Pre-sampling bounds: Gaussians for d one-way initializations plus 16d
/// worst-case measurements, Gumbels for 16d selections over the workload.
pub fn noise_budget(omega: &[usize], max_omega_w: usize, workload_size: usize) -> (usize, usize) {
    let d = omega.len();
    let n_gauss = omega.iter().sum::<usize>() + 16 * d * max_omega_w;
    let n_gumbel = 16 * d * workload_size;
    (n_gauss, n_gumbel)
}

/// Plaintext unit-noise samples. These exist only at the Data Entity (and in
/// test oracles); the Computation Entity only ever sees the encrypted buffer.
#[derive(Debug, Clone)]
pub struct NoiseSamples {
    pub gaussian: Vec<f64>,
    pub gumbel: Vec<f64>,
    pub seed: u64,
}

pub fn sample_noise(n_gaussian: usize, n_gumbel: usize, seed: u64) -> NoiseSamples {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let gaussian: Vec<f64> = (0..n_gaussian).map(|_| normal.sample(&mut rng)).collect();
    let gumbel: Vec<f64> = (0..n_gumbel).map(|_| gumbel.sample(&mut rng)).collect();
    NoiseSamples { gaussian, gumbel, seed }
}

/// Encrypted unit-noise buffer with monotone consumption counters. Samples are
/// chunked into full-width ciphertexts; a window is carved out with a rotation
/// plus a scaled mask, so the CE never learns the plaintext noise.
pub struct NoiseBuffer {
    gauss_chunks: Vec<Ciphertext>,
    gumbel_chunks: Vec<Ciphertext>,
    gauss_total: usize,
    gumbel_total: usize,
    gauss_consumed: usize,
    gumbel_consumed: usize,
    slot_count: usize,
    pub seed_id: u64,
}

fn encrypt_chunks(
    samples: &[f64],
    engine: &HeEngine,
    cap: &EncryptKey,
) -> Result<Vec<Ciphertext>, HeError> {
    let l = engine.slot_count();
    samples.chunks(l).map(|c| engine.encrypt(c, cap)).collect()
}

pub fn sample_and_encrypt_noise(
    n_gaussian: usize,
    n_gumbel: usize,
    seed: u64,
    engine: &HeEngine,
    cap: &EncryptKey,
) -> Result<(NoiseSamples, NoiseBuffer), DpError> {
    let samples = sample_noise(n_gaussian, n_gumbel, seed);
    let buffer = NoiseBuffer {
        gauss_chunks: encrypt_chunks(&samples.gaussian, engine, cap)?,
        gumbel_chunks: encrypt_chunks(&samples.gumbel, engine, cap)?,
        gauss_total: n_gaussian,
        gumbel_total: n_gumbel,
        gauss_consumed: 0,
        gumbel_consumed: 0,
        slot_count: engine.slot_count(),
        seed_id: seed,
    };
    Ok((samples, buffer))
}

/// Which of the two unit-noise pools a window came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Gaussian,
    Gumbel,
}

/// Provenance of one consumed window: pool, starting index, width, scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseWindow {
    pub kind: NoiseKind,
    pub start: usize,
    pub count: usize,
    pub scale: f64,
}

impl NoiseBuffer {
    pub fn gauss_consumed(&self) -> usize {
        self.gauss_consumed
    }

    pub fn gumbel_consumed(&self) -> usize {
        self.gumbel_consumed
    }

    pub fn gauss_remaining(&self) -> usize {
        self.gauss_total - self.gauss_consumed
    }

    pub fn gumbel_remaining(&self) -> usize {
        self.gumbel_total - self.gumbel_consumed
    }

    /// Next `count` Gaussian units scaled by `scale` in slots 0..count,
    /// zeros elsewhere. Advances the counter by `count`.
    pub fn gaussian_window(
        &mut self,
        count: usize,
        scale: f64,
        engine: &HeEngine,
        evk: &EvaluateKey,
    ) -> Result<(Ciphertext, NoiseWindow), DpError> {
        let start = self.gauss_consumed;
        let remaining = self.gauss_remaining();
        if count > remaining {
            return Err(DpError::BufferExhausted { kind: "gaussian", requested: count, remaining });
        }
        self.gauss_consumed += count;
        let ct = window(&self.gauss_chunks, self.slot_count, start, count, scale, engine, evk)?;
        Ok((ct, NoiseWindow { kind: NoiseKind::Gaussian, start, count, scale }))
    }

    pub fn gumbel_window(
        &mut self,
        count: usize,
        scale: f64,
        engine: &HeEngine,
        evk: &EvaluateKey,
    ) -> Result<(Ciphertext, NoiseWindow), DpError> {
        let start = self.gumbel_consumed;
        let remaining = self.gumbel_remaining();
        if count > remaining {
            return Err(DpError::BufferExhausted { kind: "gumbel", requested: count, remaining });
        }
        self.gumbel_consumed += count;
        let ct = window(&self.gumbel_chunks, self.slot_count, start, count, scale, engine, evk)?;
        Ok((ct, NoiseWindow { kind: NoiseKind::Gumbel, start, count, scale }))
    }
}

/// out[j] = scale · unit[start + j] for j < count. The window spans at most
/// two chunks since count ≤ L: each contributing chunk is rotated by the
/// in-chunk offset and masked with the scale over its slot range.
fn window(
    chunks: &[Ciphertext],
    l: usize,
    start: usize,
    count: usize,
    scale: f64,
    engine: &HeEngine,
    evk: &EvaluateKey,
) -> Result<Ciphertext, DpError> {
    if count > l {
        return Err(DpError::WindowTooWide { requested: count, slots: l });
    }
    let i0 = start / l;
    let offset = start % l;
    let first_len = count.min(l - offset);

    let rotated = engine.rotate(&chunks[i0], offset, evk)?;
    let mut mask = vec![0.0; first_len];
    mask.iter_mut().for_each(|m| *m = scale);
    let mut out = engine.mult_plain(&rotated, &mask, evk)?;

    if first_len < count {
        // rotating the next chunk by the same offset lands its slot 0 at
        // output position l - offset, exactly where the first piece ends
        let rotated2 = engine.rotate(&chunks[i0 + 1], offset, evk)?;
        let mut mask2 = vec![0.0; count];
        mask2[first_len..].iter_mut().for_each(|m| *m = scale);
        let piece2 = engine.mult_plain(&rotated2, &mask2, evk)?;
        out = engine.add(&out, &piece2, evk)?;
    }
    Ok(out)
}

/// Plaintext consumption mirror: yields the same unit samples, in the same
/// order, as the encrypted buffer. Used by the plaintext AIM baseline and the
/// protocol oracles.
pub struct PlaintextNoiseStream<'a> {
    samples: &'a NoiseSamples,
    gauss_consumed: usize,
    gumbel_consumed: usize,
}

impl<'a> PlaintextNoiseStream<'a> {
    pub fn new(samples: &'a NoiseSamples) -> Self {
        PlaintextNoiseStream { samples, gauss_consumed: 0, gumbel_consumed: 0 }
    }

    pub fn gaussian(&mut self, count: usize) -> &[f64] {
        let s = self.gauss_consumed;
        self.gauss_consumed += count;
        &self.samples.gaussian[s..s + count]
    }

    pub fn gumbel(&mut self, count: usize) -> &[f64] {
        let s = self.gumbel_consumed;
        self.gumbel_consumed += count;
        &self.samples.gumbel[s..s + count]
    }
}

/// Plaintext exponential mechanism via the Gumbel-max trick: argmax of
/// s_i + β·G_i with β = 2Δ/ε. ε = ∞ degenerates to the plain argmax.
pub fn gumbel_max_oracle<R: rand::Rng>(
    scores: &[f64],
    eps: f64,
    delta_sens: f64,
    rng: &mut R,
) -> Result<usize, DpError> {
    if eps.is_infinite() {
        return Ok(argmax(scores));
    }
    if !(eps > 0.0) {
        return Err(DpError::InvalidEpsilon(eps));
    }
    let beta = 2.0 * delta_sens / eps;
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit gumbel");
    let noisy: Vec<f64> = scores.iter().map(|s| s + beta * gumbel.sample(rng)).collect();
    Ok(argmax(&noisy))
}

/// Shared-sample variant: the caller supplies the unit Gumbels, so the choice
/// can be compared against the encrypted path sample-for-sample.
pub fn gumbel_max_with_samples(scores: &[f64], beta: f64, units: &[f64]) -> usize {
    assert_eq!(scores.len(), units.len());
    let noisy: Vec<f64> = scores.iter().zip(units).map(|(s, g)| s + beta * g).collect();
    argmax(&noisy)
}

pub fn argmax(v: &[f64]) -> usize {
    assert!(!v.is_empty());
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{HeParams, KeyContext};
    use rand::Rng;

    #[test]
    fn zcdp_infinite_eps_is_unlimited() {
        assert!(zcdp_from_eps_delta(f64::INFINITY, 1e-9).unwrap().is_infinite());
    }

    #[test]
    fn zcdp_zero_rho_gives_zero_eps() {
        assert_eq!(eps_of_rho(0.0, 1e-9), 0.0);
    }

    #[test]
    fn zcdp_bisection_self_check() {
        let rho = zcdp_from_eps_delta(1.0, 1e-9).unwrap();
        let back = eps_of_rho(rho, 1e-9);
        assert!((1.0 - 1e-9..=1.0).contains(&back), "plug-back eps {back}");
    }

    #[test]
    fn zcdp_rejects_bad_inputs() {
        assert!(zcdp_from_eps_delta(0.0, 1e-9).is_err());
        assert!(zcdp_from_eps_delta(1.0, 0.0).is_err());
        assert!(zcdp_from_eps_delta(1.0, 1.0).is_err());
    }

    #[test]
    fn schedule_round_cap_is_16d() {
        let acc = PrivacyAccountant::build_schedule(1.0, 7, 3.0, 1e-9).unwrap();
        assert_eq!(acc.round_cap(), 112);
    }

    #[test]
    fn schedule_non_private_sentinel() {
        let acc = PrivacyAccountant::build_schedule(f64::INFINITY, 5, f64::INFINITY, 1e-9).unwrap();
        assert!(acc.non_private());
        assert_eq!(acc.sigma_init, 0.0);
        assert_eq!(acc.rounds[0].sigma, 0.0);
        assert!(acc.rounds[0].eps_select.is_infinite());
    }

    #[test]
    fn schedule_sums_to_rho() {
        let rho = 0.731;
        let acc = PrivacyAccountant::build_schedule(rho, 4, 2.0, 1e-9).unwrap();
        assert!((acc.rho_scheduled() - rho).abs() < 1e-9);
    }

    #[test]
    fn accountant_full_spend_audits_clean() {
        let mut acc = PrivacyAccountant::build_schedule(1.0, 3, 2.0, 1e-9).unwrap();
        for _ in 0..3 {
            let sigma = acc.spend_init().unwrap();
            assert!(sigma > 0.0);
        }
        for t in 0..acc.round_cap() {
            acc.spend_round(t).unwrap();
        }
        acc.audit().unwrap();
        assert!((acc.rho_spent() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_formula() {
        assert_eq!(sensitivity(&[1.0, 1.0, 1.0], 100), 201.0);
        assert_eq!(sensitivity(&[2.0, 3.0], 10), 3.0 * 21.0);
    }

    #[test]
    #[should_panic]
    fn sensitivity_rejects_empty_dataset() {
        sensitivity(&[1.0], 0);
    }

    #[test]
    fn penalty_formula() {
        assert_eq!(penalty(2.0, 5), 20.0);
        assert_eq!(penalty(0.0, 32), 0.0);
    }

    #[test]
    fn noise_budget_worked_example() {
        // d = 3, one-way sizes (2, 3, 4), max two-way cells 12, |W| = 6
        let (n_gauss, n_gumbel) = noise_budget(&[2, 3, 4], 12, 6);
        assert_eq!(n_gauss, 585);
        assert_eq!(n_gumbel, 288);
    }

    #[test]
    fn noise_sample_moments() {
        let s = sample_noise(100_000, 100_000, 31);
        let g_mean = s.gaussian.iter().sum::<f64>() / 1e5;
        assert!(g_mean.abs() < 3.0 / (1e5f64).sqrt(), "gaussian mean {g_mean}");
        let gb_mean = s.gumbel.iter().sum::<f64>() / 1e5;
        let euler = 0.577_215_664_901_532_9;
        let gb_sd = std::f64::consts::PI / 6f64.sqrt();
        assert!((gb_mean - euler).abs() < 3.0 * gb_sd / (1e5f64).sqrt(), "gumbel mean {gb_mean}");
    }

    #[test]
    fn noise_sampling_is_deterministic() {
        let a = sample_noise(100, 100, 9);
        let b = sample_noise(100, 100, 9);
        assert_eq!(a.gaussian, b.gaussian);
        assert_eq!(a.gumbel, b.gumbel);
    }

    fn engine() -> (HeEngine, KeyContext) {
        HeEngine::keygen_seeded(HeParams::exact(16, 6), 1).unwrap()
    }

    #[test]
    fn empty_buffer_errors_on_consumption() {
        let (engine, keys) = engine();
        let (_, mut buf) = sample_and_encrypt_noise(0, 0, 1, &engine, &keys.encrypt).unwrap();
        assert!(matches!(
            buf.gaussian_window(1, 1.0, &engine, &keys.evaluate),
            Err(DpError::BufferExhausted { .. })
        ));
        assert!(matches!(
            buf.gumbel_window(1, 1.0, &engine, &keys.evaluate),
            Err(DpError::BufferExhausted { .. })
        ));
    }

    #[test]
    fn window_matches_plaintext_samples() {
        let (engine, keys) = engine();
        let (samples, mut buf) = sample_and_encrypt_noise(50, 10, 4, &engine, &keys.encrypt).unwrap();
        // three windows: inside one chunk, crossing the 16-slot boundary, after
        let widths = [5, 14, 9];
        let mut start = 0;
        for &w in &widths {
            let (ct, win) = buf.gaussian_window(w, 2.5, &engine, &keys.evaluate).unwrap();
            assert_eq!(win.start, start);
            let dec = engine.decrypt(&ct, &keys.decrypt).unwrap();
            for j in 0..w {
                assert!((dec[j] - 2.5 * samples.gaussian[start + j]).abs() < 1e-12);
            }
            assert!(dec[w..].iter().all(|&x| x == 0.0));
            start += w;
        }
        assert_eq!(buf.gauss_consumed(), 28);
        assert_eq!(buf.gumbel_consumed(), 0);
    }

    #[test]
    fn window_indices_never_repeat() {
        let (engine, keys) = engine();
        let (_, mut buf) = sample_and_encrypt_noise(40, 0, 4, &engine, &keys.encrypt).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for w in [3usize, 7, 16, 14] {
            let (_, win) = buf.gaussian_window(w, 1.0, &engine, &keys.evaluate).unwrap();
            for i in win.start..win.start + win.count {
                assert!(seen.insert(i), "sample {i} consumed twice");
            }
        }
        assert_eq!(seen.len(), 40);
    }

    #[test]
    fn plaintext_stream_mirrors_buffer_order() {
        let (engine, keys) = engine();
        let (samples, mut buf) = sample_and_encrypt_noise(20, 20, 8, &engine, &keys.encrypt).unwrap();
        let mut stream = PlaintextNoiseStream::new(&samples);
        let (ct, _) = buf.gaussian_window(6, 1.0, &engine, &keys.evaluate).unwrap();
        let plain = stream.gaussian(6);
        let dec = engine.decrypt(&ct, &keys.decrypt).unwrap();
        for j in 0..6 {
            assert!((dec[j] - plain[j]).abs() < 1e-12);
        }
        let (ct2, _) = buf.gumbel_window(4, 3.0, &engine, &keys.evaluate).unwrap();
        let plain2 = stream.gumbel(4);
        let dec2 = engine.decrypt(&ct2, &keys.decrypt).unwrap();
        for j in 0..4 {
            assert!((dec2[j] - 3.0 * plain2[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gumbel_max_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut wins = [0usize; 2];
        for _ in 0..2000 {
            wins[gumbel_max_oracle(&[0.0, 0.0], 1.0, 1.0, &mut rng).unwrap()] += 1;
        }
        let frac = wins[0] as f64 / 2000.0;
        assert!((frac - 0.5).abs() < 0.05, "symmetric pick fraction {frac}");
    }

    #[test]
    fn gumbel_max_infinite_eps_is_argmax() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let scores: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let pick = gumbel_max_oracle(&scores, f64::INFINITY, 1.0, &mut rng).unwrap();
            assert_eq!(pick, argmax(&scores));
        }
    }

    #[test]
    fn neighboring_dataset_sensitivity_small() {
        // 1e3-trial miniature of the Thm 1 bound check (the full 1e4-trial
        // sweep lives in the acceptance suite)
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let n = 50usize;
        let omega = 4usize;
        for _ in 0..1000 {
            let alpha: f64 = rng.gen_range(0.5..3.0);
            let q: Vec<f64> = (0..omega).map(|_| rng.gen_range(0..=n) as f64).collect();
            let q_est: Vec<f64> = (0..omega).map(|_| rng.gen_range(0.0..n as f64)).collect();
            let score = |qv: &[f64]| {
                alpha * qv.iter().zip(&q_est).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            };
            let mut q2 = q.clone();
            let cell = rng.gen_range(0..omega);
            q2[cell] += 1.0;
            let diff = (score(&q2) - score(&q)).abs();
            assert!(diff <= sensitivity(&[alpha], n) + 1e-9, "diff {diff}");
        }
    }
}
