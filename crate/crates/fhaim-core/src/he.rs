//! Leveled, slot-parallel approximate homomorphic arithmetic.
//!
//! Two reference backends stand in for a real lattice scheme: `Exact` carries
//! the true slot values and tracks noise symbolically, `Noisy` perturbs every
//! operation with i.i.d. Gaussian error calibrated against the decryption
//! tolerance. Protocol code never reads slots directly; everything goes
//! through the engine, which enforces level accounting, capability checks and
//! the decryption radius.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum HeError {
    #[error("slot count {0} is not a power of two")]
    SlotCountNotPowerOfTwo(usize),
    #[error("depth budget {0} is below the minimum of 2")]
    DepthBudgetTooSmall(u32),
    #[error("decrypt tolerance {0} outside [1e-12, 1e-6]")]
    ToleranceOutOfRange(f64),
    #[error("negative per-op noise {0}")]
    NegativeNoise(f64),
    #[error("payload of length {len} exceeds slot count {slots}")]
    PayloadTooLong { len: usize, slots: usize },
    #[error("capability does not belong to this key context")]
    CapabilityMismatch,
    #[error("multiplicative level exhausted")]
    LevelExhausted,
    #[error("rotation offset {k} outside [0, {slots})")]
    RotationOutOfRange { k: usize, slots: usize },
    #[error("slot counts differ: {0} vs {1}")]
    SlotCountMismatch(usize, usize),
    #[error("decryption radius exceeded: noise bound {bound:.3e} over budget {budget:.3e}")]
    DecryptionRadiusExceeded { bound: f64, budget: f64 },
    #[error("unsupported ciphertext wire version {0}")]
    UnsupportedWireVersion(u32),
    #[error("ciphertext wire decode: {0}")]
    WireDecode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Exact,
    Noisy,
}

/// Engine parameters. `scale` is informational in the reference backends; it
/// records the fixed-point scale exponent a lattice backend would use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeParams {
    pub slot_count: usize,
    pub depth_budget: u32,
    pub scale: u32,
    pub decrypt_tolerance: f64,
    pub backend: BackendKind,
    pub noise_per_op: f64,
}

impl Default for HeParams {
    fn default() -> Self {
        HeParams {
            slot_count: 8192,
            depth_budget: 12,
            scale: 40,
            decrypt_tolerance: 1e-9,
            backend: BackendKind::Exact,
            noise_per_op: 1e-11,
        }
    }
}

impl HeParams {
    pub fn validate(&self) -> Result<(), HeError> {
        if !self.slot_count.is_power_of_two() {
            return Err(HeError::SlotCountNotPowerOfTwo(self.slot_count));
        }
        if self.depth_budget < 2 {
            return Err(HeError::DepthBudgetTooSmall(self.depth_budget));
        }
        if !(1e-12..=1e-6).contains(&self.decrypt_tolerance) {
            return Err(HeError::ToleranceOutOfRange(self.decrypt_tolerance));
        }
        if self.noise_per_op < 0.0 {
            return Err(HeError::NegativeNoise(self.noise_per_op));
        }
        Ok(())
    }

    pub fn exact(slot_count: usize, depth_budget: u32) -> Self {
        HeParams { slot_count, depth_budget, backend: BackendKind::Exact, ..Default::default() }
    }

    /// Noisy profile. The tolerance is the loosest validated value: DP noise
    /// scales multiply ciphertexts by plaintexts in the 1e4 range, which
    /// amplifies the simulated error accordingly.
    pub fn noisy(slot_count: usize, depth_budget: u32) -> Self {
        HeParams {
            slot_count,
            depth_budget,
            backend: BackendKind::Noisy,
            decrypt_tolerance: 1e-6,
            ..Default::default()
        }
    }
}

/// Capability handles. Fields are private; the only way to obtain one is
/// through `HeEngine::keygen`, so a handle cannot be forged or derived from
/// another role's handle.
#[derive(Debug, Clone)]
pub struct EncryptKey {
    ctx: u64,
}

#[derive(Debug, Clone)]
pub struct EvaluateKey {
    ctx: u64,
}

#[derive(Debug, Clone)]
pub struct DecryptKey {
    ctx: u64,
}

/// The three capabilities minted together by keygen.
#[derive(Debug, Clone)]
pub struct KeyContext {
    pub encrypt: EncryptKey,
    pub evaluate: EvaluateKey,
    pub decrypt: DecryptKey,
}

#[derive(Debug, Clone)]
pub struct Ciphertext {
    slots: Vec<f64>,
    level: u32,
    /// variance of the accumulated i.i.d. per-op error in each slot
    noise_var: f64,
    ctx: u64,
}

impl Ciphertext {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Six-sigma envelope of the accumulated error; the decryption radius
    /// compares this against the tolerance.
    pub fn noise_bound(&self) -> f64 {
        6.0 * self.noise_var.sqrt()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn to_wire(&self) -> CiphertextWire {
        CiphertextWire {
            version: WIRE_VERSION,
            ctx: self.ctx,
            level: self.level,
            noise_var: self.noise_var,
            slots: self.slots.clone(),
        }
    }

    pub fn from_wire(wire: CiphertextWire) -> Result<Self, HeError> {
        if wire.version != WIRE_VERSION {
            return Err(HeError::UnsupportedWireVersion(wire.version));
        }
        Ok(Ciphertext { slots: wire.slots, level: wire.level, noise_var: wire.noise_var, ctx: wire.ctx })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("ciphertext wire serialization")
    }

    pub fn from_json(s: &str) -> Result<Self, HeError> {
        let wire: CiphertextWire = serde_json::from_str(s).map_err(|e| HeError::WireDecode(e.to_string()))?;
        Self::from_wire(wire)
    }
}

pub const WIRE_VERSION: u32 = 1;

/// Versioned serialization container for ciphertexts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CiphertextWire {
    pub version: u32,
    pub ctx: u64,
    pub level: u32,
    pub noise_var: f64,
    pub slots: Vec<f64>,
}

/// Exact, monotone operation counters used by the complexity acceptance tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub adds: u64,
    pub mults: u64,
    pub plain_mults: u64,
    pub rotations: u64,
    pub encryptions: u64,
    pub decryptions: u64,
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;
    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            adds: self.adds - rhs.adds,
            mults: self.mults - rhs.mults,
            plain_mults: self.plain_mults - rhs.plain_mults,
            rotations: self.rotations - rhs.rotations,
            encryptions: self.encryptions - rhs.encryptions,
            decryptions: self.decryptions - rhs.decryptions,
        }
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            adds: self.adds + rhs.adds,
            mults: self.mults + rhs.mults,
            plain_mults: self.plain_mults + rhs.plain_mults,
            rotations: self.rotations + rhs.rotations,
            encryptions: self.encryptions + rhs.encryptions,
            decryptions: self.decryptions + rhs.decryptions,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    adds: AtomicU64,
    mults: AtomicU64,
    plain_mults: AtomicU64,
    rotations: AtomicU64,
    encryptions: AtomicU64,
    decryptions: AtomicU64,
}

#[derive(Debug)]
pub struct HeEngine {
    params: HeParams,
    ctx: u64,
    counters: Counters,
    rng: Mutex<ChaCha20Rng>,
}

// Per-op variance contribution of the injected error.
fn op_var(sigma: f64) -> f64 {
    sigma * sigma
}

impl HeEngine {
    /// Mints an engine plus a fresh capability triple bound to it.
    pub fn keygen(params: HeParams) -> Result<(HeEngine, KeyContext), HeError> {
        let seed = rand::thread_rng().gen::<u64>();
        Self::keygen_seeded(params, seed)
    }

    /// Deterministic variant for reproducible noisy-backend runs.
    pub fn keygen_seeded(params: HeParams, seed: u64) -> Result<(HeEngine, KeyContext), HeError> {
        params.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ctx = rng.gen::<u64>();
        let engine = HeEngine { params, ctx, counters: Counters::default(), rng: Mutex::new(rng) };
        let keys = KeyContext {
            encrypt: EncryptKey { ctx },
            evaluate: EvaluateKey { ctx },
            decrypt: DecryptKey { ctx },
        };
        Ok((engine, keys))
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count
    }

    pub fn depth_budget(&self) -> u32 {
        self.params.depth_budget
    }

    pub fn counters(&self) -> OpCounts {
        OpCounts {
            adds: self.counters.adds.load(Ordering::Relaxed),
            mults: self.counters.mults.load(Ordering::Relaxed),
            plain_mults: self.counters.plain_mults.load(Ordering::Relaxed),
            rotations: self.counters.rotations.load(Ordering::Relaxed),
            encryptions: self.counters.encryptions.load(Ordering::Relaxed),
            decryptions: self.counters.decryptions.load(Ordering::Relaxed),
        }
    }

    fn sigma(&self) -> f64 {
        match self.params.backend {
            BackendKind::Exact => 0.0,
            BackendKind::Noisy => self.params.noise_per_op,
        }
    }

    fn inject(&self, slots: &mut [f64]) {
        let sigma = self.sigma();
        if sigma == 0.0 {
            return;
        }
        let normal = Normal::new(0.0, sigma).expect("valid normal");
        let mut rng = self.rng.lock().expect("rng poisoned");
        for s in slots.iter_mut() {
            *s += normal.sample(&mut *rng);
        }
    }

    fn check_ctx(&self, ctx: u64) -> Result<(), HeError> {
        if ctx != self.ctx {
            return Err(HeError::CapabilityMismatch);
        }
        Ok(())
    }

    fn check_ct(&self, ct: &Ciphertext) -> Result<(), HeError> {
        self.check_ctx(ct.ctx)?;
        if ct.slots.len() != self.params.slot_count {
            return Err(HeError::SlotCountMismatch(ct.slots.len(), self.params.slot_count));
        }
        Ok(())
    }

    pub fn encrypt(&self, values: &[f64], cap: &EncryptKey) -> Result<Ciphertext, HeError> {
        self.check_ctx(cap.ctx)?;
        let l = self.params.slot_count;
        if values.len() > l {
            return Err(HeError::PayloadTooLong { len: values.len(), slots: l });
        }
        let mut slots = vec![0.0; l];
        slots[..values.len()].copy_from_slice(values);
        self.inject(&mut slots);
        self.counters.encryptions.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            slots,
            level: self.params.depth_budget,
            noise_var: op_var(self.sigma()),
            ctx: self.ctx,
        })
    }

    pub fn decrypt(&self, ct: &Ciphertext, cap: &DecryptKey) -> Result<Vec<f64>, HeError> {
        self.check_ctx(cap.ctx)?;
        self.check_ct(ct)?;
        // The decryption radius scales with the message magnitude, mirroring the
        // relative precision of an approximate scheme at a fixed scale.
        let magnitude = ct.slots.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let budget = self.params.decrypt_tolerance * (1.0 + magnitude);
        let bound = ct.noise_bound();
        if bound > budget {
            return Err(HeError::DecryptionRadiusExceeded { bound, budget });
        }
        self.counters.decryptions.fetch_add(1, Ordering::Relaxed);
        Ok(ct.slots.clone())
    }

    fn binary_op(
        &self,
        a: &Ciphertext,
        b: &Ciphertext,
        cap: &EvaluateKey,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Ciphertext, HeError> {
        self.check_ctx(cap.ctx)?;
        self.check_ct(a)?;
        self.check_ct(b)?;
        let mut slots: Vec<f64> = a.slots.iter().zip(&b.slots).map(|(&x, &y)| f(x, y)).collect();
        self.inject(&mut slots);
        self.counters.adds.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            slots,
            level: a.level.min(b.level),
            noise_var: a.noise_var + b.noise_var + op_var(self.sigma()),
            ctx: self.ctx,
        })
    }

    /// Slotwise sum; level is the minimum of the operands, no depth consumed.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext, cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        self.binary_op(a, b, cap, |x, y| x + y)
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext, cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        self.binary_op(a, b, cap, |x, y| x - y)
    }

    fn pad_plain(&self, p: &[f64]) -> Result<Vec<f64>, HeError> {
        let l = self.params.slot_count;
        if p.len() > l {
            return Err(HeError::PayloadTooLong { len: p.len(), slots: l });
        }
        let mut v = vec![0.0; l];
        v[..p.len()].copy_from_slice(p);
        Ok(v)
    }

    pub fn add_plain(&self, a: &Ciphertext, p: &[f64], cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        self.check_ctx(cap.ctx)?;
        self.check_ct(a)?;
        let p = self.pad_plain(p)?;
        let mut slots: Vec<f64> = a.slots.iter().zip(&p).map(|(&x, &y)| x + y).collect();
        self.inject(&mut slots);
        self.counters.adds.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            slots,
            level: a.level,
            noise_var: a.noise_var + op_var(self.sigma()),
            ctx: self.ctx,
        })
    }

    pub fn sub_plain(&self, a: &Ciphertext, p: &[f64], cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        let negated: Vec<f64> = p.iter().map(|x| -x).collect();
        self.add_plain(a, &negated, cap)
    }

    /// Slotwise plaintext product. Consumes one level, like the rescale after a
    /// plaintext multiplication in a leveled scheme.
    pub fn mult_plain(&self, a: &Ciphertext, p: &[f64], cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        self.check_ctx(cap.ctx)?;
        self.check_ct(a)?;
        if a.level == 0 {
            return Err(HeError::LevelExhausted);
        }
        let p = self.pad_plain(p)?;
        let p_max = p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut slots: Vec<f64> = a.slots.iter().zip(&p).map(|(&x, &y)| x * y).collect();
        self.inject(&mut slots);
        self.counters.plain_mults.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            slots,
            level: a.level - 1,
            noise_var: a.noise_var * p_max.max(1.0).powi(2) + op_var(self.sigma()),
            ctx: self.ctx,
        })
    }

    /// Slotwise ciphertext product at level `min(a, b) - 1`.
    pub fn mult(&self, a: &Ciphertext, b: &Ciphertext, cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        self.check_ctx(cap.ctx)?;
        self.check_ct(a)?;
        self.check_ct(b)?;
        if a.level.min(b.level) < 1 {
            return Err(HeError::LevelExhausted);
        }
        let a_max = a.slots.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let b_max = b.slots.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut slots: Vec<f64> = a.slots.iter().zip(&b.slots).map(|(&x, &y)| x * y).collect();
        self.inject(&mut slots);
        self.counters.mults.fetch_add(1, Ordering::Relaxed);
        let noise_var = a.noise_var * b_max.max(1.0).powi(2)
            + b.noise_var * a_max.max(1.0).powi(2)
            + a.noise_var * b.noise_var
            + op_var(self.sigma());
        Ok(Ciphertext { slots, level: a.level.min(b.level), noise_var, ctx: self.ctx }
            .with_level(a.level.min(b.level) - 1))
    }

    /// Cyclic left shift: out[i] = in[(i + k) mod L]. Level unchanged.
    pub fn rotate(&self, ct: &Ciphertext, k: usize, cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        self.check_ctx(cap.ctx)?;
        self.check_ct(ct)?;
        let l = self.params.slot_count;
        if k >= l {
            return Err(HeError::RotationOutOfRange { k, slots: l });
        }
        let mut slots = vec![0.0; l];
        for i in 0..l {
            slots[i] = ct.slots[(i + k) % l];
        }
        self.inject(&mut slots);
        self.counters.rotations.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            slots,
            level: ct.level,
            noise_var: ct.noise_var + op_var(self.sigma()),
            ctx: self.ctx,
        })
    }

    /// Every slot ends up holding the sum of all slots, via log2(L)
    /// rotate-and-add doublings. Depth 0, exactly log2(L) rotations.
    pub fn slot_sum(&self, ct: &Ciphertext, cap: &EvaluateKey) -> Result<Ciphertext, HeError> {
        let mut acc = ct.clone();
        let mut shift = 1usize;
        while shift < self.params.slot_count {
            let rotated = self.rotate(&acc, shift, cap)?;
            acc = self.add(&acc, &rotated, cap)?;
            shift <<= 1;
        }
        Ok(acc)
    }
}

impl Ciphertext {
    fn with_level(mut self, level: u32) -> Self {
        self.level = level;
        self
    }
}

/// Plaintext replica of `slot_sum`'s rotate-and-add doubling over a
/// zero-padded vector. Used by plaintext oracles that must agree bit-for-bit
/// with the exact backend.
pub fn tree_sum(values: &[f64], slot_count: usize) -> f64 {
    assert!(slot_count.is_power_of_two() && values.len() <= slot_count);
    let mut v = vec![0.0; slot_count];
    v[..values.len()].copy_from_slice(values);
    let mut shift = 1usize;
    while shift < slot_count {
        let prev = v.clone();
        for i in 0..slot_count {
            v[i] = prev[i] + prev[(i + shift) % slot_count];
        }
        shift <<= 1;
    }
    v[0]
}
