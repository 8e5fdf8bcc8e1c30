//! Seeded Monte Carlo execution of the single-state protocol.
//!
//! Each iteration: Alice sends `|+⟩`, which leaves the forward channel as
//! `|e(b)⟩`. Bob either reflects it (CTRL) or discards it and sends `|0⟩`
//! (SIFT). The reverse channel acts on the returning qubit and Alice measures
//! in Z or X. Only her conclusive outcomes (Z → 1, X → −) are kept.
//!
//! Outcomes are sampled from the returning qubit's reduced state. Eve's memory
//! is never simulated since only Alice's statistics are used downstream.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channels::{apply_depolarizing, DepolarizingChannel, ForwardAttack, ReverseAttack};
use crate::error::{check_range, Error, Result};
use crate::qmath::{born_probability, DensityOperator, PureState};
use crate::security::{
    bound_b, joint_from_q, key_rate_lower, lambda_from, KeyRateReport, Observables, QuadQ,
};

/// Version of the transcript JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const MIN_ITERATIONS: usize = 8;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_TEST_THRESHOLD: f64 = 0.1;

/// What happens to the qubit on its way back to Alice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReverseChannel {
    Ideal,
    Depolarizing { p: DepolarizingChannel },
    Attack { attack: ReverseAttack },
}

impl ReverseChannel {
    pub fn depolarizing(p: f64) -> Result<Self> {
        Ok(Self::Depolarizing {
            p: DepolarizingChannel::new(p)?,
        })
    }

    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        match self {
            Self::Ideal => Ok(rho.clone()),
            Self::Depolarizing { p } => apply_depolarizing(rho, *p),
            Self::Attack { attack } => attack.apply(rho),
        }
    }
}

/// How the TEST/INFO size `n` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizingMode {
    /// `n = ⌊N / (4(1+δ))⌋`, abort when `l < 2n`.
    PaperLiteral,
    /// `n = ⌊l/2⌋`, abort only when `l < 2`.
    #[default]
    RealizedL,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub iterations: usize,
    pub delta: f64,
    pub b: f64,
    pub reverse: ReverseChannel,
    pub seed: u64,
    pub test_threshold: f64,
    pub sizing_mode: SizingMode,
}

impl ProtocolConfig {
    /// Config with default `δ`, `P_T` and sizing mode.
    pub fn new(iterations: usize, b: f64, reverse: ReverseChannel, seed: u64) -> Result<Self> {
        let cfg = Self {
            iterations,
            delta: DEFAULT_DELTA,
            b,
            reverse,
            seed,
            test_threshold: DEFAULT_TEST_THRESHOLD,
            sizing_mode: SizingMode::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < MIN_ITERATIONS {
            return Err(Error::Domain {
                what: "iterations",
                value: self.iterations as f64,
                domain: "[8, ∞)",
            });
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Domain {
                what: "delta",
                value: self.delta,
                domain: "(0, ∞)",
            });
        }
        check_range("test_threshold", self.test_threshold, 0.0, 1.0, "[0, 1]")?;
        ForwardAttack::new(self.b)?;
        Ok(())
    }

    pub fn forward(&self) -> Result<ForwardAttack> {
        ForwardAttack::new(self.b)
    }
}

/// States returned to Alice on each of Bob's branches.
#[derive(Debug, Clone)]
pub struct ReturnedStates {
    pub ctrl: DensityOperator,
    pub sift: DensityOperator,
}

/// Born probabilities of Alice's conclusive outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BornTable {
    pub ctrl_z1: f64,
    pub ctrl_x_minus: f64,
    pub sift_z1: f64,
    pub sift_x_minus: f64,
}

impl BornTable {
    /// Probability that an iteration is kept.
    pub fn keep_probability(&self) -> f64 {
        0.25 * (self.ctrl_z1 + self.ctrl_x_minus + self.sift_z1 + self.sift_x_minus)
    }
}

pub fn returned_states(config: &ProtocolConfig) -> Result<ReturnedStates> {
    let fwd = config.forward()?;
    Ok(ReturnedStates {
        ctrl: config.reverse.apply(&fwd.e_state().density())?,
        sift: config.reverse.apply(&PureState::zero().density())?,
    })
}

pub fn born_table(states: &ReturnedStates) -> Result<BornTable> {
    let one = PureState::one().projector();
    let minus = PureState::minus().projector();
    Ok(BornTable {
        ctrl_z1: born_probability(&states.ctrl, &one)?,
        ctrl_x_minus: born_probability(&states.ctrl, &minus)?,
        sift_z1: born_probability(&states.sift, &one)?,
        sift_x_minus: born_probability(&states.sift, &minus)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BobChoice {
    #[serde(rename = "CTRL")]
    Ctrl,
    #[serde(rename = "SIFT")]
    Sift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub bob_choice: BobChoice,
    pub alice_basis: Basis,
    pub alice_outcome: Outcome,
    pub kept: bool,
    /// Alice's raw bit, or −1 when inconclusive.
    pub k_a: i8,
    pub k_b: u8,
}

impl IterationRecord {
    /// Derives `kept`, `k_a` and `k_b` from the choices.
    ///
    /// Z → 1 rules out Bob's `|0⟩`, so he reflected (bit 0); X → − rules out
    /// `|+⟩`, so he resent (bit 1).
    pub fn new(bob_choice: BobChoice, alice_basis: Basis, alice_outcome: Outcome) -> Result<Self> {
        let k_a = match (alice_basis, alice_outcome) {
            (Basis::Z, Outcome::One) => 0,
            (Basis::X, Outcome::Minus) => 1,
            (Basis::Z, Outcome::Zero) | (Basis::X, Outcome::Plus) => -1,
            (b, o) => {
                return Err(Error::Invariant(format!(
                    "outcome {o:?} is not in basis {b:?}"
                )))
            }
        };
        let k_b = match bob_choice {
            BobChoice::Ctrl => 0,
            BobChoice::Sift => 1,
        };
        Ok(Self {
            bob_choice,
            alice_basis,
            alice_outcome,
            kept: k_a >= 0,
            k_a,
            k_b,
        })
    }
}

/// Bit string serialized as text, e.g. `"0110"`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString(pub Vec<u8>);

impl BitString {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 0 { "0" } else { "1" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for BitString {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(Error::Invariant(format!(
                    "invalid bit character {:?}",
                    c as char
                ))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BitString)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbortReason {
    /// Too few kept iterations for the chosen sizing.
    SizingShortfall {
        l: usize,
        required: usize,
    },
    TestErrorRate {
        rate: f64,
        threshold: f64,
    },
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SizingShortfall { l, required } => {
                write!(f, "sifted length {l} is below the required {required}")
            }
            Self::TestErrorRate { rate, threshold } => {
                write!(f, "test error rate {rate} exceeds {threshold}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftOutcome {
    pub sifted_a: BitString,
    pub sifted_b: BitString,
    /// TEST (and INFO) size.
    pub n: usize,
    pub abort: Option<AbortReason>,
}

pub fn sift(records: &[IterationRecord], mode: SizingMode, delta: f64) -> SiftOutcome {
    let (a, b): (Vec<u8>, Vec<u8>) = records
        .iter()
        .filter(|r| r.kept)
        .map(|r| (r.k_a as u8, r.k_b))
        .unzip();
    let l = a.len();
    let (n, required) = match mode {
        SizingMode::PaperLiteral => {
            let n = (records.len() as f64 / (4.0 * (1.0 + delta))).floor() as usize;
            // n = 0 leaves nothing to test, so it is a shortfall as well
            (n, (2 * n).max(2))
        }
        SizingMode::RealizedL => (l / 2, 2),
    };
    let abort = (l < required).then_some(AbortReason::SizingShortfall { l, required });
    SiftOutcome {
        sifted_a: BitString(a),
        sifted_b: BitString(b),
        n,
        abort,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRound {
    /// Sorted TEST positions within the sifted strings.
    pub positions: Vec<usize>,
    pub error_rate: f64,
    pub abort: bool,
    pub info_a: BitString,
    pub info_b: BitString,
}

pub fn test_round<R: Rng + ?Sized>(
    sifted_a: &BitString,
    sifted_b: &BitString,
    n: usize,
    p_t: f64,
    rng: &mut R,
) -> Result<TestRound> {
    let len = sifted_a.len();
    if sifted_b.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: sifted_b.len(),
        });
    }
    if n == 0 || n > len / 2 {
        return Err(Error::Domain {
            what: "n",
            value: n as f64,
            domain: "[1, sifted length / 2]",
        });
    }
    check_range("test_threshold", p_t, 0.0, 1.0, "[0, 1]")?;
    let mut positions = index::sample(rng, len, n).into_vec();
    positions.sort_unstable();
    let errors = positions
        .iter()
        .filter(|&&i| sifted_a.0[i] != sifted_b.0[i])
        .count();
    let error_rate = errors as f64 / n as f64;
    let mut is_test = vec![false; len];
    for &i in &positions {
        is_test[i] = true;
    }
    let (info_a, info_b): (Vec<u8>, Vec<u8>) = (0..len)
        .filter(|&i| !is_test[i])
        .take(n)
        .map(|i| (sifted_a.0[i], sifted_b.0[i]))
        .unzip();
    Ok(TestRound {
        positions,
        error_rate,
        abort: error_rate > p_t,
        info_a: BitString(info_a),
        info_b: BitString(info_b),
    })
}

/// A frequency estimate `successes / trials`; `value` is `None` when no
/// trials were observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub successes: u64,
    pub trials: u64,
}

impl Estimate {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        let value = (trials > 0).then(|| successes as f64 / trials as f64);
        Self {
            value,
            successes,
            trials,
        }
    }

    /// Binomial standard deviation of the estimate at true probability `p`.
    pub fn sigma(&self, p: f64) -> Option<f64> {
        (self.trials > 0).then(|| (p * (1.0 - p) / self.trials as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedStats {
    pub e_z_hat: Estimate,
    pub e_x_hat: Estimate,
    /// CTRL, Z basis, outcome 1.
    pub p00_ctrl_hat: Estimate,
    /// CTRL, X basis, outcome −. Same event as `e_x_hat`.
    pub p10_ctrl_hat: Estimate,
    /// Kept counts indexed `[k_a][k_b]`.
    pub joint_counts: [[u64; 2]; 2],
    pub joint_hat: Option<[[f64; 2]; 2]>,
    pub iterations: u64,
}

pub fn estimate_stats(records: &[IterationRecord]) -> ObservedStats {
    let count = |choice: BobChoice, basis: Basis, hit: Outcome| {
        let pool = records
            .iter()
            .filter(|r| r.bob_choice == choice && r.alice_basis == basis);
        let trials = pool.clone().count() as u64;
        let successes = pool.filter(|r| r.alice_outcome == hit).count() as u64;
        Estimate::from_counts(successes, trials)
    };
    let e_x_hat = count(BobChoice::Ctrl, Basis::X, Outcome::Minus);
    let mut joint_counts = [[0u64; 2]; 2];
    for r in records.iter().filter(|r| r.kept) {
        joint_counts[r.k_a as usize][r.k_b as usize] += 1;
    }
    let l: u64 = joint_counts.iter().flatten().sum();
    let joint_hat = (l > 0).then(|| joint_counts.map(|row| row.map(|c| c as f64 / l as f64)));
    ObservedStats {
        e_z_hat: count(BobChoice::Sift, Basis::Z, Outcome::One),
        e_x_hat,
        p00_ctrl_hat: count(BobChoice::Ctrl, Basis::Z, Outcome::One),
        p10_ctrl_hat: e_x_hat,
        joint_counts,
        joint_hat,
        iterations: records.len() as u64,
    }
}

impl ObservedStats {
    /// Empirical `q(i,j) = 2 · #(k_a = i, k_b = j) / N`.
    pub fn q_hat(&self) -> Option<QuadQ> {
        if self.iterations == 0 {
            return None;
        }
        let f = |i: usize, j: usize| 2.0 * self.joint_counts[i][j] as f64 / self.iterations as f64;
        QuadQ::new(f(0, 0), f(0, 1), f(1, 0), f(1, 1)).ok()
    }

    pub fn observables(&self) -> Option<Observables> {
        let q = self.q_hat()?;
        Observables::new(
            self.e_z_hat.value?,
            self.e_x_hat.value?,
            self.p00_ctrl_hat.value?,
            self.p10_ctrl_hat.value?,
            q.q11,
        )
        .ok()
    }

    /// Key-rate lower bound evaluated on the estimates, when all are present.
    ///
    /// Sampling noise can push `𝓑` above `‖l1‖·‖l2‖ = 4√(q00·q11)`, which no
    /// attack reaches, so the estimate is capped there.
    pub fn key_rate(&self, fwd: &ForwardAttack) -> Option<KeyRateReport> {
        let q = self.q_hat()?;
        let b = bound_b(fwd, &self.observables()?).min(4.0 * (q.q00 * q.q11).sqrt());
        let lambda = lambda_from(q.q00, q.q11, b).ok()?;
        Some(
            key_rate_lower(&joint_from_q(&q).ok()?, lambda)
                .ok()?
                .with_bound(b),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub config: ProtocolConfig,
    pub records: Vec<IterationRecord>,
    pub sifted_a: BitString,
    pub sifted_b: BitString,
    pub n: usize,
    pub test_positions: Vec<usize>,
    /// `None` when the run stopped before the TEST round.
    pub test_error_rate: Option<f64>,
    pub info_a: BitString,
    pub info_b: BitString,
    pub abort: Option<AbortReason>,
    pub stats: ObservedStats,
    pub keep_rate: f64,
    pub efficiency: f64,
    pub estimated_key_rate: Option<KeyRateReport>,
}

impl Transcript {
    pub fn aborted(&self) -> bool {
        self.abort.is_some()
    }

    pub fn sifted_len(&self) -> usize {
        self.sifted_a.len()
    }

    pub fn to_document(&self, include_records: bool) -> TranscriptDocument {
        TranscriptDocument {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            records: include_records.then(|| self.records.clone()),
            summary: TranscriptSummary {
                iterations: self.config.iterations,
                sifted_length: self.sifted_len(),
                n: self.n,
                info_length: self.info_a.len(),
                keep_rate: self.keep_rate,
                efficiency: self.efficiency,
                test_error_rate: self.test_error_rate,
                aborted: self.aborted(),
                abort_reason: self.abort.clone(),
                stats: self.stats,
                estimated_key_rate: self.estimated_key_rate,
            },
            sifted_a: self.sifted_a.clone(),
            sifted_b: self.sifted_b.clone(),
            test_positions: self.test_positions.clone(),
            info_a: self.info_a.clone(),
            info_b: self.info_b.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub iterations: usize,
    pub sifted_length: usize,
    pub n: usize,
    pub info_length: usize,
    pub keep_rate: f64,
    pub efficiency: f64,
    pub test_error_rate: Option<f64>,
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
    pub stats: ObservedStats,
    pub estimated_key_rate: Option<KeyRateReport>,
}

/// On-disk form of a [`Transcript`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptDocument {
    pub schema_version: u32,
    pub config: ProtocolConfig,
    pub summary: TranscriptSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<IterationRecord>>,
    pub sifted_a: BitString,
    pub sifted_b: BitString,
    pub test_positions: Vec<usize>,
    pub info_a: BitString,
    pub info_b: BitString,
}

impl TranscriptDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript is always serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Self =
            serde_json::from_str(s).map_err(|e| Error::Invariant(format!("transcript: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Invariant(format!(
                "unsupported transcript schema_version {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

fn sample_iteration<R: Rng + ?Sized>(rng: &mut R, born: &BornTable) -> IterationRecord {
    let bob = if rng.random_bool(0.5) {
        BobChoice::Sift
    } else {
        BobChoice::Ctrl
    };
    let basis = if rng.random_bool(0.5) {
        Basis::X
    } else {
        Basis::Z
    };
    let u: f64 = rng.random();
    let outcome = match (bob, basis) {
        (BobChoice::Ctrl, Basis::Z) if u < born.ctrl_z1 => Outcome::One,
        (BobChoice::Sift, Basis::Z) if u < born.sift_z1 => Outcome::One,
        (_, Basis::Z) => Outcome::Zero,
        (BobChoice::Ctrl, Basis::X) if u < born.ctrl_x_minus => Outcome::Minus,
        (BobChoice::Sift, Basis::X) if u < born.sift_x_minus => Outcome::Minus,
        (_, Basis::X) => Outcome::Plus,
    };
    IterationRecord::new(bob, basis, outcome).expect("outcome drawn from the chosen basis")
}

pub fn run(config: &ProtocolConfig) -> Result<Transcript> {
    config.validate()?;
    let fwd = config.forward()?;
    let born = born_table(&returned_states(config)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let records: Vec<IterationRecord> = (0..config.iterations)
        .map(|_| sample_iteration(&mut rng, &born))
        .collect();
    let stats = estimate_stats(&records);
    let sifted = sift(&records, config.sizing_mode, config.delta);

    let mut abort = sifted.abort.clone();
    let mut test_positions = Vec::new();
    let mut test_error_rate = None;
    let mut info = (BitString::default(), BitString::default());
    if abort.is_none() {
        let t = test_round(
            &sifted.sifted_a,
            &sifted.sifted_b,
            sifted.n,
            config.test_threshold,
            &mut rng,
        )?;
        test_error_rate = Some(t.error_rate);
        if t.abort {
            abort = Some(AbortReason::TestErrorRate {
                rate: t.error_rate,
                threshold: config.test_threshold,
            });
        } else {
            info = (t.info_a, t.info_b);
        }
        test_positions = t.positions;
    }

    let n_iter = config.iterations as f64;
    Ok(Transcript {
        config: config.clone(),
        keep_rate: sifted.sifted_a.len() as f64 / n_iter,
        efficiency: info.0.len() as f64 / (2.0 * n_iter),
        estimated_key_rate: stats.key_rate(&fwd),
        records,
        sifted_a: sifted.sifted_a,
        sifted_b: sifted.sifted_b,
        n: sifted.n,
        test_positions,
        test_error_rate,
        info_a: info.0,
        info_b: info.1,
        abort,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::depolarizing_dilation;
    use crate::security::dep_statistics;

    fn within(est: &Estimate, p: f64, k: f64) -> bool {
        let v = est.value.expect("estimate present");
        (v - p).abs() <= k * est.sigma(p).unwrap() + 1e-12
    }

    fn dep_config(n: usize, b: f64, p: f64, seed: u64) -> ProtocolConfig {
        ProtocolConfig::new(n, b, ReverseChannel::depolarizing(p).unwrap(), seed).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::new(7, 0.0, ReverseChannel::Ideal, 0).is_err());
        assert!(ProtocolConfig::new(8, 0.5, ReverseChannel::Ideal, 0).is_err());
        let mut c = ProtocolConfig::new(8, 0.0, ReverseChannel::Ideal, 0).unwrap();
        c.test_threshold = 1.5;
        assert!(c.validate().is_err());
        c.test_threshold = 0.1;
        c.delta = 0.0;
        assert!(c.validate().is_err());
        assert!(ReverseChannel::depolarizing(1.2).is_err());
    }

    #[test]
    fn record_bits() {
        let r = IterationRecord::new(BobChoice::Ctrl, Basis::Z, Outcome::One).unwrap();
        assert!(r.kept && r.k_a == 0 && r.k_b == 0);
        let r = IterationRecord::new(BobChoice::Sift, Basis::X, Outcome::Minus).unwrap();
        assert!(r.kept && r.k_a == 1 && r.k_b == 1);
        let r = IterationRecord::new(BobChoice::Sift, Basis::X, Outcome::Plus).unwrap();
        assert!(!r.kept && r.k_a == -1);
        assert!(IterationRecord::new(BobChoice::Sift, Basis::X, Outcome::One).is_err());
    }

    #[test]
    fn born_table_matches_depolarizing_q() {
        for (b, p) in [(0.0, 0.0), (0.1, 0.2), (-0.3, 0.05)] {
            let born = born_table(&returned_states(&dep_config(8, b, p, 0)).unwrap()).unwrap();
            let s = dep_statistics(b, p).unwrap();
            assert!((born.keep_probability() - s.k / 2.0).abs() < 1e-12);
            assert!((born.sift_z1 - s.observables.e_z).abs() < 1e-12);
            assert!((born.ctrl_x_minus - s.observables.p_1_given_0).abs() < 1e-12);
            assert!((born.ctrl_z1 - s.observables.p_0_given_0).abs() < 1e-12);
        }
    }

    #[test]
    fn dilation_attack_channel_matches_depolarizing() {
        let cfg = dep_config(8, 0.2, 0.3, 0);
        let mut atk = cfg.clone();
        atk.reverse = ReverseChannel::Attack {
            attack: depolarizing_dilation(0.3).unwrap(),
        };
        let a = returned_states(&cfg).unwrap();
        let b = returned_states(&atk).unwrap();
        assert!(a.ctrl.max_abs_diff(&b.ctrl) < 1e-12);
        assert!(a.sift.max_abs_diff(&b.sift) < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = dep_config(5000, 0.1, 0.1, 42);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_document(true).to_json(), b.to_document(true).to_json());
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(run(&other).unwrap().records, a.records);
    }

    #[test]
    fn noiseless_run() {
        let cfg = ProtocolConfig::new(200_000, 0.0, ReverseChannel::Ideal, 11).unwrap();
        let t = run(&cfg).unwrap();
        assert!(!t.aborted());
        assert_eq!(t.test_error_rate, Some(0.0));
        assert_eq!(t.sifted_a, t.sifted_b);
        assert_eq!(t.info_a, t.info_b);
        assert_eq!(t.stats.e_z_hat.value, Some(0.0));
        assert_eq!(t.stats.e_x_hat.value, Some(0.0));
        assert!(within(&t.stats.p00_ctrl_hat, 0.5, 3.0));
        let keep = Estimate::from_counts(t.sifted_len() as u64, 200_000);
        assert!(within(&keep, 0.25, 3.0));
        // INFO = l/2 bits over 2N qubits
        assert!((t.efficiency - t.keep_rate / 4.0).abs() < 1.0 / 200_000.0);
        assert!((t.estimated_key_rate.unwrap().r_lower - 1.0).abs() < 1e-3);
    }

    #[test]
    fn depolarizing_run_converges() {
        for (b, p, seed) in [(0.0, 0.1, 1), (0.1, 0.2, 2), (-0.2, 0.05, 3)] {
            let t = run(&dep_config(200_000, b, p, seed)).unwrap();
            let s = dep_statistics(b, p).unwrap();
            let st = &t.stats;
            assert!(within(&st.e_z_hat, s.observables.e_z, 3.0), "b={b} p={p}");
            assert!(within(&st.e_x_hat, s.observables.e_x, 3.0));
            assert!(within(&st.p00_ctrl_hat, s.observables.p_0_given_0, 3.0));
            assert!(within(&st.p10_ctrl_hat, s.observables.p_1_given_0, 3.0));
            let l: u64 = st.joint_counts.iter().flatten().sum();
            for i in 0..2 {
                for j in 0..2 {
                    let e = Estimate::from_counts(st.joint_counts[i][j], l);
                    assert!(within(&e, s.joint.p(i, j), 3.0), "P({i},{j})");
                }
            }
            let keep = Estimate::from_counts(l, 200_000);
            assert!(within(&keep, s.k / 2.0, 3.0));
            let sum: f64 = st.joint_hat.unwrap().iter().flatten().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn test_rate_tracks_mismatch_probability() {
        let mut cfg = dep_config(200_000, 0.0, 0.1, 5);
        cfg.test_threshold = 1.0;
        let t = run(&cfg).unwrap();
        let k2 = dep_statistics(0.0, 0.1).unwrap().joint.k2();
        let e = Estimate::from_counts(
            (t.test_error_rate.unwrap() * t.n as f64).round() as u64,
            t.n as u64,
        );
        assert!(within(&e, k2, 3.0));
        assert!(!run(&dep_config(200_000, 0.0, 0.1, 5)).unwrap().aborted());
        // k2 = 1/6 at p = 0.2, above the default threshold
        let t = run(&dep_config(200_000, 0.0, 0.2, 5)).unwrap();
        assert!(matches!(t.abort, Some(AbortReason::TestErrorRate { .. })));
        assert!(t.info_a.is_empty() && t.efficiency == 0.0);
    }

    #[test]
    fn sift_modes() {
        let kept = IterationRecord::new(BobChoice::Ctrl, Basis::Z, Outcome::One).unwrap();
        let drop = IterationRecord::new(BobChoice::Ctrl, Basis::Z, Outcome::Zero).unwrap();
        let all = vec![kept; 40];
        let s = sift(&all, SizingMode::RealizedL, 0.1);
        assert_eq!(s.sifted_a.len(), 40);
        assert!(s.abort.is_none());
        assert_eq!(s.n, 20);
        let s = sift(&all, SizingMode::PaperLiteral, 0.1);
        assert_eq!(s.n, 9);
        assert!(s.abort.is_none());
        let mut one = vec![drop; 39];
        one.push(kept);
        let s = sift(&one, SizingMode::RealizedL, 0.1);
        assert_eq!(
            s.abort,
            Some(AbortReason::SizingShortfall { l: 1, required: 2 })
        );
    }

    #[test]
    fn paper_literal_noiseless_aborts() {
        let mut cfg = ProtocolConfig::new(20_000, 0.0, ReverseChannel::Ideal, 9).unwrap();
        cfg.sizing_mode = SizingMode::PaperLiteral;
        let t = run(&cfg).unwrap();
        assert!(matches!(t.abort, Some(AbortReason::SizingShortfall { .. })));
        assert_eq!(t.test_error_rate, None);
        cfg.sizing_mode = SizingMode::RealizedL;
        let t = run(&cfg).unwrap();
        assert!(!t.aborted());
        let info = t.info_a.len() as f64;
        assert!((info - 20_000.0 / 8.0).abs() < 3.0 * (20_000.0f64 * 0.25 * 0.75).sqrt());
    }

    #[test]
    fn test_round_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: BitString = "0110100111".parse().unwrap();
        let t = test_round(&a, &a, 5, 0.0, &mut rng).unwrap();
        assert_eq!(t.error_rate, 0.0);
        assert!(!t.abort);
        assert_eq!(t.info_a.len(), 5);
        assert_eq!(t.positions.len(), 5);
        let c = BitString(a.0.iter().map(|b| 1 - b).collect());
        let t = test_round(&a, &c, 3, 0.99, &mut rng).unwrap();
        assert_eq!(t.error_rate, 1.0);
        assert!(t.abort);
        assert!(test_round(&a, &a, 6, 0.1, &mut rng).is_err());
        // INFO is the first n bits not used for testing
        let s: BitString = "0101".parse().unwrap();
        let t = test_round(&s, &s, 2, 0.1, &mut rng).unwrap();
        let rest: Vec<u8> = (0..4)
            .filter(|i| !t.positions.contains(i))
            .map(|i| s.0[i])
            .collect();
        assert_eq!(t.info_a.0, rest);
    }

    #[test]
    fn all_sift_flags_ctrl_missing() {
        let recs: Vec<_> = [Outcome::Zero, Outcome::One, Outcome::One]
            .into_iter()
            .map(|o| IterationRecord::new(BobChoice::Sift, Basis::Z, o).unwrap())
            .collect();
        let st = estimate_stats(&recs);
        assert_eq!(st.e_x_hat.value, None);
        assert_eq!(st.p00_ctrl_hat.value, None);
        assert_eq!(st.p10_ctrl_hat.trials, 0);
        assert_eq!(st.e_z_hat.value, Some(2.0 / 3.0));
        assert!(st.key_rate(&ForwardAttack::undisturbed()).is_none());
        let empty = estimate_stats(&[]);
        assert_eq!(empty.joint_hat, None);
    }

    #[test]
    fn document_round_trip() {
        let mut cfg = ProtocolConfig::new(
            3000,
            0.05,
            ReverseChannel::Attack {
                attack: depolarizing_dilation(0.02).unwrap(),
            },
            8,
        )
        .unwrap();
        cfg.sizing_mode = SizingMode::RealizedL;
        let t = run(&cfg).unwrap();
        for records in [false, true] {
            let doc = t.to_document(records);
            let back = TranscriptDocument::from_json(&doc.to_json()).unwrap();
            assert_eq!(back, doc);
            assert_eq!(back.records.is_some(), records);
        }
        let mut bad = t.to_document(false);
        bad.schema_version = 99;
        assert!(TranscriptDocument::from_json(&bad.to_json()).is_err());
        assert!("01x".parse::<BitString>().is_err());
    }
}
