//! Asymptotic key-rate analysis.
//!
//! The chain runs attack → `q(i,j)` and observables → joint distribution,
//! overlap bound `𝓑` and eigenvalue bound `λ` → lower bound on the key rate.
//! [`exact`] evaluates the conditional entropy directly from the joint
//! classical–quantum state and serves as the soundness oracle for the bound.
//! [`depolarizing`] holds the closed forms for a depolarizing reverse channel
//! and [`threshold`] the zero-crossing search and sweeps built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{binary_entropy, shannon_entropy, ProbDist, PROB_SLACK};

mod bound;
pub mod depolarizing;
pub mod exact;
pub mod threshold;

pub use bound::{
    bound_b, bound_b_raw, joint_from_q, key_rate_from_attack, key_rate_from_observables,
    key_rate_lower, lambda_from, lambda_pm, observables_from_attack, q_from_attack,
};
pub use depolarizing::{dep_statistics, f_bp, ClosedFormBound, DepStatistics};
pub use exact::{exact_key_rate, ExactAttackState};
pub use threshold::{sweep, threshold_p, SweepRow, Threshold};

/// Entries below this are treated as an empty normalization.
pub const DEGENERATE_K: f64 = 1e-12;

/// Unnormalized weights of the four kept branches, indexed (Alice bit, Bob bit).
///
/// The common factor from Alice's basis choice is omitted, so the physical
/// probability that an iteration is kept is `K / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadQ {
    pub q00: f64,
    pub q01: f64,
    pub q10: f64,
    pub q11: f64,
}

impl QuadQ {
    pub fn new(q00: f64, q01: f64, q10: f64, q11: f64) -> Result<Self> {
        for (name, v) in [("q00", q00), ("q01", q01), ("q10", q10), ("q11", q11)] {
            if !v.is_finite() || v < -PROB_SLACK {
                return Err(Error::Invariant(format!("{name} = {v} is negative")));
            }
        }
        Ok(Self { q00, q01, q10, q11 })
    }

    /// `K = Σ q(i,j)`
    pub fn k(&self) -> f64 {
        self.q00 + self.q01 + self.q10 + self.q11
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.q00, self.q01, self.q10, self.q11]
    }
}

/// `P(i,j)` for Alice's raw bit `i` and Bob's raw bit `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    p: [[f64; 2]; 2],
}

impl JointDistribution {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self> {
        let mut sum = 0.0;
        for row in &p {
            for &v in row {
                if !v.is_finite() || v < -PROB_SLACK {
                    return Err(Error::Invariant(format!("joint entry {v} is negative")));
                }
                sum += v;
            }
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Invariant(format!(
                "joint distribution sums to {sum}"
            )));
        }
        let p = p.map(|row| row.map(|v| v.max(0.0)));
        Ok(Self { p })
    }

    pub fn p(&self, alice: usize, bob: usize) -> f64 {
        self.p[alice][bob]
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.p
    }

    /// `P(0,0) + P(1,1)`: the raw bits agree.
    pub fn k1(&self) -> f64 {
        self.p[0][0] + self.p[1][1]
    }

    /// `P(0,1) + P(1,0)`: the raw bits differ.
    pub fn k2(&self) -> f64 {
        self.p[0][1] + self.p[1][0]
    }

    /// Probability that Alice's raw bit is 0.
    pub fn alice_zero(&self) -> f64 {
        self.p[0][0] + self.p[0][1]
    }

    pub fn entropy(&self) -> f64 {
        let w = vec![self.p[0][0], self.p[0][1], self.p[1][0], self.p[1][1]];
        let s: f64 = w.iter().sum();
        shannon_entropy(&ProbDist::new(w.iter().map(|x| x / s).collect()).expect("validated"))
    }

    /// `H(B|A) = H(A,B) − H(A)`
    pub fn h_b_given_a(&self) -> Result<f64> {
        Ok(self.entropy() - binary_entropy(self.alice_zero())?)
    }
}

/// Statistics Alice and Bob can estimate from announced data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// SIFT branch, Z basis, outcome 1.
    pub e_z: f64,
    /// CTRL branch, X basis, outcome −.
    pub e_x: f64,
    /// CTRL branch, Z basis, outcome 1: `P(0|0)`.
    pub p_0_given_0: f64,
    /// CTRL branch, X basis, outcome −: `P(1|0)`. Same event as `e_x`.
    pub p_1_given_0: f64,
    pub q11: f64,
}

impl Observables {
    pub fn new(e_z: f64, e_x: f64, p_0_given_0: f64, p_1_given_0: f64, q11: f64) -> Result<Self> {
        let mut vals = [e_z, e_x, p_0_given_0, p_1_given_0, q11];
        for (name, v) in ["e_z", "e_x", "p_0_given_0", "p_1_given_0", "q11"]
            .iter()
            .zip(vals.iter_mut())
        {
            if !v.is_finite() || *v < -PROB_SLACK || *v > 1.0 + PROB_SLACK {
                return Err(Error::Domain {
                    what: name,
                    value: *v,
                    domain: "[0, 1]",
                });
            }
            *v = v.clamp(0.0, 1.0);
        }
        let [e_z, e_x, p_0_given_0, p_1_given_0, q11] = vals;
        Ok(Self {
            e_z,
            e_x,
            p_0_given_0,
            p_1_given_0,
            q11,
        })
    }
}

/// Terms of the key-rate lower bound
/// `r ≥ h(P(0,0)+P(0,1)) − h(k1) − k2 − k1·h(λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    /// Lower bound `𝓑` on `|⟨l1|l2⟩|`, when the report was built from one.
    #[serde(rename = "B")]
    pub bound_b: Option<f64>,
    pub lambda: f64,
    pub k1: f64,
    pub k2: f64,
    pub h_b_given_a: f64,
    pub r_lower: f64,
}

impl KeyRateReport {
    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound_b = Some(b);
        self
    }
}
