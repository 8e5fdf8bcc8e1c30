//! Closed forms for a depolarizing reverse channel `ξ_p`.
//!
//! [`f_bp`] evaluates the published closed form term by term, including its
//! overlap bound. That bound's last term reads `−(p/2)√(1−2p)`, while the
//! general observable bound evaluated on the same statistics gives
//! `−(p/2)√(1+2b)`; every other term agrees. [`observable_route`] computes the
//! general bound for comparison, and [`closed_form_gap`] reports the difference.

use serde::Serialize;

use super::{key_rate_from_observables, JointDistribution, KeyRateReport, Observables, QuadQ};
use crate::channels::ForwardAttack;
use crate::error::{check_range, Error, Result};
use crate::qmath::binary_entropy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepStatistics {
    pub q: QuadQ,
    pub k: f64,
    pub joint: JointDistribution,
    pub observables: Observables,
}

fn check_b(b: f64) -> Result<()> {
    if !b.is_finite() || b.abs() >= 0.5 {
        return Err(Error::Domain {
            what: "b",
            value: b,
            domain: "(-1/2, 1/2)",
        });
    }
    Ok(())
}

pub fn dep_statistics(b: f64, p: f64) -> Result<DepStatistics> {
    check_b(b)?;
    check_range("p", p, 0.0, 1.0, "[0, 1]")?;
    let s = (1.0 - 4.0 * b * b).sqrt();
    let q = QuadQ::new(
        0.25 - b / 2.0 + p * b / 2.0,
        p / 4.0,
        0.25 - (1.0 - p) * s / 4.0,
        0.25,
    )?;
    let k = 0.75 - b / 2.0 + p * b / 2.0 + p / 4.0 - (1.0 - p) * s / 4.0;
    let den = 3.0 - 2.0 * b + 2.0 * p * b + p - (1.0 - p) * s;
    let joint = JointDistribution::new([
        [(1.0 - 2.0 * b + 2.0 * p * b) / den, p / den],
        [(1.0 - (1.0 - p) * s) / den, 1.0 / den],
    ])?;
    let r = (0.25 - b * b).sqrt();
    let p10 = 0.5 - r + p * r;
    let observables = Observables::new(p / 2.0, p10, 0.5 - b + p * b, p10, q.q11)?;
    Ok(DepStatistics {
        q,
        k,
        joint,
        observables,
    })
}

/// Terms of the closed-form lower bound `f(b, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormBound {
    pub b: f64,
    pub p: f64,
    pub k_prime: f64,
    /// Closed-form `𝓑` before clamping at zero.
    pub bound_raw: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    pub lambda: f64,
    pub k1: f64,
    pub k2: f64,
    pub r_lower: f64,
}

/// The published overlap bound for `ξ_p`, unclamped.
pub fn closed_form_bound_raw(b: f64, p: f64) -> f64 {
    2.0 / (1.0 + 2.0 * b).sqrt()
        * ((1.0 - 4.0 * b * b).sqrt() * (0.5 - 0.75 * p)
            - 0.5 * (0.5 - b) * (2.0 * p - p * p).sqrt())
        - p / 2.0 * (1.0 - 2.0 * p).sqrt()
}

/// `f(b, p)` for `|b| < 1/2`, `0 ≤ p ≤ 1/2`.
pub fn f_bp(b: f64, p: f64) -> Result<ClosedFormBound> {
    check_b(b)?;
    check_range("p", p, 0.0, 0.5, "[0, 1/2]")?;
    let s = (1.0 - 4.0 * b * b).sqrt();
    let k_prime = 3.0 + p + (p - 1.0) * s + 2.0 * b * (p - 1.0);
    let bound_raw = closed_form_bound_raw(b, p);
    let bound = bound_raw.max(0.0);
    let agree = 2.0 - 2.0 * b + 2.0 * p * b;
    let lambda = 0.5 + ((p * b - b).powi(2) + bound * bound).sqrt() / agree;
    if lambda > 1.0 + 1e-12 {
        return Err(Error::Invariant(format!(
            "λ = {lambda} exceeds 1 at b = {b}, p = {p}"
        )));
    }
    let lambda = lambda.min(1.0);
    let k1 = agree / k_prime;
    let k2 = (1.0 + p - (1.0 - p) * s) / k_prime;
    let r_lower = binary_entropy((1.0 - 2.0 * b + 2.0 * p * b + p) / k_prime)?
        - binary_entropy(k1)?
        - k2
        - k1 * binary_entropy(lambda)?;
    Ok(ClosedFormBound {
        b,
        p,
        k_prime,
        bound_raw,
        bound,
        lambda,
        k1,
        k2,
        r_lower,
    })
}

impl ClosedFormBound {
    pub fn report(&self) -> Result<KeyRateReport> {
        let stats = dep_statistics(self.b, self.p)?;
        Ok(KeyRateReport {
            bound_b: Some(self.bound),
            lambda: self.lambda,
            k1: self.k1,
            k2: self.k2,
            h_b_given_a: stats.joint.h_b_given_a()?,
            r_lower: self.r_lower,
        })
    }
}

/// General observable bound applied to the depolarizing statistics.
pub fn observable_route(b: f64, p: f64) -> Result<KeyRateReport> {
    let stats = dep_statistics(b, p)?;
    key_rate_from_observables(&ForwardAttack::new(b)?, &stats.q, &stats.observables)
}

/// Closed-form `𝓑` minus the general observable bound, both unclamped.
pub fn closed_form_gap(b: f64, p: f64) -> Result<f64> {
    let stats = dep_statistics(b, p)?;
    let general = super::bound_b_raw(&ForwardAttack::new(b)?, &stats.observables);
    Ok(closed_form_bound_raw(b, p) - general)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::depolarizing_dilation;
    use crate::security::{
        bound_b_raw, joint_from_q, key_rate_lower, lambda_from, observables_from_attack,
        q_from_attack,
    };

    #[test]
    fn noiseless_statistics() {
        let s = dep_statistics(0.0, 0.0).unwrap();
        assert_eq!(s.q.as_array(), [0.25, 0.0, 0.0, 0.25]);
        assert_eq!(s.k, 0.5);
        assert_eq!(s.joint.entries(), [[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(s.observables.e_z, 0.0);
    }

    #[test]
    fn statistics_at_b01_p02() {
        let s = dep_statistics(0.1, 0.2).unwrap();
        let want = [0.21, 0.05, 0.054041, 0.25];
        for (g, w) in s.q.as_array().iter().zip(want) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
        }
        assert!((s.k - 0.564041).abs() < 1e-6);
        assert!((s.observables.e_z - 0.1).abs() < 1e-15);
        assert!((s.observables.p_0_given_0 - 0.42).abs() < 1e-12);
        assert!((s.observables.p_1_given_0 - 0.108082).abs() < 1e-6);
    }

    #[test]
    fn printed_k_and_joint_agree_with_q() {
        for b in [-0.4, -0.1, 0.0, 0.15, 0.3] {
            for p in [0.0, 0.05, 0.2, 0.5, 1.0] {
                let s = dep_statistics(b, p).unwrap();
                assert!((s.k - s.q.k()).abs() < 1e-12);
                let j = joint_from_q(&s.q).unwrap();
                for i in 0..2 {
                    for k in 0..2 {
                        assert!((j.p(i, k) - s.joint.p(i, k)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_dilation_machinery() {
        for b in [-0.45, -0.2, 0.0, 0.2, 0.45] {
            for p in [0.0, 0.1, 0.25, 0.6, 1.0] {
                let s = dep_statistics(b, p).unwrap();
                let fwd = ForwardAttack::new(b).unwrap();
                let atk = depolarizing_dilation(p).unwrap();
                let q = q_from_attack(&fwd, &atk).unwrap();
                for (g, w) in q.as_array().iter().zip(s.q.as_array()) {
                    assert!((g - w).abs() < 1e-9);
                }
                let o = observables_from_attack(&fwd, &atk).unwrap();
                assert!((o.e_z - s.observables.e_z).abs() < 1e-9);
                assert!((o.p_0_given_0 - s.observables.p_0_given_0).abs() < 1e-9);
                assert!((o.p_1_given_0 - s.observables.p_1_given_0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn f_bp_anchors() {
        let f = f_bp(0.0, 0.0).unwrap();
        assert!((f.r_lower - 1.0).abs() < 1e-9);
        assert!((f.bound - 1.0).abs() < 1e-15 && (f.lambda - 1.0).abs() < 1e-15);
        // mpmath, 30 digits: f(0, 0.05) = 0.152068714887282
        let f = f_bp(0.0, 0.05).unwrap();
        assert!((f.r_lower - 0.152068714887282).abs() < 1e-12);
        assert!((f.r_lower - 0.152).abs() < 5e-3);
        assert!(f_bp(0.0, 0.0692).unwrap().r_lower.abs() < 0.01);
        assert!(f_bp(0.0, 0.51).is_err());
        assert!(f_bp(0.5, 0.1).is_err());
    }

    #[test]
    fn closed_form_terms_compose_through_general_rate() {
        // the same 𝓑 fed through λ and the generic lower bound
        for b in [-0.3, -0.05, 0.0, 0.1, 0.25] {
            for p in [0.0, 0.01, 0.05, 0.2, 0.5] {
                let f = f_bp(b, p).unwrap();
                let s = dep_statistics(b, p).unwrap();
                let lambda = lambda_from(s.q.q00, s.q.q11, f.bound).unwrap();
                let r = key_rate_lower(&s.joint, lambda).unwrap();
                assert!((r.r_lower - f.r_lower).abs() < 1e-9, "b={b} p={p}");
                assert!((lambda - f.lambda).abs() < 1e-12);
                assert!((r.k1 - f.k1).abs() < 1e-12 && (r.k2 - f.k2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_bound_gap_is_the_sqrt_term() {
        for b in [-0.4, -0.2, 0.0, 0.1, 0.3] {
            for p in [0.0, 0.02, 0.05, 0.2, 0.5] {
                let gap = closed_form_gap(b, p).unwrap();
                let want = p / 2.0 * ((1.0 + 2.0 * b).sqrt() - (1.0 - 2.0 * p).sqrt());
                assert!((gap - want).abs() < 1e-12, "b={b} p={p}: {gap} vs {want}");
            }
        }
        // at b = 0, p = 0.05 the two bounds differ by ≈ 1.28e-3
        let s = dep_statistics(0.0, 0.05).unwrap();
        let general = bound_b_raw(&ForwardAttack::undisturbed(), &s.observables);
        let closed = f_bp(0.0, 0.05).unwrap().bound;
        assert!((closed - general - 0.0012829175487371587).abs() < 1e-12);
        // general route at b = 0: 𝓑 = 1 − 2p − √(2p − p²)/2
        let want = 1.0 - 0.1 - (0.1f64 - 0.0025).sqrt() / 2.0;
        assert!((general - want).abs() < 1e-12);
    }

    #[test]
    fn observable_route_anchors() {
        let r = observable_route(0.0, 0.0).unwrap();
        assert!((r.r_lower - 1.0).abs() < 1e-12);
        // mpmath: 0.150375552832606
        let r = observable_route(0.0, 0.05).unwrap();
        assert!((r.r_lower - 0.150375552832606).abs() < 1e-12);
    }

    #[test]
    fn lambda_within_range_on_domain_grid() {
        for i in 0..99 {
            let b = -0.49 + i as f64 * 0.01;
            for j in 0..=50 {
                let p = j as f64 * 0.01;
                let f = f_bp(b, p).unwrap();
                assert!((0.5..=1.0).contains(&f.lambda));
                assert!(f.r_lower.is_finite());
            }
        }
    }
}
