use std::f64::consts::SQRT_2;

use super::{JointDistribution, KeyRateReport, Observables, QuadQ, DEGENERATE_K};
use crate::channels::{derive_vectors, ForwardAttack, ReverseAttack};
use crate::error::{Error, Result};
use crate::qmath::{binary_entropy, born_probability, inner, norm_sqr, PureState, PROB_SLACK};

pub fn q_from_attack(fwd: &ForwardAttack, atk: &ReverseAttack) -> Result<QuadQ> {
    let dv = derive_vectors(fwd, atk);
    QuadQ::new(
        0.25 * (1.0 - 2.0 * inner(&dv.g_plus, &dv.g_minus).re),
        0.5 * norm_sqr(atk.e01()),
        0.5 * norm_sqr(&dv.g_minus),
        0.25 * (1.0 - 2.0 * inner(atk.e00(), atk.e01()).re),
    )
}

pub fn joint_from_q(q: &QuadQ) -> Result<JointDistribution> {
    let k = q.k();
    if !(k > DEGENERATE_K) {
        return Err(Error::DegenerateChannel(k));
    }
    JointDistribution::new([[q.q00 / k, q.q01 / k], [q.q10 / k, q.q11 / k]])
}

pub fn observables_from_attack(fwd: &ForwardAttack, atk: &ReverseAttack) -> Result<Observables> {
    let dv = derive_vectors(fwd, atk);
    let q = q_from_attack(fwd, atk)?;
    let e_x = norm_sqr(&dv.g_minus);
    let returned = atk.apply(&fwd.e_state().density())?;
    let p00 = born_probability(&returned, &PureState::one().projector())?;
    Observables::new(norm_sqr(atk.e01()), e_x, p00, e_x, q.q11)
}

/// Lower bound on `Re⟨l2|l1⟩` from observable statistics, before clamping.
///
/// Valid for attacks with `‖e10‖² = ‖e01‖²`; the unobservable overlaps
/// `⟨e01|e10⟩` and `⟨e10|e11⟩` are replaced by their Cauchy–Schwarz bounds.
pub fn bound_b_raw(fwd: &ForwardAttack, obs: &Observables) -> f64 {
    let a = fwd.alpha();
    let b = fwd.beta();
    let ez = obs.e_z;
    let q11 = obs.q11;
    let re_e00_e01 = SQRT_2 * a * (0.5 - 2.0 * q11);
    let re_e01_e01 = SQRT_2 * a * ez;
    let re_e01_e11 = SQRT_2 / (2.0 * a) * (obs.p_0_given_0 - (a * a - b * b) * ez - b * b);
    let re_e00_e11_lower = SQRT_2 / a
        * (0.5
            - obs.p_1_given_0
            - a * a * (0.5 - 2.0 * q11)
            - a * b * ez
            - b * b * (ez * (1.0 - ez)).sqrt());
    re_e00_e01 - re_e01_e01 - re_e01_e11 + re_e00_e11_lower
}

/// `𝓑 = max(0, bound_b_raw)`.
pub fn bound_b(fwd: &ForwardAttack, obs: &Observables) -> f64 {
    let v = bound_b_raw(fwd, obs);
    if v.is_finite() {
        v.max(0.0)
    } else {
        0.0
    }
}

/// Analytic eigenvalues `(λ₊, λ₋)` of `ρ¹_E` given `|⟨l1|l2⟩|`.
pub fn lambda_pm(q00: f64, q11: f64, overlap: f64) -> (f64, f64) {
    let r = (4.0 * (q00 - q11).powi(2) + overlap * overlap).sqrt() / (4.0 * (q00 + q11));
    (0.5 + r, 0.5 - r)
}

/// `λ = 1/2 + √(4(q00−q11)² + 𝓑²) / (4(q00+q11))`, in `[1/2, 1]`.
pub fn lambda_from(q00: f64, q11: f64, b: f64) -> Result<f64> {
    if !(q00 + q11 > DEGENERATE_K) {
        return Err(Error::DegenerateChannel(q00 + q11));
    }
    if !b.is_finite() || b < 0.0 {
        return Err(Error::Domain {
            what: "B",
            value: b,
            domain: "[0, ∞)",
        });
    }
    let (lambda, _) = lambda_pm(q00, q11, b);
    if lambda > 1.0 + PROB_SLACK {
        return Err(Error::Invariant(format!(
            "λ = {lambda} exceeds 1: 𝓑 = {b} is larger than any achievable overlap"
        )));
    }
    Ok(lambda.clamp(0.5, 1.0))
}

pub fn key_rate_lower(joint: &JointDistribution, lambda: f64) -> Result<KeyRateReport> {
    if !(0.5 - PROB_SLACK..=1.0 + PROB_SLACK).contains(&lambda) {
        return Err(Error::Domain {
            what: "lambda",
            value: lambda,
            domain: "[1/2, 1]",
        });
    }
    let k1 = joint.k1();
    let k2 = joint.k2();
    let r_lower = binary_entropy(joint.alice_zero())?
        - binary_entropy(k1)?
        - k2
        - k1 * binary_entropy(lambda)?;
    Ok(KeyRateReport {
        bound_b: None,
        lambda,
        k1,
        k2,
        h_b_given_a: joint.h_b_given_a()?,
        r_lower,
    })
}

/// The full observable route: `q`, observables → `𝓑` → `λ` → lower bound.
pub fn key_rate_from_observables(
    fwd: &ForwardAttack,
    q: &QuadQ,
    obs: &Observables,
) -> Result<KeyRateReport> {
    let joint = joint_from_q(q)?;
    let b = bound_b(fwd, obs);
    let lambda = lambda_from(q.q00, q.q11, b)?;
    Ok(key_rate_lower(&joint, lambda)?.with_bound(b))
}

pub fn key_rate_from_attack(fwd: &ForwardAttack, atk: &ReverseAttack) -> Result<KeyRateReport> {
    let q = q_from_attack(fwd, atk)?;
    let obs = observables_from_attack(fwd, atk)?;
    key_rate_from_observables(fwd, &q, &obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::random::{random_attack, random_forward, random_symmetric_attack};
    use crate::channels::{pauli_branches, reverse_attack_from_unitary};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn bit_flip() -> ReverseAttack {
        let u = pauli_branches()[1].kronecker(&DMatrix::identity(2, 2));
        reverse_attack_from_unitary(&u, 2).unwrap()
    }

    #[test]
    fn q_identity_attack() {
        let q = q_from_attack(&ForwardAttack::undisturbed(), &ReverseAttack::identity(2)).unwrap();
        let want = [0.25, 0.0, 0.0, 0.25];
        for (g, w) in q.as_array().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!((q.k() - 0.5).abs() < 1e-15);
        let j = joint_from_q(&q).unwrap();
        assert_eq!(j.entries(), [[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn joint_from_uniform_q() {
        let q = QuadQ::new(0.1, 0.1, 0.1, 0.1).unwrap();
        let j = joint_from_q(&q).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert!((j.p(i, k) - 0.25).abs() < 1e-15);
            }
        }
        assert!(matches!(
            joint_from_q(&QuadQ::new(0.0, 0.0, 0.0, 0.0).unwrap()),
            Err(Error::DegenerateChannel(_))
        ));
    }

    #[test]
    fn observables_identity_and_bit_flip() {
        for b in [-0.3, 0.0, 0.2] {
            let fwd = ForwardAttack::new(b).unwrap();
            let o = observables_from_attack(&fwd, &ReverseAttack::identity(3)).unwrap();
            assert!(o.e_z.abs() < 1e-15);
            // e_X = ((α − β)/√2)², zero only without forward noise
            assert!((o.e_x - (fwd.alpha() - fwd.beta()).powi(2) / 2.0).abs() < 1e-15);
            assert!((o.p_0_given_0 - (0.5 - b)).abs() < 1e-12);
        }
        let o = observables_from_attack(&ForwardAttack::undisturbed(), &ReverseAttack::identity(2))
            .unwrap();
        assert_eq!(o.e_x, 0.0);
        let o = observables_from_attack(&ForwardAttack::undisturbed(), &bit_flip()).unwrap();
        assert!((o.e_z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_attack_q_and_observables() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let d = 1 + (rand::Rng::random::<u8>(&mut rng) % 4) as usize;
            let atk = random_attack(d, &mut rng);
            let fwd = random_forward(&mut rng, 0.49);
            let q = q_from_attack(&fwd, &atk).unwrap();
            assert!(q.as_array().iter().all(|&v| v >= -1e-12));
            // each of q00+q10 and q01+q11 is at most (1 + 1/√2)/2
            assert!(q.k() > 0.0 && q.k() <= 1.0 + FRAC_1_SQRT_2 + 1e-12);
            let o = observables_from_attack(&fwd, &atk).unwrap();
            assert!((o.e_x - o.p_1_given_0).abs() < 1e-12);
            assert!((q.q01 - o.e_z / 2.0).abs() < 1e-12);
            assert!((q.q10 - o.e_x / 2.0).abs() < 1e-12);
            // q00 = ‖l1‖²/4 = P(0|0)/2
            assert!((q.q00 - o.p_0_given_0 / 2.0).abs() < 1e-10);
            let j = joint_from_q(&q).unwrap();
            assert!((j.k1() + j.k2() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bound_noiseless() {
        let o = Observables::new(0.0, 0.0, 0.5, 0.0, 0.25).unwrap();
        let b = bound_b(&ForwardAttack::undisturbed(), &o);
        assert!((b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_clamps_to_zero() {
        let o = Observables::new(0.5, 0.5, 0.9, 0.5, 0.5).unwrap();
        let fwd = ForwardAttack::undisturbed();
        assert!(bound_b_raw(&fwd, &o) < 0.0);
        assert_eq!(bound_b(&fwd, &o), 0.0);
    }

    #[test]
    fn bound_is_sound_for_symmetric_attacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..100 {
            let d = if i % 2 == 0 { 2 } else { 4 };
            let atk = random_symmetric_attack(d, &mut rng);
            let fwd = random_forward(&mut rng, 0.45);
            let o = observables_from_attack(&fwd, &atk).unwrap();
            let dv = derive_vectors(&fwd, &atk);
            let overlap = inner(&dv.l1, &dv.l2);
            assert!(bound_b(&fwd, &o) <= overlap.norm() + 1e-9);
            assert!(bound_b_raw(&fwd, &o) <= inner(&dv.l2, &dv.l1).re + 1e-9);
        }
    }

    #[test]
    fn lambda_examples() {
        assert!((lambda_from(0.25, 0.25, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambda_from(0.25, 0.25, 0.0).unwrap(), 0.5);
        let l = lambda_from(0.21, 0.25, 0.0).unwrap();
        assert!((l - (0.5 + 0.08 / 1.84)).abs() < 1e-15);
        assert!((l - 0.543478).abs() < 1e-6);
        assert!(lambda_from(0.0, 0.0, 0.3).is_err());
        assert!(lambda_from(0.25, 0.25, 1.5).is_err());
        assert!(lambda_from(0.25, 0.25, -0.1).is_err());
    }

    #[test]
    fn key_rate_examples() {
        let perfect = JointDistribution::new([[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let r = key_rate_lower(&perfect, 1.0).unwrap();
        assert!((r.r_lower - 1.0).abs() < 1e-15);
        assert!(r.h_b_given_a.abs() < 1e-15);
        let uniform = JointDistribution::new([[0.25, 0.25], [0.25, 0.25]]).unwrap();
        let r = key_rate_lower(&uniform, 0.5).unwrap();
        assert!((r.r_lower + 1.0).abs() < 1e-15);
        assert!((r.k1 + r.k2 - 1.0).abs() < 1e-15);
        assert!(key_rate_lower(&uniform, 0.4).is_err());
    }

    #[test]
    fn noiseless_attack_route() {
        let r = key_rate_from_attack(&ForwardAttack::undisturbed(), &ReverseAttack::identity(2))
            .unwrap();
        assert!((r.r_lower - 1.0).abs() < 1e-12);
        assert!((r.bound_b.unwrap() - 1.0).abs() < 1e-12);
    }
}
