//! Eve's restricted attack `(b, U)`, the depolarizing channel, and the vectors
//! derived from them.
//!
//! Transit ⊗ Eve states are laid out transit-major: basis index `t * d + k`
//! for transit bit `t` and Eve basis vector `k`. Eve's ancilla starts in `|0⟩_E`.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::qmath::{c, inner, max_abs_diff, norm_sqr, re, DensityOperator, PureState, C64};

/// Eve dimension accepted by [`ReverseAttack::new`].
pub const DEFAULT_MAX_EVE_DIM: usize = 4;

/// Tolerance on the unitarity constraints between the `e` vectors.
pub const ATTACK_TOL: f64 = 1e-9;

/// Forward-channel substitution `|+⟩ → |e(b)⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ForwardAttack {
    b: f64,
}

impl ForwardAttack {
    pub fn new(b: f64) -> Result<Self> {
        if !b.is_finite() || b.abs() >= 0.5 {
            return Err(Error::Domain {
                what: "b",
                value: b,
                domain: "(-1/2, 1/2)",
            });
        }
        Ok(Self { b })
    }

    pub fn undisturbed() -> Self {
        Self { b: 0.0 }
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `√(1/2 + b)`
    pub fn alpha(&self) -> f64 {
        (0.5 + self.b).sqrt()
    }

    /// `√(1/2 − b)`
    pub fn beta(&self) -> f64 {
        (0.5 - self.b).sqrt()
    }

    pub fn e_state(&self) -> PureState {
        PureState::from_slice(&[re(self.alpha()), re(self.beta())])
            .expect("α² + β² = 1 by construction")
    }

    pub fn e_perp_state(&self) -> PureState {
        PureState::from_slice(&[re(self.beta()), re(-self.alpha())])
            .expect("α² + β² = 1 by construction")
    }
}

impl TryFrom<f64> for ForwardAttack {
    type Error = Error;
    fn try_from(b: f64) -> Result<Self> {
        Self::new(b)
    }
}

impl From<ForwardAttack> for f64 {
    fn from(f: ForwardAttack) -> f64 {
        f.b
    }
}

/// Eve's reverse-channel probe, given by
/// `U|0,0⟩ = |0,e00⟩ + |1,e01⟩` and `U|1,0⟩ = |0,e10⟩ + |1,e11⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AttackRepr", into = "AttackRepr")]
pub struct ReverseAttack {
    eve_dim: usize,
    /// `e[t][o]`: Eve's component when transit input `t` leaves as `o`.
    e: [[DVector<C64>; 2]; 2],
}

impl ReverseAttack {
    pub fn new(
        e00: DVector<C64>,
        e01: DVector<C64>,
        e10: DVector<C64>,
        e11: DVector<C64>,
    ) -> Result<Self> {
        Self::with_max_eve_dim(e00, e01, e10, e11, DEFAULT_MAX_EVE_DIM)
    }

    pub fn with_max_eve_dim(
        e00: DVector<C64>,
        e01: DVector<C64>,
        e10: DVector<C64>,
        e11: DVector<C64>,
        max_eve_dim: usize,
    ) -> Result<Self> {
        let d = e00.len();
        if d == 0 || d > max_eve_dim {
            return Err(Error::Invariant(format!(
                "eve_dim = {d} outside 1..={max_eve_dim}"
            )));
        }
        for v in [&e01, &e10, &e11] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        let atk = Self {
            eve_dim: d,
            e: [[e00, e01], [e10, e11]],
        };
        let res = atk.unitarity_residuals();
        if res.iter().any(|r| !r.is_finite() || *r > ATTACK_TOL) {
            return Err(Error::Invariant(format!(
                "attack violates unitarity: {res:?}"
            )));
        }
        Ok(atk)
    }

    /// No interaction: `U = I`.
    pub fn identity(eve_dim: usize) -> Self {
        let v = basis_vec(eve_dim, 0);
        let z = DVector::zeros(eve_dim);
        Self::new(v.clone(), z.clone(), z, v).expect("identity attack is unitary")
    }

    /// Attack induced by a channel with Kraus operators `K_k`, recording the
    /// branch index `k` in Eve's ancilla.
    pub fn from_kraus(kraus: &[DMatrix<C64>]) -> Result<Self> {
        let d = kraus.len();
        let comp = |t: usize, o: usize| DVector::from_iterator(d, kraus.iter().map(|k| k[(o, t)]));
        Self::with_max_eve_dim(
            comp(0, 0),
            comp(0, 1),
            comp(1, 0),
            comp(1, 1),
            d.max(DEFAULT_MAX_EVE_DIM),
        )
    }

    pub fn eve_dim(&self) -> usize {
        self.eve_dim
    }

    /// `e_{t o}`
    pub fn e(&self, t: usize, o: usize) -> &DVector<C64> {
        &self.e[t][o]
    }

    pub fn e00(&self) -> &DVector<C64> {
        &self.e[0][0]
    }

    pub fn e01(&self) -> &DVector<C64> {
        &self.e[0][1]
    }

    pub fn e10(&self) -> &DVector<C64> {
        &self.e[1][0]
    }

    pub fn e11(&self) -> &DVector<C64> {
        &self.e[1][1]
    }

    /// Deviations from `⟨e00|e10⟩+⟨e01|e11⟩ = 0`, `‖e00‖²+‖e01‖² = 1`,
    /// `‖e10‖²+‖e11‖² = 1`.
    pub fn unitarity_residuals(&self) -> [f64; 3] {
        [
            (inner(self.e00(), self.e10()) + inner(self.e01(), self.e11())).norm(),
            (norm_sqr(self.e00()) + norm_sqr(self.e01()) - 1.0).abs(),
            (norm_sqr(self.e10()) + norm_sqr(self.e11()) - 1.0).abs(),
        ]
    }

    /// `|‖e10‖² − ‖e01‖²|`; zero for attacks that flip `|0⟩` and `|1⟩` equally.
    pub fn symmetry_gap(&self) -> f64 {
        (norm_sqr(self.e10()) - norm_sqr(self.e01())).abs()
    }

    /// `U(|ψ⟩ ⊗ |0⟩_E)` for a transit qubit state, in transit-major layout.
    pub fn apply_pure(&self, psi: &PureState) -> DVector<C64> {
        assert_eq!(psi.dim(), 2, "transit states are qubits");
        let d = self.eve_dim;
        let a = psi.amplitudes();
        let mut out = DVector::zeros(2 * d);
        for o in 0..2 {
            let comp = &self.e[0][o] * a[0] + &self.e[1][o] * a[1];
            out.rows_mut(o * d, d).copy_from(&comp);
        }
        out
    }

    /// Channel seen by the transit qubit once Eve's ancilla is traced out.
    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        if rho.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: rho.dim(),
            });
        }
        // out[i][j] = Σ_{a,b} ρ[a][b] ⟨e_{b j}|e_{a i}⟩
        let out = DMatrix::from_fn(2, 2, |i, j| {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..2 {
                for b in 0..2 {
                    acc += rho.get(a, b) * inner(&self.e[b][j], &self.e[a][i]);
                }
            }
            acc
        });
        DensityOperator::new(out)
    }
}

fn basis_vec(d: usize, k: usize) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[k] = re(1.0);
    v
}

#[derive(Serialize, Deserialize)]
struct AttackRepr {
    eve_dim: usize,
    e00: Vec<[f64; 2]>,
    e01: Vec<[f64; 2]>,
    e10: Vec<[f64; 2]>,
    e11: Vec<[f64; 2]>,
}

impl From<ReverseAttack> for AttackRepr {
    fn from(a: ReverseAttack) -> Self {
        let enc = |v: &DVector<C64>| v.iter().map(|z| [z.re, z.im]).collect();
        AttackRepr {
            eve_dim: a.eve_dim,
            e00: enc(a.e00()),
            e01: enc(a.e01()),
            e10: enc(a.e10()),
            e11: enc(a.e11()),
        }
    }
}

impl TryFrom<AttackRepr> for ReverseAttack {
    type Error = Error;
    fn try_from(r: AttackRepr) -> Result<Self> {
        let dec = |v: &[[f64; 2]]| DVector::from_iterator(v.len(), v.iter().map(|p| c(p[0], p[1])));
        let atk = ReverseAttack::with_max_eve_dim(
            dec(&r.e00),
            dec(&r.e01),
            dec(&r.e10),
            dec(&r.e11),
            r.eve_dim.max(DEFAULT_MAX_EVE_DIM),
        )?;
        if atk.eve_dim != r.eve_dim {
            return Err(Error::DimensionMismatch {
                expected: r.eve_dim,
                got: atk.eve_dim,
            });
        }
        Ok(atk)
    }
}

/// Extracts the `e` vectors from a unitary on transit ⊗ Eve (`2d` dims).
pub fn reverse_attack_from_unitary(u: &DMatrix<C64>, eve_dim: usize) -> Result<ReverseAttack> {
    let n = 2 * eve_dim;
    if u.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: u.nrows(),
        });
    }
    let dev = max_abs_diff(&(u.adjoint() * u), &DMatrix::identity(n, n));
    if !(dev <= ATTACK_TOL) {
        return Err(Error::Invariant(format!(
            "U is not unitary: ‖U†U − I‖∞ = {dev:e}"
        )));
    }
    let part = |t: usize, o: usize| {
        u.column(t * eve_dim)
            .rows(o * eve_dim, eve_dim)
            .into_owned()
    };
    ReverseAttack::with_max_eve_dim(part(0, 0), part(0, 1), part(1, 0), part(1, 1), eve_dim)
}

/// Depolarizing parameter `p ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DepolarizingChannel {
    p: f64,
}

impl DepolarizingChannel {
    pub fn new(p: f64) -> Result<Self> {
        check_range("p", p, 0.0, 1.0, "[0, 1]")?;
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl TryFrom<f64> for DepolarizingChannel {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<DepolarizingChannel> for f64 {
    fn from(ch: DepolarizingChannel) -> f64 {
        ch.p
    }
}

/// `ξ_p(ρ) = (1 − p) ρ + (p/2) I`
pub fn apply_depolarizing(
    rho: &DensityOperator,
    ch: DepolarizingChannel,
) -> Result<DensityOperator> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: rho.dim(),
        });
    }
    let p = ch.p();
    let out = rho.matrix().scale(1.0 - p) + DMatrix::<C64>::identity(2, 2).scale(p / 2.0);
    DensityOperator::new(out)
}

/// Pauli branches in dilation order: identity, bit flip, phase flip, both (Y).
pub fn pauli_branches() -> [DMatrix<C64>; 4] {
    let o = re(0.0);
    let l = re(1.0);
    [
        DMatrix::from_row_slice(2, 2, &[l, o, o, l]),
        DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
        DMatrix::from_row_slice(2, 2, &[o, c(0.0, -1.0), c(0.0, 1.0), o]),
    ]
}

/// A four-dimensional Eve ancilla realizing `ξ_p` on the transit qubit.
///
/// Branch weights are `1 − 3p/4` on the identity and `p/4` on each of the
/// three Pauli flips.
pub fn depolarizing_dilation(p: f64) -> Result<ReverseAttack> {
    check_range("p", p, 0.0, 1.0, "[0, 1]")?;
    let weights = [1.0 - 0.75 * p, p / 4.0, p / 4.0, p / 4.0];
    let kraus: Vec<DMatrix<C64>> = pauli_branches()
        .into_iter()
        .zip(weights)
        .map(|(s, w)| s.scale(w.sqrt()))
        .collect();
    ReverseAttack::from_kraus(&kraus)
}

/// Eve-side vectors used throughout the key-rate analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedVectors {
    pub f_p0: DVector<C64>,
    pub f_p1: DVector<C64>,
    pub f_m0: DVector<C64>,
    pub f_m1: DVector<C64>,
    /// Eve's component on `|+⟩` after `U|e,0⟩`.
    pub g_plus: DVector<C64>,
    /// Eve's component on `|−⟩` after `U|e,0⟩`.
    pub g_minus: DVector<C64>,
    /// `g₊ − g₋`
    pub l1: DVector<C64>,
    /// `e00 − e01`
    pub l2: DVector<C64>,
}

pub fn derive_vectors(fwd: &ForwardAttack, atk: &ReverseAttack) -> DerivedVectors {
    let (e00, e01, e10, e11) = (atk.e00(), atk.e01(), atk.e10(), atk.e11());
    let f_p0 = (e00 + e01 + e10 + e11).scale(0.5);
    let f_p1 = (e00 - e01 + e10 - e11).scale(0.5);
    let f_m0 = (e00 + e01 - e10 - e11).scale(0.5);
    let f_m1 = (e00 - e01 - e10 + e11).scale(0.5);
    let a = fwd.alpha() * FRAC_1_SQRT_2;
    let b = fwd.beta() * FRAC_1_SQRT_2;
    let g_plus = (e00 + e01).scale(a) + (e10 + e11).scale(b);
    let g_minus = (e00 - e01).scale(a) + (e10 - e11).scale(b);
    let l1 = &g_plus - &g_minus;
    let l2 = e00 - e01;
    DerivedVectors {
        f_p0,
        f_p1,
        f_m0,
        f_m1,
        g_plus,
        g_minus,
        l1,
        l2,
    }
}

/// Random attacks for property testing.
pub mod random {
    use std::f64::consts::FRAC_PI_2;

    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::{reverse_attack_from_unitary, ForwardAttack, ReverseAttack};
    use crate::qmath::{c, C64};

    /// Haar-distributed unitary (QR of a complex Ginibre matrix, phases fixed).
    pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = DMatrix::from_fn(n, n, |_, _| {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            c(x * s, y * s)
        });
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..n {
            let d = r[(j, j)];
            let phase = if d.norm() > 0.0 {
                d / d.norm()
            } else {
                c(1.0, 0.0)
            };
            let mut col = q.column_mut(j);
            col *= phase;
        }
        q
    }

    pub fn random_forward<R: Rng + ?Sized>(rng: &mut R, max_abs_b: f64) -> ForwardAttack {
        ForwardAttack::new(rng.random_range(-max_abs_b..=max_abs_b)).expect("|b| < 1/2")
    }

    pub fn random_attack<R: Rng + ?Sized>(eve_dim: usize, rng: &mut R) -> ReverseAttack {
        reverse_attack_from_unitary(&haar_unitary(2 * eve_dim, rng), eve_dim)
            .expect("Haar sample is unitary")
    }

    /// A random attack with `‖e10‖² = ‖e01‖²`.
    ///
    /// `U|0,0⟩` is the first column of a Haar unitary. `U|1,0⟩` is then chosen
    /// on a great circle between two of the remaining (mutually orthonormal)
    /// columns, by bisection on the angle, so that its transit-`|0⟩` weight
    /// equals `‖e01‖²`. The rest of `U` is completed by Gram–Schmidt.
    pub fn random_symmetric_attack<R: Rng + ?Sized>(eve_dim: usize, rng: &mut R) -> ReverseAttack {
        let d = eve_dim;
        let n = 2 * d;
        loop {
            let u = haar_unitary(n, rng);
            let first: DVector<C64> = u.column(0).into_owned();
            let target = first.rows(d, d).norm_squared();
            let top = |v: &DVector<C64>| v.rows(0, d).norm_squared();
            let others: Vec<DVector<C64>> = (1..n).map(|k| u.column(k).into_owned()).collect();
            let lo = others.iter().find(|v| top(v) <= target);
            let hi = others.iter().find(|v| top(v) >= target);
            let (Some(lo), Some(hi)) = (lo, hi) else {
                continue;
            };

            let arc = |t: f64| lo * c(t.cos(), 0.0) + hi * c(t.sin(), 0.0);
            let (mut a, mut b) = (0.0, FRAC_PI_2);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if top(&arc(m)) <= target {
                    a = m;
                } else {
                    b = m;
                }
                if b - a < 1e-17 {
                    break;
                }
            }
            let second = arc(0.5 * (a + b));
            let second = second.unscale(second.norm());

            let mut basis = vec![first, second];
            for col in &others {
                if basis.len() == n {
                    break;
                }
                let mut w = col.clone();
                for _ in 0..2 {
                    for v in &basis {
                        let proj = v.dotc(&w);
                        w -= v * proj;
                    }
                }
                let nw = w.norm();
                if nw > 1e-6 {
                    basis.push(w.unscale(nw));
                }
            }
            if basis.len() < n {
                continue;
            }
            // columns 0 and d carry U|0,0⟩ and U|1,0⟩
            let mut order: Vec<usize> = Vec::with_capacity(n);
            let mut rest = 2..n;
            for k in 0..n {
                order.push(match k {
                    0 => 0,
                    k if k == d => 1,
                    _ => rest.next().expect("enough columns"),
                });
            }
            let full = DMatrix::from_fn(n, n, |i, j| basis[order[j]][i]);
            if let Ok(atk) = reverse_attack_from_unitary(&full, d) {
                if atk.symmetry_gap() < 1e-12 {
                    return atk;
                }
            }
        }
    }
}
