//! Small-dimension complex linear algebra and entropy primitives.
//!
//! Everything here works on dense matrices of dimension at most a few dozen.
//! Entropies are in bits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;

/// Slack for normalization, Hermiticity and positivity checks.
pub const STATE_TOL: f64 = 1e-9;

/// Slack for arguments of [`binary_entropy`] and clamped probabilities.
pub const PROB_SLACK: f64 = 1e-12;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `⟨a|b⟩`, conjugate-linear in the first argument.
pub fn inner(a: &DVector<C64>, b: &DVector<C64>) -> C64 {
    a.dotc(b)
}

pub fn norm_sqr(a: &DVector<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `|a⟩⟨b|`
pub fn outer(a: &DVector<C64>, b: &DVector<C64>) -> DMatrix<C64> {
    a * b.adjoint()
}

/// A normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<C64>,
}

impl PureState {
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Invariant("pure state of dimension 0".into()));
        }
        let n = norm_sqr(&amplitudes);
        if !n.is_finite() || (n - 1.0).abs() > STATE_TOL {
            return Err(Error::Invariant(format!("state norm² = {n}, expected 1")));
        }
        Ok(Self { amplitudes })
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(amplitudes))
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for dim {dim}");
        let mut v = DVector::zeros(dim);
        v[k] = re(1.0);
        Self { amplitudes: v }
    }

    pub fn zero() -> Self {
        Self::basis(2, 0)
    }

    pub fn one() -> Self {
        Self::basis(2, 1)
    }

    pub fn plus() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            amplitudes: DVector::from_vec(vec![re(s), re(s)]),
        }
    }

    pub fn minus() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            amplitudes: DVector::from_vec(vec![re(s), re(-s)]),
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    /// `|ψ⟩⟨ψ|`, as a density operator.
    pub fn density(&self) -> DensityOperator {
        DensityOperator {
            matrix: outer(&self.amplitudes, &self.amplitudes),
        }
    }

    /// `|ψ⟩⟨ψ|`, as a plain matrix (for use as a projector).
    pub fn projector(&self) -> DMatrix<C64> {
        outer(&self.amplitudes, &self.amplitudes)
    }
}

/// A Hermitian, unit-trace, positive semidefinite matrix.
///
/// The only way to obtain one is through a checked constructor, so every
/// value in circulation satisfies the three invariants within [`STATE_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        check_hermitian(&matrix)?;
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::Invariant(format!("trace = {tr}, expected 1")));
        }
        let eig = hermitian_eigenvalues(&matrix)?;
        if let Some(&min) = eig.first() {
            if min < -STATE_TOL {
                return Err(Error::Invariant(format!("negative eigenvalue {min:e}")));
            }
        }
        Ok(Self { matrix })
    }

    /// Divides `matrix` by its trace, then validates.
    pub fn normalized(matrix: DMatrix<C64>) -> Result<Self> {
        let tr = matrix.trace().re;
        if !(tr > 0.0) {
            return Err(Error::Invariant(format!("cannot normalize: trace = {tr}")));
        }
        Self::new(matrix.unscale(tr))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim).unscale(dim as f64),
        }
    }

    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(weights.len(), weights.iter().map(|&w| re(w)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    pub fn kron(&self, other: &DensityOperator) -> DensityOperator {
        Self {
            matrix: self.matrix.kronecker(&other.matrix),
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        hermitian_eigenvalues(&self.matrix)
    }

    /// Largest entrywise deviation from `other`.
    pub fn max_abs_diff(&self, other: &DensityOperator) -> f64 {
        max_abs_diff(&self.matrix, &other.matrix)
    }
}

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn check_square(m: &DMatrix<C64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::Invariant("empty matrix".into()));
    }
    Ok(())
}

fn check_hermitian(m: &DMatrix<C64>) -> Result<()> {
    check_square(m)?;
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if !d.is_finite() || d > STATE_TOL {
                return Err(Error::Invariant(format!(
                    "not Hermitian at ({i},{j}): {d:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<f64>> {
    check_square(m)?;
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Hermitian eigensolver did not converge".into()))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// A finite probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    weights: Vec<f64>,
}

impl ProbDist {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invariant("empty distribution".into()));
        }
        for &w in &weights {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(Error::Invariant(format!("weight {w} outside [0, 1]")));
            }
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > STATE_TOL {
            return Err(Error::Invariant(format!("weights sum to {s}, expected 1")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `h(x) = −x log₂ x − (1−x) log₂(1−x)` with `0 log₂ 0 = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !x.is_finite() || x < -PROB_SLACK || x > 1.0 + PROB_SLACK {
        return Err(Error::Domain {
            what: "x",
            value: x,
            domain: "[0, 1]",
        });
    }
    let x = x.clamp(0.0, 1.0);
    Ok(xlog2x_neg(x) + xlog2x_neg(1.0 - x))
}

#[inline]
fn xlog2x_neg(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.log2()
    }
}

pub fn shannon_entropy(dist: &ProbDist) -> f64 {
    dist.weights.iter().map(|&w| xlog2x_neg(w)).sum()
}

/// Shannon entropy of an operator spectrum.
///
/// Values in `[-STATE_TOL, 0)` are rounding dust and count as zero; anything
/// more negative is rejected.
pub fn spectrum_entropy(spectrum: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &l in spectrum {
        if !l.is_finite() || l < -STATE_TOL {
            return Err(Error::Invariant(format!(
                "spectrum value {l:e} is negative"
            )));
        }
        s += xlog2x_neg(l.max(0.0));
    }
    Ok(s)
}

pub fn von_neumann_entropy(rho: &DensityOperator) -> Result<f64> {
    spectrum_entropy(&rho.eigenvalues()?)
}

/// Reduced state on the subsystems listed in `keep`.
///
/// `dims` lists subsystem dimensions with the first factor most significant,
/// i.e. the layout produced by `A.kron(B)`.
pub fn partial_trace(
    rho: &DensityOperator,
    dims: &[usize],
    keep: &[usize],
) -> Result<DensityOperator> {
    let total: usize = dims.iter().product();
    if total != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: total,
        });
    }
    let mut kept = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.len() != keep.len() || kept.iter().any(|&k| k >= dims.len()) {
        return Err(Error::Invariant(format!(
            "keep set {keep:?} invalid for {} subsystems",
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !kept.contains(i)).collect();

    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let offsets = |subs: &[usize]| -> Vec<usize> {
        let count: usize = subs.iter().map(|&s| dims[s]).product();
        (0..count)
            .map(|mut idx| {
                let mut off = 0;
                for &s in subs.iter().rev() {
                    off += (idx % dims[s]) * strides[s];
                    idx /= dims[s];
                }
                off
            })
            .collect()
    };
    let kept_off = offsets(&kept);
    let traced_off = offsets(&traced);

    let m = rho.matrix();
    let out = DMatrix::from_fn(kept_off.len(), kept_off.len(), |i, j| {
        traced_off
            .iter()
            .map(|&t| m[(kept_off[i] + t, kept_off[j] + t)])
            .sum::<C64>()
    });
    DensityOperator::new(out)
}

/// `tr(Π ρ)` for a Hermitian idempotent `projector`.
pub fn born_probability(rho: &DensityOperator, projector: &DMatrix<C64>) -> Result<f64> {
    if projector.shape() != (rho.dim(), rho.dim()) {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: projector.nrows(),
        });
    }
    check_hermitian(projector)?;
    let dev = max_abs_diff(&(projector * projector), projector);
    if dev > STATE_TOL {
        return Err(Error::Invariant(format!(
            "projector not idempotent: {dev:e}"
        )));
    }
    let p = (projector * rho.matrix()).trace().re;
    if p < -PROB_SLACK || p > 1.0 + PROB_SLACK {
        return Err(Error::Numeric(format!(
            "Born probability {p} outside [0, 1]"
        )));
    }
    Ok(p.clamp(0.0, 1.0))
}
