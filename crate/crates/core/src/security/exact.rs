//! Exact conditional entropies of the post-iteration classical–quantum state.

use nalgebra::{DMatrix, DVector};

use super::{joint_from_q, q_from_attack, DEGENERATE_K};
use crate::channels::{derive_vectors, ForwardAttack, ReverseAttack, DEFAULT_MAX_EVE_DIM};
use crate::error::{Error, Result};
use crate::qmath::{outer, partial_trace, von_neumann_entropy, DensityOperator, C64};

/// Joint states after one kept iteration. `A`, `B` are the raw-key registers
/// and `M = A ⊕ B`; all are classical qubits. Layouts: `A ⊗ B ⊗ E` and
/// `B ⊗ M ⊗ E`.
#[derive(Debug, Clone)]
pub struct ExactAttackState {
    pub eve_dim: usize,
    pub k: f64,
    pub rho_abe: DensityOperator,
    pub rho_bme: DensityOperator,
    pub rho_be: DensityOperator,
    pub rho_e: DensityOperator,
    pub rho_me: DensityOperator,
    /// Unnormalized Eve block for each `(a, b)`.
    blocks: [[DMatrix<C64>; 2]; 2],
    l1: DVector<C64>,
    l2: DVector<C64>,
}

impl ExactAttackState {
    pub fn build(fwd: &ForwardAttack, atk: &ReverseAttack) -> Result<Self> {
        let d = atk.eve_dim();
        if d > DEFAULT_MAX_EVE_DIM {
            return Err(Error::Invariant(format!(
                "exact evaluation supports eve_dim ≤ {DEFAULT_MAX_EVE_DIM}, got {d}"
            )));
        }
        let dv = derive_vectors(fwd, atk);
        let blocks = [
            [
                outer(&dv.l1, &dv.l1).scale(0.25),
                outer(atk.e01(), atk.e01()).scale(0.5),
            ],
            [
                outer(&dv.g_minus, &dv.g_minus).scale(0.5),
                outer(&dv.l2, &dv.l2).scale(0.25),
            ],
        ];
        let k: f64 = blocks.iter().flatten().map(|m| m.trace().re).sum();
        if !(k > DEGENERATE_K) {
            return Err(Error::DegenerateChannel(k));
        }

        let mut abe = DMatrix::<C64>::zeros(4 * d, 4 * d);
        let mut bme = DMatrix::<C64>::zeros(4 * d, 4 * d);
        for a in 0..2 {
            for b in 0..2 {
                let m = a ^ b;
                let blk = blocks[a][b].unscale(k);
                abe.view_mut(((2 * a + b) * d, (2 * a + b) * d), (d, d))
                    .copy_from(&blk);
                bme.view_mut(((2 * b + m) * d, (2 * b + m) * d), (d, d))
                    .copy_from(&blk);
            }
        }
        let rho_abe = DensityOperator::new(abe)?;
        let rho_bme = DensityOperator::new(bme)?;
        let rho_be = partial_trace(&rho_abe, &[2, 2, d], &[1, 2])?;
        let rho_e = partial_trace(&rho_abe, &[2, 2, d], &[2])?;
        let rho_me = partial_trace(&rho_bme, &[2, 2, d], &[1, 2])?;
        Ok(Self {
            eve_dim: d,
            k,
            rho_abe,
            rho_bme,
            rho_be,
            rho_e,
            rho_me,
            blocks,
            l1: dv.l1,
            l2: dv.l2,
        })
    }

    /// Unnormalized Eve operator on the `(a, b)` branch.
    pub fn block(&self, a: usize, b: usize) -> &DMatrix<C64> {
        &self.blocks[a][b]
    }

    /// `S(B|E) = S(BE) − S(E)`
    pub fn s_b_given_e(&self) -> Result<f64> {
        Ok(von_neumann_entropy(&self.rho_be)? - von_neumann_entropy(&self.rho_e)?)
    }

    /// `S(B|ME) = S(BME) − S(ME)`
    pub fn s_b_given_me(&self) -> Result<f64> {
        Ok(von_neumann_entropy(&self.rho_bme)? - von_neumann_entropy(&self.rho_me)?)
    }

    /// Eve's state conditioned on `M = 0`:
    /// `(|l1⟩⟨l1| + |l2⟩⟨l2|) / (‖l1‖² + ‖l2‖²)`.
    pub fn rho1_e(&self) -> Result<DensityOperator> {
        DensityOperator::normalized(outer(&self.l1, &self.l1) + outer(&self.l2, &self.l2))
    }

    pub fn l1(&self) -> &DVector<C64> {
        &self.l1
    }

    pub fn l2(&self) -> &DVector<C64> {
        &self.l2
    }
}

/// `S(B|E) − H(B|A)` evaluated on the exact state.
pub fn exact_key_rate(fwd: &ForwardAttack, atk: &ReverseAttack) -> Result<f64> {
    let state = ExactAttackState::build(fwd, atk)?;
    let joint = joint_from_q(&q_from_attack(fwd, atk)?)?;
    Ok(state.s_b_given_e()? - joint.h_b_given_a()?)
}
