use serde::Serialize;

use super::f_bp;
use crate::error::{Error, Result};

/// Coarse scan resolution for locating the sign change.
pub const SCAN_STEP: f64 = 0.005;

/// Largest `p` for which the closed form is defined.
pub const P_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Threshold {
    pub b: f64,
    pub p_star: f64,
    /// `p*/2`, the Z-type error rate at the threshold.
    pub e_z_threshold: f64,
    /// Sign changes seen by the coarse scan.
    pub sign_changes: usize,
    pub warning: Option<String>,
}

/// Smallest `p` where `f(b, ·)` reaches zero, to within `tol`.
pub fn threshold_p(b: f64, tol: f64) -> Result<Threshold> {
    let (p_star, sign_changes) = first_zero(|p| Ok(f_bp(b, p)?.r_lower), tol)?;
    let warning = (sign_changes > 1)
        .then(|| format!("{sign_changes} sign changes on [0, 1/2]; reporting the first"));
    Ok(Threshold {
        b,
        p_star,
        e_z_threshold: p_star / 2.0,
        sign_changes,
        warning,
    })
}

/// Coarse scan of `f` on `[0, P_MAX]` followed by bisection on the first
/// bracket where `f` turns non-positive. Returns the root and the number of
/// sign changes the scan saw.
pub fn first_zero<F>(f: F, tol: f64) -> Result<(f64, usize)>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::Domain {
            what: "tol",
            value: tol,
            domain: "(0, ∞)",
        });
    }
    let f0 = f(0.0)?;
    if !(f0 > 0.0) {
        return Err(Error::NoThreshold(format!(
            "bound is not positive at p = 0 ({f0})"
        )));
    }
    let steps = (P_MAX / SCAN_STEP).round() as usize;
    let mut bracket = None;
    let mut changes = 0;
    let mut prev = (0.0, f0);
    for i in 1..=steps {
        let p = (i as f64 * SCAN_STEP).min(P_MAX);
        let v = f(p)?;
        if (prev.1 > 0.0) != (v > 0.0) {
            changes += 1;
            if bracket.is_none() {
                bracket = Some((prev.0, p));
            }
        }
        prev = (p, v);
    }
    let (mut lo, mut hi) =
        bracket.ok_or_else(|| Error::NoThreshold("bound stays positive on [0, 1/2]".into()))?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi), changes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub b: f64,
    pub p: f64,
    /// `None` when `(b, p)` is outside the closed form's domain.
    pub r_lower: Option<f64>,
}

/// Row-major table of `f(b, p)`: every `p` for the first `b`, then the next.
pub fn sweep(b_values: &[f64], p_grid: &[f64]) -> Vec<SweepRow> {
    b_values
        .iter()
        .flat_map(|&b| {
            p_grid.iter().map(move |&p| SweepRow {
                b,
                p,
                r_lower: f_bp(b, p).ok().map(|f| f.r_lower),
            })
        })
        .collect()
}

/// `p_min, p_min + step, …` up to `p_max` inclusive (with 1e-9 slack).
pub fn p_grid(p_min: f64, p_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Domain {
            what: "p_step",
            value: step,
            domain: "(0, ∞)",
        });
    }
    if !p_min.is_finite() || !p_max.is_finite() || p_max < p_min {
        return Err(Error::Domain {
            what: "p_max",
            value: p_max,
            domain: "[p_min, ∞)",
        });
    }
    let count = ((p_max - p_min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| p_min + i as f64 * step).collect())
}
