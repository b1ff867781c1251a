//! Signal-level metrics and the permutation-invariant assignment.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math::{self, dot, energy};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// SNR regulariser, relative to reference energy. Caps SNR at +80 dB.
pub const SNR_EPS: f64 = 1e-8;
/// Magnitude cap for reported dB values.
pub const DB_CAP: f64 = 80.0;

/// `10·log10(‖ref‖² / (‖ref − est‖² + ε))`, `ε = 1e-8·‖ref‖²`.
pub fn snr_db(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        bail!(InvalidInput, "snr: length mismatch {} vs {}", est.len(), reference.len());
    }
    if energy(reference) == 0.0 {
        bail!(InvalidInput, "snr: reference has zero energy");
    }
    Ok(snr_db_unchecked(est, reference))
}

pub(crate) fn snr_db_unchecked(est: &[f64], reference: &[f64]) -> f64 {
    let ref_energy = energy(reference);
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (r - e) * (r - e)).sum();
    math::db(ref_energy, err + SNR_EPS * ref_energy)
}

/// Scale-invariant SDR in dB, clamped to `±80`.
pub fn si_sdr_db(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        bail!(InvalidInput, "si-sdr: length mismatch {} vs {}", est.len(), reference.len());
    }
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        bail!(InvalidInput, "si-sdr: reference has zero energy");
    }
    if energy(est) == 0.0 {
        bail!(InvalidInput, "si-sdr: estimate has zero energy");
    }
    let alpha = dot(est, reference) / ref_energy;
    let mut target = 0.0;
    let mut distortion = 0.0;
    for (e, r) in est.iter().zip(reference) {
        let s = alpha * r;
        target += s * s;
        distortion += (e - s) * (e - s);
    }
    if distortion == 0.0 {
        return Ok(DB_CAP);
    }
    if target == 0.0 {
        return Ok(-DB_CAP);
    }
    Ok(math::db(target, distortion).clamp(-DB_CAP, DB_CAP))
}

/// Result of a permutation search. `permutation[i]` is the estimate assigned
/// to reference `i`; `loss` is the summed pairwise loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub loss: f64,
}

/// Exhaustive search over all `C!` assignments of estimates to references,
/// minimising the summed `loss(est, ref)`. Ties go to the lexicographically
/// smallest permutation.
pub fn pit_assign<F>(ests: &[&[f64]], refs: &[&[f64]], loss: F) -> Result<Assignment>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if ests.len() != refs.len() || ests.is_empty() {
        bail!(InvalidInput, "pit: {} estimates for {} references", ests.len(), refs.len());
    }
    let cost: Vec<Vec<f64>> = refs.iter().map(|r| ests.iter().map(|e| loss(e, r)).collect()).collect();
    Ok(pit_from_costs(&cost))
}

/// `cost[ref][est]` form of [`pit_assign`].
pub fn pit_from_costs(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = Assignment { permutation: perm.clone(), loss: f64::INFINITY };
    loop {
        let loss: f64 = perm.iter().enumerate().map(|(r, &e)| cost[r][e]).sum();
        if loss < best.loss {
            best = Assignment { permutation: perm.clone(), loss };
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best
}

/// Advances to the next permutation in lexicographic order.
pub(crate) fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Utterance-level PIT with the negative-SNR objective, built on a tape.
/// Returns the mean (over sources) negative SNR of the best assignment.
pub fn pit_neg_snr(tape: &mut Tape, ests: &[Var], refs: &[Arc<Matrix>]) -> (Var, Assignment) {
    assert_eq!(ests.len(), refs.len());
    let cost: Vec<Vec<f64>> = refs
        .iter()
        .map(|r| ests.iter().map(|e| -snr_db_unchecked(tape.value(*e).as_slice(), r.as_slice())).collect())
        .collect();
    let assignment = pit_from_costs(&cost);
    let terms: Vec<Var> = assignment
        .permutation
        .iter()
        .enumerate()
        .map(|(r, &e)| tape.neg_snr(ests[e], refs[r].clone()))
        .collect();
    let total = tape.sum(&terms);
    let mean = tape.scale(total, 1.0 / refs.len() as f64);
    (mean, assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn snr_closed_forms() {
        let r: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((snr_db(&r, &r).unwrap() - 80.0).abs() < 1e-9);
        let zero = vec![0.0; 100];
        assert!(snr_db(&zero, &r).unwrap().abs() < 1e-6);
        // error energy 1% of reference energy
        let est: Vec<f64> = r.iter().map(|v| v * 1.1).collect();
        assert!((snr_db(&est, &r).unwrap() - 20.0).abs() < 0.01);
        assert!(snr_db(&r, &zero).is_err());
        assert!(snr_db(&r[..3], &r).is_err());
    }

    #[test]
    fn si_sdr_caps_and_errors() {
        let r = vec![1.0, 2.0, -1.0, 0.5];
        assert_eq!(si_sdr_db(&r, &r).unwrap(), DB_CAP);
        let scaled: Vec<f64> = r.iter().map(|v| -3.0 * v).collect();
        assert!(si_sdr_db(&scaled, &r).unwrap() >= 80.0 - 1e-9);
        let orth = vec![2.0, -1.0, 0.0, 0.0];
        assert_eq!(si_sdr_db(&orth, &r).unwrap(), -DB_CAP);
        assert!(si_sdr_db(&[0.0; 4], &r).is_err());
        assert!(si_sdr_db(&r, &[0.0; 4]).is_err());
    }

    #[test]
    fn pit_prefers_swapped_order() {
        let a = vec![1.0, 0.0, 1.0, 0.0];
        let b = vec![0.0, 1.0, 0.0, -1.0];
        let neg_snr = |e: &[f64], r: &[f64]| -snr_db(e, r).unwrap();
        let res = pit_assign(&[&b, &a], &[&a, &b], neg_snr).unwrap();
        assert_eq!(res.permutation, vec![1, 0]);
        assert!((res.loss + 160.0).abs() < 1e-9);
    }

    #[test]
    fn pit_ties_pick_lexicographic_first() {
        let cost = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(pit_from_costs(&cost).permutation, vec![0, 1]);
    }

    #[test]
    fn permutations_are_lexicographic_and_complete() {
        let mut p = vec![0, 1, 2];
        let mut seen = vec![p.clone()];
        while next_permutation(&mut p) {
            seen.push(p.clone());
        }
        assert_eq!(
            seen,
            vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]
        );
    }
}
