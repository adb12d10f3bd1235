//! Morlet parameter distance and minimum-cost filterbank matching.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morlet::MorletParams;
use crate::training::RunLog;

/// Distance between two angles on the unit circle.
pub fn arc_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// `||(sigma, xi, gamma)_1 - (sigma, xi, gamma)_2|| + arc(theta_1, theta_2)`.
pub fn morlet_distance(a: &MorletParams, b: &MorletParams) -> f64 {
    let ds = a.sigma - b.sigma;
    let dx = a.xi - b.xi;
    let dg = a.gamma - b.gamma;
    (ds * ds + dx * dx + dg * dg).sqrt() + arc_distance(a.theta, b.theta)
}

/// Solves the square assignment problem on a row-major `k x k` cost matrix
/// with the shortest-augmenting-path Hungarian method, `O(k^3)`. Returns
/// `assign[row] = column`.
pub fn hungarian(cost: &[f64], k: usize) -> Vec<usize> {
    assert_eq!(cost.len(), k * k, "cost matrix must be k x k");
    // 1-based potentials with a virtual column 0
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=k {
                if used[col] {
                    continue;
                }
                let cur = cost[(r0 - 1) * k + col - 1] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=k {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; k];
    for col in 1..=k {
        if owner[col] > 0 {
            assign[owner[col] - 1] = col - 1;
        }
    }
    assign
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterMatch {
    /// `(index in A, index in B)`, ordered by the A index.
    pub pairs: Vec<(usize, usize)>,
    pub costs: Vec<f64>,
    pub total: f64,
}

/// Minimum-cost perfect matching between two equally sized banks under
/// [`morlet_distance`].
pub fn filterbank_distance(a: &[MorletParams], b: &[MorletParams]) -> Result<FilterMatch> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let k = a.len();
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| morlet_distance(p, q)))
        .collect();
    let assign = hungarian(&cost, k);
    let pairs: Vec<(usize, usize)> = assign.iter().copied().enumerate().collect();
    let costs: Vec<f64> = pairs.iter().map(|&(i, j)| cost[i * k + j]).collect();
    let total = costs.iter().sum();
    Ok(FilterMatch {
        pairs,
        costs,
        total,
    })
}

/// Filterbank distance of every logged epoch to `reference`.
pub fn distance_trajectory(log: &RunLog, reference: &[MorletParams]) -> Result<Vec<(usize, f64)>> {
    log.epochs
        .iter()
        .map(|r| {
            if r.params.is_empty() {
                return Err(Error::Data(format!(
                    "epoch {} has no Morlet parameters (pixelwise run?)",
                    r.epoch
                )));
            }
            Ok((r.epoch, filterbank_distance(&r.params, reference)?.total))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{random_init, tight_frame_init};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(sigma: f64, theta: f64, xi: f64, gamma: f64) -> MorletParams {
        MorletParams {
            sigma,
            theta,
            xi,
            gamma,
        }
    }

    #[test]
    fn morlet_distance_examples() {
        let a = m(1.0, 0.3, 0.5, 1.0);
        assert_eq!(morlet_distance(&a, &a), 0.0);
        let d = morlet_distance(&m(1.0, 0.1, 0.5, 1.0), &m(1.0, 2.0 * PI - 0.1, 0.5, 1.0));
        assert!((d - 0.2).abs() < 1e-12);
        assert_eq!(morlet_distance(&m(4.0, 1.0, 0.5, 5.0), &m(1.0, 1.0, 0.5, 1.0)), 5.0);
        assert!((arc_distance(0.0, 7.0 * PI) - PI).abs() < 1e-12);
        assert!((arc_distance(-0.5, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hungarian_small_known_case() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
        assert!(hungarian(&[], 0).is_empty());
    }

    #[test]
    fn identity_and_permutation_invariance() {
        let a = random_init(2, 4, 3);
        let d = filterbank_distance(&a, &a).unwrap();
        assert_eq!(d.total, 0.0);
        assert!(d.pairs.iter().all(|(i, j)| i == j));
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let b: Vec<MorletParams> = perm.iter().map(|&i| a[i]).collect();
        let d = filterbank_distance(&a, &b).unwrap();
        assert_eq!(d.total, 0.0);
        for (i, j) in d.pairs {
            assert_eq!(perm[j], i);
        }
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(
            filterbank_distance(&tight_frame_init(2, 2), &tight_frame_init(1, 2)),
            Err(Error::SizeMismatch { left: 4, right: 2 })
        ));
    }
}
