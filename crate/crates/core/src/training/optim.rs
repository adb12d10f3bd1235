//! One-cycle learning-rate schedule and SGD with momentum.

use crate::morlet::MIN_POSITIVE;

/// Fraction of steps spent warming up.
pub const WARMUP_FRACTION: f64 = 0.3;
/// Initial rate is `max_lr / DIV`.
pub const DIV: f64 = 25.0;
/// Final rate is `max_lr / (DIV * FINAL_DIV)`.
pub const FINAL_DIV: f64 = 1e4;

/// Linear warm-up from `max_lr / 25` to `max_lr` over the first 30% of
/// steps, then linear decay to `max_lr / 2.5e5` at the last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> f64 {
    let start = max_lr / DIV;
    let end = max_lr / (DIV * FINAL_DIV);
    if total_steps <= 1 {
        return max_lr;
    }
    let last = (total_steps - 1) as f64;
    let peak = (WARMUP_FRACTION * last).round();
    let s = step.min(total_steps - 1) as f64;
    if s <= peak {
        if peak == 0.0 {
            return max_lr;
        }
        start + (max_lr - start) * s / peak
    } else {
        max_lr + (end - max_lr) * (s - peak) / (last - peak)
    }
}

/// `v <- momentum v + g (+ wd p where masked)`, `p <- p - lr v`.
/// Entries with `clamp_mask` set are clamped to at least `1e-6` afterwards.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    wd_mask: Option<&[bool]>,
    clamp_mask: Option<&[bool]>,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for i in 0..params.len() {
        let mut g = grads[i];
        if weight_decay != 0.0 && wd_mask.map_or(true, |m| m[i]) {
            g += weight_decay * params[i];
        }
        velocity[i] = momentum * velocity[i] + g;
        params[i] -= lr * velocity[i];
        if clamp_mask.is_some_and(|m| m[i]) && params[i] < MIN_POSITIVE {
            params[i] = MIN_POSITIVE;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_shape() {
        let total = 101;
        assert_eq!(one_cycle_lr(0, total, 0.1), 0.1 / 25.0);
        assert_eq!(one_cycle_lr(30, total, 0.1), 0.1);
        assert!((one_cycle_lr(100, total, 0.1) / (0.1 / 2.5e5) - 1.0).abs() < 1e-9);
        let lrs: Vec<f64> = (0..total).map(|s| one_cycle_lr(s, total, 0.1)).collect();
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        let at = lrs.iter().position(|&v| v == peak).unwrap();
        assert!(lrs[..=at].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[at..].windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(one_cycle_lr(0, 1, 0.5), 0.5);
    }

    #[test]
    fn sgd_closed_forms() {
        let mut p = vec![1.0, 2.0];
        let mut v = vec![0.0; 2];
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0, None, None);
        assert_eq!(p, vec![1.0, 2.0]);

        let mut p = vec![0.0];
        let mut v = vec![0.0];
        for _ in 0..2 {
            sgd_momentum_step(&mut p, &[1.0], &mut v, 0.5, 0.9, 0.0, None, None);
        }
        assert!((p[0] + 0.5 * 2.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_mask_and_clamp() {
        let mut p = vec![1.0, 1.0, 0.01];
        let mut v = vec![0.0; 3];
        sgd_momentum_step(
            &mut p,
            &[0.0, 0.0, 1.0],
            &mut v,
            0.1,
            0.9,
            0.5,
            Some(&[true, false, false]),
            Some(&[false, false, true]),
        );
        assert_eq!(p[0], 1.0 - 0.1 * 0.5);
        assert_eq!(p[1], 1.0);
        assert_eq!(p[2], MIN_POSITIVE);
    }
}
