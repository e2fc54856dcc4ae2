use std::f64::consts::PI;

use super::OptimizerConfig;

/// Number of warmup steps for a run of `total_steps`.
pub fn warmup_steps(total_steps: usize, cfg: &OptimizerConfig) -> usize {
    (cfg.warmup_frac * total_steps as f64).floor() as usize
}

/// Linear warmup from 0 to `peak_lr`, then half-cosine decay that lands on
/// `final_lr` exactly at step `total_steps - 1`. Later steps stay at
/// `final_lr`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &OptimizerConfig) -> f64 {
    let warm = warmup_steps(total_steps, cfg);
    if step < warm {
        return cfg.peak_lr * step as f64 / warm as f64;
    }
    let last = total_steps.saturating_sub(1);
    if step >= last {
        return cfg.final_lr;
    }
    let progress = (step - warm) as f64 / (last - warm) as f64;
    cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let cfg = OptimizerConfig::default();
        let total = 1000;
        assert_eq!(warmup_steps(total, &cfg), 100);
        assert_eq!(lr_at(0, total, &cfg), 0.0);
        assert!((lr_at(100, total, &cfg) - 2e-4).abs() < 1e-12);
        assert!((lr_at(999, total, &cfg) - 1e-6).abs() < 1e-9);
        // decay spans steps 100..=999, midpoint at 549.5; check symmetric pair
        let total = 1001; // warm 100, decay 100..=1000, midpoint 550
        assert!((lr_at(550, total, &cfg) - (2e-4 + 1e-6) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn continuous_and_monotone_after_warmup() {
        let cfg = OptimizerConfig::default();
        for total in [10, 37, 200, 1234] {
            let warm = warmup_steps(total, &cfg);
            let lrs: Vec<f64> = (0..total).map(|s| lr_at(s, total, &cfg)).collect();
            for w in lrs[..=warm.min(total - 1)].windows(2) {
                assert!(w[1] >= w[0]);
            }
            for w in lrs[warm..].windows(2) {
                assert!(w[1] <= w[0], "total {total}");
            }
            if warm > 0 {
                // junction jump equals one warmup increment
                assert!(lrs[warm] - lrs[warm - 1] <= cfg.peak_lr / warm as f64 + 1e-15);
            }
            assert_eq!(*lrs.last().unwrap(), cfg.final_lr);
        }
    }
}
