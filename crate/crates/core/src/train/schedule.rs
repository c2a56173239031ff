use std::f64::consts::PI;

/// Linear warmup to `lr_max` over `warmup` epochs, then a half-cycle cosine
/// from `lr_max` down to `lr_min`.
pub fn lr_at(epoch: usize, epochs: usize, warmup: usize, lr_max: f64, lr_min: f64) -> f64 {
    if epoch < warmup {
        return lr_max * (epoch + 1) as f64 / warmup as f64;
    }
    let span = (epochs - warmup) as f64;
    let progress = (epoch - warmup) as f64 / span;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}
