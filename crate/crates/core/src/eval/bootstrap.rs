use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// Standard deviation (population form) of the mean accuracy over
/// `iterations` resamples with replacement.
pub fn bootstrap_stddev<R: Rng + ?Sized>(per_item: &[bool], iterations: usize, rng: &mut R) -> Result<f64> {
    if per_item.is_empty() {
        return Err(Error::invalid("bootstrap over an empty sample"));
    }
    if iterations < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 iterations, got {iterations}")));
    }
    let n = per_item.len();
    let means: Vec<f64> = (0..iterations)
        .map(|_| {
            let hits = (0..n).filter(|_| per_item[rng.gen_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    let m = means.iter().sum::<f64>() / iterations as f64;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / iterations as f64;
    Ok(libm::sqrt(var))
}
