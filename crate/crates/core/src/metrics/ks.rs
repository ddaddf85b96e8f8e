use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::targets::fill_standard_normal;

pub const DEFAULT_PROJECTIONS: usize = 128;
/// Seed of the projection stream used for reported KS values.
pub const EVAL_SEED: u64 = 0x5EED_0F_4B5;

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Mean two-sample KS statistic over `n_proj` uniformly random directions.
pub fn sliced_ks(a: &[f64], b: &[f64], dim: usize, n_proj: usize, rng: &mut dyn RngCore) -> Result<f64> {
    if n_proj == 0 {
        return Err(invalid("n_proj", "must be at least 1"));
    }
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(invalid("dim", "sample buffers are not a multiple of the dimension"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let project = |s: &[f64], u: &[f64]| -> Vec<f64> {
        s.chunks_exact(dim).map(|x| x.iter().zip(u).map(|(p, q)| p * q).sum()).collect()
    };
    let mut u = vec![0.0; dim];
    let mut total = 0.0;
    for _ in 0..n_proj {
        loop {
            fill_standard_normal(rng, &mut u);
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                u.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
        total += ks_two_sample(&project(a, &u), &project(b, &u))?;
    }
    Ok(total / n_proj as f64)
}
