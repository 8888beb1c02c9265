//! Synthetic grouped-regression tables for desk-scale evaluation.
//!
//! Rows are drawn from a family with a shared nonlinear base response plus a
//! per-group linear disturbance:
//!
//! ```text
//! y = clip(base(x) + a_g * x1 + b_g + noise, 0, 100)
//! base(x) = 2.5 * (10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5)
//! ```
//!
//! with `x ~ U(0,1)^p` (`p >= 5`) and Gaussian noise. Per group,
//! `a_g ~ U(-m, m)` while `b_g = s_g * U(m/2, m)` for a random sign `s_g`:
//! offsets are bounded away from zero so every group carries a real
//! adaptation signal. `base` ranges over `[0, 75]`, keeping yields mostly
//! unclipped.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::DescriptorTable;
use crate::error::{Error, Result};
use crate::rng::chacha;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_groups: usize,
    pub rows_per_group: usize,
    pub n_features: usize,
    /// Magnitude `m` of the per-group slope and offset disturbances.
    pub group_effect: f64,
    pub noise_sigma: f64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.rows_per_group == 0 {
            return Err(Error::InvalidConfig(
                "need at least one group and one row per group".into(),
            ));
        }
        if self.n_features < 5 {
            return Err(Error::InvalidConfig(
                "the base response uses the first five features; n_features must be >= 5".into(),
            ));
        }
        if !(self.group_effect.is_finite() && self.group_effect >= 0.0) {
            return Err(Error::InvalidConfig("group_effect must be finite and >= 0".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Sign-symmetric draw with magnitude in `[m/2, m]`.
fn bounded_effect(rng: &mut rand_chacha::ChaCha8Rng, m: f64) -> f64 {
    let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
    sign * (m / 2.0 + rng.random_range(0.0..1.0) * m / 2.0)
}

/// Shared nonlinear base response on the first five features.
pub fn base_response(x: &[f64]) -> f64 {
    2.5 * (10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5) * (x[2] - 0.5)
        + 10.0 * x[3]
        + 5.0 * x[4])
}

/// Generate a table. Deterministic per seed: groups are emitted in order,
/// each drawing `(a_g, sign, b_g)` first and then, per row, `p` features
/// followed by one noise value.
pub fn generate_table(spec: &SynthSpec, seed: u64) -> Result<DescriptorTable> {
    spec.validate()?;
    let mut rng = chacha(seed);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated above");

    let n = spec.n_groups * spec.rows_per_group;
    let p = spec.n_features;
    let group_width = spec.n_groups.to_string().len().max(2);
    let row_width = n.to_string().len().max(4);

    let mut row_ids = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut yields = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, p));

    let mut row = 0usize;
    for g in 0..spec.n_groups {
        let group = format!("g{:0width$}", g + 1, width = group_width);
        let slope = rng.random_range(-1.0..1.0) * spec.group_effect;
        let offset = bounded_effect(&mut rng, spec.group_effect);

        for _ in 0..spec.rows_per_group {
            for j in 0..p {
                features[(row, j)] = rng.random_range(0.0..1.0);
            }
            let eps = noise.sample(&mut rng);
            let x = features.row(row);
            let y = base_response(x.as_slice().expect("row is contiguous"))
                + slope * x[0]
                + offset
                + eps;
            yields.push(y.clamp(0.0, 100.0));
            row_ids.push(format!("r{:0width$}", row + 1, width = row_width));
            groups.push(group.clone());
            row += 1;
        }
    }

    DescriptorTable::new(
        row_ids,
        groups,
        features,
        yields,
        (0..p).map(|j| format!("x{}", j + 1)).collect(),
    )
}
