use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ExactSampler, Target, LN_2PI};

const RING_SCALE: f64 = 0.15;
const N_RINGS: usize = 4;
/// Radius below which the polar Jacobian is frozen (the density would
/// otherwise diverge at the origin).
const JACOBIAN_FLOOR: f64 = 1e-3;

/// How the radial profile is turned into a planar density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingsDensity {
    /// `p_r(|x|) / (2 pi |x|)`: the law of `r ~ p_r`, `theta ~ U[0, 2 pi)`.
    #[default]
    Polar,
    /// `p_r(|x|) / (2 pi)` without the Jacobian; the ring masses then grow
    /// linearly with the radius.
    Cartesian,
}

/// Four concentric rings in the plane with radial profile
/// `p_r = (1/4) sum_i N(i, 0.15^2)`, `i = 1..4`.
#[derive(Clone, Debug)]
pub struct Rings {
    density: RingsDensity,
}

pub fn make_rings() -> Rings {
    make_rings_with(RingsDensity::default())
}

pub fn make_rings_with(density: RingsDensity) -> Rings {
    Rings { density }
}

impl Rings {
    pub fn density_kind(&self) -> RingsDensity {
        self.density
    }

    /// Log of the radial mixture `p_r(r)` and its derivative in `r`.
    pub fn radial_log_density(&self, r: f64) -> (f64, f64) {
        let var = RING_SCALE * RING_SCALE;
        let log_c = -(N_RINGS as f64).ln() - 0.5 * (LN_2PI + var.ln());
        let mut terms = [0.0; N_RINGS];
        for (i, t) in terms.iter_mut().enumerate() {
            let c = (i + 1) as f64;
            *t = log_c - 0.5 * (r - c) * (r - c) / var;
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for (i, t) in terms.iter().enumerate() {
            let e = (t - max).exp();
            sum += e;
            dsum += e * (-(r - (i + 1) as f64) / var);
        }
        (max + sum.ln(), dsum / sum)
    }
}

impl Target for Rings {
    fn name(&self) -> &str {
        "rings"
    }

    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = x[0].hypot(x[1]);
        let (lp, _) = self.radial_log_density(r);
        match self.density {
            RingsDensity::Polar => lp - LN_2PI - r.max(JACOBIAN_FLOOR).ln(),
            RingsDensity::Cartesian => lp - LN_2PI,
        }
    }

    fn grad_log_density(&self, x: &[f64], grad: &mut [f64]) {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            grad[0] = 0.0;
            grad[1] = 0.0;
            return;
        }
        let (_, mut dr) = self.radial_log_density(r);
        if self.density == RingsDensity::Polar && r > JACOBIAN_FLOOR {
            dr -= 1.0 / r;
        }
        grad[0] = dr * x[0] / r;
        grad[1] = dr * x[1] / r;
    }

    fn second_moment(&self) -> f64 {
        let var = RING_SCALE * RING_SCALE;
        let rings = 1..=N_RINGS;
        match self.density {
            RingsDensity::Polar => rings.map(|i| ((i * i) as f64 + var) / N_RINGS as f64).sum(),
            // ring i carries mass proportional to E[r] = i and E[r^3] = i^3 + 3 i var
            RingsDensity::Cartesian => {
                let num: f64 = rings.clone().map(|i| (i * i * i) as f64 + 3.0 * i as f64 * var).sum();
                let den: f64 = rings.map(|i| i as f64).sum();
                num / den
            }
        }
    }

    fn compact_radius(&self) -> Option<f64> {
        Some(4.0 / 2f64.sqrt())
    }

    fn gaussian_tau(&self) -> Option<f64> {
        Some(RING_SCALE)
    }

    fn exact_sampler(&self) -> Option<&dyn ExactSampler> {
        Some(self)
    }
}

impl ExactSampler for Rings {
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let r = match self.density {
            RingsDensity::Polar => {
                let c = rng.random_range(1..=N_RINGS) as f64;
                let z: f64 = StandardNormal.sample(rng);
                c + RING_SCALE * z
            }
            RingsDensity::Cartesian => {
                // ring i w.p. i/10, then r ~ r N(i, s^2) by rejection
                let u: f64 = rng.random::<f64>() * 10.0;
                let c = if u < 1.0 {
                    1.0
                } else if u < 3.0 {
                    2.0
                } else if u < 6.0 {
                    3.0
                } else {
                    4.0
                };
                let cap = c + 8.0 * RING_SCALE;
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let r = c + RING_SCALE * z;
                    if r > 0.0 && rng.random::<f64>() * cap < r {
                        break r;
                    }
                }
            }
        };
        let theta = rng.random::<f64>() * 2.0 * PI;
        out[0] = r * theta.cos();
        out[1] = r * theta.sin();
    }
}
