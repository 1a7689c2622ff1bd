//! Maxwellians: density, exact sampling, the closed-form 2-Wasserstein
//! distance between two Maxwellians, and the optimal coupling sampler.

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::torus::norm_sq;
use rand_distr::{Distribution, Normal};

/// Parameters of the normalized Maxwellian M_{u,T}. T = 0 is the degenerate
/// Dirac case at u.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxwellianParams<const D: usize> {
    pub mean_velocity: [f64; D],
    pub temperature: f64,
}

impl<const D: usize> MaxwellianParams<D> {
    pub fn new(mean_velocity: [f64; D], temperature: f64) -> Result<Self> {
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidInput(format!(
                "temperature must be finite and >= 0, got {temperature}"
            )));
        }
        if mean_velocity.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite mean velocity".into()));
        }
        Ok(Self {
            mean_velocity,
            temperature,
        })
    }

    pub fn is_dirac(&self) -> bool {
        self.temperature == 0.0
    }

    /// Density (2πT)^{-d/2} exp(-|v-u|²/(2T)). Errors on the Dirac case.
    pub fn pdf(&self, v: &[f64; D]) -> Result<f64> {
        if self.is_dirac() {
            return Err(Error::DegenerateMaxwellian);
        }
        let t = self.temperature;
        let mut q = 0.0;
        for i in 0..D {
            let d = v[i] - self.mean_velocity[i];
            q += d * d;
        }
        Ok((2.0 * std::f64::consts::PI * t).powi(-(D as i32)).sqrt() * (-q / (2.0 * t)).exp())
    }

    /// Exact Gaussian draw (ziggurat per axis); returns u exactly when T = 0.
    pub fn sample(&self, rng: &mut SimRng) -> [f64; D] {
        if self.is_dirac() {
            return self.mean_velocity;
        }
        let normal = Normal::new(0.0, self.temperature.sqrt()).expect("valid std dev");
        let mut v = self.mean_velocity;
        for c in v.iter_mut() {
            *c += normal.sample(rng);
        }
        v
    }
}

/// Squared 2-Wasserstein distance between two Maxwellians:
/// |u1-u2|² + d (√T1 - √T2)².
pub fn w2_squared<const D: usize>(
    p1: &MaxwellianParams<D>,
    p2: &MaxwellianParams<D>,
) -> f64 {
    let mut du = [0.0; D];
    for i in 0..D {
        du[i] = p1.mean_velocity[i] - p2.mean_velocity[i];
    }
    let ds = p1.temperature.sqrt() - p2.temperature.sqrt();
    norm_sq(&du) + D as f64 * ds * ds
}

/// Draw (v, w) with marginals M_{u1,T1} and M_{u2,T2} whose expected squared
/// gap attains `w2_squared` (scalar dilation map w = u2 + √(T2/T1)(v - u1)).
///
/// Degenerate temperatures keep the marginals exact: a Dirac first marginal
/// pairs with an independent draw of the second (measure-valid, no longer the
/// optimal-cost map, which does not exist in that case).
pub fn coupled_sample<const D: usize>(
    p1: &MaxwellianParams<D>,
    p2: &MaxwellianParams<D>,
    rng: &mut SimRng,
) -> ([f64; D], [f64; D]) {
    if p1 == p2 {
        // identity coupling, exact: coinciding marginals must stay glued
        let v = p1.sample(rng);
        return (v, v);
    }
    if p1.is_dirac() {
        return (p1.mean_velocity, p2.sample(rng));
    }
    let v = p1.sample(rng);
    let scale = (p2.temperature / p1.temperature).sqrt();
    let mut w = [0.0; D];
    for i in 0..D {
        w[i] = p2.mean_velocity[i] + scale * (v[i] - p1.mean_velocity[i]);
    }
    (v, w)
}
