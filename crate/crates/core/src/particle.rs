//! Event-driven simulation of the N-particle thermalization process: free
//! streaming plus rate-one-per-particle jumps resampled from the smeared
//! empirical Maxwellian.

use crate::error::{Error, Result};
use crate::fields::{HydroEvaluator, ParticleConfig};
use crate::kernel::SmearingKernel;
use crate::maxwell::MaxwellianParams;
use crate::rng::SimRng;
use crate::torus::TorusVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use std::hash::{Hash, Hasher};

/// Chaotic product initial law f0(x,v) = (1 + a cos(2π x·e1)) M_{u0,T0}(v).
#[derive(Clone, Copy, Debug)]
pub struct InitialLaw<const D: usize> {
    /// Spatial modulation amplitude a ∈ [0, 1/2].
    pub amplitude: f64,
    /// Base temperature T0 > 0.
    pub base_temperature: f64,
    /// Base velocity u0.
    pub base_velocity: [f64; D],
}

impl<const D: usize> InitialLaw<D> {
    pub fn new(amplitude: f64, base_temperature: f64, base_velocity: [f64; D]) -> Result<Self> {
        if !(0.0..=0.5).contains(&amplitude) {
            return Err(Error::InvalidInput(format!(
                "modulation amplitude must lie in [0, 1/2], got {amplitude}"
            )));
        }
        if !(base_temperature > 0.0) || !base_temperature.is_finite() {
            return Err(Error::InvalidInput(format!(
                "base temperature must be positive, got {base_temperature}"
            )));
        }
        Ok(Self {
            amplitude,
            base_temperature,
            base_velocity,
        })
    }

    /// Pointwise Gaussian dominator: f0 ≤ C1 e^{-α |v|²}.
    pub fn c1(&self) -> f64 {
        use std::f64::consts::PI;
        (1.0 + self.amplitude)
            * (2.0 * PI * self.base_temperature).powi(-(D as i32)).sqrt()
            * (crate::torus::norm_sq(&self.base_velocity) / (2.0 * self.base_temperature)).exp()
    }

    /// Mass of the lower envelope a(v) = (1-a) M_{u0,T0}: C2 = 1 - a.
    pub fn c2(&self) -> f64 {
        1.0 - self.amplitude
    }

    /// Decay rate in the Gaussian dominator (|v-u0|² ≥ |v|²/2 - |u0|²).
    pub fn alpha(&self) -> f64 {
        1.0 / (4.0 * self.base_temperature)
    }

    /// Spatial density 1 + a cos(2π x·e1).
    pub fn spatial_density(&self, x1: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * x1).cos()
    }

    /// Full density at (x, v).
    pub fn density(&self, x: &TorusVector<D>, v: &[f64; D]) -> f64 {
        let m = MaxwellianParams::<D> {
            mean_velocity: self.base_velocity,
            temperature: self.base_temperature,
        };
        self.spatial_density(x.coords()[0]) * m.pdf(v).expect("T0 > 0")
    }

    /// CDF of the first position coordinate on [-1/2, 1/2).
    pub fn position_cdf(&self, s: f64) -> f64 {
        use std::f64::consts::PI;
        s + 0.5 + self.amplitude * (2.0 * PI * s).sin() / (2.0 * PI)
    }

    /// Inverse of `position_cdf` by safeguarded Newton iteration; the
    /// derivative is bounded below by 1 - a ≥ 1/2.
    pub fn position_quantile(&self, u: f64) -> f64 {
        use std::f64::consts::PI;
        debug_assert!((0.0..1.0).contains(&u));
        let mut s = u - 0.5;
        for _ in 0..64 {
            let f = self.position_cdf(s) - u;
            if f.abs() < 1e-15 {
                break;
            }
            let fp = 1.0 + self.amplitude * (2.0 * PI * s).cos();
            s = (s - f / fp).clamp(-0.5, 0.5);
        }
        s.clamp(-0.5, 0.4999999999999999)
    }

    /// N i.i.d. draws from f0.
    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<ParticleConfig<D>> {
        if n == 0 {
            return Err(Error::InvalidInput("need N >= 1 particles".into()));
        }
        let normal = Normal::new(0.0, self.base_temperature.sqrt()).expect("T0 > 0");
        let mut positions = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = [0.0; D];
            x[0] = self.position_quantile(rng.random::<f64>());
            for c in x.iter_mut().skip(1) {
                *c = rng.random_range(-0.5..0.5);
            }
            positions.push(TorusVector::wrap_finite(x));
            let mut v = self.base_velocity;
            for c in v.iter_mut() {
                *c += normal.sample(rng);
            }
            velocities.push(v);
        }
        ParticleConfig::new(positions, velocities)
    }
}

/// Stream all particles ballistically for `dt` (positions wrap; velocities
/// unchanged).
pub fn free_stream<const D: usize>(cfg: &ParticleConfig<D>, dt: f64) -> ParticleConfig<D> {
    assert!(dt >= 0.0, "free_stream needs dt >= 0");
    let mut out = cfg.clone();
    stream_in_place(&mut out, dt);
    out
}

fn stream_in_place<const D: usize>(cfg: &mut ParticleConfig<D>, dt: f64) {
    if dt == 0.0 {
        return;
    }
    for (x, v) in cfg.positions.iter_mut().zip(&cfg.velocities) {
        let mut delta = [0.0; D];
        for a in 0..D {
            delta[a] = v[a] * dt;
        }
        *x = x.translate(&delta);
    }
}

/// Per-snapshot observables of a trajectory.
#[derive(Clone, Debug)]
pub struct Snapshot<const D: usize> {
    pub t: f64,
    pub config_hash: u64,
    pub mean_velocity: [f64; D],
    /// (1/N) Σ |v_i|².
    pub velocity_second_moment: f64,
    /// Cumulative jump count up to this snapshot.
    pub jumps_so_far: u64,
    pub config: Option<ParticleConfig<D>>,
}

/// Records observables at prescribed times; the simulation streams exactly
/// to each requested time before continuing.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryRecorder<const D: usize> {
    times: Vec<f64>,
    keep_configs: bool,
    pub snapshots: Vec<Snapshot<D>>,
    pub total_jumps: u64,
}

impl<const D: usize> TrajectoryRecorder<D> {
    pub fn new(times: Vec<f64>, keep_configs: bool) -> Result<Self> {
        if times.windows(2).any(|w| w[0] >= w[1]) || times.first().is_some_and(|t| *t < 0.0) {
            return Err(Error::InvalidInput(
                "snapshot times must be nonnegative and strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            keep_configs,
            snapshots: Vec::new(),
            total_jumps: 0,
        })
    }

    pub fn none() -> Self {
        Self::default()
    }

    fn next_time(&self) -> Option<f64> {
        self.times.get(self.snapshots.len()).copied()
    }

    fn record(&mut self, t: f64, cfg: &ParticleConfig<D>) {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for x in &cfg.positions {
            for c in x.coords() {
                c.to_bits().hash(&mut hasher);
            }
        }
        for v in &cfg.velocities {
            for c in v {
                c.to_bits().hash(&mut hasher);
            }
        }
        let n = cfg.len() as f64;
        let mut mean = [0.0; D];
        let mut second = 0.0;
        for v in &cfg.velocities {
            for a in 0..D {
                mean[a] += v[a];
            }
            second += crate::torus::norm_sq(v);
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        self.snapshots.push(Snapshot {
            t,
            config_hash: hasher.finish(),
            mean_velocity: mean,
            velocity_second_moment: second / n,
            jumps_so_far: self.total_jumps,
            config: self.keep_configs.then(|| cfg.clone()),
        });
    }
}

/// Exact event-driven run of the jump process on [0, t_end].
///
/// Inter-jump times are Exponential(N); at a jump a uniform particle i draws
/// ξ ~ φ, the empirical fields are evaluated at x_i + ξ on the streamed
/// configuration (particle i included), and (x_i, v_i) is replaced by the
/// target position and a draw from the empirical Maxwellian (Dirac at u when
/// T = 0).
pub fn simulate<const D: usize>(
    mut cfg: ParticleConfig<D>,
    kernel: &SmearingKernel<D>,
    t_end: f64,
    rng: &mut SimRng,
    recorder: &mut TrajectoryRecorder<D>,
) -> ParticleConfig<D> {
    assert!(t_end >= 0.0, "simulate needs t_end >= 0");
    let n = cfg.len();
    let rate = n as f64;
    let mut t = 0.0;
    loop {
        let exp: f64 = Exp1.sample(rng);
        let t_jump = t + exp / rate;
        let horizon = t_jump.min(t_end);
        while let Some(ts) = recorder.next_time() {
            if ts > horizon || ts > t_end {
                break;
            }
            stream_in_place(&mut cfg, ts - t);
            t = ts;
            recorder.record(t, &cfg);
        }
        if t_jump > t_end {
            stream_in_place(&mut cfg, t_end - t);
            return cfg;
        }
        stream_in_place(&mut cfg, t_jump - t);
        t = t_jump;
        let i = rng.random_range(0..n);
        let xi = kernel.sample(rng);
        let target = cfg.positions[i].translate(xi.coords());
        let triple = HydroEvaluator::new(&cfg, kernel)
            .eval(&target)
            .expect("density at the jump target is >= phi(xi)/N > 0");
        let params = MaxwellianParams::<D> {
            mean_velocity: triple.velocity,
            temperature: triple.temperature,
        };
        let v = params.sample(rng);
        cfg.positions[i] = target;
        cfg.velocities[i] = v;
        recorder.total_jumps += 1;
    }
}
