//! The coupled pair process (Z_N, Σ_N): shared exponential clock, shared
//! particle index, shared position displacement ξ, and optimally coupled
//! Maxwellian velocities between the empirical fields of Z_N and the solver
//! fields of g(t). Source of the I_N(t) estimator.

use crate::error::{Error, Result};
use crate::fields::{good_set_report, GoodSetReport, HydroEvaluator, ParticleConfig};
use crate::kernel::SmearingKernel;
use crate::maxwell::{coupled_sample, MaxwellianParams};
use crate::numerics::{mean_stderr, KahanSum};
use crate::particle::InitialLaw;
use crate::rng::{stream_rng, SimRng};
use crate::solver::FieldGrid;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

/// Linear-in-time, d-linear-in-space interpolation over a stored field
/// series (the solver's smeared fields).
pub struct FieldInterpolator<'a, const D: usize> {
    times: &'a [f64],
    grids: &'a [FieldGrid<D>],
}

impl<'a, const D: usize> FieldInterpolator<'a, D> {
    pub fn new(times: &'a [f64], grids: &'a [FieldGrid<D>]) -> Result<Self> {
        if times.len() != grids.len() || times.is_empty() {
            return Err(Error::InvalidInput(format!(
                "field series needs matching nonempty times/grids, got {} and {}",
                times.len(),
                grids.len()
            )));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "field series times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, grids })
    }

    /// (u_g^φ, T_g^φ) at time `t` and position `x`.
    pub fn at(&self, t: f64, x: &crate::torus::TorusVector<D>) -> Result<([f64; D], f64)> {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let slack = 1e-9 * (1.0 + t1.abs());
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::FieldTimeOutOfRange { t, t0, t1 });
        }
        if self.times.len() == 1 {
            let (u, temp) = self.grids[0].interpolate(x);
            return Ok((u, temp));
        }
        let tc = t.clamp(t0, t1);
        let hi = self
            .times
            .partition_point(|s| *s < tc)
            .clamp(1, self.times.len() - 1);
        let lo = hi - 1;
        let w = (tc - self.times[lo]) / (self.times[hi] - self.times[lo]);
        let (u_lo, t_lo) = self.grids[lo].interpolate(x);
        let (u_hi, t_hi) = self.grids[hi].interpolate(x);
        let mut u = [0.0; D];
        for a in 0..D {
            u[a] = (1.0 - w) * u_lo[a] + w * u_hi[a];
        }
        Ok((u, (1.0 - w) * t_lo + w * t_hi))
    }
}

/// Paired state (Z_N, Σ_N) with the shared clock time.
#[derive(Clone, Debug)]
pub struct CoupledConfig<const D: usize> {
    pub z: ParticleConfig<D>,
    pub sigma: ParticleConfig<D>,
    pub time: f64,
}

impl<const D: usize> CoupledConfig<D> {
    /// The diagonal coupling at t = 0: Σ_N starts as an exact copy of Z_N.
    pub fn diagonal(z: ParticleConfig<D>) -> Self {
        Self {
            sigma: z.clone(),
            z,
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Per-particle mean of |x_i - y_i|² + |v_i - w_i|² (torus metric for
    /// positions).
    pub fn mean_sq_discrepancy(&self) -> f64 {
        let mut acc = KahanSum::new();
        for i in 0..self.len() {
            let dx = self.z.positions[i].distance(&self.sigma.positions[i]);
            let mut dv = 0.0;
            for a in 0..D {
                let d = self.z.velocities[i][a] - self.sigma.velocities[i][a];
                dv += d * d;
            }
            acc.add(dx * dx + dv);
        }
        acc.value() / self.len() as f64
    }
}

/// One coupled jump of pair `i`: one ξ ~ φ moves both particles, and the
/// velocities are drawn from the W2-optimal joint representation of the
/// empirical Maxwellian at x_i + ξ and the solver Maxwellian at y_i + ξ.
pub fn coupled_jump<const D: usize>(
    cc: &mut CoupledConfig<D>,
    kernel: &SmearingKernel<D>,
    gfields: &FieldInterpolator<'_, D>,
    i: usize,
    rng: &mut SimRng,
) -> Result<()> {
    let xi = kernel.sample(rng);
    let x_target = cc.z.positions[i].translate(xi.coords());
    let y_target = cc.sigma.positions[i].translate(xi.coords());
    let emp = HydroEvaluator::new(&cc.z, kernel)
        .eval(&x_target)
        .expect("density at the jump target is >= phi(xi)/N > 0");
    let (u_g, t_g) = gfields.at(cc.time, &y_target)?;
    let p_emp = MaxwellianParams::<D> {
        mean_velocity: emp.velocity,
        temperature: emp.temperature,
    };
    let p_sol = MaxwellianParams::<D> {
        mean_velocity: u_g,
        temperature: t_g,
    };
    let (v, w) = coupled_sample(&p_emp, &p_sol, rng);
    cc.z.positions[i] = x_target;
    cc.z.velocities[i] = v;
    cc.sigma.positions[i] = y_target;
    cc.sigma.velocities[i] = w;
    Ok(())
}

/// Constants defining the good-set indicators along a coupled run.
#[derive(Clone, Copy, Debug)]
pub struct GoodSetParams {
    pub r: f64,
    pub horizon: f64,
    pub c2: f64,
    pub p: u32,
    pub m_cap: f64,
}

/// Observables of one replica at one snapshot time.
#[derive(Clone, Debug)]
pub struct CoupledSnapshot<const D: usize> {
    pub t: f64,
    /// Per-particle mean of |x-y|² + |v-w|².
    pub mean_sq_discrepancy: f64,
    pub z_second_moment: f64,
    pub sigma_second_moment: f64,
    pub sigma_mean_velocity: [f64; D],
    pub good: Option<GoodSetReport>,
}

pub(crate) fn second_moment<const D: usize>(cfg: &ParticleConfig<D>) -> f64 {
    let mut acc = KahanSum::new();
    for v in &cfg.velocities {
        acc.add(crate::torus::norm_sq(v));
    }
    acc.value() / cfg.len() as f64
}

fn mean_velocity<const D: usize>(cfg: &ParticleConfig<D>) -> [f64; D] {
    let mut acc = [KahanSum::new(); D];
    for v in &cfg.velocities {
        for a in 0..D {
            acc[a].add(v[a]);
        }
    }
    let mut out = [0.0; D];
    for a in 0..D {
        out[a] = acc[a].value() / cfg.len() as f64;
    }
    out
}

fn stream_pair<const D: usize>(cc: &mut CoupledConfig<D>, dt: f64) {
    if dt == 0.0 {
        return;
    }
    for sys in [&mut cc.z, &mut cc.sigma] {
        for (x, v) in sys.positions.iter_mut().zip(&sys.velocities) {
            let mut delta = [0.0; D];
            for a in 0..D {
                delta[a] = v[a] * dt;
            }
            *x = x.translate(&delta);
        }
    }
}

/// Event-driven evolution of the coupled pair on [0, t_end], recording the
/// requested snapshot times exactly.
pub fn simulate_coupled<const D: usize>(
    mut cc: CoupledConfig<D>,
    kernel: &SmearingKernel<D>,
    gfields: &FieldInterpolator<'_, D>,
    t_end: f64,
    snapshot_times: &[f64],
    good_set: Option<&GoodSetParams>,
    rng: &mut SimRng,
) -> Result<Vec<CoupledSnapshot<D>>> {
    if snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "snapshot times must be strictly increasing".into(),
        ));
    }
    let n = cc.len();
    let rate = n as f64;
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    let mut next_snap = 0usize;
    let record = |cc: &CoupledConfig<D>, snaps: &mut Vec<CoupledSnapshot<D>>| -> Result<()> {
        let good = match good_set {
            Some(p) => Some(good_set_report(
                &cc.z, &cc.sigma, kernel, p.r, p.horizon, p.c2, p.p, p.m_cap,
            )?),
            None => None,
        };
        snaps.push(CoupledSnapshot {
            t: cc.time,
            mean_sq_discrepancy: cc.mean_sq_discrepancy(),
            z_second_moment: second_moment(&cc.z),
            sigma_second_moment: second_moment(&cc.sigma),
            sigma_mean_velocity: mean_velocity(&cc.sigma),
            good,
        });
        Ok(())
    };
    loop {
        let exp: f64 = Exp1.sample(rng);
        let t_jump = cc.time + exp / rate;
        let horizon = t_jump.min(t_end);
        while next_snap < snapshot_times.len() && snapshot_times[next_snap] <= horizon {
            let ts = snapshot_times[next_snap];
            let dt = ts - cc.time;
            stream_pair(&mut cc, dt);
            cc.time = ts;
            record(&cc, &mut snapshots)?;
            next_snap += 1;
        }
        if t_jump > t_end {
            let dt = t_end - cc.time;
            stream_pair(&mut cc, dt);
            cc.time = t_end;
            return Ok(snapshots);
        }
        let dt = t_jump - cc.time;
        stream_pair(&mut cc, dt);
        cc.time = t_jump;
        let i = rng.random_range(0..n);
        coupled_jump(&mut cc, kernel, gfields, i, rng)?;
    }
}

/// Parameters for a batch of independent coupled replicas.
pub struct CoupledRunParams<'a, const D: usize> {
    pub law: &'a InitialLaw<D>,
    pub kernel: &'a SmearingKernel<D>,
    pub n_particles: usize,
    pub t_end: f64,
    pub snapshot_times: &'a [f64],
    pub replicas: usize,
    pub seed: u64,
    pub good_set: Option<GoodSetParams>,
}

/// Run independent replicas in parallel (stream index = replica index), each
/// starting from the diagonal coupling of a fresh f0-sample.
pub fn run_coupled_replicas<const D: usize>(
    params: &CoupledRunParams<'_, D>,
    gfields: &FieldInterpolator<'_, D>,
) -> Result<Vec<Vec<CoupledSnapshot<D>>>> {
    (0..params.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(params.seed, rep as u64);
            let z = params.law.sample(params.n_particles, &mut rng)?;
            let cc = CoupledConfig::diagonal(z);
            simulate_coupled(
                cc,
                params.kernel,
                gfields,
                params.t_end,
                params.snapshot_times,
                params.good_set.as_ref(),
                &mut rng,
            )
        })
        .collect()
}

/// Replica-aggregated coupling statistics at one snapshot time.
#[derive(Clone, Copy, Debug)]
pub struct CouplingStats {
    pub t: f64,
    pub in_mean: f64,
    pub in_stderr: f64,
    pub frac_ba: Option<f64>,
    pub frac_g1: Option<f64>,
    pub frac_gm: Option<f64>,
}

/// Aggregate per-replica snapshots into I_N(t) estimates: by exchangeability
/// the per-replica particle average is taken first, then mean and standard
/// error across replicas.
pub fn estimate_in<const D: usize>(
    replica_snapshots: &[Vec<CoupledSnapshot<D>>],
) -> Result<Vec<CouplingStats>> {
    if replica_snapshots.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 replicas, got {}",
            replica_snapshots.len()
        )));
    }
    let n_snap = replica_snapshots[0].len();
    if replica_snapshots.iter().any(|r| r.len() != n_snap) {
        return Err(Error::InvalidInput(
            "replicas recorded different snapshot counts".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_snap);
    for s in 0..n_snap {
        let t = replica_snapshots[0][s].t;
        let values: Vec<f64> = replica_snapshots
            .iter()
            .map(|r| r[s].mean_sq_discrepancy)
            .collect();
        let (in_mean, in_stderr) = mean_stderr(&values);
        let frac = |get: fn(&GoodSetReport) -> bool| -> Option<f64> {
            let mut count = 0usize;
            for r in replica_snapshots {
                count += get(r[s].good.as_ref()?) as usize;
            }
            Some(count as f64 / replica_snapshots.len() as f64)
        };
        out.push(CouplingStats {
            t,
            in_mean,
            in_stderr,
            frac_ba: frac(|g| g.in_ba),
            frac_g1: frac(|g| g.in_g1),
            frac_gm: frac(|g| g.in_gmp),
        });
    }
    Ok(out)
}
