//! Deterministic grid solver for the regularized and true BGK equations in
//! mild form: exact spectral transport plus a first-order relaxation update
//! whose discrete Maxwellian matches the grid moments exactly.
//!
//! # Checkpoint format
//!
//! Full-state checkpoints are flat binary, little endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..8  | magic `b"BGKSTATE"` |
//! | 8..12 | format version, u32 (= 1) |
//! | 12..16| dimension d, u32 |
//! | 16..24| nx, u64 |
//! | 24..32| nv, u64 |
//! | 32..40| vmax, f64 |
//! | 40..48| time, f64 |
//! | 48..  | nx^d · nv^d values, f64, spatial index major (axis 0 slowest), velocity index minor |

mod fft;

pub use fft::NdFft;

use crate::assignment::PhasePoint;
use crate::error::{Error, Result};
use crate::kernel::SmearingKernel;
use crate::maxwell::MaxwellianParams;
use crate::numerics::KahanSum;
use crate::particle::InitialLaw;
use crate::rng::SimRng;
use crate::torus::TorusVector;
use fft::signed_freq;
use rand::Rng;
use rustfft::num_complex::Complex;

/// Density floor for moment division; reaching it signals a solver bug since
/// the continuum density is bounded below.
const DENSITY_FLOOR: f64 = 1e-14;

/// Transported values in (-NEG_CLIP_WARN, 0) are clipped silently, in
/// [-NEG_CLIP_ERR, -NEG_CLIP_WARN] clipped and counted as warnings, below
/// -NEG_CLIP_ERR the step aborts as unstable.
const NEG_CLIP_WARN: f64 = 1e-12;
const NEG_CLIP_ERR: f64 = 1e-6;

/// Discretization of the torus × truncated velocity box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseGrid<const D: usize> {
    pub nx: usize,
    pub nv: usize,
    pub vmax: f64,
}

impl<const D: usize> PhaseGrid<D> {
    pub fn new(nx: usize, nv: usize, vmax: f64) -> Result<Self> {
        if nx < 2 || nx % 2 != 0 || nv < 2 || nv % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "nx and nv must be even and >= 2, got nx = {nx}, nv = {nv}"
            )));
        }
        if !(vmax > 0.0) || !vmax.is_finite() {
            return Err(Error::InvalidInput(format!("vmax must be > 0, got {vmax}")));
        }
        Ok(Self { nx, nv, vmax })
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.vmax / self.nv as f64
    }

    pub fn n_space(&self) -> usize {
        self.nx.pow(D as u32)
    }

    pub fn n_vel(&self) -> usize {
        self.nv.pow(D as u32)
    }

    pub fn cell_volume_x(&self) -> f64 {
        self.dx().powi(D as i32)
    }

    pub fn cell_volume_v(&self) -> f64 {
        self.dv().powi(D as i32)
    }

    /// Velocity node j on one axis (midpoint grid, symmetric about 0).
    pub fn v_node(&self, j: usize) -> f64 {
        -self.vmax + (j as f64 + 0.5) * self.dv()
    }

    /// Spatial node i on one axis.
    pub fn x_node(&self, i: usize) -> f64 {
        -0.5 + i as f64 * self.dx()
    }

    pub fn decompose_space(&self, mut flat: usize) -> [usize; D] {
        let mut idx = [0usize; D];
        for a in (0..D).rev() {
            idx[a] = flat % self.nx;
            flat /= self.nx;
        }
        idx
    }

    pub fn decompose_vel(&self, mut flat: usize) -> [usize; D] {
        let mut idx = [0usize; D];
        for a in (0..D).rev() {
            idx[a] = flat % self.nv;
            flat /= self.nv;
        }
        idx
    }

    pub fn space_point(&self, flat: usize) -> TorusVector<D> {
        let idx = self.decompose_space(flat);
        let mut c = [0.0; D];
        for a in 0..D {
            c[a] = self.x_node(idx[a]);
        }
        TorusVector(c)
    }

    pub fn vel_point(&self, flat: usize) -> [f64; D] {
        let idx = self.decompose_vel(flat);
        let mut v = [0.0; D];
        for a in 0..D {
            v[a] = self.v_node(idx[a]);
        }
        v
    }

    /// vmax covering the initial data: |u0| plus eight thermal widths.
    pub fn suggested_vmax(law: &InitialLaw<D>) -> f64 {
        let umax = law
            .base_velocity
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        umax + 8.0 * law.base_temperature.sqrt()
    }
}

/// Grid representation of g(x, v, t); values are indexed spatial-major.
#[derive(Clone, Debug)]
pub struct KineticState<const D: usize> {
    pub grid: PhaseGrid<D>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl<const D: usize> KineticState<D> {
    pub fn from_fn(grid: PhaseGrid<D>, f: impl Fn(&TorusVector<D>, &[f64; D]) -> f64) -> Self {
        let n_space = grid.n_space();
        let n_vel = grid.n_vel();
        let mut values = vec![0.0; n_space * n_vel];
        for xs in 0..n_space {
            let x = grid.space_point(xs);
            for vs in 0..n_vel {
                let v = grid.vel_point(vs);
                values[xs * n_vel + vs] = f(&x, &v);
            }
        }
        Self {
            grid,
            values,
            time: 0.0,
        }
    }

    pub fn from_law(grid: PhaseGrid<D>, law: &InitialLaw<D>) -> Self {
        Self::from_fn(grid, |x, v| law.density(x, v))
    }

    #[inline]
    pub fn at(&self, x_flat: usize, v_flat: usize) -> f64 {
        self.values[x_flat * self.grid.n_vel() + v_flat]
    }

    /// Total discrete mass ∫∫ g.
    pub fn total_mass(&self) -> f64 {
        let mut acc = KahanSum::new();
        for v in &self.values {
            acc.add(*v);
        }
        acc.value() * self.grid.cell_volume_x() * self.grid.cell_volume_v()
    }

    /// Total discrete momentum ∫∫ g v.
    pub fn total_momentum(&self) -> [f64; D] {
        let n_vel = self.grid.n_vel();
        let mut acc = [KahanSum::new(); D];
        for (idx, g) in self.values.iter().enumerate() {
            let v = self.grid.vel_point(idx % n_vel);
            for a in 0..D {
                acc[a].add(g * v[a]);
            }
        }
        let scale = self.grid.cell_volume_x() * self.grid.cell_volume_v();
        let mut out = [0.0; D];
        for a in 0..D {
            out[a] = acc[a].value() * scale;
        }
        out
    }

    /// Total discrete energy ∫∫ g |v|².
    pub fn total_energy(&self) -> f64 {
        let n_vel = self.grid.n_vel();
        let mut acc = KahanSum::new();
        for (idx, g) in self.values.iter().enumerate() {
            let v = self.grid.vel_point(idx % n_vel);
            acc.add(g * crate::torus::norm_sq(&v));
        }
        acc.value() * self.grid.cell_volume_x() * self.grid.cell_volume_v()
    }

    /// Total discrete fourth moment ∫∫ g |v|⁴.
    pub fn total_fourth_moment(&self) -> f64 {
        let n_vel = self.grid.n_vel();
        let mut acc = KahanSum::new();
        for (idx, g) in self.values.iter().enumerate() {
            let v = self.grid.vel_point(idx % n_vel);
            let sq = crate::torus::norm_sq(&v);
            acc.add(g * sq * sq);
        }
        acc.value() * self.grid.cell_volume_x() * self.grid.cell_volume_v()
    }

    /// Sup-norm moment 𝓝_q(g) = sup g (1 + |v|^q).
    pub fn sup_moment(&self, q: u32) -> f64 {
        let n_vel = self.grid.n_vel();
        let mut sup = 0.0f64;
        for (idx, g) in self.values.iter().enumerate() {
            let v = self.grid.vel_point(idx % n_vel);
            let speed = crate::torus::norm_sq(&v).sqrt();
            sup = sup.max(g * (1.0 + speed.powi(q as i32)));
        }
        sup
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"BGKSTATE")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(D as u32).to_le_bytes())?;
        w.write_all(&(self.grid.nx as u64).to_le_bytes())?;
        w.write_all(&(self.grid.nv as u64).to_le_bytes())?;
        w.write_all(&self.grid.vmax.to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: std::io::Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"BGKSTATE" {
            return Err(Error::InvalidInput("bad checkpoint magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::InvalidInput("unsupported checkpoint version".into()));
        }
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) as usize != D {
            return Err(Error::InvalidInput(format!(
                "checkpoint dimension {} does not match {D}",
                u32::from_le_bytes(b4)
            )));
        }
        r.read_exact(&mut b8)?;
        let nx = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let nv = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let vmax = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let time = f64::from_le_bytes(b8);
        let grid = PhaseGrid::new(nx, nv, vmax)?;
        let mut values = vec![0.0f64; grid.n_space() * grid.n_vel()];
        for v in values.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok(Self { grid, values, time })
    }

    /// i.i.d. draws from the normalized discrete mass function with uniform
    /// jitter inside each phase cell.
    pub fn sample_phase_points(&self, n: usize, rng: &mut SimRng) -> Vec<PhasePoint<D>> {
        let n_vel = self.grid.n_vel();
        let mut cum = Vec::with_capacity(self.values.len());
        let mut acc = 0.0f64;
        for v in &self.values {
            acc += v.max(0.0);
            cum.push(acc);
        }
        let total = acc;
        assert!(total > 0.0, "state has no positive mass");
        let dx = self.grid.dx();
        let dv = self.grid.dv();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(0.0..total);
                let cell = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
                let xs = cell / n_vel;
                let vs = cell % n_vel;
                let xi = self.grid.decompose_space(xs);
                let vi = self.grid.decompose_vel(vs);
                let mut x = [0.0; D];
                let mut v = [0.0; D];
                for a in 0..D {
                    x[a] = self.grid.x_node(xi[a]) + rng.random_range(-0.5..0.5) * dx;
                    v[a] = self.grid.v_node(vi[a]) + rng.random_range(-0.5..0.5) * dv;
                }
                PhasePoint {
                    position: TorusVector::wrap_finite(x),
                    velocity: v,
                }
            })
            .collect()
    }
}

/// Which smearing the moment fields carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldVariant {
    Plain,
    Smeared,
}

/// Hydrodynamical fields on the spatial grid.
#[derive(Clone, Debug)]
pub struct FieldGrid<const D: usize> {
    pub nx: usize,
    pub variant: FieldVariant,
    pub rho: Vec<f64>,
    pub velocity: Vec<[f64; D]>,
    pub temperature: Vec<f64>,
}

impl<const D: usize> FieldGrid<D> {
    /// Periodic d-linear interpolation of (u, T) at an arbitrary torus point.
    pub fn interpolate(&self, x: &TorusVector<D>) -> ([f64; D], f64) {
        let m = self.nx;
        let mut base = [0usize; D];
        let mut frac = [0.0f64; D];
        for a in 0..D {
            let s = (x.coords()[a] + 0.5) * m as f64;
            let i = s.floor();
            base[a] = (i as i64).rem_euclid(m as i64) as usize;
            frac[a] = s - i;
        }
        let mut u = [0.0; D];
        let mut t = 0.0;
        for corner in 0..(1usize << D) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..D {
                let hi = (corner >> a) & 1 == 1;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
                let idx = if hi { (base[a] + 1) % m } else { base[a] };
                flat = flat * m + idx;
            }
            for a in 0..D {
                u[a] += w * self.velocity[flat][a];
            }
            t += w * self.temperature[flat];
        }
        (u, t)
    }
}

/// Raw velocity moments ∫ g {1, v, |v|²} dv per spatial node.
pub struct RawMoments<const D: usize> {
    pub m0: Vec<f64>,
    pub m1: Vec<[f64; D]>,
    pub m2: Vec<f64>,
}

pub fn raw_moments<const D: usize>(state: &KineticState<D>) -> RawMoments<D> {
    let grid = &state.grid;
    let n_space = grid.n_space();
    let n_vel = grid.n_vel();
    let vol = grid.cell_volume_v();
    let vels: Vec<[f64; D]> = (0..n_vel).map(|j| grid.vel_point(j)).collect();
    let mut m0 = vec![0.0; n_space];
    let mut m1 = vec![[0.0; D]; n_space];
    let mut m2 = vec![0.0; n_space];
    for xs in 0..n_space {
        let row = &state.values[xs * n_vel..(xs + 1) * n_vel];
        let mut a0 = KahanSum::new();
        let mut a1 = [KahanSum::new(); D];
        let mut a2 = KahanSum::new();
        for (g, v) in row.iter().zip(&vels) {
            a0.add(*g);
            for a in 0..D {
                a1[a].add(g * v[a]);
            }
            a2.add(g * crate::torus::norm_sq(v));
        }
        m0[xs] = a0.value() * vol;
        for a in 0..D {
            m1[xs][a] = a1[a].value() * vol;
        }
        m2[xs] = a2.value() * vol;
    }
    RawMoments { m0, m1, m2 }
}

/// Extract (ϱ, u, T) from raw moments, with the division floor.
pub fn fields_from_raw<const D: usize>(
    raw: &RawMoments<D>,
    nx: usize,
    variant: FieldVariant,
) -> Result<FieldGrid<D>> {
    let n = raw.m0.len();
    let mut rho = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    let mut temperature = Vec::with_capacity(n);
    for xs in 0..n {
        let r = raw.m0[xs];
        if r < DENSITY_FLOOR {
            return Err(Error::DegenerateDensity {
                node: decompose(xs, nx, D),
                value: r,
            });
        }
        let mut u = [0.0; D];
        for a in 0..D {
            u[a] = raw.m1[xs][a] / r;
        }
        let t = (raw.m2[xs] / r - crate::torus::norm_sq(&u)) / D as f64;
        if t <= 0.0 {
            return Err(Error::DegenerateDensity {
                node: decompose(xs, nx, D),
                value: t,
            });
        }
        rho.push(r);
        velocity.push(u);
        temperature.push(t);
    }
    Ok(FieldGrid {
        nx,
        variant,
        rho,
        velocity,
        temperature,
    })
}

fn decompose(mut flat: usize, nx: usize, d: usize) -> Vec<usize> {
    let mut idx = vec![0usize; d];
    for a in (0..d).rev() {
        idx[a] = flat % nx;
        flat /= nx;
    }
    idx
}

/// Plain hydrodynamical moments of the state.
pub fn moments<const D: usize>(state: &KineticState<D>) -> Result<FieldGrid<D>> {
    fields_from_raw(&raw_moments(state), state.grid.nx, FieldVariant::Plain)
}

/// The smearing kernel sampled on the spatial grid, normalized to exact
/// discrete unit mass, with its DFT cached for convolutions.
pub struct SpectralKernel<const D: usize> {
    nx: usize,
    hat: Vec<Complex<f64>>,
    fft: NdFft,
}

impl<const D: usize> SpectralKernel<D> {
    pub fn new(kernel: &SmearingKernel<D>, nx: usize) -> Result<Self> {
        if kernel.epsilon() < 4.0 / nx as f64 {
            return Err(Error::InvalidInput(format!(
                "kernel epsilon {} under-resolved by the grid (needs >= 4 dx = {})",
                kernel.epsilon(),
                4.0 / nx as f64
            )));
        }
        let n_space = nx.pow(D as u32);
        let dx = 1.0 / nx as f64;
        let mut samples = vec![0.0f64; n_space];
        for (flat, s) in samples.iter_mut().enumerate() {
            let idx = decompose(flat, nx, D);
            let mut c = [0.0; D];
            for a in 0..D {
                c[a] = crate::torus::wrap_coord(idx[a] as f64 * dx);
            }
            *s = kernel.eval(&TorusVector(c));
        }
        let mut total = KahanSum::new();
        for s in &samples {
            total.add(*s);
        }
        let norm = total.value() * dx.powi(D as i32);
        let fft = NdFft::new(nx);
        let mut hat: Vec<Complex<f64>> = samples
            .iter()
            .map(|s| Complex::new(s / norm, 0.0))
            .collect();
        fft.process(&mut hat, D, false);
        Ok(Self { nx, hat, fft })
    }

    /// Periodic convolution φ * f on the spatial grid.
    pub fn convolve(&self, f: &[f64]) -> Vec<f64> {
        let n_space = self.hat.len();
        assert_eq!(f.len(), n_space);
        let dx = 1.0 / self.nx as f64;
        let mut buf: Vec<Complex<f64>> = f.iter().map(|x| Complex::new(*x, 0.0)).collect();
        self.fft.process(&mut buf, D, false);
        for (b, h) in buf.iter_mut().zip(&self.hat) {
            *b *= h;
        }
        self.fft.process(&mut buf, D, true);
        let scale = dx.powi(D as i32) / n_space as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Convolve the raw moment integrands with φ.
pub fn smear_raw<const D: usize>(raw: &RawMoments<D>, kernel: &SpectralKernel<D>) -> RawMoments<D> {
    let m0 = kernel.convolve(&raw.m0);
    let m2 = kernel.convolve(&raw.m2);
    let mut m1 = vec![[0.0; D]; raw.m1.len()];
    for a in 0..D {
        let comp: Vec<f64> = raw.m1.iter().map(|v| v[a]).collect();
        let conv = kernel.convolve(&comp);
        for (slot, val) in m1.iter_mut().zip(conv) {
            slot[a] = val;
        }
    }
    RawMoments { m0, m1, m2 }
}

/// φ-smeared hydrodynamical fields of the state.
pub fn smeared_moments<const D: usize>(
    state: &KineticState<D>,
    kernel: &SpectralKernel<D>,
) -> Result<FieldGrid<D>> {
    let raw = smear_raw(&raw_moments(state), kernel);
    fields_from_raw(&raw, state.grid.nx, FieldVariant::Smeared)
}

/// Separable discrete Gaussian whose *discrete* moments on the velocity grid
/// equal the requested (mass 1, u, T) exactly (to the matching tolerance).
struct DiscreteMaxwellian<const D: usize> {
    scale: f64,
    axis_weights: [Vec<f64>; D],
}

const MATCH_TOL: f64 = 5e-14;
const MATCH_MAX_ITER: usize = 100;

fn match_discrete_maxwellian<const D: usize>(
    grid: &PhaseGrid<D>,
    target_u: &[f64; D],
    target_t: f64,
) -> Result<DiscreteMaxwellian<D>> {
    if !(target_t > 0.0) {
        return Err(Error::NotConverged(format!(
            "cannot match a Maxwellian with T = {target_t}"
        )));
    }
    let nv = grid.nv;
    let nodes: Vec<f64> = (0..nv).map(|j| grid.v_node(j)).collect();
    let mut u_hat = *target_u;
    let mut t_hat = target_t;
    let u_scale = 1.0f64.max(target_u.iter().fold(0.0f64, |m, c| m.max(c.abs())));
    let t_scale = 1.0f64.max(target_t);
    let mut s0 = [0.0f64; D];
    for iter in 0..MATCH_MAX_ITER {
        let mut means = [0.0f64; D];
        let mut var_sum = 0.0f64;
        for a in 0..D {
            let (mut w0, mut w1, mut w2) = (0.0f64, 0.0f64, 0.0f64);
            for &v in &nodes {
                let e = (-(v - u_hat[a]).powi(2) / (2.0 * t_hat)).exp();
                w0 += e;
                w1 += e * v;
                w2 += e * v * v;
            }
            s0[a] = w0;
            means[a] = w1 / w0;
            var_sum += w2 / w0 - means[a] * means[a];
        }
        let t_disc = var_sum / D as f64;
        let mut err = (t_disc - target_t).abs() / t_scale;
        for a in 0..D {
            err = err.max((means[a] - target_u[a]).abs() / u_scale);
        }
        if err < MATCH_TOL {
            let mut axis_weights: [Vec<f64>; D] = std::array::from_fn(|_| Vec::new());
            let mut denom = grid.cell_volume_v();
            for a in 0..D {
                axis_weights[a] = nodes
                    .iter()
                    .map(|&v| (-(v - u_hat[a]).powi(2) / (2.0 * t_hat)).exp())
                    .collect();
                denom *= s0[a];
            }
            return Ok(DiscreteMaxwellian {
                scale: 1.0 / denom,
                axis_weights,
            });
        }
        for a in 0..D {
            u_hat[a] += target_u[a] - means[a];
        }
        t_hat += target_t - t_disc;
        if !(t_hat > 0.0) {
            return Err(Error::NotConverged(format!(
                "temperature iterate became nonpositive at iteration {iter} \
                 (target T = {target_t}, grid vmax = {}, nv = {nv})",
                grid.vmax
            )));
        }
    }
    Err(Error::NotConverged(format!(
        "moment matching exceeded {MATCH_MAX_ITER} iterations \
         (target T = {target_t}, |u| = {:.3})",
        target_u.iter().map(|c| c * c).sum::<f64>().sqrt()
    )))
}

/// Outcome of one transport sub-step.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepReport {
    /// Nodes clipped silently (tiny interpolation undershoot).
    pub clipped: usize,
    /// Nodes clipped in the warning band [-1e-6, -1e-12].
    pub warned: usize,
    /// Most negative value seen before clipping.
    pub min_before_clip: f64,
}

impl StepReport {
    fn merge(&mut self, other: &StepReport) {
        self.clipped += other.clipped;
        self.warned += other.warned;
        self.min_before_clip = self.min_before_clip.min(other.min_before_clip);
    }
}

/// Exact semi-Lagrangian transport g(x, v) ← g(x - v dt, v) by spectral
/// phase shift, with negativity clipping.
pub fn transport<const D: usize>(
    state: &mut KineticState<D>,
    fft: &NdFft,
    dt: f64,
) -> Result<StepReport> {
    use std::f64::consts::PI;
    let grid = state.grid;
    let nx = grid.nx;
    let n_space = grid.n_space();
    let n_vel = grid.n_vel();
    assert_eq!(fft.len(), nx);
    // per-axis phase tables: phase[a][node j][mode k]
    let mut phase = vec![vec![Complex::default(); nx * grid.nv]; D];
    for (a, tab) in phase.iter_mut().enumerate() {
        let _ = a;
        for j in 0..grid.nv {
            let v = grid.v_node(j);
            for k in 0..nx {
                let freq = signed_freq(k, nx) as f64;
                let arg = -2.0 * PI * freq * v * dt;
                tab[j * nx + k] = Complex::new(arg.cos(), arg.sin());
            }
        }
    }
    let mut report = StepReport::default();
    let mut slab = vec![Complex::default(); n_space];
    for vs in 0..n_vel {
        let vidx = grid.decompose_vel(vs);
        for xs in 0..n_space {
            slab[xs] = Complex::new(state.values[xs * n_vel + vs], 0.0);
        }
        fft.process(&mut slab, D, false);
        for (flat, c) in slab.iter_mut().enumerate() {
            let kidx = decompose(flat, nx, D);
            let mut p = Complex::new(1.0, 0.0);
            for a in 0..D {
                p *= phase[a][vidx[a] * nx + kidx[a]];
            }
            *c *= p;
        }
        fft.process(&mut slab, D, true);
        let inv = 1.0 / n_space as f64;
        for xs in 0..n_space {
            let mut val = slab[xs].re * inv;
            if val < 0.0 {
                report.min_before_clip = report.min_before_clip.min(val);
                if val < -NEG_CLIP_ERR {
                    return Err(Error::Instability(format!(
                        "transport produced {val:.3e} at t = {}",
                        state.time
                    )));
                }
                if val <= -NEG_CLIP_WARN {
                    report.warned += 1;
                } else {
                    report.clipped += 1;
                }
                val = 0.0;
            }
            state.values[xs * n_vel + vs] = val;
        }
    }
    Ok(report)
}

/// First-order relaxation update g ← g + dt (ϱ M̂ - g) with fields frozen at
/// the sub-step start; M̂ is the moment-matched discrete Maxwellian of the
/// supplied (smeared or plain) fields.
pub fn relax<const D: usize>(
    state: &mut KineticState<D>,
    fields: &FieldGrid<D>,
    dt: f64,
) -> Result<()> {
    let grid = state.grid;
    let n_space = grid.n_space();
    let n_vel = grid.n_vel();
    let keep = 1.0 - dt;
    for xs in 0..n_space {
        let maxw = match_discrete_maxwellian(&grid, &fields.velocity[xs], fields.temperature[xs])?;
        let gain = dt * fields.rho[xs] * maxw.scale;
        let row = &mut state.values[xs * n_vel..(xs + 1) * n_vel];
        let mut vidx = [0usize; D];
        for g in row.iter_mut() {
            let mut m = 1.0;
            for a in 0..D {
                m *= maxw.axis_weights[a][vidx[a]];
            }
            *g = keep * *g + gain * m;
            let mut axis = D;
            while axis > 0 {
                axis -= 1;
                vidx[axis] += 1;
                if vidx[axis] < grid.nv {
                    break;
                }
                vidx[axis] = 0;
            }
        }
    }
    state.time += dt;
    Ok(())
}

/// One Lie step: transport, then relaxation against the fields of the
/// transported state (smeared when a kernel is supplied, plain otherwise).
pub fn step<const D: usize>(
    state: &mut KineticState<D>,
    kernel: Option<&SpectralKernel<D>>,
    fft: &NdFft,
    dt: f64,
) -> Result<StepReport> {
    if !(dt > 0.0 && dt < 1.0) {
        return Err(Error::InvalidInput(format!(
            "step needs 0 < dt < 1, got {dt}"
        )));
    }
    let report = transport(state, fft, dt)?;
    let raw = raw_moments(state);
    let fields = match kernel {
        Some(k) => fields_from_raw(&smear_raw(&raw, k), state.grid.nx, FieldVariant::Smeared)?,
        None => fields_from_raw(&raw, state.grid.nx, FieldVariant::Plain)?,
    };
    relax(state, &fields, dt)?;
    Ok(report)
}

/// Time series of fields plus a-priori-bound diagnostics from a solve.
#[derive(Clone, Debug, Default)]
pub struct SolveSeries<const D: usize> {
    pub times: Vec<f64>,
    pub plain: Vec<FieldGrid<D>>,
    /// Present only in regularized mode.
    pub smeared: Vec<FieldGrid<D>>,
    pub mass: Vec<f64>,
    pub momentum: Vec<[f64; D]>,
    pub energy: Vec<f64>,
    /// ∫∫ g |v|⁴, used for the p = 4 moment cap.
    pub fourth: Vec<f64>,
    /// min_x ϱ(x, t) (plain density).
    pub min_rho: Vec<f64>,
    /// min_x T^φ(x, t) in regularized mode, min_x T otherwise.
    pub min_temp: Vec<f64>,
    /// Sup-norm moments 𝓝_q for q = d+2, d+3, d+4.
    pub nq_orders: [u32; 3],
    pub nq: Vec<[f64; 3]>,
}

impl<const D: usize> SolveSeries<D> {
    /// Non-increasing fit A_t = min over [0, t] of the temperature floor.
    pub fn fitted_a_t(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.min_temp.len());
        let mut m = f64::INFINITY;
        for &t in &self.min_temp {
            m = m.min(t);
            out.push(m);
        }
        out
    }
}

#[derive(Debug)]
pub struct SolveOutput<const D: usize> {
    pub state: KineticState<D>,
    pub series: SolveSeries<D>,
    pub clip: StepReport,
}

/// March the state to `t_end` with fixed `dt` (a shorter final step absorbs
/// the remainder), recording fields and diagnostics at every step.
pub fn solve<const D: usize>(
    mut state: KineticState<D>,
    kernel: Option<&SpectralKernel<D>>,
    t_end: f64,
    dt: f64,
) -> Result<SolveOutput<D>> {
    if t_end < 0.0 {
        return Err(Error::InvalidInput(format!("t_end must be >= 0, got {t_end}")));
    }
    let fft = NdFft::new(state.grid.nx);
    let mut series = SolveSeries {
        nq_orders: [D as u32 + 2, D as u32 + 3, D as u32 + 4],
        ..Default::default()
    };
    let mut clip = StepReport::default();
    record(&state, kernel, &mut series)?;
    let t0 = state.time;
    let mut remaining = t_end;
    while remaining > 1e-12 * (1.0 + t0.abs() + t_end) {
        let h = dt.min(remaining);
        let rep = step(&mut state, kernel, &fft, h)?;
        clip.merge(&rep);
        remaining -= h;
        record(&state, kernel, &mut series)?;
    }
    Ok(SolveOutput {
        state,
        series,
        clip,
    })
}

fn record<const D: usize>(
    state: &KineticState<D>,
    kernel: Option<&SpectralKernel<D>>,
    series: &mut SolveSeries<D>,
) -> Result<()> {
    let raw = raw_moments(state);
    let plain = fields_from_raw(&raw, state.grid.nx, FieldVariant::Plain)?;
    series.times.push(state.time);
    series.mass.push(state.total_mass());
    series.momentum.push(state.total_momentum());
    series.energy.push(state.total_energy());
    series.fourth.push(state.total_fourth_moment());
    series
        .min_rho
        .push(plain.rho.iter().copied().fold(f64::INFINITY, f64::min));
    let mut nq = [0.0; 3];
    for (slot, q) in nq.iter_mut().zip(series.nq_orders) {
        *slot = state.sup_moment(q);
    }
    series.nq.push(nq);
    match kernel {
        Some(k) => {
            let smeared =
                fields_from_raw(&smear_raw(&raw, k), state.grid.nx, FieldVariant::Smeared)?;
            series.min_temp.push(
                smeared
                    .temperature
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
            );
            series.smeared.push(smeared);
        }
        None => {
            series.min_temp.push(
                plain
                    .temperature
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
            );
        }
    }
    series.plain.push(plain);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn equilibrium_grid() -> PhaseGrid<2> {
        PhaseGrid::new(8, 32, 6.0).unwrap()
    }

    fn maxwellian_state(grid: PhaseGrid<2>, u: [f64; 2], t: f64) -> KineticState<2> {
        KineticState::from_fn(grid, |_, v| {
            let p = MaxwellianParams::<2> {
                mean_velocity: u,
                temperature: t,
            };
            p.pdf(v).unwrap()
        })
    }

    #[test]
    fn grid_validation() {
        assert!(PhaseGrid::<2>::new(3, 32, 6.0).is_err());
        assert!(PhaseGrid::<2>::new(32, 31, 6.0).is_err());
        assert!(PhaseGrid::<2>::new(32, 32, 0.0).is_err());
        let g = PhaseGrid::<2>::new(32, 32, 6.0).unwrap();
        // nodes symmetric about zero
        for j in 0..32 {
            assert!((g.v_node(j) + g.v_node(31 - j)).abs() < 1e-15);
        }
    }

    #[test]
    fn moments_of_equilibrium() {
        // truncation at vmax = 6 (reference quadrature): mass -3.20e-9,
        // temperature -6.03e-8; at vmax = 7 everything is below 1e-10
        let grid = PhaseGrid::<2>::new(4, 32, 6.0).unwrap();
        let state = maxwellian_state(grid, [0.0, 0.0], 1.0);
        let f = moments(&state).unwrap();
        for xs in 0..grid.n_space() {
            assert!((f.rho[xs] - 1.0).abs() < 1e-8);
            assert!(f.velocity[xs][0].abs() < 1e-10 && f.velocity[xs][1].abs() < 1e-10);
            assert!((f.temperature[xs] - (1.0 - 6.034e-8)).abs() < 1e-10);
        }
        let grid = PhaseGrid::<2>::new(4, 32, 7.0).unwrap();
        let state = maxwellian_state(grid, [0.0, 0.0], 1.0);
        let f = moments(&state).unwrap();
        for xs in 0..grid.n_space() {
            assert!((f.rho[xs] - 1.0).abs() < 1e-8);
            assert!((f.temperature[xs] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn moments_of_shifted_equilibrium() {
        let grid = PhaseGrid::<2>::new(4, 48, 12.0).unwrap();
        let state = maxwellian_state(grid, [1.0, 0.0], 2.0);
        let f = moments(&state).unwrap();
        for xs in 0..grid.n_space() {
            assert!((f.rho[xs] - 1.0).abs() < 1e-9);
            assert!((f.velocity[xs][0] - 1.0).abs() < 1e-9);
            assert!(f.velocity[xs][1].abs() < 1e-9);
            assert!((f.temperature[xs] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn moments_match_refined_grid() {
        // smooth anisotropic state: refined-velocity-grid quadrature oracle
        let f = |x: &TorusVector<2>, v: &[f64; 2]| {
            let s = 1.0 + 0.4 * (2.0 * std::f64::consts::PI * x.coords()[0]).cos();
            let w = (-(v[0] - 0.5 * x.coords()[1]).powi(2) / 2.4).exp()
                * (-(v[1] + 0.3).powi(2) / 1.6).exp();
            s * w
        };
        let coarse = KineticState::from_fn(PhaseGrid::<2>::new(4, 32, 8.0).unwrap(), f);
        let fine = KineticState::from_fn(PhaseGrid::<2>::new(4, 128, 8.0).unwrap(), f);
        let fc = moments(&coarse).unwrap();
        let ff = moments(&fine).unwrap();
        for xs in 0..coarse.grid.n_space() {
            assert!((fc.rho[xs] - ff.rho[xs]).abs() / ff.rho[xs] < 1e-4);
            assert!((fc.temperature[xs] - ff.temperature[xs]).abs() / ff.temperature[xs] < 1e-4);
            for a in 0..2 {
                assert!((fc.velocity[xs][a] - ff.velocity[xs][a]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn degenerate_density_is_reported() {
        let grid = PhaseGrid::<2>::new(4, 8, 3.0).unwrap();
        let state = KineticState::from_fn(grid, |_, _| 0.0);
        assert!(matches!(
            moments(&state),
            Err(Error::DegenerateDensity { .. })
        ));
    }

    #[test]
    fn smearing_preserves_constants_and_mass() {
        let grid = PhaseGrid::<2>::new(32, 16, 6.0).unwrap();
        let kernel = SmearingKernel::<2>::build(0.25).unwrap();
        let spectral = SpectralKernel::new(&kernel, grid.nx).unwrap();
        // uniform state: smeared fields equal plain fields
        let state = maxwellian_state(grid, [0.3, -0.2], 1.3);
        let plain = moments(&state).unwrap();
        let smeared = smeared_moments(&state, &spectral).unwrap();
        for xs in 0..grid.n_space() {
            assert!((plain.rho[xs] - smeared.rho[xs]).abs() < 1e-13);
            assert!((plain.temperature[xs] - smeared.temperature[xs]).abs() < 1e-13);
        }
        // modulated state: spatial integrals preserved
        let law = InitialLaw::<2>::new(0.5, 1.0, [0.0, 0.0]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let raw = raw_moments(&state);
        let sm = smear_raw(&raw, &spectral);
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        assert!((sum(&raw.m0) - sum(&sm.m0)).abs() < 1e-12 * sum(&raw.m0));
        assert!((sum(&raw.m2) - sum(&sm.m2)).abs() < 1e-12 * sum(&raw.m2));
    }

    #[test]
    fn smearing_is_second_order_in_epsilon() {
        // Taylor oracle: φ*ρ - ρ ≈ (μ₂/2) Δρ with μ₂ the per-axis second
        // moment of φ
        let nx = 64usize;
        let grid = PhaseGrid::<2>::new(nx, 8, 6.0).unwrap();
        let law = InitialLaw::<2>::new(0.4, 1.0, [0.0, 0.0]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let raw = raw_moments(&state);
        let eps = 0.2;
        let kernel = SmearingKernel::<2>::build(eps).unwrap();
        let spectral = SpectralKernel::new(&kernel, nx).unwrap();
        let sm = smear_raw(&raw, &spectral);
        // μ₂ by midpoint quadrature of the radial profile
        let mut mu2 = 0.0;
        let nq = 200_000;
        let h = kernel.support_radius() / nq as f64;
        for i in 0..nq {
            let t = (i as f64 + 0.5) * h;
            mu2 += kernel.eval_radial(t) * 2.0 * std::f64::consts::PI * t * t * t * h;
        }
        mu2 /= 2.0; // per-axis: |y|² = y1² + y2², radial share is half
        let dx = grid.dx();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..nx {
            for j in 0..nx {
                let flat = i * nx + j;
                let lap = (raw.m0[((i + 1) % nx) * nx + j]
                    + raw.m0[((i + nx - 1) % nx) * nx + j]
                    + raw.m0[i * nx + (j + 1) % nx]
                    + raw.m0[i * nx + (j + nx - 1) % nx]
                    - 4.0 * raw.m0[flat])
                    / (dx * dx);
                let predicted = raw.m0[flat] + 0.5 * mu2 * lap;
                worst = worst.max((sm.m0[flat] - predicted).abs());
                scale = scale.max((sm.m0[flat] - raw.m0[flat]).abs());
            }
        }
        // the correction itself is O(ε²); the residual must be o(that)
        assert!(scale > 1e-4, "test must exercise a visible smearing effect");
        assert!(worst < 0.1 * scale, "worst residual {worst} vs effect {scale}");
    }

    #[test]
    fn transport_is_exact_phase_shift() {
        let grid = PhaseGrid::<2>::new(16, 4, 2.0).unwrap();
        let mut state = KineticState::from_fn(grid, |x, _| {
            1.0 + 0.3 * (2.0 * std::f64::consts::PI * x.coords()[0]).cos()
        });
        let fft = NdFft::new(grid.nx);
        let dt = 0.37;
        transport(&mut state, &fft, dt).unwrap();
        for xs in 0..grid.n_space() {
            let x = grid.space_point(xs);
            for vs in 0..grid.n_vel() {
                let v = grid.vel_point(vs);
                let expect =
                    1.0 + 0.3 * (2.0 * std::f64::consts::PI * (x.coords()[0] - v[0] * dt)).cos();
                assert!(
                    (state.at(xs, vs) - expect).abs() < 1e-10,
                    "xs {xs} vs {vs}: {} vs {expect}",
                    state.at(xs, vs)
                );
            }
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let grid = equilibrium_grid();
        let law = InitialLaw::<2>::new(0.0, 1.0, [0.0, 0.0]).unwrap();
        let state0 = KineticState::from_law(grid, &law);
        let kernel = SmearingKernel::<2>::build(0.5).unwrap();
        let spectral = SpectralKernel::new(&kernel, grid.nx).unwrap();
        let out = solve(state0.clone(), Some(&spectral), 0.2, 1e-2).unwrap();
        let drift = out
            .state
            .values
            .iter()
            .zip(&state0.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 1e-10, "drift = {drift:.3e}");
    }

    #[test]
    fn homogeneous_relaxation_matches_closed_form() {
        // spatially uniform bimodal initial state; the exact solution is
        // e^{-t} g0 + (1 - e^{-t}) ρ M_{u,T}
        let grid = PhaseGrid::<2>::new(4, 48, 7.5).unwrap();
        let bimodal = |v: &[f64; 2]| {
            let a = MaxwellianParams::<2> {
                mean_velocity: [1.5, 0.0],
                temperature: 0.5,
            };
            let b = MaxwellianParams::<2> {
                mean_velocity: [-1.5, 0.0],
                temperature: 0.5,
            };
            0.5 * (a.pdf(v).unwrap() + b.pdf(v).unwrap())
        };
        let state0 = KineticState::from_fn(grid, |_, v| bimodal(v));
        let f0 = moments(&state0).unwrap();
        let (rho, u, t_temp) = (f0.rho[0], f0.velocity[0], f0.temperature[0]);
        let t_end = 1.0;
        let out = solve(state0.clone(), None, t_end, 1e-2).unwrap();
        let decay = (-t_end).exp();
        let m = MaxwellianParams::<2> {
            mean_velocity: u,
            temperature: t_temp,
        };
        let mut err = 0.0f64;
        for xs in 0..grid.n_space() {
            for vs in 0..grid.n_vel() {
                let v = grid.vel_point(vs);
                let oracle = decay * bimodal(&v) + (1.0 - decay) * rho * m.pdf(&v).unwrap();
                err = err.max((out.state.at(xs, vs) - oracle).abs());
            }
        }
        assert!(err < 1e-3, "sup error {err:.3e}");
        // and the error is genuinely first order: halving dt halves it
        let out2 = solve(state0, None, t_end, 5e-3).unwrap();
        let mut err2 = 0.0f64;
        for xs in 0..grid.n_space() {
            for vs in 0..grid.n_vel() {
                let v = grid.vel_point(vs);
                let oracle = decay * bimodal(&v) + (1.0 - decay) * rho * m.pdf(&v).unwrap();
                err2 = err2.max((out2.state.at(xs, vs) - oracle).abs());
            }
        }
        let slope = (err / err2).log2();
        assert!((0.8..=1.2).contains(&slope), "slope = {slope}");
    }

    #[test]
    fn conservation_along_modulated_run() {
        let grid = PhaseGrid::<2>::new(16, 24, 7.0).unwrap();
        let law = InitialLaw::<2>::new(0.5, 1.0, [0.3, 0.0]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let kernel = SmearingKernel::<2>::build(0.3).unwrap();
        let spectral = SpectralKernel::new(&kernel, grid.nx).unwrap();
        let out = solve(state, Some(&spectral), 0.5, 1e-2).unwrap();
        let s = &out.series;
        let last = s.times.len() - 1;
        let span = s.times[last] - s.times[0];
        assert!((s.mass[last] - s.mass[0]).abs() / span < 1e-10);
        assert!((s.energy[last] - s.energy[0]).abs() / span < 1e-8);
        for a in 0..2 {
            assert!((s.momentum[last][a] - s.momentum[0][a]).abs() / span < 1e-8);
        }
        // solve in true-BGK mode conserves as well
        let state = KineticState::from_law(grid, &law);
        let out = solve(state, None, 0.5, 1e-2).unwrap();
        let s = &out.series;
        let last = s.times.len() - 1;
        assert!((s.mass[last] - s.mass[0]).abs() / span < 1e-10);
        assert!((s.energy[last] - s.energy[0]).abs() / span < 1e-8);
    }

    #[test]
    fn density_lower_bound_diagnostics() {
        let grid = PhaseGrid::<2>::new(16, 24, 7.0).unwrap();
        let law = InitialLaw::<2>::new(0.5, 1.0, [0.0, 0.0]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let kernel = SmearingKernel::<2>::build(0.3).unwrap();
        let spectral = SpectralKernel::new(&kernel, grid.nx).unwrap();
        let out = solve(state, Some(&spectral), 0.5, 1e-2).unwrap();
        let c2 = law.c2();
        for (t, min_rho) in out.series.times.iter().zip(&out.series.min_rho) {
            assert!(*min_rho >= c2 * (-t).exp() - 1e-6);
        }
        for a_t in out.series.fitted_a_t() {
            assert!(a_t > 0.0);
        }
        // A_t is non-increasing by construction
        let a = out.series.fitted_a_t();
        assert!(a.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn solve_zero_time_returns_input() {
        let grid = equilibrium_grid();
        let law = InitialLaw::<2>::new(0.3, 1.0, [0.0, 0.0]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let out = solve(state.clone(), None, 0.0, 1e-2).unwrap();
        assert_eq!(out.state.values, state.values);
        assert_eq!(out.series.times.len(), 1);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let grid = PhaseGrid::<3>::new(4, 6, 5.0).unwrap();
        let law = InitialLaw::<3>::new(0.2, 1.1, [0.1, 0.0, -0.2]).unwrap();
        let mut state = KineticState::from_law(grid, &law);
        state.time = 0.625;
        let mut buf = Vec::new();
        state.write_checkpoint(&mut buf).unwrap();
        let back = KineticState::<3>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.grid, state.grid);
        assert_eq!(back.time, state.time);
        assert_eq!(back.values, state.values);
        assert!(KineticState::<2>::read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn sampling_matches_state_moments() {
        let grid = PhaseGrid::<2>::new(16, 24, 7.0).unwrap();
        let law = InitialLaw::<2>::new(0.5, 1.3, [0.4, 0.0]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let mut rng = stream_rng(83, 0);
        let pts = state.sample_phase_points(100_000, &mut rng);
        let n = pts.len() as f64;
        // velocity mean and second moment
        let mean_v0 = pts.iter().map(|p| p.velocity[0]).sum::<f64>() / n;
        assert!((mean_v0 - 0.4).abs() < 0.02);
        // spatial modulation: E cos(2π x1) = a/2 for density 1 + a cos
        let mean_cos = pts
            .iter()
            .map(|p| (2.0 * std::f64::consts::PI * p.position.coords()[0]).cos())
            .sum::<f64>()
            / n;
        assert!((mean_cos - 0.25).abs() < 0.02, "mean cos = {mean_cos}");
    }

    #[test]
    fn field_interpolation_recovers_smooth_fields() {
        let grid = PhaseGrid::<2>::new(32, 16, 6.0).unwrap();
        let law = InitialLaw::<2>::new(0.4, 1.0, [0.2, -0.1]).unwrap();
        let state = KineticState::from_law(grid, &law);
        let f = moments(&state).unwrap();
        // at grid nodes the interpolation is exact
        for xs in [0usize, 5, 100, 500] {
            let x = grid.space_point(xs % grid.n_space());
            let (u, t) = f.interpolate(&x);
            let flat = xs % grid.n_space();
            assert!((u[0] - f.velocity[flat][0]).abs() < 1e-12);
            assert!((t - f.temperature[flat]).abs() < 1e-12);
        }
        // between nodes it stays within the field range
        let (_, t) = f.interpolate(&TorusVector([0.013, -0.271]));
        let tmin = f.temperature.iter().copied().fold(f64::INFINITY, f64::min);
        let tmax = f.temperature.iter().copied().fold(0.0f64, f64::max);
        assert!(t >= tmin - 1e-12 && t <= tmax + 1e-12);
    }

    #[test]
    fn spectral_kernel_requires_resolution() {
        let kernel = SmearingKernel::<2>::build(0.05).unwrap();
        assert!(SpectralKernel::new(&kernel, 32).is_err());
    }
}
