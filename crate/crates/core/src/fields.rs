//! Smeared empirical hydrodynamical fields of a particle configuration,
//! the jump-weight matrices p_{i,j}, and good-set indicators.

use crate::error::{Error, Result};
use crate::kernel::SmearingKernel;
use crate::numerics::KahanSum;
use crate::torus::TorusVector;

/// Relative floor below which the empirical temperature is an exact Dirac.
const DIRAC_TEMP_REL: f64 = 1e-14;

/// Full microstate Z_N = (X_N, V_N).
#[derive(Clone, Debug)]
pub struct ParticleConfig<const D: usize> {
    pub positions: Vec<TorusVector<D>>,
    pub velocities: Vec<[f64; D]>,
}

impl<const D: usize> ParticleConfig<D> {
    pub fn new(positions: Vec<TorusVector<D>>, velocities: Vec<[f64; D]>) -> Result<Self> {
        if positions.is_empty() || positions.len() != velocities.len() {
            return Err(Error::InvalidInput(format!(
                "need N >= 1 with matching position/velocity counts, got {} and {}",
                positions.len(),
                velocities.len()
            )));
        }
        if velocities.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput("non-finite velocity".into()));
        }
        Ok(Self {
            positions,
            velocities,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// CSV snapshot with columns x_1..x_d,v_1..v_d, one particle per row.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut header = Vec::new();
        for a in 1..=D {
            header.push(format!("x{a}"));
        }
        for a in 1..=D {
            header.push(format!("v{a}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for (x, v) in self.positions.iter().zip(&self.velocities) {
            let row: Vec<String> = x
                .coords()
                .iter()
                .chain(v.iter())
                .map(|c| format!("{c:?}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        use std::io::BufRead;
        let reader = std::io::BufReader::new(r);
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        for (ln, line) in reader.lines().enumerate() {
            let line = line?;
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", ln + 1)))?;
            if vals.len() != 2 * D {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected {} columns, got {}",
                    ln + 1,
                    2 * D,
                    vals.len()
                )));
            }
            let mut x = [0.0; D];
            let mut v = [0.0; D];
            x.copy_from_slice(&vals[..D]);
            v.copy_from_slice(&vals[D..]);
            positions.push(TorusVector::wrap(x)?);
            velocities.push(v);
        }
        Self::new(positions, velocities)
    }
}

/// Empirical hydrodynamical triple (ϱ, u, T) at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HydroTriple<const D: usize> {
    pub rho: f64,
    pub velocity: [f64; D],
    pub temperature: f64,
}

/// Cell list over the unit torus with cell side >= the query radius, so a
/// query touches only the 3^D neighboring cells.
#[derive(Clone, Debug)]
pub struct CellList<const D: usize> {
    cells_per_axis: usize,
    cells: Vec<Vec<u32>>,
}

impl<const D: usize> CellList<D> {
    pub fn build(positions: &[TorusVector<D>], min_cell_side: f64) -> Self {
        let m = (1.0 / min_cell_side).floor().max(1.0) as usize;
        let mut cells = vec![Vec::new(); m.pow(D as u32)];
        for (idx, x) in positions.iter().enumerate() {
            cells[Self::cell_of(x, m)].push(idx as u32);
        }
        Self {
            cells_per_axis: m,
            cells,
        }
    }

    #[inline]
    fn cell_of(x: &TorusVector<D>, m: usize) -> usize {
        let mut flat = 0;
        for c in x.coords() {
            let i = (((c + 0.5) * m as f64) as usize).min(m - 1);
            flat = flat * m + i;
        }
        flat
    }

    /// Visit the indices of all particles in the 3^D cells around `x`.
    pub fn for_neighbors(&self, x: &TorusVector<D>, mut f: impl FnMut(u32)) {
        let m = self.cells_per_axis;
        if m < 3 {
            // neighbor blocks would overlap; scan everything once
            for cell in &self.cells {
                for &i in cell {
                    f(i);
                }
            }
            return;
        }
        let mut base = [0usize; D];
        for (a, c) in x.coords().iter().enumerate() {
            base[a] = (((c + 0.5) * m as f64) as usize).min(m - 1);
        }
        let mut off = [-1i64; D];
        loop {
            let mut flat = 0;
            for a in 0..D {
                let i = (base[a] as i64 + off[a]).rem_euclid(m as i64) as usize;
                flat = flat * m + i;
            }
            for &i in &self.cells[flat] {
                f(i);
            }
            let mut axis = 0;
            loop {
                if axis == D {
                    return;
                }
                off[axis] += 1;
                if off[axis] <= 1 {
                    break;
                }
                off[axis] = -1;
                axis += 1;
            }
        }
    }
}

/// Below this population the naive scan beats building cell lists.
const CELL_LIST_MIN_N: usize = 128;

/// Field evaluator over an immutable configuration snapshot. Queries are
/// read-only and safe to issue from multiple threads.
pub struct HydroEvaluator<'a, const D: usize> {
    cfg: &'a ParticleConfig<D>,
    kernel: &'a SmearingKernel<D>,
    cells: Option<CellList<D>>,
}

impl<'a, const D: usize> HydroEvaluator<'a, D> {
    pub fn new(cfg: &'a ParticleConfig<D>, kernel: &'a SmearingKernel<D>) -> Self {
        let cells = (cfg.len() >= CELL_LIST_MIN_N)
            .then(|| CellList::build(&cfg.positions, kernel.support_radius()));
        Self { cfg, kernel, cells }
    }

    /// Force the naive O(N) path (the test oracle for the cell-list path).
    pub fn new_naive(cfg: &'a ParticleConfig<D>, kernel: &'a SmearingKernel<D>) -> Self {
        Self {
            cfg,
            kernel,
            cells: None,
        }
    }

    pub fn uses_cell_list(&self) -> bool {
        self.cells.is_some()
    }

    fn gather(&self, x: &TorusVector<D>, out: &mut Vec<(f64, u32)>) {
        out.clear();
        let kernel = self.kernel;
        let cfg = self.cfg;
        let push = |j: u32, out: &mut Vec<(f64, u32)>| {
            let dx = x.displacement_from(&cfg.positions[j as usize]);
            let w = kernel.eval_norm_sq(dx.0.iter().map(|c| c * c).sum());
            if w > 0.0 {
                out.push((w, j));
            }
        };
        match &self.cells {
            Some(cells) => cells.for_neighbors(x, |j| push(j, out)),
            None => {
                for j in 0..self.cfg.len() as u32 {
                    push(j, out);
                }
            }
        }
    }

    /// Smeared empirical fields at `x`; `None` marks the vacuum case ϱ = 0.
    pub fn eval(&self, x: &TorusVector<D>) -> Option<HydroTriple<D>> {
        let mut contrib = Vec::new();
        self.gather(x, &mut contrib);
        self.reduce(&contrib)
    }

    /// Density only (cheaper; used by good-set scans).
    pub fn density(&self, x: &TorusVector<D>) -> f64 {
        let mut acc = KahanSum::new();
        let kernel = self.kernel;
        let cfg = self.cfg;
        let add = |j: u32, acc: &mut KahanSum| {
            let dx = x.displacement_from(&cfg.positions[j as usize]);
            acc.add(kernel.eval_norm_sq(dx.0.iter().map(|c| c * c).sum()));
        };
        match &self.cells {
            Some(cells) => cells.for_neighbors(x, |j| add(j, &mut acc)),
            None => {
                for j in 0..self.cfg.len() as u32 {
                    add(j, &mut acc);
                }
            }
        }
        acc.value() / self.cfg.len() as f64
    }

    fn reduce(&self, contrib: &[(f64, u32)]) -> Option<HydroTriple<D>> {
        let n = self.cfg.len() as f64;
        if contrib.is_empty() {
            return None;
        }
        if contrib.len() == 1 {
            // single nonzero weight: the velocity does not jump
            let (w, j) = contrib[0];
            return Some(HydroTriple {
                rho: w / n,
                velocity: self.cfg.velocities[j as usize],
                temperature: 0.0,
            });
        }
        let mut wsum = KahanSum::new();
        let mut wv = [KahanSum::new(); D];
        for &(w, j) in contrib {
            wsum.add(w);
            let v = &self.cfg.velocities[j as usize];
            for a in 0..D {
                wv[a].add(w * v[a]);
            }
        }
        let wsum = wsum.value();
        let mut u = [0.0; D];
        for a in 0..D {
            u[a] = wv[a].value() / wsum;
        }
        let mut tnum = KahanSum::new();
        let mut peak = 0.0f64;
        for &(w, j) in contrib {
            let v = &self.cfg.velocities[j as usize];
            let mut dsq = 0.0;
            for a in 0..D {
                let d = v[a] - u[a];
                dsq += d * d;
            }
            peak = peak.max(dsq);
            tnum.add(w * dsq);
        }
        let mut temperature = tnum.value() / (wsum * D as f64);
        if temperature <= DIRAC_TEMP_REL * peak {
            temperature = 0.0;
        }
        Some(HydroTriple {
            rho: wsum / n,
            velocity: u,
            temperature,
        })
    }
}

/// One-shot smeared-field evaluation (builds no acceleration structure).
pub fn smeared_fields<const D: usize>(
    cfg: &ParticleConfig<D>,
    kernel: &SmearingKernel<D>,
    x: &TorusVector<D>,
) -> Option<HydroTriple<D>> {
    HydroEvaluator::new_naive(cfg, kernel).eval(x)
}

/// Jump weights p_{i,j}(ξ) = φ(x_i+ξ-x_j) / Σ_k φ(x_i+ξ-x_k).
///
/// Requires φ(ξ) > 0 so the denominator is bounded below by φ(ξ)/N.
pub fn jump_weights<const D: usize>(
    cfg: &ParticleConfig<D>,
    kernel: &SmearingKernel<D>,
    i: usize,
    xi: &TorusVector<D>,
) -> Result<Vec<f64>> {
    if i >= cfg.len() {
        return Err(Error::InvalidInput(format!(
            "particle index {i} out of range (N = {})",
            cfg.len()
        )));
    }
    if kernel.eval(xi) <= 0.0 {
        return Err(Error::Precondition(format!(
            "jump displacement |xi| = {} outside the open kernel support",
            xi.norm()
        )));
    }
    let target = cfg.positions[i].translate(xi.coords());
    let mut weights: Vec<f64> = cfg
        .positions
        .iter()
        .map(|xj| kernel.eval(&target.displacement_from(xj)))
        .collect();
    let mut total = KahanSum::new();
    for w in &weights {
        total.add(*w);
    }
    let total = total.value();
    debug_assert!(total > 0.0);
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(weights)
}

/// Good-set indicators and the constants entering them.
#[derive(Clone, Copy, Debug)]
pub struct GoodSetReport {
    pub in_ba: bool,
    pub in_g1: bool,
    pub in_gmp: bool,
    /// A = C₂ e^{-T} / 4 for horizon T.
    pub a: f64,
    /// A_φ = A r^d φ₀ / (2 ‖∇φ‖_∞).
    pub a_phi: f64,
    /// Moment cap for the requested order p.
    pub m: f64,
    pub r: f64,
    /// Density threshold A r^d φ₀ used by the B_A scan.
    pub ba_threshold: f64,
}

impl GoodSetReport {
    /// 𝓖 = 𝓖₁ ∩ 𝓑_A.
    pub fn in_good_set(&self) -> bool {
        self.in_g1 && self.in_ba
    }
}

/// Evaluate the good-set indicators for a coupled pair of configurations.
///
/// `z` is the interacting system, `sigma` the auxiliary one; 𝓑_A concerns
/// the fields built from `sigma` (the ϱ̃ density), certified on a grid of
/// spacing r/4.
#[allow(clippy::too_many_arguments)]
pub fn good_set_report<const D: usize>(
    z: &ParticleConfig<D>,
    sigma: &ParticleConfig<D>,
    kernel: &SmearingKernel<D>,
    r: f64,
    horizon: f64,
    c2: f64,
    p: u32,
    m_cap: f64,
) -> Result<GoodSetReport> {
    if z.len() != sigma.len() {
        return Err(Error::InvalidInput(format!(
            "configurations must share N: {} vs {}",
            z.len(),
            sigma.len()
        )));
    }
    let n = z.len();
    let a = c2 * (-horizon).exp() / 4.0;
    let a_phi = a * r.powi(D as i32) * kernel.phi0() / (2.0 * kernel.grad_bound());
    let ba_threshold = a * r.powi(D as i32) * kernel.phi0();

    let in_ba = density_exceeds_everywhere(sigma, kernel, ba_threshold, r / 4.0);

    let mut disp = KahanSum::new();
    for (x, y) in z.positions.iter().zip(&sigma.positions) {
        disp.add(x.distance(y));
    }
    let in_g1 = disp.value() / n as f64 <= a_phi;

    let mut mom = KahanSum::new();
    for w in &sigma.velocities {
        let speed = w.iter().map(|c| c * c).sum::<f64>().sqrt();
        mom.add(speed.powi(p as i32));
    }
    let in_gmp = mom.value() / n as f64 <= m_cap;

    Ok(GoodSetReport {
        in_ba,
        in_g1,
        in_gmp,
        a,
        a_phi,
        m: m_cap,
        r,
        ba_threshold,
    })
}

/// Check ϱ̃^φ(x) > threshold for every x on the torus grid of the given
/// spacing. Exact with respect to that grid.
///
/// Fast path: grid cells whose every point provably lies within a certifying
/// distance of some particle are skipped; only uncovered cells fall back to
/// exact evaluation. The reference full scan is `density_exceeds_naive`.
pub fn density_exceeds_everywhere<const D: usize>(
    cfg: &ParticleConfig<D>,
    kernel: &SmearingKernel<D>,
    threshold: f64,
    spacing: f64,
) -> bool {
    let n = cfg.len() as f64;
    let g = (1.0 / spacing).round().max(1.0) as usize;
    if kernel.eval_radial(0.0) / n <= threshold {
        return density_exceeds_naive(cfg, kernel, threshold, g);
    }
    // largest radius whose single-particle contribution clears the threshold
    let mut lo = 0.0f64;
    let mut hi = kernel.support_radius();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kernel.eval_radial(mid) / n > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = lo;
    // coarse cover cells of side s; a cell is certified when a particle lies
    // within delta_eff of its center
    let s = (delta / 4.0).max(1e-4);
    let m = (1.0 / s).floor().max(1.0) as usize;
    if !(3..=4096).contains(&m) {
        return density_exceeds_naive(cfg, kernel, threshold, g);
    }
    let s = 1.0 / m as f64;
    let delta_eff = delta - 0.5 * s * (D as f64).sqrt();
    if delta_eff <= 0.0 {
        return density_exceeds_naive(cfg, kernel, threshold, g);
    }
    let mut covered = vec![false; m.pow(D as u32)];
    let reach = (delta_eff / s).ceil() as i64;
    for x in &cfg.positions {
        let mut base = [0i64; D];
        for (a, c) in x.coords().iter().enumerate() {
            base[a] = ((c + 0.5) / s).floor() as i64;
        }
        let mut off = [-reach; D];
        'mark: loop {
            let mut dist_sq = 0.0;
            let mut flat = 0usize;
            for a in 0..D {
                let cell = (base[a] + off[a]).rem_euclid(m as i64) as usize;
                flat = flat * m + cell;
                let center = -0.5 + (cell as f64 + 0.5) * s;
                let d = crate::torus::wrap_coord(x.coords()[a] - center);
                dist_sq += d * d;
            }
            if dist_sq <= delta_eff * delta_eff {
                covered[flat] = true;
            }
            let mut axis = 0;
            loop {
                if axis == D {
                    break 'mark;
                }
                off[axis] += 1;
                if off[axis] <= reach {
                    break;
                }
                off[axis] = -reach;
                axis += 1;
            }
        }
    }
    // evaluate grid points of uncovered cells only
    let eval = HydroEvaluator::new(cfg, kernel);
    let mut idx = [0usize; D];
    loop {
        let mut flat = 0usize;
        let mut coords = [0.0; D];
        for a in 0..D {
            coords[a] = -0.5 + idx[a] as f64 / g as f64;
            let cell = (((coords[a] + 0.5) / s).floor() as usize).min(m - 1);
            flat = flat * m + cell;
        }
        if !covered[flat] && eval.density(&TorusVector(coords)) <= threshold {
            return false;
        }
        let mut axis = 0;
        loop {
            if axis == D {
                return true;
            }
            idx[axis] += 1;
            if idx[axis] < g {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Reference implementation: evaluate every grid point.
pub fn density_exceeds_naive<const D: usize>(
    cfg: &ParticleConfig<D>,
    kernel: &SmearingKernel<D>,
    threshold: f64,
    g: usize,
) -> bool {
    let eval = HydroEvaluator::new(cfg, kernel);
    let mut idx = [0usize; D];
    loop {
        let mut coords = [0.0; D];
        for a in 0..D {
            coords[a] = -0.5 + idx[a] as f64 / g as f64;
        }
        if eval.density(&TorusVector(coords)) <= threshold {
            return false;
        }
        let mut axis = 0;
        loop {
            if axis == D {
                return true;
            }
            idx[axis] += 1;
            if idx[axis] < g {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}
