//! Exact squared-cost assignment between equal-weight point clouds in
//! (torus × velocity) phase space, giving the empirical 2-Wasserstein
//! distance.

use crate::error::{Error, Result};
use crate::torus::TorusVector;

/// Hard cap on cloud size for the exact solver.
pub const MAX_CLOUD: usize = 4096;

/// A weighted sample point in phase space.
#[derive(Clone, Copy, Debug)]
pub struct PhasePoint<const D: usize> {
    pub position: TorusVector<D>,
    pub velocity: [f64; D],
}

impl<const D: usize> PhasePoint<D> {
    /// Ground cost: squared torus distance plus squared Euclidean velocity
    /// distance.
    pub fn cost_to(&self, other: &Self) -> f64 {
        let dx = self.position.distance(&other.position);
        let mut dv = 0.0;
        for a in 0..D {
            let d = self.velocity[a] - other.velocity[a];
            dv += d * d;
        }
        dx * dx + dv
    }
}

/// Dense Jonker–Volgenant: minimum-cost perfect matching via shortest
/// augmenting paths with dual potentials. O(n³) worst case.
///
/// `cost` is row-major n×n. Returns (assignment row -> col, total cost).
pub fn solve_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    const UNSET: usize = usize::MAX;
    // potentials for rows (u) and columns (v); col_row[j] = row matched to j
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![UNSET; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 0..n {
        // append virtual column n holding the current row
        col_row[n] = row;
        let mut j_cur = n;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j_cur] = true;
            let r = col_row[j_cur];
            let mut delta = f64::INFINITY;
            let mut j_next = UNSET;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = cost[r * n + j] - u[r] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j_cur;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j_next = j;
                }
            }
            debug_assert!(j_next != UNSET);
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j_cur = j_next;
            if col_row[j_cur] == UNSET {
                break;
            }
        }
        // augment along the alternating path
        while j_cur != n {
            let j_prev = way[j_cur];
            col_row[j_cur] = col_row[j_prev];
            j_cur = j_prev;
        }
    }
    let mut assignment = vec![UNSET; n];
    for j in 0..n {
        if col_row[j] != UNSET {
            assignment[col_row[j]] = j;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (assignment, total)
}

/// Squared empirical 2-Wasserstein distance between two equal-size,
/// equal-weight clouds: the exact optimal assignment cost divided by n.
pub fn empirical_w2_sq<const D: usize>(
    cloud_a: &[PhasePoint<D>],
    cloud_b: &[PhasePoint<D>],
) -> Result<f64> {
    if cloud_a.len() != cloud_b.len() || cloud_a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "clouds must have equal nonzero sizes, got {} and {}",
            cloud_a.len(),
            cloud_b.len()
        )));
    }
    let n = cloud_a.len();
    if n > MAX_CLOUD {
        return Err(Error::CloudTooLarge { n, max: MAX_CLOUD });
    }
    let mut cost = vec![0.0f64; n * n];
    for (i, a) in cloud_a.iter().enumerate() {
        for (j, b) in cloud_b.iter().enumerate() {
            cost[i * n + j] = a.cost_to(b);
        }
    }
    let (_, total) = solve_assignment(&cost, n);
    Ok(total / n as f64)
}
