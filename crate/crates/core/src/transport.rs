//! Exact balanced optimal transport on small supports (transportation simplex).

use crate::error::{Error, Result};
use crate::measure::{check_dims, sq_dist, DiscreteMeasure};

/// Default cap on support sizes for the exact solver.
pub const DEFAULT_SUPPORT_CAP: usize = 64;

/// Relative tolerance under which two total masses count as equal.
pub const EQUAL_MASS_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub cost: f64,
    pub plan: Vec<Vec<f64>>,
    pub pivots: usize,
}

/// Solves `min <C, P>` over couplings of `a` and `b` (equal sums) exactly.
///
/// Basic feasible solutions are spanning trees of the bipartite graph; the
/// method pivots on the most negative reduced cost and falls back to Bland's
/// rule after a run of degenerate pivots.
pub fn transport_lp(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> TransportPlan {
    let n = a.len();
    let m = b.len();
    if n == 0 || m == 0 {
        return TransportPlan { cost: 0.0, plan: vec![vec![0.0; m]; n], pivots: 0 };
    }
    let mut x = vec![vec![0.0; m]; n];
    let mut basic = vec![vec![false; m]; n];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);

    // Northwest corner start, keeping degenerate zeros in the basis.
    let mut s = a.to_vec();
    let mut d = b.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let q = s[i].min(d[j]).max(0.0);
        x[i][j] = q;
        basic[i][j] = true;
        basis.push((i, j));
        s[i] -= q;
        d[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(basis.len(), n + m - 1);

    let scale = cost.iter().flatten().fold(0.0f64, |acc, c| acc.max(c.abs())).max(1.0);
    let max_pivots = 200 * (n + m) * (n + m) + 1000;
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    while pivots < max_pivots {
        for l in adj.iter_mut() {
            l.clear();
        }
        for &(bi, bj) in &basis {
            adj[bi].push(n + bj);
            adj[n + bj].push(bi);
        }
        // Potentials u_i + v_j = c_ij on the basis tree.
        let mut seen = vec![false; n + m];
        let mut stack = vec![0usize];
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &nb in &adj[node] {
                if seen[nb] {
                    continue;
                }
                seen[nb] = true;
                if node < n {
                    v[nb - n] = cost[node][nb - n] - u[node];
                } else {
                    u[nb] = cost[nb][node - n] - v[node - n];
                }
                stack.push(nb);
            }
        }
        let bland = degenerate_run > n + m;
        let mut entering = None;
        let mut best = -1e-12 * scale;
        'scan: for (ri, row) in cost.iter().enumerate() {
            for (cj, &c) in row.iter().enumerate() {
                if basic[ri][cj] {
                    continue;
                }
                let r = c - u[ri] - v[cj];
                if r < best {
                    entering = Some((ri, cj));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };

        // Tree path from row ei to column ej.
        let target = n + ej;
        let mut parent = vec![usize::MAX; n + m];
        let mut stack = vec![ei];
        parent[ei] = ei;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &nb in &adj[node] {
                if parent[nb] == usize::MAX {
                    parent[nb] = node;
                    stack.push(nb);
                }
            }
        }
        let mut path = vec![target];
        let mut cur = target;
        while cur != ei {
            cur = parent[cur];
            path.push(cur);
        }
        path.reverse();
        let cell = |p: usize, q: usize| if p < n { (p, q - n) } else { (q, p - n) };
        // Edge k of the path carries sign - for even k.
        let mut theta = f64::INFINITY;
        let mut leave = None;
        for k in (0..path.len() - 1).step_by(2) {
            let (ci, cj) = cell(path[k], path[k + 1]);
            let val = x[ci][cj];
            let better = match leave {
                None => true,
                Some((li, lj)) => val < theta || (bland && val == theta && (ci, cj) < (li, lj)),
            };
            if better {
                theta = val;
                leave = Some((ci, cj));
            }
        }
        let (li, lj) = leave.expect("cycle has a minus edge");
        for k in 0..path.len() - 1 {
            let (ci, cj) = cell(path[k], path[k + 1]);
            if k % 2 == 0 {
                x[ci][cj] -= theta;
            } else {
                x[ci][cj] += theta;
            }
        }
        x[ei][ej] = theta;
        x[li][lj] = 0.0;
        basic[li][lj] = false;
        basic[ei][ej] = true;
        let pos = basis.iter().position(|&c| c == (li, lj)).unwrap();
        basis[pos] = (ei, ej);
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        pivots += 1;
    }
    for row in x.iter_mut() {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    let total = x.iter().zip(cost).map(|(xr, cr)| xr.iter().zip(cr).map(|(p, c)| p * c).sum::<f64>()).sum();
    TransportPlan { cost: total, plan: x, pivots }
}

/// Squared extended 2-Wasserstein distance with Euclidean ground cost.
///
/// Returns `+inf` when the total masses differ beyond [`EQUAL_MASS_RTOL`].
pub fn wasserstein_sq(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    wasserstein_sq_capped(mu0, mu1, DEFAULT_SUPPORT_CAP)
}

pub fn wasserstein_sq_capped(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, cap: usize) -> Result<f64> {
    check_dims(mu0, mu1)?;
    let a = mu0.without_null_atoms();
    let b = mu1.without_null_atoms();
    for m in [&a, &b] {
        if m.len() > cap {
            return Err(Error::SupportCapExceeded { size: m.len(), cap });
        }
    }
    let (ma, mb) = (a.total_mass(), b.total_mass());
    if ma == 0.0 && mb == 0.0 {
        return Ok(0.0);
    }
    if (ma - mb).abs() > EQUAL_MASS_RTOL * ma.max(mb) {
        return Ok(f64::INFINITY);
    }
    let cost: Vec<Vec<f64>> = a.points().iter().map(|x| b.points().iter().map(|y| sq_dist(x, y)).collect()).collect();
    let ratio = ma / mb;
    let wb: Vec<f64> = b.weights().iter().map(|w| w * ratio).collect();
    Ok(transport_lp(a.weights(), &wb, &cost).cost)
}
