//! Logarithmic entropy-transport (LET) problems on discrete supports.
//!
//! The primal problem is
//!
//! ```text
//! min_γ  Σ_i Σ_x F(σ_i(x)) μ_i(x) + Σ_{x,y} γ(x,y) c(x,y),   F(s) = s log s - s + 1,
//! ```
//!
//! with `σ_i` the densities of the marginals of `γ` w.r.t. `μ_i`, and the dual is
//!
//! ```text
//! max_φ  Σ_i Σ_x (1 - e^{-2 φ_i(x)}) μ_i(x)   s.t.  φ_0(x) + φ_1(y) <= c(x,y) / 2.
//! ```
//!
//! [`solve_let`] runs log-domain unbalanced Sinkhorn with ε-annealing to find
//! the approximate support of an optimal plan, then polishes it exactly with a
//! primal active-set method over spanning forests of the bipartite support
//! graph. Optimal plans are generically forests, and on a fixed forest the
//! stationarity conditions `σ_0 σ_1 = e^{-c}` have a closed-form solution per
//! connected component.

use serde::{Deserialize, Serialize};

use crate::cone::{cone_dist_radii, let_cost, ConePoint, LetKind};
use crate::error::{invalid, Error, Result};
use crate::measure::{check_dims, dist, hellinger_sq, DiscreteMeasure};
use crate::transport::wasserstein_sq;

/// `F(s) = s log s - s + 1` with `F(0) = 1`.
pub fn entropy_f(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        s * s.ln() - s + 1.0
    }
}

#[derive(Debug, Clone)]
pub struct LetProblem {
    pub mu0: DiscreteMeasure,
    pub mu1: DiscreteMeasure,
    /// `cost[i][j]` between atom `i` of `mu0` and atom `j` of `mu1`; `+inf` forbids the cell.
    pub cost: Vec<Vec<f64>>,
}

impl LetProblem {
    pub fn new(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cost: Vec<Vec<f64>>) -> Result<Self> {
        if cost.len() != mu0.len() || cost.iter().any(|r| r.len() != mu1.len()) {
            return Err(invalid("cost", format!("expected a {}x{} matrix", mu0.len(), mu1.len())));
        }
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c.is_nan() {
                    return Err(Error::NanCost(i, j));
                }
                if c < 0.0 {
                    return Err(invalid("cost", format!("negative entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self { mu0, mu1, cost })
    }

    /// Cost built from a base distance matrix.
    pub fn from_distances(
        mu0: DiscreteMeasure,
        mu1: DiscreteMeasure,
        distances: &[Vec<f64>],
        kind: LetKind,
    ) -> Result<Self> {
        let cost = distances.iter().map(|r| r.iter().map(|&d| let_cost(kind, d)).collect()).collect();
        Self::new(mu0, mu1, cost)
    }

    /// Euclidean base distance multiplied by `scale`.
    pub fn euclidean(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, kind: LetKind, scale: f64) -> Result<Self> {
        check_dims(mu0, mu1)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", format!("{scale} must be > 0")));
        }
        let cost = mu0
            .points()
            .iter()
            .map(|x| mu1.points().iter().map(|y| let_cost(kind, scale * dist(x, y))).collect())
            .collect();
        Self::new(mu0.clone(), mu1.clone(), cost)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LetSolution {
    pub plan: Vec<Vec<f64>>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub epsilon_final: f64,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub eps_start: f64,
    pub eps_final: f64,
    pub eps_factor: f64,
    pub max_iter_per_level: usize,
    pub max_iter_final: usize,
    pub sinkhorn_tol: f64,
    /// Run the exact active-set polish after Sinkhorn.
    pub polish: bool,
    pub max_pivots: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_start: 1.0,
            eps_final: 1e-3,
            eps_factor: 0.7,
            max_iter_per_level: 50,
            max_iter_final: 500,
            sinkhorn_tol: 1e-9,
            polish: true,
            max_pivots: 100_000,
        }
    }
}

/// Active sub-problem: positive atoms with at least one finite cell.
struct Reduced {
    rows: Vec<usize>,
    cols: Vec<usize>,
    w0: Vec<f64>,
    w1: Vec<f64>,
    cost: Vec<Vec<f64>>,
}

impl Reduced {
    fn new(p: &LetProblem) -> Self {
        let w0 = p.mu0.weights();
        let w1 = p.mu1.weights();
        let rows: Vec<usize> = (0..w0.len())
            .filter(|&i| w0[i] > 0.0 && (0..w1.len()).any(|j| w1[j] > 0.0 && p.cost[i][j].is_finite()))
            .collect();
        let cols: Vec<usize> =
            (0..w1.len()).filter(|&j| w1[j] > 0.0 && rows.iter().any(|&i| p.cost[i][j].is_finite())).collect();
        let cost = rows.iter().map(|&i| cols.iter().map(|&j| p.cost[i][j]).collect()).collect();
        Self { w0: rows.iter().map(|&i| w0[i]).collect(), w1: cols.iter().map(|&j| w1[j]).collect(), rows, cols, cost }
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain unbalanced Sinkhorn with KL marginal penalties of unit strength.
///
/// Returns the entropic plan at the final ε and the number of sweeps.
fn sinkhorn(r: &Reduced, cfg: &SolverConfig) -> (Vec<Vec<f64>>, usize, f64) {
    let n = r.w0.len();
    let m = r.w1.len();
    let lw0: Vec<f64> = r.w0.iter().map(|w| w.ln()).collect();
    let lw1: Vec<f64> = r.w1.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut eps = cfg.eps_start.max(cfg.eps_final);
    let mut sweeps = 0;
    loop {
        let last = eps <= cfg.eps_final * (1.0 + 1e-12);
        let cap = if last { cfg.max_iter_final } else { cfg.max_iter_per_level };
        let k = eps / (1.0 + eps);
        for _ in 0..cap {
            sweeps += 1;
            let mut delta: f64 = 0.0;
            for i in 0..n {
                let lse = log_sum_exp((0..m).map(|j| (g[j] - r.cost[i][j]) / eps));
                let nf = k * (lw0[i] - lse);
                delta = delta.max((nf - f[i]).abs());
                f[i] = nf;
            }
            for j in 0..m {
                let lse = log_sum_exp((0..n).map(|i| (f[i] - r.cost[i][j]) / eps));
                let ng = k * (lw1[j] - lse);
                delta = delta.max((ng - g[j]).abs());
                g[j] = ng;
            }
            if delta < cfg.sinkhorn_tol {
                break;
            }
        }
        if last {
            break;
        }
        eps = (eps * cfg.eps_factor).max(cfg.eps_final);
    }
    let plan = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let c = r.cost[i][j];
                    if c.is_finite() {
                        ((f[i] + g[j] - c) / eps).exp()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (plan, sweeps, eps)
}

/// Union-find for Kruskal.
struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Forest of support cells with the current (nonnegative) plan values.
struct Forest {
    n: usize,
    m: usize,
    edges: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

/// Restricted optimum on a forest (signs of the flows unconstrained).
struct ForestOptimum {
    flow: Vec<f64>,
    phi0: Vec<f64>,
    phi1: Vec<f64>,
    component: Vec<usize>,
}

impl Forest {
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // node ids: rows 0..n, cols n..n+m; entries (neighbor, edge index)
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            adj[i].push((self.n + j, e));
            adj[self.n + j].push((i, e));
        }
        adj
    }

    fn solve(&self, r: &Reduced) -> ForestOptimum {
        let (n, m) = (self.n, self.m);
        let adj = self.adjacency();
        let mut pot = vec![0.0; n + m];
        let mut component = vec![usize::MAX; n + m];
        let mut order: Vec<usize> = Vec::with_capacity(n + m);
        let mut parent_edge = vec![usize::MAX; n + m];
        let mut phi = vec![f64::INFINITY; n + m];
        let mut comp_id = 0;
        for root in 0..n + m {
            if component[root] != usize::MAX {
                continue;
            }
            let start = order.len();
            component[root] = comp_id;
            pot[root] = 0.0;
            order.push(root);
            let mut head = start;
            while head < order.len() {
                let v = order[head];
                head += 1;
                for &(nb, e) in &adj[v] {
                    if component[nb] != usize::MAX {
                        continue;
                    }
                    component[nb] = comp_id;
                    parent_edge[nb] = e;
                    let (i, j) = self.edges[e];
                    pot[nb] = 0.5 * r.cost[i][j] - pot[v];
                    order.push(nb);
                }
            }
            let members = &order[start..];
            if members.len() > 1 {
                let la = log_sum_exp(members.iter().filter(|&&v| v < n).map(|&v| r.w0[v].ln() - 2.0 * pot[v]));
                let lb = log_sum_exp(members.iter().filter(|&&v| v >= n).map(|&v| r.w1[v - n].ln() - 2.0 * pot[v]));
                let a = 0.25 * (la - lb);
                for &v in members {
                    phi[v] = if v < n { pot[v] + a } else { pot[v] - a };
                }
            }
            comp_id += 1;
        }
        let target = |v: usize, phi_v: f64| {
            if !phi_v.is_finite() {
                0.0
            } else if v < n {
                r.w0[v] * (-2.0 * phi_v).exp()
            } else {
                r.w1[v - n] * (-2.0 * phi_v).exp()
            }
        };
        let mut residual: Vec<f64> = (0..n + m).map(|v| target(v, phi[v])).collect();
        let mut flow = vec![0.0; self.edges.len()];
        for &v in order.iter().rev() {
            let e = parent_edge[v];
            if e == usize::MAX {
                continue;
            }
            let f = residual[v];
            flow[e] = f;
            let (i, j) = self.edges[e];
            let other = if v < n { n + j } else { i };
            residual[other] -= f;
        }
        ForestOptimum { flow, phi0: phi[..n].to_vec(), phi1: phi[n..].to_vec(), component }
    }

    /// Tree path between two nodes in the same component, as edge indices
    /// ordered from `from` to `to`.
    fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut parent = vec![(usize::MAX, usize::MAX); self.n + self.m];
        parent[from] = (from, usize::MAX);
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                break;
            }
            for &(nb, e) in &adj[v] {
                if parent[nb].0 == usize::MAX {
                    parent[nb] = (v, e);
                    stack.push(nb);
                }
            }
        }
        let mut edges = Vec::new();
        let mut cur = to;
        while cur != from {
            let (p, e) = parent[cur];
            edges.push(e);
            cur = p;
        }
        edges.reverse();
        edges
    }
}

struct Polished {
    plan: Vec<Vec<f64>>,
    phi0: Vec<f64>,
    steps: usize,
}

/// Exact polish by primal active-set steps over forests.
///
/// Works on the reduced problem; `None` when the step budget is exhausted.
fn polish(r: &Reduced, start: &[Vec<f64>], max_steps: usize) -> Option<Polished> {
    let (n, m) = (r.w0.len(), r.w1.len());
    let mut cells: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| r.cost[i][j].is_finite()).collect();
    cells.sort_by(|a, b| start[b.0][b.1].total_cmp(&start[a.0][a.1]));
    let mut dsu = Dsu((0..n + m).collect());
    let mut forest = Forest { n, m, edges: Vec::new(), flow: Vec::new() };
    for &(i, j) in &cells {
        if dsu.union(i, n + j) {
            forest.edges.push((i, j));
            forest.flow.push(start[i][j].max(0.0));
        }
    }
    let scale = r.cost.iter().flatten().filter(|c| c.is_finite()).fold(1.0f64, |a, &c| a.max(c));
    let feas_tol = 1e-13 * scale;
    let mut steps = 0;
    while steps < max_steps {
        steps += 1;
        let opt = forest.solve(r);
        // Move toward the restricted optimum until a flow hits zero.
        let mut t = 1.0;
        let mut blocking = None;
        for (e, (&cur, &target)) in forest.flow.iter().zip(&opt.flow).enumerate() {
            if target < 0.0 {
                let te = cur / (cur - target);
                if te < t {
                    t = te;
                    blocking = Some(e);
                }
            }
        }
        if let Some(b) = blocking {
            for (cur, &target) in forest.flow.iter_mut().zip(&opt.flow) {
                *cur = (*cur + t * (target - *cur)).max(0.0);
            }
            forest.edges.swap_remove(b);
            forest.flow.swap_remove(b);
            continue;
        }
        forest.flow.clone_from(&opt.flow);
        // Most violated dual constraint off the forest.
        let mut in_forest = vec![vec![false; m]; n];
        for &(i, j) in &forest.edges {
            in_forest[i][j] = true;
        }
        let mut worst = None;
        let mut worst_v = feas_tol;
        for &(i, j) in &cells {
            if in_forest[i][j] {
                continue;
            }
            let v = opt.phi0[i] + opt.phi1[j] - 0.5 * r.cost[i][j];
            if v > worst_v {
                worst_v = v;
                worst = Some((i, j));
            }
        }
        let Some((i, j)) = worst else {
            let mut plan = vec![vec![0.0; m]; n];
            for (&(a, b), &f) in forest.edges.iter().zip(&forest.flow) {
                plan[a][b] = f.max(0.0);
            }
            return Some(Polished { plan, phi0: opt.phi0, steps });
        };
        if opt.component[i] != opt.component[n + j] {
            forest.edges.push((i, j));
            forest.flow.push(0.0);
            continue;
        }
        // Push flow around the cycle closed by (i, j); path edges alternate -,+,...
        let path = forest.path(i, n + j);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &e in path.iter().step_by(2) {
            if forest.flow[e] < theta {
                theta = forest.flow[e];
                leave = e;
            }
        }
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                forest.flow[e] = (forest.flow[e] - theta).max(0.0);
            } else {
                forest.flow[e] += theta;
            }
        }
        forest.edges[leave] = (i, j);
        forest.flow[leave] = theta;
    }
    None
}

/// Recovers densities, certified potentials and both objective values from a
/// plan on the full problem.
fn finalize(
    p: &LetProblem,
    plan: Vec<Vec<f64>>,
    phi0_hint: Option<Vec<f64>>,
    iterations: usize,
    epsilon_final: f64,
) -> LetSolution {
    let w0 = p.mu0.weights();
    let w1 = p.mu1.weights();
    let (n, m) = (w0.len(), w1.len());
    let row: Vec<f64> = plan.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..m).map(|j| plan.iter().map(|r| r[j]).sum()).collect();
    let sigma0: Vec<f64> = (0..n).map(|i| if w0[i] > 0.0 { row[i] / w0[i] } else { 0.0 }).collect();
    let sigma1: Vec<f64> = (0..m).map(|j| if w1[j] > 0.0 { col[j] / w1[j] } else { 0.0 }).collect();

    let mut primal = 0.0;
    for i in 0..n {
        primal += w0[i] * entropy_f(sigma0[i]);
    }
    for j in 0..m {
        primal += w1[j] * entropy_f(sigma1[j]);
    }
    for i in 0..n {
        for j in 0..m {
            if plan[i][j] > 0.0 {
                primal += plan[i][j] * p.cost[i][j];
            }
        }
    }

    let pot = |s: f64| if s > 0.0 { -0.5 * s.ln() } else { f64::INFINITY };
    let mut phi0: Vec<f64> = match phi0_hint {
        Some(h) => h,
        None => sigma0.iter().map(|&s| pot(s)).collect(),
    };
    for i in 0..n {
        if w0[i] == 0.0 {
            phi0[i] = f64::INFINITY;
        }
    }
    // Half-cost transform: the largest phi1 feasible against phi0 on the supports.
    let mut phi1 = vec![f64::INFINITY; m];
    for j in 0..m {
        if w1[j] == 0.0 {
            continue;
        }
        for i in 0..n {
            if w0[i] == 0.0 || !p.cost[i][j].is_finite() {
                continue;
            }
            phi1[j] = phi1[j].min(0.5 * p.cost[i][j] - phi0[i]);
        }
    }
    let dual_term = |phi: f64| if phi == f64::INFINITY { 1.0 } else { 1.0 - (-2.0 * phi).exp() };
    let dual: f64 = (0..n).map(|i| w0[i] * dual_term(phi0[i])).sum::<f64>()
        + (0..m).map(|j| w1[j] * dual_term(phi1[j])).sum::<f64>();
    LetSolution {
        plan,
        sigma0,
        sigma1,
        phi0,
        phi1,
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        iterations,
        epsilon_final,
    }
}

pub fn solve_let(p: &LetProblem, tol: f64) -> Result<LetSolution> {
    solve_let_with(p, tol, &SolverConfig::default())
}

pub fn solve_let_with(p: &LetProblem, tol: f64, cfg: &SolverConfig) -> Result<LetSolution> {
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("{tol} must be > 0")));
    }
    let (n, m) = (p.mu0.len(), p.mu1.len());
    let r = Reduced::new(p);
    let mut plan = vec![vec![0.0; m]; n];
    let mut phi0_hint = None;
    let mut iterations = 0;
    let mut eps_final = 0.0;
    if !r.rows.is_empty() && !r.cols.is_empty() {
        let (sk_plan, sweeps, eps) = sinkhorn(&r, cfg);
        iterations = sweeps;
        eps_final = eps;
        let mut reduced_plan = sk_plan;
        if cfg.polish {
            if let Some(Polished { plan: exact, phi0, steps }) = polish(&r, &reduced_plan, cfg.max_pivots) {
                reduced_plan = exact;
                iterations += steps;
                eps_final = 0.0;
                let mut full = vec![f64::INFINITY; n];
                for (k, &i) in r.rows.iter().enumerate() {
                    full[i] = phi0[k];
                }
                phi0_hint = Some(full);
            }
        }
        for (a, &i) in r.rows.iter().enumerate() {
            for (b, &j) in r.cols.iter().enumerate() {
                plan[i][j] = reduced_plan[a][b];
            }
        }
    }
    let sol = finalize(p, plan, phi0_hint, iterations, eps_final);
    if !(sol.gap <= tol * (1.0 + sol.primal_value.abs())) || sol.gap < -1e-9 {
        return Err(Error::NonConvergence { iterations: sol.iterations, gap: sol.gap, solution: Some(Box::new(sol)) });
    }
    Ok(sol)
}

/// Exact solver for tiny supports: barrier-continuation damped Newton on the
/// primal over all finite cells.
pub fn solve_let_newton(p: &LetProblem) -> Result<LetSolution> {
    let r = Reduced::new(p);
    let (n, m) = (p.mu0.len(), p.mu1.len());
    let mut plan = vec![vec![0.0; m]; n];
    if r.rows.is_empty() || r.cols.is_empty() {
        return Ok(finalize(p, plan, None, 0, 0.0));
    }
    let cells: Vec<(usize, usize)> = (0..r.w0.len())
        .flat_map(|i| (0..r.w1.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| r.cost[i][j].is_finite())
        .collect();
    if cells.len() > 64 {
        return Err(Error::SupportCapExceeded { size: cells.len(), cap: 64 });
    }
    let k = cells.len();
    let mut x: Vec<f64> = cells
        .iter()
        .map(|&(i, j)| (r.w0[i] * r.w1[j]).sqrt() * (-0.5 * r.cost[i][j]).exp() / (k as f64))
        .map(|v| v.max(1e-300))
        .collect();
    let objective = |x: &[f64], t: f64| -> Option<f64> {
        if x.iter().any(|&v| v <= 0.0) {
            return None;
        }
        let mut row = vec![0.0; r.w0.len()];
        let mut col = vec![0.0; r.w1.len()];
        let mut val = 0.0;
        for (&(i, j), &v) in cells.iter().zip(x) {
            row[i] += v;
            col[j] += v;
            val += v * r.cost[i][j] - t * v.ln();
        }
        val += row.iter().zip(&r.w0).map(|(s, w)| w * entropy_f(s / w)).sum::<f64>();
        val += col.iter().zip(&r.w1).map(|(s, w)| w * entropy_f(s / w)).sum::<f64>();
        Some(val)
    };
    let mut total_steps = 0;
    let mut t = 1e-2;
    while t >= 1e-15 {
        for _ in 0..200 {
            total_steps += 1;
            let mut row = vec![0.0; r.w0.len()];
            let mut col = vec![0.0; r.w1.len()];
            for (&(i, j), &v) in cells.iter().zip(&x) {
                row[i] += v;
                col[j] += v;
            }
            let grad: Vec<f64> = cells
                .iter()
                .zip(&x)
                .map(|(&(i, j), &v)| (row[i] / r.w0[i]).ln() + (col[j] / r.w1[j]).ln() + r.cost[i][j] - t / v)
                .collect();
            let mut h = vec![vec![0.0; k]; k];
            for a in 0..k {
                for b in 0..k {
                    let (ia, ja) = cells[a];
                    let (ib, jb) = cells[b];
                    if ia == ib {
                        h[a][b] += 1.0 / row[ia];
                    }
                    if ja == jb {
                        h[a][b] += 1.0 / col[ja];
                    }
                }
                h[a][a] += t / (x[a] * x[a]);
            }
            let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            let Some(dir) = solve_dense(h, rhs) else { break };
            let decrement: f64 = -dir.iter().zip(&grad).map(|(d, g)| d * g).sum::<f64>();
            if decrement < 1e-30 {
                break;
            }
            let f0 = objective(&x, t).unwrap();
            let mut step = 1.0;
            // keep strictly positive
            for (v, d) in x.iter().zip(&dir) {
                if *d < 0.0 {
                    step = f64::min(step, -0.99 * v / d);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + step * d).collect();
                if let Some(f1) = objective(&trial, t) {
                    if f1 <= f0 - 0.25 * step * decrement {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        t *= 0.1;
    }
    for (&(a, b), &v) in cells.iter().zip(&x) {
        plan[r.rows[a]][r.cols[b]] = v;
    }
    Ok(finalize(p, plan, None, total_steps, 0.0))
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Squared GHK distance: LET with cost `|x - y|^2`.
pub fn ghk_sq(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, tol: f64) -> Result<f64> {
    let p = LetProblem::euclidean(mu0, mu1, LetKind::Ghk, 1.0)?;
    Ok(solve_let(&p, tol)?.primal_value)
}

/// Squared HK distance: LET with cost `-log cos^2(|x - y| ∧ pi/2)`.
pub fn hk_sq(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, tol: f64) -> Result<f64> {
    hk_sq_scaled(mu0, mu1, 1.0, tol)
}

/// `HK_{λ d}^2`: HK over the base distance scaled by `lambda`.
pub fn hk_sq_scaled(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, lambda: f64, tol: f64) -> Result<f64> {
    let p = LetProblem::euclidean(mu0, mu1, LetKind::Hk, lambda)?;
    Ok(solve_let(&p, tol)?.primal_value)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    /// max of `e^{-c} - σ0 σ1` over charged pairs with finite cost
    pub lower_bound_violation: f64,
    /// max of `|σ0 σ1 - e^{-c}|` over cells carrying plan mass
    pub support_violation: f64,
    pub gap: f64,
    pub gap_bound: f64,
    /// max of `φ0 + φ1 - c/2` over the supports
    pub dual_infeasibility: f64,
    pub mass_threshold: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Checks the optimality conditions of a candidate solution. Failures are
/// reported, never raised.
pub fn verify_optimality(p: &LetProblem, s: &LetSolution, tol: f64) -> CertificateReport {
    let w0 = p.mu0.weights();
    let w1 = p.mu1.weights();
    let max_plan = s.plan.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let mass_threshold = 1e-9 * max_plan.max(f64::MIN_POSITIVE);
    let mut prima: f64 = 0.0;
    let mut seconda: f64 = 0.0;
    let mut infeas: f64 = f64::NEG_INFINITY;
    for i in 0..w0.len() {
        for j in 0..w1.len() {
            let c = p.cost[i][j];
            if w0[i] == 0.0 || w1[j] == 0.0 || !c.is_finite() {
                continue;
            }
            let target = (-c).exp();
            let prod = s.sigma0[i] * s.sigma1[j];
            if s.sigma0[i] > 0.0 && s.sigma1[j] > 0.0 {
                prima = prima.max(target - prod);
            }
            if s.plan[i][j] > mass_threshold {
                seconda = seconda.max((prod - target).abs());
            }
            infeas = infeas.max(s.phi0[i] + s.phi1[j] - 0.5 * c);
        }
    }
    let infeas = if infeas == f64::NEG_INFINITY { 0.0 } else { infeas };
    let gap_bound = tol * (1.0 + s.primal_value.abs());
    let passed = prima <= tol && seconda <= tol && s.gap <= gap_bound && s.gap >= -1e-9 && infeas <= tol;
    CertificateReport {
        lower_bound_violation: prima,
        support_violation: seconda,
        gap: s.gap,
        gap_bound,
        dual_infeasibility: infeas,
        mass_threshold,
        tol,
        passed,
    }
}

/// A weighted pair of cone points in a cone plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConePair {
    pub source: ConePoint,
    pub target: ConePoint,
    /// Index of the source atom in `mu0` (None when the source is the vertex).
    pub source_atom: Option<usize>,
    pub target_atom: Option<usize>,
    pub weight: f64,
    /// Base angle entering the cone distance: `arccos(e^{-c/2})`.
    pub angle: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConePlan {
    pub pairs: Vec<ConePair>,
}

impl ConePlan {
    /// 2-homogeneous marginals `x_#(r^2 α)` on the atoms of each input measure.
    pub fn homogeneous_marginals(&self, n0: usize, n1: usize) -> (Vec<f64>, Vec<f64>) {
        let mut h0 = vec![0.0; n0];
        let mut h1 = vec![0.0; n1];
        for pair in &self.pairs {
            if let Some(i) = pair.source_atom {
                h0[i] += pair.weight * pair.source.radius * pair.source.radius;
            }
            if let Some(j) = pair.target_atom {
                h1[j] += pair.weight * pair.target.radius * pair.target.radius;
            }
        }
        (h0, h1)
    }

    /// `∫ ϱ_{π,C}^2 dα` with the transformed base angle.
    pub fn cone_cost(&self) -> f64 {
        self.pairs
            .iter()
            .map(|pair| {
                let d = cone_dist_radii(std::f64::consts::PI, pair.source.radius, pair.target.radius, pair.angle)
                    .unwrap_or(f64::NAN);
                pair.weight * d * d
            })
            .sum()
    }
}

/// Lifts an optimal LET plan to a plan on the cone with radii `σ_i^{-1/2}`.
///
/// Atoms left uncharged by the plan are paired with the vertex so that the
/// homogeneous marginals reproduce both measures.
pub fn lift_to_cone(p: &LetProblem, s: &LetSolution) -> Result<ConePlan> {
    let dim = p.mu0.dim();
    let mut pairs = Vec::new();
    let w0 = p.mu0.weights();
    let w1 = p.mu1.weights();
    let row: Vec<f64> = s.plan.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..w1.len()).map(|j| s.plan.iter().map(|r| r[j]).sum()).collect();
    for i in 0..w0.len() {
        if row[i] > 0.0 && !(s.sigma0[i] > 0.0) {
            return Err(Error::ZeroSigma { side: 0, index: i });
        }
    }
    for j in 0..w1.len() {
        if col[j] > 0.0 && !(s.sigma1[j] > 0.0) {
            return Err(Error::ZeroSigma { side: 1, index: j });
        }
    }
    for i in 0..w0.len() {
        for j in 0..w1.len() {
            let g = s.plan[i][j];
            if g <= 0.0 {
                continue;
            }
            let c = p.cost[i][j];
            pairs.push(ConePair {
                source: ConePoint::new(p.mu0.points()[i].clone(), s.sigma0[i].powf(-0.5))?,
                target: ConePoint::new(p.mu1.points()[j].clone(), s.sigma1[j].powf(-0.5))?,
                source_atom: Some(i),
                target_atom: Some(j),
                weight: g,
                angle: (-0.5 * c).exp().clamp(-1.0, 1.0).acos(),
            });
        }
    }
    for i in 0..w0.len() {
        if row[i] == 0.0 && w0[i] > 0.0 {
            pairs.push(ConePair {
                source: ConePoint::new(p.mu0.points()[i].clone(), w0[i].sqrt())?,
                target: ConePoint::vertex(dim),
                source_atom: Some(i),
                target_atom: None,
                weight: 1.0,
                angle: 0.0,
            });
        }
    }
    for j in 0..w1.len() {
        if col[j] == 0.0 && w1[j] > 0.0 {
            pairs.push(ConePair {
                source: ConePoint::vertex(dim),
                target: ConePoint::new(p.mu1.points()[j].clone(), w1[j].sqrt())?,
                source_atom: None,
                target_atom: Some(j),
                weight: 1.0,
                angle: 0.0,
            });
        }
    }
    Ok(ConePlan { pairs })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitRow {
    pub lambda: f64,
    /// `HK_{λd}^2`
    pub hk_dilated_sq: f64,
    /// `λ^2 HK_{d/λ}^2`
    pub hk_contracted_sq: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitTable {
    pub rows: Vec<LimitRow>,
    pub hellinger_sq: f64,
    /// `+inf` for unequal masses.
    pub wasserstein_sq: f64,
    pub dilated_monotone: bool,
    pub contracted_monotone: bool,
}

/// Monotonicity slack for the scaling ladders.
pub const LIMIT_MONOTONE_SLACK: f64 = 1e-8;

/// Scaling ladders `λ -> HK_{λd}^2` (increasing to He^2) and
/// `λ -> λ^2 HK_{d/λ}^2` (increasing to W^2).
pub fn limit_diagnostics(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    lambdas: &[f64],
    tol: f64,
) -> Result<LimitTable> {
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(invalid("lambda_grid", "must be positive and strictly increasing"));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        rows.push(LimitRow {
            lambda,
            hk_dilated_sq: hk_sq_scaled(mu0, mu1, lambda, tol)?,
            hk_contracted_sq: lambda * lambda * hk_sq_scaled(mu0, mu1, 1.0 / lambda, tol)?,
        });
    }
    let mono = |f: fn(&LimitRow) -> f64| {
        rows.windows(2).all(|w| f(&w[1]) >= f(&w[0]) - LIMIT_MONOTONE_SLACK * (1.0 + f(&w[0]).abs()))
    };
    let dilated_monotone = mono(|r| r.hk_dilated_sq);
    let contracted_monotone = mono(|r| r.hk_contracted_sq);
    Ok(LimitTable {
        hellinger_sq: hellinger_sq(mu0, mu1)?,
        wasserstein_sq: wasserstein_sq(mu0, mu1)?,
        rows,
        dilated_monotone,
        contracted_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_atom_value(a: f64, b: f64, c: f64) -> f64 {
        a + b - 2.0 * (a * b).sqrt() * (-0.5 * c).exp()
    }

    #[test]
    fn single_atoms_closed_form() {
        for &(a, b, d) in &[(1.0, 1.0, 0.5), (2.0, 0.3, 1.2), (0.1, 5.0, 0.0), (1.0, 4.0, 3.0)] {
            let mu0 = DiscreteMeasure::on_line(&[0.0], &[a]).unwrap();
            let mu1 = DiscreteMeasure::on_line(&[d], &[b]).unwrap();
            let v = ghk_sq(&mu0, &mu1, 1e-10).unwrap();
            assert!((v - single_atom_value(a, b, d * d)).abs() < 1e-9, "{v}");
            let h = hk_sq(&mu0, &mu1, 1e-10).unwrap();
            let expect = if d >= std::f64::consts::FRAC_PI_2 { a + b } else { a + b - 2.0 * (a * b).sqrt() * d.cos() };
            assert!((h - expect).abs() < 1e-9, "{h} vs {expect}");
        }
    }

    #[test]
    fn zero_measures() {
        let z = DiscreteMeasure::zero(1);
        let mu = DiscreteMeasure::on_line(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(ghk_sq(&z, &z, 1e-9).unwrap(), 0.0);
        assert!((ghk_sq(&z, &mu, 1e-9).unwrap() - 3.0).abs() < 1e-12);
        assert!((hk_sq(&mu, &z, 1e-9).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mu = DiscreteMeasure::on_line(&[0.0, 0.7, 2.0], &[1.0, 0.5, 2.0]).unwrap();
        assert!(ghk_sq(&mu, &mu, 1e-10).unwrap().abs() < 1e-9);
        assert!(hk_sq(&mu, &mu, 1e-10).unwrap().abs() < 1e-9);
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> DiscreteMeasure {
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
        let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        DiscreteMeasure::on_line(&xs, &ws).unwrap()
    }

    #[test]
    fn matches_newton_oracle_on_small_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..60 {
            let n0 = 1 + case % 3;
            let n1 = 1 + (case / 3) % 3;
            let mu0 = random_measure(&mut rng, n0, 1.5);
            let mu1 = random_measure(&mut rng, n1, 1.5);
            for kind in [LetKind::Ghk, LetKind::Hk] {
                let p = LetProblem::euclidean(&mu0, &mu1, kind, 1.0).unwrap();
                let fast = solve_let(&p, 1e-9).unwrap();
                let slow = solve_let_newton(&p).unwrap();
                assert!(
                    (fast.primal_value - slow.primal_value).abs() < 1e-8,
                    "case {case} {kind:?}: {} vs {}",
                    fast.primal_value,
                    slow.primal_value
                );
                let cert = verify_optimality(&p, &fast, 1e-6);
                assert!(cert.passed, "{cert:?}");
            }
        }
    }

    #[test]
    fn perturbed_solution_fails_certificate() {
        let mu0 = DiscreteMeasure::on_line(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[0.3, 1.4], &[1.5, 0.5]).unwrap();
        let p = LetProblem::euclidean(&mu0, &mu1, LetKind::Ghk, 1.0).unwrap();
        let mut s = solve_let(&p, 1e-10).unwrap();
        s.sigma0[0] *= 1.1;
        assert!(!verify_optimality(&p, &s, 1e-6).passed);
    }

    #[test]
    fn cone_lift_reproduces_marginals_and_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [LetKind::Ghk, LetKind::Hk] {
            let mu0 = random_measure(&mut rng, 5, 3.0);
            let mu1 = random_measure(&mut rng, 4, 3.0);
            let p = LetProblem::euclidean(&mu0, &mu1, kind, 1.0).unwrap();
            let s = solve_let(&p, 1e-10).unwrap();
            let cone = lift_to_cone(&p, &s).unwrap();
            let (h0, h1) = cone.homogeneous_marginals(mu0.len(), mu1.len());
            for (h, w) in h0.iter().zip(mu0.weights()).chain(h1.iter().zip(mu1.weights())) {
                assert!((h - w).abs() < 1e-9, "{h} vs {w}");
            }
            assert!((cone.cone_cost() - s.primal_value).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_nan_cost() {
        let mu = DiscreteMeasure::on_line(&[0.0], &[1.0]).unwrap();
        let err = LetProblem::new(mu.clone(), mu, vec![vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NanCost(0, 0)));
    }

    #[test]
    fn dense_solver_roundtrip() {
        let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]];
        let x = solve_dense(a.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        for (row, b) in a.iter().zip([1.0, 2.0, 3.0]) {
            let s: f64 = row.iter().zip(&x).map(|(r, v)| r * v).sum();
            assert!((s - b).abs() < 1e-12);
        }
    }
}
