//! Log-Nash-welfare quantity allocation.
//!
//! With midpoint pricing each feasible buyer/seller pair splits its unit
//! surplus `g` evenly, so a flow `x` gives both sides `g/2 * x`. The program
//!
//! ```text
//! maximize   sum_b log(U_b + eps) + sum_s log(U_s + eps)
//! subject to x >= 0, per-buyer flow <= buyer cap, per-seller flow <= seller cap
//! ```
//!
//! is concave. [`solve_allocation`] starts from a log-barrier Newton
//! solution and finishes with spectral projected-gradient ascent
//! (Barzilai-Borwein steps, nonmonotone Armijo backtracking). The feasible set
//! is the intersection of two products of capped simplices, one per buyer and
//! one per seller. Projection onto it solves the small dual problem in the cap
//! multipliers by projected Newton, with Dykstra's alternating scheme as a
//! fallback. [`oracle_allocation`] is a lattice brute force for tiny instances.

use serde::{Deserialize, Serialize};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSurplus {
    pub buyer: usize,
    pub seller: usize,
    /// Bid minus ask, per kWh. Nonnegative.
    pub surplus: f64,
}

/// One clearing round's allocation program over feasible pairs only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub buyer_caps: Vec<f64>,
    pub seller_caps: Vec<f64>,
    pub pairs: Vec<PairSurplus>,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Flow per entry of `AllocationProblem::pairs`.
    pub flows: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Infinity norm of the unit-step projected gradient at `flows`.
    pub projected_gradient_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("allocation problem has no feasible pairs")]
    NoFeasiblePairs,
    #[error("no convergence after {} iterations (projected gradient {:.3e})", best.iterations, best.projected_gradient_norm)]
    NonConvergence { best: Allocation },
    #[error("oracle supports at most 3 buyers and 3 sellers, got {buyers}x{sellers}")]
    ProblemTooLarge { buyers: usize, sellers: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

impl AllocationProblem {
    /// Builds a problem from a dense surplus matrix; `None` marks an infeasible pair.
    pub fn from_dense(
        buyer_caps: Vec<f64>,
        seller_caps: Vec<f64>,
        surplus: &[Vec<Option<f64>>],
    ) -> Self {
        let mut pairs = Vec::new();
        for (i, row) in surplus.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                if let Some(g) = *g {
                    pairs.push(PairSurplus {
                        buyer: i,
                        seller: j,
                        surplus: g,
                    });
                }
            }
        }
        Self {
            buyer_caps,
            seller_caps,
            pairs,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if self.pairs.is_empty() {
            return Err(OptimError::NoFeasiblePairs);
        }
        if !(self.epsilon > 0.0) {
            return Err(OptimError::Invalid("epsilon must be positive".into()));
        }
        for c in self.buyer_caps.iter().chain(&self.seller_caps) {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(OptimError::Invalid(format!("bad cap {c}")));
            }
        }
        for p in &self.pairs {
            if p.buyer >= self.buyer_caps.len() || p.seller >= self.seller_caps.len() {
                return Err(OptimError::Invalid("pair index out of range".into()));
            }
            if !(p.surplus.is_finite() && p.surplus >= 0.0) {
                return Err(OptimError::Invalid(format!("bad surplus {}", p.surplus)));
            }
        }
        Ok(())
    }

    /// Buyer and seller utilities under midpoint pricing.
    pub fn utilities(&self, flows: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ub = vec![0.0; self.buyer_caps.len()];
        let mut us = vec![0.0; self.seller_caps.len()];
        for (p, &x) in self.pairs.iter().zip(flows) {
            let half = 0.5 * p.surplus * x;
            ub[p.buyer] += half;
            us[p.seller] += half;
        }
        (ub, us)
    }

    /// Log Nash welfare, including the constant terms of agents without pairs.
    pub fn objective(&self, flows: &[f64]) -> f64 {
        let (ub, us) = self.utilities(flows);
        ub.iter()
            .chain(&us)
            .map(|u| (u + self.epsilon).ln())
            .sum()
    }

    fn gradient_into(&self, flows: &[f64], grad: &mut [f64]) {
        let (ub, us) = self.utilities(flows);
        for (k, p) in self.pairs.iter().enumerate() {
            let h = 0.5 * p.surplus;
            grad[k] = h / (ub[p.buyer] + self.epsilon) + h / (us[p.seller] + self.epsilon);
        }
    }

    pub fn gradient(&self, flows: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.pairs.len()];
        self.gradient_into(flows, &mut g);
        g
    }

    /// Largest violation of nonnegativity or of any buyer/seller cap.
    pub fn constraint_residual(&self, flows: &[f64]) -> f64 {
        let mut rows = vec![0.0; self.buyer_caps.len()];
        let mut cols = vec![0.0; self.seller_caps.len()];
        let mut worst: f64 = 0.0;
        for (p, &x) in self.pairs.iter().zip(flows) {
            worst = worst.max(-x);
            rows[p.buyer] += x;
            cols[p.seller] += x;
        }
        for (s, c) in rows.iter().zip(&self.buyer_caps) {
            worst = worst.max(s - c);
        }
        for (s, c) in cols.iter().zip(&self.seller_caps) {
            worst = worst.max(s - c);
        }
        worst
    }
}

/// Euclidean projection of `v` onto `{x >= 0, sum x <= cap}`, in place.
fn project_capped_simplex(v: &mut [f64], cap: f64, scratch: &mut Vec<f64>) {
    let mut sum = 0.0;
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
        sum += *x;
    }
    if sum <= cap {
        return;
    }
    if cap <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // threshold for the simplex {x >= 0, sum x = cap}
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - cap) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Symmetric system whose leading (buyer) part is block diagonal with
/// `k x k` blocks. Each flow touches one buyer, so every Newton matrix here
/// has this shape; solving through the Schur complement on the trailing
/// (seller) part keeps the dense factorization small.
struct Arrow {
    k: usize,
    lead: usize,
    blocks: Vec<f64>,
    cross: nalgebra::DMatrix<f64>,
    tail: nalgebra::DMatrix<f64>,
}

impl Arrow {
    fn new(k: usize, lead_blocks: usize, tail: usize) -> Self {
        let lead = k * lead_blocks;
        Self {
            k,
            lead,
            blocks: vec![0.0; lead * k],
            cross: nalgebra::DMatrix::zeros(lead, tail),
            tail: nalgebra::DMatrix::zeros(tail, tail),
        }
    }

    fn entry(&mut self, i: usize, j: usize) -> Option<&mut f64> {
        let (k, lead) = (self.k, self.lead);
        match (i < lead, j < lead) {
            (true, true) => {
                debug_assert_eq!(i / k, j / k, "coupling outside a leading block");
                Some(&mut self.blocks[(i / k) * k * k + (i % k) * k + j % k])
            }
            (true, false) => Some(&mut self.cross[(i, j - lead)]),
            // lower triangle of the cross part is implied by symmetry
            (false, true) => None,
            (false, false) => Some(&mut self.tail[(i - lead, j - lead)]),
        }
    }

    /// Adds `v` at `(i, j)`; callers add both orders of an off-diagonal pair.
    fn add(&mut self, i: usize, j: usize, v: f64) {
        if let Some(e) = self.entry(i, j) {
            *e += v;
        }
    }

    fn diag(&mut self, i: usize) -> &mut f64 {
        self.entry(i, i).expect("diagonal entry")
    }

    /// Solves the system, or `None` if it is not positive definite.
    fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let (k, lead) = (self.k, self.lead);
        let tail = self.tail.nrows();
        let mut inv = vec![0.0; self.blocks.len()];
        for (blk, out) in self.blocks.chunks(k * k).zip(inv.chunks_mut(k * k)) {
            match k {
                1 if blk[0] > 0.0 => out[0] = 1.0 / blk[0],
                2 => {
                    let det = blk[0] * blk[3] - blk[1] * blk[2];
                    if !(blk[0] > 0.0 && det > 0.0) {
                        return None;
                    }
                    out.copy_from_slice(&[blk[3] / det, -blk[1] / det, -blk[2] / det, blk[0] / det]);
                }
                _ => return None,
            }
        }
        // binv_c = B^-1 C and binv_r = B^-1 r_lead, block by block
        let mut binv_c = nalgebra::DMatrix::<f64>::zeros(lead, tail);
        let mut binv_r = vec![0.0; lead];
        for b in 0..lead / k {
            let o = b * k;
            let m = &inv[b * k * k..(b + 1) * k * k];
            for r in 0..k {
                for c in 0..k {
                    let w = m[r * k + c];
                    binv_r[o + r] += w * rhs[o + c];
                    for j in 0..tail {
                        binv_c[(o + r, j)] += w * self.cross[(o + c, j)];
                    }
                }
            }
        }
        let mut rhs_tail = nalgebra::DVector::from_iterator(tail, rhs[lead..].iter().copied());
        self.tail -= self.cross.transpose() * &binv_c;
        rhs_tail -= self.cross.transpose() * nalgebra::DVector::from_column_slice(&binv_r);
        let x_tail = self.tail.cholesky()?.solve(&rhs_tail);
        let x_lead = nalgebra::DVector::from_vec(binv_r) - binv_c * &x_tail;
        Some(x_lead.iter().chain(x_tail.iter()).copied().collect())
    }
}

/// Index groups and scratch buffers for repeated projections onto one problem's polytope.
struct Projector<'a> {
    prob: &'a AllocationProblem,
    by_buyer: Vec<Vec<usize>>,
    by_seller: Vec<Vec<usize>>,
    group: Vec<f64>,
    scratch: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    z: Vec<f64>,
    prev: Vec<f64>,
    /// Cap multipliers from the last projection, buyers then sellers.
    dual: Vec<f64>,
}

impl<'a> Projector<'a> {
    fn new(prob: &'a AllocationProblem) -> Self {
        let mut by_buyer = vec![Vec::new(); prob.buyer_caps.len()];
        let mut by_seller = vec![Vec::new(); prob.seller_caps.len()];
        for (k, p) in prob.pairs.iter().enumerate() {
            by_buyer[p.buyer].push(k);
            by_seller[p.seller].push(k);
        }
        let n = prob.pairs.len();
        Self {
            prob,
            by_buyer,
            by_seller,
            group: Vec::new(),
            scratch: Vec::new(),
            p: vec![0.0; n],
            q: vec![0.0; n],
            z: vec![0.0; n],
            prev: vec![0.0; n],
            dual: vec![0.0; prob.buyer_caps.len() + prob.seller_caps.len()],
        }
    }

    fn project_groups(
        groups: &[Vec<usize>],
        caps: &[f64],
        x: &mut [f64],
        group: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        for (members, &cap) in groups.iter().zip(caps) {
            if members.is_empty() {
                continue;
            }
            group.clear();
            group.extend(members.iter().map(|&k| x[k]));
            project_capped_simplex(group, cap, scratch);
            for (&k, &v) in members.iter().zip(group.iter()) {
                x[k] = v;
            }
        }
    }

    /// Projects `y` onto the feasible polytope; the result is exactly feasible.
    fn project(&mut self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
        // Cheap exit when y is already feasible.
        if self.prob.constraint_residual(out) <= 0.0 {
            return;
        }
        if !self.project_dual(y, out) {
            self.dual.iter_mut().for_each(|v| *v = 0.0);
            self.project_dykstra(y, out);
        }
        self.repair(out);
    }

    /// `out = max(0, y - alpha_b - beta_s)`; returns the dual objective.
    fn primal_from_dual(&self, y: &[f64], dual: &[f64], out: &mut [f64]) -> f64 {
        let nb = self.prob.buyer_caps.len();
        let mut phi = 0.0;
        for (k, p) in self.prob.pairs.iter().enumerate() {
            let v = (y[k] - dual[p.buyer] - dual[nb + p.seller]).max(0.0);
            out[k] = v;
            phi += 0.5 * v * v;
        }
        let caps = self.prob.buyer_caps.iter().chain(&self.prob.seller_caps);
        phi + caps.zip(dual).map(|(c, l)| c * l).sum::<f64>()
    }

    /// Dual gradient (cap minus group flow) and the complementarity residual.
    fn dual_residual(&self, caps: &[f64], dual: &[f64], flows: &[f64], grad: &mut [f64]) -> f64 {
        let nb = self.prob.buyer_caps.len();
        grad.copy_from_slice(caps);
        for (k, p) in self.prob.pairs.iter().enumerate() {
            grad[p.buyer] -= flows[k];
            grad[nb + p.seller] -= flows[k];
        }
        dual.iter().zip(grad.iter()).fold(0.0f64, |a, (l, g)| a.max(l.min(*g).abs()))
    }

    /// Projected Newton on the dual of the projection QP, one multiplier per
    /// cap. Warm-started from the previous call's multipliers. Returns false
    /// if it stalls well short of complementarity.
    fn project_dual(&mut self, y: &[f64], out: &mut [f64]) -> bool {
        let nb = self.prob.buyer_caps.len();
        let m = nb + self.prob.seller_caps.len();
        let caps: Vec<f64> = self.prob.buyer_caps.iter().chain(&self.prob.seller_caps).copied().collect();
        let scale = caps.iter().fold(1.0f64, |a, c| a.max(*c)) + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut dual = std::mem::take(&mut self.dual);
        dual.iter_mut().for_each(|l| *l = l.max(0.0));
        let mut trial = vec![0.0; m];
        let mut grad = vec![0.0; m];
        let mut buf = vec![0.0; out.len()];
        let mut kink = vec![f64::NEG_INFINITY; m];
        let mut phi = self.primal_from_dual(y, &dual, out);
        let mut trial_grad = vec![0.0; m];
        let mut res = f64::INFINITY;
        for _ in 0..200 {
            res = self.dual_residual(&caps, &dual, out, &mut grad);
            if res <= 1e-15 * scale {
                break;
            }
            // multipliers held at zero this round
            let eps_act = res.min(1e-8 * scale);
            let mut held: Vec<bool> = (0..m).map(|l| dual[l] <= eps_act && grad[l] > 0.0).collect();
            let mut dir = vec![0.0; m];
            let mut solved = false;
            for _ in 0..=m {
                let free: Vec<usize> = (0..m).filter(|&l| !held[l]).collect();
                let mut pos = vec![usize::MAX; m];
                for (i, &l) in free.iter().enumerate() {
                    pos[l] = i;
                }
                let nf = free.len();
                let lead = free.iter().filter(|&&l| l < nb).count();
                let mut h = Arrow::new(1, lead, nf - lead);
                for (k, p) in self.prob.pairs.iter().enumerate() {
                    if out[k] <= 0.0 {
                        continue;
                    }
                    let (a, b) = (pos[p.buyer], pos[nb + p.seller]);
                    if a != usize::MAX {
                        h.add(a, a, 1.0);
                    }
                    if b != usize::MAX {
                        h.add(b, b, 1.0);
                    }
                    if a != usize::MAX && b != usize::MAX {
                        h.add(a, b, 1.0);
                        h.add(b, a, 1.0);
                    }
                }
                // Levenberg-Marquardt ridge. A group with no positive flow is
                // locally linear; it jumps to its first kink instead.
                let ridge = (res / scale).clamp(1e-12, 1.0);
                let mut linear = vec![false; m];
                for (i, &l) in free.iter().enumerate() {
                    let d = h.diag(i);
                    if *d == 0.0 {
                        linear[l] = true;
                        *d = 1.0;
                    } else {
                        *d += ridge;
                    }
                }
                let rhs: Vec<f64> = free.iter().map(|&l| -grad[l]).collect();
                let Some(d_free) = h.solve(&rhs) else { break };
                for l in 0..m {
                    dir[l] = if held[l] { -grad[l] } else { d_free[pos[l]] };
                }
                for (k, p) in self.prob.pairs.iter().enumerate() {
                    for (l, other) in [(p.buyer, nb + p.seller), (nb + p.seller, p.buyer)] {
                        if linear[l] {
                            kink[l] = kink[l].max(y[k] - dual[other]);
                        }
                    }
                }
                for l in 0..m {
                    if linear[l] && kink[l].max(0.0) < dual[l] {
                        dir[l] = kink[l].max(0.0) - dual[l];
                    }
                    kink[l] = f64::NEG_INFINITY;
                }
                // a multiplier at its bound that the step would push below zero is held too
                let mut changed = false;
                for l in 0..m {
                    if !held[l] && dual[l] <= eps_act && dir[l] < 0.0 {
                        held[l] = true;
                        changed = true;
                    }
                }
                if !changed {
                    solved = true;
                    break;
                }
            }
            if !solved {
                break;
            }
            let newton_slope: f64 = (0..m).filter(|&l| !held[l]).map(|l| -grad[l] * dir[l]).sum();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                for l in 0..m {
                    trial[l] = (dual[l] + t * dir[l]).max(0.0);
                }
                let phi_t = self.primal_from_dual(y, &trial, &mut buf);
                let held_drop: f64 = (0..m).filter(|&l| held[l]).map(|l| grad[l] * (dual[l] - trial[l])).sum();
                let decrease = t * newton_slope + held_drop;
                // near the solution the objective change drowns in round-off
                let armijo = decrease > 0.0 && phi_t <= phi - 1e-4 * decrease;
                if armijo || self.dual_residual(&caps, &trial, &buf, &mut trial_grad) < 0.5 * res {
                    std::mem::swap(&mut dual, &mut trial);
                    out.copy_from_slice(&buf);
                    phi = phi_t;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        self.dual = dual;
        // stalling at round-off is fine; stalling far from it is not
        res <= 1e-9 * scale
    }

    /// Dykstra's alternating projections; slow but dependable.
    fn project_dykstra(&mut self, y: &[f64], out: &mut [f64]) {
        let n = y.len();
        out.copy_from_slice(y);
        self.p.iter_mut().for_each(|v| *v = 0.0);
        self.q.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..5000 {
            self.prev.copy_from_slice(out);
            for k in 0..n {
                self.z[k] = out[k] + self.p[k];
            }
            Self::project_groups(
                &self.by_buyer,
                &self.prob.buyer_caps,
                &mut self.z,
                &mut self.group,
                &mut self.scratch,
            );
            for k in 0..n {
                self.p[k] = out[k] + self.p[k] - self.z[k];
                out[k] = self.z[k] + self.q[k];
            }
            Self::project_groups(
                &self.by_seller,
                &self.prob.seller_caps,
                out,
                &mut self.group,
                &mut self.scratch,
            );
            let mut change: f64 = 0.0;
            let mut gap: f64 = 0.0;
            for k in 0..n {
                self.q[k] = self.z[k] + self.q[k] - out[k];
                change = change.max((out[k] - self.prev[k]).abs());
                gap = gap.max((out[k] - self.z[k]).abs());
            }
            if change < 1e-14 && gap < 1e-12 {
                break;
            }
        }
    }

    /// Scales down any over-full buyer or seller so the point is exactly feasible.
    fn repair(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        for (groups, caps) in [
            (&self.by_buyer, &self.prob.buyer_caps),
            (&self.by_seller, &self.prob.seller_caps),
        ] {
            for (members, &cap) in groups.iter().zip(caps.iter()) {
                let s: f64 = members.iter().map(|&k| x[k]).sum();
                if s > cap {
                    let f = if s > 0.0 { cap / s } else { 0.0 };
                    for &k in members {
                        x[k] *= f;
                    }
                    // guard against rounding leaving the sum a hair above cap
                    let s2: f64 = members.iter().map(|&k| x[k]).sum();
                    if s2 > cap {
                        let shave = (s2 - cap) / members.len() as f64;
                        for &k in members {
                            x[k] = (x[k] - shave).max(0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Proportional-to-surplus starting point, scaled to touch the first binding cap.
fn warm_start(prob: &AllocationProblem) -> Vec<f64> {
    let mut rows = vec![0.0; prob.buyer_caps.len()];
    let mut cols = vec![0.0; prob.seller_caps.len()];
    for p in &prob.pairs {
        rows[p.buyer] += p.surplus;
        cols[p.seller] += p.surplus;
    }
    let mut scale = f64::INFINITY;
    for (s, c) in rows.iter().zip(&prob.buyer_caps).chain(cols.iter().zip(&prob.seller_caps)) {
        if *s > 0.0 {
            scale = scale.min(c / s);
        }
    }
    if !scale.is_finite() {
        scale = 0.0;
    }
    prob.pairs.iter().map(|p| p.surplus * scale).collect()
}

/// Primal log-barrier Newton method. Each Newton system is solved through
/// the Woodbury identity on the few cap and utility rows, so the cost per
/// step is cubic in the number of agents, not in the number of pairs.
/// Returns a strictly feasible point near the optimum, or `None` if a step
/// goes non-finite.
fn interior_point(prob: &AllocationProblem) -> Option<Vec<f64>> {
    let (nb, ns) = (prob.buyer_caps.len(), prob.seller_caps.len());
    let n = prob.pairs.len();
    let caps: Vec<f64> = prob.buyer_caps.iter().chain(&prob.seller_caps).copied().collect();
    // pairs with zero surplus or a zero cap stay at zero flow
    let live: Vec<usize> = (0..n)
        .filter(|&k| {
            let p = &prob.pairs[k];
            p.surplus > 0.0 && caps[p.buyer] > 0.0 && caps[nb + p.seller] > 0.0
        })
        .collect();
    let mut x = vec![0.0; n];
    if live.is_empty() {
        return Some(x);
    }
    let mut deg = vec![0usize; nb + ns];
    for &k in &live {
        deg[prob.pairs[k].buyer] += 1;
        deg[nb + prob.pairs[k].seller] += 1;
    }
    // compact row index per agent with live pairs; cap row r, utility row r + rows
    let mut row = vec![usize::MAX; nb + ns];
    let mut agents = Vec::new();
    for a in 0..nb + ns {
        if deg[a] > 0 {
            row[a] = agents.len();
            agents.push(a);
        }
    }
    let rows = agents.len();
    let r_total = 2 * rows;
    let ends = |k: usize| (prob.pairs[k].buyer, nb + prob.pairs[k].seller);
    for &k in &live {
        let (b, s) = ends(k);
        x[k] = 0.5 * (caps[b] / deg[b] as f64).min(caps[s] / deg[s] as f64);
    }
    let eps = prob.epsilon;

    let state = |x: &[f64], flow: &mut [f64], util: &mut [f64]| {
        flow.iter_mut().for_each(|v| *v = 0.0);
        util.iter_mut().for_each(|v| *v = 0.0);
        for &k in &live {
            let (b, s) = ends(k);
            let h = 0.5 * prob.pairs[k].surplus * x[k];
            flow[row[b]] += x[k];
            flow[row[s]] += x[k];
            util[row[b]] += h;
            util[row[s]] += h;
        }
    };
    let barrier = |x: &[f64], flow: &[f64], util: &[f64], mu: f64| -> f64 {
        let mut f = 0.0;
        for (i, &a) in agents.iter().enumerate() {
            let slack = caps[a] - flow[i];
            if slack <= 0.0 {
                return f64::NEG_INFINITY;
            }
            f += (util[i] + eps).ln() + mu * slack.ln();
        }
        for &k in &live {
            if x[k] <= 0.0 {
                return f64::NEG_INFINITY;
            }
            f += mu * x[k].ln();
        }
        f
    };

    let mut flow = vec![0.0; rows];
    let mut util = vec![0.0; rows];
    let mut trial_flow = vec![0.0; rows];
    let mut trial_util = vec![0.0; rows];
    let mut grad = vec![0.0; n];
    let mut dinv = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut trial = x.clone();
    let mut mu = 0.1;
    while mu > 1e-10 {
        for _ in 0..60 {
            state(&x, &mut flow, &mut util);
            let f = barrier(&x, &flow, &util, mu);
            let mut m = nalgebra::DMatrix::<f64>::zeros(r_total, r_total);
            for (i, &a) in agents.iter().enumerate() {
                let slack = caps[a] - flow[i];
                m[(i, i)] = slack * slack / mu;
                m[(rows + i, rows + i)] = (util[i] + eps).powi(2);
            }
            let mut ay = nalgebra::DVector::<f64>::zeros(r_total);
            for &k in &live {
                let (b, s) = ends(k);
                let (rb, rs) = (row[b], row[s]);
                let h = 0.5 * prob.pairs[k].surplus;
                grad[k] = h / (util[rb] + eps) + h / (util[rs] + eps) + mu / x[k]
                    - mu / (caps[b] - flow[rb])
                    - mu / (caps[s] - flow[rs]);
                dinv[k] = x[k] * x[k] / mu;
                let idx = [rb, rs, rows + rb, rows + rs];
                let coef = [1.0, 1.0, h, h];
                let y = dinv[k] * grad[k];
                for i in 0..4 {
                    ay[idx[i]] += coef[i] * y;
                    for j in 0..4 {
                        m[(idx[i], idx[j])] += dinv[k] * coef[i] * coef[j];
                    }
                }
            }
            let z = m.cholesky()?.solve(&ay);
            let mut decrement = 0.0;
            for &k in &live {
                let (b, s) = ends(k);
                let (rb, rs) = (row[b], row[s]);
                let h = 0.5 * prob.pairs[k].surplus;
                let back = z[rb] + z[rs] + h * (z[rows + rb] + z[rows + rs]);
                d[k] = dinv[k] * (grad[k] - back);
                decrement += grad[k] * d[k];
            }
            if !decrement.is_finite() {
                return None;
            }
            // loose centering on the way down, tight on the last stage
            if decrement < if mu > 1e-9 { 1e-2 * mu } else { 1e-14 } {
                break;
            }
            // stay strictly inside: fraction to the boundary
            let mut alpha: f64 = 1.0;
            let mut dflow = vec![0.0; rows];
            for &k in &live {
                if d[k] < 0.0 {
                    alpha = alpha.min(-0.99 * x[k] / d[k]);
                }
                let (b, s) = ends(k);
                dflow[row[b]] += d[k];
                dflow[row[s]] += d[k];
            }
            for (i, &a) in agents.iter().enumerate() {
                if dflow[i] > 0.0 {
                    alpha = alpha.min(0.99 * (caps[a] - flow[i]) / dflow[i]);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                for &k in &live {
                    trial[k] = x[k] + alpha * d[k];
                }
                state(&trial, &mut trial_flow, &mut trial_util);
                let ft = barrier(&trial, &trial_flow, &trial_util, mu);
                if ft >= f + 0.25 * alpha * decrement {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            std::mem::swap(&mut x, &mut trial);
        }
        mu *= 0.02;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes log Nash welfare over the allocation polytope.
///
/// On budget exhaustion the best feasible iterate is returned inside
/// [`OptimError::NonConvergence`].
pub fn solve_allocation(prob: &AllocationProblem, opts: SolverOptions) -> Result<Allocation, OptimError> {
    prob.validate()?;
    if !(opts.tol > 0.0) {
        return Err(OptimError::Invalid("tol must be positive".into()));
    }
    let n = prob.pairs.len();
    let mut proj = Projector::new(prob);
    let mut x = vec![0.0; n];
    let start = interior_point(prob).unwrap_or_else(|| warm_start(prob));
    proj.project(&start, &mut x);

    let mut grad = prob.gradient(&x);
    let mut f = prob.objective(&x);
    let mut trial = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut pg = vec![0.0; n];

    const MEMORY: usize = 10;
    let mut history = std::collections::VecDeque::with_capacity(MEMORY);
    history.push_back(f);
    let mut step = 1.0;

    let pg_norm = |proj: &mut Projector, x: &[f64], g: &[f64], buf: &mut Vec<f64>, out: &mut [f64]| {
        buf.clear();
        buf.extend(x.iter().zip(g).map(|(a, b)| a + b));
        proj.project(buf, out);
        out.iter().zip(x).fold(0.0f64, |m, (p, a)| m.max((p - a).abs()))
    };
    let mut buf = Vec::with_capacity(n);

    let mut residual = pg_norm(&mut proj, &x, &grad, &mut buf, &mut pg);
    let mut iterations = 0;
    while residual >= opts.tol && iterations < opts.max_iter {
        iterations += 1;
        for k in 0..n {
            trial[k] = x[k] + step * grad[k];
        }
        proj.project(&trial, &mut dir);
        for k in 0..n {
            dir[k] -= x[k];
        }
        let slope = dot(&grad, &dir);
        if slope <= 0.0 {
            // a long step can lose the ascent property to projection round-off
            if step != 1.0 {
                step = 1.0;
                continue;
            }
            break;
        }
        let reference = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let mut f_new;
        loop {
            for k in 0..n {
                x_new[k] = x[k] + lambda * dir[k];
            }
            f_new = prob.objective(&x_new);
            if f_new >= reference + 1e-4 * lambda * slope || lambda < 1e-12 {
                break;
            }
            lambda *= 0.5;
        }
        prob.gradient_into(&x_new, &mut grad_new);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..n {
            let s = x_new[k] - x[k];
            ss += s * s;
            sy += s * (grad_new[k] - grad[k]);
        }
        step = if sy < 0.0 { (ss / -sy).clamp(1e-10, 1e6) } else { 1e6 };
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        f = f_new;
        if history.len() == MEMORY {
            history.pop_front();
        }
        history.push_back(f);
        residual = pg_norm(&mut proj, &x, &grad, &mut buf, &mut pg);
    }

    let alloc = Allocation {
        objective: prob.objective(&x),
        flows: x,
        iterations,
        projected_gradient_norm: residual,
    };
    if residual < opts.tol {
        Ok(alloc)
    } else {
        Err(OptimError::NonConvergence { best: alloc })
    }
}

/// Exhaustive search over flows that are multiples of `grid_step`.
/// Only for tiny instances: at most 3 buyers and 3 sellers.
pub fn oracle_allocation(prob: &AllocationProblem, grid_step: f64) -> Result<Allocation, OptimError> {
    let (nb, ns) = (prob.buyer_caps.len(), prob.seller_caps.len());
    if nb > 3 || ns > 3 {
        return Err(OptimError::ProblemTooLarge {
            buyers: nb,
            sellers: ns,
        });
    }
    prob.validate()?;
    if !(grid_step > 0.0) {
        return Err(OptimError::Invalid("grid_step must be positive".into()));
    }
    // work in integer lattice units
    let units = |cap: f64| (cap / grid_step + 1e-9).floor() as i64;
    let mut row_left: Vec<i64> = prob.buyer_caps.iter().map(|&c| units(c)).collect();
    let mut col_left: Vec<i64> = prob.seller_caps.iter().map(|&c| units(c)).collect();
    let mut current = vec![0i64; prob.pairs.len()];
    let mut best = (f64::NEG_INFINITY, current.clone());
    let mut flows = vec![0.0; prob.pairs.len()];

    fn recurse(
        k: usize,
        prob: &AllocationProblem,
        grid_step: f64,
        row_left: &mut [i64],
        col_left: &mut [i64],
        current: &mut [i64],
        flows: &mut [f64],
        best: &mut (f64, Vec<i64>),
    ) {
        if k == prob.pairs.len() {
            for (f, &c) in flows.iter_mut().zip(current.iter()) {
                *f = c as f64 * grid_step;
            }
            let obj = prob.objective(flows);
            if obj > best.0 {
                best.0 = obj;
                best.1.copy_from_slice(current);
            }
            return;
        }
        let p = &prob.pairs[k];
        let limit = row_left[p.buyer].min(col_left[p.seller]);
        for v in 0..=limit {
            current[k] = v;
            row_left[p.buyer] -= v;
            col_left[p.seller] -= v;
            recurse(k + 1, prob, grid_step, row_left, col_left, current, flows, best);
            row_left[p.buyer] += v;
            col_left[p.seller] += v;
        }
        current[k] = 0;
    }

    recurse(
        0,
        prob,
        grid_step,
        &mut row_left,
        &mut col_left,
        &mut current,
        &mut flows,
        &mut best,
    );
    let flows: Vec<f64> = best.1.iter().map(|&c| c as f64 * grid_step).collect();
    Ok(Allocation {
        objective: best.0,
        flows,
        iterations: 0,
        projected_gradient_norm: f64::NAN,
    })
}
