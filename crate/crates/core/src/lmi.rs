//! Per-node block LMIs, their Riccati (Schur complement) form, and the
//! linearization into a joint conic problem.
//!
//! Row/column layout of the block matrix for node `i`, in order:
//!
//! | block | rows | diagonal |
//! |---|---|---|
//! | core | `n` | `Z_i` |
//! | weight | `n` | `-I` |
//! | incoming coupling, one per `j` in `S_i` ascending | `q_ij` | `-(1/nu_ij) I` |
//! | outgoing coupling, one per out-neighbor `r` ascending | `q_ri` | `-(1/mu_ri) I` |
//! | parameter deviation (full form only) | `n` | `-(1/pi_i) I` |
//! | leader to `i` (if `d_i`) | `q_i0` | `-(1/nu_i0) I` |
//! | `i` to leader (if `d_bar_i`) | `q_0i` | `-(1/(N mu_0i)) I` |
//!
//! The off-diagonal entries of the first block row are `Y W^{1/2}`,
//! `Y C'` for each coupling, and `Y` for the parameter-deviation block.
//! Empty stacks are omitted.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConsensusConstants, Neighborhoods, NetworkTopology};
use crate::plant::{CouplingShape, LpvPlant, Scenario};
use crate::solver::eig::{lambda_max, spd_inverse, spectral_norm, sqrt_psd};
use crate::solver::{AffineBlock, ConicProblem};

/// Bounds on reciprocal multipliers.
pub const TAU_MIN: f64 = 1e-8;
pub const TAU_MAX: f64 = 1e8;
/// Default lower bound on `Y`.
pub const Y_MIN: f64 = 1e-6;
const Y_ENTRY_BOUND: f64 = 1e6;

/// Positive S-procedure multipliers for every node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MultiplierSet {
    /// `nu_ij`, keyed `(i, j)` for `j` in `S_i`.
    #[serde(with = "crate::serde_mat::pair_map")]
    pub nu: BTreeMap<(usize, usize), f64>,
    /// `mu_ij`, keyed `(i, j)` for `j` in `S_i`.
    #[serde(with = "crate::serde_mat::pair_map")]
    pub mu: BTreeMap<(usize, usize), f64>,
    /// `pi_i` at index `i - 1`; absent in the reduced form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    /// `nu_i0` for followers with `d_i = 1`.
    pub nu_i0: BTreeMap<usize, f64>,
    /// `mu_0i` for followers with `d_bar_i = 1`.
    pub mu_0i: BTreeMap<usize, f64>,
}

impl MultiplierSet {
    /// All multipliers equal to `value`, with the key sets the topology
    /// requires.
    pub fn uniform(topology: &NetworkTopology, value: f64, with_pi: bool) -> Self {
        let mut s = Self::default();
        for i in 1..=topology.n() {
            for j in topology.neighborhoods(i).unwrap().s_phi {
                s.nu.insert((i, j), value);
                s.mu.insert((i, j), value);
            }
            if topology.d(i) {
                s.nu_i0.insert(i, value);
            }
            if topology.d_bar(i) {
                s.mu_0i.insert(i, value);
            }
        }
        if with_pi {
            s.pi = Some(vec![value; topology.n()]);
        }
        s
    }

    /// Key sets must match the topology exactly and every value must be
    /// positive and finite.
    pub fn check(&self, topology: &NetworkTopology, need_pi: bool) -> Result<()> {
        let want = Self::uniform(topology, 1.0, false);
        let same_keys = |a: &BTreeMap<(usize, usize), f64>, b: &BTreeMap<(usize, usize), f64>| a.keys().eq(b.keys());
        if !same_keys(&self.nu, &want.nu) || !same_keys(&self.mu, &want.mu) {
            return Err(Error::KeyMismatch("coupling multipliers do not match the coupling graph".into()));
        }
        if !self.nu_i0.keys().eq(want.nu_i0.keys()) || !self.mu_0i.keys().eq(want.mu_0i.keys()) {
            return Err(Error::KeyMismatch("leader multipliers do not match d / d_bar".into()));
        }
        match (&self.pi, need_pi) {
            (None, true) => return Err(Error::MissingMultiplier("pi".into())),
            (Some(p), _) if p.len() != topology.n() => {
                return Err(Error::KeyMismatch(format!("pi has {} entries, expected {}", p.len(), topology.n())))
            }
            _ => {}
        }
        let all = self
            .nu
            .values()
            .chain(self.mu.values())
            .chain(self.nu_i0.values())
            .chain(self.mu_0i.values())
            .chain(self.pi.iter().flatten());
        for &v in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("multiplier {v} is not positive and finite")));
            }
        }
        Ok(())
    }

    fn get(map: &BTreeMap<(usize, usize), f64>, key: (usize, usize), name: &str) -> Result<f64> {
        map.get(&key)
            .copied()
            .ok_or_else(|| Error::MissingMultiplier(format!("{name}_{}{}", key.0, key.1)))
    }

    pub fn nu(&self, i: usize, j: usize) -> Result<f64> {
        Self::get(&self.nu, (i, j), "nu")
    }

    pub fn mu(&self, i: usize, j: usize) -> Result<f64> {
        Self::get(&self.mu, (i, j), "mu")
    }

    pub fn pi(&self, i: usize) -> Result<f64> {
        self.pi
            .as_ref()
            .and_then(|p| p.get(i.wrapping_sub(1)).copied())
            .ok_or_else(|| Error::MissingMultiplier(format!("pi_{i}")))
    }

    pub fn nu_i0(&self, i: usize) -> Result<f64> {
        self.nu_i0
            .get(&i)
            .copied()
            .ok_or_else(|| Error::MissingMultiplier(format!("nu_{i}0")))
    }

    pub fn mu_0i(&self, i: usize) -> Result<f64> {
        self.mu_0i
            .get(&i)
            .copied()
            .ok_or_else(|| Error::MissingMultiplier(format!("mu_0{i}")))
    }

    /// Drop `pi`.
    pub fn reduced(&self) -> Self {
        Self { pi: None, ..self.clone() }
    }
}

/// Certificate for one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiSolution {
    pub rho_s: f64,
    #[serde(with = "crate::serde_mat::matrix")]
    pub y: DMatrix<f64>,
    pub multipliers: MultiplierSet,
    /// `-max_i lambda_max` of the node blocks at this point.
    pub margin: f64,
    pub beta_s: f64,
}

/// Everything the LMIs need besides the decision variables.
#[derive(Debug, Clone)]
pub struct LmiContext {
    pub plant: LpvPlant,
    pub topology: NetworkTopology,
    pub couplings: CouplingShape,
    pub constants: ConsensusConstants,
    pub r_inv: DMatrix<f64>,
    pub q_bar_sqrt: DMatrix<f64>,
    neighborhoods: Vec<Neighborhoods>,
}

/// Sizes and offsets of the blocks of one node's matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub n: usize,
    /// `(j, offset, rows)` per incoming coupling neighbor.
    pub incoming: Vec<(usize, usize, usize)>,
    /// `(r, offset, rows)` per outgoing coupling neighbor.
    pub outgoing: Vec<(usize, usize, usize)>,
    pub deviation: Option<usize>,
    pub from_leader: Option<(usize, usize)>,
    pub to_leader: Option<(usize, usize)>,
    pub dim: usize,
}

impl LmiContext {
    pub fn new(
        plant: LpvPlant,
        topology: NetworkTopology,
        couplings: CouplingShape,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Result<Self> {
        let constants = topology.consensus_constants(q)?;
        let r_inv = spd_inverse(r)?;
        let q_bar_sqrt = sqrt_psd(&constants.q_bar)?;
        let neighborhoods = (1..=topology.n())
            .map(|i| topology.neighborhoods(i))
            .collect::<Result<Vec<_>>>()?;
        for edge in &topology.coupling_edges {
            let c = couplings.get(edge.0, edge.1)?;
            if c.ncols() != plant.n {
                return Err(Error::ShapeMismatch(format!("C for edge {edge:?} has {} columns", c.ncols())));
            }
        }
        Ok(Self {
            plant,
            topology,
            couplings,
            constants,
            r_inv,
            q_bar_sqrt,
            neighborhoods,
        })
    }

    pub fn from_scenario(s: &Scenario) -> Result<Self> {
        Self::new(s.plant.clone(), s.topology.clone(), s.couplings.clone(), &s.q, &s.r)
    }

    pub fn n_followers(&self) -> usize {
        self.topology.n()
    }

    pub fn neighborhoods(&self, i: usize) -> Result<&Neighborhoods> {
        if i == 0 {
            return Err(Error::UnknownNode(0));
        }
        self.neighborhoods.get(i - 1).ok_or(Error::UnknownNode(i))
    }

    /// `B1 R^{-1} B1'`
    pub fn control_term(&self) -> DMatrix<f64> {
        &self.plant.b1 * &self.r_inv * self.plant.b1.transpose()
    }

    /// Strictness margin used for the node blocks at `rho_s`.
    pub fn default_margin(&self, rho_s: f64) -> f64 {
        1e-6 * (1.0 + spectral_norm(&self.plant.eval_a(rho_s)))
    }

    pub fn layout(&self, i: usize, reduced: bool) -> Result<BlockLayout> {
        let nb = self.neighborhoods(i)?;
        let n = self.plant.n;
        let mut off = 2 * n;
        let mut incoming = Vec::new();
        for &j in &nb.s_phi {
            let q = self.couplings.get(j, i)?.nrows();
            incoming.push((j, off, q));
            off += q;
        }
        let mut outgoing = Vec::new();
        for &r in &nb.out_phi {
            let q = self.couplings.get(i, r)?.nrows();
            outgoing.push((r, off, q));
            off += q;
        }
        let deviation = (!reduced).then(|| {
            off += n;
            off - n
        });
        let from_leader = if self.topology.d(i) {
            let q = self.couplings.get(0, i)?.nrows();
            off += q;
            Some((off - q, q))
        } else {
            None
        };
        let to_leader = if self.topology.d_bar(i) {
            let q = self.couplings.get(i, 0)?.nrows();
            off += q;
            Some((off - q, q))
        } else {
            None
        };
        Ok(BlockLayout {
            n,
            incoming,
            outgoing,
            deviation,
            from_leader,
            to_leader,
            dim: off,
        })
    }

    /// Multiplier of `B2 B2'` in the core block: sum of reciprocal
    /// multipliers acting on node `i`.
    fn coupling_weight(&self, i: usize, mult: &MultiplierSet) -> Result<f64> {
        let nb = self.neighborhoods(i)?;
        let mut w = 0.0;
        for &j in &nb.s_phi {
            w += 1.0 / mult.nu(i, j)? + 1.0 / mult.mu(i, j)?;
        }
        if self.topology.d(i) {
            w += 1.0 / mult.nu_i0(i)?;
        }
        for k in self.topology.leader_drivers() {
            w += 1.0 / mult.mu_0i(k)?;
        }
        Ok(w)
    }

    fn check_y(&self, y: &DMatrix<f64>) -> Result<()> {
        let n = self.plant.n;
        if y.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!("Y is {:?}, expected {n}x{n}", y.shape())));
        }
        Ok(())
    }

    fn core(&self, i: usize, rho: f64, beta: f64, y: &DMatrix<f64>, mult: &MultiplierSet, reduced: bool) -> Result<DMatrix<f64>> {
        let a = self.plant.eval_a(rho);
        let b2 = &self.plant.b2;
        let mut z = &a * y + y * a.transpose() - self.control_term();
        z += b2 * b2.transpose() * self.coupling_weight(i, mult)?;
        if !reduced {
            let n = self.plant.n;
            z += DMatrix::identity(n, n) * (beta * beta / mult.pi(i)?);
        }
        Ok(z)
    }

    fn build(&self, i: usize, rho: f64, beta: f64, y: &DMatrix<f64>, mult: &MultiplierSet, reduced: bool) -> Result<DMatrix<f64>> {
        self.check_y(y)?;
        let lay = self.layout(i, reduced)?;
        let n = lay.n;
        let big_n = self.n_followers() as f64;
        let mut m = DMatrix::zeros(lay.dim, lay.dim);
        let mut put = |row: usize, blk: &DMatrix<f64>| {
            m.view_mut((row, 0), blk.shape()).copy_from(blk);
            m.view_mut((0, row), (blk.ncols(), blk.nrows())).copy_from(&blk.transpose());
        };
        put(n, &(&self.q_bar_sqrt * y));
        for &(j, off, _) in &lay.incoming {
            put(off, &(self.couplings.get(j, i)? * y));
        }
        for &(r, off, _) in &lay.outgoing {
            put(off, &(self.couplings.get(i, r)? * y));
        }
        if let Some(off) = lay.deviation {
            put(off, y);
        }
        if let Some((off, _)) = lay.from_leader {
            put(off, &(self.couplings.get(0, i)? * y));
        }
        if let Some((off, _)) = lay.to_leader {
            put(off, &(self.couplings.get(i, 0)? * y));
        }
        m.view_mut((0, 0), (n, n)).copy_from(&self.core(i, rho, beta, y, mult, reduced)?);
        // Diagonal blocks carry a minus sign in every leader-coupling case;
        // one printed case drops it, which would make the block indefinite
        // by construction.
        let mut diag = |off: usize, len: usize, v: f64| {
            for k in off..off + len {
                m[(k, k)] = -v;
            }
        };
        diag(n, n, 1.0);
        for &(j, off, q) in &lay.incoming {
            diag(off, q, 1.0 / mult.nu(i, j)?);
        }
        for &(r, off, q) in &lay.outgoing {
            diag(off, q, 1.0 / mult.mu(r, i)?);
        }
        if let Some(off) = lay.deviation {
            diag(off, n, 1.0 / mult.pi(i)?);
        }
        if let Some((off, q)) = lay.from_leader {
            diag(off, q, 1.0 / mult.nu_i0(i)?);
        }
        if let Some((off, q)) = lay.to_leader {
            diag(off, q, 1.0 / (big_n * mult.mu_0i(i)?));
        }
        Ok(m)
    }

    /// Full block matrix of node `i`.
    pub fn build_pi(&self, i: usize, rho: f64, beta: f64, y: &DMatrix<f64>, mult: &MultiplierSet) -> Result<DMatrix<f64>> {
        self.build(i, rho, beta, y, mult, false)
    }

    /// Reduced block matrix of node `i` (no parameter-deviation row, no
    /// `pi` term).
    pub fn build_upsilon(&self, i: usize, rho: f64, y: &DMatrix<f64>, mult: &MultiplierSet) -> Result<DMatrix<f64>> {
        self.build(i, rho, 0.0, y, mult, true)
    }

    /// Schur complement of the node block with respect to its negative
    /// diagonal part.
    pub fn riccati_residual(&self, i: usize, rho: f64, beta: f64, y: &DMatrix<f64>, mult: &MultiplierSet) -> Result<DMatrix<f64>> {
        self.check_y(y)?;
        let n = self.plant.n;
        let nb = self.neighborhoods(i)?;
        let a = self.plant.eval_a(rho);
        let b2 = &self.plant.b2;
        let pi = mult.pi(i)?;
        let mut lhs = &a * y + y * a.transpose() - self.control_term()
            + b2 * b2.transpose() * self.coupling_weight(i, mult)?
            + DMatrix::identity(n, n) * (beta * beta / pi);
        let mut inner = self.constants.q_bar.clone() + DMatrix::identity(n, n) * pi;
        for &j in &nb.s_phi {
            let c = self.couplings.get(j, i)?;
            inner += c.transpose() * c * mult.nu(i, j)?;
        }
        for &r in &nb.out_phi {
            let c = self.couplings.get(i, r)?;
            inner += c.transpose() * c * mult.mu(r, i)?;
        }
        if self.topology.d(i) {
            let c = self.couplings.get(0, i)?;
            inner += c.transpose() * c * mult.nu_i0(i)?;
        }
        if self.topology.d_bar(i) {
            let c = self.couplings.get(i, 0)?;
            inner += c.transpose() * c * (self.n_followers() as f64 * mult.mu_0i(i)?);
        }
        lhs += y * inner * y;
        Ok(lhs)
    }

    /// Largest eigenvalue over all node blocks (full form when `pi` is
    /// present, reduced otherwise).
    pub fn worst_eigenvalue(&self, rho: f64, beta: f64, y: &DMatrix<f64>, mult: &MultiplierSet) -> Result<f64> {
        let reduced = mult.pi.is_none();
        let mut worst = f64::NEG_INFINITY;
        for i in 1..=self.n_followers() {
            let m = self.build(i, rho, beta, y, mult, reduced)?;
            worst = worst.max(lambda_max(&m)?);
        }
        Ok(worst)
    }
}

/// Where one design point's unknowns live in a [`ConicProblem`].
#[derive(Debug, Clone, Default)]
pub struct VarLayout {
    pub n: usize,
    /// `(row, col, index)` for the upper triangle of `Y`.
    pub y: Vec<(usize, usize, usize)>,
    pub nu: BTreeMap<(usize, usize), usize>,
    pub mu: BTreeMap<(usize, usize), usize>,
    pub pi: BTreeMap<usize, usize>,
    pub nu_i0: BTreeMap<usize, usize>,
    pub mu_0i: BTreeMap<usize, usize>,
}

impl VarLayout {
    /// Symmetric basis matrix for one entry of `Y`.
    pub fn basis(n: usize, r: usize, c: usize) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(n, n);
        e[(r, c)] = 1.0;
        e[(c, r)] = 1.0;
        e
    }

    pub fn extract_y(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, self.n);
        for &(r, c, idx) in &self.y {
            y[(r, c)] = x[idx];
            y[(c, r)] = x[idx];
        }
        y
    }

    /// Invert reciprocal variables back into multipliers.
    pub fn extract_multipliers(&self, x: &DVector<f64>) -> MultiplierSet {
        let inv = |m: &BTreeMap<(usize, usize), usize>| m.iter().map(|(&k, &v)| (k, 1.0 / x[v])).collect();
        let inv1 = |m: &BTreeMap<usize, usize>| m.iter().map(|(&k, &v)| (k, 1.0 / x[v])).collect::<BTreeMap<_, _>>();
        MultiplierSet {
            nu: inv(&self.nu),
            mu: inv(&self.mu),
            pi: (!self.pi.is_empty()).then(|| inv1(&self.pi).into_values().collect()),
            nu_i0: inv1(&self.nu_i0),
            mu_0i: inv1(&self.mu_0i),
        }
    }

    /// Variable vector for a given `Y` and multipliers (reciprocals taken).
    pub fn pack(&self, x: &mut DVector<f64>, y: &DMatrix<f64>, mult: &MultiplierSet) -> Result<()> {
        for &(r, c, idx) in &self.y {
            x[idx] = y[(r, c)];
        }
        for (&(i, j), &idx) in &self.nu {
            x[idx] = 1.0 / mult.nu(i, j)?;
        }
        for (&(i, j), &idx) in &self.mu {
            x[idx] = 1.0 / mult.mu(i, j)?;
        }
        for (&i, &idx) in &self.pi {
            x[idx] = 1.0 / mult.pi(i)?;
        }
        for (&i, &idx) in &self.nu_i0 {
            x[idx] = 1.0 / mult.nu_i0(i)?;
        }
        for (&i, &idx) in &self.mu_0i {
            x[idx] = 1.0 / mult.mu_0i(i)?;
        }
        Ok(())
    }
}

/// Add one design point's variables and blocks to `problem`. Every node
/// block becomes affine in `(Y, 1/nu, 1/mu, 1/pi, 1/nu_i0, 1/mu_0i)`.
/// Also adds `Y >= y_min I`.
pub fn add_design_point(
    problem: &mut ConicProblem,
    ctx: &LmiContext,
    rho_s: f64,
    beta_s: f64,
    reduced: bool,
    margin: f64,
    y_min: f64,
) -> Result<VarLayout> {
    let n = ctx.plant.n;
    let big_n = ctx.n_followers();
    let tag = format!("rho={rho_s}");
    let mut lay = VarLayout {
        n,
        ..Default::default()
    };
    for r in 0..n {
        for c in r..n {
            let (lo, hi, start) = if r == c {
                (0.0, Y_ENTRY_BOUND, 1.0)
            } else {
                (-Y_ENTRY_BOUND, Y_ENTRY_BOUND, 0.0)
            };
            let idx = problem.add_var(format!("{tag} Y[{r},{c}]"), lo, hi, start);
            lay.y.push((r, c, idx));
        }
    }
    let tau = |p: &mut ConicProblem, name: String| p.add_var(name, TAU_MIN, TAU_MAX, 1.0);
    for i in 1..=big_n {
        for &j in &ctx.neighborhoods(i)?.s_phi {
            lay.nu.insert((i, j), tau(problem, format!("{tag} 1/nu_{i},{j}")));
            lay.mu.insert((i, j), tau(problem, format!("{tag} 1/mu_{i},{j}")));
        }
        if !reduced {
            lay.pi.insert(i, tau(problem, format!("{tag} 1/pi_{i}")));
        }
        if ctx.topology.d(i) {
            lay.nu_i0.insert(i, tau(problem, format!("{tag} 1/nu_{i},0")));
        }
        if ctx.topology.d_bar(i) {
            lay.mu_0i.insert(i, tau(problem, format!("{tag} 1/mu_0,{i}")));
        }
    }

    let a = ctx.plant.eval_a(rho_s);
    let b2b2 = &ctx.plant.b2 * ctx.plant.b2.transpose();
    let control = ctx.control_term();
    let basis: Vec<(usize, DMatrix<f64>)> = lay.y.iter().map(|&(r, c, idx)| (idx, VarLayout::basis(n, r, c))).collect();

    let blocks = crate::par::map_range(big_n, |k| -> Result<AffineBlock> {
        let i = k + 1;
        let shape = ctx.layout(i, reduced)?;
        let mut b = AffineBlock::new(format!("{tag} node {i}"), shape.dim, margin);
        b.add_sub(None, 0, 0, &control, -1.0);
        for (idx, e) in &basis {
            let ay = &a * e;
            b.add_sub(Some(*idx), 0, 0, &(&ay + ay.transpose()), 1.0);
            b.add_sub(Some(*idx), n, 0, &(&ctx.q_bar_sqrt * e), 1.0);
            for &(j, off, _) in &shape.incoming {
                b.add_sub(Some(*idx), off, 0, &(ctx.couplings.get(j, i)? * e), 1.0);
            }
            for &(r, off, _) in &shape.outgoing {
                b.add_sub(Some(*idx), off, 0, &(ctx.couplings.get(i, r)? * e), 1.0);
            }
            if let Some(off) = shape.deviation {
                b.add_sub(Some(*idx), off, 0, e, 1.0);
            }
            if let Some((off, _)) = shape.from_leader {
                b.add_sub(Some(*idx), off, 0, &(ctx.couplings.get(0, i)? * e), 1.0);
            }
            if let Some((off, _)) = shape.to_leader {
                b.add_sub(Some(*idx), off, 0, &(ctx.couplings.get(i, 0)? * e), 1.0);
            }
        }
        b.add_identity(None, n, n, -1.0);
        for &(j, off, q) in &shape.incoming {
            let v = lay.nu[&(i, j)];
            b.add_sub(Some(v), 0, 0, &b2b2, 1.0);
            b.add_sub(Some(lay.mu[&(i, j)]), 0, 0, &b2b2, 1.0);
            b.add_identity(Some(v), off, q, -1.0);
        }
        for &(r, off, q) in &shape.outgoing {
            b.add_identity(Some(lay.mu[&(r, i)]), off, q, -1.0);
        }
        if let Some(off) = shape.deviation {
            let v = lay.pi[&i];
            b.add_identity(Some(v), 0, n, beta_s * beta_s);
            b.add_identity(Some(v), off, n, -1.0);
        }
        if let Some((off, q)) = shape.from_leader {
            let v = lay.nu_i0[&i];
            b.add_sub(Some(v), 0, 0, &b2b2, 1.0);
            b.add_identity(Some(v), off, q, -1.0);
        }
        for k in ctx.topology.leader_drivers() {
            b.add_sub(Some(lay.mu_0i[&k]), 0, 0, &b2b2, 1.0);
        }
        if let Some((off, q)) = shape.to_leader {
            b.add_identity(Some(lay.mu_0i[&i]), off, q, -1.0 / big_n as f64);
        }
        Ok(b)
    });
    for b in blocks {
        problem.push_block(b?);
    }

    let mut pos = AffineBlock::new(format!("{tag} Y >= y_min"), n, 0.0);
    pos.add_identity(None, 0, n, y_min);
    for (idx, e) in &basis {
        pos.add_sub(Some(*idx), 0, 0, e, -1.0);
    }
    problem.push_block(pos);
    Ok(lay)
}

/// Single-point problem with the default margin and `y_min`.
pub fn assemble_feasibility_problem(ctx: &LmiContext, rho_s: f64, beta_s: f64, reduced: bool) -> Result<(ConicProblem, VarLayout)> {
    let mut p = ConicProblem::new();
    let lay = add_design_point(&mut p, ctx, rho_s, beta_s, reduced, ctx.default_margin(rho_s), Y_MIN)?;
    Ok((p, lay))
}
