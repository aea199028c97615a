//! Coupling and communication digraphs, pinning, and consensus constants.
//!
//! Nodes are `0..=N`; node 0 is the leader. An edge `(j, i)` runs from `j`
//! to `i`: in the coupling graph it means agent `i` is physically driven by
//! agent `j`, in the communication graph it means `i` receives `j`'s state.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::eig::{is_positive_definite, lambda_max, lambda_min};

/// Two directed graphs over `{0..N}` plus the pinning vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub n_followers: usize,
    pub coupling_edges: BTreeSet<(usize, usize)>,
    /// Follower-to-follower communication edges (the leader is reached
    /// only through `pinned`).
    pub comm_edges: BTreeSet<(usize, usize)>,
    /// `g_i` for followers `1..=N`, stored at index `i - 1`.
    pub pinned: Vec<bool>,
    /// `d_i`: the leader drives follower `i` physically.
    pub d: Vec<bool>,
    /// `d̄_i`: follower `i` drives the leader physically.
    pub d_bar: Vec<bool>,
}

/// Diagnostics from [`NetworkTopology::validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Pinned follower that reaches every follower, if any.
    pub spanning_root: Option<usize>,
    pub unreachable_from_pins: Vec<usize>,
    pub self_loops: Vec<(usize, usize)>,
    pub leader_receives: Vec<(usize, usize)>,
    pub indicator_mismatch: Vec<usize>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.spanning_root.is_some()
            && self.self_loops.is_empty()
            && self.leader_receives.is_empty()
            && self.indicator_mismatch.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "topology: {}", if self.pass() { "PASS" } else { "FAIL" })?;
        match self.spanning_root {
            Some(r) => writeln!(f, "  spanning tree rooted at pinned follower {r}")?,
            None => writeln!(
                f,
                "  no pinned follower reaches every follower (unreachable: {:?})",
                self.unreachable_from_pins
            )?,
        }
        if !self.self_loops.is_empty() {
            writeln!(f, "  self-loops: {:?}", self.self_loops)?;
        }
        if !self.leader_receives.is_empty() {
            writeln!(f, "  communication edges touching the leader: {:?}", self.leader_receives)?;
        }
        if !self.indicator_mismatch.is_empty() {
            writeln!(f, "  d / d_bar disagree with coupling edges at nodes {:?}", self.indicator_mismatch)?;
        }
        Ok(())
    }
}

/// Neighbor sets of one follower, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    /// Followers `j` with `(j, i)` in the coupling graph.
    pub s_phi: Vec<usize>,
    /// Followers `j` with `(j, i)` in the communication graph.
    pub s_c: Vec<usize>,
    /// Followers `r` with `(i, r)` in the coupling graph.
    pub out_phi: Vec<usize>,
}

/// Graph-derived constants used by the LMIs, gains and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConstants {
    #[serde(with = "crate::serde_mat::vector")]
    pub theta: DVector<f64>,
    pub sigma: f64,
    pub lambda_hat: f64,
    #[serde(with = "crate::serde_mat::matrix")]
    pub q_bar: DMatrix<f64>,
}

impl ConsensusConstants {
    pub fn theta_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.theta)
    }
}

impl NetworkTopology {
    /// Build a topology, deriving `d` and `d_bar` from the coupling edges.
    pub fn from_edges(
        n_followers: usize,
        coupling_edges: impl IntoIterator<Item = (usize, usize)>,
        comm_edges: impl IntoIterator<Item = (usize, usize)>,
        pinned: Vec<bool>,
    ) -> Result<Self> {
        if n_followers == 0 {
            return Err(Error::Validation("at least one follower is required".into()));
        }
        if pinned.len() != n_followers {
            return Err(Error::Validation(format!(
                "pinning vector has length {}, expected {n_followers}",
                pinned.len()
            )));
        }
        let coupling_edges: BTreeSet<_> = coupling_edges.into_iter().collect();
        let comm_edges: BTreeSet<_> = comm_edges.into_iter().collect();
        for &(j, i) in coupling_edges.iter().chain(comm_edges.iter()) {
            if j > n_followers || i > n_followers {
                return Err(Error::UnknownNode(j.max(i)));
            }
        }
        let d = (1..=n_followers).map(|i| coupling_edges.contains(&(0, i))).collect();
        let d_bar = (1..=n_followers).map(|i| coupling_edges.contains(&(i, 0))).collect();
        Ok(Self {
            n_followers,
            coupling_edges,
            comm_edges,
            pinned,
            d,
            d_bar,
        })
    }

    pub fn n(&self) -> usize {
        self.n_followers
    }

    pub fn d(&self, i: usize) -> bool {
        self.d[i - 1]
    }

    pub fn d_bar(&self, i: usize) -> bool {
        self.d_bar[i - 1]
    }

    pub fn g(&self, i: usize) -> bool {
        self.pinned[i - 1]
    }

    /// Followers `k` with `d̄_k = 1`, ascending.
    pub fn leader_drivers(&self) -> Vec<usize> {
        (1..=self.n_followers).filter(|&k| self.d_bar(k)).collect()
    }

    pub fn neighborhoods(&self, i: usize) -> Result<Neighborhoods> {
        if i == 0 || i > self.n_followers {
            return Err(Error::UnknownNode(i));
        }
        let s_phi = self
            .coupling_edges
            .iter()
            .filter(|&&(j, t)| t == i && j >= 1 && j != i)
            .map(|&(j, _)| j)
            .collect();
        let s_c = self
            .comm_edges
            .iter()
            .filter(|&&(j, t)| t == i && j >= 1 && j != i)
            .map(|&(j, _)| j)
            .collect();
        let out_phi = self
            .coupling_edges
            .iter()
            .filter(|&&(s, r)| s == i && r >= 1 && r != i)
            .map(|&(_, r)| r)
            .collect();
        Ok(Neighborhoods { s_phi, s_c, out_phi })
    }

    /// In-degree Laplacian of the follower communication subgraph.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_followers;
        let mut l = DMatrix::zeros(n, n);
        for &(j, i) in &self.comm_edges {
            if j == 0 || i == 0 || j == i {
                continue;
            }
            l[(i - 1, j - 1)] -= 1.0;
            l[(i - 1, i - 1)] += 1.0;
        }
        l
    }

    pub fn pinning_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_followers, self.n_followers, |r, c| {
            if r == c && self.pinned[r] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Structural and connectivity diagnostics.
    pub fn validate(&self) -> ValidationReport {
        let n = self.n_followers;
        let mut report = ValidationReport::default();
        for &(j, i) in self.coupling_edges.iter().chain(self.comm_edges.iter()) {
            if j == i {
                report.self_loops.push((j, i));
            }
        }
        report.self_loops.sort_unstable();
        report.self_loops.dedup();
        report.leader_receives = self.comm_edges.iter().copied().filter(|&(j, i)| i == 0 || j == 0).collect();
        for i in 1..=n {
            if self.d(i) != self.coupling_edges.contains(&(0, i)) || self.d_bar(i) != self.coupling_edges.contains(&(i, 0)) {
                report.indicator_mismatch.push(i);
            }
        }

        let mut adj = vec![Vec::new(); n + 1];
        for &(j, i) in &self.comm_edges {
            if j >= 1 && i >= 1 && j != i {
                adj[j].push(i);
            }
        }
        let mut reached_any = vec![false; n + 1];
        for root in (1..=n).filter(|&r| self.g(r)) {
            let mut seen = vec![false; n + 1];
            seen[root] = true;
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            for v in 1..=n {
                reached_any[v] |= seen[v];
            }
            if (1..=n).all(|v| seen[v]) {
                report.spanning_root = Some(root);
                break;
            }
        }
        if report.spanning_root.is_none() {
            report.unreachable_from_pins = (1..=n).filter(|&v| !reached_any[v]).collect();
        }
        report
    }

    /// `theta = (L + G)^{-1} 1`, `sigma`, `lambda_hat` and `Q̄ = (sigma^2 / lambda_hat) Q`.
    ///
    /// Fails unless `sigma > 0`. A pinned spanning tree does not by itself
    /// guarantee that: a hub with many children fed from a long pinned
    /// path can make the symmetrized matrix indefinite.
    pub fn consensus_constants(&self, q: &DMatrix<f64>) -> Result<ConsensusConstants> {
        let c = self.consensus_constants_unchecked(q)?;
        if !(c.sigma > 0.0 && c.lambda_hat > 0.0) {
            return Err(Error::Validation(format!(
                "consensus constants not positive (sigma = {}, lambda_hat = {}); \
                 diag(theta)^-1 (L + G) + its transpose is not positive definite",
                c.sigma, c.lambda_hat
            )));
        }
        Ok(c)
    }

    /// Same as [`Self::consensus_constants`] without the sign check on
    /// `sigma`.
    pub fn consensus_constants_unchecked(&self, q: &DMatrix<f64>) -> Result<ConsensusConstants> {
        if !q.is_square() || (q - q.transpose()).amax() > 1e-12 * (1.0 + q.amax()) || !is_positive_definite(q) {
            return Err(Error::Validation("Q must be symmetric positive definite".into()));
        }
        let n = self.n_followers;
        let m = self.laplacian() + self.pinning_matrix();
        let lu = m.clone().lu();
        let theta = lu.solve(&DVector::from_element(n, 1.0)).ok_or(Error::SingularSystem)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        if theta.iter().any(|&v| v <= 0.0) {
            return Err(Error::Validation(format!(
                "theta has non-positive entries {:?}; the pinned spanning tree assumption fails",
                theta.as_slice()
            )));
        }
        let theta_inv = DMatrix::from_diagonal(&theta.map(|v| 1.0 / v));
        let sym = &theta_inv * &m + m.transpose() * &theta_inv;
        let sigma = 0.5 * lambda_min(&sym)?;
        let scaled = &theta_inv * &m;
        let lambda_hat = lambda_max(&(scaled.transpose() * &scaled))?;
        let q_bar = q * (sigma * sigma / lambda_hat);
        Ok(ConsensusConstants {
            theta,
            sigma,
            lambda_hat,
            q_bar,
        })
    }

    /// Relabel followers: follower `i` becomes `perm[i - 1]`. The leader
    /// stays at 0.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_followers;
        let mut seen = vec![false; n + 1];
        for &p in perm {
            if p == 0 || p > n || seen[p] {
                return Err(Error::Validation("relabeling is not a permutation of 1..=N".into()));
            }
            seen[p] = true;
        }
        if perm.len() != n {
            return Err(Error::Validation("relabeling has the wrong length".into()));
        }
        let map = |v: usize| if v == 0 { 0 } else { perm[v - 1] };
        let mut pinned = vec![false; n];
        for i in 1..=n {
            pinned[map(i) - 1] = self.g(i);
        }
        Self::from_edges(
            n,
            self.coupling_edges.iter().map(|&(j, i)| (map(j), map(i))),
            self.comm_edges.iter().map(|&(j, i)| (map(j), map(i))),
            pinned,
        )
    }

    /// A random follower communication graph containing a spanning tree
    /// rooted at a pinned node, with a few extra edges and pins. The
    /// coupling graph is a random symmetric graph that may touch the
    /// leader.
    pub fn random_pinned_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (1..=n).collect();
        for k in (1..n).rev() {
            let j = rng.gen_range(0..=k);
            order.swap(k, j);
        }
        let mut comm = BTreeSet::new();
        for k in 1..n {
            let parent = order[rng.gen_range(0..k)];
            comm.insert((parent, order[k]));
        }
        for _ in 0..rng.gen_range(0..=n) {
            let (a, b) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
            if a != b {
                comm.insert((a, b));
            }
        }
        let mut pinned = vec![false; n];
        pinned[order[0] - 1] = true;
        for p in pinned.iter_mut() {
            if rng.gen_bool(0.2) {
                *p = true;
            }
        }
        let mut coupling = BTreeSet::new();
        for a in 0..=n {
            for b in (a + 1)..=n {
                if rng.gen_bool(0.35) {
                    coupling.insert((a, b));
                    coupling.insert((b, a));
                }
            }
        }
        Self::from_edges(n, coupling, comm, pinned).expect("generated topology is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;

    fn chain_2(pinned: [bool; 2]) -> NetworkTopology {
        NetworkTopology::from_edges(2, [], [(1, 2)], pinned.to_vec()).unwrap()
    }

    #[test]
    fn single_pinned_follower() {
        let t = NetworkTopology::from_edges(1, [], [], vec![true]).unwrap();
        assert!(t.validate().pass());
        let c = t.consensus_constants(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c.theta.as_slice(), &[1.0]);
        assert!((c.sigma - 1.0).abs() < 1e-15);
        assert!((c.lambda_hat - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reachability_forced_by_pin() {
        assert!(chain_2([true, false]).validate().pass());
        let r = chain_2([false, true]).validate();
        assert!(!r.pass());
        assert_eq!(r.unreachable_from_pins, vec![1]);
    }

    #[test]
    fn two_node_constants_closed_form() {
        let t = chain_2([true, false]);
        let c = t.consensus_constants(&DMatrix::identity(1, 1)).unwrap();
        assert_eq!(c.theta.as_slice(), &[1.0, 2.0]);
        // symmetrized matrix [[2, -1/2], [-1/2, 1]] -> lambda_min = (3 - sqrt 2) / 2
        let sym: [[f64; 2]; 2] = [[2.0, -0.5], [-0.5, 1.0]];
        let tr = sym[0][0] + sym[1][1];
        let det = sym[0][0] * sym[1][1] - sym[0][1] * sym[1][0];
        let lmin = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
        assert!((c.sigma - 0.5 * lmin).abs() < 1e-14);
        assert!((c.sigma - (3.0 - 2f64.sqrt()) / 4.0).abs() < 1e-14);
        // (Θ^{-1}M)'(Θ^{-1}M) = [[5/4, -1/4], [-1/4, 1/4]]
        let h: [[f64; 2]; 2] = [[1.25, -0.25], [-0.25, 0.25]];
        let tr = h[0][0] + h[1][1];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let lmax = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert!((c.lambda_hat - lmax).abs() < 1e-14);
    }

    #[test]
    fn q_bar_is_exact_multiple() {
        let t = chain_2([true, false]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 100.0]));
        let c = t.consensus_constants(&q).unwrap();
        assert_eq!(c.q_bar, &q * (c.sigma * c.sigma / c.lambda_hat));
    }

    #[test]
    fn empty_graph_neighborhoods() {
        let t = NetworkTopology::from_edges(3, [], [], vec![true; 3]).unwrap();
        let nb = t.neighborhoods(2).unwrap();
        assert!(nb.s_phi.is_empty() && nb.s_c.is_empty() && nb.out_phi.is_empty());
        assert!(matches!(t.neighborhoods(0), Err(Error::UnknownNode(0))));
        assert!(matches!(t.neighborhoods(4), Err(Error::UnknownNode(4))));
    }

    #[test]
    fn chain_neighborhood() {
        let nb = chain_2([true, false]).neighborhoods(2).unwrap();
        assert_eq!(nb.s_c, vec![1]);
    }

    #[test]
    fn diagnostics_flag_bad_structure() {
        let mut t = NetworkTopology::from_edges(2, [(1, 1), (0, 2)], [(1, 2), (2, 0)], vec![true, false]).unwrap();
        let r = t.validate();
        assert_eq!(r.self_loops, vec![(1, 1)]);
        assert_eq!(r.leader_receives, vec![(2, 0)]);
        assert!(r.indicator_mismatch.is_empty());
        t.d[0] = true;
        assert_eq!(t.validate().indicator_mismatch, vec![1]);
        assert!(!t.validate().pass());
    }

    #[test]
    fn singular_without_pins() {
        let t = NetworkTopology::from_edges(2, [], [(1, 2)], vec![false, false]).unwrap();
        assert!(matches!(t.consensus_constants(&DMatrix::identity(1, 1)), Err(Error::SingularSystem)));
    }

    #[test]
    fn indicators_follow_edges() {
        let t = NetworkTopology::from_edges(3, [(0, 1), (3, 0), (1, 2)], [], vec![true; 3]).unwrap();
        assert_eq!(t.d, vec![true, false, false]);
        assert_eq!(t.d_bar, vec![false, false, true]);
        assert_eq!(t.leader_drivers(), vec![3]);
    }

    #[test]
    fn spanning_tree_with_hub_has_negative_sigma() {
        // pinned 7 -> 5 -> 4 -> {0, 1, 2, 3, 6}, shifted to 1-based labels
        let edges = [(4, 0), (4, 1), (4, 2), (4, 3), (4, 6), (5, 4), (7, 5)].map(|(a, b)| (a + 1, b + 1));
        let mut pinned = vec![false; 8];
        pinned[7] = true;
        let t = NetworkTopology::from_edges(8, [], edges, pinned).unwrap();
        assert!(t.validate().pass());
        let c = t.consensus_constants_unchecked(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c.theta.as_slice(), &[4.0, 4.0, 4.0, 4.0, 3.0, 2.0, 4.0, 1.0]);
        assert!(c.sigma < 0.0);
        assert!(matches!(t.consensus_constants(&DMatrix::identity(2, 2)), Err(Error::Validation(_))));
    }

    #[test]
    fn chains_have_positive_sigma() {
        for n in 1..=30 {
            let t = NetworkTopology::from_edges(n, [], (1..n).map(|i| (i, i + 1)), {
                let mut g = vec![false; n];
                g[0] = true;
                g
            })
            .unwrap();
            assert!(t.consensus_constants(&DMatrix::identity(1, 1)).unwrap().sigma > 0.0, "n = {n}");
        }
    }

    proptest! {
        #[test]
        fn theta_solves_and_constants_are_relabel_invariant(seed in 0u64..10_000, n in 1usize..=6) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = NetworkTopology::random_pinned_tree(n, &mut rng);
            prop_assert!(t.validate().pass());
            let q = DMatrix::identity(2, 2);
            let c = t.consensus_constants_unchecked(&q).unwrap();
            let m = t.laplacian() + t.pinning_matrix();
            let resid = (&m * &c.theta).add_scalar(-1.0).amax();
            prop_assert!(resid <= 1e-10);
            prop_assert!(c.theta.min() > 0.0);

            // positive sigma is exactly when the checked constructor succeeds
            let theta_inv = DMatrix::from_diagonal(&c.theta.map(|v| 1.0 / v));
            let sym = &theta_inv * &m + m.transpose() * &theta_inv;
            let pd = lambda_min(&sym).unwrap() > 0.0;
            prop_assert_eq!(pd, t.consensus_constants(&q).is_ok());

            let mut perm: Vec<usize> = (1..=n).collect();
            for k in (1..n).rev() {
                perm.swap(k, rng.gen_range(0..=k));
            }
            let p = t.relabeled(&perm).unwrap();
            let cp = p.consensus_constants_unchecked(&q).unwrap();
            prop_assert!((c.sigma - cp.sigma).abs() <= 1e-10 * c.sigma.abs().max(1.0));
            prop_assert!((c.lambda_hat - cp.lambda_hat).abs() <= 1e-10 * c.lambda_hat.max(1.0));
            for i in 1..=n {
                prop_assert!((c.theta[i - 1] - cp.theta[perm[i - 1] - 1]).abs() <= 1e-10 * c.theta[i - 1]);
            }
        }
    }
}
