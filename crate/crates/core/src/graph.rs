//! Network topologies and left-stochastic combination matrices.
//!
//! Agent indices are zero-based throughout the API. Entry `a[(l, k)]` of a
//! combination matrix is the weight agent `k` assigns to information received
//! from agent `l`, so every *column* sums to one.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Successive-iterate tolerance for the Perron power iteration.
pub const PERRON_TOLERANCE: f64 = 1e-12;
/// Iteration budget for the Perron power iteration.
pub const PERRON_MAX_ITERATIONS: usize = 100_000;

const COLUMN_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("topology must contain at least one agent")]
    Empty,
    #[error("edge ({from}, {to}) references an agent outside 0..{n_agents}")]
    AgentOutOfRange {
        from: usize,
        to: usize,
        n_agents: usize,
    },
    #[error("network is not strongly connected; components: {components:?}")]
    NotStronglyConnected { components: Vec<Vec<usize>> },
    #[error("combination matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("negative or non-finite weight {value} at ({row}, {col})")]
    InvalidWeight { row: usize, col: usize, value: f64 },
    #[error("column {col} sums to {sum}, expected 1")]
    NotLeftStochastic { col: usize, sum: f64 },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    PerronNotConverged { iterations: usize, residual: f64 },
    #[error("Perron vector has non-positive entry {value} at agent {agent}")]
    PerronNotPositive { agent: usize, value: f64 },
}

/// Directed graph over `n_agents` agents. An edge `(l, k)` means agent `k`
/// receives from agent `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_agents: usize,
    edges: BTreeSet<(usize, usize)>,
    self_loops: bool,
}

impl Topology {
    /// Builds a topology; when `self_loops` is set, `(k, k)` is added for every agent.
    pub fn new(
        n_agents: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        self_loops: bool,
    ) -> Result<Self, GraphError> {
        if n_agents == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            if from >= n_agents || to >= n_agents {
                return Err(GraphError::AgentOutOfRange { from, to, n_agents });
            }
            set.insert((from, to));
        }
        if self_loops {
            set.extend((0..n_agents).map(|k| (k, k)));
        }
        Ok(Self {
            n_agents,
            edges: set,
            self_loops,
        })
    }

    /// Fully connected graph with self-loops.
    pub fn complete(n_agents: usize) -> Result<Self, GraphError> {
        let edges = (0..n_agents).flat_map(|l| (0..n_agents).map(move |k| (l, k)));
        Self::new(n_agents, edges, true)
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn directed_ring(n_agents: usize, self_loops: bool) -> Result<Self, GraphError> {
        let edges = (0..n_agents).map(|k| (k, (k + 1) % n_agents));
        Self::new(n_agents, edges, self_loops)
    }

    /// Bidirectional ring plus `chords` extra bidirectional links between
    /// agents that are not already adjacent, drawn from a seeded stream.
    pub fn ring_with_chords(n_agents: usize, chords: usize, seed: u64) -> Result<Self, GraphError> {
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for k in 0..n_agents {
            let next = (k + 1) % n_agents;
            if next != k {
                edges.insert((k, next));
                edges.insert((next, k));
            }
        }
        let mut candidates: Vec<(usize, usize)> = (0..n_agents)
            .flat_map(|a| ((a + 1)..n_agents).map(move |b| (a, b)))
            .filter(|pair| !edges.contains(pair))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..chords {
            let Some(&(a, b)) = candidates.choose(&mut rng) else {
                break;
            };
            candidates.retain(|&p| p != (a, b));
            edges.insert((a, b));
            edges.insert((b, a));
        }
        Self::new(n_agents, edges, true)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Neighborhood of `k`: every `l` with an edge `(l, k)`.
    pub fn in_neighbors(&self, k: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, to)| to == k)
            .map(|&(from, _)| from)
            .collect()
    }

    fn adjacency(&self, reverse: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_agents];
        for &(from, to) in &self.edges {
            if reverse {
                adj[to].push(from);
            } else {
                adj[from].push(to);
            }
        }
        adj
    }

    /// Strongly connected components (Kosaraju), each sorted, ordered by smallest member.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let forward = self.adjacency(false);
        let backward = self.adjacency(true);
        let n = self.n_agents;

        // Finish order via iterative DFS.
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for start in 0..n {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            let mut stack = vec![(start, 0usize)];
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(&succ) = forward[node].get(*next) {
                    *next += 1;
                    if !visited[succ] {
                        visited[succ] = true;
                        stack.push((succ, 0));
                    }
                } else {
                    order.push(node);
                    stack.pop();
                }
            }
        }

        let mut component = vec![usize::MAX; n];
        let mut components: Vec<Vec<usize>> = Vec::new();
        for &root in order.iter().rev() {
            if component[root] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut members = vec![root];
            component[root] = id;
            let mut stack = vec![root];
            while let Some(node) = stack.pop() {
                for &pred in &backward[node] {
                    if component[pred] == usize::MAX {
                        component[pred] = id;
                        members.push(pred);
                        stack.push(pred);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }
        components.sort_by_key(|c| c[0]);
        components
    }

    /// Induced topology of the non-zero pattern of a weight matrix.
    pub fn from_weights(weights: &DMatrix<f64>) -> Result<Self, GraphError> {
        let n = weights.nrows();
        let edges = (0..n)
            .flat_map(|l| (0..n).map(move |k| (l, k)))
            .filter(|&(l, k)| weights[(l, k)] > 0.0);
        let mut topo = Self::new(n, edges, false)?;
        topo.self_loops = (0..n).all(|k| topo.has_edge(k, k));
        Ok(topo)
    }
}

fn reaches_all(adj: &[Vec<usize>], start: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut stack = vec![start];
    let mut count = 1;
    while let Some(node) = stack.pop() {
        for &next in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                count += 1;
                stack.push(next);
            }
        }
    }
    count == adj.len()
}

/// True iff every agent reaches every other one along directed edges.
///
/// Forward and reverse reachability sweeps from agent 0.
pub fn is_strongly_connected(topology: &Topology) -> bool {
    reaches_all(&topology.adjacency(false), 0) && reaches_all(&topology.adjacency(true), 0)
}

/// Left-stochastic weight matrix together with its Perron eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    weights: DMatrix<f64>,
    perron: DVector<f64>,
}

impl CombinationMatrix {
    /// Averaging rule: agent `k` weighs each member of its neighborhood by `1/|N_k|`.
    pub fn averaging(topology: &Topology) -> Result<Self, GraphError> {
        if !is_strongly_connected(topology) {
            return Err(GraphError::NotStronglyConnected {
                components: topology.strongly_connected_components(),
            });
        }
        let n = topology.n_agents();
        let mut weights = DMatrix::zeros(n, n);
        for k in 0..n {
            let neighbors = topology.in_neighbors(k);
            let w = 1.0 / neighbors.len() as f64;
            for l in neighbors {
                weights[(l, k)] = w;
            }
        }
        let perron = perron_eigenvector(&weights)?;
        Ok(Self { weights, perron })
    }

    /// Direct matrix input. Columns must sum to one within `1e-9`; they are
    /// then rescaled exactly.
    pub fn from_weights(mut weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let (rows, cols) = weights.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(GraphError::Empty);
        }
        for k in 0..cols {
            for l in 0..rows {
                let value = weights[(l, k)];
                if !value.is_finite() || value < 0.0 {
                    return Err(GraphError::InvalidWeight {
                        row: l,
                        col: k,
                        value,
                    });
                }
            }
            let sum = weights.column(k).sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(GraphError::NotLeftStochastic { col: k, sum });
            }
            weights.column_mut(k).unscale_mut(sum);
        }
        let topology = Topology::from_weights(&weights)?;
        if !is_strongly_connected(&topology) {
            return Err(GraphError::NotStronglyConnected {
                components: topology.strongly_connected_components(),
            });
        }
        let perron = perron_eigenvector(&weights)?;
        Ok(Self { weights, perron })
    }

    pub fn n_agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// `a[(l, k)]`.
    #[inline]
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[(from, to)]
    }

    pub fn perron(&self) -> &DVector<f64> {
        &self.perron
    }

    /// `max_{l,k} |[A^{m+1}]_{lk} - pi_l|` for `m = 0..count`.
    pub fn mixing_deviations(&self, count: usize) -> Vec<f64> {
        let n = self.n_agents();
        let mut power = self.weights.clone();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut dev: f64 = 0.0;
            for k in 0..n {
                for l in 0..n {
                    dev = dev.max((power[(l, k)] - self.perron[l]).abs());
                }
            }
            out.push(dev);
            power = &self.weights * &power;
        }
        out
    }

    /// Row-major CSV with one-based agent ids: row `l`, column `k` holds `a[(l, k)]`.
    pub fn to_csv(&self) -> String {
        let n = self.n_agents();
        let mut out = String::from("agent");
        for k in 1..=n {
            let _ = write!(out, ",{k}");
        }
        out.push('\n');
        for l in 0..n {
            let _ = write!(out, "{}", l + 1);
            for k in 0..n {
                let _ = write!(out, ",{:.16e}", self.weights[(l, k)]);
            }
            out.push('\n');
        }
        out
    }
}

/// Perron eigenvector of a left-stochastic primitive matrix by normalized
/// power iteration.
pub fn perron_eigenvector(weights: &DMatrix<f64>) -> Result<DVector<f64>, GraphError> {
    let (rows, cols) = weights.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(GraphError::Empty);
    }
    let n = rows;
    let mut current = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..PERRON_MAX_ITERATIONS {
        let mut next = weights * &current;
        let total = next.sum();
        next.unscale_mut(total);
        residual = (&next - &current).amax();
        current = next;
        if residual < PERRON_TOLERANCE {
            if let Some((agent, &value)) = current.iter().enumerate().find(|(_, &v)| v <= 0.0) {
                return Err(GraphError::PerronNotPositive { agent, value });
            }
            return Ok(current);
        }
    }
    Err(GraphError::PerronNotConverged {
        iterations: PERRON_MAX_ITERATIONS,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense oracle: solve `(A - I) x = 0` with the last equation replaced by `1^T x = 1`.
    fn perron_oracle(weights: &DMatrix<f64>) -> DVector<f64> {
        let n = weights.nrows();
        let mut system = weights - DMatrix::identity(n, n);
        for k in 0..n {
            system[(n - 1, k)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        system.lu().solve(&rhs).expect("nonsingular")
    }

    #[test]
    fn complete_graph_is_uniform() {
        let a = CombinationMatrix::averaging(&Topology::complete(3).unwrap()).unwrap();
        for l in 0..3 {
            for k in 0..3 {
                assert!((a.weight(l, k) - 1.0 / 3.0).abs() < 1e-15);
            }
            assert!((a.perron()[l] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn directed_ring_with_self_loops() {
        let a = CombinationMatrix::averaging(&Topology::directed_ring(3, true).unwrap()).unwrap();
        for k in 0..3 {
            let column = a.weights().column(k);
            assert_eq!(column.iter().filter(|&&w| w == 0.5).count(), 2);
            assert!((a.perron()[k] - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn star_matches_oracle() {
        let edges = [(0, 1), (1, 0), (0, 2), (2, 0)];
        let a = CombinationMatrix::averaging(&Topology::new(3, edges, true).unwrap()).unwrap();
        for l in 0..3 {
            assert!((a.weight(l, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
        let residual = (a.weights() * a.perron() - a.perron()).amax();
        assert!(residual <= 1e-10);
        let oracle = perron_oracle(a.weights());
        assert!((a.perron() - oracle).amax() < 1e-10);
    }

    #[test]
    fn two_by_two_hand_solution() {
        // Columns (0.8, 0.2) and (0.4, 0.6): 0.2 pi_1 = 0.4 pi_2.
        let w = DMatrix::from_column_slice(2, 2, &[0.8, 0.2, 0.4, 0.6]);
        let pi = perron_eigenvector(&w).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn doubly_stochastic_gives_uniform() {
        for n in [2usize, 5, 9] {
            let mut w = DMatrix::zeros(n, n);
            for k in 0..n {
                w[(k, k)] = 0.5;
                w[((k + 1) % n, k)] += 0.25;
                w[((k + n - 1) % n, k)] += 0.25;
            }
            let pi = perron_eigenvector(&w).unwrap();
            for v in pi.iter() {
                assert!((v - 1.0 / n as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn random_ten_agent_graph_matches_oracle() {
        let topo = Topology::ring_with_chords(10, 5, 7).unwrap();
        let a = CombinationMatrix::averaging(&topo).unwrap();
        let oracle = perron_oracle(a.weights());
        assert!((a.perron() - oracle).amax() < 1e-8);
    }

    #[test]
    fn connectivity_examples() {
        assert!(is_strongly_connected(&Topology::directed_ring(5, false).unwrap()));
        let cliques = Topology::new(
            4,
            [(0, 1), (1, 0), (2, 3), (3, 2)],
            true,
        )
        .unwrap();
        assert!(!is_strongly_connected(&cliques));
        assert_eq!(
            cliques.strongly_connected_components(),
            vec![vec![0, 1], vec![2, 3]]
        );
        let chain = Topology::new(3, [(0, 1), (1, 2)], true).unwrap();
        assert!(!is_strongly_connected(&chain));
    }

    #[test]
    fn averaging_rejects_disconnected_graph() {
        let chain = Topology::new(3, [(0, 1), (1, 2)], true).unwrap();
        match CombinationMatrix::averaging(&chain) {
            Err(GraphError::NotStronglyConnected { components }) => {
                assert_eq!(components, vec![vec![0], vec![1], vec![2]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn periodic_matrix_does_not_converge() {
        // Path 0 - 1 - 2 without self-loops: period two.
        let w = DMatrix::from_column_slice(3, 3, &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        match perron_eigenvector(&w) {
            Err(GraphError::PerronNotConverged { residual, .. }) => assert!(residual > 0.1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixing_deviation_decays() {
        let a = CombinationMatrix::averaging(&Topology::ring_with_chords(10, 5, 1).unwrap()).unwrap();
        let devs = a.mixing_deviations(200);
        assert!(devs[199] < 1e-8);
        // Monotone after a burn-in.
        for pair in devs[20..].windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
    }

    #[test]
    fn from_weights_validates() {
        let bad = DMatrix::from_column_slice(2, 2, &[0.8, 0.3, 0.4, 0.6]);
        assert!(matches!(
            CombinationMatrix::from_weights(bad),
            Err(GraphError::NotLeftStochastic { col: 0, .. })
        ));
        let neg = DMatrix::from_column_slice(2, 2, &[1.2, -0.2, 0.4, 0.6]);
        assert!(matches!(
            CombinationMatrix::from_weights(neg),
            Err(GraphError::InvalidWeight { .. })
        ));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let a = CombinationMatrix::averaging(&Topology::complete(2).unwrap()).unwrap();
        let csv = a.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "agent,1,2");
        assert_eq!(lines.len(), 3);
        let v: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, 0.5);
    }
}
