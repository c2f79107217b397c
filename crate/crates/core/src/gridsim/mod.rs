//! Deterministic simulator of a processor grid with 2D block data
//! distribution, MPI-style collectives charged under the alpha-beta-gamma
//! model, and fail-stop fault injection.
//!
//! One simulation is a single logical timeline: collectives performed by
//! disjoint node groups in the same step cost the maximum over the groups,
//! and the ledger charges are the timing output. Reduction trees combine
//! contributions pairwise in node-index order, so a rerun with the same
//! seed reproduces every block and every ledger entry bit for bit.

pub mod cost;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densela::DenseMatrix;
use cost::{CostLedger, Phase};

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    BadConfig(String),
    BadDimensions(String),
    /// A collective touched a failed node.
    DeadParticipant(NodeId),
    /// A fault set exceeds the per-row/per-column budget.
    IllegalFaultSet { iteration: usize },
    /// A block expected in a node store was not there.
    MissingBlock { node: NodeId, key: BlockKey },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::BadConfig(msg) => write!(f, "bad grid config: {msg}"),
            GridError::BadDimensions(msg) => write!(f, "bad dimensions: {msg}"),
            GridError::DeadParticipant(node) => write!(f, "collective over failed node {node}"),
            GridError::IllegalFaultSet { iteration } => {
                write!(f, "fault set at iteration {iteration} exceeds the failure budget")
            }
            GridError::MissingBlock { node, key } => {
                write!(f, "node {node} does not hold block {key:?}")
            }
        }
    }
}

impl std::error::Error for GridError {}

pub type Result<T> = std::result::Result<T, GridError>;

/// Where checksum blocks live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Storage {
    OutOfNode,
    InNode,
}

/// Grid and cost-model configuration for one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Matrix order.
    pub n: usize,
    pub p_r: usize,
    pub p_c: usize,
    /// Failure budget per grid row and per grid column.
    pub f: usize,
    pub storage: Storage,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_r == 0 || self.p_r != self.p_c {
            return Err(GridError::BadConfig(format!(
                "grid must be square, got {}x{}",
                self.p_r, self.p_c
            )));
        }
        if self.n == 0 || self.n % self.p_r != 0 {
            return Err(GridError::BadConfig(format!(
                "p_r={} must divide matrix order n={}",
                self.p_r, self.n
            )));
        }
        if 2 * self.f > self.p_r.min(self.p_c) {
            return Err(GridError::BadConfig(format!(
                "failure budget f={} exceeds half the grid dimension {}",
                self.f,
                self.p_r.min(self.p_c)
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(GridError::BadConfig("cost coefficients must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn cost_params(&self) -> cost::CostParams {
        cost::CostParams { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    /// Side length of one block.
    pub fn block(&self) -> usize {
        self.n / self.p_r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub row: usize,
    pub col: usize,
}

impl NodeId {
    pub fn new(row: usize, col: usize) -> Self {
        NodeId { row, col }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Addresses one stored block inside a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BlockKey {
    /// Block (brow, bcol) of the evolving working matrix.
    Work { brow: usize, bcol: usize },
    /// Block (brow, bcol) of the accumulated R factor.
    RFactor { brow: usize, bcol: usize },
}

/// Per-node block stores plus liveness for a `node_rows x node_cols` grid.
#[derive(Debug, Clone)]
pub struct GridState {
    pub node_rows: usize,
    pub node_cols: usize,
    alive: Vec<bool>,
    stores: Vec<BTreeMap<BlockKey, DenseMatrix>>,
    pub iteration: usize,
}

impl GridState {
    pub fn new(node_rows: usize, node_cols: usize) -> Self {
        GridState {
            node_rows,
            node_cols,
            alive: vec![true; node_rows * node_cols],
            stores: vec![BTreeMap::new(); node_rows * node_cols],
            iteration: 0,
        }
    }

    fn idx(&self, node: NodeId) -> usize {
        debug_assert!(node.row < self.node_rows && node.col < self.node_cols);
        node.row * self.node_cols + node.col
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.alive[self.idx(node)]
    }

    /// Marks the node failed and drops everything it stored.
    pub fn kill(&mut self, node: NodeId) {
        let i = self.idx(node);
        self.alive[i] = false;
        self.stores[i].clear();
    }

    /// Brings a failed node back as an empty replacement in the same slot.
    pub fn revive(&mut self, node: NodeId) {
        let i = self.idx(node);
        self.alive[i] = true;
    }

    pub fn put(&mut self, node: NodeId, key: BlockKey, block: DenseMatrix) {
        let i = self.idx(node);
        debug_assert!(self.alive[i], "storing into failed node {node}");
        self.stores[i].insert(key, block);
    }

    pub fn get(&self, node: NodeId, key: BlockKey) -> Result<&DenseMatrix> {
        self.stores[self.idx(node)].get(&key).ok_or(GridError::MissingBlock { node, key })
    }

    pub fn try_get(&self, node: NodeId, key: BlockKey) -> Option<&DenseMatrix> {
        self.stores[self.idx(node)].get(&key)
    }

    pub fn keys(&self, node: NodeId) -> impl Iterator<Item = &BlockKey> {
        self.stores[self.idx(node)].keys()
    }

    pub fn alive_nodes(&self) -> Vec<NodeId> {
        (0..self.node_rows)
            .flat_map(|r| (0..self.node_cols).map(move |c| NodeId::new(r, c)))
            .filter(|&n| self.is_alive(n))
            .collect()
    }
}

/// Splits `a` into `p_r x p_c` blocks, block (i, j) on node (i, j).
pub fn distribute(a: &DenseMatrix, config: &GridConfig) -> Result<GridState> {
    config.validate()?;
    if a.rows() != config.n || a.cols() != config.n {
        return Err(GridError::BadDimensions(format!(
            "matrix is {}x{}, config says n={}",
            a.rows(),
            a.cols(),
            config.n
        )));
    }
    let b = config.block();
    let mut state = GridState::new(config.p_r, config.p_c);
    for i in 0..config.p_r {
        for j in 0..config.p_c {
            let block = a.block(i * b, j * b, b, b);
            state.put(NodeId::new(i, j), BlockKey::Work { brow: i, bcol: j }, block);
        }
    }
    Ok(state)
}

/// Reassembles the matrix distributed by [`distribute`].
pub fn gather(state: &GridState, config: &GridConfig) -> Result<DenseMatrix> {
    let b = config.block();
    let mut out = DenseMatrix::zeros(config.n, config.n);
    for i in 0..config.p_r {
        for j in 0..config.p_c {
            let node = NodeId::new(i, j);
            if !state.is_alive(node) {
                return Err(GridError::DeadParticipant(node));
            }
            let block = state.get(node, BlockKey::Work { brow: i, bcol: j })?;
            out.set_block(i * b, j * b, block);
        }
    }
    Ok(out)
}

/// Combines `coeffs[i] * blocks[i]` pairwise in index order (a
/// left-balanced binary tree), the summation order every simulated
/// reduction uses.
pub fn tree_combine(blocks: &[&DenseMatrix], coeffs: &[f64]) -> DenseMatrix {
    assert_eq!(blocks.len(), coeffs.len());
    assert!(!blocks.is_empty());
    let mut layer: Vec<DenseMatrix> =
        blocks.iter().zip(coeffs).map(|(b, &c)| b.scale(c)).collect();
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.into_iter();
        while let Some(first) = it.next() {
            match it.next() {
                Some(second) => next.push(first.add(&second)),
                None => next.push(first),
            }
        }
        layer = next;
    }
    layer.pop().unwrap()
}

fn ensure_alive(state: &GridState, group: &[NodeId]) -> Result<()> {
    for &node in group {
        if !state.is_alive(node) {
            return Err(GridError::DeadParticipant(node));
        }
    }
    Ok(())
}

/// Replicates `payload` to every group member and charges the broadcast
/// closed form for the group size.
pub fn collective_broadcast(
    state: &GridState,
    group: &[NodeId],
    payload: &DenseMatrix,
    phase: Phase,
    ledger: &mut CostLedger,
) -> Result<DenseMatrix> {
    if group.is_empty() {
        return Err(GridError::BadDimensions("broadcast over empty group".into()));
    }
    ensure_alive(state, group)?;
    ledger.charge_broadcast(phase, group.len(), (payload.rows() * payload.cols()) as f64);
    Ok(payload.clone())
}

/// Reduces `sum_i coeffs[i] * blocks[i]` to the root in tree order.
pub fn collective_reduce(
    state: &GridState,
    group: &[NodeId],
    blocks: &[&DenseMatrix],
    coeffs: &[f64],
    phase: Phase,
    ledger: &mut CostLedger,
) -> Result<DenseMatrix> {
    if group.is_empty() || group.len() != blocks.len() || blocks.len() != coeffs.len() {
        return Err(GridError::BadDimensions("reduce group/operand mismatch".into()));
    }
    ensure_alive(state, group)?;
    ledger.charge_reduce(phase, group.len(), (blocks[0].rows() * blocks[0].cols()) as f64);
    Ok(tree_combine(blocks, coeffs))
}

/// All-reduce: every participant ends with the reduce result.
pub fn collective_allreduce(
    state: &GridState,
    group: &[NodeId],
    blocks: &[&DenseMatrix],
    coeffs: &[f64],
    phase: Phase,
    ledger: &mut CostLedger,
) -> Result<DenseMatrix> {
    if group.is_empty() || group.len() != blocks.len() || blocks.len() != coeffs.len() {
        return Err(GridError::BadDimensions("allreduce group/operand mismatch".into()));
    }
    ensure_alive(state, group)?;
    ledger.charge_allreduce(phase, group.len(), (blocks[0].rows() * blocks[0].cols()) as f64);
    Ok(tree_combine(blocks, coeffs))
}

/// Linear-combination reduce: contributors' scaled blocks land on a
/// separate destination node, charged as a reduce over `p + 1` ranks plus
/// the scaling flops.
pub fn lincomb_reduce(
    state: &GridState,
    contributors: &[NodeId],
    blocks: &[&DenseMatrix],
    coeffs: &[f64],
    dest: NodeId,
    phase: Phase,
    ledger: &mut CostLedger,
) -> Result<DenseMatrix> {
    if contributors.is_empty() || contributors.len() != blocks.len() || blocks.len() != coeffs.len()
    {
        return Err(GridError::BadDimensions("lin-comb group/operand mismatch".into()));
    }
    ensure_alive(state, contributors)?;
    if !state.is_alive(dest) {
        return Err(GridError::DeadParticipant(dest));
    }
    let words = (blocks[0].rows() * blocks[0].cols()) as f64;
    ledger.charge_lincomb_batch(phase, 1, contributors.len(), words);
    Ok(tree_combine(blocks, coeffs))
}

// ---------------------------------------------------------------------------
// Fault schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultMode {
    None,
    ReverseDiagonal,
    Random,
    Explicit,
}

/// Per-iteration node failures; every produced set respects the
/// per-row/per-column budget `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub mode: FaultMode,
    /// Budget per grid row and per grid column.
    pub f: usize,
    /// Systematic grid dimension the reverse-diagonal band rotates over.
    pub systematic: usize,
    pub seed: u64,
    #[serde(default)]
    pub explicit: Vec<Vec<NodeId>>,
}

impl FaultSchedule {
    pub fn none() -> Self {
        FaultSchedule { mode: FaultMode::None, f: 0, systematic: 0, seed: 0, explicit: Vec::new() }
    }

    pub fn reverse_diagonal(p: usize, f: usize) -> Self {
        FaultSchedule {
            mode: FaultMode::ReverseDiagonal,
            f,
            systematic: p,
            seed: 0,
            explicit: Vec::new(),
        }
    }

    pub fn random(p: usize, f: usize, seed: u64) -> Self {
        FaultSchedule { mode: FaultMode::Random, f, systematic: p, seed, explicit: Vec::new() }
    }

    /// Explicit per-iteration failure sets, validated against the budget
    /// on a `rows x cols` grid.
    pub fn explicit(
        sets: Vec<Vec<NodeId>>,
        f: usize,
        p: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        for (t, set) in sets.iter().enumerate() {
            if !set_is_legal(set, rows, cols, f) {
                return Err(GridError::IllegalFaultSet { iteration: t });
            }
        }
        Ok(FaultSchedule { mode: FaultMode::Explicit, f, systematic: p, seed: 0, explicit: sets })
    }

    /// Failure set for iteration `t` on a `rows x cols` grid.
    pub fn failures_at(&self, t: usize, rows: usize, cols: usize) -> Vec<NodeId> {
        match self.mode {
            FaultMode::None => Vec::new(),
            FaultMode::Explicit => self.explicit.get(t).cloned().unwrap_or_default(),
            FaultMode::ReverseDiagonal => {
                // Band of f consecutive anti-diagonals over the systematic
                // p x p part, rotating with t: exactly f failures per row
                // and per column.
                let p = self.systematic;
                if p == 0 || self.f == 0 {
                    return Vec::new();
                }
                let residues: Vec<usize> = (0..self.f).map(|s| (t + s) % p).collect();
                let mut out = Vec::new();
                for i in 0..p.min(rows) {
                    for j in 0..p.min(cols) {
                        if residues.contains(&((i + j) % p)) {
                            out.push(NodeId::new(i, j));
                        }
                    }
                }
                out
            }
            FaultMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let mut nodes: Vec<NodeId> = (0..rows)
                    .flat_map(|r| (0..cols).map(move |c| NodeId::new(r, c)))
                    .collect();
                nodes.shuffle(&mut rng);
                let target = rng.gen_range(0..=self.f * self.systematic.max(1));
                let mut row_cnt = vec![0usize; rows];
                let mut col_cnt = vec![0usize; cols];
                let mut out = Vec::new();
                for node in nodes {
                    if out.len() >= target {
                        break;
                    }
                    if row_cnt[node.row] < self.f && col_cnt[node.col] < self.f {
                        row_cnt[node.row] += 1;
                        col_cnt[node.col] += 1;
                        out.push(node);
                    }
                }
                out.sort();
                out
            }
        }
    }
}

fn set_is_legal(set: &[NodeId], rows: usize, cols: usize, f: usize) -> bool {
    let mut row_cnt = vec![0usize; rows];
    let mut col_cnt = vec![0usize; cols];
    for node in set {
        if node.row >= rows || node.col >= cols {
            return false;
        }
        row_cnt[node.row] += 1;
        col_cnt[node.col] += 1;
    }
    row_cnt.iter().all(|&c| c <= f) && col_cnt.iter().all(|&c| c <= f)
}

/// Kills the scheduled nodes for iteration `t` and returns their
/// identities, the external failure oracle of the fail-stop model.
pub fn inject_failures(state: &mut GridState, schedule: &FaultSchedule, t: usize) -> Vec<NodeId> {
    let set = schedule.failures_at(t, state.node_rows, state.node_cols);
    for &node in &set {
        state.kill(node);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use cost::CostParams;

    fn test_config() -> GridConfig {
        GridConfig {
            n: 8,
            p_r: 2,
            p_c: 2,
            f: 1,
            storage: Storage::OutOfNode,
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.01,
            seed: 0,
        }
    }

    fn ledger() -> CostLedger {
        CostLedger::new(CostParams { alpha: 1.0, beta: 0.1, gamma: 0.01 })
    }

    #[test]
    fn distribute_gather_roundtrip_bitwise() {
        let cfg = test_config();
        let a = DenseMatrix::random_uniform(8, 8, 5);
        let state = distribute(&a, &cfg).unwrap();
        let back = gather(&state, &cfg).unwrap();
        assert_eq!(a.data(), back.data());
    }

    #[test]
    fn distribute_tiles_blocks() {
        let cfg = test_config();
        let a = DenseMatrix::random_uniform(8, 8, 6);
        let state = distribute(&a, &cfg).unwrap();
        let blk = state.get(NodeId::new(1, 0), BlockKey::Work { brow: 1, bcol: 0 }).unwrap();
        assert_eq!(blk.data(), a.block(4, 0, 4, 4).data());
    }

    #[test]
    fn distribute_rejects_indivisible() {
        let mut cfg = test_config();
        cfg.n = 10;
        cfg.p_r = 4;
        cfg.p_c = 4;
        let a = DenseMatrix::random_uniform(10, 10, 1);
        assert!(matches!(distribute(&a, &cfg), Err(GridError::BadConfig(_))));
    }

    #[test]
    fn config_rejects_oversize_budget() {
        let mut cfg = test_config();
        cfg.f = 2; // 2*2 > 2
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn broadcast_replicates_and_charges() {
        let state = GridState::new(2, 2);
        let mut l = ledger();
        let group = [NodeId::new(0, 0), NodeId::new(0, 1)];
        let payload = DenseMatrix::random_uniform(2, 2, 3);
        let got = collective_broadcast(&state, &group, &payload, Phase::Qr, &mut l).unwrap();
        assert_eq!(got, payload);
        assert_eq!(l.phase(Phase::Qr).model_time, cost::t_broadcast(2, 4.0, &l.params));
    }

    #[test]
    fn broadcast_rejects_dead_participant() {
        let mut state = GridState::new(2, 2);
        state.kill(NodeId::new(0, 1));
        let mut l = ledger();
        let group = [NodeId::new(0, 0), NodeId::new(0, 1)];
        let payload = DenseMatrix::zeros(1, 1);
        assert!(matches!(
            collective_broadcast(&state, &group, &payload, Phase::Qr, &mut l),
            Err(GridError::DeadParticipant(n)) if n == NodeId::new(0, 1)
        ));
    }

    #[test]
    fn reduce_zero_coefficients_give_zero() {
        let state = GridState::new(1, 3);
        let mut l = ledger();
        let group: Vec<NodeId> = (0..3).map(|c| NodeId::new(0, c)).collect();
        let blocks: Vec<DenseMatrix> =
            (0..3).map(|s| DenseMatrix::random_uniform(2, 2, s)).collect();
        let refs: Vec<&DenseMatrix> = blocks.iter().collect();
        let out =
            collective_reduce(&state, &group, &refs, &[0.0; 3], Phase::Enc, &mut l).unwrap();
        assert_eq!(out, DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn allreduce_matches_reduce_value() {
        let state = GridState::new(1, 4);
        let mut l = ledger();
        let group: Vec<NodeId> = (0..4).map(|c| NodeId::new(0, c)).collect();
        let blocks: Vec<DenseMatrix> =
            (0..4).map(|s| DenseMatrix::random_uniform(3, 1, 40 + s)).collect();
        let refs: Vec<&DenseMatrix> = blocks.iter().collect();
        let coeffs = [1.0, 0.5, -2.0, 0.25];
        let r = collective_reduce(&state, &group, &refs, &coeffs, Phase::Qr, &mut l).unwrap();
        let ar = collective_allreduce(&state, &group, &refs, &coeffs, Phase::Qr, &mut l).unwrap();
        assert_eq!(r, ar);
    }

    #[test]
    fn tree_combine_is_left_balanced() {
        // 3 contributions: ((b0 + b1) + b2), not (b0 + (b1 + b2))
        let b0 = DenseMatrix::from_vec(1, 1, vec![1e16]).unwrap();
        let b1 = DenseMatrix::from_vec(1, 1, vec![-1e16]).unwrap();
        let b2 = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let got = tree_combine(&[&b0, &b1, &b2], &[1.0, 1.0, 1.0]);
        assert_eq!(got[(0, 0)], 1.0);
    }

    #[test]
    fn reverse_diagonal_band_shape() {
        let schedule = FaultSchedule::reverse_diagonal(3, 2);
        let set = schedule.failures_at(0, 3, 3);
        // residues {0, 1}: all (i, j) with (i+j) mod 3 in {0, 1}
        let want: Vec<NodeId> = [(0, 0), (0, 1), (1, 0), (1, 2), (2, 1), (2, 2)]
            .iter()
            .map(|&(r, c)| NodeId::new(r, c))
            .collect();
        let mut got = set.clone();
        got.sort();
        assert_eq!(got, want);
        assert!(set_is_legal(&set, 3, 3, 2));
        // rotates with t
        let set1 = schedule.failures_at(1, 3, 3);
        assert_ne!(set, set1);
        assert!(set_is_legal(&set1, 3, 3, 2));
    }

    #[test]
    fn random_schedule_respects_budget_over_1000_iterations() {
        let schedule = FaultSchedule::random(4, 2, 99);
        for t in 0..1000 {
            let set = schedule.failures_at(t, 6, 6);
            assert!(set_is_legal(&set, 6, 6, 2), "illegal set at t={t}");
        }
    }

    #[test]
    fn random_schedule_deterministic() {
        let a = FaultSchedule::random(5, 2, 7);
        let b = FaultSchedule::random(5, 2, 7);
        for t in 0..50 {
            assert_eq!(a.failures_at(t, 7, 7), b.failures_at(t, 7, 7));
        }
    }

    #[test]
    fn none_mode_is_empty() {
        let schedule = FaultSchedule::none();
        for t in 0..10 {
            assert!(schedule.failures_at(t, 4, 4).is_empty());
        }
    }

    #[test]
    fn explicit_schedule_validates_budget() {
        let bad = vec![vec![NodeId::new(0, 0), NodeId::new(0, 1)]];
        assert!(matches!(
            FaultSchedule::explicit(bad, 1, 2, 3, 3),
            Err(GridError::IllegalFaultSet { iteration: 0 })
        ));
        let good = vec![vec![NodeId::new(0, 0), NodeId::new(1, 1)]];
        assert!(FaultSchedule::explicit(good, 1, 2, 3, 3).is_ok());
    }

    #[test]
    fn inject_kills_and_reports() {
        let mut state = GridState::new(3, 3);
        state.put(NodeId::new(0, 0), BlockKey::Work { brow: 0, bcol: 0 }, DenseMatrix::zeros(1, 1));
        let schedule = FaultSchedule::explicit(
            vec![vec![NodeId::new(0, 0)]],
            1,
            3,
            3,
            3,
        )
        .unwrap();
        let failed = inject_failures(&mut state, &schedule, 0);
        assert_eq!(failed, vec![NodeId::new(0, 0)]);
        assert!(!state.is_alive(NodeId::new(0, 0)));
        assert!(state.try_get(NodeId::new(0, 0), BlockKey::Work { brow: 0, bcol: 0 }).is_none());
    }
}
