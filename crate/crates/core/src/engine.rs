//! The coded QR pipeline on the simulated grid: encode the input with
//! vertical and horizontal checksums, factorize with panel Gram-Schmidt
//! while injecting and recovering fail-stop failures at iteration
//! boundaries, audit the checksum relations, post-orthogonalize the
//! retrieved Q-factor, and solve `A x = b`.
//!
//! Layout. The working matrix is the encoded `(n+c) x (n+d)` matrix held
//! as `(p_r + m_r) x (p_c + m_c)` blocks. Out-of-node storage maps block
//! (i, j) to node (i, j) on an extended grid with dedicated checksum
//! nodes; in-node storage maps checksum block-rows and block-columns back
//! into the original `p x p` grid following the load-balanced placement.
//!
//! The factorization pivots over the `p_c` data panels only; checksum
//! columns ride along in every trailing update, which is exactly what
//! keeps the R-factor checksum relation alive. Panel `R` rows are
//! produced by all-reduces and therefore live replicated across their
//! column group; a node restored after a failure re-syncs its replica set
//! from a surviving group member during recovery.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::codec::{
    build_g0, innode_attach_generator, innode_layout, CodecError, CompactGenerator, GeneratorSet,
};
use crate::densela::{back_substitute, gauss_jordan_inverse, DenseMatrix, DenselaError, RANK_TOL};
use crate::gridsim::cost::{CostLedger, Phase};
use crate::gridsim::{
    inject_failures, BlockKey, FaultSchedule, GridConfig, GridError, GridState, NodeId, Storage,
};

#[derive(Debug, Clone, PartialEq)]
pub enum EngineError {
    Grid(GridError),
    Codec(CodecError),
    Densela(DenselaError),
    DimensionMismatch(String),
    /// More than `f` failures hit one row or column in a single iteration.
    UnrecoverableFailure { iteration: usize, detail: String },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::Grid(e) => write!(f, "{e}"),
            EngineError::Codec(e) => write!(f, "{e}"),
            EngineError::Densela(e) => write!(f, "{e}"),
            EngineError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            EngineError::UnrecoverableFailure { iteration, detail } => {
                write!(f, "unrecoverable failure at iteration {iteration}: {detail}")
            }
        }
    }
}

impl std::error::Error for EngineError {}

impl From<GridError> for EngineError {
    fn from(e: GridError) -> Self {
        EngineError::Grid(e)
    }
}
impl From<CodecError> for EngineError {
    fn from(e: CodecError) -> Self {
        EngineError::Codec(e)
    }
}
impl From<DenselaError> for EngineError {
    fn from(e: DenselaError) -> Self {
        EngineError::Densela(e)
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Checksum residuals observed at one iteration boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditRecord {
    pub iteration: usize,
    /// `||Q2 - G_v Q1||_F / max(1, ||Q1||_F)`.
    pub q_res: f64,
    /// `||R2 - R1 G_h||_F / max(1, ||R1||_F)`.
    pub r_res: f64,
}

/// One coded factorization/solve in flight.
pub struct CodedRun {
    pub cfg: GridConfig,
    pub schedule: FaultSchedule,
    pub audit: bool,
    pub ledger: CostLedger,
    pub audit_log: Vec<AuditRecord>,
    state: GridState,
    /// Compact vertical generator, `m_r x p_r`; empty when f = 0.
    g_v: DenseMatrix,
    /// Compact horizontal generator, `p_c x m_c`; empty when f = 0.
    g_h: DenseMatrix,
    g0: Option<DenseMatrix>,
    /// Checksum block-rows / block-columns.
    m_r: usize,
    m_c: usize,
    /// Node hosting each block of the extended block grid, row-major.
    owner: Vec<NodeId>,
    encoded: bool,
    factored: bool,
    panels_done: usize,
}

impl CodedRun {
    /// Builds a run with generators derived from the config seed.
    pub fn new(cfg: GridConfig, schedule: FaultSchedule, audit: bool) -> Result<Self> {
        cfg.validate()?;
        if cfg.f == 0 {
            return Self::assemble(cfg, schedule, audit, None, None, None);
        }
        match cfg.storage {
            Storage::OutOfNode => {
                let gens = GeneratorSet::for_grid(cfg.n, cfg.p_r, cfg.p_c, cfg.f, cfg.seed)?;
                Self::with_generators(cfg, gens, schedule, audit)
            }
            Storage::InNode => {
                let v_plan = innode_layout(cfg.p_r, cfg.p_r, cfg.f)?;
                if v_plan.checksums >= cfg.p_r {
                    return Err(EngineError::Grid(GridError::BadConfig(format!(
                        "in-node storage needs K = {} < p_r = {}; lower f",
                        v_plan.checksums, cfg.p_r
                    ))));
                }
                let v_plan = innode_attach_generator(&v_plan, cfg.seed, true)?;
                let h_plan = innode_layout(cfg.p_c, cfg.p_c, cfg.f)?;
                let h_plan = innode_attach_generator(&h_plan, cfg.seed.wrapping_add(1), false)?;
                let g_v = v_plan.g_tilde.clone().unwrap();
                let g_h = h_plan.g_tilde.clone().unwrap().transpose();
                let compact_v = CompactGenerator {
                    g_tilde: g_v.clone(),
                    kind: crate::codec::GeneratorKind::Vertical,
                    f: cfg.f,
                    seed: Some(cfg.seed),
                };
                let g0 = build_g0(&compact_v, cfg.n, cfg.p_r)?;
                let owners = InNodeOwners {
                    v_owner: v_plan.checksum_owner.clone(),
                    h_owner: h_plan.checksum_owner.clone(),
                };
                Self::assemble(cfg, schedule, audit, Some((g_v, g_h, g0)), Some(owners), None)
            }
        }
    }

    /// Builds a run with explicitly provided out-of-node generators, so
    /// separate runs (for example faulty and fault-free) share the code.
    pub fn with_generators(
        cfg: GridConfig,
        gens: GeneratorSet,
        schedule: FaultSchedule,
        audit: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.storage != Storage::OutOfNode {
            return Err(EngineError::Grid(GridError::BadConfig(
                "explicit GeneratorSet applies to out-of-node storage".into(),
            )));
        }
        let g_v = gens.compact_v.g_tilde.clone();
        let g_h = gens.compact_h.g_tilde.clone();
        if g_v.cols() != cfg.p_r || g_h.rows() != cfg.p_c {
            return Err(EngineError::DimensionMismatch(format!(
                "generator shapes {}x{} / {}x{} do not fit grid {}x{}",
                g_v.rows(),
                g_v.cols(),
                g_h.rows(),
                g_h.cols(),
                cfg.p_r,
                cfg.p_c
            )));
        }
        let g0 = match gens.g0 {
            Some(g0) => g0,
            None => build_g0(&gens.compact_v, cfg.n, cfg.p_r)?,
        };
        Self::assemble(cfg, schedule, audit, Some((g_v, g_h, g0)), None, None)
    }

    fn assemble(
        cfg: GridConfig,
        schedule: FaultSchedule,
        audit: bool,
        code: Option<(DenseMatrix, DenseMatrix, DenseMatrix)>,
        innode: Option<InNodeOwners>,
        _reserved: Option<()>,
    ) -> Result<Self> {
        let (g_v, g_h, g0) = match code {
            Some((v, h, g0)) => (v, h, Some(g0)),
            None => (DenseMatrix::zeros(0, cfg.p_r), DenseMatrix::zeros(cfg.p_c, 0), None),
        };
        let m_r = g_v.rows();
        let m_c = g_h.cols();
        let brows = cfg.p_r + m_r;
        let bcols = cfg.p_c + m_c;
        let (node_rows, node_cols, owner) = match (cfg.storage, &innode) {
            (Storage::OutOfNode, _) => {
                let owner = (0..brows)
                    .flat_map(|i| (0..bcols).map(move |j| NodeId::new(i, j)))
                    .collect();
                (brows, bcols, owner)
            }
            (Storage::InNode, Some(own)) => {
                let mut owner = Vec::with_capacity(brows * bcols);
                for i in 0..brows {
                    let r = if i < cfg.p_r { i } else { own.v_owner[i - cfg.p_r] };
                    for j in 0..bcols {
                        let c = if j < cfg.p_c { j } else { own.h_owner[j - cfg.p_c] };
                        owner.push(NodeId::new(r, c));
                    }
                }
                (cfg.p_r, cfg.p_c, owner)
            }
            (Storage::InNode, None) => {
                return Err(EngineError::Grid(GridError::BadConfig(
                    "in-node layout requires placement plans".into(),
                )))
            }
        };
        let ledger = CostLedger::new(cfg.cost_params());
        Ok(CodedRun {
            state: GridState::new(node_rows, node_cols),
            cfg,
            schedule,
            audit,
            ledger,
            audit_log: Vec::new(),
            g_v,
            g_h,
            g0,
            m_r,
            m_c,
            owner,
            encoded: false,
            factored: false,
            panels_done: 0,
        })
    }

    fn block(&self) -> usize {
        self.cfg.block()
    }

    fn brows(&self) -> usize {
        self.cfg.p_r + self.m_r
    }

    fn bcols(&self) -> usize {
        self.cfg.p_c + self.m_c
    }

    pub fn owner(&self, brow: usize, bcol: usize) -> NodeId {
        self.owner[brow * self.bcols() + bcol]
    }

    pub fn g0(&self) -> Option<&DenseMatrix> {
        self.g0.as_ref()
    }

    pub fn g_v_compact(&self) -> &DenseMatrix {
        &self.g_v
    }

    pub fn g_h_compact(&self) -> &DenseMatrix {
        &self.g_h
    }

    /// Distinct nodes hosting block-column `bcol`, in block-row order.
    fn column_group(&self, bcol: usize) -> Vec<NodeId> {
        let mut group = Vec::new();
        for brow in 0..self.brows() {
            let node = self.owner(brow, bcol);
            if !group.contains(&node) {
                group.push(node);
            }
        }
        group
    }

    /// Largest number of blocks of one column hosted by a single node.
    fn column_load(&self, bcol: usize) -> usize {
        let mut nodes: Vec<NodeId> = (0..self.brows()).map(|r| self.owner(r, bcol)).collect();
        nodes.sort();
        let mut best = 1;
        let mut run = 1;
        for w in nodes.windows(2) {
            if w[0] == w[1] {
                run += 1;
                best = best.max(run);
            } else {
                run = 1;
            }
        }
        best
    }

    fn work(&self, brow: usize, bcol: usize) -> Result<&DenseMatrix> {
        Ok(self.state.get(self.owner(brow, bcol), BlockKey::Work { brow, bcol })?)
    }

    fn put_work(&mut self, brow: usize, bcol: usize, block: DenseMatrix) {
        self.state.put(self.owner(brow, bcol), BlockKey::Work { brow, bcol }, block);
    }

    /// Encodes the input: distributes `a` over the systematic blocks,
    /// computes the horizontal checksum columns, then the vertical
    /// checksum rows (covering the corner). The `enc` phase is charged
    /// for the vertical scheme: `f` linear-combination reduce rounds plus
    /// the generator construction flops.
    pub fn encode(&mut self, a: &DenseMatrix) -> Result<()> {
        if a.rows() != self.cfg.n || a.cols() != self.cfg.n {
            return Err(EngineError::DimensionMismatch(format!(
                "input is {}x{}, config says n={}",
                a.rows(),
                a.cols(),
                self.cfg.n
            )));
        }
        let b = self.block();
        for i in 0..self.cfg.p_r {
            for j in 0..self.cfg.p_c {
                self.put_work(i, j, a.block(i * b, j * b, b, b));
            }
        }
        if self.m_r == 0 && self.m_c == 0 {
            self.encoded = true;
            return Ok(());
        }

        // Horizontal checksum columns: C(t, p_c + k) = sum_j g_h[j, k] A(t, j).
        // The R-factor encode is outside the Q-protection cost lemmas, so
        // these rounds are not charged to the ledger.
        for k in 0..self.m_c {
            for t in 0..self.cfg.p_r {
                let mut acc = DenseMatrix::zeros(b, b);
                for j in 0..self.cfg.p_c {
                    let w = self.g_h[(j, k)];
                    if w != 0.0 {
                        acc.axpy(w, self.work(t, j)?);
                    }
                }
                self.put_work(t, self.cfg.p_c + k, acc);
            }
        }

        // Vertical checksum rows over every block-column, corner included:
        // C(p_r + i, j) = sum_t g_v[i, t] W(t, j). One lin-comb reduce round
        // per checksum row; all column groups run in parallel.
        let words = (b * b) as f64;
        for i in 0..self.m_r {
            let mut contributors_max = 0usize;
            for j in 0..self.bcols() {
                let mut acc = DenseMatrix::zeros(b, b);
                let mut contributors = 0usize;
                for t in 0..self.cfg.p_r {
                    let w = self.g_v[(i, t)];
                    if w != 0.0 {
                        acc.axpy(w, self.work(t, j)?);
                        contributors += 1;
                    }
                }
                contributors_max = contributors_max.max(contributors);
                self.put_work(self.cfg.p_r + i, j, acc);
            }
            match self.cfg.storage {
                // Lemma-exact batch: the out-of-node round always reduces
                // over the p_r systematic nodes.
                Storage::OutOfNode => {
                    self.ledger.charge_lincomb_batch(Phase::Enc, 1, self.cfg.p_r, words)
                }
                Storage::InNode => {
                    self.ledger.charge_lincomb_batch(Phase::Enc, 1, contributors_max, words)
                }
            }
        }
        let f = self.cfg.f;
        let gen_flops = match self.cfg.storage {
            Storage::OutOfNode => (f * (f + 1) * (self.cfg.p_r - f)) as f64,
            Storage::InNode => {
                let k = self.m_r;
                (k * (k + 1) * (self.cfg.p_r - k)) as f64
            }
        };
        self.ledger.charge_flops(Phase::Enc, gen_flops);
        self.encoded = true;
        Ok(())
    }

    /// Reassembles the full encoded working matrix, `(n+c) x (n+d)`.
    pub fn gather_working(&self) -> Result<DenseMatrix> {
        let b = self.block();
        let mut out = DenseMatrix::zeros(self.brows() * b, self.bcols() * b);
        for i in 0..self.brows() {
            for j in 0..self.bcols() {
                out.set_block(i * b, j * b, self.work(i, j)?);
            }
        }
        Ok(out)
    }

    /// R block (t, j), read from the lowest-indexed replica in column
    /// group j.
    fn r_block(&self, t: usize, j: usize) -> Result<&DenseMatrix> {
        let key = BlockKey::RFactor { brow: t, bcol: j };
        for brow in 0..self.brows() {
            let node = self.owner(brow, j);
            if self.state.is_alive(node) {
                if let Some(blk) = self.state.try_get(node, key) {
                    return Ok(blk);
                }
            }
        }
        Err(EngineError::Grid(GridError::MissingBlock { node: self.owner(0, j), key }))
    }

    /// Stores an R block on every member of its column group (the
    /// replication an all-reduce leaves behind).
    fn put_r_replicated(&mut self, t: usize, j: usize, block: DenseMatrix) {
        let group = self.column_group(j);
        for node in group {
            self.state.put(node, BlockKey::RFactor { brow: t, bcol: j }, block.clone());
        }
    }

    /// Runs the panel factorization over the `p_c` data panels with fault
    /// injection and recovery at every iteration boundary.
    pub fn run_pbmgs(&mut self) -> Result<()> {
        assert!(self.encoded, "encode before factorizing");
        for t in 0..self.cfg.p_c {
            let failed = inject_failures(&mut self.state, &self.schedule, t);
            if !failed.is_empty() {
                self.recover(&failed, t)?;
            }
            self.state.iteration = t;
            self.panel_factor(t)?;
            self.trailing_update(t)?;
            self.panels_done = t + 1;
            if self.audit {
                let record = self.audit_checksums(t)?;
                self.audit_log.push(record);
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Gram-Schmidt on panel `t`: column-by-column inner products via
    /// all-reduce over the column group, normalization, and in-panel
    /// updates. Produces the diagonal R block, replicated on the group.
    fn panel_factor(&mut self, t: usize) -> Result<()> {
        let b = self.block();
        let brows = self.brows();
        let group = self.column_group(t);
        let load = self.column_load(t);
        let mut panel: Vec<DenseMatrix> = Vec::with_capacity(brows);
        for brow in 0..brows {
            panel.push(self.work(brow, t)?.clone());
        }
        let panel_scale: f64 =
            panel.iter().map(|blk| blk.frobenius_norm().powi(2)).sum::<f64>().sqrt();
        let tol = RANK_TOL * panel_scale;
        let mut r_diag = DenseMatrix::zeros(b, b);
        for i in 0..b {
            // v[off] = u_i . u_{i+off}, summed per block then tree-combined
            let width = b - i;
            let partials: Vec<DenseMatrix> = panel
                .iter()
                .map(|blk| {
                    let mut p = DenseMatrix::zeros(1, width);
                    for r in 0..b {
                        let ui = blk[(r, i)];
                        if ui == 0.0 {
                            continue;
                        }
                        for off in 0..width {
                            p[(0, off)] += ui * blk[(r, i + off)];
                        }
                    }
                    p
                })
                .collect();
            let refs: Vec<&DenseMatrix> = partials.iter().collect();
            let v = crate::gridsim::tree_combine(&refs, &vec![1.0; refs.len()]);
            self.ledger.charge_allreduce(Phase::Qr, group.len(), width as f64);
            self.ledger.charge_flops(Phase::Qr, (load * 2 * b * width) as f64);

            let rii = v[(0, 0)].max(0.0).sqrt();
            if !rii.is_finite() || rii <= tol {
                return Err(EngineError::Densela(DenselaError::RankDeficient {
                    column: t * b + i,
                    value: rii,
                    tol,
                }));
            }
            r_diag[(i, i)] = rii;
            for blk in panel.iter_mut() {
                for r in 0..b {
                    blk[(r, i)] /= rii;
                }
            }
            for j in i + 1..b {
                let rij = v[(0, j - i)] / rii;
                r_diag[(i, j)] = rij;
                for blk in panel.iter_mut() {
                    for r in 0..b {
                        let qi = blk[(r, i)];
                        blk[(r, j)] -= rij * qi;
                    }
                }
            }
        }
        for (brow, blk) in panel.into_iter().enumerate() {
            self.put_work(brow, t, blk);
        }
        self.put_r_replicated(t, t, r_diag);
        Ok(())
    }

    /// Broadcast of the factored panel along block-rows, then the trailing
    /// update `W(:, j) -= Q̄ (Q̄ᵀ W(:, j))` for every block-column right of
    /// the panel, checksum columns included.
    fn trailing_update(&mut self, t: usize) -> Result<()> {
        let b = self.block();
        let brows = self.brows();
        let bcols = self.bcols();
        if t + 1 >= bcols {
            return Ok(());
        }
        let words = (b * b) as f64;
        // one broadcast round; rows move their panel block in parallel
        self.ledger.charge_broadcast(Phase::Qr, bcols - t, words);

        let panel: Vec<DenseMatrix> =
            (0..brows).map(|brow| self.work(brow, t).cloned()).collect::<Result<_>>()?;
        let group_len = self.column_group(t + 1).len();
        let load = self.column_load(t);

        for j in t + 1..bcols {
            let partials: Vec<DenseMatrix> = (0..brows)
                .map(|brow| Ok(panel[brow].transpose().matmul(self.work(brow, j)?)))
                .collect::<Result<_>>()?;
            let refs: Vec<&DenseMatrix> = partials.iter().collect();
            let r_bar = crate::gridsim::tree_combine(&refs, &vec![1.0; refs.len()]);
            for brow in 0..brows {
                let update = panel[brow].matmul(&r_bar);
                let corrected = self.work(brow, j)?.sub(&update);
                self.put_work(brow, j, corrected);
            }
            // checksum-column R blocks close the R2 = R1 G_h relation
            self.put_r_replicated(t, j, r_bar);
        }
        // all trailing column groups run concurrently: one all-reduce round
        // plus the local multiply flops on the busiest node
        self.ledger.charge_allreduce(Phase::Qr, group_len, words);
        self.ledger.charge_flops(Phase::Qr, (load * 4 * b * b * b) as f64);
        Ok(())
    }

    /// Restores every lost block after the scheduled failures `failed`.
    /// Systematic working blocks are decoded column group by column group
    /// from the surviving vertical checksums, lost checksum blocks are
    /// re-encoded, and R replicas are re-synced from a surviving member.
    fn recover(&mut self, failed: &[NodeId], iteration: usize) -> Result<()> {
        let failed_set: BTreeSet<NodeId> = failed.iter().copied().collect();
        let b = self.block();
        let words = (b * b) as f64;
        let p_r = self.cfg.p_r;

        // The failure model allows at most f failed nodes per physical
        // grid row and column; beyond that the code cannot help.
        let mut row_cnt = vec![0usize; self.state.node_rows];
        let mut col_cnt = vec![0usize; self.state.node_cols];
        for node in &failed_set {
            row_cnt[node.row] += 1;
            col_cnt[node.col] += 1;
        }
        if row_cnt.iter().chain(&col_cnt).any(|&c| c > self.cfg.f) {
            return Err(EngineError::UnrecoverableFailure {
                iteration,
                detail: format!("more than f={} failures in one grid row or column", self.cfg.f),
            });
        }

        for &node in failed {
            self.state.revive(node);
        }

        // Column-wise classification of lost working blocks.
        let mut max_data_rounds = 0usize;
        let mut max_check_rounds = 0usize;
        let mut plans: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
        for j in 0..self.bcols() {
            let lost_data: Vec<usize> =
                (0..p_r).filter(|&i| failed_set.contains(&self.owner(i, j))).collect();
            let lost_checks: Vec<usize> = (p_r..self.brows())
                .filter(|&i| failed_set.contains(&self.owner(i, j)))
                .collect();
            max_data_rounds = max_data_rounds.max(lost_data.len());
            max_check_rounds = max_check_rounds.max(lost_checks.len());
            if !lost_data.is_empty() || !lost_checks.is_empty() {
                plans.push((j, lost_data, lost_checks));
            }
        }

        let mut f1_worst = 0usize;
        for (j, lost_data, lost_checks) in &plans {
            let j = *j;
            let f1 = lost_data.len();
            f1_worst = f1_worst.max(f1);
            if f1 > 0 {
                // surviving checksum rows for this column
                let surviving: Vec<usize> = (0..self.m_r)
                    .filter(|&i| !failed_set.contains(&self.owner(p_r + i, j)))
                    .collect();
                if surviving.len() < f1 {
                    return Err(EngineError::UnrecoverableFailure {
                        iteration,
                        detail: format!("block-column {j} has too few surviving checksums"),
                    });
                }
                let used = &surviving[..f1];
                let mut g_hat = DenseMatrix::zeros(f1, f1);
                for (r, &i) in used.iter().enumerate() {
                    for (c, &t) in lost_data.iter().enumerate() {
                        g_hat[(r, c)] = self.g_v[(i, t)];
                    }
                }
                let inv = gauss_jordan_inverse(&g_hat)
                    .ok_or(EngineError::Codec(CodecError::SingularRecovery))?;
                // A_{t,j} = sum_s inv[t,s] C_{s,j}
                //           - sum_{l surviving} (sum_s inv[t,s] g_v[s,l]) A_{l,j}
                for (k, &t) in lost_data.iter().enumerate() {
                    let mut acc = DenseMatrix::zeros(b, b);
                    for (s, &i) in used.iter().enumerate() {
                        let w = inv[(k, s)];
                        if w != 0.0 {
                            acc.axpy(w, self.work(p_r + i, j)?);
                        }
                    }
                    for l in 0..p_r {
                        if lost_data.contains(&l) {
                            continue;
                        }
                        let mut coeff = 0.0;
                        for (s, &i) in used.iter().enumerate() {
                            coeff += inv[(k, s)] * self.g_v[(i, l)];
                        }
                        if coeff != 0.0 {
                            acc.axpy(-coeff, self.work(l, j)?);
                        }
                    }
                    self.put_work(t, j, acc);
                }
            }
            // re-encode lost checksum blocks from the restored column
            for &brow in lost_checks {
                let i = brow - p_r;
                let mut acc = DenseMatrix::zeros(b, b);
                for l in 0..p_r {
                    let w = self.g_v[(i, l)];
                    if w != 0.0 {
                        acc.axpy(w, self.work(l, j)?);
                    }
                }
                self.put_work(brow, j, acc);
            }
        }

        // Charges compose like the closed-form recovery cost: decode
        // rounds, re-encode rounds, then the coefficient work.
        self.ledger.charge_lincomb_batch(Phase::Recov, max_data_rounds, p_r, words);
        self.ledger.charge_lincomb_batch(Phase::Recov, max_check_rounds, p_r, words);
        if f1_worst > 0 {
            let ff = f1_worst as f64;
            self.ledger.charge_flops(Phase::Recov, ff * ff + 2.0 / 3.0 * (ff * ff * ff));
        }

        // R replicas: a restored node copies the blocks it should hold
        // from any surviving member of its column group (uncharged; the
        // replicas exist because trailing updates end in all-reduces).
        for j in 0..self.bcols() {
            let group = self.column_group(j);
            if !group.iter().any(|n| failed_set.contains(n)) {
                continue;
            }
            let keys: Vec<BlockKey> = group
                .iter()
                .filter(|n| !failed_set.contains(n))
                .flat_map(|&n| {
                    self.state
                        .keys(n)
                        .filter(|k| matches!(k, BlockKey::RFactor { bcol, .. } if *bcol == j))
                        .copied()
                        .collect::<Vec<_>>()
                })
                .collect();
            for key in keys {
                let holder = group.iter().copied().find(|&n| {
                    !failed_set.contains(&n) && self.state.try_get(n, key).is_some()
                });
                if let Some(holder) = holder {
                    let block = self.state.get(holder, key)?.clone();
                    for &member in &group {
                        if failed_set.contains(&member)
                            && self.state.try_get(member, key).is_none()
                        {
                            self.state.put(member, key, block.clone());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Measures the checksum relations at the current boundary without
    /// touching the state.
    pub fn audit_checksums(&self, iteration: usize) -> Result<AuditRecord> {
        if self.m_r == 0 && self.m_c == 0 {
            return Ok(AuditRecord { iteration, q_res: 0.0, r_res: 0.0 });
        }
        let b = self.block();
        let p_r = self.cfg.p_r;

        // Q relation, blockwise: ||W(p_r+i, j) - sum_t g_v[i,t] W(t,j)||
        let mut q_num = 0.0;
        let mut q_den = 0.0;
        for j in 0..self.bcols() {
            for t in 0..p_r {
                q_den += self.work(t, j)?.frobenius_norm().powi(2);
            }
            for i in 0..self.m_r {
                let mut expect = DenseMatrix::zeros(b, b);
                for t in 0..p_r {
                    let w = self.g_v[(i, t)];
                    if w != 0.0 {
                        expect.axpy(w, self.work(t, j)?);
                    }
                }
                q_num += self.work(p_r + i, j)?.sub(&expect).frobenius_norm().powi(2);
            }
        }
        let q_res = q_num.sqrt() / q_den.sqrt().max(1.0);

        // R relation over the block-rows actually produced so far.
        let filled = self.panels_done.min(self.cfg.p_c);
        let mut r_num = 0.0;
        let mut r_den = 0.0;
        for t in 0..filled {
            for j in t..self.cfg.p_c {
                r_den += self.r_block(t, j)?.frobenius_norm().powi(2);
            }
            for k in 0..self.m_c {
                let mut expect = DenseMatrix::zeros(b, b);
                for j in 0..self.cfg.p_c {
                    let w = self.g_h[(j, k)];
                    if w == 0.0 || j < t {
                        // R1 is block upper-triangular: blocks below the
                        // diagonal are exactly zero
                        continue;
                    }
                    expect.axpy(w, self.r_block(t, j)?);
                }
                r_num += self.r_block(t, self.cfg.p_c + k)?.sub(&expect).frobenius_norm().powi(2);
            }
        }
        let r_res = r_num.sqrt() / r_den.sqrt().max(1.0);
        Ok(AuditRecord { iteration, q_res, r_res })
    }

    /// Top `n x n` of the retrieved Q-factor (first `n` working columns).
    pub fn gather_q1(&self) -> Result<DenseMatrix> {
        let b = self.block();
        let n = self.cfg.n;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..self.cfg.p_r {
            for j in 0..self.cfg.p_c {
                out.set_block(i * b, j * b, self.work(i, j)?);
            }
        }
        Ok(out)
    }

    /// Full retrieved left factor `[Q1; G_v Q1]`, `(n+c) x n`.
    pub fn gather_q_full(&self) -> Result<DenseMatrix> {
        let b = self.block();
        let mut out = DenseMatrix::zeros(self.brows() * b, self.cfg.n);
        for i in 0..self.brows() {
            for j in 0..self.cfg.p_c {
                out.set_block(i * b, j * b, self.work(i, j)?);
            }
        }
        Ok(out)
    }

    /// Leading `n x n` upper-triangular R factor.
    pub fn gather_r1(&self) -> Result<DenseMatrix> {
        let b = self.block();
        let n = self.cfg.n;
        let mut out = DenseMatrix::zeros(n, n);
        for t in 0..self.cfg.p_c {
            for j in t..self.cfg.p_c {
                out.set_block(t * b, j * b, self.r_block(t, j)?);
            }
        }
        Ok(out)
    }

    /// Full `n x (n+d)` R factor including checksum columns.
    pub fn gather_r_full(&self) -> Result<DenseMatrix> {
        let b = self.block();
        let mut out = DenseMatrix::zeros(self.cfg.n, self.bcols() * b);
        for t in 0..self.cfg.p_c {
            for j in t..self.bcols() {
                out.set_block(t * b, j * b, self.r_block(t, j)?);
            }
        }
        Ok(out)
    }

    /// Post-orthogonalization `(G0 Q1, G0 b)` via the blockwise scheme:
    /// initialize per-block-row accumulators, broadcast the first `m_r`
    /// block-rows updating as they arrive, then close the top block-rows
    /// with linear-combination reduces from the bottom `p_r - m_r` rows.
    /// With f = 0 the factor is already orthogonal and this is a no-op.
    pub fn post_orthogonalize(&mut self, rhs: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        assert!(self.factored, "factorize before post-orthogonalizing");
        if rhs.rows() != self.cfg.n || rhs.cols() != 1 {
            return Err(EngineError::DimensionMismatch(format!(
                "rhs is {}x{}, expected {}x1",
                rhs.rows(),
                rhs.cols(),
                self.cfg.n
            )));
        }
        if self.m_r == 0 {
            return Ok((self.gather_q1()?, rhs.clone()));
        }
        let b = self.block();
        let n = self.cfg.n;
        let p_r = self.cfg.p_r;
        let m_r = self.m_r;
        // h = I + G1 (compact), v_tilde the random part
        let mut h = self.g_v.block(0, 0, m_r, m_r);
        for i in 0..m_r {
            h[(i, i)] += 1.0;
        }
        let v_tilde = self.g_v.block(0, m_r, m_r, p_r - m_r);

        let mut q_out = DenseMatrix::zeros(n, n);
        let mut b_out = DenseMatrix::zeros(n, 1);
        for j in 0..self.cfg.p_c {
            // Z_i = [Q1 block (i, j) | rhs rows of block i]
            let z: Vec<DenseMatrix> = (0..p_r)
                .map(|i| {
                    let blk = self.work(i, j)?;
                    let mut z = DenseMatrix::zeros(b, b + 1);
                    z.set_block(0, 0, blk);
                    for r in 0..b {
                        z[(r, b)] = rhs[(i * b + r, 0)];
                    }
                    Ok(z)
                })
                .collect::<Result<_>>()?;
            let mut w: Vec<DenseMatrix> = (0..p_r)
                .map(|i| if i < m_r { z[i].scale(h[(i, i)]) } else { z[i].scale(-1.0) })
                .collect();
            for l in 0..m_r {
                // broadcast Z_l down the column group, then local updates
                for (i, wi) in w.iter_mut().enumerate() {
                    if i < m_r {
                        if i != l {
                            wi.axpy(h[(i, l)], &z[l]);
                        }
                    } else {
                        wi.axpy(v_tilde[(l, i - m_r)], &z[l]);
                    }
                }
            }
            for i in 0..m_r {
                // lin-comb reduce of v[i, t] Z_t over the bottom rows
                let bottom: Vec<&DenseMatrix> = z[m_r..].iter().collect();
                let coeffs: Vec<f64> = (m_r..p_r).map(|t| v_tilde[(i, t - m_r)]).collect();
                let reduced = crate::gridsim::tree_combine(&bottom, &coeffs);
                w[i].axpy(1.0, &reduced);
            }
            for (i, wi) in w.iter().enumerate() {
                for r in 0..b {
                    for c in 0..b {
                        q_out[(i * b + r, j * b + c)] = wi[(r, c)];
                    }
                }
                if j == 0 {
                    for r in 0..b {
                        b_out[(i * b + r, 0)] = wi[(r, b)];
                    }
                }
            }
        }
        // Charges compose exactly like the closed-form post cost; the
        // block-column groups all run in parallel.
        let w_post = (b * (b + 1)) as f64;
        let f = self.cfg.f;
        self.ledger.charge_broadcast_batch(Phase::Post, f, p_r, w_post);
        self.ledger.charge_reduce_batch(Phase::Post, f, p_r - f + 1, w_post);
        self.ledger.charge_flops(Phase::Post, (2.0 * f as f64 - 1.0) * w_post);
        Ok((q_out, b_out))
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }
}

struct InNodeOwners {
    v_owner: Vec<usize>,
    h_owner: Vec<usize>,
}

/// Result of a coded factorization.
pub struct FactorizeOutcome {
    pub q1: DenseMatrix,
    pub r1: DenseMatrix,
    pub audit_log: Vec<AuditRecord>,
    pub ledger: CostLedger,
}

/// Result of a coded solve.
pub struct SolveOutcome {
    pub x: DenseMatrix,
    /// `||A x - b|| / ||b||`, validated densely after the run.
    pub residual: f64,
    pub audit_log: Vec<AuditRecord>,
    pub ledger: CostLedger,
}

/// Coded factorization of `a` under the given config and fault schedule.
pub fn factorize(
    cfg: &GridConfig,
    a: &DenseMatrix,
    schedule: FaultSchedule,
    audit: bool,
) -> Result<FactorizeOutcome> {
    let mut run = CodedRun::new(cfg.clone(), schedule, audit)?;
    run.encode(a)?;
    run.run_pbmgs()?;
    Ok(FactorizeOutcome {
        q1: run.gather_q1()?,
        r1: run.gather_r1()?,
        audit_log: run.audit_log.clone(),
        ledger: run.ledger.clone(),
    })
}

/// Solves `A x = b` through the coded pipeline: encode, factorize under
/// faults, post-orthogonalize, then back-substitute
/// `R x = (G0 Q1)ᵀ (G0 b)`. The final triangular solve is the same call a
/// plain QR solve makes, so it stays off the coding ledger.
pub fn solve(
    cfg: &GridConfig,
    a: &DenseMatrix,
    b: &DenseMatrix,
    schedule: FaultSchedule,
    audit: bool,
) -> Result<SolveOutcome> {
    let mut run = CodedRun::new(cfg.clone(), schedule, audit)?;
    solve_with(&mut run, a, b)
}

/// Solve on an already-constructed run (for sharing generators across
/// schedules).
pub fn solve_with(run: &mut CodedRun, a: &DenseMatrix, b: &DenseMatrix) -> Result<SolveOutcome> {
    run.encode(a)?;
    run.run_pbmgs()?;
    let (q_o, b_o) = run.post_orthogonalize(b)?;
    let y = q_o.transpose().matmul(&b_o);
    let r1 = run.gather_r1()?;
    let x = back_substitute(&r1, &y)?;
    let residual = a.matmul(&x).sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE);
    Ok(SolveOutcome {
        x,
        residual,
        audit_log: run.audit_log.clone(),
        ledger: run.ledger.clone(),
    })
}
