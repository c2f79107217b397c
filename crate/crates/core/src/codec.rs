//! Checksum-generator construction and validation.
//!
//! Two generator families protect the factorization. The vertical family
//! guards the Q-factor and must satisfy the post-orthogonalization
//! condition `G̃₁ = -1/2 Ṽ Ṽᵀ`, which makes the sparse transform `G₀`
//! restore orthogonality after decoding. The horizontal family guards the
//! R-factor; any generator whose square submatrices are all full-rank
//! works, so a real Cauchy matrix is used for reproducibility.
//!
//! The in-node half of the module places checksum blocks inside the
//! original nodes: [`innode_min_checksums`] evaluates the tight lower
//! bound on the number of checksum blocks, [`innode_layout`] produces the
//! load-balanced placement, and [`innode_bound_witness`] brute-forces
//! failure sets to confirm both achievability at the bound and failure
//! one below it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::densela::{gauss_jordan_inverse, DenseMatrix};

/// Enumeration cap for [`check_mds`]: beyond this many square submatrices
/// the check errors out instead of sampling.
pub const MDS_ENUMERATION_CAP: u64 = 2_000_000;

/// Full-rank judgment for a submatrix: smallest singular value must exceed
/// this factor times (max-abs entry * size).
pub const SVD_TOL: f64 = 1e-10;

/// Tolerance on the post-orthogonalization condition when building `G₀`.
pub const POST_ORTH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum CodecError {
    /// Failure budget outside `1 <= f <= p/2`.
    BadFailureBudget { f: usize, p: usize },
    BadDimensions(String),
    /// The compact generator violates `G̃₁ = -1/2 Ṽ Ṽᵀ`.
    ConditionViolated { defect: f64 },
    /// Submatrix enumeration would exceed [`MDS_ENUMERATION_CAP`].
    EnumerationTooLarge { count: u64 },
    /// Node count does not divide the data-block count.
    IndivisibleLoad { data_blocks: usize, nodes: usize },
    TooManyFailures { failed: usize, budget: usize },
    /// The reduced recovery system was singular or under-determined.
    SingularRecovery,
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::BadFailureBudget { f: fail, p } => {
                write!(f, "failure budget f={fail} outside 1..={} for p={p}", p / 2)
            }
            CodecError::BadDimensions(msg) => write!(f, "bad dimensions: {msg}"),
            CodecError::ConditionViolated { defect } => {
                write!(f, "post-orthogonalization condition violated, defect {defect:e}")
            }
            CodecError::EnumerationTooLarge { count } => {
                write!(f, "submatrix enumeration of {count} exceeds cap {MDS_ENUMERATION_CAP}")
            }
            CodecError::IndivisibleLoad { data_blocks, nodes } => {
                write!(f, "node count {nodes} does not divide {data_blocks} data blocks")
            }
            CodecError::TooManyFailures { failed, budget } => {
                write!(f, "{failed} failures exceed budget {budget}")
            }
            CodecError::SingularRecovery => write!(f, "recovery system is singular"),
        }
    }
}

impl std::error::Error for CodecError {}

pub type Result<T> = std::result::Result<T, CodecError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    /// Checksum rows protecting the Q-factor; shape `m_r x p_r`.
    Vertical,
    /// Checksum columns protecting the R-factor; shape `p_c x m_c`.
    Horizontal,
}

/// Compact (per-node) generator; the full generator is its Kronecker
/// expansion with the block identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactGenerator {
    pub g_tilde: DenseMatrix,
    pub kind: GeneratorKind,
    pub f: usize,
    pub seed: Option<u64>,
}

impl CompactGenerator {
    /// Builds the Q-factor generator `[G̃₁ | Ṽ] = [-1/2 Ṽ Ṽᵀ | Ṽ]` from an
    /// explicit `Ṽ` of shape `m_r x (p_r - m_r)`.
    pub fn q_from_v_tilde(v_tilde: &DenseMatrix, seed: Option<u64>) -> Self {
        let m_r = v_tilde.rows();
        let g1 = v_tilde.matmul(&v_tilde.transpose()).scale(-0.5);
        let mut g = DenseMatrix::zeros(m_r, m_r + v_tilde.cols());
        g.set_block(0, 0, &g1);
        g.set_block(0, m_r, v_tilde);
        CompactGenerator { g_tilde: g, kind: GeneratorKind::Vertical, f: m_r, seed }
    }

    /// Rows of checksums (vertical) or columns of checksums (horizontal).
    pub fn checksum_count(&self) -> usize {
        match self.kind {
            GeneratorKind::Vertical => self.g_tilde.rows(),
            GeneratorKind::Horizontal => self.g_tilde.cols(),
        }
    }

    /// The `Ṽ` part of a vertical generator.
    pub fn v_tilde(&self) -> DenseMatrix {
        let m = self.g_tilde.rows();
        self.g_tilde.block(0, m, m, self.g_tilde.cols() - m)
    }

    /// Max-abs deviation from `G̃₁ = -1/2 Ṽ Ṽᵀ`.
    pub fn post_orth_defect(&self) -> f64 {
        let m = self.g_tilde.rows();
        let g1 = self.g_tilde.block(0, 0, m, m);
        let v = self.v_tilde();
        g1.add(&v.matmul(&v.transpose()).scale(0.5)).max_abs()
    }
}

/// Q-factor generator for out-of-node storage: `f x p_r` with `Ṽ` entries
/// iid Unif(0,1) from the seed and `G̃₁ = -1/2 Ṽ Ṽᵀ`.
pub fn build_q_generator(p_r: usize, f: usize, seed: u64) -> Result<CompactGenerator> {
    if f < 1 || 2 * f > p_r {
        return Err(CodecError::BadFailureBudget { f, p: p_r });
    }
    let v_tilde = DenseMatrix::random_uniform(f, p_r - f, seed);
    Ok(CompactGenerator::q_from_v_tilde(&v_tilde, Some(seed)))
}

/// R-factor generator: a real Cauchy matrix `p_c x m_c` with entries
/// `1/(x_i + y_j)`, `x_i = i`, `y_j = p_c + j + 0.5`. Every square
/// submatrix of a Cauchy matrix is nonsingular, so the MDS property holds
/// deterministically.
pub fn build_r_generator(p_c: usize, m_c: usize) -> Result<CompactGenerator> {
    if m_c < 1 || m_c > p_c {
        return Err(CodecError::BadDimensions(format!(
            "horizontal generator needs 1 <= m_c <= p_c, got m_c={m_c}, p_c={p_c}"
        )));
    }
    let mut g = DenseMatrix::zeros(p_c, m_c);
    for i in 0..p_c {
        for j in 0..m_c {
            g[(i, j)] = 1.0 / (i as f64 + p_c as f64 + j as f64 + 0.5);
        }
    }
    Ok(CompactGenerator { g_tilde: g, kind: GeneratorKind::Horizontal, f: m_c, seed: None })
}

/// Kronecker expansion `G = G̃ ⊗ I_block`.
pub fn expand_kronecker(g_tilde: &DenseMatrix, block: usize) -> DenseMatrix {
    assert!(block >= 1, "block size must be at least 1");
    let (r, c) = (g_tilde.rows(), g_tilde.cols());
    let mut out = DenseMatrix::zeros(r * block, c * block);
    for i in 0..r {
        for j in 0..c {
            let v = g_tilde[(i, j)];
            if v == 0.0 {
                continue;
            }
            for s in 0..block {
                out[(i * block + s, j * block + s)] = v;
            }
        }
    }
    out
}

/// The post-orthogonalization matrix
/// `G₀ = [I_c + G₁, V; Vᵀ, -I_{n-c}]` for a vertical generator whose
/// compact form satisfies the condition within [`POST_ORTH_TOL`].
pub fn build_g0(compact_v: &CompactGenerator, n: usize, p_r: usize) -> Result<DenseMatrix> {
    let m_r = compact_v.g_tilde.rows();
    if compact_v.g_tilde.cols() != p_r || n % p_r != 0 {
        return Err(CodecError::BadDimensions(format!(
            "generator {}x{} incompatible with n={n}, p_r={p_r}",
            compact_v.g_tilde.rows(),
            compact_v.g_tilde.cols()
        )));
    }
    let block = n / p_r;
    let c = m_r * block;
    if c >= n {
        return Err(CodecError::BadDimensions(format!("checksum rows c={c} must be below n={n}")));
    }
    let defect = compact_v.post_orth_defect();
    if defect > POST_ORTH_TOL {
        return Err(CodecError::ConditionViolated { defect });
    }
    let g1 = expand_kronecker(&compact_v.g_tilde.block(0, 0, m_r, m_r), block);
    let v = expand_kronecker(&compact_v.v_tilde(), block);
    let mut g0 = DenseMatrix::zeros(n, n);
    for i in 0..c {
        g0[(i, i)] = 1.0;
    }
    for i in 0..c {
        for j in 0..c {
            g0[(i, j)] += g1[(i, j)];
        }
    }
    g0.set_block(0, c, &v);
    g0.set_block(c, 0, &v.transpose());
    for i in c..n {
        g0[(i, i)] = -1.0;
    }
    Ok(g0)
}

/// The generator pair for one grid configuration, plus the expansion block
/// sizes and the post-orthogonalization matrix when it exists.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub compact_v: CompactGenerator,
    pub compact_h: CompactGenerator,
    pub block_v: usize,
    pub block_h: usize,
    pub g0: Option<DenseMatrix>,
}

impl GeneratorSet {
    /// Builds the standard out-of-node pair for an `n x n` matrix on a
    /// `p_r x p_c` grid tolerating `f` failures per row and column.
    pub fn for_grid(n: usize, p_r: usize, p_c: usize, f: usize, seed: u64) -> Result<Self> {
        if n % p_r != 0 || n % p_c != 0 {
            return Err(CodecError::BadDimensions(format!(
                "grid {p_r}x{p_c} does not divide matrix order {n}"
            )));
        }
        let compact_v = build_q_generator(p_r, f, seed)?;
        let compact_h = build_r_generator(p_c, f)?;
        let g0 = build_g0(&compact_v, n, p_r)?;
        Ok(GeneratorSet { compact_v, compact_h, block_v: n / p_r, block_h: n / p_c, g0: Some(g0) })
    }

    /// Expanded vertical generator `G_v = G̃_v ⊗ I_{n/p_r}`.
    pub fn g_v(&self) -> DenseMatrix {
        expand_kronecker(&self.compact_v.g_tilde, self.block_v)
    }

    /// Expanded horizontal generator `G_h = G̃_h ⊗ I_{n/p_c}`.
    pub fn g_h(&self) -> DenseMatrix {
        expand_kronecker(&self.compact_h.g_tilde, self.block_h)
    }
}

/// Outcome of exhaustive square-submatrix enumeration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdsReport {
    pub is_mds: bool,
    /// Smallest |det| over all square submatrices.
    pub min_det: f64,
    /// Largest condition number over all square submatrices (capped at
    /// `f64::MAX` for singular submatrices).
    pub max_cond: f64,
    /// Row and column index sets of the submatrix attaining `min_det`.
    pub worst_rows: Vec<usize>,
    pub worst_cols: Vec<usize>,
}

fn count_submatrices(r: usize, c: usize) -> u64 {
    let s_max = r.min(c);
    let mut total = 0u64;
    for s in 1..=s_max {
        let count = binomial(r, s).saturating_mul(binomial(c, s));
        total = total.saturating_add(count);
        if total > MDS_ENUMERATION_CAP {
            return total;
        }
    }
    total
}

fn binomial(n: usize, k: usize) -> u64 {
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

/// Visits all k-subsets of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Checks the MDS property by enumerating every square submatrix of sizes
/// `1..=min(rows, cols)`. Full rank is judged by the smallest singular
/// value against [`SVD_TOL`] * (max-abs entry * size); determinants are
/// reported but not used for the judgment since they underflow for larger
/// submatrices.
pub fn check_mds(g_tilde: &DenseMatrix) -> Result<MdsReport> {
    let (r, c) = (g_tilde.rows(), g_tilde.cols());
    let total = count_submatrices(r, c);
    if total > MDS_ENUMERATION_CAP {
        return Err(CodecError::EnumerationTooLarge { count: total });
    }
    let mut report = MdsReport {
        is_mds: true,
        min_det: f64::INFINITY,
        max_cond: 0.0,
        worst_rows: Vec::new(),
        worst_cols: Vec::new(),
    };
    for s in 1..=r.min(c) {
        for_each_subset(r, s, |rows| {
            for_each_subset(c, s, |cols| {
                let mut sub = DenseMatrix::zeros(s, s);
                for (i, &ri) in rows.iter().enumerate() {
                    for (j, &cj) in cols.iter().enumerate() {
                        sub[(i, j)] = g_tilde[(ri, cj)];
                    }
                }
                let det = determinant(&sub).abs();
                let (sigma_min, sigma_max) = singular_extremes(&sub);
                let full_rank = sigma_min > SVD_TOL * sub.max_abs() * s as f64;
                if !full_rank {
                    report.is_mds = false;
                }
                let cond = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::MAX };
                if cond > report.max_cond {
                    report.max_cond = cond;
                }
                if det < report.min_det {
                    report.min_det = det;
                    report.worst_rows = rows.to_vec();
                    report.worst_cols = cols.to_vec();
                }
            });
        });
    }
    Ok(report)
}

/// Determinant by LU with partial pivoting.
fn determinant(m: &DenseMatrix) -> f64 {
    let n = m.rows();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[(col, col)].abs();
        for row in col + 1..n {
            if a[(row, col)].abs() > pivot_val {
                pivot_val = a[(row, col)].abs();
                pivot_row = row;
            }
        }
        if pivot_val == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot_row, j)];
                a[(pivot_row, j)] = tmp;
            }
            det = -det;
        }
        let pivot = a[(col, col)];
        det *= pivot;
        for row in col + 1..n {
            let factor = a[(row, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                let v = a[(col, j)];
                a[(row, j)] -= factor * v;
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub(crate) fn symmetric_eigenvalues(sym: &DenseMatrix) -> Vec<f64> {
    let n = sym.rows();
    let mut a = sym.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= 1e-15 * a.frobenius_norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = cos * akp - sin * akq;
                    a[(k, q)] = sin * akp + cos * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = cos * apk - sin * aqk;
                    a[(q, k)] = sin * apk + cos * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Smallest and largest singular values via the Gram matrix.
fn singular_extremes(m: &DenseMatrix) -> (f64, f64) {
    let gram = m.transpose().matmul(m);
    let eig = symmetric_eigenvalues(&gram);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for lambda in eig {
        let sigma = lambda.max(0.0).sqrt();
        lo = lo.min(sigma);
        hi = hi.max(sigma);
    }
    (lo, hi)
}

// ---------------------------------------------------------------------------
// In-node checksum storage
// ---------------------------------------------------------------------------

/// Placement of data and checksum blocks inside the original nodes, with
/// the generator attached once [`innode_attach_generator`] has run.
#[derive(Debug, Clone, PartialEq)]
pub struct InNodePlan {
    /// Number of data blocks (L).
    pub data_blocks: usize,
    /// Number of nodes (P).
    pub nodes: usize,
    /// Failure budget.
    pub f: usize,
    /// Number of checksum blocks (K).
    pub checksums: usize,
    /// Node index owning each checksum block.
    pub checksum_owner: Vec<usize>,
    /// Node index owning each data block.
    pub data_owner: Vec<usize>,
    pub g_tilde: Option<DenseMatrix>,
}

impl InNodePlan {
    /// Data-block indices held by `node`.
    pub fn node_data(&self, node: usize) -> Vec<usize> {
        (0..self.data_blocks).filter(|&j| self.data_owner[j] == node).collect()
    }
}

/// The tight lower bound `K = fL/P + f * ceil(fL / ((P-f) P))` on the
/// number of in-node checksum blocks; zero failures need zero checksums.
pub fn innode_min_checksums(data_blocks: usize, nodes: usize, f: usize) -> Result<usize> {
    if nodes == 0 || data_blocks % nodes != 0 {
        return Err(CodecError::IndivisibleLoad { data_blocks, nodes });
    }
    if f >= nodes {
        return Err(CodecError::BadFailureBudget { f, p: nodes });
    }
    if f == 0 {
        return Ok(0);
    }
    let lost = f * (data_blocks / nodes);
    Ok(lost + f * (f * data_blocks).div_ceil((nodes - f) * nodes))
}

/// Load-balanced layout: data blocks round-robin, `K` checksum blocks with
/// the extra ones on the lowest node indices.
pub fn innode_layout(data_blocks: usize, nodes: usize, f: usize) -> Result<InNodePlan> {
    let k = innode_min_checksums(data_blocks, nodes, f)?;
    let data_owner: Vec<usize> = (0..data_blocks).map(|j| j % nodes).collect();
    let base = k / nodes;
    let extra = k - nodes * base; // first `extra` nodes take one more
    let mut checksum_owner = Vec::with_capacity(k);
    for node in 0..nodes {
        let count = if node < extra { base + 1 } else { base };
        checksum_owner.extend(std::iter::repeat(node).take(count));
    }
    Ok(InNodePlan {
        data_blocks,
        nodes,
        f,
        checksums: k,
        checksum_owner,
        data_owner,
        g_tilde: None,
    })
}

/// Fills the `K x L` generator: rows iid Unif(0,1) from the seed, zeroed
/// at each checksum's own-node data columns so the checksum excludes its
/// host's data. With `q_factor` the left `K x K` block is then overwritten
/// with `-1/2 Ṽ Ṽᵀ` (computed from the final right part) so the
/// post-orthogonalization condition holds; own-node columns inside that
/// block keep their structured values, which costs only the extra local
/// subtraction during recovery.
pub fn innode_attach_generator(plan: &InNodePlan, seed: u64, q_factor: bool) -> Result<InNodePlan> {
    let (k, l) = (plan.checksums, plan.data_blocks);
    if q_factor && k >= l {
        return Err(CodecError::BadDimensions(format!(
            "in-node Q-factor generator needs K < L, got K={k}, L={l}"
        )));
    }
    let mut g = DenseMatrix::random_uniform(k, l, seed);
    for i in 0..k {
        for j in 0..l {
            if plan.data_owner[j] == plan.checksum_owner[i] {
                g[(i, j)] = 0.0;
            }
        }
    }
    if q_factor && k > 0 {
        let v_tilde = g.block(0, k, k, l - k);
        let g1 = v_tilde.matmul(&v_tilde.transpose()).scale(-0.5);
        g.set_block(0, 0, &g1);
    }
    let mut out = plan.clone();
    out.g_tilde = Some(g);
    Ok(out)
}

/// Encodes checksum blocks from data blocks with the plan's generator:
/// `C_i = sum_j g[i,j] D_j` (own-node columns are zero by construction in
/// the non-Q case).
pub fn innode_encode(plan: &InNodePlan, data: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
    let g = plan.g_tilde.as_ref().ok_or(CodecError::SingularRecovery)?;
    if data.len() != plan.data_blocks {
        return Err(CodecError::BadDimensions(format!(
            "expected {} data blocks, got {}",
            plan.data_blocks,
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(plan.checksums);
    for i in 0..plan.checksums {
        let mut c = DenseMatrix::zeros(data[0].rows(), data[0].cols());
        for (j, d) in data.iter().enumerate() {
            let w = g[(i, j)];
            if w != 0.0 {
                c.axpy(w, d);
            }
        }
        out.push(c);
    }
    Ok(out)
}

/// Recovers the data blocks lost with `failed_nodes`. Surviving blocks are
/// passed as `Some`, lost ones as `None`; checksums follow the same
/// convention. Returns `(block index, block)` pairs for every lost data
/// block, solving the reduced square system over the surviving checksums.
pub fn innode_recover(
    plan: &InNodePlan,
    data: &[Option<DenseMatrix>],
    checksums: &[Option<DenseMatrix>],
    failed_nodes: &BTreeSet<usize>,
) -> Result<Vec<(usize, DenseMatrix)>> {
    let g = plan.g_tilde.as_ref().ok_or(CodecError::SingularRecovery)?;
    if failed_nodes.len() > plan.f {
        return Err(CodecError::TooManyFailures { failed: failed_nodes.len(), budget: plan.f });
    }
    let lost: Vec<usize> =
        (0..plan.data_blocks).filter(|&j| failed_nodes.contains(&plan.data_owner[j])).collect();
    if lost.is_empty() {
        return Ok(Vec::new());
    }
    let surviving_checksums: Vec<usize> = (0..plan.checksums)
        .filter(|&i| !failed_nodes.contains(&plan.checksum_owner[i]))
        .collect();
    if surviving_checksums.len() < lost.len() {
        return Err(CodecError::SingularRecovery);
    }
    let used = &surviving_checksums[..lost.len()];

    let m = lost.len();
    let mut reduced = DenseMatrix::zeros(m, m);
    for (row, &i) in used.iter().enumerate() {
        for (col, &j) in lost.iter().enumerate() {
            reduced[(row, col)] = g[(i, j)];
        }
    }
    let inv = gauss_jordan_inverse(&reduced).ok_or(CodecError::SingularRecovery)?;

    // rhs_i = C_i - sum over surviving data of g[i,j] D_j
    let shape = checksums[used[0]].as_ref().ok_or(CodecError::SingularRecovery)?;
    let (br, bc) = (shape.rows(), shape.cols());
    let mut rhs = Vec::with_capacity(m);
    for &i in used {
        let mut acc = checksums[i].clone().ok_or(CodecError::SingularRecovery)?;
        for (j, block) in data.iter().enumerate() {
            if lost.contains(&j) {
                continue;
            }
            let w = g[(i, j)];
            if w != 0.0 {
                let block = block.as_ref().ok_or(CodecError::SingularRecovery)?;
                acc.axpy(-w, block);
            }
        }
        rhs.push(acc);
    }

    let mut recovered = Vec::with_capacity(m);
    for (col, &j) in lost.iter().enumerate() {
        let mut block = DenseMatrix::zeros(br, bc);
        for (row, r) in rhs.iter().enumerate() {
            let w = inv[(col, row)];
            if w != 0.0 {
                block.axpy(w, r);
            }
        }
        recovered.push((j, block));
    }
    Ok(recovered)
}

/// Result of the brute-force counting check behind the in-node bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundWitness {
    pub recoverable: bool,
    /// A failure set leaving fewer surviving checksums than lost data
    /// blocks, when one exists.
    pub witness: Option<Vec<usize>>,
}

/// Exhaustively checks, for every set of `f` failed nodes under the
/// load-balanced placement of `K` checksums, whether the surviving
/// checksum count covers the lost data blocks.
pub fn innode_bound_witness(
    data_blocks: usize,
    nodes: usize,
    f: usize,
    k: usize,
) -> Result<BoundWitness> {
    if nodes > 8 {
        return Err(CodecError::EnumerationTooLarge { count: binomial(nodes, f) });
    }
    if nodes == 0 || data_blocks % nodes != 0 {
        return Err(CodecError::IndivisibleLoad { data_blocks, nodes });
    }
    if f >= nodes {
        return Err(CodecError::BadFailureBudget { f, p: nodes });
    }
    let per_node = data_blocks / nodes;
    let base = k / nodes;
    let extra = k - nodes * base;
    let counts: Vec<usize> =
        (0..nodes).map(|node| if node < extra { base + 1 } else { base }).collect();

    let mut witness = None;
    for_each_subset(nodes, f, |failed| {
        if witness.is_some() {
            return;
        }
        let lost = f * per_node;
        let lost_checksums: usize = failed.iter().map(|&p| counts[p]).sum();
        if k - lost_checksums < lost {
            witness = Some(failed.to_vec());
        }
    });
    Ok(BoundWitness { recoverable: witness.is_none(), witness })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_generator_appendix_single_failure_shape() {
        // f=1, p_r=2, V = [v]: the generator is [-v^2/2, v].
        let v = DenseMatrix::from_vec(1, 1, vec![0.5]).unwrap();
        let g = CompactGenerator::q_from_v_tilde(&v, None);
        assert_eq!(g.g_tilde.rows(), 1);
        assert_eq!(g.g_tilde.cols(), 2);
        assert!((g.g_tilde[(0, 0)] + 0.125).abs() < 1e-15);
        assert!((g.g_tilde[(0, 1)] - 0.5).abs() < 1e-15);
        assert!(g.post_orth_defect() < 1e-15);
    }

    #[test]
    fn q_generator_left_block_negative_semidefinite() {
        let g = build_q_generator(4, 2, 9).unwrap();
        assert_eq!(g.g_tilde.rows(), 2);
        assert_eq!(g.g_tilde.cols(), 4);
        let g1 = g.g_tilde.block(0, 0, 2, 2);
        assert!((g1[(0, 1)] - g1[(1, 0)]).abs() < 1e-15, "left block symmetric");
        let eig = symmetric_eigenvalues(&g1);
        assert!(eig.iter().all(|&l| l <= 1e-15), "left block NSD, got {eig:?}");
    }

    #[test]
    fn q_generator_is_mds_for_seeded_construction() {
        let g = build_q_generator(8, 3, 42).unwrap();
        let report = check_mds(&g.g_tilde).unwrap();
        assert!(report.is_mds, "seed 42 generator not MDS: {report:?}");
    }

    #[test]
    fn q_generator_rejects_bad_budget() {
        assert!(matches!(
            build_q_generator(4, 3, 0),
            Err(CodecError::BadFailureBudget { f: 3, p: 4 })
        ));
        assert!(matches!(
            build_q_generator(4, 0, 0),
            Err(CodecError::BadFailureBudget { f: 0, p: 4 })
        ));
    }

    #[test]
    fn r_generator_cauchy_entries() {
        let g = build_r_generator(2, 1).unwrap();
        assert!((g.g_tilde[(0, 0)] - 1.0 / 2.5).abs() < 1e-15);
        assert!((g.g_tilde[(1, 0)] - 1.0 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn r_generator_all_ones_and_cauchy_pass_mds() {
        // The f=1 all-ones generator of the worked 2x2 example.
        let ones = DenseMatrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(check_mds(&ones).unwrap().is_mds);

        let g = build_r_generator(6, 3).unwrap();
        let report = check_mds(&g.g_tilde).unwrap();
        assert!(report.is_mds);
        assert!(report.min_det > 0.0);
    }

    #[test]
    fn kronecker_block_one_is_identity_transform() {
        let g = DenseMatrix::random_uniform(3, 5, 8);
        assert_eq!(expand_kronecker(&g, 1), g);
    }

    #[test]
    fn kronecker_unrolled_1x2() {
        let g = DenseMatrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let e = expand_kronecker(&g, 2);
        let want =
            DenseMatrix::from_rows(&[vec![3.0, 0.0, 4.0, 0.0], vec![0.0, 3.0, 0.0, 4.0]]).unwrap();
        assert_eq!(e, want);
    }

    #[test]
    fn kronecker_acts_blockwise() {
        // (G̃ ⊗ I)(x ⊗ e_s) = (G̃ x) ⊗ e_s for every unit slot s.
        let g = DenseMatrix::random_uniform(2, 3, 17);
        let block = 3;
        let big = expand_kronecker(&g, block);
        let x = DenseMatrix::from_vec(3, 1, vec![0.3, -1.2, 2.5]).unwrap();
        let gx = g.matmul(&x);
        for s in 0..block {
            let mut xe = DenseMatrix::zeros(3 * block, 1);
            for i in 0..3 {
                xe[(i * block + s, 0)] = x[(i, 0)];
            }
            let got = big.matmul(&xe);
            for i in 0..2 {
                for t in 0..block {
                    let want = if t == s { gx[(i, 0)] } else { 0.0 };
                    assert!((got[(i * block + t, 0)] - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn g0_matches_worked_2x2_form() {
        let v = 0.5;
        let compact =
            CompactGenerator::q_from_v_tilde(&DenseMatrix::from_vec(1, 1, vec![v]).unwrap(), None);
        let g0 = build_g0(&compact, 2, 2).unwrap();
        let g1 = -v * v / 2.0;
        assert!((g0[(0, 0)] - (1.0 + g1)).abs() < 1e-15);
        assert!((g0[(0, 1)] - v).abs() < 1e-15);
        assert!((g0[(1, 0)] - v).abs() < 1e-15);
        assert!((g0[(1, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn g0_zero_coupling_is_signed_identity() {
        let v = DenseMatrix::zeros(1, 3);
        let compact = CompactGenerator::q_from_v_tilde(&v, None);
        let g0 = build_g0(&compact, 8, 4).unwrap();
        let gtg = g0.transpose().matmul(&g0);
        assert!(gtg.sub(&DenseMatrix::identity(8)).frobenius_norm() < 1e-15);
    }

    #[test]
    fn g0_gram_identity_random() {
        // G₀ᵀG₀ = I + GᵀG for the expanded generator, checked densely.
        let n = 12;
        let p_r = 6;
        let compact = build_q_generator(p_r, 2, 123).unwrap();
        let g0 = build_g0(&compact, n, p_r).unwrap();
        let g = expand_kronecker(&compact.g_tilde, n / p_r);
        let lhs = g0.transpose().matmul(&g0);
        let rhs = DenseMatrix::identity(n).add(&g.transpose().matmul(&g));
        assert!(lhs.sub(&rhs).frobenius_norm() <= 1e-12);
    }

    #[test]
    fn g0_condition_violation_detected() {
        let mut g = build_q_generator(4, 1, 3).unwrap();
        g.g_tilde[(0, 0)] += 1e-6;
        assert!(matches!(build_g0(&g, 8, 4), Err(CodecError::ConditionViolated { .. })));
    }

    #[test]
    fn g0_smallest_eigenvalue_of_core_at_least_one() {
        // I + 1/2 Ṽ Ṽᵀ is positive definite with eigenvalues >= 1, which
        // is what makes G₀ invertible.
        let compact = build_q_generator(8, 3, 52).unwrap();
        let v = compact.v_tilde();
        let core = DenseMatrix::identity(3).add(&v.matmul(&v.transpose()).scale(0.5));
        let eigs = symmetric_eigenvalues(&core);
        assert!(eigs.iter().all(|&l| l >= 1.0 - 1e-12), "eigenvalues {eigs:?}");
    }

    #[test]
    fn post_orth_condition_survives_kronecker_expansion() {
        let compact = build_q_generator(6, 2, 31).unwrap();
        let block = 4;
        let g = expand_kronecker(&compact.g_tilde, block);
        let c = 2 * block;
        let g1 = g.block(0, 0, c, c);
        let v = g.block(0, c, c, g.cols() - c);
        let defect = g1.add(&v.matmul(&v.transpose()).scale(0.5)).max_abs();
        assert!(defect <= 1e-12);
    }

    #[test]
    fn check_mds_scalar_and_identity_cases() {
        let ones = DenseMatrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let report = check_mds(&ones).unwrap();
        assert!(report.is_mds);
        assert!((report.min_det - 1.0).abs() < 1e-15);

        let eye = DenseMatrix::identity(2);
        let report = check_mds(&eye).unwrap();
        assert!(!report.is_mds, "identity has singular 1x1 submatrices");
        assert_eq!(report.min_det, 0.0);
    }

    #[test]
    fn check_mds_enumeration_cap() {
        let g = DenseMatrix::zeros(24, 48);
        assert!(matches!(check_mds(&g), Err(CodecError::EnumerationTooLarge { .. })));
    }

    #[test]
    fn mds_empirics_construction_seeds() {
        // Theorem-level claim checked empirically: 20 seeds at f=2, p_r=16.
        for seed in 0..20 {
            let g = build_q_generator(16, 2, seed).unwrap();
            assert!(check_mds(&g.g_tilde).unwrap().is_mds, "seed {seed} failed");
        }
    }

    #[test]
    fn innode_min_checksums_values() {
        assert_eq!(innode_min_checksums(4, 4, 1).unwrap(), 2);
        assert_eq!(innode_min_checksums(8, 4, 2).unwrap(), 8);
        assert_eq!(innode_min_checksums(12, 4, 0).unwrap(), 0);
        assert!(matches!(
            innode_min_checksums(10, 4, 1),
            Err(CodecError::IndivisibleLoad { data_blocks: 10, nodes: 4 })
        ));
    }

    #[test]
    fn innode_layout_counts() {
        // L=4, P=4, f=1 gives K=2: nodes 0 and 1 hold one checksum each.
        let plan = innode_layout(4, 4, 1).unwrap();
        assert_eq!(plan.checksums, 2);
        assert_eq!(plan.checksum_owner, vec![0, 1]);
        assert_eq!(plan.data_owner, vec![0, 1, 2, 3]);

        // K a multiple of P distributes uniformly.
        let plan = innode_layout(8, 4, 2).unwrap();
        assert_eq!(plan.checksums, 8);
        for node in 0..4 {
            assert_eq!(plan.checksum_owner.iter().filter(|&&o| o == node).count(), 2);
        }
    }

    #[test]
    fn innode_conservation_and_balance() {
        for (l, p, f) in [(6, 3, 1), (8, 4, 1), (10, 5, 2), (12, 6, 2), (16, 4, 1)] {
            let plan = innode_layout(l, p, f).unwrap();
            assert_eq!(plan.checksum_owner.len(), plan.checksums);
            let counts: Vec<usize> =
                (0..p).map(|n| plan.checksum_owner.iter().filter(|&&o| o == n).count()).collect();
            let hi = plan.checksums.div_ceil(p);
            let lo = plan.checksums / p;
            let n_hi = counts.iter().filter(|&&c| c == hi).count();
            let n_lo = counts.iter().filter(|&&c| c == lo).count();
            let a_bar = plan.checksums - p * lo;
            if hi != lo {
                assert_eq!(n_hi, a_bar, "({l},{p},{f})");
                assert_eq!(n_lo, p - a_bar, "({l},{p},{f})");
            } else {
                assert_eq!(n_lo, p);
            }
            for node in 0..p {
                assert_eq!(plan.node_data(node).len(), l / p);
            }
        }
    }

    #[test]
    fn innode_generator_excludes_own_node() {
        let plan = innode_layout(4, 4, 1).unwrap();
        let plan = innode_attach_generator(&plan, 5, false).unwrap();
        let g = plan.g_tilde.as_ref().unwrap();
        // checksum 0 lives on node 0, which owns data block 0
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(1, 1)], 0.0);
        assert!(g[(0, 1)] != 0.0 && g[(0, 2)] != 0.0 && g[(0, 3)] != 0.0);
    }

    #[test]
    fn innode_q_factor_left_block_structured() {
        let plan = innode_layout(8, 8, 2).unwrap(); // K = 2 + 2*ceil(16/48) = 4
        assert_eq!(plan.checksums, 4);
        let plan = innode_attach_generator(&plan, 11, true).unwrap();
        let g = plan.g_tilde.as_ref().unwrap();
        let k = plan.checksums;
        let v = g.block(0, k, k, plan.data_blocks - k);
        let g1 = g.block(0, 0, k, k);
        let defect = g1.add(&v.matmul(&v.transpose()).scale(0.5)).max_abs();
        assert!(defect <= 1e-14, "post-orth condition defect {defect:e}");
        // exclusion still holds in the random part
        for i in 0..k {
            for j in k..plan.data_blocks {
                if plan.data_owner[j] == plan.checksum_owner[i] {
                    assert_eq!(g[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn innode_reduced_systems_invertible_exhaustively() {
        // every f-subset of failed nodes yields a square invertible system
        for (l, p, f) in [(4usize, 4usize, 1usize), (8, 4, 2), (12, 6, 2), (6, 6, 1)] {
            let plan = innode_layout(l, p, f).unwrap();
            let plan = innode_attach_generator(&plan, 77, false).unwrap();
            let g = plan.g_tilde.as_ref().unwrap();
            for_each_subset(p, f, |failed| {
                let failed: BTreeSet<usize> = failed.iter().copied().collect();
                let lost: Vec<usize> =
                    (0..l).filter(|&j| failed.contains(&plan.data_owner[j])).collect();
                let surv: Vec<usize> = (0..plan.checksums)
                    .filter(|&i| !failed.contains(&plan.checksum_owner[i]))
                    .collect();
                assert!(surv.len() >= lost.len(), "counting failed for {failed:?}");
                let m = lost.len();
                let mut reduced = DenseMatrix::zeros(m, m);
                for (r, &i) in surv[..m].iter().enumerate() {
                    for (c, &j) in lost.iter().enumerate() {
                        reduced[(r, c)] = g[(i, j)];
                    }
                }
                assert!(
                    gauss_jordan_inverse(&reduced).is_some(),
                    "singular reduced system for failures {failed:?} at ({l},{p},{f})"
                );
            });
        }
    }

    #[test]
    fn innode_recover_roundtrip() {
        let plan = innode_layout(4, 4, 1).unwrap();
        let plan = innode_attach_generator(&plan, 21, false).unwrap();
        let truth: Vec<DenseMatrix> =
            (0..4).map(|j| DenseMatrix::random_uniform(3, 3, 100 + j as u64)).collect();
        let checksums = innode_encode(&plan, &truth).unwrap();

        // zero failures: nothing to do
        let all_data: Vec<Option<DenseMatrix>> = truth.iter().cloned().map(Some).collect();
        let all_ck: Vec<Option<DenseMatrix>> = checksums.iter().cloned().map(Some).collect();
        assert!(innode_recover(&plan, &all_data, &all_ck, &BTreeSet::new()).unwrap().is_empty());

        // single failure of node 2
        let failed: BTreeSet<usize> = [2usize].into_iter().collect();
        let mut data = all_data.clone();
        let mut cks = all_ck.clone();
        for j in 0..4 {
            if failed.contains(&plan.data_owner[j]) {
                data[j] = None;
            }
        }
        for i in 0..plan.checksums {
            if failed.contains(&plan.checksum_owner[i]) {
                cks[i] = None;
            }
        }
        let recovered = innode_recover(&plan, &data, &cks, &failed).unwrap();
        assert_eq!(recovered.len(), 1);
        let (idx, block) = &recovered[0];
        assert_eq!(*idx, 2);
        let err = block.sub(&truth[2]).frobenius_norm() / truth[2].frobenius_norm();
        assert!(err <= 1e-12, "recovery error {err:e}");
    }

    #[test]
    fn innode_recover_exhaustive_small_plans() {
        for (l, p, f) in [(4usize, 4usize, 1usize), (12, 6, 2)] {
            let plan = innode_layout(l, p, f).unwrap();
            let plan = innode_attach_generator(&plan, 3, false).unwrap();
            let truth: Vec<DenseMatrix> =
                (0..l).map(|j| DenseMatrix::random_uniform(2, 2, 500 + j as u64)).collect();
            let checksums = innode_encode(&plan, &truth).unwrap();
            for_each_subset(p, f, |failed_slice| {
                let failed: BTreeSet<usize> = failed_slice.iter().copied().collect();
                let data: Vec<Option<DenseMatrix>> = (0..l)
                    .map(|j| {
                        (!failed.contains(&plan.data_owner[j])).then(|| truth[j].clone())
                    })
                    .collect();
                let cks: Vec<Option<DenseMatrix>> = (0..plan.checksums)
                    .map(|i| {
                        (!failed.contains(&plan.checksum_owner[i])).then(|| checksums[i].clone())
                    })
                    .collect();
                let recovered = innode_recover(&plan, &data, &cks, &failed).unwrap();
                for (idx, block) in recovered {
                    let err = block.sub(&truth[idx]).frobenius_norm();
                    assert!(
                        err <= 1e-10 * truth[idx].frobenius_norm(),
                        "block {idx} error {err:e} for failures {failed:?}"
                    );
                }
            });
        }
    }

    #[test]
    fn innode_recover_rejects_budget_violation() {
        let plan = innode_layout(4, 4, 1).unwrap();
        let plan = innode_attach_generator(&plan, 2, false).unwrap();
        let failed: BTreeSet<usize> = [0usize, 1].into_iter().collect();
        let data = vec![None, None, None, None];
        let cks = vec![None, None];
        assert!(matches!(
            innode_recover(&plan, &data, &cks, &failed),
            Err(CodecError::TooManyFailures { failed: 2, budget: 1 })
        ));
    }

    #[test]
    fn bound_witness_tight_at_minimum() {
        let k = innode_min_checksums(4, 4, 1).unwrap();
        let at = innode_bound_witness(4, 4, 1, k).unwrap();
        assert!(at.recoverable);
        assert!(at.witness.is_none());

        let below = innode_bound_witness(4, 4, 1, k - 1).unwrap();
        assert!(!below.recoverable);
        assert!(below.witness.is_some());
    }

    #[test]
    fn bound_witness_trivial_and_errors() {
        let w = innode_bound_witness(8, 4, 0, 0).unwrap();
        assert!(w.recoverable);
        assert!(matches!(
            innode_bound_witness(18, 9, 1, 2),
            Err(CodecError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn bound_witness_sweep_matches_formula() {
        // tightness across the acceptance sweep range
        for p in 3..=6usize {
            let l = 2 * p;
            for f in 1..=2usize {
                if f >= p {
                    continue;
                }
                let k = innode_min_checksums(l, p, f).unwrap();
                assert!(innode_bound_witness(l, p, f, k).unwrap().recoverable, "(p={p}, f={f})");
                assert!(
                    !innode_bound_witness(l, p, f, k - 1).unwrap().recoverable,
                    "(p={p}, f={f}) recoverable below the bound"
                );
            }
        }
    }
}
