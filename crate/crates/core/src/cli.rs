//! Command-line front end: configuration ingestion (JSON file plus flag
//! overrides), experiment commands, and report writing.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 unrecoverable fault injection. Failures print a machine-readable
//! JSON object on stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::codec::{
    build_q_generator, check_mds, innode_bound_witness, innode_min_checksums, CodecError,
};
use crate::costmodel;
use crate::densela::{DenseMatrix, DenselaError};
use crate::engine::{self, EngineError};
use crate::gridsim::{FaultMode, FaultSchedule, GridConfig, GridError, Storage};
use crate::io;

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 2;
const EXIT_NUMERIC: i32 = 3;
const EXIT_FAULT: i32 = 4;

#[derive(Debug)]
struct CliFailure {
    exit: i32,
    message: String,
}

impl CliFailure {
    fn config(msg: impl Into<String>) -> Self {
        CliFailure { exit: EXIT_CONFIG, message: msg.into() }
    }
    fn numeric(msg: impl Into<String>) -> Self {
        CliFailure { exit: EXIT_NUMERIC, message: msg.into() }
    }
}

impl From<std::io::Error> for CliFailure {
    fn from(e: std::io::Error) -> Self {
        CliFailure::config(format!("i/o: {e}"))
    }
}

impl From<EngineError> for CliFailure {
    fn from(e: EngineError) -> Self {
        let exit = match &e {
            EngineError::UnrecoverableFailure { .. } => EXIT_FAULT,
            EngineError::Grid(GridError::BadConfig(_) | GridError::BadDimensions(_)) => EXIT_CONFIG,
            EngineError::Codec(
                CodecError::BadFailureBudget { .. }
                | CodecError::BadDimensions(_)
                | CodecError::IndivisibleLoad { .. }
                | CodecError::EnumerationTooLarge { .. },
            ) => EXIT_CONFIG,
            EngineError::DimensionMismatch(_) => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        };
        CliFailure { exit, message: e.to_string() }
    }
}

impl From<CodecError> for CliFailure {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::SingularRecovery | CodecError::ConditionViolated { .. } => {
                CliFailure::numeric(e.to_string())
            }
            _ => CliFailure::config(e.to_string()),
        }
    }
}

impl From<DenselaError> for CliFailure {
    fn from(e: DenselaError) -> Self {
        CliFailure::numeric(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum StorageArg {
    OutOfNode,
    InNode,
}

impl From<StorageArg> for Storage {
    fn from(s: StorageArg) -> Storage {
        match s {
            StorageArg::OutOfNode => Storage::OutOfNode,
            StorageArg::InNode => Storage::InNode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum InjectArg {
    None,
    ReverseDiagonal,
    Random,
}

/// Fully resolved run description: the JSON config file carries these
/// fields and command-line flags override them one by one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub n: usize,
    pub p_r: usize,
    pub p_c: usize,
    pub f: usize,
    pub storage: Storage,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub inject: FaultMode,
    pub audit: bool,
    /// Read the input matrix from CSV instead of generating Unif(0,1)
    /// entries from the seed.
    pub matrix_csv: Option<PathBuf>,
    pub rhs_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Seeds per cell for mds-check.
    pub mds_seeds: u64,
    /// Grid dimensions for sweep-style commands.
    pub p_list: Vec<usize>,
    pub f_list: Vec<usize>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            n: 64,
            p_r: 2,
            p_c: 2,
            f: 1,
            storage: Storage::OutOfNode,
            seed: 0,
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.01,
            inject: FaultMode::None,
            audit: false,
            matrix_csv: None,
            rhs_csv: None,
            out_dir: PathBuf::from("out"),
            mds_seeds: 20,
            p_list: vec![4, 8, 16],
            f_list: vec![1, 2],
        }
    }
}

impl RunSpec {
    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            n: self.n,
            p_r: self.p_r,
            p_c: self.p_c,
            f: self.f,
            storage: self.storage,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            seed: self.seed,
        }
    }

    fn schedule(&self) -> FaultSchedule {
        match self.inject {
            FaultMode::None | FaultMode::Explicit => FaultSchedule::none(),
            FaultMode::ReverseDiagonal => FaultSchedule::reverse_diagonal(self.p_r, self.f),
            FaultMode::Random => FaultSchedule::random(self.p_r, self.f, self.seed),
        }
    }
}

#[derive(Debug, Args)]
struct CommonFlags {
    /// JSON file with RunSpec fields; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Matrix order.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Grid rows.
    #[arg(long, global = true)]
    pr: Option<usize>,
    /// Grid columns.
    #[arg(long, global = true)]
    pc: Option<usize>,
    /// Failure budget per grid row/column.
    #[arg(long, global = true)]
    f: Option<usize>,
    #[arg(long, global = true, value_enum)]
    storage: Option<StorageArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Latency cost coefficient.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Per-word bandwidth cost coefficient.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Per-flop cost coefficient.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Failure injection pattern.
    #[arg(long, global = true, value_enum)]
    inject: Option<InjectArg>,
    /// Record per-iteration checksum residuals.
    #[arg(long, global = true)]
    audit: bool,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input matrix CSV (defaults to Unif(0,1) entries from the seed).
    #[arg(long, global = true)]
    matrix_csv: Option<PathBuf>,
    /// Right-hand side CSV (defaults to Unif(0,1) entries from the seed).
    #[arg(long, global = true)]
    rhs_csv: Option<PathBuf>,
    /// Seeds per cell for mds-check.
    #[arg(long, global = true)]
    mds_seeds: Option<u64>,
    /// Comma-separated grid sizes for sweep-style commands.
    #[arg(long, global = true, value_delimiter = ',')]
    p_list: Option<Vec<usize>>,
    /// Comma-separated failure budgets for sweep-style commands.
    #[arg(long, global = true, value_delimiter = ',')]
    f_list: Option<Vec<usize>>,
}

#[derive(Debug, Parser)]
#[command(
    name = "coded-qr",
    about = "Fault-tolerant coded QR decomposition on a simulated processor grid",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve A x = b through the coded pipeline.
    Solve,
    /// Run the coded factorization and store Q1, R1.
    Factorize,
    /// Empirical MDS validation of the structured generator vs a fully
    /// random one, over a seed sweep.
    MdsCheck,
    /// In-node checksum lower bound table with brute-force witnesses.
    InnodeBound,
    /// Analytic overhead report for one configuration.
    CostReport,
    /// Analytic overhead sweep over grid sizes and failure budgets.
    Sweep {
        /// Also run a fault-free simulated encode/post per cell and
        /// report the ledger columns next to the analytic ones.
        #[arg(long)]
        simulate: bool,
    },
}

fn resolve_spec(flags: &CommonFlags) -> Result<RunSpec, CliFailure> {
    let mut spec = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliFailure::config(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliFailure::config(format!("parsing {}: {e}", path.display())))?
        }
        None => RunSpec::default(),
    };
    if let Some(n) = flags.n {
        spec.n = n;
    }
    if let Some(p) = flags.pr {
        spec.p_r = p;
    }
    if let Some(p) = flags.pc {
        spec.p_c = p;
    }
    if let Some(f) = flags.f {
        spec.f = f;
    }
    if let Some(s) = flags.storage {
        spec.storage = s.into();
    }
    if let Some(s) = flags.seed {
        spec.seed = s;
    }
    if let Some(v) = flags.alpha {
        spec.alpha = v;
    }
    if let Some(v) = flags.beta {
        spec.beta = v;
    }
    if let Some(v) = flags.gamma {
        spec.gamma = v;
    }
    if let Some(i) = flags.inject {
        spec.inject = match i {
            InjectArg::None => FaultMode::None,
            InjectArg::ReverseDiagonal => FaultMode::ReverseDiagonal,
            InjectArg::Random => FaultMode::Random,
        };
    }
    if flags.audit {
        spec.audit = true;
    }
    if let Some(out) = &flags.out {
        spec.out_dir = out.clone();
    }
    if let Some(p) = &flags.matrix_csv {
        spec.matrix_csv = Some(p.clone());
    }
    if let Some(p) = &flags.rhs_csv {
        spec.rhs_csv = Some(p.clone());
    }
    if let Some(s) = flags.mds_seeds {
        spec.mds_seeds = s;
    }
    if let Some(l) = &flags.p_list {
        spec.p_list = l.clone();
    }
    if let Some(l) = &flags.f_list {
        spec.f_list = l.clone();
    }
    Ok(spec)
}

fn load_matrix(spec: &RunSpec) -> Result<DenseMatrix, CliFailure> {
    match &spec.matrix_csv {
        Some(path) => {
            let m = io::read_matrix_csv(path)?;
            if m.rows() != spec.n || m.cols() != spec.n {
                return Err(CliFailure::config(format!(
                    "matrix file is {}x{}, spec says n={}",
                    m.rows(),
                    m.cols(),
                    spec.n
                )));
            }
            Ok(m)
        }
        None => Ok(DenseMatrix::random_uniform(spec.n, spec.n, spec.seed)),
    }
}

fn load_rhs(spec: &RunSpec) -> Result<DenseMatrix, CliFailure> {
    match &spec.rhs_csv {
        Some(path) => {
            let m = io::read_matrix_csv(path)?;
            if m.rows() != spec.n || m.cols() != 1 {
                return Err(CliFailure::config(format!(
                    "rhs file is {}x{}, expected {}x1",
                    m.rows(),
                    m.cols(),
                    spec.n
                )));
            }
            Ok(m)
        }
        None => Ok(DenseMatrix::random_uniform(spec.n, 1, spec.seed.wrapping_add(0x5eed))),
    }
}

fn write_ledger(dir: &Path, ledger: &crate::gridsim::cost::CostLedger) -> std::io::Result<()> {
    let rows: Vec<Vec<String>> = ledger.csv_rows().into_iter().map(|r| r.to_vec()).collect();
    io::write_csv(
        &dir.join("ledger.csv"),
        &["phase", "alpha_count", "beta_words", "gamma_flops", "model_time"],
        &rows,
    )
}

fn write_audit(dir: &Path, log: &[engine::AuditRecord]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(log).expect("audit log serializes");
    std::fs::write(dir.join("audit.json"), text)
}

fn cmd_solve(spec: &RunSpec) -> Result<(), CliFailure> {
    let cfg = spec.grid_config();
    cfg.validate().map_err(|e| CliFailure::config(e.to_string()))?;
    let a = load_matrix(spec)?;
    let b = load_rhs(spec)?;
    let out = engine::solve(&cfg, &a, &b, spec.schedule(), spec.audit)?;
    std::fs::create_dir_all(&spec.out_dir)?;
    io::write_matrix_csv(&spec.out_dir.join("x.csv"), &out.x)?;
    write_ledger(&spec.out_dir, &out.ledger)?;
    if spec.audit {
        write_audit(&spec.out_dir, &out.audit_log)?;
    }
    let summary = serde_json::json!({
        "n": spec.n,
        "p_r": spec.p_r,
        "p_c": spec.p_c,
        "f": spec.f,
        "residual": out.residual,
        "model_time": out.ledger.total_time(),
    });
    std::fs::write(
        spec.out_dir.join("residuals.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!("||Ax-b||/||b|| = {:e}", out.residual);
    Ok(())
}

fn cmd_factorize(spec: &RunSpec) -> Result<(), CliFailure> {
    let cfg = spec.grid_config();
    cfg.validate().map_err(|e| CliFailure::config(e.to_string()))?;
    let a = load_matrix(spec)?;
    let out = engine::factorize(&cfg, &a, spec.schedule(), spec.audit)?;
    std::fs::create_dir_all(&spec.out_dir)?;
    io::write_matrix_csv(&spec.out_dir.join("q1.csv"), &out.q1)?;
    io::write_matrix_csv(&spec.out_dir.join("r1.csv"), &out.r1)?;
    write_ledger(&spec.out_dir, &out.ledger)?;
    if spec.audit {
        write_audit(&spec.out_dir, &out.audit_log)?;
    }
    let residual =
        out.q1.matmul(&out.r1).sub(&a).frobenius_norm() / a.frobenius_norm().max(f64::MIN_POSITIVE);
    let summary = serde_json::json!({
        "n": spec.n,
        "f": spec.f,
        "factorization_residual_fro": residual,
        "model_time": out.ledger.total_time(),
    });
    std::fs::write(
        spec.out_dir.join("residuals.json"),
        serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!("||A - Q1 R1||_F / ||A||_F = {residual:e}");
    Ok(())
}

fn cmd_mds_check(spec: &RunSpec) -> Result<(), CliFailure> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let header = [
        "seed",
        "structured_is_mds",
        "structured_min_det",
        "structured_max_cond",
        "random_min_det",
        "random_max_cond",
    ];
    if spec.f == 0 {
        io::write_csv(&spec.out_dir.join("mds.csv"), &header, &[])?;
        println!("f = 0: nothing to check");
        return Ok(());
    }
    let mut rows = Vec::new();
    let mut mds_count = 0;
    for seed in 0..spec.mds_seeds {
        let structured = build_q_generator(spec.p_r, spec.f, seed)?;
        let s_report = check_mds(&structured.g_tilde)?;
        // same shape, every entry random: the baseline the structured
        // generator is compared against
        let random = DenseMatrix::random_uniform(spec.f, spec.p_r, seed ^ 0xffff_ffff);
        let r_report = check_mds(&random)?;
        if s_report.is_mds {
            mds_count += 1;
        }
        rows.push(vec![
            seed.to_string(),
            s_report.is_mds.to_string(),
            io::format_f64(s_report.min_det),
            io::format_f64(s_report.max_cond),
            io::format_f64(r_report.min_det),
            io::format_f64(r_report.max_cond),
        ]);
    }
    io::write_csv(&spec.out_dir.join("mds.csv"), &header, &rows)?;
    let first = build_q_generator(spec.p_r, spec.f, 0)?;
    let report = check_mds(&first.g_tilde)?;
    std::fs::write(
        spec.out_dir.join("mds_report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )?;
    println!("f={} p_r={}: {mds_count}/{} structured generators MDS", spec.f, spec.p_r, spec.mds_seeds);
    Ok(())
}

fn cmd_innode_bound(spec: &RunSpec) -> Result<(), CliFailure> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let header = ["l", "p", "f", "k", "recoverable_at_k", "recoverable_below_k", "witness"];
    let mut rows = Vec::new();
    for &p in &spec.p_list {
        for &f in &spec.f_list {
            if f >= p {
                continue;
            }
            let l = 2 * p;
            let k = innode_min_checksums(l, p, f)?;
            let (at_k, below, witness) = if p <= 6 {
                let at = innode_bound_witness(l, p, f, k)?;
                let (below_ok, below_witness) = if k > 0 {
                    let w = innode_bound_witness(l, p, f, k - 1)?;
                    (w.recoverable, w.witness)
                } else {
                    (true, None)
                };
                (at.recoverable.to_string(), below_ok.to_string(), below_witness)
            } else {
                ("-".to_string(), "-".to_string(), None)
            };
            rows.push(vec![
                l.to_string(),
                p.to_string(),
                f.to_string(),
                k.to_string(),
                at_k,
                below,
                witness.map_or(String::new(), |w| {
                    w.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
                }),
            ]);
        }
    }
    io::write_csv(&spec.out_dir.join("innode_bound.csv"), &header, &rows)?;
    for row in &rows {
        println!(
            "L={} P={} f={}: K={} (recoverable at K: {}, below K: {})",
            row[0], row[1], row[2], row[3], row[4], row[5]
        );
    }
    Ok(())
}

fn cmd_cost_report(spec: &RunSpec) -> Result<(), CliFailure> {
    let cfg = spec.grid_config();
    cfg.validate().map_err(|e| CliFailure::config(e.to_string()))?;
    std::fs::create_dir_all(&spec.out_dir)?;
    let report = costmodel::analytic_overheads(&cfg);
    std::fs::write(
        spec.out_dir.join("cost_report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )?;
    println!(
        "t_qr_lb={:.6e} t_enc={:.6e} t_post={:.6e} t_recov={:.6e} ratio={:.6e}",
        report.t_qr_lb, report.t_enc, report.t_post, report.t_recov, report.ratio_coding
    );
    Ok(())
}

fn sweep_header(simulate: bool) -> Vec<&'static str> {
    let mut h = vec!["p_r", "p_c", "n", "f", "t_qr_lb", "t_enc", "t_post", "t_recov", "ratio"];
    if simulate {
        h.push("sim_enc");
        h.push("sim_post");
    }
    h
}

fn cmd_sweep(spec: &RunSpec, simulate: bool) -> Result<(), CliFailure> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let mut configs = Vec::new();
    for &p in &spec.p_list {
        for &f in &spec.f_list {
            if p == 0 || spec.n % p != 0 || 2 * f > p {
                continue;
            }
            let mut cfg = spec.grid_config();
            cfg.p_r = p;
            cfg.p_c = p;
            cfg.f = f;
            configs.push(cfg);
        }
    }
    let report = costmodel::scaling_sweep(&configs);
    let mut rows = Vec::new();
    for (cfg, row) in configs.iter().zip(&report.rows) {
        let mut cells = vec![
            row.p_r.to_string(),
            row.p_c.to_string(),
            row.n.to_string(),
            row.f.to_string(),
            io::format_f64(row.t_qr_lb),
            io::format_f64(row.t_enc),
            io::format_f64(row.t_post),
            io::format_f64(row.t_recov),
            io::format_f64(row.ratio_coding),
        ];
        if simulate {
            let a = DenseMatrix::random_uniform(cfg.n, cfg.n, cfg.seed);
            let b = DenseMatrix::random_uniform(cfg.n, 1, cfg.seed.wrapping_add(0x5eed));
            let out = engine::solve(cfg, &a, &b, FaultSchedule::none(), false)?;
            use crate::gridsim::cost::Phase;
            cells.push(io::format_f64(out.ledger.phase(Phase::Enc).model_time));
            cells.push(io::format_f64(out.ledger.phase(Phase::Post).model_time));
        }
        rows.push(cells);
    }
    io::write_csv(&spec.out_dir.join("sweep.csv"), &sweep_header(simulate), &rows)?;
    std::fs::write(
        spec.out_dir.join("sweep_trends.json"),
        serde_json::to_string_pretty(&report.checks).unwrap(),
    )?;
    println!(
        "{} cells, {} trend checks, all trends ok: {}",
        report.rows.len(),
        report.checks.len(),
        report.all_trends_ok
    );
    Ok(())
}

/// Parses the process arguments, runs the selected command, and returns
/// the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let obj = serde_json::json!({
                "error": failure.message,
                "exit": failure.exit,
            });
            eprintln!("{obj}");
            failure.exit
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliFailure> {
    let spec = resolve_spec(&cli.common)?;
    match &cli.command {
        Command::Solve => cmd_solve(&spec),
        Command::Factorize => cmd_factorize(&spec),
        Command::MdsCheck => cmd_mds_check(&spec),
        Command::InnodeBound => cmd_innode_bound(&spec),
        Command::CostReport => cmd_cost_report(&spec),
        Command::Sweep { simulate } => cmd_sweep(&spec, *simulate),
    }
}
