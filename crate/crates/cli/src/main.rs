//! `nonlocal`: structure analysis of bipartite unitaries from the command line.
//!
//! Every command prints a human-readable report followed by a line
//! containing [`JSON_MARKER`] and a machine-readable JSON document.
//! Exit codes: 0 success, 2 parse error, 3 contract violation, 4 theorem anomaly.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nonlocal_core::controlled::{check_controlled, extract_controlled_form, finest_block_structure};
use nonlocal_core::equivalence::sl_to_lu;
use nonlocal_core::fixtures;
use nonlocal_core::io::{
    read_json, write_json, ControlledFormFile, KroneckerSumFile, LocalWitnessFile, MatrixFile, StateFile,
    WitnessFile,
};
use nonlocal_core::protocol::{
    implement_cheapest, implement_schmidt_rank3, plan_routes, run_route, PureState, Route,
};
use nonlocal_core::random::rng;
use nonlocal_core::ranks::{check_rank_inequality, random_kronecker_sum, verify_rank3_unitary_equality};
use nonlocal_core::schmidt::{schmidt_decompose, schmidt_rank_report, Side};
use nonlocal_core::{BipartiteUnitary, Error, Tolerance};

const JSON_MARKER: &str = "--- json ---";

#[derive(Parser)]
#[command(name = "nonlocal", version, about = "Structure analysis of bipartite unitaries")]
struct Cli {
    #[command(flatten)]
    tol: TolArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TolArgs {
    /// Rank threshold relative to the largest singular value.
    #[arg(long, global = true)]
    rank_rel_tol: Option<f64>,
    #[arg(long, global = true)]
    commute_tol: Option<f64>,
    #[arg(long, global = true)]
    unitarity_tol: Option<f64>,
    #[arg(long, global = true)]
    eig_cluster_tol: Option<f64>,
    #[arg(long, global = true)]
    reconstruct_tol: Option<f64>,
}

impl TolArgs {
    fn tolerance(&self) -> Tolerance {
        let d = Tolerance::default();
        Tolerance {
            rank_rel_tol: self.rank_rel_tol.unwrap_or(d.rank_rel_tol),
            commute_tol: self.commute_tol.unwrap_or(d.commute_tol),
            unitarity_tol: self.unitarity_tol.unwrap_or(d.unitarity_tol),
            eig_cluster_tol: self.eig_cluster_tol.unwrap_or(d.eig_cluster_tol),
            reconstruct_tol: self.reconstruct_tol.unwrap_or(d.reconstruct_tol),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    A,
    B,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    /// Cheapest route; Schmidt-rank-3 inputs go through the cost-bounded pipeline.
    Auto,
    Teleport,
    /// Controlled route on the side with fewer groups.
    Controlled,
}

#[derive(Subcommand)]
enum Command {
    /// Operator Schmidt rank and coefficients.
    Schmidt {
        file: PathBuf,
        /// Directory receiving one JSON file per Schmidt term.
        #[arg(long)]
        factors_dir: Option<PathBuf>,
    },
    /// Controlled-unitary verdicts, group counts and finest block structures.
    Detect {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        side: SideArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extracts a controlled form and verifies its reconstruction.
    Decompose {
        file: PathBuf,
        #[arg(long)]
        side: Side,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination of the controlled form.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Converts a stochastic-local witness between U and V into local unitaries.
    Sl2lu {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        v: PathBuf,
        #[arg(long)]
        witness: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulates an LOCC implementation with maximally entangled resources.
    Protocol {
        file: PathBuf,
        /// State file, or `random` for a seeded random state on A and B.
        #[arg(long, default_value = "random")]
        input: String,
        #[arg(long, value_enum, default_value = "auto")]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination of the output state.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank inequality for partial transposes of Kronecker sums.
    Rankcheck {
        /// Kronecker-sum files.
        files: Vec<PathBuf>,
        /// Number of terms for random instances.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Unitary files checked for full rank of the partial transpose.
        #[arg(long = "unitary")]
        unitaries: Vec<PathBuf>,
        /// Accept d_A > 3 and report anomalies instead of failing.
        #[arg(long)]
        experimental: bool,
    },
    /// Lists or writes the gallery of worked examples.
    Fixtures {
        #[arg(long, conflicts_with = "emit")]
        list: bool,
        /// Fixture name (or `all`) and target directory.
        #[arg(long, num_args = 2, value_names = ["NAME", "DIR"])]
        emit: Option<Vec<String>>,
    },
}

struct Report {
    lines: Vec<String>,
    json: Value,
}

impl Report {
    /// Write errors (such as a closed pipe) are ignored.
    fn print(&self) {
        let mut out = std::io::stdout().lock();
        let body = serde_json::to_string_pretty(&self.json).expect("serializable report");
        let _ = writeln!(out, "{}\n{JSON_MARKER}\n{body}", self.lines.join("\n"));
        let _ = out.flush();
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) => 2,
        Error::TheoremViolation(_) => 4,
        _ => 3,
    }
}

fn load_unitary(path: &Path, tol: &Tolerance) -> Result<BipartiteUnitary, Error> {
    read_json::<MatrixFile>(path)?.unitary(tol)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable value")
}

fn cmd_schmidt(file: &Path, factors_dir: Option<&Path>, tol: &Tolerance) -> Result<Report, Error> {
    let mf = read_json::<MatrixFile>(file)?;
    let m = mf.operator()?;
    let dec = schmidt_decompose(&m, mf.d_a, mf.d_b, tol)?;
    let rep = schmidt_rank_report(&m, mf.d_a, mf.d_b, tol)?;
    let mut lines = vec![
        format!("Schmidt rank: {}", dec.rank()),
        format!("coefficients: {}", dec.coefficients.iter().map(|c| format!("{c:.12}")).collect::<Vec<_>>().join(" ")),
    ];
    if let Some(gap) = rep.largest_dropped {
        lines.push(format!("largest dropped singular value: {gap:.3e} (threshold {:.3e})", rep.threshold));
    }
    let mut written = Vec::new();
    if let Some(dir) = factors_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))?;
        for (k, (a, b)) in dec.a_ops.iter().zip(&dec.b_ops).enumerate() {
            let path = dir.join(format!("term{k}.json"));
            let term = json!({
                "coefficient": dec.coefficients[k],
                "a": nonlocal_core::io::matrix_to_json(a),
                "b": nonlocal_core::io::matrix_to_json(b),
            });
            write_json(&path, &term)?;
            written.push(path.display().to_string());
        }
        lines.push(format!("wrote {} factor files to {}", written.len(), dir.display()));
    }
    Ok(Report {
        lines,
        json: json!({
            "d_A": mf.d_a,
            "d_B": mf.d_b,
            "schmidt_rank": dec.rank(),
            "coefficients": dec.coefficients,
            "rank_report": to_value(&rep),
            "factor_files": written,
        }),
    })
}

fn sides(arg: SideArg) -> Vec<Side> {
    match arg {
        SideArg::A => vec![Side::A],
        SideArg::B => vec![Side::B],
        SideArg::Both => vec![Side::A, Side::B],
    }
}

fn cmd_detect(file: &Path, side: SideArg, seed: u64, tol: &Tolerance) -> Result<Report, Error> {
    let u = load_unitary(file, tol)?;
    let mut lines = Vec::new();
    let mut out = serde_json::Map::new();
    for s in sides(side) {
        let verdict = check_controlled(&u, s, tol)?;
        let groups = if verdict.is_controlled { Some(extract_controlled_form(&u, s, tol, seed)?.group_count()) } else { None };
        let blocks = finest_block_structure(&u, s, tol, seed)?.map(|b| b.block_sizes);
        lines.push(match groups {
            Some(g) => format!("side {s}: controlled, groups: {g}"),
            None => format!("side {s}: not controlled"),
        });
        lines.push(match &blocks {
            Some(b) => format!("side {s}: block-controlled with blocks {b:?}"),
            None => format!("side {s}: no nontrivial block structure"),
        });
        out.insert(
            s.to_string(),
            json!({
                "controlled": verdict.is_controlled,
                "groups": groups,
                "blocks": blocks,
                "max_normality_residual": verdict.max_normality_residual,
                "max_commutator_residual": verdict.max_commutator_residual,
            }),
        );
    }
    Ok(Report { lines, json: Value::Object(out) })
}

fn cmd_decompose(file: &Path, side: Side, seed: u64, out: Option<&Path>, tol: &Tolerance) -> Result<Report, Error> {
    let u = load_unitary(file, tol)?;
    let cf = extract_controlled_form(&u, side, tol, seed)?;
    let residual = cf.reconstruction_residual(u.matrix());
    let mut lines = vec![
        format!("controlled from {side} with {} groups", cf.group_count()),
        format!("reconstruction residual: {residual:.3e}"),
    ];
    for (g, grp) in cf.groups.iter().enumerate() {
        lines.push(format!("group {g}: control indices {:?}", grp.indices));
    }
    let file = ControlledFormFile::from_form(&cf);
    if let Some(path) = out {
        write_json(path, &file)?;
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(Report {
        lines,
        json: json!({ "group_count": cf.group_count(), "residual": residual, "form": to_value(&file) }),
    })
}

fn cmd_sl2lu(u: &Path, v: &Path, witness: &Path, out: Option<&Path>, tol: &Tolerance) -> Result<Report, Error> {
    let u = read_json::<MatrixFile>(u)?.operator()?;
    let v = read_json::<MatrixFile>(v)?.operator()?;
    let w = read_json::<WitnessFile>(witness)?.witness()?;
    let lu = sl_to_lu(&u, &v, &w, tol)?;
    let file = LocalWitnessFile::from_witness(&lu);
    let mut lines = vec![
        format!("{} parties with dimensions {:?}", w.parties(), w.dims()),
        format!("residual |U - (q..) V (r..)|_F = {:.3e}", lu.residual),
    ];
    if let Some(path) = out {
        write_json(path, &file)?;
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(Report { lines, json: to_value(&file) })
}

fn cmd_protocol(
    file: &Path,
    input: &str,
    protocol: ProtocolArg,
    seed: u64,
    out: Option<&Path>,
    tol: &Tolerance,
) -> Result<Report, Error> {
    let u = load_unitary(file, tol)?;
    let state = if input == "random" {
        PureState::random(&["A", "B"], &[u.d_a(), u.d_b()], seed)?
    } else {
        read_json::<StateFile>(Path::new(input))?.state()?
    };
    let (output, tr) = match protocol {
        ProtocolArg::Auto => {
            let rank3 = matches!(u.d_a(), 2 | 3)
                && u.d_a() <= u.d_b()
                && nonlocal_core::schmidt::schmidt_rank(u.matrix(), u.d_a(), u.d_b(), tol)? == 3;
            if rank3 {
                implement_schmidt_rank3(&u, &state, tol, seed)?
            } else {
                implement_cheapest(&u, &state, tol, seed)?
            }
        }
        ProtocolArg::Teleport => run_route(&Route::Teleport, &u, &state, seed)?,
        ProtocolArg::Controlled => {
            let route = plan_routes(&u, tol, seed)?
                .into_iter()
                .find(|r| matches!(r, Route::Controlled(_)))
                .ok_or_else(|| Error::InvalidControlledForm("operator is controlled from neither side".into()))?;
            run_route(&route, &u, &state, seed)?
        }
    };
    let mut lines = vec![
        format!("protocol: {}", tr.protocol),
        format!("resource rank: {} ({:.6} ebits)", tr.resource_rank, tr.ebits),
        format!(
            "branches: {} of {} {}, minimum fidelity {:.12}",
            tr.branches.examined,
            tr.branches.branch_count,
            if tr.branches.exhaustive { "enumerated" } else { "sampled" },
            tr.process_fidelity
        ),
    ];
    for r in &tr.rounds {
        lines.push(format!("  {} measured {}: {}; {}", r.measuring_party, r.outcome, r.message, r.correction));
    }
    if let Some(path) = out {
        write_json(path, &StateFile::from_state(&output))?;
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(Report { lines, json: to_value(&tr) })
}

fn cmd_rankcheck(
    files: &[PathBuf],
    random: Option<usize>,
    trials: usize,
    seed: u64,
    unitaries: &[PathBuf],
    experimental: bool,
    tol: &Tolerance,
) -> Result<Report, Error> {
    let mut lines = Vec::new();
    let mut reports = Vec::new();
    let mut violations = 0usize;
    for f in files {
        let rep = check_rank_inequality(&read_json::<KroneckerSumFile>(f)?.kronecker_sum()?, tol)?;
        lines.push(format!(
            "{}: K={} rank(sum R (x) S^T)={} rank(sum R (x) S)={} {}",
            f.display(),
            rep.k,
            rep.lhs_rank,
            rep.rhs_rank,
            if rep.holds { "holds" } else { "VIOLATED" }
        ));
        violations += usize::from(!rep.holds);
        reports.push(to_value(&rep));
    }
    let mut random_summary = Value::Null;
    if let Some(k) = random {
        let mut r = rng(seed);
        let mut flagged = Vec::new();
        let mut equal = 0usize;
        for i in 0..trials {
            let rep = check_rank_inequality(&random_kronecker_sum(&mut r, k), tol)?;
            equal += usize::from(rep.lhs_rank == rep.rhs_rank);
            if !rep.holds {
                flagged.push(json!({ "trial": i, "report": to_value(&rep) }));
            }
        }
        violations += flagged.len();
        lines.push(format!(
            "random K={k}: {trials} trials, {} violations, {equal} with equal ranks",
            flagged.len()
        ));
        random_summary = json!({ "k": k, "trials": trials, "seed": seed, "equal_ranks": equal, "violations": flagged });
    }
    let mut unitary_reports = Vec::new();
    for f in unitaries {
        let rep = verify_rank3_unitary_equality(&load_unitary(f, tol)?, tol, experimental)?;
        lines.push(format!(
            "{}: rank of partial transpose {} of {} ({})",
            f.display(),
            rep.rank_partial_transpose,
            rep.rank_u,
            if rep.equal { "equal" } else { "ANOMALY" }
        ));
        unitary_reports.push(to_value(&rep));
    }
    let anomaly = violations > 0 || unitary_reports.iter().any(|r| r["equal"] == Value::Bool(false));
    let json = json!({
        "files": reports,
        "random": random_summary,
        "unitaries": unitary_reports,
        "violations": violations,
    });
    if anomaly {
        // Reported in full before the anomaly exit code.
        Report { lines, json }.print();
        return Err(Error::TheoremViolation(format!("{violations} rank-inequality violations or rank anomalies")));
    }
    Ok(Report { lines, json })
}

fn cmd_fixtures(list: bool, emit: Option<&[String]>) -> Result<Report, Error> {
    let all = fixtures::all();
    if let Some([name, dir]) = emit {
        let chosen: Vec<_> = if name == "all" {
            all
        } else {
            vec![fixtures::by_name(name).ok_or_else(|| Error::Parse(format!("unknown fixture {name:?}")))?]
        };
        let dir = Path::new(dir);
        std::fs::create_dir_all(dir).map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for f in chosen {
            let mut file = MatrixFile::from_unitary(&f.build());
            file.name = Some(f.name.to_string());
            file.description = Some(f.description.to_string());
            let path = dir.join(format!("{}.json", f.name));
            write_json(&path, &file)?;
            written.push(path.display().to_string());
        }
        let lines = written.iter().map(|p| format!("wrote {p}")).collect();
        return Ok(Report { lines, json: json!({ "written": written }) });
    }
    if !list {
        return Err(Error::Parse("fixtures needs --list or --emit NAME DIR".into()));
    }
    let lines = all.iter().map(|f| format!("{:<16} {}x{}  {}", f.name, f.d_a, f.d_b, f.description)).collect();
    let json = Value::Array(
        all.iter()
            .map(|f| {
                json!({
                    "name": f.name,
                    "d_A": f.d_a,
                    "d_B": f.d_b,
                    "description": f.description,
                    "schmidt_rank": f.expected.schmidt_rank,
                    "groups_A": f.expected.groups_a,
                    "groups_B": f.expected.groups_b,
                    "blocks_A": f.expected.blocks_a,
                    "blocks_B": f.expected.blocks_b,
                })
            })
            .collect(),
    );
    Ok(Report { lines, json })
}

fn run(cli: Cli) -> Result<Report, Error> {
    let tol = cli.tol.tolerance();
    tol.validate().map_err(|e| Error::Parse(e.to_string()))?;
    match cli.command {
        Command::Schmidt { file, factors_dir } => cmd_schmidt(&file, factors_dir.as_deref(), &tol),
        Command::Detect { file, side, seed } => cmd_detect(&file, side, seed, &tol),
        Command::Decompose { file, side, seed, out } => cmd_decompose(&file, side, seed, out.as_deref(), &tol),
        Command::Sl2lu { u, v, witness, out } => cmd_sl2lu(&u, &v, &witness, out.as_deref(), &tol),
        Command::Protocol { file, input, protocol, seed, out } => {
            cmd_protocol(&file, &input, protocol, seed, out.as_deref(), &tol)
        }
        Command::Rankcheck { files, random, trials, seed, unitaries, experimental } => {
            cmd_rankcheck(&files, random, trials, seed, &unitaries, experimental, &tol)
        }
        Command::Fixtures { list, emit } => cmd_fixtures(list, emit.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            report.print();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
