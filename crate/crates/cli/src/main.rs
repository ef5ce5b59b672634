use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nhmart::experiments::{self, ExperimentRow};
use nhmart::{gspace, io, mfunc, mixing, opnorm, paraprod, stopping};
use nhmart::{Lattice, LinearOp, NodeSpec, ParaKind};
use serde_json::json;

#[derive(Parser)]
#[command(name = "nhmart", version, about = "Martingale calculus on finite non-homogeneous lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a lattice file and list every invariant violation.
    Validate { lattice: PathBuf },
    /// Martingale differences and root averages of a function, as JSON.
    Decompose { function: PathBuf },
    /// `H^p_q` norm of a function (`q = 2` is the square function).
    Norm {
        function: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        /// Include root averages.
        #[arg(long)]
        extended: bool,
    },
    /// Carleson embedding norm of a coefficient sequence against its testing constant.
    EmbedTest {
        sequence: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = opnorm::DEFAULT_RESTARTS)]
        trials: usize,
        #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
        seed: u64,
    },
    /// Norm of one operator of the paraproduct family built from a symbol `b`.
    ParaNorm {
        /// Symbol file.
        function: PathBuf,
        /// mult, pi, pi_star, pi_extstar, lambda, lambda0, lambda1 or remainder.
        #[arg(long)]
        kind: ParaKind,
        #[arg(long)]
        p: f64,
        /// For `pi`, measure into `H^p_q` and report the testing constant.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = opnorm::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
        seed: u64,
        /// Write the dense matrix as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Induced `L^p` norm of a dense operator given as CSV.
    Opnorm {
        matrix: PathBuf,
        /// Leaf measures come from this lattice; unit measures otherwise.
        #[arg(long)]
        lattice: Option<PathBuf>,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = opnorm::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = experiments::DEFAULT_SEED)]
        seed: u64,
    },
    /// Stopping generations of a nonnegative function, as JSON.
    Stopping {
        function: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        k0: i32,
    },
    /// Per-interval non-degeneracy certificates of a transform, as CSV.
    MixingCert {
        blocks: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long = "K")]
        k: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Generators and drivers for the four explicit constructions.
    #[command(subcommand)]
    Counterexample(Counterexample),
    /// `‖[M_b, T]‖`, `sup ‖Δb‖_∞` and mixing certificates per δ.
    CommutatorExp {
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        out: Format,
    },
}

#[derive(Subcommand)]
enum Counterexample {
    /// Averaged square function comparison on the chain lattice.
    Avg {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Square functions of the two sequences with equal difference norms.
    Basis {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Swap-block transform and its symbol.
    Mixing {
        #[arg(long, value_delimiter = ',', required = true)]
        delta: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Dyadic chain with a divergent BMO series.
    BmoDiv {
        #[arg(long = "N", value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        #[arg(long, default_value_t = 2.0)]
        r: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    out: Format,
    /// Also write the generated lattice, functions and blocks into this directory.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Writes to stdout, exiting quietly when the reader has gone away.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let mut lock = std::io::stdout().lock();
        if let Err(e) = write!(lock, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        out!("{}\n", format_args!($($arg)*))
    }};
}

fn emit(rows: &[ExperimentRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => out!("{}", experiments::rows_to_csv(rows)),
        Format::Json => out!("{}", experiments::rows_to_json(rows)),
    }
    Ok(())
}

fn save_all(dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, text) in files {
        io::write(&dir.join(name), text)?;
    }
    Ok(())
}

/// Counting measure on `n` leaves under one root.
fn counting_lattice(n: usize) -> Result<Lattice> {
    if n == 0 {
        bail!("empty matrix");
    }
    if n == 1 {
        return Ok(Lattice::assemble(&[NodeSpec::new(0, None, 1.0)])?);
    }
    let mut specs = vec![NodeSpec::new(0, None, n as f64)];
    specs.extend((1..=n).map(|i| NodeSpec::new(i as i64, Some(0), 1.0)));
    Ok(Lattice::assemble(&specs)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { lattice } => {
            let text = std::fs::read_to_string(&lattice).with_context(|| format!("reading {}", lattice.display()))?;
            let lat = Lattice::<f64>::assemble(&Lattice::<f64>::specs_from_json(&text)?)?;
            let violations = lat.validate();
            if violations.is_empty() {
                outln!("ok: {} nodes, {} leaves, {} roots", lat.num_nodes(), lat.num_leaves(), lat.roots().len());
                return Ok(ExitCode::SUCCESS);
            }
            for v in &violations {
                outln!("{v:?}");
            }
            Ok(ExitCode::FAILURE)
        }
        Command::Decompose { function } => {
            let f = io::read_function(&function)?;
            let d = mfunc::decompose(&f);
            let lat = f.lattice();
            let roots: serde_json::Map<_, _> = lat
                .roots()
                .iter()
                .zip(d.root_averages())
                .map(|(&r, &v)| (lat.label(r).to_string(), json!(v)))
                .collect();
            let diffs: serde_json::Map<_, _> = lat
                .internal_nodes()
                .map(|id| (lat.label(id).to_string(), json!(d.diff(id))))
                .collect();
            let out = json!({"root_averages": roots, "differences": diffs});
            outln!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Norm { function, p, q, extended } => {
            let f = io::read_function(&function)?;
            let v = mfunc::hpq_norm(&mfunc::decompose(&f), p, q, extended)?;
            outln!("p,q,extended,norm\n{p},{q},{extended},{v}");
            Ok(ExitCode::SUCCESS)
        }
        Command::EmbedTest { sequence, p, q, trials, seed } => {
            let alpha = io::read_sequence(&sequence)?;
            let r = gspace::embedding_test(&alpha, p, q, trials, seed)?;
            outln!("p,q,k,lower_bound,estimate,ratio,seed");
            outln!("{p},{q},{},{},{},{},{seed}", r.k, r.lower_bound, r.estimate, r.ratio);
            Ok(ExitCode::SUCCESS)
        }
        Command::ParaNorm { function, kind, p, q, restarts, seed, dump } => {
            let b = io::read_function(&function)?;
            let lat = b.lattice().clone();
            let op = paraprod::assemble(kind, &b, &lat)?;
            if let Some(path) = dump {
                io::write(&path, &op.matrix().to_csv())?;
            }
            let (lower, estimate, k) = match (kind, q) {
                (ParaKind::Pi, Some(q)) => {
                    let r = paraprod::paraproduct_family_op(&b).norm_p(p, q, restarts, seed)?;
                    (r.lower_bound, r.estimate, Some(paraprod::testing_constant(&b, p, q)?))
                }
                (_, Some(_)) => bail!("--q applies only to --kind pi"),
                _ => {
                    let r = opnorm::norm_p(&op, p, restarts, seed)?;
                    (r.lower_bound, r.estimate, None)
                }
            };
            outln!("kind,p,q,lower_bound,estimate,testing_constant,seed");
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            outln!("{},{p},{},{lower},{estimate},{},{seed}", kind.name(), opt(q), opt(k));
            Ok(ExitCode::SUCCESS)
        }
        Command::Opnorm { matrix, lattice, p, restarts, seed } => {
            let m = io::read_matrix_csv(&matrix)?;
            if !m.is_square() {
                bail!("operator must be square, got {}x{}", m.rows(), m.cols());
            }
            let lat = match lattice {
                Some(path) => io::read_lattice(&path)?,
                None => counting_lattice(m.rows())?,
            };
            let op = LinearOp::new(Arc::new(lat), m)?;
            let r = opnorm::norm_p(&op, p, restarts, seed)?;
            outln!("p,lower_bound,estimate,restarts,seed");
            outln!("{p},{},{},{},{}", r.lower_bound, r.estimate, r.restarts_used, r.seed);
            Ok(ExitCode::SUCCESS)
        }
        Command::Stopping { function, k0 } => {
            let f = io::read_function(&function)?;
            let forest = stopping::stopping_generations(&f, k0)?;
            let violations = stopping::verify_lemma(&f, &forest);
            let mut out = forest.to_json(f.lattice());
            out["violations"] = json!(violations.len());
            outln!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::MixingCert { blocks, p, k, eps } => {
            let t = io::read_blocks(&blocks)?;
            let c = mixing::classify(&t, p, eps, k)?;
            let mut out = String::from("node,parent,eps_nocap,eps_cap,small,feasible,for_t,adjoint_eps_cap,for_adjoint\n");
            for v in &c.intervals {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    v.node, v.parent, v.epsilon_nocap, v.epsilon_cap, v.small, v.feasible, v.for_t, v.adjoint_epsilon_cap, v.for_adjoint
                )?;
            }
            out!("{out}");
            eprintln!("strong: {}, weak: {}", c.strong, c.weak);
            Ok(ExitCode::SUCCESS)
        }
        Command::Counterexample(ce) => counterexample(ce),
        Command::CommutatorExp { deltas, p, out } => {
            emit(&experiments::run_commutator_experiment(&deltas, p)?, out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn counterexample(ce: Counterexample) -> Result<ExitCode> {
    match ce {
        Counterexample::Avg { n, p, common } => {
            eprintln!("# convention: I_0 = [0, 1), so that I_0 = I_1 ∪ J_1 exactly");
            let rows = experiments::run_avg_experiment(p, &n)?;
            if let Some(dir) = &common.save {
                let mut files = Vec::new();
                for &k in &n {
                    let (lat, d) = experiments::gen_avg_counterexample::<f64>(k)?;
                    let f = mfunc::reconstruct(&d)?;
                    let lname = format!("avg_n{k}_lattice.json");
                    files.push((format!("avg_n{k}_f.json"), io::function_json(&lname, &f)));
                    files.push((lname, lat.to_json()));
                }
                save_all(dir, &files)?;
            }
            emit(&rows, common.out)?;
        }
        Counterexample::Basis { n, levels, p, common } => {
            let rows = experiments::run_basis_experiment(n, levels, p)?;
            if let Some(dir) = &common.save {
                let (lat, f, g) = experiments::gen_basis_counterexample::<f64>(n, levels, p)?;
                let lname = "basis_lattice.json";
                save_all(
                    dir,
                    &[
                        ("basis_f.json".into(), io::function_json(lname, &mfunc::reconstruct(&f)?)),
                        ("basis_g.json".into(), io::function_json(lname, &mfunc::reconstruct(&g)?)),
                        (lname.into(), lat.to_json()),
                    ],
                )?;
            }
            emit(&rows, common.out)?;
        }
        Counterexample::Mixing { delta, p, common } => {
            let rows = experiments::run_commutator_experiment(&delta, p)?;
            if let Some(dir) = &common.save {
                let (lat, b, t) = experiments::gen_mixing_counterexample(&delta)?;
                let lname = "mixing_lattice.json";
                save_all(
                    dir,
                    &[
                        ("mixing_b.json".into(), io::function_json(lname, &b)),
                        ("mixing_blocks.json".into(), io::blocks_json(lname, &t)),
                        (lname.into(), lat.to_json()),
                    ],
                )?;
            }
            emit(&rows, common.out)?;
        }
        Counterexample::BmoDiv { n, q, r, common } => {
            let mut rows = Vec::new();
            for &k in &n {
                rows.extend(experiments::run_bmo_experiment(k, q, r)?);
            }
            if let Some(dir) = &common.save {
                let mut files = Vec::new();
                for &k in &n {
                    let (lat, d) = experiments::gen_bmo_divergent::<f64>(k)?;
                    let lname = format!("bmo_n{k}_lattice.json");
                    files.push((format!("bmo_n{k}_f.json"), io::function_json(&lname, &mfunc::reconstruct(&d)?)));
                    files.push((lname, lat.to_json()));
                }
                save_all(dir, &files)?;
            }
            emit(&rows, common.out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
