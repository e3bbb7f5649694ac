use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use bcmem::checkpoint;
use bcmem::cube_algebra::{
    check_discriminant_relation, check_group_axioms, compose_forms, equal_discriminant_trials,
    reduced_forms,
};
use bcmem::data::{self, Split};
use bcmem::nn::gradcheck;
use bcmem::quad_reg::QuadLossMode;
use bcmem::train::{self, TrainConfig};
use bcmem::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bcmem", version, about = "Cube-regularized latent classifier toolkit")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the cube and class-group algebra.
    VerifyAlgebra {
        /// Number of random cubes (entries in [-9, 9]).
        #[arg(long, default_value_t = 10_000)]
        cubes: usize,
        /// Seed for the random cubes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated negative discriminants for the class-group checks.
        #[arg(long, default_value = "-23,-47,-71", allow_hyphen_values = true)]
        disc_set: String,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Seed for inputs, weights and projections.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on MNIST and write the best checkpoint.
    Train {
        /// Directory holding the four IDX files (optionally gzipped).
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        /// Number of epochs.
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        /// Mini-batch size.
        #[arg(long, default_value_t = 256)]
        batch: usize,
        /// Initial learning rate.
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Regularizer weight; 0 trains the unregularized baseline.
        #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
        lambda: f64,
        /// Regularizer variant.
        #[arg(long, default_value = "cube")]
        mode: QuadLossMode,
        /// Seed for initialization, split, shuffling and dropout.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Epochs without validation improvement before stopping.
        #[arg(long, default_value_t = 20)]
        patience: usize,
        /// Use only the first N training images (10% held out for validation).
        #[arg(long)]
        train_limit: Option<usize>,
        /// Cap the global gradient L2 norm before each optimizer step (off by default).
        #[arg(long)]
        clip_grad_norm: Option<f64>,
        /// Checkpoint path.
        #[arg(long, default_value = "bcmem.ckpt")]
        out: PathBuf,
        /// JSON-lines epoch log path.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding the IDX files.
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        /// Which split to evaluate on.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Write latent coordinates, labels and predictions as CSV.
    ExportEmbeddings {
        /// Checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding the IDX files.
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        /// Which split to export.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

enum Failure {
    Check,
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Idx(_) | Error::Checkpoint(_) => 3,
        Error::Config(_) | Error::NegativeLambda(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let json = cli.json;
    match cli.command {
        Command::VerifyAlgebra {
            cubes,
            seed,
            disc_set,
        } => verify_algebra(cubes, seed, &disc_set, json),
        Command::Gradcheck { seed } => run_gradcheck(seed, json),
        Command::Train {
            data_dir,
            epochs,
            batch,
            lr,
            lambda,
            mode,
            seed,
            patience,
            train_limit,
            clip_grad_norm,
            out,
            log,
        } => {
            let config = TrainConfig {
                epochs,
                batch_size: batch,
                lr,
                lambda,
                mode,
                seed,
                patience,
                data_dir,
                out: Some(out),
                log,
                train_limit,
                clip_grad_norm,
            };
            run_train(&config, json)
        }
        Command::Eval {
            checkpoint,
            data_dir,
            split,
        } => {
            let mut ck = checkpoint::load(&checkpoint)?;
            let dataset = data::load_mnist(&data_dir, split.into())?;
            let report = train::evaluate_checkpoint(&mut ck, &dataset)?;
            if json {
                println!("{}", serde_json::to_string(&report).expect("report serializes"));
            } else {
                println!(
                    "accuracy={:.4} task_loss={:.6} residual={:.6e} samples={}",
                    report.accuracy, report.task_loss, report.residual, report.samples
                );
            }
            Ok(())
        }
        Command::ExportEmbeddings {
            checkpoint,
            data_dir,
            split,
            out,
        } => {
            let mut ck = checkpoint::load(&checkpoint)?;
            let dataset = data::load_mnist(&data_dir, split.into())?;
            let rows = train::extract_embeddings(&mut ck.model, &dataset)?;
            train::write_embeddings_csv(&out, &rows)?;
            let centroid = train::nearest_centroid_accuracy(&rows);
            let head = train::classifier_accuracy(&rows);
            if json {
                println!(
                    "{}",
                    json!({"rows": rows.len(), "out": out, "centroid_accuracy": centroid, "classifier_accuracy": head})
                );
            } else {
                println!("rows={} out={}", rows.len(), out.display());
                println!("centroid_accuracy={centroid:.4} classifier_accuracy={head:.4}");
            }
            Ok(())
        }
    }
}

fn parse_disc_set(s: &str) -> Result<Vec<i128>, Failure> {
    s.split(',')
        .map(|part| {
            let d: i128 = part
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("bad discriminant {part:?}")))?;
            if d >= 0 || !matches!(d.rem_euclid(4), 0 | 1) {
                return Err(Failure::Usage(format!(
                    "{d} is not a negative discriminant (must be 0 or 1 mod 4)"
                )));
            }
            Ok(d)
        })
        .collect()
}

fn verify_algebra(cubes: usize, seed: u64, disc_set: &str, json: bool) -> Result<(), Failure> {
    let discs = parse_disc_set(disc_set)?;
    let started = Instant::now();
    let equal = equal_discriminant_trials(cubes, 9, seed);
    let cube_secs = started.elapsed().as_secs_f64();
    let mut ok = equal == cubes;

    let mut groups = Vec::new();
    let mut relation_rows = Vec::new();
    for &d in &discs {
        let report = check_group_axioms(d).map_err(Error::from)?;
        ok &= report.all_hold();
        groups.push(report);
        let forms = reduced_forms(d);
        for f in &forms {
            for g in &forms {
                let h = compose_forms(f, g).map_err(Error::from)?;
                let (lhs, rhs) = check_discriminant_relation(f, g, &h).map_err(Error::from)?;
                relation_rows.push((d, *f, *g, h, lhs, rhs));
            }
        }
    }
    let lhs_ok = relation_rows
        .iter()
        .all(|(d, _, _, _, lhs, _)| *lhs == (*d).into());

    if json {
        let value = json!({
            "equal_discriminant": {"passed": equal, "total": cubes, "seconds": cube_secs},
            "groups": groups.iter().map(|g| json!({
                "discriminant": g.discriminant.to_string(),
                "classes": g.class_count,
                "closure": g.closure,
                "identity": g.identity,
                "inverses": g.inverses,
                "associativity": g.associativity,
            })).collect::<Vec<_>>(),
            "relation": relation_rows.iter().map(|(d, f, g, h, lhs, rhs)| json!({
                "discriminant": d.to_string(),
                "f": f.to_string(), "g": g.to_string(), "h": h.to_string(),
                "lhs": lhs.to_string(), "rhs": rhs.to_string(),
                "equal": lhs == rhs,
            })).collect::<Vec<_>>(),
            "relation_lhs_preserved": lhs_ok,
            "passed": ok,
        });
        println!("{value}");
    } else {
        println!("equal-discriminant: {equal}/{cubes} ({cube_secs:.3}s)");
        for g in &groups {
            let mark = |b: bool| if b { "ok" } else { "FAIL" };
            println!(
                "D={}: {} reduced classes; closure {} identity {} inverses {} associativity {}",
                g.discriminant,
                g.class_count,
                mark(g.closure),
                mark(g.identity),
                mark(g.inverses),
                mark(g.associativity)
            );
        }
        println!("disc(f∘g) vs disc(f)·disc(g)·disc(h)², h = f∘g:");
        println!("{:>6}  {:<14} {:<14} {:<14} {:>6} {:>16}", "D", "f", "g", "h", "lhs", "rhs");
        for (d, f, g, h, lhs, rhs) in &relation_rows {
            println!(
                "{:>6}  {:<14} {:<14} {:<14} {:>6} {:>16}",
                d,
                f.to_string(),
                g.to_string(),
                h.to_string(),
                lhs,
                rhs
            );
        }
        println!(
            "lhs equals D in {}/{} rows; lhs equals rhs in {}/{} rows",
            relation_rows.iter().filter(|(d, _, _, _, l, _)| *l == (*d).into()).count(),
            relation_rows.len(),
            relation_rows.iter().filter(|(_, _, _, _, l, r)| l == r).count(),
            relation_rows.len()
        );
        println!("{}", if ok { "all checks passed" } else { "checks FAILED" });
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn run_gradcheck(seed: u64, json: bool) -> Result<(), Failure> {
    let reports = gradcheck::run_suite(seed);
    let worst = reports
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0, f64::max);
    let ok = reports.iter().all(|r| r.passed());
    if json {
        println!(
            "{}",
            json!({"seed": seed, "fragments": reports, "max_relative_error": worst, "passed": ok})
        );
    } else {
        for r in &reports {
            println!(
                "{:<24} checked={:<6} max_rel_err={:.3e} {}",
                r.fragment,
                r.checked,
                r.max_relative_error,
                if r.passed() { "ok" } else { "FAIL" }
            );
        }
        println!("max relative error {worst:.3e} (tolerance {:.0e})", gradcheck::TOLERANCE);
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn run_train(config: &TrainConfig, json: bool) -> Result<(), Failure> {
    let outcome = train::train(config, |r| {
        if json {
            println!("{}", serde_json::to_string(r).expect("report serializes"));
        } else {
            println!(
                "epoch {:>3}  lr {:.2e}  task {:.4}  quad {:.4e}  val_loss {:.4}  val_acc {:.4}  {:.1}s",
                r.epoch,
                r.lr,
                r.train_task_loss,
                r.train_quad_loss,
                r.val_loss,
                r.val_accuracy,
                r.wall_time_s
            );
        }
    })?;
    let out = config.out.as_ref().expect("train always writes a checkpoint");
    if json {
        println!(
            "{}",
            json!({"best_epoch": outcome.best_epoch, "best_val_loss": outcome.best_val_loss, "out": out})
        );
    } else {
        println!(
            "best epoch {} (val_loss {:.4}); checkpoint written to {}",
            outcome.best_epoch,
            outcome.best_val_loss,
            out.display()
        );
    }
    Ok(())
}
