//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 failed check (gradcheck / analyze-filters thresholds).

use crate::data::{
    generate_synthetic, load_idx, load_pgm_manifest, prepare_splits, stratified_subset,
    PreparedSplits, RawDataset,
};
use crate::error::Error;
use crate::fir::{spectral_phase_report, SpectralVerdict};
use crate::harness::{
    aggregate_table, compare_accuracies, curves_csv, read_run_results, run_matrix_full,
    summary_csv, updates_csv, TableRow, TrainingConfig,
};
use crate::network::{
    count_network_parameters, finite_difference_check, gradcheck_inputs, reduced_network_for,
    Condition, Layer, Network,
};
use crate::symmetry::{count_parameters, expand_with, SymmetryClass, T2bMode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Split seed shared by every invocation so train/val membership and
/// z-score statistics are reproducible.
const SPLIT_SEED: u64 = 90;
/// Seed for the desk-scale stratified subset.
const SUBSET_SEED: u64 = 0xd15c;
/// Seeds for the self-contained synthetic dataset.
const SYNTH_TRAIN_SEED: u64 = 0x5eed_da7a;
const SYNTH_TEST_SEED: u64 = 0x5eed_da7b;

#[derive(Parser)]
#[command(
    name = "symconv",
    about = "Symmetry-constrained convolution experiments on digit data",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition (or `all`) and write results + checkpoints
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient check on a reduced network
    Gradcheck(GradcheckArgs),
    /// Spectral linear-phase report for a checkpoint's conv kernels (CSV)
    AnalyzeFilters(AnalyzeArgs),
    /// Print parameter counts for a condition
    Params(ParamsArgs),
    /// Rank-sum comparison of two result files/directories
    Compare(CompareArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scale {
    /// Stratified 6000-train / 1000-test subset
    Desk,
    /// The complete dataset
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum T2bModeArg {
    Literal,
    Consistent,
}

impl From<T2bModeArg> for T2bMode {
    fn from(m: T2bModeArg) -> T2bMode {
        match m {
            T2bModeArg::Literal => T2bMode::Literal,
            T2bModeArg::Consistent => T2bMode::Consistent,
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset: `mnist`, `synthetic`, `idx:<train_imgs>,<train_labels>,<test_imgs>,<test_labels>`,
    /// or `pgm:<train_dir>,<train_manifest>,<test_dir>,<test_manifest>`
    #[arg(long, default_value = "mnist")]
    dataset: String,

    /// Directory holding the four standard IDX files for `--dataset mnist`
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,

    /// Desk scale subsets IDX datasets to 600 train / 100 test per class
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,

    /// Training examples per class for `--dataset synthetic`
    #[arg(long, default_value_t = 600)]
    synthetic_per_class: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Condition name (e.g. L-T2B-R) or `all` for the 14-condition matrix
    #[arg(long)]
    condition: String,

    #[command(flatten)]
    data: DatasetArgs,

    #[arg(long, default_value_t = 5)]
    epochs: usize,

    /// Number of independent runs; run i uses seed `--seed + i`
    #[arg(long, default_value_t = 1)]
    seeds: usize,

    /// Base seed for initialization and shuffling
    #[arg(long, default_value_t = 42)]
    seed: u64,

    #[arg(long, default_value_t = 0.001)]
    lr: f64,

    /// Examples per update; > 1 uses mean-reduced gradients
    #[arg(long, default_value_t = 1)]
    batch_size: usize,

    /// T2B gradient folding: the study's literal rule or the exact tied
    /// derivative
    #[arg(long, value_enum, default_value = "literal")]
    t2b_mode: T2bModeArg,

    /// Output directory for run JSON, CSVs and checkpoints
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,

    #[command(flatten)]
    data: DatasetArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Condition whose kernel classes (and mode) the reduced network uses
    #[arg(long)]
    condition: String,

    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,

    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,

    #[arg(long, default_value_t = 17)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,

    /// CSV destination; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    condition: String,
}

#[derive(Args)]
struct CompareArgs {
    /// Two run-result JSON files or directories of them
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    results: Vec<PathBuf>,
}

/// Classify library errors into process exit codes.
fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::InvalidGeometry(_)
        | Error::InvalidCondition { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn fail(err: Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(&err)
}

/// Parse argv and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version as "errors" with exit 0
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::AnalyzeFilters(args) => cmd_analyze(args),
        Command::Params(args) => cmd_params(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn mnist_paths(dir: &Path) -> [(PathBuf, PathBuf); 2] {
    [
        (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ),
        (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ),
    ]
}

fn load_raw(args: &DatasetArgs) -> Result<(RawDataset, RawDataset), Error> {
    let spec = args.dataset.as_str();
    let (mut train, mut test, subsettable) = if spec == "mnist" {
        let [(ti, tl), (si, sl)] = mnist_paths(&args.data_dir);
        (load_idx(&ti, &tl)?, load_idx(&si, &sl)?, true)
    } else if spec == "synthetic" {
        let per = args.synthetic_per_class.max(1);
        (
            generate_synthetic(per, SYNTH_TRAIN_SEED),
            generate_synthetic((per / 5).max(10), SYNTH_TEST_SEED),
            false,
        )
    } else if let Some(rest) = spec.strip_prefix("idx:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::invalid_argument(
                "idx dataset needs 4 comma-separated paths: train_imgs,train_labels,test_imgs,test_labels",
            ));
        }
        (
            load_idx(Path::new(parts[0]), Path::new(parts[1]))?,
            load_idx(Path::new(parts[2]), Path::new(parts[3]))?,
            true,
        )
    } else if let Some(rest) = spec.strip_prefix("pgm:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::invalid_argument(
                "pgm dataset needs 4 comma-separated paths: train_dir,train_manifest,test_dir,test_manifest",
            ));
        }
        (
            load_pgm_manifest(Path::new(parts[0]), Path::new(parts[1]))?,
            load_pgm_manifest(Path::new(parts[2]), Path::new(parts[3]))?,
            false,
        )
    } else {
        return Err(Error::invalid_argument(format!(
            "unknown dataset `{spec}` (expected mnist, synthetic, idx:..., pgm:...)"
        )));
    };
    if args.scale == Scale::Desk && subsettable {
        train = stratified_subset(&train, 600, SUBSET_SEED);
        test = stratified_subset(&test, 100, SUBSET_SEED + 1);
    }
    Ok((train, test))
}

fn load_prepared(args: &DatasetArgs, fraction: f64) -> Result<PreparedSplits, Error> {
    let (train, test) = load_raw(args)?;
    prepare_splits(&train, &test, fraction, SPLIT_SEED)
}

fn print_table(rows: &[TableRow]) {
    println!(
        "{:<12} {:>4} {:>9} {:>8} {:>9} {:>9}  star",
        "condition", "runs", "mean_acc", "std_acc", "mean_ce", "params"
    );
    for r in rows {
        println!(
            "{:<12} {:>4} {:>9.2} {:>8.2} {:>9.4} {:>9} {}",
            r.condition,
            r.runs,
            r.mean_acc,
            r.std_acc,
            r.mean_ce,
            r.params_features,
            if r.star { "   *" } else { "" }
        );
    }
}

fn cmd_train(args: TrainArgs) -> i32 {
    let conditions: Vec<Condition> = if args.condition == "all" {
        Condition::all()
    } else {
        match Condition::parse(&args.condition) {
            Ok(c) => vec![c],
            Err(e) => return fail(e),
        }
    };
    if args.seeds == 0 {
        return fail(Error::invalid_argument("--seeds must be at least 1"));
    }
    let cfg = TrainingConfig {
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size.max(1),
        t2b_mode: args.t2b_mode.into(),
        ..TrainingConfig::default()
    };
    let data = match load_prepared(&args.data, cfg.split_fraction) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return fail(e.into());
    }

    eprintln!(
        "training {} condition(s) x {} seed(s): {} train / {} val / {} test examples",
        conditions.len(),
        args.seeds,
        data.train.len(),
        data.val.len(),
        data.test.len()
    );

    let full = match run_matrix_full(&conditions, &data, &cfg, args.seed, args.seeds) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };

    let mut all_runs = Vec::new();
    for (cond, runs) in &full {
        for (r, net) in runs {
            let run_path = args.out.join(format!("run-{}-seed{}.json", cond, r.seed));
            if let Err(e) = crate::harness::write_run_json(r, &run_path) {
                return fail(e);
            }
            let ckpt_path = args.out.join(format!("checkpoint-{}-seed{}.json", cond, r.seed));
            if let Err(e) = net.save_checkpoint(&ckpt_path) {
                return fail(e);
            }
            all_runs.push(r.clone());
        }
    }

    let grouped: Vec<(Condition, Vec<crate::harness::RunResult>)> = full
        .into_iter()
        .map(|(c, runs)| (c, runs.into_iter().map(|(r, _)| r).collect()))
        .collect();
    let rows = aggregate_table(&grouped);
    print_table(&rows);
    let write = |name: &str, contents: String| -> Result<(), Error> {
        std::fs::write(args.out.join(name), contents)?;
        Ok(())
    };
    if let Err(e) = write("summary.csv", summary_csv(&rows))
        .and_then(|_| write("curves.csv", curves_csv(&all_runs)))
        .and_then(|_| write("updates.csv", updates_csv(&all_runs)))
    {
        return fail(e);
    }
    println!("results written to {}", args.out.display());
    0
}

fn cmd_evaluate(args: EvaluateArgs) -> i32 {
    let net = match Network::load_checkpoint(&args.checkpoint) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    let data = match load_prepared(&args.data, TrainingConfig::default().split_fraction) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    match crate::harness::evaluate(&net, &data.test) {
        Ok(m) => {
            println!("test_acc {:.4}", m.acc);
            println!("test_ce {:.6}", m.ce);
            0
        }
        Err(e) => fail(e),
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> i32 {
    let condition = match Condition::parse(&args.condition) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    // the exact tied derivative is what finite differences measure
    let net = match reduced_network_for(condition, T2bMode::Consistent, args.seed) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    let (images, targets) = gradcheck_inputs(2, net.input_size, net.output_classes(), args.seed + 1);
    match finite_difference_check(&net, &images, &targets, args.epsilon, args.tolerance) {
        Ok(report) => {
            println!(
                "gradcheck {} params {} max_rel_err {:.3e} tolerance {:.1e} {}",
                condition,
                report.checked,
                report.max_rel_error,
                report.tolerance,
                if report.passed { "PASS" } else { "FAIL" }
            );
            if report.passed {
                0
            } else {
                eprintln!("worst parameter: {}", report.worst);
                EXIT_CHECK
            }
        }
        Err(e) => fail(e),
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> i32 {
    let net = match Network::load_checkpoint(&args.checkpoint) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    let mut csv = String::from("layer,map,class,deviation,verdict\n");
    let mut gated = 0usize;
    let mut failures = 0usize;
    let mut conv_index = 0usize;
    for layer in &net.layers {
        let Layer::Conv(c) = layer else { continue };
        conv_index += 1;
        let map = match crate::symmetry::build_orbit_map(c.class, c.kernel_size) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        for (m, kernel) in c.kernels.iter().enumerate() {
            let w = match expand_with(kernel, &map) {
                Ok(w) => w,
                Err(e) => return fail(e),
            };
            let report = match spectral_phase_report(&w) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            csv.push_str(&format!(
                "{},{},{},{:.3e},{}\n",
                conv_index, m, c.class, report.deviation, report.verdict
            ));
            let expected = match c.class {
                SymmetryClass::T1 | SymmetryClass::T2A => Some(SpectralVerdict::SymmetricReal),
                SymmetryClass::T2B => Some(SpectralVerdict::AntisymmetricImaginary),
                SymmetryClass::R => None,
            };
            if let Some(want) = expected {
                gated += 1;
                if report.verdict != want {
                    failures += 1;
                }
            }
        }
    }
    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &csv) {
                return fail(e.into());
            }
        }
        None => print!("{csv}"),
    }
    eprintln!(
        "analyze-filters: {} kernels checked, {} constrained, {} failures",
        conv_index, gated, failures
    );
    if failures > 0 {
        EXIT_CHECK
    } else {
        0
    }
}

fn cmd_params(args: ParamsArgs) -> i32 {
    let condition = match Condition::parse(&args.condition) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let counts = count_network_parameters(condition);
    println!("condition {condition}");
    println!("feature_extraction {}", counts.features);
    println!("classifier {}", counts.classifier);
    println!("total {}", counts.total());
    let per: Vec<String> = SymmetryClass::ALL
        .iter()
        .map(|&c| format!("{c}={}", count_parameters(c, 5).expect("odd size")))
        .collect();
    println!("kernel_weights_5x5 {}", per.join(" "));
    0
}

fn cmd_compare(args: CompareArgs) -> i32 {
    if args.results.len() != 2 {
        return fail(Error::invalid_argument("--results needs exactly two paths"));
    }
    let a = match read_run_results(&args.results[0]) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let b = match read_run_results(&args.results[1]) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let label_a = a.first().map(|r| r.condition.clone()).unwrap_or_default();
    let label_b = b.first().map(|r| r.condition.clone()).unwrap_or_default();
    match compare_accuracies(&label_a, &a, &label_b, &b) {
        Ok(rep) => {
            println!("a {} n {} accs {:?}", rep.label_a, rep.samples_a.len(), rep.samples_a);
            println!("b {} n {} accs {:?}", rep.label_b, rep.samples_b.len(), rep.samples_b);
            println!("rank_sum {}", rep.rank_sum);
            println!("p_value {:.6}", rep.p_value);
            println!(
                "verdict {}",
                if rep.equivalent { "equivalent" } else { "different" }
            );
            if rep.degenerate {
                eprintln!("note: all observations identical; p forced to 1");
            }
            0
        }
        Err(e) => fail(e),
    }
}

