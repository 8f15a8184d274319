use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use envbal_core::dataset::{self, class_stats, DataFormat, LabelColumn};
use envbal_core::envelope::{plan_layers, CorrectionTarget};
use envbal_core::harness::{self, Classifier, ClassifierKind, HoldoutProtocol, ReportFile};
use envbal_core::metrics::Metric;
use envbal_core::mmd::KernelChoice;
use envbal_core::sampler::{self, BalanceConfig, Method};
use envbal_core::{Error, FcmConfig};

/// Exit codes: 0 success, 2 unreadable or malformed input, 3 invalid
/// configuration, 4 generation failure, 5 a test split lost a class.
#[derive(Parser)]
#[command(name = "envbal", version, about = "Envelope-instance oversampling for imbalanced binary datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print size, class counts, imbalance ratio and the layer plan.
    Inspect {
        input: PathBuf,
        #[command(flatten)]
        input_opts: InputOpts,
        #[arg(long, default_value_t = envbal_core::envelope::DEFAULT_T)]
        t: f64,
        #[arg(long, default_value_t = envbal_core::envelope::DEFAULT_LAYER_CAP)]
        layer_cap: usize,
    },
    /// Oversample the minority class and write the balanced dataset as CSV.
    Balance {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        input_opts: InputOpts,
        /// mifc-idmd, mifcm, smote or random.
        #[arg(long, default_value = "mifc-idmd")]
        method: String,
        #[command(flatten)]
        sampler: SamplerOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append a provenance column (original, generated:layer_N, duplicated, interpolated).
        #[arg(long)]
        provenance: bool,
        /// Balance in the input units instead of min-max scaled space.
        #[arg(long)]
        raw: bool,
    },
    /// Repeated stratified hold-out evaluation; writes a JSON report.
    Evaluate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        input_opts: InputOpts,
        /// Sampler name, or `none` to train on the imbalanced split.
        #[arg(long)]
        method: String,
        #[command(flatten)]
        sampler: SamplerOpts,
        #[arg(long, value_enum, default_value_t = ClassifierArg::Knn)]
        classifier: ClassifierArg,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        eta0: f64,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip min-max scaling of each split.
        #[arg(long)]
        raw: bool,
        /// Run repeats one after another instead of on the thread pool.
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Rank methods from several reports; Friedman test and Holm post-hoc.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "auc")]
        metric: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(Args)]
struct InputOpts {
    /// Input format; guessed from the extension (.dat = keel) when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// CSV label column: `last`, a 0-based index, or a header name.
    #[arg(long, default_value = "last")]
    label: String,
}

#[derive(Args)]
struct SamplerOpts {
    #[arg(long, default_value_t = envbal_core::envelope::DEFAULT_T)]
    t: f64,
    #[arg(long, default_value_t = envbal_core::envelope::DEFAULT_LAYER_CAP)]
    layer_cap: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Linear)]
    kernel: KernelArg,
    /// Rbf bandwidth; the median pairwise distance when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Correction target for each layer.
    #[arg(long, value_enum, default_value_t = TargetArg::LayerInput)]
    target: TargetArg,
    #[arg(long, default_value_t = 2.0)]
    m: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 5)]
    smote_k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Keel,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    LayerInput,
    Original,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Knn,
    LinearHinge,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Io { .. } | Error::Parse { .. } | Error::InvalidDataset(_) | Error::Report(_) => 2,
            Error::InvalidConfig(_) | Error::Shape(_) => 3,
            Error::Generation(_) => 4,
            Error::DegenerateSplit { .. } => 5,
            Error::Repeat { .. } => unreachable!("root unwraps repeat errors"),
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

type CmdResult = Result<(), Failure>;

fn load_input(path: &Path, opts: &InputOpts) -> Result<envbal_core::Dataset, Failure> {
    let Ok(label) = opts.label.parse::<LabelColumn>();
    let format = opts.format.map(|f| match f {
        FormatArg::Csv => DataFormat::Csv,
        FormatArg::Keel => DataFormat::Keel,
    });
    dataset::load(path, format, &label).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn balance_config(method: Method, opts: &SamplerOpts, seed: u64) -> BalanceConfig {
    BalanceConfig {
        method,
        t: opts.t,
        layer_cap: opts.layer_cap,
        kernel: match opts.kernel {
            KernelArg::Linear => KernelChoice::Linear,
            KernelArg::Rbf => KernelChoice::Rbf {
                bandwidth: opts.bandwidth,
            },
        },
        correction_target: match opts.target {
            TargetArg::LayerInput => CorrectionTarget::LayerInput,
            TargetArg::Original => CorrectionTarget::Original,
        },
        fcm: FcmConfig {
            m: opts.m,
            epsilon: opts.eps,
            max_iterations: opts.max_iter,
            seed,
        },
        smote_k: opts.smote_k,
        seed,
    }
}

fn inspect(input: &Path, opts: &InputOpts, t: f64, layer_cap: usize) -> CmdResult {
    let ds = load_input(input, opts)?;
    let stats = class_stats(&ds);
    println!(
        "n={} d={} min={} maj={} IR={:.2}",
        ds.n(),
        ds.d(),
        stats.min_count,
        stats.maj_count,
        stats.ir
    );
    println!(
        "minority={} majority={}",
        ds.class_name(stats.minority),
        ds.class_name(stats.majority())
    );
    if stats.deficit() == 0 {
        println!("plan: none (classes balanced)");
    } else {
        let plan = plan_layers(stats.min_count, stats.maj_count, t, layer_cap)?;
        println!("plan: {plan}");
    }
    Ok(())
}

fn balance_cmd(
    input: &Path,
    out: &Path,
    opts: &InputOpts,
    sampler_opts: &SamplerOpts,
    method: Method,
    seed: u64,
    provenance: bool,
    raw: bool,
) -> CmdResult {
    let ds = load_input(input, opts)?;
    let cfg = balance_config(method, sampler_opts, seed);
    let balanced = if raw {
        sampler::balance(&ds, &cfg)?
    } else {
        sampler::balance_scaled(&ds, &cfg)?
    };
    if let Some(notice) = &balanced.notice {
        eprintln!("{notice}");
    }
    let tags: Vec<String> = balanced.provenance.iter().map(|p| p.to_string()).collect();
    let file = File::create(out).map_err(|e| io_failure(out, e))?;
    let mut w = BufWriter::new(file);
    dataset::write_csv(&balanced.dataset, &mut w, provenance.then_some(("provenance", tags.as_slice())))?;
    w.flush().map_err(|e| io_failure(out, e))?;

    let stats = class_stats(&balanced.dataset);
    println!(
        "method={} n={} generated={} counts={}/{}",
        method,
        balanced.dataset.n(),
        balanced.generated_count(),
        stats.min_count,
        stats.maj_count
    );
    if let Some(plan) = &balanced.plan {
        println!("plan: {plan}");
    }
    for d in &balanced.layers {
        println!(
            "layer {}: input={} clusters={} mmd_before={:.6e} mmd_after={:.6e}",
            d.layer, d.input_size, d.clusters, d.mmd_before, d.mmd_after
        );
    }
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn evaluate_cmd(
    inputs: &[PathBuf],
    opts: &InputOpts,
    balance: Option<BalanceConfig>,
    clf: Classifier,
    proto: HoldoutProtocol,
    report: &Path,
) -> CmdResult {
    let mut entries = Vec::new();
    for input in inputs {
        let ds = load_input(input, opts)?;
        entries.push(harness::holdout_evaluate(
            &dataset_name(input),
            &ds,
            balance.as_ref(),
            &clf,
            &proto,
        )?);
    }
    let file = ReportFile::new(harness::method_label(balance.as_ref()), entries);
    file.write(report)?;

    let width = file.entries.iter().map(|e| e.dataset.len()).max().unwrap_or(0).max(7);
    print!("{:<width$}  {:<10}", "dataset", "method");
    for m in Metric::REPORTED {
        print!("  {:<13}", m.label());
    }
    println!();
    for e in &file.entries {
        print!("{:<width$}  {:<10}", e.dataset, e.method);
        for m in Metric::REPORTED {
            print!("  {:<13}", e.summary.get(m).to_string());
        }
        println!();
    }
    Ok(())
}

fn compare_cmd(paths: &[PathBuf], metric: &str, alpha: f64) -> CmdResult {
    let metric: Metric = metric.parse()?;
    let mut reports = paths.iter().map(ReportFile::read).collect::<Result<Vec<_>, _>>()?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for r in &reports {
        *seen.entry(r.method.clone()).or_default() += 1;
    }
    // Same method label in several files: tell them apart by file name.
    for (r, p) in reports.iter_mut().zip(paths) {
        if seen[&r.method] > 1 {
            r.method = format!("{} ({})", r.method, dataset_name(p));
        }
    }
    let c = harness::compare_methods(&reports, metric, alpha)?;
    let width = c.table.methods.iter().map(String::len).max().unwrap_or(0).max(6);
    println!(
        "metric={} methods={} datasets={}",
        metric.label(),
        c.table.n_methods(),
        c.table.n_datasets()
    );
    println!("{:<width$}  mean_rank", "method");
    for (m, r) in c.table.methods.iter().zip(&c.mean_ranks) {
        println!("{m:<width$}  {r:.4}");
    }
    println!(
        "friedman statistic={:.4} df={} p={:.4}",
        c.friedman.statistic, c.friedman.df, c.friedman.p_value
    );
    println!("holm control={} alpha={}", c.best, c.alpha);
    for p in &c.posthoc {
        println!(
            "{:<width$}  p={:.4}  {}",
            p.method,
            p.p_value,
            if p.reject { "reject" } else { "retain" }
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Inspect {
            input,
            input_opts,
            t,
            layer_cap,
        } => inspect(&input, &input_opts, t, layer_cap),
        Command::Balance {
            input,
            out,
            input_opts,
            method,
            sampler,
            seed,
            provenance,
            raw,
        } => {
            let method: Method = method.parse()?;
            balance_cmd(&input, &out, &input_opts, &sampler, method, seed, provenance, raw)
        }
        Command::Evaluate {
            inputs,
            input_opts,
            method,
            sampler,
            classifier,
            k,
            lambda,
            epochs,
            eta0,
            repeats,
            train_fraction,
            seed,
            raw,
            serial,
            report,
        } => {
            let balance = match method.as_str() {
                "none" => None,
                m => Some(balance_config(m.parse()?, &sampler, seed)),
            };
            let clf = Classifier {
                kind: match classifier {
                    ClassifierArg::Knn => ClassifierKind::Knn,
                    ClassifierArg::LinearHinge => ClassifierKind::LinearHinge,
                },
                knn_k: k,
                lambda,
                epochs,
                eta0,
                seed,
            };
            let proto = HoldoutProtocol {
                repeats,
                train_fraction,
                master_seed: seed,
                normalize: !raw,
                parallel: !serial,
            };
            evaluate_cmd(&inputs, &input_opts, balance, clf, proto, &report)
        }
        Command::Compare { reports, metric, alpha } => compare_cmd(&reports, &metric, alpha),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
