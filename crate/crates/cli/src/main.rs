use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arclength::autodiff::{grad_check, operator_suite};
use arclength::config::{normalize_key, read_key_values};
use arclength::datagen::{self, analytic_parts, DatasetSplits, GenSpec};
use arclength::eval::{self, ChordSum, Metrics, RobustnessReport};
use arclength::geometry::{analytic_length, polyline_length, sample, AnalyticSine, Isometry, Point2, SampledCurve};
use arclength::models::{self, Model, ModelKind};
use arclength::training::{self, triple_loss_with_grads, TrainConfig};
use arclength::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(name = "arclen", version, about = "Learn and evaluate arc length estimators for sampled curves")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of curve triples.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the holdout set and run the axiom checks.
    Eval(EvalArgs),
    /// Noise and subsampling robustness tables.
    Robust(RobustArgs),
    /// Check model gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Exact length, chord length and discretization error of one curve.
    Oracle(OracleArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct GenArgs {
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; `.json` writes JSON, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    amplitude_min: Option<f64>,
    #[arg(long)]
    amplitude_max: Option<f64>,
    #[arg(long)]
    phase_min: Option<f64>,
    #[arg(long)]
    phase_max: Option<f64>,
    #[arg(long)]
    rotation_min: Option<f64>,
    #[arg(long)]
    rotation_max: Option<f64>,
    #[arg(long)]
    translation_min: Option<f64>,
    #[arg(long)]
    translation_max: Option<f64>,
    #[arg(long)]
    span_min: Option<f64>,
    #[arg(long)]
    span_max: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// arclengthnet (default) or lstm.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV (default: checkpoint path with `.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use only the first N training (and test) triples.
    #[arg(long)]
    examples_limit: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    conv_channels: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    fc_hidden: Option<usize>,
    /// Subtract the curve centroid before the network.
    #[arg(long)]
    center_input: Option<bool>,
    /// Factor applied to the coordinates before the network.
    #[arg(long)]
    input_scale: Option<f64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `(true_length, predicted_length)` CSV of every holdout curve.
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Axiom statistics CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seed for the random isometries.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RobustArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.05, 0.1])]
    sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
    factors: Vec<usize>,
    #[arg(long, default_value = "noise.csv")]
    noise_out: PathBuf,
    #[arg(long, default_value = "subsample.csv")]
    subsample_out: PathBuf,
    /// Use only the first N holdout triples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// arclengthnet or lstm; both when omitted.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct OracleArgs {
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    /// Parameter interval is [lo, lo + span].
    #[arg(long, default_value_t = std::f64::consts::TAU)]
    span: f64,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// CSV of `x,y` rows; prints only its chord length.
    #[arg(long, conflicts_with_all = ["a", "phi", "span", "lo", "n"])]
    curve: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    GradCheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global thread pool is set once");
    }
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Robust(a) => run_robust(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Oracle(a) => run_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::GradCheck(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_GRADCHECK)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidArgument(_) => EXIT_VALIDATION,
                Error::Io(_) | Error::Malformed(_) | Error::VersionMismatch { .. } => EXIT_IO,
                Error::Divergence { .. } => EXIT_DIVERGENCE,
            })
        }
    }
}

fn print_config(title: &str, body: &dyn std::fmt::Display) {
    println!("# {title}");
    for line in body.to_string().lines() {
        println!("  {line}");
    }
}

/// Collects `--flag value` pairs that were given, as config keys.
macro_rules! overrides {
    ($args:expr; $($field:ident),* $(,)?) => {{
        let mut v: Vec<(String, String)> = Vec::new();
        $(if let Some(x) = &$args.$field {
            v.push((stringify!($field).to_string(), x.to_string()));
        })*
        v
    }};
}

fn layered<F>(config: Option<&Path>, flags: Vec<(String, String)>, mut set: F) -> arclength::Result<()>
where
    F: FnMut(&str, &str) -> arclength::Result<()>,
{
    if let Some(path) = config {
        for (k, v) in read_key_values(path)? {
            set(&k, &v)?;
        }
    }
    for (k, v) in flags {
        set(&normalize_key(&k), &v)?;
    }
    Ok(())
}

fn quantiles(mut values: Vec<f64>) -> [f64; 5] {
    values.sort_by(f64::total_cmp);
    let at = |q: f64| values[((values.len() - 1) as f64 * q).round() as usize];
    [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)]
}

fn run_gen(args: GenArgs) -> CliResult {
    let mut spec = GenSpec::default();
    let flags = overrides!(args; examples, points, holdout, train_fraction, seed,
        amplitude_min, amplitude_max, phase_min, phase_max, rotation_min, rotation_max,
        translation_min, translation_max, span_min, span_max);
    layered(args.config.as_deref(), flags, |k, v| spec.set(k, v))?;
    spec.validate()?;
    print_config("dataset", &spec);

    let splits = datagen::generate(&spec)?;
    datagen::save(&splits, &args.out)?;

    let [min, q1, med, q3, max] = quantiles(splits.all().map(|t| t.len1).collect());
    println!("train {}  test {}  holdout {}", splits.train.len(), splits.test.len(), splits.holdout.len());
    println!("len1 quantiles: min {min:.4}  q25 {q1:.4}  median {med:.4}  q75 {q3:.4}  max {max:.4}");
    println!("spec hash {}", spec.hash());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> CliResult {
    let data = datagen::load(&args.data)?;
    let mut config = TrainConfig::new(ModelKind::ArcLengthNet);
    let flags = overrides!(args; batch_size, epochs, learning_rate, momentum, weight_decay,
        lambda, seed, conv_channels, lstm_hidden, fc_hidden, center_input, input_scale);
    layered(args.config.as_deref(), flags, |k, v| config.set(k, v))?;
    if let Some(kind) = args.model {
        config.model.kind = kind;
    }
    config.model.n_points = data.spec.points_per_curve;

    let limit = args.examples_limit.unwrap_or(usize::MAX);
    let train_set = &data.train[..data.train.len().min(limit)];
    let test_set = &data.test[..data.test.len().min(limit)];
    if config.batch_size > train_set.len() && !train_set.is_empty() {
        println!(
            "note: batch size {} exceeds {} training triples; using {}",
            config.batch_size,
            train_set.len(),
            train_set.len()
        );
        config.batch_size = train_set.len();
    }
    config.validate()?;
    print_config("training", &config);
    println!("  train_triples = {}", train_set.len());
    println!("  test_triples = {}", test_set.len());
    println!("  data_spec_hash = {}", data.spec.hash());

    let model = Model::init(config.model.clone(), config.rng_seed)?;
    let quiet = args.quiet;
    let (model, log) = training::train_from(model, train_set, test_set, &config, |r| {
        if !quiet {
            let test = r.test_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            println!("epoch {:>4}  train {:.6}  test {}  ({:.1}s)", r.epoch, r.train_loss, test, r.seconds);
        }
    })?;

    models::save_checkpoint(&args.out, &model, &data.spec.hash())?;
    let log_path = args.log.unwrap_or_else(|| args.out.with_extension("csv"));
    log.save_csv(&log_path)?;
    if let Some(last) = log.records.last() {
        let test = last.test_loss.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        println!("final train loss {}  test loss {}", last.train_loss, test);
    }
    println!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn load_pair(checkpoint: &Path, data: &Path) -> Result<(Model, DatasetSplits), Failure> {
    let (model, meta) = models::load_checkpoint(checkpoint)?;
    let data = datagen::load(data)?;
    if meta.data_spec_hash != data.spec.hash() {
        println!("note: checkpoint was trained on a dataset with a different spec");
    }
    if data.holdout.is_empty() {
        return Err(Error::InvalidArgument("dataset has no holdout triples".into()).into());
    }
    print_config("model", &format!("kind = {}\ncheckpoint = {}", model.config.kind, checkpoint.display()));
    print_config("dataset", &data.spec);
    Ok((model, data))
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label:<22} mse {:.6}  rmse {:.6}  rmlr {:.6}  mean length {:.4}  n {}",
        m.mse, m.rmse, m.rmlr, m.mean_true_length, m.n
    );
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run_eval(args: EvalArgs) -> CliResult {
    let (model, data) = load_pair(&args.checkpoint, &args.data)?;
    println!("  isometry_seed = {}", args.seed);

    let per_curve = eval::per_curve_examples(&data.holdout);
    print_metrics("holdout (all curves)", &eval::evaluate(&model, &per_curve)?);
    print_metrics("holdout (s1 only)", &eval::evaluate(&model, &eval::s1_examples(&data.holdout))?);
    print_metrics("chord sum (all curves)", &eval::evaluate(&ChordSum, &per_curve)?);

    let report = eval::axiom_suite(&model, &data.holdout, &data.spec, args.seed)?;
    let verdict = |p: bool| if p { "pass" } else { "FAIL" };
    let a = &report.additivity;
    println!(
        "additivity      residual mean {:+.5}  std {:.5}  relative mean |r| {:.5}  {}",
        a.residual.mean,
        a.residual.std,
        a.relative_mean_abs,
        verdict(a.passed)
    );
    let i = &report.invariance;
    println!(
        "invariance      spread mean {:.5}  max {:.5}  max relative {:.5}  {}",
        i.spread.mean,
        i.spread.max,
        i.relative_spread.max,
        verdict(i.passed)
    );
    let n = &report.non_negativity;
    println!("non-negativity  negative fraction {}  {}", n.negative_fraction, verdict(n.passed));
    let m = &report.monotonicity;
    let show = |v: Option<f64>| v.map(|x| format!("{x:.5}")).unwrap_or_else(|| "undefined".into());
    println!(
        "monotonicity    pearson {}  slope {}  intercept {}  {}",
        show(m.pearson),
        show(m.slope),
        show(m.intercept),
        verdict(m.passed)
    );
    println!("(axiom thresholds are harness choices)");

    if let Some(path) = &args.scatter {
        let (truth, pred): (Vec<f64>, Vec<f64>) = report.scatter.iter().copied().unzip();
        let mut w = create(path)?;
        eval::write_scatter(&mut w, &truth, &pred)?;
        w.flush()?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.report {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_robust(args: RobustArgs) -> CliResult {
    let (model, data) = load_pair(&args.checkpoint, &args.data)?;
    let holdout = &data.holdout[..data.holdout.len().min(args.limit.unwrap_or(usize::MAX))];
    println!("  holdout_triples = {}", holdout.len());
    println!("  sigmas = {:?}", args.sigmas);
    println!("  factors = {:?}", args.factors);
    println!("  noise_seed = {}", args.seed);

    let per_curve = eval::per_curve_examples(holdout);
    let clean = eval::evaluate(&model, &per_curve)?;
    print_metrics("clean", &clean);

    let mut analytic: Vec<(AnalyticSine, f64)> = Vec::with_capacity(3 * holdout.len());
    for t in holdout {
        let parts = analytic_parts(&data.spec, t)?;
        analytic.extend(parts.into_iter().zip([t.len1, t.len2, t.len3]));
    }
    let report = RobustnessReport {
        noise: eval::noise_robustness(&model, &per_curve, &args.sigmas, args.seed)?,
        subsample: eval::subsample_robustness(&model, &analytic, data.spec.points_per_curve, &args.factors)?,
    };

    println!("sigma     model rmlr  model bias  chord rmlr  chord bias");
    for r in &report.noise {
        println!(
            "{:<8}  {:>10.6}  {:>+10.5}  {:>10.6}  {:>+10.5}",
            r.sigma, r.model.rmlr, r.model_mean_bias, r.chord.rmlr, r.chord_mean_bias
        );
    }
    println!("factor  points  model mse   model rmlr");
    for r in &report.subsample {
        println!("{:<6}  {:>6}  {:>10.6}  {:>10.6}", r.factor, r.coarse_points, r.model.mse, r.model.rmlr);
    }

    let mut w = create(&args.noise_out)?;
    report.write_noise_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&args.subsample_out)?;
    report.write_subsample_csv(&mut w)?;
    w.flush()?;
    println!("wrote {} and {}", args.noise_out.display(), args.subsample_out.display());
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> CliResult {
    let kinds = match args.model {
        Some(k) => vec![k],
        None => vec![ModelKind::ArcLengthNet, ModelKind::LstmNet],
    };
    print_config(
        "gradcheck",
        &format!(
            "models = {:?}\nseed = {}\nepsilon = {}\ntolerance = {}\nlambda = {}",
            kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
            args.seed,
            args.epsilon,
            args.tolerance,
            args.lambda
        ),
    );
    let spec = GenSpec {
        n_examples: 1,
        holdout_size: 0,
        rng_seed: args.seed,
        ..GenSpec::default()
    };
    let triple = datagen::generate(&spec)?.train.remove(0);

    let mut failed = Vec::new();
    for (name, report) in operator_suite(args.seed, args.epsilon, args.tolerance)? {
        println!(
            "op {name:<14} coords {:>3}  max relative error {:.3e}  {}",
            report.coordinates,
            report.max_relative_error,
            if report.passed { "pass" } else { "FAIL" }
        );
        if !report.passed {
            failed.push(name.to_string());
        }
    }
    for kind in kinds {
        let config = TrainConfig::new(kind).model;
        let store = models::init(&config, args.seed)?;
        let report = grad_check(
            &store,
            |s| triple_loss_with_grads(&config, s, &triple, args.lambda),
            args.epsilon,
            args.tolerance,
        )?;
        let worst = report
            .worst
            .as_ref()
            .map(|(name, i)| format!("{name}[{i}]"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{kind:<13} coords {:>6}  max relative error {:.3e} at {worst} (analytic {:.6e}, numeric {:.6e})  {}",
            report.coordinates,
            report.max_relative_error,
            report.worst_analytic,
            report.worst_numeric,
            if report.passed { "pass" } else { "FAIL" }
        );
        if !report.passed {
            failed.push(kind.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::GradCheck(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn read_curve_csv(path: &Path) -> arclength::Result<SampledCurve> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let parsed = (cols.next(), cols.next(), cols.next());
        let point = match parsed {
            (Some(x), Some(y), None) => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match point {
            Some((x, y)) => points.push(Point2::new(x, y)),
            // A non-numeric first line is taken as a header.
            None if points.is_empty() && i == 0 => {}
            None => return Err(Error::Malformed(format!("{}:{}: expected `x,y`", path.display(), i + 1))),
        }
    }
    SampledCurve::new(points)
}

fn run_oracle(args: OracleArgs) -> CliResult {
    if let Some(path) = &args.curve {
        let curve = read_curve_csv(path)?;
        print_config("oracle", &format!("curve = {}\npoints = {}", path.display(), curve.len()));
        println!("chord length {:.12}", polyline_length(&curve));
        return Ok(());
    }
    print_config(
        "oracle",
        &format!("a = {}\nphi = {}\ninterval = [{}, {}]\nn = {}", args.a, args.phi, args.lo, args.lo + args.span, args.n),
    );
    let curve = AnalyticSine::new(args.a, args.phi, Isometry::identity(), (args.lo, args.lo + args.span))?;
    let exact = analytic_length(&curve, curve.interval())?;
    let chord = polyline_length(&sample(&curve, args.n)?);
    println!("analytic length        {exact:.12}");
    println!("chord length           {chord:.12}");
    println!("discretization error   {:.6e}", exact - chord);
    Ok(())
}
