mod config;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use polyformer::basis::BasisKind;
use polyformer::cache::{read_token_cache, write_token_cache};
use polyformer::graph::{grid_graph, load_edge_list};
use polyformer::io::{read_features_csv, read_labels_csv, read_targets_csv};
use polyformer::model::{write_checkpoint, ModelSpec, Trainable};
use polyformer::synth::{
    cluster_learned_filters, fit_task_with_tokens, lambda_grid, make_synthetic_task, smooth_signal, task_tokens,
    uniform_signal, write_alpha_csv, write_curves_csv, write_task_csv, FitModel, ResponseBasis, TaskName,
    CURVE_POINTS,
};
use polyformer::tokens::compute_tokens;
use polyformer::train::{predict_nodes, split_nodes, token_batch, train_loop, write_history_csv, Targets};
use polyformer::verify::{run_suite, Suite, VerifyOptions};
use polyformer::Error;

use config::{SynthRun, TrainRun};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Input(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::ConfigMismatch(_) => CliError::Mismatch(msg),
            Error::Numerical(_) | Error::NoConvergence { .. } | Error::Autodiff(_) => CliError::Numerical(msg),
            _ => CliError::Input(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "polyformer", version, about = "Polynomial token filtering lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Precompute a token cache from an edge list and node features.
    Tokens {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_parser = parse_basis)]
        basis: BasisKind,
        #[arg(long = "K", alias = "k")]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cheb_shifted: bool,
    },
    /// Train a model on cached tokens.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a two-regime synthetic filtering task.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        /// Grid size as WxH.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, value_parser = parse_basis)]
        basis: Option<BasisKind>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `uniform`, `smooth` or a one-column CSV of values in [0, 1].
        #[arg(long)]
        signal: Option<String>,
        #[arg(long)]
        cheb_shifted: Option<bool>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb one token before the oracle comparison.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn parse_basis(s: &str) -> Result<BasisKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn with_path(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// A first line with any non-numeric field is a header.
fn has_header(path: &Path) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    Ok(first.split(',').any(|f| f.trim().parse::<f64>().is_err()))
}

fn record(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn cmd_tokens(
    graph: &Path,
    features: &Path,
    basis: BasisKind,
    order: usize,
    out: &Path,
    cheb_shifted: bool,
) -> Result<(), CliError> {
    let start = Instant::now();
    let x = read_features_csv(open(features)?, has_header(features)?).map_err(with_path(features))?;
    let g = load_edge_list(open(graph)?, Some(x.rows())).map_err(with_path(graph))?;
    let t = compute_tokens(&g, &x, basis, order, cheb_shifted)?;
    for w in t.warnings() {
        eprintln!("warning: {w}");
    }
    write_token_cache(&t, out).map_err(with_path(out))?;
    println!(
        "{}",
        record(&[
            ("n", t.n_nodes().to_string()),
            ("k", t.order().to_string()),
            ("d", t.dim().to_string()),
            ("basis", basis.short_name().to_string()),
            ("nnz", g.adjacency().nnz().to_string()),
            ("wall_ms", start.elapsed().as_millis().to_string()),
        ])
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: &Path,
    tokens: Option<PathBuf>,
    labels: Option<PathBuf>,
    seed: Option<u64>,
    lr: Option<f64>,
    epochs: Option<usize>,
    patience: Option<usize>,
    batch_size: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mut run: TrainRun = config::load(config)?;
    if tokens.is_some() {
        run.tokens = tokens;
    }
    if labels.is_some() {
        run.labels = labels;
    }
    if let Some(s) = seed {
        run.train.seed = s;
        run.model.seed = s;
    }
    if let Some(v) = lr {
        run.train.lr = v;
    }
    if let Some(v) = epochs {
        run.train.max_epochs = v;
    }
    if let Some(v) = patience {
        run.train.patience = v;
    }
    if batch_size.is_some() {
        run.train.batch_size = batch_size;
    }
    run.model.validate()?;
    run.train.validate()?;
    let tokens_path = run.tokens.clone().ok_or_else(|| CliError::Input("no token cache given".into()))?;
    let labels_path = run.labels.clone().ok_or_else(|| CliError::Input("no labels given".into()))?;

    let t = read_token_cache(&tokens_path).map_err(with_path(&tokens_path))?;
    let m = &run.model;
    if t.basis() != m.basis || t.order() != m.order || t.dim() != m.input_dim || t.cheb_shifted() != m.cheb_shifted {
        return Err(CliError::Mismatch(format!(
            "cache holds {} K={} d={} shifted={}, config expects {} K={} d={} shifted={}",
            t.basis().short_name(),
            t.order(),
            t.dim(),
            t.cheb_shifted(),
            m.basis.short_name(),
            m.order,
            m.input_dim,
            m.cheb_shifted
        )));
    }
    let n = t.n_nodes();
    let targets = if m.classes == 1 {
        let values = read_targets_csv(open(&labels_path)?, n).map_err(with_path(&labels_path))?;
        Targets::Regression { values, width: 1 }
    } else {
        let labels = read_labels_csv(open(&labels_path)?, n).map_err(with_path(&labels_path))?;
        if let Some(bad) = labels.iter().find(|l| **l >= m.classes) {
            return Err(CliError::Input(format!("label {bad} outside 0..{}", m.classes)));
        }
        Targets::Classes {
            labels,
            classes: m.classes,
        }
    };
    let s = &run.split;
    let masks = split_nodes(n, (s.train, s.val, s.test), s.seed)?;

    create_dir(out)?;
    config::save(&run, &out.join("config.toml"))?;
    let batch = token_batch(&t);
    let mut model = ModelSpec::PolyFormer(run.model.clone()).build()?;
    let outcome = train_loop(&mut model, &batch, &targets, &masks, &run.train)?;
    write_checkpoint(&model, out.join("model.pfm")).map_err(with_path(out))?;
    let hist_path = out.join("history.csv");
    let hist = File::create(&hist_path).map_err(|e| CliError::Input(format!("{}: {e}", hist_path.display())))?;
    write_history_csv(&outcome.history, hist)?;

    let test_nodes = masks.test_nodes();
    let test = if test_nodes.is_empty() {
        "none".to_string()
    } else {
        let pred = predict_nodes(&model, &batch, &test_nodes)?;
        format!("{:.6}", targets.metric(&pred, &test_nodes)?)
    };
    println!(
        "{}",
        record(&[
            ("best_epoch", outcome.best_epoch.to_string()),
            ("best_val", format!("{:.6}", outcome.best_val)),
            ("test", test),
            ("epochs", outcome.history.len().to_string()),
            ("stopped_early", outcome.stopped_early.to_string()),
            ("params", model.n_params().to_string()),
        ])
    );
    Ok(())
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Input(format!("grid {s:?} is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

fn load_signal(run: &SynthRun) -> Result<Vec<f64>, CliError> {
    let n = run.width * run.height;
    match run.signal.as_str() {
        "uniform" => Ok(uniform_signal(n, run.signal_seed)),
        "smooth" => Ok(smooth_signal(run.width, run.height, run.signal_seed)),
        path => {
            let path = Path::new(path);
            let m = read_features_csv(open(path)?, has_header(path)?).map_err(with_path(path))?;
            if m.shape() != (n, 1) {
                return Err(CliError::Input(format!(
                    "{}: {} x {} values for a {}x{} grid",
                    path.display(),
                    m.rows(),
                    m.cols(),
                    run.width,
                    run.height
                )));
            }
            Ok(m.into_vec())
        }
    }
}

fn save_csv(path: PathBuf, f: impl FnOnce(File) -> polyformer::Result<()>) -> Result<(), CliError> {
    let file = File::create(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    f(file).map_err(with_path(&path))
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    config: Option<PathBuf>,
    task: Option<String>,
    grid: Option<String>,
    basis: Option<BasisKind>,
    model: Option<String>,
    epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    signal: Option<String>,
    cheb_shifted: Option<bool>,
    clusters: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mut run = match &config {
        Some(p) => config::load(p)?,
        None => SynthRun::default(),
    };
    if let Some(t) = task {
        run.task = t.parse::<TaskName>()?;
    }
    if let Some(g) = grid {
        (run.width, run.height) = parse_grid(&g)?;
    }
    if let Some(b) = basis {
        run.fit.basis = b;
    }
    if let Some(m) = model {
        run.model = m.parse::<FitModel>()?;
    }
    if let Some(e) = epochs {
        run.fit.train.max_epochs = e;
        run.fit.train.patience = run.fit.train.patience.min(e);
    }
    if let Some(p) = patience {
        run.fit.train.patience = p;
    }
    if let Some(s) = seed {
        run.fit.train.seed = s;
        run.signal_seed = s;
    }
    if let Some(s) = signal {
        run.signal = s;
    }
    if let Some(c) = cheb_shifted {
        run.fit.cheb_shifted = c;
    }
    if let Some(k) = clusters {
        run.clusters = k;
    }
    if run.width == 0 || run.height == 0 {
        return Err(CliError::Input("grid sides must be positive".into()));
    }
    run.fit.train.validate()?;

    let g = grid_graph(run.width, run.height)?;
    let x = load_signal(&run)?;
    let task = make_synthetic_task(&g, &x, run.task)?;
    for w in &task.warnings {
        eprintln!("warning: {w}");
    }
    create_dir(out)?;
    config::save(&run, &out.join("config.toml"))?;
    save_csv(out.join("task.csv"), |f| write_task_csv(&task, f))?;

    let tokens = task_tokens(&task, run.fit.basis, run.fit.order, run.fit.cheb_shifted)?;
    let res = fit_task_with_tokens(&task, &tokens, run.model, &run.fit)?;
    save_csv(out.join("alpha.csv"), |f| write_alpha_csv(&res.alpha, f))?;
    let k = run.clusters.min(task.n_nodes());
    let mut pairs = vec![
        ("task", run.task.to_string()),
        ("model", format!("{:?}", run.model).to_lowercase()),
        ("basis", run.fit.basis.short_name().to_string()),
        ("r2", format!("{:.6}", res.r2)),
        ("sse", format!("{:.6}", res.sse)),
        ("params", res.n_params.to_string()),
        ("epochs", res.outcome.history.len().to_string()),
        ("best_epoch", res.outcome.best_epoch.to_string()),
    ];
    if k > 0 {
        let grid = lambda_grid(CURVE_POINTS);
        let clusters = cluster_learned_filters(&res.alpha, k, ResponseBasis::of_tokens(&tokens), &grid, run.fit.train.seed)?;
        save_csv(out.join("curves.csv"), |f| write_curves_csv(&clusters, f))?;
        pairs.push(("curve_gap", format!("{:.6}", clusters.max_pairwise_gap())));
    }
    println!("{}", record(&pairs));
    Ok(())
}

fn cmd_verify(suite: &str, seed: u64, inject_fault: bool) -> Result<(), CliError> {
    let suite: Suite = suite.parse()?;
    let start = Instant::now();
    let report = run_suite(suite, &VerifyOptions { seed, inject_fault });
    for c in &report.checks {
        println!(
            "check={} suite={} status={} ms={:.3} {}",
            c.name,
            c.suite,
            if c.passed { "pass" } else { "FAIL" },
            c.elapsed.as_secs_f64() * 1e3,
            c.detail
        );
    }
    let failed: Vec<&str> = report.failures().iter().map(|c| c.name).collect();
    println!(
        "{}",
        record(&[
            ("suite", suite.to_string()),
            ("passed", (report.checks.len() - failed.len()).to_string()),
            ("failed", failed.len().to_string()),
            ("ms", format!("{:.1}", start.elapsed().as_secs_f64() * 1e3)),
        ])
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Tokens {
            graph,
            features,
            basis,
            order,
            out,
            cheb_shifted,
        } => cmd_tokens(&graph, &features, basis, order, &out, cheb_shifted),
        Command::Train {
            config,
            tokens,
            labels,
            seed,
            lr,
            epochs,
            patience,
            batch_size,
            out,
        } => cmd_train(&config, tokens, labels, seed, lr, epochs, patience, batch_size, &out),
        Command::Synth {
            config,
            task,
            grid,
            basis,
            model,
            epochs,
            patience,
            seed,
            signal,
            cheb_shifted,
            clusters,
            out,
        } => cmd_synth(
            config, task, grid, basis, model, epochs, patience, seed, signal, cheb_shifted, clusters, &out,
        ),
        Command::Verify {
            suite,
            seed,
            inject_fault,
        } => cmd_verify(&suite, seed, inject_fault),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
