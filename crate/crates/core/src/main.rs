//! Command-line front end: `glime explain`, `glime stability`, `glime export`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use glime::data::{compute_stats, load_csv, split, FeatureStats, TabularDataset};
use glime::explanation::{ExplanationGraph, FeatureRanking};
use glime::export::{export_graph, render, ExportFormat};
use glime::glasso::SolverOptions;
use glime::perturbation::{KernelWidth, PerturbationConfig};
use glime::pipeline::{explain_instance, stability_study, ExplainConfig, GlassoSettings, RunOutput};
use glime::predictor::{KernelClassifierConfig, Predictor};
use glime::stability::ComparisonSummary;
use glime::{Error, Result};

#[derive(Parser)]
#[command(name = "glime", version, about = "Graphical local explanations for tabular classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one test-split instance.
    Explain(RunArgs),
    /// Repeat explanations per observation and compare method stability.
    Stability(StabilityArgs),
    /// Re-export a saved explanation JSON as DOT, GraphML or JSON.
    Export(ExportArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Every field can come from `--config` (flat JSON with the same names, using
/// underscores) and is overridden by the flag when both are given.
#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct RunArgs {
    /// Flat JSON configuration file.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// CSV dataset with a header row.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Name of the 0/1 target column.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    /// External predictor command (line protocol on stdin/stdout). The
    /// built-in kernel classifier is trained when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    predictor_cmd: Option<String>,
    /// RBF bandwidth of the built-in classifier (default 1/p).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_rbf: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l2_penalty: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_max_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split_seed: Option<u64>,
    /// Row index within the test split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    instance: Option<usize>,
    /// Number of perturbed samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// `auto` or a positive number.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_width: Option<KernelWidth>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_size: Option<usize>,
    /// lambda_min / lambda_max.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<f64>,
    /// EBIC gamma in [0, 0.5].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    /// Duality-gap tolerance of the graphical lasso.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<usize>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    penalize_diagonal: bool,
    /// Ignore the kernel weights when estimating the correlation matrix.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    unweighted: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_threshold: Option<f64>,
    /// Ridge penalty of the linear surrogate baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge_penalty: Option<f64>,
    /// Edges with |w| below this are left out of DOT output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    viz_threshold: Option<f64>,
    /// Comma-separated graph formats: dot, graphml, json.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    formats: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated test-split row indices.
    #[arg(long, value_delimiter = ',', conflicts_with = "random")]
    observations: Vec<usize>,
    /// Pick this many distinct test rows at random.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    select_seed: u64,
    /// Explanation runs per observation.
    #[arg(long, default_value_t = 10)]
    runs: usize,
}

#[derive(Args)]
struct ExportArgs {
    /// Explanation JSON written by `glime explain`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: ExportFormat,
    #[arg(long, default_value_t = glime::export::DEFAULT_VIZ_THRESHOLD)]
    viz_threshold: f64,
    /// Output file.
    #[arg(long)]
    output: PathBuf,
}

/// Fully resolved settings.
struct RunConfig {
    data: PathBuf,
    target: String,
    predictor_cmd: Option<String>,
    classifier: KernelClassifierConfig,
    test_fraction: f64,
    split_seed: u64,
    instance: usize,
    explain: ExplainConfig,
    viz_threshold: f64,
    formats: Vec<ExportFormat>,
    out: PathBuf,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}

impl RunArgs {
    /// Overlays the flags given on the command line on the config file.
    fn merged(&self) -> Result<RunArgs> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path)
            .map_err(io_err(format!("reading config {}", path.display())))?;
        let mut base: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| config_err(format!("config file: {e}")))?;
        let flags = serde_json::to_value(self).expect("serializable");
        if let serde_json::Value::Object(map) = flags {
            base.extend(map);
        }
        serde_json::from_value(serde_json::Value::Object(base))
            .map_err(|e| config_err(format!("config file: {e}")))
    }

    fn resolve(&self) -> Result<RunConfig> {
        let a = self.merged()?;
        let data = a.data.ok_or_else(|| config_err("missing --data"))?;
        let classifier_default = KernelClassifierConfig::default();
        let classifier = KernelClassifierConfig {
            gamma_rbf: a.gamma_rbf,
            l2_penalty: a.l2_penalty.unwrap_or(classifier_default.l2_penalty),
            max_iterations: a.train_max_iter.unwrap_or(classifier_default.max_iterations),
            tolerance: a.train_tol.unwrap_or(classifier_default.tolerance),
        };
        let pd = PerturbationConfig::default();
        let gd = GlassoSettings::default();
        let sd = SolverOptions::default();
        let ed = ExplainConfig::default();
        let explain = ExplainConfig {
            perturbation: PerturbationConfig {
                m: a.m.unwrap_or(pd.m),
                kernel_width: a.kernel_width.unwrap_or(pd.kernel_width),
                noise_scale: a.noise_scale.unwrap_or(pd.noise_scale),
                seed: a.seed.unwrap_or(pd.seed),
            },
            glasso: GlassoSettings {
                grid_size: a.grid_size.unwrap_or(gd.grid_size),
                ratio: a.ratio.unwrap_or(gd.ratio),
                gamma: a.gamma.unwrap_or(gd.gamma),
                solver: SolverOptions {
                    tol: a.tol.unwrap_or(sd.tol),
                    max_iter: a.max_iter.unwrap_or(sd.max_iter),
                    penalize_diagonal: a.penalize_diagonal,
                },
                weighted: !a.unweighted,
            },
            stop_threshold: a.stop_threshold.unwrap_or(ed.stop_threshold),
            ridge_penalty: a.ridge_penalty.unwrap_or(ed.ridge_penalty),
        };
        explain.validate()?;
        let formats = a
            .formats
            .unwrap_or_else(|| vec!["dot".into(), "graphml".into()])
            .iter()
            .map(|f| f.parse::<ExportFormat>().map_err(config_err))
            .collect::<Result<Vec<_>>>()?;
        let viz_threshold = a.viz_threshold.unwrap_or(glime::export::DEFAULT_VIZ_THRESHOLD);
        if !(viz_threshold.is_finite() && viz_threshold >= 0.0) {
            return Err(config_err(format!("viz_threshold {viz_threshold}")));
        }
        Ok(RunConfig {
            data,
            target: a.target.unwrap_or_else(|| "class".into()),
            predictor_cmd: a.predictor_cmd,
            classifier,
            test_fraction: a.test_fraction.unwrap_or(0.2),
            split_seed: a.split_seed.unwrap_or(0),
            instance: a.instance.unwrap_or(0),
            explain,
            viz_threshold,
            formats,
            out: a.out.unwrap_or_else(|| PathBuf::from("glime_out")),
        })
    }
}

/// Loaded data, the fitted or attached predictor and the training statistics.
struct Session {
    feature_names: Vec<String>,
    test: TabularDataset,
    stats: FeatureStats,
    predictor: Predictor,
}

fn open_session(cfg: &RunConfig) -> Result<Session> {
    if !cfg.data.exists() {
        return Err(config_err(format!("dataset {} not found", cfg.data.display())));
    }
    let dataset = load_csv(&cfg.data, Some(&cfg.target))?;
    let (train, test) = split(&dataset, cfg.test_fraction, cfg.split_seed)?;
    let stats = compute_stats(&train)?;
    let predictor = match &cfg.predictor_cmd {
        Some(cmd) => Predictor::connect_external(cmd)?,
        None => Predictor::train_builtin(&train, &cfg.classifier)?,
    };
    if predictor.width() != dataset.n_features() {
        return Err(config_err(format!(
            "predictor expects {} features, dataset has {}",
            predictor.width(),
            dataset.n_features()
        )));
    }
    Ok(Session {
        feature_names: dataset.feature_names().to_vec(),
        test,
        stats,
        predictor,
    })
}

fn test_row(session: &Session, index: usize) -> Result<Vec<f64>> {
    if index >= session.test.n_rows() {
        return Err(config_err(format!(
            "instance {index} out of range: test split has {} rows",
            session.test.n_rows()
        )));
    }
    Ok(session.test.row(index))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

fn write_run(cfg: &RunConfig, obs: &str, run: usize, out: &RunOutput) -> Result<()> {
    let g = &out.graph;
    write(&cfg.out.join(format!("explanation_{obs}_{run}.json")), &g.to_json())?;
    write(&cfg.out.join(format!("adjacency_{obs}_{run}.csv")), &g.network.adjacency_csv())?;
    write(&cfg.out.join(format!("ebic_{obs}_{run}.jsonl")), &out.glasso.trace.to_json_lines())?;
    for &fmt in &cfg.formats {
        let path = cfg.out.join(format!("graph_{obs}_{run}.{}", fmt.extension()));
        export_graph(g, fmt, cfg.viz_threshold, &path)
            .map_err(io_err(format!("writing {}", path.display())))?;
    }
    Ok(())
}

fn print_ranking(obs: &str, g: &ExplanationGraph) {
    println!("observation {obs}  lambda {:.6}  score {:.4}", g.metadata.lambda, g.metadata.instance_score);
    print_table(&g.ranking);
    let names = g.network.node_names();
    let path: Vec<&str> = g.path.nodes.iter().map(|&i| names[i].as_str()).collect();
    println!("path: {}", path.join(" -> "));
}

fn print_table(r: &FeatureRanking) {
    println!("{:>4}  {:<12} {:>8}", "rank", "feature", "weight");
    for (k, e) in r.entries.iter().enumerate() {
        println!("{:>4}  {:<12} {:>8.3}", k + 1, e.feature, e.weight);
    }
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(io_err(format!("creating {}", cfg.out.display())))
}

fn cmd_explain(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let session = open_session(&cfg)?;
    let instance = test_row(&session, cfg.instance)?;
    let obs = cfg.instance.to_string();
    let out = explain_instance(
        &session.predictor,
        &session.stats,
        &session.feature_names,
        &instance,
        &cfg.explain,
        &obs,
        0,
    )?;
    create_out(&cfg)?;
    write_run(&cfg, &obs, 0, &out)?;
    print_ranking(&obs, &out.graph);
    Ok(())
}

fn summary_csv(rows: &[ComparisonSummary]) -> String {
    let mut s = String::from("observation,glime_mean_tau,lime_mean_tau,difference,winner\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.observation_id,
            r.glime_mean_tau,
            r.lime_mean_tau,
            r.difference,
            serde_json::to_value(r.winner).expect("serializable").as_str().unwrap_or("")
        ));
    }
    s
}

fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    if args.runs < 2 {
        return Err(config_err(format!("--runs must be at least 2, got {}", args.runs)));
    }
    let cfg = args.run.resolve()?;
    let session = open_session(&cfg)?;
    let n_test = session.test.n_rows();
    let observations: Vec<usize> = match args.random {
        Some(k) => {
            if k == 0 || k > n_test {
                return Err(config_err(format!("--random {k} with {n_test} test rows")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.select_seed);
            let mut picked = rand::seq::index::sample(&mut rng, n_test, k).into_vec();
            picked.sort_unstable();
            picked
        }
        None if args.observations.is_empty() => vec![cfg.instance],
        None => args.observations.clone(),
    };
    create_out(&cfg)?;
    let mut summaries = Vec::new();
    for &obs_index in &observations {
        let instance = test_row(&session, obs_index)?;
        let obs = obs_index.to_string();
        let study = stability_study(
            &session.predictor,
            &session.stats,
            &session.feature_names,
            &instance,
            &cfg.explain,
            &obs,
            args.runs,
        )?;
        for (run, r) in study.runs.iter().enumerate() {
            write_run(&cfg, &obs, run, &r.output)?;
        }
        for report in [&study.glime, &study.lime] {
            let stem = format!("stability_{obs}_{}", report.method.as_str());
            write(&cfg.out.join(format!("{stem}.json")), &report.to_json())?;
            write(&cfg.out.join(format!("{stem}.csv")), &report.tau_csv())?;
        }
        println!(
            "observation {obs}: glime {:.3}  lime {:.3}",
            study.summary.glime_mean_tau, study.summary.lime_mean_tau
        );
        summaries.push(study.summary);
    }
    write(&cfg.out.join("summary.csv"), &summary_csv(&summaries))?;
    let mut json = serde_json::to_string_pretty(&summaries).expect("serializable");
    json.push('\n');
    write(&cfg.out.join("summary.json"), &json)?;
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    if !(args.viz_threshold.is_finite() && args.viz_threshold >= 0.0) {
        return Err(config_err(format!("viz_threshold {}", args.viz_threshold)));
    }
    let text = std::fs::read_to_string(&args.input)
        .map_err(io_err(format!("reading {}", args.input.display())))?;
    let graph = ExplanationGraph::from_json(&text)
        .map_err(|e| Error::Pipeline(glime::pipeline::PipelineError::Explanation(e)))?;
    write(&args.output, &render(&graph, args.format, args.viz_threshold))
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("error: config: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Explain(a) => cmd_explain(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error: {}: {}", cat.as_str(), one_line(&e.to_string()));
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
