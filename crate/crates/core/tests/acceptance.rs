//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use graphviz_rust::dot_structures::{Graph, Id, Stmt};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use common::*;
use glime::data::{compute_stats, load_csv, split, FeatureStats, TabularDataset};
use glime::explanation::ExplanationGraph;
use glime::export::to_dot;
use glime::glasso::{count_edges, lambda_grid, select_model, solve, weighted_correlation, SolverOptions};
use glime::network::partial_correlations;
use glime::pipeline::{stability_study, ExplainConfig, StudyOutcome};
use glime::predictor::{KernelClassifierConfig, Predictor};
use glime::stability::kendall_tau_b;
use glime::synthetic::{generate, BlockDesign};

const VIZ_THRESHOLD: f64 = 0.1;
const BIOPSY_OBSERVATIONS: [usize; 4] = [0, 5, 99, 136];
const SYNTHETIC_OBSERVATIONS: [usize; 4] = [0, 9, 99, 199];
const RUNS: usize = 10;

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

struct Study {
    observation: usize,
    outcome: StudyOutcome,
}

/// Shared state: studies are expensive and feed several criteria.
#[derive(Default)]
struct Context {
    matrices: Vec<DMatrix<f64>>,
    biopsy: Vec<Study>,
    synthetic: Vec<Study>,
    dot_documents: Vec<(String, String, Vec<ExplanationGraph>)>,
}

fn max_off_diagonal(s: &DMatrix<f64>) -> f64 {
    let q = s.nrows();
    (0..q)
        .flat_map(|i| (0..q).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| s[(i, j)].abs())
        .fold(0.0, f64::max)
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn solver_oracle(ctx: &mut Context) -> Verdict {
    let start = Instant::now();
    let mut r = rng(101);
    let opts = SolverOptions::default();
    let (mut worst_diff, mut worst_gap, mut all_converged) = (0.0f64, 0.0f64, true);
    for _ in 0..20 {
        let s = random_correlation(4, &mut r);
        let lmax = max_off_diagonal(&s);
        for f in [0.02, 0.1, 0.3, 0.6, 0.9] {
            let lambda = f * lmax;
            let est = solve(&as_cov(s.clone(), 200.0), lambda, &opts).unwrap();
            let oracle = admm_glasso(&s, lambda, false);
            worst_diff = worst_diff.max((&est.k - &oracle).amax());
            worst_gap = worst_gap.max(est.duality_gap);
            all_converged &= est.converged;
        }
        ctx.matrices.push(s);
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 1,
        title: "solver matches ADMM oracle",
        pass: worst_diff <= 1e-3 && worst_gap <= 1e-6 * 4.0 && all_converged && within(elapsed, 10.0),
        detail: format!(
            "max |K - K_admm| {worst_diff:.2e}, max gap {worst_gap:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn path_endpoints(ctx: &mut Context) -> Verdict {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut failures = Vec::new();
    for (m, s) in ctx.matrices.iter().enumerate() {
        let cov = as_cov(s.clone(), 200.0);
        let grid = lambda_grid(&cov, 100, 0.01).unwrap();
        let res = select_model(&cov, &grid.values, 0.5, &opts).unwrap();
        let entries = &res.trace.entries;
        let e_max = entries[0].edges;
        let e_min = entries.last().unwrap().edges;
        for lambda in [grid.values[0], 1.5 * grid.values[0], 10.0 * grid.values[0]] {
            let est = solve(&cov, lambda, &opts).unwrap();
            if count_edges(&est.k) != 0 {
                failures.push(format!("matrix {m}: edges at lambda {lambda}"));
            }
        }
        if e_max != 0 || e_min < e_max || entries.iter().any(|e| !e.converged) {
            failures.push(format!("matrix {m}: E(max) {e_max}, E(min) {e_min}"));
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 2,
        title: "path endpoints",
        pass: failures.is_empty() && within(elapsed, 1.0),
        detail: if failures.is_empty() {
            format!("{} matrices x 100-point grid, {:.2}s", ctx.matrices.len(), elapsed.as_secs_f64())
        } else {
            failures.join("; ")
        },
    }
}

/// `log det K` from eigenvalues, `tr(SK)`, and the upper-triangle support.
fn independent_fit_terms(k: &DMatrix<f64>, s: &DMatrix<f64>) -> (f64, f64, usize) {
    let logdet: f64 = SymmetricEigen::new(k.clone()).eigenvalues.iter().map(|l| l.ln()).sum();
    let q = k.nrows();
    let mut tr = 0.0;
    for i in 0..q {
        for j in 0..q {
            tr += s[(i, j)] * k[(j, i)];
        }
    }
    let mut edges = 0;
    for i in 0..q {
        for j in i + 1..q {
            if k[(i, j)].abs() > 1e-8 {
                edges += 1;
            }
        }
    }
    (logdet, tr, edges)
}

fn ebic_argmin() -> Verdict {
    let start = Instant::now();
    let mut r = rng(303);
    let opts = SolverOptions::default();
    let mut failures = Vec::new();
    for problem in 0..50 {
        let q = r.random_range(3..=8);
        let n_rows = r.random_range(60..=1500);
        let gamma = [0.0, 0.25, 0.5][problem % 3];
        let truth = random_correlation(q, &mut r);
        let x = sample_gaussian(&truth, n_rows, &mut r);
        let weights: Vec<f64> = (0..n_rows).map(|_| r.random_range(0.1..1.0)).collect();
        let cov = weighted_correlation(&local_from(&x), &weights).unwrap();
        let grid = lambda_grid(&cov, 40, 0.01).unwrap();
        let res = select_model(&cov, &grid.values, gamma, &opts).unwrap();
        let n = cov.n_effective;

        let recomputed: Vec<f64> = res
            .trace
            .entries
            .iter()
            .map(|e| {
                let edges = e.edges as f64;
                -2.0 * e.loglik + edges * n.ln() + 4.0 * gamma * edges * (q as f64).ln()
            })
            .collect();
        let mut best = 0;
        for (i, &v) in recomputed.iter().enumerate() {
            if v < recomputed[best] {
                best = i;
            }
        }
        let chosen = res.trace.entries.iter().position(|e| e.selected);
        if chosen != Some(best) || res.selected.lambda != res.trace.entries[best].lambda {
            failures.push(format!("problem {problem}: chose {chosen:?}, argmin {best}"));
            continue;
        }
        // The stored likelihood and edge count agree with the chosen matrix.
        let (logdet, tr, edges) = independent_fit_terms(&res.selected.k, &cov.s);
        let loglik = 0.5 * n * (logdet - tr);
        let stored = &res.trace.entries[best];
        if edges != stored.edges || (loglik - stored.loglik).abs() > 1e-8 * loglik.abs().max(1.0) {
            failures.push(format!("problem {problem}: stored terms disagree"));
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 3,
        title: "EBIC argmin",
        pass: failures.is_empty() && within(elapsed, 30.0),
        detail: if failures.is_empty() {
            format!("50 problems, {:.2}s", elapsed.as_secs_f64())
        } else {
            failures.join("; ")
        },
    }
}

fn partial_correlation_oracle() -> Verdict {
    let start = Instant::now();
    let mut r = rng(404);
    let opts = SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    };
    let mut worst = 0.0f64;
    for q in 3..=6 {
        let truth = random_correlation(q, &mut r);
        let x = sample_gaussian(&truth, 10_000, &mut r);
        let local = local_from(&x);
        let cov = weighted_correlation(&local, &vec![1.0; 10_000]).unwrap();
        let est = solve(&cov, 0.0, &opts).unwrap();
        let net = partial_correlations(&est.k, local.names.clone()).unwrap();
        let oracle = residual_partial_correlations(&x);
        worst = worst.max((net.weights() - &oracle).amax());
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 4,
        title: "partial-correlation oracle at lambda 0",
        pass: worst <= 1e-2 && within(elapsed, 30.0),
        detail: format!("max |W - W_oracle| {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    }
}

fn kendall_exactness() -> Verdict {
    let start = Instant::now();
    let mut r = rng(505);
    let mut mismatches = 0;
    for pair in 0..1000 {
        let ties = pair % 2 == 1;
        let n = r.random_range(2..=40);
        let a = random_ranks(n, ties, &mut r);
        let b = random_ranks(n, ties, &mut r);
        if kendall_tau_b(&a, &b).unwrap() != brute_tau_b(&a, &b) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 5,
        title: "Kendall tau-b exactness",
        pass: mismatches == 0 && within(elapsed, 5.0),
        detail: format!("{mismatches} mismatches in 1000 pairs, {:.2}s", elapsed.as_secs_f64()),
    }
}

struct Session {
    names: Vec<String>,
    test: TabularDataset,
    stats: FeatureStats,
    predictor: Predictor,
}

fn session(dataset: TabularDataset) -> Session {
    let (train, test) = split(&dataset, 0.2, 0).unwrap();
    let stats = compute_stats(&train).unwrap();
    let predictor = Predictor::train_builtin(&train, &KernelClassifierConfig::default()).unwrap();
    Session {
        names: dataset.feature_names().to_vec(),
        test,
        stats,
        predictor,
    }
}

fn run_studies(s: &Session, observations: &[usize]) -> Vec<Study> {
    let cfg = ExplainConfig::default();
    observations
        .iter()
        .map(|&o| Study {
            observation: o,
            outcome: stability_study(
                &s.predictor,
                &s.stats,
                &s.names,
                &s.test.row(o),
                &cfg,
                &o.to_string(),
                RUNS,
            )
            .unwrap(),
        })
        .collect()
}

fn means(study: &Study) -> (f64, f64) {
    (study.outcome.summary.glime_mean_tau, study.outcome.summary.lime_mean_tau)
}

fn collect_dot(ctx: &mut Context, label: &str, studies_of: fn(&Context) -> &Vec<Study>) {
    let graphs: Vec<ExplanationGraph> = studies_of(ctx)
        .iter()
        .flat_map(|s| s.outcome.runs.iter().map(|r| r.output.graph.clone()))
        .collect();
    let docs: Vec<String> = graphs.iter().map(|g| to_dot(g, VIZ_THRESHOLD)).collect();
    for (i, (doc, g)) in docs.into_iter().zip(graphs).enumerate() {
        ctx.dot_documents.push((format!("{label} run {i}"), doc, vec![g]));
    }
}

fn biopsy_reproduction(ctx: &mut Context) -> Verdict {
    let start = Instant::now();
    let data = load_csv(biopsy_path(), Some("class")).unwrap();
    let s = session(data);
    ctx.biopsy = run_studies(&s, &BIOPSY_OBSERVATIONS);
    collect_dot(ctx, "biopsy", |c| &c.biopsy);
    let first = &ctx.biopsy[0];
    let want: BTreeSet<&str> = ["V6", "V1"].into();
    let top_two_hits = first
        .outcome
        .runs
        .iter()
        .filter(|r| {
            let f = r.output.graph.ranking.features();
            f.len() >= 2 && f[..2].iter().copied().collect::<BTreeSet<&str>>() == want
        })
        .count();
    let (g, l) = means(first);
    let a = top_two_hits >= 8;
    let b = g >= 0.85;
    let c = g > l;
    Verdict {
        id: 6,
        title: "BIOPSY first test observation",
        pass: a && b && c,
        detail: format!(
            "(a) V6+V1 top two in {top_two_hits}/10 runs [{}]; (b) gLIME mean {g:.3} [{}]; \
             (c) LIME mean {l:.3} [{}]; {:.0}s",
            ok(a),
            ok(b),
            ok(c),
            start.elapsed().as_secs_f64()
        ),
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

fn four_observation_study(ctx: &Context) -> Verdict {
    let rows: Vec<String> = ctx
        .biopsy
        .iter()
        .map(|s| {
            let (g, l) = means(s);
            format!("obs {} {g:.3}/{l:.3}", s.observation)
        })
        .collect();
    let wins = ctx.biopsy.iter().filter(|s| means(s).0 > means(s).1).count();
    let floor = ctx.biopsy.iter().all(|s| means(s).0 >= 0.80);
    Verdict {
        id: 7,
        title: "BIOPSY four-observation study",
        pass: wins >= 3 && floor,
        detail: format!(
            "gLIME/LIME {}; gLIME wins {wins}/4; all gLIME >= 0.80: {floor}",
            rows.join(", ")
        ),
    }
}

fn mean_gap(studies: &[Study]) -> f64 {
    studies.iter().map(|s| means(s).0 - means(s).1).sum::<f64>() / studies.len() as f64
}

fn synthetic_regime(ctx: &mut Context) -> Verdict {
    let start = Instant::now();
    let data = generate(&BlockDesign::default()).unwrap();
    let s = session(data);
    ctx.synthetic = run_studies(&s, &SYNTHETIC_OBSERVATIONS);
    collect_dot(ctx, "synthetic", |c| &c.synthetic);
    let rows: Vec<String> = ctx
        .synthetic
        .iter()
        .map(|s| {
            let (g, l) = means(s);
            format!("obs {} {g:.3}/{l:.3}", s.observation)
        })
        .collect();
    let wins = ctx.synthetic.iter().filter(|s| means(s).0 > means(s).1).count();
    let gap = mean_gap(&ctx.synthetic);
    let biopsy_gap = mean_gap(&ctx.biopsy);
    Verdict {
        id: 8,
        title: "40-feature correlated-block regime",
        pass: wins >= 3 && gap > biopsy_gap,
        detail: format!(
            "gLIME/LIME {}; gLIME wins {wins}/4; mean gap {gap:+.3} vs BIOPSY {biopsy_gap:+.3}; {:.0}s",
            rows.join(", "),
            start.elapsed().as_secs_f64()
        ),
    }
}

fn run_cli(out: &Path) -> bool {
    let data = biopsy_path();
    Command::new(env!("CARGO_BIN_EXE_glime"))
        .args(["explain", "--data"])
        .arg(&data)
        .args(["--instance", "2", "--seed", "7", "--formats", "dot,graphml,json", "--out"])
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn json_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism(ctx: &mut Context) -> Verdict {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ran = run_cli(a.path()) && run_cli(b.path());
    let (fa, fb) = (json_files(a.path()), json_files(b.path()));
    let identical = ran && !fa.is_empty() && fa == fb;
    if ran {
        let dot = std::fs::read_to_string(a.path().join("graph_2_0.dot")).unwrap_or_default();
        let doc = std::fs::read_to_string(a.path().join("explanation_2_0.json")).unwrap_or_default();
        let graphs = ExplanationGraph::from_json(&doc).into_iter().collect();
        ctx.dot_documents.push(("cli graph_2_0.dot".into(), dot, graphs));
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 9,
        title: "CLI determinism",
        pass: identical && within(elapsed, 60.0),
        detail: format!(
            "{} JSON files compared, identical: {identical}, {:.1}s",
            fa.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn id_text(id: &Id) -> String {
    match id {
        Id::Html(s) | Id::Escaped(s) | Id::Plain(s) | Id::Anonymous(s) => s.trim_matches('"').to_string(),
    }
}

/// Parses `doc` and returns the `weight` attribute of every edge.
fn parsed_edge_weights(doc: &str) -> Result<Vec<f64>, String> {
    let stmts = match graphviz_rust::parse(doc)? {
        Graph::Graph { stmts, .. } | Graph::DiGraph { stmts, .. } => stmts,
    };
    let mut weights = Vec::new();
    for stmt in stmts {
        if let Stmt::Edge(e) = stmt {
            let w = e
                .attributes
                .iter()
                .find(|a| id_text(&a.0) == "weight")
                .ok_or("edge without weight")?;
            weights.push(id_text(&w.1).parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    Ok(weights)
}

fn export_validity(ctx: &Context) -> Verdict {
    let start = Instant::now();
    let mut problems = Vec::new();
    let mut edges = 0;
    for (label, doc, graphs) in &ctx.dot_documents {
        match parsed_edge_weights(doc) {
            Err(e) => problems.push(format!("{label}: {e}")),
            Ok(ws) => {
                edges += ws.len();
                if ws.iter().any(|w| *w < VIZ_THRESHOLD) {
                    problems.push(format!("{label}: edge below threshold"));
                }
                // Every edge at or above the threshold is drawn.
                for g in graphs {
                    let n = g.network.n_nodes();
                    let strong = (0..n)
                        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                        .filter(|&(i, j)| g.network.weight(i, j).abs() >= VIZ_THRESHOLD)
                        .count();
                    if strong != ws.len() {
                        problems.push(format!("{label}: {} edges drawn, {strong} expected", ws.len()));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict {
        id: 10,
        title: "DOT export validity",
        pass: problems.is_empty() && !ctx.dot_documents.is_empty() && within(elapsed, 10.0),
        detail: if problems.is_empty() {
            format!(
                "{} documents parsed, {edges} edges all >= {VIZ_THRESHOLD}, {:.2}s",
                ctx.dot_documents.len(),
                elapsed.as_secs_f64()
            )
        } else {
            problems.join("; ")
        },
    }
}

fn report(v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    println!("{status} criterion {:>2} ({}): {}", v.id, v.title, v.detail);
}

fn main() {
    let mut ctx = Context::default();
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        report(&v);
        verdicts.push(v.pass);
    };
    record(solver_oracle(&mut ctx));
    record(path_endpoints(&mut ctx));
    record(ebic_argmin());
    record(partial_correlation_oracle());
    record(kendall_exactness());
    record(biopsy_reproduction(&mut ctx));
    record(four_observation_study(&ctx));
    record(synthetic_regime(&mut ctx));
    record(determinism(&mut ctx));
    record(export_validity(&ctx));
    let passed = verdicts.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", verdicts.len());
    if passed != verdicts.len() {
        std::process::exit(1);
    }
}
