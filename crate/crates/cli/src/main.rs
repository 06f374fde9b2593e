use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hogforge_core::frontend::{parse_with_id, SourceUnit};
use hogforge_core::lexicon::build_pool;
use hogforge_core::metrics::{codebleu, CodeBleuScore, CodeBleuSummary, CodeBleuWeights};
use hogforge_core::pipeline::{
    compare_search, emit_csv, emit_report, ingest, run_corpus, sweep_budget, sweep_lambda, CompareConfig, Corpus, RunConfig,
    DEFAULT_BUDGET_GRID, DEFAULT_LAMBDA_GRID,
};
use hogforge_core::swarm::StrategyKind;
use hogforge_core::transforms::{apply_transform, check_applicable, find_structures, OpKind, StructureKind, TransformOp};
use hogforge_core::victims::{serve, VictimSpec};

#[derive(Parser)]
#[command(name = "hogforge", version, about = "Black-box adversarial code generation against vulnerability classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack every sample of a corpus and write a report.
    Attack(AttackArgs),
    /// Apply one structural rewrite to a source file.
    Transform(TransformArgs),
    /// CodeBLEU between original and adversarial code.
    Metrics(MetricsArgs),
    /// Run the search strategies side by side on one sample.
    CompareSearch(CompareArgs),
    /// One attack run per control-flow weight.
    SweepLambda(SweepLambdaArgs),
    /// One attack run per query budget.
    SweepBudget(SweepBudgetArgs),
    /// Print the candidate pool for one identifier.
    Rank(RankArgs),
    /// Expose a builtin victim over the stdio or HTTP protocol.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON Lines corpus; the bundled corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Victim spec, e.g. `planted`, `token-bag`, `cmd:<command>` or an http url.
    #[arg(long)]
    victim: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "HOGFORGE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.victim {
            cfg.victim = v.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(v) = &self.vocab {
            cfg.vocab = Some(v.clone());
        }
        if let Some(e) = &self.embeddings {
            cfg.embeddings = Some(e.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn corpus(&self) -> Result<Corpus> {
        let corpus = match &self.corpus {
            Some(p) => ingest(p)?,
            None => hogforge_core::pipeline::bundled_corpus(),
        };
        for s in &corpus.skipped {
            log::warn!("line {}: skipped: {}", s.line, s.reason);
        }
        Ok(corpus)
    }
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also flatten per-sample rows to CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    op: String,
    /// Statement node id, or `auto` for the first applicable site.
    #[arg(long, default_value = "auto")]
    site: String,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// A source file or a JSON Lines corpus.
    #[arg(long)]
    orig: PathBuf,
    #[arg(long)]
    adv: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Sample id in the corpus; the first sample when omitted.
    #[arg(long)]
    id: Option<String>,
    /// Source file to use instead of a corpus sample.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    label: u8,
    #[arg(long, default_value = "pso,mhm,greedy,ga,random", value_delimiter = ',')]
    strategies: Vec<StrategyKind>,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Keep searching after a flip (for diversity measurements).
    #[arg(long)]
    no_early_exit: bool,
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepLambdaArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepBudgetArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    values: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    identifier: String,
    /// Unit the identifier belongs to; its other names are excluded.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "token-bag")]
    victim: String,
    /// Listen on this address (e.g. 127.0.0.1:8080) instead of stdio.
    #[arg(long)]
    http: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn parse_file(path: &Path) -> Result<SourceUnit> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    parse_with_id(id, &read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn cmd_attack(a: AttackArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let corpus = a.run.corpus()?;
    let report = run_corpus(&corpus, &cfg)?;
    emit_report(&report, &a.out)?;
    if let Some(csv) = &a.csv {
        emit_csv(&report, csv)?;
    }
    let m = &report.metrics;
    eprintln!(
        "attempted {} skipped {} successes {} asr {}",
        m.attempted,
        m.skipped,
        m.successes,
        m.asr_percent.map_or("n/a".into(), |x| format!("{x:.2}%"))
    );
    Ok(())
}

/// Exit code 2 when the rewrite does not apply.
fn cmd_transform(a: TransformArgs) -> Result<ExitCode> {
    let op: OpKind = a.op.parse().map_err(|e: String| anyhow!(e))?;
    let unit = parse_file(&a.input)?;
    let site = if a.site == "auto" {
        let kind = StructureKind::ALL.iter().copied().find(|k| k.op() == Some(op)).expect("every op has a source kind");
        let sites = find_structures(&unit).remove(&kind).unwrap_or_default();
        match sites.into_iter().find(|s| check_applicable(&unit, TransformOp { op, site: *s }).is_ok()) {
            Some(s) => s,
            None => {
                println!("inapplicable: no applicable {} site", op.name());
                return Ok(ExitCode::from(2));
            }
        }
    } else {
        a.site.parse().with_context(|| format!("bad site `{}`", a.site))?
    };
    match apply_transform(&unit, TransformOp { op, site }) {
        Ok(u) => {
            print!("{}", u.source_text);
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            println!("inapplicable: {e}");
            Ok(ExitCode::from(2))
        }
    }
}

fn load_units(path: &Path) -> Result<BTreeMap<String, SourceUnit>> {
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        let corpus = ingest(path)?;
        Ok(corpus.tasks.into_iter().map(|t| (t.unit.unit_id.clone(), t.unit)).collect())
    } else {
        let u = parse_file(path)?;
        Ok([(String::new(), u)].into_iter().collect())
    }
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let orig = load_units(&a.orig)?;
    let adv = load_units(&a.adv)?;
    let weights = CodeBleuWeights::default();
    let mut rows = Vec::new();
    let mut scores: Vec<CodeBleuScore> = Vec::new();
    for (id, o) in &orig {
        let Some(c) = adv.get(id) else { continue };
        let s = codebleu(o, c, &weights)?;
        scores.push(s);
        rows.push(serde_json::json!({ "id": id, "codebleu": s }));
    }
    if rows.is_empty() {
        bail!("no sample ids shared between the two inputs");
    }
    let report = serde_json::json!({ "pairs": rows.len(), "codebleu_mean": CodeBleuSummary::mean(&scores), "samples": rows });
    write_json(&report, a.out.as_deref())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let (unit, label) = match &a.input {
        Some(p) => (parse_file(p)?, a.label),
        None => {
            let corpus = a.run.corpus()?;
            let task = match &a.id {
                Some(id) => corpus.tasks.into_iter().find(|t| &t.unit.unit_id == id).ok_or_else(|| anyhow!("no sample `{id}`"))?,
                None => corpus.tasks.into_iter().next().ok_or_else(|| anyhow!("corpus is empty"))?,
            };
            (task.unit, task.label)
        }
    };
    let spec = VictimSpec::parse(&cfg.victim)?;
    let compare = CompareConfig {
        strategies: a.strategies.clone(),
        seeds: (0..a.seeds).map(|s| cfg.seed + s).collect(),
        params: cfg.schedule,
        k: cfg.k,
        budget: cfg.budget,
        early_exit: !a.no_early_exit,
    };
    let report = compare_search(&unit, label, &spec, &cfg.lexicon()?, &compare)?;
    if let Some(p) = &a.dump_trajectories {
        let mut text = String::new();
        for row in report.trajectory_rows() {
            text.push_str(&serde_json::to_string(&row)?);
            text.push('\n');
        }
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    for s in &report.summaries {
        eprintln!(
            "{:<7} success {}/{} median queries {} cad {}",
            s.strategy.name(),
            s.successes,
            s.runs,
            s.median_queries_to_success.map_or("n/a".into(), |q| format!("{q}")),
            s.mean_cad.map_or("n/a".into(), |c| format!("{c:.4}"))
        );
    }
    write_json(&serde_json::to_value(&report)?, a.out.as_deref())
}

fn cmd_sweep_lambda(a: SweepLambdaArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let values = if a.values.is_empty() { DEFAULT_LAMBDA_GRID.to_vec() } else { a.values.clone() };
    let report = sweep_lambda(&a.run.corpus()?, &cfg, &values)?;
    for p in &report.table {
        eprintln!("lambda {:<4} asr {}", p.value, p.asr_percent.map_or("n/a".into(), |x| format!("{x:.2}%")));
    }
    emit_report(&report, &a.out)?;
    Ok(())
}

fn cmd_sweep_budget(a: SweepBudgetArgs) -> Result<()> {
    let cfg = a.run.config()?;
    let values = if a.values.is_empty() { DEFAULT_BUDGET_GRID.to_vec() } else { a.values.clone() };
    let report = sweep_budget(&a.run.corpus()?, &cfg, &values)?;
    for p in &report.table {
        eprintln!("budget {:<6} attempted {} asr {}", p.value, p.attempted, p.asr_percent.map_or("n/a".into(), |x| format!("{x:.2}%")));
    }
    emit_report(&report, &a.out)?;
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let cfg = RunConfig { vocab: a.vocab.clone(), embeddings: a.embeddings.clone(), ..RunConfig::default() };
    let lexicon = cfg.lexicon()?;
    let unit = match &a.input {
        Some(p) => parse_file(p)?,
        None => parse_with_id("rank", &format!("int rank(int {}) {{ return {}; }}", a.identifier, a.identifier))
            .map_err(|e| anyhow!("`{}` is not a usable identifier: {e}", a.identifier))?,
    };
    let pool = build_pool(&unit, &lexicon.vocabulary, &lexicon.provider, a.k)?;
    let d = pool
        .identifiers
        .iter()
        .position(|i| i == &a.identifier)
        .ok_or_else(|| anyhow!("`{}` is not a renameable identifier of the unit", a.identifier))?;
    let mut out = io::stdout().lock();
    for (rank, (name, dist)) in pool.top_k(d).iter().enumerate() {
        writeln!(out, "{:>3} {name:<24} {dist:.6}", rank + 1)?;
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let model = VictimSpec::Builtin(a.victim.clone());
    VictimSpec::parse(&a.victim)?;
    let model = model.model()?;
    match &a.http {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            println!("listening on {}", listener.local_addr()?);
            io::stdout().flush()?;
            serve::serve_http(model, listener)?;
        }
        None => serve::serve_stdio(model.as_ref(), io::stdin().lock(), io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Attack(a) => cmd_attack(a).map(|_| ExitCode::SUCCESS),
        Command::Transform(a) => cmd_transform(a),
        Command::Metrics(a) => cmd_metrics(a).map(|_| ExitCode::SUCCESS),
        Command::CompareSearch(a) => cmd_compare(a).map(|_| ExitCode::SUCCESS),
        Command::SweepLambda(a) => cmd_sweep_lambda(a).map(|_| ExitCode::SUCCESS),
        Command::SweepBudget(a) => cmd_sweep_budget(a).map(|_| ExitCode::SUCCESS),
        Command::Rank(a) => cmd_rank(a).map(|_| ExitCode::SUCCESS),
        Command::Serve(a) => cmd_serve(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
