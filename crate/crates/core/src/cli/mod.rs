//! Command-line entry points.

pub mod artifacts;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::catalog::Catalog;
use crate::embedding::{experience, learn_embeddings, ExperienceRecord};
use crate::evaluation::external::{serve_simulated, ExternalEvaluator};
use crate::evaluation::{Evaluator, EvaluatorConfig, SimulatedEvaluator};
use crate::kg::KnowledgeGraph;
use crate::rng;
use crate::search::{oracle, run_search, ParetoPoint, SearchResult};

use artifacts::{FrontRow, OracleSummary, RunArtifacts, Summary};
pub use config::{Ablation, EvaluatorKind, RunConfig, EVALUATOR_ENV};

#[derive(Debug, Parser)]
#[command(name = "compsearch", version, about = "Progressive multi-objective search over model-compression schemes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn strategy embeddings, run the progressive search and write run artifacts.
    Search(RunArgs),
    /// Enumerate a small space exhaustively and write the reference front.
    Oracle(RunArgs),
    /// Compare completed runs and emit hypervolume curves.
    Report(ReportArgs),
    /// Inspect the strategy catalog.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
    /// Inspect the knowledge graph.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Serve the simulated environment over the evaluator protocol on stdin/stdout.
    Serve {
        #[arg(long)]
        catalog_filter: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Print every strategy as `index<TAB>method<TAB>canonical_id`.
    Dump {
        #[arg(long)]
        catalog_filter: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KgCommand {
    /// Write all triples as TSV.
    Export {
        #[arg(long)]
        catalog_filter: Option<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Settings shared by `search` and `oracle`; flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub train_epochs: Option<usize>,
    #[arg(long)]
    pub search_epochs: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorKind>,
    #[arg(long)]
    pub evaluator_command: Option<String>,
    #[arg(long)]
    pub evaluator_pool: Option<usize>,
    #[arg(long)]
    pub evaluator_timeout_secs: Option<u64>,
    #[arg(long)]
    pub evaluator_seed: Option<u64>,
    #[arg(long)]
    pub catalog_filter: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
}

impl RunArgs {
    pub fn resolve(&self) -> crate::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { cfg.$f = v.clone(); })*};
        }
        set!(seed, gamma, max_len, train_epochs, search_epochs, sample_size, cap, lambda, lr, evaluator);
        set!(evaluator_pool, evaluator_timeout_secs, out_dir);
        if self.budget.is_some() {
            cfg.budget = self.budget;
        }
        if self.evaluator_command.is_some() {
            cfg.evaluator_command = self.evaluator_command.clone();
        }
        if self.evaluator_seed.is_some() {
            cfg.evaluator_seed = self.evaluator_seed;
        }
        if self.catalog_filter.is_some() {
            cfg.catalog_filter = self.catalog_filter.clone();
        }
        if self.records.is_some() {
            cfg.records = self.records.clone();
        }
        for &a in &self.ablate {
            cfg.apply_ablation(a);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Completed run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Oracle directory (holding `oracle_hv.json`) applied to every run.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Comparison table; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hypervolume-vs-evaluations curve data.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search(args) => {
            let cfg = args.resolve()?;
            let summary = cmd_search(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Oracle(args) => {
            let cfg = args.resolve()?;
            let summary = cmd_oracle(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Report(args) => cmd_report(&args)?,
        Command::Catalog { command: CatalogCommand::Dump { catalog_filter } } => {
            let catalog = Catalog::from_filter_path(catalog_filter.as_deref())?;
            let mut out = std::io::BufWriter::new(std::io::stdout().lock());
            writeln!(out, "index\tmethod\tcanonical_id")?;
            for (i, s) in catalog.strategies().iter().enumerate() {
                writeln!(out, "{i}\t{}\t{}", s.method, s.canonical_id)?;
            }
            out.flush()?;
        }
        Command::Kg { command: KgCommand::Export { catalog_filter, out } } => {
            let catalog = Catalog::from_filter_path(catalog_filter.as_deref())?;
            let kg = KnowledgeGraph::build(&catalog);
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    kg.export_tsv(std::io::BufWriter::new(file))?;
                }
                None => kg.export_tsv(std::io::BufWriter::new(std::io::stdout().lock()))?,
            }
        }
        Command::Serve { catalog_filter, seed } => {
            let catalog = Catalog::from_filter_path(catalog_filter.as_deref())?;
            serve_simulated(&catalog, seed, std::io::stdin().lock(), std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn simulator_config(cfg: &RunConfig) -> EvaluatorConfig {
    EvaluatorConfig {
        seed: cfg.simulator_seed(),
        base_state: cfg.task.model_state(),
        pretrain_epochs: cfg.pretrain_epochs,
    }
}

fn load_records(cfg: &RunConfig, catalog: &Catalog) -> anyhow::Result<Vec<ExperienceRecord>> {
    if cfg.no_exp {
        return Ok(Vec::new());
    }
    match &cfg.records {
        Some(path) => {
            let file = std::fs::File::open(path).with_context(|| format!("opening records {}", path.display()))?;
            Ok(experience::read_jsonl(std::io::BufReader::new(file)).with_context(|| path.display().to_string())?)
        }
        None => {
            let mut r = rng::stream(cfg.seed, "records");
            Ok(experience::synthesize_records(catalog, cfg.synthetic_records, cfg.simulator_seed(), &mut r)?)
        }
    }
}

fn front_rows(catalog: &Catalog, front: &[ParetoPoint]) -> Vec<FrontRow> {
    front
        .iter()
        .map(|p| FrontRow {
            scheme: catalog.scheme_label(&p.scheme),
            accuracy: p.accuracy,
            params: p.params,
            flops: p.flops,
            pr: p.pr,
            fr: p.fr,
            ar: p.ar,
        })
        .collect()
}

fn prepare_out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

/// Runs embedding learning and the search, then writes all artifacts.
pub fn cmd_search(cfg: &RunConfig) -> anyhow::Result<Summary> {
    let started = Instant::now();
    cfg.validate()?;
    let catalog = Catalog::from_filter_path(cfg.catalog_filter.as_deref())?;
    let kg = KnowledgeGraph::build(&catalog);
    prepare_out_dir(&cfg.out_dir)?;
    artifacts::write_json(&cfg.out_dir.join(artifacts::CONFIG_FILE), cfg)?;

    let records = load_records(cfg, &catalog)?;
    info!("learning embeddings for {} strategies from {} records", catalog.len(), records.len());
    let learned = learn_embeddings(&catalog, &kg, &records, &cfg.embedding_config())?;
    learned.table.save_json(&cfg.out_dir.join(artifacts::EMBEDDINGS_FILE))?;

    let evaluator: Box<dyn Evaluator + '_> = match cfg.evaluator {
        EvaluatorKind::Simulated => Box::new(SimulatedEvaluator::new(&catalog, simulator_config(cfg))?),
        EvaluatorKind::External => {
            let command = cfg.external_command()?;
            let ev = ExternalEvaluator::spawn(
                &catalog,
                &command,
                cfg.evaluator_pool,
                cfg.task,
                cfg.pretrain_epochs,
                Duration::from_secs(cfg.evaluator_timeout_secs),
            )
            .with_context(|| format!("starting evaluator `{command}`"))?;
            info!("external evaluators ready: {:?}", ev.names());
            Box::new(ev)
        }
    };
    let result: SearchResult = run_search(&catalog, &learned.table, evaluator.as_ref(), &cfg.search_config())?;
    if result.partial {
        log::warn!("evaluation budget exhausted after {} evaluations; results are partial", result.evaluations);
    }

    artifacts::write_trace(&cfg.out_dir.join(artifacts::TRACE_FILE), &result.trace)?;
    artifacts::write_front(&cfg.out_dir.join(artifacts::PARETO_FILE), &front_rows(&catalog, &result.front))?;
    let summary = Summary {
        hypervolume: result.hypervolume,
        best_accuracy_scheme: result.front.first().map(|p| catalog.scheme_label(&p.scheme)),
        evaluation_count: result.evaluations,
        wall_time: started.elapsed().as_secs_f64(),
        rounds: result.rounds,
        partial: result.partial,
        seed: cfg.seed,
        gamma: cfg.gamma,
        base_params: result.base_state.params,
        kg_training: !cfg.no_kg,
        exp_training: !cfg.no_exp,
        progressive_replay: !cfg.no_progressive_replay,
        config_hash: cfg.config_hash(),
    };
    artifacts::write_json(&cfg.out_dir.join(artifacts::SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Exhaustive enumeration with the simulated environment.
pub fn cmd_oracle(cfg: &RunConfig) -> anyhow::Result<OracleSummary> {
    // enumeration accepts L = 0, which search does not
    RunConfig { max_len: cfg.max_len.max(1), ..cfg.clone() }.validate()?;
    let catalog = Catalog::from_filter_path(cfg.catalog_filter.as_deref())?;
    let sim = SimulatedEvaluator::new(&catalog, simulator_config(cfg))?;
    let result = oracle::enumerate(&catalog, &sim, cfg.max_len, cfg.gamma, cfg.oracle_limit)?;
    prepare_out_dir(&cfg.out_dir)?;
    artifacts::write_front(&cfg.out_dir.join(artifacts::ORACLE_FRONT_FILE), &front_rows(&catalog, &result.front))?;
    let summary = OracleSummary {
        hypervolume: result.hypervolume,
        evaluations: result.evaluations,
        front_size: result.front.len(),
        gamma: cfg.gamma,
        max_len: cfg.max_len,
        base_params: result.base_state.params,
        config_hash: cfg.config_hash(),
    };
    artifacts::write_json(&cfg.out_dir.join(artifacts::ORACLE_HV_FILE), &summary)?;
    Ok(summary)
}

pub fn cmd_report(args: &ReportArgs) -> anyhow::Result<()> {
    if args.runs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let runs = args.runs.iter().map(|d| RunArtifacts::load(d)).collect::<crate::Result<Vec<_>>>()?;
    let oracle: Option<OracleSummary> = match &args.oracle {
        Some(dir) => Some(artifacts::read_json(&dir.join(artifacts::ORACLE_HV_FILE))?),
        None => None,
    };
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            artifacts::write_report(&runs, oracle.as_ref(), std::io::BufWriter::new(file))?;
        }
        None => artifacts::write_report(&runs, oracle.as_ref(), std::io::stdout().lock())?,
    }
    if let Some(path) = &args.curves {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        artifacts::write_curves(&runs, std::io::BufWriter::new(file))?;
    }
    Ok(())
}
