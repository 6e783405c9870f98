use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gesa_core::datagen::{generate_dataset, GenSpec};
use gesa_core::debias::DebiasConfig;
use gesa_core::embed::EmbeddingStore;
use gesa_core::explain::{explain_allocation, ExplainContext, ShapConfig};
use gesa_core::hetgraph::GnnConfig;
use gesa_core::model::{validate_dataset, Dataset};
use gesa_core::pipeline::{
    allocate, debias_embeddings, default_category, evaluate_plan, score_tables, top_roles, train_graph,
    AllocationConfig, PlanDocument,
};
use gesa_core::recsys::{build_ivfpq, IvfPqConfig, IvfPqIndex};
use gesa_core::{GesaError, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gesa", version, about = "Fair and diverse candidate-role allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train graph embeddings by link prediction.
    TrainGraph {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input feature dimension.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Output embedding dimension.
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        /// Write the per-epoch loss as CSV.
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Re-encode embeddings adversarially against a sensitive category.
    Debias {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `gender`, or the first declared category.
        #[arg(long)]
        category: Option<String>,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Optimize an allocation and select one plan.
    Allocate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Plan document; the front and trace go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain one assignment of a plan.
    Explain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        role: String,
    },
    /// Build an IVF-PQ index over an embedding file.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Nearest neighbours of a vector.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// File with the query vector as a JSON array or comma/space
        /// separated numbers.
        #[arg(long)]
        vector: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        nprobe: usize,
        /// Re-rank candidates by exact distance.
        #[arg(long)]
        rerank: bool,
    },
    /// Score a plan against the planted ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
    /// Run the HTTP service.
    Serve {
        /// Overrides `GESA_DATA_DIR`.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Overrides `GESA_PORT`.
        #[arg(long)]
        port: Option<u16>,
    },
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let ds = Dataset::read(path)?;
    let violations = validate_dataset(&ds);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{}: {v}", path.display());
        }
        return Err(GesaError::InvalidDataset(violations.len()));
    }
    Ok(ds)
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| GesaError::Format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| GesaError::Format(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::create_dir_all(dir_of(path))?;
    fs::write(path, text).map_err(|e| GesaError::Format(format!("cannot write {}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value).expect("output serializes") + "\n"))
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| PathBuf::from("."))
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// `target` relative to directory `base`, both made absolute first.
fn relative_to(target: &Path, base: &Path) -> String {
    let (target, base) = (absolute(target), absolute(base));
    let t: Vec<Component> = target.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out.to_string_lossy().replace('\\', "/")
}

fn load_store(path: &Option<String>, base: &Path) -> Result<Option<(EmbeddingStore, PathBuf)>> {
    path.as_ref()
        .map(|p| {
            let full = base.join(p);
            Ok((EmbeddingStore::read(&full)?, full))
        })
        .transpose()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { spec, out } => {
            let spec: GenSpec = read_json(&spec)?;
            generate_dataset(&spec)?.write(&out)
        }
        Command::TrainGraph { data, out, epochs, seed, dim, hidden, loss } => {
            let ds = read_dataset(&data)?;
            let config = GnnConfig { epochs, seed, hidden_dim: hidden, ..Default::default() };
            let (store, csv) = train_graph(&ds, dim, &config)?;
            write(&out, &store.to_text())?;
            if let Some(path) = loss {
                write(&path, &csv)?;
            }
            Ok(())
        }
        Command::Debias { data, embeddings, lambda, out, category, epochs, seed } => {
            let ds = read_dataset(&data)?;
            let input = EmbeddingStore::read(&embeddings)?;
            let category = match category {
                Some(c) => c,
                None => default_category(&ds)?,
            };
            let config = DebiasConfig { lambda, epochs, seed, ..Default::default() };
            write(&out, &debias_embeddings(&ds, &input, &category, &config)?.to_text())
        }
        Command::Allocate { data, config: config_path, out } => {
            let ds = read_dataset(&data)?;
            let config: AllocationConfig = read_json(&config_path)?;
            config.validate()?;
            let base = dir_of(&config_path);
            let semantic = load_store(&config.semantic_embeddings, &base)?;
            let graph = load_store(&config.graph_embeddings, &base)?;
            let tables =
                score_tables(&ds, config.embedding_dim, semantic.as_ref().map(|s| &s.0), graph.as_ref().map(|s| &s.0))?;
            let result = allocate(&ds, &config, &tables)?;
            let merit = config.merit_weights(graph.is_some())?;
            let plan_dir = dir_of(&out);
            let doc = PlanDocument {
                plan: result.selected,
                objective_weights: result.weights,
                merit,
                diversity: config.diversity_spec(&ds)?,
                embedding_dim: config.embedding_dim,
                semantic_embeddings: semantic.map(|s| relative_to(&s.1, &plan_dir)),
                graph_embeddings: graph.map(|s| relative_to(&s.1, &plan_dir)),
                top_roles: top_roles(&tables, &merit)?,
            };
            write(&out, &doc.to_json())?;
            write(&out.with_extension("front.json"), &result.front.to_json())?;
            write(&out.with_extension("trace.csv"), &result.front.trace_csv())
        }
        Command::Explain { data, plan, candidate, role } => {
            let ds = read_dataset(&data)?;
            let doc: PlanDocument = read_json(&plan)?;
            let base = dir_of(&plan);
            let semantic = load_store(&doc.semantic_embeddings, &base)?;
            let graph = load_store(&doc.graph_embeddings, &base)?;
            let tables =
                score_tables(&ds, doc.embedding_dim, semantic.as_ref().map(|s| &s.0), graph.as_ref().map(|s| &s.0))?;
            let shap = ShapConfig::default();
            let ctx = ExplainContext {
                dataset: &ds,
                tables: &tables,
                merit_weights: &doc.merit,
                objective_weights: doc.objective_weights,
                diversity: &doc.diversity,
                plan: &doc.plan,
                shap: &shap,
            };
            print_json(&explain_allocation(&candidate, &role, &ctx)?)
        }
        Command::Index { embeddings, out, nlist, m, iters, seed } => {
            let store = EmbeddingStore::read(&embeddings)?;
            let vectors: Vec<(String, Vec<f64>)> = store.iter().map(|(id, v)| (id.clone(), v.values().to_vec())).collect();
            let index = build_ivfpq(&vectors, &IvfPqConfig { nlist, m, kmeans_iters: iters, seed })?;
            index.save(&out)
        }
        Command::Query { index, vector, k, nprobe, rerank } => {
            let index = IvfPqIndex::load(&index)?;
            let text = fs::read_to_string(&vector)
                .map_err(|e| GesaError::Format(format!("cannot read {}: {e}", vector.display())))?;
            print_json(&index.query(&parse_vector(&text)?, k, nprobe, rerank)?)
        }
        Command::Eval { data, plan, k } => {
            let ds = read_dataset(&data)?;
            let doc: PlanDocument = read_json(&plan)?;
            emit(&evaluate_plan(&ds, &doc, k)?.to_json())
        }
        Command::Serve { data_dir, port } => {
            let (env_root, env_port) = gesa_server::env_config().map_err(GesaError::InvalidArgument)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(gesa_server::serve(data_dir.unwrap_or(env_root), port.unwrap_or(env_port)))?;
            Ok(())
        }
    }
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| GesaError::Format(format!("query vector: {e}")));
    }
    trimmed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| GesaError::Format(format!("query vector: `{s}`: {e}"))))
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
