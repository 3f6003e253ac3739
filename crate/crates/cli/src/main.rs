//! `latr`: build, search and analyse late-interaction indexes.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad or missing input),
//! 2 internal error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use latr_core::embedding_io::{
    self, read_jsonl, synthetic_corpus, synthetic_embed, tokenize, SyntheticConfig,
};
use latr_core::eval::{
    bench, centroid_cdf, compute_metrics, default_kprime_grid, default_self_recall_ks,
    format_results_tsv, parse_results_tsv, self_recall_curve, QrelsTable,
};
use latr_core::{
    build_index, load_index, save_index, search, CompressedIndex, IndexConfig, LoadMode,
    QueryMatrix, SearchParams,
};

#[derive(Parser)]
#[command(name = "latr", version, about = "Late-interaction retrieval over a compressed token index")]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an index from an embedding file and its doclens file.
    Index(IndexArgs),
    /// Run queries and write ranked results as TSV.
    Search(SearchArgs),
    /// MRR@10, Recall@k and Success@5 of a results TSV against qrels.
    Metrics(MetricsArgs),
    /// Recall of exhaustive top-k inside centroid-only top-k', as CSV.
    Selfrecall(SelfRecallArgs),
    /// Per-query sorted maximum centroid scores with CDF heights, as CSV.
    CentroidCdf(CdfArgs),
    /// Per-stage latency, minimum over trials of the per-query average.
    Bench(BenchArgs),
    /// Embed a JSONL text file with the synthetic token embedder.
    Embed(EmbedArgs),
    /// Generate a clustered synthetic corpus, queries and qrels.
    Synth(SynthArgs),
}

fn parse_nbits(s: &str) -> Result<u8, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err(format!("nbits must be 1, 2 or 4, got {s}")),
    }
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    doclens: PathBuf,
    #[arg(long, value_parser = parse_nbits)]
    nbits: u8,
    /// Number of centroids; 0 or absent picks one automatically.
    #[arg(long, default_value_t = 0)]
    centroids: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    kmeans_iters: usize,
    /// Fraction of embeddings used to train centroids.
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// JSONL (`id`, `text`) embedded synthetically, or an embedding file.
    #[arg(long)]
    queries: PathBuf,
    /// Token counts per query when `--queries` is an embedding file.
    #[arg(long)]
    query_lens: Option<PathBuf>,
    /// One query ID per line when `--queries` is an embedding file
    /// (default: 0, 1, 2, ...).
    #[arg(long)]
    query_ids: Option<PathBuf>,
    /// Synthetic embedder seed for JSONL queries.
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    /// Memory-map residuals instead of reading them up front.
    #[arg(long)]
    lazy: bool,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    tcs: Option<f64>,
    #[arg(long)]
    ndocs: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    q: QueryArgs,
    #[command(flatten)]
    stages: StageArgs,
    /// Run queries concurrently (output order is unchanged).
    #[arg(long)]
    parallel_queries: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000])]
    cuts: Vec<usize>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelfRecallArgs {
    #[command(flatten)]
    q: QueryArgs,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    kprimes: Option<Vec<usize>>,
    /// Centroids probed per query token (default: all).
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CdfArgs {
    #[command(flatten)]
    q: QueryArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    q: QueryArgs,
    #[command(flatten)]
    stages: StageArgs,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Skip stages 2-3 and decompress every Stage-1 candidate.
    #[arg(long)]
    no_filter: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_embeddings: PathBuf,
    #[arg(long)]
    out_doclens: PathBuf,
    /// Record IDs, one per line, in row order.
    #[arg(long)]
    out_ids: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    passages: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    vocab: usize,
    #[arg(long, default_value_t = 50)]
    topics: usize,
    #[arg(long, default_value_t = 32)]
    queries: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes corpus.emb, corpus.doclens, queries.emb, queries.lens, qrels.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        // Errors raised while reading or validating inputs are the caller's.
        let code = if err.chain().any(|e| e.is::<latr_core::Error>()) || err.is::<UserError>() {
            1
        } else {
            2
        };
        Failure { code, err }
    }
}

#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
        Err(_) => ExitCode::from(2),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(user("--threads must be at least 1").into());
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| dispatch(cli.cmd)).map_err(Failure::from)
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Index(a) => cmd_index(a),
        Cmd::Search(a) => cmd_search(a),
        Cmd::Metrics(a) => cmd_metrics(a),
        Cmd::Selfrecall(a) => cmd_selfrecall(a),
        Cmd::CentroidCdf(a) => cmd_centroid_cdf(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Embed(a) => cmd_embed(a),
        Cmd::Synth(a) => cmd_synth(a),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| user(format!("writing {}: {e}", p.display()))),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_index(a: IndexArgs) -> anyhow::Result<()> {
    let corpus = embedding_io::load_corpus(&a.embeddings, &a.doclens)?;
    let cfg = IndexConfig {
        nbits: a.nbits,
        num_centroids: a.centroids,
        kmeans_iters: a.kmeans_iters,
        sample_fraction: a.sample_fraction,
        rng_seed: a.seed,
    };
    let index = build_index(&corpus, &cfg)?;
    let manifest = save_index(&index, &a.out)?;
    println!(
        "indexed {} passages, {} embeddings, dim {}, {} centroids, {} bits -> {}",
        manifest.num_passages,
        manifest.num_embeddings,
        manifest.dim,
        manifest.num_centroids,
        manifest.nbits,
        a.out.display()
    );
    for (name, entry) in &manifest.files {
        println!("  {name}\t{} bytes\tsha256 {}", entry.bytes, entry.sha256);
    }
    Ok(())
}

fn load(q: &QueryArgs) -> anyhow::Result<(CompressedIndex, Vec<String>, Vec<QueryMatrix>)> {
    let mode = if q.lazy { LoadMode::Lazy } else { LoadMode::Eager };
    let index = load_index(&q.index, mode)?;
    let (ids, queries) = read_queries(q, index.dim())?;
    Ok((index, ids, queries))
}

fn read_queries(q: &QueryArgs, dim: usize) -> anyhow::Result<(Vec<String>, Vec<QueryMatrix>)> {
    let is_jsonl = q.queries.extension().is_some_and(|e| e == "jsonl");
    if is_jsonl {
        let mut ids = Vec::new();
        let mut out = Vec::new();
        for rec in read_jsonl(&q.queries)? {
            let toks = tokenize(&rec.text);
            if toks.is_empty() {
                return Err(user(format!("query {} has no tokens", rec.id)));
            }
            let m = synthetic_embed::<f32, _>(&toks, dim, q.embed_seed)?;
            out.push(QueryMatrix::new(m.rows(), dim, m.into_vec())?);
            ids.push(rec.id);
        }
        return Ok((ids, out));
    }
    let Some(lens) = &q.query_lens else {
        return Err(user("--query-lens is required when --queries is an embedding file"));
    };
    let m = embedding_io::read_embeddings(&q.queries)?;
    let lens = embedding_io::read_doclens(lens)?;
    let total: usize = lens.iter().map(|&l| l as usize).sum();
    if total != m.rows() {
        return Err(user(format!(
            "query lengths sum to {total} but the query file has {} rows",
            m.rows()
        )));
    }
    let ids: Vec<String> = match &q.query_ids {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| user(format!("reading {}: {e}", p.display())))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => (0..lens.len()).map(|i| i.to_string()).collect(),
    };
    if ids.len() != lens.len() {
        return Err(user(format!("{} query IDs for {} queries", ids.len(), lens.len())));
    }
    let d = m.dim();
    let mut out = Vec::with_capacity(lens.len());
    let mut row = 0;
    for &l in &lens {
        let l = l as usize;
        out.push(QueryMatrix::new(l, d, m.as_slice()[row * d..(row + l) * d].to_vec())?);
        row += l;
    }
    Ok((ids, out))
}

/// Defaults for `k` with every flag override applied. Defaults are clamped to
/// the index; a `k` covering the whole corpus probes every centroid so that
/// every passage is ranked.
fn stage_params(s: &StageArgs, index: &CompressedIndex) -> SearchParams {
    let mut p = SearchParams::for_k(s.k);
    p.nprobe = p.nprobe.min(index.num_centroids());
    if s.k >= index.num_passages() {
        p.nprobe = index.num_centroids();
    }
    if let Some(n) = s.nprobe {
        p.nprobe = n;
    }
    if let Some(t) = s.tcs {
        p.t_cs = t;
    }
    if let Some(d) = s.ndocs {
        p.ndocs = d;
    }
    p
}

fn cmd_search(a: SearchArgs) -> anyhow::Result<()> {
    let (index, ids, queries) = load(&a.q)?;
    let params = stage_params(&a.stages, &index);
    params.validate(index.num_centroids())?;
    let run = |q: &QueryMatrix| search(q, &index, &params).map(|o| o.results);
    let results: Vec<_> = if a.parallel_queries {
        queries.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        queries.iter().map(run).collect::<Result<_, _>>()?
    };
    let tsv = format_results_tsv(ids.iter().map(String::as_str).zip(&results));
    write_output(Some(&a.out), &tsv)
}

fn cmd_metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.results)
        .map_err(|e| user(format!("reading {}: {e}", a.results.display())))?;
    let results = parse_results_tsv(&text)?;
    let qrels = QrelsTable::read(&a.qrels)?;
    let report = compute_metrics(&results, &qrels, &a.cuts)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_output(a.out.as_deref(), &json)
}

fn cmd_selfrecall(a: SelfRecallArgs) -> anyhow::Result<()> {
    let (index, _, queries) = load(&a.q)?;
    let n = index.num_passages();
    let ks = a.ks.clone().unwrap_or_else(|| default_self_recall_ks(n));
    let nprobe = a.nprobe.unwrap_or(index.num_centroids());
    let grid = |k: usize| match &a.kprimes {
        Some(g) => g.clone(),
        None => default_kprime_grid(k, n),
    };
    if let Some(bad) = a.kprimes.iter().flatten().find(|&&kp| kp == 0) {
        bail!(user(format!("k' must be positive, got {bad}")));
    }
    let curve = self_recall_curve(&index, &queries, &ks, grid, nprobe)?;
    let mut csv = String::from("k,kprime,recall\n");
    for p in curve {
        csv.push_str(&format!("{},{},{:.6}\n", p.k, p.kprime, p.recall));
    }
    write_output(a.out.as_deref(), &csv)
}

fn cmd_centroid_cdf(a: CdfArgs) -> anyhow::Result<()> {
    let (index, ids, queries) = load(&a.q)?;
    let mut csv = String::from("query_id,score,cdf\n");
    for p in centroid_cdf(&index, &queries)? {
        csv.push_str(&format!("{},{:.6},{:.6}\n", ids[p.query], p.score, p.cdf));
    }
    write_output(a.out.as_deref(), &csv)
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let (index, _, queries) = load(&a.q)?;
    let params = stage_params(&a.stages, &index);
    params.validate(index.num_centroids())?;
    if a.trials == 0 {
        bail!(user("--trials must be at least 1"));
    }
    let report = bench(&index, &queries, &params, a.trials, !a.no_filter)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_output(a.out.as_deref(), &json)
}

fn cmd_embed(a: EmbedArgs) -> anyhow::Result<()> {
    let records = read_jsonl(&a.input)?;
    let mut data = Vec::new();
    let mut doclens = Vec::with_capacity(records.len());
    for rec in &records {
        let toks = tokenize(&rec.text);
        if toks.is_empty() {
            bail!(user(format!("record {} has no tokens", rec.id)));
        }
        let m = synthetic_embed::<f32, _>(&toks, a.dim, a.seed)?;
        doclens.push(m.rows() as u32);
        data.extend_from_slice(m.as_slice());
    }
    embedding_io::write_embeddings(&a.out_embeddings, a.dim, &data)?;
    embedding_io::write_doclens(&a.out_doclens, &doclens)?;
    if let Some(p) = &a.out_ids {
        let ids: String = records.iter().map(|r| format!("{}\n", r.id)).collect();
        write_output(Some(p), &ids)?;
    }
    println!("embedded {} records, {} tokens, dim {}", records.len(), data.len() / a.dim, a.dim);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SyntheticConfig {
        num_passages: a.passages,
        dim: a.dim,
        vocab_size: a.vocab,
        num_topics: a.topics,
        num_queries: a.queries,
        noise: a.noise,
        seed: a.seed,
        ..Default::default()
    };
    let s = synthetic_corpus(&cfg)?;
    fs::create_dir_all(&a.out_dir)
        .map_err(|e| user(format!("creating {}: {e}", a.out_dir.display())))?;
    let d = &a.out_dir;
    embedding_io::write_embeddings(d.join("corpus.emb"), a.dim, s.corpus.as_slice())?;
    embedding_io::write_doclens(d.join("corpus.doclens"), s.corpus.doclens())?;
    let qdata: Vec<f32> = s.queries.iter().flat_map(|q| q.as_slice().iter().copied()).collect();
    let qlens: Vec<u32> = s.queries.iter().map(|q| q.rows() as u32).collect();
    embedding_io::write_embeddings(d.join("queries.emb"), a.dim, &qdata)?;
    embedding_io::write_doclens(d.join("queries.lens"), &qlens)?;
    let qrels: String = s
        .query_targets
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i} 0 {t} 1\n"))
        .collect();
    write_output(Some(&d.join("qrels.tsv")), &qrels)?;
    println!(
        "wrote {} passages, {} embeddings, {} queries to {}",
        s.corpus.num_passages(),
        s.corpus.num_embeddings(),
        s.queries.len(),
        d.display()
    );
    Ok(())
}
