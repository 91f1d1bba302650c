use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::info;
use prf_core::evaluation::{evaluate, EvalReport, Metric, MetricConfig};
use prf_core::lexical::{load_queries, write_tsv, Bm25Params, Corpus, InvertedIndex, Query};
use prf_core::pipelines::{
    build_dense_store, measure_latency, Flow, Pipeline, PipelineConfig, Resources, TextPrfConfig,
};
use prf_core::prf_text::WindowSpec;
use prf_core::prf_vector::{PrfVectorConfig, VectorFusion};
use prf_core::scorer::{LocalScorer, ModelProfile, RemoteScorer, Scorer};
use prf_core::sweep::{parse_depth_grid, parse_list, parse_real_grid, run_sweep, SweepGrid, SweepRequest};
use prf_core::synthetic::{generate, SyntheticConfig};
use prf_core::trec::{load_qrels, load_run, save_run, write_qrels};
use prf_core::{EmbeddingStore, Error, RankedList, VectorIndex};

use crate::{
    Backend, BackendArgs, BenchFlow, Cli, Command, Fusion, InputArgs, JudgingArgs, PrfArgs, RerankFlow, RetrieveFlow,
    RunArgs, SweepFlow, UsageError,
};

const LOCAL_DEFAULT_DIM: usize = 128;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::IndexLexical { corpus, out } => index_lexical(&corpus, &out),
        Command::IndexDense { corpus, backend, out } => index_dense(&corpus, &backend, seed, &out),
        Command::Retrieve {
            flow,
            inputs,
            backend,
            prf,
            run,
            out,
        } => {
            let flow = match flow {
                RetrieveFlow::Lexical => Flow::LexicalOnly,
                RetrieveFlow::Dense => Flow::DenseRetrieve,
                RetrieveFlow::DensePrf => Flow::DenseRetrievePrf(vector_config(&prf)?),
            };
            produce_run(flow, &inputs, &backend, &run, seed, &out)
        }
        Command::Rerank {
            flow,
            inputs,
            backend,
            prf,
            run,
            out,
        } => {
            let flow = match flow {
                RerankFlow::Plain => Flow::Rerank,
                RerankFlow::TextPrf => Flow::RerankTextPrf(text_config(&prf)?),
                RerankFlow::VectorPrf => Flow::RerankVectorPrf(vector_config(&prf)?),
            };
            produce_run(flow, &inputs, &backend, &run, seed, &out)
        }
        Command::Sweep {
            flow,
            inputs,
            backend,
            prf,
            run,
            qrels,
            k_grid,
            alpha_grid,
            beta_grid,
            handling_grid,
            aggregate_grid,
            metrics,
            metric,
            judging,
            no_runs,
            out,
        } => {
            let flow = match flow {
                SweepFlow::DensePrf => Flow::DenseRetrievePrf(vector_config(&prf)?),
                SweepFlow::RerankTextPrf => Flow::RerankTextPrf(text_config(&prf)?),
                SweepFlow::RerankVectorPrf => Flow::RerankVectorPrf(vector_config(&prf)?),
            };
            let grid = SweepGrid {
                depths: parse_depth_grid(&k_grid)?,
                alphas: parse_real_grid(&alpha_grid)?,
                betas: parse_real_grid(&beta_grid)?,
                handlings: parse_list(&handling_grid)?,
                aggregations: parse_list(&aggregate_grid)?,
            };
            let metrics = Metric::parse_list(&metrics)?;
            let ctx = SweepContext {
                qrels: &qrels,
                metrics: &metrics,
                sort_metric: metric,
                judging: &judging,
                write_runs: !no_runs,
                out: &out,
            };
            sweep(flow, &grid, &inputs, &backend, &run, seed, &ctx)
        }
        Command::Eval {
            run,
            qrels,
            metrics,
            judging,
            baseline,
            out,
        } => eval(&run, &qrels, &metrics, &judging, baseline.as_deref(), out.as_deref()),
        Command::Bench {
            flow,
            inputs,
            backend,
            prf,
            run,
            repetitions,
            out,
        } => {
            let flow = match flow {
                BenchFlow::Lexical => Flow::LexicalOnly,
                BenchFlow::Dense => Flow::DenseRetrieve,
                BenchFlow::DensePrf => Flow::DenseRetrievePrf(vector_config(&prf)?),
                BenchFlow::Rerank => Flow::Rerank,
                BenchFlow::RerankTextPrf => Flow::RerankTextPrf(text_config(&prf)?),
                BenchFlow::RerankVectorPrf => Flow::RerankVectorPrf(vector_config(&prf)?),
            };
            bench(flow, &inputs, &backend, &run, seed, repetitions, out.as_deref())
        }
        Command::ServeCheck { url, timeout_secs } => serve_check(&url, timeout_secs),
        Command::Synth {
            passages,
            queries,
            topics,
            out,
        } => synth(passages, queries, topics, seed, &out),
    }
}

fn vector_config(prf: &PrfArgs) -> Result<PrfVectorConfig> {
    if prf.prf_depth == 0 {
        bail!(UsageError("--prf-depth must be at least 1".into()));
    }
    let fusion = match prf.fusion {
        Fusion::Average => VectorFusion::Average,
        Fusion::Rocchio => VectorFusion::Rocchio {
            alpha: prf.alpha,
            beta: prf.beta,
        },
    };
    Ok(PrfVectorConfig {
        fusion,
        depth: prf.prf_depth,
    })
}

fn text_config(prf: &PrfArgs) -> Result<TextPrfConfig> {
    if prf.prf_depth == 0 {
        bail!(UsageError("--prf-depth must be at least 1".into()));
    }
    Ok(TextPrfConfig {
        handling: prf.text_handling,
        aggregation: prf.aggregate,
        depth: prf.prf_depth,
        window: WindowSpec::new(prf.window_size, prf.stride).context("--window-size/--stride")?,
    })
}

fn pipeline_config(run: &RunArgs, profile: ModelProfile) -> PipelineConfig {
    PipelineConfig {
        first_stage_k: run.first_stage_k,
        bm25: Bm25Params {
            k1: run.bm25_k1,
            b: run.bm25_b,
        },
        profile,
        run_tag: run.run_tag.clone(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let corpus = Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))?;
    info!("loaded {} passages from {}", corpus.len(), path.display());
    Ok(corpus)
}

fn make_scorer(args: &BackendArgs, seed: u64, store_dim: Option<usize>) -> Result<Box<dyn Scorer>> {
    match args.backend {
        Backend::Local => {
            let dim = args.dim.or(store_dim).unwrap_or(LOCAL_DEFAULT_DIM);
            if let Some(s) = store_dim.filter(|&s| s != dim) {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    actual: dim,
                })
                .context("--dim disagrees with the embedding store");
            }
            Ok(Box::new(LocalScorer::new(dim, seed).context("local backend")?))
        }
        Backend::Remote => {
            let timeout = Duration::from_secs(args.timeout_secs);
            let remote = RemoteScorer::connect(&args.url, args.batch_size, timeout)
                .with_context(|| format!("connecting to model server {}", args.url))?;
            let remote_dim = remote.dim();
            for (what, want) in [("--dim", args.dim), ("embedding store", store_dim)] {
                if let Some(want) = want.filter(|&w| w != remote_dim) {
                    return Err(Error::Protocol(format!(
                        "{what} is {want} but the model server at {} reports dim {remote_dim}",
                        args.url
                    ))
                    .into());
                }
            }
            info!("remote backend {} (dim {remote_dim})", args.url);
            Ok(Box::new(remote))
        }
    }
}

fn index_lexical(corpus_path: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_path)?;
    let index = InvertedIndex::build(corpus.iter()).context("building lexical index")?;
    index.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "indexed {} passages ({} terms) -> {}",
        index.doc_count(),
        index.term_count(),
        out.display()
    );
    Ok(())
}

fn index_dense(corpus_path: &Path, backend: &BackendArgs, seed: u64, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_path)?;
    let scorer = make_scorer(backend, seed, None)?;
    let store = build_dense_store(scorer.as_ref(), &corpus, backend.profile).context("embedding passages")?;
    store.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "embedded {} passages (dim {}) -> {}",
        store.count(),
        store.dim(),
        out.display()
    );
    Ok(())
}

/// Everything a flow may borrow from; only what the flow needs is loaded.
struct Loaded {
    queries: Vec<Query>,
    corpus: Option<Corpus>,
    index: Option<InvertedIndex>,
    store: Option<EmbeddingStore>,
    scorer: Option<Box<dyn Scorer>>,
}

impl Loaded {
    fn resources(&self) -> Resources<'_> {
        Resources {
            corpus: self.corpus.as_ref(),
            lexical: self.index.as_ref(),
            vectors: self.store.as_ref().map(|s| s as &dyn VectorIndex),
            scorer: self.scorer.as_deref(),
        }
    }
}

fn load_inputs(flow: Flow, inputs: &InputArgs, backend: &BackendArgs, seed: u64) -> Result<Loaded> {
    let lexical = matches!(
        flow,
        Flow::LexicalOnly | Flow::Rerank | Flow::RerankTextPrf(_) | Flow::RerankVectorPrf(_)
    );
    let needs_corpus = lexical && flow != Flow::LexicalOnly;
    let needs_store = matches!(
        flow,
        Flow::DenseRetrieve | Flow::DenseRetrievePrf(_) | Flow::RerankVectorPrf(_)
    );
    if needs_corpus && inputs.corpus.is_none() {
        bail!(UsageError(format!("flow {flow} needs --corpus")));
    }
    if lexical && inputs.corpus.is_none() && inputs.index.is_none() {
        bail!(UsageError(format!("flow {flow} needs --index or --corpus")));
    }
    if needs_store && inputs.store.is_none() {
        bail!(UsageError(format!("flow {flow} needs --store")));
    }

    let queries =
        load_queries(&inputs.queries).with_context(|| format!("loading queries {}", inputs.queries.display()))?;
    info!("loaded {} queries", queries.len());
    let corpus = match &inputs.corpus {
        Some(p) if lexical => Some(load_corpus(p)?),
        _ => None,
    };
    let index = if !lexical {
        None
    } else if let Some(p) = &inputs.index {
        let index = InvertedIndex::load(p).with_context(|| format!("loading lexical index {}", p.display()))?;
        Some(index)
    } else {
        let corpus = corpus.as_ref().expect("checked above");
        Some(InvertedIndex::build(corpus.iter()).context("building lexical index")?)
    };
    let store = match &inputs.store {
        Some(p) if needs_store => {
            let store = EmbeddingStore::load(p).with_context(|| format!("loading embedding store {}", p.display()))?;
            info!("loaded {} vectors (dim {})", store.count(), store.dim());
            Some(store)
        }
        _ => None,
    };
    let scorer = if flow == Flow::LexicalOnly {
        None
    } else {
        Some(make_scorer(backend, seed, store.as_ref().map(EmbeddingStore::dim))?)
    };
    Ok(Loaded {
        queries,
        corpus,
        index,
        store,
        scorer,
    })
}

fn produce_run(
    flow: Flow,
    inputs: &InputArgs,
    backend: &BackendArgs,
    run: &RunArgs,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let loaded = load_inputs(flow, inputs, backend, seed)?;
    let config = pipeline_config(run, backend.profile);
    let pipeline = Pipeline::new(flow, config, loaded.resources()).context("configuring pipeline")?;
    let output = pipeline
        .run(&loaded.queries)
        .with_context(|| format!("running flow {flow}"))?;
    save_run(out, &output.runs, &run.run_tag).with_context(|| format!("writing run {}", out.display()))?;
    let empty = output.runs.iter().filter(|r| r.is_empty()).count();
    println!(
        "{flow}: {} queries ({empty} empty) -> {}",
        output.runs.len(),
        out.display()
    );
    Ok(())
}

struct SweepContext<'a> {
    qrels: &'a Path,
    metrics: &'a [Metric],
    sort_metric: Metric,
    judging: &'a JudgingArgs,
    write_runs: bool,
    out: &'a Path,
}

fn metric_config(judging: &JudgingArgs) -> MetricConfig {
    MetricConfig {
        binary_threshold: judging.threshold,
        eval_depth: judging.depth,
    }
}

fn sweep(
    flow: Flow,
    grid: &SweepGrid,
    inputs: &InputArgs,
    backend: &BackendArgs,
    run: &RunArgs,
    seed: u64,
    ctx: &SweepContext<'_>,
) -> Result<()> {
    let judgments = load_qrels(ctx.qrels).with_context(|| format!("loading qrels {}", ctx.qrels.display()))?;
    let loaded = load_inputs(flow, inputs, backend, seed)?;
    let pipeline = Pipeline::new(flow, pipeline_config(run, backend.profile), loaded.resources())
        .context("configuring pipeline")?;
    fs::create_dir_all(ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let req = SweepRequest {
        queries: &loaded.queries,
        judgments: &judgments,
        metrics: ctx.metrics,
        metric_config: metric_config(ctx.judging),
        sort_metric: ctx.sort_metric,
        run_dir: ctx.write_runs.then_some(ctx.out),
    };
    let report = run_sweep(&pipeline, grid, &req).with_context(|| format!("sweeping flow {flow}"))?;
    let csv = ctx.out.join("sweep.csv");
    let mut w = create(&csv)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(best) = report.best() {
        println!(
            "{} grid points; best {} = {:.4} at {} -> {}",
            report.outcomes.len(),
            ctx.sort_metric,
            best.report.mean(ctx.sort_metric).unwrap_or(0.0),
            best.point,
            csv.display()
        );
    }
    Ok(())
}

fn eval(
    run: &Path,
    qrels: &Path,
    metrics: &str,
    judging: &JudgingArgs,
    baseline: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let metrics = Metric::parse_list(metrics)?;
    let judgments = load_qrels(qrels).with_context(|| format!("loading qrels {}", qrels.display()))?;
    let config = metric_config(judging);
    let evaluate_file = |path: &Path| -> Result<EvalReport> {
        let runs: Vec<RankedList> = load_run(path).with_context(|| format!("loading run {}", path.display()))?;
        evaluate(&runs, &judgments, &metrics, &config).with_context(|| format!("evaluating {}", path.display()))
    };
    let report = evaluate_file(run)?;
    if !report.skipped.is_empty() {
        info!("{} queries without relevant judgments skipped", report.skipped.len());
    }
    match out {
        Some(path) => {
            let mut w = create(path)?;
            report.write_csv(&mut w)?;
            w.flush()?;
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    if let Some(base_path) = baseline {
        let base = evaluate_file(base_path)?;
        for m in &metrics {
            let t = report.compare(&base, *m).with_context(|| format!("t-test on {m}"))?;
            println!(
                "{m}: {:.4} vs {:.4}  t={:.4} p={:.4} (df {})",
                report.mean(*m).unwrap_or(0.0),
                base.mean(*m).unwrap_or(0.0),
                t.t,
                t.p,
                t.df
            );
        }
    }
    Ok(())
}

fn bench(
    flow: Flow,
    inputs: &InputArgs,
    backend: &BackendArgs,
    run: &RunArgs,
    seed: u64,
    repetitions: usize,
    out: Option<&Path>,
) -> Result<()> {
    if repetitions == 0 {
        bail!(UsageError("--repetitions must be at least 1".into()));
    }
    let loaded = load_inputs(flow, inputs, backend, seed)?;
    let pipeline = Pipeline::new(flow, pipeline_config(run, backend.profile), loaded.resources())
        .context("configuring pipeline")?;
    let s = measure_latency(&pipeline, &loaded.queries, repetitions).with_context(|| format!("timing flow {flow}"))?;
    println!("flow {}: {} queries x {} repetitions", s.flow, s.queries, s.repetitions);
    println!(
        "total ms/q: mean {:.3}  median {:.3}  p95 {:.3}",
        s.mean_total_ms, s.median_total_ms, s.p95_total_ms
    );
    println!(
        "stage ms/q: first_stage {:.3}  prf_build {:.3}  second_stage {:.3}",
        s.mean_first_stage_ms, s.mean_prf_build_ms, s.mean_second_stage_ms
    );
    if let Some(path) = out {
        let mut w = create(path)?;
        writeln!(
            w,
            "flow,queries,repetitions,mean_ms,median_ms,p95_ms,first_stage_ms,prf_build_ms,second_stage_ms"
        )?;
        writeln!(
            w,
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}",
            s.flow,
            s.queries,
            s.repetitions,
            s.mean_total_ms,
            s.median_total_ms,
            s.p95_total_ms,
            s.mean_first_stage_ms,
            s.mean_prf_build_ms,
            s.mean_second_stage_ms
        )?;
        w.flush()?;
    }
    Ok(())
}

fn serve_check(url: &str, timeout_secs: u64) -> Result<()> {
    let remote = RemoteScorer::with_options(url, 0, RemoteScorer::DEFAULT_CHUNK, Duration::from_secs(timeout_secs));
    let health = remote.health().with_context(|| format!("checking {url}"))?;
    println!(
        "{url}: status {} model {} dim {}",
        health.status, health.model, health.dim
    );
    Ok(())
}

fn synth(passages: usize, queries: usize, topics: usize, seed: u64, out: &Path) -> Result<()> {
    let config = SyntheticConfig {
        passages,
        queries,
        topics,
        seed,
        ..SyntheticConfig::default()
    };
    let bench = generate(&config).context("generating synthetic benchmark")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_tsv(
        out.join("corpus.tsv"),
        bench.corpus.iter().map(|(id, t)| (id.as_str(), t.as_str())),
    )?;
    write_tsv(
        out.join("queries.tsv"),
        bench.queries.iter().map(|q| (q.id.as_str(), q.text.as_str())),
    )?;
    let mut w = create(&out.join("qrels.txt"))?;
    write_qrels(&mut w, &bench.qrels)?;
    w.flush()?;
    println!(
        "wrote {} passages, {} queries, {} judgments to {}",
        bench.corpus.len(),
        bench.queries.len(),
        bench.qrels.len(),
        out.display()
    );
    Ok(())
}
