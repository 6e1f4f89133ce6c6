mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use streamgate_core::bench::{
    default_schemas, generate_workload_for, random_tuple, read_csv, run_benchmark, run_sequence,
    write_csv, Mode, SequenceKind, Stats, Summary, TimingRecord, WorkloadSpec,
};
use streamgate_core::engine::render_streamsql;
use streamgate_core::net::{Client, Server, Service};
use streamgate_core::policy::{obligations_to_graph, parse_obligations, PolicyStore};
use streamgate_core::predicate::analyze_merge;
use streamgate_core::querygraph::SchemaCatalog;
use streamgate_core::{
    merge_graphs_for, parse_predicate, Engine, Gateway, GatewayConfig, Policy, Proxy, UserQueryDoc,
};

use config::ConfigFile;

#[derive(Parser)]
#[command(
    name = "streamgate",
    version,
    about = "Access-controlled continuous queries over data streams"
)]
struct Cli {
    /// key = value file supplying defaults for any long option.
    #[arg(long, global = true, env = "STREAMGATE_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload and write it to a directory.
    Gen(GenArgs),
    /// Replay a workload and record per-request timings.
    Run(RunArgs),
    /// Summarize timing CSV files.
    Report(ReportArgs),
    /// Run a gateway (or a caching proxy) server.
    Serve(ServeArgs),
    /// Check a policy filter against a user filter, or merge documents.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Default)]
struct WorkloadArgs {
    #[arg(long)]
    n_direct_queries: Option<usize>,
    /// Seven weights for filter, map, aggregate, filter+map,
    /// filter+aggregate, map+aggregate and all three.
    #[arg(long, value_name = "W:W:W:W:W:W:W")]
    dist: Option<String>,
    #[arg(long)]
    n_policies: Option<usize>,
    #[arg(long)]
    n_requests: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_rank: Option<usize>,
    /// `unique` or `zipf`.
    #[arg(long)]
    sequence: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl WorkloadArgs {
    fn spec(&self, cfg: &ConfigFile) -> Result<WorkloadSpec> {
        let d = WorkloadSpec::default();
        let dist = match cfg.pick_opt(self.dist.clone(), "dist")? {
            Some(s) => parse_dist(&s)?,
            None => d.direct_query_dist,
        };
        let sequence = match cfg.pick_opt(self.sequence.clone(), "sequence")? {
            Some(s) => SequenceKind::parse(&s).ok_or_else(|| anyhow!("unknown sequence `{s}`"))?,
            None => d.sequence,
        };
        let spec = WorkloadSpec {
            n_direct_queries: cfg.pick(
                self.n_direct_queries,
                "n_direct_queries",
                d.n_direct_queries,
            )?,
            direct_query_dist: dist,
            n_policies: cfg.pick(self.n_policies, "n_policies", d.n_policies)?,
            n_requests: cfg.pick(self.n_requests, "n_requests", d.n_requests)?,
            zipf_alpha: cfg.pick(self.alpha, "alpha", d.zipf_alpha)?,
            max_rank: cfg.pick(self.max_rank, "max_rank", d.max_rank)?,
            sequence,
            seed: cfg.pick(self.seed, "seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_dist(s: &str) -> Result<[u32; 7]> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad distribution `{s}`"))?;
    parts
        .try_into()
        .map_err(|v: Vec<u32>| anyhow!("distribution needs 7 weights, got {}", v.len()))
}

fn spec_conf(spec: &WorkloadSpec) -> String {
    let dist: Vec<String> = spec.direct_query_dist.iter().map(u32::to_string).collect();
    format!(
        "n_direct_queries = {}\ndist = {}\nn_policies = {}\nn_requests = {}\nalpha = {}\nmax_rank = {}\nsequence = {}\nseed = {}\n",
        spec.n_direct_queries,
        dist.join(":"),
        spec.n_policies,
        spec.n_requests,
        spec.zipf_alpha,
        spec.max_rank,
        spec.sequence.name(),
        spec.seed
    )
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// `direct`, `gateway` or `proxy`.
    #[arg(long)]
    mode: Option<String>,
    /// Gateway server to run against; in-process when absent.
    #[arg(long, env = "STREAMGATE_ENDPOINT")]
    endpoint: Option<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Also write per-mode, per-phase statistics as CSV.
    #[arg(long)]
    aggregates: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "STREAMGATE_LISTEN")]
    listen: Option<String>,
    /// Forward to this gateway and cache handles instead of deciding locally.
    #[arg(long, env = "STREAMGATE_UPSTREAM")]
    proxy_for: Option<String>,
    /// Load every `*.xml` policy document in this directory.
    #[arg(long)]
    policies: Option<PathBuf>,
    /// Also load the policies of the workload described by the workload flags.
    #[arg(long)]
    workload_policies: bool,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Refuse partial-result merges instead of granting them with a warning.
    #[arg(long)]
    strict_pr: bool,
    /// Allow several concurrent queries per principal and stream.
    #[arg(long)]
    no_leak_guard: bool,
    /// Push this many random tuples per second into every stream.
    #[arg(long)]
    feed_hz: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Policy filter condition, e.g. "a > 8".
    #[arg(long, conflicts_with_all = ["policy_file", "query_file"])]
    policy: Option<String>,
    /// User filter condition, e.g. "a > 5".
    #[arg(long, requires = "policy")]
    user: Option<String>,
    /// Policy document (or bare obligations block).
    #[arg(long, requires = "query_file")]
    policy_file: Option<PathBuf>,
    /// User query document.
    #[arg(long)]
    query_file: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Gen(a) => gen(a, &cfg),
        Command::Run(a) => run(a, &cfg),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a, &cfg),
        Command::Analyze(a) => analyze(a),
    }
}

fn gen(args: GenArgs, cfg: &ConfigFile) -> Result<()> {
    let spec = args.workload.spec(cfg)?;
    let w = generate_workload_for(&spec, default_schemas())?;
    let out = &args.out;
    for sub in ["policies", "queries", "requests"] {
        fs::create_dir_all(out.join(sub))
            .with_context(|| format!("creating {}", out.join(sub).display()))?;
    }
    fs::write(out.join("workload.conf"), spec_conf(&spec))?;
    for p in &w.policies {
        fs::write(
            out.join("policies").join(format!("{}.xml", p.id)),
            p.to_xml(),
        )?;
    }
    let mut index = csv::Writer::from_path(out.join("queries").join("index.csv"))?;
    index.write_record(["query", "mix", "stream"])?;
    for (i, q) in w.direct_queries.iter().enumerate() {
        let name = format!("q{i:05}.sql");
        fs::write(out.join("queries").join(&name), &q.script)?;
        index.write_record([name, q.mix.to_string(), q.graph.source.clone()])?;
    }
    index.flush()?;
    let mut seq = csv::Writer::from_path(out.join("requests").join("sequence.csv"))?;
    seq.write_record(["request", "policy"])?;
    for (i, r) in w.requests.iter().enumerate() {
        let name = format!("r{i:05}.xml");
        fs::write(out.join("requests").join(&name), r.request.to_xml())?;
        seq.write_record([name, w.policies[r.policy].id.clone()])?;
    }
    seq.flush()?;
    println!(
        "wrote {} policies, {} queries, {} requests to {}",
        w.policies.len(),
        w.direct_queries.len(),
        w.requests.len(),
        out.display()
    );
    Ok(())
}

fn run(args: RunArgs, cfg: &ConfigFile) -> Result<()> {
    let spec = args.workload.spec(cfg)?;
    let mode_name = cfg.pick(args.mode.clone(), "mode", "gateway".to_string())?;
    let mode = Mode::parse(&mode_name).ok_or_else(|| anyhow!("unknown mode `{mode_name}`"))?;
    let endpoint = cfg.pick_opt(args.endpoint.clone(), "endpoint")?;
    let w = generate_workload_for(&spec, default_schemas())?;

    let started = Instant::now();
    let (records, loads) = match endpoint {
        None => {
            let r = run_benchmark(&w, mode)?;
            (r.records, Some(r.policy_load))
        }
        Some(addr) => {
            if mode == Mode::Direct {
                bail!("direct mode runs in-process only; drop --endpoint");
            }
            let client =
                Client::connect(addr.as_str()).with_context(|| format!("connecting to {addr}"))?;
            (run_sequence(&w, &client, mode)?, None)
        }
    };
    let elapsed = started.elapsed();

    match &args.out {
        Some(p) => write_csv(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            &records,
        )?,
        None => write_csv(io::stdout().lock(), &records)?,
    }
    let mut err = io::stderr().lock();
    writeln!(
        err,
        "mode: {mode}, sequence: {}, seed: {}",
        spec.sequence.name(),
        spec.seed
    )?;
    if let Some(l) = loads.and_then(|l| Stats::of(l)) {
        writeln!(
            err,
            "policy load: {} policies, mean {:.1} us, p99 {:.1} us",
            l.n, l.mean, l.p99
        )?;
    }
    write!(err, "{}", Summary::of(&records))?;
    writeln!(err, "wall time: {:.2} s", elapsed.as_secs_f64())?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut all: Vec<TimingRecord> = Vec::new();
    for p in &args.csv {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        all.extend(read_csv(f).with_context(|| format!("reading {}", p.display()))?);
    }
    let mut agg = match &args.aggregates {
        Some(p) => {
            let mut w = csv::Writer::from_path(p)?;
            w.write_record([
                "mode",
                "metric",
                "n",
                "mean_us",
                "stddev_us",
                "p50_us",
                "p90_us",
                "p99_us",
                "max_us",
            ])?;
            Some(w)
        }
        None => None,
    };
    for mode in Mode::ALL {
        let records: Vec<TimingRecord> = all.iter().filter(|r| r.mode == mode).cloned().collect();
        if records.is_empty() {
            continue;
        }
        let s = Summary::of(&records);
        println!("== {mode} ==\n{s}");
        if let Some(w) = agg.as_mut() {
            let metrics = [
                ("total", s.total),
                ("decision_merge", s.decision_and_merge),
                ("deploy", s.deploy),
                ("hit_total", s.hit_total),
                ("miss_total", s.miss_total),
            ];
            for (name, stats) in metrics {
                if let Some(st) = stats {
                    w.write_record([
                        mode.name().to_string(),
                        name.to_string(),
                        st.n.to_string(),
                        format!("{:.3}", st.mean),
                        format!("{:.3}", st.stddev),
                        format!("{:.3}", st.p50),
                        format!("{:.3}", st.p90),
                        format!("{:.3}", st.p99),
                        format!("{:.3}", st.max),
                    ])?;
                }
            }
        }
    }
    if let Some(mut w) = agg {
        w.flush()?;
    }
    Ok(())
}

fn load_policy_dir(gw: &Gateway, dir: &Path) -> Result<usize> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    paths.sort();
    for p in &paths {
        let doc = fs::read_to_string(p)?;
        let policy = Policy::from_xml(&doc).with_context(|| format!("parsing {}", p.display()))?;
        gw.load_policy(policy)
            .with_context(|| format!("loading {}", p.display()))?;
    }
    Ok(paths.len())
}

fn start_feed(engine: Arc<Engine>, hz: f64) {
    let period = Duration::from_secs_f64(1.0 / hz);
    for name in engine.stream_names() {
        let engine = engine.clone();
        let schema = engine.schema(&name).expect("registered");
        thread::spawn(move || {
            let mut rng = rand::rng();
            loop {
                let now = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_millis() as i64);
                if let Err(e) = engine.push(&name, random_tuple(&mut rng, &schema, now)) {
                    log::warn!("feed {name}: {e}");
                    return;
                }
                thread::sleep(period);
            }
        });
    }
}

fn serve(args: ServeArgs, cfg: &ConfigFile) -> Result<()> {
    let listen = cfg.pick(args.listen.clone(), "listen", "127.0.0.1:7878".to_string())?;
    let proxy_for = cfg.pick_opt(args.proxy_for.clone(), "proxy_for")?;

    let (service, what): (Arc<dyn Service>, String) = match proxy_for {
        Some(upstream) => {
            let client = Client::connect(upstream.as_str())
                .with_context(|| format!("connecting to {upstream}"))?;
            (
                Arc::new(Proxy::new(client)),
                format!("proxy for {upstream}"),
            )
        }
        None => {
            let host = listen.clone();
            let engine = Arc::new(Engine::new(host));
            for s in default_schemas() {
                engine.register_stream(s)?;
            }
            let config = GatewayConfig {
                leak_guard: !args.no_leak_guard,
                strict_pr: args.strict_pr,
            };
            let gw = Gateway::new(engine.clone(), Arc::new(PolicyStore::new()), config);
            let mut loaded = 0;
            if let Some(dir) = &args.policies {
                loaded += load_policy_dir(&gw, dir)?;
            }
            if args.workload_policies {
                let w = generate_workload_for(&args.workload.spec(cfg)?, default_schemas())?;
                for p in w.policies {
                    gw.load_policy(p)?;
                    loaded += 1;
                }
            }
            if let Some(hz) = cfg.pick_opt(args.feed_hz, "feed_hz")? {
                if !(hz > 0.0) {
                    bail!("--feed-hz must be positive");
                }
                start_feed(engine, hz);
            }
            (Arc::new(gw), format!("gateway with {loaded} policies"))
        }
    };
    let server =
        Server::spawn(listen.as_str(), service).with_context(|| format!("binding {listen}"))?;
    println!("listening on {} ({what})", server.local_addr());
    io::stdout().flush()?;
    server.join();
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    if let (Some(p), Some(u)) = (&args.policy, &args.user) {
        let w = analyze_merge(&parse_predicate(p)?, &parse_predicate(u)?)?;
        println!("verdict: {}", w.kind.code());
        if !w.explanation.is_empty() {
            println!("explanation: {}", w.explanation);
        }
        for (a, b) in &w.witnesses {
            println!("pair: ({a}, {b})");
        }
        return Ok(());
    }
    let (Some(pf), Some(qf)) = (&args.policy_file, &args.query_file) else {
        bail!("give --policy and --user, or --policy-file and --query-file");
    };
    let pdoc = fs::read_to_string(pf).with_context(|| format!("reading {}", pf.display()))?;
    let qdoc = fs::read_to_string(qf).with_context(|| format!("reading {}", qf.display()))?;
    let query = UserQueryDoc::from_xml(&qdoc)?;
    let schema = default_schemas()
        .into_iter()
        .find(|s| s.stream_name() == query.stream)
        .ok_or_else(|| anyhow!("unknown stream `{}`", query.stream))?;
    let obligations = match Policy::from_xml(&pdoc) {
        Ok(p) => p.obligations,
        Err(_) => parse_obligations(&pdoc)?,
    };
    let policy_graph = obligations_to_graph(&obligations, &schema)?;
    let user_graph = query.to_graph(&schema)?;
    let merged = merge_graphs_for(&schema, &policy_graph, &user_graph)?;
    println!("policy: {}", policy_graph.canonical_text());
    println!("user:   {}", user_graph.canonical_text());
    println!("verdict: {}", merged.warning.kind.code());
    if !merged.warning.explanation.is_empty() {
        println!("explanation: {}", merged.warning.explanation);
    }
    match merged.graph {
        Some(g) => {
            println!("merged: {}\n", g.canonical_text());
            print!("{}", render_streamsql(&g, &schema)?);
        }
        None => println!("merged: nothing deployable"),
    }
    Ok(())
}
