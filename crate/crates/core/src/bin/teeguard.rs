use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use teeguard::audio::{CorpusGenerator, GeneratorConfig};
use teeguard::classifier::io::{parse_corpus, render_corpus, write_model};
use teeguard::classifier::{train, Architecture, TrainConfig, DEFAULT_THRESHOLD};
use teeguard::pipeline::{run_pipeline_report, ClassifierKind, PipelineConfig};
use teeguard::relay::{Action, MockCloud};
use teeguard::trace::{
    build_task_graphs, emit_report, minimal_set, parse_inventory, parse_trace, CallGraph,
};

#[derive(Parser)]
#[command(
    name = "teeguard",
    version,
    about = "Secure peripheral pipeline simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run capture → classify → redact → relay end to end.
    Pipeline(PipelineArgs),
    /// Train a classifier on a labeled corpus.
    Train(TrainArgs),
    /// Write a generated `label<TAB>text` corpus.
    Corpus(CorpusArgs),
    /// Compute the minimal driver function set from call traces.
    Trace(TraceArgs),
    /// Run the mock cloud endpoint.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Write the redaction log, one `seq score label action` record per line.
    #[arg(long)]
    redaction_log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    frames_per_utterance: Option<usize>,
    /// `host:port` of the cloud endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    /// oracle, cnn, attention or hybrid.
    #[arg(long)]
    classifier: Option<ClassifierKind>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    action: Option<Action>,
    #[arg(long)]
    sensitivity: Option<f64>,
    #[arg(long)]
    cost_per_switch: Option<u64>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Model output path.
    #[arg(long, short)]
    out: PathBuf,
    /// Loss history, one mean loss per epoch; defaults to `<out>.loss`.
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long, default_value = "cnn")]
    architecture: Architecture,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    sensitivity: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    /// Function inventory, one name per line.
    #[arg(long)]
    inventory: PathBuf,
    /// Tasks to keep (repeatable or comma-separated); all traced tasks when omitted.
    #[arg(long = "task", value_delimiter = ',')]
    tasks: Vec<String>,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(required = true)]
    traces: Vec<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    /// On shutdown, write received payloads one per line.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Stop after this many packets instead of waiting for Ctrl-C.
    #[arg(long)]
    until: Option<usize>,
}

type CliResult = Result<(), String>;

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn pipeline(a: PipelineArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string())?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.utterances {
        cfg.utterances = v;
    }
    if let Some(v) = a.frames_per_utterance {
        cfg.frames_per_utterance = v;
    }
    if let Some(v) = a.endpoint {
        cfg.endpoint = v;
    }
    if let Some(v) = a.classifier {
        cfg.classifier.kind = v;
    }
    if let Some(v) = a.model {
        cfg.classifier.model = Some(v);
    }
    if let Some(v) = a.threshold {
        cfg.policy.threshold = v;
    }
    if let Some(v) = a.action {
        cfg.policy.action = v;
    }
    if let Some(v) = a.sensitivity {
        cfg.generator.sensitivity_probability = v;
    }
    if let Some(v) = a.cost_per_switch {
        cfg.cost_per_switch = v;
    }
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let report = run_pipeline_report(&cfg).map_err(|e| e.to_string())?;
    let m = &report.metrics;
    println!(
        "processed={} sensitive={} redacted={} forwarded={} switches={} cost_units={} bytes_sent={}",
        m.processed, m.sensitive, m.redacted, m.forwarded, m.switches, m.cost_units, m.bytes_sent
    );
    if let Some(p) = &a.metrics_out {
        write(p, m.to_json() + "\n")?;
    }
    if let Some(p) = &a.redaction_log {
        write(p, report.redaction_log.render())?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let corpus =
        parse_corpus(&read(&a.corpus)?).map_err(|e| format!("{}: {e}", a.corpus.display()))?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        architecture: a.architecture,
        lr: a.lr.unwrap_or(d.lr),
        epochs: a.epochs.unwrap_or(d.epochs),
        seed: a.seed.unwrap_or(d.seed),
        d: a.d.unwrap_or(d.d),
        filters: a.filters.unwrap_or(d.filters),
        width: a.width.unwrap_or(d.width),
        min_count: a.min_count.unwrap_or(d.min_count),
    };
    let (clf, history) =
        train(&cfg, &corpus).map_err(|e| format!("{}: {e}", a.corpus.display()))?;
    write(&a.out, write_model(&clf))?;
    let loss_path = a
        .loss_out
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss", a.out.display())));
    let mut text = String::new();
    for l in &history {
        text.push_str(&format!("{l:.9}\n"));
    }
    write(&loss_path, text)?;
    println!(
        "{}: {} examples, {} epochs, final loss {:.6}, train accuracy {:.4}",
        cfg.architecture,
        corpus.len(),
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        clf.accuracy(&corpus, DEFAULT_THRESHOLD)
    );
    Ok(())
}

fn corpus_cmd(a: CorpusArgs) -> CliResult {
    let mut g = GeneratorConfig::default();
    if let Some(p) = a.sensitivity {
        g.sensitivity_probability = p;
    }
    let corpus = CorpusGenerator::new(g, a.seed).corpus(a.count);
    write(&a.out, render_corpus(&corpus))
}

fn trace_cmd(a: TraceArgs) -> CliResult {
    let inventory = parse_inventory(&read(&a.inventory)?)
        .map_err(|e| format!("{}: {e}", a.inventory.display()))?;
    let mut graphs: BTreeMap<String, CallGraph> = BTreeMap::new();
    for path in &a.traces {
        let ctx = |e: teeguard::trace::TraceError| format!("{}: {e}", path.display());
        let events = parse_trace(&read(path)?).map_err(ctx)?;
        for (task, g) in build_task_graphs(&events).map_err(ctx)? {
            graphs.entry(task).or_default().merge(&g);
        }
    }
    let tasks: Vec<String> = if a.tasks.is_empty() {
        graphs.keys().cloned().collect()
    } else {
        a.tasks
    };
    let required = minimal_set(&graphs, &tasks).map_err(|e| e.to_string())?;
    let report =
        emit_report(&inventory, &required).map_err(|e| format!("{e} (stale inventory?)"))?;
    match &a.out {
        Some(p) => {
            write(p, report.render())?;
            println!(
                "tasks={} required={} excluded={} ratio={:.4}",
                tasks.join(","),
                report.required.len(),
                report.excluded.len(),
                report.reduction_ratio
            );
        }
        None => print!("{}", report.render()),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let cloud = MockCloud::serve(&a.bind).map_err(|e| e.to_string())?;
    println!("listening on {}", cloud.local_addr());
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
            .map_err(|e| e.to_string())?;
    }
    while !stop.load(Ordering::SeqCst) && a.until.is_none_or(|n| cloud.received().len() < n) {
        std::thread::sleep(Duration::from_millis(20));
    }
    let naks = cloud.nak_count();
    let packets = cloud.shutdown();
    let bytes: usize = packets.iter().map(|p| p.payload.len()).sum();
    println!(
        "received {} packets ({} payload bytes, {} rejected)",
        packets.len(),
        bytes,
        naks
    );
    if let Some(p) = &a.dump {
        let mut text = String::new();
        for pk in &packets {
            text.push_str(&String::from_utf8_lossy(&pk.payload));
            text.push('\n');
        }
        write(p, text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pipeline(a) => pipeline(a),
        Command::Train(a) => train_cmd(a),
        Command::Corpus(a) => corpus_cmd(a),
        Command::Trace(a) => trace_cmd(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("teeguard: {e}");
            ExitCode::FAILURE
        }
    }
}
