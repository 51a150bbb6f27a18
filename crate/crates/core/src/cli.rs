//! The `rrl` command line: `synth`, `graph`, `train`, `extract`, `query`,
//! `eval` and `baseline`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Every
//! output file gets a sibling `<file>.manifest.json` recording the argv,
//! resolved flags and tool version.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::archive::{load_archive, read_id_list, write_archive, write_id_list};
use crate::checkpoint;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::{build_graph, write_edges_csv, RegionGraph, WeightConfig, WeightMode};
use crate::labelmap::MultiLabelVector;
use crate::metrics::{evaluate, EvalQuery, GainPolicy};
use crate::retrieval::{DescriptorStore, Query};
use crate::rng::{derive_seed, SplitMix64};
use crate::synthgen::{generate, split, SynthConfig};
use crate::trainer::{extract_descriptors, train_from, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "rrl", version, about = "Region-graph representation learning for multi-label image retrieval")]
struct Cli {
    /// Worker threads (1 is the reference configuration).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Generate a synthetic archive with train/query/test id lists.
    Synth(SynthArgs),
    /// Write region graphs of an archive as CSV.
    Graph(GraphArgs),
    /// Train the encoder on an archive.
    Train(TrainArgs),
    /// Compute descriptors with a trained model.
    Extract(ExtractArgs),
    /// Rank a descriptor store against one stored image.
    Query(QueryArgs),
    /// Score retrieval with mAP, ACG and NDCG for k = 1..k_max.
    Eval(EvalArgs),
    /// Random non-negative descriptors, for comparison.
    Baseline(BaselineArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    Ok((
        h.parse().map_err(|_| format!("bad height `{h}`"))?,
        w.parse().map_err(|_| format!("bad width `{w}`"))?,
    ))
}

fn parse_fractions(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad fraction `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected three fractions: train,query,test".to_string())
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value = "32x32", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 6)]
    sites: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train,query,test fractions.
    #[arg(long, default_value = "0.5,0.25,0.25", value_parser = parse_fractions)]
    split: [f64; 3],
}

#[derive(Debug, Args, Serialize)]
struct GraphArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to the ids listed in this file.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = WeightMode::Scaled)]
    mode: WeightMode,
    #[arg(long)]
    no_self_edges: bool,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Seeds both parameter initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = WeightMode::Scaled)]
    mode: WeightMode,
    #[arg(long)]
    no_self_edges: bool,
    #[arg(long, default_value_t = 128)]
    gamma: usize,
    /// Conv block widths, comma separated.
    #[arg(long, default_value = "16,32", value_delimiter = ',')]
    blocks: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ExtractArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct QueryArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    /// File of query ids, one per line.
    #[arg(long)]
    queries: PathBuf,
    /// Store holding the query descriptors; defaults to `--store`.
    #[arg(long)]
    query_store: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    k_max: usize,
    #[arg(long, value_enum, default_value_t = GainPolicy::Raw)]
    gain: GainPolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    gamma: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Provenance written next to every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub subcommand: &'a str,
    pub argv: Vec<String>,
    pub flags: serde_json::Value,
    pub outputs: Vec<String>,
    pub tool_version: &'static str,
    pub wall_clock_seconds: f64,
}

struct Ctx {
    argv: Vec<String>,
    start: Instant,
}

impl Ctx {
    fn manifest(&self, cmd: &Command, outputs: &[&Path]) -> Result<()> {
        let (name, flags) = match serde_json::to_value(cmd).map_err(|e| Error::invalid(e.to_string()))? {
            serde_json::Value::Object(m) if m.len() == 1 => m.into_iter().next().expect("one entry"),
            other => ("unknown".to_string(), other),
        };
        let manifest = RunManifest {
            subcommand: &name,
            argv: self.argv.clone(),
            flags,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
        let primary = outputs.first().expect("at least one output");
        let path = if primary.is_dir() {
            primary.join("run.manifest.json")
        } else {
            let mut name = primary.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        };
        write_file(&path, json.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).at(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::from(e).at(path))
}

fn read_store(path: &Path) -> Result<DescriptorStore> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::format(0, "not UTF-8").at(path))?;
    text.parse().map_err(|e: Error| e.at(path))
}

fn weight_config(mode: WeightMode, no_self_edges: bool) -> WeightConfig {
    WeightConfig {
        self_edges: !no_self_edges,
        ..WeightConfig::with_mode(mode)
    }
}

fn optional_ids(path: &Option<PathBuf>) -> Result<Option<Vec<String>>> {
    path.as_deref().map(read_id_list).transpose()
}

/// Random descriptors, uniform on `[0, 1)`. Each image draws from
/// `derive_seed(seed, fnv1a(id))`, so the store does not depend on item order.
pub fn baseline(
    items: &[(&str, &MultiLabelVector)],
    gamma: usize,
    num_classes: usize,
    seed: u64,
) -> Result<DescriptorStore> {
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    let mut store = DescriptorStore::new(gamma, num_classes);
    for (id, labels) in items {
        let key = id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
        let mut rng = SplitMix64::new(derive_seed(seed, key));
        let d = (0..gamma).map(|_| rng.next_f64()).collect();
        store.insert(id.to_string(), d, (*labels).clone())?;
    }
    Ok(store)
}

fn synth(ctx: &Ctx, cmd: &Command, a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_images: a.images,
        height: a.size.0,
        width: a.size.1,
        num_classes: a.classes,
        sites: a.sites,
        channels: a.channels,
        noise_sigma: a.noise,
        master_seed: a.seed,
    };
    let items = generate(&cfg)?;
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let parts = split(&ids, a.split, a.seed)?;
    write_archive(&a.out, &items)?;
    write_id_list(&a.out.join("train_ids.txt"), &parts.train)?;
    write_id_list(&a.out.join("query_ids.txt"), &parts.query)?;
    write_id_list(&a.out.join("test_ids.txt"), &parts.test)?;
    ctx.manifest(cmd, &[&a.out])
}

fn graph(ctx: &Ctx, cmd: &Command, a: &GraphArgs) -> Result<()> {
    let ids = optional_ids(&a.ids)?;
    let items = load_archive(&a.archive, ids.as_deref())?;
    let cfg = weight_config(a.mode, a.no_self_edges);
    let graphs: Vec<RegionGraph> = items
        .iter()
        .map(|it| build_graph(&it.map, &cfg))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    write_edges_csv(&mut out, items.iter().map(|it| it.id.as_str()).zip(&graphs))?;
    write_file(&a.out, &out)?;
    ctx.manifest(cmd, &[&a.out])
}

fn train(ctx: &Ctx, cmd: &Command, a: &TrainArgs) -> Result<()> {
    let ids = optional_ids(&a.ids)?;
    let items = load_archive(&a.archive, ids.as_deref())?;
    let first = items
        .first()
        .ok_or_else(|| Error::invalid("empty training set").at(&a.archive))?;
    let encoder_cfg = EncoderConfig {
        input_channels: first.image.channels(),
        input_height: first.image.height(),
        input_width: first.image.width(),
        block_widths: a.blocks.clone(),
        gamma: a.gamma,
        num_classes: first.map.num_classes(),
        seed: a.seed,
    };
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        shuffle_seed: a.seed,
        weight_config: weight_config(a.mode, a.no_self_edges),
        ..TrainConfig::default()
    };
    let dataset: Vec<_> = items.into_iter().map(|it| (it.image, it.map)).collect();
    let params = crate::encoder::init_params(&encoder_cfg)?;
    let report = train_from(params, &dataset, &encoder_cfg, &train_cfg, |epoch, loss| {
        eprintln!("epoch {epoch}/{} mean_loss {loss:.6}", a.epochs);
    })?;
    write_file(&a.out, &checkpoint::encode(&encoder_cfg, &report.params)?)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(log) = &a.log {
        let mut csv = String::from("epoch,mean_loss\n");
        for (i, l) in report.epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        write_file(log, csv.as_bytes())?;
        outputs.push(log);
    }
    ctx.manifest(cmd, &outputs)
}

fn extract(ctx: &Ctx, cmd: &Command, a: &ExtractArgs) -> Result<()> {
    let (cfg, params) = checkpoint::decode(&read_file(&a.model)?).map_err(|e| e.at(&a.model))?;
    let ids = optional_ids(&a.ids)?;
    let items = load_archive(&a.archive, ids.as_deref())?;
    let labels: Vec<MultiLabelVector> = items.iter().map(|it| it.map.labels_present()).collect();
    let refs: Vec<_> = items
        .iter()
        .zip(&labels)
        .map(|(it, l)| (it.id.as_str(), &it.image, l))
        .collect();
    let store = extract_descriptors(&params, &cfg, &refs)?;
    write_file(&a.out, store.to_string().as_bytes())?;
    ctx.manifest(cmd, &[&a.out])
}

fn query(a: &QueryArgs) -> Result<()> {
    let store = read_store(&a.store)?;
    let ranked = store.query(Query::Id(&a.query), a.k)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "rank,id,distance")?;
    for (rank, (id, d)) in ranked.0.iter().enumerate() {
        writeln!(out, "{},{id},{d}", rank + 1)?;
    }
    Ok(())
}

fn eval(ctx: &Ctx, cmd: &Command, a: &EvalArgs) -> Result<()> {
    let store = read_store(&a.store)?;
    let query_store = match &a.query_store {
        Some(p) => Some(read_store(p)?),
        None => None,
    };
    let source = query_store.as_ref().unwrap_or(&store);
    let queries: Vec<EvalQuery> = read_id_list(&a.queries)?
        .into_iter()
        .map(|id| {
            let e = source
                .get(&id)
                .ok_or_else(|| Error::invalid(format!("query id {id} not in descriptor store")).at(&a.queries))?;
            Ok(EvalQuery {
                descriptor: e.descriptor.clone(),
                labels: e.labels.clone(),
                id,
            })
        })
        .collect::<Result<_>>()?;
    let curve = evaluate(&store, &queries, a.k_max, a.gain)?;
    let mut out = Vec::new();
    curve.write_csv(&mut out)?;
    write_file(&a.out, &out)?;
    ctx.manifest(cmd, &[&a.out])
}

fn run_baseline(ctx: &Ctx, cmd: &Command, a: &BaselineArgs) -> Result<()> {
    let ids = optional_ids(&a.ids)?;
    let items = load_archive(&a.archive, ids.as_deref())?;
    let num_classes = items.first().map_or(1, |it| it.map.num_classes());
    let labels: Vec<MultiLabelVector> = items.iter().map(|it| it.map.labels_present()).collect();
    let refs: Vec<_> = items.iter().map(|it| it.id.as_str()).zip(&labels).collect();
    let store = baseline(&refs, a.gamma, num_classes, a.seed)?;
    write_file(&a.out, store.to_string().as_bytes())?;
    ctx.manifest(cmd, &[&a.out])
}

fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(ctx, cmd, a),
        Command::Graph(a) => graph(ctx, cmd, a),
        Command::Train(a) => train(ctx, cmd, a),
        Command::Extract(a) => extract(ctx, cmd, a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(ctx, cmd, a),
        Command::Baseline(a) => run_baseline(ctx, cmd, a),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let ctx = Ctx {
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        start: Instant::now(),
    };
    let result = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&ctx, &cli.command)),
            Err(e) => Err(Error::invalid(e.to_string())),
        },
        None => dispatch(&ctx, &cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
