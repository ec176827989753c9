//! Command-line surface. Every subcommand writes into `--out`, including a
//! `config.json` snapshot of its arguments and resolved parameters, and maps
//! errors onto exit codes: 0 success, 2 input, 3 validation, 4 numerical.

mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::activation_store::{write_shard, DatasetManifest, Stream};
use crate::attribution::{attribute_dataset, DEFAULT_TOP_K};
use crate::crosscoder::{read_checkpoint, train, write_checkpoint, CrosscoderParams, TrainConfig};
use crate::diffing::{classify_all, FeatureClass, NormDiffReport, Thresholds};
use crate::error::{Error, Result};
use crate::maxact::{metadata_index, render, scan, DEFAULT_CONTEXT_RADIUS, DEFAULT_TOP_N};
use crate::numerics::norm;
use crate::steering::{baseline_generate, strength_sweep, SteeringConfig, SweepResult, DEFAULT_STRENGTHS};
use crate::toy_model::{
    forward_with_capture, linear_bypass, patchscope, synthetic_rollouts, LinearBypassConfig, ModelPair,
    SamplingConfig, ToyTokenizer,
};
use crate::wait_dataset::{build_prefixes, read_rollouts, write_prefixes, write_rollouts, PrefixScheme, Rollout, SentenceRule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Corruption { .. } | Error::Format { .. } => EXIT_VALIDATION,
        Error::Numerical(_) | Error::Training { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "xcoder", version, about = "Crosscoder model diffing, wait-token attribution and steering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with the subcommand's parameter block.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the linear-bypass model pair, synthetic rollouts, activation shards and a planted crosscoder.
    #[command(allow_negative_numbers = true)]
    Fixture(FixtureArgs),
    /// Validate activation shards and write a checksummed manifest.
    #[command(allow_negative_numbers = true)]
    Ingest(IngestArgs),
    /// Train a crosscoder on a manifest.
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Classify features by relative decoder norm.
    #[command(allow_negative_numbers = true)]
    Diff(DiffArgs),
    /// Score features against the wait metric over wait-truncated prefixes.
    #[command(allow_negative_numbers = true)]
    Attribute(AttributeArgs),
    /// Index max-activating examples per feature.
    #[command(allow_negative_numbers = true)]
    Maxact(MaxactArgs),
    /// Steer the reasoning model along a feature direction over a strength sweep.
    #[command(allow_negative_numbers = true)]
    Steer(SteerArgs),
    /// Sample an unsteered continuation.
    #[command(allow_negative_numbers = true)]
    Generate(GenerateArgs),
    /// Decode feature directions through a carrier prompt.
    #[command(allow_negative_numbers = true)]
    Patchscope(PatchscopeArgs),
    /// Render sweep curves and class histograms as TSV and SVG.
    #[command(allow_negative_numbers = true)]
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FixtureArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub rollouts: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Shard files, or directories searched for `*.xcas`.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub hook_layer: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub d_crosscoder: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DiffArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub base_below: Option<f64>,
    #[arg(long)]
    pub finetuned_above: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    SentenceStart,
    RolloutStart,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding `base.xtoy` and `reasoning.xtoy`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub rollouts: PathBuf,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaxactArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SamplingArgs {
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SteerArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub feature: Option<usize>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// Comma-separated strengths.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub strengths: Option<Vec<f64>>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub steer_tokens: Option<usize>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StreamArg {
    Base,
    Reasoning,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, value_enum)]
    pub stream: Option<StreamArg>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PatchscopeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated feature ids.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<usize>>,
    #[arg(long)]
    pub carrier: Option<String>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// `sweep.json` files written by `steer`.
    #[arg(long, num_args = 1..)]
    pub sweep: Vec<PathBuf>,
    /// `norm_diff.json` written by `diff`.
    #[arg(long)]
    pub diff: Option<PathBuf>,
}

// ---------------------------------------------------------------------------

/// Parses `args` (including the program name) and runs, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Caps the global worker pool from `XCODER_THREADS`.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("XCODER_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("XCODER_THREADS must be a positive integer, got {v:?}")))?;
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fixture(a) => cmd_fixture(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Diff(a) => cmd_diff(&a),
        Command::Attribute(a) => cmd_attribute(&a),
        Command::Maxact(a) => cmd_maxact(&a),
        Command::Steer(a) => cmd_steer(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Patchscope(a) => cmd_patchscope(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn load_params<P: DeserializeOwned + Default>(common: &Common) -> Result<P> {
    match &common.config {
        None => Ok(P::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
        }
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn snapshot<A: Serialize, P: Serialize>(&self, command: &str, args: &A, params: &P) -> Result<()> {
        #[derive(Serialize)]
        struct Snapshot<'a, A, P> {
            command: &'a str,
            args: &'a A,
            params: &'a P,
        }
        self.json("config.json", &Snapshot { command, args, params }).map(|_| ())
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn apply_sampling(s: &mut SamplingConfig, a: &SamplingArgs, seed: Option<u64>) {
    if let Some(t) = a.temperature {
        s.temperature = t;
    }
    if let Some(p) = a.top_p {
        s.top_p = p;
    }
    if let Some(m) = a.max_tokens {
        s.max_tokens = m;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
}

// ---------------------------------------------------------------------------
// fixture

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureParams {
    pub seed: u64,
    pub rollouts: usize,
    pub shards: usize,
    pub random_features: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            seed: 0,
            rollouts: 200,
            shards: 2,
            random_features: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureInfo {
    pub hook_layer: usize,
    pub promote_feature: usize,
    pub suppress_feature: usize,
    pub designated_wait: u32,
    pub promote_direction: Vec<f64>,
    pub suppress_direction: Vec<f64>,
}

fn cmd_fixture(a: &FixtureArgs) -> Result<()> {
    let mut p: FixtureParams = load_params(&a.common)?;
    if let Some(s) = a.common.seed {
        p.seed = s;
    }
    if let Some(n) = a.rollouts {
        p.rollouts = n;
    }
    if p.rollouts == 0 || p.shards == 0 {
        return Err(Error::InvalidConfig("fixture needs at least one rollout and one shard".into()));
    }
    let out = Output::create(&a.common.out)?;
    let lb = linear_bypass(LinearBypassConfig {
        seed: p.seed,
        ..LinearBypassConfig::default()
    })?;
    lb.pair.save(&out.path("models"))?;

    let tok = ToyTokenizer;
    let rollouts: Vec<Rollout> = synthetic_rollouts(p.rollouts, p.seed.wrapping_add(1))
        .iter()
        .enumerate()
        .map(|(i, t)| Rollout::from_text(i as u64, t, &tok))
        .collect::<Result<_>>()?;
    write_rollouts(&out.path("rollouts.jsonl"), &rollouts)?;

    let seqs: Vec<(u64, Vec<u32>)> = rollouts.iter().map(|r| (r.id, r.tokens.clone())).collect();
    let per_shard = seqs.len().div_ceil(p.shards);
    for (i, chunk) in seqs.chunks(per_shard).enumerate() {
        let records = lb.pair.capture_records(chunk, lb.hook_layer())?;
        let path = out.path(&format!("shards/shard-{i:03}.xcas"));
        fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
        write_shard(&path, lb.pair.d_model(), &records)?;
    }

    write_checkpoint(&out.path("planted.xccp"), &lb.planted_crosscoder(p.random_features, p.seed))?;
    out.json(
        "fixture.json",
        &FixtureInfo {
            hook_layer: lb.hook_layer(),
            promote_feature: 0,
            suppress_feature: 1,
            designated_wait: lb.designated_wait,
            promote_direction: lb.promote_direction.clone(),
            suppress_direction: lb.suppress_direction.clone(),
        },
    )?;
    out.snapshot("fixture", a, &p)
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestParams {
    pub hook_layer: usize,
    pub base_model: String,
    pub reasoning_model: String,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            hook_layer: 2,
            base_model: "toy-base".into(),
            reasoning_model: "toy-reasoning".into(),
        }
    }
}

/// `target` relative to `from`, both made absolute first.
fn relative_to(target: &Path, from: &Path) -> Result<PathBuf> {
    let t = fs::canonicalize(target).map_err(|e| Error::io(target, e))?;
    let f = fs::canonicalize(from).map_err(|e| Error::io(from, e))?;
    let tc: Vec<Component> = t.components().collect();
    let fc: Vec<Component> = f.components().collect();
    let common = tc.iter().zip(&fc).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in common..fc.len() {
        rel.push("..");
    }
    for c in &tc[common..] {
        rel.push(c.as_os_str());
    }
    Ok(rel)
}

fn collect_shards(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut here: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "xcas"))
                .collect();
            here.sort();
            found.extend(here);
        } else if input.is_file() {
            found.push(input.clone());
        } else {
            return Err(Error::InvalidInput(format!("{} does not exist", input.display())));
        }
    }
    if found.is_empty() {
        return Err(Error::InvalidInput("no activation shards found in the inputs".into()));
    }
    Ok(found)
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let mut p: IngestParams = load_params(&a.common)?;
    if let Some(l) = a.hook_layer {
        p.hook_layer = l;
    }
    let shards = collect_shards(&a.inputs)?;
    let out = Output::create(&a.common.out)?;
    let rel: Vec<PathBuf> = shards.iter().map(|s| relative_to(s, &out.dir)).collect::<Result<_>>()?;
    let manifest = DatasetManifest::build(&out.dir, &rel, p.hook_layer, &p.base_model, &p.reasoning_model)?;
    manifest.verify()?;
    manifest.save(&out.path("manifest.json"))?;
    out.snapshot("ingest", a, &p)
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_params(&a.common)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.d_crosscoder {
        cfg.d_crosscoder = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.adam.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.normalize {
        cfg.normalize = v;
    }
    cfg.validate()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let out = Output::create(&a.common.out)?;
    let (params, report) = train(&cfg, &manifest)?;
    write_checkpoint(&out.path("crosscoder.xccp"), &params)?;
    out.json("train_report.json", &report)?;
    let mut tsv = String::from("step\ttotal\tmse_base\tmse_reasoning\tsparsity\n");
    for (i, l) in report.step_losses.iter().enumerate() {
        tsv.push_str(&format!(
            "{i}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\n",
            l.total, l.mse_base, l.mse_reasoning, l.sparsity
        ));
    }
    out.write("loss.tsv", tsv)?;
    out.snapshot("train", a, &cfg)
}

// ---------------------------------------------------------------------------
// diff

fn class_summary(r: &NormDiffReport) -> String {
    let mut s = String::from("class\tcount\tfraction_of_live\n");
    for c in FeatureClass::ALL {
        s.push_str(&format!("{}\t{}\t{:.9}\n", c.as_str(), r.count(c), r.fraction(c)));
    }
    s
}

fn cmd_diff(a: &DiffArgs) -> Result<()> {
    let mut t: Thresholds = load_params(&a.common)?;
    if let Some(v) = a.base_below {
        t.base_below = v;
    }
    if let Some(v) = a.finetuned_above {
        t.finetuned_above = v;
    }
    let cc = read_checkpoint(&a.checkpoint)?;
    let out = Output::create(&a.common.out)?;
    let report = classify_all(&cc, t)?;
    out.write("norm_diff.tsv", report.to_tsv())?;
    out.json("norm_diff.json", &report)?;
    out.write("classes.tsv", class_summary(&report))?;
    out.snapshot("diff", a, &t)
}

// ---------------------------------------------------------------------------
// attribute

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeParams {
    pub scheme: PrefixScheme,
    pub layer: usize,
    /// Defaults to the smaller of 50 and half the feature count.
    pub top_k: Option<usize>,
    pub sentence_rule: SentenceRule,
}

impl Default for AttributeParams {
    fn default() -> Self {
        Self {
            scheme: PrefixScheme::RolloutStart,
            layer: 2,
            top_k: None,
            sentence_rule: SentenceRule::default(),
        }
    }
}

fn cmd_attribute(a: &AttributeArgs) -> Result<()> {
    let mut p: AttributeParams = load_params(&a.common)?;
    if let Some(s) = a.scheme {
        p.scheme = match s {
            SchemeArg::SentenceStart => PrefixScheme::SentenceStart,
            SchemeArg::RolloutStart => PrefixScheme::RolloutStart,
        };
    }
    if let Some(l) = a.layer {
        p.layer = l;
    }
    if a.top_k.is_some() {
        p.top_k = a.top_k;
    }
    let pair = ModelPair::load(&a.models)?;
    let cc = read_checkpoint(&a.checkpoint)?;
    let tok = ToyTokenizer;
    let w = tok.wait_set();
    let rollouts = read_rollouts(&a.rollouts, &tok)?;
    let prefixes = build_prefixes(&rollouts, &w, p.scheme, &p.sentence_rule, &tok)?;
    let k = p.top_k.unwrap_or(DEFAULT_TOP_K.min(cc.d_crosscoder() / 2));
    let id = a.rollouts.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let report = attribute_dataset(&pair, &cc, &prefixes, p.layer, &w, k, &id)?;
    let out = Output::create(&a.common.out)?;
    write_prefixes(&out.path("prefixes.jsonl"), &prefixes)?;
    out.write("attribution.tsv", report.to_tsv())?;
    #[derive(Serialize)]
    struct TopBottom<'a> {
        dataset_id: &'a str,
        n_examples: usize,
        k: usize,
        top: &'a [usize],
        bottom: &'a [usize],
    }
    out.json(
        "top_bottom.json",
        &TopBottom {
            dataset_id: &report.dataset_id,
            n_examples: report.n_examples,
            k,
            top: &report.top,
            bottom: &report.bottom,
        },
    )?;
    out.snapshot("attribute", a, &p)
}

// ---------------------------------------------------------------------------
// maxact

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxactParams {
    pub top_n: usize,
    pub radius: usize,
}

impl Default for MaxactParams {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            radius: DEFAULT_CONTEXT_RADIUS,
        }
    }
}

fn cmd_maxact(a: &MaxactArgs) -> Result<()> {
    let mut p: MaxactParams = load_params(&a.common)?;
    if let Some(n) = a.top_n {
        p.top_n = n;
    }
    if let Some(r) = a.radius {
        p.radius = r;
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let cc = read_checkpoint(&a.checkpoint)?;
    let index = scan(&manifest, &cc, p.top_n, p.radius)?;
    let out = Output::create(&a.common.out)?;
    out.write("index.jsonl", index.to_jsonl()?)?;
    let mut meta = Vec::new();
    for i in 0..manifest.shards.len() {
        meta.extend(crate::activation_store::read_sidecar(&manifest.sidecar_path(i))?);
    }
    let lookup = metadata_index(&meta);
    for (k, entries) in index.features.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        let mut text = String::new();
        for e in entries {
            text.push_str(&render(e, &lookup)?);
            text.push('\n');
        }
        out.write(&format!("snippets/feature_{k:05}.txt"), text)?;
    }
    out.snapshot("maxact", a, &p)
}

// ---------------------------------------------------------------------------
// steer / generate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerParams {
    pub feature: usize,
    pub prompt: String,
    pub strengths: Vec<f64>,
    pub layer: usize,
    pub steer_tokens: Option<usize>,
    pub sampling: SamplingConfig,
}

impl Default for SteerParams {
    fn default() -> Self {
        Self {
            feature: 0,
            prompt: "so the answer is 4".into(),
            strengths: DEFAULT_STRENGTHS.to_vec(),
            layer: 2,
            steer_tokens: None,
            sampling: SamplingConfig::default(),
        }
    }
}

fn strength_label(s: f64) -> String {
    format!("{s:+.4}")
}

fn cmd_steer(a: &SteerArgs) -> Result<()> {
    let mut p: SteerParams = load_params(&a.common)?;
    if let Some(f) = a.feature {
        p.feature = f;
    }
    if let Some(t) = &a.prompt {
        p.prompt = t.clone();
    }
    if let Some(s) = &a.strengths {
        p.strengths = s.clone();
    }
    if let Some(l) = a.layer {
        p.layer = l;
    }
    if a.steer_tokens.is_some() {
        p.steer_tokens = a.steer_tokens;
    }
    apply_sampling(&mut p.sampling, &a.sampling, a.common.seed);
    let pair = ModelPair::load(&a.models)?;
    let cc = read_checkpoint(&a.checkpoint)?;
    let tok = ToyTokenizer;
    let prompt = tok.encode(&p.prompt)?;
    let base = SteeringConfig {
        feature: p.feature,
        strength: 0.0,
        layer: p.layer,
        start_position: None,
        steer_tokens: p.steer_tokens,
        sampling: p.sampling,
    };
    let sweep = strength_sweep(&pair, &cc, &base, &p.strengths, &prompt, &tok.wait_set())?;
    let out = Output::create(&a.common.out)?;
    out.json("sweep.json", &sweep)?;
    out.write("sweep.tsv", sweep.to_tsv())?;
    for row in &sweep.rows {
        out.write(&format!("texts/strength_{}.txt", strength_label(row.strength)), &row.text)?;
    }
    out.snapshot("steer", a, &p)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateParams {
    pub prompt: String,
    pub stream: StreamArg,
    pub sampling: SamplingConfig,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            prompt: SteerParams::default().prompt,
            stream: StreamArg::Reasoning,
            sampling: SamplingConfig::default(),
        }
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut p: GenerateParams = load_params(&a.common)?;
    if let Some(t) = &a.prompt {
        p.prompt = t.clone();
    }
    if let Some(s) = a.stream {
        p.stream = s;
    }
    apply_sampling(&mut p.sampling, &a.sampling, a.common.seed);
    let pair = ModelPair::load(&a.models)?;
    let tok = ToyTokenizer;
    let prompt = tok.encode(&p.prompt)?;
    let g = match p.stream {
        StreamArg::Reasoning => baseline_generate(&pair, &prompt, &p.sampling, &tok.wait_set())?,
        StreamArg::Base => {
            let only_base = ModelPair::new(pair.base.clone(), pair.base.clone())?;
            baseline_generate(&only_base, &prompt, &p.sampling, &tok.wait_set())?
        }
    };
    let out = Output::create(&a.common.out)?;
    out.write("continuation.txt", &g.text)?;
    out.json("generation.json", &g)?;
    out.snapshot("generate", a, &p)
}

// ---------------------------------------------------------------------------
// patchscope

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchscopeParams {
    /// Empty means every feature.
    pub features: Vec<usize>,
    pub carrier: String,
    pub layer: usize,
    /// Inserted vector is `scale · ‖a‖ · v̂_k`, with `a` the carrier's clean residual at the insert position.
    pub scale: f64,
    pub top_tokens: usize,
}

impl Default for PatchscopeParams {
    fn default() -> Self {
        Self {
            features: Vec::new(),
            carrier: "cat cat\n1135 1135\nhello hello\n?".into(),
            layer: 2,
            scale: 1.0,
            top_tokens: 10,
        }
    }
}

fn cmd_patchscope(a: &PatchscopeArgs) -> Result<()> {
    let mut p: PatchscopeParams = load_params(&a.common)?;
    if let Some(f) = &a.features {
        p.features = f.clone();
    }
    if let Some(c) = &a.carrier {
        p.carrier = c.clone();
    }
    if let Some(l) = a.layer {
        p.layer = l;
    }
    if let Some(s) = a.scale {
        p.scale = s;
    }
    let pair = ModelPair::load(&a.models)?;
    let cc: CrosscoderParams = read_checkpoint(&a.checkpoint)?;
    let tok = ToyTokenizer;
    let w = tok.wait_set();
    let carrier = tok.encode(&p.carrier)?;
    let pos = carrier.len() - 1;
    let (_, clean) = forward_with_capture(&pair.reasoning, &carrier, p.layer)?;
    let a_norm = norm(&clean[pos]);
    let features: Vec<usize> = if p.features.is_empty() { (0..cc.d_crosscoder()).collect() } else { p.features.clone() };

    let mut tsv = String::from("feature\trank\ttoken_id\ttoken\tprob\n");
    let mut waits = String::from("feature\twait_metric\n");
    for &k in &features {
        if k >= cc.d_crosscoder() {
            return Err(Error::InvalidInput(format!("feature {k} out of range for {} latents", cc.d_crosscoder())));
        }
        let v = cc.feature_direction(Stream::Reasoning, k);
        let nv = norm(&v);
        if nv < 1e-12 {
            waits.push_str(&format!("{k}\tNA\n"));
            continue;
        }
        let vec: Vec<f64> = v.iter().map(|x| p.scale * a_norm * x / nv).collect();
        let probs = patchscope(&pair.reasoning, &carrier, p.layer, &vec, pos)?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]).then(i.cmp(&j)));
        for (rank, &t) in order.iter().take(p.top_tokens).enumerate() {
            let text = tok.token_text(t as u32).unwrap_or("");
            tsv.push_str(&format!("{k}\t{}\t{t}\t{}\t{:.9e}\n", rank + 1, text.escape_debug(), probs[t]));
        }
        waits.push_str(&format!("{k}\t{:.9e}\n", crate::toy_model::metric_wait(&probs, &w)));
    }
    let out = Output::create(&a.common.out)?;
    out.write("patchscope.tsv", tsv)?;
    out.write("patchscope_wait.tsv", waits)?;
    out.snapshot("patchscope", a, &p)
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(a: &ReportArgs) -> Result<()> {
    if a.sweep.is_empty() && a.diff.is_none() {
        return Err(Error::InvalidInput("report needs at least one --sweep or --diff artifact".into()));
    }
    let sweeps: Vec<SweepResult> = a.sweep.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let diff: Option<NormDiffReport> = a.diff.as_deref().map(read_json).transpose()?;
    let out = Output::create(&a.common.out)?;

    if !sweeps.is_empty() {
        let mut tsv = String::from("sweep\tfeature\tstrength\tchars_before_first_wait\tplotted_chars\tcensored\n");
        let mut series = Vec::new();
        for (i, s) in sweeps.iter().enumerate() {
            let mut points = Vec::new();
            for r in &s.rows {
                let (plotted, censored) = match r.chars_before_first_wait {
                    Some(c) => (c, false),
                    None => (r.text.chars().count(), true),
                };
                let raw = r.chars_before_first_wait.map_or("NA".into(), |c| c.to_string());
                tsv.push_str(&format!("{i}\t{}\t{}\t{raw}\t{plotted}\t{censored}\n", s.feature, r.strength));
                points.push((r.strength, plotted as f64));
            }
            points.sort_by(|x, y| x.0.total_cmp(&y.0));
            series.push(plot::Series {
                label: format!("feature {}", s.feature),
                points,
            });
        }
        out.write("strength_curve.tsv", tsv)?;
        out.write(
            "strength_curve.svg",
            plot::line_chart("characters before first wait", "steering strength", "characters", &series),
        )?;
    }

    if let Some(d) = &diff {
        let classes = [FeatureClass::BaseOnly, FeatureClass::Shared, FeatureClass::FinetunedOnly];
        let mut tsv = String::from("class\tcount\tfraction\n");
        let mut bars = Vec::new();
        for c in classes {
            tsv.push_str(&format!("{}\t{}\t{:.12}\n", c.as_str(), d.count(c), d.fraction(c)));
            bars.push((c.as_str().to_string(), d.fraction(c)));
        }
        tsv.push_str(&format!("dead\t{}\t\n", d.dead));
        out.write("class_histogram.tsv", tsv)?;
        out.write("class_histogram.svg", plot::bar_chart("relative decoder norm classes", "fraction of live features", &bars))?;

        let mut hist = String::from("bin_low\tbin_high\tcount\n");
        let mut counts = [0usize; 20];
        for f in &d.features {
            if let crate::diffing::RelativeNorm::Ratio(r) = f.relative_norm {
                counts[((r * 20.0) as usize).min(19)] += 1;
            }
        }
        for (i, c) in counts.iter().enumerate() {
            hist.push_str(&format!("{:.2}\t{:.2}\t{c}\n", i as f64 / 20.0, (i + 1) as f64 / 20.0));
        }
        out.write("relative_norm_bins.tsv", hist)?;
    }
    out.snapshot("report", a, &())
}
