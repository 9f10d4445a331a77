//! Command-line interface for the prompteer toolkit.
//!
//! Exit codes: 0 on success, 1 when a run completed with record failures or
//! a backend error, 2 on invalid configuration or manifests.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prompteer::backend::{ExternalBackend, MockBackend};
use prompteer::builder::{
    build_cs_prompt, build_default_prompt, build_st_prompt, build_visual_prompt, ConcatConfig,
    VisualPromptConfig,
};
use prompteer::decode::{
    decode as run_decode, run_lid, AudioHandle, Backend, DecodeConfig, DecodeStrategy, LidResult,
};
use prompteer::harness::{
    build_mask_from_spec, load_manifest, load_run_config, run_eval, run_sweep, MaskSpec,
    SweepParam, SweepSpec,
};
use prompteer::mask::VocabMask;
use prompteer::prompt::{display_form, serialize_prompt, PromptSequence, Task};
use prompteer::retrieval::{
    build_index, plan_frames, retrieve, EmbeddingVector, HashEmbeddingProvider, ObjectIndex,
};
use prompteer::vocab::{load_vocab_manifest, LoadedVocab};

#[derive(Parser)]
#[command(
    name = "prompteer",
    version,
    about = "Prompt-steered decoding and evaluation for Whisper-style speech models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a prompt under one of the task policies and print it.
    BuildPrompt(BuildPromptArgs),
    /// Build a vocabulary mask and write it to a file.
    BuildMask(BuildMaskArgs),
    /// Build or validate an object-embedding index file.
    EmbedIndex(EmbedIndexArgs),
    /// Rank object labels against frame embeddings.
    Retrieve(RetrieveArgs),
    /// Run language identification over a restricted language set.
    Lid(LidArgs),
    /// Transcribe (or translate) one utterance.
    Transcribe(TranscribeArgs),
    /// Evaluate a manifest under a run config and write a report.
    Evaluate(EvaluateArgs),
    /// Run an evaluation once per parameter value and rank the results.
    Sweep(SweepArgs),
    /// Print equally-spaced frame indices for a video length.
    PlanFrames(PlanFramesArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Default,
    Visual,
    Concat,
    St,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Asr,
    St,
}

impl From<TaskArg> for Task {
    fn from(value: TaskArg) -> Self {
        match value {
            TaskArg::Asr => Task::Asr,
            TaskArg::St => Task::St,
        }
    }
}

#[derive(Args)]
struct BuildPromptArgs {
    /// Vocabulary manifest path.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum)]
    policy: PolicyArg,
    /// Prompt language (default/visual policies).
    #[arg(long)]
    lang: Option<String>,
    /// Task token for the default policy.
    #[arg(long, value_enum, default_value = "asr")]
    task: TaskArg,
    /// Comma-separated object labels for the visual policy.
    #[arg(long)]
    objects: Option<String>,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    /// Concat language pair in prompt order, e.g. `zh,en`.
    #[arg(long)]
    langs: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    /// Scripted LID distribution for the concat policy, e.g. `zh=0.95,en=0.05`.
    #[arg(long)]
    lid: Option<String>,
    /// Target language for the st policy.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
struct BuildMaskArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Shipped script name (cjk, cyrillic, arabic) or a name from --script-config.
    #[arg(long)]
    script: Option<String>,
    /// Script spec config file.
    #[arg(long)]
    script_config: Option<PathBuf>,
    /// Corpus file for a frequency mask.
    #[arg(long)]
    freq_corpus: Option<PathBuf>,
    /// Top-percent of observed token types to keep.
    #[arg(long)]
    percent: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedIndexArgs {
    /// Build: newline-delimited label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Embedding dimension for the deterministic hash provider.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Output index path (build mode).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Validate an existing index file instead of building.
    #[arg(long)]
    validate: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    /// Embedding file whose records are frame vectors.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Args)]
struct LidArgs {
    #[arg(long)]
    vocab: PathBuf,
    /// Backend spec: `mock:<script.json>`, `cmd:<command...>`, or `tcp:<addr>`.
    #[arg(long)]
    backend: String,
    #[arg(long)]
    audio: String,
    /// Comma-separated allowed language codes.
    #[arg(long)]
    allowed: String,
}

#[derive(Args)]
struct TranscribeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    backend: String,
    #[arg(long)]
    audio: String,
    #[arg(long, value_enum)]
    policy: PolicyArg,
    #[arg(long)]
    lang: Option<String>,
    #[arg(long, value_enum, default_value = "asr")]
    task: TaskArg,
    #[arg(long)]
    objects: Option<String>,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    #[arg(long)]
    langs: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long)]
    target: Option<String>,
    /// Mask file produced by build-mask.
    #[arg(long)]
    mask_file: Option<PathBuf>,
    /// Shipped script mask name.
    #[arg(long)]
    script_mask: Option<String>,
    #[arg(long, default_value_t = 224)]
    max_new_tokens: usize,
    /// Beam width; 0 means greedy.
    #[arg(long, default_value_t = 0)]
    beam: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Parameter to sweep: top_k, lid_threshold, or frequency_percent.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PlanFramesArgs {
    /// Total frames in the video.
    #[arg(long)]
    video_frames: usize,
    #[arg(long, default_value_t = 3)]
    count: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::BuildPrompt(args) => cmd_build_prompt(args),
        Command::BuildMask(args) => cmd_build_mask(args),
        Command::EmbedIndex(args) => cmd_embed_index(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Lid(args) => cmd_lid(args),
        Command::Transcribe(args) => cmd_transcribe(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::PlanFrames(args) => {
            let plan = plan_frames(args.video_frames, args.count);
            let shown: Vec<String> = plan.indices().iter().map(|i| i.to_string()).collect();
            println!("{}", shown.join(" "));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_backend(spec: &str, vocab: &LoadedVocab) -> Result<Box<dyn Backend>> {
    if let Some(script) = spec.strip_prefix("mock:") {
        let backend = MockBackend::from_script_file(script, vocab)?;
        return Ok(Box::new(backend));
    }
    if let Some(command) = spec.strip_prefix("cmd:") {
        let argv: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        let backend = ExternalBackend::spawn(&argv)?;
        return Ok(Box::new(backend));
    }
    if let Some(address) = spec.strip_prefix("tcp:") {
        let backend = ExternalBackend::connect(address)?;
        return Ok(Box::new(backend));
    }
    bail!("backend spec must start with mock:, cmd:, or tcp:");
}

fn parse_lid_distribution(spec: &str, vocab: &LoadedVocab) -> Result<LidResult> {
    let mut probs = Vec::new();
    for part in spec.split(',') {
        let (code, p) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("--lid expects `code=prob,...`"))?;
        let lang = vocab.languages.require(code.trim())?;
        probs.push((lang, p.trim().parse::<f64>().context("bad probability")?));
    }
    let (argmax, confidence) = probs
        .iter()
        .cloned()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or_else(|| anyhow!("--lid needs at least one entry"))?;
    Ok(LidResult {
        probs,
        argmax,
        confidence,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_policy_prompt(
    vocab: &LoadedVocab,
    policy: PolicyArg,
    lang: Option<&str>,
    task: TaskArg,
    objects: Option<&str>,
    top_k: usize,
    langs: Option<&str>,
    threshold: f64,
    lid: Option<LidResult>,
    target: Option<&str>,
) -> Result<PromptSequence> {
    match policy {
        PolicyArg::Default => {
            let lang = lang.ok_or_else(|| anyhow!("--lang is required for the default policy"))?;
            Ok(build_default_prompt(
                lang,
                task.into(),
                &vocab.languages,
                &vocab.specials,
            )?)
        }
        PolicyArg::Visual => {
            let lang = lang.unwrap_or("en");
            let objects =
                objects.ok_or_else(|| anyhow!("--objects is required for the visual policy"))?;
            let labels: Vec<&str> = objects.split(',').map(str::trim).collect();
            let cfg = VisualPromptConfig::new(top_k)?;
            Ok(build_visual_prompt(
                &labels,
                &cfg,
                lang,
                &vocab.tokenizer,
                &vocab.languages,
                &vocab.specials,
            )?)
        }
        PolicyArg::Concat => {
            let langs = langs.ok_or_else(|| anyhow!("--langs is required for concat"))?;
            let pair: Vec<&str> = langs.split(',').map(str::trim).collect();
            if pair.len() != 2 {
                bail!("--langs expects exactly two codes, e.g. zh,en");
            }
            let cfg = ConcatConfig::new(
                vocab.languages.require(pair[0])?,
                vocab.languages.require(pair[1])?,
                threshold,
            )?;
            let lid = lid.ok_or_else(|| anyhow!("--lid is required for concat build-prompt"))?;
            Ok(build_cs_prompt(&lid, &cfg, &vocab.specials)?)
        }
        PolicyArg::St => {
            let target = target.ok_or_else(|| anyhow!("--target is required for st"))?;
            Ok(build_st_prompt(target, &vocab.languages, &vocab.specials)?)
        }
    }
}

fn cmd_build_prompt(args: BuildPromptArgs) -> Result<ExitCode> {
    let vocab = load_vocab_manifest(&args.vocab)?;
    let lid = args
        .lid
        .as_deref()
        .map(|s| parse_lid_distribution(s, &vocab))
        .transpose()?;
    let prompt = build_policy_prompt(
        &vocab,
        args.policy,
        args.lang.as_deref(),
        args.task,
        args.objects.as_deref(),
        args.top_k,
        args.langs.as_deref(),
        args.threshold,
        lid,
        args.target.as_deref(),
    )?;
    let tokens = serialize_prompt(&prompt, &vocab.specials)?;
    let ids: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    println!(
        "{}",
        display_form(&prompt, &vocab.specials, &vocab.tokenizer)?
    );
    println!("tokens: [{}]", ids.join(", "));
    Ok(ExitCode::SUCCESS)
}

fn cmd_build_mask(args: BuildMaskArgs) -> Result<ExitCode> {
    let vocab = load_vocab_manifest(&args.vocab)?;
    let spec = match (&args.script, &args.freq_corpus) {
        (Some(name), None) => MaskSpec::Script {
            name: name.clone(),
            config: args.script_config.clone(),
        },
        (None, Some(corpus)) => MaskSpec::Frequency {
            corpus: corpus.clone(),
            percent: args
                .percent
                .ok_or_else(|| anyhow!("--percent is required with --freq-corpus"))?,
        },
        _ => bail!("use exactly one of --script or --freq-corpus"),
    };
    let mask = build_mask_from_spec(&spec, &vocab)?;
    mask.write_file(&args.out)?;
    println!(
        "wrote {} ({} of {} tokens allowed)",
        args.out.display(),
        mask.allowed_count(),
        mask.vocab_size()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_embed_index(args: EmbedIndexArgs) -> Result<ExitCode> {
    if let Some(path) = &args.validate {
        let index = ObjectIndex::read_file(path)?;
        println!("ok: {} entries, dim {}", index.len(), index.dim());
        return Ok(ExitCode::SUCCESS);
    }
    let labels_path = args
        .labels
        .ok_or_else(|| anyhow!("--labels is required to build"))?;
    let out = args
        .out
        .ok_or_else(|| anyhow!("--out is required to build"))?;
    let text = std::fs::read_to_string(&labels_path)?;
    let labels: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let provider = HashEmbeddingProvider { dim: args.dim };
    let index = build_index(&labels, &provider)?;
    index.write_file(&out)?;
    println!(
        "wrote {} ({} labels, dim {})",
        out.display(),
        index.len(),
        index.dim()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<ExitCode> {
    let index = ObjectIndex::read_file(&args.index)?;
    let frames = prompteer::retrieval::read_embedding_file(&args.frames)?;
    let vectors = frames
        .into_iter()
        .map(|(_, v)| EmbeddingVector::new(v))
        .collect::<Result<Vec<_>, _>>()?;
    let result = retrieve(&vectors, &index, args.top_k)?;
    for (label, score) in result.ranked() {
        println!("{score:.4}\t{label}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_lid(args: LidArgs) -> Result<ExitCode> {
    let vocab = load_vocab_manifest(&args.vocab)?;
    let backend = parse_backend(&args.backend, &vocab)?;
    let allowed = args
        .allowed
        .split(',')
        .map(|c| vocab.languages.require(c.trim()).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let audio = AudioHandle::new(args.audio)?;
    let lid = run_lid(backend.as_ref(), &audio, &allowed, &vocab.specials)?;
    for (lang, p) in &lid.probs {
        println!("{}: {p:.6}", lang.code());
    }
    println!(
        "argmax: {} (confidence {:.6})",
        lid.argmax.code(),
        lid.confidence
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_transcribe(args: TranscribeArgs) -> Result<ExitCode> {
    let vocab = load_vocab_manifest(&args.vocab)?;
    let backend = parse_backend(&args.backend, &vocab)?;
    let audio = AudioHandle::new(args.audio.clone())?;

    let mask: Option<VocabMask> = match (&args.mask_file, &args.script_mask) {
        (Some(path), None) => Some(VocabMask::read_file(path)?),
        (None, Some(name)) => Some(build_mask_from_spec(
            &MaskSpec::Script {
                name: name.clone(),
                config: None,
            },
            &vocab,
        )?),
        (None, None) => None,
        _ => bail!("use at most one of --mask-file / --script-mask"),
    };
    let decode_cfg = DecodeConfig {
        max_new_tokens: args.max_new_tokens,
        strategy: if args.beam > 0 {
            DecodeStrategy::Beam { width: args.beam }
        } else {
            DecodeStrategy::Greedy
        },
        mask,
        ..Default::default()
    };

    let prompt = if args.policy == PolicyArg::Concat {
        let langs = args
            .langs
            .as_deref()
            .ok_or_else(|| anyhow!("--langs is required for concat"))?;
        let pair: Vec<&str> = langs.split(',').map(str::trim).collect();
        if pair.len() != 2 {
            bail!("--langs expects exactly two codes");
        }
        let cfg = ConcatConfig::new(
            vocab.languages.require(pair[0])?,
            vocab.languages.require(pair[1])?,
            args.threshold,
        )?;
        let allowed = [cfg.languages().0.clone(), cfg.languages().1.clone()];
        let lid = run_lid(backend.as_ref(), &audio, &allowed, &vocab.specials)?;
        eprintln!(
            "lid: {} (confidence {:.4})",
            lid.argmax.code(),
            lid.confidence
        );
        build_cs_prompt(&lid, &cfg, &vocab.specials)?
    } else {
        build_policy_prompt(
            &vocab,
            args.policy,
            args.lang.as_deref(),
            args.task,
            args.objects.as_deref(),
            args.top_k,
            args.langs.as_deref(),
            args.threshold,
            None,
            args.target.as_deref(),
        )?
    };

    eprintln!(
        "prompt: {}",
        display_form(&prompt, &vocab.specials, &vocab.tokenizer)?
    );
    let out = run_decode(
        backend.as_ref(),
        &audio,
        &prompt,
        &decode_cfg,
        &vocab.tokenizer,
        &vocab.specials,
    )?;
    println!("{}", out.text);
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let mut cfg = match load_run_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let manifest = match load_manifest(&args.manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    match run_eval(&manifest, &cfg) {
        Ok(report) => {
            print!("{}", report.table_string());
            println!("report: {}", cfg.output_dir.join("report.json").display());
            if report.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &report.failures {
                    eprintln!("record `{}` failed: {}", f.id, f.error);
                }
                Ok(ExitCode::from(1))
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(if e.is_config_error() { 2 } else { 1 }))
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut cfg = match load_run_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let manifest = match load_manifest(&args.manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let parameter: SweepParam = match args.param.parse() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let values = args
        .values
        .split(',')
        .map(|v| v.trim().parse::<f64>().context("bad sweep value"))
        .collect::<Result<Vec<f64>>>()?;
    let sweep = SweepSpec { parameter, values };
    match run_sweep(&manifest, &cfg, &sweep) {
        Ok(result) => {
            println!("value     metric");
            for &i in &result.ranking {
                let row = &result.rows[i];
                match row.metric {
                    Some(m) => println!("{:<9} {m:.2}", row.value),
                    None => println!("{:<9} -", row.value),
                }
            }
            let top: Vec<String> = result.top3.iter().map(|v| v.to_string()).collect();
            println!("top3: [{}]", top.join(", "));
            if let (Some(mean), Some(pooled)) = (result.top3_mean, result.top3_pooled) {
                println!("top3 mean: {mean:.2}   top3 pooled: {pooled:.2}");
            }
            let failed = result.rows.iter().any(|r| !r.report.failures.is_empty());
            Ok(if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(if e.is_config_error() { 2 } else { 1 }))
        }
    }
}
