//! The `stegan` command-line tool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::baseline::{lsb_extract, lsb_hide};
use crate::error::{Error, Result};
use crate::imageio::{is_lossy_path, load_png};
use crate::keynoise::{EmbeddingKey, ShuffleKey};
use crate::metrics::{self, AuditOptions, RandomConvFeatures};
use crate::netarch::StegoModel;
use crate::stego::{self, Checkpointer};
use crate::trainer::{IterationRecord, StageSummary, TrainConfig, TrainObserver};

#[derive(Debug, Parser)]
#[command(name = "stegan", version, about = "Hide images inside single-image generative models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model of the cover that regenerates each secret from its key.
    Hide(HideArgs),
    /// Regenerate a hidden image from a model and its key.
    Extract(ExtractArgs),
    /// Quality, diversity, weight-divergence and leakage probes.
    Audit(AuditArgs),
    /// Least-significant-bit baseline.
    Lsb {
        #[command(subcommand)]
        op: LsbOp,
    },
    /// Draw unconditional samples.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct HideArgs {
    #[arg(long)]
    pub cover: PathBuf,
    /// Secret image; repeat for several. Without any, trains a plain model of the cover.
    #[arg(long = "secret")]
    pub secrets: Vec<PathBuf>,
    /// Embedding key, one per secret. `@path` reads the key bytes from a file.
    #[arg(long = "key")]
    pub keys: Vec<String>,
    #[arg(long)]
    pub obfuscate: bool,
    #[arg(long = "shuffle-key")]
    pub shuffle_keys: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file overriding the training defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the small CPU profile (500 iterations, 4 stages).
    #[arg(long)]
    pub reduced: bool,
    /// JSON-lines progress log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write a checkpoint every K iterations.
    #[arg(long, value_name = "K")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub key: String,
    #[arg(long = "shuffle-key")]
    pub shuffle_key: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Print PSNR and SSIM against this image.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub stego: PathBuf,
    #[arg(long)]
    pub original: Option<PathBuf>,
    #[arg(long)]
    pub cover: PathBuf,
    #[arg(long)]
    pub secret: Option<PathBuf>,
    /// Leakage samples.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = metrics::DS_SAMPLES)]
    pub ds_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = metrics::LEAKAGE_THRESHOLD)]
    pub threshold: f64,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for per-block weight histogram CSVs (needs --original).
    #[arg(long)]
    pub histograms: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LsbOp {
    Hide {
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Extract {
        #[arg(long)]
        stego: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short = 'n', default_value_t = 1)]
    pub count: usize,
    /// Output directory; files are named `sample_<seed>.png`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn key_bytes(spec: &str) -> Result<Vec<u8>> {
    match spec.strip_prefix('@') {
        Some(path) => std::fs::read(path).map_err(|e| Error::io(path, e)),
        None => Ok(spec.as_bytes().to_vec()),
    }
}

pub fn embedding_key(spec: &str) -> Result<EmbeddingKey> {
    EmbeddingKey::new(key_bytes(spec)?)
}

pub fn shuffle_key(spec: &str) -> Result<ShuffleKey> {
    ShuffleKey::new(key_bytes(spec)?)
}

/// Applies `key = value` lines to `base`. Blank lines and `#` comments are
/// ignored; keys are the [`TrainConfig`] field names.
pub fn parse_config(text: &str, mut cfg: TrainConfig) -> Result<TrainConfig> {
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let bad = || Error::invalid(format!("config line {}: bad value `{v}` for `{k}`", no + 1));
        match k {
            "lambda" => cfg.lambda = v.parse().map_err(|_| bad())?,
            "gp_coeff" => cfg.gp_coeff = v.parse().map_err(|_| bad())?,
            "lr" => cfg.lr = v.parse().map_err(|_| bad())?,
            "lr_decay" => cfg.lr_decay = v.parse().map_err(|_| bad())?,
            "decay_at_fraction" => cfg.decay_at_fraction = v.parse().map_err(|_| bad())?,
            "adam_beta1" => cfg.adam_beta1 = v.parse().map_err(|_| bad())?,
            "adam_beta2" => cfg.adam_beta2 = v.parse().map_err(|_| bad())?,
            "iters_per_stage" => cfg.iters_per_stage = v.parse().map_err(|_| bad())?,
            "stages" => cfg.stages = v.parse().map_err(|_| bad())?,
            "coarsest_min_dim" => cfg.coarsest_min_dim = v.parse().map_err(|_| bad())?,
            "trainable_block_window" => cfg.trainable_block_window = v.parse().map_err(|_| bad())?,
            "critic_steps" => cfg.critic_steps = v.parse().map_err(|_| bad())?,
            "hidden_width" => cfg.hidden_width = v.parse().map_err(|_| bad())?,
            "noise_amp_scale" => cfg.noise_amp_scale = v.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::invalid(format!("config line {}: unknown key `{k}`", no + 1))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes next to `path` and renames, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, img: &crate::ImageU8) -> Result<()> {
    if is_lossy_path(path) {
        return Err(Error::invalid(format!("{}: output must be PNG", path.display())));
    }
    write_atomic(path, &crate::imageio::encode_png(img)?)
}

struct JsonLog {
    out: BufWriter<File>,
}

impl JsonLog {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { out: BufWriter::new(f) })
    }

    fn line(&mut self, v: serde_json::Value) {
        let _ = writeln!(self.out, "{v}");
    }
}

impl TrainObserver for JsonLog {
    fn on_iteration(&mut self, r: &IterationRecord, _model: &StegoModel) {
        let mut v = serde_json::to_value(r).unwrap_or_default();
        v["event"] = json!("iteration");
        self.line(v);
    }

    fn on_stage_end(&mut self, s: &StageSummary, _model: &StegoModel) {
        let mut v = serde_json::to_value(s).unwrap_or_default();
        v["event"] = json!("stage");
        self.line(v);
        let _ = self.out.flush();
    }
}

fn cmd_hide(a: &HideArgs) -> Result<()> {
    if a.secrets.len() != a.keys.len() {
        return Err(Error::invalid(format!(
            "{} secrets but {} keys; give one --key per --secret",
            a.secrets.len(),
            a.keys.len()
        )));
    }
    if a.obfuscate != !a.shuffle_keys.is_empty() {
        return Err(Error::invalid("--obfuscate and --shuffle-key must be used together"));
    }
    if a.obfuscate && a.shuffle_keys.len() != a.secrets.len() {
        return Err(Error::invalid("give one --shuffle-key per --secret"));
    }
    let base = if a.reduced { TrainConfig::reduced() } else { TrainConfig::default() };
    let cfg = match &a.config {
        Some(p) => parse_config(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?, base)?,
        None => {
            base.validate()?;
            base
        }
    };
    let keys = a.keys.iter().map(|k| embedding_key(k)).collect::<Result<Vec<_>>>()?;
    let shuffle = a.shuffle_keys.iter().map(|k| shuffle_key(k)).collect::<Result<Vec<_>>>()?;
    let cover = load_png(&a.cover)?;
    let secrets = a.secrets.iter().map(load_png).collect::<Result<Vec<_>>>()?;

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log = JsonLog::create(&log_path)?;
    log.line(json!({
        "event": "start",
        "cover": a.cover,
        "secrets": a.secrets,
        "obfuscate": a.obfuscate,
        "config": cfg,
    }));
    let started = std::time::Instant::now();
    let shuffle_arg = a.obfuscate.then_some(shuffle.as_slice());
    let run = |obs: &mut dyn TrainObserver| {
        if secrets.is_empty() {
            stego::train_original(&cover, &cfg, obs)
        } else {
            stego::hide(&cover, &secrets, &keys, a.obfuscate, shuffle_arg, &cfg, obs)
        }
    };
    let result = match a.checkpoint_every {
        Some(k) => {
            let mut ck_path = a.out.as_os_str().to_owned();
            ck_path.push(".ckpt");
            let mut ck = Checkpointer::new(PathBuf::from(ck_path), k, &mut log);
            let r = run(&mut ck);
            match ck.error.take() {
                Some(e) => Err(e),
                None => r,
            }
        }
        None => run(&mut log),
    };
    let model = match result {
        Ok(m) => m,
        Err(e) => {
            log.line(json!({"event": "error", "message": e.to_string()}));
            let _ = log.out.flush();
            return Err(e);
        }
    };
    write_atomic(&a.out, &stego::save(&model))?;
    log.line(json!({
        "event": "done",
        "seconds": started.elapsed().as_secs_f64(),
        "params": model.generator.param_count(),
        "out": a.out,
    }));
    let _ = log.out.flush();
    Ok(())
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let model = stego::load_file(&a.model)?;
    let key = embedding_key(&a.key)?;
    let sk = a.shuffle_key.as_deref().map(shuffle_key).transpose()?;
    let reference = a.reference.as_ref().map(load_png).transpose()?;
    if is_lossy_path(&a.out) {
        return Err(Error::invalid(format!("{}: output must be PNG", a.out.display())));
    }
    let img = stego::extract(&model, &key, sk.as_ref())?;
    write_png(&a.out, &img)?;
    if let Some(r) = reference {
        let r = crate::pyramid::resize_u8(&r, img.height(), img.width())?;
        println!("PSNR: {:.4}", metrics::psnr(&img, &r)?);
        println!("SSIM: {:.6}", metrics::ssim(&img, &r)?);
    }
    Ok(())
}

fn cmd_audit(a: &AuditArgs) -> Result<()> {
    if a.histograms.is_some() && a.original.is_none() {
        return Err(Error::invalid("--histograms needs --original"));
    }
    let stego_model = stego::load_file(&a.stego)?;
    let original = a.original.as_ref().map(stego::load_file).transpose()?;
    let cover = load_png(&a.cover)?;
    let secret = a.secret.as_ref().map(load_png).transpose()?;
    let opts = AuditOptions {
        ds_samples: a.ds_samples,
        leakage_samples: a.samples,
        threshold: a.threshold,
        seed: a.seed,
        ..AuditOptions::default()
    };
    let report = metrics::audit(
        &stego_model,
        original.as_ref(),
        &cover,
        secret.as_ref(),
        &RandomConvFeatures::default(),
        &opts,
    )?;
    let text = report.to_text();
    match &a.report {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    if let (Some(dir), Some(k)) = (&a.histograms, &report.kld) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for h in &k.histograms {
            let p = dir.join(format!("hist_{}.csv", h.label));
            write_atomic(&p, h.to_csv().as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_lsb(op: &LsbOp) -> Result<()> {
    match op {
        LsbOp::Hide { cover, secret, out } => {
            if is_lossy_path(out) {
                return Err(Error::invalid(format!("{}: LSB output must be lossless PNG", out.display())));
            }
            let stego = lsb_hide(&load_png(cover)?, &load_png(secret)?)?;
            write_png(out, &stego)
        }
        LsbOp::Extract { stego, out } => {
            if is_lossy_path(out) {
                return Err(Error::invalid(format!("{}: LSB output must be lossless PNG", out.display())));
            }
            write_png(out, &lsb_extract(&load_png(stego)?))
        }
    }
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let model = stego::load_file(&a.model)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for seed in stego::sample_seeds(a.seed, a.count) {
        let img = stego::sample(&model, seed)?;
        write_png(&a.out_dir.join(format!("sample_{seed}.png")), &img)?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Hide(a) => cmd_hide(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Lsb { op } => cmd_lsb(op),
        Command::Sample(a) => cmd_sample(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_defaults() {
        let cfg = parse_config("# run\niters_per_stage = 10\nlr=1e-3 # fast\n\nseed=7\n", TrainConfig::default()).unwrap();
        assert_eq!(cfg.iters_per_stage, 10);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lambda, 10.0);
    }

    #[test]
    fn config_errors() {
        assert!(parse_config("nope=1", TrainConfig::default()).is_err());
        assert!(parse_config("lr", TrainConfig::default()).is_err());
        assert!(parse_config("stages=x", TrainConfig::default()).is_err());
        assert!(parse_config("stages=0", TrainConfig::default()).is_err());
    }

    #[test]
    fn file_keys_hash_like_string_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.bin");
        std::fs::write(&p, b"secret words").unwrap();
        let a = embedding_key(&format!("@{}", p.display())).unwrap();
        let b = embedding_key("secret words").unwrap();
        assert_eq!(a.seed(), b.seed());
    }
}
