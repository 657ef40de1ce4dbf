//! Hides one image in a model of another with the small CPU profile, then
//! extracts it and reports the quality.
//!
//! cargo run --release --example roundtrip -- COVER.png SECRET.png [ITERS]

use stegan_core::imageio::load_png;
use stegan_core::keynoise::EmbeddingKey;
use stegan_core::metrics::{psnr, ssim};
use stegan_core::stego::{extract, hide};
use stegan_core::trainer::{IterationRecord, StageSummary, TrainConfig, TrainObserver};
use stegan_core::netarch::StegoModel;

struct Progress;

impl TrainObserver for Progress {
    fn on_iteration(&mut self, r: &IterationRecord, _m: &StegoModel) {
        if r.iteration % 100 == 0 {
            println!("stage {} iter {:4}: critic {:+.4} rec {:.5}", r.stage, r.iteration, r.critic_loss, r.rec_loss);
        }
    }

    fn on_stage_end(&mut self, s: &StageSummary, _m: &StegoModel) {
        println!("stage {} done in {:.0}s, rec {:.5}", s.stage, s.seconds, s.rec_loss_last);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: roundtrip COVER.png SECRET.png [ITERS]");
        std::process::exit(2);
    }
    let cover = load_png(&args[1])?;
    let secret = load_png(&args[2])?;
    let mut cfg = TrainConfig::reduced();
    if let Some(it) = args.get(3) {
        cfg.iters_per_stage = it.parse()?;
    }
    let key = EmbeddingKey::new("example key")?;
    let started = std::time::Instant::now();
    let model = hide(&cover, &[secret.clone()], &[key.clone()], false, None, &cfg, &mut Progress)?;
    let out = extract(&model, &key, None)?;
    println!(
        "trained in {:.0}s: PSNR {:.2} dB, SSIM {:.4}",
        started.elapsed().as_secs_f64(),
        psnr(&out, &secret)?,
        ssim(&out, &secret)?
    );
    Ok(())
}
