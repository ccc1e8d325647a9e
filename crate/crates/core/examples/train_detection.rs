//! Trains a narrow detection network on synthetic frames for a few epochs
//! and prints the per-epoch history.
//!
//! ```text
//! cargo run --release --example train_detection -- [frames] [epochs] [width]
//! ```

use limbpose::depth::PreprocessConfig;
use limbpose::nets::{DetectionArch, DetectionNet};
use limbpose::synthdata::{generate_dataset, SceneParams};
use limbpose::training::{detection_examples, fit_detection, EpochRecord, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let frames = args.next().flatten().unwrap_or(60);
    let epochs = args.next().flatten().unwrap_or(3);
    let width = args.next().flatten().unwrap_or(8);

    let data = generate_dataset(frames, &SceneParams::default(), &PreprocessConfig::default(), 9, "demo/").unwrap();
    let pairs: Vec<_> = data.into_iter().map(|f| (f.depth, f.annotation)).collect();
    let cfg = TrainConfig {
        epochs,
        learning_rate: 0.003,
        batch_size: 4,
        output_prior: Some(0.01),
        ..TrainConfig::default()
    };
    let examples = detection_examples(&pairs, &cfg.targets).unwrap();
    let n_val = (examples.len() as f64 * cfg.validation_fraction).round() as usize;
    let (val, train) = examples.split_at(n_val);

    let mut net = DetectionNet::<f32>::new(DetectionArch { base_width: width, skips: false }, cfg.seed).unwrap();
    net.set_output_prior(cfg.output_prior.unwrap());
    let mut report = |r: &EpochRecord| {
        println!(
            "epoch {:>3}  lr {:.5}  train BCE {:.5}  val BCE {:.5}  val mean joint DSC {:.4}{}",
            r.epoch,
            r.lr,
            r.train_loss,
            r.val_loss,
            r.val_metric,
            if r.best { "  *" } else { "" }
        )
    };
    let history = fit_detection(&mut net, train, val, &cfg, Some(&mut report)).unwrap();
    println!("best epoch {} with DSC {:.4}", history.best_epoch, history.best_metric);
}
