//! Saves a network to a checkpoint, reloads it, and shows that a reload
//! with a different expected architecture is refused.
//!
//! ```text
//! cargo run --release --example checkpoint
//! ```

use limbpose::depth::PreprocessConfig;
use limbpose::nets::checkpoint::{load_detection, save_detection, CheckpointMeta};
use limbpose::nets::{detect_forward, DetectionArch, DetectionNet};
use limbpose::synthdata::{generate_frame, SceneParams};

fn main() {
    let dir = std::env::temp_dir().join("limbpose-checkpoint-demo");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("detection.ckpt");

    let arch = DetectionArch { base_width: 4, skips: true };
    let mut net = DetectionNet::<f32>::new(arch, 7).unwrap();
    let meta = CheckpointMeta {
        epoch: 12,
        validation_score: 0.61,
    };
    save_detection(&mut net, meta, &path).unwrap();
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path).unwrap().len());

    let (loaded, meta) = load_detection(&path, Some(&arch)).unwrap();
    println!("reloaded epoch {} (score {})", meta.epoch, meta.validation_score);

    let frame = generate_frame(&SceneParams::default(), &PreprocessConfig::default(), 0, 0, "demo").unwrap();
    let a = detect_forward(&net, &frame.depth).unwrap();
    let b = detect_forward(&loaded, &frame.depth).unwrap();
    println!("outputs identical after reload: {}", a == b);

    let wider = DetectionArch { base_width: 8, skips: true };
    match load_detection(&path, Some(&wider)) {
        Ok(_) => println!("unexpectedly loaded"),
        Err(e) => println!("expected width 8: {e}"),
    }
}
