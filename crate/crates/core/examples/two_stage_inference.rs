//! Runs the full two-stage pipeline on a frame: detection maps, regression
//! maps, then decoding into limbs. The networks here are untrained, so the
//! pose is arbitrary; the point is the data flow and per-stage timing.
//!
//! ```text
//! cargo run --release --example two_stage_inference
//! ```

use std::time::Instant;

use limbpose::decoding::{decode, DecodeConfig};
use limbpose::depth::PreprocessConfig;
use limbpose::nets::{detect_forward, regress_forward, DetectionArch, DetectionNet, RegressionArch, RegressionNet};
use limbpose::synthdata::{generate_frame, SceneParams};

fn main() {
    let frame = generate_frame(&SceneParams::default(), &PreprocessConfig::default(), 1, 0, "demo").unwrap();
    let det = DetectionNet::<f32>::new(DetectionArch { base_width: 16, skips: false }, 0).unwrap();
    let reg = RegressionNet::<f32>::new(RegressionArch { base_width: 16 }, 0).unwrap();

    let t = Instant::now();
    let masks = detect_forward(&det, &frame.depth).unwrap();
    let t_det = t.elapsed();
    let t = Instant::now();
    let maps = regress_forward(&reg, &frame.depth, &masks).unwrap();
    let t_reg = t.elapsed();
    let t = Instant::now();
    let pose = decode(&maps, &DecodeConfig::default()).unwrap();
    let t_dec = t.elapsed();

    println!("detection {t_det:.2?}, regression {t_reg:.2?}, decoding {t_dec:.2?}");
    for limb in &pose.limbs {
        println!(
            "{:<10} {} joints, {} connections, confidence {:.3}",
            limb.limb.name(),
            limb.num_joints(),
            limb.num_connections(),
            limb.confidence
        );
    }
}
