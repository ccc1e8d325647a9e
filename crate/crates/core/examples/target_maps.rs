//! Builds the binary detection targets and Gaussian regression targets for
//! one synthetic frame and reports the support of every channel.
//!
//! ```text
//! cargo run --example target_maps -- [radius]
//! ```

use limbpose::depth::PreprocessConfig;
use limbpose::maskgen::{build_targets, MapKind, TargetConfig};
use limbpose::skeleton::{Channel, NUM_CHANNELS};
use limbpose::synthdata::{generate_frame, SceneParams};

fn main() {
    let radius: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6.0);
    let cfg = TargetConfig {
        radius,
        ..TargetConfig::default()
    };
    let frame = generate_frame(&SceneParams::default(), &PreprocessConfig::default(), 3, 0, "demo").unwrap();
    let (h, w) = (frame.depth.height(), frame.depth.width());
    let binary = build_targets(&frame.annotation, &cfg, MapKind::Binary, h, w).unwrap();
    let gauss = build_targets(&frame.annotation, &cfg, MapKind::Gaussian, h, w).unwrap();

    println!("r = {radius}, sigma = {}, thickness = {}", cfg.sigma(), cfg.thickness());
    println!("{:<22} {:>8} {:>10}", "channel", "pixels", "gauss sum");
    for c in 0..NUM_CHANNELS {
        let pixels = binary.channel(c).iter().filter(|&&v| v > 0.5).count();
        let mass: f32 = gauss.channel(c).iter().sum();
        println!("{:<22} {pixels:>8} {mass:>10.1}", Channel::from_index(c).unwrap().name());
    }
}
