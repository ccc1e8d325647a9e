//! Renders a decoded pose over its depth frame with one color per limb.
//!
//! ```text
//! cargo run --release --example overlay -- [out.png]
//! ```

use limbpose::decoding::{decode, DecodeConfig};
use limbpose::depth::PreprocessConfig;
use limbpose::io::{limb_color, render_overlay, save_png};
use limbpose::maskgen::{build_targets, MapKind, TargetConfig};
use limbpose::skeleton::Limb;
use limbpose::synthdata::{generate_frame, SceneParams};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/overlay.png".into());
    let frame = generate_frame(&SceneParams::default(), &PreprocessConfig::default(), 5, 2, "demo").unwrap();
    let maps = build_targets(&frame.annotation, &TargetConfig::default(), MapKind::Gaussian, 96, 128).unwrap();
    let pose = decode(&maps, &DecodeConfig::default()).unwrap();
    let img = render_overlay(&frame.depth, &pose, 4);
    save_png(out.as_ref(), &img).unwrap();
    for limb in Limb::ALL {
        println!("{:<10} {:?}", limb.name(), limb_color(limb).0);
    }
    println!("wrote {}x{} overlay to {out}", img.width(), img.height());
}
