//! Generates a small synthetic video, writes it as 16-bit PGM depth images
//! plus annotation files, and reads one frame back.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [out_dir] [frames]
//! ```

use std::path::PathBuf;

use limbpose::depth::{preprocess, resize_factor, PreprocessConfig};
use limbpose::io::{self, frame_paths, AnnotationFile};
use limbpose::skeleton::JointId;
use limbpose::synthdata::{generate_raw_frame, native_annotation, SceneParams};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/synth_demo".into()));
    let frames: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);

    let params = SceneParams::default().patient(42, 0);
    let pre = PreprocessConfig::default();
    let mut visible = 0;
    for i in 0..frames {
        let (skel, raw) = generate_raw_frame(&params, 42, i as u64);
        let (depth_rel, ann_rel) = frame_paths("p0", i);
        io::write_depth_pgm(&out.join(&depth_rel), &raw).unwrap();
        let ann = native_annotation(&format!("p0/{i:06}"), &skel, &params);
        visible += JointId::ALL.iter().filter(|&&j| ann.visible_position(j).is_some()).count();
        let factor = resize_factor(raw.width, raw.height, pre.width, pre.height).unwrap();
        io::write_json(&out.join(&ann_rel), &AnnotationFile::from_annotation(&ann, 1.0 / factor, None)).unwrap();
    }
    println!("{frames} frames in {}, {visible} visible joints", out.display());

    let (depth_rel, ann_rel) = frame_paths("p0", 0);
    let raw = io::read_depth_image(&out.join(depth_rel)).unwrap();
    let frame = preprocess(&raw, &pre).unwrap();
    let ann = AnnotationFile::read(&out.join(ann_rel)).unwrap().working_annotation().unwrap();
    let (lo, hi) = frame
        .depth
        .as_slice()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!(
        "frame 0: {}x{} native -> {}x{} working, normalized depth in [{lo:.3}, {hi:.3}]",
        raw.width,
        raw.height,
        frame.width(),
        frame.height()
    );
    if let Some(p) = ann.visible_position(JointId::RightElbow) {
        println!("right elbow at ({:.1}, {:.1}) working pixels", p.x, p.y);
    }
}
