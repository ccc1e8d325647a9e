//! Decodes ground-truth regression maps back into limbs: peak extraction,
//! line-integral scoring and optimal matching per connection.
//!
//! ```text
//! cargo run --release --example decode_poses
//! ```

use limbpose::decoding::{decode, joint_candidates, match_connection, DecodeConfig};
use limbpose::depth::PreprocessConfig;
use limbpose::maskgen::{build_targets, MapKind, TargetConfig};
use limbpose::skeleton::{channel_index, ConnectionId, JointId};
use limbpose::synthdata::{generate_frame, SceneParams};

fn main() {
    let frame = generate_frame(&SceneParams::default(), &PreprocessConfig::default(), 12, 4, "demo").unwrap();
    let ann = &frame.annotation;
    let maps = build_targets(ann, &TargetConfig::default(), MapKind::Gaussian, 96, 128).unwrap();
    let cfg = DecodeConfig::default();

    let shoulder = joint_candidates(&maps.channel_grid(channel_index(JointId::RightShoulder)), JointId::RightShoulder, &cfg).unwrap();
    let elbow = joint_candidates(&maps.channel_grid(channel_index(JointId::RightElbow)), JointId::RightElbow, &cfg).unwrap();
    let link = ConnectionId::RightShoulderElbow;
    let m = match_connection(&shoulder, &elbow, &maps.channel_grid(channel_index(link)), &cfg);
    println!("{}: {} x {} candidates, scores {:?}", link.name(), shoulder.len(), elbow.len(), m.scores);

    let pose = decode(&maps, &cfg).unwrap();
    for j in JointId::ALL {
        let truth = ann.visible_position(j);
        match (pose.joint(j), truth) {
            (Some(est), Some(t)) => println!(
                "{:<3} ({:6.2}, {:6.2})  error {:.2} px",
                j.short_name(),
                est.position.x,
                est.position.y,
                est.position.dist(t)
            ),
            (Some(est), None) => println!("{:<3} ({:6.2}, {:6.2})  not annotated", j.short_name(), est.position.x, est.position.y),
            (None, _) => println!("{:<3} not found", j.short_name()),
        }
    }
}
