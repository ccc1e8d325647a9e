//! Prints the joint/connection channel layout and the limb grouping.
//!
//! ```text
//! cargo run --example skeleton_channels
//! ```

use limbpose::skeleton::{self, channel_index, ConnectionId, Limb};

fn main() {
    print!("{}", skeleton::describe());

    println!();
    for limb in Limb::ALL {
        let [proximal, distal] = limb.connections();
        println!(
            "{limb}: {} -> channel {}, {} -> channel {}",
            proximal.name(),
            channel_index(proximal),
            distal.name(),
            channel_index(distal)
        );
    }
    let (a, b) = ConnectionId::LeftKneeAnkle.endpoints();
    println!("left knee-ankle joins {} and {}", a.short_name(), b.short_name());
}
