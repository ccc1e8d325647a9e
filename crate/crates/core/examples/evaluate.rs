//! Scores a perturbed pose against ground truth: per-channel DSC and recall
//! of thresholded maps, per-limb RMSD, and median/IQR aggregation.
//!
//! ```text
//! cargo run --release --example evaluate
//! ```

use limbpose::decoding::{decode, DecodeConfig};
use limbpose::depth::PreprocessConfig;
use limbpose::maskgen::{build_targets, MapKind, TargetConfig};
use limbpose::metrics::{binarize, diagonal, dsc, recall, LimbRmsdReport};
use limbpose::skeleton::{Channel, Limb, NUM_CHANNELS};
use limbpose::synthdata::{generate_dataset, SceneParams};

fn main() {
    let frames = generate_dataset(20, &SceneParams::default(), &PreprocessConfig::default(), 77, "eval/").unwrap();
    let targets = TargetConfig::default();
    // a wider radius stands in for an imperfect detector
    let loose = TargetConfig { radius: 8.0, ..targets };
    let mut report = LimbRmsdReport::default();
    let mut dscs = vec![Vec::new(); NUM_CHANNELS];
    let mut recalls = vec![Vec::new(); NUM_CHANNELS];
    for f in &frames {
        let gt = build_targets(&f.annotation, &targets, MapKind::Binary, 96, 128).unwrap();
        let pred = build_targets(&f.annotation, &loose, MapKind::Binary, 96, 128).unwrap();
        for c in (0..NUM_CHANNELS).filter(|&c| !gt.is_channel_empty(c)) {
            let (p, g) = (binarize(&pred.channel_grid(c), 0.5), binarize(&gt.channel_grid(c), 0.5));
            dscs[c].push(dsc(&p, &g).unwrap());
            recalls[c].push(recall(&p, &g).unwrap());
        }
        let maps = build_targets(&f.annotation, &loose, MapKind::Gaussian, 96, 128).unwrap();
        let pose = decode(&maps, &DecodeConfig::default()).unwrap();
        report.push(&pose, &f.annotation, diagonal(128, 96));
    }
    for c in 0..NUM_CHANNELS {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        println!(
            "{:<22} DSC {:.3}  recall {:.3}",
            Channel::from_index(c).unwrap().name(),
            mean(&dscs[c]),
            mean(&recalls[c])
        );
    }
    for limb in Limb::ALL {
        let s = report.summary(limb).unwrap();
        println!("{:<10} RMSD median {:.3} px, IQR {:.3} (n = {})", limb.name(), s.median, s.iqr, s.n);
    }
}
