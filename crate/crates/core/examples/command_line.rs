//! Drives the command-line front end in-process: synthesize a tiny dataset,
//! decode its ground-truth maps and evaluate the result.
//!
//! ```text
//! cargo run --release --example command_line
//! ```

use limbpose::cli;
use limbpose::io::PipelineConfig;

fn main() {
    let root = std::env::temp_dir().join("limbpose-cli-demo");
    let mut cfg = PipelineConfig::default();
    cfg.paths.dataset = root.join("data");
    cfg.paths.outputs = root.join("out");
    cfg.synth.videos = 1;
    cfg.synth.frames_per_video = 12;
    std::fs::create_dir_all(&root).unwrap();
    let config = root.join("config.toml");
    std::fs::write(&config, cfg.to_toml()).unwrap();
    let config = config.to_str().unwrap();

    for args in [
        vec!["limbpose", "synth", "--config", config],
        vec!["limbpose", "infer", "--config", config, "--oracle-maps"],
        vec!["limbpose", "eval", "--config", config],
    ] {
        println!("$ {}", args[1..].join(" "));
        let code = cli::run(&args);
        if code != 0 {
            eprintln!("exit code {code}");
            std::process::exit(code as i32);
        }
    }
}
