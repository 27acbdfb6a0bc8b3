//! Drive the command line in-process: synth, train, infer, score.
//!
//! cargo run --example cli_pipeline -- /tmp/pipeline

use std::path::PathBuf;

fn main() {
    let root = std::env::args().nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("scd_pipeline"));
    let p = |s: &str| root.join(s).display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), p("data"), "--count".into(), "20".into(), "--force".into()],
        vec!["train".into(), "--data".into(), p("data"), "--out".into(), p("run"), "--epochs".into(), "3".into(), "--atl-epochs".into(), "2".into()],
        vec![
            "infer".into(), "--checkpoint".into(), p("run/model.ckpt"), "--im1".into(), p("data/im1/00000.png"),
            "--im2".into(), p("data/im2/00000.png"), "--tta".into(), "ms,flip".into(), "--out".into(), p("pred"),
        ],
        vec!["score".into(), "--pred-dir".into(), p("pred"), "--gt-dir".into(), p("pred"), "--classes".into(), "4".into()],
    ];
    if root.join("run").exists() {
        eprintln!("{} already holds a run; pick a fresh directory", root.display());
        std::process::exit(2);
    }
    for args in steps {
        println!("$ scd {}", args.join(" "));
        let code = scd::cli::run_with(std::iter::once("scd".to_string()).chain(args));
        if code != 0 {
            std::process::exit(code);
        }
    }
}
