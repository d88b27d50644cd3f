//! Runs every subcommand on tiny inputs and compares output trees.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SUBCOMMANDS: [&str; 9] = [
    "synth", "augment", "motion", "train", "track", "eval", "sweep", "gls", "gradcheck",
];

const TINY_ENCODER: &str = r#"{"channels":[4,8,8,8],"resolution":32,"weight_seed":0}"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specktrack"))
}

/// Runs the binary in `cwd`; relative paths keep manifests location-independent.
pub fn run(cwd: &Path, args: &[&str]) -> Output {
    bin().current_dir(cwd).args(args).output().expect("binary runs")
}

pub fn run_ok(cwd: &Path, args: &[&str]) -> Output {
    let out = run(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs all subcommands single-threaded under `root`, returning each output directory.
pub fn pipeline(root: &Path) -> Vec<(&'static str, PathBuf)> {
    fs::create_dir_all(root.join("cfg")).unwrap();
    let write = |name: &str, text: String| fs::write(root.join("cfg").join(name), text).unwrap();
    write("synth.json", r#"{"num_videos":2,"num_frames":10,"points_per_video":12}"#.into());
    write("augment.json", r#"{"copies":2}"#.into());
    write("motion.json", r#"{"num_phases":5,"num_bins":8}"#.into());
    write(
        "train.json",
        format!(r#"{{"total_steps":3,"clip_length":4,"batch_size":1,"points_per_sample":8,"checkpoint_every":2,"encoder":{TINY_ENCODER}}}"#),
    );
    write("model.json", format!(r#"{{"encoder":{TINY_ENCODER}}}"#));
    write("sweep.json", format!(r#"{{"model":{{"encoder":{TINY_ENCODER}}},"num_phases":3}}"#));
    write("gls.json", format!(r#"{{"model":{{"encoder":{TINY_ENCODER}}}}}"#));
    let common = ["--threads", "1", "--seed", "7", "--plot"];
    let steps: [(&str, Vec<&str>); 9] = [
        ("synth", vec!["synth", "--config", "cfg/synth.json"]),
        ("augment", vec!["augment", "--dataset", "synth", "--config", "cfg/augment.json"]),
        ("motion", vec!["motion", "--dataset", "synth", "--config", "cfg/motion.json"]),
        ("train", vec!["train", "--dataset", "synth", "--config", "cfg/train.json"]),
        (
            "track",
            vec![
                "track", "--video", "synth/sample_0000.ustv", "--reference", "synth/sample_0000.json",
                "--weights", "train/checkpoint_last.json", "--config", "cfg/model.json",
            ],
        ),
        ("eval", vec!["eval", "--dataset", "synth", "--weights", "train/checkpoint_best.json"]),
        ("sweep", vec!["sweep", "--dataset", "synth", "--config", "cfg/sweep.json"]),
        ("gls", vec!["gls", "--dataset", "synth", "--config", "cfg/gls.json"]),
        ("gradcheck", vec!["gradcheck", "--tiny"]),
    ];
    let mut dirs = Vec::new();
    for (name, args) in steps {
        let mut full = args.clone();
        full.extend(common);
        full.extend(["--output-dir", name]);
        run_ok(root, &full);
        dirs.push((name, root.join(name)));
    }
    dirs
}

/// Relative path to contents for every file below `dir`.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Subcommands whose output trees differ between the two roots, with the first differing file.
pub fn differing(a: &[(&'static str, PathBuf)], b: &[(&'static str, PathBuf)]) -> Vec<String> {
    let mut bad = Vec::new();
    for ((name, da), (_, db)) in a.iter().zip(b) {
        let (ta, tb) = (tree(da), tree(db));
        if ta.keys().ne(tb.keys()) {
            bad.push(format!("{name}: file lists differ"));
        } else if let Some(k) = ta.keys().find(|k| ta[*k] != tb[*k]) {
            bad.push(format!("{name}: {} differs", k.display()));
        }
    }
    bad
}
