use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motion-style")).args(args).env("MOTION_STYLE_OUTPUT_ROOT", root).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let listed = ok(&bin(&["synth-data", "--out", data.to_str().unwrap(), "--variants", "2"], root));
    assert!(listed.lines().any(|l| l.ends_with("train.csv")));

    let cfg = root.join("tiny.cfg");
    std::fs::write(
        &cfg,
        "train_manifest = data/train.csv\nrun_name = tiny\ndesk = true\nseed = 2\niterations = 2\nd = 8\nd_head = 4\nmax_len = 8\nmlp_hidden = 8\nmin_crop = 4\n",
    )
    .unwrap();
    let ckpt = ok(&bin(&["train", "--config", cfg.to_str().unwrap()], root));
    let ckpt = ckpt.trim();
    let run_dir = root.join("tiny");
    assert_eq!(Path::new(ckpt), run_dir.join("latest.ckpt"));
    assert!(run_dir.join("loss_log.csv").exists() && run_dir.join("stamp.txt").exists());

    let out_bvh = root.join("out/x.bvh");
    let c = data.join("neutral_walk_1.bvh");
    let s = data.join("angry_kick_1.bvh");
    ok(&bin(&["transfer", "--ckpt", ckpt, "--content", c.to_str().unwrap(), "--style", s.to_str().unwrap(), "--out", out_bvh.to_str().unwrap()], root));
    assert!(out_bvh.exists() && root.join("out/x_attention.csv").exists());

    let test = data.join("test.csv");
    let train = data.join("train.csv");
    let csv = ok(&bin(&["evaluate", "--ckpt", ckpt, "--test", test.to_str().unwrap(), "--train", train.to_str().unwrap()], root));
    assert!(csv.starts_with("group,category,metric"));
    assert!(root.join("evaluate/metrics.csv").exists());
}

#[test]
fn unknown_config_key_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "train_manifest = x.csv\nlearning_rate = 1\n").unwrap();
    let out = bin(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("learning_rate"), "{err}");
}
