use std::path::Path;
use std::process::{Command, Output};

fn iidm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iidm")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_writes_every_scene() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = iidm(&["gen", "--seed", "1", "--size", "32", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("config.toml").is_file());
    for k in 0..3 {
        for f in ["imagery.ras", "canopy.ras", "mask.ras", "patch_map.ras", "truth.ras"] {
            assert!(out.join(format!("scene_{k}")).join(f).is_file(), "scene_{k}/{f}");
        }
    }
}

#[test]
fn train_without_scenes_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = iidm(&["train", "--out", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
}

#[test]
fn identity_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(iidm(&["gen", "--size", "16", "--out", out]).status.success());
    let truth = dir.path().join("scene_0/truth.ras");
    let mask = dir.path().join("scene_0/mask.ras");
    let t = truth.to_str().unwrap();
    let o = iidm(&["eval", "--pred", t, "--truth", t, "--mask", mask.to_str().unwrap(), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(Path::new(out).join("metrics.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let header = rows.headers().unwrap().clone();
    let row = rows.records().next().unwrap().unwrap();
    let field = |name: &str| row[header.iter().position(|h| h == name).unwrap()].to_string();
    assert_eq!(field("mae").parse::<f64>().unwrap(), 0.0);
    assert_eq!(field("ssim").parse::<f64>().unwrap(), 1.0);
    assert_eq!(field("psnr"), "inf");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(iidm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(iidm(&["gen", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(iidm(&["gen", "--size", "many"]).status.code(), Some(1));
    assert_eq!(iidm(&[]).status.code(), Some(1));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nstepz = 3\n").unwrap();
    let o = iidm(&["gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));

    std::fs::write(&cfg, "[modules]\nvgg = true\nkd_vgg = true\n").unwrap();
    let o = iidm(&["gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_the_subcommands() {
    let o = iidm(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["gen", "distill", "train", "estimate", "eval", "ablate", "baseline"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
