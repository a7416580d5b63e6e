use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rppg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rppg")).current_dir(dir).args(args).output().expect("binary runs")
}

fn tiny_dataset(dir: &Path) {
    fs::write(dir.join("ds.cfg"), "n_train = 2\nn_test = 2\nt = 128\nh = 32\nw = 32\n").unwrap();
    let o = rppg(dir, &["--config", "ds.cfg", "synth", "--out", "data"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_is_reproducible_and_seed_overrides() {
    let d = tempfile::tempdir().unwrap();
    tiny_dataset(d.path());
    let first = fs::read(d.path().join("data/manifest.csv")).unwrap();
    assert!(rppg(d.path(), &["--config", "ds.cfg", "synth", "--out", "again"]).status.success());
    assert_eq!(first, fs::read(d.path().join("again/manifest.csv")).unwrap());
    assert!(rppg(d.path(), &["--config", "ds.cfg", "--seed", "9", "synth", "--out", "other"]).status.success());
    assert_ne!(first, fs::read(d.path().join("other/manifest.csv")).unwrap());
}

#[test]
fn extract_edit_benchmark_and_plot() {
    let d = tempfile::tempdir().unwrap();
    tiny_dataset(d.path());
    let p = d.path();
    assert!(rppg(p, &["extract", "--in", "data/test_000.rpcl", "--method", "pos", "--out", "pos.csv"]).status.success());
    assert!(fs::read_to_string(p.join("pos.csv")).unwrap().lines().count() > 100);

    let o = rppg(p, &[
        "edit", "--in", "data/test_000.rpcl", "--signal", "data/test_000.csv", "--mode", "phase", "--tau", "-4",
        "--out", "e.rpcl", "--report", "r.csv",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(p.join("r.csv")).unwrap();
    assert!(report.starts_with("mode,psnr_db,ssim,n_frames\nphase,"));

    let o = rppg(p, &["benchmark", "--data", "data", "--methods", "green,pos,ghost=none.rpwt", "--out", "m.csv"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost"));
    let metrics = fs::read_to_string(p.join("m.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 6 + 1);
    assert!(metrics.contains("ghost,clean,NaN"));

    assert!(rppg(p, &["plot", "--in", "m.csv", "--out", "m.svg"]).status.success());
    assert!(fs::read_to_string(p.join("m.svg")).unwrap().contains("<rect"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(rppg(p, &["synth"]).status.code(), Some(2));
    assert_eq!(rppg(p, &["extract", "--in", "absent.rpcl", "--method", "pos", "--out", "x.csv"]).status.code(), Some(3));
    fs::write(p.join("junk.rpcl"), b"not a clip at all").unwrap();
    assert_eq!(rppg(p, &["extract", "--in", "junk.rpcl", "--method", "pos", "--out", "x.csv"]).status.code(), Some(3));
    fs::write(p.join("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(rppg(p, &["--config", "bad.cfg", "synth", "--out", "o"]).status.code(), Some(2));
    tiny_dataset(p);
    assert_eq!(rppg(p, &["extract", "--in", "data/test_000.rpcl", "--method", "net", "--out", "x.csv"]).status.code(), Some(2));
    assert_eq!(rppg(p, &["train", "--stage", "4", "--data", "data", "--out", "w.rpwt"]).status.code(), Some(2));
}

#[test]
fn three_stage_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    tiny_dataset(p);
    fs::write(p.join("tr.cfg"), "warmup_epochs = 0\nepochs = 1\nbatch_size = 1\n").unwrap();
    let run = |args: &[&str]| {
        let o = rppg(p, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["--config", "tr.cfg", "train", "--stage", "1", "--data", "data", "--out", "e1.rpwt", "--log", "l1.csv"]);
    run(&["--config", "tr.cfg", "train", "--stage", "2", "--data", "data", "--reference", "e1.rpwt", "--out", "g.rpwt"]);
    run(&["--config", "tr.cfg", "train", "--stage", "3", "--data", "data", "--generator", "g.rpwt", "--out", "e3.rpwt", "--log", "l3.csv"]);
    let log = fs::read_to_string(p.join("l3.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,l_nul,l_equ_amp"));
    assert_eq!(log.lines().count(), 2);
    run(&["extract", "--in", "data/test_000.rpcl", "--method", "net", "--weights", "e3.rpwt", "--out", "n.csv"]);
    run(&["edit", "--in", "data/test_000.rpcl", "--signal", "n.csv", "--mode", "amplitude", "--generator", "g.rpwt", "--out", "e.rpcl"]);
}

#[test]
fn diagnose_writes_all_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("ds.cfg"), "t = 128\nh = 32\nw = 32\n").unwrap();
    let o = rppg(p, &["--config", "ds.cfg", "diagnose", "--out", "diag", "--clips", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["flicker.csv", "flicker_summary.csv", "waveforms.csv", "waveforms.svg", "sweep.csv", "sweep.svg"] {
        assert!(p.join("diag").join(f).exists(), "{f}");
    }
}
