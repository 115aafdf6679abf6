use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use erpnerf::io::{load_checkpoint, load_dataset, read_curve, RunConfig, RunLayout};
use erpnerf::trainer::Trainer;

fn erpnerf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erpnerf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = erpnerf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(out: &Path) {
    ok(&["gen", "--scene", "toy", "--train", "2", "--test", "2", "--size", "128x64", "--seed", "5", "--out", p(out)]);
}

const TINY: [&str; 12] = [
    "--rays", "64", "--n-coarse", "4", "--n-fine", "4", "--net-depth", "1", "--net-width", "16", "--chunk-rays", "64",
];

fn train(data: &Path, run: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--out", p(run)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    erpnerf(&args)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        } else {
            out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn gen_twice_gives_identical_directories() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path());
    gen(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 5);
    assert!(ta == tb);
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    gen(&data);
    let out = train(&data, &run, &["--iters", "0", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let layout = RunLayout::new(&run);
    let rows = read_curve(&layout.curve()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].iter, 0);
    assert_eq!(rows[1].iter, 0);

    let cfg = RunConfig::load(&layout.config()).unwrap();
    let ds = load_dataset(&data).unwrap();
    let init = Trainer::<f32>::new(cfg.train(), cfg.render(), cfg.field(), &ds).unwrap().checkpoint();
    let saved = load_checkpoint(&layout.checkpoint()).unwrap();
    assert_eq!(saved.iteration, 0);
    assert_eq!(saved.coarse.params(), init.coarse.params());
    assert_eq!(saved.fine.params(), init.fine.params());
    assert_eq!(saved.coarse.config(), init.coarse.config());
}

#[test]
fn pipeline_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    ok(&["gen", "--train", "2", "--test", "2", "--size", "128x64", "--out", p(&data)]);
    let out = train(&data, &run, &["--iters", "20", "--eval-every", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let layout = RunLayout::new(&run);
    for f in [layout.config(), layout.curve(), layout.checkpoint()] {
        assert!(f.is_file(), "{} missing", f.display());
    }
    assert_eq!(read_curve(&layout.curve()).unwrap().len(), 3);
    for it in [0, 10, 20] {
        assert!(layout.snapshot(it).is_file());
        assert!(layout.heatmap(it, 1).is_file());
    }

    let printed = ok(&["eval", "--run", p(&run), "--data", p(&data), "--bands", "--crops"]);
    assert!(printed.contains("PSNR"));
    for f in [layout.eval_summary(), layout.eval_bands(), layout.eval_crops()] {
        let text = fs::read_to_string(&f).unwrap();
        assert_eq!(text.lines().count(), 3, "{}", f.display());
    }

    let png = dir.path().join("heat.png");
    ok(&["heatmap", "--run", p(&run), "--iter", "10", "--image", "1", "--out", p(&png)]);
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (128, 64));
    assert_eq!(img.color(), image::ColorType::L8);
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));

    assert_eq!(erpnerf(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(erpnerf(&["train", "--distortion", "maybe"]).status.code(), Some(2));

    let missing = train(&dir.path().join("absent"), &run, &["--iters", "1"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent"));

    gen(&data);
    let invalid = train(&data, &run, &["--iters", "1", "--rays", "0"]);
    assert_eq!(invalid.status.code(), Some(2));
    assert!(!run.exists(), "invalid configuration should fail before writing");

    let diverged = train(&data, &run, &["--iters", "50", "--lr-start", "1e30", "--lr-end", "1e29"]);
    assert_eq!(diverged.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverged.stderr));

    let out = train(&data, &run, &["--iters", "0"]);
    assert!(out.status.success());
    let bad_image = erpnerf(&["heatmap", "--run", p(&run), "--image", "9", "--out", p(&dir.path().join("h.png"))]);
    assert_eq!(bad_image.status.code(), Some(2));
}
