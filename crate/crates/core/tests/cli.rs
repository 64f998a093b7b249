use std::path::Path;
use std::process::{Command, Output};

fn dgaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgaug")).args(args).output().expect("spawn dgaug")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dgaug(&["augment", "--bogus"]).status.code(), Some(1));
    assert_eq!(dgaug(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(dgaug(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dgaug(&["eval", "--model", p(&dir.path().join("missing.ckpt")), "--data", p(dir.path()), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn params_reports_full_scale_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("params.json");
    std::fs::write(&cfg, "{}").unwrap();
    let out = dgaug(&["params", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("generator 11359296"), "{text}");
    assert!(text.contains("discriminator 2827201"), "{text}");
}

#[test]
fn gradcheck_single_op() {
    let out = dgaug(&["gradcheck", "--op", "conv2d"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("conv2d"));
    assert_eq!(dgaug(&["gradcheck", "--op", "no_such_op"]).status.code(), Some(2));
}

#[test]
fn gen_augment_analyze_round() {
    let dir = tempfile::tempdir().unwrap();
    let (src, aug) = (dir.path().join("src"), dir.path().join("aug"));
    let gen = dgaug(&["gen-toy", "--out", p(&src), "--n", "6", "--seed", "1", "--domain", "source", "--size", "32"]);
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));
    let images = src.join("images");

    let run = |out: &Path| dgaug(&["--workers", "2", "augment", "--in", p(&images), "--out", p(out), "--seed", "5"]);
    assert_eq!(run(&aug).status.code(), Some(0));
    let again = dir.path().join("aug2");
    assert_eq!(run(&again).status.code(), Some(0));
    let mut names: Vec<_> = std::fs::read_dir(&aug).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for n in names {
        assert_eq!(std::fs::read(aug.join(&n)).unwrap(), std::fs::read(again.join(&n)).unwrap(), "{n:?}");
    }

    let csv = dir.path().join("a.csv");
    let out = dgaug(&["analyze", "--dirs", &format!("{},{}", p(&images), p(&aug)), "--channel", "a", "--n", "6", "--out", p(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("overlap("));
    assert!(std::fs::read_to_string(&csv).unwrap().contains("# dataset="));
}
