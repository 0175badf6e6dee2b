use std::fs;
use std::path::Path;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zakai-bench"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn bad_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"name\": \"x\",\n  \"dt\": \"fast\"\n}\n").unwrap();
    let out = bench()
        .args(["--config", bad.to_str().unwrap(), "--outdir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("config error") && err.contains("bad.json"),
        "{err}"
    );

    let out = bench()
        .args(["--config", "kink", "--set", "grid.n=-3", "--outdir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn list_scenarios() {
    let out = bench().arg("--list-scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["lg1d", "kink", "nl1d", "vmo-probe"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for run in 0..2 {
        let dir = tmp.path().join(format!("run{run}"));
        let out = bench()
            .args([
                "run",
                "--config",
                "kink",
                "--set",
                "seed=7",
                "--set",
                "replicas=2",
            ])
            .args(["--set", "diagnostics.dependence=null", "--outdir"])
            .arg(&dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        trees.push(files(&dir));
    }
    assert!(trees[0].iter().any(|(p, _)| p.ends_with("summary.json")));
    assert_eq!(trees[0], trees[1]);
}
