use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn drbayes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drbayes")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn generate(dir: &Path, n: usize, seed: u64) -> String {
    let path = dir.join(format!("data-{n}-{seed}.csv"));
    let o = drbayes(&["generate", "--n", &n.to_string(), "--p", "5", "--seed", &seed.to_string(), "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn estimate_writes_artifacts_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), 150, 3);
    let out1 = tmp.path().join("a");
    let run = |out: &Path| {
        drbayes(&[
            "estimate", "--input", &data, "--out", out.to_str().unwrap(), "--draws", "200", "--seed", "9",
            "--variant", "uncorrected", "--variant", "doubly-robust",
        ])
    };
    let o = run(&out1);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "draws.csv", "effective_config.json", "draws-uncorrected.csv", "draws-doubly-robust.csv"] {
        assert!(out1.join(f).exists(), "missing {f}");
    }
    let summary = read_json(&out1.join("summary.json"));
    assert_eq!(summary["metadata"].as_object().unwrap().len(), 2);
    assert_eq!(summary["results"].as_array().unwrap().len(), 2);
    assert_eq!(summary["frequentist"].as_array().unwrap().len(), 2);
    let dr = &summary["results"][1]["summary"];
    assert!(dr["lower"].as_f64().unwrap() <= dr["upper"].as_f64().unwrap());
    let draws = std::fs::read_to_string(out1.join("draws.csv")).unwrap();
    assert!(draws.starts_with("s,plug_in,recentering,value"));
    assert_eq!(draws.lines().count(), 201);

    // Same configuration, same bytes.
    let out2 = tmp.path().join("b");
    assert_eq!(code(&run(&out2)), 0);
    for f in ["summary.json", "draws.csv", "draws-doubly-robust.csv"] {
        assert_eq!(std::fs::read(out1.join(f)).unwrap(), std::fs::read(out2.join(f)).unwrap(), "{f} differs");
    }

    // The echoed configuration reproduces the run.
    let out3 = tmp.path().join("c");
    let o = drbayes(&[
        "estimate", "--config", out1.join("effective_config.json").to_str().unwrap(), "--out", out3.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(out1.join("summary.json")).unwrap(), std::fs::read(out3.join("summary.json")).unwrap());
}

#[test]
fn error_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let missing = drbayes(&["estimate", "--input", "/nonexistent/file.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&missing), 3);

    let data = generate(tmp.path(), 40, 1);
    let bad = drbayes(&["estimate", "--input", &data, "--out", out.to_str().unwrap(), "--draws", "1"]);
    assert_eq!(code(&bad), 2);

    let no_input = drbayes(&["estimate", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&no_input), 2);

    let reps = drbayes(&["simulate", "--replications", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&reps), 2);

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"drawz": 3}"#).unwrap();
    assert_eq!(code(&drbayes(&["estimate", "--config", cfg.to_str().unwrap()])), 2);

    let garbled = tmp.path().join("garbled.csv");
    std::fs::write(&garbled, "y,d,x1\n1,0,abc\n").unwrap();
    assert_eq!(code(&drbayes(&["estimate", "--input", garbled.to_str().unwrap(), "--out", out.to_str().unwrap()])), 3);
}

#[test]
fn simulate_sweep_writes_one_block_per_weight() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let o = drbayes(&[
        "simulate", "--n", "40", "--p", "5", "--replications", "2", "--draws", "50", "--c-sigma-sweep", "0.5,1",
        "--methods", "dr-bayes,aipw", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.lines().next().unwrap().starts_with("design,n,p,c_sigma"));
    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(text.matches("Design I").count(), 2);
    assert!(out.join("effective_config.json").exists());
}

#[test]
fn plot_overlays_two_runs() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    std::fs::write(&a, "s,plug_in,recentering,value\n1,0.1,0,0.1\n2,0.2,0,0.2\n3,0.3,0,0.3\n").unwrap();
    std::fs::write(&b, "s,plug_in,recentering,value\n1,0.15,0,0.15\n2,0.16,0,0.16\n").unwrap();
    let svg = tmp.path().join("fig/plot.svg");
    let o = drbayes(&[
        "plot", a.to_str().unwrap(), b.to_str().unwrap(), "--reference", "0.15", "--labels", "UB,DRB", "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("UB") && text.contains("DRB") && text.contains("reference"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("UB 0.05000") && stdout.contains("DRB 0.00500"));

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "s,plug_in,recentering,value\n").unwrap();
    let o = drbayes(&["plot", a.to_str().unwrap(), empty.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
