use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpar_core::data::{save_csv, Benchmark, MultiOutputDataset};
use gpar_core::synth::toy_chain;
use serde_json::Value;

fn gpar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = gpar(dir, args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn long_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(str::to_string).collect())
        .collect()
}

/// A model trained on generated functional data, in a fresh directory.
fn trained(preset: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--task",
            "functional",
            "--n",
            "30",
            "--seed",
            "4",
            "--out",
            "data.csv",
        ],
    );
    write(d, "k.json", &format!(r#"{{"preset": "{preset}"}}"#));
    ok(
        d,
        &[
            "train",
            "--data",
            "data.csv",
            "--kernels",
            "k.json",
            "--model",
            "m.json",
            "--report",
            "r.json",
            "--restarts",
            "2",
        ],
    );
    write(d, "pts.csv", "x\n0.05\n0.4\n0.77\n");
    dir
}

#[test]
fn train_report_is_self_consistent() {
    let dir = trained("gpar-nl");
    let r = json(&dir.path().join("r.json"));
    let layers = r["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 3);
    let sum: f64 = layers
        .iter()
        .map(|l| l["log_marginal_likelihood"].as_f64().unwrap())
        .sum();
    let total = r["total_log_evidence"].as_f64().unwrap();
    assert!((sum - total).abs() <= 1e-10 * total.abs().max(1.0));
    assert_eq!(r["tool"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["seed"], 0);
    assert_eq!(r["data"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(r["ordering"], serde_json::json!(["y1", "y2", "y3"]));
    for (p, l) in layers.iter().enumerate() {
        assert_eq!(l["position"], p);
        assert_eq!(l["rows"], 30);
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = trained("gpar-nl");
    let d = dir.path();
    let o = gpar(d, &["train", "--data", "data.csv", "--model", "x.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--kernels") && stderr(&o).contains("Usage"));
    assert_eq!(
        code(&gpar(
            d,
            &[
                "sample",
                "--model",
                "m.json",
                "--points",
                "pts.csv",
                "--out",
                "s.csv",
                "--samples",
                "0"
            ]
        )),
        2
    );
    assert_eq!(
        code(&gpar(
            d,
            &["synth", "--task", "noise-scheme-4", "--out", "s.csv"]
        )),
        2
    );
    assert_eq!(
        code(&gpar(
            d,
            &[
                "train",
                "--data",
                "data.csv",
                "--kernels",
                "nope.json",
                "--model",
                "x.json"
            ]
        )),
        2
    );
    write(d, "bad.json", r#"{"preset": "gpar-nl", "colour": "red"}"#);
    assert_eq!(
        code(&gpar(
            d,
            &[
                "train",
                "--data",
                "data.csv",
                "--kernels",
                "bad.json",
                "--model",
                "x.json"
            ]
        )),
        2
    );
    assert_eq!(
        code(&gpar(d, &["--threads", "0", "verify", "--trials", "1"])),
        2
    );
    assert_eq!(
        code(&gpar(
            d,
            &[
                "predict",
                "--model",
                "m.json",
                "--points",
                "pts.csv",
                "--out",
                "no/such/dir/p.csv"
            ]
        )),
        2
    );
    assert_eq!(code(&gpar(d, &["frobnicate"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = trained("gpar-nl");
    let d = dir.path();
    write(
        d,
        "holes.csv",
        "x,a,b\n0.1,1.0,2.0\n0.2,,3.0\n0.3,,4.0\n0.4,1.5,2.5\n",
    );
    let o = gpar(
        d,
        &[
            "train",
            "--data",
            "holes.csv",
            "--kernels",
            "k.json",
            "--model",
            "h.json",
        ],
    );
    assert_eq!(code(&o), 3);
    let msg = stderr(&o);
    assert!(
        msg.contains("row 2") && msg.contains("observes b") && msg.contains("a"),
        "{msg}"
    );
    ok(
        d,
        &[
            "train",
            "--data",
            "holes.csv",
            "--kernels",
            "k.json",
            "--model",
            "h.json",
            "--repair",
            "--report",
            "h.r.json",
            "--restarts",
            "1",
        ],
    );
    assert_eq!(json(&d.join("h.r.json"))["dropped_cells"], 2);
    // swapping the order makes the same data valid
    ok(
        d,
        &[
            "train",
            "--data",
            "holes.csv",
            "--kernels",
            "k.json",
            "--model",
            "h.json",
            "--ordering",
            "b,a",
            "--restarts",
            "1",
        ],
    );

    let text = std::fs::read_to_string(d.join("m.json")).unwrap();
    write(d, "cut.json", &text[..text.len() / 3]);
    assert_eq!(
        code(&gpar(
            d,
            &["predict", "--model", "cut.json", "--points", "pts.csv", "--out", "p.csv"]
        )),
        3
    );
    write(
        d,
        "future.json",
        &text.replacen("\"version\": 1", "\"version\": 99", 1),
    );
    let o = gpar(
        d,
        &[
            "predict",
            "--model",
            "future.json",
            "--points",
            "pts.csv",
            "--out",
            "p.csv",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("99"));
    write(d, "pts_bad.csv", "z\n0.1\n");
    assert_eq!(
        code(&gpar(
            d,
            &[
                "predict",
                "--model",
                "m.json",
                "--points",
                "pts_bad.csv",
                "--out",
                "p.csv"
            ]
        )),
        3
    );
    assert_eq!(
        code(&gpar(
            d,
            &[
                "train",
                "--data",
                "missing.csv",
                "--kernels",
                "k.json",
                "--model",
                "h.json"
            ]
        )),
        3
    );
    let o = gpar(
        d,
        &[
            "benchmark",
            "--task",
            "eeg",
            "--data-dir",
            ".",
            "--out",
            "b.json",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains(Benchmark::Eeg.source_url()));
}

#[test]
fn plugin_and_mc_means_agree_for_linear_dependence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_csv(&d.join("toy.csv"), &toy_chain(3, 30, true)).unwrap();
    write(d, "k.json", r#"{"preset": "gpar-l"}"#);
    ok(
        d,
        &[
            "train",
            "--data",
            "toy.csv",
            "--kernels",
            "k.json",
            "--model",
            "m.json",
            "--restarts",
            "2",
        ],
    );
    write(d, "pts.csv", "x\n0.2\n0.5\n0.9\n");
    ok(
        d,
        &[
            "predict", "--model", "m.json", "--points", "pts.csv", "--out", "plug.csv",
        ],
    );
    let s = 20000.0;
    ok(
        d,
        &[
            "predict", "--model", "m.json", "--points", "pts.csv", "--out", "mc.csv", "--mc",
            "20000", "--seed", "1",
        ],
    );
    let (plug, mc) = (long_csv(&d.join("plug.csv")), long_csv(&d.join("mc.csv")));
    assert_eq!(plug.len(), 6);
    for (a, b) in plug.iter().zip(&mc) {
        assert_eq!(a[..3], b[..3]);
        let (m0, m1): (f64, f64) = (a[3].parse().unwrap(), b[3].parse().unwrap());
        let var: f64 = b[5].parse().unwrap();
        // a linear kernel in y gives a posterior mean linear in y, so plug-in is exact
        assert!((m0 - m1).abs() <= 4.0 * (var / s).sqrt(), "{a:?} vs {b:?}");
    }
}

#[test]
fn known_values_change_downstream_predictions() {
    let dir = trained("gpar-nl");
    let d = dir.path();
    write(d, "known.csv", "x,y1\n0.4,\n0.4,2.5\n");
    ok(
        d,
        &[
            "predict",
            "--model",
            "m.json",
            "--points",
            "known.csv",
            "--out",
            "p.csv",
        ],
    );
    let rows = long_csv(&d.join("p.csv"));
    assert_eq!(rows[0][3], rows[3][3]);
    // y3 depends on y1 both directly and through y2
    assert_ne!(rows[2][3], rows[5][3]);
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn fake_eeg() -> MultiOutputDataset {
    let n = 256;
    let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
    let rows = xs
        .iter()
        .map(|x| {
            let t = x[0];
            let base = (12.0 * t).sin() + 0.5 * (31.0 * t).cos();
            (0..7)
                .map(|c| {
                    Some(base * (1.0 + 0.1 * c as f64) + 0.05 * ((c as f64 + 1.0) * 97.0 * t).sin())
                })
                .collect()
        })
        .collect();
    let l = Benchmark::Eeg.layout();
    MultiOutputDataset::new(
        l.inputs.iter().map(|s| s.to_string()).collect(),
        l.outputs.iter().map(|s| s.to_string()).collect(),
        xs,
        rows,
    )
    .unwrap()
}

#[test]
fn benchmark_report_has_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_csv(&d.join("eeg.csv"), &fake_eeg()).unwrap();
    let common = [
        "benchmark",
        "--task",
        "eeg",
        "--data-dir",
        ".",
        "--restarts",
        "1",
        "--max-iter",
        "30",
        "--mc-samples",
        "20",
    ];
    let o = ok(
        d,
        &[&common[..], &["--out", "b.json", "--timings", "t.json"]].concat(),
    );
    let r = json(&d.join("b.json"));
    let methods = r["methods"].as_array().unwrap();
    assert_eq!(
        methods
            .iter()
            .map(|m| m["method"].as_str().unwrap())
            .collect::<Vec<_>>(),
        ["IGP", "GPAR-NL"]
    );
    for m in methods {
        for key in ["smse", "mll", "mae"] {
            assert!(m[key].as_f64().unwrap().is_finite());
        }
        assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
    }
    assert_eq!(r["test_cells"], 3 * 100);
    let t = json(&d.join("t.json"));
    assert!(t["gpar_train"].as_f64().unwrap() >= 0.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("TT"));
    // the checksum guard
    let o = gpar(
        d,
        &[&common[..], &["--out", "c.json", "--expect-sha256", "00"]].concat(),
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn every_command_is_deterministic() {
    let run_all = |d: &Path| {
        ok(
            d,
            &[
                "synth",
                "--task",
                "noise-scheme-2",
                "--n",
                "25",
                "--seed",
                "9",
                "--out",
                "data.csv",
                "--truth",
                "truth.csv",
            ],
        );
        write(d, "k.json", r#"{"preset": "gpar-l-nl"}"#);
        ok(
            d,
            &[
                "train",
                "--data",
                "data.csv",
                "--kernels",
                "k.json",
                "--model",
                "m.json",
                "--report",
                "r.json",
                "--restarts",
                "3",
                "--seed",
                "5",
            ],
        );
        ok(
            d,
            &[
                "train",
                "--data",
                "data.csv",
                "--kernels",
                "k.json",
                "--model",
                "dm.json",
                "--denoising",
                "--restarts",
                "2",
            ],
        );
        write(d, "pts.csv", "x\n0.1\n0.35\n0.8\n");
        ok(
            d,
            &[
                "predict", "--model", "m.json", "--points", "pts.csv", "--out", "p.csv",
                "--report", "pr.json",
            ],
        );
        ok(
            d,
            &[
                "predict", "--model", "m.json", "--points", "pts.csv", "--out", "pm.csv", "--mc",
                "50", "--seed", "2",
            ],
        );
        ok(
            d,
            &[
                "sample",
                "--model",
                "dm.json",
                "--points",
                "pts.csv",
                "--out",
                "s.csv",
                "--samples",
                "7",
                "--joint",
                "--report",
                "sr.json",
            ],
        );
        ok(
            d,
            &[
                "verify",
                "--trials",
                "4",
                "--construction-trials",
                "1",
                "--operators",
                "8",
                "--report",
                "v.json",
            ],
        );
        save_csv(&d.join("eeg.csv"), &fake_eeg()).unwrap();
        ok(
            d,
            &[
                "benchmark",
                "--task",
                "eeg",
                "--data-dir",
                ".",
                "--out",
                "b.json",
                "--restarts",
                "1",
                "--max-iter",
                "10",
                "--mc-samples",
                "10",
            ],
        );
        read_all(d)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_all(a.path());
    let second = run_all(b.path());
    assert_eq!(first.len(), 15);
    for ((na, fa), (nb, fb)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(fa == fb, "{na} differs between runs");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = trained("gpar-nl");
    let d = dir.path();
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let m = format!("m{threads}.json");
        ok(
            d,
            &[
                "--threads",
                threads,
                "train",
                "--data",
                "data.csv",
                "--kernels",
                "k.json",
                "--model",
                &m,
                "--restarts",
                "3",
            ],
        );
        let s = format!("s{threads}.csv");
        ok(
            d,
            &[
                "--threads",
                threads,
                "sample",
                "--model",
                &m,
                "--points",
                "pts.csv",
                "--out",
                &s,
                "--samples",
                "40",
            ],
        );
        outs.push((
            std::fs::read(d.join(&m)).unwrap(),
            std::fs::read(d.join(&s)).unwrap(),
        ));
    }
    assert_eq!(outs[0], outs[1]);
    let o = Command::new(env!("CARGO_BIN_EXE_gpar"))
        .current_dir(d)
        .env("GPAR_THREADS", "0")
        .args(["verify", "--trials", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_runs_green_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["verify", "--report", "v.json"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        5,
        "{text}"
    );
    assert_eq!(json(&dir.path().join("v.json"))["passed"], true);
}

#[test]
fn synth_config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "c.json",
        r#"{"task": "noise-scheme-3", "n": 12, "seed": 4}"#,
    );
    ok(d, &["synth", "--config", "c.json", "--out", "a.csv"]);
    ok(
        d,
        &[
            "synth",
            "--task",
            "noise-scheme-3",
            "--n",
            "12",
            "--seed",
            "4",
            "--out",
            "b.csv",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("a.csv")).unwrap(),
        std::fs::read(d.join("b.csv")).unwrap()
    );
    ok(
        d,
        &["synth", "--config", "c.json", "--n", "5", "--out", "c.csv"],
    );
    assert_eq!(long_csv(&d.join("c.csv")).len(), 5);
    write(d, "bad.json", r#"{"task": "noise-scheme-3", "m": 12}"#);
    assert_eq!(
        code(&gpar(
            d,
            &["synth", "--config", "bad.json", "--out", "x.csv"]
        )),
        2
    );
    assert_eq!(
        code(&gpar(
            d,
            &[
                "synth",
                "--task",
                "noise-scheme-1",
                "--lo",
                "-1",
                "--out",
                "x.csv"
            ]
        )),
        2
    );
}
