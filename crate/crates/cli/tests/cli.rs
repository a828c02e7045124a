use gridshed::attack::{AttackSpec, AttackVar, Target};
use gridshed::classifier::Architecture;
use gridshed::dataset::{split_and_normalize, write_dataset, SampleMeta, ShedSample};
use gridshed::labeler::{DecidingTest, Label, Verdict};
use gridshed::sim::Trajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn gridshed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridshed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_attack(dir: &Path) -> std::path::PathBuf {
    let spec = AttackSpec::new(
        Target {
            node: 2,
            var: AttackVar::Omega,
        },
        Target {
            node: 4,
            var: AttackVar::V,
        },
        -2.0,
        1.0,
    );
    let path = dir.join("a.json");
    std::fs::write(&path, serde_json::to_vec(&spec).unwrap()).unwrap();
    path
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&gridshed(&[])), 2);
    assert_eq!(code(&gridshed(&["frobnicate"])), 2);
    assert_eq!(code(&gridshed(&["detect", "--bogus"])), 2);
    assert_eq!(code(&gridshed(&["simulate"])), 2, "missing --out");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    assert_eq!(
        code(&gridshed(&["simulate", "--shed", "six", "--out", p(&out)])),
        2
    );
    assert_eq!(code(&gridshed(&["--help"])), 0);
}

#[test]
fn missing_files_exit_1() {
    assert_eq!(
        code(&gridshed(&["detect", "--in", "/nonexistent/t.csv"])),
        1
    );
    assert_eq!(code(&gridshed(&["label", "--in", "/nonexistent/t.csv"])), 1);
    let o = gridshed(&[
        "simulate",
        "--config",
        "/nonexistent/c.json",
        "--out",
        "/tmp/x.csv",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_writes_trajectory_with_events() {
    let dir = tempfile::tempdir().unwrap();
    let attack = write_attack(dir.path());
    let out = dir.path().join("traj.csv");
    let o = gridshed(&[
        "simulate",
        "--case",
        "ieee14",
        "--attack",
        p(&attack),
        "--shed",
        "6@10",
        "--t-end",
        "12",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["samples"], 241);
    let traj = Trajectory::load(&out).unwrap();
    assert_eq!(traj.len(), 241);
    let names: Vec<&str> = traj.events.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ["attack", "shed"]);
    assert_eq!(traj.event("shed").unwrap().t, 10.0);
    // Bus 6 holds the fifth load of the case.
    assert_eq!(traj.event("shed").unwrap().load_index, Some(4));
    assert_eq!(traj.channel("PL_6").unwrap().last(), Some(&0.0));
}

#[test]
fn unknown_shed_bus_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = gridshed(&[
        "simulate",
        "--shed",
        "1@5",
        "--t-end",
        "6",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no load"));
}

#[test]
fn detect_and_label_on_hold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hold.csv");
    assert_eq!(
        code(&gridshed(&["simulate", "--t-end", "60", "--out", p(&out)])),
        0
    );

    let o = gridshed(&["detect", "--in", p(&out)]);
    assert_eq!(code(&o), 0);
    let alarms = stdout_json(&o);
    let map = alarms.as_object().unwrap();
    assert_eq!(map.len(), 14 + 5);
    assert!(map
        .values()
        .all(|a| a["alarmed"] == false && a["alarm_time"].is_null()));

    let o = gridshed(&["label", "--in", p(&out)]);
    assert_eq!(code(&o), 0);
    let l = stdout_json(&o);
    assert_eq!(l["verdict"], "STABLE");
    assert!(l.get("deciding_test").is_some() && l.get("deciding_channel").is_some());
}

#[test]
fn config_file_fills_unset_flags_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, json!({"t_end": 5.0, "out": p(&out)}).to_string()).unwrap();
    let o = gridshed(&["simulate", "--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["end_time"], 5.0);
    let o = gridshed(&["simulate", "--config", p(&cfg), "--t-end", "2"]);
    assert_eq!(stdout_json(&o)["end_time"], 2.0);

    std::fs::write(&cfg, json!({"t_end": "soon"}).to_string()).unwrap();
    assert_eq!(code(&gridshed(&["simulate", "--config", p(&cfg)])), 2);
    std::fs::write(&cfg, json!({"no_such_key": 1}).to_string()).unwrap();
    assert_eq!(code(&gridshed(&["simulate", "--config", p(&cfg)])), 2);
}

/// Learnable synthetic samples: UNSTABLE when channel 0 trends upwards.
fn synthetic_dataset(dir: &Path) {
    let (nc, nt) = (3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = Target {
        node: 2,
        var: AttackVar::Omega,
    };
    let samples: Vec<ShedSample> = (0..80)
        .map(|i| {
            let unstable = i % 2 == 0;
            let slope = if unstable { 1.0 } else { -1.0 };
            let x: Vec<f64> = (0..nc * nt)
                .map(|k| {
                    let noise: f64 = rng.random_range(-0.3..0.3);
                    if k < nt {
                        slope * k as f64 / nt as f64 + noise
                    } else {
                        noise
                    }
                })
                .collect();
            let verdict = if unstable {
                Verdict::Unstable
            } else {
                Verdict::Stable
            };
            ShedSample {
                id: format!("syn{i:03}"),
                n_channels: nc,
                n_steps: nt,
                x,
                load_index: i % 4,
                label: verdict,
                meta: SampleMeta {
                    scenario_id: format!("syn{i:03}"),
                    read: t,
                    write: t,
                    gain: 1.0,
                    labeling: Label {
                        verdict,
                        deciding_test: DecidingTest::Envelope,
                        deciding_channel: None,
                    },
                    window_end: 9.95,
                },
            }
        })
        .collect();
    let channels = vec!["V_1".into(), "V_2".into(), "omega_g1".into()];
    let ds = split_and_normalize(samples, channels, 4, 1).unwrap();
    write_dataset(dir, &ds).unwrap();
}

#[test]
fn train_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    synthetic_dataset(&data);
    let weights = dir.path().join("w.bin");
    let cfg = dir.path().join("train.json");
    let arch = Architecture {
        conv1_filters: 8,
        conv2_filters: 8,
        hidden: 8,
        embed: 4,
        head1: 16,
        head2: 8,
        ..Architecture::micro()
    };
    std::fs::write(
        &cfg,
        json!({"architecture": arch, "train": {"batch_size": 16, "patience": 100, "dropout": 0.0}})
            .to_string(),
    )
    .unwrap();
    let o = gridshed(&[
        "train",
        "--config",
        p(&cfg),
        "--dataset",
        p(&data),
        "--out",
        p(&weights),
        "--epochs",
        "60",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(
        table.starts_with("Classification report, tau = "),
        "{table}"
    );
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("w.bin.report.json")).unwrap())
            .unwrap();
    assert!(
        report["test"]["accuracy"].as_f64().unwrap() >= 0.9,
        "{}",
        report["test"]
    );
    assert!(report["threshold"]["curve"].as_array().unwrap().len() == 50);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("w.bin.json")).unwrap()).unwrap();
    assert_eq!(manifest["dtype"], "f32-le");
    assert_eq!(
        manifest["input_scaling"]["channels"]
            .as_array()
            .unwrap()
            .len(),
        3
    );

    let json_out = dir.path().join("eval.json");
    let o = gridshed(&[
        "eval",
        "--weights",
        p(&weights),
        "--dataset",
        p(&data),
        "--tau",
        "0.03",
        "--report",
        p(&json_out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Classification report, tau = 0.03");
    assert!(
        lines[2].contains("precision")
            && lines[2].contains("recall")
            && lines[2].contains("f1-score")
    );
    assert!(lines[4].trim_start().starts_with("STABLE"));
    assert!(lines[5].trim_start().starts_with("UNSTABLE"));
    assert!(lines[7].trim_start().starts_with("accuracy"));
    assert!(lines[8].trim_start().starts_with("macro avg"));
    assert!(lines[9].trim_start().starts_with("weighted avg"));
    let r: Value = serde_json::from_slice(&std::fs::read(&json_out).unwrap()).unwrap();
    assert_eq!(r["tau"], 0.03);
    assert_eq!(
        r["stable"]["support"].as_u64().unwrap() + r["unstable"]["support"].as_u64().unwrap(),
        16
    );

    assert_eq!(
        code(&gridshed(&[
            "eval",
            "--weights",
            p(&weights),
            "--dataset",
            p(&data),
            "--tau",
            "1.5"
        ])),
        2
    );
    assert_eq!(
        code(&gridshed(&[
            "eval",
            "--weights",
            p(&weights),
            "--dataset",
            p(&data),
            "--split",
            "dev"
        ])),
        2
    );

    let tables = dir.path().join("tables");
    let o = gridshed(&["report", "--dataset", p(&data), "--out", p(&tables)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["samples"], 80);
    let by_load = std::fs::read_to_string(tables.join("by_load.csv")).unwrap();
    assert_eq!(by_load.lines().next().unwrap(), "load_index,stable,total");
    assert_eq!(by_load.lines().count(), 5);
}

#[test]
fn sweep_resumes_and_tiny_sweeps_cannot_form_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let cfg = dir.path().join("sweep.json");
    std::fs::write(
        &cfg,
        json!({"sweep": {"read_vars": ["omega"], "write_vars": ["V"], "loads": [0, 4], "post_shed": 50.0}}).to_string(),
    )
    .unwrap();
    let args = [
        "sweep",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--max-attacks",
        "1",
    ];
    let o = gridshed(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["scenarios"], 2);
    assert_eq!(s["newly_run"], 2);
    let again = stdout_json(&gridshed(&args));
    assert_eq!(again["newly_run"], 0);
    assert_eq!(again["resumed"], 2);

    let o = gridshed(&[
        "build-dataset",
        "--sweep",
        p(&out),
        "--out",
        p(&dir.path().join("ds")),
    ]);
    assert_eq!(code(&o), 1);
}
