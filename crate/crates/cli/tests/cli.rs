use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use tilescan_cli::Cli;
use tilescan_core::benchmark::{write_locations, write_records_csv, Table1Report};
use tilescan_core::evaluation::{write_labeled_scores, Label, LabeledScore, Split};
use tilescan_core::fixtures::{reference_benchmark, reference_labeled_scores};
use tilescan_core::pipeline::export::write_detections_json;
use tilescan_core::scoring::protocol::read_scores;
use tilescan_core::store::EventLog;

fn tilescan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilescan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tilescan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    tilescan(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_every_flag() {
    let cli = Cli::command();
    for sub in cli.get_subcommands() {
        let name = sub.get_name();
        let help = ok(&[name, "--help"]);
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "`{name} --help` lacks --{long}");
            }
        }
        assert!(help.contains("--config"), "`{name} --help` lacks --config");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["detect", "--no-such-flag"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["grid", "--out", "x.csv"]), 2, "missing required flag");
    assert_eq!(code(&["metrics", "--scores", p(&d.join("absent.csv")), "--threshold", "0.5"]), 66);
    assert_eq!(code(&["detect", "--world", p(&d.join("absent")), "--threshold", "0.5"]), 66);
    assert_eq!(code(&["--config", p(&d.join("absent.json")), "grid", "--region", "0,0,1,1", "--out", "x"]), 66);
    assert_eq!(code(&["grid", "--region", "1,2,3", "--out", p(&d.join("g.csv"))]), 65);
    assert_eq!(code(&["grid", "--region", "5,0,1,1", "--out", p(&d.join("g.csv"))]), 65);

    let scores = d.join("s.csv");
    write_labeled_scores(&scores, &reference_labeled_scores(1)).unwrap();
    assert_eq!(code(&["metrics", "--scores", p(&scores), "--threshold", "1.5"]), 65);
    assert_eq!(code(&["metrics", "--scores", p(&scores), "--threshold", "0.5", "--split", "dev"]), 65);
    std::fs::write(d.join("bad.csv"), "id,split,label,probability\nx,test,positive,2.0\n").unwrap();
    assert_eq!(code(&["metrics", "--scores", p(&d.join("bad.csv")), "--threshold", "0.5"]), 65);
}

#[test]
fn metrics_on_reference_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_labeled_scores(&scores, &reference_labeled_scores(2)).unwrap();
    let out = dir.path().join("m.json");
    let stdout = ok(&["metrics", "--scores", p(&scores), "--threshold", "0.5", "--split", "test", "--out", p(&out)]);
    let m: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(m, serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&out).unwrap()).unwrap());
    assert!((m["precision"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(m["recall"].as_f64().unwrap(), 1.0);
    assert_eq!(m["counts"]["fn"], 0);
}

#[test]
fn select_threshold_on_separable_scores() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<LabeledScore> = [(0.9, true), (0.62, true), (0.7, true), (0.4, false), (0.1, false), (0.61, false)]
        .iter()
        .enumerate()
        .map(|(i, &(p, pos))| LabeledScore {
            id: i.to_string(),
            split: Split::Validation,
            label: if pos { Label::Positive } else { Label::Negative },
            probability: p,
            negative_category: None,
        })
        .collect();
    let scores = dir.path().join("v.csv");
    write_labeled_scores(&scores, &rows).unwrap();
    let choice: serde_json::Value = serde_json::from_str(&ok(&["select-threshold", "--scores", p(&scores)])).unwrap();
    assert_eq!(choice["operating_point"], 0.62);
    assert_eq!(choice["precision"], 1.0);
    assert_eq!(choice["recall"], 1.0);
}

#[test]
fn scored_tiles_and_rendered_world_agree() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    let region = "34.0,-100.0,34.12,-99.88";
    ok(&["synth", "--seed", "4", "--facilities", "3", "--region", region, "--out", p(&world), "--workers", "2"]);
    let grid = dir.path().join("grid.csv");
    let n: usize = ok(&["grid", "--region", region, "--out", p(&grid)]).trim().parse().unwrap();
    assert_eq!(std::fs::read_to_string(&grid).unwrap().lines().count(), n + 1);

    let scores = dir.path().join("scores.csv");
    ok(&["score", "--tiles", p(&world.join("tiles")), "--out", p(&scores)]);
    assert_eq!(read_scores(&scores).unwrap().len(), n);

    let from_world = dir.path().join("a");
    let from_scores = dir.path().join("b");
    ok(&["detect", "--world", p(&world), "--threshold", "0.5", "--out", p(&from_world)]);
    ok(&["detect", "--scores", p(&scores), "--region", region, "--threshold", "0.5", "--out", p(&from_scores)]);
    for f in ["detections.geojson", "detections.csv", "detections.json"] {
        assert_eq!(std::fs::read(from_world.join(f)).unwrap(), std::fs::read(from_scores.join(f)).unwrap(), "{f}");
    }
    let fc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(from_world.join("detections.geojson")).unwrap()).unwrap();
    assert_eq!(fc["features"].as_array().unwrap().len(), 3);
}

#[test]
fn config_defaults_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w");
    ok(&["synth", "--seed", "9", "--facilities", "2", "--region", "34.0,-100.0,34.1,-99.9", "--skip-tiles", "--out", p(&world)]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"detect": {"threshold": 0.5, "adjacency": "8", "workers": 1}}"#).unwrap();
    let manifest = || -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(world.join("detections/manifest.json")).unwrap()).unwrap()
    };

    let from_config: serde_json::Value =
        serde_json::from_str(&ok(&["--config", p(&cfg), "detect", "--world", p(&world)])).unwrap();
    assert_eq!(from_config["detections"], 2);
    assert_eq!(manifest()["threshold"], 0.5);
    assert_eq!(manifest()["adjacency"], "8");

    ok(&["--config", p(&cfg), "detect", "--world", p(&world), "--threshold", "0.7", "--adjacency=4"]);
    assert_eq!(manifest()["threshold"], 0.7);
    assert_eq!(manifest()["adjacency"], "4");

    assert_eq!(code(&["detect", "--world", p(&world)]), 2, "threshold required without config");
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        ok(&["synth", "--seed", seed, "--facilities", "6", "--skip-tiles", "--out", p(out)]);
    }
    let read = |d: &Path| std::fs::read(d.join("world.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn report_and_match_reproduce_the_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = reference_benchmark(21);
    let (half_a, half_b) = f.records.split_at(f.records.len() / 2);
    write_records_csv(&d.join("a.csv"), half_a).unwrap();
    write_records_csv(&d.join("b.csv"), half_b).unwrap();
    write_locations(&d.join("training.csv"), &f.training_locations).unwrap();
    write_detections_json(&d.join("detections.json"), &f.detections).unwrap();
    let log_path = d.join("reviews.ndjson");
    let mut log = EventLog::open(&log_path).unwrap();
    for e in &f.events {
        log.append(e).unwrap();
    }
    drop(log);

    let out = d.join("report");
    let summary: serde_json::Value = serde_json::from_str(&ok(&[
        "report", "--log", p(&log_path), "--detections", p(&d.join("detections.json")),
        "--datasets", p(&d.join("a.csv")), p(&d.join("b.csv")),
        "--training", p(&d.join("training.csv")), "--out", p(&out),
    ]))
    .unwrap();
    assert_eq!(summary["confirmed_by_type"]["oil_refinery"], 114);
    assert_eq!(summary["confirmed_by_type"]["petroleum_terminal"], 336);
    assert_eq!(summary["status"]["rejected"], 1902 - 450);

    let table = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    assert!(table.contains("oil_refinery,114,147,108,73.5,6"), "{table}");
    assert!(table.contains("petroleum_terminal,336,1222,292,23.9,142"), "{table}");

    let matched = d.join("match");
    let stdout = ok(&[
        "match", "--datasets", p(&d.join("a.csv")), "--datasets", p(&d.join("b.csv")),
        "--detections", p(&out.join("verified.geojson")), "--training", p(&d.join("training.csv")),
        "--out", p(&matched),
    ]);
    assert_eq!(stdout, table);
    let json: Table1Report =
        serde_json::from_str(&std::fs::read_to_string(matched.join("table1.json")).unwrap()).unwrap();
    assert_eq!(json, Table1Report::from_csv(&table).unwrap());

    assert_eq!(code(&["report", "--log", p(&d.join("none.ndjson")), "--detections", p(&d.join("detections.json")), "--out", p(&out)]), 66);
}
