use std::fs;
use std::process::Command;

use proptest::prelude::*;
use trcomp::{MultiIndex, Shape, SparseSample};
use trcomp_cli::{
    emit_plotdata, format_coo, format_run_csv, parse_coo, parse_coo_str, read_plotdata,
    run_experiment, write_coo, Experiment, ExperimentConfig, PlotSeries,
};

fn synth(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        experiment: Experiment::Noiseless,
        shape: vec![8, 8, 8],
        rank: trcomp_cli::RankSpec::Uniform(2),
        p: Some(0.4),
        max_iters: 30,
        out: out.to_path_buf(),
        ..Default::default()
    }
}

fn sample_strategy() -> impl Strategy<Value = SparseSample> {
    prop::collection::vec(1usize..5, 3..6).prop_flat_map(|dims| {
        let numel: usize = dims.iter().product();
        (
            Just(dims),
            prop::sample::subsequence((0..numel).collect::<Vec<_>>(), 1..=numel.min(20)),
            prop::collection::vec(-1e6f64..1e6, 20),
        )
            .prop_map(|(dims, offs, vals)| {
                let shape = Shape::new(dims.clone()).unwrap();
                let idx: Vec<MultiIndex> = offs
                    .iter()
                    .map(|&o| {
                        let mut rest = o;
                        let z: Vec<usize> = dims
                            .iter()
                            .map(|&n| {
                                let i = rest % n;
                                rest /= n;
                                i
                            })
                            .collect();
                        MultiIndex::from_zero_based(&z)
                    })
                    .collect();
                SparseSample::new(shape, &idx, vals[..idx.len()].to_vec()).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn coo_text_round_trips(data in sample_strategy()) {
        let back = parse_coo_str(&format_coo(&data)).unwrap();
        prop_assert_eq!(back.shape(), data.shape());
        prop_assert_eq!(back.offsets(), data.offsets());
        prop_assert_eq!(back.values(), data.values());
    }

    #[test]
    fn coo_parser_never_panics(text in "[0-9 #.\\-e\n]{0,80}") {
        let _ = parse_coo_str(&text);
    }
}

#[test]
fn coo_file_round_trip_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.coo");
    let data = parse_coo_str("3\n3 4 2\n1 1 1 0.5\n3 4 2 -2.25\n").unwrap();
    write_coo(&path, &data).unwrap();
    let back = parse_coo(&path).unwrap();
    assert_eq!(back.values(), data.values());

    let err = parse_coo_str("3\n3 4 2\n1 1 1 0.5\n4 1 1 1.0\n").unwrap_err();
    assert!(err.to_string().contains("line 4"), "{err}");
    let missing = parse_coo(&dir.path().join("none.coo")).unwrap_err();
    assert!(missing.to_string().contains("none.coo"));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&synth(a.path())).unwrap();
    run_experiment(&synth(b.path())).unwrap();
    for f in ["run.csv", "point.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn summary_has_every_key() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&synth(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for k in [
        "algorithm",
        "shape",
        "rank",
        "lambda",
        "delta",
        "p",
        "sigma",
        "final_eps_omega",
        "final_eps_gamma",
        "psnr",
        "iters",
        "seconds",
        "termination_reason",
    ] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    assert_eq!(v["shape"], serde_json::json!([8, 8, 8]));
}

#[test]
fn plotdata_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&ExperimentConfig {
        plotdata: true,
        ..synth(dir.path())
    })
    .unwrap();
    let rec = out.record.unwrap();
    assert!(dir.path().join("run_time.csv").exists());
    let back = read_plotdata(&dir.path().join("run")).unwrap();
    assert_eq!(back, PlotSeries::from_record(&rec));

    let mut one = rec.clone();
    one.iters.truncate(1);
    let stem = dir.path().join("single");
    emit_plotdata(&one, &stem).unwrap();
    assert_eq!(read_plotdata(&stem).unwrap().iter.len(), 1);
    one.iters.clear();
    assert!(emit_plotdata(&one, &stem).is_err());
}

#[test]
fn timing_column_only_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_experiment(&synth(dir.path())).unwrap().record.unwrap();
    let off = format_run_csv(&rec, false);
    let on = format_run_csv(&rec, true);
    let row = |s: &str| s.lines().nth(2).unwrap().split(',').nth(1).unwrap().to_string();
    assert!(row(&off).is_empty());
    assert!(row(&on).parse::<f64>().is_ok());
}

#[test]
fn phase_writes_matrix_without_run_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&ExperimentConfig {
        experiment: Experiment::Phase,
        rank: trcomp_cli::RankSpec::Uniform(1),
        phase_extents: vec![4, 5],
        phase_samples: vec![10, 60],
        phase_trials: 2,
        max_iters: 40,
        out: dir.path().to_path_buf(),
        ..Default::default()
    })
    .unwrap();
    let counts = out.phase.unwrap();
    let text = fs::read_to_string(dir.path().join("phase.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,10,60");
    assert_eq!(text.lines().count(), 3);
    assert!(counts.iter().flatten().all(|&c| c <= 2));
    assert!(!dir.path().join("run.csv").exists());
}

fn trcomp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trcomp"))
}

#[test]
fn params_verb_prints_count() {
    let out = trcomp()
        .args(["params", "--shape", "250,330,33", "--rank", "7,16,7"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "66577");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "shape = [12, 12, 12]\nrank = 2\nsamples = 300\nmax_iters = 5\nalgorithm = \"rcg\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = trcomp()
        .arg("synth")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--shape", "6x6x6", "--p", "0.5", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["shape"], serde_json::json!([6, 6, 6]));
    assert_eq!(v["algorithm"], "rcg");
    assert!(v["iters"].as_u64().unwrap() <= 5);

    let bad = trcomp()
        .arg("synth")
        .arg("--out")
        .arg(&out_dir)
        .args(["--p", "0.5", "--sigma", "0.1"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sigma"));
}

#[test]
fn complete_verb_reads_coordinate_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.coo");
    let mut text = String::from("3\n4 4 4\n");
    for i in 1..=4 {
        for j in 1..=4 {
            for k in 1..=4 {
                if (i + j + k) % 2 == 0 {
                    text.push_str(&format!("{i} {j} {k} {}\n", (i * j) as f64 / k as f64));
                }
            }
        }
    }
    fs::write(&input, text).unwrap();
    let status = trcomp()
        .arg("complete")
        .arg("--input")
        .arg(&input)
        .arg("--out")
        .arg(dir.path())
        .args(["--rank", "2", "--max-iters", "10"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("point.json").exists());
}
