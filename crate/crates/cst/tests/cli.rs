use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cst::io::{read_data, read_kv};
use cst_core::{
    feature_count, synth_generate, Aggregation, CstConfig, CstModel, KernelFamily, SynthSpec,
};

fn cst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cst"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--seed",
        seed,
        "--features",
        "8",
        "--out",
        path(dir),
    ];
    if !extra.contains(&"--samples") {
        args.extend(["--samples", "120"]);
    }
    args.extend_from_slice(extra);
    cst(&args)
}

/// Header and numeric rows of a CSV.
fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_eq!(code(&synth(&a, "11", &[])), 0);
    assert_eq!(code(&synth(&b, "11", &[])), 0);
    assert_eq!(code(&synth(&c, "12", &[])), 0);
    for f in ["data.csv", "targets.csv", "eigenvalues.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("data.csv")).unwrap(),
        fs::read(c.join("data.csv")).unwrap()
    );
}

#[test]
fn tail_outside_unit_interval_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for tail in ["1.5", "-0.1"] {
        let out = synth(dir.path(), "1", &["--tail", tail]);
        assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!dir.path().join("data.csv").exists());
}

#[test]
fn synth_round_trips_through_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "5", &["--tail", "0.3"])), 0);
    let read = read_data(&dir.path().join("data.csv")).unwrap();
    let mut spec = SynthSpec::new(8, 120, 0.3, 5);
    spec.noise_sigma = 0.1;
    let direct = synth_generate(&spec).unwrap();
    assert_eq!(read.values(), direct.data.values());
    assert_eq!(read.feature_names(), direct.data.feature_names());
}

#[test]
fn stochastic_commands_require_seed() {
    let out = cst(&["synth"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn transform_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "2", &[])), 0);
    let data_path = dir.path().join("data.csv");
    let out_dir = dir.path().join("t");
    let out = cst(&[
        "transform",
        "--data",
        path(&data_path),
        "--out",
        path(&out_dir),
        "--family",
        "hann",
        "--scales",
        "4",
        "--layers",
        "2",
        "--operator",
        "I",
        "--tau",
        "0.3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let data = read_data(&data_path).unwrap();
    let cfg = CstConfig::new(KernelFamily::hann(), 4, 2)
        .with_operator("I".parse().unwrap())
        .with_tau(0.3);
    let expected = CstModel::fit_data(&data, cfg)
        .unwrap()
        .transform_batch(&data)
        .unwrap();
    let (header, rows) = read_csv(&out_dir.join("features.csv"));
    assert_eq!(header, expected.layout.names());
    assert_eq!(rows.len(), data.n_samples());
    for (t, row) in rows.iter().enumerate() {
        for (d, v) in row.iter().enumerate() {
            assert_eq!(*v, expected.values[(d, t)]);
        }
    }
    let prov = read_kv(&out_dir.join("transform.provenance")).unwrap();
    assert!(prov.contains(&("setting.tau".to_string(), "0.3".to_string())));
}

#[test]
fn transform_widths() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "4", &[])), 0);
    let data_path = dir.path().join("data.csv");
    for (agg, width) in [(Aggregation::Identity, 8), (Aggregation::Mean, 1)] {
        let agg_name = match agg {
            Aggregation::Identity => "identity",
            Aggregation::Mean => "mean",
        };
        let out_dir = dir.path().join(agg_name);
        let out = cst(&[
            "transform",
            "--data",
            path(&data_path),
            "--out",
            path(&out_dir),
            "--scales",
            "3",
            "--layers",
            "3",
            "--tau",
            "0",
            "--aggregation",
            agg_name,
        ]);
        assert_eq!(code(&out), 0);
        let (header, rows) = read_csv(&out_dir.join("features.csv"));
        let expected = feature_count(3, 3).unwrap() * width;
        assert_eq!(header.len(), expected);
        assert!(rows.iter().all(|r| r.len() == expected));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# synthetic\nfeatures = 6\nsamples = 40\ntail = 0.2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = cst(&[
        "synth",
        "--config",
        path(&cfg),
        "--seed",
        "1",
        "--samples",
        "30",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let data = read_data(&out_dir.join("data.csv")).unwrap();
    assert_eq!((data.n_features(), data.n_samples()), (6, 30));

    fs::write(&cfg, "features = 6\nlayers = 2\n").unwrap();
    let out = cst(&[
        "synth",
        "--config",
        path(&cfg),
        "--seed",
        "1",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("layers"));
}

#[test]
fn missing_and_malformed_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = cst(&[
        "pca",
        "--data",
        path(&dir.path().join("absent.csv")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 3);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n3,oops\n").unwrap();
    let out = cst(&["pca", "--data", path(&bad), "--out", path(dir.path())]);
    assert_eq!(code(&out), 3);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3") && msg.contains("'b'"), "{msg}");
}

#[test]
fn zero_covariance_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, "a,b,c\n1,2,3\n1,2,3\n1,2,3\n").unwrap();
    let out = cst(&[
        "transform",
        "--data",
        path(&flat),
        "--family",
        "hann",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn experiment_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "9", &["--samples", "200"])), 0);
    let data = dir.path().join("data.csv");
    let targets = dir.path().join("targets.csv");
    let runs: [(&str, &[&str], &str); 3] = [
        (
            "stability",
            &[
                "--repeats",
                "2",
                "--fractions",
                "0.2,0.5",
                "--methods",
                "diffusion:3:2,pca:4",
            ],
            "stability.csv",
        ),
        (
            "prune-sweep",
            &[
                "--repeats",
                "2",
                "--taus",
                "0,0.3,0.6",
                "--scales",
                "3",
                "--layers",
                "3",
            ],
            "pruning.csv",
        ),
        (
            "labeled-sweep",
            &[
                "--repeats",
                "2",
                "--train-fracs",
                "0.05,0.3",
                "--scales",
                "3",
            ],
            "labeled.csv",
        ),
    ];
    for (cmd, extra, file) in runs {
        let mut bytes = Vec::new();
        for rep in ["r1", "r2"] {
            let out_dir = dir.path().join(format!("{cmd}-{rep}"));
            let mut args = vec![
                cmd,
                "--data",
                path(&data),
                "--targets",
                path(&targets),
                "--seed",
                "3",
                "--out",
                path(&out_dir),
            ];
            args.extend_from_slice(extra);
            let out = cst(&args);
            assert_eq!(
                code(&out),
                0,
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            assert!(out_dir.join(format!("{cmd}.provenance")).exists());
            bytes.push(fs::read_to_string(out_dir.join(file)).unwrap());
        }
        if cmd == "prune-sweep" {
            // wall-clock timings differ between runs
            let strip = |s: &str| -> Vec<String> {
                s.lines()
                    .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                    .collect()
            };
            assert_eq!(strip(&bytes[0]), strip(&bytes[1]));
        } else {
            assert_eq!(bytes[0], bytes[1], "{cmd}");
        }
    }
}

#[test]
fn stability_full_fraction_rows_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "9", &["--samples", "200"])), 0);
    let out_dir = dir.path().join("s");
    let out = cst(&[
        "stability",
        "--data",
        path(&dir.path().join("data.csv")),
        "--targets",
        path(&dir.path().join("targets.csv")),
        "--seed",
        "1",
        "--out",
        path(&out_dir),
        "--repeats",
        "1",
        "--fractions",
        "0.3",
        "--methods",
        "monic:3:2,raw",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("stability.csv")).unwrap();
    let full: Vec<&str> = text
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("1"))
        .collect();
    assert_eq!(full.len(), 2);
    for l in full {
        assert_eq!(l.split(',').nth(6), Some("0"), "{l}");
    }
}

#[test]
fn bounds_and_grid_search_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(dir.path(), "6", &["--samples", "200"])), 0);
    let data = dir.path().join("data.csv");
    let out_dir = dir.path().join("b");
    let out = cst(&[
        "bounds",
        "--data",
        path(&data),
        "--out",
        path(&out_dir),
        "--pca-k",
        "3",
        "--k-max",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("bounds.csv")).unwrap();
    for q in [
        "wavelet_delta",
        "cst_bound_per_unit_norm",
        "pca_gap_scale",
        "k_max,2",
    ] {
        assert!(text.contains(q), "{q}");
    }

    let out_dir = dir.path().join("g");
    let out = cst(&[
        "grid-search",
        "--data",
        path(&data),
        "--targets",
        path(&dir.path().join("targets.csv")),
        "--seed",
        "2",
        "--out",
        path(&out_dir),
        "--scales",
        "3,4",
        "--layers",
        "2",
        "--pca-ks",
        "4,50",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(out_dir.join("grid.csv")).unwrap();
    // 2 scales x 1 layer x 2 operators + one PCA (k=50 exceeds the 8 features)
    assert_eq!(text.lines().count(), 1 + 5);
    assert_eq!(text.lines().filter(|l| l.ends_with(",true")).count(), 1);
}
