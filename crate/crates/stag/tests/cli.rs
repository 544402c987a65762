//! End-to-end contract tests for the `stag` binary: exit codes, output
//! files, determinism of every artifact, and error reporting.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn stag(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stag"));
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    stag(args).output().expect("spawn stag")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "stag {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Every file under `dir`, keyed by its relative path.
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn assert_identical_trees(a: &Path, b: &Path) {
    let ta = dir_bytes(a);
    let tb = dir_bytes(b);
    let keys_a: Vec<_> = ta.keys().collect();
    let keys_b: Vec<_> = tb.keys().collect();
    assert_eq!(keys_a, keys_b, "file sets differ between {a:?} and {b:?}");
    for (rel, bytes) in &ta {
        assert_eq!(bytes, &tb[rel], "file {rel} differs between {a:?} and {b:?}");
    }
}

/// Generates the small fixture dataset every pipeline test shares.
fn tiny_dataset(dir: &Path) -> String {
    run_ok(&[
        "synth",
        "--task",
        "order",
        "--videos-per-cell",
        "3",
        "--frames",
        "15",
        "--seed",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    dir.join("manifest.tsv").to_str().unwrap().to_owned()
}

#[test]
fn help_and_version_exit_zero() {
    run_ok(&["--help"]);
    run_ok(&["--version"]);
    run_ok(&["train", "--help"]);
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    for args in [
        vec!["--definitely-not-a-flag"],
        vec!["frobnicate"],
        vec!["synth", "--task", "order"][..2].to_vec(),
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "args {args:?}");
    }
}

#[test]
fn synth_rejects_short_videos_with_named_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--task",
        "order",
        "--videos-per-cell",
        "3",
        "--frames",
        "10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("VideoTooShort"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn missing_manifest_is_a_data_error() {
    let out = run(&["train", "--manifest", "/no/such/manifest.tsv", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_writes_identical_bytes_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_dataset(a.path());
    tiny_dataset(b.path());
    assert!(a.path().join("stag.synth.config.json").is_file());
    assert!(a.path().join("manifest.tsv").is_file());
    assert_identical_trees(a.path(), b.path());
}

#[test]
fn out_dir_env_var_supplies_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = stag(&[
        "synth",
        "--task",
        "order",
        "--videos-per-cell",
        "3",
        "--frames",
        "15",
    ])
    .env("STAG_OUT_DIR", dir.path())
    .output()
    .expect("spawn stag");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(dir.path().join("manifest.tsv").is_file());
}

#[test]
fn train_embed_evaluate_are_deterministic_and_complete() {
    let data = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(data.path());
    let common = [
        "--manifest",
        &manifest,
        "--pipeline",
        "cbp-rnn-cbp",
        "--hidden",
        "8",
        "--d-g",
        "64",
        "--d-v",
        "64",
        "--max-iters",
        "40",
        "--batch-size",
        "8",
        "--eval-every",
        "20",
        "--patience",
        "2",
    ];

    let mut trees = Vec::new();
    for models in [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()] {
        let model_dir = models.path().to_str().unwrap().to_owned();
        let mut args: Vec<&str> = vec!["train"];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out", &model_dir]);
        run_ok(&args);

        for emotion in ["anger", "happiness", "surprise", "disgust", "contentment", "sadness"] {
            assert!(models.path().join(format!("aggregator_{emotion}.stag")).is_file());
            assert!(models.path().join(format!("svm_{emotion}.stag")).is_file());
            assert!(models.path().join(format!("train_{emotion}.csv")).is_file());
        }
        assert!(models.path().join("stag.train.config.json").is_file());

        run_ok(&[
            "embed",
            "--manifest",
            &manifest,
            "--models",
            &model_dir,
            "--split",
            "val",
            "--out",
            &model_dir,
        ]);
        assert!(models.path().join("embeddings_val.csv").is_file());

        let eval = run_ok(&[
            "evaluate",
            "--manifest",
            &manifest,
            "--models",
            &model_dir,
            "--split",
            "val",
            "--out",
            &model_dir,
        ]);
        assert!(stdout_of(&eval).contains("average"));
        assert!(models.path().join("evaluation_val.csv").is_file());

        trees.push(dir_bytes(models.path()));
    }
    assert_eq!(trees[0].len(), trees[1].len());
    for (rel, bytes) in &trees[0] {
        // Embed and evaluate snapshots record the --models path, which is a
        // different temp dir per run. Every data artifact must match.
        if rel == "stag.embed.config.json" || rel == "stag.evaluate.config.json" {
            continue;
        }
        assert_eq!(bytes, &trees[1][rel], "artifact {rel} differs between identical runs");
    }
}

#[test]
fn train_surfaces_corrupt_feature_files() {
    let data = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(data.path());
    // Damage one payload: keep the header plausible, cut the payload short.
    let victim = std::fs::read_dir(data.path().join("features"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 7]).unwrap();

    let models = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--manifest",
        &manifest,
        "--pipeline",
        "mean",
        "--out",
        models.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains(".rfex"), "stderr: {}", stderr_of(&out));
}

#[test]
fn evaluate_without_models_is_a_data_error() {
    let data = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(data.path());
    let out = run(&[
        "evaluate",
        "--manifest",
        &manifest,
        "--models",
        "/no/such/models",
        "--split",
        "val",
        "--out",
        data.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_the_corruption_hook_trips_it() {
    let clean = run_ok(&["gradcheck"]);
    let text = stdout_of(&clean);
    for component in [
        "cbp_pool",
        "netvlad_pool",
        "rnn_bptt",
        "lstm_bptt",
        "power_normalize",
        "l2_normalize",
        "interval_loss",
    ] {
        assert!(text.contains(component), "missing {component} in:\n{text}");
    }
    assert!(text.contains("all gradient checks passed"));

    let broken = stag(&["gradcheck"])
        .env("STAG_GRADCHECK_CORRUPT", "rnn_bptt")
        .output()
        .expect("spawn stag");
    assert_eq!(broken.status.code(), Some(3));
    assert!(
        stderr_of(&broken).contains("rnn_bptt"),
        "stderr: {}",
        stderr_of(&broken)
    );
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let data = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(data.path());
    let out_dir = tempfile::tempdir().unwrap();
    let out = run_ok(&[
        "ablate",
        "--manifest",
        &manifest,
        "--presets",
        "cbp,mean",
        "--d-g",
        "64",
        "--d-v",
        "64",
        "--out",
        out_dir.path().to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out_dir.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "preset,use_pca,overall");
    assert_eq!(lines.len(), 5, "csv:\n{csv}");
    assert!(csv.contains("cbp,") && csv.contains("mean,"));
    for tag in ["ablate_cbp_raw", "ablate_cbp_pca", "ablate_mean_raw", "ablate_mean_pca"] {
        assert!(out_dir.path().join(tag).join("svm_anger.stag").is_file(), "{tag}");
    }
    assert!(stdout_of(&out).contains("overall"));
}
