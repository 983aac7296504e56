//! End-to-end tests of the `vmr` binary: exit codes, artifact creation,
//! config precedence, and run-to-run determinism at the process level.

use std::path::Path;
use std::process::{Command, Output};

fn vmr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn vmr")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn synth_then_train_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(
        dir.path(),
        &["synth", "--pairs", "100", "--seed", "7", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("d/manifest.txt").exists());
    assert!(dir.path().join("d/pairs.txt").exists());
    assert!(dir.path().join("d/truth.txt").exists());
    assert!(dir.path().join("d/config.txt").exists());

    let out = vmr(dir.path(), &["train", "--data", "d", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("model.ckpt").exists());
    assert!(dir.path().join("model.losslog").exists());

    let log = std::fs::read_to_string(dir.path().join("model.losslog")).unwrap();
    let mut lines = log.lines();
    assert!(lines.next().unwrap().starts_with("# config="));
    assert_eq!(
        lines.next().unwrap(),
        "epoch,step,L_R,L_Mcontent,L_D,L_Minter,L_Fusion,L_total"
    );
    // 70 train pairs at batch 16 = 5 steps per epoch, 100 epochs.
    assert_eq!(lines.count(), 500);
}

#[test]
fn eval_and_query_on_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(
        dir.path(),
        &["synth", "--pairs", "40", "--seed", "3", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = vmr(
        dir.path(),
        &[
            "train", "--data", "d", "--seed", "3", "--epochs", "5", "--out", "m.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let out = vmr(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d",
            "--out",
            "report.txt",
            "--threads",
            "2",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    for k in [1, 5, 10, 15, 20, 25] {
        assert!(report.contains(&format!("K={k} recall=")), "{report}");
    }

    // Evaluation is deterministic: a second run writes identical bytes.
    let out = vmr(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d",
            "--out",
            "report2.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report2 = std::fs::read_to_string(dir.path().join("report2.txt")).unwrap();
    assert_eq!(report, report2);

    // Query a known video; ranked lines are "rank,music_id,similarity".
    let out = vmr(
        dir.path(),
        &[
            "query",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d",
            "--video-id",
            "v00000",
            "--k",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("1,m"), "{lines:?}");

    // K beyond the corpus prints a notice and returns everything.
    let out = vmr(
        dir.path(),
        &[
            "query",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d",
            "--video-id",
            "v00000",
            "--k",
            "999",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(
        stderr(&out).contains("exceeds the corpus size"),
        "{}",
        stderr(&out)
    );
    assert_eq!(stdout(&out).lines().count(), 40);

    // Unknown video id is a validation error.
    let out = vmr(
        dir.path(),
        &[
            "query",
            "--checkpoint",
            "m.ckpt",
            "--data",
            "d",
            "--video-id",
            "nope",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_determinism_at_process_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(
        dir.path(),
        &["synth", "--pairs", "30", "--seed", "11", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["a.ckpt", "b.ckpt"] {
        let out = vmr(
            dir.path(),
            &[
                "train", "--data", "d", "--seed", "11", "--epochs", "3", "--out", name,
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("b.ckpt")).unwrap();
    assert_eq!(a, b, "checkpoints differ between identical seeded runs");
    let a = std::fs::read(dir.path().join("a.losslog")).unwrap();
    let b = std::fs::read(dir.path().join("b.losslog")).unwrap();
    assert_eq!(a, b, "loss logs differ between identical seeded runs");
}

#[test]
fn batch_size_one_fails_naming_the_metric_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(
        dir.path(),
        &["synth", "--pairs", "20", "--seed", "1", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = vmr(dir.path(), &["train", "--data", "d", "--batch-size", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("metric"), "{}", stderr(&out));
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(dir.path(), &["gradcheck", "--seed", "3", "--seeds", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("loss=ppml"), "{text}");
    assert!(text.contains("overall max_rel_err"), "{text}");
}

#[test]
fn unknown_flags_and_subcommands_exit_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(dir.path(), &["synth", "--frobnicate", "1", "--out", "d"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).to_lowercase().contains("usage"),
        "{}",
        stderr(&out)
    );

    let out = vmr(dir.path(), &["shred"]);
    assert_eq!(out.status.code(), Some(1));

    let out = vmr(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("synth"), "{}", stdout(&out));
}

#[test]
fn config_file_with_flag_override_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmr(
        dir.path(),
        &["synth", "--pairs", "20", "--seed", "2", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(0));
    std::fs::write(dir.path().join("run.cfg"), "margin=0.3\nepochs=2\n").unwrap();
    let out = vmr(
        dir.path(),
        &[
            "train", "--data", "d", "--seed", "2", "--config", "run.cfg", "--margin", "0.7",
            "--out", "m.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // The checkpoint echoes the effective config; the flag must have won.
    let ckpt = vmr_core::training::Checkpoint::load(&dir.path().join("m.ckpt")).unwrap();
    assert!(
        ckpt.config_text.contains("margin=0.7"),
        "{}",
        ckpt.config_text
    );
    assert!(
        ckpt.config_text.contains("epochs=2"),
        "{}",
        ckpt.config_text
    );
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "learnig_rate=0.1\n").unwrap();
    let out = vmr(dir.path(), &["synth", "--out", "d", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learnig_rate"), "{}", stderr(&out));
}

#[test]
fn synth_is_byte_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["d1", "d2"] {
        let out = vmr(
            dir.path(),
            &["synth", "--pairs", "12", "--seed", "5", "--out", name],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    for file in [
        "manifest.txt",
        "pairs.txt",
        "truth.txt",
        "features/m00004_0.f32",
    ] {
        let a = std::fs::read(dir.path().join("d1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("d2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical synth runs");
    }
}
