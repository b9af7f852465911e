//! End-to-end runs of the compiled binary: every command, the exit-code
//! contract, determinism, and the config precedence rules.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cognet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cognet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cognet(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Small labeled family most tests share; one call per tempdir.
fn synth_fixture(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("family.tsv");
    ok(
        dir,
        &[
            "synth",
            "--out",
            path.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--doculects",
            "6",
            "--concepts",
            "25",
        ],
    );
    path
}

/// Data rows of a written table, headers and comments dropped.
fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_is_deterministic_per_seed_and_parseable() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let a = synth_fixture(dir, 5);
    let text = read(&a);
    ok(
        dir,
        &[
            "synth",
            "--out",
            "again.tsv",
            "--seed",
            "5",
            "--doculects",
            "6",
            "--concepts",
            "25",
        ],
    );
    assert_eq!(text, read(&dir.join("again.tsv")));
    ok(
        dir,
        &[
            "synth",
            "--out",
            "other.tsv",
            "--seed",
            "6",
            "--doculects",
            "6",
            "--concepts",
            "25",
        ],
    );
    assert_ne!(text, read(&dir.join("other.tsv")));

    let rows = data_rows(&text);
    assert_eq!(rows.len(), 150);
    assert!(rows.iter().all(|r| r.len() == 4));
    let stats = ok(dir, &["stats", "--input", a.to_str().unwrap()]);
    assert!(stdout(&stats).contains("words\t150"));
}

#[test]
fn train_is_byte_identical_across_runs_for_both_model_kinds() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    for model in ["pmi", "phmm"] {
        let args = [
            "train",
            "--input",
            "family.tsv",
            "--model",
            model,
            "--m",
            "32",
            "--epochs",
            "2",
            "--seed",
            "3",
        ];
        ok(dir, &[&args[..], &["--out", "a.model"]].concat());
        ok(dir, &[&args[..], &["--out", "b.model"]].concat());
        assert_eq!(
            read(&dir.join("a.model")),
            read(&dir.join("b.model")),
            "{model} files differ across identical runs"
        );
    }
}

#[test]
fn batch_mode_warns_about_minibatch_flags_and_ignores_them() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    let with = ok(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "a.model",
            "--mode",
            "batch",
            "--m",
            "7",
            "--alpha",
            "0.9",
        ],
    );
    assert!(
        stderr(&with).contains("warning"),
        "no warning on ignored flags"
    );
    let without = ok(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "b.model",
            "--mode",
            "batch",
        ],
    );
    assert!(stderr(&without).is_empty());
    assert_eq!(read(&dir.join("a.model")), read(&dir.join("b.model")));
}

#[test]
fn cluster_at_threshold_zero_leaves_every_word_alone() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    ok(
        dir,
        &[
            "cluster",
            "--input",
            "family.tsv",
            "--out",
            "c.tsv",
            "--model",
            "ldn",
            "--threshold",
            "0.0",
        ],
    );
    let rows = data_rows(&read(&dir.join("c.tsv")));
    assert_eq!(rows.len(), 150);
    for concept in rows
        .iter()
        .map(|r| &r[1])
        .collect::<std::collections::BTreeSet<_>>()
    {
        let ids: Vec<&str> = rows
            .iter()
            .filter(|r| &r[1] == concept)
            .map(|r| r[3].as_str())
            .collect();
        let distinct: std::collections::BTreeSet<&str> = ids.iter().copied().collect();
        assert_eq!(ids.len(), distinct.len(), "{concept} merged words");
    }
}

#[test]
fn faithful_copies_cluster_together_and_score_a_perfect_average() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--out",
            "clean.tsv",
            "--seed",
            "2",
            "--doculects",
            "6",
            "--concepts",
            "20",
            "--mutation-rate",
            "0",
            "--replacement-rate",
            "0",
        ],
    );
    ok(
        dir,
        &[
            "cluster",
            "--input",
            "clean.tsv",
            "--out",
            "c.tsv",
            "--model",
            "ldn",
        ],
    );
    let report = ok(
        dir,
        &["evaluate", "--input", "c.tsv", "--gold", "clean.tsv"],
    );
    let text = stdout(&report);
    let last = text.lines().last().unwrap();
    assert_eq!(last, "__AVERAGE__\t1\t1\t1");
}

#[test]
fn trained_pipeline_round_trips_through_evaluate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    ok(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "m.model",
            "--m",
            "32",
        ],
    );
    ok(
        dir,
        &[
            "cluster",
            "--input",
            "family.tsv",
            "--out",
            "c.tsv",
            "--model",
            "pmi",
            "--model-file",
            "m.model",
        ],
    );
    let report = ok(
        dir,
        &["evaluate", "--input", "c.tsv", "--gold", "family.tsv"],
    );
    let avg = stdout(&report);
    let avg = avg.lines().last().unwrap();
    assert!(avg.starts_with("__AVERAGE__\t"));
    let f: f64 = avg.rsplit('\t').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&f));

    let json = ok(
        dir,
        &[
            "evaluate",
            "--input",
            "c.tsv",
            "--gold",
            "family.tsv",
            "--format",
            "json",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).expect("valid json report");
    assert!(v["average"]["f_score"].is_number());
    assert_eq!(v["average"]["f_score"].as_f64().unwrap(), f);
}

#[test]
fn evaluate_names_the_concepts_that_do_not_line_up() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    ok(
        dir,
        &[
            "cluster",
            "--input",
            "family.tsv",
            "--out",
            "c.tsv",
            "--model",
            "ldn",
        ],
    );
    let table = read(&dir.join("c.tsv"));
    let damaged: String = table
        .lines()
        .filter(|l| !l.contains("C003\t"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(dir.join("damaged.tsv"), damaged).unwrap();
    let out = cognet(
        dir,
        &["evaluate", "--input", "damaged.tsv", "--gold", "family.tsv"],
    );
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("C003"), "offending concept not named");
}

#[test]
fn evaluate_report_layout_matches_the_golden_bytes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("gold.tsv"),
        "doculect\tconcept\tform\tcog_class\n\
         d1\tstone\tkam\ta\n\
         d2\tstone\tkan\ta\n\
         d3\tstone\tpel\tb\n\
         d1\twater\tvod\ta\n\
         d2\twater\tsu\tb\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("pred.tsv"),
        "doculect\tconcept\tform\tcluster_id\n\
         d1\tstone\tkam\t0\n\
         d2\tstone\tkan\t0\n\
         d3\tstone\tpel\t0\n\
         d1\twater\tvod\t0\n\
         d2\twater\tsu\t1\n",
    )
    .unwrap();
    let out = ok(
        dir,
        &["evaluate", "--input", "pred.tsv", "--gold", "gold.tsv"],
    );
    let body: String = stdout(&out)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(
        body,
        "concept\tprecision\trecall\tf\n\
         stone\t0.5555555555555555\t1\t0.7142857142857143\n\
         water\t1\t1\t1\n\
         __AVERAGE__\t0.7777777777777777\t1\t0.8571428571428572\n"
    );
}

#[test]
fn model_file_flag_pairs_with_trained_models_only() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    let missing = cognet(
        dir,
        &[
            "cluster",
            "--input",
            "family.tsv",
            "--out",
            "c.tsv",
            "--model",
            "pmi",
        ],
    );
    assert_eq!(exit_code(&missing), 1);
    assert!(stderr(&missing).contains("--model-file"));
    let spurious = cognet(
        dir,
        &[
            "cluster",
            "--input",
            "family.tsv",
            "--out",
            "c.tsv",
            "--model",
            "ldn",
            "--model-file",
            "nope",
        ],
    );
    assert_eq!(exit_code(&spurious), 1);
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    let io = cognet(
        dir,
        &["train", "--input", "no-such.tsv", "--out", "m.model"],
    );
    assert_eq!(exit_code(&io), 2);
    let validation = cognet(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "m.model",
            "--alpha",
            "0.2",
        ],
    );
    assert_eq!(exit_code(&validation), 1);
    let ldn_train = cognet(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "m.model",
            "--model",
            "ldn",
        ],
    );
    assert_eq!(exit_code(&ldn_train), 1);
    let bad_flag = cognet(dir, &["train", "--no-such-flag"]);
    assert_eq!(exit_code(&bad_flag), 1);
    let help = cognet(dir, &["--help"]);
    assert_eq!(exit_code(&help), 0);
}

#[test]
fn config_file_fills_in_but_flags_win() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    std::fs::write(dir.join("cfg.toml"), "threshold = 0.7\nm = 16\n").unwrap();
    ok(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "a.model",
            "--config",
            "cfg.toml",
        ],
    );
    let header = read(&dir.join("a.model"));
    assert!(header.contains("# threshold\t0.7\n"));
    assert!(header.contains("# m\t16\n"));
    ok(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "b.model",
            "--config",
            "cfg.toml",
            "--threshold",
            "0.4",
        ],
    );
    assert!(read(&dir.join("b.model")).contains("# threshold\t0.4\n"));
    std::fs::write(dir.join("bad.toml"), "no_such_key = 1\n").unwrap();
    let bad = cognet(
        dir,
        &[
            "train",
            "--input",
            "family.tsv",
            "--out",
            "c.model",
            "--config",
            "bad.toml",
        ],
    );
    assert_eq!(exit_code(&bad), 1);
}

#[test]
fn sweep_covers_the_grid_resumes_and_reports_the_argmax() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    let args = [
        "sweep",
        "--input",
        "family.tsv",
        "--out",
        "sweep.tsv",
        "--s",
        "4..5",
        "--alpha",
        "0.5..0.55",
        "--epochs",
        "2",
        "--jobs",
        "2",
    ];
    let first = ok(dir, &args);
    assert!(stdout(&first).contains("grid: 2 x 2 = 4 cells"));
    assert!(stdout(&first).contains("ran 4 cells (0 failed), reused 0"));

    let table = read(&dir.join("sweep.tsv"));
    let rows = data_rows(&table);
    assert_eq!(rows.len(), 4);
    let best_from_table = rows
        .iter()
        .map(|r| (r[0].clone(), r[1].clone(), r[2].parse::<f64>().unwrap()))
        .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();
    let best_line = stdout(&first);
    let best_line = best_line
        .lines()
        .find(|l| l.starts_with("best cell"))
        .unwrap()
        .to_string();
    assert!(
        best_line.contains(&format!("m={}", best_from_table.0))
            && best_line.contains(&format!("alpha={}", best_from_table.1)),
        "best line {best_line} disagrees with table max {best_from_table:?}"
    );
    assert!(read(&dir.join("sweep.svg")).starts_with("<svg"));

    let second = ok(dir, &args);
    assert!(stdout(&second).contains("reused 4"));
    assert!(stdout(&second).contains("ran 0 cells"));
    assert_eq!(
        table,
        read(&dir.join("sweep.tsv")),
        "resume changed the table"
    );
}

#[test]
fn stats_reports_class_structure_and_length_profile() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    synth_fixture(dir, 11);
    ok(
        dir,
        &[
            "stats",
            "--input",
            "family.tsv",
            "--out",
            "stats.tsv",
            "--lengths",
            "lengths.tsv",
        ],
    );
    let stats = read(&dir.join("stats.tsv"));
    assert!(stats.contains("meanings\t25\n"));
    assert!(stats.contains("doculects\t6\n"));
    assert!(stats.contains("cognate_classes\t"));
    let lengths = read(&dir.join("lengths.tsv"));
    assert!(lengths.lines().last().unwrap().starts_with("__MEAN__\t"));
}
