//! End-to-end tests that drive the compiled binary the way a user would.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn firtree() -> Command {
    Command::new(env!("CARGO_BIN_EXE_firtree"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning the binary");
    assert!(
        out.status.success(),
        "command failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

/// Simulates a small dataset into `dir` and returns the file paths
/// (ratings, times, covariates, schema).
fn simulate_into(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    run_ok(firtree()
        .args(["simulate", "--raters", "60", "--items", "5", "--seed", "11"])
        .arg("--out")
        .arg(dir));
    (
        dir.join("ratings.csv"),
        dir.join("times.csv"),
        dir.join("covariates.csv"),
        dir.join("covariates_schema.json"),
    )
}

fn run_pipeline(data: &(PathBuf, PathBuf, PathBuf, PathBuf), out: &Path, extra: &[&str]) -> i32 {
    firtree()
        .arg("run")
        .arg("--ratings")
        .arg(&data.0)
        .arg("--times")
        .arg(&data.1)
        .arg("--covariates")
        .arg(&data.2)
        .arg("--schema")
        .arg(&data.3)
        .arg("--seed")
        .arg("11")
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("spawning the binary")
        .status
        .code()
        .expect("exit code")
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn full_pipeline_produces_a_complete_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);

    for name in [
        "manifest.json",
        "ratings_used.csv",
        "times_used.csv",
        "alpha_hat.csv",
        "sigma_hat.csv",
        "eta_hat.csv",
        "irtree_fit.json",
        "fuzzy_cells.csv",
        "fuzzy_composites.csv",
        "crisp_responses.csv",
        "regression_sample.csv",
        "models.json",
        "model_normal.tsv",
        "model_lognormal.tsv",
        "model_fuzzy-normal.tsv",
        "hist_center.tsv",
        "hist_left_spread.tsv",
        "hist_right_spread.tsv",
        "hist_omega.tsv",
        "omega_stats.tsv",
        "lines_normal.tsv",
        "report.txt",
    ] {
        assert!(bundle.join(name).exists(), "bundle is missing {name}");
    }

    // The manifest's output list matches the directory contents.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap())
            .unwrap();
    let listed: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let mut on_disk: Vec<String> = std::fs::read_dir(&bundle)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    assert_eq!(manifest["seed"], serde_json::json!(11));
}

#[test]
fn rerunning_with_the_same_config_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);
    let first = read_dir_bytes(&bundle);
    std::fs::remove_dir_all(&bundle).unwrap();
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);
    let second = read_dir_bytes(&bundle);
    assert_eq!(first.len(), second.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
    }
}

#[test]
fn staged_commands_match_the_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);

    let staged = tmp.path().join("staged");
    run_ok(firtree()
        .arg("trim")
        .arg("--times")
        .arg(&data.1)
        .arg("--ratings")
        .arg(&data.0)
        .arg("--out")
        .arg(&staged));
    run_ok(firtree()
        .arg("fit-irtree")
        .arg("--ratings")
        .arg(staged.join("ratings_masked.csv"))
        .arg("--out")
        .arg(&staged));
    run_ok(firtree()
        .arg("fuzzify")
        .arg("--times")
        .arg(staged.join("times_trimmed.csv"))
        .arg("--alpha")
        .arg(staged.join("alpha_hat.csv"))
        .arg("--eta")
        .arg(staged.join("eta_hat.csv"))
        .arg("--out")
        .arg(&staged));
    run_ok(firtree()
        .arg("regress")
        .arg("--composites")
        .arg(staged.join("fuzzy_composites.csv"))
        .arg("--crisp")
        .arg(staged.join("crisp_responses.csv"))
        .arg("--covariates")
        .arg(&data.2)
        .arg("--schema")
        .arg(&data.3)
        .arg("--out")
        .arg(&staged));

    // No rater is dropped in this clean dataset, so the staged estimates
    // must agree with the all-in-one run exactly.
    let a = std::fs::read(bundle.join("models.json")).unwrap();
    let b = std::fs::read(staged.join("models.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_regeneration_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);
    let before = read_dir_bytes(&bundle);
    run_ok(firtree().arg("report").arg(&bundle));
    let after = read_dir_bytes(&bundle);
    assert_eq!(before, after);
}

#[test]
fn w_ones_flag_fixes_every_exponent_at_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &["--w-ones"]), 0);
    let text = std::fs::read_to_string(bundle.join("fuzzy_cells.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let w_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with("_w"))
        .map(|(i, _)| i)
        .collect();
    assert!(!w_cols.is_empty());
    let mut seen = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for &c in &w_cols {
            if fields[c] != "NA" {
                assert_eq!(fields[c], "1", "exponent not one: {}", fields[c]);
                seen += 1;
            }
        }
    }
    assert!(seen > 100);
}

#[test]
fn no_trim_keeps_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &["--no-trim"]), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["warnings"]["cells_trimmed"], serde_json::json!(0));
    assert_eq!(manifest["config"]["trim"], serde_json::json!(false));
}

#[test]
fn empty_model_list_still_yields_histograms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &["--models", ""]), 0);
    assert!(bundle.join("hist_center.tsv").exists());
    assert!(bundle.join("hist_omega.tsv").exists());
    assert!(!bundle.join("model_normal.tsv").exists());
    assert!(!bundle.join("lines_normal.tsv").exists());
}

#[test]
fn unconverged_tree_fit_exits_three_with_a_full_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &["--max-iter", "1"]), 3);
    assert!(bundle.join("manifest.json").exists());
    assert!(bundle.join("models.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["warnings"]["irtree_converged"], serde_json::json!(false));
}

#[test]
fn input_problems_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));

    // Missing file.
    let mut broken = data.clone();
    broken.0 = tmp.path().join("nope.csv");
    assert_eq!(run_pipeline(&broken, &tmp.path().join("b1"), &[]), 2);

    // Unknown tree name.
    assert_eq!(run_pipeline(&data, &tmp.path().join("b2"), &["--tree", "nosuch"]), 2);

    // Unknown model name.
    assert_eq!(run_pipeline(&data, &tmp.path().join("b3"), &["--models", "probit"]), 2);

    // Significance level out of range (clap rejects it).
    assert_eq!(run_pipeline(&data, &tmp.path().join("b4"), &["--alpha-level", "1.5"]), 2);

    // Ratings/times shape mismatch.
    let short = tmp.path().join("short.csv");
    let text = std::fs::read_to_string(&data.0).unwrap();
    let keep: Vec<&str> = text.lines().take(10).collect();
    std::fs::write(&short, keep.join("\n") + "\n").unwrap();
    let mut mismatched = data.clone();
    mismatched.0 = short;
    assert_eq!(run_pipeline(&mismatched, &tmp.path().join("b5"), &[]), 2);
}

#[test]
fn unparseable_cells_are_counted_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));

    // Corrupt two rating cells and one time cell.
    let mangle = |path: &Path, n: usize| {
        let text = std::fs::read_to_string(path).unwrap();
        let mut out = Vec::new();
        let mut left = n;
        for (i, line) in text.lines().enumerate() {
            if i >= 1 && left > 0 {
                let mut fields: Vec<&str> = line.split(',').collect();
                fields[1] = "garbage";
                out.push(fields.join(","));
                left -= 1;
            } else {
                out.push(line.to_string());
            }
        }
        std::fs::write(path, out.join("\n") + "\n").unwrap();
    };
    mangle(&data.0, 2);
    mangle(&data.1, 1);

    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["warnings"]["bad_rating_cells"], serde_json::json!(2));
    // The corrupted time cell may also mask its rating; at least the count
    // of bad time cells must be exact.
    assert_eq!(manifest["warnings"]["bad_time_cells"], serde_json::json!(1));
}

#[test]
fn fitted_lines_cover_every_level_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate_into(&tmp.path().join("data"));
    let bundle = tmp.path().join("bundle");
    assert_eq!(run_pipeline(&data, &bundle, &[]), 0);
    let text = std::fs::read_to_string(bundle.join("lines_normal.tsv")).unwrap();
    let mut groups: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    groups.sort();
    groups.dedup();
    assert_eq!(groups, vec!["group=no", "group=yes"]);
}
