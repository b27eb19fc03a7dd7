//! Whole invocations run in-process through `real_main`.

use std::fs;
use std::path::Path;

use super::{real_main, stages};

fn run(args: &[&str]) -> u8 {
    // manifests stamp this instead of the clock, so runs compare byte for byte
    std::env::set_var("SOURCE_DATE_EPOCH", "1");
    let mut argv = vec!["probtab".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    real_main(argv)
}

fn weather(dir: &Path) -> String {
    let mut text = String::from("season,rain,wet,temp\n");
    let seasons = ["winter", "spring", "summer", "autumn"];
    for i in 0..600u32 {
        let s = seasons[(i as usize * 7) % 4];
        let rain = (i * 13 + 5) % 10 < if s == "summer" { 2 } else { 6 };
        let wet = if rain { (i * 7) % 10 < 9 } else { (i * 3) % 10 < 1 };
        let temp = match s {
            "winter" => 2.0,
            "summer" => 25.0,
            _ => 12.0,
        } + f64::from((i * 37) % 100) / 10.0;
        text.push_str(&format!("{s},{},{},{temp:.1}\n", if rain { "yes" } else { "no" }, if wet { "wet" } else { "dry" }));
    }
    let path = dir.join("weather.csv");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["learn"]), 1);
    assert_eq!(run(&["eval", "--bundle", "x", "--method", "oracle"]), 1);
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
}

#[test]
fn stages_step_by_step() {
    let dir = tempfile::tempdir().unwrap();
    let table = weather(dir.path());
    let bundle = dir.path().join("b");
    let b = bundle.to_str().unwrap();

    // later stages refuse to run before their inputs exist
    assert_eq!(run(&["learn", "--bundle", b]), 2);

    assert_eq!(run(&["ingest", "--table", &table, "--bundle", b]), 0);
    assert_eq!(run(&["learn", "--bundle", b]), 0);
    assert_eq!(run(&["artifacts", "--bundle", b, "--insights", "5"]), 0);
    assert_eq!(fs::read_to_string(bundle.join("insights.jsonl")).unwrap().lines().count(), 5);

    assert_eq!(run(&["query", "--bundle", b, "P(wet=wet | rain=yes)"]), 0);
    let p = stages::query(&bundle, "P(wet=wet | rain=yes)").unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(run(&["query", "--bundle", b, "P(wet=soggy)"]), 2);
    let err = stages::query(&bundle, "P(wet=soggy)").unwrap_err();
    assert!(err.to_string().contains("soggy"), "{err}");

    assert_eq!(run(&["genbench", "--bundle", b, "--causal", "5", "--evidential", "5", "--explain-away", "0", "--mixed", "0"]), 0);
    assert_eq!(fs::read_to_string(bundle.join("benchmark.jsonl")).unwrap().lines().count(), 10);

    assert_eq!(run(&["eval", "--bundle", b, "--method", "premise", "--llm", "constant:I think 42%"]), 0);
    let report = dir.path().join("r.json");
    assert_eq!(run(&["report", "--bundle", b, "--out", report.to_str().unwrap()]), 0);
    let report = probtab::eval::Report::from_json(&fs::read_to_string(report).unwrap()).unwrap();
    let row = report.rows.iter().find(|r| r.method == "premise" && r.variant == "all").unwrap();
    assert_eq!(row.error_rate.mean, 0.0);
}

#[test]
fn remote_model_failures() {
    let dir = tempfile::tempdir().unwrap();
    let table = weather(dir.path());
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["pipeline", "--table", &table, "--out", o, "--causal", "3", "--evidential", "3", "--explain-away", "0", "--mixed", "0"]), 0);
    let bundle = out.join("weather");
    // no endpoint configured
    assert_eq!(run(&["eval", "--bundle", bundle.to_str().unwrap(), "--method", "autobn"]), 1);
    std::env::set_var("PROBTAB_LLM_ENDPOINT", "http://127.0.0.1:9/");
    std::env::set_var("PROBTAB_LLM_RETRIES", "0");
    let code = run(&["eval", "--bundle", bundle.to_str().unwrap(), "--method", "autobn"]);
    std::env::remove_var("PROBTAB_LLM_ENDPOINT");
    assert_eq!(code, 3);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let table = weather(dir.path());
    let config = dir.path().join("c.json");
    fs::write(
        &config,
        r#"{"seed": 4, "max_states": 3, "artifacts": {"insights": 2}, "pipeline": {"jobs": 2, "insights": 3, "causal": 2, "evidential": 2, "explain_away": 0, "mixed": 0}}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let r = run(&["--config", config.to_str().unwrap(), "pipeline", "--table", &table, "--out", out.to_str().unwrap(), "--mixed", "1"]);
    assert_eq!(r, 0);
    let bundle = out.join("weather");
    assert_eq!(fs::read_to_string(bundle.join("insights.jsonl")).unwrap().lines().count(), 3);
    let manifest = fs::read_to_string(bundle.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"max_states\": 3"), "{manifest}");
    // the explicit flag beats the file
    assert!(manifest.contains("\"mixed\": 1") || manifest.contains("\"mixed_redundant\": 1"), "{manifest}");

    fs::write(&config, r#"{"pipeline": {"no_such_flag": 1}}"#).unwrap();
    let r = run(&["--config", config.to_str().unwrap(), "pipeline", "--table", &table, "--out", out.to_str().unwrap()]);
    assert_eq!(r, 1);
}

#[test]
fn parallel_pipeline_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let a = weather(dir.path());
    let b = dir.path().join("other.csv");
    fs::copy(&a, &b).unwrap();
    let counts = ["--causal", "3", "--evidential", "3", "--explain-away", "0", "--mixed", "0", "--method", "random"];
    for (jobs, out) in [("1", "serial"), ("2", "parallel")] {
        let o = dir.path().join(out);
        let mut args = vec!["pipeline", "--table", &a, "--table", b.to_str().unwrap(), "--out", o.to_str().unwrap(), "--jobs", jobs];
        args.extend(counts);
        assert_eq!(run(&args), 0);
    }
    for t in ["weather", "other"] {
        for f in ["bayesnet.json", "benchmark.jsonl", "manifest.json", "predictions/random.jsonl"] {
            let x = fs::read(dir.path().join("serial").join(t).join(f)).unwrap();
            let y = fs::read(dir.path().join("parallel").join(t).join(f)).unwrap();
            assert_eq!(x, y, "{t}/{f}");
        }
    }
}
