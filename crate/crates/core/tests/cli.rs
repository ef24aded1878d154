//! End-to-end checks of the command-line front end through `cli::run`.

use std::fs;
use std::path::Path;

use serde_json::Value;
use waveinr::cli::{run, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut argv = vec!["waveinr"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = cli(args);
    assert_eq!(o.code, EXIT_OK, "args {args:?}\nstdout: {}\nstderr: {}", o.stdout, o.stderr);
    o.stdout
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_default_geometry_and_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("ev.csv");
    let b = dir.path().join("again.csv");
    ok(&["synth", "--class", "single_mode", "--out", s(&a)]);
    ok(&["synth", "--class", "single_mode", "--out", s(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 7936);
    assert!(rows.iter().all(|r| r.split(',').count() == 3));
    assert_eq!(
        fs::read(dir.path().join("ev.spec.json")).unwrap(),
        fs::read(dir.path().join("again.spec.json")).unwrap()
    );

    // A sidecar regenerates the same capture.
    let c = dir.path().join("from_spec.csv");
    ok(&["synth", "--spec", s(&dir.path().join("ev.spec.json")), "--out", s(&c)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn synth_suite_writes_captures_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("suite");
    ok(&["synth", "--suite", "3", "--seed", "7", "--out", s(&out)]);
    for k in 0..3 {
        assert!(out.join(format!("event_{k:03}.csv")).exists());
        assert!(out.join(format!("event_{k:03}.spec.json")).exists());
    }
    let again = dir.path().join("again");
    ok(&["synth", "--suite", "3", "--seed", "7", "--out", s(&again)]);
    for k in 0..3 {
        let name = format!("event_{k:03}.csv");
        assert_eq!(fs::read(out.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap());
    }
}

#[test]
fn fit_reports_paper_counts_and_compression() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("ev.csv");
    ok(&["synth", "--class", "subcycle_oscillation", "--out", s(&cap)]);

    let cases: [(&[&str], usize); 3] = [
        (&["--arch", "double", "--h1", "30", "--h2", "50"], 1661),
        (&["--arch", "single", "--h", "554"], 1663),
        (&["--arch", "combined", "--h1", "50", "--h2", "100"], 5503),
    ];
    for (k, (arch, count)) in cases.iter().enumerate() {
        let model = dir.path().join(format!("m{k}.json"));
        let rep = dir.path().join(format!("r{k}.json"));
        let mut args = vec!["fit", "--input", s(&cap), "--epochs", "3", "--out", s(&model), "--report", s(&rep)];
        args.extend_from_slice(arch);
        let stdout = ok(&args);
        assert!(stdout.contains(&format!("param_count {count}")), "{stdout}");
        let r = report(&rep);
        assert_eq!(r["schema_version"], 1);
        assert_eq!(r["command"], "fit");
        assert_eq!(r["models"][0]["param_count"], *count as u64);
        assert_eq!(r["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
        let comp = &r["compression"];
        let channels = if *count == 5503 { 3 } else { 1 };
        assert_eq!(comp["channels"], channels);
        assert_eq!(comp["ratio"].as_f64().unwrap(), (7936 * channels) as f64 / *count as f64);
        assert!(r["wall_time_s"].as_f64().unwrap() >= 0.0);
        assert!(model.exists());
    }
    let r = report(&dir.path().join("r2.json"));
    assert!((r["compression"]["ratio"].as_f64().unwrap() - 23808.0 / 5503.0).abs() < 1e-15);

    // Separate trio: Eq. (5) count and one model file per channel.
    let rep = dir.path().join("sep.json");
    let model = dir.path().join("sep.json.model");
    ok(&[
        "fit", "--input", s(&cap), "--arch", "separate", "--h1", "50", "--h2", "50", "--epochs", "2",
        "--out", s(&model), "--report", s(&rep),
    ]);
    let r = report(&rep);
    assert_eq!(r["compression"]["param_count"], 8103);
    assert_eq!(r["models"].as_array().unwrap().len(), 3);
}

#[test]
fn eval_matches_the_training_report_and_dumps_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("ev.csv");
    let model = dir.path().join("m.json");
    let fit_rep = dir.path().join("fit.json");
    let eval_rep = dir.path().join("eval.json");
    ok(&["synth", "--class", "steady", "--out", s(&cap)]);
    ok(&[
        "fit", "--input", s(&cap), "--arch", "combined", "--h1", "10", "--h2", "10", "--epochs", "20",
        "--out", s(&model), "--report", s(&fit_rep),
    ]);
    let dump = dir.path().join("plots");
    ok(&["eval", "--model", s(&model), "--input", s(&cap), "--dump", s(&dump), "--report", s(&eval_rep)]);
    let f = report(&fit_rep);
    let e = report(&eval_rep);
    assert_eq!(f["nmse"]["channels"], e["nmse"]["channels"]);
    assert_eq!(f["nmse"]["stats"]["mean"], e["nmse"]["stats"]["mean"]);
    for label in ["v_A", "v_B", "v_C"] {
        for side in ["raw", "model"] {
            let text = fs::read_to_string(dump.join(format!("{label}_{side}.dat"))).unwrap();
            let rows: Vec<&str> = text.lines().skip(1).collect();
            assert_eq!(rows.len(), 7936);
            assert_eq!(rows[0].split(' ').count(), 2);
        }
    }
}

#[test]
fn eval_errors_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("ev.csv");
    let model = dir.path().join("m.json");
    ok(&["synth", "--class", "steady", "--out", s(&cap)]);
    ok(&["fit", "--input", s(&cap), "--arch", "combined", "--h1", "5", "--h2", "5", "--epochs", "2", "--out", s(&model)]);

    // All-zero capture: NMSE is undefined.
    let text = fs::read_to_string(&cap).unwrap();
    let zeros: String = text
        .lines()
        .map(|l| if l.starts_with('#') { l.to_string() } else { "0.0,0.0,0.0".to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let zcap = dir.path().join("zero.csv");
    fs::write(&zcap, zeros).unwrap();
    let o = cli(&["eval", "--model", s(&model), "--input", s(&zcap)]);
    assert_eq!(o.code, EXIT_DATA);
    assert!(o.stderr.contains("undefined"), "{}", o.stderr);

    // One-channel capture against a three-output model.
    let one = dir.path().join("one.csv");
    let single: String = text
        .lines()
        .map(|l| {
            if l.starts_with("# labels") {
                "# labels = v_X".to_string()
            } else if l.starts_with("# units") {
                "# units = V".to_string()
            } else if l.starts_with('#') {
                l.to_string()
            } else {
                l.split(',').next().unwrap().to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&one, single).unwrap();
    let o = cli(&["eval", "--model", s(&model), "--input", s(&one)]);
    assert_eq!(o.code, EXIT_DATA);
    assert!(o.stderr.contains("capture channels") && o.stderr.contains("v_X"), "{}", o.stderr);

    let o = cli(&["eval", "--model", s(&model), "--input", s(&dir.path().join("missing.csv"))]);
    assert_eq!(o.code, EXIT_DATA);
}

#[test]
fn spectrum_reports_dominant_mode_and_sidebands() {
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("single.csv");
    let dual = dir.path().join("dual.csv");
    ok(&["synth", "--class", "single_mode", "--out", s(&single)]);
    ok(&["synth", "--class", "dual_mode_modulated", "--out", s(&dual)]);

    let spec_dir = dir.path().join("spec");
    let out = ok(&[
        "spectrum", "--input", s(&single), "--mode", "dominant", "--pre-event-cycles", "30", "--out", s(&spec_dir),
    ]);
    assert!(out.contains("f_dominant = 900.0 Hz"), "{out}");
    let text = fs::read_to_string(spec_dir.join("v_A_raw.spectrum.txt")).unwrap();
    assert_eq!(text.lines().count(), 1 + 7936 / 2 + 1);

    let rep = dir.path().join("r.json");
    let out = ok(&[
        "spectrum", "--input", s(&dual), "--mode", "sidebands", "--carrier", "60", "--pre-event-cycles", "30",
        "--report", s(&rep),
    ]);
    let r = report(&rep);
    let pair = &r["spectral"][0]["findings"]["sidebands"][0];
    let bw = 7680.0 / 7936.0;
    assert!((pair["lower"]["frequency_hz"].as_f64().unwrap() - 55.0).abs() <= bw, "{out}");
    assert!((pair["upper"]["frequency_hz"].as_f64().unwrap() - 65.0).abs() <= bw, "{out}");

    // Steady capture: dominant mode above 90 Hz is a harmonic or the noise floor.
    let steady = dir.path().join("steady.csv");
    ok(&["synth", "--class", "steady", "--out", s(&steady)]);
    let out = ok(&["spectrum", "--input", s(&steady)]);
    assert!(out.contains("f_dominant"), "{out}");
}

#[test]
fn spectrum_compares_model_with_capture() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("ev.csv");
    let model = dir.path().join("m.json");
    ok(&["synth", "--class", "single_mode", "--out", s(&cap)]);
    ok(&["fit", "--input", s(&cap), "--arch", "double", "--h1", "5", "--h2", "5", "--epochs", "5", "--out", s(&model)]);
    let rep = dir.path().join("r.json");
    let out = ok(&["spectrum", "--input", s(&cap), "--model", s(&model), "--pre-event-cycles", "30", "--report", s(&rep)]);
    assert!(out.contains("raw: f_dominant = 900.0 Hz"), "{out}");
    let r = report(&rep);
    assert!(r["spectral"][0]["spectral_nmse_percent"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_emits_long_table_and_trend_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("sweep.txt");
    let rep = dir.path().join("r.json");
    let out = ok(&[
        "sweep", "--suite", "1", "--class", "steady", "--h1", "10,50", "--h2", "10,70", "--runs", "1",
        "--epochs", "2", "--check-trend", "--out", s(&table), "--report", s(&rep), "--workers", "2",
    ]);
    assert!(out.contains("trend check:"), "{out}");
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "h1 h2 params mean_nmse std");
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().any(|l| l.starts_with("50 70 3741 ")), "{text}");
    let r = report(&rep);
    assert_eq!(r["results"]["table"].as_array().unwrap().len(), 4);
    assert!(r["results"]["trend_check"]["pass"].is_boolean());
}

#[test]
fn compare_matches_budgets_and_rejects_tiny_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("ev.csv");
    ok(&["synth", "--class", "steady", "--out", s(&cap)]);
    let rep = dir.path().join("r.json");
    let out = ok(&[
        "compare", "--input", s(&cap), "--budgets", "8103", "--runs", "1", "--epochs", "1", "--report", s(&rep),
    ]);
    assert!(out.contains("8103 separate 50 50 8103 "), "{out}");
    let r = report(&rep);
    let row = &r["results"]["budgets"][0];
    assert_eq!(row["separate"]["param_count"], 8103);
    assert!(row["combined"]["param_count"].as_u64().is_some());
    assert!(row["combined"]["mean_nmse"].as_f64().is_some());

    let o = cli(&["compare", "--input", s(&cap), "--budgets", "10", "--epochs", "1"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("minimum"), "{}", o.stderr);
}

#[test]
fn usage_config_and_numerical_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("ev.csv");
    ok(&["synth", "--class", "steady", "--out", s(&cap)]);

    assert_eq!(cli(&["fit", "--input", s(&cap), "--arch", "triple"]).code, EXIT_USAGE);
    assert_eq!(cli(&["synth", "--class", "nope", "--out", s(&cap)]).code, EXIT_USAGE);
    assert_eq!(cli(&["bogus"]).code, EXIT_USAGE);
    assert_eq!(cli(&["--help"]).code, EXIT_OK);

    // Config file values apply and flags override them.
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, "learning_rate = 0.002\nepochs = 4\nomega0 = 250.0\n").unwrap();
    let rep = dir.path().join("r.json");
    let model = dir.path().join("m.json");
    ok(&[
        "fit", "--input", s(&cap), "--h1", "5", "--h2", "5", "--config", s(&cfg), "--epochs", "3",
        "--out", s(&model), "--report", s(&rep),
    ]);
    let r = report(&rep);
    assert_eq!(r["config"]["train"]["learning_rate"], 0.002);
    assert_eq!(r["config"]["train"]["epochs"], 3);
    assert_eq!(r["config"]["omega0"], 250.0);
    assert_eq!(r["models"][0]["arch"]["omega0"], 250.0);
    assert_eq!(r["inputs"].as_array().unwrap().len(), 2);

    fs::write(&cfg, "learning_rate = 0.002\nbogus_field = 1\n").unwrap();
    assert_eq!(cli(&["fit", "--input", s(&cap), "--config", s(&cfg)]).code, EXIT_USAGE);

    // A huge learning rate blows the loss past the divergence guard.
    let rep = dir.path().join("div.json");
    let o = cli(&[
        "fit", "--input", s(&cap), "--h1", "5", "--h2", "5", "--lr", "1e7", "--epochs", "20", "--out", s(&model),
        "--report", s(&rep),
    ]);
    assert_eq!(o.code, EXIT_NUMERICAL, "{}", o.stderr);
    assert!(report(&rep)["error"].as_str().is_some());
}
