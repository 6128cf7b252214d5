use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn speclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

const SMALL: &str = r#""spectrum": {"a": 2.5, "b": 2.0, "k_max": 1e5},
    "kernel": {"family": "monomial", "m": 1, "n": 1},
    "fit_window": {"k_star_min": 10, "k_star_max": 1000}"#;

#[test]
fn loss_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{ {SMALL} }}"));
    let out = dir.path().join("out");
    let o = speclab(&["loss", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("t,k_star,loss,head,tail,tail_fraction\n"));
    assert_eq!(csv.lines().count(), 41);
    let s = summary(&out);
    let chi = &s["exponents"][0];
    assert_eq!(chi["name"], "chi");
    assert!(chi["theoretical"].is_number() && chi["fitted"].is_number());
    assert!(chi["r_squared"].is_number() && chi["window"].is_array());
    assert!(out.join("plot.svg").exists());
}

#[test]
fn no_plot_flag_skips_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{ {SMALL} }}"));
    let out = dir.path().join("out");
    let o = speclab(&["frontier", "--config", &cfg, "--out", out.to_str().unwrap(), "--no-plot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("results.csv").exists() && !out.join("plot.svg").exists());
}

#[test]
fn invalid_exponent_is_rejected_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{ {} }}", SMALL.replace("2.5", "0.5")));
    let o = speclab(&["loss", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("a > 1"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn empty_grid_and_unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{ {SMALL}, \"t_grid\": {{\"values\": []}} }}"));
    let o = speclab(&["loss", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t_grid"));

    let cfg = write_config(dir.path(), "d.json", &format!("{{ {SMALL}, \"kapa\": 1 }}"));
    let o = speclab(&["loss", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kapa"));
}

#[test]
fn subcommand_must_match_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{{ \"experiment\": \"prune\", {SMALL} }}"));
    let o = speclab(&["loss", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("prune"));
}

#[test]
fn quantize_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_config(dir.path(), "c.json", &format!("{{ {SMALL}, \"quantize\": {{\"sigma_sq\": 0, \"tau_sq\": 0}} }}"));
    let out = dir.path().join("out");
    let o = speclab(&[
        "quantize",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--sigma-sq",
        "1e-4",
        "--samples",
        "20",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["details"]["sigma_sq"], 1e-4);
    assert_eq!(s["details"]["n_samples"], 20);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("t,k_star,closed,mc_mean,mc_stderr\n"));
}

#[test]
fn prune_theta_grid_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!("{{ {SMALL}, \"prune\": {{\"t\": 1e4, \"retained_fraction\": [0.5]}}, \"t_grid\": {{\"min\": 1e2, \"max\": 1e6, \"points\": 9}} }}"),
    );
    let out = dir.path().join("out");
    let o = speclab(&["prune", "--config", &cfg, "--out", out.to_str().unwrap(), "--theta-grid", "0.01,0.5,2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let regimes: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(regimes, ["saturation", "power-law", "plateau"]);
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn fit_reads_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let mut text = String::from("x,y\n");
    for i in 1..=10 {
        let x = i as f64;
        text.push_str(&format!("{x},{}\n", 3.0 * x.powf(-0.75)));
    }
    std::fs::write(&data, text).unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(r#"{{ "fit": {{"input": "{}", "x": "x", "y": "y", "theoretical": -0.75}} }}"#, data.display()),
    );
    let out = dir.path().join("out");
    let o = speclab(&["fit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert!((s["exponents"][0]["fitted"].as_f64().unwrap() + 0.75).abs() < 1e-12);
}

#[test]
fn verify_single_config_and_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let base = format!(
        "{SMALL}, \"verify\": {{\"mc\": {{\"seeds\": 5, \"n_samples\": 20, \"k_max\": 100}}, \"t_points\": 12 INJECT}}"
    );
    let cfg = write_config(dir.path(), "ok.json", &format!("{{ {} }}", base.replace("INJECT", "")));
    let out = dir.path().join("ok");
    let o = speclab(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let s = summary(&out);
    assert_eq!(s["details"]["complementarity"].as_array().unwrap().len(), 1);
    assert_eq!(o.status.success(), s["passed"].as_bool().unwrap());

    let cfg = write_config(
        dir.path(),
        "bad.json",
        &format!("{{ {} }}", base.replace("INJECT", ", \"inject_broken_kernel\": true")),
    );
    let out = dir.path().join("bad");
    let o = speclab(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let s = summary(&out);
    let failed: Vec<&str> =
        s["details"]["failed_checks"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(failed.iter().any(|f| f.starts_with("negative-control") && f.ends_with("loss_monotone")), "{failed:?}");
}
