use std::fs;
use std::path::Path;

use mvspatial::config::{Command, RunConfig};
use mvspatial::error::Error;
use mvspatial::io::{read_chain_csv, read_json, ChainMetadata};
use mvspatial::workflow::{
    artifact_paths, cmd_compare, cmd_fit, cmd_predict, cmd_profile, cmd_simulate, cmd_test_separability, fit_family,
    load_data,
};

const BASE: &str = r#"
seed = 31
output = "out"
[data]
scenario = "sec6-dataset1-desk"
[prior]
[mcmc]
iterations = 300
burn_in = 150
thin = 3
[prediction]
draws_per_theta = 4
"#;

fn config(dir: &Path, text: &str) -> RunConfig {
    RunConfig::from_toml_str(text, dir).unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn every_command_writes_its_stamped_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}[simulate]\nscenario = \"sec5-rho010-desk\"\nt = 3\n[profile]\npoints = 5\n[compare]\nfamilies = [\"independent\", \"separable\"]\n");
    let cfg = config(dir.path(), &text);
    let out = cfg.output_dir();
    cmd_simulate(&cfg, false).unwrap();
    cmd_fit(&cfg, false).unwrap();
    let report = cmd_predict(&cfg, false).unwrap();
    assert_eq!(report["targets"], 3 * 3 * 10);
    let cover = report["coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cover));
    cmd_profile(&cfg, false).unwrap();
    cmd_compare(&cfg, false).unwrap();

    let stamp = format!("# config_sha256={} seed=31", cfg.sha256);
    for cmd in [
        Command::Simulate,
        Command::Fit,
        Command::Predict,
        Command::Compare,
        Command::Profile,
    ] {
        for path in artifact_paths(&out, cmd) {
            assert!(path.exists(), "{} missing", path.display());
            if path.extension().is_some_and(|e| e == "csv") {
                assert_eq!(data_lines(&path)[0], stamp, "{}", path.display());
            }
        }
    }
    assert_eq!(data_lines(&out.join("profile.csv")).len(), 2 + 5);
    let compare = data_lines(&out.join("compare.csv"));
    assert_eq!(compare.len(), 2 + 2);
    assert!(compare[1].starts_with("family,average_is,is_rank,lpml,lpml_rank"));
    assert!(out.join("predictions_separable.csv").exists());
}

#[test]
fn chain_files_reload_to_the_fitted_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), BASE);
    cmd_fit(&cfg, false).unwrap();
    let out = cfg.output_dir();
    let meta: ChainMetadata = read_json(&out.join("chain_meta.json")).unwrap();
    let reread = read_chain_csv(&out.join("chain.csv"), &meta).unwrap();
    let loaded = load_data(&cfg).unwrap();
    let fitted = fit_family(
        cfg.model.family,
        cfg.prior().unwrap(),
        &loaded.training_data(),
        &cfg.mcmc.to_config(),
        31,
    )
    .unwrap();
    assert_eq!(reread, fitted);
    assert_eq!(meta.draws, 50);
    assert_eq!(meta.component_names, ["y1", "y2", "y3"]);
}

#[test]
fn missing_cells_in_a_csv_are_predicted() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("site_id,x,y,elev,replicate,component,value\n");
    for k in 0..12 {
        let (x, y) = ((k % 4) as f64 / 3.0, (k / 4) as f64 / 2.0);
        for t in 1..=3 {
            for (i, c) in ["a", "b"].iter().enumerate() {
                let v = if k == 5 && i == 1 {
                    "NA".to_string()
                } else {
                    format!("{}", (x + 2.0 * y + t as f64 * 0.1 + i as f64).sin())
                };
                csv.push_str(&format!("s{k},{x},{y},{},{t},{c},{v}\n", x * y));
            }
        }
    }
    fs::write(dir.path().join("obs.csv"), csv).unwrap();
    let text = BASE.replace("scenario = \"sec6-dataset1-desk\"", "path = \"obs.csv\"");
    let cfg = config(dir.path(), &text);
    let loaded = load_data(&cfg).unwrap();
    assert_eq!(loaded.training.len(), 11);
    cmd_fit(&cfg, false).unwrap();
    let report = cmd_predict(&cfg, false).unwrap();
    assert_eq!(report["targets"], 3);
    assert!(report.get("coverage").is_none());
    let rows = data_lines(&cfg.output_dir().join("predictions.csv"));
    assert!(rows[2].starts_with("s5:b:1,s5,b,1,"), "{}", rows[2]);
}

#[test]
fn separability_report_carries_the_decision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), BASE);
    let report = cmd_test_separability(&cfg, false).unwrap();
    let p = report["p_tilde"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(report["reject_separability"], p < report["threshold"].as_f64().unwrap());
    assert!(cfg.output_dir().join("separability.json").exists());
}

#[test]
fn fit_without_prior_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &BASE.replace("[prior]\n", ""));
    let err = cmd_fit(&cfg, false).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!cfg.output_dir().exists());
}

#[test]
fn predict_rejects_a_chain_from_other_components() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), BASE);
    cmd_fit(&cfg, false).unwrap();
    let other = BASE
        .replace("sec6-dataset1-desk", "sec5-rho000-desk")
        .replace("[prediction]", "[prediction]\nchain_dir = \"out\"");
    let other = config(dir.path(), &other.replace("output = \"out\"", "output = \"out2\""));
    let err = cmd_predict(&other, false).unwrap_err();
    assert!(err.to_string().contains("components"), "{err}");
}
