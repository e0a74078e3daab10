use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mvspatial(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvspatial"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

const RUN: &str = r#"
seed = 5
output = "out"
[simulate]
scenario = "sec5-rho000-desk"
t = 2
[data]
path = "out/data.csv"
[prior]
[mcmc]
iterations = 200
burn_in = 100
thin = 2
"#;

#[test]
fn simulate_fit_and_predict_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), RUN).unwrap();

    let sim = mvspatial(dir.path(), &["simulate", "--config", "run.toml"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert_eq!(json(&sim.stdout)["command"], "simulate");

    // Blank two cells in every replicate so that predict has targets.
    let data = dir.path().join("out/data.csv");
    let text = fs::read_to_string(&data).unwrap();
    let blanked: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("s003,") && l.contains(",y1,") || l.starts_with("s007,") && l.contains(",y2,") {
                let cut = l.rfind(',').unwrap();
                format!("{},NA", &l[..cut])
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&data, blanked.join("\n")).unwrap();

    let fit = mvspatial(dir.path(), &["fit", "--config", "run.toml", "--threads", "2"]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let fit = json(&fit.stdout);
    assert_eq!(fit["family"], "nonseparable-mixture");
    assert_eq!(fit["draws"], 50);

    let pred = mvspatial(dir.path(), &["predict", "--config", "run.toml"]);
    assert!(pred.status.success(), "{}", String::from_utf8_lossy(&pred.stderr));
    assert_eq!(json(&pred.stdout)["targets"], 4);
    let rows = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    assert!(rows.contains("\ns003:y1:2,s003,y1,2,"));
    assert!(rows.contains("\ns007:y2:1,s007,y2,1,"));
}

#[test]
fn missing_prior_exits_with_code_two_and_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = RUN
        .replace("[prior]\n", "")
        .replace("path = \"out/data.csv\"", "scenario = \"sec5-rho000-desk\"");
    fs::write(dir.path().join("run.toml"), text).unwrap();
    let out = mvspatial(dir.path(), &["fit", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let err = json(&out.stderr);
    assert_eq!(err["error"]["exit_code"], 2);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("prior"));
}

#[test]
fn unreadable_data_exits_with_a_data_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.csv"),
        "site_id,x,y,replicate,component,value\na,0,0,1,u,zz\n",
    )
    .unwrap();
    fs::write(dir.path().join("run.toml"), RUN.replace("out/data.csv", "bad.csv")).unwrap();
    let out = mvspatial(dir.path(), &["fit", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(&out.stderr)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("line 2"));
}

#[test]
fn missing_config_flag_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvspatial(dir.path(), &["fit"]);
    assert_eq!(out.status.code(), Some(2));
}
