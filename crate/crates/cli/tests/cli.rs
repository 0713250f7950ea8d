//! Black-box tests of the `tempora` binary: exit codes, artifact schemas
//! and end-to-end runs driven entirely through the filesystem.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempora_cli::config::RunConfig;
use tempora_cli::pipeline::{engineer, load_panel, resolve_split};
use tempora_cli::sweep::validation_series;
use tempora_core::gbdt::Booster;
use tempora_core::metrics::summarize;
use tempora_core::rng::sub_seed;
use tempora_core::split::make_split;

/// Small synthetic run shared by most tests: one boosted model, two seeds.
const BASE_CONFIG: &str = r#"
seed = 9

[data.synthetic]
n_eras = 40
stocks_per_era = [40, 60]
n_features = 6
seed = 5

[split.spec]
train = { start = 1, end = 20 }
gap1 = 2
validation = { start = 23, end = 30 }
gap2 = 2
test = { start = 33, end = 40 }

[[model]]
name = "trees"

[model.boost]
n_estimators = 8
num_leaves = 7
max_depth = 4
min_data_in_leaf = 5

[ensemble]
n_seeds = 2
"#;

fn tempora(subcommand: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempora"))
        .arg(subcommand)
        .args(["--config".as_ref(), config.as_os_str()])
        .args(["--out".as_ref(), out.as_os_str()])
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn missing_config_file_exits_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let output = tempora("backtest", &dir.path().join("absent.toml"), dir.path());
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).starts_with("error:"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("bogus = 1\n{BASE_CONFIG}"));
    let output = tempora("backtest", &config, dir.path());
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("bogus"));
}

#[test]
fn missing_data_file_exits_with_the_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[data]\npath = \"no_such_panel.csv\"\n\n[split]\npreset = \"cv1\"\n",
    );
    let output = tempora("backtest", &config, dir.path());
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("no_such_panel.csv"));
}

#[test]
fn generate_needs_a_synthetic_section() {
    let dir = tempfile::tempdir().unwrap();
    // An existing but never-read data file: generate fails before loading it.
    let panel = dir.path().join("panel.csv");
    std::fs::write(&panel, "era,id,f_x,t_main\n").unwrap();
    let config = write_config(
        dir.path(),
        &format!("[data]\npath = {panel:?}\n\n[split]\npreset = \"cv1\"\n"),
    );
    let output = tempora("generate", &config, dir.path());
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
}

#[test]
fn report_without_a_backtest_exits_with_the_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), BASE_CONFIG);
    let output = tempora("report", &config, dir.path());
    assert_eq!(output.status.code(), Some(3), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("backtest"));
}

#[test]
fn metric_averaging_mode_cannot_drive_a_backtest() {
    let dir = tempfile::tempdir().unwrap();
    let config =
        write_config(dir.path(), &BASE_CONFIG.replace("n_seeds = 2", "n_seeds = 2\nmode = \"over_models\""));
    let output = tempora("backtest", &config, dir.path());
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
}

#[test]
fn generate_train_backtest_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gen_out = dir.path().join("gen");
    let run_out = dir.path().join("run");

    let gen_config = write_config(dir.path(), BASE_CONFIG);
    let output = tempora("generate", &gen_config, &gen_out);
    assert!(output.status.success(), "generate: {}", stderr_of(&output));
    let panel = gen_out.join("panel.csv");
    assert!(panel.exists());

    // Re-point the same run at the materialized CSV.
    let csv_config = write_config(
        &gen_out,
        &BASE_CONFIG.replace(
            "[data.synthetic]\nn_eras = 40\nstocks_per_era = [40, 60]\nn_features = 6\nseed = 5",
            &format!("[data]\npath = {panel:?}"),
        ),
    );

    let output = tempora("train", &csv_config, &run_out);
    assert!(output.status.success(), "train: {}", stderr_of(&output));
    for member in ["trees_main_s0.txt", "trees_main_s1.txt"] {
        assert!(run_out.join("models").join(member).exists(), "missing {member}");
    }

    let output = tempora("backtest", &csv_config, &run_out);
    assert!(output.status.success(), "backtest: {}", stderr_of(&output));

    let predictions = read_lines(&run_out.join("predictions.csv"));
    assert_eq!(predictions[0], "era,id,score");
    assert!(predictions.len() > 1);

    let corr = read_lines(&run_out.join("corr_regime.csv"));
    assert_eq!(corr[0], "era,corr,nmi,nrvix,regime");
    let eras: Vec<u32> =
        corr[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(eras, (33..=40).collect::<Vec<_>>());

    let summary = read_lines(&run_out.join("summary.csv"));
    assert_eq!(summary[0], "scope,mean,volatility,max_drawdown,sharpe,calmar");
    assert!(summary[1].starts_with("all,"));

    let selection = read_lines(&run_out.join("selection.csv"));
    assert_eq!(selection[0], "era,chosen_method,weight_trees,combined_corr");
    assert_eq!(selection.len(), corr.len());

    let output = tempora("report", &csv_config, &run_out);
    assert!(output.status.success(), "report: {}", stderr_of(&output));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("backtest summary"), "stdout: {stdout}");
    assert!(stdout.contains("selection over"), "stdout: {stdout}");
}

#[test]
fn the_seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    // Feature sampling makes the members actually consume their seeds.
    let config = write_config(
        dir.path(),
        &BASE_CONFIG.replace("min_data_in_leaf = 5", "min_data_in_leaf = 5\nfeature_fraction = 0.5"),
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for (out, seed) in [(&out_a, "1"), (&out_b, "2")] {
        let output = Command::new(env!("CARGO_BIN_EXE_tempora"))
            .args(["backtest", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(output.status.success(), "backtest: {}", stderr_of(&output));
    }

    let a = std::fs::read(out_a.join("predictions.csv")).unwrap();
    let b = std::fs::read(out_b.join("predictions.csv")).unwrap();
    assert_ne!(a, b, "different master seeds must train different members");
}

#[test]
fn sweep_ranks_cells_by_validation_sharpe_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(
        dir.path(),
        &format!(
            "{BASE_CONFIG}\n[sweep]\nn_estimators = [50, 60]\nlearning_rate = [0.05, 0.1]\n"
        ),
    );

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = tempora("sweep", &config_path, out);
        assert!(output.status.success(), "sweep: {}", stderr_of(&output));
    }
    let bytes_a = std::fs::read(out_a.join("sweep.csv")).unwrap();
    let bytes_b = std::fs::read(out_b.join("sweep.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b, "sweep results must not depend on the run");

    let lines = read_lines(&out_a.join("sweep.csv"));
    assert_eq!(lines[0], "cell,n_estimators,learning_rate,mean,volatility,sharpe");
    assert_eq!(lines.len(), 5, "full 2x2 grid");

    let rows: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    let mut cells: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    cells.sort_unstable();
    assert_eq!(cells, vec![0, 1, 2, 3]);
    let sharpes: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(sharpes.windows(2).all(|w| w[0] >= w[1]), "rows must be ranked: {sharpes:?}");

    // Retrain the winning cell directly and expect the exact ranked metrics.
    let config = RunConfig::load(&config_path).unwrap();
    let mut cfg = config.models[0].boost.clone();
    cfg.n_estimators = rows[0][1].parse().unwrap();
    cfg.learning_rate = rows[0][2].parse().unwrap();
    cfg.seed = sub_seed(config.seed, "sweep-cell", rows[0][0].parse().unwrap());

    let panel = load_panel(&config).unwrap();
    let engineered = engineer(&config, &panel).unwrap();
    let spec = resolve_split(&config, &engineered).unwrap();
    let (train, validation, _) = make_split(&engineered, &spec).unwrap();
    let booster = Booster::train(&train, "main", &cfg, Some(&validation)).unwrap();
    let series = validation_series(&booster, &validation, "main").unwrap();
    let summary = summarize(&series).unwrap();

    assert_eq!(rows[0][3].parse::<f64>().unwrap(), summary.mean);
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), summary.volatility);
    assert_eq!(rows[0][5].parse::<f64>().unwrap(), summary.sharpe);
}
