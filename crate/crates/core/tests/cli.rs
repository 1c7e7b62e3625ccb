use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use behest::evaluation::{EvalRecord, EvalReport, TInterval};
use behest::games::PayoffGame;

fn behest(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_behest"))
        .args(args)
        .current_dir(dir)
        .env_remove("BEHEST_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        matches!(out.status.code(), Some(0) | Some(3)),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup(dir: &Path) {
    ok(&behest(
        dir,
        &["gen-games", "--n-games", "4", "--out", "games", "--seed", "3"],
    ));
    ok(&behest(
        dir,
        &[
            "gen-scenarios",
            "--games",
            "games",
            "--v-stars",
            "10",
            "--k",
            "1",
            "--out",
            "scen",
            "--seed",
            "3",
        ],
    ));
    ok(&behest(
        dir,
        &[
            "simulate",
            "--games",
            "games",
            "--generator",
            "QRE-uniform",
            "--v-star",
            "10",
            "--n-participants",
            "20",
            "--out",
            "sim",
            "--seed",
            "3",
        ],
    ));
}

#[test]
fn default_games_are_symmetric_in_range() {
    let dir = tempfile::tempdir().unwrap();
    ok(&behest(dir.path(), &["gen-games", "--out", "g"]));
    let files: Vec<_> = fs::read_dir(dir.path().join("g")).unwrap().collect();
    assert_eq!(files.len(), 24);
    for f in files {
        let g: PayoffGame = serde_json::from_slice(&fs::read(f.unwrap().path()).unwrap()).unwrap();
        assert_eq!(g.n_actions(), 3);
        assert!(g.is_symmetric());
        assert!(g.u1().values().iter().all(|u| (0.0..=100.0).contains(u)));
    }
}

#[test]
fn single_game() {
    let dir = tempfile::tempdir().unwrap();
    ok(&behest(dir.path(), &["gen-games", "--n-games", "1", "--out", "g"]));
    assert_eq!(fs::read_dir(dir.path().join("g")).unwrap().count(), 1);
}

#[test]
fn env_seed_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    ok(&behest(
        dir.path(),
        &["gen-games", "--n-games", "2", "--out", "flag", "--seed", "9"],
    ));
    let env = Command::new(env!("CARGO_BIN_EXE_behest"))
        .args(["gen-games", "--n-games", "2", "--out", "env"])
        .env("BEHEST_SEED", "9")
        .current_dir(dir.path())
        .output()
        .unwrap();
    ok(&env);
    let read = |d: &str| fs::read(dir.path().join(d).join("g01.json")).unwrap();
    assert_eq!(read("flag"), read("env"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"n_games": 5, "seed": 1, "out": "from_config"}"#,
    )
    .unwrap();
    ok(&behest(
        dir.path(),
        &["--config", "c.json", "gen-games", "--n-games", "2"],
    ));
    assert_eq!(fs::read_dir(dir.path().join("from_config")).unwrap().count(), 2);
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"n_gamez": 5}"#).unwrap();
    let out = behest(dir.path(), &["--config", "c.json", "gen-games", "--out", "g"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    fs::write(
        dir.path().join("bad.csv"),
        "participant_id,game_id,action,opponent_action,order\np1,g01,0,,\np2,g01,x,,\n",
    )
    .unwrap();
    let out = behest(
        dir.path(),
        &["estimate", "--dataset", "bad.csv", "--scenarios", "scen", "--out", "e"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn empty_model_list_gives_header_only_summary() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    fs::write(dir.path().join("c.json"), r#"{"models": []}"#).unwrap();
    ok(&behest(
        dir.path(),
        &[
            "--config",
            "c.json",
            "estimate",
            "--dataset",
            "sim/dataset.csv",
            "--scenarios",
            "scen",
            "--out",
            "e",
        ],
    ));
    let summary = fs::read_to_string(dir.path().join("e/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
    assert!(summary.starts_with("model,v_star"));
}

#[test]
fn estimate_writes_one_result_per_model_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = behest(
        dir.path(),
        &[
            "estimate",
            "--dataset",
            "sim/dataset.csv",
            "--scenarios",
            "scen",
            "--models",
            "QRE,QRE-uniform",
            "--restarts",
            "1",
            "--out",
            "e",
            "--seed",
            "1",
        ],
    );
    ok(&out);
    for label in ["QRE", "QRE-uniform"] {
        assert_eq!(
            fs::read_dir(dir.path().join("e/estimates").join(label))
                .unwrap()
                .count(),
            1
        );
    }
    let summary = fs::read_to_string(dir.path().join("e/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = behest(
        dir.path(),
        &["estimate", "--dataset", "nope.csv", "--scenarios", "scen", "--out", "e"],
    );
    assert_eq!(out.status.code(), Some(1));
}

fn write_records(dir: &Path, cells: &[(&str, f64, f64, f64)]) {
    let records = cells
        .iter()
        .map(|&(model, lower, mean, upper)| EvalRecord {
            relative_error: Some(TInterval { lower, mean, upper }),
            ..EvalRecord::new(model, 10.0)
        })
        .collect();
    fs::create_dir_all(dir.join("res")).unwrap();
    fs::write(
        dir.join("res/estimate_records.json"),
        serde_json::to_vec(&EvalReport { records }).unwrap(),
    )
    .unwrap();
}

fn table2_marks(dir: &Path) -> Vec<String> {
    ok(&behest(dir, &["report", "--results", "res", "--out", "rep"]));
    let text = fs::read_to_string(dir.join("rep/table2.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect()
}

#[test]
fn single_cell_report_is_best() {
    let dir = tempfile::tempdir().unwrap();
    write_records(dir.path(), &[("QRE-QL4", 0.1, 0.2, 0.3)]);
    assert_eq!(table2_marks(dir.path()), ["best"]);
}

#[test]
fn overlapping_intervals_tie() {
    let dir = tempfile::tempdir().unwrap();
    write_records(
        dir.path(),
        &[("A", 0.1, 0.2, 0.3), ("B", 0.25, 0.35, 0.45), ("C", 0.5, 0.6, 0.7)],
    );
    assert_eq!(table2_marks(dir.path()), ["tied_best", "tied_best", ""]);
}

#[test]
fn report_without_results_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("res")).unwrap();
    let out = behest(dir.path(), &["report", "--results", "res"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_matches_library_fit() {
    use behest::data::PlayDataset;
    use behest::estimation::{fit_panel, EstimationResult, FitOptions};
    use behest::likelihood::Panel;
    use behest::models::ModelSpec;
    use behest::numeric::derive_seed;

    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    ok(&behest(
        dir.path(),
        &[
            "estimate",
            "--dataset",
            "sim/dataset.csv",
            "--scenarios",
            "scen",
            "--models",
            "QRE-uniform",
            "--restarts",
            "2",
            "--out",
            "e",
            "--seed",
            "5",
        ],
    ));
    let cli = EstimationResult::read_json(&dir.path().join("e/estimates/QRE-uniform/v10_s000.json")).unwrap();

    let d = PlayDataset::read_csv(&dir.path().join("sim/dataset.csv")).unwrap();
    let scenarios = behest::cli::load_scenarios(&dir.path().join("scen")).unwrap();
    let panel = Panel::new(&d, &scenarios[0].allocation_games).unwrap();
    let m: ModelSpec = "QRE-uniform".parse().unwrap();
    let lib = fit_panel(&panel, &m, &FitOptions::with_restarts(2), derive_seed(5, "estimate", 0)).unwrap();
    assert_eq!(cli.v_hat, lib.v_hat);
    assert_eq!(cli.loglik, lib.loglik);
}
