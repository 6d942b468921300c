use std::fs;

use qdlaser::sweep::{
    csv_path, manifest_path, preset, preset_names, round_sig, run_sweep, write_outputs, CsvTable, Manifest,
    SweepConfig, CSV_COLUMNS,
};

const SMALL: &str = r#"
name = "small"
sweep_axis = "eta"

[base]
delta1 = 4.0
delta2 = 6.0
kappa1 = 1.0
kappa2 = 1.0

[grid]
values = [1.0, 3.0]

[[scenarios]]
label = "warm"

[[scenarios]]
label = "bare"
phonons = false

[truncation]
start = 2
step = 1
max = 6
tolerance = 0.05
"#;

fn small() -> SweepConfig {
    SweepConfig::from_toml_str(SMALL).unwrap()
}

fn with(extra: &str) -> String {
    format!("{SMALL}\n{extra}")
}

fn config_error(text: &str) -> String {
    SweepConfig::from_toml_str(text).unwrap_err().to_string()
}

#[test]
fn rejects_bad_configs() {
    assert!(config_error(&SMALL.replace("delta1 = 4.0", "delta1 = 4.0\nbogus = 1")).contains("bogus"));
    assert!(config_error(&SMALL.replace("values = [1.0, 3.0]", "values = []")).contains("empty"));
    assert!(config_error(&SMALL.replace("values = [1.0, 3.0]", "values = [1.0, 3.0, 2.0]")).contains("monotonic"));
    assert!(config_error(&SMALL.replace("values = [1.0, 3.0]", "min = 1.0\nmax = 2.0\nn_points = 1")).contains("one-point"));
    assert!(config_error(&with("[[scenarios]]\nlabel = \"x\"\neta = 2.0")).contains("sweep axis"));
    assert!(config_error(&with("[[scenarios]]\nlabel = \"x\"\ndelta = 2.0\ndelta1 = 1.0")).contains("both delta"));
    assert!(config_error(&with("[[scenarios]]\nlabel = \"warm\"")).contains("duplicate"));
    assert!(config_error(&with("[[scenarios]]\nlabel = \"a b\"")).contains("label"));
    assert!(config_error(&SMALL.replace("name = \"small\"", "name = \"../x\"")).contains("name"));
    assert!(config_error(&with("[outputs]\nlinewidth = \"peak\"\nlinewidth_scenarios = [\"cold\"]")).contains("cold"));
    assert!(config_error(&SMALL.replace("kappa1 = 1.0", "kappa1 = -1.0")).contains("rates"));
    assert!(config_error(&SMALL.replace("max = 6", "max = 1")).contains("truncation"));
}

#[test]
fn presets_parse_and_round_trip() {
    let names = preset_names();
    assert!(names.len() >= 5);
    for name in names {
        for cfg in preset(name).unwrap() {
            cfg.validate().unwrap();
            let back = SweepConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }
    assert!(preset("fig9").is_err());
}

#[test]
fn outputs_follow_the_schema() {
    let cfg = small();
    let out = run_sweep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();

    for sc in &cfg.scenarios {
        let t = CsvTable::read(&csv_path(dir.path(), &cfg, &sc.label)).unwrap();
        assert!(t.comments[0].starts_with("# qdlaser "));
        assert!(t.comments.iter().any(|c| c.contains("g1") && c.contains("meV")));
        assert_eq!(t.header[0], "eta [g1]");
        assert_eq!(&t.header[1..], CSV_COLUMNS);
        assert_eq!(t.rows.len(), 2);
        for r in 0..t.rows.len() {
            // The witness is reproducible from the printed counts.
            for (rw, n, one) in [("rw1", "n1", "n1_one"), ("rw2", "n2", "n2_one")] {
                let (n, one) = (t.value(r, n).unwrap(), t.value(r, one).unwrap());
                assert_eq!(round_sig((n - 2.0 * one) / (2.0 * one)), t.value(r, rw).unwrap());
            }
            assert_eq!(t.value(r, "N1"), None);
            assert_eq!(t.rows[r][t.column("converged").unwrap()], "true");
        }
    }

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(dir.path(), &cfg)).unwrap()).unwrap();
    assert_eq!(manifest.points.len(), 4);
    assert_eq!(manifest.unconverged, 0);
    assert_eq!(manifest.config, cfg);
    for sc in &cfg.scenarios {
        for i in 0..2 {
            assert!(manifest.points.iter().any(|p| p.scenario == sc.label && p.index == i));
        }
    }
}

#[test]
fn single_point_grid_gives_one_row() {
    let cfg = SweepConfig::from_toml_str(&SMALL.replace("values = [1.0, 3.0]", "min = 2.0\nmax = 2.0\nn_points = 1")).unwrap();
    let out = run_sweep(&cfg).unwrap();
    assert!(out.scenarios.iter().all(|s| s.points.len() == 1));
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(&run_sweep(&cfg).unwrap(), a.path()).unwrap();
    write_outputs(&run_sweep(&cfg).unwrap(), b.path()).unwrap();
    for sc in &cfg.scenarios {
        let x = fs::read(csv_path(a.path(), &cfg, &sc.label)).unwrap();
        let y = fs::read(csv_path(b.path(), &cfg, &sc.label)).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn uncoupled_cold_bath_matches_phonon_free() {
    let text = SMALL
        .replace("kappa2 = 1.0", "kappa2 = 1.0\ntemperature_k = 0.0")
        .replace("[grid]", "[bath]\nalpha_p = 0.0\n\n[grid]");
    let out = run_sweep(&SweepConfig::from_toml_str(&text).unwrap()).unwrap();
    let warm = out.scenario("warm").unwrap();
    let bare = out.scenario("bare").unwrap();
    for (p, q) in warm.points.iter().zip(&bare.points) {
        let (a, b) = (p.stats.as_ref().unwrap(), q.stats.as_ref().unwrap());
        for k in 0..2 {
            assert!((a.n[k] - b.n[k]).abs() < 1e-9);
            assert!((p.witness.as_ref().unwrap().rw[k].unwrap() - q.witness.as_ref().unwrap().rw[k].unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn dark_cavity_converges_at_first_rung() {
    let text = SMALL.replace("values = [1.0, 3.0]", "values = [0.0]");
    let out = run_sweep(&SweepConfig::from_toml_str(&text).unwrap()).unwrap();
    for sc in &out.scenarios {
        let p = &sc.points[0];
        assert!(p.converged);
        assert_eq!(p.n_max, Some([2, 2]));
        assert_eq!(p.stats.as_ref().unwrap().n, [0.0, 0.0]);
        assert_eq!(p.witness.as_ref().unwrap().rw, [None, None]);
    }
}

#[test]
fn capped_truncation_is_flagged() {
    let text = SMALL.replace("values = [1.0, 3.0]", "values = [20.0]").replace("max = 6", "max = 2");
    let out = run_sweep(&SweepConfig::from_toml_str(&text).unwrap()).unwrap();
    assert_eq!(out.unconverged(), 2);
    let p = &out.scenario("warm").unwrap().points[0];
    assert!(!p.converged && p.n_max == Some([2, 2]) && p.error.is_none());
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let t = CsvTable::read(&csv_path(dir.path(), &out.config, "warm")).unwrap();
    assert_eq!(t.rows[0][t.column("converged").unwrap()], "false");
}

#[test]
fn single_mode_scenarios_keep_mode_two_minimal() {
    let text = with("[[scenarios]]\nlabel = \"single\"\ng2 = 0.0");
    let out = run_sweep(&SweepConfig::from_toml_str(&text).unwrap()).unwrap();
    for p in &out.scenario("single").unwrap().points {
        assert_eq!(p.n_max.unwrap()[1], 1);
        assert!(p.stats.as_ref().unwrap().n[1] < 1e-30);
        assert_eq!(p.witness.as_ref().unwrap().rw[1], None);
    }
}
