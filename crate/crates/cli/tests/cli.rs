//! End-to-end runs of the `idla` binary's entry point: exit codes, file
//! outputs, manifest reproducibility, and config handling.

use std::fs;
use std::path::PathBuf;

use idla_cli::run_from;

fn idla(args: &[&str]) -> i32 {
    run_from(std::iter::once("idla").chain(args.iter().copied()))
}

/// Fresh per-test scratch directory under the system temp dir.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("idla-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(dir: &PathBuf, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const TF_K1: &str = r#"{"K":1,"c1":0.25,"c2":0.75,"y0":0.5,"modes":[{"k":1,"re_amp":1.0,"im_amp":0.0,"profile":"bump"}]}"#;

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(idla(&["--help"]), 0);
    assert_eq!(idla(&["--version"]), 0);
    assert_eq!(idla(&["grow", "--help"]), 0);
}

#[test]
fn parse_and_validation_failures_exit_one() {
    let dir = scratch("config-errors");
    let out = path_str(&dir, "x.csv");
    // Unknown flag.
    assert_eq!(idla(&["grow", "--bogus", "--seed", "1"]), 1);
    // Stochastic command without a seed.
    assert_eq!(idla(&["grow", "--n", "8", "--t", "8", "--out", &out]), 1);
    // Impossible geometry.
    assert_eq!(idla(&["grow", "--n", "0", "--seed", "1", "--out", &out]), 1);
    // Unknown enumerated values.
    assert_eq!(idla(&["grow", "--n", "8", "--seed", "1", "--floor", "sticky", "--out", &out]), 1);
    assert_eq!(idla(&["ensemble", "--statistic", "mean", "--seed", "1", "--out", &out]), 1);
    assert_eq!(idla(&["sandpile", "--mu", "delta:9:11", "--schedule", "spiral", "--out", &out]), 1);
    // Poisson horizon without the Poisson clock.
    assert_eq!(idla(&["grow", "--n", "8", "--seed", "1", "--t-max", "10", "--out", &out]), 1);
    // Shape count is part of the schema.
    let one_disk = r#"[{"type":"disk","cx":0,"cy":0,"r":1}]"#;
    assert_eq!(idla(&["smash", "--shapes", one_disk, "--n", "20", "--out", &out]), 1);
    // Stochastic smash needs a seed.
    let two = r#"[{"type":"disk","cx":0,"cy":0,"r":0.5},{"type":"disk","cx":0.2,"cy":0,"r":0.5}]"#;
    assert_eq!(idla(&["smash", "--shapes", two, "--n", "20", "--stochastic", "--out", &out]), 1);
    // Test function whose mode list contradicts its K.
    let bad_tf = r#"{"K":2,"c1":0.25,"c2":0.75,"y0":0.5,"modes":[{"k":1,"re_amp":1.0,"im_amp":0.0,"profile":"bump"}]}"#;
    assert_eq!(
        idla(&["ensemble", "--n", "8", "--runs", "4", "--testfn", bad_tf, "--seed", "1", "--out", &out]),
        1
    );
    // --check on a command without a built-in check.
    assert_eq!(idla(&["grow", "--n", "8", "--t", "8", "--seed", "1", "--check", "--out", &out]), 1);
}

#[test]
fn runtime_caps_exit_two() {
    let dir = scratch("caps");
    let out = path_str(&dir, "x.csv");
    // A one-operation budget cannot carry 64 particles to the frontier.
    assert_eq!(
        idla(&["grow", "--n", "8", "--t", "64", "--step-cap", "1", "--seed", "1", "--out", &out]),
        2
    );
    // Three passes cannot spread a 1000-unit point mass.
    assert_eq!(
        idla(&["sandpile", "--mu", "delta:1000:51", "--max-passes", "3", "--out", &path_str(&dir, "p")]),
        2
    );
}

#[test]
fn outputs_and_manifests_reproduce_bit_for_bit() {
    let dir_a = scratch("repro-a");
    let dir_b = scratch("repro-b");
    for dir in [&dir_a, &dir_b] {
        let code = idla(&[
            "grow",
            "--n",
            "16",
            "--t",
            "128",
            "--seed",
            "42",
            "--out",
            &path_str(dir, "cluster.csv"),
            "--manifest",
            &path_str(dir, "manifest.json"),
        ]);
        assert_eq!(code, 0);
    }
    let bytes_a = fs::read(dir_a.join("cluster.csv")).unwrap();
    let bytes_b = fs::read(dir_b.join("cluster.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b);

    let manifest_a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir_a.join("manifest.json")).unwrap()).unwrap();
    let manifest_b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir_b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest_a["master_seed"], 42);
    assert_eq!(manifest_a["rng_algorithm"], "chacha8");
    assert!(manifest_a["module_versions"]["idla-core"].is_string());
    let hashes = |m: &serde_json::Value| -> Vec<String> {
        m["outputs"].as_object().unwrap().values().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    assert_eq!(hashes(&manifest_a), hashes(&manifest_b));
    assert_eq!(hashes(&manifest_a).len(), 1);
    // 64 hex digits per hash.
    assert!(hashes(&manifest_a)[0].len() == 64);
}

#[test]
fn config_file_overrides_defaults_and_rejects_unknown_keys() {
    let dir = scratch("config");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"grow": {"n": 12, "t": 30}}"#).unwrap();
    let out = path_str(&dir, "cluster.csv");
    let code = idla(&["grow", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", &out]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(dir.join("cluster.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 30, "config t=30 should set the particle count");
    let max_col = rows
        .iter()
        .map(|r| r.split(',').next().unwrap().parse::<i64>().unwrap())
        .max()
        .unwrap();
    assert!(max_col <= 12, "config n=12 should bound the columns, saw {max_col}");

    // A flag still beats the file.
    let code = idla(&[
        "grow", "--config", cfg.to_str().unwrap(), "--t", "7", "--seed", "5", "--out", &out,
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(dir.join("cluster.csv")).unwrap();
    assert_eq!(text.lines().count(), 8);

    // Unknown keys and wrong types are schema violations.
    fs::write(&cfg, r#"{"grow": {"zz": 1}}"#).unwrap();
    assert_eq!(idla(&["grow", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", &out]), 1);
    fs::write(&cfg, r#"{"grow": {"n": "twelve"}}"#).unwrap();
    assert_eq!(idla(&["grow", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", &out]), 1);
}

#[test]
fn sandpile_writes_mass_odometer_and_domain() {
    let dir = scratch("sandpile");
    let prefix = path_str(&dir, "pile");
    let code = idla(&["sandpile", "--mu", "delta:500:41", "--out", &prefix, "--check"]);
    assert_eq!(code, 0);

    let nu = fs::read_to_string(dir.join("pile_nu.csv")).unwrap();
    let total: f64 =
        nu.lines().flat_map(|l| l.split(',')).map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((total - 500.0).abs() < 1e-9, "mass not conserved: {total}");
    let max = nu
        .lines()
        .flat_map(|l| l.split(','))
        .map(|v| v.parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(max <= 1.0 + 1e-9, "stabilized mass exceeds 1: {max}");

    let odometer = fs::read_to_string(dir.join("pile_odometer.csv")).unwrap();
    assert_eq!(odometer.lines().count(), 41);

    let pgm = fs::read_to_string(dir.join("pile_domain.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n41 41\n255\n"));
}

#[test]
fn sandpile_accepts_a_csv_mass_grid() {
    let dir = scratch("sandpile-csv");
    // 5x5 with 30 units at the center: spreads to the frame.
    let mut rows = vec![vec![0.0f64; 5]; 5];
    rows[2][2] = 30.0;
    let csv: String =
        rows.iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n").collect();
    let mu = dir.join("mu.csv");
    fs::write(&mu, csv).unwrap();
    let prefix = path_str(&dir, "p");
    assert_eq!(idla(&["sandpile", "--mu", mu.to_str().unwrap(), "--out", &prefix]), 0);
    let nu = fs::read_to_string(dir.join("p_nu.csv")).unwrap();
    let total: f64 =
        nu.lines().flat_map(|l| l.split(',')).map(|v| v.parse::<f64>().unwrap()).sum();
    // The absorbing frame holds whatever crossed it; nothing is lost.
    assert!((total - 30.0).abs() < 1e-9);
}

#[test]
fn smash_emits_domains_for_both_models() {
    let dir = scratch("smash");
    let shapes = r#"[{"type":"disk","cx":-0.3,"cy":0.0,"r":0.564},{"type":"disk","cx":0.3,"cy":0.0,"r":0.564}]"#;
    let prefix = path_str(&dir, "det");
    assert_eq!(idla(&["smash", "--shapes", shapes, "--n", "40", "--out", &prefix]), 0);
    for suffix in ["det_nu.csv", "det_odometer.csv", "det_domain.pgm", "det_domain.csv"] {
        assert!(dir.join(suffix).exists(), "missing {suffix}");
    }
    let domain = fs::read_to_string(dir.join("det_domain.csv")).unwrap();
    assert!(domain.lines().count() > 100, "two disks at n=40 should fill thousands of cells");
    assert!(domain.starts_with("x,y,wx,wy\n"));

    let prefix = path_str(&dir, "sto");
    assert_eq!(
        idla(&["smash", "--shapes", shapes, "--n", "40", "--stochastic", "--seed", "3", "--out", &prefix]),
        0
    );
    assert!(dir.join("sto_domain.pgm").exists());
    assert!(dir.join("sto_domain.csv").exists());
    assert!(!dir.join("sto_nu.csv").exists(), "the particle model has no mass field");
    let pgm = fs::read_to_string(dir.join("sto_domain.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n"));
}

#[test]
fn single_column_symdiff_is_empty() {
    let dir = scratch("symdiff-column");
    let prefix = path_str(&dir, "sd");
    assert_eq!(idla(&["symdiff", "--n", "1", "--y0", "2.0", "--seed", "9", "--out", &prefix]), 0);
    let csv = fs::read_to_string(dir.join("sd.csv")).unwrap();
    assert_eq!(csv, "n1,n2,class\n", "a single column grows exactly on schedule");
    let ppm = fs::read_to_string(dir.join("sd.ppm")).unwrap();
    assert!(ppm.starts_with("P3\n"));
}

#[test]
fn full_height_symdiff_balances_early_and_late_counts() {
    let dir = scratch("symdiff-balance");
    for seed in 1..=10u64 {
        let prefix = path_str(&dir, &format!("sd{seed}"));
        let code =
            idla(&["symdiff", "--n", "500", "--y0", "1.0", "--seed", &seed.to_string(), "--out", &prefix]);
        assert_eq!(code, 0);
        let csv = fs::read_to_string(dir.join(format!("sd{seed}.csv"))).unwrap();
        let early = csv.lines().filter(|l| l.ends_with(",early")).count() as f64;
        let late = csv.lines().filter(|l| l.ends_with(",late")).count() as f64;
        assert!(early > 0.0 && late > 0.0, "seed {seed}: degenerate difference");
        let ratio = early.max(late) / early.min(late);
        assert!(ratio <= 1.2, "seed {seed}: early {early} vs late {late} beyond 20%");
    }
}

#[test]
fn ensemble_summary_pins_the_field_order() {
    let dir = scratch("ensemble");
    let out = path_str(&dir, "summary.json");
    let code = idla(&[
        "ensemble", "--n", "16", "--runs", "40", "--statistic", "discrepancy", "--testfn", TF_K1,
        "--seed", "7", "--check", "--out", &out,
    ]);
    assert_eq!(code, 0, "the built-in check should pass for this seed");
    let text = fs::read_to_string(dir.join("summary.json")).unwrap();
    let fields = [
        "\"runs\"",
        "\"sample_mean\"",
        "\"sample_var\"",
        "\"skewness\"",
        "\"excess_kurtosis\"",
        "\"ks_stat\"",
        "\"ks_critical_1pct\"",
        "\"theoretical_var\"",
        "\"var_ratio\"",
        "\"seed\"",
        "\"config_echo\"",
        "\"errors\"",
    ];
    let mut last = 0;
    for f in fields {
        let at = text.find(f).unwrap_or_else(|| panic!("summary.json lacks {f}"));
        assert!(at > last, "{f} out of order");
        last = at;
    }
    let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(summary["runs"], 40);
    assert_eq!(summary["config_echo"]["n"], 16);
}

#[test]
fn lateness_and_measure_tables_parse() {
    let dir = scratch("tables");
    let out = path_str(&dir, "lateness.csv");
    assert_eq!(idla(&["lateness", "--n", "12", "--t-max", "100", "--seed", "4", "--out", &out]), 0);
    let text = fs::read_to_string(dir.join("lateness.csv")).unwrap();
    assert!(text.starts_with("n1,n2,arrival_time,lateness\n"));
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4);
        cols[2].parse::<f64>().unwrap();
        cols[3].parse::<f64>().unwrap();
    }

    let out = path_str(&dir, "hm.csv");
    assert_eq!(
        idla(&["harmonic-measure", "--n", "16", "--t", "64", "--samples", "5000", "--seed", "4", "--out", &out]),
        0
    );
    let text = fs::read_to_string(dir.join("hm.csv")).unwrap();
    assert!(text.starts_with("n1,n2,p_hat\n"));
    let total: f64 =
        text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12, "frequencies must sum to 1, got {total}");
}

#[test]
fn propp_output_is_deterministic_for_a_seed() {
    let dir = scratch("propp");
    let out_a = path_str(&dir, "a.csv");
    let out_b = path_str(&dir, "b.csv");
    assert_eq!(idla(&["propp", "--t", "200", "--seed", "13", "--out", &out_a]), 0);
    assert_eq!(idla(&["propp", "--t", "200", "--seed", "13", "--out", &out_b]), 0);
    let a = fs::read(dir.join("a.csv")).unwrap();
    let b = fs::read(dir.join("b.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("x,y,arrival_index\n"));
    assert_eq!(text.lines().count(), 201);
}
