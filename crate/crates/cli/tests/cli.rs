use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn varfrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varfrac")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const APPLY: &str = "dim = 1\ndomain = [-4.0, 4.0]\nsizes = [31, 63, 127]\norder = \"alpha1\"\n";

/// Every data cell is either empty or in scientific notation with at least 6 significant digits.
fn check_scientific(csv: &str) {
    for line in csv.lines().skip(1) {
        for cell in line.split(',') {
            if cell.is_empty() || cell.parse::<i64>().is_ok() {
                continue;
            }
            let (mant, exp) = cell.split_once('e').unwrap_or_else(|| panic!("not scientific: {cell}"));
            exp.parse::<i32>().unwrap();
            let digits = mant.chars().filter(char::is_ascii_digit).count();
            assert!(digits >= 6, "{cell}");
        }
    }
}

#[test]
fn apply_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", APPLY);
    let out = dir.path().join("out");
    let o = varfrac(&["apply-conv", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("apply_convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "h,E_inf,order");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(','));
    let order: f64 = lines[3].rsplit(',').next().unwrap().parse().unwrap();
    assert!((order - 2.0).abs() < 0.05, "{order}");
    check_scientific(&csv);
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", APPLY);
    let mut seen = Vec::new();
    for run in ["one", "two"] {
        let out = dir.path().join(run);
        let o = varfrac(&["apply-conv", "--config", &cfg, "--out", out.to_str().unwrap(), "--rank", "5"]);
        assert_eq!(code(&o), 0);
        seen.push(fs::read(out.join("apply_convergence.csv")).unwrap());
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn direct_and_fast_agree_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", APPLY);
    let mut tables = Vec::new();
    for mode in ["direct", "fast"] {
        let out = dir.path().join(mode);
        let o = varfrac(&["apply-conv", "--config", &cfg, "--out", out.to_str().unwrap(), "--mode", mode, "--threads", "1"]);
        assert_eq!(code(&o), 0);
        tables.push(fs::read_to_string(out.join("apply_convergence.csv")).unwrap());
    }
    let err = |t: &str| -> Vec<f64> { t.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect() };
    for (a, b) in err(&tables[0]).iter().zip(err(&tables[1])) {
        assert!((a - b).abs() <= 0.02 * a, "{a} {b}");
    }
}

#[test]
fn weights_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "w.toml", "dim = 1\n[weights]\nalphas = [2.0]\nextent = 3\n");
    let out = dir.path().join("w");
    let o = varfrac(&["weights", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("weights_alpha2.csv")).unwrap();
    assert!(csv.starts_with("n_1,value\n"));
    assert!(csv.contains("\n0,2.0000"));
    assert!(csv.contains("\n1,-1.0000"));
    check_scientific(&csv);
}

#[test]
fn evolve_writes_observers_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.toml",
        "dim = 2\nsizes = [7]\norder = \"1.5\"\n[evolve]\ninitial = \"zero\"\ndt = 0.1\nt_final = 0.3\nframe_every = 1\n",
    );
    let out = dir.path().join("e");
    let o = varfrac(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("evolve_n7.csv")).unwrap();
    assert!(csv.starts_with("step,time,"));
    assert_eq!(csv.lines().count(), 5);
    let frame = fs::read_to_string(out.join("evolve_frames/n7/step_000003.txt")).unwrap();
    assert_eq!(frame.lines().count(), 7);
    assert!(frame.split_whitespace().all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("dim.toml", "dim = 4\nsizes = [7]\n"),
        ("sizes.toml", "dim = 1\nsizes = [15, 7]\n"),
        ("order.toml", "dim = 1\nsizes = [7]\norder = \"no_such_preset\"\n"),
        ("field.toml", "dim = 1\nsizes = [7]\ncolour = 3\n"),
        ("kind.toml", "kind = \"bench\"\ndim = 1\nsizes = [7]\n"),
        ("syntax.toml", "dim = = 1\n"),
    ];
    for (name, body) in cases {
        let cfg = write(dir.path(), name, body);
        let o = varfrac(&["elliptic", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&varfrac(&["bench", "--config", missing.to_str().unwrap()])), 2);
    let cfg = write(dir.path(), "ok.toml", APPLY);
    assert_eq!(code(&varfrac(&["apply-conv", "--config", &cfg, "--mode", "slow"])), 2);
    assert_eq!(code(&varfrac(&["apply-conv", "--config", &cfg, "--quadrature", "1000"])), 2);
    assert_eq!(code(&varfrac(&["apply-conv", "--config", &cfg, "--rank", "0"])), 2);
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "dim = 1\nsizes = [63]\n[solver]\nmax_iter = 1\ntol = 1e-15\n[elliptic]\ncase = \"richardson\"\n",
    );
    let o = varfrac(&["elliptic", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
