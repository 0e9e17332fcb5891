use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn torstab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torstab"))
        .args(args)
        .current_dir(dir)
        .env("TORSTAB_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
}

#[test]
fn dioph_reports_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let o = torstab(
        &["dioph", "--omega", "1,1.618033988749895", "--tau", "1", "--K", "20"],
        dir.path(),
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(value(&out, "gamma_K"), "1");
    assert_eq!(value(&out, "witness"), "1 0");
}

#[test]
fn predict_prints_schedule_bounds_and_times() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "C_1 = 2\nC_6 = 0.5\n").unwrap();
    let args = [
        "predict",
        "--rho",
        "1e-3",
        "--ell",
        "6.5",
        "--tau",
        "1",
        "--gamma",
        "1",
        "--constants",
        "c.txt",
    ];
    let o = torstab(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(value(&out, "schedule.a"), "0.5");
    assert_eq!(value(&out, "schedule.b"), "25.5");
    assert_eq!(value(&out, "bound.dominant"), "smoothing_gap");
    assert_eq!(value(&out, "stability_exponent"), "3.75");
    let t: f64 = value(&out, "t_theorem").parse().unwrap();
    let expected = 2.0 / (1e-3f64.powf(3.75) * 1e-3f64.ln().abs().powf(5.5));
    assert!((t - expected).abs() <= 1e-12 * expected);
}

#[test]
fn nf_writes_series_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("h.series"),
        "# d = 2\n0 0 | 1 0 | 1 0\n0 0 | 0 1 | 1.618033988749895 0\n1 -1 | 1 1 | 5e-7 0\n-1 1 | 1 1 | 5e-7 0\n",
    )
    .unwrap();
    let args = [
        "nf",
        "--ham",
        "h.series",
        "--omega",
        "1,1.618033988749895",
        "--K",
        "5",
        "--sigma",
        "1.2",
        "--rho",
        "1",
        "--xi",
        "2",
        "--out-dir",
        "nf",
    ];
    let o = torstab(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(value(&out, "certificate"), "CERTIFIED");
    let c: f64 = value(&out, "contraction").parse().unwrap();
    assert!(c <= (-1.0f64).exp());
    for f in ["h.series", "f_star.series", "chi_1.series"] {
        assert!(dir.path().join("nf").join(f).exists(), "{f}");
    }
}

#[test]
fn smooth_verify_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "smooth-verify",
        "--ell",
        "6.5",
        "--p",
        "0",
        "--family",
        "lacunary",
        "--out",
        "s.csv",
    ];
    let o = torstab(&args, dir.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s,error,norm_ratio"));
    assert_eq!(lines.count(), 8);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pass = true"));
}

#[test]
fn sweep_fit_and_plots_chain() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "rho_list = 0.1, 0.07, 0.05, 0.035\nn_samples = 2\nt_cap = 5\noutput_dir = out\n",
    )
    .unwrap();
    let o = torstab(&["sweep", "--config", "run.cfg"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("out/sweep.csv");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 6);

    let o = torstab(
        &["fit", "--csv", "out/sweep.csv", "--model", "power-with-log"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: f64 = value(&stdout(&o), "p").parse().unwrap();
    assert!((p - 3.75).abs() < 1e-6);

    let o = torstab(&["plots", "--csv", "out/sweep.csv"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("out/plot.gp").exists());
}

#[test]
fn escape_writes_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("h.series"),
        "# d = 2\n0 0 | 1 0 | 1 0\n0 0 | 0 1 | 1.618033988749895 0\n",
    )
    .unwrap();
    let args = [
        "escape", "--ham", "h.series", "--rho", "0.1", "--tcap", "2", "--n", "5", "--out", "e.csv",
    ];
    let o = torstab(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("1")));
}

#[test]
fn exit_codes_separate_bad_input_from_numerical_faults() {
    let dir = tempfile::tempdir().unwrap();
    let o = torstab(&["dioph", "--omega", "1,1.6", "--tau", "1", "--K", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = torstab(&["fit", "--csv", "missing.csv", "--model", "pure-power"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = torstab(&["bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    // A stiff kick with a huge step defeats the fixed-point iteration.
    fs::write(
        dir.path().join("stiff.series"),
        "# d = 2\n1 0 | 2 0 | 0 -500\n-1 0 | 2 0 | 0 500\n",
    )
    .unwrap();
    let args = [
        "escape",
        "--ham",
        "stiff.series",
        "--rho",
        "0.5",
        "--tcap",
        "10",
        "--n",
        "2",
        "--dt",
        "1",
    ];
    let o = torstab(&args, dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
