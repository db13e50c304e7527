use std::path::PathBuf;
use std::process::{Command, Output};

fn dsfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsfilter"))
        .args(args)
        .output()
        .unwrap()
}

fn example(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn equiv_default_grid_passes() {
    let out = dsfilter(&[
        "equiv", "--n", "1..4", "--m", "1..2", "--steps", "10", "--trials", "50", "--seed", "7",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1 + 4 * 2);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",ok")));
}

#[test]
fn equiv_zero_tolerance_reports_violation() {
    let out = dsfilter(&[
        "equiv", "--n", "3", "--m", "2", "--trials", "3", "--tol", "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stream="));
}

#[test]
fn equiv_rejects_zero_dimension() {
    assert_eq!(dsfilter(&["equiv", "--n", "0..2"]).status.code(), Some(2));
    assert_eq!(dsfilter(&["equiv", "--m", "3..1"]).status.code(), Some(2));
}

#[test]
fn bench_flops_all_positive() {
    let out = dsfilter(&[
        "bench", "--metric", "flops", "--n-max", "20", "--m-max", "20",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("n,m=1,m=2,"));
    let values: Vec<f64> = lines
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(values.len(), 400);
    assert!(values.iter().all(|&v| v > 0.0));
}

#[test]
fn bench_memory_changes_sign() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.csv");
    let out = dsfilter(&[
        "bench",
        "--metric",
        "memory",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(path).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    assert!(values.iter().any(|&v| v > 0.0) && values.iter().any(|&v| v < 0.0));
}

#[test]
fn bench_measured_rows() {
    let out = dsfilter(&["bench", "--measured", "--n-max", "3", "--m-max", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1 + 6);
    for line in text.lines().skip(1) {
        let f: Vec<u64> = line
            .split(',')
            .skip(3)
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(f[4] < f[0], "{line}");
    }
}

#[test]
fn bench_unknown_metric() {
    let out = dsfilter(&["bench", "--metric", "time"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("time"));
}

#[test]
fn sim_missing_config() {
    assert_eq!(
        dsfilter(&["sim", "--config", "/nonexistent/x.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn sim_bad_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "seed = 1\nsteps = 4\n[model]\npreset = \"random_walk_1d\"\n[initial]\nmean = [0.0]\ncov = [[1.0]]\n[measurement]\nr = [[1.0]]\nschedule = [[3, 2]]\n",
    )
    .unwrap();
    let out = dsfilter(&["sim", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schedule"));
}

#[test]
fn sim_pv_has_every_backend() {
    let out = dsfilter(&["sim", "--config", &example("pv_2d.toml")]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let header = text.lines().next().unwrap();
    for backend in ["kf", "sc", "dskf"] {
        assert!(header.contains(&format!("{backend}_nees")), "{header}");
    }
    assert_eq!(text.lines().count(), 1 + 31);
}

#[test]
fn sim_odometry_filters_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("odo.csv");
    let out = dsfilter(&[
        "sim",
        "--config",
        &example("odometry_1d.toml"),
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.contains("diff"))
        .map(|(i, _)| i)
        .collect();
    assert!(!cols.is_empty(), "{header:?}");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        for &c in &cols {
            assert!(f[c].parse::<f64>().unwrap() <= 1e-9, "{line}");
        }
    }
}

#[test]
fn sim_unwritable_output() {
    let out = dsfilter(&[
        "sim",
        "--config",
        &example("odometry_1d.toml"),
        "--output",
        "/nonexistent/dir/o.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
