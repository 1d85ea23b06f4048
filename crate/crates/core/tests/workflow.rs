use std::fs;
use std::process::Command;

use swellhp::diagnostics::{evaluate, sample_path, swell_ratio, SamplePath, SwellReport, REPORT_HEADER};
use swellhp::ns_solver::{solve_stick_slip, SimConfig, Simulation};

fn small(order: usize) -> SimConfig {
    SimConfig {
        order,
        ..SimConfig::default()
    }
}

fn stick_slip_sim(order: usize) -> Simulation {
    let cfg = small(order);
    let mesh = cfg.build_mesh().unwrap();
    let init = solve_stick_slip(&mesh, &cfg).unwrap();
    Simulation::new(cfg, mesh, init).unwrap()
}

#[test]
fn stick_slip_has_flat_surface() {
    let sim = stick_slip_sim(5);
    let s = sim.spline().unwrap().unwrap();
    assert_eq!(swell_ratio(&s, sim.cfg.l2, sim.cfg.h).unwrap(), 1.0);
    let r = SwellReport::from_simulation(&sim, 0).unwrap();
    assert_eq!(r.chi_r, 1.0);
    assert_eq!(r.csv_row().split(',').count(), REPORT_HEADER.split(',').count());
}

#[test]
fn fields_are_continuous_across_interfaces() {
    let sim = stick_slip_sim(5);
    let at = |x: f64, y: f64| evaluate(&sim.mesh, &sim.state, [x, y]).unwrap();
    let mut worst: f64 = 0.0;
    for xb in [-3.0, -0.3, 0.3, 2.0, 5.0] {
        for y in [0.1, 0.45, 0.8] {
            let (l, r) = (at(xb - 1e-11, y), at(xb + 1e-11, y));
            worst = worst.max((l[0] - r[0]).abs()).max((l[1] - r[1]).abs());
        }
    }
    for x in [-5.0, -1.0, 1.0, 7.0] {
        let (l, r) = (at(x, 0.7 - 1e-11), at(x, 0.7 + 1e-11));
        worst = worst.max((l[0] - r[0]).abs()).max((l[1] - r[1]).abs());
    }
    assert!(worst < 1e-8, "{worst}");
    let cut = sample_path(&sim.mesh, &sim.state, &sim.cfg, SamplePath::CrossSection(-3.0), 51).unwrap();
    assert!(cut[0].u > cut[50].u && cut[50].u.abs() < 1e-12);
}

#[test]
fn steps_are_deterministic() {
    let mut a = stick_slip_sim(4);
    let mut b = stick_slip_sim(4);
    for _ in 0..3 {
        a.step().unwrap();
        b.step().unwrap();
    }
    assert_eq!(a.checkpoint(), b.checkpoint());
}

#[test]
fn checkpoint_round_trip() {
    let mut a = stick_slip_sim(4);
    for _ in 0..3 {
        a.step().unwrap();
    }
    let text = a.checkpoint();
    let mut b = stick_slip_sim(4);
    b.restore(&text).unwrap();
    assert_eq!(b.checkpoint(), text);
    a.step().unwrap();
    b.step().unwrap();
    assert_eq!(a.checkpoint(), b.checkpoint());
    let mut wrong = stick_slip_sim(5);
    assert!(wrong.restore(&text).is_err());
}

#[test]
fn cli_single_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("case.cfg");
    fs::write(&cfg, "# small case\np = 6\nsteady_tol = 1e-6\n").unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_swellhp"))
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--re", "1", "--out"])
        .arg(&out)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let report = fs::read_to_string(out.join("swell_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert_eq!(lines.len(), 2);
    let chi: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((chi - 1.186).abs() < 0.01, "{chi}");
    let case = out.join("P6_Bsl0");
    assert!(case.join("spline_Re1.csv").exists());
    assert!(case.join("path_centerline_Re1.csv").exists());
    assert!(case.join("checkpoints").read_dir().unwrap().count() >= 2);

    // a bad key is reported with its origin and a failing exit code
    fs::write(&cfg, "p = 6\nwobble = 3\n").unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_swellhp"))
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("wobble"));
}
