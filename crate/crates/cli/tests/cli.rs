use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spherekde::kernel::KernelProfile;
use spherekde::selectors::spco_select;
use spherekde::targets::TargetDensity;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spherekde"));
    c.env_remove("SPHEREKDE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_points(dir: &Path, name: &str, target: &TargetDensity, n: usize, seed: u64) -> PathBuf {
    let s = target.sample(n, seed).unwrap();
    let mut text = String::from("x,y,z\n");
    for p in s.points() {
        let c = p.coords();
        text.push_str(&format!("{:?},{:?},{:?}\n", c[0], c[1], c[2]));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn select_spco_and_cv2() {
    let dir = TempDir::new().unwrap();
    let pts = write_points(dir.path(), "f1.csv", &TargetDensity::f1vm(), 500, 11);
    let out = dir.path().join("spco.json");
    let o = run(&["select", "--input", p(&pts), "--method", "spco", "--lambda", "1", "--output", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["table"].as_array().unwrap().len(), 56);
    assert_eq!(report["method"], "SPCO");
    let printed: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert_eq!(report["chosen_h"].as_f64().unwrap(), printed);

    let sample = spherekde::estimator::Sample::new(
        TargetDensity::f1vm().sample(500, 11).unwrap().points().to_vec(),
    )
    .unwrap();
    let direct = spco_select(&sample, &KernelProfile::von_mises(), 1.0).unwrap();
    assert_eq!(direct.chosen_h, printed);

    let cv = dir.path().join("cv2.json");
    let o = run(&["select", "--input", p(&pts), "--method", "cv2", "--output", p(&cv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(&cv).unwrap()).unwrap();
    assert_eq!(report["method"], "CV2");
}

#[test]
fn spherical_input_matches_cartesian() {
    let dir = TempDir::new().unwrap();
    let s = TargetDensity::f2vm().sample(80, 3).unwrap();
    let (mut cart, mut sph) = (String::new(), String::from("theta,phi\n"));
    for pt in s.points() {
        let c = pt.coords();
        cart.push_str(&format!("{:?},{:?},{:?}\n", c[0], c[1], c[2]));
        sph.push_str(&format!("{:?},{:?}\n", c[2].clamp(-1.0, 1.0).acos(), c[1].atan2(c[0])));
    }
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, cart).unwrap();
    fs::write(&b, sph).unwrap();
    let ha = run(&["select", "--input", p(&a)]);
    let hb = run(&["select", "--input", p(&b), "--spherical"]);
    assert!(ha.status.success() && hb.status.success());
    assert_eq!(ha.stdout, hb.stdout);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,0,0\n0,1,0\na,b,c\n").unwrap();
    let o = run(&["select", "--input", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let pts = write_points(dir.path(), "f1.csv", &TargetDensity::f1vm(), 50, 1);
    let o = run(&["estimate", "--input", p(&pts), "--h", "2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(o.stdout.is_empty());

    let one = dir.path().join("one.csv");
    fs::write(&one, "0,0,1\n").unwrap();
    assert_eq!(run(&["select", "--input", p(&one), "--method", "cv2"]).status.code(), Some(4));
    // a single point still has a one-element grid for SPCO
    assert!(run(&["select", "--input", p(&one)]).status.success());

    let missing = dir.path().join("nope.csv");
    assert_eq!(run(&["select", "--input", p(&missing)]).status.code(), Some(1));

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"target_id": "f1vm", "n": 100, "reps": 2, "methods": ["SPCO", "KDE"]}"#).unwrap();
    let o = run(&["bench", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("methods[1]"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"target_id": "f1vm", "n": 100, "reps": 2, "typo": 1}"#).unwrap();
    assert_eq!(run(&["bench", "--config", p(&cfg)]).status.code(), Some(2));

    fs::write(&cfg, r#"{"target_id": "f1vm", "n": 20, "reps": 2}"#).unwrap();
    let o = bin().args(["bench", "--config", p(&cfg)]).env("SPHEREKDE_THREADS", "-3").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failures_leave_no_partial_output() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,0,0\n0,0,0\n").unwrap();
    let out = dir.path().join("report.json");
    let o = run(&["select", "--input", p(&bad), "--output", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

fn read_mesh(path: &Path) -> Vec<[f64; 6]> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["theta", "phi", "x", "y", "z", "fhat"]);
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let v: Vec<f64> = r.iter().map(|f| f.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3], v[4], v[5]]
        })
        .collect()
}

fn mesh_mass(rows: &[[f64; 6]]) -> f64 {
    let dt = std::f64::consts::PI / 180.0;
    let dp = std::f64::consts::TAU / 360.0;
    rows.iter()
        .map(|r| {
            // trapezoid in theta: the two poles get half weight
            let w = if r[0] == 0.0 || (r[0] - std::f64::consts::PI).abs() < 1e-12 { 0.5 } else { 1.0 };
            w * r[5] * r[0].sin() * dt * dp
        })
        .sum()
}

#[test]
fn estimate_on_the_mesh() {
    let dir = TempDir::new().unwrap();
    let pts = dir.path().join("x.csv");
    fs::write(&pts, "1,0,0\n0.99,0.1,0\n0.99,-0.1,0.05\n").unwrap();
    let out = dir.path().join("mesh.csv");
    let o = run(&["estimate", "--input", p(&pts), "--h", "0.2", "--output", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_mesh(&out);
    assert_eq!(rows.len(), 181 * 360);
    let best = rows.iter().max_by(|a, b| a[5].total_cmp(&b[5])).unwrap();
    assert!(best[2] > 0.99, "max at {:?}", &best[2..5]);
    assert!((mesh_mass(&rows) - 1.0).abs() < 1e-3);
    for r in &rows {
        let norm = (r[2] * r[2] + r[3] * r[3] + r[4] * r[4]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    // one point at the north pole with h = 1: f(x) = c0 exp(z - 1)
    let pole = dir.path().join("pole.csv");
    fs::write(&pole, "0,0,1\n").unwrap();
    let o = run(&["estimate", "--input", p(&pole), "--h", "1"]);
    assert!(o.status.success());
    let mesh = dir.path().join("pole_mesh.csv");
    fs::write(&mesh, &o.stdout).unwrap();
    let c0 = KernelProfile::von_mises().c0(1.0, 3).unwrap();
    for r in read_mesh(&mesh) {
        let expected = c0 * (r[4] - 1.0).exp();
        assert!((r[5] - expected).abs() <= 1e-14 * expected.max(1e-3), "{r:?}");
    }

    let auto = run(&["estimate", "--input", p(&pole), "--h", "auto"]);
    assert!(auto.status.success());
    assert!(stderr(&auto).contains("h = 1"));
}

#[test]
fn bench_modes_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("mise.json");
    fs::write(&cfg, r#"{"mode": "mise", "target_id": "f2vm", "n": 60, "reps": 4, "base_seed": 5}"#).unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let csv = dir.path().join("a.csv");
    let o = run(&["bench", "--config", p(&cfg), "--output", p(&a), "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .args(["bench", "--config", p(&cfg), "--output", p(&b)])
        .env("SPHEREKDE_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let report: Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 3 * 4);

    let o = run(&["bench", "--config", p(&cfg), "--seed", "6", "--timing"]);
    let timed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(timed["config"]["base_seed"], 6);
    assert!(timed["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert!(report.get("wall_clock_seconds").is_none());

    fs::write(&cfg, r#"{"mode": "lambda-sweep", "target_id": "f1vm", "n": 60, "reps": 2, "lambda_grid": [0.5, 1.0]}"#)
        .unwrap();
    let o = run(&["bench", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 2);

    fs::write(&cfg, r#"{"mode": "risk-curves", "target_id": "f1vm", "n": 60, "reps": 1, "single_seed": 2}"#).unwrap();
    let o = run(&["bench", "--config", p(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let curves: Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = curves["rows"].as_array().unwrap();
    let grid = spherekde::selectors::build_grid(60, 3, &KernelProfile::von_mises()).unwrap();
    assert_eq!(rows.len(), grid.len());
    assert!(rows.iter().all(|r| r["r_oracle"].is_f64() && r["r_spco"].is_f64()));
}

#[test]
fn bundled_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let c: spherekde::bench::BenchConfig = serde_json::from_str(&text).unwrap();
        c.validate().unwrap();
        seen += 1;
    }
    assert_eq!(seen, 6);
}
