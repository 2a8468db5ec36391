use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coupled_diffusion::evolution::cfl_limit;
use coupled_diffusion::{GeneratorMatrix, Grid, Kernel, KernelFamily};
use tempfile::TempDir;

const DEFAULT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf");

fn cdiff(sub: &str, config: &Path, out: &Path, sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdiff"));
    cmd.arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("manifest.conf")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn constant_profile_stays_at_its_mean() {
    let tmp = TempDir::new().unwrap();
    let o = cdiff(
        "simulate",
        DEFAULT.as_ref(),
        tmp.path(),
        &["init.kind=constant", "init.value=0.3", "time.horizon=0.2"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dist = column(&tmp.path().join("timeseries.csv"), "dist_to_mean");
    assert_eq!(dist.len(), 201);
    assert_eq!(dist[0], 0.0);
    // generator row sums vanish only to rounding, so later states carry roundoff
    assert!(dist.iter().all(|&d| d <= 1e-14), "{dist:?}");
    assert!(!tmp.path().join("decay.csv").exists());
}

#[test]
fn step_profile_conserves_unit_mass() {
    let tmp = TempDir::new().unwrap();
    let o = cdiff(
        "simulate",
        DEFAULT.as_ref(),
        tmp.path(),
        &[
            "init.kind=step",
            "init.left=1",
            "init.right=0",
            "time.horizon=5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mass = column(&tmp.path().join("timeseries.csv"), "mass");
    assert!(
        mass.iter().all(|m| (m - 1.0).abs() <= 1e-11),
        "{:?}",
        mass.last()
    );
    let rate = column(&tmp.path().join("decay.csv"), "fitted_rate")[0];
    let beta1 = column(&tmp.path().join("decay.csv"), "beta1")[0];
    assert!((rate / (2.0 * beta1) - 1.0).abs() < 0.05, "{rate} {beta1}");
}

#[test]
fn explicit_auto_step_is_recorded_as_the_cfl_limit() {
    let tmp = TempDir::new().unwrap();
    let sets = [
        "time.scheme=explicit",
        "time.dt=auto",
        "grid.n_local=20",
        "grid.n_nonlocal=20",
        "time.horizon=0.01",
    ];
    let o = cdiff("simulate", DEFAULT.as_ref(), tmp.path(), &sets);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let k = Kernel::new(KernelFamily::Triangle, 1.0, 1.0).unwrap();
    let gen = GeneratorMatrix::assemble(&Grid::new(20, 20).unwrap(), &k, &k.coupling_constants())
        .unwrap();
    let recorded: f64 = manifest_value(tmp.path(), "time.dt").parse().unwrap();
    assert_eq!(recorded, cfl_limit(&gen).unwrap());
}

#[test]
fn manifest_reproduces_identical_csv() {
    for scheme in [
        &["time.scheme=implicit"][..],
        &["time.scheme=explicit", "time.horizon=0.01"],
        &["time.scheme=picard", "time.horizon=0.3"],
    ] {
        let first = TempDir::new().unwrap();
        let second = TempDir::new().unwrap();
        let mut sets = vec![
            "grid.n_local=40",
            "grid.n_nonlocal=40",
            "time.snapshot_stride=50",
        ];
        sets.extend_from_slice(scheme);
        assert_eq!(
            code(&cdiff("simulate", DEFAULT.as_ref(), first.path(), &sets)),
            0
        );
        let manifest = first.path().join("manifest.conf");
        assert_eq!(code(&cdiff("simulate", &manifest, second.path(), &[])), 0);
        let a = files_under(first.path());
        let b = files_under(second.path());
        assert!(a.len() >= 2);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(
                std::fs::read(x).unwrap(),
                std::fs::read(y).unwrap(),
                "{scheme:?} {}",
                x.display()
            );
        }
    }
}

#[test]
fn snapshot_layout_and_file_initialisation() {
    let tmp = TempDir::new().unwrap();
    let sets = [
        "grid.n_local=10",
        "grid.n_nonlocal=12",
        "time.horizon=0.01",
        "time.snapshot_stride=5",
    ];
    assert_eq!(
        code(&cdiff("simulate", DEFAULT.as_ref(), tmp.path(), &sets)),
        0
    );
    let snap = tmp.path().join("snapshots/snapshot_00000010.csv");
    let mut r = csv::Reader::from_path(&snap).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["x", "w", "region"]);
    let regions: Vec<String> = r.records().map(|rec| rec.unwrap()[2].to_string()).collect();
    assert_eq!(regions.len(), 23);
    assert_eq!(regions.iter().filter(|s| *s == "local").count(), 11);
    assert!(regions[..11].iter().all(|s| s == "local"));

    let resumed = TempDir::new().unwrap();
    let path = format!("init.path={}", snap.display());
    let sets = [
        "grid.n_local=10",
        "grid.n_nonlocal=12",
        "time.horizon=0.01",
        "init.kind=file",
        path.as_str(),
    ];
    let o = cdiff("simulate", DEFAULT.as_ref(), resumed.path(), &sets);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mass = column(&resumed.path().join("timeseries.csv"), "mass")[0];
    let before = column(&tmp.path().join("timeseries.csv"), "mass")[10];
    assert!((mass - before).abs() < 1e-14);

    let wrong = ["grid.n_local=20", "init.kind=file", path.as_str()];
    assert_eq!(
        code(&cdiff("simulate", DEFAULT.as_ref(), resumed.path(), &wrong)),
        2
    );
}

#[test]
fn spectrum_rows() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let sets = [
        "grid.n_local=40",
        "grid.n_nonlocal=40",
        "spectrum.k_samples=200",
        "seed=7",
    ];
    assert_eq!(
        code(&cdiff("spectrum", DEFAULT.as_ref(), a.path(), &sets)),
        0
    );
    assert_eq!(
        code(&cdiff("spectrum", DEFAULT.as_ref(), b.path(), &sets)),
        0
    );
    let file = |d: &TempDir| std::fs::read(d.path().join("spectrum.csv")).unwrap();
    assert_eq!(file(&a), file(&b));
    let beta1 = column(&a.path().join("spectrum.csv"), "beta1")[0];
    let lambda2 = column(&a.path().join("spectrum.csv"), "lambda2")[0];
    assert!(beta1 > 0.0 && lambda2 == 2.0 * beta1);

    let heat = TempDir::new().unwrap();
    assert_eq!(
        code(&cdiff(
            "spectrum",
            DEFAULT.as_ref(),
            heat.path(),
            &["spectrum.pure_heat=true"]
        )),
        0
    );
    let beta1 = column(&heat.path().join("spectrum.csv"), "beta1")[0];
    assert!((beta1 / (PI * PI / 8.0) - 1.0).abs() < 0.02, "{beta1}");
}

#[test]
fn sweep_outputs() {
    let tmp = TempDir::new().unwrap();
    let base = [
        "grid.n_local=60",
        "grid.n_nonlocal=60",
        "time.horizon=0.3",
        "sweep.eps_list=0.4,0.2,0.1",
    ];
    let mut sets = base.to_vec();
    sets.push("init.kind=constant");
    assert_eq!(
        code(&cdiff("sweep-epsilon", DEFAULT.as_ref(), tmp.path(), &sets)),
        0
    );
    let err = column(&tmp.path().join("sweep.csv"), "sup_error_l2");
    assert_eq!(err.len(), 3);
    assert!(err.iter().all(|&e| e <= 1e-10), "{err:?}");

    let bump = TempDir::new().unwrap();
    let mut sets = base.to_vec();
    sets.extend(["init.center=-0.2", "init.width=0.15"]);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdiff"));
    cmd.args(["sweep-epsilon", "--svg", "--config", DEFAULT])
        .arg("--out")
        .arg(bump.path());
    for s in &sets {
        cmd.args(["--set", s]);
    }
    assert!(cmd.output().unwrap().status.success());
    let err = column(&bump.path().join("sweep.csv"), "sup_error_l2");
    assert!(err.windows(2).all(|p| p[1] < p[0]), "{err:?}");
    assert!(bump.path().join("sweep.svg").exists());

    let rising = ["sweep.eps_list=0.1,0.2"];
    assert_eq!(
        code(&cdiff(
            "sweep-epsilon",
            DEFAULT.as_ref(),
            tmp.path(),
            &rising
        )),
        2
    );
    let poisoned = [
        "grid.n_local=20",
        "grid.n_nonlocal=20",
        "time.horizon=0.01",
        "init.amplitude=NaN",
    ];
    assert_eq!(
        code(&cdiff(
            "sweep-epsilon",
            DEFAULT.as_ref(),
            tmp.path(),
            &poisoned
        )),
        3
    );
}

#[test]
fn verify_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let o = cdiff("verify", DEFAULT.as_ref(), tmp.path(), &[]);
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{table}");
    assert_eq!(
        table.lines().filter(|l| l.contains("  PASS  ")).count(),
        7,
        "{table}"
    );

    let o = cdiff(
        "verify",
        DEFAULT.as_ref(),
        tmp.path(),
        &["verify.corrupt_generator=true"],
    );
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 1, "{table}");
    let line = table
        .lines()
        .find(|l| l.starts_with("mass conservation"))
        .unwrap();
    assert!(line.contains("FAIL"), "{line}");

    let o = cdiff(
        "verify",
        DEFAULT.as_ref(),
        tmp.path(),
        &["time.scheme=explicit", "time.dt=0.01"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("time.dt"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "grid.n_local = 50\ngrid.resolution = 3\n").unwrap();
    let o = cdiff("simulate", &bad, tmp.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.resolution"));
    for set in [
        "kernel.family=cosine",
        "kernel.epsilon=0.01",
        "time.horizon=-1",
        "picard.window=10",
        "seed",
    ] {
        let sets = ["time.scheme=picard", set];
        assert_eq!(
            code(&cdiff("simulate", DEFAULT.as_ref(), tmp.path(), &sets)),
            2,
            "{set}"
        );
    }
    let missing = cdiff("simulate", &tmp.path().join("absent.conf"), tmp.path(), &[]);
    assert_eq!(code(&missing), 2);
}
