use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vlab"));
    cmd.args(args).env_remove("VLAB_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run(verb: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = out.with_extension("toml");
    std::fs::write(&cfg, config).unwrap();
    let mut args = vec![verb, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    vlab(&args, &[])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const D1: &str = "[grid]\nhalf_width = 12.0\nspacing = 0.25\n[vortex]\nzeros = [[0.0, 0.0]]\n";

const GLUE_HEAD: &str = "[grid]\nspacing = 0.25\n[glue]\nepsilon = 0.16\n";
const GLUE_COMPONENTS: &str = "[[glue.component]]\nmarker = [1.0, 0.0]\nzeros = [[0.0, 0.0]]\n\
                               [[glue.component]]\nmarker = [-1.0, 0.0]\nzeros = [[0.0, 0.0]]\n";

#[test]
fn trivial_vortex_has_zero_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d0");
    let o = run("solve", "[grid]\nhalf_width = 6.0\n[vortex]\nzeros = []\n", &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let side = json(out.join("solve.json"));
    assert!(side["energy"].as_f64().unwrap().abs() < 1e-12);
    for f in ["field.vlab", "abs_u.svg", "energy_density.svg", "moment_map.svg", "config.resolved.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn unit_vortex_flux_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d1");
    let o = run("solve", D1, &out, &["--deterministic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let side = json(out.join("solve.json"));
    let flux = side["flux"].as_f64().unwrap();
    assert!((flux.abs() - 1.0).abs() < 0.02, "flux {flux}");
    assert!(side["residual_inf"].as_f64().unwrap() < 1e-9);
    assert!(side["iterations"].as_u64().unwrap() > 0);
    // resolved config carries the defaults and parses back
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("[weights]") && resolved.contains("n = 1"));
    let again = dir.path().join("again");
    let o = run("solve", &resolved, &again, &["--deterministic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("solve.json")).unwrap(), std::fs::read(again.join("solve.json")).unwrap());
}

#[test]
fn boundary_zero_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\ndomain = \"half-plane\"\n[vortex]\nzeros = [[0.5, 0.0]]\n";
    let o = run("solve", cfg, &dir.path().join("hp"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("upper half-plane"), "{}", stderr(&o));
}

#[test]
fn empty_sweeps_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("degenerate", "[degenerate]\nexample = \"separation\"\nvalues = []\n", &dir.path().join("a"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty sweep"));
    let cfg = format!("{GLUE_HEAD}epsilons = []\nmarkers = [[1.0, 0.0], [-1.0, 0.0]]\n{GLUE_COMPONENTS}");
    let o = run("glue-sweep", &cfg, &dir.path().join("b"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mismatched_markers_violate_matching() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{GLUE_HEAD}markers = [[1.0, 0.0], [-2.0, 0.0]]\n{GLUE_COMPONENTS}");
    let out = dir.path().join("mm");
    let o = run("glue", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("matching condition"), "{}", stderr(&o));
    // validation happens before anything is written
    assert!(!out.exists());
}

#[test]
fn unknown_keys_and_bad_inputs_exit_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("solve", "[vortex]\nzeros = []\nwidth = 3\n", &dir.path().join("u"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"));
    let o = run("solve", "[grid]\nspacing = -1.0\n[vortex]\nzeros = []\n", &dir.path().join("s"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = run("spectrum", "[weights]\np = 5.0\n[vortex]\nzeros = []\n", &dir.path().join("p"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[vortex]\nzeros = []\n").unwrap();
    let t = dir.path().join("t");
    let args = ["solve", "--config", cfg.to_str().unwrap(), "--out", t.to_str().unwrap()];
    assert_eq!(vlab(&args, &[("VLAB_THREADS", "many")]).status.code(), Some(2));
    assert!(vlab(&args, &[("VLAB_THREADS", "1")]).status.success());
}

#[test]
fn io_failures_exit_with_status_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = vlab(&["solve", "--config", dir.path().join("missing.toml").to_str().unwrap(), "--out", "x"], &[]);
    assert_eq!(o.status.code(), Some(4));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let cfg = dir.path().join("ok.toml");
    std::fs::write(&cfg, "[grid]\nhalf_width = 6.0\n[vortex]\nzeros = []\n").unwrap();
    let sub = blocker.join("sub");
    let o = vlab(&["solve", "--config", cfg.to_str().unwrap(), "--out", sub.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn newton_budget_exhaustion_is_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{GLUE_HEAD}max_iter = 1\nmarkers = [[1.0, 0.0], [-1.0, 0.0]]\n{GLUE_COMPONENTS}");
    let o = run("glue", &cfg, &dir.path().join("g"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn timestamps_only_without_deterministic_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\nhalf_width = 6.0\n[vortex]\nzeros = []\n";
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("solve", cfg, &a, &["--deterministic"]).status.success());
    assert!(run("solve", cfg, &b, &[]).status.success());
    let (sa, sb) = (std::fs::read_to_string(a.join("abs_u.svg")).unwrap(), std::fs::read_to_string(b.join("abs_u.svg")).unwrap());
    assert!(!sa.contains("<!-- generated"));
    assert!(sb.contains("<!-- generated"));
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with("<!-- generated")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&sa), strip(&sb));
    // no temporaries survive
    assert!(std::fs::read_dir(&a).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".vlab-")));
}

#[test]
fn csv_has_seventeen_significant_digits_and_repeats_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[grid]\nspacing = 0.5\n[degenerate]\nexample = \"separation\"\nvalues = [1.0, 3.0]\n";
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("degenerate", cfg, &a, &["--deterministic", "--parallel", "2"]).status.success());
    assert!(run("degenerate", cfg, &b, &["--deterministic", "--parallel", "1"]).status.success());
    let text = std::fs::read_to_string(a.join("degenerate.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "separation,energy_total,energy_ball_left,energy_ball_right,energy_middle_strip");
    for line in lines {
        for field in line.split(',') {
            let mantissa = field.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{field}");
        }
    }
    for f in ["degenerate.csv", "degenerate.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn preglue_snapshot_carries_regions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{GLUE_HEAD}markers = [[1.0, 0.0], [-1.0, 0.0]]\n{GLUE_COMPONENTS}");
    let out = dir.path().join("p");
    let o = run("preglue", &cfg, &out, &["--deterministic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(out.join("preglue.json"));
    let total = summary["energy_total"].as_f64().unwrap();
    let sum: f64 = summary["regions"].as_array().unwrap().iter().map(|r| r["energy"].as_f64().unwrap()).sum();
    assert!((sum - total).abs() < 1e-12 * total);
    let bytes = std::fs::read(out.join("preglue.vlab")).unwrap();
    let header = std::str::from_utf8(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).unwrap().to_owned();
    let parts: Vec<usize> = header.split_whitespace().skip(3).take(2).map(|s| s.parse().unwrap()).collect();
    let nodes = parts[0] * parts[1];
    assert_eq!(bytes.len(), header.len() + 1 + 8 * 4 * nodes + nodes);
    let tags = &bytes[bytes.len() - nodes..];
    assert!(tags.contains(&0) && tags.contains(&1) && tags.contains(&128) && tags.contains(&255));
    assert!(out.join("residual.svg").exists());
}
