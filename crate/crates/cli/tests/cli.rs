use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn elrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elrecon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_one_line_error(o: &Output) {
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// 64x64 transmission dataset from a 128x128 phantom, 30 angles.
fn small_ct(dir: &Path, seed: &str) -> String {
    let data = p(dir, "data");
    let o = elrecon(&[
        "simulate", "--ct-fine-n", "128", "--ct-recon-n", "64", "--ct-n-angles", "30", "--seed", seed, "--out", &data,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Provenance without the output location, which necessarily differs.
fn strip_out(text: &[u8]) -> String {
    String::from_utf8_lossy(text)
        .lines()
        .filter(|l| !l.starts_with("out=") && !l.starts_with("data="))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn regularized_method_without_weight_is_a_config_error() {
    let o = elrecon(&["reconstruct", "--method", "el", "--fidelity", "ls", "--alpha", "0"]);
    assert_eq!(code(&o), 2);
    assert_one_line_error(&o);
}

#[test]
fn unsupported_pairs_are_config_errors() {
    let o = elrecon(&["reconstruct", "--method", "cgls", "--fidelity", "poisson"]);
    assert_eq!(code(&o), 2);
    let o = elrecon(&["reconstruct", "--method", "mlem", "--fidelity", "ls"]);
    assert_eq!(code(&o), 2);
    assert_one_line_error(&o);
}

#[test]
fn unknown_flag_and_unknown_key_exit_2() {
    let o = elrecon(&["reconstruct", "--no-such-flag", "1"]);
    assert_eq!(code(&o), 2);
    assert_one_line_error(&o);

    let dir = TempDir::new().unwrap();
    let cfg = p(dir.path(), "run.cfg");
    fs::write(&cfg, "command=verify\nverify.trails=3\n").unwrap();
    let o = elrecon(&["--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("verify.trails"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = elrecon(&[
        "reconstruct", "--method", "tv", "--alpha", "1e-6", "--data", &p(dir.path(), "none"), "--out", &p(dir.path(), "o"),
    ]);
    assert_eq!(code(&o), 3);
    assert_one_line_error(&o);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = p(dir.path(), "run.cfg");
    let out = p(dir.path(), "v");
    fs::write(&cfg, "command=verify\nverify.trials=7\nverify.n=8\nverify.adjoint_n=16\nverify.adjoint_angles=6\n").unwrap();
    let o = elrecon(&["--config", &cfg, "verify", "--trials", "5", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let prov = fs::read_to_string(p(Path::new(&out), "provenance.txt")).unwrap();
    assert!(prov.lines().any(|l| l == "verify.trials=5"), "{prov}");
    assert!(prov.lines().any(|l| l == "verify.n=8"), "{prov}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("5 trials at n=8"));
}

#[test]
fn verify_passes_and_reports_error_bound_slack() {
    let dir = TempDir::new().unwrap();
    let o = elrecon(&["verify", "--trials", "100", "--n", "16", "--out", &p(dir.path(), "v")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
    assert!(text.contains("100 trials at n=16") && text.contains("max slack"), "{text}");
}

#[test]
fn verify_catches_a_broken_transpose() {
    let dir = TempDir::new().unwrap();
    let o = elrecon(&["verify", "--corrupt-transpose", "--out", &p(dir.path(), "v")]);
    assert_eq!(code(&o), 1);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL adjoint")), "{text}");
    assert_one_line_error(&o);
}

#[test]
fn ct_pipeline_reports_four_methods() {
    let dir = TempDir::new().unwrap();
    let data = small_ct(dir.path(), "0");
    let out = p(dir.path(), "report");
    let o = elrecon(&["report", "--data", &data, "--outer-iters", "20", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(p(Path::new(&out), "table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{table}");
    for m in ["cgls", "tv", "tvl2", "el"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{m},"))), "{table}");
    }
}

#[test]
fn identical_runs_give_identical_trees() {
    let run = |dir: &Path| {
        let data = small_ct(dir, "3");
        let o = elrecon(&[
            "sweep", "--data", &data, "--method", "el", "--points", "3", "--decades", "1", "--outer-iters", "10",
            "--out", &p(dir, "sweep"),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        tree(dir)
    };
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ta, tb) = (run(a.path()), run(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        if name.ends_with("provenance.txt") {
            assert_eq!(strip_out(bytes), strip_out(&tb[name]), "{name}");
        } else {
            assert!(bytes == &tb[name], "{name} differs");
        }
    }
}

#[test]
fn provenance_reproduces_a_reconstruction() {
    let dir = TempDir::new().unwrap();
    let data = small_ct(dir.path(), "1");
    let first = p(dir.path(), "r1");
    let o = elrecon(&[
        "reconstruct", "--data", &data, "--method", "tvl2", "--alpha", "1e-5", "--mu", "1e-9", "--outer-iters", "15",
        "--out", &first,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let second = p(dir.path(), "r2");
    let o = elrecon(&["--config", &p(Path::new(&first), "provenance.txt"), "--out", &second]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (ta, tb) = (tree(Path::new(&first)), tree(Path::new(&second)));
    for name in ["recon.img", "recon.pgm", "convergence.csv", "metrics.csv"] {
        assert!(ta[name] == tb[name], "{name} differs");
    }
}

#[test]
fn dataset_provenance_is_a_valid_config() {
    let dir = TempDir::new().unwrap();
    let data = small_ct(dir.path(), "2");
    let again = p(dir.path(), "again");
    let o = elrecon(&["--config", &p(Path::new(&data), "provenance.txt"), "--out", &again]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read(p(Path::new(&data), "noisy_0.sin")).unwrap() == fs::read(p(Path::new(&again), "noisy_0.sin")).unwrap());
}

#[test]
fn emission_phantom_writes_masks() {
    let dir = TempDir::new().unwrap();
    let out = p(dir.path(), "ph");
    let o = elrecon(&["phantom", "--kind", "et", "--n", "48", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["phantom.img", "phantom.pgm", "mask_GR.msk", "mask_BR.msk", "provenance.txt"] {
        assert!(Path::new(&out).join(f).exists(), "{f}");
    }
}
