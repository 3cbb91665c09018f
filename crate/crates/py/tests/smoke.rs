use std::path::PathBuf;
use std::process::Command;

/// Runs python/smoke_test.py against the library built with this test.
#[test]
fn python_smoke_test() {
    let exe = std::env::current_exe().unwrap();
    // test builds leave the cdylib next to the test binary in deps/
    let deps = exe.parent().unwrap();
    let Some(lib) = [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libelrecon_py.so"))
        .find(|p| p.exists())
    else {
        eprintln!("skipped: libelrecon_py.so not built on this platform");
        return;
    };
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("python/smoke_test.py");
    let out = match Command::new("python3").arg(&script).env("ELRECON_PY_LIB", &lib).output() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("skipped: python3 unavailable ({e})");
            return;
        }
    };
    assert!(
        out.status.success(),
        "{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).trim_end().ends_with("ok"));
}
