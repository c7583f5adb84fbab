use std::path::Path;
use std::process::Command;

#[test]
fn python_smoke_script() {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("python/smoke_test.py");
    let out = match Command::new("python3").arg(&script).output() {
        Ok(o) => o,
        Err(_) => {
            eprintln!("python3 not available; skipping");
            return;
        }
    };
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}
