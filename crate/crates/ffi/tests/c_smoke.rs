//! Compiles the C example against the generated header and static library and
//! runs it on a small workspace. Skips quietly when no C compiler is around.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_client_round_trip() {
    let manifest_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest_dir.join("include");
    let example = manifest_dir.join("examples/smoke.c");
    // The staticlib lands in the workspace target directory.
    let lib = manifest_dir
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .join("target/debug/libstarq_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }

    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let compile = Command::new(&cc)
        .arg(&example)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        compile.status.success(),
        "compile failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );

    fs::write(dir.path().join("r.csv"), "1,9\n2,3\n").unwrap();
    fs::write(dir.path().join("q.txt"), "Q(x,*) :- R(x).\n").unwrap();
    fs::write(
        dir.path().join("ws.toml"),
        "query = \"q.txt\"\nsemiring = \"numeric\"\n\n[[relations]]\nname = \"R\"\npath = \"r.csv\"\narity = 1\nannot_col = true\n",
    )
    .unwrap();

    let run = Command::new(&exe).arg(dir.path().join("ws.toml")).output().unwrap();
    assert!(run.status.success(), "run failed: {}", String::from_utf8_lossy(&run.stderr));
    let out = String::from_utf8(run.stdout).unwrap();
    assert!(out.contains("verdict_code=0"), "{out}");
    assert!(out.contains("count=2"), "{out}");
    assert!(out.contains("1,9"), "{out}");
    assert!(out.contains("2,3"), "{out}");
}
