use std::path::{Path, PathBuf};
use std::process::Command;

use crate::{ensure, Check};

fn mgcn(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mgcn"))
        .current_dir(dir)
        .env_remove("MGCN_THREADS")
        .args(["--quiet", "--deterministic"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "mgcn {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(out.stdout)
}

fn run(dir: &Path) -> Result<Vec<u8>, String> {
    let config = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json"))
        .map_err(|e| e.to_string())?;
    let mut v: serde_json::Value = serde_json::from_str(&config).map_err(|e| e.to_string())?;
    v["output_dir"] = "run".into();
    std::fs::write(dir.join("config.json"), v.to_string()).map_err(|e| e.to_string())?;
    let c = ["--config", "config.json"];
    mgcn(dir, &[&["generate"][..], &c].concat())?;
    mgcn(dir, &[&["train-ae"][..], &c].concat())?;
    mgcn(dir, &[&["train-2d"][..], &c].concat())?;
    let stdout = mgcn(
        dir,
        &[&["reconstruct"][..], &c, &["--image", "run/data/val/000000.pgm", "--out", "run/recon.obj"]].concat(),
    )?;
    mgcn(
        dir,
        &[
            "evaluate",
            "--recon",
            "run/recon.obj",
            "--scan",
            "run/data/val/000000.obj",
            "--out",
            "run/report.json",
            "--error-map",
            "run/error.ply",
        ],
    )?;
    Ok(stdout)
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

pub fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_a = run(a.path())?;
    let out_b = run(b.path())?;
    ensure!(out_a == out_b, "reconstruct printed different output");
    let (ra, rb) = (a.path().join("run"), b.path().join("run"));
    let list = files(&ra);
    ensure!(list == files(&rb), "the runs wrote different file sets");
    for wanted in ["autoencoder/model.mgcn", "encoder2d/model.mgcn", "recon.obj", "report.json"] {
        ensure!(list.iter().any(|p| p == Path::new(wanted)), "{wanted} was not written");
    }
    let mut bytes = 0;
    for f in &list {
        let x = std::fs::read(ra.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(rb.join(f)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{} differs", f.display());
        bytes += x.len();
    }
    Ok(format!("{} files ({bytes} bytes) identical across two runs", list.len()))
}
