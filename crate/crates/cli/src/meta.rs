//! `run.meta` files: deterministic forensics for every invocation (no
//! timestamps, so identical runs leave identical metadata).

use std::fmt::Write as _;
use std::path::Path;

pub fn write_run_meta(dir: &Path, argv: &[String], status: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "tool=malvis {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "argv={}", argv.join(" "));
    let _ = writeln!(out, "status={status}");
    std::fs::write(dir.join("run.meta"), out)
}
