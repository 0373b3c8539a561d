//! The run manifest: a plain-text record of the resolved configuration,
//! the environment facts that matter for reproduction, and a SHA-256 hash
//! of every artifact the run wrote.

use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Validated value of `CR_ADAPT_THREADS`; the solver itself is
/// single-threaded, but the cap is parsed, validated, and recorded so
/// sweeps driven by external schedulers can prove what they ran with.
pub fn thread_cap() -> Result<usize, String> {
    match std::env::var("CR_ADAPT_THREADS") {
        Err(_) => Ok(1),
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!(
                "CR_ADAPT_THREADS must be a positive integer, got `{text}`"
            )),
        },
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// Writes `manifest.txt` into `dir`, listing the echo lines and hashing
/// every file in `files` (paths relative to `dir`), sorted by name.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    echo: &[String],
    files: &[PathBuf],
) -> std::io::Result<PathBuf> {
    let threads = thread_cap().unwrap_or(1);
    let mut sorted: Vec<&PathBuf> = files.iter().collect();
    sorted.sort();
    let path = dir.join("manifest.txt");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(w, "# creig run manifest")?;
    writeln!(w, "command = {command}")?;
    for line in echo {
        writeln!(w, "{line}")?;
    }
    writeln!(w, "threads = {threads}")?;
    writeln!(w, "# outputs (sha256  bytes  name)")?;
    for f in sorted {
        let full = dir.join(f);
        let hash = sha256_file(&full)?;
        let bytes = std::fs::metadata(&full)?.len();
        writeln!(w, "{hash}  {bytes}  {}", f.display())?;
    }
    Ok(path)
}
