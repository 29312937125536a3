//! Output files: provenance header, digests and a staging directory that
//! only publishes complete results.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First line of every output file.
pub fn header_line(config_sha256: &str, seed: u64) -> String {
    format!("# config_sha256={config_sha256} seed={seed}")
}

/// Text after any leading `#` comment lines.
pub fn strip_header(s: &str) -> &str {
    let mut rest = s;
    while rest.starts_with('#') {
        rest = rest.find('\n').map_or("", |i| &rest[i + 1..]);
    }
    rest
}

/// Output files are written under `out/quarantine/<name>` and moved into
/// `out` only on `commit`. An interrupted run leaves its partial files in
/// quarantine; the next run of the same stage clears them.
#[derive(Debug)]
pub struct Stage {
    out: PathBuf,
    dir: PathBuf,
}

impl Stage {
    pub fn new(out: &Path, name: &str) -> io::Result<Stage> {
        let dir = out.join("quarantine").join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Stage {
            out: out.to_path_buf(),
            dir,
        })
    }

    /// Staging location of `rel`, with parent directories created.
    pub fn path(&mut self, rel: impl AsRef<Path>) -> io::Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &str) -> io::Result<PathBuf> {
        let p = self.path(rel)?;
        fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn staging_dir(&self) -> &Path {
        &self.dir
    }

    /// Moves every staged file into the output directory.
    /// Moves every staged file into `out`, returning the published paths in
    /// sorted order.
    pub fn commit(self) -> io::Result<Vec<PathBuf>> {
        let mut rels = Vec::new();
        collect_files(&self.dir, Path::new(""), &mut rels)?;
        rels.sort();
        let mut published = Vec::with_capacity(rels.len());
        for rel in &rels {
            let from = self.dir.join(rel);
            let to = self.out.join(rel);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::rename(&from, &to)?;
            published.push(to);
        }
        fs::remove_dir_all(&self.dir)?;
        let quarantine = self.out.join("quarantine");
        if fs::read_dir(&quarantine)?.next().is_none() {
            fs::remove_dir(&quarantine)?;
        }
        Ok(published)
    }
}

fn collect_files(root: &Path, rel: &Path, acc: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(root.join(rel))? {
        let entry = entry?;
        let r = rel.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            collect_files(root, &r, acc)?;
        } else {
            acc.push(r);
        }
    }
    Ok(())
}
