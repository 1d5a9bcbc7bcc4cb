//! Input digests, all-or-nothing output commits and stage manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::CliError;

pub const PROGRESS_EVERY: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

struct Pending {
    role: String,
    path: PathBuf,
    bytes: Vec<u8>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// One pipeline stage. Outputs are buffered and only land on disk in
/// [`Stage::commit`], together with the manifest.
pub struct Stage {
    name: &'static str,
    quiet: bool,
    inputs: Vec<FileDigest>,
    outputs: Vec<Pending>,
    tallies: BTreeMap<String, Value>,
}

impl Stage {
    pub fn new(name: &'static str, quiet: bool) -> Self {
        Stage {
            name,
            quiet,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tallies: BTreeMap::new(),
        }
    }

    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{}] {}", self.name, msg.as_ref());
        }
    }

    pub fn progress(&self, what: &'static str) -> Progress {
        Progress {
            stage: self.name,
            what,
            quiet: self.quiet,
            done: AtomicUsize::new(0),
        }
    }

    /// Reads and digests an input file.
    pub fn read_input(&mut self, role: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::validation(format!("cannot read {role} {}: {e}", path.display())))?;
        self.inputs.push(FileDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn add_output(&mut self, role: &str, path: &Path, bytes: Vec<u8>) {
        self.outputs.push(Pending {
            role: role.to_string(),
            path: path.to_path_buf(),
            bytes,
        });
    }

    pub fn tally<T: Serialize>(&mut self, key: &str, v: &T) {
        self.tallies
            .insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// Input digests plus effective parameters, for embedding in reports.
    pub fn provenance(&self, params: &BTreeMap<String, Value>) -> Value {
        json!({ "inputs": self.inputs, "params": params })
    }

    /// Writes every output and the manifest (named after the first output)
    /// to temporary files beside their targets, then renames them all.
    pub fn commit(self, params: BTreeMap<String, Value>) -> Result<PathBuf, CliError> {
        let primary = self
            .outputs
            .first()
            .map(|o| o.path.clone())
            .ok_or_else(|| CliError::internal("stage produced no outputs"))?;
        let mut staged: Vec<(NamedTempFile, PathBuf)> = Vec::new();
        let mut digests = Vec::new();
        for out in &self.outputs {
            staged.push((stage_file(&out.path, &out.bytes)?, out.path.clone()));
            digests.push(FileDigest {
                role: out.role.clone(),
                path: out.path.display().to_string(),
                sha256: sha256_hex(&out.bytes),
            });
        }
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = json!({
            "stage": self.name,
            "tool": "oqa",
            "version": env!("CARGO_PKG_VERSION"),
            "created_unix": created_unix,
            "inputs": self.inputs,
            "outputs": digests,
            "params": params,
            "tallies": self.tallies,
        });
        let mpath = manifest_path(&primary);
        let mut mbytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::internal(e.to_string()))?;
        mbytes.push(b'\n');
        staged.push((stage_file(&mpath, &mbytes)?, mpath.clone()));
        for (tmp, target) in staged {
            tmp.persist(&target)
                .map_err(|e| CliError::internal(format!("cannot write {}: {}", target.display(), e.error)))?;
        }
        self.log_done(&primary);
        Ok(mpath)
    }

    fn log_done(&self, primary: &Path) {
        self.log(format!("wrote {}", primary.display()));
    }
}

fn stage_file(target: &Path, bytes: &[u8]) -> Result<NamedTempFile, CliError> {
    let dir = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(CliError::validation(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    Ok(tmp)
}

/// Counts processed items and reports every [`PROGRESS_EVERY`] of them.
pub struct Progress {
    stage: &'static str,
    what: &'static str,
    quiet: bool,
    done: AtomicUsize,
}

impl Progress {
    pub fn tick(&self) {
        let n = self.done.fetch_add(1, Ordering::Relaxed) + 1;
        if !self.quiet && n.is_multiple_of(PROGRESS_EVERY) {
            eprintln!("[{}] {n} {}", self.stage, self.what);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_outputs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        let input = dir.path().join("in.txt");
        fs::write(&input, b"hello").unwrap();
        let mut st = Stage::new("test", true);
        st.read_input("input", &input).unwrap();
        st.add_output("a", &a, b"A".to_vec());
        st.add_output("b", &b, b"B".to_vec());
        let m = st.commit(BTreeMap::new()).unwrap();
        assert_eq!(fs::read(&a).unwrap(), b"A");
        assert_eq!(fs::read(&b).unwrap(), b"B");
        let manifest: Value = serde_json::from_slice(&fs::read(m).unwrap()).unwrap();
        assert_eq!(manifest["inputs"][0]["sha256"], sha256_hex(b"hello"));
        assert_eq!(manifest["outputs"][1]["sha256"], sha256_hex(b"B"));
    }

    #[test]
    fn missing_output_dir_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("ok.txt");
        let bad = dir.path().join("nope/bad.txt");
        let mut st = Stage::new("test", true);
        st.add_output("ok", &ok, b"x".to_vec());
        st.add_output("bad", &bad, b"y".to_vec());
        assert!(st.commit(BTreeMap::new()).is_err());
        assert!(!ok.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
