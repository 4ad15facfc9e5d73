use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// Files produced by one command, held in memory until the computation has
/// finished.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, M: Serialize> {
    pub hrb_schema: u32,
    pub command: &'a str,
    pub version: &'a str,
    #[serde(flatten)]
    pub meta: &'a M,
    pub files: Vec<FileEntry>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.add(name, text);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> Vec<FileEntry> {
        self.files
            .iter()
            .map(|(path, data)| FileEntry {
                path: path.clone(),
                bytes: data.len(),
                sha256: hex::encode(Sha256::digest(data)),
            })
            .collect()
    }

    /// Writes every file, then the manifest, each through a temporary file
    /// and a rename so readers never see partial output.
    pub fn commit<M: Serialize>(self, dir: &Path, command: &str, meta: &M) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            hrb_schema: hrb_core::bounds::REPORT_SCHEMA,
            command,
            version: env!("CARGO_PKG_VERSION"),
            meta,
            files: self.entries(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        let mut written = Vec::new();
        for (name, data) in self.files.iter().map(|(n, d)| (n.as_str(), d.as_slice())).chain([(MANIFEST, text.as_bytes())]) {
            let path = dir.join(name);
            atomic_write(&path, data)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn atomic_write(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
