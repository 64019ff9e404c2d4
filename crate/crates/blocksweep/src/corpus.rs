//! Repository corpus mining: ingest a URL list, fetch repositories as zip
//! archives into an indexed folder layout, and prune each working copy down
//! to GPU-relevant source files.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extensions retained by the source filter. Everything else is deleted
/// from the working copy.
pub const ALLOWED_EXTENSIONS: [&str; 7] = ["c", "cpp", "cc", "cu", "h", "hpp", "cuh"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Pending,
    Downloaded,
    Missing,
    Failed,
}

/// One repository from the input URL list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepoRef {
    pub index: usize,
    pub url: String,
    pub status: FetchStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    C,
    Cpp,
    Cu,
    Header,
}

/// A retained source file inside a mined repository.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub repo_index: usize,
    pub relative_path: String,
    pub kind: SourceKind,
}

fn kind_for_extension(ext: &str) -> Option<SourceKind> {
    match ext.to_ascii_lowercase().as_str() {
        "c" => Some(SourceKind::C),
        "cpp" | "cc" => Some(SourceKind::Cpp),
        "cu" => Some(SourceKind::Cu),
        "h" | "hpp" | "cuh" => Some(SourceKind::Header),
        _ => None,
    }
}

/// Load the repository URL list: one URL per line, blank lines and `#`
/// comments ignored. Malformed URLs are kept as `failed` entries so the
/// status ledger still partitions the input.
pub fn load_repo_list(path: &Path) -> Result<Vec<RepoRef>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut refs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let index = refs.len();
        match url::Url::parse(line) {
            Ok(parsed) if parsed.has_host() && matches!(parsed.scheme(), "http" | "https") => {
                refs.push(RepoRef {
                    index,
                    url: line.to_string(),
                    status: FetchStatus::Pending,
                    diagnostic: None,
                });
            }
            Ok(parsed) => {
                refs.push(RepoRef {
                    index,
                    url: line.to_string(),
                    status: FetchStatus::Failed,
                    diagnostic: Some(format!(
                        "malformed url: scheme `{}` or host not usable",
                        parsed.scheme()
                    )),
                });
            }
            Err(e) => {
                refs.push(RepoRef {
                    index,
                    url: line.to_string(),
                    status: FetchStatus::Failed,
                    diagnostic: Some(format!("malformed url: {e}")),
                });
            }
        }
    }
    Ok(refs)
}

/// Fetch one repository archive and unpack it under `dest_root/<index>/`.
///
/// Tries `<url>/archive/master.zip` then `<url>/archive/main.zip`; a 404/410
/// on both maps to `missing` (repositories taken private or deleted), any
/// other failure to `failed` with a diagnostic.
pub fn fetch_repo(mut repo: RepoRef, dest_root: &Path, agent: &ureq::Agent) -> RepoRef {
    if repo.status != FetchStatus::Pending {
        return repo;
    }
    let base = repo.url.trim_end_matches('/');
    let mut missing = 0;
    for branch in ["master", "main"] {
        let archive_url = format!("{base}/archive/{branch}.zip");
        match agent.get(&archive_url).call() {
            Ok(response) => {
                let mut bytes = Vec::new();
                if let Err(e) = response.into_reader().read_to_end(&mut bytes) {
                    repo.status = FetchStatus::Failed;
                    repo.diagnostic = Some(format!("read body of {archive_url}: {e}"));
                    return repo;
                }
                let dest = dest_root.join(repo.index.to_string());
                return match unpack_zip(&bytes, &dest) {
                    Ok(()) => {
                        repo.status = FetchStatus::Downloaded;
                        repo
                    }
                    Err(e) => {
                        let _ = fs::remove_dir_all(&dest);
                        repo.status = FetchStatus::Failed;
                        repo.diagnostic = Some(format!("unpack {archive_url}: {e}"));
                        repo
                    }
                };
            }
            Err(ureq::Error::Status(code, _)) if code == 404 || code == 410 => {
                missing += 1;
            }
            Err(e) => {
                repo.status = FetchStatus::Failed;
                repo.diagnostic = Some(format!("fetch {archive_url}: {e}"));
                return repo;
            }
        }
    }
    debug_assert_eq!(missing, 2);
    repo.status = FetchStatus::Missing;
    repo.diagnostic = Some("archive endpoints returned 404/410 for master and main".into());
    repo
}

/// Unpack a zip archive, stripping a shared top-level directory when every
/// entry sits under one (the layout GitHub archives use).
fn unpack_zip(bytes: &[u8], dest: &Path) -> std::result::Result<(), String> {
    let reader = std::io::Cursor::new(bytes);
    let mut archive = zip::ZipArchive::new(reader).map_err(|e| format!("open archive: {e}"))?;

    let names: Vec<String> = archive.file_names().map(String::from).collect();
    let common_root = common_top_level(&names);

    fs::create_dir_all(dest).map_err(|e| format!("create {}: {e}", dest.display()))?;
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).map_err(|e| format!("read entry {i}: {e}"))?;
        let raw_name = entry.name().to_string();
        let stripped = match &common_root {
            Some(root) => raw_name
                .strip_prefix(root.as_str())
                .map(|s| s.trim_start_matches('/'))
                .unwrap_or(raw_name.as_str()),
            None => raw_name.as_str(),
        };
        if stripped.is_empty() {
            continue;
        }
        let Some(safe) = sanitize_entry_path(stripped) else {
            return Err(format!("archive entry escapes destination: {raw_name}"));
        };
        let target = dest.join(safe);
        if entry.is_dir() {
            fs::create_dir_all(&target).map_err(|e| format!("mkdir {}: {e}", target.display()))?;
            continue;
        }
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| format!("mkdir {}: {e}", parent.display()))?;
        }
        let mut out =
            fs::File::create(&target).map_err(|e| format!("create {}: {e}", target.display()))?;
        std::io::copy(&mut entry, &mut out)
            .map_err(|e| format!("write {}: {e}", target.display()))?;
    }
    Ok(())
}

fn common_top_level(names: &[String]) -> Option<String> {
    let mut root: Option<&str> = None;
    for name in names {
        let first = name.split('/').next().unwrap_or("");
        if first.is_empty() || first == "." || first == ".." || name == first {
            // a bare file at the archive root (or a traversal attempt);
            // nothing to strip
            return None;
        }
        match root {
            None => root = Some(first),
            Some(r) if r == first => {}
            Some(_) => return None,
        }
    }
    root.map(String::from)
}

/// Reject absolute paths and any `..` component (zip-slip).
fn sanitize_entry_path(name: &str) -> Option<PathBuf> {
    let path = Path::new(name);
    if path.is_absolute() {
        return None;
    }
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            std::path::Component::Normal(c) => out.push(c),
            std::path::Component::CurDir => {}
            _ => return None,
        }
    }
    Some(out)
}

/// Fetch every pending repository with up to `workers` parallel downloads.
/// Results are appended to the manifest writer in completion order through
/// a serialized log.
pub fn fetch_all(
    refs: Vec<RepoRef>,
    dest_root: &Path,
    workers: usize,
    mut on_done: impl FnMut(&RepoRef) + Send,
) -> Result<Vec<RepoRef>> {
    fs::create_dir_all(dest_root).map_err(|e| Error::io(dest_root, e))?;
    let agent = ureq::AgentBuilder::new()
        .redirects(5)
        .timeout(std::time::Duration::from_secs(120))
        .build();

    let queue: Mutex<VecDeque<RepoRef>> = Mutex::new(refs.into_iter().collect());
    let done: Mutex<Vec<RepoRef>> = Mutex::new(Vec::new());
    let log = Mutex::new(&mut on_done);

    let workers = workers.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue poisoned").pop_front();
                let Some(repo) = next else { break };
                let finished = if repo.status == FetchStatus::Pending {
                    fetch_repo(repo, dest_root, &agent)
                } else {
                    repo
                };
                {
                    let mut log = log.lock().expect("log poisoned");
                    (log)(&finished);
                }
                done.lock().expect("done poisoned").push(finished);
            });
        }
    });

    let mut results = done.into_inner().expect("done poisoned");
    results.sort_by_key(|r| r.index);
    Ok(results)
}

/// Prune a repository working copy to the allowed source extensions and
/// return the retained files sorted by relative path.
pub fn filter_sources(repo_dir: &Path, repo_index: usize) -> Result<Vec<SourceFile>> {
    let mut retained = Vec::new();
    for entry in walkdir::WalkDir::new(repo_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            Error::io(repo_dir, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let kind = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(kind_for_extension);
        match kind {
            Some(kind) => {
                let rel = path
                    .strip_prefix(repo_dir)
                    .expect("walkdir stays under root")
                    .to_string_lossy()
                    .replace('\\', "/");
                retained.push(SourceFile {
                    repo_index,
                    relative_path: rel,
                    kind,
                });
            }
            None => {
                fs::remove_file(path).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    retained.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    Ok(retained)
}

/// List retained source files without deleting anything (for corpora that
/// were already pruned or assembled by hand).
pub fn list_sources(repo_dir: &Path, repo_index: usize) -> Result<Vec<SourceFile>> {
    let mut retained = Vec::new();
    for entry in walkdir::WalkDir::new(repo_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            Error::io(repo_dir, std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        if let Some(kind) = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(kind_for_extension)
        {
            let rel = path
                .strip_prefix(repo_dir)
                .expect("walkdir stays under root")
                .to_string_lossy()
                .replace('\\', "/");
            retained.push(SourceFile {
                repo_index,
                relative_path: rel,
                kind,
            });
        }
    }
    retained.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    Ok(retained)
}

/// Append-only JSONL manifest writer.
pub struct ManifestWriter {
    writer: BufWriter<fs::File>,
    path: PathBuf,
}

impl ManifestWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(ManifestWriter {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Dataset(format!("serialize manifest record: {e}")))?;
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Read a JSONL manifest back into records.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| {
            Error::Dataset(format!("{}:{}: bad manifest line: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}
