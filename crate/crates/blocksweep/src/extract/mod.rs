//! Kernel extraction: find global functions, compute their dependency
//! closure (headers plus called device functions), and write each one out
//! as a standalone compilable unit with a parameter manifest.

pub mod lexer;
pub mod scan;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{list_sources, SourceFile, SourceKind};
use crate::error::{Error, Result};
use lexer::{includes, lex, IncludeDirective, TokenKind};
use scan::{scan_source, FunctionDecl, ParamSpec, Qualifier, ScanResult};

/// Everything known about one repository working copy.
pub struct RepoContext {
    pub repo_index: usize,
    pub root: PathBuf,
    pub files: Vec<SourceFile>,
    pub sources: BTreeMap<String, String>,
    pub scans: BTreeMap<String, ScanResult>,
    /// device function name -> definitions as (file, decl index)
    pub device_index: BTreeMap<String, Vec<(String, usize)>>,
}

impl RepoContext {
    pub fn load(root: &Path, repo_index: usize) -> Result<Self> {
        let files = list_sources(root, repo_index)?;
        let mut sources = BTreeMap::new();
        let mut scans = BTreeMap::new();
        let mut device_index: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
        for file in &files {
            let path = root.join(&file.relative_path);
            let text = fs::read_to_string(&path)
                .or_else(|_| fs::read(&path).map(|b| String::from_utf8_lossy(&b).into_owned()))
                .map_err(|e| Error::io(&path, e))?;
            let scanned = scan_source(&text);
            for (idx, decl) in scanned.decls.iter().enumerate() {
                if decl.qualifier == Qualifier::Device {
                    device_index
                        .entry(decl.name.clone())
                        .or_default()
                        .push((file.relative_path.clone(), idx));
                }
            }
            sources.insert(file.relative_path.clone(), text);
            scans.insert(file.relative_path.clone(), scanned);
        }
        Ok(RepoContext {
            repo_index,
            root: root.to_path_buf(),
            files,
            sources,
            scans,
            device_index,
        })
    }

    fn decl(&self, file: &str, idx: usize) -> &FunctionDecl {
        &self.scans[file].decls[idx]
    }

    fn exists(&self, rel: &str) -> bool {
        self.sources.contains_key(rel)
    }
}

/// A device function reached by the call closure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeviceRef {
    pub file: String,
    pub decl_index: usize,
    pub name: String,
}

/// A header scheduled for copying into the unit folder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopiedHeader {
    pub repo_path: String,
    pub folder_path: String,
}

/// Result of the dependency closure for one global function.
#[derive(Debug, Default)]
pub struct Closure {
    /// All reached files, entry first, then discovery order.
    pub deps: Vec<String>,
    pub copied_headers: Vec<CopiedHeader>,
    pub device_fns: Vec<DeviceRef>,
    /// Device functions whose text must be inlined into `kernel.cu`
    /// (defined in the entry file or in source files that are not copied).
    pub inlined: Vec<DeviceRef>,
    /// Verbatim include lines for the top of `kernel.cu`.
    pub include_lines: Vec<String>,
    pub diagnostics: Vec<String>,
}

fn normalize_rel(path: &str) -> Option<String> {
    let mut parts: Vec<&str> = Vec::new();
    for comp in path.split('/') {
        match comp {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return None; // escapes the root
                }
            }
            other => parts.push(other),
        }
    }
    Some(parts.join("/"))
}

fn parent_dir(rel: &str) -> &str {
    match rel.rfind('/') {
        Some(idx) => &rel[..idx],
        None => "",
    }
}

fn join_rel(dir: &str, path: &str) -> String {
    if dir.is_empty() {
        path.to_string()
    } else {
        format!("{dir}/{path}")
    }
}

/// Resolve a quoted include within the repo tree: relative to the including
/// file's directory first, then relative to the repo root. Anything the fix
/// loop might still find by basename search is deliberately left unresolved
/// here and recorded as a diagnostic.
fn resolve_include(ctx: &RepoContext, includer: &str, path: &str) -> Option<String> {
    if let Some(candidate) = normalize_rel(&join_rel(parent_dir(includer), path)) {
        if ctx.exists(&candidate) {
            return Some(candidate);
        }
    }
    if let Some(candidate) = normalize_rel(path) {
        if ctx.exists(&candidate) {
            return Some(candidate);
        }
    }
    None
}

/// Compute the dependency closure of a global function: the fixed point of
/// quoted includes (transitively) plus device functions whose names appear
/// as call tokens, recursively through their bodies.
pub fn compute_closure(ctx: &RepoContext, entry_file: &str, entry_idx: usize) -> Closure {
    let mut closure = Closure::default();
    let mut dep_set: BTreeSet<String> = BTreeSet::new();
    let mut copied_set: BTreeSet<String> = BTreeSet::new();
    let mut include_seen: BTreeSet<String> = BTreeSet::new();

    closure.deps.push(entry_file.to_string());
    dep_set.insert(entry_file.to_string());

    // include closure from one file located at `folder_dir` inside the unit
    let process_includes = |start_repo: &str,
                                start_folder_dir: &str,
                                closure: &mut Closure,
                                dep_set: &mut BTreeSet<String>,
                                copied_set: &mut BTreeSet<String>,
                                include_seen: &mut BTreeSet<String>,
                                collect_lines: bool| {
        let mut queue: VecDeque<(String, String)> = VecDeque::new();
        queue.push_back((start_repo.to_string(), start_folder_dir.to_string()));
        let mut first = true;
        while let Some((repo_path, folder_dir)) = queue.pop_front() {
            let src = &ctx.sources[&repo_path];
            let (tokens, _) = lex(src);
            let incs: Vec<IncludeDirective> = includes(src, &tokens);
            for inc in incs {
                if first && collect_lines && !closure.include_lines.contains(&inc.line) {
                    closure.include_lines.push(inc.line.clone());
                }
                if !inc.quoted {
                    continue;
                }
                match resolve_include(ctx, &repo_path, &inc.path) {
                    Some(resolved) => {
                        if !dep_set.contains(&resolved) {
                            dep_set.insert(resolved.clone());
                            closure.deps.push(resolved.clone());
                        }
                        let target = normalize_rel(&join_rel(&folder_dir, &inc.path));
                        match target {
                            Some(target) if !target.is_empty() => {
                                if copied_set.insert(resolved.clone()) {
                                    closure.copied_headers.push(CopiedHeader {
                                        repo_path: resolved.clone(),
                                        folder_path: target.clone(),
                                    });
                                    if include_seen.insert(resolved.clone()) {
                                        queue.push_back((resolved, parent_dir(&target).to_string()));
                                    }
                                }
                            }
                            _ => {
                                closure.diagnostics.push(format!(
                                    "include \"{}\" from {} escapes the unit folder; not copied",
                                    inc.path, repo_path
                                ));
                            }
                        }
                    }
                    None => {
                        closure.diagnostics.push(format!(
                            "unresolved include \"{}\" from {}; line retained",
                            inc.path, repo_path
                        ));
                    }
                }
            }
            first = false;
        }
    };

    process_includes(
        entry_file,
        "",
        &mut closure,
        &mut dep_set,
        &mut copied_set,
        &mut include_seen,
        true,
    );

    // call closure over identifier tokens in reached bodies
    let entry_decl = ctx.decl(entry_file, entry_idx);
    let entry_src = &ctx.sources[entry_file];
    let mut frontier: VecDeque<String> = scan::ident_tokens_in_range(
        entry_src,
        entry_decl.body_start,
        entry_decl.body_end,
    )
    .into_iter()
    .collect();

    let mut reached: BTreeSet<(String, usize)> = BTreeSet::new();
    let mut called_names: BTreeSet<String> = BTreeSet::new();

    while let Some(name) = frontier.pop_front() {
        if !called_names.insert(name.clone()) {
            continue;
        }
        let Some(defs) = ctx.device_index.get(&name) else {
            continue;
        };
        for (file, decl_idx) in defs {
            if !reached.insert((file.clone(), *decl_idx)) {
                continue;
            }
            let device_ref = DeviceRef {
                file: file.clone(),
                decl_index: *decl_idx,
                name: name.clone(),
            };
            closure.device_fns.push(device_ref.clone());

            if !dep_set.contains(file) {
                dep_set.insert(file.clone());
                closure.deps.push(file.clone());
            }

            let inline = file == entry_file || !copied_set.contains(file);
            if inline {
                closure.inlined.push(device_ref);
                if file != entry_file {
                    // a donor source file: carry its include lines and pull
                    // its headers into the folder
                    process_includes(
                        file,
                        "",
                        &mut closure,
                        &mut dep_set,
                        &mut copied_set,
                        &mut include_seen,
                        true,
                    );
                }
            }

            let decl = ctx.decl(file, *decl_idx);
            let body_idents =
                scan::ident_tokens_in_range(&ctx.sources[file], decl.body_start, decl.body_end);
            for ident in body_idents {
                frontier.push_back(ident);
            }
        }
    }

    closure
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Isolated,
    Templated,
    Failed,
}

/// One extraction manifest record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: String,
    pub status: UnitStatus,
    pub function: String,
    pub repo_index: usize,
    pub source: String,
    pub deps: Vec<String>,
    pub device_fns: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl UnitRecord {
    pub fn buildable(&self) -> bool {
        self.status == UnitStatus::Isolated
    }
}

/// The `params.json` schema written into each unit folder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamsManifest {
    pub function: String,
    pub params: Vec<ParamSpec>,
}

fn sanitize_id_component(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn unit_id(repo_index: usize, rel_path: &str, function: &str) -> String {
    format!(
        "r{}__{}__{}",
        repo_index,
        sanitize_id_component(rel_path),
        sanitize_id_component(function)
    )
}

fn flags_for_kernel_source(text: &str) -> Vec<String> {
    let mut flags = Vec::new();
    let (tokens, _) = lex(text);
    for window in tokens.windows(2) {
        if window[0].kind == TokenKind::Ident {
            let word = window[0].text(text);
            if word == "texture" && window[1].is_punct(b'<') && !flags.contains(&"texture".to_string())
            {
                flags.push("texture".to_string());
            }
            if word == "extern"
                && window[1].kind == TokenKind::Ident
                && window[1].text(text) == "__shared__"
                && !flags.contains(&"extern_shared".to_string())
            {
                flags.push("extern_shared".to_string());
            }
        }
    }
    flags
}

/// Assemble the `kernel.cu` text for a unit: include lines, forward
/// declarations for inlined device functions, the inlined definitions, and
/// the global function itself, all verbatim from the originals.
fn assemble_kernel_source(ctx: &RepoContext, entry_file: &str, entry_idx: usize, closure: &Closure) -> String {
    let mut out = String::new();
    for line in &closure.include_lines {
        out.push_str(line);
        out.push('\n');
    }
    if !closure.include_lines.is_empty() {
        out.push('\n');
    }

    if !closure.inlined.is_empty() {
        for device_ref in &closure.inlined {
            let decl = ctx.decl(&device_ref.file, device_ref.decl_index);
            out.push_str(decl.signature_text(&ctx.sources[&device_ref.file]));
            out.push_str(";\n");
        }
        out.push('\n');
        for device_ref in &closure.inlined {
            let decl = ctx.decl(&device_ref.file, device_ref.decl_index);
            out.push_str(decl.decl_text(&ctx.sources[&device_ref.file]));
            out.push_str("\n\n");
        }
    }

    let entry = ctx.decl(entry_file, entry_idx);
    out.push_str(entry.decl_text(&ctx.sources[entry_file]));
    out.push('\n');
    out
}

/// Write one isolated unit folder. Returns the manifest record; collisions
/// are retried once with a numeric suffix, then recorded as failed.
pub fn isolate(
    ctx: &RepoContext,
    entry_file: &str,
    entry_idx: usize,
    closure: &Closure,
    units_root: &Path,
    used_ids: &mut BTreeSet<String>,
) -> Result<UnitRecord> {
    let entry = ctx.decl(entry_file, entry_idx);
    let base_id = unit_id(ctx.repo_index, entry_file, &entry.name);

    let mut id = base_id.clone();
    if !used_ids.insert(id.clone()) {
        id = format!("{base_id}__2");
        if !used_ids.insert(id.clone()) {
            return Ok(UnitRecord {
                id: base_id.clone(),
                status: UnitStatus::Failed,
                function: entry.name.clone(),
                repo_index: ctx.repo_index,
                source: entry_file.to_string(),
                deps: Vec::new(),
                device_fns: Vec::new(),
                flags: Vec::new(),
                diagnostics: vec![format!("unit id collision on {base_id} after retry")],
            });
        }
    }

    let folder = units_root.join(&id);
    if folder.exists() {
        fs::remove_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;
    }
    fs::create_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;

    let kernel_src = assemble_kernel_source(ctx, entry_file, entry_idx, closure);
    let kernel_path = folder.join("kernel.cu");
    fs::write(&kernel_path, &kernel_src).map_err(|e| Error::io(&kernel_path, e))?;

    for header in &closure.copied_headers {
        let target = folder.join(&header.folder_path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&target, ctx.sources[&header.repo_path].as_bytes())
            .map_err(|e| Error::io(&target, e))?;
    }

    let manifest = ParamsManifest {
        function: entry.name.clone(),
        params: entry.params.clone(),
    };
    let params_path = folder.join("params.json");
    let mut params_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Dataset(format!("serialize params.json: {e}")))?;
    params_json.push('\n');
    fs::write(&params_path, params_json).map_err(|e| Error::io(&params_path, e))?;

    let mut deps = closure.deps.clone();
    deps.sort();
    deps.dedup();
    let mut device_fns: Vec<String> =
        closure.device_fns.iter().map(|d| d.name.clone()).collect();
    device_fns.sort();
    device_fns.dedup();

    let mut flags = flags_for_kernel_source(&kernel_src);
    if entry.launch_bounds {
        flags.push("launch_bounds".to_string());
    }

    let mut diagnostics = closure.diagnostics.clone();
    diagnostics.extend(ctx.scans[entry_file].diagnostics.iter().cloned());

    let status = if entry.templated {
        UnitStatus::Templated
    } else {
        UnitStatus::Isolated
    };

    Ok(UnitRecord {
        id,
        status,
        function: entry.name.clone(),
        repo_index: ctx.repo_index,
        source: entry_file.to_string(),
        deps,
        device_fns,
        flags,
        diagnostics,
    })
}

/// Extract every global function of one repository into unit folders.
pub fn extract_repo(
    repo_root: &Path,
    repo_index: usize,
    units_root: &Path,
) -> Result<Vec<UnitRecord>> {
    let ctx = RepoContext::load(repo_root, repo_index)?;
    let mut used_ids = BTreeSet::new();
    let mut records = Vec::new();
    for file in &ctx.files {
        let decl_count = ctx.scans[&file.relative_path].decls.len();
        for idx in 0..decl_count {
            if ctx.decl(&file.relative_path, idx).qualifier != Qualifier::Global {
                continue;
            }
            let closure = compute_closure(&ctx, &file.relative_path, idx);
            let record = isolate(
                &ctx,
                &file.relative_path,
                idx,
                &closure,
                units_root,
                &mut used_ids,
            )?;
            records.push(record);
        }
    }
    Ok(records)
}

/// Numerically-indexed repo directories under `repos_root`.
pub fn indexed_repo_dirs(repos_root: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut dirs = Vec::new();
    let entries = fs::read_dir(repos_root).map_err(|e| Error::io(repos_root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(repos_root, e))?;
        if !entry.file_type().map_err(|e| Error::io(repos_root, e))?.is_dir() {
            continue;
        }
        if let Ok(idx) = entry.file_name().to_string_lossy().parse::<usize>() {
            dirs.push((idx, entry.path()));
        }
    }
    dirs.sort_by_key(|(idx, _)| *idx);
    Ok(dirs)
}

// re-export the pieces callers need
pub use scan::{scan_source as scan_functions, ParamSpec as KernelParam};

/// A kernel unit as later pipeline stages see it: the isolated folder plus
/// its parameter manifest.
#[derive(Debug, Clone)]
pub struct KernelUnit {
    pub id: String,
    pub function_name: String,
    pub repo_index: usize,
    pub folder: PathBuf,
    pub params: Vec<ParamSpec>,
}

impl KernelUnit {
    /// Load a unit from its folder by reading `params.json`.
    pub fn load(id: &str, repo_index: usize, folder: &Path) -> Result<Self> {
        let params_path = folder.join("params.json");
        let text = fs::read_to_string(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let manifest: ParamsManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", params_path.display())))?;
        Ok(KernelUnit {
            id: id.to_string(),
            function_name: manifest.function,
            repo_index,
            folder: folder.to_path_buf(),
            params: manifest.params,
        })
    }
}

pub fn source_kind_label(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::C => "c",
        SourceKind::Cpp => "cpp",
        SourceKind::Cu => "cu",
        SourceKind::Header => "header",
    }
}
