//! Stage orchestration over a corpus root directory.
//!
//! Layout under the corpus root:
//!   repos/<index>/...        mined (or pre-seeded) repository trees
//!   mine_manifest.jsonl      one record per repository URL
//!   units/<unit_id>/...      isolated kernel units
//!   extract_manifest.jsonl   one record per candidate kernel
//!   build_manifest.jsonl     one record per build attempt
//!   dataset.jsonl            streaming sweep rows (resume log)
//!   dataset.csv              compacted dataset
//!   report.json, profile_<matrix>.csv   analysis outputs

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::backend::{
    compile_unit, BuildResult, BuildStatus, ExecutorBackend, RealBackend, SimulatedModel,
};
use crate::config::PipelineConfig;
use crate::corpus::{self, ManifestWriter};
use crate::error::{Error, Result};
use crate::extract::{extract_repo, indexed_repo_dirs, KernelUnit, UnitRecord};
use crate::harness::{generate_main, LaunchConfig, RoleTable};
use crate::sweep::{self, SweepConfig, SweepSpace};

pub fn repos_root(corpus_root: &Path) -> PathBuf {
    corpus_root.join("repos")
}

pub fn units_root(corpus_root: &Path) -> PathBuf {
    corpus_root.join("units")
}

pub fn mine_manifest_path(corpus_root: &Path) -> PathBuf {
    corpus_root.join("mine_manifest.jsonl")
}

pub fn extract_manifest_path(corpus_root: &Path) -> PathBuf {
    corpus_root.join("extract_manifest.jsonl")
}

pub fn build_manifest_path(corpus_root: &Path) -> PathBuf {
    corpus_root.join("build_manifest.jsonl")
}

pub fn dataset_jsonl_path(corpus_root: &Path) -> PathBuf {
    corpus_root.join("dataset.jsonl")
}

pub fn dataset_csv_path(corpus_root: &Path) -> PathBuf {
    corpus_root.join("dataset.csv")
}

/// Mine: fetch every repository from the URL list and prune the working
/// copies to source files. Returns (downloaded, missing, failed).
pub fn stage_mine(cfg: &PipelineConfig) -> Result<(usize, usize, usize)> {
    let Some(repo_list) = &cfg.repo_list else {
        return Err(Error::Config("mine requires a repo list file".into()));
    };
    let refs = corpus::load_repo_list(repo_list)?;
    let dest = repos_root(&cfg.corpus_root);
    let mut manifest = ManifestWriter::create(&mine_manifest_path(&cfg.corpus_root))?;

    let results = corpus::fetch_all(refs, &dest, cfg.workers, |repo| {
        let _ = manifest.append(repo);
    })?;

    let mut downloaded = 0;
    let mut missing = 0;
    let mut failed = 0;
    for repo in &results {
        match repo.status {
            corpus::FetchStatus::Downloaded => {
                downloaded += 1;
                corpus::filter_sources(&dest.join(repo.index.to_string()), repo.index)?;
            }
            corpus::FetchStatus::Missing => missing += 1,
            _ => failed += 1,
        }
    }
    Ok((downloaded, missing, failed))
}

/// Extract: isolate every global function of every repo under
/// `repos/<index>/` into `units/<id>/`, writing the extraction manifest.
pub fn stage_extract(corpus_root: &Path) -> Result<Vec<UnitRecord>> {
    let repos = repos_root(corpus_root);
    if !repos.is_dir() {
        return Err(Error::Config(format!(
            "no repos/ directory under {}",
            corpus_root.display()
        )));
    }
    let units = units_root(corpus_root);
    fs::create_dir_all(&units).map_err(|e| Error::io(&units, e))?;

    let mut manifest = ManifestWriter::create(&extract_manifest_path(corpus_root))?;
    let mut all = Vec::new();
    for (repo_index, repo_dir) in indexed_repo_dirs(&repos)? {
        let records = extract_repo(&repo_dir, repo_index, &units)?;
        for record in &records {
            manifest.append(record)?;
        }
        all.extend(records);
    }
    Ok(all)
}

/// Load the units a later stage should operate on, filtered by a manifest
/// predicate.
pub fn load_units(
    corpus_root: &Path,
    keep: impl Fn(&UnitRecord) -> bool,
) -> Result<Vec<KernelUnit>> {
    let records: Vec<UnitRecord> = corpus::read_jsonl(&extract_manifest_path(corpus_root))?;
    let units_dir = units_root(corpus_root);
    let mut units = Vec::new();
    for record in records.into_iter().filter(|r| keep(r)) {
        let folder = units_dir.join(&record.id);
        units.push(KernelUnit::load(&record.id, record.repo_index, &folder)?);
    }
    Ok(units)
}

fn executor_backend(cfg: &PipelineConfig) -> ExecutorBackend {
    match cfg.backend {
        crate::backend::BackendKind::Real => ExecutorBackend::Real(RealBackend {
            compiler_template: cfg.compiler_template.clone(),
        }),
        crate::backend::BackendKind::Simulated => {
            ExecutorBackend::Simulated(SimulatedModel::new(cfg.seed))
        }
    }
}

/// Build: generate a validation harness for every buildable unit and run
/// the compile/fix loop. The validation launch is the first matrix x first
/// block of the configured space.
pub fn stage_build(cfg: &PipelineConfig) -> Result<Vec<BuildResult>> {
    let corpus_root = &cfg.corpus_root;
    let records: Vec<UnitRecord> = corpus::read_jsonl(&extract_manifest_path(corpus_root))?;
    let units_dir = units_root(corpus_root);
    let backend = executor_backend(cfg);
    let table = RoleTable::default();

    let matrix = *cfg
        .matrices
        .first()
        .ok_or_else(|| Error::Config("empty matrix set".into()))?;
    let block = *cfg
        .blocks
        .first()
        .ok_or_else(|| Error::Config("empty block set".into()))?;
    let launch = LaunchConfig::new(block, matrix);

    let buildable: Vec<UnitRecord> = records.into_iter().filter(|r| r.buildable()).collect();

    // compilation is parallel across units up to the worker limit; the
    // manifest writer is the serialization point
    let queue: Mutex<VecDeque<UnitRecord>> = Mutex::new(buildable.into_iter().collect());
    let results: Mutex<Vec<BuildResult>> = Mutex::new(Vec::new());
    let workers = cfg.workers.max(1);

    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for _ in 0..workers {
            handles.push(scope.spawn(|| -> Result<()> {
                loop {
                    let next = queue.lock().expect("queue poisoned").pop_front();
                    let Some(record) = next else { break };
                    let folder = units_dir.join(&record.id);
                    let unit = KernelUnit::load(&record.id, record.repo_index, &folder)?;
                    let result = match generate_main(&unit, &launch, &table) {
                        Ok(main_src) => {
                            let main_path = folder.join("main.cu");
                            fs::write(&main_path, main_src)
                                .map_err(|e| Error::io(&main_path, e))?;
                            let repo_dir =
                                repos_root(&cfg.corpus_root).join(record.repo_index.to_string());
                            compile_unit(&unit, &repo_dir, &backend, cfg.max_fix_attempts)?
                        }
                        Err(Error::Harness(reason)) => BuildResult {
                            unit_id: record.id.clone(),
                            status: BuildStatus::HarnessFailed,
                            attempts: 0,
                            diagnostics: vec![reason],
                            applied_rules: Vec::new(),
                        },
                        Err(other) => return Err(other),
                    };
                    results.lock().expect("results poisoned").push(result);
                }
                Ok(())
            }));
        }
        for handle in handles {
            handle.join().expect("build worker panicked")?;
        }
        Ok(())
    })?;

    let mut results = results.into_inner().expect("results poisoned");
    results.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));

    let mut manifest = ManifestWriter::create(&build_manifest_path(corpus_root))?;
    for result in &results {
        manifest.append(result)?;
    }
    Ok(results)
}

/// Sweep: run every built-ok unit over the configured space, then compact
/// the dataset CSV. Returns (appended rows, total rows).
pub fn stage_sweep(cfg: &PipelineConfig) -> Result<(usize, usize)> {
    let corpus_root = &cfg.corpus_root;
    let build_results: Vec<BuildResult> = corpus::read_jsonl(&build_manifest_path(corpus_root))?;
    let ok_ids: std::collections::BTreeSet<String> = build_results
        .into_iter()
        .filter(|r| matches!(r.status, BuildStatus::Ok | BuildStatus::FixedThenOk))
        .map(|r| r.unit_id)
        .collect();

    let units = load_units(corpus_root, |r| ok_ids.contains(&r.id))?;
    let space = SweepSpace::new(cfg.matrices.clone(), cfg.blocks.clone())?;
    let backend = executor_backend(cfg);
    let sweep_cfg = SweepConfig {
        timeout: cfg.timeout(),
        repeats: cfg.repeats,
        strategy: cfg.strategy,
        workers: cfg.workers,
        device_ids: cfg.device_ids.clone(),
        timestamps: cfg.timestamps,
        role_table: RoleTable::default(),
    };

    let jsonl = dataset_jsonl_path(corpus_root);
    let appended = sweep::run_sweep(&units, &space, &backend, &sweep_cfg, &jsonl)?;
    let rows = sweep::compact_to_csv(&jsonl, &dataset_csv_path(corpus_root))?;
    Ok((appended, rows.len()))
}

/// Analyze: read a dataset CSV and emit `report.json` plus per-matrix
/// profiles into `out_dir`.
pub fn stage_analyze(
    input_csv: &Path,
    out_dir: &Path,
    opts: &crate::analysis::AnalysisOptions,
) -> Result<crate::analysis::AnalysisReport> {
    let rows = sweep::load_dataset_csv(input_csv)?;
    let report = crate::analysis::analyze(&rows, opts)?;
    crate::analysis::write_report(&report, out_dir)?;
    Ok(report)
}
