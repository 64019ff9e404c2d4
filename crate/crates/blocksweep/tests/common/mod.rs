//! Shared helpers for the integration and acceptance suites: fixture corpus
//! access, the g++-based CUDA stub compiler template, synthetic measurement
//! pools, and an independent brute-force recomputation of every analysis
//! report field.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blocksweep::analysis::{AnalysisOptions, AnalysisReport};
use blocksweep::backend::{BackendKind, RunStatus};
use blocksweep::sweep::{BlockConfig, DatasetRow, EPOCH_TIMESTAMP};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture_corpus_repos() -> PathBuf {
    manifest_dir().join("tests/fixtures/corpus/repos")
}

pub fn expected_units_path() -> PathBuf {
    manifest_dir().join("tests/fixtures/expected_units.json")
}

/// Copy the committed fixture corpus into a scratch corpus root.
pub fn copy_fixture_corpus(dest_root: &Path) {
    copy_tree(&fixture_corpus_repos(), &dest_root.join("repos"));
}

pub fn copy_tree(src: &Path, dest: &Path) {
    fs::create_dir_all(dest).unwrap();
    for entry in walk_sorted(src) {
        let rel = entry.strip_prefix(src).unwrap();
        let target = dest.join(rel);
        if entry.is_dir() {
            fs::create_dir_all(&target).unwrap();
        } else {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).unwrap();
            }
            fs::copy(&entry, &target).unwrap();
        }
    }
}

fn walk_sorted(root: &Path) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for entry in entries {
            if entry.is_dir() {
                stack.push(entry.clone());
            }
            paths.push(entry);
        }
    }
    paths
}

/// Compiler template compiling generated harnesses as plain C++ against the
/// bundled CUDA stub, so the real-backend path runs without nvcc.
pub fn stub_compiler_template() -> String {
    format!(
        "g++ -x c++ -include {} {{src}} -o {{out}} -I {{include_dir}}",
        manifest_dir().join("assets/cuda_stub.h").display()
    )
}

/// Right-skewed measurement pool: tight bulk around 10 ms with a 2% rate of
/// large outliers, mirroring GPU timing noise.
pub fn skewed_outlier_pool(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::with_capacity(n);
    while pool.len() < n {
        if rng.gen::<f64>() < 0.02 {
            // outlier: 5x to 50x the nominal runtime
            pool.push(10.0 * rng.gen_range(5.0..50.0));
        } else {
            // bulk: N(10, 0.25) via Box-Muller, clamped positive
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            pool.push((10.0 + 0.25 * z).max(0.1));
        }
    }
    pool
}

/// Build a dataset row without running anything.
pub fn make_row(
    unit_id: &str,
    width: u32,
    height: u32,
    block: BlockConfig,
    runtime_ms: f64,
    status: RunStatus,
) -> DatasetRow {
    DatasetRow {
        unit_id: unit_id.to_string(),
        function_name: unit_id.to_string(),
        repo_index: 0,
        matrix_width: width,
        matrix_height: height,
        block_x: block.x(),
        block_y: block.y(),
        block_z: block.z(),
        runtime_ms,
        status,
        device_id: 0,
        backend: BackendKind::Simulated,
        timestamp: EPOCH_TIMESTAMP.to_string(),
    }
}

// ---------------------------------------------------------------------------
// independent brute-force recomputation of the analysis report
//
// Deliberately written with flat linear scans over the raw rows — no shared
// slice machinery — so it can disagree with the implementation.

fn bf_block_order_key(b: &(u32, u32, u32)) -> (u32, u32, u32, u32) {
    (b.0 * b.1 * b.2, b.0, b.1, b.2)
}

fn bf_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    let idx = rank.clamp(1, n) - 1;
    sorted[idx]
}

/// Recompute every report field from scratch in O(n^2)-ish scans and check
/// it against the implementation's report, exactly (tolerance zero).
/// Returns a list of mismatch descriptions, empty when everything agrees.
pub fn brute_force_mismatches(
    rows: &[DatasetRow],
    opts: &AnalysisOptions,
    report: &AnalysisReport,
) -> Vec<String> {
    let mut problems = Vec::new();
    // numeric comparisons collect into a separate list merged at the end,
    // so the closure and the direct pushes don't fight over one borrow
    let mut pairs: Vec<(String, f64, f64)> = Vec::new();
    let mut check = |name: &str, expected: f64, actual: f64| {
        pairs.push((name.to_string(), expected, actual));
    };

    let expected_blocks: Vec<(u32, u32, u32)> =
        opts.blocks.iter().map(|b| (b.x(), b.y(), b.z())).collect();
    let default = (
        opts.default_block.x(),
        opts.default_block.y(),
        opts.default_block.z(),
    );

    // distinct slice keys, sorted
    let mut keys: Vec<(String, u32, u32)> = Vec::new();
    for row in rows {
        let key = (row.unit_id.clone(), row.matrix_width, row.matrix_height);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort();

    // complete slices: all expected blocks present with finite positive ok
    // runtimes
    let slice_runtime = |key: &(String, u32, u32), block: &(u32, u32, u32)| -> Option<f64> {
        for row in rows {
            if row.unit_id == key.0
                && row.matrix_width == key.1
                && row.matrix_height == key.2
                && (row.block_x, row.block_y, row.block_z) == *block
                && matches!(row.status, RunStatus::Ok)
                && row.runtime_ms.is_finite()
                && row.runtime_ms > 0.0
            {
                return Some(row.runtime_ms);
            }
        }
        None
    };

    let mut complete_keys: Vec<(String, u32, u32)> = Vec::new();
    for key in &keys {
        if expected_blocks.iter().all(|b| slice_runtime(key, b).is_some()) {
            complete_keys.push(key.clone());
        }
    }

    if report.n_slices_total != keys.len() {
        problems.push(format!(
            "n_slices_total: brute force {} != report {}",
            keys.len(),
            report.n_slices_total
        ));
    }
    if report.n_slices_complete != complete_keys.len() {
        problems.push(format!(
            "n_slices_complete: brute force {} != report {}",
            complete_keys.len(),
            report.n_slices_complete
        ));
    }

    let best_of = |key: &(String, u32, u32)| -> (u32, u32, u32) {
        let mut best = expected_blocks[0];
        let mut best_rt = slice_runtime(key, &best).unwrap();
        for b in &expected_blocks[1..] {
            let rt = slice_runtime(key, b).unwrap();
            if rt < best_rt || (rt == best_rt && bf_block_order_key(b) < bf_block_order_key(&best))
            {
                best = *b;
                best_rt = rt;
            }
        }
        best
    };

    let mut perf_vals: Vec<f64> = Vec::new();
    let mut gain_vals: Vec<f64> = Vec::new();
    let mut not_best = 0usize;
    for key in &complete_keys {
        let best = best_of(key);
        let best_rt = slice_runtime(key, &best).unwrap();
        let default_rt = slice_runtime(key, &default).unwrap();
        let perf = best_rt / default_rt;
        perf_vals.push(perf);
        gain_vals.push(1.0 / perf - 1.0);
        if best != default {
            not_best += 1;
        }
    }

    if !complete_keys.is_empty() {
        check(
            "frac_default_not_best",
            not_best as f64 / complete_keys.len() as f64,
            report.frac_default_not_best.unwrap_or(f64::NAN),
        );
        check(
            "mean_perf_default",
            perf_vals.iter().sum::<f64>() / perf_vals.len() as f64,
            report.mean_perf_default.unwrap_or(f64::NAN),
        );
        check(
            "mean_gain_optimal",
            gain_vals.iter().sum::<f64>() / gain_vals.len() as f64,
            report.mean_gain_optimal.unwrap_or(f64::NAN),
        );
        check(
            "frac_perf_below",
            perf_vals.iter().filter(|p| **p < opts.perf_threshold).count() as f64
                / perf_vals.len() as f64,
            report.frac_perf_below.fraction,
        );
        check(
            "frac_gain_above",
            gain_vals.iter().filter(|g| **g > opts.gain_threshold).count() as f64
                / gain_vals.len() as f64,
            report.frac_gain_above.fraction,
        );

        let mut sorted = perf_vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for point in &report.perf_quantiles {
            check(
                &format!("perf_quantile q={}", point.q),
                bf_quantile(&sorted, point.q),
                point.value,
            );
        }
    }

    // block profiles per matrix
    let mut matrices: Vec<(u32, u32)> = complete_keys.iter().map(|k| (k.1, k.2)).collect();
    matrices.sort();
    matrices.dedup();
    if matrices.len() != report.block_profiles.len() {
        problems.push(format!(
            "block_profiles count: brute force {} != report {}",
            matrices.len(),
            report.block_profiles.len()
        ));
    }
    for (w, h) in matrices {
        let label = format!("{w}x{h}");
        let Some(profile) = report.block_profiles.iter().find(|p| p.matrix == label) else {
            problems.push(format!("block profile for {label} missing from report"));
            continue;
        };
        let selected: Vec<&(String, u32, u32)> = complete_keys
            .iter()
            .filter(|k| k.1 == w && k.2 == h)
            .collect();
        for (block, entry) in expected_blocks.iter().zip(&profile.entries) {
            let mut sum = 0.0;
            for key in &selected {
                let best = best_of(key);
                let best_rt = slice_runtime(key, &best).unwrap();
                sum += slice_runtime(key, block).unwrap() / best_rt;
            }
            check(
                &format!("profile {label} block {:?}", block),
                sum / selected.len() as f64,
                entry.mean_normalized_runtime,
            );
        }
    }

    // per-kernel roll-up
    let mut units: Vec<String> = complete_keys.iter().map(|k| k.0.clone()).collect();
    units.sort();
    units.dedup();
    if units.len() != report.per_kernel.len() {
        problems.push(format!(
            "per_kernel count: brute force {} != report {}",
            units.len(),
            report.per_kernel.len()
        ));
    }
    for unit in units {
        let Some(summary) = report.per_kernel.iter().find(|k| k.unit_id == unit) else {
            problems.push(format!("per-kernel summary for {unit} missing"));
            continue;
        };
        let mine: Vec<&(String, u32, u32)> =
            complete_keys.iter().filter(|k| k.0 == unit).collect();
        let mut sum = 0.0;
        let mut nb = 0usize;
        for key in &mine {
            let best = best_of(key);
            let best_rt = slice_runtime(key, &best).unwrap();
            sum += best_rt / slice_runtime(key, &default).unwrap();
            if best != default {
                nb += 1;
            }
        }
        check(
            &format!("per_kernel {unit} mean_perf_default"),
            sum / mine.len() as f64,
            summary.mean_perf_default,
        );
        check(
            &format!("per_kernel {unit} frac_default_not_best"),
            nb as f64 / mine.len() as f64,
            summary.frac_default_not_best,
        );
    }

    drop(check);
    for (name, expected, actual) in pairs {
        // exact: both sides must compute identical IEEE values
        if !(expected == actual || (expected.is_nan() && actual.is_nan())) {
            problems.push(format!("{name}: brute force {expected} != report {actual}"));
        }
    }
    problems
}
