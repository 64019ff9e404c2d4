//! Dataset analysis: per-kernel best blocks, largest-vs-best performance,
//! gain distributions, and per-matrix block profiles.
//!
//! "Performance" of a block within a slice is best-runtime / block-runtime,
//! so 1.0 means the block ties the best. "Gain" of the optimal block over a
//! default is default-runtime / best-runtime - 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::RunStatus;
use crate::error::{Error, Result};
use crate::harness::MatrixSize;
use crate::sweep::{canonical_blocks, BlockConfig, DatasetRow};

/// All ok measurements for one (kernel, matrix) pair.
#[derive(Debug, Clone)]
pub struct KernelSlice {
    pub unit_id: String,
    pub matrix: MatrixSize,
    pub runtimes: BTreeMap<BlockConfig, f64>,
}

impl KernelSlice {
    /// Complete iff every expected block has a finite runtime.
    pub fn is_complete(&self, blocks: &[BlockConfig]) -> bool {
        blocks.iter().all(|b| {
            self.runtimes
                .get(b)
                .map(|v| v.is_finite() && *v > 0.0)
                .unwrap_or(false)
        })
    }
}

/// Group ok rows into slices keyed by (unit, matrix). Non-ok rows are
/// ignored here; they only make slices incomplete.
pub fn build_slices(rows: &[DatasetRow]) -> Result<BTreeMap<(String, u32, u32), KernelSlice>> {
    let mut slices: BTreeMap<(String, u32, u32), KernelSlice> = BTreeMap::new();
    for row in rows {
        let key = (row.unit_id.clone(), row.matrix_width, row.matrix_height);
        let slice = match slices.entry(key) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(KernelSlice {
                unit_id: row.unit_id.clone(),
                matrix: row.matrix()?,
                runtimes: BTreeMap::new(),
            }),
        };
        if row.status == RunStatus::Ok && row.runtime_ms.is_finite() {
            slice.runtimes.insert(row.block()?, row.runtime_ms);
        }
    }
    Ok(slices)
}

/// The block with minimal runtime; ties break to the smaller thread count,
/// then lexicographically on (x, y, z) — exactly the `BlockConfig` order.
pub fn best_block(slice: &KernelSlice) -> Option<BlockConfig> {
    slice
        .runtimes
        .iter()
        .min_by(|(ba, ra), (bb, rb)| {
            ra.partial_cmp(rb)
                .expect("finite runtimes")
                .then_with(|| ba.cmp(bb))
        })
        .map(|(b, _)| *b)
}

/// best runtime / block runtime, in (0, 1]; 1.0 iff the block is (tied)
/// best.
pub fn performance(slice: &KernelSlice, block: &BlockConfig) -> Option<f64> {
    let best = best_block(slice)?;
    let best_runtime = slice.runtimes[&best];
    slice.runtimes.get(block).map(|rt| best_runtime / rt)
}

/// Analysis settings; everything is parametric in the block set.
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Blocks a slice must cover to be complete.
    pub blocks: Vec<BlockConfig>,
    /// The comparison default, conventionally the largest block.
    pub default_block: BlockConfig,
    /// Report the fraction of slices with performance(default) below this.
    pub perf_threshold: f64,
    /// Report the fraction of slices with gain above this.
    pub gain_threshold: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            blocks: canonical_blocks(),
            default_block: BlockConfig::new(1024, 1, 1).expect("legal"),
            perf_threshold: 0.85,
            gain_threshold: 0.20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuantilePoint {
    pub q: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThresholdFraction {
    pub threshold: f64,
    pub fraction: f64,
}

/// Per-kernel roll-up over that kernel's complete slices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelSummary {
    pub unit_id: String,
    pub n_slices_complete: usize,
    pub mean_perf_default: f64,
    pub frac_default_not_best: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlockProfileEntry {
    pub block: String,
    pub mean_normalized_runtime: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixProfile {
    pub matrix: String,
    pub n_slices: usize,
    pub entries: Vec<BlockProfileEntry>,
}

/// Derived statistics over a dataset. Slice-level fields are `None` when no
/// slice is complete (the empty-report marker).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisReport {
    pub n_rows: usize,
    pub n_slices_total: usize,
    pub n_slices_complete: usize,
    pub n_slices_incomplete: usize,
    pub n_kernels: usize,
    /// Kernels contributing at least one complete slice.
    pub n_kernels_complete: usize,
    pub default_block: String,
    pub frac_default_not_best: Option<f64>,
    pub mean_perf_default: Option<f64>,
    pub perf_quantiles: Vec<QuantilePoint>,
    pub frac_perf_below: ThresholdFraction,
    pub mean_gain_optimal: Option<f64>,
    pub frac_gain_above: ThresholdFraction,
    pub per_kernel: Vec<KernelSummary>,
    pub block_profiles: Vec<MatrixProfile>,
}

const QUANTILES: [f64; 9] = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99];

/// Nearest-rank quantile on a pre-sorted ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Compute the full analysis report.
pub fn analyze(rows: &[DatasetRow], opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let slices = build_slices(rows)?;
    let n_slices_total = slices.len();

    let mut kernels: BTreeMap<String, (usize, Vec<f64>, usize)> = BTreeMap::new();
    for slice in slices.values() {
        kernels.entry(slice.unit_id.clone()).or_default();
    }
    let n_kernels = kernels.len();

    // complete slices in deterministic (unit, matrix) order
    let complete: Vec<&KernelSlice> = slices
        .values()
        .filter(|s| s.is_complete(&opts.blocks))
        .collect();
    let n_slices_complete = complete.len();

    let mut perf_default: Vec<f64> = Vec::with_capacity(complete.len());
    let mut gains: Vec<f64> = Vec::with_capacity(complete.len());
    let mut not_best = 0usize;
    for slice in &complete {
        let best = best_block(slice).expect("complete slice");
        let perf = performance(slice, &opts.default_block).expect("default in complete slice");
        perf_default.push(perf);
        gains.push(1.0 / perf - 1.0);
        if best != opts.default_block {
            not_best += 1;
        }

        let entry = kernels.entry(slice.unit_id.clone()).or_default();
        entry.0 += 1;
        entry.1.push(perf);
        if best != opts.default_block {
            entry.2 += 1;
        }
    }

    let mean = |vals: &[f64]| -> Option<f64> {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    let mut sorted_perf = perf_default.clone();
    sorted_perf.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let perf_quantiles = if sorted_perf.is_empty() {
        Vec::new()
    } else {
        QUANTILES
            .iter()
            .map(|q| QuantilePoint {
                q: *q,
                value: quantile_sorted(&sorted_perf, *q),
            })
            .collect()
    };

    let frac_below = if perf_default.is_empty() {
        0.0
    } else {
        perf_default.iter().filter(|p| **p < opts.perf_threshold).count() as f64
            / perf_default.len() as f64
    };
    let frac_gain = if gains.is_empty() {
        0.0
    } else {
        gains.iter().filter(|g| **g > opts.gain_threshold).count() as f64 / gains.len() as f64
    };

    let per_kernel: Vec<KernelSummary> = kernels
        .iter()
        .filter(|(_, (n, _, _))| *n > 0)
        .map(|(unit_id, (n, perfs, not_best))| KernelSummary {
            unit_id: unit_id.clone(),
            n_slices_complete: *n,
            mean_perf_default: perfs.iter().sum::<f64>() / *n as f64,
            frac_default_not_best: *not_best as f64 / *n as f64,
        })
        .collect();
    let n_kernels_complete = per_kernel.len();

    // per-matrix block profiles over complete slices
    let mut matrices: Vec<MatrixSize> = complete.iter().map(|s| s.matrix).collect();
    matrices.sort();
    matrices.dedup();
    let mut block_profiles = Vec::with_capacity(matrices.len());
    for matrix in matrices {
        let entries = block_profile_for(&complete, matrix, &opts.blocks);
        let n_slices = complete.iter().filter(|s| s.matrix == matrix).count();
        block_profiles.push(MatrixProfile {
            matrix: matrix.label(),
            n_slices,
            entries,
        });
    }

    Ok(AnalysisReport {
        n_rows: rows.len(),
        n_slices_total,
        n_slices_complete,
        n_slices_incomplete: n_slices_total - n_slices_complete,
        n_kernels,
        n_kernels_complete,
        default_block: opts.default_block.label(),
        frac_default_not_best: if complete.is_empty() {
            None
        } else {
            Some(not_best as f64 / complete.len() as f64)
        },
        mean_perf_default: mean(&perf_default),
        perf_quantiles,
        frac_perf_below: ThresholdFraction {
            threshold: opts.perf_threshold,
            fraction: frac_below,
        },
        mean_gain_optimal: mean(&gains),
        frac_gain_above: ThresholdFraction {
            threshold: opts.gain_threshold,
            fraction: frac_gain,
        },
        per_kernel,
        block_profiles,
    })
}

fn block_profile_for(
    complete: &[&KernelSlice],
    matrix: MatrixSize,
    blocks: &[BlockConfig],
) -> Vec<BlockProfileEntry> {
    let mut entries = Vec::with_capacity(blocks.len());
    let selected: Vec<&&KernelSlice> = complete.iter().filter(|s| s.matrix == matrix).collect();
    for block in blocks {
        let mut sum = 0.0;
        let mut n = 0usize;
        for slice in &selected {
            let best = best_block(slice).expect("complete slice");
            let best_runtime = slice.runtimes[&best];
            let rt = slice.runtimes[block];
            sum += rt / best_runtime;
            n += 1;
        }
        if n > 0 {
            entries.push(BlockProfileEntry {
                block: block.label(),
                mean_normalized_runtime: sum / n as f64,
            });
        }
    }
    entries
}

/// Mean normalized runtime (block runtime / best runtime) per block over
/// the complete slices of one matrix size.
pub fn block_profile(
    rows: &[DatasetRow],
    matrix: MatrixSize,
    blocks: &[BlockConfig],
) -> Result<Vec<(BlockConfig, f64)>> {
    let slices = build_slices(rows)?;
    let complete: Vec<&KernelSlice> = slices
        .values()
        .filter(|s| s.is_complete(blocks))
        .collect();
    let entries = block_profile_for(&complete, matrix, blocks);
    Ok(blocks
        .iter()
        .zip(entries)
        .map(|(b, e)| (*b, e.mean_normalized_runtime))
        .collect())
}

/// Write `report.json` plus one plot-ready `profile_<matrix>.csv` per
/// matrix (rows are blocks).
pub fn write_report(report: &AnalysisReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Dataset(format!("serialize report: {e}")))?;
    json.push('\n');
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;

    for profile in &report.block_profiles {
        let mut csv = String::from("block_x,block_y,block_z,threads,mean_normalized_runtime\n");
        for entry in &profile.entries {
            let block = BlockConfig::parse(&entry.block)?;
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                block.x(),
                block.y(),
                block.z(),
                block.threads(),
                entry.mean_normalized_runtime
            ));
        }
        let path = out_dir.join(format!("profile_{}.csv", profile.matrix));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendKind;
    use crate::sweep::EPOCH_TIMESTAMP;

    fn row(unit: &str, w: u32, h: u32, block: BlockConfig, runtime: f64) -> DatasetRow {
        DatasetRow {
            unit_id: unit.into(),
            function_name: "k".into(),
            repo_index: 0,
            matrix_width: w,
            matrix_height: h,
            block_x: block.x(),
            block_y: block.y(),
            block_z: block.z(),
            runtime_ms: runtime,
            status: if runtime.is_nan() {
                RunStatus::Timeout
            } else {
                RunStatus::Ok
            },
            device_id: 0,
            backend: BackendKind::Simulated,
            timestamp: EPOCH_TIMESTAMP.into(),
        }
    }

    fn full_slice_rows(unit: &str, runtime_of: impl Fn(&BlockConfig) -> f64) -> Vec<DatasetRow> {
        canonical_blocks()
            .into_iter()
            .map(|b| {
                let rt = runtime_of(&b);
                row(unit, 240, 240, b, rt)
            })
            .collect()
    }

    #[test]
    fn best_block_unique_minimum() {
        let target = BlockConfig::new(512, 1, 1).unwrap();
        let rows = full_slice_rows("u", |b| if *b == target { 1.0 } else { 2.0 + b.threads() as f64 });
        let slices = build_slices(&rows).unwrap();
        let slice = slices.values().next().unwrap();
        assert_eq!(best_block(slice), Some(target));
    }

    #[test]
    fn best_block_all_equal_breaks_to_8x8x1() {
        let rows = full_slice_rows("u", |_| 5.0);
        let slices = build_slices(&rows).unwrap();
        let slice = slices.values().next().unwrap();
        assert_eq!(best_block(slice), Some(BlockConfig::new(8, 8, 1).unwrap()));
    }

    #[test]
    fn performance_values() {
        let best = BlockConfig::new(64, 1, 1).unwrap();
        let probe = BlockConfig::new(128, 1, 1).unwrap();
        let rows = full_slice_rows("u", |b| {
            if *b == best {
                10.0
            } else if *b == probe {
                12.5
            } else {
                20.0
            }
        });
        let slices = build_slices(&rows).unwrap();
        let slice = slices.values().next().unwrap();
        assert_eq!(performance(slice, &best), Some(1.0));
        assert_eq!(performance(slice, &probe), Some(0.8));
    }

    #[test]
    fn default_always_best_gives_zero_gain() {
        let default = BlockConfig::new(1024, 1, 1).unwrap();
        let rows = full_slice_rows("u", |b| if *b == default { 1.0 } else { 3.0 });
        let report = analyze(&rows, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_slices_complete, 1);
        assert_eq!(report.frac_default_not_best, Some(0.0));
        assert_eq!(report.mean_perf_default, Some(1.0));
        assert_eq!(report.mean_gain_optimal, Some(0.0));
        assert_eq!(report.frac_gain_above.fraction, 0.0);
    }

    #[test]
    fn gain_arithmetic() {
        // default 12 ms, best 10 ms -> gain 0.2
        let default = BlockConfig::new(1024, 1, 1).unwrap();
        let best = BlockConfig::new(256, 1, 1).unwrap();
        let rows = full_slice_rows("u", |b| {
            if *b == best {
                10.0
            } else if *b == default {
                12.0
            } else {
                11.0
            }
        });
        let report = analyze(&rows, &AnalysisOptions::default()).unwrap();
        let gain = report.mean_gain_optimal.unwrap();
        assert!((gain - 0.2).abs() < 1e-12);
    }

    #[test]
    fn incomplete_slices_are_excluded_and_counted() {
        let mut rows = full_slice_rows("complete", |b| 1.0 + b.threads() as f64);
        // a slice missing one block
        let mut partial = full_slice_rows("partial", |b| 2.0 + b.threads() as f64);
        partial.pop();
        rows.extend(partial);
        // a slice with a NaN row
        let mut broken = full_slice_rows("broken", |b| 3.0 + b.threads() as f64);
        broken[0].runtime_ms = f64::NAN;
        broken[0].status = RunStatus::Timeout;
        rows.extend(broken);

        let report = analyze(&rows, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_slices_total, 3);
        assert_eq!(report.n_slices_complete, 1);
        assert_eq!(report.n_slices_incomplete, 2);
        assert_eq!(report.n_kernels, 3);
        assert_eq!(report.n_kernels_complete, 1);
    }

    #[test]
    fn hand_built_three_slice_dataset() {
        let b64 = BlockConfig::new(64, 1, 1).unwrap();
        let b1024 = BlockConfig::new(1024, 1, 1).unwrap();
        // slice A: best 64 at 8ms, 1024 at 10ms  -> perf 0.8, gain 0.25
        let a = full_slice_rows("a", |b| {
            if *b == b64 {
                8.0
            } else if *b == b1024 {
                10.0
            } else {
                9.0
            }
        });
        // slice B: 1024 best at 4ms              -> perf 1.0, gain 0.0
        let b = full_slice_rows("b", |bb| if *bb == b1024 { 4.0 } else { 5.0 });
        // slice C: best 64 at 5ms, 1024 at 20ms  -> perf 0.25, gain 3.0
        let c = full_slice_rows("c", |bb| {
            if *bb == b64 {
                5.0
            } else if *bb == b1024 {
                20.0
            } else {
                10.0
            }
        });
        let rows: Vec<DatasetRow> = a.into_iter().chain(b).chain(c).collect();
        let report = analyze(&rows, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_slices_complete, 3);
        let frac = report.frac_default_not_best.unwrap();
        assert!((frac - 2.0 / 3.0).abs() < 1e-12);
        let mean_perf = report.mean_perf_default.unwrap();
        assert!((mean_perf - (0.8 + 1.0 + 0.25) / 3.0).abs() < 1e-12);
        let mean_gain = report.mean_gain_optimal.unwrap();
        assert!((mean_gain - (0.25 + 0.0 + 3.0) / 3.0).abs() < 1e-12);
        // perf below 0.85: slices a and c -> 2/3
        assert!((report.frac_perf_below.fraction - 2.0 / 3.0).abs() < 1e-12);
        // gain above 0.20: a (0.25) and c (3.0) -> 2/3
        assert!((report.frac_gain_above.fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_slice_profile_equals_normalized_runtimes() {
        let rows = full_slice_rows("u", |b| 1.0 + b.threads() as f64 / 64.0);
        let profile =
            block_profile(&rows, MatrixSize::new(240, 240).unwrap(), &canonical_blocks()).unwrap();
        let slices = build_slices(&rows).unwrap();
        let slice = slices.values().next().unwrap();
        let best = best_block(slice).unwrap();
        let best_rt = slice.runtimes[&best];
        for (block, mean_norm) in profile {
            let expect = slice.runtimes[&block] / best_rt;
            assert!((mean_norm - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_matrix_selection_gives_empty_profile() {
        let rows = full_slice_rows("u", |_| 1.0);
        let profile =
            block_profile(&rows, MatrixSize::new(31, 31).unwrap(), &canonical_blocks()).unwrap();
        assert!(profile.is_empty());
    }

    #[test]
    fn empty_dataset_report_is_marked() {
        let report = analyze(&[], &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_slices_complete, 0);
        assert!(report.mean_perf_default.is_none());
        assert!(report.mean_gain_optimal.is_none());
        assert!(report.perf_quantiles.is_empty());
    }

    #[test]
    fn scale_invariance_of_slice_statistics() {
        let rows = full_slice_rows("u", |b| 3.0 + (b.threads() % 7) as f64);
        let scaled: Vec<DatasetRow> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.runtime_ms *= 137.5;
                r
            })
            .collect();
        let slices_a = build_slices(&rows).unwrap();
        let slices_b = build_slices(&scaled).unwrap();
        let a = slices_a.values().next().unwrap();
        let b = slices_b.values().next().unwrap();
        assert_eq!(best_block(a), best_block(b));
        for block in canonical_blocks() {
            let pa = performance(a, &block).unwrap();
            let pb = performance(b, &block).unwrap();
            assert!((pa - pb).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_reciprocal_consistency() {
        let rows = full_slice_rows("u", |b| 2.0 + (b.threads() % 13) as f64);
        let slices = build_slices(&rows).unwrap();
        let slice = slices.values().next().unwrap();
        let default = BlockConfig::new(1024, 1, 1).unwrap();
        let perf = performance(slice, &default).unwrap();
        let best = best_block(slice).unwrap();
        let gain = slice.runtimes[&default] / slice.runtimes[&best] - 1.0;
        assert!((gain - (1.0 / perf - 1.0)).abs() < 1e-12);
    }
}
