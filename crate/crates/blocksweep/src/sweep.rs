//! The (matrix size x thread-block size) sweep: canonical parameter space,
//! dataset rows, a resumable multi-worker runner, and dataset statistics.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{self, BackendKind, ExecutorBackend, RunOutcome, RunStatus};
use crate::error::{Error, Result};
use crate::extract::KernelUnit;
use crate::harness::{default_matrices, generate_main, LaunchConfig, MatrixSize, RoleTable};
use crate::measure::{aggregate, AggregateStrategy};

/// A thread-block shape. Hardware legality is enforced at construction:
/// at most 1024 threads, total divisible by the 32-thread warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockConfig {
    x: u32,
    y: u32,
    z: u32,
}

pub const MAX_THREADS_PER_BLOCK: u32 = 1024;
pub const WARP_SIZE: u32 = 32;

impl BlockConfig {
    pub fn new(x: u32, y: u32, z: u32) -> Result<Self> {
        if x == 0 || y == 0 || z == 0 {
            return Err(Error::Contract(format!(
                "block dimensions must be positive, got ({x},{y},{z})"
            )));
        }
        let threads = x as u64 * y as u64 * z as u64;
        if threads > MAX_THREADS_PER_BLOCK as u64 {
            return Err(Error::Contract(format!(
                "block ({x},{y},{z}) exceeds {MAX_THREADS_PER_BLOCK} threads"
            )));
        }
        if threads % WARP_SIZE as u64 != 0 {
            return Err(Error::Contract(format!(
                "block ({x},{y},{z}) is not a multiple of the warp size {WARP_SIZE}"
            )));
        }
        Ok(BlockConfig { x, y, z })
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn z(&self) -> u32 {
        self.z
    }

    pub fn threads(&self) -> u32 {
        self.x * self.y * self.z
    }

    pub fn is_one_dim(&self) -> bool {
        self.y == 1 && self.z == 1
    }

    pub fn label(&self) -> String {
        format!("{}x{}x{}", self.x, self.y, self.z)
    }

    /// Accepts `XxYxZ` or `X,Y,Z`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = if text.contains(',') {
            text.split(',').collect()
        } else {
            text.split(['x', 'X']).collect()
        };
        if parts.len() != 3 {
            return Err(Error::Config(format!("expected XxYxZ block, got `{text}`")));
        }
        let dim = |s: &str| -> Result<u32> {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad block dimension `{s}`")))
        };
        BlockConfig::new(dim(parts[0])?, dim(parts[1])?, dim(parts[2])?)
    }
}

// ordered by total threads, then lexicographically on (x, y, z) — the
// tie-break order used when runtimes are equal
impl Ord for BlockConfig {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.threads(), self.x, self.y, self.z).cmp(&(
            other.threads(),
            other.x,
            other.y,
            other.z,
        ))
    }
}

impl PartialOrd for BlockConfig {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// The canonical twenty blocks: 1D sizes 64..=1024 in steps of 64, plus the
/// square 2D blocks (8,8), (16,16), (24,24), (32,32).
pub fn canonical_blocks() -> Vec<BlockConfig> {
    let mut blocks = Vec::with_capacity(20);
    for i in 1..=16 {
        blocks.push(BlockConfig::new(64 * i, 1, 1).expect("1D canonical block"));
    }
    for d in [8, 16, 24, 32] {
        blocks.push(BlockConfig::new(d, d, 1).expect("2D canonical block"));
    }
    blocks
}

/// The swept parameter space.
#[derive(Debug, Clone)]
pub struct SweepSpace {
    pub matrices: Vec<MatrixSize>,
    pub blocks: Vec<BlockConfig>,
}

impl SweepSpace {
    pub fn new(matrices: Vec<MatrixSize>, blocks: Vec<BlockConfig>) -> Result<Self> {
        if matrices.is_empty() || blocks.is_empty() {
            return Err(Error::Contract("sweep space must be non-empty".into()));
        }
        let unique: BTreeSet<_> = blocks.iter().collect();
        if unique.len() != blocks.len() {
            return Err(Error::Contract("duplicate blocks in sweep space".into()));
        }
        Ok(SweepSpace { matrices, blocks })
    }

    pub fn combinations(&self) -> usize {
        self.matrices.len() * self.blocks.len()
    }
}

/// Seven matrices x twenty blocks = 140 combinations.
pub fn canonical_space() -> SweepSpace {
    SweepSpace::new(default_matrices(), canonical_blocks()).expect("canonical space valid")
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if value.is_nan() {
            ser.serialize_none()
        } else {
            ser.serialize_some(value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(de)?.unwrap_or(f64::NAN))
    }
}

/// One persisted measurement: a (kernel, matrix, block) configuration and
/// its result. `runtime_ms` is NaN exactly when `status != ok`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRow {
    pub unit_id: String,
    pub function_name: String,
    pub repo_index: usize,
    pub matrix_width: u32,
    pub matrix_height: u32,
    pub block_x: u32,
    pub block_y: u32,
    pub block_z: u32,
    #[serde(with = "nan_as_null")]
    pub runtime_ms: f64,
    pub status: RunStatus,
    pub device_id: u32,
    pub backend: BackendKind,
    pub timestamp: String,
}

pub type RowKey = (String, u32, u32, u32, u32, u32);

impl DatasetRow {
    pub fn key(&self) -> RowKey {
        (
            self.unit_id.clone(),
            self.matrix_width,
            self.matrix_height,
            self.block_x,
            self.block_y,
            self.block_z,
        )
    }

    pub fn matrix(&self) -> Result<MatrixSize> {
        MatrixSize::new(self.matrix_width, self.matrix_height)
    }

    pub fn block(&self) -> Result<BlockConfig> {
        BlockConfig::new(self.block_x, self.block_y, self.block_z)
    }
}

pub const CSV_HEADER: &str = "unit_id,function_name,repo_index,matrix_width,matrix_height,block_x,block_y,block_z,runtime_ms,status,device_id,backend,timestamp";

fn format_runtime(value: f64) -> String {
    if value.is_nan() {
        "NaN".to_string()
    } else {
        format!("{value}")
    }
}

impl DatasetRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.unit_id,
            self.function_name,
            self.repo_index,
            self.matrix_width,
            self.matrix_height,
            self.block_x,
            self.block_y,
            self.block_z,
            format_runtime(self.runtime_ms),
            self.status.label(),
            self.device_id,
            self.backend.label(),
            self.timestamp
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(Error::Dataset(format!(
                "expected 13 CSV fields, got {}: {line}",
                fields.len()
            )));
        }
        let parse_u32 = |s: &str, what: &str| -> Result<u32> {
            s.parse()
                .map_err(|_| Error::Dataset(format!("bad {what} `{s}` in: {line}")))
        };
        let runtime_ms = if fields[8] == "NaN" {
            f64::NAN
        } else {
            fields[8]
                .parse()
                .map_err(|_| Error::Dataset(format!("bad runtime `{}` in: {line}", fields[8])))?
        };
        let backend = match fields[11] {
            "real" => BackendKind::Real,
            "simulated" => BackendKind::Simulated,
            other => return Err(Error::Dataset(format!("bad backend `{other}` in: {line}"))),
        };
        Ok(DatasetRow {
            unit_id: fields[0].to_string(),
            function_name: fields[1].to_string(),
            repo_index: fields[2]
                .parse()
                .map_err(|_| Error::Dataset(format!("bad repo_index in: {line}")))?,
            matrix_width: parse_u32(fields[3], "matrix_width")?,
            matrix_height: parse_u32(fields[4], "matrix_height")?,
            block_x: parse_u32(fields[5], "block_x")?,
            block_y: parse_u32(fields[6], "block_y")?,
            block_z: parse_u32(fields[7], "block_z")?,
            runtime_ms,
            status: RunStatus::parse(fields[9])?,
            device_id: parse_u32(fields[10], "device_id")?,
            backend,
            timestamp: fields[12].to_string(),
        })
    }
}

/// Sweep execution settings.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub timeout: Duration,
    pub repeats: u32,
    pub strategy: AggregateStrategy,
    pub workers: usize,
    pub device_ids: Vec<u32>,
    /// When false, rows carry a fixed epoch timestamp so output is
    /// byte-reproducible.
    pub timestamps: bool,
    pub role_table: RoleTable,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            timeout: Duration::from_secs_f64(backend::DEFAULT_TIMEOUT_S),
            repeats: 10,
            strategy: AggregateStrategy::Median,
            workers: 1,
            device_ids: vec![0],
            timestamps: true,
            role_table: RoleTable::default(),
        }
    }
}

pub const EPOCH_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

fn now_timestamp(enabled: bool) -> String {
    if enabled {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    } else {
        EPOCH_TIMESTAMP.to_string()
    }
}

/// Measure one (unit, matrix, block) point: up to `repeats` executions,
/// aggregated when everything is ok. A timeout short-circuits the remaining
/// repeats; any other failure is recorded as-is. Executions (not compiles)
/// hold the device lock, so runs on one device never interleave.
fn measure_point(
    unit: &KernelUnit,
    matrix: MatrixSize,
    block: BlockConfig,
    exec_backend: &ExecutorBackend,
    cfg: &SweepConfig,
    device_id: u32,
    device_lock: &Mutex<()>,
) -> (RunStatus, f64) {
    let launch = LaunchConfig::new(block, matrix);

    if let ExecutorBackend::Real(real) = exec_backend {
        // the harness bakes launch constants in, so real sweeps regenerate
        // and recompile per point (the build stage already ran the fix loop)
        match generate_main(unit, &launch, &cfg.role_table) {
            Ok(main_src) => {
                let main_path = unit.folder.join("main.cu");
                if fs::write(&main_path, main_src).is_err() {
                    return (RunStatus::RuntimeError, f64::NAN);
                }
                match backend::compile_once(&real.compiler_template, &unit.folder) {
                    Ok((true, _)) => {}
                    _ => return (RunStatus::RuntimeError, f64::NAN),
                }
            }
            Err(_) => return (RunStatus::RuntimeError, f64::NAN),
        }
    }

    let mut runtimes = Vec::with_capacity(cfg.repeats as usize);
    for _ in 0..cfg.repeats.max(1) {
        let outcome: RunOutcome = {
            let _device = device_lock.lock().expect("device lock poisoned");
            backend::execute(exec_backend, unit, &launch, cfg.timeout, device_id)
        };
        match outcome.status {
            RunStatus::Ok => runtimes.push(outcome.runtime_ms),
            status => return (status, f64::NAN),
        }
    }
    match aggregate(&runtimes, cfg.strategy) {
        Ok(value) => (RunStatus::Ok, value),
        Err(_) => (RunStatus::ParseError, f64::NAN),
    }
}

/// Load the streaming dataset written by previous (possibly interrupted)
/// runs. Missing file means an empty dataset.
pub fn load_dataset_jsonl(path: &Path) -> Result<Vec<DatasetRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    crate::corpus::read_jsonl(path)
}

/// Run the sweep over every (unit, matrix, block) combination not already
/// present in the dataset. Rows stream durably to `jsonl_path` as they are
/// produced. Returns the number of rows appended.
pub fn run_sweep(
    units: &[KernelUnit],
    space: &SweepSpace,
    exec_backend: &ExecutorBackend,
    cfg: &SweepConfig,
    jsonl_path: &Path,
) -> Result<usize> {
    let existing: BTreeSet<RowKey> = load_dataset_jsonl(jsonl_path)?
        .into_iter()
        .map(|r| r.key())
        .collect();

    // a unit is owned by one worker at a time: real-backend points rewrite
    // main.cu inside the unit folder
    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..units.len()).collect());
    let (tx, rx) = std::sync::mpsc::channel::<DatasetRow>();

    let device_ids = if cfg.device_ids.is_empty() {
        vec![0]
    } else {
        cfg.device_ids.clone()
    };
    let workers = cfg.workers.max(1).min(units.len().max(1));

    let appended = std::thread::scope(|scope| -> Result<usize> {
        for w in 0..workers {
            let device_id = device_ids[w % device_ids.len()];
            let tx = tx.clone();
            let queue = &queue;
            let existing = &existing;
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue poisoned").pop_front();
                let Some(unit_idx) = next else { break };
                let unit = &units[unit_idx];
                for matrix in &space.matrices {
                    for block in &space.blocks {
                        let key = (
                            unit.id.clone(),
                            matrix.width(),
                            matrix.height(),
                            block.x(),
                            block.y(),
                            block.z(),
                        );
                        if existing.contains(&key) {
                            continue;
                        }
                        let (status, runtime_ms) =
                            measure_point(unit, *matrix, *block, exec_backend, cfg, device_id);
                        let row = DatasetRow {
                            unit_id: unit.id.clone(),
                            function_name: unit.function_name.clone(),
                            repo_index: unit.repo_index,
                            matrix_width: matrix.width(),
                            matrix_height: matrix.height(),
                            block_x: block.x(),
                            block_y: block.y(),
                            block_z: block.z(),
                            runtime_ms,
                            status,
                            device_id,
                            backend: exec_backend.kind(),
                            timestamp: now_timestamp(cfg.timestamps),
                        };
                        if tx.send(row).is_err() {
                            return;
                        }
                    }
                }
            });
        }
        drop(tx);

        // single serialized writer owns the output stream
        if let Some(parent) = jsonl_path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(jsonl_path)
            .map_err(|e| Error::io(jsonl_path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        let mut appended = 0usize;
        for row in rx {
            let line = serde_json::to_string(&row)
                .map_err(|e| Error::Dataset(format!("serialize row: {e}")))?;
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .and_then(|_| writer.flush())
                .map_err(|e| Error::io(jsonl_path, e))?;
            appended += 1;
        }
        Ok(appended)
    })?;

    Ok(appended)
}

/// Compact the streaming JSONL into the final CSV: rows sorted by key,
/// first-seen wins on duplicates. Returns the rows written.
pub fn compact_to_csv(jsonl_path: &Path, csv_path: &Path) -> Result<Vec<DatasetRow>> {
    let rows = load_dataset_jsonl(jsonl_path)?;
    let mut by_key: BTreeMap<RowKey, DatasetRow> = BTreeMap::new();
    for row in rows {
        by_key.entry(row.key()).or_insert(row);
    }
    let rows: Vec<DatasetRow> = by_key.into_values().collect();
    write_csv(&rows, csv_path)?;
    Ok(rows)
}

pub fn write_csv(rows: &[DatasetRow], csv_path: &Path) -> Result<()> {
    if let Some(parent) = csv_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::with_capacity(rows.len() * 96 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))
}

pub fn load_dataset_csv(path: &Path) -> Result<Vec<DatasetRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        Some(other) => {
            return Err(Error::Dataset(format!(
                "unexpected CSV header: {other}"
            )))
        }
        None => return Err(Error::Dataset("empty dataset CSV".into())),
    }
    lines.map(DatasetRow::from_csv_line).collect()
}

/// Summary counters over a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub rows: usize,
    pub non_nan_fraction: f64,
    pub status_counts: BTreeMap<String, usize>,
    pub distinct_units: usize,
}

pub fn dataset_stats(rows: &[DatasetRow]) -> DatasetStats {
    let mut status_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut units: BTreeSet<&str> = BTreeSet::new();
    let mut non_nan = 0usize;
    for row in rows {
        *status_counts.entry(row.status.label().to_string()).or_default() += 1;
        units.insert(&row.unit_id);
        if !row.runtime_ms.is_nan() {
            non_nan += 1;
        }
    }
    DatasetStats {
        rows: rows.len(),
        non_nan_fraction: if rows.is_empty() {
            1.0
        } else {
            non_nan as f64 / rows.len() as f64
        },
        status_counts,
        distinct_units: units.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_block_count_is_twenty() {
        assert_eq!(canonical_blocks().len(), 20);
    }

    #[test]
    fn canonical_space_has_140_combinations() {
        assert_eq!(canonical_space().combinations(), 140);
    }

    #[test]
    fn every_canonical_block_is_legal() {
        for block in canonical_blocks() {
            assert!(block.threads() <= MAX_THREADS_PER_BLOCK);
            assert_eq!(block.threads() % WARP_SIZE, 0);
        }
    }

    #[test]
    fn illegal_blocks_rejected() {
        assert!(BlockConfig::new(33, 1, 1).is_err());
        assert!(BlockConfig::new(1025, 1, 1).is_err());
        assert!(BlockConfig::new(32, 32, 2).is_err());
        assert!(BlockConfig::new(0, 1, 1).is_err());
    }

    #[test]
    fn block_ordering_prefers_smaller_then_lexicographic() {
        let a = BlockConfig::new(8, 8, 1).unwrap();
        let b = BlockConfig::new(64, 1, 1).unwrap();
        assert!(a < b); // same threads, lexicographically smaller x
        let c = BlockConfig::new(128, 1, 1).unwrap();
        assert!(b < c);
    }

    #[test]
    fn block_parse_both_separators() {
        assert_eq!(BlockConfig::parse("64x1x1").unwrap(), BlockConfig::new(64, 1, 1).unwrap());
        assert_eq!(
            BlockConfig::parse("1024,1,1").unwrap(),
            BlockConfig::new(1024, 1, 1).unwrap()
        );
        assert!(BlockConfig::parse("64").is_err());
    }

    #[test]
    fn csv_round_trip_preserves_nan() {
        let row = DatasetRow {
            unit_id: "u1".into(),
            function_name: "k".into(),
            repo_index: 3,
            matrix_width: 240,
            matrix_height: 240,
            block_x: 64,
            block_y: 1,
            block_z: 1,
            runtime_ms: f64::NAN,
            status: RunStatus::Timeout,
            device_id: 0,
            backend: BackendKind::Simulated,
            timestamp: EPOCH_TIMESTAMP.into(),
        };
        let line = row.to_csv_line();
        assert!(line.contains(",NaN,"));
        let back = DatasetRow::from_csv_line(&line).unwrap();
        assert!(back.runtime_ms.is_nan());
        assert_eq!(back.status, RunStatus::Timeout);
    }

    #[test]
    fn jsonl_round_trip_preserves_nan() {
        let row = DatasetRow {
            unit_id: "u1".into(),
            function_name: "k".into(),
            repo_index: 0,
            matrix_width: 64,
            matrix_height: 64,
            block_x: 128,
            block_y: 1,
            block_z: 1,
            runtime_ms: f64::NAN,
            status: RunStatus::RuntimeError,
            device_id: 1,
            backend: BackendKind::Real,
            timestamp: EPOCH_TIMESTAMP.into(),
        };
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains("\"runtime_ms\":null"));
        let back: DatasetRow = serde_json::from_str(&json).unwrap();
        assert!(back.runtime_ms.is_nan());
    }

    #[test]
    fn stats_count_non_nan_fraction() {
        let mut rows = Vec::new();
        for i in 0..100 {
            rows.push(DatasetRow {
                unit_id: format!("u{}", i % 5),
                function_name: "k".into(),
                repo_index: 0,
                matrix_width: 64,
                matrix_height: 64,
                block_x: 64,
                block_y: 1,
                block_z: 1,
                runtime_ms: if i < 3 { f64::NAN } else { 1.0 },
                status: if i < 3 { RunStatus::Timeout } else { RunStatus::Ok },
                device_id: 0,
                backend: BackendKind::Simulated,
                timestamp: EPOCH_TIMESTAMP.into(),
            });
        }
        let stats = dataset_stats(&rows);
        assert_eq!(stats.rows, 100);
        assert!((stats.non_nan_fraction - 0.97).abs() < 1e-12);
        assert_eq!(stats.status_counts["timeout"], 3);
        assert_eq!(stats.status_counts["ok"], 97);
        assert_eq!(stats.distinct_units, 5);
    }
}
