//! Timing-harness synthesis: infer a value role for every kernel parameter
//! from its name, then generate a `main.cu` that allocates arguments,
//! preheats, launches the kernel 1000 times under device-event timing, and
//! prints exactly one `RUNTIME_MS:` line.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::extract::scan::ParamSpec;
use crate::extract::KernelUnit;
use crate::sweep::BlockConfig;

/// Launches per timed measurement; the printed runtime is the total for all
/// of them.
pub const TIMED_LAUNCHES: u32 = 1000;

/// A benchmark matrix: kernels are fed `width * height` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatrixSize {
    width: u32,
    height: u32,
}

impl MatrixSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract(format!(
                "matrix dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(MatrixSize { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn elements(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.split(['x', 'X']);
        let (Some(w), Some(h), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config(format!("expected WxH matrix size, got `{text}`")));
        };
        let width = w
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad matrix width `{w}`")))?;
        let height = h
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad matrix height `{h}`")))?;
        MatrixSize::new(width, height)
    }
}

/// The default seven matrix sizes: a spread of warp-divisible and
/// non-divisible dimensions. Configurable everywhere it is consumed.
pub fn default_matrices() -> Vec<MatrixSize> {
    [
        (240, 240),
        (496, 496),
        (784, 784),
        (1016, 1016),
        (1232, 1232),
        (1680, 1680),
        (2024, 2024),
    ]
    .into_iter()
    .map(|(w, h)| MatrixSize::new(w, h).expect("static sizes valid"))
    .collect()
}

/// A concrete launch: block shape, covering grid, and the matrix that sized
/// the arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaunchConfig {
    pub block: BlockConfig,
    pub grid: (u32, u32, u32),
    pub matrix: MatrixSize,
}

impl LaunchConfig {
    pub fn new(block: BlockConfig, matrix: MatrixSize) -> Self {
        LaunchConfig {
            block,
            grid: compute_grid(&block, &matrix),
            matrix,
        }
    }
}

fn ceil_div(n: u64, d: u64) -> u64 {
    (n + d - 1) / d
}

/// Grid covering the matrix: 1D blocks cover `elements` along x, 2D blocks
/// cover width along x and height along y. Never zero in any dimension.
pub fn compute_grid(block: &BlockConfig, matrix: &MatrixSize) -> (u32, u32, u32) {
    if block.y() == 1 && block.z() == 1 {
        let gx = ceil_div(matrix.elements(), block.x() as u64);
        (gx as u32, 1, 1)
    } else {
        let gx = ceil_div(matrix.width() as u64, block.x() as u64);
        let gy = ceil_div(matrix.height() as u64, block.y() as u64);
        (gx as u32, gy as u32, 1)
    }
}

/// Value roles assignable to kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Device buffer of `elements` elements.
    Buffer,
    Width,
    Height,
    /// Total element count.
    Size,
    /// Inner-dimension style scalar; set to the matrix width.
    KLike,
    /// Kept static at 1.
    StaticOne,
}

/// One name-matching rule: exact names and/or prefixes, case-insensitive.
#[derive(Debug, Clone)]
pub struct RoleRule {
    pub names: Vec<&'static str>,
    pub prefixes: Vec<&'static str>,
    pub role: ParamRole,
}

impl RoleRule {
    fn matches(&self, lower: &str) -> bool {
        self.names.iter().any(|n| *n == lower)
            || self.prefixes.iter().any(|p| lower.starts_with(p))
    }
}

/// Ordered rule table; the first matching rule wins and a default role
/// guarantees totality.
#[derive(Debug, Clone)]
pub struct RoleTable {
    pub rules: Vec<RoleRule>,
    pub default_role: ParamRole,
}

impl Default for RoleTable {
    fn default() -> Self {
        RoleTable {
            rules: vec![
                RoleRule {
                    names: vec!["w", "width", "cols", "n_cols"],
                    prefixes: vec![],
                    role: ParamRole::Width,
                },
                RoleRule {
                    names: vec!["h", "height", "rows", "n_rows"],
                    prefixes: vec![],
                    role: ParamRole::Height,
                },
                RoleRule {
                    names: vec!["n", "size", "len", "count"],
                    prefixes: vec!["num"],
                    role: ParamRole::Size,
                },
                RoleRule {
                    names: vec!["k"],
                    prefixes: vec![],
                    role: ParamRole::KLike,
                },
                RoleRule {
                    names: vec!["stride", "offset"],
                    prefixes: vec!["inc"],
                    role: ParamRole::StaticOne,
                },
            ],
            default_role: ParamRole::StaticOne,
        }
    }
}

/// Assign a role to a parameter. Pointers are always buffers; scalars match
/// the table case-insensitively. Total by construction.
pub fn infer_role(param: &ParamSpec, table: &RoleTable) -> ParamRole {
    infer_role_detailed(param, table).0
}

/// Like [`infer_role`] but also reports which rule matched (`None` for the
/// buffer shortcut or the default).
pub fn infer_role_detailed(param: &ParamSpec, table: &RoleTable) -> (ParamRole, Option<usize>) {
    if param.is_pointer {
        return (ParamRole::Buffer, None);
    }
    let lower = param.name.to_lowercase();
    for (idx, rule) in table.rules.iter().enumerate() {
        if rule.matches(&lower) {
            return (rule.role, Some(idx));
        }
    }
    (table.default_role, None)
}

const SCALAR_TYPE_WORDS: [&str; 22] = [
    "bool", "char", "short", "int", "long", "float", "double", "unsigned", "signed", "size_t",
    "int8_t", "int16_t", "int32_t", "int64_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t",
    "ssize_t", "ptrdiff_t", "uint", "uchar",
];

const TYPE_QUALIFIERS: [&str; 5] = ["const", "volatile", "__restrict__", "__restrict", "restrict"];

fn type_words(type_text: &str) -> Vec<String> {
    type_text
        .replace('*', " * ")
        .replace('[', " [ ")
        .replace(']', " ] ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// The element type a pointer parameter points at, with qualifiers and one
/// pointer level stripped: `const float *` -> `float`, `float **` ->
/// `float *`. `void *` has no sizeable element type and returns `None`.
fn buffer_element_type(type_text: &str) -> Option<String> {
    let mut words: Vec<String> = type_words(type_text)
        .into_iter()
        .filter(|w| !TYPE_QUALIFIERS.contains(&w.as_str()))
        .collect();
    if words.ends_with(&["[".to_string(), "]".to_string()]) {
        words.truncate(words.len() - 2);
    } else if words.last().map(String::as_str) == Some("*") {
        words.pop();
    }
    if words.is_empty() {
        return None;
    }
    if words == ["void"] {
        return None;
    }
    Some(words.join(" "))
}

fn scalar_type_supported(type_text: &str) -> bool {
    let words = type_words(type_text);
    !words.is_empty()
        && words.iter().all(|w| {
            SCALAR_TYPE_WORDS.contains(&w.as_str()) || TYPE_QUALIFIERS.contains(&w.as_str())
        })
}

fn scalar_decl_type(type_text: &str) -> String {
    type_words(type_text)
        .into_iter()
        .filter(|w| !TYPE_QUALIFIERS.contains(&w.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn scalar_value(role: ParamRole, matrix: &MatrixSize) -> u64 {
    match role {
        ParamRole::Width => matrix.width() as u64,
        ParamRole::Height => matrix.height() as u64,
        ParamRole::Size => matrix.elements(),
        ParamRole::KLike => matrix.width() as u64,
        ParamRole::StaticOne => 1,
        ParamRole::Buffer => unreachable!("buffers have no scalar value"),
    }
}

/// Generate the `main.cu` timing harness for one unit at one launch
/// configuration. Deterministic: identical inputs produce identical bytes.
///
/// The generated program prints exactly one line: `RUNTIME_MS: <total ms for
/// 1000 launches>` on success or `KERNEL_ERROR: <code>` when the device
/// reports an error state after the timed loop.
pub fn generate_main(unit: &KernelUnit, launch: &LaunchConfig, table: &RoleTable) -> Result<String> {
    let matrix = &launch.matrix;
    let mut alloc = String::new();
    let mut args: Vec<String> = Vec::new();

    for (idx, param) in unit.params.iter().enumerate() {
        let role = infer_role(param, table);
        let var = if param.name.is_empty() {
            format!("arg_{idx}")
        } else {
            format!("arg_{}", param.name)
        };
        match role {
            ParamRole::Buffer => {
                match buffer_element_type(&param.type_text) {
                    Some(elem) => {
                        writeln!(alloc, "    {elem} *{var} = 0;").unwrap();
                        writeln!(
                            alloc,
                            "    cudaMalloc((void **)&{var}, bs_elements * sizeof({elem}));"
                        )
                        .unwrap();
                        writeln!(
                            alloc,
                            "    cudaMemset({var}, 0, bs_elements * sizeof({elem}));"
                        )
                        .unwrap();
                    }
                    None => {
                        // void pointers are sized in raw bytes
                        writeln!(alloc, "    void *{var} = 0;").unwrap();
                        writeln!(alloc, "    cudaMalloc(&{var}, bs_elements);").unwrap();
                        writeln!(alloc, "    cudaMemset({var}, 0, bs_elements);").unwrap();
                    }
                }
                args.push(var);
            }
            scalar_role => {
                if !scalar_type_supported(&param.type_text) {
                    return Err(Error::Harness(format!(
                        "unsupported parameter type `{}` for `{}` (no initialization template)",
                        param.type_text, param.name
                    )));
                }
                let decl_type = scalar_decl_type(&param.type_text);
                let value = scalar_value(scalar_role, matrix);
                writeln!(alloc, "    {decl_type} {var} = {value};").unwrap();
                args.push(var);
            }
        }
    }

    let (gx, gy, gz) = launch.grid;
    let call_args = args.join(", ");
    let kernel = &unit.function_name;

    let mut out = String::new();
    writeln!(out, "// Auto-generated timing harness for `{kernel}`.").unwrap();
    writeln!(out, "#include \"kernel.cu\"").unwrap();
    writeln!(out, "#include <cstdio>").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "int main() {{").unwrap();
    writeln!(
        out,
        "    const unsigned long long bs_elements = {}ULL;",
        matrix.elements()
    )
    .unwrap();
    out.push_str(&alloc);
    writeln!(
        out,
        "    dim3 bs_block({}, {}, {});",
        launch.block.x(),
        launch.block.y(),
        launch.block.z()
    )
    .unwrap();
    writeln!(out, "    dim3 bs_grid({gx}, {gy}, {gz});").unwrap();
    writeln!(out, "#ifdef __CUDACC__").unwrap();
    writeln!(out, "#define BS_LAUNCH {kernel}<<<bs_grid, bs_block>>>({call_args})").unwrap();
    writeln!(out, "#else").unwrap();
    writeln!(out, "#define BS_LAUNCH {kernel}({call_args})").unwrap();
    writeln!(out, "#endif").unwrap();
    writeln!(out, "    BS_LAUNCH; // preheat").unwrap();
    writeln!(out, "    cudaDeviceSynchronize();").unwrap();
    writeln!(out, "    cudaEvent_t bs_start, bs_stop;").unwrap();
    writeln!(out, "    cudaEventCreate(&bs_start);").unwrap();
    writeln!(out, "    cudaEventCreate(&bs_stop);").unwrap();
    writeln!(out, "    cudaEventRecord(bs_start);").unwrap();
    writeln!(out, "    for (int bs_i = 0; bs_i < {TIMED_LAUNCHES}; ++bs_i) {{").unwrap();
    writeln!(out, "        BS_LAUNCH;").unwrap();
    writeln!(out, "    }}").unwrap();
    writeln!(out, "    cudaEventRecord(bs_stop);").unwrap();
    writeln!(out, "    cudaEventSynchronize(bs_stop);").unwrap();
    writeln!(out, "    cudaError_t bs_err = cudaGetLastError();").unwrap();
    writeln!(out, "    if (bs_err != cudaSuccess) {{").unwrap();
    writeln!(out, "        printf(\"KERNEL_ERROR: %d\\n\", (int)bs_err);").unwrap();
    writeln!(out, "        return 1;").unwrap();
    writeln!(out, "    }}").unwrap();
    writeln!(out, "    float bs_ms = 0.0f;").unwrap();
    writeln!(out, "    cudaEventElapsedTime(&bs_ms, bs_start, bs_stop);").unwrap();
    writeln!(out, "    printf(\"RUNTIME_MS: %f\\n\", bs_ms);").unwrap();
    writeln!(out, "    return 0;").unwrap();
    writeln!(out, "}}").unwrap();
    Ok(out)
}
