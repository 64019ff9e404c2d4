//! Build-stage integration: the compile/fix loop against a real compiler
//! (g++ plus the bundled CUDA stub) and subprocess execution under timeout.

mod common;

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::{Duration, Instant};

use blocksweep::backend::{execute_binary, BuildStatus, RunStatus};
use blocksweep::config::PipelineConfig;
use blocksweep::pipeline;

fn write_script(path: &Path, body: &str) {
    fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    let mut perms = fs::metadata(path).unwrap().permissions();
    perms.set_mode(0o755);
    fs::set_permissions(path, perms).unwrap();
}

/// One full build of the fixture corpus with the stub compiler; all the
/// fix-rule fixtures are asserted out of the single run.
#[test]
fn fixture_build_exercises_every_fix_rule() {
    let dir = tempfile::tempdir().unwrap();
    common::copy_fixture_corpus(dir.path());
    pipeline::stage_extract(dir.path()).unwrap();

    let mut cfg = PipelineConfig {
        corpus_root: dir.path().to_path_buf(),
        backend: blocksweep::BackendKind::Real,
        compiler_template: common::stub_compiler_template(),
        workers: 4,
        ..PipelineConfig::default()
    };
    cfg.matrices.truncate(1);
    let results = pipeline::stage_build(&cfg).unwrap();

    let by_id = |id: &str| {
        results
            .iter()
            .find(|r| r.unit_id == id)
            .unwrap_or_else(|| panic!("no build result for {id}"))
    };

    // a well-formed unit compiles first try
    let clean = by_id("r0__add_cu__add");
    assert_eq!(clean.status, BuildStatus::Ok);
    assert_eq!(clean.attempts, 1);

    // rule 1: header that lives elsewhere in the repo tree
    let rule1 = by_id("r7__src_convolve_cu__convolve");
    assert_eq!(rule1.status, BuildStatus::FixedThenOk);
    assert!(rule1.attempts >= 2);
    assert!(rule1.applied_rules.iter().any(|r| r.starts_with("rule1:")));

    // rule 2: device function reached only through a macro
    let rule2 = by_id("r8__kern_cu__apply_gain");
    assert_eq!(rule2.status, BuildStatus::FixedThenOk);
    assert!(rule2.applied_rules.iter().any(|r| r.starts_with("rule2:")));

    // rule 3: copied dependency carries its own main()
    let rule3 = by_id("r9__reduce_cu__reduce_sum");
    assert_eq!(rule3.status, BuildStatus::FixedThenOk);
    assert!(rule3.applied_rules.iter().any(|r| r.starts_with("rule3:")));

    // rule 4: missing standard header
    let rule4 = by_id("r10__debugk_cu__debug_fill");
    assert_eq!(rule4.status, BuildStatus::FixedThenOk);
    assert!(rule4.applied_rules.iter().any(|r| r.starts_with("rule4:")));

    // the unfixable chain burns every attempt and stays red
    let chain = by_id("r11__broken_cu__chain_fail");
    assert_eq!(chain.status, BuildStatus::CompileError);
    assert_eq!(chain.attempts, cfg.max_fix_attempts);
    assert_eq!(chain.applied_rules.len(), 2);

    // fixed_then_ok implies at least two attempts everywhere
    for result in &results {
        if result.status == BuildStatus::FixedThenOk {
            assert!(result.attempts >= 2, "{}", result.unit_id);
        }
        // every build leaves an audit log in the unit folder
        assert!(
            dir.path()
                .join("units")
                .join(&result.unit_id)
                .join("build.log")
                .exists(),
            "missing build.log for {}",
            result.unit_id
        );
    }

    let ok = results
        .iter()
        .filter(|r| matches!(r.status, BuildStatus::Ok | BuildStatus::FixedThenOk))
        .count();
    assert_eq!(ok, 25, "25 of 26 buildable units compile");
}

#[test]
fn execute_parses_runtime_line() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("mock");
    write_script(&script, "echo 'RUNTIME_MS: 12.5'");
    let outcome = execute_binary(&script, Duration::from_secs(5));
    assert_eq!(outcome.status, RunStatus::Ok);
    assert_eq!(outcome.runtime_ms, 12.5);
}

#[test]
fn execute_kills_at_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("sleeper");
    write_script(&script, "sleep 10\necho 'RUNTIME_MS: 1.0'");
    let started = Instant::now();
    let outcome = execute_binary(&script, Duration::from_secs(1));
    let wall = started.elapsed().as_secs_f64();
    assert_eq!(outcome.status, RunStatus::Timeout);
    assert!(outcome.runtime_ms.is_nan());
    assert!(wall <= 1.5, "killed too late: {wall:.2}s");
    assert!(outcome.wall_time_s <= 1.5);
}

#[test]
fn execute_maps_garbage_to_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("garbage");
    write_script(&script, "echo 'lorem ipsum'");
    let outcome = execute_binary(&script, Duration::from_secs(5));
    assert_eq!(outcome.status, RunStatus::ParseError);
    assert!(outcome.runtime_ms.is_nan());
}

#[test]
fn execute_maps_kernel_error_to_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("failing");
    write_script(&script, "echo 'KERNEL_ERROR: 77'\nexit 1");
    let outcome = execute_binary(&script, Duration::from_secs(5));
    assert_eq!(outcome.status, RunStatus::RuntimeError);
    assert!(outcome.runtime_ms.is_nan());
}

#[test]
fn execute_missing_binary_is_runtime_error() {
    let outcome = execute_binary(Path::new("/nonexistent/bin"), Duration::from_secs(1));
    assert_eq!(outcome.status, RunStatus::RuntimeError);
    assert!(outcome.diagnostic.is_some());
}

// NaN iff status != ok, over every outcome shape the executor produces
#[test]
fn outcome_nan_iff_not_ok() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("echo 'RUNTIME_MS: 3.25'", false),
        ("echo 'gibberish'", true),
        ("echo 'KERNEL_ERROR: 2'\nexit 1", true),
        ("exit 3", true),
    ];
    for (i, (body, expect_nan)) in cases.iter().enumerate() {
        let script = dir.path().join(format!("case{i}"));
        write_script(&script, body);
        let outcome = execute_binary(&script, Duration::from_secs(5));
        assert_eq!(outcome.runtime_ms.is_nan(), *expect_nan, "case {i}");
        assert_eq!(outcome.status != RunStatus::Ok, *expect_nan, "case {i}");
    }
}
