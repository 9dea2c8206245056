//! `fieldplan`: study, benchmark, re-planning simulation, and field
//! inspection from one binary. Every run writes a manifest before any other
//! artifact; outputs named in the manifest are deterministic for a fixed
//! config and seed (wall-clock timings go to a separate sidecar).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use fieldplan::replan::run_replanning;
use fieldplan::{
    load_scenario, run_field_bench, run_refit_comparison, run_study, BenchDesign, DistanceField,
    Error, FieldKind, RunStatus, Scenario, StudyCase, StudyDesign,
};

#[derive(Parser)]
#[command(name = "fieldplan", version, about = "Distance-field trajectory planning toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Directory artifacts are written into (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the config or design default.
    #[arg(long)]
    seed: Option<u64>,
    /// Print extra progress detail.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compare signed and unsigned fields over a seeded planning study.
    Study {
        #[command(flatten)]
        common: Common,
        /// nav2d | arm7 | wholebody8
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 10)]
        n_states: usize,
        #[arg(long, default_value_t = 50)]
        n_envs: usize,
    },
    /// Time distance-field construction across resolutions.
    BenchEdt {
        #[command(flatten)]
        common: Common,
        /// Comma-separated voxel sizes in metres.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.05, 0.025])]
        resolutions: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Also run the warm-start re-plan comparison (problem count).
        #[arg(long)]
        refit_problems: Option<usize>,
    },
    /// Run a scenario config through the re-planning executive.
    Replan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
        /// Dump the world's distance field every this many seconds.
        #[arg(long)]
        dump_fields: Option<f64>,
    },
    /// Build the scenario's field at t = 0 and dump slices.
    InspectField {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
        /// Slice plane index along z (defaults to the middle layer).
        #[arg(long)]
        slice: Option<usize>,
        /// Also render the slice as a PGM grayscale image.
        #[arg(long)]
        image: bool,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'a str,
    schema_version: u32,
    subcommand: &'a str,
    seed: u64,
    /// SHA-256 of the config file bytes, or of the serialized design for
    /// flag-driven runs.
    config_sha256: String,
    config_path: Option<String>,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").expect("hex write");
    }
    s
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<(Scenario, Vec<u8>), Error> {
    let bytes = fs::read(path)?;
    let mut scenario = load_scenario(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    Ok((scenario, bytes))
}

fn cmd_study(common: &Common, case: &str, n_states: usize, n_envs: usize) -> Result<(), Error> {
    let case = StudyCase::parse(case)?;
    let mut design = StudyDesign::desk(case);
    design.n_states = n_states;
    design.n_envs = n_envs;
    design.seed = common.seed.unwrap_or(design.seed);
    let design_json = serde_json::to_vec(&design).expect("design serializes");
    let stem = format!("study_{}", case.as_str());
    write_manifest(
        &common.out,
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            schema_version: fieldplan::config::SCHEMA_VERSION,
            subcommand: "study",
            seed: design.seed,
            config_sha256: sha256_hex(&design_json),
            config_path: None,
            outputs: vec![
                format!("{stem}.csv"),
                format!("{stem}.json"),
                format!("{stem}.txt"),
            ],
        },
    )?;
    if common.verbose {
        eprintln!(
            "running {} study: {} states, {} envs, seed {}",
            case.as_str(),
            design.n_states,
            design.n_envs,
            design.seed
        );
    }
    let result = run_study(&design)?;
    result.write_csv(&common.out.join(format!("{stem}.csv")))?;
    fs::write(
        common.out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&result).expect("result serializes"),
    )?;
    let table = result.table();
    fs::write(common.out.join(format!("{stem}.txt")), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_bench(
    common: &Common,
    resolutions: &[f64],
    reps: usize,
    refit_problems: Option<usize>,
) -> Result<(), Error> {
    let design = BenchDesign {
        resolutions: resolutions.to_vec(),
        reps,
        seed: common.seed.unwrap_or(1),
        ..BenchDesign::default()
    };
    let design_json = serde_json::to_vec(&design).expect("design serializes");
    let mut outputs = vec!["bench_edt.csv".into(), "bench_edt.txt".into()];
    if refit_problems.is_some() {
        outputs.push("refit_comparison.json".into());
    }
    write_manifest(
        &common.out,
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            schema_version: fieldplan::config::SCHEMA_VERSION,
            subcommand: "bench-edt",
            seed: design.seed,
            config_sha256: sha256_hex(&design_json),
            config_path: None,
            outputs,
        },
    )?;
    let report = run_field_bench(&design)?;
    report.write_csv(&common.out.join("bench_edt.csv"))?;
    let table = report.table();
    fs::write(common.out.join("bench_edt.txt"), &table)?;
    print!("{table}");
    if let Some(n) = refit_problems {
        let cmp = run_refit_comparison(design.seed, n)?;
        fs::write(
            common.out.join("refit_comparison.json"),
            serde_json::to_string_pretty(&cmp).expect("comparison serializes"),
        )?;
        println!(
            "refit warm start: {:.2} iters vs straight {:.2} (ratio {:.3}, {} problems)",
            cmp.refit_mean_iters, cmp.straight_mean_iters, cmp.ratio, cmp.n_problems
        );
    }
    Ok(())
}

fn cmd_replan(common: &Common, config: &Path, dump_fields: Option<f64>) -> Result<i32, Error> {
    let (scenario, bytes) = load_with_seed(config, common.seed)?;
    let mut outputs = vec![
        "execution_log.json".into(),
        "execution_series.csv".into(),
        "timings.json".into(),
    ];
    if dump_fields.is_some() {
        outputs.push("fields/".into());
    }
    write_manifest(
        &common.out,
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            schema_version: fieldplan::config::SCHEMA_VERSION,
            subcommand: "replan",
            seed: scenario.seed,
            config_sha256: sha256_hex(&bytes),
            config_path: Some(config.display().to_string()),
            outputs,
        },
    )?;
    let world = scenario.world()?;
    let log = run_replanning(
        &scenario.model,
        &scenario.start,
        &scenario.goal,
        world,
        &scenario.planner,
        &scenario.replan,
    )?;
    fs::write(common.out.join("execution_log.json"), log.to_canonical_json())?;
    let mut csv = Vec::new();
    log.write_series_csv(&mut csv)?;
    fs::write(common.out.join("execution_series.csv"), csv)?;
    // Wall-clock stage timings are machine-dependent; they live outside the
    // deterministic log.
    fs::write(
        common.out.join("timings.json"),
        serde_json::to_string_pretty(&timing_summary(&log)).expect("timings serialize"),
    )?;
    if let Some(period) = dump_fields {
        dump_field_series(&scenario, period, &common.out.join("fields"))?;
    }
    match log.status {
        RunStatus::Reached => {
            println!(
                "reached goal at t = {:.2} s with {} re-plan(s), min clearance {}",
                log.t_final,
                log.n_replans,
                log.min_clearance
                    .map(|c| format!("{c:.3} m"))
                    .unwrap_or_else(|| "n/a".into())
            );
            Ok(0)
        }
        RunStatus::Failed => {
            eprintln!(
                "failed at t = {:.2} s: {}",
                log.t_final,
                log.fail_reason.as_deref().unwrap_or("unknown")
            );
            Ok(1)
        }
    }
}

#[derive(Serialize)]
struct TimingSummary {
    monitor_checks: usize,
    monitor_us_median: f64,
    replans: usize,
    replan_us_median: f64,
    field_rebuilds: usize,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn timing_summary(log: &fieldplan::ExecutionLog) -> TimingSummary {
    TimingSummary {
        monitor_checks: log.monitor_us.len(),
        monitor_us_median: median(&log.monitor_us),
        replans: log.replan_us.len(),
        replan_us_median: median(&log.replan_us),
        field_rebuilds: log.field_rebuilds,
    }
}

/// Re-simulates the world alone (it is independent of the robot) and dumps
/// the field at a fixed period for offline plotting.
fn dump_field_series(scenario: &Scenario, period: f64, dir: &Path) -> Result<(), Error> {
    if !(period > 0.0) {
        return Err(Error::InvalidParameter(
            "field dump period must be positive".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut world = scenario.world()?;
    let horizon = scenario
        .config
        .moving_obstacles
        .iter()
        .flat_map(|m| m.waypoints.iter().map(|w| w.0))
        .fold(0.0, f64::max);
    let mut t = 0.0;
    let mut idx = 0usize;
    loop {
        world.step_to(t);
        let mut file = fs::File::create(dir.join(format!("field_{idx:04}.bin")))?;
        world.field().dump(&mut file)?;
        idx += 1;
        if t >= horizon {
            break;
        }
        t = (t + period).min(horizon);
    }
    Ok(())
}

fn cmd_inspect(
    common: &Common,
    config: &Path,
    slice: Option<usize>,
    image: bool,
) -> Result<(), Error> {
    let (scenario, bytes) = load_with_seed(config, common.seed)?;
    let world = scenario.world()?;
    let field = world.field();
    let spec = field.spec().clone();
    let k = slice.unwrap_or(spec.dims[2] / 2);
    if k >= spec.dims[2] {
        return Err(Error::InvalidParameter(format!(
            "slice index {k} outside grid (nz = {})",
            spec.dims[2]
        )));
    }
    let slice_csv = format!("slice_z{k}.csv");
    let mut outputs = vec!["field_summary.json".into(), slice_csv.clone()];
    if image {
        outputs.push(format!("slice_z{k}.pgm"));
    }
    write_manifest(
        &common.out,
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            schema_version: fieldplan::config::SCHEMA_VERSION,
            subcommand: "inspect-field",
            seed: scenario.seed,
            config_sha256: sha256_hex(&bytes),
            config_path: Some(config.display().to_string()),
            outputs,
        },
    )?;

    #[derive(Serialize)]
    struct Summary {
        kind: FieldKind,
        origin: [f64; 3],
        resolution: f64,
        dims: [usize; 3],
        min_value: f64,
        max_value: f64,
        occupancy_sha256: String,
    }
    let summary = Summary {
        kind: field.kind(),
        origin: spec.origin,
        resolution: spec.resolution,
        dims: spec.dims,
        min_value: field.min_value(),
        max_value: field.max_value(),
        occupancy_sha256: world.occupancy_hash(),
    };
    fs::write(
        common.out.join("field_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_slice(&field, k, &common.out.join(&slice_csv))?;
    if image {
        write_slice_pgm(&field, k, &common.out.join(format!("slice_z{k}.pgm")))?;
    }
    println!(
        "{} field {}x{}x{} @ {} m: values in [{:.4}, {:.4}], slice z={k} written",
        field.kind().as_str(),
        spec.dims[0],
        spec.dims[1],
        spec.dims[2],
        spec.resolution,
        summary.min_value,
        summary.max_value
    );
    Ok(())
}

/// Rows are y (ascending), columns x; one header row of x indices.
fn write_slice(field: &DistanceField, k: usize, path: &Path) -> Result<(), Error> {
    let dims = field.spec().dims;
    let mut out = String::from("y\\x");
    for i in 0..dims[0] {
        write!(out, ",{i}").expect("string write");
    }
    out.push('\n');
    for j in 0..dims[1] {
        write!(out, "{j}").expect("string write");
        for i in 0..dims[0] {
            write!(out, ",{}", field.value_at([i, j, k])).expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// ASCII PGM, values linearly mapped so min -> 0 (dark = close/inside).
fn write_slice_pgm(field: &DistanceField, k: usize, path: &Path) -> Result<(), Error> {
    let dims = field.spec().dims;
    let (lo, hi) = (field.min_value(), field.max_value());
    let span = (hi - lo).max(1e-12);
    let mut out = format!("P2\n{} {}\n255\n", dims[0], dims[1]);
    for j in (0..dims[1]).rev() {
        for i in 0..dims[0] {
            let v = field.value_at([i, j, k]);
            let g = ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
            write!(out, "{g} ").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Error> {
    match &cli.cmd {
        Cmd::Study {
            common,
            case,
            n_states,
            n_envs,
        } => cmd_study(common, case, *n_states, *n_envs).map(|()| 0),
        Cmd::BenchEdt {
            common,
            resolutions,
            reps,
            refit_problems,
        } => cmd_bench(common, resolutions, *reps, *refit_problems).map(|()| 0),
        Cmd::Replan {
            common,
            config,
            dump_fields,
        } => cmd_replan(common, config, *dump_fields),
        Cmd::InspectField {
            common,
            config,
            slice,
            image,
        } => cmd_inspect(common, config, *slice, *image).map(|()| 0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
