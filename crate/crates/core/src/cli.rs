//! Command-line driver: `run`, `partition`, `bench`, `inspect`,
//! `validate`. Argument parsing is hand-rolled: a leading subcommand,
//! then `--flag value` / `--flag=value` pairs, where any dotted flag
//! (`--grid.n_theta=64`) is a config override.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::bench::{measure_steps_per_second, sweep_csv};
use crate::config::{parse_config, RunConfig};
use crate::snapshot::read_snapshot;
use crate::{Error, Result};

pub const USAGE: &str = "\
usage: bulbsim <command> [options]

commands:
  run        evolve the configured problem across all simulated ranks
  partition  print the theta-bin partition table without computing
  bench      flops | transc | steps measurement harness
  inspect    print a snapshot header and summary statistics
  validate   run the built-in oracle suite

common options:
  --config <path>        INI config file (flat key = value)
  --<section>.<key>=<v>  override any config key, e.g. --grid.n_theta=64
  --out <dir>            shorthand for --io.out_dir
  --threads <n>          shorthand for --device.cpu.threads
  --duration <s>         shorthand for --bench.duration_s (bench steps)
  --n-theta <n>          shorthand for --grid.n_theta (partition)
  --ranks <n>            partition: n equal-weight cpu ranks

exit codes: 0 ok, 1 runtime failure, 2 usage, 3 config error,
4 data-integrity error.
";

/// Parsed common arguments: config path, key overrides, positionals.
struct ParsedArgs {
    config: Option<PathBuf>,
    overrides: Vec<(String, String)>,
    positional: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<ParsedArgs> {
    let mut out = ParsedArgs {
        config: None,
        overrides: Vec::new(),
        positional: Vec::new(),
    };
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        if let Some(flag) = arg.strip_prefix("--") {
            let (name, inline) = match flag.split_once('=') {
                Some((n, v)) => (n, Some(v.to_string())),
                None => (flag, None),
            };
            let mut value = || -> Result<String> {
                if let Some(v) = inline.clone() {
                    return Ok(v);
                }
                it.next()
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("flag --{name} needs a value")))
            };
            match name {
                "config" => out.config = Some(PathBuf::from(value()?)),
                "out" => out.overrides.push(("io.out_dir".into(), value()?)),
                "threads" => out.overrides.push(("device.cpu.threads".into(), value()?)),
                "duration" => out.overrides.push(("bench.duration_s".into(), value()?)),
                "n-theta" => out.overrides.push(("grid.n_theta".into(), value()?)),
                "ranks" => {
                    let n = value()?;
                    out.overrides.push(("device.cpu.count".into(), n));
                    out.overrides.push(("device.cpu.weight".into(), "1".into()));
                    out.overrides.push(("device.phi.count".into(), "0".into()));
                }
                dotted if dotted.contains('.') => {
                    out.overrides.push((dotted.to_string(), value()?));
                }
                other => {
                    return Err(Error::Usage(format!("unknown flag --{other}")));
                }
            }
        } else {
            out.positional.push(arg.clone());
        }
    }
    Ok(out)
}

fn load_config(parsed: &ParsedArgs) -> Result<RunConfig> {
    parse_config(parsed.config.as_deref(), &parsed.overrides)
}

fn cmd_run(parsed: &ParsedArgs, out: &mut impl std::io::Write) -> Result<()> {
    let cfg = load_config(parsed)?;
    let summary = crate::runner::run(&cfg)?;
    let steps = summary
        .diagnostics
        .iter()
        .map(|d| d.steps)
        .max()
        .unwrap_or(0);
    let drift = summary
        .diagnostics
        .iter()
        .map(|d| d.max_norm_drift)
        .fold(0.0f64, f64::max);
    writeln!(out, "config_hash {:016x}", summary.config_hash)?;
    writeln!(
        out,
        "ranks {}  steps {}  max_norm_drift {:.3e}  snapshots {}",
        summary.slices.len(),
        steps,
        drift,
        summary.files.len()
    )?;
    Ok(())
}

fn cmd_partition(parsed: &ParsedArgs, out: &mut impl std::io::Write) -> Result<()> {
    let cfg = load_config(parsed)?;
    let plan = cfg.plan()?;
    write!(out, "{}", plan.table())?;
    Ok(())
}

fn cmd_bench(parsed: &ParsedArgs, out: &mut impl std::io::Write) -> Result<()> {
    let kernel = parsed
        .positional
        .get(1)
        .map(String::as_str)
        .ok_or_else(|| Error::Usage("bench needs a kernel: flops | transc | steps".into()))?;
    let cfg = load_config(parsed)?;
    let threads = cfg.devices().first().map_or(1, |d| d.threads);
    match kernel {
        "flops" => {
            let csv = sweep_csv(
                &["flops"],
                &cfg.bench.widths,
                cfg.bench.iterations,
                threads,
                cfg.bench.lane_hint,
                cfg.hash(),
            )?;
            write!(out, "{csv}")?;
        }
        "transc" => {
            let csv = sweep_csv(
                &["sincos", "exp"],
                &cfg.bench.widths,
                cfg.bench.iterations,
                threads,
                cfg.bench.lane_hint,
                cfg.hash(),
            )?;
            write!(out, "{csv}")?;
        }
        "steps" => {
            let report =
                measure_steps_per_second(&cfg, Duration::from_secs_f64(cfg.bench.duration_s))?;
            writeln!(out, "{}", crate::bench::CSV_HEADER)?;
            writeln!(out, "{}", report.csv_row())?;
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown bench kernel '{other}' (expected flops | transc | steps)"
            )));
        }
    }
    Ok(())
}

fn cmd_inspect(parsed: &ParsedArgs, out: &mut impl std::io::Write) -> Result<()> {
    let path = parsed
        .positional
        .get(1)
        .ok_or_else(|| Error::Usage("inspect needs a snapshot path".into()))?;
    let snap = read_snapshot(Path::new(path))?;
    let h = &snap.header;
    writeln!(out, "file             {path}")?;
    writeln!(out, "format_version   {}", crate::snapshot::FORMAT_VERSION)?;
    writeln!(out, "n_flavors        {}", h.n_flavors)?;
    writeln!(out, "n_phi            {}", h.n_phi)?;
    writeln!(out, "n_energy         {}", h.n_energy)?;
    writeln!(out, "n_theta_local    {}", h.n_theta_local)?;
    writeln!(out, "theta_offset     {}", h.global_theta_offset)?;
    writeln!(out, "step_index       {}", h.step_index)?;
    writeln!(out, "radius           {:?}", h.radius)?;
    writeln!(out, "writer_rank      {}", h.writer_rank)?;
    writeln!(out, "owner_rank       {}", h.owner_rank)?;

    // summary statistics over |psi|^2 norms per amplitude vector
    let nf = h.n_flavors as usize;
    let ne = h.n_energy as usize;
    let vectors = snap.amps.len() / (nf * ne);
    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for v in 0..vectors {
        let base = v * nf * ne;
        for k in 0..ne {
            let mut norm2 = 0.0;
            for c in 0..nf {
                let i = base + c * ne + k;
                norm2 += snap.amps.re[i] * snap.amps.re[i] + snap.amps.im[i] * snap.amps.im[i];
            }
            min = min.min(norm2);
            max = max.max(norm2);
            sum += norm2;
        }
    }
    let count = (vectors * ne) as f64;
    writeln!(out, "norm2_min        {min:.12}")?;
    writeln!(out, "norm2_max        {max:.12}")?;
    writeln!(out, "norm2_mean       {:.12}", sum / count)?;
    Ok(())
}

fn cmd_validate(parsed: &ParsedArgs, out: &mut impl std::io::Write) -> Result<()> {
    let cfg = load_config(parsed)?;
    let outcomes = crate::validate::run_all(cfg.seed)?;
    let mut all_passed = true;
    for check in &outcomes {
        all_passed &= check.passed;
        writeln!(
            out,
            "{} {} - {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        )?;
    }
    if !all_passed {
        return Err(Error::Runtime("validation checks failed".into()));
    }
    Ok(())
}

/// Execute one invocation; `args` excludes the program name.
pub fn run_cli(args: &[String], out: &mut impl std::io::Write) -> Result<()> {
    let parsed = parse_args(args)?;
    let command = parsed
        .positional
        .first()
        .map(String::as_str)
        .ok_or_else(|| Error::Usage("missing command".into()))?;
    match command {
        "run" => cmd_run(&parsed, out),
        "partition" => cmd_partition(&parsed, out),
        "bench" => cmd_bench(&parsed, out),
        "inspect" => cmd_inspect(&parsed, out),
        "validate" => cmd_validate(&parsed, out),
        other => Err(Error::Usage(format!("unknown command '{other}'"))),
    }
}

/// Top-level dispatch with exit-code mapping; usage errors also print the
/// usage text.
pub fn dispatch(args: &[String]) -> i32 {
    let mut stdout = std::io::stdout();
    match run_cli(args, &mut stdout) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::Usage(_)) {
                eprintln!("\n{USAGE}");
            }
            err.exit_code()
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Runtime(format!("output error: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (Result<()>, String) {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let mut buf = Vec::new();
        let res = run_cli(&args, &mut buf);
        (res, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn partition_table_shows_250_per_rank() {
        let (res, out) = run_capture(&["partition", "--n-theta", "10000", "--ranks", "40"]);
        res.unwrap();
        let lines: Vec<&str> = out.trim_end().lines().collect();
        assert_eq!(lines.len(), 41, "{out}");
        for line in &lines[1..] {
            let fields: Vec<&str> = line.split_whitespace().collect();
            assert_eq!(fields[3], "250", "{line}");
        }
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        let (res, _) = run_capture(&["frobnicate"]);
        let err = res.unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_bench_kernel_is_a_usage_error() {
        let (res, _) = run_capture(&["bench", "warp"]);
        assert_eq!(res.unwrap_err().exit_code(), 2);
    }

    #[test]
    fn inspect_missing_file_maps_to_runtime_error() {
        let (res, _) = run_capture(&["inspect", "/nonexistent/snap.xflt"]);
        assert_eq!(res.unwrap_err().exit_code(), 1);
    }

    #[test]
    fn bad_config_value_maps_to_config_error() {
        let (res, _) = run_capture(&["partition", "--grid.n_theta=zero"]);
        assert_eq!(res.unwrap_err().exit_code(), 3);
    }

    #[test]
    fn run_tiny_problem_end_to_end() {
        let (res, out) = run_capture(&[
            "run",
            "--grid.n_theta=4",
            "--grid.n_phi=1",
            "--grid.n_energy=2",
            "--run.n_steps=2",
            "--step.n_substeps=2",
            "--threads",
            "1",
        ]);
        res.unwrap();
        assert!(out.contains("steps 2"), "{out}");
    }

    #[test]
    fn bench_flops_emits_csv() {
        let (res, out) = run_capture(&[
            "bench",
            "flops",
            "--bench.widths=8",
            "--bench.iterations=1000",
            "--threads=1",
        ]);
        res.unwrap();
        let lines: Vec<&str> = out.trim_end().lines().collect();
        assert_eq!(lines[0], crate::bench::CSV_HEADER);
        assert_eq!(lines.len(), 2);
    }
}
