//! Run configuration: flat INI-style `key = value` files, dotted
//! command-line overrides, consistency checks, and a stable hash echoed
//! into run manifests.
//!
//! Defaults reproduce the standard problem (2 flavors, 100 energy bins,
//! 10 azimuthal bins, 10,000 polar bins) with a 3:1 accelerator-to-CPU
//! load weight.

use std::path::{Path, PathBuf};

use num_rational::Ratio;

use crate::grid::{build_grid, Grid, GridConfig};
use crate::hamiltonian::{MatterProfile, SelfCoupling, VacuumParams};
use crate::integrator::{Physics, StepConfig};
use crate::state::Spectra;
use crate::topology::{make_plan, parse_weight, DeviceSpec, RankPlan, Weight};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IoMode {
    Off,
    Direct,
    Staged,
}

impl IoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IoMode::Off => "off",
            IoMode::Direct => "direct",
            IoMode::Staged => "staged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    /// Vector widths for kernel sweeps.
    pub widths: Vec<usize>,
    pub iterations: u64,
    /// Widths must be positive multiples of this platform hint.
    pub lane_hint: usize,
    /// Steps-per-second measurement window, seconds.
    pub duration_s: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            widths: vec![8, 16, 32, 64, 128, 256, 512, 1024],
            iterations: 10_000_000,
            lane_hint: 8,
            duration_s: 100.0,
        }
    }
}

/// One device class line in the config; expands to `count` ranks.
#[derive(Debug, Clone, PartialEq)]
struct DeviceEntry {
    count: usize,
    weight: Weight,
    threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub spectra: Spectra,
    pub vacuum: VacuumParams,
    pub mu0: f64,
    pub step: StepConfig,
    /// Radial steps taken by `run`.
    pub n_steps: u64,
    pub chunk_size: usize,
    cpu: DeviceEntry,
    phi: DeviceEntry,
    pub io_mode: IoMode,
    pub snapshot_interval: u64,
    pub out_dir: PathBuf,
    pub bench: BenchParams,
    /// Seed for test-ensemble generation only; the physics is
    /// deterministic.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig::default(),
            spectra: Spectra::default(),
            vacuum: VacuumParams::default(),
            mu0: 1.0,
            step: StepConfig::default(),
            n_steps: 1000,
            chunk_size: crate::state::DEFAULT_CHUNK_SIZE,
            cpu: DeviceEntry {
                count: 1,
                weight: Ratio::from_integer(1),
                threads: 4,
            },
            // accelerator load weight defaults to 3x the CPU weight
            phi: DeviceEntry {
                count: 0,
                weight: Ratio::from_integer(3),
                threads: 244,
            },
            io_mode: IoMode::Off,
            snapshot_interval: 100,
            out_dir: PathBuf::from("out"),
            bench: BenchParams::default(),
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, at: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{at}: invalid value '{value}' for key '{key}'")))
}

impl RunConfig {
    /// Apply one `key = value` assignment. `at` locates the assignment
    /// ("file.ini line 7" or "flag --grid.n_theta") for error messages.
    pub fn set(&mut self, key: &str, value: &str, at: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "grid.n_theta" => self.grid.n_theta = parse_num(key, v, at)?,
            "grid.n_phi" => self.grid.n_phi = parse_num(key, v, at)?,
            "grid.n_energy" => self.grid.n_energy = parse_num(key, v, at)?,
            "grid.n_flavors" => self.grid.n_flavors = parse_num(key, v, at)?,
            "grid.radius_ns" => self.grid.radius_ns = parse_num(key, v, at)?,
            "grid.e_min" => self.grid.e_min = parse_num(key, v, at)?,
            "grid.e_max" => self.grid.e_max = parse_num(key, v, at)?,
            "spectra.nu.flavor" => self.spectra.nu.initial_flavor = parse_num(key, v, at)?,
            "spectra.nu.luminosity" => self.spectra.nu.luminosity = parse_num(key, v, at)?,
            "spectra.nu.mean_energy" => self.spectra.nu.mean_energy = parse_num(key, v, at)?,
            "spectra.nu.pinch" => self.spectra.nu.pinch = parse_num(key, v, at)?,
            "spectra.antinu.flavor" => self.spectra.antinu.initial_flavor = parse_num(key, v, at)?,
            "spectra.antinu.luminosity" => self.spectra.antinu.luminosity = parse_num(key, v, at)?,
            "spectra.antinu.mean_energy" => {
                self.spectra.antinu.mean_energy = parse_num(key, v, at)?
            }
            "spectra.antinu.pinch" => self.spectra.antinu.pinch = parse_num(key, v, at)?,
            "vacuum.delta_m2" => self.vacuum.delta_m2 = parse_num(key, v, at)?,
            "vacuum.theta_v" => self.vacuum.theta_v = parse_num(key, v, at)?,
            "vacuum.matter_lambda" => {
                self.vacuum.matter = MatterProfile::Constant(parse_num(key, v, at)?)
            }
            "coupling.mu0" => self.mu0 = parse_num(key, v, at)?,
            "step.h" => self.step.h = parse_num(key, v, at)?,
            "step.n_substeps" => self.step.n_substeps = parse_num(key, v, at)?,
            "step.renormalize_every" => self.step.renormalize_every = parse_num(key, v, at)?,
            "step.cos_theta_floor" => self.step.cos_theta_floor = parse_num(key, v, at)?,
            "run.n_steps" => self.n_steps = parse_num(key, v, at)?,
            "run.seed" => self.seed = parse_num(key, v, at)?,
            "topology.chunk_size" => self.chunk_size = parse_num(key, v, at)?,
            "device.cpu.count" => self.cpu.count = parse_num(key, v, at)?,
            "device.cpu.weight" => {
                self.cpu.weight =
                    parse_weight(v).map_err(|e| Error::Config(format!("{at}: {e}")))?
            }
            "device.cpu.threads" => self.cpu.threads = parse_num(key, v, at)?,
            "device.phi.count" => self.phi.count = parse_num(key, v, at)?,
            "device.phi.weight" => {
                self.phi.weight =
                    parse_weight(v).map_err(|e| Error::Config(format!("{at}: {e}")))?
            }
            "device.phi.threads" => self.phi.threads = parse_num(key, v, at)?,
            "io.mode" => {
                self.io_mode = match v {
                    "off" => IoMode::Off,
                    "direct" => IoMode::Direct,
                    "staged" => IoMode::Staged,
                    other => {
                        return Err(Error::Config(format!(
                            "{at}: io.mode must be off|direct|staged, got '{other}'"
                        )))
                    }
                }
            }
            "io.interval" => self.snapshot_interval = parse_num(key, v, at)?,
            "io.out_dir" => self.out_dir = PathBuf::from(v),
            "bench.widths" => {
                let widths: Result<Vec<usize>> =
                    v.split(',').map(|w| parse_num(key, w, at)).collect();
                self.bench.widths = widths?;
            }
            "bench.iterations" => self.bench.iterations = parse_num(key, v, at)?,
            "bench.lane_hint" => self.bench.lane_hint = parse_num(key, v, at)?,
            "bench.duration_s" => self.bench.duration_s = parse_num(key, v, at)?,
            other => {
                return Err(Error::Config(format!("{at}: unknown key '{other}'")));
            }
        }
        Ok(())
    }

    /// Fully-resolved key/value view in canonical (sorted) order; the
    /// basis for the manifest echo and the stable hash.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let w = |r: Weight| {
            if r.is_integer() {
                r.numer().to_string()
            } else {
                format!("{}/{}", r.numer(), r.denom())
            }
        };
        let lambda = match &self.vacuum.matter {
            MatterProfile::Constant(l) => *l,
            profile => profile.lambda(self.grid.radius_ns),
        };
        let mut kv: Vec<(String, String)> = vec![
            ("grid.n_theta", self.grid.n_theta.to_string()),
            ("grid.n_phi", self.grid.n_phi.to_string()),
            ("grid.n_energy", self.grid.n_energy.to_string()),
            ("grid.n_flavors", self.grid.n_flavors.to_string()),
            ("grid.radius_ns", format!("{:?}", self.grid.radius_ns)),
            ("grid.e_min", format!("{:?}", self.grid.e_min)),
            ("grid.e_max", format!("{:?}", self.grid.e_max)),
            (
                "spectra.nu.flavor",
                self.spectra.nu.initial_flavor.to_string(),
            ),
            (
                "spectra.nu.luminosity",
                format!("{:?}", self.spectra.nu.luminosity),
            ),
            (
                "spectra.nu.mean_energy",
                format!("{:?}", self.spectra.nu.mean_energy),
            ),
            ("spectra.nu.pinch", format!("{:?}", self.spectra.nu.pinch)),
            (
                "spectra.antinu.flavor",
                self.spectra.antinu.initial_flavor.to_string(),
            ),
            (
                "spectra.antinu.luminosity",
                format!("{:?}", self.spectra.antinu.luminosity),
            ),
            (
                "spectra.antinu.mean_energy",
                format!("{:?}", self.spectra.antinu.mean_energy),
            ),
            (
                "spectra.antinu.pinch",
                format!("{:?}", self.spectra.antinu.pinch),
            ),
            ("vacuum.delta_m2", format!("{:?}", self.vacuum.delta_m2)),
            ("vacuum.theta_v", format!("{:?}", self.vacuum.theta_v)),
            ("vacuum.matter_lambda", format!("{lambda:?}")),
            ("coupling.mu0", format!("{:?}", self.mu0)),
            ("step.h", format!("{:?}", self.step.h)),
            ("step.n_substeps", self.step.n_substeps.to_string()),
            (
                "step.renormalize_every",
                self.step.renormalize_every.to_string(),
            ),
            (
                "step.cos_theta_floor",
                format!("{:?}", self.step.cos_theta_floor),
            ),
            ("run.n_steps", self.n_steps.to_string()),
            ("run.seed", self.seed.to_string()),
            ("topology.chunk_size", self.chunk_size.to_string()),
            ("device.cpu.count", self.cpu.count.to_string()),
            ("device.cpu.weight", w(self.cpu.weight)),
            ("device.cpu.threads", self.cpu.threads.to_string()),
            ("device.phi.count", self.phi.count.to_string()),
            ("device.phi.weight", w(self.phi.weight)),
            ("device.phi.threads", self.phi.threads.to_string()),
            ("io.mode", self.io_mode.as_str().to_string()),
            ("io.interval", self.snapshot_interval.to_string()),
            ("io.out_dir", self.out_dir.display().to_string()),
            (
                "bench.widths",
                self.bench
                    .widths
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("bench.iterations", self.bench.iterations.to_string()),
            ("bench.lane_hint", self.bench.lane_hint.to_string()),
            ("bench.duration_s", format!("{:?}", self.bench.duration_s)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        kv.sort();
        kv
    }

    /// FNV-1a over the canonical key/value form; independent of key order
    /// in the source file.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (k, v) in self.to_key_values() {
            eat(k.as_bytes());
            eat(b"=");
            eat(v.as_bytes());
            eat(b"\n");
        }
        h
    }

    pub fn devices(&self) -> Vec<DeviceSpec> {
        let mut devs = Vec::new();
        if self.cpu.count > 0 {
            devs.push(DeviceSpec {
                kind: "cpu".into(),
                count: self.cpu.count,
                weight: self.cpu.weight,
                threads: self.cpu.threads,
            });
        }
        if self.phi.count > 0 {
            devs.push(DeviceSpec {
                kind: "phi".into(),
                count: self.phi.count,
                weight: self.phi.weight,
                threads: self.phi.threads,
            });
        }
        devs
    }

    pub fn build_grid(&self) -> Result<Grid> {
        build_grid(&self.grid)
    }

    pub fn physics(&self) -> Physics {
        Physics {
            vacuum: self.vacuum.clone(),
            coupling: SelfCoupling {
                mu0: self.mu0,
                radius_ns: self.grid.radius_ns,
            },
        }
    }

    pub fn plan(&self) -> Result<RankPlan> {
        make_plan(self.grid.n_theta, &self.devices(), self.chunk_size)
    }

    /// Cross-field consistency; individual modules re-validate their own
    /// pieces when used.
    pub fn validate(&self) -> Result<()> {
        build_grid(&self.grid)?;
        self.spectra.validate(self.grid.n_flavors)?;
        self.step.validate()?;
        self.plan()?;
        if self.io_mode == IoMode::Staged && self.phi.count > 0 && self.cpu.count == 0 {
            return Err(Error::Config(
                "io.mode = staged requires device.cpu.count >= 1 to stage for the \
                 device.phi ranks"
                    .into(),
            ));
        }
        if self.io_mode != IoMode::Off && self.snapshot_interval == 0 {
            return Err(Error::Config(
                "io.interval must be >= 1 when io.mode is not off".into(),
            ));
        }
        if self.bench.lane_hint == 0 {
            return Err(Error::Config("bench.lane_hint must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parse an INI-style config file plus `(key, value)` overrides (file
/// values first, overrides second). `path = None` starts from defaults.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        apply_ini(&mut cfg, &text, &path.display().to_string())?;
    }
    for (key, value) in overrides {
        cfg.set(key, value, &format!("flag --{key}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_ini(cfg: &mut RunConfig, text: &str, source: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let at = format!("{source} line {}", lineno + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{at}: expected 'key = value', got '{line}'")))?;
        cfg.set(key.trim(), value, &at)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_standard_problem() {
        let cfg = parse_config(None, &[]).unwrap();
        assert_eq!(cfg.grid.n_flavors, 2);
        assert_eq!(cfg.grid.n_energy, 100);
        assert_eq!(cfg.grid.n_phi, 10);
        assert_eq!(cfg.grid.n_theta, 10_000);
        // accelerator : cpu load weight defaults to 3 : 1
        assert_eq!(cfg.phi.weight / cfg.cpu.weight, Ratio::from_integer(3));
        assert_eq!(cfg.bench.iterations, 10_000_000);
        assert!((cfg.bench.duration_s - 100.0).abs() < 1e-12);
    }

    #[test]
    fn file_values_then_flag_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(
            &path,
            "# comment\n\ngrid.n_theta = 64\nstep.h = 0.02\nio.mode = direct\n",
        )
        .unwrap();
        let cfg = parse_config(Some(&path), &[("grid.n_theta".into(), "128".into())]).unwrap();
        assert_eq!(cfg.grid.n_theta, 128);
        assert_eq!(cfg.step.h, 0.02);
        assert_eq!(cfg.io_mode, IoMode::Direct);
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "grid.n_theta = 64\ngrid.bogus = 1\n").unwrap();
        let err = parse_config(Some(&path), &[]).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("line 2") && msg.contains("unknown key"),
            "{msg}"
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ini");
        std::fs::write(&path, "\n\nnot an assignment\n").unwrap();
        let err = parse_config(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn staged_mode_without_cpu_ranks_is_inconsistent() {
        let err = parse_config(
            None,
            &[
                ("device.cpu.count".into(), "0".into()),
                ("device.phi.count".into(), "2".into()),
                ("io.mode".into(), "staged".into()),
            ],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("device.cpu.count") && msg.contains("staged"),
            "{msg}"
        );
    }

    #[test]
    fn hash_is_stable_across_key_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ini");
        let b = dir.path().join("b.ini");
        std::fs::write(&a, "grid.n_theta = 64\nstep.h = 0.02\n").unwrap();
        std::fs::write(&b, "step.h = 0.02\ngrid.n_theta = 64\n").unwrap();
        let ca = parse_config(Some(&a), &[]).unwrap();
        let cb = parse_config(Some(&b), &[]).unwrap();
        assert_eq!(ca.hash(), cb.hash());
        let cc = parse_config(None, &[]).unwrap();
        assert_ne!(ca.hash(), cc.hash());
    }

    #[test]
    fn invalid_values_name_the_key_and_source() {
        let err = parse_config(None, &[("step.h".into(), "fast".into())]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step.h") && msg.contains("flag"), "{msg}");
    }
}
