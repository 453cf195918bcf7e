//! Radial evolution of the coupled ensemble with the Gragg modified
//! midpoint method, recomputing the self-consistent potential at every
//! substep.
//!
//! Each substep has two phases: moment accumulation over read-only state
//! (parallel over fixed theta chunks, merged in ascending chunk order)
//! and the amplitude update (disjoint theta ranges per worker). The
//! moment source is abstracted behind [`MomentProvider`] so a single rank
//! and the simulated multi-rank exchange share the stepper.

use std::time::{Duration, Instant};

use crate::grid::local_angle;
use crate::hamiltonian::{
    accumulate_moments, neutrino_potential, GlobalMoments, MomentSet, SelfCoupling, VacuumParams,
};
use crate::state::{AmpBlock, Ensemble, Species};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    /// Radial step size, model length units.
    pub h: f64,
    /// Even number of midpoint substeps per step, >= 2.
    pub n_substeps: usize,
    /// Steps between renormalizations; 0 = never.
    pub renormalize_every: usize,
    /// Singularity guard for the 1/cos(theta) projection.
    pub cos_theta_floor: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            h: 0.01,
            n_substeps: 8,
            renormalize_every: 0,
            cos_theta_floor: 1e-6,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::Config("step.h must be > 0".into()));
        }
        if self.n_substeps < 2 || !self.n_substeps.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "step.n_substeps must be even and >= 2, got {}",
                self.n_substeps
            )));
        }
        Ok(())
    }
}

/// Physical parameters shared by every derivative evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Physics {
    pub vacuum: VacuumParams,
    pub coupling: SelfCoupling,
}

/// Fixed-size worker pool; all parallel regions in the crate run on it.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    threads: usize,
}

impl WorkerPool {
    pub fn new(threads: usize) -> Result<Self> {
        if threads < 1 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Runtime(format!("failed to build worker pool: {e}")))?;
        Ok(WorkerPool { pool, threads })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

/// Source of the globally reduced moments for a derivative evaluation.
/// The local (single-rank) provider reduces over the rank's own slice;
/// the multi-rank runner substitutes an allreduce over all ranks.
pub trait MomentProvider: Sync {
    fn global_moments(
        &self,
        ensemble: &Ensemble,
        r: f64,
        pool: &WorkerPool,
    ) -> Result<GlobalMoments>;
}

/// Single-rank provider: the ensemble slice is the whole problem.
pub struct LocalProvider;

impl MomentProvider for LocalProvider {
    fn global_moments(
        &self,
        ensemble: &Ensemble,
        r: f64,
        pool: &WorkerPool,
    ) -> Result<GlobalMoments> {
        let range = ensemble.theta_start()..ensemble.theta_start() + ensemble.n_theta_local();
        Ok(accumulate_moments_parallel(ensemble, range, r, pool)?.resolve())
    }
}

/// Chunk-parallel moment accumulation. Each fixed global chunk is
/// accumulated independently and the partial sets merged; the result does
/// not depend on the thread count.
pub fn accumulate_moments_parallel(
    ensemble: &Ensemble,
    theta_range: std::ops::Range<usize>,
    r: f64,
    pool: &WorkerPool,
) -> Result<MomentSet> {
    use rayon::prelude::*;

    let cs = ensemble.chunk_size();
    if theta_range.is_empty() {
        return accumulate_moments(ensemble, theta_range, r);
    }
    let first_chunk = theta_range.start / cs;
    let last_chunk = (theta_range.end - 1) / cs;
    let tasks: Vec<std::ops::Range<usize>> = (first_chunk..=last_chunk)
        .map(|chunk| {
            let lo = (chunk * cs).max(theta_range.start);
            let hi = ((chunk + 1) * cs).min(theta_range.end);
            lo..hi
        })
        .collect();
    // a single worker (or single chunk) gains nothing from the pool
    let partials: Vec<Result<MomentSet>> = if pool.threads() == 1 || tasks.len() == 1 {
        tasks
            .iter()
            .map(|range| accumulate_moments(ensemble, range.clone(), r))
            .collect()
    } else {
        pool.install(|| {
            tasks
                .par_iter()
                .map(|range| accumulate_moments(ensemble, range.clone(), r))
                .collect()
        })
    };
    let mut iter = partials.into_iter();
    let mut set = iter.next().expect("at least one chunk")?;
    for partial in iter {
        set.merge(partial?)?;
    }
    Ok(set)
}

/// d psi / dr = -i * H_eff * psi for every species, beam, and energy bin.
/// Output has the same SoA shape as the ensemble amplitudes.
///
/// The two-flavor effective Hamiltonian is expanded into scalars so the
/// energy loop stays free of allocations.
pub fn derivative(
    ensemble: &Ensemble,
    r: f64,
    moments: &GlobalMoments,
    physics: &Physics,
    cfg: &StepConfig,
    pool: &WorkerPool,
) -> Result<AmpBlock> {
    use rayon::prelude::*;

    let grid = ensemble.grid();
    if grid.n_flavors != 2 {
        return Err(Error::Config(format!(
            "derivative supports exactly 2 flavors, got {}",
            grid.n_flavors
        )));
    }
    let nt = ensemble.n_theta_local();
    let np = grid.n_phi;
    let ne = grid.n_energy;
    let theta_stride = np * 2 * ne; // per-theta amplitudes of one species
    let species_stride = nt * theta_stride;
    let cs = ensemble.chunk_size();

    let mut out = AmpBlock::zeros(ensemble.amps().len());

    // Vacuum scalars shared by every beam.
    let c2 = (2.0 * physics.vacuum.theta_v).cos();
    let s2 = (2.0 * physics.vacuum.theta_v).sin();
    let lambda = physics.vacuum.matter.lambda(r);
    let amps = ensemble.amps();

    for species in Species::BOTH {
        let s = species.index();
        let base = s * species_stride;
        let (out_re, out_im) = (
            &mut out.re[base..base + species_stride],
            &mut out.im[base..base + species_stride],
        );
        let in_re = &amps.re[base..base + species_stride];
        let in_im = &amps.im[base..base + species_stride];
        let matter = match species {
            Species::Neutrino => lambda,
            Species::Antineutrino => -lambda,
        };

        let body = |chunk: usize, chunk_re: &mut [f64], chunk_im: &mut [f64]| -> Result<()> {
            let t0 = chunk * cs;
            let t1 = (t0 + cs).min(nt);
            for t in t0..t1 {
                let t_global = ensemble.theta_start() + t;
                let u = grid.u_nodes[t_global];
                let (cos_t, sin_t) = local_angle(grid.radius_ns, u, r)?;
                if cos_t <= cfg.cos_theta_floor {
                    return Err(Error::Tangential {
                        cos_theta: cos_t,
                        floor: cfg.cos_theta_floor,
                    });
                }
                let inv_cos = 1.0 / cos_t;
                for p in 0..np {
                    let phi = grid.phi_nodes[p];
                    let dir = [sin_t * phi.cos(), sin_t * phi.sin(), cos_t];
                    let hnu = neutrino_potential(moments, dir, r, &physics.coupling)?;
                    // Antineutrino self-coupling is -conj(H_nu):
                    // real parts flip, imaginary parts survive.
                    let (nu00, nu11, nu_r, nu_i) = match species {
                        Species::Neutrino => {
                            (hnu.re(0, 0), hnu.re(1, 1), hnu.re(0, 1), hnu.im(0, 1))
                        }
                        Species::Antineutrino => {
                            (-hnu.re(0, 0), -hnu.re(1, 1), -hnu.re(0, 1), hnu.im(0, 1))
                        }
                    };
                    let beam_in = t * theta_stride + p * 2 * ne;
                    let beam_out = (t - t0) * theta_stride + p * 2 * ne;
                    for k in 0..ne {
                        let e = grid.e_nodes[k];
                        let kv = physics.vacuum.delta_m2 / (4.0 * e);
                        let h00 = (nu00 + (-kv * c2 + matter)) * inv_cos;
                        let h11 = (nu11 + kv * c2) * inv_cos;
                        let hr = (nu_r + kv * s2) * inv_cos;
                        let hi = nu_i * inv_cos;
                        let a0 = in_re[beam_in + k];
                        let b0 = in_im[beam_in + k];
                        let a1 = in_re[beam_in + ne + k];
                        let b1 = in_im[beam_in + ne + k];
                        // d psi = -i H psi
                        chunk_re[beam_out + k] = h00 * b0 + hr * b1 + hi * a1;
                        chunk_im[beam_out + k] = -(h00 * a0 + hr * a1 - hi * b1);
                        chunk_re[beam_out + ne + k] = -hi * a0 + hr * b0 + h11 * b1;
                        chunk_im[beam_out + ne + k] = -(hr * a0 + hi * b0 + h11 * a1);
                    }
                }
            }
            Ok(())
        };

        if pool.threads() == 1 {
            for (chunk, (chunk_re, chunk_im)) in out_re
                .chunks_mut(cs * theta_stride)
                .zip(out_im.chunks_mut(cs * theta_stride))
                .enumerate()
            {
                body(chunk, chunk_re, chunk_im)?;
            }
        } else {
            let results: Vec<Result<()>> = pool.install(|| {
                out_re
                    .par_chunks_mut(cs * theta_stride)
                    .zip(out_im.par_chunks_mut(cs * theta_stride))
                    .enumerate()
                    .map(|(chunk, (chunk_re, chunk_im))| body(chunk, chunk_re, chunk_im))
                    .collect()
            });
            for res in results {
                res?;
            }
        }
    }
    Ok(out)
}

/// One Gragg modified midpoint step of size `cfg.h` over the coupled
/// system. The moment set entering each substep derivative is recomputed
/// from the substep state itself (self-consistency).
pub fn modified_midpoint_step<P: MomentProvider + ?Sized>(
    ensemble: &mut Ensemble,
    cfg: &StepConfig,
    physics: &Physics,
    provider: &P,
    pool: &WorkerPool,
    step_index: u64,
) -> Result<()> {
    cfg.validate()?;
    let n = cfg.n_substeps;
    let hp = cfg.h / n as f64;
    let r0 = ensemble.r_current;

    let eval = |state: &Ensemble, r: f64| -> Result<AmpBlock> {
        let moments = provider.global_moments(state, r, pool)?;
        derivative(state, r, &moments, physics, cfg, pool)
    };

    // z0 = psi(r); z1 = z0 + h' f(r, z0)
    let f0 = eval(ensemble, r0)?;
    let mut z_prev = ensemble.clone();
    let mut z_cur = ensemble.clone();
    z_cur.amps_mut().assign_axpy(ensemble.amps(), &f0, hp);
    z_cur.r_current = r0 + hp;

    // z_{m+1} = z_{m-1} + 2h' f(r + m h', z_m)
    for m in 1..n {
        let rm = r0 + m as f64 * hp;
        z_cur.r_current = rm;
        let fm = eval(&z_cur, rm)?;
        z_prev.amps_mut().axpy_in_place(&fm, 2.0 * hp);
        std::mem::swap(&mut z_prev, &mut z_cur);
    }
    // now z_cur = z_n, z_prev = z_{n-1}

    let r_end = r0 + cfg.h;
    z_cur.r_current = r_end;
    let fn_end = eval(&z_cur, r_end)?;

    // result = (z_n + z_{n-1} + h' f(r + h, z_n)) / 2
    let out = ensemble.amps_mut();
    let zn = z_cur.amps();
    let zp = z_prev.amps();
    for i in 0..out.len() {
        out.re[i] = 0.5 * (zn.re[i] + zp.re[i] + hp * fn_end.re[i]);
        out.im[i] = 0.5 * (zn.im[i] + zp.im[i] + hp * fn_end.im[i]);
    }
    ensemble.r_current = r_end;

    if !ensemble.amps().is_finite() {
        return Err(Error::BlowUp { step: step_index });
    }
    Ok(())
}

/// Called after every completed step; observers decide their own cadence.
pub trait StepObserver {
    fn on_step(&mut self, ensemble: &Ensemble, step_index: u64) -> Result<()>;
}

impl<F: FnMut(&Ensemble, u64) -> Result<()>> StepObserver for F {
    fn on_step(&mut self, ensemble: &Ensemble, step_index: u64) -> Result<()> {
        self(ensemble, step_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub steps: u64,
    pub max_norm_drift: f64,
    pub elapsed: Duration,
}

/// Repeatedly apply [`modified_midpoint_step`] until `r_current >= r_end`.
/// Norm drift is sampled before any renormalization so the reported value
/// reflects the integrator's intrinsic quality.
pub fn evolve<P: MomentProvider + ?Sized>(
    ensemble: &mut Ensemble,
    r_end: f64,
    cfg: &StepConfig,
    physics: &Physics,
    provider: &P,
    pool: &WorkerPool,
    observers: &mut [&mut dyn StepObserver],
) -> Result<Diagnostics> {
    cfg.validate()?;
    let start = Instant::now();
    let mut steps = 0u64;
    let mut max_drift = 0.0f64;
    // tolerance so that r_end reached by an exact number of steps does not
    // trigger a spurious extra step from rounding
    let tol = 1e-9 * cfg.h;
    while ensemble.r_current < r_end - tol {
        modified_midpoint_step(ensemble, cfg, physics, provider, pool, steps)?;
        steps += 1;
        max_drift = max_drift.max(ensemble.max_norm_deviation());
        if cfg.renormalize_every > 0 && steps.is_multiple_of(cfg.renormalize_every as u64) {
            ensemble.renormalize()?;
        }
        for obs in observers.iter_mut() {
            obs.on_step(ensemble, steps - 1).map_err(|e| {
                Error::Runtime(format!("observer failed at step {}: {e}", steps - 1))
            })?;
        }
    }
    Ok(Diagnostics {
        steps,
        max_norm_drift: max_drift,
        elapsed: start.elapsed(),
    })
}

/// Analytic two-flavor vacuum survival probability
/// P = 1 - sin^2(2 theta_v) sin^2(dm2 l / 4E) for a path length l.
pub fn vacuum_survival_probability(delta_m2: f64, theta_v: f64, energy: f64, path: f64) -> f64 {
    let s2 = (2.0 * theta_v).sin();
    let phase = delta_m2 * path / (4.0 * energy);
    1.0 - s2 * s2 * phase.sin() * phase.sin()
}

/// Straight-line path length from the neutrinosphere surface to radius r
/// for a beam with emission variable u: l = sqrt(r^2 - R^2 u) - R sqrt(1 - u).
pub fn path_length(radius_ns: f64, u: f64, r: f64) -> f64 {
    (r * r - radius_ns * radius_ns * u).sqrt() - radius_ns * (1.0 - u).sqrt()
}

/// Radius at which the beam with emission variable u has path length l.
pub fn radius_for_path_length(radius_ns: f64, u: f64, l: f64) -> f64 {
    let a = l + radius_ns * (1.0 - u).sqrt();
    (a * a + radius_ns * radius_ns * u).sqrt()
}
