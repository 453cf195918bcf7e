//! Flavor amplitudes of every beam in structure-of-arrays layout.
//!
//! For a fixed (species, beam, flavor component) the energy axis occupies
//! one contiguous array; real and imaginary parts are separate arrays
//! (split layout, not interleaved complex). The flat ordering is
//! species-major, then theta, phi, component, energy -- the same order the
//! snapshot format serializes.

use std::sync::Arc;

use crate::grid::Grid;
use crate::hamiltonian::HermitianMatrix;
use crate::{Error, Result};

pub const DEFAULT_CHUNK_SIZE: usize = 8;

/// Fermi-Dirac number spectrum: <E> / T for zero pinching.
pub const FD_MEAN_OVER_T: f64 = 3.15137;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Species {
    Neutrino,
    Antineutrino,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::Neutrino, Species::Antineutrino];

    pub fn index(self) -> usize {
        match self {
            Species::Neutrino => 0,
            Species::Antineutrino => 1,
        }
    }
}

/// Emission spectrum of one species: Fermi-Dirac-shaped number spectrum
/// f(E) proportional to E^2 / (exp(E/T - eta) + 1) with T fixed so the
/// unpinched mean is `mean_energy`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumParams {
    pub initial_flavor: usize,
    pub luminosity: f64,
    pub mean_energy: f64,
    /// Dimensionless pinching parameter eta, default 0.
    pub pinch: f64,
}

impl SpectrumParams {
    pub fn shape(&self, energy: f64) -> f64 {
        let t = self.mean_energy / FD_MEAN_OVER_T;
        energy * energy / ((energy / t - self.pinch).exp() + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    pub nu: SpectrumParams,
    pub antinu: SpectrumParams,
}

impl Default for Spectra {
    fn default() -> Self {
        Spectra {
            nu: SpectrumParams {
                initial_flavor: 0,
                luminosity: 1.0,
                mean_energy: 12.0,
                pinch: 0.0,
            },
            antinu: SpectrumParams {
                initial_flavor: 0,
                luminosity: 1.0,
                mean_energy: 15.0,
                pinch: 0.0,
            },
        }
    }
}

impl Spectra {
    pub fn species(&self, s: Species) -> &SpectrumParams {
        match s {
            Species::Neutrino => &self.nu,
            Species::Antineutrino => &self.antinu,
        }
    }

    pub fn validate(&self, n_flavors: usize) -> Result<()> {
        for (name, p) in [("nu", &self.nu), ("antinu", &self.antinu)] {
            if p.luminosity < 0.0 {
                return Err(Error::Config(format!(
                    "spectra.{name}.luminosity must be >= 0"
                )));
            }
            if !(p.mean_energy > 0.0) {
                return Err(Error::Config(format!(
                    "spectra.{name}.mean_energy must be > 0"
                )));
            }
            if p.initial_flavor >= n_flavors {
                return Err(Error::Config(format!(
                    "spectra.{name}.flavor = {} but grid.n_flavors = {n_flavors}",
                    p.initial_flavor
                )));
            }
        }
        Ok(())
    }
}

/// Flat amplitude block shared by ensembles and derivative sets.
/// Index order: species, theta (local), phi, component, energy.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpBlock {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl AmpBlock {
    pub fn zeros(len: usize) -> Self {
        AmpBlock {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// self = base + s * deriv, elementwise.
    pub fn assign_axpy(&mut self, base: &AmpBlock, deriv: &AmpBlock, s: f64) {
        for i in 0..self.re.len() {
            self.re[i] = base.re[i] + s * deriv.re[i];
        }
        for i in 0..self.im.len() {
            self.im[i] = base.im[i] + s * deriv.im[i];
        }
    }

    /// self += s * deriv, elementwise.
    pub fn axpy_in_place(&mut self, deriv: &AmpBlock, s: f64) {
        for (x, d) in self.re.iter_mut().zip(&deriv.re) {
            *x += s * d;
        }
        for (x, d) in self.im.iter_mut().zip(&deriv.im) {
            *x += s * d;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|x| x.is_finite())
    }
}

/// SoA flavor amplitudes for a contiguous slice of global theta bins,
/// both species, plus the per-beam emission weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    grid: Arc<Grid>,
    theta_start: usize,
    n_theta_local: usize,
    chunk_size: usize,
    amps: AmpBlock,
    /// Per species: [theta_local][phi][energy] emission weights.
    weights: [Vec<f64>; 2],
    pub r_current: f64,
}

/// Full-grid ensemble in pure initial-flavor eigenstates at r = R.
pub fn init_ensemble(grid: Arc<Grid>, spectra: &Spectra) -> Result<Ensemble> {
    let n_theta = grid.n_theta;
    init_slice(grid, spectra, 0, n_theta)
}

/// Ensemble slice owning global theta bins [theta_start, theta_start + n).
pub fn init_slice(
    grid: Arc<Grid>,
    spectra: &Spectra,
    theta_start: usize,
    n_theta_local: usize,
) -> Result<Ensemble> {
    spectra.validate(grid.n_flavors)?;
    if theta_start + n_theta_local > grid.n_theta {
        return Err(Error::Index(format!(
            "slice [{theta_start}, {}) outside grid with {} theta bins",
            theta_start + n_theta_local,
            grid.n_theta
        )));
    }
    let amp_len = 2 * n_theta_local * grid.n_phi * grid.n_flavors * grid.n_energy;
    let mut amps = AmpBlock::zeros(amp_len);
    let mut weights = [
        vec![0.0; n_theta_local * grid.n_phi * grid.n_energy],
        vec![0.0; n_theta_local * grid.n_phi * grid.n_energy],
    ];

    for species in Species::BOTH {
        let params = spectra.species(species);
        // Discrete normalization: the energy-axis weights of one beam sum
        // exactly to (L/<E>) * du * dphi.
        let mut shape: Vec<f64> = grid.e_nodes.iter().map(|&e| params.shape(e)).collect();
        let total: f64 = shape.iter().zip(&grid.e_weights).map(|(s, w)| s * w).sum();
        let number_flux = if params.luminosity > 0.0 && total > 0.0 {
            for (s, w) in shape.iter_mut().zip(&grid.e_weights) {
                *s = *s * *w / total;
            }
            params.luminosity / params.mean_energy
        } else {
            shape.iter_mut().for_each(|s| *s = 0.0);
            0.0
        };
        let s = species.index();
        for t in 0..n_theta_local {
            let du = grid.u_weights[theta_start + t];
            for p in 0..grid.n_phi {
                let dphi = grid.phi_weights[p];
                for k in 0..grid.n_energy {
                    let wi = (t * grid.n_phi + p) * grid.n_energy + k;
                    weights[s][wi] = number_flux * du * dphi * shape[k];
                    let ai = amp_index_raw(&grid, n_theta_local, s, t, p, params.initial_flavor, k);
                    amps.re[ai] = 1.0;
                }
            }
        }
    }

    Ok(Ensemble {
        r_current: grid.radius_ns,
        grid,
        theta_start,
        n_theta_local,
        chunk_size: DEFAULT_CHUNK_SIZE,
        amps,
        weights,
    })
}

fn amp_index_raw(
    grid: &Grid,
    n_theta_local: usize,
    s: usize,
    t: usize,
    p: usize,
    c: usize,
    k: usize,
) -> usize {
    ((((s * n_theta_local + t) * grid.n_phi + p) * grid.n_flavors) + c) * grid.n_energy + k
}

impl Ensemble {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn theta_start(&self) -> usize {
        self.theta_start
    }

    pub fn n_theta_local(&self) -> usize {
        self.n_theta_local
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn set_chunk_size(&mut self, chunk_size: usize) {
        assert!(chunk_size >= 1);
        self.chunk_size = chunk_size;
    }

    pub fn amps(&self) -> &AmpBlock {
        &self.amps
    }

    pub fn amps_mut(&mut self) -> &mut AmpBlock {
        &mut self.amps
    }

    pub fn amp_index(&self, species: Species, t: usize, p: usize, c: usize, k: usize) -> usize {
        amp_index_raw(&self.grid, self.n_theta_local, species.index(), t, p, c, k)
    }

    fn check_indices(&self, t: usize, p: usize, c: usize, k: usize) -> Result<()> {
        if t >= self.n_theta_local
            || p >= self.grid.n_phi
            || c >= self.grid.n_flavors
            || k >= self.grid.n_energy
        {
            return Err(Error::Index(format!(
                "(theta {t}, phi {p}, flavor {c}, energy {k}) outside slice dims ({}, {}, {}, {})",
                self.n_theta_local, self.grid.n_phi, self.grid.n_flavors, self.grid.n_energy
            )));
        }
        Ok(())
    }

    pub fn amp(&self, species: Species, t: usize, p: usize, c: usize, k: usize) -> (f64, f64) {
        let i = self.amp_index(species, t, p, c, k);
        (self.amps.re[i], self.amps.im[i])
    }

    /// Gather the flavor vector of one (species, beam, energy) into the
    /// provided buffers.
    pub fn amp_vector_into(
        &self,
        species: Species,
        t: usize,
        p: usize,
        k: usize,
        re: &mut [f64],
        im: &mut [f64],
    ) {
        for c in 0..self.grid.n_flavors {
            let i = self.amp_index(species, t, p, c, k);
            re[c] = self.amps.re[i];
            im[c] = self.amps.im[i];
        }
    }

    pub fn weight(&self, species: Species, t: usize, p: usize, k: usize) -> f64 {
        self.weights[species.index()][(t * self.grid.n_phi + p) * self.grid.n_energy + k]
    }

    /// Contiguous (re, im) energy arrays of one component, the SoA axis.
    pub fn component_arrays(
        &self,
        species: Species,
        t: usize,
        p: usize,
        c: usize,
    ) -> (&[f64], &[f64]) {
        let i = self.amp_index(species, t, p, c, 0);
        let ne = self.grid.n_energy;
        (&self.amps.re[i..i + ne], &self.amps.im[i..i + ne])
    }

    /// rho = psi psi^dag for one (species, beam, energy).
    pub fn density_matrix(
        &self,
        species: Species,
        t: usize,
        p: usize,
        k: usize,
    ) -> Result<HermitianMatrix> {
        self.check_indices(t, p, 0, k)?;
        let n = self.grid.n_flavors;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        self.amp_vector_into(species, t, p, k, &mut re, &mut im);
        let mut m = HermitianMatrix::zero(n);
        m.accumulate_scaled_outer(&re, &im, 1.0, false);
        Ok(m)
    }

    /// |psi_flavor|^2 for one (species, beam, energy).
    pub fn survival_probability(
        &self,
        species: Species,
        t: usize,
        p: usize,
        flavor: usize,
        k: usize,
    ) -> Result<f64> {
        self.check_indices(t, p, flavor, k)?;
        let (re, im) = self.amp(species, t, p, flavor, k);
        Ok(re * re + im * im)
    }

    /// Largest |norm - 1| over all (species, beam, energy) amplitude
    /// vectors, without modifying the state.
    pub fn max_norm_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        self.for_each_norm(|norm| worst = worst.max((norm - 1.0).abs()));
        worst
    }

    fn for_each_norm(&self, mut f: impl FnMut(f64)) {
        let nf = self.grid.n_flavors;
        let ne = self.grid.n_energy;
        let beams = 2 * self.n_theta_local * self.grid.n_phi;
        for beam in 0..beams {
            let base = beam * nf * ne;
            for k in 0..ne {
                let mut norm2 = 0.0;
                for c in 0..nf {
                    let i = base + c * ne + k;
                    norm2 += self.amps.re[i] * self.amps.re[i] + self.amps.im[i] * self.amps.im[i];
                }
                f(norm2.sqrt());
            }
        }
    }

    /// Rescale every amplitude vector to unit norm; returns the largest
    /// |norm - 1| observed before rescaling. A zero-norm vector is an
    /// integrity failure.
    pub fn renormalize(&mut self) -> Result<f64> {
        let nf = self.grid.n_flavors;
        let ne = self.grid.n_energy;
        let beams = 2 * self.n_theta_local * self.grid.n_phi;
        let mut worst = 0.0f64;
        for beam in 0..beams {
            let base = beam * nf * ne;
            for k in 0..ne {
                let mut norm2 = 0.0;
                for c in 0..nf {
                    let i = base + c * ne + k;
                    norm2 += self.amps.re[i] * self.amps.re[i] + self.amps.im[i] * self.amps.im[i];
                }
                let norm = norm2.sqrt();
                if norm == 0.0 {
                    return Err(Error::Integrity(format!(
                        "zero-norm amplitude vector at flat beam {beam}, energy {k}"
                    )));
                }
                worst = worst.max((norm - 1.0).abs());
                let inv = 1.0 / norm;
                for c in 0..nf {
                    let i = base + c * ne + k;
                    self.amps.re[i] *= inv;
                    self.amps.im[i] *= inv;
                }
            }
        }
        Ok(worst)
    }
}
