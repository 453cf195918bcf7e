//! Vacuum/matter Hamiltonian and the discretized self-coupling potential.
//!
//! The forward-scattering kernel `1 - v_i . v_j` separates into a zeroth
//! angular moment and three direction-weighted first moments, so the
//! potential for every beam direction is reconstructed from four
//! accumulated Hermitian matrices per species instead of an O(beams^2)
//! pairwise sum. Moments are accumulated innermost over energy bins, then
//! azimuthal bins, then polar bins, in ascending index order; partial sums
//! are kept per fixed polar-angle chunk so that the global reduction order
//! is independent of how ranks and threads split the work.

use std::collections::BTreeMap;

use crate::state::{Ensemble, Species};
use crate::{Error, Result};

/// Dense n x n complex Hermitian matrix stored as split real/imaginary
/// parts. Constructors and operations preserve exact conjugate symmetry:
/// only the upper triangle is computed independently and the lower
/// triangle is mirrored bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl HermitianMatrix {
    pub fn zero(n: usize) -> Self {
        HermitianMatrix {
            n,
            re: vec![0.0; n * n],
            im: vec![0.0; n * n],
        }
    }

    /// Build from upper-triangle entries: `diag` are the real diagonal
    /// entries, `upper` the (re, im) entries for a < b in row-major order.
    pub fn from_upper(n: usize, diag: &[f64], upper: &[(f64, f64)]) -> Self {
        assert_eq!(diag.len(), n);
        assert_eq!(upper.len(), n * (n - 1) / 2);
        let mut m = HermitianMatrix::zero(n);
        for (a, &d) in diag.iter().enumerate() {
            m.re[a * n + a] = d;
        }
        let mut k = 0;
        for a in 0..n {
            for b in (a + 1)..n {
                let (re, im) = upper[k];
                k += 1;
                m.re[a * n + b] = re;
                m.im[a * n + b] = im;
                m.re[b * n + a] = re;
                m.im[b * n + a] = -im;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn re(&self, a: usize, b: usize) -> f64 {
        self.re[a * self.n + b]
    }

    pub fn im(&self, a: usize, b: usize) -> f64 {
        self.im[a * self.n + b]
    }

    pub fn add_assign(&mut self, other: &HermitianMatrix) {
        debug_assert_eq!(self.n, other.n);
        for (x, y) in self.re.iter_mut().zip(&other.re) {
            *x += y;
        }
        for (x, y) in self.im.iter_mut().zip(&other.im) {
            *x += y;
        }
    }

    /// self += s * other, with real s (preserves Hermiticity).
    pub fn add_scaled(&mut self, other: &HermitianMatrix, s: f64) {
        debug_assert_eq!(self.n, other.n);
        for (x, y) in self.re.iter_mut().zip(&other.re) {
            *x += s * y;
        }
        for (x, y) in self.im.iter_mut().zip(&other.im) {
            *x += s * y;
        }
    }

    /// Zero every entry so the matrix can be reused as an accumulator.
    pub fn reset(&mut self) {
        self.re.fill(0.0);
        self.im.fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.re {
            *x *= s;
        }
        for x in &mut self.im {
            *x *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> HermitianMatrix {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    /// Complex conjugate (equals the transpose for a Hermitian matrix).
    pub fn conj(&self) -> HermitianMatrix {
        let mut m = self.clone();
        for x in &mut m.im {
            *x = -*x;
        }
        m
    }

    /// self += w * psi psi^dag  (or += w * (-conj(psi psi^dag)) when
    /// `negated_conj` is set, the antineutrino convention).
    ///
    /// Upper triangle is computed, lower mirrored; the diagonal imaginary
    /// parts stay exactly zero.
    pub fn accumulate_scaled_outer(
        &mut self,
        psi_re: &[f64],
        psi_im: &[f64],
        w: f64,
        negated_conj: bool,
    ) {
        let n = self.n;
        debug_assert_eq!(psi_re.len(), n);
        debug_assert_eq!(psi_im.len(), n);
        let re_sign = if negated_conj { -1.0 } else { 1.0 };
        let im_sign = 1.0; // -conj flips only the real part
        for a in 0..n {
            let d = w * (psi_re[a] * psi_re[a] + psi_im[a] * psi_im[a]);
            self.re[a * n + a] += re_sign * d;
            for b in (a + 1)..n {
                let kre = w * (psi_re[a] * psi_re[b] + psi_im[a] * psi_im[b]);
                let kim = w * (psi_im[a] * psi_re[b] - psi_re[a] * psi_im[b]);
                let re = re_sign * kre;
                let im = im_sign * kim;
                self.re[a * n + b] += re;
                self.im[a * n + b] += im;
                self.re[b * n + a] += re;
                self.im[b * n + a] -= im;
            }
        }
    }

    /// y = M x for a complex vector given as split re/im slices.
    pub fn mul_vec(&self, x_re: &[f64], x_im: &[f64], y_re: &mut [f64], y_im: &mut [f64]) {
        let n = self.n;
        for a in 0..n {
            let mut yr = 0.0;
            let mut yi = 0.0;
            for b in 0..n {
                let mr = self.re[a * n + b];
                let mi = self.im[a * n + b];
                yr += mr * x_re[b] - mi * x_im[b];
                yi += mr * x_im[b] + mi * x_re[b];
            }
            y_re[a] = yr;
            y_im[a] = yi;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.re
            .iter()
            .chain(&self.im)
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &HermitianMatrix) -> f64 {
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
    }

    /// Largest conjugate-symmetry violation; zero by construction.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                worst = worst.max((self.re[a * n + b] - self.re[b * n + a]).abs());
                worst = worst.max((self.im[a * n + b] + self.im[b * n + a]).abs());
            }
        }
        worst
    }
}

/// Matter potential profile lambda(r) entering the diagonal of H0.
#[derive(Debug, Clone, PartialEq)]
pub enum MatterProfile {
    Constant(f64),
    /// Piecewise-linear in r; (r, lambda) pairs with strictly increasing r.
    /// Clamped at both ends.
    Table(Vec<(f64, f64)>),
}

impl Default for MatterProfile {
    fn default() -> Self {
        MatterProfile::Constant(0.0)
    }
}

impl MatterProfile {
    pub fn lambda(&self, r: f64) -> f64 {
        match self {
            MatterProfile::Constant(v) => *v,
            MatterProfile::Table(points) => {
                if points.is_empty() {
                    return 0.0;
                }
                if r <= points[0].0 {
                    return points[0].1;
                }
                let last = points[points.len() - 1];
                if r >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|&(rp, _)| rp <= r);
                let (r0, v0) = points[i - 1];
                let (r1, v1) = points[i];
                v0 + (v1 - v0) * (r - r0) / (r1 - r0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VacuumParams {
    /// Mass-squared splitting, model units.
    pub delta_m2: f64,
    /// Vacuum mixing angle, radians, in [0, pi/2].
    pub theta_v: f64,
    pub matter: MatterProfile,
}

impl Default for VacuumParams {
    fn default() -> Self {
        VacuumParams {
            delta_m2: 1.0,
            theta_v: 0.15,
            matter: MatterProfile::default(),
        }
    }
}

/// Self-coupling normalization: H_nu = mu0 * (R/r)^2 * [M0 - v.M1].
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCoupling {
    pub mu0: f64,
    pub radius_ns: f64,
}

/// Two-flavor vacuum (plus matter) Hamiltonian for one energy.
///
/// Neutrinos: (dm2/4E) [[-cos 2t, sin 2t], [sin 2t, cos 2t]] + diag(lambda, 0).
/// Antineutrinos: the complex conjugate of the vacuum term with the matter
/// sign flipped.
pub fn vacuum_hamiltonian(
    params: &VacuumParams,
    n_flavors: usize,
    energy: f64,
    species: Species,
    r: f64,
) -> Result<HermitianMatrix> {
    if n_flavors != 2 {
        return Err(Error::Config(format!(
            "vacuum Hamiltonian supports exactly 2 flavors, got n_flavors = {n_flavors}"
        )));
    }
    if !(energy > 0.0) {
        return Err(Error::Domain(format!("energy E = {energy} must be > 0")));
    }
    let k = params.delta_m2 / (4.0 * energy);
    let c2 = (2.0 * params.theta_v).cos();
    let s2 = (2.0 * params.theta_v).sin();
    let lambda = params.matter.lambda(r);
    let matter = match species {
        Species::Neutrino => lambda,
        Species::Antineutrino => -lambda,
    };
    // The 2x2 vacuum term is real, so the antineutrino conjugate is
    // entrywise identical; only the matter sign differs.
    Ok(HermitianMatrix::from_upper(
        2,
        &[-k * c2 + matter, k * c2],
        &[(k * s2, 0.0)],
    ))
}

/// Angular moments for one species: the zeroth moment and the three
/// direction-weighted first moments. For antineutrinos the stored
/// matrices already carry the `-conj(rho)` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m0: HermitianMatrix,
    pub m1: [HermitianMatrix; 3],
}

impl Moments {
    pub fn zero(n: usize) -> Self {
        Moments {
            m0: HermitianMatrix::zero(n),
            m1: [
                HermitianMatrix::zero(n),
                HermitianMatrix::zero(n),
                HermitianMatrix::zero(n),
            ],
        }
    }

    pub fn add_assign(&mut self, other: &Moments) {
        self.m0.add_assign(&other.m0);
        for c in 0..3 {
            self.m1[c].add_assign(&other.m1[c]);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.m0
            .max_abs()
            .max(self.m1.iter().fold(0.0f64, |m, h| m.max(h.max_abs())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesMoments {
    pub nu: Moments,
    pub antinu: Moments,
}

impl SpeciesMoments {
    pub fn zero(n: usize) -> Self {
        SpeciesMoments {
            nu: Moments::zero(n),
            antinu: Moments::zero(n),
        }
    }

    pub fn add_assign(&mut self, other: &SpeciesMoments) {
        self.nu.add_assign(&other.nu);
        self.antinu.add_assign(&other.antinu);
    }
}

/// Partial moment sums for one chunk of polar-angle bins.
///
/// `Folded` is only produced when a single accumulation call covered the
/// whole chunk, so its value equals the canonical ascending-theta fold.
/// Boundary fragments stay per-theta so any rank split reduces to the
/// same fold.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)] // both variants are heap-backed
pub enum ChunkEntry {
    Folded(SpeciesMoments),
    PerTheta(Vec<(usize, SpeciesMoments)>),
}

/// Moment sums over a set of polar-angle bins, organized by fixed global
/// chunks so that merging contributions from different ranks and folding
/// to the global sum is bitwise independent of the partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub radius: f64,
    pub chunk_size: usize,
    pub n_flavors: usize,
    entries: BTreeMap<usize, ChunkEntry>,
}

impl MomentSet {
    pub fn empty(radius: f64, chunk_size: usize, n_flavors: usize) -> Self {
        MomentSet {
            radius,
            chunk_size,
            n_flavors,
            entries: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chunk_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub(crate) fn insert_entry(&mut self, chunk: usize, entry: ChunkEntry) {
        self.entries.insert(chunk, entry);
    }

    /// Merge another rank's contribution. Chunks straddling a rank
    /// boundary arrive as per-theta fragments and are concatenated;
    /// duplicate contributions are integrity errors.
    pub fn merge(&mut self, other: MomentSet) -> Result<()> {
        if self.radius.to_bits() != other.radius.to_bits() {
            return Err(Error::Integrity(format!(
                "moment radius mismatch: {} vs {}",
                self.radius, other.radius
            )));
        }
        if self.chunk_size != other.chunk_size {
            return Err(Error::Integrity(format!(
                "moment chunk size mismatch: {} vs {}",
                self.chunk_size, other.chunk_size
            )));
        }
        for (chunk, entry) in other.entries {
            match self.entries.get_mut(&chunk) {
                None => {
                    self.entries.insert(chunk, entry);
                }
                Some(ChunkEntry::PerTheta(existing)) => match entry {
                    ChunkEntry::PerTheta(mut more) => {
                        for (t, _) in &more {
                            if existing.iter().any(|(e, _)| e == t) {
                                return Err(Error::Integrity(format!(
                                    "duplicate moment contribution for theta bin {t}"
                                )));
                            }
                        }
                        existing.append(&mut more);
                        existing.sort_by_key(|(t, _)| *t);
                    }
                    ChunkEntry::Folded(_) => {
                        return Err(Error::Integrity(format!(
                            "duplicate moment contribution for chunk {chunk}"
                        )));
                    }
                },
                Some(ChunkEntry::Folded(_)) => {
                    return Err(Error::Integrity(format!(
                        "duplicate moment contribution for chunk {chunk}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fold all chunk partials into the global moments, chunks in
    /// ascending index order and theta ascending within each chunk.
    pub fn resolve(&self) -> GlobalMoments {
        let mut acc: Option<SpeciesMoments> = None;
        for entry in self.entries.values() {
            let partial = match entry {
                ChunkEntry::Folded(m) => m.clone(),
                ChunkEntry::PerTheta(list) => {
                    debug_assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
                    fold_species_moments(list.iter().map(|(_, m)| m))
                        .unwrap_or_else(|| SpeciesMoments::zero(self.n_flavors))
                }
            };
            match acc.as_mut() {
                None => acc = Some(partial),
                Some(a) => a.add_assign(&partial),
            }
        }
        GlobalMoments {
            radius: self.radius,
            n_flavors: self.n_flavors,
            total: acc.unwrap_or_else(|| SpeciesMoments::zero(self.n_flavors)),
        }
    }
}

fn fold_species_moments<'a>(
    mut iter: impl Iterator<Item = &'a SpeciesMoments>,
) -> Option<SpeciesMoments> {
    let mut acc = iter.next()?.clone();
    for m in iter {
        acc.add_assign(m);
    }
    Some(acc)
}

/// Fully reduced moments at one radius, identical on every rank.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMoments {
    pub radius: f64,
    pub n_flavors: usize,
    pub total: SpeciesMoments,
}

/// Moments of a single global theta bin: energy bins innermost, then phi
/// bins, in ascending order. The per-beam first moments are the beam
/// direction times the per-beam zeroth moment (the direction does not
/// depend on energy).
pub(crate) fn per_theta_moments(
    ensemble: &Ensemble,
    theta_global: usize,
    r: f64,
) -> Result<SpeciesMoments> {
    let grid = ensemble.grid();
    let n = grid.n_flavors;
    let t_local = theta_global - ensemble.theta_start();
    let mut acc = SpeciesMoments::zero(n);
    let mut psi_re = vec![0.0; n];
    let mut psi_im = vec![0.0; n];
    let mut beam_m0 = HermitianMatrix::zero(n);
    for p in 0..grid.n_phi {
        let dir = grid.beam_direction(theta_global, p, r)?;
        for (species, negated_conj) in [(Species::Neutrino, false), (Species::Antineutrino, true)] {
            beam_m0.reset();
            for k in 0..grid.n_energy {
                let w = ensemble.weight(species, t_local, p, k);
                ensemble.amp_vector_into(species, t_local, p, k, &mut psi_re, &mut psi_im);
                beam_m0.accumulate_scaled_outer(&psi_re, &psi_im, w, negated_conj);
            }
            let target = match species {
                Species::Neutrino => &mut acc.nu,
                Species::Antineutrino => &mut acc.antinu,
            };
            target.m0.add_assign(&beam_m0);
            for c in 0..3 {
                target.m1[c].add_scaled(&beam_m0, dir[c]);
            }
        }
    }
    Ok(acc)
}

/// Accumulate moments over a range of global theta bins belonging to the
/// ensemble slice. Whole chunks are folded; boundary fragments stay
/// per-theta.
pub fn accumulate_moments(
    ensemble: &Ensemble,
    theta_range: std::ops::Range<usize>,
    r: f64,
) -> Result<MomentSet> {
    if r.to_bits() != ensemble.r_current.to_bits() {
        return Err(Error::Integrity(format!(
            "moments requested at r = {r} but ensemble is at r = {}",
            ensemble.r_current
        )));
    }
    let start = ensemble.theta_start();
    let end = start + ensemble.n_theta_local();
    if theta_range.start < start || theta_range.end > end {
        return Err(Error::Index(format!(
            "theta range {theta_range:?} outside local slice [{start}, {end})"
        )));
    }
    let grid = ensemble.grid();
    let cs = ensemble.chunk_size();
    let mut set = MomentSet::empty(r, cs, grid.n_flavors);
    if theta_range.is_empty() {
        return Ok(set);
    }
    let first_chunk = theta_range.start / cs;
    let last_chunk = (theta_range.end - 1) / cs;
    for chunk in first_chunk..=last_chunk {
        let chunk_lo = chunk * cs;
        let chunk_hi = (chunk_lo + cs).min(grid.n_theta);
        let lo = chunk_lo.max(theta_range.start);
        let hi = chunk_hi.min(theta_range.end);
        if lo >= hi {
            continue;
        }
        if lo == chunk_lo && hi == chunk_hi {
            let folded =
                fold_species_moments_owned((lo..hi).map(|t| per_theta_moments(ensemble, t, r)))?;
            set.insert_entry(chunk, ChunkEntry::Folded(folded));
        } else {
            let mut list = Vec::with_capacity(hi - lo);
            for t in lo..hi {
                list.push((t, per_theta_moments(ensemble, t, r)?));
            }
            set.insert_entry(chunk, ChunkEntry::PerTheta(list));
        }
    }
    Ok(set)
}

fn fold_species_moments_owned(
    mut iter: impl Iterator<Item = Result<SpeciesMoments>>,
) -> Result<SpeciesMoments> {
    let mut acc = iter.next().expect("fold over a non-empty chunk")?;
    for m in iter {
        acc.add_assign(&m?);
    }
    Ok(acc)
}

/// Self-coupling potential for the direction `v_hat` from the reduced
/// moments: mu0 * (R/r)^2 * [M0 - v.M1], combining the neutrino and
/// (already sign-and-conjugate-flipped) antineutrino moments.
pub fn neutrino_potential(
    moments: &GlobalMoments,
    v_hat: [f64; 3],
    r: f64,
    coupling: &SelfCoupling,
) -> Result<HermitianMatrix> {
    if r.to_bits() != moments.radius.to_bits() {
        return Err(Error::Integrity(format!(
            "potential requested at r = {r} but moments were accumulated at r = {}",
            moments.radius
        )));
    }
    let mut m = moments.total.nu.m0.clone();
    m.add_assign(&moments.total.antinu.m0);
    for c in 0..3 {
        m.add_scaled(&moments.total.nu.m1[c], -v_hat[c]);
        m.add_scaled(&moments.total.antinu.m1[c], -v_hat[c]);
    }
    let ratio = coupling.radius_ns / r;
    m.scale(coupling.mu0 * ratio * ratio);
    Ok(m)
}

/// Generator of radial evolution for one beam: (H0 + Hnu) / cos(theta).
pub fn effective_hamiltonian(
    h0: &HermitianMatrix,
    hnu: &HermitianMatrix,
    cos_theta: f64,
    cos_theta_floor: f64,
) -> Result<HermitianMatrix> {
    if cos_theta <= cos_theta_floor {
        return Err(Error::Tangential {
            cos_theta,
            floor: cos_theta_floor,
        });
    }
    let mut m = h0.clone();
    m.add_assign(hnu);
    m.scale(1.0 / cos_theta);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn flavor_basis_state(n: usize, flavor: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; n];
        re[flavor] = 1.0;
        (re, vec![0.0; n])
    }

    #[test]
    fn maximal_mixing_vacuum_hamiltonian() {
        let params = VacuumParams {
            delta_m2: 1.0,
            theta_v: FRAC_PI_4,
            matter: MatterProfile::Constant(0.0),
        };
        let h = vacuum_hamiltonian(&params, 2, 1.0, Species::Neutrino, 10.0).unwrap();
        assert!(h.re(0, 0).abs() < 1e-16);
        assert!(h.re(1, 1).abs() < 1e-16);
        assert!((h.re(0, 1) - 0.25).abs() < 1e-15);
        assert_eq!(h.im(0, 1), 0.0);
    }

    #[test]
    fn zero_mixing_angle_is_diagonal() {
        let params = VacuumParams {
            delta_m2: 1.0,
            theta_v: 0.0,
            matter: MatterProfile::Constant(0.0),
        };
        let h = vacuum_hamiltonian(&params, 2, 1.0, Species::Neutrino, 10.0).unwrap();
        assert!((h.re(0, 0) + 0.25).abs() < 1e-15);
        assert!((h.re(1, 1) - 0.25).abs() < 1e-15);
        assert_eq!(h.re(0, 1), 0.0);
    }

    // Direct evaluation at dm2 = 2.5, E = 5, theta_v = 0.15:
    //   k = 2.5 / 20 = 0.125
    //   k * cos(0.3) = 0.11941706...
    //   k * sin(0.3) = 0.03694003...
    #[test]
    fn vacuum_hamiltonian_direct_evaluation() {
        let params = VacuumParams {
            delta_m2: 2.5,
            theta_v: 0.15,
            matter: MatterProfile::Constant(0.0),
        };
        let h = vacuum_hamiltonian(&params, 2, 5.0, Species::Neutrino, 10.0).unwrap();
        assert!((h.re(0, 0) - (-0.125 * 0.3f64.cos())).abs() < 1e-15);
        assert!((h.re(0, 0) + 0.119417).abs() < 1e-6);
        assert!((h.re(0, 1) - 0.036940).abs() < 1e-6);
        assert!((h.re(1, 1) - 0.119417).abs() < 1e-6);
    }

    #[test]
    fn antineutrino_matter_sign_flips() {
        let params = VacuumParams {
            delta_m2: 1.0,
            theta_v: 0.15,
            matter: MatterProfile::Constant(0.3),
        };
        let h = vacuum_hamiltonian(&params, 2, 1.0, Species::Neutrino, 10.0).unwrap();
        let hbar = vacuum_hamiltonian(&params, 2, 1.0, Species::Antineutrino, 10.0).unwrap();
        assert!((h.re(0, 0) - hbar.re(0, 0) - 0.6).abs() < 1e-15);
        assert_eq!(h.re(0, 1), hbar.re(0, 1));
    }

    #[test]
    fn nonpositive_energy_and_unsupported_flavors_error() {
        let params = VacuumParams::default();
        assert!(vacuum_hamiltonian(&params, 2, 0.0, Species::Neutrino, 10.0).is_err());
        assert!(vacuum_hamiltonian(&params, 3, 1.0, Species::Neutrino, 10.0).is_err());
    }

    #[test]
    fn matter_table_interpolates_and_clamps() {
        let profile = MatterProfile::Table(vec![(10.0, 4.0), (20.0, 2.0)]);
        assert_eq!(profile.lambda(5.0), 4.0);
        assert_eq!(profile.lambda(25.0), 2.0);
        assert!((profile.lambda(15.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn outer_product_of_basis_state() {
        let mut m = HermitianMatrix::zero(2);
        let (re, im) = flavor_basis_state(2, 0);
        m.accumulate_scaled_outer(&re, &im, 1.0, false);
        assert_eq!(m.re(0, 0), 1.0);
        assert_eq!(m.re(1, 1), 0.0);
        assert_eq!(m.re(0, 1), 0.0);
    }

    #[test]
    fn outer_product_with_phase() {
        // psi = (1/sqrt(2), i/sqrt(2)) -> [[0.5, -0.5i], [0.5i, 0.5]]
        let s = 1.0 / 2.0f64.sqrt();
        let mut m = HermitianMatrix::zero(2);
        m.accumulate_scaled_outer(&[s, 0.0], &[0.0, s], 1.0, false);
        assert!((m.re(0, 0) - 0.5).abs() < 1e-15);
        assert!((m.re(1, 1) - 0.5).abs() < 1e-15);
        assert!(m.re(0, 1).abs() < 1e-15);
        assert!((m.im(0, 1) + 0.5).abs() < 1e-15);
        assert!((m.im(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negated_conjugate_outer_product() {
        let s = 1.0 / 2.0f64.sqrt();
        let mut m = HermitianMatrix::zero(2);
        m.accumulate_scaled_outer(&[s, 0.0], &[0.0, s], 1.0, true);
        // -conj flips the real part, keeps the (upper) imaginary part
        assert!((m.re(0, 0) + 0.5).abs() < 1e-15);
        assert!((m.im(0, 1) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn hermiticity_is_exact_by_construction() {
        let mut m = HermitianMatrix::zero(3);
        m.accumulate_scaled_outer(&[0.3, -0.2, 0.7], &[0.1, 0.9, -0.4], 1.7, false);
        m.accumulate_scaled_outer(&[1.3, 0.2, -0.7], &[-0.1, 0.5, 0.4], 0.3, true);
        m.scale(3.7);
        assert_eq!(m.hermiticity_defect(), 0.0);
    }

    #[test]
    fn effective_hamiltonian_scales_by_inverse_cos() {
        let h0 = HermitianMatrix::from_upper(2, &[1.0, -1.0], &[(0.5, 0.25)]);
        let hnu = HermitianMatrix::zero(2);
        let h = effective_hamiltonian(&h0, &hnu, 1.0, 1e-6).unwrap();
        assert_eq!(h, h0);
        let h = effective_hamiltonian(&h0, &hnu, 0.5, 1e-6).unwrap();
        assert_eq!(h.re(0, 0), 2.0);
        assert_eq!(h.im(0, 1), 0.5);
        assert!(matches!(
            effective_hamiltonian(&h0, &hnu, 1e-7, 1e-6),
            Err(Error::Tangential { .. })
        ));
    }

    #[test]
    fn merge_rejects_duplicates_and_radius_mismatch() {
        let mut a = MomentSet::empty(10.0, 8, 2);
        a.insert_entry(0, ChunkEntry::Folded(SpeciesMoments::zero(2)));
        let mut dup = MomentSet::empty(10.0, 8, 2);
        dup.insert_entry(0, ChunkEntry::Folded(SpeciesMoments::zero(2)));
        assert!(matches!(a.clone().merge(dup), Err(Error::Integrity(_))));
        let other_r = MomentSet::empty(11.0, 8, 2);
        assert!(matches!(a.merge(other_r), Err(Error::Integrity(_))));
    }
}
