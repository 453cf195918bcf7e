//! Discretization of the extended bulb model and trajectory geometry.
//!
//! Beams are labelled by the emission variable `u = sin^2(theta_0)` at the
//! neutrinosphere surface. Along a straight trajectory the local polar
//! angle at radius `r` follows from `sin(theta(r)) = (R/r) * sqrt(u)`.
//! Bins are uniform midpoints in `u` (not in `theta_0`) so that
//! half-isotropic surface emission carries equal flux per theta bin.

use std::f64::consts::PI;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_phi: usize,
    pub n_energy: usize,
    pub n_flavors: usize,
    /// Neutron-star radius R in model length units.
    pub radius_ns: f64,
    pub e_min: f64,
    pub e_max: f64,
}

impl Default for GridConfig {
    /// The standard problem: 2 flavors, 100 energy bins, 10 azimuthal
    /// bins, 10,000 polar angle bins.
    fn default() -> Self {
        GridConfig {
            n_theta: 10_000,
            n_phi: 10,
            n_energy: 100,
            n_flavors: 2,
            radius_ns: 10.0,
            e_min: 1.0,
            e_max: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub n_energy: usize,
    pub n_flavors: usize,
    pub radius_ns: f64,
    pub e_min: f64,
    pub e_max: f64,
    /// u = sin^2(theta_0) at bin centers, strictly increasing in (0, 1).
    pub u_nodes: Vec<f64>,
    /// Bin widths in u; sum to 1.
    pub u_weights: Vec<f64>,
    /// Azimuthal bin centers in [0, 2*pi).
    pub phi_nodes: Vec<f64>,
    /// Bin widths in phi; sum to 2*pi.
    pub phi_weights: Vec<f64>,
    /// Energy bin centers in [e_min, e_max].
    pub e_nodes: Vec<f64>,
    /// Energy bin widths; sum to e_max - e_min.
    pub e_weights: Vec<f64>,
}

pub fn build_grid(config: &GridConfig) -> Result<Grid> {
    let bad = |field: &str, why: &str| Err(Error::Config(format!("grid.{field}: {why}")));
    if config.n_theta < 1 {
        return bad("n_theta", "must be >= 1");
    }
    if config.n_phi < 1 {
        return bad("n_phi", "must be >= 1");
    }
    if config.n_energy < 1 {
        return bad("n_energy", "must be >= 1");
    }
    if config.n_flavors < 2 {
        return bad("n_flavors", "must be >= 2");
    }
    if !(config.radius_ns > 0.0) {
        return bad("radius", "must be > 0");
    }
    if !(config.e_min > 0.0) {
        return bad("e_min", "must be > 0");
    }
    if !(config.e_max > config.e_min) {
        return bad("e_max", "must be > e_min");
    }

    let midpoints = |n: usize, lo: f64, hi: f64| -> (Vec<f64>, Vec<f64>) {
        let w = (hi - lo) / n as f64;
        let nodes = (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect();
        (nodes, vec![w; n])
    };
    let (u_nodes, u_weights) = midpoints(config.n_theta, 0.0, 1.0);
    let (phi_nodes, phi_weights) = midpoints(config.n_phi, 0.0, 2.0 * PI);
    let (e_nodes, e_weights) = midpoints(config.n_energy, config.e_min, config.e_max);

    Ok(Grid {
        n_theta: config.n_theta,
        n_phi: config.n_phi,
        n_energy: config.n_energy,
        n_flavors: config.n_flavors,
        radius_ns: config.radius_ns,
        e_min: config.e_min,
        e_max: config.e_max,
        u_nodes,
        u_weights,
        phi_nodes,
        phi_weights,
        e_nodes,
        e_weights,
    })
}

/// Local propagation angle of a beam with emission variable `u` at radius
/// `r`: returns `(cos(theta), sin(theta))`. Trajectories only exist
/// outside the neutrinosphere, so `r < R` is a domain error.
pub fn local_angle(radius_ns: f64, u: f64, r: f64) -> Result<(f64, f64)> {
    if r < radius_ns {
        return Err(Error::Domain(format!(
            "radius r = {r} is inside the neutrinosphere R = {radius_ns}"
        )));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Domain(format!("u = {u} outside (0, 1]")));
    }
    let ratio = radius_ns / r;
    let sin_theta = ratio * u.sqrt();
    let cos_theta = (1.0 - ratio * ratio * u).sqrt();
    Ok((cos_theta, sin_theta))
}

/// Unit propagation direction of a beam `(u, phi)` at radius `r`, in
/// Cartesian components with the local radial direction along z.
pub fn direction(radius_ns: f64, u: f64, phi: f64, r: f64) -> Result<[f64; 3]> {
    let (cos_theta, sin_theta) = local_angle(radius_ns, u, r)?;
    Ok([sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta])
}

/// The forward-scattering angle kernel `1 - v_i . v_j` between two beams,
/// with local angles evaluated at radius `r`. Lies in [0, 2].
pub fn angle_factor(radius_ns: f64, beam_i: (f64, f64), beam_j: (f64, f64), r: f64) -> Result<f64> {
    let (cos_i, sin_i) = local_angle(radius_ns, beam_i.0, r)?;
    let (cos_j, sin_j) = local_angle(radius_ns, beam_j.0, r)?;
    Ok(1.0 - (cos_i * cos_j + sin_i * sin_j * (beam_i.1 - beam_j.1).cos()))
}

impl Grid {
    pub fn local_angle(&self, theta_index: usize, r: f64) -> Result<(f64, f64)> {
        local_angle(self.radius_ns, self.u_nodes[theta_index], r)
    }

    pub fn beam_direction(&self, theta_index: usize, phi_index: usize, r: f64) -> Result<[f64; 3]> {
        direction(
            self.radius_ns,
            self.u_nodes[theta_index],
            self.phi_nodes[phi_index],
            r,
        )
    }

    pub fn n_beams(&self) -> usize {
        self.n_theta * self.n_phi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_theta_bin_is_the_midpoint() {
        let grid = build_grid(&GridConfig {
            n_theta: 1,
            ..GridConfig::default()
        })
        .unwrap();
        assert_eq!(grid.u_nodes, vec![0.5]);
        assert_eq!(grid.u_weights, vec![1.0]);
    }

    #[test]
    fn four_phi_bins_are_uniform_midpoints() {
        let grid = build_grid(&GridConfig {
            n_phi: 4,
            ..GridConfig::default()
        })
        .unwrap();
        let expect = [PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0];
        for (node, want) in grid.phi_nodes.iter().zip(expect) {
            assert!((node - want).abs() < 1e-15);
        }
        for w in &grid.phi_weights {
            assert!((w - PI / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_problem_dimensions() {
        let grid = build_grid(&GridConfig::default()).unwrap();
        assert_eq!(grid.n_theta, 10_000);
        assert_eq!(grid.n_phi, 10);
        assert_eq!(grid.n_energy, 100);
        assert_eq!(grid.n_flavors, 2);
    }

    #[test]
    fn invalid_config_names_the_field() {
        let err = build_grid(&GridConfig {
            e_min: -1.0,
            ..GridConfig::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("e_min"), "{err}");
    }

    #[test]
    fn axis_weights_sum_to_axis_measure() {
        let grid = build_grid(&GridConfig {
            n_theta: 7,
            n_phi: 5,
            n_energy: 13,
            ..GridConfig::default()
        })
        .unwrap();
        let sum = |w: &[f64]| w.iter().sum::<f64>();
        assert!((sum(&grid.u_weights) - 1.0).abs() < 1e-12);
        assert!((sum(&grid.phi_weights) - 2.0 * PI).abs() < 1e-12);
        assert!((sum(&grid.e_weights) - (grid.e_max - grid.e_min)).abs() < 1e-12);
    }

    #[test]
    fn tangential_emission_at_surface() {
        let (cos_t, sin_t) = local_angle(10.0, 1.0, 10.0).unwrap();
        assert_eq!(sin_t, 1.0);
        assert_eq!(cos_t, 0.0);
    }

    #[test]
    fn radial_limit() {
        for r in [10.0, 25.0, 1e4] {
            let (cos_t, _) = local_angle(10.0, 1e-300, r).unwrap();
            assert_eq!(cos_t, 1.0);
        }
    }

    #[test]
    fn local_angle_direct_substitution() {
        let (cos_t, sin_t) = local_angle(10.0, 1.0, 20.0).unwrap();
        assert!((sin_t - 0.5).abs() < 1e-15);
        assert!((cos_t - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inside_neutrinosphere_is_domain_error() {
        assert!(matches!(local_angle(10.0, 0.5, 9.0), Err(Error::Domain(_))));
        assert!(matches!(
            angle_factor(10.0, (0.5, 0.0), (0.5, 0.0), 9.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn angle_factor_parallel_beams_vanishes() {
        let f = angle_factor(10.0, (0.7, 1.3), (0.7, 1.3), 15.0).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn angle_factor_antiparallel_tangential() {
        let f = angle_factor(10.0, (1.0, 0.0), (1.0, PI), 10.0).unwrap();
        assert!((f - 2.0).abs() < 1e-15);
    }

    // Hand evaluation of the dot-product formula at R=10, r=20,
    // u_i=1, u_j=0.25, phi_i=phi_j:
    //   sin_i = 0.5,  cos_i = sqrt(0.75)   = 0.86602540...
    //   sin_j = 0.25, cos_j = sqrt(0.9375) = 0.96824584...
    //   1 - (cos_i*cos_j + sin_i*sin_j) = 0.03647450...
    #[test]
    fn angle_factor_hand_evaluated() {
        let f = angle_factor(10.0, (1.0, 0.0), (0.25, 0.0), 20.0).unwrap();
        let want = 1.0 - (0.75f64.sqrt() * 0.9375f64.sqrt() + 0.5 * 0.25);
        assert!((f - want).abs() < 1e-15);
        assert!((f - 0.036474508).abs() < 1e-8, "f = {f}");
    }

    #[test]
    fn angle_factor_far_field_scales_as_inverse_r_squared() {
        let radius_ns = 10.0;
        let beams = [(0.3, 0.4), (0.9, 2.0)];
        let mut scaled = Vec::new();
        let mut ratio = 50.0;
        while ratio <= 500.0 {
            let r = radius_ns * ratio;
            let f = angle_factor(radius_ns, beams[0], beams[1], r).unwrap();
            scaled.push(f * r * r);
            ratio *= 1.25;
        }
        let first = scaled[0];
        for s in &scaled {
            assert!(
                (s - first).abs() / first.abs() < 0.01,
                "drift: {first} vs {s}"
            );
        }
    }

    #[test]
    fn local_angle_is_on_the_unit_circle_for_all_grid_nodes() {
        let grid = build_grid(&GridConfig {
            n_theta: 64,
            ..GridConfig::default()
        })
        .unwrap();
        for r in [10.0, 10.5, 31.0, 4000.0] {
            for t in 0..grid.n_theta {
                let (cos_t, sin_t) = grid.local_angle(t, r).unwrap();
                let norm = cos_t * cos_t + sin_t * sin_t;
                // 2 ulp around 1.0
                assert!((norm - 1.0).abs() <= 2.0 * f64::EPSILON, "norm = {norm}");
            }
        }
    }
}
