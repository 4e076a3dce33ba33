//! Coupling-tensor models: point-dipole interaction tensors, the
//! Kohn-Luttinger contact hyperfine for shallow donors in silicon, and
//! spin-density-cube integration for dipolar hyperfine couplings.
//!
//! All tensors are returned in kHz; positions in angstrom unless a function
//! says otherwise; gyromagnetic ratios in rad ms^-1 G^-1.

use nalgebra::{Matrix3, Vector3};

use crate::constants::{CONTACT_PREFACTOR_KHZ_NM3, DIPOLE_PREFACTOR_KHZ};
use crate::error::{Error, Result};
use crate::structure::VolumetricData;

/// What a 3x3 coupling matrix couples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Central to bath spin (A).
    Hyperfine,
    /// Bath to bath spin (J).
    BathBath,
    /// Quadrupole self-interaction (P).
    Quadrupole,
    /// Central-spin self-interaction (D).
    SelfInteraction,
}

/// A 3x3 real coupling matrix in kHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionTensor {
    pub matrix: Matrix3<f64>,
    pub kind: TensorKind,
}

/// Point-dipole tensor between two magnetic moments separated by `r`:
/// A = -pre / |r|^5 * (3 r (x) r - |r|^2 Id), with the prefactor carrying
/// mu0 hbar / 4 pi and both gyromagnetic ratios. Symmetric and traceless.
pub fn dipole_tensor(r: &Vector3<f64>, gamma1: f64, gamma2: f64, kind: TensorKind) -> Result<InteractionTensor> {
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::SingularGeometry);
    }
    let pre = -DIPOLE_PREFACTOR_KHZ * gamma1 * gamma2 / d.powi(5);
    let outer = r * r.transpose();
    let matrix = (outer * 3.0 - Matrix3::identity() * (d * d)) * pre;
    Ok(InteractionTensor { matrix, kind })
}

/// Kohn-Luttinger donor wave-function parameters. Lengths in nm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonorModelParams {
    /// Effective Bohr scaling of the impurity.
    pub n: f64,
    /// Charge density at the lattice site, dimensionless.
    pub eta: f64,
    /// Transverse envelope length, nm.
    pub a: f64,
    /// Longitudinal envelope length, nm.
    pub b: f64,
    /// Valley wavevector, rad/nm.
    pub k0: f64,
}

impl DonorModelParams {
    /// Phosphorus donor in silicon: n = 0.81, eta = 186, a = 2.509 nm,
    /// b = 1.443 nm, k0 = 0.85 * 2 pi / a_Si with a_Si = 0.543 nm.
    pub fn phosphorus_in_silicon() -> Self {
        let a_si = 0.543;
        Self {
            n: 0.81,
            eta: 186.0,
            a: 2.509,
            b: 1.443,
            k0: 0.85 * 2.0 * std::f64::consts::PI / a_si,
        }
    }

    fn valid(&self) -> Result<()> {
        if self.n > 0.0 && self.eta > 0.0 && self.a > 0.0 && self.b > 0.0 && self.k0 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "donor model parameters must all be positive".to_string(),
            ))
        }
    }
}

/// Hydrogenic envelope compressed along `axis0`:
/// exp(-sqrt(u^2/(nb)^2 + (v^2+w^2)/(na)^2)) / sqrt(pi (na)^2 (nb)).
fn envelope(u: f64, v: f64, w: f64, p: &DonorModelParams) -> f64 {
    let na = p.n * p.a;
    let nb = p.n * p.b;
    let arg = (u * u / (nb * nb) + (v * v + w * w) / (na * na)).sqrt();
    (-arg).exp() / (std::f64::consts::PI * na * na * nb).sqrt()
}

/// Contact hyperfine from the Kohn-Luttinger wave function:
/// A_F = (16 pi / 9) g_S g_I eta [F1 cos(k0 x) + F3 cos(k0 y) + F5 cos(k0 z)]^2,
/// the envelopes cycling which coordinate carries the short length b.
/// `r` in nm; result in kHz.
pub fn contact_hyperfine_kl(
    r: &Vector3<f64>,
    gamma_s: f64,
    gamma_i: f64,
    params: &DonorModelParams,
) -> Result<f64> {
    params.valid()?;
    let (x, y, z) = (r.x, r.y, r.z);
    let sum = envelope(x, y, z, params) * (params.k0 * x).cos()
        + envelope(y, z, x, params) * (params.k0 * y).cos()
        + envelope(z, x, y, params) * (params.k0 * z).cos();
    Ok(16.0 * std::f64::consts::PI / 9.0
        * CONTACT_PREFACTOR_KHZ_NM3
        * gamma_s
        * gamma_i
        * params.eta
        * sum
        * sum)
}

/// Dipolar part of the donor hyperfine: point dipole beyond n*a, zero
/// inside (step model, no continuity at the threshold). `r` in nm.
pub fn donor_dipolar(
    r: &Vector3<f64>,
    gamma_s: f64,
    gamma_i: f64,
    params: &DonorModelParams,
) -> Result<InteractionTensor> {
    params.valid()?;
    if r.norm() >= params.n * params.a {
        dipole_tensor(&(r * 10.0), gamma_s, gamma_i, TensorKind::Hyperfine)
    } else {
        Ok(InteractionTensor {
            matrix: Matrix3::zeros(),
            kind: TensorKind::Hyperfine,
        })
    }
}

/// Integrates a spin-density grid against the point-dipole kernel:
/// A_ij = pre * sum_voxels rho(r') (3 d_i d_j - delta_ij |d|^2) / |d|^5 * V,
/// with d = r' - nucleus. Voxels closer to the nucleus than half the voxel
/// diagonal are excluded; the count of exclusions is returned alongside.
pub fn cube_hyperfine(
    density: &VolumetricData,
    nucleus: &Vector3<f64>,
    gamma_s: f64,
    gamma_i: f64,
) -> Result<(InteractionTensor, usize)> {
    let vol = density.voxel_volume();
    let half_diagonal = (density.voxel_vectors[0]
        + density.voxel_vectors[1]
        + density.voxel_vectors[2])
        .norm()
        / 2.0;
    let mut acc = Matrix3::zeros();
    let mut skipped = 0usize;
    for i in 0..density.npoints[0] {
        for j in 0..density.npoints[1] {
            for k in 0..density.npoints[2] {
                let rho = density.value(i, j, k);
                if rho == 0.0 {
                    continue;
                }
                let d = density.grid_point(i, j, k) - nucleus;
                let dist = d.norm();
                if dist < half_diagonal {
                    skipped += 1;
                    continue;
                }
                let outer = d * d.transpose();
                acc += (outer * 3.0 - Matrix3::identity() * (dist * dist))
                    * (rho / dist.powi(5));
            }
        }
    }
    let matrix = acc * (-DIPOLE_PREFACTOR_KHZ * gamma_s * gamma_i * vol);
    Ok((
        InteractionTensor {
            matrix,
            kind: TensorKind::Hyperfine,
        },
        skipped,
    ))
}
