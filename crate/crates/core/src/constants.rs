//! Physical constants (CODATA 2018) and the unit system used throughout.
//!
//! Internal unit system: positions in angstrom, time in ms, magnetic field
//! in gauss. Hamiltonian matrix elements are angular frequencies in rad/ms.
//! User-facing interaction tensors are ordinary frequencies in kHz and are
//! multiplied by 2*pi when they enter a Hamiltonian. Gyromagnetic ratios are
//! kept in rad ms^-1 G^-1 (numerically equal to 1e7 rad s^-1 T^-1).

use std::f64::consts::PI;

/// Reduced Planck constant, J s.
pub const HBAR_SI: f64 = 1.054_571_817e-34;

/// Vacuum magnetic permeability, N A^-2.
pub const MU0_SI: f64 = 1.256_637_062_12e-6;

/// Nuclear magneton, J T^-1.
pub const NUCLEAR_MAGNETON_SI: f64 = 5.050_783_746_1e-27;

/// Bohr radius in angstrom, for Gaussian cube files.
pub const BOHR_TO_ANGSTROM: f64 = 0.529_177_210_903;

/// kHz -> rad/ms.
pub const TWO_PI: f64 = 2.0 * PI;

/// Free-electron gyromagnetic ratio in rad ms^-1 G^-1 (negative by the sign
/// of the electron magnetic moment).
pub const ELECTRON_GYRO: f64 = -17_608.596_302_3;

/// (mu0 / 4 pi) * hbar expressed so that
/// `DIPOLE_PREFACTOR_KHZ * g1 * g2 / r^3` is an ordinary frequency in kHz
/// for gyromagnetic ratios in rad ms^-1 G^-1 and r in angstrom.
///
/// Derivation: (mu0/4pi)[T m/A] * g1 g2 [1e14 (rad/s/T)^2] * hbar [J s]
/// / r^3 [1e-30 m^3] gives rad/s; times 1e-3 for rad/ms, divided by 2 pi
/// for kHz. Net power of ten: 1e41 / 2 pi.
pub const DIPOLE_PREFACTOR_KHZ: f64 = MU0_SI / (4.0 * PI) * HBAR_SI * 1e41 / TWO_PI;

/// Same prefactor for densities in nm^-3 (contact couplings): kHz nm^3.
pub const CONTACT_PREFACTOR_KHZ_NM3: f64 = DIPOLE_PREFACTOR_KHZ * 1e-3;
