//! Dense complex spin-operator algebra: spin matrices for arbitrary spin,
//! product-space embedding, Hermitian matrix exponentials and density-matrix
//! utilities. Everything here is a pure function on immutable inputs.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = nalgebra::DVector<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Half-integer spin quantum number, stored as 2s to keep it exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    /// Builds a spin from its value; 2s must be a non-negative integer.
    pub fn new(s: f64) -> Result<Self> {
        let twice = 2.0 * s;
        if !(s >= 0.0) || twice.fract() != 0.0 || twice > u32::MAX as f64 {
            return Err(Error::InvalidSpin(s));
        }
        Ok(Self { twice: twice as u32 })
    }

    pub const fn from_twice(twice: u32) -> Self {
        Self { twice }
    }

    pub fn value(self) -> f64 {
        self.twice as f64 / 2.0
    }

    /// Hilbert-space dimension 2s + 1.
    pub fn multiplicity(self) -> usize {
        self.twice as usize + 1
    }

    /// Magnetic quantum number of basis index k, ordered m = s, s-1, ..., -s.
    pub fn m_of_index(self, k: usize) -> f64 {
        self.value() - k as f64
    }
}

/// The spin operator matrices for one spin, in the Zeeman basis
/// |s>, |s-1>, ..., |-s>.
#[derive(Debug, Clone)]
pub struct SpinMatrixSet {
    pub s: Spin,
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
    pub splus: CMatrix,
    pub sminus: CMatrix,
    pub id: CMatrix,
}

impl SpinMatrixSet {
    /// Operator component by axis index (0 = x, 1 = y, 2 = z).
    pub fn axis(&self, k: usize) -> &CMatrix {
        match k {
            0 => &self.sx,
            1 => &self.sy,
            2 => &self.sz,
            _ => panic!("axis index {k} out of range"),
        }
    }
}

/// Spin matrices for arbitrary half-integer spin.
///
/// Ladder elements follow <m+1|S+|m> = sqrt(s(s+1) - m(m+1)).
pub fn spin_matrices(s: Spin) -> SpinMatrixSet {
    let d = s.multiplicity();
    let sv = s.value();
    let mut sz = CMatrix::zeros(d, d);
    let mut splus = CMatrix::zeros(d, d);
    for k in 0..d {
        let m = s.m_of_index(k);
        sz[(k, k)] = Complex64::new(m, 0.0);
        if k > 0 {
            // raises |m> (column k) into |m+1> (row k-1)
            let c = (sv * (sv + 1.0) - m * (m + 1.0)).sqrt();
            splus[(k - 1, k)] = Complex64::new(c, 0.0);
        }
    }
    let sminus = splus.adjoint();
    let sx = (&splus + &sminus).scale(0.5);
    let sy = (&splus - &sminus) * Complex64::new(0.0, -0.5);
    SpinMatrixSet {
        s,
        sx,
        sy,
        sz,
        splus,
        sminus,
        id: CMatrix::identity(d, d),
    }
}

/// An ordered tensor product of local Hilbert spaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductSpace {
    dims: Vec<usize>,
}

impl ProductSpace {
    pub fn new(dims: Vec<usize>) -> Self {
        debug_assert!(dims.iter().all(|&d| d > 0));
        Self { dims }
    }

    pub fn from_spins(spins: impl IntoIterator<Item = Spin>) -> Self {
        Self::new(spins.into_iter().map(|s| s.multiplicity()).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nslots(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Embeds a local operator into the product space: identity on every other
/// slot, `op` on `slot`.
pub fn embed(op: &CMatrix, space: &ProductSpace, slot: usize) -> Result<CMatrix> {
    if slot >= space.nslots() {
        return Err(Error::SlotOutOfRange {
            slot,
            nslots: space.nslots(),
        });
    }
    if op.nrows() != space.dims[slot] || op.ncols() != space.dims[slot] {
        return Err(Error::DimensionMismatch {
            got: op.nrows(),
            expected: space.dims[slot],
        });
    }
    let left: usize = space.dims[..slot].iter().product();
    let right: usize = space.dims[slot + 1..].iter().product();
    let mut out = CMatrix::identity(left, left).kronecker(op);
    if right > 1 {
        out = out.kronecker(&CMatrix::identity(right, right));
    }
    Ok(out)
}

/// Kronecker product of a list of matrices, left to right.
pub fn kron_product(factors: &[CMatrix]) -> CMatrix {
    assert!(!factors.is_empty(), "kron_product of empty list");
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        out = out.kronecker(f);
    }
    out
}

/// Maximum |H - H^dagger| element.
pub fn hermiticity_defect(h: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..h.nrows() {
        for j in i..h.ncols() {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending and
/// eigenvector phases fixed (largest-magnitude component real positive) so
/// results are reproducible across platforms.
///
/// One decomposition serves a whole time grid of propagators, which is the
/// dominant cost saving of the engine.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
}

impl EigenBasis {
    /// Decomposes `h`, rejecting matrices that are not Hermitian within
    /// `1e-10 * max(1, |H|_max)`.
    pub fn new(h: &CMatrix) -> Result<Self> {
        let scale = h.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let defect = hermiticity_defect(h);
        if defect > 1e-10 * scale.max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        // operate on the exactly Hermitian average
        let sym = (h + h.adjoint()).scale(0.5);
        let eig = sym.symmetric_eigen();
        let n = h.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut eigenvectors = CMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).clone_owned();
            let mut best = 0;
            for i in 1..n {
                if v[i].norm() > v[best].norm() {
                    best = i;
                }
            }
            let mag = v[best].norm();
            if mag > 0.0 {
                let phase = v[best] / Complex64::new(mag, 0.0);
                v *= phase.conj();
            }
            eigenvectors.set_column(col, &v);
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// exp(-i H t) = V diag(exp(-i w t)) V^dagger.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            let phase = Complex64::from_polar(1.0, -self.eigenvalues[k] * t);
            col *= phase;
        }
        let mut out = CMatrix::zeros(n, n);
        scaled.mul_to(&self.eigenvectors.adjoint(), &mut out);
        out
    }
}

/// Unitary exp(-i H t) of a Hermitian matrix in rad/ms over t in ms.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> Result<CMatrix> {
    Ok(EigenBasis::new(h)?.propagator(t))
}

/// A density matrix together with the product space it lives on.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub matrix: CMatrix,
    pub basis: ProductSpace,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace (1e-10) and positive
    /// semidefiniteness (eigenvalues >= -1e-10).
    pub fn new(matrix: CMatrix, basis: ProductSpace) -> Result<Self> {
        if matrix.nrows() != basis.total_dim() {
            return Err(Error::DimensionMismatch {
                got: matrix.nrows(),
                expected: basis.total_dim(),
            });
        }
        let defect = hermiticity_defect(&matrix);
        if defect > 1e-10 {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (deviation {defect:.3e})"
            )));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
            return Err(Error::InvalidDensityMatrix(format!("trace {trace} != 1")));
        }
        let sym = (&matrix + matrix.adjoint()).scale(0.5);
        let eig = sym.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&w| w < -1e-10) {
            return Err(Error::InvalidDensityMatrix(
                "negative eigenvalue".to_string(),
            ));
        }
        Ok(Self { matrix, basis })
    }

    /// Caller guarantees validity (used for states built by construction).
    pub fn new_unchecked(matrix: CMatrix, basis: ProductSpace) -> Self {
        Self { matrix, basis }
    }
}

/// The fully mixed state Id / total_dim.
pub fn mixed_state(space: &ProductSpace) -> DensityMatrix {
    let d = space.total_dim();
    let m = CMatrix::identity(d, d).scale(1.0 / d as f64);
    DensityMatrix::new_unchecked(m, space.clone())
}

/// Partial contraction <a| M |b> over one slot: returns the operator on the
/// remaining slots, with |a>, |b> vectors on `slot`.
pub fn sandwich_slot(
    m: &CMatrix,
    space: &ProductSpace,
    slot: usize,
    bra: &nalgebra::DVector<Complex64>,
    ket: &nalgebra::DVector<Complex64>,
) -> Result<CMatrix> {
    if slot >= space.nslots() {
        return Err(Error::SlotOutOfRange {
            slot,
            nslots: space.nslots(),
        });
    }
    let d = space.dims[slot];
    if bra.len() != d || ket.len() != d {
        return Err(Error::DimensionMismatch {
            got: bra.len(),
            expected: d,
        });
    }
    let left: usize = space.dims[..slot].iter().product();
    let right: usize = space.dims[slot + 1..].iter().product();
    let rest = left * right;
    let mut out = CMatrix::zeros(rest, rest);
    let idx = |l: usize, k: usize, r: usize| (l * d + k) * right + r;
    for l_row in 0..left {
        for r_row in 0..right {
            for l_col in 0..left {
                for r_col in 0..right {
                    let mut acc = ZERO;
                    for a in 0..d {
                        if bra[a] == ZERO {
                            continue;
                        }
                        for b in 0..d {
                            acc += bra[a].conj() * m[(idx(l_row, a, r_row), idx(l_col, b, r_col))] * ket[b];
                        }
                    }
                    out[(l_row * right + r_row, l_col * right + r_col)] = acc;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
