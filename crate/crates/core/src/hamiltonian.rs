//! Assembly of the central-spin, projected (conventional) and generalized
//! cluster Hamiltonians, including the second-order perturbation tensor and
//! mean-field terms from spins outside a cluster.
//!
//! Every matrix element produced here is an angular frequency in rad/ms;
//! coupling tensors arrive in kHz and pick up the 2 pi factor on entry.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::constants::TWO_PI;
use crate::couplings::{dipole_tensor, TensorKind};
use crate::error::{Error, Result};
use crate::spinops::{embed, spin_matrices, CMatrix, CVector, EigenBasis, ProductSpace, Spin, SpinMatrixSet};
use crate::structure::BathArray;

/// The qubit-hosting spin: spin quantum number, self-interaction tensor D
/// (kHz; zero-field splitting for electron spins), field-coupling tensor
/// (rad ms^-1 G^-1), applied field (G), and the two eigenstate indices of
/// H_S used as qubit levels |0> and |1> (ascending-energy indexing).
#[derive(Debug, Clone, PartialEq)]
pub struct CentralSpin {
    pub s: Spin,
    pub d_tensor: Matrix3<f64>,
    pub gamma: Matrix3<f64>,
    pub field: Vector3<f64>,
    pub levels: (usize, usize),
}

impl CentralSpin {
    pub fn new(
        s: Spin,
        d_tensor: Matrix3<f64>,
        gamma: Matrix3<f64>,
        field: Vector3<f64>,
        levels: (usize, usize),
    ) -> Result<Self> {
        let defect = (d_tensor - d_tensor.transpose()).abs().max();
        if defect > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "self-interaction tensor not symmetric (deviation {defect:.3e} kHz)"
            )));
        }
        let mult = s.multiplicity();
        for level in [levels.0, levels.1] {
            if level >= mult {
                return Err(Error::LevelOutOfRange {
                    level,
                    multiplicity: mult,
                });
            }
        }
        if levels.0 == levels.1 {
            return Err(Error::InvalidArgument(
                "qubit levels must be distinct".to_string(),
            ));
        }
        Ok(Self {
            s,
            d_tensor,
            gamma,
            field,
            levels,
        })
    }

    /// Isotropic field coupling.
    pub fn with_scalar_gamma(
        s: f64,
        d_tensor: Matrix3<f64>,
        gamma: f64,
        field: Vector3<f64>,
        levels: (usize, usize),
    ) -> Result<Self> {
        Self::new(
            Spin::new(s)?,
            d_tensor,
            Matrix3::identity() * gamma,
            field,
            levels,
        )
    }
}

/// ZFS tensor from the axial/transverse parameters:
/// D (Sz^2 - S(S+1)/3) + E (Sx^2 - Sy^2) as diag(E - D/3, -E - D/3, 2D/3).
pub fn zfs_tensor(d: f64, e: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(e - d / 3.0, -e - d / 3.0, 2.0 * d / 3.0))
}

/// The free central-spin Hamiltonian S.D.S + B.gamma.S in rad/ms.
pub fn central_hamiltonian(cs: &CentralSpin) -> CMatrix {
    let ops = spin_matrices(cs.s);
    let d = cs.s.multiplicity();
    let mut h = CMatrix::zeros(d, d);
    for a in 0..3 {
        for b in 0..3 {
            let dab = cs.d_tensor[(a, b)] * TWO_PI;
            if dab != 0.0 {
                h += (ops.axis(a) * ops.axis(b)).scale(dab);
            }
        }
        let mut zeeman = 0.0;
        for row in 0..3 {
            zeeman += cs.field[row] * cs.gamma[(row, a)];
        }
        if zeeman != 0.0 {
            h += ops.axis(a).scale(zeeman);
        }
    }
    h
}

/// Full diagonalization of the free central spin: energies ascending in
/// rad/ms, eigenvectors orthonormal with deterministic phases.
pub fn central_eigensystem(cs: &CentralSpin) -> Result<(Vec<f64>, CMatrix)> {
    let eig = EigenBasis::new(&central_hamiltonian(cs))?;
    Ok((eig.eigenvalues().to_vec(), eig.eigenvectors().clone()))
}

/// A central spin together with its diagonalized eigensystem and cached
/// qubit-level data, shared read-only by every cluster evaluation.
#[derive(Debug, Clone)]
pub struct CentralSystem {
    pub cs: CentralSpin,
    pub ops: SpinMatrixSet,
    energies: Vec<f64>,
    eigenvectors: CMatrix,
    level_vectors: [CVector; 2],
    spin_expectations: [Vector3<f64>; 2],
}

impl CentralSystem {
    pub fn new(cs: CentralSpin) -> Result<Self> {
        let (energies, eigenvectors) = central_eigensystem(&cs)?;
        let v0 = eigenvectors.column(cs.levels.0).clone_owned();
        let v1 = eigenvectors.column(cs.levels.1).clone_owned();
        let ops = spin_matrices(cs.s);
        let expectation = |v: &CVector| {
            Vector3::new(
                (v.adjoint() * &ops.sx * v)[(0, 0)].re,
                (v.adjoint() * &ops.sy * v)[(0, 0)].re,
                (v.adjoint() * &ops.sz * v)[(0, 0)].re,
            )
        };
        let spin_expectations = [expectation(&v0), expectation(&v1)];
        Ok(Self {
            cs,
            ops,
            energies,
            eigenvectors,
            level_vectors: [v0, v1],
            spin_expectations,
        })
    }

    pub fn dim(&self) -> usize {
        self.cs.s.multiplicity()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenstate index of qubit branch alpha (0 or 1).
    pub fn level_index(&self, alpha: usize) -> usize {
        if alpha == 0 {
            self.cs.levels.0
        } else {
            self.cs.levels.1
        }
    }

    /// E_alpha in rad/ms.
    pub fn level_energy(&self, alpha: usize) -> f64 {
        self.energies[self.level_index(alpha)]
    }

    pub fn level_vector(&self, alpha: usize) -> &CVector {
        &self.level_vectors[alpha]
    }

    /// <alpha| S |alpha>, real by Hermiticity.
    pub fn spin_expectation(&self, alpha: usize) -> &Vector3<f64> {
        &self.spin_expectations[alpha]
    }

    /// <row| S |col> between arbitrary eigenstates.
    fn spin_matrix_element(&self, row: usize, col: usize) -> [Complex64; 3] {
        let vr = self.eigenvectors.column(row);
        let vc = self.eigenvectors.column(col);
        [
            (vr.adjoint() * &self.ops.sx * vc)[(0, 0)],
            (vr.adjoint() * &self.ops.sy * vc)[(0, 0)],
            (vr.adjoint() * &self.ops.sz * vc)[(0, 0)],
        ]
    }

    /// Free central-spin Hamiltonian in rad/ms.
    pub fn hamiltonian(&self) -> CMatrix {
        central_hamiltonian(&self.cs)
    }

    /// Qubit-subspace Pauli operator embedded in the central-spin space
    /// (identity outside the two levels is NOT included: the operator is
    /// |0><1| + |1><0| style, zero elsewhere).
    pub fn qubit_sigma(&self, axis: PulseAxis) -> CMatrix {
        let v0 = &self.level_vectors[0];
        let v1 = &self.level_vectors[1];
        let outer01 = v0 * v1.adjoint();
        let outer10 = v1 * v0.adjoint();
        match axis {
            PulseAxis::X => outer01 + outer10,
            PulseAxis::Y => outer01 * Complex64::new(0.0, -1.0) + outer10 * Complex64::new(0.0, 1.0),
            PulseAxis::Z => v0 * v0.adjoint() - v1 * v1.adjoint(),
        }
    }

    /// (|0> + e^{i phi} |1>)/sqrt(2).
    pub fn superposition(&self, phase: f64) -> CVector {
        let e = Complex64::from_polar(1.0, phase);
        (self.level_vectors[0].clone() + &self.level_vectors[1] * e)
            * Complex64::new(1.0 / 2f64.sqrt(), 0.0)
    }
}

/// Rotation axis of a decoupling pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseAxis {
    X,
    Y,
    Z,
}

/// The initial single-spin state assigned to each bath spin.
#[derive(Debug, Clone)]
pub enum LocalState {
    /// rho = Id/(2s+1); <I> = 0.
    Mixed,
    /// Zeeman basis state by index k, m = s - k.
    Zeeman(usize),
    /// Arbitrary normalized local state vector.
    Pure(CVector),
}

/// Per-bath-spin initial states, indexed like the bath array.
#[derive(Debug, Clone)]
pub struct BathStateAssignment {
    states: Vec<LocalState>,
}

impl BathStateAssignment {
    pub fn mixed(n: usize) -> Self {
        Self {
            states: (0..n).map(|_| LocalState::Mixed).collect(),
        }
    }

    pub fn new(states: Vec<LocalState>, bath: &BathArray) -> Result<Self> {
        if states.len() != bath.len() {
            return Err(Error::DimensionMismatch {
                got: states.len(),
                expected: bath.len(),
            });
        }
        for (i, st) in states.iter().enumerate() {
            let mult = bath.spin_type(i).spin.multiplicity();
            match st {
                LocalState::Mixed => {}
                LocalState::Zeeman(k) => {
                    if *k >= mult {
                        return Err(Error::InvalidArgument(format!(
                            "Zeeman index {k} out of range for spin {i}"
                        )));
                    }
                }
                LocalState::Pure(v) => {
                    if v.len() != mult {
                        return Err(Error::DimensionMismatch {
                            got: v.len(),
                            expected: mult,
                        });
                    }
                    if (v.norm() - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidArgument(format!(
                            "pure state of spin {i} not normalized"
                        )));
                    }
                }
            }
        }
        Ok(Self { states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &LocalState {
        &self.states[i]
    }

    pub fn is_all_mixed(&self) -> bool {
        self.states.iter().all(|s| matches!(s, LocalState::Mixed))
    }

    /// <I> of spin i.
    pub fn expectation(&self, bath: &BathArray, i: usize) -> Vector3<f64> {
        let spin = bath.spin_type(i).spin;
        match &self.states[i] {
            LocalState::Mixed => Vector3::zeros(),
            LocalState::Zeeman(k) => Vector3::new(0.0, 0.0, spin.m_of_index(*k)),
            LocalState::Pure(v) => {
                let ops = spin_matrices(spin);
                Vector3::new(
                    (v.adjoint() * &ops.sx * v)[(0, 0)].re,
                    (v.adjoint() * &ops.sy * v)[(0, 0)].re,
                    (v.adjoint() * &ops.sz * v)[(0, 0)].re,
                )
            }
        }
    }

    /// Local density matrix of spin i.
    pub fn local_density(&self, bath: &BathArray, i: usize) -> CMatrix {
        let mult = bath.spin_type(i).spin.multiplicity();
        match &self.states[i] {
            LocalState::Mixed => CMatrix::identity(mult, mult).scale(1.0 / mult as f64),
            LocalState::Zeeman(k) => {
                let mut m = CMatrix::zeros(mult, mult);
                m[(*k, *k)] = Complex64::new(1.0, 0.0);
                m
            }
            LocalState::Pure(v) => v * v.adjoint(),
        }
    }
}

/// Controls for the second-order (Eq.-style T tensor) correction of the
/// conventional formulation.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationOptions {
    pub enabled: bool,
    /// include the i = j self terms of the double sum
    pub include_self_terms: bool,
    /// minimum |E_alpha - E_beta| in rad/ms before refusing
    pub degeneracy_threshold: f64,
}

impl Default for PerturbationOptions {
    fn default() -> Self {
        Self {
            enabled: false,
            include_self_terms: true,
            degeneracy_threshold: 1e-6,
        }
    }
}

/// Second-order perturbation tensor T_ij from the sum over central-spin
/// eigenstates beta != alpha:
/// T_ij = sum_beta (A_i^T <a|S|b>) (x) (A_j^T <b|S|a>) / (E_a - E_b),
/// with A in kHz on entry and T in rad/ms. Complex in general; the
/// assembled sum over ordered (i, j) pairs is Hermitian.
pub fn pt2_tensor(
    central: &CentralSystem,
    a_i: &Matrix3<f64>,
    a_j: &Matrix3<f64>,
    alpha: usize,
    degeneracy_threshold: f64,
) -> Result<Matrix3<Complex64>> {
    let level = central.level_index(alpha);
    let e_alpha = central.energies()[level];
    let mut t = Matrix3::<Complex64>::zeros();
    for beta in 0..central.dim() {
        if beta == level {
            continue;
        }
        let gap = e_alpha - central.energies()[beta];
        if gap.abs() < degeneracy_threshold {
            return Err(Error::DegenerateLevels {
                alpha: level,
                beta,
                gap: gap.abs(),
                threshold: degeneracy_threshold,
            });
        }
        let v = central.spin_matrix_element(level, beta); // <a|S|b>
        // u_b = (A_i^T v)_b, w_b = (A_j^T conj(v))_b, both in rad/ms
        let mut u = [Complex64::new(0.0, 0.0); 3];
        let mut w = [Complex64::new(0.0, 0.0); 3];
        for b in 0..3 {
            for a in 0..3 {
                u[b] += v[a] * (a_i[(a, b)] * TWO_PI);
                w[b] += v[a].conj() * (a_j[(a, b)] * TWO_PI);
            }
        }
        for r in 0..3 {
            for c in 0..3 {
                t[(r, c)] += u[r] * w[c] / Complex64::new(gap, 0.0);
            }
        }
    }
    Ok(t)
}

/// Point-dipole bath-bath coupling tensor J_ij in kHz.
pub fn bath_dipole_j(bath: &BathArray, i: usize, j: usize) -> Result<Matrix3<f64>> {
    let r = bath.position(j) - bath.position(i);
    Ok(dipole_tensor(
        &r,
        bath.spin_type(i).gamma,
        bath.spin_type(j).gamma,
        TensorKind::BathBath,
    )?
    .matrix)
}

fn hyperfine_of(bath: &BathArray, i: usize) -> Result<&Matrix3<f64>> {
    bath.spins()[i]
        .hyperfine
        .as_ref()
        .ok_or(Error::MissingHyperfine(i))
}

/// The effective bath Hamiltonian of one cluster, conditioned on a qubit
/// branch. The constant E_alpha is kept out of the matrix and carried as a
/// scalar offset so the branch phases combine without precision loss at
/// large level splittings; exp(-i H t) = e^{-i E_alpha t} exp(-i matrix t).
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub alpha: usize,
    pub matrix: CMatrix,
    pub energy_offset: f64,
    pub space: ProductSpace,
    pub mean_field: bool,
}

/// Embedded x/y/z spin operators for each cluster slot.
pub(crate) fn embedded_cluster_ops(
    bath: &BathArray,
    cluster: &[u32],
    space: &ProductSpace,
    slot_offset: usize,
) -> Vec<[CMatrix; 3]> {
    cluster
        .iter()
        .enumerate()
        .map(|(slot, &i)| {
            let ops = spin_matrices(bath.spin_type(i as usize).spin);
            [
                embed(&ops.sx, space, slot + slot_offset).unwrap(),
                embed(&ops.sy, space, slot + slot_offset).unwrap(),
                embed(&ops.sz, space, slot + slot_offset).unwrap(),
            ]
        })
        .collect()
}

/// Local single-spin bath terms in rad/ms: quadrupole + Zeeman.
fn local_bath_terms(bath: &BathArray, i: usize, field: &Vector3<f64>) -> CMatrix {
    let ty = bath.spin_type(i);
    let ops = spin_matrices(ty.spin);
    let d = ty.spin.multiplicity();
    let mut h = CMatrix::zeros(d, d);
    // isotropic Zeeman: gamma (B . I)
    for a in 0..3 {
        let coeff = ty.gamma * field[a];
        if coeff != 0.0 {
            h += ops.axis(a).scale(coeff);
        }
    }
    if let Some(p) = &bath.spins()[i].quadrupole {
        for a in 0..3 {
            for b in 0..3 {
                let pab = p[(a, b)] * TWO_PI;
                if pab != 0.0 {
                    h += (ops.axis(a) * ops.axis(b)).scale(pab);
                }
            }
        }
    }
    h
}

/// Adds sum_ab C_ab Ia[si] Ib[sj] (C complex, rad/ms) to `h`.
fn add_bilinear(
    h: &mut CMatrix,
    c: &Matrix3<Complex64>,
    ops_i: &[CMatrix; 3],
    ops_j: &[CMatrix; 3],
) {
    for a in 0..3 {
        for b in 0..3 {
            let coeff = c[(a, b)];
            if coeff != Complex64::new(0.0, 0.0) {
                *h += (&ops_i[a] * &ops_j[b]) * coeff;
            }
        }
    }
}

fn real_to_complex3(m: &Matrix3<f64>, scale: f64) -> Matrix3<Complex64> {
    m.map(|x| Complex64::new(x * scale, 0.0))
}

/// Conventional cluster Hamiltonian: projected hyperfine, bath terms,
/// intra-cluster J (+T), and the mean-field coupling to outside spins
/// through their state averages (zero for mixed assignments).
pub fn conventional_cluster_hamiltonian(
    cluster: &[u32],
    bath: &BathArray,
    central: &CentralSystem,
    alpha: usize,
    assignment: &BathStateAssignment,
    pt: &PerturbationOptions,
) -> Result<EffectiveHamiltonian> {
    let space = ProductSpace::from_spins(
        cluster.iter().map(|&i| bath.spin_type(i as usize).spin),
    );
    let dim = space.total_dim();
    let mut h = CMatrix::zeros(dim, dim);
    let ops = embedded_cluster_ops(bath, cluster, &space, 0);
    let v_alpha = central.spin_expectation(alpha);
    let mut mean_field = false;

    let in_cluster = |a: usize| cluster.iter().any(|&i| i as usize == a);

    for (slot, &iu) in cluster.iter().enumerate() {
        let i = iu as usize;
        let a_i = hyperfine_of(bath, i)?;
        // <alpha|S|alpha> . A_i . I_i
        let proj = a_i.transpose() * v_alpha * TWO_PI;
        for b in 0..3 {
            if proj[b] != 0.0 {
                h += ops[slot][b].scale(proj[b]);
            }
        }
        h += embed(&local_bath_terms(bath, i, &central.cs.field), &space, slot)?;

        // mean-field coupling to every non-mixed spin outside the cluster
        for a in 0..bath.len() {
            if in_cluster(a) || matches!(assignment.state(a), LocalState::Mixed) {
                continue;
            }
            let avg = assignment.expectation(bath, a);
            let j_ia = bath_dipole_j(bath, i, a)?;
            let mut coeff = j_ia * avg * TWO_PI;
            if pt.enabled {
                let t_ia = pt2_tensor(central, a_i, hyperfine_of(bath, a)?, alpha, pt.degeneracy_threshold)?;
                // both orderings of the double sum: I_i T_ia <I_a> + h.c.
                for b in 0..3 {
                    let mut c = Complex64::new(0.0, 0.0);
                    for x in 0..3 {
                        c += t_ia[(b, x)] * avg[x];
                    }
                    coeff[b] += 2.0 * c.re;
                }
            }
            for b in 0..3 {
                if coeff[b] != 0.0 {
                    h += ops[slot][b].scale(coeff[b]);
                }
            }
            mean_field = true;
        }
    }

    // intra-cluster couplings
    for (si, &iu) in cluster.iter().enumerate() {
        for (sj, &ju) in cluster.iter().enumerate() {
            let (i, j) = (iu as usize, ju as usize);
            if sj > si {
                let j_ij = bath_dipole_j(bath, i, j)?;
                add_bilinear(&mut h, &real_to_complex3(&j_ij, TWO_PI), &ops[si], &ops[sj]);
            }
            if pt.enabled && (si != sj || pt.include_self_terms) {
                let t_ij = pt2_tensor(
                    central,
                    hyperfine_of(bath, i)?,
                    hyperfine_of(bath, j)?,
                    alpha,
                    pt.degeneracy_threshold,
                )?;
                add_bilinear(&mut h, &t_ij, &ops[si], &ops[sj]);
            }
        }
    }

    Ok(EffectiveHamiltonian {
        alpha,
        matrix: h,
        energy_offset: central.level_energy(alpha),
        space,
        mean_field,
    })
}

/// Generalized cluster Hamiltonian over (central ⊗ cluster): the full
/// central-spin Hamiltonian, full-tensor hyperfine to every cluster spin,
/// bath terms, intra-cluster J, and both mean-field sums (the central spin
/// against outside averages, and cluster spins against outside averages).
pub fn gcce_cluster_hamiltonian(
    cluster: &[u32],
    bath: &BathArray,
    central: &CentralSystem,
    assignment: &BathStateAssignment,
) -> Result<CMatrix> {
    let mut dims = vec![central.dim()];
    dims.extend(
        cluster
            .iter()
            .map(|&i| bath.spin_type(i as usize).spin.multiplicity()),
    );
    let space = ProductSpace::new(dims);
    let dim = space.total_dim();
    let mut h = CMatrix::zeros(dim, dim);

    h += embed(&central.hamiltonian(), &space, 0)?;

    let s_ops = [
        embed(&central.ops.sx, &space, 0)?,
        embed(&central.ops.sy, &space, 0)?,
        embed(&central.ops.sz, &space, 0)?,
    ];
    let ops = embedded_cluster_ops(bath, cluster, &space, 1);
    let in_cluster = |a: usize| cluster.iter().any(|&i| i as usize == a);

    for (slot, &iu) in cluster.iter().enumerate() {
        let i = iu as usize;
        let a_i = hyperfine_of(bath, i)?;
        add_bilinear(
            &mut h,
            &real_to_complex3(a_i, TWO_PI),
            &s_ops,
            &ops[slot],
        );
        h += embed(&local_bath_terms(bath, i, &central.cs.field), &space, slot + 1)?;

        for (sj, &ju) in cluster.iter().enumerate().skip(slot + 1) {
            let j_ij = bath_dipole_j(bath, i, ju as usize)?;
            add_bilinear(&mut h, &real_to_complex3(&j_ij, TWO_PI), &ops[slot], &ops[sj]);
        }
    }

    // mean-field sums over outside spins
    for a in 0..bath.len() {
        if in_cluster(a) || matches!(assignment.state(a), LocalState::Mixed) {
            continue;
        }
        let avg = assignment.expectation(bath, a);
        // central spin: S . A_a . <I_a>
        let coeff = hyperfine_of(bath, a)? * avg * TWO_PI;
        for b in 0..3 {
            if coeff[b] != 0.0 {
                h += s_ops[b].scale(coeff[b]);
            }
        }
        // cluster spins: I_i . J_ia . <I_a>
        for (slot, &iu) in cluster.iter().enumerate() {
            let j_ia = bath_dipole_j(bath, iu as usize, a)?;
            let c = j_ia * avg * TWO_PI;
            for b in 0..3 {
                if c[b] != 0.0 {
                    h += ops[slot][b].scale(c[b]);
                }
            }
        }
    }

    Ok(h)
}
