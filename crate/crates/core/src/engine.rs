//! The CCE core: pulse-sequence propagators, per-cluster coherence
//! functions in both formulations, the recursive cluster-contribution
//! product, Monte Carlo bath-state sampling, and the noise autocorrelation
//! expansion.
//!
//! Cluster contributions are independent pure computations evaluated in
//! parallel; the reduction happens after a deterministic sort by cluster
//! id, so results do not depend on scheduling.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::clusters::{build_graph, enumerate_clusters, subclusters, ClusterSet};
use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::hamiltonian::{
    conventional_cluster_hamiltonian, gcce_cluster_hamiltonian, BathStateAssignment,
    CentralSpin, CentralSystem, EffectiveHamiltonian, LocalState, PerturbationOptions, PulseAxis,
};
use crate::spinops::{embed, expm_hermitian, kron_product, spin_matrices, CMatrix, EigenBasis, ProductSpace};
use crate::structure::BathArray;

const GUARD: f64 = 1e-10;
const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// One decoupling pulse: rotation time as a fraction of the total evolution
/// time, rotation axis, and angle in rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub time: f64,
    pub axis: PulseAxis,
    pub angle: f64,
}

/// An ordered set of decoupling pulses on (0, 1) fractional time.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pulses: Vec<Pulse>,
}

impl PulseSequence {
    /// Free induction decay: no pulses.
    pub fn fid() -> Self {
        Self { pulses: Vec::new() }
    }

    /// One pi pulse about x halfway through.
    pub fn hahn_echo() -> Self {
        Self::uniform(1, PulseAxis::X, PI)
    }

    /// n equidistant pulses at (2k-1)/(2n), the CPMG timing.
    pub fn cpmg(n: usize) -> Self {
        Self::uniform(n, PulseAxis::X, PI)
    }

    /// n equidistant pulses with one axis and angle.
    pub fn uniform(n: usize, axis: PulseAxis, angle: f64) -> Self {
        let pulses = (1..=n)
            .map(|k| Pulse {
                time: (2 * k - 1) as f64 / (2 * n) as f64,
                axis,
                angle,
            })
            .collect();
        Self { pulses }
    }

    /// Explicitly timed pulses; times must be strictly increasing in (0,1).
    pub fn explicit(pulses: Vec<Pulse>) -> Result<Self> {
        let mut prev = 0.0;
        for p in &pulses {
            if p.time <= prev || p.time >= 1.0 {
                return Err(Error::InvalidPulseTiming(p.time));
            }
            prev = p.time;
        }
        Ok(Self { pulses })
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn n_pulses(&self) -> usize {
        self.pulses.len()
    }

    /// True when every pulse is a pi flip, the conventional-formulation
    /// requirement.
    pub fn is_pi_only(&self) -> bool {
        self.pulses.iter().all(|p| (p.angle - PI).abs() < 1e-9)
    }

    fn require_pi_only(&self) -> Result<()> {
        for (index, p) in self.pulses.iter().enumerate() {
            if (p.angle - PI).abs() >= 1e-9 {
                return Err(Error::NonPiPulse {
                    index,
                    angle: p.angle,
                });
            }
        }
        Ok(())
    }

    /// Segment durations as fractions of the total time: the free intervals
    /// between pulses plus the final segment, summing to one.
    pub fn segments(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pulses.len() + 1);
        let mut prev = 0.0;
        for p in &self.pulses {
            out.push(p.time - prev);
            prev = p.time;
        }
        out.push(1.0 - prev);
        out
    }
}

/// Uniform time grid in ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<Self> {
        if points < 2 || !(stop > start) || start < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid time grid [{start}, {stop}] with {points} points"
            )));
        }
        Ok(Self { start, stop, points })
    }

    pub fn times(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.start + step * k as f64).collect()
    }
}

/// Normalized coherence samples over a time grid. `flagged` marks grid
/// points where the division guard replaced a degenerate cluster
/// contribution.
#[derive(Debug, Clone)]
pub struct CoherenceCurve {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub flagged: Vec<bool>,
    /// The L(0) divisor applied to the raw curve.
    pub normalization: Complex64,
}

impl CoherenceCurve {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// Raw coherence curve of one cluster.
#[derive(Debug, Clone)]
pub struct ClusterContribution {
    pub cluster: Vec<u32>,
    pub curve: Vec<Complex64>,
}

/// Bath-noise autocorrelation in (rad/ms)^2 over the grid.
#[derive(Debug, Clone)]
pub struct AutocorrCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl AutocorrCurve {
    /// Interface units: ordinary frequency squared.
    pub fn values_khz2(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / (TWO_PI * TWO_PI)).collect()
    }
}

/// Which cluster expansion to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Conventional,
    Generalized,
}

/// Engine configuration for one expansion run.
#[derive(Debug, Clone)]
pub struct CceConfig {
    pub formulation: Formulation,
    /// Maximum cluster size.
    pub order: usize,
    /// Bath inclusion radius, angstrom.
    pub r_bath: f64,
    /// Cluster-graph edge radius, angstrom.
    pub r_dipole: f64,
    pub pulses: PulseSequence,
    pub grid: TimeGrid,
    pub pt: PerturbationOptions,
    /// Relative phase of the prepared superposition (|0> + e^{i phi}|1>).
    pub qubit_phase: f64,
    /// Qubit branch whose effective Hamiltonian drives the noise
    /// autocorrelation.
    pub autocorr_branch: usize,
}

impl CceConfig {
    pub fn new(formulation: Formulation, order: usize, r_bath: f64, r_dipole: f64, pulses: PulseSequence, grid: TimeGrid) -> Self {
        Self {
            formulation,
            order,
            r_bath,
            r_dipole,
            pulses,
            grid,
            pt: PerturbationOptions::default(),
            qubit_phase: 0.0,
            autocorr_branch: 0,
        }
    }
}

/// Precomputed branch evolution of one cluster under the conventional
/// formulation: one eigendecomposition per branch serves the whole grid.
/// The scalar branch energies are tracked separately from the matrices so
/// branch phases cancel exactly where they should (see
/// `EffectiveHamiltonian`).
pub struct BranchEvolution {
    eig: [EigenBasis; 2],
    energy: [f64; 2],
    segments: Vec<f64>,
}

impl BranchEvolution {
    pub fn new(h0: &EffectiveHamiltonian, h1: &EffectiveHamiltonian, seq: &PulseSequence) -> Result<Self> {
        seq.require_pi_only()?;
        Ok(Self {
            eig: [EigenBasis::new(&h0.matrix)?, EigenBasis::new(&h1.matrix)?],
            energy: [h0.energy_offset, h1.energy_offset],
            segments: seq.segments(),
        })
    }

    fn branch(&self, alpha: usize, segment: usize) -> usize {
        if segment % 2 == 0 {
            alpha
        } else {
            1 - alpha
        }
    }

    /// Offset-free time-ordered propagator matrices (M0, M1) at total
    /// time t; the full unitaries are e^{-i phase_alpha(t)} M_alpha.
    pub fn matrices(&self, t: f64) -> (CMatrix, CMatrix) {
        let mut out: [Option<CMatrix>; 2] = [None, None];
        for alpha in 0..2 {
            let mut m: Option<CMatrix> = None;
            for (k, &f) in self.segments.iter().enumerate() {
                let p = self.eig[self.branch(alpha, k)].propagator(f * t);
                m = Some(match m {
                    None => p,
                    Some(prev) => p * prev,
                });
            }
            out[alpha] = m;
        }
        let [m0, m1] = out;
        (m0.unwrap(), m1.unwrap())
    }

    /// Scalar branch phase at total time t.
    pub fn phase(&self, alpha: usize, t: f64) -> f64 {
        self.segments
            .iter()
            .enumerate()
            .map(|(k, &f)| self.energy[self.branch(alpha, k)] * f * t)
            .sum()
    }

    /// phase(0, t) - phase(1, t), evaluated without cancellation loss.
    pub fn phase_difference(&self, t: f64) -> f64 {
        let signed: f64 = self
            .segments
            .iter()
            .enumerate()
            .map(|(k, &f)| if k % 2 == 0 { f } else { -f })
            .sum();
        (self.energy[0] - self.energy[1]) * signed * t
    }
}

/// Full conventional propagators (U0, U1) with branch phases folded in:
/// FID for an empty sequence, alternating-half products otherwise.
pub fn conventional_propagators(
    h0: &EffectiveHamiltonian,
    h1: &EffectiveHamiltonian,
    seq: &PulseSequence,
    t: f64,
) -> Result<(CMatrix, CMatrix)> {
    let evo = BranchEvolution::new(h0, h1, seq)?;
    let (m0, m1) = evo.matrices(t);
    let u0 = m0 * Complex64::from_polar(1.0, -evo.phase(0, t));
    let u1 = m1 * Complex64::from_polar(1.0, -evo.phase(1, t));
    Ok((u0, u1))
}

/// Tr[a rho b^dagger] without forming the final product.
fn trace_sandwich(a: &CMatrix, rho: &CMatrix, b: &CMatrix) -> Complex64 {
    let x = a * rho;
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            acc += x[(r, c)] * b[(r, c)].conj();
        }
    }
    acc
}

/// L_C(t) = Tr[U0(t) rho_C U1(t)^dagger] over the grid, with the branch
/// phase difference applied as a scalar.
pub fn cluster_coherence_conventional(
    h0: &EffectiveHamiltonian,
    h1: &EffectiveHamiltonian,
    rho: &CMatrix,
    seq: &PulseSequence,
    times: &[f64],
) -> Result<Vec<Complex64>> {
    if rho.nrows() != h0.matrix.nrows() {
        return Err(Error::DimensionMismatch {
            got: rho.nrows(),
            expected: h0.matrix.nrows(),
        });
    }
    let evo = BranchEvolution::new(h0, h1, seq)?;
    Ok(times
        .iter()
        .map(|&t| {
            let (m0, m1) = evo.matrices(t);
            trace_sandwich(&m0, rho, &m1) * Complex64::from_polar(1.0, -evo.phase_difference(t))
        })
        .collect())
}

/// Precomputed generalized-formulation evolution of one cluster.
pub struct GcceEvolution {
    eig: EigenBasis,
    pulse_ops: Vec<CMatrix>,
    segments: Vec<f64>,
}

impl GcceEvolution {
    pub fn new(
        h: &CMatrix,
        central: &CentralSystem,
        space: &ProductSpace,
        seq: &PulseSequence,
    ) -> Result<Self> {
        let mut pulse_ops = Vec::with_capacity(seq.n_pulses());
        for p in seq.pulses() {
            // exp(-i sigma_axis angle/2) on the central slot
            let sigma = central.qubit_sigma(p.axis);
            let local = expm_hermitian(&sigma.scale(p.angle / 2.0), 1.0)?;
            pulse_ops.push(embed(&local, space, 0)?);
        }
        Ok(Self {
            eig: EigenBasis::new(h)?,
            pulse_ops,
            segments: seq.segments(),
        })
    }

    /// Time-ordered unitary with pulse rotations inserted between the free
    /// segments.
    pub fn unitary(&self, t: f64) -> CMatrix {
        let mut m = self.eig.propagator(self.segments[0] * t);
        for (k, op) in self.pulse_ops.iter().enumerate() {
            m = op * m;
            m = self.eig.propagator(self.segments[k + 1] * t) * m;
        }
        m
    }
}

/// Generalized-formulation propagator for a cluster Hamiltonian.
pub fn gcce_propagator(
    h: &CMatrix,
    central: &CentralSystem,
    space: &ProductSpace,
    seq: &PulseSequence,
    t: f64,
) -> Result<CMatrix> {
    Ok(GcceEvolution::new(h, central, space, seq)?.unitary(t))
}

/// L_C(t) = <0| Tr_bath[U rho U^dagger] |1> normalized by its t = 0 value
/// <0| rho_S |1>.
pub fn cluster_coherence_gcce(
    h: &CMatrix,
    central: &CentralSystem,
    space: &ProductSpace,
    rho: &CMatrix,
    seq: &PulseSequence,
    times: &[f64],
) -> Result<Vec<Complex64>> {
    let evo = GcceEvolution::new(h, central, space, seq)?;
    let v0 = central.level_vector(0);
    let v1 = central.level_vector(1);
    // divisor: <0|rho_S|1> x Tr[rho_bath] = <0 (x) .| rho |1 (x) .> traced
    let divisor = crate::spinops::sandwich_slot(rho, space, 0, v0, v1)?.trace();
    if divisor.norm() < GUARD {
        return Err(Error::DegenerateInput(
            "initial central state has no |0><1| coherence".to_string(),
        ));
    }
    Ok(times
        .iter()
        .map(|&t| {
            let u = evo.unitary(t);
            let evolved = &u * rho * u.adjoint();
            let reduced = crate::spinops::sandwich_slot(&evolved, space, 0, v0, v1).unwrap();
            reduced.trace() / divisor
        })
        .collect())
}

/// Combines raw cluster curves into the recursive product
/// L(t) = base(t) prod_C Ltilde_C(t). Contributions may arrive in any
/// order; they are sorted by (size, lexicographic id) first, so the result
/// is identical under permutation. Divisor factors smaller than 1e-10 in
/// magnitude set the contribution to one and flag the grid point.
pub fn cce_expand(
    contributions: Vec<ClusterContribution>,
    set: &ClusterSet,
    base: &[Complex64],
    times: &[f64],
) -> CoherenceCurve {
    let npts = times.len();
    let mut sorted = contributions;
    sorted.sort_by(|a, b| {
        a.cluster
            .len()
            .cmp(&b.cluster.len())
            .then_with(|| a.cluster.cmp(&b.cluster))
    });
    let index: HashMap<&[u32], usize> = sorted
        .iter()
        .enumerate()
        .map(|(k, c)| (c.cluster.as_slice(), k))
        .collect();

    let mut tilde: Vec<Vec<Complex64>> = Vec::with_capacity(sorted.len());
    let mut flagged = vec![false; npts];
    for contribution in &sorted {
        let subs = subclusters(&contribution.cluster, set).unwrap_or_default();
        let sub_idx: Vec<usize> = subs
            .iter()
            .filter_map(|s| index.get(s.as_slice()).copied())
            .collect();
        let mut curve = Vec::with_capacity(npts);
        for p in 0..npts {
            let mut divisor = C_ONE;
            let mut degenerate = false;
            for &k in &sub_idx {
                let factor = tilde[k][p];
                if factor.norm() < GUARD {
                    degenerate = true;
                    break;
                }
                divisor *= factor;
            }
            if degenerate || divisor.norm() < GUARD {
                flagged[p] = true;
                curve.push(C_ONE);
            } else {
                curve.push(contribution.curve[p] / divisor);
            }
        }
        tilde.push(curve);
    }

    let mut values: Vec<Complex64> = base.to_vec();
    for curve in &tilde {
        for (v, c) in values.iter_mut().zip(curve) {
            *v *= c;
        }
    }
    CoherenceCurve {
        times: times.to_vec(),
        values,
        flagged,
        normalization: C_ONE,
    }
}

fn cluster_density(bath: &BathArray, cluster: &[u32], assignment: &BathStateAssignment) -> CMatrix {
    if cluster.is_empty() {
        return CMatrix::identity(1, 1);
    }
    let locals: Vec<CMatrix> = cluster
        .iter()
        .map(|&i| assignment.local_density(bath, i as usize))
        .collect();
    kron_product(&locals)
}

fn bath_space(bath: &BathArray, cluster: &[u32]) -> ProductSpace {
    ProductSpace::from_spins(cluster.iter().map(|&i| bath.spin_type(i as usize).spin))
}

/// Internal grid: prepends t = 0 when absent so every curve can be
/// normalized by a value computed through the identical code path.
fn working_times(times: &[f64]) -> (Vec<f64>, bool) {
    if times.first().is_some_and(|&t| t == 0.0) {
        (times.to_vec(), false)
    } else {
        let mut out = Vec::with_capacity(times.len() + 1);
        out.push(0.0);
        out.extend_from_slice(times);
        (out, true)
    }
}

fn finalize(curve: CoherenceCurve, prepended: bool) -> CoherenceCurve {
    let divisor = curve.values[0];
    let skip = usize::from(prepended);
    let values: Vec<Complex64> = curve.values[skip..].iter().map(|v| v / divisor).collect();
    let flagged = curve.flagged[skip..].to_vec();
    let times = curve.times[skip..].to_vec();
    CoherenceCurve {
        times,
        values,
        flagged,
        normalization: divisor,
    }
}

struct Prepared {
    bath: BathArray,
    central: CentralSystem,
    set: ClusterSet,
}

fn prepare(bath: &BathArray, cs: &CentralSpin, config: &CceConfig) -> Result<Prepared> {
    let central = CentralSystem::new(cs.clone())?;
    let bath = bath.filter_r_bath(config.r_bath);
    let graph = build_graph(&bath, config.r_dipole)?;
    let set = enumerate_clusters(&graph, config.order)?;
    Ok(Prepared { bath, central, set })
}

fn expansion_with_assignment(
    prep: &Prepared,
    config: &CceConfig,
    assignment: &BathStateAssignment,
) -> Result<CoherenceCurve> {
    let (times, prepended) = working_times(&config.grid.times());
    let bath = &prep.bath;
    let central = &prep.central;

    let (base, contributions) = match config.formulation {
        Formulation::Conventional => {
            config.pulses.require_pi_only()?;
            // the empty-cluster contribution is the free-evolution phase
            let e0 = central.level_energy(0);
            let e1 = central.level_energy(1);
            let signed: f64 = PulseSequence::segments(&config.pulses)
                .iter()
                .enumerate()
                .map(|(k, &f)| if k % 2 == 0 { f } else { -f })
                .sum();
            let base: Vec<Complex64> = times
                .iter()
                .map(|&t| Complex64::from_polar(1.0, -(e0 - e1) * signed * t))
                .collect();
            let contributions: Vec<ClusterContribution> = prep
                .set
                .iter()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|cluster| -> Result<ClusterContribution> {
                    let h0 = conventional_cluster_hamiltonian(
                        cluster, bath, central, 0, assignment, &config.pt,
                    )?;
                    let h1 = conventional_cluster_hamiltonian(
                        cluster, bath, central, 1, assignment, &config.pt,
                    )?;
                    let rho = cluster_density(bath, cluster, assignment);
                    let evo = BranchEvolution::new(&h0, &h1, &config.pulses)?;
                    let curve = times
                        .iter()
                        .map(|&t| {
                            let (m0, m1) = evo.matrices(t);
                            trace_sandwich(&m0, &rho, &m1)
                        })
                        .collect();
                    Ok(ClusterContribution {
                        cluster: (*cluster).clone(),
                        curve,
                    })
                })
                .collect::<Result<_>>()?;
            (base, contributions)
        }
        Formulation::Generalized => {
            let rho_s = {
                let psi = central.superposition(config.qubit_phase);
                &psi * psi.adjoint()
            };
            let gcce_curve = |cluster: &[u32]| -> Result<Vec<Complex64>> {
                let h = gcce_cluster_hamiltonian(cluster, bath, central, assignment)?;
                let mut dims = vec![central.dim()];
                dims.extend(cluster.iter().map(|&i| bath.spin_type(i as usize).spin.multiplicity()));
                let space = ProductSpace::new(dims);
                let rho = rho_s.kronecker(&cluster_density(bath, cluster, assignment));
                cluster_coherence_gcce(&h, central, &space, &rho, &config.pulses, &times)
            };
            let base = gcce_curve(&[])?;
            let raw: Vec<(Vec<u32>, Vec<Complex64>)> = prep
                .set
                .iter()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|cluster| -> Result<(Vec<u32>, Vec<Complex64>)> {
                    Ok(((*cluster).clone(), gcce_curve(cluster)?))
                })
                .collect::<Result<_>>()?;
            // divide the physical curves by the base so the recursion runs
            // on base-free contributions
            let contributions = raw
                .into_iter()
                .map(|(cluster, curve)| {
                    let curve = curve
                        .iter()
                        .zip(&base)
                        .map(|(v, b)| if b.norm() < GUARD { C_ONE } else { v / b })
                        .collect();
                    ClusterContribution { cluster, curve }
                })
                .collect();
            (base, contributions)
        }
    };

    let curve = cce_expand(contributions, &prep.set, &base, &times);
    Ok(finalize(curve, prepended))
}

/// Runs the cluster expansion for a fully mixed bath: filter by r_bath,
/// build the neighbor graph, enumerate clusters, evaluate contributions in
/// parallel, and expand. Deterministic for fixed inputs.
pub fn run_cce(bath: &BathArray, cs: &CentralSpin, config: &CceConfig) -> Result<CoherenceCurve> {
    let prep = prepare(bath, cs, config)?;
    let assignment = BathStateAssignment::mixed(prep.bath.len());
    expansion_with_assignment(&prep, config, &assignment)
}

/// As `run_cce` but with explicit per-spin initial states (indexed against
/// the r_bath-filtered bath).
pub fn run_cce_with_assignment(
    bath: &BathArray,
    cs: &CentralSpin,
    config: &CceConfig,
    assignment: &BathStateAssignment,
) -> Result<CoherenceCurve> {
    let prep = prepare(bath, cs, config)?;
    if assignment.len() != prep.bath.len() {
        return Err(Error::DimensionMismatch {
            got: assignment.len(),
            expected: prep.bath.len(),
        });
    }
    expansion_with_assignment(&prep, config, assignment)
}

fn average_curves(curves: &[CoherenceCurve], weights: &[f64]) -> CoherenceCurve {
    let npts = curves[0].values.len();
    let mut values = vec![Complex64::new(0.0, 0.0); npts];
    let mut flagged = vec![false; npts];
    for (curve, &w) in curves.iter().zip(weights) {
        for p in 0..npts {
            values[p] += curve.values[p] * Complex64::new(w, 0.0);
            flagged[p] |= curve.flagged[p];
        }
    }
    CoherenceCurve {
        times: curves[0].times.clone(),
        values,
        flagged,
        normalization: C_ONE,
    }
}

/// Monte Carlo bath-state sampling: draws pure Zeeman product states of
/// the whole (filtered) bath, runs the expansion with the sampled state
/// fixing both the cluster initial states and the outside-spin averages,
/// and returns the sample mean. One independent seeded stream per sample
/// index makes the result reproducible and order-independent.
pub fn run_mc_sampling(
    bath: &BathArray,
    cs: &CentralSpin,
    config: &CceConfig,
    n_samples: usize,
    seed: u64,
) -> Result<CoherenceCurve> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".to_string()));
    }
    let prep = prepare(bath, cs, config)?;
    let n = prep.bath.len();
    let curves: Vec<CoherenceCurve> = (0..n_samples)
        .into_par_iter()
        .map(|sample| -> Result<CoherenceCurve> {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(sample as u64);
            let states: Vec<LocalState> = (0..n)
                .map(|i| {
                    let mult = prep.bath.spin_type(i).spin.multiplicity();
                    LocalState::Zeeman(rng.random_range(0..mult))
                })
                .collect();
            let assignment = BathStateAssignment::new(states, &prep.bath)?;
            expansion_with_assignment(&prep, config, &assignment)
        })
        .collect::<Result<_>>()?;
    let weights = vec![1.0 / n_samples as f64; n_samples];
    Ok(average_curves(&curves, &weights))
}

/// Exhaustive version of the bath-state average: enumerates every Zeeman
/// product state with its exact weight. Guarded against state-count
/// explosions; meant for small baths and verification.
pub fn run_exhaustive_sampling(
    bath: &BathArray,
    cs: &CentralSpin,
    config: &CceConfig,
) -> Result<CoherenceCurve> {
    const MAX_STATES: usize = 4096;
    let prep = prepare(bath, cs, config)?;
    let n = prep.bath.len();
    let mults: Vec<usize> = (0..n)
        .map(|i| prep.bath.spin_type(i).spin.multiplicity())
        .collect();
    let total: usize = mults.iter().product();
    if total > MAX_STATES {
        return Err(Error::DimensionGuard {
            dim: total,
            guard: MAX_STATES,
        });
    }
    let weight = 1.0 / total as f64;
    let states: Vec<Vec<usize>> = (0..total)
        .map(|mut code| {
            let mut state = Vec::with_capacity(n);
            for &m in &mults {
                state.push(code % m);
                code /= m;
            }
            state
        })
        .collect();
    let curves: Vec<CoherenceCurve> = states
        .par_iter()
        .map(|state| -> Result<CoherenceCurve> {
            let assignment = BathStateAssignment::new(
                state.iter().map(|&k| LocalState::Zeeman(k)).collect(),
                &prep.bath,
            )?;
            expansion_with_assignment(&prep, config, &assignment)
        })
        .collect::<Result<_>>()?;
    let weights = vec![weight; total];
    Ok(average_curves(&curves, &weights))
}

/// Overhauser-field autocorrelation by cluster expansion: within each
/// cluster C_AA(t) = Re Tr[rho B(t) B(0)] with B = sum_i A_zz,i Iz,i in the
/// Heisenberg picture under the cluster Hamiltonian of the configured
/// branch, combined additively with the recursive subtraction.
pub fn autocorrelation(bath: &BathArray, cs: &CentralSpin, config: &CceConfig) -> Result<AutocorrCurve> {
    let prep = prepare(bath, cs, config)?;
    let bath = &prep.bath;
    let central = &prep.central;
    let assignment = BathStateAssignment::mixed(bath.len());
    let times = config.grid.times();
    let alpha = config.autocorr_branch;

    let clusters: Vec<&Vec<u32>> = prep.set.iter().collect();
    let raw: Vec<(Vec<u32>, Vec<f64>)> = clusters
        .par_iter()
        .map(|cluster| -> Result<(Vec<u32>, Vec<f64>)> {
            let h = conventional_cluster_hamiltonian(
                cluster, bath, central, alpha, &assignment, &config.pt,
            )?;
            let space = bath_space(bath, cluster);
            let dim = space.total_dim();
            let mut b_op = CMatrix::zeros(dim, dim);
            for (slot, &iu) in cluster.iter().enumerate() {
                let i = iu as usize;
                let azz = bath.spins()[i]
                    .hyperfine
                    .as_ref()
                    .ok_or(Error::MissingHyperfine(i))?[(2, 2)]
                    * TWO_PI;
                let ops = spin_matrices(bath.spin_type(i).spin);
                b_op += embed(&ops.sz, &space, slot)?.scale(azz);
            }
            let rho = cluster_density(bath, cluster, &assignment);
            let eig = EigenBasis::new(&h.matrix)?;
            let curve = times
                .iter()
                .map(|&t| {
                    let u = eig.propagator(t);
                    let bt = u.adjoint() * &b_op * u;
                    (&rho * bt * &b_op).trace().re
                })
                .collect();
            Ok(((*cluster).clone(), curve))
        })
        .collect::<Result<_>>()?;

    // additive recursion, sizes ascending
    let mut sorted = raw;
    sorted.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    let index: HashMap<&[u32], usize> = sorted
        .iter()
        .enumerate()
        .map(|(k, c)| (c.0.as_slice(), k))
        .collect();
    let npts = times.len();
    let mut tilde: Vec<Vec<f64>> = Vec::with_capacity(sorted.len());
    let mut total = vec![0.0; npts];
    for (cluster, curve) in &sorted {
        let subs = subclusters(cluster, &prep.set).unwrap_or_default();
        let mut contribution = curve.clone();
        for sub in subs {
            if let Some(&k) = index.get(sub.as_slice()) {
                for p in 0..npts {
                    contribution[p] -= tilde[k][p];
                }
            }
        }
        for p in 0..npts {
            total[p] += contribution[p];
        }
        tilde.push(contribution);
    }
    Ok(AutocorrCurve {
        times,
        values: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::zfs_tensor;
    use crate::structure::{BathSpin, SpinType};
    use nalgebra::{Matrix3, Vector3};

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().fold(0.0f64, |a, c| a.max(c.norm()))
    }

    fn simple_bath(entries: &[([f64; 3], f64, f64, Matrix3<f64>)]) -> BathArray {
        let mut bath = BathArray::new(Vec::new());
        for (k, (pos, s, gamma, a)) in entries.iter().enumerate() {
            let ty = SpinType::new(&format!("t{k}"), *s, *gamma, 0.0, 1.0).unwrap();
            let species = bath.intern_type(&ty);
            bath.push(BathSpin {
                position: Vector3::new(pos[0], pos[1], pos[2]),
                species,
                hyperfine: Some(*a),
                quadrupole: None,
            });
        }
        bath
    }

    fn secular_a(azz: f64) -> Matrix3<f64> {
        let mut a = Matrix3::zeros();
        a[(2, 2)] = azz;
        a
    }

    fn pseudosecular_a(azz: f64, azx: f64) -> Matrix3<f64> {
        let mut a = secular_a(azz);
        a[(2, 0)] = azx;
        a[(0, 2)] = azx;
        a
    }

    fn central_spin_half(b: f64) -> CentralSpin {
        CentralSpin::with_scalar_gamma(0.5, Matrix3::zeros(), 12.0, Vector3::new(0.0, 0.0, b), (0, 1)).unwrap()
    }

    fn nv_central(b: f64) -> CentralSpin {
        CentralSpin::with_scalar_gamma(
            1.0,
            zfs_tensor(2.87e6, 0.0),
            crate::constants::ELECTRON_GYRO,
            Vector3::new(0.0, 0.0, b),
            (0, 1),
        )
        .unwrap()
    }

    fn default_config(formulation: Formulation, order: usize, seq: PulseSequence) -> CceConfig {
        CceConfig::new(
            formulation,
            order,
            1e6,
            1e6,
            seq,
            TimeGrid::new(0.0, 0.5, 41).unwrap(),
        )
    }

    #[test]
    fn pulse_sequence_structure() {
        let hahn = PulseSequence::hahn_echo();
        assert_eq!(hahn.segments(), vec![0.5, 0.5]);
        assert!(hahn.is_pi_only());

        let cpmg = PulseSequence::cpmg(2);
        assert_eq!(cpmg.segments(), vec![0.25, 0.5, 0.25]);

        assert!(PulseSequence::explicit(vec![
            Pulse { time: 0.5, axis: PulseAxis::X, angle: PI },
            Pulse { time: 0.25, axis: PulseAxis::X, angle: PI },
        ])
        .is_err());
    }

    #[test]
    fn fid_propagator_is_plain_exponential() {
        let cs = central_spin_half(100.0);
        let central = CentralSystem::new(cs).unwrap();
        let bath = simple_bath(&[([3.0, 0.0, 0.0], 0.5, 4.0, pseudosecular_a(20.0, 8.0))]);
        let assignment = BathStateAssignment::mixed(1);
        let pt = PerturbationOptions::default();
        let h0 = conventional_cluster_hamiltonian(&[0], &bath, &central, 0, &assignment, &pt).unwrap();
        let h1 = conventional_cluster_hamiltonian(&[0], &bath, &central, 1, &assignment, &pt).unwrap();
        let t = 0.37;
        let (u0, u1) = conventional_propagators(&h0, &h1, &PulseSequence::fid(), t).unwrap();
        let full0 = expm_hermitian(
            &(&h0.matrix + CMatrix::identity(2, 2).scale(h0.energy_offset)),
            t,
        )
        .unwrap();
        let full1 = expm_hermitian(
            &(&h1.matrix + CMatrix::identity(2, 2).scale(h1.energy_offset)),
            t,
        )
        .unwrap();
        assert!(max_abs(&(u0 - full0)) < 1e-9);
        assert!(max_abs(&(u1 - full1)) < 1e-9);
    }

    #[test]
    fn hahn_identical_branches_refocus_exactly() {
        // H0 == H1 makes U0 == U1 and L identically one
        let cs = central_spin_half(75.0);
        let central = CentralSystem::new(cs).unwrap();
        let bath = simple_bath(&[([2.0, 0.0, 0.0], 0.5, 4.0, Matrix3::zeros())]);
        let assignment = BathStateAssignment::mixed(1);
        let pt = PerturbationOptions::default();
        let h0 = conventional_cluster_hamiltonian(&[0], &bath, &central, 0, &assignment, &pt).unwrap();
        let h1 = conventional_cluster_hamiltonian(&[0], &bath, &central, 1, &assignment, &pt).unwrap();
        assert!(max_abs(&(&h0.matrix - &h1.matrix)) < 1e-12);
        let rho = CMatrix::identity(2, 2).scale(0.5);
        let curve = cluster_coherence_conventional(
            &h0,
            &h1,
            &rho,
            &PulseSequence::hahn_echo(),
            &[0.0, 0.1, 0.5, 2.0],
        )
        .unwrap();
        for v in curve {
            assert!((v - C_ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn cpmg_two_pulse_matches_direct_product_oracle() {
        let cs = central_spin_half(220.0);
        let central = CentralSystem::new(cs).unwrap();
        let bath = simple_bath(&[([2.5, 1.0, 0.0], 1.0, -3.0, pseudosecular_a(31.0, 14.0))]);
        let assignment = BathStateAssignment::mixed(1);
        let pt = PerturbationOptions::default();
        let h0 = conventional_cluster_hamiltonian(&[0], &bath, &central, 0, &assignment, &pt).unwrap();
        let h1 = conventional_cluster_hamiltonian(&[0], &bath, &central, 1, &assignment, &pt).unwrap();
        let t = 0.21;
        let (u0, u1) = conventional_propagators(&h0, &h1, &PulseSequence::cpmg(2), t).unwrap();

        // independent sequential product of four full exponentials
        let full = |h: &EffectiveHamiltonian, tau: f64| {
            expm_hermitian(
                &(&h.matrix + CMatrix::identity(3, 3).scale(h.energy_offset)),
                tau,
            )
            .unwrap()
        };
        let want0 = full(&h0, t / 4.0) * full(&h1, t / 2.0) * full(&h0, t / 4.0);
        let want1 = full(&h1, t / 4.0) * full(&h0, t / 2.0) * full(&h1, t / 4.0);
        assert!(max_abs(&(u0 - want0)) < 1e-9);
        assert!(max_abs(&(u1 - want1)) < 1e-9);
    }

    #[test]
    fn secular_spin_hahn_echo_refocuses() {
        // purely static secular coupling: the echo removes all dephasing
        let cs = central_spin_half(90.0);
        let bath = simple_bath(&[([3.0, 0.0, 0.0], 0.5, 4.0, secular_a(42.0))]);
        let config = default_config(Formulation::Conventional, 1, PulseSequence::hahn_echo());
        let curve = run_cce(&bath, &cs, &config).unwrap();
        for v in &curve.values {
            assert!((v.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fid_single_spin_matches_two_level_average() {
        // mixed spin-1/2 with secular A: L = mean of the two conditional
        // phase factors exp(-+i (w1 - w0) m t)
        let b = 130.0;
        let gamma_i = 4.0;
        let azz = 37.0;
        let cs = central_spin_half(b);
        let bath = simple_bath(&[([2.0, 0.0, 0.0], 0.5, gamma_i, secular_a(azz))]);
        let config = default_config(Formulation::Conventional, 1, PulseSequence::fid());
        let curve = run_cce(&bath, &cs, &config).unwrap();
        let central = CentralSystem::new(central_spin_half(b)).unwrap();
        let e0 = central.level_energy(0);
        let e1 = central.level_energy(1);
        // branch fields on the nucleus: w_alpha(m) = (gamma_i B +- A/2) m
        let wa = gamma_i * b - azz * TWO_PI / 2.0;
        let wb = gamma_i * b + azz * TWO_PI / 2.0;
        for (k, &t) in curve.times.iter().enumerate() {
            let up = Complex64::from_polar(1.0, -(wa - wb) * 0.5 * t);
            let dn = Complex64::from_polar(1.0, (wa - wb) * 0.5 * t);
            let free = Complex64::from_polar(1.0, -(e0 - e1) * t);
            let want = free * (up + dn) * Complex64::new(0.5, 0.0);
            assert!(
                (curve.values[k] - want).norm() < 1e-9,
                "t = {t}: {} vs {want}",
                curve.values[k]
            );
        }
    }

    #[test]
    fn gcce_two_pi_rotation_and_commuting_reduction() {
        let cs = central_spin_half(150.0);
        let central = CentralSystem::new(cs).unwrap();
        let bath = simple_bath(&[([2.0, 0.0, 0.0], 0.5, 4.0, secular_a(25.0))]);
        let assignment = BathStateAssignment::mixed(1);
        let h = gcce_cluster_hamiltonian(&[0], &bath, &central, &assignment).unwrap();
        let space = ProductSpace::new(vec![2, 2]);

        // a 2 pi rotation is -identity on the qubit subspace: propagator
        // equals minus the FID one here (full 2-dim central space)
        let t = 0.3;
        let two_pi_seq = PulseSequence::uniform(1, PulseAxis::X, 2.0 * PI);
        let u = gcce_propagator(&h, &central, &space, &two_pi_seq, t).unwrap();
        let fid = gcce_propagator(&h, &central, &space, &PulseSequence::fid(), t).unwrap();
        assert!(max_abs(&(u + fid)) < 1e-9);

        // N = 1 uniform pi pulse is exactly the Hahn-echo product
        let hahn = PulseSequence::hahn_echo();
        let u_hahn = gcce_propagator(&h, &central, &space, &hahn, t).unwrap();
        let sigma = central.qubit_sigma(PulseAxis::X);
        let flip = embed(
            &expm_hermitian(&sigma.scale(PI / 2.0), 1.0).unwrap(),
            &space,
            0,
        )
        .unwrap();
        let eig = EigenBasis::new(&h).unwrap();
        let want = eig.propagator(t / 2.0) * flip * eig.propagator(t / 2.0);
        assert!(max_abs(&(u_hahn - want)) < 1e-12);
    }

    #[test]
    fn expansion_factorizes_noninteracting_pair() {
        // two spins with no mutual coupling: pair contribution is one, so
        // order 2 equals order 1
        let cs = central_spin_half(200.0);
        let bath = simple_bath(&[
            ([500.0, 0.0, 0.0], 0.5, 4.0, pseudosecular_a(20.0, 9.0)),
            ([0.0, 500.0, 0.0], 0.5, 4.0, pseudosecular_a(-13.0, 5.0)),
        ]);
        // far apart -> J ~ 0; r_dipole still links them into a pair cluster
        let mut config = default_config(Formulation::Conventional, 2, PulseSequence::hahn_echo());
        config.r_dipole = 1e4;
        let cce2 = run_cce(&bath, &cs, &config).unwrap();
        config.order = 1;
        let cce1 = run_cce(&bath, &cs, &config).unwrap();
        for (a, b) in cce2.values.iter().zip(&cce1.values) {
            assert!((a - b).norm() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn expansion_is_permutation_invariant() {
        let contributions = |shuffle: bool| {
            let g = crate::clusters::NeighborGraph::from_edges(3, &[(0, 1), (1, 2)]);
            let set = enumerate_clusters(&g, 2).unwrap();
            let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.1).collect();
            let mut contribs: Vec<ClusterContribution> = set
                .iter()
                .enumerate()
                .map(|(k, c)| ClusterContribution {
                    cluster: c.clone(),
                    curve: times
                        .iter()
                        .map(|&t| Complex64::from_polar(1.0 / (1.0 + 0.3 * k as f64 * t), 0.2 * t * k as f64))
                        .collect(),
                })
                .collect();
            if shuffle {
                contribs.reverse();
                contribs.swap(0, 2);
            }
            let base = vec![C_ONE; times.len()];
            cce_expand(contribs, &set, &base, &times)
        };
        let a = contributions(false);
        let b = contributions(true);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn single_cluster_set_returns_cluster_curve() {
        let cs = central_spin_half(120.0);
        let bath = simple_bath(&[([2.0, 0.0, 0.0], 0.5, 4.0, pseudosecular_a(30.0, 12.0))]);
        let config = default_config(Formulation::Conventional, 1, PulseSequence::hahn_echo());
        let curve = run_cce(&bath, &cs, &config).unwrap();

        let central = CentralSystem::new(central_spin_half(120.0)).unwrap();
        let assignment = BathStateAssignment::mixed(1);
        let pt = PerturbationOptions::default();
        let h0 = conventional_cluster_hamiltonian(&[0], &bath, &central, 0, &assignment, &pt).unwrap();
        let h1 = conventional_cluster_hamiltonian(&[0], &bath, &central, 1, &assignment, &pt).unwrap();
        let rho = CMatrix::identity(2, 2).scale(0.5);
        let direct = cluster_coherence_conventional(&h0, &h1, &rho, &config.pulses, &curve.times).unwrap();
        for (a, b) in curve.values.iter().zip(&direct) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_bath_is_unit_magnitude() {
        let cs = nv_central(500.0);
        let bath = BathArray::new(Vec::new());
        let echo = default_config(Formulation::Conventional, 2, PulseSequence::hahn_echo());
        let curve = run_cce(&bath, &cs, &echo).unwrap();
        for v in &curve.values {
            assert!((v - C_ONE).norm() < 1e-12);
        }
        let fid = default_config(Formulation::Generalized, 2, PulseSequence::fid());
        let curve = run_cce(&bath, &cs, &fid).unwrap();
        for v in &curve.values {
            assert!((v.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mc_single_spin_exhaustive_equals_mixed() {
        let cs = central_spin_half(160.0);
        let bath = simple_bath(&[([2.2, 0.0, 0.0], 0.5, 4.0, pseudosecular_a(24.0, 10.0))]);
        let config = default_config(Formulation::Conventional, 1, PulseSequence::hahn_echo());
        let mixed = run_cce(&bath, &cs, &config).unwrap();
        let sampled = run_exhaustive_sampling(&bath, &cs, &config).unwrap();
        for (a, b) in mixed.values.iter().zip(&sampled.values) {
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn mc_sampling_is_deterministic_per_seed() {
        let cs = central_spin_half(140.0);
        let bath = simple_bath(&[
            ([2.0, 0.0, 0.0], 0.5, 4.0, pseudosecular_a(21.0, 7.0)),
            ([0.0, 2.5, 0.0], 0.5, 4.0, pseudosecular_a(-11.0, 4.0)),
        ]);
        let config = default_config(Formulation::Conventional, 2, PulseSequence::hahn_echo());
        let a = run_mc_sampling(&bath, &cs, &config, 3, 77).unwrap();
        let b = run_mc_sampling(&bath, &cs, &config, 3, 77).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn autocorr_zero_couplings_and_initial_value() {
        let cs = nv_central(500.0);
        let bath = simple_bath(&[
            ([2.0, 0.0, 0.0], 0.5, 4.0, secular_a(0.0)),
            ([0.0, 3.0, 0.0], 1.0, -2.0, secular_a(0.0)),
        ]);
        let config = default_config(Formulation::Conventional, 2, PulseSequence::fid());
        let flat = autocorrelation(&bath, &cs, &config).unwrap();
        assert!(flat.values.iter().all(|v| v.abs() < 1e-12));

        let bath = simple_bath(&[
            ([2.0, 0.0, 0.0], 0.5, 4.0, secular_a(31.0)),
            ([0.0, 3.0, 0.0], 1.0, -2.0, secular_a(-17.0)),
            ([0.0, 0.0, 2.5], 1.5, 1.0, secular_a(8.0)),
        ]);
        let curve = autocorrelation(&bath, &cs, &config).unwrap();
        let want_khz2 = 31.0f64.powi(2) * 0.5 * 1.5 / 3.0
            + 17.0f64.powi(2) * 1.0 * 2.0 / 3.0
            + 8.0f64.powi(2) * 1.5 * 2.5 / 3.0;
        let got = curve.values_khz2()[0];
        assert!(
            ((got - want_khz2) / want_khz2).abs() < 1e-9,
            "{got} vs {want_khz2}"
        );
    }

    #[test]
    fn autocorr_conserved_observable_is_constant() {
        // secular-only Hamiltonian commutes with Iz
        let cs = central_spin_half(110.0);
        let bath = simple_bath(&[([2.0, 0.0, 0.0], 0.5, 4.0, secular_a(26.0))]);
        let config = default_config(Formulation::Conventional, 1, PulseSequence::fid());
        let curve = autocorrelation(&bath, &cs, &config).unwrap();
        let first = curve.values[0];
        for v in &curve.values {
            assert!((v - first).abs() < 1e-9 * first.abs());
        }
    }
}
