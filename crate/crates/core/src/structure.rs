//! Crystal unit cells, stochastic isotope placement within a cutoff sphere,
//! the shipped isotope table, and the XYZ / Gaussian-cube structure parsers.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::constants::BOHR_TO_ANGSTROM;
use crate::error::{Error, Result};
use crate::spinops::Spin;

/// One spin-active isotope: name, spin, gyromagnetic ratio in
/// rad ms^-1 G^-1, electric quadrupole moment in millibarn, and natural
/// abundance as a fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinType {
    pub name: String,
    pub spin: Spin,
    pub gamma: f64,
    pub quadrupole_moment: f64,
    pub abundance: f64,
}

impl SpinType {
    pub fn new(name: &str, s: f64, gamma: f64, quadrupole_moment: f64, abundance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&abundance) {
            return Err(Error::InvalidArgument(format!(
                "abundance {abundance} outside [0, 1] for {name}"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            spin: Spin::new(s)?,
            gamma,
            quadrupole_moment,
            abundance,
        })
    }
}

/// Spin-active isotopes of the elements shipped with the artifact.
///
/// Gyromagnetic ratios in 1e7 rad s^-1 T^-1 (numerically rad ms^-1 G^-1),
/// abundances as IUPAC representative fractions, quadrupole moments in mb.
const ISOTOPE_TABLE: &[(&str, &[(&str, u32, f64, f64, f64)])] = &[
    ("H", &[("1H", 1, 26.752_218_7, 0.0, 0.999_885), ("2H", 2, 4.106_627_91, 2.86, 0.000_115)]),
    ("C", &[("13C", 1, 6.728_284, 0.0, 0.0107)]),
    ("N", &[("14N", 2, 1.933_779_2, 20.44, 0.996_36), ("15N", 1, -2.712_618_04, 0.0, 0.003_64)]),
    ("O", &[("17O", 5, -3.628_08, -25.58, 0.000_38)]),
    ("Si", &[("29Si", 1, -5.319_0, 0.0, 0.046_85)]),
    ("P", &[("31P", 1, 10.839_4, 0.0, 1.0)]),
];

/// All spin-active isotopes of an element, with natural abundances.
pub fn isotope_lookup(element: &str) -> Result<Vec<SpinType>> {
    let entry = ISOTOPE_TABLE
        .iter()
        .find(|(el, _)| *el == element)
        .ok_or_else(|| Error::UnknownElement(element.to_string()))?;
    Ok(entry
        .1
        .iter()
        .map(|&(name, twice, gamma, q, ab)| SpinType {
            name: name.to_string(),
            spin: Spin::from_twice(twice),
            gamma,
            quadrupole_moment: q,
            abundance: ab,
        })
        .collect())
}

/// Looks a single isotope up by name, e.g. "13C".
pub fn isotope_by_name(name: &str) -> Result<SpinType> {
    for (_, isotopes) in ISOTOPE_TABLE {
        if let Some(&(n, twice, gamma, q, ab)) = isotopes.iter().find(|(n, ..)| *n == name) {
            return Ok(SpinType {
                name: n.to_string(),
                spin: Spin::from_twice(twice),
                gamma,
                quadrupole_moment: q,
                abundance: ab,
            });
        }
    }
    Err(Error::UnknownElement(name.to_string()))
}

/// A crystal unit cell: lattice vectors as rows (angstrom) and sites as
/// (element, fractional coordinates).
#[derive(Debug, Clone)]
pub struct UnitCell {
    lattice: Matrix3<f64>,
    sites: Vec<(String, Vector3<f64>)>,
}

impl UnitCell {
    pub fn new(lattice: Matrix3<f64>, sites: Vec<(String, Vector3<f64>)>) -> Result<Self> {
        if lattice.determinant().abs() < 1e-12 {
            return Err(Error::SingularLattice);
        }
        for (el, f) in &sites {
            if f.iter().any(|&x| !(0.0..1.0).contains(&x)) {
                return Err(Error::InvalidArgument(format!(
                    "fractional coordinate of {el} outside [0, 1): {f:?}"
                )));
            }
        }
        Ok(Self { lattice, sites })
    }

    pub fn lattice(&self) -> &Matrix3<f64> {
        &self.lattice
    }

    pub fn sites(&self) -> &[(String, Vector3<f64>)] {
        &self.sites
    }

    /// Fractional -> Cartesian (rows of the lattice matrix are a1, a2, a3).
    pub fn cartesian(&self, frac: &Vector3<f64>) -> Vector3<f64> {
        self.lattice.transpose() * frac
    }

    /// Conventional diamond cell (a = 3.567 A, 8 carbon sites).
    pub fn diamond() -> Self {
        let a = 3.567;
        let fcc = [
            [0.0, 0.0, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
            [0.5, 0.5, 0.0],
        ];
        let mut sites = Vec::new();
        for f in fcc {
            sites.push(("C".to_string(), Vector3::new(f[0], f[1], f[2])));
            sites.push((
                "C".to_string(),
                Vector3::new(f[0] + 0.25, f[1] + 0.25, f[2] + 0.25),
            ));
        }
        Self::new(Matrix3::from_diagonal(&Vector3::new(a, a, a)), sites).unwrap()
    }

    /// Conventional silicon cell (a = 5.431 A, 8 silicon sites).
    pub fn silicon() -> Self {
        let a = 5.431;
        let diamond = Self::diamond();
        let sites = diamond
            .sites
            .iter()
            .map(|(_, f)| ("Si".to_string(), *f))
            .collect();
        Self::new(Matrix3::from_diagonal(&Vector3::new(a, a, a)), sites).unwrap()
    }
}

/// One bath spin: position relative to the central spin (angstrom), its
/// species, and optional interaction tensors in kHz.
#[derive(Debug, Clone)]
pub struct BathSpin {
    pub position: Vector3<f64>,
    pub species: usize,
    pub hyperfine: Option<Matrix3<f64>>,
    pub quadrupole: Option<Matrix3<f64>>,
}

/// The generated spin bath: a species table plus the spins referencing it.
#[derive(Debug, Clone, Default)]
pub struct BathArray {
    types: Vec<SpinType>,
    spins: Vec<BathSpin>,
    pub seed: Option<u64>,
}

impl BathArray {
    pub fn new(types: Vec<SpinType>) -> Self {
        Self {
            types,
            spins: Vec::new(),
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn types(&self) -> &[SpinType] {
        &self.types
    }

    pub fn spins(&self) -> &[BathSpin] {
        &self.spins
    }

    pub fn spins_mut(&mut self) -> &mut [BathSpin] {
        &mut self.spins
    }

    pub fn spin_type(&self, i: usize) -> &SpinType {
        &self.types[self.spins[i].species]
    }

    pub fn position(&self, i: usize) -> &Vector3<f64> {
        &self.spins[i].position
    }

    /// Registers `ty` if absent, returning its species index.
    pub fn intern_type(&mut self, ty: &SpinType) -> usize {
        if let Some(k) = self.types.iter().position(|t| t == ty) {
            k
        } else {
            self.types.push(ty.clone());
            self.types.len() - 1
        }
    }

    pub fn push(&mut self, spin: BathSpin) {
        debug_assert!(spin.species < self.types.len());
        self.spins.push(spin);
    }

    /// Retains exactly the spins with |position| <= r_bath, stable order.
    pub fn filter_r_bath(&self, r_bath: f64) -> BathArray {
        let spins = self
            .spins
            .iter()
            .filter(|s| s.position.norm() <= r_bath)
            .cloned()
            .collect();
        BathArray {
            types: self.types.clone(),
            spins,
            seed: self.seed,
        }
    }
}

/// Stochastically occupies every lattice site within `radius` of `center`
/// (fractional coordinates) with at most one isotope, drawn independently
/// per site with probability equal to its natural abundance. Positions are
/// returned relative to the center. Deterministic for a fixed seed: sites
/// are visited in canonical lattice order (n1, n2, n3, site index) and each
/// visited site consumes exactly one uniform draw.
///
/// Sites closer than `exclusion_radius` to the center are skipped (the
/// defect occupies them).
pub fn generate_bath(
    cell: &UnitCell,
    isotopes: &[(String, Vec<SpinType>)],
    radius: f64,
    center: &Vector3<f64>,
    seed: u64,
    exclusion_radius: f64,
) -> Result<BathArray> {
    if radius <= 0.0 {
        return Err(Error::InvalidArgument(format!("radius {radius} must be > 0")));
    }
    for (el, _) in cell.sites() {
        if !isotopes.iter().any(|(name, _)| name == el) {
            return Err(Error::UnknownElement(el.clone()));
        }
    }
    let inv = cell
        .lattice()
        .transpose()
        .try_inverse()
        .ok_or(Error::SingularLattice)?;

    // conservative per-axis translation range covering the sphere
    let mut half_range = [0i64; 3];
    for k in 0..3 {
        let row = inv.row(k);
        let extent = radius * row.norm();
        half_range[k] = extent.ceil() as i64 + 1;
    }
    let center_cart = cell.cartesian(center);

    let mut bath = BathArray::new(Vec::new());
    bath.seed = Some(seed);
    // species indices follow table order so the array layout is reproducible
    let mut species_of: Vec<Vec<usize>> = Vec::new();
    for (_, types) in isotopes {
        let mut idx = Vec::new();
        for ty in types {
            idx.push(bath.intern_type(ty));
        }
        species_of.push(idx);
    }

    let site_table_idx: Vec<usize> = cell
        .sites()
        .iter()
        .map(|(el, _)| isotopes.iter().position(|(name, _)| name == el).unwrap())
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let c0 = center.map(|x| x.round() as i64);
    for n1 in (c0[0] - half_range[0])..=(c0[0] + half_range[0]) {
        for n2 in (c0[1] - half_range[1])..=(c0[1] + half_range[1]) {
            for n3 in (c0[2] - half_range[2])..=(c0[2] + half_range[2]) {
                let shift = Vector3::new(n1 as f64, n2 as f64, n3 as f64);
                for (site, (_, frac)) in cell.sites().iter().enumerate() {
                    let pos = cell.cartesian(&(shift + frac)) - center_cart;
                    let dist = pos.norm();
                    if dist > radius || dist < exclusion_radius {
                        continue;
                    }
                    let u: f64 = rng.random();
                    let table_idx = site_table_idx[site];
                    let mut cum = 0.0;
                    for (k, ty) in isotopes[table_idx].1.iter().enumerate() {
                        cum += ty.abundance;
                        if u < cum {
                            bath.push(BathSpin {
                                position: pos,
                                species: species_of[table_idx][k],
                                hyperfine: None,
                                quadrupole: None,
                            });
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(bath)
}

/// Parses standard XYZ text: count line, comment line, then
/// `element x y z` rows. Whitespace-tolerant, scientific notation allowed.
pub fn parse_xyz(text: &str) -> Result<Vec<(String, Vector3<f64>)>> {
    let mut lines = text.lines().enumerate();
    let (_, count_line) = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty input".into() })?;
    let count: usize = count_line.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("invalid atom count '{}'", count_line.trim()),
    })?;
    lines.next(); // comment line

    let mut atoms = Vec::with_capacity(count);
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if atoms.len() == count {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("row {} exceeds declared atom count {count}", atoms.len() + 1),
            });
        }
        let mut tok = line.split_whitespace();
        let element = tok
            .next()
            .ok_or(Error::Parse { line: line_no, msg: "missing element".into() })?
            .to_string();
        let mut coord = [0.0; 3];
        for c in coord.iter_mut() {
            let t = tok.next().ok_or(Error::Parse {
                line: line_no,
                msg: "expected 3 coordinates".into(),
            })?;
            *c = t.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("non-numeric coordinate '{t}'"),
            })?;
        }
        atoms.push((element, Vector3::new(coord[0], coord[1], coord[2])));
    }
    if atoms.len() != count {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("declared {count} atoms, found {}", atoms.len()),
        });
    }
    Ok(atoms)
}

/// A scalar field on a voxel grid (Gaussian cube contents), lengths in
/// angstrom. Values are stored x-major with z fastest.
#[derive(Debug, Clone)]
pub struct VolumetricData {
    pub origin: Vector3<f64>,
    pub voxel_vectors: [Vector3<f64>; 3],
    pub npoints: [usize; 3],
    pub atoms: Vec<(i32, Vector3<f64>)>,
    pub values: Vec<f64>,
}

impl VolumetricData {
    /// |v1 . (v2 x v3)|
    pub fn voxel_volume(&self) -> f64 {
        self.voxel_vectors[0]
            .dot(&self.voxel_vectors[1].cross(&self.voxel_vectors[2]))
            .abs()
    }

    pub fn grid_point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin
            + self.voxel_vectors[0] * i as f64
            + self.voxel_vectors[1] * j as f64
            + self.voxel_vectors[2] * k as f64
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.npoints[1] + j) * self.npoints[2] + k]
    }

    /// Midpoint-rule integral of the field.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.voxel_volume()
    }
}

/// Parses Gaussian cube text. Positive voxel counts mean lengths are in
/// Bohr (converted to angstrom here); negative counts mean angstrom, per
/// the Gaussian convention. A negative atom count marks an orbital cube
/// whose extra DSET line is consumed and ignored.
pub fn parse_cube(text: &str) -> Result<VolumetricData> {
    fn line_at<'a>(lines: &[&'a str], idx: usize) -> Result<&'a str> {
        lines.get(idx).copied().ok_or(Error::Parse {
            line: idx + 1,
            msg: "unexpected end of file".into(),
        })
    }
    fn field<T: std::str::FromStr>(
        tok: &mut std::str::SplitWhitespace,
        line: usize,
        what: &str,
    ) -> Result<T> {
        let t = tok.next().ok_or(Error::Parse {
            line,
            msg: format!("missing {what}"),
        })?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid {what} '{t}'"),
        })
    }

    let lines: Vec<&str> = text.lines().collect();
    let mut cursor = 2; // two comment lines

    let header = line_at(&lines, cursor)?;
    let mut tok = header.split_whitespace();
    let natoms_raw: i64 = field(&mut tok, cursor + 1, "atom count")?;
    let mut origin = Vector3::zeros();
    for k in 0..3 {
        origin[k] = field(&mut tok, cursor + 1, "origin component")?;
    }
    cursor += 1;

    let mut npoints = [0usize; 3];
    let mut voxel_vectors = [Vector3::zeros(); 3];
    let mut raw_counts = [0i64; 3];
    for axis in 0..3 {
        let line = line_at(&lines, cursor)?;
        let mut tok = line.split_whitespace();
        raw_counts[axis] = field(&mut tok, cursor + 1, "voxel count")?;
        npoints[axis] = raw_counts[axis].unsigned_abs() as usize;
        if npoints[axis] == 0 {
            return Err(Error::Parse {
                line: cursor + 1,
                msg: "zero voxel count".into(),
            });
        }
        for k in 0..3 {
            voxel_vectors[axis][k] = field(&mut tok, cursor + 1, "voxel vector component")?;
        }
        cursor += 1;
    }
    // the first count's sign selects the length unit for the whole file
    let unit = if raw_counts[0] > 0 { BOHR_TO_ANGSTROM } else { 1.0 };
    origin *= unit;
    for v in voxel_vectors.iter_mut() {
        *v *= unit;
    }

    let natoms = natoms_raw.unsigned_abs() as usize;
    let mut atoms = Vec::with_capacity(natoms);
    for _ in 0..natoms {
        let line = line_at(&lines, cursor)?;
        let mut tok = line.split_whitespace();
        let z: i32 = field(&mut tok, cursor + 1, "atomic number")?;
        let _charge: f64 = field(&mut tok, cursor + 1, "nuclear charge")?;
        let mut pos = Vector3::zeros();
        for k in 0..3 {
            pos[k] = field(&mut tok, cursor + 1, "atom coordinate")?;
        }
        atoms.push((z, pos * unit));
        cursor += 1;
    }
    if natoms_raw < 0 {
        line_at(&lines, cursor)?; // DSET ids
        cursor += 1;
    }

    let expected = npoints[0] * npoints[1] * npoints[2];
    let mut values = Vec::with_capacity(expected);
    for (idx, raw) in lines[cursor..].iter().enumerate() {
        for t in raw.split_whitespace() {
            let v: f64 = t.parse().map_err(|_| Error::Parse {
                line: cursor + idx + 1,
                msg: format!("invalid grid value '{t}'"),
            })?;
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(Error::Parse {
            line: lines.len(),
            msg: format!("expected {expected} grid values, found {}", values.len()),
        });
    }
    let data = VolumetricData {
        origin,
        voxel_vectors,
        npoints,
        atoms,
        values,
    };
    if data.voxel_volume() <= 0.0 {
        return Err(Error::Parse { line: 4, msg: "voxel volume is zero".into() });
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{HBAR_SI, NUCLEAR_MAGNETON_SI};

    fn natural_table(elements: &[&str]) -> Vec<(String, Vec<SpinType>)> {
        elements
            .iter()
            .map(|el| (el.to_string(), isotope_lookup(el).unwrap()))
            .collect()
    }

    #[test]
    fn isotope_lookup_basics() {
        let c = isotope_lookup("C").unwrap();
        assert!(c.iter().any(|t| t.name == "13C" && t.spin == Spin::from_twice(1)));
        let si = isotope_lookup("Si").unwrap();
        let si29 = si.iter().find(|t| t.name == "29Si").unwrap();
        assert!((si29.abundance - 0.047).abs() < 2e-3);
        let h = isotope_lookup("H").unwrap();
        assert_eq!(h[0].name, "1H");
        assert!(isotope_lookup("Xx").is_err());
    }

    /// Cross-check the table against an independent route: gyromagnetic
    /// ratios recomputed from published magnetic moments (in nuclear
    /// magnetons) via gamma = mu / (I hbar).
    #[test]
    fn gyromagnetic_ratios_match_magnetic_moments() {
        let moments: &[(&str, f64)] = &[
            ("1H", 2.792_847_34),
            ("2H", 0.857_438_228),
            ("13C", 0.702_411_8),
            ("14N", 0.403_761_00),
            ("15N", -0.283_188_84),
            ("17O", -1.893_79),
            ("29Si", -0.555_29),
            ("31P", 1.131_60),
        ];
        for &(name, mu) in moments {
            let ty = isotope_by_name(name).unwrap();
            let gamma_si = mu * NUCLEAR_MAGNETON_SI / (ty.spin.value() * HBAR_SI);
            let gamma_table = ty.gamma * 1e7; // rad/ms/G -> rad/s/T
            let rel = ((gamma_si - gamma_table) / gamma_si).abs();
            assert!(rel < 2e-3, "{name}: {gamma_si:.4e} vs {gamma_table:.4e}");
        }
    }

    #[test]
    fn abundances_within_unity() {
        for (el, _) in ISOTOPE_TABLE {
            let total: f64 = isotope_lookup(el).unwrap().iter().map(|t| t.abundance).sum();
            assert!(total <= 1.0 + 1e-12, "{el}: {total}");
        }
    }

    #[test]
    fn zero_abundance_gives_empty_bath() {
        let cell = UnitCell::diamond();
        let mut table = natural_table(&["C"]);
        table[0].1[0].abundance = 0.0;
        let bath = generate_bath(&cell, &table, 10.0, &Vector3::zeros(), 7, 0.0).unwrap();
        assert!(bath.is_empty());
    }

    #[test]
    fn full_abundance_matches_lattice_enumeration() {
        // simple cubic, a = 2 A, radius 3 A: brute-force count of lattice
        // points with |n|*2 <= 3 around the origin.
        let a = 2.0;
        let cell = UnitCell::new(
            Matrix3::from_diagonal(&Vector3::new(a, a, a)),
            vec![("C".to_string(), Vector3::zeros())],
        )
        .unwrap();
        let mut table = natural_table(&["C"]);
        table[0].1[0].abundance = 1.0;
        let bath = generate_bath(&cell, &table, 3.0, &Vector3::zeros(), 1, 0.0).unwrap();

        let mut expected = 0;
        for n1 in -2i64..=2 {
            for n2 in -2i64..=2 {
                for n3 in -2i64..=2 {
                    let r = Vector3::new(n1 as f64, n2 as f64, n3 as f64) * a;
                    if r.norm() <= 3.0 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(bath.len(), expected);
    }

    #[test]
    fn natural_abundance_counts_are_binomial() {
        let cell = UnitCell::diamond();
        let table = natural_table(&["C"]);
        // count candidate sites with abundance 1
        let mut full = table.clone();
        full[0].1[0].abundance = 1.0;
        let radius = 40.0;
        let nsites = generate_bath(&cell, &full, radius, &Vector3::zeros(), 0, 0.0)
            .unwrap()
            .len();

        let p = 0.0107;
        let mean = nsites as f64 * p;
        let sd = (nsites as f64 * p * (1.0 - p)).sqrt();
        let mut total = 0usize;
        let seeds = 20;
        for seed in 0..seeds {
            total += generate_bath(&cell, &table, radius, &Vector3::zeros(), seed, 0.0)
                .unwrap()
                .len();
        }
        let avg = total as f64 / seeds as f64;
        let tol = 4.0 * sd / (seeds as f64).sqrt();
        assert!((avg - mean).abs() < tol, "avg {avg}, mean {mean}, tol {tol}");
    }

    #[test]
    fn determinism_and_translation_consistency() {
        let cell = UnitCell::diamond();
        let table = natural_table(&["C"]);
        let a = generate_bath(&cell, &table, 25.0, &Vector3::zeros(), 42, 0.1).unwrap();
        let b = generate_bath(&cell, &table, 25.0, &Vector3::zeros(), 42, 0.1).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.spins().iter().zip(b.spins()) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.species, y.species);
        }

        // shifting cell origin and center together preserves relative
        // geometry of the candidate set (abundance 1 to make it exhaustive)
        let mut full = table.clone();
        full[0].1[0].abundance = 1.0;
        let shift = Vector3::new(0.25, 0.25, 0.25);
        let shifted_sites: Vec<_> = cell
            .sites()
            .iter()
            .map(|(el, f)| (el.clone(), (f + shift).map(|x| x.rem_euclid(1.0))))
            .collect();
        let cell2 = UnitCell::new(*cell.lattice(), shifted_sites).unwrap();
        let center2 = shift;
        let a = generate_bath(&cell, &full, 8.0, &Vector3::zeros(), 1, 0.0).unwrap();
        let b = generate_bath(&cell2, &full, 8.0, &center2, 1, 0.0).unwrap();
        let mut pa: Vec<_> = a.spins().iter().map(|s| s.position).collect();
        let mut pb: Vec<_> = b.spins().iter().map(|s| s.position).collect();
        let key = |v: &Vector3<f64>| {
            (
                (v.x * 1e6).round() as i64,
                (v.y * 1e6).round() as i64,
                (v.z * 1e6).round() as i64,
            )
        };
        pa.sort_by_key(key);
        pb.sort_by_key(key);
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).norm() < 1e-9, "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn filter_r_bath_matches_distance_scan() {
        let cell = UnitCell::diamond();
        let table = natural_table(&["C"]);
        let bath = generate_bath(&cell, &table, 30.0, &Vector3::zeros(), 3, 0.1).unwrap();
        let r = 17.0;
        let filtered = bath.filter_r_bath(r);
        let expected = bath.spins().iter().filter(|s| s.position.norm() <= r).count();
        assert_eq!(filtered.len(), expected);
        assert_eq!(bath.filter_r_bath(1000.0).len(), bath.len());
        assert_eq!(bath.filter_r_bath(1e-12).len(), 0);
    }

    #[test]
    fn xyz_roundtrip_and_errors() {
        let atoms = parse_xyz("1\n\nC 0 0 0\n").unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].0, "C");

        let sci = parse_xyz("2\ncomment\nC 1.5e-1 0 2E+1\nSi -3.25 4e0 0\n").unwrap();
        assert_eq!(sci[0].1.x, 1.5e-1);
        assert_eq!(sci[0].1.z, 2e1);
        assert_eq!(sci[1].1.y, 4.0);

        assert!(matches!(parse_xyz("3\n\nC 0 0 0\n"), Err(Error::Parse { .. })));
        let err = parse_xyz("1\n\nC 0 zz 0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cube_uniform_grid_integral() {
        // negative counts -> angstrom units, unit voxel volume
        let text = "\
comment
comment
0 0.0 0.0 0.0
-2 1.0 0.0 0.0
-2 0.0 1.0 0.0
-2 0.0 0.0 1.0
1 1 1 1 1 1 1 1
";
        let data = parse_cube(text).unwrap();
        assert_eq!(data.npoints, [2, 2, 2]);
        assert!((data.integrate() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn cube_bohr_conversion_and_atoms() {
        let text = "\
spin density
made up
1 0.0 0.0 1.0
2 1.0 0.0 0.0
2 0.0 1.0 0.0
2 0.0 0.0 1.0
6 6.0 0.0 0.0 1.0
0.0 0.1 0.2 0.3 0.4 0.5 0.6 0.7
";
        let data = parse_cube(text).unwrap();
        assert!((data.voxel_vectors[0].x - BOHR_TO_ANGSTROM).abs() < 1e-12);
        assert!((data.origin.z - BOHR_TO_ANGSTROM).abs() < 1e-12);
        assert_eq!(data.atoms.len(), 1);
        assert!((data.atoms[0].1.z - BOHR_TO_ANGSTROM).abs() < 1e-12);
        assert!((data.value(1, 1, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cube_value_count_mismatch() {
        let text = "\
c
c
0 0 0 0
-2 1 0 0
-2 0 1 0
-2 0 0 1
1 1 1
";
        assert!(matches!(parse_cube(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn cube_gaussian_integral() {
        // normalized isotropic Gaussian, sigma = 1 A, on a fine grid
        let n = 40usize;
        let h = 0.25;
        let half = n as f64 * h / 2.0;
        let mut text = format!(
            "c\nc\n0 {x} {x} {x}\n-{n} {h} 0 0\n-{n} 0 {h} 0\n-{n} 0 0 {h}\n",
            x = -half + h / 2.0,
        );
        let norm = 1.0 / (2.0 * std::f64::consts::PI).powf(1.5);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = -half + h / 2.0 + i as f64 * h;
                    let y = -half + h / 2.0 + j as f64 * h;
                    let z = -half + h / 2.0 + k as f64 * h;
                    let v = norm * (-0.5 * (x * x + y * y + z * z)).exp();
                    text.push_str(&format!("{v:.17e}\n"));
                }
            }
        }
        let data = parse_cube(&text).unwrap();
        assert!((data.integrate() - 1.0).abs() < 1e-3, "{}", data.integrate());
    }
}
