//! Rhombic chain geometry, emitter descriptors and the single-particle Hamiltonian.
//!
//! Each unit cell `n` holds three sites A, B, C. A_n hops to B_n, C_n, B_{n+1}
//! and C_{n+1}; the A_n-C_n link carries the gauge phase, so the element in row
//! A_n, column C_n is `-J e^{-i alpha}`. Energies are in units of J, hbar = 1.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub const MIN_CELLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
    C,
}

impl Sublattice {
    pub const ALL: [Sublattice; 3] = [Sublattice::A, Sublattice::B, Sublattice::C];

    pub fn code(self) -> usize {
        match self {
            Sublattice::A => 0,
            Sublattice::B => 1,
            Sublattice::C => 2,
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        match code {
            0 => Some(Sublattice::A),
            1 => Some(Sublattice::B),
            2 => Some(Sublattice::C),
            _ => None,
        }
    }
}

impl fmt::Display for Sublattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sublattice::A => "A",
            Sublattice::B => "B",
            Sublattice::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteIndex {
    pub cell: usize,
    pub sublattice: Sublattice,
}

impl SiteIndex {
    pub fn new(cell: usize, sublattice: Sublattice) -> Self {
        Self { cell, sublattice }
    }

    pub fn flat(self) -> usize {
        3 * self.cell + self.sublattice.code()
    }

    pub fn from_flat(k: usize) -> Self {
        Self {
            cell: k / 3,
            sublattice: Sublattice::from_code(k % 3).expect("k % 3 < 3"),
        }
    }
}

impl fmt::Display for SiteIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.sublattice, self.cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub n_cells: usize,
    #[serde(default = "unit_hopping")]
    pub hopping: f64,
    #[serde(default = "pi_flux")]
    pub gauge_phase: f64,
    #[serde(default)]
    pub nonlinearity: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

fn unit_hopping() -> f64 {
    1.0
}

fn pi_flux() -> f64 {
    PI
}

impl LatticeSpec {
    /// Open chain at pi flux with J = 1.
    pub fn caged(n_cells: usize, nonlinearity: f64) -> Self {
        Self {
            n_cells,
            hopping: 1.0,
            gauge_phase: PI,
            nonlinearity,
            boundary: Boundary::Open,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn n_sites(&self) -> usize {
        3 * self.n_cells
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_cells < MIN_CELLS {
            return Err(ModelError::invalid(
                "lattice.n_cells",
                format!("n_cells below minimum ({} < {MIN_CELLS})", self.n_cells),
            ));
        }
        if !(self.hopping.is_finite() && self.hopping > 0.0) {
            return Err(ModelError::invalid(
                "lattice.hopping",
                format!("hopping must be finite and positive, got {}", self.hopping),
            ));
        }
        if !(self.gauge_phase.is_finite() && (0.0..TAU).contains(&self.gauge_phase)) {
            return Err(ModelError::invalid(
                "lattice.gauge_phase",
                format!("gauge_phase must lie in [0, 2pi), got {}", self.gauge_phase),
            ));
        }
        if !(self.nonlinearity.is_finite() && self.nonlinearity >= 0.0) {
            return Err(ModelError::invalid(
                "lattice.nonlinearity",
                format!("nonlinearity must be finite and >= 0, got {}", self.nonlinearity),
            ));
        }
        Ok(())
    }

    /// True when the gauge phase equals pi to within 1e-12.
    pub fn is_pi_flux(&self) -> bool {
        (self.gauge_phase - PI).abs() < 1e-12
    }
}

/// One directed hopping term `value * a^dag_row a_col` (the conjugate term is implied).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
}

/// Hopping links of the chain. `twist` multiplies the wrap-around links of a
/// periodic chain by `e^{-i twist}` and is zero for the physical lattice.
pub fn links_with_twist(spec: &LatticeSpec, twist: f64) -> Vec<Link> {
    let n = spec.n_cells;
    let j = spec.hopping;
    let minus_j = Complex64::new(-j, 0.0);
    let gauge = Complex64::from_polar(-j, -spec.gauge_phase);
    let mut links = Vec::with_capacity(4 * n);
    for cell in 0..n {
        let a = SiteIndex::new(cell, Sublattice::A).flat();
        let b = SiteIndex::new(cell, Sublattice::B).flat();
        let c = SiteIndex::new(cell, Sublattice::C).flat();
        links.push(Link { row: a, col: b, value: minus_j });
        links.push(Link { row: a, col: c, value: gauge });
        let wraps = cell + 1 == n;
        if wraps && spec.boundary == Boundary::Open {
            continue;
        }
        let next = (cell + 1) % n;
        let phase = if wraps {
            Complex64::from_polar(1.0, -twist)
        } else {
            Complex64::new(1.0, 0.0)
        };
        links.push(Link {
            row: a,
            col: SiteIndex::new(next, Sublattice::B).flat(),
            value: minus_j * phase,
        });
        links.push(Link {
            row: a,
            col: SiteIndex::new(next, Sublattice::C).flat(),
            value: minus_j * phase,
        });
    }
    links
}

pub fn links(spec: &LatticeSpec) -> Vec<Link> {
    links_with_twist(spec, 0.0)
}

/// Per-site adjacency built from the link list: for every site, the list of
/// `(target, value)` with `value = <target|H0|site>`.
pub(crate) fn adjacency(n_sites: usize, links: &[Link]) -> Vec<Vec<(usize, Complex64)>> {
    let mut adj = vec![Vec::new(); n_sites];
    for l in links {
        adj[l.col].push((l.row, l.value));
        adj[l.row].push((l.col, l.value.conj()));
    }
    adj
}

/// Dense 3N x 3N single-particle Hamiltonian.
pub fn single_particle_hamiltonian(spec: &LatticeSpec) -> DMatrix<Complex64> {
    let d = spec.n_sites();
    let mut h = DMatrix::<Complex64>::zeros(d, d);
    for l in links(spec) {
        h[(l.row, l.col)] += l.value;
        h[(l.col, l.row)] += l.value.conj();
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Leg {
    pub cell: usize,
    #[serde(default = "default_sublattice")]
    pub sublattice: Sublattice,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

fn default_sublattice() -> Sublattice {
    Sublattice::A
}

impl Leg {
    pub fn site(&self) -> SiteIndex {
        SiteIndex::new(self.cell, self.sublattice)
    }

    /// Coupling constant `g e^{i phi}` multiplying `sigma_- a^dag_site`.
    pub fn coupling(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub id: usize,
    pub frequency: f64,
    pub legs: Vec<Leg>,
}

impl EmitterSpec {
    pub fn small(id: usize, frequency: f64, site: SiteIndex, g: f64) -> Self {
        Self {
            id,
            frequency,
            legs: vec![Leg {
                cell: site.cell,
                sublattice: site.sublattice,
                amplitude: g,
                phase: 0.0,
            }],
        }
    }

    pub fn is_giant(&self) -> bool {
        self.legs.len() > 1
    }

    /// Mean cell of the legs; the reference point for left/right partitions.
    pub fn center(&self) -> f64 {
        self.legs.iter().map(|l| l.cell as f64).sum::<f64>() / self.legs.len() as f64
    }
}

/// A lattice together with its emitters, checked against every invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    lattice: LatticeSpec,
    emitters: Vec<EmitterSpec>,
}

impl Model {
    pub fn new(lattice: LatticeSpec, emitters: Vec<EmitterSpec>) -> Result<Self, ModelError> {
        validate_spec(&lattice, &emitters)?;
        Ok(Self { lattice, emitters })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn emitters(&self) -> &[EmitterSpec] {
        &self.emitters
    }

    pub fn emitter(&self, id: usize) -> Option<&EmitterSpec> {
        self.emitters.iter().find(|e| e.id == id)
    }
}

pub fn validate_spec(lattice: &LatticeSpec, emitters: &[EmitterSpec]) -> Result<(), ModelError> {
    lattice.validate()?;
    for (k, e) in emitters.iter().enumerate() {
        let field = |name: &str| format!("emitters[{k}].{name}");
        if emitters[..k].iter().any(|o| o.id == e.id) {
            return Err(ModelError::invalid(field("id"), format!("duplicate emitter id {}", e.id)));
        }
        if !e.frequency.is_finite() {
            return Err(ModelError::invalid(field("frequency"), "frequency must be finite"));
        }
        if e.legs.is_empty() {
            return Err(ModelError::invalid(field("legs"), "emitter needs at least one leg"));
        }
        for (q, leg) in e.legs.iter().enumerate() {
            let lf = field(&format!("legs[{q}]"));
            if leg.cell >= lattice.n_cells {
                return Err(ModelError::invalid(
                    format!("{lf}.cell"),
                    format!("leg site out of range (cell {} >= {})", leg.cell, lattice.n_cells),
                ));
            }
            if !(leg.amplitude.is_finite() && leg.amplitude >= 0.0) {
                return Err(ModelError::invalid(
                    format!("{lf}.amplitude"),
                    "amplitude must be finite and >= 0",
                ));
            }
            if !leg.phase.is_finite() {
                return Err(ModelError::invalid(format!("{lf}.phase"), "phase must be finite"));
            }
            if e.legs[..q].iter().any(|o| o.site() == leg.site()) {
                return Err(ModelError::invalid(
                    format!("{lf}.cell"),
                    format!("duplicate leg site {}", leg.site()),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn eigenvalues(h: &DMatrix<Complex64>) -> Vec<f64> {
        let mut e: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    fn distance_to_set(x: f64, set: &[f64]) -> f64 {
        set.iter().map(|s| (x - s).abs()).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn flat_roundtrip() {
        for k in 0..30 {
            assert_eq!(SiteIndex::from_flat(k).flat(), k);
        }
        assert_eq!(SiteIndex::new(2, Sublattice::C).flat(), 8);
    }

    #[test]
    fn minimal_lattice_is_valid() {
        assert!(Model::new(LatticeSpec::caged(3, 4.0), vec![]).is_ok());
    }

    #[test]
    fn too_few_cells() {
        let err = Model::new(LatticeSpec::caged(2, 4.0), vec![]).unwrap_err();
        assert!(err.to_string().contains("n_cells below minimum"), "{err}");
        assert!(err.to_string().contains("lattice.n_cells"));
    }

    #[test]
    fn leg_out_of_range() {
        let e = EmitterSpec::small(0, 4.0, SiteIndex::new(5, Sublattice::A), 0.02);
        let err = Model::new(LatticeSpec::caged(5, 4.0), vec![e]).unwrap_err();
        assert!(err.to_string().contains("leg site out of range"), "{err}");
    }

    #[test]
    fn duplicate_leg_rejected() {
        let mut e = EmitterSpec::small(0, 4.0, SiteIndex::new(1, Sublattice::A), 0.02);
        e.legs.push(e.legs[0].clone());
        assert!(Model::new(LatticeSpec::caged(5, 4.0), vec![e]).is_err());
    }

    #[test]
    fn gauge_link_element() {
        let spec = LatticeSpec {
            gauge_phase: 0.7,
            ..LatticeSpec::caged(4, 0.0)
        };
        let h = single_particle_hamiltonian(&spec);
        let a1 = SiteIndex::new(1, Sublattice::A).flat();
        let c1 = SiteIndex::new(1, Sublattice::C).flat();
        let b2 = SiteIndex::new(2, Sublattice::B).flat();
        let expect = Complex64::from_polar(-1.0, -0.7);
        assert!((h[(a1, c1)] - expect).norm() < 1e-15);
        assert!((h[(c1, a1)] - expect.conj()).norm() < 1e-15);
        assert_eq!(h[(a1, b2)], Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn hermitian_exactly() {
        let h = single_particle_hamiltonian(&LatticeSpec::caged(7, 0.0));
        assert_eq!(h.adjoint(), h);
    }

    #[test]
    fn open_boundary_drops_wrap() {
        let spec = LatticeSpec::caged(4, 0.0);
        let h = single_particle_hamiltonian(&spec);
        let a3 = SiteIndex::new(3, Sublattice::A).flat();
        assert_eq!(h[(a3, 1)], Complex64::new(0.0, 0.0));
        let hp = single_particle_hamiltonian(&spec.with_boundary(Boundary::Periodic));
        assert_eq!(hp[(a3, 1)], Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn periodic_pi_flux_is_flat() {
        for n in [3, 4, 30, 100] {
            let spec = LatticeSpec::caged(n, 0.0).with_boundary(Boundary::Periodic);
            for e in eigenvalues(&single_particle_hamiltonian(&spec)) {
                assert!(distance_to_set(e, &[-2.0, 0.0, 2.0]) < 1e-10, "N={n}: {e}");
            }
        }
    }

    // The open chain ends in a truncated cage: 3N-2 levels stay on {0, +-2J}
    // and the last two sit at +-sqrt(2) J.
    #[test]
    fn open_pi_flux_has_truncated_cage() {
        for n in [3, 30, 100] {
            let e = eigenvalues(&single_particle_hamiltonian(&LatticeSpec::caged(n, 0.0)));
            let off: Vec<f64> = e
                .iter()
                .copied()
                .filter(|&x| distance_to_set(x, &[-2.0, 0.0, 2.0]) > 1e-10)
                .collect();
            assert_eq!(off.len(), 2, "N={n}");
            assert!((off[0] + 2f64.sqrt()).abs() < 1e-10);
            assert!((off[1] - 2f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_flux_is_dispersive() {
        let spec = LatticeSpec {
            gauge_phase: 0.0,
            ..LatticeSpec::caged(30, 0.0)
        }
        .with_boundary(Boundary::Periodic);
        let e = eigenvalues(&single_particle_hamiltonian(&spec));
        let away = e
            .iter()
            .filter(|&&x| distance_to_set(x, &[-2.0, 0.0, 2.0]) > 1e-3)
            .count();
        assert!(away > 10);
        // dispersive bands reach +-2 sqrt(2) J at K = 0
        assert!((e[0] + 8f64.sqrt()).abs() < 1e-10);
        assert!((e[e.len() - 1] - 8f64.sqrt()).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gauge_covariance(alpha in 0.0..TAU, n in 3usize..9) {
            let spec = LatticeSpec { gauge_phase: alpha, ..LatticeSpec::caged(n, 0.0) };
            let shifted = LatticeSpec { gauge_phase: alpha + TAU, ..spec.clone() };
            let d = single_particle_hamiltonian(&spec) - single_particle_hamiltonian(&shifted);
            prop_assert!(d.iter().all(|z| z.norm() < 1e-12));
        }

        #[test]
        fn pi_flux_levels(n in 3usize..=200, periodic in any::<bool>()) {
            let b = if periodic { Boundary::Periodic } else { Boundary::Open };
            let e = eigenvalues(&single_particle_hamiltonian(&LatticeSpec::caged(n, 0.0).with_boundary(b)));
            let bad = e.iter().filter(|&&x| distance_to_set(x, &[-2.0, 0.0, 2.0]) > 1e-10).count();
            prop_assert_eq!(bad, if periodic { 0 } else { 2 });
        }
    }
}
