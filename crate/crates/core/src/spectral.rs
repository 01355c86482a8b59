//! Momentum sectors of the two-photon problem, doublon bands and compact
//! localized single-photon modes.
//!
//! A sector is built by projecting the two-photon Hamiltonian of a small
//! periodic ring onto joint-translation eigenvectors. The ring has
//! `L = 2 r_max + 1` cells and its wrap-around links carry a twist
//! `theta = -K L / 2`, which makes every momentum K commensurate. Bound states
//! whose relative extent fits in the ring are reproduced exactly.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SectorBasis;
use crate::error::{Error, ModelError, Result};
use crate::hamiltonian::{assemble_parts, SparseHermitian};
use crate::lattice::{
    links_with_twist, single_particle_hamiltonian, Boundary, LatticeSpec, SiteIndex, Sublattice,
};

pub const DEFAULT_R_MAX: usize = 4;
pub const DEFAULT_K_POINTS: usize = 256;

const DEGENERACY_TOL: f64 = 1e-9;
const FLAT_TOL: f64 = 1e-8;

/// Relative configuration: one photon at (cell 0, `first`), one at (cell `r`, `second`).
/// For `r == 0` the pair is unordered and stored with `first <= second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelativeState {
    pub r: usize,
    pub first: Sublattice,
    pub second: Sublattice,
}

impl RelativeState {
    pub fn new(r: usize, first: Sublattice, second: Sublattice) -> Self {
        if r == 0 && second < first {
            Self { r, first: second, second: first }
        } else {
            Self { r, first, second }
        }
    }

    pub fn all(r_max: usize) -> Vec<RelativeState> {
        let mut out = Vec::new();
        for r in 0..=r_max {
            for a in Sublattice::ALL {
                for b in Sublattice::ALL {
                    if r > 0 || a <= b {
                        out.push(RelativeState { r, first: a, second: b });
                    }
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.first, self.second)
    }
}

/// Site on the infinite chain (cells may be negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainSite {
    pub cell: i64,
    pub sublattice: Sublattice,
}

impl ChainSite {
    pub fn new(cell: i64, sublattice: Sublattice) -> Self {
        Self { cell, sublattice }
    }
}

/// Two-photon Hamiltonian of a ring projected onto one momentum.
#[derive(Debug, Clone)]
pub struct BlochSector {
    k: f64,
    ring_cells: usize,
    ring: SectorBasis,
    /// Orthonormal Bloch vectors in the ring basis, one per column.
    bloch: DMatrix<Complex64>,
    reduced: DMatrix<Complex64>,
    energies: Vec<f64>,
    /// Eigenvectors in the Bloch basis, columns ordered like `energies`.
    vectors: DMatrix<Complex64>,
}

fn ring_lattice(lattice: &LatticeSpec, cells: usize) -> LatticeSpec {
    LatticeSpec {
        n_cells: cells,
        boundary: Boundary::Periodic,
        ..lattice.clone()
    }
}

/// Momentum-K sector for the infinite chain, exact for bound states with relative
/// distance below `r_max`.
pub fn bloch_sector(lattice: &LatticeSpec, k: f64, r_max: usize) -> Result<BlochSector> {
    if r_max < 2 {
        return Err(ModelError::invalid("r_max", format!("r_max must be >= 2, got {r_max}")).into());
    }
    let cells = 2 * r_max + 1;
    let ring = ring_lattice(lattice, cells);
    ring.validate()?;
    project(&ring, k, -k * cells as f64 / 2.0)
}

/// Sector `K = 2 pi m / N` of a physical periodic chain (no twist).
pub fn periodic_chain_sector(lattice: &LatticeSpec, m: usize) -> Result<BlochSector> {
    lattice.validate()?;
    if lattice.boundary != Boundary::Periodic {
        return Err(ModelError::invalid("lattice.boundary", "periodic chain required").into());
    }
    let k = 2.0 * PI * (m % lattice.n_cells) as f64 / lattice.n_cells as f64;
    project(lattice, k, 0.0)
}

/// Translation by one cell of the pair `(i, j)`; returns the new unordered pair
/// and the number of photons that crossed the twisted link.
fn translate(i: usize, j: usize, n_sites: usize) -> (usize, usize, u32) {
    let shift = |x: usize| {
        let y = x + 3;
        if y >= n_sites {
            (y - n_sites, 1)
        } else {
            (y, 0)
        }
    };
    let (a, wa) = shift(i);
    let (b, wb) = shift(j);
    (a.min(b), a.max(b), wa + wb)
}

fn project(ring: &LatticeSpec, k: f64, twist: f64) -> Result<BlochSector> {
    let cells = ring.n_cells;
    let basis = SectorBasis::photons_only(cells);
    let s = basis.n_sites();
    let h: SparseHermitian = assemble_parts(&basis, &links_with_twist(ring, twist), ring.nonlinearity, &[]);

    // orbit representatives: smallest index in each translation orbit
    let dim = basis.dim();
    let mut columns: Vec<Vec<Complex64>> = Vec::new();
    for idx in 0..dim {
        let (i, j) = basis.pair_of(idx);
        let (mut a, mut b) = (i, j);
        let mut is_rep = true;
        for _ in 1..cells {
            let (na, nb, _) = translate(a, b, s);
            a = na;
            b = nb;
            if basis.pair_index(a, b) < idx {
                is_rep = false;
                break;
            }
        }
        if !is_rep {
            continue;
        }
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        let (mut a, mut b) = (i, j);
        let mut phase = Complex64::new(1.0, 0.0);
        for step in 0..cells {
            v[basis.pair_index(a, b)] += Complex64::from_polar(1.0, k * step as f64) * phase;
            let (na, nb, wraps) = translate(a, b, s);
            phase *= Complex64::from_polar(1.0, twist * wraps as f64);
            a = na;
            b = nb;
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|z| *z /= norm);
            columns.push(v);
        }
    }
    let n = columns.len();
    let bloch = DMatrix::from_fn(dim, n, |r, c| columns[c][r]);
    let mut hv = vec![Complex64::new(0.0, 0.0); dim];
    let mut reduced = DMatrix::<Complex64>::zeros(n, n);
    for (c, col) in columns.iter().enumerate() {
        h.apply_into(col, &mut hv);
        for (r, row) in columns.iter().enumerate() {
            reduced[(r, c)] = row.iter().zip(&hv).map(|(x, y)| x.conj() * y).sum();
        }
    }
    let reduced = (&reduced + reduced.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(reduced.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let energies = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(BlochSector {
        k,
        ring_cells: cells,
        ring: basis,
        bloch,
        reduced,
        energies,
        vectors,
    })
}

impl BlochSector {
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Largest relative distance represented exactly.
    pub fn r_max(&self) -> usize {
        self.ring_cells / 2
    }

    /// Energies sorted descending; band `l` (1-based) is `energies()[l - 1]`.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn n_bands(&self) -> usize {
        self.energies.len()
    }

    pub fn reduced_matrix(&self) -> &DMatrix<Complex64> {
        &self.reduced
    }

    pub fn energy(&self, band: usize) -> Result<f64> {
        self.check_band(band)?;
        Ok(self.energies[band - 1])
    }

    fn check_band(&self, band: usize) -> Result<()> {
        if band == 0 || band > self.energies.len() {
            return Err(Error::BandOutOfRange {
                band,
                count: self.energies.len(),
            });
        }
        Ok(())
    }

    /// Smallest distance from `E_l` to any other level at this K.
    pub fn gap(&self, band: usize) -> Result<f64> {
        self.check_band(band)?;
        let e = self.energies[band - 1];
        Ok(self
            .energies
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != band - 1)
            .map(|(_, x)| (x - e).abs())
            .fold(f64::INFINITY, f64::min))
    }

    /// Relative wavefunction of band `l` without the degeneracy check.
    pub fn wavefunction_unchecked(&self, band: usize) -> Result<DoublonWavefunction> {
        self.check_band(band)?;
        let amp = &self.bloch * self.vectors.column(band - 1);
        let scale = (self.ring_cells as f64).sqrt();
        let mut entries: Vec<(RelativeState, Complex64)> = RelativeState::all(self.r_max())
            .into_iter()
            .map(|st| {
                let i = SiteIndex::new(0, st.first).flat();
                let j = SiteIndex::new(st.r, st.second).flat();
                let z = amp[self.ring.pair_index_unordered(i, j)];
                let psi = z * scale * Complex64::from_polar(1.0, -self.k * st.r as f64 / 2.0);
                (st, psi)
            })
            .collect();
        fix_phase(&mut entries);
        Ok(DoublonWavefunction {
            k: self.k,
            band,
            energy: self.energies[band - 1],
            entries,
        })
    }

    /// Relative wavefunction of band `l`, rejecting degenerate levels.
    pub fn wavefunction(&self, band: usize) -> Result<DoublonWavefunction> {
        let gap = self.gap(band)?;
        if gap < DEGENERACY_TOL {
            return Err(Error::Degenerate { band, k: self.k, gap });
        }
        self.wavefunction_unchecked(band)
    }
}

/// `psi(0, AA)` real positive when it is non-negligible, otherwise the first
/// largest-magnitude entry.
fn fix_phase(entries: &mut [(RelativeState, Complex64)]) {
    let max = entries.iter().map(|e| e.1.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    let aa = RelativeState::new(0, Sublattice::A, Sublattice::A);
    let pivot = entries
        .iter()
        .find(|e| e.0 == aa && e.1.norm() > 1e-8 * max)
        .or_else(|| entries.iter().find(|e| e.1.norm() > max * (1.0 - 1e-12)))
        .map(|e| e.1)
        .expect("nonzero entry exists");
    let rot = pivot.conj() / pivot.norm();
    for e in entries.iter_mut() {
        e.1 *= rot;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublonWavefunction {
    pub k: f64,
    pub band: usize,
    pub energy: f64,
    pub entries: Vec<(RelativeState, Complex64)>,
}

impl DoublonWavefunction {
    pub fn get(&self, r: usize, first: Sublattice, second: Sublattice) -> Complex64 {
        let key = RelativeState::new(r, first, second);
        self.entries
            .iter()
            .find(|e| e.0 == key)
            .map(|e| e.1)
            .unwrap_or_default()
    }

    pub fn r_max(&self) -> usize {
        self.entries.iter().map(|e| e.0.r).max().unwrap_or(0)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().map(|e| e.1.norm_sqr()).sum()
    }

    /// `P(r) = sum_mu |psi(r, mu)|^2` for r = 0..=r_max.
    pub fn relative_profile(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.r_max() + 1];
        for (st, z) in &self.entries {
            p[st.r] += z.norm_sqr();
        }
        p
    }

    /// Bloch amplitude `e^{iK x_c} psi(r, mu)` of the pair on the infinite chain.
    pub fn amplitude(&self, p: ChainSite, q: ChainSite) -> Complex64 {
        let (lo, hi) = if (p.cell, p.sublattice) <= (q.cell, q.sublattice) { (p, q) } else { (q, p) };
        let r = (hi.cell - lo.cell) as usize;
        if r > self.r_max() {
            return Complex64::new(0.0, 0.0);
        }
        let xc = (lo.cell + hi.cell) as f64 / 2.0;
        Complex64::from_polar(1.0, self.k * xc) * self.get(r, lo.sublattice, hi.sublattice)
    }

    /// CSV rows `K,l,r,tau1,tau2,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "K,l,r,tau1,tau2,re,im")?;
        }
        for (st, z) in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.k, self.band, st.r, st.first, st.second, z.re, z.im
            )?;
        }
        Ok(())
    }
}

/// Uniform grid `K_j = -pi + 2 pi j / n`, j = 0..n.
pub fn uniform_k_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStructure {
    pub k_grid: Vec<f64>,
    /// `energies[l - 1][q]` is `E_l(K_q)`.
    pub energies: Vec<Vec<f64>>,
    pub flat: Vec<bool>,
    pub r_max: usize,
}

pub fn band_structure(lattice: &LatticeSpec, k_grid: &[f64], r_max: usize) -> Result<BandStructure> {
    let per_k: Vec<Vec<f64>> = k_grid
        .par_iter()
        .map(|&k| bloch_sector(lattice, k, r_max).map(|s| s.energies))
        .collect::<Result<_>>()?;
    let n_bands = per_k.first().map_or(0, |e| e.len());
    let energies: Vec<Vec<f64>> = (0..n_bands)
        .map(|l| per_k.iter().map(|e| e[l]).collect())
        .collect();
    let flat = energies.iter().map(|band| is_flat(band)).collect();
    Ok(BandStructure {
        k_grid: k_grid.to_vec(),
        energies,
        flat,
        r_max,
    })
}

fn is_flat(band: &[f64]) -> bool {
    let max = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = band.iter().copied().fold(f64::INFINITY, f64::min);
    max - min < FLAT_TOL
}

impl BandStructure {
    pub fn n_bands(&self) -> usize {
        self.energies.len()
    }

    pub fn band(&self, l: usize) -> &[f64] {
        &self.energies[l - 1]
    }

    /// Columns `K,E1,...,EL`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let head: Vec<String> = (1..=self.n_bands()).map(|l| format!("E{l}")).collect();
        writeln!(w, "K,{}", head.join(","))?;
        for (q, k) in self.k_grid.iter().enumerate() {
            let row: Vec<String> = self.energies.iter().map(|b| b[q].to_string()).collect();
            writeln!(w, "{k},{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn band_energy(lattice: &LatticeSpec, band: usize, k: f64, r_max: usize) -> Result<f64> {
    bloch_sector(lattice, k, r_max)?.energy(band)
}

fn band_is_flat(lattice: &LatticeSpec, band: usize, r_max: usize) -> Result<bool> {
    let samples = (0..17)
        .map(|q| band_energy(lattice, band, PI * q as f64 / 16.0, r_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(is_flat(&samples))
}

/// Signed group velocity `dE_l/dK` by central differences, checked against a
/// halved step.
pub fn group_velocity(lattice: &LatticeSpec, band: usize, k: f64, r_max: usize) -> Result<f64> {
    if band_is_flat(lattice, band, r_max)? {
        return Err(Error::FlatBand { band, k });
    }
    let diff = |h: f64| -> Result<f64> {
        Ok((band_energy(lattice, band, k + h, r_max)? - band_energy(lattice, band, k - h, r_max)?) / (2.0 * h))
    };
    let h = 1e-4;
    let (v1, v2) = (diff(h)?, diff(h / 2.0)?);
    if (v1 - v2).abs() >= 1e-6 {
        return Err(Error::VelocityNotConverged { k, v1, v2 });
    }
    Ok((4.0 * v2 - v1) / 3.0)
}

/// Momentum `K_r` in [0, pi] with `E_l(K_r) = target`.
pub fn resonance_momentum(lattice: &LatticeSpec, band: usize, target: f64, r_max: usize) -> Result<f64> {
    let n = 128;
    let ks: Vec<f64> = (0..=n).map(|q| PI * q as f64 / n as f64).collect();
    let es = ks
        .par_iter()
        .map(|&k| band_energy(lattice, band, k, r_max))
        .collect::<Result<Vec<_>>>()?;
    let bracket = (0..n).find(|&q| (es[q] - target) * (es[q + 1] - target) <= 0.0);
    let Some(q) = bracket else {
        return Err(Error::OffResonant {
            band,
            target,
            min: es.iter().copied().fold(f64::INFINITY, f64::min),
            max: es.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    };
    let (mut lo, mut hi) = (ks[q], ks[q + 1]);
    let mut f_lo = es[q] - target;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = band_energy(lattice, band, mid, r_max)? - target;
        if f.abs() < 1e-13 || hi - lo < 1e-15 {
            return Ok(mid);
        }
        if (f < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClsLabel {
    #[serde(rename = "+2")]
    Plus2,
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "-2")]
    Minus2,
}

impl ClsLabel {
    pub const ALL: [ClsLabel; 3] = [ClsLabel::Plus2, ClsLabel::Zero, ClsLabel::Minus2];

    /// Mode energy in units of the hopping J.
    pub fn energy(self, hopping: f64) -> f64 {
        match self {
            ClsLabel::Plus2 => 2.0 * hopping,
            ClsLabel::Zero => 0.0,
            ClsLabel::Minus2 => -2.0 * hopping,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ClsLabel::Plus2 => "+2",
            ClsLabel::Zero => "0",
            ClsLabel::Minus2 => "-2",
        }
    }
}

/// Cage sites relative to the mode's cell: A_0, B_0, C_0, B_1, C_1.
pub const CAGE: [(usize, Sublattice); 5] = [
    (0, Sublattice::A),
    (0, Sublattice::B),
    (0, Sublattice::C),
    (1, Sublattice::B),
    (1, Sublattice::C),
];

/// Mode shapes on the cage, indexed like `ClsLabel::ALL`; amplitudes follow `CAGE`.
pub fn cage_shapes(lattice: &LatticeSpec) -> Result<[[Complex64; 5]; 3]> {
    if !lattice.is_pi_flux() {
        return Err(Error::NotCaged(lattice.gauge_phase));
    }
    let j = lattice.hopping;
    // the cage sits in cell 1 of a three-cell ring; A_0 and A_2 are its only outside neighbours
    let helper = LatticeSpec {
        n_cells: 3,
        boundary: Boundary::Periodic,
        ..lattice.clone()
    };
    let h0 = single_particle_hamiltonian(&helper);
    let inside: Vec<usize> = CAGE.iter().map(|&(dc, t)| SiteIndex::new(1 + dc, t).flat()).collect();
    let outside: Vec<usize> = (0..helper.n_sites()).filter(|x| !inside.contains(x)).collect();
    let hpp = DMatrix::from_fn(5, 5, |r, c| h0[(inside[r], inside[c])]);
    let hqp = DMatrix::from_fn(outside.len(), 5, |r, c| h0[(outside[r], inside[c])]);
    // states leaking out of the cage are pushed away from the flat levels
    let penalty = hqp.adjoint() * &hqp * Complex64::new(10.0 / j, 0.0);
    let eig = SymmetricEigen::new(&hpp + penalty);
    let mut shapes = [[Complex64::new(0.0, 0.0); 5]; 3];
    for (slot, label) in ClsLabel::ALL.iter().enumerate() {
        let target = label.energy(j);
        let c = (0..5)
            .find(|&c| (eig.eigenvalues[c] - target).abs() < 1e-9 * j)
            .expect("flat level present in the cage");
        let mut v: Vec<Complex64> = eig.eigenvectors.column(c).iter().copied().collect();
        let leak: f64 = (&hqp * DMatrix::from_column_slice(5, 1, &v)).iter().map(|z| z.norm()).sum();
        debug_assert!(leak < 1e-10 * j);
        let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let pivot = *v.iter().find(|z| z.norm() > max * (1.0 - 1e-12)).unwrap();
        let rot = pivot.conj() / pivot.norm();
        v.iter_mut().for_each(|z| *z *= rot);
        shapes[slot].copy_from_slice(&v);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsMode {
    pub cell: usize,
    pub label: ClsLabel,
    pub energy: f64,
    pub amplitudes: Vec<(SiteIndex, Complex64)>,
}

impl ClsMode {
    pub fn dense(&self, n_sites: usize) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); n_sites];
        for (s, z) in &self.amplitudes {
            v[s.flat()] = *z;
        }
        v
    }

    pub fn amplitude_at(&self, site: SiteIndex) -> Complex64 {
        self.amplitudes
            .iter()
            .find(|(s, _)| *s == site)
            .map(|(_, z)| *z)
            .unwrap_or_default()
    }
}

/// The three compact modes whose cage starts in cell `n`, ordered +2, 0, -2.
pub fn cls_modes(lattice: &LatticeSpec, n: usize) -> Result<[ClsMode; 3]> {
    let shapes = cage_shapes(lattice)?;
    let last = n + 1;
    let next = match lattice.boundary {
        Boundary::Open if last >= lattice.n_cells => {
            return Err(ModelError::invalid(
                "cls.cell",
                format!("CLS cell out of range: cage of cell {n} needs cell {last} < {}", lattice.n_cells),
            )
            .into())
        }
        _ if n >= lattice.n_cells => {
            return Err(ModelError::invalid("cls.cell", format!("CLS cell out of range: {n}")).into())
        }
        Boundary::Open => last,
        Boundary::Periodic => last % lattice.n_cells,
    };
    let build = |slot: usize| {
        let label = ClsLabel::ALL[slot];
        ClsMode {
            cell: n,
            label,
            energy: label.energy(lattice.hopping),
            amplitudes: CAGE
                .iter()
                .zip(shapes[slot])
                .map(|(&(dc, t), z)| (SiteIndex::new(if dc == 0 { n } else { next }, t), z))
                .collect(),
        }
    };
    Ok([build(0), build(1), build(2)])
}

pub fn cls_mode(lattice: &LatticeSpec, n: usize, label: ClsLabel) -> Result<ClsMode> {
    let modes = cls_modes(lattice, n)?;
    Ok(modes.into_iter().find(|m| m.label == label).expect("all labels built"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caged(u: f64) -> LatticeSpec {
        LatticeSpec::caged(30, u)
    }

    #[test]
    fn relative_state_count() {
        assert_eq!(RelativeState::all(2).len(), 24);
        assert_eq!(RelativeState::all(4).len(), 42);
    }

    #[test]
    fn top_band_values() {
        let lat = caged(4.0);
        let e0 = band_energy(&lat, 1, 0.0, 2).unwrap();
        let e1 = band_energy(&lat, 1, PI / 2.0, 2).unwrap();
        let e2 = band_energy(&lat, 1, PI, 2).unwrap();
        assert!((e0 - 6.17226).abs() < 1e-5, "{e0}");
        assert!((e1 - 6.025132).abs() < 1e-6, "{e1}");
        assert!((e2 - 5.806424).abs() < 1e-6, "{e2}");
        assert!(e0 > e1 && e1 > e2);
    }

    #[test]
    fn r_max_independent_at_pi_flux() {
        let lat = caged(4.0);
        for k in [0.3, 1.2, -2.5] {
            let a = bloch_sector(&lat, k, 2).unwrap();
            let b = bloch_sector(&lat, k, 5).unwrap();
            for l in 1..=3 {
                assert!((a.energy(l).unwrap() - b.energy(l).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noninteracting_levels() {
        for k in uniform_k_grid(16) {
            let s = bloch_sector(&caged(0.0), k, 3).unwrap();
            for e in s.energies() {
                let d = [-4.0, -2.0, 0.0, 2.0, 4.0]
                    .iter()
                    .map(|x| (e - x).abs())
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 1e-10);
            }
        }
    }

    #[test]
    fn wavefunction_structure() {
        let s = bloch_sector(&caged(4.0), PI / 2.0, DEFAULT_R_MAX).unwrap();
        let psi = s.wavefunction(1).unwrap();
        use Sublattice::*;
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        let aa = psi.get(0, A, A);
        assert!(aa.im.abs() < 1e-14 && aa.re > 0.0);
        assert!((aa.re - 0.720839).abs() < 1e-6);
        let max = psi.entries.iter().map(|e| e.1.norm()).fold(0.0, f64::max);
        assert_eq!(aa.norm(), max);
        assert!((psi.get(0, A, B) + psi.get(0, A, C)).norm() < 1e-10);
        assert!((psi.get(1, A, B) - psi.get(1, A, C)).norm() < 1e-10);
        assert!(psi.get(0, A, B).norm() > 0.1);
        let p = psi.relative_profile();
        assert!(p[2..].iter().sum::<f64>() < 1e-20);
    }

    #[test]
    fn degenerate_level_rejected() {
        let s = bloch_sector(&caged(4.0), 0.4, 3).unwrap();
        let l = s.energies().iter().position(|e| (e - 2.0).abs() < 1e-9).unwrap() + 1;
        assert!(matches!(s.wavefunction(l), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn velocity_and_resonance() {
        let lat = caged(4.0);
        let v = group_velocity(&lat, 1, PI / 2.0, DEFAULT_R_MAX).unwrap();
        assert!((v + 0.171257).abs() < 1e-5, "{v}");
        let kr = resonance_momentum(&lat, 1, 6.02, DEFAULT_R_MAX).unwrap();
        assert!((kr / PI - 0.50949).abs() < 1e-4, "{kr}");
        assert!((band_energy(&lat, 1, kr, DEFAULT_R_MAX).unwrap() - 6.02).abs() < 1e-9);
        assert!(matches!(
            resonance_momentum(&lat, 1, 7.0, DEFAULT_R_MAX),
            Err(Error::OffResonant { .. })
        ));
        let flat = bloch_sector(&lat, 0.3, DEFAULT_R_MAX).unwrap();
        let l2 = flat.energies().iter().position(|e| (e - 2.0).abs() < 1e-9).unwrap() + 1;
        assert!(matches!(group_velocity(&lat, l2, 0.3, DEFAULT_R_MAX), Err(Error::FlatBand { .. })));
    }

    #[test]
    fn band_structure_flags() {
        let bs = band_structure(&caged(4.0), &uniform_k_grid(64), 2).unwrap();
        assert_eq!(bs.k_grid.len(), 64);
        assert!(!bs.flat[0]);
        for level in [0.0, 2.0, -2.0, 4.0, -4.0] {
            assert!(bs
                .energies
                .iter()
                .zip(&bs.flat)
                .any(|(b, f)| *f && (b[0] - level).abs() < 1e-9));
        }
        let mut buf = Vec::new();
        bs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("K,E1,E2,"));
        assert_eq!(text.lines().count(), 65);
    }

    #[test]
    fn cls_eigen_and_orthogonal() {
        let lat = LatticeSpec::caged(6, 0.0);
        let h0 = single_particle_hamiltonian(&lat);
        let modes = cls_modes(&lat, 2).unwrap();
        for m in &modes {
            let v = nalgebra::DVector::from_vec(m.dense(lat.n_sites()));
            let res = (&h0 * &v - &v * Complex64::new(m.energy, 0.0)).norm();
            assert!(res < 1e-10, "{:?}: {res}", m.label);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        for a in 0..3 {
            for b in 0..a {
                let x: Complex64 = modes[a]
                    .dense(18)
                    .iter()
                    .zip(modes[b].dense(18))
                    .map(|(p, q)| p.conj() * q)
                    .sum();
                assert!(x.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plus_two_shape() {
        let lat = LatticeSpec::caged(4, 0.0);
        let m = cls_mode(&lat, 1, ClsLabel::Plus2).unwrap();
        let s = 1.0 / (2.0 * 2f64.sqrt());
        use Sublattice::*;
        let expect = [
            (SiteIndex::new(1, A), 2.0 * s),
            (SiteIndex::new(1, B), -s),
            (SiteIndex::new(1, C), s),
            (SiteIndex::new(2, B), -s),
            (SiteIndex::new(2, C), -s),
        ];
        for (site, x) in expect {
            assert!((m.amplitude_at(site) - Complex64::new(x, 0.0)).norm() < 1e-12, "{site}");
        }
    }

    #[test]
    fn point_state_splits_evenly() {
        let lat = LatticeSpec::caged(5, 0.0);
        let a0 = SiteIndex::new(1, Sublattice::A);
        let modes = cls_modes(&lat, 1).unwrap();
        let w: Vec<f64> = modes.iter().map(|m| m.amplitude_at(a0).norm_sqr()).collect();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!(w[1] < 1e-24);
        assert!((w[2] - 0.5).abs() < 1e-12);
        assert!((modes[0].amplitude_at(a0).norm() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cls_errors() {
        let off = LatticeSpec {
            gauge_phase: 1.0,
            ..LatticeSpec::caged(5, 0.0)
        };
        assert!(matches!(cls_modes(&off, 1), Err(Error::NotCaged(_))));
        assert!(cls_modes(&LatticeSpec::caged(5, 0.0), 4).is_err());
        assert!(cls_modes(&LatticeSpec::caged(5, 0.0).with_boundary(Boundary::Periodic), 4).is_ok());
    }

    #[test]
    fn cls_completeness_periodic() {
        let lat = LatticeSpec::caged(7, 0.0).with_boundary(Boundary::Periodic);
        let d = lat.n_sites();
        let mut p = DMatrix::<Complex64>::zeros(d, d);
        for n in 0..lat.n_cells {
            for m in cls_modes(&lat, n).unwrap() {
                let v = nalgebra::DVector::from_vec(m.dense(d));
                p += &v * v.adjoint();
            }
        }
        let err = (p - DMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn velocity_is_odd(k in 0.2f64..2.9) {
            let lat = caged(4.0);
            let a = group_velocity(&lat, 1, k, 2).unwrap();
            let b = group_velocity(&lat, 1, -k, 2).unwrap();
            prop_assert!((a + b).abs() < 1e-7);
        }

        #[test]
        fn resonance_roundtrip(e in 5.81f64..6.17) {
            let lat = caged(4.0);
            let k = resonance_momentum(&lat, 1, e, 2).unwrap();
            prop_assert!(k > 0.0 && k < PI);
            prop_assert!((band_energy(&lat, 1, k, 2).unwrap() - e).abs() < 1e-9);
        }

        #[test]
        fn flat_levels_persist(k in -PI..PI, u in prop::sample::select(vec![0.0, 2.0, 4.0, 10.0])) {
            let s = bloch_sector(&caged(u), k, 3).unwrap();
            for level in [0.0, 2.0, -2.0, 4.0, -4.0] {
                prop_assert!(s.energies().iter().any(|e| (e - level).abs() < 1e-10));
            }
        }
    }
}
