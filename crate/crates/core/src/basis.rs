//! Two-excitation sector: photon pairs, emitter-photon products and emitter pairs.
//!
//! Ordering is closed-form: TwoPhoton(i <= j) in lexicographic order of flat
//! indices, then EmitterPhoton by (emitter slot, site), then EmitterPair(e1 < e2).
//! Emitter slots follow ascending emitter id.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{Model, SiteIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisState {
    /// Photons on sites i and j; `i == j` is the normalized `|2_i>`.
    TwoPhoton(SiteIndex, SiteIndex),
    EmitterPhoton { emitter: usize, photon: SiteIndex },
    EmitterPair(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorBasis {
    n_cells: usize,
    emitter_ids: Vec<usize>,
}

pub fn pair_count(s: usize) -> usize {
    s * (s + 1) / 2
}

impl SectorBasis {
    pub fn new(model: &Model) -> Self {
        let mut ids: Vec<usize> = model.emitters().iter().map(|e| e.id).collect();
        ids.sort_unstable();
        Self {
            n_cells: model.lattice().n_cells,
            emitter_ids: ids,
        }
    }

    /// Photon-only basis for a chain of `n_cells` cells.
    pub fn photons_only(n_cells: usize) -> Self {
        Self {
            n_cells,
            emitter_ids: Vec::new(),
        }
    }

    pub fn n_sites(&self) -> usize {
        3 * self.n_cells
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn emitter_ids(&self) -> &[usize] {
        &self.emitter_ids
    }

    pub fn n_emitters(&self) -> usize {
        self.emitter_ids.len()
    }

    pub fn two_photon_dim(&self) -> usize {
        pair_count(self.n_sites())
    }

    pub fn emitter_photon_offset(&self) -> usize {
        self.two_photon_dim()
    }

    pub fn emitter_pair_offset(&self) -> usize {
        self.two_photon_dim() + self.n_emitters() * self.n_sites()
    }

    pub fn dim(&self) -> usize {
        let e = self.n_emitters();
        self.emitter_pair_offset() + e * e.saturating_sub(1) / 2
    }

    pub fn slot_of(&self, id: usize) -> Option<usize> {
        self.emitter_ids.binary_search(&id).ok()
    }

    fn slot(&self, id: usize) -> Result<usize> {
        self.slot_of(id)
            .ok_or_else(|| Error::NonCanonical(format!("unknown emitter id {id}")))
    }

    /// Start of the row of pairs whose first member is site `i`.
    fn row_offset(&self, i: usize) -> usize {
        let s = self.n_sites();
        i * s - i * i.saturating_sub(1) / 2
    }

    /// Index of the photon pair (i, j) with `i <= j` (flat site indices).
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.n_sites());
        self.row_offset(i) + (j - i)
    }

    /// Index of the unordered pair {i, j}.
    pub fn pair_index_unordered(&self, i: usize, j: usize) -> usize {
        if i <= j {
            self.pair_index(i, j)
        } else {
            self.pair_index(j, i)
        }
    }

    pub fn emitter_photon_index(&self, slot: usize, site: usize) -> usize {
        self.emitter_photon_offset() + slot * self.n_sites() + site
    }

    pub fn emitter_pair_index(&self, s1: usize, s2: usize) -> usize {
        debug_assert!(s1 < s2);
        let e = self.n_emitters();
        let row = s1 * e - s1 * (s1 + 1) / 2;
        self.emitter_pair_offset() + row + (s2 - s1 - 1)
    }

    pub fn index_of(&self, state: BasisState) -> Result<usize> {
        let s = self.n_sites();
        let check_site = |site: SiteIndex| {
            if site.cell >= self.n_cells {
                Err(Error::IndexOutOfRange {
                    index: site.flat(),
                    dim: s,
                })
            } else {
                Ok(site.flat())
            }
        };
        match state {
            BasisState::TwoPhoton(a, b) => {
                let (i, j) = (check_site(a)?, check_site(b)?);
                if i > j {
                    return Err(Error::NonCanonical(format!("TwoPhoton({a}, {b})")));
                }
                Ok(self.pair_index(i, j))
            }
            BasisState::EmitterPhoton { emitter, photon } => {
                let slot = self.slot(emitter)?;
                Ok(self.emitter_photon_index(slot, check_site(photon)?))
            }
            BasisState::EmitterPair(e1, e2) => {
                if e1 >= e2 {
                    return Err(Error::NonCanonical(format!("EmitterPair({e1}, {e2})")));
                }
                Ok(self.emitter_pair_index(self.slot(e1)?, self.slot(e2)?))
            }
        }
    }

    pub fn state_at(&self, k: usize) -> Result<BasisState> {
        let dim = self.dim();
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, dim });
        }
        let s = self.n_sites();
        if k < self.two_photon_dim() {
            let (i, j) = self.pair_of(k);
            return Ok(BasisState::TwoPhoton(
                SiteIndex::from_flat(i),
                SiteIndex::from_flat(j),
            ));
        }
        if k < self.emitter_pair_offset() {
            let r = k - self.emitter_photon_offset();
            return Ok(BasisState::EmitterPhoton {
                emitter: self.emitter_ids[r / s],
                photon: SiteIndex::from_flat(r % s),
            });
        }
        let mut r = k - self.emitter_pair_offset();
        let e = self.n_emitters();
        for s1 in 0..e {
            let len = e - s1 - 1;
            if r < len {
                return Ok(BasisState::EmitterPair(
                    self.emitter_ids[s1],
                    self.emitter_ids[s1 + 1 + r],
                ));
            }
            r -= len;
        }
        unreachable!("index checked against dim")
    }

    /// Inverse of `pair_index` for `k < two_photon_dim()`.
    pub fn pair_of(&self, k: usize) -> (usize, usize) {
        let s = self.n_sites();
        let (mut lo, mut hi) = (0usize, s);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.row_offset(mid) <= k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, lo + k - self.row_offset(lo))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<Complex64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorWeights {
    pub two_photon: f64,
    pub emitter_photon: f64,
    pub emitter_pair: f64,
}

impl SectorWeights {
    pub fn total(&self) -> f64 {
        self.two_photon + self.emitter_photon + self.emitter_pair
    }
}

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); dim])
    }

    pub fn basis_vector(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[k] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn dot(&self, other: &StateVector) -> Complex64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            for z in &mut self.0 {
                *z /= n;
            }
        }
        n
    }

    pub fn sector_weights(&self, basis: &SectorBasis) -> SectorWeights {
        let w = |r: std::ops::Range<usize>| self.0[r].iter().map(|z| z.norm_sqr()).sum::<f64>();
        SectorWeights {
            two_photon: w(0..basis.two_photon_dim()),
            emitter_photon: w(basis.emitter_photon_offset()..basis.emitter_pair_offset()),
            emitter_pair: w(basis.emitter_pair_offset()..basis.dim()),
        }
    }
}

impl Index<usize> for StateVector {
    type Output = Complex64;
    fn index(&self, k: usize) -> &Complex64 {
        &self.0[k]
    }
}

impl IndexMut<usize> for StateVector {
    fn index_mut(&mut self, k: usize) -> &mut Complex64 {
        &mut self.0[k]
    }
}

/// Canonical amplitude of the unordered photon pair {i, j}.
pub fn two_photon_amplitude(
    v: &StateVector,
    basis: &SectorBasis,
    i: SiteIndex,
    j: SiteIndex,
) -> Complex64 {
    v[basis.pair_index_unordered(i.flat(), j.flat())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{EmitterSpec, LatticeSpec, Sublattice};
    use proptest::prelude::*;

    fn model(n: usize, e: usize) -> Model {
        let emitters = (0..e)
            .map(|k| EmitterSpec::small(k, 4.0, SiteIndex::new(k % n, Sublattice::A), 0.02))
            .collect();
        Model::new(LatticeSpec::caged(n, 4.0), emitters).unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(SectorBasis::new(&model(3, 1)).dim(), 54);
        assert_eq!(SectorBasis::new(&model(100, 2)).dim(), 45751);
        assert_eq!(SectorBasis::new(&model(3, 0)).dim(), 45);
    }

    #[test]
    fn roundtrip_n4() {
        let b = SectorBasis::new(&model(4, 3));
        for k in 0..b.dim() {
            assert_eq!(b.index_of(b.state_at(k).unwrap()).unwrap(), k);
        }
    }

    #[test]
    fn ordering_is_lexicographic() {
        let b = SectorBasis::new(&model(3, 2));
        let mut prev = None;
        for k in 0..b.two_photon_dim() {
            let BasisState::TwoPhoton(i, j) = b.state_at(k).unwrap() else {
                panic!()
            };
            let key = (i.flat(), j.flat());
            assert!(key.0 <= key.1);
            if let Some(p) = prev {
                assert!(p < key);
            }
            prev = Some(key);
        }
        assert!(matches!(
            b.state_at(b.two_photon_dim()).unwrap(),
            BasisState::EmitterPhoton { emitter: 0, .. }
        ));
        assert_eq!(b.state_at(b.dim() - 1).unwrap(), BasisState::EmitterPair(0, 1));
    }

    #[test]
    fn rejects_bad_states() {
        let b = SectorBasis::new(&model(4, 2));
        let a0 = SiteIndex::new(0, Sublattice::A);
        let b1 = SiteIndex::new(1, Sublattice::B);
        let err = b.index_of(BasisState::TwoPhoton(b1, a0)).unwrap_err();
        assert!(err.to_string().contains("non-canonical ordering"));
        let err = b.state_at(b.dim()).unwrap_err();
        assert!(err.to_string().contains("index out of range"));
        assert!(b.index_of(BasisState::EmitterPair(1, 0)).is_err());
        assert!(b.index_of(BasisState::EmitterPhoton { emitter: 7, photon: a0 }).is_err());
    }

    #[test]
    fn amplitude_accessors() {
        let b = SectorBasis::new(&model(3, 0));
        let a0 = SiteIndex::new(0, Sublattice::A);
        let b0 = SiteIndex::new(0, Sublattice::B);
        let v = StateVector::basis_vector(b.dim(), b.index_of(BasisState::TwoPhoton(a0, a0)).unwrap());
        assert_eq!(two_photon_amplitude(&v, &b, a0, a0), Complex64::new(1.0, 0.0));
        assert_eq!(two_photon_amplitude(&v, &b, a0, b0), Complex64::new(0.0, 0.0));
        let v = StateVector::basis_vector(b.dim(), b.index_of(BasisState::TwoPhoton(a0, b0)).unwrap());
        assert_eq!(two_photon_amplitude(&v, &b, b0, a0).norm_sqr(), 1.0);
    }

    proptest! {
        #[test]
        fn bijection(n in 3usize..12, e in 0usize..4, seed in 0usize..10_000) {
            let b = SectorBasis::new(&model(n, e));
            let s = 3 * n;
            prop_assert_eq!(b.dim(), s * (s + 1) / 2 + e * s + e * e.saturating_sub(1) / 2);
            let k = seed % b.dim();
            prop_assert_eq!(b.index_of(b.state_at(k).unwrap()).unwrap(), k);
        }

        #[test]
        fn weights_sum_to_norm(n in 3usize..6, e in 0usize..3, re in proptest::collection::vec(-1.0f64..1.0, 1..400)) {
            let b = SectorBasis::new(&model(n, e));
            let mut v = StateVector::zeros(b.dim());
            for (k, x) in re.iter().enumerate() {
                v[k % b.dim()] += Complex64::new(*x, 0.5 * x);
            }
            if v.normalize() > 0.0 {
                let w = v.sector_weights(&b);
                prop_assert!(w.two_photon >= 0.0 && w.emitter_photon >= 0.0 && w.emitter_pair >= 0.0);
                prop_assert!((w.total() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn amplitude_symmetric(n in 3usize..6, i in 0usize..18, j in 0usize..18) {
            let b = SectorBasis::photons_only(n);
            let (i, j) = (i % b.n_sites(), j % b.n_sites());
            let mut v = StateVector::zeros(b.dim());
            for k in 0..b.dim() {
                v[k] = Complex64::new(k as f64, -(k as f64));
            }
            let (si, sj) = (SiteIndex::from_flat(i), SiteIndex::from_flat(j));
            prop_assert_eq!(two_photon_amplitude(&v, &b, si, sj), two_photon_amplitude(&v, &b, sj, si));
        }
    }
}
