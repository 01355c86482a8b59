//! Sparse Hermitian Hamiltonian of the two-excitation sector.
//!
//! Storage keeps the real diagonal plus the strictly upper triangle in
//! compressed-column form, so each unordered pair is stored once and the lower
//! half is implied by conjugation.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::basis::{SectorBasis, StateVector};
use crate::error::{Error, Result};
use crate::lattice::{adjacency, links, EmitterSpec, Link, Model};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseHermitian {
    dim: usize,
    diag: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    vals: Vec<Complex64>,
}

struct Coupling {
    slot: usize,
    frequency: f64,
    legs: Vec<(usize, Complex64)>,
}

/// Full Hamiltonian of a validated model.
pub fn assemble(model: &Model, basis: &SectorBasis) -> SparseHermitian {
    let lat = model.lattice();
    assemble_parts(basis, &links(lat), lat.nonlinearity, model.emitters())
}

pub(crate) fn assemble_parts(
    basis: &SectorBasis,
    links: &[Link],
    nonlinearity: f64,
    emitters: &[EmitterSpec],
) -> SparseHermitian {
    let s = basis.n_sites();
    let adj = adjacency(s, links);
    let mut couplings: Vec<Coupling> = emitters
        .iter()
        .map(|e| Coupling {
            slot: basis.slot_of(e.id).expect("emitter in basis"),
            frequency: e.frequency,
            legs: e.legs.iter().map(|l| (l.site().flat(), l.coupling())).collect(),
        })
        .collect();
    couplings.sort_by_key(|c| c.slot);

    let dim = basis.dim();
    let columns: Vec<(f64, Vec<(usize, Complex64)>)> = (0..dim)
        .into_par_iter()
        .map(|k| column(basis, &adj, nonlinearity, &couplings, k))
        .collect();

    let mut diag = Vec::with_capacity(dim);
    let mut col_ptr = Vec::with_capacity(dim + 1);
    let nnz: usize = columns.iter().map(|c| c.1.len()).sum();
    let mut row_idx = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    col_ptr.push(0);
    for (d, entries) in columns {
        diag.push(d);
        for (r, v) in entries {
            row_idx.push(r as u32);
            vals.push(v);
        }
        col_ptr.push(row_idx.len());
    }
    SparseHermitian {
        dim,
        diag,
        col_ptr,
        row_idx,
        vals,
    }
}

/// Diagonal and strictly-upper entries `(row, <row|H|k>)` of column `k`.
fn column(
    basis: &SectorBasis,
    adj: &[Vec<(usize, Complex64)>],
    nonlinearity: f64,
    couplings: &[Coupling],
    k: usize,
) -> (f64, Vec<(usize, Complex64)>) {
    let s = basis.n_sites();
    let mut out: Vec<(usize, Complex64)> = Vec::new();
    let mut diag = 0.0;
    if k < basis.two_photon_dim() {
        let (i, j) = basis.pair_of(k);
        if i == j {
            diag = nonlinearity;
            for &(t, v) in &adj[i] {
                out.push((basis.pair_index_unordered(t, i), v * SQRT2));
            }
        } else {
            for (mover, spectator) in [(i, j), (j, i)] {
                for &(t, v) in &adj[mover] {
                    let amp = if t == spectator { v * SQRT2 } else { v };
                    out.push((basis.pair_index_unordered(t, spectator), amp));
                }
            }
        }
    } else if k < basis.emitter_pair_offset() {
        let r = k - basis.emitter_photon_offset();
        let (slot, x) = (r / s, r % s);
        let c = &couplings[slot];
        diag = c.frequency;
        for &(t, v) in &adj[x] {
            out.push((basis.emitter_photon_index(slot, t), v));
        }
        for &(leg, g) in &c.legs {
            let amp = if leg == x { g * SQRT2 } else { g };
            out.push((basis.pair_index_unordered(leg, x), amp));
        }
    } else {
        let (s1, s2) = emitter_pair_slots(basis, k);
        diag = couplings[s1].frequency + couplings[s2].frequency;
        for (stay, decay) in [(s1, s2), (s2, s1)] {
            for &(leg, g) in &couplings[decay].legs {
                out.push((basis.emitter_photon_index(stay, leg), g));
            }
        }
    }
    out.retain(|&(r, _)| r < k);
    out.sort_by_key(|&(r, _)| r);
    out.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    (diag, out)
}

fn emitter_pair_slots(basis: &SectorBasis, k: usize) -> (usize, usize) {
    let e = basis.n_emitters();
    let mut r = k - basis.emitter_pair_offset();
    for s1 in 0..e {
        let len = e - s1 - 1;
        if r < len {
            return (s1, s1 + 1 + r);
        }
        r -= len;
    }
    unreachable!("k inside the emitter-pair block")
}

impl SparseHermitian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Stored off-diagonal entries (each unordered pair once).
    pub fn nnz_upper(&self) -> usize {
        self.vals.len()
    }

    /// Iterate the strictly upper triangle as `(row, col, value)`.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1])
                .map(move |p| (self.row_idx[p] as usize, c, self.vals[p]))
        })
    }

    /// Matrix element `<row|H|col>`.
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        if row == col {
            return Complex64::new(self.diag[row], 0.0);
        }
        let (r, c, conj) = if row < col { (row, col, false) } else { (col, row, true) };
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[span.clone()].binary_search(&(r as u32)) {
            Ok(p) => {
                let v = self.vals[span.start + p];
                if conj {
                    v.conj()
                } else {
                    v
                }
            }
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Number of nonzeros per row of the full matrix (diagonal included when nonzero).
    pub fn row_degrees(&self) -> Vec<usize> {
        let mut deg: Vec<usize> = self.diag.iter().map(|&d| usize::from(d != 0.0)).collect();
        for (r, c, _) in self.upper_entries() {
            deg[r] += 1;
            deg[c] += 1;
        }
        deg
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut y = StateVector::zeros(self.dim);
        self.apply_into(&v.0, &mut y.0);
        Ok(y)
    }

    /// `y = H x`, overwriting `y`.
    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for ((yi, xi), d) in y.iter_mut().zip(x).zip(&self.diag) {
            *yi = xi * d;
        }
        for c in 0..self.dim {
            let xc = x[c];
            let mut acc = Complex64::new(0.0, 0.0);
            let span = self.col_ptr[c]..self.col_ptr[c + 1];
            for (r, v) in self.row_idx[span.clone()].iter().zip(&self.vals[span]) {
                let r = *r as usize;
                y[r] += v * xc;
                acc += v.conj() * x[r];
            }
            y[c] += acc;
        }
    }

    pub fn expectation(&self, v: &StateVector) -> Complex64 {
        let hv = self.apply(v).expect("dimension checked by caller");
        v.dot(&hv)
    }

    /// Gershgorin enclosure `(lower, upper)` of the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let mut radius = vec![0.0; self.dim];
        for (r, c, v) in self.upper_entries() {
            radius[r] += v.norm();
            radius[c] += v.norm();
        }
        let lo = self
            .diag
            .iter()
            .zip(&radius)
            .map(|(d, r)| d - r)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .diag
            .iter()
            .zip(&radius)
            .map(|(d, r)| d + r)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for (i, d) in self.diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(*d, 0.0);
        }
        for (r, c, v) in self.upper_entries() {
            m[(r, c)] = v;
            m[(c, r)] = v.conj();
        }
        m
    }

    /// Little-endian dump: `u64 dim`, `u64 nnz`, then `nnz` records of
    /// `(u64 row, u64 col, f64 re, f64 im)`. Nonzero diagonal entries come first,
    /// followed by the strictly upper triangle in column order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let diag_nz = self.diag.iter().filter(|d| **d != 0.0).count();
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&((diag_nz + self.vals.len()) as u64).to_le_bytes())?;
        let mut rec = |r: usize, c: usize, v: Complex64| -> std::io::Result<()> {
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())
        };
        for (i, d) in self.diag.iter().enumerate() {
            if *d != 0.0 {
                rec(i, i, Complex64::new(*d, 0.0))?;
            }
        }
        for (r, c, v) in self.upper_entries() {
            rec(r, c, v)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> std::io::Result<Self> {
        let mut b8 = [0u8; 8];
        let mut u64_ = |r: &mut R| -> std::io::Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let dim = u64_(&mut r)? as usize;
        let nnz = u64_(&mut r)? as usize;
        let mut diag = vec![0.0; dim];
        let mut upper: Vec<(usize, usize, Complex64)> = Vec::new();
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        for _ in 0..nnz {
            let row = u64_(&mut r)? as usize;
            let col = u64_(&mut r)? as usize;
            let re = f64::from_bits(u64_(&mut r)?);
            let im = f64::from_bits(u64_(&mut r)?);
            if row >= dim || col >= dim {
                return Err(bad("triplet index out of range"));
            }
            match row.cmp(&col) {
                std::cmp::Ordering::Equal => diag[row] = re,
                std::cmp::Ordering::Less => upper.push((row, col, Complex64::new(re, im))),
                std::cmp::Ordering::Greater => return Err(bad("lower-triangle triplet")),
            }
        }
        upper.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; dim + 1];
        for &(_, c, _) in &upper {
            col_ptr[c + 1] += 1;
        }
        for c in 0..dim {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            dim,
            diag,
            col_ptr,
            row_idx: upper.iter().map(|&(r, _, _)| r as u32).collect(),
            vals: upper.iter().map(|&(_, _, v)| v).collect(),
        })
    }
}
