//! Initial states, Chebyshev time propagation and observables.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{SectorBasis, StateVector};
use crate::error::{Error, ModelError, Result};
use crate::hamiltonian::SparseHermitian;
use crate::lattice::{LatticeSpec, Model, SiteIndex, Sublattice};
use crate::spectral::{cls_mode, ClsLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Cls,
    Point,
}

/// One weighted single-photon primitive: a compact mode or a point excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonTerm {
    pub kind: PrimitiveKind,
    pub cell: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ClsLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sublattice: Option<Sublattice>,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub weight_im: f64,
}

fn one() -> f64 {
    1.0
}

impl PhotonTerm {
    pub fn cls(cell: usize, label: ClsLabel, weight: f64) -> Self {
        Self {
            kind: PrimitiveKind::Cls,
            cell,
            label: Some(label),
            sublattice: None,
            weight,
            weight_im: 0.0,
        }
    }

    pub fn point(site: SiteIndex, weight: f64) -> Self {
        Self {
            kind: PrimitiveKind::Point,
            cell: site.cell,
            label: None,
            sublattice: Some(site.sublattice),
            weight,
            weight_im: 0.0,
        }
    }

    pub fn weight(&self) -> Complex64 {
        Complex64::new(self.weight, self.weight_im)
    }
}

/// Single-photon amplitudes of a weighted superposition of primitives (not normalized).
pub fn photon_vector(lattice: &LatticeSpec, terms: &[PhotonTerm]) -> Result<Vec<Complex64>> {
    let mut f = vec![Complex64::new(0.0, 0.0); lattice.n_sites()];
    for (q, t) in terms.iter().enumerate() {
        if !(t.weight.is_finite() && t.weight_im.is_finite()) {
            return Err(ModelError::invalid(format!("photon[{q}].weight"), "weight must be finite").into());
        }
        match t.kind {
            PrimitiveKind::Cls => {
                let label = t.label.ok_or_else(|| {
                    ModelError::invalid(format!("photon[{q}].label"), "cls term needs a label")
                })?;
                let mode = cls_mode(lattice, t.cell, label).map_err(|e| match e {
                    Error::Model(m) => ModelError::invalid(format!("photon[{q}].cell"), m.message).into(),
                    other => other,
                })?;
                for (s, z) in &mode.amplitudes {
                    f[s.flat()] += t.weight() * z;
                }
            }
            PrimitiveKind::Point => {
                if t.cell >= lattice.n_cells {
                    return Err(ModelError::invalid(
                        format!("photon[{q}].cell"),
                        format!("point cell out of range ({} >= {})", t.cell, lattice.n_cells),
                    )
                    .into());
                }
                let site = SiteIndex::new(t.cell, t.sublattice.unwrap_or(Sublattice::A));
                f[site.flat()] += t.weight();
            }
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSpec {
    /// Ids of the emitters that start excited.
    pub excited: Vec<usize>,
    #[serde(default)]
    pub photon: Vec<PhotonTerm>,
}

pub fn prepare_state(spec: &InitialStateSpec, model: &Model, basis: &SectorBasis) -> Result<StateVector> {
    let unknown = spec.excited.iter().find(|id| basis.slot_of(**id).is_none());
    if let Some(id) = unknown {
        return Err(ModelError::invalid("initial.excited", format!("unknown emitter id {id}")).into());
    }
    let mut v = StateVector::zeros(basis.dim());
    match (spec.excited.as_slice(), spec.photon.is_empty()) {
        ([e], false) => {
            let f = photon_vector(model.lattice(), &spec.photon)?;
            let slot = basis.slot_of(*e).expect("checked");
            for (s, z) in f.iter().enumerate() {
                v[basis.emitter_photon_index(slot, s)] = *z;
            }
        }
        ([e1, e2], true) if e1 != e2 => {
            let (a, b) = (basis.slot_of(*e1).unwrap(), basis.slot_of(*e2).unwrap());
            v[basis.emitter_pair_index(a.min(b), a.max(b))] = Complex64::new(1.0, 0.0);
        }
        _ => {
            return Err(ModelError::invalid(
                "initial",
                "total excitation number must be 2 (one excited emitter plus a photon, or two excited emitters)",
            )
            .into())
        }
    }
    if v.normalize() < 1e-300 {
        return Err(ModelError::invalid("initial.photon", "zero-norm initial state").into());
    }
    Ok(v)
}

/// `J_0(x) .. J_m(x)` for `x >= 0` by downward recurrence normalized with
/// `J_0 + 2 sum_k J_{2k} = 1`.
pub fn bessel_j_sequence(x: f64, m: usize) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; m + 1];
        out[0] = 1.0;
        return out;
    }
    let top = {
        let n = m.max(x.ceil() as usize) + 30;
        let t = n + (160.0 * n as f64).sqrt() as usize;
        t + t % 2
    };
    let mut j = vec![0.0; top + 2];
    j[top] = 1e-300;
    for k in (1..=top).rev() {
        j[k - 1] = 2.0 * k as f64 / x * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            for v in j[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
    j.truncate(m + 1);
    j.iter_mut().for_each(|v| *v /= norm);
    j
}

/// Expansion coefficients of `e^{-i x y}` in Chebyshev polynomials `T_k(y)`,
/// truncated where the remaining tail is below `tail_tol`.
fn chebyshev_coefficients(x: f64, tail_tol: f64) -> Result<Vec<Complex64>> {
    let m = (2.0 * x).ceil() as usize + 80;
    let j = bessel_j_sequence(x, m);
    let mut tail = vec![0.0; m + 2];
    for k in (0..=m).rev() {
        tail[k] = tail[k + 1] + 2.0 * j[k].abs();
    }
    let order = (0..=m)
        .find(|&k| k as f64 > x && tail[k + 1] < tail_tol)
        .ok_or_else(|| Error::StepUnderflow(format!("Chebyshev series for x = {x} does not reach {tail_tol:e}")))?;
    let mut minus_i_pow = Complex64::new(1.0, 0.0);
    let mut c = Vec::with_capacity(order + 1);
    for (k, jk) in j.iter().enumerate().take(order + 1) {
        let w = if k == 0 { 1.0 } else { 2.0 };
        c.push(minus_i_pow * (w * jk));
        minus_i_pow *= Complex64::new(0.0, -1.0);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Local error target per step, within [1e-12, 1e-6].
    pub tol: f64,
    /// Largest `a * dt` per Chebyshev step, `a` the half-width of the spectrum.
    pub max_step_phase: f64,
    pub norm_bound: f64,
    /// Energy drift bound relative to the spectral radius.
    pub energy_bound: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_step_phase: 40.0,
            norm_bound: 1e-8,
            energy_bound: 1e-8,
        }
    }
}

impl EvolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub energies: Vec<f64>,
    pub max_norm_drift: f64,
    pub max_energy_drift: f64,
    pub spectral_radius: f64,
    pub matvecs: usize,
    pub final_state: StateVector,
}

/// Propagates `psi0` through `times` (increasing; the state at `times[0]` is `psi0`),
/// calling `observe` at every output time.
pub fn evolve<F>(
    h: &SparseHermitian,
    psi0: &StateVector,
    times: &[f64],
    opts: EvolveOptions,
    mut observe: F,
) -> Result<Trajectory>
where
    F: FnMut(f64, &StateVector) -> Result<()>,
{
    if !(1e-12..=1e-6).contains(&opts.tol) {
        return Err(ModelError::invalid("integrator.tolerance", format!("tol {} outside [1e-12, 1e-6]", opts.tol)).into());
    }
    if psi0.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: psi0.len(),
        });
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ModelError::invalid("time", "output times must increase strictly").into());
    }
    let (lo, hi) = h.spectral_bounds();
    let center = 0.5 * (hi + lo);
    let half = (0.5 * (hi - lo)).max(1e-12) * 1.01;
    let radius = lo.abs().max(hi.abs());
    let tail_tol = (opts.tol * 1e-4).max(1e-16);

    let dim = h.dim();
    let mut psi = psi0.clone();
    let norm0 = psi.norm();
    let mut scratch = Scratch::new(dim);
    let mut matvecs = 0usize;
    let energy = |psi: &StateVector, buf: &mut Vec<Complex64>| -> f64 {
        h.apply_into(&psi.0, buf);
        psi.0.iter().zip(buf.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    };
    let e0 = energy(&psi, &mut scratch.t1);
    matvecs += 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(times.len()),
        norms: Vec::with_capacity(times.len()),
        energies: Vec::with_capacity(times.len()),
        max_norm_drift: 0.0,
        max_energy_drift: 0.0,
        spectral_radius: radius,
        matvecs: 0,
        final_state: StateVector::zeros(0),
    };
    let mut cache: Option<(f64, Vec<Complex64>)> = None;
    for (q, &t) in times.iter().enumerate() {
        if q > 0 {
            let span = t - times[q - 1];
            let n_sub = (half * span / opts.max_step_phase).ceil().max(1.0) as usize;
            let dt = span / n_sub as f64;
            let coeffs = match &cache {
                Some((d, c)) if *d == dt => c.clone(),
                _ => {
                    let c = chebyshev_coefficients(half * dt, tail_tol)?;
                    cache = Some((dt, c.clone()));
                    c
                }
            };
            let shift = Complex64::from_polar(1.0, -center * dt);
            for _ in 0..n_sub {
                matvecs += chebyshev_step(h, &mut psi, &coeffs, center, half, shift, &mut scratch);
            }
        }
        let n = psi.norm();
        let e = energy(&psi, &mut scratch.t1);
        matvecs += 1;
        let nd = (n - norm0).abs();
        let ed = (e - e0).abs();
        traj.max_norm_drift = traj.max_norm_drift.max(nd);
        traj.max_energy_drift = traj.max_energy_drift.max(ed);
        if nd > opts.norm_bound {
            return Err(Error::NormDrift { t, drift: nd });
        }
        if ed > opts.energy_bound * radius {
            return Err(Error::EnergyDrift {
                t,
                drift: ed,
                bound: opts.energy_bound * radius,
            });
        }
        traj.times.push(t);
        traj.norms.push(n);
        traj.energies.push(e);
        observe(t, &psi)?;
    }
    traj.matvecs = matvecs;
    traj.final_state = psi;
    Ok(traj)
}

struct Scratch {
    t0: Vec<Complex64>,
    t1: Vec<Complex64>,
    t2: Vec<Complex64>,
    acc: Vec<Complex64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); dim];
        Self {
            t0: z.clone(),
            t1: z.clone(),
            t2: z.clone(),
            acc: z,
        }
    }
}

const FLUSH_BELOW: f64 = 1e-300;

/// One step `psi <- e^{-i H dt} psi`; returns the number of matrix applications.
fn chebyshev_step(
    h: &SparseHermitian,
    psi: &mut StateVector,
    coeffs: &[Complex64],
    center: f64,
    half: f64,
    shift: Complex64,
    s: &mut Scratch,
) -> usize {
    let inv = 1.0 / half;
    // t1 = Hs psi with Hs = (H - center) / half
    s.t0.copy_from_slice(&psi.0);
    h.apply_into(&s.t0, &mut s.t1);
    for (y, x) in s.t1.iter_mut().zip(&s.t0) {
        *y = (*y - x * center) * inv;
    }
    for ((a, x0), x1) in s.acc.iter_mut().zip(&s.t0).zip(&s.t1) {
        *a = coeffs[0] * x0 + coeffs[1] * x1;
    }
    let mut applied = 1;
    for c in &coeffs[2..] {
        h.apply_into(&s.t1, &mut s.t2);
        applied += 1;
        for (((y, x1), x0), a) in s.t2.iter_mut().zip(&s.t1).zip(&s.t0).zip(s.acc.iter_mut()) {
            *y = (*y - x1 * center) * (2.0 * inv) - x0;
            *a += c * *y;
        }
        std::mem::swap(&mut s.t0, &mut s.t1);
        std::mem::swap(&mut s.t1, &mut s.t2);
    }
    // subnormal tails make every later product slow
    for (p, a) in psi.0.iter_mut().zip(&s.acc) {
        let z = a * shift;
        *p = if z.norm_sqr() < FLUSH_BELOW { Complex64::new(0.0, 0.0) } else { z };
    }
    applied
}

/// Population of emitter `id` (single excitation and pair states).
pub fn emitter_population(psi: &StateVector, basis: &SectorBasis, id: usize) -> f64 {
    let Some(slot) = basis.slot_of(id) else {
        return 0.0;
    };
    let s = basis.n_sites();
    let single: f64 = (0..s).map(|x| psi[basis.emitter_photon_index(slot, x)].norm_sqr()).sum();
    let e = basis.n_emitters();
    let pair: f64 = (0..e)
        .filter(|&o| o != slot)
        .map(|o| psi[basis.emitter_pair_index(o.min(slot), o.max(slot))].norm_sqr())
        .sum();
    single + pair
}

/// `|<e; f|psi>|^2` for a normalized single-photon vector `f` and emitter `id` excited.
pub fn localized_population(psi: &StateVector, basis: &SectorBasis, id: usize, f: &[Complex64]) -> f64 {
    let Some(slot) = basis.slot_of(id) else {
        return 0.0;
    };
    let z: Complex64 = f
        .iter()
        .enumerate()
        .filter(|(_, a)| a.norm_sqr() > 0.0)
        .map(|(x, a)| a.conj() * psi[basis.emitter_photon_index(slot, x)])
        .sum();
    z.norm_sqr()
}

pub fn cls_population(
    psi: &StateVector,
    basis: &SectorBasis,
    lattice: &LatticeSpec,
    id: usize,
    cell: usize,
    label: ClsLabel,
) -> Result<f64> {
    let mode = cls_mode(lattice, cell, label)?;
    Ok(localized_population(psi, basis, id, &mode.dense(lattice.n_sites())))
}

pub fn doublon_population(psi: &StateVector, basis: &SectorBasis) -> f64 {
    psi.0[..basis.two_photon_dim()].iter().map(|z| z.norm_sqr()).sum()
}

pub fn emitter_pair_population(psi: &StateVector, basis: &SectorBasis) -> f64 {
    psi.0[basis.emitter_pair_offset()..].iter().map(|z| z.norm_sqr()).sum()
}

/// `<N(n)>` for every cell.
pub fn photon_number_profile(psi: &StateVector, basis: &SectorBasis) -> Vec<f64> {
    let mut prof = vec![0.0; basis.n_cells()];
    for k in 0..basis.two_photon_dim() {
        let w = psi[k].norm_sqr();
        if w == 0.0 {
            continue;
        }
        let (i, j) = basis.pair_of(k);
        prof[i / 3] += w;
        prof[j / 3] += w;
    }
    let s = basis.n_sites();
    for slot in 0..basis.n_emitters() {
        for x in 0..s {
            prof[x / 3] += psi[basis.emitter_photon_index(slot, x)].norm_sqr();
        }
    }
    prof
}

/// Marginals of the two-photon weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMaps {
    /// `p_mu[a][b]`: photon on sublattice `a` in the lower cell and `b` in the upper
    /// cell (sorted when both share a cell).
    pub p_mu: [[f64; 3]; 3],
    /// `p_xc_r[2 x_c][r]`.
    pub p_xc_r: Vec<Vec<f64>>,
    /// `|psi(n, n)|^2 = sum_tau |psi(tau_n, tau_n)|^2`.
    pub diagonal: Vec<f64>,
}

pub fn field_maps(psi: &StateVector, basis: &SectorBasis) -> FieldMaps {
    let n = basis.n_cells();
    let mut maps = FieldMaps {
        p_mu: [[0.0; 3]; 3],
        p_xc_r: vec![vec![0.0; n]; 2 * n - 1],
        diagonal: vec![0.0; n],
    };
    for k in 0..basis.two_photon_dim() {
        let w = psi[k].norm_sqr();
        if w == 0.0 {
            continue;
        }
        let (i, j) = basis.pair_of(k);
        let (a, b) = (SiteIndex::from_flat(i), SiteIndex::from_flat(j));
        maps.p_mu[a.sublattice.code()][b.sublattice.code()] += w;
        maps.p_xc_r[a.cell + b.cell][b.cell - a.cell] += w;
        if i == j {
            maps.diagonal[a.cell] += w;
        }
    }
    maps
}

impl FieldMaps {
    /// Rows `x_c,r,P` for nonzero entries.
    pub fn write_xc_r_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x_c,r,P")?;
        for (two_xc, row) in self.p_xc_r.iter().enumerate() {
            for (r, p) in row.iter().enumerate() {
                if (two_xc + r) % 2 == 0 && *p > 0.0 {
                    writeln!(w, "{},{},{}", two_xc as f64 / 2.0, r, p)?;
                }
            }
        }
        Ok(())
    }

    pub fn write_mu_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau1,tau2,P")?;
        for a in Sublattice::ALL {
            for b in Sublattice::ALL {
                writeln!(w, "{a},{b},{}", self.p_mu[a.code()][b.code()])?;
            }
        }
        Ok(())
    }

    pub fn write_diagonal_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,P")?;
        for (n, p) in self.diagonal.iter().enumerate() {
            writeln!(w, "{n},{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chirality {
    pub p_r: f64,
    pub p_l: f64,
    pub c_r: Option<f64>,
    pub c_l: Option<f64>,
}

/// Two-photon weight with both photons strictly right / left of `origin` (in cells).
pub fn chirality(psi: &StateVector, basis: &SectorBasis, origin: f64) -> Chirality {
    let (mut p_r, mut p_l) = (0.0, 0.0);
    for k in 0..basis.two_photon_dim() {
        let w = psi[k].norm_sqr();
        if w == 0.0 {
            continue;
        }
        let (i, j) = basis.pair_of(k);
        let (a, b) = ((i / 3) as f64, (j / 3) as f64);
        if a > origin && b > origin {
            p_r += w;
        } else if a < origin && b < origin {
            p_l += w;
        }
    }
    let total = p_r + p_l;
    let (c_r, c_l) = if total > 0.0 {
        (Some(p_r / total), Some(p_l / total))
    } else {
        (None, None)
    };
    Chirality { p_r, p_l, c_r, c_l }
}

/// Named real time series, one row per output time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ObservableSeries {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name).and_then(|c| c.last().copied())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .map(|x| if x.is_nan() { String::new() } else { x.to_string() })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
