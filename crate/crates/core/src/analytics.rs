//! Closed-form rates and couplings built on the doublon bands, and exponential fits
//! of simulated populations.
//!
//! `M` is the overlap of `a^dag_site beta^dag_{m, eps} |vac>` (normalized mode
//! operator, unnormalized product) with the Bloch doublon whose amplitudes are
//! `e^{iK x_c} psi(r, mu)`. With this convention the triggered rate
//! `Gamma = 2 g^2 |M|^2 / |v_g|` reproduces the simulated decay.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelError, Result};
use crate::lattice::{LatticeSpec, Sublattice};
use crate::spectral::{
    bloch_sector, cage_shapes, group_velocity, resonance_momentum, ChainSite, ClsLabel,
    DoublonWavefunction, CAGE,
};

/// `|<A_0|beta^dag_{+2,0}|vac>|^2` for normalized modes.
pub const NORMALIZED_CLS_OVERLAP: f64 = 0.5;
/// The same overlap for the bare operator string `2a_A + a_B - a_C + ...`.
pub const BARE_CLS_OVERLAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRate {
    pub k: f64,
    pub site: (i64, Sublattice),
    pub cls_cell: i64,
    pub label: ClsLabel,
    pub re: f64,
    pub im: f64,
}

impl TransitionRate {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// `M` from an already computed doublon wavefunction.
pub fn transition_overlap(
    psi: &DoublonWavefunction,
    shapes: &[[Complex64; 5]; 3],
    site: ChainSite,
    cls_cell: i64,
    label: ClsLabel,
) -> Complex64 {
    let slot = ClsLabel::ALL.iter().position(|l| *l == label).expect("label listed");
    CAGE.iter()
        .zip(shapes[slot])
        .map(|(&(dc, t), beta)| {
            let c = ChainSite::new(cls_cell + dc as i64, t);
            let weight = if c == site { beta * std::f64::consts::SQRT_2 } else { beta };
            weight.conj() * psi.amplitude(site, c)
        })
        .sum()
}

pub fn transition_rate_m(
    lattice: &LatticeSpec,
    band: usize,
    k: f64,
    site: ChainSite,
    cls_cell: i64,
    label: ClsLabel,
    r_max: usize,
) -> Result<TransitionRate> {
    let psi = bloch_sector(lattice, k, r_max)?.wavefunction(band)?;
    let m = transition_overlap(&psi, &cage_shapes(lattice)?, site, cls_cell, label);
    Ok(TransitionRate {
        k,
        site: (site.cell, site.sublattice),
        cls_cell,
        label,
        re: m.re,
        im: m.im,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPrediction {
    pub band: usize,
    pub g: f64,
    pub target_energy: f64,
    pub k_r: f64,
    /// Signed `dE/dK` at `k_r`.
    pub v_g: f64,
    pub m_abs: f64,
    pub gamma: f64,
    pub gamma_fit: Option<f64>,
    pub relative_deviation: Option<f64>,
}

impl DecayPrediction {
    pub fn with_fit(mut self, gamma_fit: f64) -> Self {
        self.gamma_fit = Some(gamma_fit);
        self.relative_deviation = Some((gamma_fit - self.gamma).abs() / self.gamma);
        self
    }
}

/// `Gamma = 2 g^2 |M(K_r)|^2 / |v_g|` for an emitter at `site_sublattice` of the
/// cell hosting the triggering mode.
pub fn triggered_decay_rate(
    lattice: &LatticeSpec,
    g: f64,
    band: usize,
    omega_e: f64,
    label: ClsLabel,
    site_sublattice: Sublattice,
    r_max: usize,
) -> Result<DecayPrediction> {
    let target = omega_e + label.energy(lattice.hopping);
    let k_r = resonance_momentum(lattice, band, target, r_max)?;
    let v_g = group_velocity(lattice, band, k_r, r_max)?;
    let m = transition_rate_m(lattice, band, k_r, ChainSite::new(0, site_sublattice), 0, label, r_max)?;
    let m_abs = m.value().norm();
    Ok(DecayPrediction {
        band,
        g,
        target_energy: target,
        k_r,
        v_g,
        m_abs,
        gamma: 2.0 * g * g * m_abs * m_abs / v_g.abs(),
        gamma_fit: None,
        relative_deviation: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiantRates {
    pub plus: f64,
    pub minus: f64,
    /// `plus / (plus + minus)`, absent when both rates vanish to rounding.
    pub chirality: Option<f64>,
}

/// `Gamma_{+-} = (Gamma_0 / 2) |1 + e^{i phi} e^{+- i K_r d}|^2`.
pub fn giant_decay_rates(gamma0: f64, phi: f64, d: f64, k_r: f64) -> GiantRates {
    let rate = |sign: f64| {
        let z = Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, phi + sign * k_r * d);
        0.5 * gamma0 * z.norm_sqr()
    };
    let (plus, minus) = (rate(1.0), rate(-1.0));
    let total = plus + minus;
    GiantRates {
        plus,
        minus,
        chirality: (total > 1e-12 * gamma0.abs()).then(|| plus / total),
    }
}

/// Doublon-mediated exchange `g^2 M^2 e^{i phi} / v` with `v = |dE/dK| > 0`.
pub fn effective_coupling_doublon(g: f64, m: Complex64, speed: f64, phi: f64) -> Result<Complex64> {
    if !(speed > 0.0) {
        return Err(Error::FlatBand { band: 0, k: f64::NAN });
    }
    Ok(m * m * Complex64::from_polar(g * g / speed, phi))
}

/// Auxiliary coupling whose dispersive exchange `overlap * g_a^2 / (omega_a - omega_cls)`
/// matches `|J_eff|`.
pub fn auxiliary_matching(
    g: f64,
    m: Complex64,
    speed: f64,
    omega_a: f64,
    omega_cls: f64,
    phi: f64,
    overlap: f64,
) -> Result<f64> {
    let delta = omega_a - omega_cls;
    if delta.abs() < 1e-12 {
        return Err(ModelError::invalid("omega_a", "auxiliary frequency degenerate with the CLS").into());
    }
    if !(overlap > 0.0) {
        return Err(ModelError::invalid("overlap", "overlap factor must be positive").into());
    }
    let j_eff = effective_coupling_doublon(g, m, speed, phi)?;
    Ok((j_eff.norm() * delta.abs() / overlap).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub gamma: f64,
    pub intercept: f64,
    pub std_error: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

pub const FIT_WINDOW: (f64, f64) = (0.1, 0.9);

/// Least squares of `ln P = intercept - gamma t` over samples with `P` inside `window`.
pub fn fit_exponential(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<ExpFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, p)| **p >= window.0 && **p <= window.1)
        .map(|(t, p)| (*t, p.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::NoExponentialRegime);
    }
    let nf = n as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::NoExponentialRegime);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let std_error = if n > 2 { (ss / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    if !(slope < 0.0) {
        return Err(Error::NoExponentialRegime);
    }
    Ok(ExpFit {
        gamma: -slope,
        intercept,
        std_error,
        residual_rms: (ss / nf).sqrt(),
        n_points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SectorBasis;
    use crate::hamiltonian::assemble;
    use crate::lattice::{Boundary, Model, SiteIndex};
    use crate::spectral::{cls_mode, DEFAULT_R_MAX};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn lat(u: f64) -> LatticeSpec {
        LatticeSpec::caged(40, u)
    }

    // Dense oracle: periodic 8-cell ring, doublon at K = pi/2 (E = 6.025132) picked out of
    // the (K, -K) doublet with the explicit one-cell translation matrix.
    fn ring_oracle_m(m_cell: usize) -> Complex64 {
        let n = 8;
        let ring = LatticeSpec::caged(n, 4.0).with_boundary(Boundary::Periodic);
        let model = Model::new(ring.clone(), vec![]).unwrap();
        let basis = SectorBasis::new(&model);
        let h = assemble(&model, &basis).to_dense();
        let d = basis.dim();
        let mut t = DMatrix::<Complex64>::zeros(d, d);
        for k in 0..d {
            let (i, j) = basis.pair_of(k);
            let (a, b) = ((i + 3) % (3 * n), (j + 3) % (3 * n));
            t[(basis.pair_index_unordered(a, b), k)] = Complex64::new(1.0, 0.0);
        }
        let eig = h.clone().symmetric_eigen();
        let e = eig.eigenvalues.iter().copied().find(|e| (e - 6.025_132).abs() < 1e-5).unwrap();
        let cols: Vec<usize> = (0..d).filter(|&c| (eig.eigenvalues[c] - e).abs() < 1e-9).collect();
        assert_eq!(cols.len(), 2);
        let sub = DMatrix::from_fn(d, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])]);
        let tr = sub.adjoint() * &t * &sub;
        let te = tr.clone().eigen_decomposition();
        // translation eigenvalue e^{-iK} for the e^{iK x_c} convention
        let want = Complex64::from_polar(1.0, -PI / 2.0);
        let (idx, _) = te
            .0
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - want).norm().partial_cmp(&(b.1 - want).norm()).unwrap())
            .unwrap();
        let mut v = &sub * te.1.column(idx);
        v /= Complex64::new(v.norm(), 0.0);
        let aa = v[basis.pair_index(0, 0)];
        v *= aa.conj() / aa.norm();
        let beta = cls_mode(&ring, m_cell, ClsLabel::Plus2).unwrap().dense(ring.n_sites());
        let site = SiteIndex::new(0, Sublattice::A).flat();
        let mut tvec = DVector::<Complex64>::zeros(d);
        for (c, b) in beta.iter().enumerate() {
            let w = if c == site { b * 2f64.sqrt() } else { *b };
            tvec[basis.pair_index_unordered(site, c)] += w;
        }
        (tvec.adjoint() * v)[0] * (n as f64).sqrt()
    }

    // eigen_decomposition for a small complex matrix via its 2x2 (or 1x1) block
    trait Eig2 {
        fn eigen_decomposition(self) -> (Vec<Complex64>, DMatrix<Complex64>);
    }
    impl Eig2 for DMatrix<Complex64> {
        fn eigen_decomposition(self) -> (Vec<Complex64>, DMatrix<Complex64>) {
            assert!(self.nrows() <= 2);
            if self.nrows() == 1 {
                return (vec![self[(0, 0)]], DMatrix::identity(1, 1));
            }
            let (a, b, c, d) = (self[(0, 0)], self[(0, 1)], self[(1, 0)], self[(1, 1)]);
            let tr = a + d;
            let disc = ((a - d) * (a - d) + b * c * 4.0).sqrt();
            let l = [(tr + disc) / 2.0, (tr - disc) / 2.0];
            let mut vecs = DMatrix::<Complex64>::zeros(2, 2);
            for (q, lam) in l.iter().enumerate() {
                let v = if b.norm() > 1e-12 {
                    DVector::from_vec(vec![b, lam - a])
                } else if c.norm() > 1e-12 {
                    DVector::from_vec(vec![lam - d, c])
                } else if q == 0 {
                    DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)])
                } else {
                    DVector::from_vec(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
                };
                let v = &v / Complex64::new(v.norm(), 0.0);
                vecs.set_column(q, &v);
            }
            (l.to_vec(), vecs)
        }
    }

    #[test]
    fn m_matches_dense_ring() {
        let oracle = ring_oracle_m(0);
        let m = transition_rate_m(&lat(4.0), 1, PI / 2.0, ChainSite::new(0, Sublattice::A), 0, ClsLabel::Plus2, DEFAULT_R_MAX)
            .unwrap()
            .value();
        assert!((m - oracle).norm() < 1e-10, "{m} vs {oracle}");
        assert!((m.norm() - 1.085_79).abs() < 1e-5, "{}", m.norm());
        for off in [1, 7] {
            assert!(ring_oracle_m(off).norm() < 1e-12);
        }
    }

    #[test]
    fn selection_rule() {
        let l = lat(4.0);
        for k in crate::spectral::uniform_k_grid(32) {
            let psi = bloch_sector(&l, k, DEFAULT_R_MAX).unwrap().wavefunction(1).unwrap();
            let shapes = cage_shapes(&l).unwrap();
            let a0 = ChainSite::new(0, Sublattice::A);
            for m in [-1, 1] {
                assert!(transition_overlap(&psi, &shapes, a0, m, ClsLabel::Plus2).norm() < 1e-10);
            }
            assert!(transition_overlap(&psi, &shapes, a0, 0, ClsLabel::Plus2).norm() > 0.5);
        }
    }

    #[test]
    fn translational_covariance() {
        let l = lat(4.0);
        let k = 1.1;
        let psi = bloch_sector(&l, k, DEFAULT_R_MAX).unwrap().wavefunction(1).unwrap();
        let shapes = cage_shapes(&l).unwrap();
        let m0 = transition_overlap(&psi, &shapes, ChainSite::new(0, Sublattice::A), 0, ClsLabel::Plus2);
        for n in [-3i64, 2, 17] {
            let mn = transition_overlap(&psi, &shapes, ChainSite::new(n, Sublattice::A), n, ClsLabel::Plus2);
            assert!((mn - m0 * Complex64::from_polar(1.0, k * n as f64)).norm() < 1e-12);
        }
    }

    #[test]
    fn trigger_rate_values() {
        let p4 = triggered_decay_rate(&lat(4.0), 0.02, 1, 4.02, ClsLabel::Plus2, Sublattice::A, DEFAULT_R_MAX).unwrap();
        assert!((p4.k_r / PI - 0.50949).abs() < 1e-4);
        assert!((p4.v_g + 0.173067).abs() < 1e-5, "{}", p4.v_g);
        assert!((p4.m_abs - 1.08729).abs() < 1e-4, "{}", p4.m_abs);
        assert!((p4.gamma - 0.0054647).abs() < 2e-7, "{}", p4.gamma);
        let p10 = triggered_decay_rate(&lat(10.0), 0.02, 1, 8.99, ClsLabel::Plus2, Sublattice::A, DEFAULT_R_MAX).unwrap();
        assert!((p10.gamma - 0.0057262).abs() < 2e-7, "{}", p10.gamma);
        assert!((p10.gamma / p4.gamma - 1.0).abs() < 0.15);
        let half = triggered_decay_rate(&lat(4.0), 0.01, 1, 4.02, ClsLabel::Plus2, Sublattice::A, DEFAULT_R_MAX).unwrap();
        assert!((p4.gamma / half.gamma - 4.0).abs() < 0.04);
        let err = triggered_decay_rate(&lat(4.0), 0.02, 1, 8.0, ClsLabel::Plus2, Sublattice::A, DEFAULT_R_MAX).unwrap_err();
        assert!(matches!(err, Error::OffResonant { .. }));
        assert!(err.to_string().contains("band spans"));
    }

    #[test]
    fn giant_rates() {
        let r = giant_decay_rates(1.0, -PI / 2.0, 1.0, PI / 2.0);
        assert!(r.minus.abs() < 1e-15);
        assert!((r.plus - 2.0).abs() < 1e-15);
        assert!((r.chirality.unwrap() - 1.0).abs() < 1e-15);
        let r = giant_decay_rates(0.3, 0.0, 0.0, 1.0);
        assert!((r.plus - 0.6).abs() < 1e-15 && (r.minus - 0.6).abs() < 1e-15);
        let r = giant_decay_rates(0.3, PI, 0.0, 1.0);
        assert!(r.plus < 1e-30 && r.minus < 1e-30 && r.chirality.is_none());
    }

    #[test]
    fn couplings() {
        let j = effective_coupling_doublon(0.02, Complex64::new(1.1, 0.0), 0.17, 0.0).unwrap();
        assert!(j.im.abs() < 1e-18 && j.re > 0.0);
        let j2 = effective_coupling_doublon(0.04, Complex64::new(1.1, 0.0), 0.17, 0.0).unwrap();
        assert!((j2.norm() / j.norm() - 4.0).abs() < 1e-12);
        assert!(effective_coupling_doublon(0.02, Complex64::new(1.1, 0.0), 0.0, 0.0).is_err());
        let p = triggered_decay_rate(&lat(4.0), 0.02, 1, 4.02, ClsLabel::Plus2, Sublattice::A, DEFAULT_R_MAX).unwrap();
        let m = Complex64::new(p.m_abs, 0.0);
        let je = effective_coupling_doublon(0.02, m, p.v_g.abs(), -PI / 2.0).unwrap();
        assert!((je.norm() - 0.0027324).abs() < 1e-6, "{}", je.norm());
        let ga = auxiliary_matching(0.02, m, p.v_g.abs(), 3.0, 2.0, -PI / 2.0, NORMALIZED_CLS_OVERLAP).unwrap();
        assert!((ga - 0.0739).abs() < 1e-3, "{ga}");
        assert!((ga / 0.072 - 1.0).abs() < 0.05);
        let near = auxiliary_matching(0.02, m, p.v_g.abs(), 2.0 + 1e-8, 2.0, 0.0, NORMALIZED_CLS_OVERLAP).unwrap();
        assert!(near < 1e-5);
        assert!(auxiliary_matching(0.02, m, p.v_g.abs(), 2.0, 2.0, 0.0, NORMALIZED_CLS_OVERLAP).is_err());
    }

    #[test]
    fn fits() {
        let t: Vec<f64> = (0..400).map(|q| q as f64).collect();
        let p: Vec<f64> = t.iter().map(|x| (-0.01 * x).exp()).collect();
        let f = fit_exponential(&t, &p, FIT_WINDOW).unwrap();
        assert!((f.gamma - 0.01).abs() < 1e-6);
        let frozen = vec![1.0; 400];
        assert!(matches!(fit_exponential(&t, &frozen, FIT_WINDOW), Err(Error::NoExponentialRegime)));
    }

    proptest! {
        #[test]
        fn giant_sum_rule(phi in -PI..PI, k in 0.0f64..PI, d in 0.0f64..6.0, g0 in 0.0f64..2.0) {
            let r = giant_decay_rates(g0, phi, d, k);
            let expect = 2.0 * g0 * (1.0 + phi.cos() * (k * d).cos());
            prop_assert!((r.plus + r.minus - expect).abs() < 1e-12);
        }

        #[test]
        fn gamma_scales_as_g_squared(g in 0.001f64..0.05) {
            let l = lat(4.0);
            let a = triggered_decay_rate(&l, g, 1, 4.02, ClsLabel::Plus2, Sublattice::A, 2).unwrap();
            let b = triggered_decay_rate(&l, g / 2.0, 1, 4.02, ClsLabel::Plus2, Sublattice::A, 2).unwrap();
            prop_assert!(a.gamma > 0.0);
            prop_assert!((a.gamma / b.gamma - 4.0).abs() < 0.04);
        }
    }
}
