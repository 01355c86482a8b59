//! Declarative runs: a TOML config names the lattice, emitters, initial state and
//! outputs; [`simulate`] produces the data and [`write_bundle`] lays it out on disk.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    auxiliary_matching, effective_coupling_doublon, fit_exponential, giant_decay_rates, triggered_decay_rate,
    DecayPrediction, ExpFit, GiantRates, FIT_WINDOW, NORMALIZED_CLS_OVERLAP,
};
use crate::basis::SectorBasis;
use crate::dynamics::{
    chirality, doublon_population, emitter_pair_population, emitter_population, evolve,
    field_maps, photon_number_profile, prepare_state, EvolveOptions, FieldMaps, InitialStateSpec,
    ObservableSeries, PhotonTerm,
};
use crate::error::{Error, ModelError, Result};
use crate::hamiltonian::assemble;
use crate::lattice::{EmitterSpec, Leg, LatticeSpec, Model, SiteIndex, Sublattice};
use crate::spectral::{
    band_structure, bloch_sector, cls_mode, uniform_k_grid, BandStructure, ClsLabel, DoublonWavefunction,
    DEFAULT_K_POINTS, DEFAULT_R_MAX,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub emitters: Vec<EmitterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialStateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeGrid>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub observables: ObservableConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    /// Spacing of output times.
    pub output_stride: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { tolerance: default_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsProbe {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub emitter: usize,
    pub cell: usize,
    pub label: ClsLabel,
}

impl ClsProbe {
    pub fn column(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("P_{}_{}", self.label.tag(), self.cell))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    #[serde(default)]
    pub cls: Vec<ClsProbe>,
    /// Cell coordinate splitting left from right; defaults to the centre of the
    /// lowest-id emitter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chirality_origin: Option<f64>,
    /// Time spacing of `photon_number.csv` snapshots; none writes only the final one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_number_stride: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_k_points")]
    pub k_points: usize,
    #[serde(default = "default_r_max")]
    pub r_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavefunction: Option<WavefunctionRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<TriggerAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<AuxiliaryAnalysis>,
}

fn default_k_points() -> usize {
    DEFAULT_K_POINTS
}

fn default_r_max() -> usize {
    DEFAULT_R_MAX
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k_points: DEFAULT_K_POINTS,
            r_max: DEFAULT_R_MAX,
            wavefunction: None,
            trigger: None,
            auxiliary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefunctionRequest {
    pub k: f64,
    #[serde(default = "first_band")]
    pub band: usize,
}

fn first_band() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerAnalysis {
    #[serde(default)]
    pub emitter: usize,
    #[serde(default = "first_band")]
    pub band: usize,
    #[serde(default = "plus2")]
    pub label: ClsLabel,
    /// Fit `P_e` of the emitter after the run.
    #[serde(default = "yes")]
    pub fit: bool,
}

fn plus2() -> ClsLabel {
    ClsLabel::Plus2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliaryAnalysis {
    pub emitter: usize,
    #[serde(default = "two")]
    pub omega_cls: f64,
    #[serde(default = "half")]
    pub overlap: f64,
}

fn two() -> f64 {
    2.0
}

fn half() -> f64 {
    NORMALIZED_CLS_OVERLAP
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> Result<Model> {
        Ok(Model::new(self.lattice.clone(), self.emitters.clone())?)
    }

    /// Output times `0, stride, ...` ending exactly at `t_max`.
    pub fn output_times(&self) -> Result<Vec<f64>> {
        let Some(tg) = &self.time else {
            return Ok(Vec::new());
        };
        if !(tg.t_max > 0.0 && tg.t_max.is_finite()) {
            return Err(ModelError::invalid("time.t_max", "must be positive and finite").into());
        }
        if !(tg.output_stride > 0.0 && tg.output_stride <= tg.t_max) {
            return Err(ModelError::invalid("time.output_stride", "must lie in (0, t_max]").into());
        }
        let n = (tg.t_max / tg.output_stride + 1e-9).floor() as usize;
        let mut times: Vec<f64> = (0..=n).map(|q| q as f64 * tg.output_stride).collect();
        if tg.t_max - times[n] > 1e-9 * tg.t_max {
            times.push(tg.t_max);
        } else {
            times[n] = tg.t_max;
        }
        Ok(times)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<Model> {
        let model = self.model()?;
        if self.analysis.k_points < 2 {
            return Err(ModelError::invalid("analysis.k_points", "need at least 2 points").into());
        }
        if self.analysis.r_max < 2 {
            return Err(ModelError::invalid("analysis.r_max", "must be at least 2").into());
        }
        match (&self.initial, &self.time) {
            (Some(_), None) => return Err(ModelError::invalid("time", "initial state given without a time grid").into()),
            (None, Some(_)) => return Err(ModelError::invalid("initial", "time grid given without an initial state").into()),
            _ => {}
        }
        self.output_times()?;
        if let Some(s) = self.observables.photon_number_stride {
            if !(s > 0.0) {
                return Err(ModelError::invalid("observables.photon_number_stride", "must be positive").into());
            }
        }
        for (q, p) in self.observables.cls.iter().enumerate() {
            if model.emitter(p.emitter).is_none() {
                return Err(ModelError::invalid(format!("observables.cls[{q}].emitter"), "unknown emitter id").into());
            }
            cls_mode(&self.lattice, p.cell, p.label).map_err(|e| prefix(e, &format!("observables.cls[{q}]")))?;
        }
        if let Some(tr) = &self.analysis.trigger {
            if model.emitter(tr.emitter).is_none() {
                return Err(ModelError::invalid("analysis.trigger.emitter", "unknown emitter id").into());
            }
        }
        if let Some(aux) = &self.analysis.auxiliary {
            if model.emitter(aux.emitter).is_none() {
                return Err(ModelError::invalid("analysis.auxiliary.emitter", "unknown emitter id").into());
            }
            if self.analysis.trigger.is_none() {
                return Err(ModelError::invalid("analysis.auxiliary", "needs analysis.trigger").into());
            }
        }
        Ok(model)
    }
}

fn prefix(e: Error, path: &str) -> Error {
    match e {
        Error::Model(m) => ModelError::invalid(format!("{path}.{}", m.field), m.message).into(),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Derived {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger: Option<DecayPrediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<ExpFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub giant: Option<GiantRates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_eff_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_a_matched: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub dim: usize,
    pub nnz_upper: usize,
    pub spectral_radius: f64,
    pub matvecs: usize,
    pub max_norm_drift: f64,
    pub max_energy_drift: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub bands: BandStructure,
    pub wavefunction: Option<DoublonWavefunction>,
    pub derived: Derived,
    pub series: Option<ObservableSeries>,
    /// `(t, <N(n)>)` snapshots.
    pub photon_number: Vec<(f64, Vec<f64>)>,
    pub final_fields: Option<FieldMaps>,
    pub diagnostics: Option<Diagnostics>,
}

fn analytic(config: &ScenarioConfig, model: &Model) -> Result<Derived> {
    let mut d = Derived::default();
    let Some(tr) = &config.analysis.trigger else {
        return Ok(d);
    };
    let em = model.emitter(tr.emitter).expect("validated");
    let leg = &em.legs[0];
    let p = triggered_decay_rate(
        &config.lattice,
        leg.amplitude,
        tr.band,
        em.frequency,
        tr.label,
        leg.sublattice,
        config.analysis.r_max,
    )
    .map_err(|e| prefix(e, "analysis.trigger"))?;
    if em.legs.len() == 2 {
        let dist = em.legs[1].cell as f64 - em.legs[0].cell as f64;
        let phi = em.legs[1].phase - em.legs[0].phase;
        d.giant = Some(giant_decay_rates(p.gamma, phi, dist, p.k_r));
        let m = Complex64::new(p.m_abs, 0.0);
        d.j_eff_abs = Some(effective_coupling_doublon(leg.amplitude, m, p.v_g.abs(), phi)?.norm());
        if let Some(aux) = &config.analysis.auxiliary {
            let a = model.emitter(aux.emitter).expect("validated");
            d.g_a_matched = Some(auxiliary_matching(
                leg.amplitude,
                m,
                p.v_g.abs(),
                a.frequency,
                aux.omega_cls,
                phi,
                aux.overlap,
            )?);
        }
    }
    d.trigger = Some(p);
    Ok(d)
}

/// Runs the scenario in memory.
pub fn simulate(config: &ScenarioConfig) -> Result<RunResult> {
    let model = config.validate()?;
    let lattice = model.lattice();
    let bands = band_structure(lattice, &uniform_k_grid(config.analysis.k_points), config.analysis.r_max)?;
    let wavefunction = match &config.analysis.wavefunction {
        Some(w) => Some(bloch_sector(lattice, w.k, config.analysis.r_max)?.wavefunction(w.band)?),
        None => None,
    };
    let mut derived = analytic(config, &model)?;
    let mut result = RunResult {
        config: config.clone(),
        bands,
        wavefunction,
        derived: Derived::default(),
        series: None,
        photon_number: Vec::new(),
        final_fields: None,
        diagnostics: None,
    };
    let Some(init) = &config.initial else {
        result.derived = derived;
        return Ok(result);
    };

    let clock = Instant::now();
    let basis = SectorBasis::new(&model);
    let h = assemble(&model, &basis);
    let psi0 = prepare_state(init, &model, &basis).map_err(|e| match e {
        Error::Model(m) if m.field.starts_with("photon") => {
            ModelError::invalid(format!("initial.{}", m.field), m.message).into()
        }
        other => other,
    })?;
    let times = config.output_times()?;
    let origin = config.observables.chirality_origin.unwrap_or_else(|| {
        model
            .emitters()
            .iter()
            .min_by_key(|e| e.id)
            .map(|e| e.center())
            .unwrap_or(lattice.n_cells as f64 / 2.0)
    });
    let probes: Vec<(String, usize, Vec<Complex64>)> = config
        .observables
        .cls
        .iter()
        .map(|p| {
            let mode = cls_mode(lattice, p.cell, p.label).expect("validated");
            (p.column(), p.emitter, mode.dense(lattice.n_sites()))
        })
        .collect();
    let mut ids: Vec<usize> = model.emitters().iter().map(|e| e.id).collect();
    ids.sort_unstable();

    let mut columns = vec!["t".to_string(), "norm".into(), "energy".into()];
    columns.extend(ids.iter().map(|id| format!("P_e{id}")));
    columns.extend(["P_D", "P_EE", "P_R", "P_L", "C_R", "C_L"].map(String::from));
    columns.extend(probes.iter().map(|p| p.0.clone()));
    let mut series = ObservableSeries::new(columns);

    let stride = config.time.as_ref().expect("validated").output_stride;
    let snap_every = config
        .observables
        .photon_number_stride
        .map(|s| ((s / stride).round() as usize).max(1));
    let last = times.len() - 1;
    let mut photon_number = Vec::new();
    let mut q = 0usize;
    let traj = evolve(&h, &psi0, &times, EvolveOptions::with_tol(config.integrator.tolerance), |t, psi| {
        let mut row = vec![t, psi.norm(), h.expectation(psi).re];
        row.extend(ids.iter().map(|id| emitter_population(psi, &basis, *id)));
        let ch = chirality(psi, &basis, origin);
        row.extend([
            doublon_population(psi, &basis),
            emitter_pair_population(psi, &basis),
            ch.p_r,
            ch.p_l,
            ch.c_r.unwrap_or(f64::NAN),
            ch.c_l.unwrap_or(f64::NAN),
        ]);
        for (_, id, f) in &probes {
            row.push(crate::dynamics::localized_population(psi, &basis, *id, f));
        }
        series.push(row);
        if q == last || snap_every.is_some_and(|k| q % k == 0) {
            photon_number.push((t, photon_number_profile(psi, &basis)));
        }
        q += 1;
        Ok(())
    })?;

    if let (Some(tr), Some(p)) = (&config.analysis.trigger, derived.trigger.clone()) {
        if tr.fit {
            let pe = series.column(&format!("P_e{}", tr.emitter)).expect("column");
            match fit_exponential(&times, &pe, FIT_WINDOW) {
                Ok(f) => {
                    derived.trigger = Some(p.with_fit(f.gamma));
                    derived.fit = Some(f);
                }
                Err(e) => derived.fit_error = Some(e.to_string()),
            }
        }
    }
    result.final_fields = Some(field_maps(&traj.final_state, &basis));
    result.diagnostics = Some(Diagnostics {
        dim: basis.dim(),
        nnz_upper: h.nnz_upper(),
        spectral_radius: traj.spectral_radius,
        matvecs: traj.matvecs,
        max_norm_drift: traj.max_norm_drift,
        max_energy_drift: traj.max_energy_drift,
        wall_seconds: clock.elapsed().as_secs_f64(),
    });
    result.series = Some(series);
    result.photon_number = photon_number;
    result.derived = derived;
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub code_version: &'static str,
    pub config: &'a ScenarioConfig,
    pub derived: &'a Derived,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<&'a Diagnostics>,
    pub files: Vec<&'static str>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every output file of `result` into `dir` (created if missing).
pub fn write_bundle(result: &RunResult, dir: &Path) -> Result<Vec<&'static str>> {
    fs::create_dir_all(dir)?;
    let mut files = vec!["bands.csv"];
    result.bands.write_csv(create(dir, "bands.csv")?)?;
    if let Some(w) = &result.wavefunction {
        w.write_csv(create(dir, "wavefunction.csv")?, true)?;
        files.push("wavefunction.csv");
    }
    if let Some(s) = &result.series {
        s.write_csv(create(dir, "observables.csv")?)?;
        files.push("observables.csv");
    }
    if let Some(f) = &result.final_fields {
        f.write_xc_r_csv(create(dir, "field_final.csv")?)?;
        f.write_mu_csv(create(dir, "field_mu.csv")?)?;
        f.write_diagonal_csv(create(dir, "field_diag.csv")?)?;
        files.extend(["field_final.csv", "field_mu.csv", "field_diag.csv"]);
    }
    if !result.photon_number.is_empty() {
        let mut w = create(dir, "photon_number.csv")?;
        writeln!(w, "t,n,N")?;
        for (t, prof) in &result.photon_number {
            for (n, x) in prof.iter().enumerate() {
                writeln!(w, "{t},{n},{x}")?;
            }
        }
        w.flush()?;
        files.push("photon_number.csv");
    }
    files.push("manifest.json");
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION"),
        config: &result.config,
        derived: &result.derived,
        diagnostics: result.diagnostics.as_ref(),
        files: files.clone(),
    };
    let mut w = create(dir, "manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(files)
}

/// [`simulate`] followed by [`write_bundle`] into `config.output_dir`.
pub fn run(config: &ScenarioConfig) -> Result<RunResult> {
    let result = simulate(config)?;
    write_bundle(&result, &config.output_dir)?;
    Ok(result)
}

// ---------------------------------------------------------------------------
// presets

pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub default_cells: usize,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo { name: "fig1-bands", description: "two-photon bands at U=4J and the doublon wavefunction at K=pi/2", default_cells: 30 },
    PresetInfo { name: "fig2-trigger", description: "emitter at A_n0, +2 CLS at n0, U=4J, g=0.02J, w_e=4.02J", default_cells: 300 },
    PresetInfo { name: "fig2-trigger-u10", description: "as fig2-trigger with U=10J, w_e=8.99J", default_cells: 300 },
    PresetInfo { name: "fig2-forbidden-right", description: "+2 CLS at n0+1: emission forbidden", default_cells: 300 },
    PresetInfo { name: "fig2-forbidden-left", description: "+2 CLS at n0-1: emission forbidden", default_cells: 300 },
    PresetInfo { name: "fig3a-superposition", description: "(sqrt2|+2_n0> + |+2_n0+1>)/sqrt3, g=0.03J", default_cells: 300 },
    PresetInfo { name: "fig3b-point", description: "photon at A_n0 = (|+2_n0> - |-2_n0>)/sqrt2, g=0.03J", default_cells: 300 },
    PresetInfo { name: "fig4-giant", description: "giant emitter on A_n0, A_n0+1 with phi=-pi/2, CLS on both legs", default_cells: 300 },
    PresetInfo { name: "fig5-optimal", description: "fig4-giant plus auxiliary emitter g_a=0.072J, phi_a=-pi/2, w_a=3J", default_cells: 300 },
    PresetInfo { name: "fig5-partial", description: "fig5-optimal started from photons at A_n0 and A_n0+1", default_cells: 300 },
];

pub fn list_presets() -> &'static [PresetInfo] {
    PRESETS
}

const G: f64 = 0.02;
const G_POINT: f64 = 0.03;
const G_AUX: f64 = 0.072;
const OMEGA_AUX: f64 = 3.0;

fn small(id: usize, omega: f64, cell: usize, g: f64) -> EmitterSpec {
    EmitterSpec::small(id, omega, SiteIndex::new(cell, Sublattice::A), g)
}

fn two_leg(id: usize, omega: f64, cell: usize, g: f64, phi: f64) -> EmitterSpec {
    let leg = |c, phase| Leg {
        cell: c,
        sublattice: Sublattice::A,
        amplitude: g,
        phase,
    };
    EmitterSpec {
        id,
        frequency: omega,
        legs: vec![leg(cell, 0.0), leg(cell + 1, phi)],
    }
}

fn probe(name: &str, emitter: usize, cell: usize, label: ClsLabel) -> ClsProbe {
    ClsProbe {
        name: Some(name.to_string()),
        emitter,
        cell,
        label,
    }
}

fn dynamic(name: &str, n: usize, u: f64, emitters: Vec<EmitterSpec>, photon: Vec<PhotonTerm>, t_max: f64) -> ScenarioConfig {
    ScenarioConfig {
        preset: Some(name.to_string()),
        output_dir: PathBuf::from(format!("out/{name}")),
        lattice: LatticeSpec::caged(n, u),
        emitters,
        initial: Some(InitialStateSpec { excited: vec![0], photon }),
        time: Some(TimeGrid { t_max, output_stride: 5.0 }),
        integrator: IntegratorConfig::default(),
        observables: ObservableConfig {
            photon_number_stride: Some(25.0),
            ..Default::default()
        },
        analysis: AnalysisConfig {
            trigger: Some(TriggerAnalysis {
                emitter: 0,
                band: 1,
                label: ClsLabel::Plus2,
                fit: true,
            }),
            ..Default::default()
        },
    }
}

/// Builds a preset; `n_cells` replaces the default chain length and recentres the
/// emitters on cell `n_cells / 2`.
pub fn preset(name: &str, n_cells: Option<usize>) -> Result<ScenarioConfig> {
    let info = PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
    let n = n_cells.unwrap_or(info.default_cells);
    if n < 6 {
        return Err(ModelError::invalid("lattice.n_cells", "presets need at least 6 cells").into());
    }
    let n0 = n / 2;
    let plus = ClsLabel::Plus2;
    let mut c = match name {
        "fig1-bands" => ScenarioConfig {
            preset: Some(name.to_string()),
            output_dir: PathBuf::from(format!("out/{name}")),
            lattice: LatticeSpec::caged(n, 4.0),
            emitters: Vec::new(),
            initial: None,
            time: None,
            integrator: IntegratorConfig::default(),
            observables: ObservableConfig::default(),
            analysis: AnalysisConfig {
                wavefunction: Some(WavefunctionRequest { k: PI / 2.0, band: 1 }),
                ..Default::default()
            },
        },
        "fig2-trigger" | "fig2-forbidden-right" | "fig2-forbidden-left" => {
            let cell = match name {
                "fig2-forbidden-right" => n0 + 1,
                "fig2-forbidden-left" => n0 - 1,
                _ => n0,
            };
            let mut c = dynamic(name, n, 4.0, vec![small(0, 4.02, n0, G)], vec![PhotonTerm::cls(cell, plus, 1.0)], 750.0);
            c.observables.cls = vec![probe("P_cls", 0, cell, plus)];
            c
        }
        "fig2-trigger-u10" => {
            let mut c = dynamic(name, n, 10.0, vec![small(0, 8.99, n0, G)], vec![PhotonTerm::cls(n0, plus, 1.0)], 750.0);
            c.observables.cls = vec![probe("P_cls", 0, n0, plus)];
            c
        }
        "fig3a-superposition" => {
            let photon = vec![PhotonTerm::cls(n0, plus, 2f64.sqrt()), PhotonTerm::cls(n0 + 1, plus, 1.0)];
            let mut c = dynamic(name, n, 4.0, vec![small(0, 4.02, n0, G_POINT)], photon, 700.0);
            c.observables.cls = vec![probe("P_+2_n0", 0, n0, plus), probe("P_+2_n1", 0, n0 + 1, plus)];
            c
        }
        "fig3b-point" => {
            let photon = vec![PhotonTerm::point(SiteIndex::new(n0, Sublattice::A), 1.0)];
            let mut c = dynamic(name, n, 4.0, vec![small(0, 4.02, n0, G_POINT)], photon, 700.0);
            c.observables.cls = vec![probe("P_+2_n0", 0, n0, plus), probe("P_-2_n0", 0, n0, ClsLabel::Minus2)];
            c
        }
        "fig4-giant" | "fig5-optimal" => {
            let photon = vec![PhotonTerm::cls(n0, plus, 1.0), PhotonTerm::cls(n0 + 1, plus, 1.0)];
            giant_preset(name, n, n0, photon)
        }
        "fig5-partial" => {
            let photon = vec![
                PhotonTerm::point(SiteIndex::new(n0, Sublattice::A), 1.0),
                PhotonTerm::point(SiteIndex::new(n0 + 1, Sublattice::A), 1.0),
            ];
            giant_preset(name, n, n0, photon)
        }
        _ => unreachable!("listed preset"),
    };
    if matches!(
        name,
        "fig2-forbidden-right" | "fig2-forbidden-left" | "fig3a-superposition" | "fig3b-point" | "fig5-partial"
    ) {
        // plateaus or frozen emitters: no exponential regime to fit
        if let Some(t) = c.analysis.trigger.as_mut() {
            t.fit = false;
        }
    }
    c.preset = Some(name.to_string());
    Ok(c)
}

fn giant_preset(name: &str, n: usize, n0: usize, photon: Vec<PhotonTerm>) -> ScenarioConfig {
    let plus = ClsLabel::Plus2;
    let mut emitters = vec![two_leg(0, 4.02, n0, G, -PI / 2.0)];
    let aux = name != "fig4-giant";
    if aux {
        emitters.push(two_leg(1, OMEGA_AUX, n0, G_AUX, -PI / 2.0));
    }
    let t_max = if aux { 750.0 } else { 700.0 };
    let mut c = dynamic(name, n, 4.0, emitters, photon, t_max);
    c.observables.cls = vec![probe("P_l", 0, n0, plus), probe("P_r", 0, n0 + 1, plus)];
    if aux {
        c.analysis.auxiliary = Some(AuxiliaryAnalysis {
            emitter: 1,
            omega_cls: 2.0,
            overlap: NORMALIZED_CLS_OVERLAP,
        });
    }
    c
}

/// TOML text of a preset.
pub fn dump_config(name: &str) -> Result<String> {
    preset(name, None)?.to_toml()
}

// ---------------------------------------------------------------------------
// sweeps

/// Cartesian grid over dotted config paths, e.g. `emitters.1.legs.1.phase`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let g: SweepGrid = toml::from_str(text).map_err(|e| Error::Config(format!("sweep: {e}")))?;
        if g.grid.is_empty() || g.grid.values().any(|v| v.is_empty()) {
            return Err(Error::Config("sweep: grid needs at least one value per key".into()));
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Every grid point as `(path, value)` assignments, last key varying fastest.
    pub fn points(&self) -> Vec<Vec<(String, toml::Value)>> {
        let mut out: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
        for (k, vals) in &self.grid {
            out = out
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((k.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        out
    }
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let bad = |msg: &str| Error::Config(format!("sweep key '{path}': {msg}"));
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (q, part) in parts.iter().enumerate() {
        let last = q + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.get_mut(*part).ok_or_else(|| bad(&format!("no field '{part}'")))?
            }
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| bad(&format!("'{part}' is not an index")))?;
                let len = a.len();
                let slot = a.get_mut(i).ok_or_else(|| bad(&format!("index {i} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(&format!("'{part}' is not a table or array"))),
        };
    }
    Err(bad("empty path"))
}

pub fn apply_assignments(base: &ScenarioConfig, assign: &[(String, toml::Value)]) -> Result<ScenarioConfig> {
    let mut v = toml::Value::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, val) in assign {
        set_path(&mut v, k, val.clone())?;
    }
    v.try_into().map_err(|e: toml::de::Error| Error::Config(format!("sweep: {e}")))
}

pub struct SweepPoint {
    pub index: usize,
    pub assignments: Vec<(String, toml::Value)>,
    pub result: Result<RunResult>,
}

/// Runs every grid point in parallel, each into `out/point-XXX`, and writes
/// `out/sweep.csv` with the final observables of each point.
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid, out: &Path) -> Result<Vec<SweepPoint>> {
    let points = grid.points();
    let configs: Vec<ScenarioConfig> = points
        .iter()
        .enumerate()
        .map(|(q, a)| {
            let mut c = apply_assignments(base, a)?;
            c.output_dir = out.join(format!("point-{q:03}"));
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(out)?;
    let results: Vec<SweepPoint> = configs
        .par_iter()
        .zip(points.into_par_iter())
        .enumerate()
        .map(|(index, (c, assignments))| SweepPoint {
            index,
            assignments,
            result: run(c),
        })
        .collect();

    let mut w = create(out, "sweep.csv")?;
    let keys: Vec<&String> = grid.grid.keys().collect();
    let cols: Vec<String> = results
        .iter()
        .find_map(|p| p.result.as_ref().ok().and_then(|r| r.series.as_ref()).map(|s| s.columns.clone()))
        .unwrap_or_default();
    let mut head: Vec<String> = vec!["point".into()];
    head.extend(keys.iter().map(|k| k.to_string()));
    head.push("status".into());
    head.extend(cols.iter().map(|c| format!("final_{c}")));
    writeln!(w, "{}", head.join(","))?;
    for p in &results {
        let mut row = vec![p.index.to_string()];
        row.extend(p.assignments.iter().map(|(_, v)| v.to_string().replace(',', ";")));
        match &p.result {
            Ok(r) => {
                row.push("ok".into());
                for c in &cols {
                    let x = r.series.as_ref().and_then(|s| s.last(c)).unwrap_or(f64::NAN);
                    row.push(if x.is_nan() { String::new() } else { x.to_string() });
                }
            }
            Err(e) => {
                row.push(format!("error: {}", e.to_string().replace(',', ";")));
                row.extend(cols.iter().map(|_| String::new()));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(results)
}
