//! Experiment configuration, orchestration and result files.
//!
//! A run walks Trotter steps `K = 1..=steps`. For each step and each realization (an
//! independent noisy copy standing in for one tile of a hardware layout) it builds the EV
//! circuit for `Z_site`, reduces it to the light cone, samples noisy shots, postselects,
//! tomographs the ancilla, trains CDR when requested and reports every requested
//! estimator next to an `exact` reference row.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdr::{self, EvcdrConfig, IdealBackend, Intercept, NoisyBackend, NoisyMode, Weighting};
use crate::error::{Error, Result};
use crate::ev::{
    self, build_ev_circuit, lightcone, lightcone_reduce, Bootstrap, EstimatorContext,
    PostselectionRule, SamplingPlan, Variant,
};
use crate::ising::{
    exact_magnetization, magnetization_observable, trotter_circuit, trotter_magnetization,
    IsingModel, LatticeKind, SpinLattice, MAX_EXACT_SITES,
};
use crate::pauli::PauliString;
use crate::statevector::{stream_rng, Basis, NoiseModel, PauliChannel};

pub const CSV_HEADER: [&str; 8] = [
    "t",
    "variant",
    "estimate",
    "variance",
    "error",
    "p0",
    "purity",
    "realization",
];

/// Largest light cone (system qubits) the sampled backend will simulate.
pub const MAX_LIGHTCONE_QUBITS: usize = 29;

// ---------------------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub realizations: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default)]
    pub reference: ReferenceKind,
    pub model: ModelSpec,
    pub plan: PlanSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub shots: ShotSpec,
    #[serde(default)]
    pub postselection: PostselectionSpec,
    #[serde(default)]
    pub cdr: CdrSpec,
}

fn one() -> usize {
    1
}

fn default_variants() -> Vec<String> {
    vec!["standard".into(), "evcdr".into()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Noiseless Trotter circuit (what EV mitigates towards).
    #[default]
    Trotter,
    /// Exact time evolution under `H`.
    Exact,
    /// No reference; errors are reported as NaN.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub lattice: LatticeKind,
    /// Edge-list file for `kind = "custom"`, relative to the config file.
    #[serde(default)]
    pub edge_list: Option<PathBuf>,
    pub j: f64,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub steps: usize,
    pub tau: f64,
    pub site: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    None,
    /// Local depolarizing channels after every one- and two-qubit gate.
    Depolarizing {
        p1: f64,
        p2: f64,
        /// Realization `r` scales both rates by a factor drawn from `[1-spread, 1+spread]`.
        #[serde(default)]
        spread: f64,
    },
    /// Sparse Pauli channels, e.g. `one_qubit = [{ pauli = "X", rate = 1e-3 }]`.
    Pauli {
        #[serde(default)]
        one_qubit: Vec<PauliRate>,
        #[serde(default)]
        two_qubit: Vec<PauliRate>,
        #[serde(default)]
        spread: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PauliRate {
    pub pauli: String,
    pub rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    #[default]
    Sampled,
    /// Density-matrix evolution, no shot noise.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotSpec {
    #[serde(default)]
    pub mode: ShotMode,
    /// Split evenly across measured bases and realizations.
    #[serde(default = "default_shots")]
    pub per_step: usize,
    /// Shots per basis for each training circuit; defaults to the target's share.
    #[serde(default)]
    pub training_per_basis: Option<usize>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
}

fn default_shots() -> usize {
    80_000
}

fn default_trajectories() -> usize {
    64
}

impl Default for ShotSpec {
    fn default() -> Self {
        ShotSpec {
            mode: ShotMode::Sampled,
            per_step: default_shots(),
            training_per_basis: None,
            trajectories: default_trajectories(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostselectionMode {
    /// Measured site and its lattice neighbours must read 0; `tolerance` flips elsewhere.
    #[default]
    Neighborhood,
    /// All system qubits must read 0.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostselectionSpec {
    #[serde(default)]
    pub mode: PostselectionMode,
    #[serde(default = "one")]
    pub tolerance: usize,
}

impl Default for PostselectionSpec {
    fn default() -> Self {
        PostselectionSpec {
            mode: PostselectionMode::Neighborhood,
            tolerance: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingSpec {
    Ols,
    #[default]
    Wls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptSpec {
    Free,
    Zero,
}

impl From<InterceptSpec> for Intercept {
    fn from(s: InterceptSpec) -> Self {
        match s {
            InterceptSpec::Free => Intercept::Free,
            InterceptSpec::Zero => Intercept::Zero,
        }
    }
}

fn free() -> InterceptSpec {
    InterceptSpec::Free
}

fn zero() -> InterceptSpec {
    InterceptSpec::Zero
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdealSpec {
    #[default]
    NearClifford,
    Statevector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdrSpec {
    /// Free (non-Clifford) rotations per training circuit, capped per step at one less
    /// than the light-cone rotation count.
    #[serde(default = "default_l")]
    pub l: usize,
    /// Training circuits per fit.
    #[serde(default = "default_m_count")]
    pub m_count: usize,
    #[serde(default)]
    pub weighting: WeightingSpec,
    /// `f_X` carries the additive term `Ω_X`.
    #[serde(default = "free")]
    pub intercept_x: InterceptSpec,
    /// `f_Z` is pure damping for Pauli channels, so it is fitted through the origin.
    #[serde(default = "zero")]
    pub intercept_z: InterceptSpec,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub ideal: IdealSpec,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_l() -> usize {
    3
}

fn default_m_count() -> usize {
    30
}

fn default_bootstrap() -> usize {
    100
}

fn default_budget() -> usize {
    crate::stabilizer::DEFAULT_BRANCH_BUDGET
}

impl Default for CdrSpec {
    fn default() -> Self {
        CdrSpec {
            l: default_l(),
            m_count: default_m_count(),
            weighting: WeightingSpec::Wls,
            intercept_x: free(),
            intercept_z: zero(),
            bootstrap: default_bootstrap(),
            ideal: IdealSpec::NearClifford,
            budget: default_budget(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(config_err(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn parse_rates(n: usize, rates: &[PauliRate], what: &str) -> Result<Vec<(PauliString, f64)>> {
    rates
        .iter()
        .map(|r| {
            let p: PauliString = r
                .pauli
                .parse()
                .map_err(|_| config_err(format!("noise.{what}: bad Pauli {:?}", r.pauli)))?;
            if p.n_qubits() != n {
                return Err(config_err(format!(
                    "noise.{what}: {:?} must act on {n} qubit(s)",
                    r.pauli
                )));
            }
            if p.is_identity() {
                return Err(config_err(format!("noise.{what}: identity listed as an error")));
            }
            check_probability(&format!("noise.{what} rate for {}", r.pauli), r.rate)?;
            Ok((p, r.rate))
        })
        .collect()
}

impl NoiseSpec {
    fn spread(&self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Depolarizing { spread, .. } | NoiseSpec::Pauli { spread, .. } => *spread,
        }
    }

    /// Noise model with every rate multiplied by `factor`.
    pub fn model(&self, factor: f64) -> Result<NoiseModel> {
        match self {
            NoiseSpec::None => Ok(NoiseModel::noiseless()),
            NoiseSpec::Depolarizing { p1, p2, .. } => {
                NoiseModel::depolarizing((p1 * factor).min(1.0), (p2 * factor).min(1.0))
            }
            NoiseSpec::Pauli {
                one_qubit,
                two_qubit,
                ..
            } => {
                let build = |n: usize, rates: &[PauliRate], what: &str| -> Result<Option<PauliChannel>> {
                    if rates.is_empty() {
                        return Ok(None);
                    }
                    let errors = parse_rates(n, rates, what)?
                        .into_iter()
                        .map(|(p, r)| (p, r * factor))
                        .collect();
                    PauliChannel::sparse(n, errors).map(Some)
                };
                Ok(NoiseModel {
                    one_qubit: build(1, one_qubit, "one_qubit")?,
                    two_qubit: build(2, two_qubit, "two_qubit")?,
                    final_channel: None,
                })
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let spread = self.spread();
        if !(0.0..1.0).contains(&spread) {
            return Err(config_err(format!("noise.spread = {spread} must lie in [0, 1)")));
        }
        match self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Depolarizing { p1, p2, .. } => {
                check_probability("noise.p1", *p1)?;
                check_probability("noise.p2", *p2)?;
                check_probability("noise.p1 * (1 + spread)", p1 * (1.0 + spread))?;
                check_probability("noise.p2 * (1 + spread)", p2 * (1.0 + spread))
            }
            NoiseSpec::Pauli {
                one_qubit,
                two_qubit,
                ..
            } => {
                for (n, rates, what) in [(1, one_qubit, "one_qubit"), (2, two_qubit, "two_qubit")] {
                    let total: f64 = parse_rates(n, rates, what)?.iter().map(|(_, r)| r).sum();
                    check_probability(&format!("noise.{what} total rate * (1 + spread)"), total * (1.0 + spread))?;
                }
                Ok(())
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    /// Parse a config file; a relative `edge_list` is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(rel) = cfg.model.edge_list.as_mut() {
            if rel.is_relative() {
                if let Some(dir) = path.parent() {
                    *rel = dir.join(&*rel);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn parsed_variants(&self) -> Result<Vec<Variant>> {
        self.variants
            .iter()
            .map(|v| {
                v.parse::<Variant>().map_err(|_| {
                    let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                    config_err(format!("unknown variant {v:?}; expected one of {}", known.join(", ")))
                })
            })
            .collect()
    }

    pub fn lattice(&self) -> Result<SpinLattice> {
        match (&self.model.lattice, &self.model.edge_list) {
            (LatticeKind::Custom, Some(path)) => {
                let f = fs::File::open(path)
                    .map_err(|e| config_err(format!("cannot open {}: {e}", path.display())))?;
                SpinLattice::read_edge_list(std::io::BufReader::new(f))
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))
            }
            (LatticeKind::Custom, None) => Err(config_err("model.lattice kind = \"custom\" needs model.edge_list")),
            (_, Some(_)) => Err(config_err("model.edge_list is only used with kind = \"custom\"")),
            (kind, None) => SpinLattice::build(kind).map_err(|e| config_err(format!("model.lattice: {e}"))),
        }
    }

    pub fn ising_model(&self) -> Result<IsingModel> {
        IsingModel::new(self.lattice()?, self.model.j, self.model.h)
            .map_err(|e| config_err(format!("model: {e}")))
    }

    /// Bases measured on target circuits: the union of what the variants need.
    pub fn bases(&self) -> Result<Vec<Basis>> {
        let mut out: Vec<Basis> = self
            .parsed_variants()?
            .iter()
            .flat_map(|v| v.required_bases().iter().copied())
            .collect();
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn shots_per_basis(&self) -> Result<usize> {
        let split = self.bases()?.len() * self.realizations;
        Ok(self.shots.per_step / split.max(1))
    }

    /// Check everything that can be checked without simulating.
    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(config_err("realizations must be positive"));
        }
        let variants = self.parsed_variants()?;
        if variants.is_empty() {
            return Err(config_err("variants must list at least one estimator"));
        }
        let model = self.ising_model()?;
        let p = &self.plan;
        if p.steps == 0 {
            return Err(config_err("plan.steps must be positive"));
        }
        if !(p.tau.is_finite() && p.tau > 0.0) {
            return Err(config_err(format!("plan.tau = {} must be positive", p.tau)));
        }
        if p.site >= model.n_sites() {
            return Err(config_err(format!(
                "plan.site = {} out of range for {} sites",
                p.site,
                model.n_sites()
            )));
        }
        if self.reference == ReferenceKind::Exact && model.n_sites() > MAX_EXACT_SITES {
            return Err(config_err(format!(
                "reference = \"exact\" supports at most {MAX_EXACT_SITES} sites"
            )));
        }
        self.noise.validate()?;
        if self.shots.mode == ShotMode::Sampled {
            if self.shots.trajectories == 0 {
                return Err(config_err("shots.trajectories must be positive"));
            }
            if self.shots_per_basis()? == 0 {
                return Err(config_err(format!(
                    "shots.per_step = {} leaves no shots per basis and realization",
                    self.shots.per_step
                )));
            }
            if self.shots.training_per_basis == Some(0) {
                return Err(config_err("shots.training_per_basis must be positive"));
            }
        }
        if variants.contains(&Variant::Evcdr) {
            let c = &self.cdr;
            if c.m_count < 2 {
                return Err(config_err("cdr.m_count must be at least 2"));
            }
            if c.l > c.budget {
                return Err(config_err(format!(
                    "cdr.l = {} exceeds cdr.budget = {}",
                    c.l, c.budget
                )));
            }
            if self.shots.mode == ShotMode::Sampled && c.bootstrap < 2 {
                return Err(config_err("cdr.bootstrap must be at least 2 for sampled runs"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------------------
// Results

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub t: f64,
    pub variant: String,
    pub estimate: f64,
    pub variance: f64,
    pub error: f64,
    pub p0: f64,
    pub purity: f64,
    pub realization: usize,
}

impl ResultRow {
    fn new(t: f64, variant: &str, estimate: f64, variance: f64, reference: Option<f64>, p0: f64, purity: f64, realization: usize) -> Self {
        ResultRow {
            t,
            variant: variant.to_string(),
            estimate,
            variance,
            error: reference.map_or(f64::NAN, |r| (estimate - r).abs()),
            p0,
            purity,
            realization,
        }
    }
}

/// A step, or one estimator at a step, dropped for one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedStep {
    pub step: usize,
    pub realization: usize,
    /// `None` when the whole step was dropped.
    pub variant: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub skipped: Vec<SkippedStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::InvalidArgument(format!("unknown format {s:?}"))),
        }
    }
}

/// NaN and infinities are not JSON numbers; they are written as strings.
mod json_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(v.to_string()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    t: f64,
    variant: String,
    #[serde(with = "json_float")]
    estimate: f64,
    #[serde(with = "json_float")]
    variance: f64,
    #[serde(with = "json_float")]
    error: f64,
    #[serde(with = "json_float")]
    p0: f64,
    #[serde(with = "json_float")]
    purity: f64,
    realization: usize,
}

impl From<&ResultRow> for JsonRow {
    fn from(r: &ResultRow) -> Self {
        JsonRow {
            t: r.t,
            variant: r.variant.clone(),
            estimate: r.estimate,
            variance: r.variance,
            error: r.error,
            p0: r.p0,
            purity: r.purity,
            realization: r.realization,
        }
    }
}

impl From<JsonRow> for ResultRow {
    fn from(r: JsonRow) -> Self {
        ResultRow {
            t: r.t,
            variant: r.variant,
            estimate: r.estimate,
            variance: r.variance,
            error: r.error,
            p0: r.p0,
            purity: r.purity,
            realization: r.realization,
        }
    }
}

pub fn write_rows<W: Write>(w: W, rows: &[ResultRow], format: Format) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("result rows"));
    }
    match format {
        Format::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            for r in rows {
                wr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            wr.flush()?;
        }
        Format::Json => {
            let json: Vec<JsonRow> = rows.iter().map(JsonRow::from).collect();
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, &json).map_err(|e| Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_rows<R: Read>(r: R, format: Format) -> Result<Vec<ResultRow>> {
    match format {
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(r);
            let header = rd.headers().map_err(|e| Error::Io(e.to_string()))?;
            if header.iter().ne(CSV_HEADER.iter().copied()) {
                return Err(Error::Io(format!("unexpected CSV header {header:?}")));
            }
            rd.deserialize()
                .map(|r| r.map_err(|e| Error::Io(e.to_string())))
                .collect()
        }
        Format::Json => {
            let rows: Vec<JsonRow> = serde_json::from_reader(r).map_err(|e| Error::Io(e.to_string()))?;
            Ok(rows.into_iter().map(ResultRow::from).collect())
        }
    }
}

/// Write `rows` to `path`. Nothing is created when `rows` is empty.
pub fn emit_results(path: &Path, rows: &[ResultRow], format: Format) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("result rows"));
    }
    let mut buf = Vec::new();
    write_rows(&mut buf, rows, format)?;
    fs::write(path, buf)?;
    Ok(())
}

// ---------------------------------------------------------------------------------------
// Orchestration

const PURPOSE_SHOTS: u64 = 1;
const PURPOSE_TRAINING: u64 = 2;
const PURPOSE_BOOTSTRAP: u64 = 3;
const PURPOSE_NOISE: u64 = 4;

/// Independent 64-bit seed for `(step, realization, purpose)`.
pub fn derive_seed(seed: u64, step: usize, realization: usize, purpose: u64) -> u64 {
    let stream = ((step as u64) << 40) ^ ((realization as u64) << 8) ^ purpose;
    stream_rng(seed, stream).next_u64()
}

/// Rate multiplier for a realization, uniform in `[1-spread, 1+spread]`.
fn realization_factor(seed: u64, realization: usize, spread: f64) -> f64 {
    if spread == 0.0 {
        return 1.0;
    }
    let u = derive_seed(seed, 0, realization, PURPOSE_NOISE) as f64 / u64::MAX as f64;
    1.0 + spread * (2.0 * u - 1.0)
}

fn postselection_rule(cfg: &ExperimentConfig, model: &IsingModel) -> PostselectionRule {
    match cfg.postselection.mode {
        PostselectionMode::Exact => PostselectionRule::exact(),
        PostselectionMode::Neighborhood => {
            let site = cfg.plan.site;
            let mut hood = model.lattice.neighbors(site);
            hood.push(site);
            PostselectionRule::new(hood, cfg.postselection.tolerance)
        }
    }
}

/// Reference `M(t)` after `steps` Trotter steps.
pub fn reference_value(cfg: &ExperimentConfig, model: &IsingModel, steps: usize) -> Result<Option<f64>> {
    let p = &cfg.plan;
    match cfg.reference {
        ReferenceKind::None => Ok(None),
        ReferenceKind::Trotter => trotter_magnetization(model, p.tau, steps, p.site).map(Some),
        ReferenceKind::Exact => exact_magnetization(model, steps as f64 * p.tau, p.site).map(Some),
    }
}

struct StepJob {
    step: usize,
    realization: usize,
}

fn run_job(
    cfg: &ExperimentConfig,
    model: &IsingModel,
    variants: &[Variant],
    rule: &PostselectionRule,
    reference: Option<f64>,
    job: &StepJob,
) -> Result<(Vec<ResultRow>, Vec<SkippedStep>)> {
    let p = &cfg.plan;
    let t = job.step as f64 * p.tau;
    let v = magnetization_observable(model.n_sites(), p.site)?;
    let u = trotter_circuit(model, p.tau, job.step);
    let cone = lightcone(&u, &v);
    if cone.qubits.len() > MAX_LIGHTCONE_QUBITS {
        return Err(Error::InvalidArgument(format!(
            "light cone at step {} spans {} qubits (limit {MAX_LIGHTCONE_QUBITS})",
            job.step,
            cone.qubits.len()
        )));
    }
    let ev = lightcone_reduce(&build_ev_circuit(&u, &v)?)?;
    let noise = cfg
        .noise
        .model(realization_factor(cfg.seed, job.realization, cfg.noise.spread()))?;
    let shots_seed = derive_seed(cfg.seed, job.step, job.realization, PURPOSE_SHOTS);
    let bases = cfg.bases()?;
    let target_per_basis = cfg.shots_per_basis()?;
    let mode = |per_basis: usize, bases: Vec<Basis>| match cfg.shots.mode {
        ShotMode::Exact => NoisyMode::Exact,
        ShotMode::Sampled => NoisyMode::Sampled(SamplingPlan {
            bases,
            shots_per_basis: per_basis,
            trajectories: cfg.shots.trajectories,
            seed: 0,
        }),
    };
    let target_backend = NoisyBackend {
        noise: noise.clone(),
        mode: mode(target_per_basis, bases),
        rule: rule.clone(),
        bootstrap_resamples: cfg.cdr.bootstrap,
    };
    let (tomogram, _, _) = cdr::noisy_measurement(&ev, &target_backend, shots_seed)?;
    let (executed, _) = cdr::executable(&ev, &noise, rule)?;

    let mut ctx = EstimatorContext::with_dimension(executed.dimension());
    if cfg.shots.mode == ShotMode::Sampled && cfg.cdr.bootstrap >= 2 {
        ctx.bootstrap = Some(Bootstrap {
            resamples: cfg.cdr.bootstrap,
            seed: derive_seed(cfg.seed, job.step, job.realization, PURPOSE_BOOTSTRAP),
        });
    }
    let mut skipped = Vec::new();
    if variants.contains(&Variant::Evcdr) {
        let training_backend = NoisyBackend {
            mode: mode(
                cfg.shots.training_per_basis.unwrap_or(target_per_basis),
                vec![Basis::X, Basis::Z],
            ),
            ..target_backend.clone()
        };
        let c = &cfg.cdr;
        // Early steps can have fewer light-cone rotations than requested; keep at least one
        // rounded so the training circuits differ.
        let n_params = lightcone(ev.u(), ev.observable()).parameters.len();
        let l = c.l.min(n_params.saturating_sub(1));
        let run = cdr::train(
            &ev,
            &EvcdrConfig {
                l,
                m_count: c.m_count,
                seed: derive_seed(cfg.seed, job.step, job.realization, PURPOSE_TRAINING),
                budget: c.budget,
                weighting: match c.weighting {
                    WeightingSpec::Ols => Weighting::Ols,
                    WeightingSpec::Wls => Weighting::Wls,
                },
                intercept_x: c.intercept_x.into(),
                intercept_z: c.intercept_z.into(),
                ideal: match c.ideal {
                    IdealSpec::NearClifford => IdealBackend::NearClifford { budget: c.budget },
                    IdealSpec::Statevector => IdealBackend::Statevector,
                },
            },
            &training_backend,
        );
        match run {
            Ok(run) => ctx.fits = Some((run.fit_x, run.fit_z)),
            // A degenerate training set (e.g. every ideal value equal) only costs this row.
            Err(e @ Error::Numerical(_)) => skipped.push(SkippedStep {
                step: job.step,
                realization: job.realization,
                variant: Some(Variant::Evcdr.name().to_string()),
                reason: format!("training: {e}"),
            }),
            Err(e) => return Err(e),
        }
    }

    let purity = tomogram.purity();
    let mut rows = Vec::with_capacity(variants.len() + 1);
    if let Some(r) = reference {
        rows.push(ResultRow::new(t, "exact", r, 0.0, Some(r), (1.0 + r * r) / 2.0, 1.0, job.realization));
    }
    for &variant in variants {
        if variant == Variant::Evcdr && ctx.fits.is_none() {
            continue;
        }
        let e = match ev::estimate(&tomogram, variant, &ctx) {
            Ok(e) => e,
            Err(e @ Error::Numerical(_)) => {
                skipped.push(SkippedStep {
                    step: job.step,
                    realization: job.realization,
                    variant: Some(variant.name().to_string()),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        rows.push(ResultRow::new(
            t,
            variant.name(),
            e.value,
            e.variance,
            reference,
            tomogram.p0_hat,
            purity,
            job.realization,
        ));
    }
    Ok((rows, skipped))
}

/// Run the configured experiment. Steps whose postselection keeps no shots, and
/// estimator rows that hit a numerical singularity (e.g. a degenerate training set), are
/// skipped and listed in
/// [`ExperimentOutput::skipped`]; other failures abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = cfg.ising_model()?;
    let variants = cfg.parsed_variants()?;
    let rule = postselection_rule(cfg, &model);
    let references: Vec<Option<f64>> = (1..=cfg.plan.steps)
        .into_par_iter()
        .map(|k| reference_value(cfg, &model, k))
        .collect::<Result<_>>()?;
    let jobs: Vec<StepJob> = (1..=cfg.plan.steps)
        .flat_map(|step| (0..cfg.realizations).map(move |realization| StepJob { step, realization }))
        .collect();
    let results: Vec<Result<(Vec<ResultRow>, Vec<SkippedStep>)>> = jobs
        .par_iter()
        .map(|job| run_job(cfg, &model, &variants, &rule, references[job.step - 1], job))
        .collect();
    let mut out = ExperimentOutput::default();
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok((rows, skipped)) => {
                out.rows.extend(rows);
                out.skipped.extend(skipped);
            }
            Err(Error::PostselectionAnnihilated) => out.skipped.push(SkippedStep {
                step: job.step,
                realization: job.realization,
                variant: None,
                reason: Error::PostselectionAnnihilated.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Reference-only rows: the noiseless Trotter value (`trotter`) and, when the lattice is
/// small enough, the exact evolution (`exact_evolution`). `error` is measured against
/// the configured reference.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let model = cfg.ising_model()?;
    let p = cfg.plan;
    let exact_ok = model.n_sites() <= MAX_EXACT_SITES;
    let per_step: Vec<Vec<ResultRow>> = (1..=p.steps)
        .into_par_iter()
        .map(|k| -> Result<Vec<ResultRow>> {
            let t = k as f64 * p.tau;
            let trotter = trotter_magnetization(&model, p.tau, k, p.site)?;
            let exact = if exact_ok {
                Some(exact_magnetization(&model, t, p.site)?)
            } else {
                None
            };
            let reference = match cfg.reference {
                ReferenceKind::Trotter => Some(trotter),
                ReferenceKind::Exact => exact,
                ReferenceKind::None => None,
            };
            let mut rows = vec![ResultRow::new(t, "trotter", trotter, 0.0, reference, (1.0 + trotter * trotter) / 2.0, 1.0, 0)];
            if let Some(e) = exact {
                rows.push(ResultRow::new(t, "exact_evolution", e, 0.0, reference, (1.0 + e * e) / 2.0, 1.0, 0));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_step.into_iter().flatten().collect())
}
