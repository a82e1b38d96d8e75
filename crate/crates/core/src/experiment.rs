//! JSON experiment configs, dispatch to the run pipelines, and artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::entropy::ProbabilityTable;
use crate::error::{Error, Result};
use crate::fluct::{fluctuation_setup, run_fluctuation, FluctuationReport};
use crate::lawsuite::{
    check_particle_model, conjecture_report, product_joint_table, run_isolated, run_multibath, run_open, run_open_generalized,
    run_open_unchecked, run_particle, IsolatedInitial, IsolatedLedger, IsolatedOptions, OpenOptions, Reference, RunKind, SystemBasis,
    ThermoLedger, Violation,
};
use crate::linalg::{ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use crate::models::{build, Model, ModelSpec};
use crate::report;
use crate::thermo::{effective_beta, gibbs_state, grand_canonical_state, EffectiveTemperature};
use crate::tol;

/// The bundled reference config.
pub const OPEN_DEFAULT: &str = include_str!("../../../configs/open_default.json");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertionMode {
    /// Any violated invariant fails the run.
    #[default]
    Strict,
    /// Violations are recorded in the summary only.
    ReportOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub t_max: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t_max: 10.0, steps: 200 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrainingConfig {
    pub system_basis: SystemBasis,
    /// Energy-bin anchor per bath (or of the isolated Hamiltonian); `null` uses the ground energy.
    pub anchors: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolatedStart {
    Gibbs,
    #[default]
    CoarseGibbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    /// Diagonal of `ρ_S(0)` in the computational basis.
    pub system_populations: Vec<f64>,
    /// Real coherence added to `ρ_S(0)` between computational states 0 and 1.
    pub coherence: f64,
    /// Joint table `p(s, E_B)` for generalized open runs, rows over system states.
    pub joint: Option<Vec<Vec<f64>>>,
    /// Initial state of isolated runs, at `betas[0]`.
    pub isolated: IsolatedStart,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { system_populations: vec![0.1, 0.9], coherence: 0.0, joint: None, isolated: IsolatedStart::CoarseGibbs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), prefix: "open_default".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub run: RunKind,
    pub grid: GridConfig,
    /// Energy bin width.
    pub delta: f64,
    /// Inverse temperature per bath; isolated runs use one value.
    pub betas: Vec<f64>,
    /// Chemical potential per bath, particle runs only.
    pub mus: Vec<f64>,
    pub graining: GrainingConfig,
    pub initial: InitialConfig,
    pub output: OutputConfig,
    pub assertions: AssertionMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            run: RunKind::Open,
            grid: GridConfig::default(),
            delta: 0.25,
            betas: vec![1.0],
            mus: Vec::new(),
            graining: GrainingConfig::default(),
            initial: InitialConfig::default(),
            output: OutputConfig::default(),
            assertions: AssertionMode::Strict,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "config".to_string() } else { path };
            invalid(&field, e.into_inner().to_string())
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn opts(&self) -> OpenOptions {
        OpenOptions {
            grid_steps: self.grid.steps,
            delta: self.delta,
            system_basis: self.graining.system_basis,
            anchors: self.graining.anchors.clone(),
        }
    }

    /// Schema and physics checks; returns the built model.
    pub fn validate(&self) -> Result<Model> {
        if self.grid.steps == 0 {
            return Err(invalid("grid.steps", "must be at least 1"));
        }
        if !(self.grid.t_max > 0.0) || !self.grid.t_max.is_finite() {
            return Err(invalid("grid.t_max", "must be positive and finite"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(invalid("delta", "must be positive and finite"));
        }
        if let Some(b) = self.betas.iter().find(|b| !b.is_finite()) {
            return Err(invalid("betas", format!("{b} is not finite")));
        }
        if let Some(m) = self.mus.iter().find(|m| !m.is_finite()) {
            return Err(invalid("mus", format!("{m} is not finite")));
        }
        if self.graining.anchors.iter().flatten().any(|a| !a.is_finite()) {
            return Err(invalid("graining.anchors", "anchors must be finite"));
        }
        if !self.initial.coherence.is_finite() {
            return Err(invalid("initial.coherence", "must be finite"));
        }
        let prefix = &self.output.prefix;
        if prefix.is_empty() || prefix.contains(['/', '\\']) {
            return Err(invalid("output.prefix", "must be a non-empty file name"));
        }
        if let Ok(meta) = fs::metadata(&self.output.dir) {
            if !meta.is_dir() {
                return Err(invalid("output.dir", "exists and is not a directory"));
            }
            if meta.permissions().readonly() {
                return Err(invalid("output.dir", "is not writable"));
            }
        }

        let model = build(&self.model, self.grid.t_max)?;
        let baths = model.baths.len();
        let want_betas = |n: usize| -> Result<()> {
            if self.betas.len() != n {
                return Err(invalid("betas", format!("expected {n} values, got {}", self.betas.len())));
            }
            Ok(())
        };
        let want_baths = |ok: bool, what: &str| -> Result<()> {
            if !ok {
                return Err(invalid("model", format!("{} runs need {what}, model has {baths} bath(s)", self.run)));
            }
            Ok(())
        };
        match self.run {
            RunKind::Isolated => {
                want_betas(1)?;
                if self.initial.coherence != 0.0 {
                    return Err(invalid("initial.coherence", "only system states of bath models carry coherence"));
                }
            }
            RunKind::Open | RunKind::OpenGeneralized => {
                want_baths(baths == 1, "exactly one bath")?;
                want_betas(1)?;
                if self.run == RunKind::OpenGeneralized && self.initial.coherence != 0.0 {
                    return Err(invalid("initial.coherence", "generalized runs start from a classical joint table"));
                }
            }
            RunKind::Multibath => {
                want_baths(baths >= 1, "at least one bath")?;
                want_betas(baths)?;
            }
            RunKind::Particle => {
                want_baths(baths >= 1, "at least one bath")?;
                want_betas(baths)?;
                if self.mus.len() != baths {
                    return Err(invalid("mus", format!("expected {baths} values, got {}", self.mus.len())));
                }
                check_particle_model(&model)?;
            }
            RunKind::Fluctuation => want_betas(baths.max(1))?,
        }
        if self.graining.anchors.len() > baths.max(1) {
            return Err(invalid("graining.anchors", format!("at most {} entries", baths.max(1))));
        }
        if baths > 0 && self.run != RunKind::Isolated && self.initial.joint.is_none() {
            self.system_state(model.dims[0])?;
        }
        Ok(model)
    }

    /// `ρ_S(0)` from the configured populations and coherence.
    pub fn system_state(&self, d_s: usize) -> Result<DensityMatrix> {
        let p = &self.initial.system_populations;
        if p.len() != d_s {
            return Err(invalid("initial.system_populations", format!("expected {d_s} values, got {}", p.len())));
        }
        if p.iter().any(|x| !(*x >= 0.0)) {
            return Err(invalid("initial.system_populations", "populations must be non-negative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > tol::PROBABILITY_SUM {
            return Err(invalid("initial.system_populations", format!("populations sum to {sum}")));
        }
        let mut m = ComplexMatrix::from_real_diagonal(p);
        let c = self.initial.coherence;
        if c != 0.0 {
            if d_s < 2 {
                return Err(invalid("initial.coherence", "needs a system of dimension at least 2"));
            }
            m.set(0, 1, C64::new(c, 0.0));
            m.set(1, 0, C64::new(c, 0.0));
        }
        DensityMatrix::new(m, vec![d_s]).map_err(|e| invalid("initial", e.to_string()))
    }
}

/// Everything a run produces, before it is written to disk.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub kind: RunKind,
    pub ledger_csv: String,
    pub ft_csv: Option<String>,
    pub summary: Value,
    pub violations: Vec<Violation>,
    pub assertions: AssertionMode,
}

impl Outcome {
    /// False when strict assertions are on and some invariant failed.
    pub fn passed(&self) -> bool {
        self.assertions == AssertionMode::ReportOnly || self.violations.is_empty()
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(f64::abs).fold(0.0, f64::max)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    max_abs(a.iter().zip(b).map(|(x, y)| x - y))
}

fn open_summary(l: &ThermoLedger) -> Value {
    let h = &l.hierarchy;
    let k = l.len() - 1;
    let conj = conjecture_report(l);
    let baths: Vec<Value> = l
        .baths
        .iter()
        .map(|b| {
            json!({
                "reference": b.reference,
                "r_delta": b.r_delta,
                "beta_star_final": b.beta_star[k],
                "mu_star_final": b.mu_star.as_ref().map(|m| m[k]),
                "q_final": b.q[k],
                "w_chem_final": b.w_chem[k],
                "epsilon_hat_max": max_abs(b.epsilon_hat.iter().copied()),
                "binned_energy_discrepancy_max": max_abs_diff(&b.u, &b.u_binned),
            })
        })
        .collect();
    json!({
        "dims": l.dims,
        "dt": l.dt,
        "system_basis": l.system_basis,
        "final": {
            "time": l.times[k],
            "sigma_a": h.sigma_a[k],
            "sigma_b": h.sigma_b[k],
            "sigma_c": h.sigma_c[k],
            "sigma_d": h.sigma_d[k],
            "sigma_d_tilde": h.sigma_d_tilde[k],
            "i_obs": l.i_obs[k],
            "i_quantum": l.i_quantum[k],
            "w": l.energy[k].w,
            "q": l.energy[k].q,
            "w_chem": l.energy[k].w_chem,
        },
        "gap_identities": {
            "ab_max_residual": max_abs_diff(&h.gap_ab, &h.gap_ab_expected),
            "bc_max_residual": max_abs_diff(&h.gap_bc, &h.gap_bc_expected),
            "cd_tilde_max_residual": max_abs_diff(&h.gap_cd_tilde, &h.gap_cd_tilde_expected),
            "ab_final": h.gap_ab[k],
            "bc_final": h.gap_bc[k],
            "cd_tilde_final": h.gap_cd_tilde[k],
        },
        "r_delta": h.r_delta,
        "slack": h.slack,
        "quadrature_tolerance_max": max_abs(h.quadrature_tolerance.iter().copied()),
        "epsilon_hat_max": max_abs(l.baths.iter().flat_map(|b| b.epsilon_hat.iter().copied())),
        "first_law": {
            "max_residual": max_abs(l.first_law_residual.iter().copied()),
            "tolerance": l.first_law_tolerance(),
        },
        "decomposition_max_residual": max_abs((0..l.len()).map(|i| l.decomposition.sum(i) - h.sigma_a[i])),
        "conjecture": {
            "clausius_rate": conj.clausius_rate,
            "correlation_plateau": conj.correlation_plateau,
        },
        "baths": baths,
        "flags": {
            "saturated": false,
            "correlated_start": l.i_obs[0] > tol::GAP_AB,
            "initial_off_diagonal": l.initial_off_diagonal,
        },
    })
}

fn isolated_summary(l: &IsolatedLedger) -> Value {
    let k = l.times.len() - 1;
    json!({
        "dt": l.dt,
        "final": {
            "time": l.times[k],
            "sigma": l.sigma[k],
            "clausius": l.clausius[k],
            "beta_star": l.beta_star[k],
            "u": l.energy[k],
            "w": l.work[k],
        },
        "r_delta": l.r_delta[k],
        "r_delta_max": max_abs(l.r_delta.iter().copied()),
        "slack_max": max_abs(l.slack.iter().copied()),
        "first_law": {
            "max_residual": max_abs(l.first_law_residual.iter().copied()),
            "tolerance": l.first_law_tolerance().max(tol::ENERGY_CONSERVATION),
        },
        "flags": {
            "saturated": l.saturated,
            "initial_member": l.membership.member,
            "membership_residual": l.membership.residual,
        },
    })
}

fn fluctuation_summary(f: &FluctuationReport, ledger_sigma: f64) -> Value {
    json!({
        "ift_average": f.ift.value,
        "ift_valid": f.ift.valid,
        "mean_delta_s": f.mean_delta_s,
        "sigma_a": f.sigma_a,
        "ledger_sigma_a": ledger_sigma,
        "central_residual": f.central_residual,
        "trace_residual": f.trace_residual,
        "detailed_max_relative_error": f.detailed.max_relative_error(tol::DETAILED_RATIO_FLOOR),
        "detailed_probability_floor": tol::DETAILED_RATIO_FLOOR,
        "initial_mismatch": f.detailed.initial_mismatch,
        "equal_initial": f.detailed.equal_initial,
        "forward_normalization": f.forward_normalization,
        "reversed_normalization": f.reversed_normalization,
        "outcome_pairs": f.outcome_pairs,
        "zero_probability": f.zero_probability,
        "initial_member": f.initial_member,
    })
}

fn violation(name: &str, excess: f64, tolerance: f64) -> Violation {
    Violation { invariant: name.into(), index: 0, time: 0.0, excess, tolerance }
}

fn fluctuation_violations(f: &FluctuationReport, ledger_sigma: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |name: &str, value: f64, tolerance: f64| {
        if !(value <= tolerance) {
            out.push(violation(name, value, tolerance));
        }
    };
    check("trace_relation", f.trace_residual, tol::FLUCTUATION);
    check("ledger_consistency", (f.sigma_a - ledger_sigma).abs(), tol::GAP_AB);
    if !f.ift.valid {
        out.push(violation("ift_preconditions", 1.0, 0.0));
        return out;
    }
    check("integral_fluctuation_theorem", (f.ift.value - 1.0).abs(), tol::FLUCTUATION);
    check("central_relation", f.central_residual, tol::FLUCTUATION);
    check("detailed_ratio", f.detailed.max_relative_error(tol::DETAILED_RATIO_FLOOR), tol::DETAILED_RATIO);
    check("marginal_consistency", (f.mean_delta_s - f.sigma_a).abs(), tol::GAP_AB);
    check("jensen", -f.mean_delta_s, tol::FLUCTUATION);
    out
}

fn bath_state(model: &Model, nu: usize, r: &Reference) -> Result<DensityMatrix> {
    let b = &model.baths[nu];
    match (*r, &b.number) {
        (Reference::Grand { beta, mu }, Some(n)) => grand_canonical_state(&b.hamiltonian, n, beta, mu),
        _ => gibbs_state(&b.hamiltonian, r.beta()),
    }
}

/// Open-type run whose system state may carry coherence. Coherent starts go
/// through the unchecked engine and are flagged as a violated precondition.
fn open_family(cfg: &ExperimentConfig, model: &Model, references: Vec<Reference>) -> Result<(ThermoLedger, Vec<Violation>)> {
    let opts = cfg.opts();
    let rho_s = cfg.system_state(model.dims[0])?;
    let ledger = if cfg.initial.coherence == 0.0 {
        match cfg.run {
            RunKind::Open => run_open(model, &opts, &rho_s, cfg.betas[0])?,
            RunKind::Particle => run_particle(model, &opts, &rho_s, &cfg.betas, &cfg.mus)?,
            _ => run_multibath(model, &opts, &rho_s, &cfg.betas)?,
        }
    } else {
        let mut parts = vec![rho_s];
        for (nu, r) in references.iter().enumerate() {
            parts.push(bath_state(model, nu, r)?);
        }
        run_open_unchecked(model, &opts, &DensityMatrix::product(&parts.iter().collect::<Vec<_>>())?, &references)?
    };
    let mut violations = Vec::new();
    if ledger.initial_off_diagonal > tol::DIAGONALITY {
        violations.push(violation("initial_equilibrium_membership", ledger.initial_off_diagonal, tol::DIAGONALITY));
    }
    violations.extend(ledger.violations());
    Ok((ledger, violations))
}

/// Runs the configured experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.validate()?;
    let mut ft_csv = None;
    let (ledger_csv, mut summary, violations) = match cfg.run {
        RunKind::Isolated => {
            let opts = IsolatedOptions { grid_steps: cfg.grid.steps, delta: cfg.delta, anchor: cfg.graining.anchors.first().copied().flatten() };
            let beta = cfg.betas[0];
            let initial = match cfg.initial.isolated {
                IsolatedStart::Gibbs => IsolatedInitial::Gibbs { beta },
                IsolatedStart::CoarseGibbs => IsolatedInitial::CoarseGibbs { beta },
            };
            let l = run_isolated(&model, &opts, initial)?;
            (report::isolated_csv(&l), isolated_summary(&l), l.violations())
        }
        RunKind::Open | RunKind::Multibath => {
            let refs = cfg.betas.iter().map(|&beta| Reference::Canonical { beta }).collect();
            let (l, v) = open_family(cfg, &model, refs)?;
            (report::open_csv(&l), open_summary(&l), v)
        }
        RunKind::Particle => {
            let refs = cfg.betas.iter().zip(&cfg.mus).map(|(&beta, &mu)| Reference::Grand { beta, mu }).collect();
            let (l, v) = open_family(cfg, &model, refs)?;
            (report::open_csv(&l), open_summary(&l), v)
        }
        RunKind::OpenGeneralized => {
            let opts = cfg.opts();
            let joint = match &cfg.initial.joint {
                Some(rows) => ProbabilityTable::from_rows(rows).map_err(|e| invalid("initial.joint", e.to_string()))?,
                None => product_joint_table(&model, &opts, &cfg.initial.system_populations, cfg.betas[0])?,
            };
            let l = run_open_generalized(&model, &opts, &joint)?;
            (report::open_csv(&l), open_summary(&l), l.violations())
        }
        RunKind::Fluctuation => {
            let rho_s = if model.baths.is_empty() { None } else { Some(cfg.system_state(model.dims[0])?) };
            let (rho0, x0, xt) = fluctuation_setup(&model, cfg.delta, &cfg.graining.anchors, rho_s.as_ref(), &cfg.betas)?;
            let f = run_fluctuation(&model, &rho0, &x0, &xt)?;
            ft_csv = Some(report::ft_csv(&f.detailed));
            let (csv, mut summary, mut violations, ledger_sigma) = if model.baths.is_empty() {
                let opts = IsolatedOptions { grid_steps: cfg.grid.steps, delta: cfg.delta, anchor: cfg.graining.anchors.first().copied().flatten() };
                let l = run_isolated(&model, &opts, IsolatedInitial::State(rho0))?;
                let sigma = *l.sigma.last().expect("non-empty grid");
                (report::isolated_csv(&l), isolated_summary(&l), l.violations(), sigma)
            } else {
                let opts = OpenOptions { system_basis: SystemBasis::Computational, ..cfg.opts() };
                let refs: Vec<Reference> = cfg.betas.iter().map(|&beta| Reference::Canonical { beta }).collect();
                let l = run_open_unchecked(&model, &opts, &rho0, &refs)?;
                let sigma = *l.hierarchy.sigma_a.last().expect("non-empty grid");
                (report::open_csv(&l), open_summary(&l), l.violations(), sigma)
            };
            summary["fluctuation"] = fluctuation_summary(&f, ledger_sigma);
            summary["flags"]["zero_probability"] = json!(f.zero_probability);
            summary["flags"]["initial_member"] = json!(f.initial_member);
            violations.extend(fluctuation_violations(&f, ledger_sigma));
            (csv, summary, violations)
        }
    };
    summary["run"] = json!(cfg.run);
    summary["grid_steps"] = json!(cfg.grid.steps);
    summary["delta"] = json!(cfg.delta);
    summary["assertions"] = json!(cfg.assertions);
    summary["violations"] = serde_json::to_value(&violations).expect("violations serialize");
    summary["passed"] = json!(violations.is_empty());
    Ok(Outcome { kind: cfg.run, ledger_csv, ft_csv, summary, violations, assertions: cfg.assertions })
}

/// Paths of the artifacts a config writes.
pub fn artifact_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf) {
    let d = &cfg.output.dir;
    let p = &cfg.output.prefix;
    (d.join(format!("{p}_ledger.csv")), d.join(format!("{p}_summary.json")), d.join(format!("{p}_ft.csv")))
}

pub fn write_artifacts(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.output.dir).map_err(|e| invalid("output.dir", e.to_string()))?;
    let (ledger, summary, ft) = artifact_paths(cfg);
    let write = |path: &Path, text: &str| fs::write(path, text).map_err(|e| invalid("output.dir", format!("{}: {e}", path.display())));
    write(&ledger, &outcome.ledger_csv)?;
    let mut json = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    json.push('\n');
    write(&summary, &json)?;
    let mut out = vec![ledger, summary];
    if let Some(csv) = &outcome.ft_csv {
        write(&ft, csv)?;
        out.push(ft);
    }
    Ok(out)
}

/// Effective inverse temperature of `energy` for a config's model: bath
/// `bath` (0-based) when given, otherwise the first bath, or the full
/// Hamiltonian at `t = 0` for models without baths.
pub fn temperature(cfg: &ExperimentConfig, energy: f64, bath: Option<usize>, total: bool) -> Result<EffectiveTemperature> {
    let model = build(&cfg.model, cfg.grid.t_max)?;
    let h: &HermitianOperator = if total || model.baths.is_empty() {
        model.protocol.hamiltonian_at(0)
    } else {
        let nu = bath.unwrap_or(0);
        &model.baths.get(nu).ok_or_else(|| invalid("bath", format!("model has {} bath(s)", model.baths.len())))?.hamiltonian
    };
    effective_beta(h, energy)
}
