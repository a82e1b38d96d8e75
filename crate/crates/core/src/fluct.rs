//! Two-point measurement statistics, stochastic observational entropy and
//! fluctuation theorems, by exact summation over all outcome pairs.

use std::collections::HashMap;

use serde::Serialize;

use crate::dynamics::{reversed_protocol, trotter_propagator, Propagator, Protocol};
use crate::entropy::{equilibrium_state, is_equilibrium_member, obs_entropy};
use crate::error::{Error, Result};
use crate::graining::{energy_graining, outcome_distribution, product_graining, CoarseGraining};
use crate::linalg::{ComplexMatrix, DensityMatrix, HermitianOperator};
use crate::models::Model;
use crate::thermo::gibbs_state;
use crate::tol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reversed,
}

/// One outcome pair `(first, second)` of the two measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoPointEntry {
    pub first: usize,
    pub second: usize,
    pub probability: f64,
    /// `ln[p_first(0) V_second / (V_first p_second(t))]`; `+∞` when the
    /// undisturbed final probability vanishes.
    pub delta_s: f64,
}

#[derive(Clone, Debug)]
pub struct TwoPointDistribution {
    pub direction: Direction,
    pub first_graining: CoarseGraining,
    pub second_graining: CoarseGraining,
    /// Pairs in row-major order over first outcomes with nonzero probability.
    pub entries: Vec<TwoPointEntry>,
    /// Outcome probabilities of the first measurement.
    pub initial: Vec<f64>,
    /// Outcome probabilities of the second graining on the undisturbed final state.
    pub final_undisturbed: Vec<f64>,
    /// Some first outcome has zero probability; its pairs are excluded.
    pub zero_probability: bool,
    /// The initial state lies in the equilibrium set of the first graining.
    pub initial_member: bool,
}

impl TwoPointDistribution {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }

    /// `⟨Δs⟩`, skipping pairs of zero probability.
    pub fn mean_delta_s(&self) -> f64 {
        self.entries.iter().filter(|e| e.probability > 0.0).map(|e| e.probability * e.delta_s).sum()
    }

    fn lookup(&self) -> HashMap<(usize, usize), &TwoPointEntry> {
        self.entries.iter().map(|e| ((e.first, e.second), e)).collect()
    }
}

/// `p_{x_t, x_0} = tr(Π_{x_t} U Π_{x_0} ρ Π_{x_0} U†)` for all pairs.
pub fn forward_two_point(rho0: &DensityMatrix, u: &Propagator, x0: &CoarseGraining, xt: &CoarseGraining) -> Result<TwoPointDistribution> {
    two_point(rho0, &u.matrix, x0, xt, Direction::Forward)
}

fn two_point(rho0: &DensityMatrix, u: &ComplexMatrix, x0: &CoarseGraining, xt: &CoarseGraining, direction: Direction) -> Result<TwoPointDistribution> {
    let n = rho0.dim();
    for d in [u.nrows(), x0.dim(), xt.dim()] {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, found: d });
        }
    }
    let initial_member = is_equilibrium_member(rho0, x0, tol::MEMBERSHIP)?.member;
    let final_state = rho0.unitary_image(u)?;
    let final_undisturbed = outcome_distribution(&final_state, xt)?.probabilities;
    let initial = outcome_distribution(rho0, x0)?.probabilities;

    // Rows of `y` are the second graining's basis vectors propagated backwards.
    let y_all = xt.basis().adjoint_matmul(u);
    let vt = xt.volumes();
    let mut entries = Vec::new();
    let mut zero_probability = false;
    for (a, &(start, len)) in x0.blocks().iter().enumerate() {
        let b = x0.basis().columns(start, len);
        let k = b.adjoint_matmul(rho0.matrix()).matmul(&b);
        let p0 = k.trace().re;
        if p0 <= tol::ZERO_PROBABILITY {
            zero_probability = true;
            continue;
        }
        let y = y_all.matmul(&b);
        let z = y.matmul(&k);
        let weights: Vec<f64> = (0..n).map(|c| (0..len).map(|j| (z.get(c, j) * y.get(c, j).conj()).re).sum()).collect();
        for (x, &(s, l)) in xt.blocks().iter().enumerate() {
            let probability: f64 = weights[s..s + l].iter().sum();
            let pt = final_undisturbed[x];
            let delta_s = if pt > tol::ZERO_PROBABILITY {
                (p0 * vt[x] as f64 / (len as f64 * pt)).ln()
            } else {
                f64::INFINITY
            };
            entries.push(TwoPointEntry { first: a, second: x, probability, delta_s });
        }
    }
    Ok(TwoPointDistribution {
        direction,
        first_graining: x0.clone(),
        second_graining: xt.clone(),
        entries,
        initial,
        final_undisturbed,
        zero_probability,
        initial_member,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IftAverage {
    /// `Σ p e^{−Δs}`.
    pub value: f64,
    /// Preconditions held: initial equilibrium membership and no zero-probability outcome.
    pub valid: bool,
}

pub fn ift_average(d: &TwoPointDistribution) -> IftAverage {
    let value = d.entries.iter().filter(|e| e.probability != 0.0).map(|e| e.probability * (-e.delta_s).exp()).sum();
    IftAverage { value, valid: d.initial_member && !d.zero_probability }
}

/// Time-reversed process driven by the conjugated, reversed protocol from
/// `ρ_tr = Σ p^fw_{x_t} Π^Θ_{x_t} / V_{x_t}`. Entries are keyed `(x_t, x_0)`.
pub fn reversed_two_point(forward: &TwoPointDistribution, p: &Protocol) -> Result<TwoPointDistribution> {
    let u_theta = trotter_propagator(&reversed_protocol(p))?;
    reversed_with_propagator(forward, &u_theta)
}

/// [`reversed_two_point`] with a precomputed `U_Θ`.
pub fn reversed_with_propagator(forward: &TwoPointDistribution, u_theta: &Propagator) -> Result<TwoPointDistribution> {
    let xt = forward.second_graining.conj();
    let x0 = forward.first_graining.conj();
    let rho_tr = equilibrium_state(&xt, &forward.final_undisturbed)?;
    two_point(&rho_tr, &u_theta.matrix, &xt, &x0, Direction::Reversed)
}

fn matched(fwd: &TwoPointDistribution, rev: &TwoPointDistribution) -> Result<()> {
    if fwd.direction != Direction::Forward || rev.direction != Direction::Reversed {
        return Err(Error::LabelMismatch("expected a forward and a reversed distribution".into()));
    }
    if fwd.first_graining.labels() != rev.second_graining.labels() || fwd.second_graining.labels() != rev.first_graining.labels() {
        return Err(Error::LabelMismatch("outcome sets of the two processes differ".into()));
    }
    Ok(())
}

fn weighted(delta_s: f64, p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        delta_s.exp() * p
    }
}

/// `max |p^fw_{x_t,x_0} − e^{Δs} p^tr_{x_0,x_t}|` over all forward pairs.
pub fn central_relation_check(fwd: &TwoPointDistribution, rev: &TwoPointDistribution) -> Result<f64> {
    matched(fwd, rev)?;
    let back = rev.lookup();
    let mut max = 0.0f64;
    for e in &fwd.entries {
        let p_tr = back.get(&(e.second, e.first)).map_or(0.0, |r| r.probability);
        max = max.max((e.probability - weighted(e.delta_s, p_tr)).abs());
    }
    Ok(max)
}

/// `max |tr(Π_{x_0} U† Π_{x_t} U) − tr(Π^Θ_{x_0} U_Θ Π^Θ_{x_t} U_Θ†)|` over all pairs.
pub fn trace_relation_residual(u: &ComplexMatrix, u_theta: &ComplexMatrix, x0: &CoarseGraining, xt: &CoarseGraining) -> Result<f64> {
    let block_norms = |m: &ComplexMatrix, rows: &CoarseGraining, cols: &CoarseGraining| -> Vec<Vec<f64>> {
        rows.blocks()
            .iter()
            .map(|&(rs, rl)| {
                cols.blocks()
                    .iter()
                    .map(|&(cs, cl)| (rs..rs + rl).flat_map(|i| (cs..cs + cl).map(move |j| (i, j))).map(|(i, j)| m.get(i, j).norm_sqr()).sum())
                    .collect()
            })
            .collect()
    };
    // Forward: |<t|U|0>|^2 summed over blocks. Reversed: |<0^Θ|U_Θ|t^Θ>|^2.
    let fwd = block_norms(&xt.basis().adjoint_matmul(u).matmul(x0.basis()), xt, x0);
    let (x0t, xtt) = (x0.conj(), xt.conj());
    let rev = block_norms(&x0t.basis().adjoint_matmul(u_theta).matmul(xtt.basis()), &x0t, &xtt);
    let mut max = 0.0f64;
    for (t, row) in fwd.iter().enumerate() {
        for (z, v) in row.iter().enumerate() {
            max = max.max((v - rev[z][t]).abs());
        }
    }
    Ok(max)
}

/// One distinct value of `Δs` with its forward and reversed weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetailedRow {
    pub delta_s: f64,
    pub p_forward: f64,
    pub q_reversed: f64,
    pub ratio: f64,
    pub expected_ratio: f64,
}

impl DetailedRow {
    fn new(delta_s: f64, p_forward: f64, q_reversed: f64) -> Self {
        Self { delta_s, p_forward, q_reversed, ratio: p_forward / q_reversed, expected_ratio: delta_s.exp() }
    }

    pub fn relative_error(&self) -> f64 {
        (self.ratio / self.expected_ratio - 1.0).abs()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DetailedTable {
    /// `P_fw(Δs)` against `Q_tr(−Δs)`, the reversed weight of the same pairs.
    pub rows: Vec<DetailedRow>,
    /// `max_x |p^tr_x(t) − p^fw_x(0)|`.
    pub initial_mismatch: f64,
    pub equal_initial: bool,
    /// `P_fw(Δs)` against `P_tr(−Δs)` grouped by the reversed process's own
    /// entropy changes; present only when `equal_initial` holds.
    pub reversed_rows: Option<Vec<DetailedRow>>,
}

impl DetailedTable {
    /// Largest relative deviation of the ratio from `e^{Δs}` over rows with `p_forward ≥ floor`.
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        self.rows.iter().filter(|r| r.p_forward >= floor).map(DetailedRow::relative_error).fold(0.0, f64::max)
    }
}

fn same_key(a: f64, b: f64) -> bool {
    (a - b).abs() <= tol::DELTA_S_KEY * a.abs().max(1.0)
}

/// Sums `(value, weight_a, weight_b)` over equal values; sorted ascending.
fn group(mut items: Vec<(f64, f64, f64)>) -> Vec<(f64, f64, f64)> {
    items.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for (v, a, b) in items {
        match out.last_mut() {
            Some(last) if same_key(last.0, v) => {
                last.1 += a;
                last.2 += b;
            }
            _ => out.push((v, a, b)),
        }
    }
    out
}

/// Per-value detailed fluctuation theorem. Values are grouped exactly (up
/// to the relative key tolerance), since outcome sets are finite.
pub fn detailed_ft_histograms(fwd: &TwoPointDistribution, rev: &TwoPointDistribution) -> Result<DetailedTable> {
    matched(fwd, rev)?;
    let back = rev.lookup();
    let items = fwd
        .entries
        .iter()
        .filter(|e| e.delta_s.is_finite())
        .map(|e| (e.delta_s, e.probability, back.get(&(e.second, e.first)).map_or(0.0, |r| r.probability)))
        .collect();
    let rows: Vec<DetailedRow> = group(items).into_iter().filter(|g| g.1 > 0.0).map(|(v, p, q)| DetailedRow::new(v, p, q)).collect();

    let initial_mismatch = fwd.initial.iter().zip(&rev.final_undisturbed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let equal_initial = initial_mismatch <= tol::EQUAL_INITIAL;
    let reversed_rows = equal_initial.then(|| {
        let mut items: Vec<(f64, f64, f64)> = fwd.entries.iter().filter(|e| e.delta_s.is_finite()).map(|e| (e.delta_s, e.probability, 0.0)).collect();
        items.extend(rev.entries.iter().filter(|e| e.delta_s.is_finite()).map(|e| (-e.delta_s, 0.0, e.probability)));
        group(items).into_iter().filter(|g| g.1 > 0.0).map(|(v, p, q)| DetailedRow::new(v, p, q)).collect()
    });
    Ok(DetailedTable { rows, initial_mismatch, equal_initial, reversed_rows })
}

/// Summary of a complete forward and reversed two-point experiment.
#[derive(Clone, Debug, Serialize)]
pub struct FluctuationReport {
    pub ift: IftAverage,
    pub mean_delta_s: f64,
    /// `S_obs^{X_t}[ρ(t)] − S_obs^{X_0}[ρ(0)]` on the undisturbed evolution.
    pub sigma_a: f64,
    pub central_residual: f64,
    pub trace_residual: f64,
    pub forward_normalization: f64,
    pub reversed_normalization: f64,
    pub outcome_pairs: usize,
    pub zero_probability: bool,
    /// The initial state lies in the equilibrium set of the first graining.
    pub initial_member: bool,
    pub detailed: DetailedTable,
}

/// Initial state and grainings of a model experiment.
///
/// With baths, both measurements use the computational system basis times
/// the bath energy windows, and the state is `ρ_S ⊗ Σ_E p_E ω(E)` per bath
/// with `p_E = tr(Π_E π(β_ν))`. Without baths, the measurements are energy
/// windows of the first and last Hamiltonian and the state is the coarse
/// Gibbs mixture at `betas[0]`.
pub fn fluctuation_setup(
    model: &Model,
    delta: f64,
    anchors: &[Option<f64>],
    rho_s: Option<&DensityMatrix>,
    betas: &[f64],
) -> Result<(DensityMatrix, CoarseGraining, CoarseGraining)> {
    let anchor = |k: usize| anchors.get(k).copied().flatten();
    let coarse_gibbs = |h: &HermitianOperator, x: &CoarseGraining, beta: f64| -> Result<DensityMatrix> {
        let p = outcome_distribution(&gibbs_state(h, beta)?, x)?;
        equilibrium_state(x, &p.probabilities)
    };
    if betas.len() != model.baths.len().max(1) {
        return Err(Error::ConfigInvalid { field: "betas".into(), message: format!("expected {} values", model.baths.len().max(1)) });
    }
    if model.baths.is_empty() {
        let p = &model.protocol;
        let x0 = energy_graining(p.hamiltonian_at(0), delta, anchor(0))?;
        let xt = energy_graining(p.hamiltonian_at(p.len() - 1), delta, anchor(0))?;
        let rho0 = coarse_gibbs(p.hamiltonian_at(0), &x0, betas[0])?.with_factor_dims(model.dims.clone())?;
        return Ok((rho0, x0, xt));
    }
    let rho_s = rho_s.ok_or_else(|| Error::ConfigInvalid { field: "initial.system_populations".into(), message: "required with baths".into() })?;
    if rho_s.dim() != model.dims[0] {
        return Err(Error::DimensionMismatch { expected: model.dims[0], found: rho_s.dim() });
    }
    let mut parts = vec![CoarseGraining::computational(model.dims[0])];
    let mut states = vec![rho_s.clone()];
    for (nu, (b, &beta)) in model.baths.iter().zip(betas).enumerate() {
        let x = energy_graining(&b.hamiltonian, delta, anchor(nu))?;
        states.push(coarse_gibbs(&b.hamiltonian, &x, beta)?);
        parts.push(x);
    }
    let x = product_graining(&parts.iter().collect::<Vec<_>>(), &model.dims)?;
    let rho0 = DensityMatrix::product(&states.iter().collect::<Vec<_>>())?;
    Ok((rho0, x.clone(), x))
}

/// Forward and reversed two-point statistics over the model's full protocol.
pub fn run_fluctuation(model: &Model, rho0: &DensityMatrix, x0: &CoarseGraining, xt: &CoarseGraining) -> Result<FluctuationReport> {
    let u = trotter_propagator(&model.protocol)?;
    let u_theta = trotter_propagator(&reversed_protocol(&model.protocol))?;
    let fwd = forward_two_point(rho0, &u, x0, xt)?;
    let rev = reversed_with_propagator(&fwd, &u_theta)?;
    let rho_t = rho0.unitary_image(&u.matrix)?;
    Ok(FluctuationReport {
        ift: ift_average(&fwd),
        mean_delta_s: fwd.mean_delta_s(),
        sigma_a: obs_entropy(&rho_t, xt)? - obs_entropy(rho0, x0)?,
        central_residual: central_relation_check(&fwd, &rev)?,
        trace_residual: trace_relation_residual(&u.matrix, &u_theta.matrix, x0, xt)?,
        forward_normalization: fwd.total_probability(),
        reversed_normalization: rev.total_probability(),
        outcome_pairs: fwd.entries.len(),
        zero_probability: fwd.zero_probability,
        initial_member: fwd.initial_member,
        detailed: detailed_ft_histograms(&fwd, &rev)?,
    })
}
