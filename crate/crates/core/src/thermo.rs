//! Equilibrium ensembles, effective temperature and chemical potential, and
//! energy/heat/work bookkeeping.

use serde::Serialize;

use crate::entropy::entropy_of_eigenvalues;
use crate::error::{Error, Result};
use crate::graining::{CoarseGraining, OutcomeDistribution, OutcomeLabel};
use crate::linalg::{commutator_norm, ComplexMatrix, DensityMatrix, HermitianOperator, Spectrum};
use crate::tol;

/// Normalized Boltzmann weights `e^{-βE_i}/Z`, shifted so the largest exponent is zero.
pub fn gibbs_weights(energies: &[f64], beta: f64) -> Vec<f64> {
    let exponents: Vec<f64> = energies.iter().map(|&e| -beta * e).collect();
    normalized_exp(&exponents)
}

fn normalized_exp(exponents: &[f64]) -> Vec<f64> {
    let m = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = exponents.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn log_sum_exp(exponents: &[f64]) -> f64 {
    let m = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + exponents.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

pub fn gibbs_state(h: &HermitianOperator, beta: f64) -> Result<DensityMatrix> {
    if !beta.is_finite() {
        return Err(Error::NonFinite);
    }
    let s = h.spectrum()?;
    let w = gibbs_weights(&s.values, beta);
    DensityMatrix::from_spectrum(Spectrum { values: w, vectors: s.vectors.clone() }, vec![h.dim()])
}

/// `S_vN` of the Gibbs state of a spectrum, `βU + ln Z`.
pub fn gibbs_entropy(energies: &[f64], beta: f64) -> f64 {
    entropy_of_eigenvalues(&gibbs_weights(energies, beta))
}

/// `β^2 Var(H)` in the Gibbs state.
pub fn heat_capacity(h: &HermitianOperator, beta: f64) -> Result<f64> {
    let s = h.spectrum()?;
    let w = gibbs_weights(&s.values, beta);
    let u = mean(&w, &s.values);
    let var: f64 = w.iter().zip(&s.values).map(|(p, e)| p * (e - u) * (e - u)).sum();
    Ok(beta * beta * var)
}

/// Joint eigenbasis of commuting `h` and `n` with the paired eigenvalues.
#[derive(Clone, Debug)]
pub struct JointSpectrum {
    pub energies: Vec<f64>,
    pub particles: Vec<f64>,
    pub vectors: ComplexMatrix,
}

pub fn joint_spectrum(h: &HermitianOperator, n: &HermitianOperator) -> Result<JointSpectrum> {
    if h.dim() != n.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: n.dim() });
    }
    let norm = commutator_norm(h.matrix(), n.matrix());
    if norm > tol::COMMUTATOR {
        return Err(Error::NonCommuting { norm });
    }
    let ns = n.spectrum()?;
    let dim = h.dim();
    let mut energies = Vec::with_capacity(dim);
    let mut particles = Vec::with_capacity(dim);
    let mut columns = Vec::with_capacity(dim);
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && (ns.values[end] - ns.values[start]).abs() <= tol::SECTOR {
            end += 1;
        }
        let vn = ns.vectors.columns(start, end - start);
        let hn = HermitianOperator::symmetrized(vn.adjoint_matmul(h.matrix()).matmul(&vn));
        let sn = hn.spectrum()?;
        let rotated = vn.matmul(&sn.vectors);
        for (k, &e) in sn.values.iter().enumerate() {
            energies.push(e);
            particles.push(ns.values[start + k]);
            columns.push(rotated.column(k));
        }
        start = end;
    }
    Ok(JointSpectrum { energies, particles, vectors: ComplexMatrix::from_columns(&columns)? })
}

/// `e^{-β(H − μN)}/Z` for commuting `h`, `n`.
pub fn grand_canonical_state(h: &HermitianOperator, n: &HermitianOperator, beta: f64, mu: f64) -> Result<DensityMatrix> {
    if !(beta.is_finite() && mu.is_finite()) {
        return Err(Error::NonFinite);
    }
    let js = joint_spectrum(h, n)?;
    let w = grand_weights(&js.energies, &js.particles, beta, beta * mu);
    let state = js.vectors.matmul(&ComplexMatrix::from_real_diagonal(&w)).matmul_adjoint(&js.vectors);
    DensityMatrix::trusted(state, vec![h.dim()])
}

/// Weights `e^{-βE + αN}/Z` with `α = βμ`.
pub fn grand_weights(energies: &[f64], particles: &[f64], beta: f64, alpha: f64) -> Vec<f64> {
    let x: Vec<f64> = energies.iter().zip(particles).map(|(&e, &n)| -beta * e + alpha * n).collect();
    normalized_exp(&x)
}

/// Entropy of the grand-canonical state, `βU − αN + ln Z`.
pub fn grand_entropy(energies: &[f64], particles: &[f64], beta: f64, alpha: f64) -> f64 {
    entropy_of_eigenvalues(&grand_weights(energies, particles, beta, alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    None,
    /// Target at the ground energy; `β*` clamped to `+β_max`.
    Ground,
    /// Target at the top of the spectrum; `β*` clamped to `−β_max`.
    Ceiling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectiveTemperature {
    pub beta_star: f64,
    pub achieved_energy: f64,
    /// `achieved_energy − target`.
    pub residual: f64,
    pub saturated: Saturation,
}

impl EffectiveTemperature {
    pub fn is_saturated(&self) -> bool {
        self.saturated != Saturation::None
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.beta_star
    }
}

/// Solves `tr(H π(β*)) = target` for `β*`.
pub fn effective_beta(h: &HermitianOperator, target_energy: f64) -> Result<EffectiveTemperature> {
    effective_beta_for_spectrum(&h.spectrum()?.values, target_energy)
}

/// [`effective_beta`] for an ascending list of energies.
///
/// Bisection on the decreasing map `β ↦ U(β)` with doubling bracket
/// expansion, followed by a few safeguarded Newton steps.
pub fn effective_beta_for_spectrum(energies: &[f64], target: f64) -> Result<EffectiveTemperature> {
    let emin = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let emax = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = emax - emin;
    let edge = tol::BETA_SATURATION * width.max(1.0);
    if !target.is_finite() || target < emin - edge || target > emax + edge {
        return Err(Error::EnergyOutOfRange { target, min: emin, max: emax });
    }
    if width <= 0.0 {
        return Ok(EffectiveTemperature { beta_star: 0.0, achieved_energy: emin, residual: emin - target, saturated: Saturation::None });
    }
    let beta_max = tol::BETA_MAX_SCALE / width;
    let at = |beta: f64| {
        let u = mean(&gibbs_weights(energies, beta), energies);
        EffectiveTemperature { beta_star: beta, achieved_energy: u, residual: u - target, saturated: Saturation::None }
    };
    if target - emin <= edge {
        return Ok(EffectiveTemperature { saturated: Saturation::Ground, ..at(beta_max) });
    }
    if emax - target <= edge {
        return Ok(EffectiveTemperature { saturated: Saturation::Ceiling, ..at(-beta_max) });
    }
    let stop = tol::BETA_RESIDUAL * width;
    let zero = at(0.0);
    if zero.residual.abs() <= stop {
        return Ok(zero);
    }
    // Negative temperatures: U_H(β) = −U_{−H}(−β).
    let sign = if zero.residual > 0.0 { 1.0 } else { -1.0 };
    let u = |beta: f64| sign * mean(&gibbs_weights(energies, sign * beta), energies) - sign * target;

    let (mut lo, mut hi) = (0.0, 1.0 / width);
    while u(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi >= beta_max {
            hi = beta_max;
            if u(hi) > 0.0 {
                let sat = if sign > 0.0 { Saturation::Ground } else { Saturation::Ceiling };
                return Ok(EffectiveTemperature { saturated: sat, ..at(sign * beta_max) });
            }
            break;
        }
    }
    let mut beta = 0.5 * (lo + hi);
    for _ in 0..tol::BETA_MAX_ITERATIONS {
        beta = 0.5 * (lo + hi);
        let r = u(beta);
        if r.abs() <= stop {
            break;
        }
        if r > 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
    }
    // Polish: dU/dβ = −Var(H).
    for _ in 0..4 {
        let w = gibbs_weights(energies, sign * beta);
        let m = mean(&w, energies);
        let var: f64 = w.iter().zip(energies).map(|(p, e)| p * (e - m) * (e - m)).sum();
        let r = u(beta);
        if var <= 0.0 || r == 0.0 {
            break;
        }
        let candidate = beta + r / var;
        if !(candidate > lo && candidate < hi) || u(candidate).abs() >= r.abs() {
            break;
        }
        beta = candidate;
    }
    Ok(at(sign * beta))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrandMethod {
    Newton,
    NestedBisection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrandPotentialPoint {
    pub beta_star: f64,
    pub mu_star: f64,
    /// `U(β*, μ*) − target_U`.
    pub residual_energy: f64,
    /// `N(β*, μ*) − target_N`.
    pub residual_particles: f64,
    pub iterations: usize,
    pub method: GrandMethod,
}

impl GrandPotentialPoint {
    pub fn alpha(&self) -> f64 {
        self.beta_star * self.mu_star
    }
}

struct GrandProblem<'a> {
    e: &'a [f64],
    n: &'a [f64],
    target_u: f64,
    target_n: f64,
}

struct GrandEval {
    f: f64,
    u: f64,
    n: f64,
    var_e: f64,
    var_n: f64,
    cov: f64,
}

impl GrandProblem<'_> {
    /// Convex dual `ln Z(β, α) + β U_t − α N_t`, whose stationary point matches both targets.
    fn eval(&self, beta: f64, alpha: f64) -> GrandEval {
        let x: Vec<f64> = self.e.iter().zip(self.n).map(|(&e, &n)| -beta * e + alpha * n).collect();
        let w = normalized_exp(&x);
        let u = mean(&w, self.e);
        let n = mean(&w, self.n);
        let (mut var_e, mut var_n, mut cov) = (0.0, 0.0, 0.0);
        for ((p, e), k) in w.iter().zip(self.e).zip(self.n) {
            var_e += p * (e - u) * (e - u);
            var_n += p * (k - n) * (k - n);
            cov += p * (e - u) * (k - n);
        }
        GrandEval { f: log_sum_exp(&x) + beta * self.target_u - alpha * self.target_n, u, n, var_e, var_n, cov }
    }
}

/// Solves `U(β*, μ*) = target_U`, `N(β*, μ*) = target_N` in the grand-canonical ensemble.
///
/// Damped Newton on the convex dual in `(β, α = βμ)`, whose Hessian is the
/// covariance matrix of `(H, N)`; after repeated Newton failures falls back
/// to nested bisection (outer `μ`, inner `β`).
pub fn effective_beta_mu(h: &HermitianOperator, n: &HermitianOperator, target_u: f64, target_n: f64) -> Result<GrandPotentialPoint> {
    let js = joint_spectrum(h, n)?;
    effective_beta_mu_for_spectrum(&js.energies, &js.particles, target_u, target_n)
}

pub fn effective_beta_mu_for_spectrum(energies: &[f64], particles: &[f64], target_u: f64, target_n: f64) -> Result<GrandPotentialPoint> {
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let scale_e = span(energies).max(1.0);
    let n_span = span(particles);
    let scale_n = n_span.max(1.0);
    if n_span <= tol::SECTOR {
        // No particle-number spread: only β is meaningful.
        let t = effective_beta_for_spectrum(energies, target_u)?;
        return Ok(GrandPotentialPoint {
            beta_star: t.beta_star,
            mu_star: 0.0,
            residual_energy: t.residual,
            residual_particles: particles.first().copied().unwrap_or(0.0) - target_n,
            iterations: 0,
            method: GrandMethod::Newton,
        });
    }
    let problem = GrandProblem { e: energies, n: particles, target_u, target_n };
    let converged = |g: &GrandEval| (g.u - target_u).abs() <= 1e-13 * scale_e && (g.n - target_n).abs() <= 1e-13 * scale_n;
    let acceptable = |ru: f64, rn: f64| ru.abs() <= tol::GRAND_RESIDUAL * scale_e && rn.abs() <= tol::GRAND_RESIDUAL * scale_n;

    let (mut beta, mut alpha) = (0.0, 0.0);
    let mut failures = 0;
    let mut iterations = 0;
    let mut current = problem.eval(beta, alpha);
    while iterations < tol::GRAND_MAX_ITERATIONS && failures < tol::GRAND_NEWTON_FAILURES {
        iterations += 1;
        if converged(&current) {
            break;
        }
        let g = [target_u - current.u, current.n - target_n];
        let (a, b, d) = (current.var_e, -current.cov, current.var_n);
        let det = a * d - b * b;
        let step = if det > 1e-14 * (a * d).max(f64::MIN_POSITIVE) {
            [-(d * g[0] - b * g[1]) / det, -(-b * g[0] + a * g[1]) / det]
        } else {
            // Singular covariance: steepest descent scaled by the diagonal.
            [-g[0] / a.max(1e-12), -g[1] / d.max(1e-12)]
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = problem.eval(beta + t * step[0], alpha + t * step[1]);
            if candidate.f.is_finite() && candidate.f <= current.f {
                beta += t * step[0];
                alpha += t * step[1];
                let progressed = candidate.f < current.f || converged(&candidate);
                current = candidate;
                accepted = progressed;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            failures += 1;
            if acceptable(current.u - target_u, current.n - target_n) {
                break;
            }
        }
    }
    let (ru, rn) = (current.u - target_u, current.n - target_n);
    if acceptable(ru, rn) && beta.abs() > 0.0 {
        return Ok(GrandPotentialPoint {
            beta_star: beta,
            mu_star: alpha / beta,
            residual_energy: ru,
            residual_particles: rn,
            iterations,
            method: GrandMethod::Newton,
        });
    }
    nested_bisection(&problem, iterations, scale_e, scale_n)
}

fn nested_bisection(problem: &GrandProblem<'_>, mut iterations: usize, scale_e: f64, scale_n: f64) -> Result<GrandPotentialPoint> {
    // For fixed μ, ⟨H − μN⟩ is monotone in β; solve that, then bisect μ on the particle residual.
    let solve_beta = |mu: f64| -> Option<(f64, f64, f64)> {
        let k: Vec<f64> = problem.e.iter().zip(problem.n).map(|(e, n)| e - mu * n).collect();
        let t = effective_beta_for_spectrum(&k, problem.target_u - mu * problem.target_n).ok()?;
        let w = gibbs_weights(&k, t.beta_star);
        Some((t.beta_star, mean(&w, problem.e) - problem.target_u, mean(&w, problem.n) - problem.target_n))
    };
    let unsolvable = |iterations, ru: f64, rn: f64| Error::Unsolvable { iterations, residual_energy: ru, residual_particles: rn };
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut rlo = solve_beta(lo);
    let mut rhi = solve_beta(hi);
    while iterations < tol::GRAND_MAX_ITERATIONS {
        if let (Some(a), Some(b)) = (rlo, rhi) {
            if a.2.signum() != b.2.signum() {
                break;
            }
        }
        lo *= 2.0;
        hi *= 2.0;
        rlo = solve_beta(lo);
        rhi = solve_beta(hi);
        iterations += 1;
    }
    let (Some(mut a), Some(_)) = (rlo, rhi) else {
        return Err(unsolvable(iterations, f64::NAN, f64::NAN));
    };
    let mut best = (0.5 * (lo + hi), a);
    while iterations < tol::GRAND_MAX_ITERATIONS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let Some(m) = solve_beta(mid) else {
            return Err(unsolvable(iterations, f64::NAN, f64::NAN));
        };
        best = (mid, m);
        if m.1.abs() <= 1e-13 * scale_e && m.2.abs() <= 1e-13 * scale_n || hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        if m.2.signum() == a.2.signum() {
            lo = mid;
            a = m;
        } else {
            hi = mid;
        }
    }
    let (mu, (beta, ru, rn)) = best;
    if ru.abs() <= tol::GRAND_RESIDUAL * scale_e && rn.abs() <= tol::GRAND_RESIDUAL * scale_n {
        Ok(GrandPotentialPoint {
            beta_star: beta,
            mu_star: mu,
            residual_energy: ru,
            residual_particles: rn,
            iterations,
            method: GrandMethod::NestedBisection,
        })
    } else {
        Err(unsolvable(iterations, ru, rn))
    }
}

/// `p_E ∝ V_E e^{-βE}` using each window's lower edge as its energy.
pub fn coarse_gibbs_probabilities(x: &CoarseGraining, beta: f64) -> Result<OutcomeDistribution> {
    let energies: Vec<f64> = x
        .labels()
        .iter()
        .map(|l| match l {
            OutcomeLabel::Energy(e) => Ok(*e),
            _ => Err(Error::WrongLabelKind),
        })
        .collect::<Result<_>>()?;
    let exponents: Vec<f64> = energies.iter().zip(x.volumes()).map(|(&e, v)| -beta * e + (v as f64).ln()).collect();
    OutcomeDistribution::new(normalized_exp(&exponents), x.volumes(), x.labels().to_vec())
}

/// `tr(H ρ)`.
pub fn internal_energy(h: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    h.expectation(rho)
}

/// `tr((H_S + V_SB) ρ_SB)` with both operators on the full space.
pub fn internal_energy_open(hs: &HermitianOperator, v_sb: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    Ok(hs.expectation(rho)? + v_sb.expectation(rho)?)
}

/// Work of a sudden change `before → after` on a frozen state, `tr((H' − H) ρ)`.
pub fn quench_work(before: &HermitianOperator, after: &HermitianOperator, rho: &DensityMatrix) -> Result<f64> {
    if before.dim() != after.dim() {
        return Err(Error::DimensionMismatch { expected: before.dim(), found: after.dim() });
    }
    Ok(after.expectation(rho)? - before.expectation(rho)?)
}

/// Trapezoidal integral of sampled power `tr(∂_t H ρ)` on a uniform grid.
pub fn work_integral(times: &[f64], power: &[f64]) -> Result<f64> {
    if times.len() != power.len() {
        return Err(Error::GridMismatch(format!("{} times vs {} power samples", times.len(), power.len())));
    }
    if times.len() < 2 {
        return Ok(0.0);
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (k, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if !(step > 0.0) || (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::GridMismatch(format!("grid not uniform and increasing at index {k}")));
        }
    }
    Ok(power.windows(2).map(|p| 0.5 * (p[0] + p[1]) * dt).sum())
}

/// Running `∫ β* dU_B` by the midpoint-in-β rule; element `k` covers samples `0..=k`.
///
/// With `đQ = −dU_B` this is `−∫ đQ/T*`.
pub fn clausius_cumulative(bath_energies: &[f64], betas: &[EffectiveTemperature]) -> Result<Vec<f64>> {
    if bath_energies.len() != betas.len() {
        return Err(Error::LengthMismatch { left: bath_energies.len(), right: betas.len() });
    }
    if let Some(index) = betas.iter().position(|b| b.is_saturated() || !b.beta_star.is_finite()) {
        return Err(Error::SaturatedTemperature { index });
    }
    let mut out = Vec::with_capacity(betas.len());
    let mut acc = 0.0;
    for k in 0..betas.len() {
        if k > 0 {
            acc += 0.5 * (betas[k - 1].beta_star + betas[k].beta_star) * (bath_energies[k] - bath_energies[k - 1]);
        }
        out.push(acc);
    }
    Ok(out)
}

pub fn clausius_integral(bath_energies: &[f64], betas: &[EffectiveTemperature]) -> Result<f64> {
    Ok(clausius_cumulative(bath_energies, betas)?.last().copied().unwrap_or(0.0))
}

/// Running `∫ (β* dU − β*μ* dN)` for a particle reservoir, midpoint in `β*` and `α = β*μ*`.
pub fn clausius_cumulative_particles(energies: &[f64], numbers: &[f64], points: &[GrandPotentialPoint]) -> Result<Vec<f64>> {
    if energies.len() != points.len() || numbers.len() != points.len() {
        return Err(Error::LengthMismatch { left: energies.len(), right: points.len() });
    }
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for k in 0..points.len() {
        if k > 0 {
            let (a, b) = (&points[k - 1], &points[k]);
            acc += 0.5 * (a.beta_star + b.beta_star) * (energies[k] - energies[k - 1])
                - 0.5 * (a.alpha() + b.alpha()) * (numbers[k] - numbers[k - 1]);
        }
        out.push(acc);
    }
    Ok(out)
}

/// `Σ_ν μ*_ν dN_ν`.
pub fn chemical_work_increment(mu_star: &[f64], dn: &[f64]) -> Result<f64> {
    if mu_star.len() != dn.len() {
        return Err(Error::LengthMismatch { left: mu_star.len(), right: dn.len() });
    }
    Ok(mu_star.iter().zip(dn).map(|(m, d)| m * d).sum())
}

/// `ε̂ = max_x |p_now(x)/p_init(x) − 1|`.
pub fn perturbation_scale(p_now: &OutcomeDistribution, p_init: &OutcomeDistribution) -> Result<f64> {
    if p_now.labels != p_init.labels {
        return Err(Error::SupportMismatch("outcome labels differ".into()));
    }
    let mut eps = 0.0f64;
    for (now, init) in p_now.probabilities.iter().zip(&p_init.probabilities) {
        if !(*init > 0.0) {
            return Err(Error::SupportMismatch("initial distribution has a zero entry".into()));
        }
        eps = eps.max((now / init - 1.0).abs());
    }
    Ok(eps)
}

/// Energy bookkeeping at one grid time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyLedgerEntry {
    pub time: f64,
    pub u_s: f64,
    pub u_b: Vec<f64>,
    pub w: f64,
    pub w_chem: f64,
    pub q: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub mu_star: Option<Vec<f64>>,
    /// Largest per-bath perturbation scale.
    pub epsilon_hat: f64,
}

impl EnergyLedgerEntry {
    /// `ΔU_S − ΣQ − W − W_chem` relative to an initial entry.
    pub fn first_law_residual(&self, initial: &EnergyLedgerEntry) -> f64 {
        (self.u_s - initial.u_s) - self.q.iter().sum::<f64>() - self.w - self.w_chem
    }
}
