//! Entropy-production hierarchy, gap identities and energy bookkeeping.
//!
//! Open runs are propagated in the bath frame `T = 1_S ⊗ W_1 ⊗ ...`, where
//! `W_ν` is the basis of bath `ν`'s local coarse-graining. There every bath
//! Hamiltonian is diagonal and every bath outcome is a set of basis columns,
//! so all outcome probabilities are sums of diagonal entries of the state.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::GridEvolver;
use crate::dynamics::Protocol;
use crate::entropy::{entropy_of_eigenvalues, is_equilibrium_member, obs_entropy, shannon, total_information, Membership, ProbabilityTable};
use crate::error::{Error, Result};
use crate::graining::{energy_graining, energy_particle_graining, outcome_distribution, CoarseGraining, OutcomeLabel};
use crate::linalg::{commutator_norm, kron_all, ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use crate::models::{Bath, Model};
use crate::thermo::{
    clausius_cumulative, clausius_cumulative_particles, effective_beta, effective_beta_for_spectrum, effective_beta_mu_for_spectrum,
    gibbs_entropy, gibbs_state, gibbs_weights, grand_entropy, grand_weights, EnergyLedgerEntry,
};
use crate::tol;

/// Basis used for the system part of the joint coarse-graining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemBasis {
    /// Eigenbasis of `ρ_S(t)`; the computational basis at `t = 0`.
    #[default]
    Eigen,
    /// The computational basis at all times.
    Computational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Isolated,
    Open,
    OpenGeneralized,
    Multibath,
    Particle,
    Fluctuation,
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenOptions {
    pub grid_steps: usize,
    /// Bath energy bin width.
    pub delta: f64,
    pub system_basis: SystemBasis,
    /// Bin anchors per bath; missing entries use the bath ground energy.
    pub anchors: Vec<Option<f64>>,
}

impl OpenOptions {
    pub fn new(grid_steps: usize, delta: f64) -> Self {
        Self { grid_steps, delta, system_basis: SystemBasis::Eigen, anchors: Vec::new() }
    }
}

/// Reference ensemble of a bath, used for `Σ_d` and the initial state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "ensemble", rename_all = "snake_case")]
pub enum Reference {
    Canonical { beta: f64 },
    Grand { beta: f64, mu: f64 },
}

impl Reference {
    pub fn beta(&self) -> f64 {
        match *self {
            Reference::Canonical { beta } | Reference::Grand { beta, .. } => beta,
        }
    }

    pub fn mu(&self) -> Option<f64> {
        match *self {
            Reference::Canonical { .. } => None,
            Reference::Grand { mu, .. } => Some(mu),
        }
    }

    fn alpha(&self) -> f64 {
        self.beta() * self.mu().unwrap_or(0.0)
    }
}

struct BathFrame {
    graining: CoarseGraining,
    /// Energy of each frame column.
    energies: Vec<f64>,
    numbers: Option<Vec<f64>>,
    block_of: Vec<usize>,
    log_volumes: Vec<f64>,
    bin_energies: Vec<f64>,
}

impl BathFrame {
    fn new(bath: &Bath, delta: f64, anchor: Option<f64>, particles: bool) -> Result<Self> {
        let graining = if particles {
            let n = bath.number.as_ref().ok_or_else(|| Error::SpecInvalid("particle runs need bath number operators".into()))?;
            energy_particle_graining(&bath.hamiltonian, n, delta, anchor)?
        } else {
            energy_graining(&bath.hamiltonian, delta, anchor)?
        };
        let w = graining.basis();
        let diag = |op: &HermitianOperator| -> Vec<f64> { w.adjoint_matmul(op.matrix()).matmul(w).diagonal().iter().map(|z| z.re).collect() };
        let energies = diag(&bath.hamiltonian);
        let numbers = if particles { bath.number.as_ref().map(diag) } else { None };
        let numbers = numbers.map(|n| n.iter().map(|&v| if (v - v.round()).abs() <= tol::SECTOR { v.round() } else { v }).collect());
        Ok(Self {
            block_of: graining.column_blocks(),
            log_volumes: graining.volumes().iter().map(|&v| (v as f64).ln()).collect(),
            bin_energies: graining.labels().iter().map(|l| l.energy().unwrap_or(f64::NAN)).collect(),
            energies,
            numbers,
            graining,
        })
    }

    fn weights(&self, beta: f64, alpha: f64) -> Vec<f64> {
        match &self.numbers {
            Some(n) => grand_weights(&self.energies, n, beta, alpha),
            None => gibbs_weights(&self.energies, beta),
        }
    }

    fn equilibrium_entropy(&self, beta: f64, alpha: f64) -> f64 {
        match &self.numbers {
            Some(n) => grand_entropy(&self.energies, n, beta, alpha),
            None => gibbs_entropy(&self.energies, beta),
        }
    }

    /// Observational entropy of a state diagonal in the frame with column weights `w`.
    fn obs_entropy_of_weights(&self, w: &[f64]) -> f64 {
        let mut p = vec![0.0; self.log_volumes.len()];
        for (c, &x) in w.iter().zip(&self.block_of) {
            p[x] += c;
        }
        obs_sum(&p, &self.log_volumes)
    }
}

/// `Σ_x p_x (ln V_x − ln p_x)` with `0 ln 0 = 0`.
fn obs_sum(p: &[f64], log_volumes: &[f64]) -> f64 {
    p.iter().zip(log_volumes).filter(|(&px, _)| px > tol::ZERO_PROBABILITY).map(|(&px, &lv)| px * (lv - px.ln())).sum()
}

/// Classical relative entropy `Σ p ln(p/q)` of two full-support weight vectors.
fn relative_entropy_weights(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > tol::ZERO_PROBABILITY).map(|(&a, &b)| a * (a.ln() - b.ln())).sum()
}

struct Snapshot {
    table: ProbabilityTable,
    s_joint: f64,
    s_sys: f64,
    s_vn_sys: f64,
    s_vn_baths: f64,
    s_obs_bath: Vec<f64>,
    p_bath: Vec<Vec<f64>>,
    u_b: Vec<f64>,
    n_b: Vec<f64>,
    energy: f64,
}

struct Engine {
    dims: Vec<usize>,
    d_s: usize,
    d_b: usize,
    frames: Vec<BathFrame>,
    protocol: Protocol,
    transform: ComplexMatrix,
    /// Per bath, the frame column of every bath multi-index.
    column_of: Vec<Vec<usize>>,
    /// Joint-table cell (without the system index) of every bath multi-index.
    cell_of: Vec<usize>,
    cells: usize,
    cell_log_volume: Vec<f64>,
}

impl Engine {
    fn new(model: &Model, opts: &OpenOptions, particles: bool) -> Result<Self> {
        if model.baths.is_empty() {
            return Err(Error::SpecInvalid("open runs need at least one bath".into()));
        }
        if opts.grid_steps == 0 {
            return Err(Error::ConfigInvalid { field: "grid.steps".into(), message: "must be at least 1".into() });
        }
        let frames = model
            .baths
            .iter()
            .enumerate()
            .map(|(nu, b)| BathFrame::new(b, opts.delta, opts.anchors.get(nu).copied().flatten(), particles))
            .collect::<Result<Vec<_>>>()?;
        let d_s = model.dims[0];
        let bath_dims = &model.dims[1..];
        let d_b: usize = bath_dims.iter().product();
        let identity = ComplexMatrix::identity(d_s);
        let transform = kron_all(std::iter::once(&identity).chain(frames.iter().map(|f| f.graining.basis())));
        let t_adj = transform.adjoint();
        let protocol = model.protocol.map_hamiltonians(|h| Ok(h.conjugate_by(&t_adj)))?;

        let m = frames.len();
        let mut stride = vec![1usize; m];
        for nu in (0..m.saturating_sub(1)).rev() {
            stride[nu] = stride[nu + 1] * bath_dims[nu + 1];
        }
        let column_of: Vec<Vec<usize>> = (0..m).map(|nu| (0..d_b).map(|c| (c / stride[nu]) % bath_dims[nu]).collect()).collect();
        let counts: Vec<usize> = frames.iter().map(|f| f.log_volumes.len()).collect();
        let mut cell_stride = vec![1usize; m];
        for nu in (0..m.saturating_sub(1)).rev() {
            cell_stride[nu] = cell_stride[nu + 1] * counts[nu + 1];
        }
        let cells: usize = counts.iter().product();
        let cell_of = (0..d_b).map(|c| (0..m).map(|nu| frames[nu].block_of[column_of[nu][c]] * cell_stride[nu]).sum()).collect();
        let cell_log_volume = (0..cells)
            .map(|cell| (0..m).map(|nu| frames[nu].log_volumes[(cell / cell_stride[nu]) % counts[nu]]).sum())
            .collect();
        Ok(Self { dims: model.dims.clone(), d_s, d_b, frames, protocol, transform, column_of, cell_of, cells, cell_log_volume })
    }

    fn to_frame(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        rho.conjugate_by(&self.transform.adjoint())
    }

    /// Product state `ρ_S ⊗ ρ_1 ⊗ ...` with each bath diagonal in the frame.
    fn product_state(&self, rho_s: &ComplexMatrix, bath_weights: &[Vec<f64>]) -> ComplexMatrix {
        let baths: Vec<ComplexMatrix> = bath_weights.iter().map(|w| ComplexMatrix::from_real_diagonal(w)).collect();
        kron_all(std::iter::once(rho_s).chain(baths.iter()))
    }

    fn observe(&self, rho: &ComplexMatrix, h: &HermitianOperator, basis: SystemBasis, initial: bool) -> Result<Snapshot> {
        let (ds, db) = (self.d_s, self.d_b);
        let rho_s = HermitianOperator::symmetrized(ComplexMatrix::from_fn(ds, ds, |i, j| {
            (0..db).map(|c| rho.get(i * db + c, j * db + c)).sum()
        }));
        let spectrum = rho_s.spectrum()?;
        let s_vn_sys = entropy_of_eigenvalues(&spectrum.values);
        let u = if initial || basis == SystemBasis::Computational { ComplexMatrix::identity(ds) } else { spectrum.vectors.clone() };

        let m = self.frames.len();
        let mut data = vec![0.0; ds * self.cells];
        let mut u_b = vec![0.0; m];
        let mut n_b = vec![0.0; m];
        for c in 0..db {
            for s in 0..ds {
                let mut p = C64::new(0.0, 0.0);
                for i in 0..ds {
                    let ui = u.get(i, s).conj();
                    if ui == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for j in 0..ds {
                        p += ui * rho.get(i * db + c, j * db + c) * u.get(j, s);
                    }
                }
                let p = p.re;
                data[s * self.cells + self.cell_of[c]] += p;
                for (nu, f) in self.frames.iter().enumerate() {
                    let col = self.column_of[nu][c];
                    u_b[nu] += p * f.energies[col];
                    if let Some(n) = &f.numbers {
                        n_b[nu] += p * n[col];
                    }
                }
            }
        }
        let table = ProbabilityTable::new(std::iter::once(ds).chain(self.frames.iter().map(|f| f.log_volumes.len())).collect(), data)?;
        let s_joint: f64 = table
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > tol::ZERO_PROBABILITY)
            .map(|(k, &p)| p * (self.cell_log_volume[k % self.cells] - p.ln()))
            .sum();
        let s_sys = shannon(&table.marginal(0))?;
        let p_bath: Vec<Vec<f64>> = (0..m).map(|nu| table.marginal(nu + 1)).collect();
        let s_obs_bath = p_bath.iter().zip(&self.frames).map(|(p, f)| obs_sum(p, &f.log_volumes)).collect();

        let rho_b = HermitianOperator::symmetrized(ComplexMatrix::from_fn(db, db, |c, e| (0..ds).map(|i| rho.get(i * db + c, i * db + e)).sum()));
        let s_vn_baths = entropy_of_eigenvalues(&rho_b.spectrum()?.values);
        let energy = h.matrix().trace_product(rho).re;
        Ok(Snapshot { table, s_joint, s_sys, s_vn_sys, s_vn_baths, s_obs_bath, p_bath, u_b, n_b, energy })
    }

    fn run(&self, kind: RunKind, rho0: ComplexMatrix, references: Option<&[Reference]>, opts: &OpenOptions, dt_label: f64) -> Result<ThermoLedger> {
        let g = opts.grid_steps;
        let duration = self.protocol.duration();
        let times: Vec<f64> = (0..=g).map(|k| duration * k as f64 / g as f64).collect();
        let s_total = entropy_of_eigenvalues(&HermitianOperator::symmetrized(rho0.clone()).spectrum()?.values);
        let initial_is_diagonal = off_diagonal_max(&rho0);

        let mut evolver = GridEvolver::new(&self.protocol, g, rho0)?;
        let mut snaps = vec![self.observe(evolver.state(), evolver.current_hamiltonian(), opts.system_basis, true)?];
        let mut work = vec![0.0];
        for _ in 0..g {
            let w = evolver.advance()?;
            work.push(work.last().copied().unwrap_or(0.0) + w);
            snaps.push(self.observe(evolver.state(), evolver.current_hamiltonian(), opts.system_basis, false)?);
        }

        let particles = kind == RunKind::Particle;
        let mut baths = Vec::new();
        for (nu, frame) in self.frames.iter().enumerate() {
            let u: Vec<f64> = snaps.iter().map(|s| s.u_b[nu]).collect();
            let n: Vec<f64> = snaps.iter().map(|s| s.n_b[nu]).collect();
            let (beta, alpha, mu, clausius) = if particles {
                let numbers = frame.numbers.as_ref().ok_or_else(|| Error::SpecInvalid("missing bath number operator".into()))?;
                let points = u.iter().zip(&n).map(|(&uk, &nk)| effective_beta_mu_for_spectrum(&frame.energies, numbers, uk, nk)).collect::<Result<Vec<_>>>()?;
                let clausius = clausius_cumulative_particles(&u, &n, &points)?;
                (
                    points.iter().map(|p| p.beta_star).collect::<Vec<_>>(),
                    points.iter().map(|p| p.alpha()).collect::<Vec<_>>(),
                    Some(points.iter().map(|p| p.mu_star).collect::<Vec<_>>()),
                    clausius,
                )
            } else {
                let temps = u.iter().map(|&uk| effective_beta_for_spectrum(&frame.energies, uk)).collect::<Result<Vec<_>>>()?;
                let clausius = clausius_cumulative(&u, &temps)?;
                (temps.iter().map(|t| t.beta_star).collect(), vec![0.0; u.len()], None, clausius)
            };
            let reference = match references {
                Some(r) => r[nu],
                None => Reference::Canonical { beta: beta[0] },
            };
            let reference_weights = frame.weights(reference.beta(), reference.alpha());
            let r_delta = (entropy_of_eigenvalues(&reference_weights) - frame.obs_entropy_of_weights(&reference_weights)).abs();
            let s_equilibrium: Vec<f64> = beta.iter().zip(&alpha).map(|(&b, &a)| frame.equilibrium_entropy(b, a)).collect();
            let relative_entropy = beta.iter().zip(&alpha).map(|(&b, &a)| relative_entropy_weights(&frame.weights(b, a), &reference_weights)).collect();

            let mut q = vec![0.0];
            let mut w_chem = vec![0.0];
            for k in 1..u.len() {
                let du = u[k] - u[k - 1];
                let dn = n[k] - n[k - 1];
                let mu_mid = mu.as_ref().map_or(0.0, |m| 0.5 * (m[k - 1] + m[k]));
                q.push(q[k - 1] - (du - mu_mid * dn));
                // Particles leaving the bath enter the system.
                w_chem.push(w_chem[k - 1] - mu_mid * dn);
            }
            let quad = half_step_estimate(&clausius, &u, &n, &beta, &alpha);
            let p0 = &snaps[0].p_bath[nu];
            let epsilon_hat = snaps
                .iter()
                .map(|s| {
                    s.p_bath[nu]
                        .iter()
                        .zip(p0)
                        .filter(|(_, &a)| a > tol::ZERO_PROBABILITY)
                        .map(|(b, a)| (b / a - 1.0).abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            let u_binned = snaps.iter().map(|s| s.p_bath[nu].iter().zip(&frame.bin_energies).map(|(p, e)| p * e).sum()).collect();
            baths.push(BathSeries {
                u,
                n: particles.then_some(n),
                q,
                w_chem,
                beta_star: beta,
                mu_star: mu,
                s_obs: snaps.iter().map(|s| s.s_obs_bath[nu]).collect(),
                clausius,
                s_equilibrium,
                relative_entropy,
                u_binned,
                epsilon_hat,
                reference,
                r_delta,
                quadrature_estimate: quad,
            });
        }

        let npts = times.len();
        let s_joint: Vec<f64> = snaps.iter().map(|s| s.s_joint).collect();
        let s_sys: Vec<f64> = snaps.iter().map(|s| s.s_sys).collect();
        let s_vn_sys: Vec<f64> = snaps.iter().map(|s| s.s_vn_sys).collect();
        let i_obs = snaps.iter().map(|s| total_information(&s.table)).collect::<Result<Vec<f64>>>()?;
        let i_quantum: Vec<f64> = snaps.iter().map(|s| s.s_vn_sys + s.s_vn_baths - s_total).collect();

        let r_delta: f64 = baths.iter().map(|b| b.r_delta).sum();
        let slack = tol::SLACK_FLOOR.max(2.0 * r_delta);
        let mut h = HierarchyReport { r_delta, slack, ..HierarchyReport::default() };
        for k in 0..npts {
            let ds_sys = s_sys[k] - s_sys[0];
            let ds_vn = s_vn_sys[k] - s_vn_sys[0];
            let sum = |f: &dyn Fn(&BathSeries) -> f64| baths.iter().map(f).sum::<f64>();
            let sigma_a = s_joint[k] - s_joint[0];
            let sigma_b = ds_sys + sum(&|b| b.s_obs[k] - b.s_obs[0]);
            let sigma_c = ds_sys + sum(&|b| b.clausius[k]);
            let d_term = sum(&|b| {
                let dn = b.n.as_ref().map_or(0.0, |n| n[k] - n[0]);
                b.reference.beta() * (b.u[k] - b.u[0]) - b.reference.alpha() * dn
            });
            let sigma_d = ds_sys + d_term;
            let sigma_d_tilde = ds_vn + d_term;
            let bath_gap = sum(&|b| (b.s_equilibrium[k] - b.s_obs[k]) - (b.s_equilibrium[0] - b.s_obs[0]));
            h.sigma_a.push(sigma_a);
            h.sigma_b.push(sigma_b);
            h.sigma_c.push(sigma_c);
            h.sigma_d.push(sigma_d);
            h.sigma_d_tilde.push(sigma_d_tilde);
            h.gap_ab.push(sigma_b - sigma_a);
            h.gap_ab_expected.push(i_obs[k] - i_obs[0]);
            h.gap_bc.push(sigma_c - sigma_b);
            h.gap_bc_expected.push(bath_gap);
            h.gap_cd_tilde.push(sigma_d_tilde - sigma_c);
            h.gap_cd_tilde_expected.push(sum(&|b| b.relative_entropy[k]) + (ds_vn - ds_sys));
            h.quadrature_tolerance.push(tol::QUADRATURE_FLOOR.max(2.0 * sum(&|b| b.quadrature_estimate[k])));
        }
        let decomposition = Decomposition {
            line_clausius: h.sigma_c.clone(),
            line_bath_nonequilibrium: h.gap_bc_expected.iter().map(|g| -g).collect(),
            line_correlation: i_obs.iter().map(|i| i_obs[0] - i).collect(),
        };
        let dsigma_d_dt = finite_difference(&times, &h.sigma_d);

        let mut energy = Vec::with_capacity(npts);
        for k in 0..npts {
            let u_b: Vec<f64> = baths.iter().map(|b| b.u[k]).collect();
            energy.push(EnergyLedgerEntry {
                time: times[k],
                u_s: snaps[k].energy - u_b.iter().sum::<f64>(),
                u_b,
                w: work[k],
                w_chem: baths.iter().map(|b| b.w_chem[k]).sum(),
                q: baths.iter().map(|b| b.q[k]).collect(),
                beta_star: baths.iter().map(|b| b.beta_star[k]).collect(),
                mu_star: particles.then(|| baths.iter().map(|b| b.mu_star.as_ref().map_or(0.0, |m| m[k])).collect()),
                epsilon_hat: baths.iter().map(|b| b.epsilon_hat[k]).fold(0.0, f64::max),
            });
        }
        let first_law_residual = energy.iter().map(|e| e.first_law_residual(&energy[0])).collect();
        Ok(ThermoLedger {
            kind,
            dims: self.dims.clone(),
            dt: dt_label,
            system_basis: opts.system_basis,
            times,
            energy,
            s_joint,
            s_sys,
            s_vn_sys,
            i_obs,
            i_quantum,
            baths,
            hierarchy: h,
            decomposition,
            dsigma_d_dt,
            first_law_residual,
            initial_off_diagonal: initial_is_diagonal,
        })
    }
}

fn off_diagonal_max(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut max = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max = max.max(m.get(i, j).norm());
            }
        }
    }
    max
}

/// `|C_h − C_2h|` per sample, where `C_2h` repeats the Clausius quadrature on every other sample.
fn half_step_estimate(fine: &[f64], u: &[f64], n: &[f64], beta: &[f64], alpha: &[f64]) -> Vec<f64> {
    let len = fine.len();
    let mut even = vec![0.0; len];
    let mut coarse = 0.0;
    for k in (2..len).step_by(2) {
        coarse += 0.5 * (beta[k - 2] + beta[k]) * (u[k] - u[k - 2]) - 0.5 * (alpha[k - 2] + alpha[k]) * (n[k] - n[k - 2]);
        even[k] = (fine[k] - coarse).abs();
    }
    // Running envelope, looking one coarse step ahead: a single coarse step
    // is not yet asymptotic and underestimates the startup error.
    let mut envelope = even;
    for k in 1..len {
        envelope[k] = envelope[k].max(envelope[k - 1]);
    }
    let last_even = len.saturating_sub(1) / 2 * 2;
    (0..len).map(|k| envelope[(k / 2 * 2 + 2).min(last_even)]).collect()
}

fn finite_difference(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            (y[b] - y[a]) / (t[b] - t[a])
        })
        .collect()
}

/// Time series of one bath.
#[derive(Clone, Debug, Serialize)]
pub struct BathSeries {
    /// `U_ν = tr(H_ν ρ_ν)`.
    pub u: Vec<f64>,
    /// `N_ν`, particle runs only.
    pub n: Option<Vec<f64>>,
    /// Cumulative heat into the system from this bath.
    pub q: Vec<f64>,
    /// Cumulative chemical work carried by particles from this bath.
    pub w_chem: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub mu_star: Option<Vec<f64>>,
    /// `S_obs` of the bath energy (and number) marginal.
    pub s_obs: Vec<f64>,
    /// Running `∫ β* dU` (minus `∫ α* dN` for particle baths).
    pub clausius: Vec<f64>,
    /// Entropy of the matching equilibrium state at `β*` (and `μ*`).
    pub s_equilibrium: Vec<f64>,
    /// Relative entropy of the matching equilibrium state to the reference ensemble.
    pub relative_entropy: Vec<f64>,
    /// `Σ_E E p_E` with each window at its lower edge.
    pub u_binned: Vec<f64>,
    pub epsilon_hat: Vec<f64>,
    pub reference: Reference,
    /// `|S_vN − S_obs|` of the reference ensemble.
    pub r_delta: f64,
    pub quadrature_estimate: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct HierarchyReport {
    pub sigma_a: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub sigma_c: Vec<f64>,
    pub sigma_d: Vec<f64>,
    pub sigma_d_tilde: Vec<f64>,
    pub gap_ab: Vec<f64>,
    /// Change of the total information of the joint outcome distribution.
    pub gap_ab_expected: Vec<f64>,
    pub gap_bc: Vec<f64>,
    pub gap_bc_expected: Vec<f64>,
    pub gap_cd_tilde: Vec<f64>,
    /// Relative entropy of the matching equilibrium states, plus `ΔS_vN − ΔS_sys` in a fixed system basis.
    pub gap_cd_tilde_expected: Vec<f64>,
    pub quadrature_tolerance: Vec<f64>,
    pub r_delta: f64,
    pub slack: f64,
}

/// Three-line split of `Σ_a`: Clausius, bath nonequilibrium and correlation terms.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Decomposition {
    pub line_clausius: Vec<f64>,
    pub line_bath_nonequilibrium: Vec<f64>,
    pub line_correlation: Vec<f64>,
}

impl Decomposition {
    pub fn sum(&self, k: usize) -> f64 {
        self.line_clausius[k] + self.line_bath_nonequilibrium[k] + self.line_correlation[k]
    }
}

/// A failed invariant at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub invariant: String,
    pub index: usize,
    pub time: f64,
    /// Signed amount by which the invariant fails.
    pub excess: f64,
    pub tolerance: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated at t = {} (excess {:e}, tolerance {:e})", self.invariant, self.time, self.excess, self.tolerance)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    /// Records a violation when `value > tolerance`.
    fn at_most(&mut self, name: &str, index: usize, time: f64, value: f64, tolerance: f64) {
        if !(value <= tolerance) {
            if self.out.iter().any(|v| v.invariant == name) {
                return;
            }
            self.out.push(Violation { invariant: name.into(), index, time, excess: value, tolerance });
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermoLedger {
    pub kind: RunKind,
    pub dims: Vec<usize>,
    pub dt: f64,
    pub system_basis: SystemBasis,
    pub times: Vec<f64>,
    pub energy: Vec<EnergyLedgerEntry>,
    /// `S_obs` of the joint system-bath graining.
    pub s_joint: Vec<f64>,
    /// Shannon entropy of the system outcome marginal.
    pub s_sys: Vec<f64>,
    pub s_vn_sys: Vec<f64>,
    /// Total information of the joint outcome distribution.
    pub i_obs: Vec<f64>,
    /// Quantum mutual information between the system and all baths.
    pub i_quantum: Vec<f64>,
    pub baths: Vec<BathSeries>,
    pub hierarchy: HierarchyReport,
    pub decomposition: Decomposition,
    /// Finite-difference rate of `Σ_d`; recorded, never asserted.
    pub dsigma_d_dt: Vec<f64>,
    pub first_law_residual: Vec<f64>,
    /// Largest off-diagonal entry of the initial state in the product basis.
    pub initial_off_diagonal: f64,
}

impl ThermoLedger {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_law_tolerance(&self) -> f64 {
        tol::FIRST_LAW_C * self.dt * self.dt
    }

    /// Invariants that fail anywhere on the grid; the first failing point of each is reported.
    pub fn violations(&self) -> Vec<Violation> {
        let h = &self.hierarchy;
        let mut c = Checker { out: Vec::new() };
        let correlated_start = self.i_obs[0] > tol::GAP_AB;
        let eigen = self.system_basis == SystemBasis::Eigen;
        let single = self.baths.len() == 1;
        let ln_ds = (self.dims[0] as f64).ln();
        // A bath that starts below its equilibrium entropy can spend that deficit.
        let deficit0: f64 = self.baths.iter().map(|b| (b.s_equilibrium[0] - b.s_obs[0]).max(0.0)).sum();
        for k in 0..self.len() {
            let t = self.times[k];
            let q = h.quadrature_tolerance[k];
            c.at_most("sigma_a_nonnegative", k, t, -h.sigma_a[k], h.slack);
            c.at_most("gap_ab_identity", k, t, (h.gap_ab[k] - h.gap_ab_expected[k]).abs(), tol::GAP_AB);
            c.at_most("gap_bc_identity", k, t, (h.gap_bc[k] - h.gap_bc_expected[k]).abs(), q);
            c.at_most("gap_cd_tilde_identity", k, t, (h.gap_cd_tilde[k] - h.gap_cd_tilde_expected[k]).abs(), q + 2.0 * h.r_delta);
            if !correlated_start {
                c.at_most("order_a_b", k, t, h.sigma_a[k] - h.sigma_b[k], tol::GAP_AB);
            }
            c.at_most("order_b_c", k, t, h.sigma_b[k] - h.sigma_c[k], h.slack + q + deficit0);
            if eigen {
                c.at_most("order_c_d_tilde", k, t, h.sigma_c[k] - h.sigma_d_tilde[k], q);
            }
            c.at_most("decomposition_sum", k, t, (self.decomposition.sum(k) - h.sigma_a[k]).abs(), q);
            c.at_most("first_law", k, t, self.first_law_residual[k].abs(), self.first_law_tolerance());
            if single {
                c.at_most("information_bound", k, t, self.i_obs[k] - self.i_quantum[k], tol::GAP_AB);
                c.at_most("quantum_information_bound", k, t, self.i_quantum[k] - 2.0 * ln_ds, tol::GAP_AB);
            }
        }
        c.out
    }
}

fn check_system_state(rho_s: &DensityMatrix, d_s: usize) -> Result<()> {
    if rho_s.dim() != d_s {
        return Err(Error::DimensionMismatch { expected: d_s, found: rho_s.dim() });
    }
    let off = off_diagonal_max(rho_s.matrix());
    if off > tol::DIAGONALITY {
        return Err(Error::InvalidInitialState(format!("system state has coherence {off:e} in the computational basis")));
    }
    Ok(())
}

fn canonical_references(betas: &[f64], baths: usize) -> Result<Vec<Reference>> {
    if betas.len() != baths {
        return Err(Error::ConfigInvalid { field: "betas".into(), message: format!("expected {baths} values, got {}", betas.len()) });
    }
    if let Some(b) = betas.iter().find(|b| !b.is_finite()) {
        return Err(Error::ConfigInvalid { field: "betas".into(), message: format!("{b} is not finite") });
    }
    Ok(betas.iter().map(|&beta| Reference::Canonical { beta }).collect())
}

fn dt_of(model: &Model, opts: &OpenOptions) -> f64 {
    model.protocol.duration() / opts.grid_steps.max(1) as f64
}

/// Single bath, `ρ_S(0) ⊗ π_B(β₀)`.
pub fn run_open(model: &Model, opts: &OpenOptions, rho_s: &DensityMatrix, beta0: f64) -> Result<ThermoLedger> {
    if model.baths.len() != 1 {
        return Err(Error::SpecInvalid(format!("open runs need exactly one bath, model has {}", model.baths.len())));
    }
    run_multibath_kind(model, opts, rho_s, &[beta0], RunKind::Open)
}

/// `ρ_S(0) ⊗ π_1(β_1) ⊗ ... ⊗ π_n(β_n)`.
pub fn run_multibath(model: &Model, opts: &OpenOptions, rho_s: &DensityMatrix, betas: &[f64]) -> Result<ThermoLedger> {
    run_multibath_kind(model, opts, rho_s, betas, RunKind::Multibath)
}

fn run_multibath_kind(model: &Model, opts: &OpenOptions, rho_s: &DensityMatrix, betas: &[f64], kind: RunKind) -> Result<ThermoLedger> {
    let refs = canonical_references(betas, model.baths.len())?;
    check_system_state(rho_s, model.dims[0])?;
    let engine = Engine::new(model, opts, false)?;
    let weights: Vec<Vec<f64>> = engine.frames.iter().zip(&refs).map(|(f, r)| f.weights(r.beta(), 0.0)).collect();
    let rho0 = engine.product_state(rho_s.matrix(), &weights);
    engine.run(kind, rho0, Some(&refs), opts, dt_of(model, opts))
}

/// Grand-canonical baths `Ξ_ν(β_ν, μ_ν)` exchanging particles with the system.
pub fn run_particle(model: &Model, opts: &OpenOptions, rho_s: &DensityMatrix, betas: &[f64], mus: &[f64]) -> Result<ThermoLedger> {
    check_particle_model(model)?;
    let nb = model.baths.len();
    if mus.len() != nb {
        return Err(Error::ConfigInvalid { field: "mus".into(), message: format!("expected {nb} values, got {}", mus.len()) });
    }
    let refs: Vec<Reference> =
        canonical_references(betas, nb)?.iter().zip(mus).map(|(r, &mu)| Reference::Grand { beta: r.beta(), mu }).collect();
    check_system_state(rho_s, model.dims[0])?;
    let engine = Engine::new(model, opts, true)?;
    let weights: Vec<Vec<f64>> = engine.frames.iter().zip(&refs).map(|(f, r)| f.weights(r.beta(), r.alpha())).collect();
    let rho0 = engine.product_state(rho_s.matrix(), &weights);
    engine.run(RunKind::Particle, rho0, Some(&refs), opts, dt_of(model, opts))
}

/// Checks that every bath conserves its own number and the full Hamiltonian conserves the total.
pub fn check_particle_model(model: &Model) -> Result<()> {
    for b in &model.baths {
        let n = b.number.as_ref().ok_or_else(|| Error::SpecInvalid("particle runs need bath number operators".into()))?;
        let norm = commutator_norm(b.hamiltonian.matrix(), n.matrix());
        if norm > tol::COMMUTATOR {
            return Err(Error::NonCommuting { norm });
        }
    }
    let total = model.total_number().ok_or_else(|| Error::SpecInvalid("particle runs need number operators".into()))?;
    for (start, _) in model.protocol.segments() {
        let norm = commutator_norm(model.protocol.hamiltonian_at(start).matrix(), total.matrix());
        if norm > tol::COMMUTATOR {
            return Err(Error::NonConserving { norm });
        }
    }
    Ok(())
}

/// Initial states `Σ p_{s,E} |s⟩⟨s| ⊗ ω_B(E)` with `joint` indexed by system basis state and bath energy window.
///
/// The reference temperature for `Σ_d` is the effective temperature of the initial bath marginal.
pub fn run_open_generalized(model: &Model, opts: &OpenOptions, joint: &ProbabilityTable) -> Result<ThermoLedger> {
    if model.baths.len() != 1 {
        return Err(Error::SpecInvalid(format!("generalized runs need exactly one bath, model has {}", model.baths.len())));
    }
    let engine = Engine::new(model, opts, false)?;
    let frame = &engine.frames[0];
    let shape = [model.dims[0], frame.log_volumes.len()];
    if joint.shape() != shape {
        return Err(Error::ConfigInvalid {
            field: "initial.joint".into(),
            message: format!("table shape {:?} does not match (system states, bath windows) = {shape:?}", joint.shape()),
        });
    }
    if let Some(&v) = joint.data().iter().find(|&&v| v < -tol::PROBABILITY_CLAMP || !v.is_finite()) {
        return Err(Error::NegativeProbability { value: v });
    }
    let sum: f64 = joint.data().iter().sum();
    if (sum - 1.0).abs() > tol::PROBABILITY_SUM {
        return Err(Error::NotNormalized { sum });
    }
    let volumes = frame.graining.volumes();
    let db = engine.d_b;
    let diag: Vec<f64> = (0..model.dims[0] * db)
        .map(|i| {
            let (s, c) = (i / db, i % db);
            let x = frame.block_of[c];
            joint.data()[s * shape[1] + x].max(0.0) / volumes[x] as f64
        })
        .collect();
    engine.run(RunKind::OpenGeneralized, ComplexMatrix::from_real_diagonal(&diag), None, opts, dt_of(model, opts))
}

/// Product table `p_s · tr(Π_E π_B(β))` for [`run_open_generalized`].
pub fn product_joint_table(model: &Model, opts: &OpenOptions, populations: &[f64], beta: f64) -> Result<ProbabilityTable> {
    let b = model.baths.first().ok_or_else(|| Error::SpecInvalid("model has no bath".into()))?;
    let frame = BathFrame::new(b, opts.delta, opts.anchors.first().copied().flatten(), false)?;
    let w = frame.weights(beta, 0.0);
    let mut pe = vec![0.0; frame.log_volumes.len()];
    for (c, &x) in w.iter().zip(&frame.block_of) {
        pe[x] += c;
    }
    let data = populations.iter().flat_map(|&ps| pe.iter().map(move |&p| ps * p)).collect();
    ProbabilityTable::new(vec![populations.len(), pe.len()], data)
}

/// Labels of the bath windows used by an open run, in table order.
pub fn bath_windows(model: &Model, opts: &OpenOptions, bath: usize, particles: bool) -> Result<Vec<OutcomeLabel>> {
    let b = model.baths.get(bath).ok_or_else(|| Error::SpecInvalid(format!("model has no bath {bath}")))?;
    let frame = BathFrame::new(b, opts.delta, opts.anchors.get(bath).copied().flatten(), particles)?;
    Ok(frame.graining.labels().to_vec())
}

/// Runs from an arbitrary initial state without checking its preconditions.
///
/// `references` gives the reference ensemble of each bath for `Σ_d` and `r_δ`.
pub fn run_open_unchecked(model: &Model, opts: &OpenOptions, rho0: &DensityMatrix, references: &[Reference]) -> Result<ThermoLedger> {
    if references.len() != model.baths.len() {
        return Err(Error::LengthMismatch { left: references.len(), right: model.baths.len() });
    }
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: rho0.dim() });
    }
    let particles = references.iter().any(|r| r.mu().is_some());
    let engine = Engine::new(model, opts, particles)?;
    let kind = if particles {
        RunKind::Particle
    } else if model.baths.len() == 1 {
        RunKind::Open
    } else {
        RunKind::Multibath
    };
    engine.run(kind, engine.to_frame(rho0.matrix()), Some(references), opts, dt_of(model, opts))
}

/// Initial state of an isolated run.
#[derive(Clone, Debug)]
pub enum IsolatedInitial {
    Gibbs { beta: f64 },
    /// `Σ_E p_E ω(E)` with `p_E = tr(Π_E π(β))`, a member of the equilibrium set.
    CoarseGibbs { beta: f64 },
    State(DensityMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolatedOptions {
    pub grid_steps: usize,
    pub delta: f64,
    pub anchor: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsolatedLedger {
    pub dt: f64,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub work: Vec<f64>,
    pub s_obs: Vec<f64>,
    /// `S_obs^{E_t}[ρ(t)] − S_obs^{E_0}[ρ(0)]`.
    pub sigma: Vec<f64>,
    pub beta_star: Vec<f64>,
    /// `∫ đQ/T*`, equal to the equilibrium entropy change `S(β*_t, λ_t) − S(β*_0, λ_0)`.
    pub clausius: Vec<f64>,
    /// `|S_vN − S_obs|` of the matching Gibbs state at each time.
    pub r_delta: Vec<f64>,
    pub slack: Vec<f64>,
    pub first_law_residual: Vec<f64>,
    pub membership: Membership,
    /// `β*` hit the solver bound at some time.
    pub saturated: bool,
}

impl IsolatedLedger {
    pub fn first_law_tolerance(&self) -> f64 {
        tol::FIRST_LAW_C * self.dt * self.dt
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut c = Checker { out: Vec::new() };
        if !self.membership.member {
            c.out.push(Violation {
                invariant: "initial_equilibrium_membership".into(),
                index: 0,
                time: 0.0,
                excess: self.membership.residual,
                tolerance: tol::MEMBERSHIP,
            });
        }
        for k in 0..self.times.len() {
            let t = self.times[k];
            if self.membership.member {
                c.at_most("second_law", k, t, -self.sigma[k], self.slack[k]);
                c.at_most("clausius_bound", k, t, self.sigma[k] - self.clausius[k], self.slack[k]);
            }
            c.at_most("first_law", k, t, self.first_law_residual[k].abs(), self.first_law_tolerance().max(tol::ENERGY_CONSERVATION));
        }
        c.out
    }
}

/// Driven isolated system with the energy graining rebuilt from `H(λ_t)` at every grid time.
pub fn run_isolated(model: &Model, opts: &IsolatedOptions, initial: IsolatedInitial) -> Result<IsolatedLedger> {
    if opts.grid_steps == 0 {
        return Err(Error::ConfigInvalid { field: "grid.steps".into(), message: "must be at least 1".into() });
    }
    let protocol = &model.protocol;
    let dims = model.dims.clone();
    let h0 = protocol.hamiltonian_at(0);
    let x0 = energy_graining(h0, opts.delta, opts.anchor)?;
    let rho0 = match initial {
        IsolatedInitial::Gibbs { beta } => gibbs_state(h0, beta)?.with_factor_dims(dims.clone())?,
        IsolatedInitial::CoarseGibbs { beta } => {
            let p = outcome_distribution(&gibbs_state(h0, beta)?, &x0)?;
            crate::entropy::equilibrium_state(&x0, &p.probabilities)?.with_factor_dims(dims.clone())?
        }
        IsolatedInitial::State(rho) => {
            if rho.dim() != model.dim() {
                return Err(Error::DimensionMismatch { expected: model.dim(), found: rho.dim() });
            }
            rho
        }
    };
    let membership = is_equilibrium_member(&rho0, &x0, tol::MEMBERSHIP)?;

    let g = opts.grid_steps;
    let duration = protocol.duration();
    let mut grainings: HashMap<usize, CoarseGraining> = HashMap::new();
    let mut evolver = GridEvolver::new(protocol, g, rho0.matrix().clone())?;
    let mut ledger = IsolatedLedger {
        dt: duration / g as f64,
        times: Vec::new(),
        energy: Vec::new(),
        work: Vec::new(),
        s_obs: Vec::new(),
        sigma: Vec::new(),
        beta_star: Vec::new(),
        clausius: Vec::new(),
        r_delta: Vec::new(),
        slack: Vec::new(),
        first_law_residual: Vec::new(),
        membership,
        saturated: false,
    };
    let mut s_eq0 = 0.0;
    let mut work = 0.0;
    for k in 0..=g {
        if k > 0 {
            work += evolver.advance()?;
        }
        let step = evolver.current_step();
        let shared = protocol.shared_at(step);
        let h = shared.as_ref();
        let key = Arc::as_ptr(shared) as usize;
        if !grainings.contains_key(&key) {
            grainings.insert(key, energy_graining(h, opts.delta, opts.anchor)?);
        }
        let x = &grainings[&key];
        let rho = DensityMatrix::trusted(evolver.state().clone(), dims.clone())?;
        let s_obs = obs_entropy(&rho, x)?;
        let u = h.expectation(&rho)?;
        let bt = effective_beta(h, u)?;
        ledger.saturated |= bt.is_saturated();
        let values = &h.spectrum()?.values;
        let s_eq = gibbs_entropy(values, bt.beta_star);
        // The graining basis is the eigenbasis, so the Gibbs weights are its column weights.
        let w = gibbs_weights(values, bt.beta_star);
        let p: Vec<f64> = x.blocks().iter().map(|&(s, l)| w[s..s + l].iter().sum()).collect();
        let lv: Vec<f64> = x.volumes().iter().map(|&v| (v as f64).ln()).collect();
        let r_delta = (s_eq - obs_sum(&p, &lv)).abs();
        if k == 0 {
            s_eq0 = s_eq;
        }
        ledger.times.push(duration * k as f64 / g as f64);
        ledger.energy.push(u);
        ledger.work.push(work);
        ledger.s_obs.push(s_obs);
        ledger.sigma.push(s_obs - ledger.s_obs[0]);
        ledger.beta_star.push(bt.beta_star);
        ledger.clausius.push(s_eq - s_eq0);
        ledger.slack.push(tol::SLACK_FLOOR.max(2.0 * r_delta.max(ledger.r_delta.first().copied().unwrap_or(r_delta))));
        ledger.r_delta.push(r_delta);
        ledger.first_law_residual.push(u - ledger.energy[0] - work);
    }
    Ok(ledger)
}

/// `|mean(a − b)| / mean(|a| + |b|)`: net transfer between two mirror-image baths relative to the gross transfer.
pub fn symmetric_current_ratio(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let net: f64 = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n as f64;
    let gross: f64 = a.iter().zip(b).map(|(x, y)| x.abs() + y.abs()).sum::<f64>() / n as f64;
    if gross == 0.0 {
        0.0
    } else {
        net.abs() / gross
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjectureRow {
    pub time: f64,
    pub clausius: f64,
    pub bath_nonequilibrium: f64,
    pub correlation: f64,
}

/// Magnitudes of the three decomposition lines over time. Informational only.
#[derive(Clone, Debug, Serialize)]
pub struct ConjectureReport {
    pub rows: Vec<ConjectureRow>,
    /// Least-squares slope of `|line 1|` over the second half of the run.
    pub clausius_rate: f64,
    /// Mean `|line 3|` over the last quarter of the run.
    pub correlation_plateau: f64,
}

pub fn conjecture_report(ledger: &ThermoLedger) -> ConjectureReport {
    let d = &ledger.decomposition;
    let rows: Vec<ConjectureRow> = (0..ledger.len())
        .map(|k| ConjectureRow {
            time: ledger.times[k],
            clausius: d.line_clausius[k].abs(),
            bath_nonequilibrium: d.line_bath_nonequilibrium[k].abs(),
            correlation: d.line_correlation[k].abs(),
        })
        .collect();
    let half = &rows[rows.len() / 2..];
    let clausius_rate = if half.len() >= 2 {
        let n = half.len() as f64;
        let mt = half.iter().map(|r| r.time).sum::<f64>() / n;
        let my = half.iter().map(|r| r.clausius).sum::<f64>() / n;
        let sxy: f64 = half.iter().map(|r| (r.time - mt) * (r.clausius - my)).sum();
        let sxx: f64 = half.iter().map(|r| (r.time - mt).powi(2)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    let tail = &rows[rows.len() - rows.len().div_ceil(4).max(1)..];
    let correlation_plateau = tail.iter().map(|r| r.correlation).sum::<f64>() / tail.len() as f64;
    ConjectureReport { rows, clausius_rate, correlation_plateau }
}

impl fmt::Display for ConjectureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>14} {:>14} {:>14}", "time", "|clausius|", "|bath noneq|", "|correlation|")?;
        for r in &self.rows {
            writeln!(f, "{:>12.4} {:>14.6e} {:>14.6e} {:>14.6e}", r.time, r.clausius, r.bath_nonequilibrium, r.correlation)?;
        }
        writeln!(f, "clausius line growth rate: {:.6e}", self.clausius_rate)?;
        write!(f, "correlation line plateau: {:.6e}", self.correlation_plateau)
    }
}
