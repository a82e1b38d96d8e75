//! Piecewise-constant protocols, exact step propagators and time reversal.
//!
//! Time reversal `Θ` is complex conjugation in the computational basis, so
//! `Θ A Θ^{-1}` is the entrywise conjugate of `A`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, DensityMatrix, HermitianOperator, C64};

/// `H(λ_k)` for steps `k = 0..N`, each held for `duration / N`.
///
/// Consecutive steps that share the same `Arc` are treated as one segment,
/// so their exponential is computed once.
#[derive(Clone, Debug)]
pub struct Protocol {
    duration: f64,
    steps: Vec<Arc<HermitianOperator>>,
    metadata: String,
}

impl Protocol {
    pub fn new(duration: f64, steps: Vec<Arc<HermitianOperator>>, metadata: impl Into<String>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::GridMismatch("protocol needs at least one step".into()));
        }
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::GridMismatch(format!("invalid duration {duration}")));
        }
        let d = steps[0].dim();
        if let Some(h) = steps.iter().find(|h| h.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: h.dim() });
        }
        Ok(Self { duration, steps, metadata: metadata.into() })
    }

    pub fn constant(h: HermitianOperator, duration: f64, steps: usize) -> Result<Self> {
        let h = Arc::new(h);
        Self::new(duration, vec![h; steps.max(1)], "constant")
    }

    /// Concatenates segments, each held for the given number of steps.
    pub fn from_segments(duration: f64, segments: Vec<(HermitianOperator, usize)>, metadata: impl Into<String>) -> Result<Self> {
        let mut steps = Vec::new();
        for (h, count) in segments {
            let h = Arc::new(h);
            steps.extend(std::iter::repeat_n(h, count));
        }
        Self::new(duration, steps, metadata)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.steps.len() as f64
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn hamiltonian_at(&self, step: usize) -> &HermitianOperator {
        &self.steps[step]
    }

    pub fn shared_at(&self, step: usize) -> &Arc<HermitianOperator> {
        &self.steps[step]
    }

    /// Hamiltonian in force at time `t`, right-continuous and clamped to the last step.
    pub fn hamiltonian_at_time(&self, t: f64) -> &HermitianOperator {
        let k = if self.duration > 0.0 { (t / self.dt()).floor().max(0.0) as usize } else { 0 };
        &self.steps[k.min(self.steps.len() - 1)]
    }

    /// Maximal runs of identical steps as `(start, len)`.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for k in 0..self.steps.len() {
            match out.last_mut() {
                Some((s, len)) if Arc::ptr_eq(&self.steps[*s], &self.steps[k]) => *len += 1,
                _ => out.push((k, 1)),
            }
        }
        out
    }

    /// Applies `f` once per distinct Hamiltonian, keeping the sharing pattern.
    pub fn map_hamiltonians(&self, mut f: impl FnMut(&HermitianOperator) -> Result<HermitianOperator>) -> Result<Self> {
        let mut done: Vec<(*const HermitianOperator, Arc<HermitianOperator>)> = Vec::new();
        let mut steps = Vec::with_capacity(self.steps.len());
        for h in &self.steps {
            let key = Arc::as_ptr(h);
            let mapped = match done.iter().find(|(p, _)| *p == key) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = Arc::new(f(h)?);
                    done.push((key, m.clone()));
                    m
                }
            };
            steps.push(mapped);
        }
        Self::new(self.duration, steps, self.metadata.clone())
    }
}

#[derive(Clone, Debug)]
pub struct Propagator {
    pub matrix: ComplexMatrix,
    pub span: (f64, f64),
    pub step_count: usize,
}

/// `e^{-iH(λ_{N-1})δt} ··· e^{-iH(λ_0)δt}` with exact per-segment exponentials.
pub fn trotter_propagator(p: &Protocol) -> Result<Propagator> {
    let dt = p.dt();
    let mut u = ComplexMatrix::identity(p.dim());
    for (start, len) in p.segments() {
        let step = exp_segment(p.hamiltonian_at(start), len as f64 * dt)?;
        u = step.matmul(&u);
    }
    Ok(Propagator { matrix: u, span: (0.0, p.duration()), step_count: p.len() })
}

fn exp_segment(h: &HermitianOperator, t: f64) -> Result<ComplexMatrix> {
    if t == 0.0 {
        return Ok(ComplexMatrix::identity(h.dim()));
    }
    crate::linalg::propagator_step(h, t)
}

pub fn evolve(rho: &DensityMatrix, u: &Propagator) -> Result<DensityMatrix> {
    rho.unitary_image(&u.matrix)
}

/// `Θ ρ Θ^{-1}`: entrywise conjugation.
pub fn time_reverse_state(rho: &DensityMatrix) -> DensityMatrix {
    DensityMatrix::trusted(rho.matrix().conj(), rho.dims().to_vec()).expect("conjugation preserves trace")
}

pub fn time_reverse_operator(a: &ComplexMatrix) -> ComplexMatrix {
    a.conj()
}

/// Step `k` of the result is the conjugate of step `N − 1 − k`.
pub fn reversed_protocol(p: &Protocol) -> Protocol {
    let conj = p.map_hamiltonians(|h| Ok(h.conj())).expect("conjugation preserves shape");
    let steps: Vec<_> = (0..p.len()).rev().map(|k| conj.shared_at(k).clone()).collect();
    Protocol::new(p.duration(), steps, format!("reversed({})", p.metadata())).expect("same shape as input")
}

/// `max |ρ(0) − Θ^{-1} U_Θ Θ ρ(t) Θ^{-1} U_Θ^† Θ|` after a forward run of `p`.
pub fn recovery_check(rho0: &DensityMatrix, p: &Protocol) -> Result<f64> {
    let u = trotter_propagator(p)?;
    let rho_t = evolve(rho0, &u)?;
    let u_rev = trotter_propagator(&reversed_protocol(p))?;
    let back = rho_t.matrix().conjugate_by(&u_rev.matrix.conj());
    Ok(rho0.matrix().max_abs_diff(&back))
}

/// Evolves a state along a uniform time grid laid over a protocol, applying
/// the exact piecewise-constant dynamics and accumulating quench work
/// `tr((H_new − H_old) ρ)` at every step change.
///
/// Grid and protocol need not be aligned: positions are tracked in units of
/// `1/G` of a protocol step, so jumps and grid points are located exactly.
pub struct GridEvolver<'a> {
    protocol: &'a Protocol,
    grid_steps: usize,
    position: usize,
    state: ComplexMatrix,
    run_end: Vec<usize>,
    cache: HashMap<(usize, usize), ComplexMatrix>,
}

impl<'a> GridEvolver<'a> {
    pub fn new(protocol: &'a Protocol, grid_steps: usize, state: ComplexMatrix) -> Result<Self> {
        if grid_steps == 0 {
            return Err(Error::GridMismatch("grid needs at least one step".into()));
        }
        if state.nrows() != protocol.dim() {
            return Err(Error::DimensionMismatch { expected: protocol.dim(), found: state.nrows() });
        }
        let mut run_end = vec![0; protocol.len()];
        for (start, len) in protocol.segments() {
            run_end[start..start + len].iter_mut().for_each(|r| *r = start + len);
        }
        Ok(Self { protocol, grid_steps, position: 0, state, run_end, cache: HashMap::new() })
    }

    pub fn state(&self) -> &ComplexMatrix {
        &self.state
    }

    /// Protocol step in force at the current position.
    pub fn current_step(&self) -> usize {
        (self.position / self.grid_steps).min(self.protocol.len() - 1)
    }

    pub fn current_hamiltonian(&self) -> &HermitianOperator {
        self.protocol.hamiltonian_at(self.current_step())
    }

    /// Advances one grid interval and returns the quench work done in it.
    pub fn advance(&mut self) -> Result<f64> {
        let g = self.grid_steps;
        let n = self.protocol.len();
        let target = self.position + n;
        if target > n * g {
            return Err(Error::GridMismatch("advanced past the end of the protocol".into()));
        }
        let unit = self.protocol.dt() / g as f64;
        let mut work = 0.0;
        while self.position < target {
            let k = self.position / g;
            let end = target.min(self.run_end[k] * g);
            let span = end - self.position;
            let h = self.protocol.shared_at(k);
            let key = (Arc::as_ptr(h) as usize, span);
            if !self.cache.contains_key(&key) {
                self.cache.insert(key, exp_segment(h, span as f64 * unit)?);
            }
            self.state = self.state.conjugate_by(&self.cache[&key]);
            self.position = end;
            if end < n * g && end % g == 0 {
                let next = self.protocol.shared_at(end / g);
                if !Arc::ptr_eq(h, next) {
                    let dh = next.matrix().sub(h.matrix());
                    work += dh.trace_product(&self.state).re;
                }
            }
        }
        Ok(work)
    }
}

/// `|<Θψ|Θφ>|` equals `|<ψ|φ>|`; helper for conjugated vectors.
pub fn time_reverse_vector(psi: &[C64]) -> Vec<C64> {
    psi.iter().map(|z| z.conj()).collect()
}
