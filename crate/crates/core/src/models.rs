//! Concrete spin and hopping models with their driving protocols.
//!
//! Tensor factors are ordered `[system, bath 1, bath 2, ...]`. Within the
//! full register, site 0 is the most significant bit; `|0>` is spin up
//! (`σz = +1`) and `|1>` is spin down, which counts as an occupied site
//! for the number operator `n = (1 − σz)/2`.
//!
//! Random bath frequencies are drawn uniformly from `[0.5, 1.5)` with
//! SplitMix64: `state += 0x9E3779B97F4A7C15; z = state;
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//! z ^= z >> 31` (all wrapping 64-bit), and `u = (z >> 11) * 2^-53`.
//! Draws are consumed bath by bath, site by site.

use serde::{Deserialize, Serialize};

use crate::dynamics::Protocol;
use crate::error::{Error, Result};
use crate::linalg::{commutator_norm, ComplexMatrix, HermitianOperator, C64};
use crate::tol;

pub const MAX_DIM: usize = 4096;

/// Portable 64-bit generator used for model parameters.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Time dependence of the system parameter `ε(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drive {
    None,
    /// Linear ramp from the model's `epsilon` to `to` over the full duration.
    Ramp { to: f64 },
    /// `epsilon + amplitude · sin(2π t / period)`.
    Periodic { amplitude: f64, period: f64 },
    /// Switch from `epsilon` to `to` at time `at`.
    Quench { to: f64, at: f64 },
}

impl Drive {
    pub fn value(&self, epsilon: f64, t: f64, duration: f64) -> f64 {
        match *self {
            Drive::None => epsilon,
            Drive::Ramp { to } => {
                let s = if duration > 0.0 { (t / duration).clamp(0.0, 1.0) } else { 0.0 };
                epsilon + (to - epsilon) * s
            }
            Drive::Periodic { amplitude, period } => epsilon + amplitude * (2.0 * std::f64::consts::PI * t / period).sin(),
            Drive::Quench { to, at } => {
                if t >= at {
                    to
                } else {
                    epsilon
                }
            }
        }
    }
}

/// Staircase sampling of a drive: `steps` protocol steps grouped in runs of
/// `hold`, each run using `ε` at its midpoint time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Driving {
    pub drive: Drive,
    pub protocol_steps: usize,
    pub hold: usize,
}

impl Default for Driving {
    fn default() -> Self {
        Self { drive: Drive::None, protocol_steps: 400, hold: 20 }
    }
}

impl Driving {
    /// Parameter value per run and the run lengths.
    fn staircase(&self, epsilon: f64, duration: f64) -> Result<Vec<(f64, usize)>> {
        if self.protocol_steps == 0 || self.hold == 0 {
            return Err(Error::SpecInvalid("protocol_steps and hold must be positive".into()));
        }
        if let Drive::Periodic { period, .. } = self.drive {
            if !(period > 0.0) {
                return Err(Error::SpecInvalid("drive.period must be positive".into()));
            }
        }
        let dt = duration / self.protocol_steps as f64;
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.protocol_steps {
            let len = self.hold.min(self.protocol_steps - start);
            let t = (start as f64 + 0.5 * len as f64) * dt;
            let value = if matches!(self.drive, Drive::Quench { .. }) {
                self.drive.value(epsilon, start as f64 * dt, duration)
            } else {
                self.drive.value(epsilon, t, duration)
            };
            out.push((value, len));
            start += len;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinStarSpec {
    pub bath_sites: usize,
    /// System splitting `ε` at `t = 0`.
    pub epsilon: f64,
    /// Transverse system field `Δ`.
    pub tunneling: f64,
    /// System-bath coupling `g`.
    pub coupling: f64,
    /// Nearest-neighbour `σx σx` coupling around the bath ring.
    pub ring_coupling: f64,
    /// Explicit bath frequencies; drawn from `seed` when absent.
    pub omegas: Option<Vec<f64>>,
    pub seed: u64,
    pub driving: Driving,
}

impl Default for SpinStarSpec {
    fn default() -> Self {
        Self {
            bath_sites: 8,
            epsilon: 1.0,
            tunneling: 0.5,
            coupling: 0.2,
            ring_coupling: 0.2,
            omegas: None,
            seed: 2024,
            driving: Driving { drive: Drive::Ramp { to: 2.0 }, ..Driving::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoBathSpec {
    /// Sites per bath chain.
    pub bath_sites: Vec<usize>,
    pub epsilon: f64,
    pub tunneling: f64,
    /// `g_ν`: `σx` coupling between the system and the adjacent end site of chain `ν`.
    pub couplings: Vec<f64>,
    /// `σx σx` coupling along each bath chain.
    pub chain_coupling: f64,
    pub omegas: Option<Vec<Vec<f64>>>,
    /// Use the reversed frequencies of bath 1 for bath 2, making the chain mirror symmetric.
    pub mirror: bool,
    pub seed: u64,
    pub driving: Driving,
}

impl Default for TwoBathSpec {
    fn default() -> Self {
        Self {
            bath_sites: vec![4, 4],
            epsilon: 1.0,
            tunneling: 0.5,
            couplings: vec![0.2, 0.2],
            chain_coupling: 0.2,
            omegas: None,
            mirror: true,
            seed: 2024,
            driving: Driving::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoppingSpec {
    pub system_sites: usize,
    pub bath_sites: Vec<usize>,
    /// On-site energy of the system sites at `t = 0`.
    pub epsilon: f64,
    pub system_hopping: f64,
    pub bath_hopping: f64,
    /// Hopping between the system chain ends and the adjacent bath ends.
    pub couplings: Vec<f64>,
    /// Explicit bath on-site energies; drawn from `seed` when absent.
    pub omegas: Option<Vec<Vec<f64>>>,
    pub mirror: bool,
    /// `h Σ σx` on bath sites; any nonzero value breaks number conservation.
    pub transverse_field: f64,
    pub seed: u64,
    pub driving: Driving,
}

impl Default for HoppingSpec {
    fn default() -> Self {
        Self {
            system_sites: 2,
            bath_sites: vec![2, 2],
            epsilon: 1.0,
            system_hopping: 0.5,
            bath_hopping: 0.5,
            couplings: vec![0.3, 0.3],
            omegas: None,
            mirror: true,
            transverse_field: 0.0,
            seed: 2024,
            driving: Driving::default(),
        }
    }
}

/// A matrix given by real rows or by rows of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Real(Vec<Vec<f64>>),
    Complex(Vec<Vec<[f64; 2]>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        match self {
            MatrixSpec::Real(rows) => ComplexMatrix::from_real_rows(rows),
            MatrixSpec::Complex(rows) => {
                let rows: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().map(|z| C64::new(z[0], z[1])).collect()).collect();
                ComplexMatrix::from_rows(&rows)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    /// Hamiltonians held for equal shares of the duration, in order.
    pub segments: Vec<MatrixSpec>,
    /// Tensor factor dims; defaults to a single factor.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// Protocol steps per segment.
    #[serde(default = "one")]
    pub hold: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    SpinStar(SpinStarSpec),
    SpinChainTwoBath(TwoBathSpec),
    HoppingParticle(HoppingSpec),
    Custom(CustomSpec),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::SpinStar(SpinStarSpec::default())
    }
}

#[derive(Clone, Debug)]
pub struct Bath {
    /// `H_ν` on the bath factor alone.
    pub hamiltonian: HermitianOperator,
    /// `N_ν` on the bath factor alone, for particle models.
    pub number: Option<HermitianOperator>,
}

#[derive(Clone, Debug)]
pub struct Model {
    /// Factor dims `[d_S, d_B1, ...]`.
    pub dims: Vec<usize>,
    /// Full Hamiltonian per protocol step.
    pub protocol: Protocol,
    pub baths: Vec<Bath>,
    /// `V_SB` on the full space (sum over baths).
    pub interaction: HermitianOperator,
    /// `N_S` on the system factor, for particle models.
    pub system_number: Option<HermitianOperator>,
    /// System parameter `ε` per protocol step.
    pub lambdas: Vec<f64>,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn system_dim(&self) -> usize {
        self.dims[0]
    }

    /// `H_S(λ_k)` embedded in the full space, i.e. `H(λ_k) − Σ_ν H_ν − V_SB`.
    pub fn system_hamiltonian(&self, step: usize) -> HermitianOperator {
        let mut h = self.protocol.hamiltonian_at(step).sub(&self.interaction);
        for (nu, b) in self.baths.iter().enumerate() {
            h = h.sub(&HermitianOperator::symmetrized(embed(b.hamiltonian.matrix(), nu + 1, &self.dims)));
        }
        h
    }

    /// Total particle number on the full space, for particle models.
    pub fn total_number(&self) -> Option<HermitianOperator> {
        let ns = self.system_number.as_ref()?;
        let mut total = embed(ns.matrix(), 0, &self.dims);
        for (nu, b) in self.baths.iter().enumerate() {
            total = total.add(&embed(b.number.as_ref()?.matrix(), nu + 1, &self.dims));
        }
        Some(HermitianOperator::symmetrized(total))
    }
}

/// `1 ⊗ op ⊗ 1` with `op` acting on tensor factor `factor`.
pub fn embed(op: &ComplexMatrix, factor: usize, dims: &[usize]) -> ComplexMatrix {
    let left: usize = dims[..factor].iter().product();
    let right: usize = dims[factor + 1..].iter().product();
    let d = dims[factor];
    let n = left * d * right;
    ComplexMatrix::from_fn(n, n, |i, j| {
        let (li, ri, ai) = (i / (d * right), i % right, (i / right) % d);
        let (lj, rj, aj) = (j / (d * right), j % right, (j / right) % d);
        if li == lj && ri == rj {
            op.get(ai, aj)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Real Hamiltonian terms on a register of two-level sites, assembled entrywise.
pub struct Register {
    sites: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl Register {
    pub fn new(sites: usize) -> Self {
        let dim = 1usize << sites;
        Self { sites, dim, entries: vec![0.0; dim * dim] }
    }

    fn bit(&self, state: usize, site: usize) -> usize {
        (state >> (self.sites - 1 - site)) & 1
    }

    fn flip(&self, state: usize, site: usize) -> usize {
        state ^ (1 << (self.sites - 1 - site))
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.dim + j] += v;
    }

    /// `c σz^k`.
    pub fn z(&mut self, site: usize, c: f64) {
        for s in 0..self.dim {
            let sign = if self.bit(s, site) == 0 { 1.0 } else { -1.0 };
            self.add(s, s, c * sign);
        }
    }

    /// `c n_k` with `n = (1 − σz)/2`.
    pub fn number(&mut self, site: usize, c: f64) {
        for s in 0..self.dim {
            if self.bit(s, site) == 1 {
                self.add(s, s, c);
            }
        }
    }

    /// `c σx^k`.
    pub fn x(&mut self, site: usize, c: f64) {
        for s in 0..self.dim {
            let t = self.flip(s, site);
            self.add(t, s, c);
        }
    }

    /// `c σx^i σx^j`.
    pub fn xx(&mut self, i: usize, j: usize, c: f64) {
        for s in 0..self.dim {
            let t = self.flip(self.flip(s, i), j);
            self.add(t, s, c);
        }
    }

    /// `c (σ+_i σ-_j + σ+_j σ-_i)`: moves an excitation between `i` and `j`.
    pub fn hop(&mut self, i: usize, j: usize, c: f64) {
        for s in 0..self.dim {
            if self.bit(s, i) != self.bit(s, j) {
                let t = self.flip(self.flip(s, i), j);
                self.add(t, s, c);
            }
        }
    }

    pub fn into_operator(self) -> HermitianOperator {
        let d = self.dim;
        let e = self.entries;
        HermitianOperator::symmetrized(ComplexMatrix::from_fn(d, d, |i, j| C64::new(e[i * d + j], 0.0)))
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SpecInvalid(format!("{name} must be finite")));
    }
    Ok(())
}

fn check_dim(sites: usize) -> Result<()> {
    if sites == 0 || sites > 12 || (1usize << sites) > MAX_DIM {
        return Err(Error::SpecInvalid(format!("{sites} sites exceed the dimension limit {MAX_DIM}")));
    }
    Ok(())
}

/// Per-bath parameters: explicit lists or uniform draws in `[0.5, 1.5)`.
fn bath_omegas(explicit: &Option<Vec<Vec<f64>>>, sites: &[usize], mirror: bool, seed: u64) -> Result<Vec<Vec<f64>>> {
    if let Some(lists) = explicit {
        if lists.len() != sites.len() || lists.iter().zip(sites).any(|(l, &s)| l.len() != s) {
            return Err(Error::SpecInvalid("omegas must list one value per bath site".into()));
        }
        for l in lists {
            check_finite("omegas", l)?;
        }
        return Ok(lists.clone());
    }
    if mirror && (sites.len() != 2 || sites[0] != sites[1]) {
        return Err(Error::SpecInvalid("mirror requires two baths of equal size".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (nu, &s) in sites.iter().enumerate() {
        if mirror && nu == 1 {
            out.push(out[0].iter().rev().copied().collect());
        } else {
            out.push((0..s).map(|_| 0.5 + rng.next_f64()).collect());
        }
    }
    Ok(out)
}

struct Assembly {
    dims: Vec<usize>,
    baths: Vec<Bath>,
    interaction: HermitianOperator,
    system_number: Option<HermitianOperator>,
    system_at: Box<dyn Fn(f64) -> HermitianOperator>,
}

pub fn build(spec: &ModelSpec, duration: f64) -> Result<Model> {
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::SpecInvalid(format!("duration {duration} must be finite and non-negative")));
    }
    let (assembly, driving, epsilon) = match spec {
        ModelSpec::SpinStar(s) => (spin_star(s)?, &s.driving, s.epsilon),
        ModelSpec::SpinChainTwoBath(s) => (two_bath(s)?, &s.driving, s.epsilon),
        ModelSpec::HoppingParticle(s) => (hopping(s)?, &s.driving, s.epsilon),
        ModelSpec::Custom(c) => return custom(c, duration),
    };
    let mut fixed = assembly.interaction.clone();
    for (nu, b) in assembly.baths.iter().enumerate() {
        fixed = fixed.add(&HermitianOperator::symmetrized(embed(b.hamiltonian.matrix(), nu + 1, &assembly.dims)));
    }
    let mut segments = Vec::new();
    let mut lambdas = Vec::new();
    for (value, len) in driving.staircase(epsilon, duration)? {
        let hs = (assembly.system_at)(value);
        let hs_full = HermitianOperator::symmetrized(embed(hs.matrix(), 0, &assembly.dims));
        segments.push((fixed.add(&hs_full), len));
        lambdas.extend(std::iter::repeat_n(value, len));
    }
    let protocol = Protocol::from_segments(duration, segments, serde_json::to_string(&driving.drive).unwrap_or_default())?;
    Ok(Model {
        dims: assembly.dims,
        protocol,
        baths: assembly.baths,
        interaction: assembly.interaction,
        system_number: assembly.system_number,
        lambdas,
    })
}

fn qubit_system(tunneling: f64) -> Box<dyn Fn(f64) -> HermitianOperator> {
    Box::new(move |eps| {
        let mut r = Register::new(1);
        r.z(0, eps / 2.0);
        r.x(0, tunneling / 2.0);
        r.into_operator()
    })
}

fn spin_star(s: &SpinStarSpec) -> Result<Assembly> {
    check_finite("spin_star parameters", &[s.epsilon, s.tunneling, s.coupling, s.ring_coupling])?;
    check_dim(s.bath_sites + 1)?;
    let nb = s.bath_sites;
    let omegas = bath_omegas(&s.omegas.clone().map(|o| vec![o]), &[nb], false, s.seed)?.remove(0);
    let mut hb = Register::new(nb);
    for (k, w) in omegas.iter().enumerate() {
        hb.z(k, w / 2.0);
    }
    for (i, j) in ring_bonds(nb) {
        hb.xx(i, j, s.ring_coupling);
    }
    let mut v = Register::new(nb + 1);
    let g = s.coupling / (nb as f64).sqrt();
    for k in 0..nb {
        v.xx(0, k + 1, g);
    }
    Ok(Assembly {
        dims: vec![2, 1 << nb],
        baths: vec![Bath { hamiltonian: hb.into_operator(), number: None }],
        interaction: v.into_operator(),
        system_number: None,
        system_at: qubit_system(s.tunneling),
    })
}

fn ring_bonds(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => vec![],
        2 => vec![(0, 1)],
        _ => (0..n).map(|k| (k, (k + 1) % n)).collect(),
    }
}

fn two_bath(s: &TwoBathSpec) -> Result<Assembly> {
    check_finite("two-bath parameters", &[s.epsilon, s.tunneling, s.chain_coupling])?;
    check_finite("couplings", &s.couplings)?;
    if s.bath_sites.len() != 2 || s.couplings.len() != 2 || s.bath_sites.contains(&0) {
        return Err(Error::SpecInvalid("two-bath model needs two nonempty baths and two couplings".into()));
    }
    let total = 1 + s.bath_sites.iter().sum::<usize>();
    check_dim(total)?;
    let omegas = bath_omegas(&s.omegas, &s.bath_sites, s.mirror, s.seed)?;
    let mut baths = Vec::new();
    for (nu, &m) in s.bath_sites.iter().enumerate() {
        let mut hb = Register::new(m);
        for (k, w) in omegas[nu].iter().enumerate() {
            hb.z(k, w / 2.0);
        }
        for k in 0..m.saturating_sub(1) {
            hb.xx(k, k + 1, s.chain_coupling);
        }
        baths.push(Bath { hamiltonian: hb.into_operator(), number: None });
    }
    // Chain order: bath 1 sites, system, bath 2 sites. Register order: system, bath 1, bath 2.
    let (m1, _) = (s.bath_sites[0], s.bath_sites[1]);
    let mut v = Register::new(total);
    v.xx(0, m1, s.couplings[0]);
    v.xx(0, 1 + m1, s.couplings[1]);
    Ok(Assembly {
        dims: vec![2, 1 << s.bath_sites[0], 1 << s.bath_sites[1]],
        baths,
        interaction: v.into_operator(),
        system_number: None,
        system_at: qubit_system(s.tunneling),
    })
}

fn hopping(s: &HoppingSpec) -> Result<Assembly> {
    check_finite("hopping parameters", &[s.epsilon, s.system_hopping, s.bath_hopping, s.transverse_field])?;
    check_finite("couplings", &s.couplings)?;
    if s.system_sites == 0 || s.bath_sites.is_empty() || s.bath_sites.contains(&0) || s.couplings.len() != s.bath_sites.len() {
        return Err(Error::SpecInvalid("hopping model needs system sites, nonempty baths and one coupling per bath".into()));
    }
    if s.bath_sites.len() > 2 {
        return Err(Error::SpecInvalid("hopping model supports at most two baths (chain ends)".into()));
    }
    let ns = s.system_sites;
    let total = ns + s.bath_sites.iter().sum::<usize>();
    check_dim(total)?;
    let omegas = bath_omegas(&s.omegas, &s.bath_sites, s.mirror && s.bath_sites.len() == 2, s.seed)?;
    let mut baths = Vec::new();
    for (nu, &m) in s.bath_sites.iter().enumerate() {
        let mut hb = Register::new(m);
        let mut nb = Register::new(m);
        for (k, w) in omegas[nu].iter().enumerate() {
            hb.number(k, *w);
            nb.number(k, 1.0);
            if s.transverse_field != 0.0 {
                hb.x(k, s.transverse_field);
            }
        }
        for k in 0..m.saturating_sub(1) {
            hb.hop(k, k + 1, s.bath_hopping);
        }
        let (hb, nb) = (hb.into_operator(), nb.into_operator());
        let norm = commutator_norm(hb.matrix(), nb.matrix());
        if norm > tol::COMMUTATOR {
            return Err(Error::NonCommuting { norm });
        }
        baths.push(Bath { hamiltonian: hb, number: Some(nb) });
    }
    // Chain: bath 1 (its last site touches system site 0), system, bath 2 (its first site touches the last system site).
    let mut v = Register::new(total);
    let offset1 = ns;
    v.hop(0, offset1 + s.bath_sites[0] - 1, s.couplings[0]);
    if s.bath_sites.len() == 2 {
        v.hop(ns - 1, offset1 + s.bath_sites[0], s.couplings[1]);
    }
    let mut n_sys = Register::new(ns);
    for k in 0..ns {
        n_sys.number(k, 1.0);
    }
    let j = s.system_hopping;
    let system_at: Box<dyn Fn(f64) -> HermitianOperator> = Box::new(move |eps| {
        let mut r = Register::new(ns);
        for k in 0..ns {
            r.number(k, eps);
        }
        for k in 0..ns.saturating_sub(1) {
            r.hop(k, k + 1, j);
        }
        r.into_operator()
    });
    let mut dims = vec![1 << ns];
    dims.extend(s.bath_sites.iter().map(|&m| 1usize << m));
    Ok(Assembly { dims, baths, interaction: v.into_operator(), system_number: Some(n_sys.into_operator()), system_at })
}

fn custom(c: &CustomSpec, duration: f64) -> Result<Model> {
    if c.segments.is_empty() || c.hold == 0 {
        return Err(Error::SpecInvalid("custom model needs at least one segment and hold > 0".into()));
    }
    let mut segments = Vec::new();
    for m in &c.segments {
        let h = HermitianOperator::new(m.to_matrix()?).map_err(|e| Error::SpecInvalid(format!("custom segment: {e}")))?;
        segments.push((h, c.hold));
    }
    let n = segments[0].0.dim();
    if n > MAX_DIM {
        return Err(Error::SpecInvalid(format!("dimension {n} exceeds {MAX_DIM}")));
    }
    let dims = c.dims.clone().unwrap_or_else(|| vec![n]);
    if dims.iter().product::<usize>() != n {
        return Err(Error::SpecInvalid(format!("dims {dims:?} do not multiply to {n}")));
    }
    let steps = segments.len() * c.hold;
    let protocol = Protocol::from_segments(duration, segments, "custom")?;
    Ok(Model {
        dims,
        protocol,
        baths: Vec::new(),
        interaction: HermitianOperator::zeros(n),
        system_number: None,
        lambdas: vec![0.0; steps],
    })
}
