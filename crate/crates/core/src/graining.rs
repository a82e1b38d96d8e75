//! Coarse-grainings: complete families of orthogonal projectors.
//!
//! A graining is stored as a unitary basis matrix whose columns are split
//! into contiguous blocks; block `x` spans the range of `Π_x`, so
//! `V_x` is the block length and `p_x` is the sum of the matching diagonal
//! entries of `W^H ρ W`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{commutator_norm, kron_all, ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use crate::tol;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLabel {
    /// The single outcome of the trivial graining.
    Whole,
    /// Basis index of a rank-1 graining.
    Index(usize),
    /// Lower edge of an energy window.
    Energy(f64),
    /// Energy window lower edge and particle number.
    EnergyParticles { energy: f64, particles: f64 },
    Tuple(Vec<OutcomeLabel>),
}

impl OutcomeLabel {
    pub fn energy(&self) -> Option<f64> {
        match *self {
            OutcomeLabel::Energy(e) => Some(e),
            OutcomeLabel::EnergyParticles { energy, .. } => Some(energy),
            _ => None,
        }
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeLabel::Whole => write!(f, "*"),
            OutcomeLabel::Index(i) => write!(f, "{i}"),
            OutcomeLabel::Energy(e) => write!(f, "E{e}"),
            OutcomeLabel::EnergyParticles { energy, particles } => write!(f, "E{energy}N{particles}"),
            OutcomeLabel::Tuple(parts) => {
                write!(f, "(")?;
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoarseGraining {
    basis: ComplexMatrix,
    blocks: Vec<(usize, usize)>,
    labels: Vec<OutcomeLabel>,
}

impl CoarseGraining {
    /// General constructor. `blocks` are `(start, len)` column ranges of
    /// `basis`, which must be unitary and covered exactly once.
    pub fn from_blocks(basis: ComplexMatrix, blocks: Vec<(usize, usize)>, labels: Vec<OutcomeLabel>) -> Result<Self> {
        let n = basis.nrows();
        if !basis.is_square() {
            return Err(Error::DimensionMismatch { expected: n, found: basis.ncols() });
        }
        if blocks.len() != labels.len() {
            return Err(Error::LengthMismatch { left: blocks.len(), right: labels.len() });
        }
        let mut next = 0;
        for &(start, len) in &blocks {
            if start != next || len == 0 {
                return Err(Error::DimensionMismatch { expected: next, found: start });
            }
            next += len;
        }
        if next != n {
            return Err(Error::DimensionMismatch { expected: n, found: next });
        }
        let deviation = basis.unitarity_deviation();
        if deviation > tol::ORTHONORMAL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { basis, blocks, labels })
    }

    /// The trivial graining `{1}`.
    pub fn identity(n: usize) -> Self {
        Self { basis: ComplexMatrix::identity(n), blocks: vec![(0, n)], labels: vec![OutcomeLabel::Whole] }
    }

    /// Rank-1 graining in the computational basis.
    pub fn computational(n: usize) -> Self {
        Self {
            basis: ComplexMatrix::identity(n),
            blocks: (0..n).map(|i| (i, 1)).collect(),
            labels: (0..n).map(OutcomeLabel::Index).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn basis(&self) -> &ComplexMatrix {
        &self.basis
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn labels(&self) -> &[OutcomeLabel] {
        &self.labels
    }

    pub fn volume(&self, x: usize) -> usize {
        self.blocks[x].1
    }

    pub fn volumes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.1).collect()
    }

    pub fn find(&self, label: &OutcomeLabel) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownOutcome(label.to_string()))
    }

    /// Orthonormal basis of the range of `Π_x`, as columns.
    pub fn block_basis(&self, x: usize) -> ComplexMatrix {
        let (start, len) = self.blocks[x];
        self.basis.columns(start, len)
    }

    pub fn projector(&self, x: usize) -> ComplexMatrix {
        let b = self.block_basis(x);
        b.matmul_adjoint(&b)
    }

    /// Block index of every basis column.
    pub fn column_blocks(&self) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (x, &(start, len)) in self.blocks.iter().enumerate() {
            out[start..start + len].iter_mut().for_each(|b| *b = x);
        }
        out
    }

    /// The time-reversed graining `{Θ Π_x Θ^{-1}}` (entrywise conjugation).
    pub fn conj(&self) -> Self {
        Self { basis: self.basis.conj(), blocks: self.blocks.clone(), labels: self.labels.clone() }
    }
}

/// Bins the spectrum of `h` into windows `[anchor + kδ, anchor + (k+1)δ)`.
///
/// `anchor` defaults to the smallest eigenvalue. Eigenvalues within
/// [`tol::BIN_EDGE`] below an edge are put in the upper bin; empty bins are
/// omitted.
pub fn energy_graining(h: &HermitianOperator, delta: f64, anchor: Option<f64>) -> Result<CoarseGraining> {
    check_delta(delta)?;
    let s = h.spectrum()?;
    let anchor = anchor.unwrap_or(s.min());
    let (blocks, labels) = bin_sorted(&s.values, delta, anchor, |e| OutcomeLabel::Energy(e));
    CoarseGraining::from_blocks(s.vectors.clone(), blocks, labels)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::ConfigInvalid { field: "delta".into(), message: format!("bin width must be positive, got {delta}") });
    }
    Ok(())
}

fn bin_index(e: f64, delta: f64, anchor: f64) -> i64 {
    ((e - anchor + tol::BIN_EDGE) / delta).floor() as i64
}

/// Groups ascending energies into contiguous blocks.
fn bin_sorted(
    energies: &[f64],
    delta: f64,
    anchor: f64,
    label: impl Fn(f64) -> OutcomeLabel,
) -> (Vec<(usize, usize)>, Vec<OutcomeLabel>) {
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut labels = Vec::new();
    let mut current: Option<i64> = None;
    for (i, &e) in energies.iter().enumerate() {
        let k = bin_index(e, delta, anchor);
        if current == Some(k) {
            blocks.last_mut().expect("open block").1 += 1;
        } else {
            current = Some(k);
            blocks.push((i, 1));
            labels.push(label(anchor + k as f64 * delta));
        }
    }
    (blocks, labels)
}

/// Rank-1 graining from a complete orthonormal basis.
pub fn rank1_graining(basis: &[Vec<C64>]) -> Result<CoarseGraining> {
    let w = ComplexMatrix::from_columns(basis)?;
    rank1_from_matrix(w)
}

/// Rank-1 graining whose projectors are the columns of `w`.
pub fn rank1_from_matrix(w: ComplexMatrix) -> Result<CoarseGraining> {
    if !w.is_square() {
        return Err(Error::DimensionMismatch { expected: w.nrows(), found: w.ncols() });
    }
    let deviation = w.unitarity_deviation();
    if deviation > tol::ORTHONORMAL {
        return Err(Error::NotOrthonormal { deviation });
    }
    let n = w.ncols();
    CoarseGraining::from_blocks(w, (0..n).map(|i| (i, 1)).collect(), (0..n).map(OutcomeLabel::Index).collect())
}

/// Tensor-product graining `X_1 ⊗ ... ⊗ X_n`; labels become tuples and
/// volumes multiply. Outcomes are ordered lexicographically with the first
/// factor most significant.
pub fn product_graining(parts: &[&CoarseGraining], dims: &[usize]) -> Result<CoarseGraining> {
    if parts.len() != dims.len() {
        return Err(Error::LengthMismatch { left: parts.len(), right: dims.len() });
    }
    for (p, &d) in parts.iter().zip(dims) {
        if p.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: p.dim() });
        }
    }
    let n: usize = dims.iter().product();
    let mut strides = vec![1usize; dims.len()];
    for f in (0..dims.len().saturating_sub(1)).rev() {
        strides[f] = strides[f + 1] * dims[f + 1];
    }
    // (kron column index, label parts) per outcome, enumerated lexicographically.
    let mut outcomes: Vec<(Vec<usize>, Vec<OutcomeLabel>)> = vec![(vec![0], Vec::new())];
    for (f, part) in parts.iter().enumerate() {
        let mut next = Vec::with_capacity(outcomes.len() * part.len());
        for (cols, label) in &outcomes {
            for (x, &(start, len)) in part.blocks().iter().enumerate() {
                let mut c = Vec::with_capacity(cols.len() * len);
                for &base in cols {
                    for col in start..start + len {
                        c.push(base + col * strides[f]);
                    }
                }
                let mut l = label.clone();
                l.push(part.labels()[x].clone());
                next.push((c, l));
            }
        }
        outcomes = next;
    }
    let full = kron_all(parts.iter().map(|p| p.basis()));
    let mut order = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(outcomes.len());
    let mut labels = Vec::with_capacity(outcomes.len());
    for (cols, label) in outcomes {
        blocks.push((order.len(), cols.len()));
        order.extend(cols);
        labels.push(OutcomeLabel::Tuple(label));
    }
    let basis = ComplexMatrix::from_fn(n, n, |i, j| full.get(i, order[j]));
    CoarseGraining::from_blocks(basis, blocks, labels)
}

/// Joint energy-window and particle-number graining of commuting `h`, `n`.
///
/// Particle sectors are eigenspaces of `n` (eigenvalues grouped within
/// [`tol::SECTOR`]); inside each sector `h` is diagonalized and binned as in
/// [`energy_graining`], with the anchor defaulting to the global ground energy.
pub fn energy_particle_graining(
    h: &HermitianOperator,
    n: &HermitianOperator,
    delta: f64,
    anchor: Option<f64>,
) -> Result<CoarseGraining> {
    check_delta(delta)?;
    if h.dim() != n.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: n.dim() });
    }
    let norm = commutator_norm(h.matrix(), n.matrix());
    if norm > tol::COMMUTATOR {
        return Err(Error::NonCommuting { norm });
    }
    let anchor = match anchor {
        Some(a) => a,
        None => h.spectrum()?.min(),
    };
    let ns = n.spectrum()?;
    let dim = h.dim();
    let mut columns: Vec<Vec<C64>> = Vec::with_capacity(dim);
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    let mut start = 0;
    while start < dim {
        let first = ns.values[start];
        let mut end = start + 1;
        while end < dim && (ns.values[end] - first).abs() <= tol::SECTOR {
            end += 1;
        }
        let mean = ns.values[start..end].iter().sum::<f64>() / (end - start) as f64;
        let particles = if (mean - mean.round()).abs() <= tol::SECTOR { mean.round() } else { mean };
        let vn = ns.vectors.columns(start, end - start);
        let hn = HermitianOperator::symmetrized(vn.adjoint_matmul(h.matrix()).matmul(&vn));
        let sn = hn.spectrum()?;
        let rotated = vn.matmul(&sn.vectors);
        let (b, l) = bin_sorted(&sn.values, delta, anchor, |e| OutcomeLabel::EnergyParticles { energy: e, particles });
        for (s, len) in b {
            blocks.push((columns.len(), len));
            for c in s..s + len {
                columns.push(rotated.column(c));
            }
        }
        labels.extend(l);
        start = end;
    }
    CoarseGraining::from_blocks(ComplexMatrix::from_columns(&columns)?, blocks, labels)
}

/// Probabilities `p_x = tr(Π_x ρ)` with the matching volumes and labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeDistribution {
    pub probabilities: Vec<f64>,
    pub volumes: Vec<usize>,
    pub labels: Vec<OutcomeLabel>,
}

impl OutcomeDistribution {
    /// Validates normalization and clamps tiny negative entries to zero.
    pub fn new(probabilities: Vec<f64>, volumes: Vec<usize>, labels: Vec<OutcomeLabel>) -> Result<Self> {
        if probabilities.len() != volumes.len() {
            return Err(Error::LengthMismatch { left: probabilities.len(), right: volumes.len() });
        }
        if probabilities.len() != labels.len() {
            return Err(Error::LengthMismatch { left: probabilities.len(), right: labels.len() });
        }
        let mut p = probabilities;
        for v in p.iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            if *v < 0.0 {
                if *v < -tol::PROBABILITY_CLAMP {
                    return Err(Error::NegativeProbability { value: *v });
                }
                *v = 0.0;
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > tol::PROBABILITY_SUM {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self { probabilities: p, volumes, labels })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probability_of(&self, label: &OutcomeLabel) -> Result<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|k| self.probabilities[k])
            .ok_or_else(|| Error::UnknownOutcome(label.to_string()))
    }
}

/// Per-column weights `<w_c|ρ|w_c>` of the graining basis.
pub(crate) fn basis_weights(rho: &ComplexMatrix, w: &ComplexMatrix) -> Vec<f64> {
    let m = rho.matmul(w);
    (0..w.ncols())
        .map(|c| (0..w.nrows()).map(|i| (w.get(i, c).conj() * m.get(i, c)).re).sum())
        .collect()
}

pub fn outcome_distribution(rho: &DensityMatrix, x: &CoarseGraining) -> Result<OutcomeDistribution> {
    if rho.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), found: rho.dim() });
    }
    let weights = basis_weights(rho.matrix(), x.basis());
    let p = x.blocks().iter().map(|&(s, l)| weights[s..s + l].iter().sum()).collect();
    OutcomeDistribution::new(p, x.volumes(), x.labels().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn field_sum(sites: usize) -> HermitianOperator {
        let d = 1 << sites;
        let diag: Vec<f64> = (0..d)
            .map(|i| (0..sites).map(|k| if (i >> k) & 1 == 0 { 0.5 } else { -0.5 }).sum())
            .collect();
        HermitianOperator::from_real_diagonal(&diag)
    }

    #[test]
    fn sigma_z_bins() {
        let h = HermitianOperator::from_real_diagonal(&[1.0, -1.0]);
        let x = energy_graining(&h, 10.0, Some(-1.0)).unwrap();
        assert_eq!(x.volumes(), vec![2]);
        assert_eq!(x.labels(), &[OutcomeLabel::Energy(-1.0)]);
        let x = energy_graining(&h, 0.5, Some(-1.0)).unwrap();
        assert_eq!(x.volumes(), vec![1, 1]);
        assert_eq!(x.labels(), &[OutcomeLabel::Energy(-1.0), OutcomeLabel::Energy(1.0)]);
    }

    #[test]
    fn three_site_bins_match_enumeration() {
        let h = field_sum(3);
        let x = energy_graining(&h, 1.1, Some(-1.5)).unwrap();
        // -1.5 -> bin 0, -0.5 -> bin 0, 0.5 -> bin 1 (edge at -0.4), 1.5 -> bin 2 (edge 0.7)
        let eig = [-1.5, -0.5, -0.5, -0.5, 0.5, 0.5, 0.5, 1.5];
        let mut counts = std::collections::BTreeMap::new();
        for e in eig {
            *counts.entry(((e + 1.5f64) / 1.1).floor() as i64).or_insert(0usize) += 1;
        }
        assert_eq!(x.volumes(), counts.values().copied().collect::<Vec<_>>());
        assert_eq!(x.volumes().iter().sum::<usize>(), 8);
    }

    #[test]
    fn edge_tie_goes_up() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0 - 1e-10, 2.0]);
        let x = energy_graining(&h, 1.0, Some(0.0)).unwrap();
        assert_eq!(x.volumes(), vec![1, 1, 1]);
        assert_eq!(x.labels()[1], OutcomeLabel::Energy(1.0));
    }

    #[test]
    fn rank1_and_product() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let hadamard = rank1_graining(&[vec![c(s), c(s)], vec![c(s), c(-s)]]).unwrap();
        assert_eq!(hadamard.volumes(), vec![1, 1]);
        let bad = rank1_graining(&[vec![c(1.0), ZERO], vec![c(s), c(s)]]);
        assert!(matches!(bad, Err(Error::NotOrthonormal { .. })));

        let id = CoarseGraining::identity(2);
        let p = product_graining(&[&id, &id], &[2, 2]).unwrap();
        assert_eq!(p.volumes(), vec![4]);
        let z = CoarseGraining::computational(2);
        let p = product_graining(&[&z, &hadamard], &[2, 2]).unwrap();
        assert_eq!(p.volumes(), vec![1, 1, 1, 1]);
        assert!(matches!(product_graining(&[&z, &z], &[2, 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn product_volumes_match_projector_ranks() {
        let s = CoarseGraining::computational(2);
        let b = energy_graining(&field_sum(3), 1.0, None).unwrap();
        let p = product_graining(&[&s, &b], &[2, 8]).unwrap();
        assert_eq!(p.len(), 2 * b.len());
        for x in 0..p.len() {
            let proj = p.projector(x);
            // rank of a projector is its trace
            let rank = proj.trace().re.round() as usize;
            assert_eq!(rank, p.volume(x));
            assert!(proj.matmul(&proj).max_abs_diff(&proj) < 1e-12);
            match &p.labels()[x] {
                OutcomeLabel::Tuple(parts) => {
                    assert_eq!(parts.len(), 2);
                    let bx = b.find(&parts[1]).unwrap();
                    assert_eq!(p.volume(x), b.volume(bx));
                }
                other => panic!("unexpected label {other}"),
            }
        }
    }

    #[test]
    fn hopping_sectors() {
        // two sites, H = σ+σ- + h.c. (hops |01> <-> |10>), N = Σ (1 - σz)/2
        let h = ComplexMatrix::from_real_rows(&[
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let h = HermitianOperator::new(h).unwrap();
        let n = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 1.0, 2.0]);
        let x = energy_particle_graining(&h, &n, 10.0, None).unwrap();
        let sectors: Vec<(f64, usize)> = x
            .labels()
            .iter()
            .zip(x.volumes())
            .map(|(l, v)| match l {
                OutcomeLabel::EnergyParticles { particles, .. } => (*particles, v),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(sectors, vec![(0.0, 1), (1.0, 2), (2.0, 1)]);

        let zero = HermitianOperator::zeros(4);
        let x0 = energy_particle_graining(&h, &zero, 0.5, None).unwrap();
        let xe = energy_graining(&h, 0.5, None).unwrap();
        assert_eq!(x0.volumes(), xe.volumes());

        let sx = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let bad = HermitianOperator::new(sx).unwrap();
        let nz = HermitianOperator::from_real_diagonal(&[0.0, 1.0]);
        assert!(matches!(energy_particle_graining(&bad, &nz, 1.0, None), Err(Error::NonCommuting { .. })));
    }

    #[test]
    fn maximally_mixed_distribution() {
        let x = energy_graining(&field_sum(3), 1.0, None).unwrap();
        let rho = DensityMatrix::maximally_mixed(vec![8]).unwrap();
        let p = outcome_distribution(&rho, &x).unwrap();
        for (pk, vk) in p.probabilities.iter().zip(&p.volumes) {
            assert!((pk - *vk as f64 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_validation() {
        let l = vec![OutcomeLabel::Index(0), OutcomeLabel::Index(1)];
        assert!(OutcomeDistribution::new(vec![1.0, -1e-13], vec![1, 1], l.clone()).unwrap().probabilities[1] == 0.0);
        assert!(matches!(OutcomeDistribution::new(vec![0.5, 0.4], vec![1, 1], l.clone()), Err(Error::NotNormalized { .. })));
        assert!(matches!(OutcomeDistribution::new(vec![1.1, -0.1], vec![1, 1], l), Err(Error::NegativeProbability { .. })));
    }
}
