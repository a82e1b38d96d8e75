//! Entropy and information functionals, in nats.
//!
//! Convention: `0 ln 0 = 0`, and probabilities or eigenvalues below
//! [`tol::ZERO_PROBABILITY`] count as zero.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graining::{outcome_distribution, CoarseGraining, OutcomeDistribution, OutcomeLabel};
use crate::linalg::{partial_trace, ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use crate::tol;

fn plogp_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values
        .into_iter()
        .filter(|&p| p > tol::ZERO_PROBABILITY)
        .map(|p| -p * p.ln())
        .sum()
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    if let Some(&v) = p.iter().find(|&&v| v < -tol::PROBABILITY_CLAMP || !v.is_finite()) {
        return Err(Error::NegativeProbability { value: v });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol::SHANNON_NORMALIZATION {
        return Err(Error::NotNormalized { sum });
    }
    Ok(())
}

pub fn shannon(p: &[f64]) -> Result<f64> {
    check_probabilities(p)?;
    Ok(plogp_sum(p.iter().copied()))
}

/// Shannon entropy of a list of eigenvalues, ignoring tiny and negative ones.
pub fn entropy_of_eigenvalues(values: &[f64]) -> f64 {
    plogp_sum(values.iter().copied())
}

pub fn vn_entropy(rho: &DensityMatrix) -> Result<f64> {
    Ok(entropy_of_eigenvalues(&rho.spectrum()?.values))
}

/// `Σ_x p_x (−ln p_x + ln V_x)`.
pub fn obs_entropy_shannon_form(p: &OutcomeDistribution) -> Result<f64> {
    if p.volumes.len() != p.probabilities.len() {
        return Err(Error::LengthMismatch { left: p.probabilities.len(), right: p.volumes.len() });
    }
    check_probabilities(&p.probabilities)?;
    Ok(p
        .probabilities
        .iter()
        .zip(&p.volumes)
        .filter(|(&px, _)| px > tol::ZERO_PROBABILITY)
        .map(|(&px, &v)| px * ((v as f64).ln() - px.ln()))
        .sum())
}

pub fn obs_entropy(rho: &DensityMatrix, x: &CoarseGraining) -> Result<f64> {
    obs_entropy_shannon_form(&outcome_distribution(rho, x)?)
}

/// `ln V_x` for the outcome carrying `label`.
pub fn boltzmann_entropy(x: &CoarseGraining, label: &OutcomeLabel) -> Result<f64> {
    Ok((x.volume(x.find(label)?) as f64).ln())
}

/// `ω(x) = Π_x / V_x` on the graining's space.
pub fn microcanonical_state(x: &CoarseGraining, label: &OutcomeLabel) -> Result<DensityMatrix> {
    let k = x.find(label)?;
    let v = x.volume(k) as f64;
    DensityMatrix::trusted(x.projector(k).scale_real(1.0 / v), vec![x.dim()])
}

/// `Σ_x p_x ω(x)` for the given per-outcome weights.
pub fn equilibrium_state(x: &CoarseGraining, probabilities: &[f64]) -> Result<DensityMatrix> {
    if probabilities.len() != x.len() {
        return Err(Error::LengthMismatch { left: probabilities.len(), right: x.len() });
    }
    check_probabilities(probabilities)?;
    let w = x.basis();
    let mut column_weight = vec![0.0; x.dim()];
    for (k, &(start, len)) in x.blocks().iter().enumerate() {
        column_weight[start..start + len].iter_mut().for_each(|c| *c = probabilities[k] / len as f64);
    }
    let scaled = ComplexMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w.get(i, j) * column_weight[j]);
    let sum: f64 = probabilities.iter().sum();
    DensityMatrix::trusted(scaled.matmul_adjoint(w).scale_real(1.0 / sum), vec![x.dim()])
}

/// `D(ρ‖σ) = tr ρ (ln ρ − ln σ)`; infinite divergence is an error.
pub fn relative_entropy(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    let r = rho.spectrum()?;
    let s = sigma.spectrum()?;
    // overlaps[i][j] = |<r_i|s_j>|^2
    let overlap = r.vectors.adjoint_matmul(&s.vectors);
    let mut cross = 0.0;
    let mut outside = 0.0;
    for j in 0..s.values.len() {
        let weight: f64 = (0..r.values.len())
            .map(|i| r.values[i].max(0.0) * overlap.get(i, j).norm_sqr())
            .sum();
        if s.values[j] > tol::ZERO_PROBABILITY {
            cross += weight * s.values[j].ln();
        } else {
            outside += weight;
        }
    }
    if outside > tol::SUPPORT {
        return Err(Error::InfiniteDivergence { weight: outside });
    }
    Ok(-entropy_of_eigenvalues(&r.values) - cross)
}

/// Row-major probability table over several discrete variables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbabilityTable {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ProbabilityTable {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if shape.is_empty() || size != data.len() {
            return Err(Error::LengthMismatch { left: size, right: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::LengthMismatch { left: cols, right: 0 });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let inner: usize = self.shape[axis + 1..].iter().product();
        let n = self.shape[axis];
        let mut out = vec![0.0; n];
        for (flat, &p) in self.data.iter().enumerate() {
            out[(flat / inner) % n] += p;
        }
        out
    }
}

/// `S(p_X) + S(p_Y) − S(p_XY)` of a two-dimensional table.
pub fn mutual_information_classical(joint: &ProbabilityTable) -> Result<f64> {
    if joint.shape.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: joint.shape.len() });
    }
    total_information(joint)
}

/// `Σ_j S(p_j) − S(p)` over all axes of the table.
pub fn total_information(joint: &ProbabilityTable) -> Result<f64> {
    let s = shannon(&joint.data)?;
    let marginals: f64 = (0..joint.shape.len()).map(|a| plogp_sum(joint.marginal(a))).sum();
    Ok(marginals - s)
}

/// `S(ρ_X) + S(ρ_Y) − S(ρ)` where `X` is the set of tensor factors in `cut`.
pub fn mutual_information_quantum(rho: &DensityMatrix, cut: &[usize]) -> Result<f64> {
    let m = rho.dims().len();
    let rest: Vec<usize> = (0..m).filter(|f| !cut.contains(f)).collect();
    if cut.is_empty() || rest.is_empty() || cut.iter().any(|&f| f >= m) {
        return Err(Error::DimensionMismatch { expected: m, found: cut.len() });
    }
    let sx = vn_entropy(&partial_trace(rho, cut)?)?;
    let sy = vn_entropy(&partial_trace(rho, &rest)?)?;
    Ok(sx + sy - vn_entropy(rho)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyDecomposition {
    /// `S_vN(Σ_x Π_x ρ Π_x)`.
    pub dephased_vn: f64,
    /// `Σ_x p_x D(ρ(x)‖ω(x))`.
    pub avg_relative: f64,
    /// `D(ρ(x)‖ω(x))` for every outcome with nonzero probability.
    pub per_outcome_relative: Vec<(OutcomeLabel, f64)>,
}

pub fn decompose_obs_entropy(rho: &DensityMatrix, x: &CoarseGraining) -> Result<EntropyDecomposition> {
    if rho.dim() != x.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), found: rho.dim() });
    }
    let w = x.basis();
    let r = w.adjoint_matmul(rho.matrix()).matmul(w);
    let mut dephased_vn = 0.0;
    let mut avg_relative = 0.0;
    let mut per_outcome = Vec::new();
    for (k, &(start, len)) in x.blocks().iter().enumerate() {
        let block = ComplexMatrix::from_fn(len, len, |i, j| r.get(start + i, start + j));
        let p: f64 = block.trace().re;
        if p <= tol::ZERO_PROBABILITY {
            continue;
        }
        let conditional = HermitianOperator::symmetrized(block.scale(C64::new(1.0 / p, 0.0)));
        let s = entropy_of_eigenvalues(&conditional.spectrum()?.values);
        let d = (len as f64).ln() - s;
        dephased_vn += -p * p.ln() + p * s;
        avg_relative += p * d;
        per_outcome.push((x.labels()[k].clone(), d));
    }
    Ok(EntropyDecomposition { dephased_vn, avg_relative, per_outcome_relative: per_outcome })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Membership {
    pub member: bool,
    /// `max |ρ − Σ_x p_x ω(x)|`.
    pub residual: f64,
}

/// Tests whether `ρ = Σ_x p_x ω(x)` for the state's own outcome probabilities.
pub fn is_equilibrium_member(rho: &DensityMatrix, x: &CoarseGraining, tol: f64) -> Result<Membership> {
    let p = outcome_distribution(rho, x)?;
    let projected = equilibrium_state(x, &p.probabilities)?;
    let residual = rho.matrix().max_abs_diff(projected.matrix());
    Ok(Membership { member: residual <= tol, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graining::{energy_graining, rank1_from_matrix};
    use crate::linalg::ZERO;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn shannon_values() {
        assert_eq!(shannon(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((shannon(&[0.5, 0.5]).unwrap() - LN2).abs() < 1e-15);
        let closed = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert!((shannon(&[0.75, 0.25]).unwrap() - closed).abs() < 1e-15);
        assert!((closed - 0.5623).abs() < 1e-4);
        assert!(matches!(shannon(&[0.5, 0.4]), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn vn_of_pure_and_mixed() {
        let pure = DensityMatrix::pure(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)], vec![2]).unwrap();
        assert!(vn_entropy(&pure).unwrap().abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(vec![2, 3]).unwrap();
        assert!((vn_entropy(&mixed).unwrap() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn obs_entropy_examples() {
        let rho = DensityMatrix::diagonal(&[0.75, 0.25], vec![2]).unwrap();
        let whole = CoarseGraining::identity(2);
        assert!((obs_entropy(&rho, &whole).unwrap() - LN2).abs() < 1e-15);

        // pure state inside a three-fold degenerate shell
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 1.0, 1.0]);
        let x = energy_graining(&h, 0.5, None).unwrap();
        let s = 1.0 / 3f64.sqrt();
        let psi = [ZERO, C64::new(s, 0.0), C64::new(0.0, s), C64::new(-s, 0.0)];
        let pure = DensityMatrix::pure(&psi, vec![4]).unwrap();
        assert!((obs_entropy(&pure, &x).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((boltzmann_entropy(&x, &OutcomeLabel::Energy(1.0)).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(boltzmann_entropy(&x, &OutcomeLabel::Energy(7.0)), Err(Error::UnknownOutcome(_))));

        let d = decompose_obs_entropy(&pure, &x).unwrap();
        assert!(d.dephased_vn.abs() < 1e-12);
        assert!((d.avg_relative - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn relative_entropy_closed_form() {
        let a = DensityMatrix::diagonal(&[0.5, 0.5], vec![2]).unwrap();
        let b = DensityMatrix::diagonal(&[0.75, 0.25], vec![2]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((relative_entropy(&a, &b).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.14384).abs() < 1e-5);
        assert!(relative_entropy(&b, &b).unwrap().abs() < 1e-14);
        let ground = DensityMatrix::diagonal(&[1.0, 0.0], vec![2]).unwrap();
        assert!(matches!(relative_entropy(&a, &ground), Err(Error::InfiniteDivergence { .. })));
        assert!(relative_entropy(&ground, &a).is_ok());
    }

    #[test]
    fn information_tables() {
        let product = ProbabilityTable::from_rows(&[vec![0.12, 0.28], vec![0.18, 0.42]]).unwrap();
        assert!(mutual_information_classical(&product).unwrap().abs() < 1e-14);
        let corr = ProbabilityTable::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!((mutual_information_classical(&corr).unwrap() - LN2).abs() < 1e-15);
        let mut ghz = vec![0.0; 8];
        ghz[0] = 0.5;
        ghz[7] = 0.5;
        let ghz = ProbabilityTable::new(vec![2, 2, 2], ghz).unwrap();
        assert!((total_information(&ghz).unwrap() - 2.0 * LN2).abs() < 1e-15);
    }

    #[test]
    fn bell_mutual_information() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityMatrix::pure(&[C64::new(s, 0.0), ZERO, ZERO, C64::new(s, 0.0)], vec![2, 2]).unwrap();
        assert!((mutual_information_quantum(&bell, &[0]).unwrap() - 2.0 * LN2).abs() < 1e-12);
        let prod = DensityMatrix::product(&[
            &DensityMatrix::diagonal(&[0.3, 0.7], vec![2]).unwrap(),
            &DensityMatrix::diagonal(&[0.1, 0.9], vec![2]).unwrap(),
        ])
        .unwrap();
        assert!(mutual_information_quantum(&prod, &[1]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn membership_examples() {
        let h = HermitianOperator::from_real_diagonal(&[0.0, 1.0, 1.0, 2.0]);
        let x = energy_graining(&h, 0.5, None).unwrap();
        let rho = equilibrium_state(&x, &[0.0, 0.3, 0.7]).unwrap();
        let m = is_equilibrium_member(&rho, &x, 1e-10).unwrap();
        assert!(m.member, "residual {}", m.residual);
        let psi = [C64::new(0.5, 0.0); 4];
        let pure = DensityMatrix::pure(&psi, vec![4]).unwrap();
        assert!(!is_equilibrium_member(&pure, &x, 1e-6).unwrap().member);
        let omega = microcanonical_state(&x, &OutcomeLabel::Energy(1.0)).unwrap();
        assert!((vn_entropy(&omega).unwrap() - LN2).abs() < 1e-12);
    }

    #[test]
    fn eigenbasis_graining_gives_vn() {
        let m = ComplexMatrix::from_rows(&[
            vec![C64::new(0.5, 0.0), C64::new(0.1, 0.2)],
            vec![C64::new(0.1, -0.2), C64::new(0.5, 0.0)],
        ])
        .unwrap();
        let rho = DensityMatrix::new(m, vec![2]).unwrap();
        let x = rank1_from_matrix(rho.spectrum().unwrap().vectors.clone()).unwrap();
        assert!((obs_entropy(&rho, &x).unwrap() - vn_entropy(&rho).unwrap()).abs() < 1e-12);
    }
}
