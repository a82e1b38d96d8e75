//! Numerical tolerances used across the crate.
//!
//! Every threshold that decides validity, grouping or pass/fail lives here so
//! that runs are reproducible and the criteria can be audited in one place.

/// Hermiticity check, relative to `max(1, max|A|)`.
pub const HERMITIAN: f64 = 1e-10;
/// Eigendecomposition reconstruction, relative to `max(1, max|λ|)`.
pub const RECONSTRUCTION: f64 = 1e-9;
/// Orthonormality of eigenvector and graining bases.
pub const ORTHONORMAL: f64 = 1e-10;
/// Unit trace of a density matrix.
pub const TRACE: f64 = 1e-12;
/// Smallest admissible eigenvalue of a density matrix.
pub const POSITIVITY: f64 = 1e-10;
/// Eigenvalues closer than this to a bin edge go to the upper bin.
pub const BIN_EDGE: f64 = 1e-9;
/// Normalization of outcome distributions.
pub const PROBABILITY_SUM: f64 = 1e-10;
/// Negative probabilities down to `-PROBABILITY_CLAMP` are clamped to zero.
pub const PROBABILITY_CLAMP: f64 = 1e-12;
/// Normalization accepted by the Shannon entropy.
pub const SHANNON_NORMALIZATION: f64 = 1e-8;
/// Probabilities and eigenvalues below this count as exact zeros.
pub const ZERO_PROBABILITY: f64 = 1e-14;
/// Support inclusion for relative entropy.
pub const SUPPORT: f64 = 1e-10;
/// Commutator norm below which two operators are treated as commuting.
pub const COMMUTATOR: f64 = 1e-9;
/// Allowed imaginary part of an expectation value, relative to its scale.
pub const IMAGINARY_RESIDUE: f64 = 1e-10;
/// Off-diagonal weight allowed in a "diagonal" initial system state.
pub const DIAGONALITY: f64 = 1e-10;
/// Grouping tolerance for eigenvalues of number operators.
pub const SECTOR: f64 = 1e-8;

/// Lower bound for hierarchy slack.
pub const SLACK_FLOOR: f64 = 1e-9;
/// Lower bound for the per-run quadrature tolerance.
pub const QUADRATURE_FLOOR: f64 = 1e-10;
/// Agreement of `sigma_b - sigma_a` with the information gap.
pub const GAP_AB: f64 = 1e-8;
/// Equilibrium-set membership demanded of initial states.
pub const MEMBERSHIP: f64 = 1e-8;

/// Stopping residual of the inverse-temperature bisection, relative to the spectral width.
pub const BETA_RESIDUAL: f64 = 1e-10;
/// Distance to a spectral edge at which the inverse temperature saturates, relative to `max(1, width)`.
pub const BETA_SATURATION: f64 = 1e-12;
/// Saturated inverse temperature is `BETA_MAX_SCALE / width`.
pub const BETA_MAX_SCALE: f64 = 1e6;
pub const BETA_MAX_ITERATIONS: usize = 200;
/// Residual norm accepted for (beta, mu), relative to the problem scale.
pub const GRAND_RESIDUAL: f64 = 1e-7;
pub const GRAND_NEWTON_FAILURES: usize = 50;
pub const GRAND_MAX_ITERATIONS: usize = 400;

/// Relative tolerance used to merge equal entropy-change values.
pub const DELTA_S_KEY: f64 = 1e-12;
/// Equality of forward and reversed initial marginals for the detailed theorem.
pub const EQUAL_INITIAL: f64 = 1e-9;
/// Integral fluctuation theorem and central relation, by exact summation.
pub const FLUCTUATION: f64 = 1e-9;
/// Relative agreement of `P_fw(Δs) / Q_tr(−Δs)` with `e^{Δs}`.
pub const DETAILED_RATIO: f64 = 1e-8;
/// Smallest forward group probability for which the detailed ratio is asserted;
/// below it the rounding error of the probabilities alone exceeds `DETAILED_RATIO`.
pub const DETAILED_RATIO_FLOOR: f64 = 1e-6;

/// First-law closure bound is `FIRST_LAW_C * dt^2`, frozen after a step-halving calibration.
pub const FIRST_LAW_C: f64 = 1e-6;
/// Energy conservation of undriven evolution.
pub const ENERGY_CONSERVATION: f64 = 1e-9;
/// Net current between mirror-symmetric baths, relative to the gross current.
pub const SYMMETRIC_CURRENT: f64 = 0.05;
