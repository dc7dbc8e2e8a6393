//! Numerical tolerances shared by every module.

/// Fixed numerical tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Row sums of rate matrices, exactness of constructed matrices.
    pub build: f64,
    /// Row sums of transition matrices.
    pub stochastic: f64,
    /// Algebraic identities (semigroup property, commutation).
    pub algebraic: f64,
    /// Neglected Poisson tail mass in uniformization.
    pub poisson_tail: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    build: 1e-12,
    stochastic: 1e-10,
    algebraic: 1e-8,
    poisson_tail: 1e-12,
};
