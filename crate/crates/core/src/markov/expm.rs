//! Matrix exponentials and powers.
//!
//! Conservative generators go through uniformization, which keeps every
//! intermediate matrix stochastic. General matrices (negative off-diagonal
//! entries allowed) use scaling and squaring around a Taylor kernel.

use ndarray::{Array1, Array2};

use super::matrix::{matrix_norm, GeneralMatrix, RateMatrix, SpaceMatrix, TransitionMatrix};
use super::space::State;
use crate::error::{invalid, Error, Result};
use crate::tolerance::TOLERANCES;

/// Largest Poisson mean handled in one uniformization piece.
const MAX_PIECE_MEAN: f64 = 8.0;
const MAX_TAYLOR_TERMS: usize = 80;

/// Uniformized kernel `I + Q / rate`.
fn uniformized(q: &RateMatrix, rate: f64) -> Array2<f64> {
    let n = q.space().len();
    Array2::eye(n) + q.entries() / rate
}

/// Poisson weights `e^{−mean} mean^k / k!` until the neglected tail is below `tail`.
fn poisson_weights(mean: f64, tail: f64) -> Vec<f64> {
    let mut weights = vec![(-mean).exp()];
    let mut k = 0usize;
    loop {
        let w = *weights.last().unwrap();
        // geometric bound on the remaining mass once k + 1 > mean
        let ratio = mean / (k + 2) as f64;
        if ratio < 1.0 {
            let rest = w * (mean / (k + 1) as f64) / (1.0 - ratio);
            if rest < tail {
                break;
            }
        }
        k += 1;
        weights.push(w * mean / k as f64);
    }
    weights
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("time must be finite and non-negative, got {t}")));
    }
    Ok(())
}

/// Splits `mean` into `2^j` pieces each with mean at most [`MAX_PIECE_MEAN`].
fn halvings(mean: f64) -> u32 {
    let mut j = 0;
    while mean / f64::from(1u32 << j) > MAX_PIECE_MEAN {
        j += 1;
    }
    j
}

/// `e^{tQ}` for a conservative `Q` by uniformization.
pub fn expm_conservative(q: &RateMatrix, t: f64) -> Result<TransitionMatrix> {
    check_time(t)?;
    let space = q.space().clone();
    let n = space.len();
    let rate = q.max_exit_rate();
    if rate == 0.0 || t == 0.0 {
        return Ok(TransitionMatrix::identity(space));
    }
    let mean = rate * t;
    let j = halvings(mean);
    let pieces = f64::from(1u32 << j);
    let weights = poisson_weights(mean / pieces, TOLERANCES.poisson_tail / pieces);

    let kernel = uniformized(q, rate);
    let mut power = Array2::<f64>::eye(n);
    let mut acc = &power * weights[0];
    for w in &weights[1..] {
        power = power.dot(&kernel);
        acc.scaled_add(*w, &power);
    }
    // restore the truncated Poisson tail
    for mut row in acc.rows_mut() {
        let sum = row.sum();
        row /= sum;
    }
    for _ in 0..j {
        acc = acc.dot(&acc);
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("uniformization produced non-finite entries".into()));
    }
    TransitionMatrix::new(space, acc)
}

/// Row `start` of `e^{tQ}`, computed with vector products only.
pub fn expm_conservative_row(q: &RateMatrix, start: State, t: f64) -> Result<Array1<f64>> {
    let i = q.space().require(start)?;
    let mut init = Array1::zeros(q.space().len());
    init[i] = 1.0;
    propagate(q, init, t)
}

/// `p e^{tQ}` for a row vector `p`.
pub fn propagate(q: &RateMatrix, p: Array1<f64>, t: f64) -> Result<Array1<f64>> {
    check_time(t)?;
    if p.len() != q.space().len() {
        return Err(Error::SpaceMismatch);
    }
    let rate = q.max_exit_rate();
    if rate == 0.0 || t == 0.0 {
        return Ok(p);
    }
    let mean = rate * t;
    let pieces = (mean / MAX_PIECE_MEAN).ceil().max(1.0);
    let weights = poisson_weights(mean / pieces, TOLERANCES.poisson_tail / pieces);
    let kernel = uniformized(q, rate);
    let mut current = p;
    for _ in 0..pieces as u64 {
        let mut term = current.clone();
        let mut acc = &term * weights[0];
        for w in &weights[1..] {
            term = term.dot(&kernel);
            acc.scaled_add(*w, &term);
        }
        let kept = acc.sum();
        if kept != 0.0 {
            acc *= current.sum() / kept;
        }
        current = acc;
    }
    if current.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("uniformization produced non-finite entries".into()));
    }
    Ok(current)
}

/// `e^{tM}` by scaling and squaring with a Taylor kernel.
pub fn expm_general(m: &GeneralMatrix, t: f64) -> Result<GeneralMatrix> {
    if !t.is_finite() {
        return Err(invalid(format!("time must be finite, got {t}")));
    }
    let n = m.space().len();
    let scaled = m.entries() * t;
    let norm = matrix_norm(&scaled);
    let mut j = 0i32;
    while norm / 2f64.powi(j) > 0.5 {
        j += 1;
    }
    let a = scaled / 2f64.powi(j);

    let mut sum = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    let mut converged = false;
    for k in 1..=MAX_TAYLOR_TERMS {
        term = term.dot(&a) / k as f64;
        sum += &term;
        if matrix_norm(&term) <= f64::EPSILON * 1e-2 * matrix_norm(&sum) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Taylor kernel did not converge".into()));
    }
    for _ in 0..j {
        sum = sum.dot(&sum);
        if sum.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("overflow while squaring".into()));
        }
    }
    GeneralMatrix::new(m.space().clone(), sum)
}

/// `A^r` by binary exponentiation; `A^0` is the identity.
pub fn matrix_power(a: &GeneralMatrix, r: u64) -> Result<GeneralMatrix> {
    let n = a.space().len();
    let mut result = Array2::<f64>::eye(n);
    let mut base = a.entries().clone();
    let mut e = r;
    while e > 0 {
        if e & 1 == 1 {
            result = result.dot(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.dot(&base);
        }
        if result.iter().chain(base.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("overflow computing power {r}")));
        }
    }
    GeneralMatrix::new(a.space().clone(), result)
}

/// `A^r` for a stochastic `A`.
pub fn transition_power(a: &TransitionMatrix, r: u64) -> Result<TransitionMatrix> {
    TransitionMatrix::from_general(matrix_power(a.as_general(), r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::space::StateSpace;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn two_states() -> StateSpace {
        StateSpace::new(vec![State::new(0, 0), State::new(1, 0)]).unwrap()
    }

    #[test]
    fn zero_generator_gives_identity() {
        let space = StateSpace::lineages(3);
        let n = space.len();
        let q = RateMatrix::new(space, Array2::zeros((n, n))).unwrap();
        let p = expm_conservative(&q, 5.0).unwrap();
        assert_eq!(p.entries(), &Array2::<f64>::eye(n));
    }

    #[test]
    fn two_state_closed_form() {
        // rates a = 1 (0 -> 1), b = 2 (1 -> 0)
        let q = RateMatrix::new(two_states(), array![[-1.0, 1.0], [2.0, -2.0]]).unwrap();
        let p = expm_conservative(&q, 1.0).unwrap();
        let expected = (2.0 + (-3.0f64).exp()) / 3.0;
        assert_abs_diff_eq!(p.entries()[[0, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.68326, epsilon = 1e-5);

        let row = expm_conservative_row(&q, State::new(0, 0), 1.0).unwrap();
        assert_abs_diff_eq!(row[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn long_horizon_stays_stochastic() {
        let q = RateMatrix::new(two_states(), array![[-40.0, 40.0], [2.0, -2.0]]).unwrap();
        let p = expm_conservative(&q, 50.0).unwrap();
        assert!(p.max_row_defect() < 1e-10);
        // stationary law (2, 40) / 42
        assert_abs_diff_eq!(p.entries()[[0, 0]], 2.0 / 42.0, epsilon = 1e-10);
        let row = expm_conservative_row(&q, State::new(0, 0), 50.0).unwrap();
        assert_abs_diff_eq!(row[1], 40.0 / 42.0, epsilon = 1e-10);
    }

    #[test]
    fn negative_time_rejected() {
        let q = RateMatrix::new(two_states(), array![[-1.0, 1.0], [2.0, -2.0]]).unwrap();
        assert!(expm_conservative(&q, -1.0).is_err());
    }

    #[test]
    fn general_exponential_of_zero_and_diagonal() {
        let zero = GeneralMatrix::zeros(two_states());
        let e = expm_general(&zero, 3.0).unwrap();
        assert_eq!(e.entries(), &Array2::<f64>::eye(2));

        let d = GeneralMatrix::new(two_states(), array![[-1.0, 0.0], [0.0, -2.0]]).unwrap();
        let e = expm_general(&d, 1.0).unwrap();
        assert_abs_diff_eq!(e.entries()[[0, 0]], (-1.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(e.entries()[[1, 1]], (-2.0f64).exp(), epsilon = 1e-14);
        assert_eq!(e.entries()[[0, 1]], 0.0);
    }

    #[test]
    fn general_and_uniformization_agree() {
        let q = RateMatrix::new(two_states(), array![[-1.0, 1.0], [2.0, -2.0]]).unwrap();
        let a = expm_conservative(&q, 2.5).unwrap();
        let b = expm_general(q.as_general(), 2.5).unwrap();
        assert!(a.as_general().max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn power_zero_and_involution() {
        let swap = GeneralMatrix::new(two_states(), array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(matrix_power(&swap, 0).unwrap().entries(), &Array2::<f64>::eye(2));
        assert_eq!(matrix_power(&swap, 2).unwrap().entries(), &Array2::<f64>::eye(2));
        assert_eq!(matrix_power(&swap, 3).unwrap().entries(), swap.entries());
    }

    #[test]
    fn power_overflow_reported() {
        let big = GeneralMatrix::new(two_states(), array![[1e200, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(matrix_power(&big, 4), Err(Error::Numerical(_))));
    }

    #[test]
    fn poisson_tail_is_bounded() {
        for mean in [0.1, 1.0, 8.0] {
            let w = poisson_weights(mean, 1e-13);
            let total: f64 = w.iter().sum();
            assert!(1.0 - total < 1e-12, "mean {mean}: {total}");
        }
    }
}
