use ndarray::Array1;

use super::space::{State, StateSpace};
use crate::error::{invalid, Error, Result};

const SUM_TOL: f64 = 1e-8;

/// Probability vector over a state space.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    space: StateSpace,
    probs: Array1<f64>,
}

impl Distribution {
    pub fn new(space: StateSpace, probs: Array1<f64>) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(Error::SpaceMismatch);
        }
        check_probability_row(probs.as_slice().expect("contiguous"))?;
        Ok(Self { space, probs })
    }

    pub fn point_mass(space: StateSpace, s: State) -> Result<Self> {
        let i = space.require(s)?;
        let mut probs = Array1::zeros(space.len());
        probs[i] = 1.0;
        Ok(Self { space, probs })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn probs(&self) -> &Array1<f64> {
        &self.probs
    }

    pub fn prob(&self, s: State) -> f64 {
        self.space.index_of(s).map_or(0.0, |i| self.probs[i])
    }
}

fn check_probability_row(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(invalid(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// `(1/2) Σ |p_i − q_i|` between two distributions on the same space.
pub fn total_variation(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.space != q.space {
        return Err(Error::SpaceMismatch);
    }
    tv_distance(p.probs.as_slice().unwrap(), q.probs.as_slice().unwrap())
}

/// Total variation between two probability rows of equal length.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SpaceMismatch);
    }
    check_probability_row(p)?;
    check_probability_row(q)?;
    let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn pair_space() -> StateSpace {
        StateSpace::new(vec![State::new(0, 0), State::new(1, 0)]).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let p = Distribution::new(pair_space(), array![0.5, 0.5]).unwrap();
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        let a = Distribution::point_mass(pair_space(), State::new(0, 0)).unwrap();
        let b = Distribution::point_mass(pair_space(), State::new(1, 0)).unwrap();
        assert_eq!(total_variation(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn hand_example() {
        let p = Distribution::new(pair_space(), array![0.5, 0.5]).unwrap();
        let q = Distribution::new(pair_space(), array![0.8, 0.2]).unwrap();
        assert_abs_diff_eq!(total_variation(&p, &q).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let p = Distribution::point_mass(pair_space(), State::new(0, 0)).unwrap();
        let other = StateSpace::new(vec![State::new(0, 0), State::new(0, 1)]).unwrap();
        let q = Distribution::point_mass(other, State::new(0, 0)).unwrap();
        assert!(matches!(total_variation(&p, &q), Err(Error::SpaceMismatch)));
    }

    #[test]
    fn unnormalised_row_rejected() {
        assert!(Distribution::new(pair_space(), array![0.5, 0.6]).is_err());
    }
}
