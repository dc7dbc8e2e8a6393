use ndarray::{Array2, ArrayView1};

use super::space::{State, StateSpace};
use crate::error::{invalid, Error, Result};
use crate::report::fmt_real;
use crate::tolerance::TOLERANCES;

/// A dense square matrix indexed by the states of a [`StateSpace`].
pub trait SpaceMatrix {
    fn space(&self) -> &StateSpace;
    fn entries(&self) -> &Array2<f64>;

    /// Entry at `(from, to)`.
    ///
    /// Panics if either state is outside the space.
    fn get(&self, from: State, to: State) -> f64 {
        let space = self.space();
        let i = space.index_of(from).unwrap_or_else(|| panic!("{from} outside space"));
        let j = space.index_of(to).unwrap_or_else(|| panic!("{to} outside space"));
        self.entries()[[i, j]]
    }

    fn row(&self, from: State) -> Result<ArrayView1<'_, f64>> {
        let i = self.space().require(from)?;
        Ok(self.entries().row(i))
    }

    /// Maximum absolute row sum.
    fn norm(&self) -> f64 {
        matrix_norm(self.entries())
    }

    /// Row-major CSV with a header of `n:m` state labels.
    fn to_csv(&self) -> String {
        let space = self.space();
        let mut out = String::from("state");
        for s in space.iter() {
            out.push(',');
            out.push_str(&s.to_string());
        }
        out.push('\n');
        for (i, s) in space.iter().enumerate() {
            out.push_str(&s.to_string());
            for v in self.entries().row(i) {
                out.push(',');
                out.push_str(&fmt_real(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// `max_e sum_f |A(e, f)|`.
pub fn matrix_norm(a: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_shape(space: &StateSpace, entries: &Array2<f64>) -> Result<()> {
    let n = space.len();
    if entries.dim() != (n, n) {
        return Err(invalid(format!(
            "matrix is {:?}, state space has {n} states",
            entries.dim()
        )));
    }
    if let Some(((i, j), v)) = entries.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite entry {v} at ({}, {})",
            space.state(i),
            space.state(j)
        )));
    }
    Ok(())
}

/// Finite square matrix with no sign constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralMatrix {
    space: StateSpace,
    entries: Array2<f64>,
}

impl GeneralMatrix {
    pub fn new(space: StateSpace, entries: Array2<f64>) -> Result<Self> {
        check_shape(&space, &entries)?;
        Ok(Self { space, entries })
    }

    pub fn zeros(space: StateSpace) -> Self {
        let n = space.len();
        Self {
            space,
            entries: Array2::zeros((n, n)),
        }
    }

    pub fn identity(space: StateSpace) -> Self {
        let n = space.len();
        Self {
            space,
            entries: Array2::eye(n),
        }
    }

    /// Builds a matrix from `(from, to, value)` triples; repeated positions add up.
    pub fn from_entries(
        space: StateSpace,
        triples: impl IntoIterator<Item = (State, State, f64)>,
    ) -> Result<Self> {
        let mut m = Self::zeros(space);
        for (from, to, v) in triples {
            let i = m.space.require(from)?;
            let j = m.space.require(to)?;
            m.entries[[i, j]] += v;
        }
        check_shape(&m.space, &m.entries)?;
        Ok(m)
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn dot(&self, other: &GeneralMatrix) -> Result<GeneralMatrix> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        GeneralMatrix::new(self.space.clone(), self.entries.dot(&other.entries))
    }

    pub fn sub(&self, other: &GeneralMatrix) -> Result<GeneralMatrix> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        GeneralMatrix::new(self.space.clone(), &self.entries - &other.entries)
    }

    pub fn scaled(&self, factor: f64) -> Result<GeneralMatrix> {
        GeneralMatrix::new(self.space.clone(), &self.entries * factor)
    }

    /// `‖self − other‖` in the max-row-sum norm.
    pub fn distance(&self, other: &GeneralMatrix) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &GeneralMatrix) -> Result<f64> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(self
            .entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl SpaceMatrix for GeneralMatrix {
    fn space(&self) -> &StateSpace {
        &self.space
    }
    fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Conservative Q-matrix: non-negative off-diagonal rates and zero row sums.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    inner: GeneralMatrix,
}

impl RateMatrix {
    pub fn new(space: StateSpace, entries: Array2<f64>) -> Result<Self> {
        Self::from_general(GeneralMatrix::new(space, entries)?)
    }

    pub fn from_general(m: GeneralMatrix) -> Result<Self> {
        let space = &m.space;
        for (i, row) in m.entries.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for (j, &v) in row.iter().enumerate() {
                if i != j && v < 0.0 {
                    return Err(Error::NegativeRate {
                        from: space.state(i),
                        to: space.state(j),
                        rate: v,
                    });
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > TOLERANCES.build * scale {
                return Err(Error::NotConservative {
                    state: space.state(i),
                    sum,
                });
            }
        }
        Ok(Self { inner: m })
    }

    /// Builds a Q-matrix from off-diagonal `(from, to, rate)` triples and fills the
    /// diagonal with minus the row sum.
    pub fn from_rates(
        space: StateSpace,
        rates: impl IntoIterator<Item = (State, State, f64)>,
    ) -> Result<Self> {
        let mut m = GeneralMatrix::zeros(space);
        for (from, to, r) in rates {
            if from == to {
                return Err(invalid(format!("diagonal rate given for {from}")));
            }
            let i = m.space.require(from)?;
            let j = m.space.require(to)?;
            m.entries[[i, j]] += r;
            m.entries[[i, i]] -= r;
        }
        Self::from_general(m)
    }

    /// Total jump rate `−Q[s, s]` out of row `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.inner.entries[[i, i]]
    }

    /// `max_e −Q[e, e]`.
    pub fn max_exit_rate(&self) -> f64 {
        (0..self.inner.space.len())
            .map(|i| self.exit_rate(i))
            .fold(0.0, f64::max)
    }

    pub fn as_general(&self) -> &GeneralMatrix {
        &self.inner
    }

    pub fn into_general(self) -> GeneralMatrix {
        self.inner
    }
}

impl SpaceMatrix for RateMatrix {
    fn space(&self) -> &StateSpace {
        &self.inner.space
    }
    fn entries(&self) -> &Array2<f64> {
        &self.inner.entries
    }
}

/// Row-stochastic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    inner: GeneralMatrix,
}

impl TransitionMatrix {
    pub fn new(space: StateSpace, entries: Array2<f64>) -> Result<Self> {
        Self::from_general(GeneralMatrix::new(space, entries)?)
    }

    pub fn from_general(m: GeneralMatrix) -> Result<Self> {
        Self::from_general_with(m, TOLERANCES.stochastic)
    }

    /// Validates entries `>= −1e-12`, `<= 1 + 1e-12` and row sums within `row_tol` of 1.
    pub fn from_general_with(m: GeneralMatrix, row_tol: f64) -> Result<Self> {
        let entry_tol = TOLERANCES.build;
        for (i, row) in m.entries.rows().into_iter().enumerate() {
            let state = m.space.state(i);
            if let Some(v) = row.iter().find(|v| **v < -entry_tol || **v > 1.0 + entry_tol) {
                return Err(Error::NotStochastic {
                    state,
                    reason: format!("entry {v:e} outside [0, 1]"),
                });
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > row_tol {
                return Err(Error::NotStochastic {
                    state,
                    reason: format!("row sum {sum:.17}"),
                });
            }
        }
        Ok(Self { inner: m })
    }

    pub fn identity(space: StateSpace) -> Self {
        Self {
            inner: GeneralMatrix::identity(space),
        }
    }

    /// Smallest entry; negative values are numerical round-off.
    pub fn min_entry(&self) -> f64 {
        self.inner.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_defect(&self) -> f64 {
        self.inner
            .entries
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn as_general(&self) -> &GeneralMatrix {
        &self.inner
    }

    pub fn into_general(self) -> GeneralMatrix {
        self.inner
    }

    pub fn dot(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        TransitionMatrix::from_general(self.inner.dot(&other.inner)?)
    }
}

impl SpaceMatrix for TransitionMatrix {
    fn space(&self) -> &StateSpace {
        &self.inner.space
    }
    fn entries(&self) -> &Array2<f64> {
        &self.inner.entries
    }
}
