use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// Block counts: `n` active and `m` dormant lineages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub n: usize,
    pub m: usize,
}

impl State {
    pub const fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    pub const fn total(&self) -> usize {
        self.n + self.m
    }
}

impl From<(usize, usize)> for State {
    fn from((n, m): (usize, usize)) -> Self {
        Self { n, m }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

/// Ordered finite set of states with a state-to-row bijection.
///
/// Cloning is cheap; the storage is shared.
#[derive(Clone, Debug)]
pub struct StateSpace {
    states: Arc<[State]>,
    index: Arc<HashMap<State, usize>>,
}

impl PartialEq for StateSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.states, &other.states) || self.states == other.states
    }
}

impl StateSpace {
    pub fn new(states: Vec<State>) -> Result<Self> {
        if states.is_empty() {
            return Err(invalid("state space must be non-empty"));
        }
        let mut index = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if index.insert(*s, i).is_some() {
                return Err(invalid(format!("duplicate state {s}")));
            }
        }
        Ok(Self {
            states: states.into(),
            index: Arc::new(index),
        })
    }

    /// All states with at most `total` lineages, `{(n, m) : n + m <= total}`,
    /// ordered by `n` then `m`.
    ///
    /// This is the closed part of `{0, ..., total}^2`: none of the block-counting
    /// or limit transitions increase `n + m`, so no transition leaves it.
    pub fn lineages(total: usize) -> Self {
        let states = (0..=total)
            .flat_map(|n| (0..=total - n).map(move |m| State::new(n, m)))
            .collect();
        Self::new(states).expect("simplex states are distinct")
    }

    /// `{0, 1} x {0, ..., m_max}`, ordered by `n` then `m`.
    pub fn reduced(m_max: usize) -> Self {
        let states = (0..=1)
            .flat_map(|n| (0..=m_max).map(move |m| State::new(n, m)))
            .collect();
        Self::new(states).expect("reduced states are distinct")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> State {
        self.states[i]
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn index_of(&self, s: State) -> Option<usize> {
        self.index.get(&s).copied()
    }

    pub fn require(&self, s: State) -> Result<usize> {
        self.index_of(s).ok_or(Error::StateOutsideSpace(s))
    }

    pub fn contains(&self, s: State) -> bool {
        self.index.contains_key(&s)
    }

    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        self.states.iter().copied()
    }

    pub fn max_total(&self) -> usize {
        self.iter().map(|s| s.total()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trips() {
        let space = StateSpace::lineages(5);
        for i in 0..space.len() {
            assert_eq!(space.index_of(space.state(i)), Some(i));
        }
        assert_eq!(space.len(), 21);
    }

    #[test]
    fn lineage_space_sits_inside_the_square() {
        let space = StateSpace::lineages(4);
        assert!(space.iter().all(|s| s.n <= 4 && s.m <= 4 && s.total() <= 4));
        assert!(space.contains(State::new(0, 4)));
        assert!(!space.contains(State::new(4, 1)));
    }

    #[test]
    fn duplicates_rejected() {
        let err = StateSpace::new(vec![State::new(1, 0), State::new(1, 0)]);
        assert!(err.is_err());
    }

    #[test]
    fn reduced_space_layout() {
        let space = StateSpace::reduced(2);
        let labels: Vec<String> = space.iter().map(|s| s.to_string()).collect();
        assert_eq!(labels, ["0:0", "0:1", "0:2", "1:0", "1:1", "1:2"]);
    }
}
