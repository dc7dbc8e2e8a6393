use rand::Rng;
use rand_distr::Exp1;

use super::matrix::{RateMatrix, SpaceMatrix};
use super::rng::RngStream;
use super::space::State;
use crate::error::{invalid, Result};

/// One realization of a finite-state chain on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub jump_times: Vec<f64>,
    /// `visited[0]` is the start; `visited[k + 1]` is entered at `jump_times[k]`.
    pub visited: Vec<State>,
    pub horizon: f64,
}

impl PathSample {
    pub fn start(&self) -> State {
        self.visited[0]
    }

    pub fn state_at(&self, t: f64) -> State {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.visited[k]
    }

    /// Time spent in `s` during `[0, horizon]`.
    pub fn occupation(&self, s: State) -> f64 {
        let mut total = 0.0;
        let mut entered = 0.0;
        for (k, v) in self.visited.iter().enumerate() {
            let left = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            if *v == s {
                total += left - entered;
            }
            entered = left;
        }
        total
    }
}

/// Gillespie sampling with the stream's own generator.
pub fn sample_path(q: &RateMatrix, start: State, horizon: f64, stream: &RngStream) -> Result<PathSample> {
    sample_path_with(q, start, horizon, &mut stream.rng())
}

/// Gillespie sampling: exponential holding times with rate `−Q[s, s]`, next state
/// proportional to the off-diagonal row. Zero rows absorb.
pub fn sample_path_with<R: Rng + ?Sized>(
    q: &RateMatrix,
    start: State,
    horizon: f64,
    rng: &mut R,
) -> Result<PathSample> {
    if !(horizon >= 0.0) {
        return Err(invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let space = q.space();
    let mut i = space.require(start)?;
    let entries = q.entries();
    let mut t = 0.0;
    let mut path = PathSample {
        jump_times: Vec::new(),
        visited: vec![start],
        horizon,
    };
    loop {
        let rate = q.exit_rate(i);
        if rate <= 0.0 {
            break;
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / rate;
        t += hold;
        if t > horizon {
            break;
        }
        let mut u = rng.random::<f64>() * rate;
        let row = entries.row(i);
        let mut next = None;
        for (j, &r) in row.iter().enumerate() {
            if j == i || r <= 0.0 {
                continue;
            }
            next = Some(j);
            if u < r {
                break;
            }
            u -= r;
        }
        // `next` holds the last positive rate if round-off pushed u past the total
        i = next.expect("positive exit rate implies a positive off-diagonal entry");
        path.jump_times.push(t);
        path.visited.push(space.state(i));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::space::StateSpace;
    use ndarray::{array, Array2};

    #[test]
    fn absorbing_start_never_jumps() {
        let space = StateSpace::lineages(1);
        let q = RateMatrix::new(space, Array2::zeros((3, 3))).unwrap();
        let p = sample_path(&q, State::new(1, 0), 10.0, &RngStream::new(1, 0)).unwrap();
        assert!(p.jump_times.is_empty());
        assert_eq!(p.visited, vec![State::new(1, 0)]);
        assert_eq!(p.occupation(State::new(1, 0)), 10.0);
    }

    #[test]
    fn start_outside_space_rejected() {
        let space = StateSpace::lineages(1);
        let q = RateMatrix::new(space, Array2::zeros((3, 3))).unwrap();
        assert!(sample_path(&q, State::new(5, 0), 1.0, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn path_invariants_and_determinism() {
        let space = StateSpace::new(vec![State::new(0, 0), State::new(1, 0)]).unwrap();
        let q = RateMatrix::new(space, array![[-1.0, 1.0], [2.0, -2.0]]).unwrap();
        let stream = RngStream::new(9, 2);
        let a = sample_path(&q, State::new(0, 0), 20.0, &stream).unwrap();
        let b = sample_path(&q, State::new(0, 0), 20.0, &stream).unwrap();
        assert_eq!(a, b);
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.jump_times.iter().all(|&t| t <= 20.0));
        assert!(a.visited.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(a.visited.len(), a.jump_times.len() + 1);
        let occ = a.occupation(State::new(0, 0)) + a.occupation(State::new(1, 0));
        assert!((occ - 20.0).abs() < 1e-9);
    }
}
