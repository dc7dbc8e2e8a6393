//! Finite-state chain numerics: state spaces, dense matrices, exponentials,
//! jump-path sampling and distribution distances.

mod distance;
mod expm;
mod matrix;
mod path;
mod rng;
mod space;

pub use distance::{total_variation, tv_distance, Distribution};
pub use expm::{
    expm_conservative, expm_conservative_row, expm_general, matrix_power, propagate,
    transition_power,
};
pub use matrix::{matrix_norm, GeneralMatrix, RateMatrix, SpaceMatrix, TransitionMatrix};
pub use path::{sample_path, sample_path_with, PathSample};
pub use rng::{mix, replicate_map, sub_seed, RngStream, SimRng, NORMAL_METHOD};
pub use space::{State, StateSpace};
