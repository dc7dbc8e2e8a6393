//! Concrete matrices of the seed bank block-counting process, its structured
//! two-island variant, and their separated-time-scale limits.
//!
//! All lineage-count matrices live on [`StateSpace::lineages`]`(n0 + m0)`, the
//! states with at most `n0 + m0` lineages. Every transition below keeps or lowers
//! `n + m`, so that set is closed and the matrices need no boundary handling.

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::markov::{
    expm_conservative, expm_general, GeneralMatrix, RateMatrix, SpaceMatrix, State, StateSpace,
    TransitionMatrix,
};
use crate::tolerance::TOLERANCES;

/// Migration rate `c`, relative seed bank size `K`, and for the two-island model the
/// coalescence rate `alpha_prime` in the second island.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedbankParams {
    pub c: f64,
    pub k: f64,
    pub alpha_prime: Option<f64>,
}

impl SeedbankParams {
    pub fn new(c: f64, k: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("c must be positive, got {c}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(invalid(format!("K must be positive, got {k}")));
        }
        Ok(Self {
            c,
            k,
            alpha_prime: None,
        })
    }

    pub fn with_alpha_prime(mut self, alpha_prime: f64) -> Result<Self> {
        if !(alpha_prime >= 0.0 && alpha_prime.is_finite()) {
            return Err(invalid(format!(
                "alpha_prime must be non-negative, got {alpha_prime}"
            )));
        }
        self.alpha_prime = Some(alpha_prime);
        Ok(self)
    }
}

/// Initial numbers of active (`n0`) and dormant (`m0`) lineages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitialBlocks {
    pub n0: usize,
    pub m0: usize,
}

impl InitialBlocks {
    pub fn new(n0: usize, m0: usize) -> Result<Self> {
        if n0 + m0 == 0 {
            return Err(invalid("n0 + m0 must be at least 1"));
        }
        Ok(Self { n0, m0 })
    }

    pub fn total(&self) -> usize {
        self.n0 + self.m0
    }

    pub fn start(&self) -> State {
        State::new(self.n0, self.m0)
    }

    pub fn space(&self) -> StateSpace {
        StateSpace::lineages(self.total())
    }
}

pub(crate) fn binom2(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        (n * (n - 1) / 2) as f64
    }
}

fn block_counting_rates(
    space: &StateSpace,
    c: f64,
    k: f64,
    alpha_prime: f64,
) -> Vec<(State, State, f64)> {
    let mut rates = Vec::new();
    for s in space.iter() {
        let State { n, m } = s;
        if n >= 2 {
            rates.push((s, State::new(n - 1, m), binom2(n)));
        }
        if n >= 1 {
            rates.push((s, State::new(n - 1, m + 1), c * n as f64));
        }
        if m >= 1 {
            rates.push((s, State::new(n + 1, m - 1), c * k * m as f64));
        }
        if m >= 2 && alpha_prime > 0.0 {
            rates.push((s, State::new(n, m - 1), alpha_prime * binom2(m)));
        }
    }
    rates
}

/// Q-matrix of the seed bank block-counting process.
pub fn blockcounting_q(params: &SeedbankParams, init: &InitialBlocks) -> Result<RateMatrix> {
    let space = init.space();
    let rates = block_counting_rates(&space, params.c, params.k, 0.0);
    RateMatrix::from_rates(space, rates)
}

/// Q-matrix of the structured coalescent: the seed bank rates plus coalescence at
/// rate `alpha_prime · binom(m, 2)` among dormant lines.
pub fn structured_q(params: &SeedbankParams, init: &InitialBlocks) -> Result<RateMatrix> {
    let alpha_prime = params
        .alpha_prime
        .ok_or_else(|| invalid("structured model requires alpha_prime"))?;
    let space = init.space();
    let rates = block_counting_rates(&space, params.c, params.k, alpha_prime);
    RateMatrix::from_rates(space, rates)
}

/// Projection sending `(n, m)` to `(min(n, 1), m)`.
pub fn projection_p(init: &InitialBlocks) -> GeneralMatrix {
    projection_on(init.space())
}

pub(crate) fn projection_on(space: StateSpace) -> GeneralMatrix {
    let triples: Vec<_> = space
        .iter()
        .map(|s| (s, State::new(s.n.min(1), s.m), 1.0))
        .collect();
    GeneralMatrix::from_entries(space, triples).expect("projection targets lie in the space")
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(invalid(format!("K must be positive, got {k}")));
    }
    Ok(())
}

/// The limit matrix `G` of the ancient ancestral lines process, `G = P B P`.
///
/// Rows with `n >= 1` all equal row `(1, m)`: resuscitation with immediate coalescence
/// at rate `Km` to `(1, m − 1)`, dormancy of the single surviving active line at rate 1.
/// Not a Q-matrix: rows with `n >= 2` carry their negative entry at `(1, m)`.
pub fn ancient_g(init: &InitialBlocks, k: f64) -> Result<GeneralMatrix> {
    check_k(k)?;
    let space = init.space();
    let mut triples = Vec::new();
    for s in space.iter() {
        let State { n, m } = s;
        let km = k * m as f64;
        if m >= 1 {
            triples.push((s, State::new(1, m - 1), km));
        }
        if n >= 1 {
            triples.push((s, State::new(0, m + 1), 1.0));
            triples.push((s, State::new(1, m), -1.0 - km));
        } else {
            triples.push((s, State::new(0, m), -km));
        }
    }
    GeneralMatrix::from_entries(space, triples)
}

/// Limit of the rescaled prelimit perturbation: migration part of the block-counting rates
/// without the `c` factor.
pub fn limit_b(init: &InitialBlocks, k: f64) -> Result<GeneralMatrix> {
    check_k(k)?;
    let space = init.space();
    let mut triples = Vec::new();
    for s in space.iter() {
        let State { n, m } = s;
        let km = k * m as f64;
        if n >= 1 {
            triples.push((s, State::new(n - 1, m + 1), n as f64));
        }
        if m >= 1 {
            triples.push((s, State::new(n + 1, m - 1), km));
        }
        triples.push((s, s, -(n as f64) - km));
    }
    GeneralMatrix::from_entries(space, triples)
}

/// Limit matrix of the structured coalescent when the second island's coalescence rate
/// scales like the migration rate. As for [`ancient_g`], rows with `n >= 1` equal
/// row `(1, m)`, which keeps `Ĝ = P B̂ P`.
pub fn imbalanced_ghat(init: &InitialBlocks, k: f64) -> Result<GeneralMatrix> {
    check_k(k)?;
    let space = init.space();
    let mut triples = Vec::new();
    for s in space.iter() {
        let State { n, m } = s;
        let km = k * m as f64;
        let coal = binom2(m);
        if n >= 1 {
            if m >= 1 {
                triples.push((s, State::new(1, m - 1), km + coal));
            }
            triples.push((s, State::new(0, m + 1), 1.0));
            triples.push((s, State::new(1, m), -coal - 1.0 - km));
        } else {
            if m >= 1 {
                triples.push((s, State::new(1, m - 1), km));
                triples.push((s, State::new(0, m - 1), coal));
            }
            triples.push((s, State::new(0, m), -coal - km));
        }
    }
    GeneralMatrix::from_entries(space, triples)
}

/// One-step matrix of the fast coalescence part: from `(n, m)` to `(n − 1, m)` with
/// probability `binom(n, 2) c²`.
pub fn coalescence_step(space: &StateSpace, c: f64) -> Result<TransitionMatrix> {
    let n_states = space.len();
    let mut entries = Array2::zeros((n_states, n_states));
    let c2 = c * c;
    for (i, s) in space.iter().enumerate() {
        let p = binom2(s.n) * c2;
        if p > 1.0 {
            return Err(invalid(format!(
                "binom({}, 2) c^2 = {p} exceeds 1; c = {c} is too large for this state space",
                s.n
            )));
        }
        entries[[i, i]] = 1.0 - p;
        if p > 0.0 {
            let j = space.require(State::new(s.n - 1, s.m))?;
            entries[[i, j]] = p;
        }
    }
    TransitionMatrix::new(space.clone(), entries)
}

/// `Π_κ = A_κ + B_κ / b_κ` with `Π_κ` the exact transition matrix over one
/// discretization step `c²`, `b_κ = c^{−3}`.
#[derive(Clone, Debug)]
pub struct PrelimitDecomposition {
    pub c: f64,
    /// `b_κ`.
    pub speedup: f64,
    pub pi: TransitionMatrix,
    pub a: TransitionMatrix,
    pub b: GeneralMatrix,
}

impl PrelimitDecomposition {
    /// `‖Π_κ − A_κ − B_κ / b_κ‖`.
    pub fn identity_residual(&self) -> Result<f64> {
        let recomposed = self.b.scaled(1.0 / self.speedup)?;
        self.pi
            .as_general()
            .sub(self.a.as_general())?
            .distance(&recomposed)
    }
}

fn check_c_kappa(c: f64) -> Result<()> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(invalid(format!("c_kappa must lie in (0, 1], got {c}")));
    }
    Ok(())
}

/// Decomposition of the seed bank chain discretized at step `c²`.
pub fn prelimit_decomposition(c: f64, k: f64, init: &InitialBlocks) -> Result<PrelimitDecomposition> {
    check_c_kappa(c)?;
    let q = blockcounting_q(&SeedbankParams::new(c, k)?, init)?;
    decompose(&q, c)
}

/// Decomposition of an arbitrary lineage-count chain `q` at step `c²` against the
/// coalescence step matrix.
pub fn decompose(q: &RateMatrix, c: f64) -> Result<PrelimitDecomposition> {
    check_c_kappa(c)?;
    let pi = expm_conservative(q, c * c)?;
    let a = coalescence_step(q.space(), c)?;
    let speedup = c.powi(-3);
    let b = pi.as_general().sub(a.as_general())?.scaled(speedup)?;
    Ok(PrelimitDecomposition {
        c,
        speedup,
        pi,
        a,
        b,
    })
}

/// Transition family `t ↦ P e^{tG}` with `P` a 0/1 projection and `PG = GP = G`.
#[derive(Clone, Debug)]
pub struct DegenerateSemigroup {
    p: GeneralMatrix,
    g: GeneralMatrix,
    /// Indices fixed by `P`, i.e. the states that survive the projection.
    fixed: Vec<usize>,
    /// `G` restricted to the fixed states.
    restricted: RateMatrix,
}

impl DegenerateSemigroup {
    pub fn new(p: GeneralMatrix, g: GeneralMatrix) -> Result<Self> {
        if p.space() != g.space() {
            return Err(Error::SpaceMismatch);
        }
        let space = p.space().clone();
        let pe = p.entries();
        let mut image = Vec::with_capacity(space.len());
        for (i, row) in pe.rows().into_iter().enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v == 1.0)
                .map(|(j, _)| j)
                .collect();
            let zeros = row.iter().filter(|v| **v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != row.len() {
                return Err(Error::NotProjection(format!(
                    "row {} of P is not a unit vector",
                    space.state(i)
                )));
            }
            image.push(ones[0]);
        }
        if image.iter().any(|&j| image[j] != j) {
            return Err(Error::NotProjection("P·P ≠ P".into()));
        }
        let scale = g.entries().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let tol = TOLERANCES.build * scale;
        if p.dot(&g)?.max_abs_diff(&g)? > tol || g.dot(&p)?.max_abs_diff(&g)? > tol {
            return Err(Error::NotProjection("PG = GP = G fails".into()));
        }

        let fixed: Vec<usize> = (0..space.len()).filter(|&i| image[i] == i).collect();
        let sub_space = StateSpace::new(fixed.iter().map(|&i| space.state(i)).collect())?;
        let ge = g.entries();
        for &i in &fixed {
            let leaked: f64 = (0..space.len())
                .filter(|j| image[*j] != *j)
                .map(|j| ge[[i, j]].abs())
                .sum();
            if leaked > tol {
                return Err(Error::NotProjection(format!(
                    "G moves mass from {} to a projected-out state",
                    space.state(i)
                )));
            }
        }
        let sub = Array2::from_shape_fn((fixed.len(), fixed.len()), |(a, b)| {
            ge[[fixed[a], fixed[b]]]
        });
        let restricted = RateMatrix::new(sub_space, sub)?;
        Ok(Self {
            p,
            g,
            fixed,
            restricted,
        })
    }

    /// The seed bank limit: `P` from [`projection_p`], `G` from [`ancient_g`].
    pub fn ancient(init: &InitialBlocks, k: f64) -> Result<Self> {
        Self::new(projection_p(init), ancient_g(init, k)?)
    }

    /// The structured-coalescent limit with `G` from [`imbalanced_ghat`].
    pub fn imbalanced(init: &InitialBlocks, k: f64) -> Result<Self> {
        Self::new(projection_p(init), imbalanced_ghat(init, k)?)
    }

    pub fn space(&self) -> &StateSpace {
        self.p.space()
    }

    pub fn p(&self) -> &GeneralMatrix {
        &self.p
    }

    pub fn g(&self) -> &GeneralMatrix {
        &self.g
    }

    /// `G` on the states fixed by `P`, where it is a conservative Q-matrix.
    pub fn restricted_generator(&self) -> &RateMatrix {
        &self.restricted
    }

    /// `Π(t)`: the identity at `t = 0`, `P e^{tG}` for `t > 0`.
    ///
    /// Row `e` of `P e^{tG}` is row `P(e)` of `e^{tG}`, and rows of fixed states only
    /// see the restricted generator, so the conservative exponential suffices.
    pub fn at(&self, t: f64) -> Result<TransitionMatrix> {
        if !(t >= 0.0) {
            return Err(invalid(format!("time must be non-negative, got {t}")));
        }
        let space = self.space().clone();
        if t == 0.0 {
            return Ok(TransitionMatrix::identity(space));
        }
        let sub = expm_conservative(&self.restricted, t)?;
        let n = space.len();
        let mut out = Array2::zeros((n, n));
        let pe = self.p.entries();
        let position: Vec<Option<usize>> = {
            let mut pos = vec![None; n];
            for (a, &i) in self.fixed.iter().enumerate() {
                pos[i] = Some(a);
            }
            pos
        };
        for e in 0..n {
            let target = (0..n).find(|&j| pe[[e, j]] == 1.0).expect("unit row");
            let a = position[target].expect("image of P is fixed");
            for (b, &f) in self.fixed.iter().enumerate() {
                out[[e, f]] = sub.entries()[[a, b]];
            }
        }
        TransitionMatrix::new(space, out)
    }

    /// `P · expm_general(G, t)`, the independent evaluation route.
    pub fn at_via_general(&self, t: f64) -> Result<TransitionMatrix> {
        if !(t >= 0.0) {
            return Err(invalid(format!("time must be non-negative, got {t}")));
        }
        if t == 0.0 {
            return Ok(TransitionMatrix::identity(self.space().clone()));
        }
        let e = expm_general(&self.g, t)?;
        TransitionMatrix::from_general(self.p.dot(&e)?)
    }
}

/// `Π(t)` of a degenerate semigroup.
pub fn ancient_semigroup(sg: &DegenerateSemigroup, t: f64) -> Result<TransitionMatrix> {
    sg.at(t)
}

/// `Ḡ` truncated to `{0, 1} x {0, ..., m_max}`.
///
/// The dormancy transition out of `(1, m_max)` would leave the space; it is dropped
/// together with its diagonal contribution, so `truncated_row` is conservative but
/// differs from the untruncated generator. Chains started with `n + m <= m_max`
/// never reach it.
#[derive(Clone, Debug)]
pub struct RestrictedGbar {
    pub rates: RateMatrix,
    pub truncated_row: State,
    pub dropped_rate: f64,
}

pub fn restricted_gbar(k: f64, m_max: usize) -> Result<RestrictedGbar> {
    check_k(k)?;
    if m_max < 1 {
        return Err(invalid("m_max must be at least 1"));
    }
    let space = StateSpace::reduced(m_max);
    let mut rates = Vec::new();
    for s in space.iter() {
        let State { n, m } = s;
        if m >= 1 {
            rates.push((s, State::new(1, m - 1), k * m as f64));
        }
        if n == 1 && m < m_max {
            rates.push((s, State::new(0, m + 1), 1.0));
        }
    }
    Ok(RestrictedGbar {
        rates: RateMatrix::from_rates(space, rates)?,
        truncated_row: State::new(1, m_max),
        dropped_rate: 1.0,
    })
}
