//! Moment duality and convergence checks.
//!
//! Chain-side quantities are exact (matrix exponentials); process-side ones are
//! Monte Carlo means with standard errors.

use ndarray::Array1;
use rayon::prelude::*;

use crate::diffusion::{
    sample_limit_jump, simulate_em, DiffusionModel, DiffusionState, EmConfig, JumpState, Trajectory,
};
use crate::error::{invalid, Error, Result};
use crate::markov::{
    expm_conservative_row, replicate_map, sample_path_with, sub_seed, tv_distance, RateMatrix,
    SpaceMatrix, State, StateSpace,
};
use crate::models::{
    blockcounting_q, restricted_gbar, DegenerateSemigroup, InitialBlocks, SeedbankParams,
};
use crate::report::{fmt_real, CsvTable};

pub const DEFAULT_MAX_EXPONENT: usize = 4;
pub const DEFAULT_BIAS_ALLOWANCE: f64 = 5e-3;
pub const MIN_REPLICATES: u64 = 100;
/// Rounding slack added to every Monte Carlo tolerance.
const NUMERICAL_FLOOR: f64 = 1e-12;

/// Exponents, evaluation points and times of a duality check.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentGrid {
    pairs: Vec<(usize, usize)>,
    points: Vec<(f64, f64)>,
    times: Vec<f64>,
}

impl MomentGrid {
    pub fn new(pairs: Vec<(usize, usize)>, points: Vec<(f64, f64)>, times: Vec<f64>) -> Result<Self> {
        Self::with_max_exponent(pairs, points, times, DEFAULT_MAX_EXPONENT)
    }

    pub fn with_max_exponent(
        pairs: Vec<(usize, usize)>,
        points: Vec<(f64, f64)>,
        times: Vec<f64>,
        max_exponent: usize,
    ) -> Result<Self> {
        if pairs.is_empty() || points.is_empty() || times.is_empty() {
            return Err(invalid("moment grid needs pairs, points and times"));
        }
        if let Some((n, m)) = pairs.iter().find(|(n, m)| *n > max_exponent || *m > max_exponent) {
            return Err(invalid(format!("exponent ({n}, {m}) exceeds the maximum {max_exponent}")));
        }
        if let Some((x, y)) = points.iter().find(|(x, y)| !(0.0..=1.0).contains(x) || !(0.0..=1.0).contains(y)) {
            return Err(invalid(format!("point ({x}, {y}) is outside [0, 1]^2")));
        }
        if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("times must be positive"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times must be increasing"));
        }
        Ok(Self { pairs, points, times })
    }

    /// All pairs `(n, m)` with `n ∈ ns`, `m ∈ ms`.
    pub fn product(ns: &[usize], ms: &[usize], points: Vec<(f64, f64)>, times: Vec<f64>) -> Result<Self> {
        let pairs = ns.iter().flat_map(|&n| ms.iter().map(move |&m| (n, m))).collect();
        Self::new(pairs, points, times)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Largest `n + m` over the pairs.
    pub fn max_total(&self) -> usize {
        self.pairs.iter().map(|(n, m)| n + m).max().unwrap_or(0)
    }
}

/// A chain whose transition law can be evaluated exactly.
pub trait ChainLaw {
    fn space(&self) -> &StateSpace;
    /// Row `start` of the transition matrix at time `t`.
    fn law(&self, start: State, t: f64) -> Result<Array1<f64>>;
}

impl ChainLaw for RateMatrix {
    fn space(&self) -> &StateSpace {
        SpaceMatrix::space(self)
    }

    fn law(&self, start: State, t: f64) -> Result<Array1<f64>> {
        expm_conservative_row(self, start, t)
    }
}

impl ChainLaw for DegenerateSemigroup {
    fn space(&self) -> &StateSpace {
        DegenerateSemigroup::space(self)
    }

    fn law(&self, start: State, t: f64) -> Result<Array1<f64>> {
        let i = self.space().require(start)?;
        Ok(self.at(t)?.entries().row(i).to_owned())
    }
}

/// `Σ x^n̄ y^m̄ p(n̄, m̄)` with `0^0 = 1`.
pub fn moment_of_law(space: &StateSpace, law: &Array1<f64>, x: f64, y: f64) -> f64 {
    space
        .iter()
        .zip(law.iter())
        .map(|(s, p)| p * x.powi(s.n as i32) * y.powi(s.m as i32))
        .sum()
}

/// `E_(n,m)[x^N(t) y^M(t)]`.
pub fn chain_moment_exact<L: ChainLaw + ?Sized>(law: &L, start: State, x: f64, y: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be non-negative, got {t}")));
    }
    let row = law.law(start, t)?;
    Ok(moment_of_law(law.space(), &row, x, y))
}

/// Sample mean and standard error of `X^n Y^m` over endpoint samples.
pub fn moment_mc(samples: &[DiffusionState], n: usize, m: usize) -> Result<(f64, f64)> {
    if (samples.len() as u64) < MIN_REPLICATES {
        return Err(invalid(format!("need at least {MIN_REPLICATES} replicates, got {}", samples.len())));
    }
    let values: Vec<f64> = samples.iter().map(|s| s.x.powi(n as i32) * s.y.powi(m as i32)).collect();
    Ok(mean_and_error(&values))
}

fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let len = values.len() as f64;
    let mean = values.iter().sum::<f64>() / len;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0).max(1.0);
    (mean, (var / len).sqrt())
}

/// Endpoints at each grid time for `replicates` independent paths.
fn em_endpoints(
    model: &DiffusionModel,
    start: DiffusionState,
    times: &[f64],
    h: f64,
    replicates: u64,
    seed: u64,
) -> Result<Vec<Vec<DiffusionState>>> {
    let config = EmConfig::at_times(h, times.to_vec())?;
    let paths: Vec<Trajectory> = replicate_map(seed, replicates, |_, rng| simulate_em(model, start, &config, rng));
    Ok(transpose(paths.into_iter().map(|p| p.states).collect(), times.len()))
}

fn transpose(rows: Vec<Vec<DiffusionState>>, width: usize) -> Vec<Vec<DiffusionState>> {
    let mut cols = vec![Vec::with_capacity(rows.len()); width];
    for row in rows {
        for (j, s) in row.into_iter().enumerate() {
            cols[j].push(s);
        }
    }
    cols
}

/// `E_(x,y)[X(t)^n Y(t)^m]` by Euler–Maruyama.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_moment_mc(
    model: &DiffusionModel,
    x: f64,
    y: f64,
    n: usize,
    m: usize,
    t: f64,
    h: f64,
    replicates: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let start = DiffusionState::new(x, y)?;
    let ends = em_endpoints(model, start, &[t], h, replicates, seed)?;
    moment_mc(&ends[0], n, m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualityCell {
    pub n: usize,
    pub m: usize,
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub chain_exact: f64,
    pub diffusion_mc_mean: f64,
    pub mc_sigma: f64,
    pub bias_allowance: f64,
    pub pass: bool,
}

impl DualityCell {
    #[allow(clippy::too_many_arguments)]
    fn new(n: usize, m: usize, x: f64, y: f64, t: f64, chain: f64, mc: (f64, f64), bias: f64) -> Self {
        let (mean, sigma) = mc;
        Self {
            n,
            m,
            x,
            y,
            t,
            chain_exact: chain,
            diffusion_mc_mean: mean,
            mc_sigma: sigma,
            bias_allowance: bias,
            pass: (chain - mean).abs() <= 3.0 * sigma + bias + NUMERICAL_FLOOR,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualityReport {
    pub cells: Vec<DualityCell>,
}

impl DualityReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| !c.pass).count()
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new([
            "n",
            "m",
            "x",
            "y",
            "t",
            "chain_exact",
            "diffusion_mc_mean",
            "mc_sigma",
            "bias_allowance",
            "pass",
        ]);
        for c in &self.cells {
            table.push_row(vec![
                c.n.to_string(),
                c.m.to_string(),
                fmt_real(c.x),
                fmt_real(c.y),
                fmt_real(c.t),
                fmt_real(c.chain_exact),
                fmt_real(c.diffusion_mc_mean),
                fmt_real(c.mc_sigma),
                fmt_real(c.bias_allowance),
                c.pass.to_string(),
            ]);
        }
        table
    }
}

/// Seed bank block-counting chain on every state with at most `grid.max_total()` lines.
pub fn dual_chain(c: f64, k: f64, grid: &MomentGrid) -> Result<RateMatrix> {
    let init = InitialBlocks::new(grid.max_total().max(1), 0)?;
    blockcounting_q(&SeedbankParams::new(c, k)?, &init)
}

/// Endpoint samples of the prelimit diffusion, one set per grid point and time.
#[derive(Clone, Debug, PartialEq)]
pub struct PrelimitSamples {
    pub h: f64,
    pub replicates: u64,
    /// `ends[point][time]`.
    pub ends: Vec<Vec<Vec<DiffusionState>>>,
}

pub fn sample_prelimit(
    model: &DiffusionModel,
    grid: &MomentGrid,
    h: f64,
    replicates: u64,
    seed: u64,
) -> Result<PrelimitSamples> {
    if replicates < MIN_REPLICATES {
        return Err(invalid(format!("need at least {MIN_REPLICATES} replicates, got {replicates}")));
    }
    let ends = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            em_endpoints(model, DiffusionState::new(x, y)?, grid.times(), h, replicates, sub_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrelimitSamples { h, replicates, ends })
}

/// Compares exact chain moments under `chain` with Monte Carlo moments of `samples`.
/// `chain` may be any rate matrix containing the grid's pairs, including a mutated one.
pub fn duality_report<L: ChainLaw + ?Sized>(
    chain: &L,
    grid: &MomentGrid,
    samples: &[Vec<Vec<DiffusionState>>],
    bias_allowance: f64,
) -> Result<DualityReport> {
    if samples.len() != grid.points().len() || samples.iter().any(|s| s.len() != grid.times().len()) {
        return Err(invalid("samples do not match the grid"));
    }
    require_pairs_in(chain.space(), grid)?;
    let mut cells = Vec::new();
    for &(n, m) in grid.pairs() {
        let start = State::new(n, m);
        for (t_idx, &t) in grid.times().iter().enumerate() {
            let law = chain.law(start, t)?;
            for (p_idx, &(x, y)) in grid.points().iter().enumerate() {
                let exact = moment_of_law(chain.space(), &law, x, y);
                let mc = moment_mc(&samples[p_idx][t_idx], n, m)?;
                cells.push(DualityCell::new(n, m, x, y, t, exact, mc, bias_allowance));
            }
        }
    }
    Ok(DualityReport { cells })
}

/// Prelimit duality between the seed bank diffusion and its block-counting chain.
pub fn verify_prelimit_duality(
    c: f64,
    k: f64,
    grid: &MomentGrid,
    h: f64,
    replicates: u64,
    seed: u64,
    bias_allowance: f64,
) -> Result<DualityReport> {
    let model = DiffusionModel::seedbank(c, k)?;
    let samples = sample_prelimit(&model, grid, h, replicates, seed)?;
    duality_report(&dual_chain(c, k, grid)?, grid, &samples.ends, bias_allowance)
}

/// Transition class of the block-counting chain, identified by the jump vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateKind {
    /// `(n, m) → (n−1, m)`.
    Coalescence,
    /// `(n, m) → (n−1, m+1)`.
    Dormancy,
    /// `(n, m) → (n+1, m−1)`.
    Resuscitation,
}

impl RateKind {
    pub const ALL: [RateKind; 3] = [Self::Coalescence, Self::Dormancy, Self::Resuscitation];

    fn matches(self, from: State, to: State) -> bool {
        let dn = to.n as i64 - from.n as i64;
        let dm = to.m as i64 - from.m as i64;
        match self {
            Self::Coalescence => (dn, dm) == (-1, 0),
            Self::Dormancy => (dn, dm) == (-1, 1),
            Self::Resuscitation => (dn, dm) == (1, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Coalescence => "coalescence",
            Self::Dormancy => "dormancy",
            Self::Resuscitation => "resuscitation",
        }
    }
}

/// Multiplies every rate of one transition class by `factor`.
pub fn mutate_rates(q: &RateMatrix, kind: RateKind, factor: f64) -> Result<RateMatrix> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(invalid(format!("factor must be non-negative, got {factor}")));
    }
    let space = SpaceMatrix::space(q).clone();
    let mut rates = Vec::new();
    for from in space.iter() {
        for to in space.iter() {
            let r = q.get(from, to);
            if from != to && r != 0.0 {
                let scale = if kind.matches(from, to) { factor } else { 1.0 };
                rates.push((from, to, r * scale));
            }
        }
    }
    RateMatrix::from_rates(space, rates)
}

/// Limit duality: exact sampler against `Ḡ` on the reduced space.
pub fn verify_limit_duality(k: f64, grid: &MomentGrid, replicates: u64, seed: u64) -> Result<DualityReport> {
    if let Some((x, _)) = grid.points().iter().find(|(x, _)| *x != 0.0 && *x != 1.0) {
        return Err(invalid(format!("limit duality needs x in {{0, 1}}, got {x}")));
    }
    if let Some((n, _)) = grid.pairs().iter().find(|(n, _)| *n > 1) {
        return Err(invalid(format!("limit duality needs n in {{0, 1}}, got {n}")));
    }
    if replicates < MIN_REPLICATES {
        return Err(invalid(format!("need at least {MIN_REPLICATES} replicates, got {replicates}")));
    }
    let gbar = restricted_gbar(k, grid.max_total().max(1))?;
    let samples = sample_limit_endpoints(k, grid, replicates, seed)?;
    duality_report(&gbar.rates, grid, &samples, 0.0)
}

fn sample_limit_endpoints(k: f64, grid: &MomentGrid, replicates: u64, seed: u64) -> Result<Vec<Vec<Vec<DiffusionState>>>> {
    let horizon = *grid.times().last().expect("non-empty");
    grid.points()
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let start = JumpState::from_frequencies(x, y)?;
            let rows = replicate_map(sub_seed(seed, i as u64), replicates, |_, rng| {
                sample_limit_jump(start, k, horizon, rng)
                    .map(|p| grid.times().iter().map(|&t| p.state_at(t).as_diffusion()).collect())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Ok(transpose(rows, grid.times().len()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TvRecord {
    pub c: f64,
    /// One time for marginal laws, two for joint laws.
    pub times: Vec<f64>,
    pub tv: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceReport {
    pub records: Vec<TvRecord>,
}

impl ConvergenceReport {
    fn series(&self, times: &[f64]) -> Vec<f64> {
        self.records.iter().filter(|r| r.times == times).map(|r| r.tv).collect()
    }

    /// TV strictly decreasing in `c` for every time tuple.
    pub fn monotone(&self) -> bool {
        self.time_tuples().iter().all(|ts| self.series(ts).windows(2).all(|w| w[1] < w[0]))
    }

    pub fn time_tuples(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.times) {
                out.push(r.times.clone());
            }
        }
        out
    }

    /// Largest TV at the smallest `c`.
    pub fn final_tv(&self) -> f64 {
        self.time_tuples()
            .iter()
            .filter_map(|ts| self.series(ts).last().copied())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(["c", "t1", "t2", "tv"]);
        for r in &self.records {
            let t2 = r.times.get(1).map_or_else(|| "none".to_string(), |t| fmt_real(*t));
            table.push_row(vec![fmt_real(r.c), fmt_real(r.times[0]), t2, fmt_real(r.tv)]);
        }
        table
    }
}

fn check_convergence_c(c_list: &[f64]) -> Result<()> {
    if c_list.is_empty() {
        return Err(invalid("c list must be non-empty"));
    }
    if let Some(c) = c_list.iter().find(|c| !(**c > 0.0 && **c <= 0.5)) {
        return Err(invalid(format!("convergence runs need 0 < c <= 0.5, got {c}")));
    }
    if c_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("c list must be strictly decreasing"));
    }
    Ok(())
}

/// TV between the law of the chain at time `t / c` and row `start` of `Π(t)`.
pub fn chain_convergence_tv(c_list: &[f64], k: f64, init: &InitialBlocks, t_list: &[f64]) -> Result<ConvergenceReport> {
    check_convergence_c(c_list)?;
    let sg = DegenerateSemigroup::ancient(init, k)?;
    let start = init.start();
    let limits = t_list.iter().map(|&t| sg.law(start, t)).collect::<Result<Vec<_>>>()?;
    let per_c = c_list
        .par_iter()
        .map(|&c| {
            let q = blockcounting_q(&SeedbankParams::new(c, k)?, init)?;
            t_list
                .iter()
                .zip(&limits)
                .map(|(&t, limit)| {
                    let law = q.law(start, t / c)?;
                    Ok(TvRecord {
                        c,
                        times: vec![t],
                        tv: tv_distance(law.as_slice().unwrap(), limit.as_slice().unwrap())?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<TvRecord> = per_c.into_iter().flatten().collect();
    records.sort_by(|a, b| a.times[0].total_cmp(&b.times[0]));
    Ok(ConvergenceReport { records })
}

/// Joint law of the states at `t1 < t2` by Markov composition.
fn joint_law<F>(space: &StateSpace, start: State, transition: F) -> Result<Vec<f64>>
where
    F: Fn(State, usize) -> Result<Array1<f64>>,
{
    let first = transition(start, 0)?;
    let mut joint = Vec::with_capacity(space.len() * space.len());
    for (a, pa) in space.iter().zip(first.iter()) {
        if *pa == 0.0 {
            joint.extend(std::iter::repeat_n(0.0, space.len()));
            continue;
        }
        let second = transition(a, 1)?;
        joint.extend(second.iter().map(|pb| pa * pb));
    }
    Ok(joint)
}

/// TV between the joint laws at `(t1, t2)` of the rescaled chain and the limit.
pub fn chain_convergence_tv_joint(
    c_list: &[f64],
    k: f64,
    init: &InitialBlocks,
    t1: f64,
    t2: f64,
) -> Result<ConvergenceReport> {
    check_convergence_c(c_list)?;
    if !(t1 > 0.0 && t2 > t1) {
        return Err(invalid(format!("need 0 < t1 < t2, got ({t1}, {t2})")));
    }
    let sg = DegenerateSemigroup::ancient(init, k)?;
    let space = init.space();
    let start = init.start();
    let steps = [t1, t2 - t1];
    let limit = joint_law(&space, start, |s, i| sg.law(s, steps[i]))?;
    let records = c_list
        .par_iter()
        .map(|&c| {
            let q = blockcounting_q(&SeedbankParams::new(c, k)?, init)?;
            let law = joint_law(&space, start, |s, i| q.law(s, steps[i] / c))?;
            Ok(TvRecord {
                c,
                times: vec![t1, t2],
                tv: tv_distance(&law, &limit)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport { records })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparkRecord {
    pub c: f64,
    pub horizon: f64,
    pub replicates: u64,
    /// Fraction of time spent in `(2, 0)`.
    pub occupation: f64,
    pub occupation_sigma: f64,
    /// `(1,1) → (2,0) → (1,0)` excursions per path.
    pub excursions: f64,
    pub excursions_sigma: f64,
}

pub const SPARK_STATE: State = State { n: 2, m: 0 };

/// Occupation of `(2, 0)` and spark excursions on paths from `(1, 1)` over the
/// rescaled horizon `horizon`, i.e. model time `horizon / c`.
pub fn spark_statistic(c: f64, k: f64, horizon: f64, replicates: u64, seed: u64) -> Result<SparkRecord> {
    if replicates < 2 {
        return Err(invalid("need at least 2 replicates"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let init = InitialBlocks::new(1, 1)?;
    let q = blockcounting_q(&SeedbankParams::new(c, k)?, &init)?;
    let model_horizon = horizon / c;
    let pattern = [State::new(1, 1), SPARK_STATE, State::new(1, 0)];
    let stats = replicate_map(seed, replicates, |_, rng| {
        sample_path_with(&q, init.start(), model_horizon, rng).map(|p| {
            let occ = p.occupation(SPARK_STATE) / model_horizon;
            let sparks = p.visited.windows(3).filter(|w| *w == pattern).count() as f64;
            (occ, sparks)
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (occupation, occupation_sigma) = mean_and_error(&stats.iter().map(|s| s.0).collect::<Vec<_>>());
    let (excursions, excursions_sigma) = mean_and_error(&stats.iter().map(|s| s.1).collect::<Vec<_>>());
    Ok(SparkRecord {
        c,
        horizon,
        replicates,
        occupation,
        occupation_sigma,
        excursions,
        excursions_sigma,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparkReport {
    pub records: Vec<SparkRecord>,
}

impl SparkReport {
    pub fn run(c_list: &[f64], k: f64, horizon: f64, replicates: u64, seed: u64) -> Result<Self> {
        let records = c_list
            .iter()
            .enumerate()
            .map(|(i, &c)| spark_statistic(c, k, horizon, replicates, sub_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }

    /// Occupation strictly decreasing along the list.
    pub fn occupation_decreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].occupation < w[0].occupation)
    }

    /// Largest over smallest excursion count is at most 2.
    pub fn excursions_stable(&self) -> bool {
        let counts = self.records.iter().map(|r| r.excursions);
        let max = counts.clone().fold(f64::MIN, f64::max);
        let min = counts.fold(f64::MAX, f64::min);
        min > 0.0 && max <= 2.0 * min
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new([
            "c",
            "horizon",
            "replicates",
            "occupation_fraction",
            "occupation_sigma",
            "excursions_per_path",
            "excursions_sigma",
        ]);
        for r in &self.records {
            table.push_row(vec![
                fmt_real(r.c),
                fmt_real(r.horizon),
                r.replicates.to_string(),
                fmt_real(r.occupation),
                fmt_real(r.occupation_sigma),
                fmt_real(r.excursions),
                fmt_real(r.excursions_sigma),
            ]);
        }
        table
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixationRecord {
    pub t: f64,
    pub mean: f64,
    pub sigma: f64,
    pub target: f64,
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixationReport {
    pub records: Vec<FixationRecord>,
}

impl FixationReport {
    fn from_samples(k: f64, start: DiffusionState, times: &[f64], ends: &[Vec<DiffusionState>], allowance: f64) -> Self {
        let f = |s: &DiffusionState| (k * s.x + s.y) / (k + 1.0);
        let target = f(&start);
        let records = times
            .iter()
            .zip(ends)
            .map(|(&t, col)| {
                let (mean, sigma) = mean_and_error(&col.iter().map(f).collect::<Vec<_>>());
                FixationRecord {
                    t,
                    mean,
                    sigma,
                    target,
                    allowance,
                    pass: (mean - target).abs() <= 3.0 * sigma + allowance + NUMERICAL_FLOOR,
                }
            })
            .collect();
        Self { records }
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(["t", "mean", "sigma", "target", "allowance", "pass"]);
        for r in &self.records {
            table.push_row(vec![
                fmt_real(r.t),
                fmt_real(r.mean),
                fmt_real(r.sigma),
                fmt_real(r.target),
                fmt_real(r.allowance),
                r.pass.to_string(),
            ]);
        }
        table
    }
}

/// Process whose `(K X + Y) / (K + 1)` is checked for conservation in mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixationProcess {
    Prelimit { model: DiffusionModel, h: f64 },
    Limit { k: f64 },
}

pub fn fixation_check(
    process: &FixationProcess,
    start: DiffusionState,
    t_list: &[f64],
    replicates: u64,
    seed: u64,
    allowance: f64,
) -> Result<FixationReport> {
    if replicates < MIN_REPLICATES {
        return Err(invalid(format!("need at least {MIN_REPLICATES} replicates, got {replicates}")));
    }
    let times = t_list.to_vec();
    match *process {
        FixationProcess::Prelimit { model, h } => {
            let ends = em_endpoints(&model, start, &times, h, replicates, seed)?;
            Ok(FixationReport::from_samples(model.k(), start, &times, &ends, allowance))
        }
        FixationProcess::Limit { k } => {
            let grid = MomentGrid::new(vec![(0, 0)], vec![(start.x, start.y)], times.clone())?;
            let ends = sample_limit_endpoints(k, &grid, replicates, seed)?;
            Ok(FixationReport::from_samples(k, start, &times, &ends[0], 0.0))
        }
    }
}

fn require_pairs_in(space: &StateSpace, grid: &MomentGrid) -> Result<()> {
    for &(n, m) in grid.pairs() {
        if !space.contains(State::new(n, m)) {
            return Err(Error::StateOutsideSpace(State::new(n, m)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::projection_p;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moment_conventions() {
        let init = InitialBlocks::new(2, 1).unwrap();
        let q = blockcounting_q(&SeedbankParams::new(0.5, 1.0).unwrap(), &init).unwrap();
        let sg = DegenerateSemigroup::ancient(&init, 1.0).unwrap();
        for s in init.space().iter() {
            for t in [0.0, 0.4, 3.0] {
                assert_abs_diff_eq!(chain_moment_exact(&q, s, 1.0, 1.0, t).unwrap(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(chain_moment_exact(&sg, s, 1.0, 1.0, t).unwrap(), 1.0, epsilon = 1e-12);
            }
            let (x, y) = (0.3, 0.7);
            let t0 = chain_moment_exact(&q, s, x, y, 0.0).unwrap();
            assert_abs_diff_eq!(t0, x.powi(s.n as i32) * y.powi(s.m as i32), epsilon = 1e-15);
        }
        // 0^0 = 1
        let t0 = chain_moment_exact(&q, State::new(0, 1), 0.0, 0.5, 0.0).unwrap();
        assert_eq!(t0, 0.5);
    }

    #[test]
    fn limit_moment_two_term_form() {
        let init = InitialBlocks::new(5, 0).unwrap();
        let sg = DegenerateSemigroup::ancient(&init, 1.5).unwrap();
        let (x, y, t) = (0.35, 0.8, 0.7);
        let e = sg.law(State::new(1, 0), t).unwrap();
        let i10 = init.space().index_of(State::new(1, 0)).unwrap();
        let i01 = init.space().index_of(State::new(0, 1)).unwrap();
        let expected = x * e[i10] + y * e[i01];
        for n in 1..=5 {
            let v = chain_moment_exact(&sg, State::new(n, 0), x, y, t).unwrap();
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(MomentGrid::new(vec![], vec![(0.5, 0.5)], vec![1.0]).is_err());
        assert!(MomentGrid::new(vec![(5, 0)], vec![(0.5, 0.5)], vec![1.0]).is_err());
        assert!(MomentGrid::with_max_exponent(vec![(5, 0)], vec![(0.5, 0.5)], vec![1.0], 5).is_ok());
        assert!(MomentGrid::new(vec![(1, 0)], vec![(1.5, 0.5)], vec![1.0]).is_err());
        assert!(MomentGrid::new(vec![(1, 0)], vec![(0.5, 0.5)], vec![0.0]).is_err());
    }

    #[test]
    fn constant_statistics_have_zero_sigma() {
        let model = DiffusionModel::seedbank(1.0, 1.0).unwrap();
        let (m, s) = diffusion_moment_mc(&model, 0.4, 0.6, 0, 0, 0.5, 1e-2, 200, 1).unwrap();
        assert_eq!((m, s), (1.0, 0.0));
        let (m, s) = diffusion_moment_mc(&model, 1.0, 1.0, 2, 3, 0.5, 1e-2, 200, 1).unwrap();
        assert_eq!((m, s), (1.0, 0.0));
        assert!(diffusion_moment_mc(&model, 0.4, 0.6, 1, 0, 0.5, 1e-2, 99, 1).is_err());
    }

    #[test]
    fn mutation_scales_one_class() {
        let init = InitialBlocks::new(2, 1).unwrap();
        let q = blockcounting_q(&SeedbankParams::new(0.5, 2.0).unwrap(), &init).unwrap();
        let s = State::new;
        let r = mutate_rates(&q, RateKind::Dormancy, 1.2).unwrap();
        assert_abs_diff_eq!(r.get(s(2, 1), s(1, 2)), 1.2 * q.get(s(2, 1), s(1, 2)), epsilon = 1e-15);
        assert_eq!(r.get(s(2, 1), s(1, 1)), q.get(s(2, 1), s(1, 1)));
        assert_eq!(r.get(s(2, 1), s(3, 0)), q.get(s(2, 1), s(3, 0)));
        assert_eq!(mutate_rates(&q, RateKind::Coalescence, 1.0).unwrap(), q);
    }

    #[test]
    fn limit_duality_rejects_interior_x() {
        let grid = MomentGrid::new(vec![(1, 0)], vec![(0.5, 0.5)], vec![1.0]).unwrap();
        assert!(verify_limit_duality(1.0, &grid, 1000, 1).is_err());
    }

    #[test]
    fn convergence_rejects_large_c() {
        let init = InitialBlocks::new(1, 1).unwrap();
        assert!(chain_convergence_tv(&[0.8, 0.1], 1.0, &init, &[1.0]).is_err());
    }

    #[test]
    fn convergence_common_absorption() {
        let init = InitialBlocks::new(2, 1).unwrap();
        let rep = chain_convergence_tv(&[0.2, 0.1], 1.0, &init, &[200.0]).unwrap();
        assert!(rep.records.iter().all(|r| r.tv < 1e-6), "{rep:?}");
    }

    #[test]
    fn limit_puts_no_mass_on_spark_state() {
        let init = InitialBlocks::new(1, 1).unwrap();
        let sg = DegenerateSemigroup::ancient(&init, 1.0).unwrap();
        let i = init.space().index_of(SPARK_STATE).unwrap();
        for t in [1e-3, 0.5, 4.0] {
            assert_eq!(sg.law(State::new(1, 1), t).unwrap()[i], 0.0);
        }
        let p = projection_p(&init);
        assert_eq!(p.get(SPARK_STATE, State::new(1, 0)), 1.0);
    }

    #[test]
    fn spark_state_entered_only_by_resuscitation() {
        let init = InitialBlocks::new(1, 1).unwrap();
        let q = blockcounting_q(&SeedbankParams::new(0.3, 2.0).unwrap(), &init).unwrap();
        for from in init.space().iter().filter(|s| *s != SPARK_STATE) {
            let r = q.get(from, SPARK_STATE);
            if from == State::new(1, 1) {
                assert_abs_diff_eq!(r, 0.3 * 2.0, epsilon = 1e-15);
            } else {
                assert_eq!(r, 0.0);
            }
        }
    }
}
