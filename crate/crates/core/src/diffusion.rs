//! Frequency processes: Euler–Maruyama for the seed bank and two-island
//! diffusions, an exact sampler for the jump-ODE limit and a thinning scheme for
//! the two-island jump-diffusion limit.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::markov::{replicate_map, NORMAL_METHOD};
use crate::report::{fmt_real, CsvTable, BUILD_ID};

pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionState {
    pub x: f64,
    pub y: f64,
}

fn check_frequency(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl DiffusionState {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        check_frequency("x", x)?;
        check_frequency("y", y)?;
        Ok(Self { x, y })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpState {
    x: u8,
    y: f64,
}

impl JumpState {
    pub fn new(x: u8, y: f64) -> Result<Self> {
        if x > 1 {
            return Err(invalid(format!("x must be 0 or 1, got {x}")));
        }
        check_frequency("y", y)?;
        Ok(Self { x, y })
    }

    /// Accepts a real `x` that is exactly 0 or 1.
    pub fn from_frequencies(x: f64, y: f64) -> Result<Self> {
        if x == 0.0 {
            Self::new(0, y)
        } else if x == 1.0 {
            Self::new(1, y)
        } else {
            Err(invalid(format!("x must be 0 or 1, got {x}")))
        }
    }

    pub fn x(&self) -> u8 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn as_diffusion(&self) -> DiffusionState {
        DiffusionState {
            x: f64::from(self.x),
            y: self.y,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    h: f64,
    horizon: f64,
    output_grid: Vec<f64>,
}

impl EmConfig {
    /// `output_grid` must be increasing, inside `[0, horizon]`, with gaps of at least `h`.
    pub fn new(h: f64, horizon: f64, output_grid: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("h must be positive, got {h}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be non-negative, got {horizon}")));
        }
        if output_grid.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) {
            return Err(invalid("output grid must lie in [0, horizon]"));
        }
        if output_grid.windows(2).any(|w| w[1] - w[0] < h) {
            return Err(invalid("output grid must be increasing with gaps of at least h"));
        }
        Ok(Self {
            h,
            horizon,
            output_grid,
        })
    }

    /// Records only at the horizon.
    pub fn at_times(h: f64, output_grid: Vec<f64>) -> Result<Self> {
        let horizon = output_grid.last().copied().unwrap_or(0.0);
        Self::new(h, horizon, output_grid)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn output_grid(&self) -> &[f64] {
        &self.output_grid
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmStep {
    pub state: DiffusionState,
    pub clamped: bool,
}

fn clamp_unit(v: f64) -> (f64, bool) {
    if v < 0.0 {
        (0.0, true)
    } else if v > 1.0 {
        (1.0, true)
    } else {
        (v, false)
    }
}

fn wright_fisher_noise(v: f64) -> f64 {
    (v * (1.0 - v)).max(0.0).sqrt()
}

pub fn em_step_seedbank(s: DiffusionState, c: f64, k: f64, h: f64, z: f64) -> EmStep {
    em_step_two_island(s, c, k, 0.0, h, z, 0.0)
}

/// Seed bank step plus `α′ sqrt(y(1−y))` noise on `y`.
pub fn em_step_two_island(s: DiffusionState, c: f64, k: f64, alpha_prime: f64, h: f64, z1: f64, z2: f64) -> EmStep {
    let sh = h.sqrt();
    let x = s.x + c * (s.y - s.x) * h + wright_fisher_noise(s.x) * sh * z1;
    let mut y = s.y + k * c * (s.x - s.y) * h;
    if alpha_prime != 0.0 {
        y += alpha_prime * wright_fisher_noise(s.y) * sh * z2;
    }
    let (x, cx) = clamp_unit(x);
    let (y, cy) = clamp_unit(y);
    EmStep {
        state: DiffusionState { x, y },
        clamped: cx || cy,
    }
}

/// Treatment of steps that could leave `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Gaussian increment, then projection onto `[0, 1]`.
    #[default]
    Clamp,
    /// Near the boundary the Gaussian increment is replaced by a two-point one with
    /// the same mean and variance that stays inside `[0, 1]`.
    MomentMatched,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clamp => "clamp",
            Self::MomentMatched => "moment-matched",
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(Self::Clamp),
            "moment-matched" => Ok(Self::MomentMatched),
            other => Err(invalid(format!("unknown boundary scheme {other:?}"))),
        }
    }
}

/// Two-point draw with mean `mean` and standard deviation `sd` inside `[0, 1]`,
/// symmetric when the distance to the nearer end allows it.
fn two_point(mean: f64, sd: f64, u: f64) -> f64 {
    let near_zero = mean <= 0.5;
    let d = if near_zero { mean } else { 1.0 - mean };
    let offset = if d <= 0.0 {
        0.0
    } else if d >= sd {
        if u < 0.5 {
            -sd
        } else {
            sd
        }
    } else {
        // atoms at the boundary and at d + sd^2 / d from it
        let far = d + sd * sd / d;
        if u < d / far {
            far - d
        } else {
            -d
        }
    };
    if near_zero {
        mean + offset
    } else {
        mean - offset
    }
}

/// One coordinate update with mean `mean` and noise scale `sd`.
fn boundary_step<R: Rng + ?Sized>(boundary: Boundary, mean: f64, sd: f64, rng: &mut R) -> (f64, bool) {
    let z: f64 = rng.sample(StandardNormal);
    match boundary {
        Boundary::Clamp => clamp_unit(mean + sd * z),
        Boundary::MomentMatched => {
            if mean - 3.0 * sd >= 0.0 && mean + 3.0 * sd <= 1.0 {
                clamp_unit(mean + sd * z)
            } else {
                let u: f64 = rng.random();
                clamp_unit(two_point(mean, sd, u))
            }
        }
    }
}

/// Prelimit frequency process: the seed bank diffusion, or the two-island diffusion
/// when `alpha_prime` is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionModel {
    c: f64,
    k: f64,
    alpha_prime: Option<f64>,
    boundary: Boundary,
}

impl DiffusionModel {
    pub fn seedbank(c: f64, k: f64) -> Result<Self> {
        check_rates(c, k)?;
        Ok(Self {
            c,
            k,
            alpha_prime: None,
            boundary: Boundary::Clamp,
        })
    }

    pub fn two_island(c: f64, k: f64, alpha_prime: f64) -> Result<Self> {
        check_rates(c, k)?;
        if !(alpha_prime >= 0.0 && alpha_prime.is_finite()) {
            return Err(invalid(format!("alpha_prime must be non-negative, got {alpha_prime}")));
        }
        Ok(Self {
            c,
            k,
            alpha_prime: Some(alpha_prime),
            boundary: Boundary::Clamp,
        })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn alpha_prime(&self) -> Option<f64> {
        self.alpha_prime
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn scheme(&self) -> String {
        let model = if self.alpha_prime.is_some() { "two-island" } else { "seedbank" };
        format!("euler-maruyama-{model}-{}", self.boundary.name())
    }

    pub fn step<R: Rng + ?Sized>(&self, s: DiffusionState, h: f64, rng: &mut R) -> EmStep {
        if self.boundary == Boundary::Clamp {
            let z1 = rng.sample(StandardNormal);
            return match self.alpha_prime {
                None => em_step_seedbank(s, self.c, self.k, h, z1),
                Some(a) => em_step_two_island(s, self.c, self.k, a, h, z1, rng.sample(StandardNormal)),
            };
        }
        let sh = h.sqrt();
        let (x, cx) = boundary_step(
            self.boundary,
            s.x + self.c * (s.y - s.x) * h,
            wright_fisher_noise(s.x) * sh,
            rng,
        );
        let y_mean = s.y + self.k * self.c * (s.x - s.y) * h;
        let (y, cy) = match self.alpha_prime {
            Some(a) => boundary_step(self.boundary, y_mean, a * wright_fisher_noise(s.y) * sh, rng),
            None => clamp_unit(y_mean),
        };
        EmStep {
            state: DiffusionState { x, y },
            clamped: cx || cy,
        }
    }
}

fn check_rates(c: f64, k: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("c must be positive, got {c}")));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(invalid(format!("K must be positive, got {k}")));
    }
    Ok(())
}

/// States recorded on an output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DiffusionState>,
    pub clamp_events: u64,
    pub steps: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<DiffusionState> {
        self.states.last().copied()
    }
}

/// Number of steps of size at most `h` covering `span`.
fn steps_for(span: f64, h: f64) -> u64 {
    if span <= 0.0 {
        return 0;
    }
    ((span / h) * (1.0 - 1e-12)).ceil().max(1.0) as u64
}

pub fn total_steps(config: &EmConfig) -> u64 {
    let mut t = 0.0;
    let mut n = 0;
    for &g in config.output_grid() {
        n += steps_for(g - t, config.h());
        t = g;
    }
    n
}

/// Runs the scheme from `start`, landing exactly on every grid time.
pub fn simulate_em<R: Rng + ?Sized>(
    model: &DiffusionModel,
    start: DiffusionState,
    config: &EmConfig,
    rng: &mut R,
) -> Trajectory {
    let mut state = start;
    let mut t = 0.0;
    let mut clamp_events = 0;
    let mut steps = 0;
    let mut states = Vec::with_capacity(config.output_grid().len());
    for &g in config.output_grid() {
        let n = steps_for(g - t, config.h());
        let dt = if n > 0 { (g - t) / n as f64 } else { 0.0 };
        for _ in 0..n {
            let step = model.step(state, dt, rng);
            state = step.state;
            clamp_events += u64::from(step.clamped);
        }
        steps += n;
        t = g;
        states.push(state);
    }
    Trajectory {
        times: config.output_grid().to_vec(),
        states,
        clamp_events,
        steps,
    }
}

/// Independent replicates of [`simulate_em`] on counter-based streams.
pub fn simulate_em_replicates(
    model: &DiffusionModel,
    start: DiffusionState,
    config: &EmConfig,
    master_seed: u64,
    replicates: u64,
) -> Vec<Trajectory> {
    replicate_map(master_seed, replicates, |_, rng| simulate_em(model, start, config, rng))
}

/// Seed bank diffusion observed at model times `t / c` for each grid `t`; the returned
/// trajectory is indexed by the rescaled times.
pub fn simulate_rescaled<R: Rng + ?Sized>(
    c: f64,
    k: f64,
    start: DiffusionState,
    grid: &[f64],
    h: f64,
    step_budget: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    let model = DiffusionModel::seedbank(c, k)?;
    let config = rescaled_config(c, grid, h, step_budget)?;
    let mut path = simulate_em(&model, start, &config, rng);
    path.times = grid.to_vec();
    Ok(path)
}

/// Model-time configuration of a rescaled run, checked against the step budget.
pub fn rescaled_config(c: f64, grid: &[f64], h: f64, step_budget: u64) -> Result<EmConfig> {
    check_rates(c, 1.0)?;
    let config = EmConfig::at_times(h, grid.iter().map(|t| t / c).collect())?;
    let steps = total_steps(&config);
    if steps > step_budget {
        return Err(Error::StepBudget {
            steps,
            budget: step_budget,
        });
    }
    Ok(config)
}

/// Piecewise path of the jump-ODE limit: `x` constant and `y` relaxing
/// exponentially towards `x` on each segment.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpPath {
    k: f64,
    horizon: f64,
    /// `(start time, x, y at start)` per segment.
    segments: Vec<(f64, u8, f64)>,
}

impl JumpPath {
    pub fn jump_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|s| s.0)
    }

    pub fn jumps(&self) -> usize {
        self.segments.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn segments(&self) -> &[(f64, u8, f64)] {
        &self.segments
    }

    pub fn state_at(&self, t: f64) -> JumpState {
        let i = self.segments.partition_point(|s| s.0 <= t).max(1) - 1;
        let (t0, x, y0) = self.segments[i];
        JumpState {
            x,
            y: flow(x, y0, self.k, (t - t0).max(0.0)),
        }
    }

    pub fn on_grid(&self, grid: &[f64]) -> Trajectory {
        Trajectory {
            times: grid.to_vec(),
            states: grid.iter().map(|&t| self.state_at(t).as_diffusion()).collect(),
            clamp_events: 0,
            steps: 0,
        }
    }
}

/// `y(t) = x + (y0 − x) e^{−Kt}`.
pub fn flow(x: u8, y0: f64, k: f64, t: f64) -> f64 {
    let x = f64::from(x);
    x + (y0 - x) * (-k * t).exp()
}

/// Time to the next jump given an `Exp(1)` draw, or `None` if the remaining
/// integrated hazard `|y0 − x| / K` is not enough.
pub fn jump_time(x: u8, y0: f64, k: f64, e: f64) -> Option<f64> {
    let d = (y0 - f64::from(x)).abs();
    if d == 0.0 || e >= d / k {
        return None;
    }
    Some(-(-k * e / d).ln_1p() / k)
}

/// Exact path of the limit process on `[0, horizon]`.
pub fn sample_limit_jump<R: Rng + ?Sized>(start: JumpState, k: f64, horizon: f64, rng: &mut R) -> Result<JumpPath> {
    check_rates(1.0, k)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be non-negative, got {horizon}")));
    }
    let mut segments = vec![(0.0, start.x, start.y)];
    loop {
        let (t0, x, y0) = *segments.last().expect("non-empty");
        let e: f64 = rng.sample(Exp1);
        let Some(tau) = jump_time(x, y0, k, e) else { break };
        let t = t0 + tau;
        if t > horizon {
            break;
        }
        segments.push((t, 1 - x, flow(x, y0, k, tau)));
    }
    Ok(JumpPath { k, horizon, segments })
}

/// Output of the two-island limit scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridPath {
    pub trajectory: Trajectory,
    pub jump_times: Vec<f64>,
    pub candidates: u64,
    pub accepted: u64,
    /// `∫ hazard dt` along the discretized path.
    pub integrated_hazard: f64,
}

fn hazard(x: u8, y: f64) -> f64 {
    if x == 0 {
        y
    } else {
        1.0 - y
    }
}

/// Two-island limit: `y` by Euler–Maruyama with drift `K(x−y)` and noise
/// `sigma sqrt(y(1−y))`, flips of `x` by thinning against the majorant rate 1.
pub fn sample_two_island_limit<R: Rng + ?Sized>(
    start: JumpState,
    k: f64,
    sigma: f64,
    config: &EmConfig,
    rng: &mut R,
) -> Result<HybridPath> {
    check_rates(1.0, k)?;
    let h = config.h();
    let mut x = start.x;
    let mut y = start.y;
    let mut t = 0.0;
    let mut next_candidate: f64 = rng.sample(Exp1);
    let mut out = HybridPath {
        trajectory: Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            clamp_events: 0,
            steps: 0,
        },
        jump_times: Vec::new(),
        candidates: 0,
        accepted: 0,
        integrated_hazard: 0.0,
    };

    let advance = |t: f64, to: f64, x: u8, y: &mut f64, out: &mut HybridPath, rng: &mut R| {
        let n = steps_for(to - t, h);
        if n == 0 {
            return;
        }
        let dt = (to - t) / n as f64;
        let sdt = dt.sqrt();
        let xf = f64::from(x);
        for _ in 0..n {
            out.integrated_hazard += hazard(x, *y) * dt;
            let mut next = *y + k * (xf - *y) * dt;
            if sigma != 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                next += sigma * wright_fisher_noise(*y) * sdt * z;
            }
            let (v, clamped) = clamp_unit(next);
            *y = v;
            out.trajectory.clamp_events += u64::from(clamped);
        }
        out.trajectory.steps += n;
    };

    let mut targets = config.output_grid().to_vec();
    let record_horizon = targets.last().is_none_or(|&l| l < config.horizon());
    if record_horizon {
        targets.push(config.horizon());
    }
    for (i, &target) in targets.iter().enumerate() {
        while next_candidate <= target {
            advance(t, next_candidate, x, &mut y, &mut out, rng);
            t = next_candidate;
            out.candidates += 1;
            let u: f64 = rng.random();
            if u < hazard(x, y) {
                out.accepted += 1;
                x = 1 - x;
                out.jump_times.push(t);
            }
            next_candidate += rng.sample::<f64, _>(Exp1);
        }
        advance(t, target, x, &mut y, &mut out, rng);
        t = target;
        if !(record_horizon && i == targets.len() - 1) {
            out.trajectory.times.push(target);
            out.trajectory.states.push(DiffusionState { x: f64::from(x), y });
        }
    }
    Ok(out)
}

/// Metadata shared by trajectory reports.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMeta {
    pub c: Option<f64>,
    pub k: f64,
    pub h: Option<f64>,
    pub seed: u64,
    pub scheme: String,
}

/// Long-format CSV with columns `replicate, t, x, y`.
pub fn trajectory_csv(meta: &TrajectoryMeta, paths: &[Trajectory]) -> CsvTable {
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), fmt_real);
    let mut table = CsvTable::new(["replicate", "t", "x", "y"])
        .meta("build", BUILD_ID)
        .meta("c", opt(meta.c))
        .meta("K", fmt_real(meta.k))
        .meta("h", opt(meta.h))
        .meta("seed", meta.seed)
        .meta("scheme", &meta.scheme)
        .meta("normal_method", NORMAL_METHOD);
    for (r, path) in paths.iter().enumerate() {
        for (t, s) in path.times.iter().zip(&path.states) {
            table.push_row(vec![r.to_string(), fmt_real(*t), fmt_real(s.x), fmt_real(s.y)]);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::RngStream;
    use approx::assert_abs_diff_eq;

    fn st(x: f64, y: f64) -> DiffusionState {
        DiffusionState::new(x, y).unwrap()
    }

    #[test]
    fn seedbank_step_examples() {
        for z in [-3.0, 0.0, 2.5] {
            assert_eq!(em_step_seedbank(st(1.0, 1.0), 0.7, 2.0, 0.1, z).state, st(1.0, 1.0));
        }
        let s = em_step_seedbank(st(0.2, 0.8), 1.0, 2.0, 0.1, 0.0).state;
        assert_abs_diff_eq!(s.x, 0.26, epsilon = 1e-15);
        assert_abs_diff_eq!(s.y, 0.68, epsilon = 1e-15);
        assert_eq!(em_step_seedbank(st(0.5, 0.5), 3.0, 1.0, 0.01, 0.0).state, st(0.5, 0.5));
    }

    #[test]
    fn clamping_reported() {
        let s = em_step_seedbank(st(0.01, 0.0), 1.0, 1.0, 0.01, -10.0);
        assert!(s.clamped);
        assert_eq!(s.state.x, 0.0);
    }

    #[test]
    fn two_island_step_examples() {
        for (z1, z2) in [(0.3, -1.2), (0.0, 2.0)] {
            let a = em_step_two_island(st(0.4, 0.7), 0.5, 2.0, 0.0, 0.01, z1, z2);
            assert_eq!(a, em_step_seedbank(st(0.4, 0.7), 0.5, 2.0, 0.01, z1));
        }
        let s = em_step_two_island(st(0.5, 0.5), 1.0, 1.0, 1.0, 0.04, 0.0, 1.0).state;
        assert_abs_diff_eq!(s.y, 0.6, epsilon = 1e-15);
        let fixed = em_step_two_island(st(1.0, 1.0), 1.0, 1.0, 1.0, 0.04, 1.5, -0.7);
        assert_eq!(fixed.state, st(1.0, 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig::new(0.0, 1.0, vec![1.0]).is_err());
        assert!(EmConfig::new(0.1, 1.0, vec![0.5, 0.55]).is_err());
        assert!(EmConfig::new(0.1, 1.0, vec![2.0]).is_err());
        assert!(EmConfig::new(0.1, 1.0, vec![0.5, 1.0]).is_ok());
        assert!(JumpState::new(2, 0.5).is_err());
        assert!(JumpState::from_frequencies(0.5, 0.5).is_err());
        assert!(DiffusionState::new(1.2, 0.0).is_err());
    }

    #[test]
    fn lands_on_grid() {
        let cfg = EmConfig::new(0.03, 1.0, vec![0.1, 0.25, 1.0]).unwrap();
        assert_eq!(total_steps(&cfg), 4 + 5 + 25);
        let model = DiffusionModel::seedbank(1.0, 1.0).unwrap();
        let path = simulate_em(&model, st(0.5, 0.5), &cfg, &mut RngStream::new(1, 0).rng());
        assert_eq!(path.steps, 34);
        assert_eq!(path.times, vec![0.1, 0.25, 1.0]);
    }

    #[test]
    fn rescaled_absorbing_start_and_budget() {
        let mut rng = RngStream::new(3, 0).rng();
        let p = simulate_rescaled(0.1, 1.0, st(1.0, 1.0), &[0.5, 1.0], 1e-2, DEFAULT_STEP_BUDGET, &mut rng).unwrap();
        assert!(p.states.iter().all(|s| *s == st(1.0, 1.0)));
        assert_eq!(p.times, vec![0.5, 1.0]);
        assert!(matches!(
            simulate_rescaled(1e-3, 1.0, st(0.5, 0.5), &[1.0], 1e-3, 1000, &mut rng),
            Err(Error::StepBudget { steps: 1_000_000, budget: 1000 })
        ));
    }

    #[test]
    fn limit_jump_absorbing_and_flow() {
        let mut rng = RngStream::new(5, 0).rng();
        for start in [JumpState::new(0, 0.0).unwrap(), JumpState::new(1, 1.0).unwrap()] {
            let path = sample_limit_jump(start, 1.3, 100.0, &mut rng).unwrap();
            assert_eq!(path.jumps(), 0);
            assert_eq!(path.state_at(50.0), start);
        }
        for i in 0..200 {
            let path = sample_limit_jump(JumpState::new(0, 0.9).unwrap(), 0.5, 10.0, &mut RngStream::new(6, i).rng())
                .unwrap();
            for w in path.segments().windows(2) {
                let (t0, x, y0) = w[0];
                let (t1, x1, y1) = w[1];
                assert_eq!(x1, 1 - x);
                assert!((flow(x, y0, 0.5, t1 - t0) - y1).abs() < 1e-12);
                let mid = path.state_at(0.5 * (t0 + t1));
                assert_eq!(mid.x(), x);
                assert!((mid.y() - flow(x, y0, 0.5, 0.5 * (t1 - t0))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jump_time_inverts_hazard() {
        let (k, y0) = (2.0, 0.7);
        let e = 0.2;
        let tau = jump_time(0, y0, k, e).unwrap();
        assert_abs_diff_eq!(y0 * (1.0 - (-k * tau).exp()) / k, e, epsilon = 1e-14);
        assert!(jump_time(0, y0, k, y0 / k).is_none());
        assert!(jump_time(1, 1.0, k, 1e-9).is_none());
    }

    #[test]
    fn hybrid_absorbing_start() {
        let cfg = EmConfig::new(1e-2, 5.0, vec![1.0, 5.0]).unwrap();
        let p = sample_two_island_limit(JumpState::new(1, 1.0).unwrap(), 1.0, 1.0, &cfg, &mut RngStream::new(8, 0).rng())
            .unwrap();
        assert_eq!(p.accepted, 0);
        assert!(p.trajectory.states.iter().all(|s| *s == st(1.0, 1.0)));
    }

    #[test]
    fn two_point_moments() {
        for (mean, sd) in [(0.01, 0.05), (0.2, 0.05), (0.97, 0.1), (0.5, 0.3)] {
            let lo = two_point(mean, sd, 0.0);
            let hi = two_point(mean, sd, 0.999_999);
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            // weight of the atom reached by u = 0
            let w = if ((lo - mean).abs() - (hi - mean).abs()).abs() < 1e-12 {
                0.5
            } else {
                let d = mean.min(1.0 - mean);
                d / (d + sd * sd / d)
            };
            let m1 = w * lo + (1.0 - w) * hi;
            let var = w * (lo - m1).powi(2) + (1.0 - w) * (hi - m1).powi(2);
            assert_abs_diff_eq!(m1, mean, epsilon = 1e-14);
            assert_abs_diff_eq!(var, sd * sd, epsilon = 1e-14);
        }
        assert_eq!(two_point(0.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn moment_matched_keeps_fixed_points() {
        let model = DiffusionModel::seedbank(1.0, 1.0).unwrap().with_boundary(Boundary::MomentMatched);
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..100 {
            assert_eq!(model.step(st(1.0, 1.0), 0.01, &mut rng).state, st(1.0, 1.0));
            assert_eq!(model.step(st(0.0, 0.0), 0.01, &mut rng).state, st(0.0, 0.0));
        }
        assert_eq!("moment-matched".parse::<Boundary>().unwrap(), Boundary::MomentMatched);
        assert!("reflect".parse::<Boundary>().is_err());
    }

    #[test]
    fn csv_layout() {
        let meta = TrajectoryMeta {
            c: Some(1.0),
            k: 1.0,
            h: Some(1e-3),
            seed: 42,
            scheme: "euler-maruyama-seedbank".into(),
        };
        let traj = Trajectory {
            times: vec![0.5],
            states: vec![st(0.25, 1.0)],
            clamp_events: 0,
            steps: 1,
        };
        let csv = trajectory_csv(&meta, &[traj]).render();
        assert!(csv.contains("# seed=42\n"));
        assert!(csv.contains("# normal_method=ziggurat\n"));
        assert!(csv.ends_with("replicate,t,x,y\n0,5.0000000000000000e-1,2.5000000000000000e-1,1.0000000000000000e0\n"));
    }
}
