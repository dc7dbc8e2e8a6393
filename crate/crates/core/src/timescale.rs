//! Separation-of-time-scales pipeline for a family of finite-state chains indexed
//! by a scale parameter `c → 0`.
//!
//! 1. Discretize each chain at step `1/a(c)` and check `q/a → 0`.
//! 2. Split the one-step matrix as `Π = A + B / b(c)` with a caller-supplied `A`,
//!    detect the projection `P = lim A^r`, and extract `G = lim P B P`.
//! 3. Assemble `P e^{tG}` and bound the error of reading the continuous chain off
//!    the discretized one.
//!
//! Limits are certified by monotone trends over finite grids, never asserted.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::markov::{
    expm_conservative, expm_conservative_row, expm_general, transition_power, tv_distance,
    GeneralMatrix, RateMatrix, SpaceMatrix, State, StateSpace, TransitionMatrix,
};
use crate::report::{fmt_real, CsvTable};
use crate::tolerance::TOLERANCES;

type ScaleRule = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Decreasing scale parameters `c_κ` with discretization density `a(c)` and
/// speed-up `b(c)`.
pub struct ScalingSequence {
    c_values: Vec<f64>,
    a_of: ScaleRule,
    b_of: ScaleRule,
}

impl std::fmt::Debug for ScalingSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalingSequence")
            .field("c_values", &self.c_values)
            .finish_non_exhaustive()
    }
}

impl ScalingSequence {
    pub fn new(
        c_values: Vec<f64>,
        a_of: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b_of: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if c_values.is_empty() {
            return Err(invalid("scaling sequence needs at least one c value"));
        }
        if c_values.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(invalid("c values must be positive"));
        }
        if c_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("c values must be strictly decreasing"));
        }
        Ok(Self {
            c_values,
            a_of: Box::new(a_of),
            b_of: Box::new(b_of),
        })
    }

    /// `a = c^{−a_exp}`, `b = c^{−b_exp}`.
    pub fn power_law(c_values: Vec<f64>, a_exp: f64, b_exp: f64) -> Result<Self> {
        Self::new(c_values, move |c| c.powf(-a_exp), move |c| c.powf(-b_exp))
    }

    /// `a = c^{−2}`, `b = c^{−3}`: the scaling of the seed bank family.
    pub fn seedbank(c_values: Vec<f64>) -> Result<Self> {
        Self::power_law(c_values, 2.0, 3.0)
    }

    pub fn c_values(&self) -> &[f64] {
        &self.c_values
    }

    pub fn a(&self, c: f64) -> f64 {
        (self.a_of)(c)
    }

    pub fn b(&self, c: f64) -> f64 {
        (self.b_of)(c)
    }

    /// Whether `a` and `b / a` increase along the list.
    pub fn grows(&self) -> bool {
        let a: Vec<f64> = self.c_values.iter().map(|&c| self.a(c)).collect();
        let ratio: Vec<f64> = self.c_values.iter().map(|&c| self.b(c) / self.a(c)).collect();
        a.windows(2).all(|w| w[1] > w[0]) && ratio.windows(2).all(|w| w[1] > w[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub c: f64,
    pub a: f64,
    /// `max_e −Q[e, e]`.
    pub q: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepConditionReport {
    pub records: Vec<StepRecord>,
    /// Ratios strictly decreasing and the last one below 0.1.
    pub verdict: bool,
}

pub const STEP_RATIO_THRESHOLD: f64 = 0.1;

/// Checks `a → ∞` and `q / a → 0` along the sequence.
pub fn check_step_condition<F>(family: F, scaling: &ScalingSequence) -> Result<StepConditionReport>
where
    F: Fn(f64) -> Result<RateMatrix>,
{
    let mut records = Vec::with_capacity(scaling.c_values().len());
    for &c in scaling.c_values() {
        let q = family(c)?.max_exit_rate();
        let a = scaling.a(c);
        records.push(StepRecord {
            c,
            a,
            q,
            ratio: q / a,
        });
    }
    let decreasing = records.windows(2).all(|w| w[1].ratio < w[0].ratio);
    let last = records.last().expect("non-empty sequence").ratio;
    Ok(StepConditionReport {
        verdict: decreasing && last < STEP_RATIO_THRESHOLD,
        records,
    })
}

/// Largest distance of a power of `A` from 0/1 accepted when rounding to `P`.
pub const MAX_ROUNDING_ERROR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionEstimate {
    pub p_hat: GeneralMatrix,
    /// `(C, ‖A^{⌈C a⌉} − P_hat‖)`.
    pub residuals: Vec<(f64, f64)>,
    /// Largest `|A^R − round(A^R)|` entry at `R = ⌈C_max a⌉`.
    pub rounding_error: f64,
    pub power: u64,
}

fn power_for(c_mult: f64, a_kappa: f64) -> u64 {
    (c_mult * a_kappa).ceil() as u64
}

/// Estimates `P = lim A^r` by rounding `A^{⌈C_max a⌉}` to 0/1.
pub fn detect_projection(a: &TransitionMatrix, a_kappa: f64, c_grid: &[f64]) -> Result<ProjectionEstimate> {
    if c_grid.is_empty() || c_grid.iter().any(|c| !(*c > 0.0)) {
        return Err(invalid("C grid must be non-empty and positive"));
    }
    if !(a_kappa > 0.0 && a_kappa.is_finite()) {
        return Err(invalid(format!("a_kappa must be positive, got {a_kappa}")));
    }
    let c_max = c_grid.iter().copied().fold(f64::MIN, f64::max);
    let power = power_for(c_max, a_kappa);
    let limit = transition_power(a, power)?;
    let rounded = limit.entries().mapv(f64::round);
    let rounding_error = limit
        .entries()
        .iter()
        .zip(rounded.iter())
        .map(|(x, r)| (x - r).abs())
        .fold(0.0, f64::max);
    if rounding_error > MAX_ROUNDING_ERROR {
        return Err(Error::NotProjection(format!(
            "A^{power} is {rounding_error:.3} away from a 0/1 matrix"
        )));
    }
    let p_hat = GeneralMatrix::new(a.space().clone(), rounded)?;
    if p_hat.dot(&p_hat)? != p_hat {
        return Err(Error::NotProjection("rounded limit is not idempotent".into()));
    }
    let residuals = c_grid
        .iter()
        .map(|&cm| {
            let r = transition_power(a, power_for(cm, a_kappa))?;
            Ok((cm, r.as_general().distance(&p_hat)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionEstimate {
        p_hat,
        residuals,
        rounding_error,
        power,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorEstimate {
    pub g_hat: GeneralMatrix,
    pub c_min: f64,
    /// `(c, ‖P B_c P − G_hat‖)` in family order.
    pub pbp_residuals: Vec<(f64, f64)>,
    /// `‖P B_{c_{i+1}} P − P B_{c_i} P‖` between consecutive members.
    pub cauchy: Vec<f64>,
}

/// `G_hat = P B P` at the smallest `c`, with convergence diagnostics.
///
/// `family` must be ordered by strictly decreasing `c`. Residuals must not increase and
/// consecutive differences must shrink (or vanish), otherwise the limit is rejected.
pub fn extract_g(p_hat: &GeneralMatrix, family: &[(f64, GeneralMatrix)]) -> Result<GeneratorEstimate> {
    if family.is_empty() {
        return Err(invalid("B family must be non-empty"));
    }
    if family.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(invalid("B family must be ordered by strictly decreasing c"));
    }
    if p_hat.dot(p_hat)? != *p_hat {
        return Err(Error::NotProjection("P_hat is not idempotent".into()));
    }
    let projected = family
        .iter()
        .map(|(_, b)| p_hat.dot(b)?.dot(p_hat))
        .collect::<Result<Vec<_>>>()?;
    let g_hat = projected.last().expect("non-empty").clone();
    let pbp_residuals = family
        .iter()
        .zip(&projected)
        .map(|((c, _), pbp)| Ok((*c, pbp.distance(&g_hat)?)))
        .collect::<Result<Vec<_>>>()?;
    let cauchy = projected
        .windows(2)
        .map(|w| w[1].distance(&w[0]))
        .collect::<Result<Vec<_>>>()?;

    let negligible = TOLERANCES.build;
    let residuals_ok = pbp_residuals.windows(2).all(|w| w[1].1 <= w[0].1 + negligible);
    let cauchy_ok = cauchy
        .windows(2)
        .all(|w| w[1] < w[0] || (w[0] <= negligible && w[1] <= negligible));
    if !residuals_ok || !cauchy_ok {
        return Err(Error::LimitNotSupported(format!(
            "residuals {:?}, consecutive differences {:?}",
            pbp_residuals.iter().map(|r| r.1).collect::<Vec<_>>(),
            cauchy
        )));
    }
    Ok(GeneratorEstimate {
        g_hat,
        c_min: family.last().expect("non-empty").0,
        pbp_residuals,
        cauchy,
    })
}

/// `Π(t) = P e^{tG}` for `t > 0`, the identity at `t = 0`.
pub fn assemble_limit(p_hat: &GeneralMatrix, g_hat: &GeneralMatrix, t: f64) -> Result<TransitionMatrix> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be non-negative, got {t}")));
    }
    let scale = g_hat.entries().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = TOLERANCES.algebraic * scale;
    if p_hat.dot(g_hat)?.max_abs_diff(g_hat)? > tol || g_hat.dot(p_hat)?.max_abs_diff(g_hat)? > tol {
        return Err(Error::NotProjection("P G = G P = G fails".into()));
    }
    if t == 0.0 {
        return Ok(TransitionMatrix::identity(p_hat.space().clone()));
    }
    let e = expm_general(g_hat, t)?;
    TransitionMatrix::from_general_with(p_hat.dot(&e)?, TOLERANCES.algebraic)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizationRecord {
    pub c: f64,
    pub t: f64,
    pub steps: u64,
    pub tv: f64,
    /// `1 − exp(−q / a)`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizationReport {
    pub records: Vec<DiscretizationRecord>,
}

impl DiscretizationReport {
    pub fn all_hold(&self) -> bool {
        self.records.iter().all(|r| r.holds)
    }
}

/// Number of discrete steps `⌊b t⌋`, robust to `b t` landing a rounding error below an integer.
fn floor_steps(x: f64) -> u64 {
    (x + 1e-9 * x.max(1.0)).floor() as u64
}

/// Compares the continuous chain at time `b t / a` with the chain discretized at step
/// `1/a` after `⌊b t⌋` steps, against the one-jump bound `1 − exp(−q/a)`.
pub fn verify_discretization_lemma<F>(
    family: F,
    scaling: &ScalingSequence,
    t_grid: &[f64],
    start: State,
) -> Result<DiscretizationReport>
where
    F: Fn(f64) -> Result<RateMatrix> + Sync,
{
    let per_c = scaling
        .c_values()
        .par_iter()
        .map(|&c| discretization_at(&family, scaling, c, t_grid, start))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscretizationReport {
        records: per_c.into_iter().flatten().collect(),
    })
}

fn discretization_at<F>(
    family: &F,
    scaling: &ScalingSequence,
    c: f64,
    t_grid: &[f64],
    start: State,
) -> Result<Vec<DiscretizationRecord>>
where
    F: Fn(f64) -> Result<RateMatrix>,
{
    let q = family(c)?;
    let a = scaling.a(c);
    let b = scaling.b(c);
    let bound = 1.0 - (-q.max_exit_rate() / a).exp();
    let step = expm_conservative(&q, 1.0 / a)?;
    let i = q.space().require(start)?;
    t_grid
        .iter()
        .map(|&t| {
            let steps = floor_steps(b * t);
            let discrete = transition_power(&step, steps)?;
            let exact = expm_conservative_row(&q, start, b * t / a)?;
            let discrete_row = discrete.entries().row(i).to_owned();
            let tv = tv_distance(
                discrete_row.as_slice().expect("contiguous"),
                exact.as_slice().expect("contiguous"),
            )?;
            Ok(DiscretizationRecord {
                c,
                t,
                steps,
                tv,
                bound,
                holds: tv <= bound + 1e-9,
            })
        })
        .collect()
}

/// Builder for the fast part `A_κ` of the one-step matrix, given the state space and `c`.
pub type FastPartBuilder<'a> = dyn Fn(&StateSpace, f64) -> Result<TransitionMatrix> + Sync + 'a;

/// Per-κ summary row of a pipeline run.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaRecord {
    pub step: StepRecord,
    pub projection_residuals: Vec<(f64, f64)>,
    pub rounding_error: f64,
    pub pbp_residual: f64,
    /// Largest discretization TV over the time grid.
    pub tv: f64,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct LimitResult {
    pub p_hat: GeneralMatrix,
    pub g_hat: GeneralMatrix,
    pub step_condition: StepConditionReport,
    pub generator: GeneratorEstimate,
    pub discretization: DiscretizationReport,
    pub kappas: Vec<KappaRecord>,
}

impl LimitResult {
    /// All trend checks and bounds passed.
    pub fn certified(&self) -> bool {
        self.step_condition.verdict && self.discretization.all_hold()
    }

    pub fn to_csv(&self, c_grid: &[f64]) -> CsvTable {
        let mut columns = vec!["c_kappa".to_string(), "q_kappa".into(), "ratio".into()];
        columns.extend(c_grid.iter().map(|c| format!("proj_residual_C{c}")));
        columns.extend(["pbp_residual".into(), "tv".into(), "bound".into()]);
        let mut table = CsvTable::new(columns);
        for k in &self.kappas {
            let mut row = vec![fmt_real(k.step.c), fmt_real(k.step.q), fmt_real(k.step.ratio)];
            row.extend(k.projection_residuals.iter().map(|(_, r)| fmt_real(*r)));
            row.extend([fmt_real(k.pbp_residual), fmt_real(k.tv), fmt_real(k.bound)]);
            table.push_row(row);
        }
        table
    }
}

/// Runs every step of the pipeline on a chain family.
pub fn run_pipeline<F>(
    family: F,
    fast_part: &FastPartBuilder<'_>,
    scaling: &ScalingSequence,
    c_grid: &[f64],
    t_grid: &[f64],
    start: State,
) -> Result<LimitResult>
where
    F: Fn(f64) -> Result<RateMatrix> + Sync,
{
    let step_condition = check_step_condition(&family, scaling)?;

    struct PerKappa {
        projection: ProjectionEstimate,
        b: GeneralMatrix,
    }
    let per_kappa = scaling
        .c_values()
        .par_iter()
        .map(|&c| {
            let q = family(c)?;
            let a_kappa = scaling.a(c);
            let pi = expm_conservative(&q, 1.0 / a_kappa)?;
            let fast = fast_part(q.space(), c)?;
            let projection = detect_projection(&fast, a_kappa, c_grid)?;
            let b = pi.as_general().sub(fast.as_general())?.scaled(scaling.b(c))?;
            Ok(PerKappa { projection, b })
        })
        .collect::<Result<Vec<_>>>()?;

    let p_hat = per_kappa.last().expect("non-empty").projection.p_hat.clone();
    if let Some((c, _)) = scaling
        .c_values()
        .iter()
        .zip(&per_kappa)
        .find(|(_, k)| k.projection.p_hat != p_hat)
    {
        return Err(Error::NotProjection(format!(
            "projection detected at c = {c} differs from the one at the smallest c"
        )));
    }
    let family_b: Vec<(f64, GeneralMatrix)> = scaling
        .c_values()
        .iter()
        .zip(&per_kappa)
        .map(|(&c, k)| (c, k.b.clone()))
        .collect();
    let generator = extract_g(&p_hat, &family_b)?;
    let discretization = verify_discretization_lemma(&family, scaling, t_grid, start)?;

    let kappas = step_condition
        .records
        .iter()
        .zip(&per_kappa)
        .zip(&generator.pbp_residuals)
        .map(|((step, k), (_, pbp))| {
            let recs = discretization.records.iter().filter(|r| r.c == step.c);
            let (tv, bound) = recs.fold((0.0f64, 0.0f64), |(tv, b), r| (tv.max(r.tv), b.max(r.bound)));
            KappaRecord {
                step: step.clone(),
                projection_residuals: k.projection.residuals.clone(),
                rounding_error: k.projection.rounding_error,
                pbp_residual: *pbp,
                tv,
                bound,
            }
        })
        .collect();

    Ok(LimitResult {
        g_hat: generator.g_hat.clone(),
        p_hat,
        step_condition,
        generator,
        discretization,
        kappas,
    })
}
