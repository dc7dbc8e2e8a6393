//! Dispatch of a [`RunConfig`] to the library pipelines.

use std::io::Write;

use seedbank_core::diffusion::{
    sample_limit_jump, sample_two_island_limit, simulate_em_replicates, trajectory_csv, DiffusionModel,
    DiffusionState, EmConfig, JumpState, Trajectory, TrajectoryMeta,
};
use seedbank_core::duality::{
    chain_convergence_tv, chain_convergence_tv_joint, verify_limit_duality, verify_prelimit_duality, MomentGrid,
    SparkReport, DEFAULT_BIAS_ALLOWANCE,
};
use seedbank_core::markov::{replicate_map, GeneralMatrix, SpaceMatrix, StateSpace};
use seedbank_core::models::{
    ancient_g, blockcounting_q, coalescence_step, imbalanced_ghat, limit_b, projection_p, restricted_gbar,
    structured_q, DegenerateSemigroup, InitialBlocks, SeedbankParams,
};
use seedbank_core::report::{fmt_real, CsvTable};
use seedbank_core::timescale::{run_pipeline, ScalingSequence};
use seedbank_core::Error;

use crate::config::{CommandKind, MatrixKind, ModelKind, RunConfig};

pub const CLI_BUILD: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

const DEFAULT_C_LIST: [f64; 4] = [0.2, 0.1, 0.05, 0.02];
const DEFAULT_SPARK_C_LIST: [f64; 3] = [0.2, 0.1, 0.05];
const PROJECTION_C_GRID: [f64; 3] = [10.0, 40.0, 160.0];
const ROW_TOL: f64 = 1e-10;
const ENTRY_TOL: f64 = 1e-12;

/// Result of a completed run: the table to write and whether every check passed.
pub struct Outcome {
    pub table: CsvTable,
    pub pass: bool,
    pub summary: String,
}

#[derive(Debug)]
pub enum RunError {
    /// Bad parameter combination, exit code 2.
    Usage(String),
    /// The computation itself failed, exit code 1.
    Failed(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Failed(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Failed(m) => m,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::StepBudget { .. } | Error::StateOutsideSpace(_) => {
                Self::Usage(e.to_string())
            }
            other => Self::Failed(other.to_string()),
        }
    }
}

type RunResult = Result<Outcome, RunError>;

fn usage<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Usage(msg.into()))
}

fn require_c(cfg: &RunConfig) -> Result<f64, RunError> {
    cfg.c.ok_or_else(|| RunError::Usage(format!("{} needs c", cfg.command)))
}

fn require_seedbank(cfg: &RunConfig) -> Result<(), RunError> {
    if cfg.model == ModelKind::TwoIsland {
        return usage(format!("{} supports only the seedbank model", cfg.command));
    }
    Ok(())
}

fn init_blocks(cfg: &RunConfig, default: (usize, usize)) -> Result<InitialBlocks, RunError> {
    Ok(InitialBlocks::new(cfg.n0.unwrap_or(default.0), cfg.m0.unwrap_or(default.1))?)
}

fn times(cfg: &RunConfig, default: &[f64]) -> Vec<f64> {
    cfg.t_list.clone().unwrap_or_else(|| default.to_vec())
}

pub fn run(cfg: &RunConfig) -> RunResult {
    match cfg.command {
        CommandKind::Rates => rates(cfg),
        CommandKind::LimitChain => limit_chain(cfg),
        CommandKind::Timescale => timescale(cfg),
        CommandKind::Simulate => simulate(cfg),
        CommandKind::Duality => duality(cfg),
        CommandKind::Converge => converge(cfg),
        CommandKind::Spark => spark(cfg),
    }
}

/// Header plus metadata and table, as written to the output.
pub fn render(cfg: &RunConfig, table: &CsvTable) -> String {
    let mut out = String::new();
    for (k, v) in cfg.metadata() {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str(&format!("# cli_build={CLI_BUILD}\n"));
    out.push_str(&table.render());
    out
}

/// Writes the rendered output to `--out` or stdout.
pub fn emit(cfg: &RunConfig, table: &CsvTable) -> Result<(), RunError> {
    let text = render(cfg, table);
    match &cfg.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| RunError::Failed(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| RunError::Failed(format!("cannot write stdout: {e}"))),
    }
}

fn matrix_table(space: &StateSpace, t: Option<f64>) -> CsvTable {
    let mut cols = Vec::new();
    if t.is_some() {
        cols.push("t".to_string());
    }
    cols.push("state".to_string());
    cols.extend(space.iter().map(|s| s.to_string()));
    CsvTable::new(cols)
}

fn push_matrix(table: &mut CsvTable, m: &impl SpaceMatrix, t: Option<f64>) {
    for (i, s) in m.space().iter().enumerate() {
        let mut row = Vec::new();
        if let Some(t) = t {
            row.push(fmt_real(t));
        }
        row.push(s.to_string());
        row.extend(m.entries().row(i).iter().map(|v| fmt_real(*v)));
        table.push_row(row);
    }
}

fn rates(cfg: &RunConfig) -> RunResult {
    let init = init_blocks(cfg, (3, 2))?;
    let m: GeneralMatrix = match cfg.matrix {
        MatrixKind::Q => {
            let params = SeedbankParams::new(require_c(cfg)?, cfg.k)?;
            match cfg.model {
                ModelKind::Seedbank => blockcounting_q(&params, &init)?.into_general(),
                ModelKind::TwoIsland => {
                    let a = cfg
                        .alpha_prime
                        .ok_or_else(|| RunError::Usage("the two-island model needs alpha-prime".into()))?;
                    structured_q(&params.with_alpha_prime(a)?, &init)?.into_general()
                }
            }
        }
        MatrixKind::P => projection_p(&init),
        MatrixKind::G => ancient_g(&init, cfg.k)?,
        MatrixKind::B => limit_b(&init, cfg.k)?,
        MatrixKind::Ghat => imbalanced_ghat(&init, cfg.k)?,
        MatrixKind::Gbar => restricted_gbar(cfg.k, init.total().max(1))?.rates.into_general(),
    };
    let mut table = matrix_table(m.space(), None);
    push_matrix(&mut table, &m, None);
    Ok(Outcome {
        summary: format!("rates: {} matrix on {} states", cfg.matrix, m.space().len()),
        table,
        pass: true,
    })
}

fn limit_chain(cfg: &RunConfig) -> RunResult {
    let init = init_blocks(cfg, (3, 2))?;
    let sg = match cfg.model {
        ModelKind::Seedbank => DegenerateSemigroup::ancient(&init, cfg.k)?,
        ModelKind::TwoIsland => DegenerateSemigroup::imbalanced(&init, cfg.k)?,
    };
    let mut table = matrix_table(sg.space(), Some(0.0));
    let mut defect = 0.0f64;
    let mut min_entry = f64::INFINITY;
    for t in times(cfg, &[1.0]) {
        let pi = sg.at(t)?;
        defect = defect.max(pi.max_row_defect());
        min_entry = min_entry.min(pi.min_entry());
        push_matrix(&mut table, &pi, Some(t));
    }
    let pass = defect <= ROW_TOL && min_entry >= -ENTRY_TOL;
    Ok(Outcome {
        summary: format!("limit-chain: max row defect {defect:.3e}, min entry {min_entry:.3e}"),
        table,
        pass,
    })
}

fn timescale(cfg: &RunConfig) -> RunResult {
    if cfg.alpha_prime.is_some() {
        return usage("timescale ties alpha-prime to c; do not set alpha-prime");
    }
    let c_list = cfg.c_list.clone().unwrap_or_else(|| DEFAULT_C_LIST.to_vec());
    let scaling = ScalingSequence::seedbank(c_list.clone())?;
    let k = cfg.k;
    let fast = |space: &StateSpace, c: f64| coalescence_step(space, c);
    let t_grid = times(cfg, &[0.5, 1.0, 2.0]);
    let (result, target, init) = match cfg.model {
        ModelKind::Seedbank => {
            let init = init_blocks(cfg, (3, 2))?;
            let family = move |c: f64| blockcounting_q(&SeedbankParams::new(c, k)?, &init);
            let r = run_pipeline(family, &fast, &scaling, &PROJECTION_C_GRID, &t_grid, init.start());
            (r, ancient_g(&init, k)?, init)
        }
        ModelKind::TwoIsland => {
            let init = init_blocks(cfg, (2, 2))?;
            let family = move |c: f64| structured_q(&SeedbankParams::new(c, k)?.with_alpha_prime(c)?, &init);
            let r = run_pipeline(family, &fast, &scaling, &PROJECTION_C_GRID, &t_grid, init.start());
            (r, imbalanced_ghat(&init, k)?, init)
        }
    };
    let result = result?;
    let c_min = *c_list.last().expect("validated non-empty");
    let p_exact = result.p_hat == projection_p(&init);
    let g_err = result.g_hat.max_abs_diff(&target)?;
    let pass = result.certified() && p_exact && g_err <= 5.0 * c_min;
    Ok(Outcome {
        summary: format!(
            "timescale: certified {}, P exact {p_exact}, max |G_hat - G| {g_err:.3e} (limit {:.3e})",
            result.certified(),
            5.0 * c_min
        ),
        table: result.to_csv(&PROJECTION_C_GRID),
        pass,
    })
}

fn simulate(cfg: &RunConfig) -> RunResult {
    let grid = times(cfg, &[1.0]);
    let horizon = *grid.last().expect("validated non-empty");
    let (paths, meta): (Vec<Trajectory>, TrajectoryMeta) = if cfg.limit {
        let start = JumpState::from_frequencies(cfg.x0.unwrap_or(0.0), cfg.y0.unwrap_or(0.5))?;
        let (k, h) = (cfg.k, cfg.h);
        match cfg.model {
            ModelKind::Seedbank => {
                let paths = replicate_map(cfg.seed, cfg.replicates, |_, rng| {
                    sample_limit_jump(start, k, horizon, rng).map(|p| p.on_grid(&grid))
                });
                let meta = TrajectoryMeta {
                    c: None,
                    k,
                    h: None,
                    seed: cfg.seed,
                    scheme: "exact-jump-limit".into(),
                };
                (paths.into_iter().collect::<Result<_, _>>()?, meta)
            }
            ModelKind::TwoIsland => {
                let sigma = cfg.alpha_prime.unwrap_or(1.0);
                let em = EmConfig::new(h, horizon, grid.clone())?;
                let paths = replicate_map(cfg.seed, cfg.replicates, |_, rng| {
                    sample_two_island_limit(start, k, sigma, &em, rng).map(|p| p.trajectory)
                });
                let meta = TrajectoryMeta {
                    c: None,
                    k,
                    h: Some(h),
                    seed: cfg.seed,
                    scheme: "two-island-limit-thinning".into(),
                };
                (paths.into_iter().collect::<Result<_, _>>()?, meta)
            }
        }
    } else {
        let c = require_c(cfg)?;
        let model = match cfg.model {
            ModelKind::Seedbank => DiffusionModel::seedbank(c, cfg.k)?,
            ModelKind::TwoIsland => {
                let a = cfg
                    .alpha_prime
                    .ok_or_else(|| RunError::Usage("the two-island model needs alpha-prime".into()))?;
                DiffusionModel::two_island(c, cfg.k, a)?
            }
        }
        .with_boundary(cfg.boundary);
        let start = DiffusionState::new(cfg.x0.unwrap_or(0.5), cfg.y0.unwrap_or(0.5))?;
        let em = EmConfig::new(cfg.h, horizon, grid)?;
        let paths = simulate_em_replicates(&model, start, &em, cfg.seed, cfg.replicates);
        let meta = TrajectoryMeta {
            c: Some(c),
            k: cfg.k,
            h: Some(cfg.h),
            seed: cfg.seed,
            scheme: model.scheme(),
        };
        (paths, meta)
    };
    Ok(Outcome {
        summary: format!("simulate: {} paths, scheme {}", paths.len(), meta.scheme),
        table: trajectory_csv(&meta, &paths),
        pass: true,
    })
}

fn exponents(max: usize) -> Vec<usize> {
    (0..=max).collect()
}

fn duality(cfg: &RunConfig) -> RunResult {
    require_seedbank(cfg)?;
    let single = (cfg.x0.is_some() || cfg.y0.is_some()).then(|| (cfg.x0.unwrap_or(0.5), cfg.y0.unwrap_or(0.5)));
    let report = if cfg.limit {
        let points = single.map_or_else(|| vec![(0.0, 0.7), (1.0, 0.3)], |p| vec![p]);
        let grid = MomentGrid::product(
            &exponents(cfg.n0.unwrap_or(1)),
            &exponents(cfg.m0.unwrap_or(2)),
            points,
            times(cfg, &[0.5, 2.0]),
        )?;
        verify_limit_duality(cfg.k, &grid, cfg.replicates, cfg.seed)?
    } else {
        let points = single.map_or_else(|| vec![(0.5, 0.5), (0.3, 0.9)], |p| vec![p]);
        let grid = MomentGrid::product(
            &exponents(cfg.n0.unwrap_or(2)),
            &exponents(cfg.m0.unwrap_or(2)),
            points,
            times(cfg, &[0.1, 1.0]),
        )?;
        let bias = cfg.bias.unwrap_or(DEFAULT_BIAS_ALLOWANCE);
        verify_prelimit_duality(require_c(cfg)?, cfg.k, &grid, cfg.h, cfg.replicates, cfg.seed, bias)?
    };
    let total = report.cells.len();
    Ok(Outcome {
        summary: format!("duality: {}/{total} cells pass", total - report.failures()),
        pass: report.all_pass(),
        table: report.to_csv(),
    })
}

fn converge(cfg: &RunConfig) -> RunResult {
    require_seedbank(cfg)?;
    let init = init_blocks(cfg, (3, 2))?;
    let c_list = cfg.c_list.clone().unwrap_or_else(|| DEFAULT_C_LIST.to_vec());
    let report = if cfg.joint {
        match times(cfg, &[0.5, 1.5])[..] {
            [t1, t2] => chain_convergence_tv_joint(&c_list, cfg.k, &init, t1, t2)?,
            _ => return usage("joint convergence needs exactly two times"),
        }
    } else {
        chain_convergence_tv(&c_list, cfg.k, &init, &times(cfg, &[0.5, 1.0, 2.0]))?
    };
    Ok(Outcome {
        summary: format!(
            "converge: monotone {}, largest TV at the smallest c {:.3e}",
            report.monotone(),
            report.final_tv()
        ),
        pass: report.monotone(),
        table: report.to_csv(),
    })
}

fn spark(cfg: &RunConfig) -> RunResult {
    require_seedbank(cfg)?;
    let c_list = cfg.c_list.clone().unwrap_or_else(|| DEFAULT_SPARK_C_LIST.to_vec());
    let horizon = match times(cfg, &[1.0])[..] {
        [t] => t,
        _ => return usage("spark takes a single horizon t"),
    };
    let report = SparkReport::run(&c_list, cfg.k, horizon, cfg.replicates, cfg.seed)?;
    let (occ, exc) = (report.occupation_decreasing(), report.excursions_stable());
    Ok(Outcome {
        summary: format!("spark: occupation decreasing {occ}, excursions stable {exc}"),
        pass: occ && exc,
        table: report.to_csv(),
    })
}
