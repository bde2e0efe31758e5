//! Alternating optimization between the BS and RIS subproblems, plus the
//! frozen-mode baseline schemes.
//!
//! Every decision (convergence, monotonicity, fallback) is taken on the
//! objective audited through [`crate::metrics`], never on relaxed values.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::time::Instant;

use hris_conic::SolveOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bs_stage::{construct_beamformers, solve_p11};
use crate::metrics::{audit, BeamformingSolution, ConstraintReport, Evaluator, DEFAULT_TOL_FEAS};
use crate::model::{ChannelSet, RisConfiguration, SystemConfig};
use crate::ris_stage::{
    build_p12_matrices, gaussian_randomize, round_modes, sca_solve, solve_p12_modes, Modes, P12Matrices,
    RandomizationDiagnostics, ScaOptions,
};
use crate::{HrisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Relative change of the audited objective below which the loop stops.
    pub eps_conv: f64,
    pub max_outer_iter: usize,
    pub max_init_retries: usize,
    pub l_gau: usize,
    pub sca: ScaOptions,
    pub seed: u64,
    /// Feasibility tolerance for randomization candidates and the final audit.
    pub tol_feas: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            eps_conv: 1e-3,
            max_outer_iter: 30,
            max_init_retries: 5,
            l_gau: 10_000,
            sca: ScaOptions::default(),
            seed: 0,
            tol_feas: DEFAULT_TOL_FEAS,
            solver_tol: 1e-7,
            solver_max_iter: 200,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_conv > 0.0) || self.max_outer_iter == 0 || self.l_gau == 0 {
            return Err(HrisError::InvalidConfig(
                "eps_conv must be positive and max_outer_iter, l_gau at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolveOptions {
        SolveOptions { tol: self.solver_tol, max_iter: self.solver_max_iter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Joint mode selection, the full alternating algorithm.
    Proposed,
    /// The first `n_a` elements active, the rest passive.
    FixedMode(usize),
    FullPassive,
    FullActive,
}

impl Scheme {
    /// Mode pattern for frozen schemes; `None` for [`Scheme::Proposed`].
    pub fn frozen_modes(&self, n: usize) -> Option<Vec<bool>> {
        match *self {
            Scheme::Proposed => None,
            Scheme::FixedMode(na) => Some((0..n).map(|i| i < na).collect()),
            Scheme::FullPassive => Some(vec![false; n]),
            Scheme::FullActive => Some(vec![true; n]),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Scheme::Proposed => "proposed".into(),
            Scheme::FixedMode(na) => format!("fixed_mode_{na}"),
            Scheme::FullPassive => "full_passive".into(),
            Scheme::FullActive => "full_active".into(),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = HrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "full_passive" => Ok(Scheme::FullPassive),
            "full_active" => Ok(Scheme::FullActive),
            _ => s
                .strip_prefix("fixed_mode_")
                .and_then(|n| n.parse().ok())
                .map(Scheme::FixedMode)
                .ok_or_else(|| HrisError::InvalidConfig(format!("unknown scheme '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// A later stage failed; the previous iterate was kept.
    Stalled,
    /// The BS subproblem was infeasible for every initialization.
    Infeasible,
    /// The final iterate did not pass the audit.
    AuditFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Audited objective after the BS update (W).
    pub rho_after_p11: f64,
    /// Audited objective after the RIS update (W); equals `rho_after_p11`
    /// when the RIS update was rejected.
    pub rho_after_p12: f64,
    /// Relaxed RIS-subproblem value before randomization (W).
    pub rho_relaxed: f64,
    pub binarity_gap: f64,
    pub ris_active_count: usize,
    pub inner_iterations: usize,
    pub ris_update_accepted: bool,
    pub randomization: RandomizationDiagnostics,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub scheme: Scheme,
    pub status: RunStatus,
    pub converged: bool,
    pub config_hash: String,
    pub channel_seed: u64,
    pub options: RunOptions,
    pub versions: BTreeMap<String, String>,
    pub init_attempts: usize,
    pub iterations: Vec<IterationRecord>,
    pub beamforming: Option<BeamformingSolution>,
    pub ris: Option<RisConfiguration>,
    pub report: Option<ConstraintReport>,
    /// Audited minimum beampattern gain of the final iterate (W).
    pub objective: Option<f64>,
    pub message: Option<String>,
    /// Seconds.
    pub wall_time: f64,
}

impl SolveTrace {
    /// Audited objective after each outer iteration.
    pub fn objective_history(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.rho_after_p12).collect()
    }

    pub fn active_count(&self) -> Option<usize> {
        self.ris.as_ref().map(RisConfiguration::active_count)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("hris-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("hris-conic".to_string(), hris_conic::VERSION.to_string()),
    ])
}

/// All-passive configuration with phases uniform on `(0, 2pi]`.
pub fn initialize(cfg: &SystemConfig, _ch: &ChannelSet, seed: u64) -> RisConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = (0..cfg.n()).map(|_| TAU * (1.0 - rng.random::<f64>())).collect();
    RisConfiguration::passive(theta)
}

/// Initial state of a scheme: the random-phase passive start with the scheme's
/// modes applied. Active elements share one amplitude, at most 1, chosen so
/// that the RIS power and target-noise rows use at most half their budgets
/// for any beamformer within the BS power budget, since
/// `(G R G^H)_nn <= P0 |g_n|^2`.
fn initial_state(scheme: Scheme, cfg: &SystemConfig, ch: &ChannelSet, seed: u64) -> RisConfiguration {
    let mut ris = initialize(cfg, ch, seed);
    if let Some(q) = scheme.frozen_modes(cfg.n()) {
        let active = || (0..cfg.n()).filter(|&i| q[i]);
        let power: f64 = active().map(|i| cfg.p0 * ch.g.row(i).norm_squared() + cfg.sigma2_ris).sum();
        let noise = active().count() as f64 * cfg.sigma2_ris;
        let mut b2 = 1.0f64;
        if power > 0.0 {
            b2 = b2.min(0.5 * cfg.p_ris_max / power);
        }
        if noise > 0.0 {
            b2 = b2.min(0.5 * cfg.xi_ris_max / noise);
        }
        for i in active() {
            ris.beta[i] = b2.sqrt();
        }
        ris.q = q;
    }
    ris
}

fn bs_update(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    solver: &SolveOptions,
) -> Result<Option<BeamformingSolution>> {
    let (sol, ctx) = solve_p11(cfg, ch, ris, solver)?;
    if !sol.is_optimal() {
        return Ok(None);
    }
    match construct_beamformers(cfg, &sol, &ctx) {
        Ok(bf) => Ok(Some(bf)),
        Err(HrisError::DegenerateCu(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn audited_objective(cfg: &SystemConfig, ch: &ChannelSet, ris: &RisConfiguration, bf: &BeamformingSolution) -> f64 {
    Evaluator::new(cfg, ch, bf).evaluate(&ris.phi(), &ris.q).min_gain()
}

struct RisUpdate {
    candidate: Option<RisConfiguration>,
    rho_relaxed: f64,
    binarity_gap: f64,
    inner_iterations: usize,
    randomization: RandomizationDiagnostics,
}

/// RIS stage of one outer iteration: relaxed or frozen solve, rounding, a
/// frozen re-solve at the rounded modes, then randomization.
fn ris_update(
    scheme: Scheme,
    cfg: &SystemConfig,
    ch: &ChannelSet,
    bf: &BeamformingSolution,
    opts: &RunOptions,
    iter: usize,
) -> Result<RisUpdate> {
    let solver = opts.solver();
    let mats = build_p12_matrices(cfg, ch, bf);
    let mut out = RisUpdate {
        candidate: None,
        rho_relaxed: f64::NAN,
        binarity_gap: 0.0,
        inner_iterations: 0,
        randomization: RandomizationDiagnostics::default(),
    };
    let ev = Evaluator::new(cfg, ch, bf);
    let seed = opts.seed ^ ((iter as u64 + 1) << 40);
    let Some(q) = scheme.frozen_modes(cfg.n()) else {
        return proposed_update(cfg, &mats, &ev, opts, seed, out);
    };
    let (_, sol) = solve_p12_modes(cfg, &mats, &Modes::Frozen(q.clone()), &solver)?;
    out.inner_iterations = 1;
    let Some(sol) = sol else { return Ok(out) };
    out.rho_relaxed = sol.rho_dd;
    let (cand, diag) = gaussian_randomize(&sol.v, &q, &ev, cfg, opts.l_gau, seed, opts.tol_feas);
    out.candidate = cand;
    out.randomization = diag;
    Ok(out)
}

/// SCA, then one frozen re-solve and randomization per distinct mode
/// candidate: the rounded SCA modes and the modes implied by the
/// unpenalized relaxed amplitudes. The better audited candidate wins, ties
/// going to the rounded modes.
fn proposed_update(
    cfg: &SystemConfig,
    mats: &P12Matrices,
    ev: &Evaluator,
    opts: &RunOptions,
    seed: u64,
    mut out: RisUpdate,
) -> Result<RisUpdate> {
    let solver = opts.solver();
    let Some(sca) = sca_solve(cfg, mats, &opts.sca, &solver)? else { return Ok(out) };
    out.inner_iterations = sca.inner_iterations;
    let (rounded, gap) = round_modes(&sca.solution.q);
    out.binarity_gap = gap;
    out.rho_relaxed = sca.solution.rho_dd;
    let mut mode_sets = vec![rounded];
    if sca.unpenalized_modes != mode_sets[0] {
        mode_sets.push(sca.unpenalized_modes);
    }
    let mut best: Option<(f64, Option<RisConfiguration>, RandomizationDiagnostics, f64)> = None;
    for q_hat in mode_sets {
        // Residual fractional q leaves V inconsistent with the chosen modes.
        let (_, frozen) = solve_p12_modes(cfg, mats, &Modes::Frozen(q_hat.clone()), &solver)?;
        out.inner_iterations += 1;
        let (v, rho) = match frozen {
            Some(f) => (f.v, f.rho_dd),
            None => (sca.solution.v.clone(), sca.solution.rho_dd),
        };
        let (cand, diag) = gaussian_randomize(&v, &q_hat, ev, cfg, opts.l_gau, seed, opts.tol_feas);
        let score = diag.selected_objective.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, cand, diag, rho));
        }
    }
    if let Some((_, cand, diag, rho)) = best {
        out.candidate = cand;
        out.randomization = diag;
        out.rho_relaxed = rho;
    }
    Ok(out)
}

/// The proposed joint design.
pub fn run_algorithm1(cfg: &SystemConfig, ch: &ChannelSet, opts: &RunOptions) -> Result<SolveTrace> {
    run_scheme(Scheme::Proposed, cfg, ch, opts)
}

/// A frozen-mode baseline; only the modes are fixed, amplitudes of active
/// elements stay design variables.
pub fn run_baseline(scheme: Scheme, cfg: &SystemConfig, ch: &ChannelSet, opts: &RunOptions) -> Result<SolveTrace> {
    run_scheme(scheme, cfg, ch, opts)
}

pub fn run_scheme(scheme: Scheme, cfg: &SystemConfig, ch: &ChannelSet, opts: &RunOptions) -> Result<SolveTrace> {
    cfg.validate()?;
    opts.validate()?;
    if let Scheme::FixedMode(na) = scheme {
        if na > cfg.n() {
            return Err(HrisError::InvalidConfig(format!("fixed_mode needs N_a <= N, got {na} > {}", cfg.n())));
        }
    }
    let start = Instant::now();
    let solver = opts.solver();
    let mut trace = SolveTrace {
        scheme,
        status: RunStatus::Infeasible,
        converged: false,
        config_hash: cfg.hash(),
        channel_seed: ch.seed,
        options: *opts,
        versions: versions(),
        init_attempts: 0,
        iterations: Vec::new(),
        beamforming: None,
        ris: None,
        report: None,
        objective: None,
        message: None,
        wall_time: 0.0,
    };

    let mut state = None;
    for attempt in 0..=opts.max_init_retries {
        trace.init_attempts = attempt + 1;
        let seed = opts.seed.wrapping_add(attempt as u64 * 0x9E37_79B9_7F4A_7C15);
        let ris = initial_state(scheme, cfg, ch, seed);
        if let Some(bf) = bs_update(cfg, ch, &ris, &solver)? {
            state = Some((ris, bf));
            break;
        }
    }
    let Some((mut ris, mut bf)) = state else {
        trace.message = Some(format!(
            "BS subproblem infeasible for all {} initializations",
            opts.max_init_retries + 1
        ));
        trace.wall_time = start.elapsed().as_secs_f64();
        return Ok(trace);
    };

    let mut prev = audited_objective(cfg, ch, &ris, &bf);
    trace.status = RunStatus::MaxIterations;
    for iter in 1..=opts.max_outer_iter {
        let t0 = Instant::now();
        if iter > 1 {
            match bs_update(cfg, ch, &ris, &solver)? {
                Some(b) => bf = b,
                None => {
                    trace.status = RunStatus::Stalled;
                    trace.message = Some(format!("BS subproblem failed at iteration {iter}; kept previous iterate"));
                    break;
                }
            }
        }
        let rho_p11 = audited_objective(cfg, ch, &ris, &bf);
        let upd = ris_update(scheme, cfg, ch, &bf, opts, iter)?;
        let mut rec = IterationRecord {
            iter,
            rho_after_p11: rho_p11,
            rho_after_p12: rho_p11,
            rho_relaxed: upd.rho_relaxed,
            binarity_gap: upd.binarity_gap,
            ris_active_count: ris.active_count(),
            inner_iterations: upd.inner_iterations,
            ris_update_accepted: false,
            randomization: upd.randomization,
            wall_time: 0.0,
        };
        let Some(cand) = upd.candidate else {
            rec.wall_time = t0.elapsed().as_secs_f64();
            trace.iterations.push(rec);
            trace.status = RunStatus::Stalled;
            trace.message = Some(format!("no feasible RIS update at iteration {iter}; kept previous iterate"));
            break;
        };
        let rho_cand = audited_objective(cfg, ch, &cand, &bf);
        if rho_cand >= rho_p11 {
            ris = cand;
            rec.rho_after_p12 = rho_cand;
            rec.ris_active_count = ris.active_count();
            rec.ris_update_accepted = true;
        }
        rec.wall_time = t0.elapsed().as_secs_f64();
        let cur = rec.rho_after_p12;
        trace.iterations.push(rec);
        if (cur - prev).abs() <= opts.eps_conv * prev.abs() {
            trace.status = RunStatus::Converged;
            break;
        }
        prev = cur;
    }

    let report = audit(cfg, ch, &ris, &bf, opts.tol_feas)?;
    if !report.all_satisfied() {
        let names: Vec<&str> = report.violations().map(|r| r.name.as_str()).collect();
        trace.message = Some(format!("final audit failed: {}", names.join(", ")));
        trace.status = RunStatus::AuditFailed;
    }
    trace.converged = trace.status == RunStatus::Converged;
    trace.objective = Some(report.objective);
    trace.report = Some(report);
    trace.ris = Some(ris);
    trace.beamforming = Some(bf);
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok(trace)
}
