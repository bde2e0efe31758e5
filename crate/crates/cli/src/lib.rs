//! Seeded experiment harness: parameter sweeps over the design schemes,
//! beampattern grids, mode-count statistics and an exhaustive small-instance
//! oracle.
//!
//! Trial `t` of a sweep uses channel seed `seed_base + t` for every scheme and
//! grid value, so schemes are compared on identical channel realizations.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use hris_core::bs_stage::{construct_beamformers, solve_p11};
use hris_core::metrics::{audit, gain_toward, BeamformingSolution};
use hris_core::model::{
    db_to_linear, dbm_to_watts, generate_channels, steering_vector, ChannelSet, RisConfiguration, SystemConfig,
};
use hris_core::optimizer::{run_scheme, RunOptions, RunStatus, Scheme, SolveTrace};
use hris_core::{HrisError, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Total element count; the grid is split as close to square as possible.
    N,
    /// RIS power budget in dBm.
    PRisMax,
    /// SINR threshold in dB, applied to every CU.
    Gamma,
    M,
    L,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::PRisMax => "p_ris_max_dbm",
            SweepParam::Gamma => "gamma_db",
            SweepParam::M => "m",
            SweepParam::L => "l",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(HrisError::InvalidConfig(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        let mut cfg = base.clone();
        match self {
            SweepParam::N => {
                let n = count()?;
                let ny = (1..=n).filter(|d| n % d == 0 && d * d <= n).max().unwrap_or(1);
                cfg.nx = n / ny;
                cfg.ny = ny;
            }
            SweepParam::PRisMax => cfg.p_ris_max = dbm_to_watts(value),
            SweepParam::Gamma => cfg.gamma = vec![db_to_linear(value); cfg.k()],
            SweepParam::M => cfg.m = count()?,
            SweepParam::L => {
                let l = count()?;
                let extra = extra_targets();
                if l > cfg.target_angles.len() + extra.len() {
                    return Err(HrisError::InvalidConfig(format!("at most {} targets supported", cfg.target_angles.len() + extra.len())));
                }
                let mut t = cfg.target_angles.clone();
                t.extend(extra);
                t.truncate(l);
                cfg.target_angles = t;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepParam {
    type Err = HrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(SweepParam::N),
            "p_ris_max" | "p_ris_max_dbm" | "pris" => Ok(SweepParam::PRisMax),
            "gamma" | "gamma_db" => Ok(SweepParam::Gamma),
            "m" => Ok(SweepParam::M),
            "l" => Ok(SweepParam::L),
            _ => Err(HrisError::InvalidConfig(format!("unknown sweep parameter '{s}'"))),
        }
    }
}

/// Targets appended when an L sweep exceeds the configured list, `(azimuth, elevation)` in radians.
fn extra_targets() -> Vec<(f64, f64)> {
    [(30.0, 45.0), (60.0, -30.0), (-45.0, -60.0), (15.0, 75.0)]
        .iter()
        .map(|&(a, e): &(f64, f64)| (a.to_radians(), e.to_radians()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: SystemConfig,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub seed_base: u64,
    pub options: RunOptions,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.trials == 0 || self.schemes.is_empty() {
            return Err(HrisError::InvalidConfig("sweep needs a nonempty grid, trials >= 1 and a scheme".into()));
        }
        for &v in &self.grid {
            self.param.apply(&self.base, v)?;
        }
        self.options.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    pub scheme: String,
    /// Audited objective (W); NaN when the run produced no iterate.
    pub objective: f64,
    pub converged: bool,
    pub status: String,
    pub iters: usize,
    pub active_count: usize,
    pub wall_time: f64,
}

/// Channels for seed `seed`, then the scheme with its randomization seeded alike.
pub fn run_trial(cfg: &SystemConfig, seed: u64, scheme: Scheme, opts: &RunOptions) -> Result<SolveTrace> {
    let ch = generate_channels(cfg, seed)?;
    run_scheme(scheme, cfg, &ch, &RunOptions { seed, ..*opts })
}

fn row_of(param: SweepParam, value: f64, trial: usize, seed: u64, scheme: Scheme, res: Result<SolveTrace>, t: f64) -> SweepRow {
    let mut row = SweepRow {
        param: param.name().into(),
        value,
        trial,
        seed,
        scheme: scheme.label(),
        objective: f64::NAN,
        converged: false,
        status: "error".into(),
        iters: 0,
        active_count: 0,
        wall_time: t,
    };
    if let Ok(tr) = res {
        row.objective = tr.objective.unwrap_or(f64::NAN);
        row.converged = tr.converged;
        row.status = serde_json::to_value(tr.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        row.iters = tr.iterations.len();
        row.active_count = tr.active_count().unwrap_or(0);
    }
    row
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| HrisError::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// One row per `(grid value, trial, scheme)`, in that order. Individual run
/// failures become rows with `converged = false`.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &value in &spec.grid {
        let cfg = spec.param.apply(&spec.base, value)?;
        for trial in 0..spec.trials {
            for &scheme in &spec.schemes {
                jobs.push((cfg.clone(), value, trial, scheme));
            }
        }
    }
    in_pool(spec.threads, || {
        jobs.par_iter()
            .map(|(cfg, value, trial, scheme)| {
                let seed = spec.seed_base + *trial as u64;
                let t0 = Instant::now();
                let res = run_trial(cfg, seed, *scheme, &spec.options);
                row_of(spec.param, *value, *trial, seed, *scheme, res, t0.elapsed().as_secs_f64())
            })
            .collect()
    })
}

/// Fixed column order. `wall_time` is appended only with `timing`, which keeps
/// the default output byte-identical across repeated runs.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["param", "value", "trial", "seed", "scheme", "objective", "converged", "status", "iters", "active_count"];
    if timing {
        header.push("wall_time");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.param.clone(),
            r.value.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.scheme.clone(),
            format!("{:e}", r.objective),
            r.converged.to_string(),
            r.status.clone(),
            r.iters.to_string(),
            r.active_count.to_string(),
        ];
        if timing {
            rec.push(format!("{:.3}", r.wall_time));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> HrisError {
    HrisError::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub param: String,
    pub value: f64,
    pub scheme: String,
    pub trials: usize,
    pub converged: usize,
    /// Mean and standard error over trials with a finite objective.
    pub mean: f64,
    pub stderr: f64,
    pub mean_active: f64,
}

/// Per `(value, scheme)` statistics, in first-appearance order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(v, s)| *v == r.value && *s == r.scheme) {
            keys.push((r.value, r.scheme.clone()));
        }
    }
    keys.into_iter()
        .map(|(value, scheme)| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.value == value && r.scheme == scheme).collect();
            let obj: Vec<f64> = sel.iter().map(|r| r.objective).filter(|x| x.is_finite()).collect();
            let (mean, stderr) = mean_stderr(&obj);
            SummaryRow {
                param: sel[0].param.clone(),
                value,
                scheme,
                trials: sel.len(),
                converged: sel.iter().filter(|r| r.converged).count(),
                mean,
                stderr,
                mean_active: sel.iter().map(|r| r.active_count as f64).sum::<f64>() / sel.len() as f64,
            }
        })
        .collect()
}

pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param", "value", "scheme", "trials", "converged", "mean", "stderr", "mean_active"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.param.clone(),
            r.value.to_string(),
            r.scheme.clone(),
            r.trials.to_string(),
            r.converged.to_string(),
            format!("{:e}", r.mean),
            format!("{:e}", r.stderr),
            r.mean_active.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `grid_res` equally spaced angles covering `[-90, 90]` degrees, endpoints
/// included so that whole-degree targets on a 2-degree lattice fall on nodes.
pub fn grid_angles(grid_res: usize) -> Vec<f64> {
    if grid_res == 1 {
        return vec![0.0];
    }
    (0..grid_res).map(|i| -FRAC_PI_2 + PI * i as f64 / (grid_res - 1) as f64).collect()
}

/// Beampattern normalized by its maximum; rows index azimuth, columns elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternGrid {
    pub angles: Vec<f64>,
    pub gain: DMatrix<f64>,
}

pub fn beampattern_grid(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    ris: &RisConfiguration,
    bf: &BeamformingSolution,
    grid_res: usize,
) -> BeampatternGrid {
    let angles = grid_angles(grid_res.max(1));
    let r = bf.total_covariance();
    let mut gain = DMatrix::from_fn(angles.len(), angles.len(), |i, j| {
        gain_toward(ch, ris, &r, &steering_vector(angles[i], angles[j], cfg))
    });
    let max = gain.max();
    if max > 0.0 {
        gain /= max;
    }
    BeampatternGrid { angles, gain }
}

impl BeampatternGrid {
    /// Grid index closest to an angle.
    pub fn index_of(&self, angle: f64) -> usize {
        let mut best = 0;
        for (i, &a) in self.angles.iter().enumerate() {
            if (a - angle).abs() < (self.angles[best] - angle).abs() {
                best = i;
            }
        }
        best
    }

    /// Local maxima over the 8-neighborhood, largest first. Plateaus report
    /// their first cell in row-major order.
    pub fn local_maxima(&self) -> Vec<(usize, usize, f64)> {
        let (nr, nc) = self.gain.shape();
        let mut out = Vec::new();
        for i in 0..nr {
            for j in 0..nc {
                let v = self.gain[(i, j)];
                let mut is_max = true;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if a < 0 || b < 0 || a >= nr as i64 || b >= nc as i64 {
                            continue;
                        }
                        let w = self.gain[(a as usize, b as usize)];
                        // Earlier cells win ties so a plateau yields one maximum.
                        let earlier = (di, dj) < (0, 0);
                        if w > v || (earlier && w == v) {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    out.push((i, j, v));
                }
            }
        }
        out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        out
    }

    /// Whether each of `targets` has one of the `targets.len()` largest local
    /// maxima within one cell in both angles.
    pub fn peaks_at(&self, targets: &[(f64, f64)]) -> bool {
        let peaks: Vec<(usize, usize, f64)> = self.local_maxima().into_iter().take(targets.len()).collect();
        targets.iter().all(|&(az, el)| {
            let (ti, tj) = (self.index_of(az), self.index_of(el));
            peaks.iter().any(|&(i, j, _)| i.abs_diff(ti) <= 1 && j.abs_diff(tj) <= 1)
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["azimuth_deg", "elevation_deg", "gain"]).map_err(csv_err)?;
        for (i, a) in self.angles.iter().enumerate() {
            for (j, e) in self.angles.iter().enumerate() {
                w.write_record([
                    format!("{:.4}", a.to_degrees()),
                    format!("{:.4}", e.to_degrees()),
                    format!("{:e}", self.gain[(i, j)]),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRatioRow {
    pub p_ris_max_dbm: f64,
    pub trials: usize,
    pub mean_active: f64,
    pub mean_passive: f64,
    /// `mean_active / mean_passive`; infinite when no element is passive.
    pub ratio: f64,
}

/// Mode statistics of the proposed scheme over a grid of RIS power budgets.
/// Runs without a final iterate count as all-passive.
pub fn active_ratio_sweep(
    cfg: &SystemConfig,
    p_ris_grid_dbm: &[f64],
    trials: usize,
    seed_base: u64,
    opts: &RunOptions,
) -> Result<Vec<ActiveRatioRow>> {
    let spec = SweepSpec {
        base: cfg.clone(),
        param: SweepParam::PRisMax,
        grid: p_ris_grid_dbm.to_vec(),
        trials,
        schemes: vec![Scheme::Proposed],
        seed_base,
        options: *opts,
        threads: None,
    };
    let rows = run_sweep(&spec)?;
    Ok(active_ratio_rows(&rows, cfg.n()))
}

/// Groups proposed-scheme sweep rows by value into mode statistics.
pub fn active_ratio_rows(rows: &[SweepRow], n: usize) -> Vec<ActiveRatioRow> {
    summarize(rows)
        .into_iter()
        .filter(|s| s.scheme == Scheme::Proposed.label())
        .map(|s| {
            let passive = n as f64 - s.mean_active;
            ActiveRatioRow {
                p_ris_max_dbm: s.value,
                trials: s.trials,
                mean_active: s.mean_active,
                mean_passive: passive,
                ratio: if passive > 0.0 { s.mean_active / passive } else { f64::INFINITY },
            }
        })
        .collect()
}

pub fn write_active_ratio_csv<W: Write>(rows: &[ActiveRatioRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p_ris_max_dbm", "trials", "mean_active", "mean_passive", "ratio"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.p_ris_max_dbm.to_string(),
            r.trials.to_string(),
            r.mean_active.to_string(),
            r.mean_passive.to_string(),
            r.ratio.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Which mode patterns the oracle enumerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleModes {
    All,
    PassiveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Best audited minimum beampattern gain (W).
    pub objective: f64,
    pub ris: RisConfiguration,
    pub beamforming: BeamformingSolution,
    pub candidates: usize,
    /// Candidates for which the BS subproblem was actually solved.
    pub solved: usize,
}

/// Exhaustive search over modes, phases `2 pi (i + 1) / phase_grid` and, for
/// active elements, amplitudes `beta_max (j + 1) / beta_grid`, solving the
/// convex BS subproblem for each configuration and auditing the result.
///
/// A configuration is skipped once `P0 min_l |h_l|^2`, an upper bound on its
/// subproblem value, cannot beat the incumbent; candidates are visited in
/// decreasing bound order, so the search is still exact over the grid.
pub fn brute_force_oracle(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    phase_grid: usize,
    beta_grid: usize,
    modes: OracleModes,
    tol_feas: f64,
) -> Result<Option<OracleResult>> {
    let n = cfg.n();
    if n > 3 {
        return Err(HrisError::InvalidConfig(format!("oracle supports N <= 3, got {n}")));
    }
    if phase_grid == 0 || beta_grid == 0 {
        return Err(HrisError::InvalidConfig("oracle grids need at least one point".into()));
    }
    let phases: Vec<f64> = (0..phase_grid).map(|i| TAU * (i + 1) as f64 / phase_grid as f64).collect();
    let betas: Vec<f64> = (0..beta_grid).map(|j| cfg.beta_max * (j + 1) as f64 / beta_grid as f64).collect();
    let masks: Vec<u32> = match modes {
        OracleModes::All => (0..1u32 << n).collect(),
        OracleModes::PassiveOnly => vec![0],
    };

    let mut cands: Vec<(f64, RisConfiguration)> = Vec::new();
    for &mask in &masks {
        let q: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let active: Vec<usize> = (0..n).filter(|&i| q[i]).collect();
        let n_phase = phase_grid.pow(n as u32);
        let n_beta = beta_grid.pow(active.len() as u32);
        for pi in 0..n_phase {
            let theta: Vec<f64> = (0..n).map(|i| phases[pi / phase_grid.pow(i as u32) % phase_grid]).collect();
            for bi in 0..n_beta {
                let mut beta = vec![1.0; n];
                for (r, &i) in active.iter().enumerate() {
                    beta[i] = betas[bi / beta_grid.pow(r as u32) % beta_grid];
                }
                let ris = RisConfiguration { q: q.clone(), beta, theta: theta.clone() };
                let bound = (0..cfg.l())
                    .map(|l| cfg.p0 * hris_core::metrics::cascaded_target_channel(ch, &ris, l).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                cands.push((bound, ris));
            }
        }
    }
    let total = cands.len();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));

    let solver = hris_conic::SolveOptions::default();
    let mut best: Option<OracleResult> = None;
    let mut solved = 0;
    for (bound, ris) in cands {
        if best.as_ref().is_some_and(|b| bound <= b.objective) {
            break;
        }
        solved += 1;
        let (sol, ctx) = solve_p11(cfg, ch, &ris, &solver)?;
        if !sol.is_optimal() {
            continue;
        }
        let Ok(bf) = construct_beamformers(cfg, &sol, &ctx) else { continue };
        let report = audit(cfg, ch, &ris, &bf, tol_feas)?;
        if !report.all_satisfied() {
            continue;
        }
        if best.as_ref().is_none_or(|b| report.objective > b.objective) {
            best = Some(OracleResult { objective: report.objective, ris, beamforming: bf, candidates: total, solved: 0 });
        }
    }
    Ok(best.map(|b| OracleResult { solved, ..b }))
}

/// The small instance used for oracle comparisons: two BS antennas, a 2x1
/// RIS, one CU and the first configured target.
pub fn small_instance(base: &SystemConfig) -> SystemConfig {
    let mut cfg = base.clone();
    cfg.m = 2;
    cfg.nx = 2;
    cfg.ny = 1;
    cfg.cu_pos.truncate(1);
    cfg.sigma2_cu.truncate(1);
    cfg.gamma.truncate(1);
    cfg.target_angles.truncate(1);
    cfg
}

/// Whether a finished trace can be trusted: converged and audited clean.
pub fn usable(tr: &SolveTrace) -> bool {
    tr.converged && tr.status == RunStatus::Converged && tr.report.as_ref().is_some_and(|r| r.all_satisfied())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(peaks: &[(usize, usize, f64)]) -> BeampatternGrid {
        let angles = grid_angles(11);
        let mut gain = DMatrix::from_element(11, 11, 0.1);
        for &(i, j, v) in peaks {
            gain[(i, j)] = v;
        }
        BeampatternGrid { angles, gain }
    }

    #[test]
    fn local_maxima_are_sorted_and_plateaus_count_once() {
        let g = grid_with(&[(2, 3, 0.5), (7, 8, 1.0), (7, 9, 1.0)]);
        let m = g.local_maxima();
        assert_eq!(&m[..2], &[(7, 8, 1.0), (2, 3, 0.5)]);
        assert!(m.iter().all(|&(i, j, _)| (i, j) != (7, 9)));
    }

    #[test]
    fn peaks_at_allows_one_cell_of_slack() {
        let g = grid_with(&[(2, 3, 0.5), (7, 8, 1.0)]);
        let a = |i: usize| g.angles[i];
        assert!(g.peaks_at(&[(a(3), a(3)), (a(7), a(7))]));
        assert!(!g.peaks_at(&[(a(4), a(3)), (a(7), a(8))]));
        assert_eq!(g.index_of(a(6) + 0.01), 6);
    }

    #[test]
    fn grid_endpoints_are_inclusive() {
        let a = grid_angles(91);
        assert_eq!(a[0], -FRAC_PI_2);
        assert_eq!(a[90], FRAC_PI_2);
        assert!((a[15].to_degrees() + 60.0).abs() < 1e-12);
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(mean_stderr(&[]).0.is_nan());
        assert!(mean_stderr(&[1.0]).1.is_nan());
    }
}
