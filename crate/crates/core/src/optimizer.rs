//! Outer search over harvested-power targets, inner successive convex
//! approximation over the linearization points, and rank-one beamformer
//! extraction.
//!
//! For `alpha < 1` every convex subproblem is solved with the normalized
//! objective `min Tr(W)`, which has the same minimizers as
//! `min (1 - alpha) Tr(W)`. The iterate sequence of a grid point therefore
//! does not depend on `alpha`, and a single [`TauProfile`] serves every
//! weight. `alpha = 1` replaces the vanishing power penalty by maximizing
//! the worst-case harvesting surplus.

use serde::{Deserialize, Serialize};

use crate::eh::{lambda_linearized, psi, EhModel};
use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, quadratic_form, rank_ratio, ComplexVector, HermitianMatrix};
use crate::network::NetworkInstance;
use crate::robust::{worst_case_quadratic, Sense, SlackValues};
use crate::sdp::{assemble_p4_with, solve, AssemblyOptions, SolverTolerances, Status, ACCEPT_RESIDUAL};

/// `W` with trace below this fraction of `p_max` is reported as exactly zero.
pub const ZERO_TRACE_FRACTION: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// One target shared by every energy receiver.
    Tied,
    /// Full K-fold product grid.
    Cartesian,
}

/// Initial linearization point of the logistic threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearizationInit {
    /// `(tau + M) / 2`
    Midpoint,
    /// `tau` itself: the threshold is exact from the first solve.
    Exact,
    /// `tau0` from the configuration.
    Fixed,
}

/// Channel realization used to update the linearization point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateChannel {
    /// Smallest received power over the uncertainty balls.
    WorstCase,
    Nominal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub alpha: f64,
    /// First grid target (W).
    pub tau0: f64,
    /// Grid spacing (W).
    pub step: f64,
    pub epsilon: f64,
    pub max_sca_iters: usize,
    pub grid_mode: GridMode,
    pub rank_tol: f64,
    pub linearization_init: LinearizationInit,
    pub update_channel: UpdateChannel,
    pub sinr_rescale: bool,
    pub solver: SolverTolerances,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        let m = crate::eh::LogisticParams::default().m;
        Self {
            alpha: 0.5,
            tau0: 0.001 * m,
            step: m / 20.0,
            epsilon: 1e-4,
            max_sca_iters: 30,
            grid_mode: GridMode::Tied,
            rank_tol: 1e-5,
            linearization_init: LinearizationInit::Midpoint,
            update_channel: UpdateChannel::WorstCase,
            sinr_rescale: false,
            solver: SolverTolerances::default(),
        }
    }
}

impl AlgorithmConfig {
    pub fn validate(&self, model: &EhModel) -> Result<()> {
        let m = model.saturation();
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::OutOfRange { what: "alpha", value: self.alpha });
        }
        if !(self.tau0 > 0.0 && self.tau0 < m) {
            return Err(Error::OutOfRange { what: "tau0", value: self.tau0 });
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::OutOfRange { what: "step", value: self.step });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::OutOfRange { what: "epsilon", value: self.epsilon });
        }
        if self.max_sca_iters == 0 {
            return Err(Error::OutOfRange { what: "max_sca_iters", value: 0.0 });
        }
        if !(self.rank_tol > 0.0) {
            return Err(Error::OutOfRange { what: "rank_tol", value: self.rank_tol });
        }
        let s = &self.solver;
        for (what, v) in [
            ("solver feasibility", s.feasibility),
            ("solver gap", s.gap),
            ("solver objective_scale", s.objective_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        if s.max_iterations == 0 {
            return Err(Error::OutOfRange { what: "solver max_iterations", value: 0.0 });
        }
        Ok(())
    }

    /// Targets `tau0, tau0 + step, ...` not exceeding `M - step`.
    pub fn grid_values(&self, m: f64) -> Vec<f64> {
        let last = m - self.step;
        (0..)
            .map(|i| self.tau0 + i as f64 * self.step)
            .take_while(|t| *t <= last + 1e-12 * m)
            .filter(|t| *t < m)
            .collect()
    }
}

/// Received RF power and the harvested power under the solving model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Harvest {
    pub received: f64,
    pub harvested: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: Status,
    pub w: HermitianMatrix,
    pub w_star: ComplexVector,
    /// `alpha * sum(tau) - (1 - alpha) Tr(W)`
    pub objective: f64,
    pub tau_star: Vec<f64>,
    /// Per energy receiver at the estimated channels.
    pub harvested: Vec<Harvest>,
    /// Per energy receiver at the worst channels in the uncertainty balls.
    pub harvested_worst: Vec<Harvest>,
    pub trace_w: f64,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub rank_ratio: f64,
    /// Received-power thresholds of the final subproblem.
    pub thresholds: Vec<Option<f64>>,
    pub slacks: Option<SlackValues>,
}

impl SolveResult {
    fn failed(inst: &NetworkInstance, status: Status, tau: Vec<f64>, iterations: usize) -> Self {
        let k = inst.k();
        Self {
            status,
            w: HermitianMatrix::zeros(inst.n_t),
            w_star: ComplexVector::zeros(inst.n_t),
            objective: f64::NAN,
            tau_star: tau,
            harvested: Vec::new(),
            harvested_worst: Vec::new(),
            trace_w: f64::NAN,
            iterations,
            objective_trace: Vec::new(),
            rank_ratio: f64::NAN,
            thresholds: vec![None; k],
            slacks: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn harvested_total(&self) -> f64 {
        self.harvested.iter().map(|h| h.harvested).sum()
    }

    pub fn harvested_worst_total(&self) -> f64 {
        self.harvested_worst.iter().map(|h| h.harvested).sum()
    }

    pub fn received(&self) -> Vec<f64> {
        self.harvested.iter().map(|h| h.received).collect()
    }
}

/// `w = sqrt(lambda_max) u_max`, phase-normalized so its largest entry is
/// real and positive.
pub fn extract_beamformer(w: &HermitianMatrix, rank_tol: f64) -> Result<ComplexVector> {
    let ratio = rank_ratio(w)?;
    if ratio > rank_tol {
        return Err(Error::RankTooHigh { ratio, tol: rank_tol });
    }
    Ok(principal_beamformer(w))
}

fn principal_beamformer(w: &HermitianMatrix) -> ComplexVector {
    let eig = eig_hermitian(w);
    let (lambda, u) = eig.largest();
    if lambda <= 0.0 {
        return ComplexVector::zeros(w.dim());
    }
    let pivot = u.entries().iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("non-empty");
    let phase = pivot.conj() / pivot.norm();
    let v: Vec<_> = u.entries().iter().map(|z| z * phase * lambda.sqrt()).collect();
    ComplexVector::new(v).expect("finite eigenvector")
}

/// Rank ratio of a solver-returned `W`, whose smallest eigenvalues may sit
/// slightly below zero within the acceptance residual.
fn solution_rank_ratio(w: &HermitianMatrix) -> f64 {
    let eig = eig_hermitian(w);
    let l = &eig.eigenvalues;
    let n = l.len();
    let lmax = l[n - 1];
    if lmax <= 0.0 || n == 1 {
        return 0.0;
    }
    if l[0] < -ACCEPT_RESIDUAL {
        return f64::INFINITY;
    }
    l[n - 2].max(0.0) / lmax
}

/// One convex subproblem solve of the SCA loop.
#[derive(Clone, Debug)]
struct Iterate {
    w: HermitianMatrix,
    slacks: SlackValues,
    thresholds: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunEnd {
    /// The previous iterate remains optimal after the update.
    Fixed,
    /// Last power decrease fell below the run tolerance.
    Converged,
    MaxIterations,
    Failed(Status),
}

/// Iterates of one grid point. `iterates` is empty when the first solve
/// failed.
#[derive(Clone, Debug)]
pub struct ScaRun {
    tau: Vec<f64>,
    iterates: Vec<Iterate>,
    end: RunEnd,
}

impl ScaRun {
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn is_feasible(&self) -> bool {
        !self.iterates.is_empty()
    }
}

fn worst_received(inst: &NetworkInstance, w: &HermitianMatrix, k: usize) -> Result<f64> {
    let g = &inst.g[k];
    let q = &inst.q_pe[k];
    Ok(worst_case_quadratic(w, &g.mean, g.radius, Sense::Min)?.value
        + worst_case_quadratic(&inst.w_p, &q.mean, q.radius, Sense::Min)?.value)
}

fn nominal_received(inst: &NetworkInstance, w: &HermitianMatrix, k: usize) -> Result<f64> {
    Ok(quadratic_form(w, &inst.g[k].mean)? + quadratic_form(&inst.w_p, &inst.q_pe[k].mean)?)
}

struct Subproblem<'a> {
    inst: &'a NetworkInstance,
    cfg: &'a AlgorithmConfig,
    model: &'a EhModel,
    tau: &'a [f64],
    surplus: bool,
}

impl Subproblem<'_> {
    fn solve(&self, tau_m: &[f64]) -> Result<std::result::Result<Iterate, Status>> {
        // alpha only selects the objective form here, see the module docs
        let alpha = if self.surplus { 1.0 } else { 0.0 };
        let opts = AssemblyOptions { sinr_rescale: self.cfg.sinr_rescale };
        let p4 = assemble_p4_with(self.inst, alpha, self.tau, tau_m, self.model, opts)?;
        let sol = solve(&p4.program, &self.cfg.solver)?;
        if sol.status != Status::Optimal {
            return Ok(Err(sol.status));
        }
        Ok(Ok(Iterate {
            w: p4.layout.w_value(&sol.x),
            slacks: p4.layout.slacks(&sol.x),
            thresholds: p4.layout.thresholds,
        }))
    }

    fn initial_points(&self) -> Vec<f64> {
        let m = self.model.saturation();
        self.tau
            .iter()
            .map(|&t| match self.cfg.linearization_init {
                LinearizationInit::Midpoint => 0.5 * (t + m),
                LinearizationInit::Exact => t,
                LinearizationInit::Fixed => self.cfg.tau0,
            })
            .collect()
    }

    /// Linearization points for the next round from the received power
    /// under `w`.
    fn update(&self, w: &HermitianMatrix) -> Result<Vec<f64>> {
        let EhModel::Logistic(params) = self.model else {
            return Ok(self.tau.to_vec());
        };
        (0..self.tau.len())
            .map(|k| {
                if self.tau[k] == 0.0 {
                    return Ok(self.tau[k]);
                }
                let p = match self.cfg.update_channel {
                    UpdateChannel::WorstCase => worst_received(self.inst, w, k)?,
                    UpdateChannel::Nominal => nominal_received(self.inst, w, k)?,
                };
                Ok(psi(p, params).clamp(f64::MIN_POSITIVE, params.m * (1.0 - 1e-12)))
            })
            .collect()
    }

    /// Runs until the power decrease is at most `tr_tol`.
    fn run(&self, tr_tol: f64) -> Result<ScaRun> {
        let mut tau_m = self.initial_points();
        let exact: Vec<f64> = self.tau.to_vec();
        let first = match self.solve(&tau_m)? {
            Ok(it) => Ok(it),
            Err(Status::Infeasible) if matches!(self.model, EhModel::Logistic(_)) && tau_m != exact => {
                // the exact threshold is the loosest linearization
                tau_m = exact;
                self.solve(&tau_m)?
            }
            Err(s) => Err(s),
        };
        let first = match first {
            Ok(it) => it,
            Err(s) => return Ok(ScaRun { tau: self.tau.to_vec(), iterates: Vec::new(), end: RunEnd::Failed(s) }),
        };
        let mut iterates = vec![first];
        if !matches!(self.model, EhModel::Logistic(_)) {
            return Ok(ScaRun { tau: self.tau.to_vec(), iterates, end: RunEnd::Fixed });
        }
        let EhModel::Logistic(params) = self.model else { unreachable!() };
        let end = loop {
            let last = iterates.last().expect("non-empty");
            let next_m = self.update(&last.w)?;
            if self.still_optimal(last, &next_m, params)? {
                break RunEnd::Fixed;
            }
            if iterates.len() >= self.cfg.max_sca_iters {
                break RunEnd::MaxIterations;
            }
            let next = match self.solve(&next_m)? {
                Ok(it) => it,
                Err(s) => break RunEnd::Failed(s),
            };
            let decrease = last.w.trace() - next.w.trace();
            iterates.push(next);
            if self.surplus || decrease <= tr_tol {
                break RunEnd::Converged;
            }
        };
        Ok(ScaRun { tau: self.tau.to_vec(), iterates, end })
    }

    /// The new thresholds are no looser than the current ones and the
    /// current `W` already meets them, so it solves the next subproblem.
    fn still_optimal(&self, it: &Iterate, next_m: &[f64], params: &crate::eh::LogisticParams) -> Result<bool> {
        for (k, old) in it.thresholds.iter().enumerate() {
            let Some(old) = *old else { continue };
            let new = lambda_linearized(self.tau[k], next_m[k], params)?;
            // rounding between the two threshold formulas is not loosening
            if new < old - 1e-12 * old.abs() {
                return Ok(false);
            }
            if worst_received(self.inst, &it.w, k)? < new - self.cfg.solver.feasibility * new.abs() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn objective_value(alpha: f64, tau: &[f64], trace: f64) -> f64 {
    alpha * tau.iter().sum::<f64>() - (1.0 - alpha) * trace
}

/// Turns a run into the result `sca_solve` returns for weight `alpha`.
fn finish(inst: &NetworkInstance, cfg: &AlgorithmConfig, model: &EhModel, run: &ScaRun, alpha: f64) -> Result<SolveResult> {
    if run.iterates.is_empty() {
        let status = match run.end {
            RunEnd::Failed(s) => s,
            _ => Status::Inaccurate,
        };
        return Ok(SolveResult::failed(inst, status, run.tau.clone(), 1));
    }
    let traces: Vec<f64> = run.iterates.iter().map(|it| it.w.trace()).collect();
    let sigma: Vec<f64> = traces.iter().map(|t| objective_value(alpha, &run.tau, *t)).collect();
    let stop = (1..sigma.len()).find(|&m| sigma[m] - sigma[m - 1] <= cfg.epsilon);
    let (last, mut status) = match (stop, run.end) {
        (Some(m), _) => (m, Status::Optimal),
        (None, RunEnd::Fixed | RunEnd::Converged) => (sigma.len() - 1, Status::Optimal),
        (None, RunEnd::MaxIterations) => (sigma.len() - 1, Status::Inaccurate),
        (None, RunEnd::Failed(_)) => (sigma.len() - 1, Status::Inaccurate),
    };
    let chosen = &run.iterates[last];
    let mut w = chosen.w.clone();
    if w.trace() <= ZERO_TRACE_FRACTION * inst.p_max {
        w = HermitianMatrix::zeros(inst.n_t);
    }
    let trace_w = w.trace();
    let (w_star, ratio) = if trace_w == 0.0 {
        (ComplexVector::zeros(inst.n_t), 0.0)
    } else {
        let ratio = solution_rank_ratio(&w);
        (principal_beamformer(&w), ratio)
    };
    // the rank-one property needs a positive power weight
    if ratio > cfg.rank_tol && status == Status::Optimal && alpha < 1.0 {
        log::warn!("rank ratio {ratio:.3e} exceeds {:.1e} at tau {:?}", cfg.rank_tol, run.tau);
        status = Status::Inaccurate;
    }
    let mut harvested = Vec::with_capacity(inst.k());
    let mut harvested_worst = Vec::with_capacity(inst.k());
    for k in 0..inst.k() {
        let p = nominal_received(inst, &w, k)?;
        harvested.push(Harvest { received: p, harvested: model.harvested(p) });
        let p = worst_received(inst, &w, k)?;
        harvested_worst.push(Harvest { received: p, harvested: model.harvested(p) });
    }
    Ok(SolveResult {
        status,
        objective: objective_value(alpha, &run.tau, trace_w),
        w,
        w_star,
        tau_star: run.tau.clone(),
        harvested,
        harvested_worst,
        trace_w,
        iterations: last + 1,
        objective_trace: sigma[..=last].to_vec(),
        rank_ratio: ratio,
        thresholds: chosen.thresholds.clone(),
        slacks: Some(chosen.slacks.clone()),
    })
}

fn check_inputs(inst: &NetworkInstance, cfg: &AlgorithmConfig, model: &EhModel) -> Result<()> {
    inst.validate()?;
    model.validate()?;
    cfg.validate(model)
}

fn run_point(
    inst: &NetworkInstance,
    cfg: &AlgorithmConfig,
    tau: &[f64],
    model: &EhModel,
    alpha: f64,
) -> Result<ScaRun> {
    let surplus = alpha >= 1.0;
    let tr_tol = if surplus { f64::INFINITY } else { cfg.epsilon / (1.0 - alpha) };
    Subproblem { inst, cfg, model, tau, surplus }.run(tr_tol)
}

/// Inner loop at fixed targets `tau` with weight `cfg.alpha`.
pub fn sca_solve(inst: &NetworkInstance, cfg: &AlgorithmConfig, tau: &[f64], model: &EhModel) -> Result<SolveResult> {
    check_inputs(inst, cfg, model)?;
    let run = run_point(inst, cfg, tau, model, cfg.alpha)?;
    finish(inst, cfg, model, &run, cfg.alpha)
}

/// SCA runs over the whole target grid, shared by every `alpha < 1`.
#[derive(Clone, Debug)]
pub struct TauProfile {
    pub runs: Vec<ScaRun>,
}

impl TauProfile {
    pub fn feasible_points(&self) -> usize {
        self.runs.iter().filter(|r| r.is_feasible()).count()
    }
}

fn grid_targets(cfg: &AlgorithmConfig, model: &EhModel, k: usize) -> Vec<Vec<f64>> {
    let values = cfg.grid_values(model.saturation());
    match cfg.grid_mode {
        GridMode::Tied => values.iter().map(|&t| vec![t; k]).collect(),
        GridMode::Cartesian => {
            let mut out = vec![Vec::new()];
            for _ in 0..k {
                out = out
                    .into_iter()
                    .flat_map(|prefix| {
                        values.iter().map(move |&t| {
                            let mut p = prefix.clone();
                            p.push(t);
                            p
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

/// Runs every grid point with the strictest (`alpha = 0`) stopping rule.
/// Targets dominating an infeasible target are skipped: raising any
/// target only raises its threshold.
pub fn tau_profile(inst: &NetworkInstance, cfg: &AlgorithmConfig, model: &EhModel) -> Result<TauProfile> {
    check_inputs(inst, cfg, model)?;
    let mut runs = Vec::new();
    let mut infeasible: Vec<Vec<f64>> = Vec::new();
    for tau in grid_targets(cfg, model, inst.k()) {
        if infeasible.iter().any(|bad| bad.iter().zip(&tau).all(|(b, t)| t >= b)) {
            continue;
        }
        let run = run_point(inst, cfg, &tau, model, 0.0)?;
        if run.end == RunEnd::Failed(Status::Infeasible) {
            infeasible.push(tau);
        } else {
            runs.push(run);
        }
    }
    Ok(TauProfile { runs })
}

/// `a` beats `b`: larger objective, ties within 1e-10 broken toward larger
/// total target, then smaller power.
fn better(a: &SolveResult, b: &SolveResult) -> bool {
    if (a.objective - b.objective).abs() > 1e-10 {
        return a.objective > b.objective;
    }
    let (sa, sb): (f64, f64) = (a.tau_star.iter().sum(), b.tau_star.iter().sum());
    if sa != sb {
        return sa > sb;
    }
    a.trace_w < b.trace_w
}

/// Best result for weight `alpha` given a profile of the same instance.
pub fn select(
    inst: &NetworkInstance,
    cfg: &AlgorithmConfig,
    model: &EhModel,
    profile: &TauProfile,
    alpha: f64,
) -> Result<SolveResult> {
    let mut cfg = *cfg;
    cfg.alpha = alpha;
    if alpha == 0.0 {
        // power minimization: no harvesting constraints at all
        let run = run_point(inst, &cfg, &vec![0.0; inst.k()], model, 0.0)?;
        return finish(inst, &cfg, model, &run, 0.0);
    }
    if alpha >= 1.0 {
        // the objective is the target sum: take the largest feasible target
        let mut feasible: Vec<&ScaRun> = profile.runs.iter().filter(|r| r.is_feasible()).collect();
        feasible.sort_by(|a, b| b.tau.iter().sum::<f64>().total_cmp(&a.tau.iter().sum::<f64>()));
        let mut fallback = None;
        for r in feasible {
            let run = run_point(inst, &cfg, &r.tau, model, 1.0)?;
            let res = finish(inst, &cfg, model, &run, 1.0)?;
            if res.is_optimal() {
                return Ok(res);
            }
            fallback.get_or_insert(res);
        }
        return Ok(fallback.unwrap_or_else(|| SolveResult::failed(inst, Status::Infeasible, vec![0.0; inst.k()], 1)));
    }
    let mut best: Option<SolveResult> = None;
    let mut fallback: Option<SolveResult> = None;
    for run in &profile.runs {
        let res = finish(inst, &cfg, model, run, alpha)?;
        if res.is_optimal() {
            if best.as_ref().is_none_or(|b| better(&res, b)) {
                best = Some(res);
            }
        } else if fallback.is_none() {
            fallback = Some(res);
        }
    }
    Ok(best
        .or(fallback)
        .unwrap_or_else(|| SolveResult::failed(inst, Status::Infeasible, vec![0.0; inst.k()], 1)))
}

/// Outer search over the target grid for `cfg.alpha`.
pub fn grid_search(inst: &NetworkInstance, cfg: &AlgorithmConfig, model: &EhModel) -> Result<SolveResult> {
    check_inputs(inst, cfg, model)?;
    if cfg.alpha == 0.0 {
        return select(inst, cfg, model, &TauProfile { runs: Vec::new() }, 0.0);
    }
    let profile = tau_profile(inst, cfg, model)?;
    select(inst, cfg, model, &profile, cfg.alpha)
}

/// Grid search under the sensitivity model; each grid point is one solve.
pub fn solve_model2(inst: &NetworkInstance, cfg: &AlgorithmConfig, model: &EhModel) -> Result<SolveResult> {
    if !matches!(model, EhModel::Sensitivity(_)) {
        return Err(Error::Config("solve_model2 needs the sensitivity model".into()));
    }
    grid_search(inst, cfg, model)
}
