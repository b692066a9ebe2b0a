//! Monte Carlo sweeps over weights, SINR targets and channel draws.
//!
//! Realization `r` always uses the channel seed `base_seed + r`, so any
//! subset of a sweep can be rerun on its own. The SINR target does not enter
//! the draw, so every cell of a sweep sees the same channels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eh::{phi, psi, received_rf_power, theta, EhModel, LogisticParams, SensitivityParams};
use crate::error::{Error, Result};
use crate::network::{sample_instance, Counts, GenerationConfig, NetworkInstance, PowerLevels};
use crate::optimizer::{select, tau_profile, AlgorithmConfig, SolveResult, TauProfile};

/// Watts to the mW used in every CSV column.
const MW: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Model1,
    Model2,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiChoice {
    Robust,
    Perfect,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Model1,
    Model2,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Model1 => "model1",
            ModelKind::Model2 => "model2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CsiKind {
    Robust,
    Perfect,
}

impl CsiKind {
    pub fn label(self) -> &'static str {
        match self {
            CsiKind::Robust => "robust",
            CsiKind::Perfect => "perfect",
        }
    }
}

impl ModelChoice {
    pub fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::Model1 => vec![ModelKind::Model1],
            ModelChoice::Model2 => vec![ModelKind::Model2],
            ModelChoice::Both => vec![ModelKind::Model1, ModelKind::Model2],
        }
    }
}

impl CsiChoice {
    pub fn kinds(self) -> Vec<CsiKind> {
        match self {
            CsiChoice::Robust => vec![CsiKind::Robust],
            CsiChoice::Perfect => vec![CsiKind::Perfect],
            CsiChoice::Both => vec![CsiKind::Robust, CsiKind::Perfect],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub gamma_db: Vec<f64>,
    pub realizations: usize,
    pub model: ModelChoice,
    pub csi: CsiChoice,
    pub base_seed: u64,
    /// Fill `wall_time_ms`. Off by default because timings break
    /// byte-identical reruns.
    pub timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            gamma_db: (0..=8).map(|i| 5.0 * i as f64).collect(),
            realizations: 100,
            model: ModelChoice::Model1,
            csi: CsiChoice::Robust,
            base_seed: 1,
            timing: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.gamma_db.is_empty() {
            return Err(Error::Config("sweep needs at least one alpha and one gamma_db".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("sweep needs at least one realization".into()));
        }
        for &a in &self.alphas {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::OutOfRange { what: "sweep alpha", value: a });
            }
        }
        for &g in &self.gamma_db {
            if g.is_nan() || g == f64::INFINITY {
                return Err(Error::OutOfRange { what: "sweep gamma_db", value: g });
            }
        }
        if self.base_seed.checked_add(self.realizations as u64).is_none() {
            return Err(Error::Config("base_seed + realizations overflows".into()));
        }
        Ok(())
    }

    pub fn seed(&self, realization: usize) -> u64 {
        self.base_seed + realization as u64
    }
}

/// Everything but the sweep axes: how instances are drawn and solved.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Scenario {
    pub generation: GenerationConfig,
    pub counts: Counts,
    pub powers: PowerLevels,
    pub logistic: LogisticParams,
    pub sensitivity: SensitivityParams,
    pub algorithm: AlgorithmConfig,
}

impl Scenario {
    pub fn model(&self, kind: ModelKind) -> EhModel {
        match kind {
            ModelKind::Model1 => EhModel::Logistic(self.logistic),
            ModelKind::Model2 => EhModel::Sensitivity(self.sensitivity),
        }
    }

    pub fn instance(&self, seed: u64, gamma_db: f64, csi: CsiKind) -> Result<NetworkInstance> {
        let gen = GenerationConfig { seed, ..self.generation.clone() };
        let inst = sample_instance(&gen, self.counts, PowerLevels { gamma_db, ..self.powers })?;
        Ok(match csi {
            CsiKind::Robust => inst,
            CsiKind::Perfect => inst.perfect_csi(),
        })
    }
}

/// One solved (cell, realization). Powers in mW.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub alpha: f64,
    pub gamma_db: f64,
    pub realization: usize,
    pub model: ModelKind,
    pub csi: CsiKind,
    pub status: String,
    pub iterations: usize,
    pub trace_w: f64,
    pub harvested_psi_total: f64,
    pub harvested_phi_total: f64,
    /// Only for the sensitivity model.
    pub harvested_theta_total: Option<f64>,
    pub objective: f64,
    pub rank_ratio: f64,
    pub wall_time_ms: Option<f64>,
}

impl ResultRow {
    pub const HEADER: [&'static str; 14] = [
        "alpha",
        "gamma_db",
        "realization",
        "model",
        "csi",
        "status",
        "iterations",
        "trace_w",
        "harvested_psi_total",
        "harvested_phi_total",
        "harvested_theta_total",
        "objective",
        "rank_ratio",
        "wall_time_ms",
    ];

    pub fn is_optimal(&self) -> bool {
        self.status == "optimal"
    }

    /// Total harvested power under the row's own model (mW).
    pub fn harvested(&self) -> f64 {
        match self.model {
            ModelKind::Model1 => self.harvested_psi_total,
            ModelKind::Model2 => self.harvested_theta_total.unwrap_or(f64::NAN),
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.alpha),
            fmt_f64(self.gamma_db),
            self.realization.to_string(),
            self.model.label().to_string(),
            self.csi.label().to_string(),
            self.status.clone(),
            self.iterations.to_string(),
            fmt_f64(self.trace_w),
            fmt_f64(self.harvested_psi_total),
            fmt_f64(self.harvested_phi_total),
            self.harvested_theta_total.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.objective),
            fmt_f64(self.rank_ratio),
            self.wall_time_ms.map(fmt_f64).unwrap_or_default(),
        ]
    }

    fn key(&self) -> (f64, f64, usize, ModelKind, CsiKind) {
        (self.alpha, self.gamma_db, self.realization, self.model, self.csi)
    }
}

fn cmp_rows(a: &ResultRow, b: &ResultRow) -> std::cmp::Ordering {
    let (ka, kb) = (a.key(), b.key());
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.cmp(&kb.2))
        .then(ka.3.cmp(&kb.3))
        .then(ka.4.cmp(&kb.4))
}

/// Nine significant digits; `inf`, `-inf`, `NaN` spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

/// Mean and standard error of the mean; SE is 0 for fewer than 2 samples.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Means over the optimal realizations of one (alpha, gamma, model, csi) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub alpha: f64,
    pub gamma_db: f64,
    pub model: ModelKind,
    pub csi: CsiKind,
    pub realizations: usize,
    pub feasible: usize,
    pub mean_harvested: f64,
    pub se_harvested: f64,
    pub mean_trace_w: f64,
    pub se_trace_w: f64,
}

impl CellSummary {
    pub const HEADER: [&'static str; 10] = [
        "alpha",
        "gamma_db",
        "model",
        "csi",
        "realizations",
        "feasible",
        "mean_harvested",
        "se_harvested",
        "mean_trace_w",
        "se_trace_w",
    ];

    /// No feasible realization in this cell.
    pub fn flagged(&self) -> bool {
        self.feasible == 0
    }

    fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.alpha),
            fmt_f64(self.gamma_db),
            self.model.label().into(),
            self.csi.label().into(),
            self.realizations.to_string(),
            self.feasible.to_string(),
            fmt_f64(self.mean_harvested),
            fmt_f64(self.se_harvested),
            fmt_f64(self.mean_trace_w),
            fmt_f64(self.se_trace_w),
        ]
    }
}

pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut i = 0;
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then(a.gamma_db.total_cmp(&b.gamma_db))
            .then(a.model.cmp(&b.model))
            .then(a.csi.cmp(&b.csi))
    });
    while i < sorted.len() {
        let head = sorted[i];
        let same = |r: &ResultRow| {
            r.alpha == head.alpha && r.gamma_db == head.gamma_db && r.model == head.model && r.csi == head.csi
        };
        let end = i + sorted[i..].iter().take_while(|r| same(r)).count();
        let cell = &sorted[i..end];
        let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.is_optimal()).collect();
        let harvested: Vec<f64> = ok.iter().map(|r| r.harvested()).collect();
        let traces: Vec<f64> = ok.iter().map(|r| r.trace_w).collect();
        let (mean_harvested, se_harvested) = mean_se(&harvested);
        let (mean_trace_w, se_trace_w) = mean_se(&traces);
        out.push(CellSummary {
            alpha: head.alpha,
            gamma_db: head.gamma_db,
            model: head.model,
            csi: head.csi,
            realizations: cell.len(),
            feasible: ok.len(),
            mean_harvested,
            se_harvested,
            mean_trace_w,
            se_trace_w,
        });
        i = end;
    }
    out
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellSummary>,
    /// Channel digest per (gamma index, realization).
    pub digests: Vec<Vec<String>>,
}

impl SweepTable {
    pub fn flagged_cells(&self) -> Vec<&CellSummary> {
        self.cells.iter().filter(|c| c.flagged()).collect()
    }
}

/// Recomputes trace and harvested power straight from `W`.
fn recheck(res: &SolveResult, inst: &NetworkInstance, model: &EhModel) -> Result<()> {
    let tol = |x: f64| 1e-9 * x.abs().max(1e-6);
    if (res.w.trace() - res.trace_w).abs() > tol(res.trace_w) {
        return Err(Error::Solver(format!("trace mismatch {} vs {}", res.w.trace(), res.trace_w)));
    }
    for (k, h) in res.harvested.iter().enumerate() {
        let p = received_rf_power(&inst.g[k].mean, &inst.q_pe[k].mean, &res.w, &inst.w_p)?;
        let e = model.harvested(p);
        if (e - h.harvested).abs() > tol(h.harvested) {
            return Err(Error::Solver(format!("harvest mismatch at receiver {k}: {e} vs {}", h.harvested)));
        }
    }
    Ok(())
}

struct Unit {
    gamma_idx: usize,
    realization: usize,
    model: ModelKind,
    csi: CsiKind,
}

fn error_row(alpha: f64, gamma_db: f64, u: &Unit, msg: &str) -> ResultRow {
    log::error!("alpha {alpha} gamma {gamma_db} realization {}: {msg}", u.realization);
    ResultRow {
        alpha,
        gamma_db,
        realization: u.realization,
        model: u.model,
        csi: u.csi,
        status: "error".into(),
        iterations: 0,
        trace_w: f64::NAN,
        harvested_psi_total: f64::NAN,
        harvested_phi_total: f64::NAN,
        harvested_theta_total: None,
        objective: f64::NAN,
        rank_ratio: f64::NAN,
        wall_time_ms: None,
    }
}

fn make_row(sc: &Scenario, alpha: f64, gamma_db: f64, u: &Unit, res: &SolveResult, ms: Option<f64>) -> ResultRow {
    let received = res.received();
    ResultRow {
        alpha,
        gamma_db,
        realization: u.realization,
        model: u.model,
        csi: u.csi,
        status: res.status.as_str().into(),
        iterations: res.iterations,
        trace_w: res.trace_w * MW,
        harvested_psi_total: received.iter().map(|&p| psi(p, &sc.logistic)).sum::<f64>() * MW,
        harvested_phi_total: received.iter().map(|&p| phi(p, &sc.logistic)).sum::<f64>() * MW,
        harvested_theta_total: match u.model {
            ModelKind::Model1 => None,
            ModelKind::Model2 => Some(received.iter().map(|&p| theta(p, &sc.sensitivity)).sum::<f64>() * MW),
        },
        objective: res.objective * MW,
        rank_ratio: res.rank_ratio,
        wall_time_ms: ms,
    }
}

/// Runs one profile and selects every alpha from it.
fn run_unit(sc: &Scenario, spec: &SweepSpec, u: &Unit) -> Result<(Vec<ResultRow>, Vec<SolveResult>, String)> {
    let gamma_db = spec.gamma_db[u.gamma_idx];
    let inst = sc.instance(spec.seed(u.realization), gamma_db, u.csi)?;
    let digest = inst.channel_digest();
    let model = sc.model(u.model);
    let start = Instant::now();
    let needs_profile = spec.alphas.iter().any(|&a| a > 0.0);
    let profile = if needs_profile { tau_profile(&inst, &sc.algorithm, &model) } else { Ok(TauProfile { runs: vec![] }) };
    let profile_ms = start.elapsed().as_secs_f64() * 1e3 / spec.alphas.len() as f64;
    let mut rows = Vec::with_capacity(spec.alphas.len());
    let mut results = Vec::with_capacity(spec.alphas.len());
    for &alpha in &spec.alphas {
        let t = Instant::now();
        let res = match &profile {
            Ok(p) => select(&inst, &sc.algorithm, &model, p, alpha),
            Err(e) => Err(Error::Solver(e.to_string())),
        };
        let ms = spec.timing.then(|| profile_ms + t.elapsed().as_secs_f64() * 1e3);
        match res {
            Ok(res) => {
                recheck(&res, &inst, &model)?;
                rows.push(make_row(sc, alpha, gamma_db, u, &res, ms));
                results.push(res);
            }
            Err(e) => rows.push(error_row(alpha, gamma_db, u, &e.to_string())),
        }
    }
    Ok((rows, results, digest))
}

fn run_grid(sc: &Scenario, spec: &SweepSpec, models: &[ModelKind], csis: &[CsiKind]) -> Result<SweepTable> {
    spec.validate()?;
    for &m in models {
        sc.algorithm.validate(&sc.model(m))?;
    }
    let mut units = Vec::new();
    for gamma_idx in 0..spec.gamma_db.len() {
        for realization in 0..spec.realizations {
            for &model in models {
                for &csi in csis {
                    units.push(Unit { gamma_idx, realization, model, csi });
                }
            }
        }
    }
    let outputs: Vec<(usize, usize, Vec<ResultRow>, String)> = units
        .par_iter()
        .map(|u| run_unit(sc, spec, u).map(|(rows, _, d)| (u.gamma_idx, u.realization, rows, d)))
        .collect::<Result<_>>()?;
    let mut digests = vec![vec![String::new(); spec.realizations]; spec.gamma_db.len()];
    let mut rows = Vec::with_capacity(outputs.len() * spec.alphas.len());
    for (g, r, unit_rows, d) in outputs {
        let slot = &mut digests[g][r];
        if slot.is_empty() {
            *slot = d;
        } else if *slot != d {
            return Err(Error::Solver(format!("paired runs at gamma index {g}, realization {r} saw different channels")));
        }
        rows.extend(unit_rows);
    }
    rows.sort_by(cmp_rows);
    let cells = summarize(&rows);
    for c in cells.iter().filter(|c| c.flagged()) {
        log::warn!(
            "no feasible realization: alpha {} gamma {} dB {} {}",
            c.alpha,
            c.gamma_db,
            c.model.label(),
            c.csi.label()
        );
    }
    Ok(SweepTable { rows, cells, digests })
}

/// Weight/SINR tradeoff over the models and CSI modes selected in `spec`.
pub fn run_tradeoff_sweep(sc: &Scenario, spec: &SweepSpec) -> Result<SweepTable> {
    run_grid(sc, spec, &spec.model.kinds(), &spec.csi.kinds())
}

/// Paired difference `a - b` over realizations where both runs are optimal.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedCell {
    pub alpha: f64,
    pub gamma_db: f64,
    /// `model1-model2` or `perfect-robust`.
    pub comparison: String,
    /// The mode held fixed: a CSI label for model pairs, a model label for
    /// CSI pairs.
    pub held: String,
    pub pairs: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub se_diff: f64,
}

impl PairedCell {
    pub const HEADER: [&'static str; 9] =
        ["alpha", "gamma_db", "comparison", "held", "pairs", "mean_a", "mean_b", "mean_diff", "se_diff"];

    /// `a >= b` unless `a` falls short by more than `sigmas` standard errors.
    pub fn holds(&self, sigmas: f64) -> bool {
        self.pairs > 0 && self.mean_diff + sigmas * self.se_diff >= 0.0
    }

    fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.alpha),
            fmt_f64(self.gamma_db),
            self.comparison.clone(),
            self.held.clone(),
            self.pairs.to_string(),
            fmt_f64(self.mean_a),
            fmt_f64(self.mean_b),
            fmt_f64(self.mean_diff),
            fmt_f64(self.se_diff),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct CsiComparison {
    pub table: SweepTable,
    pub paired: Vec<PairedCell>,
}

fn paired_cell(rows: &[ResultRow], alpha: f64, gamma_db: f64, a: (ModelKind, CsiKind), b: (ModelKind, CsiKind)) -> PairedCell {
    let pick = |m: ModelKind, c: CsiKind| {
        let mut v: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.alpha == alpha && r.gamma_db == gamma_db && r.model == m && r.csi == c)
            .collect();
        v.sort_by_key(|r| r.realization);
        v
    };
    let (ra, rb) = (pick(a.0, a.1), pick(b.0, b.1));
    let mut xa = Vec::new();
    let mut xb = Vec::new();
    let mut diff = Vec::new();
    for (x, y) in ra.iter().zip(&rb) {
        debug_assert_eq!(x.realization, y.realization);
        if x.is_optimal() && y.is_optimal() {
            xa.push(x.harvested());
            xb.push(y.harvested());
            diff.push(x.harvested() - y.harvested());
        }
    }
    let (comparison, held) = if a.0 != b.0 {
        ("model1-model2", a.1.label())
    } else {
        ("perfect-robust", a.0.label())
    };
    let (mean_diff, se_diff) = mean_se(&diff);
    PairedCell {
        alpha,
        gamma_db,
        comparison: comparison.into(),
        held: held.into(),
        pairs: diff.len(),
        mean_a: mean_se(&xa).0,
        mean_b: mean_se(&xb).0,
        mean_diff,
        se_diff,
    }
}

/// Runs both models under both CSI modes on identical draws and reports
/// paired differences of the total harvested power per cell.
pub fn run_csi_comparison(sc: &Scenario, spec: &SweepSpec) -> Result<CsiComparison> {
    use CsiKind::*;
    use ModelKind::*;
    let table = run_grid(sc, spec, &[Model1, Model2], &[Robust, Perfect])?;
    let mut paired = Vec::new();
    for &alpha in &spec.alphas {
        for &gamma_db in &spec.gamma_db {
            for (a, b) in [
                ((Model1, Robust), (Model2, Robust)),
                ((Model1, Perfect), (Model2, Perfect)),
                ((Model1, Perfect), (Model1, Robust)),
                ((Model2, Perfect), (Model2, Robust)),
            ] {
                paired.push(paired_cell(&table.rows, alpha, gamma_db, a, b));
            }
        }
    }
    Ok(CsiComparison { table, paired })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub alpha: f64,
    pub seed: u64,
    pub m: usize,
    /// Objective at iteration `m`, mW.
    pub sigma: f64,
}

impl ConvergenceRow {
    pub const HEADER: [&'static str; 4] = ["alpha", "seed", "m", "sigma"];

    fn record(&self) -> Vec<String> {
        vec![fmt_f64(self.alpha), self.seed.to_string(), self.m.to_string(), fmt_f64(self.sigma)]
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `(alpha, seed, iterations)` for every optimal run.
    pub iterations: Vec<(f64, u64, usize)>,
    /// Runs that did not end optimal.
    pub failed: Vec<(f64, u64, String)>,
}

impl ConvergenceTable {
    /// Median iterations over all optimal runs (upper median).
    pub fn median_iterations(&self) -> Option<usize> {
        let mut v: Vec<usize> = self.iterations.iter().map(|t| t.2).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        Some(v[v.len() / 2])
    }

    /// Largest drop `Σ_{m-1} - Σ_m` over all traces, in mW.
    pub fn max_decrease(&self) -> f64 {
        self.rows
            .windows(2)
            .filter(|w| w[0].alpha == w[1].alpha && w[0].seed == w[1].seed && w[1].m == w[0].m + 1)
            .map(|w| w[0].sigma - w[1].sigma)
            .fold(0.0, f64::max)
    }
}

/// Objective trace of the selected grid point for every (seed, alpha),
/// under the scenario's robust instance and the given model.
pub fn run_convergence_trace(sc: &Scenario, seeds: &[u64], alphas: &[f64], gamma_db: f64, model: ModelKind) -> Result<ConvergenceTable> {
    let em = sc.model(model);
    sc.algorithm.validate(&em)?;
    let per_seed: Vec<Vec<(f64, u64, SolveResult)>> = seeds
        .par_iter()
        .map(|&seed| {
            let inst = sc.instance(seed, gamma_db, CsiKind::Robust)?;
            let profile = if alphas.iter().any(|&a| a > 0.0) {
                tau_profile(&inst, &sc.algorithm, &em)?
            } else {
                TauProfile { runs: vec![] }
            };
            alphas
                .iter()
                .map(|&a| select(&inst, &sc.algorithm, &em, &profile, a).map(|r| (a, seed, r)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<(f64, u64, SolveResult)> = per_seed.into_iter().flatten().collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut table = ConvergenceTable { rows: Vec::new(), iterations: Vec::new(), failed: Vec::new() };
    for (alpha, seed, res) in all {
        if !res.is_optimal() {
            table.failed.push((alpha, seed, res.status.as_str().into()));
            continue;
        }
        table.iterations.push((alpha, seed, res.iterations));
        for (m, s) in res.objective_trace.iter().enumerate() {
            table.rows.push(ConvergenceRow { alpha, seed, m: m + 1, sigma: s * MW });
        }
    }
    Ok(table)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_path(path)?)
}

fn write_csv<'a>(path: &Path, header: &[&str], records: impl Iterator<Item = Vec<String>> + 'a) -> Result<usize> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    let mut n = 0;
    for r in records {
        w.write_record(&r)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<usize> {
    write_csv(path, &ResultRow::HEADER, rows.iter().map(|r| r.record()))
}

pub fn write_cells(path: &Path, cells: &[CellSummary]) -> Result<usize> {
    write_csv(path, &CellSummary::HEADER, cells.iter().map(|c| c.record()))
}

pub fn write_paired(path: &Path, cells: &[PairedCell]) -> Result<usize> {
    write_csv(path, &PairedCell::HEADER, cells.iter().map(|c| c.record()))
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<usize> {
    write_csv(path, &ConvergenceRow::HEADER, rows.iter().map(|c| c.record()))
}

/// Run manifest: code version, seed, written files and the config echo.
pub fn write_manifest(path: &Path, config_echo: &str, base_seed: u64, files: &[(PathBuf, usize)]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "tool = {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "base_seed = {base_seed}");
    let _ = writeln!(s, "seed_scheme = base_seed + realization index");
    for (f, n) in files {
        let name = f.file_name().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(s, "file = {name} ({n} data rows)");
    }
    let _ = writeln!(s, "\n# config\n{config_echo}");
    fs::write(path, s)?;
    Ok(())
}
