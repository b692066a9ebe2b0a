//! Solver-agnostic conic programs, assembly of the robust beamforming
//! program, and the Clarabel backend.
//!
//! Programs are in minimization form over a flat real vector `x`. Hermitian
//! matrix variables are expanded into real coordinates (see
//! [`HermitianVar`]); complex PSD blocks reach the solver through the real
//! embedding `[[Re, -Im], [Im, Re]]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::eh::{lambda_linearized, theta_inverse, EhModel};
use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, real_embedding, HermitianMatrix};
use crate::network::NetworkInstance;
use crate::robust::{
    lmi_eh_interference, lmi_eh_signal, lmi_interference, lmi_sinr, HermitianVar, LmiBlock, SlackValues, VarIndex,
};

/// Solutions reported optimal must satisfy every block and inequality to
/// this absolute tolerance, otherwise they are downgraded to inaccurate.
pub const ACCEPT_RESIDUAL: f64 = 1e-7;

/// KKT static regularization. The backend default of 1e-8 stalls on
/// near-infeasible targets with numerical errors instead of certificates.
const STATIC_REGULARIZATION: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Free,
    Nonnegative,
    /// Hermitian matrix variables only.
    Psd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Hermitian { dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VarKind,
    pub domain: Domain,
    pub offset: usize,
}

impl VariableDecl {
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Scalar => 1,
            VarKind::Hermitian { dim } => dim * dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `sum_i coeffs_i x_i <= rhs`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearInequality {
    pub label: String,
    pub coeffs: Vec<(VarIndex, f64)>,
    pub rhs: f64,
}

impl LinearInequality {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().map(|(i, a)| a * x[i.0]).sum();
        (lhs - self.rhs).max(0.0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub variables: Vec<VariableDecl>,
    /// Minimized: `sum_i c_i x_i + objective_constant`.
    pub objective: Vec<(VarIndex, f64)>,
    pub objective_constant: f64,
    pub blocks: Vec<LmiBlock>,
    pub inequalities: Vec<LinearInequality>,
}

impl ConicProgram {
    pub fn num_real(&self) -> usize {
        self.variables.iter().map(|v| v.offset + v.len()).max().unwrap_or(0)
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, domain: Domain) -> VarIndex {
        assert!(domain != Domain::Psd, "scalar variables cannot be PSD");
        let offset = self.num_real();
        self.variables.push(VariableDecl { name: name.into(), kind: VarKind::Scalar, domain, offset });
        VarIndex(offset)
    }

    pub fn add_hermitian(&mut self, name: impl Into<String>, dim: usize, domain: Domain) -> HermitianVar {
        assert!(domain != Domain::Nonnegative, "matrix variables are free or PSD");
        let offset = self.num_real();
        self.variables.push(VariableDecl { name: name.into(), kind: VarKind::Hermitian { dim }, domain, offset });
        HermitianVar { offset, dim }
    }

    pub fn count_scalars(&self, domain: Domain) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Scalar && v.domain == domain).count()
    }

    pub fn psd_variables(&self) -> impl Iterator<Item = HermitianVar> + '_ {
        self.variables.iter().filter_map(|v| match (v.kind, v.domain) {
            (VarKind::Hermitian { dim }, Domain::Psd) => Some(HermitianVar { offset: v.offset, dim }),
            _ => None,
        })
    }

    /// Every referenced index is declared and every coefficient is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_real();
        let mut covered = vec![false; n];
        for v in &self.variables {
            for slot in &mut covered[v.offset..v.offset + v.len()] {
                if *slot {
                    return Err(Error::Config(format!("variable {} overlaps another", v.name)));
                }
                *slot = true;
            }
        }
        let check_idx = |i: VarIndex| {
            if i.0 < n && covered[i.0] {
                Ok(())
            } else {
                Err(Error::Config(format!("undeclared variable index {}", i.0)))
            }
        };
        for (i, c) in &self.objective {
            check_idx(*i)?;
            if !c.is_finite() {
                return Err(Error::NonFinite("objective"));
            }
        }
        if !self.objective_constant.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        for b in &self.blocks {
            for (i, _) in &b.terms {
                check_idx(*i)?;
            }
        }
        for q in &self.inequalities {
            for (i, a) in &q.coeffs {
                check_idx(*i)?;
                if !a.is_finite() {
                    return Err(Error::NonFinite("inequality"));
                }
            }
            if !q.rhs.is_finite() {
                return Err(Error::NonFinite("inequality"));
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|(i, c)| c * x[i.0]).sum::<f64>()
    }

    /// Largest violation over sign constraints, PSD variables, blocks and
    /// inequalities, evaluated on the complex data.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for v in &self.variables {
            match (v.kind, v.domain) {
                (VarKind::Scalar, Domain::Nonnegative) => worst = worst.max(-x[v.offset]),
                (VarKind::Hermitian { dim }, Domain::Psd) => {
                    let w = HermitianVar { offset: v.offset, dim }.unpack(x);
                    worst = worst.max(-w.min_eigenvalue());
                }
                _ => {}
            }
        }
        for b in &self.blocks {
            worst = worst.max(-b.min_eigenvalue_at(x));
        }
        for q in &self.inequalities {
            worst = worst.max(q.violation(x));
        }
        worst
    }

    /// Plain-text listing: variables, objective, then every block term and
    /// inequality.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variables {}", self.num_real());
        for v in &self.variables {
            let kind = match v.kind {
                VarKind::Scalar => "scalar".to_string(),
                VarKind::Hermitian { dim } => format!("hermitian {dim}"),
            };
            let _ = writeln!(out, "  {} {} {:?} offset {}", v.name, kind, v.domain, v.offset);
        }
        let _ = write!(out, "minimize {:e}", self.objective_constant);
        for (i, c) in &self.objective {
            let _ = write!(out, " + {c:e} x{}", i.0);
        }
        out.push('\n');
        for b in &self.blocks {
            let _ = writeln!(out, "psd {} dim {}", b.label, b.dim());
            write_matrix(&mut out, "F0", &b.constant);
            for (i, f) in &b.terms {
                write_matrix(&mut out, &format!("x{}", i.0), f);
            }
        }
        for q in &self.inequalities {
            let _ = write!(out, "leq {}:", q.label);
            for (i, a) in &q.coeffs {
                let _ = write!(out, " {a:e} x{}", i.0);
            }
            let _ = writeln!(out, " <= {:e}", q.rhs);
        }
        out
    }
}

fn write_matrix(out: &mut String, name: &str, m: &HermitianMatrix) {
    let _ = writeln!(out, "  {name}");
    for i in 0..m.dim() {
        out.push_str("   ");
        for j in 0..m.dim() {
            let z = m.get(i, j);
            let _ = write!(out, " ({:e},{:e})", z.re, z.im);
        }
        out.push('\n');
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverTolerances {
    pub feasibility: f64,
    pub gap: f64,
    pub max_iterations: u32,
    /// Multiplies the objective inside the solver only. Watt-scale
    /// objectives are O(1e-2); unscaled, the gap test stops with residual
    /// eigenvalues of W near 1e-8 W.
    pub objective_scale: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { feasibility: 1e-8, gap: 1e-8, max_iterations: 200, objective_scale: 1e3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Optimal,
    Infeasible,
    Inaccurate,
    Unbounded,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Inaccurate => "inaccurate",
            Status::Unbounded => "unbounded",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub max_residual: f64,
    /// Raw backend status, for diagnostics.
    pub detail: String,
}

/// Upper triangle, column-major, off-diagonals scaled by `sqrt 2`.
fn svec(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let v = m[(i, j)];
            out.push(if i == j { v } else { v * std::f64::consts::SQRT_2 });
        }
    }
    out
}

/// Builds `A x + s = b, s in K` rows.
struct Rows {
    entries: BTreeMap<(usize, usize), f64>,
    b: Vec<f64>,
}

impl Rows {
    fn push(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.b.len();
        for (col, v) in coeffs {
            if v != 0.0 {
                *self.entries.entry((col, r)).or_insert(0.0) += v;
            }
        }
        self.b.push(rhs);
    }

    /// `s = svec(embed(F0 + sum x_i F_i))`: `b = svec(F0)`, `A_i = -svec(F_i)`.
    fn push_psd(&mut self, constant: &HermitianMatrix, terms: &[(VarIndex, HermitianMatrix)]) {
        let b0 = svec(&real_embedding(constant));
        let cols: Vec<(usize, Vec<f64>)> =
            terms.iter().map(|(i, f)| (i.0, svec(&real_embedding(f)))).collect();
        for (r, rhs) in b0.into_iter().enumerate() {
            self.push(cols.iter().map(|(c, v)| (*c, -v[r])), rhs);
        }
    }
}

/// Solves with Clarabel. Deterministic for identical inputs.
pub fn solve(prog: &ConicProgram, tol: &SolverTolerances) -> Result<Solution> {
    prog.validate()?;
    let n = prog.num_real();
    let mut rows = Rows { entries: BTreeMap::new(), b: Vec::new() };
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let nonneg_start = rows.b.len();
    for v in &prog.variables {
        if v.kind == VarKind::Scalar && v.domain == Domain::Nonnegative {
            rows.push([(v.offset, -1.0)], 0.0);
        }
    }
    for q in &prog.inequalities {
        rows.push(q.coeffs.iter().map(|(i, a)| (i.0, *a)), q.rhs);
    }
    let nonneg = rows.b.len() - nonneg_start;
    if nonneg > 0 {
        cones.push(NonnegativeConeT(nonneg));
    }
    for w in prog.psd_variables() {
        rows.push_psd(&HermitianMatrix::zeros(w.dim), &w.basis());
        cones.push(PSDTriangleConeT(2 * w.dim));
    }
    for blk in &prog.blocks {
        rows.push_psd(&blk.constant, &blk.terms);
        cones.push(PSDTriangleConeT(2 * blk.dim()));
    }

    let m = rows.b.len();
    let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
    for ((col, row), v) in &rows.entries {
        ii.push(*row);
        jj.push(*col);
        vv.push(*v);
    }
    let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
    let p = CscMatrix::<f64>::zeros((n, n));
    let mut q = vec![0.0; n];
    for (i, c) in &prog.objective {
        q[i.0] += tol.objective_scale * c;
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(tol.max_iterations)
        .tol_feas(tol.feasibility)
        .tol_gap_abs(tol.gap)
        .tol_gap_rel(tol.gap)
        .max_threads(1)
        .static_regularization_constant(STATIC_REGULARIZATION)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved => Status::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
        SolverStatus::DualInfeasible => Status::Unbounded,
        _ => Status::Inaccurate,
    };
    let x = sol.x.clone();
    let max_residual = if x.iter().all(|v| v.is_finite()) { prog.max_residual(&x) } else { f64::INFINITY };
    let status = if status == Status::Optimal && max_residual > ACCEPT_RESIDUAL {
        log::debug!("optimal status downgraded: residual {max_residual:e}");
        Status::Inaccurate
    } else {
        status
    };
    let objective = if status == Status::Optimal { prog.objective_at(&x) } else { f64::NAN };
    Ok(Solution {
        status,
        objective,
        iterations: sol.iterations,
        max_residual,
        detail: format!("{:?}", sol.status),
        x,
    })
}

/// Options for [`assemble_p4_with`].
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AssemblyOptions {
    /// Multiply the SINR block by the SINR target so `W` enters with unit
    /// coefficients. The multiplier is rescaled accordingly.
    pub sinr_rescale: bool,
}

/// Where each decision variable of the assembled program lives.
#[derive(Clone, Debug, PartialEq)]
pub struct P4Layout {
    pub w: HermitianVar,
    pub mu: Vec<Option<VarIndex>>,
    pub varpi_q: Option<VarIndex>,
    pub varpi_g: Vec<Option<VarIndex>>,
    pub beta: Vec<Option<VarIndex>>,
    pub delta: Vec<Option<VarIndex>>,
    /// Harvesting surplus maximized when the power penalty vanishes.
    pub surplus: Vec<Option<VarIndex>>,
    /// Received-power thresholds `Lambda_k`, `None` when the EH constraint
    /// is dropped.
    pub thresholds: Vec<Option<f64>>,
    pub sinr_scale: f64,
}

impl P4Layout {
    pub fn w_value(&self, x: &[f64]) -> HermitianMatrix {
        self.w.unpack(x)
    }

    pub fn slacks(&self, x: &[f64]) -> SlackValues {
        let get = |v: &Option<VarIndex>| v.map(|i| x[i.0]);
        SlackValues {
            mu: self.mu.iter().map(|m| get(m).unwrap_or(0.0)).collect(),
            varpi_q: get(&self.varpi_q).map(|v| v / self.sinr_scale),
            varpi_g: self.varpi_g.iter().map(get).collect(),
            beta: self.beta.iter().map(get).collect(),
            delta: self.delta.iter().map(get).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AssembledP4 {
    pub program: ConicProgram,
    pub layout: P4Layout,
}

/// Received-power thresholds for targets `tau` (entries equal to zero drop
/// the constraint).
pub fn eh_thresholds(tau: &[f64], tau_m: &[f64], model: &EhModel) -> Result<Vec<Option<f64>>> {
    tau.iter()
        .zip(tau_m)
        .map(|(&t, &tm)| {
            if t == 0.0 {
                return Ok(None);
            }
            let lambda = match model {
                EhModel::Logistic(p) => lambda_linearized(t, tm, p)?,
                EhModel::Sensitivity(p) => theta_inverse(t, p)?,
            };
            Ok(Some(lambda))
        })
        .collect()
}

pub fn assemble_p4(
    inst: &NetworkInstance,
    alpha: f64,
    tau: &[f64],
    tau_m: &[f64],
    model: &EhModel,
) -> Result<AssembledP4> {
    assemble_p4_with(inst, alpha, tau, tau_m, model, AssemblyOptions::default())
}

/// Robust program for fixed targets `tau` and linearization points `tau_m`.
/// Zero-radius balls are assembled as their nominal scalar constraints.
pub fn assemble_p4_with(
    inst: &NetworkInstance,
    alpha: f64,
    tau: &[f64],
    tau_m: &[f64],
    model: &EhModel,
    opts: AssemblyOptions,
) -> Result<AssembledP4> {
    inst.validate()?;
    model.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange { what: "alpha", value: alpha });
    }
    let k = inst.k();
    for list in [tau, tau_m] {
        if list.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: list.len() });
        }
    }
    let sat = model.saturation();
    for &t in tau {
        if !(0.0..sat).contains(&t) {
            return Err(Error::OutOfRange { what: "target tau", value: t });
        }
    }
    if let EhModel::Logistic(_) = model {
        for (&t, &tm) in tau.iter().zip(tau_m) {
            if t > 0.0 && !(tm > 0.0 && tm < sat) {
                return Err(Error::OutOfRange { what: "linearization point tau_m", value: tm });
            }
        }
    }
    let thresholds = eh_thresholds(tau, tau_m, model)?;

    let mut prog = ConicProgram::default();
    let w = prog.add_hermitian("W", inst.n_t, Domain::Psd);
    let trace_id = w.trace_functional(&HermitianMatrix::identity(inst.n_t));
    let maximize_surplus = alpha >= 1.0;
    if !maximize_surplus {
        prog.objective.extend(trace_id.iter().map(|(i, c)| (*i, (1.0 - alpha) * c)));
    }
    prog.inequalities.push(LinearInequality { label: "trace".into(), coeffs: trace_id, rhs: inst.p_max });

    let mut mu = Vec::with_capacity(inst.j());
    for (j, (e, &p_in)) in inst.e.iter().zip(&inst.p_in).enumerate() {
        if e.radius > 0.0 {
            let m = prog.add_scalar(format!("mu[{j}]"), Domain::Nonnegative);
            let mut b = lmi_interference(e, p_in, w, m);
            b.label = format!("interference[{j}]");
            prog.blocks.push(b);
            mu.push(Some(m));
        } else {
            prog.inequalities.push(LinearInequality {
                label: format!("interference[{j}]"),
                coeffs: w.trace_functional(&HermitianMatrix::outer(&e.mean)),
                rhs: p_in,
            });
            mu.push(None);
        }
    }

    let mut sinr_scale = 1.0;
    let mut varpi_q = None;
    if inst.gamma_req > 0.0 {
        if inst.q_ps.radius > 0.0 {
            let v = prog.add_scalar("varpi_q", Domain::Nonnegative);
            let mut b = lmi_sinr(inst, w, v).expect("positive SINR target");
            if opts.sinr_rescale {
                sinr_scale = inst.gamma_req;
                b.constant = b.constant.scaled(sinr_scale);
                for (idx, f) in &mut b.terms {
                    if *idx != v {
                        *f = f.scaled(sinr_scale);
                    }
                }
            }
            prog.blocks.push(b);
            varpi_q = Some(v);
        } else {
            let interference = quadratic_form(&inst.w_p, &inst.q_ps.mean)?;
            let coeffs = w.trace_functional(&HermitianMatrix::outer(&inst.h)).into_iter().map(|(i, c)| (i, -c));
            prog.inequalities.push(LinearInequality {
                label: "sinr".into(),
                coeffs: coeffs.collect(),
                rhs: -inst.gamma_req * (interference + inst.sigma_s2),
            });
        }
    }

    let mut layout = P4Layout {
        w,
        mu,
        varpi_q,
        varpi_g: vec![None; k],
        beta: vec![None; k],
        delta: vec![None; k],
        surplus: vec![None; k],
        thresholds: thresholds.clone(),
        sinr_scale,
    };
    for (kk, lambda) in thresholds.iter().enumerate() {
        let Some(lambda) = *lambda else { continue };
        let g = &inst.g[kk];
        let q = &inst.q_pe[kk];
        let surplus = maximize_surplus.then(|| prog.add_scalar(format!("surplus[{kk}]"), Domain::Nonnegative));
        if let Some(s) = surplus {
            prog.objective.push((s, -1.0));
        }
        layout.surplus[kk] = surplus;
        if g.radius == 0.0 && q.radius == 0.0 {
            let interference = quadratic_form(&inst.w_p, &q.mean)?;
            let mut coeffs: Vec<_> =
                w.trace_functional(&HermitianMatrix::outer(&g.mean)).into_iter().map(|(i, c)| (i, -c)).collect();
            if let Some(s) = surplus {
                coeffs.push((s, 1.0));
            }
            prog.inequalities.push(LinearInequality {
                label: format!("eh[{kk}]"),
                coeffs,
                rhs: interference - lambda,
            });
            continue;
        }

        let delta = prog.add_scalar(format!("delta[{kk}]"), Domain::Free);
        layout.delta[kk] = Some(delta);
        if g.radius > 0.0 {
            let v = prog.add_scalar(format!("varpi_g[{kk}]"), Domain::Nonnegative);
            let mut b = lmi_eh_signal(g, lambda, w, delta, v);
            b.label = format!("eh_signal[{kk}]");
            if let Some(s) = surplus {
                b.terms.push((s, corner(inst.n_t, -1.0)));
            }
            prog.blocks.push(b);
            layout.varpi_g[kk] = Some(v);
        } else {
            // g^† W g + delta >= lambda + surplus
            let mut coeffs: Vec<_> =
                w.trace_functional(&HermitianMatrix::outer(&g.mean)).into_iter().map(|(i, c)| (i, -c)).collect();
            coeffs.push((delta, -1.0));
            if let Some(s) = surplus {
                coeffs.push((s, 1.0));
            }
            prog.inequalities.push(LinearInequality { label: format!("eh_signal[{kk}]"), coeffs, rhs: -lambda });
        }
        if q.radius > 0.0 {
            let beta = prog.add_scalar(format!("beta[{kk}]"), Domain::Nonnegative);
            let mut b = lmi_eh_interference(q, &inst.w_p, delta, beta);
            b.label = format!("eh_interference[{kk}]");
            prog.blocks.push(b);
            layout.beta[kk] = Some(beta);
        } else {
            prog.inequalities.push(LinearInequality {
                label: format!("eh_interference[{kk}]"),
                coeffs: vec![(delta, 1.0)],
                rhs: quadratic_form(&inst.w_p, &q.mean)?,
            });
        }
    }
    Ok(AssembledP4 { program: prog, layout })
}

/// `diag(0, .., 0, v)` of dimension `n + 1`.
fn corner(n: usize, v: f64) -> HermitianMatrix {
    let mut d = vec![0.0; n + 1];
    d[n] = v;
    HermitianMatrix::from_real_diagonal(&d)
}

/// Program with every channel taken as exact and the exact inverse
/// threshold for each target.
pub fn assemble_perfect_csi(inst: &NetworkInstance, alpha: f64, tau: &[f64], model: &EhModel) -> Result<AssembledP4> {
    assemble_p4(&inst.perfect_csi(), alpha, tau, tau, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eh::{psi_inverse, LogisticParams, SensitivityParams};
    use crate::linalg::{ComplexVector, C64};
    use crate::network::{sample_instance, ChannelEstimate, Counts, GenerationConfig, PowerLevels};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_instance() -> NetworkInstance {
        sample_instance(&GenerationConfig::default(), Counts::default(), PowerLevels::default()).unwrap()
    }

    fn logistic() -> EhModel {
        EhModel::Logistic(LogisticParams::default())
    }

    #[test]
    fn trivial_trace_minimization() {
        let mut prog = ConicProgram::default();
        let w = prog.add_hermitian("W", 2, Domain::Psd);
        prog.objective = w.trace_functional(&HermitianMatrix::identity(2));
        // W_11 >= 1
        prog.inequalities.push(LinearInequality {
            label: "w11".into(),
            coeffs: w.trace_functional(&HermitianMatrix::from_real_diagonal(&[-1.0, 0.0])),
            rhs: -1.0,
        });
        let sol = solve(&prog, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        let wv = w.unpack(&sol.x);
        assert!((wv.get(0, 0).re - 1.0).abs() < 1e-7);
        assert!(wv.get(1, 1).re.abs() < 1e-7);
    }

    #[test]
    fn infeasible_toy() {
        let mut prog = ConicProgram::default();
        let w = prog.add_hermitian("W", 2, Domain::Psd);
        let tr = w.trace_functional(&HermitianMatrix::identity(2));
        prog.inequalities.push(LinearInequality { label: "le1".into(), coeffs: tr.clone(), rhs: 1.0 });
        prog.inequalities.push(LinearInequality {
            label: "ge2".into(),
            coeffs: tr.iter().map(|(i, c)| (*i, -c)).collect(),
            rhs: -2.0,
        });
        let sol = solve(&prog, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn complex_lmi_block() {
        // minimize t s.t. [[t, z], [conj z, t]] ⪰ 0 for z = 1 + i: t = |z|
        let mut prog = ConicProgram::default();
        let t = prog.add_scalar("t", Domain::Free);
        prog.objective.push((t, 1.0));
        let z = C64::new(1.0, 1.0);
        let constant = HermitianMatrix::new(nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), z, z.conj(), C64::new(0.0, 0.0)],
        ))
        .unwrap();
        prog.blocks.push(LmiBlock { label: "b".into(), constant, terms: vec![(t, HermitianMatrix::identity(2))] });
        let sol = solve(&prog, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut prog = ConicProgram::default();
        prog.add_scalar("a", Domain::Free);
        prog.objective.push((VarIndex(3), 1.0));
        assert!(prog.validate().is_err());
        assert!(solve(&prog, &SolverTolerances::default()).is_err());
    }

    #[test]
    fn structural_count_default_instance() {
        let inst = default_instance();
        let p4 = assemble_p4(&inst, 0.5, &[0.01, 0.01], &[0.012, 0.012], &logistic()).unwrap();
        let prog = &p4.program;
        assert_eq!(prog.psd_variables().count(), 1);
        assert_eq!(prog.psd_variables().next().unwrap().dim, 3);
        assert_eq!(prog.blocks.len(), 7);
        assert_eq!(prog.inequalities.len(), 1);
        assert_eq!(prog.count_scalars(Domain::Nonnegative), 7);
        assert_eq!(prog.count_scalars(Domain::Free), 2);
        prog.validate().unwrap();
        assert!(prog.to_text().contains("psd eh_signal[1] dim 4"));
    }

    #[test]
    fn zero_targets_drop_eh_blocks() {
        let inst = default_instance();
        let p4 = assemble_p4(&inst, 0.0, &[0.0, 0.0], &[0.0, 0.0], &logistic()).unwrap();
        assert_eq!(p4.program.blocks.len(), 3);
        assert!(p4.layout.thresholds.iter().all(|t| t.is_none()));
        let p4 = assemble_p4(&inst.with_gamma(0.0), 0.0, &[0.0, 0.0], &[0.0, 0.0], &logistic()).unwrap();
        assert_eq!(p4.program.blocks.len(), 2);
    }

    #[test]
    fn out_of_range_targets_rejected() {
        let inst = default_instance();
        assert!(assemble_p4(&inst, 0.5, &[0.03, 0.0], &[0.01, 0.01], &logistic()).is_err());
        assert!(assemble_p4(&inst, 0.5, &[-0.001, 0.0], &[0.01, 0.01], &logistic()).is_err());
        assert!(assemble_p4(&inst, 0.5, &[0.01, 0.01], &[0.0, 0.01], &logistic()).is_err());
        assert!(assemble_p4(&inst, 1.5, &[0.01, 0.01], &[0.01, 0.01], &logistic()).is_err());
        assert!(assemble_p4(&inst, 0.5, &[0.01], &[0.01], &logistic()).is_err());
    }

    #[test]
    fn zero_radius_matches_perfect_csi() {
        let inst = default_instance().perfect_csi();
        let tau = [0.008, 0.008];
        let robust = assemble_p4(&inst, 0.5, &tau, &tau, &logistic()).unwrap();
        let perfect = assemble_perfect_csi(&inst, 0.5, &tau, &logistic()).unwrap();
        assert!(robust.program.blocks.is_empty());
        let a = solve(&robust.program, &SolverTolerances::default()).unwrap();
        let b = solve(&perfect.program, &SolverTolerances::default()).unwrap();
        assert_eq!(a.status, b.status);
        if a.status == Status::Optimal {
            assert!((a.objective - b.objective).abs() <= 1e-7 * b.objective.abs().max(1e-3));
        }
    }

    /// K = 1, J = 1, no SINR target, tiny interference so the cap is slack.
    fn single_ehr(seed: u64) -> NetworkInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cv = |n: usize| {
            ComplexVector::new(
                (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
            )
            .unwrap()
        };
        let g = cv(3);
        let q = cv(3);
        let h = cv(3);
        let wp_dir = cv(3);
        NetworkInstance {
            n_t: 3,
            n_p: 3,
            h,
            g: vec![ChannelEstimate::exact(g)],
            e: vec![ChannelEstimate::exact(ComplexVector::from_real(&[1e-4, 0.0, 0.0]).unwrap())],
            q_ps: ChannelEstimate::exact(cv(3)),
            q_pe: vec![ChannelEstimate::exact(q)],
            w_p: HermitianMatrix::outer(&wp_dir.scaled(0.02)),
            sigma_s2: 1e-15,
            p_in: vec![0.01],
            p_max: 0.1,
            gamma_req: 0.0,
        }
    }

    #[test]
    fn mrt_closed_form() {
        let params = LogisticParams::default();
        for seed in 0..5 {
            let inst = single_ehr(seed);
            let g = &inst.g[0].mean;
            let qwq = quadratic_form(&inst.w_p, &inst.q_pe[0].mean).unwrap();
            for tau in [0.004, 0.012, 0.02] {
                let threshold = psi_inverse(tau, &params).unwrap();
                let expect = (threshold - qwq).max(0.0) / g.norm_squared();
                let p4 = assemble_perfect_csi(&inst, 0.5, &[tau], &logistic()).unwrap();
                let sol = solve(&p4.program, &SolverTolerances::default()).unwrap();
                if expect > inst.p_max {
                    assert_eq!(sol.status, Status::Infeasible);
                    continue;
                }
                assert_eq!(sol.status, Status::Optimal, "seed {seed} tau {tau}");
                let trace = p4.layout.w_value(&sol.x).trace();
                assert!((trace - expect).abs() <= 1e-6 * expect.max(1e-9), "{trace} vs {expect}");
                assert!((sol.objective - 0.5 * trace).abs() <= 1e-8 * trace.max(1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_target_infeasible() {
        let mut inst = single_ehr(3);
        inst.p_max = 1e-6;
        let p4 = assemble_perfect_csi(&inst, 0.5, &[0.02], &logistic()).unwrap();
        assert_eq!(solve(&p4.program, &SolverTolerances::default()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn min_trace_monotone_in_tau() {
        let inst = single_ehr(7);
        let model = EhModel::Sensitivity(SensitivityParams::default());
        let mut last = 0.0;
        for i in 0..20 {
            let tau = 0.024 * i as f64 / 20.0;
            let p4 = assemble_perfect_csi(&inst, 0.0, &[tau], &model).unwrap();
            let sol = solve(&p4.program, &SolverTolerances::default()).unwrap();
            if sol.status != Status::Optimal {
                continue;
            }
            let trace = p4.layout.w_value(&sol.x).trace();
            assert!(trace >= last - 1e-8, "tau {tau}: {trace} < {last}");
            last = trace;
        }
    }

    #[test]
    fn robust_solution_satisfies_source_constraints() {
        let inst = default_instance().with_gamma(1.0);
        let tau = [0.004, 0.004];
        let p4 = assemble_p4(&inst, 0.5, &tau, &[0.014, 0.014], &logistic()).unwrap();
        let sol = solve(&p4.program, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal, "{}", sol.detail);
        assert!(sol.max_residual <= ACCEPT_RESIDUAL);
        let w = p4.layout.w_value(&sol.x);
        assert!((sol.objective - 0.5 * w.trace()).abs() <= 1e-8 * w.trace());
        let report = crate::robust::validate_solution(
            &w,
            Some(&p4.layout.slacks(&sol.x)),
            &inst,
            &p4.layout.thresholds,
            100,
            9,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.to_text());
        for (label, eig) in &report.certificates {
            assert!(*eig >= -ACCEPT_RESIDUAL, "{label}: {eig}");
        }
    }

    #[test]
    fn sinr_rescale_same_optimum() {
        let inst = default_instance().with_gamma(3.0);
        let tau = [0.004, 0.004];
        let plain = assemble_p4(&inst, 0.5, &tau, &tau, &logistic()).unwrap();
        let scaled =
            assemble_p4_with(&inst, 0.5, &tau, &tau, &logistic(), AssemblyOptions { sinr_rescale: true }).unwrap();
        let a = solve(&plain.program, &SolverTolerances::default()).unwrap();
        let b = solve(&scaled.program, &SolverTolerances::default()).unwrap();
        assert_eq!(a.status, Status::Optimal);
        assert_eq!(b.status, Status::Optimal);
        // both solves stop within the absolute gap tolerance of 1e-8
        assert!((a.objective - b.objective).abs() <= 1e-7, "{} vs {}", a.objective, b.objective);
    }

    #[test]
    fn solve_is_deterministic() {
        let inst = default_instance();
        let p4 = assemble_p4(&inst, 0.3, &[0.006, 0.006], &[0.015, 0.015], &logistic()).unwrap();
        let a = solve(&p4.program, &SolverTolerances::default()).unwrap();
        let b = solve(&p4.program, &SolverTolerances::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.status, b.status);
    }
}
